//! Sequence containers, sliding-window views, synthetic video generation,
//! and count splitting.

mod balls;
mod seqfile;

pub use balls::{gen_bouncing_balls, BallsConfig};
pub use seqfile::{load_sequences, save_sequences};

use crate::error::{Result, TsbnError};
use crate::numeric::RngStream;
use crate::params::Likelihood;
use ndarray::{Array1, Array2};

/// A set of variable-length sequences of M-dimensional frames.
///
/// Frames are stored time-major as `T_i x M` arrays of f64 regardless of
/// dtype; binary entries are 0.0/1.0 and counts are nonnegative integers.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceBatch {
    pub dtype: Likelihood,
    pub dim: usize,
    pub frames: Vec<Array2<f64>>,
}

impl SequenceBatch {
    pub fn new(dtype: Likelihood, dim: usize) -> Self {
        SequenceBatch { dtype, dim, frames: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn total_frames(&self) -> usize {
        self.frames.iter().map(|f| f.nrows()).sum()
    }

    pub fn push(&mut self, frames: Array2<f64>) {
        assert_eq!(frames.ncols(), self.dim, "frame dimension mismatch");
        self.frames.push(frames);
    }

    /// Checks entries against the declared dtype.
    pub fn validate(&self) -> Result<()> {
        for (i, seq) in self.frames.iter().enumerate() {
            if seq.ncols() != self.dim {
                return Err(TsbnError::ShapeMismatch(format!(
                    "sequence {i} has {} columns, expected {}",
                    seq.ncols(),
                    self.dim
                )));
            }
            let bad = match self.dtype {
                Likelihood::Binary => seq.iter().any(|&x| x != 0.0 && x != 1.0),
                Likelihood::Real => seq.iter().any(|x| !x.is_finite()),
                Likelihood::Count => seq.iter().any(|&x| x < 0.0 || x.fract() != 0.0),
            };
            if bad {
                return Err(TsbnError::LikelihoodMismatch(format!(
                    "sequence {i} has entries invalid for dtype {}",
                    self.dtype.name()
                )));
            }
        }
        Ok(())
    }
}

/// Concatenation of the `n` frames preceding time step `t` (0-based), most
/// recent first, zero-padded before the sequence start.
///
/// `window_view(v, 0, n)` is all zeros; `window_view(v, t, 1)` is row
/// `t - 1`.
pub fn window_view(v: &Array2<f64>, t: usize, n: usize) -> Array1<f64> {
    assert!(t < v.nrows(), "time index {t} out of range for T = {}", v.nrows());
    let dim = v.ncols();
    let mut out = Array1::zeros(n * dim);
    let buf = out.as_slice_mut().unwrap();
    fill_window(buf, v, t, n);
    out
}

/// Fills `buf` (length `n * dim`) with the window before step `t`.
pub(crate) fn fill_window(buf: &mut [f64], states: &Array2<f64>, t: usize, n: usize) {
    let dim = states.ncols();
    debug_assert_eq!(buf.len(), n * dim);
    for s in 0..n {
        let dst = &mut buf[s * dim..(s + 1) * dim];
        if t >= s + 1 {
            let row = states.row(t - 1 - s);
            dst.copy_from_slice(row.as_slice().unwrap());
        } else {
            dst.fill(0.0);
        }
    }
}

/// Stacks [`window_view`] for every time step into a `T x n*dim` matrix.
pub(crate) fn window_matrix(states: &Array2<f64>, n: usize) -> Array2<f64> {
    let (t_len, dim) = states.dim();
    let mut out = Array2::zeros((t_len, n * dim));
    for t in 0..t_len {
        let mut row = out.row_mut(t);
        fill_window(row.as_slice_mut().unwrap(), states, t, n);
    }
    out
}

/// Splits a count vector by assigning each token independently to the
/// training side with the given probability. The two sides always sum to
/// the original counts elementwise.
pub fn split_words(counts: &Array1<f64>, fraction: f64, rng: &mut RngStream) -> (Array1<f64>, Array1<f64>) {
    assert!((0.0..=1.0).contains(&fraction), "fraction must be in [0, 1]");
    let mut train = Array1::zeros(counts.len());
    let mut heldout = Array1::zeros(counts.len());
    for (m, &count) in counts.iter().enumerate() {
        debug_assert!(count >= 0.0 && count.fract() == 0.0, "counts must be nonnegative integers");
        let mut kept = 0.0;
        for _ in 0..count as u64 {
            if rng.uniform() < fraction {
                kept += 1.0;
            }
        }
        train[m] = kept;
        heldout[m] = count - kept;
    }
    (train, heldout)
}
