//! Visible-layer conditionals shared by the shallow and deep models:
//! parameter evaluation, sampling, log-likelihood, and residuals for the
//! binary, real-valued, and count families.

use crate::numeric::{bernoulli_logpmf, log_sum_exp, sigmoid, softmax_in_place, RngStream};
use crate::params::{Likelihood, VarBlocks};
use ndarray::{Array1, Array2, ArrayView1, Zip};

pub(crate) const HALF_LN_2PI: f64 = 0.9189385332046727; // 0.5 * ln(2*pi)

/// Visible conditional for a single time step.
#[derive(Clone, Debug)]
pub enum VisibleParams {
    /// Bernoulli logits.
    Binary { psi: Array1<f64> },
    /// Gaussian mean and log standard deviation.
    Real { mu: Array1<f64>, tau: Array1<f64> },
    /// Softmax token probabilities.
    Count { y: Array1<f64> },
}

/// Per-time-step visible statistics for a whole sequence.
#[derive(Clone, Debug)]
pub enum VisibleStats {
    Binary {
        psi2: Array2<f64>,
        /// `v - sigmoid(psi2)`
        chi2: Array2<f64>,
    },
    Real {
        mu: Array2<f64>,
        /// log standard deviation
        tau: Array2<f64>,
        /// `(v - mu) * e^(-2 tau)`, the mean residual
        chi4: Array2<f64>,
        /// `(v - mu)^2 * e^(-2 tau) - 1`, the scale residual
        chi5: Array2<f64>,
    },
    Count {
        psi2: Array2<f64>,
        y: Array2<f64>,
        /// `v - y * rowsum(v)`
        chi6: Array2<f64>,
    },
}

impl VisibleStats {
    /// The residual driving the gradients of the mean-path blocks.
    pub(crate) fn mean_residual(&self) -> &Array2<f64> {
        match self {
            VisibleStats::Binary { chi2, .. } => chi2,
            VisibleStats::Real { chi4, .. } => chi4,
            VisibleStats::Count { chi6, .. } => chi6,
        }
    }
}

/// Evaluates the visible conditional for one step from explicit blocks:
/// `top_down * h_t + self_recur * v_window + bias` fed through the family
/// head.
pub(crate) fn visible_params_from_blocks(
    likelihood: Likelihood,
    top_down: &Array2<f64>,
    self_recur: &Array2<f64>,
    bias: &Array1<f64>,
    var: Option<&VarBlocks>,
    h_t: ArrayView1<f64>,
    v_window: &[f64],
) -> VisibleParams {
    assert_eq!(h_t.len(), top_down.ncols(), "hidden state length");
    assert_eq!(v_window.len(), self_recur.ncols(), "visible window length");
    let vw = ArrayView1::from(v_window);
    let mut psi = top_down.dot(&h_t);
    psi += &self_recur.dot(&vw);
    psi += bias;
    match likelihood {
        Likelihood::Binary => VisibleParams::Binary { psi },
        Likelihood::Real => {
            let var = var.expect("real likelihood carries variance blocks");
            let mut tau = var.top_down.dot(&h_t);
            tau += &var.self_recur.dot(&vw);
            tau += &var.bias;
            VisibleParams::Real { mu: psi, tau }
        }
        Likelihood::Count => {
            softmax_in_place(psi.as_slice_mut().unwrap());
            VisibleParams::Count { y: psi }
        }
    }
}

/// Whole-sequence version of [`visible_params_from_blocks`], with the
/// family residuals included.
pub(crate) fn visible_stats_from_blocks(
    likelihood: Likelihood,
    top_down: &Array2<f64>,
    self_recur: &Array2<f64>,
    bias: &Array1<f64>,
    var: Option<&VarBlocks>,
    v: &Array2<f64>,
    h_top: &Array2<f64>,
    vw: &Array2<f64>,
) -> VisibleStats {
    let mut psi2 = h_top.dot(&top_down.t());
    psi2 += &vw.dot(&self_recur.t());
    psi2 += bias;
    match likelihood {
        Likelihood::Binary => {
            let chi2 = Zip::from(v).and(&psi2).map_collect(|&x, &p| x - sigmoid(p));
            VisibleStats::Binary { psi2, chi2 }
        }
        Likelihood::Real => {
            let var = var.expect("real likelihood carries variance blocks");
            let mut tau = h_top.dot(&var.top_down.t());
            tau += &vw.dot(&var.self_recur.t());
            tau += &var.bias;
            let mu = psi2;
            let chi4 = Zip::from(v)
                .and(&mu)
                .and(&tau)
                .map_collect(|&x, &m, &t| (x - m) * (-2.0 * t).exp());
            let chi5 = Zip::from(v)
                .and(&mu)
                .and(&tau)
                .map_collect(|&x, &m, &t| (x - m).powi(2) * (-2.0 * t).exp() - 1.0);
            VisibleStats::Real { mu, tau, chi4, chi5 }
        }
        Likelihood::Count => {
            let mut y = psi2.clone();
            for mut row in y.rows_mut() {
                softmax_in_place(row.as_slice_mut().unwrap());
            }
            let totals: Vec<f64> = v.rows().into_iter().map(|r| r.sum()).collect();
            let mut chi6 = v.clone();
            for (t, mut row) in chi6.rows_mut().into_iter().enumerate() {
                let yr = y.row(t);
                for (x, &p) in row.iter_mut().zip(yr.iter()) {
                    *x -= p * totals[t];
                }
            }
            VisibleStats::Count { psi2, y, chi6 }
        }
    }
}

/// Per-time-step visible log-likelihood terms.
pub(crate) fn visible_loglik_rows(vis: &VisibleStats, v: &Array2<f64>) -> Vec<f64> {
    let t_len = v.nrows();
    let mut out = vec![0.0; t_len];
    match vis {
        VisibleStats::Binary { psi2, .. } => {
            for t in 0..t_len {
                out[t] = v
                    .row(t)
                    .iter()
                    .zip(psi2.row(t).iter())
                    .map(|(&x, &p)| bernoulli_logpmf(x, p))
                    .sum();
            }
        }
        VisibleStats::Real { mu, tau, .. } => {
            for t in 0..t_len {
                out[t] = v
                    .row(t)
                    .iter()
                    .zip(mu.row(t).iter())
                    .zip(tau.row(t).iter())
                    .map(|((&x, &m), &tv)| {
                        -(HALF_LN_2PI + tv + (x - m).powi(2) / (2.0 * (2.0 * tv).exp()))
                    })
                    .sum();
            }
        }
        VisibleStats::Count { psi2, .. } => {
            for t in 0..t_len {
                let row = psi2.row(t);
                let lse = log_sum_exp(row.as_slice().unwrap());
                out[t] = v
                    .row(t)
                    .iter()
                    .zip(row.iter())
                    .map(|(&count, &p)| count * (p - lse))
                    .sum();
            }
        }
    }
    out
}

/// Draws a visible frame into `out`. Count frames place `count_total`
/// tokens by categorical draws from `y`.
pub(crate) fn sample_visible(
    params: &VisibleParams,
    count_total: u64,
    rng: &mut RngStream,
    out: &mut [f64],
) {
    match params {
        VisibleParams::Binary { psi } => {
            for (x, &p) in out.iter_mut().zip(psi.iter()) {
                *x = rng.bernoulli_logit(p);
            }
        }
        VisibleParams::Real { mu, tau } => {
            for ((x, &m), &t) in out.iter_mut().zip(mu.iter()).zip(tau.iter()) {
                *x = m + t.exp() * rng.normal();
            }
        }
        VisibleParams::Count { y } => {
            out.fill(0.0);
            for _ in 0..count_total {
                let u = rng.uniform();
                let mut acc = 0.0;
                let mut idx = y.len() - 1;
                for (m, &p) in y.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        idx = m;
                        break;
                    }
                }
                out[idx] += 1.0;
            }
        }
    }
}

/// The conditional mean of a visible frame, used for one-step prediction.
pub(crate) fn visible_mean(params: &VisibleParams) -> Array1<f64> {
    match params {
        VisibleParams::Binary { psi } => psi.mapv(sigmoid),
        VisibleParams::Real { mu, .. } => mu.clone(),
        VisibleParams::Count { y } => y.clone(),
    }
}
