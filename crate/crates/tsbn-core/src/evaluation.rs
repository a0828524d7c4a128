//! One-step-ahead prediction, squared prediction error, Monte Carlo bound
//! estimation, and precision at top M for held-out counts.

use crate::data::{window_view, SequenceBatch};
use crate::deep::{deep_elbo_terms, deep_sample_posterior, gen_layer_psi, rec_layer_psi};
use crate::numeric::{sigmoid, RngStream};
use crate::params::{GenerativeParams, LayerKind, Likelihood, RecognitionParams};
use crate::shallow::{
    elbo_terms, recognition_logit_matrix, sample_posterior, visible_params, workspace,
};
use crate::visible::{visible_mean, visible_params_from_blocks};
use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// How the current hidden state enters the frame prediction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HiddenPrediction {
    /// Push the conditional mean of the hidden state through the visible
    /// map (the default: lower-variance point predictions).
    Mean,
    /// Draw the hidden state before pushing it through.
    Sample,
}

/// Squared one-step prediction error report over a batch.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PredictionReport {
    /// Mean squared error per frame, one entry per sequence.
    pub per_sequence: Vec<f64>,
    /// Mean of the per-sequence errors.
    pub aggregate: f64,
    /// Standard deviation across sequences.
    pub std_dev: f64,
    /// Posterior samples used per prediction.
    pub samples: usize,
}

/// Monte Carlo bound estimate for one sequence.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ElboEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub per_frame: f64,
    pub samples: usize,
}

/// Bound estimates over a batch.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ElboReport {
    pub per_sequence: Vec<ElboEstimate>,
    /// Frame-weighted mean bound per frame over the batch.
    pub mean_per_frame: f64,
    pub total_frames: usize,
}

/// Precision at top M over a batch of (train, held-out) count sequences.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PrecisionReport {
    /// Mean precision over time steps, one entry per sequence.
    pub per_sequence: Vec<f64>,
    pub aggregate: f64,
    pub m_top: usize,
    pub samples: usize,
}

/// One-step-ahead predictions for frames `2..T` (rows `1..T` of `v`).
///
/// For each step, `s` posterior samples of the hidden history feed the
/// hidden transition; the resulting hidden state (its mean, or a draw,
/// per `mode`) is pushed through the visible conditional and the `s`
/// predicted frames are averaged. Row `t - 1` of the result predicts row
/// `t` of `v`.
pub fn predict_one_step(
    theta: &GenerativeParams,
    phi: &RecognitionParams,
    v: &Array2<f64>,
    s: usize,
    mode: HiddenPrediction,
    rng: &mut RngStream,
) -> Array2<f64> {
    assert!(s >= 1, "need at least one posterior sample");
    let t_len = v.nrows();
    assert!(t_len >= 2, "one-step prediction needs at least two frames");
    let spec = &theta.spec;
    let mut acc = Array2::zeros((t_len - 1, spec.visible_dim));
    for _ in 0..s {
        if spec.is_shallow() {
            shallow_prediction_pass(theta, phi, v, mode, rng, &mut acc);
        } else {
            deep_prediction_pass(theta, phi, v, mode, rng, &mut acc);
        }
    }
    acc /= s as f64;
    acc
}

fn shallow_prediction_pass(
    theta: &GenerativeParams,
    phi: &RecognitionParams,
    v: &Array2<f64>,
    mode: HiddenPrediction,
    rng: &mut RngStream,
    acc: &mut Array2<f64>,
) {
    let n = theta.spec.order;
    // one filtered history sample; prefixes h[..t] depend only on v[..=t]
    let history = sample_posterior(phi, v, rng).h;
    // hidden transition logits: row t depends on h and v strictly before t
    let psi1 = workspace(theta, None, v, &history).psi1;
    for t in 1..v.nrows() {
        let h_t: Array1<f64> = match mode {
            HiddenPrediction::Mean => psi1.row(t).mapv(sigmoid),
            HiddenPrediction::Sample => psi1.row(t).mapv(|p| rng.bernoulli_logit(p)),
        };
        let vw = window_view(v, t, n);
        let params = visible_params(theta, h_t.view(), vw.as_slice().unwrap());
        let mut row = acc.row_mut(t - 1);
        row += &visible_mean(&params);
    }
}

fn deep_prediction_pass(
    theta: &GenerativeParams,
    phi: &RecognitionParams,
    v: &Array2<f64>,
    mode: HiddenPrediction,
    rng: &mut RngStream,
    acc: &mut Array2<f64>,
) {
    let spec = &theta.spec;
    let n = spec.order;
    let num_layers = spec.num_layers();
    // filtered recognition trajectories supply the history windows
    let history = deep_sample_posterior(phi, v, rng).layers;
    // top-layer transition logits over that history
    let psi_top = gen_layer_psi(theta, v, &history, num_layers);
    for t in 1..v.nrows() {
        let mut above: Array1<f64> = match mode {
            HiddenPrediction::Mean => psi_top.row(t).mapv(sigmoid),
            HiddenPrediction::Sample => psi_top.row(t).mapv(|p| rng.bernoulli_logit(p)),
        };
        // push expectations down through the middle layers
        for l in (1..num_layers).rev() {
            let layer = &theta.layers[l];
            let mut pre: Array1<f64> = layer.top_down.as_ref().unwrap().dot(&above);
            let self_win = window_view(&history[l - 1], t, n);
            pre += &layer.self_recur.dot(&self_win);
            if let Some(br) = &layer.below_recur {
                let below = if l == 1 {
                    window_view(v, t, n)
                } else {
                    window_view(&history[l - 2], t, n)
                };
                pre += &br.dot(&below);
            }
            pre += &layer.bias;
            above = match spec.layer_kinds[l - 1] {
                LayerKind::Stochastic => pre.mapv(sigmoid),
                LayerKind::Deterministic => pre.mapv(|x| x.max(0.0)),
            };
        }
        let layer0 = &theta.layers[0];
        let vw = window_view(v, t, n);
        let params = visible_params_from_blocks(
            spec.likelihood,
            layer0.top_down.as_ref().unwrap(),
            &layer0.self_recur,
            &layer0.bias,
            theta.var.as_ref(),
            above.view(),
            vw.as_slice().unwrap(),
        );
        let mut row = acc.row_mut(t - 1);
        row += &visible_mean(&params);
    }
}

/// Mean over predicted frames of the squared frame error. `vhat` row
/// `t - 1` is compared against `v` row `t`.
pub fn pred_error(vhat: &Array2<f64>, v: &Array2<f64>) -> f64 {
    assert_eq!(vhat.ncols(), v.ncols(), "frame dimension");
    assert_eq!(vhat.nrows() + 1, v.nrows(), "one prediction per frame after the first");
    let frames = vhat.nrows();
    let mut total = 0.0;
    for t in 0..frames {
        let diff = &vhat.row(t) - &v.row(t + 1);
        total += diff.iter().map(|x| x * x).sum::<f64>();
    }
    total / frames as f64
}

/// Prediction errors over a whole batch, parallel across sequences with
/// one derived stream per sequence (thread-count independent).
pub fn predict_report(
    theta: &GenerativeParams,
    phi: &RecognitionParams,
    batch: &SequenceBatch,
    s: usize,
    mode: HiddenPrediction,
    rng: &mut RngStream,
) -> PredictionReport {
    let seeds: Vec<u64> = (0..batch.len()).map(|_| rng.next_u64()).collect();
    let per_sequence: Vec<f64> = batch
        .frames
        .par_iter()
        .zip(seeds.par_iter())
        .map(|(v, &seed)| {
            let mut local = RngStream::new(seed, 0);
            let vhat = predict_one_step(theta, phi, v, s, mode, &mut local);
            pred_error(&vhat, v)
        })
        .collect();
    let aggregate = per_sequence.iter().sum::<f64>() / per_sequence.len().max(1) as f64;
    let var = per_sequence.iter().map(|x| (x - aggregate).powi(2)).sum::<f64>()
        / per_sequence.len().max(1) as f64;
    PredictionReport { per_sequence, aggregate, std_dev: var.sqrt(), samples: s }
}

/// Monte Carlo estimate of the variational bound for one sequence: the
/// mean of `sum_t l_t` over `s` posterior samples, with its standard
/// error.
pub fn estimate_elbo(
    theta: &GenerativeParams,
    phi: &RecognitionParams,
    v: &Array2<f64>,
    s: usize,
    rng: &mut RngStream,
) -> ElboEstimate {
    assert!(s >= 1, "need at least one posterior sample");
    let shallow = theta.spec.is_shallow();
    let mut values = Vec::with_capacity(s);
    for _ in 0..s {
        let total: f64 = if shallow {
            let states = sample_posterior(phi, v, rng);
            elbo_terms(theta, phi, v, &states.h).iter().sum()
        } else {
            let states = deep_sample_posterior(phi, v, rng);
            deep_elbo_terms(theta, phi, v, &states).iter().sum()
        };
        values.push(total);
    }
    let mean = values.iter().sum::<f64>() / s as f64;
    let std_error = if s > 1 {
        let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (s - 1) as f64;
        (var / s as f64).sqrt()
    } else {
        0.0
    };
    ElboEstimate { mean, std_error, per_frame: mean / v.nrows() as f64, samples: s }
}

/// Bound estimates over a batch, parallel across sequences.
pub fn elbo_report(
    theta: &GenerativeParams,
    phi: &RecognitionParams,
    batch: &SequenceBatch,
    s: usize,
    rng: &mut RngStream,
) -> ElboReport {
    let seeds: Vec<u64> = (0..batch.len()).map(|_| rng.next_u64()).collect();
    let per_sequence: Vec<ElboEstimate> = batch
        .frames
        .par_iter()
        .zip(seeds.par_iter())
        .map(|(v, &seed)| {
            let mut local = RngStream::new(seed, 0);
            estimate_elbo(theta, phi, v, s, &mut local)
        })
        .collect();
    let total_frames = batch.total_frames();
    let mean_per_frame =
        per_sequence.iter().map(|e| e.mean).sum::<f64>() / total_frames.max(1) as f64;
    ElboReport { per_sequence, mean_per_frame, total_frames }
}

/// Fraction of the top `m_top` scored items that fall in the true top
/// `m_top` by count. Ties rank the lower index first.
pub fn precision_at_top_m(scores: &[f64], true_counts: &[f64], m_top: usize) -> f64 {
    assert_eq!(scores.len(), true_counts.len(), "score and count lengths");
    assert!(m_top <= scores.len(), "top-M must not exceed the vocabulary size");
    assert!(m_top >= 1, "top-M must be positive");
    let top = |values: &[f64]| -> Vec<usize> {
        let mut idx: Vec<usize> = (0..values.len()).collect();
        idx.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap());
        idx.truncate(m_top);
        idx
    };
    let predicted = top(scores);
    let truth = top(true_counts);
    let truth_set: std::collections::HashSet<usize> = truth.into_iter().collect();
    let hits = predicted.iter().filter(|i| truth_set.contains(i)).count();
    hits as f64 / m_top as f64
}

/// Precision at top M of held-out counts, scored by the model's token
/// probabilities at the filtered hidden mean.
///
/// For each sequence, `s` recognition passes over the train-split counts
/// give the first hidden layer's conditional means; their average feeds
/// the softmax visible map together with the train-split history window,
/// and the resulting scores are ranked against the held-out counts.
pub fn precision_report(
    theta: &GenerativeParams,
    phi: &RecognitionParams,
    train: &SequenceBatch,
    heldout: &SequenceBatch,
    m_top: usize,
    s: usize,
    rng: &mut RngStream,
) -> PrecisionReport {
    assert_eq!(theta.spec.likelihood, Likelihood::Count, "precision scoring is for count models");
    assert_eq!(train.len(), heldout.len(), "train and held-out batches must align");
    assert!(s >= 1);
    let spec = &theta.spec;
    let n = spec.order;
    let mut per_sequence = Vec::with_capacity(train.len());
    for (v_train, v_held) in train.frames.iter().zip(heldout.frames.iter()) {
        assert_eq!(v_train.nrows(), v_held.nrows(), "aligned sequence lengths");
        let t_len = v_train.nrows();
        // average the filtered conditional mean of the first hidden layer
        let mut h_mean: Array2<f64> = Array2::zeros((t_len, spec.dim(1)));
        for _ in 0..s {
            if spec.is_shallow() {
                let states = sample_posterior(phi, v_train, rng);
                h_mean += &recognition_logit_matrix(phi, v_train, &states.h).mapv(sigmoid);
            } else {
                let states = deep_sample_posterior(phi, v_train, rng);
                let psi1 = rec_layer_psi(phi, v_train, &states.layers, 1);
                match spec.layer_kinds[0] {
                    LayerKind::Stochastic => h_mean += &psi1.mapv(sigmoid),
                    LayerKind::Deterministic => h_mean += &psi1.mapv(|x| x.max(0.0)),
                }
            }
        }
        h_mean /= s as f64;
        let layer0 = &theta.layers[0];
        let mut precisions = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let vw = window_view(v_train, t, n);
            let params = visible_params_from_blocks(
                Likelihood::Count,
                layer0.top_down.as_ref().unwrap(),
                &layer0.self_recur,
                &layer0.bias,
                None,
                h_mean.row(t),
                vw.as_slice().unwrap(),
            );
            let scores = visible_mean(&params);
            precisions.push(precision_at_top_m(
                scores.as_slice().unwrap(),
                v_held.row(t).as_slice().unwrap(),
                m_top,
            ));
        }
        per_sequence.push(precisions.iter().sum::<f64>() / t_len.max(1) as f64);
    }
    let aggregate = per_sequence.iter().sum::<f64>() / per_sequence.len().max(1) as f64;
    PrecisionReport { per_sequence, aggregate, m_top, samples: s }
}

/// Error of predicting each frame as an exact copy of the previous frame,
/// the natural baseline for one-step prediction.
pub fn repeat_last_frame_error(v: &Array2<f64>) -> f64 {
    let vhat = v.slice(ndarray::s![..v.nrows() - 1, ..]).to_owned();
    pred_error(&vhat, v)
}
