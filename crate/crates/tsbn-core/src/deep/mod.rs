//! Deep temporal models: a stochastic top layer over middle layers that
//! are either stochastic (sampled, logistic conditionals) or deterministic
//! (rectified linear recurrences trained by backpropagation through time).
//!
//! Layer l conditions on the layer above at the same step, its own past
//! `n` frames, and the past frames of the layer below; the recognition
//! network mirrors this bottom-up with a same-step input from below. For
//! two layers this is the usual `W1..W7 / U1..U6` parameterization; any
//! depth follows the same per-layer pattern.

mod det;

pub use det::{
    det_bptt_grads, det_forward_gen, det_forward_rec, det_grad_log_joint, det_grad_log_q_weighted,
};

use crate::data::{fill_window, window_matrix};
use crate::numeric::{bernoulli_logpmf, sigmoid, RngStream};
use crate::params::{GenerativeParams, LayerKind, ModelSpec, ParamContainer, RecognitionParams};
use crate::visible::{
    sample_visible, visible_loglik_rows, visible_params_from_blocks, visible_stats_from_blocks,
    VisibleStats,
};
use ndarray::{Array1, Array2, Axis, Zip};

/// Per-layer hidden trajectories for one sequence, plus the recognition
/// log-probability of the stochastic layers.
///
/// `layers[i]` holds hidden layer `i + 1` as a `T x J(l)` array. Stochastic
/// layers hold bits; deterministic middles hold nonnegative rectified
/// values (recognition-side states when produced by the posterior pass).
#[derive(Clone, Debug)]
pub struct DeepStates {
    pub layers: Vec<Array2<f64>>,
    pub log_q: f64,
}

fn check_deep(spec: &ModelSpec) {
    assert!(spec.num_layers() >= 2, "deep operations require at least two hidden layers");
}

fn layer_is_stochastic(spec: &ModelSpec, l: usize) -> bool {
    spec.layer_kinds[l - 1] == LayerKind::Stochastic
}

fn check_states(spec: &ModelSpec, v: &Array2<f64>, hidden: &[Array2<f64>]) {
    assert_eq!(hidden.len(), spec.num_layers(), "one state array per hidden layer");
    assert_eq!(v.ncols(), spec.visible_dim, "frame dimension");
    for (i, s) in hidden.iter().enumerate() {
        assert_eq!(s.nrows(), v.nrows(), "layer {} length", i + 1);
        assert_eq!(s.ncols(), spec.dim(i + 1), "layer {} width", i + 1);
    }
}

/// Windows for every layer, index 0 = visible.
fn all_windows(spec: &ModelSpec, v: &Array2<f64>, hidden: &[Array2<f64>]) -> Vec<Array2<f64>> {
    let mut out = Vec::with_capacity(hidden.len() + 1);
    out.push(window_matrix(v, spec.order));
    for s in hidden {
        out.push(window_matrix(s, spec.order));
    }
    out
}

fn state<'a>(v: &'a Array2<f64>, hidden: &'a [Array2<f64>], l: usize) -> &'a Array2<f64> {
    if l == 0 {
        v
    } else {
        &hidden[l - 1]
    }
}

/// Generative preactivations for hidden layer `l`, vectorized over time.
fn gen_psi(
    theta: &GenerativeParams,
    v: &Array2<f64>,
    hidden: &[Array2<f64>],
    windows: &[Array2<f64>],
    l: usize,
) -> Array2<f64> {
    let layer = &theta.layers[l];
    let mut psi = windows[l].dot(&layer.self_recur.t());
    if let Some(td) = &layer.top_down {
        psi += &state(v, hidden, l + 1).dot(&td.t());
    }
    if let Some(br) = &layer.below_recur {
        psi += &windows[l - 1].dot(&br.t());
    }
    psi += &layer.bias;
    psi
}

/// Recognition preactivations for hidden layer `l`, vectorized over time.
fn rec_psi(
    phi: &RecognitionParams,
    v: &Array2<f64>,
    hidden: &[Array2<f64>],
    windows: &[Array2<f64>],
    l: usize,
) -> Array2<f64> {
    let layer = &phi.layers[l - 1];
    let mut psi = state(v, hidden, l - 1).dot(&layer.from_below.t());
    psi += &windows[l].dot(&layer.self_recur.t());
    if let Some(br) = &layer.below_recur {
        psi += &windows[l - 1].dot(&br.t());
    }
    psi += &layer.bias;
    psi
}

fn visible_stats_deep(
    theta: &GenerativeParams,
    v: &Array2<f64>,
    hidden: &[Array2<f64>],
    windows: &[Array2<f64>],
) -> VisibleStats {
    let layer = &theta.layers[0];
    visible_stats_from_blocks(
        theta.spec.likelihood,
        layer.top_down.as_ref().unwrap(),
        &layer.self_recur,
        &layer.bias,
        theta.var.as_ref(),
        v,
        &hidden[0],
        &windows[0],
    )
}

/// Recognition preactivations of one hidden layer, recomputed from fixed
/// trajectories; used by the evaluation module's filtering means.
pub(crate) fn rec_layer_psi(
    phi: &RecognitionParams,
    v: &Array2<f64>,
    hidden: &[Array2<f64>],
    l: usize,
) -> Array2<f64> {
    let windows = all_windows(&phi.spec, v, hidden);
    rec_psi(phi, v, hidden, &windows, l)
}

/// Generative preactivations of one hidden layer from fixed trajectories.
pub(crate) fn gen_layer_psi(
    theta: &GenerativeParams,
    v: &Array2<f64>,
    hidden: &[Array2<f64>],
    l: usize,
) -> Array2<f64> {
    let windows = all_windows(&theta.spec, v, hidden);
    gen_psi(theta, v, hidden, &windows, l)
}

fn bern_sum(x: &Array2<f64>, psi: &Array2<f64>) -> f64 {
    Zip::from(x).and(psi).fold(0.0, |acc, &value, &logit| acc + bernoulli_logpmf(value, logit))
}

fn bern_rows(x: &Array2<f64>, psi: &Array2<f64>, out: &mut [f64], sign: f64) {
    for t in 0..x.nrows() {
        let s: f64 = x
            .row(t)
            .iter()
            .zip(psi.row(t).iter())
            .map(|(&value, &logit)| bernoulli_logpmf(value, logit))
            .sum();
        out[t] += sign * s;
    }
}

/// For deterministic configurations, replaces the middle entries of
/// `hidden` with the generative trajectories computed from the top layer;
/// stochastic configurations pass through unchanged.
fn generative_middles(
    theta: &GenerativeParams,
    v: &Array2<f64>,
    hidden: &[Array2<f64>],
) -> Option<Vec<Array2<f64>>> {
    if !theta.spec.det_middles() {
        return None;
    }
    let top = hidden.last().unwrap();
    let mut middles =
        det::det_forward_gen(theta, v, top).expect("deterministic spec params carry no below_recur at the top");
    middles.push(top.clone());
    Some(middles)
}

/// Top-down, left-to-right ancestral sampling. Returns the visible frames
/// and the generative hidden trajectories (bits for stochastic layers,
/// rectified values for deterministic middles). Count frames carry one
/// token each.
pub fn deep_sample(
    theta: &GenerativeParams,
    t_len: usize,
    rng: &mut RngStream,
) -> (Array2<f64>, Vec<Array2<f64>>) {
    deep_sample_with_count_totals(theta, t_len, 1, rng)
}

/// As [`deep_sample`] with an explicit token total per count frame.
pub fn deep_sample_with_count_totals(
    theta: &GenerativeParams,
    t_len: usize,
    count_total: u64,
    rng: &mut RngStream,
) -> (Array2<f64>, Vec<Array2<f64>>) {
    let spec = &theta.spec;
    check_deep(spec);
    assert!(t_len >= 1);
    let n = spec.order;
    let num_layers = spec.num_layers();
    let mut v = Array2::zeros((t_len, spec.visible_dim));
    let mut hidden: Vec<Array2<f64>> =
        (1..=num_layers).map(|l| Array2::zeros((t_len, spec.dim(l)))).collect();
    let mut window_bufs: Vec<Vec<f64>> = (0..=num_layers).map(|l| vec![0.0; n * spec.dim(l)]).collect();
    for t in 0..t_len {
        for l in (1..=num_layers).rev() {
            // windows over the already generated history
            {
                let src = state(&v, &hidden, l);
                // split borrow: window buffers are indexed by layer
                let buf = &mut window_bufs[l];
                fill_window(buf, src, t, n);
            }
            if spec.gen_below_recur_present(l) {
                let src = state(&v, &hidden, l - 1);
                let buf = &mut window_bufs[l - 1];
                fill_window(buf, src, t, n);
            }
            let layer = &theta.layers[l];
            let mut pre: Array1<f64> =
                layer.self_recur.dot(&ndarray::ArrayView1::from(&window_bufs[l][..]));
            if let Some(td) = &layer.top_down {
                pre += &td.dot(&hidden[l].row(t)); // layer above, same t
            }
            if let Some(br) = &layer.below_recur {
                pre += &br.dot(&ndarray::ArrayView1::from(&window_bufs[l - 1][..]));
            }
            pre += &layer.bias;
            let stochastic = l == num_layers || layer_is_stochastic(spec, l);
            for (j, p) in pre.iter().enumerate() {
                hidden[l - 1][[t, j]] = if stochastic { rng.bernoulli_logit(*p) } else { p.max(0.0) };
            }
        }
        {
            let buf = &mut window_bufs[0];
            fill_window(buf, &v, t, n);
        }
        let layer = &theta.layers[0];
        let params = visible_params_from_blocks(
            spec.likelihood,
            layer.top_down.as_ref().unwrap(),
            &layer.self_recur,
            &layer.bias,
            theta.var.as_ref(),
            hidden[0].row(t),
            &window_bufs[0],
        );
        sample_visible(&params, count_total, rng, v.row_mut(t).as_slice_mut().unwrap());
    }
    (v, hidden)
}

/// Bottom-up filtering pass of the recognition model: deterministic
/// middles are rectified, stochastic layers are sampled, and `log_q`
/// accumulates over the sampled layers only.
pub fn deep_sample_posterior(phi: &RecognitionParams, v: &Array2<f64>, rng: &mut RngStream) -> DeepStates {
    let spec = &phi.spec;
    check_deep(spec);
    let (t_len, m_dim) = v.dim();
    assert_eq!(m_dim, spec.visible_dim);
    let n = spec.order;
    let num_layers = spec.num_layers();
    let mut hidden: Vec<Array2<f64>> =
        (1..=num_layers).map(|l| Array2::zeros((t_len, spec.dim(l)))).collect();
    let mut window_bufs: Vec<Vec<f64>> = (0..=num_layers).map(|l| vec![0.0; n * spec.dim(l)]).collect();
    let mut log_q = 0.0;
    for t in 0..t_len {
        for l in 1..=num_layers {
            {
                let src = state(v, &hidden, l);
                fill_window(&mut window_bufs[l], src, t, n);
            }
            {
                let src = state(v, &hidden, l - 1);
                fill_window(&mut window_bufs[l - 1], src, t, n);
            }
            let layer = phi.layer(l);
            let below_t = state(v, &hidden, l - 1).row(t).to_owned();
            let mut pre: Array1<f64> = layer.from_below.dot(&below_t);
            pre += &layer.self_recur.dot(&ndarray::ArrayView1::from(&window_bufs[l][..]));
            if let Some(br) = &layer.below_recur {
                pre += &br.dot(&ndarray::ArrayView1::from(&window_bufs[l - 1][..]));
            }
            pre += &layer.bias;
            let stochastic = l == num_layers || layer_is_stochastic(spec, l);
            for (j, p) in pre.iter().enumerate() {
                if stochastic {
                    let bit = rng.bernoulli_logit(*p);
                    hidden[l - 1][[t, j]] = bit;
                    log_q += bernoulli_logpmf(bit, *p);
                } else {
                    hidden[l - 1][[t, j]] = p.max(0.0);
                }
            }
        }
    }
    DeepStates { layers: hidden, log_q }
}

/// `log p(V, states)` over the stochastic layers and the visible frames.
/// Deterministic middles are recomputed from the top layer, so only the
/// stochastic entries of `hidden` matter.
pub fn deep_log_joint(theta: &GenerativeParams, v: &Array2<f64>, hidden: &[Array2<f64>]) -> f64 {
    let spec = &theta.spec;
    check_deep(spec);
    check_states(spec, v, hidden);
    let gen_hidden = generative_middles(theta, v, hidden);
    let hidden = gen_hidden.as_deref().unwrap_or(hidden);
    let windows = all_windows(spec, v, hidden);
    let mut total = 0.0;
    for l in 1..=spec.num_layers() {
        if l == spec.num_layers() || layer_is_stochastic(spec, l) {
            let psi = gen_psi(theta, v, hidden, &windows, l);
            total += bern_sum(&hidden[l - 1], &psi);
        }
    }
    let vis = visible_stats_deep(theta, v, hidden, &windows);
    total + visible_loglik_rows(&vis, v).iter().sum::<f64>()
}

/// `log q(states | V)` over the stochastic layers. Deterministic middles
/// are recomputed by the recognition recurrence.
pub fn deep_log_q(phi: &RecognitionParams, v: &Array2<f64>, hidden: &[Array2<f64>]) -> f64 {
    let spec = &phi.spec;
    check_deep(spec);
    let rec_hidden;
    let hidden = if spec.det_middles() {
        let mut middles = det::det_forward_rec(phi, v).expect("deterministic spec params");
        middles.push(hidden.last().unwrap().clone());
        rec_hidden = middles;
        &rec_hidden[..]
    } else {
        hidden
    };
    let windows = all_windows(spec, v, hidden);
    let mut total = 0.0;
    for l in 1..=spec.num_layers() {
        if l == spec.num_layers() || layer_is_stochastic(spec, l) {
            let psi = rec_psi(phi, v, hidden, &windows, l);
            total += bern_sum(&hidden[l - 1], &psi);
        }
    }
    total
}

/// Per-time-step bound terms. Their sum equals
/// `deep_log_joint - deep_log_q`. For deterministic middles only the top
/// layer of `states` is read: the generative and recognition middle
/// trajectories are both recomputed, so the terms are functions of
/// `(theta, phi, V, z)` alone.
pub fn deep_elbo_terms(
    theta: &GenerativeParams,
    phi: &RecognitionParams,
    v: &Array2<f64>,
    states: &DeepStates,
) -> Vec<f64> {
    let spec = &theta.spec;
    check_deep(spec);
    assert_eq!(phi.spec, *spec, "generative and recognition specs must agree");
    check_states(spec, v, &states.layers);
    let t_len = v.nrows();
    let mut terms = vec![0.0; t_len];

    // generative side, on generative middle trajectories
    let gen_hidden = generative_middles(theta, v, &states.layers);
    let gen_states = gen_hidden.as_deref().unwrap_or(&states.layers);
    let gen_windows = all_windows(spec, v, gen_states);
    for l in 1..=spec.num_layers() {
        if l == spec.num_layers() || layer_is_stochastic(spec, l) {
            let psi = gen_psi(theta, v, gen_states, &gen_windows, l);
            bern_rows(&gen_states[l - 1], &psi, &mut terms, 1.0);
        }
    }
    let vis = visible_stats_deep(theta, v, gen_states, &gen_windows);
    for (t, x) in visible_loglik_rows(&vis, v).into_iter().enumerate() {
        terms[t] += x;
    }

    // recognition side, on recognition-side trajectories
    let rec_hidden;
    let rec_states = if spec.det_middles() {
        let mut middles = det::det_forward_rec(phi, v).expect("deterministic spec params");
        middles.push(states.layers.last().unwrap().clone());
        rec_hidden = middles;
        &rec_hidden[..]
    } else {
        &states.layers[..]
    };
    let rec_windows = all_windows(spec, v, rec_states);
    for l in 1..=spec.num_layers() {
        if l == spec.num_layers() || layer_is_stochastic(spec, l) {
            let psi = rec_psi(phi, v, rec_states, &rec_windows, l);
            bern_rows(&rec_states[l - 1], &psi, &mut terms, -1.0);
        }
    }
    terms
}

/// Gradients `(d log p / d theta, d log q / d phi)` for a fully stochastic
/// deep model: the same residual-times-input pattern as the shallow model,
/// applied per block.
pub fn deep_grads_stochastic(
    theta: &GenerativeParams,
    phi: &RecognitionParams,
    v: &Array2<f64>,
    states: &DeepStates,
) -> (GenerativeParams, RecognitionParams) {
    let spec = &theta.spec;
    check_deep(spec);
    assert!(!spec.det_middles(), "stochastic gradients need stochastic middles");
    check_states(spec, v, &states.layers);
    let hidden = &states.layers;
    let windows = all_windows(spec, v, hidden);

    let mut g_theta = theta.zeros_like();
    for l in 1..=spec.num_layers() {
        let psi = gen_psi(theta, v, hidden, &windows, l);
        let chi = Zip::from(&hidden[l - 1]).and(&psi).map_collect(|&x, &p| x - sigmoid(p));
        let g_layer = &mut g_theta.layers[l];
        if g_layer.top_down.is_some() {
            *g_layer.top_down.as_mut().unwrap() = chi.t().dot(state(v, hidden, l + 1));
        }
        g_layer.self_recur = chi.t().dot(&windows[l]);
        if g_layer.below_recur.is_some() {
            *g_layer.below_recur.as_mut().unwrap() = chi.t().dot(&windows[l - 1]);
        }
        g_layer.bias = chi.sum_axis(Axis(0));
    }
    let vis = visible_stats_deep(theta, v, hidden, &windows);
    let chi_vis = vis.mean_residual();
    *g_theta.layers[0].top_down.as_mut().unwrap() = chi_vis.t().dot(&hidden[0]);
    g_theta.layers[0].self_recur = chi_vis.t().dot(&windows[0]);
    g_theta.layers[0].bias = chi_vis.sum_axis(Axis(0));
    if let VisibleStats::Real { chi5, .. } = &vis {
        let var = g_theta.var.as_mut().unwrap();
        var.top_down = chi5.t().dot(&hidden[0]);
        var.self_recur = chi5.t().dot(&windows[0]);
        var.bias = chi5.sum_axis(Axis(0));
    }

    let ones = vec![1.0; v.nrows()];
    let g_phi = deep_grad_log_q_weighted(phi, v, states, &ones);
    (g_theta, g_phi)
}

/// Weighted recognition score for a fully stochastic deep model:
/// `sum_t w_t * d log q(states_t | .) / d phi`.
pub fn deep_grad_log_q_weighted(
    phi: &RecognitionParams,
    v: &Array2<f64>,
    states: &DeepStates,
    weights: &[f64],
) -> RecognitionParams {
    let spec = &phi.spec;
    check_deep(spec);
    assert!(!spec.det_middles(), "use det_grad_log_q_weighted for deterministic middles");
    assert_eq!(weights.len(), v.nrows(), "one weight per time step");
    let hidden = &states.layers;
    let windows = all_windows(spec, v, hidden);
    let mut g_phi = phi.zeros_like();
    for l in 1..=spec.num_layers() {
        let psi = rec_psi(phi, v, hidden, &windows, l);
        let mut rho = Zip::from(&hidden[l - 1]).and(&psi).map_collect(|&x, &p| x - sigmoid(p));
        for (t, mut row) in rho.rows_mut().into_iter().enumerate() {
            row *= weights[t];
        }
        let g_layer = &mut g_phi.layers[l - 1];
        g_layer.from_below = rho.t().dot(state(v, hidden, l - 1));
        g_layer.self_recur = rho.t().dot(&windows[l]);
        if g_layer.below_recur.is_some() {
            *g_layer.below_recur.as_mut().unwrap() = rho.t().dot(&windows[l - 1]);
        }
        g_layer.bias = rho.sum_axis(Axis(0));
    }
    g_phi
}
