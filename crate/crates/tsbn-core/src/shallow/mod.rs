//! The order-n temporal sigmoid belief network with one hidden layer:
//! conditionals, ancestral sampling, joint and recognition log-probability,
//! per-step bound terms, and analytic gradients for binary, real-valued,
//! and count observations.
//!
//! Notation follows the conventional symbols: hidden prior logits
//! `psi1 = W1*h_window + W3*v_window + b`, visible logits (or Gaussian
//! mean) `psi2 = W2*h_t + W4*v_window + c`, recognition logits
//! `psi3 = U1*h_window + U2*v_t + U3*v_window + d`, and residuals
//! `chi = value - sigmoid(psi)` per block. Arrays are time-major:
//! sequences are `T x M`, hidden states `T x J`.

pub mod oracle;

pub use crate::visible::{VisibleParams, VisibleStats};

use crate::data::{fill_window, window_matrix};
use crate::numeric::{bernoulli_logpmf, sigmoid, RngStream};
use crate::params::{GenerativeParams, Likelihood, ParamContainer, RecognitionParams};
use crate::visible::{
    sample_visible, visible_loglik_rows, visible_params_from_blocks, visible_stats_from_blocks,
};
use ndarray::{Array1, Array2, ArrayView1, Zip};

/// One posterior sample of the hidden chain with its recognition
/// log-probability.
#[derive(Clone, Debug)]
pub struct HiddenStates {
    /// T x J array of 0/1 values.
    pub h: Array2<f64>,
    /// log q(H | V) accumulated over the sampling pass.
    pub log_q: f64,
}

/// Hidden prior logits `psi1` for one time step given zero-padded windows.
pub fn hidden_logits(theta: &GenerativeParams, h_window: &[f64], v_window: &[f64]) -> Array1<f64> {
    let w1 = theta.w1();
    let w3 = theta.w3();
    assert_eq!(h_window.len(), w1.ncols(), "hidden window length");
    assert_eq!(v_window.len(), w3.ncols(), "visible window length");
    let mut out = w1.dot(&ArrayView1::from(h_window));
    out += &w3.dot(&ArrayView1::from(v_window));
    out += theta.b();
    out
}

/// Visible conditional parameters for one time step.
pub fn visible_params(theta: &GenerativeParams, h_t: ArrayView1<f64>, v_window: &[f64]) -> VisibleParams {
    visible_params_from_blocks(
        theta.spec.likelihood,
        theta.w2(),
        theta.w4(),
        theta.c(),
        theta.var.as_ref(),
        h_t,
        v_window,
    )
}

/// Recognition logits `psi3` for one time step.
pub fn recognition_logits(
    phi: &RecognitionParams,
    h_window: &[f64],
    v_t: ArrayView1<f64>,
    v_window: &[f64],
) -> Array1<f64> {
    let u1 = phi.u1();
    let u2 = phi.u2();
    let u3 = phi.u3();
    assert_eq!(h_window.len(), u1.ncols(), "hidden window length");
    assert_eq!(v_t.len(), u2.ncols(), "frame length");
    assert_eq!(v_window.len(), u3.ncols(), "visible window length");
    let mut out = u1.dot(&ArrayView1::from(h_window));
    out += &u2.dot(&v_t);
    out += &u3.dot(&ArrayView1::from(v_window));
    out += phi.d();
    out
}

/// Ancestral sampling of a length-T sequence: hidden states from the prior
/// chain, then the visible frame from its conditional, step by step.
/// Count frames carry one token each; see
/// [`sample_sequence_with_count_totals`] for other totals.
pub fn sample_sequence(theta: &GenerativeParams, t_len: usize, rng: &mut RngStream) -> (Array2<f64>, Array2<f64>) {
    sample_sequence_impl(theta, t_len, 1, rng)
}

/// Ancestral sampling with an explicit token total per count frame.
pub fn sample_sequence_with_count_totals(
    theta: &GenerativeParams,
    t_len: usize,
    count_total: u64,
    rng: &mut RngStream,
) -> (Array2<f64>, Array2<f64>) {
    sample_sequence_impl(theta, t_len, count_total, rng)
}

fn sample_sequence_impl(
    theta: &GenerativeParams,
    t_len: usize,
    count_total: u64,
    rng: &mut RngStream,
) -> (Array2<f64>, Array2<f64>) {
    assert!(t_len >= 1, "sequence length must be positive");
    let spec = &theta.spec;
    let n = spec.order;
    let (m_dim, j_dim) = (spec.visible_dim, spec.dim(1));
    let mut v = Array2::zeros((t_len, m_dim));
    let mut h = Array2::zeros((t_len, j_dim));
    let mut hw = vec![0.0; n * j_dim];
    let mut vw = vec![0.0; n * m_dim];
    for t in 0..t_len {
        fill_window(&mut hw, &h, t, n);
        fill_window(&mut vw, &v, t, n);
        let psi1 = hidden_logits(theta, &hw, &vw);
        for j in 0..j_dim {
            h[[t, j]] = rng.bernoulli_logit(psi1[j]);
        }
        let vis = visible_params(theta, h.row(t), &vw);
        sample_visible(&vis, count_total, rng, v.row_mut(t).as_slice_mut().unwrap());
    }
    (v, h)
}

/// Samples the hidden chain from the recognition model in a single online
/// forward pass, accumulating `log q(H | V)`.
pub fn sample_posterior(phi: &RecognitionParams, v: &Array2<f64>, rng: &mut RngStream) -> HiddenStates {
    let spec = &phi.spec;
    let n = spec.order;
    let (t_len, m_dim) = v.dim();
    assert_eq!(m_dim, spec.visible_dim, "frame dimension");
    let j_dim = spec.dim(1);
    let mut h = Array2::zeros((t_len, j_dim));
    let mut hw = vec![0.0; n * j_dim];
    let mut vw = vec![0.0; n * m_dim];
    let mut log_q = 0.0;
    for t in 0..t_len {
        fill_window(&mut hw, &h, t, n);
        fill_window(&mut vw, &v, t, n);
        let psi3 = recognition_logits(phi, &hw, v.row(t), &vw);
        for j in 0..j_dim {
            let bit = rng.bernoulli_logit(psi3[j]);
            h[[t, j]] = bit;
            log_q += bernoulli_logpmf(bit, psi3[j]);
        }
    }
    HiddenStates { h, log_q }
}

/// `log q(H | V)` for a fixed hidden trajectory.
pub fn recognition_log_prob(phi: &RecognitionParams, v: &Array2<f64>, h: &Array2<f64>) -> f64 {
    let psi3 = recognition_logit_matrix(phi, v, h);
    bern_sum(h, &psi3)
}

/// Preactivations and residuals for a (V, H) pair, shared by the bound
/// terms and the gradient pass.
#[derive(Clone, Debug)]
pub struct Workspace {
    pub psi1: Array2<f64>,
    pub chi1: Array2<f64>,
    pub vis: VisibleStats,
    /// Recognition logits and residual, present when built with `phi`.
    pub psi3: Option<Array2<f64>>,
    pub chi3: Option<Array2<f64>>,
    /// Hidden windows, `T x n*J`.
    pub h_windows: Array2<f64>,
    /// Visible windows, `T x n*M`.
    pub v_windows: Array2<f64>,
}

fn check_pair(theta: &GenerativeParams, v: &Array2<f64>, h: &Array2<f64>) {
    assert_eq!(v.nrows(), h.nrows(), "V and H must have equal length");
    assert_eq!(v.ncols(), theta.spec.visible_dim, "frame dimension");
    assert_eq!(h.ncols(), theta.spec.dim(1), "hidden dimension");
    debug_assert!(h.iter().all(|&x| x == 0.0 || x == 1.0), "hidden states must be bits");
    if theta.spec.likelihood == Likelihood::Binary {
        assert!(
            v.iter().all(|&x| x == 0.0 || x == 1.0),
            "binary likelihood requires frames in {{0, 1}}"
        );
    }
}

fn visible_stats(theta: &GenerativeParams, v: &Array2<f64>, h: &Array2<f64>, vw: &Array2<f64>) -> VisibleStats {
    visible_stats_from_blocks(
        theta.spec.likelihood,
        theta.w2(),
        theta.w4(),
        theta.c(),
        theta.var.as_ref(),
        v,
        h,
        vw,
    )
}

pub(crate) fn recognition_logit_matrix(
    phi: &RecognitionParams,
    v: &Array2<f64>,
    h: &Array2<f64>,
) -> Array2<f64> {
    let n = phi.spec.order;
    let hw = window_matrix(h, n);
    let vw = window_matrix(v, n);
    let mut psi3 = hw.dot(&phi.u1().t());
    psi3 += &v.dot(&phi.u2().t());
    psi3 += &vw.dot(&phi.u3().t());
    psi3 += phi.d();
    psi3
}

/// Builds the full workspace for a (V, H) pair. Pass `phi` to include the
/// recognition side.
pub fn workspace(
    theta: &GenerativeParams,
    phi: Option<&RecognitionParams>,
    v: &Array2<f64>,
    h: &Array2<f64>,
) -> Workspace {
    check_pair(theta, v, h);
    let n = theta.spec.order;
    let h_windows = window_matrix(h, n);
    let v_windows = window_matrix(v, n);
    let mut psi1 = h_windows.dot(&theta.w1().t());
    psi1 += &v_windows.dot(&theta.w3().t());
    psi1 += theta.b();
    let chi1 = Zip::from(h).and(&psi1).map_collect(|&x, &p| x - sigmoid(p));
    let vis = visible_stats(theta, v, h, &v_windows);
    let (psi3, chi3) = match phi {
        Some(phi) => {
            assert_eq!(phi.spec, theta.spec, "generative and recognition specs must agree");
            let mut psi3 = h_windows.dot(&phi.u1().t());
            psi3 += &v.dot(&phi.u2().t());
            psi3 += &v_windows.dot(&phi.u3().t());
            psi3 += phi.d();
            let chi3 = Zip::from(h).and(&psi3).map_collect(|&x, &p| x - sigmoid(p));
            (Some(psi3), Some(chi3))
        }
        None => (None, None),
    };
    Workspace { psi1, chi1, vis, psi3, chi3, h_windows, v_windows }
}

/// Sum of `x * psi - softplus(psi)` over a bit array and matching logits.
fn bern_sum(x: &Array2<f64>, psi: &Array2<f64>) -> f64 {
    Zip::from(x).and(psi).fold(0.0, |acc, &value, &logit| acc + bernoulli_logpmf(value, logit))
}

/// `log p(V, H)` under the generative model.
pub fn log_joint(theta: &GenerativeParams, v: &Array2<f64>, h: &Array2<f64>) -> f64 {
    let ws = workspace(theta, None, v, h);
    bern_sum(h, &ws.psi1) + visible_loglik_rows(&ws.vis, v).iter().sum::<f64>()
}

/// Per-time-step bound terms `l_t`; their sum equals
/// `log_joint - recognition_log_prob`.
pub fn elbo_terms(
    theta: &GenerativeParams,
    phi: &RecognitionParams,
    v: &Array2<f64>,
    h: &Array2<f64>,
) -> Vec<f64> {
    let ws = workspace(theta, Some(phi), v, h);
    elbo_terms_from_workspace(&ws, v, h)
}

pub(crate) fn elbo_terms_from_workspace(ws: &Workspace, v: &Array2<f64>, h: &Array2<f64>) -> Vec<f64> {
    let psi3 = ws.psi3.as_ref().expect("workspace built without recognition side");
    let mut terms = visible_loglik_rows(&ws.vis, v);
    for t in 0..v.nrows() {
        let hidden: f64 = h
            .row(t)
            .iter()
            .zip(ws.psi1.row(t).iter())
            .map(|(&x, &p)| bernoulli_logpmf(x, p))
            .sum();
        let recog: f64 = h
            .row(t)
            .iter()
            .zip(psi3.row(t).iter())
            .map(|(&x, &p)| bernoulli_logpmf(x, p))
            .sum();
        terms[t] += hidden - recog;
    }
    terms
}

/// Analytic gradient of `log p(V, H)` with respect to theta.
pub fn grad_log_joint(theta: &GenerativeParams, v: &Array2<f64>, h: &Array2<f64>) -> GenerativeParams {
    let ws = workspace(theta, None, v, h);
    grad_log_joint_from_workspace(theta, &ws, h)
}

pub(crate) fn grad_log_joint_from_workspace(
    theta: &GenerativeParams,
    ws: &Workspace,
    h: &Array2<f64>,
) -> GenerativeParams {
    let mut g = theta.zeros_like();
    // hidden chain blocks: chi1 against the windows
    g.layers[1].self_recur = ws.chi1.t().dot(&ws.h_windows);
    *g.layers[1].below_recur.as_mut().unwrap() = ws.chi1.t().dot(&ws.v_windows);
    g.layers[1].bias = ws.chi1.sum_axis(ndarray::Axis(0));
    // visible blocks: the family's mean residual against h and the windows
    let chi = ws.vis.mean_residual();
    *g.layers[0].top_down.as_mut().unwrap() = chi.t().dot(h);
    g.layers[0].self_recur = chi.t().dot(&ws.v_windows);
    g.layers[0].bias = chi.sum_axis(ndarray::Axis(0));
    if let VisibleStats::Real { chi5, .. } = &ws.vis {
        let var = g.var.as_mut().unwrap();
        var.top_down = chi5.t().dot(h);
        var.self_recur = chi5.t().dot(&ws.v_windows);
        var.bias = chi5.sum_axis(ndarray::Axis(0));
    }
    g
}

/// Analytic gradient of `log q(H | V)` with respect to phi.
pub fn grad_log_q(phi: &RecognitionParams, v: &Array2<f64>, h: &Array2<f64>) -> RecognitionParams {
    let weights = vec![1.0; v.nrows()];
    grad_log_q_weighted(phi, v, h, &weights)
}

/// Weighted score gradient `sum_t w_t * d log q(h_t | .) / d phi`. With
/// unit weights this is the plain score; the trainer passes the per-step
/// learning signal.
pub fn grad_log_q_weighted(
    phi: &RecognitionParams,
    v: &Array2<f64>,
    h: &Array2<f64>,
    weights: &[f64],
) -> RecognitionParams {
    assert_eq!(weights.len(), v.nrows(), "one weight per time step");
    let n = phi.spec.order;
    let hw = window_matrix(h, n);
    let vw = window_matrix(v, n);
    let psi3 = recognition_logit_matrix(phi, v, h);
    let mut chi3 = Zip::from(h).and(&psi3).map_collect(|&x, &p| x - sigmoid(p));
    for (t, mut row) in chi3.rows_mut().into_iter().enumerate() {
        row *= weights[t];
    }
    let mut g = phi.zeros_like();
    g.layers[0].self_recur = chi3.t().dot(&hw);
    g.layers[0].from_below = chi3.t().dot(v);
    *g.layers[0].below_recur.as_mut().unwrap() = chi3.t().dot(&vw);
    g.layers[0].bias = chi3.sum_axis(ndarray::Axis(0));
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{init_params, ModelSpec};
    use crate::numeric::softmax_in_place;
    use ndarray::array;

    const LN2: f64 = std::f64::consts::LN_2;

    fn rand_pair(
        spec: &ModelSpec,
        scale: f64,
        seed: u64,
    ) -> (GenerativeParams, RecognitionParams) {
        let mut rng = RngStream::new(seed, 0);
        let (mut theta, mut phi) = init_params(spec, &mut rng).unwrap();
        // init draws are tiny; rescale and perturb biases for harder tests
        for blocks in [theta.blocks_mut(), phi.blocks_mut()] {
            for b in blocks {
                for x in b.data.iter_mut() {
                    *x = scale * rng.normal();
                }
            }
        }
        (theta, phi)
    }

    fn rand_data(spec: &ModelSpec, t_len: usize, seed: u64) -> Array2<f64> {
        let mut rng = RngStream::new(seed, 7);
        Array2::from_shape_fn((t_len, spec.visible_dim), |_| match spec.likelihood {
            Likelihood::Binary => (rng.uniform() < 0.5) as u8 as f64,
            Likelihood::Real => rng.normal(),
            Likelihood::Count => (rng.uniform() * 4.0).floor(),
        })
    }

    #[test]
    fn hidden_logits_zero_params_and_first_step() {
        let spec = ModelSpec::shallow(3, 2, 1, Likelihood::Binary);
        let theta = GenerativeParams::zeros(&spec);
        let psi = hidden_logits(&theta, &[0.0, 0.0], &[0.0; 3]);
        assert!(psi.iter().all(|&x| x == 0.0));
        assert!((sigmoid(psi[0]) - 0.5).abs() < 1e-15);

        // at t = 1 the windows are zero, so the logits equal b exactly
        let (mut theta, _) = rand_pair(&spec, 0.7, 1);
        theta.layers[1].bias = array![-1.0, 2.0];
        let psi = hidden_logits(&theta, &[0.0, 0.0], &[0.0; 3]);
        assert_eq!(psi, array![-1.0, 2.0]);
    }

    #[test]
    fn hidden_logits_hand_case() {
        // J = 2, n = 1: W1 = I, W3 = 0, b = (-1, 2), previous h = (1, 0)
        let spec = ModelSpec::shallow(3, 2, 1, Likelihood::Binary);
        let mut theta = GenerativeParams::zeros(&spec);
        theta.layers[1].self_recur = array![[1.0, 0.0], [0.0, 1.0]];
        theta.layers[1].bias = array![-1.0, 2.0];
        let psi = hidden_logits(&theta, &[1.0, 0.0], &[0.0; 3]);
        assert_eq!(psi, array![0.0, 2.0]);
    }

    #[test]
    fn visible_params_zero_theta() {
        for likelihood in [Likelihood::Binary, Likelihood::Real, Likelihood::Count] {
            let spec = ModelSpec::shallow(4, 2, 1, likelihood);
            let theta = GenerativeParams::zeros(&spec);
            let h = array![1.0, 0.0];
            match visible_params(&theta, h.view(), &[0.0; 4]) {
                VisibleParams::Binary { psi } => assert!(psi.iter().all(|&x| x == 0.0)),
                VisibleParams::Real { mu, tau } => {
                    assert!(mu.iter().all(|&x| x == 0.0));
                    assert!(tau.iter().all(|&x| x == 0.0)); // sigma = 1
                }
                VisibleParams::Count { y } => {
                    assert!(y.iter().all(|&p| (p - 0.25).abs() < 1e-15));
                }
            }
        }
    }

    #[test]
    fn visible_params_saturated_bias() {
        let spec = ModelSpec::shallow(3, 2, 1, Likelihood::Binary);
        let mut theta = GenerativeParams::zeros(&spec);
        theta.layers[0].bias.fill(10.0);
        let h = array![0.0, 0.0];
        let VisibleParams::Binary { psi } = visible_params(&theta, h.view(), &[0.0; 3]) else {
            unreachable!()
        };
        for &p in psi.iter() {
            assert!((sigmoid(p) - 0.99995).abs() < 1e-4);
        }
    }

    #[test]
    fn sample_sequence_zero_theta_is_fair() {
        let spec = ModelSpec::shallow(20, 4, 1, Likelihood::Binary);
        let theta = GenerativeParams::zeros(&spec);
        let mut rng = RngStream::new(42, 0);
        let (v, _) = sample_sequence(&theta, 5000, &mut rng);
        let mean = v.mean().unwrap();
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn sample_sequence_is_deterministic() {
        let spec = ModelSpec::shallow(6, 3, 2, Likelihood::Real);
        // small weights keep the sampled autoregression stable
        let (theta, _) = rand_pair(&spec, 0.05, 9);
        let (v1, h1) = sample_sequence(&theta, 20, &mut RngStream::new(5, 1));
        let (v2, h2) = sample_sequence(&theta, 20, &mut RngStream::new(5, 1));
        assert!(v1.iter().all(|x| x.is_finite()));
        assert_eq!(v1, v2);
        assert_eq!(h1, h2);
    }

    #[test]
    fn count_sampling_single_token_matches_softmax() {
        let spec = ModelSpec::shallow(5, 2, 1, Likelihood::Count);
        let (mut theta, _) = rand_pair(&spec, 0.0, 3);
        // hidden chain forced off so y is constant across steps
        theta.layers[0].bias = array![0.1, -0.4, 0.8, 0.0, -1.0];
        let mut rng = RngStream::new(17, 0);
        let draws = 200_000usize;
        let (v, _) = sample_sequence(&theta, draws, &mut rng);
        let mut y = theta.layers[0].bias.to_vec();
        softmax_in_place(&mut y);
        for t in 0..10 {
            assert_eq!(v.row(t).sum(), 1.0, "one token per frame");
        }
        let freq = v.sum_axis(ndarray::Axis(0)) / draws as f64;
        for m in 0..5 {
            let se = (y[m] * (1.0 - y[m]) / draws as f64).sqrt();
            assert!(
                (freq[m] - y[m]).abs() < 3.0 * se + 1e-9,
                "freq {} vs y {} at m={m}",
                freq[m],
                y[m]
            );
        }
    }

    #[test]
    fn log_joint_two_fair_coins() {
        let spec = ModelSpec::shallow(1, 1, 1, Likelihood::Binary);
        let theta = GenerativeParams::zeros(&spec);
        for (v, h) in [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)] {
            let lj = log_joint(&theta, &array![[v]], &array![[h]]);
            assert!((lj + 2.0 * LN2).abs() < 1e-14);
        }
    }

    #[test]
    fn log_joint_gaussian_at_mean() {
        let spec = ModelSpec::shallow(3, 2, 1, Likelihood::Real);
        let theta = GenerativeParams::zeros(&spec);
        let t_len = 4;
        let v = Array2::zeros((t_len, 3)); // equals mu = 0 everywhere
        let h = Array2::zeros((t_len, 2));
        let lj = log_joint(&theta, &v, &h);
        let expected = -(t_len as f64) * (3.0 * crate::visible::HALF_LN_2PI + 2.0 * LN2);
        assert!((lj - expected).abs() < 1e-12, "{lj} vs {expected}");
    }

    #[test]
    fn recognition_logits_cases() {
        let spec = ModelSpec::shallow(2, 1, 1, Likelihood::Binary);
        let phi = RecognitionParams::zeros(&spec);
        let v_t = array![1.0, 0.0];
        let psi = recognition_logits(&phi, &[0.0], v_t.view(), &[0.0, 0.0]);
        assert_eq!(psi[0], 0.0);

        // hand case: U2 = [1, -1], d = 0.5, windows zero
        let mut phi = RecognitionParams::zeros(&spec);
        phi.layers[0].from_below = array![[1.0, -1.0]];
        phi.layers[0].bias = array![0.5];
        let psi = recognition_logits(&phi, &[0.0], v_t.view(), &[0.0, 0.0]);
        assert!((psi[0] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn posterior_zero_phi_is_fair_coins() {
        let spec = ModelSpec::shallow(4, 3, 1, Likelihood::Binary);
        let phi = RecognitionParams::zeros(&spec);
        let v = rand_data(&spec, 6, 1);
        let states = sample_posterior(&phi, &v, &mut RngStream::new(0, 0));
        assert_eq!(states.log_q, -(6.0 * 3.0) * LN2);
    }

    #[test]
    fn posterior_log_q_self_consistent() {
        let spec = ModelSpec::shallow(5, 3, 2, Likelihood::Binary);
        let (_, phi) = rand_pair(&spec, 0.8, 4);
        let v = rand_data(&spec, 7, 2);
        let a = sample_posterior(&phi, &v, &mut RngStream::new(3, 3));
        let b = sample_posterior(&phi, &v, &mut RngStream::new(3, 3));
        assert_eq!(a.h, b.h);
        assert_eq!(a.log_q, b.log_q);
        let recomputed = recognition_log_prob(&phi, &v, &a.h);
        assert!((recomputed - a.log_q).abs() < 1e-12);
    }

    #[test]
    fn elbo_zero_params_is_entropy_of_visible() {
        let spec = ModelSpec::shallow(4, 3, 1, Likelihood::Binary);
        let theta = GenerativeParams::zeros(&spec);
        let phi = RecognitionParams::zeros(&spec);
        let v = rand_data(&spec, 5, 3);
        let h = sample_posterior(&phi, &v, &mut RngStream::new(1, 0)).h;
        for l_t in elbo_terms(&theta, &phi, &v, &h) {
            assert!((l_t + 4.0 * LN2).abs() < 1e-13);
        }
    }

    #[test]
    fn elbo_terms_sum_to_joint_minus_recognition() {
        for likelihood in [Likelihood::Binary, Likelihood::Real, Likelihood::Count] {
            let spec = ModelSpec::shallow(4, 3, 2, likelihood);
            let (theta, phi) = rand_pair(&spec, 0.6, 11);
            let v = rand_data(&spec, 6, 5);
            let states = sample_posterior(&phi, &v, &mut RngStream::new(2, 0));
            let total: f64 = elbo_terms(&theta, &phi, &v, &states.h).iter().sum();
            let expected = log_joint(&theta, &v, &states.h) - states.log_q;
            assert!((total - expected).abs() < 1e-10, "{likelihood:?}: {total} vs {expected}");
        }
    }

    #[test]
    fn grad_bias_closed_forms() {
        // theta = 0, h all ones: d/db_j = T * (1 - 0.5)
        let spec = ModelSpec::shallow(3, 2, 1, Likelihood::Binary);
        let theta = GenerativeParams::zeros(&spec);
        let t_len = 6;
        let v = Array2::zeros((t_len, 3));
        let h = Array2::ones((t_len, 2));
        let g = grad_log_joint(&theta, &v, &h);
        for &x in g.layers[1].bias.iter() {
            assert!((x - t_len as f64 / 2.0).abs() < 1e-12);
        }

        // phi = 0, h all zeros: d/dd_j = -T/2
        let phi = RecognitionParams::zeros(&spec);
        let h0 = Array2::zeros((t_len, 2));
        let gq = grad_log_q(&phi, &v, &h0);
        for &x in gq.layers[0].bias.iter() {
            assert!((x + t_len as f64 / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn real_residuals_at_the_mean() {
        let spec = ModelSpec::shallow(3, 2, 1, Likelihood::Real);
        let theta = GenerativeParams::zeros(&spec);
        let v = Array2::zeros((4, 3));
        let h = Array2::zeros((4, 2));
        let ws = workspace(&theta, None, &v, &h);
        let VisibleStats::Real { chi4, chi5, .. } = &ws.vis else { unreachable!() };
        assert!(chi4.iter().all(|&x| x == 0.0));
        assert!(chi5.iter().all(|&x| x == -1.0));
        let g = grad_log_joint(&theta, &v, &h);
        for &x in g.var.as_ref().unwrap().bias.iter() {
            assert!((x + 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn count_residuals_sum_to_zero_and_y_normalized() {
        let spec = ModelSpec::shallow(5, 2, 1, Likelihood::Count);
        let (theta, phi) = rand_pair(&spec, 0.5, 21);
        let v = rand_data(&spec, 6, 9);
        let h = sample_posterior(&phi, &v, &mut RngStream::new(0, 1)).h;
        let ws = workspace(&theta, None, &v, &h);
        let VisibleStats::Count { y, chi6, .. } = &ws.vis else { unreachable!() };
        for t in 0..6 {
            assert!((y.row(t).sum() - 1.0).abs() < 1e-12);
            assert!(chi6.row(t).sum().abs() < 1e-10);
        }
    }

    #[test]
    fn binary_chi_stays_in_open_interval() {
        let spec = ModelSpec::shallow(4, 3, 1, Likelihood::Binary);
        let (theta, phi) = rand_pair(&spec, 1.0, 13);
        let v = rand_data(&spec, 5, 4);
        let h = sample_posterior(&phi, &v, &mut RngStream::new(9, 0)).h;
        let ws = workspace(&theta, Some(&phi), &v, &h);
        for &x in ws.chi1.iter().chain(ws.vis.mean_residual().iter()) {
            assert!(x > -1.0 && x < 1.0);
        }
    }

    #[test]
    fn hmsbn_ignores_visible_history() {
        // with W3 = W4 = 0, the conditionals cannot depend on the window
        let spec = ModelSpec::shallow(4, 2, 2, Likelihood::Binary);
        let (mut theta, _) = rand_pair(&spec, 0.9, 8);
        theta.layers[1].below_recur.as_mut().unwrap().fill(0.0); // W3
        theta.layers[0].self_recur.fill(0.0); // W4
        let hw = [0.3, -0.2, 0.4, 0.9];
        let vw1 = [0.5; 8];
        let vw2 = [-3.0; 8];
        assert_eq!(hidden_logits(&theta, &hw, &vw1), hidden_logits(&theta, &hw, &vw2));
        let h_t = array![1.0, 0.0];
        let a = visible_params(&theta, h_t.view(), &vw1);
        let b = visible_params(&theta, h_t.view(), &vw2);
        match (a, b) {
            (VisibleParams::Binary { psi: pa }, VisibleParams::Binary { psi: pb }) => {
                assert_eq!(pa, pb)
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn degenerate_length_one_sequences_work() {
        for likelihood in [Likelihood::Binary, Likelihood::Real, Likelihood::Count] {
            let spec = ModelSpec::shallow(3, 2, 2, likelihood);
            let (theta, phi) = rand_pair(&spec, 0.4, 30);
            let mut rng = RngStream::new(0, 0);
            let (v, h) = sample_sequence(&theta, 1, &mut rng);
            let states = sample_posterior(&phi, &v, &mut rng);
            let terms = elbo_terms(&theta, &phi, &v, &states.h);
            assert_eq!(terms.len(), 1);
            let _ = grad_log_joint(&theta, &v, &h);
            let _ = grad_log_q(&phi, &v, &states.h);
        }
    }
}
