//! Gradient oracle suite: every analytic gradient is checked against
//! central finite differences on random small models, across likelihoods,
//! orders, and layer kinds, and the joint log-probability is checked
//! against an independent straight-line evaluator.

mod common;

use common::{
    max_fd_rel_err, random_bits, random_frames, random_params, reference_log_joint,
    reference_log_q, FD_REL_TOL, FD_STEP,
};
use ndarray::Array2;
use tsbn_core::deep::{
    deep_elbo_terms, deep_grads_stochastic, deep_log_joint, deep_log_q, deep_sample_posterior,
    det_bptt_grads, det_forward_gen, DeepStates,
};
use tsbn_core::numeric::{sigmoid, RngStream};
use tsbn_core::params::{LayerKind, Likelihood, ModelSpec};
use tsbn_core::shallow::{grad_log_joint, grad_log_q, log_joint, recognition_log_prob, sample_posterior};

const LIKELIHOODS: [Likelihood; 3] = [Likelihood::Binary, Likelihood::Real, Likelihood::Count];

#[test]
fn log_joint_matches_straight_line_reference() {
    for (i, likelihood) in LIKELIHOODS.into_iter().enumerate() {
        for order in [1, 2] {
            let spec = ModelSpec::shallow(3, 2, order, likelihood);
            let (theta, _) = random_params(&spec, 0.6, 17 + i as u64);
            let v = random_frames(&spec, 4, 31 + order as u64);
            let h = random_bits(4, 2, 7);
            let got = log_joint(&theta, &v, &h);
            let want = reference_log_joint(&theta, &v, &h);
            assert!((got - want).abs() < 1e-12, "{likelihood:?}/order {order}: {got} vs {want}");
        }
    }
}

#[test]
fn log_q_matches_straight_line_reference() {
    for order in [1, 2] {
        let spec = ModelSpec::shallow(4, 3, order, Likelihood::Binary);
        let (_, phi) = random_params(&spec, 0.7, 3 + order as u64);
        let v = random_frames(&spec, 5, 11);
        let h = random_bits(5, 3, 23);
        let got = recognition_log_prob(&phi, &v, &h);
        let want = reference_log_q(&phi, &v, &h);
        assert!((got - want).abs() < 1e-12, "order {order}: {got} vs {want}");
    }
}

#[test]
fn shallow_generative_gradients_match_finite_differences() {
    for (i, likelihood) in LIKELIHOODS.into_iter().enumerate() {
        for order in [1usize, 2] {
            let spec = ModelSpec::shallow(5, 4, order, likelihood);
            let (mut theta, _) = random_params(&spec, 0.5, 100 + 10 * i as u64 + order as u64);
            let v = random_frames(&spec, 6, 41 + i as u64);
            let h = random_bits(6, 4, 59 + order as u64);
            let analytic = grad_log_joint(&theta, &v, &h);
            let worst = max_fd_rel_err(&mut theta, &analytic, |th| log_joint(th, &v, &h), FD_STEP);
            assert!(worst < FD_REL_TOL, "{likelihood:?}/order {order}: worst rel err {worst}");
        }
    }
}

#[test]
fn shallow_recognition_gradients_match_finite_differences() {
    for (i, likelihood) in LIKELIHOODS.into_iter().enumerate() {
        for order in [1usize, 2] {
            let spec = ModelSpec::shallow(5, 4, order, likelihood);
            let (_, mut phi) = random_params(&spec, 0.5, 200 + 10 * i as u64 + order as u64);
            let v = random_frames(&spec, 6, 43 + i as u64);
            let h = random_bits(6, 4, 61 + order as u64);
            let analytic = grad_log_q(&phi, &v, &h);
            let worst =
                max_fd_rel_err(&mut phi, &analytic, |ph| recognition_log_prob(ph, &v, &h), FD_STEP);
            assert!(worst < FD_REL_TOL, "{likelihood:?}/order {order}: worst rel err {worst}");
        }
    }
}

#[test]
fn deep_stochastic_gradients_match_finite_differences() {
    for (i, likelihood) in LIKELIHOODS.into_iter().enumerate() {
        for order in [1usize, 2] {
            let spec = ModelSpec::deep(3, vec![2, 2], LayerKind::Stochastic, order, likelihood);
            let (mut theta, mut phi) = random_params(&spec, 0.5, 300 + 10 * i as u64 + order as u64);
            let v = random_frames(&spec, 4, 47 + i as u64);
            let mut rng = RngStream::new(71 + order as u64, 0);
            let states = deep_sample_posterior(&phi, &v, &mut rng);
            let (g_theta, g_phi) = deep_grads_stochastic(&theta, &phi, &v, &states);
            let worst_theta = max_fd_rel_err(
                &mut theta,
                &g_theta,
                |th| deep_log_joint(th, &v, &states.layers),
                FD_STEP,
            );
            assert!(worst_theta < FD_REL_TOL, "{likelihood:?} theta: {worst_theta}");
            let worst_phi = max_fd_rel_err(
                &mut phi,
                &g_phi,
                |ph| deep_log_q(ph, &v, &states.layers),
                FD_STEP,
            );
            assert!(worst_phi < FD_REL_TOL, "{likelihood:?} phi: {worst_phi}");
        }
    }
}

#[test]
fn deterministic_bptt_gradients_match_finite_differences() {
    for (i, likelihood) in LIKELIHOODS.into_iter().enumerate() {
        for order in [1usize, 2] {
            let spec = ModelSpec::deep(3, vec![2, 2], LayerKind::Deterministic, order, likelihood);
            let (mut theta, mut phi) = random_params(&spec, 0.5, 400 + 10 * i as u64 + order as u64);
            let v = random_frames(&spec, 5, 53 + i as u64);
            let z = random_bits(5, 2, 83 + order as u64);
            let (g_theta, g_phi) = det_bptt_grads(&theta, &phi, &v, &z).unwrap();
            // the bound at fixed top-layer samples is deterministic in
            // (theta, phi), so central differences apply to both sides
            let phi_snapshot = phi.clone();
            let elbo_sum = |th: &_, ph: &_| -> f64 {
                let states = DeepStates {
                    layers: vec![Array2::zeros((5, 2)), z.clone()],
                    log_q: 0.0,
                };
                deep_elbo_terms(th, ph, &v, &states).iter().sum()
            };
            let worst_theta = max_fd_rel_err(
                &mut theta,
                &g_theta,
                |th| elbo_sum(th, &phi_snapshot),
                FD_STEP,
            );
            assert!(worst_theta < FD_REL_TOL, "{likelihood:?} theta: {worst_theta}");
            let theta_snapshot = theta.clone();
            let worst_phi = max_fd_rel_err(
                &mut phi,
                &g_phi,
                |ph| elbo_sum(&theta_snapshot, ph),
                FD_STEP,
            );
            assert!(worst_phi < FD_REL_TOL, "{likelihood:?} phi: {worst_phi}");
        }
    }
}

/// Three-layer stack with deterministic middles: the recursion crosses two
/// middle layers and their mutual temporal links.
#[test]
fn deterministic_bptt_three_layers_matches_finite_differences() {
    let spec = ModelSpec::deep(3, vec![2, 2, 2], LayerKind::Deterministic, 2, Likelihood::Binary);
    let (mut theta, mut phi) = random_params(&spec, 0.5, 500);
    let v = random_frames(&spec, 4, 77);
    let z = random_bits(4, 2, 91);
    let (g_theta, g_phi) = det_bptt_grads(&theta, &phi, &v, &z).unwrap();
    let phi_snapshot = phi.clone();
    let elbo_sum = |th: &_, ph: &_| -> f64 {
        let states = DeepStates {
            layers: vec![Array2::zeros((4, 2)), Array2::zeros((4, 2)), z.clone()],
            log_q: 0.0,
        };
        deep_elbo_terms(th, ph, &v, &states).iter().sum()
    };
    let worst_theta =
        max_fd_rel_err(&mut theta, &g_theta, |th| elbo_sum(th, &phi_snapshot), FD_STEP);
    assert!(worst_theta < FD_REL_TOL, "theta: {worst_theta}");
    let theta_snapshot = theta.clone();
    let worst_phi = max_fd_rel_err(&mut phi, &g_phi, |ph| elbo_sum(&theta_snapshot, ph), FD_STEP);
    assert!(worst_phi < FD_REL_TOL, "phi: {worst_phi}");
}

/// The backward recursion agrees with an independent forward-mode
/// reference on the middle-layer parameter gradients, to near machine
/// precision (not just finite-difference tolerance).
#[test]
fn bptt_matches_forward_mode_reference() {
    for order in [1usize, 2] {
        let spec = ModelSpec::deep(3, vec![2, 2], LayerKind::Deterministic, order, Likelihood::Binary);
        let (theta, phi) = random_params(&spec, 0.6, 600 + order as u64);
        let v = random_frames(&spec, 5, 67);
        let z = random_bits(5, 2, 97);
        let (g_theta, _) = det_bptt_grads(&theta, &phi, &v, &z).unwrap();

        let n = spec.order;
        let t_len = v.nrows();
        let k_dim = 2;
        let h = det_forward_gen(&theta, &v, &z).unwrap().remove(0);
        // visible residual
        let w5 = theta.layers[0].top_down.as_ref().unwrap();
        let w7 = &theta.layers[0].self_recur;
        let b3 = &theta.layers[0].bias;
        let mut chi2 = Array2::zeros((t_len, v.ncols()));
        for t in 0..t_len {
            for m in 0..v.ncols() {
                let mut psi = b3[m];
                for k in 0..k_dim {
                    psi += w5[[m, k]] * h[[t, k]];
                }
                for s in 0..n {
                    for mp in 0..v.ncols() {
                        if t >= s + 1 {
                            psi += w7[[m, s * v.ncols() + mp]] * v[[t - 1 - s, mp]];
                        }
                    }
                }
                chi2[[t, m]] = v[[t, m]] - sigmoid(psi);
            }
        }
        // dL/d(preactivation of h[t0][k0]) by forward-mode tangent
        // propagation, one source at a time
        let w4 = &theta.layers[1].self_recur;
        let fprime = |t: usize, k: usize| if h[[t, k]] > 0.0 { 1.0 } else { 0.0 };
        let mut d_ref = Array2::zeros((t_len, k_dim));
        for t0 in 0..t_len {
            for k0 in 0..k_dim {
                let mut u = Array2::zeros((t_len, k_dim));
                u[[t0, k0]] = fprime(t0, k0);
                for t in (t0 + 1)..t_len {
                    for k in 0..k_dim {
                        let mut acc = 0.0;
                        for s in 1..=n {
                            if t >= s && t - s >= t0 {
                                for kp in 0..k_dim {
                                    acc += w4[[k, (s - 1) * k_dim + kp]] * u[[t - s, kp]];
                                }
                            }
                        }
                        u[[t, k]] = fprime(t, k) * acc;
                    }
                }
                let mut total = 0.0;
                for t in t0..t_len {
                    for k in 0..k_dim {
                        let mut dvis = 0.0;
                        for m in 0..v.ncols() {
                            dvis += w5[[m, k]] * chi2[[t, m]];
                        }
                        total += dvis * u[[t, k]];
                    }
                }
                d_ref[[t0, k0]] = total;
            }
        }
        // chain into the middle-layer bias gradient and compare
        let got = &g_theta.layers[1].bias;
        for k in 0..k_dim {
            let want: f64 = (0..t_len).map(|t| d_ref[[t, k]]).sum();
            assert!((got[k] - want).abs() < 1e-12, "order {order}, k {k}: {} vs {want}", got[k]);
        }
        // and the z -> middle weight gradient
        let got_td = g_theta.layers[1].top_down.as_ref().unwrap();
        for k in 0..k_dim {
            for j in 0..2 {
                let want: f64 = (0..t_len).map(|t| d_ref[[t, k]] * z[[t, j]]).sum();
                assert!((got_td[[k, j]] - want).abs() < 1e-12);
            }
        }
    }
}

/// One posterior-sampled trajectory keeps the whole suite honest: the
/// gradients are evaluated at states the model actually visits.
#[test]
fn shallow_gradients_at_sampled_states() {
    let spec = ModelSpec::shallow(4, 3, 2, Likelihood::Binary);
    let (mut theta, mut phi) = random_params(&spec, 0.8, 700);
    let v = random_frames(&spec, 6, 71);
    let states = sample_posterior(&phi, &v, &mut RngStream::new(5, 5));
    let g_theta = grad_log_joint(&theta, &v, &states.h);
    let g_phi = grad_log_q(&phi, &v, &states.h);
    let worst_theta =
        max_fd_rel_err(&mut theta, &g_theta, |th| log_joint(th, &v, &states.h), FD_STEP);
    let worst_phi = max_fd_rel_err(
        &mut phi,
        &g_phi,
        |ph| recognition_log_prob(ph, &v, &states.h),
        FD_STEP,
    );
    assert!(worst_theta < FD_REL_TOL && worst_phi < FD_REL_TOL);
}
