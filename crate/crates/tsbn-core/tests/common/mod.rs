//! Shared helpers for the integration suites: finite-difference gradient
//! checking, random model construction, and an independent straight-line
//! reference evaluator for the joint log-probability.

use ndarray::Array2;
use tsbn_core::numeric::{sigmoid, softplus, RngStream};
use tsbn_core::params::{
    init_params, GenerativeParams, Likelihood, ModelSpec, ParamContainer, RecognitionParams,
};

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;

/// Central finite differences of `f` against an analytic gradient, entry
/// by entry over every block. Returns the worst relative error.
pub fn max_fd_rel_err<P, F>(params: &mut P, analytic: &P, mut f: F, step: f64) -> f64
where
    P: ParamContainer,
    F: FnMut(&P) -> f64,
{
    let num_blocks = params.blocks().len();
    let mut worst: f64 = 0.0;
    for bi in 0..num_blocks {
        let len = params.blocks()[bi].data.len();
        for i in 0..len {
            let orig = params.blocks()[bi].data[i];
            params.blocks_mut()[bi].data[i] = orig + step;
            let f_plus = f(params);
            params.blocks_mut()[bi].data[i] = orig - step;
            let f_minus = f(params);
            params.blocks_mut()[bi].data[i] = orig;
            let numeric = (f_plus - f_minus) / (2.0 * step);
            let ana = analytic.blocks()[bi].data[i];
            let rel = (ana - numeric).abs() / f64::max(1e-6, ana.abs().max(numeric.abs()));
            worst = worst.max(rel);
        }
    }
    worst
}

/// Random parameters at a useful scale (the standard initializer is too
/// small to exercise the nonlinearities).
pub fn random_params(
    spec: &ModelSpec,
    scale: f64,
    seed: u64,
) -> (GenerativeParams, RecognitionParams) {
    let mut rng = RngStream::new(seed, 0);
    let (mut theta, mut phi) = init_params(spec, &mut rng).unwrap();
    for blocks in [theta.blocks_mut(), phi.blocks_mut()] {
        for b in blocks {
            for x in b.data.iter_mut() {
                *x = scale * rng.normal();
            }
        }
    }
    (theta, phi)
}

pub fn random_frames(spec: &ModelSpec, t_len: usize, seed: u64) -> Array2<f64> {
    let mut rng = RngStream::new(seed, 99);
    Array2::from_shape_fn((t_len, spec.visible_dim), |_| match spec.likelihood {
        Likelihood::Binary => (rng.uniform() < 0.5) as u8 as f64,
        Likelihood::Real => rng.normal(),
        Likelihood::Count => (rng.uniform() * 4.0).floor(),
    })
}

pub fn random_bits(t_len: usize, dim: usize, seed: u64) -> Array2<f64> {
    let mut rng = RngStream::new(seed, 55);
    Array2::from_shape_fn((t_len, dim), |_| (rng.uniform() < 0.5) as u8 as f64)
}

/// Entry of a zero-padded window: frame `t - 1 - s` of `states`, or zero
/// before the start.
fn win(states: &Array2<f64>, t: usize, s: usize, idx: usize) -> f64 {
    if t >= s + 1 {
        states[[t - 1 - s, idx]]
    } else {
        0.0
    }
}

/// Straight-line scalar reference for the shallow joint log-probability,
/// written with explicit index loops and no shared code with the library's
/// vectorized path.
pub fn reference_log_joint(theta: &GenerativeParams, v: &Array2<f64>, h: &Array2<f64>) -> f64 {
    let spec = &theta.spec;
    let n = spec.order;
    let (t_len, m_dim) = v.dim();
    let j_dim = h.ncols();
    let mut total = 0.0;
    for t in 0..t_len {
        // hidden chain terms
        for j in 0..j_dim {
            let mut psi1 = theta.b()[j];
            for s in 0..n {
                for jp in 0..j_dim {
                    psi1 += theta.w1()[[j, s * j_dim + jp]] * win(h, t, s, jp);
                }
                for m in 0..m_dim {
                    psi1 += theta.w3()[[j, s * m_dim + m]] * win(v, t, s, m);
                }
            }
            total += psi1 * h[[t, j]] - softplus(psi1);
        }
        // visible terms per family
        let mut psi2 = vec![0.0; m_dim];
        for (m, p) in psi2.iter_mut().enumerate() {
            *p = theta.c()[m];
            for j in 0..j_dim {
                *p += theta.w2()[[m, j]] * h[[t, j]];
            }
            for s in 0..n {
                for mp in 0..m_dim {
                    *p += theta.w4()[[m, s * m_dim + mp]] * win(v, t, s, mp);
                }
            }
        }
        match spec.likelihood {
            Likelihood::Binary => {
                for m in 0..m_dim {
                    total += psi2[m] * v[[t, m]] - softplus(psi2[m]);
                }
            }
            Likelihood::Real => {
                let var = theta.var.as_ref().unwrap();
                for m in 0..m_dim {
                    let mut tau = var.bias[m];
                    for j in 0..j_dim {
                        tau += var.top_down[[m, j]] * h[[t, j]];
                    }
                    for s in 0..n {
                        for mp in 0..m_dim {
                            tau += var.self_recur[[m, s * m_dim + mp]] * win(v, t, s, mp);
                        }
                    }
                    let resid = v[[t, m]] - psi2[m];
                    total -= 0.5 * (2.0 * std::f64::consts::PI).ln()
                        + tau
                        + resid * resid / (2.0 * (2.0 * tau).exp());
                }
            }
            Likelihood::Count => {
                let mx = psi2.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = mx + psi2.iter().map(|p| (p - mx).exp()).sum::<f64>().ln();
                for m in 0..m_dim {
                    total += v[[t, m]] * (psi2[m] - lse);
                }
            }
        }
    }
    total
}

/// Straight-line scalar reference for the recognition log-probability.
pub fn reference_log_q(phi: &RecognitionParams, v: &Array2<f64>, h: &Array2<f64>) -> f64 {
    let spec = &phi.spec;
    let n = spec.order;
    let (t_len, m_dim) = v.dim();
    let j_dim = h.ncols();
    let mut total = 0.0;
    for t in 0..t_len {
        for j in 0..j_dim {
            let mut psi3 = phi.d()[j];
            for m in 0..m_dim {
                psi3 += phi.u2()[[j, m]] * v[[t, m]];
            }
            for s in 0..n {
                for jp in 0..j_dim {
                    psi3 += phi.u1()[[j, s * j_dim + jp]] * win(h, t, s, jp);
                }
                for m in 0..m_dim {
                    psi3 += phi.u3()[[j, s * m_dim + m]] * win(v, t, s, m);
                }
            }
            let p = sigmoid(psi3);
            total += if h[[t, j]] == 1.0 { p.ln() } else { (1.0 - p).ln() };
        }
    }
    total
}
