//! Exhaustive-enumeration oracles for small models.
//!
//! These walk every hidden configuration (all `2^(J*T)` of them), so they
//! are only usable at toy sizes, but they give exact values of the marginal
//! likelihood, the variational bound, and the bound's recognition gradient
//! to validate the Monte Carlo machinery against.

use super::{grad_log_q, log_joint, recognition_log_prob};
use crate::numeric::log_sum_exp;
use crate::params::{GenerativeParams, ParamContainer, RecognitionParams};
use ndarray::Array2;

/// Hard cap on `J * T` for all enumeration oracles.
pub const ENUMERATION_CAP_BITS: usize = 20;

fn check_size(j_dim: usize, t_len: usize) {
    let bits = j_dim * t_len;
    assert!(
        bits <= ENUMERATION_CAP_BITS,
        "enumeration over 2^{bits} hidden configurations exceeds the 2^{ENUMERATION_CAP_BITS} cap"
    );
}

/// Calls `f` with every hidden configuration of a `t_len x j_dim` state
/// array.
fn for_each_config(j_dim: usize, t_len: usize, mut f: impl FnMut(&Array2<f64>)) {
    let bits = j_dim * t_len;
    let mut h = Array2::zeros((t_len, j_dim));
    for code in 0u64..(1u64 << bits) {
        for idx in 0..bits {
            h[[idx / j_dim, idx % j_dim]] = ((code >> idx) & 1) as f64;
        }
        f(&h);
    }
}

/// Exact `log p(V)` by summing the joint over every hidden configuration.
pub fn exact_log_marginal(theta: &GenerativeParams, v: &Array2<f64>) -> f64 {
    let j_dim = theta.spec.dim(1);
    check_size(j_dim, v.nrows());
    let mut logs = Vec::with_capacity(1 << (j_dim * v.nrows()));
    for_each_config(j_dim, v.nrows(), |h| logs.push(log_joint(theta, v, h)));
    log_sum_exp(&logs)
}

/// Exact variational bound `E_q[log p(V, H) - log q(H | V)]`.
pub fn enumerate_bound(theta: &GenerativeParams, phi: &RecognitionParams, v: &Array2<f64>) -> f64 {
    let j_dim = theta.spec.dim(1);
    check_size(j_dim, v.nrows());
    let mut total = 0.0;
    for_each_config(j_dim, v.nrows(), |h| {
        let log_q = recognition_log_prob(phi, v, h);
        total += log_q.exp() * (log_joint(theta, v, h) - log_q);
    });
    total
}

/// Exact gradient of the bound with respect to the recognition parameters:
/// `E_q[(log p - log q) * d log q / d phi]`.
pub fn enumerate_recognition_grad(
    theta: &GenerativeParams,
    phi: &RecognitionParams,
    v: &Array2<f64>,
) -> RecognitionParams {
    let j_dim = theta.spec.dim(1);
    check_size(j_dim, v.nrows());
    let mut total = phi.zeros_like();
    for_each_config(j_dim, v.nrows(), |h| {
        let log_q = recognition_log_prob(phi, v, h);
        let weight = log_q.exp() * (log_joint(theta, v, h) - log_q);
        total.add_scaled(&grad_log_q(phi, v, h), weight);
    });
    total
}
