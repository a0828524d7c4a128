//! Deterministic middle layers: rectified linear recurrences in place of
//! sampled middles, with gradients accumulated by backpropagation through
//! time.
//!
//! With deterministic middles the only stochasticity is the top layer, so
//! the bound keeps the shallow three-block shape. The middle trajectories
//! feed the visible conditional (generative side) and the top-layer
//! recognition logits (recognition side); the recursion below pushes
//! cotangents backward through both the same-step vertical links and the
//! order-n temporal links. The rectifier derivative at exactly zero is
//! taken as zero.

use super::{all_windows, check_deep, state, visible_stats_deep};
use crate::numeric::sigmoid;
use crate::params::{GenerativeParams, ModelSpec, ParamContainer, RecognitionParams};
use crate::error::{Result, TsbnError};
use crate::visible::VisibleStats;
use ndarray::{s, Array1, Array2, Axis, Zip};

fn require_det(spec: &ModelSpec) -> Result<()> {
    check_deep(spec);
    if !spec.det_middles() {
        return Err(TsbnError::InvalidConfig(
            "deterministic-layer operation on a model without deterministic middles".into(),
        ));
    }
    Ok(())
}

/// The blocks feeding the top layer from the middle layer's past must be
/// absent or identically zero in a deterministic configuration.
fn check_gen_top_block(theta: &GenerativeParams) -> Result<()> {
    let top = theta.spec.num_layers();
    if let Some(br) = &theta.layers[top].below_recur {
        if br.iter().any(|&x| x != 0.0) {
            return Err(TsbnError::NonzeroDeterministicBlock { block: "generative top below_recur (W3)" });
        }
    }
    Ok(())
}

fn check_rec_top_block(phi: &RecognitionParams) -> Result<()> {
    let top = phi.spec.num_layers();
    if let Some(br) = &phi.layer(top).below_recur {
        if br.iter().any(|&x| x != 0.0) {
            return Err(TsbnError::NonzeroDeterministicBlock { block: "recognition top below_recur (U3)" });
        }
    }
    Ok(())
}

/// Generative deterministic trajectories: given the sampled top layer,
/// computes every middle layer top-down, left to right. Returns the middle
/// layers bottom to top (`L - 1` arrays).
pub fn det_forward_gen(
    theta: &GenerativeParams,
    v: &Array2<f64>,
    z: &Array2<f64>,
) -> Result<Vec<Array2<f64>>> {
    let spec = &theta.spec;
    require_det(spec)?;
    check_gen_top_block(theta)?;
    let num_layers = spec.num_layers();
    assert_eq!(z.ncols(), spec.dim(num_layers), "top layer width");
    assert_eq!(z.nrows(), v.nrows(), "top layer length");
    let t_len = v.nrows();
    let n = spec.order;
    let mut middles: Vec<Array2<f64>> =
        (1..num_layers).map(|l| Array2::zeros((t_len, spec.dim(l)))).collect();
    let mut window_buf: Vec<Vec<f64>> = (0..num_layers).map(|l| vec![0.0; n * spec.dim(l)]).collect();
    for t in 0..t_len {
        for l in (1..num_layers).rev() {
            let layer = &theta.layers[l];
            let above_t = if l + 1 == num_layers {
                z.row(t).to_owned()
            } else {
                middles[l].row(t).to_owned()
            };
            {
                let src = state(v, &middles, l);
                super::fill_window(&mut window_buf[l], src, t, n);
            }
            {
                let src = state(v, &middles, l - 1);
                super::fill_window(&mut window_buf[l - 1], src, t, n);
            }
            let mut pre: Array1<f64> = layer.top_down.as_ref().unwrap().dot(&above_t);
            pre += &layer.self_recur.dot(&ndarray::ArrayView1::from(&window_buf[l][..]));
            if let Some(br) = &layer.below_recur {
                pre += &br.dot(&ndarray::ArrayView1::from(&window_buf[l - 1][..]));
            }
            pre += &layer.bias;
            for (k, p) in pre.iter().enumerate() {
                middles[l - 1][[t, k]] = p.max(0.0);
            }
        }
    }
    Ok(middles)
}

/// Recognition deterministic trajectories, computed bottom-up from the
/// observations alone. Returns the middle layers bottom to top.
pub fn det_forward_rec(phi: &RecognitionParams, v: &Array2<f64>) -> Result<Vec<Array2<f64>>> {
    let spec = &phi.spec;
    require_det(spec)?;
    check_rec_top_block(phi)?;
    let num_layers = spec.num_layers();
    let t_len = v.nrows();
    let n = spec.order;
    let mut middles: Vec<Array2<f64>> =
        (1..num_layers).map(|l| Array2::zeros((t_len, spec.dim(l)))).collect();
    let mut window_buf: Vec<Vec<f64>> = (0..num_layers).map(|l| vec![0.0; n * spec.dim(l)]).collect();
    for t in 0..t_len {
        for l in 1..num_layers {
            let layer = phi.layer(l);
            let below_t = state(v, &middles, l - 1).row(t).to_owned();
            {
                let src = state(v, &middles, l);
                super::fill_window(&mut window_buf[l], src, t, n);
            }
            {
                let src = state(v, &middles, l - 1);
                super::fill_window(&mut window_buf[l - 1], src, t, n);
            }
            let mut pre: Array1<f64> = layer.from_below.dot(&below_t);
            pre += &layer.self_recur.dot(&ndarray::ArrayView1::from(&window_buf[l][..]));
            if let Some(br) = &layer.below_recur {
                pre += &br.dot(&ndarray::ArrayView1::from(&window_buf[l - 1][..]));
            }
            pre += &layer.bias;
            for (k, p) in pre.iter().enumerate() {
                middles[l - 1][[t, k]] = p.max(0.0);
            }
        }
    }
    Ok(middles)
}

/// `sum_s slot_s(block)^T . delta[t + s]` accumulated into `g`: the
/// temporal cotangent flowing back through an order-n recurrent block.
fn add_temporal_paths(
    g: &mut Array1<f64>,
    block: &Array2<f64>,
    delta: &Array2<f64>,
    t: usize,
    n: usize,
    src_dim: usize,
) {
    let t_len = delta.nrows();
    for s in 1..=n {
        if t + s >= t_len {
            break;
        }
        let slot = block.slice(s![.., (s - 1) * src_dim..s * src_dim]);
        *g += &slot.t().dot(&delta.row(t + s));
    }
}

/// `d log p(V, z) / d theta` alone; the generative half of
/// [`det_bptt_grads`].
pub fn det_grad_log_joint(
    theta: &GenerativeParams,
    v: &Array2<f64>,
    z: &Array2<f64>,
) -> Result<GenerativeParams> {
    gen_bptt(theta, v, z)
}

/// Gradient of the summed bound terms at fixed top-layer samples:
/// `(d log p / d theta, -d log q / d phi)`, both by backpropagation
/// through time through the deterministic middles.
pub fn det_bptt_grads(
    theta: &GenerativeParams,
    phi: &RecognitionParams,
    v: &Array2<f64>,
    z: &Array2<f64>,
) -> Result<(GenerativeParams, RecognitionParams)> {
    let g_theta = gen_bptt(theta, v, z)?;
    let ones = vec![1.0; v.nrows()];
    let mut g_phi = det_grad_log_q_weighted(phi, v, z, &ones)?;
    g_phi.scale(-1.0);
    Ok((g_theta, g_phi))
}

/// `d log p(V, z) / d theta` with middles unrolled by the generative
/// recurrence.
fn gen_bptt(theta: &GenerativeParams, v: &Array2<f64>, z: &Array2<f64>) -> Result<GenerativeParams> {
    let spec = &theta.spec;
    let num_layers = spec.num_layers();
    let n = spec.order;
    let t_len = v.nrows();
    let mut hidden = det_forward_gen(theta, v, z)?;
    hidden.push(z.clone());
    let windows = all_windows(spec, v, &hidden);

    // top-layer residual (prior chain over z)
    let top = &theta.layers[num_layers];
    let mut psi_top = windows[num_layers].dot(&top.self_recur.t());
    psi_top += &top.bias;
    let chi_top = Zip::from(z).and(&psi_top).map_collect(|&x, &p| x - sigmoid(p));

    let vis = visible_stats_deep(theta, v, &hidden, &windows);
    let chi_vis = vis.mean_residual();
    let chi5 = match &vis {
        VisibleStats::Real { chi5, .. } => Some(chi5),
        _ => None,
    };

    // backward sweep: delta[l - 1] holds the preactivation cotangent of
    // middle layer l
    let mut delta: Vec<Array2<f64>> =
        (1..num_layers).map(|l| Array2::zeros((t_len, spec.dim(l)))).collect();
    for t in (0..t_len).rev() {
        for l in 1..num_layers {
            let mut g: Array1<f64> = if l == 1 {
                let mut g = theta.layers[0].top_down.as_ref().unwrap().t().dot(&chi_vis.row(t));
                if let Some(chi5) = chi5 {
                    g += &theta.var.as_ref().unwrap().top_down.t().dot(&chi5.row(t));
                }
                g
            } else {
                theta.layers[l - 1].top_down.as_ref().unwrap().t().dot(&delta[l - 2].row(t))
            };
            add_temporal_paths(&mut g, &theta.layers[l].self_recur, &delta[l - 1], t, n, spec.dim(l));
            if l + 1 < num_layers {
                if let Some(br) = &theta.layers[l + 1].below_recur {
                    add_temporal_paths(&mut g, br, &delta[l], t, n, spec.dim(l));
                }
            }
            for (k, gk) in g.iter().enumerate() {
                delta[l - 1][[t, k]] = if hidden[l - 1][[t, k]] > 0.0 { *gk } else { 0.0 };
            }
        }
    }

    let mut grad = theta.zeros_like();
    grad.layers[num_layers].self_recur = chi_top.t().dot(&windows[num_layers]);
    grad.layers[num_layers].bias = chi_top.sum_axis(Axis(0));
    for l in 1..num_layers {
        let d = &delta[l - 1];
        let g_layer = &mut grad.layers[l];
        *g_layer.top_down.as_mut().unwrap() = d.t().dot(state(v, &hidden, l + 1));
        g_layer.self_recur = d.t().dot(&windows[l]);
        if g_layer.below_recur.is_some() {
            *g_layer.below_recur.as_mut().unwrap() = d.t().dot(&windows[l - 1]);
        }
        g_layer.bias = d.sum_axis(Axis(0));
    }
    *grad.layers[0].top_down.as_mut().unwrap() = chi_vis.t().dot(&hidden[0]);
    grad.layers[0].self_recur = chi_vis.t().dot(&windows[0]);
    grad.layers[0].bias = chi_vis.sum_axis(Axis(0));
    if let Some(chi5) = chi5 {
        let var = grad.var.as_mut().unwrap();
        var.top_down = chi5.t().dot(&hidden[0]);
        var.self_recur = chi5.t().dot(&windows[0]);
        var.bias = chi5.sum_axis(Axis(0));
    }
    Ok(grad)
}

/// Weighted recognition score `sum_t w_t * d log q(z_t | .) / d phi` with
/// the cotangents of each step's score pushed back through the
/// deterministic recognition trajectories.
pub fn det_grad_log_q_weighted(
    phi: &RecognitionParams,
    v: &Array2<f64>,
    z: &Array2<f64>,
    weights: &[f64],
) -> Result<RecognitionParams> {
    let spec = &phi.spec;
    require_det(spec)?;
    check_rec_top_block(phi)?;
    assert_eq!(weights.len(), v.nrows(), "one weight per time step");
    let num_layers = spec.num_layers();
    let n = spec.order;
    let t_len = v.nrows();
    let mut hidden = det_forward_rec(phi, v)?;
    hidden.push(z.clone());
    let windows = all_windows(spec, v, &hidden);

    let top = phi.layer(num_layers);
    let mut psi_top = state(v, &hidden, num_layers - 1).dot(&top.from_below.t());
    psi_top += &windows[num_layers].dot(&top.self_recur.t());
    psi_top += &top.bias;
    let mut rho = Zip::from(z).and(&psi_top).map_collect(|&x, &p| x - sigmoid(p));
    for (t, mut row) in rho.rows_mut().into_iter().enumerate() {
        row *= weights[t];
    }

    // backward sweep top-down within each step: the upper layer's
    // same-step cotangent must exist before the layer below consumes it
    let mut delta: Vec<Array2<f64>> =
        (1..num_layers).map(|l| Array2::zeros((t_len, spec.dim(l)))).collect();
    for t in (0..t_len).rev() {
        for l in (1..num_layers).rev() {
            let mut g: Array1<f64> = if l + 1 == num_layers {
                top.from_below.t().dot(&rho.row(t))
            } else {
                phi.layer(l + 1).from_below.t().dot(&delta[l].row(t))
            };
            add_temporal_paths(&mut g, &phi.layer(l).self_recur, &delta[l - 1], t, n, spec.dim(l));
            if l + 1 < num_layers {
                if let Some(br) = &phi.layer(l + 1).below_recur {
                    add_temporal_paths(&mut g, br, &delta[l], t, n, spec.dim(l));
                }
            }
            for (k, gk) in g.iter().enumerate() {
                delta[l - 1][[t, k]] = if hidden[l - 1][[t, k]] > 0.0 { *gk } else { 0.0 };
            }
        }
    }

    let mut grad = phi.zeros_like();
    {
        let g_top = &mut grad.layers[num_layers - 1];
        g_top.from_below = rho.t().dot(state(v, &hidden, num_layers - 1));
        g_top.self_recur = rho.t().dot(&windows[num_layers]);
        g_top.bias = rho.sum_axis(Axis(0));
    }
    for l in 1..num_layers {
        let d = &delta[l - 1];
        let g_layer = &mut grad.layers[l - 1];
        g_layer.from_below = d.t().dot(state(v, &hidden, l - 1));
        g_layer.self_recur = d.t().dot(&windows[l]);
        if g_layer.below_recur.is_some() {
            *g_layer.below_recur.as_mut().unwrap() = d.t().dot(&windows[l - 1]);
        }
        g_layer.bias = d.sum_axis(Axis(0));
    }
    Ok(grad)
}
