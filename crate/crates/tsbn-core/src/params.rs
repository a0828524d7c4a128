//! Model specification, parameter containers, initialization, and
//! checkpoint persistence.
//!
//! Parameters are stored per layer in a uniform block layout that covers
//! both the shallow model and deep stacks of any depth. Layer 0 is the
//! visible layer, layer `L` the top hidden layer. Each generative layer
//! holds up to four blocks:
//!
//! - `top_down`:    input from the layer above at the same time step
//! - `self_recur`:  input from this layer's own previous `n` frames
//! - `below_recur`: input front the layer below's previous `n` frames
//! - `bias`
//!
//! For the shallow model this reads: `W1 = layer1.self_recur`,
//! `W3 = layer1.below_recur`, `b = layer1.bias`, `W2 = layer0.top_down`,
//! `W4 = layer0.self_recur`, `c = layer0.bias`. For a two-layer deep model
//! the blocks map to `W1..W7, b1..b3` the same way (see the accessor
//! methods). Recognition layers mirror this with a same-time `from_below`
//! input instead of `top_down`.
//!
//! Order-`n` conditioning widens every recurrent block to accept the
//! concatenation of the last `n` frames of its source layer, most recent
//! first; frames before the sequence start are zero.

use crate::error::{Result, TsbnError};
use crate::numeric::RngStream;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

/// Observation family of the visible layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Likelihood {
    /// Bernoulli pixels in {0, 1}.
    Binary,
    /// Diagonal Gaussian with learned per-unit log standard deviation.
    Real,
    /// Multinomial token counts through a softmax.
    Count,
}

impl Likelihood {
    pub fn name(self) -> &'static str {
        match self {
            Likelihood::Binary => "binary",
            Likelihood::Real => "real",
            Likelihood::Count => "count",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "binary" | "bit" => Ok(Likelihood::Binary),
            "real" => Ok(Likelihood::Real),
            "count" => Ok(Likelihood::Count),
            other => Err(TsbnError::InvalidConfig(format!(
                "unknown likelihood {other:?}; expected binary, real, or count"
            ))),
        }
    }
}

/// Kind of a hidden layer. Middle layers are either all stochastic or all
/// deterministic; the top layer is always stochastic.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Stochastic,
    Deterministic,
}

/// Static description of a model: dimensions, depth, order, and likelihood.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Visible dimension M.
    pub visible_dim: usize,
    /// Hidden layer sizes, bottom to top.
    pub layer_dims: Vec<usize>,
    /// Kind per hidden layer, bottom to top. The top entry must be
    /// stochastic.
    pub layer_kinds: Vec<LayerKind>,
    /// Number of past frames feeding each recurrent block.
    pub order: usize,
    pub likelihood: Likelihood,
}

impl ModelSpec {
    /// A single-hidden-layer model.
    pub fn shallow(visible_dim: usize, hidden_dim: usize, order: usize, likelihood: Likelihood) -> Self {
        ModelSpec {
            visible_dim,
            layer_dims: vec![hidden_dim],
            layer_kinds: vec![LayerKind::Stochastic],
            order,
            likelihood,
        }
    }

    /// A deep model with homogeneous middle layers of the given kind.
    pub fn deep(
        visible_dim: usize,
        layer_dims: Vec<usize>,
        middle_kind: LayerKind,
        order: usize,
        likelihood: Likelihood,
    ) -> Self {
        let depth = layer_dims.len();
        let mut layer_kinds = vec![middle_kind; depth.saturating_sub(1)];
        layer_kinds.push(LayerKind::Stochastic);
        ModelSpec { visible_dim, layer_dims, layer_kinds, order, likelihood }
    }

    pub fn validate(&self) -> Result<()> {
        if self.visible_dim == 0 {
            return Err(TsbnError::InvalidConfig("visible_dim must be positive".into()));
        }
        if self.layer_dims.is_empty() {
            return Err(TsbnError::InvalidConfig("at least one hidden layer is required".into()));
        }
        if self.layer_dims.iter().any(|&d| d == 0) {
            return Err(TsbnError::InvalidConfig("hidden layer dims must be positive".into()));
        }
        if self.layer_kinds.len() != self.layer_dims.len() {
            return Err(TsbnError::InvalidConfig(
                "layer_kinds and layer_dims must have equal length".into(),
            ));
        }
        if *self.layer_kinds.last().unwrap() != LayerKind::Stochastic {
            return Err(TsbnError::InvalidConfig("the top hidden layer must be stochastic".into()));
        }
        let middles = &self.layer_kinds[..self.layer_kinds.len() - 1];
        if middles.windows(2).any(|w| w[0] != w[1]) {
            return Err(TsbnError::InvalidConfig(
                "middle layers must be homogeneous (all stochastic or all deterministic)".into(),
            ));
        }
        if self.order == 0 {
            return Err(TsbnError::InvalidConfig("order must be at least 1".into()));
        }
        Ok(())
    }

    /// Number of hidden layers L.
    pub fn num_layers(&self) -> usize {
        self.layer_dims.len()
    }

    /// Dimension of layer `l` where layer 0 is the visible layer.
    pub fn dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.visible_dim
        } else {
            self.layer_dims[layer - 1]
        }
    }

    pub fn is_shallow(&self) -> bool {
        self.num_layers() == 1
    }

    /// True when this is a deep model whose middle layers are deterministic.
    pub fn det_middles(&self) -> bool {
        self.num_layers() >= 2 && self.layer_kinds[0] == LayerKind::Deterministic
    }

    /// Generative layers carry a `below_recur` block except the visible
    /// layer, and except the top layer when the middles are deterministic
    /// (the top layer of a deterministic stack conditions only on its own
    /// past).
    pub(crate) fn gen_below_recur_present(&self, layer: usize) -> bool {
        layer >= 1 && !(layer == self.num_layers() && self.det_middles())
    }

    /// Same rule for recognition layers: the top layer of a deterministic
    /// stack drops its `below_recur` block.
    pub(crate) fn rec_below_recur_present(&self, layer: usize) -> bool {
        !(layer == self.num_layers() && self.det_middles())
    }
}

/// A read-only view of one parameter block for generic traversal.
pub struct Block<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
    pub is_bias: bool,
}

/// A mutable view of one parameter block.
pub struct BlockMut<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a mut [f64],
    pub is_bias: bool,
}

/// Containers of named f64 blocks: model parameters, gradients, and
/// optimizer state all share this interface so they can be traversed and
/// combined generically.
pub trait ParamContainer: Sized {
    fn blocks(&self) -> Vec<Block<'_>>;
    fn blocks_mut(&mut self) -> Vec<BlockMut<'_>>;
    fn zeros_like(&self) -> Self;

    fn num_params(&self) -> usize {
        self.blocks().iter().map(|b| b.data.len()).sum()
    }

    /// `self += scale * other`, blockwise.
    fn add_scaled(&mut self, other: &Self, scale: f64) {
        let others = other.blocks();
        for (mine, theirs) in self.blocks_mut().into_iter().zip(others.iter()) {
            debug_assert_eq!(mine.name, theirs.name);
            for (x, y) in mine.data.iter_mut().zip(theirs.data.iter()) {
                *x += scale * y;
            }
        }
    }

    fn scale(&mut self, s: f64) {
        for b in self.blocks_mut() {
            for x in b.data.iter_mut() {
                *x *= s;
            }
        }
    }

    fn all_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.data.iter().all(|x| x.is_finite()))
    }
}

fn mat_block<'a>(name: String, m: &'a Array2<f64>) -> Block<'a> {
    Block {
        name,
        shape: vec![m.nrows(), m.ncols()],
        data: m.as_slice().expect("parameter matrices are standard layout"),
        is_bias: false,
    }
}

fn vec_block<'a>(name: String, v: &'a Array1<f64>) -> Block<'a> {
    Block { name, shape: vec![v.len()], data: v.as_slice().unwrap(), is_bias: true }
}

fn mat_block_mut<'a>(name: String, m: &'a mut Array2<f64>) -> BlockMut<'a> {
    let shape = vec![m.nrows(), m.ncols()];
    BlockMut {
        name,
        shape,
        data: m.as_slice_mut().expect("parameter matrices are standard layout"),
        is_bias: false,
    }
}

fn vec_block_mut<'a>(name: String, v: &'a mut Array1<f64>) -> BlockMut<'a> {
    let shape = vec![v.len()];
    BlockMut { name, shape, data: v.as_slice_mut().unwrap(), is_bias: true }
}

/// Generative parameter blocks for one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct GenLayer {
    /// dim(l) x dim(l+1); absent on the top layer.
    pub top_down: Option<Array2<f64>>,
    /// dim(l) x n*dim(l).
    pub self_recur: Array2<f64>,
    /// dim(l) x n*dim(l-1); absent on the visible layer and on the top
    /// layer of a deterministic stack.
    pub below_recur: Option<Array2<f64>>,
    /// dim(l).
    pub bias: Array1<f64>,
}

/// Extra visible-layer blocks parameterizing the Gaussian log standard
/// deviation for the real-valued likelihood.
#[derive(Clone, Debug, PartialEq)]
pub struct VarBlocks {
    /// M x dim(1).
    pub top_down: Array2<f64>,
    /// M x n*M.
    pub self_recur: Array2<f64>,
    /// M.
    pub bias: Array1<f64>,
}

/// All generative parameters (theta) for a model.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerativeParams {
    pub spec: ModelSpec,
    /// Indexed by layer: 0 = visible, .., L = top.
    pub layers: Vec<GenLayer>,
    /// Present iff the likelihood is real-valued.
    pub var: Option<VarBlocks>,
}

impl GenerativeParams {
    pub fn zeros(spec: &ModelSpec) -> Self {
        let n = spec.order;
        let num_layers = spec.num_layers();
        let mut layers = Vec::with_capacity(num_layers + 1);
        for l in 0..=num_layers {
            let rows = spec.dim(l);
            let top_down = (l < num_layers).then(|| Array2::zeros((rows, spec.dim(l + 1))));
            let below_recur = spec
                .gen_below_recur_present(l)
                .then(|| Array2::zeros((rows, n * spec.dim(l - 1))));
            layers.push(GenLayer {
                top_down,
                self_recur: Array2::zeros((rows, n * spec.dim(l))),
                below_recur,
                bias: Array1::zeros(rows),
            });
        }
        let var = (spec.likelihood == Likelihood::Real).then(|| VarBlocks {
            top_down: Array2::zeros((spec.visible_dim, spec.dim(1))),
            self_recur: Array2::zeros((spec.visible_dim, n * spec.visible_dim)),
            bias: Array1::zeros(spec.visible_dim),
        });
        GenerativeParams { spec: spec.clone(), layers, var }
    }

    // Shallow-model views under their conventional names.

    pub fn w1(&self) -> &Array2<f64> {
        debug_assert!(self.spec.is_shallow());
        &self.layers[1].self_recur
    }

    pub fn w2(&self) -> &Array2<f64> {
        debug_assert!(self.spec.is_shallow());
        self.layers[0].top_down.as_ref().unwrap()
    }

    pub fn w3(&self) -> &Array2<f64> {
        debug_assert!(self.spec.is_shallow());
        self.layers[1].below_recur.as_ref().unwrap()
    }

    pub fn w4(&self) -> &Array2<f64> {
        debug_assert!(self.spec.is_shallow());
        &self.layers[0].self_recur
    }

    pub fn b(&self) -> &Array1<f64> {
        debug_assert!(self.spec.is_shallow());
        &self.layers[1].bias
    }

    pub fn c(&self) -> &Array1<f64> {
        debug_assert!(self.spec.is_shallow());
        &self.layers[0].bias
    }
}

impl ParamContainer for GenerativeParams {
    fn blocks(&self) -> Vec<Block<'_>> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            if let Some(td) = &layer.top_down {
                out.push(mat_block(format!("gen.l{l}.td"), td));
            }
            out.push(mat_block(format!("gen.l{l}.sr"), &layer.self_recur));
            if let Some(br) = &layer.below_recur {
                out.push(mat_block(format!("gen.l{l}.br"), br));
            }
            out.push(vec_block(format!("gen.l{l}.bias"), &layer.bias));
        }
        if let Some(var) = &self.var {
            out.push(mat_block("gen.var.td".into(), &var.top_down));
            out.push(mat_block("gen.var.sr".into(), &var.self_recur));
            out.push(vec_block("gen.var.bias".into(), &var.bias));
        }
        out
    }

    fn blocks_mut(&mut self) -> Vec<BlockMut<'_>> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter_mut().enumerate() {
            if let Some(td) = &mut layer.top_down {
                out.push(mat_block_mut(format!("gen.l{l}.td"), td));
            }
            out.push(mat_block_mut(format!("gen.l{l}.sr"), &mut layer.self_recur));
            if let Some(br) = &mut layer.below_recur {
                out.push(mat_block_mut(format!("gen.l{l}.br"), br));
            }
            out.push(vec_block_mut(format!("gen.l{l}.bias"), &mut layer.bias));
        }
        if let Some(var) = &mut self.var {
            out.push(mat_block_mut("gen.var.td".into(), &mut var.top_down));
            out.push(mat_block_mut("gen.var.sr".into(), &mut var.self_recur));
            out.push(vec_block_mut("gen.var.bias".into(), &mut var.bias));
        }
        out
    }

    fn zeros_like(&self) -> Self {
        GenerativeParams::zeros(&self.spec)
    }
}

/// Recognition parameter blocks for one hidden layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RecLayer {
    /// dim(l) x dim(l-1): same-time input from the layer below.
    pub from_below: Array2<f64>,
    /// dim(l) x n*dim(l).
    pub self_recur: Array2<f64>,
    /// dim(l) x n*dim(l-1); absent on the top layer of a deterministic
    /// stack.
    pub below_recur: Option<Array2<f64>>,
    /// dim(l).
    pub bias: Array1<f64>,
}

/// All recognition parameters (phi) for a model.
#[derive(Clone, Debug, PartialEq)]
pub struct RecognitionParams {
    pub spec: ModelSpec,
    /// Indexed by hidden layer minus one: `layers[0]` is layer 1.
    pub layers: Vec<RecLayer>,
}

impl RecognitionParams {
    pub fn zeros(spec: &ModelSpec) -> Self {
        let n = spec.order;
        let mut layers = Vec::with_capacity(spec.num_layers());
        for l in 1..=spec.num_layers() {
            let rows = spec.dim(l);
            let below_recur = spec
                .rec_below_recur_present(l)
                .then(|| Array2::zeros((rows, n * spec.dim(l - 1))));
            layers.push(RecLayer {
                from_below: Array2::zeros((rows, spec.dim(l - 1))),
                self_recur: Array2::zeros((rows, n * spec.dim(l))),
                below_recur,
                bias: Array1::zeros(rows),
            });
        }
        RecognitionParams { spec: spec.clone(), layers }
    }

    pub(crate) fn layer(&self, l: usize) -> &RecLayer {
        &self.layers[l - 1]
    }

    // Shallow-model views under their conventional names.

    pub fn u1(&self) -> &Array2<f64> {
        debug_assert!(self.spec.is_shallow());
        &self.layers[0].self_recur
    }

    pub fn u2(&self) -> &Array2<f64> {
        debug_assert!(self.spec.is_shallow());
        &self.layers[0].from_below
    }

    pub fn u3(&self) -> &Array2<f64> {
        debug_assert!(self.spec.is_shallow());
        self.layers[0].below_recur.as_ref().unwrap()
    }

    pub fn d(&self) -> &Array1<f64> {
        debug_assert!(self.spec.is_shallow());
        &self.layers[0].bias
    }
}

impl ParamContainer for RecognitionParams {
    fn blocks(&self) -> Vec<Block<'_>> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let l = i + 1;
            out.push(mat_block(format!("rec.l{l}.fb"), &layer.from_below));
            out.push(mat_block(format!("rec.l{l}.sr"), &layer.self_recur));
            if let Some(br) = &layer.below_recur {
                out.push(mat_block(format!("rec.l{l}.br"), br));
            }
            out.push(vec_block(format!("rec.l{l}.bias"), &layer.bias));
        }
        out
    }

    fn blocks_mut(&mut self) -> Vec<BlockMut<'_>> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let l = i + 1;
            out.push(mat_block_mut(format!("rec.l{l}.fb"), &mut layer.from_below));
            out.push(mat_block_mut(format!("rec.l{l}.sr"), &mut layer.self_recur));
            if let Some(br) = &mut layer.below_recur {
                out.push(mat_block_mut(format!("rec.l{l}.br"), br));
            }
            out.push(vec_block_mut(format!("rec.l{l}.bias"), &mut layer.bias));
        }
        out
    }

    fn zeros_like(&self) -> Self {
        RecognitionParams::zeros(&self.spec)
    }
}

/// Standard deviation of the weight initializer.
pub const INIT_WEIGHT_STD: f64 = 0.001;

/// Draws fresh parameters: weights i.i.d. normal with standard deviation
/// [`INIT_WEIGHT_STD`], biases exactly zero.
pub fn init_params(spec: &ModelSpec, rng: &mut RngStream) -> Result<(GenerativeParams, RecognitionParams)> {
    spec.validate()?;
    let mut theta = GenerativeParams::zeros(spec);
    let mut phi = RecognitionParams::zeros(spec);
    for container in [theta.blocks_mut(), phi.blocks_mut()] {
        for block in container {
            if block.is_bias {
                continue;
            }
            for x in block.data.iter_mut() {
                *x = INIT_WEIGHT_STD * rng.normal();
            }
        }
    }
    Ok((theta, phi))
}
