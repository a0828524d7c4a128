//! Compact model-shape grammar for `--spec`.
//!
//! Comma-separated tokens, any order:
//!
//! - `J=<dims>`: hidden layer sizes bottom to top, `-`-separated
//!   (`J=100`, `J=100-100`); required
//! - `order=<n>`: window order (default 1)
//! - `binary` / `real` / `count`: likelihood; must match the data dtype
//!   (default: inferred from the data)
//! - `kind=stochastic|deterministic`: middle-layer kind for deep models
//!   (default stochastic)
//! - `M=<int>`: optional assertion on the visible dimension
//!
//! Example: `J=100-100,order=2,kind=deterministic`.

use anyhow::{bail, Context, Result};
use tsbn_core::data::SequenceBatch;
use tsbn_core::params::{LayerKind, Likelihood, ModelSpec};

pub fn parse_model_spec(text: &str, data: &SequenceBatch) -> Result<ModelSpec> {
    let mut dims: Option<Vec<usize>> = None;
    let mut order = 1usize;
    let mut kind = LayerKind::Stochastic;
    let mut likelihood: Option<Likelihood> = None;
    let mut visible_assert: Option<usize> = None;
    for token in text.split(',') {
        let token = token.trim();
        if token.is_empty() {
            continue;
        }
        if let Some(value) = token.strip_prefix("J=") {
            let parsed: Result<Vec<usize>> = value
                .split('-')
                .map(|d| d.parse::<usize>().with_context(|| format!("bad layer size {d:?}")))
                .collect();
            dims = Some(parsed?);
        } else if let Some(value) = token.strip_prefix("order=") {
            order = value.parse().with_context(|| format!("bad order {value:?}"))?;
        } else if let Some(value) = token.strip_prefix("kind=") {
            kind = match value {
                "stochastic" => LayerKind::Stochastic,
                "deterministic" => LayerKind::Deterministic,
                other => bail!("unknown layer kind {other:?}"),
            };
        } else if let Some(value) = token.strip_prefix("M=") {
            visible_assert = Some(value.parse().with_context(|| format!("bad M {value:?}"))?);
        } else if let Ok(l) = Likelihood::parse(token) {
            likelihood = Some(l);
        } else {
            bail!("unknown spec token {token:?}");
        }
    }
    let dims = dims.context("spec must set J=<dims>")?;
    if let Some(m) = visible_assert {
        if m != data.dim {
            bail!("spec says M={m} but the data has {} columns", data.dim);
        }
    }
    if let Some(l) = likelihood {
        if l != data.dtype {
            bail!(
                "spec says {} but the data dtype is {}",
                l.name(),
                data.dtype.name()
            );
        }
    }
    let spec = ModelSpec::deep(data.dim, dims, kind, order, data.dtype);
    spec.validate()?;
    Ok(spec)
}
