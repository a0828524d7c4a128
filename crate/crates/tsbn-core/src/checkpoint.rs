//! Binary checkpoint persistence for model and trainer state.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        10 bytes "TSBN-CKPT1"
//! visible_dim  u64
//! depth        u64          number of hidden layers L
//! layer_dims   L x u64
//! layer_kinds  L x u8       0 stochastic, 1 deterministic
//! order        u64
//! likelihood   u8           0 binary, 1 real, 2 count
//! has_trainer  u8           0 or 1
//! tensor_count u64
//! per tensor:
//!   name_len   u16, then name bytes (utf-8)
//!   dtype      u8           0 f64, 1 u64
//!   rank       u8
//!   dims       rank x u64
//!   offset     u64          byte offset into the payload
//! payload      raw little-endian values, row-major
//! ```
//!
//! Model parameters are stored under their block names (`gen.*`, `rec.*`),
//! trainer state under `lam.*`, `ms.*`, `mom.*`, and `train.*`. Loading
//! reproduces every tensor bit-exactly and rejects files whose table
//! disagrees with the declared model shape.

use crate::error::{Result, TsbnError};
use crate::params::{
    GenerativeParams, LayerKind, Likelihood, ModelSpec, ParamContainer, RecognitionParams,
};
use crate::trainer::{BaselineParams, TrainHyper, TrainerState};
use std::collections::HashMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 10] = b"TSBN-CKPT1";

/// A loaded checkpoint.
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub theta: GenerativeParams,
    pub phi: RecognitionParams,
    pub trainer: Option<(BaselineParams, TrainerState)>,
}

enum Dtype {
    F64,
    U64,
}

struct TensorEntry {
    dtype: u8,
    dims: Vec<usize>,
    offset: u64,
}

fn corrupt(reason: impl Into<String>) -> TsbnError {
    TsbnError::corrupt("checkpoint", reason)
}

/// Saves parameters and optional trainer state.
pub fn save_checkpoint(
    path: impl AsRef<Path>,
    theta: &GenerativeParams,
    phi: &RecognitionParams,
    trainer: Option<(&BaselineParams, &TrainerState)>,
) -> Result<()> {
    assert_eq!(theta.spec, phi.spec, "generative and recognition specs must agree");
    let spec = &theta.spec;

    // (name, dtype, dims, bytes)
    let mut tensors: Vec<(String, Dtype, Vec<usize>, Vec<u8>)> = Vec::new();
    fn push_blocks(
        tensors: &mut Vec<(String, Dtype, Vec<usize>, Vec<u8>)>,
        prefix: &str,
        blocks: Vec<crate::params::Block<'_>>,
    ) {
        for b in blocks {
            let mut bytes = Vec::with_capacity(b.data.len() * 8);
            for x in b.data {
                bytes.extend_from_slice(&x.to_le_bytes());
            }
            tensors.push((format!("{prefix}{}", b.name), Dtype::F64, b.shape.clone(), bytes));
        }
    }
    push_blocks(&mut tensors, "", theta.blocks());
    push_blocks(&mut tensors, "", phi.blocks());
    if let Some((lambda, state)) = trainer {
        push_blocks(&mut tensors, "", lambda.blocks());
        push_blocks(&mut tensors, "ms.", state.ms_theta.blocks());
        push_blocks(&mut tensors, "ms.", state.ms_phi.blocks());
        push_blocks(&mut tensors, "ms.", state.ms_lambda.blocks());
        push_blocks(&mut tensors, "mom.", state.mom_theta.blocks());
        push_blocks(&mut tensors, "mom.", state.mom_phi.blocks());
        push_blocks(&mut tensors, "mom.", state.mom_lambda.blocks());
        let scalars = [("train.c", state.c), ("train.v", state.v)];
        for (name, value) in scalars {
            tensors.push((name.into(), Dtype::F64, vec![1], value.to_le_bytes().to_vec()));
        }
        tensors.push((
            "train.iter".into(),
            Dtype::U64,
            vec![1],
            state.iteration.to_le_bytes().to_vec(),
        ));
        let h = state.hyper;
        let hyper = [
            h.alpha,
            h.learning_rate,
            h.ms_decay,
            h.momentum,
            h.weight_decay,
            h.max_iterations as f64,
            h.epsilon,
        ];
        let mut bytes = Vec::with_capacity(hyper.len() * 8);
        for x in hyper {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        tensors.push(("train.hyper".into(), Dtype::F64, vec![hyper.len()], bytes));
    }

    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(spec.visible_dim as u64).to_le_bytes())?;
    w.write_all(&(spec.num_layers() as u64).to_le_bytes())?;
    for &d in &spec.layer_dims {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for &k in &spec.layer_kinds {
        w.write_all(&[match k {
            LayerKind::Stochastic => 0u8,
            LayerKind::Deterministic => 1,
        }])?;
    }
    w.write_all(&(spec.order as u64).to_le_bytes())?;
    w.write_all(&[match spec.likelihood {
        Likelihood::Binary => 0u8,
        Likelihood::Real => 1,
        Likelihood::Count => 2,
    }])?;
    w.write_all(&[trainer.is_some() as u8])?;
    w.write_all(&(tensors.len() as u64).to_le_bytes())?;
    let mut offset = 0u64;
    for (name, dtype, dims, bytes) in &tensors {
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[match dtype {
            Dtype::F64 => 0u8,
            Dtype::U64 => 1,
        }])?;
        w.write_all(&[dims.len() as u8])?;
        for &d in dims {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        w.write_all(&offset.to_le_bytes())?;
        offset += bytes.len() as u64;
    }
    for (_, _, _, bytes) in &tensors {
        w.write_all(bytes)?;
    }
    w.flush()?;
    Ok(())
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|_| corrupt("unexpected end of file"))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    read_exact(r, &mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_u8(r: &mut impl Read) -> Result<u8> {
    let mut buf = [0u8; 1];
    read_exact(r, &mut buf)?;
    Ok(buf[0])
}

struct Table {
    entries: HashMap<String, TensorEntry>,
    payload: Vec<u8>,
}

impl Table {
    /// Pulls a named f64 tensor, checking dims against the expectation.
    fn take_f64(&mut self, name: &str, expect_dims: &[usize]) -> Result<Vec<f64>> {
        let entry = self
            .entries
            .remove(name)
            .ok_or_else(|| corrupt(format!("missing tensor {name:?}")))?;
        if entry.dtype != 0 {
            return Err(corrupt(format!("tensor {name:?} has dtype {}, expected f64", entry.dtype)));
        }
        if entry.dims != expect_dims {
            return Err(TsbnError::ShapeMismatch(format!(
                "tensor {name:?} stored as {:?} but the model shape requires {:?}",
                entry.dims, expect_dims
            )));
        }
        let count: usize = entry.dims.iter().product();
        let start = entry.offset as usize;
        let end = start
            .checked_add(count * 8)
            .ok_or_else(|| corrupt(format!("tensor {name:?} offset overflows")))?;
        if end > self.payload.len() {
            return Err(corrupt(format!("tensor {name:?} extends past the payload")));
        }
        Ok(self.payload[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn take_u64_scalar(&mut self, name: &str) -> Result<u64> {
        let entry = self
            .entries
            .remove(name)
            .ok_or_else(|| corrupt(format!("missing tensor {name:?}")))?;
        if entry.dtype != 1 || entry.dims != [1] {
            return Err(corrupt(format!("tensor {name:?} is not a u64 scalar")));
        }
        let start = entry.offset as usize;
        if start + 8 > self.payload.len() {
            return Err(corrupt(format!("tensor {name:?} extends past the payload")));
        }
        Ok(u64::from_le_bytes(self.payload[start..start + 8].try_into().unwrap()))
    }

    fn fill_container<P: ParamContainer>(&mut self, prefix: &str, container: &mut P) -> Result<()> {
        for b in container.blocks_mut() {
            let data = self.take_f64(&format!("{prefix}{}", b.name), &b.shape)?;
            b.data.copy_from_slice(&data);
        }
        Ok(())
    }
}

/// Loads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 10];
    read_exact(&mut r, &mut magic)?;
    if &magic != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let visible_dim = read_u64(&mut r)? as usize;
    let depth = read_u64(&mut r)? as usize;
    if depth == 0 || depth > 64 {
        return Err(corrupt(format!("implausible depth {depth}")));
    }
    let mut layer_dims = Vec::with_capacity(depth);
    for _ in 0..depth {
        layer_dims.push(read_u64(&mut r)? as usize);
    }
    let mut layer_kinds = Vec::with_capacity(depth);
    for _ in 0..depth {
        layer_kinds.push(match read_u8(&mut r)? {
            0 => LayerKind::Stochastic,
            1 => LayerKind::Deterministic,
            other => return Err(corrupt(format!("unknown layer kind code {other}"))),
        });
    }
    let order = read_u64(&mut r)? as usize;
    let likelihood = match read_u8(&mut r)? {
        0 => Likelihood::Binary,
        1 => Likelihood::Real,
        2 => Likelihood::Count,
        other => return Err(corrupt(format!("unknown likelihood code {other}"))),
    };
    let has_trainer = match read_u8(&mut r)? {
        0 => false,
        1 => true,
        other => return Err(corrupt(format!("bad has_trainer flag {other}"))),
    };
    let spec = ModelSpec { visible_dim, layer_dims, layer_kinds, order, likelihood };
    spec.validate()
        .map_err(|e| corrupt(format!("stored model shape is invalid: {e}")))?;

    let tensor_count = read_u64(&mut r)? as usize;
    if tensor_count > 1_000_000 {
        return Err(corrupt(format!("implausible tensor count {tensor_count}")));
    }
    let mut entries = HashMap::with_capacity(tensor_count);
    for _ in 0..tensor_count {
        let mut len_buf = [0u8; 2];
        read_exact(&mut r, &mut len_buf)?;
        let name_len = u16::from_le_bytes(len_buf) as usize;
        let mut name_bytes = vec![0u8; name_len];
        read_exact(&mut r, &mut name_bytes)?;
        let name =
            String::from_utf8(name_bytes).map_err(|_| corrupt("tensor name is not utf-8"))?;
        let dtype = read_u8(&mut r)?;
        let rank = read_u8(&mut r)? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(read_u64(&mut r)? as usize);
        }
        let offset = read_u64(&mut r)?;
        if entries.insert(name, TensorEntry { dtype, dims, offset }).is_some() {
            return Err(corrupt("duplicate tensor name"));
        }
    }
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    let mut table = Table { entries, payload };

    let mut theta = GenerativeParams::zeros(&spec);
    let mut phi = RecognitionParams::zeros(&spec);
    table.fill_container("", &mut theta)?;
    table.fill_container("", &mut phi)?;

    let trainer = if has_trainer {
        let mut lambda = BaselineParams::zeros(spec.visible_dim);
        table.fill_container("", &mut lambda)?;
        let hyper_raw = table.take_f64("train.hyper", &[7])?;
        let hyper = TrainHyper {
            alpha: hyper_raw[0],
            learning_rate: hyper_raw[1],
            ms_decay: hyper_raw[2],
            momentum: hyper_raw[3],
            weight_decay: hyper_raw[4],
            max_iterations: hyper_raw[5] as u64,
            epsilon: hyper_raw[6],
        };
        let mut state = TrainerState::new(&spec, hyper);
        state.c = table.take_f64("train.c", &[1])?[0];
        state.v = table.take_f64("train.v", &[1])?[0];
        state.iteration = table.take_u64_scalar("train.iter")?;
        table.fill_container("ms.", &mut state.ms_theta)?;
        table.fill_container("ms.", &mut state.ms_phi)?;
        table.fill_container("ms.", &mut state.ms_lambda)?;
        table.fill_container("mom.", &mut state.mom_theta)?;
        table.fill_container("mom.", &mut state.mom_phi)?;
        table.fill_container("mom.", &mut state.mom_lambda)?;
        Some((lambda, state))
    } else {
        None
    };

    if let Some(stray) = table.entries.keys().next() {
        return Err(corrupt(format!("unexpected tensor {stray:?}")));
    }
    Ok(Checkpoint { spec, theta, phi, trainer })
}
