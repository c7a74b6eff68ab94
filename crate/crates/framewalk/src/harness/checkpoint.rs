//! Binary checkpoint format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "VBCK" | version u32 | config block | seed u64 | step u64
//! | param count u32 | per param: name len u32, name bytes,
//!   ndim u32, dims u32 .. , f32 data
//! | optimizer flag u8 | (step_count u64, per-param m then v as f32) if 1
//! ```
//!
//! The config block is: patch_size, embed_dim, layers, heads, frame_count,
//! image_size, channels, mode (0 regress / 1 flow), mlp_ratio as u32, then
//! condition_dropout_prob as f64. Round trips are bit-identical and the
//! reader validates magic, version, and every shape against the embedded
//! config before accepting the payload.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{param_layout, ModelConfig, ModelMode, ModelParams};
use crate::optim::ParamSet;
use crate::tensor::{Element, Tensor};

pub const MAGIC: &[u8; 4] = b"VBCK";
pub const VERSION: u32 = 1;

/// Checkpoint payload: model parameters plus provenance and, optionally, the
/// optimizer moment accumulators.
#[derive(Debug)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParamSet<f32>,
    pub seed: u64,
    pub step: u64,
    pub optimizer: Option<OptimizerSnapshot>,
}

#[derive(Debug)]
pub struct OptimizerSnapshot {
    pub step_count: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl Checkpoint {
    pub fn model<E: Element>(&self) -> ModelParams<E> {
        ModelParams { config: self.config, params: self.params.cast() }
    }
}

/// Serialize a model (values narrowed to f32) with provenance.
pub fn write_checkpoint<E: Element>(
    model: &ModelParams<E>,
    seed: u64,
    step: u64,
    optimizer: Option<&OptimizerSnapshot>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let c = &model.config;
    for v in [
        c.patch_size,
        c.embed_dim,
        c.layers,
        c.heads,
        c.frame_count,
        c.image_size,
        c.channels,
        match c.mode {
            ModelMode::Regress => 0usize,
            ModelMode::Flow => 1,
        },
        c.mlp_ratio,
    ] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    buf.extend_from_slice(&c.condition_dropout_prob.to_le_bytes());
    buf.extend_from_slice(&seed.to_le_bytes());
    buf.extend_from_slice(&step.to_le_bytes());
    buf.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for p in model.params.iter() {
        buf.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(p.name.as_bytes());
        buf.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
        for &d in p.value.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in p.value.data() {
            buf.extend_from_slice(&(v.to_f64().unwrap() as f32).to_le_bytes());
        }
    }
    match optimizer {
        None => buf.push(0u8),
        Some(snap) => {
            buf.push(1u8);
            buf.extend_from_slice(&snap.step_count.to_le_bytes());
            for series in [&snap.m, &snap.v] {
                for per_param in series {
                    for &v in per_param {
                        buf.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path.display().to_string(), e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    context: String,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated payload while reading {}", self.context))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(4 * n)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

/// Read and validate a checkpoint.
pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = Reader { bytes: &bytes, pos: 0, context: "header".into() };

    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint(format!("{}: bad magic", path.display())));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let fields: Vec<u32> = (0..9).map(|_| r.u32()).collect::<Result<_>>()?;
    let mode = match fields[7] {
        0 => ModelMode::Regress,
        1 => ModelMode::Flow,
        other => return Err(Error::Checkpoint(format!("unknown mode tag {other}"))),
    };
    let config = ModelConfig {
        patch_size: fields[0] as usize,
        embed_dim: fields[1] as usize,
        layers: fields[2] as usize,
        heads: fields[3] as usize,
        frame_count: fields[4] as usize,
        image_size: fields[5] as usize,
        channels: fields[6] as usize,
        mode,
        condition_dropout_prob: r.f64()?,
        mlp_ratio: fields[8] as usize,
    };
    config.validate().map_err(|e| Error::Checkpoint(format!("embedded config invalid: {e}")))?;
    let seed = r.u64()?;
    let step = r.u64()?;

    let layout = param_layout(&config);
    let count = r.u32()? as usize;
    if count != layout.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {count} parameters, config implies {}",
            layout.len()
        )));
    }
    let mut params = ParamSet::new();
    for (name, shape, _) in &layout {
        r.context = format!("tensor `{name}`");
        let name_len = r.u32()? as usize;
        let got_name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("non-utf8 parameter name".into()))?;
        if got_name != *name {
            return Err(Error::Checkpoint(format!(
                "parameter order mismatch: expected `{name}`, found `{got_name}`"
            )));
        }
        let ndim = r.u32()? as usize;
        let dims: Vec<usize> = (0..ndim).map(|_| r.u32().map(|v| v as usize)).collect::<Result<_>>()?;
        if dims != *shape {
            return Err(Error::Checkpoint(format!(
                "shape mismatch for `{name}`: file says {dims:?}, config implies {shape:?}"
            )));
        }
        let numel: usize = dims.iter().product();
        let data = r.f32s(numel)?;
        params.push(
            name.clone(),
            Tensor::new(dims, data)
                .map_err(|_| Error::Checkpoint(format!("non-finite data in `{name}`")))?,
        );
    }

    r.context = "optimizer state".into();
    let optimizer = match r.take(1)?[0] {
        0 => None,
        1 => {
            let step_count = r.u64()?;
            let mut m = Vec::with_capacity(layout.len());
            let mut v = Vec::with_capacity(layout.len());
            for series in [&mut m, &mut v] {
                for (name, shape, _) in &layout {
                    r.context = format!("optimizer moments for `{name}`");
                    series.push(r.f32s(shape.iter().product())?);
                }
            }
            Some(OptimizerSnapshot { step_count, m, v })
        }
        other => return Err(Error::Checkpoint(format!("bad optimizer flag {other}"))),
    };
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Checkpoint { config, params, seed, step, optimizer })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_model;

    fn test_config() -> ModelConfig {
        ModelConfig {
            patch_size: 4,
            embed_dim: 16,
            layers: 1,
            heads: 2,
            frame_count: 3,
            image_size: 8,
            channels: 3,
            mode: ModelMode::Flow,
            condition_dropout_prob: 0.1,
            mlp_ratio: 2,
        }
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let model = init_model::<f32>(test_config(), 99).unwrap();
        let path = dir.path().join("m.ckpt");
        write_checkpoint(&model, 99, 1234, None, &path).unwrap();
        let back = read_checkpoint(&path).unwrap();
        assert_eq!(back.config, model.config);
        assert_eq!(back.seed, 99);
        assert_eq!(back.step, 1234);
        for (a, b) in back.params.iter().zip(model.params.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value.shape(), b.value.shape());
            for (x, y) in a.value.data().iter().zip(b.value.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        // writing the reread model reproduces the file byte for byte
        let path2 = dir.path().join("m2.ckpt");
        write_checkpoint(&back.model::<f32>(), back.seed, back.step, None, &path2).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn optimizer_state_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let model = init_model::<f32>(test_config(), 5).unwrap();
        let snap = OptimizerSnapshot {
            step_count: 77,
            m: model.params.iter().map(|p| vec![0.25f32; p.value.numel()]).collect(),
            v: model.params.iter().map(|p| vec![0.5f32; p.value.numel()]).collect(),
        };
        let path = dir.path().join("o.ckpt");
        write_checkpoint(&model, 5, 77, Some(&snap), &path).unwrap();
        let back = read_checkpoint(&path).unwrap();
        let got = back.optimizer.unwrap();
        assert_eq!(got.step_count, 77);
        assert_eq!(got.m[0][0], 0.25);
        assert_eq!(got.v[0][0], 0.5);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let model = init_model::<f32>(test_config(), 1).unwrap();
        let path = dir.path().join("m.ckpt");
        write_checkpoint(&model, 1, 0, None, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[0..4].copy_from_slice(b"XXXX");
        fs::write(&path, bytes).unwrap();
        let err = read_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("bad magic"));
    }

    #[test]
    fn unsupported_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let model = init_model::<f32>(test_config(), 1).unwrap();
        let path = dir.path().join("m.ckpt");
        write_checkpoint(&model, 1, 0, None, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[4..8].copy_from_slice(&9u32.to_le_bytes());
        fs::write(&path, bytes).unwrap();
        let err = read_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("version"));
    }

    #[test]
    fn truncation_names_the_tensor() {
        let dir = tempfile::tempdir().unwrap();
        let model = init_model::<f32>(test_config(), 1).unwrap();
        let path = dir.path().join("m.ckpt");
        write_checkpoint(&model, 1, 0, None, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        let err = read_checkpoint(&path).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");
        assert!(err.contains('`'), "should name a tensor: {err}");
    }
}
