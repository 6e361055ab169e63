use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::sshnet::{ModelConfig, SshNet};

const MAGIC: &[u8; 8] = b"SSHNETCK";
pub const CHECKPOINT_SCHEMA: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

/// JSON header preceding the tensor payload.
///
/// The payload is every parameter, then every first moment, then every
/// second moment, each as little-endian `f32` in header order. Batches and
/// crops are keyed by `(seed, step)`, so `step` is the only RNG cursor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub schema: u32,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub epoch: u64,
    pub step: u64,
    pub adam_steps: u64,
    pub best_metric: Option<f64>,
    pub tensors: Vec<TensorEntry>,
}

pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Vec<Vec<f32>>,
    pub first_moments: Vec<Vec<f32>>,
    pub second_moments: Vec<Vec<f32>>,
}

fn to_f32(t: &Tensor) -> Result<Vec<f32>> {
    Ok(t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?)
}

pub struct TrainingSnapshot<'a> {
    pub model: &'a SshNet,
    pub adam: &'a Adam,
    pub train: &'a TrainConfig,
    pub epoch: u64,
    pub step: u64,
    pub best_metric: Option<f64>,
}

/// Writes the snapshot through a temporary file and renames it into place.
pub fn save_checkpoint(snap: &TrainingSnapshot<'_>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let vars = snap.model.params().vars();
    let header = CheckpointHeader {
        schema: CHECKPOINT_SCHEMA,
        model: snap.model.config().clone(),
        train: snap.train.clone(),
        epoch: snap.epoch,
        step: snap.step,
        adam_steps: snap.adam.steps_taken(),
        best_metric: snap.best_metric,
        tensors: vars
            .iter()
            .map(|(n, v)| TensorEntry { name: n.clone(), shape: v.dims().to_vec() })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(json.len() + 16 + 12 * snap.model.count_params());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_SCHEMA.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    let (m, v) = snap.adam.moments();
    let tensors = vars.iter().map(|(_, v)| v.as_tensor()).chain(m.iter()).chain(v.iter());
    for t in tensors {
        for x in to_f32(t)? {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&buf).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::Checkpoint(format!("{}: {m}", path.display()));
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let schema = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if schema != CHECKPOINT_SCHEMA {
        return Err(bad(&format!("schema {schema}, expected {CHECKPOINT_SCHEMA}")));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(20..20 + len).ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(body)?;
    let mut payload = &bytes[20 + len..];
    let mut take = |entry: &TensorEntry| -> Result<Vec<f32>> {
        let n: usize = entry.shape.iter().product();
        if payload.len() < 4 * n {
            return Err(bad(&format!("payload truncated at {}", entry.name)));
        }
        let (head, rest) = payload.split_at(4 * n);
        payload = rest;
        Ok(head.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    };
    let mut groups = Vec::with_capacity(3);
    for _ in 0..3 {
        groups.push(header.tensors.iter().map(&mut take).collect::<Result<Vec<_>>>()?);
    }
    if !payload.is_empty() {
        return Err(bad(&format!("{} trailing bytes", payload.len())));
    }
    let second_moments = groups.pop().expect("three groups");
    let first_moments = groups.pop().expect("three groups");
    let params = groups.pop().expect("three groups");
    Ok(Checkpoint { header, params, first_moments, second_moments })
}

impl Checkpoint {
    /// Checks the stored tensor table against `model`, naming the first mismatch.
    pub fn validate_against(&self, model: &SshNet) -> Result<()> {
        let vars = model.params().vars();
        for (i, (name, var)) in vars.iter().enumerate() {
            let Some(entry) = self.header.tensors.get(i) else {
                return Err(Error::Checkpoint(format!("checkpoint lacks tensor {name}")));
            };
            if entry.name != *name {
                return Err(Error::Checkpoint(format!(
                    "tensor {i} is {} in the checkpoint but {name} in the model",
                    entry.name
                )));
            }
            if entry.shape != var.dims() {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for {name}: checkpoint {:?}, model {:?}",
                    entry.shape,
                    var.dims()
                )));
            }
        }
        if self.header.tensors.len() != vars.len() {
            let extra = &self.header.tensors[vars.len()];
            return Err(Error::Checkpoint(format!("checkpoint has extra tensor {}", extra.name)));
        }
        Ok(())
    }

    /// Copies parameters into `model` and, if given, moments into `adam`.
    pub fn apply(&self, model: &SshNet, adam: Option<&mut Adam>) -> Result<()> {
        self.validate_against(model)?;
        let device = model.device();
        let dtype = model.dtype();
        let tensor = |data: &Vec<f32>, entry: &TensorEntry| -> Result<Tensor> {
            Ok(Tensor::from_slice(data, entry.shape.as_slice(), device)?.to_dtype(dtype)?)
        };
        for (((_, var), data), entry) in model.params().vars().iter().zip(&self.params).zip(&self.header.tensors) {
            var.set(&tensor(data, entry)?)?;
        }
        if let Some(adam) = adam {
            let m = self.first_moments.iter().zip(&self.header.tensors).map(|(d, e)| tensor(d, e)).collect::<Result<_>>()?;
            let v = self.second_moments.iter().zip(&self.header.tensors).map(|(d, e)| tensor(d, e)).collect::<Result<_>>()?;
            adam.restore(self.header.adam_steps, m, v)?;
        }
        Ok(())
    }
}

/// Builds the model described by a checkpoint and loads its parameters.
pub fn load_model(path: impl AsRef<Path>, device: &Device, dtype: DType) -> Result<(SshNet, Checkpoint)> {
    let ck = read_checkpoint(path)?;
    let model = SshNet::new(&ck.header.model, device, dtype, ck.header.train.seed)?;
    ck.apply(&model, None)?;
    Ok((model, ck))
}
