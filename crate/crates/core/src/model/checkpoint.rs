//! Binary checkpoint container: magic, format version, a JSON header and
//! the raw little-endian tensor payloads in header order.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Init, ModelConfig, Parameters, Scalar, Tensor};
use crate::error::{Error, Result};
use crate::io::ensure_parent;

const MAGIC: &[u8; 8] = b"SLMCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorMeta {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub dtype: String,
    pub config: ModelConfig,
    pub seed: u64,
    pub step: u64,
    pub provenance: BTreeMap<String, Init>,
    pub tensors: Vec<TensorMeta>,
    /// Free-form run metadata (seen tokens, vocabulary digest, ...).
    #[serde(default)]
    pub meta: BTreeMap<String, serde_json::Value>,
}

/// Model parameters plus any extra named tensors (optimizer moments).
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub seed: u64,
    pub step: u64,
    pub meta: BTreeMap<String, serde_json::Value>,
    pub params: Parameters<T>,
    pub extra: Vec<(String, Tensor<T>)>,
}

pub fn save_checkpoint<T: Scalar>(path: &Path, ckpt: &Checkpoint<T>) -> Result<()> {
    let mut tensors: Vec<(String, &Tensor<T>)> = ckpt.params.named();
    tensors.extend(ckpt.extra.iter().map(|(n, t)| (n.clone(), t)));
    let header = CheckpointHeader {
        version: CHECKPOINT_VERSION,
        dtype: T::DTYPE.to_string(),
        config: ckpt.params.config.clone(),
        seed: ckpt.seed,
        step: ckpt.step,
        provenance: ckpt.params.provenance.clone(),
        tensors: tensors
            .iter()
            .map(|(n, t)| TensorMeta {
                name: n.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        meta: ckpt.meta.clone(),
    };
    let json = serde_json::to_vec(&header)
        .map_err(|e| Error::format("checkpoint header", e.to_string()))?;
    ensure_parent(path)?;
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(json.len() as u64).to_le_bytes())
        .map_err(io)?;
    w.write_all(&json).map_err(io)?;
    let mut buf = Vec::new();
    for (_, t) in tensors {
        buf.clear();
        for &x in t.data() {
            x.write_le(&mut buf);
        }
        w.write_all(&buf).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn read_header(r: &mut impl Read, path: &Path) -> Result<CheckpointHeader> {
    let io = |e| Error::io(path, e);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(Error::format(
            "checkpoint",
            format!("{}: bad magic", path.display()),
        ));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4).map_err(io)?;
    let version = u32::from_le_bytes(b4);
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion {
            what: "checkpoint",
            found: version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8).map_err(io)?;
    let mut json = vec![0u8; u64::from_le_bytes(b8) as usize];
    r.read_exact(&mut json).map_err(io)?;
    serde_json::from_slice(&json).map_err(|e| Error::format("checkpoint header", e.to_string()))
}

pub fn read_checkpoint_header(path: &Path) -> Result<CheckpointHeader> {
    let mut r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    read_header(&mut r, path)
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    let mut r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let header = read_header(&mut r, path)?;
    if header.dtype != T::DTYPE {
        return Err(Error::format(
            "checkpoint",
            format!("stored as {}, requested {}", header.dtype, T::DTYPE),
        ));
    }
    header.config.validate()?;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    let mut buf = Vec::new();
    for meta in &header.tensors {
        let n: usize = meta.shape.iter().product();
        buf.resize(n * T::BYTES, 0);
        r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
        let data = buf.chunks_exact(T::BYTES).map(T::read_le).collect();
        tensors.push((meta.name.clone(), Tensor::new(meta.shape.clone(), data)?));
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::format("checkpoint", "trailing bytes after payload"));
    }
    let n_params = super::params::tensor_shapes(&header.config).len();
    if tensors.len() < n_params {
        return Err(Error::format("checkpoint", "missing model tensors"));
    }
    let extra = tensors.split_off(n_params);
    let names = super::params::tensor_shapes(&header.config);
    for ((expected, _), (found, _)) in names.iter().zip(&tensors) {
        if expected != found {
            return Err(Error::format(
                "checkpoint",
                format!("expected tensor {expected}, found {found}"),
            ));
        }
    }
    let params = Parameters::from_tensors(
        header.config.clone(),
        tensors.into_iter().map(|(_, t)| t).collect(),
        header.provenance.clone(),
    )?;
    Ok(Checkpoint {
        seed: header.seed,
        step: header.step,
        meta: header.meta,
        params,
        extra,
    })
}
