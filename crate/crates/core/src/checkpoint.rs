//! Binary checkpoint format.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, a JSON
//! header, then every parameter, Adam first moment and Adam second moment
//! as little-endian `f64`, in parameter-store order.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tensor};
use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::model::NliModel;
use crate::training::{Adam, TrainConfig};

const MAGIC: &[u8; 8] = b"LTCKPT\0\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ParamMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    vocab: Vec<String>,
    params: Vec<ParamMeta>,
    adam_learning_rate: f64,
    adam_beta1: f64,
    adam_beta2: f64,
    adam_epsilon: f64,
    adam_steps: u64,
    step: u64,
    epoch: usize,
    dev_accuracy: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub vocab: Vocabulary,
    pub store: ParamStore,
    pub adam: Adam,
    pub step: u64,
    pub epoch: usize,
    pub dev_accuracy: Option<f64>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| bad("truncated file"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| bad("size overflow"))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            config: self.config.clone(),
            vocab: self.vocab.tokens().to_vec(),
            params: self
                .store
                .iter()
                .map(|(_, name, t)| ParamMeta {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
            adam_learning_rate: self.adam.learning_rate,
            adam_beta1: self.adam.beta1,
            adam_beta2: self.adam.beta2,
            adam_epsilon: self.adam.epsilon,
            adam_steps: self.adam.t,
            step: self.step,
            epoch: self.epoch,
            dev_accuracy: self.dev_accuracy,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(24 + json.len() + 24 * self.store.num_scalars());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let mut put = |xs: &[f64]| {
            for x in xs {
                out.extend_from_slice(&x.to_le_bytes());
            }
        };
        for (_, _, t) in self.store.iter() {
            put(t.data());
        }
        for m in &self.adam.m {
            put(m);
        }
        for v in &self.adam.v {
            put(v);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {version}")));
        }
        let len = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let len = usize::try_from(len).map_err(|_| bad("header too large"))?;
        let header: Header =
            serde_json::from_slice(r.take(len)?).map_err(|e| bad(format!("header: {e}")))?;

        let mut store = ParamStore::new();
        for meta in &header.params {
            if store.id(&meta.name).is_some() {
                return Err(bad(format!("duplicate parameter {}", meta.name)));
            }
            let size = meta.shape.iter().product();
            let data = r.floats(size)?;
            store.add(meta.name.clone(), Tensor::new(meta.shape.clone(), data)?);
        }
        let sizes: Vec<usize> = store.iter().map(|(_, _, t)| t.len()).collect();
        let m = sizes.iter().map(|&n| r.floats(n)).collect::<Result<Vec<_>>>()?;
        let v = sizes.iter().map(|&n| r.floats(n)).collect::<Result<Vec<_>>>()?;
        if r.pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        let mut adam = Adam::new(
            &store,
            header.adam_learning_rate,
            header.adam_beta1,
            header.adam_beta2,
            header.adam_epsilon,
        );
        adam.t = header.adam_steps;
        adam.m = m;
        adam.v = v;
        Ok(Checkpoint {
            config: header.config,
            vocab: Vocabulary::from_tokens(header.vocab)?,
            store,
            adam,
            step: header.step,
            epoch: header.epoch,
            dev_accuracy: header.dev_accuracy,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Rebuilds the model structure and checks it against the stored
    /// parameters. The returned model indexes into `self.store`.
    pub fn model(&self) -> Result<NliModel> {
        let emb = self
            .store
            .id("embeddings")
            .ok_or_else(|| bad("missing embeddings"))?;
        let table = self.store.get(emb);
        if table.shape().len() != 2 || table.rows() != self.vocab.len() {
            return Err(bad(format!(
                "vocabulary has {} entries but the embedding table has {} rows",
                self.vocab.len(),
                table.shape().first().copied().unwrap_or(0)
            )));
        }
        let mut fresh = ParamStore::new();
        let model = NliModel::new(
            &mut fresh,
            self.config.model,
            Tensor::zeros(table.shape()),
            self.config.hidden,
            &mut ChaCha8Rng::seed_from_u64(0),
        )?;
        if fresh.len() != self.store.len() {
            return Err(bad(format!(
                "expected {} parameters, found {}",
                fresh.len(),
                self.store.len()
            )));
        }
        for ((_, name_a, a), (_, name_b, b)) in fresh.iter().zip(self.store.iter()) {
            if name_a != name_b || a.shape() != b.shape() {
                return Err(bad(format!(
                    "parameter mismatch: expected {name_a} {:?}, found {name_b} {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok(model)
    }
}
