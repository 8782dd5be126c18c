//! Binary checkpoints: a JSON header followed by raw little-endian data.
//!
//! Layout: 8-byte magic, `u64` header length, UTF-8 JSON header, then every
//! tensor's values as `f64`, every mask layer as packed bits (LSB first)
//! and the introduction ages as `u32`. Round trips are bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::curriculum::IntroductionAge;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, TransformerLm};
use crate::param::ParamStore;
use crate::prune::{LayerMask, MaskSet};

const MAGIC: &[u8; 8] = b"CUPCKPT1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorMeta {
    pub name: String,
    pub shape: Vec<usize>,
    pub prunable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    label: String,
    seed: u64,
    model: ModelConfig,
    tensors: Vec<TensorMeta>,
    /// Parameter index of each mask layer.
    mask_params: Vec<usize>,
    ages: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub label: String,
    pub seed: u64,
    pub model: ModelConfig,
    pub tensors: Vec<TensorMeta>,
    pub values: Vec<Vec<f64>>,
    pub masks: Vec<LayerMask>,
    pub ages: Vec<u32>,
}

impl Checkpoint {
    pub fn capture(
        label: &str,
        model: &ModelConfig,
        seed: u64,
        params: &ParamStore,
        masks: &MaskSet,
        ages: &IntroductionAge,
    ) -> Self {
        Self {
            label: label.to_string(),
            seed,
            model: model.clone(),
            tensors: params
                .iter()
                .map(|p| TensorMeta {
                    name: p.name.clone(),
                    shape: p.tensor.shape().to_vec(),
                    prunable: p.prunable,
                })
                .collect(),
            values: params.values_snapshot(),
            masks: masks.layers().to_vec(),
            ages: ages.as_slice().to_vec(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            label: self.label.clone(),
            seed: self.seed,
            model: self.model.clone(),
            tensors: self.tensors.clone(),
            mask_params: self.masks.iter().map(|l| l.param).collect(),
            ages: self.ages.len(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + 8 * self.values.iter().map(Vec::len).sum::<usize>());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for v in self.values.iter().flatten() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for layer in &self.masks {
            let mut bytes = vec![0u8; layer.keep.len().div_ceil(8)];
            for (i, _) in layer.keep.iter().enumerate().filter(|(_, &k)| k) {
                bytes[i / 8] |= 1 << (i % 8);
            }
            out.extend_from_slice(&bytes);
        }
        for a in &self.ages {
            out.extend_from_slice(&a.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let len = u64::from_le_bytes(r.array()?) as usize;
        let header: Header = serde_json::from_slice(r.take(len)?)?;

        let mut values = Vec::with_capacity(header.tensors.len());
        for t in &header.tensors {
            let n: usize = t.shape.iter().product();
            values.push(
                (0..n)
                    .map(|_| r.array().map(f64::from_le_bytes))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        let mut base = Vec::with_capacity(header.tensors.len());
        let mut acc = 0;
        for v in &values {
            base.push(acc);
            acc += v.len();
        }
        let mut masks = Vec::with_capacity(header.mask_params.len());
        for &param in &header.mask_params {
            let meta = header
                .tensors
                .get(param)
                .ok_or_else(|| Error::Checkpoint(format!("mask refers to missing tensor {param}")))?;
            let n = values[param].len();
            let bits = r.take(n.div_ceil(8))?;
            masks.push(LayerMask {
                param,
                name: meta.name.clone(),
                base: base[param],
                keep: (0..n).map(|i| bits[i / 8] & (1 << (i % 8)) != 0).collect(),
            });
        }
        let ages = (0..header.ages)
            .map(|_| r.array().map(u32::from_le_bytes))
            .collect::<Result<Vec<_>>>()?;
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            label: header.label,
            seed: header.seed,
            model: header.model,
            tensors: header.tensors,
            values,
            masks,
            ages,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    /// Rebuilds the model, parameters, masks and ages.
    pub fn restore(&self) -> Result<(TransformerLm, ParamStore, MaskSet, IntroductionAge)> {
        let model = TransformerLm::new(self.model.clone())?;
        let mut params = model.init_params(self.seed)?;
        for (p, meta) in params.iter().zip(&self.tensors) {
            if p.name != meta.name || p.tensor.shape() != meta.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` does not match model tensor `{}`",
                    meta.name, p.name
                )));
            }
        }
        params.load_values(&self.values)?;
        let masks = MaskSet::from_layers(self.masks.clone());
        masks.check_aligned(&params)?;
        if self.ages.len() != params.weight_count() {
            return Err(Error::Checkpoint(format!(
                "{} ages for {} weights",
                self.ages.len(),
                params.weight_count()
            )));
        }
        Ok((model, params, masks, IntroductionAge::from_vec(self.ages.clone())))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("slice has length N"))
    }
}
