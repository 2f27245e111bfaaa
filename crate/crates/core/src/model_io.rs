//! Versioned binary model files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "FM2SMODL"
//! version    u32      1
//! seq_len    u64
//! input_dim  u64
//! n_groups   u64
//! config     u64 length + UTF-8 run configuration text
//! theta      u64 count + f32 values (backbone layout order)
//! adv_hidden u64
//! adversary  u64 count + f32 values
//! std_dim    u64
//! mean, std  std_dim f32 values each
//! ```

use std::path::Path;

use crate::autodiff::ParamSet;
use crate::backbone::Backbone;
use crate::config;
use crate::data::{DatasetHeader, Standardizer};
use crate::error::{DataError, Error, Result};
use crate::harness::ExperimentSpec;
use crate::meta::Adversary;

pub const MAGIC: &[u8; 8] = b"FM2SMODL";
pub const VERSION: u32 = 1;

/// Everything needed to evaluate a trained model on new data.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    /// Run configuration; `spec.backbone` dimensions match the data.
    pub spec: ExperimentSpec,
    pub seq_len: usize,
    pub input_dim: usize,
    pub n_groups: usize,
    pub theta: ParamSet<f32>,
    pub adversary: Adversary<f32>,
    pub standardizer: Standardizer,
}

impl ModelFile {
    /// Fails on the first field where `header` disagrees with the model.
    pub fn check_header(&self, header: &DatasetHeader) -> Result<()> {
        for (field, model, data) in [
            ("seq_len", self.seq_len, header.seq_len),
            ("input_dim", self.input_dim, header.input_dim),
            ("n_groups", self.n_groups, header.n_groups),
        ] {
            if model != data {
                return Err(DataError::HeaderMismatch {
                    field,
                    model: model.to_string(),
                    data: data.to_string(),
                }
                .into());
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for v in [self.seq_len, self.input_dim, self.n_groups] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        let text = config::to_text(&self.spec);
        out.extend_from_slice(&(text.len() as u64).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        let floats = |out: &mut Vec<u8>, v: &[f32]| {
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        };
        let theta = self.theta.flatten();
        out.extend_from_slice(&(theta.len() as u64).to_le_bytes());
        floats(&mut out, &theta);
        out.extend_from_slice(&(self.adversary.hidden() as u64).to_le_bytes());
        let adv = self.adversary.params().flatten();
        out.extend_from_slice(&(adv.len() as u64).to_le_bytes());
        floats(&mut out, &adv);
        out.extend_from_slice(&(self.standardizer.mean.len() as u64).to_le_bytes());
        floats(&mut out, &self.standardizer.mean);
        floats(&mut out, &self.standardizer.std);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(model_err("not a model file (bad magic)"));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(model_err(format!("unsupported model version {version}")));
        }
        let seq_len = r.usize()?;
        let input_dim = r.usize()?;
        let n_groups = r.usize()?;
        let text_len = r.usize()?;
        let text = std::str::from_utf8(r.take(text_len)?)
            .map_err(|_| model_err("configuration is not UTF-8"))?;
        let mut spec = config::parse(text)
            .map_err(|e| model_err(format!("stored configuration: {}", e.join("; "))))?;
        spec.backbone.input_dim = input_dim;
        spec.backbone.seq_len = seq_len;
        let backbone = Backbone::new(spec.backbone)?;
        let theta_len = r.usize()?;
        let theta = ParamSet::unflatten(&r.floats(theta_len)?, &backbone.init_params::<f32>(0))
            .map_err(|e| model_err(format!("backbone parameters: {e}")))?;
        let hidden = r.usize()?;
        let adv_len = r.usize()?;
        let template = Adversary::<f32>::new(hidden, 0).map_err(|e| model_err(e.to_string()))?;
        let adv_params = ParamSet::unflatten(&r.floats(adv_len)?, template.params())
            .map_err(|e| model_err(format!("adversary parameters: {e}")))?;
        let adversary = Adversary::from_params(adv_params)?;
        let dim = r.usize()?;
        let mean = r.floats(dim)?;
        let std = r.floats(dim)?;
        if r.pos != bytes.len() {
            return Err(model_err(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            spec,
            seq_len,
            input_dim,
            n_groups,
            theta,
            adversary,
            standardizer: Standardizer { mean, std },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn model_err(msg: impl Into<String>) -> Error {
    DataError::Model(msg.into()).into()
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(model_err(format!("truncated at byte {}", self.pos)));
        };
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn usize(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| model_err(format!("length {v} too large")))
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(
            n.checked_mul(4)
                .ok_or_else(|| model_err("length overflow"))?,
        )?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}
