//! Binary checkpoint format (all integers little-endian):
//!
//! ```text
//! "NFCK" | version u32 | model kind u8 | meta length u32 | meta JSON
//! then until EOF, per tensor:
//! name length u16 | name | rank u8 | dims u64 * rank | f64 * numel
//! ```
//!
//! Model tensors are stored as `model.<name>`, optimizer moments as
//! `adam.m.<name>`, `adam.v.<name>` and `adam.t.<name>`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::optim::{Adam, Moments};
use super::{HistoryRow, TrainConfig, TrainState};
use crate::error::{Error, Result};
use crate::haar::DETAIL_ORDER;
use crate::model::{FlowModel, ModelKind};
use crate::module::{named_tensors, Module};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"NFCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: TrainConfig,
    pub step: u64,
    pub epochs_done: BTreeMap<String, usize>,
    pub history: Vec<HistoryRow>,
    pub detail_order: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub meta: CheckpointMeta,
    pub tensors: Vec<(String, Tensor)>,
}

fn bad(detail: impl Into<String>) -> Error {
    Error::format("checkpoint", detail)
}

impl Checkpoint {
    pub fn capture(model: &dyn FlowModel, state: &TrainState, config: &TrainConfig) -> Self {
        let mut tensors: Vec<(String, Tensor)> = named_tensors(model)
            .into_iter()
            .map(|(n, t)| (format!("model.{n}"), t.detach()))
            .collect();
        for (name, st) in &state.adam.moments {
            tensors.push((format!("adam.m.{name}"), Tensor::vector(&st.m)));
            tensors.push((format!("adam.v.{name}"), Tensor::vector(&st.v)));
            tensors.push((format!("adam.t.{name}"), Tensor::scalar(st.t as f64)));
        }
        Checkpoint {
            kind: model.kind(),
            meta: CheckpointMeta {
                config: config.clone(),
                step: state.step,
                epochs_done: state.epochs_done.clone(),
                history: state.history.clone(),
                detail_order: DETAIL_ORDER.iter().map(|s| s.to_string()).collect(),
            },
            tensors,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta).map_err(|e| bad(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.kind.code());
        let len = u32::try_from(meta.len()).map_err(|_| bad("metadata too large"))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&meta);
        for (name, t) in &self.tensors {
            let n = u16::try_from(name.len()).map_err(|_| bad(format!("name too long: {name}")))?;
            out.extend_from_slice(&n.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let rank = u8::try_from(t.rank()).map_err(|_| bad("rank too large"))?;
            out.push(rank);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(bad("missing NFCK magic"));
        }
        let version = u32::from_le_bytes(r.array()?);
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let kind = ModelKind::from_code(r.take(1)?[0])?;
        let len = u32::from_le_bytes(r.array()?) as usize;
        let meta: CheckpointMeta =
            serde_json::from_slice(r.take(len)?).map_err(|e| bad(format!("metadata: {e}")))?;
        if meta.config.model != kind {
            return Err(bad("model kind disagrees with stored config"));
        }
        let mut tensors = Vec::new();
        while r.pos < bytes.len() {
            let n = u16::from_le_bytes(r.array()?) as usize;
            let name = std::str::from_utf8(r.take(n)?)
                .map_err(|_| bad("tensor name is not UTF-8"))?
                .to_string();
            let rank = r.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(usize::try_from(u64::from_le_bytes(r.array()?)).map_err(|_| bad("dim overflow"))?);
            }
            let numel: usize = shape.iter().product();
            let raw = r.take(numel.checked_mul(8).ok_or_else(|| bad("tensor too large"))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push((name, Tensor::new(data, &shape)?));
        }
        Ok(Checkpoint { kind, meta, tensors })
    }

    /// Writes via a temporary file and rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Copies the stored `model.*` tensors into `model`, which must have
    /// exactly the same names and shapes.
    pub fn load_into(&self, model: &mut dyn Module) -> Result<()> {
        let stored: BTreeMap<&str, &Tensor> = self
            .tensors
            .iter()
            .filter_map(|(n, t)| n.strip_prefix("model.").map(|k| (k, t)))
            .collect();
        let mut seen = 0;
        let mut err = None;
        model.visit_mut("", &mut |name, t| {
            if err.is_some() {
                return;
            }
            match stored.get(name) {
                Some(s) if s.shape() == t.shape() => {
                    let fresh = s.detach();
                    *t = if t.is_tracked() { fresh.requires_grad() } else { fresh };
                    seen += 1;
                }
                Some(s) => {
                    err = Some(bad(format!(
                        "tensor `{name}` has shape {:?}, model expects {:?}",
                        s.shape(),
                        t.shape()
                    )))
                }
                None => err = Some(bad(format!("tensor `{name}` missing"))),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if seen != stored.len() {
            return Err(bad(format!(
                "checkpoint holds {} model tensors, model has {seen}",
                stored.len()
            )));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> Result<Adam> {
        let mut adam = Adam::new();
        let find = |key: String| self.tensors.iter().find(|(n, _)| *n == key).map(|(_, t)| t);
        for (name, t) in &self.tensors {
            if let Some(p) = name.strip_prefix("adam.m.") {
                let v = find(format!("adam.v.{p}")).ok_or_else(|| bad(format!("adam.v.{p} missing")))?;
                let s = find(format!("adam.t.{p}")).ok_or_else(|| bad(format!("adam.t.{p} missing")))?;
                adam.moments.insert(
                    p.to_string(),
                    Moments { m: t.to_vec(), v: v.to_vec(), t: s.item() as u64 },
                );
            }
        }
        Ok(adam)
    }

    pub fn state(&self) -> Result<TrainState> {
        Ok(TrainState {
            adam: self.optimizer()?,
            step: self.meta.step,
            epochs_done: self.meta.epochs_done.clone(),
            history: self.meta.history.clone(),
        })
    }

    /// Rebuilds the model and the training state.
    pub fn restore(&self) -> Result<(Box<dyn FlowModel>, TrainState)> {
        let mut model = self.meta.config.build_model()?;
        self.load_into(model.as_mut())?;
        Ok((model, self.state()?))
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| bad(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }
}
