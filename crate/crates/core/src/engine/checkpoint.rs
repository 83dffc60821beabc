//! Binary checkpoint format.
//!
//! `TPAN` magic, u32 version, then records of
//! `(name_len u32, name utf-8, rank u32, dims u32 × rank, f64 payload)`, all
//! little-endian. The first record, `meta/records`, holds the record count so
//! a cut-off file is detected even at a record boundary.

use std::path::Path;

use crate::autodiff::{Adam, AdamState, Tensor};
use crate::error::{Error, Result};
use crate::tpan::{PrototypeTable, TpsModel};

use super::train::TrainState;
use super::RunConfig;

pub const MAGIC: &[u8; 4] = b"TPAN";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub tensor: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: u64,
    pub records: Vec<Record>,
}

fn scalar(name: &str, v: f64) -> Record {
    Record {
        name: name.into(),
        tensor: Tensor::vector(vec![v]),
    }
}

impl Checkpoint {
    pub fn from_state(cfg: &RunConfig, st: &TrainState) -> Self {
        let hash = cfg.hash();
        let mut records = vec![
            scalar("meta/config_hash_hi", (hash >> 32) as f64),
            scalar("meta/config_hash_lo", (hash & 0xffff_ffff) as f64),
            scalar("meta/epoch", st.epoch as f64),
        ];
        let params = st.model.params();
        for p in &params {
            records.push(Record {
                name: p.name.clone(),
                tensor: strip(&p.tensor),
            });
        }
        records.push(Record {
            name: "prototype/table".into(),
            tensor: Tensor::new(vec![st.table.len(), st.table.dim()], st.table.rows().to_vec())
                .expect("table shape"),
        });
        records.push(Record {
            name: "prototype/initialized".into(),
            tensor: Tensor::vector(
                st.table.initialized().iter().map(|&b| f64::from(u8::from(b))).collect(),
            ),
        });
        records.push(scalar("prototype/lambda", st.table.lambda()));
        let opt = &st.optimizer;
        records.push(scalar("optim/step", opt.state.step as f64));
        records.push(scalar("optim/lr", opt.lr));
        for (i, p) in params.iter().enumerate() {
            for (tag, acc) in [("m", &opt.state.m), ("v", &opt.state.v)] {
                if let Some(a) = acc.get(i) {
                    records.push(Record {
                        name: format!("optim/{tag}/{}", p.name),
                        tensor: Tensor::vector(a.clone()),
                    });
                }
            }
        }
        Self {
            config_hash: hash,
            records,
        }
    }

    fn get(&self, name: &str) -> Result<&Tensor> {
        self.records
            .iter()
            .find(|r| r.name == name)
            .map(|r| &r.tensor)
            .ok_or_else(|| Error::Invalid(format!("checkpoint lacks record {name:?}")))
    }

    fn get_scalar(&self, name: &str) -> Result<f64> {
        let t = self.get(name)?;
        t.data()
            .first()
            .copied()
            .ok_or_else(|| Error::Invalid(format!("empty record {name:?}")))
    }

    /// Rebuilds the training state; `cfg` supplies the architecture.
    ///
    /// A config-hash mismatch only logs a warning.
    pub fn into_state(self, cfg: &RunConfig) -> Result<TrainState> {
        if self.config_hash != cfg.hash() {
            log::warn!("checkpoint was written under a different configuration");
        }
        let table_t = self.get("prototype/table")?;
        let &[n, d] = table_t.shape() else {
            return Err(Error::Invalid("malformed prototype table".into()));
        };
        let vocab = self.get("text.embedding")?.shape()[0];
        let mut state = TrainState::init(cfg, vocab, n)?;
        if d != cfg.model.dim {
            return Err(Error::Invalid(format!(
                "checkpoint dimension {d} differs from configured {}",
                cfg.model.dim
            )));
        }
        load_params(&mut state.model, &self)?;
        let flags = self.get("prototype/initialized")?.data().iter().map(|&v| v != 0.0).collect();
        state.table = PrototypeTable::from_parts(
            table_t.data().to_vec(),
            flags,
            d,
            self.get_scalar("prototype/lambda")?,
        )?;
        let mut opt = Adam::new(self.get_scalar("optim/lr")?);
        opt.weight_decay = cfg.train.weight_decay;
        let step = self.get_scalar("optim/step")? as u64;
        let names: Vec<String> = state.model.params().iter().map(|p| p.name.clone()).collect();
        let mut st = AdamState {
            step,
            ..AdamState::default()
        };
        if step > 0 {
            for n in &names {
                st.m.push(self.get(&format!("optim/m/{n}"))?.data().to_vec());
                st.v.push(self.get(&format!("optim/v/{n}"))?.data().to_vec());
            }
        }
        opt.state = st;
        state.optimizer = opt;
        state.epoch = self.get_scalar("meta/epoch")? as usize;
        Ok(state)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let count = scalar("meta/records", (self.records.len() + 1) as f64);
        for r in std::iter::once(&count).chain(&self.records) {
            let name = r.name.as_bytes();
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name);
            out.extend_from_slice(&(r.tensor.shape().len() as u32).to_le_bytes());
            for &dim in r.tensor.shape() {
                out.extend_from_slice(&(dim as u32).to_le_bytes());
            }
            for v in r.tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::NotACheckpoint);
        }
        let mut cur = Cursor { bytes, pos: 4 };
        let version = cur.u32()?;
        if version != VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: VERSION,
            });
        }
        let mut records = Vec::new();
        let mut expected = None;
        while cur.pos < bytes.len() {
            let name_len = cur.u32()? as usize;
            let name = String::from_utf8(cur.take(name_len)?.to_vec())
                .map_err(|_| Error::Invalid("record name is not utf-8".into()))?;
            let rank = cur.u32()? as usize;
            let shape = (0..rank).map(|_| cur.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = cur
                .take(n.checked_mul(8).ok_or_else(|| Error::Truncated("record size overflow".into()))?)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let tensor = Tensor::new(shape, data)?;
            if records.is_empty() && expected.is_none() && name == "meta/records" {
                expected = tensor.data().first().map(|&v| v as usize);
                continue;
            }
            records.push(Record { name, tensor });
        }
        match expected {
            Some(e) if e == records.len() + 1 => {}
            Some(e) => {
                return Err(Error::Truncated(format!(
                    "{} of {} records present",
                    records.len() + 1,
                    e
                )))
            }
            None => return Err(Error::Truncated("missing record count".into())),
        }
        let mut ck = Self {
            config_hash: 0,
            records,
        };
        let hi = ck.get_scalar("meta/config_hash_hi")? as u64;
        let lo = ck.get_scalar("meta/config_hash_lo")? as u64;
        ck.config_hash = (hi << 32) | lo;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn strip(t: &Tensor) -> Tensor {
    Tensor::new(t.shape().to_vec(), t.data().to_vec()).expect("same shape")
}

fn load_params(model: &mut TpsModel, ck: &Checkpoint) -> Result<()> {
    for p in model.params_mut() {
        let t = ck.get(&p.name)?;
        if t.shape() != p.tensor.shape() {
            return Err(Error::shape(
                "checkpoint",
                format!("{}: stored {:?}, model {:?}", p.name, t.shape(), p.tensor.shape()),
            ));
        }
        p.tensor = strip(t);
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Truncated(format!("needed {n} bytes at offset {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn save_checkpoint(path: &Path, cfg: &RunConfig, state: &TrainState) -> Result<()> {
    Checkpoint::from_state(cfg, state).save(path)
}

pub fn load_checkpoint(path: &Path, cfg: &RunConfig) -> Result<TrainState> {
    Checkpoint::load(path)?.into_state(cfg)
}
