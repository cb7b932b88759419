//! Binary model checkpoints.
//!
//! Layout (little-endian): the 8-byte magic `CEPHALO\0`, a `u32` format
//! version, the `u64` seed the models were trained with, a `u32` model count,
//! then per model its [`NetworkConfig`] and its flat parameter buffer as
//! `u64` length plus raw `f64` values. Parameters keep their bit patterns, so
//! a reloaded model reproduces forward outputs exactly.

use std::fs;
use std::path::Path;

use crate::backbone::{NetworkConfig, SelfCephaloNet};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"CEPHALO\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    pub models: Vec<SelfCephaloNet>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }

    fn config(&mut self, c: &NetworkConfig) {
        self.usize(c.base_width);
        self.usize(c.q_order);
        self.usize(c.stage_modules.len());
        for &m in &c.stage_modules {
            self.usize(m);
        }
        self.usize(c.units_per_branch);
        self.usize(c.bottleneck_width);
        self.usize(c.bottleneck_units);
        self.usize(c.num_landmarks);
        for v in [c.input_size.0, c.input_size.1, c.heatmap_size.0, c.heatmap_size.1] {
            self.usize(v);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("length overflows usize".into()))
    }

    fn config(&mut self) -> Result<NetworkConfig> {
        let base_width = self.usize()?;
        let q_order = self.usize()?;
        let n = self.usize()?;
        if n > 16 {
            return Err(Error::Checkpoint(format!("implausible stage count {n}")));
        }
        let stage_modules = (0..n).map(|_| self.usize()).collect::<Result<_>>()?;
        Ok(NetworkConfig {
            base_width,
            q_order,
            stage_modules,
            units_per_branch: self.usize()?,
            bottleneck_width: self.usize()?,
            bottleneck_units: self.usize()?,
            num_landmarks: self.usize()?,
            input_size: (self.usize()?, self.usize()?),
            heatmap_size: (self.usize()?, self.usize()?),
        })
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(MAGIC.to_vec());
        w.u32(FORMAT_VERSION);
        w.u64(self.seed);
        w.u32(self.models.len() as u32);
        for m in &self.models {
            w.config(m.config());
            let params = m.flat_params();
            w.usize(params.len());
            for v in params {
                w.0.extend_from_slice(&v.to_le_bytes());
            }
        }
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version}, this build reads {FORMAT_VERSION}"
            )));
        }
        let seed = r.u64()?;
        let count = r.u32()?;
        let mut models = Vec::with_capacity(count as usize);
        for i in 0..count {
            let cfg = r.config()?;
            cfg.validate()
                .map_err(|e| Error::Checkpoint(format!("model {i}: {e}")))?;
            let mut model = SelfCephaloNet::build(&cfg, 0)?;
            let n = r.usize()?;
            if n != model.count_params() {
                return Err(Error::Checkpoint(format!(
                    "model {i}: {n} stored parameters, configuration needs {}",
                    model.count_params()
                )));
            }
            let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
            let values: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            model.load_flat_params(&values)?;
            models.push(model);
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { seed, models })
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    fs::write(path, checkpoint.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes).map_err(|e| match e {
        Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    })
}
