//! Binary checkpoint format, little-endian throughout:
//!
//! ```text
//! "SMF1"  u32 version  u64 config_len  config JSON (UTF-8)
//! repeated until EOF:
//!   u16 name_len  name  u8 rank  u64 dims[rank]  f64 data[product(dims)]
//! ```

use std::fs;
use std::path::Path;

use super::{ModelConfig, SoMoFormer};
use crate::error::{Error, Result};
use crate::tensor::{ParamSet, Tensor};

const MAGIC: &[u8; 4] = b"SMF1";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub records: Vec<Record>,
}

impl Checkpoint {
    pub fn record(&self, name: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.name == name)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let config = serde_json::to_vec(&self.config)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(config.len() as u64).to_le_bytes());
        out.extend_from_slice(&config);
        for r in &self.records {
            let name = r.name.as_bytes();
            let name_len = u16::try_from(name.len())
                .map_err(|_| Error::Checkpoint(format!("record name too long: {}", r.name)))?;
            let rank = u8::try_from(r.shape.len()).map_err(|_| {
                Error::Checkpoint(format!("record {} has too many dimensions", r.name))
            })?;
            if r.shape.iter().product::<usize>() != r.data.len() {
                return Err(Error::Checkpoint(format!(
                    "record {} shape and data disagree",
                    r.name
                )));
            }
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name);
            out.push(rank);
            for &d in &r.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &r.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::Checkpoint(
                "not a checkpoint file (bad magic)".into(),
            ));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version}; this build reads version {VERSION}"
            )));
        }
        let len = r.len("config length")?;
        let config: ModelConfig = serde_json::from_slice(r.take(len, "config")?)
            .map_err(|e| Error::Checkpoint(format!("invalid config JSON: {e}")))?;
        let mut records = Vec::new();
        while r.pos < bytes.len() {
            let name_len = u16::from_le_bytes(r.take(2, "record name length")?.try_into().unwrap());
            let name = std::str::from_utf8(r.take(name_len as usize, "record name")?)
                .map_err(|_| Error::Checkpoint("record name is not UTF-8".into()))?
                .to_string();
            let rank = r.take(1, "record rank")?[0] as usize;
            let shape = (0..rank)
                .map(|_| r.len("record dims"))
                .collect::<Result<Vec<_>>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= bytes.len()))
                .ok_or_else(|| Error::Checkpoint(format!("record {name} is truncated")))?;
            let raw = r.take(n * 8, &name)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            records.push(Record { name, shape, data });
        }
        Ok(Self { config, records })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Checkpoint(format!(
                    "file truncated while reading {what} at byte {}",
                    self.pos
                ))
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8, what)?.try_into().unwrap());
        usize::try_from(v)
            .map_err(|_| Error::Checkpoint(format!("{what} {v} does not fit in memory")))
    }
}

/// Writes via a temporary file in the same directory, so a failed write
/// never leaves a partial checkpoint at `path`.
pub fn write_checkpoint(path: impl AsRef<Path>, checkpoint: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let bytes = checkpoint.encode()?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(path, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::decode(&bytes).map_err(|e| match e {
        Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub(crate) fn param_records(params: &ParamSet) -> Vec<Record> {
    params
        .iter()
        .map(|(name, t)| Record {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            data: t.data().to_vec(),
        })
        .collect()
}

impl SoMoFormer {
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config().clone(),
            records: param_records(self.params()),
        }
    }

    /// Builds the model from the parameter records of a checkpoint,
    /// ignoring records that belong to training state.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut params = ParamSet::new();
        for r in ckpt.records.iter().filter(|r| !is_training_record(&r.name)) {
            let t = Tensor::new(&r.shape, r.data.clone())
                .map_err(|e| Error::Checkpoint(format!("record {}: {e}", r.name)))?;
            params.insert(r.name.clone(), t);
        }
        Self::from_params(ckpt.config.clone(), params)
    }
}

pub(crate) fn is_training_record(name: &str) -> bool {
    name.starts_with("optim.") || name.starts_with("train.")
}

pub fn save_checkpoint(model: &SoMoFormer, path: impl AsRef<Path>) -> Result<()> {
    write_checkpoint(path, &model.to_checkpoint())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<SoMoFormer> {
    SoMoFormer::from_checkpoint(&read_checkpoint(path)?)
}
