//! Single-file checkpoints: `SRCK`, a `u32` version, a `u64` manifest length,
//! the JSON manifest (config, tensor names and shapes, free-form metadata),
//! then every tensor as row-major little-endian `f64` in manifest order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::optim::{AdamState, ParamSet};

const MAGIC: &[u8; 4] = b"SRCK";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Manifest {
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
    adam_step: Option<u64>,
    #[serde(default)]
    meta: serde_json::Value,
}

/// Parameters plus whatever is needed to resume training.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub adam: Option<AdamState>,
    pub meta: serde_json::Value,
}

fn fmt_err(e: impl std::fmt::Display) -> Error {
    Error::Format(e.to_string())
}

impl Checkpoint {
    pub fn new(params: ModelParams) -> Self {
        Checkpoint {
            params,
            adam: None,
            meta: serde_json::Value::Null,
        }
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let names = self.params.names();
        let mut tensors: Vec<&Mat> = self.params.tensors();
        let mut entries: Vec<TensorEntry> = names
            .iter()
            .zip(&tensors)
            .map(|(n, t)| TensorEntry {
                name: n.clone(),
                rows: t.rows(),
                cols: t.cols(),
            })
            .collect();
        if let Some(adam) = &self.adam {
            for (prefix, moments) in [("adam.m.", &adam.m), ("adam.v.", &adam.v)] {
                for (n, t) in names.iter().zip(moments) {
                    entries.push(TensorEntry {
                        name: format!("{prefix}{n}"),
                        rows: t.rows(),
                        cols: t.cols(),
                    });
                    tensors.push(t);
                }
            }
        }
        let manifest = Manifest {
            config: self.params.config,
            tensors: entries,
            adam_step: self.adam.as_ref().map(|a| a.step),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&manifest).map_err(fmt_err)?;
        let io = |e: std::io::Error| Error::Format(e.to_string());
        w.write_all(MAGIC).map_err(io)?;
        w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&(json.len() as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&json).map_err(io)?;
        for t in tensors {
            for v in t.as_slice() {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let io = |e: std::io::Error| Error::Format(format!("truncated checkpoint: {e}"));
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4).map_err(io)?;
        let version = u32::from_le_bytes(b4);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8).map_err(io)?;
        let mut json = vec![0u8; u64::from_le_bytes(b8) as usize];
        r.read_exact(&mut json).map_err(io)?;
        let manifest: Manifest = serde_json::from_slice(&json).map_err(fmt_err)?;

        let mut params = ModelParams::init(manifest.config, 0)?;
        let names = params.names();
        let n = names.len();
        let expected_len = if manifest.adam_step.is_some() { 3 * n } else { n };
        if manifest.tensors.len() != expected_len {
            return Err(Error::Format(format!(
                "manifest lists {} tensors, expected {expected_len}",
                manifest.tensors.len()
            )));
        }
        let mut read_tensor = |entry: &TensorEntry, want_name: &str, target: &mut Mat| -> Result<()> {
            if entry.name != want_name || (entry.rows, entry.cols) != target.shape() {
                return Err(Error::Format(format!(
                    "tensor {} {}x{} does not match {want_name} {:?}",
                    entry.name,
                    entry.rows,
                    entry.cols,
                    target.shape()
                )));
            }
            for v in target.as_mut_slice() {
                r.read_exact(&mut b8).map_err(io)?;
                *v = f64::from_le_bytes(b8);
            }
            Ok(())
        };
        for (k, t) in params.tensors_mut().into_iter().enumerate() {
            read_tensor(&manifest.tensors[k], &names[k], t)?;
        }
        let adam = match manifest.adam_step {
            Some(step) => {
                let mut state = AdamState::new(&params);
                state.step = step;
                for (k, t) in state.m.iter_mut().enumerate() {
                    read_tensor(&manifest.tensors[n + k], &format!("adam.m.{}", names[k]), t)?;
                }
                for (k, t) in state.v.iter_mut().enumerate() {
                    read_tensor(&manifest.tensors[2 * n + k], &format!("adam.v.{}", names[k]), t)?;
                }
                Some(state)
            }
            None => None,
        };
        if !params.is_finite() {
            return Err(Error::Format("checkpoint holds non-finite parameters".into()));
        }
        Ok(Checkpoint {
            params,
            adam,
            meta: manifest.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut BufReader::new(f))
    }
}
