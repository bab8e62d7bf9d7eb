//! Binary checkpoint container.
//!
//! Layout: `LEAPREC\0` magic, u32 LE format version, u64 LE header length,
//! UTF-8 JSON header, then every tensor of every branch as little-endian
//! f32 in declared order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BranchShape, ModelConfig, ModelError, ParameterSet};

const MAGIC: &[u8; 8] = b"LEAPREC\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorHeader {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchHeader {
    pub name: String,
    pub dim: usize,
    pub gnn_layers: usize,
    pub sa_layers: usize,
    pub tensors: Vec<TensorHeader>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    /// `deployment` or `meta`.
    pub kind: String,
    pub config_hash: String,
    pub num_users: usize,
    pub num_items: usize,
    pub model: ModelConfig,
    pub branches: Vec<BranchHeader>,
}

/// A named set of branches plus the model settings needed to score with them.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub kind: String,
    pub config_hash: String,
    pub model: ModelConfig,
    pub gtl: ParameterSet,
    pub otl: ParameterSet,
}

impl Checkpoint {
    pub fn num_users(&self) -> usize {
        self.gtl.shape().num_users
    }

    pub fn num_items(&self) -> usize {
        self.gtl.shape().num_items
    }

    fn header(&self) -> CheckpointHeader {
        let branch = |name: &str, p: &ParameterSet| {
            let s = p.shape();
            BranchHeader {
                name: name.to_string(),
                dim: s.dim,
                gnn_layers: s.gnn_layers,
                sa_layers: s.sa_layers,
                tensors: p
                    .layout()
                    .entries()
                    .iter()
                    .map(|e| TensorHeader {
                        name: e.name.clone(),
                        shape: e.shape.clone(),
                    })
                    .collect(),
            }
        };
        CheckpointHeader {
            format_version: CHECKPOINT_VERSION,
            kind: self.kind.clone(),
            config_hash: self.config_hash.clone(),
            num_users: self.num_users(),
            num_items: self.num_items(),
            model: self.model.clone(),
            branches: vec![branch("gtl", &self.gtl), branch("otl", &self.otl)],
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), ModelError> {
        let header = serde_json::to_vec(&self.header())
            .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        w.write_all(MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        let mut buf = Vec::with_capacity(4 * (self.gtl.len() + self.otl.len()));
        for v in self.gtl.values().iter().chain(self.otl.values()) {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, ModelError> {
        let bad = |m: &str| ModelError::Checkpoint(m.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let mut v4 = [0u8; 4];
        r.read_exact(&mut v4)?;
        let version = u32::from_le_bytes(v4);
        if version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!(
                "unsupported format version {version}"
            )));
        }
        let mut v8 = [0u8; 8];
        r.read_exact(&mut v8)?;
        let len = u64::from_le_bytes(v8) as usize;
        let mut hbytes = vec![0u8; len];
        r.read_exact(&mut hbytes)?;
        let header: CheckpointHeader =
            serde_json::from_slice(&hbytes).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        let mut branches = Vec::new();
        for name in ["gtl", "otl"] {
            let b = header
                .branches
                .iter()
                .find(|b| b.name == name)
                .ok_or_else(|| ModelError::Checkpoint(format!("missing branch {name}")))?;
            let shape = BranchShape {
                num_users: header.num_users,
                num_items: header.num_items,
                dim: b.dim,
                gnn_layers: b.gnn_layers,
                sa_layers: b.sa_layers,
            };
            let zero = ParameterSet::zeros(shape);
            let declared: Vec<_> = b.tensors.iter().map(|t| (&t.name, &t.shape)).collect();
            let expected: Vec<_> = zero
                .layout()
                .entries()
                .iter()
                .map(|e| (&e.name, &e.shape))
                .collect();
            if declared != expected {
                return Err(ModelError::Checkpoint(format!(
                    "branch {name}: tensor list does not match its dims"
                )));
            }
            let mut raw = vec![0u8; 4 * zero.len()];
            r.read_exact(&mut raw)?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            branches.push(ParameterSet::from_values(shape, values).expect("length checked"));
        }
        let otl = branches.pop().expect("two branches");
        let gtl = branches.pop().expect("two branches");
        Ok(Checkpoint {
            kind: header.kind,
            config_hash: header.config_hash,
            model: header.model,
            gtl,
            otl,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }

    /// Errors unless the checkpoint was built for `num_users x num_items`.
    pub fn check_dims(&self, num_users: usize, num_items: usize) -> Result<(), ModelError> {
        if self.num_users() != num_users || self.num_items() != num_items {
            return Err(ModelError::DimMismatch {
                what: "users x items".into(),
                checkpoint: format!("{} x {}", self.num_users(), self.num_items()),
                data: format!("{num_users} x {num_items}"),
            });
        }
        Ok(())
    }
}
