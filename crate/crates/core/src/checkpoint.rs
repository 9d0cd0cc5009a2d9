//! Binary checkpoints.
//!
//! Layout: the 8-byte magic `ALCKPT01`, a little-endian `u64` header length, a
//! JSON header, then every weight and bias tensor as little-endian `f64` in the
//! order the header lists its blocks and layers (weights before bias). AL
//! blocks are listed per component as f, g, b, h. Optimizer state is not saved.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::al::{AlNetwork, Component, NetworkPlan, SubBlock};
use crate::bp::{BpNetwork, BpPlan};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::{Activation, AdamConfig, DenseLayer, MlpBlock};
use crate::train::Model;

pub const MAGIC: &[u8; 8] = b"ALCKPT01";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub fan_in: usize,
    pub fan_out: usize,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub name: String,
    pub layers: Vec<LayerSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "tag", rename_all = "lowercase")]
pub enum NetworkSpec {
    Al { plan: NetworkPlan },
    Bp { plan: BpPlan },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub network: NetworkSpec,
    pub seed: u64,
    pub epoch: usize,
    pub blocks: Vec<BlockSpec>,
}

fn named_blocks(model: &Model) -> Vec<(String, &MlpBlock)> {
    match model {
        Model::Al(net) => net
            .components()
            .iter()
            .flat_map(|c| SubBlock::ALL.map(|s| (format!("c{}.{}", c.index(), s), c.block(s))))
            .collect(),
        Model::Bp(net) => vec![("stack".to_string(), net.block())],
    }
}

fn spec_of(name: String, block: &MlpBlock) -> BlockSpec {
    BlockSpec {
        name,
        layers: block
            .layers()
            .iter()
            .map(|l| LayerSpec {
                fan_in: l.fan_in(),
                fan_out: l.fan_out(),
                activation: l.activation(),
            })
            .collect(),
    }
}

pub fn save(path: impl AsRef<Path>, model: &Model, seed: u64, epoch: usize) -> Result<()> {
    let path = path.as_ref();
    let blocks = named_blocks(model);
    let header = Header {
        network: match model {
            Model::Al(n) => NetworkSpec::Al {
                plan: n.plan().clone(),
            },
            Model::Bp(n) => NetworkSpec::Bp {
                plan: n.plan().clone(),
            },
        },
        seed,
        epoch,
        blocks: blocks.iter().map(|(n, b)| spec_of(n.clone(), b)).collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;

    let io = |e| Error::io(path, e);
    let mut out = BufWriter::new(fs::File::create(path).map_err(io)?);
    out.write_all(MAGIC).map_err(io)?;
    out.write_all(&(json.len() as u64).to_le_bytes())
        .map_err(io)?;
    out.write_all(&json).map_err(io)?;
    for (_, block) in &blocks {
        for tensor in block.params() {
            for v in tensor.as_slice() {
                out.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
    }
    out.flush().map_err(io)
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
            .ok_or_else(|| {
                Error::Checkpoint(format!(
                    "truncated: wanted {n} bytes at offset {}",
                    self.pos
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Matrix> {
        let raw = self.take(rows * cols * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Matrix::new(rows, cols, data)
    }
}

fn read_block(reader: &mut Reader<'_>, spec: &BlockSpec) -> Result<MlpBlock> {
    let layers = spec
        .layers
        .iter()
        .map(|l| {
            let w = reader.matrix(l.fan_in, l.fan_out)?;
            let b = reader.matrix(1, l.fan_out)?;
            DenseLayer::new(w, b, l.activation)
        })
        .collect::<Result<Vec<_>>>()?;
    if layers.is_empty() {
        return Err(Error::Checkpoint(format!(
            "block {} has no layers",
            spec.name
        )));
    }
    MlpBlock::from_layers(layers)
}

/// Reads a checkpoint. Optimizer state starts fresh with `adam`.
pub fn load(path: impl AsRef<Path>, adam: AdamConfig) -> Result<(Header, Model)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut reader = Reader {
        bytes: &bytes,
        pos: 0,
    };
    if reader.take(8)? != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not a checkpoint",
            path.display()
        )));
    }
    let len = u64::from_le_bytes(reader.take(8)?.try_into().expect("8 bytes"));
    let header: Header = serde_json::from_slice(reader.take(len as usize)?)
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    let blocks = header
        .blocks
        .iter()
        .map(|spec| read_block(&mut reader, spec))
        .collect::<Result<Vec<_>>>()?;
    if reader.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after the last tensor",
            bytes.len() - reader.pos
        )));
    }

    let model = match &header.network {
        NetworkSpec::Al { plan } => {
            if blocks.len() != 4 * plan.num_components() {
                return Err(Error::Checkpoint(
                    "block count does not match the plan".into(),
                ));
            }
            let mut it = blocks.into_iter();
            let mut components = Vec::with_capacity(plan.num_components());
            for i in 1..=plan.num_components() {
                let mut next = || it.next().expect("count checked");
                let (f, g, b, h) = (next(), next(), next(), next());
                components.push(Component::new(i, f, g, b, h, adam)?);
            }
            let net = AlNetwork::from_components(plan.input_dim, plan.n_classes, components)?;
            if net.plan() != plan {
                return Err(Error::Checkpoint(
                    "tensor shapes disagree with the stored plan".into(),
                ));
            }
            Model::Al(net)
        }
        NetworkSpec::Bp { plan } => {
            let [block]: [MlpBlock; 1] = blocks
                .try_into()
                .map_err(|_| Error::Checkpoint("baseline checkpoint must hold one block".into()))?;
            Model::Bp(BpNetwork::from_block(plan.clone(), block, adam)?)
        }
    };
    Ok((header, model))
}
