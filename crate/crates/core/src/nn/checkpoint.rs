//! Binary network snapshots.
//!
//! Layout (little-endian): magic `MMCK`, version `u16`, layer count `u32`,
//! then per layer a kind tag `u8` followed by its shape and values, then a
//! `u32` length and that many bytes of UTF-8 JSON metadata. Parameters and
//! running statistics are stored as `f32`; scalar hyperparameters as `f64`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::layers::{Activation, BatchNorm, Dense, Dropout};
use super::matrix::Matrix;
use super::network::{Layer, Network};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MMCK";
pub const VERSION: u16 = 1;

const TAG_DENSE: u8 = 1;
const TAG_BATCH_NORM: u8 = 2;
const TAG_RELU: u8 = 3;
const TAG_LEAKY_RELU: u8 = 4;
const TAG_SOFTMAX: u8 = 5;
const TAG_DROPOUT: u8 = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct CheckpointMeta {
    pub stage: String,
    pub seed: u64,
    pub steps: u64,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_f32s(out: &mut Vec<u8>, vals: &[f64]) {
    for &v in vals {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn encode(net: &Network, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_u32(&mut out, net.layers().len());
    for layer in net.layers() {
        match layer {
            Layer::Dense(d) => {
                out.push(TAG_DENSE);
                put_u32(&mut out, d.input_dim());
                put_u32(&mut out, d.output_dim());
                out.push(d.bias.is_some() as u8);
                put_f32s(&mut out, d.weights.as_slice());
                if let Some(b) = &d.bias {
                    put_f32s(&mut out, b);
                }
            }
            Layer::BatchNorm(b) => {
                out.push(TAG_BATCH_NORM);
                put_u32(&mut out, b.dim());
                out.extend_from_slice(&b.momentum.to_le_bytes());
                out.extend_from_slice(&b.epsilon.to_le_bytes());
                for v in [&b.gamma, &b.beta, &b.running_mean, &b.running_var] {
                    put_f32s(&mut out, v);
                }
            }
            Layer::Activation(Activation::Relu) => out.push(TAG_RELU),
            Layer::Activation(Activation::LeakyRelu { slope }) => {
                out.push(TAG_LEAKY_RELU);
                out.extend_from_slice(&slope.to_le_bytes());
            }
            Layer::Activation(Activation::Softmax) => out.push(TAG_SOFTMAX),
            Layer::Dropout(d) => {
                out.push(TAG_DROPOUT);
                out.extend_from_slice(&d.rate.to_le_bytes());
            }
        }
    }
    let json = serde_json::to_vec(meta)?;
    put_u32(&mut out, json.len());
    out.extend_from_slice(&json);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(format!("truncated at byte {}", self.pos)),
        }
    }

    fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> std::result::Result<u16, String> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> std::result::Result<usize, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> std::result::Result<Vec<f64>, String> {
        let bytes = self.take(n.checked_mul(4).ok_or("size overflow")?)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect())
    }
}

fn decode_inner(bytes: &[u8]) -> std::result::Result<(Network, CheckpointMeta), String> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err("bad magic".into());
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let count = r.u32()?;
    let mut layers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let layer = match r.u8()? {
            TAG_DENSE => {
                let input = r.u32()?;
                let output = r.u32()?;
                let has_bias = r.u8()? != 0;
                let w = r.f32s(input * output)?;
                let bias = if has_bias { Some(r.f32s(output)?) } else { None };
                let weights = Matrix::from_vec(output, input, w).map_err(|e| e.to_string())?;
                Layer::Dense(Dense::from_parts(weights, bias).map_err(|e| e.to_string())?)
            }
            TAG_BATCH_NORM => {
                let dim = r.u32()?;
                let mut bn = BatchNorm::new(dim);
                bn.momentum = r.f64()?;
                bn.epsilon = r.f64()?;
                bn.gamma = r.f32s(dim)?;
                bn.beta = r.f32s(dim)?;
                bn.running_mean = r.f32s(dim)?;
                bn.running_var = r.f32s(dim)?;
                Layer::BatchNorm(bn)
            }
            TAG_RELU => Layer::Activation(Activation::Relu),
            TAG_LEAKY_RELU => Layer::Activation(Activation::LeakyRelu { slope: r.f64()? }),
            TAG_SOFTMAX => Layer::Activation(Activation::Softmax),
            TAG_DROPOUT => Layer::Dropout(Dropout::new(r.f64()?, 0).map_err(|e| e.to_string())?),
            tag => return Err(format!("unknown layer tag {tag}")),
        };
        layers.push(layer);
    }
    let len = r.u32()?;
    let meta: CheckpointMeta =
        serde_json::from_slice(r.take(len)?).map_err(|e| format!("metadata: {e}"))?;
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    let mut net = Network::new(layers);
    net.reseed_dropout(meta.seed);
    Ok((net, meta))
}

pub fn decode(bytes: &[u8], origin: &Path) -> Result<(Network, CheckpointMeta)> {
    decode_inner(bytes).map_err(|reason| Error::Format {
        format: "checkpoint",
        path: origin.to_path_buf(),
        reason,
    })
}

pub fn save(path: &Path, net: &Network, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    let bytes = encode(net, meta)?;
    std::fs::write(path, &bytes)?;
    Ok(bytes)
}

pub fn load(path: &Path) -> Result<(Network, CheckpointMeta)> {
    let bytes = std::fs::read(path)?;
    decode(&bytes, path)
}

/// Hex SHA-256 of encoded checkpoint bytes.
pub fn digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
