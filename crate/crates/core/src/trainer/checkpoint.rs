//! Checkpoint container.
//!
//! ```text
//! b"CFNTCKPT"                 magic
//! u32 LE                      format version
//! u64 LE                      header length in bytes
//! header                      JSON: config, seed, hyperparameters, metrics,
//!                             and the shape of every stored tensor
//! payload                     per layer: weights, bias, weight velocity,
//!                             bias velocity, as little-endian f64
//! ```
//!
//! The payload length must match the header exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{HyperParams, Metrics};
use crate::error::{Error, Result};
use crate::network::{Network, NetworkConfig};
use crate::tensor::{LayerParams, Tensor};

const MAGIC: &[u8; 8] = b"CFNTCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: NetworkConfig,
    seed: u64,
    hyper: HyperParams,
    metrics: Metrics,
    layers: Vec<LayerShapes>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerShapes {
    weights: Vec<usize>,
    bias: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub net: Network,
    pub hyper: HyperParams,
    pub metrics: Metrics,
}

pub fn encode(net: &Network, hyper: &HyperParams, metrics: &Metrics) -> Result<Vec<u8>> {
    let header = Header {
        config: net.config().clone(),
        seed: net.seed(),
        hyper: hyper.clone(),
        metrics: metrics.clone(),
        layers: net
            .layers()
            .map(|l| LayerShapes {
                weights: l.weights.shape().to_vec(),
                bias: l.bias.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    let mut out = Vec::with_capacity(json.len() + 8 * 2 * net.param_count() + 20);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for l in net.layers() {
        for block in [&l.weights.data, &l.bias.data, &l.weight_velocity, &l.bias_velocity] {
            for v in block {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Format(format!("truncated while reading {what}")));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

fn take_f64s(bytes: &mut &[u8], n: usize) -> Result<Vec<f64>> {
    let raw = take(bytes, n * 8, "parameters")?;
    Ok(raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn decode(mut bytes: &[u8]) -> Result<Checkpoint> {
    let b = &mut bytes;
    if take(b, 8, "magic")? != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(take(b, 4, "version")?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint version {version}, this build reads {CHECKPOINT_VERSION}"
        )));
    }
    let len = u64::from_le_bytes(take(b, 8, "header length")?.try_into().unwrap());
    let len = usize::try_from(len).map_err(|_| Error::Format("header length overflow".into()))?;
    let header: Header = serde_json::from_slice(take(b, len, "header")?)
        .map_err(|e| Error::Format(format!("header: {e}")))?;
    let mut layers = Vec::with_capacity(header.layers.len());
    for s in &header.layers {
        let wn: usize = s.weights.iter().product();
        let bn: usize = s.bias.iter().product();
        let weights = Tensor::from_vec(&s.weights, take_f64s(b, wn)?)
            .map_err(|e| Error::Format(e.to_string()))?;
        let bias =
            Tensor::from_vec(&s.bias, take_f64s(b, bn)?).map_err(|e| Error::Format(e.to_string()))?;
        let mut layer = LayerParams::new(weights, bias);
        layer.weight_velocity = take_f64s(b, wn)?;
        layer.bias_velocity = take_f64s(b, bn)?;
        layers.push(layer);
    }
    if !b.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes", b.len())));
    }
    let net = Network::from_layers(header.config, header.seed, layers)
        .map_err(|e| Error::Format(format!("layers do not fit config: {e}")))?;
    Ok(Checkpoint {
        net,
        hyper: header.hyper,
        metrics: header.metrics,
    })
}

pub fn checkpoint_save(net: &Network, hyper: &HyperParams, metrics: &Metrics, path: &Path) -> Result<()> {
    let bytes = encode(net, hyper, metrics)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn checkpoint_load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
