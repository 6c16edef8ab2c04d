//! `SCK1` checkpoints: magic, `u32` version, `u32` length + JSON config
//! block, then little-endian `f32` tensors in declaration order (parameters,
//! then ADAM first moments, then second moments when present).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::AdamHyper;
use super::{AdamState, Network, NetworkConfig};
use crate::edge_profile::ProfileConfig;
use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SCK1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct AdamHeader {
    step: u64,
    #[serde(flatten)]
    hyper: AdamHyper,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    network: NetworkConfig,
    profile: ProfileConfig,
    tensors: Vec<TensorEntry>,
    adam: Option<AdamHeader>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network<f32>,
    pub adam: Option<AdamState<f32>>,
    pub profile: ProfileConfig,
}

pub fn encode_checkpoint(
    net: &Network<f32>,
    adam: Option<&AdamState<f32>>,
    profile: &ProfileConfig,
) -> Result<Vec<u8>> {
    let header = Header {
        network: net.config().clone(),
        profile: profile.clone(),
        tensors: net
            .config()
            .tensor_table()
            .into_iter()
            .map(|(name, shape)| TensorEntry { name, shape })
            .collect(),
        adam: adam.map(|a| AdamHeader {
            step: a.step,
            hyper: a.hyper,
        }),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    let mut push = |t: &Vec<f32>| {
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    net.params().for_each(&mut push);
    if let Some(a) = adam {
        a.first_moment.iter().for_each(&mut push);
        a.second_moment.iter().for_each(&mut push);
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 12 {
        return Err(Error::Checkpoint("truncated header".into()));
    }
    if &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic, expected SCK1".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let json_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let json = bytes
        .get(12..12 + json_len)
        .ok_or_else(|| Error::Checkpoint("truncated config block".into()))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| Error::Checkpoint(format!("config block: {e}")))?;
    header
        .network
        .validate()
        .map_err(|e| Error::Checkpoint(e.to_string()))?;

    let expected = header.network.tensor_table();
    let consistent = expected.len() == header.tensors.len()
        && expected
            .iter()
            .zip(&header.tensors)
            .all(|((n, s), t)| *n == t.name && *s == t.shape);
    if !consistent {
        return Err(Error::Checkpoint("shape table inconsistent with network config".into()));
    }
    let sizes: Vec<usize> = expected.iter().map(|(_, s)| s.iter().product()).collect();
    let per_copy: usize = sizes.iter().sum();
    let copies = if header.adam.is_some() { 3 } else { 1 };
    let payload = &bytes[12 + json_len..];
    if payload.len() != 4 * per_copy * copies {
        return Err(Error::Checkpoint(format!(
            "payload has {} bytes, shape table needs {}",
            payload.len(),
            4 * per_copy * copies
        )));
    }
    let mut floats = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    let mut read_copy = || -> Vec<Vec<f32>> { sizes.iter().map(|&n| floats.by_ref().take(n).collect()).collect() };
    let params = read_copy();
    if params.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Checkpoint("non-finite parameter".into()));
    }
    let network = Network::from_parts(header.network, params)?;
    let adam = match header.adam {
        Some(a) => {
            let first_moment = read_copy();
            let second_moment = read_copy();
            Some(AdamState {
                step: a.step,
                first_moment,
                second_moment,
                hyper: a.hyper,
            })
        }
        None => None,
    };
    Ok(Checkpoint {
        network,
        adam,
        profile: header.profile,
    })
}

pub fn save_checkpoint(
    net: &Network<f32>,
    adam: Option<&AdamState<f32>>,
    profile: &ProfileConfig,
    path: impl AsRef<Path>,
) -> Result<()> {
    write_atomic(path.as_ref(), &encode_checkpoint(net, adam, profile)?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
