//! Checkpoint archive.
//!
//! ```text
//! b"MSKCKPT1" | manifest length (u64 LE) | manifest JSON | parameters (f32 LE) | SHA-256 of all preceding bytes
//! ```
//!
//! The manifest records the backbone, training step, the canonical run
//! configuration and the name, shape and offset of every parameter array.

use std::fs;
use std::path::Path;

use masksup_core::{UNet, UNetConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MSKCKPT1";
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub backbone_id: String,
    pub num_classes: usize,
    pub in_channels: usize,
    pub base_width: usize,
    pub depth: usize,
    pub convs_per_block: usize,
    pub norm_groups: usize,
    pub seed: u64,
    pub step: usize,
    pub config: String,
    pub arrays: Vec<ArrayEntry>,
}

pub struct Checkpoint {
    pub net: UNet<f32>,
    pub config: RunConfig,
    pub step: usize,
    pub manifest: Manifest,
}

pub fn encode(net: &UNet<f32>, config: &RunConfig, step: usize) -> Vec<u8> {
    let c = net.config();
    let manifest = Manifest {
        backbone_id: c.backbone_id(),
        num_classes: c.num_classes,
        in_channels: c.in_channels,
        base_width: c.base_width,
        depth: c.depth,
        convs_per_block: c.convs_per_block,
        norm_groups: c.norm_groups,
        seed: net.seed(),
        step,
        config: config.to_toml(),
        arrays: net
            .params()
            .specs()
            .iter()
            .map(|s| ArrayEntry { name: s.name.clone(), shape: s.shape.clone(), offset: s.offset })
            .collect(),
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let values = net.params().values();
    let mut out = Vec::with_capacity(16 + json.len() + 4 * values.len() + DIGEST_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let malformed = |reason: &str| Error::BadCheckpoint { path: path.to_owned(), reason: reason.to_owned() };
    if bytes.len() < MAGIC.len() + 8 + DIGEST_LEN {
        return Err(Error::ChecksumMismatch { path: path.to_owned() });
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::ChecksumMismatch { path: path.to_owned() });
    }
    if &body[..8] != MAGIC {
        return Err(malformed("bad magic"));
    }
    let json_len = u64::from_le_bytes(body[8..16].try_into().expect("8 bytes")) as usize;
    let json = body.get(16..16 + json_len).ok_or_else(|| malformed("manifest overruns file"))?;
    let manifest: Manifest = serde_json::from_slice(json).map_err(|e| malformed(&e.to_string()))?;
    let raw = &body[16 + json_len..];
    if raw.len() % 4 != 0 {
        return Err(malformed("parameter block is not a whole number of f32 values"));
    }

    let cfg = UNetConfig {
        in_channels: manifest.in_channels,
        num_classes: manifest.num_classes,
        base_width: manifest.base_width,
        depth: manifest.depth,
        convs_per_block: manifest.convs_per_block,
        norm_groups: manifest.norm_groups,
    };
    let mut net = UNet::<f32>::new(cfg, manifest.seed)?;
    let expected: Vec<ArrayEntry> = net
        .params()
        .specs()
        .iter()
        .map(|s| ArrayEntry { name: s.name.clone(), shape: s.shape.clone(), offset: s.offset })
        .collect();
    if expected != manifest.arrays {
        return Err(malformed("parameter arrays do not match the recorded backbone"));
    }
    let values = net.params_mut().values_mut();
    if raw.len() != 4 * values.len() {
        return Err(malformed("parameter count does not match the recorded backbone"));
    }
    for (v, chunk) in values.iter_mut().zip(raw.chunks_exact(4)) {
        *v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
    }
    let config = RunConfig::from_toml_str(&manifest.config)?;
    Ok(Checkpoint { net, config, step: manifest.step, manifest })
}

/// Writes to a sibling temporary file first so readers never see a partial archive.
pub fn save_checkpoint(net: &UNet<f32>, config: &RunConfig, step: usize, path: &Path) -> Result<()> {
    let tmp = path.with_extension("partial");
    fs::write(&tmp, encode(net, config, step)).map_err(Error::io(&tmp))?;
    fs::rename(&tmp, path).map_err(Error::io(path))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net() -> (UNet<f32>, RunConfig) {
        let cfg = RunConfig::from_toml_str("base_width = 4\ndepth = 2\nseed = 3").unwrap();
        (UNet::new(cfg.train.backbone, 3).unwrap(), cfg)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (mut n, cfg) = net();
        n.params_mut().values_mut()[0] = f32::from_bits(0x3F80_0001);
        let bytes = encode(&n, &cfg, 17);
        let ck = decode(&bytes, Path::new("mem")).unwrap();
        let bits = |n: &UNet<f32>| n.params().values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&ck.net), bits(&n));
        assert_eq!(ck.step, 17);
        assert_eq!(ck.config, cfg);
        assert_eq!(ck.manifest.backbone_id, n.config().backbone_id());
    }

    #[test]
    fn truncation_and_bit_flips_fail_the_checksum() {
        let (n, cfg) = net();
        let bytes = encode(&n, &cfg, 0);
        for cut in [1, 5, 100, bytes.len() - 1] {
            assert!(matches!(
                decode(&bytes[..bytes.len() - cut], Path::new("t")),
                Err(Error::ChecksumMismatch { .. })
            ));
        }
        let mut flipped = bytes.clone();
        flipped[40] ^= 1;
        assert!(matches!(decode(&flipped, Path::new("f")), Err(Error::ChecksumMismatch { .. })));
    }
}
