//! `<stem>.json` manifest plus `<stem>.bin` holding every parameter tensor,
//! then every first-moment tensor, then every second-moment tensor, as
//! little-endian f64.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamConfig, AdamState, NetArchitecture, NetParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: NetArchitecture,
    pub params: NetParams,
    pub optimizer: AdamState,
    pub step: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    arch: NetArchitecture,
    shapes: Vec<usize>,
    step: usize,
    optimizer: AdamConfig,
    optimizer_t: usize,
}

pub fn save_checkpoint(dir: &Path, stem: &str, ckpt: &Checkpoint) -> Result<()> {
    let manifest = Manifest {
        arch: ckpt.arch.clone(),
        shapes: ckpt.params.tensors.iter().map(Vec::len).collect(),
        step: ckpt.step,
        optimizer: ckpt.optimizer.config,
        optimizer_t: ckpt.optimizer.t,
    };
    let mut blob = Vec::with_capacity(ckpt.params.count() * 3 * 8);
    for set in [&ckpt.params, &ckpt.optimizer.m, &ckpt.optimizer.v] {
        for v in set.tensors.iter().flatten() {
            blob.extend(v.to_le_bytes());
        }
    }
    std::fs::create_dir_all(dir)?;
    std::fs::write(
        dir.join(format!("{stem}.json")),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    std::fs::write(dir.join(format!("{stem}.bin")), blob)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path, stem: &str) -> Result<Checkpoint> {
    let manifest: Manifest = serde_json::from_slice(&std::fs::read(dir.join(format!("{stem}.json")))?)?;
    let bin_path = dir.join(format!("{stem}.bin"));
    let bad = |reason: &str| Error::Format {
        path: bin_path.clone(),
        reason: reason.into(),
    };
    manifest.arch.validate()?;
    let expected: Vec<usize> = manifest.arch.param_shapes().iter().flat_map(|&(w, b)| [w, b]).collect();
    if expected != manifest.shapes {
        return Err(bad("tensor shapes do not match the architecture"));
    }
    let blob = std::fs::read(&bin_path)?;
    let total: usize = manifest.shapes.iter().sum();
    if blob.len() != total * 3 * 8 {
        return Err(bad("blob size does not match the manifest"));
    }
    let mut values = blob.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap()));
    let mut read_set = || NetParams {
        tensors: manifest
            .shapes
            .iter()
            .map(|&n| values.by_ref().take(n).collect())
            .collect(),
    };
    let params = read_set();
    let m = read_set();
    let v = read_set();
    Ok(Checkpoint {
        arch: manifest.arch,
        params,
        optimizer: AdamState {
            config: manifest.optimizer,
            m,
            v,
            t: manifest.optimizer_t,
        },
        step: manifest.step,
    })
}
