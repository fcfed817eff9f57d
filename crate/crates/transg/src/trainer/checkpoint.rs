//! Checkpoint directory format: `manifest.json` (shapes, names, config,
//! version, optimizer and RNG state) plus `params.bin` (little-endian f32,
//! concatenated in manifest order; per entry the parameter value is followed
//! by its Adam first and second moments).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{Result, TransgError};
use crate::numerics::{AdamState, ParamSet, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Full resumable training state.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub params: ParamSet,
    pub adam: AdamState,
    pub epoch: usize,
    pub rng_state: u64,
}

#[derive(Serialize, Deserialize)]
struct EntryMeta {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
}

#[derive(Serialize, Deserialize)]
struct ManifestFile {
    version: u32,
    config: TrainConfig,
    epoch: usize,
    adam: AdamState,
    rng_state: u64,
    entries: Vec<EntryMeta>,
}

fn push_f32(buf: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

fn read_f32(buf: &[u8], offset: &mut usize, n: usize) -> Result<Vec<f64>> {
    let need = n * 4;
    if *offset + need > buf.len() {
        return Err(TransgError::Checkpoint(format!(
            "params.bin truncated: need {} bytes at offset {}, file has {}",
            need,
            *offset,
            buf.len()
        )));
    }
    let out = buf[*offset..*offset + need]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    *offset += need;
    Ok(out)
}

pub fn save_checkpoint(dir: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::create_dir_all(dir)?;
    let entries: Vec<EntryMeta> = ckpt
        .params
        .iter()
        .map(|p| EntryMeta {
            name: p.name.clone(),
            shape: p.value.shape.clone(),
            trainable: p.trainable,
        })
        .collect();
    let manifest = ManifestFile {
        version: CHECKPOINT_VERSION,
        config: ckpt.config.clone(),
        epoch: ckpt.epoch,
        adam: ckpt.adam.clone(),
        rng_state: ckpt.rng_state,
        entries,
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    let mut buf = Vec::with_capacity(ckpt.params.numel() * 12);
    for p in ckpt.params.iter() {
        push_f32(&mut buf, &p.value.data);
        push_f32(&mut buf, &p.adam_m.data);
        push_f32(&mut buf, &p.adam_v.data);
    }
    fs::write(dir.join("params.bin"), buf)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let manifest: ManifestFile =
        serde_json::from_reader(fs::File::open(dir.join("manifest.json"))?)?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(TransgError::Checkpoint(format!(
            "version {} unsupported (expected {})",
            manifest.version, CHECKPOINT_VERSION
        )));
    }
    let buf = fs::read(dir.join("params.bin"))?;
    let expected: usize = manifest
        .entries
        .iter()
        .map(|e| e.shape.iter().product::<usize>() * 12)
        .sum();
    if buf.len() != expected {
        return Err(TransgError::Checkpoint(format!(
            "params.bin is {} bytes, manifest expects {}",
            buf.len(),
            expected
        )));
    }
    let mut params = ParamSet::new();
    let mut offset = 0;
    for e in &manifest.entries {
        let n: usize = e.shape.iter().product();
        let value = Tensor::new(e.shape.clone(), read_f32(&buf, &mut offset, n)?)?;
        let m = Tensor::new(e.shape.clone(), read_f32(&buf, &mut offset, n)?)?;
        let v = Tensor::new(e.shape.clone(), read_f32(&buf, &mut offset, n)?)?;
        params.add(&e.name, value, e.trainable);
        let p = params.get_mut(&e.name).unwrap();
        p.adam_m = m;
        p.adam_v = v;
    }
    Ok(Checkpoint {
        config: manifest.config,
        params,
        adam: manifest.adam,
        epoch: manifest.epoch,
        rng_state: manifest.rng_state,
    })
}
