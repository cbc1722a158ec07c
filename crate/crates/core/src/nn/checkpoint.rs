//! Model checkpoints: a directory with `manifest.toml` (configuration,
//! provenance, tensor index) and `params.bin` (concatenated NFPD tensors,
//! stored at 32-bit).

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Module, ModelConfig, PosNet, Real, SlotKind};
use crate::dataset::tensor_file::{decode, encode};
use crate::dataset::u64_string;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const PARAMS_FILE: &str = "params.bin";
pub const CHECKPOINT_VERSION: u32 = 1;

/// How a checkpoint came to be.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(with = "u64_string")]
    pub init_seed: u64,
    pub epochs: usize,
    pub best_epoch: Option<usize>,
    pub best_held_out_loss: Option<f64>,
    /// `normalized` or `raw`.
    pub loss_space: Option<String>,
    pub feature: Option<String>,
    pub r_range: Option<(f64, f64)>,
    pub eta_range: Option<(f64, f64)>,
    pub dataset_seed: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    /// `trainable` or `running`.
    pub kind: String,
    pub dims: Vec<usize>,
    pub offset: u64,
    pub crc32: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub config: ModelConfig,
    pub provenance: Provenance,
    pub tensors: Vec<TensorEntry>,
}

fn kind_name(k: SlotKind) -> &'static str {
    match k {
        SlotKind::Trainable => "trainable",
        SlotKind::Running => "running",
    }
}

/// Writes `net` and `provenance` into `dir` (created if needed).
pub fn save<T: Real>(net: &mut PosNet<T>, provenance: &Provenance, dir: &Path) -> Result<CheckpointManifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let config = net.config().clone();
    let mut bytes = Vec::new();
    let mut tensors = Vec::new();
    for slot in net.all_slots() {
        let data: Vec<f32> = slot.param.value.iter().map(|v| v.as_f64() as f32).collect();
        let (chunk, crc) = encode(&slot.param.shape, &data)?;
        tensors.push(TensorEntry {
            name: slot.name,
            kind: kind_name(slot.kind).into(),
            dims: slot.param.shape.clone(),
            offset: bytes.len() as u64,
            crc32: format!("{crc:08x}"),
        });
        bytes.extend_from_slice(&chunk);
    }
    let params = dir.join(PARAMS_FILE);
    std::fs::write(&params, &bytes).map_err(|e| Error::io(&params, e))?;
    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_VERSION,
        config,
        provenance: provenance.clone(),
        tensors,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = toml::to_string_pretty(&manifest).map_err(|e| Error::Format {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: CheckpointManifest = toml::from_str(&text).map_err(|e| Error::Format {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    if manifest.format_version != CHECKPOINT_VERSION {
        return Err(Error::Format {
            path,
            reason: format!(
                "checkpoint version {}, expected {CHECKPOINT_VERSION}",
                manifest.format_version
            ),
        });
    }
    Ok(manifest)
}

/// Rebuilds the network stored in `dir`, verifying names, shapes and checksums.
pub fn load<T: Real>(dir: &Path) -> Result<(PosNet<T>, CheckpointManifest)> {
    let manifest = read_manifest(dir)?;
    let params = dir.join(PARAMS_FILE);
    let bytes = std::fs::read(&params).map_err(|e| Error::io(&params, e))?;
    let corrupt = |reason: String| Error::Corrupt {
        path: params.clone(),
        reason,
    };
    let mut net = PosNet::<T>::new(manifest.config.clone(), manifest.provenance.init_seed)?;
    let mut seen = BTreeSet::new();
    {
        let mut slots = net.all_slots();
        if slots.len() != manifest.tensors.len() {
            return Err(corrupt(format!(
                "manifest lists {} tensors, the configured model has {}",
                manifest.tensors.len(),
                slots.len()
            )));
        }
        for entry in &manifest.tensors {
            let slot = slots
                .iter_mut()
                .find(|s| s.name == entry.name)
                .ok_or_else(|| corrupt(format!("unknown tensor '{}'", entry.name)))?;
            if !seen.insert(entry.name.clone()) {
                return Err(corrupt(format!("duplicate tensor '{}'", entry.name)));
            }
            let offset = usize::try_from(entry.offset)
                .ok()
                .filter(|&o| o <= bytes.len())
                .ok_or_else(|| corrupt(format!("tensor '{}' offset past end of file", entry.name)))?;
            let (raw, _) = decode::<f32>(&bytes[offset..], &params)?;
            let want = u32::from_str_radix(&entry.crc32, 16)
                .map_err(|_| corrupt(format!("bad checksum '{}' for '{}'", entry.crc32, entry.name)))?;
            if raw.crc32 != want {
                return Err(corrupt(format!(
                    "checksum mismatch for '{}': stored {want:08x}, computed {:08x}",
                    entry.name, raw.crc32
                )));
            }
            if raw.dims != slot.param.shape || raw.dims != entry.dims {
                return Err(corrupt(format!(
                    "tensor '{}' has dims {:?}, model expects {:?}",
                    entry.name, raw.dims, slot.param.shape
                )));
            }
            slot.param.value = raw.data.iter().map(|&v| T::of(v as f64)).collect();
        }
    }
    Ok((net, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    fn small() -> ModelConfig {
        ModelConfig::proposed().with_width(4).for_input(8, 8)
    }

    #[test]
    fn round_trip_preserves_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let mut net = PosNet::<f32>::new(small(), 7).unwrap();
        // Move running statistics away from their defaults.
        let x = Array4::from_shape_fn((4, 2, 8, 8), |(b, c, i, j)| ((b + 2 * c + i * j) as f32).sin());
        net.forward(&x).unwrap();
        let prov = Provenance {
            init_seed: 7,
            epochs: 3,
            best_epoch: Some(2),
            loss_space: Some("normalized".into()),
            ..Default::default()
        };
        save(&mut net, &prov, dir.path()).unwrap();
        let (back, manifest) = load::<f32>(dir.path()).unwrap();
        assert_eq!(manifest.provenance, prov);
        assert_eq!(back.infer(&x).unwrap(), net.infer(&x).unwrap());
    }

    #[test]
    fn detects_corruption_and_version() {
        let dir = tempfile::tempdir().unwrap();
        let mut net = PosNet::<f32>::new(small(), 1).unwrap();
        save(&mut net, &Provenance::default(), dir.path()).unwrap();
        let params = dir.path().join(PARAMS_FILE);
        let mut bytes = std::fs::read(&params).unwrap();
        let n = bytes.len();
        bytes[n - 1] ^= 0x55;
        std::fs::write(&params, &bytes).unwrap();
        assert!(matches!(load::<f32>(dir.path()), Err(Error::Corrupt { .. })));

        let mpath = dir.path().join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&mpath).unwrap();
        std::fs::write(&mpath, text.replace("format_version = 1", "format_version = 9")).unwrap();
        assert!(matches!(load::<f32>(dir.path()), Err(Error::Format { .. })));
    }
}
