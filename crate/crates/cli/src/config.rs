//! Run configuration: a TOML file merged with command-line overrides.
//!
//! Angles are given in degrees here and converted to radians on resolve.

use std::path::{Path, PathBuf};

use nfpos::dataset::{FeatureKind, ScenarioConfig};
use nfpos::geometry::{wavelength_from_frequency, ArrayConfig};
use nfpos::harness::{LossSpace, TrainConfig};
use nfpos::nn::{ModelConfig, ModelKind};
use nfpos::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub out: Option<PathBuf>,
    pub data: Option<PathBuf>,
    #[serde(default)]
    pub array: ArraySection,
    #[serde(default)]
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArraySection {
    /// `uca` or `ula`.
    pub kind: String,
    pub elements: usize,
    pub radius_m: f64,
    pub spacing_m: Option<f64>,
    pub frequency_hz: f64,
}

impl Default for ArraySection {
    fn default() -> Self {
        Self {
            kind: "uca".into(),
            elements: 64,
            radius_m: 1.0,
            spacing_m: None,
            frequency_hz: 3.5e9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSection {
    pub snr_db: f64,
    pub snapshots: usize,
    pub feature: FeatureKind,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    pub range_m: [f64; 2],
    pub angle_deg: [f64; 2],
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            snr_db: 20.0,
            snapshots: 100,
            feature: FeatureKind::Covariance,
            n_train: 8000,
            n_test: 2000,
            seed: 1,
            range_m: [2.0, 10.0],
            angle_deg: [30.0, 150.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub width: usize,
    /// Explicit input `[H, W]`; taken from the dataset when absent.
    pub input: Option<[usize; 2]>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            kind: ModelKind::Proposed,
            width: 128,
            input: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub loss_space: LossSpace,
    pub held_out_fraction: f64,
    /// Train on only the first `n` training samples.
    pub n_train: Option<usize>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            epochs: t.epochs,
            seed: t.seed,
            loss_space: t.loss_space,
            held_out_fraction: t.held_out_fraction,
            n_train: None,
        }
    }
}

/// Flags that override file values when present.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub seed: Option<u64>,
    pub snr: Option<f64>,
    pub snapshots: Option<usize>,
    pub feature: Option<FeatureKind>,
    pub model: Option<ModelKind>,
    pub width: Option<usize>,
    pub n_train: Option<usize>,
    pub n_test: Option<usize>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
}

/// What the seed flag applies to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeedTarget {
    Dataset,
    Training,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("--config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("--config {}: {e}", path.display())))
    }

    /// Applies flag overrides; `n_train` targets the dataset or the training
    /// subset depending on `seed_target`, like the seed.
    pub fn apply(&mut self, o: &Overrides, target: SeedTarget) {
        if let Some(v) = &o.out {
            self.out = Some(v.clone());
        }
        if let Some(v) = &o.data {
            self.data = Some(v.clone());
        }
        match target {
            SeedTarget::Dataset => {
                if let Some(v) = o.seed {
                    self.scenario.seed = v;
                }
                if let Some(v) = o.n_train {
                    self.scenario.n_train = v;
                }
            }
            SeedTarget::Training => {
                if let Some(v) = o.seed {
                    self.train.seed = v;
                }
                if let Some(v) = o.n_train {
                    self.train.n_train = Some(v);
                }
            }
        }
        if let Some(v) = o.snr {
            self.scenario.snr_db = v;
        }
        if let Some(v) = o.snapshots {
            self.scenario.snapshots = v;
        }
        if let Some(v) = o.feature {
            self.scenario.feature = v;
        }
        if let Some(v) = o.n_test {
            self.scenario.n_test = v;
        }
        if let Some(v) = o.model {
            self.model.kind = v;
        }
        if let Some(v) = o.width {
            self.model.width = v;
        }
        if let Some(v) = o.epochs {
            self.train.epochs = v;
        }
        if let Some(v) = o.batch_size {
            self.train.batch_size = v;
        }
        if let Some(v) = o.learning_rate {
            self.train.learning_rate = v;
        }
    }

    pub fn array(&self) -> Result<ArrayConfig> {
        let a = &self.array;
        let wavelength = wavelength_from_frequency(a.frequency_hz)
            .map_err(|e| Error::Config(format!("array.frequency_hz: {e}")))?;
        match a.kind.as_str() {
            "uca" => ArrayConfig::uca(a.elements, a.radius_m, wavelength),
            "ula" => ArrayConfig::ula(a.elements, a.spacing_m.unwrap_or(wavelength / 2.0), wavelength),
            other => Err(Error::Config(format!("array.kind: expected uca or ula, got '{other}'"))),
        }
    }

    pub fn scenario(&self) -> Result<ScenarioConfig> {
        let s = &self.scenario;
        let cfg = ScenarioConfig {
            array: self.array()?,
            r_range: (s.range_m[0], s.range_m[1]),
            eta_range: (s.angle_deg[0].to_radians(), s.angle_deg[1].to_radians()),
            snr_db: s.snr_db,
            snapshots: s.snapshots,
            feature: s.feature,
            n_train: s.n_train,
            n_test: s.n_test,
            base_seed: s.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn model(&self) -> Result<ModelConfig> {
        let mut cfg = ModelConfig::of_kind(self.model.kind).with_width(self.model.width);
        if let Some([h, w]) = self.model.input {
            cfg = cfg.for_input(h, w);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train(&self) -> Result<TrainConfig> {
        let t = &self.train;
        let cfg = TrainConfig {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            epochs: t.epochs,
            seed: t.seed,
            loss_space: t.loss_space,
            held_out_fraction: t.held_out_fraction,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("cannot echo run config: {e}")))
    }
}
