//! Labeled dataset generation, persistence, and splitting.
//!
//! A dataset directory holds a `manifest.toml` plus four `NFPD` tensor files:
//! `features.bin` (`[n, 2, H, W]` f32), `labels.bin` (`[n, 2]` f32, ordered
//! range in meters then angle in radians), `scales.bin` (`[n]` f32) and
//! `seeds.bin` (`[n]` u64).

pub mod tensor_file;

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{spherical_channel, synthesize_snapshots};
use crate::error::{Error, Result};
use crate::features::{covariance_to_feature, csi_to_feature, sample_covariance, LabelCodec};
use crate::geometry::{build_layout, ArrayConfig, ElementLayout, PolarPoint};
use crate::rng::{self, Stream};
use tensor_file::{read_tensor, write_tensor, TensorWriter};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const FEATURES_FILE: &str = "features.bin";
pub const LABELS_FILE: &str = "labels.bin";
pub const SCALES_FILE: &str = "scales.bin";
pub const SEEDS_FILE: &str = "seeds.bin";

/// Samples generated per parallel batch when streaming to disk.
const CHUNK: usize = 256;

/// Serializes `u64` as a decimal string; TOML integers are signed 64-bit.
pub mod u64_string {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        String::deserialize(d)?.parse().map_err(D::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Covariance,
    Csi,
}

impl std::fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FeatureKind::Covariance => "covariance",
            FeatureKind::Csi => "csi",
        })
    }
}

impl std::str::FromStr for FeatureKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "covariance" => Ok(Self::Covariance),
            "csi" => Ok(Self::Csi),
            other => Err(Error::Config(format!("unknown feature kind '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub array: ArrayConfig,
    /// Source range interval, meters.
    pub r_range: (f64, f64),
    /// Source angle interval, radians.
    pub eta_range: (f64, f64),
    pub snr_db: f64,
    pub snapshots: usize,
    pub feature: FeatureKind,
    pub n_train: usize,
    pub n_test: usize,
    #[serde(with = "u64_string")]
    pub base_seed: u64,
}

impl Default for ScenarioConfig {
    /// 64-element sector at 3.5 GHz, sources in 2–10 m × 30°–150°, 20 dB,
    /// 100 snapshots, 8,000/2,000 covariance samples.
    fn default() -> Self {
        Self {
            array: ArrayConfig::reference_uca(),
            r_range: (2.0, 10.0),
            eta_range: (30f64.to_radians(), 150f64.to_radians()),
            snr_db: 20.0,
            snapshots: 100,
            feature: FeatureKind::Covariance,
            n_train: 8000,
            n_test: 2000,
            base_seed: 1,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.array.validate()?;
        let (r0, r1) = self.r_range;
        if !(r0 > 0.0 && r0 < r1 && r1.is_finite()) {
            return Err(Error::Config(format!("r_range must satisfy 0 < min < max, got {:?}", self.r_range)));
        }
        let (e0, e1) = self.eta_range;
        if !(e0 < e1 && e0.is_finite() && e1.is_finite()) {
            return Err(Error::Config(format!("eta_range must satisfy min < max, got {:?}", self.eta_range)));
        }
        if !self.snr_db.is_finite() {
            return Err(Error::Config(format!("snr_db must be finite, got {}", self.snr_db)));
        }
        if self.snapshots == 0 {
            return Err(Error::Config("snapshots must be positive".into()));
        }
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::Config(format!(
                "n_train and n_test must be positive, got {} and {}",
                self.n_train, self.n_test
            )));
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.n_train + self.n_test
    }

    pub fn codec(&self) -> Result<LabelCodec> {
        LabelCodec::new(self.r_range, self.eta_range)
    }

    /// `[2, N, N]` for covariance, `[2, K, N]` for CSI.
    pub fn feature_shape(&self) -> [usize; 3] {
        let n = self.array.num_elements;
        match self.feature {
            FeatureKind::Covariance => [2, n, n],
            FeatureKind::Csi => [2, self.snapshots, n],
        }
    }

    /// Seed of sample `i`.
    pub fn sample_seed(&self, index: usize) -> u64 {
        self.base_seed.wrapping_add(index as u64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub train: usize,
    pub test: usize,
    pub total: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub dims: Vec<usize>,
    pub dtype: String,
    /// CRC-32 of the payload, 8 hex digits.
    pub crc32: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub label_order: String,
    pub counts: Counts,
    pub feature_shape: Vec<usize>,
    #[serde(with = "u64_string")]
    pub creation_seed: u64,
    pub scenario: ScenarioConfig,
    pub files: BTreeMap<String, FileEntry>,
}

impl DatasetManifest {
    fn new(scenario: &ScenarioConfig) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            label_order: "range_m,angle_rad".into(),
            counts: Counts {
                train: scenario.n_train,
                test: scenario.n_test,
                total: scenario.total(),
            },
            feature_shape: scenario.feature_shape().to_vec(),
            creation_seed: scenario.base_seed,
            scenario: scenario.clone(),
            files: BTreeMap::new(),
        }
    }

    fn record<T: tensor_file::Element>(&mut self, name: &str, dims: &[usize], crc: u32) {
        self.files.insert(
            name.to_string(),
            FileEntry {
                dims: dims.to_vec(),
                dtype: T::NAME.to_string(),
                crc32: format!("{crc:08x}"),
            },
        );
    }

    fn crc_of(&self, name: &str, dir: &Path) -> Result<u32> {
        let entry = self.files.get(name).ok_or_else(|| Error::Format {
            path: dir.join(MANIFEST_FILE),
            reason: format!("no entry for {name}"),
        })?;
        u32::from_str_radix(&entry.crc32, 16).map_err(|_| Error::Format {
            path: dir.join(MANIFEST_FILE),
            reason: format!("bad checksum '{}' for {name}", entry.crc32),
        })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::Format { path: path.clone(), reason: e.to_string() })?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Self = toml::from_str(&text)
            .map_err(|e| Error::Format { path: path.clone(), reason: e.to_string() })?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Format {
                path,
                reason: format!(
                    "format version {}, expected {FORMAT_VERSION}",
                    manifest.format_version
                ),
            });
        }
        Ok(manifest)
    }
}

/// Network input of one sample, in f64 before storage.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub planes: ndarray::Array3<f64>,
    pub scale: f64,
    pub label: PolarPoint,
    pub seed: u64,
}

/// Independent uniform draws of range and angle.
pub fn sample_ue_position<R: Rng + ?Sized>(
    rng: &mut R,
    r_range: (f64, f64),
    eta_range: (f64, f64),
) -> PolarPoint {
    let range = rng::uniform(rng, r_range.0, r_range.1);
    let angle = rng::uniform(rng, eta_range.0, eta_range.1);
    PolarPoint { angle, range }
}

/// Builds one labeled sample from its seed: position from the position
/// stream, noise from the noise stream.
pub fn make_sample(cfg: &ScenarioConfig, layout: &ElementLayout, seed: u64) -> Result<Sample> {
    let mut pos_rng = rng::stream(seed, Stream::Position);
    let ue = sample_ue_position(&mut pos_rng, cfg.r_range, cfg.eta_range);
    let h = spherical_channel(layout, ue, cfg.array.wavelength)?;
    let snaps = synthesize_snapshots(&h, cfg.snapshots, cfg.snr_db, seed)?;
    let (planes, scale) = match cfg.feature {
        FeatureKind::Covariance => {
            let f = covariance_to_feature(&sample_covariance(&snaps)?)?;
            (f.planes, f.scale)
        }
        FeatureKind::Csi => {
            let f = csi_to_feature(&snaps)?;
            (f.planes, f.scale)
        }
    };
    Ok(Sample {
        planes,
        scale,
        label: ue,
        seed,
    })
}

fn make_range(cfg: &ScenarioConfig, layout: &ElementLayout, range: std::ops::Range<usize>) -> Result<Vec<Sample>> {
    range
        .into_par_iter()
        .map(|i| make_sample(cfg, layout, cfg.sample_seed(i)))
        .collect()
}

/// In-memory dataset with f32 features.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    features: Vec<f32>,
    labels: Vec<f32>,
    scales: Vec<f32>,
    seeds: Vec<u64>,
}

impl Dataset {
    /// Generates every sample of `cfg` in memory.
    pub fn generate(cfg: &ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let layout = build_layout(&cfg.array)?;
        let samples = make_range(cfg, &layout, 0..cfg.total())?;
        let mut ds = Self {
            manifest: DatasetManifest::new(cfg),
            features: Vec::with_capacity(cfg.total() * cfg.feature_shape().iter().product::<usize>()),
            labels: Vec::with_capacity(cfg.total() * 2),
            scales: Vec::with_capacity(cfg.total()),
            seeds: Vec::with_capacity(cfg.total()),
        };
        for s in samples {
            ds.push(&s);
        }
        Ok(ds)
    }

    fn push(&mut self, s: &Sample) {
        self.features.extend(s.planes.iter().map(|&v| v as f32));
        self.labels.push(s.label.range as f32);
        self.labels.push(s.label.angle as f32);
        self.scales.push(s.scale as f32);
        self.seeds.push(s.seed);
    }

    pub fn len(&self) -> usize {
        self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty()
    }

    pub fn scenario(&self) -> &ScenarioConfig {
        &self.manifest.scenario
    }

    pub fn feature_shape(&self) -> [usize; 3] {
        let s = &self.manifest.feature_shape;
        [s[0], s[1], s[2]]
    }

    fn feature_len(&self) -> usize {
        self.manifest.feature_shape.iter().product()
    }

    pub fn feature(&self, i: usize) -> &[f32] {
        let len = self.feature_len();
        &self.features[i * len..(i + 1) * len]
    }

    pub fn label(&self, i: usize) -> PolarPoint {
        PolarPoint {
            range: self.labels[2 * i] as f64,
            angle: self.labels[2 * i + 1] as f64,
        }
    }

    pub fn scale(&self, i: usize) -> f32 {
        self.scales[i]
    }

    pub fn seed(&self, i: usize) -> u64 {
        self.seeds[i]
    }

    pub fn save(&self, dir: &Path) -> Result<DatasetManifest> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let n = self.len();
        let mut manifest = self.manifest.clone();
        manifest.files.clear();
        let mut fdims = vec![n];
        fdims.extend_from_slice(&manifest.feature_shape);
        let crc = write_tensor(&dir.join(FEATURES_FILE), &fdims, &self.features)?;
        manifest.record::<f32>(FEATURES_FILE, &fdims, crc);
        let crc = write_tensor(&dir.join(LABELS_FILE), &[n, 2], &self.labels)?;
        manifest.record::<f32>(LABELS_FILE, &[n, 2], crc);
        let crc = write_tensor(&dir.join(SCALES_FILE), &[n], &self.scales)?;
        manifest.record::<f32>(SCALES_FILE, &[n], crc);
        let crc = write_tensor(&dir.join(SEEDS_FILE), &[n], &self.seeds)?;
        manifest.record::<u64>(SEEDS_FILE, &[n], crc);
        manifest.write(dir)?;
        Ok(manifest)
    }

    /// Loads a dataset directory, verifying every checksum and shape.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = DatasetManifest::read(dir)?;
        let n = manifest.counts.total;
        if manifest.counts.train + manifest.counts.test != n {
            return Err(Error::Format {
                path: dir.join(MANIFEST_FILE),
                reason: "train + test does not equal total".into(),
            });
        }
        let mut fdims = vec![n];
        fdims.extend_from_slice(&manifest.feature_shape);
        let features = load_checked::<f32>(dir, &manifest, FEATURES_FILE, &fdims)?;
        let labels = load_checked::<f32>(dir, &manifest, LABELS_FILE, &[n, 2])?;
        let scales = load_checked::<f32>(dir, &manifest, SCALES_FILE, &[n])?;
        let seeds = load_checked::<u64>(dir, &manifest, SEEDS_FILE, &[n])?;
        Ok(Self {
            manifest,
            features,
            labels,
            scales,
            seeds,
        })
    }

    pub fn view_all(&self) -> DatasetView<'_> {
        DatasetView {
            dataset: self,
            indices: (0..self.len()).collect(),
        }
    }

    pub fn view(&self, indices: Vec<usize>) -> DatasetView<'_> {
        DatasetView {
            dataset: self,
            indices,
        }
    }

    /// Train/test views using the manifest counts and a permutation seeded
    /// by the creation seed.
    pub fn train_test(&self) -> (DatasetView<'_>, DatasetView<'_>) {
        let (train, test) = split_by_count(self.len(), self.manifest.counts.train, self.manifest.creation_seed);
        (self.view(train), self.view(test))
    }
}

fn load_checked<T: tensor_file::Element>(
    dir: &Path,
    manifest: &DatasetManifest,
    name: &str,
    dims: &[usize],
) -> Result<Vec<T>> {
    let path = dir.join(name);
    let t = read_tensor::<T>(&path, Some(manifest.crc_of(name, dir)?))?;
    if t.dims != dims {
        return Err(Error::Corrupt {
            path,
            reason: format!("dims {:?} disagree with manifest {:?}", t.dims, dims),
        });
    }
    Ok(t.data)
}

/// Generates `cfg` straight to `dir`, writing tensors chunk by chunk.
pub fn generate_dataset(cfg: &ScenarioConfig, dir: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let layout = build_layout(&cfg.array)?;
    let n = cfg.total();
    let shape = cfg.feature_shape();
    let mut fdims = vec![n];
    fdims.extend_from_slice(&shape);

    let mut features = TensorWriter::<f32>::create(&dir.join(FEATURES_FILE), &fdims)?;
    let mut labels = TensorWriter::<f32>::create(&dir.join(LABELS_FILE), &[n, 2])?;
    let mut scales = TensorWriter::<f32>::create(&dir.join(SCALES_FILE), &[n])?;
    let mut seeds = TensorWriter::<u64>::create(&dir.join(SEEDS_FILE), &[n])?;
    let mut start = 0;
    let mut buf = Vec::new();
    while start < n {
        let end = (start + CHUNK).min(n);
        let chunk = make_range(cfg, &layout, start..end)?;
        for s in &chunk {
            buf.clear();
            buf.extend(s.planes.iter().map(|&v| v as f32));
            features.append(&buf)?;
            labels.append(&[s.label.range as f32, s.label.angle as f32])?;
            scales.append(&[s.scale as f32])?;
            seeds.append(&[s.seed])?;
        }
        start = end;
    }
    let mut manifest = DatasetManifest::new(cfg);
    manifest.record::<f32>(FEATURES_FILE, &fdims, features.finish()?);
    manifest.record::<f32>(LABELS_FILE, &[n, 2], labels.finish()?);
    manifest.record::<f32>(SCALES_FILE, &[n], scales.finish()?);
    manifest.record::<u64>(SEEDS_FILE, &[n], seeds.finish()?);
    manifest.write(dir)?;
    Ok(manifest)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    Dataset::load(dir)
}

/// Deterministic permutation split; the training side gets
/// `floor(fraction · n)` indices.
pub fn split(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Domain(format!("split fraction must lie in (0, 1), got {fraction}")));
    }
    let n_train = ((fraction * n as f64) + 1e-9).floor() as usize;
    Ok(split_by_count(n, n_train.min(n), seed))
}

fn split_by_count(n: usize, n_train: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, Stream::Split));
    let test = order.split_off(n_train);
    (order, test)
}

/// A subset of a dataset, by index.
#[derive(Clone, Debug)]
pub struct DatasetView<'a> {
    pub dataset: &'a Dataset,
    pub indices: Vec<usize>,
}

impl<'a> DatasetView<'a> {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn feature_shape(&self) -> [usize; 3] {
        self.dataset.feature_shape()
    }

    pub fn take(&self, count: usize) -> DatasetView<'a> {
        DatasetView {
            dataset: self.dataset,
            indices: self.indices.iter().copied().take(count).collect(),
        }
    }

    /// Stacks the features of view positions `positions` into `[B, 2, H, W]`.
    pub fn batch_features(&self, positions: &[usize]) -> ndarray::Array4<f32> {
        let [c, h, w] = self.feature_shape();
        let mut out = Vec::with_capacity(positions.len() * c * h * w);
        for &p in positions {
            out.extend_from_slice(self.dataset.feature(self.indices[p]));
        }
        ndarray::Array4::from_shape_vec((positions.len(), c, h, w), out)
            .expect("feature length matches shape")
    }

    pub fn labels(&self, positions: &[usize]) -> Vec<PolarPoint> {
        positions
            .iter()
            .map(|&p| self.dataset.label(self.indices[p]))
            .collect()
    }
}
