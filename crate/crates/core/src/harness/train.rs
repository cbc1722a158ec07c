//! MSE loss, Adam, and the mini-batch training loop.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use ndarray::{Array2, Array4};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{u64_string, DatasetView};
use crate::error::{Error, Result};
use crate::features::LabelCodec;
use crate::geometry::PolarPoint;
use crate::nn::{Module, Param, PosNet, Real};
use crate::rng::{stream, Stream};

/// `(1/B) Σ_i Σ_j (p_ij − y_ij)²`, accumulated in f64.
pub fn mse_loss<T: Real>(preds: &Array2<T>, labels: &Array2<T>) -> Result<f64> {
    check_pair(preds, labels)?;
    let b = preds.nrows().max(1) as f64;
    let sum: f64 = preds
        .iter()
        .zip(labels)
        .map(|(p, y)| (p.as_f64() - y.as_f64()).powi(2))
        .sum();
    Ok(sum / b)
}

/// Gradient of [`mse_loss`] with respect to `preds`: `2 (p − y) / B`.
pub fn mse_grad<T: Real>(preds: &Array2<T>, labels: &Array2<T>) -> Result<Array2<T>> {
    check_pair(preds, labels)?;
    let k = T::of(2.0 / preds.nrows().max(1) as f64);
    Ok((preds - labels).mapv(|d| d * k))
}

fn check_pair<T>(a: &Array2<T>, b: &Array2<T>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Contract(format!(
            "loss expects matching shapes, got {:?} and {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Adam with bias-corrected moments.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            steps: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Param<T>]) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.v = self.m.clone();
        }
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (ob1, ob2) = (T::of(1.0 - self.beta1), T::of(1.0 - self.beta2));
        let step = T::of(self.learning_rate / c1);
        let inv_c2 = T::of(1.0 / c2.sqrt());
        let eps = T::of(self.eps);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            for (((w, &g), mi), vi) in p.value.iter_mut().zip(&p.grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + ob1 * g;
                *vi = b2 * *vi + ob2 * g * g;
                *w -= step * *mi / (vi.sqrt() * inv_c2 + eps);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossSpace {
    /// Targets scaled to `[0, 1]²` by the label codec.
    Normalized,
    /// Targets in meters and radians.
    Raw,
}

impl fmt::Display for LossSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossSpace::Normalized => "normalized",
            LossSpace::Raw => "raw",
        })
    }
}

impl FromStr for LossSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normalized" => Ok(LossSpace::Normalized),
            "raw" => Ok(LossSpace::Raw),
            other => Err(Error::Config(format!("unknown loss space '{other}'"))),
        }
    }
}

impl LossSpace {
    pub fn encode(self, codec: &LabelCodec, p: PolarPoint) -> Result<[f64; 2]> {
        match self {
            LossSpace::Normalized => codec.encode(p),
            LossSpace::Raw => Ok([p.range, p.angle]),
        }
    }

    pub fn decode(self, codec: &LabelCodec, pair: [f64; 2]) -> PolarPoint {
        match self {
            LossSpace::Normalized => codec.decode(pair),
            LossSpace::Raw => PolarPoint {
                range: pair[0],
                angle: pair[1],
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(with = "u64_string")]
    pub seed: u64,
    pub loss_space: LossSpace,
    /// Share of the training split held out for checkpoint selection.
    pub held_out_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            batch_size: 32,
            epochs: 200,
            seed: 1,
            loss_space: LossSpace::Normalized,
            held_out_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be finite and ≥ 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch size and epoch count must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.held_out_fraction) {
            return Err(Error::Config(format!(
                "held-out fraction must lie in [0, 1), got {}",
                self.held_out_fraction
            )));
        }
        Ok(())
    }

    /// Seed of the shuffle permutation for `epoch` (1-based).
    pub fn epoch_seed(&self, epoch: usize) -> u64 {
        self.seed.wrapping_add(epoch as u64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training-mode loss over the epoch's samples.
    pub train_loss: f64,
    /// Evaluation-mode loss on the held-out slice.
    pub held_out_loss: Option<f64>,
    pub wall_clock_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub epochs: Vec<EpochRecord>,
    pub steps: u64,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_held_out_loss: Option<f64>,
    pub checkpoint: Option<PathBuf>,
}

impl TrainRecord {
    /// `epoch,train_loss,held_out_loss` at 17 significant digits, no timings.
    pub fn write_loss_curve(&self, path: &Path) -> Result<()> {
        let mut out = String::from("epoch,train_loss,held_out_loss\n");
        for e in &self.epochs {
            let held = e.held_out_loss.map(|v| format!("{v:.16e}")).unwrap_or_default();
            out.push_str(&format!("{},{:.16e},{held}\n", e.epoch, e.train_loss));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Per-epoch wall-clock seconds, kept apart from the loss curve.
    pub fn write_timings(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut text = String::from("epoch,wall_clock_s\n");
        for e in &self.epochs {
            text.push_str(&format!("{},{:.3}\n", e.epoch, e.wall_clock_s));
        }
        f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Encoded targets of view positions `positions` as `[B, 2]`.
pub fn targets<T: Real>(view: &DatasetView<'_>, positions: &[usize], codec: &LabelCodec, space: LossSpace) -> Result<Array2<T>> {
    let mut out = Array2::<T>::zeros((positions.len(), 2));
    for (row, p) in view.labels(positions).into_iter().enumerate() {
        let [a, b] = space.encode(codec, p)?;
        out[[row, 0]] = T::of(a);
        out[[row, 1]] = T::of(b);
    }
    Ok(out)
}

fn check_shape<T: Real>(model: &PosNet<T>, view: &DatasetView<'_>) -> Result<()> {
    let cfg = model.config();
    let [c, h, w] = view.feature_shape();
    if [c, h, w] != [cfg.in_planes, cfg.input_hw[0], cfg.input_hw[1]] {
        return Err(Error::Contract(format!(
            "dataset features {:?} do not fit model input ({}, {}, {})",
            [c, h, w],
            cfg.in_planes,
            cfg.input_hw[0],
            cfg.input_hw[1]
        )));
    }
    Ok(())
}

fn features<T: Real>(view: &DatasetView<'_>, positions: &[usize]) -> Array4<T> {
    view.batch_features(positions).mapv(|v| T::of(v as f64))
}

/// Evaluation-mode mean loss over a whole view.
pub fn evaluation_loss<T: Real>(model: &PosNet<T>, view: &DatasetView<'_>, codec: &LabelCodec, space: LossSpace, batch: usize) -> Result<f64> {
    check_shape(model, view)?;
    let positions: Vec<usize> = (0..view.len()).collect();
    let mut total = 0.0;
    for chunk in positions.chunks(batch.max(1)) {
        let preds = model.infer(&features(view, chunk))?;
        total += mse_loss(&preds, &targets(view, chunk, codec, space)?)? * chunk.len() as f64;
    }
    Ok(total / view.len().max(1) as f64)
}

/// Trains `model` in place on `train`, selecting the epoch with the lowest
/// held-out loss when `held_out` is given (the last epoch otherwise).
/// `observer` sees every finished epoch.
pub fn train<T: Real>(
    model: &mut PosNet<T>,
    train: &DatasetView<'_>,
    held_out: Option<&DatasetView<'_>>,
    codec: &LabelCodec,
    cfg: &TrainConfig,
    mut observer: impl FnMut(&EpochRecord),
) -> Result<TrainRecord> {
    cfg.validate()?;
    check_shape(model, train)?;
    if let Some(h) = held_out {
        check_shape(model, h)?;
    }
    if train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut adam = Adam::<T>::new(cfg.learning_rate);
    let mut record = TrainRecord::default();
    let mut best: Option<(f64, PosNet<T>)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        order.sort_unstable();
        order.shuffle(&mut stream(cfg.epoch_seed(epoch), Stream::Shuffle));
        let mut loss_sum = 0.0;
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let x = features::<T>(train, batch);
            let y = targets::<T>(train, batch, codec, cfg.loss_space)?;
            let preds = model.forward(&x)?;
            let loss = mse_loss(&preds, &y)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, step, loss });
            }
            model.zero_grad();
            model.backward(&mse_grad(&preds, &y)?)?;
            adam.step(&mut model.trainable_params());
            loss_sum += loss * batch.len() as f64;
        }
        let held_out_loss = match held_out {
            Some(h) if !h.is_empty() => Some(evaluation_loss(model, h, codec, cfg.loss_space, cfg.batch_size.max(32))?),
            _ => None,
        };
        if let Some(l) = held_out_loss {
            if !l.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step: order.len().div_ceil(cfg.batch_size),
                    loss: l,
                });
            }
            if best.as_ref().is_none_or(|(b, _)| l < *b) {
                best = Some((l, model.clone()));
                record.best_epoch = epoch;
                record.best_held_out_loss = Some(l);
            }
        } else {
            record.best_epoch = epoch;
        }
        let rec = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            held_out_loss,
            wall_clock_s: started.elapsed().as_secs_f64(),
        };
        observer(&rec);
        record.epochs.push(rec);
    }
    record.steps = adam.steps;
    if let Some((_, kept)) = best {
        *model = kept;
    }
    Ok(record)
}
