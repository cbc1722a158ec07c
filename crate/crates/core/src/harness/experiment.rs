//! Experiment orchestration: train-and-evaluate runs, seed sweeps and
//! runtime projection.

use std::time::Instant;

use ndarray::{Array2, Array4};
use serde::{Deserialize, Serialize};

use super::metrics::{evaluate, EvalReport};
use super::train::{train, EpochRecord, TrainConfig, TrainRecord};
use crate::dataset::{split, Dataset, DatasetView};
use crate::error::{Error, Result};
use crate::nn::{Module, ModelConfig, PosNet};

/// One train-then-evaluate run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub label: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

pub struct RunOutcome {
    pub model: PosNet<f32>,
    pub record: TrainRecord,
    pub report: EvalReport,
}

/// Adapts `base` to the feature shape of `dataset` (covariance or CSI).
pub fn model_for(base: &ModelConfig, dataset: &Dataset) -> ModelConfig {
    let [c, h, w] = dataset.feature_shape();
    ModelConfig {
        in_planes: c,
        ..base.clone().for_input(h, w)
    }
}

/// Splits a training view into fitting and held-out parts.
pub fn hold_out<'a>(view: &DatasetView<'a>, fraction: f64, seed: u64) -> Result<(DatasetView<'a>, Option<DatasetView<'a>>)> {
    if fraction == 0.0 || view.len() < 2 {
        return Ok((view.clone(), None));
    }
    let (fit, held) = split(view.len(), 1.0 - fraction, seed)?;
    let pick = |pos: Vec<usize>| DatasetView {
        dataset: view.dataset,
        indices: pos.into_iter().map(|p| view.indices[p]).collect(),
    };
    let held = pick(held);
    Ok((pick(fit), (!held.is_empty()).then_some(held)))
}

/// Trains on the dataset's training split and evaluates on its test split.
pub fn run(spec: &RunSpec, dataset: &Dataset, observer: impl FnMut(&EpochRecord)) -> Result<RunOutcome> {
    let codec = dataset.scenario().codec()?;
    let cfg = model_for(&spec.model, dataset);
    let mut model = PosNet::<f32>::new(cfg, spec.train.seed)?;
    let (train_view, test_view) = dataset.train_test();
    let (fit, held) = hold_out(&train_view, spec.train.held_out_fraction, spec.train.seed)?;
    let record = train(&mut model, &fit, held.as_ref(), &codec, &spec.train, observer)?;
    let report = evaluate(&model, &test_view, &codec, spec.train.loss_space, spec.label.clone())?;
    Ok(RunOutcome { model, record, report })
}

/// Mean of the per-run mean errors.
pub fn mean_of_means(reports: &[EvalReport]) -> Result<f64> {
    if reports.is_empty() {
        return Err(Error::Domain("no reports to average".into()));
    }
    Ok(reports.iter().map(|r| r.mean).sum::<f64>() / reports.len() as f64)
}

/// Measured single-thread cost of a model configuration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Throughput {
    /// Seconds per sample of a training step (forward, backward, update).
    pub train_s_per_sample: f64,
    /// Seconds for one evaluation-mode pass of a single sample.
    pub infer_s_per_sample: f64,
}

impl Throughput {
    /// Projected seconds for `runs` trainings of `epochs` over `n_train`
    /// samples plus evaluation of `n_eval` samples each.
    pub fn project(&self, runs: usize, n_train: usize, epochs: usize, n_eval: usize) -> f64 {
        runs as f64 * (n_train as f64 * epochs as f64 * self.train_s_per_sample + n_eval as f64 * self.infer_s_per_sample)
    }
}

/// Times `reps` training steps at `batch` and `reps` single-sample passes.
pub fn measure_throughput(cfg: &ModelConfig, batch: usize, reps: usize) -> Result<Throughput> {
    let mut net = PosNet::<f32>::new(cfg.clone(), 0)?;
    let [h, w] = cfg.input_hw;
    let x = Array4::<f32>::from_shape_fn((batch, cfg.in_planes, h, w), |(b, c, i, j)| {
        ((b * 7 + c * 3 + i * 5 + j) as f32 * 0.013).sin()
    });
    let dy = Array2::<f32>::from_elem((batch, cfg.outputs), 1e-3);
    let mut adam = super::train::Adam::<f32>::new(0.0);
    let t = Instant::now();
    for _ in 0..reps.max(1) {
        net.forward(&x)?;
        net.zero_grad();
        net.backward(&dy)?;
        adam.step(&mut net.trainable_params());
    }
    let train_s = t.elapsed().as_secs_f64() / (reps.max(1) * batch) as f64;
    let one = x.slice(ndarray::s![0..1, .., .., ..]).to_owned();
    net.infer(&one)?;
    let t = Instant::now();
    for _ in 0..reps.max(1) {
        net.infer(&one)?;
    }
    Ok(Throughput {
        train_s_per_sample: train_s,
        infer_s_per_sample: t.elapsed().as_secs_f64() / reps.max(1) as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_arithmetic() {
        let t = Throughput {
            train_s_per_sample: 0.5,
            infer_s_per_sample: 0.1,
        };
        assert_eq!(t.project(2, 100, 3, 10), 2.0 * (150.0 + 1.0));
    }

    #[test]
    fn mean_of_means_rejects_empty() {
        assert!(mean_of_means(&[]).is_err());
        let r = |m: f64| EvalReport::from_errors("t", vec![m]).unwrap();
        assert_eq!(mean_of_means(&[r(1.0), r(3.0)]).unwrap(), 2.0);
    }
}
