//! Positioning error, summary statistics, CDFs, dB gaps and CSV export.

use std::path::Path;

use rayon::prelude::*;

use super::train::LossSpace;
use crate::dataset::DatasetView;
use crate::error::{Error, Result};
use crate::features::LabelCodec;
use crate::geometry::PolarPoint;
use crate::nn::{PosNet, Real};

pub const ERRORS_FILE: &str = "errors.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const CDF_FILE: &str = "cdf.csv";

/// Planar distance between two polar points (law of cosines).
pub fn positioning_error(est: PolarPoint, truth: PolarPoint) -> f64 {
    let sq = est.range * est.range + truth.range * truth.range
        - 2.0 * est.range * truth.range * (est.angle - truth.angle).cos();
    sq.max(0.0).sqrt()
}

/// Rounds to 9 significant digits, the precision of every exported value.
pub fn to_stored(v: f64) -> f64 {
    format!("{v:.8e}").parse().expect("formatted float parses")
}

fn fmt9(v: f64) -> String {
    format!("{v:.8e}")
}

/// Empirical CDF: distinct sorted values with the share of errors ≤ each.
pub fn cdf(errors: &[f64]) -> Result<Vec<(f64, f64)>> {
    if errors.is_empty() {
        return Err(Error::Domain("CDF of an empty error list".into()));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, &v) in sorted.iter().enumerate() {
        let p = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == v => last.1 = p,
            _ => out.push((v, p)),
        }
    }
    Ok(out)
}

fn median_of(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Error magnitude in dB relative to 1 m.
pub fn to_db(meters: f64) -> f64 {
    10.0 * meters.log10()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub scenario: String,
    /// Per-sample errors in meters, at stored precision.
    pub errors: Vec<f64>,
    pub mean: f64,
    pub median: f64,
    pub rmse: f64,
}

impl EvalReport {
    /// Builds a report; errors are first rounded to stored precision so that
    /// statistics recomputed from an export agree exactly.
    pub fn from_errors(scenario: impl Into<String>, errors: Vec<f64>) -> Result<Self> {
        if errors.is_empty() {
            return Err(Error::Domain("report needs at least one error".into()));
        }
        if let Some(bad) = errors.iter().find(|e| !(e.is_finite() && **e >= 0.0)) {
            return Err(Error::Domain(format!("positioning errors must be finite and ≥ 0, got {bad}")));
        }
        let errors: Vec<f64> = errors.into_iter().map(to_stored).collect();
        let n = errors.len() as f64;
        let mean = errors.iter().sum::<f64>() / n;
        let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
        let mut sorted = errors.clone();
        sorted.sort_by(f64::total_cmp);
        Ok(Self {
            scenario: scenario.into(),
            median: median_of(&sorted),
            errors,
            mean,
            rmse,
        })
    }

    pub fn from_estimates(scenario: impl Into<String>, estimates: &[PolarPoint], truths: &[PolarPoint]) -> Result<Self> {
        if estimates.len() != truths.len() {
            return Err(Error::Contract(format!(
                "{} estimates for {} ground-truth points",
                estimates.len(),
                truths.len()
            )));
        }
        let errors = estimates.iter().zip(truths).map(|(&e, &t)| positioning_error(e, t)).collect();
        Self::from_errors(scenario, errors)
    }

    pub fn len(&self) -> usize {
        self.errors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn cdf(&self) -> Vec<(f64, f64)> {
        cdf(&self.errors).expect("reports are nonempty")
    }

    /// Mean and median in dB re 1 m (−∞ for a zero statistic).
    pub fn mean_db(&self) -> f64 {
        to_db(self.mean)
    }

    pub fn median_db(&self) -> f64 {
        to_db(self.median)
    }

    /// Writes `errors.csv`, `summary.csv` and `cdf.csv` into `dir`.
    pub fn export(&self, dir: &Path) -> Result<()> {
        if self.errors.is_empty() {
            return Err(Error::Domain("refusing to export an empty report".into()));
        }
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, text: String| {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
        };
        let mut errors = String::from("error_m\n");
        for &e in &self.errors {
            errors.push_str(&fmt9(e));
            errors.push('\n');
        }
        write(ERRORS_FILE, errors)?;
        let summary = format!(
            "scenario,count,mean_m,median_m,rmse_m,mean_db,median_db\n{},{},{},{},{},{},{}\n",
            self.scenario.replace(',', ";"),
            self.errors.len(),
            fmt9(self.mean),
            fmt9(self.median),
            fmt9(self.rmse),
            fmt9(self.mean_db()),
            fmt9(self.median_db()),
        );
        write(SUMMARY_FILE, summary)?;
        let mut c = String::from("error_m,probability\n");
        for (v, p) in self.cdf() {
            c.push_str(&format!("{},{}\n", fmt9(v), fmt9(p)));
        }
        write(CDF_FILE, c)
    }

    /// Rebuilds a report from an exported `errors.csv`.
    pub fn load(dir: &Path, scenario: impl Into<String>) -> Result<Self> {
        let path = dir.join(ERRORS_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let errors = parse_column(&text, &path, 1)?.into_iter().map(|r| r[0]).collect();
        Self::from_errors(scenario, errors)
    }
}

/// Parses a header-plus-rows numeric CSV with `width` columns.
pub fn parse_column(text: &str, path: &Path, width: usize) -> Result<Vec<Vec<f64>>> {
    let bad = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let mut lines = text.lines();
    lines.next().ok_or_else(|| bad("missing header".into()))?;
    lines
        .enumerate()
        .map(|(i, line)| {
            let row: std::result::Result<Vec<f64>, _> = line.split(',').map(str::parse).collect();
            let row = row.map_err(|e| bad(format!("line {}: {e}", i + 2)))?;
            if row.len() != width {
                return Err(bad(format!("line {}: {} fields, expected {width}", i + 2, row.len())));
            }
            Ok(row)
        })
        .collect()
}

/// Reads an exported `cdf.csv` back into pairs.
pub fn load_cdf(dir: &Path) -> Result<Vec<(f64, f64)>> {
    let path = dir.join(CDF_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(parse_column(&text, &path, 2)?.into_iter().map(|r| (r[0], r[1])).collect())
}

/// `10·log10(mean_b / mean_a)`: positive when `a` is the more accurate.
pub fn db_gap(a: &EvalReport, b: &EvalReport) -> Result<f64> {
    ratio_db(a.mean, b.mean, "mean")
}

/// Median counterpart of [`db_gap`].
pub fn median_db_gap(a: &EvalReport, b: &EvalReport) -> Result<f64> {
    ratio_db(a.median, b.median, "median")
}

fn ratio_db(a: f64, b: f64, what: &str) -> Result<f64> {
    if a <= 0.0 || b <= 0.0 {
        return Err(Error::UndefinedGap(format!("{what} errors {a} and {b} must both be positive")));
    }
    Ok(10.0 * (b / a).log10())
}

/// Runs `model` over `view` (batches fan out across threads), decodes the
/// outputs and scores them against the stored labels.
pub fn evaluate<T: Real>(
    model: &PosNet<T>,
    view: &DatasetView<'_>,
    codec: &LabelCodec,
    space: LossSpace,
    scenario: impl Into<String>,
) -> Result<EvalReport> {
    let positions: Vec<usize> = (0..view.len()).collect();
    let chunks: Vec<Vec<PolarPoint>> = positions
        .par_chunks(32)
        .map(|chunk| {
            let x = view.batch_features(chunk).mapv(|v| T::of(v as f64));
            let out = model.infer(&x)?;
            Ok(out
                .outer_iter()
                .map(|row| space.decode(codec, [row[0].as_f64(), row[1].as_f64()]))
                .collect())
        })
        .collect::<Result<_>>()?;
    let estimates: Vec<PolarPoint> = chunks.into_iter().flatten().collect();
    EvalReport::from_estimates(scenario, &estimates, &view.labels(&positions))
}

/// Scores an arbitrary estimator (for instance an oracle stub) over `view`.
pub fn evaluate_with(
    view: &DatasetView<'_>,
    scenario: impl Into<String>,
    mut estimator: impl FnMut(usize, PolarPoint) -> PolarPoint,
) -> Result<EvalReport> {
    let positions: Vec<usize> = (0..view.len()).collect();
    let truths = view.labels(&positions);
    let estimates: Vec<PolarPoint> = truths.iter().enumerate().map(|(i, &t)| estimator(i, t)).collect();
    EvalReport::from_estimates(scenario, &estimates, &truths)
}
