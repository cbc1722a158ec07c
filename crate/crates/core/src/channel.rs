//! Spherical-wave uplink channel and multi-snapshot received signals.
//!
//! The received snapshot at time `k` is `y_k = h·s_k + n_k` with a unit pilot
//! `s_k = 1` and circularly-symmetric complex Gaussian noise of variance `σ²`
//! per entry.

use std::f64::consts::PI;

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::geometry::{ElementLayout, PolarPoint};
use crate::rng::{self, Stream};

/// Distances at or below this are treated as coincident with an element.
const COINCIDENCE_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelVector {
    pub entries: Array1<Complex64>,
    /// Source position the channel was synthesized for, when known.
    pub source: Option<PolarPoint>,
}

impl ChannelVector {
    pub fn from_entries(entries: Array1<Complex64>) -> Self {
        Self {
            entries,
            source: None,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Mean squared magnitude over elements.
    pub fn mean_power(&self) -> f64 {
        if self.entries.is_empty() {
            return 0.0;
        }
        self.entries.iter().map(|h| h.norm_sqr()).sum::<f64>() / self.entries.len() as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub snr_db: f64,
    /// Per-entry complex noise variance, derived from `snr_db`.
    pub sigma2: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotSet {
    /// `K × N`; row `k` is snapshot `y_k`.
    pub samples: Array2<Complex64>,
    pub pilot: Vec<Complex64>,
    pub noise: NoiseSpec,
    pub truth: Option<PolarPoint>,
}

impl SnapshotSet {
    pub fn snapshots(&self) -> usize {
        self.samples.nrows()
    }

    pub fn elements(&self) -> usize {
        self.samples.ncols()
    }
}

/// Distance between the source and element `n` (1-based), by the law of
/// cosines in the array's polar frame.
pub fn ue_element_distance(layout: &ElementLayout, ue: PolarPoint, n: usize) -> Result<f64> {
    let element = layout.element(n)?;
    if !(ue.range > 0.0) {
        return Err(Error::Domain(format!("source range must be positive, got {}", ue.range)));
    }
    let d2 = ue.range * ue.range + element.range * element.range
        - 2.0 * ue.range * element.range * (ue.angle - element.angle).cos();
    let d = d2.max(0.0).sqrt();
    if d <= COINCIDENCE_TOLERANCE * ue.range.max(element.range) {
        return Err(Error::DegenerateGeometry(format!(
            "source at (angle {}, range {}) coincides with element {n}",
            ue.angle, ue.range
        )));
    }
    Ok(d)
}

/// Channel entry `n` is `exp(−j·2π·d_n/λ) / d_n`.
pub fn spherical_channel(
    layout: &ElementLayout,
    ue: PolarPoint,
    wavelength: f64,
) -> Result<ChannelVector> {
    if !(wavelength > 0.0) {
        return Err(Error::Domain(format!("wavelength must be positive, got {wavelength}")));
    }
    let entries = (1..=layout.len())
        .map(|n| {
            let d = ue_element_distance(layout, ue, n)?;
            Ok(Complex64::from_polar(1.0 / d, -2.0 * PI * d / wavelength))
        })
        .collect::<Result<Array1<_>>>()?;
    Ok(ChannelVector {
        entries,
        source: Some(ue),
    })
}

/// Noise variance giving the requested SNR relative to the array-averaged
/// received signal power `pilot_power · mean_n |h_n|²`.
///
/// `snr_db = +∞` yields zero noise.
pub fn noise_power_for_snr(h: &ChannelVector, pilot_power: f64, snr_db: f64) -> Result<f64> {
    let signal = pilot_power * h.mean_power();
    if !(signal > 0.0) || !signal.is_finite() {
        return Err(Error::Domain(
            "noise power is undefined for a zero (or non-finite) channel".into(),
        ));
    }
    if snr_db.is_nan() {
        return Err(Error::Domain("SNR must not be NaN".into()));
    }
    Ok(signal / 10f64.powf(snr_db / 10.0))
}

/// Draws `K` snapshots `y_k = h + n_k` (unit pilot). Deterministic in `seed`.
pub fn synthesize_snapshots(
    h: &ChannelVector,
    snapshots: usize,
    snr_db: f64,
    seed: u64,
) -> Result<SnapshotSet> {
    if snapshots == 0 {
        return Err(Error::Domain("at least one snapshot is required".into()));
    }
    let sigma2 = noise_power_for_snr(h, 1.0, snr_db)?;
    let pilot = vec![Complex64::new(1.0, 0.0); snapshots];
    let amp = (sigma2 / 2.0).sqrt();
    let mut rng = rng::stream(seed, Stream::Noise);
    let n = h.len();
    let mut samples = Array2::zeros((snapshots, n));
    for (mut row, s) in samples.rows_mut().into_iter().zip(&pilot) {
        for (y, hn) in row.iter_mut().zip(h.entries.iter()) {
            let (re, im) = rng::standard_normal_pair(&mut rng);
            *y = hn * s + Complex64::new(amp * re, amp * im);
        }
    }
    Ok(SnapshotSet {
        samples,
        pilot,
        noise: NoiseSpec {
            snr_db,
            sigma2,
            seed,
        },
        truth: h.source,
    })
}
