//! Network inputs built from snapshot sets, and label scaling.

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::SnapshotSet;
use crate::error::{Error, Result};
use crate::geometry::PolarPoint;

/// Relative tolerance for accepting a matrix as Hermitian.
pub const HERMITIAN_TOLERANCE: f64 = 1e-9;

/// Real/imaginary planes `[2, N, N]` of a max-abs normalized sample covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceFeature {
    pub planes: Array3<f64>,
    /// Divisor applied to the covariance; `scale · (plane0 + j·plane1)`
    /// reconstructs it.
    pub scale: f64,
}

/// Real/imaginary planes `[2, K, N]` of the raw snapshot matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CsiFeature {
    pub planes: Array3<f64>,
    pub scale: f64,
}

/// `(1/K) Σ_k y_k y_kᴴ`, computed on the upper triangle and mirrored so the
/// result is Hermitian bit-for-bit.
pub fn sample_covariance(set: &SnapshotSet) -> Result<Array2<Complex64>> {
    let k = set.samples.nrows();
    let n = set.samples.ncols();
    if k == 0 {
        return Err(Error::Domain("sample covariance of an empty snapshot set".into()));
    }
    let inv_k = 1.0 / k as f64;
    let mut cov = Array2::<Complex64>::zeros((n, n));
    for row in set.samples.rows() {
        for i in 0..n {
            let yi = row[i];
            for j in i..n {
                cov[[i, j]] += yi * row[j].conj();
            }
        }
    }
    for i in 0..n {
        cov[[i, i]] = Complex64::new(cov[[i, i]].re * inv_k, 0.0);
        for j in i + 1..n {
            let v = cov[[i, j]] * inv_k;
            cov[[i, j]] = v;
            cov[[j, i]] = v.conj();
        }
    }
    Ok(cov)
}

/// Splits a Hermitian matrix into normalized real (symmetric) and imaginary
/// (antisymmetric) planes.
pub fn covariance_to_feature(cov: &Array2<Complex64>) -> Result<CovarianceFeature> {
    let (n, m) = cov.dim();
    if n != m {
        return Err(Error::Contract(format!("covariance must be square, got {n}×{m}")));
    }
    let max_abs = cov
        .iter()
        .fold(0.0f64, |acc, z| acc.max(z.re.abs()).max(z.im.abs()));
    let tol = HERMITIAN_TOLERANCE * max_abs.max(f64::MIN_POSITIVE);
    for i in 0..n {
        for j in i..n {
            let gap = cov[[i, j]] - cov[[j, i]].conj();
            if gap.re.abs() > tol || gap.im.abs() > tol {
                return Err(Error::DataIntegrity(format!(
                    "covariance is not Hermitian at ({i}, {j}): deviation {}",
                    gap.norm()
                )));
            }
        }
    }
    let scale = max_abs.max(f64::MIN_POSITIVE);
    let mut planes = Array3::<f64>::zeros((2, n, n));
    for i in 0..n {
        planes[[0, i, i]] = cov[[i, i]].re / scale;
        for j in i + 1..n {
            let re = cov[[i, j]].re / scale;
            let im = cov[[i, j]].im / scale;
            planes[[0, i, j]] = re;
            planes[[0, j, i]] = re;
            planes[[1, i, j]] = im;
            planes[[1, j, i]] = -im;
        }
    }
    Ok(CovarianceFeature { planes, scale })
}

pub fn csi_to_feature(set: &SnapshotSet) -> Result<CsiFeature> {
    let (k, n) = set.samples.dim();
    if k == 0 {
        return Err(Error::Domain("CSI feature of an empty snapshot set".into()));
    }
    let max_abs = set
        .samples
        .iter()
        .fold(0.0f64, |acc, z| acc.max(z.re.abs()).max(z.im.abs()));
    if !(max_abs > 0.0) || !max_abs.is_finite() {
        return Err(Error::DataIntegrity(
            "cannot normalize an all-zero (or non-finite) snapshot matrix".into(),
        ));
    }
    let mut planes = Array3::<f64>::zeros((2, k, n));
    for ((r, c), z) in set.samples.indexed_iter() {
        planes[[0, r, c]] = z.re / max_abs;
        planes[[1, r, c]] = z.im / max_abs;
    }
    Ok(CsiFeature {
        planes,
        scale: max_abs,
    })
}

/// Affine map between physical labels and the unit square.
///
/// Encoded pairs are ordered `[range, angle]`, matching the network output.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelCodec {
    pub r_min: f64,
    pub r_max: f64,
    pub eta_min: f64,
    pub eta_max: f64,
}

impl LabelCodec {
    pub fn new(r_range: (f64, f64), eta_range: (f64, f64)) -> Result<Self> {
        let codec = Self {
            r_min: r_range.0,
            r_max: r_range.1,
            eta_min: eta_range.0,
            eta_max: eta_range.1,
        };
        if !(codec.r_min < codec.r_max) || !(codec.eta_min < codec.eta_max) {
            return Err(Error::Config(format!(
                "label codec needs nonempty ranges, got r {:?}, eta {:?}",
                r_range, eta_range
            )));
        }
        Ok(codec)
    }

    pub fn encode(&self, p: PolarPoint) -> Result<[f64; 2]> {
        let r = (p.range - self.r_min) / (self.r_max - self.r_min);
        let a = (p.angle - self.eta_min) / (self.eta_max - self.eta_min);
        const SLACK: f64 = 1e-9;
        if !(-SLACK..=1.0 + SLACK).contains(&r) || !(-SLACK..=1.0 + SLACK).contains(&a) {
            return Err(Error::Domain(format!(
                "label (angle {}, range {}) outside codec bounds",
                p.angle, p.range
            )));
        }
        Ok([r, a])
    }

    /// Inverse of [`encode`](Self::encode). Accepts values outside `[0, 1]`
    /// since network outputs are unclamped.
    pub fn decode(&self, pair: [f64; 2]) -> PolarPoint {
        PolarPoint {
            range: self.r_min + pair[0] * (self.r_max - self.r_min),
            angle: self.eta_min + pair[1] * (self.eta_max - self.eta_min),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::NoiseSpec;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set_from(samples: Array2<Complex64>) -> SnapshotSet {
        let k = samples.nrows();
        SnapshotSet {
            samples,
            pilot: vec![Complex64::new(1.0, 0.0); k],
            noise: NoiseSpec { snr_db: 0.0, sigma2: 1.0, seed: 0 },
            truth: None,
        }
    }

    fn random_set(k: usize, n: usize, seed: u64) -> SnapshotSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        set_from(Array2::from_shape_fn((k, n), |_| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        }))
    }

    #[test]
    fn zero_snapshots_give_zero_covariance() {
        let cov = sample_covariance(&set_from(Array2::zeros((4, 6)))).unwrap();
        assert!(cov.iter().all(|z| *z == Complex64::new(0.0, 0.0)));
        assert!(sample_covariance(&set_from(Array2::zeros((0, 6)))).is_err());
    }

    #[test]
    fn single_snapshot_outer_product() {
        let s = random_set(1, 5, 1);
        let cov = sample_covariance(&s).unwrap();
        let y = s.samples.row(0);
        let trace: f64 = cov.diag().iter().map(|z| z.re).sum();
        let norm2: f64 = y.iter().map(|z| z.norm_sqr()).sum();
        assert_relative_eq!(trace, norm2, max_relative = 1e-14);
        for i in 0..5 {
            for j in 0..5 {
                assert!((cov[[i, j]] - y[i] * y[j].conj()).norm() < 1e-14);
            }
        }
        // Rank one: every 2×2 minor vanishes.
        let minor = cov[[0, 0]] * cov[[1, 1]] - cov[[0, 1]] * cov[[1, 0]];
        assert!(minor.norm() < 1e-12);
    }

    #[test]
    fn covariance_matches_double_loop() {
        let s = random_set(50, 16, 2);
        let cov = sample_covariance(&s).unwrap();
        for i in 0..16 {
            for j in 0..16 {
                let mut acc = Complex64::new(0.0, 0.0);
                for k in 0..50 {
                    acc += s.samples[[k, i]] * s.samples[[k, j]].conj();
                }
                acc /= 50.0;
                assert!((cov[[i, j]] - acc).norm() <= 1e-12 * acc.norm().max(1e-300));
            }
        }
    }

    #[test]
    fn identity_feature() {
        let eye = Array2::from_shape_fn((4, 4), |(i, j)| {
            Complex64::new(if i == j { 1.0 } else { 0.0 }, 0.0)
        });
        let f = covariance_to_feature(&eye).unwrap();
        assert_eq!(f.scale, 1.0);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(f.planes[[0, i, j]], if i == j { 1.0 } else { 0.0 });
                assert_eq!(f.planes[[1, i, j]], 0.0);
            }
        }
    }

    #[test]
    fn scaled_covariance_shares_planes() {
        let cov = sample_covariance(&random_set(20, 8, 3)).unwrap();
        let a = covariance_to_feature(&cov).unwrap();
        let b = covariance_to_feature(&cov.mapv(|z| z * 10.0)).unwrap();
        assert_relative_eq!(b.scale, 10.0 * a.scale, max_relative = 1e-14);
        for (x, y) in a.planes.iter().zip(b.planes.iter()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn feature_reconstructs_covariance() {
        let cov = sample_covariance(&random_set(30, 12, 4)).unwrap();
        let f = covariance_to_feature(&cov).unwrap();
        let max = f.planes.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max <= 1.0);
        for i in 0..12 {
            assert_eq!(f.planes[[1, i, i]], 0.0);
            for j in 0..12 {
                assert_eq!(f.planes[[0, i, j]], f.planes[[0, j, i]]);
                assert_eq!(f.planes[[1, i, j]], -f.planes[[1, j, i]]);
                let back = Complex64::new(f.planes[[0, i, j]], f.planes[[1, i, j]]) * f.scale;
                assert!((back - cov[[i, j]]).norm() <= 1e-14 * f.scale);
            }
        }
    }

    #[test]
    fn non_hermitian_rejected() {
        let mut cov = sample_covariance(&random_set(30, 6, 5)).unwrap();
        cov[[0, 3]] += Complex64::new(1e-3, 0.0);
        assert!(matches!(covariance_to_feature(&cov), Err(Error::DataIntegrity(_))));
        let rect = Array2::<Complex64>::zeros((2, 3));
        assert!(matches!(covariance_to_feature(&rect), Err(Error::Contract(_))));
    }

    #[test]
    fn csi_feature_contract() {
        let unit = set_from(Array2::from_elem((50, 64), Complex64::new(0.6, -0.8)));
        let f = csi_to_feature(&unit).unwrap();
        let max = f.planes.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert_eq!(max, 1.0);
        assert_eq!(f.planes.dim(), (2, 50, 64));
        let f = csi_to_feature(&random_set(100, 64, 6)).unwrap();
        assert_eq!(f.planes.dim(), (2, 100, 64));
        assert!(matches!(
            csi_to_feature(&set_from(Array2::zeros((3, 4)))),
            Err(Error::DataIntegrity(_))
        ));
    }

    #[test]
    fn csi_round_trip() {
        let s = random_set(50, 64, 7);
        let f = csi_to_feature(&s).unwrap();
        for ((k, n), z) in s.samples.indexed_iter() {
            let back = Complex64::new(f.planes[[0, k, n]], f.planes[[1, k, n]]) * f.scale;
            assert!((back - z).norm() < 1e-12);
        }
    }

    #[test]
    fn codec_corners_and_errors() {
        let c = LabelCodec::new((2.0, 10.0), (0.5, 2.6)).unwrap();
        assert_eq!(c.encode(PolarPoint { angle: 0.5, range: 2.0 }).unwrap(), [0.0, 0.0]);
        let mid = c.encode(PolarPoint { angle: 1.55, range: 6.0 }).unwrap();
        assert_relative_eq!(mid[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(mid[1], 0.5, epsilon = 1e-15);
        assert!(c.encode(PolarPoint { angle: 1.0, range: 11.0 }).is_err());
        assert!(c.encode(PolarPoint { angle: 0.1, range: 5.0 }).is_err());
        assert!(LabelCodec::new((3.0, 3.0), (0.0, 1.0)).is_err());
    }

    proptest! {
        #[test]
        fn codec_round_trip(u in 0.0f64..=1.0, v in 0.0f64..=1.0) {
            let c = LabelCodec::new((2.0, 10.0), (30f64.to_radians(), 150f64.to_radians())).unwrap();
            let p = PolarPoint { range: 2.0 + 8.0 * u, angle: c.eta_min + v * (c.eta_max - c.eta_min) };
            let back = c.decode(c.encode(p).unwrap());
            prop_assert!((back.range - p.range).abs() < 1e-12);
            prop_assert!((back.angle - p.angle).abs() < 1e-12);
        }
    }
}
