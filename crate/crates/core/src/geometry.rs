//! Array geometries and near-field analysis formulas.
//!
//! The circular array used throughout is a sector: `N` elements spread
//! uniformly over the 60° arc from π/6 to π/2 at radius `R`. The linear array
//! exists only for the path-difference analysis that contrasts its nearly
//! linear angle/range coupling with the circular case.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// First element angle of the circular sector.
pub const UCA_ARC_START: f64 = PI / 6.0;

/// Angular width of the circular sector.
pub const UCA_ARC_SPAN: f64 = PI / 3.0;

/// `(NΔ/r)²` at the Fresnel lower bound equals this constant divided by `N`
/// when the aperture is `NΔ/2` and `Δ = λ/2` (i.e. `16 / 0.3844`, commonly
/// quoted as 41.6).
pub const NEAR_FIELD_RATIO_CONSTANT: f64 = 16.0 / 0.3844;

pub fn wavelength_from_frequency(freq_hz: f64) -> Result<f64> {
    if !(freq_hz > 0.0 && freq_hz.is_finite()) {
        return Err(Error::Domain(format!(
            "carrier frequency must be positive, got {freq_hz}"
        )));
    }
    Ok(SPEED_OF_LIGHT / freq_hz)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArrayKind {
    Uca,
    Ula,
}

/// Kind-specific size parameter of an array.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ArrayGeometry {
    /// Circular sector of the given radius (m).
    Uca { radius: f64 },
    /// Linear array with the given inter-element spacing (m).
    Ula { spacing: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayConfig {
    pub geometry: ArrayGeometry,
    pub num_elements: usize,
    pub wavelength: f64,
}

impl ArrayConfig {
    pub fn uca(num_elements: usize, radius: f64, wavelength: f64) -> Result<Self> {
        let cfg = Self {
            geometry: ArrayGeometry::Uca { radius },
            num_elements,
            wavelength,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn ula(num_elements: usize, spacing: f64, wavelength: f64) -> Result<Self> {
        let cfg = Self {
            geometry: ArrayGeometry::Ula { spacing },
            num_elements,
            wavelength,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The 64-element, 1 m radius sector at 3.5 GHz used for all datasets.
    pub fn reference_uca() -> Self {
        Self {
            geometry: ArrayGeometry::Uca { radius: 1.0 },
            num_elements: 64,
            wavelength: SPEED_OF_LIGHT / 3.5e9,
        }
    }

    pub fn kind(&self) -> ArrayKind {
        match self.geometry {
            ArrayGeometry::Uca { .. } => ArrayKind::Uca,
            ArrayGeometry::Ula { .. } => ArrayKind::Ula,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_elements < 2 {
            return Err(Error::Config(format!(
                "num_elements must be at least 2, got {}",
                self.num_elements
            )));
        }
        let (name, size) = match self.geometry {
            ArrayGeometry::Uca { radius } => ("radius", radius),
            ArrayGeometry::Ula { spacing } => ("spacing", spacing),
        };
        if !(size > 0.0 && size.is_finite()) {
            return Err(Error::Config(format!("{name} must be positive, got {size}")));
        }
        if !(self.wavelength > 0.0 && self.wavelength.is_finite()) {
            return Err(Error::Config(format!(
                "wavelength must be positive, got {}",
                self.wavelength
            )));
        }
        Ok(())
    }

    /// Effective aperture used for Fresnel-region checks.
    ///
    /// Circular sector: chord of the 60° arc, `2R·sin(π/6) = R`.
    /// Linear array: `NΔ/2`.
    pub fn aperture(&self) -> f64 {
        match self.geometry {
            ArrayGeometry::Uca { radius } => 2.0 * radius * (UCA_ARC_SPAN / 2.0).sin(),
            ArrayGeometry::Ula { spacing } => self.num_elements as f64 * spacing / 2.0,
        }
    }
}

/// A point in the array's polar frame. Angles are radians and never wrapped.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolarPoint {
    pub angle: f64,
    pub range: f64,
}

impl PolarPoint {
    pub fn new(angle: f64, range: f64) -> Result<Self> {
        if !(range > 0.0 && range.is_finite()) || !angle.is_finite() {
            return Err(Error::Domain(format!(
                "invalid polar point (angle {angle}, range {range})"
            )));
        }
        Ok(Self { angle, range })
    }

    pub fn to_cartesian(self) -> (f64, f64) {
        (self.range * self.angle.cos(), self.range * self.angle.sin())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ElementLayout {
    pub kind: ArrayKind,
    pub elements: Vec<PolarPoint>,
}

impl ElementLayout {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Element `n`, 1-based.
    pub fn element(&self, n: usize) -> Result<PolarPoint> {
        if n == 0 || n > self.elements.len() {
            return Err(Error::Domain(format!(
                "element index {n} outside 1..={}",
                self.elements.len()
            )));
        }
        Ok(self.elements[n - 1])
    }
}

/// Polar coordinate of element `n` (1-based) of a circular sector:
/// `θ_n = π/6 + (n−1)π / (3(N−1))`, `r_n = R`.
pub fn uca_element_coordinate(cfg: &ArrayConfig, n: usize) -> Result<PolarPoint> {
    cfg.validate()?;
    let radius = match cfg.geometry {
        ArrayGeometry::Uca { radius } => radius,
        ArrayGeometry::Ula { .. } => {
            return Err(Error::Config(
                "uca_element_coordinate requires a UCA configuration".into(),
            ))
        }
    };
    let count = cfg.num_elements;
    if n == 0 || n > count {
        return Err(Error::Domain(format!("element index {n} outside 1..={count}")));
    }
    let angle = UCA_ARC_START + (n - 1) as f64 * PI / (3.0 * (count - 1) as f64);
    Ok(PolarPoint {
        angle,
        range: radius,
    })
}

pub fn build_layout(cfg: &ArrayConfig) -> Result<ElementLayout> {
    cfg.validate()?;
    let elements = match cfg.geometry {
        ArrayGeometry::Uca { .. } => (1..=cfg.num_elements)
            .map(|n| uca_element_coordinate(cfg, n))
            .collect::<Result<Vec<_>>>()?,
        // Element n sits n·Δ from the origin along the array axis (angle 0).
        ArrayGeometry::Ula { spacing } => (1..=cfg.num_elements)
            .map(|n| PolarPoint {
                angle: 0.0,
                range: n as f64 * spacing,
            })
            .collect(),
    };
    Ok(ElementLayout {
        kind: cfg.kind(),
        elements,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FresnelBounds {
    pub lower: f64,
    pub upper: f64,
    pub aperture: f64,
}

impl FresnelBounds {
    pub fn contains(&self, range: f64) -> bool {
        self.lower <= range && range <= self.upper
    }
}

/// Radiating near-field band `0.62·sqrt(D³/λ) ≤ r ≤ D²/λ`.
pub fn fresnel_bounds(aperture: f64, wavelength: f64) -> Result<FresnelBounds> {
    if !(aperture > 0.0 && aperture.is_finite()) || !(wavelength > 0.0 && wavelength.is_finite())
    {
        return Err(Error::Domain(format!(
            "fresnel bounds need positive aperture and wavelength, got D={aperture}, λ={wavelength}"
        )));
    }
    Ok(FresnelBounds {
        lower: 0.62 * (aperture.powi(3) / wavelength).sqrt(),
        upper: aperture * aperture / wavelength,
        aperture,
    })
}

/// Exact path difference `d̃_n − r_s` between linear-array element `n` and the
/// origin element for a source at `(eta_s, r_s)`.
///
/// Evaluated as `(d² − r_s²)/(d + r_s)` to avoid cancellation when `nΔ ≪ r_s`.
pub fn ula_path_difference_exact(r_s: f64, eta_s: f64, n: usize, spacing: f64) -> f64 {
    let offset = n as f64 * spacing;
    let excess = offset * (offset - 2.0 * r_s * eta_s.cos());
    let d = (r_s * r_s + excess).max(0.0).sqrt();
    if d + r_s == 0.0 {
        return 0.0;
    }
    excess / (d + r_s)
}

/// Second-order expansion of [`ula_path_difference_exact`] in `nΔ/r_s`:
/// `−nΔ·cos η + (nΔ)²·sin²η / (2 r_s)`.
///
/// The remainder is third order, bounded by `(nΔ)³/r_s²` for `nΔ/r_s ≤ 0.05`.
pub fn ula_path_difference_taylor(r_s: f64, eta_s: f64, n: usize, spacing: f64) -> f64 {
    let offset = n as f64 * spacing;
    let sin = eta_s.sin();
    -offset * eta_s.cos() + offset * offset * sin * sin / (2.0 * r_s)
}

/// Linear-coupling form `−nΔ·cos η + (nΔ)²/(2 r_s)`.
///
/// Keeps the plane-wave term and an angle-independent curvature term. It agrees
/// with [`ula_path_difference_taylor`] only at broadside (`η = π/2`); elsewhere
/// it differs by `(nΔ)²·cos²η/(2 r_s)`.
pub fn ula_path_difference_linear_coupled(r_s: f64, eta_s: f64, n: usize, spacing: f64) -> f64 {
    let offset = n as f64 * spacing;
    -offset * eta_s.cos() + offset * offset / (2.0 * r_s)
}

/// `(NΔ / r_s)²`; the expansion is trusted when this is at most
/// [`near_field_ratio_limit`].
pub fn near_field_ratio(num_elements: usize, spacing: f64, r_s: f64) -> f64 {
    let q = num_elements as f64 * spacing / r_s;
    q * q
}

/// `41.6 / N` bound on [`near_field_ratio`] (with the unrounded constant).
pub fn near_field_ratio_limit(num_elements: usize) -> f64 {
    NEAR_FIELD_RATIO_CONSTANT / num_elements as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn uca(n: usize, r: f64) -> ArrayConfig {
        ArrayConfig::uca(n, r, 0.0856550).unwrap()
    }

    #[test]
    fn first_and_last_element() {
        let cfg = uca(64, 1.0);
        let p1 = uca_element_coordinate(&cfg, 1).unwrap();
        assert_relative_eq!(p1.angle, std::f64::consts::FRAC_PI_6, epsilon = 1e-12);
        assert_eq!(p1.range, 1.0);
        let p64 = uca_element_coordinate(&cfg, 64).unwrap();
        assert_relative_eq!(p64.angle, PI / 2.0, epsilon = 1e-15);
        let p2 = uca_element_coordinate(&uca(2, 1.0), 2).unwrap();
        assert_relative_eq!(p2.angle, PI / 6.0 + PI / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn element_index_errors() {
        let cfg = uca(8, 1.0);
        assert!(matches!(uca_element_coordinate(&cfg, 0), Err(Error::Domain(_))));
        assert!(matches!(uca_element_coordinate(&cfg, 9), Err(Error::Domain(_))));
        let ula = ArrayConfig::ula(8, 0.1, 0.2).unwrap();
        assert!(matches!(uca_element_coordinate(&ula, 1), Err(Error::Config(_))));
    }

    #[test]
    fn config_validation() {
        assert!(ArrayConfig::uca(1, 1.0, 0.1).is_err());
        assert!(ArrayConfig::uca(4, 0.0, 0.1).is_err());
        assert!(ArrayConfig::ula(4, -1.0, 0.1).is_err());
        assert!(ArrayConfig::uca(4, 1.0, 0.0).is_err());
        assert!(wavelength_from_frequency(0.0).is_err());
        assert_relative_eq!(
            wavelength_from_frequency(3.5e9).unwrap(),
            0.0856550,
            epsilon = 1e-7
        );
        ArrayConfig::reference_uca().validate().unwrap();
    }

    #[test]
    fn layouts() {
        let l = build_layout(&uca(3, 1.0)).unwrap();
        let want = [PI / 6.0, PI / 3.0, PI / 2.0];
        for (p, w) in l.elements.iter().zip(want) {
            assert_relative_eq!(p.angle, w, epsilon = 1e-15);
            assert_eq!(p.range, 1.0);
        }
        let l = build_layout(&ArrayConfig::ula(2, 0.1, 0.2).unwrap()).unwrap();
        assert_relative_eq!(l.elements[0].range, 0.1);
        assert_relative_eq!(l.elements[1].range, 0.2);
        let l = build_layout(&uca(64, 1.0)).unwrap();
        assert_eq!(l.len(), 64);
        assert!(l.elements.windows(2).all(|w| w[1].angle > w[0].angle));
    }

    #[test]
    fn fresnel_examples() {
        let lambda = 0.0856550;
        let b = fresnel_bounds(2.0, lambda).unwrap();
        assert_relative_eq!(b.lower, 5.991, epsilon = 1e-3);
        assert_relative_eq!(b.upper, 46.70, epsilon = 1e-2);
        let b = fresnel_bounds(1.0, lambda).unwrap();
        assert_relative_eq!(b.lower, 2.118, epsilon = 1e-3);
        assert_relative_eq!(b.upper, 11.675, epsilon = 1e-3);
        let b = fresnel_bounds(lambda, lambda).unwrap();
        assert_relative_eq!(b.lower, 0.62 * lambda, max_relative = 1e-14);
        assert_relative_eq!(b.upper, lambda, max_relative = 1e-14);
        assert!(fresnel_bounds(0.0, 1.0).is_err());
        assert!(fresnel_bounds(1.0, -1.0).is_err());
    }

    #[test]
    fn uca_aperture_is_chord() {
        assert_relative_eq!(uca(64, 1.0).aperture(), 1.0, epsilon = 1e-15);
        assert_relative_eq!(uca(64, 2.5).aperture(), 2.5, epsilon = 1e-15);
    }

    #[test]
    fn path_difference_examples() {
        assert_relative_eq!(ula_path_difference_exact(5.0, 0.0, 1, 1.0), -1.0, epsilon = 1e-15);
        assert_relative_eq!(
            ula_path_difference_exact(3.0, PI / 2.0, 1, 1.0),
            10f64.sqrt() - 3.0,
            epsilon = 1e-15
        );
        let (r, eta, n, d) = (5.0, PI / 3.0, 2, 0.0428);
        let offset = n as f64 * d;
        let direct = (r * r + offset * offset - 2.0 * r * offset * eta.cos()).sqrt() - r;
        assert_relative_eq!(ula_path_difference_exact(r, eta, n, d), direct, max_relative = 1e-14);
        let gap = (ula_path_difference_taylor(r, eta, n, d) - direct).abs();
        assert!(gap < offset.powi(3) / (r * r), "gap {gap}");
    }

    #[test]
    fn expansions_at_special_angles() {
        for &(r, n, d) in &[(3.0, 4, 0.1), (7.5, 1, 0.02)] {
            let offset = n as f64 * d;
            let broadside = offset * offset / (2.0 * r);
            assert_relative_eq!(
                ula_path_difference_taylor(r, PI / 2.0, n, d),
                broadside,
                epsilon = 1e-15
            );
            assert_relative_eq!(
                ula_path_difference_linear_coupled(r, PI / 2.0, n, d),
                broadside,
                epsilon = 1e-15
            );
            // Far field: only the plane-wave term survives.
            let eta = 0.7;
            assert_relative_eq!(
                ula_path_difference_taylor(1e12, eta, n, d),
                -offset * eta.cos(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn near_field_ratio_examples() {
        assert_eq!(near_field_ratio(1, 1.0, 1.0), 1.0);
        assert_relative_eq!(near_field_ratio(64, 0.0428, 2.0), 1.87580416, max_relative = 1e-12);

        let lambda = SPEED_OF_LIGHT / 3.5e9;
        let n = 1000;
        let spacing = lambda / 2.0;
        let d = n as f64 * spacing / 2.0;
        let r_s = fresnel_bounds(d, lambda).unwrap().lower;
        let ratio = near_field_ratio(n, spacing, r_s);
        assert!(ratio <= near_field_ratio_limit(n) * (1.0 + 1e-12));
        assert_relative_eq!(near_field_ratio_limit(n), 0.0416, epsilon = 5e-5);
    }

    proptest! {
        #[test]
        fn arc_monotone_and_symmetric(n_el in 2usize..400, r in 0.1f64..10.0) {
            let l = build_layout(&uca(n_el, r)).unwrap();
            prop_assert!((l.elements[0].angle - PI / 6.0).abs() < 1e-15);
            prop_assert!((l.elements[n_el - 1].angle - PI / 2.0).abs() < 1e-14);
            for w in l.elements.windows(2) {
                prop_assert!(w[1].angle > w[0].angle);
            }
            for i in 0..n_el {
                let s = l.elements[i].angle + l.elements[n_el - 1 - i].angle;
                prop_assert!((s - 2.0 * PI / 3.0).abs() < 1e-14);
            }
        }

        #[test]
        fn fresnel_ordering(lambda in 1e-3f64..1.0, ratio in 0.3845f64..100.0) {
            let b = fresnel_bounds(ratio * lambda, lambda).unwrap();
            prop_assert!(b.lower < b.upper);
        }

        #[test]
        fn taylor_remainder(r in 0.5f64..50.0, eta in -PI..PI, n in 1usize..200, q in 1e-4f64..0.05) {
            let spacing = q * r / n as f64;
            let offset = n as f64 * spacing;
            let exact = ula_path_difference_exact(r, eta, n, spacing);
            let approx = ula_path_difference_taylor(r, eta, n, spacing);
            prop_assert!((exact - approx).abs() <= offset.powi(3) / (r * r));
        }
    }
}
