//! Central finite-difference checks of analytic gradients.

use ndarray::Array4;

use super::{Module, Param};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct GradReport {
    pub name: String,
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖, NORM_FLOOR)` over the probed entries.
    pub rel_error: f64,
    pub probed: usize,
}

/// Gradient norms below this are rounding noise (for instance a conv bias
/// feeding batch norm, whose true gradient is exactly zero).
pub const NORM_FLOOR: f64 = 1e-4;

/// Norm-wise relative error between two gradient vectors, with the
/// denominator floored at [`NORM_FLOOR`].
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / na.max(nn).max(NORM_FLOOR)
}

/// Evenly spaced probe indices, at most `limit` of `len`.
fn probes(len: usize, limit: usize) -> Vec<usize> {
    if len <= limit {
        (0..len).collect()
    } else {
        (0..limit).map(|i| i * len / limit).collect()
    }
}

fn nth_param<M: Module<f64>>(m: &mut M, t: usize) -> &mut Param<f64> {
    m.trainable_params().swap_remove(t)
}

/// Compares the gradients accumulated by `analytic` with central differences
/// of `loss` for every trainable tensor of `m`.
///
/// `loss` must be a deterministic function of the parameters; `analytic`
/// must run the same computation and leave `∂loss/∂θ` in the gradients.
pub fn check_params<M, L, A>(m: &mut M, mut loss: L, mut analytic: A, eps: f64, per_tensor: usize) -> Result<Vec<GradReport>>
where
    M: Module<f64>,
    L: FnMut(&mut M) -> Result<f64>,
    A: FnMut(&mut M) -> Result<()>,
{
    m.zero_grad();
    analytic(m)?;
    let names: Vec<String> = m
        .all_slots()
        .into_iter()
        .filter(|s| s.kind == super::SlotKind::Trainable)
        .map(|s| s.name)
        .collect();
    let grads: Vec<Vec<f64>> = m.trainable_params().iter().map(|p| p.grad.clone()).collect();
    let mut out = Vec::with_capacity(names.len());
    for (t, name) in names.into_iter().enumerate() {
        let idx = probes(grads[t].len(), per_tensor);
        let mut numeric = Vec::with_capacity(idx.len());
        for &j in &idx {
            let orig = nth_param(m, t).value[j];
            nth_param(m, t).value[j] = orig + eps;
            let up = loss(m)?;
            nth_param(m, t).value[j] = orig - eps;
            let down = loss(m)?;
            nth_param(m, t).value[j] = orig;
            numeric.push((up - down) / (2.0 * eps));
        }
        let analytic: Vec<f64> = idx.iter().map(|&j| grads[t][j]).collect();
        out.push(GradReport {
            name,
            rel_error: relative_error(&analytic, &numeric),
            probed: idx.len(),
        });
    }
    Ok(out)
}

/// Same comparison for the gradient with respect to an input tensor.
pub fn check_input<L>(x: &Array4<f64>, analytic: &Array4<f64>, mut loss: L, eps: f64, limit: usize) -> Result<GradReport>
where
    L: FnMut(&Array4<f64>) -> Result<f64>,
{
    let mut x = x.as_standard_layout().into_owned();
    let idx = probes(x.len(), limit);
    let a = analytic.as_standard_layout();
    let a = a.as_slice().expect("standard layout");
    let mut numeric = Vec::with_capacity(idx.len());
    for &j in &idx {
        let orig = x.as_slice().expect("owned")[j];
        x.as_slice_mut().expect("owned")[j] = orig + eps;
        let up = loss(&x)?;
        x.as_slice_mut().expect("owned")[j] = orig - eps;
        let down = loss(&x)?;
        x.as_slice_mut().expect("owned")[j] = orig;
        numeric.push((up - down) / (2.0 * eps));
    }
    let analytic: Vec<f64> = idx.iter().map(|&j| a[j]).collect();
    Ok(GradReport {
        name: "input".into(),
        rel_error: relative_error(&analytic, &numeric),
        probed: idx.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_basics() {
        assert_eq!(relative_error(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(relative_error(&[0.0], &[0.0]), 0.0);
        assert!((relative_error(&[1.0, 0.0], &[0.0, 0.0]) - 1.0).abs() < 1e-15);
        assert!(relative_error(&[1e-17], &[3e-9]) < 1e-4);
    }

    #[test]
    fn probes_are_spread_and_bounded() {
        assert_eq!(probes(3, 10), vec![0, 1, 2]);
        let p = probes(1000, 4);
        assert_eq!(p, vec![0, 250, 500, 750]);
    }
}
