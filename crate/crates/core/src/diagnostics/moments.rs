use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::stability::linear_fit;
use crate::error::{Error, Result};
use crate::matkit::norm2;

/// Resamples used for bootstrap standard errors and intervals.
pub const BOOTSTRAP_RESAMPLES: usize = 200;
/// Fixed key for bootstrap resampling so estimates are reproducible.
const BOOTSTRAP_SEED: u64 = 0x5EED_B007;

/// Estimate of `|X|_q = (E|X|^q)^{1/q}`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MomentEstimate {
    pub q_order: f64,
    pub value: f64,
    pub std_error: f64,
    pub n_samples: usize,
}

/// `|X|_q` of vector samples, with bootstrap standard error.
pub fn moment_norm(samples: &[Vec<f64>], q_order: f64) -> Result<MomentEstimate> {
    let norms: Vec<f64> = samples.iter().map(|s| norm2(s)).collect();
    moment_norm_of_norms(&norms, q_order)
}

/// `|X|_q` when the samples are already the magnitudes `|x_i|`.
pub fn moment_norm_of_norms(norms: &[f64], q_order: f64) -> Result<MomentEstimate> {
    moment_norm_seeded(norms, q_order, BOOTSTRAP_SEED)
}

pub(crate) fn moment_norm_seeded(norms: &[f64], q_order: f64, seed: u64) -> Result<MomentEstimate> {
    if norms.len() < 2 {
        return Err(Error::InsufficientSamples(format!(
            "moment estimate needs >= 2 samples, got {}",
            norms.len()
        )));
    }
    if !(q_order >= 1.0) || !q_order.is_finite() {
        return Err(Error::InvalidParameter(format!("moment order must be >= 1, got {q_order}")));
    }
    let powers: Vec<f64> = norms.iter().map(|x| x.abs().powf(q_order)).collect();
    let n = powers.len();
    let value = |mean: f64| mean.powf(1.0 / q_order);
    let full = value(powers.iter().sum::<f64>() / n as f64);
    if powers.iter().all(|p| *p == powers[0]) {
        return Ok(MomentEstimate {
            q_order,
            value: norms[0].abs(),
            std_error: 0.0,
            n_samples: n,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let boot: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .map(|_| {
            let s: f64 = (0..n).map(|_| powers[rng.random_range(0..n)]).sum();
            value(s / n as f64)
        })
        .collect();
    let mb = boot.iter().sum::<f64>() / boot.len() as f64;
    let var = boot.iter().map(|b| (b - mb) * (b - mb)).sum::<f64>() / (boot.len() - 1) as f64;
    Ok(MomentEstimate { q_order, value: full, std_error: var.sqrt(), n_samples: n })
}

/// Log-log fit `log(norm) ≈ intercept + alpha_hat · log(ε)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OrderFit {
    pub alpha_hat: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn order_fit(eps_grid: &[f64], norms: &[f64]) -> Result<OrderFit> {
    if eps_grid.len() != norms.len() {
        return Err(Error::GridMismatch(format!(
            "{} epsilons but {} norms",
            eps_grid.len(),
            norms.len()
        )));
    }
    if eps_grid.len() < 3 {
        return Err(Error::InsufficientSamples(format!(
            "order fit needs >= 3 grid points, got {}",
            eps_grid.len()
        )));
    }
    if let Some(bad) = norms.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::DegenerateFit(format!("non-positive norm {bad}")));
    }
    if let Some(bad) = eps_grid.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::InvalidParameter(format!("epsilon must be > 0, got {bad}")));
    }
    let lx: Vec<f64> = eps_grid.iter().map(|e| e.ln()).collect();
    let ly: Vec<f64> = norms.iter().map(|v| v.ln()).collect();
    let f = linear_fit(&lx, &ly)?;
    Ok(OrderFit { alpha_hat: f.slope, intercept: f.intercept, r2: f.r2 })
}

/// Percentile interval for `alpha_hat` from a parametric bootstrap: each norm
/// is redrawn as `Normal(value, std_error)` and the fit repeated.
pub fn order_fit_ci(
    eps_grid: &[f64],
    estimates: &[MomentEstimate],
    level: f64,
) -> Result<(OrderFit, [f64; 2])> {
    let values: Vec<f64> = estimates.iter().map(|e| e.value).collect();
    let fit = order_fit(eps_grid, &values)?;
    let mut rng = ChaCha8Rng::seed_from_u64(BOOTSTRAP_SEED ^ 0xA1FA);
    let mut slopes = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    for _ in 0..BOOTSTRAP_RESAMPLES {
        let draw: Vec<f64> = estimates
            .iter()
            .map(|e| {
                let z: f64 = StandardNormal.sample(&mut rng);
                (e.value + e.std_error * z).max(e.value * 1e-6)
            })
            .collect();
        slopes.push(order_fit(eps_grid, &draw)?.alpha_hat);
    }
    Ok((fit, percentile_interval(&mut slopes, level)))
}

/// Central `level` percentile interval of `values` (sorted in place).
pub fn percentile_interval(values: &mut [f64], level: f64) -> [f64; 2] {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    let lo_q = (1.0 - level) / 2.0;
    let pick = |q: f64| values[((q * (n - 1) as f64).round() as usize).min(n - 1)];
    [pick(lo_q), pick(1.0 - lo_q)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_samples() {
        let s = vec![vec![3.0, 4.0]; 10];
        let m = moment_norm(&s, 2.0).unwrap();
        assert_eq!(m.value, 5.0);
        assert_eq!(m.std_error, 0.0);
        assert_eq!(m.n_samples, 10);
    }

    #[test]
    fn rejects_tiny_samples() {
        assert!(moment_norm(&[vec![1.0]], 2.0).is_err());
        assert!(moment_norm(&[], 2.0).is_err());
        assert!(moment_norm(&[vec![1.0], vec![2.0]], 0.5).is_err());
    }

    #[test]
    fn power_laws_are_exact() {
        let eps = [1e-1, 1e-2, 1e-3];
        let sq: Vec<f64> = eps.iter().map(|e: &f64| e.sqrt()).collect();
        let f = order_fit(&eps, &sq).unwrap();
        assert!((f.alpha_hat - 0.5).abs() < 1e-12);
        assert!((f.r2 - 1.0).abs() < 1e-12);
        let f = order_fit(&eps, &eps).unwrap();
        assert!((f.alpha_hat - 1.0).abs() < 1e-12);
    }

    #[test]
    fn order_fit_errors() {
        assert!(matches!(
            order_fit(&[1e-1, 1e-2, 1e-3], &[1.0, 0.0, 1.0]),
            Err(Error::DegenerateFit(_))
        ));
        assert!(order_fit(&[1e-1, 1e-2], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn percentile_interval_bounds() {
        let mut v: Vec<f64> = (0..101).map(f64::from).collect();
        assert_eq!(percentile_interval(&mut v, 0.9), [5.0, 95.0]);
    }
}
