use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stability::FilterStabilityReport;
use crate::ekf::Linearization;
use crate::error::{Error, Result};
use crate::matkit::{norm2, sym_eigen, Mat, SpdMat};
use crate::models::{fd_jacobian, InitialCondition, ModelCoefficients};

/// Minimum number of pairs for the pairwise estimators.
pub const MIN_PAIRS: usize = 100;
/// Half-width of local pairs relative to the box half-width.
const LOCAL_PAIR_SCALE: f64 = 1e-2;

/// Axis-aligned box `[lo, hi]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl DomainBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::DimensionMismatch {
                op: "DomainBox::new",
                expected: "non-empty bounds of equal length".into(),
                found: format!("{} and {}", lo.len(), hi.len()),
            });
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a <= b) || !a.is_finite() || !b.is_finite()) {
            return Err(Error::InvalidParameter("box bounds must be finite with lo <= hi".into()));
        }
        Ok(Self { lo, hi })
    }

    /// `center ± half_width` in every coordinate.
    pub fn around(center: &[f64], half_width: f64) -> Result<Self> {
        Self::new(
            center.iter().map(|c| c - half_width).collect(),
            center.iter().map(|c| c + half_width).collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| 0.5 * (a + b)).collect()
    }
}

/// Uniform sampler on a [`DomainBox`].
///
/// Pairs alternate between two independent uniform points and a uniform point
/// with a close neighbour, so that both global and local behaviour are probed.
#[derive(Clone, Debug)]
pub struct BoxSampler {
    pub domain: DomainBox,
    pub seed: u64,
}

impl BoxSampler {
    pub fn new(domain: DomainBox, seed: u64) -> Self {
        Self { domain, seed }
    }

    fn uniform(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.domain
            .lo
            .iter()
            .zip(&self.domain.hi)
            .map(|(a, b)| if a == b { *a } else { rng.random_range(*a..=*b) })
            .collect()
    }

    pub fn points(&self, n: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(1);
        (0..n).map(|_| self.uniform(&mut rng)).collect()
    }

    pub fn pairs(&self, n: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(2);
        (0..n)
            .map(|i| {
                let x1 = self.uniform(&mut rng);
                let x2 = if i % 2 == 0 {
                    self.uniform(&mut rng)
                } else {
                    x1.iter()
                        .enumerate()
                        .map(|(j, v)| {
                            let (lo, hi) = (self.domain.lo[j], self.domain.hi[j]);
                            let w = 0.5 * (hi - lo) * LOCAL_PAIR_SCALE;
                            (v + w * rng.random_range(-1.0..=1.0)).clamp(lo, hi)
                        })
                        .collect()
                };
                (x1, x2)
            })
            .collect()
    }
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn check_pair_count(n_pairs: usize) -> Result<()> {
    if n_pairs < MIN_PAIRS {
        return Err(Error::InsufficientSamples(format!(
            "need >= {MIN_PAIRS} pairs, got {n_pairs}"
        )));
    }
    Ok(())
}

/// Max over pairs of `|φ(x₁) − φ(x₂) − F(x₁ − x₂)| / |x₁ − x₂|`, an
/// empirical lower bound for the almost-linearity modulus on the sampled set.
pub fn almost_linearity_modulus(
    phi: impl Fn(&[f64]) -> Vec<f64> + Sync,
    f_lin: &Mat,
    sampler: &BoxSampler,
    n_pairs: usize,
) -> Result<f64> {
    check_pair_count(n_pairs)?;
    modulus_on_pairs(phi, f_lin, &sampler.pairs(n_pairs))
}

pub fn modulus_on_pairs(
    phi: impl Fn(&[f64]) -> Vec<f64> + Sync,
    f_lin: &Mat,
    pairs: &[(Vec<f64>, Vec<f64>)],
) -> Result<f64> {
    pairwise(pairs, f64::max, |x1, x2, dx| {
        let lin = f_lin.mul_vec(dx);
        let (p1, p2) = (phi(x1), phi(x2));
        let r: Vec<f64> = (0..lin.len()).map(|i| p1[i] - p2[i] - lin[i]).collect();
        norm2(&r)
    })
}

/// Min over pairs of `|h(x₁) − h(x₂)| / |x₁ − x₂|`, an empirical upper bound
/// for the best strong-injectivity constant.
pub fn injectivity_constant(
    h: impl Fn(&[f64]) -> Vec<f64> + Sync,
    sampler: &BoxSampler,
    n_pairs: usize,
) -> Result<f64> {
    check_pair_count(n_pairs)?;
    injectivity_on_pairs(h, &sampler.pairs(n_pairs))
}

pub fn injectivity_on_pairs(
    h: impl Fn(&[f64]) -> Vec<f64> + Sync,
    pairs: &[(Vec<f64>, Vec<f64>)],
) -> Result<f64> {
    pairwise(pairs, f64::min, |x1, x2, _| norm2(&diff(&h(x1), &h(x2))))
}

/// Reduces `num(x₁, x₂, x₁ − x₂) / |x₁ − x₂|` over non-coincident pairs.
/// `max`/`min` are order-independent, so the parallel result is deterministic.
fn pairwise(
    pairs: &[(Vec<f64>, Vec<f64>)],
    reduce: fn(f64, f64) -> f64,
    num: impl Fn(&[f64], &[f64], &[f64]) -> f64 + Sync,
) -> Result<f64> {
    let out = pairs
        .par_iter()
        .filter_map(|(x1, x2)| {
            let dx = diff(x1, x2);
            let d = norm2(&dx);
            (d > 0.0).then(|| num(x1, x2, &dx) / d)
        })
        .reduce_with(reduce);
    out.ok_or(Error::CoincidentSamples)
}

/// Gates applied to the estimates of an [`AssumptionReport`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssumptionThresholds {
    /// Largest acceptable sup of `‖σ‖, ‖g‖, ‖ℓ‖` on the box.
    pub bound_max: f64,
    /// Largest acceptable almost-linearity modulus.
    pub almost_linear_max: f64,
    /// Largest acceptable relative mismatch between analytic and
    /// finite-difference Jacobians.
    pub gradient_rel_tol: f64,
    pub injectivity_min: f64,
    pub ellipticity_min: f64,
    pub q0_eig_ratio_max: f64,
}

impl Default for AssumptionThresholds {
    fn default() -> Self {
        Self {
            bound_max: 1e6,
            almost_linear_max: 1e-2,
            gradient_rel_tol: 1e-4,
            injectivity_min: 1e-3,
            ellipticity_min: 1e-6,
            q0_eig_ratio_max: 1e6,
        }
    }
}

/// Sampling settings for [`check_assumptions`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssumptionSpec {
    /// Half-width of the box around the initial condition, in every
    /// signal and observation coordinate.
    pub half_width: f64,
    pub n_pairs: usize,
    pub seed: u64,
    pub thresholds: AssumptionThresholds,
}

impl Default for AssumptionSpec {
    fn default() -> Self {
        Self {
            half_width: 5.0,
            n_pairs: 10_000,
            seed: 0,
            thresholds: AssumptionThresholds::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Boundedness {
    pub sup_sigma: f64,
    pub sup_g: f64,
    pub sup_ell: f64,
    pub inadmissible_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModulusPair {
    pub f: f64,
    pub h: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompanionModulus {
    pub epsilon: Option<f64>,
    pub mu: ModulusPair,
    /// Companion modulus over primary modulus; `None` when the primary is 0.
    pub ratio_f: Option<f64>,
    pub ratio_h: Option<f64>,
    pub epsilon_ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AlmostLinearity {
    pub mu: ModulusPair,
    /// Linear maps used: Jacobians at the box centre in `y`, at each sample's `z`.
    pub reference: String,
    pub companion: Option<CompanionModulus>,
    /// Max relative mismatch between analytic and finite-difference Jacobians.
    pub grad_f_rel_error: f64,
    pub grad_h_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Ellipticity {
    /// min over samples of `λ_min(a)`.
    pub a: f64,
    /// min over samples of `λ_min((ℓℓᵀ)⁻¹)`.
    pub r_inv: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Verdicts {
    pub a2_bounded: bool,
    pub a3_almost_linear: bool,
    pub a4_strongly_injective: bool,
    pub a4_elliptic: bool,
    pub a4_q0_eig_ratio: bool,
}

/// Sampled evidence for the structural hypotheses behind the √ε error
/// bound, with the thresholds behind every verdict.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub schema: &'static str,
    pub model: String,
    pub epsilon: Option<f64>,
    pub domain: DomainBox,
    pub n_pairs: usize,
    pub n_points: usize,
    pub seed: u64,
    pub boundedness: Boundedness,
    pub almost_linear_mu: AlmostLinearity,
    pub injectivity_c: f64,
    pub ellipticity_min_eig: Ellipticity,
    pub q0_eig_ratio: f64,
    pub thresholds: AssumptionThresholds,
    pub verdicts: Verdicts,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub filter_stability: Option<FilterStabilityReport>,
}

impl AssumptionReport {
    pub const SCHEMA: &'static str = "diag-v1";

    /// Every verdict holds.
    pub fn all_pass(&self) -> bool {
        let v = &self.verdicts;
        v.a2_bounded && v.a3_almost_linear && v.a4_strongly_injective && v.a4_elliptic && v.a4_q0_eig_ratio
    }
}

type CoeffFn<'a> = dyn Fn(&[f64], &[f64]) -> Vec<f64> + Sync + 'a;

struct PairSample<'a> {
    y1: &'a [f64],
    y2: &'a [f64],
    z: &'a [f64],
}

fn split_pairs(pairs: &[(Vec<f64>, Vec<f64>)], n: usize) -> Vec<PairSample<'_>> {
    pairs
        .iter()
        .map(|(p1, p2)| PairSample { y1: &p1[..n], y2: &p2[..n], z: &p1[n..] })
        .collect()
}

/// Moduli of `f` and `h` against their Jacobians at `(y_ref, z)`.
fn model_moduli(
    model: &dyn ModelCoefficients,
    pairs: &[PairSample<'_>],
    y_ref: &[f64],
) -> Result<ModulusPair> {
    let one = |phi: &CoeffFn<'_>,
               jac: &(dyn Fn(&[f64]) -> Mat + Sync)|
     -> Result<f64> {
        pairs
            .par_iter()
            .filter_map(|p| {
                let dy = diff(p.y1, p.y2);
                let d = norm2(&dy);
                if d == 0.0 {
                    return None;
                }
                let lin = jac(p.z).mul_vec(&dy);
                let r = diff(&diff(&phi(p.y1, p.z), &phi(p.y2, p.z)), &lin);
                Some(norm2(&r) / d)
            })
            .reduce_with(f64::max)
            .ok_or(Error::CoincidentSamples)
    };
    Ok(ModulusPair {
        f: one(&|y, z| model.f(0.0, y, z), &|z| model.grad_f(0.0, y_ref, z))?,
        h: one(&|y, z| model.h(0.0, y, z), &|z| model.grad_h(0.0, y_ref, z))?,
    })
}

fn gradient_mismatch(model: &dyn ModelCoefficients, points: &[Vec<f64>], n: usize) -> (f64, f64) {
    let mut worst = (0.0f64, 0.0f64);
    for p in points.iter().take(MIN_PAIRS) {
        let (y, z) = (&p[..n], &p[n..]);
        let rel = |analytic: Mat, fd: Mat| {
            (&analytic - &fd).frobenius_norm() / analytic.frobenius_norm().max(1e-6)
        };
        let ef = rel(model.grad_f(0.0, y, z), fd_jacobian(|v| model.f(0.0, v, z), y, 1e-6));
        let eh = rel(model.grad_h(0.0, y, z), fd_jacobian(|v| model.h(0.0, v, z), y, 1e-6));
        worst = (worst.0.max(ef), worst.1.max(eh));
    }
    worst
}

/// Samples the model on a box around `ic` and evaluates boundedness,
/// almost-linearity, strong injectivity, ellipticity and the `Q(0)`
/// eigenvalue ratio. `companion` is the same model at a smaller ε; when given,
/// almost-linearity also requires the modulus to shrink.
pub fn check_assumptions(
    model: &dyn ModelCoefficients,
    ic: &InitialCondition,
    q0: &SpdMat,
    spec: &AssumptionSpec,
    companion: Option<&dyn ModelCoefficients>,
) -> Result<AssumptionReport> {
    check_pair_count(spec.n_pairs)?;
    if !(spec.half_width > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "half_width must be > 0, got {}",
            spec.half_width
        )));
    }
    let dims = model.dims();
    let center: Vec<f64> = ic.y0.iter().chain(&ic.z0).copied().collect();
    let domain = DomainBox::around(&center, spec.half_width)?;
    let sampler = BoxSampler::new(domain.clone(), spec.seed);
    let points = sampler.points(spec.n_pairs);
    let raw_pairs = sampler.pairs(spec.n_pairs);
    let pairs = split_pairs(&raw_pairs, dims.n);
    let th = &spec.thresholds;

    let mut bounded = Boundedness { sup_sigma: 0.0, sup_g: 0.0, sup_ell: 0.0, inadmissible_samples: 0 };
    let mut ell = Ellipticity { a: f64::INFINITY, r_inv: f64::INFINITY };
    for p in &points {
        let (y, z) = (&p[..dims.n], &p[dims.n..]);
        if !model.admissible(0.0, y, z) {
            bounded.inadmissible_samples += 1;
            continue;
        }
        let lin = Linearization::at(model, 0.0, y, z)?;
        bounded.sup_sigma = bounded.sup_sigma.max(lin.sigma.frobenius_norm());
        bounded.sup_g = bounded.sup_g.max(lin.g.frobenius_norm());
        bounded.sup_ell = bounded.sup_ell.max(lin.ell.frobenius_norm());
        ell.a = ell.a.min(sym_eigen(&lin.a_matrix())?.values[0]);
        ell.r_inv = ell.r_inv.min(sym_eigen(&lin.r_inv.symmetrize())?.values[0]);
    }
    if bounded.inadmissible_samples == points.len() {
        return Err(Error::InvalidParameter("no admissible point in the sampled box".into()));
    }

    let y_ref = &domain.center()[..dims.n];
    let mu = model_moduli(model, &pairs, y_ref)?;
    let (grad_f_rel_error, grad_h_rel_error) = gradient_mismatch(model, &points, dims.n);
    let companion = match companion {
        Some(c) => {
            let mu_c = model_moduli(c, &pairs, y_ref)?;
            let ratio = |a: f64, b: f64| (b > 0.0).then(|| a / b);
            Some(CompanionModulus {
                epsilon: c.intrinsic_epsilon(),
                ratio_f: ratio(mu_c.f, mu.f),
                ratio_h: ratio(mu_c.h, mu.h),
                epsilon_ratio: c
                    .intrinsic_epsilon()
                    .zip(model.intrinsic_epsilon())
                    .map(|(a, b)| a / b),
                mu: mu_c,
            })
        }
        None => None,
    };

    let injectivity_c = pairwise_injectivity(model, &pairs)?;
    let q0_eig = sym_eigen(q0.as_mat())?;
    let q0_eig_ratio = q0_eig.values[q0_eig.values.len() - 1] / q0_eig.values[0];

    let shrinks = |c: &CompanionModulus| {
        let ok = |small: f64, big: f64| small <= big * (1.0 + 1e-9) + 1e-15;
        ok(c.mu.f, mu.f) && ok(c.mu.h, mu.h)
    };
    let verdicts = Verdicts {
        a2_bounded: bounded.inadmissible_samples == 0
            && [bounded.sup_sigma, bounded.sup_g, bounded.sup_ell]
                .iter()
                .all(|s| s.is_finite() && *s <= th.bound_max),
        a3_almost_linear: grad_f_rel_error <= th.gradient_rel_tol
            && grad_h_rel_error <= th.gradient_rel_tol
            && mu.f <= th.almost_linear_max
            && mu.h <= th.almost_linear_max
            && companion.as_ref().is_none_or(shrinks),
        a4_strongly_injective: injectivity_c >= th.injectivity_min,
        a4_elliptic: ell.a >= th.ellipticity_min && ell.r_inv >= th.ellipticity_min,
        a4_q0_eig_ratio: q0_eig_ratio <= th.q0_eig_ratio_max,
    };

    Ok(AssumptionReport {
        schema: AssumptionReport::SCHEMA,
        model: model.name().to_string(),
        epsilon: model.intrinsic_epsilon(),
        domain,
        n_pairs: spec.n_pairs,
        n_points: points.len(),
        seed: spec.seed,
        boundedness: bounded,
        almost_linear_mu: AlmostLinearity {
            mu,
            reference: "Jacobian at the box centre in the signal, at each sample's observation value".into(),
            companion,
            grad_f_rel_error,
            grad_h_rel_error,
        },
        injectivity_c,
        ellipticity_min_eig: ell,
        q0_eig_ratio,
        thresholds: th.clone(),
        verdicts,
        filter_stability: None,
    })
}

fn pairwise_injectivity(model: &dyn ModelCoefficients, pairs: &[PairSample<'_>]) -> Result<f64> {
    pairs
        .par_iter()
        .filter_map(|p| {
            let d = norm2(&diff(p.y1, p.y2));
            (d > 0.0).then(|| norm2(&diff(&model.h(0.0, p.y1, p.z), &model.h(0.0, p.y2, p.z))) / d)
        })
        .reduce_with(f64::min)
        .ok_or(Error::CoincidentSamples)
}
