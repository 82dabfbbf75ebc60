//! Runtime checks of the structural hypotheses behind the convergence
//! results, and the statistical estimators used by the studies.

mod assumptions;
mod moments;
mod stability;

pub use assumptions::{
    almost_linearity_modulus, check_assumptions, injectivity_constant, injectivity_on_pairs,
    modulus_on_pairs, AlmostLinearity, AssumptionReport, AssumptionSpec, AssumptionThresholds,
    Boundedness, BoxSampler, CompanionModulus, DomainBox, Ellipticity, ModulusPair, Verdicts,
    MIN_PAIRS,
};
pub use moments::{
    moment_norm, moment_norm_of_norms, order_fit, order_fit_ci, percentile_interval,
    MomentEstimate, OrderFit, BOOTSTRAP_RESAMPLES,
};
pub(crate) use stability::linear_fit;
pub use stability::{
    check_kk_stable, exp_stability_fit, filter_stability, linearization_path, trace_monitor,
    FilterStabilityReport, StabilityWitness, TraceMonitor,
};
