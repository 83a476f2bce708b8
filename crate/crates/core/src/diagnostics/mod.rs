//! Certificates computed from trajectories: energy, drift, relative entropy, bound probes.

pub mod drift;
pub mod energy;
pub mod probes;
pub mod relentropy;

pub use drift::{drift_certificate, drift_ledger, DriftCertificate, DriftLedger, DriftRow};
pub use energy::{
    dissipation_certificate, dissipation_tolerance, energy_ledger, stability_report,
    DissipationCertificate, EnergyLedger, EnergyRow, StabilityReport, DEFAULT_KAPPA,
};
pub use probes::{
    bound_probes, default_radius, probe_samples, probe_stability, refined_maxima, ProbeRatio,
    ProbeReport, ProbeSample, ProbeStability,
};
pub use relentropy::{
    gronwall_fit, relative_entropy, relative_entropy_study, relative_entropy_vs_reference,
    EquilibriumReference, GronwallFit, RefSample, Reference, RelEntropySeries, RelEntropyStudy,
    TrajectoryReference,
};

pub use crate::varstep::relative_energy;

/// Observed convergence order of an error series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Order {
    /// Every error is at the roundoff floor.
    Exact,
    Observed(f64),
}

impl Order {
    pub fn at_least(&self, min: f64) -> bool {
        match self {
            Order::Exact => true,
            Order::Observed(q) => *q >= min,
        }
    }
}

impl std::fmt::Display for Order {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Order::Exact => write!(f, "exact"),
            Order::Observed(q) => write!(f, "{q:.3}"),
        }
    }
}

/// Least-squares slope of `log err` against `log step`. Errors at or below `floor`
/// are clamped to it; if all are there, the order is [`Order::Exact`].
pub fn observed_order(steps: &[f64], errors: &[f64], floor: f64) -> Order {
    assert_eq!(steps.len(), errors.len());
    assert!(steps.len() >= 2, "need at least two levels");
    if errors.iter().all(|&e| e <= floor) {
        return Order::Exact;
    }
    let xs: Vec<f64> = steps.iter().map(|s| s.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.max(floor).ln()).collect();
    Order::Observed(least_squares(&xs, &ys).1)
}

/// Order between each pair of consecutive levels, `log(e_k / e_{k+1}) / log(s_k / s_{k+1})`.
pub fn pairwise_orders(steps: &[f64], errors: &[f64]) -> Vec<f64> {
    assert_eq!(steps.len(), errors.len());
    steps
        .windows(2)
        .zip(errors.windows(2))
        .map(|(s, e)| (e[0] / e[1]).ln() / (s[0] / s[1]).ln())
        .collect()
}

/// `(intercept, slope)` of the least-squares line through `(x, y)`.
pub(crate) fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (my - slope * mx, slope)
}
