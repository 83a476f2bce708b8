use crate::error::ModelError;
use crate::march::Trajectory;
use crate::varstep::StepReport;

/// Default `kappa` in the dissipation tolerance.
pub const DEFAULT_KAPPA: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyRow {
    pub step: usize,
    pub t: f64,
    pub total: f64,
    pub kinetic: f64,
    pub internal: f64,
    pub relative_energy: f64,
    pub dissipation_margin: f64,
    pub heat: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyLedger {
    pub rows: Vec<EnergyRow>,
}

/// One row per time level; row 0 is the initial state with zero margin.
pub fn energy_ledger(traj: &Trajectory) -> Result<EnergyLedger, ModelError> {
    let (k0, i0) = traj.states[0].energy(traj.model.model())?;
    let mut rows = vec![EnergyRow {
        step: 0,
        t: traj.start(),
        total: k0 + i0,
        kinetic: k0,
        internal: i0,
        relative_energy: 0.0,
        dissipation_margin: 0.0,
        heat: 0.0,
    }];
    for (j, r) in traj.reports.iter().enumerate() {
        rows.push(EnergyRow {
            step: j + 1,
            t: traj.time(j + 1),
            total: r.kinetic + r.internal,
            kinetic: r.kinetic,
            internal: r.internal,
            relative_energy: r.relative_energy,
            dissipation_margin: r.dissipation_margin,
            heat: r.heat_term,
        });
    }
    Ok(EnergyLedger { rows })
}

/// `kappa h dx_max^2 (1 + |e_xi|_inf) |v|_{W1}` for one step.
pub fn dissipation_tolerance(report: &StepReport, h: f64, dx_max: f64, kappa: f64) -> f64 {
    kappa * h * dx_max * dx_max * (1.0 + report.stress_sup) * report.velocity_w1
}

#[derive(Debug, Clone, PartialEq)]
pub struct DissipationCertificate {
    pub margins: Vec<f64>,
    pub tolerances: Vec<f64>,
    /// `E_j - E_{j-1} - heat_j`; nonpositive up to the tolerance.
    pub energy_excess: Vec<f64>,
    /// Smallest `margin_j + tol_j`; negative means a violation.
    pub worst_slack: f64,
    pub passed: bool,
}

/// Checks `E_j + c |U^j - U^{j-1}|^2 <= E_{j-1} + heat_j + tol_j` step by step.
pub fn dissipation_certificate(traj: &Trajectory, kappa: f64) -> DissipationCertificate {
    let h = traj.h();
    let dx = traj.grid().max_dx();
    let mut cert = DissipationCertificate {
        margins: Vec::with_capacity(traj.steps()),
        tolerances: Vec::with_capacity(traj.steps()),
        energy_excess: Vec::with_capacity(traj.steps()),
        worst_slack: f64::INFINITY,
        passed: true,
    };
    for r in &traj.reports {
        let tol = dissipation_tolerance(r, h, dx, kappa);
        let excess = r.energy_after - r.energy_before - r.heat_term;
        // Roundoff of the energy sums themselves.
        let noise = 64.0 * f64::EPSILON * r.energy_before.abs();
        cert.worst_slack = cert.worst_slack.min(r.dissipation_margin + tol);
        cert.passed &= r.dissipation_margin >= -tol - noise && excess <= tol + noise;
        cert.margins.push(r.dissipation_margin);
        cert.tolerances.push(tol);
        cert.energy_excess.push(excess);
    }
    cert
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityReport {
    /// `sup_j (|v^j|^2 + int e(xi^j, eta^j))`.
    pub sup_energy: f64,
    /// `sum_j |U^j - U^{j-1}|^2`.
    pub increments: f64,
    /// `E = (2 + 1/c)(E_0 + sum_j max(heat_j, 0) + sum_j tol_j)` with `c = min(1, c_e)`.
    pub bound: f64,
    pub passed: bool,
}

/// The uniform bound `sup_j(|v|^2 + int e) + sum_j |dU|^2 <= E`.
pub fn stability_report(traj: &Trajectory, kappa: f64) -> Result<StabilityReport, ModelError> {
    let model = traj.model.model();
    let c = model.convexity_constant().min(1.0);
    let mut sup_energy: f64 = 0.0;
    for s in &traj.states {
        let (k, i) = s.energy(model)?;
        sup_energy = sup_energy.max(2.0 * k + i);
    }
    let (k0, i0) = traj.states[0].energy(model)?;
    let (h, dx) = (traj.h(), traj.grid().max_dx());
    let supply: f64 = traj
        .reports
        .iter()
        .map(|r| r.heat_term.max(0.0) + dissipation_tolerance(r, h, dx, kappa))
        .sum();
    let bound = (2.0 + 1.0 / c) * (k0 + i0 + supply);
    let increments = traj.telescoping.last().copied().unwrap_or(0.0);
    Ok(StabilityReport {
        sup_energy,
        increments,
        bound,
        passed: sup_energy + increments <= bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constitutive::ModelSpec;
    use crate::grid::{GridSpec, ScalarField};
    use crate::march::run;
    use crate::presets::{HeatSupply, InitialData};
    use crate::varstep::StepConfig;

    fn traj(init: InitialData, heat: HeatSupply, n: usize, steps: usize) -> Trajectory {
        let grid = GridSpec::unit_cube(n).unwrap();
        let s = init.build(grid).unwrap();
        let f = move |_: usize, t: f64| -> ScalarField { heat.sample(&grid, t) };
        let h = 2e-3;
        run(
            s,
            &f,
            steps as f64 * h,
            StepConfig::with_h(h),
            ModelSpec::default(),
        )
        .unwrap()
    }

    #[test]
    fn equilibrium_margins_vanish() {
        let t = traj(
            InitialData::Equilibrium { eta: 1.0 },
            HeatSupply::Zero,
            4,
            5,
        );
        let cert = dissipation_certificate(&t, DEFAULT_KAPPA);
        assert!(cert.passed);
        assert!(cert.margins.iter().all(|m| m.abs() < 1e-12));
        let ledger = energy_ledger(&t).unwrap();
        let e0 = ledger.rows[0].total;
        assert!(ledger.rows.iter().all(|r| r.total == e0));
    }

    #[test]
    fn heating_raises_energy_but_passes() {
        let t = traj(InitialData::default(), HeatSupply::Constant(0.5), 6, 5);
        let ledger = energy_ledger(&t).unwrap();
        assert!(ledger.rows[5].total > ledger.rows[0].total);
        let cert = dissipation_certificate(&t, DEFAULT_KAPPA);
        assert!(cert.passed, "{cert:?}");
        for r in &ledger.rows {
            assert!((r.total - r.kinetic - r.internal).abs() <= 1e-14 * r.total);
        }
        assert!(stability_report(&t, DEFAULT_KAPPA).unwrap().passed);
    }
}
