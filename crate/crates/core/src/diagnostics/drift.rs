use super::{observed_order, Order};
use crate::error::DiagnosticsError;
use crate::grid::curl_residual;
use crate::march::{HeatFn, Trajectory};
use crate::nulllag::{extended_drift, piola_block_norms, piola_residual, transport_residual};
use crate::varstep::{constraint_apply, pointwise};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DriftRow {
    pub step: usize,
    pub t: f64,
    /// `|zeta - cof F|`.
    pub zeta_drift: f64,
    /// `|w - det F|`.
    pub w_drift: f64,
    pub piola_cof: f64,
    pub piola_det: f64,
    /// Curl residual divided by `|F|`.
    pub curl_rel: f64,
    pub transport_cof: f64,
    pub transport_det: f64,
    pub transport_cof_spatial: f64,
    pub transport_det_spatial: f64,
    /// `max |xi^j - (xi^{j-1} + h A v^j)|`, recomputed.
    pub feasibility: f64,
    /// `max |eta^j - eta^{j-1} - h r / theta^{j-1}| / max(|eta^j|, |eta^{j-1}|)`.
    pub entropy_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftLedger {
    pub rows: Vec<DriftRow>,
}

impl DriftLedger {
    pub fn max_curl_rel(&self) -> f64 {
        self.rows.iter().fold(0.0, |m, r| m.max(r.curl_rel))
    }

    pub fn max_feasibility(&self) -> f64 {
        self.rows.iter().fold(0.0, |m, r| m.max(r.feasibility))
    }

    pub fn max_entropy_residual(&self) -> f64 {
        self.rows.iter().fold(0.0, |m, r| m.max(r.entropy_residual))
    }
}

/// Per-level drift and constraint diagnostics. `heat` must be the supply the run used.
pub fn drift_ledger(traj: &Trajectory, heat: HeatFn<'_>) -> Result<DriftLedger, DiagnosticsError> {
    let model = traj.model.model();
    let h = traj.h();
    let mut rows = Vec::with_capacity(traj.states.len());
    for (j, s) in traj.states.iter().enumerate() {
        let f = s.f();
        let (zeta_drift, w_drift) = extended_drift(&s.xi);
        let (_, piola_cof, piola_det) = piola_block_norms(&piola_residual(&f));
        let mut row = DriftRow {
            step: j,
            t: traj.time(j),
            zeta_drift,
            w_drift,
            piola_cof,
            piola_det,
            curl_rel: curl_residual(&f) / f.norm(),
            ..Default::default()
        };
        if j > 0 {
            let prev = &traj.states[j - 1];
            let f0 = prev.f();
            let tr = transport_residual(&f0, &f, &s.v, h);
            row.transport_cof = tr.cof;
            row.transport_det = tr.det;
            row.transport_cof_spatial = tr.cof_spatial;
            row.transport_det_spatial = tr.det_spatial;
            row.feasibility = constraint_apply(&f0, &s.v, h, &prev.xi)
                .sub(&s.xi)
                .max_abs();
            let r = heat(j, prev.t);
            let res = pointwise::<1>(s.grid(), |p| {
                let (e0, e1) = (prev.eta.at(p)[0], s.eta.at(p)[0]);
                let theta = model.temperature(&prev.xi.at(p), e0)?;
                let scale = e0.abs().max(e1.abs());
                let d = (e1 - e0 - h * r.at(p)[0] / theta).abs();
                Ok([if scale > 0.0 { d / scale } else { d }])
            })?;
            row.entropy_residual = res.max_abs();
        }
        rows.push(row);
    }
    Ok(DriftLedger { rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftCertificate {
    pub steps: Vec<f64>,
    /// `|zeta - cof F|` at the final time, per level.
    pub zeta: Vec<f64>,
    /// `|w - det F|` at the final time, per level.
    pub w: Vec<f64>,
    pub zeta_order: Order,
    pub w_order: Order,
    pub passed: bool,
}

/// Minimum observed order for the drift verdict.
pub const DRIFT_ORDER: f64 = 0.8;

/// Final-time drift across `h`-refinement levels with shared grid and initial data.
pub fn drift_certificate(levels: &[&Trajectory]) -> Result<DriftCertificate, DiagnosticsError> {
    if levels.len() < 3 {
        return Err(DiagnosticsError::TooFewLevels {
            needed: 3,
            got: levels.len(),
        });
    }
    let first = levels[0];
    for l in levels {
        let same_end = (l.end() - first.end()).abs() <= 1e-9 * first.end().abs().max(l.h());
        if l.states[0] != first.states[0] || !same_end {
            return Err(DiagnosticsError::MismatchedLevels);
        }
    }
    let steps: Vec<f64> = levels.iter().map(|l| l.h()).collect();
    let (zeta, w): (Vec<f64>, Vec<f64>) =
        levels.iter().map(|l| extended_drift(&l.last().xi)).unzip();
    let zeta_order = observed_order(&steps, &zeta, 1e-13);
    let w_order = observed_order(&steps, &w, 1e-13);
    Ok(DriftCertificate {
        passed: zeta_order.at_least(DRIFT_ORDER) && w_order.at_least(DRIFT_ORDER),
        steps,
        zeta,
        w,
        zeta_order,
        w_order,
    })
}
