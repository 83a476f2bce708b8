//! Relative entropy of a computed trajectory against a smooth reference.
//!
//! Both sides enter through `Phi(F)`: the numerical state contributes `Phi` of its own
//! `F` block rather than its independent `(zeta, w)`.

use super::{least_squares, observed_order, Order};
use crate::constitutive::EnergyModel;
use crate::error::DiagnosticsError;
use crate::grid::{inner, integrate_by, GridSpec, ScalarField, VectorField};
use crate::march::Trajectory;
use crate::nulllag::{frobenius, mat_from_slice, phi};
use crate::varstep::{deformation_gradient, pointwise, relative_density, State};

/// Reference values `(u, v, eta)` at one time; `F = I + grad u`.
#[derive(Debug, Clone, PartialEq)]
pub struct RefSample {
    pub u: VectorField,
    pub v: VectorField,
    pub eta: ScalarField,
}

pub trait Reference {
    fn sample(&self, t: f64) -> Result<RefSample, DiagnosticsError>;
}

/// The state `y = x`, `v = 0`, constant entropy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquilibriumReference {
    pub grid: GridSpec,
    pub eta: f64,
}

impl Reference for EquilibriumReference {
    fn sample(&self, _t: f64) -> Result<RefSample, DiagnosticsError> {
        Ok(RefSample {
            u: VectorField::zeros(self.grid),
            v: VectorField::zeros(self.grid),
            eta: ScalarField::constant(self.grid, [self.eta]),
        })
    }
}

/// A finer computed trajectory sampled at its own nodes.
#[derive(Debug, Clone, Copy)]
pub struct TrajectoryReference<'a>(pub &'a Trajectory);

impl Reference for TrajectoryReference<'_> {
    fn sample(&self, t: f64) -> Result<RefSample, DiagnosticsError> {
        let traj = self.0;
        let k = (t - traj.start()) / traj.h();
        let j = k.round();
        if (k - j).abs() > 1e-6 || j < 0.0 || j as usize > traj.steps() {
            return Err(DiagnosticsError::NoReferenceSample(t));
        }
        let s = &traj.states[j as usize];
        Ok(RefSample {
            u: s.u.clone(),
            v: s.v.clone(),
            eta: s.eta.clone(),
        })
    }
}

/// Fails if the sample leaves `|F|, |v|, |eta| <= m` at some node.
pub fn check_gamma_m(sample: &RefSample, m: f64, t: f64) -> Result<(), DiagnosticsError> {
    let f = deformation_gradient(&sample.u);
    for p in 0..f.num_points() {
        let v = sample.v.at(p);
        let values = [
            frobenius(&mat_from_slice(f.point(p))),
            (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt(),
            sample.eta.at(p)[0].abs(),
        ];
        if let Some(&value) = values.iter().find(|&&x| !(x <= m)) {
            return Err(DiagnosticsError::OutsideBound { bound: m, value, t });
        }
    }
    Ok(())
}

/// `int |v - vbar|^2/2 + e(Phi(F), eta | Phi(Fbar), etabar)`.
pub fn relative_entropy(
    state: &State,
    reference: &RefSample,
    model: &dyn EnergyModel,
) -> Result<f64, DiagnosticsError> {
    let grid = *state.grid();
    let fbar = deformation_gradient(&reference.u);
    let density = pointwise::<1>(&grid, |p| {
        let xi = phi(&mat_from_slice(&state.xi.point(p)[0..9]));
        let xibar = phi(&mat_from_slice(fbar.point(p)));
        Ok([relative_density(
            model,
            &xi,
            state.eta.at(p)[0],
            &xibar,
            reference.eta.at(p)[0],
        )?])
    })?;
    let dv = state.v.sub(&reference.v);
    Ok(0.5 * inner(&dv, &dv) + integrate_by(&grid, |p| density.at(p)[0]))
}

/// Envelope `I(t) <= amplitude exp(c2 t)` fitted to `log I`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GronwallFit {
    /// `exp(intercept + largest residual)`, so every fitted point lies on or under the envelope.
    pub amplitude: f64,
    /// `amplitude / I(0)` when `I(0)` is above the noise floor.
    pub c1: Option<f64>,
    pub c2: f64,
    pub rms_residual: f64,
    pub fitted_points: usize,
}

impl GronwallFit {
    pub fn envelope(&self, t: f64) -> f64 {
        self.amplitude * (self.c2 * t).exp()
    }
}

/// Values at or below this are treated as zero by the fit.
pub const FIT_FLOOR: f64 = 1e3 * f64::EPSILON;

/// Least squares of `log I` against `t` over points above [`FIT_FLOOR`]; `None` with fewer than two.
pub fn gronwall_fit(times: &[f64], values: &[f64]) -> Option<GronwallFit> {
    let (ts, ys): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(values)
        .filter(|(_, &v)| v > FIT_FLOOR)
        .map(|(&t, &v)| (t, v.ln()))
        .unzip();
    if ts.len() < 2 {
        return None;
    }
    let (a, b) = least_squares(&ts, &ys);
    let res: Vec<f64> = ts.iter().zip(&ys).map(|(t, y)| y - (a + b * t)).collect();
    let max_res = res.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let rms = (res.iter().map(|r| r * r).sum::<f64>() / res.len() as f64).sqrt();
    let amplitude = (a + max_res).exp();
    let c1 = (values[0] > FIT_FLOOR).then(|| amplitude / values[0]);
    Some(GronwallFit {
        amplitude,
        c1,
        c2: b,
        rms_residual: rms,
        fitted_points: ts.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelEntropySeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub fit: Option<GronwallFit>,
    /// Every value is under the envelope (or under the fit floor when no fit exists).
    pub under_envelope: bool,
}

impl RelEntropySeries {
    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

pub fn relative_entropy_vs_reference(
    traj: &Trajectory,
    reference: &dyn Reference,
    model: &dyn EnergyModel,
    m_bound: f64,
) -> Result<RelEntropySeries, DiagnosticsError> {
    let mut times = Vec::with_capacity(traj.states.len());
    let mut values = Vec::with_capacity(traj.states.len());
    for (j, s) in traj.states.iter().enumerate() {
        let t = traj.time(j);
        let sample = reference.sample(t)?;
        check_gamma_m(&sample, m_bound, t)?;
        times.push(t);
        values.push(relative_entropy(s, &sample, model)?);
    }
    let fit = gronwall_fit(&times, &values);
    let under_envelope = times.iter().zip(&values).all(|(&t, &v)| match &fit {
        Some(f) => v <= FIT_FLOOR || v <= f.envelope(t) * (1.0 + 1e-12),
        None => v <= FIT_FLOOR,
    });
    Ok(RelEntropySeries {
        times,
        values,
        fit,
        under_envelope,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelEntropyStudy {
    pub steps: Vec<f64>,
    pub max_values: Vec<f64>,
    pub order: Order,
    pub series: Vec<RelEntropySeries>,
}

/// `max_t I_rel` per level against a shared reference, and its observed order in `h`.
pub fn relative_entropy_study(
    levels: &[&Trajectory],
    reference: &dyn Reference,
    model: &dyn EnergyModel,
    m_bound: f64,
) -> Result<RelEntropyStudy, DiagnosticsError> {
    if levels.len() < 2 {
        return Err(DiagnosticsError::TooFewLevels {
            needed: 2,
            got: levels.len(),
        });
    }
    let series = levels
        .iter()
        .map(|l| relative_entropy_vs_reference(l, reference, model, m_bound))
        .collect::<Result<Vec<_>, _>>()?;
    let steps: Vec<f64> = levels.iter().map(|l| l.h()).collect();
    let max_values: Vec<f64> = series.iter().map(|s| s.max()).collect();
    Ok(RelEntropyStudy {
        order: observed_order(&steps, &max_values, FIT_FLOOR),
        steps,
        max_values,
        series,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constitutive::{ModelSpec, PaperEnergy};
    use crate::march::run;
    use crate::presets::InitialData;
    use crate::varstep::StepConfig;

    #[test]
    fn equilibrium_against_itself_is_zero() {
        let grid = GridSpec::unit_cube(4).unwrap();
        let init = InitialData::Equilibrium { eta: 1.0 }.build(grid).unwrap();
        let heat = move |_: usize, _: f64| ScalarField::zeros(grid);
        let t = run(
            init,
            &heat,
            0.05,
            StepConfig::with_h(0.01),
            ModelSpec::default(),
        )
        .unwrap();
        let reference = EquilibriumReference { grid, eta: 1.0 };
        let s =
            relative_entropy_vs_reference(&t, &reference, &PaperEnergy::default(), 3.0).unwrap();
        assert!(s.values.iter().all(|&v| v == 0.0));
        assert!(s.fit.is_none() && s.under_envelope);
    }

    #[test]
    fn gamma_m_is_enforced() {
        let grid = GridSpec::unit_cube(4).unwrap();
        let reference = EquilibriumReference { grid, eta: 5.0 };
        let sample = reference.sample(0.0).unwrap();
        assert!(matches!(
            check_gamma_m(&sample, 3.0, 0.0),
            Err(DiagnosticsError::OutsideBound { value, .. }) if value == 5.0
        ));
        assert!(check_gamma_m(&sample, 6.0, 0.0).is_ok());
    }

    #[test]
    fn fit_recovers_exponential() {
        let ts: Vec<f64> = (0..20).map(|k| 0.1 * k as f64).collect();
        let vs: Vec<f64> = ts.iter().map(|t| 1e-3 * (0.7 * t).exp()).collect();
        let fit = gronwall_fit(&ts, &vs).unwrap();
        assert!((fit.c2 - 0.7).abs() < 1e-10);
        assert!((fit.c1.unwrap() - 1.0).abs() < 1e-10);
        assert!(fit.rms_residual < 1e-10);
        assert!(gronwall_fit(&ts, &vec![0.0; 20]).is_none());
    }
}
