//! One step of the variational scheme.
//!
//! Entropy is updated explicitly. The constraint `xi = xi0 + h A v` is affine in the
//! velocity, so the step reduces to minimizing
//! `G(v) = 1/2 |v - v0|^2 + int e(xi0 + h A v, eta)` over `v` alone, done here by
//! Newton with matrix-free CG and Armijo backtracking.

use rayon::prelude::*;

use crate::constitutive::EnergyModel;
use crate::error::{GridError, ModelError, StepError};
use crate::grid::{
    divergence, gradient, inner, integrate_by, Field, GridSpec, ScalarField, TensorField,
    VectorField, PAR_THRESHOLD,
};
use crate::nulllag::{
    div_rows, dphi_apply, dphi_contract, f_block, mat_from_slice, pairing_field, phi_field,
    piola_residual, Ext, EXT_DIM, IDENTITY,
};
use crate::ExtField;

/// The discrete unknown at one time level.
///
/// The motion is stored as the periodic displacement `u = y - x`, so `F = I + grad u`.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub t: f64,
    pub u: VectorField,
    pub v: VectorField,
    /// `(F, zeta, w)`, see [`crate::nulllag`] for the layout.
    pub xi: ExtField,
    pub eta: ScalarField,
}

impl State {
    pub fn new(
        t: f64,
        u: VectorField,
        v: VectorField,
        xi: ExtField,
        eta: ScalarField,
    ) -> Result<Self, GridError> {
        let g = u.grid();
        if v.grid() != g || xi.grid() != g || eta.grid() != g {
            return Err(GridError::GridMismatch);
        }
        Ok(Self { t, u, v, xi, eta })
    }

    /// State with `xi = Phi(I + grad u)`.
    pub fn consistent(
        t: f64,
        u: VectorField,
        v: VectorField,
        eta: ScalarField,
    ) -> Result<Self, GridError> {
        let xi = phi_field(&deformation_gradient(&u));
        Self::new(t, u, v, xi, eta)
    }

    pub fn grid(&self) -> &GridSpec {
        self.u.grid()
    }

    /// The `F` block of `xi`.
    pub fn f(&self) -> TensorField {
        f_block(&self.xi)
    }

    /// Motion `y = x + u` at the nodes.
    pub fn motion(&self) -> VectorField {
        let grid = *self.grid();
        VectorField::tabulate(grid, |p| {
            let x = grid.position(p);
            let u = self.u.at(p);
            [x[0] + u[0], x[1] + u[1], x[2] + u[2]]
        })
    }

    pub fn eta_min(&self) -> f64 {
        self.eta
            .as_slice()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// `(int |v|^2/2, int e(xi, eta))`.
    pub fn energy(&self, model: &dyn EnergyModel) -> Result<(f64, f64), ModelError> {
        let kinetic = 0.5 * inner(&self.v, &self.v);
        let density = pointwise::<1>(self.grid(), |p| {
            Ok([model.energy(&self.xi.at(p), self.eta.at(p)[0])?])
        })?;
        Ok((kinetic, integrate_by(self.grid(), |p| density.at(p)[0])))
    }
}

/// `I + grad u`.
pub fn deformation_gradient(u: &VectorField) -> TensorField {
    let mut f = gradient(u);
    f.map_points_mut(|_, m| {
        for i in 0..3 {
            m[4 * i] += IDENTITY[i][i];
        }
    });
    f
}

/// Tabulates a fallible pointwise function; fails if any node fails.
pub(crate) fn pointwise<const C: usize>(
    grid: &GridSpec,
    f: impl Fn(usize) -> Result<[f64; C], ModelError> + Sync,
) -> Result<Field<C>, ModelError> {
    let n = grid.num_points();
    let rows: Vec<[f64; C]> = if n >= PAR_THRESHOLD {
        (0..n).into_par_iter().map(&f).collect::<Result<_, _>>()?
    } else {
        (0..n).map(&f).collect::<Result<_, _>>()?
    };
    Ok(Field::from_vec(*grid, rows.into_iter().flatten().collect())
        .expect("row count matches grid"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepConfig {
    pub h: f64,
    /// Newton stops when `|grad G| <= newton_tol (|v0| + 1)`.
    pub newton_tol: f64,
    pub newton_max: usize,
    /// Relative residual reduction for each CG solve.
    pub cg_tol: f64,
    pub cg_max: usize,
    pub backtrack_factor: f64,
    pub armijo: f64,
    pub max_halvings: usize,
}

impl StepConfig {
    pub fn with_h(h: f64) -> Self {
        Self {
            h,
            newton_tol: 1e-9,
            newton_max: 50,
            cg_tol: 1e-10,
            cg_max: 500,
            backtrack_factor: 0.5,
            armijo: 1e-4,
            max_halvings: 40,
        }
    }

    pub fn validate(&self) -> Result<(), StepError> {
        let bad = |m: &str| Err(StepError::Config(m.to_string()));
        if !(self.h.is_finite() && self.h > 0.0) {
            return bad("h must be positive");
        }
        if !(self.newton_tol > 0.0 && self.cg_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        if self.newton_max == 0 || self.cg_max == 0 {
            return bad("iteration limits must be at least 1");
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return bad("backtrack factor must lie in (0, 1)");
        }
        if !(self.armijo > 0.0 && self.armijo < 0.5) {
            return bad("Armijo constant must lie in (0, 1/2)");
        }
        Ok(())
    }
}

/// Solver and energy record of one accepted step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepReport {
    pub newton_iters: usize,
    pub cg_iters_total: usize,
    pub grad_norm_final: f64,
    pub grad_target: f64,
    /// `|(v - v0)/h - div(e_xi . dPhi/dF(F0))|` with the divergence applied to the product.
    pub el_residual: f64,
    /// `| grad G / h - EL residual |`: discrete product-rule defect between the two forms.
    pub el_gap: f64,
    /// `|e_xi|_inf` times the Piola residual of `F0`.
    pub piola_bound: f64,
    pub energy_before: f64,
    pub energy_after: f64,
    pub kinetic: f64,
    pub internal: f64,
    /// `I(U0 | U)`.
    pub relative_energy: f64,
    /// `E0 + heat_term - E - c |U - U0|^2` with `c = min(1, c_e)`.
    pub dissipation_margin: f64,
    /// `h int theta(xi, eta) r / theta(xi0, eta0)`.
    pub heat_term: f64,
    /// `|U - U0|^2` over `(v, xi, eta)`.
    pub delta_norm_sq: f64,
    /// `|e_xi(xi, eta)|_inf` of the new state.
    pub stress_sup: f64,
    /// `max(|v|_{W1}, |v0|_{W1})` with `|v|_{W1} = |v| + |grad v|`.
    pub velocity_w1: f64,
    pub eta_min: f64,
}

/// `eta = eta0 + h r / theta(xi0, eta0)`; any negative result rejects the step.
pub fn entropy_update(
    model: &dyn EnergyModel,
    xi0: &ExtField,
    eta0: &ScalarField,
    r: &ScalarField,
    h: f64,
) -> Result<ScalarField, StepError> {
    let grid = xi0.grid();
    if eta0.grid() != grid || r.grid() != grid {
        return Err(GridError::GridMismatch.into());
    }
    let eta = pointwise::<1>(grid, |p| {
        let e0 = eta0.at(p)[0];
        let theta = model.temperature(&xi0.at(p), e0)?;
        Ok([e0 + h * r.at(p)[0] / theta])
    })?;
    if let Some((node, &value)) = eta
        .as_slice()
        .iter()
        .enumerate()
        .find(|(_, x)| !(**x >= 0.0))
    {
        return Err(StepError::EntropyDomain { node, value });
    }
    Ok(eta)
}

/// The linear part `A v`: `(A v)^B = sum_a D_a (dPhi^B/dF_{ia}(F0) v_i)`.
pub fn constraint_linear(f0: &TensorField, v: &VectorField) -> ExtField {
    div_rows(&pairing_field(f0, v))
}

/// `xi0 + h A v`. The `F` block equals `F0 + h grad v`.
pub fn constraint_apply(f0: &TensorField, v: &VectorField, h: f64, xi0: &ExtField) -> ExtField {
    let mut xi = xi0.clone();
    xi.axpy(h, &constraint_linear(f0, v));
    xi
}

/// Exact discrete adjoint of [`constraint_linear`]:
/// `(A* m)_i = - sum_{B,a} dPhi^B/dF_{ia}(F0) D_a m^B`.
pub fn constraint_adjoint(f0: &TensorField, m: &ExtField) -> VectorField {
    let grid = *f0.grid();
    let two_dx = grid.dx().map(|d| 2.0 * d);
    let src = m.as_slice();
    VectorField::tabulate(grid, |p| {
        let mut dm = [[0.0; 3]; EXT_DIM];
        for a in 0..3 {
            let (up, down) = grid.neighbours(p, a);
            for (b, row) in dm.iter_mut().enumerate() {
                row[a] = (src[up * EXT_DIM + b] - src[down * EXT_DIM + b]) / two_dx[a];
            }
        }
        dphi_contract(&mat_from_slice(f0.point(p)), &dm).map(|x| -x)
    })
}

/// Signature shared by [`constraint_adjoint`] and test doubles of it.
pub type AdjointFn = fn(&TensorField, &ExtField) -> VectorField;

/// Reduced objective for one step.
struct Reduced<'a> {
    model: &'a dyn EnergyModel,
    f0: TensorField,
    xi0: &'a ExtField,
    eta: &'a ScalarField,
    v0: &'a VectorField,
    h: f64,
}

impl Reduced<'_> {
    fn xi(&self, v: &VectorField) -> ExtField {
        constraint_apply(&self.f0, v, self.h, self.xi0)
    }

    fn value(&self, v: &VectorField, xi: &ExtField) -> Result<f64, ModelError> {
        let d = v.sub(self.v0);
        let e = pointwise::<1>(xi.grid(), |p| {
            Ok([self.model.energy(&xi.at(p), self.eta.at(p)[0])?])
        })?;
        Ok(0.5 * inner(&d, &d) + integrate_by(xi.grid(), |p| e.at(p)[0]))
    }

    fn stress(&self, xi: &ExtField) -> Result<ExtField, ModelError> {
        pointwise::<EXT_DIM>(xi.grid(), |p| {
            Ok(self.model.gradient(&xi.at(p), self.eta.at(p)[0])?.0)
        })
    }

    /// `(v - v0) + h A*(e_xi)`.
    fn gradient(&self, v: &VectorField, stress: &ExtField) -> VectorField {
        let mut g = v.sub(self.v0);
        g.axpy(self.h, &constraint_adjoint(&self.f0, stress));
        g
    }

    /// `dv + h^2 A*(e_xixi A dv)`.
    fn hess_apply(&self, xi: &ExtField, dv: &VectorField) -> Result<VectorField, ModelError> {
        let adv = constraint_linear(&self.f0, dv);
        let w = pointwise::<EXT_DIM>(xi.grid(), |p| {
            Ok(self
                .model
                .hess_vec(&xi.at(p), self.eta.at(p)[0], &adv.at(p), 0.0)?
                .0)
        })?;
        let mut out = dv.clone();
        out.axpy(self.h * self.h, &constraint_adjoint(&self.f0, &w));
        Ok(out)
    }

    /// CG on `H p = -g` from `p = 0`; returns `(p, iterations)`.
    fn newton_direction(
        &self,
        xi: &ExtField,
        g: &VectorField,
        stop: f64,
        cg_max: usize,
    ) -> Result<(VectorField, usize), ModelError> {
        let mut p = VectorField::zeros(*g.grid());
        let mut r = g.clone();
        r.scale(-1.0);
        let mut d = r.clone();
        let mut rr = inner(&r, &r);
        let mut iters = 0;
        while rr.sqrt() > stop && iters < cg_max {
            let hd = self.hess_apply(xi, &d)?;
            let dhd = inner(&d, &hd);
            if !(dhd > 0.0) {
                break;
            }
            let alpha = rr / dhd;
            p.axpy(alpha, &d);
            r.axpy(-alpha, &hd);
            let rr_new = inner(&r, &r);
            d.scale(rr_new / rr);
            d.axpy(1.0, &r);
            rr = rr_new;
            iters += 1;
        }
        if iters == 0 {
            // Steepest descent fallback when the curvature test fails immediately.
            p = g.clone();
            p.scale(-1.0);
        }
        Ok((p, iters))
    }
}

/// Result of the Newton loop on the reduced objective.
#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub v: VectorField,
    pub xi: ExtField,
    pub stress: ExtField,
    pub gradient: VectorField,
    pub iters: usize,
    pub cg_iters: usize,
    pub grad_norm: f64,
    pub target: f64,
    /// Objective value after each accepted iterate, starting with the initial guess.
    pub objective: Vec<f64>,
}

fn newton(
    red: &Reduced<'_>,
    guess: VectorField,
    cfg: &StepConfig,
) -> Result<NewtonOutcome, StepError> {
    let target = cfg.newton_tol * (red.v0.norm() + 1.0);
    let mut v = guess;
    let mut xi = red.xi(&v);
    let mut g_val = red.value(&v, &xi)?;
    let mut objective = vec![g_val];
    let mut cg_total = 0;
    for iter in 0..=cfg.newton_max {
        let stress = red.stress(&xi)?;
        let g = red.gradient(&v, &stress);
        let gnorm = g.norm();
        if gnorm <= target {
            return Ok(NewtonOutcome {
                v,
                xi,
                stress,
                gradient: g,
                iters: iter,
                cg_iters: cg_total,
                grad_norm: gnorm,
                target,
                objective,
            });
        }
        if iter == cfg.newton_max {
            return Err(StepError::NewtonNotConverged {
                iters: iter,
                grad_norm: gnorm,
                target,
            });
        }
        let stop = (cfg.cg_tol * gnorm).min(0.1 * target);
        let (p, cg) = red.newton_direction(&xi, &g, stop, cfg.cg_max)?;
        cg_total += cg;
        let slope = inner(&g, &p);
        let noise = 1e3 * f64::EPSILON * g_val.abs();
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=cfg.max_halvings {
            let mut trial = v.clone();
            trial.axpy(alpha, &p);
            let trial_xi = red.xi(&trial);
            if let Ok(val) = red.value(&trial, &trial_xi) {
                let armijo = val <= g_val + cfg.armijo * alpha * slope;
                let roundoff = -slope <= noise && val <= g_val + noise;
                if val.is_finite() && (armijo || roundoff) {
                    accepted = Some((trial, trial_xi, val));
                    break;
                }
            }
            alpha *= cfg.backtrack_factor;
        }
        let (nv, nxi, nval) = accepted.ok_or(StepError::LineSearch {
            iter,
            halvings: cfg.max_halvings,
        })?;
        v = nv;
        xi = nxi;
        g_val = nval;
        objective.push(g_val);
    }
    unreachable!("loop returns on its last iteration")
}

/// Advances `u0` by one step with heat supply `r` sampled at `u0.t`.
pub fn solve_step(
    u0: &State,
    r: &ScalarField,
    cfg: &StepConfig,
    model: &dyn EnergyModel,
) -> Result<(State, StepReport), StepError> {
    solve_step_from(u0, r, cfg, model, u0.v.clone())
}

/// [`solve_step`] with an explicit initial Newton guess for the velocity.
pub fn solve_step_from(
    u0: &State,
    r: &ScalarField,
    cfg: &StepConfig,
    model: &dyn EnergyModel,
    guess: VectorField,
) -> Result<(State, StepReport), StepError> {
    cfg.validate()?;
    let grid = *u0.grid();
    if r.grid() != &grid || guess.grid() != &grid {
        return Err(GridError::GridMismatch.into());
    }
    let h = cfg.h;
    let eta = entropy_update(model, &u0.xi, &u0.eta, r, h)?;
    let red = Reduced {
        model,
        f0: u0.f(),
        xi0: &u0.xi,
        eta: &eta,
        v0: &u0.v,
        h,
    };
    let out = newton(&red, guess, cfg)?;
    let f0 = red.f0;

    let mut u = u0.u.clone();
    u.axpy(h, &out.v);
    let state = State {
        t: u0.t + h,
        u,
        v: out.v.clone(),
        xi: out.xi.clone(),
        eta,
    };
    let report = step_report(u0, &state, r, h, model, &f0, &out)?;
    Ok((state, report))
}

fn w1_norm(v: &VectorField) -> f64 {
    v.norm() + gradient(v).norm()
}

fn step_report(
    u0: &State,
    u: &State,
    r: &ScalarField,
    h: f64,
    model: &dyn EnergyModel,
    f0: &TensorField,
    out: &NewtonOutcome,
) -> Result<StepReport, ModelError> {
    let grid = *u0.grid();
    let (k0, i0) = u0.energy(model)?;
    let (k1, i1) = u.energy(model)?;

    // Stress contracted against dPhi/dF(F0), then the divergence of the product.
    let s = TensorField::tabulate(grid, |p| {
        let f = mat_from_slice(f0.point(p));
        let e = out.stress.at(p);
        let mut m = [0.0; 9];
        for i in 0..3 {
            let mut unit = [0.0; 3];
            unit[i] = 1.0;
            let t = dphi_apply(&f, &unit);
            for a in 0..3 {
                m[3 * i + a] = (0..EXT_DIM).map(|b| e[b] * t[b][a]).sum();
            }
        }
        m
    });
    let mut el = u.v.sub(&u0.v);
    el.scale(1.0 / h);
    el.axpy(-1.0, &divergence(&s));
    let mut gap = out.gradient.clone();
    gap.scale(1.0 / h);
    let el_gap = gap.sub(&el).norm();
    let stress_sup = out.stress.max_abs();
    let piola = piola_residual(f0);
    let piola_norm = piola.iter().map(|x| x * x).sum::<f64>().sqrt();

    let heat = pointwise::<1>(&grid, |p| {
        let theta = model.temperature(&u.xi.at(p), u.eta.at(p)[0])?;
        let theta0 = model.temperature(&u0.xi.at(p), u0.eta.at(p)[0])?;
        Ok([theta * r.at(p)[0] / theta0])
    })?;
    let heat_term = h * integrate_by(&grid, |p| heat.at(p)[0]);
    let dv = u.v.sub(&u0.v);
    let dxi = u.xi.sub(&u0.xi);
    let deta = u.eta.sub(&u0.eta);
    let delta_norm_sq = inner(&dv, &dv) + inner(&dxi, &dxi) + inner(&deta, &deta);
    let c = model.convexity_constant().min(1.0);
    let (before, after) = (k0 + i0, k1 + i1);

    Ok(StepReport {
        newton_iters: out.iters,
        cg_iters_total: out.cg_iters,
        grad_norm_final: out.grad_norm,
        grad_target: out.target,
        el_residual: el.norm(),
        el_gap,
        piola_bound: stress_sup * piola_norm,
        energy_before: before,
        energy_after: after,
        kinetic: k1,
        internal: i1,
        relative_energy: relative_energy(u0, u, model)?,
        dissipation_margin: before - after - c * delta_norm_sq + heat_term,
        heat_term,
        delta_norm_sq,
        stress_sup,
        velocity_w1: w1_norm(&u.v).max(w1_norm(&u0.v)),
        eta_min: u.eta_min(),
    })
}

/// `I(U_ref | U) = int |v_ref - v|^2/2 + e(xi_ref, eta_ref) - e(xi, eta)
///  - e_xi(xi, eta).(xi_ref - xi) - theta(xi, eta)(eta_ref - eta)`.
pub fn relative_energy(
    u_ref: &State,
    u: &State,
    model: &dyn EnergyModel,
) -> Result<f64, ModelError> {
    let grid = *u.grid();
    let dv = u_ref.v.sub(&u.v);
    let density = pointwise::<1>(&grid, |p| {
        let (xr, er) = (u_ref.xi.at(p), u_ref.eta.at(p)[0]);
        let (x, e) = (u.xi.at(p), u.eta.at(p)[0]);
        Ok([relative_density(model, &xr, er, &x, e)?])
    })?;
    Ok(0.5 * inner(&dv, &dv) + integrate_by(&grid, |p| density.at(p)[0]))
}

/// Pointwise `e(xi_ref, eta_ref | xi, eta)`.
pub fn relative_density(
    model: &dyn EnergyModel,
    xi_ref: &Ext,
    eta_ref: f64,
    xi: &Ext,
    eta: f64,
) -> Result<f64, ModelError> {
    if xi_ref == xi && eta_ref == eta {
        return Ok(0.0);
    }
    let (g, theta) = model.gradient(xi, eta)?;
    let lin: f64 = (0..EXT_DIM).map(|b| g[b] * (xi_ref[b] - xi[b])).sum();
    Ok(model.energy(xi_ref, eta_ref)? - model.energy(xi, eta)? - lin - theta * (eta_ref - eta))
}
