//! Time marching over `[0, T]` with a fixed step.

use crate::constitutive::ModelSpec;
use crate::error::MarchError;
use crate::grid::{inner, Field, GridSpec, ScalarField};
use crate::varstep::{solve_step, State, StepConfig, StepReport};

/// Heat supply callback: `(step index j >= 1, t_{j-1}) -> r`.
pub type HeatFn<'a> = &'a dyn Fn(usize, f64) -> ScalarField;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub model: ModelSpec,
    pub cfg: StepConfig,
    /// `states[j]` lives at `t_0 + j h`.
    pub states: Vec<State>,
    /// `reports[j - 1]` describes the step producing `states[j]`.
    pub reports: Vec<StepReport>,
    /// `sum_{k <= j} |U^k - U^{k-1}|^2`, one entry per step.
    pub telescoping: Vec<f64>,
}

impl Trajectory {
    pub fn new(init: State, model: ModelSpec, cfg: StepConfig) -> Self {
        Self {
            model,
            cfg,
            states: vec![init],
            reports: Vec::new(),
            telescoping: Vec::new(),
        }
    }

    pub fn grid(&self) -> &GridSpec {
        self.states[0].grid()
    }

    pub fn h(&self) -> f64 {
        self.cfg.h
    }

    pub fn steps(&self) -> usize {
        self.reports.len()
    }

    pub fn start(&self) -> f64 {
        self.states[0].t
    }

    pub fn end(&self) -> f64 {
        self.time(self.steps())
    }

    pub fn time(&self, j: usize) -> f64 {
        self.start() + j as f64 * self.cfg.h
    }

    pub fn last(&self) -> &State {
        self.states
            .last()
            .expect("trajectory holds its initial state")
    }

    /// Advances `k` more steps. On failure the partial trajectory is returned inside the error.
    pub fn extend(mut self, k: usize, heat: HeatFn<'_>) -> Result<Self, MarchError> {
        self.cfg.validate().map_err(MarchError::Config)?;
        let model = self.model;
        for _ in 0..k {
            let j = self.steps() + 1;
            let prev = self.last();
            let r = heat(j, prev.t);
            match solve_step(prev, &r, &self.cfg, model.model()) {
                Ok((mut next, report)) => {
                    next.t = self.time(j);
                    let total = self.telescoping.last().copied().unwrap_or(0.0);
                    self.telescoping.push(total + report.delta_norm_sq);
                    self.states.push(next);
                    self.reports.push(report);
                }
                Err(source) => {
                    return Err(MarchError::Step {
                        step: j,
                        source,
                        partial: Box::new(self),
                    })
                }
            }
        }
        Ok(self)
    }

    /// `U^{j-1} + s (U^j - U^{j-1})` on `[t_{j-1}, t_j]`; returns the stored state at nodes.
    pub fn interp_linear(&self, t: f64) -> Result<State, MarchError> {
        let (j, s) = self.locate(t)?;
        if s == 1.0 {
            return Ok(self.states[j].clone());
        }
        let (a, b) = (&self.states[j - 1], &self.states[j]);
        Ok(State {
            t,
            u: lerp(&a.u, &b.u, s),
            v: lerp(&a.v, &b.v, s),
            xi: lerp(&a.xi, &b.xi, s),
            eta: lerp(&a.eta, &b.eta, s),
        })
    }

    /// `U^j` on `(t_{j-1}, t_j]`, and `U^0` at `t_0`.
    pub fn interp_constant(&self, t: f64) -> Result<State, MarchError> {
        let (j, _) = self.locate(t)?;
        let mut s = self.states[j].clone();
        s.t = t;
        Ok(s)
    }

    /// Returns `(j, s)` with `t = t_{j-1} + s h`, `s in (0, 1]`, or `(0, 1)` at `t_0`.
    fn locate(&self, t: f64) -> Result<(usize, f64), MarchError> {
        let (start, end) = (self.start(), self.end());
        let slack = 1e-12 * end.abs().max(self.h());
        if !(t >= start - slack && t <= end + slack) {
            return Err(MarchError::OutOfRange { t, start, end });
        }
        let k = (t - start) / self.h();
        let nearest = k.round();
        if (k - nearest).abs() <= 1e-9 {
            return Ok((nearest as usize, 1.0));
        }
        let j = k.ceil() as usize;
        Ok((j, k - (j - 1) as f64))
    }

    /// `||linear - constant||_{L2(Q_T)}` over all components of `U = (v, xi, eta)`,
    /// integrated exactly in time by two-point Gauss on each step.
    pub fn interpolant_gap(&self) -> Result<f64, MarchError> {
        let h = self.h();
        let nodes = [0.5 - 0.5 / 3f64.sqrt(), 0.5 + 0.5 / 3f64.sqrt()];
        let mut total = 0.0;
        for j in 1..=self.steps() {
            for s in nodes {
                let t = self.time(j - 1) + s * h;
                let a = self.interp_linear(t)?;
                let b = self.interp_constant(t)?;
                let (dv, dx, de) = (a.v.sub(&b.v), a.xi.sub(&b.xi), a.eta.sub(&b.eta));
                total += 0.5 * h * (inner(&dv, &dv) + inner(&dx, &dx) + inner(&de, &de));
            }
        }
        Ok(total.sqrt())
    }
}

fn lerp<const C: usize>(a: &Field<C>, b: &Field<C>, s: f64) -> Field<C> {
    let mut out = a.clone();
    out.as_mut_slice()
        .iter_mut()
        .zip(b.as_slice())
        .for_each(|(p, q)| *p += s * (q - *p));
    out
}

/// Marches `init` over `[t_0, t_0 + T]` with `T = N h`.
pub fn run(
    init: State,
    heat: HeatFn<'_>,
    t_final: f64,
    cfg: StepConfig,
    model: ModelSpec,
) -> Result<Trajectory, MarchError> {
    let n = step_count(t_final, cfg.h)?;
    Trajectory::new(init, model, cfg).extend(n, heat)
}

/// `N = T / h`, rejecting non-integral ratios.
pub fn step_count(t_final: f64, h: f64) -> Result<usize, MarchError> {
    let bad = MarchError::NonIntegralSteps { t_final, h };
    if !(h > 0.0 && t_final >= 0.0 && t_final.is_finite()) {
        return Err(bad);
    }
    let k = t_final / h;
    let n = k.round();
    if (k - n).abs() > 1e-9 * n.max(1.0) {
        return Err(bad);
    }
    Ok(n as usize)
}
