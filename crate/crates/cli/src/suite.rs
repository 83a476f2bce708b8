//! The invariant suite behind `polytherm check`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use polytherm_core::constitutive::{check_derivatives, check_hypotheses, checks, EnergyModel};
use polytherm_core::grid::{curl_residual, gradient, inner};
use polytherm_core::nulllag::{cof, det, piola_block_norms, piola_residual, Mat3};
use polytherm_core::varstep::{
    constraint_adjoint, constraint_linear, deformation_gradient, AdjointFn,
};
use polytherm_core::{
    ExtField, GridSpec, InitialData, QuadraticEnergy, ScalarField, StepConfig, VectorField,
    WaveParams,
};

/// One row of the margin table.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    /// `"<="` or `">="`: how `value` must compare with `limit`.
    pub cmp: &'static str,
    pub passed: bool,
    /// Informational rows are printed but do not decide the exit status.
    pub gating: bool,
    pub detail: String,
}

impl CheckRow {
    fn at_most(name: &str, value: f64, limit: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.to_string(),
            value,
            limit,
            cmp: "<=",
            passed: value <= limit,
            gating: true,
            detail: detail.into(),
        }
    }

    fn failed(name: &str, detail: impl Into<String>) -> Self {
        Self {
            name: name.to_string(),
            value: f64::NAN,
            limit: f64::NAN,
            cmp: "<=",
            passed: false,
            gating: true,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub rows: Vec<CheckRow>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed || !r.gating)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.rows
            .iter()
            .filter(|r| r.gating && !r.passed)
            .map(|r| r.name.as_str())
            .collect()
    }

    pub fn get(&self, name: &str) -> Option<&CheckRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn table(&self) -> String {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(0);
        let mut out = format!(
            "{:<width$}  {:>11}     {:>11}  status\n",
            "check", "value", "limit"
        );
        for r in &self.rows {
            let status = match (r.passed, r.gating) {
                (true, _) => "PASS",
                (false, true) => "FAIL",
                (false, false) => "info",
            };
            out += &format!(
                "{:<width$}  {:>11.3e}  {}  {:>11.3e}  {status}  {}\n",
                r.name, r.value, r.cmp, r.limit, r.detail
            );
        }
        out
    }
}

/// What the suite is run against. Tests swap in broken models or adjoints.
pub struct Suite<'a> {
    pub model: &'a dyn EnergyModel,
    pub adjoint: AdjointFn,
    pub seed: u64,
}

impl<'a> Suite<'a> {
    pub fn new(model: &'a dyn EnergyModel, seed: u64) -> Self {
        Self {
            model,
            adjoint: constraint_adjoint,
            seed,
        }
    }

    pub fn run(&self) -> SuiteReport {
        let mut rows = Vec::new();
        rows.extend(self.grid_adjointness());
        rows.extend(self.null_lagrangians());
        rows.extend(self.hypotheses());
        rows.push(self.derivatives());
        rows.push(self.adjoint_identity());
        rows.push(self.equilibrium());
        rows.push(self.quadratic_oracle());
        SuiteReport { rows }
    }

    fn rng(&self, salt: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15))
    }

    fn grid() -> GridSpec {
        GridSpec::new([6, 5, 4], [1.0, 1.3, 0.7]).expect("valid grid")
    }

    fn wave_state() -> polytherm_core::State {
        let wave = WaveParams {
            amplitude: 0.05,
            ..WaveParams::default()
        };
        InitialData::SmoothWave(wave)
            .build(Self::grid())
            .expect("small wave")
    }

    fn grid_adjointness(&self) -> Vec<CheckRow> {
        let grid = Self::grid();
        let mut rng = self.rng(1);
        let mut f = ScalarField::zeros(grid);
        let mut g = f.clone();
        f.as_mut_slice()
            .iter_mut()
            .for_each(|x| *x = rng.gen_range(-1.0..1.0));
        g.as_mut_slice()
            .iter_mut()
            .for_each(|x| *x = rng.gen_range(-1.0..1.0));
        let worst = (1..=3)
            .map(|a| {
                let lhs = inner(&f.diff(a).expect("axis"), &g);
                let rhs = inner(&f, &g.diff(a).expect("axis"));
                let scale = f.norm() * g.norm() / grid.dx()[a - 1];
                (lhs + rhs).abs() / scale
            })
            .fold(0.0, f64::max);
        vec![CheckRow::at_most(
            "grid: <D f, g> + <f, D g>",
            worst,
            1e-13,
            "relative, worst axis",
        )]
    }

    fn null_lagrangians(&self) -> Vec<CheckRow> {
        let s = Self::wave_state();
        let f = deformation_gradient(&s.u);
        let fnorm = f.norm();
        let curl = curl_residual(&f) / fnorm;
        let (frows, cofrows, detrow) = piola_block_norms(&piola_residual(&f));

        let mut rng = self.rng(2);
        let mut det_err: f64 = 0.0;
        for _ in 0..50 {
            let m: Mat3 =
                std::array::from_fn(|_| std::array::from_fn(|_| rng.gen_range(-2.0..2.0)));
            let c = cof(&m);
            let scale = c.iter().flatten().fold(1.0f64, |acc, x| acc.max(x.abs()));
            let step = 1e-5;
            for i in 0..3 {
                for a in 0..3 {
                    let (mut p, mut q) = (m, m);
                    p[i][a] += step;
                    q[i][a] -= step;
                    let fd = (det(&p) - det(&q)) / (2.0 * step);
                    det_err = det_err.max((fd - c[i][a]).abs() / scale);
                }
            }
        }
        let v = s.v.clone();
        let grad_curl = curl_residual(&gradient(&v)) / gradient(&v).norm().max(1e-300);
        vec![
            CheckRow::at_most("nulllag: curl of grad u", curl, 1e-12, "relative to |F|"),
            CheckRow::at_most("nulllag: curl of grad v", grad_curl, 1e-12, "relative"),
            CheckRow::at_most(
                "nulllag: Piola F and cof rows",
                frows.max(cofrows) / fnorm,
                1e-12,
                "relative to |F|",
            ),
            CheckRow {
                detail: "O(dx^2) product-rule defect, informational".into(),
                gating: false,
                ..CheckRow::at_most("nulllag: Piola det row", detrow / fnorm, 0.0, "")
            },
            CheckRow::at_most(
                "nulllag: d det/dF = cof",
                det_err,
                1e-6,
                "central differences",
            ),
        ]
    }

    fn hypotheses(&self) -> Vec<CheckRow> {
        match check_hypotheses(self.model, 500, self.seed) {
            Ok(report) => report
                .checks
                .iter()
                .map(|c| CheckRow {
                    name: format!("model {}: {}", report.model, c.name),
                    value: c.margin,
                    limit: 0.0,
                    cmp: ">=",
                    passed: c.passed,
                    // The dual-growth bound fails at rho = 2 for every admissible
                    // model of this family; it is reported but not enforced.
                    gating: c.name != checks::DUAL_BOUND,
                    detail: c.detail.clone(),
                })
                .collect(),
            Err(e) => vec![CheckRow::failed("model: hypotheses", e.to_string())],
        }
    }

    fn derivatives(&self) -> CheckRow {
        match check_derivatives(self.model, 100, self.seed) {
            Ok(d) => CheckRow::at_most(
                &format!("model {}: derivatives", self.model.name()),
                d.gradient_rel_err.max(d.symmetry_rel_err),
                1e-6,
                format!("hessian vs fd {:.2e}", d.hessian_rel_err),
            ),
            Err(e) => CheckRow::failed("model: derivatives", e.to_string()),
        }
    }

    /// `<A v, m> = <v, A* m>` for random `v`, `m` at a nontrivial `F0`.
    fn adjoint_identity(&self) -> CheckRow {
        let s = Self::wave_state();
        let grid = *s.grid();
        let f0 = s.f();
        let mut rng = self.rng(3);
        let mut v = VectorField::zeros(grid);
        v.as_mut_slice()
            .iter_mut()
            .for_each(|x| *x = rng.gen_range(-1.0..1.0));
        let mut m = ExtField::zeros(grid);
        m.as_mut_slice()
            .iter_mut()
            .for_each(|x| *x = rng.gen_range(-1.0..1.0));
        let av = constraint_linear(&f0, &v);
        let lhs = inner(&av, &m);
        let rhs = inner(&v, &(self.adjoint)(&f0, &m));
        let scale = av.norm() * m.norm();
        CheckRow::at_most(
            "step: adjoint identity",
            (lhs - rhs).abs() / scale,
            1e-12,
            "relative",
        )
    }

    /// Steps from rest must return the same state.
    fn equilibrium(&self) -> CheckRow {
        let grid = GridSpec::unit_cube(6).expect("valid grid");
        let init = InitialData::Equilibrium { eta: 1.0 }
            .build(grid)
            .expect("equilibrium");
        let cfg = StepConfig::with_h(0.01);
        let r = ScalarField::zeros(grid);
        let mut state = init.clone();
        for _ in 0..10 {
            state = match polytherm_core::solve_step(&state, &r, &cfg, self.model) {
                Ok((next, _)) => next,
                Err(e) => return CheckRow::failed("step: equilibrium fixed point", e.to_string()),
            };
        }
        let dev = [
            state.u.sub(&init.u).max_abs(),
            state.v.sub(&init.v).max_abs(),
            state.xi.sub(&init.xi).max_abs(),
            state.eta.sub(&init.eta).max_abs(),
        ]
        .into_iter()
        .fold(0.0, f64::max);
        CheckRow::at_most(
            "step: equilibrium fixed point",
            dev,
            1e-12,
            "10 steps on 6^3",
        )
    }

    /// For the quadratic model the step is the linear system whose weak form is
    /// `<v - v0, w> + h <xi, A w> = 0` for every `w`, with `xi = xi0 + h A v`.
    /// Tested against random `w` using only the forward operator.
    fn quadratic_oracle(&self) -> CheckRow {
        let name = "step: quadratic weak-form residual";
        let s = Self::wave_state();
        let grid = *s.grid();
        let h = 0.05;
        let cfg = StepConfig {
            newton_tol: 1e-13,
            cg_tol: 1e-14,
            ..StepConfig::with_h(h)
        };
        let model = QuadraticEnergy::default();
        let next = match polytherm_core::solve_step(&s, &ScalarField::zeros(grid), &cfg, &model) {
            Ok((next, _)) => next,
            Err(e) => return CheckRow::failed(name, e.to_string()),
        };
        let f0 = s.f();
        let dv = next.v.sub(&s.v);
        let mut rng = self.rng(4);
        let mut worst: f64 = 0.0;
        for _ in 0..4 {
            let mut w = VectorField::zeros(grid);
            w.as_mut_slice()
                .iter_mut()
                .for_each(|x| *x = rng.gen_range(-1.0..1.0));
            let aw = constraint_linear(&f0, &w);
            let res = inner(&dv, &w) + h * inner(&next.xi, &aw);
            let scale = (dv.norm() + h * next.xi.norm() * aw.norm() / w.norm()) * w.norm();
            worst = worst.max(res.abs() / scale);
        }
        CheckRow::at_most(name, worst, 1e-10, "relative, 4 random test fields")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use polytherm_core::{NonConvexEnergy, PaperEnergy};

    #[test]
    fn default_model_passes() {
        let model = PaperEnergy::default();
        let report = Suite::new(&model, 1).run();
        assert!(report.passed(), "{}", report.table());
    }

    fn flipped(f0: &polytherm_core::TensorField, m: &ExtField) -> VectorField {
        let mut out = constraint_adjoint(f0, m);
        out.scale(-1.0);
        out
    }

    #[test]
    fn sign_error_in_adjoint_is_caught() {
        let model = PaperEnergy::default();
        let suite = Suite {
            adjoint: flipped,
            ..Suite::new(&model, 1)
        };
        let report = suite.run();
        assert_eq!(report.failures(), vec!["step: adjoint identity"]);
    }

    #[test]
    fn nonconvex_model_fails_a_constitutive_check() {
        let model = NonConvexEnergy::default();
        let report = Suite::new(&model, 1).run();
        assert!(report
            .failures()
            .iter()
            .any(|n| n.starts_with("model nonconvex")));
    }
}
