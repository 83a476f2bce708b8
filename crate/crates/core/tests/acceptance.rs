//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits nonzero on any failure.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix3};
use polytherm_core::constitutive::check_derivatives;
use polytherm_core::diagnostics::{
    dissipation_certificate, drift_certificate, drift_ledger, observed_order, pairwise_orders,
    probe_stability, relative_entropy_study, stability_report, TrajectoryReference, DEFAULT_KAPPA,
};
use polytherm_core::nulllag::{cof, det, piola_block_norms, piola_residual, Mat3};
use polytherm_core::varstep::{deformation_gradient, solve_step_from};
use polytherm_core::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = (bool, String);

fn zero_heat(grid: GridSpec) -> impl Fn(usize, f64) -> ScalarField {
    move |_, _| ScalarField::zeros(grid)
}

fn max_diff<const C: usize>(a: &Field<C>, b: &Field<C>) -> f64 {
    a.sub(b).max_abs()
}

fn equilibrium() -> Outcome {
    let grid = GridSpec::unit_cube(8).unwrap();
    let init = InitialData::Equilibrium { eta: 1.0 }.build(grid).unwrap();
    let heat = zero_heat(grid);
    let traj = run(
        init.clone(),
        &heat,
        1.0,
        StepConfig::with_h(0.01),
        ModelSpec::default(),
    )
    .unwrap();
    let dev = traj
        .states
        .iter()
        .map(|s| {
            max_diff(&s.u, &init.u)
                .max(max_diff(&s.v, &init.v))
                .max(max_diff(&s.xi, &init.xi))
                .max(max_diff(&s.eta, &init.eta))
        })
        .fold(0.0, f64::max);
    (
        traj.steps() == 100 && dev <= 1e-12,
        format!("100 steps on 8^3, max deviation {dev:.3e} (<= 1e-12)"),
    )
}

const EPS: [(usize, usize, usize, f64); 6] = [
    (0, 1, 2, 1.0),
    (1, 2, 0, 1.0),
    (2, 0, 1, 1.0),
    (0, 2, 1, -1.0),
    (2, 1, 0, -1.0),
    (1, 0, 2, -1.0),
];

/// `d Phi^B / d F_{i a}(F)` as `[B][i][a]`, written out from the Levi-Civita formulas.
fn dphi_table(f: &Mat3) -> [[[f64; 3]; 3]; 19] {
    let mut t = [[[0.0; 3]; 3]; 19];
    for k in 0..3 {
        for c in 0..3 {
            t[3 * k + c][k][c] = 1.0;
        }
    }
    // cof_{kc} = 1/2 eps_{kij} eps_{cab} F_{ia} F_{jb}
    for &(k, i, j, s1) in &EPS {
        for &(c, a, b, s2) in &EPS {
            t[9 + 3 * k + c][i][a] += s1 * s2 * f[j][b];
        }
    }
    let m = Matrix3::from_fn(|i, a| f[i][a]);
    let cofm = m.determinant() * m.try_inverse().expect("invertible F").transpose();
    for i in 0..3 {
        for a in 0..3 {
            t[18][i][a] = cofm[(i, a)];
        }
    }
    t
}

fn quadratic_oracle() -> Outcome {
    let grid = GridSpec::unit_cube(4).unwrap();
    let n = grid.num_points();
    let dx = grid.dx();
    let state = InitialData::default().build(grid).unwrap();
    let h = 0.05;
    let f0 = state.f();
    let tables: Vec<_> = (0..n)
        .map(|p| {
            let s = f0.point(p);
            dphi_table(&[[s[0], s[1], s[2]], [s[3], s[4], s[5]], [s[6], s[7], s[8]]])
        })
        .collect();
    let nn = grid.n();
    let idx = |c: [usize; 3]| (c[0] * nn[1] + c[1]) * nn[2] + c[2];
    let mut a = DMatrix::<f64>::zeros(19 * n, 3 * n);
    for p in 0..n {
        let c = [p / (nn[1] * nn[2]), (p / nn[2]) % nn[1], p % nn[2]];
        for ax in 0..3 {
            let mut up = c;
            let mut down = c;
            up[ax] = (c[ax] + 1) % nn[ax];
            down[ax] = (c[ax] + nn[ax] - 1) % nn[ax];
            for (q, sign) in [(idx(up), 1.0), (idx(down), -1.0)] {
                for b in 0..19 {
                    for i in 0..3 {
                        a[(19 * p + b, 3 * q + i)] += sign * tables[q][b][i][ax] / (2.0 * dx[ax]);
                    }
                }
            }
        }
    }
    let v0 = DVector::from_column_slice(state.v.as_slice());
    let xi0 = DVector::from_column_slice(state.xi.as_slice());
    let lhs = DMatrix::<f64>::identity(3 * n, 3 * n) + h * h * a.transpose() * &a;
    let rhs = &v0 - h * a.transpose() * &xi0;
    let oracle = lhs.lu().solve(&rhs).expect("SPD system");

    let cfg = StepConfig {
        newton_tol: 1e-14,
        cg_tol: 1e-14,
        ..StepConfig::with_h(h)
    };
    let model = QuadraticEnergy::default();
    let (next, _) = solve_step_from(
        &state,
        &ScalarField::zeros(grid),
        &cfg,
        &model,
        state.v.clone(),
    )
    .unwrap();
    let got = DVector::from_column_slice(next.v.as_slice());
    let rel = (&got - &oracle).norm() / oracle.norm();
    (
        rel <= 1e-10,
        format!("4^3 one step vs dense solve, relative error {rel:.3e} (<= 1e-10)"),
    )
}

fn uniqueness() -> Outcome {
    let grid = GridSpec::unit_cube(8).unwrap();
    let state = InitialData::default().build(grid).unwrap();
    let cfg = StepConfig {
        newton_tol: 1e-13,
        cg_tol: 1e-12,
        ..StepConfig::with_h(0.02)
    };
    let model = PaperEnergy::default();
    let r = ScalarField::zeros(grid);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut perturbed = state.v.clone();
    for x in perturbed.as_mut_slice() {
        *x += rng.gen_range(-0.3..0.3);
    }
    let (a, _) = solve_step_from(&state, &r, &cfg, &model, VectorField::zeros(grid)).unwrap();
    let (b, _) = solve_step_from(&state, &r, &cfg, &model, perturbed).unwrap();
    let d = max_diff(&a.v, &b.v);
    (
        d <= 1e-9,
        format!("zero and perturbed Newton starts, max |v_a - v_b| = {d:.3e} (<= 1e-9)"),
    )
}

fn dissipation_run() -> Trajectory {
    let grid = GridSpec::unit_cube(16).unwrap();
    let init = InitialData::default().build(grid).unwrap();
    let heat = zero_heat(grid);
    run(
        init,
        &heat,
        0.2,
        StepConfig::with_h(1e-3),
        ModelSpec::default(),
    )
    .unwrap()
}

fn dissipation(traj: &Trajectory) -> Outcome {
    let cert = dissipation_certificate(traj, DEFAULT_KAPPA);
    let stab = stability_report(traj, DEFAULT_KAPPA).unwrap();
    let worst_excess = cert
        .energy_excess
        .iter()
        .zip(&cert.tolerances)
        .map(|(e, t)| e - t)
        .fold(f64::NEG_INFINITY, f64::max);
    (
        traj.steps() == 200 && cert.passed && stab.passed,
        format!(
            "16^3, h = 1e-3, 200 steps: worst margin + tol_d = {:.3e}, worst energy increase - tol_d = {worst_excess:.3e}, stability {:.4} <= {:.4}",
            cert.worst_slack,
            stab.sup_energy + stab.increments,
            stab.bound
        ),
    )
}

fn constraints(traj: &Trajectory) -> Outcome {
    let heat = zero_heat(*traj.grid());
    let ledger = drift_ledger(traj, &heat).unwrap();
    let (curl, feas) = (ledger.max_curl_rel(), ledger.max_feasibility());
    (
        curl <= 1e-12 && feas == 0.0,
        format!("curl / |F| max {curl:.3e} (<= 1e-12), feasibility max {feas:.3e} (= 0)"),
    )
}

fn entropy_identity() -> Outcome {
    let grid = GridSpec::unit_cube(8).unwrap();
    let init = InitialData::default().build(grid).unwrap();
    let supply = HeatSupply::Bump {
        amplitude: 2.0,
        width: 0.2,
        center: [0.5, 0.5, 0.5],
    };
    let heat = move |_: usize, t: f64| supply.sample(&grid, t);
    let traj = run(
        init,
        &heat,
        0.2,
        StepConfig::with_h(0.01),
        ModelSpec::default(),
    )
    .unwrap();
    let res = drift_ledger(&traj, &heat).unwrap().max_entropy_residual();
    (
        res <= 1e-13,
        format!("heated run on 8^3, 20 steps: max relative residual {res:.3e} (<= 1e-13)"),
    )
}

fn derivatives() -> Outcome {
    let d = check_derivatives(&PaperEnergy::default(), 100, 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut det_err: f64 = 0.0;
    for _ in 0..100 {
        let f: Mat3 = std::array::from_fn(|_| std::array::from_fn(|_| rng.gen_range(-2.0..2.0)));
        let c = cof(&f);
        let step = 1e-5;
        let scale = c.iter().flatten().fold(1.0f64, |m, x| m.max(x.abs()));
        for i in 0..3 {
            for a in 0..3 {
                let (mut fp, mut fm) = (f, f);
                fp[i][a] += step;
                fm[i][a] -= step;
                let fd = (det(&fp) - det(&fm)) / (2.0 * step);
                det_err = det_err.max((fd - c[i][a]).abs() / scale);
            }
        }
    }
    (
        d.gradient_rel_err <= 1e-6 && d.symmetry_rel_err <= 1e-10 && det_err <= 1e-6,
        format!(
            "gradient {:.3e} (<= 1e-6), hessian symmetry {:.3e} (<= 1e-10), ddet/dF - cof {det_err:.3e} (<= 1e-6); hessian vs fd {:.3e}",
            d.gradient_rel_err, d.symmetry_rel_err, d.hessian_rel_err
        ),
    )
}

fn drift() -> Outcome {
    // Zero initial displacement and a short horizon keep the O(T^2 dx^2) spatial
    // transport defect well below the O(T h) temporal part being measured.
    let grid = GridSpec::unit_cube(32).unwrap();
    let data = InitialData::SmoothWave(WaveParams {
        amplitude: 0.0,
        velocity: 0.1,
        mix: 0.5,
        ..WaveParams::default()
    });
    let heat = zero_heat(grid);
    let levels: Vec<Trajectory> = [4e-3, 2e-3, 1e-3]
        .iter()
        .map(|&h| {
            run(
                data.build(grid).unwrap(),
                &heat,
                0.012,
                StepConfig::with_h(h),
                ModelSpec::default(),
            )
            .unwrap()
        })
        .collect();
    let refs: Vec<&Trajectory> = levels.iter().collect();
    let cert = drift_certificate(&refs).unwrap();
    let mut gap_ok = true;
    let mut gaps = Vec::new();
    for l in &levels {
        let gap = l.interpolant_gap().unwrap();
        let e = stability_report(l, DEFAULT_KAPPA).unwrap().bound;
        let bound = (l.h() * e).sqrt();
        gap_ok &= gap <= bound;
        gaps.push(format!("{gap:.2e}<={bound:.2e}"));
    }
    (
        cert.zeta_order.at_least(0.8) && cert.passed && gap_ok,
        format!(
            "32^3, T = 0.012, h = 4e-3/2e-3/1e-3: zeta order {}, w order {} (>= 0.8); interpolant gap {}",
            cert.zeta_order,
            cert.w_order,
            gaps.join(", ")
        ),
    )
}

fn relative_entropy_convergence() -> Outcome {
    let grid = GridSpec::unit_cube(8).unwrap();
    let data = InitialData::default();
    let heat = zero_heat(grid);
    let t_final = 0.1;
    let model = ModelSpec::default();
    let make = |h: f64| {
        run(
            data.build(grid).unwrap(),
            &heat,
            t_final,
            StepConfig::with_h(h),
            model,
        )
        .unwrap()
    };
    let hs = [4e-3, 2e-3, 1e-3];
    let reference = make(hs[2] / 8.0);
    let levels: Vec<Trajectory> = hs.iter().map(|&h| make(h)).collect();
    let refs: Vec<&Trajectory> = levels.iter().collect();
    let study = relative_entropy_study(&refs, &TrajectoryReference(&reference), model.model(), 3.0)
        .unwrap();
    let enveloped = study.series.iter().all(|s| s.under_envelope);
    let fits: Vec<String> = study
        .series
        .iter()
        .map(|s| match &s.fit {
            Some(f) => format!("c2 {:.3} rms {:.2e}", f.c2, f.rms_residual),
            None => "no fit".to_string(),
        })
        .collect();
    (
        study.order.at_least(0.8) && enveloped,
        format!(
            "8^3, T = 0.1 vs h/8 reference: max I_rel {:?}, order {} (>= 0.8), under envelope {enveloped} [{}]",
            study.max_values.iter().map(|x| format!("{x:.2e}")).collect::<Vec<_>>(),
            study.order,
            fits.join("; ")
        ),
    )
}

fn piola_order() -> Outcome {
    let wave = WaveParams {
        amplitude: 0.1,
        ..WaveParams::default()
    };
    let mut dxs = Vec::new();
    let mut dets = Vec::new();
    let mut cof_max: f64 = 0.0;
    for n in [8, 16, 32] {
        let grid = GridSpec::unit_cube(n).unwrap();
        let s = InitialData::SmoothWave(wave).build(grid).unwrap();
        let (_, c, d) = piola_block_norms(&piola_residual(&deformation_gradient(&s.u)));
        dxs.push(grid.max_dx());
        dets.push(d);
        cof_max = cof_max.max(c);
    }
    // The coarsest level resolves the frequency-2 products of the defect at k dx ~ 1.6,
    // outside the asymptotic range; the verdict uses the finest pair.
    let fit = observed_order(&dxs, &dets, 1e-14);
    let pairs = pairwise_orders(&dxs, &dets);
    let finest = pairs[pairs.len() - 1];
    (
        finest >= 1.8 && cof_max <= 1e-12,
        format!(
            "frozen F on 8^3/16^3/32^3: det row {:?}, pairwise orders {:?}, finest {finest:.3} (>= 1.8), least squares {fit}; cofactor rows max {cof_max:.2e}",
            dets.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>(),
            pairs.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>()
        ),
    )
}

fn probes() -> Outcome {
    let s = probe_stability(&PaperEnergy::default(), 1000, 3.0, 2024).unwrap();
    let worst = s
        .refined_half
        .iter()
        .zip(&s.refined_full)
        .map(|(a, b)| {
            if *a > 0.0 {
                b / a
            } else if *b > 0.0 {
                f64::INFINITY
            } else {
                1.0
            }
        })
        .fold(0.0, f64::max);
    let maxima: Vec<String> = s
        .full
        .ratios
        .iter()
        .zip(&s.refined_full)
        .map(|(r, m)| format!("{} {m:.3e}", r.name))
        .collect();
    (
        s.passed,
        format!(
            "M = 3, 1000 vs 2000 samples: largest growth factor {worst:.3} (<= 2); {}",
            maxima.join(", ")
        ),
    )
}

fn main() {
    let mut failed = 0;
    let mut report = |id: usize, name: &str, f: &dyn Fn() -> Outcome| {
        let start = Instant::now();
        let (ok, detail) = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        });
        if !ok {
            failed += 1;
        }
        println!(
            "{} {id:>2} {name}: {detail} [{:.1}s]",
            if ok { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    };
    report(1, "equilibrium fixed point", &equilibrium);
    report(2, "quadratic surrogate oracle", &quadratic_oracle);
    report(3, "step uniqueness", &uniqueness);
    let traj = dissipation_run();
    report(4, "energy dissipation", &|| dissipation(&traj));
    report(5, "constraint preservation", &|| constraints(&traj));
    report(6, "entropy identity", &entropy_identity);
    report(7, "derivative consistency", &derivatives);
    report(8, "drift decay", &drift);
    report(
        9,
        "relative entropy convergence",
        &relative_entropy_convergence,
    );
    report(10, "piola residual order", &piola_order);
    report(11, "bound probes", &probes);
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
