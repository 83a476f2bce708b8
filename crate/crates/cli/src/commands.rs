//! Subcommands: `run`, `check`, `study`, `energy-report`.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use thiserror::Error;

use polytherm_core::checkpoint;
use polytherm_core::diagnostics::{
    dissipation_certificate, drift_certificate, drift_ledger, energy_ledger, observed_order,
    pairwise_orders, relative_entropy_study, stability_report, DissipationCertificate, DriftLedger,
    EnergyLedger, Order, TrajectoryReference,
};
use polytherm_core::march::step_count;
use polytherm_core::nulllag::{piola_block_norms, piola_residual};
use polytherm_core::varstep::deformation_gradient;
use polytherm_core::{
    run, CheckpointError, DiagnosticsError, EnergyModel, GridSpec, HeatSupply, MarchError,
    PresetError, ScalarField, StepConfig, Trajectory,
};

use crate::config::{ConfigError, RunConfig};
use crate::suite::Suite;

/// Limits shared by `run` and `energy-report`.
pub const CURL_LIMIT: f64 = 1e-12;
pub const ENTROPY_LIMIT: f64 = 1e-13;
/// Minimum observed orders in `study`.
pub const DRIFT_ORDER: f64 = 0.8;
pub const REL_ENTROPY_ORDER: f64 = 0.8;
pub const PIOLA_ORDER: f64 = 1.8;
/// Errors at or below this are treated as exact in `study`.
pub const EXACT_FLOOR: f64 = 1e-13;

/// Process outcome of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    CertificateFail,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("initial data: {0}")]
    Preset(#[from] PresetError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error(transparent)]
    Model(#[from] polytherm_core::ModelError),
    /// A time step failed; partial outputs have been written.
    #[error("{0}")]
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 3,
            _ => 2,
        }
    }
}

impl Status {
    pub fn exit_code(self) -> u8 {
        match self {
            Status::Pass => 0,
            Status::CertificateFail => 1,
        }
    }
}

/// Round-trip float formatting: 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write_csv(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

fn heat_fn(heat: HeatSupply, grid: GridSpec) -> impl Fn(usize, f64) -> ScalarField {
    move |_, t| heat.sample(&grid, t)
}

/// A certificate in the `run` table.
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub name: &'static str,
    pub value: f64,
    pub limit: f64,
    pub passed: bool,
}

/// Ledgers and certificates of one trajectory, as written by `run` and `energy-report`.
pub struct RunReport {
    pub energy: EnergyLedger,
    pub dissipation: DissipationCertificate,
    pub drift: DriftLedger,
    pub certificates: Vec<Certificate>,
}

impl RunReport {
    pub fn new(traj: &Trajectory, heat: HeatSupply, kappa: f64) -> Result<Self, CliError> {
        let energy = energy_ledger(traj)?;
        let dissipation = dissipation_certificate(traj, kappa);
        let drift = drift_ledger(traj, &heat_fn(heat, *traj.grid()))?;
        let stability = stability_report(traj, kappa)?;
        let certificates = vec![
            Certificate {
                name: "dissipation: worst margin + tol_d",
                value: dissipation.worst_slack.min(f64::MAX),
                limit: 0.0,
                passed: dissipation.passed,
            },
            Certificate {
                name: "stability: sup energy + increments",
                value: stability.sup_energy + stability.increments,
                limit: stability.bound,
                passed: stability.passed,
            },
            Certificate {
                name: "constraints: curl / |F|",
                value: drift.max_curl_rel(),
                limit: CURL_LIMIT,
                passed: drift.max_curl_rel() <= CURL_LIMIT,
            },
            Certificate {
                name: "constraints: feasibility",
                value: drift.max_feasibility(),
                limit: 0.0,
                passed: drift.max_feasibility() == 0.0,
            },
            Certificate {
                name: "entropy identity",
                value: drift.max_entropy_residual(),
                limit: ENTROPY_LIMIT,
                passed: drift.max_entropy_residual() <= ENTROPY_LIMIT,
            },
        ];
        Ok(Self {
            energy,
            dissipation,
            drift,
            certificates,
        })
    }

    pub fn passed(&self) -> bool {
        self.certificates.iter().all(|c| c.passed)
    }

    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<36}  {:>11}  {:>11}  status\n",
            "certificate", "value", "limit"
        );
        for c in &self.certificates {
            out += &format!(
                "{:<36}  {:>11.3e}  {:>11.3e}  {}\n",
                c.name,
                c.value,
                c.limit,
                if c.passed { "PASS" } else { "FAIL" }
            );
        }
        out
    }

    /// Writes `energy.csv`, `drift.csv`, `solver.csv` and `certificates.csv` into `dir`.
    pub fn write(&self, traj: &Trajectory, dir: &Path) -> Result<(), CliError> {
        create_dir(dir)?;
        let f = fmt_f64;
        let energy = self
            .energy
            .rows
            .iter()
            .map(|r| {
                // Row 0 is the initial state; it has no step and no tolerance.
                let tol = if r.step == 0 {
                    0.0
                } else {
                    self.dissipation.tolerances[r.step - 1]
                };
                vec![
                    r.step.to_string(),
                    f(r.t),
                    f(r.total),
                    f(r.kinetic),
                    f(r.internal),
                    f(r.relative_energy),
                    f(r.dissipation_margin),
                    f(r.heat),
                    f(tol),
                ]
            })
            .collect();
        write_csv(
            &dir.join("energy.csv"),
            &[
                "step",
                "t",
                "total",
                "kinetic",
                "internal",
                "relative_energy",
                "dissipation_margin",
                "heat",
                "tol_d",
            ],
            energy,
        )?;

        let drift = self
            .drift
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.step.to_string(),
                    f(r.t),
                    f(r.zeta_drift),
                    f(r.w_drift),
                    f(r.piola_cof),
                    f(r.piola_det),
                    f(r.curl_rel),
                    f(r.transport_cof),
                    f(r.transport_det),
                    f(r.transport_cof_spatial),
                    f(r.transport_det_spatial),
                    f(r.feasibility),
                    f(r.entropy_residual),
                ]
            })
            .collect();
        write_csv(
            &dir.join("drift.csv"),
            &[
                "step",
                "t",
                "zeta_drift",
                "w_drift",
                "piola_cof",
                "piola_det",
                "curl_rel",
                "transport_cof",
                "transport_det",
                "transport_cof_spatial",
                "transport_det_spatial",
                "feasibility",
                "entropy_residual",
            ],
            drift,
        )?;

        let solver = traj
            .reports
            .iter()
            .enumerate()
            .map(|(j, r)| {
                vec![
                    (j + 1).to_string(),
                    f(traj.time(j + 1)),
                    r.newton_iters.to_string(),
                    r.cg_iters_total.to_string(),
                    f(r.grad_norm_final),
                    f(r.grad_target),
                    f(r.el_residual),
                    f(r.el_gap),
                    f(r.piola_bound),
                    f(r.delta_norm_sq),
                    f(r.stress_sup),
                    f(r.velocity_w1),
                    f(r.eta_min),
                ]
            })
            .collect();
        write_csv(
            &dir.join("solver.csv"),
            &[
                "step",
                "t",
                "newton_iters",
                "cg_iters",
                "grad_norm",
                "grad_target",
                "el_residual",
                "el_gap",
                "piola_bound",
                "delta_norm_sq",
                "stress_sup",
                "velocity_w1",
                "eta_min",
            ],
            solver,
        )?;

        let certs = self
            .certificates
            .iter()
            .map(|c| {
                vec![
                    c.name.to_string(),
                    f(c.value),
                    f(c.limit),
                    if c.passed { "PASS" } else { "FAIL" }.to_string(),
                ]
            })
            .collect();
        write_csv(
            &dir.join("certificates.csv"),
            &["certificate", "value", "limit", "verdict"],
            certs,
        )
    }
}

fn run_config(cfg: &RunConfig, h: f64) -> StepConfig {
    StepConfig { h, ..cfg.step }
}

fn march(cfg: &RunConfig, grid: GridSpec, h: f64) -> Result<Trajectory, MarchError> {
    let init = cfg
        .initial
        .build(grid)
        .map_err(|e| MarchError::Config(polytherm_core::StepError::Config(e.to_string())))?;
    run(
        init,
        &heat_fn(cfg.heat, grid),
        cfg.t_final,
        run_config(cfg, h),
        cfg.model,
    )
}

/// Simulates the configured run and writes ledgers, a checkpoint and the certificate table.
pub fn cmd_run(cfg: &RunConfig) -> Result<Status, CliError> {
    let dir = &cfg.out_dir;
    create_dir(dir)?;
    // Surface preset problems as such, before marching.
    cfg.initial.build(cfg.grid)?;
    info!(
        "run: {} steps of h = {} on {:?}",
        cfg.steps,
        cfg.step.h,
        cfg.grid.n()
    );
    match march(cfg, cfg.grid, cfg.step.h) {
        Ok(traj) => {
            let report = RunReport::new(&traj, cfg.heat, cfg.kappa)?;
            report.write(&traj, dir)?;
            if cfg.checkpoint {
                checkpoint::save(&traj, &dir.join("final.ckpt"))?;
            }
            print!("{}", report.table());
            Ok(if report.passed() {
                Status::Pass
            } else {
                Status::CertificateFail
            })
        }
        Err(MarchError::Step {
            step,
            source,
            partial,
        }) => {
            let t = partial.time(step);
            let text = format!(
                "step {step} (t = {}) failed: {source}\naccepted steps: {}\n",
                fmt_f64(t),
                partial.steps()
            );
            fs::write(dir.join("failure.txt"), &text).map_err(io_err(&dir.join("failure.txt")))?;
            let report = RunReport::new(&partial, cfg.heat, cfg.kappa)?;
            report.write(&partial, dir)?;
            if cfg.checkpoint {
                checkpoint::save(&partial, &dir.join("partial.ckpt"))?;
            }
            Err(CliError::Run(format!(
                "step {step} failed: {source}; partial outputs in {}",
                dir.display()
            )))
        }
        Err(e) => Err(CliError::Run(e.to_string())),
    }
}

/// Re-emits the ledgers and certificates of a saved trajectory. `heat` must be the
/// supply the run used, or the entropy identity will not hold.
pub fn cmd_energy_report(
    ckpt: &Path,
    heat: HeatSupply,
    kappa: f64,
    dir: &Path,
) -> Result<Status, CliError> {
    let traj = checkpoint::load(ckpt)?;
    let report = RunReport::new(&traj, heat, kappa)?;
    report.write(&traj, dir)?;
    print!("{}", report.table());
    Ok(if report.passed() {
        Status::Pass
    } else {
        Status::CertificateFail
    })
}

/// Runs the invariant suite against `model`.
pub fn cmd_check(model: &dyn EnergyModel, seed: u64) -> Status {
    let report = Suite::new(model, seed).run();
    print!("{}", report.table());
    let failures = report.failures();
    if failures.is_empty() {
        Status::Pass
    } else {
        eprintln!("failed: {}", failures.join(", "));
        Status::CertificateFail
    }
}

/// One row of `study.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    pub quantity: &'static str,
    pub refinement: &'static str,
    pub levels: Vec<f64>,
    pub values: Vec<f64>,
    pub order: Order,
    pub finest_pair: Option<f64>,
    pub threshold: f64,
    pub passed: bool,
}

impl StudyRow {
    fn new(
        quantity: &'static str,
        refinement: &'static str,
        levels: Vec<f64>,
        values: Vec<f64>,
        threshold: f64,
        by_finest_pair: bool,
    ) -> Self {
        let order = observed_order(&levels, &values, EXACT_FLOOR);
        let finest_pair = match order {
            Order::Exact => None,
            Order::Observed(_) => pairwise_orders(&levels, &values).last().copied(),
        };
        let passed = match (order, finest_pair) {
            (Order::Exact, _) => true,
            (_, Some(q)) if by_finest_pair => q >= threshold,
            (o, _) => o.at_least(threshold),
        };
        Self {
            quantity,
            refinement,
            levels,
            values,
            order,
            finest_pair,
            threshold,
            passed,
        }
    }

    /// A quantity that must vanish to roundoff at every level.
    fn vanishing(
        quantity: &'static str,
        refinement: &'static str,
        levels: Vec<f64>,
        values: Vec<f64>,
    ) -> Self {
        let passed = values.iter().all(|&v| v <= EXACT_FLOOR);
        Self {
            order: observed_order(&levels, &values, EXACT_FLOOR),
            quantity,
            refinement,
            levels,
            values,
            finest_pair: None,
            threshold: f64::NAN,
            passed,
        }
    }

    fn record(&self) -> Vec<String> {
        let join = |xs: &[f64]| xs.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(";");
        let order = match self.order {
            Order::Exact => "exact".to_string(),
            Order::Observed(q) => fmt_f64(q),
        };
        let pair = match (self.order, self.finest_pair) {
            (Order::Exact, _) => "exact".to_string(),
            (_, Some(q)) => fmt_f64(q),
            (_, None) => String::new(),
        };
        let threshold = if self.threshold.is_nan() {
            "vanishing".to_string()
        } else {
            fmt_f64(self.threshold)
        };
        vec![
            self.quantity.to_string(),
            self.refinement.to_string(),
            join(&self.levels),
            join(&self.values),
            order,
            pair,
            threshold,
            if self.passed { "PASS" } else { "FAIL" }.to_string(),
        ]
    }
}

/// `h`-refinement (drift and relative entropy) and optional `dx`-refinement (Piola residual).
pub fn study(cfg: &RunConfig) -> Result<Vec<StudyRow>, CliError> {
    if cfg.h_levels.len() < 3 {
        return Err(CliError::Usage(format!(
            "study needs at least 3 entries in study.h_levels, got {}",
            cfg.h_levels.len()
        )));
    }
    if !cfg.dx_levels.is_empty() && cfg.dx_levels.len() < 3 {
        return Err(CliError::Usage(format!(
            "study.dx_levels needs at least 3 entries when given, got {}",
            cfg.dx_levels.len()
        )));
    }
    for &h in &cfg.h_levels {
        step_count(cfg.t_final, h).map_err(|e| CliError::Usage(format!("study.h_levels: {e}")))?;
    }
    cfg.initial.build(cfg.grid)?;
    let mut levels = Vec::new();
    for &h in &cfg.h_levels {
        info!("study: h = {h}");
        levels.push(march(cfg, cfg.grid, h).map_err(|e| CliError::Run(format!("h = {h}: {e}")))?);
    }
    let h_ref =
        cfg.h_levels.iter().copied().fold(f64::INFINITY, f64::min) / cfg.reference_factor as f64;
    info!("study: reference h = {h_ref}");
    let reference = march(cfg, cfg.grid, h_ref)
        .map_err(|e| CliError::Run(format!("reference h = {h_ref}: {e}")))?;

    let refs: Vec<&Trajectory> = levels.iter().collect();
    let drift = drift_certificate(&refs)?;
    let rel = relative_entropy_study(
        &refs,
        &TrajectoryReference(&reference),
        cfg.model.model(),
        cfg.m,
    )?;
    let hs = drift.steps.clone();
    let mut rows = vec![
        StudyRow::new(
            "zeta_drift",
            "h",
            hs.clone(),
            drift.zeta,
            DRIFT_ORDER,
            false,
        ),
        StudyRow::new("w_drift", "h", hs.clone(), drift.w, DRIFT_ORDER, false),
        StudyRow::new(
            "relative_entropy",
            "h",
            hs,
            rel.max_values,
            REL_ENTROPY_ORDER,
            false,
        ),
    ];

    if !cfg.dx_levels.is_empty() {
        let mut dxs = Vec::new();
        let mut dets = Vec::new();
        let mut cofs = Vec::new();
        for &n in &cfg.dx_levels {
            let grid = GridSpec::new([n; 3], cfg.grid.lengths())
                .map_err(|e| CliError::Usage(format!("study.dx_levels: {e}")))?;
            let s = cfg.initial.build(grid)?;
            let f = deformation_gradient(&s.u);
            let (_, c, d) = piola_block_norms(&piola_residual(&f));
            dxs.push(grid.max_dx());
            dets.push(d);
            cofs.push(c);
        }
        // Coarse grids are pre-asymptotic for the product-rule defect; the verdict
        // uses the finest pair.
        rows.push(StudyRow::new(
            "piola_det",
            "dx",
            dxs.clone(),
            dets,
            PIOLA_ORDER,
            true,
        ));
        rows.push(StudyRow::vanishing("piola_cof", "dx", dxs, cofs));
    }
    Ok(rows)
}

pub fn cmd_study(cfg: &RunConfig) -> Result<Status, CliError> {
    let rows = study(cfg)?;
    create_dir(&cfg.out_dir)?;
    write_csv(
        &cfg.out_dir.join("study.csv"),
        &[
            "quantity",
            "refinement",
            "levels",
            "values",
            "order",
            "finest_pair_order",
            "threshold",
            "verdict",
        ],
        rows.iter().map(StudyRow::record).collect(),
    )?;
    println!(
        "{:<18}  {:>4}  {:>10}  {:>10}  verdict",
        "quantity", "ref", "order", "finest"
    );
    for r in &rows {
        let pair = r.finest_pair.map_or("-".to_string(), |q| format!("{q:.3}"));
        println!(
            "{:<18}  {:>4}  {:>10}  {:>10}  {}",
            r.quantity,
            r.refinement,
            r.order.to_string(),
            pair,
            if r.passed { "PASS" } else { "FAIL" }
        );
    }
    Ok(if rows.iter().all(|r| r.passed) {
        Status::Pass
    } else {
        Status::CertificateFail
    })
}
