use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn polytherm(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polytherm"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

/// Column `name` of a CSV file, parsed as floats.
fn column(path: &Path, name: &str) -> Vec<f64> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let idx = r
        .headers()
        .unwrap()
        .iter()
        .position(|h| h == name)
        .unwrap_or_else(|| panic!("no column {name}"));
    r.records()
        .map(|rec| rec.unwrap()[idx].parse().unwrap())
        .collect()
}

const EQUILIBRIUM: &str = r#"
[grid]
n = 6
[model]
name = "paper"
[initial]
preset = "equilibrium"
eta = 1.0
[time]
t_final = 0.1
h = 0.01
"#;

const WAVE: &str = r#"
[grid]
n = 6
[model]
name = "paper"
[time]
t_final = 0.05
h = 0.01
"#;

#[test]
fn check_passes_on_the_default_model() {
    let dir = tempfile::tempdir().unwrap();
    let out = polytherm(&["check", "--seed", "7"], dir.path());
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{text}");
    assert!(text.contains("step: adjoint identity"));
    assert!(!text.contains("FAIL"));
}

#[test]
fn equilibrium_run_keeps_energy_constant() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "eq.toml", EQUILIBRIUM);
    let out = polytherm(&["run", "--config", &cfg, "--out", "eq"], dir.path());
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let total = column(&dir.path().join("eq/energy.csv"), "total");
    assert_eq!(total.len(), 11);
    assert!(total.iter().all(|&e| e == total[0]));
    assert!(dir.path().join("eq/final.ckpt").exists());
    let steps = column(&dir.path().join("eq/solver.csv"), "step");
    assert_eq!(steps.len(), 10);
}

#[test]
fn wave_run_passes_with_nonincreasing_energy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "wave.toml", WAVE);
    let out = polytherm(&["run", "--config", &cfg, "--out", "wave"], dir.path());
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    let total = column(&dir.path().join("wave/energy.csv"), "total");
    let tol = column(&dir.path().join("wave/energy.csv"), "tol_d");
    for j in 1..total.len() {
        assert!(total[j] <= total[j - 1] + tol[j], "step {j}");
    }
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "wave.toml", WAVE);
    for out in ["a", "b"] {
        let o = polytherm(
            &["--workers", "2", "run", "--config", &cfg, "--out", out],
            dir.path(),
        );
        assert_eq!(o.status.code(), Some(0));
    }
    for file in [
        "energy.csv",
        "drift.csv",
        "solver.csv",
        "certificates.csv",
        "final.ckpt",
    ] {
        let a = fs::read(dir.path().join("a").join(file)).unwrap();
        let b = fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs");
    }
}

#[test]
fn newton_failure_leaves_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    // A unit step on a fast wave needs more Newton iterations than allowed here.
    let cfg = write_config(
        dir.path(),
        "big.toml",
        r#"
[grid]
n = 6
[model]
name = "paper"
[initial]
preset = "smooth-wave"
amplitude = 0.1
velocity = 2.0
[time]
t_final = 2.0
h = 1.0
[solver]
newton_max = 8
"#,
    );
    let out = polytherm(&["run", "--config", &cfg, "--out", "big"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let failure = fs::read_to_string(dir.path().join("big/failure.txt")).unwrap();
    assert!(failure.starts_with("step 1 "), "{failure}");
    assert!(failure.contains("Newton did not converge"));
    assert_eq!(
        column(&dir.path().join("big/energy.csv"), "step"),
        vec![0.0]
    );
    assert!(dir.path().join("big/partial.ckpt").exists());
}

#[test]
fn entropy_domain_failure_records_the_step() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "cool.toml",
        &EQUILIBRIUM.replace(
            "[time]",
            "[heat]\nkind = \"constant\"\nvalue = -20.0\n[time]",
        ),
    );
    let out = polytherm(&["run", "--config", &cfg, "--out", "cool"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let failure = fs::read_to_string(dir.path().join("cool/failure.txt")).unwrap();
    assert!(failure.contains("eta"), "{failure}");
    let steps = column(&dir.path().join("cool/energy.csv"), "step");
    let failed: usize = failure["step ".len()..]
        .split(' ')
        .next()
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(steps.len(), failed);
}

#[test]
fn bad_configs_exit_with_usage_status() {
    let dir = tempfile::tempdir().unwrap();
    let ell = write_config(
        dir.path(),
        "ell.toml",
        &EQUILIBRIUM.replace("name = \"paper\"", "name = \"paper\"\nell = 1.0"),
    );
    let out = polytherm(&["run", "--config", &ell], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ell > 1"));

    let steps = write_config(
        dir.path(),
        "steps.toml",
        &EQUILIBRIUM.replace("t_final = 0.1\nh = 0.01", "t_final = 0.35\nh = 0.1"),
    );
    let out = polytherm(&["run", "--config", &steps], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("time.t_final"));

    let typo = write_config(
        dir.path(),
        "typo.toml",
        &EQUILIBRIUM.replace("h = 0.01", "hh = 0.01"),
    );
    let out = polytherm(&["run", "--config", &typo], dir.path());
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn energy_report_reproduces_the_run_ledgers() {
    let dir = tempfile::tempdir().unwrap();
    let body = WAVE.replace("[time]", "[heat]\nkind = \"bump\"\namplitude = 1.0\n[time]");
    let cfg = write_config(dir.path(), "heat.toml", &body);
    assert_eq!(
        polytherm(&["run", "--config", &cfg, "--out", "run"], dir.path())
            .status
            .code(),
        Some(0)
    );
    let out = polytherm(
        &[
            "energy-report",
            "--checkpoint",
            "run/final.ckpt",
            "--config",
            &cfg,
            "--out",
            "report",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    for file in ["energy.csv", "drift.csv", "solver.csv", "certificates.csv"] {
        assert_eq!(
            fs::read(dir.path().join("run").join(file)).unwrap(),
            fs::read(dir.path().join("report").join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn equilibrium_study_reports_exact_orders() {
    let dir = tempfile::tempdir().unwrap();
    let body = EQUILIBRIUM.replace("t_final = 0.1\nh = 0.01", "t_final = 0.02\nh = 0.01")
        + "[study]\nh_levels = [0.01, 0.005, 0.0025]\ndx_levels = [4, 8, 16]\n[reference]\nfactor = 2\n";
    let cfg = write_config(dir.path(), "study.toml", &body);
    let out = polytherm(&["study", "--config", &cfg, "--out", "s"], dir.path());
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let mut r = csv::Reader::from_path(dir.path().join("s/study.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    let names: Vec<&str> = rows.iter().map(|x| &x[0]).collect();
    assert_eq!(
        names,
        [
            "zeta_drift",
            "w_drift",
            "relative_entropy",
            "piola_det",
            "piola_cof"
        ]
    );
    for row in &rows {
        assert_eq!(&row[4], "exact", "{row:?}");
        assert_eq!(&row[7], "PASS");
    }
}

#[test]
fn study_needs_three_levels() {
    let dir = tempfile::tempdir().unwrap();
    let body = EQUILIBRIUM.to_string() + "[study]\nh_levels = [0.01, 0.005]\n";
    let cfg = write_config(dir.path(), "short.toml", &body);
    let out = polytherm(&["study", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(3));
}
