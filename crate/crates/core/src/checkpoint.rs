//! Binary checkpoints of whole trajectories.
//!
//! Layout: a plain-text header terminated by the line `end`, then little-endian f64
//! blocks (per state: `t, u, v, xi, eta`; per report: its fields in declaration order;
//! then the telescoping series), then the SHA-256 of everything before it.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::constitutive::ModelSpec;
use crate::error::CheckpointError;
use crate::grid::{Field, GridSpec};
use crate::march::Trajectory;
use crate::varstep::{State, StepConfig, StepReport};

pub const MAGIC: &str = "polytherm-checkpoint";
pub const VERSION: u32 = 1;
const REPORT_LEN: usize = 18;

fn report_values(r: &StepReport) -> [f64; REPORT_LEN] {
    [
        r.newton_iters as f64,
        r.cg_iters_total as f64,
        r.grad_norm_final,
        r.grad_target,
        r.el_residual,
        r.el_gap,
        r.piola_bound,
        r.energy_before,
        r.energy_after,
        r.kinetic,
        r.internal,
        r.relative_energy,
        r.dissipation_margin,
        r.heat_term,
        r.delta_norm_sq,
        r.stress_sup,
        r.velocity_w1,
        r.eta_min,
    ]
}

fn report_from(x: &[f64]) -> StepReport {
    StepReport {
        newton_iters: x[0] as usize,
        cg_iters_total: x[1] as usize,
        grad_norm_final: x[2],
        grad_target: x[3],
        el_residual: x[4],
        el_gap: x[5],
        piola_bound: x[6],
        energy_before: x[7],
        energy_after: x[8],
        kinetic: x[9],
        internal: x[10],
        relative_energy: x[11],
        dissipation_margin: x[12],
        heat_term: x[13],
        delta_norm_sq: x[14],
        stress_sup: x[15],
        velocity_w1: x[16],
        eta_min: x[17],
    }
}

fn header(traj: &Trajectory) -> String {
    let g = traj.grid();
    let [n1, n2, n3] = g.n();
    let [l1, l2, l3] = g.lengths();
    let c = &traj.cfg;
    let mut s = String::new();
    writeln!(s, "{MAGIC}").unwrap();
    writeln!(s, "version {VERSION}").unwrap();
    writeln!(s, "grid n={n1},{n2},{n3} len={l1:?},{l2:?},{l3:?}").unwrap();
    writeln!(
        s,
        "ordering point-major p=(i*n2+j)*n3+k with (i,j,k) along axes 1,2,3; xi=F[row-major 9],zeta[row-major 9],w; f64 little-endian"
    )
    .unwrap();
    writeln!(s, "motion periodic displacement u=y-x").unwrap();
    writeln!(s, "model {}", traj.model.describe()).unwrap();
    writeln!(
        s,
        "step h={:?} newton_tol={:?} newton_max={} cg_tol={:?} cg_max={} backtrack_factor={:?} armijo={:?} max_halvings={}",
        c.h, c.newton_tol, c.newton_max, c.cg_tol, c.cg_max, c.backtrack_factor, c.armijo, c.max_halvings
    )
    .unwrap();
    writeln!(s, "states {}", traj.states.len()).unwrap();
    writeln!(s, "reports {}", traj.reports.len()).unwrap();
    writeln!(s, "end").unwrap();
    s
}

pub fn to_bytes(traj: &Trajectory) -> Vec<u8> {
    let mut out = header(traj).into_bytes();
    let mut put = |xs: &[f64]| {
        for x in xs {
            out.extend_from_slice(&x.to_le_bytes());
        }
    };
    for s in &traj.states {
        put(&[s.t]);
        put(s.u.as_slice());
        put(s.v.as_slice());
        put(s.xi.as_slice());
        put(s.eta.as_slice());
    }
    for r in &traj.reports {
        put(&report_values(r));
    }
    put(&traj.telescoping);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

fn field<const C: usize>(grid: GridSpec, v: Vec<f64>) -> Result<Field<C>, CheckpointError> {
    Field::from_vec(grid, v).map_err(|e| format_err(e.to_string()))
}

fn format_err(msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Format(msg.into())
}

fn key_values(line: &str, prefix: &str) -> Result<Vec<(String, String)>, CheckpointError> {
    let rest = line
        .strip_prefix(prefix)
        .ok_or_else(|| format_err(format!("expected `{prefix}` line, got {line:?}")))?;
    rest.split_whitespace()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| format_err(format!("bad entry {kv:?}")))
        })
        .collect()
}

fn lookup<T: std::str::FromStr>(kv: &[(String, String)], key: &str) -> Result<T, CheckpointError> {
    kv.iter()
        .find(|(k, _)| k == key)
        .and_then(|(_, v)| v.parse().ok())
        .ok_or_else(|| format_err(format!("missing or malformed {key}")))
}

fn triple<T: std::str::FromStr + Copy + Default>(s: &str) -> Result<[T; 3], CheckpointError> {
    let parts: Vec<T> = s
        .split(',')
        .map(|x| {
            x.parse()
                .map_err(|_| format_err(format!("bad triple {s:?}")))
        })
        .collect::<Result<_, _>>()?;
    parts
        .try_into()
        .map_err(|_| format_err(format!("expected three values in {s:?}")))
}

fn count(line: &str, key: &str) -> Result<usize, CheckpointError> {
    line.strip_prefix(key)
        .and_then(|x| x.trim().parse().ok())
        .ok_or_else(|| format_err(format!("expected `{key} N`, got {line:?}")))
}

pub fn from_bytes(bytes: &[u8]) -> Result<Trajectory, CheckpointError> {
    let end_marker = b"\nend\n";
    let header_end = bytes
        .windows(end_marker.len())
        .position(|w| w == end_marker)
        .ok_or_else(|| format_err("header terminator not found"))?
        + end_marker.len();
    let text =
        std::str::from_utf8(&bytes[..header_end]).map_err(|_| format_err("header is not UTF-8"))?;
    let lines: Vec<&str> = text.lines().collect();
    if lines.first() != Some(&MAGIC) {
        return Err(format_err("not a polytherm checkpoint"));
    }
    let version = lines
        .get(1)
        .and_then(|l| l.strip_prefix("version "))
        .unwrap_or("");
    if version != VERSION.to_string() {
        return Err(CheckpointError::Version(version.to_string()));
    }
    if bytes.len() < header_end + 32 {
        return Err(CheckpointError::Checksum);
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(CheckpointError::Checksum);
    }
    if lines.len() != 10 {
        return Err(format_err(format!(
            "expected 10 header lines, found {}",
            lines.len()
        )));
    }

    let grid_kv = key_values(lines[2], "grid ")?;
    let n: [usize; 3] = triple(&lookup::<String>(&grid_kv, "n")?)?;
    let len: [f64; 3] = triple(&lookup::<String>(&grid_kv, "len")?)?;
    let grid = GridSpec::new(n, len).map_err(|e| format_err(e.to_string()))?;
    let model = ModelSpec::parse(
        lines[5]
            .strip_prefix("model ")
            .ok_or_else(|| format_err("missing model line"))?,
    )
    .map_err(format_err)?;
    let step = key_values(lines[6], "step ")?;
    let cfg = StepConfig {
        h: lookup(&step, "h")?,
        newton_tol: lookup(&step, "newton_tol")?,
        newton_max: lookup(&step, "newton_max")?,
        cg_tol: lookup(&step, "cg_tol")?,
        cg_max: lookup(&step, "cg_max")?,
        backtrack_factor: lookup(&step, "backtrack_factor")?,
        armijo: lookup(&step, "armijo")?,
        max_halvings: lookup(&step, "max_halvings")?,
    };
    let n_states = count(lines[7], "states ")?;
    let n_reports = count(lines[8], "reports ")?;
    if n_states == 0 || n_reports + 1 != n_states {
        return Err(format_err("state and report counts disagree"));
    }

    let data = &body[header_end..];
    let npts = grid.num_points();
    let per_state = 1 + 26 * npts;
    let expected = n_states * per_state + n_reports * (REPORT_LEN + 1);
    if data.len() != 8 * expected {
        return Err(format_err(format!(
            "body has {} bytes, expected {}",
            data.len(),
            8 * expected
        )));
    }
    let values: Vec<f64> = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let mut cursor = 0;
    let mut take = |k: usize| {
        let s = &values[cursor..cursor + k];
        cursor += k;
        s.to_vec()
    };
    let mut states = Vec::with_capacity(n_states);
    for _ in 0..n_states {
        let t = take(1)[0];
        states.push(State {
            t,
            u: field(grid, take(3 * npts))?,
            v: field(grid, take(3 * npts))?,
            xi: field(grid, take(19 * npts))?,
            eta: field(grid, take(npts))?,
        });
    }
    let reports = (0..n_reports)
        .map(|_| report_from(&take(REPORT_LEN)))
        .collect();
    let telescoping = take(n_reports);
    Ok(Trajectory {
        model,
        cfg,
        states,
        reports,
        telescoping,
    })
}

pub fn save(traj: &Trajectory, path: &Path) -> Result<(), CheckpointError> {
    std::fs::write(path, to_bytes(traj)).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load(path: &Path) -> Result<Trajectory, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    from_bytes(&bytes)
}
