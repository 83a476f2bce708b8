//! Internal energy `e(xi, eta)` of the extended variable and entropy.
//!
//! Every model exposes the energy, its gradient `(e_xi, theta)` where
//! `theta = de/deta` is the temperature, and the Hessian action. Models are
//! immutable values; all evaluations are pure.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::ModelError;
use crate::nulllag::{Ext, EXT_DIM};

/// Growth exponents `(p, q, rho, ell)` for `|F|`, `|zeta|`, `|w|` and `eta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exponents {
    pub p: f64,
    pub q: f64,
    pub rho: f64,
    pub ell: f64,
}

impl Exponents {
    /// `|F|^p + |zeta|^q + |w|^rho + |eta|^ell`.
    pub fn growth(&self, xi: &Ext, eta: f64) -> f64 {
        let f = block_norm(xi, 0..9);
        let z = block_norm(xi, 9..18);
        f.powf(self.p) + z.powf(self.q) + xi[18].abs().powf(self.rho) + eta.abs().powf(self.ell)
    }
}

pub trait EnergyModel: Send + Sync + std::fmt::Debug {
    fn name(&self) -> &'static str;

    fn energy(&self, xi: &Ext, eta: f64) -> Result<f64, ModelError>;

    /// `(e_xi, theta)`.
    fn gradient(&self, xi: &Ext, eta: f64) -> Result<(Ext, f64), ModelError>;

    /// Action of the Hessian in `(xi, eta)` on `(dxi, deta)`.
    fn hess_vec(&self, xi: &Ext, eta: f64, dxi: &Ext, deta: f64) -> Result<(Ext, f64), ModelError>;

    fn exponents(&self) -> Exponents;

    /// Lower bound `c_e` on the Hessian, valid globally or on the model's stated bounded set.
    fn convexity_constant(&self) -> f64;

    /// `delta` with `theta >= delta` for `eta >= 0`.
    fn temperature_floor(&self) -> f64;

    fn temperature(&self, xi: &Ext, eta: f64) -> Result<f64, ModelError> {
        Ok(self.gradient(xi, eta)?.1)
    }
}

#[inline]
fn check_eta(eta: f64) -> Result<(), ModelError> {
    if eta >= 0.0 {
        Ok(())
    } else {
        Err(ModelError::NegativeEntropy(eta))
    }
}

fn block_norm(x: &Ext, r: std::ops::Range<usize>) -> f64 {
    x[r].iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `beta (1 + |x|^2)^(e/2)` with its first two derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Radial {
    beta: f64,
    e: f64,
}

impl Radial {
    fn value(&self, r2: f64) -> f64 {
        self.beta * (1.0 + r2).powf(0.5 * self.e)
    }

    /// Gradient is `slope(r2) * x`.
    fn slope(&self, r2: f64) -> f64 {
        self.beta * self.e * (1.0 + r2).powf(0.5 * self.e - 1.0)
    }

    /// Hessian is `slope(r2) I + curv(r2) x x^T`.
    fn curv(&self, r2: f64) -> f64 {
        self.beta * self.e * (self.e - 2.0) * (1.0 + r2).powf(0.5 * self.e - 2.0)
    }

    /// Smallest Hessian eigenvalue at radius `r` (radial or tangential).
    fn min_eig(&self, r: f64, tangential: bool) -> f64 {
        let r2 = r * r;
        let radial = self.slope(r2) + self.curv(r2) * r2;
        if tangential {
            radial.min(self.slope(r2))
        } else {
            radial
        }
    }

    fn min_eig_on_ball(&self, radius: f64, tangential: bool) -> f64 {
        if self.e >= 2.0 {
            // Both eigenvalues are nondecreasing in r.
            return self.min_eig(0.0, tangential);
        }
        (0..=1000)
            .map(|k| self.min_eig(radius * k as f64 / 1000.0, tangential))
            .fold(f64::INFINITY, f64::min)
    }
}

/// `e = |F|^4 + |F|^2 + b_z (1+|zeta|^2)^(q/2) + b_w (1+w^2)^(rho/2) + b_eta (1+eta^2)^(ell/2) + delta eta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PaperEnergy {
    pub beta_zeta: f64,
    pub beta_w: f64,
    pub beta_eta: f64,
    pub delta: f64,
    pub q: f64,
    pub rho: f64,
    pub ell: f64,
    /// Radius of the set on which `c_e` is certified when an exponent is below 2.
    pub convexity_radius: f64,
}

impl Default for PaperEnergy {
    fn default() -> Self {
        Self {
            beta_zeta: 1.0,
            beta_w: 1.0,
            beta_eta: 1.0,
            delta: 0.1,
            q: 2.0,
            rho: 2.0,
            ell: 2.0,
            convexity_radius: 10.0,
        }
    }
}

impl PaperEnergy {
    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("beta_zeta", self.beta_zeta),
            ("beta_w", self.beta_w),
            ("beta_eta", self.beta_eta),
            ("delta", self.delta),
            ("convexity_radius", self.convexity_radius),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(ModelError::BadParameter {
                    name,
                    value,
                    reason: "must be positive",
                });
            }
        }
        if !(self.q >= 2.0) {
            return Err(ModelError::BadParameter {
                name: "q",
                value: self.q,
                reason: "requires q >= 2",
            });
        }
        if !(self.rho > 1.0) {
            return Err(ModelError::BadParameter {
                name: "rho",
                value: self.rho,
                reason: "requires rho > 1",
            });
        }
        if !(self.ell > 1.0) {
            return Err(ModelError::BadParameter {
                name: "ell",
                value: self.ell,
                reason: "requires ell > 1",
            });
        }
        if self.rho < 2.0 || self.ell < 2.0 {
            log::warn!(
                "rho = {}, ell = {}: uniform convexity holds only on |w|, |eta| <= {}",
                self.rho,
                self.ell,
                self.convexity_radius
            );
        }
        Ok(())
    }

    fn zeta_term(&self) -> Radial {
        Radial {
            beta: self.beta_zeta,
            e: self.q,
        }
    }

    fn w_term(&self) -> Radial {
        Radial {
            beta: self.beta_w,
            e: self.rho,
        }
    }

    fn eta_term(&self) -> Radial {
        Radial {
            beta: self.beta_eta,
            e: self.ell,
        }
    }
}

impl EnergyModel for PaperEnergy {
    fn name(&self) -> &'static str {
        "paper"
    }

    fn energy(&self, xi: &Ext, eta: f64) -> Result<f64, ModelError> {
        check_eta(eta)?;
        let f2: f64 = xi[0..9].iter().map(|x| x * x).sum();
        let z2: f64 = xi[9..18].iter().map(|x| x * x).sum();
        Ok(f2 * f2
            + f2
            + self.zeta_term().value(z2)
            + self.w_term().value(xi[18] * xi[18])
            + self.eta_term().value(eta * eta)
            + self.delta * eta)
    }

    fn gradient(&self, xi: &Ext, eta: f64) -> Result<(Ext, f64), ModelError> {
        check_eta(eta)?;
        let f2: f64 = xi[0..9].iter().map(|x| x * x).sum();
        let z2: f64 = xi[9..18].iter().map(|x| x * x).sum();
        let mut g = [0.0; EXT_DIM];
        let sf = 4.0 * f2 + 2.0;
        let sz = self.zeta_term().slope(z2);
        for k in 0..9 {
            g[k] = sf * xi[k];
            g[9 + k] = sz * xi[9 + k];
        }
        g[18] = self.w_term().slope(xi[18] * xi[18]) * xi[18];
        let theta = self.eta_term().slope(eta * eta) * eta + self.delta;
        Ok((g, theta))
    }

    fn hess_vec(&self, xi: &Ext, eta: f64, dxi: &Ext, deta: f64) -> Result<(Ext, f64), ModelError> {
        check_eta(eta)?;
        let f2: f64 = xi[0..9].iter().map(|x| x * x).sum();
        let fdf: f64 = (0..9).map(|k| xi[k] * dxi[k]).sum();
        let z2: f64 = xi[9..18].iter().map(|x| x * x).sum();
        let zdz: f64 = (9..18).map(|k| xi[k] * dxi[k]).sum();
        let mut out = [0.0; EXT_DIM];
        // d/dF (4|F|^2 F + 2F) = (4|F|^2 + 2) I + 8 F (x) F
        for k in 0..9 {
            out[k] = (4.0 * f2 + 2.0) * dxi[k] + 8.0 * fdf * xi[k];
        }
        let z = self.zeta_term();
        let (sz, cz) = (z.slope(z2), z.curv(z2));
        for k in 9..18 {
            out[k] = sz * dxi[k] + cz * zdz * xi[k];
        }
        let w = self.w_term();
        let w2 = xi[18] * xi[18];
        out[18] = (w.slope(w2) + w.curv(w2) * w2) * dxi[18];
        let t = self.eta_term();
        let e2 = eta * eta;
        let dtheta = (t.slope(e2) + t.curv(e2) * e2) * deta;
        Ok((out, dtheta))
    }

    fn exponents(&self) -> Exponents {
        Exponents {
            p: 4.0,
            q: self.q,
            rho: self.rho,
            ell: self.ell,
        }
    }

    fn convexity_constant(&self) -> f64 {
        let r = self.convexity_radius;
        // |F|^4 + |F|^2 has Hessian >= 2 I, attained at F = 0.
        2.0_f64
            .min(self.zeta_term().min_eig_on_ball(r, true))
            .min(self.w_term().min_eig_on_ball(r, false))
            .min(self.eta_term().min_eig_on_ball(r, false))
    }

    fn temperature_floor(&self) -> f64 {
        self.delta
    }
}

/// `e = |xi|^2 / 2 + eta^2 / 2 + delta eta`; the step problem becomes a linear SPD system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticEnergy {
    pub delta: f64,
}

impl Default for QuadraticEnergy {
    fn default() -> Self {
        Self { delta: 0.1 }
    }
}

impl EnergyModel for QuadraticEnergy {
    fn name(&self) -> &'static str {
        "quadratic"
    }

    fn energy(&self, xi: &Ext, eta: f64) -> Result<f64, ModelError> {
        check_eta(eta)?;
        let s: f64 = xi.iter().map(|x| x * x).sum();
        Ok(0.5 * s + 0.5 * eta * eta + self.delta * eta)
    }

    fn gradient(&self, xi: &Ext, eta: f64) -> Result<(Ext, f64), ModelError> {
        check_eta(eta)?;
        Ok((*xi, eta + self.delta))
    }

    fn hess_vec(&self, _: &Ext, eta: f64, dxi: &Ext, deta: f64) -> Result<(Ext, f64), ModelError> {
        check_eta(eta)?;
        Ok((*dxi, deta))
    }

    fn exponents(&self) -> Exponents {
        Exponents {
            p: 2.0,
            q: 2.0,
            rho: 2.0,
            ell: 2.0,
        }
    }

    fn convexity_constant(&self) -> f64 {
        1.0
    }

    fn temperature_floor(&self) -> f64 {
        self.delta
    }
}

/// `e = |F|^2 - |zeta|^2 + delta eta`. Not convex; exists to exercise the hypothesis checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonConvexEnergy {
    pub delta: f64,
    /// Convexity constant the model (falsely) claims.
    pub claimed_convexity: f64,
}

impl Default for NonConvexEnergy {
    fn default() -> Self {
        Self {
            delta: 0.1,
            claimed_convexity: 1.0,
        }
    }
}

impl EnergyModel for NonConvexEnergy {
    fn name(&self) -> &'static str {
        "nonconvex"
    }

    fn energy(&self, xi: &Ext, eta: f64) -> Result<f64, ModelError> {
        check_eta(eta)?;
        let f2: f64 = xi[0..9].iter().map(|x| x * x).sum();
        let z2: f64 = xi[9..18].iter().map(|x| x * x).sum();
        Ok(f2 - z2 + self.delta * eta)
    }

    fn gradient(&self, xi: &Ext, eta: f64) -> Result<(Ext, f64), ModelError> {
        check_eta(eta)?;
        let mut g = [0.0; EXT_DIM];
        for k in 0..9 {
            g[k] = 2.0 * xi[k];
            g[9 + k] = -2.0 * xi[9 + k];
        }
        Ok((g, self.delta))
    }

    fn hess_vec(&self, _: &Ext, eta: f64, dxi: &Ext, _: f64) -> Result<(Ext, f64), ModelError> {
        check_eta(eta)?;
        let mut out = [0.0; EXT_DIM];
        for k in 0..9 {
            out[k] = 2.0 * dxi[k];
            out[9 + k] = -2.0 * dxi[9 + k];
        }
        Ok((out, 0.0))
    }

    fn exponents(&self) -> Exponents {
        Exponents {
            p: 2.0,
            q: 2.0,
            rho: 2.0,
            ell: 1.0,
        }
    }

    fn convexity_constant(&self) -> f64 {
        self.claimed_convexity
    }

    fn temperature_floor(&self) -> f64 {
        self.delta
    }
}

/// Serializable choice of model, as stored in run configurations and checkpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelSpec {
    Paper(PaperEnergy),
    Quadratic(QuadraticEnergy),
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::Paper(PaperEnergy::default())
    }
}

impl ModelSpec {
    pub fn model(&self) -> &dyn EnergyModel {
        match self {
            ModelSpec::Paper(m) => m,
            ModelSpec::Quadratic(m) => m,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            ModelSpec::Paper(m) => m.validate(),
            ModelSpec::Quadratic(m) if !(m.delta > 0.0) => Err(ModelError::BadParameter {
                name: "delta",
                value: m.delta,
                reason: "must be positive",
            }),
            ModelSpec::Quadratic(_) => Ok(()),
        }
    }

    /// One-line `key=value` description; floats use round-trip formatting.
    pub fn describe(&self) -> String {
        match self {
            ModelSpec::Paper(m) => format!(
                "paper beta_zeta={:?} beta_w={:?} beta_eta={:?} delta={:?} q={:?} rho={:?} ell={:?} convexity_radius={:?}",
                m.beta_zeta, m.beta_w, m.beta_eta, m.delta, m.q, m.rho, m.ell, m.convexity_radius
            ),
            ModelSpec::Quadratic(m) => format!("quadratic delta={:?}", m.delta),
        }
    }

    pub fn parse(line: &str) -> Result<Self, String> {
        let mut parts = line.split_whitespace();
        let name = parts.next().ok_or("empty model description")?;
        let mut kv = std::collections::BTreeMap::new();
        for item in parts {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| format!("expected key=value, got {item:?}"))?;
            let v: f64 = v
                .parse()
                .map_err(|_| format!("bad number for {k}: {v:?}"))?;
            kv.insert(k.to_string(), v);
        }
        let mut take = |k: &str| kv.remove(k).ok_or_else(|| format!("missing model key {k}"));
        let spec = match name {
            "paper" => ModelSpec::Paper(PaperEnergy {
                beta_zeta: take("beta_zeta")?,
                beta_w: take("beta_w")?,
                beta_eta: take("beta_eta")?,
                delta: take("delta")?,
                q: take("q")?,
                rho: take("rho")?,
                ell: take("ell")?,
                convexity_radius: take("convexity_radius")?,
            }),
            "quadratic" => ModelSpec::Quadratic(QuadraticEnergy {
                delta: take("delta")?,
            }),
            other => return Err(format!("unknown model {other:?}")),
        };
        if let Some(k) = kv.keys().next() {
            return Err(format!("unknown model key {k}"));
        }
        Ok(spec)
    }
}

/// One row of a hypothesis report.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisCheck {
    pub name: &'static str,
    /// Signed margin; negative means the hypothesis is violated on the samples.
    pub margin: f64,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisReport {
    pub model: &'static str,
    pub samples: usize,
    pub checks: Vec<HypothesisCheck>,
}

impl HypothesisReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&HypothesisCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Names of the rows produced by [`check_hypotheses`].
pub mod checks {
    pub const GROWTH_LOWER: &str = "growth lower";
    pub const GROWTH_UPPER: &str = "growth upper";
    pub const TEMPERATURE_SUBLINEAR: &str = "temperature sublinear";
    pub const DUAL_BOUND: &str = "dual growth";
    pub const TEMPERATURE_FLOOR: &str = "theta >= delta";
    pub const CONVEXITY: &str = "hessian >= c_e";
}

/// Magnitude levels `S` for the asymptotic probes; each variable is scaled so its growth term is O(S).
const GROWTH_LEVELS: [f64; 3] = [1e4, 1e8, 1e12];

fn random_unit<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let s = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if s > 1e-3 {
            return v.into_iter().map(|x| x / s).collect();
        }
    }
}

/// A point with `|F| ~ 2`, `|zeta|, |w| ~ 3`, `eta in [0, 3]`.
pub fn bounded_sample<R: Rng>(rng: &mut R) -> (Ext, f64) {
    let mut xi = [0.0; EXT_DIM];
    for (k, x) in xi.iter_mut().enumerate() {
        *x = if k < 9 {
            rng.gen_range(-1.2..1.2)
        } else {
            rng.gen_range(-1.8..1.8)
        };
    }
    (xi, rng.gen_range(0.0..3.0))
}

fn large_sample<R: Rng>(rng: &mut R, level: f64, ex: &Exponents) -> (Ext, f64) {
    let w = [
        rng.gen_range(0.05..1.0),
        rng.gen_range(0.05..1.0),
        rng.gen_range(0.05..1.0),
        rng.gen_range(0.05..1.0),
    ];
    let f = random_unit(rng, 9);
    let z = random_unit(rng, 9);
    let mut xi = [0.0; EXT_DIM];
    let rf = (w[0] * level).powf(1.0 / ex.p);
    let rz = (w[1] * level).powf(1.0 / ex.q);
    for k in 0..9 {
        xi[k] = rf * f[k];
        xi[9 + k] = rz * z[k];
    }
    let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    xi[18] = sign * (w[2] * level).powf(1.0 / ex.rho);
    (xi, (w[3] * level).powf(1.0 / ex.ell))
}

fn levels(xs: &[f64]) -> String {
    xs.iter()
        .map(|x| format!("{x:.3e}"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn block_sq(x: &Ext, r: std::ops::Range<usize>) -> f64 {
    x[r].iter().map(|v| v * v).sum()
}

/// Samples the growth, temperature and convexity hypotheses of `model` at `n` random
/// bounded points and `n` points per asymptotic level, reporting worst margins.
pub fn check_hypotheses(
    model: &dyn EnergyModel,
    n: usize,
    seed: u64,
) -> Result<HypothesisReport, ModelError> {
    assert!(n >= 1, "check_hypotheses needs at least one sample");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ex = model.exponents();
    let delta = model.temperature_floor();
    let c_e = model.convexity_constant();

    let mut lower = Vec::new();
    let mut upper = Vec::new();
    let mut theta_ratio = Vec::new();
    let mut dual = Vec::new();
    let mut theta_min = f64::INFINITY;
    for &level in &GROWTH_LEVELS {
        let (mut lo, mut hi, mut th, mut du) = (f64::INFINITY, 0.0_f64, 0.0_f64, 0.0_f64);
        for _ in 0..n {
            let (xi, eta) = large_sample(&mut rng, level, &ex);
            let g = ex.growth(&xi, eta);
            let e = model.energy(&xi, eta)?;
            let (ge, theta) = model.gradient(&xi, eta)?;
            lo = lo.min(e / g);
            hi = hi.max(e / g);
            th = th.max(theta / g);
            theta_min = theta_min.min(theta);
            let p = ex.p;
            let lhs = block_sq(&ge, 0..9).sqrt().powf(p / (p - 1.0))
                + block_sq(&ge, 9..18).sqrt().powf(p / (p - 2.0))
                + ge[18].abs().powf(p / (p - 3.0));
            du = du.max(lhs / (g + 1.0));
        }
        lower.push(lo);
        upper.push(hi);
        theta_ratio.push(th);
        dual.push(du);
    }

    let mut curvature = f64::INFINITY;
    let mut offset = 0.0_f64;
    let (c_lo, c_hi) = (lower[2], upper[2]);
    for k in 0..n {
        let (xi, mut eta) = bounded_sample(&mut rng);
        if k % 4 == 0 {
            eta = 0.0;
        }
        let e = model.energy(&xi, eta)?;
        let g = ex.growth(&xi, eta);
        offset = offset.max(c_lo * g - e).max(e - c_hi * g);
        theta_min = theta_min.min(model.temperature(&xi, eta)?);
        let d = random_unit(&mut rng, EXT_DIM + 1);
        let mut dxi = [0.0; EXT_DIM];
        dxi.copy_from_slice(&d[..EXT_DIM]);
        let (hx, he) = model.hess_vec(&xi, eta, &dxi, d[EXT_DIM])?;
        let quad: f64 = (0..EXT_DIM).map(|j| hx[j] * dxi[j]).sum::<f64>() + he * d[EXT_DIM];
        curvature = curvature.min(quad);
    }

    // A bounded ratio may drift by sampling noise between levels but not by powers of 1e4.
    let bounded = |r: &[f64]| r.iter().all(|x| x.is_finite()) && r[2] <= 2.0 * r[1];
    let checks = vec![
        HypothesisCheck {
            name: checks::GROWTH_LOWER,
            margin: c_lo,
            passed: c_lo > 0.0 && lower[2] >= 0.5 * lower[1],
            detail: format!(
                "min e/G per level [{}]; offset needed {offset:.3e}",
                levels(&lower)
            ),
        },
        HypothesisCheck {
            name: checks::GROWTH_UPPER,
            margin: 1.0 / c_hi,
            passed: bounded(&upper) && offset.is_finite(),
            detail: format!("max e/G per level [{}]", levels(&upper)),
        },
        HypothesisCheck {
            name: checks::TEMPERATURE_SUBLINEAR,
            margin: 1.0 - theta_ratio[2],
            passed: theta_ratio[2] < 1.0 && theta_ratio[2] <= 0.5 * theta_ratio[1],
            detail: format!("max theta/G per level [{}]", levels(&theta_ratio)),
        },
        HypothesisCheck {
            name: checks::DUAL_BOUND,
            margin: 2.0 - dual[2] / dual[1],
            passed: bounded(&dual),
            detail: format!("max dual/(G+1) per level [{}]", levels(&dual)),
        },
        HypothesisCheck {
            name: checks::TEMPERATURE_FLOOR,
            margin: theta_min - delta,
            passed: theta_min >= delta * (1.0 - 1e-14),
            detail: format!("min theta {theta_min:e}, delta {delta:e}"),
        },
        HypothesisCheck {
            name: checks::CONVEXITY,
            margin: curvature - c_e,
            passed: curvature >= c_e * (1.0 - 1e-12),
            detail: format!("min sampled curvature {curvature:e}, c_e {c_e:e}"),
        },
    ];
    Ok(HypothesisReport {
        model: model.name(),
        samples: n,
        checks,
    })
}

/// Worst errors of the derivative consistency checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivativeReport {
    /// `max |fd - grad|_inf / max(|grad|_inf, 1)` over points.
    pub gradient_rel_err: f64,
    /// Same for the Hessian action against finite differences of the gradient.
    pub hessian_rel_err: f64,
    /// `max |<H d1, d2> - <H d2, d1>| / max(|<H d1, d2>|, 1)`.
    pub symmetry_rel_err: f64,
}

/// Central-difference checks of `gradient` and `hess_vec` at `n` random points, step `1e-5`.
pub fn check_derivatives(
    model: &dyn EnergyModel,
    n: usize,
    seed: u64,
) -> Result<DerivativeReport, ModelError> {
    const STEP: f64 = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = DerivativeReport {
        gradient_rel_err: 0.0,
        hessian_rel_err: 0.0,
        symmetry_rel_err: 0.0,
    };
    for _ in 0..n {
        let (xi, eta) = bounded_sample(&mut rng);
        // Keep eta +- STEP inside the domain.
        let eta = eta + 2.0 * STEP;
        let (g, theta) = model.gradient(&xi, eta)?;
        let scale = g.iter().fold(theta.abs(), |m, x| m.max(x.abs())).max(1.0);
        let mut worst: f64 = 0.0;
        for k in 0..=EXT_DIM {
            let (mut up, mut down) = (xi, xi);
            let (mut eu, mut ed) = (eta, eta);
            if k < EXT_DIM {
                up[k] += STEP;
                down[k] -= STEP;
            } else {
                eu += STEP;
                ed -= STEP;
            }
            let fd = (model.energy(&up, eu)? - model.energy(&down, ed)?) / (2.0 * STEP);
            let exact = if k < EXT_DIM { g[k] } else { theta };
            worst = worst.max((fd - exact).abs());
        }
        report.gradient_rel_err = report.gradient_rel_err.max(worst / scale);

        let d = random_unit(&mut rng, EXT_DIM + 1);
        let mut dxi = [0.0; EXT_DIM];
        dxi.copy_from_slice(&d[..EXT_DIM]);
        let deta = d[EXT_DIM];
        let (hx, he) = model.hess_vec(&xi, eta, &dxi, deta)?;
        let shifted = |s: f64| {
            let mut x = xi;
            for j in 0..EXT_DIM {
                x[j] += s * dxi[j];
            }
            model.gradient(&x, eta + s * deta)
        };
        let (gu, tu) = shifted(STEP)?;
        let (gd, td) = shifted(-STEP)?;
        let hscale = hx.iter().fold(he.abs(), |m, x| m.max(x.abs())).max(1.0);
        let mut herr = ((tu - td) / (2.0 * STEP) - he).abs();
        for j in 0..EXT_DIM {
            herr = herr.max(((gu[j] - gd[j]) / (2.0 * STEP) - hx[j]).abs());
        }
        report.hessian_rel_err = report.hessian_rel_err.max(herr / hscale);

        let d2 = random_unit(&mut rng, EXT_DIM + 1);
        let mut dxi2 = [0.0; EXT_DIM];
        dxi2.copy_from_slice(&d2[..EXT_DIM]);
        let (hx2, he2) = model.hess_vec(&xi, eta, &dxi2, d2[EXT_DIM])?;
        let a: f64 = (0..EXT_DIM).map(|j| hx[j] * dxi2[j]).sum::<f64>() + he * d2[EXT_DIM];
        let b: f64 = (0..EXT_DIM).map(|j| hx2[j] * dxi[j]).sum::<f64>() + he2 * deta;
        report.symmetry_rel_err = report
            .symmetry_rel_err
            .max((a - b).abs() / a.abs().max(1.0));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nulllag::{phi, IDENTITY};

    #[test]
    fn paper_energy_at_identity() {
        let m = PaperEnergy::default();
        let e = m.energy(&phi(&IDENTITY), 0.0).unwrap();
        assert!((e - 19.0).abs() < 1e-14);
    }

    #[test]
    fn temperature_at_zero_entropy_is_floor() {
        let m = PaperEnergy::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let (xi, _) = bounded_sample(&mut rng);
            assert_eq!(m.temperature(&xi, 0.0).unwrap(), 0.1);
        }
        let t = m.temperature(&phi(&IDENTITY), 1.0).unwrap();
        assert!((t - 2.1).abs() < 1e-15);
    }

    #[test]
    fn negative_entropy_is_rejected() {
        let m = PaperEnergy::default();
        let xi = phi(&IDENTITY);
        assert_eq!(
            m.energy(&xi, -1e-3),
            Err(ModelError::NegativeEntropy(-1e-3))
        );
        assert!(m.gradient(&xi, -1.0).is_err());
        assert!(m.hess_vec(&xi, -1.0, &xi, 0.0).is_err());
    }

    #[test]
    fn parameter_ranges() {
        let bad = PaperEnergy {
            ell: 1.0,
            ..Default::default()
        };
        assert!(matches!(
            bad.validate(),
            Err(ModelError::BadParameter { name: "ell", .. })
        ));
        let bad_q = PaperEnergy {
            q: 1.5,
            ..Default::default()
        };
        assert!(bad_q.validate().is_err());
        assert!(PaperEnergy::default().validate().is_ok());
    }

    #[test]
    fn convexity_constant_defaults_and_small_exponents() {
        assert_eq!(PaperEnergy::default().convexity_constant(), 2.0);
        let soft = PaperEnergy {
            rho: 1.5,
            ..Default::default()
        };
        let c = soft.convexity_constant();
        assert!(c > 0.0 && c < 2.0);
        // The bound is attained at the edge of the certified ball.
        let r = soft.convexity_radius;
        let mut xi = [0.0; EXT_DIM];
        xi[18] = r;
        let mut d = [0.0; EXT_DIM];
        d[18] = 1.0;
        let (hx, _) = soft.hess_vec(&xi, 0.0, &d, 0.0).unwrap();
        assert!((hx[18] - c).abs() < 1e-12);
    }

    #[test]
    fn derivatives_are_consistent() {
        for spec in [
            ModelSpec::Paper(PaperEnergy::default()),
            ModelSpec::Paper(PaperEnergy {
                q: 3.0,
                rho: 1.3,
                ell: 1.5,
                beta_zeta: 0.5,
                ..Default::default()
            }),
            ModelSpec::Quadratic(QuadraticEnergy::default()),
        ] {
            let r = check_derivatives(spec.model(), 100, 42).unwrap();
            assert!(r.gradient_rel_err <= 1e-6, "{spec:?}: {r:?}");
            assert!(r.hessian_rel_err <= 1e-6, "{spec:?}: {r:?}");
            assert!(r.symmetry_rel_err <= 1e-10, "{spec:?}: {r:?}");
        }
    }

    #[test]
    fn midpoint_convexity_with_margin() {
        let m = PaperEnergy::default();
        let c_e = m.convexity_constant();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let (a, ea) = bounded_sample(&mut rng);
            let (b, eb) = bounded_sample(&mut rng);
            let mut mid = [0.0; EXT_DIM];
            let mut dist2 = (ea - eb).powi(2);
            for k in 0..EXT_DIM {
                mid[k] = 0.5 * (a[k] + b[k]);
                dist2 += (a[k] - b[k]).powi(2);
            }
            let lhs = m.energy(&mid, 0.5 * (ea + eb)).unwrap();
            let rhs = 0.5 * (m.energy(&a, ea).unwrap() + m.energy(&b, eb).unwrap());
            assert!(lhs <= rhs - c_e * dist2 / 8.0 + 1e-12 * rhs.abs());
        }
    }

    #[test]
    fn hypotheses_for_default_energy() {
        let r = check_hypotheses(&PaperEnergy::default(), 200, 1).unwrap();
        for name in [
            checks::GROWTH_LOWER,
            checks::GROWTH_UPPER,
            checks::TEMPERATURE_SUBLINEAR,
            checks::TEMPERATURE_FLOOR,
            checks::CONVEXITY,
        ] {
            let c = r.get(name).unwrap();
            assert!(c.passed && c.margin >= 0.0, "{c:?}");
        }
        let floor = r.get(checks::TEMPERATURE_FLOOR).unwrap();
        assert_eq!(floor.margin, 0.0);
    }

    /// With rho = 2 the w-derivative term |2w|^4 outgrows |w|^2; the bound needs rho <= 4/3.
    #[test]
    fn dual_bound_depends_on_rho() {
        let r = check_hypotheses(&PaperEnergy::default(), 200, 2).unwrap();
        assert!(!r.get(checks::DUAL_BOUND).unwrap().passed);
        let soft = PaperEnergy {
            rho: 4.0 / 3.0,
            ..Default::default()
        };
        let r = check_hypotheses(&soft, 200, 2).unwrap();
        assert!(r.get(checks::DUAL_BOUND).unwrap().passed, "{r:?}");
    }

    #[test]
    fn nonconvex_model_fails_convexity() {
        let r = check_hypotheses(&NonConvexEnergy::default(), 100, 3).unwrap();
        let c = r.get(checks::CONVEXITY).unwrap();
        assert!(!c.passed && c.margin < 0.0);
    }

    #[test]
    fn model_spec_round_trip() {
        for spec in [
            ModelSpec::Paper(PaperEnergy {
                beta_zeta: 0.1 + 0.2,
                ..Default::default()
            }),
            ModelSpec::Quadratic(QuadraticEnergy { delta: 0.25 }),
        ] {
            assert_eq!(ModelSpec::parse(&spec.describe()).unwrap(), spec);
        }
        assert!(ModelSpec::parse("paper delta=1").is_err());
        assert!(ModelSpec::parse("quadratic delta=1 extra=2").is_err());
    }
}
