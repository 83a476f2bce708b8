//! Pointwise probes of the relative-entropy bounds.
//!
//! Each probe is the ratio of one left-hand side to `I(U | Ubar)` at sample pairs with
//! `Ubar` in the bounded set `|Fbar|, |vbar|, |etabar| <= M`. A bound with a finite
//! constant shows up as a maximum that stops growing when more samples are drawn.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::constitutive::EnergyModel;
use crate::error::DiagnosticsError;
use crate::nulllag::{dphi_apply, frobenius, phi, Ext, Mat3, EXT_DIM};
use crate::varstep::relative_density;

/// One pair `(F, v, eta)` against a reference `(Fbar, vbar, etabar)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeSample {
    pub f: Mat3,
    pub v: [f64; 3],
    pub eta: f64,
    pub f_ref: Mat3,
    pub v_ref: [f64; 3],
    pub eta_ref: f64,
}

impl ProbeSample {
    fn coincident(&self) -> bool {
        self.f == self.f_ref && self.v == self.v_ref && self.eta == self.eta_ref
    }
}

pub mod names {
    /// `(|F|^p + eta^l + |v|^2) / I` where that sum exceeds `R`.
    pub const COERCIVITY_LARGE: &str = "coercivity.large";
    /// `(|Phi(F) - Phi(Fbar)|^2 + |eta - etabar|^2 + |v - vbar|^2) / I` where it is at most `R`.
    pub const COERCIVITY_SMALL: &str = "coercivity.small";
    /// `(|F - Fbar|^p + |eta - etabar|^l + |v - vbar|^2) / I` where the sum exceeds `R`.
    pub const DISTANCE_LARGE: &str = "distance.large";
    /// `|(dPhi(F) - dPhi(Fbar)) : (e_xi - ebar_xi)| / I`.
    pub const STRESS_PAIRING: &str = "stress_pairing";
    /// `|e_xi(.|.)| / I`.
    pub const RELATIVE_STRESS: &str = "relative_stress";
    /// `|theta(.|.)| / I`.
    pub const RELATIVE_TEMPERATURE: &str = "relative_temperature";
    /// `|(dPhi(F) - dPhi(Fbar)) (v - vbar)| / I`.
    pub const VELOCITY_PAIRING: &str = "velocity_pairing";
    /// `|(1/theta - 1/thetabar)(theta - thetabar)| / I`.
    pub const TEMPERATURE_RATIO: &str = "temperature_ratio";

    pub const ALL: [&str; 8] = [
        COERCIVITY_LARGE,
        COERCIVITY_SMALL,
        DISTANCE_LARGE,
        STRESS_PAIRING,
        RELATIVE_STRESS,
        RELATIVE_TEMPERATURE,
        VELOCITY_PAIRING,
        TEMPERATURE_RATIO,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeRatio {
    pub name: &'static str,
    /// Largest ratio seen; 0 when `count == 0`.
    pub max: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub ratios: Vec<ProbeRatio>,
    pub evaluated: usize,
    /// Samples with `U = Ubar` exactly, where every ratio is `0/0`.
    pub excluded: usize,
    /// Distinct pairs whose `I` is below [`RESOLUTION`] times their energies.
    pub unresolved: usize,
    pub radius: f64,
}

impl ProbeReport {
    pub fn get(&self, name: &str) -> Option<&ProbeRatio> {
        self.ratios.iter().find(|r| r.name == name)
    }

    pub fn all_finite(&self) -> bool {
        self.ratios.iter().all(|r| r.max.is_finite())
    }
}

/// `R = 4 (M^p + M^l + M^2)`: the large-value region starts well outside the reference set.
pub fn default_radius(model: &dyn EnergyModel, m: f64) -> f64 {
    let ex = model.exponents();
    4.0 * (m.powf(ex.p) + m.powf(ex.ell) + m * m)
}

fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|a| a * a).sum()
}

fn diff<const N: usize>(a: &[f64; N], b: &[f64; N]) -> [f64; N] {
    std::array::from_fn(|k| a[k] - b[k])
}

fn flat(m: &Mat3) -> [f64; 9] {
    std::array::from_fn(|k| m[k / 3][k % 3])
}

/// `dPhi^B/dF_{ia}(F)` as `[i][B][a]`.
fn dphi(f: &Mat3) -> [[[f64; 3]; EXT_DIM]; 3] {
    std::array::from_fn(|i| {
        let mut e = [0.0; 3];
        e[i] = 1.0;
        dphi_apply(f, &e)
    })
}

fn check_reference(s: &ProbeSample, m: f64, sample: usize) -> Result<(), DiagnosticsError> {
    let values = [
        frobenius(&s.f_ref),
        norm_sq(&s.v_ref).sqrt(),
        s.eta_ref.abs(),
    ];
    match values.iter().find(|&&x| !(x <= m)) {
        Some(&value) => Err(DiagnosticsError::ProbeOutsideBound {
            bound: m,
            value,
            sample,
        }),
        None => Ok(()),
    }
}

/// `I` below this fraction of the energies at the pair is not resolved in floating point.
pub const RESOLUTION: f64 = 1e4 * f64::EPSILON;

/// Left-hand sides at one sample, in the order of [`names::ALL`], with `None` where the
/// region does not apply; and `I`. `None` overall when `I` is unresolved.
fn evaluate(
    model: &dyn EnergyModel,
    s: &ProbeSample,
    radius: f64,
) -> Result<Option<([Option<f64>; 8], f64)>, DiagnosticsError> {
    let ex = model.exponents();
    let (xi, xib) = (phi(&s.f), phi(&s.f_ref));
    let dv = diff(&s.v, &s.v_ref);
    let dxi: Ext = diff(&xi, &xib);
    let deta = s.eta - s.eta_ref;
    let rel = 0.5 * norm_sq(&dv) + relative_density(model, &xi, s.eta, &xib, s.eta_ref)?;
    let size_scale = model.energy(&xi, s.eta)?.abs()
        + model.energy(&xib, s.eta_ref)?.abs()
        + norm_sq(&s.v)
        + norm_sq(&s.v_ref);
    if rel.abs() <= RESOLUTION * size_scale {
        return Ok(None);
    }

    let (g, theta) = model.gradient(&xi, s.eta)?;
    let (gb, thetab) = model.gradient(&xib, s.eta_ref)?;
    let (hx, he) = model.hess_vec(&xib, s.eta_ref, &dxi, deta)?;
    let dg: Ext = diff(&g, &gb);
    // Numerators that vanish identically for some models are cleaned of their roundoff.
    let clean = |d: f64, scale: f64| (d.abs() - 8.0 * f64::EPSILON * scale).max(0.0);
    let rel_stress = (0..EXT_DIM)
        .map(|b| clean(dg[b] - hx[b], g[b].abs() + gb[b].abs() + hx[b].abs()).powi(2))
        .sum::<f64>()
        .sqrt();
    let rel_theta = clean(theta - thetab - he, theta.abs() + thetab.abs() + he.abs());

    let (d, db) = (dphi(&s.f), dphi(&s.f_ref));
    let mut stress = [[0.0; 3]; 3];
    let mut velocity = [[0.0; 3]; EXT_DIM];
    for i in 0..3 {
        for b in 0..EXT_DIM {
            for a in 0..3 {
                let dd = d[i][b][a] - db[i][b][a];
                stress[i][a] += dd * dg[b];
                velocity[b][a] += dd * dv[i];
            }
        }
    }
    let stress = frobenius(&stress);
    let velocity = norm_sq(&velocity.concat()).sqrt();
    let temp_ratio = ((1.0 / theta - 1.0 / thetab) * (theta - thetab)).abs();

    let size = frobenius(&s.f).powf(ex.p) + s.eta.abs().powf(ex.ell) + norm_sq(&s.v);
    let large = size > radius;
    let df = norm_sq(&diff(&flat(&s.f), &flat(&s.f_ref))).sqrt();
    let distance = df.powf(ex.p) + deta.abs().powf(ex.ell) + norm_sq(&dv);
    let small = norm_sq(&dxi) + deta * deta + norm_sq(&dv);
    Ok(Some((
        [
            large.then_some(size),
            (!large).then_some(small),
            large.then_some(distance),
            Some(stress),
            Some(rel_stress),
            Some(rel_theta),
            Some(velocity),
            Some(temp_ratio),
        ],
        rel,
    )))
}

/// Every ratio at one distinct pair; `None` when `I` is unresolved, infinite when `I < 0`.
fn ratios_at(
    model: &dyn EnergyModel,
    s: &ProbeSample,
    radius: f64,
) -> Result<Option<[Option<f64>; 8]>, DiagnosticsError> {
    Ok(evaluate(model, s, radius)?
        .map(|(lhs, rel)| lhs.map(|x| x.map(|x| if rel > 0.0 { x / rel } else { f64::INFINITY }))))
}

/// Maximum ratio of each bound over `samples`. Coincident pairs are excluded and pairs
/// with unresolved `I` are counted separately. A negative `I` gives infinite ratios.
pub fn bound_probes(
    samples: &[ProbeSample],
    model: &dyn EnergyModel,
    m: f64,
    radius: f64,
) -> Result<ProbeReport, DiagnosticsError> {
    let mut ratios: Vec<ProbeRatio> = names::ALL
        .iter()
        .map(|&name| ProbeRatio {
            name,
            max: 0.0,
            count: 0,
        })
        .collect();
    let mut excluded = 0;
    let mut unresolved = 0;
    for (k, s) in samples.iter().enumerate() {
        check_reference(s, m, k)?;
        if s.coincident() {
            excluded += 1;
            continue;
        }
        let Some(qs) = ratios_at(model, s, radius)? else {
            unresolved += 1;
            continue;
        };
        for (r, q) in ratios.iter_mut().zip(qs) {
            if let Some(q) = q {
                // NaN propagates as a failure rather than being dropped by `max`.
                r.max = if q.is_nan() || r.max.is_nan() {
                    f64::NAN
                } else {
                    r.max.max(q)
                };
                r.count += 1;
            }
        }
    }
    Ok(ProbeReport {
        ratios,
        evaluated: samples.len() - excluded - unresolved,
        excluded,
        unresolved,
        radius,
    })
}

fn reference<R: Rng>(rng: &mut R, m: f64) -> (Mat3, [f64; 3], f64) {
    let f = std::array::from_fn(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0) * m / 3.0));
    let v = std::array::from_fn(|_| rng.gen_range(-1.0..1.0) * m / 3f64.sqrt());
    (f, v, rng.gen_range(0.0..m))
}

/// `n` deterministic sample pairs: the first is coincident, the rest cycle through small
/// perturbations (`10^-3..10^-1`), moderate values, large values (`10..10^2`) and pairs
/// large in a single variable.
pub fn probe_samples(n: usize, m: f64, seed: u64) -> Vec<ProbeSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|k| {
            let (f_ref, v_ref, eta_ref) = reference(&mut rng, m);
            let mut s = ProbeSample {
                f: f_ref,
                v: v_ref,
                eta: eta_ref,
                f_ref,
                v_ref,
                eta_ref,
            };
            if k == 0 {
                return s;
            }
            let mut unit = |scale: f64| rng.gen_range(-1.0..1.0) * scale;
            match k % 4 {
                1 => {
                    let eps = 10f64.powf(-unit(1.0).abs() * 2.0 - 1.0);
                    s.f = std::array::from_fn(|i| std::array::from_fn(|j| f_ref[i][j] + unit(eps)));
                    s.v = std::array::from_fn(|i| v_ref[i] + unit(eps));
                    s.eta = (eta_ref + unit(eps)).abs();
                }
                2 => {
                    s.f = std::array::from_fn(|_| std::array::from_fn(|_| unit(2.0 * m)));
                    s.v = std::array::from_fn(|_| unit(2.0 * m));
                    s.eta = unit(2.0 * m).abs();
                }
                3 => {
                    let level = 10f64.powf(1.0 + unit(1.0).abs());
                    s.f = std::array::from_fn(|_| std::array::from_fn(|_| unit(level)));
                    s.v = std::array::from_fn(|_| unit(level));
                    s.eta = unit(level).abs();
                }
                _ => {
                    let level = 10f64.powf(1.0 + unit(1.0).abs());
                    match (unit(1.0).abs() * 3.0) as usize {
                        0 => s.f = std::array::from_fn(|_| std::array::from_fn(|_| unit(level))),
                        1 => s.v = std::array::from_fn(|_| unit(level)),
                        _ => s.eta = unit(level).abs(),
                    }
                }
            }
            s
        })
        .collect()
}

/// Random-search ascent of ratio `which` from `start`, keeping the reference in the
/// bounded set and `eta >= 0`. Each trial either jitters one block or rescales one of the
/// differences `F - Fbar`, `v - vbar`, `eta - etabar`; the step adapts to the acceptance
/// rate. Returns the largest ratio met, `start` included.
fn ascend<R: Rng>(
    model: &dyn EnergyModel,
    start: &ProbeSample,
    which: usize,
    m: f64,
    radius: f64,
    iters: usize,
    rng: &mut R,
) -> Result<f64, DiagnosticsError> {
    let mut best = *start;
    let mut value = ratios_at(model, start, radius)?
        .and_then(|r| r[which])
        .unwrap_or(0.0);
    let mut step: f64 = 0.3;
    for _ in 0..iters {
        if !value.is_finite() {
            break;
        }
        let mut c = best;
        let kind = rng.gen_range(0..9);
        let mut jitter = |x: f64| x + step * (x.abs() + 0.1) * rng.gen_range(-1.0..1.0);
        match kind {
            0 => c.f = c.f.map(|row| row.map(&mut jitter)),
            1 => c.v = c.v.map(&mut jitter),
            2 => c.eta = jitter(c.eta).abs(),
            3 => c.f_ref = c.f_ref.map(|row| row.map(&mut jitter)),
            4 => c.v_ref = c.v_ref.map(&mut jitter),
            5 => c.eta_ref = jitter(c.eta_ref).abs().min(m),
            k => {
                let s = (1.0 + step * rng.gen_range(-1.0..1.0)).max(0.0);
                match k {
                    6 => {
                        for (row, rb) in c.f.iter_mut().zip(&c.f_ref) {
                            for (x, xb) in row.iter_mut().zip(rb) {
                                *x = xb + s * (*x - xb);
                            }
                        }
                    }
                    7 => {
                        for (x, xb) in c.v.iter_mut().zip(&c.v_ref) {
                            *x = xb + s * (*x - xb);
                        }
                    }
                    _ => c.eta = (c.eta_ref + s * (c.eta - c.eta_ref)).abs(),
                }
            }
        }
        let nf = frobenius(&c.f_ref);
        if nf > m {
            c.f_ref = c.f_ref.map(|row| row.map(|x| x * m / nf));
        }
        let nv = norm_sq(&c.v_ref).sqrt();
        if nv > m {
            c.v_ref = c.v_ref.map(|x| x * m / nv);
        }
        let q = if c.coincident() {
            None
        } else {
            ratios_at(model, &c, radius)?.and_then(|r| r[which])
        };
        match q {
            Some(q) if !(q <= value) => {
                best = c;
                value = q;
                step = (step * 1.5).min(1.0);
            }
            _ => step = (step * 0.9).max(1e-6),
        }
    }
    Ok(value)
}

/// Largest ratio of each bound after ascending from the `starts` best samples.
pub fn refined_maxima(
    samples: &[ProbeSample],
    model: &dyn EnergyModel,
    m: f64,
    radius: f64,
    starts: usize,
    iters: usize,
    seed: u64,
) -> Result<Vec<f64>, DiagnosticsError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scored: Vec<[Option<f64>; 8]> = Vec::with_capacity(samples.len());
    for (k, s) in samples.iter().enumerate() {
        check_reference(s, m, k)?;
        scored.push(if s.coincident() {
            [None; 8]
        } else {
            ratios_at(model, s, radius)?.unwrap_or([None; 8])
        });
    }
    (0..names::ALL.len())
        .map(|which| {
            let mut idx: Vec<(usize, f64)> = scored
                .iter()
                .enumerate()
                .filter_map(|(k, r)| r[which].map(|q| (k, q)))
                .collect();
            idx.sort_by(|a, b| b.1.total_cmp(&a.1));
            let mut best: f64 = 0.0;
            for &(k, q) in idx.iter().take(starts) {
                if !q.is_finite() {
                    return Ok(q);
                }
                let r = ascend(model, &samples[k], which, m, radius, iters, &mut rng)?;
                if !r.is_finite() {
                    return Ok(r);
                }
                best = best.max(r);
            }
            Ok(best)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeStability {
    /// Over the first `n` samples.
    pub half: ProbeReport,
    /// Over all `2n` samples.
    pub full: ProbeReport,
    /// [`refined_maxima`] from the first `n` samples, ordered as [`names::ALL`].
    pub refined_half: Vec<f64>,
    /// [`refined_maxima`] from all `2n` samples.
    pub refined_full: Vec<f64>,
    pub passed: bool,
}

/// Starting points and steps of the ascent used by [`probe_stability`].
pub const ASCENT_STARTS: usize = 4;
pub const ASCENT_ITERS: usize = 2000;

/// Runs the probes on `n` and `2n` samples of one sequence, each followed by a local
/// ascent. Passes when every maximum is finite, every bound saw samples, and no
/// refined maximum more than doubles.
pub fn probe_stability(
    model: &dyn EnergyModel,
    n: usize,
    m: f64,
    seed: u64,
) -> Result<ProbeStability, DiagnosticsError> {
    let samples = probe_samples(2 * n, m, seed);
    let radius = default_radius(model, m);
    let half = bound_probes(&samples[..n], model, m, radius)?;
    let full = bound_probes(&samples, model, m, radius)?;
    let refine = |s: &[ProbeSample]| {
        refined_maxima(
            s,
            model,
            m,
            radius,
            ASCENT_STARTS,
            ASCENT_ITERS,
            seed ^ 0x5eed,
        )
    };
    let refined_half = refine(&samples[..n])?;
    let refined_full = refine(&samples)?;
    let finite = |xs: &[f64]| xs.iter().all(|x| x.is_finite());
    let passed = half.all_finite()
        && full.all_finite()
        && finite(&refined_half)
        && finite(&refined_full)
        && half.ratios.iter().all(|r| r.count > 0)
        && refined_half
            .iter()
            .zip(&refined_full)
            .all(|(a, b)| *b <= 2.0 * a);
    Ok(ProbeStability {
        half,
        full,
        refined_half,
        refined_full,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constitutive::{NonConvexEnergy, PaperEnergy, QuadraticEnergy};
    use crate::nulllag::IDENTITY;

    fn pair(f: Mat3, v: [f64; 3], eta: f64) -> ProbeSample {
        ProbeSample {
            f,
            v,
            eta,
            f_ref: IDENTITY,
            v_ref: [0.0; 3],
            eta_ref: 1.0,
        }
    }

    #[test]
    fn coincident_sample_is_excluded() {
        let s = pair(IDENTITY, [0.0; 3], 1.0);
        let r = bound_probes(&[s], &PaperEnergy::default(), 3.0, 100.0).unwrap();
        assert_eq!((r.excluded, r.evaluated), (1, 0));
        assert!(r.ratios.iter().all(|x| x.count == 0 && x.max == 0.0));
    }

    #[test]
    fn quadratic_coercivity_is_two() {
        // I = |dU|^2 / 2 exactly for the quadratic model.
        let mut f = IDENTITY;
        f[0][1] = 0.3;
        f[2][2] = 1.4;
        let s = pair(f, [0.1, -0.2, 0.05], 1.3);
        let r = bound_probes(&[s], &QuadraticEnergy::default(), 3.0, 1e6).unwrap();
        let c = r.get(names::COERCIVITY_SMALL).unwrap();
        assert_eq!(c.count, 1);
        assert!((c.max - 2.0).abs() < 1e-12);
        assert!(r.get(names::RELATIVE_STRESS).unwrap().max < 1e-12);
        assert!(r.get(names::RELATIVE_TEMPERATURE).unwrap().max < 1e-12);
    }

    #[test]
    fn small_perturbations_converge() {
        let model = PaperEnergy::default();
        let dir: Mat3 = [[0.3, -0.1, 0.2], [0.0, 0.5, -0.4], [0.1, 0.2, 0.3]];
        let at = |eps: f64| {
            let f =
                std::array::from_fn(|i| std::array::from_fn(|j| IDENTITY[i][j] + eps * dir[i][j]));
            let s = pair(f, [eps, 0.0, -eps], 1.0 + eps);
            bound_probes(&[s], &model, 3.0, 1e6).unwrap()
        };
        let (a, b) = (at(1e-3), at(1e-4));
        for name in [
            names::COERCIVITY_SMALL,
            names::STRESS_PAIRING,
            names::VELOCITY_PAIRING,
        ] {
            let (x, y) = (a.get(name).unwrap().max, b.get(name).unwrap().max);
            assert!(x.is_finite() && x > 0.0);
            assert!((x - y).abs() <= 1e-2 * x, "{name}: {x} vs {y}");
        }
    }

    #[test]
    fn reference_outside_set_is_rejected() {
        let mut s = pair(IDENTITY, [0.0; 3], 2.0);
        s.eta_ref = 4.0;
        assert!(matches!(
            bound_probes(&[s], &PaperEnergy::default(), 3.0, 100.0),
            Err(DiagnosticsError::ProbeOutsideBound { sample: 0, .. })
        ));
    }

    #[test]
    fn large_values_satisfy_coercivity() {
        let model = PaperEnergy::default();
        let samples = probe_samples(400, 3.0, 7);
        let r = bound_probes(&samples, &model, 3.0, default_radius(&model, 3.0)).unwrap();
        assert_eq!(r.excluded, 1);
        assert!(r.get(names::COERCIVITY_LARGE).unwrap().count > 50);
        assert!(r.all_finite());
    }

    #[test]
    fn stability_passes_for_defaults_and_fails_without_convexity() {
        let s = probe_stability(&PaperEnergy::default(), 200, 3.0, 3).unwrap();
        assert!(s.passed, "{s:?}");
        // The temperature ratio peaks at 4 / delta^2 where theta = delta on both sides.
        let k = names::ALL
            .iter()
            .position(|&n| n == names::TEMPERATURE_RATIO)
            .unwrap();
        assert!(s.refined_full[k] <= 400.0 * (1.0 + 1e-9));
        let bad = probe_stability(&NonConvexEnergy::default(), 200, 3.0, 3).unwrap();
        assert!(!bad.passed);
    }
}
