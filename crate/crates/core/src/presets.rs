//! Initial data and heat supply presets.

use std::f64::consts::PI;

use crate::error::GridError;
use crate::grid::{GridSpec, ScalarField, VectorField};
use crate::nulllag::{det, mat_from_slice, COF_OFFSET};
use crate::varstep::State;

/// Parameters of the smooth wave `u_i = a (sin th_{i+1} + m sin(th_i + th_{i+2}))`,
/// `v_i = b (cos th_{i+2} + m sin(th_i + th_{i+1}))` with `th_j = 2 pi k x_j / L_j`.
///
/// The mixed terms make `cof(grad u)` and `cof(grad v)` nonzero; pure plane waves
/// would leave the cofactor transport trivially exact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveParams {
    pub amplitude: f64,
    pub velocity: f64,
    pub mix: f64,
    pub wavenumber: f64,
    pub eta: f64,
}

impl Default for WaveParams {
    fn default() -> Self {
        Self {
            amplitude: 0.02,
            velocity: 0.1,
            mix: 0.5,
            wavenumber: 1.0,
            eta: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialData {
    /// `y = x`, `v = 0`, constant entropy.
    Equilibrium {
        eta: f64,
    },
    SmoothWave(WaveParams),
    /// Smooth wave with `zeta0 = cof F0 + eps I`.
    OffsetDrift {
        wave: WaveParams,
        offset: f64,
    },
}

impl Default for InitialData {
    fn default() -> Self {
        InitialData::SmoothWave(WaveParams::default())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PresetError {
    #[error(
        "wave amplitude {amplitude} gives det F = {det} <= 0 at node {node}; reduce the amplitude"
    )]
    Inverted {
        amplitude: f64,
        node: usize,
        det: f64,
    },
    #[error("initial entropy must be nonnegative, got {0}")]
    NegativeEntropy(f64),
    #[error(transparent)]
    Grid(#[from] GridError),
}

fn phases(grid: &GridSpec, x: [f64; 3], k: f64) -> [f64; 3] {
    let l = grid.lengths();
    [0, 1, 2].map(|a| 2.0 * PI * k * x[a] / l[a])
}

fn wave_state(grid: GridSpec, w: &WaveParams) -> Result<State, PresetError> {
    if !(w.eta >= 0.0) {
        return Err(PresetError::NegativeEntropy(w.eta));
    }
    let u = VectorField::from_fn(grid, |x| {
        let th = phases(&grid, x, w.wavenumber);
        [0, 1, 2].map(|i| {
            w.amplitude * ((th[(i + 1) % 3]).sin() + w.mix * (th[i] + th[(i + 2) % 3]).sin())
        })
    });
    let v = VectorField::from_fn(grid, |x| {
        let th = phases(&grid, x, w.wavenumber);
        [0, 1, 2].map(|i| {
            w.velocity * ((th[(i + 2) % 3]).cos() + w.mix * (th[i] + th[(i + 1) % 3]).sin())
        })
    });
    let state = State::consistent(0.0, u, v, ScalarField::constant(grid, [w.eta]))?;
    for p in 0..grid.num_points() {
        let d = det(&mat_from_slice(&state.xi.point(p)[0..9]));
        if !(d > 0.0) {
            return Err(PresetError::Inverted {
                amplitude: w.amplitude,
                node: p,
                det: d,
            });
        }
    }
    Ok(state)
}

impl InitialData {
    pub fn build(&self, grid: GridSpec) -> Result<State, PresetError> {
        match self {
            InitialData::Equilibrium { eta } => {
                if !(*eta >= 0.0) {
                    return Err(PresetError::NegativeEntropy(*eta));
                }
                Ok(State::consistent(
                    0.0,
                    VectorField::zeros(grid),
                    VectorField::zeros(grid),
                    ScalarField::constant(grid, [*eta]),
                )?)
            }
            InitialData::SmoothWave(w) => wave_state(grid, w),
            InitialData::OffsetDrift { wave, offset } => {
                let mut s = wave_state(grid, wave)?;
                let eps = *offset;
                s.xi.map_points_mut(|_, x| {
                    for i in 0..3 {
                        x[COF_OFFSET + 4 * i] += eps;
                    }
                });
                Ok(s)
            }
        }
    }
}

/// Heat supply `r(x, t)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum HeatSupply {
    #[default]
    Zero,
    Constant(f64),
    /// `amplitude exp(-d^2 / (2 width^2))`, `d` the periodic distance to `center`
    /// measured in units of the period lengths.
    Bump {
        amplitude: f64,
        width: f64,
        center: [f64; 3],
    },
}

impl HeatSupply {
    pub fn sample(&self, grid: &GridSpec, _t: f64) -> ScalarField {
        match *self {
            HeatSupply::Zero => ScalarField::zeros(*grid),
            HeatSupply::Constant(c) => ScalarField::constant(*grid, [c]),
            HeatSupply::Bump {
                amplitude,
                width,
                center,
            } => {
                let l = grid.lengths();
                ScalarField::from_fn(*grid, |x| {
                    let d2: f64 = (0..3)
                        .map(|a| {
                            let s = (x[a] / l[a] - center[a]).rem_euclid(1.0);
                            s.min(1.0 - s).powi(2)
                        })
                        .sum();
                    [amplitude * (-d2 / (2.0 * width * width)).exp()]
                })
            }
        }
    }
}
