//! Variational time stepping for polyconvex thermoelasticity on periodic grids.

pub mod checkpoint;
pub mod constitutive;
pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod march;
pub mod nulllag;
pub mod presets;
pub mod varstep;

pub use constitutive::{EnergyModel, ModelSpec, NonConvexEnergy, PaperEnergy, QuadraticEnergy};
pub use error::{CheckpointError, DiagnosticsError, GridError, MarchError, ModelError, StepError};
pub use grid::{ExtField, Field, GridSpec, ScalarField, TensorField, VectorField};
pub use march::{run, Trajectory};
pub use presets::{HeatSupply, InitialData, PresetError, WaveParams};
pub use varstep::{solve_step, State, StepConfig, StepReport};
