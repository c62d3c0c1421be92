//! Pseudo-spectral simulator for the rotating compressible
//! Navier-Stokes-Korteweg system at low Mach and Rossby numbers, with the
//! spectral tools used to study its quasi-geostrophic limit.

pub mod acoustic;
pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod harness;
pub mod lp;
pub mod params;
pub mod qg;
pub mod rage;
pub mod snapshot;
pub mod solver;

pub use error::{NskError, Result};
pub use harness::{run_sweep, ConvergenceReport, SweepConfig};
pub use grid::{Axis, Grid, Parity, PlaneGrid, ScalarField, SpectralField, VectorField};
pub use params::{capillarity, Regime, ScaledParams};
pub use qg::{QgSolver, QgState};
pub use snapshot::Snapshot;
pub use solver::{FluidState, Solver, SpectralState};

pub use num_complex::Complex64;
