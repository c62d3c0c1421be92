//! Fixtures shared by the kernel benchmarks.

use std::f64::consts::PI;

use nskqg_core::{FluidState, Grid, Parity, ScaledParams, Solver, SpectralState, VectorField};

/// A cube of `n` horizontal and `n / 4` vertical points with a smooth,
/// non-trivial state.
pub fn fixture(n: usize) -> (Grid, Solver, SpectralState) {
    let grid = Grid::new(n, (n / 4).max(4), 2.0 * PI).expect("valid bench grid");
    let params = ScaledParams::new(0.1, 1.0, 0.05, 2.0).expect("valid bench params");
    let solver = Solver::new(grid.clone(), params).expect("valid solver");
    let r0 = grid.sample(Parity::Even, |x, y, z| (x.cos() + (2.0 * y).sin()) * (PI * z).cos());
    let mut u0 = VectorField::zeros(grid.len());
    u0.components[0] = grid.sample(Parity::Even, |_, y, z| 0.5 * y.sin() * (1.0 + 0.2 * (PI * z).cos()));
    u0.components[1] = grid.sample(Parity::Even, |x, _, _| 0.5 * x.cos());
    u0.components[2] = grid.sample(Parity::Odd, |x, _, z| 0.1 * x.sin() * (PI * z).sin());
    let fs: FluidState = solver.initialize(&r0, &u0).expect("positive density");
    let st = SpectralState::from_fluid(&grid, &fs, params.eps).expect("grid-sized state");
    (grid, solver, st)
}
