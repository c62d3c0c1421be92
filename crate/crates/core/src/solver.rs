//! Time integration of the scaled rotating Navier-Stokes-Korteweg system.
//!
//! The unknowns are `r = (rho - 1) / eps` and `V = rho u`, evolving as
//!
//! ```text
//! eps d_t r + div V = 0
//! d_t V + (e3 x V + grad(r - kappa lap r)) / eps = f
//! f = -div(rho u (x) u) + nu div(rho D u) - grad R(rho) / eps^2 + kappa r grad lap r
//! ```
//!
//! with `R(rho) = P(rho) - P(1) - (rho - 1)`. The linear part is integrated
//! exactly per mode, the nonlinear part by a Lawson-Heun step.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acoustic::{self, AcousticMode, AcousticSymbol, CMatrix4, ModePropagator};
use crate::error::{NskError, Result};
use crate::grid::{Axis, Grid, Parity, ScalarField, VectorField};
use crate::params::ScaledParams;

pub const DEFAULT_DENSITY_FLOOR: f64 = 1e-6;

/// `P(rho) = rho^gamma / gamma`.
pub fn pressure(rho: f64, gamma: f64) -> Result<f64> {
    if rho <= 0.0 {
        return Err(NskError::NonpositiveDensity { min: rho });
    }
    Ok(rho.powf(gamma) / gamma)
}

/// `h(rho) = rho^gamma / (gamma (gamma - 1)) - rho / (gamma - 1) + 1 / gamma`.
pub fn internal_energy(rho: f64, gamma: f64) -> Result<f64> {
    if rho <= 0.0 {
        return Err(NskError::NonpositiveDensity { min: rho });
    }
    if gamma == 2.0 {
        return Ok(0.5 * (rho - 1.0) * (rho - 1.0));
    }
    // h = (rho^gamma - 1 - gamma (rho - 1)) / (gamma (gamma - 1)), written to avoid cancellation
    let x = rho - 1.0;
    let pg = (gamma * x.ln_1p()).exp_m1();
    Ok(((pg - gamma * x) / (gamma * (gamma - 1.0))).max(0.0))
}

/// `R(1 + eps r) / eps^2`.
pub fn scaled_pressure_remainder(r: f64, eps: f64, gamma: f64) -> f64 {
    if gamma == 2.0 {
        return 0.5 * r * r;
    }
    let x = eps * r;
    let pg = (gamma * x.ln_1p()).exp_m1();
    (pg - gamma * x) / (gamma * eps * eps)
}

/// Physical state: density, velocity and time.
#[derive(Debug, Clone, PartialEq)]
pub struct FluidState {
    pub rho: ScalarField,
    pub u: VectorField,
    pub time: f64,
}

impl FluidState {
    pub fn rest(grid: &Grid) -> Self {
        Self {
            rho: ScalarField::new(vec![1.0; grid.len()], Parity::Even),
            u: VectorField::zeros(grid.len()),
            time: 0.0,
        }
    }

    pub fn min_rho(&self) -> f64 {
        self.rho.min()
    }

    pub fn max_u(&self) -> f64 {
        self.u.max_norm()
    }

    pub fn is_finite(&self) -> bool {
        self.rho.is_finite() && self.u.components.iter().all(|c| c.is_finite())
    }
}

/// Spectral coefficients of `(r, V1, V2, V3)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralState {
    pub r: Vec<Complex64>,
    pub v: [Vec<Complex64>; 3],
    pub time: f64,
}

impl SpectralState {
    pub fn from_fluid(grid: &Grid, state: &FluidState, eps: f64) -> Result<Self> {
        let n = grid.len();
        if state.rho.len() != n {
            return Err(NskError::SizeMismatch {
                expected: n,
                found: state.rho.len(),
            });
        }
        let r: Vec<f64> = state.rho.values.iter().map(|p| (p - 1.0) / eps).collect();
        let v: [Vec<Complex64>; 3] = std::array::from_fn(|i| {
            let vi: Vec<f64> = state.rho.values
                .iter()
                .zip(&state.u.components[i].values)
                .map(|(p, u)| p * u)
                .collect();
            grid.forward_values(&vi)
        });
        Ok(Self {
            r: grid.forward_values(&r),
            v,
            time: state.time,
        })
    }

    pub fn to_fluid(&self, grid: &Grid, eps: f64) -> Result<FluidState> {
        let (rho, vel) = physical_fields(grid, self, eps);
        let min = rho.iter().copied().fold(f64::INFINITY, f64::min);
        if !(min > 0.0) {
            return Err(NskError::NonpositiveDensity { min });
        }
        let comps: [ScalarField; 3] = std::array::from_fn(|i| {
            let parity = if i == 2 { Parity::Odd } else { Parity::Even };
            let u = vel[i].iter().zip(&rho).map(|(v, p)| v / p).collect();
            ScalarField::new(u, parity)
        });
        Ok(FluidState {
            rho: ScalarField::new(rho, Parity::Even),
            u: VectorField::new(comps),
            time: self.time,
        })
    }

    pub fn zeros(len: usize) -> Self {
        let z = vec![Complex64::new(0.0, 0.0); len];
        Self {
            r: z.clone(),
            v: [z.clone(), z.clone(), z],
            time: 0.0,
        }
    }

    /// Mode vector `(r, V1, V2, V3)` at slot `m`.
    pub fn mode(&self, m: usize) -> acoustic::CVector4 {
        acoustic::CVector4::new(self.r[m], self.v[0][m], self.v[1][m], self.v[2][m])
    }

    pub fn set_mode(&mut self, m: usize, x: &acoustic::CVector4) {
        self.r[m] = x[0];
        self.v[0][m] = x[1];
        self.v[1][m] = x[2];
        self.v[2][m] = x[3];
    }

    fn fields_mut(&mut self) -> [&mut Vec<Complex64>; 4] {
        let [a, b, c] = &mut self.v;
        [&mut self.r, a, b, c]
    }

    fn fields(&self) -> [&Vec<Complex64>; 4] {
        [&self.r, &self.v[0], &self.v[1], &self.v[2]]
    }
}

/// Physical `rho` and `V` from spectral `(r, V)`.
pub fn physical_fields(grid: &Grid, st: &SpectralState, eps: f64) -> (Vec<f64>, [Vec<f64>; 3]) {
    let rho = grid
        .inverse_values(&st.r)
        .into_iter()
        .map(|r| 1.0 + eps * r)
        .collect();
    let v = std::array::from_fn(|i| grid.inverse_values(&st.v[i]));
    (rho, v)
}

/// Symbol of the linear operator at a grid mode (Nyquist components treated as zero).
pub fn linear_symbol(grid: &Grid, m: usize, params: &ScaledParams) -> AcousticSymbol {
    let [a, b, k] = grid.derivative_wavevector(m);
    acoustic::assemble_kappa(AcousticMode::new(a, b, k), params.kappa())
}

/// Nonlinear forcing split by physical origin. The mass equation has no
/// nonlinear part, so `mass` is identically zero.
#[derive(Debug, Clone)]
pub struct NonlinearTendency {
    pub mass: Vec<Complex64>,
    /// `-div(rho u (x) u)`.
    pub transport: [Vec<Complex64>; 3],
    /// `nu div(rho D u)`.
    pub viscous: [Vec<Complex64>; 3],
    /// `-grad R(rho) / eps^2`.
    pub pressure: [Vec<Complex64>; 3],
    /// `kappa r grad lap r`.
    pub capillarity: [Vec<Complex64>; 3],
}

impl NonlinearTendency {
    pub fn momentum(&self) -> [Vec<Complex64>; 3] {
        std::array::from_fn(|i| {
            (0..self.mass.len())
                .map(|m| {
                    self.transport[i][m]
                        + self.viscous[i][m]
                        + self.pressure[i][m]
                        + self.capillarity[i][m]
                })
                .collect()
        })
    }

    pub fn is_finite(&self) -> bool {
        [&self.transport, &self.viscous, &self.pressure, &self.capillarity]
            .iter()
            .all(|t| t.iter().all(|c| c.iter().all(|z| z.re.is_finite() && z.im.is_finite())))
    }
}

/// One record of the run log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub time: f64,
    #[serde(rename = "E_eps")]
    pub e_eps: f64,
    #[serde(rename = "F_eps")]
    pub f_eps: f64,
    pub min_rho: f64,
    pub max_u: f64,
}

/// Exact-linear, explicit-nonlinear integrator bound to a grid and parameters.
pub struct Solver {
    grid: Grid,
    params: ScaledParams,
    density_floor: f64,
    nonlinear: bool,
    table: Option<(f64, Arc<Vec<CMatrix4>>)>,
}

impl Solver {
    pub fn new(grid: Grid, params: ScaledParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            grid,
            params,
            density_floor: DEFAULT_DENSITY_FLOOR,
            nonlinear: true,
            table: None,
        })
    }

    pub fn with_density_floor(mut self, floor: f64) -> Self {
        self.density_floor = floor;
        self
    }

    /// Drops the nonlinear forcing, leaving the exact linear flow.
    pub fn linear_only(mut self) -> Self {
        self.nonlinear = false;
        self
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn params(&self) -> &ScaledParams {
        &self.params
    }

    /// `rho = 1 + eps r0`, `u = u0` with parities enforced.
    pub fn initialize(&self, r0: &ScalarField, u0: &VectorField) -> Result<FluidState> {
        initialize(&self.grid, r0, u0, &self.params)
    }

    fn check_density(&self, rho: &[f64], time: f64) -> Result<()> {
        let min = rho.iter().copied().fold(f64::INFINITY, f64::min);
        if !min.is_finite() && !min.is_nan() {
            return Ok(());
        }
        if min.is_nan() {
            return Err(NskError::NonFinite("density"));
        }
        if min < self.density_floor {
            return Err(NskError::Vacuum { min_rho: min, time });
        }
        Ok(())
    }

    /// Split nonlinear forcing at a spectral state.
    pub fn nonlinear_rhs(&self, st: &SpectralState) -> Result<NonlinearTendency> {
        let g = &self.grid;
        let n = g.len();
        let eps = self.params.eps;
        let kappa = self.params.kappa();
        let nu = self.params.nu;
        let gamma = self.params.gamma;

        let r_phys = g.inverse_values(&st.r);
        let rho: Vec<f64> = r_phys.iter().map(|r| 1.0 + eps * r).collect();
        self.check_density(&rho, st.time)?;
        let vel: [Vec<f64>; 3] = std::array::from_fn(|i| g.inverse_values(&st.v[i]));
        let u: [Vec<f64>; 3] = std::array::from_fn(|i| {
            vel[i].iter().zip(&rho).map(|(v, p)| v / p).collect()
        });
        let u_hat: [Vec<Complex64>; 3] = std::array::from_fn(|i| {
            let mut c = g.forward_values(&u[i]);
            g.dealias_in_place(&mut c);
            c
        });
        // grad_u[i][j] = d_j u_i
        let grad_u: [[Vec<f64>; 3]; 3] = std::array::from_fn(|i| {
            std::array::from_fn(|j| {
                let mut c = u_hat[i].clone();
                g.derivative_in_place(&mut c, Axis::ALL[j]);
                g.inverse_values(&c)
            })
        });

        let div_of = |sigma: &(dyn Fn(usize, usize, usize) -> f64 + Sync), row: usize| -> Vec<Complex64> {
            let mut acc = vec![Complex64::new(0.0, 0.0); n];
            for j in 0..3 {
                let field: Vec<f64> = (0..n).into_par_iter().map(|p| sigma(row, j, p)).collect();
                let mut c = g.forward_values(&field);
                g.dealias_in_place(&mut c);
                g.derivative_in_place(&mut c, Axis::ALL[j]);
                acc.par_iter_mut().zip(&c).for_each(|(a, b)| *a += b);
            }
            acc
        };

        let zero3 = || std::array::from_fn(|_| vec![Complex64::new(0.0, 0.0); n]);
        if !self.nonlinear {
            return Ok(NonlinearTendency {
                mass: vec![Complex64::new(0.0, 0.0); n],
                transport: zero3(),
                viscous: zero3(),
                pressure: zero3(),
                capillarity: zero3(),
            });
        }

        let transport = std::array::from_fn(|i| {
            let mut t = div_of(&|i, j, p| vel[i][p] * u[j][p], i);
            t.iter_mut().for_each(|z| *z = -*z);
            t
        });
        let viscous = std::array::from_fn(|i| {
            div_of(
                &|i, j, p| nu * rho[p] * 0.5 * (grad_u[i][j][p] + grad_u[j][i][p]),
                i,
            )
        });

        let q: Vec<f64> = r_phys
            .iter()
            .map(|&r| scaled_pressure_remainder(r, eps, gamma))
            .collect();
        let mut q_hat = g.forward_values(&q);
        g.dealias_in_place(&mut q_hat);
        let pressure = std::array::from_fn(|j| {
            let mut c = q_hat.clone();
            g.derivative_in_place(&mut c, Axis::ALL[j]);
            c.iter_mut().for_each(|z| *z = -*z);
            c
        });

        let capillarity = if kappa == 0.0 {
            zero3()
        } else {
            let lap_r: Vec<Complex64> = st
                .r
                .par_iter()
                .enumerate()
                .map(|(m, z)| {
                    let [a, b, k] = g.wavevector(m);
                    z * -(a * a + b * b + k * k)
                })
                .collect();
            std::array::from_fn(|j| {
                let mut c = lap_r.clone();
                g.derivative_in_place(&mut c, Axis::ALL[j]);
                let d = g.inverse_values(&c);
                let prod: Vec<f64> = d.iter().zip(&r_phys).map(|(a, r)| kappa * r * a).collect();
                let mut out = g.forward_values(&prod);
                g.dealias_in_place(&mut out);
                out
            })
        };

        Ok(NonlinearTendency {
            mass: vec![Complex64::new(0.0, 0.0); n],
            transport,
            viscous,
            pressure,
            capillarity,
        })
    }

    fn momentum_rhs(&self, st: &SpectralState) -> Result<[Vec<Complex64>; 3]> {
        let t = self.nonlinear_rhs(st)?;
        let m = t.momentum();
        if !m.iter().all(|c| c.iter().all(|z| z.re.is_finite() && z.im.is_finite())) {
            return Err(NskError::NonFinite("nonlinear forcing"));
        }
        Ok(m)
    }

    /// Per-mode matrices `exp(-(dt / eps) A)`, Hermitian-symmetric across `xi -> -xi`.
    pub fn propagator_table(&mut self, dt: f64) -> Arc<Vec<CMatrix4>> {
        if let Some((t, table)) = &self.table {
            if *t == dt {
                return table.clone();
            }
        }
        let tau = dt / self.params.eps;
        let g = &self.grid;
        let params = self.params;
        let mut table: Vec<CMatrix4> = (0..g.len())
            .into_par_iter()
            .map(|m| {
                if g.mirror(m) < m {
                    CMatrix4::zeros()
                } else {
                    ModePropagator::new(&linear_symbol(g, m, &params)).matrix(tau)
                }
            })
            .collect();
        for m in 0..g.len() {
            let mm = g.mirror(m);
            if mm < m {
                table[m] = table[mm].conjugate();
            }
        }
        let table = Arc::new(table);
        self.table = Some((dt, table.clone()));
        table
    }

    /// Applies the exact linear flow over `dt` in place.
    pub fn propagate(&mut self, st: &mut SpectralState, dt: f64) {
        let table = self.propagator_table(dt);
        apply_table(&table, st);
        st.time += dt;
    }

    /// One Lawson-Heun step of the spectral state.
    pub fn step_spectral(&mut self, st: &mut SpectralState, dt: f64) -> Result<()> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(NskError::InvalidArgument(format!("time step {dt} must be positive")));
        }
        let table = self.propagator_table(dt);
        if !self.nonlinear {
            apply_table(&table, st);
            st.time += dt;
            return Ok(());
        }
        let k1 = self.momentum_rhs(st)?;
        let mut pred = st.clone();
        let mut half = st.clone();
        for i in 0..3 {
            axpy(&mut pred.v[i], dt, &k1[i]);
            axpy(&mut half.v[i], 0.5 * dt, &k1[i]);
        }
        apply_table(&table, &mut pred);
        pred.time = st.time + dt;
        let k2 = self.momentum_rhs(&pred)?;
        apply_table(&table, &mut half);
        for i in 0..3 {
            axpy(&mut half.v[i], 0.5 * dt, &k2[i]);
        }
        half.time = st.time + dt;
        *st = half;
        Ok(())
    }

    /// Advective limit `min(dx, dz) / max|u|` (infinite at rest).
    pub fn advective_limit(&self, max_u: f64) -> f64 {
        let dx = self.grid.dx().min(self.grid.dz());
        if max_u > 0.0 {
            dx / max_u
        } else {
            f64::INFINITY
        }
    }

    /// `min(0.25 dx / max|u|, 0.5 / (nu zeta_max), cap)`.
    pub fn default_dt(&self, max_u: f64, cap: f64) -> f64 {
        let g = &self.grid;
        let kh = g.dxi() * (g.nh() / 3) as f64;
        let kv = std::f64::consts::PI * (g.nv() / 3) as f64;
        let zeta_max = 2.0 * kh * kh + kv * kv;
        let viscous = 0.5 / (self.params.nu * zeta_max);
        (0.25 * self.advective_limit(max_u)).min(viscous).min(cap)
    }

    /// One step of a physical state, checking the advective bound.
    pub fn step(&mut self, state: &FluidState, dt: f64) -> Result<FluidState> {
        let limit = self.advective_limit(state.max_u());
        if dt > limit {
            return Err(NskError::Cfl { dt, limit });
        }
        let eps = self.params.eps;
        let mut st = SpectralState::from_fluid(&self.grid, state, eps)?;
        self.step_spectral(&mut st, dt)?;
        let out = st.to_fluid(&self.grid, eps)?;
        if out.min_rho() < self.density_floor {
            return Err(NskError::Vacuum {
                min_rho: out.min_rho(),
                time: out.time,
            });
        }
        Ok(out)
    }

    pub fn max_velocity(&self, st: &SpectralState) -> f64 {
        let (rho, v) = physical_fields(&self.grid, st, self.params.eps);
        (0..rho.len())
            .map(|p| (v[0][p].powi(2) + v[1][p].powi(2) + v[2][p].powi(2)).sqrt() / rho[p])
            .fold(0.0, f64::max)
    }

    /// Integrates to `t_final` with fixed `dt` (the last step is shortened),
    /// calling `observe` after the initial state and after every step.
    pub fn run<F>(&mut self, st: &mut SpectralState, t_final: f64, dt: f64, mut observe: F) -> Result<()>
    where
        F: FnMut(&SpectralState) -> Result<()>,
    {
        observe(st)?;
        let steps = ((t_final - st.time) / dt - 1e-9).ceil().max(0.0) as usize;
        let t0 = st.time;
        for s in 0..steps {
            let max_u = self.max_velocity(st);
            let limit = self.advective_limit(max_u);
            let h = (t0 + (s + 1) as f64 * dt).min(t_final) - st.time;
            if h > limit {
                return Err(NskError::Cfl { dt: h, limit });
            }
            self.step_spectral(st, h)?;
            observe(st)?;
        }
        Ok(())
    }
}

fn axpy(y: &mut [Complex64], a: f64, x: &[Complex64]) {
    y.par_iter_mut().zip(x).for_each(|(y, x)| *y += x * a);
}

fn apply_table(table: &[CMatrix4], st: &mut SpectralState) {
    let [r, v1, v2, v3] = st.fields_mut();
    r.par_iter_mut()
        .zip(v1.par_iter_mut())
        .zip(v2.par_iter_mut().zip(v3.par_iter_mut()))
        .enumerate()
        .for_each(|(m, ((r, a), (b, c)))| {
            let e = &table[m];
            let x = [*r, *a, *b, *c];
            let y: [Complex64; 4] =
                std::array::from_fn(|i| (0..4).map(|j| e[(i, j)] * x[j]).sum());
            *r = y[0];
            *a = y[1];
            *b = y[2];
            *c = y[3];
        });
}

/// Builds the initial state `rho = 1 + eps r0`, `u = u0`.
pub fn initialize(
    grid: &Grid,
    r0: &ScalarField,
    u0: &VectorField,
    params: &ScaledParams,
) -> Result<FluidState> {
    let n = grid.len();
    for f in std::iter::once(r0).chain(u0.components.iter()) {
        if f.len() != n {
            return Err(NskError::SizeMismatch {
                expected: n,
                found: f.len(),
            });
        }
        if !f.is_finite() {
            return Err(NskError::NonFinite("initial data"));
        }
    }
    let rho: Vec<f64> = r0.values.iter().map(|r| 1.0 + params.eps * r).collect();
    let min = rho.iter().copied().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        return Err(NskError::Vacuum {
            min_rho: min,
            time: 0.0,
        });
    }
    params.validate()?;
    let parities = [Parity::Even, Parity::Even, Parity::Odd];
    let comps: [ScalarField; 3] = std::array::from_fn(|i| {
        let src = &u0.components[i];
        let s = parities[i].sign();
        let v = (0..n)
            .map(|m| 0.5 * (src.values[m] + s * src.values[grid.reflect_point(m)]))
            .collect();
        ScalarField::new(v, parities[i])
    });
    let s = Parity::Even.sign();
    let rho = (0..n)
        .map(|m| 0.5 * (rho[m] + s * rho[grid.reflect_point(m)]))
        .collect();
    Ok(FluidState {
        rho: ScalarField::new(rho, Parity::Even),
        u: VectorField::new(comps),
        time: 0.0,
    })
}

impl SpectralState {
    /// Max deviation from `c(-xi) = conj(c(xi))` over all four fields.
    pub fn hermitian_defect(&self, grid: &Grid) -> f64 {
        self.fields()
            .iter()
            .map(|f| {
                (0..f.len())
                    .map(|m| (f[m] - f[grid.mirror(m)].conj()).norm())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn params(eps: f64, alpha: f64) -> ScaledParams {
        ScaledParams::new(eps, alpha, 0.05, 2.0).unwrap()
    }

    fn max_abs(v: &[Complex64]) -> f64 {
        v.iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    #[test]
    fn gamma_law() {
        assert!((pressure(1.0, 2.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((pressure(1.0, 1.4).unwrap() - 1.0 / 1.4).abs() < 1e-15);
        assert!((pressure(2.0, 1.5).unwrap() - 2f64.powf(1.5) / 1.5).abs() < 1e-14);
        assert!((pressure(2.0, 1.5).unwrap() - 1.8856).abs() < 1e-4);
        assert!(pressure(0.0, 2.0).is_err());
    }

    /// `h` from `h'' = rho^(gamma - 2)`, `h(1) = h'(1) = 0` by nested Simpson.
    fn h_oracle(rho: f64, gamma: f64) -> f64 {
        let simpson = |f: &dyn Fn(f64) -> f64, a: f64, b: f64, n: usize| {
            let h = (b - a) / n as f64;
            let mut s = f(a) + f(b);
            for i in 1..n {
                s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            s * h / 3.0
        };
        let hp = |s: f64| simpson(&|t: f64| t.powf(gamma - 2.0), 1.0, s, 200);
        simpson(&hp, 1.0, rho, 200)
    }

    #[test]
    fn internal_energy_values() {
        assert_eq!(internal_energy(1.0, 1.5).unwrap(), 0.0);
        assert!((internal_energy(1.5, 2.0).unwrap() - 0.125).abs() < 1e-15);
        assert!((h_oracle(1.5, 2.0) - 0.125).abs() < 1e-12);
        let h = internal_energy(2.0, 1.5).unwrap();
        assert!((h - h_oracle(2.0, 1.5)).abs() < 1e-9);
        let closed = 2f64.powf(1.5) / (1.5 * 0.5) - 2.0 / 0.5 + 1.0 / 1.5;
        assert!((h - closed).abs() < 1e-12);
        assert!(internal_energy(-1.0, 2.0).is_err());
    }

    #[test]
    fn remainder_matches_taylor() {
        for &gamma in &[1.4, 2.0] {
            let r: f64 = 0.7;
            let x = 0.1 * r;
            let direct = (1.0 + x).powf(gamma) / gamma - 1.0 / gamma - x;
            let got = scaled_pressure_remainder(r, 0.1, gamma) * 0.01;
            assert!((got - direct).abs() < 1e-12 * direct);

            let x = 1e-3 * r;
            let series = (gamma - 1.0) * x * x / 2.0
                + (gamma - 1.0) * (gamma - 2.0) * x.powi(3) / 6.0
                + (gamma - 1.0) * (gamma - 2.0) * (gamma - 3.0) * x.powi(4) / 24.0;
            let got = scaled_pressure_remainder(r, 1e-3, gamma) * 1e-6;
            assert!((got - series).abs() < 1e-8 * series);
        }
    }

    #[test]
    fn initialize_examples() {
        let g = Grid::new(8, 4, 2.0 * PI).unwrap();
        let p = params(0.1, 1.0);
        let zero = ScalarField::zeros(g.len(), Parity::Even);
        let rest = initialize(&g, &zero, &VectorField::zeros(g.len()), &p).unwrap();
        assert_eq!(rest, FluidState::rest(&g));
        let r0 = g.sample(Parity::Even, |x, _, _| x.sin());
        let s = initialize(&g, &r0, &VectorField::zeros(g.len()), &p).unwrap();
        assert!((s.min_rho() - 0.9).abs() < 1e-12);
        let bad = ScaledParams {
            eps: 2.0,
            alpha: 0.0,
            nu: 0.1,
            gamma: 2.0,
        };
        let r0 = g.sample(Parity::Even, |x, _, _| -0.6 * x.sin());
        assert!(matches!(
            initialize(&g, &r0, &VectorField::zeros(g.len()), &bad),
            Err(NskError::Vacuum { .. })
        ));
    }

    #[test]
    fn rest_state_has_zero_tendency_and_is_fixed() {
        let g = Grid::new(8, 4, 2.0 * PI).unwrap();
        for &(eps, alpha) in &[(0.1, 1.0), (1.0, 0.0), (0.01, 0.5)] {
            let mut s = Solver::new(g.clone(), params(eps, alpha)).unwrap();
            let st = SpectralState::from_fluid(&g, &FluidState::rest(&g), eps).unwrap();
            let t = s.nonlinear_rhs(&st).unwrap();
            assert!(t.momentum().iter().all(|c| max_abs(c) == 0.0));
            let mut x = st.clone();
            for _ in 0..5 {
                s.step_spectral(&mut x, 0.01).unwrap();
            }
            assert_eq!(x.r, st.r);
            assert_eq!(x.v, st.v);
        }
    }

    #[test]
    fn symbol_is_deterministic() {
        let g = Grid::new(8, 4, 2.0 * PI).unwrap();
        let p = params(0.3, 1.0);
        let a = linear_symbol(&g, 37, &p);
        let b = linear_symbol(&g, 37, &p);
        assert_eq!(a, b);
        let z = linear_symbol(&g, 0, &p);
        assert_eq!(z.a[(0, 1)], Complex64::new(0.0, 0.0));
        assert_eq!(z.a[(1, 2)], Complex64::new(-1.0, 0.0));
    }

    #[test]
    fn transport_matches_finite_differences() {
        let n = 16;
        let g = Grid::new(n, 4, 2.0 * PI).unwrap();
        let p = params(0.1, 1.0);
        let s = Solver::new(g.clone(), p).unwrap();
        let mut fs = FluidState::rest(&g);
        fs.u.components[0] = g.sample(Parity::Even, |_, y, _| y.sin());
        let st = SpectralState::from_fluid(&g, &fs, p.eps).unwrap();
        let t = s.nonlinear_rhs(&st).unwrap();
        // -div(u (x) u) with u = sin(x2) e1 vanishes identically; check against a
        // centred fourth-order difference of the flux components.
        let h = g.dx();
        let flux = |i: usize, j: usize, x: f64, y: f64| {
            let u = [y.sin(), 0.0, 0.0];
            let _ = x;
            u[i] * u[j]
        };
        let d = |f: &dyn Fn(f64) -> f64, x: f64| {
            (-f(x + 2.0 * h) + 8.0 * f(x + h) - 8.0 * f(x - h) + f(x - 2.0 * h)) / (12.0 * h)
        };
        for i in 0..3 {
            let phys = g.inverse_values(&t.transport[i]);
            for m in 0..g.len() {
                let (a, b, _) = g.split(m);
                let (x, y) = (g.x1(a), g.x1(b));
                let fd = -(d(&|s| flux(i, 0, s, y), x) + d(&|s| flux(i, 1, x, s), y));
                assert!((phys[m] - fd).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn transport_of_general_field_matches_finite_differences() {
        let n = 32;
        let g = Grid::new(n, 4, 2.0 * PI).unwrap();
        let p = params(0.1, 1.0);
        let s = Solver::new(g.clone(), p).unwrap();
        let mut fs = FluidState::rest(&g);
        fs.u.components[0] = g.sample(Parity::Even, |x, y, _| 0.3 * y.sin() + 0.2 * x.cos());
        fs.u.components[1] = g.sample(Parity::Even, |x, _, _| 0.5 * x.sin());
        let st = SpectralState::from_fluid(&g, &fs, p.eps).unwrap();
        let t = s.nonlinear_rhs(&st).unwrap();
        let u = |x: f64, y: f64| [0.3 * y.sin() + 0.2 * x.cos(), 0.5 * x.sin()];
        let h = 1e-4;
        for i in 0..2 {
            let phys = g.inverse_values(&t.transport[i]);
            for m in (0..g.len()).step_by(7) {
                let (a, b, _) = g.split(m);
                let (x, y) = (g.x1(a), g.x1(b));
                let fx = |x: f64| u(x, y)[i] * u(x, y)[0];
                let fy = |y: f64| u(x, y)[i] * u(x, y)[1];
                let fd = -((fx(x + h) - fx(x - h)) + (fy(y + h) - fy(y - h))) / (2.0 * h);
                assert!((phys[m] - fd).abs() < 1e-6, "{} vs {}", phys[m], fd);
            }
        }
    }

    #[test]
    fn pressure_remainder_gradient_matches_analytic() {
        let g = Grid::new(32, 4, 2.0 * PI).unwrap();
        for &gamma in &[2.0, 1.4] {
            let p = ScaledParams::new(0.1, 0.0, 0.05, gamma).unwrap();
            let s = Solver::new(g.clone(), p).unwrap();
            let mut fs = FluidState::rest(&g);
            fs.rho = g.sample(Parity::Even, |x, _, _| 1.0 + 0.1 * x.sin());
            let st = SpectralState::from_fluid(&g, &fs, p.eps).unwrap();
            let t = s.nonlinear_rhs(&st).unwrap();
            let phys = g.inverse_values(&t.pressure[0]);
            for m in 0..g.len() {
                let (a, _, _) = g.split(m);
                let x = g.x1(a);
                let rho = 1.0 + 0.1 * x.sin();
                // -d_x R(rho) / eps^2 = -(rho^(gamma-1) - 1) rho' / eps^2
                let exact = -(rho.powf(gamma - 1.0) - 1.0) * 0.1 * x.cos() / (p.eps * p.eps);
                assert!((phys[m] - exact).abs() < 1e-9, "{gamma}: {} {}", phys[m], exact);
            }
        }
    }

    #[test]
    fn single_mode_rotates_on_acoustic_frequencies() {
        let g = Grid::new(8, 4, 2.0 * PI).unwrap();
        let p = params(0.2, 0.5);
        let mut s = Solver::new(g.clone(), p).unwrap().linear_only();
        let m = g.index(1, 0, 1);
        let mm = g.mirror(m);
        let sym = linear_symbol(&g, m, &p);
        let mut st = SpectralState::zeros(g.len());
        let x0 = acoustic::CVector4::new(
            Complex64::new(0.3, 0.1),
            Complex64::new(0.0, 0.2),
            Complex64::new(-0.1, 0.0),
            Complex64::new(0.05, 0.05),
        );
        st.set_mode(m, &x0);
        st.set_mode(mm, &x0.conjugate());
        let dt = 0.013;
        for _ in 0..50 {
            s.step_spectral(&mut st, dt).unwrap();
        }
        // closed form: expand in eigenvectors of A, rotate by exp(-lambda t / eps)
        let eig = sym.a.clone().eigen_decomposition();
        let t = 50.0 * dt;
        let want = eig.0 * acoustic::CMatrix4::from_diagonal(&eig.1.map(|l| (-l * t / p.eps).exp()))
            * eig.2 * x0;
        assert!((st.mode(m) - want).norm() < 1e-10);
        assert!(st.hermitian_defect(&g) < 1e-14);
    }

    trait EigenDecomposition {
        fn eigen_decomposition(self) -> (acoustic::CMatrix4, acoustic::CVector4, acoustic::CMatrix4);
    }

    impl EigenDecomposition for acoustic::CMatrix4 {
        /// `A = V diag(l) V^{-1}` via Schur vectors and triangular back-substitution.
        fn eigen_decomposition(self) -> (acoustic::CMatrix4, acoustic::CVector4, acoustic::CMatrix4) {
            let (q, t) = self.schur().unpack();
            let l = t.diagonal();
            let mut y = acoustic::CMatrix4::zeros();
            for k in 0..4 {
                y[(k, k)] = Complex64::new(1.0, 0.0);
                for i in (0..k).rev() {
                    let mut s = Complex64::new(0.0, 0.0);
                    for j in i + 1..=k {
                        s += t[(i, j)] * y[(j, k)];
                    }
                    y[(i, k)] = s / (l[k] - l[i]);
                }
            }
            let v = q * y;
            let vinv = v.try_inverse().unwrap();
            (v, l, vinv)
        }
    }

    #[test]
    fn step_preserves_parity_and_hermitian_symmetry() {
        let g = Grid::new(16, 8, 2.0 * PI).unwrap();
        let p = params(0.2, 1.0);
        let mut s = Solver::new(g.clone(), p).unwrap();
        let r0 = g.sample(Parity::Even, |x, y, z| (x).cos() * (PI * z).cos() + 0.3 * y.sin());
        let mut u0 = VectorField::zeros(g.len());
        u0.components[0] = g.sample(Parity::Even, |_, y, z| 0.2 * y.sin() * (PI * z).cos());
        u0.components[2] = g.sample(Parity::Odd, |x, _, z| 0.1 * x.cos() * (PI * z).sin());
        let fs = s.initialize(&r0, &u0).unwrap();
        let mut state = fs;
        for _ in 0..3 {
            state = s.step(&state, 0.01).unwrap();
        }
        assert!(g.parity_defect(&state.rho) < 1e-12);
        for c in &state.u.components {
            assert!(g.parity_defect(c) < 1e-12);
        }
        let st = SpectralState::from_fluid(&g, &state, p.eps).unwrap();
        assert!(st.hermitian_defect(&g) < 1e-12);
    }

    #[test]
    fn cfl_violation_is_reported() {
        let g = Grid::new(8, 4, 2.0 * PI).unwrap();
        let mut s = Solver::new(g.clone(), params(0.1, 1.0)).unwrap();
        let mut fs = FluidState::rest(&g);
        fs.u.components[0] = ScalarField::new(vec![10.0; g.len()], Parity::Even);
        assert!(matches!(s.step(&fs, 1.0), Err(NskError::Cfl { .. })));
    }

    #[test]
    fn second_order_self_convergence() {
        let g = Grid::new(16, 4, 2.0 * PI).unwrap();
        let p = params(0.3, 1.0);
        let r0 = g.sample(Parity::Even, |x, y, z| 0.5 * x.cos() * y.sin() + 0.2 * (PI * z).cos());
        let mut u0 = VectorField::zeros(g.len());
        u0.components[0] = g.sample(Parity::Even, |_, y, _| 0.3 * y.sin());
        u0.components[1] = g.sample(Parity::Even, |x, _, z| 0.3 * x.cos() * (PI * z).cos());
        let t_final = 0.2;
        let solve = |dt: f64| {
            let mut s = Solver::new(g.clone(), p).unwrap();
            let fs = s.initialize(&r0, &u0).unwrap();
            let mut st = SpectralState::from_fluid(&g, &fs, p.eps).unwrap();
            s.run(&mut st, t_final, dt, |_| Ok(())).unwrap();
            st
        };
        let diff = |a: &SpectralState, b: &SpectralState| {
            a.fields()
                .iter()
                .zip(b.fields())
                .map(|(x, y)| x.iter().zip(y.iter()).map(|(p, q)| (p - q).norm_sqr()).sum::<f64>())
                .sum::<f64>()
                .sqrt()
        };
        let dts = [0.02, 0.01, 0.005, 0.0025];
        let sols: Vec<SpectralState> = dts.iter().map(|&d| solve(d)).collect();
        let errs: Vec<f64> = (0..3).map(|i| diff(&sols[i], &sols[i + 1])).collect();
        let slope = ((errs[0] / errs[2]).ln()) / (4f64).ln();
        assert!(slope >= 1.8, "errors {errs:?}, slope {slope}");
    }
}
