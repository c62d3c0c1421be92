//! Pseudo-spectral solver for the 2-D quasi-geostrophic limit equations.
//!
//! Both regimes are written as the transport of a potential vorticity `q` by
//! the stream function `psi`,
//! `d_t q + grad_perp psi . grad q = -(nu/2) lap^2 psi`, with
//! `q = r - lap r`, `psi = r` for vanishing capillarity and
//! `q = r - lap X`, `psi = X = (1 - lap) r` for constant capillarity.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{NskError, Result};
use crate::grid::{Axis, Grid, PlaneGrid, ScalarField, VectorField};
use crate::params::Regime;

/// Plane field with its evolution time and regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QgState {
    pub r: Vec<f64>,
    pub time: f64,
    pub regime: Regime,
}

impl QgState {
    pub fn new(r: Vec<f64>, regime: Regime) -> Self {
        Self { r, time: 0.0, regime }
    }

    pub fn is_finite(&self) -> bool {
        self.time.is_finite() && self.r.iter().all(|v| v.is_finite())
    }
}

/// `1 + zeta` (vanishing) or `1 + zeta + zeta^2` (constant): the map `r -> q`.
pub fn pv_symbol(regime: Regime, zeta: f64) -> f64 {
    match regime {
        Regime::Vanishing => 1.0 + zeta,
        Regime::Constant => 1.0 + zeta + zeta * zeta,
    }
}

/// `1` (vanishing) or `1 + zeta` (constant): the map `r -> psi`.
pub fn stream_symbol(regime: Regime, zeta: f64) -> f64 {
    match regime {
        Regime::Vanishing => 1.0,
        Regime::Constant => 1.0 + zeta,
    }
}

fn zeta(k: [f64; 2]) -> f64 {
    k[0] * k[0] + k[1] * k[1]
}

/// Average over `x3` of a 3-D field, as plane values.
pub fn vertical_average(grid: &Grid, field: &ScalarField) -> Result<Vec<f64>> {
    if field.len() != grid.len() {
        return Err(NskError::SizeMismatch {
            expected: grid.len(),
            found: field.len(),
        });
    }
    let nv = grid.nv();
    Ok(field
        .values
        .chunks(nv)
        .map(|c| c.iter().sum::<f64>() / nv as f64)
        .collect())
}

/// Solves `P(-lap) r = source` on the plane, `P` the potential-vorticity symbol.
pub fn invert_pv(plane: &PlaneGrid, source: &[f64], regime: Regime) -> Result<Vec<f64>> {
    let c = plane.forward(source)?;
    plane.inverse(&plane.apply(&c, |k| Complex64::new(1.0 / pv_symbol(regime, zeta(k)), 0.0)))
}

/// Applies `P(-lap)`; the left inverse of [`invert_pv`].
pub fn apply_pv(plane: &PlaneGrid, r: &[f64], regime: Regime) -> Result<Vec<f64>> {
    let c = plane.forward(r)?;
    plane.inverse(&plane.apply(&c, |k| Complex64::new(pv_symbol(regime, zeta(k)), 0.0)))
}

/// Vertical vorticity `d1 u2 - d2 u1` of a 3-D velocity.
pub fn vertical_vorticity(grid: &Grid, u: &VectorField) -> Result<ScalarField> {
    let a = grid.forward(&u.components[1])?;
    let b = grid.forward(&u.components[0])?;
    let w = grid
        .derivative(&a, Axis::X)
        .add(&grid.derivative(&b, Axis::Y).scale(-1.0));
    grid.inverse(&w)
}

/// Initial limit datum from the column average of `r0 - omega3_0`.
pub fn qg_initial(grid: &Grid, omega3_0: &ScalarField, r0: &ScalarField, regime: Regime) -> Result<Vec<f64>> {
    if omega3_0.len() != r0.len() {
        return Err(NskError::SizeMismatch {
            expected: r0.len(),
            found: omega3_0.len(),
        });
    }
    let source: Vec<f64> = r0.values.iter().zip(&omega3_0.values).map(|(r, w)| r - w).collect();
    let avg = vertical_average(grid, &ScalarField::new(source, r0.parity))?;
    invert_pv(&PlaneGrid::of(grid), &avg, regime)
}

/// `(1 - lap) rbar = <r0 - omega3_0>`.
pub fn qg_initial_vanishing(grid: &Grid, omega3_0: &ScalarField, r0: &ScalarField) -> Result<Vec<f64>> {
    qg_initial(grid, omega3_0, r0, Regime::Vanishing)
}

/// `(1 - lap + lap^2) rtilde = <r0 - omega3_0>`.
pub fn qg_initial_constant(grid: &Grid, omega3_0: &ScalarField, r0: &ScalarField) -> Result<Vec<f64>> {
    qg_initial(grid, omega3_0, r0, Regime::Constant)
}

/// Limit datum computed from `(r0, u0)` directly.
pub fn qg_initial_from_data(grid: &Grid, r0: &ScalarField, u0: &VectorField, regime: Regime) -> Result<Vec<f64>> {
    let w = vertical_vorticity(grid, u0)?;
    qg_initial(grid, &w, r0, regime)
}

/// Stream function `psi`.
pub fn stream_function(plane: &PlaneGrid, r: &[f64], regime: Regime) -> Result<Vec<f64>> {
    let c = plane.forward(r)?;
    plane.inverse(&plane.apply(&c, |k| Complex64::new(stream_symbol(regime, zeta(k)), 0.0)))
}

/// `u^h = grad_perp psi`.
pub fn stream_velocity(plane: &PlaneGrid, r: &[f64], regime: Regime) -> Result<[Vec<f64>; 2]> {
    let c = plane.forward(r)?;
    let psi = plane.apply(&c, |k| Complex64::new(stream_symbol(regime, zeta(k)), 0.0));
    let [a, b] = plane.perp_grad(&psi);
    Ok([plane.inverse(&a)?, plane.inverse(&b)?])
}

/// Per-step energy bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepBudget {
    pub energy_before: f64,
    pub energy_after: f64,
    /// `(nu/2) ||lap psi||^2` at both ends of the step.
    pub dissipation_before: f64,
    pub dissipation_after: f64,
    /// `(E1 - E0)/dt + trapezoid dissipation`, relative to the dissipation.
    pub residual: f64,
    /// `<J(psi, q), psi>` relative to `||J|| ||psi||`, at the start of the step.
    pub jacobian_power: f64,
}

/// Integrating-factor Heun integrator for the limit equation.
#[derive(Debug, Clone)]
pub struct QgSolver {
    plane: PlaneGrid,
    regime: Regime,
    nu: f64,
}

impl QgSolver {
    pub fn new(plane: PlaneGrid, regime: Regime, nu: f64) -> Result<Self> {
        if !(nu >= 0.0 && nu.is_finite()) {
            return Err(NskError::InvalidParams(format!("nu = {nu} must be nonnegative")));
        }
        Ok(Self { plane, regime, nu })
    }

    pub fn plane(&self) -> &PlaneGrid {
        &self.plane
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    fn zeta(&self, m: usize) -> f64 {
        zeta(self.plane.wavevector(m))
    }

    fn map(&self, c: &[Complex64], f: impl Fn(f64) -> f64 + Sync) -> Vec<Complex64> {
        c.par_iter().enumerate().map(|(m, x)| x * f(self.zeta(m))).collect()
    }

    fn dealiased(&self, c: &[Complex64]) -> Vec<Complex64> {
        let mut c = c.to_vec();
        self.plane.dealias_in_place(&mut c);
        c
    }

    /// Damping rate of each mode under the dissipative term.
    pub fn damping(&self, zeta: f64) -> f64 {
        let p = pv_symbol(self.regime, zeta);
        let s = stream_symbol(self.regime, zeta);
        0.5 * self.nu * zeta * zeta * s / p
    }

    /// Dealiased pseudo-spectral `grad_perp a . grad b`.
    pub fn jacobian(&self, a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
        let p = &self.plane;
        let [pa1, pa2] = p.perp_grad(a);
        let b1 = p.dx1(b);
        let b2 = p.dx2(b);
        let [pa1, pa2, b1, b2] = [pa1, pa2, b1, b2].map(|c| p.inverse(&c).expect("plane-sized"));
        let prod: Vec<f64> = (0..p.len()).map(|i| pa1[i] * b1[i] + pa2[i] * b2[i]).collect();
        let mut out = p.forward(&prod).expect("plane-sized");
        p.dealias_in_place(&mut out);
        out
    }

    /// Coefficients of `psi` and `q` for coefficients of `r`.
    pub fn stream_and_pv(&self, r: &[Complex64]) -> (Vec<Complex64>, Vec<Complex64>) {
        let regime = self.regime;
        (
            self.map(r, |z| stream_symbol(regime, z)),
            self.map(r, |z| pv_symbol(regime, z)),
        )
    }

    /// Advective part of `d_t r`: `-J(psi, q) / P`.
    fn advection(&self, r: &[Complex64]) -> Vec<Complex64> {
        let r = self.dealiased(r);
        let (psi, q) = self.stream_and_pv(&r);
        let j = self.jacobian(&psi, &q);
        let regime = self.regime;
        self.map(&j, |z| -1.0 / pv_symbol(regime, z))
    }

    /// `d_t r` in stream form, spectral coefficients in and out.
    pub fn rhs_spectral(&self, r: &[Complex64]) -> Vec<Complex64> {
        let adv = self.advection(r);
        adv.into_par_iter()
            .zip(r.par_iter())
            .enumerate()
            .map(|(m, (a, x))| a - x * self.damping(self.zeta(m)))
            .collect()
    }

    /// `d_t r` from the expanded transport term, `grad_perp X . grad lap^2 r`
    /// (constant regime) or `-grad_perp r . grad lap r` (vanishing regime).
    pub fn rhs_expanded_spectral(&self, r: &[Complex64]) -> Vec<Complex64> {
        let r = self.dealiased(r);
        let regime = self.regime;
        let (psi, _) = self.stream_and_pv(&r);
        let j = match regime {
            Regime::Vanishing => {
                let lap = self.map(&r, |z| -z);
                self.jacobian(&psi, &lap).into_iter().map(|c| -c).collect::<Vec<_>>()
            }
            Regime::Constant => {
                let bih = self.map(&r, |z| z * z);
                self.jacobian(&psi, &bih)
            }
        };
        j.into_par_iter()
            .zip(r.par_iter())
            .enumerate()
            .map(|(m, (j, x))| {
                let z = self.zeta(m);
                -j / pv_symbol(regime, z) - x * self.damping(z)
            })
            .collect()
    }

    pub fn rhs(&self, r: &[f64]) -> Result<Vec<f64>> {
        let c = self.plane.forward(r)?;
        self.plane.inverse(&self.rhs_spectral(&c))
    }

    pub fn rhs_expanded(&self, r: &[f64]) -> Result<Vec<f64>> {
        let c = self.plane.forward(r)?;
        self.plane.inverse(&self.rhs_expanded_spectral(&c))
    }

    /// `1/2 <psi, q>`, the quadratic energy dissipated by the flow.
    pub fn energy_spectral(&self, r: &[Complex64]) -> f64 {
        let regime = self.regime;
        let w = self.map(r, |z| stream_symbol(regime, z) * pv_symbol(regime, z));
        0.5 * self.plane.inner(&w, r)
    }

    pub fn energy(&self, r: &[f64]) -> Result<f64> {
        Ok(self.energy_spectral(&self.plane.forward(r)?))
    }

    /// `(nu/2) ||lap psi||^2`.
    pub fn dissipation_spectral(&self, r: &[Complex64]) -> f64 {
        let regime = self.regime;
        let l = self.map(r, |z| z * stream_symbol(regime, z));
        0.5 * self.nu * self.plane.norm_sq(&l)
    }

    /// `<J(psi, q), psi>` relative to `||J|| ||psi||`.
    pub fn jacobian_power(&self, r: &[Complex64]) -> f64 {
        let r = self.dealiased(r);
        let (psi, q) = self.stream_and_pv(&r);
        let j = self.jacobian(&psi, &q);
        let scale = (self.plane.norm_sq(&j) * self.plane.norm_sq(&psi)).sqrt();
        if scale == 0.0 {
            0.0
        } else {
            self.plane.inner(&j, &psi) / scale
        }
    }

    /// `dx / max|u|` (infinite for a still flow).
    pub fn advective_limit(&self, r: &[f64]) -> Result<f64> {
        let [u1, u2] = stream_velocity(&self.plane, r, self.regime)?;
        let max_u = u1
            .iter()
            .zip(&u2)
            .map(|(a, b)| a.hypot(*b))
            .fold(0.0, f64::max);
        Ok(if max_u > 0.0 { self.plane.dx() / max_u } else { f64::INFINITY })
    }

    fn factor(&self, dt: f64) -> Vec<f64> {
        (0..self.plane.len())
            .map(|m| (-self.damping(self.zeta(m)) * dt).exp())
            .collect()
    }

    /// One step on spectral coefficients, without the advective check.
    pub fn step_spectral(&self, r: &mut Vec<Complex64>, dt: f64) {
        let e = self.factor(dt);
        let k1 = self.advection(r);
        let pred: Vec<Complex64> = (0..r.len()).map(|m| e[m] * (r[m] + dt * k1[m])).collect();
        let k2 = self.advection(&pred);
        for m in 0..r.len() {
            r[m] = e[m] * (r[m] + 0.5 * dt * k1[m]) + 0.5 * dt * k2[m];
        }
    }

    pub fn step(&self, state: &QgState, dt: f64) -> Result<QgState> {
        if state.regime != self.regime {
            return Err(NskError::InvalidArgument("state regime differs from solver regime".into()));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(NskError::InvalidArgument(format!("time step {dt} must be positive")));
        }
        let limit = self.advective_limit(&state.r)?;
        if dt > limit {
            return Err(NskError::Cfl { dt, limit });
        }
        let mut c = self.plane.forward(&state.r)?;
        self.step_spectral(&mut c, dt);
        let r = self.plane.inverse(&c)?;
        if r.iter().any(|v| !v.is_finite()) {
            return Err(NskError::NonFinite("qg step"));
        }
        Ok(QgState {
            r,
            time: state.time + dt,
            regime: self.regime,
        })
    }

    /// One step together with its energy bookkeeping.
    pub fn step_with_budget(&self, state: &QgState, dt: f64) -> Result<(QgState, StepBudget)> {
        let c0 = self.plane.forward(&state.r)?;
        let next = self.step(state, dt)?;
        let c1 = self.plane.forward(&next.r)?;
        let e0 = self.energy_spectral(&c0);
        let e1 = self.energy_spectral(&c1);
        let d0 = self.dissipation_spectral(&c0);
        let d1 = self.dissipation_spectral(&c1);
        let dbar = 0.5 * (d0 + d1);
        let raw = (e1 - e0) / dt + dbar;
        let residual = if dbar > 0.0 { raw / dbar } else { raw };
        Ok((
            next,
            StepBudget {
                energy_before: e0,
                energy_after: e1,
                dissipation_before: d0,
                dissipation_after: d1,
                residual,
                jacobian_power: self.jacobian_power(&c0),
            },
        ))
    }

    /// Integrates to `t_final` (last step shortened), observing every state.
    pub fn run<F>(&self, state: &QgState, t_final: f64, dt: f64, mut observe: F) -> Result<QgState>
    where
        F: FnMut(&QgState) -> Result<()>,
    {
        let mut s = state.clone();
        observe(&s)?;
        let t0 = s.time;
        let steps = ((t_final - t0) / dt - 1e-9).ceil().max(0.0) as usize;
        for k in 0..steps {
            let h = (t0 + (k + 1) as f64 * dt).min(t_final) - s.time;
            s = self.step(&s, h)?;
            observe(&s)?;
        }
        Ok(s)
    }

    /// Zero coefficients outside the two-thirds band.
    pub fn project(&self, r: &[f64]) -> Result<Vec<f64>> {
        let mut c = self.plane.forward(r)?;
        self.plane.dealias_in_place(&mut c);
        self.plane.inverse(&c)
    }
}

/// Random plane field `amp n^{-1/2} sum c cos(xi . x + phase)` over the
/// lattice modes with `|n| <= kmax`, seeded and reproducible.
pub fn random_plane_field(plane: &PlaneGrid, kmax: i64, amp: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dxi = 2.0 * std::f64::consts::PI / plane.lh();
    let mut terms = Vec::new();
    for a in -kmax..=kmax {
        for b in 0..=kmax {
            if a * a + b * b <= kmax * kmax && (a, b) != (0, 0) {
                terms.push((
                    dxi * a as f64,
                    dxi * b as f64,
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(0.0..2.0 * std::f64::consts::PI),
                ));
            }
        }
    }
    let scale = amp / (terms.len() as f64).sqrt();
    plane.sample(|x, y| terms.iter().map(|(a, b, c, ph)| c * (a * x + b * y + ph).cos()).sum::<f64>() * scale)
}

/// The dissipation-only evolution of a single mode, for reference.
pub fn single_mode_decay(regime: Regime, nu: f64, zeta: f64, t: f64) -> f64 {
    let p = pv_symbol(regime, zeta);
    let s = stream_symbol(regime, zeta);
    (-0.5 * nu * zeta * zeta * s / p * t).exp()
}
