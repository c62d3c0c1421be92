//! Energy functionals, uniform bounds and columnarization of simulated states.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NskError, Result};
use crate::grid::{Axis, Grid, Parity, ScalarField};
use crate::params::ScaledParams;
use crate::solver::{internal_energy, FluidState, SpectralState};

fn gradient(grid: &Grid, values: &[f64]) -> [Vec<f64>; 3] {
    let c = grid.forward_values(values);
    std::array::from_fn(|a| {
        let mut d = c.clone();
        grid.derivative_in_place(&mut d, Axis::ALL[a]);
        grid.inverse_values(&d)
    })
}

/// `grad[i][j] = d_j f_i` for the three velocity components.
fn velocity_gradient(grid: &Grid, u: &[ScalarField; 3]) -> [[Vec<f64>; 3]; 3] {
    std::array::from_fn(|i| gradient(grid, &u[i].values))
}

/// Hessian entries `d_i d_j f` (upper triangle, row-major: 11, 12, 13, 22, 23, 33).
fn hessian(grid: &Grid, values: &[f64]) -> [Vec<f64>; 6] {
    let c = grid.forward_values(values);
    let pairs = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];
    pairs.map(|(i, j)| {
        let mut d = c.clone();
        grid.derivative_in_place(&mut d, Axis::ALL[i]);
        grid.derivative_in_place(&mut d, Axis::ALL[j]);
        grid.inverse_values(&d)
    })
}

fn check_positive(rho: &ScalarField) -> Result<()> {
    let min = rho.min();
    if !(min > 0.0) {
        return Err(NskError::NonpositiveDensity { min });
    }
    Ok(())
}

/// `E = int eps^-2 h(rho) + rho |u|^2 / 2 + kappa eps^-2 |grad rho|^2 / 2`.
pub fn energy(grid: &Grid, state: &FluidState, params: &ScaledParams) -> Result<f64> {
    check_positive(&state.rho)?;
    let eps2 = params.eps * params.eps;
    let cap = params.kappa() / eps2;
    let g = gradient(grid, &state.rho.values);
    let mut dens = Vec::with_capacity(grid.len());
    for p in 0..grid.len() {
        let rho = state.rho.values[p];
        let u2: f64 = state.u.components.iter().map(|c| c.values[p].powi(2)).sum();
        let g2: f64 = g.iter().map(|c| c[p] * c[p]).sum();
        dens.push(internal_energy(rho, params.gamma)? / eps2 + 0.5 * rho * u2 + 0.5 * cap * g2);
    }
    Ok(grid.integrate(&dens))
}

/// `F = 2 nu^2 int |grad sqrt(rho)|^2`, with `grad sqrt(rho) = grad rho / (2 sqrt(rho))`.
pub fn bd_entropy(grid: &Grid, rho: &ScalarField, nu: f64) -> Result<f64> {
    check_positive(rho)?;
    let g = gradient(grid, &rho.values);
    let dens: Vec<f64> = (0..grid.len())
        .map(|p| {
            let s = 2.0 * rho.values[p].sqrt();
            g.iter().map(|c| (c[p] / s).powi(2)).sum()
        })
        .collect();
    Ok(2.0 * nu * nu * grid.integrate(&dens))
}

/// `F = nu^2 / 2 int rho |grad log rho|^2`.
pub fn bd_entropy_log_form(grid: &Grid, rho: &ScalarField, nu: f64) -> Result<f64> {
    check_positive(rho)?;
    let g = gradient(grid, &rho.values);
    let dens: Vec<f64> = (0..grid.len())
        .map(|p| {
            let r = rho.values[p];
            r * g.iter().map(|c| (c[p] / r).powi(2)).sum::<f64>()
        })
        .collect();
    Ok(0.5 * nu * nu * grid.integrate(&dens))
}

/// `int rho |D u|^2`.
pub fn dissipation_rate(grid: &Grid, state: &FluidState) -> f64 {
    let gu = velocity_gradient(grid, &state.u.components);
    let dens: Vec<f64> = (0..grid.len())
        .map(|p| {
            let mut s = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    s += (0.5 * (gu[i][j][p] + gu[j][i][p])).powi(2);
                }
            }
            state.rho.values[p] * s
        })
        .collect();
    grid.integrate(&dens)
}

/// Work of the Coriolis force on the flow, `int u . (e3 x rho u)`.
pub fn coriolis_power(grid: &Grid, state: &FluidState) -> f64 {
    let [u1, u2, _] = &state.u.components;
    let dens: Vec<f64> = (0..grid.len())
        .map(|p| {
            let rho = state.rho.values[p];
            u1.values[p] * (-rho * u2.values[p]) + u2.values[p] * (rho * u1.values[p])
        })
        .collect();
    grid.integrate(&dens)
}

/// Quadratic energy of the linear flow, `1/2 int r^2 + kappa |grad r|^2 + |V|^2`.
pub fn symmetrizer_energy(grid: &Grid, st: &SpectralState, kappa: f64) -> f64 {
    let mut s = 0.0;
    for m in 0..grid.len() {
        let [a, b, k] = grid.derivative_wavevector(m);
        let w = 1.0 + kappa * (a * a + b * b + k * k);
        s += w * st.r[m].norm_sqr() + st.v.iter().map(|v| v[m].norm_sqr()).sum::<f64>();
    }
    0.5 * grid.volume() * s
}

/// Non-columnar energy fraction `(||u^h - <u^h>||^2 + ||u^3||^2) / ||u||^2`,
/// with `<.>` the vertical average; 0 for a vanishing velocity.
pub fn columnarization(grid: &Grid, state: &FluidState) -> f64 {
    windowed_columnarization(grid, state, &vec![1.0; grid.len()])
}

/// [`columnarization`] with every integral weighted by `theta`.
pub fn windowed_columnarization(grid: &Grid, state: &FluidState, theta: &[f64]) -> f64 {
    let nv = grid.nv();
    let [u1, u2, u3] = &state.u.components;
    let (a1, a2) = (vertical_average(grid, u1), vertical_average(grid, u2));
    let mut num = 0.0;
    let mut total = 0.0;
    for p in 0..grid.len() {
        let h = p / nv;
        let (x, y, z) = (u1.values[p], u2.values[p], u3.values[p]);
        num += theta[p] * ((x - a1[h]).powi(2) + (y - a2[h]).powi(2) + z * z);
        total += theta[p] * (x * x + y * y + z * z);
    }
    if total == 0.0 {
        0.0
    } else {
        (num / total).clamp(0.0, 1.0)
    }
}

/// Every per-time quantity used by the energy report and bound table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnapshotDiagnostics {
    pub time: f64,
    pub energy: f64,
    pub bd_entropy: f64,
    /// `int rho |Du|^2`.
    pub dissipation_rate: f64,
    pub coriolis_power: f64,
    /// `||rho - 1||_L2`.
    pub rho_dev_l2: f64,
    pub grad_rho_l2: f64,
    pub hess_rho_l2: f64,
    pub sqrt_rho_u_l2: f64,
    /// `1/2 int rho |u + nu grad log rho|^2`.
    pub bd_kinetic: f64,
    /// `int P'(rho) |grad sqrt(rho)|^2`.
    pub bd_pressure_rate: f64,
    pub min_rho: f64,
    pub max_u: f64,
}

pub fn snapshot_diagnostics(
    grid: &Grid,
    state: &FluidState,
    params: &ScaledParams,
) -> Result<SnapshotDiagnostics> {
    check_positive(&state.rho)?;
    let rho = &state.rho.values;
    let g = gradient(grid, rho);
    let h = hessian(grid, rho);
    let n = grid.len();
    let mut dev = 0.0;
    let mut g2 = 0.0;
    let mut h2 = 0.0;
    let mut ke = 0.0;
    let mut bdk = 0.0;
    let mut bdp = 0.0;
    for p in 0..n {
        let r = rho[p];
        dev += (r - 1.0).powi(2);
        let gg: f64 = g.iter().map(|c| c[p] * c[p]).sum();
        g2 += gg;
        h2 += h[0][p].powi(2) + h[3][p].powi(2) + h[5][p].powi(2)
            + 2.0 * (h[1][p].powi(2) + h[2][p].powi(2) + h[4][p].powi(2));
        let u: [f64; 3] = std::array::from_fn(|i| state.u.components[i].values[p]);
        ke += r * u.iter().map(|x| x * x).sum::<f64>();
        bdk += r * (0..3).map(|i| (u[i] + params.nu * g[i][p] / r).powi(2)).sum::<f64>();
        bdp += r.powf(params.gamma - 1.0) * gg / (4.0 * r);
    }
    let w = grid.volume() / n as f64;
    Ok(SnapshotDiagnostics {
        time: state.time,
        energy: energy(grid, state, params)?,
        bd_entropy: bd_entropy(grid, &state.rho, params.nu)?,
        dissipation_rate: dissipation_rate(grid, state),
        coriolis_power: coriolis_power(grid, state),
        rho_dev_l2: (w * dev).sqrt(),
        grad_rho_l2: (w * g2).sqrt(),
        hess_rho_l2: (w * h2).sqrt(),
        sqrt_rho_u_l2: (w * ke).sqrt(),
        bd_kinetic: 0.5 * w * bdk,
        bd_pressure_rate: w * bdp,
        min_rho: state.min_rho(),
        max_u: state.max_u(),
    })
}

/// Cumulative trapezoid integral of `f` over the sample times.
pub fn cumulative_trapezoid(times: &[f64], f: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(times.len());
    let mut acc = 0.0;
    for i in 0..times.len() {
        if i > 0 {
            acc += 0.5 * (times[i] - times[i - 1]) * (f[i] + f[i - 1]);
        }
        out.push(acc);
    }
    out
}

/// `max_t [E(t) + nu int_0^t int rho |Du|^2 - E(0)]`.
pub fn energy_inequality_residual(samples: &[SnapshotDiagnostics], nu: f64) -> Result<f64> {
    if samples.len() < 2 {
        return Err(NskError::InvalidArgument(
            "energy residual needs at least two snapshots".into(),
        ));
    }
    let times: Vec<f64> = samples.iter().map(|s| s.time).collect();
    let d: Vec<f64> = samples.iter().map(|s| nu * s.dissipation_rate).collect();
    let cum = cumulative_trapezoid(&times, &d);
    let e0 = samples[0].energy;
    Ok(samples
        .iter()
        .zip(&cum)
        .map(|(s, c)| s.energy + c - e0)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Energies and norms at the end of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    #[serde(rename = "E_eps")]
    pub e_eps: f64,
    #[serde(rename = "F_eps")]
    pub f_eps: f64,
    /// `nu int_0^T int rho |Du|^2`.
    pub visc_dissipation: f64,
    /// Left side of the BD entropy estimate at `T`.
    pub bd_left: f64,
    pub norms: BTreeMap<String, f64>,
}

pub fn energy_report(samples: &[SnapshotDiagnostics], params: &ScaledParams) -> Result<EnergyReport> {
    let last = samples
        .last()
        .ok_or_else(|| NskError::InvalidArgument("empty trajectory".into()))?;
    let times: Vec<f64> = samples.iter().map(|s| s.time).collect();
    let integral = |f: &dyn Fn(&SnapshotDiagnostics) -> f64| {
        let v: Vec<f64> = samples.iter().map(f).collect();
        *cumulative_trapezoid(&times, &v).last().unwrap()
    };
    let eps2 = params.eps * params.eps;
    let visc = params.nu * integral(&|s| s.dissipation_rate);
    let bd_left = last.bd_kinetic
        + params.nu * params.kappa() / eps2 * integral(&|s| s.hess_rho_l2.powi(2))
        + 4.0 * params.nu / eps2 * integral(&|s| s.bd_pressure_rate);
    Ok(EnergyReport {
        e_eps: last.energy,
        f_eps: last.bd_entropy,
        visc_dissipation: visc,
        bd_left,
        norms: uniform_bound_table(samples, params)?.norms,
    })
}

/// Norms over a trajectory and their rescaled ratios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundTable {
    pub norms: BTreeMap<String, f64>,
    /// `||rho - 1||_{Linf L2} / eps`.
    pub rho_ratio: f64,
    /// `||grad rho||_{Linf L2} / eps^(1 - alpha)`.
    pub grad_ratio: f64,
    /// `||grad rho||_{L2 L2} / eps`.
    pub grad_l2_ratio: f64,
}

pub fn uniform_bound_table(samples: &[SnapshotDiagnostics], params: &ScaledParams) -> Result<BoundTable> {
    if samples.is_empty() {
        return Err(NskError::InvalidArgument("empty trajectory".into()));
    }
    let times: Vec<f64> = samples.iter().map(|s| s.time).collect();
    let sup = |f: &dyn Fn(&SnapshotDiagnostics) -> f64| samples.iter().map(f).fold(0.0, f64::max);
    let l2t = |f: &dyn Fn(&SnapshotDiagnostics) -> f64| {
        let v: Vec<f64> = samples.iter().map(|s| f(s).powi(2)).collect();
        cumulative_trapezoid(&times, &v).last().unwrap().sqrt()
    };
    let mut norms = BTreeMap::new();
    let rho_inf = sup(&|s| s.rho_dev_l2);
    let grad_inf = sup(&|s| s.grad_rho_l2);
    let grad_l2 = l2t(&|s| s.grad_rho_l2);
    norms.insert("rho_minus_1_LinfL2".to_string(), rho_inf);
    norms.insert("grad_rho_LinfL2".to_string(), grad_inf);
    norms.insert("hess_rho_L2L2".to_string(), l2t(&|s| s.hess_rho_l2));
    norms.insert("sqrt_rho_u_LinfL2".to_string(), sup(&|s| s.sqrt_rho_u_l2));
    norms.insert("sqrt_rho_Du_L2L2".to_string(), l2t(&|s| s.dissipation_rate.sqrt()));
    norms.insert("grad_rho_L2L2".to_string(), grad_l2);
    let eps = params.eps;
    Ok(BoundTable {
        norms,
        rho_ratio: rho_inf / eps,
        grad_ratio: grad_inf / eps.powf(1.0 - params.alpha),
        grad_l2_ratio: grad_l2 / eps,
    })
}

/// Writes one row per `(eps, t)` with every snapshot column.
pub fn write_energy_csv(path: &Path, rows: &[(f64, SnapshotDiagnostics)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(ENERGY_COLUMNS)?;
    for (eps, s) in rows {
        w.write_record(
            [
                *eps,
                s.time,
                s.energy,
                s.bd_entropy,
                s.dissipation_rate,
                s.coriolis_power,
                s.rho_dev_l2,
                s.grad_rho_l2,
                s.hess_rho_l2,
                s.sqrt_rho_u_l2,
                s.bd_kinetic,
                s.bd_pressure_rate,
                s.min_rho,
                s.max_u,
            ]
            .iter()
            .map(|v| format!("{v:e}")),
        )?;
    }
    w.flush()?;
    Ok(())
}

pub const ENERGY_COLUMNS: [&str; 14] = [
    "eps",
    "time",
    "E_eps",
    "F_eps",
    "dissipation_rate",
    "coriolis_power",
    "rho_minus_1_L2",
    "grad_rho_L2",
    "hess_rho_L2",
    "sqrt_rho_u_L2",
    "bd_kinetic",
    "bd_pressure_rate",
    "min_rho",
    "max_u",
];

/// Spectral `(r, V)` to a snapshot row; convenience for run loops.
pub fn spectral_snapshot(
    grid: &Grid,
    st: &SpectralState,
    params: &ScaledParams,
) -> Result<(FluidState, SnapshotDiagnostics)> {
    let fs = st.to_fluid(grid, params.eps)?;
    let d = snapshot_diagnostics(grid, &fs, params)?;
    Ok((fs, d))
}

/// Vertical average of a field onto the horizontal plane.
pub fn vertical_average(grid: &Grid, f: &ScalarField) -> Vec<f64> {
    let nv = grid.nv();
    f.values.chunks(nv).map(|c| c.iter().sum::<f64>() / nv as f64).collect()
}

/// Vertical vorticity `d1 u2 - d2 u1`.
pub fn vertical_vorticity(grid: &Grid, u1: &ScalarField, u2: &ScalarField) -> ScalarField {
    let a = grid.forward(u2).expect("grid-sized field");
    let b = grid.forward(u1).expect("grid-sized field");
    let w = grid
        .derivative(&a, Axis::X)
        .add(&grid.derivative(&b, Axis::Y).scale(-1.0));
    let mut out = grid.inverse(&w).expect("grid-sized field");
    out.parity = Parity::Even;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::VectorField;
    use std::f64::consts::PI;

    fn grid() -> Grid {
        Grid::new(16, 8, 2.0 * PI).unwrap()
    }

    #[test]
    fn rest_state_is_zero_everywhere() {
        let g = grid();
        let p = ScaledParams::new(0.1, 1.0, 0.1, 2.0).unwrap();
        let d = snapshot_diagnostics(&g, &FluidState::rest(&g), &p).unwrap();
        assert_eq!(d.energy, 0.0);
        assert_eq!(d.bd_entropy, 0.0);
        assert_eq!(d.dissipation_rate, 0.0);
        assert_eq!(d.rho_dev_l2, 0.0);
        let t = uniform_bound_table(&[d, SnapshotDiagnostics { time: 1.0, ..d }], &p).unwrap();
        assert!(t.norms.values().all(|&v| v == 0.0));
        assert_eq!(energy_inequality_residual(&[d, SnapshotDiagnostics { time: 1.0, ..d }], 0.1).unwrap(), 0.0);
        assert_eq!(columnarization(&g, &FluidState::rest(&g)), 0.0);
    }

    #[test]
    fn kinetic_energy_of_shear() {
        let g = grid();
        let p = ScaledParams::new(0.1, 1.0, 0.1, 2.0).unwrap();
        let mut s = FluidState::rest(&g);
        s.u.components[1] = g.sample(Parity::Even, |x, _, _| x.sin());
        let e = energy(&g, &s, &p).unwrap();
        assert!((e - 0.25 * g.volume()).abs() < 1e-12);
    }

    #[test]
    fn energy_matches_refined_midpoint_rule() {
        let g = grid();
        let p = ScaledParams::new(0.1, 1.0, 0.1, 2.0).unwrap();
        let mut s = FluidState::rest(&g);
        s.rho = g.sample(Parity::Even, |x, _, _| 1.0 + 0.01 * x.sin());
        let e = energy(&g, &s, &p).unwrap();
        let n = 4 * 16;
        let h = 2.0 * PI / n as f64;
        let mut oracle = 0.0;
        for i in 0..n {
            let x = (i as f64 + 0.5) * h;
            let rho = 1.0 + 0.01 * x.sin();
            let drho = 0.01 * x.cos();
            oracle += (0.5 * (rho - 1.0).powi(2) / 0.01 + 0.5 * (0.01 / 0.01) * drho * drho) * h;
        }
        oracle *= 2.0 * PI * 2.0;
        assert!((e - oracle).abs() < 1e-8 * oracle);
    }

    #[test]
    fn bd_entropy_forms_agree_and_scale() {
        let g = grid();
        let rho = g.sample(Parity::Even, |x, _, _| 1.0 + 0.5 * x.sin());
        let a = bd_entropy(&g, &rho, 1.0).unwrap();
        let b = bd_entropy_log_form(&g, &rho, 1.0).unwrap();
        assert!(a > 0.0);
        assert!((a - b).abs() < 1e-10 * a);
        let c = bd_entropy(&g, &rho, 2.0).unwrap();
        assert!((c - 4.0 * a).abs() < 1e-12 * c);
        let one = g.sample(Parity::Even, |_, _, _| 1.0);
        assert_eq!(bd_entropy(&g, &one, 1.0).unwrap(), 0.0);
        let bad = g.sample(Parity::Even, |x, _, _| x.sin());
        assert!(bd_entropy(&g, &bad, 1.0).is_err());
    }

    #[test]
    fn coriolis_does_no_work() {
        let g = grid();
        let mut s = FluidState::rest(&g);
        s.rho = g.sample(Parity::Even, |x, y, _| 1.0 + 0.3 * (x + y).cos());
        s.u.components[0] = g.sample(Parity::Even, |x, y, z| x.sin() * y.cos() + (PI * z).cos());
        s.u.components[1] = g.sample(Parity::Even, |x, _, _| 2.0 * x.cos());
        assert!(coriolis_power(&g, &s).abs() < 1e-14);
    }

    #[test]
    fn columnarization_examples() {
        let g = grid();
        let mut s = FluidState::rest(&g);
        s.u.components[0] = g.sample(Parity::Even, |_, y, _| -y.cos());
        s.u.components[1] = g.sample(Parity::Even, |x, _, _| x.cos());
        assert!(columnarization(&g, &s) < 1e-28);
        let mut s = FluidState::rest(&g);
        s.u = VectorField::zeros(g.len());
        s.u.components[2] = g.sample(Parity::Odd, |_, _, z| (PI * z).sin());
        assert!((columnarization(&g, &s) - 1.0).abs() < 1e-14);
        let mut s = FluidState::rest(&g);
        s.u.components[0] = g.sample(Parity::Even, |x, _, z| x.cos() * (1.0 + (PI * z).cos()));
        assert!((columnarization(&g, &s) - 1.0 / 3.0).abs() < 1e-12);
        let theta = vec![2.0; g.len()];
        assert!((windowed_columnarization(&g, &s, &theta) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn initial_deviation_is_eps_times_r0() {
        let g = grid();
        let p = ScaledParams::new(0.05, 1.0, 0.1, 2.0).unwrap();
        let r0 = g.sample(Parity::Even, |x, y, _| x.sin() + 0.5 * y.cos());
        let s = crate::solver::initialize(&g, &r0, &VectorField::zeros(g.len()), &p).unwrap();
        let d = snapshot_diagnostics(&g, &s, &p).unwrap();
        assert!((d.rho_dev_l2 - 0.05 * g.l2_norm_sq(&r0).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn trapezoid_is_exact_for_linear_functions() {
        let t = [0.0, 0.5, 1.5, 2.0];
        let f: Vec<f64> = t.iter().map(|x| 3.0 * x + 1.0).collect();
        let c = cumulative_trapezoid(&t, &f);
        assert!((c[3] - (1.5 * 4.0 + 2.0)).abs() < 1e-14);
    }

    #[test]
    fn csv_has_fixed_columns() {
        let g = grid();
        let p = ScaledParams::new(0.1, 1.0, 0.1, 2.0).unwrap();
        let d = snapshot_diagnostics(&g, &FluidState::rest(&g), &p).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        write_energy_csv(&path, &[(0.1, d), (0.05, d)]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], ENERGY_COLUMNS.join(","));
    }
}
