//! Epsilon sweeps of the simulator against the quasi-geostrophic reference.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{self, SnapshotDiagnostics};
use crate::error::{NskError, Result};
use crate::grid::{Axis, Grid, Parity, PlaneGrid, ScalarField, VectorField};
use crate::params::{Regime, ScaledParams};
use crate::qg::{self, QgSolver, QgState};
use crate::solver::{Solver, SpectralState};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub nh: usize,
    pub nv: usize,
    pub lh: f64,
}

impl GridSpec {
    pub fn build(&self) -> Result<Grid> {
        Grid::new(self.nh, self.nv, self.lh)
    }
}

/// Named analytic profiles for `r0`, centred in the horizontal box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensityProfile {
    Zero,
    /// `A g(x^h)`, independent of `x3`.
    GaussianColumn { amplitude: f64, width: f64 },
    /// `A g(x^h) (1 + vertical cos(pi x3))`.
    Gaussian { amplitude: f64, width: f64, vertical: f64 },
}

/// Named analytic profiles for `u0`; a list of them is summed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VelocityProfile {
    /// `A grad_perp psi(r0)`, with the limit stream function of the regime.
    Geostrophic { amplitude: f64 },
    /// `(A g(x^h) cos(pi x3), 0, 0)`.
    ColumnShear { amplitude: f64, width: f64 },
    /// `A grad_h g(x^h)`.
    Divergent { amplitude: f64, width: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub r0: DensityProfile,
    #[serde(default)]
    pub u0: Vec<VelocityProfile>,
}

fn default_samples() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub eps_list: Vec<f64>,
    pub alpha: f64,
    pub gamma: f64,
    pub nu: f64,
    pub t_final: f64,
    pub grid: GridSpec,
    pub initial: InitialSpec,
    /// Upper bound on the time step of both solvers; the simulator also
    /// caps its step at `eps/4`.
    #[serde(default)]
    pub dt: Option<f64>,
    /// Number of sampling intervals on `[0, T]` for the time norms.
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Width of the Gaussian window `theta`; `None` measures on the full box.
    #[serde(default)]
    pub window: Option<f64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl SweepConfig {
    pub fn regime(&self) -> Regime {
        if self.alpha == 0.0 {
            Regime::Constant
        } else {
            Regime::Vanishing
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.eps_list.is_empty() {
            return Err(NskError::InvalidParams("eps_list must not be empty".into()));
        }
        if self.eps_list.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(NskError::InvalidParams("eps_list must be strictly decreasing".into()));
        }
        for &eps in &self.eps_list {
            ScaledParams::new(eps, self.alpha, self.nu, self.gamma)?;
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(NskError::InvalidParams(format!("t_final = {} must be positive", self.t_final)));
        }
        if self.samples == 0 {
            return Err(NskError::InvalidParams("samples must be at least 1".into()));
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(NskError::InvalidParams(format!("dt = {dt} must be positive")));
            }
        }
        if let Some(w) = self.window {
            if !(w > 0.0 && w.is_finite()) {
                return Err(NskError::InvalidParams(format!("window = {w} must be positive")));
            }
        }
        self.grid.build()?;
        Ok(())
    }
}

fn gaussian(grid: &Grid, width: f64) -> impl Fn(f64, f64) -> f64 {
    let c = 0.5 * grid.lh();
    move |x, y| (-((x - c).powi(2) + (y - c).powi(2)) / (2.0 * width * width)).exp()
}

pub fn build_r0(grid: &Grid, profile: &DensityProfile) -> ScalarField {
    match *profile {
        DensityProfile::Zero => ScalarField::zeros(grid.len(), Parity::Even),
        DensityProfile::GaussianColumn { amplitude, width } => {
            let g = gaussian(grid, width);
            grid.sample(Parity::Even, |x, y, _| amplitude * g(x, y))
        }
        DensityProfile::Gaussian {
            amplitude,
            width,
            vertical,
        } => {
            let g = gaussian(grid, width);
            grid.sample(Parity::Even, |x, y, z| {
                amplitude * g(x, y) * (1.0 + vertical * (std::f64::consts::PI * z).cos())
            })
        }
    }
}

pub fn build_u0(grid: &Grid, r0: &ScalarField, profiles: &[VelocityProfile], regime: Regime) -> Result<VectorField> {
    let mut u = VectorField::zeros(grid.len());
    for p in profiles {
        let add: [ScalarField; 2] = match *p {
            VelocityProfile::Geostrophic { amplitude } => {
                let c = grid.forward(r0)?;
                let psi = grid.apply_symbol(&c, Parity::Even, |[a, b, _]| {
                    num_complex::Complex64::new(amplitude * qg::stream_symbol(regime, a * a + b * b), 0.0)
                });
                let [a, b] = grid.perp_grad_h(&psi);
                [grid.inverse(&a)?, grid.inverse(&b)?]
            }
            VelocityProfile::ColumnShear { amplitude, width } => {
                let g = gaussian(grid, width);
                [
                    grid.sample(Parity::Even, |x, y, z| amplitude * g(x, y) * (std::f64::consts::PI * z).cos()),
                    ScalarField::zeros(grid.len(), Parity::Even),
                ]
            }
            VelocityProfile::Divergent { amplitude, width } => {
                let g = gaussian(grid, width);
                let f = grid.sample(Parity::Even, |x, y, _| amplitude * g(x, y));
                let c = grid.forward(&f)?;
                [
                    grid.inverse(&grid.derivative(&c, Axis::X))?,
                    grid.inverse(&grid.derivative(&c, Axis::Y))?,
                ]
            }
        };
        for (i, a) in add.iter().enumerate() {
            for (v, x) in u.components[i].values.iter_mut().zip(&a.values) {
                *v += x;
            }
        }
    }
    Ok(u)
}

/// One row of the report; `None` for quantities of an aborted leg.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub eps: f64,
    /// `||r_eps - r||_{L2_T L2}`.
    pub dist_r: Option<f64>,
    /// `||rho^{3/2} u_eps - u||_{L2_T L2}`.
    pub dist_u: Option<f64>,
    pub columnarization: Option<f64>,
    pub rho_ratio: Option<f64>,
    pub grad_ratio: Option<f64>,
    pub grad_l2_ratio: Option<f64>,
    /// Energy inequality residual relative to `E(0)`.
    pub energy_residual: Option<f64>,
    pub status: String,
}

impl ReportRow {
    fn failed(eps: f64, status: String) -> Self {
        Self {
            eps,
            dist_r: None,
            dist_u: None,
            columnarization: None,
            rho_ratio: None,
            grad_ratio: None,
            grad_l2_ratio: None,
            energy_residual: None,
            status,
        }
    }

    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub column: String,
    pub slope: Option<f64>,
    pub r2: Option<f64>,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub schema_version: u32,
    #[serde(default)]
    pub config_hash: Option<String>,
    pub config: Option<SweepConfig>,
    pub rows: Vec<ReportRow>,
    pub slopes: Vec<SlopeFit>,
    pub checks: Vec<Check>,
    pub pass: bool,
}

impl ConvergenceReport {
    pub fn empty() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            config_hash: None,
            config: None,
            rows: Vec::new(),
            slopes: Vec::new(),
            checks: Vec::new(),
            pass: true,
        }
    }

    pub fn from_rows(config: Option<SweepConfig>, rows: Vec<ReportRow>) -> Self {
        let slopes = ["dist_r", "dist_u", "columnarization"]
            .iter()
            .map(|&c| slope_for(&rows, c))
            .collect();
        let checks = sweep_checks(&rows);
        let pass = checks.iter().all(|c| c.pass);
        Self {
            schema_version: SCHEMA_VERSION,
            config_hash: None,
            config,
            rows,
            slopes,
            checks,
            pass,
        }
    }
}

fn column(row: &ReportRow, name: &str) -> Option<f64> {
    match name {
        "dist_r" => row.dist_r,
        "dist_u" => row.dist_u,
        "columnarization" => row.columnarization,
        "rho_ratio" => row.rho_ratio,
        "grad_ratio" => row.grad_ratio,
        "grad_l2_ratio" => row.grad_l2_ratio,
        "energy_residual" => row.energy_residual,
        _ => None,
    }
}

fn slope_for(rows: &[ReportRow], name: &str) -> SlopeFit {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.ok())
        .filter_map(|r| column(r, name).map(|v| (r.eps, v)))
        .collect();
    let eps: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let vals: Vec<f64> = pts.iter().map(|p| p.1).collect();
    match fit_rate(&eps, &vals) {
        Ok((s, r2)) => SlopeFit {
            column: name.into(),
            slope: Some(s),
            r2: Some(r2),
            note: String::new(),
        },
        Err(e) => SlopeFit {
            column: name.into(),
            slope: None,
            r2: None,
            note: format!("undefined: {e}"),
        },
    }
}

fn nonincreasing(rows: &[ReportRow], name: &str) -> Check {
    let vals: Vec<Option<f64>> = rows.iter().map(|r| column(r, name)).collect();
    let pass = vals.iter().all(|v| v.is_some()) && vals.windows(2).all(|w| w[1].unwrap() <= w[0].unwrap());
    Check {
        name: format!("{name}_nonincreasing"),
        pass,
        detail: format!("{vals:?}"),
    }
}

/// Pass flags of a sweep: completed legs, the `3x` band of the density
/// ratio and monotone columnarization and distance along decreasing `eps`.
pub fn sweep_checks(rows: &[ReportRow]) -> Vec<Check> {
    let failed: Vec<String> = rows
        .iter()
        .filter(|r| !r.ok())
        .map(|r| format!("eps = {}: {}", r.eps, r.status))
        .collect();
    let ratios: Vec<f64> = rows.iter().filter_map(|r| r.rho_ratio).collect();
    let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().cloned().fold(0.0, f64::max);
    vec![
        Check {
            name: "legs_completed".into(),
            pass: failed.is_empty(),
            detail: failed.join("; "),
        },
        Check {
            name: "rho_ratio_band".into(),
            pass: !ratios.is_empty() && ratios.len() == rows.len() && hi <= 3.0 * lo,
            detail: format!("min {lo:e}, max {hi:e}"),
        },
        nonincreasing(rows, "columnarization"),
        nonincreasing(rows, "dist_r"),
    ]
}

/// Least-squares slope and `r^2` of `log(value)` against `log(eps)`.
pub fn fit_rate(eps: &[f64], values: &[f64]) -> Result<(f64, f64)> {
    if eps.len() != values.len() {
        return Err(NskError::SizeMismatch {
            expected: eps.len(),
            found: values.len(),
        });
    }
    if eps.len() < 3 {
        return Err(NskError::InvalidArgument(format!("{} rows, need at least 3", eps.len())));
    }
    if eps.iter().chain(values).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(NskError::InvalidArgument("nonpositive value in column".into()));
    }
    let x: Vec<f64> = eps.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok((slope, r2))
}

/// QG reference sampled at the sweep's sampling times.
#[derive(Debug, Clone)]
pub struct Reference {
    pub times: Vec<f64>,
    pub r: Vec<Vec<f64>>,
    pub u: Vec<[Vec<f64>; 2]>,
}

pub fn sample_times(t_final: f64, samples: usize) -> Vec<f64> {
    (0..=samples).map(|k| t_final * k as f64 / samples as f64).collect()
}

pub fn qg_reference(config: &SweepConfig, grid: &Grid, r0: &ScalarField, u0: &VectorField) -> Result<Reference> {
    let regime = config.regime();
    let plane = PlaneGrid::of(grid);
    let solver = QgSolver::new(plane.clone(), regime, config.nu)?;
    let r_bar = solver.project(&qg::qg_initial_from_data(grid, r0, u0, regime)?)?;
    let times = sample_times(config.t_final, config.samples);
    let mut state = QgState::new(r_bar, regime);
    let mut r = Vec::with_capacity(times.len());
    let mut u = Vec::with_capacity(times.len());
    for &t in &times {
        while state.time < t - 1e-12 {
            let limit = solver.advective_limit(&state.r)?;
            let mut dt = (0.25 * limit).min(t - state.time);
            if let Some(cap) = config.dt {
                dt = dt.min(cap);
            }
            state = solver.step(&state, dt)?;
        }
        u.push(qg::stream_velocity(&plane, &state.r, regime)?);
        r.push(state.r.clone());
    }
    Ok(Reference { times, r, u })
}

fn window(grid: &Grid, width: Option<f64>) -> Vec<f64> {
    match width {
        Some(w) => crate::rage::gaussian_window(grid, w),
        None => vec![1.0; grid.len()],
    }
}

fn leg_status(e: &NskError) -> String {
    match e {
        NskError::Vacuum { time, .. } => format!("vacuum at t = {time}"),
        NskError::Cfl { .. } => format!("cfl: {e}"),
        other => format!("error: {other}"),
    }
}

/// Runs one `eps` leg; aborted legs return a flagged row.
pub fn run_leg(config: &SweepConfig, eps: f64, reference: &Reference) -> ReportRow {
    match run_leg_inner(config, eps, reference) {
        Ok(row) => row,
        Err(e) => ReportRow::failed(eps, leg_status(&e)),
    }
}

fn run_leg_inner(config: &SweepConfig, eps: f64, reference: &Reference) -> Result<ReportRow> {
    let grid = config.grid.build()?;
    let params = ScaledParams::new(eps, config.alpha, config.nu, config.gamma)?;
    let r0 = build_r0(&grid, &config.initial.r0);
    let u0 = build_u0(&grid, &r0, &config.initial.u0, config.regime())?;
    let mut solver = Solver::new(grid.clone(), params)?;
    let fs = solver.initialize(&r0, &u0)?;
    let mut st = SpectralState::from_fluid(&grid, &fs, eps)?;
    let theta = window(&grid, config.window);
    let nv = grid.nv();
    let mut diags: Vec<SnapshotDiagnostics> = Vec::new();
    let mut dr = Vec::new();
    let mut du = Vec::new();
    let mut last = fs;
    for (k, &t) in reference.times.iter().enumerate() {
        while st.time < t - 1e-12 {
            let max_u = solver.max_velocity(&st);
            let cap = config.dt.unwrap_or(f64::INFINITY).min(0.25 * eps).min(t - st.time);
            let dt = solver.default_dt(max_u, cap);
            solver.step_spectral(&mut st, dt)?;
            let f = st.to_fluid(&grid, eps)?;
            if f.min_rho() < 1e-6 {
                return Err(NskError::Vacuum {
                    min_rho: f.min_rho(),
                    time: f.time,
                });
            }
            if !f.is_finite() {
                return Err(NskError::NonFinite("simulated state"));
            }
            diags.push(diagnostics::snapshot_diagnostics(&grid, &f, &params)?);
            last = f;
        }
        if k == 0 {
            diags.push(diagnostics::snapshot_diagnostics(&grid, &last, &params)?);
        }
        let (rq, uq) = (&reference.r[k], &reference.u[k]);
        let mut sr = 0.0;
        let mut su = 0.0;
        for p in 0..grid.len() {
            let h = p / nv;
            let rho = last.rho.values[p];
            let r = (rho - 1.0) / eps;
            sr += theta[p] * (r - rq[h]).powi(2);
            let w = rho.powf(1.5);
            let u = &last.u.components;
            su += theta[p]
                * ((w * u[0].values[p] - uq[0][h]).powi(2)
                    + (w * u[1].values[p] - uq[1][h]).powi(2)
                    + (w * u[2].values[p]).powi(2));
        }
        let cell = grid.volume() / grid.len() as f64;
        dr.push(sr * cell);
        du.push(su * cell);
    }
    diags.sort_by(|a, b| a.time.total_cmp(&b.time));
    let t_int = |v: &[f64]| {
        let c = diagnostics::cumulative_trapezoid(&reference.times, v);
        c.last().copied().unwrap_or(0.0).sqrt()
    };
    let table = diagnostics::uniform_bound_table(&diags, &params)?;
    let e0 = diags[0].energy;
    let resid = diagnostics::energy_inequality_residual(&diags, config.nu).unwrap_or(0.0);
    Ok(ReportRow {
        eps,
        dist_r: Some(t_int(&dr)),
        dist_u: Some(t_int(&du)),
        columnarization: Some(diagnostics::windowed_columnarization(&grid, &last, &theta)),
        rho_ratio: Some(table.rho_ratio),
        grad_ratio: Some(table.grad_ratio),
        grad_l2_ratio: Some(table.grad_l2_ratio),
        energy_residual: Some(if e0 > 0.0 { resid / e0 } else { resid }),
        status: "ok".into(),
    })
}

/// Runs every leg of a validated configuration; legs run in parallel.
pub fn run_sweep(config: &SweepConfig) -> Result<ConvergenceReport> {
    config.validate()?;
    let grid = config.grid.build()?;
    let r0 = build_r0(&grid, &config.initial.r0);
    let u0 = build_u0(&grid, &r0, &config.initial.u0, config.regime())?;
    let reference = qg_reference(config, &grid, &r0, &u0)?;
    let rows: Vec<ReportRow> = config
        .eps_list
        .par_iter()
        .map(|&eps| run_leg(config, eps, &reference))
        .collect();
    Ok(ConvergenceReport::from_rows(Some(config.clone()), rows))
}

pub const REPORT_COLUMNS: [&str; 9] = [
    "eps",
    "dist_r",
    "dist_u",
    "columnarization",
    "rho_ratio",
    "grad_ratio",
    "grad_l2_ratio",
    "energy_residual",
    "status",
];

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:e}"))
}

fn comment_header(hash: &Option<String>) -> String {
    match hash {
        Some(h) => format!("# schema_version={SCHEMA_VERSION} config_hash={h}\n"),
        None => format!("# schema_version={SCHEMA_VERSION}\n"),
    }
}

/// Writes `convergence.csv` (one row per eps), `convergence_long.csv`
/// (eps, quantity, value, status) and `convergence.json` into `dir`.
pub fn export(report: &ConvergenceReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let wide = dir.join("convergence.csv");
    let long = dir.join("convergence_long.csv");
    let json = dir.join("convergence.json");

    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(REPORT_COLUMNS)?;
        for r in &report.rows {
            let mut rec: Vec<String> = vec![format!("{:e}", r.eps)];
            for c in &REPORT_COLUMNS[1..8] {
                rec.push(fmt_opt(column(r, c)));
            }
            rec.push(r.status.clone());
            w.write_record(&rec)?;
        }
        w.flush()?;
    }
    let mut f = std::fs::File::create(&wide)?;
    f.write_all(comment_header(&report.config_hash).as_bytes())?;
    f.write_all(&buf)?;

    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(["eps", "quantity", "value", "status"])?;
        for r in &report.rows {
            for c in &REPORT_COLUMNS[1..8] {
                w.write_record([format!("{:e}", r.eps), c.to_string(), fmt_opt(column(r, c)), r.status.clone()])?;
            }
        }
        w.flush()?;
    }
    let mut f = std::fs::File::create(&long)?;
    f.write_all(comment_header(&report.config_hash).as_bytes())?;
    f.write_all(&buf)?;

    std::fs::write(&json, serde_json::to_string_pretty(report)?)?;
    Ok(vec![wide, long, json])
}

/// Reads the rows of a `convergence.csv` written by [`export`].
pub fn read_report_csv(path: &Path) -> Result<Vec<ReportRow>> {
    let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let parse = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse::<f64>()
                .map(Some)
                .map_err(|e| NskError::Format(format!("bad number {s:?}: {e}")))
        }
    };
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let get = |i: usize| rec.get(i).unwrap_or("");
        rows.push(ReportRow {
            eps: parse(get(0))?.ok_or_else(|| NskError::Format("missing eps".into()))?,
            dist_r: parse(get(1))?,
            dist_u: parse(get(2))?,
            columnarization: parse(get(3))?,
            rho_ratio: parse(get(4))?,
            grad_ratio: parse(get(5))?,
            grad_l2_ratio: parse(get(6))?,
            energy_residual: parse(get(7))?,
            status: get(8).to_string(),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_config(eps_list: Vec<f64>) -> SweepConfig {
        SweepConfig {
            eps_list,
            alpha: 1.0,
            gamma: 2.0,
            nu: 0.05,
            t_final: 0.2,
            grid: GridSpec {
                nh: 16,
                nv: 4,
                lh: 4.0 * std::f64::consts::PI,
            },
            initial: InitialSpec {
                r0: DensityProfile::GaussianColumn {
                    amplitude: 1.0,
                    width: 1.5,
                },
                u0: vec![VelocityProfile::Geostrophic { amplitude: 1.0 }],
            },
            dt: Some(0.02),
            samples: 4,
            window: None,
            output_dir: None,
        }
    }

    fn row(eps: f64, v: f64) -> ReportRow {
        ReportRow {
            eps,
            dist_r: Some(v),
            dist_u: Some(v),
            columnarization: Some(v),
            rho_ratio: Some(1.0),
            grad_ratio: Some(1.0),
            grad_l2_ratio: Some(1.0),
            energy_residual: Some(0.0),
            status: "ok".into(),
        }
    }

    #[test]
    fn fit_rate_examples() {
        let eps = [0.2, 0.1, 0.05, 0.025];
        let (s, r2) = fit_rate(&eps, &eps).unwrap();
        assert!((s - 1.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
        let (s, _) = fit_rate(&eps, &[2.0; 4]).unwrap();
        assert!(s.abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let eps: Vec<f64> = (0..8).map(|k| 0.5f64.powi(k)).collect();
        let v: Vec<f64> = eps.iter().map(|e| 3.0 * e.sqrt() * (1.0 + 0.01 * rng.gen_range(-1.0..1.0))).collect();
        let (s, _) = fit_rate(&eps, &v).unwrap();
        assert!((s - 0.5).abs() < 0.05);
        assert!(fit_rate(&eps[..2], &v[..2]).is_err());
        assert!(fit_rate(&[0.1, 0.05, 0.02], &[1.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(small_config(vec![0.2, 0.1]).validate().is_ok());
        assert!(small_config(vec![0.1, 0.2]).validate().is_err());
        let mut c = small_config(vec![0.1]);
        c.alpha = 0.5;
        c.gamma = 1.5;
        assert!(c.validate().unwrap_err().to_string().contains("gamma = 2"));
        let text = r#"{"eps_list":[0.1],"alpha":1,"gamma":2,"nu":0.1,"t_final":1,
            "grid":{"nh":16,"nv":4,"lh":6.0},"initial":{"r0":{"kind":"zero"}},"extra":1}"#;
        assert!(serde_json::from_str::<SweepConfig>(text).is_err());
        let text = text.replace(",\"extra\":1", "");
        let c: SweepConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(c.samples, 20);
        let bad = r#"{"kind":"gaussian_column","amplitude":1,"width":1,"typo":2}"#;
        assert!(serde_json::from_str::<DensityProfile>(bad).is_err());
    }

    #[test]
    fn single_eps_sweep_has_undefined_slopes() {
        let rep = run_sweep(&small_config(vec![0.1])).unwrap();
        assert_eq!(rep.rows.len(), 1);
        assert!(rep.rows[0].ok(), "{:?}", rep.rows[0]);
        assert!(rep.slopes.iter().all(|s| s.slope.is_none() && s.note.starts_with("undefined")));
    }

    #[test]
    fn failing_leg_is_flagged_and_sweep_continues() {
        let mut c = small_config(vec![0.5, 0.1]);
        c.initial.r0 = DensityProfile::GaussianColumn {
            amplitude: -3.0,
            width: 1.5,
        };
        let rep = run_sweep(&c).unwrap();
        assert_eq!(rep.rows.len(), 2);
        assert!(!rep.rows[0].ok());
        assert!(rep.rows[0].status.contains("nonpositive") || rep.rows[0].status.contains("vacuum"));
        assert!(rep.rows[1].ok());
        assert!(!rep.pass);
    }

    #[test]
    fn sweep_is_deterministic() {
        let c = small_config(vec![0.2, 0.1]);
        let a = run_sweep(&c).unwrap();
        let b = run_sweep(&c).unwrap();
        let da = tempfile::tempdir().unwrap();
        let db = tempfile::tempdir().unwrap();
        export(&a, da.path()).unwrap();
        export(&b, db.path()).unwrap();
        for f in ["convergence.csv", "convergence_long.csv", "convergence.json"] {
            assert_eq!(
                std::fs::read(da.path().join(f)).unwrap(),
                std::fs::read(db.path().join(f)).unwrap()
            );
        }
    }

    #[test]
    fn export_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let empty = ConvergenceReport::empty();
        export(&empty, dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 1);

        let rows: Vec<ReportRow> = (0..5).map(|k| row(0.1 / (1 << k) as f64, 1.0 / 3.0 + k as f64)).collect();
        let mut rep = ConvergenceReport::from_rows(None, rows.clone());
        rep.rows[2] = ReportRow::failed(rep.rows[2].eps, "vacuum at t = 0.5".into());
        rep.config_hash = Some("abc123".into());
        let files = export(&rep, dir.path()).unwrap();
        let back = read_report_csv(&files[0]).unwrap();
        assert_eq!(back, rep.rows);
        let text = std::fs::read_to_string(&files[0]).unwrap();
        assert!(text.starts_with("# schema_version=1 config_hash=abc123"));
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 6);
        let json: ConvergenceReport = serde_json::from_str(&std::fs::read_to_string(&files[2]).unwrap()).unwrap();
        assert_eq!(json.schema_version, SCHEMA_VERSION);
        assert_eq!(json.rows[2].status, "vacuum at t = 0.5");
    }

    #[test]
    fn checks_follow_the_rows() {
        let good: Vec<ReportRow> = [(0.2, 3.0), (0.1, 2.0), (0.05, 1.0)].iter().map(|&(e, v)| row(e, v)).collect();
        assert!(ConvergenceReport::from_rows(None, good.clone()).pass);
        let mut bad = good;
        bad[2].dist_r = Some(5.0);
        let rep = ConvergenceReport::from_rows(None, bad);
        assert!(!rep.pass);
        assert!(rep.checks.iter().any(|c| c.name == "dist_r_nonincreasing" && !c.pass));
    }

    #[test]
    fn geostrophic_data_is_in_the_kernel() {
        let mut c = small_config(vec![0.1]);
        c.grid.nh = 32;
        c.initial.r0 = DensityProfile::GaussianColumn {
            amplitude: 1.0,
            width: 1.0,
        };
        let g = c.grid.build().unwrap();
        let r0 = build_r0(&g, &c.initial.r0);
        let u0 = build_u0(&g, &r0, &c.initial.u0, Regime::Vanishing).unwrap();
        let d = g.div_h(&g.forward(&u0.components[0]).unwrap(), &g.forward(&u0.components[1]).unwrap());
        assert!(g.spectral_norm_sq(&d).sqrt() < 1e-12);
        let rbar = qg::qg_initial_from_data(&g, &r0, &u0, Regime::Vanishing).unwrap();
        let err = rbar
            .iter()
            .enumerate()
            .map(|(h, v)| (v - r0.values[h * g.nv()]).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-8, "{err}");
    }
}
