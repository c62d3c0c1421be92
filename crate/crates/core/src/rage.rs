//! Wiener and RAGE time averages on synthetic spectral measures and on
//! band-limited acoustic evolutions.

use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acoustic::{CMatrix4, CVector4, ModePropagator};
use crate::error::{NskError, Result};
use crate::grid::Grid;
use crate::params::ScaledParams;
use crate::solver::{linear_symbol, SpectralState};

/// Piecewise-linear density sampled on a uniform grid of `[a, b]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcDensity {
    pub a: f64,
    pub b: f64,
    pub samples: Vec<f64>,
}

impl AcDensity {
    pub fn uniform(a: f64, b: f64, mass: f64, n: usize) -> Self {
        Self {
            a,
            b,
            samples: vec![mass / (b - a); n.max(2)],
        }
    }

    pub fn step(&self) -> f64 {
        (self.b - self.a) / (self.samples.len() - 1) as f64
    }

    /// Trapezoid mass, exact for the interpolant.
    pub fn mass(&self) -> f64 {
        let h = self.step();
        let s = &self.samples;
        h * (s.iter().sum::<f64>() - 0.5 * (s[0] + s[s.len() - 1]))
    }
}

/// Finite measure made of atoms and an optional absolutely continuous part.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SpectralMeasure {
    pub atoms: Vec<(f64, f64)>,
    pub ac: Option<AcDensity>,
}

impl SpectralMeasure {
    pub fn atom(x: f64, mass: f64) -> Self {
        Self {
            atoms: vec![(x, mass)],
            ac: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for &(x, m) in &self.atoms {
            if !(x.is_finite() && m >= 0.0 && m.is_finite()) {
                return Err(NskError::InvalidArgument(format!("invalid atom ({x}, {m})")));
            }
        }
        if let Some(d) = &self.ac {
            if !(d.a.is_finite() && d.b.is_finite() && d.b > d.a) || d.samples.len() < 2 {
                return Err(NskError::InvalidArgument("density needs an interval and two samples".into()));
            }
            if d.samples.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return Err(NskError::InvalidArgument("density samples must be nonnegative".into()));
            }
        }
        Ok(())
    }

    /// `sum_x mu({x})^2`, merging atoms at equal locations.
    pub fn pure_point_sum(&self) -> f64 {
        let mut atoms = self.atoms.clone();
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut out = 0.0;
        let mut i = 0;
        while i < atoms.len() {
            let mut m = atoms[i].1;
            let mut k = i + 1;
            while k < atoms.len() && atoms[k].0 == atoms[i].0 {
                m += atoms[k].1;
                k += 1;
            }
            out += m * m;
            i = k;
        }
        out
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.1).sum::<f64>() + self.ac.as_ref().map_or(0.0, |d| d.mass())
    }

    fn extent(&self) -> f64 {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &(x, _) in &self.atoms {
            lo = lo.min(x);
            hi = hi.max(x);
        }
        if let Some(d) = &self.ac {
            lo = lo.min(d.a);
            hi = hi.max(d.b);
        }
        if hi > lo {
            hi - lo
        } else {
            0.0
        }
    }
}

/// `int_0^h (f0 + (f1 - f0) s / h) e^{-i t s} ds`.
fn linear_segment(f0: f64, f1: f64, h: f64, t: f64) -> Complex64 {
    let th = t * h;
    let (i0, i1) = if th.abs() < 1e-3 {
        let i0 = Complex64::new(h * (1.0 - th * th / 6.0), -h * th / 2.0 * (1.0 - th * th / 12.0));
        let i1 = Complex64::new(h * h * (0.5 - th * th / 8.0), -h * h * th / 3.0 * (1.0 - th * th / 10.0));
        (i0, i1)
    } else {
        let e = Complex64::from_polar(1.0, -th);
        let i = Complex64::i();
        let i0 = (Complex64::new(1.0, 0.0) - e) / (i * t);
        let i1 = e * (i * h / t + 1.0 / (t * t)) - 1.0 / (t * t);
        (i0, i1)
    };
    i0 * f0 + i1 * ((f1 - f0) / h)
}

/// `F(t) = int e^{-ixt} dmu(x)`, exact for atoms and for the interpolated density.
pub fn fourier_transform_measure(mu: &SpectralMeasure, t: f64) -> Complex64 {
    let mut f: Complex64 = mu
        .atoms
        .iter()
        .map(|&(x, m)| Complex64::from_polar(m, -x * t))
        .sum();
    if let Some(d) = &mu.ac {
        let h = d.step();
        for (k, w) in d.samples.windows(2).enumerate() {
            let x0 = d.a + k as f64 * h;
            f += Complex64::from_polar(1.0, -x0 * t) * linear_segment(w[0], w[1], h, t);
        }
    }
    f
}

fn simpson_adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        simpson_adaptive(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + simpson_adaptive(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}

/// Adaptive Simpson on panels narrow enough to see every oscillation of `f`.
fn integrate_oscillatory(f: &(dyn Fn(f64) -> f64 + Sync), a: f64, b: f64, bandwidth: f64, tol: f64) -> f64 {
    let panels = ((b - a) * bandwidth.max(1.0) / std::f64::consts::PI * 2.0).ceil().max(1.0) as usize;
    let h = (b - a) / panels as f64;
    (0..panels)
        .into_par_iter()
        .map(|k| {
            let x0 = a + k as f64 * h;
            let x1 = x0 + h;
            let (f0, fm, f1) = (f(x0), f(0.5 * (x0 + x1)), f(x1));
            let whole = h / 6.0 * (f0 + 4.0 * fm + f1);
            simpson_adaptive(f, x0, x1, f0, fm, f1, whole, tol / panels as f64, 30)
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum()
}

/// `(1/2T) int_{-T}^{T} |F(t)|^2 dt`.
pub fn wiener_average(mu: &SpectralMeasure, t_max: f64) -> Result<f64> {
    mu.validate()?;
    if !(t_max > 0.0 && t_max.is_finite()) {
        return Err(NskError::InvalidArgument(format!("averaging time {t_max} must be positive")));
    }
    let total = mu.total_mass();
    let f = |t: f64| fourier_transform_measure(mu, t).norm_sqr();
    let tol = 1e-10 * (total * total).max(1e-300) * t_max;
    Ok(integrate_oscillatory(&f, 0.0, t_max, mu.extent(), tol) / t_max)
}

/// `(1/2T) int_{-T}^{T} |F_eps(t/eps)|^2 dt` for the member `mu_eps` of a family.
pub fn coupled_wiener_average<F>(family: F, t_max: f64, eps: f64) -> Result<f64>
where
    F: Fn(f64) -> Result<SpectralMeasure>,
{
    if !(eps > 0.0) {
        return Err(NskError::InvalidArgument(format!("eps = {eps} must be positive")));
    }
    let mu = family(eps)?;
    wiener_average(&mu, t_max / eps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledReport {
    pub values: Vec<(f64, f64)>,
    /// Pure-point sum of the `eps = 0` member.
    pub target: f64,
    pub final_error: f64,
    pub pass: bool,
}

/// Coupled averages along a decreasing `eps` sequence against the limit sum.
pub fn coupled_sweep<F>(family: F, t_max: f64, eps_list: &[f64], tol: f64) -> Result<CoupledReport>
where
    F: Fn(f64) -> Result<SpectralMeasure>,
{
    if eps_list.is_empty() {
        return Err(NskError::InvalidArgument("empty eps list".into()));
    }
    let target = family(0.0)?.pure_point_sum();
    let values = eps_list
        .iter()
        .map(|&e| Ok((e, coupled_wiener_average(&family, t_max, e)?)))
        .collect::<Result<Vec<_>>>()?;
    let final_error = (values.last().unwrap().1 - target).abs();
    Ok(CoupledReport {
        values,
        target,
        final_error,
        pass: final_error < tol,
    })
}

/// `K = P_M theta P_M`: truncation `|xi^h| + |k| <= m` and a spatial window.
#[derive(Debug, Clone, PartialEq)]
pub struct CutoffOperator {
    pub m: f64,
    pub theta: Vec<f64>,
}

impl CutoffOperator {
    pub fn new(grid: &Grid, m: f64, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != grid.len() {
            return Err(NskError::SizeMismatch {
                expected: grid.len(),
                found: theta.len(),
            });
        }
        if theta.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(NskError::InvalidArgument("window values must lie in [0, 1]".into()));
        }
        if !(m > 0.0) {
            return Err(NskError::InvalidArgument(format!("truncation radius {m} must be positive")));
        }
        Ok(Self { m, theta })
    }

    pub fn in_band(&self, grid: &Grid, m: usize) -> bool {
        let [a, b, k] = grid.wavevector(m);
        a.hypot(b) + k.abs() <= self.m + 1e-12
    }
}

/// Norm in which the windowed energy is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnergyNorm {
    Flat,
    /// `S = diag(1 + kappa zeta, 1, 1, 1)`.
    Symmetrizer,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RageResult {
    pub eps: f64,
    pub t_max: f64,
    pub average: f64,
    /// `||Y||^2` in the chosen norm; the trivial bound on the average.
    pub norm_bound: f64,
    pub samples: usize,
}

struct ModeData {
    slot: usize,
    basis: CMatrix4,
    coords: CVector4,
    mu: [f64; 4],
    root_weight: f64,
}

/// `(1/T) int_0^T || K^{1/2} exp(-t A / eps) Q^perp Y ||^2 dt` by the trapezoid
/// rule with at least eight samples per shortest period.
pub fn rage_time_average(
    grid: &Grid,
    y: &SpectralState,
    params: &ScaledParams,
    t_max: f64,
    cutoff: &CutoffOperator,
    norm: EnergyNorm,
) -> Result<RageResult> {
    params.validate()?;
    if !(t_max > 0.0 && t_max.is_finite()) {
        return Err(NskError::InvalidArgument(format!("averaging time {t_max} must be positive")));
    }
    if cutoff.theta.len() != grid.len() || y.r.len() != grid.len() {
        return Err(NskError::SizeMismatch {
            expected: grid.len(),
            found: y.r.len(),
        });
    }
    let scale = (0..grid.len()).map(|m| y.mode(m).norm()).fold(0.0, f64::max);
    let mut modes = Vec::new();
    let mut norm_bound = 0.0;
    let mut mu_max: f64 = 0.0;
    for m in 0..grid.len() {
        let x = y.mode(m);
        if x.norm() <= 1e-14 * scale {
            continue;
        }
        if !cutoff.in_band(grid, m) {
            if x.norm() > 1e-12 * scale {
                return Err(NskError::InvalidArgument(format!(
                    "initial data has content at mode {:?} outside the truncation",
                    grid.mode_indices(m)
                )));
            }
            continue;
        }
        let sym = linear_symbol(grid, m, params);
        let prop = ModePropagator::new(&sym);
        let mu = prop.frequencies();
        let top = mu.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        let mut coords = prop.modal_coordinates(&x);
        let mut active: f64 = 0.0;
        for i in 0..4 {
            if mu[i].abs() <= 1e-10 * top.max(1.0) {
                coords[i] = Complex64::new(0.0, 0.0);
            } else if coords[i].norm() > 1e-10 * x.norm() {
                active = active.max(mu[i].abs());
            }
        }
        let w = sym.s[0];
        let root_weight = match norm {
            EnergyNorm::Flat => 1.0,
            EnergyNorm::Symmetrizer => w.sqrt(),
        };
        let nx = match norm {
            EnergyNorm::Flat => x.norm_squared(),
            EnergyNorm::Symmetrizer => sym.s_norm_sq(&x),
        };
        norm_bound += nx;
        mu_max = mu_max.max(active);
        modes.push(ModeData {
            slot: m,
            basis: prop.modal_basis(),
            coords,
            mu,
            root_weight,
        });
    }
    norm_bound *= grid.volume();
    let eps = params.eps;
    let period = if mu_max > 0.0 {
        2.0 * std::f64::consts::PI * eps / mu_max
    } else {
        t_max
    };
    let steps = ((8.0 * t_max / period).ceil() as usize).max(8);
    let h = t_max / steps as f64;
    let n = grid.len();
    let energy_at = |t: f64| -> f64 {
        let tau = t / eps;
        let mut fields = vec![vec![Complex64::new(0.0, 0.0); n]; 4];
        for md in &modes {
            let ph = CVector4::from_fn(|i, _| md.coords[i] * Complex64::from_polar(1.0, tau * md.mu[i]));
            let v = md.basis * ph;
            fields[0][md.slot] = v[0] * md.root_weight;
            for c in 1..4 {
                fields[c][md.slot] = v[c];
            }
        }
        let phys: Vec<Vec<f64>> = fields.iter().map(|f| grid.inverse_values(f)).collect();
        let dens: Vec<f64> = (0..n)
            .map(|p| cutoff.theta[p] * phys.iter().map(|f| f[p] * f[p]).sum::<f64>())
            .collect();
        grid.integrate(&dens)
    };
    let values: Vec<f64> = (0..=steps).into_par_iter().map(|k| energy_at(k as f64 * h)).collect();
    let integral = h * (values.iter().sum::<f64>() - 0.5 * (values[0] + values[steps]));
    Ok(RageResult {
        eps,
        t_max,
        average: integral / t_max,
        norm_bound,
        samples: steps + 1,
    })
}

/// Averages along an `eps` sweep with the same data, window and norm.
pub fn rage_sweep(
    grid: &Grid,
    y: &SpectralState,
    base: &ScaledParams,
    eps_list: &[f64],
    t_max: f64,
    cutoff: &CutoffOperator,
    norm: EnergyNorm,
) -> Result<Vec<RageResult>> {
    eps_list
        .iter()
        .map(|&eps| {
            let p = ScaledParams { eps, ..*base };
            rage_time_average(grid, y, &p, t_max, cutoff, norm)
        })
        .collect()
}

/// Monotone decrease along the sweep and a final-to-initial ratio below `ratio`.
pub fn rage_sweep_passes(rows: &[RageResult], ratio: f64) -> bool {
    let monotone = rows.windows(2).all(|w| w[1].average < w[0].average);
    let first = rows.first().map_or(0.0, |r| r.average);
    let last = rows.last().map_or(0.0, |r| r.average);
    monotone && first > 0.0 && last / first < ratio
}

pub fn write_rage_csv(path: &Path, rows: &[RageResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["eps", "T", "average", "norm_bound"])?;
    for r in rows {
        w.write_record([r.eps, r.t_max, r.average, r.norm_bound].iter().map(|v| format!("{v:e}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Density datum `g(x^h) cos(pi x3)` with `g` a centred Gaussian of the given
/// width, truncated to `|xi^h| <= modes dxi`, zero momentum.
pub fn broadband_datum(grid: &Grid, width: f64, modes: usize) -> Result<SpectralState> {
    if !(width > 0.0) {
        return Err(NskError::InvalidArgument(format!("bump width {width} must be positive")));
    }
    let c = 0.5 * grid.lh();
    let f = grid.sample(crate::grid::Parity::Even, |x, y, z| {
        (-((x - c).powi(2) + (y - c).powi(2)) / (2.0 * width * width)).exp() * (std::f64::consts::PI * z).cos()
    });
    let kmax = modes as f64 * grid.dxi() + 1e-12;
    let spec = grid.forward(&f)?;
    let mut st = SpectralState::zeros(grid.len());
    for m in 0..grid.len() {
        let [a, b, k] = grid.wavevector(m);
        if a.hypot(b) <= kmax && (k.abs() - std::f64::consts::PI).abs() < 1e-9 && grid.is_retained(m) {
            st.r[m] = spec.coeffs[m];
        }
    }
    Ok(st)
}

/// Smooth bump `exp(-|x - c|^2 / (2 s^2))` in the horizontal variables, constant in `x3`.
pub fn gaussian_window(grid: &Grid, width: f64) -> Vec<f64> {
    let c = 0.5 * grid.lh();
    (0..grid.len())
        .map(|m| {
            let (i, j, _) = grid.split(m);
            let dx = grid.x1(i) - c;
            let dy = grid.x1(j) - c;
            (-(dx * dx + dy * dy) / (2.0 * width * width)).exp()
        })
        .collect()
}
