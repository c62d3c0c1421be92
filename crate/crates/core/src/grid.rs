//! Fourier representation of the periodic box `[0, Lh)^2 x [-1, 1)`.
//!
//! The vertical interval `[0, 1]` with slip walls is replaced by its even/odd
//! reflection on `[-1, 1)`, so every field carries a vertical parity tag.
//!
//! Coefficients are normalised so that
//! `f(x) = sum_m c_m exp(i (xi1 x1 + xi2 x2 + k x3))`, with `xi = 2 pi n / Lh`
//! horizontally and `k = pi n3` vertically. A constant field has `c_0 = 1`.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::error::{NskError, Result};

/// Vertical parity of a field under `x3 -> -x3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Even,
    Odd,
}

impl Parity {
    pub fn flip(self) -> Self {
        match self {
            Parity::Even => Parity::Odd,
            Parity::Odd => Parity::Even,
        }
    }

    pub fn sign(self) -> f64 {
        match self {
            Parity::Even => 1.0,
            Parity::Odd => -1.0,
        }
    }

    /// Parity of a product of two fields.
    pub fn times(self, other: Parity) -> Parity {
        if self == other {
            Parity::Even
        } else {
            Parity::Odd
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Axis> {
        match i {
            0 => Some(Axis::X),
            1 => Some(Axis::Y),
            2 => Some(Axis::Z),
            _ => None,
        }
    }
}

/// Real samples of a scalar field on the grid, row-major `(x1, x2, x3)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub values: Vec<f64>,
    pub parity: Parity,
}

impl ScalarField {
    pub fn new(values: Vec<f64>, parity: Parity) -> Self {
        Self { values, parity }
    }

    pub fn zeros(len: usize, parity: Parity) -> Self {
        Self {
            values: vec![0.0; len],
            parity,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Three scalar components; `u^h` even and `u^3` odd for physical velocities.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub components: [ScalarField; 3],
}

impl VectorField {
    pub fn new(components: [ScalarField; 3]) -> Self {
        Self { components }
    }

    /// Zero field with the velocity parity convention.
    pub fn zeros(len: usize) -> Self {
        Self {
            components: [
                ScalarField::zeros(len, Parity::Even),
                ScalarField::zeros(len, Parity::Even),
                ScalarField::zeros(len, Parity::Odd),
            ],
        }
    }

    pub fn max_norm(&self) -> f64 {
        let n = self.components[0].len();
        (0..n)
            .map(|p| {
                self.components
                    .iter()
                    .map(|c| c.values[p] * c.values[p])
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }
}

/// Fourier coefficients of a real field on the full lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    pub coeffs: Vec<Complex64>,
    pub parity: Parity,
}

impl SpectralField {
    pub fn zeros(len: usize, parity: Parity) -> Self {
        Self {
            coeffs: vec![Complex64::new(0.0, 0.0); len],
            parity,
        }
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn scale(mut self, s: f64) -> Self {
        self.coeffs.iter_mut().for_each(|c| *c *= s);
        self
    }

    pub fn add(mut self, other: &SpectralField) -> Self {
        self.coeffs
            .iter_mut()
            .zip(&other.coeffs)
            .for_each(|(a, b)| *a += b);
        self
    }
}

/// Signed lattice index of FFT slot `i` on an axis of length `n`.
/// The Nyquist slot maps to `-n/2`.
pub fn signed_index(i: usize, n: usize) -> i64 {
    if i < n / 2 || n == 1 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

type Plan = Arc<dyn Fft<f64>>;

/// FFT plans for a row-major lattice of shape `[n0, n1, n2]`.
struct Transforms {
    shape: [usize; 3],
    plans: [Option<(Plan, Plan)>; 3],
}

impl Transforms {
    fn new(shape: [usize; 3]) -> Self {
        let mut planner = FftPlanner::new();
        let mut plan = |n: usize| {
            (n > 1).then(|| (planner.plan_fft_forward(n), planner.plan_fft_inverse(n)))
        };
        let plans = [plan(shape[0]), plan(shape[1]), plan(shape[2])];
        Self { shape, plans }
    }

    fn len(&self) -> usize {
        self.shape.iter().product()
    }

    /// Unnormalised transform of all axes in place.
    fn process(&self, data: &mut [Complex64], inverse: bool) {
        for axis in 0..3 {
            if let Some((fwd, inv)) = &self.plans[axis] {
                let plan = if inverse { inv } else { fwd };
                self.process_axis(data, axis, plan);
            }
        }
    }

    fn process_axis(&self, data: &mut [Complex64], axis: usize, plan: &Plan) {
        let n = self.shape[axis];
        let post: usize = self.shape[axis + 1..].iter().product();
        let lines_per_task = (4096 / n).max(1);
        if post == 1 {
            data.par_chunks_mut(n * lines_per_task)
                .for_each(|chunk| plan.process(chunk));
            return;
        }
        let block = n * post;
        data.par_chunks_mut(block).for_each(|blk| {
            let mut scratch = vec![Complex64::new(0.0, 0.0); block];
            scratch.par_chunks_mut(n).enumerate().for_each(|(q, line)| {
                for (t, v) in line.iter_mut().enumerate() {
                    *v = blk[t * post + q];
                }
            });
            scratch
                .par_chunks_mut(n * lines_per_task)
                .for_each(|chunk| plan.process(chunk));
            blk.par_chunks_mut(post).enumerate().for_each(|(t, row)| {
                for (q, v) in row.iter_mut().enumerate() {
                    *v = scratch[q * n + t];
                }
            });
        });
    }
}

struct Lattice {
    shape: [usize; 3],
    transforms: Transforms,
    wavenumbers: [Vec<f64>; 3],
    /// Same as `wavenumbers` with the Nyquist slot zeroed.
    derivative_wavenumbers: [Vec<f64>; 3],
    /// `(-1)^n` on the vertical axis, whose samples start at `x3 = -1`.
    vertical_phase: Vec<f64>,
}

impl Lattice {
    fn new(shape: [usize; 3], spacing: [f64; 3]) -> Self {
        let wavenumbers: [Vec<f64>; 3] = std::array::from_fn(|a| {
            (0..shape[a])
                .map(|i| spacing[a] * signed_index(i, shape[a]) as f64)
                .collect()
        });
        let derivative_wavenumbers: [Vec<f64>; 3] = std::array::from_fn(|a| {
            (0..shape[a])
                .map(|i| {
                    if shape[a] > 1 && 2 * i == shape[a] {
                        0.0
                    } else {
                        wavenumbers[a][i]
                    }
                })
                .collect()
        });
        let vertical_phase = (0..shape[2])
            .map(|l| {
                if signed_index(l, shape[2]).rem_euclid(2) == 0 {
                    1.0
                } else {
                    -1.0
                }
            })
            .collect();
        Self {
            shape,
            transforms: Transforms::new(shape),
            wavenumbers,
            derivative_wavenumbers,
            vertical_phase,
        }
    }

    fn len(&self) -> usize {
        self.transforms.len()
    }

    fn split(&self, m: usize) -> (usize, usize, usize) {
        let [_, n1, n2] = self.shape;
        (m / (n1 * n2), (m / n2) % n1, m % n2)
    }

    fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transforms.process(&mut data, false);
        let norm = 1.0 / self.len() as f64;
        let phase = &self.vertical_phase;
        data.par_chunks_mut(self.shape[2]).for_each(|line| {
            for (c, p) in line.iter_mut().zip(phase) {
                *c *= norm * p;
            }
        });
        data
    }

    fn inverse(&self, coeffs: &[Complex64]) -> Vec<f64> {
        let phase = &self.vertical_phase;
        let mut data = coeffs.to_vec();
        data.par_chunks_mut(self.shape[2]).for_each(|line| {
            for (c, p) in line.iter_mut().zip(phase) {
                *c *= p;
            }
        });
        self.transforms.process(&mut data, true);
        data.into_par_iter().map(|c| c.re).collect()
    }

    fn mirror(&self, m: usize) -> usize {
        let (i, j, l) = self.split(m);
        let [n0, n1, n2] = self.shape;
        let r = |i: usize, n: usize| (n - i) % n;
        (r(i, n0) * n1 + r(j, n1)) * n2 + r(l, n2)
    }

    fn dealias_mask(&self) -> Vec<bool> {
        let cut: [i64; 3] = std::array::from_fn(|a| (self.shape[a] / 3) as i64);
        (0..self.len())
            .map(|m| {
                let (i, j, l) = self.split(m);
                signed_index(i, self.shape[0]).abs() <= cut[0]
                    && signed_index(j, self.shape[1]).abs() <= cut[1]
                    && signed_index(l, self.shape[2]).abs() <= cut[2]
            })
            .collect()
    }
}

fn check_power_of_two(n: usize, min: usize, name: &str) -> Result<()> {
    if !n.is_power_of_two() {
        return Err(NskError::InvalidGrid(format!("{name} = {n} is not a power of two")));
    }
    if n < min {
        return Err(NskError::InvalidGrid(format!("{name} = {n} below minimum {min}")));
    }
    Ok(())
}

fn check_length(lh: f64) -> Result<()> {
    if !(lh > 0.0 && lh.is_finite()) {
        return Err(NskError::InvalidGrid(format!("Lh = {lh} must be positive")));
    }
    Ok(())
}

fn zero_masked(coeffs: &mut [Complex64], mask: &[bool]) {
    coeffs
        .par_iter_mut()
        .zip(mask.par_iter())
        .for_each(|(c, &keep)| {
            if !keep {
                *c = Complex64::new(0.0, 0.0);
            }
        });
}

/// Periodic 3-D box with vertical period 2. Cloning shares the FFT plans.
#[derive(Clone)]
pub struct Grid {
    nh: usize,
    nv: usize,
    lh: f64,
    lattice: Arc<Lattice>,
    dealias: Arc<Vec<bool>>,
}

impl std::fmt::Debug for Grid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Grid")
            .field("nh", &self.nh)
            .field("nv", &self.nv)
            .field("lh", &self.lh)
            .finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.nh == other.nh && self.nv == other.nv && self.lh == other.lh
    }
}

impl Grid {
    pub const LV: f64 = 2.0;

    pub fn new(nh: usize, nv: usize, lh: f64) -> Result<Self> {
        check_power_of_two(nh, 8, "Nh")?;
        check_power_of_two(nv, 4, "Nv")?;
        check_length(lh)?;
        let dxi = 2.0 * PI / lh;
        let lattice = Lattice::new([nh, nh, nv], [dxi, dxi, PI]);
        let dealias = lattice.dealias_mask();
        Ok(Self {
            nh,
            nv,
            lh,
            lattice: Arc::new(lattice),
            dealias: Arc::new(dealias),
        })
    }

    pub fn nh(&self) -> usize {
        self.nh
    }

    pub fn nv(&self) -> usize {
        self.nv
    }

    pub fn lh(&self) -> f64 {
        self.lh
    }

    pub fn len(&self) -> usize {
        self.nh * self.nh * self.nv
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn volume(&self) -> f64 {
        self.lh * self.lh * Self::LV
    }

    pub fn dx(&self) -> f64 {
        self.lh / self.nh as f64
    }

    pub fn dz(&self) -> f64 {
        Self::LV / self.nv as f64
    }

    /// Smallest nonzero horizontal wavenumber.
    pub fn dxi(&self) -> f64 {
        2.0 * PI / self.lh
    }

    pub fn index(&self, i: usize, j: usize, l: usize) -> usize {
        (i * self.nh + j) * self.nv + l
    }

    pub fn split(&self, m: usize) -> (usize, usize, usize) {
        self.lattice.split(m)
    }

    pub fn x1(&self, i: usize) -> f64 {
        i as f64 * self.dx()
    }

    pub fn x3(&self, l: usize) -> f64 {
        -1.0 + l as f64 * self.dz()
    }

    /// Signed horizontal indices in FFT order, `{0..3, -4..-1}` for `Nh = 8`.
    pub fn horizontal_indices(&self) -> Vec<i64> {
        (0..self.nh).map(|i| signed_index(i, self.nh)).collect()
    }

    pub fn horizontal_wavenumbers(&self) -> &[f64] {
        &self.lattice.wavenumbers[0]
    }

    pub fn vertical_wavenumbers(&self) -> &[f64] {
        &self.lattice.wavenumbers[2]
    }

    /// `(xi1, xi2, k)` of a mode slot.
    pub fn wavevector(&self, m: usize) -> [f64; 3] {
        let (i, j, l) = self.split(m);
        let w = &self.lattice.wavenumbers;
        [w[0][i], w[1][j], w[2][l]]
    }

    /// Wavevector with Nyquist components zeroed, as used by first derivatives.
    pub fn derivative_wavevector(&self, m: usize) -> [f64; 3] {
        let (i, j, l) = self.split(m);
        let w = &self.lattice.derivative_wavenumbers;
        [w[0][i], w[1][j], w[2][l]]
    }

    pub fn mode_indices(&self, m: usize) -> [i64; 3] {
        let (i, j, l) = self.split(m);
        [
            signed_index(i, self.nh),
            signed_index(j, self.nh),
            signed_index(l, self.nv),
        ]
    }

    /// Slot holding the coefficient of `-xi`.
    pub fn mirror(&self, m: usize) -> usize {
        self.lattice.mirror(m)
    }

    /// Grid point reflected through `x3 = 0`.
    pub fn reflect_point(&self, m: usize) -> usize {
        let (i, j, l) = self.split(m);
        self.index(i, j, (self.nv - l) % self.nv)
    }

    pub fn is_retained(&self, m: usize) -> bool {
        self.dealias[m]
    }

    pub fn sample<F>(&self, parity: Parity, f: F) -> ScalarField
    where
        F: Fn(f64, f64, f64) -> f64 + Sync,
    {
        let values = (0..self.len())
            .into_par_iter()
            .map(|m| {
                let (i, j, l) = self.split(m);
                f(self.x1(i), self.x1(j), self.x3(l))
            })
            .collect();
        ScalarField::new(values, parity)
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n != self.len() {
            return Err(NskError::SizeMismatch {
                expected: self.len(),
                found: n,
            });
        }
        Ok(())
    }

    pub fn forward(&self, field: &ScalarField) -> Result<SpectralField> {
        self.check_len(field.len())?;
        Ok(SpectralField {
            coeffs: self.lattice.forward(&field.values),
            parity: field.parity,
        })
    }

    pub fn inverse(&self, spec: &SpectralField) -> Result<ScalarField> {
        self.check_len(spec.len())?;
        Ok(ScalarField::new(self.lattice.inverse(&spec.coeffs), spec.parity))
    }

    pub(crate) fn forward_values(&self, values: &[f64]) -> Vec<Complex64> {
        self.lattice.forward(values)
    }

    pub(crate) fn inverse_values(&self, coeffs: &[Complex64]) -> Vec<f64> {
        self.lattice.inverse(coeffs)
    }

    /// Multiplies each coefficient by `symbol(xi1, xi2, k)`.
    pub fn apply_symbol<F>(&self, spec: &SpectralField, parity: Parity, symbol: F) -> SpectralField
    where
        F: Fn([f64; 3]) -> Complex64 + Sync,
    {
        let coeffs = spec
            .coeffs
            .par_iter()
            .enumerate()
            .map(|(m, c)| c * symbol(self.wavevector(m)))
            .collect();
        SpectralField { coeffs, parity }
    }

    /// Multiplication by `i xi_axis`, Nyquist slot zeroed.
    pub fn derivative(&self, spec: &SpectralField, axis: Axis) -> SpectralField {
        let mut coeffs = spec.coeffs.clone();
        self.derivative_in_place(&mut coeffs, axis);
        let parity = if axis == Axis::Z {
            spec.parity.flip()
        } else {
            spec.parity
        };
        SpectralField { coeffs, parity }
    }

    pub(crate) fn derivative_in_place(&self, coeffs: &mut [Complex64], axis: Axis) {
        let a = axis.index();
        let k = &self.lattice.derivative_wavenumbers[a];
        coeffs.par_iter_mut().enumerate().for_each(|(m, c)| {
            let (i, j, l) = self.split(m);
            *c *= Complex64::new(0.0, k[[i, j, l][a]]);
        });
    }

    pub fn laplacian_h(&self, spec: &SpectralField) -> SpectralField {
        self.apply_symbol(spec, spec.parity, |[a, b, _]| Complex64::new(-(a * a + b * b), 0.0))
    }

    pub fn laplacian(&self, spec: &SpectralField) -> SpectralField {
        self.apply_symbol(spec, spec.parity, |[a, b, c]| {
            Complex64::new(-(a * a + b * b + c * c), 0.0)
        })
    }

    pub fn grad(&self, spec: &SpectralField) -> [SpectralField; 3] {
        Axis::ALL.map(|a| self.derivative(spec, a))
    }

    pub fn div(&self, v: &[SpectralField; 3]) -> SpectralField {
        self.derivative(&v[0], Axis::X)
            .add(&self.derivative(&v[1], Axis::Y))
            .add(&self.derivative(&v[2], Axis::Z))
    }

    pub fn div_h(&self, v1: &SpectralField, v2: &SpectralField) -> SpectralField {
        self.derivative(v1, Axis::X).add(&self.derivative(v2, Axis::Y))
    }

    /// `(-d2 f, d1 f)`.
    pub fn perp_grad_h(&self, spec: &SpectralField) -> [SpectralField; 2] {
        let d1 = self.derivative(spec, Axis::X);
        let d2 = self.derivative(spec, Axis::Y);
        [d2.scale(-1.0), d1]
    }

    /// Zeroes every mode with some `|n| > floor(N/3)`.
    pub fn dealias(&self, spec: &SpectralField) -> SpectralField {
        let mut out = spec.clone();
        self.dealias_in_place(&mut out.coeffs);
        out
    }

    pub(crate) fn dealias_in_place(&self, coeffs: &mut [Complex64]) {
        zero_masked(coeffs, &self.dealias);
    }

    pub fn mean(&self, field: &ScalarField) -> f64 {
        field.values.iter().sum::<f64>() / field.len() as f64
    }

    /// Integral over the box by the rectangle rule (exact for resolved trigonometric fields).
    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.volume() * values.iter().sum::<f64>() / values.len() as f64
    }

    pub fn l2_norm_sq(&self, field: &ScalarField) -> f64 {
        self.volume() * field.values.iter().map(|v| v * v).sum::<f64>() / field.len() as f64
    }

    /// `|Omega| sum |c|^2`.
    pub fn spectral_norm_sq(&self, spec: &SpectralField) -> f64 {
        self.volume() * spec.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>()
    }

    /// Max deviation from the declared parity at grid points.
    pub fn parity_defect(&self, field: &ScalarField) -> f64 {
        let s = field.parity.sign();
        (0..self.len())
            .map(|m| (field.values[m] - s * field.values[self.reflect_point(m)]).abs())
            .fold(0.0, f64::max)
    }

    /// Max deviation from `c(-xi) = conj(c(xi))`.
    pub fn hermitian_defect(&self, spec: &SpectralField) -> f64 {
        (0..self.len())
            .map(|m| (spec.coeffs[m] - spec.coeffs[self.mirror(m)].conj()).norm())
            .fold(0.0, f64::max)
    }

    /// Extends samples on `x3 in [0, 1]` (`Nv/2 + 1` levels per column,
    /// row-major `(x1, x2, x3)`) to the periodic interval by reflection.
    ///
    /// An odd field must vanish at `x3 = 0`. At the identified endpoint
    /// `x3 = +-1` an odd extension takes the midpoint value 0.
    pub fn symmetric_extension(&self, half: &[f64], parity: Option<Parity>) -> Result<ScalarField> {
        let parity = parity.ok_or(NskError::MissingParity)?;
        let nz = self.nv / 2 + 1;
        let plane = self.nh * self.nh;
        if half.len() != plane * nz {
            return Err(NskError::SizeMismatch {
                expected: plane * nz,
                found: half.len(),
            });
        }
        let scale = half.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0);
        let mid = self.nv / 2;
        let mut values = vec![0.0; self.len()];
        for p in 0..plane {
            let src = &half[p * nz..(p + 1) * nz];
            if parity == Parity::Odd && src[0].abs() > 1e-12 * scale {
                return Err(NskError::ParityConflict(format!(
                    "odd extension of a field with trace {} at x3 = 0",
                    src[0]
                )));
            }
            let dst = &mut values[p * self.nv..(p + 1) * self.nv];
            for (lp, &v) in src.iter().enumerate().take(nz - 1) {
                dst[mid + lp] = v;
                if lp > 0 {
                    dst[mid - lp] = parity.sign() * v;
                }
            }
            match parity {
                Parity::Even => dst[0] = src[nz - 1],
                Parity::Odd => {
                    dst[0] = 0.0;
                    dst[mid] = 0.0;
                }
            }
        }
        Ok(ScalarField::new(values, parity))
    }
}

/// Horizontal periodic plane used by the 2-D limit equations.
#[derive(Clone)]
pub struct PlaneGrid {
    n: usize,
    lh: f64,
    lattice: Arc<Lattice>,
    dealias: Arc<Vec<bool>>,
}

impl std::fmt::Debug for PlaneGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PlaneGrid")
            .field("n", &self.n)
            .field("lh", &self.lh)
            .finish()
    }
}

impl PlaneGrid {
    pub fn new(n: usize, lh: f64) -> Result<Self> {
        check_power_of_two(n, 8, "Nh")?;
        check_length(lh)?;
        let dxi = 2.0 * PI / lh;
        let lattice = Lattice::new([n, n, 1], [dxi, dxi, 0.0]);
        let dealias = lattice.dealias_mask();
        Ok(Self {
            n,
            lh,
            lattice: Arc::new(lattice),
            dealias: Arc::new(dealias),
        })
    }

    /// The horizontal plane of a 3-D grid.
    pub fn of(grid: &Grid) -> Self {
        Self::new(grid.nh(), grid.lh()).expect("3-D grid already validated")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn lh(&self) -> f64 {
        self.lh
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn area(&self) -> f64 {
        self.lh * self.lh
    }

    pub fn dx(&self) -> f64 {
        self.lh / self.n as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.dx()
    }

    pub fn split(&self, m: usize) -> (usize, usize) {
        (m / self.n, m % self.n)
    }

    pub fn wavevector(&self, m: usize) -> [f64; 2] {
        let (i, j) = self.split(m);
        let w = &self.lattice.wavenumbers;
        [w[0][i], w[1][j]]
    }

    pub fn mode_indices(&self, m: usize) -> [i64; 2] {
        let (i, j) = self.split(m);
        [signed_index(i, self.n), signed_index(j, self.n)]
    }

    pub fn mirror(&self, m: usize) -> usize {
        self.lattice.mirror(m)
    }

    pub fn sample<F>(&self, f: F) -> Vec<f64>
    where
        F: Fn(f64, f64) -> f64 + Sync,
    {
        (0..self.len())
            .into_par_iter()
            .map(|m| {
                let (i, j) = self.split(m);
                f(self.x(i), self.x(j))
            })
            .collect()
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n != self.len() {
            return Err(NskError::SizeMismatch {
                expected: self.len(),
                found: n,
            });
        }
        Ok(())
    }

    pub fn forward(&self, values: &[f64]) -> Result<Vec<Complex64>> {
        self.check_len(values.len())?;
        Ok(self.lattice.forward(values))
    }

    pub fn inverse(&self, coeffs: &[Complex64]) -> Result<Vec<f64>> {
        self.check_len(coeffs.len())?;
        Ok(self.lattice.inverse(coeffs))
    }

    pub fn apply<F>(&self, coeffs: &[Complex64], symbol: F) -> Vec<Complex64>
    where
        F: Fn([f64; 2]) -> Complex64 + Sync,
    {
        coeffs
            .par_iter()
            .enumerate()
            .map(|(m, c)| c * symbol(self.wavevector(m)))
            .collect()
    }

    /// Horizontal derivative; `Axis::Z` is rejected.
    pub fn derivative(&self, coeffs: &[Complex64], axis: Axis) -> Result<Vec<Complex64>> {
        let a = axis.index();
        if a > 1 {
            return Err(NskError::InvalidArgument("plane fields have no vertical axis".into()));
        }
        let k = &self.lattice.derivative_wavenumbers[a];
        Ok(coeffs
            .par_iter()
            .enumerate()
            .map(|(m, c)| {
                let (i, j) = self.split(m);
                c * Complex64::new(0.0, k[[i, j][a]])
            })
            .collect())
    }

    pub fn dx1(&self, coeffs: &[Complex64]) -> Vec<Complex64> {
        self.derivative(coeffs, Axis::X).expect("horizontal axis")
    }

    pub fn dx2(&self, coeffs: &[Complex64]) -> Vec<Complex64> {
        self.derivative(coeffs, Axis::Y).expect("horizontal axis")
    }

    pub fn laplacian(&self, coeffs: &[Complex64]) -> Vec<Complex64> {
        self.apply(coeffs, |[a, b]| Complex64::new(-(a * a + b * b), 0.0))
    }

    /// `(-d2 f, d1 f)`.
    pub fn perp_grad(&self, coeffs: &[Complex64]) -> [Vec<Complex64>; 2] {
        let d1 = self.dx1(coeffs);
        let d2: Vec<Complex64> = self.dx2(coeffs).into_iter().map(|c| -c).collect();
        [d2, d1]
    }

    pub fn div(&self, v1: &[Complex64], v2: &[Complex64]) -> Vec<Complex64> {
        let a = self.dx1(v1);
        let b = self.dx2(v2);
        a.into_iter().zip(b).map(|(x, y)| x + y).collect()
    }

    pub fn is_retained(&self, m: usize) -> bool {
        self.dealias[m]
    }

    pub fn dealias_in_place(&self, coeffs: &mut [Complex64]) {
        zero_masked(coeffs, &self.dealias);
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.area() * values.iter().sum::<f64>() / values.len() as f64
    }

    /// L2 inner product of two real fields given by their coefficients.
    pub fn inner(&self, a: &[Complex64], b: &[Complex64]) -> f64 {
        self.area() * a.iter().zip(b).map(|(x, y)| (x * y.conj()).re).sum::<f64>()
    }

    pub fn norm_sq(&self, a: &[Complex64]) -> f64 {
        self.area() * a.iter().map(|c| c.norm_sqr()).sum::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(grid: &Grid, parity: Parity, seed: u64) -> ScalarField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f64> = (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let s = parity.sign();
        let sym = (0..grid.len())
            .map(|m| 0.5 * (v[m] + s * v[grid.reflect_point(m)]))
            .collect();
        ScalarField::new(sym, parity)
    }

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn lattice_of_small_grid() {
        let g = Grid::new(8, 4, 2.0 * PI).unwrap();
        let mut idx = g.horizontal_indices();
        idx.sort();
        assert_eq!(idx, (-4..=3).collect::<Vec<_>>());
        let g = Grid::new(16, 8, 4.0 * PI).unwrap();
        assert!((g.dxi() - 0.5).abs() < 1e-15);
        assert!((g.horizontal_wavenumbers()[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn bad_sizes_rejected() {
        assert!(matches!(Grid::new(7, 4, 1.0), Err(NskError::InvalidGrid(_))));
        assert!(Grid::new(8, 6, 1.0).is_err());
        assert!(Grid::new(4, 4, 1.0).is_err());
        assert!(Grid::new(8, 2, 1.0).is_err());
        assert!(Grid::new(8, 4, 0.0).is_err());
        assert!(Grid::new(8, 4, -1.0).is_err());
    }

    #[test]
    fn constant_and_sine_coefficients() {
        let g = Grid::new(8, 4, 3.0).unwrap();
        let c = g.forward(&g.sample(Parity::Even, |_, _, _| 1.0)).unwrap();
        assert!((c.coeffs[0] - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        assert!(c.coeffs[1..].iter().all(|z| z.norm() < 1e-15));

        let lh = g.lh();
        let s = g.sample(Parity::Even, |x, _, _| (2.0 * PI * x / lh).sin());
        let c = g.forward(&s).unwrap();
        let big: Vec<usize> = (0..g.len()).filter(|&m| c.coeffs[m].norm() > 1e-12).collect();
        assert_eq!(big.len(), 2);
        for &m in &big {
            assert!((c.coeffs[m].norm() - 0.5).abs() < 1e-14);
        }
        assert!((c.coeffs[big[0]] - c.coeffs[big[1]].conj()).norm() < 1e-15);
    }

    #[test]
    fn vertical_coefficients_use_the_true_origin() {
        let g = Grid::new(8, 8, 2.0 * PI).unwrap();
        let c = g.forward(&g.sample(Parity::Even, |_, _, z| (PI * z).cos())).unwrap();
        assert!((c.coeffs[g.index(0, 0, 1)] - Complex64::new(0.5, 0.0)).norm() < 1e-14);
        let c = g.forward(&g.sample(Parity::Odd, |_, _, z| (PI * z).sin())).unwrap();
        assert!((c.coeffs[g.index(0, 0, 1)] - Complex64::new(0.0, -0.5)).norm() < 1e-14);
    }

    #[test]
    fn round_trip_and_parseval() {
        let g = Grid::new(16, 8, 5.0).unwrap();
        let f = random_field(&g, Parity::Even, 7);
        let c = g.forward(&f).unwrap();
        let back = g.inverse(&c).unwrap();
        assert!(max_diff(&f.values, &back.values) < 1e-12 * f.max_abs());
        let l2 = g.l2_norm_sq(&f);
        assert!((l2 - g.spectral_norm_sq(&c)).abs() < 1e-12 * l2);
        assert!(g.hermitian_defect(&c) < 1e-15);
    }

    #[test]
    fn size_mismatch() {
        let g = Grid::new(8, 4, 1.0).unwrap();
        let f = ScalarField::zeros(10, Parity::Even);
        assert!(matches!(g.forward(&f), Err(NskError::SizeMismatch { .. })));
        assert!(g.inverse(&SpectralField::zeros(3, Parity::Even)).is_err());
    }

    #[test]
    fn derivative_of_sine() {
        let g = Grid::new(32, 4, 2.0 * PI).unwrap();
        let f = g.sample(Parity::Even, |x, _, _| x.sin());
        let d = g.inverse(&g.derivative(&g.forward(&f).unwrap(), Axis::X)).unwrap();
        let exact = g.sample(Parity::Even, |x, _, _| x.cos());
        assert!(max_diff(&d.values, &exact.values) < 1e-12);
    }

    #[test]
    fn laplacian_of_plane_wave() {
        let g = Grid::new(16, 4, 2.0 * PI).unwrap();
        let f = g.sample(Parity::Even, |x, y, _| (x + y).cos());
        let lap = g.inverse(&g.laplacian(&g.forward(&f).unwrap())).unwrap();
        for (a, b) in lap.values.iter().zip(&f.values) {
            assert!((a + 2.0 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn perp_grad_is_divergence_free() {
        let g = Grid::new(16, 8, 2.0 * PI).unwrap();
        let c = g.forward(&random_field(&g, Parity::Even, 3)).unwrap();
        let [a, b] = g.perp_grad_h(&c);
        let scale = c.coeffs.iter().fold(0.0_f64, |m, z| m.max(z.norm())) * 64.0;
        assert!(g.div_h(&a, &b).coeffs.iter().all(|z| z.norm() <= 1e-15 * scale));
    }

    #[test]
    fn vertical_derivative_flips_parity() {
        let g = Grid::new(8, 16, 4.0).unwrap();
        let c = g.forward(&random_field(&g, Parity::Even, 11)).unwrap();
        let dz = g.inverse(&g.derivative(&c, Axis::Z)).unwrap();
        assert_eq!(dz.parity, Parity::Odd);
        assert!(g.parity_defect(&dz) < 1e-12);
        let dx = g.inverse(&g.derivative(&c, Axis::X)).unwrap();
        assert_eq!(dx.parity, Parity::Even);
        assert!(g.parity_defect(&dx) < 1e-12);
    }

    #[test]
    fn dealias_zeroes_top_modes_and_is_idempotent() {
        let g = Grid::new(8, 4, 2.0 * PI).unwrap();
        let f = g.sample(Parity::Even, |x, _, _| (3.0 * x).cos() + x.cos());
        let c = g.forward(&f).unwrap();
        let d = g.dealias(&c);
        let top = g.index(3, 0, 0);
        assert!(c.coeffs[top].norm() > 0.4);
        assert_eq!(d.coeffs[top].norm(), 0.0);
        assert_eq!(d.coeffs[g.index(1, 0, 0)], c.coeffs[g.index(1, 0, 0)]);
        assert_eq!(g.dealias(&d), d);
    }

    #[test]
    fn dealiased_product_matches_direct_convolution() {
        let g = Grid::new(8, 4, 2.0 * PI).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut band = |g: &Grid| {
            let mut c = SpectralField::zeros(g.len(), Parity::Even);
            for m in 0..g.len() {
                let [a, b, l] = g.mode_indices(m);
                if a.abs() <= 2 && b.abs() <= 2 && l == 0 && m <= g.mirror(m) {
                    let z = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                    let z = if m == g.mirror(m) { Complex64::new(z.re, 0.0) } else { z };
                    c.coeffs[m] = z;
                    c.coeffs[g.mirror(m)] = z.conj();
                }
            }
            c
        };
        let (fa, fb) = (band(&g), band(&g));
        let pa = g.inverse(&fa).unwrap();
        let pb = g.inverse(&fb).unwrap();
        let prod: Vec<f64> = pa.values.iter().zip(&pb.values).map(|(x, y)| x * y).collect();
        let spec = g.dealias(&g.forward(&ScalarField::new(prod, Parity::Even)).unwrap());
        for m in 0..g.len() {
            let [a, b, l] = g.mode_indices(m);
            if !g.is_retained(m) {
                continue;
            }
            let mut direct = Complex64::new(0.0, 0.0);
            for p in 0..g.len() {
                for q in 0..g.len() {
                    let [pa_, pb_, pl] = g.mode_indices(p);
                    let [qa, qb, ql] = g.mode_indices(q);
                    if pa_ + qa == a && pb_ + qb == b && pl + ql == l {
                        direct += fa.coeffs[p] * fb.coeffs[q];
                    }
                }
            }
            assert!((direct - spec.coeffs[m]).norm() < 1e-13);
        }
    }

    #[test]
    fn even_cosine_extension_is_unchanged() {
        let g = Grid::new(8, 8, 1.0).unwrap();
        let nz = g.nv() / 2 + 1;
        let half: Vec<f64> = (0..64)
            .flat_map(|_| (0..nz).map(|l| (PI * 2.0 * l as f64 / 8.0).cos()))
            .collect();
        let ext = g.symmetric_extension(&half, Some(Parity::Even)).unwrap();
        let full = g.sample(Parity::Even, |_, _, z| (PI * z).cos());
        assert!(max_diff(&ext.values, &full.values) < 1e-14);
        let c = g.forward(&ext).unwrap();
        assert!(c.coeffs.iter().all(|z| z.im.abs() < 1e-15));
    }

    #[test]
    fn odd_ramp_extension_has_sine_spectrum() {
        let g = Grid::new(8, 8, 1.0).unwrap();
        let nz = g.nv() / 2 + 1;
        let half: Vec<f64> = (0..64)
            .flat_map(|_| (0..nz).map(|l| 2.0 * l as f64 / 8.0))
            .collect();
        let ext = g.symmetric_extension(&half, Some(Parity::Odd)).unwrap();
        assert_eq!(g.parity_defect(&ext), 0.0);
        let c = g.forward(&ext).unwrap();
        assert!(c.coeffs.iter().all(|z| z.re.abs() < 1e-15));
        assert!(c.coeffs.iter().any(|z| z.im.abs() > 0.1));
    }

    #[test]
    fn odd_extension_of_constant_rejected() {
        let g = Grid::new(8, 4, 1.0).unwrap();
        let half = vec![1.0; 64 * 3];
        assert!(matches!(
            g.symmetric_extension(&half, Some(Parity::Odd)),
            Err(NskError::ParityConflict(_))
        ));
        assert!(matches!(
            g.symmetric_extension(&half, None),
            Err(NskError::MissingParity)
        ));
    }

    #[test]
    fn plane_grid_round_trip_and_laplacian() {
        let p = PlaneGrid::new(16, 2.0 * PI).unwrap();
        let f = p.sample(|x, y| x.sin() * (2.0 * y).cos());
        let c = p.forward(&f).unwrap();
        assert!(max_diff(&f, &p.inverse(&c).unwrap()) < 1e-14);
        let lap = p.inverse(&p.laplacian(&c)).unwrap();
        for (a, b) in lap.iter().zip(&f) {
            assert!((a + 5.0 * b).abs() < 1e-12);
        }
        assert!(p.derivative(&c, Axis::Z).is_err());
    }
}
