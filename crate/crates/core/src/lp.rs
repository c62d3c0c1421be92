//! Dyadic Littlewood-Paley decomposition and Besov norms on the 3-D grid.
//!
//! `chi` equals 1 on `|xi| <= 1`, vanishes on `|xi| >= 2` and is a quintic
//! smoothstep in between; `phi(xi) = chi(xi/2) - chi(xi)`.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{NskError, Result};
use crate::grid::{Axis, Grid, Parity, ScalarField};

/// Radial cutoff profile.
pub fn chi(s: f64) -> f64 {
    if s <= 1.0 {
        1.0
    } else if s >= 2.0 {
        0.0
    } else {
        let x = s - 1.0;
        1.0 - x * x * x * (10.0 + x * (-15.0 + 6.0 * x))
    }
}

pub fn phi(s: f64) -> f64 {
    chi(0.5 * s) - chi(s)
}

/// Filter bank on the resolved lattice of a grid.
#[derive(Debug, Clone)]
pub struct DyadicFilterBank {
    grid: Grid,
    radius: Vec<f64>,
    j_max: i32,
}

impl DyadicFilterBank {
    pub fn new(grid: &Grid) -> Self {
        let radius: Vec<f64> = (0..grid.len())
            .map(|m| {
                let [a, b, k] = grid.wavevector(m);
                (a * a + b * b + k * k).sqrt()
            })
            .collect();
        let rmax = radius.iter().cloned().fold(0.0, f64::max);
        let mut j_max = 0;
        while 2f64.powi(j_max + 1) < rmax {
            j_max += 1;
        }
        Self {
            grid: grid.clone(),
            radius,
            j_max,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Largest block index with a nonzero filter on the lattice.
    pub fn j_max(&self) -> i32 {
        self.j_max
    }

    /// `|xi|` of a mode slot.
    pub fn radius(&self, m: usize) -> f64 {
        self.radius[m]
    }

    fn check_j(j: i32) -> Result<()> {
        if j < -1 {
            return Err(NskError::InvalidArgument(format!("block index {j} < -1")));
        }
        Ok(())
    }

    /// Multiplier of block `j` at mode `m` (`j = -1` is the low block).
    pub fn filter(&self, j: i32, m: usize) -> f64 {
        let s = self.radius[m];
        if j < 0 {
            chi(s)
        } else {
            phi(s * 2f64.powi(-j))
        }
    }

    /// Multiplier of `S_j = sum_{j' < j} Delta_j'`, which is `chi(2^-j xi)`.
    pub fn partial_filter(&self, j: i32, m: usize) -> f64 {
        if j < 0 {
            0.0
        } else {
            chi(self.radius[m] * 2f64.powi(-j))
        }
    }

    fn apply(&self, f: &ScalarField, mult: impl Fn(usize) -> f64 + Sync) -> Result<ScalarField> {
        let c = self.grid.forward(f)?;
        let coeffs: Vec<Complex64> = c.coeffs.par_iter().enumerate().map(|(m, x)| x * mult(m)).collect();
        self.grid.inverse(&crate::grid::SpectralField {
            coeffs,
            parity: f.parity,
        })
    }

    pub fn dyadic_block(&self, f: &ScalarField, j: i32) -> Result<ScalarField> {
        Self::check_j(j)?;
        self.apply(f, |m| self.filter(j, m))
    }

    pub fn partial_sum(&self, f: &ScalarField, j: i32) -> Result<ScalarField> {
        Self::check_j(j)?;
        self.apply(f, |m| self.partial_filter(j, m))
    }

    /// All blocks `Delta_{-1}, ..., Delta_{j_max}`.
    pub fn blocks(&self, f: &ScalarField) -> Result<Vec<ScalarField>> {
        let c = self.grid.forward(f)?;
        (-1..=self.j_max)
            .into_par_iter()
            .map(|j| {
                let coeffs = c.coeffs.iter().enumerate().map(|(m, x)| x * self.filter(j, m)).collect();
                self.grid.inverse(&crate::grid::SpectralField {
                    coeffs,
                    parity: f.parity,
                })
            })
            .collect()
    }

    /// `max_m |chi + sum_j phi_j - 1|`.
    pub fn partition_defect(&self) -> f64 {
        (0..self.grid.len())
            .map(|m| {
                let s: f64 = (-1..=self.j_max).map(|j| self.filter(j, m)).sum();
                (s - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }

    /// `max |phi_j phi_j'|` over pairs with `|j - j'| >= 2`.
    pub fn separated_overlap(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for j in -1..=self.j_max {
            for jj in (j + 2)..=self.j_max {
                for m in 0..self.grid.len() {
                    worst = worst.max((self.filter(j, m) * self.filter(jj, m)).abs());
                }
            }
        }
        worst
    }

    /// `(sum_j (2^{js} ||Delta_j f||_p)^q)^{1/q}`, with `q = inf` the max.
    pub fn besov_norm(&self, f: &ScalarField, s: f64, p: f64, q: f64) -> Result<f64> {
        check_exponent(p)?;
        check_exponent(q)?;
        let terms: Vec<f64> = self
            .blocks(f)?
            .iter()
            .zip(-1..)
            .map(|(b, j)| 2f64.powf(j as f64 * s) * lp_norm(&self.grid, &b.values, p))
            .collect();
        Ok(lq_sum(&terms, q))
    }

    /// `sup_j ||Delta_j grad f||_{L^p}` with the Euclidean norm of the gradient.
    pub fn gradient_besov_inf(&self, f: &ScalarField, p: f64) -> Result<f64> {
        check_exponent(p)?;
        let g = &self.grid;
        let c = g.forward(f)?;
        let grads: Vec<Vec<Complex64>> = Axis::ALL.iter().map(|&a| g.derivative(&c, a).coeffs).collect();
        let mut best: f64 = 0.0;
        for j in -1..=self.j_max {
            let comps: Vec<Vec<f64>> = grads
                .iter()
                .map(|d| {
                    let coeffs: Vec<Complex64> = d.iter().enumerate().map(|(m, x)| x * self.filter(j, m)).collect();
                    g.inverse_values(&coeffs)
                })
                .collect();
            best = best.max(lp_norm(g, &magnitude(&comps), p));
        }
        Ok(best)
    }

    fn support_radius(&self, f: &ScalarField) -> Result<(f64, f64)> {
        let c = self.grid.forward(f)?;
        let peak = c.coeffs.iter().map(|x| x.norm()).fold(0.0, f64::max);
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for (m, x) in c.coeffs.iter().enumerate() {
            if x.norm() > 1e-12 * peak {
                lo = lo.min(self.radius[m]);
                hi = hi.max(self.radius[m]);
            }
        }
        Ok((lo, hi))
    }
}

fn check_exponent(p: f64) -> Result<()> {
    if !(p >= 1.0) {
        return Err(NskError::InvalidArgument(format!("exponent {p} must lie in [1, inf]")));
    }
    Ok(())
}

fn lq_sum(terms: &[f64], q: f64) -> f64 {
    if q.is_infinite() {
        terms.iter().cloned().fold(0.0, f64::max)
    } else {
        terms.iter().map(|t| t.powf(q)).sum::<f64>().powf(1.0 / q)
    }
}

fn magnitude(comps: &[Vec<f64>]) -> Vec<f64> {
    (0..comps[0].len())
        .map(|i| comps.iter().map(|c| c[i] * c[i]).sum::<f64>().sqrt())
        .collect()
}

/// `L^p` norm on the grid (`p = inf` allowed).
pub fn lp_norm(grid: &Grid, values: &[f64], p: f64) -> f64 {
    if p.is_infinite() {
        values.iter().fold(0.0, |m, v| m.max(v.abs()))
    } else if p == 2.0 {
        grid.integrate(&values.iter().map(|v| v * v).collect::<Vec<_>>()).sqrt()
    } else {
        grid.integrate(&values.iter().map(|v| v.abs().powf(p)).collect::<Vec<_>>())
            .powf(1.0 / p)
    }
}

/// Euclidean magnitude of the full order-`k` derivative tensor.
pub fn derivative_tensor_magnitude(grid: &Grid, f: &ScalarField, k: u32) -> Result<Vec<f64>> {
    if k > 4 {
        return Err(NskError::InvalidArgument(format!("derivative order {k} > 4")));
    }
    let c = grid.forward(f)?;
    let mut layer = vec![c.coeffs];
    for _ in 0..k {
        layer = layer
            .iter()
            .flat_map(|x| {
                Axis::ALL.iter().map(move |&a| {
                    let mut d = x.clone();
                    grid.derivative_in_place(&mut d, a);
                    d
                })
            })
            .collect();
    }
    let comps: Vec<Vec<f64>> = layer.par_iter().map(|x| grid.inverse_values(x)).collect();
    Ok(magnitude(&comps))
}

/// `||grad^k f||_{L^p} / (2^{jk} ||f||_{L^p})` for `f` in the annulus
/// `2^{j-1} <= |xi| <= 2^{j+1}`.
pub fn bernstein_ratio(bank: &DyadicFilterBank, f: &ScalarField, j: i32, k: u32, p: f64) -> Result<f64> {
    check_exponent(p)?;
    let (lo, hi) = bank.support_radius(f)?;
    let tol = 1e-12;
    if lo < 2f64.powi(j - 1) * (1.0 - tol) || hi > 2f64.powi(j + 1) * (1.0 + tol) {
        return Err(NskError::InvalidArgument(format!(
            "spectrum in [{lo}, {hi}] leaves the annulus of block {j}"
        )));
    }
    let g = bank.grid();
    let num = lp_norm(g, &derivative_tensor_magnitude(g, f, k)?, p);
    let den = 2f64.powi(j * k as i32) * lp_norm(g, &f.values, p);
    Ok(num / den)
}

/// `||f||_{L^q} / (2^{3j(1/p - 1/q)} ||f||_{L^p})` for `f` in the ball `|xi| <= 2^j`.
pub fn bernstein_ball_ratio(bank: &DyadicFilterBank, f: &ScalarField, j: i32, p: f64, q: f64) -> Result<f64> {
    check_exponent(p)?;
    check_exponent(q)?;
    if q < p {
        return Err(NskError::InvalidArgument("ball inequality needs q >= p".into()));
    }
    let (_, hi) = bank.support_radius(f)?;
    if hi > 2f64.powi(j) * (1.0 + 1e-12) {
        return Err(NskError::InvalidArgument(format!("spectrum reaches {hi} outside the ball of block {j}")));
    }
    let g = bank.grid();
    let e = 3.0 * (1.0 / p - if q.is_infinite() { 0.0 } else { 1.0 / q });
    Ok(lp_norm(g, &f.values, q) / (2f64.powf(j as f64 * e) * lp_norm(g, &f.values, p)))
}

/// Spread of measured Bernstein ratios across blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BernsteinReport {
    pub ratios: Vec<(i32, f64)>,
    pub min: f64,
    pub max: f64,
    /// `max / min`.
    pub stability: f64,
    pub pass: bool,
}

pub fn bernstein_report(ratios: Vec<(i32, f64)>, bound: f64) -> BernsteinReport {
    let min = ratios.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    let max = ratios.iter().map(|r| r.1).fold(0.0, f64::max);
    let stability = max / min;
    BernsteinReport {
        ratios,
        min,
        max,
        stability,
        pass: stability.is_finite() && stability < bound,
    }
}

/// `beta = 1 - 3 (1/p - 1/2)`.
pub fn tail_beta(p: f64) -> f64 {
    1.0 - 3.0 * (1.0 / p - 0.5)
}

/// `C_j = (1 / (1 - 2^{-2 beta}))^{1/2} 2^{-beta (j - 1)}`.
pub fn tail_constant(j: i32, p: f64) -> Result<f64> {
    if !(1.0..=2.0).contains(&p) || 1.0 / p >= 1.0 / 3.0 + 0.5 {
        return Err(NskError::InvalidArgument(format!(
            "exponent p = {p} outside [1, 2] with 1/p < 5/6"
        )));
    }
    let b = tail_beta(p);
    Ok((1.0 / (1.0 - 2f64.powf(-2.0 * b))).sqrt() * 2f64.powf(-b * (j as f64 - 1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailBoundReport {
    pub j: i32,
    pub p: f64,
    pub beta: f64,
    pub c_j: f64,
    /// `||(Id - S_j) f||_{L^2}`.
    pub left: f64,
    /// `C_j ||grad f||_{B^0_{p,inf}}`.
    pub right: f64,
    pub pass: bool,
}

pub fn tail_bound_check(bank: &DyadicFilterBank, f: &ScalarField, j: i32, p: f64) -> Result<TailBoundReport> {
    let c_j = tail_constant(j, p)?;
    let s = bank.partial_sum(f, j)?;
    let rest: Vec<f64> = f.values.iter().zip(&s.values).map(|(a, b)| a - b).collect();
    let left = lp_norm(bank.grid(), &rest, 2.0);
    let right = c_j * bank.gradient_besov_inf(f, p)?;
    Ok(TailBoundReport {
        j,
        p,
        beta: tail_beta(p),
        c_j,
        left,
        right,
        pass: left <= right,
    })
}

/// `||f||_{L^2} / (||f||_{L^p} + ||grad f||_{L^2})`.
pub fn embedding_ratio(grid: &Grid, f: &ScalarField, p: f64) -> Result<f64> {
    check_exponent(p)?;
    let g = derivative_tensor_magnitude(grid, f, 1)?;
    Ok(lp_norm(grid, &f.values, 2.0) / (lp_norm(grid, &f.values, p) + lp_norm(grid, &g, 2.0)))
}

/// Random real field, even in `x3`, with spectrum in `lo <= |xi| <= hi`
/// (Nyquist modes excluded) and coefficient decay `|xi|^-decay`.
pub fn random_band_field(grid: &Grid, lo: f64, hi: f64, decay: f64, seed: u64) -> ScalarField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = grid.len();
    let noise: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let sym: Vec<f64> = (0..n).map(|m| 0.5 * (noise[m] + noise[grid.reflect_point(m)])).collect();
    let c = grid.forward_values(&sym);
    let coeffs: Vec<Complex64> = c
        .iter()
        .enumerate()
        .map(|(m, x)| {
            let [a, b, k] = grid.wavevector(m);
            let [da, db, dk] = grid.derivative_wavevector(m);
            let r = (a * a + b * b + k * k).sqrt();
            let nyquist = (a != 0.0 && da == 0.0) || (b != 0.0 && db == 0.0) || (k != 0.0 && dk == 0.0);
            if nyquist || r < lo || r > hi {
                Complex64::new(0.0, 0.0)
            } else {
                x * r.max(1.0).powf(-decay)
            }
        })
        .collect();
    ScalarField::new(grid.inverse_values(&coeffs), Parity::Even)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn bank() -> DyadicFilterBank {
        DyadicFilterBank::new(&Grid::new(64, 8, PI).unwrap())
    }

    #[test]
    fn profile_shape() {
        assert_eq!(chi(0.3), 1.0);
        assert_eq!(chi(1.0), 1.0);
        assert_eq!(chi(2.0), 0.0);
        assert!((chi(1.5) - 0.5).abs() < 1e-15);
        let mut last = 1.0;
        for i in 0..=200 {
            let v = chi(i as f64 / 100.0);
            assert!(v <= last + 1e-15 && (0.0..=1.0).contains(&v));
            last = v;
        }
        assert_eq!(phi(0.5), 0.0);
        assert_eq!(phi(4.5), 0.0);
    }

    #[test]
    fn partition_of_unity_and_support_rule() {
        let b = bank();
        assert!(b.partition_defect() < 1e-12);
        assert_eq!(b.separated_overlap(), 0.0);
        let f = random_band_field(b.grid(), 0.0, 1e9, 0.0, 1);
        let blocks = b.blocks(&f).unwrap();
        let mut sum = vec![0.0; f.len()];
        for bl in &blocks {
            for (s, v) in sum.iter_mut().zip(&bl.values) {
                *s += v;
            }
        }
        let err = sum.iter().zip(&f.values).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max);
        assert!(err < 1e-12);
    }

    #[test]
    fn single_radius_hits_one_block() {
        let b = bank();
        let f = b.grid().sample(Parity::Even, |x, _, _| (4.0 * x).cos());
        for j in -1..=b.j_max() {
            let n = lp_norm(b.grid(), &b.dyadic_block(&f, j).unwrap().values, 2.0);
            if ![1, 2, 3].contains(&j) {
                assert!(n < 1e-13, "{j} {n}");
            }
        }
        assert!(b.dyadic_block(&f, -2).is_err());
    }

    #[test]
    fn partial_sums_converge_monotonically() {
        let b = bank();
        let f = random_band_field(b.grid(), 0.0, 1e9, 0.0, 2);
        let mut last = f64::INFINITY;
        for j in 0..=b.j_max() + 1 {
            let s = b.partial_sum(&f, j).unwrap();
            let d: Vec<f64> = s.values.iter().zip(&f.values).map(|(a, c)| a - c).collect();
            let n = lp_norm(b.grid(), &d, 2.0);
            assert!(n <= last + 1e-14);
            last = n;
        }
        assert!(last < 1e-12);
    }

    #[test]
    fn besov_examples() {
        let b = bank();
        let f = b.grid().sample(Parity::Even, |x, _, _| (16.0 * x).cos());
        let l2 = lp_norm(b.grid(), &f.values, 2.0);
        let v = b.besov_norm(&f, 1.0, 2.0, 2.0).unwrap();
        assert!((v - 8.0 * l2).abs() < 1e-12 * v);
        let z = ScalarField::zeros(f.len(), Parity::Even);
        assert_eq!(b.besov_norm(&z, 0.5, 2.0, f64::INFINITY).unwrap(), 0.0);
        assert!(b.besov_norm(&f, 0.0, 0.5, 2.0).is_err());
        for seed in 0..5 {
            let f = random_band_field(b.grid(), 0.0, 1e9, 1.0, seed);
            let r = b.besov_norm(&f, 0.0, 2.0, 2.0).unwrap() / lp_norm(b.grid(), &f.values, 2.0);
            assert!((0.8..=1.25).contains(&r), "{r}");
        }
    }

    #[test]
    fn bernstein_examples() {
        let b = bank();
        for j in 1..=4 {
            let f = b.grid().sample(Parity::Even, |x, _, _| (2f64.powi(j) * x).cos());
            assert!((bernstein_ratio(&b, &f, j, 1, 2.0).unwrap() - 1.0).abs() < 1e-12);
        }
        let f = b.grid().sample(Parity::Even, |x, _, _| (16.0 * x).cos());
        assert!(bernstein_ratio(&b, &f, 1, 1, 2.0).is_err());
        let ratios = (1..=4)
            .map(|j| {
                let f = random_band_field(b.grid(), 2f64.powi(j - 1), 2f64.powi(j + 1), 0.0, j as u64);
                (j, bernstein_ratio(&b, &f, j, 1, 2.0).unwrap())
            })
            .collect();
        let rep = bernstein_report(ratios, 4.0);
        assert!(rep.pass, "{rep:?}");
    }

    #[test]
    fn tail_constant_value() {
        assert!((tail_constant(1, 2.0).unwrap() - (4.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!((tail_constant(3, 2.0).unwrap() - 1.1547005383792515 / 4.0).abs() < 1e-12);
        assert!(tail_constant(1, 1.1).is_err());
        assert!(tail_constant(1, 3.0).is_err());
    }

    #[test]
    fn tail_bound_on_single_mode() {
        let b = bank();
        let f = b.grid().sample(Parity::Even, |x, _, _| (8.0 * x).cos());
        for j in 1..=5 {
            let r = tail_bound_check(&b, &f, j, 2.0).unwrap();
            assert!(r.pass, "{r:?}");
            if j > 4 {
                assert!(r.left < 1e-13);
            }
        }
    }
}
