//! Per-mode analysis of the singular acoustic-rotation-capillarity operator.
//!
//! For a Fourier mode `(xi1, xi2, k)` with `zeta = |xi|^2 + k^2` and weight
//! `w = 1 + kappa zeta`, the symbol acting on `(r, V1, V2, V3)` is
//!
//! ```text
//!        [ 0       i xi1   i xi2   i k ]
//!    A = [ i xi1 w   0      -1      0  ]
//!        [ i xi2 w   1       0      0  ]
//!        [ i k w     0       0      0  ]
//! ```
//!
//! so that `eps d_t x + A x = 0`. It is skew-adjoint for the symmetrizer
//! `S = diag(w, 1, 1, 1)` and its eigenvalues solve
//! `lambda^4 + (1 + w zeta) lambda^2 + k^2 w = 0`.

use nalgebra::{Matrix4, SymmetricEigen, Vector4};
use num_complex::Complex64;

use crate::error::{NskError, Result};
use crate::params::capillarity;

pub type CMatrix4 = Matrix4<Complex64>;
pub type CVector4 = Vector4<Complex64>;

const I: Complex64 = Complex64::new(0.0, 1.0);

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// A Fourier mode; `k` is the vertical wavenumber itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcousticMode {
    pub xi: [f64; 2],
    pub k: f64,
}

impl AcousticMode {
    pub fn new(xi1: f64, xi2: f64, k: f64) -> Self {
        Self { xi: [xi1, xi2], k }
    }

    pub fn zeta(&self) -> f64 {
        self.xi[0] * self.xi[0] + self.xi[1] * self.xi[1] + self.k * self.k
    }

    /// `1 + kappa zeta`.
    pub fn weight(&self, kappa: f64) -> f64 {
        1.0 + kappa * self.zeta()
    }
}

/// Mode symbol together with its diagonal symmetrizer.
#[derive(Debug, Clone, PartialEq)]
pub struct AcousticSymbol {
    pub mode: AcousticMode,
    pub a: CMatrix4,
    /// Diagonal of `S`.
    pub s: [f64; 4],
    pub kappa: f64,
}

impl AcousticSymbol {
    pub fn s_matrix(&self) -> CMatrix4 {
        CMatrix4::from_diagonal(&CVector4::from_fn(|i, _| c(self.s[i])))
    }

    /// `max |(SA + A* S)_ij|`.
    pub fn skew_defect(&self) -> f64 {
        let s = self.s_matrix();
        let m = s * self.a + self.a.adjoint() * s;
        m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
    }

    /// `x* S y`.
    pub fn s_inner(&self, x: &CVector4, y: &CVector4) -> Complex64 {
        (0..4).map(|i| x[i].conj() * self.s[i] * y[i]).sum()
    }

    pub fn s_norm_sq(&self, x: &CVector4) -> f64 {
        (0..4).map(|i| self.s[i] * x[i].norm_sqr()).sum()
    }
}

/// Symbol with an explicit weight `w`, so that `kappa = (w - 1) / zeta`.
pub fn assemble_weighted(mode: AcousticMode, w: f64) -> CMatrix4 {
    let [x1, x2] = mode.xi;
    let k = mode.k;
    #[rustfmt::skip]
    let a = CMatrix4::new(
        c(0.0),       I * x1, I * x2, I * k,
        I * (x1 * w), c(0.0), c(-1.0), c(0.0),
        I * (x2 * w), c(1.0), c(0.0),  c(0.0),
        I * (k * w),  c(0.0), c(0.0),  c(0.0),
    );
    a
}

pub fn assemble(mode: AcousticMode, eps: f64, alpha: f64) -> AcousticSymbol {
    assemble_kappa(mode, capillarity(eps, alpha))
}

pub fn assemble_kappa(mode: AcousticMode, kappa: f64) -> AcousticSymbol {
    let w = mode.weight(kappa);
    AcousticSymbol {
        mode,
        a: assemble_weighted(mode, w),
        s: [w, 1.0, 1.0, 1.0],
        kappa,
    }
}

/// Roots `(big, small)` of `mu^2 + a mu + k^2 w = 0` with `mu = lambda^2`,
/// both nonpositive, `|big| >= |small|`.
pub fn squared_frequencies(mode: AcousticMode, w: f64) -> (f64, f64) {
    let a = 1.0 + w * mode.zeta();
    let b = mode.k * mode.k * w;
    let disc = (a * a - 4.0 * b).max(0.0);
    let big = -0.5 * (a + disc.sqrt());
    let small = if big != 0.0 { b / big } else { 0.0 };
    (big, small)
}

/// Closed-form eigenvalues `(+i s1, -i s1, +i s2, -i s2)`, with `s1 >= s2 >= 0`.
pub fn eigenvalues_weighted(mode: AcousticMode, w: f64) -> [Complex64; 4] {
    let (big, small) = squared_frequencies(mode, w);
    let s1 = (-big).max(0.0).sqrt();
    let s2 = (-small).max(0.0).sqrt();
    [I * s1, -I * s1, I * s2, -I * s2]
}

pub fn eigenvalues(mode: AcousticMode, eps: f64, alpha: f64) -> [Complex64; 4] {
    eigenvalues_weighted(mode, mode.weight(capillarity(eps, alpha)))
}

/// Largest gap between the closed-form eigenvalues of a mode and those of a
/// dense Hermitian eigensolve, matched as sorted multisets.
pub fn dispersion_defect(mode: AcousticMode, kappa: f64) -> f64 {
    let mut closed: Vec<f64> = eigenvalues_weighted(mode, mode.weight(kappa)).iter().map(|z| z.im).collect();
    let mut dense: Vec<f64> = ModePropagator::new(&assemble_kappa(mode, kappa))
        .frequencies()
        .iter()
        .map(|m| -m)
        .collect();
    closed.sort_by(f64::total_cmp);
    dense.sort_by(f64::total_cmp);
    closed.iter().zip(&dense).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// Largest eigen-frequency `|lambda|` of a mode.
pub fn max_frequency(mode: AcousticMode, kappa: f64) -> f64 {
    let (big, _) = squared_frequencies(mode, mode.weight(kappa));
    (-big).sqrt()
}

/// Orthonormal basis of the nullspace of `a` by singular decomposition,
/// with threshold `1e-10` times the largest singular value.
pub fn nullspace(a: &CMatrix4) -> Vec<CVector4> {
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return (0..4).map(|i| CVector4::from_fn(|j, _| c((i == j) as u8 as f64))).collect();
    }
    (0..4)
        .filter(|&i| svd.singular_values[i] <= 1e-10 * smax)
        .map(|i| v_t.row(i).adjoint())
        .collect()
}

/// `S`-orthogonal projector onto the nullspace of the symbol.
pub fn kernel_projector(mode: AcousticMode, eps: f64, alpha: f64) -> CMatrix4 {
    projector_for(&assemble(mode, eps, alpha))
}

pub fn projector_for(sym: &AcousticSymbol) -> CMatrix4 {
    let basis = nullspace(&sym.a);
    s_projector(&basis, &sym.s)
}

/// `N (N* S N)^{-1} N* S` for the columns `N` of `basis`.
fn s_projector(basis: &[CVector4], s: &[f64; 4]) -> CMatrix4 {
    let n = basis.len();
    if n == 0 {
        return CMatrix4::zeros();
    }
    let sm = CMatrix4::from_diagonal(&CVector4::from_fn(|i, _| c(s[i])));
    let nmat = nalgebra::DMatrix::from_fn(4, n, |i, j| basis[j][i]);
    let sd = nalgebra::DMatrix::from_fn(4, 4, |i, j| sm[(i, j)]);
    let gram = nmat.adjoint() * &sd * &nmat;
    let inv = gram
        .try_inverse()
        .expect("Gram matrix of an orthonormal basis is invertible");
    let q = &nmat * inv * nmat.adjoint() * sd;
    CMatrix4::from_fn(|i, j| q[(i, j)])
}

/// Kernel basis at `k = 0` written down directly: `(1, -i xi2 w, i xi1 w, 0)` and `e4`.
pub fn explicit_kernel_basis(mode: AcousticMode, w: f64) -> Vec<CVector4> {
    if mode.k != 0.0 {
        return Vec::new();
    }
    let [x1, x2] = mode.xi;
    vec![
        CVector4::new(c(1.0), -I * (x2 * w), I * (x1 * w), c(0.0)),
        CVector4::new(c(0.0), c(0.0), c(0.0), c(1.0)),
    ]
}

/// Spectral norm of a 4x4 complex matrix.
pub fn operator_norm(m: &CMatrix4) -> f64 {
    let e = SymmetricEigen::new(m.adjoint() * m);
    e.eigenvalues.iter().fold(0.0_f64, |a, &v| a.max(v)).max(0.0).sqrt()
}

/// `Pi_eta = I - Q_eta` for weight `1 + eta zeta`, and
/// `R_eta = (Pi_eta - Pi_0) / eta`.
pub fn projector_perturbation(mode: AcousticMode, eta: f64) -> Result<(CMatrix4, CMatrix4)> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(NskError::InvalidArgument(format!(
            "projector perturbation needs eta > 0, got {eta}"
        )));
    }
    let pi = |eta: f64| CMatrix4::identity() - projector_for(&assemble_kappa(mode, eta));
    let pi_eta = pi(eta);
    let r = (pi_eta - pi(0.0)) / c(eta);
    Ok((pi_eta, r))
}

/// Modes of the truncation `|xi^h| + |k| <= m` on the lattice
/// `xi = dxi n`, `k = dk n3`.
pub fn truncation_modes(dxi: f64, dk: f64, m: f64) -> Vec<AcousticMode> {
    let nh = (m / dxi).floor() as i64;
    let nv = (m / dk).floor() as i64;
    let mut out = Vec::new();
    for a in -nh..=nh {
        for b in -nh..=nh {
            for l in -nv..=nv {
                let mode = AcousticMode::new(a as f64 * dxi, b as f64 * dxi, l as f64 * dk);
                if mode.xi[0].hypot(mode.xi[1]) + mode.k.abs() <= m + 1e-12 {
                    out.push(mode);
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapReport {
    /// Smallest nonzero `|lambda|` over the mode set at `eta = 0`.
    pub gap: f64,
    /// Same with weight `1 + eta zeta`.
    pub gap_eta: f64,
    pub pass: bool,
}

/// Uniform spectral gap around 0 over a bounded mode set, unperturbed and
/// with weight `1 + eta zeta`. Modes with `k = 0` carry no nonzero
/// eigenvalue that could approach 0 and are skipped.
pub fn isolated_zero_check(modes: &[AcousticMode], eta: f64) -> Result<GapReport> {
    if modes.is_empty() {
        return Err(NskError::InvalidArgument("empty mode set".into()));
    }
    let gap_for = |kappa: f64| {
        modes
            .iter()
            .filter(|m| m.k != 0.0)
            .map(|m| {
                let (_, small) = squared_frequencies(*m, m.weight(kappa));
                (-small).sqrt()
            })
            .fold(f64::INFINITY, f64::min)
    };
    let gap = gap_for(0.0);
    let gap_eta = gap_for(eta);
    let pass = !gap.is_finite() || (gap > 0.0 && gap_eta >= 0.5 * gap);
    Ok(GapReport { gap, gap_eta, pass })
}

/// Spectral factorisation of `exp(-tau A)` for one mode:
/// `S^{-1/2} U diag(exp(i tau mu)) U* S^{1/2}` with `U` unitary and `mu` real.
#[derive(Debug, Clone)]
pub struct ModePropagator {
    sqrt_s: [f64; 4],
    mu: [f64; 4],
    u: CMatrix4,
}

impl ModePropagator {
    pub fn new(sym: &AcousticSymbol) -> Self {
        let sqrt_s = sym.s.map(f64::sqrt);
        // B = S^{1/2} A S^{-1/2} is skew-Hermitian; H = iB is Hermitian.
        let b = CMatrix4::from_fn(|i, j| sym.a[(i, j)] * (sqrt_s[i] / sqrt_s[j]));
        let mut h = b * I;
        h = (h + h.adjoint()) * c(0.5);
        let eig = SymmetricEigen::new(h);
        let mu = [
            eig.eigenvalues[0],
            eig.eigenvalues[1],
            eig.eigenvalues[2],
            eig.eigenvalues[3],
        ];
        Self {
            sqrt_s,
            mu,
            u: eig.eigenvectors,
        }
    }

    /// Frequencies `mu`, with `exp(-tau A)` acting as `exp(i tau mu)` on eigenvectors.
    pub fn frequencies(&self) -> [f64; 4] {
        self.mu
    }

    pub fn matrix(&self, tau: f64) -> CMatrix4 {
        let d = CMatrix4::from_diagonal(&CVector4::from_fn(|i, _| {
            Complex64::from_polar(1.0, tau * self.mu[i])
        }));
        let e = self.u * d * self.u.adjoint();
        CMatrix4::from_fn(|i, j| e[(i, j)] * (self.sqrt_s[j] / self.sqrt_s[i]))
    }

    pub fn apply(&self, tau: f64, x: &CVector4) -> CVector4 {
        self.matrix(tau) * x
    }

    /// Columns are the eigenvectors of `A`, normalized in the `S` inner product.
    pub fn modal_basis(&self) -> CMatrix4 {
        CMatrix4::from_fn(|i, j| self.u[(i, j)] / self.sqrt_s[i])
    }

    /// Coordinates of `x` in [`Self::modal_basis`].
    pub fn modal_coordinates(&self, x: &CVector4) -> CVector4 {
        let sx = CVector4::from_fn(|i, _| x[i] * self.sqrt_s[i]);
        self.u.adjoint() * sx
    }
}

/// `exp(-tau A)` for the symbol of a mode.
pub fn propagator(mode: AcousticMode, eps: f64, alpha: f64, tau: f64) -> CMatrix4 {
    ModePropagator::new(&assemble(mode, eps, alpha)).matrix(tau)
}
