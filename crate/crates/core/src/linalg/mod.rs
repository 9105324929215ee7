//! Dense complex linear algebra shared by every other module.
//!
//! Matrices are plain `ndarray::Array2<Complex64>` values. The heavier
//! routines (Hermitian eigendecomposition, QR) go through LAPACK; the
//! iterative pieces (regularized geometric sums, leading eigenpairs) are
//! matrix-free and only ask for a [`LinearMap`].

mod eigh;
mod expm;
mod krylov;
mod tensor;

pub use eigh::{eigh, eigh_real, eigvalsh, hermitian_function, Eigh};
pub use expm::{expm_antihermitian, expm_hermitian};
pub use krylov::{
    leading_eigenpair, solve_regularized_geometric, EigenpairOptions, FnMap, GeometricSolve,
    LeadingEigenpair, LinearMap,
};
pub use tensor::{tensordot, Rank3Tensor};

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = Array2<C64>;
pub type CVec = Array1<C64>;

/// Numerical tolerances used across the crate.
///
/// Every threshold that is not a property of a particular test lives here so
/// that a run can be reproduced from a single record.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Tolerances {
    /// Relative Hermiticity tolerance for `eigh` inputs.
    pub hermitian: f64,
    /// Relative anti-Hermiticity tolerance for `expm_antihermitian` inputs.
    pub anti_hermitian: f64,
    /// Relative pivot below which `qr_isometry` reports rank deficiency.
    pub rank: f64,
    /// Relative residual for the regularized geometric-sum solver.
    pub geometric_sum: f64,
    pub geometric_sum_max_iter: usize,
    pub gmres_restart: usize,
    /// Relative residual for leading eigenpairs.
    pub eigenpair: f64,
    pub eigenpair_max_restarts: usize,
    pub krylov_dim: usize,
    /// Eigenvalues of density operators below this are treated as zero.
    pub probability_clamp: f64,
}

impl Tolerances {
    pub const DEFAULT: Tolerances = Tolerances {
        hermitian: 1e-12,
        anti_hermitian: 1e-12,
        rank: 1e-12,
        geometric_sum: 1e-10,
        geometric_sum_max_iter: 2000,
        gmres_restart: 30,
        eigenpair: 1e-11,
        eigenpair_max_restarts: 1000,
        krylov_dim: 24,
        probability_clamp: 1e-15,
    };
}

impl Default for Tolerances {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// Conjugate transpose.
pub fn dagger(m: &CMat) -> CMat {
    m.t().mapv(|z| z.conj())
}

pub fn identity(n: usize) -> CMat {
    CMat::eye(n)
}

pub fn frobenius_norm(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn vec_norm(v: &CVec) -> f64 {
    match v.as_slice() {
        Some(x) => {
            let f = as_reals(x);
            let mut acc = [0.0f64; 4];
            let chunks = f.chunks_exact(4);
            let rest = chunks.remainder();
            for c in chunks {
                for k in 0..4 {
                    acc[k] += c[k] * c[k];
                }
            }
            let tail: f64 = rest.iter().map(|x| x * x).sum();
            (acc.iter().sum::<f64>() + tail).sqrt()
        }
        None => v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt(),
    }
}

fn as_reals(x: &[C64]) -> &[f64] {
    // Complex<f64> is repr(C) { re, im }
    unsafe { std::slice::from_raw_parts(x.as_ptr() as *const f64, 2 * x.len()) }
}

/// `<a, b> = sum conj(a_i) b_i`.
pub fn vdot(a: &CVec, b: &CVec) -> C64 {
    match (a.as_slice(), b.as_slice()) {
        (Some(x), Some(y)) if x.len() == y.len() => {
            let (mut rr, mut ii, mut ri, mut ir) = ([0.0f64; 2], [0.0f64; 2], [0.0f64; 2], [0.0f64; 2]);
            let (xc, yc) = (x.chunks_exact(2), y.chunks_exact(2));
            let (xt, yt) = (xc.remainder(), yc.remainder());
            for (p, q) in xc.zip(yc) {
                for k in 0..2 {
                    rr[k] += p[k].re * q[k].re;
                    ii[k] += p[k].im * q[k].im;
                    ri[k] += p[k].re * q[k].im;
                    ir[k] += p[k].im * q[k].re;
                }
            }
            let mut out = C64::new(rr[0] + rr[1] + ii[0] + ii[1], ri[0] + ri[1] - ir[0] - ir[1]);
            for (p, q) in xt.iter().zip(yt) {
                out += p.conj() * q;
            }
            out
        }
        _ => a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum(),
    }
}

/// `y += alpha x`.
pub fn axpy(alpha: C64, x: &CVec, y: &mut CVec) {
    match (x.as_slice(), y.as_slice_mut()) {
        (Some(xs), Some(ys)) if xs.len() == ys.len() => {
            for (p, q) in xs.iter().zip(ys.iter_mut()) {
                q.re += alpha.re * p.re - alpha.im * p.im;
                q.im += alpha.re * p.im + alpha.im * p.re;
            }
        }
        _ => y.scaled_add(alpha, x),
    }
}

pub fn trace(m: &CMat) -> C64 {
    m.diag().sum()
}

/// Upper bound on the operator norm, `sqrt(||M||_1 ||M||_inf)`.
pub fn norm_estimate(m: &CMat) -> f64 {
    let rows = m
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max);
    let cols = m
        .columns()
        .into_iter()
        .map(|c| c.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max);
    (rows * cols).sqrt()
}

/// Largest `|M_ij - conj(M_ji)|`.
pub fn hermitian_asymmetry(m: &CMat) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[[i, j]] - m[[j, i]].conj()).norm());
        }
    }
    worst
}

pub fn check_finite(m: &CMat, what: &'static str) -> Result<()> {
    if m.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

pub fn check_square(m: &CMat, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Shape(format!(
            "{what}: expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// `(M + M^dagger)/2`.
pub fn hermitian_part(m: &CMat) -> CMat {
    (m + &dagger(m)).mapv(|z| z * 0.5)
}

/// Largest deviation of `W^dagger W` from the identity.
pub fn isometry_defect(w: &CMat) -> f64 {
    let g = dagger(w).dot(w) - identity(w.ncols());
    g.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Orthonormal basis of the column span of `m` (`n >= p`), phase-fixed so
/// that the triangular factor has a positive real diagonal.
pub fn qr_isometry(m: &CMat) -> Result<CMat> {
    use ndarray_linalg::QR;
    let (n, p) = m.dim();
    if n < p {
        return Err(Error::Shape(format!(
            "qr_isometry needs rows >= cols, got {n}x{p}"
        )));
    }
    check_finite(m, "qr_isometry input")?;
    if p == 0 {
        return Ok(CMat::zeros((n, 0)));
    }
    let (mut q, r) = m.qr()?;
    let scale = frobenius_norm(m).max(f64::MIN_POSITIVE);
    for j in 0..p {
        let pivot = r[[j, j]];
        if pivot.norm() <= Tolerances::DEFAULT.rank * scale * (n as f64) {
            return Err(Error::RankDeficient {
                column: j,
                pivot: pivot.norm(),
            });
        }
        let phase = pivot / pivot.norm();
        q.column_mut(j).mapv_inplace(|z| z * phase);
    }
    Ok(q)
}
