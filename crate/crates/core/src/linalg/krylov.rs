//! Matrix-free Krylov solvers: restarted GMRES for the regularized geometric
//! sum `(1 - E + |u)(w|)^{-1}` and restarted Arnoldi for leading eigenpairs.

use ndarray::{s, Array2};
use ndarray_linalg::Eig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{axpy, vdot, vec_norm, CVec, Tolerances, C64};
use crate::error::{Error, Result};

/// A linear operator on `C^n` known only through its action.
pub trait LinearMap {
    fn dim(&self) -> usize;
    fn apply(&self, x: &CVec) -> CVec;
}

/// Adapter turning a closure into a [`LinearMap`].
pub struct FnMap<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(&CVec) -> CVec> FnMap<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&CVec) -> CVec> LinearMap for FnMap<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn apply(&self, x: &CVec) -> CVec {
        (self.f)(x)
    }
}

#[derive(Debug, Clone)]
pub struct GeometricSolve {
    pub x: CVec,
    /// Final relative residual `||b - A x|| / ||b||`.
    pub residual: f64,
    pub iterations: usize,
}

/// Solves `(1 - E + |left)(right|) x = rhs` by restarted GMRES.
///
/// `left` and `right` are the leading right and left eigenvectors of `E`
/// (for a transfer operator in left gauge: the fixed point and the
/// identity). Subtracting that rank-one part turns the divergent geometric
/// series `sum_k E^k` into a convergent one.
pub fn solve_regularized_geometric<M: LinearMap>(
    e_apply: &M,
    correction: (&CVec, &CVec),
    rhs: &CVec,
    tol: f64,
) -> Result<GeometricSolve> {
    if tol <= 0.0 {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let n = e_apply.dim();
    let (left, right) = correction;
    if rhs.len() != n || left.len() != n || right.len() != n {
        return Err(Error::Shape(format!(
            "geometric sum: operator dim {n}, rhs {}, correction ({}, {})",
            rhs.len(),
            left.len(),
            right.len()
        )));
    }
    let op = |x: &CVec| -> CVec {
        let ex = e_apply.apply(x);
        let overlap = vdot(right, x);
        let mut y = x - &ex;
        y.scaled_add(overlap, left);
        y
    };
    let b_norm = vec_norm(rhs);
    if b_norm == 0.0 {
        return Ok(GeometricSolve {
            x: CVec::zeros(n),
            residual: 0.0,
            iterations: 0,
        });
    }
    let tolerances = Tolerances::DEFAULT;
    let restart = tolerances.gmres_restart.min(n).max(1);
    let max_iter = tolerances.geometric_sum_max_iter;

    let mut x = rhs.clone();
    let mut total = 0usize;
    let mut r = rhs - &op(&x);
    let mut residual = vec_norm(&r) / b_norm;
    while residual > tol && total < max_iter {
        let beta = vec_norm(&r);
        let mut basis: Vec<CVec> = Vec::with_capacity(restart + 1);
        basis.push(r.mapv(|z| z / beta));
        let mut h = Array2::<C64>::zeros((restart + 1, restart));
        let mut cs = vec![0.0_f64; restart];
        let mut sn = vec![C64::new(0.0, 0.0); restart];
        let mut g = vec![C64::new(0.0, 0.0); restart + 1];
        g[0] = C64::new(beta, 0.0);
        let mut k = 0;
        for j in 0..restart {
            let mut w = op(&basis[j]);
            total += 1;
            for _ in 0..2 {
                for (i, v) in basis.iter().enumerate() {
                    let hij = vdot(v, &w);
                    h[[i, j]] += hij;
                    w.scaled_add(-hij, v);
                }
            }
            let wn = vec_norm(&w);
            h[[j + 1, j]] = C64::new(wn, 0.0);
            for i in 0..j {
                let (a, b) = (h[[i, j]], h[[i + 1, j]]);
                h[[i, j]] = a * cs[i] + sn[i] * b;
                h[[i + 1, j]] = -sn[i].conj() * a + b * cs[i];
            }
            let (a, b) = (h[[j, j]], h[[j + 1, j]]);
            let rr = (a.norm_sqr() + b.norm_sqr()).sqrt();
            if a.norm() == 0.0 {
                cs[j] = 0.0;
                sn[j] = C64::new(1.0, 0.0);
            } else {
                cs[j] = a.norm() / rr;
                sn[j] = (a / a.norm()) * b.conj() / rr;
            }
            h[[j, j]] = a * cs[j] + sn[j] * b;
            h[[j + 1, j]] = C64::new(0.0, 0.0);
            let gj = g[j];
            g[j] = gj * cs[j];
            g[j + 1] = -sn[j].conj() * gj;
            k = j + 1;
            let est = g[j + 1].norm() / b_norm;
            if est <= tol * 0.5 || wn <= 1e-300 || total >= max_iter {
                break;
            }
            basis.push(w.mapv(|z| z / wn));
        }
        // back substitution on the k x k triangle
        let mut y = vec![C64::new(0.0, 0.0); k];
        for i in (0..k).rev() {
            let mut acc = g[i];
            for l in i + 1..k {
                acc -= h[[i, l]] * y[l];
            }
            y[i] = acc / h[[i, i]];
        }
        for (yi, v) in y.iter().zip(&basis) {
            x.scaled_add(*yi, v);
        }
        r = rhs - &op(&x);
        residual = vec_norm(&r) / b_norm;
    }
    if residual > tol {
        return Err(Error::NotConverged {
            what: "regularized geometric sum",
            iterations: total,
            residual,
        });
    }
    Ok(GeometricSolve {
        x,
        residual,
        iterations: total,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct EigenpairOptions {
    pub tol: f64,
    pub max_restarts: usize,
    pub krylov_dim: usize,
}

impl Default for EigenpairOptions {
    fn default() -> Self {
        let t = Tolerances::DEFAULT;
        Self {
            tol: t.eigenpair,
            max_restarts: t.eigenpair_max_restarts,
            krylov_dim: t.krylov_dim,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LeadingEigenpair {
    pub value: C64,
    /// Unit-norm eigenvector.
    pub vector: CVec,
    /// `||A v - lambda v||`.
    pub residual: f64,
    pub matvecs: usize,
    /// Ritz values of the final Krylov cycle, by decreasing magnitude.
    pub ritz_values: Vec<C64>,
}

impl LeadingEigenpair {
    /// `|lambda_2| / |lambda_1|` from the final Ritz values.
    pub fn subleading_ratio(&self) -> Option<f64> {
        self.ritz_values
            .get(1)
            .map(|l2| l2.norm() / self.value.norm().max(f64::MIN_POSITIVE))
    }
}

fn default_start(n: usize) -> CVec {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_cafe);
    CVec::from_shape_fn(n, |_| {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        C64::new(1.0 + 0.25 * re, 0.25 * im)
    })
}

/// Largest-magnitude eigenpair by thick-restarted Arnoldi. Each restart
/// keeps the invariant subspace of the leading half of the Ritz values,
/// so clustered leading eigenvalues do not stall convergence.
pub fn leading_eigenpair<M: LinearMap>(
    op: &M,
    start: Option<&CVec>,
    opts: &EigenpairOptions,
) -> Result<LeadingEigenpair> {
    let n = op.dim();
    if n == 0 {
        return Err(Error::Shape("leading_eigenpair on an empty space".into()));
    }
    let m = opts.krylov_dim.min(n).max(1);
    let v0 = match start {
        Some(x) if x.len() == n && vec_norm(x) > 0.0 => x.clone(),
        Some(x) if x.len() != n => {
            return Err(Error::Shape(format!(
                "start vector has length {}, operator dim {n}",
                x.len()
            )))
        }
        _ => default_start(n),
    };
    let nv = vec_norm(&v0);
    let mut basis: Vec<CVec> = vec![v0.mapv(|z| z / nv)];
    // A V_p = V_p H[..p, ..p] + v_{p+1} H[p, ..p] after a thick restart
    let mut h = Array2::<C64>::zeros((m + 1, m));
    let mut kept = 0usize;
    let mut matvecs = 0usize;
    let mut last_residual = f64::INFINITY;
    for _restart in 0..opts.max_restarts.max(1) {
        let mut k = m;
        for j in kept..m {
            let mut w = op.apply(&basis[j]);
            matvecs += 1;
            // classical Gram-Schmidt, repeated only on heavy cancellation
            let mut before = vec_norm(&w);
            let mut wn = before;
            for _ in 0..2 {
                let coeffs: Vec<C64> = basis.iter().map(|v| vdot(v, &w)).collect();
                for (i, (c, v)) in coeffs.iter().zip(&basis).enumerate() {
                    h[[i, j]] += *c;
                    axpy(-*c, v, &mut w);
                }
                wn = vec_norm(&w);
                if wn > 0.7 * before {
                    break;
                }
                before = wn;
            }
            h[[j + 1, j]] = C64::new(wn, 0.0);
            let col_scale = h.slice(s![..=j, j]).iter().map(|z| z.norm()).fold(0.0, f64::max);
            if wn <= 1e-14 * col_scale.max(f64::MIN_POSITIVE) || j + 1 == n {
                k = j + 1;
                break;
            }
            basis.push(w.mapv(|z| z / wn));
        }
        let hk = h.slice(s![..k, ..k]).to_owned();
        let (vals, vecs) = if k == 1 {
            // LAPACK rejects the 1x1 view's strides
            (CVec::from_elem(1, hk[[0, 0]]), Array2::from_elem((1, 1), C64::new(1.0, 0.0)))
        } else {
            hk.eig()?
        };
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| vals[b].norm().partial_cmp(&vals[a].norm()).unwrap());
        let lead = order[0];
        let lambda = vals[lead];
        let y = vecs.column(lead).to_owned();
        let yn = vec_norm(&y);
        let mut ritz = CVec::zeros(n);
        for (yi, v) in y.iter().zip(&basis) {
            ritz.scaled_add(*yi / yn, v);
        }
        let rn = vec_norm(&ritz);
        ritz.mapv_inplace(|z| z / rn);
        let estimate = h[[k, k - 1]].norm() * (y[k - 1] / yn).norm();
        let ritz_values: Vec<C64> = order.iter().map(|&i| vals[i]).collect();
        if estimate <= opts.tol * lambda.norm().max(f64::MIN_POSITIVE) {
            // confirm with an explicit residual
            let av = op.apply(&ritz);
            matvecs += 1;
            let residual = vec_norm(&(&av - &ritz.mapv(|z| z * lambda)));
            if residual <= 10.0 * opts.tol * lambda.norm().max(f64::MIN_POSITIVE) {
                return Ok(LeadingEigenpair {
                    value: lambda,
                    vector: ritz,
                    residual,
                    matvecs,
                    ritz_values,
                });
            }
            last_residual = residual;
        } else {
            last_residual = estimate;
        }
        let p = m / 2;
        let thick = if k == m && p >= 1 && basis.len() == m + 1 {
            let sel = Array2::from_shape_fn((m, p), |(i, c)| vecs[[i, order[c]]]);
            super::qr_isometry(&sel).ok()
        } else {
            None
        };
        let coupling = h[[k, k - 1]];
        h.fill(C64::new(0.0, 0.0));
        match thick {
            Some(q) => {
                let tail = basis.pop().expect("residual vector");
                let mut next: Vec<CVec> = (0..p)
                    .map(|c| {
                        let mut v = CVec::zeros(n);
                        for (qi, b) in q.column(c).iter().zip(&basis) {
                            v.scaled_add(*qi, b);
                        }
                        v
                    })
                    .collect();
                next.push(tail);
                h.slice_mut(s![..p, ..p]).assign(&super::dagger(&q).dot(&hk).dot(&q));
                h.slice_mut(s![p, ..p]).assign(&q.row(m - 1).mapv(|z| z * coupling));
                basis = next;
                kept = p;
            }
            None => {
                basis = vec![ritz];
                kept = 0;
            }
        }
    }
    Err(Error::NotConverged {
        what: "leading eigenpair (Arnoldi)",
        iterations: matvecs,
        residual: last_residual,
    })
}
