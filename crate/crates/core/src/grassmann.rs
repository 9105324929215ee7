//! Grassmann manifold of isometries `W` (`n x p`, `W^dagger W = 1`) with the
//! Euclidean metric. Tangent vectors are stored in the coordinates of the
//! orthogonal complement, `Delta = W_perp Z`.

use std::sync::Arc;

use ndarray::{concatenate, s, Axis};

use crate::error::{Error, Result};
use crate::linalg::{dagger, eigh, expm_antihermitian, isometry_defect, qr_isometry, CMat, C64};

/// Largest `||W^dagger W - 1||_max` accepted as a point on the manifold.
pub const ISOMETRY_TOL: f64 = 1e-10;

/// A point on the manifold together with an orthonormal basis of its
/// complement.
#[derive(Debug, Clone)]
pub struct Isometry {
    w: CMat,
    perp: CMat,
}

impl Isometry {
    pub fn new(w: CMat) -> Result<Self> {
        let (n, p) = w.dim();
        if n < p {
            return Err(Error::Shape(format!("isometry must have n >= p, got {n}x{p}")));
        }
        let defect = isometry_defect(&w);
        if defect > ISOMETRY_TOL {
            return Err(Error::InvalidArgument(format!(
                "W^dagger W deviates from the identity by {defect:.3e}"
            )));
        }
        let perp = complement(&w)?;
        Ok(Self { w, perp })
    }

    /// Orthonormalizes the columns of `m` first.
    pub fn from_columns(m: &CMat) -> Result<Self> {
        Self::new(qr_isometry(m)?)
    }

    pub fn matrix(&self) -> &CMat {
        &self.w
    }

    pub fn complement(&self) -> &CMat {
        &self.perp
    }

    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    pub fn p(&self) -> usize {
        self.w.ncols()
    }

    /// `[W | W_perp]`, unitary.
    pub fn frame(&self) -> CMat {
        concatenate(Axis(1), &[self.w.view(), self.perp.view()]).unwrap()
    }
}

/// Orthonormal basis of the orthogonal complement of span(W): the
/// eigenvectors of `1 - W W^dagger` with eigenvalue one.
pub fn complement(w: &CMat) -> Result<CMat> {
    let (n, p) = w.dim();
    if n == p {
        return Ok(CMat::zeros((n, 0)));
    }
    let proj = CMat::eye(n) - w.dot(&dagger(w));
    let e = eigh(&crate::linalg::hermitian_part(&proj))?;
    Ok(e.vectors.slice(s![.., p..]).to_owned())
}

/// Tangent vector at `base` in complement coordinates, `Z` of shape
/// `(n - p) x p`.
#[derive(Debug, Clone)]
pub struct Tangent {
    pub base: Arc<Isometry>,
    pub z: CMat,
}

impl Tangent {
    pub fn zeros(base: &Arc<Isometry>) -> Self {
        Self {
            base: base.clone(),
            z: CMat::zeros((base.n() - base.p(), base.p())),
        }
    }

    pub fn from_coordinates(base: &Arc<Isometry>, z: CMat) -> Result<Self> {
        if z.dim() != (base.n() - base.p(), base.p()) {
            return Err(Error::Shape(format!(
                "tangent coordinates {:?} at a {}x{} isometry",
                z.dim(),
                base.n(),
                base.p()
            )));
        }
        Ok(Self { base: base.clone(), z })
    }

    /// `Delta = W_perp Z`.
    pub fn embedded(&self) -> CMat {
        self.base.complement().dot(&self.z)
    }

    pub fn norm(&self) -> f64 {
        self.z.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            base: self.base.clone(),
            z: self.z.mapv(|v| v * a),
        }
    }

    /// `self + a * other`.
    pub fn axpy(&self, a: f64, other: &Tangent) -> Result<Self> {
        same_base(self, other)?;
        Ok(Self {
            base: self.base.clone(),
            z: &self.z + &other.z.mapv(|v| v * a),
        })
    }
}

fn same_base(a: &Tangent, b: &Tangent) -> Result<()> {
    if Arc::ptr_eq(&a.base, &b.base) || a.base.w == b.base.w {
        Ok(())
    } else {
        Err(Error::InvalidArgument(
            "tangent vectors live at different base points".into(),
        ))
    }
}

/// Euclidean metric `Re tr(Delta_1^dagger Delta_2)`.
pub fn inner(a: &Tangent, b: &Tangent) -> Result<f64> {
    same_base(a, b)?;
    Ok(a.z.iter().zip(b.z.iter()).map(|(x, y)| (x.conj() * y).re).sum())
}

/// Tangent part `(1 - W W^dagger) Y` of an arbitrary `n x p` matrix.
pub fn project(base: &Arc<Isometry>, y: &CMat) -> Result<Tangent> {
    if y.dim() != base.w.dim() {
        return Err(Error::Shape(format!(
            "cannot project a {:?} matrix at a {:?} isometry",
            y.dim(),
            base.w.dim()
        )));
    }
    Ok(Tangent {
        base: base.clone(),
        z: dagger(&base.perp).dot(y),
    })
}

/// `exp(step K)` with `K = [[0, -Z^dagger], [Z, 0]]` in the frame basis.
fn frame_exponential(delta: &Tangent, step: f64) -> Result<CMat> {
    let (m, p) = delta.z.dim();
    let n = m + p;
    let mut k = CMat::zeros((n, n));
    k.slice_mut(s![p.., ..p]).assign(&delta.z);
    k.slice_mut(s![..p, p..]).assign(&dagger(&delta.z).mapv(|v| -v));
    expm_antihermitian(&k, step)
}

/// Geodesic step `exp(step Q) W` with
/// `Q = [W W_perp] [[0, -Z^dagger], [Z, 0]] [W W_perp]^dagger`, plus the
/// transported images `exp(step Q) Omega_i` re-expressed at the new point.
pub fn retract_with_transport(
    delta: &Tangent,
    step: f64,
    carry: &[&Tangent],
) -> Result<(Arc<Isometry>, Vec<Tangent>)> {
    for t in carry {
        same_base(delta, t)?;
    }
    let base = &delta.base;
    let p = base.p();
    let frame = base.frame();
    let ek = frame_exponential(delta, step)?;
    let w_new = frame.dot(&ek.slice(s![.., ..p]));
    let point = Arc::new(Isometry::new(w_new)?);
    let perp_h = dagger(point.complement());
    let moved = carry
        .iter()
        .map(|t| {
            // exp(step Q) W_perp Z = frame * exp(step K) * [0; Z]
            let img = frame.dot(&ek.slice(s![.., p..]).dot(&t.z));
            Tangent {
                base: point.clone(),
                z: perp_h.dot(&img),
            }
        })
        .collect();
    Ok((point, moved))
}

pub fn retract(delta: &Tangent, step: f64) -> Result<Arc<Isometry>> {
    Ok(retract_with_transport(delta, step, &[])?.0)
}

/// Transport of `omega` along the geodesic generated by `delta`.
pub fn transport(delta: &Tangent, omega: &Tangent, step: f64) -> Result<Tangent> {
    Ok(retract_with_transport(delta, step, &[omega])?.1.remove(0))
}

/// Random point from a seeded Gaussian matrix, for tests and
/// initialization.
pub fn random_isometry(n: usize, p: usize, rng: &mut impl rand::Rng) -> Result<Isometry> {
    use rand_distr::{Distribution, StandardNormal};
    let m = CMat::from_shape_fn((n, p), |_| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        C64::new(re, im)
    });
    Isometry::from_columns(&m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::frobenius_norm;
    use crate::linalg::tests::gaussian;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn point(n: usize, p: usize, seed: u64) -> Arc<Isometry> {
        Arc::new(random_isometry(n, p, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap())
    }

    #[test]
    fn complement_of_identity_columns() {
        let mut w = CMat::zeros((4, 2));
        w[[0, 0]] = C64::new(1.0, 0.0);
        w[[1, 1]] = C64::new(1.0, 0.0);
        let x = Isometry::new(w).unwrap();
        assert!(isometry_defect(&x.frame()) < 1e-12);
        assert!(frobenius_norm(&x.complement().slice(s![..2, ..]).to_owned()) < 1e-12);
    }

    #[test]
    fn complement_is_orthogonal() {
        let x = point(6, 2, 1);
        assert!(frobenius_norm(&dagger(x.matrix()).dot(x.complement())) < 1e-12);
        assert!(isometry_defect(&x.frame()) < 1e-12);
    }

    #[test]
    fn square_isometry_has_empty_complement() {
        let x = point(3, 3, 2);
        assert_eq!(x.complement().ncols(), 0);
        assert_eq!(x.frame(), *x.matrix());
    }

    #[test]
    fn inner_product_routes_agree() {
        let x = point(7, 3, 3);
        let a = project(&x, &gaussian(7, 3, 4)).unwrap();
        let b = project(&x, &gaussian(7, 3, 5)).unwrap();
        let embedded: f64 = a
            .embedded()
            .iter()
            .zip(b.embedded().iter())
            .map(|(u, v)| (u.conj() * v).re)
            .sum();
        assert!((inner(&a, &b).unwrap() - embedded).abs() < 1e-12);
        let unit = a.scaled(1.0 / a.norm());
        assert!((inner(&unit, &unit).unwrap() - 1.0).abs() < 1e-14);
        let other = point(7, 3, 6);
        assert!(inner(&a, &Tangent::zeros(&other)).is_err());
    }

    #[test]
    fn projection_kills_vertical_directions() {
        let x = point(6, 2, 7);
        assert!(project(&x, x.matrix()).unwrap().norm() < 1e-12);
        let t = project(&x, &gaussian(6, 2, 8)).unwrap();
        let again = project(&x, &t.embedded()).unwrap();
        assert!(frobenius_norm(&(&again.z - &t.z)) < 1e-12);
        assert!(frobenius_norm(&dagger(x.matrix()).dot(&t.embedded())) < 1e-12);
    }

    #[test]
    fn retraction_derivative_is_the_tangent() {
        let x = point(8, 3, 9);
        let d = project(&x, &gaussian(8, 3, 10)).unwrap();
        assert!(frobenius_norm(&(retract(&d, 0.0).unwrap().matrix() - x.matrix())) < 1e-14);
        let h = 1e-6;
        let fd = (retract(&d, h).unwrap().matrix() - x.matrix()).mapv(|v| v / h);
        assert!(frobenius_norm(&(fd - d.embedded())) < 1e-5);
    }

    #[test]
    fn large_steps_stay_on_the_manifold() {
        let x = point(4, 1, 11);
        let d = project(&x, &gaussian(4, 1, 12)).unwrap();
        for step in [1.0, 5.0, 10.0, 37.0] {
            let y = retract(&d, step).unwrap();
            assert!(isometry_defect(y.matrix()) < 1e-12);
        }
    }

    #[test]
    fn transport_preserves_inner_products_and_tangency() {
        let x = point(9, 3, 13);
        let d = project(&x, &gaussian(9, 3, 14)).unwrap();
        let a = project(&x, &gaussian(9, 3, 15)).unwrap();
        let b = project(&x, &gaussian(9, 3, 16)).unwrap();
        let (y, moved) = retract_with_transport(&d, 0.7, &[&a, &b]).unwrap();
        let before = inner(&a, &b).unwrap();
        let after = inner(&moved[0], &moved[1]).unwrap();
        assert!((before - after).abs() < 1e-10);
        assert!(frobenius_norm(&dagger(y.matrix()).dot(&moved[0].embedded())) < 1e-10);
        let same = transport(&d, &a, 0.0).unwrap();
        assert!(frobenius_norm(&(same.embedded() - a.embedded())) < 1e-12);
    }

    #[test]
    fn geodesic_keeps_speed() {
        // along a geodesic the transported velocity is the velocity itself
        let x = point(6, 2, 17);
        let d = project(&x, &gaussian(6, 2, 18)).unwrap();
        let (_, v) = retract_with_transport(&d, 1.3, &[&d]).unwrap();
        assert!((v[0].norm() - d.norm()).abs() < 1e-10);
    }
}
