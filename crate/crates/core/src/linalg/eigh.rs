use std::os::raw::{c_char, c_int};

use lapack_sys::__BindgenComplex;
use ndarray::{Array2, ShapeBuilder};

use super::{check_finite, check_square, dagger, hermitian_asymmetry, norm_estimate, CMat, C64};
use super::Tolerances;
use crate::error::{Error, Result};

/// Eigendecomposition `M = V diag(values) V^dagger`, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct Eigh {
    pub values: Vec<f64>,
    pub vectors: CMat,
}

impl Eigh {
    pub fn reconstruct(&self) -> CMat {
        let mut scaled = self.vectors.clone();
        for (mut col, &w) in scaled.columns_mut().into_iter().zip(&self.values) {
            col.mapv_inplace(|z| z * w);
        }
        scaled.dot(&dagger(&self.vectors))
    }
}

fn validate(m: &CMat) -> Result<()> {
    check_square(m, "eigh")?;
    check_finite(m, "eigh input")?;
    let asym = hermitian_asymmetry(m);
    let tol = Tolerances::DEFAULT.hermitian * norm_estimate(m).max(1.0);
    if asym > tol {
        return Err(Error::NotHermitian {
            asymmetry: asym,
            tolerance: tol,
        });
    }
    Ok(())
}

fn is_real(m: &CMat) -> bool {
    m.iter().all(|z| z.im == 0.0)
}

/// Hermitian eigendecomposition through LAPACK's divide-and-conquer driver.
/// Real symmetric inputs take the real path.
pub fn eigh(m: &CMat) -> Result<Eigh> {
    validate(m)?;
    let (values, vectors) = if is_real(m) {
        let (w, v) = syevd(m.mapv(|z| z.re), true)?;
        (w, v.mapv(|x| C64::new(x, 0.0)))
    } else {
        heevd(m, true)?
    };
    Ok(Eigh { values, vectors })
}

/// Real symmetric eigendecomposition, eigenvalues ascending. Only the upper
/// triangle is read.
pub fn eigh_real(m: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
    if m.nrows() != m.ncols() {
        return Err(Error::Shape(format!("eigh_real: {}x{} is not square", m.nrows(), m.ncols())));
    }
    if !m.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("eigh_real input"));
    }
    syevd(m.clone(), true)
}

/// Eigenvalues only, ascending.
pub fn eigvalsh(m: &CMat) -> Result<Vec<f64>> {
    validate(m)?;
    if is_real(m) {
        Ok(syevd(m.mapv(|z| z.re), false)?.0)
    } else {
        Ok(heevd(m, false)?.0)
    }
}

/// `V f(Lambda) V^dagger` for a Hermitian `m`.
pub fn hermitian_function(m: &CMat, f: impl Fn(f64) -> f64) -> Result<CMat> {
    let e = eigh(m)?;
    let mut scaled = e.vectors.clone();
    for (mut col, &w) in scaled.columns_mut().into_iter().zip(&e.values) {
        let fw = f(w);
        col.mapv_inplace(|z| z * fw);
    }
    Ok(scaled.dot(&dagger(&e.vectors)))
}

fn heevd(m: &CMat, vectors: bool) -> Result<(Vec<f64>, CMat)> {
    let n = m.nrows();
    if n == 0 {
        return Ok((vec![], CMat::zeros((0, 0))));
    }
    let mut a = Array2::<C64>::zeros((n, n).f());
    a.assign(m);
    let jobz = if vectors { b'V' } else { b'N' } as c_char;
    let uplo = b'U' as c_char;
    let nn = n as c_int;
    let mut w = vec![0.0; n];
    let mut info: c_int = 0;
    let mut work_q = [C64::new(0.0, 0.0)];
    let mut rwork_q = [0.0_f64];
    let mut iwork_q: [c_int; 1] = [0];
    // SAFETY: workspace query with valid pointers of the documented sizes.
    unsafe {
        lapack_sys::zheevd_(
            &jobz,
            &uplo,
            &nn,
            a.as_mut_ptr() as *mut __BindgenComplex<f64>,
            &nn,
            w.as_mut_ptr(),
            work_q.as_mut_ptr() as *mut __BindgenComplex<f64>,
            &-1,
            rwork_q.as_mut_ptr(),
            &-1,
            iwork_q.as_mut_ptr(),
            &-1,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Lapack {
            routine: "zheevd",
            info,
        });
    }
    let lwork = work_q[0].re.max(1.0) as c_int;
    let lrwork = rwork_q[0].max(1.0) as c_int;
    let liwork = iwork_q[0].max(1);
    let mut work = vec![C64::new(0.0, 0.0); lwork as usize];
    let mut rwork = vec![0.0_f64; lrwork as usize];
    let mut iwork = vec![0 as c_int; liwork as usize];
    // SAFETY: `a` is column-major n x n, buffers sized from the query above.
    unsafe {
        lapack_sys::zheevd_(
            &jobz,
            &uplo,
            &nn,
            a.as_mut_ptr() as *mut __BindgenComplex<f64>,
            &nn,
            w.as_mut_ptr(),
            work.as_mut_ptr() as *mut __BindgenComplex<f64>,
            &lwork,
            rwork.as_mut_ptr(),
            &lrwork,
            iwork.as_mut_ptr(),
            &liwork,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Lapack {
            routine: "zheevd",
            info,
        });
    }
    Ok((w, a.as_standard_layout().into_owned()))
}

fn syevd(m: Array2<f64>, vectors: bool) -> Result<(Vec<f64>, Array2<f64>)> {
    let n = m.nrows();
    if n == 0 {
        return Ok((vec![], Array2::zeros((0, 0))));
    }
    let mut a = Array2::<f64>::zeros((n, n).f());
    a.assign(&m);
    let jobz = if vectors { b'V' } else { b'N' } as c_char;
    let uplo = b'U' as c_char;
    let nn = n as c_int;
    let mut w = vec![0.0; n];
    let mut info: c_int = 0;
    let mut work_q = [0.0_f64];
    let mut iwork_q: [c_int; 1] = [0];
    // SAFETY: workspace query.
    unsafe {
        lapack_sys::dsyevd_(
            &jobz,
            &uplo,
            &nn,
            a.as_mut_ptr(),
            &nn,
            w.as_mut_ptr(),
            work_q.as_mut_ptr(),
            &-1,
            iwork_q.as_mut_ptr(),
            &-1,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Lapack {
            routine: "dsyevd",
            info,
        });
    }
    let lwork = work_q[0].max(1.0) as c_int;
    let liwork = iwork_q[0].max(1);
    let mut work = vec![0.0_f64; lwork as usize];
    let mut iwork = vec![0 as c_int; liwork as usize];
    // SAFETY: column-major n x n input, buffers sized from the query.
    unsafe {
        lapack_sys::dsyevd_(
            &jobz,
            &uplo,
            &nn,
            a.as_mut_ptr(),
            &nn,
            w.as_mut_ptr(),
            work.as_mut_ptr(),
            &lwork,
            iwork.as_mut_ptr(),
            &liwork,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Lapack {
            routine: "dsyevd",
            info,
        });
    }
    Ok((w, a.as_standard_layout().into_owned()))
}
