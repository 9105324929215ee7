//! Purity per site: the leading eigenvalue of the four-layer transfer
//! operator of `tr rho^2`, and its derivative with respect to `conj(A)`.
//!
//! Layers are ordered `[A^{s a}, conj A^{s' a}, conj A^{s b}, A^{s' b}]`:
//! the first two share the ancilla, the first and third share the system.
//! Vectors on the four bonds are stored as `[D, D, D, D]` arrays, and left
//! and right vectors pair bilinearly (no conjugation).

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array4, ArrayD, ArrayView2, IxDyn};

use super::PurificationMPS;
use crate::error::{Error, Result};
use crate::linalg::{leading_eigenpair, tensordot, EigenpairOptions, FnMap, CMat, CVec, C64};

#[derive(Debug, Clone)]
pub struct PurityFixedPoints {
    pub eta: f64,
    pub left_vec: ArrayD<C64>,
    pub right_vec: ArrayD<C64>,
    pub residual: f64,
    pub matvecs: usize,
}

impl PurityFixedPoints {
    /// Bilinear pairing of the two eigenvectors; 1 after construction.
    pub fn normalization(&self) -> C64 {
        bilinear(&self.left_vec, &self.right_vec)
    }
}

fn bilinear(a: &ArrayD<C64>, b: &ArrayD<C64>) -> C64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Precomputed slices for one direction of the four-layer contraction.
/// The left action is the right action of the transposed tensor.
struct Kernel {
    ds: usize,
    da: usize,
    bond: usize,
    /// rows `(s, a, k)`, columns `i`
    w: CMat,
    /// per ancilla `a`: `[i', (s', k')] = conj A[s', a, k', i']`
    by_anc: Vec<CMat>,
    /// per system `s`: `[j, (b, l)] = conj A[s, b, l, j]`
    by_sys: Vec<CMat>,
    /// rows `(s', b, j')`, columns `l'`: `A[s', b, l', j']`
    closing: CMat,
}

impl Kernel {
    fn new(a: &Array4<C64>) -> Self {
        let (ds, da, b, _) = a.dim();
        let w = a
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((ds * da * b, b))
            .expect("stacked layout");
        let by_anc = (0..da)
            .map(|an| CMat::from_shape_fn((b, ds * b), |(i, c)| a[[c / b, an, c % b, i]].conj()))
            .collect();
        let by_sys = (0..ds)
            .map(|s| CMat::from_shape_fn((b, da * b), |(j, c)| a[[s, c / b, c % b, j]].conj()))
            .collect();
        let closing = CMat::from_shape_fn((ds * da * b, b), |(r, l)| {
            let (sb, j) = (r / b, r % b);
            a[[sb / da, sb % da, l, j]]
        });
        Self {
            ds,
            da,
            bond: b,
            w,
            by_anc,
            by_sys,
            closing,
        }
    }

    fn apply(&self, r: &[C64]) -> CVec {
        let (ds, da, b) = (self.ds, self.da, self.bond);
        let one = C64::new(1.0, 0.0);
        let rv = ArrayView2::from_shape((b, b * b * b), r).expect("four-leg vector");
        // [s,a,k | i',j,j']
        let z1 = self.w.dot(&rv);
        // [s,k,j,j' | s',k']
        let mut z2 = CMat::zeros((ds * b * b * b, ds * b));
        for s in 0..ds {
            for k in 0..b {
                let mut out = z2.slice_mut(s![(s * b + k) * b * b..(s * b + k + 1) * b * b, ..]);
                for an in 0..da {
                    let row = z1.row((s * da + an) * b + k);
                    let blk = row.into_shape_with_order((b, b * b)).expect("contiguous row");
                    general_mat_mul(one, &blk.t(), &self.by_anc[an], one, &mut out);
                }
            }
        }
        // [k,j',s',k' | b,l]
        let mut z3 = CMat::zeros((b * b * ds * b, da * b));
        for k in 0..b {
            let mut out = z3.slice_mut(s![k * b * ds * b..(k + 1) * b * ds * b, ..]);
            for s in 0..ds {
                let blk = z2.slice(s![(s * b + k) * b * b..(s * b + k + 1) * b * b, ..]);
                let blk = blk.into_shape_with_order((b, b * ds * b)).expect("contiguous block");
                general_mat_mul(one, &blk.t(), &self.by_sys[s], one, &mut out);
            }
        }
        // -> [k,k',l | s',b,j']
        let z3 = z3
            .into_shape_with_order(IxDyn(&[b, b, ds, b, da, b]))
            .expect("six legs")
            .permuted_axes(IxDyn(&[0, 3, 5, 2, 4, 1]))
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((b * b * b, ds * da * b))
            .expect("grouped legs");
        z3.dot(&self.closing).into_shape_with_order(b.pow(4)).expect("flat")
    }
}

/// The ket tensor as `[s, a, l, r]`, its conjugate, and the kernels for
/// both directions.
struct Layers {
    a: ArrayD<C64>,
    ac: ArrayD<C64>,
    right_kernel: Kernel,
    left_kernel: Kernel,
    bond: usize,
}

impl Layers {
    fn new(mps: &PurificationMPS) -> Self {
        let a4: Array4<C64> = mps.tensor4();
        let at4 = a4.clone().permuted_axes([0, 1, 3, 2]).as_standard_layout().into_owned();
        Self {
            right_kernel: Kernel::new(&a4),
            left_kernel: Kernel::new(&at4),
            ac: a4.mapv(|z| z.conj()).into_dyn(),
            a: a4.into_dyn(),
            bond: mps.bond,
        }
    }

    fn right_vec(&self, v: &CVec) -> CVec {
        self.right_kernel.apply(v.as_slice().expect("contiguous vector"))
    }

    fn left_vec(&self, v: &CVec) -> CVec {
        self.left_kernel.apply(v.as_slice().expect("contiguous vector"))
    }

    fn shape(&self) -> IxDyn {
        IxDyn(&[self.bond; 4])
    }

    fn to_array(&self, v: &CVec) -> ArrayD<C64> {
        ArrayD::from_shape_vec(self.shape(), v.to_vec()).expect("four-leg reshape")
    }
}

fn flat(a: &ArrayD<C64>) -> CVec {
    a.iter().copied().collect()
}

/// `rho_{i i'} rho_{j' j}`, exact when system and ancilla decouple.
fn default_right(mps: &PurificationMPS) -> ArrayD<C64> {
    let r = mps.right_fixed_point();
    let b = mps.bond;
    ArrayD::from_shape_fn(IxDyn(&[b; 4]), |ix| r[[ix[0], ix[1]]] * r[[ix[3], ix[2]]])
}

fn default_left(bond: usize) -> ArrayD<C64> {
    ArrayD::from_shape_fn(IxDyn(&[bond; 4]), |ix| {
        if ix[0] == ix[1] && ix[2] == ix[3] {
            C64::new(1.0, 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

pub fn purity_per_site(mps: &PurificationMPS) -> Result<PurityFixedPoints> {
    purity_per_site_warm(mps, None)
}

/// As [`purity_per_site`], starting the iterations from previous
/// eigenvectors when given.
pub fn purity_per_site_warm(
    mps: &PurificationMPS,
    warm: Option<&PurityFixedPoints>,
) -> Result<PurityFixedPoints> {
    let layers = Layers::new(mps);
    let b = mps.bond;
    let n = b.pow(4);
    let opts = EigenpairOptions::default();
    let right_op = FnMap::new(n, |v: &CVec| layers.right_vec(v));
    let left_op = FnMap::new(n, |v: &CVec| layers.left_vec(v));

    let (r0, l0) = match warm {
        Some(w) if w.right_vec.len() == n => (flat(&w.right_vec), flat(&w.left_vec)),
        _ => (flat(&default_right(mps)), flat(&default_left(b))),
    };
    let rres = leading_eigenpair(&right_op, Some(&r0), &opts)?;
    let lres = leading_eigenpair(&left_op, Some(&l0), &opts)?;
    let lambda = rres.value;
    if (lres.value - lambda).norm() > 1e-8 * lambda.norm().max(1e-300) {
        return Err(Error::NotConverged {
            what: "purity transfer left/right eigenvalues",
            iterations: rres.matvecs + lres.matvecs,
            residual: (lres.value - lambda).norm(),
        });
    }
    if lambda.im.abs() > 1e-8 * lambda.norm() || !(lambda.re > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "purity transfer has leading eigenvalue {lambda}"
        )));
    }
    let right = layers.to_array(&rres.vector);
    let mut left = layers.to_array(&lres.vector);
    let norm = bilinear(&left, &right);
    if norm.norm() < 1e-300 {
        return Err(Error::DegenerateSpectrum { gap: 0.0 });
    }
    // two-sided Rayleigh quotient: second order in both residuals
    let image = layers.to_array(&layers.right_vec(&rres.vector));
    let eta = bilinear(&left, &image) / norm;
    left.mapv_inplace(|z| z / norm);
    Ok(PurityFixedPoints {
        eta: eta.re,
        left_vec: left,
        right_vec: right,
        residual: rres.residual.max(lres.residual),
        matvecs: rres.matvecs + lres.matvecs,
    })
}

/// `d eta / d conj(A)` in the stacked `(d D) x D` layout: the insertions
/// in the two conjugate layers, divided by `<L|R>`.
pub fn grad_purity(mps: &PurificationMPS, fps: &PurityFixedPoints) -> Result<CMat> {
    let layers = Layers::new(mps);
    let (a, ac) = (&layers.a, &layers.ac);
    let (l, r) = (&fps.left_vec, &fps.right_vec);
    let z1 = tensordot(a, r, &[3], &[0])?; // [s,a,k,i',j,j']
    let z2 = tensordot(&z1, ac, &[1, 3], &[1, 3])?; // [s,k,j,j',s',k']
    let v1 = tensordot(l, a, &[3], &[2])?; // [k,k',l,s',b,j']

    // layer 3, conj A^{s b}[l, j]
    let slot3 = tensordot(&v1, &z2, &[0, 1, 3, 5], &[1, 5, 4, 3])?; // [l,b,s,j]
    let slot3 = slot3.permuted_axes(IxDyn(&[2, 1, 0, 3]));

    // layer 2, conj A^{s' a}[k', i']
    let v2 = tensordot(&v1, ac, &[2, 4], &[2, 1])?; // [k,k',s',j',s,j]
    let slot2 = tensordot(&v2, &z1, &[0, 4, 5, 3], &[2, 0, 4, 5])?; // [k',s',a,i']
    let slot2 = slot2.permuted_axes(IxDyn(&[1, 2, 0, 3]));

    let norm = fps.normalization();
    let total = (&slot2 + &slot3).mapv(|z| z / norm);
    let (ds, da, b) = (mps.d_sys, mps.d_anc, mps.bond);
    let flat: Vec<C64> = total.as_standard_layout().iter().copied().collect();
    CMat::from_shape_vec((ds * da * b, b), flat).map_err(|e| Error::Shape(e.to_string()))
}
