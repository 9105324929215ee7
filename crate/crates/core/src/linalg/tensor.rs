use ndarray::{Array3, ArrayD, Axis, IxDyn};

use super::{CMat, C64};
use crate::error::{Error, Result};

/// Contracts `a` and `b` over the paired axes, like numpy's `tensordot`.
/// Output axes are the free axes of `a` followed by the free axes of `b`,
/// each in their original order.
pub fn tensordot(a: &ArrayD<C64>, b: &ArrayD<C64>, axes_a: &[usize], axes_b: &[usize]) -> Result<ArrayD<C64>> {
    if axes_a.len() != axes_b.len() {
        return Err(Error::Shape(format!(
            "tensordot: {} axes against {}",
            axes_a.len(),
            axes_b.len()
        )));
    }
    for (&i, &j) in axes_a.iter().zip(axes_b) {
        if i >= a.ndim() || j >= b.ndim() || a.shape()[i] != b.shape()[j] {
            return Err(Error::Shape(format!(
                "tensordot: axis {i} of {:?} against axis {j} of {:?}",
                a.shape(),
                b.shape()
            )));
        }
    }
    let free_a: Vec<usize> = (0..a.ndim()).filter(|k| !axes_a.contains(k)).collect();
    let free_b: Vec<usize> = (0..b.ndim()).filter(|k| !axes_b.contains(k)).collect();
    let k: usize = axes_a.iter().map(|&i| a.shape()[i]).product();
    let m: usize = free_a.iter().map(|&i| a.shape()[i]).product();
    let n: usize = free_b.iter().map(|&i| b.shape()[i]).product();

    let perm_a: Vec<usize> = free_a.iter().chain(axes_a).copied().collect();
    let perm_b: Vec<usize> = axes_b.iter().chain(&free_b).copied().collect();
    let am = a
        .view()
        .permuted_axes(IxDyn(&perm_a))
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((m, k))
        .map_err(|e| Error::Shape(e.to_string()))?;
    let bm = b
        .view()
        .permuted_axes(IxDyn(&perm_b))
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((k, n))
        .map_err(|e| Error::Shape(e.to_string()))?;
    let out_shape: Vec<usize> = free_a
        .iter()
        .map(|&i| a.shape()[i])
        .chain(free_b.iter().map(|&i| b.shape()[i]))
        .collect();
    am.dot(&bm)
        .into_shape_with_order(IxDyn(&out_shape))
        .map_err(|e| Error::Shape(e.to_string()))
}

/// MPS tensor `A^p_{l r}` stored as `[p, l, r]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rank3Tensor(pub Array3<C64>);

impl Rank3Tensor {
    pub fn zeros(d: usize, bond: usize) -> Self {
        Self(Array3::zeros((d, bond, bond)))
    }

    pub fn phys_dim(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn bond_dim(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn slice(&self, p: usize) -> CMat {
        self.0.index_axis(Axis(0), p).to_owned()
    }

    /// Stacked `(d D) x D` matrix with row index `p D + l`.
    pub fn to_matrix(&self) -> CMat {
        let (d, l, r) = self.0.dim();
        self.0
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((d * l, r))
            .expect("standard layout reshape")
    }

    pub fn from_matrix(w: &CMat, d: usize) -> Result<Self> {
        let (rows, bond) = w.dim();
        if rows != d * bond {
            return Err(Error::Shape(format!(
                "stacked matrix {rows}x{bond} does not match physical dimension {d}"
            )));
        }
        let t = w
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((d, bond, bond))
            .map_err(|e| Error::Shape(e.to_string()))?;
        Ok(Self(t))
    }

    pub fn into_dyn(self) -> ArrayD<C64> {
        self.0.into_dyn()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::tests::gaussian;

    fn naive_matmul_as_tensordot(a: &CMat, b: &CMat) -> CMat {
        let (m, k) = a.dim();
        let n = b.ncols();
        CMat::from_shape_fn((m, n), |(i, j)| (0..k).map(|l| a[[i, l]] * b[[l, j]]).sum())
    }

    #[test]
    fn matrix_product_case() {
        let a = gaussian(3, 4, 1);
        let b = gaussian(4, 5, 2);
        let c = tensordot(&a.clone().into_dyn(), &b.clone().into_dyn(), &[1], &[0]).unwrap();
        let oracle = naive_matmul_as_tensordot(&a, &b);
        let diff = (&c.into_dimensionality::<ndarray::Ix2>().unwrap() - &oracle)
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        assert!(diff < 1e-12);
    }

    #[test]
    fn multi_axis_contraction_against_loops() {
        let a = gaussian(2 * 3 * 4, 1, 3).into_shape_with_order(IxDyn(&[2, 3, 4])).unwrap();
        let b = gaussian(4 * 5 * 2, 1, 4).into_shape_with_order(IxDyn(&[4, 5, 2])).unwrap();
        let c = tensordot(&a, &b, &[0, 2], &[2, 0]).unwrap();
        assert_eq!(c.shape(), &[3, 5]);
        for j in 0..3 {
            for q in 0..5 {
                let mut s = C64::new(0.0, 0.0);
                for i in 0..2 {
                    for k in 0..4 {
                        s += a[[i, j, k]] * b[[k, q, i]];
                    }
                }
                assert!((c[[j, q]] - s).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_mismatched_axes() {
        let a = gaussian(2, 3, 1).into_dyn();
        assert!(tensordot(&a, &a, &[1], &[1]).is_ok());
        assert!(tensordot(&a, &a, &[0], &[1]).is_err());
    }

    #[test]
    fn stacked_matrix_round_trip() {
        let w = gaussian(12, 3, 5);
        let t = Rank3Tensor::from_matrix(&w, 4).unwrap();
        assert_eq!(t.bond_dim(), 3);
        assert_eq!(t.slice(2)[[1, 0]], w[[2 * 3 + 1, 0]]);
        assert_eq!(t.to_matrix(), w);
    }
}
