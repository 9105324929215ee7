use std::sync::{Arc, OnceLock};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::linalg::{
    dagger, eigvalsh, hermitian_asymmetry, hermitian_part, norm_estimate, trace, CMat, CVec,
    Tolerances, C64,
};

#[derive(Debug, Clone)]
enum Repr {
    Dense(CMat),
    /// `V diag(w) V^dagger` with orthonormal columns of `V`.
    Spectral { basis: Arc<CMat>, weights: Vec<f64> },
}

/// Unit-trace positive semidefinite operator.
///
/// Ensembles built from a Hamiltonian spectrum keep the spectral form and
/// only materialize the dense matrix when asked.
#[derive(Debug, Clone)]
pub struct DensityOperator {
    dim: usize,
    repr: Repr,
    matrix: OnceLock<CMat>,
    eigenvalues: OnceLock<Vec<f64>>,
}

const VALIDITY_TOL: f64 = 1e-12;

impl DensityOperator {
    /// Checks Hermiticity, unit trace and positivity, all to 1e-12.
    pub fn from_matrix(m: CMat) -> Result<Self> {
        crate::linalg::check_square(&m, "density operator")?;
        crate::linalg::check_finite(&m, "density operator")?;
        let asym = hermitian_asymmetry(&m);
        if asym > VALIDITY_TOL * norm_estimate(&m).max(1.0) {
            return Err(Error::NotHermitian {
                asymmetry: asym,
                tolerance: VALIDITY_TOL,
            });
        }
        let tr = trace(&m).re;
        if (tr - 1.0).abs() > VALIDITY_TOL {
            return Err(Error::InvalidArgument(format!(
                "density operator has trace {tr}, expected 1"
            )));
        }
        let values = eigvalsh(&m)?;
        if values[0] < -VALIDITY_TOL {
            return Err(Error::InvalidArgument(format!(
                "density operator has negative eigenvalue {:.3e}",
                values[0]
            )));
        }
        let dim = m.nrows();
        Ok(Self {
            dim,
            repr: Repr::Dense(m),
            matrix: OnceLock::new(),
            eigenvalues: OnceLock::from(values),
        })
    }

    /// Hermitizes and divides by the trace before validating.
    pub fn normalized(m: &CMat) -> Result<Self> {
        let h = hermitian_part(m);
        let tr = trace(&h).re;
        if !(tr > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "cannot normalize an operator with trace {tr}"
            )));
        }
        Self::from_matrix(h.mapv(|z| z / tr))
    }

    /// Builds `V diag(w) V^dagger / sum(w)` for nonnegative weights.
    pub fn from_spectral(basis: Arc<CMat>, weights: Vec<f64>) -> Result<Self> {
        let dim = basis.nrows();
        if weights.len() != basis.ncols() {
            return Err(Error::Shape(format!(
                "{} weights for a basis of {} vectors",
                weights.len(),
                basis.ncols()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument(
                "spectral weights must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidArgument("spectral weights sum to zero".into()));
        }
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        Ok(Self {
            dim,
            repr: Repr::Spectral { basis, weights },
            matrix: OnceLock::new(),
            eigenvalues: OnceLock::new(),
        })
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        let mut values = vec![1.0 / dim as f64; dim];
        values.sort_by(f64::total_cmp);
        Self {
            dim,
            repr: Repr::Dense(CMat::eye(dim).mapv(|z| z / dim as f64)),
            matrix: OnceLock::new(),
            eigenvalues: OnceLock::from(values),
        }
    }

    pub fn pure(psi: &CVec) -> Result<Self> {
        let norm = crate::linalg::vec_norm(psi);
        if !(norm > 0.0) {
            return Err(Error::InvalidArgument("zero state vector".into()));
        }
        let v = psi.mapv(|z| z / norm);
        let basis = v.into_shape_with_order((psi.len(), 1)).unwrap();
        Self::from_spectral(Arc::new(basis), vec![1.0])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &CMat {
        match &self.repr {
            Repr::Dense(m) => m,
            Repr::Spectral { basis, weights } => {
                self.matrix.get_or_init(|| spectral_matrix(basis, weights))
            }
        }
    }

    /// Spectral weights and the basis they refer to, when known.
    pub fn spectral(&self) -> Option<(&Arc<CMat>, &[f64])> {
        match &self.repr {
            Repr::Spectral { basis, weights } => Some((basis, weights)),
            Repr::Dense(_) => None,
        }
    }

    /// Eigenvalues in ascending order, not clamped.
    pub fn eigenvalues(&self) -> &[f64] {
        self.eigenvalues.get_or_init(|| match &self.repr {
            Repr::Spectral { basis, weights } => {
                let mut w = weights.clone();
                w.resize(basis.nrows(), 0.0);
                w.sort_by(f64::total_cmp);
                w
            }
            Repr::Dense(m) => eigvalsh(m).expect("validated density operator"),
        })
    }

    pub fn trace(&self) -> f64 {
        match &self.repr {
            Repr::Spectral { weights, .. } => weights.iter().sum(),
            Repr::Dense(m) => trace(m).re,
        }
    }

    /// `tr rho^2`.
    pub fn purity(&self) -> f64 {
        match &self.repr {
            Repr::Spectral { weights, .. } => weights.iter().map(|w| w * w).sum(),
            Repr::Dense(m) => m.iter().map(|z| z.norm_sqr()).sum(),
        }
    }

    /// `Re tr(O rho)`.
    pub fn expectation(&self, op: &CMat) -> f64 {
        let rho = self.matrix();
        let mut acc = 0.0;
        for ((i, j), o) in op.indexed_iter() {
            acc += (o * rho[[j, i]]).re;
        }
        acc
    }

    pub fn trace_distance(&self, other: &DensityOperator) -> Result<f64> {
        if self.dim != other.dim {
            return Err(Error::Shape(format!(
                "trace distance between dimensions {} and {}",
                self.dim, other.dim
            )));
        }
        if let (Some((a, wa)), Some((b, wb))) = (self.spectral(), other.spectral()) {
            if Arc::ptr_eq(a, b) {
                return Ok(0.5 * wa.iter().zip(wb).map(|(x, y)| (x - y).abs()).sum::<f64>());
            }
        }
        let diff = self.matrix() - other.matrix();
        Ok(0.5 * eigvalsh(&hermitian_part(&diff))?.iter().map(|v| v.abs()).sum::<f64>())
    }
}

fn spectral_matrix(basis: &CMat, weights: &[f64]) -> CMat {
    if basis.iter().all(|z| z.im == 0.0) {
        let v = basis.mapv(|z| z.re);
        let mut scaled = v.clone();
        for (mut col, w) in scaled.columns_mut().into_iter().zip(weights) {
            col *= *w;
        }
        return scaled.dot(&v.t()).mapv(|x| C64::new(x, 0.0));
    }
    let mut scaled: Array2<C64> = basis.clone();
    for (mut col, w) in scaled.columns_mut().into_iter().zip(weights) {
        col.mapv_inplace(|z| z * *w);
    }
    scaled.dot(&dagger(basis))
}

fn clamp(p: f64) -> f64 {
    if p < Tolerances::DEFAULT.probability_clamp {
        0.0
    } else {
        p
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0) || alpha == 1.0 || alpha.is_nan() {
        return Err(Error::InvalidArgument(format!(
            "Renyi index must be positive and different from 1 (use the von Neumann entropy), got {alpha}"
        )));
    }
    Ok(())
}

/// `log(sum p^alpha) / (1 - alpha)`; `alpha = inf` gives the min-entropy.
pub fn renyi_entropy_of_weights(p: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let pmax = p.iter().copied().map(clamp).fold(0.0, f64::max);
    if pmax == 0.0 {
        return Err(Error::InvalidArgument("all weights vanish".into()));
    }
    if alpha.is_infinite() {
        return Ok(-pmax.ln());
    }
    let s: f64 = p
        .iter()
        .copied()
        .map(clamp)
        .filter(|&x| x > 0.0)
        .map(|x| (alpha * (x / pmax).ln()).exp())
        .sum();
    Ok((alpha * pmax.ln() + s.ln()) / (1.0 - alpha))
}

pub fn von_neumann_entropy_of_weights(p: &[f64]) -> f64 {
    -p.iter()
        .copied()
        .map(clamp)
        .filter(|&x| x > 0.0)
        .map(|x| x * x.ln())
        .sum::<f64>()
}

pub fn renyi_entropy(rho: &DensityOperator, alpha: f64) -> Result<f64> {
    renyi_entropy_of_weights(rho.eigenvalues(), alpha)
}

pub fn von_neumann_entropy(rho: &DensityOperator) -> f64 {
    von_neumann_entropy_of_weights(rho.eigenvalues())
}

/// `tr(H rho) - S(rho)/beta`.
pub fn free_energy_gibbs(rho: &DensityOperator, h: &CMat, beta: f64) -> Result<f64> {
    if beta == 0.0 || !beta.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "free energy needs a finite nonzero inverse temperature, got {beta}"
        )));
    }
    Ok(rho.expectation(h) - von_neumann_entropy(rho) / beta)
}

/// `tr(H rho) - S_alpha(rho)/beta_alpha`.
pub fn free_energy_renyi(rho: &DensityOperator, h: &CMat, beta_alpha: f64, alpha: f64) -> Result<f64> {
    if beta_alpha == 0.0 || !beta_alpha.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "free energy needs a finite nonzero inverse temperature, got {beta_alpha}"
        )));
    }
    Ok(rho.expectation(h) - renyi_entropy(rho, alpha)? / beta_alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::tests::gaussian;
    use crate::linalg::qr_isometry;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn maximally_mixed_entropies() {
        let rho = DensityOperator::maximally_mixed(8);
        assert!((von_neumann_entropy(&rho) - 3.0 * LN2).abs() < 1e-14);
        for alpha in [0.5, 2.0, 3.0, 50.0, f64::INFINITY] {
            assert!((renyi_entropy(&rho, alpha).unwrap() - 3.0 * LN2).abs() < 1e-13);
        }
    }

    #[test]
    fn pure_state_has_zero_entropy() {
        let psi = gaussian(6, 1, 2).column(0).to_owned();
        let rho = DensityOperator::pure(&psi).unwrap();
        assert!(von_neumann_entropy(&rho).abs() < 1e-14);
        assert!(renyi_entropy(&rho, 2.0).unwrap().abs() < 1e-14);
        assert!((rho.purity() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn two_level_scalar_values() {
        let p = [0.75, 0.25];
        let s2 = renyi_entropy_of_weights(&p, 2.0).unwrap();
        assert!((s2 - (8.0f64 / 5.0).ln()).abs() < 1e-15);
        let s1 = von_neumann_entropy_of_weights(&p);
        assert!((s1 - (0.75 * (4.0f64 / 3.0).ln() + 0.25 * 4.0f64.ln())).abs() < 1e-15);
    }

    #[test]
    fn alpha_one_rejected() {
        assert!(renyi_entropy_of_weights(&[1.0], 1.0).is_err());
        assert!(renyi_entropy_of_weights(&[1.0], 0.0).is_err());
    }

    #[test]
    fn spectral_and_dense_forms_agree() {
        let v = qr_isometry(&gaussian(5, 5, 3)).unwrap();
        let w = vec![0.1, 0.2, 0.3, 0.4, 0.0];
        let rho = DensityOperator::from_spectral(Arc::new(v), w.clone()).unwrap();
        let dense = DensityOperator::from_matrix(rho.matrix().clone()).unwrap();
        for (a, b) in rho.eigenvalues().iter().zip(dense.eigenvalues()) {
            assert!((a - b).abs() < 1e-13);
        }
        assert!((rho.purity() - dense.purity()).abs() < 1e-13);
        assert!(rho.trace_distance(&dense).unwrap() < 1e-13);
    }

    #[test]
    fn from_matrix_rejects_bad_inputs() {
        let mut m = CMat::eye(2).mapv(|z| z * 0.5);
        m[[0, 1]] = C64::new(0.1, 0.0);
        assert!(DensityOperator::from_matrix(m.clone()).is_err());
        m[[1, 0]] = C64::new(0.1, 0.0);
        assert!(DensityOperator::from_matrix(m.clone()).is_ok());
        let neg = CMat::from_diag(&ndarray::arr1(&[C64::new(1.5, 0.0), C64::new(-0.5, 0.0)]));
        assert!(DensityOperator::from_matrix(neg).is_err());
        assert!(DensityOperator::from_matrix(CMat::eye(2)).is_err());
    }

    #[test]
    fn free_energies_of_simple_states() {
        let mut h = CMat::zeros((4, 4));
        for (i, e) in [-1.0, -0.5, 0.5, 1.0].iter().enumerate() {
            h[[i, i]] = C64::new(*e, 0.0);
        }
        let mut psi = CVec::zeros(4);
        psi[0] = C64::new(1.0, 0.0);
        let ground = DensityOperator::pure(&psi).unwrap();
        assert!((free_energy_gibbs(&ground, &h, 0.7).unwrap() + 1.0).abs() < 1e-14);
        assert!((free_energy_renyi(&ground, &h, 0.7, 2.0).unwrap() + 1.0).abs() < 1e-14);
        let mixed = DensityOperator::maximally_mixed(4);
        assert!((free_energy_gibbs(&mixed, &h, 1.0).unwrap() + 2.0 * LN2).abs() < 1e-14);
        assert!(free_energy_gibbs(&mixed, &h, 0.0).is_err());
    }
}
