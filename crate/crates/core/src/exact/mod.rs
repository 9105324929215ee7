//! Exact ensembles on small Ising chains.
//!
//! Basis convention: site 0 is the most significant bit of the basis index
//! and `sigma^z |0> = +|0>`.

mod density;
mod mre;
mod observables;
mod translation;

pub use density::{
    free_energy_gibbs, free_energy_renyi, renyi_entropy, renyi_entropy_of_weights,
    von_neumann_entropy, von_neumann_entropy_of_weights, DensityOperator,
};
pub use mre::{
    gibbs_beta_for_energy, gibbs_state, gibbs_weights, mre_from_beta, mre_from_energy, mre_weights,
    Branch, MreParameters,
};
pub use observables::{
    dos_histogram, local_observables, pauli_expectation, write_density_csv, write_ensemble_csv,
    BondCorrelations, Histogram, LocalObservables,
};
pub use translation::{thermal_observables, ThermalObservables, TranslationSectors};

use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{eigh, eigvalsh, CMat, C64};

/// Dense constructions beyond this many sites are refused.
pub const MAX_DENSE_SITES: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Open,
    Periodic,
}

/// `H = -sum_k (X_k X_{k+1} + h_z Z_k + h_x X_k)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinChainSpec {
    pub n: usize,
    pub boundary: Boundary,
    pub h_x: f64,
    pub h_z: f64,
}

impl SpinChainSpec {
    pub fn new(n: usize, boundary: Boundary, h_x: f64, h_z: f64) -> Result<Self> {
        let spec = Self {
            n,
            boundary,
            h_x,
            h_z,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.n > MAX_DENSE_SITES {
            return Err(Error::InvalidArgument(format!(
                "site count N = {} outside the dense range [2, {MAX_DENSE_SITES}]",
                self.n
            )));
        }
        if !self.h_x.is_finite() || !self.h_z.is_finite() {
            return Err(Error::InvalidArgument("fields must be finite".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        1 << self.n
    }

    /// Nearest-neighbour pairs carrying a coupling.
    pub fn bonds(&self) -> Vec<(usize, usize)> {
        let mut b: Vec<(usize, usize)> = (0..self.n - 1).map(|i| (i, i + 1)).collect();
        if self.boundary == Boundary::Periodic {
            b.push((self.n - 1, 0));
        }
        b
    }

    /// Bit mask of site `i` in a basis index.
    pub(crate) fn mask(&self, i: usize) -> usize {
        1 << (self.n - 1 - i)
    }

    /// Translation-invariant two-site term whose sum over bonds is the
    /// infinite chain Hamiltonian; the fields are split evenly between
    /// the two sites. Ordering is `|s1 s2>` with `s1` most significant.
    pub fn two_site_term(&self) -> CMat {
        let x = pauli_x();
        let z = pauli_z();
        let id = CMat::eye(2);
        let xx = kron(&x, &x);
        let zs = kron(&z, &id) + kron(&id, &z);
        let xs = kron(&x, &id) + kron(&id, &x);
        -(xx + zs.mapv(|v| v * (0.5 * self.h_z)) + xs.mapv(|v| v * (0.5 * self.h_x)))
    }
}

pub fn pauli_x() -> CMat {
    let mut m = CMat::zeros((2, 2));
    m[[0, 1]] = C64::new(1.0, 0.0);
    m[[1, 0]] = C64::new(1.0, 0.0);
    m
}

pub fn pauli_z() -> CMat {
    let mut m = CMat::zeros((2, 2));
    m[[0, 0]] = C64::new(1.0, 0.0);
    m[[1, 1]] = C64::new(-1.0, 0.0);
    m
}

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    Array2::from_shape_fn((ar * br, ac * bc), |(i, j)| {
        a[[i / br, j / bc]] * b[[i % br, j % bc]]
    })
}

/// Real symmetric Ising matrix.
pub fn build_ising_real(spec: &SpinChainSpec) -> Result<Array2<f64>> {
    spec.validate()?;
    let dim = spec.dim();
    let bonds = spec.bonds();
    let mut h = Array2::<f64>::zeros((dim, dim));
    for b in 0..dim {
        let mut diag = 0.0;
        for i in 0..spec.n {
            let m = spec.mask(i);
            diag -= spec.h_z * if b & m == 0 { 1.0 } else { -1.0 };
            if spec.h_x != 0.0 {
                h[[b ^ m, b]] -= spec.h_x;
            }
        }
        h[[b, b]] += diag;
        for &(i, j) in &bonds {
            h[[b ^ spec.mask(i) ^ spec.mask(j), b]] -= 1.0;
        }
    }
    Ok(h)
}

pub fn build_ising(spec: &SpinChainSpec) -> Result<CMat> {
    Ok(build_ising_real(spec)?.mapv(|v| C64::new(v, 0.0)))
}

/// Eigendecomposition of a Hamiltonian, shared by every ensemble built
/// from it.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub energies: Vec<f64>,
    pub vectors: Arc<CMat>,
}

impl Spectrum {
    pub fn of(h: &CMat) -> Result<Self> {
        let e = eigh(h)?;
        Ok(Self {
            energies: e.values,
            vectors: Arc::new(e.vectors),
        })
    }

    pub fn of_spec(spec: &SpinChainSpec) -> Result<Self> {
        Self::of(&build_ising(spec)?)
    }

    /// A diagonal Hamiltonian with the given levels (basis = identity).
    pub fn diagonal(levels: &[f64]) -> Self {
        let mut energies = levels.to_vec();
        let mut order: Vec<usize> = (0..levels.len()).collect();
        order.sort_by(|&a, &b| levels[a].total_cmp(&levels[b]));
        let n = levels.len();
        let mut v = CMat::zeros((n, n));
        for (col, &row) in order.iter().enumerate() {
            v[[row, col]] = C64::new(1.0, 0.0);
            energies[col] = levels[row];
        }
        Self {
            energies,
            vectors: Arc::new(v),
        }
    }

    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    pub fn ground(&self) -> f64 {
        self.energies[0]
    }

    pub fn top(&self) -> f64 {
        *self.energies.last().unwrap()
    }

    /// `tr H / dim`.
    pub fn mean(&self) -> f64 {
        self.energies.iter().sum::<f64>() / self.dim() as f64
    }

    pub fn width(&self) -> f64 {
        self.top() - self.ground()
    }

    /// Energy at `fraction` of the width, measured from the ground state.
    pub fn energy_from_ground(&self, fraction: f64) -> f64 {
        self.ground() + fraction * self.width()
    }

    /// Energy at `fraction` of the width, measured from the band centre
    /// `(E_min + E_max)/2`.
    pub fn energy_from_middle(&self, fraction: f64) -> f64 {
        0.5 * (self.ground() + self.top()) + fraction * self.width()
    }
}

/// Eigenvalues only, via the real symmetric path.
pub fn ising_levels(spec: &SpinChainSpec) -> Result<Vec<f64>> {
    eigvalsh(&build_ising(spec)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::frobenius_norm;

    #[test]
    fn two_sites_free_coupling() {
        let spec = SpinChainSpec::new(2, Boundary::Open, 0.0, 0.0).unwrap();
        let levels = ising_levels(&spec).unwrap();
        let expect = [-1.0, -1.0, 1.0, 1.0];
        for (a, b) in levels.iter().zip(expect) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn two_sites_transverse_field_matches_kron_oracle() {
        let spec = SpinChainSpec::new(2, Boundary::Open, 0.0, 1.5).unwrap();
        let h = build_ising(&spec).unwrap();
        let id = CMat::eye(2);
        let oracle = -(kron(&pauli_x(), &pauli_x())
            + (kron(&pauli_z(), &id) + kron(&id, &pauli_z())).mapv(|v| v * 1.5));
        assert!(frobenius_norm(&(&h - &oracle)) < 1e-14);
        // -XX - 1.5(Z1+Z2): levels -sqrt(10), -1, 1, sqrt(10)
        let levels = ising_levels(&spec).unwrap();
        let expect = [-(10f64.sqrt()), -1.0, 1.0, 10f64.sqrt()];
        for (a, b) in levels.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn periodic_chain_matches_kron_sum() {
        let spec = SpinChainSpec::new(4, Boundary::Periodic, 0.5, -1.05).unwrap();
        let h = build_ising(&spec).unwrap();
        let site_op = |op: &CMat, i: usize| {
            (0..4).fold(CMat::eye(1), |m, k| {
                if k == i {
                    kron(&m, op)
                } else {
                    kron(&m, &CMat::eye(2))
                }
            })
        };
        let mut oracle = CMat::zeros((16, 16));
        for i in 0..4 {
            let j = (i + 1) % 4;
            oracle = oracle - site_op(&pauli_x(), i).dot(&site_op(&pauli_x(), j));
            oracle = oracle - site_op(&pauli_z(), i).mapv(|v| v * -1.05);
            oracle = oracle - site_op(&pauli_x(), i).mapv(|v| v * 0.5);
        }
        assert!(frobenius_norm(&(&h - &oracle)) < 1e-13);
    }

    #[test]
    fn guard_rejects_large_chains() {
        assert!(SpinChainSpec::new(15, Boundary::Open, 0.0, 1.0).is_err());
        assert!(SpinChainSpec::new(1, Boundary::Open, 0.0, 1.0).is_err());
    }

    #[test]
    fn two_site_term_sums_to_periodic_hamiltonian() {
        let spec = SpinChainSpec::new(3, Boundary::Periodic, 0.3, 0.7).unwrap();
        let h = build_ising(&spec).unwrap();
        let t = spec.two_site_term();
        let on = |a: usize| -> CMat {
            // term on sites (a, a+1 mod 3)
            let mut m = CMat::zeros((8, 8));
            for b in 0..8 {
                for c in 0..8 {
                    let bit = |x: usize, i: usize| (x >> (2 - i)) & 1;
                    let (i, j) = (a, (a + 1) % 3);
                    let k = 3 - i - j;
                    if bit(b, k) != bit(c, k) {
                        continue;
                    }
                    m[[b, c]] = t[[bit(b, i) * 2 + bit(b, j), bit(c, i) * 2 + bit(c, j)]];
                }
            }
            m
        };
        let sum = on(0) + on(1) + on(2);
        assert!(frobenius_norm(&(&h - &sum)) < 1e-13);
    }

    #[test]
    fn diagonal_spectrum_sorts() {
        let s = Spectrum::diagonal(&[2.0, 0.0, 1.0]);
        assert_eq!(s.energies, vec![0.0, 1.0, 2.0]);
        assert_eq!(s.vectors[[1, 0]], C64::new(1.0, 0.0));
        assert!((s.mean() - 1.0).abs() < 1e-15);
    }
}
