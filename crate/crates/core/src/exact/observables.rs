use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{DensityOperator, SpinChainSpec};
use crate::error::{Error, Result};

/// Connected nearest-neighbour correlators
/// `Gamma^{ab} = <a_i b_j> - <a_i><b_j>`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BondCorrelations {
    pub i: usize,
    pub j: usize,
    pub xx: f64,
    pub xz: f64,
    pub zx: f64,
    pub zz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalObservables {
    pub sz: Vec<f64>,
    pub sx: Vec<f64>,
    pub bonds: Vec<BondCorrelations>,
}

impl LocalObservables {
    /// Site closest to the chain centre and the bond starting there.
    pub fn mid_chain(&self) -> (f64, f64, BondCorrelations) {
        let c = (self.sz.len() - 1) / 2;
        let bond = self.bonds.iter().find(|b| b.i == c).copied().unwrap_or(self.bonds[0]);
        (self.sz[c], self.sx[c], bond)
    }
}

fn parity(x: usize) -> f64 {
    if x.count_ones() % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// `<X_{xmask} Z_{zmask}>` for disjoint site masks.
pub fn pauli_expectation(rho: &DensityOperator, xmask: usize, zmask: usize) -> Result<f64> {
    if xmask & zmask != 0 {
        return Err(Error::InvalidArgument(
            "X and Z masks must act on distinct sites".into(),
        ));
    }
    let dim = rho.dim();
    if (xmask | zmask) >= dim {
        return Err(Error::Shape(format!("mask outside a {dim}-dimensional space")));
    }
    if let Some((basis, weights)) = rho.spectral() {
        let mut acc = 0.0;
        for (k, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let v = basis.column(k);
            let mut e = 0.0;
            for j in 0..dim {
                e += parity(j & zmask) * (v[j ^ xmask].conj() * v[j]).re;
            }
            acc += w * e;
        }
        return Ok(acc);
    }
    let m = rho.matrix();
    Ok((0..dim).map(|k| parity(k & zmask) * m[[k, k ^ xmask]].re).sum())
}

pub fn local_observables(rho: &DensityOperator, spec: &SpinChainSpec) -> Result<LocalObservables> {
    if rho.dim() != spec.dim() {
        return Err(Error::Shape(format!(
            "state of dimension {} for a {}-site chain",
            rho.dim(),
            spec.n
        )));
    }
    let sz: Vec<f64> = (0..spec.n)
        .map(|i| pauli_expectation(rho, 0, spec.mask(i)))
        .collect::<Result<_>>()?;
    let sx: Vec<f64> = (0..spec.n)
        .map(|i| pauli_expectation(rho, spec.mask(i), 0))
        .collect::<Result<_>>()?;
    let mut bonds = Vec::new();
    for (i, j) in spec.bonds() {
        let (mi, mj) = (spec.mask(i), spec.mask(j));
        bonds.push(BondCorrelations {
            i,
            j,
            xx: pauli_expectation(rho, mi | mj, 0)? - sx[i] * sx[j],
            xz: pauli_expectation(rho, mi, mj)? - sx[i] * sz[j],
            zx: pauli_expectation(rho, mj, mi)? - sz[i] * sx[j],
            zz: pauli_expectation(rho, 0, mi | mj)? - sz[i] * sz[j],
        });
    }
    Ok(LocalObservables { sz, sx, bonds })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.counts.len() as f64
    }

    pub fn centers(&self) -> Vec<f64> {
        let w = self.bin_width();
        (0..self.counts.len()).map(|k| self.lo + (k as f64 + 0.5) * w).collect()
    }
}

/// Uniform bins over `[E_min, E_max]`; the top edge belongs to the last bin.
pub fn dos_histogram(energies: &[f64], bins: usize) -> Result<Histogram> {
    if bins < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 bins, got {bins}")));
    }
    if energies.is_empty() {
        return Err(Error::InvalidArgument("empty spectrum".into()));
    }
    let lo = energies.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut counts = vec![0usize; bins];
    let width = hi - lo;
    for &e in energies {
        let k = if width > 0.0 {
            (((e - lo) / width) * bins as f64).floor() as usize
        } else {
            0
        };
        counts[k.min(bins - 1)] += 1;
    }
    Ok(Histogram { lo, hi, counts })
}

/// Columns: `index, E_k, p_gibbs, p_mre`.
pub fn write_ensemble_csv<W: Write>(out: W, energies: &[f64], p_gibbs: &[f64], p_mre: &[f64]) -> Result<()> {
    if p_gibbs.len() != energies.len() || p_mre.len() != energies.len() {
        return Err(Error::Shape("ensemble columns of unequal length".into()));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["index", "E_k", "p_gibbs", "p_mre"])?;
    for (k, ((e, g), m)) in energies.iter().zip(p_gibbs).zip(p_mre).enumerate() {
        w.write_record([k.to_string(), e.to_string(), g.to_string(), m.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Columns: `row, col, re, im`, row-major.
pub fn write_density_csv<W: Write>(out: W, rho: &DensityOperator) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["row", "col", "re", "im"])?;
    for ((i, j), z) in rho.matrix().indexed_iter() {
        w.write_record([i.to_string(), j.to_string(), z.re.to_string(), z.im.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
