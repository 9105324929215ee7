//! Thermal expectation values of periodic chains by exact diagonalization
//! in momentum sectors. Reaches N = 14 where the dense matrix would not
//! fit in memory.

use serde::{Deserialize, Serialize};

use super::{Boundary, SpinChainSpec};
use crate::error::{Error, Result};
use crate::linalg::{eigh, CMat, C64};

struct Sector {
    multiplicity: f64,
    energies: Vec<f64>,
    /// Per-eigenstate expectations of the translation-invariant sums.
    sz: Vec<f64>,
    sx: Vec<f64>,
    zz: Vec<f64>,
    xx: Vec<f64>,
}

/// Spectrum and eigenstate expectations of `sum Z`, `sum X`, `sum ZZ`,
/// `sum XX` for every momentum sector.
pub struct TranslationSectors {
    spec: SpinChainSpec,
    sectors: Vec<Sector>,
}

/// Per-site thermal averages; `gamma_*` are connected nearest-neighbour
/// correlators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermalObservables {
    pub beta: f64,
    pub energy_density: f64,
    pub sz: f64,
    pub sx: f64,
    pub gamma_zz: f64,
    pub gamma_xx: f64,
}

fn rotate(b: usize, n: usize) -> usize {
    ((b << 1) | (b >> (n - 1))) & ((1 << n) - 1)
}

fn z_sum(b: usize, n: usize) -> f64 {
    n as f64 - 2.0 * b.count_ones() as f64
}

fn zz_sum(b: usize, n: usize) -> f64 {
    // anti-aligned neighbours are the set bits of b xor rot(b)
    n as f64 - 2.0 * (b ^ rotate(b, n)).count_ones() as f64
}

impl TranslationSectors {
    pub fn new(spec: &SpinChainSpec) -> Result<Self> {
        spec.validate()?;
        if spec.boundary != Boundary::Periodic {
            return Err(Error::InvalidArgument(
                "momentum sectors need a periodic chain".into(),
            ));
        }
        let n = spec.n;
        let dim = 1usize << n;
        // representative, shift with T^shift rep = b, and orbit period
        let mut rep = vec![0usize; dim];
        let mut shift = vec![0usize; dim];
        let mut period = vec![0usize; dim];
        for b in 0..dim {
            let mut x = b;
            let (mut best, mut best_t) = (b, 0);
            let mut p = 0;
            for t in 1..=n {
                x = rotate(x, n);
                if x < best {
                    best = x;
                    best_t = t;
                }
                if x == b && p == 0 {
                    p = t;
                }
            }
            rep[b] = best;
            shift[b] = (n - best_t % n) % n;
            period[b] = p;
        }
        let reps: Vec<usize> = (0..dim).filter(|&b| rep[b] == b).collect();
        let flips: Vec<usize> = (0..n).map(|i| 1 << i).collect();
        let pairs: Vec<usize> = (0..n).map(|i| (1 << i) | (1 << ((i + 1) % n))).collect();

        let mut sectors = Vec::new();
        for m in 0..=n / 2 {
            let in_sector: Vec<usize> = reps
                .iter()
                .copied()
                .filter(|&r| (m * period[r]) % n == 0)
                .collect();
            let mut index = vec![usize::MAX; dim];
            for (a, &r) in in_sector.iter().enumerate() {
                index[r] = a;
            }
            let phase = |l: usize| -> C64 {
                if m == 0 {
                    C64::new(1.0, 0.0)
                } else if 2 * m == n {
                    C64::new(if l % 2 == 0 { 1.0 } else { -1.0 }, 0.0)
                } else {
                    C64::from_polar(1.0, 2.0 * std::f64::consts::PI * (m * l) as f64 / n as f64)
                }
            };
            let d = in_sector.len();
            let mut h = CMat::zeros((d, d));
            let mut xsum = CMat::zeros((d, d));
            for (a, &r) in in_sector.iter().enumerate() {
                h[[a, a]] += C64::new(-spec.h_z * z_sum(r, n), 0.0);
                let add = |target: &mut CMat, s: usize, c: f64| {
                    let b = index[rep[s]];
                    if b == usize::MAX {
                        return;
                    }
                    let amp = c * (period[r] as f64 / period[rep[s]] as f64).sqrt();
                    target[[b, a]] += phase(shift[s]) * amp;
                };
                for &f in &flips {
                    add(&mut xsum, r ^ f, 1.0);
                    if spec.h_x != 0.0 {
                        add(&mut h, r ^ f, -spec.h_x);
                    }
                }
                for &f in &pairs {
                    add(&mut h, r ^ f, -1.0);
                }
            }
            let e = eigh(&h)?;
            let xv = xsum.dot(&e.vectors);
            let mut sz = vec![0.0; d];
            let mut zz = vec![0.0; d];
            let mut sx = vec![0.0; d];
            for k in 0..d {
                for (a, &r) in in_sector.iter().enumerate() {
                    let v = e.vectors[[a, k]];
                    let w = v.norm_sqr();
                    sz[k] += w * z_sum(r, n);
                    zz[k] += w * zz_sum(r, n);
                    sx[k] += (v.conj() * xv[[a, k]]).re;
                }
            }
            let xx: Vec<f64> = (0..d)
                .map(|k| -e.values[k] - spec.h_z * sz[k] - spec.h_x * sx[k])
                .collect();
            let multiplicity = if m == 0 || 2 * m == n { 1.0 } else { 2.0 };
            sectors.push(Sector {
                multiplicity,
                energies: e.values,
                sz,
                sx,
                zz,
                xx,
            });
        }
        Ok(Self { spec: *spec, sectors })
    }

    pub fn ground_energy(&self) -> f64 {
        self.sectors
            .iter()
            .map(|s| s.energies[0])
            .fold(f64::INFINITY, f64::min)
    }

    /// Total number of states, counting both members of each `±k` pair.
    pub fn dimension(&self) -> usize {
        self.sectors
            .iter()
            .map(|s| s.multiplicity as usize * s.energies.len())
            .sum()
    }

    pub fn thermal(&self, beta: f64) -> ThermalObservables {
        let shift = if beta >= 0.0 {
            self.ground_energy()
        } else {
            self.sectors
                .iter()
                .map(|s| *s.energies.last().unwrap())
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let (mut z, mut e, mut sz, mut sx, mut zz, mut xx) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        for s in &self.sectors {
            for k in 0..s.energies.len() {
                let w = s.multiplicity * (-beta * (s.energies[k] - shift)).exp();
                z += w;
                e += w * s.energies[k];
                sz += w * s.sz[k];
                sx += w * s.sx[k];
                zz += w * s.zz[k];
                xx += w * s.xx[k];
            }
        }
        let n = self.spec.n as f64;
        let norm = z * n;
        let (sz, sx) = (sz / norm, sx / norm);
        ThermalObservables {
            beta,
            energy_density: e / norm,
            sz,
            sx,
            gamma_zz: zz / norm - sz * sz,
            gamma_xx: xx / norm - sx * sx,
        }
    }
}

/// One-shot convenience over [`TranslationSectors`].
pub fn thermal_observables(spec: &SpinChainSpec, beta: f64) -> Result<ThermalObservables> {
    Ok(TranslationSectors::new(spec)?.thermal(beta))
}
