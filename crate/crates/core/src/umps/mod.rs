//! Uniform MPS purifications `|Psi> = sum tr(... A^{p_k} A^{p_{k+1}} ...)`
//! with physical index `p = s * d_anc + a` (system `s`, ancilla `a`).
//!
//! The tensor is stored as the stacked isometry `W` with
//! `W[p D + l, r] = A^p[l, r]`; `W^dagger W = 1` is the left gauge, so the
//! left fixed point of the transfer operator is the identity and only the
//! right fixed point `rho_r` is cached.

mod energy;
mod purity;

pub use energy::{energy_density, energy_environments, grad_energy, EnergyEnvironments};
pub use purity::{grad_purity, purity_per_site, purity_per_site_warm, PurityFixedPoints};

use std::path::Path;

use ndarray::{s, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    dagger, eigh, hermitian_part, isometry_defect, leading_eigenpair, qr_isometry, trace,
    EigenpairOptions, FnMap, CMat, CVec, C64,
};

/// Leading eigenvalues closer than this (relative) count as degenerate.
pub const SPECTRAL_GAP_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct PurificationMPS {
    pub d_sys: usize,
    pub d_anc: usize,
    pub bond: usize,
    w: CMat,
    rho_r: CMat,
}

/// Stacked-tensor helpers shared by the contractions.
pub(crate) struct Stacks {
    pub d: usize,
    pub bond: usize,
    /// `[A^0; A^1; ...]`, `(d D) x D`.
    pub w: CMat,
    /// `[A^0 A^1 ...]`, `D x (d D)`.
    pub h: CMat,
    /// `[A^0^dagger A^1^dagger ...]`, `D x (d D)`.
    pub wd: CMat,
    /// `[A^0^dagger; A^1^dagger; ...]`, `(d D) x D`.
    pub v: CMat,
}

pub(crate) fn vert_to_horiz(m: &CMat, d: usize) -> CMat {
    let bond = m.ncols();
    CMat::from_shape_fn((bond, d * bond), |(l, c)| m[[(c / bond) * bond + l, c % bond]])
}

pub(crate) fn horiz_to_vert(m: &CMat, d: usize) -> CMat {
    let bond = m.nrows();
    CMat::from_shape_fn((d * bond, bond), |(r, k)| m[[r % bond, (r / bond) * bond + k]])
}

impl Stacks {
    pub fn new(w: &CMat, d: usize) -> Self {
        let bond = w.ncols();
        let wd = dagger(w);
        Self {
            d,
            bond,
            h: vert_to_horiz(w, d),
            v: horiz_to_vert(&wd, d),
            w: w.clone(),
            wd,
        }
    }

    pub fn slice(&self, p: usize) -> CMat {
        self.w.slice(s![p * self.bond..(p + 1) * self.bond, ..]).to_owned()
    }

    /// `E(X) = sum_p A^p X A^p^dagger`.
    pub fn right(&self, x: &CMat) -> CMat {
        vert_to_horiz(&self.w.dot(x), self.d).dot(&self.v)
    }

    /// `E^*(Y) = sum_p A^p^dagger Y A^p`.
    pub fn left(&self, y: &CMat) -> CMat {
        self.wd.dot(&horiz_to_vert(&y.dot(&self.h), self.d))
    }
}

pub(crate) fn to_vec(m: &CMat) -> CVec {
    m.iter().copied().collect()
}

pub(crate) fn from_vec(v: &CVec, n: usize) -> CMat {
    CMat::from_shape_vec((n, n), v.to_vec()).expect("square reshape")
}

/// Leading eigenvector of `E` or `E^*` as a trace-one Hermitian matrix.
fn fixed_point(
    stacks: &Stacks,
    right: bool,
    warm: Option<&CMat>,
) -> Result<(C64, CMat, Option<f64>)> {
    let bond = stacks.bond;
    if bond == 1 {
        let x = CMat::eye(1);
        let y = if right { stacks.right(&x) } else { stacks.left(&x) };
        return Ok((y[[0, 0]], x, None));
    }
    let op = FnMap::new(bond * bond, |x: &CVec| {
        let m = from_vec(x, bond);
        to_vec(&if right { stacks.right(&m) } else { stacks.left(&m) })
    });
    let start = to_vec(&warm.cloned().unwrap_or_else(|| CMat::eye(bond)));
    let res = leading_eigenpair(&op, Some(&start), &EigenpairOptions::default())?;
    let ratio = res.subleading_ratio();
    let mut m = from_vec(&res.vector, bond);
    let tr = trace(&m);
    m.mapv_inplace(|z| z / tr);
    let m = hermitian_part(&m);
    let tr = trace(&m).re;
    Ok((res.value, m.mapv(|z| z / tr), ratio))
}

fn check_gap(ratio: Option<f64>) -> Result<()> {
    if let Some(r) = ratio {
        if r > 1.0 - SPECTRAL_GAP_TOL {
            return Err(Error::DegenerateSpectrum { gap: 1.0 - r });
        }
    }
    Ok(())
}

impl PurificationMPS {
    /// Wraps a left-gauged isometry and computes its right fixed point,
    /// optionally warm-started from a previous one.
    pub fn from_isometry(w: CMat, d_sys: usize, d_anc: usize, warm: Option<&CMat>) -> Result<Self> {
        let d = d_sys * d_anc;
        let bond = w.ncols();
        if d == 0 || bond == 0 || w.nrows() != d * bond {
            return Err(Error::Shape(format!(
                "isometry {:?} does not match d_sys = {d_sys}, d_anc = {d_anc}",
                w.dim()
            )));
        }
        let defect = isometry_defect(&w);
        if defect > 1e-10 {
            return Err(Error::InvalidArgument(format!(
                "tensor violates the left gauge by {defect:.3e}"
            )));
        }
        let stacks = Stacks::new(&w, d);
        let (_, rho_r, ratio) = fixed_point(&stacks, true, warm)?;
        check_gap(ratio)?;
        Ok(Self {
            d_sys,
            d_anc,
            bond,
            w,
            rho_r,
        })
    }

    pub fn phys_dim(&self) -> usize {
        self.d_sys * self.d_anc
    }

    pub fn isometry(&self) -> &CMat {
        &self.w
    }

    pub fn right_fixed_point(&self) -> &CMat {
        &self.rho_r
    }

    /// `A` as `[s, a, l, r]`.
    pub fn tensor4(&self) -> Array4<C64> {
        let (ds, da, b) = (self.d_sys, self.d_anc, self.bond);
        self.w
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((ds, da, b, b))
            .expect("stacked layout")
    }

    pub(crate) fn stacks(&self) -> Stacks {
        Stacks::new(&self.w, self.phys_dim())
    }

    /// `sum_p A^p^dagger A^p - 1`, largest entry.
    pub fn left_gauge_residual(&self) -> f64 {
        isometry_defect(&self.w)
    }

    /// One-site reduced density matrix of the system, `d_sys x d_sys`.
    pub fn reduced_density_one_site(&self) -> CMat {
        let st = self.stacks();
        let d = st.d;
        let mut full = CMat::zeros((d, d));
        let slices: Vec<CMat> = (0..d).map(|p| st.slice(p)).collect();
        let kets: Vec<CMat> = slices.iter().map(|a| a.dot(&self.rho_r)).collect();
        for q in 0..d {
            for p in 0..d {
                full[[q, p]] = slices[p]
                    .iter()
                    .zip(kets[q].iter())
                    .map(|(x, y)| x.conj() * y)
                    .sum();
            }
        }
        trace_ancilla(&full, self.d_sys, self.d_anc, 1)
    }

    /// Two-site reduced density matrix of the system, indices `(s1, s2)`
    /// with `s1` most significant.
    pub fn reduced_density_two_site(&self) -> CMat {
        let st = self.stacks();
        let d = st.d;
        let slices: Vec<CMat> = (0..d).map(|p| st.slice(p)).collect();
        let mut pairs = Vec::with_capacity(d * d);
        for p1 in 0..d {
            for p2 in 0..d {
                pairs.push(slices[p1].dot(&slices[p2]));
            }
        }
        let kets: Vec<CMat> = pairs.iter().map(|m| m.dot(&self.rho_r)).collect();
        let mut full = CMat::zeros((d * d, d * d));
        for q in 0..d * d {
            for p in 0..d * d {
                full[[q, p]] = pairs[p]
                    .iter()
                    .zip(kets[q].iter())
                    .map(|(x, y)| x.conj() * y)
                    .sum();
            }
        }
        trace_ancilla(&full, self.d_sys, self.d_anc, 2)
    }

    pub fn expectation_one_site(&self, op: &CMat) -> f64 {
        let rho = self.reduced_density_one_site();
        trace(&op.dot(&rho)).re
    }

    pub fn expectation_two_site(&self, op: &CMat) -> f64 {
        let rho = self.reduced_density_two_site();
        trace(&op.dot(&rho)).re
    }

    /// Re-gauges and renormalizes a general tensor `[p, l, r]` stacked as
    /// `(d D) x D`.
    pub fn gauge_left(a: &CMat, d_sys: usize, d_anc: usize) -> Result<Self> {
        let d = d_sys * d_anc;
        let bond = a.ncols();
        if a.nrows() != d * bond {
            return Err(Error::Shape(format!(
                "tensor {:?} does not match d = {d}",
                a.dim()
            )));
        }
        let stacks = Stacks::new(a, d);
        let (lambda, l, ratio) = fixed_point(&stacks, false, None)?;
        check_gap(ratio)?;
        let lambda = lambda.re;
        if !(lambda > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "transfer operator has non-positive leading eigenvalue {lambda}"
            )));
        }
        let e = eigh(&l)?;
        let floor = e.values.last().copied().unwrap_or(0.0) * 1e-14;
        if e.values[0] <= floor {
            return Err(Error::InvalidArgument(
                "left fixed point is singular; tensor is not injective".into(),
            ));
        }
        let sqrt = crate::linalg::hermitian_function(&l, f64::sqrt)?;
        let inv_sqrt = crate::linalg::hermitian_function(&l, |x| 1.0 / x.sqrt())?;
        let scale = 1.0 / lambda.sqrt();
        let mut w = CMat::zeros((d * bond, bond));
        for p in 0..d {
            let ap = sqrt.dot(&stacks.slice(p)).dot(&inv_sqrt).mapv(|z| z * scale);
            w.slice_mut(s![p * bond..(p + 1) * bond, ..]).assign(&ap);
        }
        let w = if isometry_defect(&w) > 1e-14 {
            qr_isometry(&w)?
        } else {
            w
        };
        Self::from_isometry(w, d_sys, d_anc, None)
    }

    /// Gaussian tensor orthonormalized by QR; deterministic per seed.
    pub fn random(bond: usize, d_sys: usize, d_anc: usize, seed: u64) -> Result<Self> {
        if bond == 0 || d_sys == 0 || d_anc == 0 {
            return Err(Error::InvalidArgument("dimensions must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = d_sys * d_anc;
        let m = CMat::from_shape_fn((d * bond, bond), |_| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            C64::new(re, im)
        });
        Self::from_isometry(qr_isometry(&m)?, d_sys, d_anc, None)
    }

    /// D = 1 purification of the maximally mixed state: every site holds
    /// a maximally entangled system-ancilla pair.
    pub fn maximally_mixed(d_sys: usize) -> Result<Self> {
        let d = d_sys * d_sys;
        let mut w = CMat::zeros((d, 1));
        for s in 0..d_sys {
            w[[s * d_sys + s, 0]] = C64::new(1.0 / (d_sys as f64).sqrt(), 0.0);
        }
        Self::from_isometry(w, d_sys, d_sys, None)
    }

    /// Writes a JSON checkpoint with interleaved `(re, im)` entries of
    /// `A[p, l, r]` in row-major order.
    pub fn save(&self, path: &Path, meta: CheckpointMeta) -> Result<()> {
        let ck = Checkpoint {
            d_sys: self.d_sys,
            d_anc: self.d_anc,
            bond: self.bond,
            entries: self.w.iter().flat_map(|z| [z.re, z.im]).collect(),
            meta,
        };
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_vec_pretty(&ck)?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, CheckpointMeta)> {
        let ck: Checkpoint = serde_json::from_slice(&std::fs::read(path)?)?;
        let d = ck.d_sys * ck.d_anc;
        let n = d * ck.bond * ck.bond;
        if ck.entries.len() != 2 * n {
            return Err(Error::Shape(format!(
                "checkpoint holds {} numbers, expected {}",
                ck.entries.len(),
                2 * n
            )));
        }
        let vals: Vec<C64> = ck.entries.chunks(2).map(|c| C64::new(c[0], c[1])).collect();
        let w = CMat::from_shape_vec((d * ck.bond, ck.bond), vals)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Ok((Self::from_isometry(w, ck.d_sys, ck.d_anc, None)?, ck.meta))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: Option<u64>,
    pub beta_r: Option<f64>,
    pub target_energy: Option<f64>,
    pub iterations: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    d_sys: usize,
    d_anc: usize,
    bond: usize,
    entries: Vec<f64>,
    meta: CheckpointMeta,
}

/// Traces the ancilla out of a `k`-site operator on `(s a)^k`.
fn trace_ancilla(full: &CMat, d_sys: usize, d_anc: usize, sites: usize) -> CMat {
    let ds = d_sys.pow(sites as u32);
    let da = d_anc.pow(sites as u32);
    // split a full index into (system multi-index, ancilla multi-index)
    let split = |mut idx: usize| -> (usize, usize) {
        let (mut s, mut a) = (0, 0);
        let mut sw = 1;
        let mut aw = 1;
        for _ in 0..sites {
            let p = idx % (d_sys * d_anc);
            idx /= d_sys * d_anc;
            s += (p / d_anc) * sw;
            a += (p % d_anc) * aw;
            sw *= d_sys;
            aw *= d_anc;
        }
        (s, a)
    };
    let mut out = CMat::zeros((ds, ds));
    let n = full.nrows();
    let parts: Vec<(usize, usize)> = (0..n).map(split).collect();
    for q in 0..n {
        for p in 0..n {
            if parts[q].1 == parts[p].1 {
                out[[parts[q].0, parts[p].0]] += full[[q, p]];
            }
        }
    }
    let _ = da;
    out
}

/// Spin-1/2 observables of a purification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UmpsObservables {
    pub sz: f64,
    pub sx: f64,
    pub gamma_zz: f64,
    pub gamma_xx: f64,
    pub gamma_xz: f64,
}

pub fn local_observables_umps(mps: &PurificationMPS) -> Result<UmpsObservables> {
    if mps.d_sys != 2 {
        return Err(Error::InvalidArgument("spin observables need d_sys = 2".into()));
    }
    use crate::exact::{kron, pauli_x, pauli_z};
    let (x, z) = (pauli_x(), pauli_z());
    let r1 = mps.reduced_density_one_site();
    let r2 = mps.reduced_density_two_site();
    let one = |o: &CMat| trace(&o.dot(&r1)).re;
    let two = |o: &CMat| trace(&o.dot(&r2)).re;
    let (sz, sx) = (one(&z), one(&x));
    Ok(UmpsObservables {
        sz,
        sx,
        gamma_zz: two(&kron(&z, &z)) - sz * sz,
        gamma_xx: two(&kron(&x, &x)) - sx * sx,
        gamma_xz: two(&kron(&x, &z)) - sx * sz,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::linalg::{frobenius_norm, eigvalsh};

    /// Explicit `D^2 x D^2` transfer matrix acting on row-major `vec(X)`.
    pub(crate) fn dense_transfer(w: &CMat, d: usize) -> CMat {
        let b = w.ncols();
        let mut t = CMat::zeros((b * b, b * b));
        for p in 0..d {
            let a = w.slice(s![p * b..(p + 1) * b, ..]);
            for i in 0..b {
                for j in 0..b {
                    for k in 0..b {
                        for l in 0..b {
                            // (A X A^dagger)_{ij} = A_ik X_kl conj(A_jl)
                            t[[i * b + j, k * b + l]] += a[[i, k]] * a[[j, l]].conj();
                        }
                    }
                }
            }
        }
        t
    }

    pub(crate) fn random_tangent(
        base: &std::sync::Arc<crate::grassmann::Isometry>,
        rng: &mut impl rand::Rng,
    ) -> crate::grassmann::Tangent {
        let z = CMat::from_shape_fn((base.n() - base.p(), base.p()), |_| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            C64::new(re, im)
        });
        crate::grassmann::Tangent::from_coordinates(base, z).unwrap()
    }

    #[test]
    fn transfer_actions_match_dense_matrix() {
        let mps = PurificationMPS::random(3, 2, 2, 5).unwrap();
        let st = mps.stacks();
        let t = dense_transfer(mps.isometry(), 4);
        let x = crate::linalg::tests::gaussian(3, 3, 6);
        let y = st.right(&x);
        let yd = from_vec(&t.dot(&to_vec(&x)), 3);
        assert!(frobenius_norm(&(y - yd)) < 1e-12);
        // E^* is the adjoint: <Y, E(X)> = <E^*(Y), X>
        let yy = crate::linalg::tests::gaussian(3, 3, 7);
        let lhs: C64 = yy.iter().zip(st.right(&x).iter()).map(|(a, b)| a.conj() * b).sum();
        let rhs: C64 = st.left(&yy).iter().zip(x.iter()).map(|(a, b)| a.conj() * b).sum();
        assert!((lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn random_state_is_canonical_and_deterministic() {
        let a = PurificationMPS::random(8, 2, 2, 42).unwrap();
        let b = PurificationMPS::random(8, 2, 2, 42).unwrap();
        assert_eq!(a.isometry(), b.isometry());
        assert!(a.left_gauge_residual() < 1e-12);
        let r = a.right_fixed_point();
        assert!((trace(r).re - 1.0).abs() < 1e-12);
        assert!(eigvalsh(r).unwrap()[0] > -1e-12);
        let st = a.stacks();
        assert!(frobenius_norm(&(st.right(r) - r)) < 1e-10);
    }

    #[test]
    fn product_state_fixed_point() {
        let a = PurificationMPS::random(1, 2, 2, 3).unwrap();
        assert_eq!(a.right_fixed_point()[[0, 0]], C64::new(1.0, 0.0));
        let r1 = a.reduced_density_one_site();
        assert!((trace(&r1).re - 1.0).abs() < 1e-14);
    }

    #[test]
    fn canonical_input_survives_gauge_left() {
        let a = PurificationMPS::random(4, 2, 2, 9).unwrap();
        let b = PurificationMPS::gauge_left(a.isometry(), 2, 2).unwrap();
        assert!(frobenius_norm(&(a.isometry() - b.isometry())) < 1e-12);
    }

    #[test]
    fn gauge_transform_preserves_reduced_states() {
        let a = PurificationMPS::random(3, 2, 2, 11).unwrap();
        // X = U diag(k) V^dagger with known inverse
        let u = qr_isometry(&crate::linalg::tests::gaussian(3, 3, 12)).unwrap();
        let v = qr_isometry(&crate::linalg::tests::gaussian(3, 3, 13)).unwrap();
        let k = CMat::from_diag(&ndarray::arr1(&[0.5, 1.0, 3.0]).mapv(|z: f64| C64::new(z, 0.0)));
        let kinv = CMat::from_diag(&ndarray::arr1(&[2.0, 1.0, 1.0 / 3.0]).mapv(|z: f64| C64::new(z, 0.0)));
        let x = u.dot(&k).dot(&dagger(&v));
        let xinv = v.dot(&kinv).dot(&dagger(&u));
        let st = a.stacks();
        let mut g = CMat::zeros((12, 3));
        for p in 0..4 {
            let ap = x.dot(&st.slice(p)).dot(&xinv).mapv(|z| z * 1.7);
            g.slice_mut(s![p * 3..(p + 1) * 3, ..]).assign(&ap);
        }
        let b = PurificationMPS::gauge_left(&g, 2, 2).unwrap();
        assert!(b.left_gauge_residual() < 1e-12);
        let d2 = a.reduced_density_two_site() - b.reduced_density_two_site();
        assert!(frobenius_norm(&d2) < 1e-9);
    }

    #[test]
    fn scalar_gauge_for_product_state() {
        let mut w = CMat::zeros((4, 1));
        w[[0, 0]] = C64::new(3.0, 0.0);
        w[[3, 0]] = C64::new(0.0, 4.0);
        let m = PurificationMPS::gauge_left(&w, 2, 2).unwrap();
        assert!(m.left_gauge_residual() < 1e-14);
        assert!((m.isometry()[[0, 0]].re - 0.6).abs() < 1e-14);
    }

    #[test]
    fn reduced_states_are_positive() {
        for seed in 0..4 {
            let a = PurificationMPS::random(4, 2, 2, seed).unwrap();
            let r2 = a.reduced_density_two_site();
            assert!(eigvalsh(&hermitian_part(&r2)).unwrap()[0] > -1e-10);
            assert!((trace(&r2).re - 1.0).abs() < 1e-10);
            // one-site marginal of the two-site state
            let r1 = a.reduced_density_one_site();
            let mut marg = CMat::zeros((2, 2));
            for s in 0..2 {
                for t in 0..2 {
                    for u in 0..2 {
                        marg[[s, t]] += r2[[s * 2 + u, t * 2 + u]];
                    }
                }
            }
            assert!(frobenius_norm(&(marg - &r1)) < 1e-10);
        }
    }

    #[test]
    fn maximally_mixed_observables_vanish() {
        let m = PurificationMPS::maximally_mixed(2).unwrap();
        let obs = local_observables_umps(&m).unwrap();
        assert!(obs.sz.abs() + obs.sx.abs() + obs.gamma_zz.abs() + obs.gamma_xx.abs() < 1e-15);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = std::env::temp_dir().join(format!("renyi-ck-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("state.json");
        let a = PurificationMPS::random(3, 2, 2, 1).unwrap();
        let meta = CheckpointMeta {
            seed: Some(1),
            beta_r: Some(0.5),
            target_energy: None,
            iterations: Some(10),
        };
        a.save(&path, meta.clone()).unwrap();
        let (b, m) = PurificationMPS::load(&path).unwrap();
        assert_eq!(a.isometry(), b.isometry());
        assert_eq!(m, meta);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
