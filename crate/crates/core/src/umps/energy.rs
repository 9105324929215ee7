//! Energy density, its regularized environments and `d eps / d conj(A)`.

use ndarray::s;

use super::{from_vec, to_vec, PurificationMPS, Stacks};
use crate::error::{Error, Result};
use crate::linalg::{solve_regularized_geometric, trace, FnMap, CMat, Tolerances, C64};

#[derive(Debug, Clone)]
pub struct EnergyEnvironments {
    /// `(1 - E^* + |1)(rho|)^{-1}` applied to the left Hamiltonian block.
    pub left_env: CMat,
    /// `(1 - E + |rho)(1|)^{-1}` applied to the right Hamiltonian block.
    pub right_env: CMat,
    pub left_residual: f64,
    pub right_residual: f64,
    /// Energy density the environments were built with.
    pub energy: f64,
}

fn check_h(mps: &PurificationMPS, h: &CMat) -> Result<()> {
    let n = mps.d_sys * mps.d_sys;
    if h.dim() != (n, n) {
        return Err(Error::Shape(format!(
            "two-site term must be {n}x{n}, got {:?}",
            h.dim()
        )));
    }
    Ok(())
}

pub fn energy_density(mps: &PurificationMPS, h: &CMat) -> Result<f64> {
    check_h(mps, h)?;
    Ok(trace(&h.dot(&mps.reduced_density_two_site())).re)
}

/// `h` lifted to `(s1 a1, s2 a2)` with the ancillas carried by identities.
fn lift(h: &CMat, d_sys: usize, d_anc: usize) -> CMat {
    let d = d_sys * d_anc;
    CMat::from_shape_fn((d * d, d * d), |(r, c)| {
        let (p1, p2, q1, q2) = (r / d, r % d, c / d, c % d);
        if p1 % d_anc != q1 % d_anc || p2 % d_anc != q2 % d_anc {
            return C64::new(0.0, 0.0);
        }
        let (s1, s2, t1, t2) = (p1 / d_anc, p2 / d_anc, q1 / d_anc, q2 / d_anc);
        h[[s1 * d_sys + s2, t1 * d_sys + t2]]
    })
}

/// Shared intermediates: `C^{p1 p2} = sum_q h~_{p,q} A^{q1} A^{q2}` and the
/// two half-contracted blocks.
struct Blocks {
    g1: Vec<CMat>,
    y2: Vec<CMat>,
    right_h: CMat,
    left_h: CMat,
    energy: f64,
}

fn blocks(mps: &PurificationMPS, st: &Stacks, h: &CMat) -> Result<Blocks> {
    let energy = energy_density(mps, h)?;
    let (d, b) = (st.d, st.bond);
    let mut ht = h.clone();
    for i in 0..ht.nrows() {
        ht[[i, i]] -= energy;
    }
    let hf = lift(&ht, mps.d_sys, mps.d_anc);
    let slices: Vec<CMat> = (0..d).map(|p| st.slice(p)).collect();
    let daggers: Vec<CMat> = slices.iter().map(|a| a.t().mapv(|z| z.conj())).collect();
    let mut pairs = CMat::zeros((d * d, b * b));
    for p1 in 0..d {
        for p2 in 0..d {
            let m = slices[p1].dot(&slices[p2]);
            pairs.row_mut(p1 * d + p2).assign(&to_vec(&m));
        }
    }
    let c = hf.dot(&pairs);
    let rho = mps.right_fixed_point();
    let cmat = |p1: usize, p2: usize| from_vec(&c.row(p1 * d + p2).to_owned(), b);

    let mut g1 = vec![CMat::zeros((b, b)); d];
    let mut y2 = vec![CMat::zeros((b, b)); d];
    for p1 in 0..d {
        for p2 in 0..d {
            let cp = cmat(p1, p2);
            g1[p1] = &g1[p1] + &cp.dot(rho).dot(&daggers[p2]);
            y2[p2] = &y2[p2] + &daggers[p1].dot(&cp);
        }
    }
    let mut right_h = CMat::zeros((b, b));
    let mut left_h = CMat::zeros((b, b));
    for p in 0..d {
        right_h = right_h + g1[p].dot(&daggers[p]);
        left_h = left_h + daggers[p].dot(&y2[p]);
    }
    Ok(Blocks {
        g1,
        y2,
        right_h,
        left_h,
        energy,
    })
}

fn environments_from(mps: &PurificationMPS, st: &Stacks, bl: &Blocks) -> Result<EnergyEnvironments> {
    let b = st.bond;
    let rho = mps.right_fixed_point();
    let id = CMat::eye(b);
    let tol = Tolerances::DEFAULT.geometric_sum;
    let e_right = FnMap::new(b * b, |x| to_vec(&st.right(&from_vec(x, b))));
    let e_left = FnMap::new(b * b, |x| to_vec(&st.left(&from_vec(x, b))));
    let r = solve_regularized_geometric(&e_right, (&to_vec(rho), &to_vec(&id)), &to_vec(&bl.right_h), tol)?;
    let l = solve_regularized_geometric(&e_left, (&to_vec(&id), &to_vec(rho)), &to_vec(&bl.left_h), tol)?;
    Ok(EnergyEnvironments {
        left_env: from_vec(&l.x, b),
        right_env: from_vec(&r.x, b),
        left_residual: l.residual,
        right_residual: r.residual,
        energy: bl.energy,
    })
}

pub fn energy_environments(mps: &PurificationMPS, h: &CMat) -> Result<EnergyEnvironments> {
    let st = mps.stacks();
    let bl = blocks(mps, &st, h)?;
    environments_from(mps, &st, &bl)
}

/// `d eps / d conj(A)` in the stacked `(d D) x D` layout, from the two
/// local insertions and the two environment terms.
pub fn grad_energy(mps: &PurificationMPS, h: &CMat, envs: &EnergyEnvironments) -> Result<CMat> {
    let st = mps.stacks();
    let bl = blocks(mps, &st, h)?;
    let (d, b) = (st.d, st.bond);
    let rho = mps.right_fixed_point();
    let mut g = CMat::zeros((d * b, b));
    for p in 0..d {
        let a = st.slice(p);
        let gp = &bl.g1[p] + &bl.y2[p].dot(rho) + envs.left_env.dot(&a).dot(rho) + a.dot(&envs.right_env);
        g.slice_mut(s![p * b..(p + 1) * b, ..]).assign(&gp);
    }
    Ok(g)
}

#[cfg(test)]
/// Energy, environments and gradient in one pass.
pub(crate) fn energy_and_gradient(mps: &PurificationMPS, h: &CMat) -> Result<(f64, CMat)> {
    let envs = energy_environments(mps, h)?;
    let g = grad_energy(mps, h, &envs)?;
    Ok((envs.energy, g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{Boundary, SpinChainSpec};
    use crate::grassmann::{project, Isometry};
    use crate::linalg::frobenius_norm;
    use crate::umps::tests::{dense_transfer, random_tangent};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn ising_h(hx: f64, hz: f64) -> CMat {
        SpinChainSpec::new(4, Boundary::Periodic, hx, hz).unwrap().two_site_term()
    }

    /// `<h>` on an `n`-site ring from explicit transfer matrices.
    fn ring_energy(w: &CMat, d_sys: usize, d_anc: usize, h: &CMat, n: usize) -> f64 {
        let d = d_sys * d_anc;
        let b = w.ncols();
        let t = dense_transfer(w, d);
        let hf = lift(h, d_sys, d_anc);
        let sl = |p: usize| w.slice(s![p * b..(p + 1) * b, ..]).to_owned();
        // two-site operator transfer: sum_{pq} hf[p,q] (A^{q1}A^{q2}) x conj(A^{p1}A^{p2})
        let mut th = CMat::zeros((b * b, b * b));
        for p in 0..d * d {
            let mp = sl(p / d).dot(&sl(p % d));
            for q in 0..d * d {
                let coef = hf[[p, q]];
                if coef.norm() == 0.0 {
                    continue;
                }
                let mq = sl(q / d).dot(&sl(q % d));
                for i in 0..b {
                    for j in 0..b {
                        for k in 0..b {
                            for l in 0..b {
                                th[[i * b + j, k * b + l]] += coef * mq[[i, k]] * mp[[j, l]].conj();
                            }
                        }
                    }
                }
            }
        }
        let mut tn = CMat::eye(b * b);
        for _ in 0..n - 2 {
            tn = tn.dot(&t);
        }
        let num = trace(&th.dot(&tn));
        let den = trace(&tn.dot(&t).dot(&t));
        (num / den).re
    }

    #[test]
    fn identity_term_gives_quarter() {
        let m = PurificationMPS::random(3, 2, 2, 1).unwrap();
        let h = CMat::eye(4).mapv(|z| z / 4.0);
        assert!((energy_density(&m, &h).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn maximally_mixed_has_zero_energy() {
        let m = PurificationMPS::maximally_mixed(2).unwrap();
        assert!(energy_density(&m, &ising_h(0.5, -1.05)).unwrap().abs() < 1e-15);
    }

    #[test]
    fn matches_finite_ring() {
        let h = ising_h(0.5, -1.05);
        for seed in [0u64, 60] {
            let m = PurificationMPS::random(2, 2, 2, seed).unwrap();
            let e = energy_density(&m, &h).unwrap();
            let ring = ring_energy(m.isometry(), 2, 2, &h, 12);
            assert!((e - ring).abs() < 1e-6, "{e} vs {ring}");
            let long = ring_energy(m.isometry(), 2, 2, &h, 60);
            assert!((e - long).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_hamiltonian_gives_zero_environments() {
        let m = PurificationMPS::random(3, 2, 2, 2).unwrap();
        let envs = energy_environments(&m, &CMat::zeros((4, 4))).unwrap();
        assert!(frobenius_norm(&envs.left_env) + frobenius_norm(&envs.right_env) < 1e-15);
        let g = grad_energy(&m, &CMat::zeros((4, 4)), &envs).unwrap();
        assert!(frobenius_norm(&g) == 0.0);
    }

    #[test]
    fn product_state_environments_are_scalars() {
        let m = PurificationMPS::random(1, 2, 2, 8).unwrap();
        let h = ising_h(0.3, 0.7);
        let e = energy_density(&m, &h).unwrap();
        let envs = energy_environments(&m, &h).unwrap();
        // at D = 1 every block is <h - e> = 0 and the regularized inverse is 1
        assert!(envs.right_env[[0, 0]].norm() < 1e-14);
        assert!(envs.left_env[[0, 0]].norm() < 1e-14);
        assert!(e.is_finite());
    }

    #[test]
    fn environments_match_truncated_series() {
        let m = PurificationMPS::random(3, 2, 2, 13).unwrap();
        let h = ising_h(0.5, -1.05);
        let st = m.stacks();
        let bl = blocks(&m, &st, &h).unwrap();
        let envs = environments_from(&m, &st, &bl).unwrap();
        assert!(envs.right_residual < 1e-9 && envs.left_residual < 1e-9);
        let rho = m.right_fixed_point();
        let id = CMat::eye(3);
        // sum_n (E - |rho)(1|)^n applied to the block
        let mut term = bl.right_h.clone();
        let mut sum = CMat::zeros((3, 3));
        let mut lterm = bl.left_h.clone();
        let mut lsum = CMat::zeros((3, 3));
        for _ in 0..50 {
            sum = sum + &term;
            lsum = lsum + &lterm;
            term = st.right(&term) - rho.mapv(|z| z * trace(&term));
            lterm = st.left(&lterm) - id.mapv(|z| z * trace(&rho.dot(&lterm)));
        }
        assert!(frobenius_norm(&(sum - &envs.right_env)) < 1e-8);
        assert!(frobenius_norm(&(lsum - &envs.left_env)) < 1e-8);
    }

    pub(crate) fn retract_state(m: &PurificationMPS, dir: &CMat, t: f64) -> PurificationMPS {
        let base = Arc::new(Isometry::new(m.isometry().clone()).unwrap());
        let tan = crate::grassmann::Tangent::from_coordinates(&base, dir.clone()).unwrap();
        let w = crate::grassmann::retract(&tan, t).unwrap();
        PurificationMPS::from_isometry(w.matrix().clone(), m.d_sys, m.d_anc, Some(m.right_fixed_point()))
            .unwrap()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let h = ising_h(0.5, -1.05);
        let m = PurificationMPS::random(3, 2, 2, 21).unwrap();
        let (_, g) = energy_and_gradient(&m, &h).unwrap();
        let base = Arc::new(Isometry::new(m.isometry().clone()).unwrap());
        let grad = project(&base, &g.mapv(|z| z * 2.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let dir = random_tangent(&base, &mut rng);
            let an = crate::grassmann::inner(&grad, &dir).unwrap();
            let eps = 1e-5;
            let fp = energy_density(&retract_state(&m, &dir.z, eps), &h).unwrap();
            let fm = energy_density(&retract_state(&m, &dir.z, -eps), &h).unwrap();
            let fd = (fp - fm) / (2.0 * eps);
            assert!((an - fd).abs() < 1e-6 * an.abs().max(1e-2), "{an} vs {fd}");
        }
    }
}
