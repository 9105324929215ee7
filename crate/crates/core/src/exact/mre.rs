use serde::{Deserialize, Serialize};

use super::{DensityOperator, Spectrum};
use crate::error::{Error, Result};

/// Which end of the spectrum the ensemble concentrates on. `Negative` is the
/// mirror image `H -> -H` (negative temperatures, projector onto energies
/// above the cutoff).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Positive,
    Negative,
}

impl Branch {
    fn sign(self) -> f64 {
        match self {
            Branch::Positive => 1.0,
            Branch::Negative => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MreParameters {
    pub alpha: f64,
    pub beta_alpha: f64,
    pub mean_energy: f64,
    /// `E_perp = alpha / (beta_alpha (alpha - 1)) + mean_energy`.
    pub cutoff: f64,
    pub branch: Branch,
}

/// Normalized `exp(-beta E)` with the exponent shifted for overflow safety.
pub fn gibbs_weights(energies: &[f64], beta: f64) -> Vec<f64> {
    let shift = energies
        .iter()
        .map(|e| -beta * e)
        .fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = energies.iter().map(|e| (-beta * e - shift).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

pub fn gibbs_state(spectrum: &Spectrum, beta: f64) -> Result<DensityOperator> {
    if !beta.is_finite() {
        return Err(Error::InvalidArgument(format!("inverse temperature {beta}")));
    }
    DensityOperator::from_spectral(spectrum.vectors.clone(), gibbs_weights(&spectrum.energies, beta))
}

fn mean_of(energies: &[f64], w: &[f64]) -> f64 {
    energies.iter().zip(w).map(|(e, p)| e * p).sum()
}

/// Inverse temperature whose Gibbs state has mean energy `target`.
/// Targets above the spectral mean give negative `beta`.
pub fn gibbs_beta_for_energy(spectrum: &Spectrum, target: f64) -> Result<f64> {
    let (lo_e, hi_e) = (spectrum.ground(), spectrum.top());
    if !(target > lo_e && target < hi_e) {
        return Err(Error::InvalidArgument(format!(
            "target energy {target} outside the open interval ({lo_e}, {hi_e})"
        )));
    }
    let energy = |b: f64| mean_of(&spectrum.energies, &gibbs_weights(&spectrum.energies, b));
    let sign = if target < spectrum.mean() { 1.0 } else { -1.0 };
    let mut hi = 1.0 / spectrum.width().max(f64::MIN_POSITIVE);
    while sign * (energy(sign * hi) - target) > 0.0 {
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::Bracketing(format!("no inverse temperature reaches {target}")));
        }
    }
    let mut lo = 0.0;
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if sign * (energy(sign * mid) - target) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(sign * 0.5 * (lo + hi))
}

/// Unnormalized log-weights `log(1 - c (E - mean))_+ / (alpha - 1)`.
fn log_weights(energies: &[f64], c: f64, mean: f64, alpha: f64) -> Vec<f64> {
    let p = 1.0 / (alpha - 1.0);
    energies
        .iter()
        .map(|e| {
            let base = 1.0 - c * (e - mean);
            if base > 0.0 {
                p * base.ln()
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect()
}

fn normalize_log(lw: &[f64]) -> Vec<f64> {
    let m = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = lw.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

/// `sum_k w_k (E_k - mean)` for normalized weights.
fn energy_excess(energies: &[f64], c: f64, mean: f64, alpha: f64) -> f64 {
    let w = normalize_log(&log_weights(energies, c, mean, alpha));
    energies.iter().zip(&w).map(|(e, p)| p * (e - mean)).sum()
}

/// Normalized weights of the maximal Renyi ensemble on the given levels
/// (positive branch).
pub fn mre_weights(energies: &[f64], beta_alpha: f64, alpha: f64, mean_energy: f64) -> Vec<f64> {
    let c = beta_alpha * (alpha - 1.0) / alpha;
    normalize_log(&log_weights(energies, c, mean_energy, alpha))
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0) || alpha == 1.0 || !alpha.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "Renyi index must be finite, positive and different from 1, got {alpha}"
        )));
    }
    Ok(())
}

fn mirrored(spectrum: &Spectrum, branch: Branch) -> Vec<f64> {
    let s = branch.sign();
    spectrum.energies.iter().map(|e| s * e).collect()
}

fn bisect(mut lo: f64, mut hi: f64, positive_at_lo: impl Fn(f64) -> bool) -> f64 {
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if positive_at_lo(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn assemble(
    spectrum: &Spectrum,
    energies: &[f64],
    c: f64,
    mean: f64,
    alpha: f64,
    branch: Branch,
) -> Result<(DensityOperator, MreParameters)> {
    let w = normalize_log(&log_weights(energies, c, mean, alpha));
    let s = branch.sign();
    let beta = c * alpha / (alpha - 1.0);
    let params = MreParameters {
        alpha,
        beta_alpha: s * beta,
        mean_energy: s * mean,
        cutoff: s * (mean + 1.0 / c),
        branch,
    };
    Ok((DensityOperator::from_spectral(spectrum.vectors.clone(), w)?, params))
}

fn maximally_mixed(spectrum: &Spectrum, alpha: f64, branch: Branch) -> Result<(DensityOperator, MreParameters)> {
    let rho = DensityOperator::from_spectral(spectrum.vectors.clone(), vec![1.0; spectrum.dim()])?;
    let params = MreParameters {
        alpha,
        beta_alpha: 0.0,
        mean_energy: spectrum.mean(),
        cutoff: branch.sign() * f64::INFINITY,
        branch,
    };
    Ok((rho, params))
}

/// Maximal Renyi ensemble at fixed multiplier `beta_alpha`, with the mean
/// energy solved self-consistently. `beta_alpha` must be positive on the
/// positive branch and negative on the negative one; zero gives the
/// maximally mixed state.
pub fn mre_from_beta(
    spectrum: &Spectrum,
    beta_alpha: f64,
    alpha: f64,
    branch: Branch,
) -> Result<(DensityOperator, MreParameters)> {
    check_alpha(alpha)?;
    if !beta_alpha.is_finite() || beta_alpha * branch.sign() < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "beta_alpha = {beta_alpha} does not belong to the {branch:?} branch"
        )));
    }
    if beta_alpha == 0.0 {
        return maximally_mixed(spectrum, alpha, branch);
    }
    let energies = mirrored(spectrum, branch);
    let beta = beta_alpha.abs();
    let c = beta * (alpha - 1.0) / alpha;
    let e_min = energies.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = energies.iter().sum::<f64>() / energies.len() as f64;
    let hi = if c < 0.0 {
        mean.min(e_min + (1.0 - 1e-12) / c.abs())
    } else {
        mean
    };
    let g = |m: f64| energy_excess(&energies, c, m, alpha);
    if g(e_min) < 0.0 || g(hi) > 0.0 {
        let samples: Vec<String> = (0..=8)
            .map(|k| {
                let m = e_min + (hi - e_min) * k as f64 / 8.0;
                format!("{m:.6} -> {:.6}", m + g(m))
            })
            .collect();
        return Err(Error::Bracketing(format!(
            "self-consistent energy not bracketed on [{e_min}, {hi}]; mean -> tr(H rho) samples: {}",
            samples.join(", ")
        )));
    }
    let root = bisect(e_min, hi, |m| g(m) > 0.0);
    assemble(spectrum, &energies, c, root, alpha, branch)
}

/// Maximal Renyi ensemble with prescribed mean energy. The positive branch
/// accepts `E_ground < target <= tr H / dim`, the negative branch
/// `tr H / dim <= target < E_max`.
pub fn mre_from_energy(
    spectrum: &Spectrum,
    target: f64,
    alpha: f64,
    branch: Branch,
) -> Result<(DensityOperator, MreParameters)> {
    check_alpha(alpha)?;
    let energies = mirrored(spectrum, branch);
    let t = branch.sign() * target;
    let e_min = energies.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = energies.iter().sum::<f64>() / energies.len() as f64;
    let slack = 1e-13 * spectrum.width().max(1.0);
    if !(t > e_min && t <= mean + slack) {
        let (a, b) = match branch {
            Branch::Positive => (spectrum.ground(), spectrum.mean()),
            Branch::Negative => (spectrum.mean(), spectrum.top()),
        };
        return Err(Error::InvalidArgument(format!(
            "target energy {target} outside the admissible range of the {branch:?} branch: ({a}, {b})"
        )));
    }
    if (t - mean).abs() <= slack {
        return maximally_mixed(spectrum, alpha, branch);
    }
    let h = |c: f64| energy_excess(&energies, c, t, alpha);
    let c = if alpha > 1.0 {
        let mut hi = 1.0 / spectrum.width();
        while h(hi) > 0.0 {
            hi *= 2.0;
            if hi > 1e300 {
                return Err(Error::Bracketing(format!("no multiplier reaches {target}")));
            }
        }
        let mut lo = 0.5 * hi;
        while h(lo) <= 0.0 {
            lo *= 0.5;
            if lo < 1e-300 {
                return Err(Error::Bracketing(format!("no multiplier reaches {target}")));
            }
        }
        bisect(lo, hi, |c| h(c) > 0.0)
    } else {
        // c in (-1/(t - E_min), 0): all levels keep a positive weight
        let scale = 1.0 / (t - e_min);
        -scale * bisect(0.0, 1.0 - 1e-15, |u| h(-scale * u) > 0.0)
    };
    assemble(spectrum, &energies, c, t, alpha, branch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{renyi_entropy, von_neumann_entropy};

    #[test]
    fn two_level_target_quarter() {
        let s = Spectrum::diagonal(&[0.0, 1.0]);
        let (rho, p) = mre_from_energy(&s, 0.25, 2.0, Branch::Positive).unwrap();
        let w = rho.spectral().unwrap().1;
        assert!((w[0] - 0.75).abs() < 1e-13 && (w[1] - 0.25).abs() < 1e-13);
        assert!((p.beta_alpha - 1.6).abs() < 1e-12);
        assert!((p.cutoff - 1.5).abs() < 1e-12);
        assert!(p.cutoff >= 1.0);
        assert!((p.cutoff - (p.mean_energy + 2.0 / p.beta_alpha)).abs() < 1e-12);
    }

    #[test]
    fn beta_route_inverts_energy_route() {
        let s = Spectrum::diagonal(&[0.0, 1.0]);
        let (rho, p) = mre_from_beta(&s, 1.6, 2.0, Branch::Positive).unwrap();
        assert!((p.mean_energy - 0.25).abs() < 1e-12);
        assert!((rho.spectral().unwrap().1[0] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn three_level_self_consistency_oracle() {
        // p_k ∝ max(0, 1 - (E_k - m)/2) with m = sum p_k E_k, solved by a
        // plain fixed-point iteration on m
        let levels = [0.0, 1.0, 2.0];
        let mut m = 1.0;
        for _ in 0..500 {
            let w: Vec<f64> = levels.iter().map(|e| (1.0f64 - (e - m) / 2.0).max(0.0)).collect();
            let z: f64 = w.iter().sum();
            m = w.iter().zip(&levels).map(|(a, e)| a * e).sum::<f64>() / z;
        }
        let s = Spectrum::diagonal(&levels);
        let (rho, p) = mre_from_beta(&s, 1.0, 2.0, Branch::Positive).unwrap();
        assert!((p.mean_energy - m).abs() < 1e-12, "{} vs {m}", p.mean_energy);
        let w = rho.spectral().unwrap().1;
        let raw: Vec<f64> = levels.iter().map(|e| (1.0f64 - (e - m) / 2.0).max(0.0)).collect();
        let z: f64 = raw.iter().sum();
        for (a, b) in w.iter().zip(&raw) {
            assert!((a - b / z).abs() < 1e-12);
        }
        // stationarity of S_2 - beta(<E> - m) restricted to the support:
        // -2 p_k / tr p^2 + lambda + ... is linear in E_k
        let pur: f64 = w.iter().map(|x| x * x).sum();
        let grads: Vec<f64> = w.iter().map(|x| 2.0 * x / pur).collect();
        let slope = (grads[1] - grads[0]) / (levels[1] - levels[0]);
        if w[2] > 0.0 {
            assert!(((grads[2] - grads[1]) - slope).abs() < 1e-10);
        }
        assert!(slope < 0.0);
    }

    #[test]
    fn small_beta_is_nearly_maximally_mixed() {
        let s = Spectrum::diagonal(&[-1.5, -0.5, 0.5, 1.5]);
        let (rho, _) = mre_from_beta(&s, 1e-9, 2.0, Branch::Positive).unwrap();
        assert!((renyi_entropy(&rho, 2.0).unwrap() - 4f64.ln()).abs() < 1e-8);
        let (rho0, p0) = mre_from_beta(&s, 0.0, 2.0, Branch::Positive).unwrap();
        assert_eq!(p0.beta_alpha, 0.0);
        assert!((von_neumann_entropy(&rho0) - 4f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn negative_branch_mirrors_spectrum() {
        let s = Spectrum::diagonal(&[0.0, 1.0]);
        let (rho, p) = mre_from_energy(&s, 0.75, 2.0, Branch::Negative).unwrap();
        let w = rho.spectral().unwrap().1;
        assert!((w[1] - 0.75).abs() < 1e-13);
        assert!((p.beta_alpha + 1.6).abs() < 1e-12);
        assert!((p.cutoff + 0.5).abs() < 1e-12);
        assert!(mre_from_energy(&s, 0.75, 2.0, Branch::Positive).is_err());
        assert!(mre_from_beta(&s, 1.0, 2.0, Branch::Negative).is_err());
    }

    #[test]
    fn sub_unit_alpha_keeps_full_support() {
        let s = Spectrum::diagonal(&[0.0, 0.3, 1.0, 1.7]);
        let (rho, p) = mre_from_energy(&s, 0.5, 0.5, Branch::Positive).unwrap();
        let w = rho.spectral().unwrap().1;
        assert!(w.iter().all(|x| *x > 0.0));
        let e: f64 = w.iter().zip(&s.energies).map(|(a, b)| a * b).sum();
        assert!((e - 0.5).abs() < 1e-12);
        assert!(p.beta_alpha > 0.0);
        let (_, q) = mre_from_beta(&s, p.beta_alpha, 0.5, Branch::Positive).unwrap();
        assert!((q.mean_energy - 0.5).abs() < 1e-9);
    }

    #[test]
    fn gibbs_beta_root() {
        let s = Spectrum::diagonal(&[0.0, 1.0, 3.0]);
        let b = gibbs_beta_for_energy(&s, 0.5).unwrap();
        let w = gibbs_weights(&s.energies, b);
        assert!((mean_of(&s.energies, &w) - 0.5).abs() < 1e-13);
        let b = gibbs_beta_for_energy(&s, 2.0).unwrap();
        assert!(b < 0.0);
        assert!(gibbs_beta_for_energy(&s, 3.0).is_err());
    }

    #[test]
    fn gibbs_weights_survive_huge_beta() {
        let w = gibbs_weights(&[-2.0, -1.0, 5.0], 1e3);
        assert!((w[0] - 1.0).abs() < 1e-15);
        let w = gibbs_weights(&[-2.0, -1.0, 5.0], 0.0);
        assert!(w.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn energy_out_of_range_names_interval() {
        let s = Spectrum::diagonal(&[0.0, 1.0]);
        match mre_from_energy(&s, 0.9, 2.0, Branch::Positive) {
            Err(Error::InvalidArgument(msg)) => assert!(msg.contains("(0, 0.5)")),
            other => panic!("unexpected {other:?}"),
        }
    }
}
