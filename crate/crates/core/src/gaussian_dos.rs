//! Closed-form ensemble statistics for a Gaussian density of states
//! `D(E) = exp(-(E - E_mid)^2 / (2 sigma^2 N))`.
//!
//! The 2-Renyi ensemble weights levels by `(E_perp - E)_+` with
//! `E_perp = E_bar + 2/beta_R`; everything reduces to the truncated moments
//! `Phi_m = int_{-inf}^{E_perp} E^m D(E) dE`.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};
use libm::erfc;

use crate::error::{Error, Result};

const ASYMPTOTIC_FROM: f64 = 25.0;
const FRACTION_FROM: f64 = 2.0;

/// `exp(x^2) erfc(x)`.
pub fn erfcx(x: f64) -> f64 {
    if x < FRACTION_FROM {
        (x * x).exp() * erfc(x)
    } else if x < ASYMPTOTIC_FROM {
        erfcx_continued_fraction(x)
    } else {
        1.0 / (x * PI.sqrt()) * (1.0 - asymptotic_tail(x))
    }
}

/// Laplace continued fraction
/// `erfcx(x) = 1/sqrt(pi) * 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))`,
/// evaluated by the modified Lentz method.
fn erfcx_continued_fraction(x: f64) -> f64 {
    let tiny = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for k in 1..500 {
        let a = 0.5 * k as f64;
        d = x + a * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = x + a / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    1.0 / (PI.sqrt() * f)
}

/// `1 - sqrt(pi) x erfcx(x)` without cancellation for large `x`.
fn one_minus_mills(x: f64) -> f64 {
    if x < ASYMPTOTIC_FROM {
        return 1.0 - PI.sqrt() * x * erfcx(x);
    }
    asymptotic_tail(x)
}

/// `-sum_{n>=1} (-1)^n (2n-1)!! / (2x^2)^n`.
fn asymptotic_tail(x: f64) -> f64 {
    let r = 1.0 / (2.0 * x * x);
    let mut term = 1.0_f64;
    let mut sum = 0.0_f64;
    for n in 1..200 {
        term *= -((2 * n - 1) as f64) * r;
        if term.abs() < 1e-18 * sum.abs() {
            break;
        }
        sum -= term;
    }
    sum
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianDos {
    pub sigma: f64,
    pub n: f64,
    pub e_mid: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenyiMoments {
    /// Relative residual of `Phi_0 (E_bar E_perp + s) = E_bar Phi_1`.
    pub residual: f64,
    pub variance: f64,
    /// Set when the residual exceeds `1e-6`.
    pub inconsistent: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: f64,
    pub beta_r: f64,
    pub mean_energy: f64,
    pub energy_density: f64,
    pub variance: f64,
    pub cutoff: f64,
    pub de_dbeta_r: f64,
}

impl GaussianDos {
    pub fn new(sigma: f64, n: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) || !(n > 0.0 && n.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "Gaussian density of states needs sigma > 0 and N > 0, got sigma = {sigma}, N = {n}"
            )));
        }
        Ok(Self {
            sigma,
            n,
            e_mid: 0.0,
        })
    }

    /// `sigma^2 N`.
    pub fn variance(&self) -> f64 {
        self.sigma * self.sigma * self.n
    }

    pub fn density(&self, e: f64) -> f64 {
        let d = e - self.e_mid;
        (-d * d / (2.0 * self.variance())).exp()
    }

    fn centered(&self) -> Result<()> {
        if self.e_mid != 0.0 {
            return Err(Error::InvalidArgument(
                "closed forms assume a centred density of states (E_mid = 0)".into(),
            ));
        }
        Ok(())
    }

    pub fn truncated_moment(&self, m: usize, e_perp: f64) -> Result<f64> {
        self.centered()?;
        let s = self.variance();
        let phi0 = || (PI * s / 2.0).sqrt() * erfc(-e_perp / (2.0 * s).sqrt());
        let phi1 = || {
            if e_perp.is_infinite() {
                0.0
            } else {
                -s * (-e_perp * e_perp / (2.0 * s)).exp()
            }
        };
        match m {
            0 => Ok(phi0()),
            1 => Ok(phi1()),
            2 => Ok(s * phi0() + if e_perp.is_infinite() { 0.0 } else { e_perp * phi1() }),
            3 => Ok(if e_perp.is_infinite() { 0.0 } else { (2.0 * s + e_perp * e_perp) * phi1() }),
            _ => Err(Error::InvalidArgument(format!(
                "truncated moments are available for m in 0..=3, got {m}"
            ))),
        }
    }

    /// `(mean, variance)` of the Gibbs ensemble.
    pub fn gibbs_moments(&self, beta: f64) -> (f64, f64) {
        (self.e_mid - beta * self.variance(), self.variance())
    }

    /// `(E_perp Phi_0 - Phi_1) / Phi_0`, evaluated without underflow.
    fn gap_ratio(&self, e_perp: f64) -> f64 {
        let s = self.variance();
        let x = -e_perp / (2.0 * s).sqrt();
        if x >= 1.0 {
            (2.0 * s).sqrt() * one_minus_mills(x) / (PI.sqrt() * erfcx(x))
        } else {
            e_perp + (2.0 * s / PI).sqrt() * (-x * x).exp() / erfc(x)
        }
    }

    /// Mean energy of the clipped-linear ensemble with cutoff `e_perp`.
    pub fn renyi_mean_for_cutoff(&self, e_perp: f64) -> Result<f64> {
        self.centered()?;
        Ok(-self.variance() / self.gap_ratio(e_perp))
    }

    /// Consistency residual of `(beta_R, E_bar)` and the variance
    /// `2 s + 2 E_bar / beta_R`.
    pub fn renyi_moments(&self, beta_r: f64, mean: f64) -> Result<RenyiMoments> {
        self.centered()?;
        if !(beta_r > 0.0) {
            return Err(Error::InvalidArgument(format!("beta_R must be positive, got {beta_r}")));
        }
        let s = self.variance();
        let e_perp = mean + 2.0 / beta_r;
        // divide both sides by Phi_0: E_bar E_perp + s = E_bar Phi_1/Phi_0
        // and Phi_1/Phi_0 = E_perp - gap_ratio
        let lhs = mean * e_perp + s;
        let rhs = mean * (e_perp - self.gap_ratio(e_perp));
        let residual = (lhs - rhs).abs() / (mean.abs() * e_perp.abs() + s);
        Ok(RenyiMoments {
            residual,
            variance: 2.0 * s + 2.0 * mean / beta_r,
            inconsistent: residual > 1e-6,
        })
    }

    /// Self-consistent mean energy at multiplier `beta_r`.
    pub fn energy_of_beta_r(&self, beta_r: f64) -> Result<f64> {
        self.centered()?;
        if !(beta_r > 0.0 && beta_r.is_finite()) {
            return Err(Error::InvalidArgument(format!("beta_R must be positive, got {beta_r}")));
        }
        let s = self.variance();
        // F(E) = E * gap_ratio(E + 2/beta) + s, positive at E = 0
        let f = |e: f64| e * self.gap_ratio(e + 2.0 / beta_r) + s;
        let mut lo = -2.0 * s * beta_r;
        let mut expansions = 0;
        while f(lo) >= 0.0 {
            lo *= 2.0;
            expansions += 1;
            if expansions > 200 {
                return Err(Error::NotConverged {
                    what: "Gaussian self-consistency bracket",
                    iterations: expansions,
                    residual: f(lo),
                });
            }
        }
        let mut hi = 0.0;
        for _ in 0..2000 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if f(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// `dE_bar/dbeta_R = (1 + 2x) / (beta_R^2 (1 + x))` with
    /// `x = E_bar / (beta_R sigma^2 N)`, from implicit differentiation of
    /// the self-consistency condition.
    pub fn de_dbeta_r(&self, beta_r: f64) -> Result<f64> {
        let e = self.energy_of_beta_r(beta_r)?;
        let x = e / (beta_r * self.variance());
        Ok((1.0 + 2.0 * x) / (beta_r * beta_r * (1.0 + x)))
    }

    /// Multiplier at which the cutoff sits at the band centre,
    /// `2 sqrt(2 / (pi sigma^2 N))`.
    pub fn beta_r_at_zero_cutoff(&self) -> f64 {
        2.0 * (2.0 / (PI * self.variance())).sqrt()
    }

    pub fn sweep_row(&self, beta_r: f64) -> Result<SweepRow> {
        let e = self.energy_of_beta_r(beta_r)?;
        let x = e / (beta_r * self.variance());
        Ok(SweepRow {
            n: self.n,
            beta_r,
            mean_energy: e,
            energy_density: e / self.n,
            variance: 2.0 * self.variance() + 2.0 * e / beta_r,
            cutoff: e + 2.0 / beta_r,
            de_dbeta_r: (1.0 + 2.0 * x) / (beta_r * beta_r * (1.0 + x)),
        })
    }
}

/// Columns: `N, beta_R, E_bar, E_bar_per_N, var_R, E_perp, dE_dbetaR`.
pub fn write_sweep_csv<W: Write>(out: W, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["N", "beta_R", "E_bar", "E_bar_per_N", "var_R", "E_perp", "dE_dbetaR"])?;
    for r in rows {
        w.write_record([
            r.n.to_string(),
            r.beta_r.to_string(),
            r.mean_energy.to_string(),
            r.energy_density.to_string(),
            r.variance.to_string(),
            r.cutoff.to_string(),
            r.de_dbeta_r.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
