//! Dense nonlinear flow `d rho / d tau = -1/2 {J - <J>, rho}` whose fixed
//! point is the 2-Renyi ensemble at multiplier `beta_r`.
//!
//! With `J = beta_r H + 2 rho / tr rho^2` the flow is the gradient flow of
//! `beta_r tr(H rho) + ln tr rho^2 = beta_r f_R`, so `f_R` can only decrease.

use std::io::Write;

use log::{debug, warn};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::DensityOperator;
use crate::linalg::{dagger, eigh, eigh_real, eigvalsh, hermitian_part, trace, CMat, C64};

const GROWTH: f64 = 1.1;
const POSITIVITY_ABORT: f64 = -1e-10;
const MIN_PURITY: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvolutionConfig {
    pub beta_r: f64,
    /// Initial step; `None` takes `0.5 / spread(J)` at the starting state.
    pub dtau: Option<f64>,
    pub max_steps: usize,
    pub renormalize: bool,
    pub monitor_every: usize,
    /// Stop once `|delta f_R| / delta tau` drops below this and
    pub rate_tol: f64,
    /// `||{J - <J>, rho}||_F` drops below this.
    pub stationarity_tol: f64,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            beta_r: 1.0,
            dtau: None,
            max_steps: 200_000,
            renormalize: true,
            monitor_every: 10,
            rate_tol: 1e-10,
            stationarity_tol: 1e-8,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_r >= 0.0 && self.beta_r.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "beta_r must be finite and nonnegative, got {}",
                self.beta_r
            )));
        }
        if let Some(d) = self.dtau {
            if !(d >= 0.0 && d.is_finite()) {
                return Err(Error::InvalidArgument(format!("dtau must be nonnegative, got {d}")));
            }
        }
        if self.monitor_every == 0 {
            return Err(Error::InvalidArgument("monitor_every must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvolutionRecord {
    pub tau: f64,
    pub trace: f64,
    pub min_eig: f64,
    /// `tr(H rho) - S_2 / beta_r`; at `beta_r = 0` this column holds `-S_2`.
    #[serde(rename = "f_R")]
    pub f_r: f64,
    #[serde(rename = "S2")]
    pub s2: f64,
    pub energy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxSteps,
    PositivityLost,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvolutionTrace {
    pub beta_r: f64,
    pub renormalize: bool,
    pub records: Vec<EvolutionRecord>,
    pub steps: usize,
    pub halvings: usize,
    pub initial_dtau: f64,
    pub final_dtau: f64,
    pub stop: StopReason,
}

impl EvolutionTrace {
    pub fn last(&self) -> &EvolutionRecord {
        self.records.last().expect("trace always holds the initial record")
    }
}

/// `beta_r H + (2 / tr rho^2) rho`. Takes a bare matrix so that iterates
/// without renormalization are accepted too.
pub fn j_operator(rho: &CMat, h: &CMat, beta_r: f64) -> Result<CMat> {
    if rho.dim() != h.dim() {
        return Err(Error::Shape(format!(
            "state is {:?} but Hamiltonian is {:?}",
            rho.dim(),
            h.dim()
        )));
    }
    let p = purity(rho);
    if !(p >= MIN_PURITY) {
        return Err(Error::InvalidArgument(format!("tr rho^2 = {p:.3e} is degenerate")));
    }
    let j = h.mapv(|z| z * beta_r) + rho.mapv(|z| z * (2.0 / p));
    Ok(hermitian_part(&j))
}

fn purity(rho: &CMat) -> f64 {
    rho.iter().map(|z| z.norm_sqr()).sum()
}

/// `Re tr(A B)`.
fn trace_product(a: &CMat, b: &CMat) -> f64 {
    let mut acc = 0.0;
    for ((i, j), x) in a.indexed_iter() {
        acc += (x * b[[j, i]]).re;
    }
    acc
}

/// One first-order step `X rho X` with `X = exp(-(dtau/2)(J - <J>))` and
/// `<J> = tr(J rho)`, followed by division by the trace when asked.
pub fn step(rho: &CMat, h: &CMat, beta_r: f64, dtau: f64, renormalize: bool) -> Result<CMat> {
    Ok(advance(rho, h, beta_r, dtau, renormalize)?.0)
}

/// Also returns `2 max_k <v_k|rho|v_k> / tr rho^2` over eigenvectors of `J`,
/// the stiffness of the purity term near a fixed point.
fn advance(rho: &CMat, h: &CMat, beta_r: f64, dtau: f64, renormalize: bool) -> Result<(CMat, f64)> {
    let j = j_operator(rho, h, beta_r)?;
    let mean = trace_product(&j, rho);
    let p = purity(rho);
    let (mut next, p_max) = if is_real(&j) && is_real(rho) {
        let (next, p_max) = conjugate_real(&j.mapv(|z| z.re), &rho.mapv(|z| z.re), mean, dtau)?;
        (next.mapv(|x| C64::new(x, 0.0)), p_max)
    } else {
        conjugate_complex(&j, rho, mean, dtau)?
    };
    if renormalize {
        let tr = trace(&next).re;
        next.mapv_inplace(|z| z / tr);
    }
    Ok((next, 2.0 * p_max / p))
}

fn is_real(m: &CMat) -> bool {
    m.iter().all(|z| z.im == 0.0)
}

fn conjugate_complex(j: &CMat, rho: &CMat, mean: f64, dtau: f64) -> Result<(CMat, f64)> {
    let dec = eigh(j)?;
    let rv = rho.dot(&dec.vectors);
    let p_max = dec
        .vectors
        .columns()
        .into_iter()
        .zip(rv.columns())
        .map(|(v, w)| v.iter().zip(w.iter()).map(|(a, b)| (a.conj() * b).re).sum::<f64>())
        .fold(0.0, f64::max);
    let mut scaled = dec.vectors.clone();
    for (mut col, &w) in scaled.columns_mut().into_iter().zip(&dec.values) {
        let x = (-0.5 * dtau * (w - mean)).exp();
        col.mapv_inplace(|z| z * x);
    }
    let x = scaled.dot(&dagger(&dec.vectors));
    Ok((hermitian_part(&x.dot(rho).dot(&x)), p_max))
}

fn conjugate_real(j: &Array2<f64>, rho: &Array2<f64>, mean: f64, dtau: f64) -> Result<(Array2<f64>, f64)> {
    let (values, v) = eigh_real(j)?;
    let rv = rho.dot(&v);
    let p_max = v
        .columns()
        .into_iter()
        .zip(rv.columns())
        .map(|(a, b)| a.dot(&b))
        .fold(0.0, f64::max);
    let mut scaled = v.clone();
    for (mut col, &w) in scaled.columns_mut().into_iter().zip(&values) {
        col *= (-0.5 * dtau * (w - mean)).exp();
    }
    let x = scaled.dot(&v.t());
    let next = x.dot(rho).dot(&x);
    Ok(((&next + &next.t()) * 0.5, p_max))
}

/// Largest minus smallest eigenvalue of `J` at `rho`.
pub fn j_spread(rho: &CMat, h: &CMat, beta_r: f64) -> Result<f64> {
    let w = eigvalsh(&j_operator(rho, h, beta_r)?)?;
    Ok(w[w.len() - 1] - w[0])
}

#[derive(Debug, Clone, Copy)]
struct Monitors {
    trace: f64,
    energy: f64,
    s2: f64,
    /// `beta_r f_R`
    scaled: f64,
}

impl Monitors {
    fn of(rho: &CMat, h: &CMat, beta_r: f64) -> Self {
        let trace = trace(rho).re;
        let energy = trace_product(h, rho) / trace;
        let s2 = -(purity(rho) / (trace * trace)).ln();
        Self {
            trace,
            energy,
            s2,
            scaled: beta_r * energy - s2,
        }
    }

    fn f_r(&self, beta_r: f64) -> f64 {
        if beta_r > 0.0 {
            self.scaled / beta_r
        } else {
            self.scaled
        }
    }

    fn record(&self, tau: f64, min_eig: f64, beta_r: f64) -> EvolutionRecord {
        EvolutionRecord {
            tau,
            trace: self.trace,
            min_eig,
            f_r: self.f_r(beta_r),
            s2: self.s2,
            energy: self.energy,
        }
    }
}

fn min_eigenvalue(rho: &CMat) -> Result<f64> {
    Ok(eigvalsh(&hermitian_part(rho))?[0])
}

fn near_eigenprojector(rho: &CMat, h: &CMat) -> bool {
    let tr = trace(rho).re;
    if (purity(rho) / (tr * tr) - 1.0).abs() > 1e-10 {
        return false;
    }
    let e = trace_product(h, rho) / tr;
    let residual = h.dot(rho) - rho.mapv(|z| z * e);
    residual.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt() < 1e-10
}

/// `||{J - <J>, rho}||_F`, zero exactly at fixed points of the flow.
pub fn stationarity(rho: &CMat, h: &CMat, beta_r: f64) -> Result<f64> {
    let j = j_operator(rho, h, beta_r)?;
    let mean = trace_product(&j, rho) / trace(rho).re;
    let jr = j.dot(rho);
    let anti = &jr + &dagger(&jr) - rho.mapv(|z| z * (2.0 * mean));
    Ok(crate::linalg::frobenius_norm(&anti))
}

/// Integrates the flow from `rho0` until the free-energy rate falls below
/// `cfg.rate_tol` with the state stationary to `cfg.stationarity_tol`, or
/// `cfg.max_steps` steps have been taken. A step that would raise `f_R` is
/// retried with half the step; accepted steps grow it by 10% up to the
/// inverse stiffness, past which the purity term overshoots.
pub fn evolve(rho0: &DensityOperator, h: &CMat, cfg: &EvolutionConfig) -> Result<(DensityOperator, EvolutionTrace)> {
    cfg.validate()?;
    let beta = cfg.beta_r;
    let mut rho = rho0.matrix().clone();
    if near_eigenprojector(&rho, h) {
        warn!("initial state is an eigenprojector of H and will not evolve");
    }
    let spread = j_spread(&rho, h, beta)?;
    let initial_dtau = cfg.dtau.unwrap_or(if spread > 0.0 { 0.5 / spread } else { 1.0 });
    if initial_dtau * spread >= 1.0 {
        return Err(Error::InvalidArgument(format!(
            "dtau = {initial_dtau} is too large: dtau * spread(J) = {:.3} must stay below 1",
            initial_dtau * spread
        )));
    }

    let mut dtau = initial_dtau;
    let mut tau = 0.0;
    let mut now = Monitors::of(&rho, h, beta);
    let mut trace = EvolutionTrace {
        beta_r: beta,
        renormalize: cfg.renormalize,
        records: vec![now.record(0.0, min_eigenvalue(&rho)?, beta)],
        steps: 0,
        halvings: 0,
        initial_dtau,
        final_dtau: dtau,
        stop: StopReason::MaxSteps,
    };
    if dtau == 0.0 {
        return Ok((DensityOperator::normalized(&rho)?, trace));
    }

    for k in 1..=cfg.max_steps {
        let (next, after, stiffness) = loop {
            let (next, stiffness) = advance(&rho, h, beta, dtau, cfg.renormalize)?;
            let after = Monitors::of(&next, h, beta);
            if after.scaled <= now.scaled + 1e-13 * (1.0 + now.scaled.abs()) {
                break (next, after, stiffness);
            }
            dtau *= 0.5;
            trace.halvings += 1;
            if dtau < 1e-14 * initial_dtau {
                return Err(Error::NotConverged {
                    what: "free-energy descent step",
                    iterations: k,
                    residual: after.scaled - now.scaled,
                });
            }
        };
        let rate = (after.f_r(beta) - now.f_r(beta)).abs() / dtau;
        tau += dtau;
        rho = next;
        now = after;
        trace.steps = k;
        trace.final_dtau = dtau;
        let converged = rate < cfg.rate_tol && stationarity(&rho, h, beta)? < cfg.stationarity_tol;
        if k % cfg.monitor_every == 0 || converged || k == cfg.max_steps {
            let min_eig = min_eigenvalue(&rho)?;
            trace.records.push(now.record(tau, min_eig, beta));
            if min_eig < POSITIVITY_ABORT {
                trace.stop = StopReason::PositivityLost;
                return Err(Error::PositivityLost {
                    tau,
                    min_eig,
                    trace: Box::new(trace),
                });
            }
            debug!("tau {tau:.4} dtau {dtau:.3e} f_R {:.12} rate {rate:.3e}", now.f_r(beta));
        }
        if converged {
            trace.stop = StopReason::Converged;
            break;
        }
        dtau = (dtau * GROWTH).min(1.0 / stiffness);
    }
    Ok((DensityOperator::normalized(&rho)?, trace))
}

/// Independent trajectories over a grid of multipliers, all from `rho0`.
pub fn evolve_grid(
    rho0: &DensityOperator,
    h: &CMat,
    betas: &[f64],
    cfg: &EvolutionConfig,
) -> Vec<Result<(DensityOperator, EvolutionTrace)>> {
    betas
        .par_iter()
        .map(|&beta_r| evolve(rho0, h, &EvolutionConfig { beta_r, ..*cfg }))
        .collect()
}

/// `G G^dagger / tr` for a complex Ginibre matrix `G`; full rank with
/// probability one.
pub fn random_full_rank(dim: usize, seed: u64) -> Result<DensityOperator> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = CMat::from_shape_fn((dim, dim), |_| {
        C64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng))
    });
    DensityOperator::normalized(&g.dot(&dagger(&g)))
}

/// Real counterpart of [`random_full_rank`]. With a real Hamiltonian the
/// whole trajectory then stays real.
pub fn random_full_rank_real(dim: usize, seed: u64) -> Result<DensityOperator> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Array2::<f64>::from_shape_fn((dim, dim), |_| StandardNormal.sample(&mut rng));
    DensityOperator::normalized(&g.dot(&g.t()).mapv(|x| C64::new(x, 0.0)))
}

pub fn write_trace_csv<W: Write>(out: W, trace: &EvolutionTrace) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in &trace.records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{build_ising, mre_from_beta, renyi_entropy, Boundary, Branch, SpinChainSpec, Spectrum};
    use crate::linalg::frobenius_norm;

    fn chain(n: usize) -> CMat {
        build_ising(&SpinChainSpec::new(n, Boundary::Open, 0.5, -1.05).unwrap()).unwrap()
    }

    fn anticommutator_rhs(rho: &CMat, h: &CMat, beta: f64) -> CMat {
        // -1/2 {J - <J>, rho}, assembled directly without exponentials
        let p: f64 = rho.iter().map(|z| z.norm_sqr()).sum();
        let j = h.mapv(|z| z * beta) + rho.mapv(|z| z * (2.0 / p));
        let mean: C64 = j.dot(rho).diag().sum();
        let shifted = &j - &CMat::eye(j.nrows()).mapv(|z| z * mean);
        (shifted.dot(rho) + rho.dot(&shifted)).mapv(|z| z * -0.5)
    }

    #[test]
    fn j_of_maximally_mixed_state() {
        let h = chain(3);
        let rho = DensityOperator::maximally_mixed(8);
        let j = j_operator(rho.matrix(), &h, 0.7).unwrap();
        let expected = h.mapv(|z| z * 0.7) + CMat::eye(8).mapv(|z| z * 2.0);
        assert!(frobenius_norm(&(j - expected)) < 1e-13);
    }

    #[test]
    fn j_of_pure_state_at_zero_beta() {
        let psi = crate::linalg::tests::gaussian(8, 1, 4).column(0).to_owned();
        let rho = DensityOperator::pure(&psi).unwrap();
        let j = j_operator(rho.matrix(), &chain(3), 0.0).unwrap();
        let expected = rho.matrix().mapv(|z| z * 2.0);
        assert!(frobenius_norm(&(&j - &expected)) < 1e-13);
        let w = eigvalsh(&j).unwrap();
        assert!(w[..7].iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn j_is_hermitian_and_matches_spectral_assembly() {
        let h = chain(4);
        let rho = random_full_rank(16, 9).unwrap();
        let j = j_operator(rho.matrix(), &h, 1.3).unwrap();
        assert!(crate::linalg::hermitian_asymmetry(&j) < 1e-13);
        let dec = eigh(rho.matrix()).unwrap();
        let p: f64 = dec.values.iter().map(|w| w * w).sum();
        let mut scaled = dec.vectors.clone();
        for (mut col, &w) in scaled.columns_mut().into_iter().zip(&dec.values) {
            col.mapv_inplace(|z| z * (2.0 * w / p));
        }
        let other = h.mapv(|z| z * 1.3) + scaled.dot(&dagger(&dec.vectors));
        assert!(frobenius_norm(&(j - other)) < 1e-12);
    }

    #[test]
    fn degenerate_state_is_rejected() {
        assert!(j_operator(&CMat::zeros((4, 4)), &chain(2), 1.0).is_err());
    }

    #[test]
    fn eigenstates_do_not_move() {
        let h = chain(3);
        let spectrum = Spectrum::of(&h).unwrap();
        let psi = spectrum.vectors.column(2).to_owned();
        let rho = DensityOperator::pure(&psi).unwrap();
        let next = step(rho.matrix(), &h, 0.8, 0.05, true).unwrap();
        assert!(frobenius_norm(&(next - rho.matrix())) < 1e-12);
    }

    #[test]
    fn zero_step_is_identity() {
        let rho = random_full_rank(8, 1).unwrap();
        let next = step(rho.matrix(), &chain(3), 1.0, 0.0, false).unwrap();
        assert!(frobenius_norm(&(next - rho.matrix())) < 1e-14);
    }

    #[test]
    fn small_step_follows_the_flow() {
        let h = chain(3);
        let rho = random_full_rank(8, 2).unwrap();
        let dtau = 1e-3;
        let next = step(rho.matrix(), &h, 0.9, dtau, false).unwrap();
        let finite = (next - rho.matrix()).mapv(|z| z / dtau);
        let exact = anticommutator_rhs(rho.matrix(), &h, 0.9);
        let rel = frobenius_norm(&(finite - &exact)) / frobenius_norm(&exact);
        assert!(rel < 5e-3, "relative deviation {rel:.3e}");
    }

    #[test]
    fn trace_drift_is_second_order() {
        let h = chain(3);
        let rho = random_full_rank(8, 5).unwrap();
        let drift: Vec<f64> = [1e-2, 1e-3, 1e-4]
            .iter()
            .map(|&dt| (trace(&step(rho.matrix(), &h, 1.0, dt, false).unwrap()).re - 1.0).abs())
            .collect();
        let c = drift[0] / 1e-4;
        for (d, dt) in drift.iter().zip([1e-2, 1e-3, 1e-4]) {
            assert!(*d <= 2.0 * c * dt * dt, "drift {d:.3e} at dtau {dt}");
        }
        // log-log slope between the two smallest steps
        let slope = (drift[1] / drift[2]).log10();
        assert!((slope - 2.0).abs() < 0.1, "slope {slope}");
        let renorm = step(rho.matrix(), &h, 1.0, 1e-2, true).unwrap();
        assert!((trace(&renorm).re - 1.0).abs() < 1e-14);
    }

    #[test]
    fn oversized_step_is_refused() {
        let rho = random_full_rank(8, 3).unwrap();
        let cfg = EvolutionConfig { dtau: Some(10.0), ..Default::default() };
        assert!(evolve(&rho, &chain(3), &cfg).is_err());
    }

    #[test]
    fn converges_to_the_renyi_ensemble() {
        let h = chain(4);
        let spectrum = Spectrum::of(&h).unwrap();
        let rho0 = random_full_rank(16, 11).unwrap();
        for beta in [0.3, 1.5] {
            let cfg = EvolutionConfig { beta_r: beta, ..Default::default() };
            let (rho, trace) = evolve(&rho0, &h, &cfg).unwrap();
            assert_eq!(trace.stop, StopReason::Converged);
            let (mre, _) = mre_from_beta(&spectrum, beta, 2.0, Branch::Positive).unwrap();
            let s2 = renyi_entropy(&rho, 2.0).unwrap();
            let s2_exact = renyi_entropy(&mre, 2.0).unwrap();
            assert!((s2 - s2_exact).abs() < 1e-4, "beta {beta}: {s2} vs {s2_exact}");
            for w in trace.records.windows(2) {
                assert!(w[1].f_r <= w[0].f_r + 1e-9 * (1.0 + w[0].f_r.abs()));
            }
            assert!(trace.records.iter().all(|r| r.min_eig >= -1e-12));
            assert!(trace.records.iter().all(|r| (r.trace - 1.0).abs() < 1e-14));
            let stationary = anticommutator_rhs(rho.matrix(), &h, beta);
            assert!(frobenius_norm(&stationary) < 0.5e-8);
        }
    }

    #[test]
    fn fixed_point_stays_put() {
        let h = chain(3);
        let spectrum = Spectrum::of(&h).unwrap();
        let (mre, _) = mre_from_beta(&spectrum, 0.6, 2.0, Branch::Positive).unwrap();
        let cfg = EvolutionConfig { beta_r: 0.6, max_steps: 20, monitor_every: 1, ..Default::default() };
        let (_, trace) = evolve(&mre, &h, &cfg).unwrap();
        for w in trace.records.windows(2) {
            assert!((w[1].f_r - w[0].f_r).abs() < 1e-12);
        }
    }

    #[test]
    fn infinite_temperature_flows_to_maximally_mixed() {
        let h = chain(3);
        let rho0 = random_full_rank(8, 6).unwrap();
        let cfg = EvolutionConfig { beta_r: 0.0, ..Default::default() };
        let (rho, trace) = evolve(&rho0, &h, &cfg).unwrap();
        let s2 = renyi_entropy(&rho, 2.0).unwrap();
        assert!((s2 - 3.0 * std::f64::consts::LN_2).abs() < 1e-6, "S2 = {s2}");
        assert!(trace.records[0].f_r > trace.last().f_r);
    }

    #[test]
    fn trace_csv_has_the_expected_columns() {
        let rho0 = random_full_rank(4, 0).unwrap();
        let cfg = EvolutionConfig { max_steps: 3, monitor_every: 1, ..Default::default() };
        let (_, trace) = evolve(&rho0, &chain(2), &cfg).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &trace).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "tau,trace,min_eig,f_R,S2,energy");
        assert_eq!(text.lines().count(), 5);
    }
}
