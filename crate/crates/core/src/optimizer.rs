//! Minimization of per-site objectives of a uniform-MPS purification over
//! the Grassmann manifold of left-gauged isometries, by Riemannian l-BFGS
//! with a strong-Wolfe line search along geodesics.
//!
//! Gradients follow the metric `<X, Y> = Re tr(X^dagger Y)`, so the
//! Riemannian gradient of a real `f` is `2 P(df/d conj(A))`.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grassmann::{inner, project, retract_with_transport, Isometry, Tangent};
use crate::linalg::CMat;
use crate::umps::{
    energy_environments, grad_energy, grad_purity, local_observables_umps, purity_per_site_warm,
    PurificationMPS, PurityFixedPoints,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveConfig {
    /// `eps + log(eta) / beta_R`. At `beta_R = 0` the objective becomes
    /// `log eta`, the limit of `beta_R f`.
    RenyiFreeEnergy { beta_r: f64 },
    /// `eta + (lambda^2 / 2) (eps - target)^2`.
    EnergyTarget { lambda: f64, target: f64 },
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::RenyiFreeEnergy { beta_r } if !(beta_r >= 0.0 && beta_r.is_finite()) => Err(
                Error::InvalidArgument(format!("beta_R must be finite and >= 0, got {beta_r}")),
            ),
            Self::EnergyTarget { lambda, target } if !(lambda > 0.0 && lambda.is_finite() && target.is_finite()) => {
                Err(Error::InvalidArgument(format!(
                    "energy targeting needs lambda > 0 and a finite target, got ({lambda}, {target})"
                )))
            }
            _ => Ok(()),
        }
    }

    fn value(&self, energy: f64, eta: f64) -> f64 {
        match *self {
            Self::RenyiFreeEnergy { beta_r } if beta_r == 0.0 => eta.ln(),
            Self::RenyiFreeEnergy { beta_r } => energy + eta.ln() / beta_r,
            Self::EnergyTarget { lambda, target } => eta + 0.5 * lambda * lambda * (energy - target).powi(2),
        }
    }

    /// Weights `(w_eps, w_eta)` of the two Euclidean gradients.
    fn weights(&self, energy: f64, eta: f64) -> (f64, f64) {
        match *self {
            Self::RenyiFreeEnergy { beta_r } if beta_r == 0.0 => (0.0, 1.0 / eta),
            Self::RenyiFreeEnergy { beta_r } => (1.0, 1.0 / (beta_r * eta)),
            Self::EnergyTarget { lambda, target } => (lambda * lambda * (energy - target), 1.0),
        }
    }

    pub fn beta_r(&self) -> Option<f64> {
        match *self {
            Self::RenyiFreeEnergy { beta_r } => Some(beta_r),
            _ => None,
        }
    }

    pub fn target(&self) -> Option<f64> {
        match *self {
            Self::EnergyTarget { target, .. } => Some(target),
            _ => None,
        }
    }
}

/// Objective, gradient and the fixed points they were built from.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub state: PurificationMPS,
    pub value: f64,
    pub energy: f64,
    pub eta: f64,
    pub grad: Tangent,
    purity: PurityFixedPoints,
}

impl Evaluation {
    pub fn base(&self) -> &Arc<Isometry> {
        &self.grad.base
    }

    pub fn grad_norm(&self) -> f64 {
        self.grad.norm()
    }
}

fn check_h(state: &PurificationMPS, h: &CMat) -> Result<()> {
    let n = state.d_sys * state.d_sys;
    if h.dim() != (n, n) {
        return Err(Error::Shape(format!("two-site term must be {n}x{n}, got {:?}", h.dim())));
    }
    Ok(())
}

fn evaluate_at(
    state: PurificationMPS,
    base: Arc<Isometry>,
    h: &CMat,
    cfg: &ObjectiveConfig,
    warm: Option<&PurityFixedPoints>,
) -> Result<Evaluation> {
    let purity = purity_per_site_warm(&state, warm)?;
    let eta = purity.eta;
    if !(eta > 0.0) {
        return Err(Error::InvalidArgument(format!("purity per site {eta} is not positive")));
    }
    let envs = energy_environments(&state, h)?;
    let energy = envs.energy;
    let (w_eps, w_eta) = cfg.weights(energy, eta);
    let mut g = grad_purity(&state, &purity)?.mapv(|z| z * (2.0 * w_eta));
    if w_eps != 0.0 {
        g = g + grad_energy(&state, h, &envs)?.mapv(|z| z * (2.0 * w_eps));
    }
    let grad = project(&base, &g)?;
    Ok(Evaluation {
        value: cfg.value(energy, eta),
        state,
        energy,
        eta,
        grad,
        purity,
    })
}

pub fn evaluate(state: &PurificationMPS, h: &CMat, cfg: &ObjectiveConfig) -> Result<Evaluation> {
    cfg.validate()?;
    check_h(state, h)?;
    let base = Arc::new(Isometry::new(state.isometry().clone())?);
    evaluate_at(state.clone(), base, h, cfg, None)
}

pub fn objective(state: &PurificationMPS, h: &CMat, cfg: &ObjectiveConfig) -> Result<f64> {
    cfg.validate()?;
    check_h(state, h)?;
    let eta = crate::umps::purity_per_site(state)?.eta;
    if !(eta > 0.0) {
        return Err(Error::InvalidArgument(format!("purity per site {eta} is not positive")));
    }
    Ok(cfg.value(crate::umps::energy_density(state, h)?, eta))
}

pub fn gradient(state: &PurificationMPS, h: &CMat, cfg: &ObjectiveConfig) -> Result<Tangent> {
    Ok(evaluate(state, h, cfg)?.grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StopCriteria {
    pub grad_tol: f64,
    pub max_iter: usize,
    pub memory: usize,
}

impl Default for StopCriteria {
    fn default() -> Self {
        Self {
            grad_tol: 1e-6,
            max_iter: 5000,
            memory: 10,
        }
    }
}

const C1: f64 = 1e-4;
const C2: f64 = 0.9;
const MAX_BISECTIONS: usize = 40;
const MAX_EXPANSIONS: usize = 20;
/// Slack on the sufficient-decrease test near the noise floor of `f`.
const VALUE_SLACK: f64 = 1e-12;
/// Largest geodesic length `t |p|` tried in one step.
const MAX_ROTATION: f64 = 1.0;

/// Point reached by a trial step, with the search direction and l-BFGS
/// history transported along.
struct Trial {
    eval: Evaluation,
    slope: f64,
    dir: Tangent,
    carried: Vec<Tangent>,
}

struct LineSearch<'a> {
    h: &'a CMat,
    cfg: &'a ObjectiveConfig,
    start: &'a Evaluation,
    dir: &'a Tangent,
    carry: Vec<&'a Tangent>,
    evaluations: usize,
}

impl LineSearch<'_> {
    fn at(&mut self, t: f64) -> Result<Trial> {
        self.evaluations += 1;
        let mut carry = vec![self.dir];
        carry.extend(self.carry.iter().copied());
        let (base, mut moved) = retract_with_transport(self.dir, t, &carry)?;
        let start = &self.start.state;
        let state = PurificationMPS::from_isometry(
            base.matrix().clone(),
            start.d_sys,
            start.d_anc,
            Some(start.right_fixed_point()),
        )?;
        let eval = evaluate_at(state, base, self.h, self.cfg, Some(&self.start.purity))?;
        let dir_t = moved.remove(0);
        let slope = inner(&eval.grad, &dir_t)?;
        Ok(Trial {
            eval,
            slope,
            dir: dir_t,
            carried: moved,
        })
    }

    fn armijo(&self, t: f64, trial: &Trial, d0: f64) -> bool {
        let f0 = self.start.value;
        trial.eval.value <= f0 + C1 * t * d0
            || (trial.eval.value <= f0 + VALUE_SLACK * (1.0 + f0.abs()) && trial.slope <= (1.0 - 2.0 * C1) * d0)
    }

    fn curvature(&self, trial: &Trial, d0: f64) -> bool {
        trial.slope.abs() <= -C2 * d0
    }

    /// Strong-Wolfe step by bracketing then bisection.
    fn run(&mut self, t_init: f64, t_max: f64) -> Result<Option<(f64, Trial)>> {
        let d0 = inner(&self.start.grad, self.dir)?;
        let f0 = self.start.value;
        let (mut t_prev, mut f_prev) = (0.0, f0);
        let mut t = t_init.min(t_max);
        let mut best: Option<(f64, Trial)> = None;
        for i in 0..MAX_EXPANSIONS {
            let trial = self.at(t)?;
            if !self.armijo(t, &trial, d0) || (i > 0 && trial.eval.value >= f_prev) {
                return self.zoom(t_prev, t, d0, best);
            }
            if self.curvature(&trial, d0) {
                return Ok(Some((t, trial)));
            }
            if trial.slope >= 0.0 {
                return self.zoom(t, t_prev, d0, Some((t, trial)));
            }
            f_prev = trial.eval.value;
            t_prev = t;
            best = Some((t, trial));
            if t >= t_max {
                return Ok(best);
            }
            t = (2.0 * t).min(t_max);
        }
        Ok(best)
    }

    /// `lo` satisfies sufficient decrease (or is 0); `hi` brackets.
    fn zoom(&mut self, mut lo: f64, mut hi: f64, d0: f64, mut best: Option<(f64, Trial)>) -> Result<Option<(f64, Trial)>> {
        let mut f_lo = best.as_ref().map_or(self.start.value, |(_, b)| b.eval.value);
        for _ in 0..MAX_BISECTIONS {
            let t = 0.5 * (lo + hi);
            let trial = self.at(t)?;
            if !self.armijo(t, &trial, d0) || trial.eval.value >= f_lo {
                hi = t;
                continue;
            }
            if self.curvature(&trial, d0) {
                return Ok(Some((t, trial)));
            }
            if trial.slope * (hi - lo) >= 0.0 {
                hi = lo;
            }
            lo = t;
            f_lo = trial.eval.value;
            best = Some((t, trial));
        }
        // a sufficient-decrease point is still a valid step
        Ok(best)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartProtocol {
    Warm,
    Cold,
}

/// Summary of one optimized purification.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub beta_r: Option<f64>,
    pub target_energy: Option<f64>,
    pub bond: usize,
    pub seed: Option<u64>,
    pub protocol: Option<StartProtocol>,
    pub energy: f64,
    pub eta: f64,
    pub s2_density: f64,
    pub sz: f64,
    pub sx: f64,
    pub gamma_zz: f64,
    pub gamma_xx: f64,
    pub objective: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub line_search_failed: bool,
    pub wall_time: f64,
    /// Objective after every accepted step, starting at the initial point.
    pub history: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Pair {
    s: Tangent,
    y: Tangent,
    rho: f64,
}

fn two_loop(g: &Tangent, memory: &[Pair]) -> Result<Tangent> {
    let mut q = g.clone();
    let mut alphas = vec![0.0; memory.len()];
    for (k, pr) in memory.iter().enumerate().rev() {
        alphas[k] = pr.rho * inner(&pr.s, &q)?;
        q = q.axpy(-alphas[k], &pr.y)?;
    }
    let gamma = match memory.last() {
        Some(pr) => inner(&pr.s, &pr.y)? / inner(&pr.y, &pr.y)?,
        None => 1.0,
    };
    let mut r = q.scaled(gamma);
    for (k, pr) in memory.iter().enumerate() {
        let beta = pr.rho * inner(&pr.y, &r)?;
        r = r.axpy(alphas[k] - beta, &pr.s)?;
    }
    Ok(r.scaled(-1.0))
}

/// Riemannian l-BFGS from `start`. Returns the last accepted point; the
/// report flags non-convergence and line-search failure instead of
/// failing.
pub fn minimize(
    start: &PurificationMPS,
    h: &CMat,
    cfg: &ObjectiveConfig,
    stop: &StopCriteria,
) -> Result<(PurificationMPS, EnsembleReport)> {
    let clock = Instant::now();
    let mut cur = evaluate(start, h, cfg)?;
    let mut history = vec![cur.value];
    let mut memory: Vec<Pair> = Vec::new();
    let mut iterations = 0;
    let mut evaluations = 1;
    let mut failed = false;

    while cur.grad_norm() >= stop.grad_tol && iterations < stop.max_iter {
        let g = cur.grad.clone();
        let mut dir = two_loop(&g, &memory)?;
        if !(inner(&g, &dir)? < 0.0) {
            memory.clear();
            dir = g.scaled(-1.0);
        }
        let pn = dir.norm();
        let t_max = MAX_ROTATION / pn;
        let t_init = if memory.is_empty() { (0.1 / pn).min(t_max) } else { 1.0f64.min(t_max) };

        let mut carry: Vec<&Tangent> = vec![&g];
        for pr in &memory {
            carry.push(&pr.s);
            carry.push(&pr.y);
        }
        let mut ls = LineSearch {
            h,
            cfg,
            start: &cur,
            dir: &dir,
            carry,
            evaluations: 0,
        };
        let found = ls.run(t_init, t_max)?;
        evaluations += ls.evaluations;
        let Some((t, trial)) = found else {
            if memory.is_empty() {
                failed = true;
                break;
            }
            // retry once from steepest descent
            memory.clear();
            continue;
        };
        let mut carried = trial.carried.into_iter();
        let g_old = carried.next().expect("gradient carried");
        let mut moved: Vec<Pair> = Vec::with_capacity(memory.len());
        for pr in &memory {
            let s = carried.next().expect("s carried");
            let y = carried.next().expect("y carried");
            moved.push(Pair { s, y, rho: pr.rho });
        }
        // the step itself, transported: t * dir(t)
        let new = trial.eval;
        let base = new.base().clone();
        let step = Tangent::from_coordinates(&base, trial.dir.z.mapv(|z| z * t))?;
        let y = new.grad.axpy(-1.0, &Tangent::from_coordinates(&base, g_old.z)?)?;
        let sy = inner(&step, &y)?;
        memory = moved
            .into_iter()
            .map(|pr| -> Result<Pair> {
                Ok(Pair {
                    s: Tangent::from_coordinates(&base, pr.s.z)?,
                    y: Tangent::from_coordinates(&base, pr.y.z)?,
                    rho: pr.rho,
                })
            })
            .collect::<Result<_>>()?;
        if sy > 1e-14 * step.norm() * y.norm() {
            memory.push(Pair { s: step, y, rho: 1.0 / sy });
            if memory.len() > stop.memory {
                memory.remove(0);
            }
        }
        cur = new;
        history.push(cur.value);
        iterations += 1;
    }

    let converged = cur.grad_norm() < stop.grad_tol;
    let obs = local_observables_umps(&cur.state)?;
    let report = EnsembleReport {
        beta_r: cfg.beta_r(),
        target_energy: cfg.target(),
        bond: cur.state.bond,
        seed: None,
        protocol: None,
        energy: cur.energy,
        eta: cur.eta,
        s2_density: -cur.eta.ln(),
        sz: obs.sz,
        sx: obs.sx,
        gamma_zz: obs.gamma_zz,
        gamma_xx: obs.gamma_xx,
        objective: cur.value,
        grad_norm: cur.grad_norm(),
        iterations,
        evaluations,
        converged,
        line_search_failed: failed,
        wall_time: clock.elapsed().as_secs_f64(),
        history,
    };
    if !converged {
        log::warn!(
            "minimize stopped after {iterations} iterations with gradient norm {:.3e}",
            report.grad_norm
        );
    }
    Ok((cur.state, report))
}

/// Independent runs over a grid of objectives, bond dimensions and seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSpec {
    pub grid: Vec<ObjectiveConfig>,
    pub bonds: Vec<usize>,
    pub seeds: Vec<u64>,
    pub d_anc: usize,
    pub protocol: StartProtocol,
    pub stop: StopCriteria,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub config: ObjectiveConfig,
    pub bond: usize,
    pub seed: u64,
    pub result: std::result::Result<(PurificationMPS, EnsembleReport), String>,
}

/// Each `(D, seed)` cell walks the grid in order; with the warm protocol a
/// grid point starts from the previous optimum. Cells run in parallel on
/// the ambient rayon pool. Failures are recorded and the walk continues
/// from a fresh start.
pub fn sweep(h: &CMat, spec: &SweepSpec) -> Vec<SweepOutcome> {
    let cells: Vec<(usize, u64)> = spec
        .bonds
        .iter()
        .flat_map(|&b| spec.seeds.iter().map(move |&s| (b, s)))
        .collect();
    let d_sys = (h.nrows() as f64).sqrt().round() as usize;
    cells
        .par_iter()
        .flat_map_iter(|&(bond, seed)| {
            let mut prev: Option<PurificationMPS> = None;
            let mut out = Vec::with_capacity(spec.grid.len());
            for cfg in &spec.grid {
                let start = match (&prev, spec.protocol) {
                    (Some(p), StartProtocol::Warm) => Ok(p.clone()),
                    _ => PurificationMPS::random(bond, d_sys, spec.d_anc, seed),
                };
                let result = start
                    .and_then(|s| minimize(&s, h, cfg, &spec.stop))
                    .map(|(state, mut report)| {
                        report.seed = Some(seed);
                        report.protocol = Some(spec.protocol);
                        (state, report)
                    })
                    .map_err(|e| e.to_string());
                prev = result.as_ref().ok().map(|(s, _)| s.clone());
                out.push(SweepOutcome {
                    config: *cfg,
                    bond,
                    seed,
                    result,
                });
            }
            out
        })
        .collect()
}

pub const REPORT_HEADER: [&str; 16] = [
    "beta_R",
    "E_target",
    "D",
    "seed",
    "protocol",
    "energy",
    "eta",
    "S2_per_site",
    "sz",
    "gamma_zz",
    "gamma_xx",
    "grad_norm",
    "iterations",
    "converged",
    "wall_time",
    "objective",
];

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.17e}")).unwrap_or_default()
}

pub fn write_reports_csv<W: Write>(out: W, reports: &[EnsembleReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_HEADER)?;
    for r in reports {
        w.write_record([
            opt(r.beta_r),
            opt(r.target_energy),
            r.bond.to_string(),
            r.seed.map(|s| s.to_string()).unwrap_or_default(),
            match r.protocol {
                Some(StartProtocol::Warm) => "warm".into(),
                Some(StartProtocol::Cold) => "cold".into(),
                None => String::new(),
            },
            format!("{:.17e}", r.energy),
            format!("{:.17e}", r.eta),
            format!("{:.17e}", r.s2_density),
            format!("{:.17e}", r.sz),
            format!("{:.17e}", r.gamma_zz),
            format!("{:.17e}", r.gamma_xx),
            format!("{:.6e}", r.grad_norm),
            r.iterations.to_string(),
            r.converged.to_string(),
            format!("{:.3}", r.wall_time),
            format!("{:.17e}", r.objective),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{Boundary, SpinChainSpec};
    use crate::linalg::{isometry_defect, C64};
    use crate::umps::tests::random_tangent;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ising(hx: f64, hz: f64) -> CMat {
        SpinChainSpec::new(4, Boundary::Periodic, hx, hz).unwrap().two_site_term()
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(ObjectiveConfig::RenyiFreeEnergy { beta_r: -1.0 }.validate().is_err());
        assert!(ObjectiveConfig::EnergyTarget { lambda: 0.0, target: 0.0 }.validate().is_err());
        let json = r#"{"mode":"renyi_free_energy","beta_r":1.0,"lambda":2.0}"#;
        assert!(serde_json::from_str::<ObjectiveConfig>(json).is_err());
    }

    #[test]
    fn product_state_objective_closed_form() {
        // D = 1, A^{(s,a)} = M_{sa}: rho = M M^dagger on every site,
        // eps = <h> in rho (x) rho, eta = tr rho^2.
        let mut w = CMat::zeros((4, 1));
        w[[0, 0]] = C64::new(0.8, 0.0);
        w[[3, 0]] = C64::new(0.0, 0.6);
        let m = PurificationMPS::from_isometry(w, 2, 2, None).unwrap();
        let h = ising(0.5, -1.05);
        // rho = diag(0.64, 0.36): <Z> = 0.28, <X> = 0, so only the field acts
        let eps = 1.05 * 0.28;
        let eta: f64 = 0.64 * 0.64 + 0.36 * 0.36;
        let cfg = ObjectiveConfig::RenyiFreeEnergy { beta_r: 1.0 };
        let f = objective(&m, &h, &cfg).unwrap();
        assert!((f - (eps + eta.ln())).abs() < 1e-12, "{f}");
    }

    #[test]
    fn gradient_is_tangent_and_matches_differences() {
        let h = ising(0.5, -1.05);
        for cfg in [
            ObjectiveConfig::RenyiFreeEnergy { beta_r: 0.7 },
            ObjectiveConfig::EnergyTarget { lambda: 3.0, target: -0.4 },
        ] {
            let m = PurificationMPS::random(3, 2, 2, 17).unwrap();
            let ev = evaluate(&m, &h, &cfg).unwrap();
            let wdg = crate::linalg::dagger(m.isometry()).dot(&ev.grad.embedded());
            assert!(wdg.iter().all(|z| z.norm() < 1e-12));
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            for _ in 0..20 {
                let dir = random_tangent(ev.base(), &mut rng);
                let an = inner(&ev.grad, &dir).unwrap();
                let f = |t: f64| {
                    let w = crate::grassmann::retract(&dir, t).unwrap();
                    let p = PurificationMPS::from_isometry(w.matrix().clone(), 2, 2, None).unwrap();
                    objective(&p, &h, &cfg).unwrap()
                };
                let hstep = 1e-5;
                let fd = (f(hstep) - f(-hstep)) / (2.0 * hstep);
                assert!((an - fd).abs() < 1e-6 * an.abs().max(1e-2), "{an} vs {fd}");
            }
        }
    }

    #[test]
    fn entropic_limit_is_maximally_mixed() {
        let h = ising(0.5, -1.05);
        let m = PurificationMPS::maximally_mixed(2).unwrap();
        let cfg = ObjectiveConfig::RenyiFreeEnergy { beta_r: 0.0 };
        let ev = evaluate(&m, &h, &cfg).unwrap();
        assert!(ev.grad_norm() < 1e-6);
        let start = PurificationMPS::random(2, 2, 2, 3).unwrap();
        let (state, report) = minimize(&start, &h, &cfg, &StopCriteria::default()).unwrap();
        assert!(report.converged, "{report:?}");
        assert!((report.eta - 0.5).abs() < 1e-9);
        assert!(report.energy.abs() < 1e-4);
        assert!(isometry_defect(state.isometry()) < 1e-10);
    }

    #[test]
    fn descent_and_isometry_along_the_run() {
        let h = ising(0.0, 1.5);
        let cfg = ObjectiveConfig::RenyiFreeEnergy { beta_r: 1.0 };
        let start = PurificationMPS::random(2, 2, 2, 5).unwrap();
        let (state, report) = minimize(&start, &h, &cfg, &StopCriteria::default()).unwrap();
        assert!(report.converged, "{report:?}");
        for w in report.history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * (1.0 + w[0].abs()), "{} -> {}", w[0], w[1]);
        }
        assert!(isometry_defect(state.isometry()) < 1e-10);
        let again = evaluate(&state, &h, &cfg).unwrap();
        assert!((again.value - report.objective).abs() < 1e-10);
    }

    #[test]
    fn energy_target_is_met() {
        let h = ising(0.5, -1.05);
        let cfg = ObjectiveConfig::EnergyTarget { lambda: 10.0, target: -0.5 };
        let start = PurificationMPS::random(2, 2, 2, 7).unwrap();
        let (_, report) = minimize(&start, &h, &cfg, &StopCriteria::default()).unwrap();
        assert!(report.converged);
        assert!((report.energy + 0.5).abs() <= 5.0 / 100.0, "{}", report.energy);
    }

    #[test]
    fn one_point_sweep_equals_minimize() {
        let h = ising(0.0, 1.5);
        let cfg = ObjectiveConfig::RenyiFreeEnergy { beta_r: 0.5 };
        let spec = SweepSpec {
            grid: vec![cfg],
            bonds: vec![2],
            seeds: vec![9],
            d_anc: 2,
            protocol: StartProtocol::Warm,
            stop: StopCriteria::default(),
        };
        let out = sweep(&h, &spec);
        let (_, r) = out[0].result.as_ref().unwrap();
        let start = PurificationMPS::random(2, 2, 2, 9).unwrap();
        let (_, direct) = minimize(&start, &h, &cfg, &spec.stop).unwrap();
        assert_eq!(r.objective, direct.objective);
        assert_eq!(r.iterations, direct.iterations);
    }

    #[test]
    fn report_csv_header() {
        let mut buf = Vec::new();
        write_reports_csv(&mut buf, &[]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.trim(), REPORT_HEADER.join(","));
    }
}
