use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use renyi::evolution::{self, EvolutionConfig, EvolutionTrace};
use renyi::exact::{
    build_ising, dos_histogram, gibbs_beta_for_energy, gibbs_state, gibbs_weights, local_observables,
    mre_from_beta, mre_from_energy, renyi_entropy, thermal_observables, write_density_csv,
    write_ensemble_csv, Boundary, DensityOperator, SpinChainSpec, Spectrum, ThermalObservables,
};
use renyi::gaussian_dos::{write_sweep_csv, GaussianDos, SweepRow};
use renyi::optimizer::{sweep, write_reports_csv, ObjectiveConfig, StopCriteria, SweepSpec};
use renyi::umps::CheckpointMeta;

use crate::config::{
    Evolve, ExactSweep, ExperimentConfig, Format, GaussianDosSweep, Method, Start, UmpsMode, UmpsOptimize,
};

#[derive(Debug, Clone, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct CellStatus {
    pub id: String,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub command: &'static str,
    pub status: &'static str,
    pub config: &'a ExperimentConfig,
    pub seed: u64,
    pub threads: usize,
    pub versions: Versions,
    pub started_unix: u64,
    pub wall_time: f64,
    pub cells: Vec<CellStatus>,
    pub files: Vec<FileEntry>,
}

#[derive(Debug, Serialize)]
pub struct Versions {
    pub renyi: &'static str,
    pub os: &'static str,
    pub arch: &'static str,
}

/// Writes `bytes` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(match path.extension() {
        Some(e) => format!("{}.tmp", e.to_string_lossy()),
        None => "tmp".into(),
    });
    {
        let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

/// Output directory plus the digest of every file written into it.
pub struct Artifacts {
    root: PathBuf,
    format: Format,
    files: Vec<FileEntry>,
}

impl Artifacts {
    pub fn new(root: &Path, format: Format) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            format,
            files: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(name);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        write_atomic(&path, bytes)?;
        self.register(name)
    }

    /// Records a file that was written by someone else.
    pub fn register(&mut self, name: &str) -> Result<()> {
        let bytes = fs::read(self.root.join(name))?;
        self.files.push(FileEntry {
            path: name.to_string(),
            bytes: bytes.len() as u64,
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        Ok(())
    }

    /// `stem.csv` through `csv`, or `stem.json` from `rows`.
    pub fn table<T: Serialize + ?Sized>(
        &mut self,
        stem: &str,
        rows: &T,
        csv: impl FnOnce(&mut Vec<u8>) -> renyi::Result<()>,
    ) -> Result<()> {
        let mut buf = Vec::new();
        match self.format {
            Format::Csv => csv(&mut buf)?,
            Format::Json => serde_json::to_writer_pretty(&mut buf, rows)?,
        }
        self.write(&format!("{stem}.{}", self.format), &buf)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }
}

fn csv_rows<T: Serialize>(rows: &[T]) -> impl FnOnce(&mut Vec<u8>) -> renyi::Result<()> + '_ {
    move |buf| {
        let mut w = csv::Writer::from_writer(buf);
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn cell<T>(id: String, r: &std::result::Result<T, String>) -> CellStatus {
    CellStatus {
        id,
        ok: r.is_ok(),
        error: r.as_ref().err().cloned(),
    }
}

/// Runs the experiment and writes every artifact plus `manifest.json`.
/// Returns the manifest cells; the run succeeded iff all are ok.
pub fn run(cfg: &ExperimentConfig, threads: usize) -> Result<Vec<CellStatus>> {
    let started = Instant::now();
    let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let mut art = Artifacts::new(&cfg.output.dir, cfg.output.format)?;
    info!("{} -> {}", cfg.method.name(), art.root().display());
    let cells = match &cfg.method {
        Method::ExactSweep(c) => exact_sweep(c, &mut art)?,
        Method::GaussianDos(c) => gaussian(c, &mut art)?,
        Method::UmpsOptimize(c) => umps(c, cfg.seed, &mut art)?,
        Method::Evolve(c) => evolve(c, cfg.seed, &mut art)?,
    };
    let failed = cells.iter().filter(|c| !c.ok).count();
    if failed > 0 {
        warn!("{failed} of {} cells failed", cells.len());
    }
    let manifest = Manifest {
        command: cfg.method.name(),
        status: if failed == 0 { "ok" } else { "partial-failure" },
        config: cfg,
        seed: cfg.seed,
        threads,
        versions: Versions {
            renyi: env!("CARGO_PKG_VERSION"),
            os: std::env::consts::OS,
            arch: std::env::consts::ARCH,
        },
        started_unix,
        wall_time: started.elapsed().as_secs_f64(),
        cells: cells.clone(),
        files: art.files.clone(),
    };
    write_atomic(&art.root.join("manifest.json"), &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(cells)
}

#[derive(Debug, Clone, Serialize)]
struct ExactRow {
    alpha: f64,
    anchor: Option<Anchor>,
    beta_r: f64,
    energy_density: f64,
    cutoff: f64,
    gibbs_beta: f64,
    s_alpha: f64,
    s2_mre: f64,
    s2_gibbs: f64,
    sz_mre: f64,
    sz_gibbs: f64,
    gamma_zz_mre: f64,
    gamma_zz_gibbs: f64,
    gamma_xx_mre: f64,
    gamma_xx_gibbs: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "lowercase")]
enum Anchor {
    Ground,
    Middle,
}

#[derive(Debug, Clone, Copy)]
enum Point {
    Beta(f64),
    Energy(f64),
    Fraction(f64, Anchor),
}

struct ExactCell {
    row: ExactRow,
    energies: Vec<f64>,
    p_gibbs: Vec<f64>,
    p_mre: Vec<f64>,
}

fn exact_cell(
    c: &ExactSweep,
    spec: &SpinChainSpec,
    spectrum: &Spectrum,
    alpha: f64,
    point: Point,
) -> renyi::Result<ExactCell> {
    let n = spec.n as f64;
    let (mre, par) = match point {
        Point::Beta(b) => mre_from_beta(spectrum, b, alpha, c.branch)?,
        Point::Energy(e) => mre_from_energy(spectrum, e * n, alpha, c.branch)?,
        Point::Fraction(f, Anchor::Ground) => mre_from_energy(spectrum, spectrum.energy_from_ground(f.abs()), alpha, c.branch)?,
        Point::Fraction(f, Anchor::Middle) => mre_from_energy(spectrum, spectrum.energy_from_middle(f), alpha, c.branch)?,
    };
    let anchor = match point {
        Point::Fraction(_, a) => Some(a),
        _ => None,
    };
    let gibbs_beta = if (par.mean_energy - spectrum.mean()).abs() <= 1e-12 * spectrum.width().max(1.0) {
        0.0
    } else {
        gibbs_beta_for_energy(spectrum, par.mean_energy)?
    };
    let gibbs = gibbs_state(spectrum, gibbs_beta)?;
    let (sz_m, _, b_m) = local_observables(&mre, spec)?.mid_chain();
    let (sz_g, _, b_g) = local_observables(&gibbs, spec)?.mid_chain();
    let p_mre = mre.spectral().map(|(_, w)| w.to_vec()).unwrap_or_default();
    Ok(ExactCell {
        row: ExactRow {
            alpha,
            anchor,
            beta_r: par.beta_alpha,
            energy_density: par.mean_energy / n,
            cutoff: par.cutoff,
            gibbs_beta,
            s_alpha: renyi_entropy(&mre, alpha)?,
            s2_mre: renyi_entropy(&mre, 2.0)?,
            s2_gibbs: renyi_entropy(&gibbs, 2.0)?,
            sz_mre: sz_m,
            sz_gibbs: sz_g,
            gamma_zz_mre: b_m.zz,
            gamma_zz_gibbs: b_g.zz,
            gamma_xx_mre: b_m.xx,
            gamma_xx_gibbs: b_g.xx,
        },
        energies: spectrum.energies.clone(),
        p_gibbs: gibbs_weights(&spectrum.energies, gibbs_beta),
        p_mre,
    })
}

fn exact_sweep(c: &ExactSweep, art: &mut Artifacts) -> Result<Vec<CellStatus>> {
    let spec = SpinChainSpec::new(c.model.n, c.model.boundary, c.model.h_x, c.model.h_z)?;
    let spectrum = Spectrum::of_spec(&spec)?;
    if let Some(bins) = c.dos_bins {
        let hist = dos_histogram(&spectrum.energies, bins)?;
        #[derive(Serialize)]
        struct Bin {
            center: f64,
            count: usize,
        }
        let rows: Vec<Bin> = hist
            .centers()
            .into_iter()
            .zip(hist.counts.iter())
            .map(|(center, &count)| Bin { center, count })
            .collect();
        art.table("dos", &rows, csv_rows(&rows))?;
    }
    let points: Vec<Point> = match (&c.beta_r, &c.energy, &c.width_fraction) {
        (Some(g), _, _) => g.0.iter().map(|&b| Point::Beta(b)).collect(),
        (_, Some(g), _) => g.0.iter().map(|&e| Point::Energy(e)).collect(),
        (_, _, Some(g)) => g
            .0
            .iter()
            .flat_map(|&f| [Point::Fraction(f, Anchor::Ground), Point::Fraction(f, Anchor::Middle)])
            .collect(),
        _ => unreachable!("validated"),
    };
    let jobs: Vec<(usize, f64, usize, Point)> = c
        .alpha
        .iter()
        .enumerate()
        .flat_map(|(ia, &a)| points.iter().enumerate().map(move |(k, &p)| (ia, a, k, p)))
        .collect();
    let results: Vec<_> = jobs
        .par_iter()
        .map(|&(_, a, _, p)| exact_cell(c, &spec, &spectrum, a, p).map_err(|e| e.to_string()))
        .collect();
    let mut cells = Vec::new();
    let mut rows = Vec::new();
    for (&(ia, a, k, p), r) in jobs.iter().zip(&results) {
        cells.push(cell(format!("alpha={a} point={p:?}"), r));
        if let Ok(ec) = r {
            rows.push(ec.row.clone());
            if c.ensembles {
                let stem = format!("ensembles/alpha{ia}_point{k:03}");
                art.table(
                    &stem,
                    &serde_json::json!({"E": ec.energies, "p_gibbs": ec.p_gibbs, "p_mre": ec.p_mre}),
                    |buf| write_ensemble_csv(buf, &ec.energies, &ec.p_gibbs, &ec.p_mre),
                )?;
            }
        }
    }
    art.table("summary", &rows, csv_rows(&rows))?;
    Ok(cells)
}

fn gaussian(c: &GaussianDosSweep, art: &mut Artifacts) -> Result<Vec<CellStatus>> {
    let mut cells = Vec::new();
    let mut rows: Vec<SweepRow> = Vec::new();
    for &n in &c.sizes {
        let dos = GaussianDos::new(c.sigma, n)?;
        for &b in &c.beta_r.0 {
            let r = dos.sweep_row(b).map_err(|e| e.to_string());
            cells.push(cell(format!("N={n} beta_R={b}"), &r));
            if let Ok(row) = r {
                rows.push(row);
            }
        }
    }
    art.table("gaussian_dos", &rows, |buf| write_sweep_csv(buf, &rows))?;
    Ok(cells)
}

fn umps(c: &UmpsOptimize, seed: u64, art: &mut Artifacts) -> Result<Vec<CellStatus>> {
    let chain = SpinChainSpec {
        n: 2,
        boundary: Boundary::Periodic,
        h_x: c.model.h_x,
        h_z: c.model.h_z,
    };
    let h = chain.two_site_term();
    let grid: Vec<ObjectiveConfig> = match c.mode {
        UmpsMode::Renyi => c.beta_r.0.iter().map(|&beta_r| ObjectiveConfig::RenyiFreeEnergy { beta_r }).collect(),
        UmpsMode::EnergyTarget => c
            .energy
            .as_ref()
            .expect("validated")
            .0
            .iter()
            .map(|&target| ObjectiveConfig::EnergyTarget { lambda: c.lambda, target })
            .collect(),
    };
    let spec = SweepSpec {
        grid,
        bonds: c.bonds.clone(),
        seeds: c.seeds.clone().unwrap_or_else(|| vec![seed]),
        d_anc: c.d_anc,
        protocol: c.protocol,
        stop: StopCriteria {
            grad_tol: c.grad_tol,
            max_iter: c.max_iter,
            memory: c.memory,
        },
    };
    let outcomes = sweep(&h, &spec);
    let mut cells = Vec::new();
    let mut reports = Vec::new();
    for (k, o) in outcomes.iter().enumerate() {
        let label = match o.config {
            ObjectiveConfig::RenyiFreeEnergy { beta_r } => format!("beta_R={beta_r}"),
            ObjectiveConfig::EnergyTarget { target, .. } => format!("E={target}"),
        };
        let status = match &o.result {
            Ok((_, r)) if !r.converged => Err(format!(
                "not converged: gradient norm {:.3e} after {} iterations",
                r.grad_norm, r.iterations
            )),
            Ok(_) => Ok(()),
            Err(e) => Err(e.clone()),
        };
        cells.push(cell(format!("D={} seed={} {label}", o.bond, o.seed), &status));
        if let Ok((state, report)) = &o.result {
            if c.checkpoints {
                let name = format!("checkpoints/D{}_seed{}_{k:04}.json", o.bond, o.seed);
                let path = art.root().join(&name);
                fs::create_dir_all(path.parent().expect("has parent"))?;
                state.save(
                    &path,
                    CheckpointMeta {
                        seed: Some(o.seed),
                        beta_r: report.beta_r,
                        target_energy: report.target_energy,
                        iterations: Some(report.iterations),
                    },
                )?;
                art.register(&name)?;
            }
            reports.push(report.clone());
        }
    }
    art.table("reports", &reports, |buf| write_reports_csv(buf, &reports))?;
    if let (Some(n), UmpsMode::Renyi) = (c.reference_sites, c.mode) {
        let ring = SpinChainSpec::new(n, Boundary::Periodic, c.model.h_x, c.model.h_z)?;
        let rows: Vec<ThermalObservables> = c
            .beta_r
            .0
            .iter()
            .map(|&b| thermal_observables(&ring, b))
            .collect::<renyi::Result<_>>()?;
        art.table("reference", &rows, csv_rows(&rows))?;
    }
    Ok(cells)
}

#[derive(Debug, Clone, Serialize)]
struct EvolveRow {
    beta_r: f64,
    stop: String,
    steps: usize,
    tau: f64,
    halvings: usize,
    final_dtau: f64,
    renormalize: bool,
    energy: f64,
    s2: f64,
    s2_exact: f64,
    f_r: f64,
}

fn evolve(c: &Evolve, seed: u64, art: &mut Artifacts) -> Result<Vec<CellStatus>> {
    let spec = SpinChainSpec::new(c.model.n, c.model.boundary, c.model.h_x, c.model.h_z)?;
    let h = build_ising(&spec)?;
    let spectrum = Spectrum::of(&h)?;
    let dim = spec.dim();
    let rho0 = match c.start {
        Start::Random => evolution::random_full_rank_real(dim, seed)?,
        Start::RandomComplex => evolution::random_full_rank(dim, seed)?,
        Start::MaximallyMixed => DensityOperator::maximally_mixed(dim),
    };
    let base = EvolutionConfig {
        beta_r: 0.0,
        dtau: c.dtau,
        max_steps: c.max_steps,
        renormalize: c.renormalize,
        monitor_every: c.monitor_every,
        rate_tol: c.rate_tol,
        stationarity_tol: c.stationarity_tol,
    };
    let results = evolution::evolve_grid(&rho0, &h, &c.beta_r.0, &base);
    let mut cells = Vec::new();
    let mut rows = Vec::new();
    for (k, (&b, r)) in c.beta_r.0.iter().zip(results).enumerate() {
        let (state, trace, status): (Option<DensityOperator>, Option<EvolutionTrace>, _) = match r {
            Ok((s, t)) if t.stop == evolution::StopReason::Converged => (Some(s), Some(t), Ok(())),
            Ok((s, t)) => (Some(s), Some(t), Err(format!("stopped after {} steps without converging", c.max_steps))),
            Err(renyi::Error::PositivityLost { tau, min_eig, trace }) => (
                None,
                Some(*trace),
                Err(format!("positivity lost at tau = {tau}: min eigenvalue {min_eig:.3e}")),
            ),
            Err(e) => (None, None, Err(e.to_string())),
        };
        cells.push(cell(format!("beta_R={b}"), &status));
        if let Some(t) = &trace {
            art.table(&format!("traces/beta{k:02}"), t, |buf| evolution::write_trace_csv(buf, t))?;
        }
        if let (Some(s), Some(t)) = (&state, &trace) {
            let (mre, _) = mre_from_beta(&spectrum, b, 2.0, renyi::exact::Branch::Positive)?;
            let last = t.last();
            rows.push(EvolveRow {
                beta_r: b,
                stop: format!("{:?}", t.stop).to_lowercase(),
                steps: t.steps,
                tau: last.tau,
                halvings: t.halvings,
                final_dtau: t.final_dtau,
                renormalize: t.renormalize,
                energy: last.energy,
                s2: renyi_entropy(s, 2.0)?,
                s2_exact: renyi_entropy(&mre, 2.0)?,
                f_r: last.f_r,
            });
            if c.states {
                let m = s.matrix();
                art.table(&format!("states/beta{k:02}"), &m.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>(), |buf| {
                    write_density_csv(buf, s)
                })?;
            }
        }
    }
    art.table("summary", &rows, csv_rows(&rows))?;
    Ok(cells)
}
