//! The four CLI commands. Each reads a [`RunConfig`], writes its files
//! into an output directory and reports failures through [`CliError`],
//! which maps onto exit codes (1 validation, 2 numerical guard).
//!
//! Probe rules when thresholds are not configured:
//! - rings probe the antipodal site; squares probe the 3×3 block around
//!   the start site reflected through the beam centre; the dimer probes
//!   the other site.
//! - `eps_destructive` is 1e-6 for linear phase-only ring runs and 5e-3
//!   otherwise.
//! - `theta_constructive` is `2/N` on rings and the dimer; on squares it
//!   is twice the initial mean density of the annulus
//!   `|r - r_start| <= 1.5a` around the beam centre. A threshold at or
//!   below `eps_destructive` is lifted just above it.

use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::config::{HoppingConfig, RunConfig, Setup};
use crate::dynamics::{evolve_gpe, evolve_linear, Diagnostics, EvolveParams, SpectralPropagator, Trajectory};
use crate::error::Error;
use crate::gauge::{flux_map, FieldKind, FluxMap};
use crate::lattice::{Lattice, LatticeKind};
use crate::observables::{annulus_threshold, charge_density, interference_verdict, opposite_site_series, probe_region_series, spin_density, InterferenceMetrics, Verdict};
use crate::output::{auto_scale, fmt_num, heatmap_ppm, write_json, Csv, Panel};

/// Worker-count environment variable for `sweep`.
pub const WORKERS_ENV: &str = "SOLENOID_WORKERS";

/// Oracle agreement required by `oracle-check`.
pub const ORACLE_TOLERANCE: f64 = 1e-8;

/// Drift bounds reported in manifests.
pub const NORM_DRIFT_BOUND: f64 = 1e-8;
pub const ENERGY_DRIFT_BOUND: f64 = 1e-7;

/// `E_R / ħ` for the reference experiment, in rad/s (2π × 900 Hz).
pub const RECOIL_ANGULAR_FREQUENCY: f64 = 2.0 * std::f64::consts::PI * 900.0;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Model(#[from] Error),
    #[error("cannot read config {path}: {source}")]
    ReadConfig { path: PathBuf, source: io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: io::Error },
    #[error("oracle mismatch: max amplitude error {error:.3e} exceeds {tolerance:e}")]
    OracleMismatch { error: f64, tolerance: f64 },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Model(e) if e.is_numerical() => 2,
            CliError::OracleMismatch { .. } => 2,
            _ => 1,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn invalid(param: &'static str, reason: impl Into<String>) -> CliError {
    CliError::Model(Error::InvalidParameter {
        module: "cli_io",
        param,
        reason: reason.into(),
    })
}

pub fn load_config(path: &Path) -> CliResult<RunConfig> {
    let text = fs::read_to_string(path).map_err(|source| CliError::ReadConfig {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(RunConfig::from_json(&text)?)
}

/// Collects output files and records their names for the manifest.
struct OutDir {
    root: PathBuf,
    files: BTreeSet<String>,
}

impl OutDir {
    fn create(root: &Path) -> CliResult<Self> {
        fs::create_dir_all(root).map_err(|source| CliError::Write {
            path: root.to_path_buf(),
            source,
        })?;
        Ok(OutDir {
            root: root.to_path_buf(),
            files: BTreeSet::new(),
        })
    }

    fn write_with(&mut self, name: &str, f: impl FnOnce(&Path) -> io::Result<()>) -> CliResult<()> {
        let path = self.root.join(name);
        f(&path).map_err(|source| CliError::Write { path, source })?;
        self.files.insert(name.to_string());
        Ok(())
    }

    fn csv(&mut self, name: &str, csv: &Csv) -> CliResult<()> {
        self.write_with(name, |p| csv.write(p))
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        self.write_with(name, |p| write_json(p, value))
    }

    fn bytes(&mut self, name: &str, data: &[u8]) -> CliResult<()> {
        self.write_with(name, |p| fs::write(p, data))
    }
}

#[derive(Debug, Clone, Serialize)]
struct Units {
    energy: &'static str,
    time: &'static str,
    recoil_angular_frequency_rad_per_s: f64,
    time_unit_seconds: f64,
}

fn units() -> Units {
    Units {
        energy: "E_R",
        time: "hbar/E_R",
        recoil_angular_frequency_rad_per_s: RECOIL_ANGULAR_FREQUENCY,
        time_unit_seconds: 1.0 / RECOIL_ANGULAR_FREQUENCY,
    }
}

// ---------------------------------------------------------------- fluxmap

#[derive(Debug, Clone, Serialize)]
pub struct BlockSum {
    /// Side of the site block centred on the beam.
    pub sites: usize,
    pub flux_sum: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FluxSummary {
    pub rows: usize,
    pub cols: usize,
    pub centre_cell: [usize; 2],
    pub centre_cell_phase: f64,
    pub centre_blocks: Vec<BlockSum>,
    pub far_radius: f64,
    pub max_far_flux: f64,
    pub hermiticity_error: f64,
}

/// Plaquette fluxes over `k×k` site blocks centred on the central cell,
/// for even `k` up to `max_sites`.
pub fn centre_block_sums(map: &FluxMap, centre: (usize, usize), max_sites: usize) -> Vec<BlockSum> {
    let (cr, cc) = centre;
    (2..=max_sites)
        .step_by(2)
        .filter_map(|k| {
            let half = k / 2 - 1;
            if cr < half || cc < half || cr + half >= map.rows || cc + half >= map.cols {
                return None;
            }
            Some(BlockSum {
                sites: k,
                flux_sum: map.block_sum(cr - half..cr + half + 1, cc - half..cc + half + 1),
            })
        })
        .collect()
}

/// Largest `|flux|` over plaquettes whose centre is farther than `radius`
/// from the beam axis.
pub fn max_far_flux(map: &FluxMap, lattice: &Lattice, radius: f64) -> f64 {
    lattice
        .plaquettes()
        .iter()
        .zip(&map.flux)
        .filter(|(p, _)| (lattice.plaquette_center(p) - lattice.beam_center()).norm() > radius)
        .map(|(_, f)| f.abs())
        .fold(0.0, f64::max)
}

pub fn flux_summary(cfg: &RunConfig) -> CliResult<(Lattice, FluxMap, FluxSummary)> {
    let lattice = cfg.build_lattice()?;
    if !matches!(lattice.kind(), LatticeKind::Square { .. }) {
        return Err(CliError::Model(Error::Unsupported {
            module: "cli_io",
            reason: "fluxmap needs a square lattice (rings have no plaquettes)".into(),
        }));
    }
    let h = cfg.build_abelian_hopping(&lattice)?;
    let map = flux_map(&h, &lattice)?;
    let centre = lattice.central_plaquette().expect("square lattice has plaquettes");
    let centre_cell_phase = map.loops.iter().find(|(n, _)| n == "centre_cell").map_or(0.0, |(_, v)| *v);
    let a = lattice.lattice_constant();
    let summary = FluxSummary {
        rows: map.rows,
        cols: map.cols,
        centre_cell: [centre.row, centre.col],
        centre_cell_phase,
        centre_blocks: centre_block_sums(&map, (centre.row, centre.col), 6),
        far_radius: 3.0 * a,
        max_far_flux: max_far_flux(&map, &lattice, 3.0 * a),
        hermiticity_error: h.hermiticity_error(),
    };
    Ok((lattice, map, summary))
}

pub fn cmd_fluxmap(cfg: &RunConfig, out: &Path) -> CliResult<FluxSummary> {
    let (lattice, map, summary) = flux_summary(cfg)?;
    let mut dir = OutDir::create(out)?;
    let mut csv = Csv::new(&["row", "col", "x", "y", "flux"]);
    for (p, f) in lattice.plaquettes().iter().zip(&map.flux) {
        let c = lattice.plaquette_center(p);
        csv.row([p.row as f64, p.col as f64, c.x, c.y, *f]);
    }
    dir.csv("fluxmap.csv", &csv)?;
    if cfg.outputs.images {
        let img = heatmap_ppm(&[Panel { rows: map.rows, cols: map.cols, values: &map.flux }], auto_scale(map.rows, map.cols));
        dir.bytes("fluxmap.ppm", &img)?;
    }
    #[derive(Serialize)]
    struct Doc<'a> {
        command: &'static str,
        config: &'a RunConfig,
        summary: &'a FluxSummary,
    }
    dir.json(
        "summary.json",
        &Doc {
            command: "fluxmap",
            config: cfg,
            summary: &summary,
        },
    )?;
    Ok(summary)
}

// ----------------------------------------------------------------- evolve

#[derive(Debug, Clone, Serialize)]
pub struct ProbeReport {
    pub kind: &'static str,
    pub eps_destructive: f64,
    pub theta_constructive: f64,
    pub verdict: Verdict,
    pub metrics: InterferenceMetrics,
}

/// Probe sites for a run: antipode on rings, reflected 3×3 block on
/// squares, the partner site on the dimer.
pub fn probe_sites(lattice: &Lattice, start: usize) -> CliResult<(&'static str, Vec<usize>)> {
    match lattice.kind() {
        LatticeKind::Ring { .. } => Ok(("opposite_site", vec![lattice.antipode(start)?])),
        LatticeKind::Square { side, .. } => {
            let centre = lattice
                .point_reflection(start)
                .ok_or_else(|| invalid("packet", "the start site reflected through the beam centre falls outside the lattice"))?;
            let (r, c) = ((centre / side) as isize, (centre % side) as isize);
            let mut region = Vec::new();
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (rr, cc) = (r + dr, c + dc);
                    if rr >= 0 && cc >= 0 && (rr as usize) < side && (cc as usize) < side {
                        region.push(rr as usize * side + cc as usize);
                    }
                }
            }
            Ok(("opposite_block", region))
        }
        LatticeKind::Dimer { .. } => Ok(("partner_site", vec![1 - start])),
    }
}

pub fn default_eps(cfg: &RunConfig, lambda: f64) -> f64 {
    let ring = matches!(cfg.lattice_kind(), LatticeKind::Ring { .. });
    if ring && cfg.hopping == HoppingConfig::PhaseOnly && lambda == 0.0 {
        1e-6
    } else {
        5e-3
    }
}

pub fn default_theta(lattice: &Lattice, start: usize, traj: &Trajectory) -> f64 {
    match lattice.kind() {
        LatticeKind::Square { a, .. } => {
            let c = lattice.beam_center();
            let r0 = (lattice.sites()[start].position - c).norm();
            let dist: Vec<f64> = lattice.sites().iter().map(|s| (s.position - c).norm()).collect();
            annulus_threshold(&dist, &traj.records[0].totals, r0 - 1.5 * a, r0 + 1.5 * a)
        }
        _ => 2.0 / lattice.len() as f64,
    }
}

pub fn analyze(cfg: &RunConfig, setup: &Setup, traj: &Trajectory) -> CliResult<ProbeReport> {
    let (kind, sites) = probe_sites(&setup.lattice, setup.start_site)?;
    let metrics = if kind == "opposite_site" {
        opposite_site_series(traj, setup.start_site)?
    } else {
        probe_region_series(traj, &sites)?
    };
    let eps = cfg.probe.eps_destructive.unwrap_or_else(|| default_eps(cfg, traj.meta.lambda));
    let theta = cfg
        .probe
        .theta_constructive
        .unwrap_or_else(|| default_theta(&setup.lattice, setup.start_site, traj))
        .max(eps * (1.0 + 1e-12));
    let verdict = interference_verdict(&metrics, eps, theta)?;
    Ok(ProbeReport {
        kind,
        eps_destructive: eps,
        theta_constructive: theta,
        verdict,
        metrics,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Invariants {
    pub hermiticity_error: f64,
    pub hermiticity_ok: bool,
    pub max_norm_drift: f64,
    pub norm_ok: bool,
    pub max_energy_drift: f64,
    pub energy_ok: bool,
}

impl Invariants {
    fn new(hermiticity_error: f64, d: &Diagnostics) -> Self {
        Invariants {
            hermiticity_error,
            hermiticity_ok: hermiticity_error <= 1e-12,
            max_norm_drift: d.max_norm_drift,
            norm_ok: d.max_norm_drift < NORM_DRIFT_BOUND,
            max_energy_drift: d.max_energy_drift,
            energy_ok: d.max_energy_drift < ENERGY_DRIFT_BOUND,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EvolveSummary {
    pub lambda: f64,
    pub probe: ProbeReport,
    pub invariants: Invariants,
}

/// Run the configured evolution without writing anything.
pub fn simulate(cfg: &RunConfig) -> CliResult<(Setup, Trajectory)> {
    let setup = cfg.setup()?;
    let traj = if setup.params.lambda == 0.0 {
        evolve_linear(&setup.hopping, &setup.psi0, &setup.params)?
    } else {
        evolve_gpe(&setup.hopping, &setup.psi0, &setup.params)?
    };
    Ok((setup, traj))
}

fn site_header(n: usize) -> Vec<String> {
    std::iter::once("time".to_string()).chain((0..n).map(|i| format!("site_{i}"))).collect()
}

fn write_series(dir: &mut OutDir, name: &str, n: usize, rows: &[(f64, Vec<f64>)]) -> CliResult<()> {
    let mut csv = Csv::new(&site_header(n));
    for (t, v) in rows {
        csv.row(std::iter::once(*t).chain(v.iter().copied()));
    }
    dir.csv(name, &csv)
}

fn density_images(dir: &mut OutDir, setup: &Setup, traj: &Trajectory, peak_time: f64) -> CliResult<()> {
    let n = setup.lattice.len();
    match setup.lattice.kind() {
        LatticeKind::Square { side, .. } => {
            let picks = [("density_final.ppm", traj.records.last()), ("density_peak.ppm", traj.records.iter().find(|r| r.time == peak_time))];
            for (name, rec) in picks {
                let Some(rec) = rec else { continue };
                let panels: Vec<Panel> = rec.components.iter().map(|c| Panel { rows: side, cols: side, values: c }).collect();
                dir.bytes(name, &heatmap_ppm(&panels, auto_scale(side, side)))?;
            }
        }
        _ => {
            // space-time diagram: one row per snapshot, time running upwards
            let rows = traj.records.len();
            let comps: Vec<Vec<f64>> = (0..traj.meta.spin_dim)
                .map(|s| traj.records.iter().flat_map(|r| r.components[s].iter().copied()).collect())
                .collect();
            let panels: Vec<Panel> = comps.iter().map(|v| Panel { rows, cols: n, values: v }).collect();
            dir.bytes("density_spacetime.ppm", &heatmap_ppm(&panels, (640 / n.max(1)).clamp(1, 8)))?;
        }
    }
    Ok(())
}

/// Evolve and write trajectory CSVs, probe metrics and a manifest.
pub fn cmd_evolve(cfg: &RunConfig, out: &Path) -> CliResult<EvolveSummary> {
    let (setup, traj) = simulate(cfg)?;
    let probe = analyze(cfg, &setup, &traj)?;
    let invariants = Invariants::new(setup.hopping.hermiticity_error(), &traj.diagnostics);
    let mut dir = OutDir::create(out)?;

    let n = setup.lattice.len();
    let last = traj.records.len() - 1;
    let written: Vec<_> = traj
        .records
        .iter()
        .enumerate()
        .filter(|(k, _)| k % cfg.outputs.csv_every == 0 || *k == last)
        .map(|(_, r)| r)
        .collect();
    let collect = |f: &dyn Fn(&crate::observables::DensityRecord) -> Vec<f64>| -> Vec<(f64, Vec<f64>)> { written.iter().map(|r| (r.time, f(r))).collect() };
    write_series(&mut dir, "density.csv", n, &collect(&|r| r.totals.clone()))?;
    if traj.meta.spin_dim == 2 {
        write_series(&mut dir, "density_spin1.csv", n, &collect(&|r| r.components[0].clone()))?;
        write_series(&mut dir, "density_spin2.csv", n, &collect(&|r| r.components[1].clone()))?;
        write_series(&mut dir, "charge.csv", n, &collect(&|r| charge_density(r).expect("two components")))?;
        write_series(&mut dir, "spin.csv", n, &collect(&|r| spin_density(r).expect("two components")))?;
    }
    let mut probe_csv = Csv::new(&["time", "probe_density"]);
    for &(t, v) in &probe.metrics.series {
        probe_csv.row([t, v]);
    }
    dir.csv("probe.csv", &probe_csv)?;
    dir.json("metrics.json", &probe)?;
    if cfg.outputs.images {
        density_images(&mut dir, &setup, &traj, probe.metrics.time_of_max)?;
    }

    #[derive(Serialize)]
    struct Run {
        geometry: LatticeKind,
        field: FieldKind,
        spin_dim: usize,
        start_site: usize,
        lambda: f64,
        dt: f64,
        steps: usize,
        snapshots: usize,
        initial_energy: f64,
    }
    #[derive(Serialize)]
    struct Manifest<'a> {
        command: &'static str,
        version: &'static str,
        config: &'a RunConfig,
        units: Units,
        run: Run,
        invariants: &'a Invariants,
        files: Vec<String>,
    }
    let mut files: Vec<String> = dir.files.iter().cloned().collect();
    files.push("manifest.json".into());
    files.sort();
    let manifest = Manifest {
        command: "evolve",
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        units: units(),
        run: Run {
            geometry: traj.meta.geometry,
            field: traj.meta.field,
            spin_dim: traj.meta.spin_dim,
            start_site: setup.start_site,
            lambda: traj.meta.lambda,
            dt: traj.meta.dt,
            steps: traj.meta.steps,
            snapshots: traj.records.len(),
            initial_energy: traj.diagnostics.initial_energy,
        },
        invariants: &invariants,
        files,
    };
    dir.json("manifest.json", &manifest)?;
    Ok(EvolveSummary {
        lambda: traj.meta.lambda,
        probe,
        invariants,
    })
}

// ------------------------------------------------------------------ sweep

fn worker_count() -> CliResult<Option<usize>> {
    match std::env::var(WORKERS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(invalid("workers", format!("{WORKERS_ENV} must be a positive integer, got `{v}`"))),
        },
    }
}

/// Directory name for one sweep point.
pub fn lambda_dir(lambda: f64) -> String {
    format!("lambda_{}", fmt_num(lambda))
}

pub fn cmd_sweep(cfg: &RunConfig, out: &Path) -> CliResult<Vec<EvolveSummary>> {
    let lambdas = &cfg.sweep.lambdas;
    if lambdas.is_empty() {
        return Err(invalid("sweep.lambdas", "need at least one lambda"));
    }
    if let Some(bad) = lambdas.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
        return Err(invalid("sweep.lambdas", format!("values must be finite and >= 0, got {bad}")));
    }
    let names: BTreeSet<String> = lambdas.iter().map(|&l| lambda_dir(l)).collect();
    if names.len() != lambdas.len() {
        return Err(invalid("sweep.lambdas", "values must be distinct"));
    }
    let mut dir = OutDir::create(out)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = worker_count()? {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| invalid("workers", e.to_string()))?;
    let results: Vec<CliResult<EvolveSummary>> = pool.install(|| {
        lambdas
            .par_iter()
            .map(|&lambda| {
                let mut run = cfg.clone();
                run.evolve.lambda = lambda;
                cmd_evolve(&run, &out.join(lambda_dir(lambda)))
            })
            .collect()
    });
    let results = results.into_iter().collect::<CliResult<Vec<_>>>()?;
    let mut csv = Csv::new(&["verdict", "lambda", "probe_max", "time_of_max", "eps_destructive", "max_norm_drift", "max_energy_drift"]);
    for r in &results {
        let verdict = match r.probe.verdict {
            Verdict::Destructive => "destructive",
            Verdict::Constructive => "constructive",
            Verdict::Mixed => "mixed",
        };
        csv.mixed_row(
            &[verdict],
            [r.lambda, r.probe.metrics.max, r.probe.metrics.time_of_max, r.probe.eps_destructive, r.invariants.max_norm_drift, r.invariants.max_energy_drift],
        );
    }
    dir.csv("sweep.csv", &csv)?;
    Ok(results)
}

// ----------------------------------------------------------- oracle-check

#[derive(Debug, Clone, Serialize)]
pub struct OracleCheck {
    pub time: f64,
    pub steps: usize,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub tolerance: f64,
    pub dimension: usize,
    pub checks: Vec<OracleCheck>,
    /// `max_t |P_partner(t) - sin²(|J| t)|` for a single-site start on the dimer.
    pub two_site_error: Option<f64>,
    pub max_error: f64,
    pub pass: bool,
}

pub fn oracle_report(cfg: &RunConfig) -> CliResult<OracleReport> {
    let setup = cfg.setup()?;
    let prop = SpectralPropagator::new(&setup.hopping)?;
    let mut checks = Vec::new();
    for &t in &cfg.oracle.times {
        let params = EvolveParams {
            t_end: t,
            lambda: 0.0,
            record_stride: usize::MAX,
            ..setup.params
        };
        let traj = evolve_linear(&setup.hopping, &setup.psi0, &params)?;
        let exact = prop.evolve(&setup.psi0, t)?;
        checks.push(OracleCheck {
            time: t,
            steps: traj.meta.steps,
            max_abs_error: traj.final_state.max_abs_diff(&exact),
        });
    }
    let single_site = setup.psi0.amplitudes().iter().filter(|z| z.norm() > 0.0).count() == setup.psi0.spin_dim();
    let two_site_error = if setup.lattice.len() == 2 && single_site {
        let j = setup.hopping.entry(1, 0).map(|h| h.component(0, 0).norm()).unwrap_or(0.0);
        let params = EvolveParams {
            lambda: 0.0,
            record_stride: 1,
            ..setup.params
        };
        let traj = evolve_linear(&setup.hopping, &setup.psi0, &params)?;
        let partner = 1 - setup.start_site;
        Some(traj.records.iter().map(|r| (r.totals[partner] - (j * r.time).sin().powi(2)).abs()).fold(0.0, f64::max))
    } else {
        None
    };
    let max_error = checks.iter().map(|c| c.max_abs_error).chain(two_site_error).fold(0.0, f64::max);
    Ok(OracleReport {
        tolerance: ORACLE_TOLERANCE,
        dimension: setup.hopping.dimension(),
        checks,
        two_site_error,
        max_error,
        pass: max_error <= ORACLE_TOLERANCE,
    })
}

pub fn cmd_oracle_check(cfg: &RunConfig, out: &Path) -> CliResult<OracleReport> {
    let report = oracle_report(cfg)?;
    let mut dir = OutDir::create(out)?;
    #[derive(Serialize)]
    struct Doc<'a> {
        command: &'static str,
        config: &'a RunConfig,
        report: &'a OracleReport,
    }
    dir.json(
        "oracle_report.json",
        &Doc {
            command: "oracle-check",
            config: cfg,
            report: &report,
        },
    )?;
    if !report.pass {
        return Err(CliError::OracleMismatch {
            error: report.max_error,
            tolerance: ORACLE_TOLERANCE,
        });
    }
    Ok(report)
}
