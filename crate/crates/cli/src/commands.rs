use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use stoch_euler::config::{RunConfig, ScanMode, SystemKind};
use stoch_euler::euler::{run_path, PathFlag, SimPath};
use stoch_euler::inhomo::{run_inhomo_path, DensityInit, InhomoPath};
use stoch_euler::io::{
    decode_field, encode_field, sha256_hex, write_field, write_json, Checkpoint, CsvTable,
    Manifest, OutputFile, PathEntry,
};
use stoch_euler::ledger::{
    commutator_norm, homogeneous_budget, inhomo_budgets, ito_expectation_check, martingale_stats,
    proof_term_scan, rate_fit, remainder_scan, EnergyLedger, ItoCheck, MartingaleReport,
    Nonlinearity, RateFit, SpaceWeight, TestFunctionPair, MIN_ENSEMBLE,
};
use stoch_euler::noise::{growth_report, increment_statistics, DiffusionFamily, GrowthReport};
use stoch_euler::regularity::{
    besov_table, default_shifts, estimate_holder_exponent, make_synthetic_field, BesovParams,
    SyntheticFieldSpec,
};
use stoch_euler::{Error, RealField, Result, TorusGrid};

/// Printed on stdout after a successful run.
#[derive(Serialize)]
pub struct Done {
    status: &'static str,
    experiment: &'static str,
    manifest: PathBuf,
    outputs: Vec<String>,
}

/// Collects output files and writes `<experiment>.manifest.json` last.
struct Outputs {
    dir: PathBuf,
    experiment: &'static str,
    manifest: Manifest,
}

impl Outputs {
    fn new(dir: &Path, experiment: &'static str, cfg: &RunConfig) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            experiment,
            manifest: Manifest::new(experiment, cfg),
        })
    }

    fn table(&mut self, name: &str, table: &CsvTable) -> Result<()> {
        let sha256 = table.write(&self.dir.join(name))?;
        self.manifest.outputs.push(OutputFile {
            file: name.into(),
            sha256,
        });
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.dir.join(name);
        write_json(&path, value)?;
        self.manifest.outputs.push(OutputFile {
            file: name.into(),
            sha256: sha256_hex(&fs::read(&path)?),
        });
        Ok(())
    }

    fn finish(self) -> Result<Done> {
        let path = self.dir.join(format!("{}.manifest.json", self.experiment));
        write_json(&path, &self.manifest)?;
        Ok(Done {
            status: "ok",
            experiment: self.experiment,
            outputs: self
                .manifest
                .outputs
                .iter()
                .map(|o| o.file.clone())
                .collect(),
            manifest: path,
        })
    }
}

fn checkpoint_steps(reached: usize, every: usize) -> Vec<usize> {
    let mut steps: Vec<usize> = if every == 0 {
        vec![0]
    } else {
        (0..=reached).step_by(every).collect()
    };
    if steps.last() != Some(&reached) {
        steps.push(reached);
    }
    steps
}

/// `[ρ, m_x, m_y, p]` at `step`; `p` drove the step that ended there (zero
/// at the start).
fn inhomo_checkpoint(path: &InhomoPath, step: usize) -> RealField {
    let s = &path.states[step];
    let grid = s.rho.grid();
    let mut data = s.rho.data().to_vec();
    data.extend_from_slice(s.momentum.data());
    match step {
        0 => data.extend(std::iter::repeat(0.0).take(grid.len())),
        k => data.extend_from_slice(path.pressure[k - 1].data()),
    }
    RealField::new(grid, 4, data).expect("checkpoint layout")
}

fn file_name(index: u64, step: usize) -> String {
    format!("path{index:04}_step{step:06}.bin")
}

struct PathRecord {
    index: u64,
    flag: Option<PathFlag>,
    states: Vec<(usize, f64, RealField)>,
    mass_drift: Option<f64>,
    min_rho: Option<f64>,
    row: Vec<f64>,
}

fn homogeneous_record(path: SimPath, every: usize) -> PathRecord {
    let reached = path.steps();
    let states = checkpoint_steps(reached, every)
        .into_iter()
        .map(|k| (k, path.times[k], path.states[k].clone()))
        .collect();
    PathRecord {
        index: path.path_index,
        row: vec![
            path.path_index as f64,
            reached as f64,
            path.flag.is_some() as u8 as f64,
            path.times[reached],
            path.final_state().energy(),
        ],
        flag: path.flag,
        states,
        mass_drift: None,
        min_rho: None,
    }
}

fn inhomo_record(path: InhomoPath, every: usize) -> PathRecord {
    let reached = path.steps();
    let states = checkpoint_steps(reached, every)
        .into_iter()
        .map(|k| (k, path.times[k], inhomo_checkpoint(&path, k)))
        .collect();
    let last = path.final_state();
    PathRecord {
        index: path.path_index,
        row: vec![
            path.path_index as f64,
            reached as f64,
            path.flag.is_some() as u8 as f64,
            path.times[reached],
            0.5 * last.momentum.inner(&last.velocity),
            path.mass_drift,
            path.min_rho,
        ],
        flag: path.flag,
        states,
        mass_drift: Some(path.mass_drift),
        min_rho: Some(path.min_rho),
    }
}

pub fn simulate(cfg: &RunConfig) -> Result<Done> {
    cfg.validate_simulation()?;
    let every = cfg.output.checkpoint_every;
    let paths = cfg.ensemble.paths as u64;
    let (records, header): (Vec<PathRecord>, &[&str]) = match cfg.system {
        SystemKind::Homogeneous => {
            let sim = cfg.sim_config()?;
            let records = (0..paths)
                .into_par_iter()
                .map(|p| run_path(&sim, p).map(|path| homogeneous_record(path, every)))
                .collect::<Result<_>>()?;
            (
                records,
                &["path", "steps", "flagged", "final_time", "final_kinetic"],
            )
        }
        SystemKind::Inhomogeneous => {
            let inh = cfg.inhomo_config()?;
            let records = (0..paths)
                .into_par_iter()
                .map(|p| run_inhomo_path(&inh, p).map(|path| inhomo_record(path, every)))
                .collect::<Result<_>>()?;
            (
                records,
                &[
                    "path",
                    "steps",
                    "flagged",
                    "final_time",
                    "final_energy",
                    "mass_drift",
                    "min_rho",
                ],
            )
        }
    };
    let flagged = records.iter().filter(|r| r.flag.is_some()).count();
    if flagged == records.len() {
        return Err(Error::AllPathsFlagged(flagged));
    }
    let mut out = Outputs::new(&cfg.output.dir, "simulate", cfg)?;
    let mut table = CsvTable::new(header);
    for r in records {
        let mut checkpoints = Vec::with_capacity(r.states.len());
        for (step, time, field) in &r.states {
            let file = file_name(r.index, *step);
            let sha256 = write_field(&out.dir.join(&file), field)?;
            checkpoints.push(Checkpoint {
                step: *step,
                time: *time,
                file,
                sha256,
            });
        }
        out.manifest.paths.push(PathEntry {
            index: r.index,
            flag: r.flag,
            checkpoints,
            mass_drift: r.mass_drift,
            min_rho: r.min_rho,
        });
        table.push(r.row);
    }
    out.manifest.flagged = flagged;
    out.table("paths.csv", &table)?;
    out.finish()
}

/// Compares replayed states with the stored checkpoints byte for byte.
fn verify(entry: &PathEntry, dir: &Path, state: impl Fn(usize) -> Option<RealField>) -> Result<()> {
    for c in &entry.checkpoints {
        let stored = fs::read(dir.join(&c.file))
            .map_err(|e| Error::NotReplayable(format!("missing checkpoint {}: {e}", c.file)))?;
        if sha256_hex(&stored) != c.sha256 {
            return Err(Error::NotReplayable(format!(
                "{} does not match its recorded hash",
                c.file
            )));
        }
        let replayed = state(c.step).ok_or_else(|| {
            Error::NotReplayable(format!(
                "path {} never reached step {}",
                entry.index, c.step
            ))
        })?;
        if encode_field(&replayed) != stored {
            return Err(Error::NotReplayable(format!(
                "replay of path {} differs from {}",
                entry.index, c.file
            )));
        }
    }
    Ok(())
}

const LEDGER_COLUMNS: [&str; 9] = [
    "path",
    "time",
    "kinetic",
    "ito_term",
    "martingale_term",
    "drift_pairing",
    "quadratic_variation",
    "discrete_remainder",
    "residual",
];

const WEIGHTED_COLUMNS: [&str; 13] = [
    "path",
    "pair",
    "theta_center",
    "theta_width",
    "psi_bump",
    "psi_center_x",
    "psi_center_y",
    "psi_radius",
    "time_derivative",
    "flux",
    "ito",
    "martingale",
    "residual",
];

#[derive(Serialize)]
struct HomogeneousSummary {
    config_hash: String,
    paths_used: usize,
    paths_flagged: usize,
    max_relative_residual: f64,
    martingale: Option<MartingaleReport>,
    ito_checks: Option<Vec<ItoCheck>>,
}

#[derive(Serialize)]
struct InhomoSummary {
    config_hash: String,
    paths_used: usize,
    paths_flagged: usize,
    pairs: Vec<TestFunctionPair>,
    /// Per pair, the largest `|residual|` over paths.
    max_abs_residual: Vec<f64>,
    max_mass_drift: f64,
    min_rho: f64,
}

pub fn budget(manifest_path: &Path, out: Option<&Path>) -> Result<Done> {
    let manifest = Manifest::load(manifest_path)?;
    if manifest.experiment != "simulate" {
        return Err(Error::Config {
            field: "manifest".into(),
            reason: format!(
                "expected a simulate manifest, found '{}'",
                manifest.experiment
            ),
        });
    }
    let src = manifest_path.parent().unwrap_or(Path::new("."));
    let cfg = &manifest.config;
    let mut outputs = Outputs::new(out.unwrap_or(src), "budget", cfg)?;
    let live: Vec<&PathEntry> = manifest.paths.iter().filter(|e| e.flag.is_none()).collect();
    match cfg.system {
        SystemKind::Homogeneous => {
            let sim = cfg.sim_config()?;
            let family = sim.family()?;
            let modes = cfg.budget.modes.unwrap_or(family.len());
            let ledgers: Vec<EnergyLedger> = live
                .par_iter()
                .map(|e| {
                    let path = run_path(&sim, e.index)?;
                    verify(e, src, |k| path.states.get(k).cloned())?;
                    homogeneous_budget(&path, &family, modes)
                })
                .collect::<Result<_>>()?;
            let mut table = CsvTable::new(&LEDGER_COLUMNS);
            for l in &ledgers {
                for r in &l.rows {
                    table.push(vec![
                        l.path_index as f64,
                        r.time,
                        r.kinetic,
                        r.ito_term,
                        r.martingale_term,
                        r.drift_pairing,
                        r.quadratic_variation,
                        r.discrete_remainder,
                        r.residual,
                    ]);
                }
            }
            let times = if cfg.budget.check_times.is_empty() {
                vec![cfg.time.horizon]
            } else {
                cfg.budget.check_times.clone()
            };
            let enough = ledgers.len() >= MIN_ENSEMBLE;
            let summary = HomogeneousSummary {
                config_hash: manifest.config_hash.clone(),
                paths_used: ledgers.len(),
                paths_flagged: manifest.flagged,
                max_relative_residual: ledgers
                    .iter()
                    .map(|l| l.relative_residual())
                    .fold(0.0, f64::max),
                martingale: if enough {
                    Some(martingale_stats(&ledgers)?)
                } else {
                    None
                },
                ito_checks: if enough {
                    Some(ito_expectation_check(&ledgers, &times)?)
                } else {
                    None
                },
            };
            outputs.table("budget.csv", &table)?;
            outputs.json("budget_summary.json", &summary)?;
        }
        SystemKind::Inhomogeneous => {
            let inh = cfg.inhomo_config()?;
            let family = inh.family()?;
            let modes = cfg.budget.modes.unwrap_or(family.len());
            let pairs = TestFunctionPair::default_family(cfg.time.horizon);
            let results: Vec<(u64, Vec<_>, f64, f64)> = live
                .par_iter()
                .map(|e| {
                    let path = run_inhomo_path(&inh, e.index)?;
                    verify(e, src, |k| {
                        (k <= path.steps()).then(|| inhomo_checkpoint(&path, k))
                    })?;
                    let w = inhomo_budgets(&path, &pairs, &family, modes)?;
                    Ok((e.index, w, path.mass_drift, path.min_rho))
                })
                .collect::<Result<_>>()?;
            let mut table = CsvTable::new(&WEIGHTED_COLUMNS);
            let mut max_abs = vec![0.0f64; pairs.len()];
            for (index, ws, _, _) in &results {
                for (i, (w, p)) in ws.iter().zip(&pairs).enumerate() {
                    max_abs[i] = max_abs[i].max(w.residual.abs());
                    let (bump, c, r) = match p.psi {
                        SpaceWeight::One => (0.0, [0.0, 0.0], 0.0),
                        SpaceWeight::Bump { center, radius } => (1.0, center, radius),
                    };
                    table.push(vec![
                        *index as f64,
                        i as f64,
                        p.theta.center,
                        p.theta.width,
                        bump,
                        c[0],
                        c[1],
                        r,
                        w.time_derivative,
                        w.flux,
                        w.ito,
                        w.martingale,
                        w.residual,
                    ]);
                }
            }
            let summary = InhomoSummary {
                config_hash: manifest.config_hash.clone(),
                paths_used: results.len(),
                paths_flagged: manifest.flagged,
                max_abs_residual: max_abs,
                max_mass_drift: results.iter().map(|r| r.2).fold(0.0, f64::max),
                min_rho: results.iter().map(|r| r.3).fold(f64::INFINITY, f64::min),
                pairs,
            };
            outputs.table("weighted_budget.csv", &table)?;
            outputs.json("budget_summary.json", &summary)?;
        }
    }
    outputs.finish()
}

fn synthetic(spec: &SyntheticFieldSpec, grid: TorusGrid, components: usize) -> Result<RealField> {
    make_synthetic_field(spec, grid, components)
}

fn density_and_momentum(
    cfg: &stoch_euler::config::CommutatorSection,
    grid: TorusGrid,
) -> Result<(RealField, RealField, f64)> {
    let d = cfg.density.as_ref().ok_or_else(|| Error::Config {
        field: "commutator.density".into(),
        reason: "required for this scan".into(),
    })?;
    let rho = DensityInit::Synthetic {
        field: d.field.clone(),
        mean: d.mean,
        spread: d.spread,
    }
    .realize(grid)?;
    let v = synthetic(&cfg.field, grid, grid.dim())?;
    Ok((rho.clone(), v.mul_scalar_field(&rho), d.floor))
}

#[derive(Serialize)]
struct ScanSummary {
    config_hash: String,
    mode: ScanMode,
    nonlinearity: Option<&'static str>,
    alpha: f64,
    /// `2α + β − 1` for commutators, `3α − 1` for paired terms.
    reference_slope: f64,
    fit: Option<RateFit>,
}

pub fn commutator_scan(cfg: &RunConfig) -> Result<Done> {
    let s = cfg.commutator_section()?;
    let grid = TorusGrid::new(s.dim, s.n).map_err(|e| Error::Config {
        field: "commutator.n".into(),
        reason: e.to_string(),
    })?;
    let alpha = s.field.alpha;
    let (table, summary) = match s.mode {
        ScanMode::Commutator => {
            let phi_spec = s.test_function.as_ref().expect("validated");
            let d = grid.dim();
            let (f, phi) = match s.nonlinearity {
                Nonlinearity::ScalarSquare | Nonlinearity::Affine { .. } => {
                    (synthetic(&s.field, grid, 1)?, synthetic(phi_spec, grid, 1)?)
                }
                Nonlinearity::TensorSquare => {
                    (synthetic(&s.field, grid, d)?, synthetic(phi_spec, grid, d)?)
                }
                Nonlinearity::MomentumFlux { .. } => {
                    let (rho, m, _) = density_and_momentum(s, grid)?;
                    let mut data = rho.into_data();
                    data.extend_from_slice(m.data());
                    (
                        RealField::new(grid, 1 + d, data)?,
                        synthetic(phi_spec, grid, d)?,
                    )
                }
            };
            let norms = s
                .epsilons
                .iter()
                .map(|&e| commutator_norm(&f, &phi, s.nonlinearity, e))
                .collect::<Result<Vec<_>>>()?;
            let mut table = CsvTable::new(&["epsilon", "norm"]);
            for (&e, &n) in s.epsilons.iter().zip(&norms) {
                table.push(vec![e, n]);
            }
            let summary = ScanSummary {
                config_hash: cfg.hash(),
                mode: s.mode,
                nonlinearity: Some(s.nonlinearity.name()),
                alpha,
                reference_slope: 2.0 * alpha + phi_spec.alpha - 1.0,
                fit: rate_fit(&s.epsilons, &norms).ok(),
            };
            (table, summary)
        }
        ScanMode::ProofTerm | ScanMode::Remainder => {
            let scan = if s.mode == ScanMode::ProofTerm {
                proof_term_scan(&synthetic(&s.field, grid, grid.dim())?, &s.epsilons)?
            } else {
                let (rho, m, floor) = density_and_momentum(s, grid)?;
                remainder_scan(&rho, &m, floor, &s.epsilons)?
            };
            let mut table = CsvTable::new(&["epsilon", "signed", "l1"]);
            for i in 0..scan.epsilons.len() {
                table.push(vec![scan.epsilons[i], scan.signed[i], scan.l1[i]]);
            }
            let summary = ScanSummary {
                config_hash: cfg.hash(),
                mode: s.mode,
                nonlinearity: None,
                alpha,
                reference_slope: 3.0 * alpha - 1.0,
                fit: scan.fit,
            };
            (table, summary)
        }
    };
    let mut out = Outputs::new(&cfg.output.dir, "commutator-scan", cfg)?;
    out.table("scan.csv", &table)?;
    out.json("scan_summary.json", &summary)?;
    out.finish()
}

#[derive(Serialize)]
struct BesovSummary {
    config_hash: String,
    input_sha256: Option<String>,
    alpha: f64,
    q: f64,
    seminorm: f64,
    estimated_exponent: f64,
}

pub fn besov(cfg: &RunConfig) -> Result<Done> {
    let s = cfg.besov_section()?;
    let alpha = s.alpha()?;
    let (f, input_sha256) = match (&s.field, &s.file) {
        (Some(spec), _) => {
            let grid = TorusGrid::new(s.dim, s.n).map_err(|e| Error::Config {
                field: "besov.n".into(),
                reason: e.to_string(),
            })?;
            (synthetic(spec, grid, s.components)?, None)
        }
        (None, Some(path)) => {
            let bytes = fs::read(path).map_err(|e| Error::Config {
                field: "besov.file".into(),
                reason: format!("cannot read {}: {e}", path.display()),
            })?;
            (decode_field(&bytes)?, Some(sha256_hex(&bytes)))
        }
        (None, None) => unreachable!("checked by besov_section"),
    };
    let grid = f.grid();
    let params = BesovParams {
        alpha,
        q: s.q,
        shifts: default_shifts(grid),
    };
    let rows = besov_table(&f, &params)?;
    let mut table = CsvTable::new(&["shift_x", "shift_y", "length", "difference_norm", "ratio"]);
    for r in &rows {
        table.push(vec![
            r.shift[0] as f64,
            r.shift[1] as f64,
            r.length,
            r.difference_norm,
            r.ratio,
        ]);
    }
    let summary = BesovSummary {
        config_hash: cfg.hash(),
        input_sha256,
        alpha,
        q: s.q,
        seminorm: rows.iter().map(|r| r.ratio).fold(0.0, f64::max),
        estimated_exponent: estimate_holder_exponent(&f)?,
    };
    let mut out = Outputs::new(&cfg.output.dir, "besov", cfg)?;
    out.table("besov.csv", &table)?;
    out.json("besov_summary.json", &summary)?;
    out.finish()
}

#[derive(Serialize)]
struct NoiseSummary {
    config_hash: String,
    passed: bool,
    growth: GrowthReport,
    increments: stoch_euler::noise::IncrementStats,
}

pub fn noise_check(cfg: &RunConfig) -> Result<Done> {
    cfg.noise.validate()?;
    let family = DiffusionFamily::new(cfg.noise.clone(), cfg.grid()?)?;
    let nc = &cfg.noise_check;
    let growth = growth_report(&family, nc.probes, cfg.ensemble.seed);
    let increments = increment_statistics(cfg.ensemble.seed, nc.samples, nc.dt)?;
    let summary = NoiseSummary {
        config_hash: cfg.hash(),
        passed: growth.passed() && increments.passed,
        growth,
        increments,
    };
    let mut out = Outputs::new(&cfg.output.dir, "noise-check", cfg)?;
    out.json("noise_check.json", &summary)?;
    let first = summary.growth.violations.first().cloned();
    let done = out.finish()?;
    if let Some(v) = first {
        return Err(Error::GrowthCondition {
            condition: v.condition,
            detail: v.detail,
        });
    }
    if !summary.increments.passed {
        return Err(Error::GrowthCondition {
            condition: "increment_statistics",
            detail: "sample mean or covariance outside its gate".into(),
        });
    }
    Ok(done)
}
