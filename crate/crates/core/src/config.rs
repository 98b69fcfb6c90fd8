//! Run configuration read from a TOML file.
//!
//! Every section is optional and falls back to the defaults listed in the
//! README. Unknown keys are rejected. `noise.kind` always follows `system`.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::euler::{InitialCondition, Scheme, SimConfig};
use crate::field::TorusGrid;
use crate::inhomo::{DensityInit, InhomoConfig, SolverSettings};
use crate::ledger::Nonlinearity;
use crate::noise::{DiffusionSpec, FamilyKind};
use crate::regularity::SyntheticFieldSpec;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    #[default]
    Homogeneous,
    Inhomogeneous,
}

impl SystemKind {
    pub fn family_kind(self) -> FamilyKind {
        match self {
            SystemKind::Homogeneous => FamilyKind::Homogeneous,
            SystemKind::Inhomogeneous => FamilyKind::Inhomogeneous,
        }
    }
}

impl FromStr for SystemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "homogeneous" => Ok(SystemKind::Homogeneous),
            "inhomogeneous" => Ok(SystemKind::Inhomogeneous),
            other => Err(Error::config(
                "system",
                format!("unknown system '{other}' (expected homogeneous or inhomogeneous)"),
            )),
        }
    }
}

/// Names accepted by the `experiment` key, one per CLI subcommand.
pub const EXPERIMENTS: [&str; 5] = [
    "simulate",
    "budget",
    "commutator-scan",
    "besov",
    "noise-check",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "yes")]
    pub dealias: bool,
}

fn default_n() -> usize {
    64
}

fn yes() -> bool {
    true
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            n: default_n(),
            dealias: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Brownian lattice width; defaults to `dt`.
    #[serde(default)]
    pub base_dt: Option<f64>,
    #[serde(default)]
    pub scheme: Scheme,
}

fn default_horizon() -> f64 {
    0.25
}

fn default_dt() -> f64 {
    1e-3
}

impl Default for TimeSection {
    fn default() -> Self {
        TimeSection {
            horizon: default_horizon(),
            dt: default_dt(),
            base_dt: None,
            scheme: Scheme::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensitySection {
    #[serde(default = "default_density")]
    pub init: DensityInit,
    #[serde(default = "default_floor")]
    pub rho_floor: f64,
    #[serde(default)]
    pub solver: SolverSettings,
}

fn default_density() -> DensityInit {
    DensityInit::Bump {
        background: 1.0,
        amplitude: 0.5,
        center: [0.5, 0.5],
        radius: 0.15,
    }
}

fn default_floor() -> f64 {
    0.5
}

impl Default for DensitySection {
    fn default() -> Self {
        DensitySection {
            init: default_density(),
            rho_floor: default_floor(),
            solver: SolverSettings::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub paths: usize,
}

fn one() -> usize {
    1
}

impl Default for EnsembleSection {
    fn default() -> Self {
        EnsembleSection { seed: 0, paths: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Not part of the hashed content.
    #[serde(default = "default_dir", skip_serializing)]
    pub dir: PathBuf,
    /// Checkpoint stride in steps; 0 keeps only the initial and final states.
    #[serde(default)]
    pub checkpoint_every: usize,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: default_dir(),
            checkpoint_every: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSection {
    /// Modes in the Itô term; all modes when absent.
    #[serde(default)]
    pub modes: Option<usize>,
    /// Times for the ensemble Itô comparison; the horizon when empty.
    #[serde(default)]
    pub check_times: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanMode {
    /// `‖(H(f^ε) − H(f)^ε) : ∇φ^ε‖_{L¹}`.
    #[default]
    Commutator,
    /// Homogeneous paired flux commutator.
    ProofTerm,
    /// Variable-density pairing with `ρ` from `density`.
    Remainder,
}

/// `ρ = mean + spread·f/max|f|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanDensity {
    pub field: SyntheticFieldSpec,
    pub mean: f64,
    pub spread: f64,
    #[serde(default = "default_floor")]
    pub floor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommutatorSection {
    #[serde(default)]
    pub mode: ScanMode,
    #[serde(default = "one")]
    pub dim: usize,
    pub n: usize,
    pub field: SyntheticFieldSpec,
    /// `φ`; required in commutator mode.
    #[serde(default)]
    pub test_function: Option<SyntheticFieldSpec>,
    #[serde(default = "default_nonlinearity")]
    pub nonlinearity: Nonlinearity,
    #[serde(default)]
    pub density: Option<ScanDensity>,
    pub epsilons: Vec<f64>,
}

fn default_nonlinearity() -> Nonlinearity {
    Nonlinearity::ScalarSquare
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BesovSection {
    #[serde(default = "one")]
    pub dim: usize,
    #[serde(default = "default_besov_n")]
    pub n: usize,
    #[serde(default = "one")]
    pub components: usize,
    /// Synthetic input; `dim`, `n` and `components` apply to it.
    #[serde(default)]
    pub field: Option<SyntheticFieldSpec>,
    /// Binary field file, used instead of `field`.
    #[serde(default)]
    pub file: Option<PathBuf>,
    /// Seminorm exponent; defaults to `field.alpha`.
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default = "default_q")]
    pub q: f64,
}

impl BesovSection {
    pub fn alpha(&self) -> Result<f64> {
        let a = self
            .alpha
            .or(self.field.as_ref().map(|f| f.alpha))
            .ok_or_else(|| Error::config("besov.alpha", "required with besov.file"))?;
        if !(a > 0.0 && a < 1.0) {
            return Err(Error::config("besov.alpha", "must lie in (0, 1)"));
        }
        Ok(a)
    }
}

fn default_besov_n() -> usize {
    256
}

fn default_q() -> f64 {
    3.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseCheckSection {
    #[serde(default = "default_probes")]
    pub probes: usize,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_sample_dt")]
    pub dt: f64,
}

fn default_probes() -> usize {
    64
}

fn default_samples() -> usize {
    100_000
}

fn default_sample_dt() -> f64 {
    1e-2
}

impl Default for NoiseCheckSection {
    fn default() -> Self {
        NoiseCheckSection {
            probes: default_probes(),
            samples: default_samples(),
            dt: default_sample_dt(),
        }
    }
}

fn default_initial() -> InitialCondition {
    InitialCondition::TaylorGreen {
        amplitude: 1.0,
        perturbation: 0.1,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub system: SystemKind,
    #[serde(default)]
    pub experiment: Option<String>,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub time: TimeSection,
    #[serde(default)]
    pub noise: DiffusionSpec,
    #[serde(default = "default_initial")]
    pub initial: InitialCondition,
    #[serde(default)]
    pub density: DensitySection,
    #[serde(default)]
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub budget: BudgetSection,
    #[serde(default)]
    pub commutator: Option<CommutatorSection>,
    #[serde(default)]
    pub besov: Option<BesovSection>,
    #[serde(default)]
    pub noise_check: NoiseCheckSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::parse("").expect("the empty config is valid")
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config {
            field: "config".into(),
            reason: e.message().to_string(),
        })?;
        cfg.set_system(cfg.system);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            field: "--config".into(),
            reason: format!("cannot read {}: {e}", path.display()),
        })?;
        RunConfig::parse(&text)
    }

    pub fn set_system(&mut self, system: SystemKind) {
        self.system = system;
        self.noise.kind = system.family_kind();
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("configs serialize");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Rejects a selector that names no experiment or a different one.
    pub fn check_experiment(&self, invoked: &str) -> Result<()> {
        match self.experiment.as_deref() {
            None => Ok(()),
            Some(e) if !EXPERIMENTS.contains(&e) => Err(Error::config(
                "experiment",
                format!("unknown experiment '{e}'"),
            )),
            Some(e) if e != invoked => Err(Error::config(
                "experiment",
                format!("config selects '{e}' but '{invoked}' was invoked"),
            )),
            Some(_) => Ok(()),
        }
    }

    pub fn grid(&self) -> Result<TorusGrid> {
        TorusGrid::new(2, self.grid.n).map_err(|e| Error::config("grid.n", e.to_string()))
    }

    pub fn sim_config(&self) -> Result<SimConfig> {
        Ok(SimConfig {
            grid: self.grid()?,
            horizon: self.time.horizon,
            dt: self.time.dt,
            base_dt: self.time.base_dt.unwrap_or(self.time.dt),
            noise: self.noise.clone(),
            initial: self.initial.clone(),
            dealias: self.grid.dealias,
            scheme: self.time.scheme,
            seed: self.ensemble.seed,
            paths: self.ensemble.paths,
        })
    }

    pub fn inhomo_config(&self) -> Result<InhomoConfig> {
        if self.time.scheme != Scheme::EulerMaruyama {
            return Err(Error::config(
                "time.scheme",
                "variable-density runs use euler_maruyama",
            ));
        }
        Ok(InhomoConfig {
            grid: self.grid()?,
            horizon: self.time.horizon,
            dt: self.time.dt,
            base_dt: self.time.base_dt.unwrap_or(self.time.dt),
            noise: self.noise.clone(),
            velocity: self.initial.clone(),
            density: self.density.init.clone(),
            rho_floor: self.density.rho_floor,
            dealias: self.grid.dealias,
            solver: self.density.solver,
            seed: self.ensemble.seed,
            paths: self.ensemble.paths,
        })
    }

    /// Validates the sections the simulators read.
    pub fn validate_simulation(&self) -> Result<()> {
        self.noise.validate()?;
        match self.system {
            SystemKind::Homogeneous => self.sim_config()?.validate().map(drop),
            SystemKind::Inhomogeneous => self.inhomo_config()?.validate().map(drop),
        }
    }

    pub fn commutator_section(&self) -> Result<&CommutatorSection> {
        let s = self
            .commutator
            .as_ref()
            .ok_or_else(|| Error::config("commutator", "section missing"))?;
        if !(s.dim == 1 || s.dim == 2) {
            return Err(Error::config("commutator.dim", "must be 1 or 2"));
        }
        if s.epsilons.len() < 4 {
            return Err(Error::config(
                "commutator.epsilons",
                "need at least 4 values",
            ));
        }
        match s.mode {
            ScanMode::Commutator if s.test_function.is_none() => Err(Error::config(
                "commutator.test_function",
                "required in commutator mode",
            )),
            ScanMode::ProofTerm | ScanMode::Remainder if s.dim != 2 => Err(Error::config(
                "commutator.dim",
                "paired scans are two-dimensional",
            )),
            ScanMode::Remainder if s.density.is_none() => Err(Error::config(
                "commutator.density",
                "required in remainder mode",
            )),
            _ => Ok(s),
        }
    }

    pub fn besov_section(&self) -> Result<&BesovSection> {
        let s = self
            .besov
            .as_ref()
            .ok_or_else(|| Error::config("besov", "section missing"))?;
        if !(s.dim == 1 || s.dim == 2) {
            return Err(Error::config("besov.dim", "must be 1 or 2"));
        }
        if s.components == 0 {
            return Err(Error::config("besov.components", "must be at least 1"));
        }
        if !(s.q >= 1.0 && s.q.is_finite()) {
            return Err(Error::config("besov.q", "must be at least 1"));
        }
        if s.field.is_some() == s.file.is_some() {
            return Err(Error::config(
                "besov.field",
                "give exactly one of besov.field and besov.file",
            ));
        }
        s.alpha()?;
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_uses_defaults() {
        let cfg = RunConfig::parse("").unwrap();
        assert_eq!(cfg.grid.n, 64);
        assert_eq!(cfg.noise, DiffusionSpec::default());
        assert_eq!(cfg.ensemble.paths, 1);
        cfg.validate_simulation().unwrap();
    }

    #[test]
    fn full_config_round_trips() {
        let text = r#"
            system = "inhomogeneous"
            experiment = "simulate"
            [grid]
            n = 32
            [time]
            horizon = 0.01
            dt = 1e-3
            base_dt = 5e-4
            [noise]
            g0 = 0.3
            modes = 8
            [initial]
            kind = "taylor_green"
            amplitude = 0.5
            [density]
            rho_floor = 0.4
            init = { kind = "uniform", value = 2.0 }
            [ensemble]
            seed = 11
            paths = 3
        "#;
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.noise.kind, FamilyKind::Inhomogeneous);
        let inh = cfg.inhomo_config().unwrap();
        assert_eq!(inh.base_dt, 5e-4);
        assert_eq!(inh.density, DensityInit::Uniform { value: 2.0 });
        cfg.validate_simulation().unwrap();
        let back = RunConfig::parse(&toml::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn errors_name_the_field() {
        let field = |text: &str| match RunConfig::parse(text).and_then(|c| c.validate_simulation())
        {
            Err(Error::Config { field, .. }) => field,
            other => panic!("expected a config error, got {other:?}"),
        };
        assert_eq!(field("[time]\ndt = 0.0"), "time.dt");
        assert_eq!(field("[time]\ndt = -1e-3"), "time.dt");
        assert_eq!(field("[grid]\nn = 48"), "grid.n");
        assert_eq!(field("[ensemble]\npaths = 0"), "ensemble.paths");
        assert_eq!(field("[noise]\ng0 = -1.0"), "noise.g0");
        assert_eq!(field("[time]\nbase_dt = 3e-4"), "time.base_dt");
        assert_eq!(field("bogus = 1"), "config");
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.output.dir = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.ensemble.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn experiment_selector() {
        let mut cfg = RunConfig::default();
        cfg.check_experiment("besov").unwrap();
        cfg.experiment = Some("besov".into());
        cfg.check_experiment("besov").unwrap();
        assert!(cfg.check_experiment("simulate").is_err());
        cfg.experiment = Some("spectrum".into());
        assert!(
            matches!(cfg.check_experiment("spectrum"), Err(Error::Config { field, .. }) if field == "experiment")
        );
    }

    #[test]
    fn scan_sections_validate() {
        let text = r#"
            [commutator]
            n = 64
            epsilons = [0.25, 0.125, 0.0625, 0.03125]
            field = { alpha = 0.4, n_octaves = 3, seed = 1, amplitude = 1.0 }
        "#;
        let cfg = RunConfig::parse(text).unwrap();
        assert!(
            matches!(cfg.commutator_section(), Err(Error::Config { field, .. }) if field == "commutator.test_function")
        );
        let cfg = RunConfig::parse(&format!(
            "{text}\nnonlinearity = {{ kind = \"affine\", a = 1.0, b = 2.0 }}\ntest_function = {{ alpha = 0.6, n_octaves = 3, seed = 2, amplitude = 1.0 }}"
        ))
        .unwrap();
        let s = cfg.commutator_section().unwrap();
        assert_eq!(s.nonlinearity, Nonlinearity::Affine { a: 1.0, b: 2.0 });
        assert!(RunConfig::default().besov_section().is_err());
        let besov_field = |text: &str| match RunConfig::parse(text).unwrap().besov_section() {
            Err(Error::Config { field, .. }) => field,
            other => panic!("expected a config error, got {other:?}"),
        };
        let spec = "field = { alpha = 0.4, n_octaves = 3, seed = 1, amplitude = 1.0 }";
        assert_eq!(besov_field("[besov]\nq = 3.0"), "besov.field");
        assert_eq!(
            besov_field(&format!("[besov]\nfile = \"f.bin\"\n{spec}")),
            "besov.field"
        );
        assert_eq!(besov_field("[besov]\nfile = \"f.bin\""), "besov.alpha");
        assert_eq!(
            besov_field(&format!("[besov]\nalpha = 1.5\n{spec}")),
            "besov.alpha"
        );
        let cfg = RunConfig::parse("[besov]\nfile = \"f.bin\"\nalpha = 0.3").unwrap();
        assert_eq!(cfg.besov_section().unwrap().alpha().unwrap(), 0.3);
        let cfg = RunConfig::parse(&format!("[besov]\n{spec}")).unwrap();
        assert_eq!(cfg.besov_section().unwrap().alpha().unwrap(), 0.4);
        assert_eq!(
            "inhomogeneous".parse::<SystemKind>().unwrap(),
            SystemKind::Inhomogeneous
        );
        assert!("stokes".parse::<SystemKind>().is_err());
    }
}
