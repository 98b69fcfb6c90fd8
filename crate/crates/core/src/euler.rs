//! Homogeneous stochastic Euler integration on the 2-D torus.
//!
//! The Euler–Maruyama step is
//! `v' = v + dt·drift(v) + P[Σ_j G_j(·, v) ΔW^j]`, with `drift = −P div(v⊗v)`.
//! Both pieces are divergence free, so `v'` is too. Every step records the
//! increments it consumed and the projected noise it applied.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{leray_project, nonlinear_term, RealField, TorusGrid};
use crate::noise::{
    BrownianSource, DiffusionFamily, DiffusionSpec, FamilyKind, NoiseState, WienerIncrements,
};
use crate::regularity::{make_synthetic_field, SyntheticFieldSpec};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Largest admissible Courant-type number `dt·max|v|/spacing`.
pub const STABILITY_LIMIT: f64 = 0.25;

/// Growth factor over `max|v₀|` that counts as blow-up.
pub const BLOW_UP_FACTOR: f64 = 1e3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    EulerMaruyama,
    /// Classical RK4; deterministic runs only.
    Rk4,
}

/// Initial velocity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialCondition {
    Zero,
    /// `A (sin 2πx cos 2πy, −cos 2πx sin 2πy)` plus `δ (sin 4πy, sin 2πx)`.
    TaylorGreen {
        amplitude: f64,
        #[serde(default)]
        perturbation: f64,
    },
    /// `(A sin 2πk y, 0)`.
    Shear {
        k: i64,
        amplitude: f64,
    },
    /// Divergence-free lacunary field.
    Synthetic(SyntheticFieldSpec),
}

impl InitialCondition {
    pub fn realize(&self, grid: TorusGrid) -> Result<RealField> {
        if grid.dim() != 2 {
            return Err(Error::config(
                "grid.dim",
                "the simulators are two-dimensional",
            ));
        }
        match self {
            InitialCondition::Zero => Ok(RealField::zeros(grid, 2)),
            InitialCondition::TaylorGreen {
                amplitude,
                perturbation,
            } => {
                let (a, d) = (*amplitude, *perturbation);
                RealField::new(
                    grid,
                    2,
                    RealField::from_fn(grid, 2, |c, x| {
                        let (sx, cx) = (TWO_PI * x[0]).sin_cos();
                        let (sy, cy) = (TWO_PI * x[1]).sin_cos();
                        if c == 0 {
                            a * sx * cy + d * (2.0 * TWO_PI * x[1]).sin()
                        } else {
                            -a * cx * sy + d * sx
                        }
                    })
                    .into_data(),
                )
            }
            InitialCondition::Shear { k, amplitude } => {
                let k = *k as f64;
                RealField::new(
                    grid,
                    2,
                    RealField::from_fn(grid, 2, |c, x| {
                        if c == 0 {
                            amplitude * (TWO_PI * k * x[1]).sin()
                        } else {
                            0.0
                        }
                    })
                    .into_data(),
                )
            }
            InitialCondition::Synthetic(spec) => {
                let spec = SyntheticFieldSpec {
                    divergence_free: true,
                    ..spec.clone()
                };
                make_synthetic_field(&spec, grid, 2)
            }
        }
    }
}

/// Everything that determines a homogeneous run.
#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub grid: TorusGrid,
    pub horizon: f64,
    pub dt: f64,
    /// Width of the Brownian base lattice; `dt` must be a multiple of it.
    pub base_dt: f64,
    pub noise: DiffusionSpec,
    pub initial: InitialCondition,
    pub dealias: bool,
    pub scheme: Scheme,
    pub seed: u64,
    pub paths: usize,
}

impl SimConfig {
    pub fn steps(&self) -> Result<usize> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config("time.dt", "must be positive and finite"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::config("time.horizon", "must be positive and finite"));
        }
        let ratio = self.horizon / self.dt;
        let steps = ratio.round();
        if (ratio - steps).abs() > 1e-9 * steps.max(1.0) || steps < 1.0 {
            return Err(Error::config(
                "time.dt",
                "horizon must be an integer number of steps",
            ));
        }
        Ok(steps as usize)
    }

    pub fn brownian(&self, path: u64) -> BrownianSource {
        BrownianSource {
            seed: self.seed,
            path,
            base_dt: self.base_dt,
            j_count: self.noise.modes,
        }
    }

    pub fn family(&self) -> Result<DiffusionFamily> {
        if self.noise.kind != FamilyKind::Homogeneous {
            return Err(Error::config(
                "noise.kind",
                "homogeneous runs need a homogeneous family",
            ));
        }
        DiffusionFamily::new(self.noise.clone(), self.grid)
    }

    /// Checks every field and returns the realized initial state.
    pub fn validate(&self) -> Result<RealField> {
        self.steps()?;
        if self.paths == 0 {
            return Err(Error::config("ensemble.paths", "must be at least 1"));
        }
        if !(self.base_dt > 0.0 && self.base_dt.is_finite()) {
            return Err(Error::config("time.base_dt", "must be positive and finite"));
        }
        self.brownian(0).substeps(self.dt)?;
        let family = self.family()?;
        if self.scheme == Scheme::Rk4 && !family.is_silent() {
            return Err(Error::config(
                "time.scheme",
                "rk4 is only available without noise (g0 = 0)",
            ));
        }
        let v0 = self.initial.realize(self.grid)?;
        check_stability(&v0, self.dt).map_err(|e| Error::config("time.dt", e.to_string()))?;
        Ok(v0)
    }
}

fn check_stability(v: &RealField, dt: f64) -> Result<()> {
    let vmax = v.max_norm();
    let limit = STABILITY_LIMIT * v.grid().spacing();
    if dt * vmax > limit {
        return Err(Error::Config {
            field: "time.dt".into(),
            reason: format!(
                "dt = {dt} exceeds the stability guard {:.3e} for max|v| = {vmax:.3e}",
                limit / vmax
            ),
        });
    }
    Ok(())
}

/// Why a path stopped early.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathFlag {
    pub step: usize,
    pub reason: String,
}

/// One simulated path with everything needed to replay its ledger.
#[derive(Clone, Debug, PartialEq)]
pub struct SimPath {
    pub path_index: u64,
    pub dt: f64,
    pub times: Vec<f64>,
    pub states: Vec<RealField>,
    pub increments: Vec<WienerIncrements>,
    /// Applied (projected) noise `P[Σ_j G_j(v_n) ΔW_n^j]` per step.
    pub noise: Vec<RealField>,
    pub scheme: Scheme,
    pub dealias: bool,
    pub flag: Option<PathFlag>,
}

impl SimPath {
    pub fn steps(&self) -> usize {
        self.increments.len()
    }

    pub fn final_state(&self) -> &RealField {
        self.states.last().expect("a path holds its initial state")
    }
}

/// `−P div(v⊗v)`.
pub fn drift(v: &RealField, dealias: bool) -> Result<RealField> {
    Ok(nonlinear_term(v, dealias)?.scaled(-1.0))
}

/// Result of one stochastic step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub state: RealField,
    pub noise: RealField,
}

/// One Euler–Maruyama step.
pub fn step(
    v: &RealField,
    dt: f64,
    dw: &WienerIncrements,
    family: &DiffusionFamily,
    dealias: bool,
) -> Result<StepOutcome> {
    let noise = if family.is_silent() {
        RealField::zeros(v.grid(), v.components())
    } else {
        leray_project(&family.forcing(NoiseState::Velocity(v), dw)?)?
    };
    let mut state = v.clone();
    state.add_scaled(dt, &drift(v, dealias)?);
    state.add_scaled(1.0, &noise);
    if !state.is_finite() {
        return Err(Error::NonFinite("velocity after step"));
    }
    Ok(StepOutcome { state, noise })
}

/// One classical RK4 step of `dv/dt = drift(v)`.
pub fn rk4_step(v: &RealField, dt: f64, dealias: bool) -> Result<RealField> {
    let k1 = drift(v, dealias)?;
    let mut y = v.clone();
    y.add_scaled(0.5 * dt, &k1);
    let k2 = drift(&y, dealias)?;
    let mut y = v.clone();
    y.add_scaled(0.5 * dt, &k2);
    let k3 = drift(&y, dealias)?;
    let mut y = v.clone();
    y.add_scaled(dt, &k3);
    let k4 = drift(&y, dealias)?;
    let mut out = v.clone();
    out.add_scaled(dt / 6.0, &k1);
    out.add_scaled(dt / 3.0, &k2);
    out.add_scaled(dt / 3.0, &k3);
    out.add_scaled(dt / 6.0, &k4);
    if !out.is_finite() {
        return Err(Error::NonFinite("velocity after step"));
    }
    Ok(out)
}

fn blow_up_reason(v: &RealField, threshold: f64, dt: f64) -> Option<String> {
    if !v.is_finite() {
        return Some("non-finite velocity".into());
    }
    let vmax = v.max_norm();
    if vmax > threshold {
        return Some(format!("max|v| = {vmax:.3e} exceeds {threshold:.3e}"));
    }
    if dt * vmax > STABILITY_LIMIT * v.grid().spacing() {
        return Some(format!("stability guard violated at max|v| = {vmax:.3e}"));
    }
    None
}

/// Simulates path `path` of the configured ensemble.
pub fn run_path(config: &SimConfig, path: u64) -> Result<SimPath> {
    let v0 = config.validate()?;
    let family = config.family()?;
    let steps = config.steps()?;
    let source = config.brownian(path);
    let threshold = BLOW_UP_FACTOR * v0.max_norm().max(1.0);
    let mut out = SimPath {
        path_index: path,
        dt: config.dt,
        times: vec![0.0],
        states: vec![v0],
        increments: Vec::with_capacity(steps),
        noise: Vec::with_capacity(steps),
        scheme: config.scheme,
        dealias: config.dealias,
        flag: None,
    };
    for n in 0..steps {
        let v = out.final_state();
        let (dw, outcome) = match config.scheme {
            Scheme::EulerMaruyama => {
                let dw = source.increments(n as u64, config.dt)?;
                let outcome = step(v, config.dt, &dw, &family, config.dealias);
                (dw, outcome)
            }
            Scheme::Rk4 => {
                let state = rk4_step(v, config.dt, config.dealias);
                let zero = RealField::zeros(v.grid(), v.components());
                (
                    WienerIncrements::zeros(config.dt, family.len()),
                    state.map(|state| StepOutcome { state, noise: zero }),
                )
            }
        };
        let outcome = match outcome {
            Ok(o) => o,
            Err(Error::NonFinite(_)) => {
                out.flag = Some(PathFlag {
                    step: n + 1,
                    reason: "non-finite velocity".into(),
                });
                break;
            }
            Err(e) => return Err(e),
        };
        if let Some(reason) = blow_up_reason(&outcome.state, threshold, config.dt) {
            out.flag = Some(PathFlag {
                step: n + 1,
                reason,
            });
            break;
        }
        out.times.push((n + 1) as f64 * config.dt);
        out.states.push(outcome.state);
        out.noise.push(outcome.noise);
        out.increments.push(dw);
    }
    Ok(out)
}

/// Single path with index 0.
pub fn run(config: &SimConfig) -> Result<SimPath> {
    run_path(config, 0)
}

/// Per-path results of an ensemble; flagged paths carry no value.
#[derive(Clone, Debug)]
pub struct EnsembleOutcome<T> {
    pub results: Vec<(u64, std::result::Result<T, PathFlag>)>,
}

impl<T> EnsembleOutcome<T> {
    /// Values of unflagged paths in path order.
    pub fn values(&self) -> impl Iterator<Item = &T> {
        self.results.iter().filter_map(|(_, r)| r.as_ref().ok())
    }

    pub fn flagged(&self) -> Vec<(u64, &PathFlag)> {
        self.results
            .iter()
            .filter_map(|(i, r)| r.as_ref().err().map(|f| (*i, f)))
            .collect()
    }
}

/// Runs every path and reduces it with `f` as soon as it finishes, so only
/// the reduced values are kept. Paths run in parallel; results come back in
/// path order.
pub fn map_ensemble<T, F>(config: &SimConfig, f: F) -> Result<EnsembleOutcome<T>>
where
    T: Send,
    F: Fn(&SimPath) -> Result<T> + Sync,
{
    config.validate()?;
    let results: Vec<(u64, std::result::Result<T, PathFlag>)> = (0..config.paths as u64)
        .into_par_iter()
        .map(|p| -> Result<_> {
            let path = run_path(config, p)?;
            Ok(match path.flag.clone() {
                Some(flag) => (p, Err(flag)),
                None => (p, Ok(f(&path)?)),
            })
        })
        .collect::<Result<_>>()?;
    if results.iter().all(|(_, r)| r.is_err()) {
        return Err(Error::AllPathsFlagged(results.len()));
    }
    Ok(EnsembleOutcome { results })
}

/// All paths of the ensemble, flagged ones included.
pub fn run_ensemble(config: &SimConfig) -> Result<Vec<SimPath>> {
    config.validate()?;
    let paths: Vec<SimPath> = (0..config.paths as u64)
        .into_par_iter()
        .map(|p| run_path(config, p))
        .collect::<Result<_>>()?;
    if paths.iter().all(|p| p.flag.is_some()) {
        return Err(Error::AllPathsFlagged(paths.len()));
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{divergence, to_spectral};

    fn config(n: usize, noise: DiffusionSpec) -> SimConfig {
        SimConfig {
            grid: TorusGrid::new(2, n).unwrap(),
            horizon: 0.02,
            dt: 1e-3,
            base_dt: 1e-3,
            noise,
            initial: InitialCondition::TaylorGreen {
                amplitude: 1.0,
                perturbation: 0.2,
            },
            dealias: true,
            scheme: Scheme::EulerMaruyama,
            seed: 42,
            paths: 1,
        }
    }

    fn random_solenoidal(grid: TorusGrid, seed: u64) -> RealField {
        let spec = SyntheticFieldSpec {
            divergence_free: true,
            modes_per_octave: 4,
            ..SyntheticFieldSpec::new(0.5, 3, seed, 1.0)
        };
        make_synthetic_field(&spec, grid, 2).unwrap()
    }

    #[test]
    fn drift_neutral_and_solenoidal() {
        let g = TorusGrid::new(2, 32).unwrap();
        assert_eq!(drift(&RealField::zeros(g, 2), true).unwrap().max_abs(), 0.0);
        let shear = InitialCondition::Shear {
            k: 1,
            amplitude: 1.0,
        }
        .realize(g)
        .unwrap();
        assert!(drift(&shear, true).unwrap().max_abs() < 1e-13);
        for seed in 0..5 {
            let v = random_solenoidal(g, seed);
            let d = drift(&v, true).unwrap();
            assert!(v.inner(&d).abs() <= 1e-11);
            assert!(divergence(&d).unwrap().max_abs() < 1e-10);
        }
    }

    #[test]
    fn zero_noise_steady_shear_is_fixed() {
        let g = TorusGrid::new(2, 32).unwrap();
        let fam = DiffusionFamily::new(DiffusionSpec::silent(4), g).unwrap();
        let v = InitialCondition::Shear {
            k: 2,
            amplitude: 0.5,
        }
        .realize(g)
        .unwrap();
        let out = step(&v, 1e-3, &WienerIncrements::zeros(1e-3, 4), &fam, true).unwrap();
        assert!(out.state.sub(&v).max_abs() < 1e-14);
    }

    #[test]
    fn replay_is_bit_identical() {
        let cfg = config(32, DiffusionSpec::default());
        let path = run(&cfg).unwrap();
        let fam = cfg.family().unwrap();
        let again = step(&path.states[3], cfg.dt, &path.increments[3], &fam, true).unwrap();
        assert_eq!(again.state.data(), path.states[4].data());
        assert_eq!(run(&cfg).unwrap(), path);
    }

    #[test]
    fn path_invariants() {
        let cfg = config(32, DiffusionSpec::default());
        let path = run(&cfg).unwrap();
        assert!(path.flag.is_none());
        assert_eq!(path.states.len(), 21);
        for (i, t) in path.times.iter().enumerate() {
            assert!((t - i as f64 * cfg.dt).abs() < 1e-15);
        }
        for v in &path.states {
            assert!(divergence(v).unwrap().max_abs() <= 1e-10);
        }
        // the k = 0 mode moves only with the k = 0 part of the noise
        for n in 0..path.steps() {
            let before = to_spectral(&path.states[n]).unwrap();
            let after = to_spectral(&path.states[n + 1]).unwrap();
            let noise = to_spectral(&path.noise[n]).unwrap();
            for c in 0..2 {
                let jump = after.coefficient(c, &[0, 0])
                    - before.coefficient(c, &[0, 0])
                    - noise.coefficient(c, &[0, 0]);
                assert!(jump.norm() < 1e-15);
            }
        }
    }

    #[test]
    fn silent_ensemble_matches_deterministic_solver() {
        let mut cfg = config(32, DiffusionSpec::silent(4));
        cfg.paths = 3;
        let paths = run_ensemble(&cfg).unwrap();
        let mut v = cfg.initial.realize(cfg.grid).unwrap();
        for _ in 0..20 {
            v.add_scaled(cfg.dt, &drift(&v, true).unwrap());
        }
        for p in &paths {
            assert_eq!(p.final_state().data(), v.data());
        }
    }

    #[test]
    fn ensemble_paths_use_disjoint_streams() {
        let mut cfg = config(16, DiffusionSpec::default());
        cfg.paths = 3;
        let paths = run_ensemble(&cfg).unwrap();
        assert_ne!(paths[0].increments[0], paths[1].increments[0]);
        assert_ne!(paths[1].increments[0], paths[2].increments[0]);
        assert_eq!(run_ensemble(&cfg).unwrap(), paths);
        let mapped = map_ensemble(&cfg, |p| Ok(p.final_state().energy())).unwrap();
        let direct: Vec<f64> = paths.iter().map(|p| p.final_state().energy()).collect();
        assert_eq!(mapped.values().copied().collect::<Vec<_>>(), direct);
    }

    #[test]
    fn rk4_conserves_energy() {
        let mut cfg = config(64, DiffusionSpec::silent(1));
        cfg.scheme = Scheme::Rk4;
        cfg.horizon = 0.25;
        let path = run(&cfg).unwrap();
        let e0 = path.states[0].energy();
        let drift = (path.final_state().energy() - e0).abs() / e0;
        assert!(drift <= 1e-6, "{drift}");
        // the perturbed flow is not steady
        assert!(path.final_state().sub(&path.states[0]).max_abs() > 1e-3);
    }

    #[test]
    fn strong_convergence_with_nested_increments() {
        let mut base = config(
            32,
            DiffusionSpec {
                g0: 1.0,
                ..DiffusionSpec::default()
            },
        );
        base.horizon = 0.128;
        base.base_dt = 1.25e-4;
        let terminal = |dt: f64, path: u64| {
            let mut c = base.clone();
            c.dt = dt;
            run_path(&c, path).unwrap().final_state().clone()
        };
        let references: Vec<RealField> = (0..8).map(|p| terminal(1.25e-4, p)).collect();
        let rms = |dt: f64| {
            let s: f64 = references
                .iter()
                .enumerate()
                .map(|(p, r)| terminal(dt, p as u64).sub(r).energy())
                .sum();
            (s / 8.0).sqrt()
        };
        let errs: Vec<f64> = [4e-3, 2e-3, 1e-3, 5e-4].into_iter().map(rms).collect();
        assert!(errs.windows(2).all(|w| w[0] > w[1]), "{errs:?}");
    }

    #[test]
    fn config_errors_name_fields() {
        let mut cfg = config(32, DiffusionSpec::default());
        cfg.dt = 0.0;
        assert!(matches!(cfg.validate(), Err(Error::Config { field, .. }) if field == "time.dt"));
        let mut cfg = config(32, DiffusionSpec::default());
        cfg.dt = 0.01;
        cfg.horizon = 0.02;
        cfg.base_dt = 0.01;
        assert!(matches!(cfg.validate(), Err(Error::Config { field, .. }) if field == "time.dt"));
        let mut cfg = config(32, DiffusionSpec::default());
        cfg.scheme = Scheme::Rk4;
        assert!(
            matches!(cfg.validate(), Err(Error::Config { field, .. }) if field == "time.scheme")
        );
        let mut cfg = config(32, DiffusionSpec::default());
        cfg.base_dt = 3e-4;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn blow_up_flags_path() {
        let mut cfg = config(
            32,
            DiffusionSpec {
                g0: 200.0,
                profile: crate::noise::Profile::Linear,
                ..DiffusionSpec::default()
            },
        );
        cfg.horizon = 0.2;
        let path = run(&cfg).unwrap();
        let flag = path
            .flag
            .as_ref()
            .expect("strong linear noise must trip the detector");
        assert_eq!(path.states.len(), flag.step);
        cfg.paths = 2;
        assert!(matches!(run_ensemble(&cfg), Err(Error::AllPathsFlagged(2))));
    }
}
