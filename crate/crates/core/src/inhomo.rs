//! Variable-density stochastic Euler integration on the 2-D torus.
//!
//! State is `(ρ, m)` with `v = m/ρ`. One step:
//!
//! 1. `ρ' = ρ − dt·div m`
//! 2. `b = m − dt·div(m⊗v)`, `N = Σ_j G̃_j(·, ρ, m) ΔW^j`
//! 3. `m' = (b − ∇q) + (N − ∇q_N)` where `q`, `q_N` solve
//!    `div((1/ρ')∇q) = div(b/ρ')` (resp. with `N`), so `div(m'/ρ') = 0`.
//!
//! The pressure is `p = q/dt`. The noise pressure `q_N` is kept apart so the
//! applied noise `N − ∇q_N` can be replayed by the ledger.

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::euler::{InitialCondition, PathFlag, BLOW_UP_FACTOR, STABILITY_LIMIT};
use crate::field::{integrate, spectral_unchecked, to_physical, RealField, SpectralRep, TorusGrid};
use crate::noise::{
    BrownianSource, DiffusionFamily, DiffusionSpec, FamilyKind, NoiseState, WienerIncrements,
};
use crate::regularity::{make_synthetic_field, SyntheticFieldSpec};

/// Initial density.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensityInit {
    Uniform {
        value: f64,
    },
    /// `background + amplitude·exp(−|x − center|²/radius²)` with the periodic
    /// distance.
    Bump {
        background: f64,
        amplitude: f64,
        center: [f64; 2],
        radius: f64,
    },
    /// `mean + spread·f/max|f|` for a lacunary `f`.
    Synthetic {
        field: SyntheticFieldSpec,
        mean: f64,
        spread: f64,
    },
}

fn periodic_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    d.min(1.0 - d)
}

impl DensityInit {
    pub fn realize(&self, grid: TorusGrid) -> Result<RealField> {
        match self {
            DensityInit::Uniform { value } => Ok(RealField::constant(grid, &[*value])),
            DensityInit::Bump {
                background,
                amplitude,
                center,
                radius,
            } => {
                if *radius <= 0.0 {
                    return Err(Error::config("density.radius", "must be positive"));
                }
                let data = RealField::from_fn(grid, 1, |_, x| {
                    let mut r2 = periodic_gap(x[0], center[0]).powi(2);
                    if grid.dim() == 2 {
                        r2 += periodic_gap(x[1], center[1]).powi(2);
                    }
                    background + amplitude * (-r2 / (radius * radius)).exp()
                });
                RealField::new(grid, 1, data.into_data())
            }
            DensityInit::Synthetic {
                field,
                mean,
                spread,
            } => {
                let f = make_synthetic_field(field, grid, 1)?;
                let peak = f.max_abs().max(1e-300);
                Ok(f.map(|x| mean + spread * x / peak))
            }
        }
    }
}

fn default_tolerance() -> f64 {
    1e-8
}
fn default_iterations() -> usize {
    500
}

/// Stopping rule of the pressure solve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    /// Relative residual `‖r‖/‖b‖`.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_iterations")]
    pub max_iterations: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            tolerance: default_tolerance(),
            max_iterations: default_iterations(),
        }
    }
}

/// Everything that determines a variable-density run.
#[derive(Clone, Debug, PartialEq)]
pub struct InhomoConfig {
    pub grid: TorusGrid,
    pub horizon: f64,
    pub dt: f64,
    pub base_dt: f64,
    pub noise: DiffusionSpec,
    pub velocity: InitialCondition,
    pub density: DensityInit,
    /// Lower density bound `r̄`.
    pub rho_floor: f64,
    pub dealias: bool,
    pub solver: SolverSettings,
    pub seed: u64,
    pub paths: usize,
}

/// Initial `(ρ, m, v)`.
#[derive(Clone, Debug, PartialEq)]
pub struct InhomoState {
    pub rho: RealField,
    pub momentum: RealField,
    pub velocity: RealField,
}

impl InhomoState {
    pub fn from_velocity(rho: RealField, velocity: RealField) -> Result<Self> {
        if rho.grid() != velocity.grid() || rho.components() != 1 {
            return Err(Error::Shape(
                "density must be a scalar field on the velocity grid".into(),
            ));
        }
        let momentum = velocity.mul_scalar_field(&rho);
        Ok(InhomoState {
            rho,
            momentum,
            velocity,
        })
    }
}

impl InhomoConfig {
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
        if self.noise.kind != FamilyKind::Inhomogeneous {
            return Err(Error::config(
                "noise.kind",
                "variable-density runs need an inhomogeneous family",
            ));
        }
        DiffusionFamily::new(self.noise.clone(), self.grid)
    }

    pub fn validate(&self) -> Result<InhomoState> {
        self.steps()?;
        if self.paths == 0 {
            return Err(Error::config("ensemble.paths", "must be at least 1"));
        }
        if !(self.base_dt > 0.0 && self.base_dt.is_finite()) {
            return Err(Error::config("time.base_dt", "must be positive and finite"));
        }
        self.brownian(0).substeps(self.dt)?;
        self.family()?;
        if !(self.rho_floor > 0.0 && self.rho_floor.is_finite()) {
            return Err(Error::config(
                "density.floor",
                "must be positive and finite",
            ));
        }
        if !(self.solver.tolerance > 0.0 && self.solver.max_iterations > 0) {
            return Err(Error::config(
                "solver",
                "tolerance and iteration cap must be positive",
            ));
        }
        let v0 = self.velocity.realize(self.grid)?;
        let rho0 = self.density.realize(self.grid)?;
        let min = rho0.min();
        if min < self.rho_floor {
            return Err(Error::config(
                "density",
                format!(
                    "initial min rho = {min} is below the floor {}",
                    self.rho_floor
                ),
            ));
        }
        let vmax = v0.max_norm();
        if self.dt * vmax > STABILITY_LIMIT * self.grid.spacing() {
            return Err(Error::config(
                "time.dt",
                format!(
                    "dt = {} violates the stability guard for max|v| = {vmax:.3e}",
                    self.dt
                ),
            ));
        }
        InhomoState::from_velocity(rho0, v0)
    }
}

fn truncated(f: &RealField, dealias: bool) -> RealField {
    if !dealias {
        return f.clone();
    }
    let mut s = spectral_unchecked(f);
    s.truncate();
    to_physical(&s)
}

fn spectral_divergence_rows(s: &SpectralRep, d: usize) -> Vec<Complex64> {
    let grid = s.grid();
    let len = grid.len();
    let mut out = vec![Complex64::default(); d * len];
    for i in 0..d {
        for j in 0..d {
            let dst = &mut out[i * len..(i + 1) * len];
            for (idx, (o, z)) in dst.iter_mut().zip(s.component(i * d + j)).enumerate() {
                let k = grid.derivative_symbol(idx)[j];
                *o += Complex64::new(-k * z.im, k * z.re);
            }
        }
    }
    out
}

/// `div(a⊗b)` with row `i` equal to `Σ_j ∂_j(a_i b_j)`.
fn flux_divergence(a: &RealField, b: &RealField, dealias: bool) -> RealField {
    let grid = a.grid();
    let d = grid.dim();
    let (at, bt) = (truncated(a, dealias), truncated(b, dealias));
    let mut flux = RealField::zeros(grid, d * d);
    for i in 0..d {
        for j in 0..d {
            let dst = flux.component_mut(i * d + j);
            for ((o, &x), &y) in dst.iter_mut().zip(at.component(i)).zip(bt.component(j)) {
                *o = x * y;
            }
        }
    }
    let mut fs = spectral_unchecked(&flux);
    if dealias {
        fs.truncate();
    }
    to_physical(&SpectralRep::from_parts(
        grid,
        d,
        spectral_divergence_rows(&fs, d),
    ))
}

fn div(u: &RealField) -> RealField {
    let s = spectral_unchecked(u);
    let grid = u.grid();
    let mut out = vec![Complex64::default(); grid.len()];
    for axis in 0..grid.dim() {
        for (idx, (o, z)) in out.iter_mut().zip(s.component(axis)).enumerate() {
            let k = grid.derivative_symbol(idx)[axis];
            *o += Complex64::new(-k * z.im, k * z.re);
        }
    }
    to_physical(&SpectralRep::from_parts(grid, 1, out))
}

fn grad(q: &RealField) -> RealField {
    let s = spectral_unchecked(q);
    let grid = q.grid();
    let mut coeffs = Vec::with_capacity(grid.dim() * grid.len());
    for axis in 0..grid.dim() {
        coeffs.extend(s.component(0).iter().enumerate().map(|(idx, z)| {
            let k = grid.derivative_symbol(idx)[axis];
            Complex64::new(-k * z.im, k * z.re)
        }));
    }
    to_physical(&SpectralRep::from_parts(grid, grid.dim(), coeffs))
}

/// `ρ − dt·div(ρv)`.
pub fn density_step(rho: &RealField, v: &RealField, dt: f64, dealias: bool) -> Result<RealField> {
    if rho.components() != 1 || v.components() != rho.grid().dim() || v.grid() != rho.grid() {
        return Err(Error::Shape(
            "density_step expects a scalar density and a d-component velocity".into(),
        ));
    }
    let m = truncated(&v.mul_scalar_field(rho), dealias);
    let mut out = rho.clone();
    out.add_scaled(-dt, &div(&m));
    Ok(out)
}

/// Pressure returned by [`pressure_solve`].
#[derive(Clone, Debug, PartialEq)]
pub struct PressureSolution {
    pub pressure: RealField,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Zero-mean `p` with `div((1/ρ)∇p) = div(rhs/ρ)`, by conjugate gradients
/// preconditioned with the constant-coefficient spectral inverse.
pub fn pressure_solve(
    rho: &RealField,
    rhs: &RealField,
    settings: SolverSettings,
) -> Result<PressureSolution> {
    let grid = rho.grid();
    if rho.components() != 1 || rhs.components() != grid.dim() || rhs.grid() != grid {
        return Err(Error::Shape(
            "pressure_solve expects a scalar density and a d-component rhs".into(),
        ));
    }
    let min = rho.min();
    if !(min > 0.0) {
        return Err(Error::DensityBound {
            min_rho: min,
            bound: 0.0,
        });
    }
    let inv_rho = rho.map(|r| 1.0 / r);
    let c = integrate(&inv_rho);
    // A q = −div((1/ρ)∇q), symmetric positive on mean-free fields
    let apply = |q: &RealField| div(&grad(q).mul_scalar_field(&inv_rho)).scaled(-1.0);
    let precondition = |r: &RealField| {
        let mut s = spectral_unchecked(r);
        for (idx, z) in s.component_mut(0).iter_mut().enumerate() {
            let k = grid.derivative_symbol(idx);
            let k2 = k[0] * k[0] + k[1] * k[1];
            *z = if k2 == 0.0 {
                Complex64::default()
            } else {
                *z / (c * k2)
            };
        }
        to_physical(&s)
    };
    let b = div(&rhs.mul_scalar_field(&inv_rho)).scaled(-1.0);
    let b_norm = b.l2_norm();
    let mut x = RealField::zeros(grid, 1);
    if b_norm == 0.0 {
        return Ok(PressureSolution {
            pressure: x,
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut r = b.clone();
    let mut z = precondition(&r);
    let mut p = z.clone();
    let mut rz = r.inner(&z);
    let mut rel = 1.0;
    for it in 1..=settings.max_iterations {
        let ap = apply(&p);
        let alpha = rz / p.inner(&ap);
        x.add_scaled(alpha, &p);
        r.add_scaled(-alpha, &ap);
        rel = r.l2_norm() / b_norm;
        if rel <= settings.tolerance {
            let mean = integrate(&x);
            return Ok(PressureSolution {
                pressure: x.map(|v| v - mean),
                iterations: it,
                relative_residual: rel,
            });
        }
        z = precondition(&r);
        let rz_next = r.inner(&z);
        let beta = rz_next / rz;
        rz = rz_next;
        let mut next = z.clone();
        next.add_scaled(beta, &p);
        p = next;
    }
    Err(Error::SolverDiverged {
        iterations: settings.max_iterations,
        residual: rel,
    })
}

/// Result of one variable-density step.
#[derive(Clone, Debug, PartialEq)]
pub struct InhomoStep {
    pub state: InhomoState,
    /// `q/dt`, zero mean.
    pub pressure: RealField,
    /// `N − ∇q_N`.
    pub noise: RealField,
    pub iterations: usize,
}

/// Advances `(ρ, m)` by one Euler–Maruyama step.
pub fn momentum_step(
    state: &InhomoState,
    dt: f64,
    dw: &WienerIncrements,
    family: &DiffusionFamily,
    dealias: bool,
    settings: SolverSettings,
) -> Result<InhomoStep> {
    let rho_next = density_step(&state.rho, &state.velocity, dt, dealias)?;
    let mut b = state.momentum.clone();
    b.add_scaled(
        -dt,
        &flux_divergence(&state.momentum, &state.velocity, dealias),
    );
    let det = pressure_solve(&rho_next, &b, settings)?;
    let mut momentum = b;
    momentum.add_scaled(-1.0, &grad(&det.pressure));
    let mut iterations = det.iterations;
    let noise = if family.is_silent() {
        RealField::zeros(state.rho.grid(), state.momentum.components())
    } else {
        let raw = family.forcing(
            NoiseState::DensityMomentum {
                rho: &state.rho,
                momentum: &state.momentum,
            },
            dw,
        )?;
        let qn = pressure_solve(&rho_next, &raw, settings)?;
        iterations += qn.iterations;
        raw.sub(&grad(&qn.pressure))
    };
    momentum.add_scaled(1.0, &noise);
    if !momentum.is_finite() || !rho_next.is_finite() {
        return Err(Error::NonFinite("state after step"));
    }
    let inv = rho_next.map(|r| 1.0 / r);
    let velocity = momentum.mul_scalar_field(&inv);
    Ok(InhomoStep {
        state: InhomoState {
            rho: rho_next,
            momentum,
            velocity,
        },
        pressure: det.pressure.scaled(1.0 / dt),
        noise,
        iterations,
    })
}

/// One variable-density path.
#[derive(Clone, Debug, PartialEq)]
pub struct InhomoPath {
    pub path_index: u64,
    pub dt: f64,
    pub rho_floor: f64,
    pub times: Vec<f64>,
    pub states: Vec<InhomoState>,
    /// Pressure used to advance from `t_n`.
    pub pressure: Vec<RealField>,
    pub increments: Vec<WienerIncrements>,
    /// Applied noise `N − ∇q_N` per step.
    pub noise: Vec<RealField>,
    pub solver_iterations: Vec<usize>,
    /// `max_n |∫ρ_n − ∫ρ_0| / ∫ρ_0`.
    pub mass_drift: f64,
    pub min_rho: f64,
    pub flag: Option<PathFlag>,
}

impl InhomoPath {
    pub fn steps(&self) -> usize {
        self.increments.len()
    }

    pub fn final_state(&self) -> &InhomoState {
        self.states.last().expect("a path holds its initial state")
    }
}

pub fn run_inhomo_path(config: &InhomoConfig, path: u64) -> Result<InhomoPath> {
    let init = config.validate()?;
    let family = config.family()?;
    let steps = config.steps()?;
    let source = config.brownian(path);
    let mass0 = integrate(&init.rho);
    let threshold = BLOW_UP_FACTOR * init.velocity.max_norm().max(1.0);
    let mut out = InhomoPath {
        path_index: path,
        dt: config.dt,
        rho_floor: config.rho_floor,
        times: vec![0.0],
        min_rho: init.rho.min(),
        states: vec![init],
        pressure: Vec::with_capacity(steps),
        increments: Vec::with_capacity(steps),
        noise: Vec::with_capacity(steps),
        solver_iterations: Vec::with_capacity(steps),
        mass_drift: 0.0,
        flag: None,
    };
    for n in 0..steps {
        let dw = source.increments(n as u64, config.dt)?;
        let step = match momentum_step(
            out.final_state(),
            config.dt,
            &dw,
            &family,
            config.dealias,
            config.solver,
        ) {
            Ok(s) => s,
            Err(Error::NonFinite(_)) | Err(Error::DensityBound { .. }) => {
                out.flag = Some(PathFlag {
                    step: n + 1,
                    reason: "non-finite or non-positive state".into(),
                });
                break;
            }
            Err(e) => return Err(e),
        };
        let min = step.state.rho.min();
        out.min_rho = out.min_rho.min(min);
        if min < config.rho_floor {
            out.flag = Some(PathFlag {
                step: n + 1,
                reason: format!("min rho = {min:.6} below the floor {}", config.rho_floor),
            });
            break;
        }
        let vmax = step.state.velocity.max_norm();
        if vmax > threshold || config.dt * vmax > STABILITY_LIMIT * config.grid.spacing() {
            out.flag = Some(PathFlag {
                step: n + 1,
                reason: format!("max|v| = {vmax:.3e} breaks the blow-up or stability guard"),
            });
            break;
        }
        out.mass_drift = out
            .mass_drift
            .max((integrate(&step.state.rho) - mass0).abs() / mass0.abs());
        out.times.push((n + 1) as f64 * config.dt);
        out.states.push(step.state);
        out.pressure.push(step.pressure);
        out.noise.push(step.noise);
        out.increments.push(dw);
        out.solver_iterations.push(step.iterations);
    }
    Ok(out)
}

pub fn run_inhomo(config: &InhomoConfig) -> Result<InhomoPath> {
    run_inhomo_path(config, 0)
}

/// Runs every path and keeps only `f(path)`; `None` marks flagged paths.
pub fn map_inhomo_ensemble<T, F>(
    config: &InhomoConfig,
    f: F,
) -> Result<Vec<(u64, std::result::Result<T, PathFlag>)>>
where
    T: Send,
    F: Fn(&InhomoPath) -> Result<T> + Sync,
{
    config.validate()?;
    let results: Vec<(u64, std::result::Result<T, PathFlag>)> = (0..config.paths as u64)
        .into_par_iter()
        .map(|p| -> Result<_> {
            let path = run_inhomo_path(config, p)?;
            Ok(match path.flag.clone() {
                Some(flag) => (p, Err(flag)),
                None => (p, Ok(f(&path)?)),
            })
        })
        .collect::<Result<_>>()?;
    if results.iter().all(|(_, r)| r.is_err()) {
        return Err(Error::AllPathsFlagged(results.len()));
    }
    Ok(results)
}
