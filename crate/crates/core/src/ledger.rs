//! Energy budgets along simulated paths, ensemble martingale statistics and
//! commutator diagnostics.
//!
//! Homogeneous budget, per step `n` with `Δ = v_{n+1} − v_n` and applied
//! noise `F_n`:
//!
//! ```text
//! |v_{n+1}|² − |v_n|² = 2⟨v_n, Δ − F_n⟩ + 2⟨v_n, F_n⟩ + |Δ|²
//!   ito_n       = dt · Σ_k ‖P G_k(v_n)‖²
//!   martingale  = 2⟨v_n, F_n⟩
//!   remainder   = 2⟨v_n, Δ − F_n⟩ + |Δ|² − ito_n
//! ```
//!
//! so `kinetic(t) − kinetic(0) − ito − martingale − remainder` vanishes up to
//! round-off. In expectation `|Δ|²` carries the Itô term, so the remainder
//! tends to zero with `dt`. All quadratures are left-endpoint.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::euler::SimPath;
use crate::field::{gradient, to_spectral, RealField, TorusGrid};
use crate::inhomo::{pressure_solve, InhomoPath, SolverSettings};
use crate::mollify::MollifierKernel;
use crate::noise::{apply_diffusion, DiffusionFamily, FamilyKind, NoiseState};
use crate::regularity::least_squares;

/// `Σ_{k≤J} ‖P G_k(v)‖²`.
pub fn projected_ito_rate(family: &DiffusionFamily, v: &RealField, j_count: usize) -> Result<f64> {
    if j_count > family.len() {
        return Err(Error::ModeOutOfRange {
            j: j_count,
            len: family.len(),
        });
    }
    let mut total = 0.0;
    for k in 1..=j_count {
        if family.coefficients()[k - 1] == 0.0 {
            continue;
        }
        let g = apply_diffusion(family, NoiseState::Velocity(v), k)?;
        total += to_spectral(&g)?.projected_energy();
    }
    Ok(total)
}

/// One output time of a homogeneous budget. Every term is cumulative.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LedgerRow {
    pub time: f64,
    pub kinetic: f64,
    pub ito_term: f64,
    pub martingale_term: f64,
    /// `Σ 2⟨v_n, Δ_n − F_n⟩`, zero for an energy-neutral drift up to `O(dt²)`.
    pub drift_pairing: f64,
    /// `Σ |Δ_n|²`.
    pub quadratic_variation: f64,
    pub discrete_remainder: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyLedger {
    pub path_index: u64,
    pub rows: Vec<LedgerRow>,
}

impl EnergyLedger {
    /// `max_t |residual(t)| / kinetic(0)`.
    pub fn relative_residual(&self) -> f64 {
        let k0 = self.rows[0].kinetic.abs().max(f64::MIN_POSITIVE);
        self.rows
            .iter()
            .map(|r| r.residual.abs())
            .fold(0.0, f64::max)
            / k0
    }

    /// Row at the output time closest to `t`.
    pub fn at(&self, t: f64) -> &LedgerRow {
        self.rows
            .iter()
            .min_by(|a, b| (a.time - t).abs().total_cmp(&(b.time - t).abs()))
            .expect("a ledger has at least one row")
    }
}

fn check_replayable(states: usize, increments: usize, noise: usize) -> Result<()> {
    if states != increments + 1 || noise != increments {
        return Err(Error::NotReplayable(format!(
            "{states} states, {increments} increment records, {noise} noise records"
        )));
    }
    Ok(())
}

pub fn homogeneous_budget(
    path: &SimPath,
    family: &DiffusionFamily,
    j_count: usize,
) -> Result<EnergyLedger> {
    if let Some(flag) = &path.flag {
        return Err(Error::NotReplayable(format!(
            "path flagged at step {}: {}",
            flag.step, flag.reason
        )));
    }
    check_replayable(path.states.len(), path.increments.len(), path.noise.len())?;
    if family.kind() != FamilyKind::Homogeneous {
        return Err(Error::config(
            "noise.kind",
            "homogeneous budget needs a homogeneous family",
        ));
    }
    let k0 = path.states[0].energy();
    let mut row = LedgerRow {
        time: path.times[0],
        kinetic: k0,
        ito_term: 0.0,
        martingale_term: 0.0,
        drift_pairing: 0.0,
        quadratic_variation: 0.0,
        discrete_remainder: 0.0,
        residual: 0.0,
    };
    let mut rows = Vec::with_capacity(path.states.len());
    rows.push(row);
    for n in 0..path.steps() {
        let v = &path.states[n];
        let dv = path.states[n + 1].sub(v);
        let noise = &path.noise[n];
        let ito = path.dt * projected_ito_rate(family, v, j_count)?;
        let mart = 2.0 * v.inner(noise);
        let pairing = 2.0 * v.inner(&dv.sub(noise));
        let qv = dv.energy();
        row.time = path.times[n + 1];
        row.kinetic = path.states[n + 1].energy();
        row.ito_term += ito;
        row.martingale_term += mart;
        row.drift_pairing += pairing;
        row.quadratic_variation += qv;
        row.discrete_remainder += pairing + qv - ito;
        row.residual =
            row.kinetic - k0 - row.ito_term - row.martingale_term - row.discrete_remainder;
        rows.push(row);
    }
    Ok(EnergyLedger {
        path_index: path.path_index,
        rows,
    })
}

/// Minimum ensemble size for [`martingale_stats`].
pub const MIN_ENSEMBLE: usize = 8;

/// Cross-path statistics of one ledger column.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MartingaleReport {
    pub paths: usize,
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub standard_error: Vec<f64>,
    pub z_score: Vec<f64>,
    /// Output times with `|z| > 4`.
    pub flagged_times: Vec<f64>,
}

fn mean_and_se(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn aligned(ledgers: &[EnergyLedger]) -> Result<usize> {
    if ledgers.len() < MIN_ENSEMBLE {
        return Err(Error::config(
            "ensemble.paths",
            format!("need at least {MIN_ENSEMBLE} paths, got {}", ledgers.len()),
        ));
    }
    let rows = ledgers[0].rows.len();
    if ledgers.iter().any(|l| l.rows.len() != rows) {
        return Err(Error::Shape("ledgers have different lengths".into()));
    }
    Ok(rows)
}

pub fn martingale_stats(ledgers: &[EnergyLedger]) -> Result<MartingaleReport> {
    let rows = aligned(ledgers)?;
    let mut report = MartingaleReport {
        paths: ledgers.len(),
        times: Vec::with_capacity(rows),
        mean: Vec::with_capacity(rows),
        standard_error: Vec::with_capacity(rows),
        z_score: Vec::with_capacity(rows),
        flagged_times: Vec::new(),
    };
    for i in 0..rows {
        let (mean, se) = mean_and_se(ledgers.iter().map(|l| l.rows[i].martingale_term));
        let z = if se > 0.0 { mean / se } else { 0.0 };
        let t = ledgers[0].rows[i].time;
        if z.abs() > 4.0 {
            report.flagged_times.push(t);
        }
        report.times.push(t);
        report.mean.push(mean);
        report.standard_error.push(se);
        report.z_score.push(z);
    }
    Ok(report)
}

/// Ensemble comparison of `kinetic(t) − kinetic(0)` with `ito_term(t)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ItoCheck {
    pub time: f64,
    pub mean_energy_change: f64,
    pub mean_ito_term: f64,
    /// Standard error of the per-path difference.
    pub standard_error: f64,
    pub passed: bool,
}

/// Passes when the mean difference lies within 3 standard errors of zero.
pub fn ito_expectation_check(ledgers: &[EnergyLedger], times: &[f64]) -> Result<Vec<ItoCheck>> {
    aligned(ledgers)?;
    Ok(times
        .iter()
        .map(|&t| {
            let rows: Vec<&LedgerRow> = ledgers.iter().map(|l| l.at(t)).collect();
            let n = rows.len() as f64;
            let mean_energy_change = ledgers
                .iter()
                .map(|l| l.at(t).kinetic - l.rows[0].kinetic)
                .sum::<f64>()
                / n;
            let mean_ito_term = rows.iter().map(|r| r.ito_term).sum::<f64>() / n;
            let (diff, se) = mean_and_se(ledgers.iter().map(|l| {
                let r = l.at(t);
                r.kinetic - l.rows[0].kinetic - r.ito_term
            }));
            ItoCheck {
                time: rows[0].time,
                mean_energy_change,
                mean_ito_term,
                standard_error: se,
                passed: diff.abs() <= 3.0 * se,
            }
        })
        .collect())
}

/// Smooth bump `θ` supported in `(center − width, center + width)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TimeBump {
    pub center: f64,
    pub width: f64,
}

impl TimeBump {
    pub fn value(&self, t: f64) -> f64 {
        let s = (t - self.center) / self.width;
        if s.abs() < 1.0 {
            (-1.0 / (1.0 - s * s)).exp()
        } else {
            0.0
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        let s = (t - self.center) / self.width;
        if s.abs() < 1.0 {
            let q = 1.0 - s * s;
            (-1.0 / q).exp() * (-2.0 * s / (q * q)) / self.width
        } else {
            0.0
        }
    }
}

/// Spatial weight `Ψ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum SpaceWeight {
    One,
    /// Periodic bump of the given radius (< 1/2).
    Bump {
        center: [f64; 2],
        radius: f64,
    },
}

fn periodic_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    d.min(1.0 - d)
}

impl SpaceWeight {
    pub fn field(&self, grid: TorusGrid) -> RealField {
        match *self {
            SpaceWeight::One => RealField::constant(grid, &[1.0]),
            SpaceWeight::Bump { center, radius } => RealField::from_fn(grid, 1, |_, x| {
                let mut r2 = periodic_gap(x[0], center[0]).powi(2);
                if grid.dim() == 2 {
                    r2 += periodic_gap(x[1], center[1]).powi(2);
                }
                let s2 = r2 / (radius * radius);
                if s2 < 1.0 {
                    (-1.0 / (1.0 - s2)).exp()
                } else {
                    0.0
                }
            }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TestFunctionPair {
    pub theta: TimeBump,
    pub psi: SpaceWeight,
}

impl TestFunctionPair {
    /// Three time bumps inside `(0, horizon)` times `{Ψ ≡ 1, two bumps}`.
    pub fn default_family(horizon: f64) -> Vec<TestFunctionPair> {
        let thetas = [(0.5, 0.45), (0.4, 0.3), (0.6, 0.3)].map(|(c, w)| TimeBump {
            center: c * horizon,
            width: w * horizon,
        });
        let psis = [
            SpaceWeight::One,
            SpaceWeight::Bump {
                center: [0.3, 0.4],
                radius: 0.3,
            },
            SpaceWeight::Bump {
                center: [0.7, 0.65],
                radius: 0.3,
            },
        ];
        thetas
            .iter()
            .flat_map(|&theta| psis.iter().map(move |&psi| TestFunctionPair { theta, psi }))
            .collect()
    }
}

/// The four terms of the weighted balance and their sum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WeightedLedger {
    /// `Σ θ'(t_n) ∫ ½ρ|v|² Ψ dt`.
    pub time_derivative: f64,
    /// `Σ θ(t_n) ∫ v(½ρ|v|² + p)·∇Ψ dt`.
    pub flux: f64,
    /// `Σ θ(t_n) ∫ Σ_k |Ĝ_k|²/(2ρ) Ψ dt`.
    pub ito: f64,
    /// `Σ θ(t_n) ∫ v·(applied noise) Ψ`.
    pub martingale: f64,
    pub residual: f64,
}

impl WeightedLedger {
    fn from_terms(time_derivative: f64, flux: f64, ito: f64, martingale: f64) -> Self {
        WeightedLedger {
            time_derivative,
            flux,
            ito,
            martingale,
            residual: time_derivative + flux + ito + martingale,
        }
    }
}

fn check_support(pair: &TestFunctionPair, horizon: f64) -> Result<()> {
    let TimeBump { center, width } = pair.theta;
    if !(width > 0.0 && center - width >= 0.0 && center + width <= horizon + 1e-12) {
        return Err(Error::config(
            "theta",
            format!("bump ({center}, {width}) is not supported in (0, {horizon})"),
        ));
    }
    if let SpaceWeight::Bump { radius, .. } = pair.psi {
        if !(radius > 0.0 && radius < 0.5) {
            return Err(Error::config("psi", "bump radius must lie in (0, 1/2)"));
        }
    }
    Ok(())
}

/// Weighted budget for each test pair, sharing the per-step fields.
pub fn inhomo_budgets(
    path: &InhomoPath,
    pairs: &[TestFunctionPair],
    family: &DiffusionFamily,
    j_count: usize,
) -> Result<Vec<WeightedLedger>> {
    if let Some(flag) = &path.flag {
        return Err(Error::NotReplayable(format!(
            "path flagged at step {}: {}",
            flag.step, flag.reason
        )));
    }
    check_replayable(path.states.len(), path.increments.len(), path.noise.len())?;
    if path.pressure.len() != path.steps() {
        return Err(Error::NotReplayable("missing pressure records".into()));
    }
    if family.kind() != FamilyKind::Inhomogeneous {
        return Err(Error::config(
            "noise.kind",
            "weighted budget needs an inhomogeneous family",
        ));
    }
    if j_count > family.len() {
        return Err(Error::ModeOutOfRange {
            j: j_count,
            len: family.len(),
        });
    }
    for s in &path.states {
        let min = s.rho.min();
        if min < path.rho_floor {
            return Err(Error::DensityBound {
                min_rho: min,
                bound: path.rho_floor,
            });
        }
    }
    let horizon = path.dt * path.steps() as f64;
    for pair in pairs {
        check_support(pair, horizon)?;
    }
    let grid = path.states[0].rho.grid();
    let mut psis: Vec<(RealField, Option<RealField>)> = Vec::with_capacity(pairs.len());
    for p in pairs {
        let psi = p.psi.field(grid);
        let grad = match p.psi {
            SpaceWeight::One => None,
            SpaceWeight::Bump { .. } => Some(gradient(&psi)?),
        };
        psis.push((psi, grad));
    }
    let settings = SolverSettings {
        tolerance: 1e-10,
        ..SolverSettings::default()
    };
    let dt = path.dt;
    let mut acc = vec![[0.0f64; 4]; pairs.len()];
    for n in 0..path.steps() {
        let t = path.times[n];
        let thetas: Vec<(f64, f64)> = pairs
            .iter()
            .map(|p| (p.theta.value(t), p.theta.derivative(t)))
            .collect();
        if thetas.iter().all(|&(a, b)| a == 0.0 && b == 0.0) {
            continue;
        }
        let state = &path.states[n];
        let energy = state.momentum.pointwise_dot(&state.velocity).scaled(0.5);
        let active = thetas.iter().any(|&(a, _)| a != 0.0);
        let flux_density = energy.add(&path.pressure[n]);
        let pairing = state.velocity.pointwise_dot(&path.noise[n]);
        let ito_density = if active && !family.is_silent() {
            let rho_next = &path.states[n + 1].rho;
            let inv2 = state.rho.map(|r| 0.5 / r);
            let mut total = RealField::zeros(grid, 1);
            let raw_state = NoiseState::DensityMomentum {
                rho: &state.rho,
                momentum: &state.momentum,
            };
            for k in 1..=j_count {
                if family.coefficients()[k - 1] == 0.0 {
                    continue;
                }
                let g = apply_diffusion(family, raw_state, k)?;
                let q = pressure_solve(rho_next, &g, settings)?;
                let hat = g.sub(&gradient(&q.pressure)?);
                total.add_scaled(1.0, &hat.pointwise_dot(&hat));
            }
            total.mul_scalar_field(&inv2)
        } else {
            RealField::zeros(grid, 1)
        };
        for ((a, &(th, dth)), (psi, grad)) in acc.iter_mut().zip(&thetas).zip(&psis) {
            a[0] += dth * energy.inner(psi) * dt;
            if th == 0.0 {
                continue;
            }
            if let Some(grad) = grad {
                let vf = state.velocity.mul_scalar_field(&flux_density);
                a[1] += th * vf.inner(grad) * dt;
            }
            a[2] += th * ito_density.inner(psi) * dt;
            a[3] += th * pairing.inner(psi);
        }
    }
    Ok(acc
        .into_iter()
        .map(|a| WeightedLedger::from_terms(a[0], a[1], a[2], a[3]))
        .collect())
}

pub fn inhomo_budget(
    path: &InhomoPath,
    pair: &TestFunctionPair,
    family: &DiffusionFamily,
    j_count: usize,
) -> Result<WeightedLedger> {
    Ok(inhomo_budgets(path, std::slice::from_ref(pair), family, j_count)?[0])
}

/// The weighted terms implied by a homogeneous ledger with `ρ ≡ 1`, `Ψ ≡ 1`.
pub fn weighted_from_homogeneous(ledger: &EnergyLedger, theta: TimeBump) -> WeightedLedger {
    let rows = &ledger.rows;
    let (mut td, mut ito, mut mart) = (0.0, 0.0, 0.0);
    for n in 0..rows.len() - 1 {
        let t = rows[n].time;
        let dt = rows[n + 1].time - t;
        td += theta.derivative(t) * 0.5 * rows[n].kinetic * dt;
        let th = theta.value(t);
        ito += th * 0.5 * (rows[n + 1].ito_term - rows[n].ito_term);
        mart += th * 0.5 * (rows[n + 1].martingale_term - rows[n].martingale_term);
    }
    WeightedLedger::from_terms(td, 0.0, ito, mart)
}

/// Maps `H` of the commutator estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Nonlinearity {
    /// `u ↦ u²` on a scalar field.
    ScalarSquare,
    /// `u ↦ u⊗u` on a vector field.
    TensorSquare,
    /// `(ρ, m) ↦ m⊗m/ρ`; component 0 of the input is `ρ`. Inputs with
    /// `min ρ < floor` are rejected.
    MomentumFlux { floor: f64 },
    /// `u ↦ a·u + b` componentwise.
    Affine { a: f64, b: f64 },
}

impl Nonlinearity {
    pub fn name(&self) -> &'static str {
        match self {
            Nonlinearity::ScalarSquare => "scalar_square",
            Nonlinearity::TensorSquare => "tensor_square",
            Nonlinearity::MomentumFlux { .. } => "momentum_flux",
            Nonlinearity::Affine { .. } => "affine",
        }
    }

    pub fn apply(&self, f: &RealField) -> Result<RealField> {
        let grid = f.grid();
        match *self {
            Nonlinearity::ScalarSquare => {
                if f.components() != 1 {
                    return Err(Error::Shape("scalar_square expects a scalar field".into()));
                }
                Ok(f.map(|x| x * x))
            }
            Nonlinearity::TensorSquare => {
                let d = f.components();
                let mut out = RealField::zeros(grid, d * d);
                for i in 0..d {
                    for j in 0..d {
                        let dst = out.component_mut(i * d + j);
                        for ((o, &a), &b) in dst.iter_mut().zip(f.component(i)).zip(f.component(j))
                        {
                            *o = a * b;
                        }
                    }
                }
                Ok(out)
            }
            Nonlinearity::MomentumFlux { floor } => {
                if f.components() < 2 {
                    return Err(Error::Shape(
                        "momentum_flux expects (rho, m) components".into(),
                    ));
                }
                let rho = f.extract(0);
                let min = rho.min();
                if min < floor {
                    return Err(Error::DensityBound {
                        min_rho: min,
                        bound: floor,
                    });
                }
                let d = f.components() - 1;
                let mut out = RealField::zeros(grid, d * d);
                for i in 0..d {
                    for j in 0..d {
                        let (mi, mj) = (f.component(i + 1), f.component(j + 1));
                        let dst = out.component_mut(i * d + j);
                        for (idx, o) in dst.iter_mut().enumerate() {
                            *o = mi[idx] * mj[idx] / rho.data()[idx];
                        }
                    }
                }
                Ok(out)
            }
            Nonlinearity::Affine { a, b } => Ok(f.map(|x| a * x + b)),
        }
    }
}

/// All first derivatives `∂_j φ_i`, stored at component `i·d + j`.
fn jacobian(phi: &RealField) -> Result<RealField> {
    let grid = phi.grid();
    let d = grid.dim();
    let mut data = Vec::with_capacity(phi.components() * d * grid.len());
    for i in 0..phi.components() {
        data.extend_from_slice(gradient(&phi.extract(i))?.data());
    }
    RealField::new(grid, phi.components() * d, data)
}

/// Pointwise `h : ∇φ` as a scalar density (absolute value taken by the caller).
fn contract(h: &RealField, jac: &RealField, phi_components: usize) -> Result<Vec<f64>> {
    let grid = h.grid();
    let d = grid.dim();
    let mut out = vec![0.0; grid.len()];
    match (h.components(), phi_components) {
        // scalar h times the gradient of a scalar φ: Euclidean magnitude
        (1, 1) => {
            for (idx, o) in out.iter_mut().enumerate() {
                let g2: f64 = (0..d).map(|j| jac.component(j)[idx].powi(2)).sum();
                *o = h.data()[idx] * g2.sqrt();
            }
        }
        (c, 1) if c == d => {
            for j in 0..d {
                for (o, (&a, &b)) in out
                    .iter_mut()
                    .zip(h.component(j).iter().zip(jac.component(j)))
                {
                    *o += a * b;
                }
            }
        }
        (c, p) if c == d * d && p == d => {
            for i in 0..d {
                for j in 0..d {
                    for (o, (&a, &b)) in out
                        .iter_mut()
                        .zip(h.component(i * d + j).iter().zip(jac.component(i * d + j)))
                    {
                        *o += a * b;
                    }
                }
            }
        }
        (c, p) => {
            return Err(Error::Shape(format!(
                "cannot contract {c} components of H with the gradient of a {p}-component field"
            )));
        }
    }
    Ok(out)
}

/// `‖(H(f^ε) − H(f)^ε) : ∇φ^ε‖_{L¹}` over the torus.
pub fn commutator_norm(
    f: &RealField,
    phi: &RealField,
    h: Nonlinearity,
    epsilon: f64,
) -> Result<f64> {
    if f.grid() != phi.grid() {
        return Err(Error::Shape("f and phi live on different grids".into()));
    }
    let kernel = MollifierKernel::new(f.grid(), epsilon)?;
    let f_eps = kernel.apply(f)?;
    let commutator = h.apply(&f_eps)?.sub(&kernel.apply(&h.apply(f)?)?);
    let jac = jacobian(&kernel.apply(phi)?)?;
    let density = contract(&commutator, &jac, phi.components())?;
    Ok(density.iter().map(|x| x.abs()).sum::<f64>() / density.len() as f64)
}

/// Log-log least-squares fit of `norm ≈ C ε^slope`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

pub fn rate_fit(epsilons: &[f64], norms: &[f64]) -> Result<RateFit> {
    if epsilons.len() != norms.len() {
        return Err(Error::Shape("epsilons and norms differ in length".into()));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = epsilons
        .iter()
        .zip(norms)
        .filter(|&(&e, &v)| e > 0.0 && v > 0.0 && v.is_finite())
        .map(|(e, v)| (e.ln(), v.ln()))
        .unzip();
    if xs.len() < 4 {
        return Err(Error::DegenerateFit(format!(
            "{} positive norms, need at least 4",
            xs.len()
        )));
    }
    let (slope, intercept) = least_squares(&xs, &ys);
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        1.0
    };
    Ok(RateFit {
        slope,
        intercept,
        r_squared,
        points: xs.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CommutatorScan {
    pub nonlinearity: &'static str,
    pub epsilons: Vec<f64>,
    pub norms: Vec<f64>,
    pub fit: RateFit,
    /// `2α + β − 1`.
    pub theoretical_slope: f64,
}

pub fn commutator_scan(
    f: &RealField,
    phi: &RealField,
    h: Nonlinearity,
    epsilons: &[f64],
    alpha: f64,
    beta: f64,
) -> Result<CommutatorScan> {
    let norms = epsilons
        .iter()
        .map(|&e| commutator_norm(f, phi, h, e))
        .collect::<Result<Vec<_>>>()?;
    let fit = rate_fit(epsilons, &norms)?;
    Ok(CommutatorScan {
        nonlinearity: h.name(),
        epsilons: epsilons.to_vec(),
        norms,
        fit,
        theoretical_slope: 2.0 * alpha + beta - 1.0,
    })
}

/// Per-ε values of a paired proof term.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProofTermScan {
    pub epsilons: Vec<f64>,
    /// The signed integral.
    pub signed: Vec<f64>,
    /// `L¹` norm of the paired integrand; the fit uses these.
    pub l1: Vec<f64>,
    /// Absent when fewer than four values are positive.
    pub fit: Option<RateFit>,
}

fn pair_with_jacobian(c: &RealField, jac: &RealField, weight: f64) -> (f64, f64) {
    let len = c.grid().len();
    let mut signed = 0.0;
    let mut l1 = 0.0;
    for idx in 0..len {
        let s: f64 = (0..c.components())
            .map(|k| c.component(k)[idx] * jac.component(k)[idx])
            .sum();
        signed += weight * s;
        l1 += (weight * s).abs();
    }
    (signed / len as f64, l1 / len as f64)
}

fn finish_scan(epsilons: &[f64], signed: Vec<f64>, l1: Vec<f64>) -> ProofTermScan {
    let fit = rate_fit(epsilons, &l1).ok();
    ProofTermScan {
        epsilons: epsilons.to_vec(),
        signed,
        l1,
        fit,
    }
}

/// `∫ 2v^ε · div[(v^ε⊗v^ε) − (v⊗v)^ε] = −2∫ ∇v^ε : [(v^ε⊗v^ε) − (v⊗v)^ε]`
/// at each `ε`.
pub fn proof_term_scan(v: &RealField, epsilons: &[f64]) -> Result<ProofTermScan> {
    if v.components() != v.grid().dim() {
        return Err(Error::Shape(
            "proof_term_scan expects a d-component velocity".into(),
        ));
    }
    let square = Nonlinearity::TensorSquare.apply(v)?;
    let mut signed = Vec::with_capacity(epsilons.len());
    let mut l1 = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let kernel = MollifierKernel::new(v.grid(), eps)?;
        let v_eps = kernel.apply(v)?;
        let c = Nonlinearity::TensorSquare
            .apply(&v_eps)?
            .sub(&kernel.apply(&square)?);
        let (s, a) = pair_with_jacobian(&c, &jacobian(&v_eps)?, -2.0);
        signed.push(s);
        l1.push(a);
    }
    Ok(finish_scan(epsilons, signed, l1))
}

/// `∫ ℛ^ε · m^ε/ρ^ε` with `ℛ^ε = div(m^ε⊗m^ε/ρ^ε) − div(m⊗m/ρ)^ε`, i.e.
/// `−∫ [(m^ε⊗m^ε/ρ^ε) − (m⊗m/ρ)^ε] : ∇(m^ε/ρ^ε)`.
pub fn remainder_scan(
    rho: &RealField,
    momentum: &RealField,
    floor: f64,
    epsilons: &[f64],
) -> Result<ProofTermScan> {
    let grid = rho.grid();
    if rho.components() != 1 || momentum.components() != grid.dim() || momentum.grid() != grid {
        return Err(Error::Shape(
            "remainder_scan expects scalar rho and d-component momentum".into(),
        ));
    }
    let mut joined = rho.data().to_vec();
    joined.extend_from_slice(momentum.data());
    let state = RealField::new(grid, 1 + grid.dim(), joined)?;
    let h = Nonlinearity::MomentumFlux { floor };
    let flux = h.apply(&state)?;
    let mut signed = Vec::with_capacity(epsilons.len());
    let mut l1 = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let kernel = MollifierKernel::new(grid, eps)?;
        let s_eps = kernel.apply(&state)?;
        let c = h.apply(&s_eps)?.sub(&kernel.apply(&flux)?);
        let rho_eps = s_eps.extract(0);
        let m_eps = RealField::new(grid, grid.dim(), s_eps.data()[grid.len()..].to_vec())?;
        let u_eps = m_eps.mul_scalar_field(&rho_eps.map(|r| 1.0 / r));
        let (s, a) = pair_with_jacobian(&c, &jacobian(&u_eps)?, -1.0);
        signed.push(s);
        l1.push(a);
    }
    Ok(finish_scan(epsilons, signed, l1))
}
