//! Truncated cylindrical Wiener forcing and the diffusion operators.
//!
//! The basis `e_j` is the real Fourier basis of `L²(T^d)`: `e_1 = 1`, then
//! `√2 cos(2πk·x)`, `√2 sin(2πk·x)` for wavevectors `k` in the half space
//! (`k_0 > 0`, or `k_0 = 0` and `k_1 > 0`) ordered by `|k|²`, then `k_0`,
//! then `k_1`. Only modes strictly below Nyquist are used, so the sampled
//! basis is exactly orthonormal under the grid quadrature.
//!
//! A diffusion mode is `G_j(x, v) = g_j a_j(x) σ(v)` with `σ` applied
//! componentwise and `g_j = g₀ j^{−s}`. The inhomogeneous family uses
//! `G̃_j(x, ρ, m) = g_j a_j(x) σ(m)`, which does not depend on `ρ`, so at
//! `ρ ≡ 1` it coincides with the homogeneous family.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{RealField, TorusGrid};
use crate::rng::{auxiliary_rng, StreamCoords};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;
const PROBE_STREAM: u64 = 0x9E0B_E5;

/// One element of the real Fourier basis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum BasisMode {
    Constant,
    Cos([i64; 2]),
    Sin([i64; 2]),
}

impl BasisMode {
    pub fn evaluate(&self, x: [f64; 2]) -> f64 {
        match *self {
            BasisMode::Constant => 1.0,
            BasisMode::Cos(k) => {
                std::f64::consts::SQRT_2
                    * (TWO_PI * (k[0] as f64 * x[0] + k[1] as f64 * x[1])).cos()
            }
            BasisMode::Sin(k) => {
                std::f64::consts::SQRT_2
                    * (TWO_PI * (k[0] as f64 * x[0] + k[1] as f64 * x[1])).sin()
            }
        }
    }
}

/// The first `J` basis functions on a grid.
#[derive(Clone, Debug)]
pub struct NoiseBasis {
    grid: TorusGrid,
    modes: Vec<BasisMode>,
}

impl NoiseBasis {
    pub fn new(grid: TorusGrid, j_count: usize) -> Result<Self> {
        if j_count == 0 {
            return Err(Error::config(
                "modes",
                "truncation level must be at least 1",
            ));
        }
        let r = grid.n() as i64 / 2 - 1;
        let mut ks: Vec<[i64; 2]> = Vec::new();
        if grid.dim() == 1 {
            ks.extend((1..=r).map(|k| [k, 0]));
        } else {
            for k0 in 0..=r {
                for k1 in -r..=r {
                    if k0 > 0 || k1 > 0 {
                        ks.push([k0, k1]);
                    }
                }
            }
            ks.sort_by_key(|k| (k[0] * k[0] + k[1] * k[1], k[0], k[1]));
        }
        let mut modes = vec![BasisMode::Constant];
        for k in ks {
            if modes.len() >= j_count {
                break;
            }
            modes.push(BasisMode::Cos(k));
            if modes.len() < j_count {
                modes.push(BasisMode::Sin(k));
            }
        }
        if modes.len() < j_count {
            return Err(Error::config(
                "modes",
                format!(
                    "{j_count} basis functions exceed the {} resolvable on this grid",
                    modes.len()
                ),
            ));
        }
        Ok(NoiseBasis { grid, modes })
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Mode `j`, counted from 1.
    pub fn mode(&self, j: usize) -> Result<BasisMode> {
        if j == 0 || j > self.modes.len() {
            return Err(Error::ModeOutOfRange {
                j,
                len: self.modes.len(),
            });
        }
        Ok(self.modes[j - 1])
    }

    pub fn field(&self, j: usize) -> Result<RealField> {
        let mode = self.mode(j)?;
        Ok(RealField::from_fn(self.grid, 1, |_, x| mode.evaluate(x)))
    }
}

/// One step's Brownian increments `(ΔW¹, …, ΔW^J)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WienerIncrements {
    pub dt: f64,
    pub increments: Vec<f64>,
}

impl WienerIncrements {
    pub fn zeros(dt: f64, j_count: usize) -> Self {
        WienerIncrements {
            dt,
            increments: vec![0.0; j_count],
        }
    }

    pub fn len(&self) -> usize {
        self.increments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.increments.is_empty()
    }
}

/// `J` independent `N(0, dt)` draws at the given stream coordinates.
pub fn sample_increments(
    j_count: usize,
    dt: f64,
    coords: StreamCoords,
) -> Result<WienerIncrements> {
    if !(dt >= 0.0 && dt.is_finite()) {
        return Err(Error::config("dt", "must be finite and nonnegative"));
    }
    if dt == 0.0 {
        return Ok(WienerIncrements::zeros(dt, j_count));
    }
    let root = dt.sqrt();
    Ok(WienerIncrements {
        dt,
        increments: coords
            .standard_normals(j_count)
            .into_iter()
            .map(|z| z * root)
            .collect(),
    })
}

/// Brownian path on a base lattice of width `base_dt`; coarser steps sum
/// consecutive base increments so that paths at different `dt` are nested.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BrownianSource {
    pub seed: u64,
    pub path: u64,
    pub base_dt: f64,
    pub j_count: usize,
}

impl BrownianSource {
    /// Number of base increments per step of width `dt`.
    pub fn substeps(&self, dt: f64) -> Result<u64> {
        let ratio = dt / self.base_dt;
        let r = ratio.round();
        if !(r >= 1.0 && (ratio - r).abs() <= 1e-9 * r) {
            return Err(Error::config(
                "time.base_dt",
                format!(
                    "{dt} is not a positive integer multiple of base_dt {}",
                    self.base_dt
                ),
            ));
        }
        Ok(r as u64)
    }

    pub fn increments(&self, step: u64, dt: f64) -> Result<WienerIncrements> {
        let r = self.substeps(dt)?;
        let mut acc = vec![0.0; self.j_count];
        for sub in 0..r {
            let coords = StreamCoords::new(self.seed, self.path, step * r + sub);
            let draw = sample_increments(self.j_count, self.base_dt, coords)?;
            for (a, d) in acc.iter_mut().zip(draw.increments) {
                *a += d;
            }
        }
        Ok(WienerIncrements {
            dt,
            increments: acc,
        })
    }
}

/// `‖u‖_{U₀} = (Σ_j u_j² / j²)^{1/2}`.
pub fn u0_norm(u: &[f64]) -> f64 {
    u.iter()
        .enumerate()
        .map(|(i, x)| {
            let j = (i + 1) as f64;
            x * x / (j * j)
        })
        .sum::<f64>()
        .sqrt()
}

/// Empirical checks on `ΔW¹`, `ΔW²` drawn at consecutive step coordinates.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IncrementStats {
    pub samples: usize,
    pub dt: f64,
    pub mean: f64,
    pub mean_gate: f64,
    pub variance: f64,
    pub covariance: f64,
    pub covariance_gate: f64,
    pub passed: bool,
}

pub fn increment_statistics(seed: u64, samples: usize, dt: f64) -> Result<IncrementStats> {
    if samples < 2 {
        return Err(Error::config("samples", "need at least 2"));
    }
    let mut w1 = Vec::with_capacity(samples);
    let mut w2 = Vec::with_capacity(samples);
    for step in 0..samples as u64 {
        let inc = sample_increments(2, dt, StreamCoords::new(seed, 0, step))?;
        w1.push(inc.increments[0]);
        w2.push(inc.increments[1]);
    }
    let n = samples as f64;
    let m1 = w1.iter().sum::<f64>() / n;
    let m2 = w2.iter().sum::<f64>() / n;
    let variance = w1.iter().map(|x| (x - m1).powi(2)).sum::<f64>() / (n - 1.0);
    let covariance = w1
        .iter()
        .zip(&w2)
        .map(|(a, b)| (a - m1) * (b - m2))
        .sum::<f64>()
        / (n - 1.0);
    let mean_gate = 3.0 * (dt / n).sqrt();
    // the product of two independent N(0, dt) draws has standard deviation dt
    let covariance_gate = 3.0 * dt / n.sqrt();
    Ok(IncrementStats {
        samples,
        dt,
        mean: m1,
        mean_gate,
        variance,
        covariance,
        covariance_gate,
        passed: m1.abs() <= mean_gate && covariance.abs() <= covariance_gate,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    #[default]
    Homogeneous,
    Inhomogeneous,
}

/// Scalar saturation profile `σ`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    #[default]
    Tanh,
    Linear,
    /// `tanh(slope·u)`; not 1-Lipschitz when `slope > 1`.
    ScaledTanh,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    /// `a_j = e_j`.
    #[default]
    Fourier,
    /// `a_j ≡ 1`.
    Constant,
}

fn default_g0() -> f64 {
    0.5
}
fn default_s() -> f64 {
    1.0
}
fn default_modes() -> usize {
    16
}
fn default_slope() -> f64 {
    2.0
}

/// Configuration of a diffusion family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionSpec {
    #[serde(default)]
    pub kind: FamilyKind,
    #[serde(default = "default_g0")]
    pub g0: f64,
    #[serde(default = "default_s")]
    pub s: f64,
    /// Truncation level `J`.
    #[serde(default = "default_modes")]
    pub modes: usize,
    #[serde(default)]
    pub profile: Profile,
    #[serde(default = "default_slope")]
    pub slope: f64,
    #[serde(default)]
    pub shape: ShapeKind,
}

impl Default for DiffusionSpec {
    fn default() -> Self {
        DiffusionSpec {
            kind: FamilyKind::Homogeneous,
            g0: default_g0(),
            s: default_s(),
            modes: default_modes(),
            profile: Profile::Tanh,
            slope: default_slope(),
            shape: ShapeKind::Fourier,
        }
    }
}

impl DiffusionSpec {
    /// Family with `g₀ = 0`.
    pub fn silent(modes: usize) -> Self {
        DiffusionSpec {
            g0: 0.0,
            modes,
            ..DiffusionSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.g0 >= 0.0 && self.g0.is_finite()) {
            return Err(Error::config("noise.g0", "must be finite and nonnegative"));
        }
        if !self.s.is_finite() {
            return Err(Error::config("noise.s", "must be finite"));
        }
        if self.modes == 0 {
            return Err(Error::config("noise.modes", "must be at least 1"));
        }
        if !(self.slope.is_finite() && self.slope > 0.0) {
            return Err(Error::config("noise.slope", "must be finite and positive"));
        }
        Ok(())
    }
}

/// State the diffusion acts on.
#[derive(Clone, Copy, Debug)]
pub enum NoiseState<'a> {
    Velocity(&'a RealField),
    DensityMomentum {
        rho: &'a RealField,
        momentum: &'a RealField,
    },
}

impl<'a> NoiseState<'a> {
    fn argument(&self) -> &'a RealField {
        match *self {
            NoiseState::Velocity(v) => v,
            NoiseState::DensityMomentum { momentum, .. } => momentum,
        }
    }
}

/// Coefficients `g_j`, shapes `a_j` and profile `σ` of `G` or `G̃`.
#[derive(Clone, Debug)]
pub struct DiffusionFamily {
    spec: DiffusionSpec,
    grid: TorusGrid,
    basis: NoiseBasis,
    g: Vec<f64>,
    shapes: Vec<Vec<f64>>,
    sup_shape: Vec<f64>,
}

impl DiffusionFamily {
    pub fn new(spec: DiffusionSpec, grid: TorusGrid) -> Result<Self> {
        spec.validate()?;
        let basis = NoiseBasis::new(grid, spec.modes)?;
        let g: Vec<f64> = (1..=spec.modes)
            .map(|j| spec.g0 * (j as f64).powf(-spec.s))
            .collect();
        let shapes: Vec<Vec<f64>> = (1..=spec.modes)
            .map(|j| match spec.shape {
                ShapeKind::Constant => vec![1.0; grid.len()],
                ShapeKind::Fourier => basis.field(j).expect("j within basis").into_data(),
            })
            .collect();
        let sup_shape = shapes
            .iter()
            .map(|a| a.iter().fold(0.0_f64, |m, x| m.max(x.abs())))
            .collect();
        Ok(DiffusionFamily {
            spec,
            grid,
            basis,
            g,
            shapes,
            sup_shape,
        })
    }

    pub fn spec(&self) -> &DiffusionSpec {
        &self.spec
    }

    pub fn kind(&self) -> FamilyKind {
        self.spec.kind
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn basis(&self) -> &NoiseBasis {
        &self.basis
    }

    /// Truncation level `J`.
    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }

    /// True when every `g_j` vanishes.
    pub fn is_silent(&self) -> bool {
        self.g.iter().all(|&g| g == 0.0)
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.g
    }

    pub fn shape(&self, j: usize) -> Result<&[f64]> {
        self.check_mode(j)?;
        Ok(&self.shapes[j - 1])
    }

    pub fn sup_shape(&self, j: usize) -> Result<f64> {
        self.check_mode(j)?;
        Ok(self.sup_shape[j - 1])
    }

    fn check_mode(&self, j: usize) -> Result<()> {
        if j == 0 || j > self.g.len() {
            return Err(Error::ModeOutOfRange {
                j,
                len: self.g.len(),
            });
        }
        Ok(())
    }

    pub fn sigma(&self, u: f64) -> f64 {
        match self.spec.profile {
            Profile::Tanh => u.tanh(),
            Profile::Linear => u,
            Profile::ScaledTanh => (self.spec.slope * u).tanh(),
        }
    }

    /// `σ̃(ρ, m)` for the inhomogeneous kind; independent of `ρ`.
    pub fn profile_value(&self, _rho: f64, m: f64) -> f64 {
        self.sigma(m)
    }

    fn check_state(&self, state: &NoiseState) -> Result<()> {
        let arg = state.argument();
        if arg.grid() != self.grid {
            return Err(Error::Shape(
                "state grid differs from diffusion grid".into(),
            ));
        }
        match (self.spec.kind, state) {
            (FamilyKind::Homogeneous, NoiseState::Velocity(_)) => Ok(()),
            (FamilyKind::Inhomogeneous, NoiseState::DensityMomentum { rho, .. }) => {
                if rho.grid() != self.grid || rho.components() != 1 {
                    return Err(Error::Shape(
                        "density must be a scalar field on the diffusion grid".into(),
                    ));
                }
                Ok(())
            }
            _ => Err(Error::Shape(
                "state does not match the diffusion family kind".into(),
            )),
        }
    }

    /// `σ` applied to every sample of the state argument.
    pub fn saturated(&self, state: NoiseState) -> Result<RealField> {
        self.check_state(&state)?;
        Ok(state.argument().map(|u| self.sigma(u)))
    }

    /// `Σ_j g_j ΔW^j a_j(x)` as a grid vector.
    pub fn amplitude(&self, dw: &WienerIncrements) -> Result<Vec<f64>> {
        if dw.len() != self.len() {
            return Err(Error::Shape(format!(
                "{} increments for {} modes",
                dw.len(),
                self.len()
            )));
        }
        let mut a = vec![0.0; self.grid.len()];
        for ((g, w), shape) in self.g.iter().zip(&dw.increments).zip(&self.shapes) {
            let c = g * w;
            if c != 0.0 {
                for (x, s) in a.iter_mut().zip(shape) {
                    *x += c * s;
                }
            }
        }
        Ok(a)
    }

    /// Unprojected forcing `Σ_j G_j(·, state) ΔW^j`.
    pub fn forcing(&self, state: NoiseState, dw: &WienerIncrements) -> Result<RealField> {
        let amp = self.amplitude(dw)?;
        let mut out = self.saturated(state)?;
        for c in 0..out.components() {
            for (x, a) in out.component_mut(c).iter_mut().zip(&amp) {
                *x *= a;
            }
        }
        Ok(out)
    }

    /// `Σ_{k≤J} ∫ |G_k|²`, weighted by `1/(2ρ)` for the inhomogeneous kind.
    pub fn ito_correction(&self, state: NoiseState, j_count: usize) -> Result<f64> {
        if j_count > self.len() {
            return Err(Error::ModeOutOfRange {
                j: j_count,
                len: self.len(),
            });
        }
        let sat = self.saturated(state)?;
        let mut weight: Vec<f64> = (0..self.grid.len())
            .map(|i| {
                (0..sat.components())
                    .map(|c| sat.component(c)[i].powi(2))
                    .sum()
            })
            .collect();
        if let NoiseState::DensityMomentum { rho, .. } = state {
            let min = rho.min();
            if min <= 0.0 {
                return Err(Error::DensityBound {
                    min_rho: min,
                    bound: 0.0,
                });
            }
            for (w, r) in weight.iter_mut().zip(rho.data()) {
                *w /= 2.0 * r;
            }
        }
        let mut total = 0.0;
        for k in 0..j_count {
            let g2 = self.g[k] * self.g[k];
            if g2 == 0.0 {
                continue;
            }
            let s: f64 = self.shapes[k]
                .iter()
                .zip(&weight)
                .map(|(a, w)| a * a * w)
                .sum();
            total += g2 * s / self.grid.len() as f64;
        }
        Ok(total)
    }
}

/// `G_j(·, state)` (or `G̃_j`) evaluated pointwise; `j` counts from 1.
pub fn apply_diffusion(family: &DiffusionFamily, state: NoiseState, j: usize) -> Result<RealField> {
    let shape = family.shape(j)?;
    let g = family.g[j - 1];
    let mut out = family.saturated(state)?;
    for c in 0..out.components() {
        for (x, a) in out.component_mut(c).iter_mut().zip(shape) {
            *x *= g * a;
        }
    }
    Ok(out)
}

/// Free-function form of [`DiffusionFamily::ito_correction`].
pub fn ito_correction(family: &DiffusionFamily, state: NoiseState, j_count: usize) -> Result<f64> {
    family.ito_correction(state, j_count)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LipschitzProbe {
    pub j: usize,
    pub bound: f64,
    pub worst_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub condition: &'static str,
    pub detail: String,
}

/// Outcome of [`growth_report`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GrowthReport {
    pub kind: FamilyKind,
    pub modes: usize,
    pub partial_sum: f64,
    /// Integral-test bound on `Σ_{j>J} g_j²`; absent when the series diverges.
    pub tail_bound: Option<f64>,
    pub tail_tolerance: f64,
    pub max_at_zero: f64,
    pub lipschitz: Vec<LipschitzProbe>,
    pub violations: Vec<Violation>,
}

impl GrowthReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Relative size of the tail bound, against the partial sum, that still
/// counts as converged.
pub const TAIL_TOLERANCE: f64 = 0.1;

/// Checks `G_j(·,0) = 0`, square summability of `g_j` and pointwise
/// Lipschitz bounds at `n_probes` random state pairs per mode.
pub fn growth_report(family: &DiffusionFamily, n_probes: usize, seed: u64) -> GrowthReport {
    let spec = family.spec();
    let mut violations = Vec::new();

    let partial_sum: f64 = family.g.iter().map(|g| g * g).sum();
    let tail_bound = if spec.g0 == 0.0 {
        Some(0.0)
    } else if spec.s > 0.5 {
        let j = family.len() as f64;
        Some(spec.g0 * spec.g0 * j.powf(1.0 - 2.0 * spec.s) / (2.0 * spec.s - 1.0))
    } else {
        None
    };
    match tail_bound {
        None => violations.push(Violation {
            condition: "square_summable",
            detail: format!(
                "g_j = {} j^-{} is not square summable (needs s > 1/2)",
                spec.g0, spec.s
            ),
        }),
        Some(t) if t > TAIL_TOLERANCE * partial_sum => violations.push(Violation {
            condition: "square_summable",
            detail: format!(
                "tail bound {t:e} exceeds {TAIL_TOLERANCE} x partial sum {partial_sum:e} at J = {}",
                family.len()
            ),
        }),
        _ => {}
    }

    let grid = family.grid();
    let d = grid.dim();
    let zero_v = RealField::zeros(grid, d);
    let zero_rho = RealField::zeros(grid, 1);
    let zero_state = match family.kind() {
        FamilyKind::Homogeneous => NoiseState::Velocity(&zero_v),
        FamilyKind::Inhomogeneous => NoiseState::DensityMomentum {
            rho: &zero_rho,
            momentum: &zero_v,
        },
    };
    let max_at_zero = (1..=family.len())
        .map(|j| {
            apply_diffusion(family, zero_state, j)
                .map(|f| f.max_abs())
                .unwrap_or(f64::INFINITY)
        })
        .fold(0.0, f64::max);
    if max_at_zero != 0.0 {
        violations.push(Violation {
            condition: "vanishes_at_zero",
            detail: format!("max |G_j(x, 0)| = {max_at_zero:e}"),
        });
    }

    let mut rng = auxiliary_rng(seed, PROBE_STREAM);
    let mut lipschitz = Vec::with_capacity(family.len());
    for j in 1..=family.len() {
        let g = family.g[j - 1];
        let shape = &family.shapes[j - 1];
        let bound = g * family.sup_shape[j - 1];
        let eval = |idx: usize, rho: f64, u: f64| g * shape[idx] * family.profile_value(rho, u);
        let mut worst = 0.0_f64;
        for p in 0..n_probes {
            let idx = rng.random_range(0..grid.len());
            // alternate between O(1) states and states near the origin
            let scale = if p % 2 == 0 { 3.0 } else { 0.05 };
            let v: Vec<f64> = (0..d).map(|_| rng.random_range(-scale..scale)).collect();
            let w: Vec<f64> = (0..d).map(|_| rng.random_range(-scale..scale)).collect();
            let (r1, r2) = (rng.random_range(0.5..3.0), rng.random_range(0.5..3.0));
            let dist = v
                .iter()
                .zip(&w)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if dist == 0.0 || r1 == r2 {
                continue;
            }
            let diff = v
                .iter()
                .zip(&w)
                .map(|(&a, &b)| (eval(idx, r1, a) - eval(idx, r1, b)).abs())
                .fold(0.0, f64::max);
            let mut ratio = diff / dist;
            if family.kind() == FamilyKind::Inhomogeneous {
                let dr = v
                    .iter()
                    .map(|&a| (eval(idx, r1, a) - eval(idx, r2, a)).abs())
                    .fold(0.0, f64::max);
                ratio += dr / (r1 - r2).abs();
            }
            worst = worst.max(ratio);
        }
        if worst > bound * (1.0 + 1e-9) {
            violations.push(Violation {
                condition: "lipschitz",
                detail: format!("mode {j}: secant ratio {worst:.6} exceeds bound {bound:.6}"),
            });
        }
        lipschitz.push(LipschitzProbe {
            j,
            bound,
            worst_ratio: worst,
        });
    }

    GrowthReport {
        kind: family.kind(),
        modes: family.len(),
        partial_sum,
        tail_bound,
        tail_tolerance: TAIL_TOLERANCE,
        max_at_zero,
        lipschitz,
        violations,
    }
}

/// [`growth_report`] turned into an error naming the first violated condition.
pub fn verify_growth_conditions(
    family: &DiffusionFamily,
    n_probes: usize,
    seed: u64,
) -> Result<GrowthReport> {
    let report = growth_report(family, n_probes, seed);
    match report.violations.first() {
        None => Ok(report),
        Some(v) => Err(Error::GrowthCondition {
            condition: v.condition,
            detail: v.detail.clone(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regularity::{make_synthetic_field, SyntheticFieldSpec};

    fn grid() -> TorusGrid {
        TorusGrid::new(2, 32).unwrap()
    }

    fn family(spec: DiffusionSpec) -> DiffusionFamily {
        DiffusionFamily::new(spec, grid()).unwrap()
    }

    fn random_velocity(seed: u64) -> RealField {
        let spec = SyntheticFieldSpec {
            divergence_free: true,
            ..SyntheticFieldSpec::new(0.5, 3, seed, 1.0)
        };
        make_synthetic_field(&spec, grid(), 2).unwrap()
    }

    #[test]
    fn basis_is_orthonormal() {
        let b = NoiseBasis::new(grid(), 40).unwrap();
        let fields: Vec<RealField> = (1..=40).map(|j| b.field(j).unwrap()).collect();
        for (i, a) in fields.iter().enumerate() {
            for (j, c) in fields.iter().enumerate() {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (a.inner(c) - expect).abs() < 1e-12,
                    "<e{}, e{}>",
                    i + 1,
                    j + 1
                );
            }
        }
        assert_eq!(b.mode(2).unwrap(), BasisMode::Cos([0, 1]));
        assert_eq!(b.mode(3).unwrap(), BasisMode::Sin([0, 1]));
        assert_eq!(b.mode(4).unwrap(), BasisMode::Cos([1, 0]));
        assert_eq!(b.mode(6).unwrap(), BasisMode::Cos([1, -1]));
        assert!(matches!(
            b.mode(41),
            Err(Error::ModeOutOfRange { j: 41, len: 40 })
        ));
        assert!(NoiseBasis::new(TorusGrid::new(1, 8).unwrap(), 8).is_err());
    }

    #[test]
    fn increments_zero_dt_and_reproducible() {
        let c = StreamCoords::new(3, 1, 7);
        assert!(sample_increments(5, 0.0, c)
            .unwrap()
            .increments
            .iter()
            .all(|&x| x == 0.0));
        assert_eq!(
            sample_increments(5, 0.1, c).unwrap(),
            sample_increments(5, 0.1, c).unwrap()
        );
        assert!(sample_increments(5, -1.0, c).is_err());
    }

    #[test]
    fn increment_statistics_pass_gates() {
        let stats = increment_statistics(2024, 100_000, 1e-2).unwrap();
        assert!(
            stats.mean.abs() <= 3.0 * (1e-2f64 / 1e5).sqrt(),
            "{stats:?}"
        );
        assert!(stats.covariance.abs() <= stats.covariance_gate, "{stats:?}");
        assert!((stats.variance / 1e-2 - 1.0).abs() < 0.02);
        assert!(stats.passed);
    }

    #[test]
    fn nested_increments_sum_base_draws() {
        let src = BrownianSource {
            seed: 5,
            path: 2,
            base_dt: 2.5e-4,
            j_count: 4,
        };
        let coarse = src.increments(3, 1e-3).unwrap();
        let mut fine = [0.0; 4];
        for s in 12..16 {
            for (f, x) in fine
                .iter_mut()
                .zip(src.increments(s, 2.5e-4).unwrap().increments)
            {
                *f += x;
            }
        }
        for (a, b) in coarse.increments.iter().zip(fine) {
            assert!((a - b).abs() < 1e-15);
        }
        let single = sample_increments(4, 2.5e-4, StreamCoords::new(5, 2, 9)).unwrap();
        assert_eq!(
            src.increments(9, 2.5e-4).unwrap().increments,
            single.increments
        );
        assert!(src.increments(0, 3e-4).is_err());
    }

    #[test]
    fn u0_norm_values() {
        assert_eq!(u0_norm(&[0.0; 10]), 0.0);
        assert_eq!(u0_norm(&[1.0, 0.0, 0.0]), 1.0);
        let oracle: f64 = (1..=100).map(|j| 1.0 / (j * j) as f64).sum::<f64>().sqrt();
        assert!((u0_norm(&[1.0; 100]) - oracle).abs() < 1e-12);
        assert!((oracle * oracle - 1.6350).abs() < 1e-4);
    }

    #[test]
    fn diffusion_vanishes_at_zero_and_is_lipschitz() {
        let fam = family(DiffusionSpec::default());
        let zero = RealField::zeros(grid(), 2);
        for j in 1..=fam.len() {
            assert_eq!(
                apply_diffusion(&fam, NoiseState::Velocity(&zero), j)
                    .unwrap()
                    .max_abs(),
                0.0
            );
        }
        for seed in 0..5 {
            let v = random_velocity(seed);
            let w = random_velocity(seed + 100);
            let dist = v.sub(&w).max_abs();
            for j in 1..=fam.len() {
                let gv = apply_diffusion(&fam, NoiseState::Velocity(&v), j).unwrap();
                let gw = apply_diffusion(&fam, NoiseState::Velocity(&w), j).unwrap();
                let bound = fam.coefficients()[j - 1] * fam.sup_shape(j).unwrap();
                assert!(gv.sub(&gw).max_abs() <= bound * dist * (1.0 + 1e-12));
            }
        }
        assert!(apply_diffusion(&fam, NoiseState::Velocity(&zero), 17).is_err());
    }

    #[test]
    fn single_mode_closed_form() {
        let fam = family(DiffusionSpec::default());
        let v = RealField::constant(grid(), &[1.0, 0.0]);
        let out = apply_diffusion(&fam, NoiseState::Velocity(&v), 1).unwrap();
        let g1 = fam.coefficients()[0];
        assert!(out
            .component(0)
            .iter()
            .all(|&x| (x - g1 * 1f64.tanh()).abs() < 1e-15));
        assert!(out.component(1).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn ito_correction_closed_form_and_monotone() {
        let fam = family(DiffusionSpec {
            shape: ShapeKind::Constant,
            ..DiffusionSpec::default()
        });
        let t2 = 1f64.tanh().powi(2);
        let g2: f64 = fam.coefficients().iter().map(|g| g * g).sum();
        let ones = RealField::constant(grid(), &[1.0, 1.0]);
        let got = fam.ito_correction(NoiseState::Velocity(&ones), 16).unwrap();
        assert!((got - g2 * t2 * 2.0).abs() < 1e-12);
        let e1 = RealField::constant(grid(), &[1.0, 0.0]);
        let got = fam.ito_correction(NoiseState::Velocity(&e1), 16).unwrap();
        assert!((got - g2 * t2).abs() < 1e-12);

        let fam = family(DiffusionSpec::default());
        let v = random_velocity(3);
        let a = fam.ito_correction(NoiseState::Velocity(&v), 8).unwrap();
        let b = fam.ito_correction(NoiseState::Velocity(&v), 16).unwrap();
        assert!(a > 0.0 && a <= b);
        // direct quadrature of Σ_k ∫|G_k|²
        let direct: f64 = (1..=16)
            .map(|k| {
                apply_diffusion(&fam, NoiseState::Velocity(&v), k)
                    .unwrap()
                    .energy()
            })
            .sum();
        assert!((direct - b).abs() < 1e-12 * b);
        assert_eq!(
            fam.ito_correction(NoiseState::Velocity(&RealField::zeros(grid(), 2)), 16)
                .unwrap(),
            0.0
        );
        assert!(fam.ito_correction(NoiseState::Velocity(&v), 17).is_err());
    }

    #[test]
    fn ito_correction_is_lipschitz_continuous() {
        // |Σ_k∫|G_k(v)|² − Σ_k∫|G_k(w)|²| ≤ Σ_k g_k² sup a_k² (2‖v‖ + δ) δ d
        let fam = family(DiffusionSpec::default());
        let v = random_velocity(8);
        for delta in [1e-1, 1e-3, 1e-5] {
            let w = v.map(|x| x + delta);
            let a = fam.ito_correction(NoiseState::Velocity(&v), 16).unwrap();
            let b = fam.ito_correction(NoiseState::Velocity(&w), 16).unwrap();
            let c: f64 = (1..=16)
                .map(|k| (fam.coefficients()[k - 1] * fam.sup_shape(k).unwrap()).powi(2))
                .sum::<f64>()
                * 2.0
                * (2.0 * v.max_abs() + delta);
            assert!((a - b).abs() <= c * delta);
        }
    }

    #[test]
    fn inhomogeneous_kind_weights_by_density() {
        let fam = family(DiffusionSpec {
            kind: FamilyKind::Inhomogeneous,
            ..DiffusionSpec::default()
        });
        let m = random_velocity(1);
        let rho = RealField::constant(grid(), &[2.0]);
        let state = NoiseState::DensityMomentum {
            rho: &rho,
            momentum: &m,
        };
        let direct: f64 = (1..=16)
            .map(|k| apply_diffusion(&fam, state, k).unwrap().energy() / 4.0)
            .sum();
        assert!((fam.ito_correction(state, 16).unwrap() - direct).abs() < 1e-12);
        let bad = RealField::constant(grid(), &[0.0]);
        let state = NoiseState::DensityMomentum {
            rho: &bad,
            momentum: &m,
        };
        assert!(matches!(
            fam.ito_correction(state, 4),
            Err(Error::DensityBound { .. })
        ));
        assert!(fam.ito_correction(NoiseState::Velocity(&m), 4).is_err());
    }

    #[test]
    fn growth_verifier_default_passes() {
        for kind in [FamilyKind::Homogeneous, FamilyKind::Inhomogeneous] {
            let fam = family(DiffusionSpec {
                kind,
                ..DiffusionSpec::default()
            });
            let report = verify_growth_conditions(&fam, 200, 1).unwrap();
            let g0 = fam.spec().g0;
            assert!(report.tail_bound.unwrap() <= g0 * g0 / 16.0 + 1e-15);
            assert!(report.lipschitz.iter().all(|p| p.worst_ratio <= p.bound));
        }
    }

    #[test]
    fn growth_verifier_rejects_violators() {
        let flat = family(DiffusionSpec {
            g0: 1.0,
            s: 0.0,
            ..DiffusionSpec::default()
        });
        match verify_growth_conditions(&flat, 50, 1) {
            Err(Error::GrowthCondition { condition, .. }) => {
                assert_eq!(condition, "square_summable")
            }
            other => panic!("{other:?}"),
        }
        let steep = family(DiffusionSpec {
            profile: Profile::ScaledTanh,
            slope: 2.0,
            ..DiffusionSpec::default()
        });
        let report = growth_report(&steep, 200, 1);
        assert!(!report.passed());
        assert!(report.violations.iter().any(|v| v.condition == "lipschitz"));
        assert!(report
            .lipschitz
            .iter()
            .any(|p| p.worst_ratio > 1.5 * p.bound));
    }
}
