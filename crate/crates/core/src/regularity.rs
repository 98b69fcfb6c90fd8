//! Shift-difference Besov seminorms, Hölder exponent fitting and lacunary
//! test fields of prescribed roughness.
//!
//! Shifts are integer grid offsets applied periodically, so every shift is
//! admissible on the torus.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{leray_project, RealField, TorusGrid};
use crate::rng::auxiliary_rng;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;
const SYNTHETIC_STREAM: u64 = 0x5EED_F1E1D;

/// Parameters of the discrete seminorm `max_ζ ‖f(·+ζ) − f‖_{L^q} / |ζ|^α`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BesovParams {
    pub alpha: f64,
    pub q: f64,
    /// Grid offsets; the second entry is ignored in one dimension.
    pub shifts: Vec<[i64; 2]>,
}

impl BesovParams {
    /// `q = 3` with the default dyadic shift set of `grid`.
    pub fn new(grid: TorusGrid, alpha: f64) -> Self {
        BesovParams {
            alpha,
            q: 3.0,
            shifts: default_shifts(grid),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config("alpha", "must lie in (0, 1)"));
        }
        if !(self.q >= 1.0 && self.q.is_finite()) {
            return Err(Error::config("q", "must be finite and >= 1"));
        }
        if self.shifts.is_empty() {
            return Err(Error::config("shifts", "shift set is empty"));
        }
        if self.shifts.iter().any(|s| *s == [0, 0]) {
            return Err(Error::config("shifts", "zero shift"));
        }
        Ok(())
    }
}

/// Dyadic shifts `2^j` grid cells up to half the period, along each axis and
/// (in 2-D) both diagonals.
pub fn default_shifts(grid: TorusGrid) -> Vec<[i64; 2]> {
    dyadic_shifts(grid, 1, grid.n() as i64 / 2)
}

fn dyadic_shifts(grid: TorusGrid, lo: i64, hi: i64) -> Vec<[i64; 2]> {
    let mut out = Vec::new();
    let mut s = lo;
    while s <= hi {
        if grid.dim() == 1 {
            out.push([s, 0]);
        } else {
            out.extend([[s, 0], [0, s], [s, s], [s, -s]]);
        }
        s *= 2;
    }
    out
}

fn shift_length(grid: TorusGrid, shift: [i64; 2]) -> f64 {
    let h = grid.spacing();
    match grid.dim() {
        1 => shift[0].abs() as f64 * h,
        _ => ((shift[0] * shift[0] + shift[1] * shift[1]) as f64).sqrt() * h,
    }
}

/// `‖f(·+ζ) − f‖_{L^q}` with the pointwise Euclidean norm across components.
pub fn shift_difference_norm(f: &RealField, shift: [i64; 2], q: f64) -> f64 {
    let grid = f.grid();
    let n = grid.n() as i64;
    let wrap = |i: usize, s: i64| ((i as i64 + s).rem_euclid(n)) as usize;
    let shifted_index = |idx: usize| -> usize {
        match grid.dim() {
            1 => wrap(idx, shift[0]),
            _ => {
                let [i, j] = grid.multi_index(idx);
                wrap(i, shift[0]) * grid.n() + wrap(j, shift[1])
            }
        }
    };
    let mut acc = 0.0;
    for idx in 0..grid.len() {
        let src = shifted_index(idx);
        let mut sq = 0.0;
        for c in 0..f.components() {
            let comp = f.component(c);
            let d = comp[src] - comp[idx];
            sq += d * d;
        }
        acc += if q == 2.0 { sq } else { sq.sqrt().powf(q) };
    }
    (acc / grid.len() as f64).powf(1.0 / q)
}

/// One row of the per-shift table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ShiftRecord {
    pub shift: [i64; 2],
    pub length: f64,
    pub difference_norm: f64,
    pub ratio: f64,
}

/// Difference norms and seminorm ratios for every shift in `params`.
pub fn besov_table(f: &RealField, params: &BesovParams) -> Result<Vec<ShiftRecord>> {
    params.validate()?;
    let grid = f.grid();
    Ok(params
        .shifts
        .par_iter()
        .map(|&shift| {
            let length = shift_length(grid, shift);
            let difference_norm = shift_difference_norm(f, shift, params.q);
            ShiftRecord {
                shift,
                length,
                difference_norm,
                ratio: difference_norm / length.powf(params.alpha),
            }
        })
        .collect())
}

pub fn besov_seminorm(f: &RealField, params: &BesovParams) -> Result<f64> {
    Ok(besov_table(f, params)?
        .iter()
        .map(|r| r.ratio)
        .fold(0.0, f64::max))
}

/// Least-squares slope of `log ‖f(·+ζ) − f‖_{L²}` against `log |ζ|` over
/// dyadic shifts from two grid cells to a sixteenth of the period, clipped
/// to `[0, 1]`.
pub fn estimate_holder_exponent(f: &RealField) -> Result<f64> {
    let grid = f.grid();
    let shifts = dyadic_shifts(grid, 2, grid.n() as i64 / 16);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for shift in shifts {
        let d = shift_difference_norm(f, shift, 2.0);
        if d > 0.0 && d.is_finite() {
            xs.push(shift_length(grid, shift).ln());
            ys.push(d.ln());
        }
    }
    let mut distinct = xs.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    if distinct.len() < 3 {
        return Err(Error::DegenerateFit(format!(
            "{} usable shift lengths, need at least 3",
            distinct.len()
        )));
    }
    let (slope, _) = least_squares(&xs, &ys);
    Ok(slope.clamp(0.0, 1.0))
}

/// OLS slope and intercept of `ys` against `xs`.
pub(crate) fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

fn default_modes() -> usize {
    1
}

/// Lacunary sum `amplitude · Σ_{m≤M} 2^{−αm} cos(2π k_m·x + φ_m)`, with
/// `|k_m| ≈ 2^m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticFieldSpec {
    pub alpha: f64,
    pub n_octaves: u32,
    pub seed: u64,
    pub amplitude: f64,
    /// Independent modes per octave, each weighted by `1/√K`.
    #[serde(default = "default_modes")]
    pub modes_per_octave: usize,
    /// Leray-project vector outputs.
    #[serde(default)]
    pub divergence_free: bool,
}

impl SyntheticFieldSpec {
    pub fn new(alpha: f64, n_octaves: u32, seed: u64, amplitude: f64) -> Self {
        SyntheticFieldSpec {
            alpha,
            n_octaves,
            seed,
            amplitude,
            modes_per_octave: 1,
            divergence_free: false,
        }
    }
}

pub fn make_synthetic_field(
    spec: &SyntheticFieldSpec,
    grid: TorusGrid,
    components: usize,
) -> Result<RealField> {
    if !(spec.alpha > 0.0 && spec.alpha < 1.0) {
        return Err(Error::config("alpha", "must lie in (0, 1)"));
    }
    if !spec.amplitude.is_finite() {
        return Err(Error::config("amplitude", "must be finite"));
    }
    if spec.modes_per_octave == 0 {
        return Err(Error::config("modes_per_octave", "must be at least 1"));
    }
    if components == 0 {
        return Err(Error::Shape("at least one component".into()));
    }
    if spec.n_octaves >= 60 || (1usize << spec.n_octaves) > grid.n() / 4 {
        return Err(Error::UnresolvableOctaves {
            octaves: spec.n_octaves,
            n: grid.n(),
        });
    }
    let mut rng = auxiliary_rng(spec.seed, SYNTHETIC_STREAM);
    let k_modes = spec.modes_per_octave;
    let weight = 1.0 / (k_modes as f64).sqrt();
    let perpendicular = spec.divergence_free && grid.dim() == 2 && components == 2;
    let mut data = vec![0.0; components * grid.len()];
    for m in 0..=spec.n_octaves {
        let scale = (1u64 << m) as f64;
        let amp = spec.amplitude * weight * 2f64.powf(-spec.alpha * m as f64);
        for _ in 0..k_modes {
            let k: [f64; 2] = if grid.dim() == 1 {
                [scale, 0.0]
            } else {
                let theta = rng.random_range(0.0..TWO_PI);
                [(scale * theta.cos()).round(), (scale * theta.sin()).round()]
            };
            let phase = rng.random_range(0.0..TWO_PI);
            let direction: Vec<f64> = if perpendicular {
                let norm = k[0].hypot(k[1]);
                vec![-k[1] / norm, k[0] / norm]
            } else if components == 1 {
                vec![1.0]
            } else {
                let raw: Vec<f64> = (0..components)
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect();
                let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                raw.into_iter().map(|x| x / norm).collect()
            };
            for idx in 0..grid.len() {
                let x = grid.point(idx);
                let wave = amp * (TWO_PI * (k[0] * x[0] + k[1] * x[1]) + phase).cos();
                for (c, d) in direction.iter().enumerate() {
                    data[c * grid.len() + idx] += d * wave;
                }
            }
        }
    }
    let field = RealField::new(grid, components, data)?;
    if spec.divergence_free && components == grid.dim() && grid.dim() == 2 {
        leray_project(&field)
    } else {
        Ok(field)
    }
}
