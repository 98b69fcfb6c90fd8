//! Periodic-grid fields on the unit torus `[0,1]^d`, their Fourier
//! coefficients, and the spectral calculus the solvers are built from.
//!
//! Layout: a field with `c` components stores `c` contiguous blocks of
//! `n^d` samples. Within a block the index is row-major with axis 0 slowest,
//! so in 2-D sample `(i0, i1)` sits at `i0 * n + i1` and represents the point
//! `(i0 / n, i1 / n)`.
//!
//! Transform convention: `F(k) = n^{-d} Σ_x f(x) e^{-2πi k·x}`, so the `k = 0`
//! coefficient is the grid mean and Parseval reads
//! `Σ |f|² h^d = Σ |F|²` with `h = 1/n`. Derivatives multiply by `2πik`,
//! except that Nyquist wavenumbers are treated as zero so that divergence,
//! gradient and the Leray projector stay mutually consistent on even grids.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Uniform grid on the periodic unit torus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TorusGrid {
    dim: usize,
    n: usize,
}

impl TorusGrid {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension {dim} not in 1..=2")));
        }
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "{n} points per axis (need a power of two >= 8)"
            )));
        }
        Ok(TorusGrid { dim, n })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Number of samples per component.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Coordinates of flat index `idx`; unused axes are zero.
    pub fn point(&self, idx: usize) -> [f64; 2] {
        let h = self.spacing();
        match self.dim {
            1 => [idx as f64 * h, 0.0],
            _ => [(idx / self.n) as f64 * h, (idx % self.n) as f64 * h],
        }
    }

    /// Grid index along each axis.
    pub fn multi_index(&self, idx: usize) -> [usize; 2] {
        match self.dim {
            1 => [idx, 0],
            _ => [idx / self.n, idx % self.n],
        }
    }

    /// Signed integer wavevector of spectral slot `idx`, in `(-n/2, n/2]`.
    pub fn wavevector(&self, idx: usize) -> [i64; 2] {
        let m = self.multi_index(idx);
        let w = |i: usize| -> i64 {
            let i = i as i64;
            let n = self.n as i64;
            if i > n / 2 {
                i - n
            } else {
                i
            }
        };
        match self.dim {
            1 => [w(m[0]), 0],
            _ => [w(m[0]), w(m[1])],
        }
    }

    /// Spectral slot of wavevector `k` (components taken modulo `n`).
    pub fn slot(&self, k: &[i64]) -> usize {
        let n = self.n as i64;
        let wrap = |x: i64| x.rem_euclid(n) as usize;
        match self.dim {
            1 => wrap(k[0]),
            _ => wrap(k[0]) * self.n + wrap(k[1]),
        }
    }

    /// `2π k` with Nyquist components zeroed: the symbol of the discrete gradient.
    pub fn derivative_symbol(&self, idx: usize) -> [f64; 2] {
        let k = self.wavevector(idx);
        let nyq = (self.n / 2) as i64;
        let f = |x: i64| if x == nyq { 0.0 } else { TWO_PI * x as f64 };
        [f(k[0]), f(k[1])]
    }

    /// Largest retained wavenumber under the 2/3 rule.
    pub fn dealias_cutoff(&self) -> i64 {
        ((self.n - 1) / 3) as i64
    }

    pub(crate) fn keeps_mode(&self, idx: usize) -> bool {
        let k = self.wavevector(idx);
        let c = self.dealias_cutoff();
        k[0].abs() <= c && k[1].abs() <= c
    }
}

/// Real samples of a scalar or vector field on a [`TorusGrid`].
#[derive(Clone, Debug, PartialEq)]
pub struct RealField {
    grid: TorusGrid,
    components: usize,
    data: Vec<f64>,
}

impl RealField {
    pub fn new(grid: TorusGrid, components: usize, data: Vec<f64>) -> Result<Self> {
        if components == 0 || data.len() != components * grid.len() {
            return Err(Error::Shape(format!(
                "{} samples for {} component(s) on {}^{}",
                data.len(),
                components,
                grid.n(),
                grid.dim()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("field samples"));
        }
        Ok(RealField {
            grid,
            components,
            data,
        })
    }

    pub fn zeros(grid: TorusGrid, components: usize) -> Self {
        RealField {
            grid,
            components,
            data: vec![0.0; components * grid.len()],
        }
    }

    pub fn constant(grid: TorusGrid, values: &[f64]) -> Self {
        let mut f = Self::zeros(grid, values.len());
        for (c, &v) in values.iter().enumerate() {
            f.component_mut(c).fill(v);
        }
        f
    }

    /// Samples `f(component, x)` at every grid point.
    pub fn from_fn(grid: TorusGrid, components: usize, f: impl Fn(usize, [f64; 2]) -> f64) -> Self {
        let len = grid.len();
        let mut data = Vec::with_capacity(components * len);
        for c in 0..components {
            data.extend((0..len).map(|i| f(c, grid.point(i))));
        }
        RealField {
            grid,
            components,
            data,
        }
    }

    /// Unchecked constructor for internal results known to have the right shape.
    pub(crate) fn from_parts(grid: TorusGrid, components: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), components * grid.len());
        RealField {
            grid,
            components,
            data,
        }
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn component(&self, c: usize) -> &[f64] {
        let len = self.grid.len();
        &self.data[c * len..(c + 1) * len]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [f64] {
        let len = self.grid.len();
        &mut self.data[c * len..(c + 1) * len]
    }

    /// Scalar field holding component `c`.
    pub fn extract(&self, c: usize) -> RealField {
        RealField::from_parts(self.grid, 1, self.component(c).to_vec())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Largest pointwise Euclidean norm over the grid.
    pub fn max_norm(&self) -> f64 {
        let len = self.grid.len();
        (0..len)
            .map(|i| {
                (0..self.components)
                    .map(|c| self.data[c * len + i].powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }

    /// `self += a * other`.
    pub fn add_scaled(&mut self, a: f64, other: &RealField) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += a * y;
        }
    }

    pub fn scaled(&self, a: f64) -> RealField {
        self.map(|x| a * x)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> RealField {
        RealField::from_parts(
            self.grid,
            self.components,
            self.data.iter().map(|&x| f(x)).collect(),
        )
    }

    pub fn sub(&self, other: &RealField) -> RealField {
        let mut out = self.clone();
        out.add_scaled(-1.0, other);
        out
    }

    pub fn add(&self, other: &RealField) -> RealField {
        let mut out = self.clone();
        out.add_scaled(1.0, other);
        out
    }

    /// Multiplies every component pointwise by the scalar field `s`.
    pub fn mul_scalar_field(&self, s: &RealField) -> RealField {
        let len = self.grid.len();
        let w = s.component(0);
        let mut out = self.clone();
        for c in 0..self.components {
            for (x, &y) in out.data[c * len..(c + 1) * len].iter_mut().zip(w) {
                *x *= y;
            }
        }
        out
    }

    /// Pointwise dot product of two fields with equal component counts.
    pub fn pointwise_dot(&self, other: &RealField) -> RealField {
        let len = self.grid.len();
        let mut out = vec![0.0; len];
        for c in 0..self.components {
            for ((o, &a), &b) in out
                .iter_mut()
                .zip(self.component(c))
                .zip(other.component(c))
            {
                *o += a * b;
            }
        }
        RealField::from_parts(self.grid, 1, out)
    }

    /// `∫ self · other dx` (all components).
    pub fn inner(&self, other: &RealField) -> f64 {
        let s: f64 = self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum();
        s / self.grid.len() as f64
    }

    /// `∫ |self|² dx`.
    pub fn energy(&self) -> f64 {
        self.inner(self)
    }

    pub fn l2_norm(&self) -> f64 {
        self.energy().sqrt()
    }
}

/// Fourier coefficients of a real field, in FFT slot order.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralRep {
    grid: TorusGrid,
    components: usize,
    coeffs: Vec<Complex64>,
}

impl SpectralRep {
    pub(crate) fn from_parts(grid: TorusGrid, components: usize, coeffs: Vec<Complex64>) -> Self {
        SpectralRep {
            grid,
            components,
            coeffs,
        }
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn component(&self, c: usize) -> &[Complex64] {
        let len = self.grid.len();
        &self.coeffs[c * len..(c + 1) * len]
    }

    pub(crate) fn component_mut(&mut self, c: usize) -> &mut [Complex64] {
        let len = self.grid.len();
        &mut self.coeffs[c * len..(c + 1) * len]
    }

    /// Coefficient of wavevector `k` in component `c`.
    pub fn coefficient(&self, c: usize, k: &[i64]) -> Complex64 {
        self.component(c)[self.grid.slot(k)]
    }

    /// `Σ |F(k)|²`, equal to the physical `∫|f|²` by Parseval.
    pub fn energy(&self) -> f64 {
        self.coeffs.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Zeroes every mode outside the 2/3-rule box.
    pub fn truncate(&mut self) {
        let grid = self.grid;
        for c in 0..self.components {
            for (idx, z) in self.component_mut(c).iter_mut().enumerate() {
                if !grid.keeps_mode(idx) {
                    *z = Complex64::default();
                }
            }
        }
    }

    /// Applies `I - k kᵀ/|k|²` mode by mode (vector fields with `d` components).
    pub fn project(&mut self) {
        let grid = self.grid;
        let len = grid.len();
        if self.components != grid.dim() {
            return;
        }
        match grid.dim() {
            1 => {
                // every mode with a nonzero symbol is a gradient in 1-D
                let nyq = grid.n() / 2;
                for (idx, z) in self.coeffs.iter_mut().enumerate() {
                    if idx != 0 && idx != nyq {
                        *z = Complex64::default();
                    }
                }
            }
            _ => {
                let (a, b) = self.coeffs.split_at_mut(len);
                for idx in 0..len {
                    let k = grid.derivative_symbol(idx);
                    let k2 = k[0] * k[0] + k[1] * k[1];
                    if k2 == 0.0 {
                        continue;
                    }
                    let dot = (a[idx] * k[0] + b[idx] * k[1]) / k2;
                    a[idx] -= dot * k[0];
                    b[idx] -= dot * k[1];
                }
            }
        }
    }

    /// Energy of the projected field, `Σ_k |P F(k)|²`, without forming it.
    pub fn projected_energy(&self) -> f64 {
        let grid = self.grid;
        let len = grid.len();
        if grid.dim() == 1 {
            return self.coeffs[0].norm_sqr() + self.coeffs[grid.n() / 2].norm_sqr();
        }
        let (a, b) = self.coeffs.split_at(len);
        let mut total = 0.0;
        for idx in 0..len {
            let k = grid.derivative_symbol(idx);
            let k2 = k[0] * k[0] + k[1] * k[1];
            let e = a[idx].norm_sqr() + b[idx].norm_sqr();
            if k2 == 0.0 {
                total += e;
            } else {
                let dot = a[idx] * k[0] + b[idx] * k[1];
                total += e - dot.norm_sqr() / k2;
            }
        }
        total
    }
}

/// Forward transform. Rejects non-finite samples.
pub fn to_spectral(f: &RealField) -> Result<SpectralRep> {
    if !f.is_finite() {
        return Err(Error::NonFinite("to_spectral input"));
    }
    Ok(spectral_unchecked(f))
}

pub(crate) fn spectral_unchecked(f: &RealField) -> SpectralRep {
    let grid = f.grid;
    let (n, d) = (grid.n(), grid.dim());
    let mut coeffs = Vec::with_capacity(f.data.len());
    let mut c = 0;
    while c < f.components {
        if c + 1 < f.components {
            let (a, b) = fft::forward_real_pair(f.component(c), f.component(c + 1), n, d);
            coeffs.extend(a);
            coeffs.extend(b);
            c += 2;
        } else {
            coeffs.extend(fft::forward_real(f.component(c), n, d));
            c += 1;
        }
    }
    SpectralRep::from_parts(grid, f.components, coeffs)
}

/// Inverse transform; imaginary round-off is discarded.
pub fn to_physical(s: &SpectralRep) -> RealField {
    let grid = s.grid;
    let (n, d) = (grid.n(), grid.dim());
    let mut data = Vec::with_capacity(s.coeffs.len());
    let mut c = 0;
    while c < s.components {
        if c + 1 < s.components {
            let (a, b) = fft::inverse_real_pair(s.component(c), s.component(c + 1), n, d);
            data.extend(a);
            data.extend(b);
            c += 2;
        } else {
            data.extend(fft::inverse_real(s.component(c), n, d));
            c += 1;
        }
    }
    RealField::from_parts(grid, s.components, data)
}

/// Spectral gradient of a scalar field.
pub fn gradient(f: &RealField) -> Result<RealField> {
    if f.components != 1 {
        return Err(Error::Shape("gradient expects a scalar field".into()));
    }
    let grid = f.grid;
    let s = to_spectral(f)?;
    let src = s.component(0);
    let d = grid.dim();
    let mut coeffs = Vec::with_capacity(d * grid.len());
    for axis in 0..d {
        coeffs.extend(src.iter().enumerate().map(|(idx, z)| {
            let k = grid.derivative_symbol(idx)[axis];
            Complex64::new(-k * z.im, k * z.re)
        }));
    }
    Ok(to_physical(&SpectralRep::from_parts(grid, d, coeffs)))
}

/// Spectral divergence of a `d`-component vector field.
pub fn divergence(u: &RealField) -> Result<RealField> {
    let grid = u.grid;
    if u.components != grid.dim() {
        return Err(Error::Shape(
            "divergence expects a d-component field".into(),
        ));
    }
    let s = to_spectral(u)?;
    Ok(to_physical(&divergence_spectral(&s)))
}

pub(crate) fn divergence_spectral(s: &SpectralRep) -> SpectralRep {
    let grid = s.grid;
    let mut out = vec![Complex64::default(); grid.len()];
    for axis in 0..grid.dim() {
        for (idx, (o, z)) in out.iter_mut().zip(s.component(axis)).enumerate() {
            let k = grid.derivative_symbol(idx)[axis];
            *o += Complex64::new(-k * z.im, k * z.re);
        }
    }
    SpectralRep::from_parts(grid, 1, out)
}

/// Leray projection onto discretely divergence-free fields.
pub fn leray_project(u: &RealField) -> Result<RealField> {
    if u.components != u.grid.dim() {
        return Err(Error::Shape(
            "leray_project expects a d-component field".into(),
        ));
    }
    let mut s = to_spectral(u)?;
    s.project();
    Ok(to_physical(&s))
}

/// `∫_{T^d} f dx` for a scalar field (the grid mean).
pub fn integrate(f: &RealField) -> f64 {
    debug_assert_eq!(f.components, 1);
    f.component(0).iter().sum::<f64>() / f.grid.len() as f64
}

/// `P[div(v ⊗ v)]`, optionally dealiased by the 2/3 rule before and after
/// the pointwise products.
pub fn nonlinear_term(v: &RealField, dealias: bool) -> Result<RealField> {
    let grid = v.grid;
    if v.components != grid.dim() {
        return Err(Error::Shape(
            "nonlinear_term expects a d-component field".into(),
        ));
    }
    let mut s = to_spectral(v)?;
    Ok(to_physical(&nonlinear_spectral(&mut s, dealias)))
}

/// Spectral `P[div(v⊗v)]` from the spectrum of `v` (truncated in place when
/// dealiasing).
pub(crate) fn nonlinear_spectral(s: &mut SpectralRep, dealias: bool) -> SpectralRep {
    let grid = s.grid;
    let d = grid.dim();
    if dealias {
        s.truncate();
    }
    let vt = to_physical(s);
    let len = grid.len();
    // flux tensor w_ij = v_i v_j, row i holds (w_i1, ..., w_id)
    let mut out = vec![Complex64::default(); d * len];
    let mut flux = RealField::zeros(grid, d * d);
    for i in 0..d {
        for j in 0..d {
            let dst = flux.component_mut(i * d + j);
            for ((o, &a), &b) in dst.iter_mut().zip(vt.component(i)).zip(vt.component(j)) {
                *o = a * b;
            }
        }
    }
    let mut fs = spectral_unchecked(&flux);
    if dealias {
        fs.truncate();
    }
    for i in 0..d {
        for j in 0..d {
            let src = fs.component(i * d + j);
            let dst = &mut out[i * len..(i + 1) * len];
            for (idx, (o, z)) in dst.iter_mut().zip(src).enumerate() {
                let k = grid.derivative_symbol(idx)[j];
                *o += Complex64::new(-k * z.im, k * z.re);
            }
        }
    }
    let mut res = SpectralRep::from_parts(grid, d, out);
    res.project();
    res
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(grid: TorusGrid, comps: usize, seed: u64) -> RealField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..comps * grid.len())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        RealField::new(grid, comps, data).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(TorusGrid::new(3, 16).is_err());
        assert!(TorusGrid::new(2, 12).is_err());
        assert!(TorusGrid::new(2, 4).is_err());
        let g = TorusGrid::new(2, 16).unwrap();
        assert_eq!(g.len(), 256);
        assert_eq!(g.spacing(), 1.0 / 16.0);
    }

    #[test]
    fn constant_has_only_dc() {
        let g = TorusGrid::new(2, 16).unwrap();
        let f = RealField::constant(g, &[2.5]);
        let s = to_spectral(&f).unwrap();
        assert!((s.coefficient(0, &[0, 0]) - Complex64::new(2.5, 0.0)).norm() < 1e-14);
        let rest: f64 = s.component(0)[1..].iter().map(|z| z.norm()).sum();
        assert!(rest < 1e-13);
    }

    #[test]
    fn cosine_coefficients_by_hand() {
        // direct DFT at n = 8: cos(2πx) has coefficient 1/2 at k = ±1
        let g = TorusGrid::new(1, 8).unwrap();
        let f = RealField::from_fn(g, 1, |_, x| (TWO_PI * x[0]).cos());
        let s = to_spectral(&f).unwrap();
        for idx in 0..8 {
            let k = g.wavevector(idx)[0];
            let expected = if k.abs() == 1 { 0.5 } else { 0.0 };
            let z = s.component(0)[idx];
            assert!(
                (z.re - expected).abs() < 1e-15 && z.im.abs() < 1e-15,
                "k={k} {z}"
            );
        }
    }

    #[test]
    fn round_trip_and_parseval() {
        for (dim, n) in [(1, 64), (2, 32), (2, 64)] {
            let g = TorusGrid::new(dim, n).unwrap();
            for comps in 1..=3 {
                let f = random_field(g, comps, 7 + comps as u64);
                let s = to_spectral(&f).unwrap();
                let back = to_physical(&s);
                let err = back.sub(&f).max_abs() / f.max_abs();
                assert!(err < 1e-12, "round trip {err}");
                let rel = (s.energy() - f.energy()).abs() / f.energy();
                assert!(rel < 1e-12, "parseval {rel}");
            }
        }
    }

    #[test]
    fn hermitian_symmetry() {
        let g = TorusGrid::new(2, 16).unwrap();
        let s = to_spectral(&random_field(g, 2, 3)).unwrap();
        for c in 0..2 {
            for idx in 0..g.len() {
                let neg = fft::negate_index(idx, 16, 2);
                assert!((s.component(c)[idx] - s.component(c)[neg].conj()).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn rejects_non_finite() {
        let g = TorusGrid::new(1, 8).unwrap();
        let mut data = vec![0.0; 8];
        data[3] = f64::NAN;
        assert!(RealField::new(g, 1, data).is_err());
    }

    #[test]
    fn gradient_of_sine() {
        let g = TorusGrid::new(2, 32).unwrap();
        let f = RealField::from_fn(g, 1, |_, x| (TWO_PI * x[0]).sin());
        let grad = gradient(&f).unwrap();
        let exact = RealField::from_fn(g, 2, |c, x| {
            if c == 0 {
                TWO_PI * (TWO_PI * x[0]).cos()
            } else {
                0.0
            }
        });
        assert!(grad.sub(&exact).max_abs() < 1e-10);
        let c = gradient(&RealField::constant(g, &[3.0])).unwrap();
        assert!(c.max_abs() < 1e-13);
    }

    #[test]
    fn divergence_of_gradient_is_laplacian() {
        let g = TorusGrid::new(2, 32).unwrap();
        let f = RealField::from_fn(g, 1, |_, x| {
            (TWO_PI * x[0]).sin() * (2.0 * TWO_PI * x[1]).cos()
        });
        let lap = divergence(&gradient(&f).unwrap()).unwrap();
        let exact = f.scaled(-(TWO_PI * TWO_PI) * 5.0);
        assert!(lap.sub(&exact).max_abs() < 1e-9);
    }

    #[test]
    fn projection_properties() {
        let g = TorusGrid::new(2, 32).unwrap();
        let u = random_field(g, 2, 11);
        let pu = leray_project(&u).unwrap();
        assert!(divergence(&pu).unwrap().max_abs() < 1e-12);
        let ppu = leray_project(&pu).unwrap();
        assert!(ppu.sub(&pu).max_abs() < 1e-12);
        assert!(pu.energy() <= u.energy());
        // self-adjoint in L²
        let w = random_field(g, 2, 12);
        let pw = leray_project(&w).unwrap();
        assert!((pu.inner(&w) - u.inner(&pw)).abs() < 1e-13);
    }

    #[test]
    fn projection_kills_gradients_and_keeps_shear() {
        let g = TorusGrid::new(2, 32).unwrap();
        let phi = RealField::from_fn(g, 1, |_, x| {
            (TWO_PI * x[0]).cos() * (TWO_PI * 3.0 * x[1]).sin()
        });
        let grad = gradient(&phi).unwrap();
        assert!(leray_project(&grad).unwrap().max_abs() < 1e-12);
        let shear = RealField::from_fn(
            g,
            2,
            |c, x| if c == 0 { (TWO_PI * x[1]).sin() } else { 0.0 },
        );
        assert!(leray_project(&shear).unwrap().sub(&shear).max_abs() < 1e-12);
    }

    #[test]
    fn quadrature() {
        let g = TorusGrid::new(2, 16).unwrap();
        assert!((integrate(&RealField::constant(g, &[1.75])) - 1.75).abs() < 1e-15);
        let s2 = RealField::from_fn(g, 1, |_, x| (TWO_PI * x[0]).sin().powi(2));
        assert!((integrate(&s2) - 0.5).abs() < 1e-12);
        let c = RealField::from_fn(g, 1, |_, x| (TWO_PI * x[0]).cos());
        assert!(integrate(&c).abs() < 1e-14);
    }

    #[test]
    fn nonlinear_term_zero_and_pairing() {
        let g = TorusGrid::new(2, 32).unwrap();
        assert!(
            nonlinear_term(&RealField::zeros(g, 2), true)
                .unwrap()
                .max_abs()
                == 0.0
        );
        let v = leray_project(&random_field(g, 2, 5)).unwrap();
        let nl = nonlinear_term(&v, true).unwrap();
        assert!(divergence(&nl).unwrap().max_abs() < 1e-10);
        assert!(v.inner(&nl).abs() < 1e-11, "pairing {}", v.inner(&nl));
    }

    #[test]
    fn nonlinear_term_single_mode_interaction() {
        // equal-shell modes are steady: v = (sin 2πy, sin 2πx) has P[v·∇v] = 0
        let g = TorusGrid::new(2, 16).unwrap();
        let v = RealField::from_fn(g, 2, |c, x| {
            if c == 0 {
                (TWO_PI * x[1]).sin()
            } else {
                (TWO_PI * x[0]).sin()
            }
        });
        assert!(nonlinear_term(&v, true).unwrap().max_abs() < 1e-12);

        // v = (sin 2πy, sin 4πx):
        //   v·∇v = π(1,2) sin 2π(2x+y) + π(1,-2) sin 2π(2x-y)
        // projecting off k = (2,±1) leaves π(-3/5, ±6/5) on each mode
        let v = RealField::from_fn(g, 2, |c, x| {
            if c == 0 {
                (TWO_PI * x[1]).sin()
            } else {
                (2.0 * TWO_PI * x[0]).sin()
            }
        });
        let nl = nonlinear_term(&v, true).unwrap();
        let pi = std::f64::consts::PI;
        let exact = RealField::from_fn(g, 2, |c, x| {
            let plus = (TWO_PI * (2.0 * x[0] + x[1])).sin();
            let minus = (TWO_PI * (2.0 * x[0] - x[1])).sin();
            if c == 0 {
                -0.6 * pi * (plus + minus)
            } else {
                1.2 * pi * (plus - minus)
            }
        });
        assert!(
            nl.sub(&exact).max_abs() < 1e-12,
            "{}",
            nl.sub(&exact).max_abs()
        );
    }

    #[test]
    fn nyquist_modes_stay_consistent() {
        let g = TorusGrid::new(2, 16).unwrap();
        // alternating pattern lives on the Nyquist mode along x0
        let u = RealField::from_fn(g, 2, |c, x| {
            if c == 0 {
                (16.0 * std::f64::consts::PI * x[0]).cos()
            } else {
                0.0
            }
        });
        assert!(divergence(&u).unwrap().max_abs() < 1e-12);
        let pu = leray_project(&u).unwrap();
        assert!(pu.sub(&u).max_abs() < 1e-12);
    }
}
