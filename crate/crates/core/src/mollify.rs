//! Standard mollifier `η_ε` and periodic convolution `f^ε = f * η_ε`.
//!
//! The kernel is the classical bump `exp(-1/(1 - |x/ε|²))` sampled at the
//! grid points (periodic distance to the origin) and renormalised to unit
//! discrete mass, so constants and means are preserved exactly on the grid.
//! Convolution is a product of transforms; kernel symbols are cached per
//! grid and radius.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock, RwLock};

use crate::error::{Error, Result};
use crate::fft;
use crate::field::{gradient, to_physical, to_spectral, RealField, SpectralRep, TorusGrid};

/// Discretised standard mollifier of radius `epsilon` on a grid.
#[derive(Clone, Debug)]
pub struct MollifierKernel {
    grid: TorusGrid,
    epsilon: f64,
    symbol: Arc<Vec<f64>>,
}

type SymbolCache = HashMap<(usize, usize, u64), Arc<Vec<f64>>>;

fn bump(r: f64) -> f64 {
    if r < 1.0 {
        (-1.0 / (1.0 - r * r)).exp()
    } else {
        0.0
    }
}

fn periodic_offset(x: f64) -> f64 {
    if x >= 0.5 {
        x - 1.0
    } else {
        x
    }
}

impl MollifierKernel {
    pub fn new(grid: TorusGrid, epsilon: f64) -> Result<Self> {
        let min = 2.0 * grid.spacing();
        if !(epsilon.is_finite() && epsilon >= min && epsilon < 0.5) {
            return Err(Error::UnresolvedMollifier { epsilon, min });
        }
        static CACHE: OnceLock<RwLock<SymbolCache>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| RwLock::new(HashMap::new()));
        let key = (grid.dim(), grid.n(), epsilon.to_bits());
        let cached = cache
            .read()
            .expect("kernel cache poisoned")
            .get(&key)
            .cloned();
        let symbol = match cached {
            Some(s) => s,
            None => {
                let w = Self::sample_weights(grid, epsilon);
                // forward() divides by N; the convolution symbol is the raw sum
                let scale = grid.len() as f64;
                let sym: Vec<f64> = fft::forward_real(&w, grid.n(), grid.dim())
                    .into_iter()
                    .map(|z| z.re * scale)
                    .collect();
                let sym = Arc::new(sym);
                cache
                    .write()
                    .expect("kernel cache poisoned")
                    .insert(key, Arc::clone(&sym));
                sym
            }
        };
        Ok(MollifierKernel {
            grid,
            epsilon,
            symbol,
        })
    }

    fn sample_weights(grid: TorusGrid, epsilon: f64) -> Vec<f64> {
        let mut w: Vec<f64> = (0..grid.len())
            .map(|i| {
                let x = grid.point(i);
                let (a, b) = (periodic_offset(x[0]), periodic_offset(x[1]));
                bump((a * a + b * b).sqrt() / epsilon)
            })
            .collect();
        let mass: f64 = w.iter().sum();
        for x in &mut w {
            *x /= mass;
        }
        w
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    /// Nonnegative kernel weights at grid offsets; they sum to one.
    pub fn weights(&self) -> Vec<f64> {
        Self::sample_weights(self.grid, self.epsilon)
    }

    /// Fourier multiplier of the convolution at wavevector `k`.
    pub fn multiplier(&self, k: &[i64]) -> f64 {
        self.symbol[self.grid.slot(k)]
    }

    pub(crate) fn apply_spectral(&self, s: &mut SpectralRep) {
        for c in 0..s.components() {
            for (z, &m) in s.component_mut(c).iter_mut().zip(self.symbol.iter()) {
                *z *= m;
            }
        }
    }

    /// Convolves every component of `f` with the kernel.
    pub fn apply(&self, f: &RealField) -> Result<RealField> {
        if f.grid() != self.grid {
            return Err(Error::Shape(
                "mollifier grid differs from field grid".into(),
            ));
        }
        let mut s = to_spectral(f)?;
        self.apply_spectral(&mut s);
        Ok(to_physical(&s))
    }
}

/// `f^ε := f * η_ε`, componentwise.
pub fn mollify(f: &RealField, epsilon: f64) -> Result<RealField> {
    MollifierKernel::new(f.grid(), epsilon)?.apply(f)
}

/// Discrepancy between differentiating before and after mollifying.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CommutationReport {
    pub epsilon: f64,
    /// `max |∂(f^ε) - (∂f)^ε|` over components, axes and grid points.
    pub max_discrepancy: f64,
}

pub fn mollify_commutes_with_derivative(f: &RealField, epsilon: f64) -> Result<CommutationReport> {
    let kernel = MollifierKernel::new(f.grid(), epsilon)?;
    let mut worst = 0.0_f64;
    for c in 0..f.components() {
        let fc = f.extract(c);
        let path_a = gradient(&kernel.apply(&fc)?)?;
        let path_b = kernel.apply(&gradient(&fc)?)?;
        worst = worst.max(path_a.sub(&path_b).max_abs());
    }
    Ok(CommutationReport {
        epsilon,
        max_discrepancy: worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::integrate;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

    fn random_field(grid: TorusGrid, seed: u64, lo: f64, hi: f64) -> RealField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..grid.len()).map(|_| rng.random_range(lo..hi)).collect();
        RealField::new(grid, 1, data).unwrap()
    }

    #[test]
    fn kernel_mass_support_sign() {
        let g = TorusGrid::new(2, 64).unwrap();
        let k = MollifierKernel::new(g, 0.1).unwrap();
        let w = k.weights();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        assert!(w.iter().all(|&x| x >= 0.0));
        for (i, &x) in w.iter().enumerate() {
            let p = g.point(i);
            let r = (periodic_offset(p[0]).powi(2) + periodic_offset(p[1]).powi(2)).sqrt();
            if r >= 0.1 {
                assert_eq!(x, 0.0);
            }
        }
        assert!((k.multiplier(&[0, 0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn under_resolved_radius_is_rejected() {
        let g = TorusGrid::new(1, 64).unwrap();
        assert!(MollifierKernel::new(g, 1.5 / 64.0).is_err());
        assert!(MollifierKernel::new(g, 0.5).is_err());
        assert!(MollifierKernel::new(g, 2.0 / 64.0).is_ok());
    }

    #[test]
    fn constant_is_fixed() {
        let g = TorusGrid::new(2, 32).unwrap();
        let c = RealField::constant(g, &[3.25, -1.0]);
        let m = mollify(&c, 0.2).unwrap();
        assert!(m.sub(&c).max_abs() < 1e-14);
    }

    #[test]
    fn single_mode_matches_direct_convolution() {
        // oracle: explicit periodic sum Σ_y f(x-y) w(y) at n = 32
        let g = TorusGrid::new(2, 32).unwrap();
        let eps = 0.15;
        let f = RealField::from_fn(g, 1, |_, x| (TWO_PI * (3.0 * x[0] - 2.0 * x[1])).cos());
        let kernel = MollifierKernel::new(g, eps).unwrap();
        let w = kernel.weights();
        let n = 32;
        let mut direct = vec![0.0; g.len()];
        for (i, out) in direct.iter_mut().enumerate() {
            let (i0, i1) = (i / n, i % n);
            for (j, &wj) in w.iter().enumerate() {
                if wj == 0.0 {
                    continue;
                }
                let (j0, j1) = (j / n, j % n);
                let src = ((i0 + n - j0) % n) * n + (i1 + n - j1) % n;
                *out += f.data()[src] * wj;
            }
        }
        let spectral = kernel.apply(&f).unwrap();
        let err = spectral
            .data()
            .iter()
            .zip(&direct)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-13, "{err}");
        // and the result is the same mode scaled by the multiplier
        let scaled = f.scaled(kernel.multiplier(&[3, -2]));
        assert!(spectral.sub(&scaled).max_abs() < 1e-13);
    }

    #[test]
    fn approximation_improves_as_radius_halves() {
        let g = TorusGrid::new(2, 128).unwrap();
        let f = RealField::from_fn(g, 1, |_, x| {
            (TWO_PI * x[0]).sin() * (TWO_PI * 2.0 * x[1]).cos() + (TWO_PI * 5.0 * x[1]).sin()
        });
        let mut last = f64::INFINITY;
        for eps in [0.2, 0.1, 0.05, 0.025] {
            let err = mollify(&f, eps).unwrap().sub(&f).l2_norm();
            assert!(err < last, "eps {eps}: {err} !< {last}");
            last = err;
        }
    }

    #[test]
    fn commutes_with_derivative() {
        let g = TorusGrid::new(2, 64).unwrap();
        let c = RealField::constant(g, &[1.0]);
        assert_eq!(
            mollify_commutes_with_derivative(&c, 0.1)
                .unwrap()
                .max_discrepancy,
            0.0
        );
        let s = RealField::from_fn(g, 1, |_, x| (TWO_PI * x[0]).sin());
        assert!(
            mollify_commutes_with_derivative(&s, 0.1)
                .unwrap()
                .max_discrepancy
                <= 1e-10
        );
        let r = crate::mollify::mollify(&random_field(g, 4, -1.0, 1.0), 4.0 / 64.0).unwrap();
        assert!(
            mollify_commutes_with_derivative(&r, 0.07)
                .unwrap()
                .max_discrepancy
                <= 1e-9
        );
    }

    #[test]
    fn mass_contraction_positivity() {
        let g = TorusGrid::new(2, 64).unwrap();
        let f = random_field(g, 9, 0.5, 2.0);
        let m = mollify(&f, 0.08).unwrap();
        assert!((integrate(&m) - integrate(&f)).abs() < 1e-12);
        assert!(m.l2_norm() <= f.l2_norm());
        assert!(m.min() >= 0.5 - 1e-12);
    }
}
