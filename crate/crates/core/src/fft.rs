//! Cached complex FFT plans and the 1-D / 2-D transforms built on them.
//!
//! Forward transforms carry the `1/N^d` factor, so a coefficient is the mean of
//! `f(x) e^{-2πik·x}` over the grid. Inverse transforms are unnormalised sums.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock, RwLock};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

type PlanMap = HashMap<(usize, bool), Arc<dyn Fft<f64>>>;

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    static PLANS: OnceLock<RwLock<PlanMap>> = OnceLock::new();
    let plans = PLANS.get_or_init(|| RwLock::new(HashMap::new()));
    if let Some(p) = plans
        .read()
        .expect("fft plan cache poisoned")
        .get(&(n, inverse))
    {
        return Arc::clone(p);
    }
    let mut guard = plans.write().expect("fft plan cache poisoned");
    Arc::clone(guard.entry((n, inverse)).or_insert_with(|| {
        let mut planner = FftPlanner::new();
        if inverse {
            planner.plan_fft_inverse(n)
        } else {
            planner.plan_fft_forward(n)
        }
    }))
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], n: usize) {
    const BLOCK: usize = 16;
    for ib in (0..n).step_by(BLOCK) {
        for jb in (0..n).step_by(BLOCK) {
            for i in ib..(ib + BLOCK).min(n) {
                for j in jb..(jb + BLOCK).min(n) {
                    dst[j * n + i] = src[i * n + j];
                }
            }
        }
    }
}

/// In-place transform of one scalar block of `n^dim` samples, row-major with
/// axis 0 slowest.
pub(crate) fn transform(data: &mut [Complex64], n: usize, dim: usize, inverse: bool) {
    let fft = plan(n, inverse);
    match dim {
        1 => fft.process(data),
        2 => {
            let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
            // axis 1 (contiguous rows)
            fft.process_with_scratch(data, &mut scratch);
            let mut tmp = vec![Complex64::default(); n * n];
            transpose(data, &mut tmp, n);
            fft.process_with_scratch(&mut tmp, &mut scratch);
            transpose(&tmp, data, n);
        }
        _ => unreachable!("grid dimension is validated at construction"),
    }
    if !inverse {
        let scale = 1.0 / data.len() as f64;
        for c in data.iter_mut() {
            *c *= scale;
        }
    }
}

/// Forward transform of a real block.
pub(crate) fn forward_real(samples: &[f64], n: usize, dim: usize) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = samples.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    transform(&mut buf, n, dim, false);
    buf
}

/// Forward transform of two real blocks at once, packed as `a + i b`.
pub(crate) fn forward_real_pair(
    a: &[f64],
    b: &[f64],
    n: usize,
    dim: usize,
) -> (Vec<Complex64>, Vec<Complex64>) {
    let len = a.len();
    let mut buf: Vec<Complex64> = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| Complex64::new(x, y))
        .collect();
    transform(&mut buf, n, dim, false);
    let mut fa = vec![Complex64::default(); len];
    let mut fb = vec![Complex64::default(); len];
    for idx in 0..len {
        let neg = negate_index(idx, n, dim);
        let z = buf[idx];
        let zc = buf[neg].conj();
        fa[idx] = (z + zc) * 0.5;
        fb[idx] = (z - zc) * Complex64::new(0.0, -0.5);
    }
    (fa, fb)
}

/// Inverse transform returning the real part.
pub(crate) fn inverse_real(coeffs: &[Complex64], n: usize, dim: usize) -> Vec<f64> {
    let mut buf = coeffs.to_vec();
    transform(&mut buf, n, dim, true);
    buf.into_iter().map(|c| c.re).collect()
}

/// Inverse of two Hermitian spectra at once.
pub(crate) fn inverse_real_pair(
    a: &[Complex64],
    b: &[Complex64],
    n: usize,
    dim: usize,
) -> (Vec<f64>, Vec<f64>) {
    let i = Complex64::new(0.0, 1.0);
    let mut buf: Vec<Complex64> = a.iter().zip(b).map(|(&x, &y)| x + i * y).collect();
    transform(&mut buf, n, dim, true);
    buf.into_iter().map(|c| (c.re, c.im)).unzip()
}

/// Flat index of the wavevector `-k` for flat index `idx`.
pub(crate) fn negate_index(idx: usize, n: usize, dim: usize) -> usize {
    match dim {
        1 => (n - idx) % n,
        _ => {
            let (i, j) = (idx / n, idx % n);
            ((n - i) % n) * n + (n - j) % n
        }
    }
}
