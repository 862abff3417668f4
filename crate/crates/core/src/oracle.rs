//! Brute-force reference computations used to cross-check the fast paths.
//!
//! Nothing in here is called by the production pipeline.

use num_complex::Complex;

use crate::scalar::Scalar;

/// O(N²) forward DFT, `X[k] = Σ x[n] exp(-2πi k n / N)`, accumulated in f64.
pub fn naive_dft<T: Scalar>(x: &[Complex<T>]) -> Vec<Complex<f64>> {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(i, v)| {
                    // reduce k*i mod n before scaling to keep the angle exact
                    let ang = -std::f64::consts::TAU * ((k * i) % n) as f64 / n as f64;
                    Complex::new(v.re.to_f64_lossy(), v.im.to_f64_lossy()) * Complex::from_polar(1.0, ang)
                })
                .sum()
        })
        .collect()
}

/// DFT of `x` zero-padded to `len`.
pub fn naive_dft_padded<T: Scalar>(x: &[Complex<T>], len: usize) -> Vec<Complex<f64>> {
    let mut padded = vec![Complex::new(T::zero(), T::zero()); len];
    padded[..x.len()].copy_from_slice(x);
    naive_dft(&padded)
}

/// Largest |a - b| / max(|b|) over two spectra.
pub fn max_relative_error<T: Scalar>(fast: &[Complex<T>], reference: &[Complex<f64>]) -> f64 {
    let scale = reference.iter().map(|c| c.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    fast.iter()
        .zip(reference)
        .map(|(a, b)| (Complex::new(a.re.to_f64_lossy(), a.im.to_f64_lossy()) - b).norm())
        .fold(0.0, f64::max)
        / scale
}

/// Direct evaluation of the voxel-wise focal loss, one voxel at a time.
pub fn focal_loss_scalar(pred: &[f64], target: &[f64], alpha: f64, beta: f64, eps: f64) -> f64 {
    let mut sum = 0.0;
    let mut n_pos = 0usize;
    for (&p, &y) in pred.iter().zip(target) {
        let p = p.clamp(eps, 1.0 - eps);
        if y == 1.0 {
            n_pos += 1;
            sum += (1.0 - p).powf(alpha) * p.ln();
        } else {
            sum += (1.0 - y).powf(beta) * p.powf(alpha) * (1.0 - p).ln();
        }
    }
    -sum / n_pos.max(1) as f64
}
