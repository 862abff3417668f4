use num_complex::Complex;
use rustfft::FftPlanner;

use super::window::WindowKind;
use crate::error::Result;
use crate::scalar::Scalar;
use crate::sim::AdcCube;

/// Complex range spectra, row-major (chirp, antenna, range_bin).
#[derive(Debug, Clone, PartialEq)]
pub struct RangeProfiles<T> {
    pub data: Vec<Complex<T>>,
    pub chirps: usize,
    pub antennas: usize,
    pub range_bins: usize,
}

impl<T: Scalar> RangeProfiles<T> {
    pub fn profile(&self, chirp: usize, antenna: usize) -> &[Complex<T>] {
        let s = (chirp * self.antennas + antenna) * self.range_bins;
        &self.data[s..s + self.range_bins]
    }
}

/// Windowed FFT along the fast-time axis of every (chirp, antenna) row.
///
/// Samples are complex baseband, so all `samples_per_chirp` bins map to
/// non-negative ranges: bin `k` sits at `k * range_res`.
pub fn range_fft<T: Scalar>(cube: &AdcCube<T>, window: WindowKind) -> Result<RangeProfiles<T>> {
    let n = cube.samples;
    let w: Vec<T> = window.coefficients(n);
    let mut data = cube.data.clone();
    for row in data.chunks_exact_mut(n) {
        for (v, &c) in row.iter_mut().zip(&w) {
            *v = *v * c;
        }
    }
    if n > 0 && !data.is_empty() {
        let fft = FftPlanner::<T>::new().plan_fft_forward(n);
        fft.process(&mut data);
    }
    Ok(RangeProfiles {
        data,
        chirps: cube.chirps,
        antennas: cube.antennas,
        range_bins: n,
    })
}
