use num_complex::Complex;
use rustfft::FftPlanner;

use super::range::RangeProfiles;
use super::window::WindowKind;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::scene::RadarConfig;

/// Complex range-Doppler spectra, row-major (doppler_bin, antenna, range_bin).
///
/// The Doppler axis is FFT-shifted: bin `dopplers / 2` is zero velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeDopplerCube<T> {
    pub data: Vec<Complex<T>>,
    pub dopplers: usize,
    pub antennas: usize,
    pub range_bins: usize,
    /// m per range bin.
    pub range_res: f64,
    /// m/s per Doppler bin.
    pub velocity_res: f64,
}

impl<T: Scalar> RangeDopplerCube<T> {
    #[inline]
    pub fn index(&self, doppler: usize, antenna: usize, range: usize) -> usize {
        (doppler * self.antennas + antenna) * self.range_bins + range
    }

    pub fn get(&self, doppler: usize, antenna: usize, range: usize) -> Complex<T> {
        self.data[self.index(doppler, antenna, range)]
    }

    pub fn velocity_of_bin(&self, doppler: usize) -> f64 {
        (doppler as f64 - (self.dopplers / 2) as f64) * self.velocity_res
    }

    pub fn range_of_bin(&self, range: usize) -> f64 {
        range as f64 * self.range_res
    }

    /// |X|² at one antenna, laid out (doppler, range).
    pub fn antenna_power(&self, antenna: usize) -> Vec<T> {
        let mut out = Vec::with_capacity(self.dopplers * self.range_bins);
        for d in 0..self.dopplers {
            let s = self.index(d, antenna, 0);
            out.extend(self.data[s..s + self.range_bins].iter().map(|c| c.norm_sqr()));
        }
        out
    }

    /// Σ over antennas of |X|², laid out (doppler, range).
    pub fn integrated_power(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dopplers * self.range_bins];
        for d in 0..self.dopplers {
            for a in 0..self.antennas {
                let s = self.index(d, a, 0);
                for (o, c) in out[d * self.range_bins..(d + 1) * self.range_bins]
                    .iter_mut()
                    .zip(&self.data[s..s + self.range_bins])
                {
                    *o += c.norm_sqr().to_f64_lossy();
                }
            }
        }
        out
    }

    pub fn scaled(&self, k: T) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|c| *c = *c * k);
        out
    }
}

/// Windowed, FFT-shifted slow-time FFT of every (antenna, range_bin) column.
pub fn doppler_fft<T: Scalar>(
    profiles: &RangeProfiles<T>,
    config: &RadarConfig,
    window: WindowKind,
) -> Result<RangeDopplerCube<T>> {
    let n = profiles.chirps;
    if n != config.chirps_per_frame {
        return Err(Error::dimension(format!(
            "doppler_fft: {n} chirps, config expects {}",
            config.chirps_per_frame
        )));
    }
    let cols = profiles.antennas * profiles.range_bins;
    let w: Vec<T> = window.coefficients(n);
    // transpose to one contiguous slow-time row per column
    let mut rows = vec![Complex::new(T::zero(), T::zero()); cols * n];
    for m in 0..n {
        let src = &profiles.data[m * cols..(m + 1) * cols];
        for (c, v) in src.iter().enumerate() {
            rows[c * n + m] = *v * w[m];
        }
    }
    if n > 0 && cols > 0 {
        FftPlanner::<T>::new().plan_fft_forward(n).process(&mut rows);
    }
    let half = n / 2;
    let mut data = vec![Complex::new(T::zero(), T::zero()); cols * n];
    for c in 0..cols {
        for k in 0..n {
            data[((k + half) % n) * cols + c] = rows[c * n + k];
        }
    }
    Ok(RangeDopplerCube {
        data,
        dopplers: n,
        antennas: profiles.antennas,
        range_bins: profiles.range_bins,
        range_res: config.range_resolution(),
        velocity_res: config.velocity_resolution(),
    })
}
