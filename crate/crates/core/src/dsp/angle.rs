use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::remod::VirtualArrayGrid;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// What each voxel of the real-valued tensors stores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Detector {
    #[default]
    Magnitude,
    Power,
}

/// Real angle spectra, row-major (doppler, elevation_bin, azimuth_bin, range_bin).
///
/// Angle bins live on a sine grid: bin `b` of an `n`-point axis is the
/// direction sine `2 * (b - n/2) / n`. Range bin `i` is range
/// `(range_offset + i) * range_res`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarTensor<T> {
    pub data: Vec<T>,
    pub dopplers: usize,
    pub elevation_bins: usize,
    pub azimuth_bins: usize,
    pub range_bins: usize,
    pub range_offset: usize,
    pub range_res: f64,
}

impl<T: Scalar> PolarTensor<T> {
    #[inline]
    pub fn index(&self, d: usize, el: usize, az: usize, r: usize) -> usize {
        ((d * self.elevation_bins + el) * self.azimuth_bins + az) * self.range_bins + r
    }

    pub fn get(&self, d: usize, el: usize, az: usize, r: usize) -> T {
        self.data[self.index(d, el, az, r)]
    }

    pub fn slice_len(&self) -> usize {
        self.elevation_bins * self.azimuth_bins * self.range_bins
    }

    pub fn doppler_slice(&self, d: usize) -> &[T] {
        let n = self.slice_len();
        &self.data[d * n..(d + 1) * n]
    }
}

/// Direction sine of bin `b` on an `n`-point shifted grid.
pub fn bin_sine(b: usize, n: usize) -> f64 {
    2.0 * (b as f64 - (n / 2) as f64) / n as f64
}

/// Fractional bin of direction sine `s` on an `n`-point shifted grid.
pub fn sine_bin(s: f64, n: usize) -> f64 {
    s * n as f64 / 2.0 + (n / 2) as f64
}

/// Planned 2D zero-padded angle FFT with reusable scratch.
pub(crate) struct AngleTransform<T: Scalar> {
    az_fft: Arc<dyn Fft<T>>,
    el_fft: Arc<dyn Fft<T>>,
    pub el_bins: usize,
    pub az_bins: usize,
    rows: Vec<Complex<T>>,
    cols: Vec<Complex<T>>,
}

impl<T: Scalar> AngleTransform<T> {
    pub fn new(el_bins: usize, az_bins: usize) -> Self {
        let mut planner = FftPlanner::<T>::new();
        AngleTransform {
            az_fft: planner.plan_fft_forward(az_bins),
            el_fft: planner.plan_fft_forward(el_bins),
            el_bins,
            az_bins,
            rows: vec![Complex::new(T::zero(), T::zero()); el_bins * az_bins],
            cols: vec![Complex::new(T::zero(), T::zero()); el_bins * az_bins],
        }
    }

    /// Spectrum of one (elevations × azimuths) aperture read through `sample`;
    /// result in `self.cols`, laid out (az_bin, el_bin) unshifted.
    fn transform(&mut self, elevations: usize, azimuths: usize, sample: impl Fn(usize, usize) -> Complex<T>) {
        let (m, n) = (self.el_bins, self.az_bins);
        let zero = Complex::new(T::zero(), T::zero());
        self.rows[..elevations * n].iter_mut().for_each(|c| *c = zero);
        for e in 0..elevations {
            for a in 0..azimuths {
                self.rows[e * n + a] = sample(e, a);
            }
        }
        self.az_fft.process(&mut self.rows[..elevations * n]);
        self.cols.iter_mut().for_each(|c| *c = zero);
        for e in 0..elevations {
            for a in 0..n {
                self.cols[a * m + e] = self.rows[e * n + a];
            }
        }
        self.el_fft.process(&mut self.cols);
    }

    /// Shifted complex spectrum of one aperture, laid out (el_bin, az_bin).
    pub fn spectrum(
        &mut self,
        elevations: usize,
        azimuths: usize,
        sample: impl Fn(usize, usize) -> Complex<T>,
    ) -> Vec<Complex<T>> {
        self.transform(elevations, azimuths, sample);
        let (m, n) = (self.el_bins, self.az_bins);
        let mut out = vec![Complex::new(T::zero(), T::zero()); m * n];
        for a in 0..n {
            for e in 0..m {
                out[((e + m / 2) % m) * n + (a + n / 2) % n] = self.cols[a * m + e];
            }
        }
        out
    }

    /// Detected spectra of an (elevation, azimuth, range) slice for range
    /// bins `[r0, r0 + nr)` of a slice that holds `src_nr` bins.
    #[allow(clippy::too_many_arguments)]
    pub fn slice(
        &mut self,
        input: &[Complex<T>],
        elevations: usize,
        azimuths: usize,
        src_nr: usize,
        r0: usize,
        nr: usize,
        detector: Detector,
        out: &mut [T],
    ) {
        let (m, n) = (self.el_bins, self.az_bins);
        for r in 0..nr {
            let src_r = r0 + r;
            self.transform(elevations, azimuths, |e, a| input[(e * azimuths + a) * src_nr + src_r]);
            for a in 0..n {
                let ab = (a + n / 2) % n;
                for e in 0..m {
                    let eb = (e + m / 2) % m;
                    let c = self.cols[a * m + e];
                    out[(eb * n + ab) * nr + r] = match detector {
                        Detector::Magnitude => c.norm(),
                        Detector::Power => c.norm_sqr(),
                    };
                }
            }
        }
    }
}

/// Zero-padded azimuth/elevation FFTs of every (doppler, range) aperture.
pub fn angle_ffts<T: Scalar>(
    grid: &VirtualArrayGrid<T>,
    azimuth_bins: usize,
    elevation_bins: usize,
    range_res: f64,
    detector: Detector,
) -> Result<PolarTensor<T>> {
    if grid.azimuths > azimuth_bins || grid.elevations > elevation_bins {
        return Err(Error::config(format!(
            "angle FFT ({elevation_bins}, {azimuth_bins}) shorter than aperture ({}, {})",
            grid.elevations, grid.azimuths
        )));
    }
    let mut polar = PolarTensor {
        data: vec![T::zero(); grid.dopplers * elevation_bins * azimuth_bins * grid.range_bins],
        dopplers: grid.dopplers,
        elevation_bins,
        azimuth_bins,
        range_bins: grid.range_bins,
        range_offset: 0,
        range_res,
    };
    let mut tf = AngleTransform::<T>::new(elevation_bins, azimuth_bins);
    let n = polar.slice_len();
    for (d, out) in polar.data.chunks_exact_mut(n).enumerate() {
        tf.slice(
            grid.doppler_slice(d),
            grid.elevations,
            grid.azimuths,
            grid.range_bins,
            0,
            grid.range_bins,
            detector,
            out,
        );
    }
    Ok(polar)
}
