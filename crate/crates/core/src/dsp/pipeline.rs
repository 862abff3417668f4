use num_complex::Complex;
use serde::{Deserialize, Serialize};

use super::angle::{AngleTransform, Detector};
use super::cartesian::{RadarTensor4D, Resampler};
use super::doppler::{doppler_fft, RangeDopplerCube};
use super::range::range_fft;
use super::remod::{layout, remodulate_slice};
use super::window::WindowKind;
use crate::error::Result;
use crate::scalar::Scalar;
use crate::scene::{CartesianGrid, RadarConfig};
use crate::sim::AdcCube;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ProcessOptions {
    /// Window on the range and Doppler axes. Angle axes are never windowed.
    pub window: WindowKind,
    pub detector: Detector,
}

/// Range bins `[lo, hi)` the grid's resampling taps can touch.
pub(crate) fn range_window(grid: &CartesianGrid, range_res: f64, range_bins: usize) -> (usize, usize) {
    let lo_c = grid.origin;
    let hi_c = grid.max_corner();
    let mut near = 0.0;
    let mut far = 0.0;
    for k in 0..3 {
        let nearest = 0.0f64.clamp(lo_c[k], hi_c[k]);
        near += nearest * nearest;
        let f = lo_c[k].abs().max(hi_c[k].abs());
        far += f * f;
    }
    let lo = ((near.sqrt() / range_res).floor() as usize).saturating_sub(1);
    let hi = ((far.sqrt() / range_res).ceil() as usize + 2).min(range_bins);
    (lo.min(hi.saturating_sub(2)), hi)
}

/// Angle FFTs and Cartesian resampling of an existing range-Doppler cube,
/// one Doppler slice at a time.
pub fn rd_to_tensor<T: Scalar>(
    rd: &RangeDopplerCube<T>,
    config: &RadarConfig,
    grid: &CartesianGrid,
    detector: Detector,
) -> Result<RadarTensor4D<T>> {
    grid.validate()?;
    let lay = layout(config)?;
    let (r0, r1) = range_window(grid, rd.range_res, rd.range_bins);
    let nr = r1 - r0;
    let (m, n) = (config.elevation_bins, config.azimuth_bins);
    let resampler = Resampler::<T>::new(grid, m, n, nr, r0, rd.range_res);
    let mut tf = AngleTransform::<T>::new(m, n);
    let mut aperture = vec![Complex::new(T::zero(), T::zero()); lay.elevations * lay.azimuths * nr];
    let mut polar = vec![T::zero(); m * n * nr];
    let mut padded = vec![T::zero(); resampler.padded_len()];
    let mut out = RadarTensor4D::zeros(rd.dopplers, *grid);
    let vox = grid.voxel_count();
    for (d, chunk) in out.data.chunks_exact_mut(vox).enumerate() {
        remodulate_slice(rd, config, &lay, d, r0, nr, &mut aperture);
        tf.slice(&aperture, lay.elevations, lay.azimuths, nr, 0, nr, detector, &mut polar);
        resampler.pad(&polar, &mut padded);
        resampler.apply_padded(&padded, chunk);
    }
    Ok(out)
}

/// Raw ADC cube to Cartesian 4D tensor: range FFT, Doppler FFT, virtual
/// array re-modulation, angle FFTs, polar-to-Cartesian resampling.
pub fn process_frame<T: Scalar>(
    cube: &AdcCube<T>,
    config: &RadarConfig,
    grid: &CartesianGrid,
    options: ProcessOptions,
) -> Result<RadarTensor4D<T>> {
    config.validate()?;
    cube.validate(config)?;
    let profiles = range_fft(cube, options.window)?;
    let rd = doppler_fft(&profiles, config, options.window)?;
    drop(profiles);
    rd_to_tensor(&rd, config, grid, options.detector)
}
