use num_complex::Complex;

use super::doppler::RangeDopplerCube;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::scene::RadarConfig;

/// Virtual-array samples placed on their physical grid, row-major
/// (doppler, elevation_index, azimuth_index, range_bin). Empty slots are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualArrayGrid<T> {
    pub data: Vec<Complex<T>>,
    pub dopplers: usize,
    pub elevations: usize,
    pub azimuths: usize,
    pub range_bins: usize,
}

impl<T: Scalar> VirtualArrayGrid<T> {
    #[inline]
    pub fn index(&self, d: usize, el: usize, az: usize, r: usize) -> usize {
        ((d * self.elevations + el) * self.azimuths + az) * self.range_bins + r
    }

    pub fn get(&self, d: usize, el: usize, az: usize, r: usize) -> Complex<T> {
        self.data[self.index(d, el, az, r)]
    }

    pub fn slice_len(&self) -> usize {
        self.elevations * self.azimuths * self.range_bins
    }

    pub fn doppler_slice(&self, d: usize) -> &[Complex<T>] {
        let n = self.slice_len();
        &self.data[d * n..(d + 1) * n]
    }
}

/// Slot geometry of the virtual array.
pub(crate) struct Layout {
    pub elevations: usize,
    pub azimuths: usize,
    /// (elevation, azimuth) slot of each virtual element.
    pub slots: Vec<(usize, usize)>,
    /// Per-row gain that gives every occupied elevation row the same total
    /// weight as the fullest one; empty rows get 0.
    pub row_weights: Vec<f64>,
}

pub(crate) fn layout(config: &RadarConfig) -> Result<Layout> {
    if config.antenna_positions.len() != config.virtual_count() {
        return Err(Error::config("antenna_positions length differs from tx*rx"));
    }
    let (az, el) = config.aperture();
    let az0 = config.antenna_positions.iter().map(|p| p[0]).min().unwrap_or(0);
    let el0 = config.antenna_positions.iter().map(|p| p[1]).min().unwrap_or(0);
    let mut taken = vec![false; az * el];
    let mut slots = Vec::with_capacity(config.antenna_positions.len());
    for p in &config.antenna_positions {
        let (e, a) = ((p[1] - el0) as usize, (p[0] - az0) as usize);
        if std::mem::replace(&mut taken[e * az + a], true) {
            return Err(Error::config(format!("duplicate virtual antenna slot {p:?}")));
        }
        slots.push((e, a));
    }
    let mut counts = vec![0usize; el];
    for &(e, _) in &slots {
        counts[e] += 1;
    }
    let fullest = counts.iter().copied().max().unwrap_or(1) as f64;
    let row_weights = counts
        .iter()
        .map(|&c| if c == 0 { 0.0 } else { fullest / c as f64 })
        .collect();
    Ok(Layout {
        elevations: el,
        azimuths: az,
        slots,
        row_weights,
    })
}

/// Per-element TDM phase correction for Doppler bin `d`, or `None` when the
/// transmitters fire simultaneously.
pub(crate) fn tdm_corrections<T: Scalar>(
    config: &RadarConfig,
    dopplers: usize,
    d: usize,
) -> Option<Vec<Complex<T>>> {
    if !config.tdm_mimo {
        return None;
    }
    // cycles per repetition interval at this bin
    let k = (d as f64 - (dopplers / 2) as f64) / dopplers as f64;
    Some(
        (0..config.virtual_count())
            .map(|a| {
                let t = config.tx_of(a) as f64 / config.tx_count as f64;
                let c = Complex::from_polar(1.0, -std::f64::consts::TAU * k * t);
                Complex::new(T::of(c.re), T::of(c.im))
            })
            .collect(),
    )
}

/// Fill `out` (elevation, azimuth, range) for Doppler bin `d`, range bins
/// `[r0, r0 + nr)`.
pub(crate) fn remodulate_slice<T: Scalar>(
    rd: &RangeDopplerCube<T>,
    config: &RadarConfig,
    layout: &Layout,
    d: usize,
    r0: usize,
    nr: usize,
    out: &mut [Complex<T>],
) {
    out.iter_mut().for_each(|c| *c = Complex::new(T::zero(), T::zero()));
    let corr = tdm_corrections::<T>(config, rd.dopplers, d);
    let weights: Vec<T> = layout.row_weights.iter().map(|&w| T::of(w)).collect();
    for (a, &(e, az)) in layout.slots.iter().enumerate() {
        let wgt = weights[e];
        let src = rd.index(d, a, r0);
        let dst = (e * layout.azimuths + az) * nr;
        let row = &rd.data[src..src + nr];
        match &corr {
            Some(c) => {
                let c = c[a] * wgt;
                for (o, v) in out[dst..dst + nr].iter_mut().zip(row) {
                    *o = *v * c;
                }
            }
            None => {
                for (o, v) in out[dst..dst + nr].iter_mut().zip(row) {
                    *o = v.scale(wgt);
                }
            }
        }
    }
}

/// Place each virtual element at its (azimuth, elevation) slot, undo the
/// Doppler phase the TX time slots introduce, and equalise the total gain
/// of the elevation rows (see `Layout::row_weights`).
pub fn remodulate_virtual_array<T: Scalar>(
    rd: &RangeDopplerCube<T>,
    config: &RadarConfig,
) -> Result<VirtualArrayGrid<T>> {
    if rd.antennas != config.virtual_count() {
        return Err(Error::dimension(format!(
            "range-Doppler cube has {} antennas, config has {}",
            rd.antennas,
            config.virtual_count()
        )));
    }
    let layout = layout(config)?;
    let mut grid = VirtualArrayGrid {
        data: vec![
            Complex::new(T::zero(), T::zero());
            rd.dopplers * layout.elevations * layout.azimuths * rd.range_bins
        ],
        dopplers: rd.dopplers,
        elevations: layout.elevations,
        azimuths: layout.azimuths,
        range_bins: rd.range_bins,
    };
    let n = grid.slice_len();
    for (d, chunk) in grid.data.chunks_exact_mut(n).enumerate() {
        remodulate_slice(rd, config, &layout, d, 0, rd.range_bins, chunk);
    }
    Ok(grid)
}
