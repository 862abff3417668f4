use serde_json::json;

use super::angle::{sine_bin, PolarTensor};
use crate::container::{Container, DType, Kind};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::scene::CartesianGrid;

/// Real 4D radar tensor, row-major (doppler, z, y, x), on `grid`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadarTensor4D<T> {
    pub data: Vec<T>,
    pub dopplers: usize,
    pub grid: CartesianGrid,
}

impl<T: Scalar> RadarTensor4D<T> {
    pub fn zeros(dopplers: usize, grid: CartesianGrid) -> Self {
        RadarTensor4D {
            data: vec![T::zero(); dopplers * grid.voxel_count()],
            dopplers,
            grid,
        }
    }

    /// (D, Z, Y, X).
    pub fn shape(&self) -> [usize; 4] {
        [self.dopplers, self.grid.dims[0], self.grid.dims[1], self.grid.dims[2]]
    }

    #[inline]
    pub fn index(&self, d: usize, z: usize, y: usize, x: usize) -> usize {
        let [_, nz, ny, nx] = self.shape();
        ((d * nz + z) * ny + y) * nx + x
    }

    pub fn get(&self, d: usize, z: usize, y: usize, x: usize) -> T {
        self.data[self.index(d, z, y, x)]
    }

    pub fn doppler_slice(&self, d: usize) -> &[T] {
        let n = self.grid.voxel_count();
        &self.data[d * n..(d + 1) * n]
    }

    /// Location (d, z, y, x) of the largest voxel.
    pub fn argmax(&self) -> [usize; 4] {
        let i = self
            .data
            .iter()
            .enumerate()
            .fold((0, T::neg_infinity()), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
            .0;
        let [_, nz, ny, nx] = self.shape();
        [i / (nz * ny * nx), (i / (ny * nx)) % nz, (i / nx) % ny, i % nx]
    }

    /// Spatial argmax of the max-over-Doppler projection, (z, y, x).
    pub fn spatial_argmax(&self) -> [usize; 3] {
        let [_, z, y, x] = self.argmax();
        [z, y, x]
    }

    /// Σ of all voxels in Doppler slice `d`.
    pub fn slice_sum(&self, d: usize) -> f64 {
        self.doppler_slice(d).iter().map(|v| v.to_f64_lossy()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.len() != self.dopplers * self.grid.voxel_count() {
            return Err(Error::dimension("radar tensor buffer length mismatch"));
        }
        if self.data.iter().any(|v| !v.is_finite() || *v < T::zero()) {
            return Err(Error::numerical("radar tensor has negative or non-finite voxels"));
        }
        Ok(())
    }

    pub fn to_container(&self) -> Container {
        Container::new(
            Kind::RadarTensor,
            DType::F32,
            self.shape().to_vec(),
            json!({ "voxel_extent": self.grid.voxel_extent, "origin": self.grid.origin }),
            self.data.iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect(),
        )
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect(Kind::RadarTensor, DType::F32, 4)?;
        let ve = c.meta_f64s("voxel_extent")?;
        let or = c.meta_f64s("origin")?;
        if ve.len() != 3 || or.len() != 3 {
            return Err(Error::format("voxel_extent/origin must have 3 entries"));
        }
        let grid = CartesianGrid {
            origin: [or[0], or[1], or[2]],
            voxel_extent: [ve[0], ve[1], ve[2]],
            dims: [c.dims[1], c.dims[2], c.dims[3]],
        };
        Ok(RadarTensor4D {
            data: c.data.iter().map(|&v| T::of(v as f64)).collect(),
            dopplers: c.dims[0],
            grid,
        })
    }
}

/// Catmull-Rom weights for taps at -1, 0, 1, 2 around fractional offset `t`.
fn catmull_rom(t: f64) -> [f64; 4] {
    let (t2, t3) = (t * t, t * t * t);
    [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ]
}

/// Precomputed taps from Cartesian voxels into a polar slice.
///
/// Angles are sampled at the voxel center with bicubic (Catmull-Rom)
/// weights in azimuth and elevation sine. Along range the voxel takes the
/// maximum of the range-linear interpolant over its own radial extent, so a
/// point reflector keeps its peak value in the voxel that contains it.
pub(crate) struct Resampler<T> {
    taps: Vec<Taps<T>>,
    elevation_bins: usize,
    azimuth_bins: usize,
    range_bins: usize,
}

#[derive(Clone, Copy)]
struct Taps<T> {
    /// Offset of (el-1, az-1, first range node) in the padded slice;
    /// u32::MAX marks a voxel outside the polar domain.
    base: u32,
    /// Number of range nodes past the first (>= 1).
    span: u32,
    wa: [T; 4],
    we: [T; 4],
    /// Fractions of the radial interval ends past their lower nodes.
    lo_frac: T,
    hi_frac: T,
}

/// Upper bound on range nodes a voxel can straddle.
const MAX_SPAN: usize = 15;

/// Edge-replicated guard cells of the padded slice: one before and two
/// after each angle axis, as the four-tap kernel needs.
const PAD_LO: usize = 1;
const PAD_HI: usize = 2;

impl<T: Scalar> Resampler<T> {
    pub fn new(
        grid: &CartesianGrid,
        elevation_bins: usize,
        azimuth_bins: usize,
        range_bins: usize,
        range_offset: usize,
        range_res: f64,
    ) -> Self {
        let mut taps = Vec::with_capacity(grid.voxel_count());
        let mut clipped = 0usize;
        let outside = Taps {
            base: u32::MAX,
            span: 0,
            wa: [T::zero(); 4],
            we: [T::zero(); 4],
            lo_frac: T::zero(),
            hi_frac: T::zero(),
        };
        let cast = |w: [f64; 4]| w.map(T::of);
        let [nz, ny, nx] = grid.dims;
        let last_r = (range_bins - 1) as f64;
        let padded_az = azimuth_bins + PAD_LO + PAD_HI;
        // lower node of an interpolation cell, keeping node+1 on the axis
        let cell = |f: f64, len: usize| (f.floor() as usize).min(len.saturating_sub(2));
        let inside = |f: f64, len: usize| f >= 0.0 && f <= (len - 1) as f64;
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let p = grid.voxel_center(z, y, x);
                    let r = crate::pose::norm(p);
                    if r <= 0.0 {
                        taps.push(outside);
                        continue;
                    }
                    // support of the voxel box along the line of sight
                    let half: f64 = (0..3).map(|k| 0.5 * (p[k] / r).abs() * grid.voxel_extent[k]).sum();
                    let f_lo = ((r - half) / range_res - range_offset as f64).max(0.0);
                    let f_hi = ((r + half) / range_res - range_offset as f64).min(last_r);
                    let fa = sine_bin(p[0] / r, azimuth_bins);
                    let fe = sine_bin(p[2] / r, elevation_bins);
                    if f_lo > f_hi || !inside(fa, azimuth_bins) || !inside(fe, elevation_bins) {
                        if (r - half) / range_res > (range_offset + range_bins) as f64 - 1.0 {
                            clipped += 1;
                        }
                        taps.push(outside);
                        continue;
                    }
                    let (ilo, ihi) = (cell(f_lo, range_bins), cell(f_hi, range_bins));
                    let (ia, ie) = (cell(fa, azimuth_bins), cell(fe, elevation_bins));
                    // padded index of tap -1 is the unpadded index of tap 0
                    let base = (ie * padded_az + ia) * range_bins + ilo;
                    taps.push(Taps {
                        base: base as u32,
                        span: (ihi - ilo + 1).min(MAX_SPAN) as u32,
                        wa: cast(catmull_rom(fa - ia as f64)),
                        we: cast(catmull_rom(fe - ie as f64)),
                        lo_frac: T::of(f_lo - ilo as f64),
                        hi_frac: T::of(f_hi - ihi as f64),
                    });
                }
            }
        }
        if clipped > 0 {
            log::warn!(
                "{clipped} voxels lie beyond the polar range coverage of {:.2} m; set to 0",
                (range_offset + range_bins) as f64 * range_res
            );
        }
        Resampler {
            taps,
            elevation_bins,
            azimuth_bins,
            range_bins,
        }
    }

    /// Length of the padded slice buffer [`Resampler::pad`] fills.
    pub fn padded_len(&self) -> usize {
        (self.elevation_bins + PAD_LO + PAD_HI) * (self.azimuth_bins + PAD_LO + PAD_HI) * self.range_bins
    }

    /// Copy an (el, az, range) slice into `padded`, replicating edge rows
    /// and columns into the guard cells.
    pub fn pad(&self, polar: &[T], padded: &mut [T]) {
        let (m, n, nr) = (self.elevation_bins, self.azimuth_bins, self.range_bins);
        let pn = n + PAD_LO + PAD_HI;
        for pe in 0..m + PAD_LO + PAD_HI {
            let e = pe.saturating_sub(PAD_LO).min(m - 1);
            for pa in 0..pn {
                let a = pa.saturating_sub(PAD_LO).min(n - 1);
                let src = (e * n + a) * nr;
                let dst = (pe * pn + pa) * nr;
                padded[dst..dst + nr].copy_from_slice(&polar[src..src + nr]);
            }
        }
    }

    /// Resample one padded Doppler slice into `out`.
    pub fn apply_padded(&self, padded: &[T], out: &mut [T]) {
        let nr = self.range_bins;
        let row = (self.azimuth_bins + PAD_LO + PAD_HI) * nr;
        for (o, t) in out.iter_mut().zip(&self.taps) {
            if t.base == u32::MAX {
                *o = T::zero();
                continue;
            }
            let b = t.base as usize;
            *o = match t.span {
                1 => radial_max::<T, 2>(padded, b, row, nr, t),
                2 => radial_max::<T, 3>(padded, b, row, nr, t),
                3 => radial_max::<T, 4>(padded, b, row, nr, t),
                _ => radial_max::<T, { MAX_SPAN + 1 }>(padded, b, row, nr, t),
            };
        }
    }

    /// Resample one unpadded Doppler slice into `out`.
    pub fn apply(&self, polar: &[T], out: &mut [T]) {
        let mut padded = vec![T::zero(); self.padded_len()];
        self.pad(polar, &mut padded);
        self.apply_padded(&padded, out);
    }
}

/// Bicubic angle interpolation at `S` consecutive range nodes, then the
/// maximum of the range-linear interpolant over the voxel's interval.
#[inline(always)]
fn radial_max<T: Scalar, const S: usize>(padded: &[T], base: usize, row: usize, nr: usize, t: &Taps<T>) -> T {
    // the specialised widths always match the span exactly
    let used = if S <= 4 { S } else { (t.span as usize + 1).min(S) };
    let mut nodes = [T::zero(); S];
    for (i, &we) in t.we.iter().enumerate() {
        for (j, &wa) in t.wa.iter().enumerate() {
            let w = we * wa;
            let start = base + i * row + j * nr;
            for (v, &p) in nodes.iter_mut().zip(&padded[start..start + used]) {
                *v += w * p;
            }
        }
    }
    let one = T::one();
    let lerp = |a: T, c: T, f: T| a * (one - f) + c * f;
    let last = used - 1;
    let mut v = lerp(nodes[0], nodes[1], t.lo_frac).max(lerp(nodes[last - 1], nodes[last], t.hi_frac));
    for &node in &nodes[1..last] {
        v = v.max(node);
    }
    // cubic overshoot can dip below zero next to deep nulls
    v.max(T::zero())
}

/// Resample every Doppler slice of `polar` onto the Cartesian `grid`,
/// interpolating in (range, azimuth sine, elevation sine).
pub fn polar_to_cartesian<T: Scalar>(
    polar: &PolarTensor<T>,
    grid: &CartesianGrid,
) -> Result<RadarTensor4D<T>> {
    grid.validate()?;
    if polar.range_bins < 2 || polar.azimuth_bins < 2 || polar.elevation_bins < 2 {
        return Err(Error::dimension("polar tensor needs at least 2 bins per axis"));
    }
    let rs = Resampler::new(
        grid,
        polar.elevation_bins,
        polar.azimuth_bins,
        polar.range_bins,
        polar.range_offset,
        polar.range_res,
    );
    let mut out = RadarTensor4D::zeros(polar.dopplers, *grid);
    let n = grid.voxel_count();
    for (d, chunk) in out.data.chunks_exact_mut(n).enumerate() {
        rs.apply(polar.doppler_slice(d), chunk);
    }
    Ok(out)
}
