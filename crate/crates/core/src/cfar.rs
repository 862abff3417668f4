//! Cell-averaging CFAR over the range-Doppler plane and per-detection angle
//! estimation into a radar point cloud.

use std::fmt::Write as _;

use num_complex::Complex;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::container::{Container, DType, Kind};
use crate::dsp::{bin_sine, layout, tdm_corrections, AngleTransform, RangeDopplerCube};
use crate::error::{Error, Result};
use crate::pose::Vec3;
use crate::scalar::Scalar;
use crate::scene::RadarConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CfarConfig {
    /// Guard cells on each side of the cell under test, per axis.
    pub guard_cells: usize,
    /// Training cells beyond the guard band, per side and axis.
    pub train_cells: usize,
    pub pfa: f64,
    /// Virtual element whose range-Doppler map is thresholded.
    pub antenna: usize,
    /// Keep only detections that are the maximum of their 3x3
    /// (range, Doppler) neighbourhood, one per spectral peak.
    pub peak_grouping: bool,
}

impl Default for CfarConfig {
    fn default() -> Self {
        CfarConfig {
            guard_cells: 4,
            train_cells: 16,
            pfa: 1e-4,
            antenna: 0,
            peak_grouping: true,
        }
    }
}

impl CfarConfig {
    pub fn training_count(&self) -> usize {
        let outer = 2 * (self.guard_cells + self.train_cells) + 1;
        let inner = 2 * self.guard_cells + 1;
        outer * outer - inner * inner
    }

    /// Threshold multiplier on the mean training power,
    /// `N * (pfa^(-1/N) - 1)` for `N` training cells.
    pub fn alpha(&self) -> f64 {
        let n = self.training_count() as f64;
        n * (self.pfa.powf(-1.0 / n) - 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub range_bin: usize,
    pub doppler_bin: usize,
    /// |X|² of the cell under test.
    pub power: f64,
    pub threshold: f64,
}

/// Square-law CA-CFAR on one antenna's range-Doppler map.
///
/// The training region is the square annulus between the guard box and the
/// outer box. The Doppler axis wraps (it is periodic); range cells whose
/// window would leave the map are not tested.
pub fn ca_cfar_detect<T: Scalar>(rd: &RangeDopplerCube<T>, cfg: &CfarConfig) -> Result<Vec<Detection>> {
    if !(cfg.pfa > 0.0 && cfg.pfa < 1.0) {
        return Err(Error::config(format!("pfa must lie in (0, 1), got {}", cfg.pfa)));
    }
    if cfg.train_cells == 0 {
        return Err(Error::config("need at least one training cell"));
    }
    if cfg.antenna >= rd.antennas {
        return Err(Error::config(format!("antenna {} out of range", cfg.antenna)));
    }
    let half = cfg.guard_cells + cfg.train_cells;
    let span = 2 * half + 1;
    if span > rd.dopplers || span > rd.range_bins {
        return Err(Error::config(format!(
            "CFAR window {span} exceeds the {}x{} range-Doppler map",
            rd.dopplers, rd.range_bins
        )));
    }
    let (nd, nr) = (rd.dopplers, rd.range_bins);
    let power: Vec<f64> = rd
        .antenna_power(cfg.antenna)
        .into_iter()
        .map(|v| v.to_f64_lossy())
        .collect();

    // summed-area table over Doppler rows padded by `half` on each side (wrapped)
    let rows = nd + 2 * half;
    let mut sat = vec![0.0f64; (rows + 1) * (nr + 1)];
    for i in 0..rows {
        let d = (i + nd - half % nd) % nd;
        let mut run = 0.0;
        for r in 0..nr {
            run += power[d * nr + r];
            sat[(i + 1) * (nr + 1) + r + 1] = sat[i * (nr + 1) + r + 1] + run;
        }
    }
    let box_sum = |i0: usize, r0: usize, len: usize| {
        let (i1, r1) = (i0 + len, r0 + len);
        sat[i1 * (nr + 1) + r1] - sat[i0 * (nr + 1) + r1] - sat[i1 * (nr + 1) + r0]
            + sat[i0 * (nr + 1) + r0]
    };

    let n_train = cfg.training_count() as f64;
    let alpha = cfg.alpha();
    let g = cfg.guard_cells;
    let mut out = Vec::new();
    for d in 0..nd {
        // padded row of doppler d is d + half
        for r in half..nr - half {
            let outer = box_sum(d, r - half, span);
            let inner = box_sum(d + half - g, r - g, 2 * g + 1);
            let threshold = alpha * (outer - inner) / n_train;
            let p = power[d * nr + r];
            if p > threshold && (!cfg.peak_grouping || is_local_peak(&power, nd, nr, d, r)) {
                out.push(Detection {
                    range_bin: r,
                    doppler_bin: d,
                    power: p,
                    threshold,
                });
            }
        }
    }
    Ok(out)
}

fn is_local_peak(power: &[f64], nd: usize, nr: usize, d: usize, r: usize) -> bool {
    let p = power[d * nr + r];
    for dd in [nd - 1, 0, 1] {
        let row = (d + dd) % nd;
        for rr in r.saturating_sub(1)..(r + 2).min(nr) {
            if (row, rr) != (d, r) && power[row * nr + rr] > p {
                return false;
            }
        }
    }
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadarPoint {
    pub position: Vec3,
    /// Radial velocity, m/s.
    pub velocity: f64,
    pub intensity: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RadarPointCloud {
    pub points: Vec<RadarPoint>,
    pub frame_index: usize,
}

impl RadarPointCloud {
    /// One `x y z v intensity` line per point.
    pub fn to_text(&self) -> String {
        let mut s = format!("# format_version 1\n# frame {}\n# x y z v intensity\n", self.frame_index);
        for p in &self.points {
            let _ = writeln!(
                s,
                "{:.6} {:.6} {:.6} {:.6} {:.6e}",
                p.position[0], p.position[1], p.position[2], p.velocity, p.intensity
            );
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cloud = RadarPointCloud::default();
        for line in text.lines().map(str::trim) {
            if let Some(rest) = line.strip_prefix("# frame ") {
                cloud.frame_index = rest
                    .trim()
                    .parse()
                    .map_err(|_| Error::format("bad frame index"))?;
                continue;
            }
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let v: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| Error::format(e.to_string())))
                .collect::<Result<_>>()?;
            if v.len() != 5 {
                return Err(Error::format(format!("expected 5 columns, got `{line}`")));
            }
            cloud.points.push(RadarPoint {
                position: [v[0], v[1], v[2]],
                velocity: v[3],
                intensity: v[4],
            });
        }
        Ok(cloud)
    }

    pub fn to_container(&self) -> Container {
        let data = self
            .points
            .iter()
            .flat_map(|p| {
                [
                    p.position[0] as f32,
                    p.position[1] as f32,
                    p.position[2] as f32,
                    p.velocity as f32,
                    p.intensity as f32,
                ]
            })
            .collect();
        Container::new(
            Kind::PointCloud,
            DType::F32,
            vec![self.points.len(), 5],
            json!({ "frame_index": self.frame_index }),
            data,
        )
    }
}

/// Angle-FFT lengths used for per-detection direction finding.
const POINT_AZ_BINS: usize = 512;
const POINT_EL_BINS: usize = 128;

/// Vertex offset of the parabola through three equally spaced samples.
fn parabolic_offset(l: f64, c: f64, r: f64) -> f64 {
    let den = l - 2.0 * c + r;
    if den.abs() < f64::MIN_POSITIVE || !den.is_finite() {
        0.0
    } else {
        (0.5 * (l - r) / den).clamp(-0.5, 0.5)
    }
}

/// Estimate a 3D point per detection from the virtual-array spectrum of
/// its range-Doppler cell. Points outside the configured detection volume
/// are dropped.
pub fn detections_to_points<T: Scalar>(
    detections: &[Detection],
    rd: &RangeDopplerCube<T>,
    config: &RadarConfig,
    frame_index: usize,
) -> Result<RadarPointCloud> {
    let mut cloud = RadarPointCloud {
        points: Vec::with_capacity(detections.len()),
        frame_index,
    };
    if detections.is_empty() {
        return Ok(cloud);
    }
    let lay = layout(config)?;
    let az_bins = POINT_AZ_BINS.max(lay.azimuths);
    let el_bins = POINT_EL_BINS.max(lay.elevations);
    let mut tf = AngleTransform::<T>::new(el_bins, az_bins);
    let integrated = rd.integrated_power();
    let nr = rd.range_bins;
    for det in detections {
        let (d, r) = (det.doppler_bin, det.range_bin);
        let corr = tdm_corrections::<T>(config, rd.dopplers, d);
        let mut aperture = vec![Complex::new(T::zero(), T::zero()); lay.elevations * lay.azimuths];
        for (a, &(e, az)) in lay.slots.iter().enumerate() {
            let v = rd.get(d, a, r).scale(T::of(lay.row_weights[e]));
            aperture[e * lay.azimuths + az] = match &corr {
                Some(c) => v * c[a],
                None => v,
            };
        }
        let spec = tf.spectrum(lay.elevations, lay.azimuths, |e, a| aperture[e * lay.azimuths + a]);
        let mag = |e: usize, a: usize| spec[e * az_bins + a].norm().to_f64_lossy();
        let (mut be, mut ba, mut best) = (0, 0, f64::NEG_INFINITY);
        for e in 0..el_bins {
            for a in 0..az_bins {
                let m = mag(e, a);
                if m > best {
                    (be, ba, best) = (e, a, m);
                }
            }
        }
        let wrap = |i: isize, n: usize| i.rem_euclid(n as isize) as usize;
        let da = parabolic_offset(
            mag(be, wrap(ba as isize - 1, az_bins)),
            best,
            mag(be, wrap(ba as isize + 1, az_bins)),
        );
        let de = if el_bins > 2 && lay.elevations > 1 {
            parabolic_offset(
                mag(wrap(be as isize - 1, el_bins), ba),
                best,
                mag(wrap(be as isize + 1, el_bins), ba),
            )
        } else {
            0.0
        };
        let u = bin_sine(ba, az_bins) + 2.0 * da / az_bins as f64;
        let w = if lay.elevations > 1 {
            bin_sine(be, el_bins) + 2.0 * de / el_bins as f64
        } else {
            0.0
        };
        let dr = if r > 0 && r + 1 < nr {
            let row = &integrated[d * nr..(d + 1) * nr];
            parabolic_offset(row[r - 1].sqrt(), row[r].sqrt(), row[r + 1].sqrt())
        } else {
            0.0
        };
        let range = (r as f64 + dr) * rd.range_res;
        let cos2 = (1.0 - u * u - w * w).max(0.0);
        let position = [range * u, range * cos2.sqrt(), range * w];
        if !config.grid.contains(position) {
            log::debug!("dropping detection at {position:?}: outside detection volume");
            continue;
        }
        cloud.points.push(RadarPoint {
            position,
            velocity: rd.velocity_of_bin(d),
            intensity: det.power,
        });
    }
    Ok(cloud)
}
