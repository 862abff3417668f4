//! Head outputs to multi-person poses, and the inverse target encoding.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{HeadOutput, JointMaps, CONFIDENCE_EPS};
use crate::pose::{dist, sub, Joint, Person, PoseSet, Vec3, NUM_JOINTS};
use crate::scene::CartesianGrid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub k: usize,
    pub score_threshold: f64,
    /// Metres.
    pub nms_radius: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            k: 8,
            score_threshold: 0.3,
            nms_radius: 0.5,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.score_threshold > 0.0 && self.score_threshold < 1.0) {
            return Err(Error::config("score_threshold must lie in (0, 1)"));
        }
        if !(self.nms_radius >= 0.0 && self.nms_radius.is_finite()) {
            return Err(Error::config("nms_radius must be non-negative"));
        }
        Ok(())
    }
}

/// Gaussian center map on the head grid, 1 at each person's pelvis voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterTargetMap {
    pub dims: [usize; 3],
    pub values: Vec<f64>,
    /// Voxels.
    pub gaussian_sigma: f64,
}

impl CenterTargetMap {
    /// Flat indices of voxels with value exactly 1.
    pub fn foreground(&self) -> Vec<usize> {
        (0..self.values.len()).filter(|&i| self.values[i] == 1.0).collect()
    }
}

/// Ground-truth offsets (joint minus voxel centre) stored at one
/// foreground voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetTarget {
    pub voxel: usize,
    pub offsets: [Vec3; NUM_JOINTS],
}

fn flat(dims: [usize; 3], v: [usize; 3]) -> usize {
    (v[0] * dims[1] + v[1]) * dims[2] + v[2]
}

fn unflat(dims: [usize; 3], i: usize) -> [usize; 3] {
    [i / (dims[1] * dims[2]), (i / dims[2]) % dims[1], i % dims[2]]
}

pub fn voxel_center_flat(grid: &CartesianGrid, i: usize) -> Vec3 {
    let [z, y, x] = unflat(grid.dims, i);
    grid.voxel_center(z, y, x)
}

fn pelvis_voxel(p: &Person, grid: &CartesianGrid, i: usize) -> Result<usize> {
    grid.voxel_of(p.pelvis())
        .map(|v| flat(grid.dims, v))
        .ok_or_else(|| Error::validation(format!("person {i} pelvis {:?} lies outside the grid", p.pelvis())))
}

fn offsets_at(p: &Person, center: Vec3) -> [Vec3; NUM_JOINTS] {
    std::array::from_fn(|j| sub(p.joints[j], center))
}

/// Center map and offset targets for `gt` on `grid`. The Gaussian is
/// centred on the centre of each pelvis voxel; overlapping persons combine
/// by maximum.
pub fn encode_targets(gt: &PoseSet, grid: &CartesianGrid, sigma: f64) -> Result<(CenterTargetMap, Vec<OffsetTarget>)> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::config("gaussian sigma must be positive"));
    }
    gt.validate()?;
    let dims = grid.dims;
    let mut values = vec![0.0f64; dims.iter().product()];
    let mut targets: Vec<OffsetTarget> = Vec::with_capacity(gt.len());
    for (i, p) in gt.persons.iter().enumerate() {
        let v = pelvis_voxel(p, grid, i)?;
        if targets.iter().any(|t| t.voxel == v) {
            return Err(Error::validation(format!("person {i} shares its pelvis voxel with another person")));
        }
        let c = unflat(dims, v);
        for z in 0..dims[0] {
            for y in 0..dims[1] {
                for x in 0..dims[2] {
                    let d2 = [z as f64 - c[0] as f64, y as f64 - c[1] as f64, x as f64 - c[2] as f64]
                        .iter()
                        .map(|d| d * d)
                        .sum::<f64>();
                    let g = (-d2 / (2.0 * sigma * sigma)).exp();
                    let slot = &mut values[flat(dims, [z, y, x])];
                    *slot = slot.max(g);
                }
            }
        }
        let [z, y, x] = c;
        targets.push(OffsetTarget {
            voxel: v,
            offsets: offsets_at(p, grid.voxel_center(z, y, x)),
        });
    }
    Ok((
        CenterTargetMap {
            dims,
            values,
            gaussian_sigma: sigma,
        },
        targets,
    ))
}

/// Pair every foreground voxel of `target` with the person whose pelvis it
/// holds.
pub fn match_foreground(target: &CenterTargetMap, gt: &PoseSet, grid: &CartesianGrid) -> Result<Vec<OffsetTarget>> {
    if target.dims != grid.dims {
        return Err(Error::dimension("target map does not match the grid"));
    }
    let mut out = Vec::new();
    for v in target.foreground() {
        let found = gt
            .persons
            .iter()
            .find(|p| grid.voxel_of(p.pelvis()).map(|q| flat(grid.dims, q)) == Some(v));
        let Some(p) = found else {
            return Err(Error::Annotation(format!(
                "foreground voxel {:?} holds no ground-truth pelvis",
                unflat(grid.dims, v)
            )));
        };
        out.push(OffsetTarget {
            voxel: v,
            offsets: offsets_at(p, voxel_center_flat(grid, v)),
        });
    }
    Ok(out)
}

/// Head output that decodes back to the encoded persons.
pub fn head_from_targets(target: &CenterTargetMap, offsets: &[OffsetTarget]) -> HeadOutput {
    let n = target.values.len();
    let mut k = vec![0.0; 3 * NUM_JOINTS * n];
    for t in offsets {
        for (j, o) in t.offsets.iter().enumerate() {
            for a in 0..3 {
                k[(3 * j + a) * n + t.voxel] = o[a];
            }
        }
    }
    HeadOutput {
        dims: target.dims,
        center_confidence: target
            .values
            .iter()
            .map(|v| v.clamp(CONFIDENCE_EPS, 1.0 - CONFIDENCE_EPS))
            .collect(),
        keypoint_offsets: k,
    }
}

/// Voxels whose value is at least every value in their 3x3x3 neighbourhood.
fn local_maxima(values: &[f64], dims: [usize; 3], threshold: f64) -> Vec<usize> {
    let mut out = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        if v < threshold {
            continue;
        }
        let c = unflat(dims, i);
        let mut peak = true;
        'n: for z in c[0].saturating_sub(1)..(c[0] + 2).min(dims[0]) {
            for y in c[1].saturating_sub(1)..(c[1] + 2).min(dims[1]) {
                for x in c[2].saturating_sub(1)..(c[2] + 2).min(dims[2]) {
                    if values[flat(dims, [z, y, x])] > v {
                        peak = false;
                        break 'n;
                    }
                }
            }
        }
        if peak {
            out.push(i);
        }
    }
    out
}

/// Greedy suppression by descending score: drop any person whose center
/// lies within `radius` of an already kept one.
pub fn nms(persons: &[Person], radius: f64) -> Vec<Person> {
    let mut order: Vec<&Person> = persons.iter().collect();
    order.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut kept: Vec<Person> = Vec::new();
    for p in order {
        if kept.iter().all(|q| dist(q.center, p.center) > radius) {
            kept.push(p.clone());
        }
    }
    kept
}

pub fn decode(head: &HeadOutput, grid: &CartesianGrid, cfg: &DecodeConfig) -> Result<PoseSet> {
    cfg.validate()?;
    if head.dims != grid.dims {
        return Err(Error::dimension(format!(
            "head dims {:?} differ from grid dims {:?}",
            head.dims, grid.dims
        )));
    }
    let n = head.voxels();
    if head.center_confidence.len() != n || head.keypoint_offsets.len() != 3 * NUM_JOINTS * n {
        return Err(Error::dimension("head output buffers do not match its dims"));
    }
    if cfg.k == 0 {
        return Ok(PoseSet::default());
    }
    let conf = &head.center_confidence;
    let mut cand = local_maxima(conf, head.dims, cfg.score_threshold);
    cand.sort_by(|&a, &b| conf[b].total_cmp(&conf[a]).then(a.cmp(&b)));
    cand.truncate(cfg.k);
    let mut persons = Vec::with_capacity(cand.len());
    for v in cand {
        let center = voxel_center_flat(grid, v);
        let joints: [Vec3; NUM_JOINTS] =
            std::array::from_fn(|j| std::array::from_fn(|a| center[a] + head.offset(j, a, v)));
        let p = Person {
            center,
            score: conf[v],
            joints,
        };
        if !p.is_finite() {
            warn!("dropping person at voxel {:?}: non-finite offsets", unflat(grid.dims, v));
            continue;
        }
        persons.push(p);
    }
    Ok(PoseSet::new(nms(&persons, cfg.nms_radius)))
}

/// One person from per-joint maps: each joint at the centre of its map's
/// argmax voxel (first index on ties). Score is the mean peak confidence.
pub fn decode_joint_maps(maps: &JointMaps, grid: &CartesianGrid) -> Result<Person> {
    if maps.dims != grid.dims {
        return Err(Error::dimension("joint maps do not match the grid"));
    }
    let n: usize = maps.dims.iter().product();
    if maps.maps.len() != NUM_JOINTS * n {
        return Err(Error::dimension(format!("expected {NUM_JOINTS} joint maps")));
    }
    let mut joints = [[0.0; 3]; NUM_JOINTS];
    let mut score = 0.0;
    for (j, joint) in joints.iter_mut().enumerate() {
        let m = &maps.maps[j * n..(j + 1) * n];
        let best = (0..n).fold(0, |b, i| if m[i] > m[b] { i } else { b });
        *joint = voxel_center_flat(grid, best);
        score += m[best] / NUM_JOINTS as f64;
    }
    Ok(Person {
        center: joints[Joint::Pelvis.index()],
        score,
        joints,
    })
}
