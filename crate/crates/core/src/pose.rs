//! Multi-person 3D skeletons in the 15-joint Human3.6M convention.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_JOINTS: usize = 15;

/// Joint order; index 0 is the pelvis (root).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Joint {
    Pelvis = 0,
    RightHip,
    RightKnee,
    RightAnkle,
    LeftHip,
    LeftKnee,
    LeftAnkle,
    Thorax,
    Head,
    LeftShoulder,
    LeftElbow,
    LeftWrist,
    RightShoulder,
    RightElbow,
    RightWrist,
}

impl Joint {
    pub const ALL: [Joint; NUM_JOINTS] = [
        Joint::Pelvis,
        Joint::RightHip,
        Joint::RightKnee,
        Joint::RightAnkle,
        Joint::LeftHip,
        Joint::LeftKnee,
        Joint::LeftAnkle,
        Joint::Thorax,
        Joint::Head,
        Joint::LeftShoulder,
        Joint::LeftElbow,
        Joint::LeftWrist,
        Joint::RightShoulder,
        Joint::RightElbow,
        Joint::RightWrist,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Joint::Pelvis => "pelvis",
            Joint::RightHip => "r_hip",
            Joint::RightKnee => "r_knee",
            Joint::RightAnkle => "r_ankle",
            Joint::LeftHip => "l_hip",
            Joint::LeftKnee => "l_knee",
            Joint::LeftAnkle => "l_ankle",
            Joint::Thorax => "thorax",
            Joint::Head => "head",
            Joint::LeftShoulder => "l_shoulder",
            Joint::LeftElbow => "l_elbow",
            Joint::LeftWrist => "l_wrist",
            Joint::RightShoulder => "r_shoulder",
            Joint::RightElbow => "r_elbow",
            Joint::RightWrist => "r_wrist",
        }
    }

    pub fn from_name(name: &str) -> Option<Joint> {
        Joint::ALL.iter().copied().find(|j| j.name() == name)
    }

    /// Pelvis and thorax; the large torso reflectors.
    pub fn is_trunk(self) -> bool {
        matches!(self, Joint::Pelvis | Joint::Thorax)
    }
}

pub type Vec3 = [f64; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Person {
    pub center: Vec3,
    pub score: f64,
    pub joints: [Vec3; NUM_JOINTS],
}

impl Person {
    /// Ground-truth person: center at the pelvis, unit score.
    pub fn from_joints(joints: [Vec3; NUM_JOINTS]) -> Self {
        Person {
            center: joints[Joint::Pelvis.index()],
            score: 1.0,
            joints,
        }
    }

    pub fn pelvis(&self) -> Vec3 {
        self.joints[Joint::Pelvis.index()]
    }

    pub fn translated(&self, t: Vec3) -> Person {
        let mut p = self.clone();
        for j in p.joints.iter_mut() {
            *j = add(*j, t);
        }
        p.center = add(p.center, t);
        p
    }

    pub fn is_finite(&self) -> bool {
        self.center.iter().all(|v| v.is_finite())
            && self.joints.iter().flatten().all(|v| v.is_finite())
    }
}

/// Persons detected (or annotated) in one frame, sorted by descending score.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PoseSet {
    pub persons: Vec<Person>,
}

impl PoseSet {
    pub fn new(mut persons: Vec<Person>) -> Self {
        persons.sort_by(|a, b| b.score.total_cmp(&a.score));
        PoseSet { persons }
    }

    pub fn len(&self) -> usize {
        self.persons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.persons.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.persons.iter().enumerate() {
            if !p.is_finite() {
                return Err(Error::validation(format!("person {i} has non-finite joints")));
            }
        }
        if self
            .persons
            .windows(2)
            .any(|w| w[0].score < w[1].score)
        {
            return Err(Error::validation("person scores are not in descending order"));
        }
        Ok(())
    }
}

/// Text layout: one block per frame, one header line per person followed by
/// 15 `joint x y z` lines.
pub fn write_pose_text(frames: &[(usize, &PoseSet)]) -> String {
    let mut out = String::from("format_version 1\n");
    for (frame, set) in frames {
        let _ = writeln!(out, "frame {frame} persons {}", set.len());
        for (pi, p) in set.persons.iter().enumerate() {
            let _ = writeln!(
                out,
                "person {pi} score {:.9} center {:.9} {:.9} {:.9}",
                p.score, p.center[0], p.center[1], p.center[2]
            );
            for (j, xyz) in Joint::ALL.iter().zip(p.joints.iter()) {
                let _ = writeln!(out, "{} {:.9} {:.9} {:.9}", j.name(), xyz[0], xyz[1], xyz[2]);
            }
        }
    }
    out
}

pub fn read_pose_text(text: &str) -> Result<Vec<(usize, PoseSet)>> {
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    match lines.next() {
        Some("format_version 1") => {}
        other => return Err(Error::format(format!("unsupported pose header {other:?}"))),
    }
    let num = |s: Option<&str>| -> Result<f64> {
        s.ok_or_else(|| Error::format("truncated pose line"))?
            .parse::<f64>()
            .map_err(|e| Error::format(format!("bad number: {e}")))
    };
    let mut frames = Vec::new();
    while let Some(line) = lines.next() {
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() != 4 || tok[0] != "frame" || tok[2] != "persons" {
            return Err(Error::format(format!("expected frame header, got `{line}`")));
        }
        let frame: usize = tok[1].parse().map_err(|_| Error::format("bad frame index"))?;
        let count: usize = tok[3].parse().map_err(|_| Error::format("bad person count"))?;
        let mut persons = Vec::with_capacity(count);
        for _ in 0..count {
            let head = lines.next().ok_or_else(|| Error::format("missing person header"))?;
            let t: Vec<&str> = head.split_whitespace().collect();
            if t.len() != 8 || t[0] != "person" || t[2] != "score" || t[4] != "center" {
                return Err(Error::format(format!("bad person header `{head}`")));
            }
            let score = num(Some(t[3]))?;
            let center = [num(Some(t[5]))?, num(Some(t[6]))?, num(Some(t[7]))?];
            let mut joints = [[0.0; 3]; NUM_JOINTS];
            for expected in Joint::ALL {
                let jl = lines.next().ok_or_else(|| Error::format("missing joint line"))?;
                let mut it = jl.split_whitespace();
                let name = it.next().unwrap_or_default();
                if Joint::from_name(name) != Some(expected) {
                    return Err(Error::format(format!(
                        "expected joint `{}`, got `{name}`",
                        expected.name()
                    )));
                }
                joints[expected.index()] = [num(it.next())?, num(it.next())?, num(it.next())?];
            }
            persons.push(Person { center, score, joints });
        }
        frames.push((frame, PoseSet { persons }));
    }
    Ok(frames)
}

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

#[inline]
pub fn dist(a: Vec3, b: Vec3) -> f64 {
    norm(sub(a, b))
}
