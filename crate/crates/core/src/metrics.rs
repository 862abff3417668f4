//! Joint position errors, person matching, and per-action reports.
//!
//! All errors are reported in centimetres. MPJPE aligns the predicted
//! pelvis onto the ground-truth pelvis first; Abs-MPJPE does not align.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::{dist, norm, sub, Joint, Person, PoseSet, Vec3, NUM_JOINTS};

const CM: f64 = 100.0;

/// Result of pairing predicted with ground-truth persons.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Matching {
    /// (prediction index, ground-truth index).
    pub pairs: Vec<(usize, usize)>,
    pub missed: Vec<usize>,
    pub false_positives: Vec<usize>,
}

/// Greedy matching by ascending pelvis distance (ties by index); pairs
/// farther apart than `max_dist` metres stay unmatched.
pub fn match_persons(pred: &PoseSet, gt: &PoseSet, max_dist: f64) -> Matching {
    let mut cand = Vec::new();
    for (i, p) in pred.persons.iter().enumerate() {
        for (j, g) in gt.persons.iter().enumerate() {
            let d = dist(p.pelvis(), g.pelvis());
            if d <= max_dist {
                cand.push((d, i, j));
            }
        }
    }
    cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_p = vec![false; pred.len()];
    let mut used_g = vec![false; gt.len()];
    let mut m = Matching::default();
    for (_, i, j) in cand {
        if !used_p[i] && !used_g[j] {
            used_p[i] = true;
            used_g[j] = true;
            m.pairs.push((i, j));
        }
    }
    m.pairs.sort_unstable();
    m.missed = (0..gt.len()).filter(|&j| !used_g[j]).collect();
    m.false_positives = (0..pred.len()).filter(|&i| !used_p[i]).collect();
    m
}

/// Per-joint Euclidean error.
pub fn jpe(pred: &[Vec3; NUM_JOINTS], gt: &[Vec3; NUM_JOINTS]) -> [f64; NUM_JOINTS] {
    std::array::from_fn(|j| dist(pred[j], gt[j]) * CM)
}

/// Pelvis-aligned mean joint error.
pub fn mpjpe(pred: &[Vec3; NUM_JOINTS], gt: &[Vec3; NUM_JOINTS]) -> f64 {
    let r = Joint::Pelvis.index();
    let shift = sub(pred[r], gt[r]);
    let sum: f64 = (0..NUM_JOINTS).map(|j| norm(sub(sub(pred[j], gt[j]), shift))).sum();
    sum / NUM_JOINTS as f64 * CM
}

/// Mean joint error in world coordinates.
pub fn abs_mpjpe(pred: &[Vec3; NUM_JOINTS], gt: &[Vec3; NUM_JOINTS]) -> f64 {
    jpe(pred, gt).iter().sum::<f64>() / NUM_JOINTS as f64
}

/// Root (pelvis) position error.
pub fn mrpe(pred: &[Vec3; NUM_JOINTS], gt: &[Vec3; NUM_JOINTS]) -> f64 {
    let r = Joint::Pelvis.index();
    dist(pred[r], gt[r]) * CM
}

/// Predicted and ground-truth poses of one sequence.
#[derive(Debug, Clone)]
pub struct Sequence {
    pub action: String,
    pub frames: Vec<(PoseSet, PoseSet)>,
}

/// Errors averaged over matched persons. Averages are NaN (null in JSON)
/// when nothing matched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRow {
    pub action: String,
    pub frames: usize,
    pub matched: usize,
    pub missed: usize,
    pub false_positives: usize,
    pub per_joint_jpe: [f64; NUM_JOINTS],
    pub mrpe: f64,
    pub mpjpe: f64,
    pub abs_mpjpe: f64,
}

#[derive(Default)]
struct Acc {
    frames: usize,
    matched: usize,
    missed: usize,
    fp: usize,
    jpe: [f64; NUM_JOINTS],
    mpjpe: f64,
}

impl Acc {
    fn add_frame(&mut self, pred: &PoseSet, gt: &PoseSet, max_dist: f64) {
        let m = match_persons(pred, gt, max_dist);
        self.frames += 1;
        self.missed += m.missed.len();
        self.fp += m.false_positives.len();
        for (i, j) in m.pairs {
            let (p, g): (&Person, &Person) = (&pred.persons[i], &gt.persons[j]);
            self.matched += 1;
            for (a, e) in self.jpe.iter_mut().zip(jpe(&p.joints, &g.joints)) {
                *a += e;
            }
            self.mpjpe += mpjpe(&p.joints, &g.joints);
        }
    }

    fn merge(&mut self, o: &Acc) {
        self.frames += o.frames;
        self.matched += o.matched;
        self.missed += o.missed;
        self.fp += o.fp;
        for (a, b) in self.jpe.iter_mut().zip(&o.jpe) {
            *a += b;
        }
        self.mpjpe += o.mpjpe;
    }

    fn row(&self, action: &str) -> ActionRow {
        let n = self.matched as f64;
        let mean = |v: f64| if self.matched == 0 { f64::NAN } else { v / n };
        let per_joint_jpe = self.jpe.map(mean);
        ActionRow {
            action: action.to_string(),
            frames: self.frames,
            matched: self.matched,
            missed: self.missed,
            false_positives: self.fp,
            per_joint_jpe,
            mrpe: per_joint_jpe[Joint::Pelvis.index()],
            mpjpe: mean(self.mpjpe),
            abs_mpjpe: mean(self.jpe.iter().sum::<f64>() / NUM_JOINTS as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Sorted by action label.
    pub actions: Vec<ActionRow>,
    pub overall: ActionRow,
    pub max_match_dist: f64,
}

/// Per-action and overall errors. Unmatched ground truth counts as missed
/// and is left out of the averages.
pub fn report(sequences: &[Sequence], max_dist: f64) -> Result<EvalReport> {
    if !(max_dist >= 0.0) {
        return Err(Error::config("matching distance must be non-negative"));
    }
    let mut by_action: BTreeMap<&str, Acc> = BTreeMap::new();
    for s in sequences {
        let acc = by_action.entry(&s.action).or_default();
        for (i, (pred, gt)) in s.frames.iter().enumerate() {
            pred.validate()
                .and_then(|_| gt.validate())
                .map_err(|e| Error::validation(format!("sequence `{}` frame {i}: {e}", s.action)))?;
            acc.add_frame(pred, gt, max_dist);
        }
    }
    let mut all = Acc::default();
    for a in by_action.values() {
        all.merge(a);
    }
    Ok(EvalReport {
        actions: by_action.iter().map(|(k, a)| a.row(k)).collect(),
        overall: all.row("all"),
        max_match_dist: max_dist,
    })
}

fn mean_of(row: &ActionRow, joints: &[Joint]) -> f64 {
    joints.iter().map(|j| row.per_joint_jpe[j.index()]).sum::<f64>() / joints.len() as f64
}

impl EvalReport {
    /// Aligned columns, one row per action and a final overall row.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let width = self
            .actions
            .iter()
            .map(|r| r.action.len())
            .chain([6])
            .max()
            .unwrap_or(6);
        let cols = ["Thorax", "Head", "Ankle", "Wrist", "MRPE", "MPJPE", "Abs-MPJPE"];
        let _ = write!(s, "{:<width$}", "Action");
        for c in cols {
            let _ = write!(s, " {c:>10}");
        }
        let _ = writeln!(s, " {:>8} {:>7} {:>7} {:>7}", "matched", "missed", "fp", "frames");
        let fmt = |v: f64| {
            if v.is_finite() {
                format!("{v:.2}")
            } else {
                "-".to_string()
            }
        };
        for r in self.actions.iter().chain([&self.overall]) {
            let vals = [
                r.per_joint_jpe[Joint::Thorax.index()],
                r.per_joint_jpe[Joint::Head.index()],
                mean_of(r, &[Joint::LeftAnkle, Joint::RightAnkle]),
                mean_of(r, &[Joint::LeftWrist, Joint::RightWrist]),
                r.mrpe,
                r.mpjpe,
                r.abs_mpjpe,
            ];
            let _ = write!(s, "{:<width$}", r.action);
            for v in vals {
                let _ = write!(s, " {:>10}", fmt(v));
            }
            let _ = writeln!(s, " {:>8} {:>7} {:>7} {:>7}", r.matched, r.missed, r.false_positives, r.frames);
        }
        let _ = writeln!(s, "errors in cm; persons matched by pelvis within {} m", self.max_match_dist);
        s
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::format(e.to_string()))
    }
}
