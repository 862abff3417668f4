use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use super::model::HeadOutput;
use super::tensor::Tensor;
use crate::decode::{match_foreground, CenterTargetMap, OffsetTarget};
use crate::error::{Error, Result};
use crate::pose::{PoseSet, NUM_JOINTS};
use crate::scalar::Scalar;
use crate::scene::CartesianGrid;

/// Log arguments are clamped to [FOCAL_EPS, 1 - FOCAL_EPS].
pub const FOCAL_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta: f64,
    pub w_class: f64,
    pub w_reg: f64,
    /// Gaussian target width in head voxels.
    pub sigma: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 2.0,
            beta: 4.0,
            w_class: 1.0,
            w_reg: 1.0,
            sigma: 2.0,
        }
    }
}

/// Targets for one frame.
#[derive(Debug, Clone)]
pub struct FrameTargets {
    pub center: CenterTargetMap,
    pub offsets: Vec<OffsetTarget>,
}

/// Focal loss value and its gradient with respect to `pred`. Predictions
/// outside [FOCAL_EPS, 1 - FOCAL_EPS] are clamped and get zero gradient.
/// The sum is divided by minus the number of voxels with target exactly 1
/// (at least 1).
pub fn focal_loss_grad<T: Scalar>(pred: &[T], target: &[f64], alpha: f64, beta: f64) -> Result<(f64, Vec<T>)> {
    if pred.len() != target.len() {
        return Err(Error::dimension(format!(
            "focal loss: {} predictions for {} targets",
            pred.len(),
            target.len()
        )));
    }
    let n_pos = target.iter().filter(|&&y| y == 1.0).count().max(1) as f64;
    let mut sum = 0.0;
    let mut grad = vec![T::zero(); pred.len()];
    for (i, (&p, &y)) in pred.iter().zip(target).enumerate() {
        let raw = p.to_f64_lossy();
        if raw.is_nan() {
            return Err(Error::numerical("focal loss: NaN prediction"));
        }
        let clamped = !(FOCAL_EPS..=1.0 - FOCAL_EPS).contains(&raw);
        let p = raw.clamp(FOCAL_EPS, 1.0 - FOCAL_EPS);
        let (term, d) = if y == 1.0 {
            let t = (1.0 - p).powf(alpha) * p.ln();
            let d = -alpha * (1.0 - p).powf(alpha - 1.0) * p.ln() + (1.0 - p).powf(alpha) / p;
            (t, d)
        } else {
            let w = (1.0 - y).powf(beta);
            let t = w * p.powf(alpha) * (1.0 - p).ln();
            let d = w * (alpha * p.powf(alpha - 1.0) * (1.0 - p).ln() - p.powf(alpha) / (1.0 - p));
            (t, d)
        };
        sum += term;
        if !clamped {
            grad[i] = T::of(-d / n_pos);
        }
    }
    Ok((-sum / n_pos, grad))
}

pub fn focal_loss(pred: &[f64], target: &CenterTargetMap, alpha: f64, beta: f64) -> Result<f64> {
    focal_loss_grad(pred, &target.values, alpha, beta).map(|r| r.0)
}

/// Mean over persons of the mean over joints of the L1 offset error.
/// `offsets` is (N, 45, Z, Y, X); `targets[n]` lists frame n's persons.
pub fn offset_loss_grad<T: Scalar>(offsets: &Tensor<T>, targets: &[&[OffsetTarget]]) -> Result<(f64, Tensor<T>)> {
    if offsets.shape[0] != targets.len() || offsets.shape[1] != 3 * NUM_JOINTS {
        return Err(Error::dimension(format!(
            "offset loss: tensor {:?} for {} frames",
            offsets.shape,
            targets.len()
        )));
    }
    let persons: usize = targets.iter().map(|t| t.len()).sum();
    let mut grad = Tensor::zeros(offsets.shape);
    if persons == 0 {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / (persons * NUM_JOINTS) as f64;
    let s = offsets.spatial();
    let mut sum = 0.0;
    for (n, frame) in targets.iter().enumerate() {
        for t in frame.iter() {
            if t.voxel >= s {
                return Err(Error::dimension("offset target voxel outside the head grid"));
            }
            for j in 0..NUM_JOINTS {
                for a in 0..3 {
                    let i = offsets.index(n, 3 * j + a, 0, 0, 0) + t.voxel;
                    let r = offsets.data[i].to_f64_lossy() - t.offsets[j][a];
                    sum += r.abs();
                    grad.data[i] = T::of(scale * if r > 0.0 { 1.0 } else if r < 0.0 { -1.0 } else { 0.0 });
                }
            }
        }
    }
    Ok((sum * scale, grad))
}

/// Offset loss of one frame's head against its annotated persons. Every
/// foreground voxel of `target` must hold a ground-truth pelvis.
pub fn offset_loss(pred: &HeadOutput, gt: &PoseSet, target: &CenterTargetMap, grid: &CartesianGrid) -> Result<f64> {
    if pred.dims != target.dims {
        return Err(Error::dimension("offset loss: head and target grids differ"));
    }
    let matched = match_foreground(target, gt, grid)?;
    let [z, y, x] = pred.dims;
    let t = Tensor::from_vec([1, 3 * NUM_JOINTS, z, y, x], pred.keypoint_offsets.clone())?;
    offset_loss_grad(&t, &[&matched]).map(|r| r.0)
}

pub fn total_loss(
    head: &HeadOutput,
    target: &CenterTargetMap,
    gt: &PoseSet,
    grid: &CartesianGrid,
    cfg: &LossConfig,
) -> Result<f64> {
    let class = focal_loss(&head.center_confidence, target, cfg.alpha, cfg.beta)?;
    let reg = offset_loss(head, gt, target, grid)?;
    Ok(cfg.w_class * class + cfg.w_reg * reg)
}

/// Loss terms of a batch and the gradients to seed the backward pass.
pub struct BatchLoss<T> {
    pub class: f64,
    pub reg: f64,
    pub total: f64,
    pub center_grad: Tensor<T>,
    pub offset_grad: Tensor<T>,
}

/// Weighted focal plus offset loss over a batch. The focal sum is
/// normalised by the batch's total foreground count.
pub fn batch_loss<T: Scalar>(
    center: &Tensor<T>,
    offsets: &Tensor<T>,
    targets: &[FrameTargets],
    cfg: &LossConfig,
) -> Result<BatchLoss<T>> {
    let map: Vec<f64> = targets.iter().flat_map(|t| t.center.values.iter().copied()).collect();
    let (class, cg) = focal_loss_grad(&center.data, &map, cfg.alpha, cfg.beta)?;
    let lists: Vec<&[OffsetTarget]> = targets.iter().map(|t| &t.offsets[..]).collect();
    let (reg, mut og) = offset_loss_grad(offsets, &lists)?;
    let wc = T::of(cfg.w_class);
    let wr = T::of(cfg.w_reg);
    og.data.iter_mut().for_each(|g| *g *= wr);
    let total = cfg.w_class * class + cfg.w_reg * reg;
    if !total.is_finite() {
        return Err(Error::numerical("loss is not finite"));
    }
    Ok(BatchLoss {
        class,
        reg,
        total,
        center_grad: Tensor {
            shape: center.shape,
            data: cg.into_iter().map(|g| g * wc).collect(),
        },
        offset_grad: og,
    })
}

/// Fingerprint of the loss's non-smooth points: clamped predictions and
/// the sign of every offset residual.
pub fn loss_signature<T: Scalar>(center: &Tensor<T>, offsets: &Tensor<T>, targets: &[FrameTargets]) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    for p in &center.data {
        (!(FOCAL_EPS..=1.0 - FOCAL_EPS).contains(&p.to_f64_lossy())).hash(&mut h);
    }
    for (n, f) in targets.iter().enumerate() {
        for t in &f.offsets {
            for j in 0..NUM_JOINTS {
                for a in 0..3 {
                    let i = offsets.index(n, 3 * j + a, 0, 0, 0) + t.voxel;
                    let r = offsets.data[i].to_f64_lossy() - t.offsets[j][a];
                    (r.partial_cmp(&0.0)).hash(&mut h);
                }
            }
        }
    }
    h.finish()
}
