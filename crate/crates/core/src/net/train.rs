use log::info;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{HeadKind, NetworkConfig};
use super::graph::Tape;
use super::loss::{batch_loss, loss_signature, BatchLoss, FrameTargets, LossConfig};
use super::model::{prepare_input, Mode, Network, Outputs};
use super::tensor::Tensor;
use crate::decode::encode_targets;
use crate::dsp::RadarTensor4D;
use crate::error::{Error, Result};
use crate::pose::PoseSet;
use crate::scalar::Scalar;
use crate::scene::CartesianGrid;

pub const MAX_TRAIN_FRAMES: usize = 64;
/// Training stops with a numerical error once the loss exceeds this.
pub const DIVERGENCE_LOSS: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub loss: LossConfig,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 500,
            lr: 0.01,
            seed: 0,
            loss: LossConfig::default(),
        }
    }
}

pub struct TrainResult<T> {
    pub network: Network<T>,
    /// Full-batch loss before each update.
    pub losses: Vec<f64>,
    /// Loss after the last update.
    pub final_loss: f64,
    pub head_grid: CartesianGrid,
}

/// Targets for each frame's persons on `head_grid`.
pub fn frame_targets(poses: &[&PoseSet], head_grid: &CartesianGrid, sigma: f64) -> Result<Vec<FrameTargets>> {
    poses
        .iter()
        .map(|p| {
            let (center, offsets) = encode_targets(p, head_grid, sigma)?;
            Ok(FrameTargets { center, offsets })
        })
        .collect()
}

/// Forward pass plus loss.
pub fn evaluate_loss<T: Scalar>(
    net: &Network<T>,
    input: &Tensor<T>,
    targets: &[FrameTargets],
    loss: &LossConfig,
) -> Result<(Tape<T>, Outputs, BatchLoss<T>)> {
    let (tape, out) = net.forward(input, Mode::Train)?;
    let (Some(c), Some(o)) = (out.center, out.offsets) else {
        return Err(Error::config("training needs the center/offset head"));
    };
    let l = batch_loss(tape.value(c), tape.value(o), targets, loss)?;
    Ok((tape, out, l))
}

/// Gradient of the loss for every parameter (zeros where unused).
pub fn loss_gradients<T: Scalar>(
    net: &Network<T>,
    input: &Tensor<T>,
    targets: &[FrameTargets],
    loss: &LossConfig,
) -> Result<(BatchLoss<T>, Vec<Option<Tensor<T>>>)> {
    let (tape, out, l) = evaluate_loss(net, input, targets, loss)?;
    let seeds = vec![
        (out.center.expect("center"), l.center_grad.clone()),
        (out.offsets.expect("offsets"), l.offset_grad.clone()),
    ];
    let grads = tape.backward(seeds, net.params.len())?;
    Ok((l, grads))
}

/// Full-batch gradient descent with a fixed step on at most
/// [`MAX_TRAIN_FRAMES`] frames. Batch-norm running statistics are set to
/// the training batch's statistics at the end.
pub fn train_micro<T: Scalar>(
    frames: &[(&RadarTensor4D<T>, &PoseSet)],
    config: &NetworkConfig,
    opts: &TrainOptions,
) -> Result<TrainResult<T>> {
    if frames.is_empty() || frames.len() > MAX_TRAIN_FRAMES {
        return Err(Error::validation(format!(
            "train_micro takes 1 to {MAX_TRAIN_FRAMES} frames, got {}",
            frames.len()
        )));
    }
    if config.head_kind != HeadKind::CenterOffset {
        return Err(Error::config("train_micro needs the center/offset head"));
    }
    if !(opts.lr > 0.0 && opts.lr.is_finite()) {
        return Err(Error::config("learning rate must be positive"));
    }
    let tensors: Vec<&RadarTensor4D<T>> = frames.iter().map(|f| f.0).collect();
    let poses: Vec<&PoseSet> = frames.iter().map(|f| f.1).collect();
    let mut net = Network::for_tensor_shape(config.clone(), tensors[0].shape(), opts.seed)?;
    let input = prepare_input(&tensors, config.input_downsample)?;
    let head_grid = net.head_grid(&tensors[0].grid);
    let targets = frame_targets(&poses, &head_grid, opts.loss.sigma)?;
    let mut losses = Vec::with_capacity(opts.epochs);
    let lr = T::of(opts.lr);
    for epoch in 0..opts.epochs {
        let (l, grads) = loss_gradients(&net, &input, &targets, &opts.loss)?;
        if !(l.total <= DIVERGENCE_LOSS) {
            return Err(Error::numerical(format!(
                "training diverged at epoch {epoch}: loss {} (class {}, reg {})",
                l.total, l.class, l.reg
            )));
        }
        if epoch % 50 == 0 || log::log_enabled!(log::Level::Debug) {
            info!("epoch {epoch}: loss {:.6} (class {:.6}, reg {:.6})", l.total, l.class, l.reg);
        }
        losses.push(l.total);
        net.params.descend(&grads, lr);
        if !net.params.all_finite() {
            return Err(Error::numerical(format!("parameters became non-finite at epoch {epoch}")));
        }
    }
    let final_loss = evaluate_loss(&net, &input, &targets, &opts.loss)?.2.total;
    net.set_running_stats(&input)?;
    Ok(TrainResult {
        network: net,
        losses,
        final_loss,
        head_grid,
    })
}

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub param: String,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    /// Samples dropped because a perturbation crossed a ReLU, clamp, or L1
    /// kink.
    pub skipped: usize,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_err).fold(0.0, f64::max)
    }
}

/// `|a - n| / max(|a|, |n|, 1e-7)`.
pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-7)
}

/// Compare backward gradients with central differences of step `h` on
/// `samples` randomly chosen scalar parameters.
pub fn gradcheck(
    net: &Network<f64>,
    input: &Tensor<f64>,
    targets: &[FrameTargets],
    loss: &LossConfig,
    samples: usize,
    h: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let (_, grads) = loss_gradients(net, input, targets, loss)?;
    let signature = |n: &Network<f64>| -> Result<(f64, u64, u64)> {
        let (tape, out, l) = evaluate_loss(n, input, targets, loss)?;
        let ls = loss_signature(tape.value(out.center.unwrap()), tape.value(out.offsets.unwrap()), targets);
        Ok((l.total, tape.relu_signature(), ls))
    };
    let (_, relu0, loss0) = signature(net)?;
    let total = net.params.count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = sample(&mut rng, total, total.min(samples * 4)).into_vec();
    let mut report = GradCheckReport::default();
    let mut probe = net.clone();
    for flat in picks {
        if report.entries.len() == samples {
            break;
        }
        let (mut p, mut e) = (0, flat);
        while e >= net.params.get(p).len() {
            e -= net.params.get(p).len();
            p += 1;
        }
        let orig = net.params.get(p).data[e];
        probe.params.get_mut(p).data[e] = orig + h;
        let (lp, rp, sp) = signature(&probe)?;
        probe.params.get_mut(p).data[e] = orig - h;
        let (lm, rm, sm) = signature(&probe)?;
        probe.params.get_mut(p).data[e] = orig;
        if rp != relu0 || rm != relu0 || sp != loss0 || sm != loss0 {
            report.skipped += 1;
            continue;
        }
        let numeric = (lp - lm) / (2.0 * h);
        let analytic = grads[p].as_ref().map_or(0.0, |g| g.data[e]);
        report.entries.push(GradCheckEntry {
            param: net.params.names()[p].clone(),
            element: e,
            analytic,
            numeric,
            rel_err: relative_error(analytic, numeric),
        });
    }
    Ok(report)
}
