use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::json;

use super::config::{HeadKind, NetworkConfig, NormKind};
use super::graph::{FixedStats, NormSets, Tape, Var};
use super::params::Params;
use super::tensor::{ConvGeom, Tensor};
use crate::container::{Container, DType, Kind};
use crate::dsp::RadarTensor4D;
use crate::error::{Error, Result};
use crate::pose::NUM_JOINTS;
use crate::scalar::Scalar;
use crate::scene::CartesianGrid;

/// Smallest confidence the head reports; confidences live in [EPS, 1 - EPS].
pub const CONFIDENCE_EPS: f64 = 1e-6;

/// Weight std of the last layer of each head.
const HEAD_STD: f64 = 0.01;

const G3: ConvGeom = ConvGeom {
    kernel: 3,
    stride: 1,
    pad: 1,
};
const DOWN: ConvGeom = ConvGeom {
    kernel: 3,
    stride: 2,
    pad: 1,
};
const G1: ConvGeom = ConvGeom {
    kernel: 1,
    stride: 1,
    pad: 0,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch norm uses the statistics of the current batch.
    Train,
    /// Batch norm uses stored running statistics.
    Eval,
}

/// Output nodes of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Outputs {
    /// (N, 1, Z, Y, X) sigmoid confidence.
    pub center: Option<Var>,
    /// (N, 45, Z, Y, X), channel `3 * joint + axis`, metres.
    pub offsets: Option<Var>,
    /// (N, 15, Z, Y, X) sigmoid confidence per joint.
    pub joints: Option<Var>,
}

/// Head prediction for one frame on the head grid.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    /// (z, y, x).
    pub dims: [usize; 3],
    pub center_confidence: Vec<f64>,
    /// Channel-major (45, z, y, x); channel `3 * joint + axis`.
    pub keypoint_offsets: Vec<f64>,
}

impl HeadOutput {
    pub fn voxels(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn offset(&self, joint: usize, axis: usize, voxel: usize) -> f64 {
        self.keypoint_offsets[(joint * 3 + axis) * self.voxels() + voxel]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.voxels();
        if self.center_confidence.len() != n || self.keypoint_offsets.len() != 3 * NUM_JOINTS * n {
            return Err(Error::dimension(format!("head output buffers do not match dims {:?}", self.dims)));
        }
        if self.center_confidence.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
            return Err(Error::validation("center confidence must lie strictly inside (0, 1)"));
        }
        if self.keypoint_offsets.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("non-finite keypoint offsets"));
        }
        Ok(())
    }

    pub fn to_container(&self, grid: &CartesianGrid) -> Container {
        let mut data: Vec<f32> = self.center_confidence.iter().map(|&v| v as f32).collect();
        data.extend(self.keypoint_offsets.iter().map(|&v| v as f32));
        let [z, y, x] = self.dims;
        Container::new(
            Kind::HeadOutput,
            DType::F32,
            vec![1 + 3 * NUM_JOINTS, z, y, x],
            json!({"grid": grid}),
            data,
        )
    }

    pub fn from_container(c: &Container) -> Result<(HeadOutput, CartesianGrid)> {
        c.expect(Kind::HeadOutput, DType::F32, 4)?;
        if c.dims[0] != 1 + 3 * NUM_JOINTS {
            return Err(Error::format(format!("head output needs {} channels", 1 + 3 * NUM_JOINTS)));
        }
        let grid: CartesianGrid =
            serde_json::from_value(c.meta["grid"].clone()).map_err(|e| Error::format(format!("head grid: {e}")))?;
        let dims = [c.dims[1], c.dims[2], c.dims[3]];
        if grid.dims != dims {
            return Err(Error::format("head grid does not match payload dims"));
        }
        let n: usize = dims.iter().product();
        let h = HeadOutput {
            dims,
            center_confidence: c.data[..n].iter().map(|&v| v as f64).collect(),
            keypoint_offsets: c.data[n..].iter().map(|&v| v as f64).collect(),
        };
        h.validate()?;
        Ok((h, grid))
    }
}

/// Per-joint confidence volumes for one frame, (15, z, y, x).
#[derive(Debug, Clone, PartialEq)]
pub struct JointMaps {
    pub dims: [usize; 3],
    pub maps: Vec<f64>,
}

/// Average-pool each frame by `factors` over (D, Z, Y, X), ceil-sized with
/// partial blocks averaged over the cells they hold, then scale each frame
/// so its largest value is 1.
pub fn prepare_input<T: Scalar>(frames: &[&RadarTensor4D<T>], factors: [usize; 4]) -> Result<Tensor<T>> {
    let first = frames.first().ok_or_else(|| Error::validation("no input frames"))?;
    let shape = first.shape();
    if factors.contains(&0) {
        return Err(Error::config("downsample factors must be positive"));
    }
    let out: [usize; 4] = std::array::from_fn(|a| shape[a].div_ceil(factors[a]));
    let per = out.iter().product::<usize>();
    let mut t = Tensor::zeros([frames.len(), out[0], out[1], out[2], out[3]]);
    let mut counts = vec![0u32; per];
    for (n, f) in frames.iter().enumerate() {
        if f.shape() != shape {
            return Err(Error::dimension(format!(
                "frame {n} has shape {:?}, expected {shape:?}",
                f.shape()
            )));
        }
        let dst = &mut t.data[n * per..(n + 1) * per];
        let count_now = n == 0;
        let mut i = 0;
        for d in 0..shape[0] {
            let od = d / factors[0];
            for z in 0..shape[1] {
                let oz = z / factors[1];
                for y in 0..shape[2] {
                    let oy = y / factors[2];
                    let row = ((od * out[1] + oz) * out[2] + oy) * out[3];
                    for x in 0..shape[3] {
                        let o = row + x / factors[3];
                        dst[o] += f.data[i];
                        if count_now {
                            counts[o] += 1;
                        }
                        i += 1;
                    }
                }
            }
        }
        let mut peak = T::zero();
        for (v, &c) in dst.iter_mut().zip(&counts) {
            *v /= T::of(c as f64);
            peak = peak.max(*v);
        }
        if !peak.is_finite() {
            return Err(Error::numerical(format!("frame {n} holds non-finite values")));
        }
        if peak > T::zero() {
            dst.iter_mut().for_each(|v| *v /= peak);
        }
    }
    Ok(t)
}

enum Init {
    He,
    Normal(f64),
    Value(f64),
}

enum Source<'a, T> {
    Fixed(&'a Params<T>),
    Create(&'a mut Params<T>, ChaCha8Rng),
}

struct Builder<'a, T> {
    tape: Tape<T>,
    source: Source<'a, T>,
    cfg: &'a NetworkConfig,
    mode: Mode,
}

impl<T: Scalar> Builder<'_, T> {
    fn param(&mut self, name: &str, shape: [usize; 5], init: Init) -> Result<Var> {
        let (index, value) = match &mut self.source {
            Source::Fixed(p) => {
                let i = p
                    .find(name)
                    .ok_or_else(|| Error::dimension(format!("layer `{name}`: parameter missing")))?;
                let t = p.get(i);
                if t.shape != shape {
                    return Err(Error::dimension(format!(
                        "layer `{name}`: parameter shape {:?}, network needs {shape:?}",
                        t.shape
                    )));
                }
                (i, t.clone())
            }
            Source::Create(p, rng) => {
                let mut t = Tensor::zeros(shape);
                match init {
                    Init::He => {
                        let fan_in = (shape[1] * shape[2] * shape[3] * shape[4]) as f64;
                        let n = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
                        t.data.iter_mut().for_each(|v| *v = T::of(n.sample(rng)));
                    }
                    Init::Normal(std) => {
                        let n = Normal::new(0.0, std).expect("positive std");
                        t.data.iter_mut().for_each(|v| *v = T::of(n.sample(rng)));
                    }
                    Init::Value(v) => t.data.iter_mut().for_each(|x| *x = T::of(v)),
                }
                let i = p.push(name, t.clone())?;
                (i, t)
            }
        };
        Ok(self.tape.param(index, value, name))
    }

    fn unit(&mut self, x: Var, name: &str, c_out: usize, geom: ConvGeom, norm: bool, relu: bool) -> Result<Var> {
        self.unit_with_bias(x, name, c_out, geom, norm, relu, Init::He, 0.0)
    }

    /// Convolution, then optional normalisation and ReLU. Convolutions that
    /// feed a normalisation carry no bias.
    #[allow(clippy::too_many_arguments)]
    fn unit_with_bias(
        &mut self,
        x: Var,
        name: &str,
        c_out: usize,
        geom: ConvGeom,
        norm: bool,
        relu: bool,
        weight_init: Init,
        bias_init: f64,
    ) -> Result<Var> {
        let c_in = self.tape.value(x).shape[1];
        let k = geom.kernel;
        let w = self.param(&format!("{name}.weight"), [c_out, c_in, k, k, k], weight_init)?;
        let b = if norm {
            None
        } else {
            Some(self.param(&format!("{name}.bias"), [c_out, 1, 1, 1, 1], Init::Value(bias_init))?)
        };
        let mut y = self.tape.conv(x, w, b, geom, name)?;
        if norm {
            let gamma = self.param(&format!("{name}.gamma"), [c_out, 1, 1, 1, 1], Init::Value(1.0))?;
            let beta = self.param(&format!("{name}.beta"), [c_out, 1, 1, 1, 1], Init::Value(0.0))?;
            let eps = T::of(self.cfg.norm_eps);
            y = match (self.cfg.norm_kind, self.mode) {
                (NormKind::Group, _) => self.tape.norm(y, gamma, beta, NormSets::Group(self.cfg.group_count), eps, name)?,
                (NormKind::Batch, Mode::Train) => self.tape.norm(y, gamma, beta, NormSets::Batch, eps, name)?,
                (NormKind::Batch, Mode::Eval) => {
                    let stats = match &mut self.source {
                        Source::Fixed(p) => p
                            .running
                            .get(name)
                            .cloned()
                            .ok_or_else(|| Error::config(format!("layer `{name}`: no running statistics")))?,
                        Source::Create(p, _) => {
                            let s = FixedStats {
                                mean: vec![T::zero(); c_out],
                                var: vec![T::one(); c_out],
                            };
                            p.running.insert(name.to_string(), s.clone());
                            s
                        }
                    };
                    self.tape.fixed_norm(y, gamma, beta, &stats, eps, name)?
                }
            };
        }
        if relu {
            y = self.tape.relu(y, &format!("{name}.relu"));
        }
        Ok(y)
    }

    fn residual(&mut self, x: Var, name: &str) -> Result<Var> {
        let c = self.tape.value(x).shape[1];
        let y = self.unit(x, name, c, G3, true, false)?;
        let s = self.tape.add(y, x, &format!("{name}.sum"))?;
        Ok(self.tape.relu(s, &format!("{name}.relu")))
    }

    /// Exchange information between all branches.
    fn fuse(&mut self, branches: &[Var], prefix: &str) -> Result<Vec<Var>> {
        let n = branches.len();
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let ci = self.cfg.branch_channels(i);
            let dims = self.tape.value(branches[i]).dims();
            let mut acc = branches[i];
            for j in 0..n {
                if j == i {
                    continue;
                }
                let name = format!("{prefix}.fuse{i}.from{j}");
                let t = if j > i {
                    let y = self.unit(branches[j], &name, ci, G1, true, false)?;
                    self.tape.upsample(y, 1 << (j - i), dims, &format!("{name}.up"))
                } else {
                    let mut y = branches[j];
                    for step in 0..i - j {
                        let last = step + 1 == i - j;
                        let c = self.cfg.branch_channels(j + step + 1);
                        y = self.unit(y, &format!("{name}.down{step}"), c, DOWN, true, !last)?;
                    }
                    y
                };
                acc = self.tape.add(acc, t, &format!("{name}.sum"))?;
            }
            let y = if n > 1 {
                self.tape.relu(acc, &format!("{prefix}.fuse{i}.relu"))
            } else {
                acc
            };
            out.push(y);
        }
        Ok(out)
    }

    fn build(&mut self, input: Var) -> Result<Outputs> {
        let cfg = self.cfg;
        let c1 = cfg.base_channels;
        let mut x = self.unit(input, "stem.0", c1, G3, true, true)?;
        x = self.unit(x, "stem.1", c1, G3, true, true)?;
        let mut branches = vec![x];
        for s in 0..cfg.stages {
            if s > 0 {
                let nb = self.unit(branches[s - 1], &format!("stage{s}.transition"), cfg.branch_channels(s), DOWN, true, true)?;
                branches.push(nb);
            }
            for m in 0..cfg.modules_per_stage {
                let prefix = format!("stage{s}.module{m}");
                for (b, br) in branches.iter_mut().enumerate() {
                    for k in 0..cfg.parallel_convs_per_module {
                        *br = self.residual(*br, &format!("{prefix}.branch{b}.conv{k}"))?;
                    }
                }
                if branches.len() > 1 {
                    branches = self.fuse(&branches, &prefix)?;
                }
            }
        }
        let top = branches[0];
        let h = cfg.head_channels;
        Ok(match cfg.head_kind {
            HeadKind::CenterOffset => {
                let c = self.unit(top, "head.center.0", h, G3, false, true)?;
                let c = self.unit_with_bias(c, "head.center.1", 1, G1, false, false, Init::Normal(HEAD_STD), cfg.center_bias_init)?;
                let center = self.tape.sigmoid(c, "head.center.sigmoid");
                let o = self.unit(top, "head.offset.0", h, G3, false, true)?;
                let offsets = self.unit_with_bias(o, "head.offset.1", 3 * NUM_JOINTS, G1, false, false, Init::Normal(HEAD_STD), 0.0)?;
                Outputs {
                    center: Some(center),
                    offsets: Some(offsets),
                    joints: None,
                }
            }
            HeadKind::PerJoint => {
                let c = self.unit(top, "head.joints.0", h, G3, false, true)?;
                let c = self.unit_with_bias(c, "head.joints.1", NUM_JOINTS, G1, false, false, Init::Normal(HEAD_STD), cfg.center_bias_init)?;
                Outputs {
                    center: None,
                    offsets: None,
                    joints: Some(self.tape.sigmoid(c, "head.joints.sigmoid")),
                }
            }
        })
    }
}

#[derive(Debug, Clone)]
pub struct Network<T> {
    pub config: NetworkConfig,
    pub in_channels: usize,
    pub params: Params<T>,
}

impl<T: Scalar> Network<T> {
    /// Fresh network with He-initialised weights for inputs of
    /// `in_channels` (the pooled Doppler count).
    pub fn new(config: NetworkConfig, in_channels: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if in_channels == 0 {
            return Err(Error::config("network needs at least one input channel"));
        }
        let mut params = Params::new();
        {
            let mut b = Builder {
                tape: Tape::new(),
                source: Source::Create(&mut params, ChaCha8Rng::seed_from_u64(seed)),
                cfg: &config,
                mode: Mode::Eval,
            };
            let input = b.tape.leaf(Tensor::zeros([1, in_channels, 1, 1, 1]), "input");
            b.build(input)?;
        }
        Ok(Network {
            config,
            in_channels,
            params,
        })
    }

    /// Network sized for tensors of shape (D, Z, Y, X) before pooling.
    pub fn for_tensor_shape(config: NetworkConfig, shape: [usize; 4], seed: u64) -> Result<Self> {
        let c = shape[0].div_ceil(config.input_downsample[0].max(1));
        Self::new(config, c, seed)
    }

    /// Grid of the head output for tensors on `grid`.
    pub fn head_grid(&self, grid: &CartesianGrid) -> CartesianGrid {
        let f = self.config.input_downsample;
        grid.downsampled([f[1], f[2], f[3]])
    }

    /// Record a forward pass over a prepared (N, C, Z, Y, X) input.
    pub fn forward(&self, input: &Tensor<T>, mode: Mode) -> Result<(Tape<T>, Outputs)> {
        if input.shape[1] != self.in_channels {
            return Err(Error::dimension(format!(
                "layer `input`: {} channels, network expects {}",
                input.shape[1], self.in_channels
            )));
        }
        let mut b = Builder {
            tape: Tape::new(),
            source: Source::Fixed(&self.params),
            cfg: &self.config,
            mode,
        };
        let x = b.tape.leaf(input.clone(), "input");
        let out = b.build(x)?;
        Ok((b.tape, out))
    }

    /// Inference-mode head outputs, one per frame.
    pub fn infer(&self, frames: &[&RadarTensor4D<T>]) -> Result<Vec<HeadOutput>> {
        if self.config.head_kind != HeadKind::CenterOffset {
            return Err(Error::config("infer needs the center/offset head"));
        }
        let input = prepare_input(frames, self.config.input_downsample)?;
        let (tape, out) = self.forward(&input, Mode::Eval)?;
        let center = tape.value(out.center.expect("center head"));
        let offsets = tape.value(out.offsets.expect("offset head"));
        Ok(head_outputs(center, offsets))
    }

    pub fn infer_joint_maps(&self, frames: &[&RadarTensor4D<T>]) -> Result<Vec<JointMaps>> {
        if self.config.head_kind != HeadKind::PerJoint {
            return Err(Error::config("per-joint maps need the per-joint head"));
        }
        let input = prepare_input(frames, self.config.input_downsample)?;
        let (tape, out) = self.forward(&input, Mode::Eval)?;
        let maps = tape.value(out.joints.expect("joint head"));
        Ok((0..maps.shape[0])
            .map(|n| {
                let per = maps.spatial() * NUM_JOINTS;
                JointMaps {
                    dims: maps.dims(),
                    maps: maps.data[n * per..(n + 1) * per].iter().map(|v| v.to_f64_lossy()).collect(),
                }
            })
            .collect())
    }

    /// Replace batch-norm running statistics with the exact statistics of
    /// `input` under the current weights.
    pub fn set_running_stats(&mut self, input: &Tensor<T>) -> Result<()> {
        if self.config.norm_kind != NormKind::Batch {
            return Ok(());
        }
        let (tape, _) = self.forward(input, Mode::Train)?;
        for s in tape.batch_stats() {
            self.params.running.insert(
                s.name.clone(),
                FixedStats {
                    mean: s.mean.clone(),
                    var: s.var.clone(),
                },
            );
        }
        Ok(())
    }

    pub fn to_container(&self) -> Result<Container> {
        let cfg = serde_json::to_value(&self.config).map_err(|e| Error::format(e.to_string()))?;
        Ok(self.params.to_container(json!({"config": cfg, "in_channels": self.in_channels})))
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let params = Params::from_container(c)?;
        let model = &c.meta["model"];
        let config: NetworkConfig = serde_json::from_value(model["config"].clone())
            .map_err(|e| Error::format(format!("network config: {e}")))?;
        config.validate()?;
        let in_channels = model["in_channels"]
            .as_u64()
            .ok_or_else(|| Error::format("missing in_channels"))? as usize;
        let net = Network {
            config,
            in_channels,
            params,
        };
        // shape check against the architecture
        let probe = Tensor::zeros([1, in_channels, 1, 1, 1]);
        let mode = if net.config.norm_kind == NormKind::Batch { Mode::Eval } else { Mode::Train };
        net.forward(&probe, mode)?;
        Ok(net)
    }
}

/// Split batched head tensors into per-frame outputs, clamping confidence
/// to [CONFIDENCE_EPS, 1 - CONFIDENCE_EPS].
pub fn head_outputs<T: Scalar>(center: &Tensor<T>, offsets: &Tensor<T>) -> Vec<HeadOutput> {
    let s = center.spatial();
    (0..center.shape[0])
        .map(|n| HeadOutput {
            dims: center.dims(),
            center_confidence: center.data[n * s..(n + 1) * s]
                .iter()
                .map(|v| v.to_f64_lossy().clamp(CONFIDENCE_EPS, 1.0 - CONFIDENCE_EPS))
                .collect(),
            keypoint_offsets: offsets.data[n * s * 3 * NUM_JOINTS..(n + 1) * s * 3 * NUM_JOINTS]
                .iter()
                .map(|v| v.to_f64_lossy())
                .collect(),
        })
        .collect()
}
