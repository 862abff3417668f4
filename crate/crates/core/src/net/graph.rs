//! Reverse-mode differentiation over a recorded sequence of tensor ops.

use std::hash::{Hash, Hasher};

use super::tensor::{conv3d_backward, conv3d_forward, upsample_backward, upsample_forward, ConvGeom, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// How elements are grouped for normalisation statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormSets {
    /// Per sample, `groups` contiguous channel groups.
    Group(usize),
    /// Per channel across the batch.
    Batch,
}

/// Normalisation with fixed statistics per channel (batch-norm inference).
#[derive(Debug, Clone)]
pub struct FixedStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

enum Op<T> {
    Leaf,
    Param(usize),
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Norm {
        x: Var,
        gamma: Var,
        beta: Var,
        sets: NormSets,
        /// Normalised input.
        xhat: Vec<T>,
        /// 1/σ per set.
        inv_std: Vec<T>,
    },
    FixedNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        inv_std: Vec<T>,
        xhat: Vec<T>,
    },
    Relu(Var),
    Add(Var, Var),
    Upsample {
        x: Var,
        factor: usize,
    },
    Sigmoid(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    name: String,
}

/// Batch statistics a normalisation node measured, per channel.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub name: String,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    batch_stats: Vec<BatchStats<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Tape {
            nodes: Vec::new(),
            batch_stats: Vec::new(),
        }
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, name: impl Into<String>) -> Var {
        self.nodes.push(Node {
            value,
            op,
            name: name.into(),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn name(&self, v: Var) -> &str {
        &self.nodes[v.0].name
    }

    /// Last node recorded under `name`.
    pub fn find(&self, name: &str) -> Option<Var> {
        self.nodes.iter().rposition(|n| n.name == name).map(Var)
    }

    pub fn batch_stats(&self) -> &[BatchStats<T>] {
        &self.batch_stats
    }

    pub fn leaf(&mut self, value: Tensor<T>, name: &str) -> Var {
        self.push(value, Op::Leaf, name)
    }

    /// Parameter `index` of the caller's parameter list.
    pub fn param(&mut self, index: usize, value: Tensor<T>, name: &str) -> Var {
        self.push(value, Op::Param(index), name)
    }

    pub fn conv(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom, name: &str) -> Result<Var> {
        let xs = self.value(x).shape;
        let ws = self.value(w).shape;
        let k = geom.kernel;
        if ws[1] != xs[1] || ws[2..] != [k, k, k] || b.is_some_and(|b| self.value(b).len() != ws[0]) {
            return Err(Error::dimension(format!(
                "layer `{name}`: weight {ws:?} does not fit input {xs:?} with kernel {k}"
            )));
        }
        let y = conv3d_forward(self.value(x), &self.value(w).data, b.map(|b| &self.value(b).data[..]), ws[0], geom);
        Ok(self.push(y, Op::Conv { x, w, b, geom }, name))
    }

    pub fn norm(&mut self, x: Var, gamma: Var, beta: Var, sets: NormSets, eps: T, name: &str) -> Result<Var> {
        let xv = self.value(x);
        let [n, c, ..] = xv.shape;
        let s = xv.spatial();
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(Error::dimension(format!("layer `{name}`: affine size differs from {c} channels")));
        }
        let n_sets = match sets {
            NormSets::Group(g) => {
                if g == 0 || c % g != 0 {
                    return Err(Error::dimension(format!("layer `{name}`: {g} groups do not divide {c} channels")));
                }
                n * g
            }
            NormSets::Batch => c,
        };
        let set_of = |b: usize, ch: usize| match sets {
            NormSets::Group(g) => b * g + ch / (c / g),
            NormSets::Batch => ch,
        };
        let mut sum = vec![0.0f64; n_sets];
        let mut count = vec![0usize; n_sets];
        for b in 0..n {
            for ch in 0..c {
                let k = set_of(b, ch);
                sum[k] += xv.channel(b, ch).iter().map(|v| v.to_f64_lossy()).sum::<f64>();
                count[k] += s;
            }
        }
        let mean: Vec<f64> = sum.iter().zip(&count).map(|(s, &n)| s / n as f64).collect();
        let mut sq = vec![0.0f64; n_sets];
        for b in 0..n {
            for ch in 0..c {
                let k = set_of(b, ch);
                sq[k] += xv
                    .channel(b, ch)
                    .iter()
                    .map(|v| (v.to_f64_lossy() - mean[k]).powi(2))
                    .sum::<f64>();
            }
        }
        let var: Vec<f64> = sq.iter().zip(&count).map(|(s, &n)| s / n as f64).collect();
        let inv_std: Vec<T> = var.iter().map(|&v| T::of(1.0 / (v + eps.to_f64_lossy()).sqrt())).collect();
        let mut xhat = Tensor::zeros(xv.shape);
        let mut y = Tensor::zeros(xv.shape);
        let (gv, bv) = (&self.value(gamma).data, &self.value(beta).data);
        for b in 0..n {
            for ch in 0..c {
                let k = set_of(b, ch);
                let (m, is) = (T::of(mean[k]), inv_std[k]);
                let src = xv.channel(b, ch);
                let off = (b * c + ch) * s;
                for i in 0..s {
                    let h = (src[i] - m) * is;
                    xhat.data[off + i] = h;
                    y.data[off + i] = gv[ch] * h + bv[ch];
                }
            }
        }
        if sets == NormSets::Batch {
            self.batch_stats.push(BatchStats {
                name: name.to_string(),
                mean: mean.iter().map(|&v| T::of(v)).collect(),
                var: var.iter().map(|&v| T::of(v)).collect(),
            });
        }
        Ok(self.push(
            y,
            Op::Norm {
                x,
                gamma,
                beta,
                sets,
                xhat: xhat.data,
                inv_std,
            },
            name,
        ))
    }

    /// Per-channel normalisation with given statistics.
    pub fn fixed_norm(&mut self, x: Var, gamma: Var, beta: Var, stats: &FixedStats<T>, eps: T, name: &str) -> Result<Var> {
        let xv = self.value(x);
        let [n, c, ..] = xv.shape;
        if stats.mean.len() != c || stats.var.len() != c {
            return Err(Error::dimension(format!("layer `{name}`: running statistics size differs from {c}")));
        }
        let s = xv.spatial();
        let inv_std: Vec<T> = stats.var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (gv, bv) = (&self.value(gamma).data, &self.value(beta).data);
        let mut xhat = vec![T::zero(); xv.len()];
        let mut y = Tensor::zeros(xv.shape);
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * s;
                for i in 0..s {
                    let h = (xv.data[off + i] - stats.mean[ch]) * inv_std[ch];
                    xhat[off + i] = h;
                    y.data[off + i] = gv[ch] * h + bv[ch];
                }
            }
        }
        Ok(self.push(y, Op::FixedNorm { x, gamma, beta, inv_std, xhat }, name))
    }

    pub fn relu(&mut self, x: Var, name: &str) -> Var {
        let mut y = self.value(x).clone();
        y.data.iter_mut().for_each(|v| *v = v.max(T::zero()));
        self.push(y, Op::Relu(x), name)
    }

    pub fn add(&mut self, a: Var, b: Var, name: &str) -> Result<Var> {
        if self.value(a).shape != self.value(b).shape {
            return Err(Error::dimension(format!(
                "layer `{name}`: cannot add {:?} and {:?}",
                self.value(a).shape,
                self.value(b).shape
            )));
        }
        let mut y = self.value(a).clone();
        y.add_assign(self.value(b));
        Ok(self.push(y, Op::Add(a, b), name))
    }

    pub fn upsample(&mut self, x: Var, factor: usize, dims: [usize; 3], name: &str) -> Var {
        let y = upsample_forward(self.value(x), factor, dims);
        self.push(y, Op::Upsample { x, factor }, name)
    }

    pub fn sigmoid(&mut self, x: Var, name: &str) -> Var {
        let mut y = self.value(x).clone();
        y.data.iter_mut().for_each(|v| *v = T::one() / (T::one() + (-*v).exp()));
        self.push(y, Op::Sigmoid(x), name)
    }

    /// Fingerprint of every ReLU on/off pattern, for detecting when a
    /// perturbation crosses a kink.
    pub fn relu_signature(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for node in &self.nodes {
            if let Op::Relu(x) = node.op {
                for v in &self.nodes[x.0].value.data {
                    (*v > T::zero()).hash(&mut h);
                }
            }
        }
        h.finish()
    }

    /// Back-propagate `seeds` (node, dLoss/dnode) and return the gradient of
    /// every parameter node, indexed by its parameter index.
    pub fn backward(&self, seeds: Vec<(Var, Tensor<T>)>, n_params: usize) -> Result<Vec<Option<Tensor<T>>>> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        fn acc<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
            match slot {
                Some(t) => t.add_assign(&g),
                None => *slot = Some(g),
            }
        }
        for (v, g) in seeds {
            if g.shape != self.value(v).shape {
                return Err(Error::dimension(format!("seed for `{}` has wrong shape", self.name(v))));
            }
            acc(&mut grads[v.0], g);
        }
        let mut out: Vec<Option<Tensor<T>>> = (0..n_params).map(|_| None).collect();
        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !g.all_finite() {
                return Err(Error::numerical(format!("non-finite gradient at layer `{}`", node.name)));
            }
            match &node.op {
                Op::Leaf => {}
                Op::Param(k) => acc(&mut out[*k], g),
                Op::Conv { x, w, b, geom } => {
                    let wv = self.value(*w);
                    let (gx, gw, gb) = conv3d_backward(self.value(*x), &wv.data, &g, *geom);
                    acc(&mut grads[x.0], gx);
                    acc(&mut grads[w.0], Tensor { shape: wv.shape, data: gw });
                    if let Some(b) = b {
                        acc(&mut grads[b.0], Tensor { shape: self.value(*b).shape, data: gb });
                    }
                }
                Op::Norm {
                    x,
                    gamma,
                    beta,
                    sets,
                    xhat,
                    inv_std,
                } => {
                    let (gx, gg, gb) = norm_backward(self.value(*x).shape, &self.value(*gamma).data, *sets, xhat, inv_std, &g);
                    acc(&mut grads[x.0], gx);
                    acc(&mut grads[gamma.0], Tensor { shape: self.value(*gamma).shape, data: gg });
                    acc(&mut grads[beta.0], Tensor { shape: self.value(*beta).shape, data: gb });
                }
                Op::FixedNorm { x, gamma, beta, inv_std, xhat } => {
                    let [n, c, ..] = g.shape;
                    let s = g.spatial();
                    let gv = &self.value(*gamma).data;
                    let mut gx = Tensor::zeros(g.shape);
                    let mut gg = vec![T::zero(); c];
                    let mut gb = vec![T::zero(); c];
                    for b in 0..n {
                        for ch in 0..c {
                            let off = (b * c + ch) * s;
                            for i in off..off + s {
                                gx.data[i] = g.data[i] * gv[ch] * inv_std[ch];
                                gg[ch] += g.data[i] * xhat[i];
                                gb[ch] += g.data[i];
                            }
                        }
                    }
                    acc(&mut grads[x.0], gx);
                    acc(&mut grads[gamma.0], Tensor { shape: self.value(*gamma).shape, data: gg });
                    acc(&mut grads[beta.0], Tensor { shape: self.value(*beta).shape, data: gb });
                }
                Op::Relu(x) => {
                    let mut gx = g;
                    for (gv, &xv) in gx.data.iter_mut().zip(&self.value(*x).data) {
                        if xv <= T::zero() {
                            *gv = T::zero();
                        }
                    }
                    acc(&mut grads[x.0], gx);
                }
                Op::Add(a, b) => {
                    acc(&mut grads[b.0], g.clone());
                    acc(&mut grads[a.0], g);
                }
                Op::Upsample { x, factor } => {
                    let gx = upsample_backward(&g, *factor, self.value(*x).shape);
                    acc(&mut grads[x.0], gx);
                }
                Op::Sigmoid(x) => {
                    let mut gx = g;
                    for (gv, &y) in gx.data.iter_mut().zip(&node.value.data) {
                        *gv *= y * (T::one() - y);
                    }
                    acc(&mut grads[x.0], gx);
                }
            }
        }
        Ok(out)
    }
}

/// Gradients of `y = gamma * xhat + beta` with batch/group statistics.
fn norm_backward<T: Scalar>(
    shape: [usize; 5],
    gamma: &[T],
    sets: NormSets,
    xhat: &[T],
    inv_std: &[T],
    gy: &Tensor<T>,
) -> (Tensor<T>, Vec<T>, Vec<T>) {
    let [n, c, ..] = shape;
    let s = gy.spatial();
    let set_of = |b: usize, ch: usize| match sets {
        NormSets::Group(g) => b * g + ch / (c / g),
        NormSets::Batch => ch,
    };
    let n_sets = inv_std.len();
    let mut gg = vec![T::zero(); c];
    let mut gb = vec![T::zero(); c];
    // per set: Σ dxhat and Σ dxhat·xhat
    let mut s1 = vec![T::zero(); n_sets];
    let mut s2 = vec![T::zero(); n_sets];
    let mut count = vec![0usize; n_sets];
    for b in 0..n {
        for ch in 0..c {
            let k = set_of(b, ch);
            let off = (b * c + ch) * s;
            count[k] += s;
            for i in off..off + s {
                let g = gy.data[i];
                gg[ch] += g * xhat[i];
                gb[ch] += g;
                let dh = g * gamma[ch];
                s1[k] += dh;
                s2[k] += dh * xhat[i];
            }
        }
    }
    let mut gx = Tensor::zeros(shape);
    for b in 0..n {
        for ch in 0..c {
            let k = set_of(b, ch);
            let m = T::of(count[k] as f64);
            let (a1, a2) = (s1[k] / m, s2[k] / m);
            let off = (b * c + ch) * s;
            for i in off..off + s {
                let dh = gy.data[i] * gamma[ch];
                gx.data[i] = inv_std[k] * (dh - a1 - xhat[i] * a2);
            }
        }
    }
    (gx, gg, gb)
}
