use std::collections::{BTreeMap, HashMap};

use serde_json::json;

use super::graph::FixedStats;
use super::tensor::Tensor;
use crate::container::{Container, DType, Kind};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Named parameter tensors in creation order, plus batch-norm running
/// statistics keyed by layer name.
#[derive(Debug, Clone, Default)]
pub struct Params<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
    pub running: BTreeMap<String, FixedStats<T>>,
}

impl<T: Scalar> Params<T> {
    pub fn new() -> Self {
        Params {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
            running: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, i: usize) -> &Tensor<T> {
        &self.tensors[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor<T> {
        &mut self.tensors[i]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.find(name).map(|i| &self.tensors[i])
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.find(name).map(|i| &mut self.tensors[i])
    }

    pub fn push(&mut self, name: &str, t: Tensor<T>) -> Result<usize> {
        if self.index.contains_key(name) {
            return Err(Error::config(format!("duplicate parameter `{name}`")));
        }
        self.index.insert(name.to_string(), self.tensors.len());
        self.names.push(name.to_string());
        self.tensors.push(t);
        Ok(self.tensors.len() - 1)
    }

    /// `p -= lr * g` for every parameter with a gradient.
    pub fn descend(&mut self, grads: &[Option<Tensor<T>>], lr: T) {
        for (p, g) in self.tensors.iter_mut().zip(grads) {
            if let Some(g) = g {
                for (a, &b) in p.data.iter_mut().zip(&g.data) {
                    *a -= lr * b;
                }
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.all_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::of(x.to_f64_lossy())).collect::<Vec<U>>();
        Params {
            names: self.names.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    shape: t.shape,
                    data: conv(&t.data),
                })
                .collect(),
            index: self.index.clone(),
            running: self
                .running
                .iter()
                .map(|(k, s)| {
                    (
                        k.clone(),
                        FixedStats {
                            mean: conv(&s.mean),
                            var: conv(&s.var),
                        },
                    )
                })
                .collect(),
        }
    }

    /// Flat container: parameters then running means and variances, with a
    /// manifest of (name, shape, offset) in the metadata.
    pub fn to_container(&self, extra: serde_json::Value) -> Container {
        let mut data = Vec::with_capacity(self.count());
        let mut layers = Vec::new();
        for (name, t) in self.names.iter().zip(&self.tensors) {
            layers.push(json!({"name": name, "shape": t.shape, "offset": data.len()}));
            data.extend(t.data.iter().map(|v| v.to_f64_lossy() as f32));
        }
        let mut running = Vec::new();
        for (name, s) in &self.running {
            running.push(json!({"name": name, "channels": s.mean.len(), "offset": data.len()}));
            data.extend(s.mean.iter().chain(&s.var).map(|v| v.to_f64_lossy() as f32));
        }
        let len = data.len();
        Container::new(
            Kind::Parameters,
            DType::F32,
            vec![len],
            json!({"layers": layers, "running": running, "model": extra}),
            data,
        )
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect(Kind::Parameters, DType::F32, 1)?;
        let bad = |m: &str| Error::format(format!("parameter manifest: {m}"));
        let read = |off: usize, n: usize| -> Result<Vec<T>> {
            c.data
                .get(off..off + n)
                .map(|s| s.iter().map(|&v| T::of(v as f64)).collect())
                .ok_or_else(|| bad("offset out of range"))
        };
        let mut p = Params::new();
        for l in c.meta["layers"].as_array().ok_or_else(|| bad("missing layers"))? {
            let name = l["name"].as_str().ok_or_else(|| bad("layer name"))?;
            let dims: Vec<usize> = serde_json::from_value(l["shape"].clone()).map_err(|e| bad(&e.to_string()))?;
            let shape: [usize; 5] = dims.try_into().map_err(|_| bad("shape must have 5 dims"))?;
            let off = l["offset"].as_u64().ok_or_else(|| bad("offset"))? as usize;
            let data = read(off, shape.iter().product())?;
            p.push(name, Tensor { shape, data })?;
        }
        if let Some(rs) = c.meta["running"].as_array() {
            for r in rs {
                let name = r["name"].as_str().ok_or_else(|| bad("running name"))?;
                let n = r["channels"].as_u64().ok_or_else(|| bad("channels"))? as usize;
                let off = r["offset"].as_u64().ok_or_else(|| bad("offset"))? as usize;
                let v = read(off, 2 * n)?;
                p.running.insert(
                    name.to_string(),
                    FixedStats {
                        mean: v[..n].to_vec(),
                        var: v[n..].to_vec(),
                    },
                );
            }
        }
        Ok(p)
    }
}
