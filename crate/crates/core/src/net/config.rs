use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::NUM_JOINTS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    Group,
    Batch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Center confidence plus per-joint metric offsets.
    CenterOffset,
    /// One confidence volume per joint.
    PerJoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub stages: usize,
    /// Modules per stage (P).
    pub modules_per_stage: usize,
    /// Residual convolutions per branch in each module (M).
    pub parallel_convs_per_module: usize,
    pub base_channels: usize,
    pub norm_kind: NormKind,
    pub group_count: usize,
    /// Average-pooling factors over (D, Z, Y, X) applied before the stem.
    pub input_downsample: [usize; 4],
    pub head_channels: usize,
    pub head_kind: HeadKind,
    pub norm_eps: f64,
    /// Initial bias of the final confidence layer.
    pub center_bias_init: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            stages: 3,
            modules_per_stage: 1,
            parallel_convs_per_module: 2,
            base_channels: 16,
            norm_kind: NormKind::Group,
            group_count: 4,
            input_downsample: [4, 2, 4, 4],
            head_channels: 16,
            head_kind: HeadKind::CenterOffset,
            norm_eps: 1e-5,
            center_bias_init: -2.19,
        }
    }
}

impl NetworkConfig {
    /// Small two-stage network used for overfitting and gradient checks.
    pub fn micro() -> Self {
        NetworkConfig {
            stages: 2,
            modules_per_stage: 1,
            parallel_convs_per_module: 1,
            base_channels: 8,
            group_count: 2,
            input_downsample: [8, 4, 4, 8],
            head_channels: 8,
            ..Self::default()
        }
    }

    /// Channels of branch `i` (0 = highest resolution).
    pub fn branch_channels(&self, i: usize) -> usize {
        self.base_channels << i
    }

    pub fn output_channels(&self) -> usize {
        match self.head_kind {
            HeadKind::CenterOffset => 3 * NUM_JOINTS,
            HeadKind::PerJoint => NUM_JOINTS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 {
            return Err(Error::config("network needs at least one stage"));
        }
        if self.base_channels == 0 || self.head_channels == 0 || self.parallel_convs_per_module == 0 {
            return Err(Error::config("channel counts and convs per module must be positive"));
        }
        if self.input_downsample.contains(&0) {
            return Err(Error::config("downsample factors must be positive"));
        }
        if !(self.norm_eps > 0.0 && self.norm_eps.is_finite()) {
            return Err(Error::config("norm_eps must be positive"));
        }
        if self.norm_kind == NormKind::Group {
            let g = self.group_count;
            let bad = g == 0
                || (0..self.stages).any(|i| self.branch_channels(i) % g != 0);
            if bad {
                return Err(Error::config(format!(
                    "group_count {g} must divide every branch width (base {})",
                    self.base_channels
                )));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::format(e.to_string()))
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let c: NetworkConfig = toml::from_str(s).map_err(|e| Error::config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }
}
