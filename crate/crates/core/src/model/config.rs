use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::volume::Shape3;

/// Strided 3D conv encoder followed by an MLP projector.
///
/// Each stage is a 3x3x3 convolution, stride 2, padding 1, followed by ReLU.
/// The pooled output of the last stage is `z`; the projector maps `z` through
/// `projector_dims` (ReLU between layers, none after the last) to the
/// `feature_dim`-wide embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub channels_per_stage: Vec<usize>,
    pub num_stages: usize,
    pub feature_dim: usize,
    pub projector_dims: Vec<usize>,
    #[serde(default = "yes")]
    pub projector_bias: bool,
    pub input_shape: Shape3,
    pub seed: u64,
}

fn yes() -> bool {
    true
}

impl EncoderConfig {
    /// ~8e4 parameters, 16^3 input, C = 64.
    pub fn toy() -> Self {
        Self {
            channels_per_stage: vec![8, 16, 32, 64],
            num_stages: 4,
            feature_dim: 64,
            projector_dims: vec![64, 64],
            projector_bias: true,
            input_shape: [16, 16, 16],
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.channels_per_stage.len() != self.num_stages || self.num_stages == 0 {
            return bad(format!(
                "num_stages = {} but channels_per_stage has {} entries (need >= 1)",
                self.num_stages,
                self.channels_per_stage.len()
            ));
        }
        if self.channels_per_stage.iter().chain(&self.projector_dims).any(|&w| w == 0) {
            return bad("all layer widths must be >= 1".into());
        }
        if self.feature_dim < 2 {
            return bad(format!("feature_dim must be >= 2, got {}", self.feature_dim));
        }
        if self.projector_dims.last() != Some(&self.feature_dim) {
            return bad(format!(
                "projector_dims {:?} must end in feature_dim {}",
                self.projector_dims, self.feature_dim
            ));
        }
        if self.input_shape.contains(&0) {
            return bad(format!("input_shape {:?} has a zero extent", self.input_shape));
        }
        Ok(())
    }

    /// Width of the pooled backbone feature `z`.
    pub fn backbone_dim(&self) -> usize {
        *self.channels_per_stage.last().expect("validated non-empty")
    }

    /// Spatial extent after each stage.
    pub fn stage_shapes(&self) -> Vec<Shape3> {
        let mut shape = self.input_shape;
        (0..self.num_stages)
            .map(|_| {
                shape = shape.map(|d| d.div_ceil(2));
                shape
            })
            .collect()
    }
}
