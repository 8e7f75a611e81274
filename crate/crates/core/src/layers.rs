//! Convolution layer descriptions, weight initialization, and the graph-level
//! layer primitives used by the model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::ops::conv::{ConvGeometry, KSIZE, TAPS};
use crate::tensor::{Shape4, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

/// Hyperparameters of one 3x3 convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub dilation: usize,
    pub stride: usize,
    pub activation: Activation,
}

impl ConvLayerSpec {
    pub fn relu(in_channels: usize, out_channels: usize, dilation: usize, stride: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            dilation,
            stride,
            activation: Activation::Relu,
        }
    }

    pub fn linear(in_channels: usize, out_channels: usize, dilation: usize, stride: usize) -> Self {
        Self {
            activation: Activation::Linear,
            ..Self::relu(in_channels, out_channels, dilation, stride)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config(format!("layer {self:?} has zero channels")));
        }
        if self.dilation == 0 || self.stride == 0 {
            return Err(Error::Config(format!(
                "layer {self:?} needs dilation >= 1 and stride >= 1"
            )));
        }
        Ok(())
    }

    pub fn kernel_shape(&self) -> Shape4 {
        Shape4::new(self.out_channels, self.in_channels, KSIZE, KSIZE)
    }

    /// Kernel plus bias element count.
    pub fn param_count(&self) -> usize {
        self.out_channels * self.in_channels * TAPS + self.out_channels
    }

    pub fn geometry(&self) -> ConvGeometry {
        ConvGeometry {
            dilation: self.dilation,
            stride: self.stride,
            relu: self.activation == Activation::Relu,
        }
    }
}

/// Weights of one layer: kernels `(out, in, 3, 3)` and one bias per output.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights {
    pub kernels: Tensor4,
    pub bias: Vec<f32>,
}

impl ConvWeights {
    pub fn zeros(spec: &ConvLayerSpec) -> Self {
        Self {
            kernels: Tensor4::zeros(spec.kernel_shape()),
            bias: vec![0.0; spec.out_channels],
        }
    }

    pub fn matches(&self, spec: &ConvLayerSpec) -> bool {
        self.kernels.shape() == spec.kernel_shape() && self.bias.len() == spec.out_channels
    }

    pub fn bias_tensor(&self) -> Tensor4 {
        Tensor4::from_vec(Shape4::new(1, self.bias.len(), 1, 1), self.bias.clone())
            .expect("bias length is at least one")
    }

    pub fn param_count(&self) -> usize {
        self.kernels.data().len() + self.bias.len()
    }
}

/// He-normal kernels with variance `2 / (in_channels * 9)` and zero bias.
pub fn he_init(spec: &ConvLayerSpec, seed: u64) -> ConvWeights {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = (2.0 / (spec.in_channels * TAPS) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    let shape = spec.kernel_shape();
    let data = (0..shape.numel())
        .map(|_| normal.sample(&mut rng) as f32)
        .collect();
    ConvWeights {
        kernels: Tensor4::from_vec(shape, data).expect("kernel shape"),
        bias: vec![0.0; spec.out_channels],
    }
}

/// Graph handles for one layer's parameters.
#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub kernels: Var,
    pub bias: Var,
}

impl LayerVars {
    /// Records the weights as differentiable leaves.
    pub fn leaves(g: &mut Graph, w: &ConvWeights) -> Self {
        Self {
            kernels: g.leaf(w.kernels.clone()),
            bias: g.leaf(w.bias_tensor()),
        }
    }

    /// Records the weights as constants (no gradient).
    pub fn constants(g: &mut Graph, w: &ConvWeights) -> Self {
        Self {
            kernels: g.constant(w.kernels.clone()),
            bias: g.constant(w.bias_tensor()),
        }
    }
}

/// "Same"-padded 3x3 convolution with the spec's dilation, stride and activation.
pub fn dilated_conv2d(g: &mut Graph, input: Var, w: LayerVars, spec: &ConvLayerSpec) -> Result<Var> {
    spec.validate()?;
    let s = g.shape(input);
    if s.c != spec.in_channels {
        return Err(Error::Shape(format!(
            "layer expects {} input channels, got {}",
            spec.in_channels, s.c
        )));
    }
    let (ho, wo) = spec.geometry().output_hw(s.h, s.w);
    if ho < 1 || wo < 1 {
        return Err(Error::Shape(format!("input {s} vanishes under stride {}", spec.stride)));
    }
    g.conv2d(input, w.kernels, w.bias, spec.geometry())
}

/// Bilinear upsampling by 2 or 4.
pub fn upsample(g: &mut Graph, input: Var, factor: usize) -> Result<Var> {
    g.upsample(input, factor)
}

/// Side length of the input window that can influence one output unit of
/// the stacked layers: `1 + sum_l 2 * d_l * prod_{k<l} s_k`.
pub fn theoretical_rf(specs: &[ConvLayerSpec]) -> usize {
    let mut rf = 1;
    let mut jump = 1;
    for s in specs {
        rf += 2 * s.dilation * jump;
        jump *= s.stride;
    }
    rf
}
