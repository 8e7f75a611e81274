//! The multi-resolution cascade: a shared spatial feature extractor, a
//! dilated flow feature extractor at 1/4 resolution, and two flow feature
//! refiners at 1/2 and full resolution, each followed by a 2-channel head.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::layers::{dilated_conv2d, he_init, Activation, ConvLayerSpec, ConvWeights, LayerVars};
use crate::tensor::{Shape4, Tensor4};

/// Layer lists for each stage of the cascade.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub spatial_extractor: Vec<ConvLayerSpec>,
    pub flow_extractor: Vec<ConvLayerSpec>,
    pub refiner1: Vec<ConvLayerSpec>,
    pub refiner2: Vec<ConvLayerSpec>,
    pub head_coarse: ConvLayerSpec,
    pub head_fine: ConvLayerSpec,
    pub head_final: ConvLayerSpec,
}

/// Stage whose flow output is being referred to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Coarsest,
    Fine,
    Finest,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Coarsest, Stage::Fine, Stage::Finest];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Coarsest => "coarsest",
            Stage::Fine => "fine",
            Stage::Finest => "finest",
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coarsest" | "coarse" => Ok(Stage::Coarsest),
            "fine" => Ok(Stage::Fine),
            "finest" | "final" => Ok(Stage::Finest),
            other => Err(Error::Config(format!("unknown stage `{other}`"))),
        }
    }
}

/// Canonical configuration (about 5.55M parameters, 54 conv layers).
pub fn default_config() -> ModelConfig {
    let spatial = vec![
        ConvLayerSpec::relu(3, 64, 1, 1),
        ConvLayerSpec::relu(64, 64, 2, 1),
        ConvLayerSpec::relu(64, 64, 3, 1),
    ];
    // 1, 1, 2, 4, ..., 30
    let flow_dilations = [1, 1].into_iter().chain((1..=15).map(|k| 2 * k));
    let flow = flow_dilations
        .enumerate()
        .map(|(i, d)| ConvLayerSpec::relu(128, 128, d, if i < 2 { 2 } else { 1 }))
        .collect();
    // 1, 1, 2, 3, ..., 15
    let r1_dilations = [1].into_iter().chain(1..=15);
    let refiner1 = r1_dilations
        .enumerate()
        .map(|(i, d)| {
            let input = if i == 0 { 130 } else { 128 };
            ConvLayerSpec::relu(input, 128, d, if i == 0 { 2 } else { 1 })
        })
        .collect();
    let refiner2 = (0..15)
        .map(|i| ConvLayerSpec::relu(if i == 0 { 132 } else { 64 }, 64, 1, 1))
        .collect();
    ModelConfig {
        spatial_extractor: spatial,
        flow_extractor: flow,
        refiner1,
        refiner2,
        head_coarse: ConvLayerSpec::linear(128, 2, 1, 1),
        head_fine: ConvLayerSpec::linear(128, 2, 1, 1),
        head_final: ConvLayerSpec::linear(64, 2, 1, 1),
    }
}

impl ModelConfig {
    /// Shrunken cascade with `layers` convolutions per stage (>= 2) and
    /// `width` channels everywhere, keeping the stride ladder and dilation
    /// pattern of the default.
    pub fn compact(layers: usize, width: usize) -> Self {
        assert!(layers >= 2 && width >= 1);
        let spatial = (0..layers)
            .map(|i| ConvLayerSpec::relu(if i == 0 { 3 } else { width }, width, i + 1, 1))
            .collect();
        let flow = (0..layers)
            .map(|i| {
                let d = if i < 2 { 1 } else { 2 * (i - 1) };
                ConvLayerSpec::relu(if i == 0 { 2 * width } else { width }, width, d, if i < 2 { 2 } else { 1 })
            })
            .collect();
        let refiner1 = (0..layers)
            .map(|i| {
                let d = i.max(1);
                ConvLayerSpec::relu(if i == 0 { 2 * width + 2 } else { width }, width, d, if i == 0 { 2 } else { 1 })
            })
            .collect();
        let refiner2 = (0..layers)
            .map(|i| ConvLayerSpec::relu(if i == 0 { 2 * width + 4 } else { width }, width, 1, 1))
            .collect();
        Self {
            spatial_extractor: spatial,
            flow_extractor: flow,
            refiner1,
            refiner2,
            head_coarse: ConvLayerSpec::linear(width, 2, 1, 1),
            head_fine: ConvLayerSpec::linear(width, 2, 1, 1),
            head_final: ConvLayerSpec::linear(width, 2, 1, 1),
        }
    }

    /// All layer specs in declaration order (the order of [`ModelParams`]).
    pub fn layers(&self) -> Vec<ConvLayerSpec> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.spatial_extractor);
        out.extend_from_slice(&self.flow_extractor);
        out.extend_from_slice(&self.refiner1);
        out.extend_from_slice(&self.refiner2);
        out.push(self.head_coarse);
        out.push(self.head_fine);
        out.push(self.head_final);
        out
    }

    fn stage_ranges(&self) -> [std::ops::Range<usize>; 4] {
        let a = self.spatial_extractor.len();
        let b = a + self.flow_extractor.len();
        let c = b + self.refiner1.len();
        let d = c + self.refiner2.len();
        [0..a, a..b, b..c, c..d]
    }

    /// Named layer-index ranges: the four stacks followed by the three heads.
    pub fn layer_groups(&self) -> Vec<(&'static str, std::ops::Range<usize>)> {
        let [sp, fl, r1, r2] = self.stage_ranges();
        let [hc, hf, hfin] = self.head_indices();
        vec![
            ("spatial_extractor", sp),
            ("flow_extractor", fl),
            ("refiner1", r1),
            ("refiner2", r2),
            ("head_coarse", hc..hc + 1),
            ("head_fine", hf..hf + 1),
            ("head_final", hfin..hfin + 1),
        ]
    }

    fn head_indices(&self) -> [usize; 3] {
        let d = self.stage_ranges()[3].end;
        [d, d + 1, d + 2]
    }

    /// Checks channel chaining, the stride ladder and the head contract.
    pub fn validate(&self) -> Result<()> {
        let stages = [
            ("spatial_extractor", &self.spatial_extractor),
            ("flow_extractor", &self.flow_extractor),
            ("refiner1", &self.refiner1),
            ("refiner2", &self.refiner2),
        ];
        for (name, layers) in stages {
            if layers.is_empty() {
                return Err(Error::Config(format!("{name} has no layers")));
            }
            for l in layers.iter() {
                l.validate()?;
            }
            for pair in layers.windows(2) {
                if pair[1].in_channels != pair[0].out_channels {
                    return Err(Error::Config(format!("{name}: channel chain broken at {:?}", pair[1])));
                }
            }
        }
        for (name, head) in [
            ("head_coarse", &self.head_coarse),
            ("head_fine", &self.head_fine),
            ("head_final", &self.head_final),
        ] {
            head.validate()?;
            if head.out_channels != 2 || head.activation != Activation::Linear || head.stride != 1 {
                return Err(Error::Config(format!(
                    "{name} must be a stride-1 linear layer with 2 outputs"
                )));
            }
        }
        let spatial_out = self.spatial_extractor.last().unwrap().out_channels;
        let expect_in = |name: &str, got: usize, want: usize| {
            if got == want {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} takes {got} channels, expected {want}")))
            }
        };
        expect_in("spatial_extractor", self.spatial_extractor[0].in_channels, 3)?;
        expect_in("flow_extractor", self.flow_extractor[0].in_channels, 2 * spatial_out)?;
        expect_in("refiner1", self.refiner1[0].in_channels, 2 * spatial_out + 2)?;
        expect_in("refiner2", self.refiner2[0].in_channels, 2 * spatial_out + 4)?;
        expect_in("head_coarse", self.head_coarse.in_channels, self.flow_extractor.last().unwrap().out_channels)?;
        expect_in("head_fine", self.head_fine.in_channels, self.refiner1.last().unwrap().out_channels)?;
        expect_in("head_final", self.head_final.in_channels, self.refiner2.last().unwrap().out_channels)?;

        let stride = |layers: &[ConvLayerSpec]| layers.iter().map(|l| l.stride).product::<usize>();
        for (name, layers, want) in [
            ("spatial_extractor", &self.spatial_extractor, 1),
            ("flow_extractor", &self.flow_extractor, 4),
            ("refiner1", &self.refiner1, 2),
            ("refiner2", &self.refiner2, 1),
        ] {
            if stride(layers) != want {
                return Err(Error::Config(format!("{name} must downsample by exactly {want}")));
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(ConvLayerSpec::param_count).sum()
    }

    /// Layers that lead from the input frames to the given stage's raw head output.
    pub fn stage_path(&self, stage: Stage) -> Vec<ConvLayerSpec> {
        let mut path = self.spatial_extractor.clone();
        match stage {
            Stage::Coarsest => {
                path.extend_from_slice(&self.flow_extractor);
                path.push(self.head_coarse);
            }
            Stage::Fine => {
                path.extend_from_slice(&self.refiner1);
                path.push(self.head_fine);
            }
            Stage::Finest => {
                path.extend_from_slice(&self.refiner2);
                path.push(self.head_final);
            }
        }
        path
    }
}

/// One set of weights per layer of a [`ModelConfig`], in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layers: Vec<ConvWeights>,
}

impl ModelParams {
    /// He-initialized weights; layer `i` uses seed `seed + i`.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let layers = cfg
            .layers()
            .iter()
            .enumerate()
            .map(|(i, spec)| he_init(spec, seed.wrapping_add(i as u64)))
            .collect();
        Self { layers }
    }

    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self {
            layers: cfg.layers().iter().map(ConvWeights::zeros).collect(),
        }
    }

    pub fn check(&self, cfg: &ModelConfig) -> Result<()> {
        let specs = cfg.layers();
        if specs.len() != self.layers.len() {
            return Err(Error::Config(format!(
                "config has {} layers but params have {}",
                specs.len(),
                self.layers.len()
            )));
        }
        for (i, (s, w)) in specs.iter().zip(&self.layers).enumerate() {
            if !w.matches(s) {
                return Err(Error::Config(format!("layer {i} weights do not match {s:?}")));
            }
        }
        Ok(())
    }
}

/// Exact number of trainable scalars (kernels plus biases). Shared layers are
/// stored, and therefore counted, once.
pub fn count_params(params: &ModelParams) -> usize {
    params.layers.iter().map(ConvWeights::param_count).sum()
}

/// Graph handles for every layer of a model.
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub layers: Vec<LayerVars>,
}

impl ParamVars {
    pub fn leaves(g: &mut Graph, params: &ModelParams) -> Self {
        Self {
            layers: params.layers.iter().map(|w| LayerVars::leaves(g, w)).collect(),
        }
    }

    pub fn constants(g: &mut Graph, params: &ModelParams) -> Self {
        Self {
            layers: params.layers.iter().map(|w| LayerVars::constants(g, w)).collect(),
        }
    }
}

/// Graph nodes produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct MultiresOutput {
    /// Quarter-resolution head output upsampled x4 with values scaled x4.
    pub flow_coarsest: Var,
    /// Half-resolution head output upsampled x2 with values scaled x2.
    pub flow_finer: Var,
    pub flow_final: Var,
    pub raw_uv_quarter: Var,
    pub raw_uv_half: Var,
    pub spatial1: Var,
    pub spatial2: Var,
}

impl MultiresOutput {
    pub fn stage(&self, stage: Stage) -> Var {
        match stage {
            Stage::Coarsest => self.flow_coarsest,
            Stage::Fine => self.flow_finer,
            Stage::Finest => self.flow_final,
        }
    }
}

/// Shape and range checks for a frame pair at model entry.
pub fn validate_frames(frame1: &Tensor4, frame2: &Tensor4) -> Result<()> {
    let s = frame1.shape();
    if s != frame2.shape() {
        return Err(Error::Input(format!("frames differ in shape: {s} vs {}", frame2.shape())));
    }
    if s.c != 3 {
        return Err(Error::Input(format!("frames need 3 channels, got {}", s.c)));
    }
    if s.h % 4 != 0 || s.w % 4 != 0 {
        return Err(Error::Input(format!(
            "frame size {}x{} is not a multiple of 4",
            s.h, s.w
        )));
    }
    for f in [frame1, frame2] {
        if let Some(v) = f.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Input(format!("pixel value {v} outside [0, 1]")));
        }
    }
    Ok(())
}

fn run_stack(g: &mut Graph, mut x: Var, specs: &[ConvLayerSpec], vars: &[LayerVars]) -> Result<Var> {
    for (spec, w) in specs.iter().zip(vars) {
        x = dilated_conv2d(g, x, *w, spec)?;
    }
    Ok(x)
}

fn upsample_flow(g: &mut Graph, uv: Var, factor: usize) -> Result<Var> {
    let up = g.upsample(uv, factor)?;
    Ok(g.mul_scalar(up, factor as f32))
}

/// Records the cascade on `g`. Frames must already be validated with
/// [`validate_frames`] (or built from trusted data).
pub fn forward(
    g: &mut Graph,
    cfg: &ModelConfig,
    vars: &ParamVars,
    frame1: Var,
    frame2: Var,
) -> Result<MultiresOutput> {
    let s = g.shape(frame1);
    if s != g.shape(frame2) {
        return Err(Error::Input("frames differ in shape".into()));
    }
    if s.h % 4 != 0 || s.w % 4 != 0 {
        return Err(Error::Input(format!("frame size {}x{} is not a multiple of 4", s.h, s.w)));
    }
    if vars.layers.len() != cfg.layers().len() {
        return Err(Error::Config("parameter count does not match config".into()));
    }
    let [sp, fl, r1, r2] = cfg.stage_ranges();
    let [hc, hf, hfin] = cfg.head_indices();
    let lv = &vars.layers;

    let spatial1 = run_stack(g, frame1, &cfg.spatial_extractor, &lv[sp.clone()])?;
    let spatial2 = run_stack(g, frame2, &cfg.spatial_extractor, &lv[sp])?;
    let features = g.concat_channels(&[spatial1, spatial2])?;

    let x = run_stack(g, features, &cfg.flow_extractor, &lv[fl])?;
    let raw_uv_quarter = dilated_conv2d(g, x, lv[hc], &cfg.head_coarse)?;
    let flow_coarsest = upsample_flow(g, raw_uv_quarter, 4)?;

    let x = g.concat_channels(&[features, flow_coarsest])?;
    let x = run_stack(g, x, &cfg.refiner1, &lv[r1])?;
    let raw_uv_half = dilated_conv2d(g, x, lv[hf], &cfg.head_fine)?;
    let flow_finer = upsample_flow(g, raw_uv_half, 2)?;

    let x = g.concat_channels(&[features, flow_coarsest, flow_finer])?;
    let x = run_stack(g, x, &cfg.refiner2, &lv[r2])?;
    let flow_final = dilated_conv2d(g, x, lv[hfin], &cfg.head_final)?;

    Ok(MultiresOutput {
        flow_coarsest,
        flow_finer,
        flow_final,
        raw_uv_quarter,
        raw_uv_half,
        spatial1,
        spatial2,
    })
}

/// Concrete outputs of an inference pass.
#[derive(Debug, Clone)]
pub struct MultiresFlows {
    pub flow_coarsest: Tensor4,
    pub flow_finer: Tensor4,
    pub flow_final: Tensor4,
    pub raw_uv_quarter: Tensor4,
    pub raw_uv_half: Tensor4,
}

/// Forward pass without gradient bookkeeping.
pub fn infer(cfg: &ModelConfig, params: &ModelParams, frame1: &Tensor4, frame2: &Tensor4) -> Result<MultiresFlows> {
    validate_frames(frame1, frame2)?;
    params.check(cfg)?;
    let mut g = Graph::new();
    let vars = ParamVars::constants(&mut g, params);
    let f1 = g.constant(frame1.clone());
    let f2 = g.constant(frame2.clone());
    let out = forward(&mut g, cfg, &vars, f1, f2)?;
    Ok(MultiresFlows {
        flow_coarsest: g.value(out.flow_coarsest).clone(),
        flow_finer: g.value(out.flow_finer).clone(),
        flow_final: g.value(out.flow_final).clone(),
        raw_uv_quarter: g.value(out.raw_uv_quarter).clone(),
        raw_uv_half: g.value(out.raw_uv_half).clone(),
    })
}

const CKPT_MAGIC: &[u8; 4] = b"DDCM";
const CKPT_VERSION: u32 = 1;

fn activation_code(a: Activation) -> u32 {
    match a {
        Activation::Relu => 0,
        Activation::Linear => 1,
    }
}

/// Serializes weights to the flat `DDCM` container.
pub fn save_checkpoint(cfg: &ModelConfig, params: &ModelParams) -> Result<Vec<u8>> {
    params.check(cfg)?;
    let specs = cfg.layers();
    let mut out = Vec::with_capacity(12 + 4 * count_params(params) + specs.len() * 20);
    out.extend_from_slice(CKPT_MAGIC);
    out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    out.extend_from_slice(&(specs.len() as u32).to_le_bytes());
    for (spec, w) in specs.iter().zip(&params.layers) {
        for field in [
            spec.in_channels as u32,
            spec.out_channels as u32,
            spec.dilation as u32,
            spec.stride as u32,
            activation_code(spec.activation),
        ] {
            out.extend_from_slice(&field.to_le_bytes());
        }
        for v in w.kernels.data().iter().chain(&w.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Parses a `DDCM` container and recovers the stage layout: the last three
/// records are the heads, and stage boundaries are where a layer's input
/// width differs from the previous layer's output width.
pub fn load_checkpoint(bytes: &[u8]) -> Result<(ModelConfig, ModelParams)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CKPT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CKPT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut specs = Vec::with_capacity(count.min(4096));
    let mut weights = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let in_channels = r.u32()? as usize;
        let out_channels = r.u32()? as usize;
        let dilation = r.u32()? as usize;
        let stride = r.u32()? as usize;
        let activation = match r.u32()? {
            0 => Activation::Relu,
            1 => Activation::Linear,
            other => return Err(Error::Checkpoint(format!("unknown activation code {other}"))),
        };
        let spec = ConvLayerSpec { in_channels, out_channels, dilation, stride, activation };
        spec.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
        let kernels = r.f32s(spec.kernel_shape().numel())?;
        let bias = r.f32s(out_channels)?;
        weights.push(ConvWeights {
            kernels: Tensor4::from_vec(spec.kernel_shape(), kernels)?,
            bias,
        });
        specs.push(spec);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    if specs.len() < 7 {
        return Err(Error::Checkpoint(format!("{} layers is too few for a cascade", specs.len())));
    }
    let body = &specs[..specs.len() - 3];
    let mut bounds = vec![0];
    for i in 1..body.len() {
        if body[i].in_channels != body[i - 1].out_channels {
            bounds.push(i);
        }
    }
    if bounds.len() != 4 {
        return Err(Error::Checkpoint(format!(
            "cannot split {} body layers into 4 stages ({} found)",
            body.len(),
            bounds.len()
        )));
    }
    bounds.push(body.len());
    let stage = |k: usize| body[bounds[k]..bounds[k + 1]].to_vec();
    let n = specs.len();
    let cfg = ModelConfig {
        spatial_extractor: stage(0),
        flow_extractor: stage(1),
        refiner1: stage(2),
        refiner2: stage(3),
        head_coarse: specs[n - 3],
        head_fine: specs[n - 2],
        head_final: specs[n - 1],
    };
    cfg.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok((cfg, ModelParams { layers: weights }))
}

/// Convenience for building a `(1, 3, h, w)` frame tensor.
pub fn frame_shape(h: usize, w: usize) -> Shape4 {
    Shape4::new(1, 3, h, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_structure() {
        let cfg = default_config();
        cfg.validate().unwrap();
        assert_eq!(cfg.refiner2.len(), 15);
        assert_eq!(cfg.flow_extractor.len(), 17);
        assert!(cfg.flow_extractor.iter().all(|l| l.out_channels == 128));
        let d: Vec<_> = cfg.spatial_extractor.iter().map(|l| l.dilation).collect();
        assert_eq!(d, [1, 2, 3]);
        assert!(cfg.refiner2.iter().all(|l| l.dilation == 1));
        let fd: Vec<_> = cfg.flow_extractor.iter().map(|l| l.dilation).collect();
        assert_eq!(&fd[..4], &[1, 1, 2, 4]);
        assert_eq!(*fd.last().unwrap(), 30);
        let rd: Vec<_> = cfg.refiner1.iter().map(|l| l.dilation).collect();
        assert_eq!(&rd[..4], &[1, 1, 2, 3]);
        assert_eq!(*rd.last().unwrap(), 15);
        assert_eq!(cfg.layers().len(), 54);
    }

    #[test]
    fn param_counts() {
        assert_eq!(ConvLayerSpec::relu(3, 64, 1, 1).param_count(), 1792);
        let cfg = default_config();
        let spatial: usize = cfg.spatial_extractor.iter().map(|l| l.param_count()).sum();
        assert_eq!(spatial, 75_648);
        let params = ModelParams::zeros(&cfg);
        let total = count_params(&params);
        assert_eq!(total, cfg.param_count());
        assert_eq!(total, 5_547_078);
    }

    #[test]
    fn compact_config_is_valid() {
        for layers in 2..5 {
            ModelConfig::compact(layers, 8).validate().unwrap();
        }
    }

    #[test]
    fn validate_rejects_bad_head() {
        let mut cfg = default_config();
        cfg.head_final.activation = Activation::Relu;
        assert!(cfg.validate().is_err());
        let mut cfg = default_config();
        cfg.refiner1[0].stride = 1;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn frame_validation() {
        let ok = Tensor4::full(frame_shape(8, 8), 0.5);
        validate_frames(&ok, &ok).unwrap();
        let odd = Tensor4::zeros(frame_shape(6, 8));
        assert!(validate_frames(&odd, &odd).is_err());
        let bright = Tensor4::full(frame_shape(8, 8), 1.5);
        assert!(validate_frames(&bright, &bright).is_err());
        let gray = Tensor4::zeros(Shape4::new(1, 1, 8, 8));
        assert!(validate_frames(&gray, &gray).is_err());
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        assert!(load_checkpoint(b"NOPE").is_err());
        let cfg = ModelConfig::compact(2, 4);
        let bytes = save_checkpoint(&cfg, &ModelParams::init(&cfg, 1)).unwrap();
        assert!(load_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(load_checkpoint(&extra).is_err());
    }

    #[test]
    fn checkpoint_header_layout() {
        let cfg = ModelConfig::compact(2, 4);
        let bytes = save_checkpoint(&cfg, &ModelParams::init(&cfg, 1)).unwrap();
        assert_eq!(&bytes[..4], b"DDCM");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 11);
        // first record: in=3, out=4, d=1, s=1, relu
        let fields: Vec<u32> = bytes[12..32]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        assert_eq!(fields, [3, 4, 1, 1, 0]);
    }
}
