//! Tape-based reverse-mode differentiation over [`Tensor4`] values.
//!
//! Every primitive appends a node to the [`Graph`] holding its forward value.
//! [`Graph::backward`] replays the tape from a root in reverse order, visiting
//! each node once and summing gradients that arrive over multiple paths.

use crate::error::{Error, Result};
use crate::ops::conv::{self, ConvGeometry};
use crate::ops::upsample;
use crate::tensor::{expect_same_shape, Shape4, Tensor4};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Smoothing term inside the endpoint-error square root.
pub const EPE_EPS: f64 = 1e-6;

#[derive(Debug, Clone)]
enum Op {
    /// Differentiable input.
    Leaf,
    /// Input that never receives a gradient.
    Constant,
    Identity(Var),
    Add(Var, Var),
    MulScalar(Var, f32),
    Relu(Var),
    Conv {
        input: Var,
        kernels: Var,
        bias: Var,
        geom: ConvGeometry,
    },
    Upsample(Var, usize),
    Concat(Vec<Var>),
    Epe {
        pred: Var,
        target: Tensor4,
        mask: Option<Vec<bool>>,
        count: usize,
    },
    /// Forward-only op recorded by the caller; backward through it fails.
    Opaque(&'static str, Vec<Var>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::Identity(_) => "identity",
            Op::Add(..) => "add",
            Op::MulScalar(..) => "mul_scalar",
            Op::Relu(_) => "relu",
            Op::Conv { .. } => "conv2d",
            Op::Upsample(..) => "upsample",
            Op::Concat(_) => "concat_channels",
            Op::Epe { .. } => "epe_loss",
            Op::Opaque(name, _) => name,
        }
    }

    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::Constant => vec![],
            Op::Identity(a) | Op::MulScalar(a, _) | Op::Relu(a) | Op::Upsample(a, _) => vec![*a],
            Op::Add(a, b) => vec![*a, *b],
            Op::Conv { input, kernels, bias, .. } => vec![*input, *kernels, *bias],
            Op::Concat(parts) => parts.clone(),
            Op::Epe { pred, .. } => vec![*pred],
            Op::Opaque(_, parents) => parents.clone(),
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor4,
    op: Op,
    needs_grad: bool,
}

/// Recording tape. Nodes are only ever appended, so index order is a
/// topological order and the graph is acyclic by construction.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Leaf gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor4>>,
}

impl Gradients {
    /// Gradient of a leaf, or `None` when the root does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor4> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor4> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor4 {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape4 {
        self.nodes[v.0].value.shape()
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    /// On/off state of every rectified unit recorded so far, in tape order.
    /// Two evaluations with equal patterns lie on the same linear piece of
    /// the network.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for n in &self.nodes {
            let rectified = match &n.op {
                Op::Relu(_) => true,
                Op::Conv { geom, .. } => geom.relu,
                _ => false,
            };
            if rectified {
                out.extend(n.value.data().iter().map(|&v| v > 0.0));
            }
        }
        out
    }

    fn push(&mut self, value: Tensor4, op: Op) -> Var {
        let needs_grad = match &op {
            Op::Leaf => true,
            Op::Constant => false,
            other => other.parents().iter().any(|p| self.nodes[p.0].needs_grad),
        };
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor4) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor4) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn identity(&mut self, a: Var) -> Var {
        let v = self.value(a).clone();
        self.push(v, Op::Identity(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn mul_scalar(&mut self, a: Var, k: f32) -> Var {
        let v = self.value(a).map(|x| x * k);
        self.push(v, Op::MulScalar(a, k))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| if x < 0.0 { 0.0 } else { x });
        self.push(v, Op::Relu(a))
    }

    /// Fused 3x3 convolution + optional ReLU. `kernels` is `(out, in, 3, 3)`,
    /// `bias` is `(1, out, 1, 1)`.
    pub fn conv2d(&mut self, input: Var, kernels: Var, bias: Var, geom: ConvGeometry) -> Result<Var> {
        let is = self.shape(input);
        let ks = self.shape(kernels);
        let bs = self.shape(bias);
        if ks.h != conv::KSIZE || ks.w != conv::KSIZE {
            return Err(Error::Shape(format!("kernel must be 3x3, got {ks}")));
        }
        if ks.c != is.c {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {}",
                ks.c, is.c
            )));
        }
        if bs != Shape4::new(1, ks.n, 1, 1) {
            return Err(Error::Shape(format!("bias shape {bs} does not match {} outputs", ks.n)));
        }
        if geom.dilation == 0 || geom.stride == 0 {
            return Err(Error::Config("dilation and stride must be >= 1".into()));
        }
        let v = conv::forward(self.value(input), self.value(kernels), self.value(bias).data(), geom);
        Ok(self.push(v, Op::Conv { input, kernels, bias, geom }))
    }

    pub fn upsample(&mut self, a: Var, factor: usize) -> Result<Var> {
        if factor != 2 && factor != 4 {
            return Err(Error::Config(format!("unsupported upsampling factor {factor}")));
        }
        let v = upsample::forward(self.value(a), factor);
        Ok(self.push(v, Op::Upsample(a, factor)))
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Shape("concat of an empty list".into()))?;
        let s0 = self.shape(first);
        let mut channels = 0;
        for &p in parts {
            let s = self.shape(p);
            if (s.n, s.h, s.w) != (s0.n, s0.h, s0.w) {
                return Err(Error::Shape(format!("cannot concat {s} with {s0}")));
            }
            channels += s.c;
        }
        let shape = Shape4::new(s0.n, channels, s0.h, s0.w);
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..s0.n {
            for &p in parts {
                data.extend_from_slice(self.value(p).item(n));
            }
        }
        let v = Tensor4::from_vec(shape, data)?;
        Ok(self.push(v, Op::Concat(parts.to_vec())))
    }

    /// Mean of `sqrt(du^2 + dv^2 + eps^2)` over valid pixels. `pred` and
    /// `target` are `(n, 2, h, w)`; `mask` has one entry per `(n, y, x)`.
    pub fn epe_loss(&mut self, pred: Var, target: &Tensor4, mask: Option<&[bool]>) -> Result<Var> {
        let s = self.shape(pred);
        expect_same_shape(s, target.shape())?;
        if s.c != 2 {
            return Err(Error::Shape(format!("flow tensors need 2 channels, got {s}")));
        }
        let plane = s.plane();
        if let Some(m) = mask {
            if m.len() != s.n * plane {
                return Err(Error::Shape(format!(
                    "mask has {} entries, expected {}",
                    m.len(),
                    s.n * plane
                )));
            }
        }
        let p = self.value(pred);
        let mut total = 0.0f64;
        let mut count = 0usize;
        for n in 0..s.n {
            let (pu, pv) = (p.plane(n, 0), p.plane(n, 1));
            let (tu, tv) = (target.plane(n, 0), target.plane(n, 1));
            for i in 0..plane {
                if mask.is_some_and(|m| !m[n * plane + i]) {
                    continue;
                }
                let du = (pu[i] - tu[i]) as f64;
                let dv = (pv[i] - tv[i]) as f64;
                total += (du * du + dv * dv + EPE_EPS * EPE_EPS).sqrt();
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::Input("endpoint error over an empty mask".into()));
        }
        let v = Tensor4::scalar((total / count as f64) as f32);
        Ok(self.push(
            v,
            Op::Epe {
                pred,
                target: target.clone(),
                mask: mask.map(|m| m.to_vec()),
                count,
            },
        ))
    }

    /// Records a value computed outside the graph. It has no backward rule, so
    /// differentiating through it is an error.
    pub fn opaque(&mut self, name: &'static str, parents: &[Var], value: Tensor4) -> Var {
        self.push(value, Op::Opaque(name, parents.to_vec()))
    }

    /// Vector-Jacobian product of `root` with `seed`, returned for every leaf
    /// the root depends on.
    pub fn backward(&self, root: Var, seed: &Tensor4) -> Result<Gradients> {
        expect_same_shape(self.shape(root), seed.shape())?;
        let mut grads: Vec<Option<Tensor4>> = vec![None; root.0 + 1];
        let mut leaf_grads: Vec<Option<Tensor4>> = vec![None; root.0 + 1];
        if self.nodes[root.0].needs_grad {
            grads[root.0] = Some(seed.clone());
        }

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    leaf_grads[idx] = Some(g);
                }
                Op::Constant => {}
                Op::Identity(a) => self.accumulate(&mut grads, *a, g)?,
                Op::Add(a, b) => {
                    if self.nodes[b.0].needs_grad {
                        self.accumulate(&mut grads, *b, g.clone())?;
                    }
                    self.accumulate(&mut grads, *a, g)?;
                }
                Op::MulScalar(a, k) => self.accumulate(&mut grads, *a, g.map(|x| x * k))?,
                Op::Relu(a) => {
                    let mut out = g;
                    for (gv, &x) in out.data_mut().iter_mut().zip(self.value(*a).data()) {
                        if x <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                    self.accumulate(&mut grads, *a, out)?;
                }
                Op::Conv { input, kernels, bias, geom } => {
                    let want = [
                        self.nodes[input.0].needs_grad,
                        self.nodes[kernels.0].needs_grad,
                        self.nodes[bias.0].needs_grad,
                    ];
                    let cg = conv::backward(
                        self.value(*input),
                        self.value(*kernels),
                        &node.value,
                        &g,
                        *geom,
                        want,
                    );
                    if let Some(t) = cg.input {
                        self.accumulate(&mut grads, *input, t)?;
                    }
                    if let Some(t) = cg.kernels {
                        self.accumulate(&mut grads, *kernels, t)?;
                    }
                    if let Some(t) = cg.bias {
                        self.accumulate(&mut grads, *bias, t)?;
                    }
                }
                Op::Upsample(a, factor) => {
                    let t = upsample::backward(&g, self.shape(*a), *factor);
                    self.accumulate(&mut grads, *a, t)?;
                }
                Op::Concat(parts) => {
                    let s = g.shape();
                    let mut offset = 0;
                    for &p in parts {
                        let ps = self.shape(p);
                        if self.nodes[p.0].needs_grad {
                            let len = ps.c * ps.plane();
                            let mut data = Vec::with_capacity(ps.numel());
                            for n in 0..s.n {
                                data.extend_from_slice(&g.item(n)[offset * s.plane()..][..len]);
                            }
                            self.accumulate(&mut grads, p, Tensor4::from_vec(ps, data)?)?;
                        }
                        offset += ps.c;
                    }
                }
                Op::Epe { pred, target, mask, count } => {
                    let scale = g.data()[0] as f64 / *count as f64;
                    let p = self.value(*pred);
                    let s = p.shape();
                    let plane = s.plane();
                    let mut out = Tensor4::zeros(s);
                    for n in 0..s.n {
                        for i in 0..plane {
                            if mask.as_ref().is_some_and(|m| !m[n * plane + i]) {
                                continue;
                            }
                            let du = (p.plane(n, 0)[i] - target.plane(n, 0)[i]) as f64;
                            let dv = (p.plane(n, 1)[i] - target.plane(n, 1)[i]) as f64;
                            let r = (du * du + dv * dv + EPE_EPS * EPE_EPS).sqrt();
                            out.plane_mut(n, 0)[i] = (scale * du / r) as f32;
                            out.plane_mut(n, 1)[i] = (scale * dv / r) as f32;
                        }
                    }
                    self.accumulate(&mut grads, *pred, out)?;
                }
                Op::Opaque(name, _) => return Err(Error::NoBackward(name)),
            }
        }
        Ok(Gradients { grads: leaf_grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor4>], target: Var, g: Tensor4) -> Result<()> {
        if !self.nodes[target.0].needs_grad {
            return Ok(());
        }
        match &mut grads[target.0] {
            Some(existing) => existing.add_assign(&g)?,
            slot @ None => *slot = Some(g),
        }
        Ok(())
    }
}
