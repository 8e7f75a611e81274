#![allow(dead_code)]

use ddcnet::graph::{Graph, Var};
use ddcnet::{Shape4, Tensor4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: Shape4, scale: f32) -> Tensor4 {
    Tensor4::from_fn(shape, |_, _, _, _| rng.gen_range(-scale..scale))
}

/// Largest gradient discrepancy, relative to the largest gradient magnitude.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    /// Entries whose central difference crossed a ReLU kink and were not compared.
    pub skipped: usize,
    pub compared: usize,
}

/// Compares reverse-mode gradients of `sum(r * f(inputs))` against central
/// differences with step `h`, `r` being a fixed random projection. Entries
/// whose perturbation flips any ReLU unit are counted in `skipped`.
pub fn check_gradients(
    inputs: &[Tensor4],
    h: f32,
    seed: u64,
    f: impl Fn(&mut Graph, &[Var]) -> Var,
) -> GradCheck {
    let eval = |xs: &[Tensor4]| -> (Graph, Vec<Var>, Var) {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.leaf(x.clone())).collect();
        let y = f(&mut g, &vars);
        (g, vars, y)
    };
    let (g, vars, y) = eval(inputs);
    let mut r = rng(seed);
    let proj = random_tensor(&mut r, g.shape(y), 1.0);
    let project = |t: &Tensor4| -> f64 {
        t.data().iter().zip(proj.data()).map(|(&a, &b)| a as f64 * b as f64).sum()
    };
    let grads = g.backward(y, &proj).expect("backward");

    let mut max_abs_err = 0.0f64;
    let mut max_grad = 0.0f64;
    let (mut skipped, mut compared) = (0, 0);
    let base_pattern = g.activation_pattern();
    for (k, x) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[k]).cloned().unwrap_or_else(|| Tensor4::zeros(x.shape()));
        for i in 0..x.data().len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= h;
            let (gp, _, yp) = eval(&plus);
            let (gm, _, ym) = eval(&minus);
            if gp.activation_pattern() != base_pattern || gm.activation_pattern() != base_pattern {
                skipped += 1;
                continue;
            }
            compared += 1;
            let numeric = (project(gp.value(yp)) - project(gm.value(ym))) / (2.0 * h as f64);
            let a = analytic.data()[i] as f64;
            max_abs_err = max_abs_err.max((a - numeric).abs());
            max_grad = max_grad.max(a.abs()).max(numeric.abs());
        }
    }
    GradCheck {
        max_abs_err,
        max_rel_err: if max_grad > 0.0 { max_abs_err / max_grad } else { 0.0 },
        skipped,
        compared,
    }
}

/// Straightforward 3x3 dilated, strided convolution with zero padding,
/// accumulated in f64.
pub fn direct_conv(input: &Tensor4, kernels: &Tensor4, bias: &[f32], dilation: usize, stride: usize) -> Tensor4 {
    let s = input.shape();
    let o = kernels.shape().n;
    let (oh, ow) = (s.h.div_ceil(stride), s.w.div_ceil(stride));
    let mut out = Tensor4::zeros(Shape4::new(s.n, o, oh, ow));
    for n in 0..s.n {
        for oc in 0..o {
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = bias[oc] as f64;
                    for ic in 0..s.c {
                        for i in 0..3 {
                            for j in 0..3 {
                                let iy = (y * stride) as isize + (i as isize - 1) * dilation as isize;
                                let ix = (x * stride) as isize + (j as isize - 1) * dilation as isize;
                                if iy < 0 || ix < 0 || iy >= s.h as isize || ix >= s.w as isize {
                                    continue;
                                }
                                acc += kernels.at(oc, ic, i, j) as f64
                                    * input.at(n, ic, iy as usize, ix as usize) as f64;
                            }
                        }
                    }
                    out.set(n, oc, y, x, acc as f32);
                }
            }
        }
    }
    out
}

