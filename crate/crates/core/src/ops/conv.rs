//! 3x3 dilated, strided convolution via im2col and SGEMM.
//!
//! Tap `(i, j)` of output `(y, x)` reads input `(y*s + (i-1)*d, x*s + (j-1)*d)`;
//! reads outside the input are zero.

use crate::tensor::{Shape4, Tensor4};

pub const KSIZE: usize = 3;
pub const TAPS: usize = KSIZE * KSIZE;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub dilation: usize,
    pub stride: usize,
    pub relu: bool,
}

impl ConvGeometry {
    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (h.div_ceil(self.stride), w.div_ceil(self.stride))
    }
}

/// Range of output coordinates whose tap at `offset` lands inside `[0, len)`.
#[inline]
fn valid_range(offset: isize, stride: usize, len: usize, out_len: usize) -> (usize, usize) {
    let s = stride as isize;
    // smallest o with o*s + offset >= 0
    let lo = if offset >= 0 { 0 } else { (-offset + s - 1) / s };
    // largest o with o*s + offset <= len - 1, exclusive bound
    let last = len as isize - 1 - offset;
    let hi = if last < 0 { 0 } else { last / s + 1 };
    let lo = (lo as usize).min(out_len);
    let hi = (hi as usize).min(out_len).max(lo);
    (lo, hi)
}

/// Fills `cols` (rows = c*9 + tap, cols = output pixel) from one batch item.
fn im2col(item: &[f32], c: usize, h: usize, w: usize, g: ConvGeometry, cols: &mut [f32]) {
    let (ho, wo) = g.output_hw(h, w);
    let p = ho * wo;
    let d = g.dilation as isize;
    for ch in 0..c {
        let plane = &item[ch * h * w..(ch + 1) * h * w];
        for ki in 0..KSIZE {
            let oy_off = (ki as isize - 1) * d;
            let (ylo, yhi) = valid_range(oy_off, g.stride, h, ho);
            for kj in 0..KSIZE {
                let ox_off = (kj as isize - 1) * d;
                let (xlo, xhi) = valid_range(ox_off, g.stride, w, wo);
                let row = &mut cols[(ch * TAPS + ki * KSIZE + kj) * p..][..p];
                row.fill(0.0);
                if xlo == xhi {
                    continue;
                }
                for oy in ylo..yhi {
                    let iy = (oy * g.stride) as isize + oy_off;
                    let src = &plane[iy as usize * w..][..w];
                    let dst = &mut row[oy * wo..][..wo];
                    if g.stride == 1 {
                        let x0 = (xlo as isize + ox_off) as usize;
                        dst[xlo..xhi].copy_from_slice(&src[x0..x0 + (xhi - xlo)]);
                    } else {
                        for ox in xlo..xhi {
                            dst[ox] = src[((ox * g.stride) as isize + ox_off) as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds `cols` back into `item`.
fn col2im(cols: &[f32], c: usize, h: usize, w: usize, g: ConvGeometry, item: &mut [f32]) {
    let (ho, wo) = g.output_hw(h, w);
    let p = ho * wo;
    let d = g.dilation as isize;
    for ch in 0..c {
        let plane = &mut item[ch * h * w..(ch + 1) * h * w];
        for ki in 0..KSIZE {
            let oy_off = (ki as isize - 1) * d;
            let (ylo, yhi) = valid_range(oy_off, g.stride, h, ho);
            for kj in 0..KSIZE {
                let ox_off = (kj as isize - 1) * d;
                let (xlo, xhi) = valid_range(ox_off, g.stride, w, wo);
                let row = &cols[(ch * TAPS + ki * KSIZE + kj) * p..][..p];
                if xlo == xhi {
                    continue;
                }
                for oy in ylo..yhi {
                    let iy = (oy * g.stride) as isize + oy_off;
                    let dst = &mut plane[iy as usize * w..][..w];
                    let src = &row[oy * wo..][..wo];
                    if g.stride == 1 {
                        let x0 = (xlo as isize + ox_off) as usize;
                        for (a, b) in dst[x0..x0 + (xhi - xlo)].iter_mut().zip(&src[xlo..xhi]) {
                            *a += b;
                        }
                    } else {
                        for ox in xlo..xhi {
                            dst[((ox * g.stride) as isize + ox_off) as usize] += src[ox];
                        }
                    }
                }
            }
        }
    }
}

/// Row-major `c[m x n] = alpha * a[m x k] * b[k x n] + beta * c` with explicit strides.
#[allow(clippy::too_many_arguments)]
#[inline]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    beta: f32,
    c: &mut [f32],
) {
    debug_assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    debug_assert!(c.len() >= m * n);
    // SAFETY: the asserts above bound every strided access inside the slices,
    // and `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn forward(input: &Tensor4, kernels: &Tensor4, bias: &[f32], g: ConvGeometry) -> Tensor4 {
    let s = input.shape();
    let out_c = kernels.shape().n;
    let k = s.c * TAPS;
    let (ho, wo) = g.output_hw(s.h, s.w);
    let p = ho * wo;
    let mut out = Tensor4::zeros(Shape4::new(s.n, out_c, ho, wo));
    let mut cols = vec![0.0f32; k * p];
    for n in 0..s.n {
        im2col(input.item(n), s.c, s.h, s.w, g, &mut cols);
        let dst = out.item_mut(n);
        for (o, row) in dst.chunks_exact_mut(p).enumerate() {
            row.fill(bias[o]);
        }
        gemm(out_c, k, p, kernels.data(), (k, 1), &cols, (p, 1), 1.0, dst);
        if g.relu {
            // NaN passes through so divergence reaches the loss check
            for v in dst.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
    }
    out
}

pub struct ConvGrads {
    pub input: Option<Tensor4>,
    pub kernels: Option<Tensor4>,
    pub bias: Option<Tensor4>,
}

/// Gradients of a conv node given its recorded output (used for the ReLU mask).
pub fn backward(
    input: &Tensor4,
    kernels: &Tensor4,
    output: &Tensor4,
    grad_out: &Tensor4,
    g: ConvGeometry,
    want: [bool; 3],
) -> ConvGrads {
    let s = input.shape();
    let ks = kernels.shape();
    let out_c = ks.n;
    let k = s.c * TAPS;
    let os = output.shape();
    let p = os.h * os.w;

    let mut gin = want[0].then(|| Tensor4::zeros(s));
    let mut gk = want[1].then(|| Tensor4::zeros(ks));
    let mut gb = want[2].then(|| vec![0.0f64; out_c]);

    let mut cols = vec![0.0f32; k * p];
    let mut masked = vec![0.0f32; out_c * p];
    for n in 0..s.n {
        let go = grad_out.item(n);
        if g.relu {
            for ((m, &gv), &ov) in masked.iter_mut().zip(go).zip(output.item(n)) {
                *m = if ov > 0.0 { gv } else { 0.0 };
            }
        } else {
            masked.copy_from_slice(go);
        }
        if let Some(gb) = gb.as_mut() {
            for (o, row) in masked.chunks_exact(p).enumerate() {
                gb[o] += row.iter().map(|&v| v as f64).sum::<f64>();
            }
        }
        if let Some(gk) = gk.as_mut() {
            im2col(input.item(n), s.c, s.h, s.w, g, &mut cols);
            // dK[o, r] += sum_p G[o, p] * cols[r, p]
            gemm(out_c, p, k, &masked, (p, 1), &cols, (1, p), 1.0, gk.data_mut());
        }
        if let Some(gin) = gin.as_mut() {
            // dcols[r, p] = sum_o K[o, r] * G[o, p]
            gemm(k, out_c, p, kernels.data(), (1, k), &masked, (p, 1), 0.0, &mut cols);
            col2im(&cols, s.c, s.h, s.w, g, gin.item_mut(n));
        }
    }
    ConvGrads {
        input: gin,
        kernels: gk,
        bias: gb.map(|b| {
            Tensor4::from_vec(
                Shape4::new(1, out_c, 1, 1),
                b.into_iter().map(|v| v as f32).collect(),
            )
            .expect("bias shape")
        }),
    }
}
