//! Bilinear upsampling with half-pixel centers (corners not aligned).

use crate::tensor::{Shape4, Tensor4};

/// Per-output-coordinate source taps along one axis: `(i0, i1, w1)`.
fn axis_taps(len: usize, factor: usize) -> Vec<(usize, usize, f32)> {
    (0..len * factor)
        .map(|o| {
            let src = ((o as f32 + 0.5) / factor as f32 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(len - 1);
            let i1 = (i0 + 1).min(len - 1);
            let w1 = src - i0 as f32;
            (i0, i1, w1)
        })
        .collect()
}

pub fn forward(input: &Tensor4, factor: usize) -> Tensor4 {
    let s = input.shape();
    let (oh, ow) = (s.h * factor, s.w * factor);
    let ys = axis_taps(s.h, factor);
    let xs = axis_taps(s.w, factor);
    let mut out = Tensor4::zeros(Shape4::new(s.n, s.c, oh, ow));
    for n in 0..s.n {
        for c in 0..s.c {
            let src = input.plane(n, c);
            let dst = out.plane_mut(n, c);
            for (oy, &(y0, y1, wy)) in ys.iter().enumerate() {
                let r0 = &src[y0 * s.w..][..s.w];
                let r1 = &src[y1 * s.w..][..s.w];
                for (ox, &(x0, x1, wx)) in xs.iter().enumerate() {
                    let top = r0[x0] + (r0[x1] - r0[x0]) * wx;
                    let bot = r1[x0] + (r1[x1] - r1[x0]) * wx;
                    dst[oy * ow + ox] = top + (bot - top) * wy;
                }
            }
        }
    }
    out
}

/// Transpose of [`forward`] for an input of shape `input_shape`.
pub fn backward(grad_out: &Tensor4, input_shape: Shape4, factor: usize) -> Tensor4 {
    let s = input_shape;
    let ow = s.w * factor;
    let ys = axis_taps(s.h, factor);
    let xs = axis_taps(s.w, factor);
    let mut gin = Tensor4::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let g = grad_out.plane(n, c);
            let dst = gin.plane_mut(n, c);
            for (oy, &(y0, y1, wy)) in ys.iter().enumerate() {
                for (ox, &(x0, x1, wx)) in xs.iter().enumerate() {
                    let v = g[oy * ow + ox];
                    let top = v * (1.0 - wy);
                    let bot = v * wy;
                    dst[y0 * s.w + x0] += top * (1.0 - wx);
                    dst[y0 * s.w + x1] += top * wx;
                    dst[y1 * s.w + x0] += bot * (1.0 - wx);
                    dst[y1 * s.w + x1] += bot * wx;
                }
            }
        }
    }
    gin
}
