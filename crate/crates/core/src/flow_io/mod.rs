//! Flow fields, RGB frames, the `.flo` format, PNG helpers, the synthetic
//! layered-affine dataset generator, and the on-disk dataset layout.

mod dataset;
mod flo;
mod synth;

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor4};

pub use dataset::{read_dataset, read_sample, write_dataset, DatasetManifest, SampleFiles};
pub use flo::{read_flo, write_flo, FLO_MAGIC, UNKNOWN_FLOW_THRESHOLD};
pub use synth::{
    generate_sample, random_scene, render_scene, Affine, GenConfig, Layer, LayerShape, SamplePair, Scene, Texture,
};

/// Per-pixel `(u, v)` displacements in pixels, row-major and interleaved.
/// `mask[i] == false` marks pixel `i` as unknown/occluded.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub h: usize,
    pub w: usize,
    uv: Vec<f32>,
    pub mask: Option<Vec<bool>>,
}

impl FlowField {
    pub fn zeros(h: usize, w: usize) -> Self {
        Self::uniform(h, w, 0.0, 0.0)
    }

    pub fn uniform(h: usize, w: usize, u: f32, v: f32) -> Self {
        let mut uv = Vec::with_capacity(2 * h * w);
        for _ in 0..h * w {
            uv.push(u);
            uv.push(v);
        }
        Self { h, w, uv, mask: None }
    }

    pub fn from_interleaved(h: usize, w: usize, uv: Vec<f32>) -> Result<Self> {
        if uv.len() != 2 * h * w {
            return Err(Error::Shape(format!(
                "{} flow values for a {h}x{w} field",
                uv.len()
            )));
        }
        Ok(Self { h, w, uv, mask: None })
    }

    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> (f32, f32)) -> Self {
        let mut uv = Vec::with_capacity(2 * h * w);
        for y in 0..h {
            for x in 0..w {
                let (u, v) = f(y, x);
                uv.push(u);
                uv.push(v);
            }
        }
        Self { h, w, uv, mask: None }
    }

    pub fn uv(&self) -> &[f32] {
        &self.uv
    }

    pub fn len(&self) -> usize {
        self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> (f32, f32) {
        let i = 2 * (y * self.w + x);
        (self.uv[i], self.uv[i + 1])
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, u: f32, v: f32) {
        let i = 2 * (y * self.w + x);
        self.uv[i] = u;
        self.uv[i + 1] = v;
    }

    pub fn is_valid(&self, i: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[i])
    }

    pub fn valid_count(&self) -> usize {
        self.mask
            .as_ref()
            .map_or(self.len(), |m| m.iter().filter(|&&v| v).count())
    }

    /// `(1, 2, h, w)` tensor with u in channel 0 and v in channel 1.
    pub fn to_tensor(&self) -> Tensor4 {
        Tensor4::from_fn(Shape4::new(1, 2, self.h, self.w), |_, c, y, x| {
            self.uv[2 * (y * self.w + x) + c]
        })
    }

    /// Reads batch item `n` of a `(N, 2, h, w)` tensor.
    pub fn from_tensor(t: &Tensor4, n: usize) -> Result<Self> {
        let s = t.shape();
        if s.c != 2 || n >= s.n {
            return Err(Error::Shape(format!("cannot read flow item {n} from {s}")));
        }
        let (u, v) = (t.plane(n, 0), t.plane(n, 1));
        let uv = u.iter().zip(v).flat_map(|(&a, &b)| [a, b]).collect();
        Self::from_interleaved(s.h, s.w, uv)
    }

    /// Top-left `h x w` window.
    pub fn crop(&self, h: usize, w: usize) -> Result<Self> {
        if h > self.h || w > self.w {
            return Err(Error::Shape(format!("cannot crop {}x{} to {h}x{w}", self.h, self.w)));
        }
        let mut out = Self::from_fn(h, w, |y, x| self.get(y, x));
        out.mask = self
            .mask
            .as_ref()
            .map(|m| (0..h).flat_map(|y| (0..w).map(move |x| (y, x))).map(|(y, x)| m[y * self.w + x]).collect());
        Ok(out)
    }

    pub fn max_magnitude(&self) -> f32 {
        self.uv
            .chunks_exact(2)
            .enumerate()
            .filter(|(i, _)| self.is_valid(*i))
            .map(|(_, p)| p[0].hypot(p[1]))
            .fold(0.0, f32::max)
    }
}

/// RGB frame with channel-planar `f32` samples in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub h: usize,
    pub w: usize,
    data: Vec<f32>,
}

impl RgbImage {
    pub fn new(h: usize, w: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != 3 * h * w {
            return Err(Error::Shape(format!("{} samples for a {h}x{w} RGB image", data.len())));
        }
        Ok(Self { h, w, data })
    }

    pub fn filled(h: usize, w: usize, value: f32) -> Self {
        Self { h, w, data: vec![value; 3 * h * w] }
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        &self.data[c * self.h * self.w..(c + 1) * self.h * self.w]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.h + y) * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.h + y) * self.w + x] = v;
    }

    pub fn to_tensor(&self) -> Tensor4 {
        Tensor4::from_vec(Shape4::new(1, 3, self.h, self.w), self.data.clone())
            .expect("image dimensions are non-zero")
    }

    pub fn from_tensor(t: &Tensor4, n: usize) -> Result<Self> {
        let s = t.shape();
        if s.c != 3 || n >= s.n {
            return Err(Error::Shape(format!("cannot read RGB item {n} from {s}")));
        }
        Self::new(s.h, s.w, t.item(n).to_vec())
    }

    /// Grows the image to `h x w` by mirroring across the bottom and right
    /// edges (edge pixels are not repeated).
    pub fn pad_reflect(&self, h: usize, w: usize) -> Result<Self> {
        if h < self.h || w < self.w || (h > self.h && self.h < 2) || (w > self.w && self.w < 2) {
            return Err(Error::Shape(format!("cannot reflect-pad {}x{} to {h}x{w}", self.h, self.w)));
        }
        let mirror = |i: usize, n: usize| -> usize {
            let period = 2 * (n - 1);
            let m = i % period.max(1);
            if m < n { m } else { period - m }
        };
        let mut out = Self::filled(h, w, 0.0);
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    out.set(c, y, x, self.get(c, mirror(y, self.h), mirror(x, self.w)));
                }
            }
        }
        Ok(out)
    }

    /// Loads an 8-bit image and maps samples to `[0, 1]` by `/255`.
    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path)?.to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut data = vec![0.0; 3 * h * w];
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                data[(c * h + y as usize) * w + x as usize] = px[c] as f32 / 255.0;
            }
        }
        Self::new(h, w, data)
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        image::RgbImage::from_fn(self.w as u32, self.h as u32, |x, y| {
            let px = |c| to_u8(self.get(c, y as usize, x as usize));
            image::Rgb([px(0), px(1), px(2)])
        })
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_rgb8().save(path)?;
        Ok(())
    }
}

impl SamplePair {
    /// Mean absolute difference between `frame1(x)` and `frame2(x + gt(x))`
    /// (bilinear) over valid pixels whose target lies inside the frame.
    pub fn warp_residual(&self) -> Result<f64> {
        let (h, w) = (self.gt.h, self.gt.w);
        let mut total = 0.0f64;
        let mut n = 0usize;
        for y in 0..h {
            for x in 0..w {
                if !self.gt.is_valid(y * w + x) {
                    continue;
                }
                let (u, v) = self.gt.get(y, x);
                let (tx, ty) = (x as f32 + u, y as f32 + v);
                if !(tx >= 0.0 && ty >= 0.0 && tx <= (w - 1) as f32 && ty <= (h - 1) as f32) {
                    continue;
                }
                let (x0, y0) = (tx.floor() as usize, ty.floor() as usize);
                let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
                let (fx, fy) = (tx - x0 as f32, ty - y0 as f32);
                for c in 0..3 {
                    let f2 = &self.frame2;
                    let top = f2.get(c, y0, x0) * (1.0 - fx) + f2.get(c, y0, x1) * fx;
                    let bot = f2.get(c, y1, x0) * (1.0 - fx) + f2.get(c, y1, x1) * fx;
                    let warped = top * (1.0 - fy) + bot * fy;
                    total += (self.frame1.get(c, y, x) - warped).abs() as f64;
                }
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::Input("no valid in-frame pixels to compare".into()));
        }
        Ok(total / (3 * n) as f64)
    }
}

/// Rounds a `[0, 1]` value to 8 bits, clamping out-of-range input.
pub fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// 2-D histogram of `(u, v)` vectors over `[-range, range]^2`, indexed
/// `[v_bin][u_bin]`. Out-of-range vectors land in the edge bins and invalid
/// pixels are skipped, so the total equals the number of valid pixels. With
/// an odd `bins`, zero motion falls in the centre bin.
pub fn flow_histogram2d(flows: &[FlowField], range: f32, bins: usize) -> Result<Vec<Vec<u64>>> {
    if bins == 0 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    if !(range > 0.0) {
        return Err(Error::Config(format!("histogram range must be positive, got {range}")));
    }
    let mut grid = vec![vec![0u64; bins]; bins];
    let bin = |v: f32| -> usize {
        let t = ((v + range) / (2.0 * range) * bins as f32).floor();
        (t.max(0.0) as usize).min(bins - 1)
    };
    for f in flows {
        for (i, p) in f.uv.chunks_exact(2).enumerate() {
            if f.is_valid(i) {
                grid[bin(p[1])][bin(p[0])] += 1;
            }
        }
    }
    Ok(grid)
}
