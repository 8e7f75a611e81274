//! Train-time augmentation: a random similarity warp applied to both frames
//! and, as a vector field, to the ground-truth flow; then photometric noise,
//! contrast, saturation and brightness perturbations of the frames only.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow_io::{FlowField, RgbImage, SamplePair};

/// Sampling ranges, each `[lo, hi]` and drawn uniformly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub rot_deg: (f32, f32),
    pub scale: (f32, f32),
    pub noise_std: (f32, f32),
    pub contrast: (f32, f32),
    pub saturation: (f32, f32),
    pub brightness: (f32, f32),
    pub rng_seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rot_deg: (-30.0, 30.0),
            scale: (0.5, 1.0),
            noise_std: (0.01, 0.08),
            contrast: (0.1, 5.0),
            saturation: (0.1, 4.0),
            brightness: (-0.3, 0.3),
            rng_seed: 0,
        }
    }
}

impl AugmentConfig {
    /// Every range collapsed to its neutral value.
    pub fn neutral() -> Self {
        Self {
            rot_deg: (0.0, 0.0),
            scale: (1.0, 1.0),
            noise_std: (0.0, 0.0),
            contrast: (1.0, 1.0),
            saturation: (1.0, 1.0),
            brightness: (0.0, 0.0),
            rng_seed: 0,
        }
    }

    pub fn draw(&self, rng: &mut impl Rng) -> AugmentParams {
        let mut pick = |(lo, hi): (f32, f32)| if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        AugmentParams {
            rot_deg: pick(self.rot_deg),
            scale: pick(self.scale),
            noise_std: pick(self.noise_std),
            contrast: pick(self.contrast),
            saturation: pick(self.saturation),
            brightness: pick(self.brightness),
        }
    }
}

/// One concrete draw from an [`AugmentConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub rot_deg: f32,
    pub scale: f32,
    pub noise_std: f32,
    pub contrast: f32,
    pub saturation: f32,
    pub brightness: f32,
}

impl AugmentParams {
    pub fn identity() -> Self {
        Self {
            rot_deg: 0.0,
            scale: 1.0,
            noise_std: 0.0,
            contrast: 1.0,
            saturation: 1.0,
            brightness: 0.0,
        }
    }
}

/// Mirror-reflects `v` into `[0, len - 1]`.
fn reflect(v: f64, len: usize) -> f64 {
    let max = (len - 1) as f64;
    if max == 0.0 {
        return 0.0;
    }
    let period = 2.0 * max;
    let m = v.rem_euclid(period);
    if m > max {
        period - m
    } else {
        m
    }
}

/// Bilinear taps `(y0, x0, y1, x1, wy, wx)` at a reflected position.
fn taps(x: f64, y: f64, h: usize, w: usize) -> (usize, usize, usize, usize, f32, f32) {
    let (x, y) = (reflect(x, w), reflect(y, h));
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    (y0, x0, y1, x1, (y - y0 as f64) as f32, (x - x0 as f64) as f32)
}

fn lerp2(at: impl Fn(usize, usize) -> f32, t: (usize, usize, usize, usize, f32, f32)) -> f32 {
    let (y0, x0, y1, x1, wy, wx) = t;
    let top = at(y0, x0) + (at(y0, x1) - at(y0, x0)) * wx;
    let bot = at(y1, x0) + (at(y1, x1) - at(y1, x0)) * wx;
    top + (bot - top) * wy
}

/// Similarity warp `S = scale(sigma) * rot(theta)` about the frame centre
/// without range checks. Output pixel `y` reads the input at `S^-1(y)`;
/// flow is transported as `sigma * R * gt(S^-1(y))`. Pixels that read
/// outside the frame, or touch an invalid ground-truth pixel, become invalid.
pub fn warp_similarity(s: &SamplePair, theta_deg: f32, sigma: f32) -> SamplePair {
    let (h, w) = (s.gt.h, s.gt.w);
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let th = (theta_deg as f64).to_radians();
    let (sn, cs) = th.sin_cos();
    let sg = sigma as f64;

    let mut f1 = RgbImage::filled(h, w, 0.0);
    let mut f2 = RgbImage::filled(h, w, 0.0);
    let mut gt = FlowField::zeros(h, w);
    let mut mask = vec![true; h * w];
    let (rc, rs) = (cs as f32, sn as f32);

    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            // R^-1 = R^T
            let sx = cx + (cs * dx + sn * dy) / sg;
            let sy = cy + (-sn * dx + cs * dy) / sg;
            let t = taps(sx, sy, h, w);
            for c in 0..3 {
                f1.set(c, y, x, lerp2(|yy, xx| s.frame1.get(c, yy, xx), t));
                f2.set(c, y, x, lerp2(|yy, xx| s.frame2.get(c, yy, xx), t));
            }
            let u = lerp2(|yy, xx| s.gt.get(yy, xx).0, t);
            let v = lerp2(|yy, xx| s.gt.get(yy, xx).1, t);
            gt.set(y, x, sigma * (rc * u - rs * v), sigma * (rs * u + rc * v));

            let eps = 1e-9;
            let inside = sx >= -eps && sx <= (w - 1) as f64 + eps && sy >= -eps && sy <= (h - 1) as f64 + eps;
            let (y0, x0, y1, x1, wy, wx) = t;
            let tap_valid = |yy: usize, xx: usize, weight: f32| weight == 0.0 || s.gt.is_valid(yy * w + xx);
            mask[y * w + x] = inside
                && tap_valid(y0, x0, (1.0 - wy) * (1.0 - wx))
                && tap_valid(y0, x1, (1.0 - wy) * wx)
                && tap_valid(y1, x0, wy * (1.0 - wx))
                && tap_valid(y1, x1, wy * wx);
        }
    }
    gt.mask = Some(mask);
    SamplePair { frame1: f1, frame2: f2, gt, meta: s.meta.clone() }
}

/// [`warp_similarity`] restricted to the training ranges
/// `theta in [-30, 30]` degrees and `sigma in [0.5, 1]`.
pub fn geometric_augment(s: &SamplePair, theta_deg: f32, sigma: f32) -> Result<SamplePair> {
    if !(-30.0..=30.0).contains(&theta_deg) {
        return Err(Error::Config(format!("rotation {theta_deg} outside [-30, 30]")));
    }
    if !(0.5..=1.0).contains(&sigma) {
        return Err(Error::Config(format!("scale {sigma} outside [0.5, 1]")));
    }
    Ok(warp_similarity(s, theta_deg, sigma))
}

pub fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    (h / 6.0, s, max)
}

pub fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let sector = (h6.floor() as i32).rem_euclid(6);
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

fn photometric_one(img: &RgbImage, p: &AugmentParams, rng: &mut impl Rng) -> RgbImage {
    let mut out = img.clone();
    let n = out.h * out.w;
    let data = out.data_mut();
    if p.noise_std > 0.0 {
        let normal = Normal::new(0.0f32, p.noise_std).expect("finite std");
        for v in data.iter_mut() {
            *v += normal.sample(rng);
        }
    }
    if p.contrast != 1.0 {
        let mean = (data.iter().map(|&v| v as f64).sum::<f64>() / data.len() as f64) as f32;
        for v in data.iter_mut() {
            *v = (*v - mean) * p.contrast + mean;
        }
    }
    if p.saturation != 1.0 {
        for i in 0..n {
            let (h, s, v) = rgb_to_hsv(data[i], data[n + i], data[2 * n + i]);
            let (r, g, b) = hsv_to_rgb(h, (s * p.saturation).clamp(0.0, 1.0), v);
            data[i] = r;
            data[n + i] = g;
            data[2 * n + i] = b;
        }
    }
    for v in data.iter_mut() {
        *v = (*v + p.brightness).clamp(0.0, 1.0);
    }
    out
}

/// Noise, contrast about the per-image mean, HSV saturation scaling,
/// brightness offset, then a final clamp to `[0, 1]`. The same draw applies
/// to both frames; noise samples are independent per pixel.
pub fn photometric_augment(
    frames: (&RgbImage, &RgbImage),
    p: &AugmentParams,
    rng: &mut impl Rng,
) -> (RgbImage, RgbImage) {
    let a = photometric_one(frames.0, p, rng);
    let b = photometric_one(frames.1, p, rng);
    (a, b)
}

/// Full pipeline for one sample with a per-sample seed.
pub fn augment_sample(s: &SamplePair, cfg: &AugmentConfig, seed: u64) -> Result<SamplePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = cfg.draw(&mut rng);
    let mut out = warp_similarity(s, p.rot_deg, p.scale);
    let (f1, f2) = photometric_augment((&out.frame1, &out.frame2), &p, &mut rng);
    out.frame1 = f1;
    out.frame2 = f2;
    Ok(out)
}
