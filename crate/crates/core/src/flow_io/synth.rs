//! Layered random-affine scene generator.
//!
//! A scene is a textured background plus convex textured sprites stacked on
//! top. Frame 1 shows every layer at rest; frame 2 shows each layer moved by
//! its own affine map. Ground truth at a frame-1 pixel is the displacement
//! of the topmost layer covering it. Pixels whose destination leaves the
//! frame or is covered by a higher layer in frame 2 are marked invalid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{FlowField, RgbImage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    /// Square frame side in pixels; must be a multiple of 4.
    pub size: usize,
    pub n_sprites: usize,
    /// Per-axis translation bound in pixels.
    pub max_disp: f32,
    #[serde(default = "default_rot")]
    pub max_rot_deg: f32,
    #[serde(default = "default_scale_jitter")]
    pub scale_jitter: f32,
    /// Sprite radius range; defaults to `[size / 10, size / 4]`.
    #[serde(default)]
    pub sprite_radius: Option<(f32, f32)>,
}

fn default_rot() -> f32 {
    10.0
}

fn default_scale_jitter() -> f32 {
    0.05
}

impl GenConfig {
    pub fn new(size: usize, n_sprites: usize, max_disp: f32) -> Self {
        Self {
            size,
            n_sprites,
            max_disp,
            max_rot_deg: default_rot(),
            scale_jitter: default_scale_jitter(),
            sprite_radius: None,
        }
    }

    /// Config whose every draw is the identity transform.
    pub fn identity(size: usize, n_sprites: usize) -> Self {
        Self {
            max_rot_deg: 0.0,
            scale_jitter: 0.0,
            ..Self::new(size, n_sprites, 0.0)
        }
    }

    pub fn radius_range(&self) -> (f32, f32) {
        self.sprite_radius
            .unwrap_or((self.size as f32 / 10.0, self.size as f32 / 4.0))
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < 8 || self.size % 4 != 0 {
            return Err(Error::Config(format!("size {} must be a multiple of 4 and >= 8", self.size)));
        }
        if !(self.max_disp >= 0.0 && self.max_disp < self.size as f32 / 2.0) {
            return Err(Error::Config(format!(
                "max_disp {} must lie in [0, size/2)",
                self.max_disp
            )));
        }
        if !(0.0..=45.0).contains(&self.max_rot_deg) || !(0.0..0.5).contains(&self.scale_jitter) {
            return Err(Error::Config("rotation or scale jitter out of range".into()));
        }
        let (lo, hi) = self.radius_range();
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::Config(format!("bad sprite radius range ({lo}, {hi})")));
        }
        if 2.0 * hi > self.size as f32 {
            return Err(Error::Config(format!(
                "sprite diameter {} exceeds frame size {}",
                2.0 * hi,
                self.size
            )));
        }
        Ok(())
    }
}

/// `A(p) = c + t + scale * R(rot) * (p - c)` in pixel coordinates
/// (x right, y down).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub tx: f32,
    pub ty: f32,
    pub rot_deg: f32,
    pub scale: f32,
    pub cx: f32,
    pub cy: f32,
}

impl Affine {
    pub fn identity() -> Self {
        Self::translation(0.0, 0.0)
    }

    pub fn translation(tx: f32, ty: f32) -> Self {
        Self { tx, ty, rot_deg: 0.0, scale: 1.0, cx: 0.0, cy: 0.0 }
    }

    fn cos_sin(&self) -> (f64, f64) {
        let r = (self.rot_deg as f64).to_radians();
        (r.cos(), r.sin())
    }

    pub fn apply(&self, x: f32, y: f32) -> (f32, f32) {
        let (c, s) = self.cos_sin();
        let k = self.scale as f64;
        let (dx, dy) = (x as f64 - self.cx as f64, y as f64 - self.cy as f64);
        (
            (self.cx as f64 + self.tx as f64 + k * (c * dx - s * dy)) as f32,
            (self.cy as f64 + self.ty as f64 + k * (s * dx + c * dy)) as f32,
        )
    }

    pub fn inverse_apply(&self, x: f32, y: f32) -> (f32, f32) {
        let (c, s) = self.cos_sin();
        let k = self.scale as f64;
        let dx = x as f64 - self.cx as f64 - self.tx as f64;
        let dy = y as f64 - self.cy as f64 - self.ty as f64;
        (
            (self.cx as f64 + (c * dx + s * dy) / k) as f32,
            (self.cy as f64 + (-s * dx + c * dy) / k) as f32,
        )
    }

    /// Upper bound of `|A(p) - p|` over the square `[0, size-1]^2`.
    pub fn displacement_bound(&self, size: usize) -> f32 {
        let (c, _) = self.cos_sin();
        let k = self.scale as f64;
        // sR - I is a scaled rotation; its operator norm is |k e^{i theta} - 1|
        let gain = (k * k - 2.0 * k * c + 1.0).max(0.0).sqrt();
        let far = [0.0, (size - 1) as f64];
        let reach = far
            .iter()
            .flat_map(|&x| far.iter().map(move |&y| (x, y)))
            .map(|(x, y)| (x - self.cx as f64).hypot(y - self.cy as f64))
            .fold(0.0, f64::max);
        ((self.tx as f64).hypot(self.ty as f64) + gain * reach) as f32
    }
}

/// Planar RGB texture over the region starting at `(x0, y0)`, sampled
/// bilinearly with edge clamping.
#[derive(Debug, Clone)]
pub struct Texture {
    x0: f32,
    y0: f32,
    w: usize,
    h: usize,
    data: Vec<f32>,
}

impl Texture {
    pub fn constant(rgb: [f32; 3]) -> Self {
        Self { x0: 0.0, y0: 0.0, w: 1, h: 1, data: rgb.to_vec() }
    }

    /// Box-filtered uniform noise stretched to fill `[0, 1]` per channel,
    /// optionally blended towards a base colour.
    pub fn noise(
        rng: &mut impl Rng,
        x0: f32,
        y0: f32,
        w: usize,
        h: usize,
        radius: usize,
        tint: Option<([f32; 3], f32)>,
    ) -> Self {
        let mut data = vec![0.0f32; 3 * w * h];
        for c in 0..3 {
            let plane = &mut data[c * w * h..(c + 1) * w * h];
            for v in plane.iter_mut() {
                *v = rng.gen();
            }
            for _ in 0..2 {
                box_blur(plane, w, h, radius);
            }
            let (lo, hi) = plane.iter().fold((f32::MAX, f32::MIN), |(a, b), &v| (a.min(v), b.max(v)));
            let span = (hi - lo).max(1e-6);
            for v in plane.iter_mut() {
                *v = (*v - lo) / span;
                if let Some((rgb, mix)) = tint {
                    *v = rgb[c] * (1.0 - mix) + *v * mix;
                }
            }
        }
        Self { x0, y0, w, h, data }
    }

    pub fn sample(&self, c: usize, x: f32, y: f32) -> f32 {
        let plane = &self.data[c * self.w * self.h..(c + 1) * self.w * self.h];
        let fx = (x - self.x0).clamp(0.0, (self.w - 1) as f32);
        let fy = (y - self.y0).clamp(0.0, (self.h - 1) as f32);
        let (ix, iy) = (fx.floor() as usize, fy.floor() as usize);
        let (jx, jy) = ((ix + 1).min(self.w - 1), (iy + 1).min(self.h - 1));
        let (ax, ay) = (fx - ix as f32, fy - iy as f32);
        let at = |yy: usize, xx: usize| plane[yy * self.w + xx];
        let top = at(iy, ix) + (at(iy, jx) - at(iy, ix)) * ax;
        let bot = at(jy, ix) + (at(jy, jx) - at(jy, ix)) * ax;
        top + (bot - top) * ay
    }
}

fn box_blur(plane: &mut [f32], w: usize, h: usize, r: usize) {
    if r == 0 {
        return;
    }
    let mut tmp = vec![0.0f32; plane.len()];
    let norm = 1.0 / (2 * r + 1) as f32;
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for k in 0..=2 * r {
                let xx = (x + k).saturating_sub(r).min(w - 1);
                acc += plane[y * w + xx];
            }
            tmp[y * w + x] = acc * norm;
        }
    }
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for k in 0..=2 * r {
                let yy = (y + k).saturating_sub(r).min(h - 1);
                acc += tmp[yy * w + x];
            }
            plane[y * w + x] = acc * norm;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayerShape {
    Full,
    Ellipse { cx: f32, cy: f32, rx: f32, ry: f32, angle: f32 },
    /// Convex polygon, vertices in counter-clockwise angular order.
    Polygon { vertices: Vec<(f32, f32)> },
}

impl LayerShape {
    pub fn contains(&self, x: f32, y: f32) -> bool {
        match self {
            LayerShape::Full => true,
            LayerShape::Ellipse { cx, cy, rx, ry, angle } => {
                let (s, c) = angle.sin_cos();
                let (dx, dy) = (x - cx, y - cy);
                let u = c * dx + s * dy;
                let v = -s * dx + c * dy;
                (u / rx).powi(2) + (v / ry).powi(2) <= 1.0
            }
            LayerShape::Polygon { vertices } => {
                let n = vertices.len();
                (0..n).all(|i| {
                    let (ax, ay) = vertices[i];
                    let (bx, by) = vertices[(i + 1) % n];
                    (bx - ax) * (y - ay) - (by - ay) * (x - ax) >= 0.0
                })
            }
        }
    }

    pub fn centroid(&self, size: usize) -> (f32, f32) {
        match self {
            LayerShape::Full => {
                let c = (size - 1) as f32 / 2.0;
                (c, c)
            }
            LayerShape::Ellipse { cx, cy, .. } => (*cx, *cy),
            LayerShape::Polygon { vertices } => {
                let n = vertices.len() as f32;
                let sx: f32 = vertices.iter().map(|v| v.0).sum();
                let sy: f32 = vertices.iter().map(|v| v.1).sum();
                (sx / n, sy / n)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Layer {
    pub shape: LayerShape,
    pub texture: Texture,
    pub motion: Affine,
}

/// Layers bottom to top; layer 0 must be [`LayerShape::Full`].
#[derive(Debug, Clone)]
pub struct Scene {
    pub size: usize,
    pub layers: Vec<Layer>,
}

impl Scene {
    fn top_at_rest(&self, x: f32, y: f32) -> usize {
        (0..self.layers.len())
            .rev()
            .find(|&l| self.layers[l].shape.contains(x, y))
            .unwrap_or(0)
    }

    /// Topmost layer visible at `(x, y)` in frame 2 and the layer-local
    /// point that lands there.
    fn top_moved(&self, x: f32, y: f32) -> (usize, (f32, f32)) {
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let p = layer.motion.inverse_apply(x, y);
            if l == 0 || layer.shape.contains(p.0, p.1) {
                return (l, p);
            }
        }
        unreachable!("layer 0 covers the plane")
    }
}

#[derive(Debug, Clone)]
pub struct SamplePair {
    pub frame1: RgbImage,
    pub frame2: RgbImage,
    pub gt: FlowField,
    /// Motion of each layer, bottom to top.
    pub meta: Vec<Affine>,
}

pub fn render_scene(scene: &Scene) -> Result<SamplePair> {
    let size = scene.size;
    match scene.layers.first() {
        Some(l) if l.shape == LayerShape::Full => {}
        _ => return Err(Error::Config("scene needs a full-frame background layer".into())),
    }
    let mut frame1 = RgbImage::filled(size, size, 0.0);
    let mut frame2 = RgbImage::filled(size, size, 0.0);
    let mut gt = FlowField::zeros(size, size);
    let mut mask = vec![true; size * size];
    let limit = (size - 1) as f32;
    for y in 0..size {
        for x in 0..size {
            let (fx, fy) = (x as f32, y as f32);
            let l = scene.top_at_rest(fx, fy);
            let layer = &scene.layers[l];
            for c in 0..3 {
                frame1.set(c, y, x, layer.texture.sample(c, fx, fy));
            }
            let (qx, qy) = layer.motion.apply(fx, fy);
            gt.set(y, x, qx - fx, qy - fy);
            let inside = (0.0..=limit).contains(&qx) && (0.0..=limit).contains(&qy);
            mask[y * size + x] = inside && scene.top_moved(qx, qy).0 == l;

            let (l2, p) = scene.top_moved(fx, fy);
            for c in 0..3 {
                frame2.set(c, y, x, scene.layers[l2].texture.sample(c, p.0, p.1));
            }
        }
    }
    gt.mask = Some(mask);
    Ok(SamplePair {
        frame1,
        frame2,
        gt,
        meta: scene.layers.iter().map(|l| l.motion).collect(),
    })
}

fn draw_motion(rng: &mut impl Rng, cfg: &GenConfig, centroid: (f32, f32)) -> Affine {
    let mut uniform = |a: f32| if a > 0.0 { rng.gen_range(-a..=a) } else { 0.0 };
    Affine {
        tx: uniform(cfg.max_disp),
        ty: uniform(cfg.max_disp),
        rot_deg: uniform(cfg.max_rot_deg),
        scale: 1.0 + uniform(cfg.scale_jitter),
        cx: centroid.0,
        cy: centroid.1,
    }
}

/// Random scene for `seed`, drawn from `cfg`.
pub fn random_scene(seed: u64, cfg: &GenConfig) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = cfg.size;
    let sf = size as f32;
    // background texture must cover every point the inverse map can reach
    let reach = (sf * std::f32::consts::FRAC_1_SQRT_2 + cfg.max_disp * 2f32.sqrt())
        / (1.0 - cfg.scale_jitter);
    let margin = (reach - sf / 2.0).max(0.0).ceil() as usize + 2;
    let tex_side = size + 2 * margin;

    let bg_shape = LayerShape::Full;
    let bg_motion = draw_motion(&mut rng, cfg, bg_shape.centroid(size));
    let bg_tex = Texture::noise(&mut rng, -(margin as f32), -(margin as f32), tex_side, tex_side, 2, None);
    let mut layers = vec![Layer { shape: bg_shape, texture: bg_tex, motion: bg_motion }];

    let (rmin, rmax) = cfg.radius_range();
    for _ in 0..cfg.n_sprites {
        let r = if rmax > rmin { rng.gen_range(rmin..=rmax) } else { rmin };
        let cx = rng.gen_range(r..=sf - 1.0 - r);
        let cy = rng.gen_range(r..=sf - 1.0 - r);
        let ry = r * rng.gen_range(0.5f32..=1.0);
        let angle = rng.gen_range(0.0..std::f32::consts::PI);
        let shape = if rng.gen_bool(0.5) {
            LayerShape::Ellipse { cx, cy, rx: r, ry, angle }
        } else {
            let k = rng.gen_range(3..=7);
            let mut thetas: Vec<f32> = (0..k)
                .map(|_| rng.gen_range(0.0..2.0 * std::f32::consts::PI))
                .collect();
            thetas.sort_by(f32::total_cmp);
            let (sa, ca) = angle.sin_cos();
            let vertices = thetas
                .iter()
                .map(|t| {
                    let (u, v) = (r * t.cos(), ry * t.sin());
                    (cx + ca * u - sa * v, cy + sa * u + ca * v)
                })
                .collect();
            LayerShape::Polygon { vertices }
        };
        let tint = [rng.gen(), rng.gen(), rng.gen()];
        let radius = rng.gen_range(1..=2);
        let side = (2.0 * r).ceil() as usize + 6;
        let texture = Texture::noise(&mut rng, cx - r - 3.0, cy - r - 3.0, side, side, radius, Some((tint, 0.6)));
        let motion = draw_motion(&mut rng, cfg, shape.centroid(size));
        layers.push(Layer { shape, texture, motion });
    }
    Ok(Scene { size, layers })
}

/// Deterministic sample for `seed`.
pub fn generate_sample(seed: u64, cfg: &GenConfig) -> Result<SamplePair> {
    render_scene(&random_scene(seed, cfg)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_inverse_round_trips() {
        let a = Affine { tx: 3.0, ty: -2.0, rot_deg: 7.0, scale: 1.03, cx: 10.0, cy: 20.0 };
        let (x, y) = a.apply(4.0, 5.0);
        let (bx, by) = a.inverse_apply(x, y);
        assert!((bx - 4.0).abs() < 1e-4 && (by - 5.0).abs() < 1e-4);
    }

    #[test]
    fn identity_config_yields_static_pair() {
        let s = generate_sample(3, &GenConfig::identity(32, 3)).unwrap();
        assert_eq!(s.frame1, s.frame2);
        assert!(s.gt.uv().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pure_translation_background() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let scene = Scene {
            size: 16,
            layers: vec![Layer {
                shape: LayerShape::Full,
                texture: Texture::noise(&mut rng, -8.0, -8.0, 32, 32, 1, None),
                motion: Affine::translation(3.0, 0.0),
            }],
        };
        let s = render_scene(&scene).unwrap();
        for i in 0..16 * 16 {
            assert_eq!(s.gt.get(i / 16, i % 16), (3.0, 0.0));
        }
        // columns that move out of frame are invalid
        assert!(!s.gt.is_valid(15));
        assert!(s.gt.is_valid(12));
    }

    #[test]
    fn polygon_contains_its_centroid() {
        let shape = LayerShape::Polygon { vertices: vec![(0.0, 0.0), (4.0, 0.0), (4.0, 4.0), (0.0, 4.0)] };
        assert!(shape.contains(2.0, 2.0));
        assert!(!shape.contains(5.0, 2.0));
    }

    #[test]
    fn infeasible_configs_are_rejected() {
        assert!(GenConfig::new(30, 1, 4.0).validate().is_err());
        assert!(GenConfig::new(32, 1, 16.0).validate().is_err());
        let mut big = GenConfig::new(32, 1, 4.0);
        big.sprite_radius = Some((10.0, 20.0));
        assert!(matches!(generate_sample(0, &big), Err(Error::Config(_))));
    }

    #[test]
    fn same_seed_same_sample() {
        let cfg = GenConfig::new(32, 2, 4.0);
        let a = generate_sample(11, &cfg).unwrap();
        let b = generate_sample(11, &cfg).unwrap();
        assert_eq!(a.frame1, b.frame1);
        assert_eq!(a.frame2, b.frame2);
        assert_eq!(a.gt, b.gt);
    }
}
