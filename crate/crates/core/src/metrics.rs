//! Endpoint-error metrics, the Middlebury flow colour coding and error maps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow_io::FlowField;

fn check_pair(pred: &FlowField, gt: &FlowField, mask: Option<&[bool]>) -> Result<()> {
    if (pred.h, pred.w) != (gt.h, gt.w) {
        return Err(Error::Shape(format!(
            "prediction is {}x{}, ground truth is {}x{}",
            pred.h, pred.w, gt.h, gt.w
        )));
    }
    if let Some(m) = mask {
        if m.len() != gt.len() {
            return Err(Error::Shape(format!("mask has {} entries for {} pixels", m.len(), gt.len())));
        }
    }
    Ok(())
}

/// Per-pixel `||pred - gt||_2`, computed in `f64`.
pub fn endpoint_errors(pred: &FlowField, gt: &FlowField) -> Result<Vec<f64>> {
    check_pair(pred, gt, None)?;
    Ok(pred
        .uv()
        .chunks_exact(2)
        .zip(gt.uv().chunks_exact(2))
        .map(|(p, g)| (p[0] as f64 - g[0] as f64).hypot(p[1] as f64 - g[1] as f64))
        .collect())
}

/// Whether an endpoint error counts as an outlier: `EE >= 3` and
/// `EE >= 5%` of the ground-truth magnitude.
pub fn is_outlier(ee: f64, gt_mag: f64) -> bool {
    ee >= 3.0 && ee >= 0.05 * gt_mag
}

#[derive(Debug, Clone, Copy, Default)]
struct Totals {
    ee_sum: f64,
    outliers: usize,
    n: usize,
}

fn totals(pred: &FlowField, gt: &FlowField, mask: Option<&[bool]>) -> Result<Totals> {
    check_pair(pred, gt, mask)?;
    let mut t = Totals::default();
    for (i, (p, g)) in pred.uv().chunks_exact(2).zip(gt.uv().chunks_exact(2)).enumerate() {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        let ee = (p[0] as f64 - g[0] as f64).hypot(p[1] as f64 - g[1] as f64);
        let mag = (g[0] as f64).hypot(g[1] as f64);
        t.ee_sum += ee;
        t.outliers += is_outlier(ee, mag) as usize;
        t.n += 1;
    }
    if t.n == 0 {
        return Err(Error::Input("metric over an empty mask".into()));
    }
    Ok(t)
}

/// Average endpoint error over pixels where `mask` is true (all pixels when `None`).
pub fn aee(pred: &FlowField, gt: &FlowField, mask: Option<&[bool]>) -> Result<f64> {
    let t = totals(pred, gt, mask)?;
    Ok(t.ee_sum / t.n as f64)
}

/// Fraction of outlier pixels among those where `mask` is true.
pub fn fl_all(pred: &FlowField, gt: &FlowField, mask: Option<&[bool]>) -> Result<f64> {
    let t = totals(pred, gt, mask)?;
    Ok(t.outliers as f64 / t.n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub id: String,
    pub aee: f64,
    pub fl_all: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Pixel-weighted over the whole set.
    pub aee: f64,
    pub fl_all: f64,
    pub n_pixels: usize,
    pub per_sample: Vec<SampleScore>,
}

/// Scores each `(id, pred, gt)` triple using the ground truth's own mask.
pub fn evaluate<'a>(items: impl IntoIterator<Item = (String, &'a FlowField, &'a FlowField)>) -> Result<EvalReport> {
    let mut all = Totals::default();
    let mut per_sample = Vec::new();
    for (id, pred, gt) in items {
        let t = totals(pred, gt, gt.mask.as_deref())?;
        all.ee_sum += t.ee_sum;
        all.outliers += t.outliers;
        all.n += t.n;
        per_sample.push(SampleScore {
            id,
            aee: t.ee_sum / t.n as f64,
            fl_all: t.outliers as f64 / t.n as f64,
        });
    }
    if all.n == 0 {
        return Err(Error::Input("nothing to evaluate".into()));
    }
    Ok(EvalReport {
        aee: all.ee_sum / all.n as f64,
        fl_all: all.outliers as f64 / all.n as f64,
        n_pixels: all.n,
        per_sample,
    })
}

const RY: usize = 15;
const YG: usize = 6;
const GC: usize = 4;
const CB: usize = 11;
const BM: usize = 13;
const MR: usize = 6;
pub const WHEEL_LEN: usize = RY + YG + GC + CB + BM + MR;

/// The 55-entry Middlebury colour wheel, `[r, g, b]` in 0..=255.
pub fn color_wheel() -> Vec<[u8; 3]> {
    let ramp = |i: usize, n: usize| (255 * i / n) as u8;
    let mut wheel = Vec::with_capacity(WHEEL_LEN);
    wheel.extend((0..RY).map(|i| [255, ramp(i, RY), 0]));
    wheel.extend((0..YG).map(|i| [255 - ramp(i, YG), 255, 0]));
    wheel.extend((0..GC).map(|i| [0, 255, ramp(i, GC)]));
    wheel.extend((0..CB).map(|i| [0, 255 - ramp(i, CB), 255]));
    wheel.extend((0..BM).map(|i| [ramp(i, BM), 0, 255]));
    wheel.extend((0..MR).map(|i| [255, 0, 255 - ramp(i, MR)]));
    wheel
}

/// Fractional wheel index in `[0, WHEEL_LEN - 1]` for direction `(u, v)`.
/// `(1, 0)` maps to entry 0; opposite directions sit half a wheel apart.
pub fn wheel_position(u: f32, v: f32) -> f32 {
    let a = (-v).atan2(-u) / std::f32::consts::PI;
    (a + 1.0) / 2.0 * (WHEEL_LEN - 1) as f32
}

/// Colour-codes a flow field. Hue follows the direction, saturation the
/// magnitude relative to `max_mag` (the field's largest valid magnitude
/// when `None`). Zero flow is white; invalid pixels are black.
pub fn flow_to_color(flow: &FlowField, max_mag: Option<f32>) -> image::RgbImage {
    let wheel = color_wheel();
    let max = max_mag.unwrap_or_else(|| flow.max_magnitude());
    let scale = if max > 0.0 && max.is_finite() { 1.0 / max } else { 0.0 };
    image::RgbImage::from_fn(flow.w as u32, flow.h as u32, |x, y| {
        let i = y as usize * flow.w + x as usize;
        if !flow.is_valid(i) {
            return image::Rgb([0, 0, 0]);
        }
        let (u, v) = flow.get(y as usize, x as usize);
        let (u, v) = if u.is_finite() && v.is_finite() { (u * scale, v * scale) } else { (0.0, 0.0) };
        let rad = u.hypot(v);
        let fk = wheel_position(u, v);
        let k0 = (fk.floor() as usize).min(WHEEL_LEN - 1);
        let k1 = (k0 + 1) % WHEEL_LEN;
        let f = fk - k0 as f32;
        let mut px = [0u8; 3];
        for c in 0..3 {
            let col0 = wheel[k0][c] as f32 / 255.0;
            let col1 = wheel[k1][c] as f32 / 255.0;
            let col = (1.0 - f) * col0 + f * col1;
            let col = if rad <= 1.0 { 1.0 - rad * (1.0 - col) } else { col * 0.75 };
            px[c] = (255.0 * col).round().clamp(0.0, 255.0) as u8;
        }
        image::Rgb(px)
    })
}

/// Grayscale endpoint-error image scaled so the largest error is white.
pub fn error_map(pred: &FlowField, gt: &FlowField) -> Result<image::GrayImage> {
    let ee = endpoint_errors(pred, gt)?;
    let max = ee.iter().copied().fold(0.0, f64::max);
    Ok(image::GrayImage::from_fn(gt.w as u32, gt.h as u32, |x, y| {
        let e = ee[y as usize * gt.w + x as usize];
        let v = if max > 0.0 { (255.0 * e / max).round() as u8 } else { 0 };
        image::Luma([v])
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_four_five() {
        let pred = FlowField::uniform(2, 3, 3.0, 4.0);
        let gt = FlowField::zeros(2, 3);
        assert!((aee(&pred, &gt, None).unwrap() - 5.0).abs() < 1e-12);
        assert_eq!(aee(&gt, &gt, None).unwrap(), 0.0);
    }

    #[test]
    fn outlier_boundary() {
        let gt = FlowField::uniform(1, 1, 10.0, 0.0);
        let pred = FlowField::uniform(1, 1, 14.0, 0.0);
        assert_eq!(fl_all(&pred, &gt, None).unwrap(), 1.0);
        let gt = FlowField::uniform(1, 1, 100.0, 0.0);
        let pred = FlowField::uniform(1, 1, 104.0, 0.0);
        assert_eq!(fl_all(&pred, &gt, None).unwrap(), 0.0);
    }

    #[test]
    fn empty_mask_is_an_error() {
        let f = FlowField::zeros(2, 2);
        assert!(aee(&f, &f, Some(&[false; 4])).is_err());
        assert!(fl_all(&f, &f, Some(&[false; 4])).is_err());
    }

    #[test]
    fn wheel_layout() {
        let w = color_wheel();
        assert_eq!(w.len(), 55);
        assert_eq!(w[0], [255, 0, 0]);
        assert_eq!(w[RY], [255, 255, 0]);
        assert_eq!(w[RY + YG], [0, 255, 0]);
        assert_eq!(w[RY + YG + GC], [0, 255, 255]);
        assert_eq!(w[RY + YG + GC + CB], [0, 0, 255]);
        assert_eq!(w[RY + YG + GC + CB + BM], [255, 0, 255]);
    }

    #[test]
    fn zero_flow_is_white() {
        let img = flow_to_color(&FlowField::zeros(3, 3), None);
        assert!(img.pixels().all(|p| p.0 == [255, 255, 255]));
    }

    #[test]
    fn error_map_extremes() {
        let gt = FlowField::zeros(3, 3);
        assert!(error_map(&gt, &gt).unwrap().pixels().all(|p| p[0] == 0));
        let mut pred = gt.clone();
        pred.set(1, 2, 2.0, 0.0);
        let img = error_map(&pred, &gt).unwrap();
        let white: Vec<_> = img.enumerate_pixels().filter(|(_, _, p)| p[0] == 255).map(|(x, y, _)| (x, y)).collect();
        assert_eq!(white, vec![(2, 1)]);
        assert_eq!(img.pixels().filter(|p| p[0] != 0).count(), 1);
    }

    #[test]
    fn evaluate_pools_pixels() {
        let gt = FlowField::zeros(2, 2);
        let a = FlowField::uniform(2, 2, 1.0, 0.0);
        let b = FlowField::uniform(2, 2, 3.0, 0.0);
        let r = evaluate([("a".to_string(), &a, &gt), ("b".to_string(), &b, &gt)]).unwrap();
        assert_eq!(r.aee, 2.0);
        assert_eq!(r.n_pixels, 8);
        assert_eq!(r.fl_all, 0.5);
        assert_eq!(r.per_sample[1].aee, 3.0);
    }
}
