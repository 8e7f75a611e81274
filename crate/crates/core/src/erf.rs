//! Empirical effective receptive fields: input-gradient magnitude maps of a
//! single output unit, their half-maximum width, and a spectral gridding score.

use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow_io::SamplePair;
use crate::graph::{Graph, Var};
use crate::layers::{dilated_conv2d, ConvLayerSpec, ConvWeights, LayerVars};
use crate::model::{forward, validate_frames, ModelConfig, ModelParams, ParamVars, Stage};
use crate::tensor::{Shape4, Tensor4};

/// Which flow component seeds the backward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErfChannel {
    U,
    V,
    Both,
}

impl std::str::FromStr for ErfChannel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "u" => Ok(Self::U),
            "v" => Ok(Self::V),
            "both" => Ok(Self::Both),
            other => Err(Error::Config(format!("unknown ERF channel `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErfMap {
    pub h: usize,
    pub w: usize,
    /// Row-major, peak-normalized to 1.
    pub grid: Vec<f64>,
    /// `(row, col)` of the probed output unit in input coordinates.
    pub center: (usize, usize),
    pub fwhm_px: f64,
    /// `None` when the half-maximum window is too short to score.
    pub gridding_score: Option<f64>,
}

impl ErfMap {
    /// Peak-normalizes an accumulated magnitude map and computes its statistics.
    pub fn from_accumulated(h: usize, w: usize, mut grid: Vec<f64>, center: (usize, usize)) -> Result<Self> {
        let peak = grid.iter().copied().fold(0.0, f64::max);
        if !(peak > 0.0 && peak.is_finite()) {
            return Err(Error::Numeric("receptive field map has no positive finite entries".into()));
        }
        for v in &mut grid {
            *v /= peak;
        }
        let mut map = Self { h, w, grid, center, fwhm_px: 0.0, gridding_score: None };
        let row = map.center_profile();
        map.fwhm_px = fwhm(&row)?;
        map.gridding_score = gridding_score(&row).ok();
        Ok(map)
    }

    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.grid[y * self.w + x]
    }

    /// The row of the grid through the peak.
    pub fn center_profile(&self) -> Vec<f64> {
        let (py, _) = self.peak();
        self.grid[py * self.w..(py + 1) * self.w].to_vec()
    }

    /// Position of the largest entry (first in row-major order).
    pub fn peak(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.grid.iter().enumerate() {
            if v > self.grid[best] {
                best = i;
            }
        }
        (best / self.w, best % self.w)
    }

    /// Bounding box `(y0, x0, y1, x1)` (inclusive) of the non-zero entries.
    pub fn support(&self) -> Option<(usize, usize, usize, usize)> {
        let mut b: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.h {
            for x in 0..self.w {
                if self.at(y, x) != 0.0 {
                    b = Some(match b {
                        None => (y, x, y, x),
                        Some((y0, x0, y1, x1)) => (y0.min(y), x0.min(x), y1.max(y), x1.max(x)),
                    });
                }
            }
        }
        b
    }

    /// Value at the centre and the larger of the two values `offset` pixels
    /// left and right of it on the centre row.
    pub fn center_vs_offset(&self, offset: usize) -> (f64, f64) {
        let (cy, cx) = self.center;
        let left = cx.checked_sub(offset).map_or(0.0, |x| self.at(cy, x));
        let right = if cx + offset < self.w { self.at(cy, cx + offset) } else { 0.0 };
        (self.at(cy, cx), left.max(right))
    }
}

/// Sub-pixel positions where `profile` last rises to and first falls below
/// half of its maximum, scanning from the outside in.
pub fn half_max_crossings(profile: &[f64]) -> Result<(f64, f64)> {
    let peak = profile.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if profile.is_empty() || !(peak > 0.0) {
        return Err(Error::Numeric("profile has no positive peak".into()));
    }
    let half = peak / 2.0;
    let first = profile.iter().position(|&v| v >= half).unwrap();
    let last = profile.iter().rposition(|&v| v >= half).unwrap();
    let cross = |a: usize, b: usize| -> f64 {
        let (va, vb) = (profile[a], profile[b]);
        a as f64 + (half - va) / (vb - va) * (b as f64 - a as f64)
    };
    let left = if first == 0 { 0.0 } else { cross(first - 1, first) };
    let right = if last + 1 == profile.len() { last as f64 } else { cross(last, last + 1) };
    Ok((left, right))
}

/// Full width at half maximum with linear interpolation between samples.
pub fn fwhm(profile: &[f64]) -> Result<f64> {
    let (l, r) = half_max_crossings(profile)?;
    Ok(r - l)
}

/// Least-squares `a * exp(-(x - mu)^2 / (2 s^2))` fit by damped Gauss-Newton.
pub fn fit_gaussian(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let (mut a, mut mu, mut s) = {
        let (i, &m) = ys
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap_or((0, &1.0));
        let span = xs.last().unwrap_or(&1.0) - xs.first().unwrap_or(&0.0);
        (m, xs[i], (span / 2.355).max(0.5))
    };
    let sse = |a: f64, mu: f64, s: f64| -> f64 {
        xs.iter()
            .zip(ys)
            .map(|(&x, &y)| {
                let r = y - a * (-(x - mu).powi(2) / (2.0 * s * s)).exp();
                r * r
            })
            .sum()
    };
    let mut lambda = 1e-3;
    let mut cur = sse(a, mu, s);
    for _ in 0..200 {
        let mut jtj = [[0.0f64; 3]; 3];
        let mut jtr = [0.0f64; 3];
        for (&x, &y) in xs.iter().zip(ys) {
            let e = (-(x - mu).powi(2) / (2.0 * s * s)).exp();
            let f = a * e;
            let j = [e, f * (x - mu) / (s * s), f * (x - mu).powi(2) / (s * s * s)];
            let r = y - f;
            for p in 0..3 {
                jtr[p] += j[p] * r;
                for q in 0..3 {
                    jtj[p][q] += j[p] * j[q];
                }
            }
        }
        let mut m = jtj;
        for (p, row) in m.iter_mut().enumerate() {
            row[p] += lambda * jtj[p][p].max(1e-12);
        }
        let Some(d) = solve3(m, jtr) else { break };
        let (na, nmu, ns) = (a + d[0], mu + d[1], (s + d[2]).abs().max(1e-6));
        let next = sse(na, nmu, ns);
        if next < cur {
            let done = (cur - next) <= 1e-15 * cur.max(1e-300);
            (a, mu, s, cur) = (na, nmu, ns, next);
            lambda = (lambda * 0.3).max(1e-12);
            if done {
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
        }
    }
    (a, mu, s)
}

fn solve3(mut m: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        b.swap(col, piv);
        for r in 0..3 {
            if r != col {
                let f = m[r][col] / m[col][col];
                for c in col..3 {
                    m[r][c] -= f * m[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    Some([b[0] / m[0][0], b[1] / m[1][1], b[2] / m[2][2]])
}

/// Energy of the Gaussian-fit residual at spatial periods of 2 to 8 pixels,
/// relative to the total energy of the profile, both taken over the
/// half-maximum window. Clamped to `[0, 1]`.
pub fn gridding_score(profile: &[f64]) -> Result<f64> {
    let (l, r) = half_max_crossings(profile)?;
    let (lo, hi) = (l.ceil() as usize, r.floor() as usize);
    let n = (hi + 1).saturating_sub(lo);
    if n < 8 {
        return Err(Error::Input(format!("half-maximum window of {n} px is shorter than 8 px")));
    }
    let xs: Vec<f64> = (lo..=hi).map(|x| x as f64).collect();
    let ys = &profile[lo..=hi];
    let (a, mu, s) = fit_gaussian(&xs, ys);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let spectrum = |v: Vec<f64>| -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = v.into_iter().map(|re| Complex::new(re, 0.0)).collect();
        fft.process(&mut buf);
        buf.iter().map(|c| c.norm_sqr()).collect()
    };
    let residual: Vec<f64> = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| y - a * (-(x - mu).powi(2) / (2.0 * s * s)).exp())
        .collect();
    let res = spectrum(residual);
    let total: f64 = spectrum(ys.to_vec()).iter().sum();
    let band: f64 = (1..n)
        .filter(|&k| {
            let period = n as f64 / k.min(n - k) as f64;
            (2.0..=8.0).contains(&period)
        })
        .map(|k| res[k])
        .sum();
    Ok((band / total).clamp(0.0, 1.0))
}

fn seed_tensor(shape: Shape4, center: (usize, usize), channel: ErfChannel) -> Tensor4 {
    let mut t = Tensor4::zeros(shape);
    let chans: &[usize] = match channel {
        ErfChannel::U => &[0],
        ErfChannel::V => &[1],
        ErfChannel::Both => &[0, 1],
    };
    for &c in chans {
        t.set(0, c, center.0, center.1, 1.0);
    }
    t
}

fn accumulate_abs(acc: &mut [f64], grad: &Tensor4, weight: f64) {
    let s = grad.shape();
    for c in 0..s.c {
        for (a, &g) in acc.iter_mut().zip(grad.plane(0, c)) {
            *a += weight * g.abs() as f64;
        }
    }
}

/// ERF of a model stage's full-resolution flow output at the frame centre,
/// averaged over `samples` (which must share one frame size).
pub fn compute_erf(
    cfg: &ModelConfig,
    params: &ModelParams,
    probe: Stage,
    samples: &[SamplePair],
    channel: ErfChannel,
) -> Result<ErfMap> {
    cfg.validate()?;
    params.check(cfg)?;
    let first = samples.first().ok_or_else(|| Error::Input("no samples for ERF".into()))?;
    let (h, w) = (first.gt.h, first.gt.w);
    let center = (h / 2, w / 2);
    let mut acc = vec![0.0f64; h * w];
    for s in samples {
        let (f1, f2) = (s.frame1.to_tensor(), s.frame2.to_tensor());
        validate_frames(&f1, &f2)?;
        if (s.gt.h, s.gt.w) != (h, w) {
            return Err(Error::Input("ERF samples must share one frame size".into()));
        }
        let mut g = Graph::new();
        let vars = ParamVars::constants(&mut g, params);
        let a = g.leaf(f1);
        let b = g.leaf(f2);
        let out = forward(&mut g, cfg, &vars, a, b)?;
        let y = out.stage(probe);
        let grads = g.backward(y, &seed_tensor(g.shape(y), center, channel))?;
        let weight = 1.0 / (6.0 * samples.len() as f64);
        for v in [a, b] {
            if let Some(gr) = grads.get(v) {
                accumulate_abs(&mut acc, gr, weight);
            }
        }
    }
    ErfMap::from_accumulated(h, w, acc, center)
}

/// ERF of the centre unit of a plain conv stack (output channel 0) with
/// respect to its input, averaged over input channels and `inputs`.
pub fn compute_stack_erf(specs: &[ConvLayerSpec], weights: &[ConvWeights], inputs: &[Tensor4]) -> Result<ErfMap> {
    if specs.len() != weights.len() || specs.is_empty() {
        return Err(Error::Config("stack specs and weights disagree".into()));
    }
    let first = inputs.first().ok_or_else(|| Error::Input("no inputs for ERF".into()))?;
    let s0 = first.shape();
    let mut acc = vec![0.0f64; s0.h * s0.w];
    let mut out_center = (0, 0);
    let mut stride = 1;
    for x in inputs {
        if x.shape() != s0 || s0.n != 1 {
            return Err(Error::Input("stack ERF inputs must share one (1, C, H, W) shape".into()));
        }
        let mut g = Graph::new();
        let input = g.leaf(x.clone());
        let mut y: Var = input;
        stride = 1;
        for (spec, wts) in specs.iter().zip(weights) {
            let lv = LayerVars::constants(&mut g, wts);
            y = dilated_conv2d(&mut g, y, lv, spec)?;
            stride *= spec.stride;
        }
        let ys = g.shape(y);
        out_center = (ys.h / 2, ys.w / 2);
        let mut seed = Tensor4::zeros(ys);
        seed.set(0, 0, out_center.0, out_center.1, 1.0);
        let grads = g.backward(y, &seed)?;
        if let Some(gr) = grads.get(input) {
            accumulate_abs(&mut acc, gr, 1.0 / (s0.c * inputs.len()) as f64);
        }
    }
    ErfMap::from_accumulated(s0.h, s0.w, acc, (out_center.0 * stride, out_center.1 * stride))
}

/// 8-bit rendering of the grid and the centre-row profile as
/// `(offset_px, value)` pairs relative to the probed column.
pub fn render_erf(erf: &ErfMap) -> (image::GrayImage, Vec<(i64, f64)>) {
    let img = image::GrayImage::from_fn(erf.w as u32, erf.h as u32, |x, y| {
        image::Luma([(erf.at(y as usize, x as usize).clamp(0.0, 1.0) * 255.0).round() as u8])
    });
    let cx = erf.center.1 as i64;
    let profile = erf
        .center_profile()
        .into_iter()
        .enumerate()
        .map(|(x, v)| (x as i64 - cx, v))
        .collect();
    (img, profile)
}

pub fn write_profile_csv(path: &Path, profile: &[(i64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["offset_px", "value"]).map_err(csv_err)?;
    for (o, v) in profile {
        w.write_record([o.to_string(), v.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_profile_csv(path: &Path) -> Result<Vec<(i64, f64)>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|rec| rec.map_err(csv_err)).collect()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Input(format!("csv: {e}"))
}

/// Per-stage numbers written next to the rendered maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErfStageSummary {
    pub stage: Stage,
    pub fwhm_px: f64,
    pub gridding_score: Option<f64>,
    pub center_value: f64,
    pub value_at_5px: f64,
}

impl ErfStageSummary {
    pub fn new(stage: Stage, erf: &ErfMap) -> Self {
        let (center_value, value_at_5px) = erf.center_vs_offset(5);
        Self {
            stage,
            fwhm_px: erf.fwhm_px,
            gridding_score: erf.gridding_score,
            center_value,
            value_at_5px,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian(n: usize, sigma: f64) -> Vec<f64> {
        let c = (n / 2) as f64;
        (0..n).map(|x| (-((x as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect()
    }

    #[test]
    fn fwhm_of_gaussian() {
        let p = gaussian(201, 10.0);
        let expected = 2.0 * (2.0 * 2f64.ln()).sqrt() * 10.0;
        assert!((fwhm(&p).unwrap() - expected).abs() < 0.05, "{}", fwhm(&p).unwrap());
    }

    #[test]
    fn fwhm_of_triangle_interpolates() {
        let p = [0.0, 0.5, 1.0, 0.5, 0.0];
        assert_eq!(fwhm(&p).unwrap(), 2.0);
        let p = [0.0, 0.25, 1.0, 0.25, 0.0];
        assert!((fwhm(&p).unwrap() - 4.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_fit_recovers_parameters() {
        let xs: Vec<f64> = (0..40).map(|x| x as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 0.8 * (-(x - 17.3f64).powi(2) / (2.0 * 36.0)).exp()).collect();
        let (a, mu, s) = fit_gaussian(&xs, &ys);
        assert!((a - 0.8).abs() < 1e-6 && (mu - 17.3).abs() < 1e-6 && (s - 6.0).abs() < 1e-6, "{a} {mu} {s}");
    }

    #[test]
    fn smooth_profile_scores_low() {
        let p = gaussian(201, 12.0);
        assert!(gridding_score(&p).unwrap() <= 0.02);
    }

    #[test]
    fn comb_profile_scores_high() {
        let c = 100.0;
        let p: Vec<f64> = gaussian(201, 12.0)
            .iter()
            .enumerate()
            .map(|(x, g)| g * (1.0 + 0.5 * (2.0 * std::f64::consts::PI * (x as f64 - c) / 4.0).cos()))
            .collect();
        let s = gridding_score(&p).unwrap();
        assert!(s >= 0.1, "{s}");
    }

    #[test]
    fn short_window_is_an_error() {
        assert!(gridding_score(&gaussian(41, 2.0)).is_err());
    }

    #[test]
    fn render_extremes() {
        let flat = ErfMap::from_accumulated(3, 4, vec![2.0; 12], (1, 2)).unwrap();
        let (img, prof) = render_erf(&flat);
        assert!(img.pixels().all(|p| p[0] == 255));
        assert_eq!(prof.first().unwrap().0, -2);
        let mut g = vec![0.0; 12];
        g[6] = 3.0;
        let peak = ErfMap::from_accumulated(3, 4, g, (1, 2)).unwrap();
        let (img, _) = render_erf(&peak);
        assert_eq!(img.pixels().filter(|p| p[0] == 255).count(), 1);
        assert_eq!(img.get_pixel(2, 1)[0], 255);
    }

    #[test]
    fn all_zero_map_is_an_error() {
        assert!(ErfMap::from_accumulated(2, 2, vec![0.0; 4], (1, 1)).is_err());
    }
}
