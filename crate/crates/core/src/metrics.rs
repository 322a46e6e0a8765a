//! Image quality and evaluation-protocol metrics.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::image::{Image, Mask};

/// Reported PSNR for identical inputs.
pub const PSNR_SENTINEL: f64 = 99.0;

/// `10·log10(peak² / MSE)`, or [`PSNR_SENTINEL`] when the MSE is zero.
pub fn psnr(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    a.check_same_shape(b, "psnr")?;
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    Ok(psnr_from_mse(mse, peak))
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        PSNR_SENTINEL
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

/// PSNR restricted to pixels where `mask` is true (all channels).
pub fn psnr_masked(a: &Image, b: &Image, mask: &Mask, peak: f64) -> Result<f64> {
    a.check_same_shape(b, "psnr_masked")?;
    if mask.width() != a.width() || mask.height() != a.height() {
        return Err(Error::Shape("mask does not match image".into()));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for y in 0..a.height() {
        for x in 0..a.width() {
            if !mask.get(x, y) {
                continue;
            }
            for c in 0..a.channels() {
                let d = a.get(x, y, c) - b.get(x, y, c);
                sum += d * d;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::Precondition("mask selects no pixels".into()));
    }
    Ok(psnr_from_mse(sum / n as f64, peak))
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable "valid" Gaussian filter of a single plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> (Vec<f64>, usize, usize) {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = k.iter().zip(&row[x..x + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

/// Mean structural similarity with an 11×11 Gaussian window (σ = 1.5),
/// `C1 = 0.01²`, `C2 = 0.03²` for unit dynamic range, averaged over channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b, "ssim")?;
    let (w, h, ch) = (a.width(), a.height(), a.channels());
    if w.min(h) < SSIM_WINDOW {
        return Err(Error::Precondition(format!(
            "ssim needs both sides >= {SSIM_WINDOW}, got {w}x{h}"
        )));
    }
    let k = gaussian_kernel();
    let plane = |img: &Image, c: usize, f: &dyn Fn(f64, f64) -> f64, other: &Image| -> Vec<f64> {
        (0..w * h)
            .map(|i| f(img.data()[i * ch + c], other.data()[i * ch + c]))
            .collect()
    };
    let mut total = 0.0;
    for c in 0..ch {
        let (mx, ow, oh) = filter_valid(&plane(a, c, &|x, _| x, b), w, h, &k);
        let (my, _, _) = filter_valid(&plane(a, c, &|_, y| y, b), w, h, &k);
        let (xx, _, _) = filter_valid(&plane(a, c, &|x, _| x * x, b), w, h, &k);
        let (yy, _, _) = filter_valid(&plane(a, c, &|_, y| y * y, b), w, h, &k);
        let (xy, _, _) = filter_valid(&plane(a, c, &|x, y| x * y, b), w, h, &k);
        let mut s = 0.0;
        for i in 0..ow * oh {
            let (ux, uy) = (mx[i], my[i]);
            let vx = xx[i] - ux * ux;
            let vy = yy[i] - uy * uy;
            let cxy = xy[i] - ux * uy;
            s += ((2.0 * ux * uy + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2));
        }
        total += s / (ow * oh) as f64;
    }
    Ok(total / ch as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarrisParams {
    pub k: f64,
    /// Fraction of the maximum response a corner must exceed.
    pub response_thresh: f64,
}

impl Default for HarrisParams {
    fn default() -> Self {
        HarrisParams {
            k: 0.04,
            response_thresh: 0.01,
        }
    }
}

/// Harris response `det(M) − k·trace(M)²` per pixel, where `M` sums the
/// Sobel gradient products over a 3×3 window (edge-replicated borders).
pub fn harris_response(img: &Image, k: f64) -> Image {
    let g = img.to_gray();
    let (w, h) = (g.width(), g.height());
    let at = |x: isize, y: isize| -> f64 {
        g.get(x.clamp(0, w as isize - 1) as usize, y.clamp(0, h as isize - 1) as usize, 0)
    };
    let mut ixx = vec![0.0; w * h];
    let mut iyy = vec![0.0; w * h];
    let mut ixy = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            let i = y as usize * w + x as usize;
            ixx[i] = gx * gx;
            iyy[i] = gy * gy;
            ixy[i] = gx * gy;
        }
    }
    let boxsum = |p: &[f64], x: usize, y: usize| -> f64 {
        let mut s = 0.0;
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                s += p[yy * w + xx];
            }
        }
        s
    };
    Image::from_fn(w, h, 1, |x, y, _| {
        let a = boxsum(&ixx, x, y);
        let b = boxsum(&iyy, x, y);
        let c = boxsum(&ixy, x, y);
        a * b - c * c - k * (a + b) * (a + b)
    })
}

/// Number of Harris corners: 3×3 local maxima of the response exceeding
/// `response_thresh · max_response`. Equal neighbours are resolved in raster
/// order so a flat peak counts once; the one-pixel border is ignored.
pub fn harris_count(img: &Image, params: HarrisParams) -> usize {
    let r = harris_response(img, params.k);
    let (w, h) = (r.width(), r.height());
    let max = r.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max.is_nan() || max <= 0.0 || w < 3 || h < 3 {
        return 0;
    }
    let thresh = params.response_thresh * max;
    let mut count = 0;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let v = r.get(x, y, 0);
            if v <= thresh {
                continue;
            }
            let mut is_max = true;
            'nb: for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let n = r.get((x as isize + dx) as usize, (y as isize + dy) as usize, 0);
                    let earlier = dy < 0 || (dy == 0 && dx < 0);
                    if n > v || (earlier && n == v) {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max {
                count += 1;
            }
        }
    }
    count
}

/// Scene-complexity bucket by corner count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Bucket {
    Low,
    Mid,
    High,
}

/// `n ≤ 200` → Low, `200 < n < 400` → Mid, `n ≥ 400` → High.
pub fn stratify(n: usize) -> Bucket {
    if n <= 200 {
        Bucket::Low
    } else if n < 400 {
        Bucket::Mid
    } else {
        Bucket::High
    }
}

/// Average parameter performance: PSNR per unit of model size.
pub fn avp(psnr_db: f64, model_size: f64) -> Result<f64> {
    if !(model_size > 0.0 && model_size.is_finite()) {
        return Err(Error::Precondition(format!(
            "model size must be positive, got {model_size}"
        )));
    }
    Ok(psnr_db / model_size)
}

/// Mean end-point error over (masked) pixels.
pub fn flow_epe(pred: &FlowField, gt: &FlowField, mask: Option<&Mask>) -> Result<f64> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(Error::Shape(format!(
            "flows are {}x{} and {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    if let Some(m) = mask {
        if m.width() != gt.width() || m.height() != gt.height() {
            return Err(Error::Shape("mask does not match flow".into()));
        }
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for y in 0..gt.height() {
        for x in 0..gt.width() {
            if mask.is_some_and(|m| !m.get(x, y)) {
                continue;
            }
            let (pu, pv) = pred.get(x, y);
            let (gu, gv) = gt.get(x, y);
            sum += (pu - gu).hypot(pv - gv);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Precondition("mask selects no pixels".into()));
    }
    Ok(sum / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub psnr: f64,
    pub ssim: f64,
    pub corner_count: usize,
    pub bucket: Bucket,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epe: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketStats {
    pub count: usize,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub images: Vec<ImageRecord>,
    pub buckets: BTreeMap<Bucket, BucketStats>,
}

impl EvalReport {
    pub fn from_records(images: Vec<ImageRecord>) -> Self {
        let mut acc: BTreeMap<Bucket, (usize, f64, f64)> = BTreeMap::new();
        for r in &images {
            let e = acc.entry(r.bucket).or_default();
            e.0 += 1;
            e.1 += r.psnr;
            e.2 += r.ssim;
        }
        let buckets = acc
            .into_iter()
            .map(|(b, (n, p, s))| {
                (
                    b,
                    BucketStats {
                        count: n,
                        mean_psnr: p / n as f64,
                        mean_ssim: s / n as f64,
                    },
                )
            })
            .collect();
        EvalReport { images, buckets }
    }

    /// Pretty-printed JSON.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn mean_psnr(&self) -> Option<f64> {
        (!self.images.is_empty())
            .then(|| self.images.iter().map(|r| r.psnr).sum::<f64>() / self.images.len() as f64)
    }

    pub fn mean_ssim(&self) -> Option<f64> {
        (!self.images.is_empty())
            .then(|| self.images.iter().map(|r| r.ssim).sum::<f64>() / self.images.len() as f64)
    }
}

/// Scores one prediction against its ground truth. Corners are counted on
/// `count_on` (normally the ground truth).
pub fn evaluate_pair(
    id: impl Into<String>,
    pred: &Image,
    gt: &Image,
    count_on: &Image,
    harris: HarrisParams,
) -> Result<ImageRecord> {
    let corner_count = harris_count(count_on, harris);
    Ok(ImageRecord {
        id: id.into(),
        psnr: psnr(pred, gt, 1.0)?,
        ssim: ssim(pred, gt)?,
        corner_count,
        bucket: stratify(corner_count),
        epe: None,
    })
}
