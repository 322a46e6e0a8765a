//! Training objectives: reconstruction, multi-scale, adversarial, content,
//! style and their weighted combination.
//!
//! L1 and squared-L2 norms are means over elements, which keeps the loss
//! weights meaningful across resolutions.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{FeatureTensor, Image};
use crate::warp::downsample_avg;

/// Weights of the overall objective
/// `λ_r·L_r + L_adv + λ_m·L_m + L_e` with `L_e = L_c + λ_s·L_s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_r: f64,
    pub lambda_m: f64,
    pub lambda_s: f64,
    pub include_adv: bool,
    pub include_enhanced: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_r: 60.0,
            lambda_m: 5.0,
            lambda_s: 2500.0,
            include_adv: true,
            include_enhanced: true,
        }
    }
}

impl LossWeights {
    /// Reconstruction and multi-scale terms only.
    pub fn reconstruction_only() -> Self {
        LossWeights {
            include_adv: false,
            include_enhanced: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_r", self.lambda_r),
            ("lambda_m", self.lambda_m),
            ("lambda_s", self.lambda_s),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

pub fn l1_loss(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b, "l1_loss")?;
    let s: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum();
    Ok(s / a.len() as f64)
}

/// Gradient of [`l1_loss`] w.r.t. `a`; the subgradient at equality is 0.
pub fn l1_grad(a: &Image, b: &Image) -> Result<Image> {
    a.check_same_shape(b, "l1_grad")?;
    let n = a.len() as f64;
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = x - y;
            if d > 0.0 {
                1.0 / n
            } else if d < 0.0 {
                -1.0 / n
            } else {
                0.0
            }
        })
        .collect();
    Image::from_vec(a.width(), a.height(), a.channels(), data)
}

fn pyramid_targets(preds: &[Image], gt: &Image) -> Result<Vec<Image>> {
    let mut targets = Vec::with_capacity(preds.len());
    let mut cur = gt.clone();
    for (i, p) in preds.iter().enumerate() {
        cur = downsample_avg(&cur, 1)?;
        if !p.same_shape(&cur) {
            return Err(Error::Shape(format!(
                "prediction {i} is {}x{}x{}, expected {}x{}x{}",
                p.width(),
                p.height(),
                p.channels(),
                cur.width(),
                cur.height(),
                cur.channels()
            )));
        }
        targets.push(cur.clone());
    }
    Ok(targets)
}

/// `Σ_i l1(S(gt, i), preds[i-1])` for `i = 1..=preds.len()`; `preds` is
/// finest first, each level half the side of the previous.
pub fn multi_scale_l1(preds: &[Image], gt: &Image) -> Result<f64> {
    let targets = pyramid_targets(preds, gt)?;
    preds
        .iter()
        .zip(&targets)
        .map(|(p, t)| l1_loss(p, t))
        .sum()
}

/// Gradient of [`multi_scale_l1`] w.r.t. each prediction.
pub fn multi_scale_l1_grads(preds: &[Image], gt: &Image) -> Result<Vec<Image>> {
    let targets = pyramid_targets(preds, gt)?;
    preds.iter().zip(&targets).map(|(p, t)| l1_grad(p, t)).collect()
}

pub const SCORE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdversarialLoss {
    /// `-mean(log D(real)) - mean(log(1 - D(fake)))`
    pub d_loss: f64,
    /// `-mean(log D(fake))`
    pub g_loss: f64,
    /// Some score was outside the open interval and got clamped.
    pub clamped: bool,
}

/// Minimax objective over discriminator probabilities, split into the two
/// minimizable losses.
pub fn adversarial_loss(real_scores: &FeatureTensor, fake_scores: &FeatureTensor) -> AdversarialLoss {
    let mut clamped = false;
    let mut clamp = |s: f64| {
        let c = s.clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP);
        if c != s {
            clamped = true;
        }
        c
    };
    let real: Vec<f64> = real_scores.data().iter().map(|&s| clamp(s)).collect();
    let fake: Vec<f64> = fake_scores.data().iter().map(|&s| clamp(s)).collect();
    let mean = |v: &[f64], f: &dyn Fn(f64) -> f64| v.iter().map(|&s| f(s)).sum::<f64>() / v.len() as f64;
    let d_loss = -mean(&real, &|s| s.ln()) - mean(&fake, &|s| (1.0 - s).ln());
    let g_loss = -mean(&fake, &|s| s.ln());
    AdversarialLoss {
        d_loss,
        g_loss,
        clamped,
    }
}

/// `‖fa − fb‖² / (C·H·W)`.
pub fn content_loss(fa: &FeatureTensor, fb: &FeatureTensor) -> Result<f64> {
    fa.check_same_shape(fb, "content_loss")?;
    let s: f64 = fa.data().iter().zip(fb.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(s / fa.len() as f64)
}

pub fn content_grad(fa: &FeatureTensor, fb: &FeatureTensor) -> Result<FeatureTensor> {
    fa.check_same_shape(fb, "content_grad")?;
    let k = 2.0 / fa.len() as f64;
    let data = fa.data().iter().zip(fb.data()).map(|(x, y)| k * (x - y)).collect();
    Image::from_vec(fa.width(), fa.height(), fa.channels(), data)
}

/// Normalized Gram matrix `G[c, c'] = Σ_{h,w} f[h,w,c]·f[h,w,c'] / (C·H·W)`.
pub fn gram(f: &FeatureTensor) -> DMatrix<f64> {
    let c = f.channels();
    let mut g = DMatrix::zeros(c, c);
    for px in f.data().chunks_exact(c) {
        for i in 0..c {
            let vi = px[i];
            if vi == 0.0 {
                continue;
            }
            for j in i..c {
                g[(i, j)] += vi * px[j];
            }
        }
    }
    let norm = 1.0 / f.len() as f64;
    for i in 0..c {
        for j in i..c {
            let v = g[(i, j)] * norm;
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

/// Squared Frobenius distance between Gram matrices.
pub fn style_loss(fa: &FeatureTensor, fb: &FeatureTensor) -> Result<f64> {
    fa.check_same_shape(fb, "style_loss")?;
    Ok((gram(fa) - gram(fb)).norm_squared())
}

/// Gradient of [`style_loss`] w.r.t. `fa`:
/// `4/(C·H·W) · Σ_c' (G_a − G_b)[c, c'] · fa[h, w, c']`.
pub fn style_grad(fa: &FeatureTensor, fb: &FeatureTensor) -> Result<FeatureTensor> {
    fa.check_same_shape(fb, "style_grad")?;
    let diff = gram(fa) - gram(fb);
    let c = fa.channels();
    let k = 4.0 / fa.len() as f64;
    let mut out = Vec::with_capacity(fa.len());
    for px in fa.data().chunks_exact(c) {
        for i in 0..c {
            let s: f64 = (0..c).map(|j| diff[(i, j)] * px[j]).sum();
            out.push(k * s);
        }
    }
    Image::from_vec(fa.width(), fa.height(), c, out)
}

/// `Σ content + λ_s · Σ style`.
pub fn enhanced_loss(content_terms: &[f64], style_terms: &[f64], lambda_s: f64) -> f64 {
    content_terms.iter().sum::<f64>() + lambda_s * style_terms.iter().sum::<f64>()
}

/// `λ_r·l_r + l_adv + λ_m·l_m + l_e`, omitting toggled-off terms.
pub fn overall_loss(l_r: f64, l_adv: f64, l_m: f64, l_e: f64, w: &LossWeights) -> f64 {
    let mut total = w.lambda_r * l_r + w.lambda_m * l_m;
    if w.include_adv {
        total += l_adv;
    }
    if w.include_enhanced {
        total += l_e;
    }
    total
}
