//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use pcn_core::flow::FlowField;
use pcn_core::image::Image;
use pcn_core::losses::LossWeights;
use pcn_core::net::{ForwardTrace, Network, Target};
use pcn_core::warp::{warp_backward, warp_bilinear, Border};
use rand::Rng;

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

pub fn random_image<R: Rng>(rng: &mut R, w: usize, h: usize, c: usize) -> Image {
    Image::from_fn(w, h, c, |_, _, _| rng.gen::<f64>())
}

/// Flow whose sample points keep at least `margin` from every lattice line.
pub fn flow_off_lattice<R: Rng>(rng: &mut R, w: usize, h: usize, max: f64, margin: f64) -> FlowField {
    let mut draw = |base: usize| loop {
        let d = rng.gen_range(-max..max);
        let p = base as f64 + d;
        if (p - p.round()).abs() > margin {
            return d;
        }
    };
    FlowField::from_fn(w, h, |x, y| (draw(x), draw(y)))
}

pub fn mean_abs_diff(a: &Image, b: &Image) -> f64 {
    let mut s = 0.0;
    for y in 0..a.height() {
        for x in 0..a.width() {
            for c in 0..a.channels() {
                s += (a.get(x, y, c) - b.get(x, y, c)).abs();
            }
        }
    }
    s / (a.width() * a.height() * a.channels()) as f64
}

pub fn content_oracle(a: &Image, b: &Image) -> f64 {
    let mut s = 0.0;
    for y in 0..a.height() {
        for x in 0..a.width() {
            for c in 0..a.channels() {
                let d = a.get(x, y, c) - b.get(x, y, c);
                s += d * d;
            }
        }
    }
    s / (a.width() * a.height() * a.channels()) as f64
}

pub fn gram_oracle(f: &Image) -> Vec<Vec<f64>> {
    let c = f.channels();
    let n = (f.width() * f.height() * c) as f64;
    let mut g = vec![vec![0.0; c]; c];
    for (i, row) in g.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            for y in 0..f.height() {
                for x in 0..f.width() {
                    *v += f.get(x, y, i) * f.get(x, y, j);
                }
            }
            *v /= n;
        }
    }
    g
}

pub fn style_oracle(a: &Image, b: &Image) -> f64 {
    let (ga, gb) = (gram_oracle(a), gram_oracle(b));
    let mut s = 0.0;
    for i in 0..ga.len() {
        for j in 0..ga.len() {
            s += (ga[i][j] - gb[i][j]).powi(2);
        }
    }
    s
}

/// One 2×2 mean-pooling step.
pub fn pool_oracle(img: &Image) -> Image {
    Image::from_fn(img.width() / 2, img.height() / 2, img.channels(), |x, y, c| {
        (img.get(2 * x, 2 * y, c)
            + img.get(2 * x + 1, 2 * y, c)
            + img.get(2 * x, 2 * y + 1, c)
            + img.get(2 * x + 1, 2 * y + 1, c))
            / 4.0
    })
}

pub fn multi_scale_oracle(preds: &[Image], gt: &Image) -> f64 {
    let mut target = gt.clone();
    let mut total = 0.0;
    for p in preds {
        target = pool_oracle(&target);
        total += mean_abs_diff(p, &target);
    }
    total
}

/// `(d_loss, g_loss)` with scores clamped to `[1e-7, 1 − 1e-7]`.
pub fn adversarial_oracle(real: &Image, fake: &Image) -> (f64, f64) {
    let clamp = |s: f64| s.clamp(1e-7, 1.0 - 1e-7);
    let (mut lr, mut lf, mut lg) = (0.0, 0.0, 0.0);
    for &s in real.data() {
        lr += clamp(s).ln();
    }
    for &s in fake.data() {
        lf += (1.0 - clamp(s)).ln();
        lg += clamp(s).ln();
    }
    let (nr, nf) = (real.data().len() as f64, fake.data().len() as f64);
    (-lr / nr - lf / nf, -lg / nf)
}

/// Worst relative error of [`warp_backward`] against central differences of
/// `Σ g ⊙ warp(input, flow)` over every input value and flow component.
pub fn warp_fd_worst(input: &Image, flow: &FlowField, g: &Image, border: Border, eps: f64) -> f64 {
    let loss = |img: &Image, f: &FlowField| -> f64 {
        let out = warp_bilinear(img, f, border).unwrap();
        out.data().iter().zip(g.data()).map(|(a, b)| a * b).sum()
    };
    let (gin, gflow) = warp_backward(input, flow, g, border).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..input.len() {
        let (mut p, mut m) = (input.clone(), input.clone());
        p.data_mut()[i] += eps;
        m.data_mut()[i] -= eps;
        let n = (loss(&p, flow) - loss(&m, flow)) / (2.0 * eps);
        worst = worst.max(rel_err(gin.data()[i], n, 1e-6));
    }
    for i in 0..flow.data().len() {
        let (mut p, mut m) = (flow.clone(), flow.clone());
        p.data_mut()[i] += eps;
        m.data_mut()[i] -= eps;
        let n = (loss(input, &p) - loss(input, &m)) / (2.0 * eps);
        worst = worst.max(rel_err(gflow.data()[i], n, 1e-6));
    }
    worst
}

/// Result of a parameter-gradient audit.
#[derive(Debug, Clone)]
pub struct Audit {
    pub worst: f64,
    pub worst_param: String,
    pub checked: usize,
    pub failed: usize,
}

/// Compares every analytic parameter gradient with central differences of the
/// loss evaluated on the fixed piecewise pattern of the unperturbed pass.
pub fn audit_parameters(
    net: &mut Network,
    input: &Image,
    target: &Target,
    w: &LossWeights,
    eps: f64,
    tol: f64,
) -> Audit {
    net.zero_grad();
    let trace: ForwardTrace = net.forward(input).unwrap();
    net.backward(&trace, target, w, 1.0).unwrap();
    let analytic: Vec<f64> = net.params().iter().flat_map(|p| p.grad().unwrap().to_vec()).collect();
    let names: Vec<String> = net
        .params()
        .iter()
        .zip(net.param_names())
        .flat_map(|(p, n)| (0..p.len()).map(move |i| format!("{n}[{i}]")))
        .collect();
    let base = net.flat_params();
    // the fixed-pattern loss coincides with the real one at the base point
    let direct = net.evaluate(input, target, w).unwrap().total;
    let pinned = net.evaluate_on_pattern(input, target, w, &trace).unwrap().total;
    assert!((direct - pinned).abs() <= 1e-12 * direct.abs().max(1.0));
    let mut audit = Audit {
        worst: 0.0,
        worst_param: String::new(),
        checked: base.len(),
        failed: 0,
    };
    let mut p = base.clone();
    for i in 0..base.len() {
        p[i] = base[i] + eps;
        net.set_flat_params(&p).unwrap();
        let up = net.evaluate_on_pattern(input, target, w, &trace).unwrap().total;
        p[i] = base[i] - eps;
        net.set_flat_params(&p).unwrap();
        let down = net.evaluate_on_pattern(input, target, w, &trace).unwrap().total;
        p[i] = base[i];
        let e = rel_err(analytic[i], (up - down) / (2.0 * eps), 1e-6);
        if e > tol {
            audit.failed += 1;
        }
        if e > audit.worst {
            audit.worst = e;
            audit.worst_param = names[i].clone();
        }
    }
    net.set_flat_params(&base).unwrap();
    audit
}

/// Harris corner count via a dilation comparison: a pixel is a corner when
/// it equals the 3×3 maximum of the response and exceeds 1% of the global
/// maximum.
pub fn harris_reference(img: &Image) -> usize {
    let (w, h) = (img.width(), img.height());
    let gray: Vec<f64> = (0..w * h)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            0.299 * img.get(x, y, 0) + 0.587 * img.get(x, y, 1) + 0.114 * img.get(x, y, 2)
        })
        .collect();
    let px = |p: &[f64], x: i64, y: i64| p[(y.clamp(0, h as i64 - 1) * w as i64 + x.clamp(0, w as i64 - 1)) as usize];
    let sobel_x = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    let sobel_y = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];
    let mut sxx = vec![0.0; w * h];
    let mut syy = vec![0.0; w * h];
    let mut sxy = vec![0.0; w * h];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let (mut gx, mut gy) = (0.0, 0.0);
            for j in 0..3 {
                for i in 0..3 {
                    let v = px(&gray, x + i as i64 - 1, y + j as i64 - 1);
                    gx += sobel_x[j][i] * v;
                    gy += sobel_y[j][i] * v;
                }
            }
            let k = (y * w as i64 + x) as usize;
            sxx[k] = gx * gx;
            syy[k] = gy * gy;
            sxy[k] = gx * gy;
        }
    }
    let mut resp = vec![0.0; w * h];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
            for j in -1..=1 {
                for i in -1..=1 {
                    a += px(&sxx, x + i, y + j);
                    b += px(&syy, x + i, y + j);
                    c += px(&sxy, x + i, y + j);
                }
            }
            resp[(y * w as i64 + x) as usize] = a * b - c * c - 0.04 * (a + b) * (a + b);
        }
    }
    let max = resp.iter().copied().fold(f64::MIN, f64::max);
    let mut count = 0;
    for y in 1..h as i64 - 1 {
        for x in 1..w as i64 - 1 {
            let v = resp[(y * w as i64 + x) as usize];
            let mut local = f64::MIN;
            for j in -1..=1 {
                for i in -1..=1 {
                    local = local.max(px(&resp, x + i, y + j));
                }
            }
            if v > 0.01 * max && v == local {
                count += 1;
            }
        }
    }
    count
}
