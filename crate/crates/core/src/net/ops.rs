//! Layer kernels over `[C, H, W]` tensors and their backward passes.

use super::tensor::Tensor;

pub const LEAKY_SLOPE: f64 = 0.2;

/// Row-wise loop bounds for a kernel tap offset `d` on an axis of length `n`:
/// output indices `lo..hi` read input index `i + d`.
#[inline]
fn tap_range(d: isize, n: usize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d.max(0)) as usize;
    (lo, hi.max(lo))
}

/// 3×3 "same" convolution with zero padding.
pub fn conv3x3(input: &Tensor, weight: &[f64], bias: &[f64], cout: usize) -> Tensor {
    let (cin, h, w) = input.chw();
    debug_assert_eq!(weight.len(), cout * cin * 9);
    let mut out = Tensor::zeros(&[cout, h, w]);
    let src = input.data();
    let dst = out.data_mut();
    for co in 0..cout {
        let oplane = &mut dst[co * h * w..(co + 1) * h * w];
        oplane.iter_mut().for_each(|v| *v = bias[co]);
        for ci in 0..cin {
            let iplane = &src[ci * h * w..(ci + 1) * h * w];
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (y0, y1) = tap_range(dy, h);
                for kx in 0..3 {
                    let dx = kx as isize - 1;
                    let (x0, x1) = tap_range(dx, w);
                    let wv = weight[((co * cin + ci) * 3 + ky) * 3 + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for y in y0..y1 {
                        let iy = (y as isize + dy) as usize;
                        let orow = &mut oplane[y * w + x0..y * w + x1];
                        let ix0 = (x0 as isize + dx) as usize;
                        let irow = &iplane[iy * w + ix0..iy * w + ix0 + (x1 - x0)];
                        for (o, i) in orow.iter_mut().zip(irow) {
                            *o += wv * i;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates weight and bias gradients into `gw`/`gb` and returns the
/// gradient w.r.t. the input when `need_input` is set.
pub fn conv3x3_backward(
    input: &Tensor,
    weight: &[f64],
    grad_out: &Tensor,
    gw: &mut [f64],
    gb: &mut [f64],
    need_input: bool,
) -> Option<Tensor> {
    let (cin, h, w) = input.chw();
    let (cout, _, _) = grad_out.chw();
    let src = input.data();
    let go = grad_out.data();
    let mut gin = need_input.then(|| Tensor::zeros(&[cin, h, w]));
    for co in 0..cout {
        let gplane = &go[co * h * w..(co + 1) * h * w];
        gb[co] += gplane.iter().sum::<f64>();
        for ci in 0..cin {
            let iplane = &src[ci * h * w..(ci + 1) * h * w];
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (y0, y1) = tap_range(dy, h);
                for kx in 0..3 {
                    let dx = kx as isize - 1;
                    let (x0, x1) = tap_range(dx, w);
                    let widx = ((co * cin + ci) * 3 + ky) * 3 + kx;
                    let wv = weight[widx];
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let iy = (y as isize + dy) as usize;
                        let ix0 = (x0 as isize + dx) as usize;
                        let grow = &gplane[y * w + x0..y * w + x1];
                        let irow = &iplane[iy * w + ix0..iy * w + ix0 + (x1 - x0)];
                        acc += grow.iter().zip(irow).map(|(g, i)| g * i).sum::<f64>();
                        if let Some(gin) = gin.as_mut() {
                            if wv != 0.0 {
                                let gi = &mut gin.data_mut()[ci * h * w..(ci + 1) * h * w];
                                let grow_in = &mut gi[iy * w + ix0..iy * w + ix0 + (x1 - x0)];
                                for (d, g) in grow_in.iter_mut().zip(grow) {
                                    *d += wv * g;
                                }
                            }
                        }
                    }
                    gw[widx] += acc;
                }
            }
        }
    }
    gin
}

pub fn leaky_relu(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    out.data_mut()
        .iter_mut()
        .for_each(|v| *v = if *v > 0.0 { *v } else { LEAKY_SLOPE * *v });
    out
}

/// Leaky ReLU whose active set is taken from `reference` rather than `x`.
pub fn leaky_relu_masked(x: &Tensor, reference: &Tensor) -> Tensor {
    let mut out = x.clone();
    for (v, &r) in out.data_mut().iter_mut().zip(reference.data()) {
        if r <= 0.0 {
            *v *= LEAKY_SLOPE;
        }
    }
    out
}

/// Gradient through a leaky ReLU given its pre-activation.
pub fn leaky_relu_backward(pre: &Tensor, grad: &mut Tensor) {
    for (g, &x) in grad.data_mut().iter_mut().zip(pre.data()) {
        if x <= 0.0 {
            *g *= LEAKY_SLOPE;
        }
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    out.data_mut().iter_mut().for_each(|v| *v = 1.0 / (1.0 + (-*v).exp()));
    out
}

/// Gradient through a sigmoid given its output.
pub fn sigmoid_backward(out: &Tensor, grad: &mut Tensor) {
    for (g, &s) in grad.data_mut().iter_mut().zip(out.data()) {
        *g *= s * (1.0 - s);
    }
}

pub fn avg_pool2(x: &Tensor) -> Tensor {
    let (c, h, w) = x.chw();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[c, oh, ow]);
    let src = x.data();
    let dst = out.data_mut();
    for ch in 0..c {
        let ip = &src[ch * h * w..];
        for y in 0..oh {
            for xx in 0..ow {
                let i = 2 * y * w + 2 * xx;
                dst[(ch * oh + y) * ow + xx] = 0.25 * (ip[i] + ip[i + 1] + ip[i + w] + ip[i + w + 1]);
            }
        }
    }
    out
}

pub fn avg_pool2_backward(grad_out: &Tensor) -> Tensor {
    let (c, oh, ow) = grad_out.chw();
    let (h, w) = (oh * 2, ow * 2);
    let mut gin = Tensor::zeros(&[c, h, w]);
    let go = grad_out.data();
    let gi = gin.data_mut();
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let g = 0.25 * go[(ch * oh + y) * ow + x];
                let i = ch * h * w + 2 * y * w + 2 * x;
                gi[i] = g;
                gi[i + 1] = g;
                gi[i + w] = g;
                gi[i + w + 1] = g;
            }
        }
    }
    gin
}

/// Nearest-neighbour ×2 upsampling.
pub fn upsample2(x: &Tensor) -> Tensor {
    let (c, h, w) = x.chw();
    let (oh, ow) = (h * 2, w * 2);
    let mut out = Tensor::zeros(&[c, oh, ow]);
    let src = x.data();
    let dst = out.data_mut();
    for ch in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                dst[(ch * oh + y) * ow + xx] = src[(ch * h + y / 2) * w + xx / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward(grad_out: &Tensor) -> Tensor {
    let (c, oh, ow) = grad_out.chw();
    let (h, w) = (oh / 2, ow / 2);
    let mut gin = Tensor::zeros(&[c, h, w]);
    let go = grad_out.data();
    let gi = gin.data_mut();
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                gi[(ch * h + y / 2) * w + x / 2] += go[(ch * oh + y) * ow + x];
            }
        }
    }
    gin
}

/// Channel concatenation `[a; b]`.
pub fn concat(a: &Tensor, b: &Tensor) -> Tensor {
    let (ca, h, w) = a.chw();
    let (cb, hb, wb) = b.chw();
    assert_eq!((h, w), (hb, wb), "concat needs equal spatial size");
    let mut data = Vec::with_capacity((ca + cb) * h * w);
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Tensor::from_vec(&[ca + cb, h, w], data).expect("consistent shape")
}

/// Splits a gradient of `[a; b]` after `ca` channels.
pub fn split(grad: &Tensor, ca: usize) -> (Tensor, Tensor) {
    let (c, h, w) = grad.chw();
    let (left, right) = grad.data().split_at(ca * h * w);
    (
        Tensor::from_vec(&[ca, h, w], left.to_vec()).expect("consistent shape"),
        Tensor::from_vec(&[c - ca, h, w], right.to_vec()).expect("consistent shape"),
    )
}

pub fn add_assign(acc: &mut Tensor, other: &Tensor) {
    debug_assert_eq!(acc.shape(), other.shape());
    for (a, b) in acc.data_mut().iter_mut().zip(other.data()) {
        *a += b;
    }
}
