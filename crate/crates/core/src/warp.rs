//! Bilinear resampling of images and feature maps by a flow field, with the
//! exact backward pass, and mean-pool downsampling.

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::image::Image;

/// Treatment of sample taps falling outside the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Border {
    /// Outside taps read as zero.
    #[default]
    Zeros,
    /// Outside taps read the nearest edge pixel.
    Clamp,
}

fn check_shapes(input: &Image, flow: &FlowField) -> Result<()> {
    if input.width() != flow.width() || input.height() != flow.height() {
        return Err(Error::Shape(format!(
            "image is {}x{} but flow is {}x{}",
            input.width(),
            input.height(),
            flow.width(),
            flow.height()
        )));
    }
    Ok(())
}

/// The four bilinear taps around a continuous location: pixel indices (or
/// `None` for a zero tap) and their weights.
#[derive(Debug, Clone, Copy)]
struct Taps {
    idx: [Option<usize>; 4],
    w: [f64; 4],
    // fractional offsets inside the cell
    ax: f64,
    ay: f64,
}

#[inline]
fn taps(width: usize, height: usize, sx: f64, sy: f64, border: Border) -> Taps {
    taps_in_cell(width, height, sx, sy, (sx.floor(), sy.floor()), border)
}

/// Taps of the cell with top-left corner `cell`; the weights extrapolate
/// linearly when the location lies outside that cell.
#[inline]
fn taps_in_cell(width: usize, height: usize, sx: f64, sy: f64, cell: (f64, f64), border: Border) -> Taps {
    let (fx, fy) = cell;
    let ax = sx - fx;
    let ay = sy - fy;
    let (x0, y0) = (fx as isize, fy as isize);
    let resolve = |x: isize, y: isize| -> Option<usize> {
        let (w, h) = (width as isize, height as isize);
        match border {
            Border::Zeros => {
                if x < 0 || y < 0 || x >= w || y >= h {
                    None
                } else {
                    Some(y as usize * width + x as usize)
                }
            }
            Border::Clamp => {
                let x = x.clamp(0, w - 1) as usize;
                let y = y.clamp(0, h - 1) as usize;
                Some(y * width + x)
            }
        }
    };
    Taps {
        idx: [
            resolve(x0, y0),
            resolve(x0 + 1, y0),
            resolve(x0, y0 + 1),
            resolve(x0 + 1, y0 + 1),
        ],
        w: [
            (1.0 - ax) * (1.0 - ay),
            ax * (1.0 - ay),
            (1.0 - ax) * ay,
            ax * ay,
        ],
        ax,
        ay,
    }
}

/// Bilinear sample of one channel at a continuous location.
#[inline]
pub fn sample_bilinear(img: &Image, sx: f64, sy: f64, c: usize, border: Border) -> f64 {
    let t = taps(img.width(), img.height(), sx, sy, border);
    let ch = img.channels();
    let data = img.data();
    if t.ax == 0.0 && t.ay == 0.0 {
        return t.idx[0].map_or(0.0, |i| data[i * ch + c]);
    }
    let mut acc = 0.0;
    for k in 0..4 {
        if let Some(i) = t.idx[k] {
            acc += t.w[k] * data[i * ch + c];
        }
    }
    acc
}

/// `output(u, v) = input(u + du, v + dv)` with bilinear interpolation.
pub fn warp_bilinear(input: &Image, flow: &FlowField, border: Border) -> Result<Image> {
    check_shapes(input, flow)?;
    let (w, h, ch) = (input.width(), input.height(), input.channels());
    let src = input.data();
    let mut out = Image::new(w, h, ch);
    let dst = out.data_mut();
    for y in 0..h {
        for x in 0..w {
            let (du, dv) = flow.get(x, y);
            let t = taps(w, h, x as f64 + du, y as f64 + dv, border);
            let o = (y * w + x) * ch;
            if t.ax == 0.0 && t.ay == 0.0 {
                // exact lattice hit: copy, so a zero flow is a bit-exact identity
                if let Some(i) = t.idx[0] {
                    dst[o..o + ch].copy_from_slice(&src[i * ch..i * ch + ch]);
                }
                continue;
            }
            for k in 0..4 {
                let (Some(i), wk) = (t.idx[k], t.w[k]) else {
                    continue;
                };
                for c in 0..ch {
                    dst[o + c] += wk * src[i * ch + c];
                }
            }
        }
    }
    Ok(out)
}

/// [`warp_bilinear`] with every output pixel interpolated inside the cell that
/// `reference` selects for it. This is the smooth branch of the warp around
/// `reference`; both agree wherever `flow` selects the same cells.
pub fn warp_bilinear_in_cells(input: &Image, flow: &FlowField, reference: &FlowField, border: Border) -> Result<Image> {
    check_shapes(input, flow)?;
    check_shapes(input, reference)?;
    let (w, h, ch) = (input.width(), input.height(), input.channels());
    let src = input.data();
    let mut out = Image::new(w, h, ch);
    let dst = out.data_mut();
    for y in 0..h {
        for x in 0..w {
            let (du, dv) = flow.get(x, y);
            let (ru, rv) = reference.get(x, y);
            let cell = ((x as f64 + ru).floor(), (y as f64 + rv).floor());
            let t = taps_in_cell(w, h, x as f64 + du, y as f64 + dv, cell, border);
            let o = (y * w + x) * ch;
            for k in 0..4 {
                let (Some(i), wk) = (t.idx[k], t.w[k]) else {
                    continue;
                };
                for c in 0..ch {
                    dst[o + c] += wk * src[i * ch + c];
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`warp_bilinear`] with respect to the input values and the
/// flow displacements, given the gradient of the loss w.r.t. its output.
///
/// At exact lattice coordinates the derivative w.r.t. the flow is taken from
/// the cell whose top-left corner is the sample point.
pub fn warp_backward(
    input: &Image,
    flow: &FlowField,
    grad_output: &Image,
    border: Border,
) -> Result<(Image, FlowField)> {
    check_shapes(input, flow)?;
    if grad_output.width() != input.width()
        || grad_output.height() != input.height()
        || grad_output.channels() != input.channels()
    {
        return Err(Error::Shape("grad_output does not match the warp output".into()));
    }
    let (w, h, ch) = (input.width(), input.height(), input.channels());
    let src = input.data();
    let g = grad_output.data();
    let mut grad_in = Image::new(w, h, ch);
    let mut grad_flow = FlowField::zeros(w, h);
    {
        let gi = grad_in.data_mut();
        for y in 0..h {
            for x in 0..w {
                let (du, dv) = flow.get(x, y);
                let t = taps(w, h, x as f64 + du, y as f64 + dv, border);
                let o = (y * w + x) * ch;
                let (mut gdu, mut gdv) = (0.0, 0.0);
                for c in 0..ch {
                    let go = g[o + c];
                    let v = |k: usize| t.idx[k].map_or(0.0, |i| src[i * ch + c]);
                    let (v00, v10, v01, v11) = (v(0), v(1), v(2), v(3));
                    gdu += go * ((1.0 - t.ay) * (v10 - v00) + t.ay * (v11 - v01));
                    gdv += go * ((1.0 - t.ax) * (v01 - v00) + t.ax * (v11 - v10));
                    if go != 0.0 {
                        for k in 0..4 {
                            if let Some(i) = t.idx[k] {
                                gi[i * ch + c] += t.w[k] * go;
                            }
                        }
                    }
                }
                grad_flow.set(x, y, (gdu, gdv));
            }
        }
    }
    Ok((grad_in, grad_flow))
}

/// `levels` rounds of 2×2 mean pooling.
pub fn downsample_avg(input: &Image, levels: usize) -> Result<Image> {
    if levels >= usize::BITS as usize {
        return Err(Error::Precondition(format!("{levels} levels is too many")));
    }
    let f = 1usize << levels;
    if !input.width().is_multiple_of(f) || !input.height().is_multiple_of(f) {
        return Err(Error::Precondition(format!(
            "{}x{} is not divisible by 2^{levels}",
            input.width(),
            input.height()
        )));
    }
    let mut cur = input.clone();
    for _ in 0..levels {
        cur = pool2(&cur);
    }
    Ok(cur)
}

fn pool2(img: &Image) -> Image {
    let ch = img.channels();
    Image::from_fn(img.width() / 2, img.height() / 2, ch, |x, y, c| {
        (img.get(2 * x, 2 * y, c)
            + img.get(2 * x + 1, 2 * y, c)
            + img.get(2 * x, 2 * y + 1, c)
            + img.get(2 * x + 1, 2 * y + 1, c))
            * 0.25
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize, ch: usize) -> Image {
        Image::from_fn(w, h, ch, |x, y, c| (x * 3 + y * 5 + c) as f64 / 50.0)
    }

    #[test]
    fn zero_flow_is_identity_bitwise() {
        let mut img = ramp(6, 5, 3);
        img.set(0, 0, 0, -0.0);
        for border in [Border::Zeros, Border::Clamp] {
            let out = warp_bilinear(&img, &FlowField::zeros(6, 5), border).unwrap();
            let same = out.data().iter().zip(img.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            assert!(same);
        }
    }

    #[test]
    fn integer_shift_with_clamp_repeats_last_column() {
        let img = ramp(5, 4, 1);
        let out = warp_bilinear(&img, &FlowField::constant(5, 4, (1.0, 0.0)), Border::Clamp).unwrap();
        for y in 0..4 {
            for x in 0..5 {
                assert_eq!(out.get(x, y, 0), img.get((x + 1).min(4), y, 0));
            }
        }
    }

    #[test]
    fn half_pixel_shift_averages_neighbours() {
        let img = Image::from_fn(5, 5, 1, |x, y, _| ((x * x + 7 * y) % 11) as f64);
        let out = warp_bilinear(&img, &FlowField::constant(5, 5, (0.5, 0.0)), Border::Zeros).unwrap();
        assert_eq!(out.get(2, 2, 0), 0.5 * (img.get(2, 2, 0) + img.get(3, 2, 0)));
    }

    #[test]
    fn zeros_border_fades_out() {
        let img = Image::filled(4, 4, 1, 1.0);
        let out = warp_bilinear(&img, &FlowField::constant(4, 4, (0.25, 0.0)), Border::Zeros).unwrap();
        assert!((out.get(3, 0, 0) - 0.75).abs() < 1e-15);
        let out = warp_bilinear(&img, &FlowField::constant(4, 4, (10.0, 0.0)), Border::Zeros).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        assert!(warp_bilinear(&ramp(4, 4, 1), &FlowField::zeros(4, 3), Border::Zeros).is_err());
    }

    #[test]
    fn identity_backward() {
        let img = ramp(5, 5, 2);
        let ones = Image::filled(5, 5, 2, 1.0);
        let (gi, _) = warp_backward(&img, &FlowField::zeros(5, 5), &ones, Border::Zeros).unwrap();
        assert!(gi.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn constant_image_has_no_flow_gradient() {
        let img = Image::filled(6, 6, 3, 0.4);
        let flow = FlowField::from_fn(6, 6, |x, y| (0.3 * x as f64 - 0.7, 0.1 * y as f64 + 0.2));
        let g = Image::from_fn(6, 6, 3, |x, y, c| (x + y + c) as f64);
        let (_, gf) = warp_backward(&img, &flow, &g, Border::Clamp).unwrap();
        assert!(gf.data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn downsample_examples() {
        let c = Image::filled(8, 8, 3, 0.3);
        assert_eq!(downsample_avg(&c, 3).unwrap(), Image::filled(1, 1, 3, 0.3));
        let img = Image::from_vec(2, 2, 1, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(downsample_avg(&img, 1).unwrap().data(), &[0.5]);
        assert!(downsample_avg(&ramp(6, 6, 1), 2).is_err());
        assert_eq!(downsample_avg(&img, 0).unwrap(), img);
    }
}
