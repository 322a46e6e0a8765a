//! Procedural test images: calibration charts and natural-image surrogates
//! with a 1/f amplitude spectrum.

use std::f64::consts::PI;

use rand::Rng;

use crate::image::Image;

pub fn checkerboard(side: usize, cell: usize, channels: usize) -> Image {
    Image::from_fn(side, side, channels, |x, y, _| ((x / cell + y / cell) % 2) as f64)
}

/// Dark lines of `thickness` pixels every `spacing` pixels on a light field.
pub fn line_grid(side: usize, spacing: usize, thickness: usize, channels: usize) -> Image {
    Image::from_fn(side, side, channels, |x, y, _| {
        if x % spacing < thickness || y % spacing < thickness {
            0.1
        } else {
            0.9
        }
    })
}

/// Smooth separable sinusoid pattern with the given period in pixels.
pub fn sinusoid_grid(side: usize, period: f64, channels: usize) -> Image {
    Image::from_fn(side, side, channels, |x, y, c| {
        let phase = c as f64 * 0.7;
        0.5 + 0.2 * (2.0 * PI * x as f64 / period + phase).sin() + 0.2 * (2.0 * PI * y as f64 / period).cos()
    })
}

/// Random RGB image whose amplitude spectrum falls off as 1/f, the
/// statistics of natural photographs. Frequencies span one cycle per image
/// up to a period of four pixels.
pub fn natural<R: Rng + ?Sized>(side: usize, rng: &mut R) -> Image {
    const WAVES: usize = 96;
    let fmax = side as f64 / 4.0;
    let waves: Vec<_> = (0..WAVES)
        .map(|_| {
            // log-uniform frequency, 1/f amplitude
            let f = fmax.powf(rng.gen::<f64>()).max(1.0);
            let theta = rng.gen::<f64>() * PI;
            let phase = rng.gen::<f64>() * 2.0 * PI;
            let tint: [f64; 3] = [rng.gen_range(0.6..1.0), rng.gen_range(0.6..1.0), rng.gen_range(0.6..1.0)];
            let (kx, ky) = (f * theta.cos() * 2.0 * PI / side as f64, f * theta.sin() * 2.0 * PI / side as f64);
            (kx, ky, phase, 1.0 / f, tint)
        })
        .collect();
    let mut img = Image::from_fn(side, side, 3, |x, y, c| {
        waves
            .iter()
            .map(|&(kx, ky, ph, a, tint)| a * tint[c] * (kx * x as f64 + ky * y as f64 + ph).sin())
            .sum()
    });
    let (lo, hi) = img
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let span = (hi - lo).max(1e-12);
    img.data_mut().iter_mut().for_each(|v| *v = 0.05 + 0.9 * (*v - lo) / span);
    img
}
