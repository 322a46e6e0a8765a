mod common;

use approx::assert_abs_diff_eq;
use common::*;
use pcn_core::image::Image;
use pcn_core::metrics::*;
use pcn_core::pattern;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn harris_count_tracks_dilation_reference() {
    for seed in 0..4 {
        let img = pattern::natural(128, &mut ChaCha8Rng::seed_from_u64(seed));
        let ours = harris_count(&img, HarrisParams::default()) as f64;
        let reference = harris_reference(&img) as f64;
        assert!(reference > 0.0);
        assert!((ours - reference).abs() <= 0.1 * reference, "{ours} vs {reference}");
    }
    let square = Image::from_fn(64, 64, 3, |x, y, _| if (20..44).contains(&x) && (20..44).contains(&y) { 1.0 } else { 0.0 });
    assert_eq!(harris_count(&square, HarrisParams::default()), 4);
}

#[test]
fn psnr_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = random_image(&mut rng, 9, 7, 3);
    let b = random_image(&mut rng, 9, 7, 3);
    let mse = content_oracle(&a, &b);
    assert_abs_diff_eq!(psnr(&a, &b, 1.0).unwrap(), 10.0 * (1.0 / mse).log10(), epsilon = 1e-10);
    let shifted = a.map(|v| v + 0.1);
    assert_abs_diff_eq!(psnr(&a, &shifted, 1.0).unwrap(), 20.0, epsilon = 1e-9);
    assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_SENTINEL);
}

#[test]
fn psnr_falls_as_noise_grows() {
    let img = pattern::natural(64, &mut ChaCha8Rng::seed_from_u64(9));
    let mut last = f64::INFINITY;
    for level in [0.01, 0.02, 0.05, 0.1, 0.2] {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let noisy = Image::from_fn(64, 64, 3, |x, y, c| img.get(x, y, c) + rng.gen_range(-level..level));
        let p = psnr(&noisy, &img, 1.0).unwrap();
        assert!(p < last);
        last = p;
    }
}

#[test]
fn ssim_extremes() {
    let img = pattern::natural(48, &mut ChaCha8Rng::seed_from_u64(3));
    assert_abs_diff_eq!(ssim(&img, &img).unwrap(), 1.0, epsilon = 1e-12);
    let board = pattern::checkerboard(48, 6, 1);
    assert!(ssim(&board, &board.map(|v| 1.0 - v)).unwrap() < 0.0);
}

#[test]
fn epe_matches_exhaustive_mean() {
    use pcn_core::flow::FlowField;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = FlowField::from_fn(7, 5, |_, _| (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)));
    let b = FlowField::from_fn(7, 5, |_, _| (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)));
    let mut s = 0.0;
    for y in 0..5 {
        for x in 0..7 {
            let (p, q) = (a.get(x, y), b.get(x, y));
            s += ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt();
        }
    }
    assert_abs_diff_eq!(flow_epe(&a, &b, None).unwrap(), s / 35.0, epsilon = 1e-12);
}

#[test]
fn report_serializes_buckets() {
    let img = pattern::natural(32, &mut ChaCha8Rng::seed_from_u64(5));
    let rec = evaluate_pair("a", &img, &img, &img, HarrisParams::default()).unwrap();
    assert_eq!(rec.psnr, PSNR_SENTINEL);
    let report = EvalReport::from_records(vec![rec]);
    let json = serde_json::to_string(&report).unwrap();
    let back: EvalReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, report);
}
