//! One test per acceptance criterion; each prints a PASS/FAIL line before
//! asserting.

mod common;

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use common::*;
use pcn_core::camera::{
    forward_radius, invert_radius, sample_model, Geometry, ParamRanges, RadialModel, DEFAULT_SAMPLE_RMAX,
};
use pcn_core::flow::{build_pyramid, FlowField};
use pcn_core::image::Image;
use pcn_core::losses::*;
use pcn_core::metrics::{avp, psnr, psnr_masked, ssim, stratify, Bucket};
use pcn_core::net::{
    evaluate_set, load_training_set, read_checkpoint, train_on, write_checkpoint, AdamConfig, LossReport, NetConfig,
    Network, Target, TrainConfig, TrainSample,
};
use pcn_core::synth::{distort_image, make_dataset, rectified_valid_mask, rectify_image, SynthConfig};
use pcn_core::warp::{warp_bilinear, Border};
use pcn_core::pattern;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(id: u32, name: &str, ok: bool, detail: String) {
    println!("{} criterion {id} ({name}): {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {id} ({name}) failed: {detail}");
}

fn sampled(rng: &mut ChaCha8Rng, side: usize) -> RadialModel {
    sample_model(rng, &ParamRanges::default(), DEFAULT_SAMPLE_RMAX, Geometry::square(side)).unwrap()
}

#[test]
fn criterion_01_radius_inversion() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pairs: Vec<(RadialModel, f64)> = (0..10_000)
        .map(|_| {
            let m = sampled(&mut rng, 256);
            let r_u = rng.gen::<f64>() * forward_radius(&m, DEFAULT_SAMPLE_RMAX).unwrap();
            (m, r_u)
        })
        .collect();
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for (m, r_u) in &pairs {
        let r_d = invert_radius(m, *r_u, 1e-9).unwrap();
        worst = worst.max((forward_radius(m, r_d).unwrap() - r_u).abs());
    }
    let elapsed = start.elapsed();
    report(
        1,
        "radius inversion",
        worst <= 1e-9 && elapsed < Duration::from_secs(1),
        format!("worst residual {worst:.3e}, {:.3} s for 10000 pairs", elapsed.as_secs_f64()),
    );
}

#[test]
fn criterion_02_warp_identity_and_gradients() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut identical = true;
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let input = random_image(&mut rng, 8, 8, 3);
        let border = if i % 2 == 0 { Border::Zeros } else { Border::Clamp };
        let same = warp_bilinear(&input, &FlowField::zeros(8, 8), border).unwrap();
        identical &= same.data().iter().zip(input.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        let flow = flow_off_lattice(&mut rng, 8, 8, 2.5, 0.01);
        let g = random_image(&mut rng, 8, 8, 3);
        worst = worst.max(warp_fd_worst(&input, &flow, &g, border, 1e-4));
    }
    let elapsed = start.elapsed();
    report(
        2,
        "warp identity and gradients",
        identical && worst <= 1e-4 && elapsed < Duration::from_secs(10),
        format!(
            "zero flow bit-identical: {identical}, worst relative error {worst:.3e}, {:.3} s",
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_03_pyramid_monotonicity() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut passed = 0;
    for _ in 0..100 {
        let m = sampled(&mut rng, 128);
        let pyr = build_pyramid(&m, 128, 5).unwrap();
        let d = pyr.max_displacements();
        if d.windows(2).all(|w| w[1] <= w[0]) {
            passed += 1;
        }
    }
    report(3, "pyramid monotonicity", passed == 100, format!("{passed}/100 models non-increasing"));
}

#[test]
fn criterion_04_round_trip_rectification() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut scores = Vec::new();
    for i in 0..20 {
        let img = pattern::natural(256, &mut ChaCha8Rng::seed_from_u64(4000 + i));
        let m = sampled(&mut rng, 256);
        let (fish, mask) = distort_image(&img, &m).unwrap();
        let back = rectify_image(&fish, &m).unwrap();
        let valid = rectified_valid_mask(&m, &mask).unwrap().erode(4);
        scores.push(psnr_masked(&back, &img, &valid, 1.0).unwrap());
    }
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    report(
        4,
        "round-trip rectification",
        mean >= 30.0 && min >= 26.0,
        format!("interior PSNR mean {mean:.2} dB, min {min:.2} dB"),
    );
}

#[test]
fn criterion_05_loss_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    let mut psd = true;
    for _ in 0..20 {
        let a = random_image(&mut rng, 4, 4, 3);
        let b = random_image(&mut rng, 4, 4, 3);
        worst = worst.max((l1_loss(&a, &b).unwrap() - mean_abs_diff(&a, &b)).abs());
        worst = worst.max((content_loss(&a, &b).unwrap() - content_oracle(&a, &b)).abs());
        worst = worst.max((style_loss(&a, &b).unwrap() - style_oracle(&a, &b)).abs());
        let g = gram(&a);
        let o = gram_oracle(&a);
        for i in 0..3 {
            for j in 0..3 {
                worst = worst.max((g[(i, j)] - o[i][j]).abs());
            }
        }
        psd &= g == g.transpose() && g.clone().symmetric_eigen().eigenvalues.iter().all(|&l| l >= -1e-12);
        let preds = vec![random_image(&mut rng, 2, 2, 3), random_image(&mut rng, 1, 1, 3)];
        worst = worst.max((multi_scale_l1(&preds, &a).unwrap() - multi_scale_oracle(&preds, &a)).abs());
        let adv = adversarial_loss(&a, &b);
        let (d, gl) = adversarial_oracle(&a, &b);
        worst = worst.max((adv.d_loss - d).abs()).max((adv.g_loss - gl).abs());
    }
    let hand = overall_loss(1.0, 0.0, 1.0, 0.0, &LossWeights::default());
    report(
        5,
        "loss oracles",
        worst <= 1e-10 && psd && hand == 65.0,
        format!("worst absolute error {worst:.3e}, gram symmetric PSD: {psd}, hand case {hand}"),
    );
}

const TOY_LR: f64 = 1e-3;

struct ToyData {
    train: Vec<TrainSample>,
    held: Vec<TrainSample>,
}

fn toy_data() -> &'static ToyData {
    static DATA: OnceLock<ToyData> = OnceLock::new();
    DATA.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("src");
        std::fs::create_dir_all(&src).unwrap();
        for i in 0..80u64 {
            let img = pattern::natural(128, &mut ChaCha8Rng::seed_from_u64(1000 + i));
            img.save_png(src.join(format!("n{i:03}.png"))).unwrap();
        }
        let out = dir.path().join("data");
        let cfg = SynthConfig {
            size: 64,
            ..SynthConfig::default()
        };
        make_dataset(&src, &out, 80, 7, &cfg).unwrap();
        let mut all = load_training_set(&out, &NetConfig::default()).unwrap();
        assert_eq!(all.len(), 80);
        let held = all.split_off(64);
        ToyData { train: all, held }
    })
}

fn toy_net(corrected: bool) -> NetConfig {
    NetConfig {
        corrected_layers: vec![corrected; 3],
        ..NetConfig::default()
    }
}

fn toy_train() -> TrainConfig {
    TrainConfig {
        iters: 300,
        batch: 4,
        adam: AdamConfig {
            lr: TOY_LR,
            ..AdamConfig::default()
        },
        checkpoint_every: 0,
        ..TrainConfig::default()
    }
}

struct ToyRun {
    net: Network,
    curve: Vec<LossReport>,
    elapsed: Duration,
}

fn run_toy(corrected: bool) -> ToyRun {
    let start = Instant::now();
    let (net, curve) = train_on(&toy_data().train, &toy_net(corrected), &toy_train()).unwrap();
    ToyRun {
        net,
        curve,
        elapsed: start.elapsed(),
    }
}

fn corrected_run() -> &'static ToyRun {
    static RUN: OnceLock<ToyRun> = OnceLock::new();
    RUN.get_or_init(|| run_toy(true))
}

#[test]
fn criterion_06_toy_training() {
    let data = toy_data();
    let w = LossWeights::reconstruction_only();
    let initial = evaluate_set(&Network::build(&toy_net(true)).unwrap(), &data.train, &w).unwrap();
    let run = corrected_run();
    let last = evaluate_set(&run.net, &data.train, &w).unwrap();
    let ratio = last.l_r / initial.l_r;
    let again = run_toy(true);
    let bits = |c: &[LossReport]| -> Vec<u64> { c.iter().flat_map(|r| [r.total.to_bits(), r.l_r.to_bits(), r.l_m.to_bits()]).collect() };
    let reproducible = bits(&run.curve) == bits(&again.curve);
    let slowest = run.elapsed.max(again.elapsed);
    report(
        6,
        "toy training",
        ratio <= 0.5 && reproducible && slowest < Duration::from_secs(600),
        format!(
            "L_r {:.5} -> {:.5} (ratio {ratio:.3}), curve bit-reproducible: {reproducible}, {:.1} s per run",
            initial.l_r,
            last.l_r,
            slowest.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_07_correction_layer_ablation() {
    let data = toy_data();
    let w = LossWeights::reconstruction_only();
    let plain = run_toy(false);
    let with = evaluate_set(&corrected_run().net, &data.held, &w).unwrap().l_m;
    let without = evaluate_set(&plain.net, &data.held, &w).unwrap().l_m;
    report(
        7,
        "correction-layer ablation",
        with <= without,
        format!("held-out L_m all corrected {with:.5}, none corrected {without:.5}"),
    );
}

#[test]
fn criterion_08_micro_gradient_audit() {
    let mut net = Network::build(&NetConfig::micro(0)).unwrap();
    let input = pattern::natural(16, &mut ChaCha8Rng::seed_from_u64(100));
    let gt = pattern::checkerboard(16, 4, 3);
    let a = audit_parameters(&mut net, &input, &Target::image(&gt), &LossWeights::reconstruction_only(), 1e-3, 1e-3);
    report(
        8,
        "micro-net gradient audit",
        a.failed == 0,
        format!("{}/{} parameters within 1e-3, worst {:.3e} at {}", a.checked - a.failed, a.checked, a.worst, a.worst_param),
    );
}

#[test]
fn criterion_09_metrics_sanity() {
    let img = pattern::natural(64, &mut ChaCha8Rng::seed_from_u64(9));
    let self_ssim = ssim(&img, &img).unwrap();
    let mut scores = Vec::new();
    for level in [0.01, 0.02, 0.05, 0.1, 0.2, 0.4] {
        let mut rng = ChaCha8Rng::seed_from_u64(90);
        let noisy = Image::from_fn(64, 64, 3, |x, y, c| img.get(x, y, c) + rng.gen_range(-level..level));
        scores.push(psnr(&noisy, &img, 1.0).unwrap());
    }
    let decreasing = scores.windows(2).all(|w| w[1] < w[0]);
    let buckets = [stratify(150), stratify(300), stratify(400)];
    let ratio = avp(24.0, 12.0).unwrap();
    report(
        9,
        "metrics sanity",
        (self_ssim - 1.0).abs() <= 1e-12 && decreasing && buckets == [Bucket::Low, Bucket::Mid, Bucket::High] && ratio == 2.0,
        format!("ssim(x,x) {self_ssim}, psnr under noise {scores:.2?}, buckets {buckets:?}, avp {ratio}"),
    );
}

#[test]
fn criterion_10_format_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let dir = tempfile::tempdir().unwrap();
    let (mut models, mut flows, mut checkpoints) = (0, 0, 0);
    for i in 0..100 {
        let m = sampled(&mut rng, 64 + 8 * (i % 5));
        let path = dir.path().join("model.txt");
        m.save(&path).unwrap();
        if RadialModel::load(&path).unwrap() == m {
            models += 1;
        }

        let (w, h) = (rng.gen_range(1..24), rng.gen_range(1..24));
        let f = FlowField::from_fn(w, h, |_, _| {
            ((rng.gen::<f32>() * 20.0 - 10.0) as f64, (rng.gen::<f32>() * 20.0 - 10.0) as f64)
        });
        let path = dir.path().join("flow.pcnf");
        f.save(&path).unwrap();
        let back = FlowField::load(&path).unwrap();
        if back.width() == w && back.height() == h && back.data().iter().zip(f.data()).all(|(a, b)| a.to_bits() == b.to_bits()) {
            flows += 1;
        }

        let mut net = Network::build(&NetConfig::micro(rng.gen())).unwrap();
        let p: Vec<f64> = net.flat_params().iter().map(|v| v + rng.gen_range(-1.0..1.0)).collect();
        net.set_flat_params(&p).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&net, &mut buf).unwrap();
        let restored = read_checkpoint(buf.as_slice()).unwrap();
        let same = restored.config() == net.config()
            && restored.flat_params().iter().zip(&p).all(|(a, b)| a.to_bits() == b.to_bits());
        if same {
            checkpoints += 1;
        }
    }
    report(
        10,
        "format round trips",
        models == 100 && flows == 100 && checkpoints == 100,
        format!("model text {models}/100, flow files {flows}/100, checkpoints {checkpoints}/100"),
    );
}
