use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::parser::ValueSource;
use clap::{ArgAction, Args, CommandFactory, Parser, Subcommand};
use log::info;
use pcn_core::flow::{build_pyramid, magnitude_image, upsample_flow};
use pcn_core::metrics::{evaluate_pair, EvalReport, HarrisParams};
use pcn_core::net::{save_checkpoint, train, write_loss_curve, AdamConfig, NetConfig, TrainConfig};
use pcn_core::synth::{make_dataset, rectify_image, SynthConfig};
use pcn_core::warp::warp_bilinear;
use pcn_core::{Border, FlowField, Image, RadialModel};

/// Fisheye distortion toolkit.
#[derive(Debug, Parser)]
#[command(name = "pcn", version)]
struct Cli {
    /// key=value file supplying defaults for the subcommand's flags
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic fisheye dataset from perspective images
    Synth(SynthArgs),
    /// Undo distortion with a known model or flow file
    Rectify(RectifyArgs),
    /// Write the ground-truth flow pyramid of a model
    Flow(FlowArgs),
    /// Train the correction network on a synthetic dataset
    Train(TrainArgs),
    /// Score predictions against ground truth
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 256)]
    size: usize,
    /// Pyramid levels below the image resolution
    #[arg(long, default_value_t = 5)]
    levels: usize,
    /// Also blank everything outside the inscribed circle
    #[arg(long)]
    circular_mask: bool,
}

#[derive(Debug, Args)]
struct RectifyArgs {
    #[arg(long, value_name = "FILE", required_unless_present = "flow", conflicts_with = "flow")]
    model: Option<PathBuf>,
    /// Flow file; coarser flows are upsampled to the image size
    #[arg(long, value_name = "FILE")]
    flow: Option<PathBuf>,
    #[arg(long = "in", value_name = "IMG")]
    input: PathBuf,
    #[arg(long, value_name = "IMG")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct FlowArgs {
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    #[arg(long, default_value_t = 256)]
    size: usize,
    #[arg(long, default_value_t = 5)]
    levels: usize,
    /// Output prefix; writes PREFIX_l{i}.pcnf and PREFIX_l{i}.png
    #[arg(long)]
    out: String,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 300)]
    iters: usize,
    #[arg(long, default_value_t = 4)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = AdamConfig::default().lr)]
    lr: f64,
    /// Network input side
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Comma-separated 1-based skip levels to leave uncorrected
    #[arg(long, value_delimiter = ',', value_name = "LEVELS")]
    no_correct_layers: Vec<usize>,
    #[arg(long, value_name = "FILE")]
    ckpt: PathBuf,
    /// Loss-curve CSV (default: next to the checkpoint)
    #[arg(long, value_name = "FILE")]
    curve: Option<PathBuf>,
    /// Iterations between checkpoints; 0 writes only the final one
    #[arg(long, default_value_t = 100)]
    checkpoint_every: usize,
    /// Weight of end-point-error supervision on the predicted flows
    #[arg(long, default_value_t = 0.0)]
    flow_supervision: f64,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, value_name = "FILE")]
    report: PathBuf,
    /// Count corners on same-named images here (e.g. the fisheye inputs)
    /// instead of on the ground truth.
    #[arg(long, value_name = "DIR")]
    corners_from: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match parse_cli(std::env::args_os().collect()) {
        Ok(cli) => cli,
        Err(Failure::Usage(msg)) => {
            eprintln!("{msg}");
            return ExitCode::from(2);
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

/// Parses the command line, then fills flags left unset from `--config`.
fn parse_cli(mut args: Vec<std::ffi::OsString>) -> Result<Cli, Failure> {
    // lenient first pass: required flags may still come from the config file
    let matches = Cli::command().ignore_errors(true).try_get_matches_from(&args);
    let config = matches.as_ref().ok().and_then(|m| m.get_one::<PathBuf>("config").cloned());
    let (Ok(matches), Some(path)) = (matches, config) else {
        return Cli::try_parse_from(&args).or_else(|e| e.exit());
    };
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("reading config {}", path.display()))
        .map_err(Failure::Runtime)?;
    let entries = parse_config(&text).map_err(Failure::Usage)?;

    let Some((name, sub_matches)) = matches.subcommand() else {
        return Cli::try_parse_from(&args).or_else(|e| e.exit());
    };
    let cmd = Cli::command();
    let sub = cmd.find_subcommand(name).expect("parsed subcommand exists");
    for (key, value) in entries {
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()) && a.get_id() != "config")
            .ok_or_else(|| Failure::Usage(format!("config {}: `{key}` is not a flag of `{name}`", path.display())))?;
        if sub_matches.value_source(arg.get_id().as_str()) == Some(ValueSource::CommandLine) {
            continue;
        }
        if matches!(arg.get_action(), ArgAction::SetTrue) {
            match value.as_str() {
                "true" => args.push(format!("--{key}").into()),
                "false" => {}
                other => return Err(Failure::Usage(format!("config `{key}`: expected true or false, got `{other}`"))),
            }
        } else {
            args.push(format!("--{key}={value}").into());
        }
    }
    Cli::try_parse_from(&args).or_else(|e| e.exit())
}

/// `key = value` lines; blank lines and `#` comments are ignored.
fn parse_config(text: &str) -> Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected key=value", n + 1))?;
        out.insert(k.trim().replace('_', "-"), v.trim().to_string());
    }
    Ok(out)
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => cmd_synth(a),
        Command::Rectify(a) => cmd_rectify(a),
        Command::Flow(a) => cmd_flow(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
    }
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let config = SynthConfig {
        size: a.size,
        pyramid_levels: a.levels,
        circular_mask: a.circular_mask,
        ..SynthConfig::default()
    };
    let manifest = make_dataset(&a.src, &a.out, a.count, a.seed, &config)?;
    info!(
        "{} samples, {} skipped sources, {} failed samples",
        manifest.entries.len(),
        manifest.skipped.len(),
        manifest.failed.len()
    );
    println!("{}", manifest.path.display());
    Ok(())
}

fn cmd_rectify(a: RectifyArgs) -> Result<()> {
    let img = Image::load(&a.input)?;
    let out = if let Some(path) = &a.model {
        let model = RadialModel::load(path)?;
        ensure!(img.width() == img.height(), "model rectification needs a square image");
        rectify_image(&img, &model.for_side(img.width()))?
    } else {
        let path = a.flow.as_ref().expect("clap enforces one source");
        let flow = fit_flow(FlowField::load(path)?, img.width(), img.height())?;
        warp_bilinear(&img, &flow, Border::Zeros)?
    };
    out.save_png(&a.out)?;
    Ok(())
}

/// Upsamples a coarser pyramid level until it matches the image.
fn fit_flow(mut flow: FlowField, width: usize, height: usize) -> Result<FlowField> {
    while flow.width() < width && flow.height() < height {
        flow = upsample_flow(&flow);
    }
    if flow.width() != width || flow.height() != height {
        bail!(
            "flow is {}x{} but the image is {width}x{height}",
            flow.width(),
            flow.height()
        );
    }
    Ok(flow)
}

fn cmd_flow(a: FlowArgs) -> Result<()> {
    let model = RadialModel::load(&a.model)?;
    let pyramid = build_pyramid(&model, a.size, a.levels)?;
    for (i, level) in pyramid.levels.iter().enumerate() {
        level.save(format!("{}_l{i}.pcnf", a.out))?;
        magnitude_image(level).save_png(format!("{}_l{i}.png", a.out))?;
    }
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut net = NetConfig {
        input_side: a.size,
        seed: a.seed,
        ..NetConfig::default()
    };
    for &level in &a.no_correct_layers {
        ensure!(
            (1..=net.corrected_layers.len()).contains(&level),
            "--no-correct-layers: level {level} is outside 1..={}",
            net.corrected_layers.len()
        );
        net.corrected_layers[level - 1] = false;
    }
    let cfg = TrainConfig {
        iters: a.iters,
        batch: a.batch,
        adam: AdamConfig {
            lr: a.lr,
            ..AdamConfig::default()
        },
        seed: a.seed,
        checkpoint_every: a.checkpoint_every,
        checkpoint_path: Some(a.ckpt.clone()),
        flow_supervision: a.flow_supervision,
        ..TrainConfig::default()
    };
    let (trained, curve) = train(&a.data, &net, &cfg)?;
    save_checkpoint(&trained, &a.ckpt)?;
    let curve_path = a.curve.unwrap_or_else(|| a.ckpt.with_extension("loss.csv"));
    write_loss_curve(&curve_path, &curve)?;
    if let (Some(first), Some(last)) = (curve.first(), curve.last()) {
        println!("l_r {:.6} -> {:.6} over {} iterations", first.l_r, last.l_r, curve.len());
    }
    Ok(())
}

fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")));
    files.sort();
    Ok(files)
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let mut records = Vec::new();
    for pred_path in png_files(&a.pred)? {
        let name = pred_path.file_name().expect("listed files have names");
        let gt_path = a.gt.join(name);
        if !gt_path.exists() {
            log::warn!("no ground truth for {}", pred_path.display());
            continue;
        }
        let (pred, gt) = (Image::load(&pred_path)?, Image::load(&gt_path)?);
        let corner_src = match &a.corners_from {
            Some(dir) => Image::load(dir.join(name))?,
            None => gt.clone(),
        };
        let id = name.to_string_lossy();
        records.push(evaluate_pair(id.as_ref(), &pred, &gt, &corner_src, HarrisParams::default())?);
    }
    ensure!(!records.is_empty(), "no prediction in {} has a ground-truth match", a.pred.display());
    let report = EvalReport::from_records(records);
    report.save(&a.report)?;
    println!(
        "images {} mean psnr {:.4} mean ssim {:.4}",
        report.images.len(),
        report.mean_psnr().unwrap_or(f64::NAN),
        report.mean_ssim().unwrap_or(f64::NAN)
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_lines() {
        let m = parse_config("# c\n\nseed = 4\nno_correct_layers=1,2\n").unwrap();
        assert_eq!(m["seed"], "4");
        assert_eq!(m["no-correct-layers"], "1,2");
        assert!(parse_config("seed 4").is_err());
    }

    #[test]
    fn coarse_flows_are_upsampled() {
        let f = fit_flow(FlowField::constant(4, 4, (1.0, 0.0)), 16, 16).unwrap();
        assert_eq!(f.get(7, 7), (4.0, 0.0));
        assert!(fit_flow(FlowField::zeros(4, 4), 12, 16).is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }
}
