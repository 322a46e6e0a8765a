use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::checkpoint::save_checkpoint;
use super::model::{LossReport, NetConfig, Network, Target};
use crate::error::{Error, Result};
use crate::flow::{build_pyramid, FlowField};
use crate::image::Image;
use crate::losses::LossWeights;
use crate::synth::{load_dataset, StoredSample};
use crate::warp::downsample_avg;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iters: usize,
    pub batch: usize,
    pub weights: LossWeights,
    pub adam: AdamConfig,
    /// Seed of the sample order.
    pub seed: u64,
    /// Write a checkpoint every this many iterations; 0 disables.
    pub checkpoint_every: usize,
    pub checkpoint_path: Option<PathBuf>,
    /// Weight of a direct flow end-point-error term; 0 trains the flow
    /// branch only through the correction losses.
    pub flow_supervision: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iters: 300,
            batch: 4,
            weights: LossWeights::reconstruction_only(),
            adam: AdamConfig::default(),
            seed: 0,
            checkpoint_every: 100,
            checkpoint_path: None,
            flow_supervision: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.batch == 0 {
            return Err(Error::Config("batch must be at least 1".into()));
        }
        if !(self.adam.lr.is_finite() && self.adam.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.adam.lr)));
        }
        if !(self.flow_supervision.is_finite() && self.flow_supervision >= 0.0) {
            return Err(Error::Config("flow_supervision must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// A sample resized to the network input.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub input: Image,
    pub gt: Image,
    /// Ground-truth flows per decoder level, finest first.
    pub gt_flows: Vec<FlowField>,
}

impl TrainSample {
    /// Downsamples a stored sample by powers of two to the network input side.
    pub fn from_stored(s: &StoredSample, net: &NetConfig) -> Result<Self> {
        let side = net.input_side;
        let w = s.fisheye.width();
        if s.fisheye.height() != w || w < side || !w.is_multiple_of(side) || !(w / side).is_power_of_two() {
            return Err(Error::Shape(format!(
                "sample {} is {w}x{}, which is not a power-of-two multiple of {side}",
                s.index,
                s.fisheye.height()
            )));
        }
        let k = (w / side).trailing_zeros() as usize;
        let gt_flows = build_pyramid(&s.model, side / 2, net.pyramid_levels)?.levels;
        Ok(TrainSample {
            input: downsample_avg(&s.fisheye, k)?,
            gt: downsample_avg(&s.gt, k)?,
            gt_flows,
        })
    }

    fn target(&self, flow_weight: f64) -> Target<'_> {
        Target {
            gt: &self.gt,
            gt_flows: (flow_weight > 0.0).then_some(self.gt_flows.as_slice()),
            flow_weight,
        }
    }
}

pub fn load_training_set(dir: impl AsRef<Path>, net: &NetConfig) -> Result<Vec<TrainSample>> {
    let stored = load_dataset(dir)?;
    let mut out = Vec::with_capacity(stored.len());
    for s in &stored {
        match TrainSample::from_stored(s, net) {
            Ok(t) => out.push(t),
            Err(e) => warn!("skipping sample {}: {e}", s.index),
        }
    }
    if out.is_empty() {
        return Err(Error::Dataset("no sample fits the network input".into()));
    }
    Ok(out)
}

/// Mean loss over `samples` without updating anything.
pub fn evaluate_set(net: &Network, samples: &[TrainSample], w: &LossWeights) -> Result<LossReport> {
    if samples.is_empty() {
        return Err(Error::Dataset("empty evaluation set".into()));
    }
    let mut acc = LossReport::default();
    let scale = 1.0 / samples.len() as f64;
    for s in samples {
        acc.accumulate(&net.evaluate(&s.input, &Target::image(&s.gt), w)?, scale);
    }
    Ok(acc)
}

/// One optimizer step on a batch; returns the batch-mean losses.
pub fn train_step(
    net: &mut Network,
    adam: &mut AdamState,
    batch: &[&TrainSample],
    w: &LossWeights,
    flow_weight: f64,
) -> Result<LossReport> {
    net.zero_grad();
    let scale = 1.0 / batch.len() as f64;
    let mut acc = LossReport::default();
    for s in batch {
        let trace = net.forward(&s.input)?;
        let r = net.backward(&trace, &s.target(flow_weight), w, scale)?;
        acc.accumulate(&r, scale);
    }
    if !acc.total.is_finite() || net.params().iter().any(|p| !p.grad().is_some_and(|g| g.iter().all(|v| v.is_finite()))) {
        return Err(Error::Domain("non-finite loss or gradient".into()));
    }
    adam.step(net.params_mut())?;
    Ok(acc)
}

/// Trains a fresh network on in-memory samples. Returns the network and the
/// per-iteration batch losses.
pub fn train_on(samples: &[TrainSample], net_config: &NetConfig, cfg: &TrainConfig) -> Result<(Network, Vec<LossReport>)> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Dataset("empty training set".into()));
    }
    if cfg.weights.include_adv {
        warn!("the adversarial term is reported but not trained");
    }
    let mut net = Network::build(net_config)?;
    let mut adam = AdamState::new(cfg.adam, net.params());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut cursor = order.len();
    let mut curve = Vec::with_capacity(cfg.iters);
    for it in 1..=cfg.iters {
        let mut batch = Vec::with_capacity(cfg.batch);
        while batch.len() < cfg.batch {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(&samples[order[cursor]]);
            cursor += 1;
        }
        let r = train_step(&mut net, &mut adam, &batch, &cfg.weights, cfg.flow_supervision)?;
        if it % 25 == 0 || it == 1 {
            info!("iter {it}: total {:.5} l_r {:.5} l_m {:.5}", r.total, r.l_r, r.l_m);
        }
        curve.push(r);
        if let Some(path) = &cfg.checkpoint_path {
            if (cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0) || it == cfg.iters {
                save_checkpoint(&net, path)?;
            }
        }
    }
    Ok((net, curve))
}

/// Loads the dataset in `dataset_dir` and trains on it.
pub fn train(dataset_dir: impl AsRef<Path>, net_config: &NetConfig, cfg: &TrainConfig) -> Result<(Network, Vec<LossReport>)> {
    net_config.validate()?;
    let samples = load_training_set(dataset_dir, net_config)?;
    train_on(&samples, net_config, cfg)
}

/// CSV with columns `iter,total,l_r,l_m`; numbers use the shortest
/// representation that reads back to the same value.
pub fn loss_curve_csv(curve: &[LossReport]) -> String {
    let mut s = String::from("iter,total,l_r,l_m\n");
    for (i, r) in curve.iter().enumerate() {
        let _ = writeln!(s, "{},{},{},{}", i + 1, r.total, r.l_r, r.l_m);
    }
    s
}

pub fn write_loss_curve(path: impl AsRef<Path>, curve: &[LossReport]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, loss_curve_csv(curve)).map_err(|e| Error::io(path, e))
}
