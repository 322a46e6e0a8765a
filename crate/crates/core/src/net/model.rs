use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ops::{self, conv3x3, conv3x3_backward};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::flow::{FlowField, FlowPyramid};
use crate::image::Image;
use crate::losses::{self, LossWeights};
use crate::metrics;
use crate::warp::{warp_backward, warp_bilinear, warp_bilinear_in_cells, Border};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub input_side: usize,
    pub enc_channels: Vec<usize>,
    /// Decoder levels with flow and image heads; must be `enc_channels.len() - 1`.
    pub pyramid_levels: usize,
    /// Whether the skip at level `i + 1` is warped by the flow of that level.
    pub corrected_layers: Vec<bool>,
    /// Start flow heads at zero so the untrained network predicts no motion.
    pub zero_init_flow_heads: bool,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            input_side: 64,
            enc_channels: vec![8, 16, 32, 32],
            pyramid_levels: 3,
            corrected_layers: vec![true; 3],
            zero_init_flow_heads: true,
            seed: 0,
        }
    }
}

impl NetConfig {
    /// 16×16 input, two channels per encoder stage, random flow heads.
    pub fn micro(seed: u64) -> Self {
        NetConfig {
            input_side: 16,
            enc_channels: vec![2, 2, 2],
            pyramid_levels: 2,
            corrected_layers: vec![true; 2],
            zero_init_flow_heads: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.enc_channels.len();
        if n < 2 {
            return Err(Error::Config("need at least two encoder stages".into()));
        }
        if self.enc_channels.contains(&0) {
            return Err(Error::Config("encoder channel counts must be positive".into()));
        }
        if self.pyramid_levels != n - 1 {
            return Err(Error::Config(format!(
                "pyramid_levels must be {} for {n} encoder stages, got {}",
                n - 1,
                self.pyramid_levels
            )));
        }
        if self.corrected_layers.len() != n - 1 {
            return Err(Error::Config(format!(
                "corrected_layers needs {} entries, got {}",
                n - 1,
                self.corrected_layers.len()
            )));
        }
        if n >= 32 || self.input_side == 0 || !self.input_side.is_multiple_of(1 << n) {
            return Err(Error::Config(format!(
                "input_side {} must be a positive multiple of 2^{n}",
                self.input_side
            )));
        }
        Ok(())
    }

    /// Side of level `i` (level 0 is the input).
    pub fn side(&self, level: usize) -> usize {
        self.input_side >> level
    }
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    w: usize,
    b: usize,
    cout: usize,
}

#[derive(Debug, Clone)]
struct Branch {
    enc: Vec<Conv>,
    /// Indexed by level − 1.
    dec: Vec<Conv>,
    heads: Vec<Conv>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Head {
    Flow,
    Image,
}

/// Two encoder–decoders: a flow estimator whose decoder levels emit flows, and
/// a correction branch whose skip features are warped by those flows before
/// they reach its decoder.
#[derive(Debug, Clone)]
pub struct Network {
    config: NetConfig,
    params: Vec<Tensor>,
    names: Vec<String>,
    fem: Branch,
    dcm: Branch,
    final_conv: Conv,
    out_conv: Conv,
}

#[derive(Debug, Clone)]
struct BranchCache {
    input: Tensor,
    /// Pre-activations of encoder stages.
    enc_pre: Vec<Tensor>,
    /// Pooled encoder outputs `e_1..e_n`.
    enc: Vec<Tensor>,
    /// Per level, finest first.
    up: Vec<Tensor>,
    dec_pre: Vec<Tensor>,
    skips: Vec<Tensor>,
    z: Vec<Tensor>,
    heads: Vec<Tensor>,
}

#[derive(Debug, Clone)]
struct FinalCache {
    up: Tensor,
    pre: Tensor,
    hidden: Tensor,
}

/// Everything a forward pass produced, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Flows per decoder level, finest first. Equal to the supplied flows in
    /// teacher-forcing mode.
    pub flows: Vec<FlowField>,
    /// Multi-scale images per decoder level, finest first.
    pub outputs: Vec<Image>,
    pub output: Image,
    pub warp_calls: usize,
    fem: BranchCache,
    dcm: BranchCache,
    fin: FinalCache,
    flow_tensors: Vec<Tensor>,
    teacher_forced: bool,
    param_count: usize,
}

impl ForwardTrace {
    /// Correction-branch encoder features `e_1..e_n`.
    pub fn dcm_features(&self) -> &[Tensor] {
        &self.dcm.enc
    }

    /// Correction-branch skip features after optional warping, finest first.
    pub fn dcm_skips(&self) -> &[Tensor] {
        &self.dcm.skips
    }

    pub fn flow_pyramid(&self) -> FlowPyramid {
        FlowPyramid {
            levels: self.flows.clone(),
        }
    }
}

/// Scalar terms of one evaluation; `total` is what gets differentiated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub l_r: f64,
    pub l_m: f64,
    /// Identity-feature content plus weighted style loss, when enabled.
    pub l_e: Option<f64>,
    /// Generator loss with pixel intensities as discriminator scores; reported
    /// only, never differentiated.
    pub l_adv: Option<f64>,
    /// End-point error of the finest flow, when flow supervision is on.
    pub epe: Option<f64>,
}

impl LossReport {
    pub(crate) fn accumulate(&mut self, other: &LossReport, scale: f64) {
        let add = |a: &mut Option<f64>, b: Option<f64>| {
            if let Some(b) = b {
                *a = Some(a.unwrap_or(0.0) + scale * b);
            }
        };
        self.total += scale * other.total;
        self.l_r += scale * other.l_r;
        self.l_m += scale * other.l_m;
        add(&mut self.l_e, other.l_e);
        add(&mut self.l_adv, other.l_adv);
        add(&mut self.epe, other.epe);
    }
}

/// Supervision for one sample.
#[derive(Debug, Clone, Copy)]
pub struct Target<'a> {
    pub gt: &'a Image,
    /// Ground-truth flows per level, finest first, for supervised flow mode.
    pub gt_flows: Option<&'a [FlowField]>,
    /// Weight of the flow EPE term when `gt_flows` is given.
    pub flow_weight: f64,
}

impl<'a> Target<'a> {
    pub fn image(gt: &'a Image) -> Self {
        Target {
            gt,
            gt_flows: None,
            flow_weight: 0.0,
        }
    }
}

impl Network {
    pub fn build(config: &NetConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = Vec::new();
        let mut names = Vec::new();
        let ch = &config.enc_channels;
        let n = ch.len();
        let mut conv = |name: String, cin: usize, cout: usize, zero: bool| -> Conv {
            let a = (1.0 / (cin * 9) as f64).sqrt();
            let w: Vec<f64> = (0..cout * cin * 9)
                .map(|_| {
                    let v = rng.gen_range(-a..a);
                    if zero {
                        0.0
                    } else {
                        v
                    }
                })
                .collect();
            let c = Conv {
                w: params.len(),
                b: params.len() + 1,
                cout,
            };
            params.push(Tensor::param(&[cout, cin, 3, 3], w).expect("weight shape"));
            params.push(Tensor::param(&[cout], vec![0.0; cout]).expect("bias shape"));
            names.push(format!("{name}.weight"));
            names.push(format!("{name}.bias"));
            c
        };
        let mut branch = |tag: &str, head: Head| -> Branch {
            let enc = (0..n)
                .map(|j| conv(format!("{tag}.enc{}", j + 1), if j == 0 { 3 } else { ch[j - 1] }, ch[j], false))
                .collect();
            // input of level i is the level i + 1 state: e_n or a concatenation
            let dec = (1..n)
                .map(|i| {
                    let cin = if i + 1 == n { ch[n - 1] } else { 2 * ch[i] };
                    conv(format!("{tag}.dec{i}"), cin, ch[i - 1], false)
                })
                .collect();
            let heads = (1..n)
                .map(|i| match head {
                    Head::Flow => conv(format!("{tag}.flow{i}"), 2 * ch[i - 1], 2, config.zero_init_flow_heads),
                    Head::Image => conv(format!("{tag}.rgb{i}"), 2 * ch[i - 1], 3, false),
                })
                .collect();
            Branch { enc, dec, heads }
        };
        let fem = branch("fem", Head::Flow);
        let dcm = branch("dcm", Head::Image);
        let final_conv = conv("final".into(), 2 * ch[0], ch[0], false);
        let out_conv = conv("out".into(), ch[0], 3, false);
        Ok(Network {
            config: config.clone(),
            params,
            names,
            fem,
            dcm,
            final_conv,
            out_conv,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    /// Parameter tensors in declaration order.
    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// All parameters flattened in declaration order.
    pub fn flat_params(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.data().iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                values.len()
            )));
        }
        let mut off = 0;
        for p in &mut self.params {
            let n = p.len();
            p.data_mut().copy_from_slice(&values[off..off + n]);
            off += n;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(Tensor::zero_grad);
    }

    fn conv(&self, c: Conv, x: &Tensor) -> Tensor {
        conv3x3(x, self.params[c.w].data(), self.params[c.b].data(), c.cout)
    }

    fn conv_backward(&mut self, c: Conv, x: &Tensor, grad: &Tensor, need_input: bool) -> Option<Tensor> {
        let (lo, hi) = self.params.split_at_mut(c.b);
        let (w, gw) = lo[c.w].data_and_grad_mut();
        let (_, gb) = hi[0].data_and_grad_mut();
        conv3x3_backward(x, w, grad, gw, gb, need_input)
    }

    fn check_input(&self, input: &Image) -> Result<()> {
        let s = self.config.input_side;
        if input.width() != s || input.height() != s || input.channels() != 3 {
            return Err(Error::Shape(format!(
                "network expects {s}x{s}x3 input, got {}x{}x{}",
                input.width(),
                input.height(),
                input.channels()
            )));
        }
        Ok(())
    }

    fn run_branch(
        &self,
        br: &Branch,
        input: Tensor,
        reference: Option<&BranchCache>,
        mut skip: impl FnMut(usize, &Tensor) -> Result<Tensor>,
    ) -> Result<BranchCache> {
        let act = |x: &Tensor, r: Option<&Tensor>| match r {
            Some(r) => ops::leaky_relu_masked(x, r),
            None => ops::leaky_relu(x),
        };
        let n = br.enc.len();
        let mut enc_pre = Vec::with_capacity(n);
        let mut enc: Vec<Tensor> = Vec::with_capacity(n);
        for (j, &c) in br.enc.iter().enumerate() {
            let pre = self.conv(c, if j == 0 { &input } else { &enc[j - 1] });
            enc.push(ops::avg_pool2(&act(&pre, reference.map(|r| &r.enc_pre[j]))));
            enc_pre.push(pre);
        }
        let (mut up, mut dec_pre, mut skips, mut z, mut heads) =
            (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for i in (1..n).rev() {
            let u = ops::upsample2(z.last().unwrap_or(&enc[n - 1]));
            let pre = self.conv(br.dec[i - 1], &u);
            let s = skip(i, &enc[i - 1])?;
            let zi = ops::concat(&act(&pre, reference.map(|r| &r.dec_pre[i - 1])), &s);
            heads.push(self.conv(br.heads[i - 1], &zi));
            up.push(u);
            dec_pre.push(pre);
            skips.push(s);
            z.push(zi);
        }
        for v in [&mut up, &mut dec_pre, &mut skips, &mut z, &mut heads] {
            v.reverse();
        }
        Ok(BranchCache {
            input,
            enc_pre,
            enc,
            up,
            dec_pre,
            skips,
            z,
            heads,
        })
    }

    pub fn forward(&self, input: &Image) -> Result<ForwardTrace> {
        self.forward_impl(input, None, None)
    }

    /// Forward pass that warps the correction skips with the given flows
    /// (finest first) instead of the predicted ones.
    pub fn forward_teacher(&self, input: &Image, flows: &[FlowField]) -> Result<ForwardTrace> {
        self.forward_impl(input, Some(flows), None)
    }

    /// Loss with the piecewise choices of `reference` held fixed: leaky-ReLU
    /// active sets and the bilinear cell of every warped pixel. Around the
    /// parameters that produced `reference` this is a smooth function that
    /// agrees with [`Network::evaluate`] until some choice would flip, which
    /// makes it the right target for finite-difference gradient checks.
    pub fn evaluate_on_pattern(
        &self,
        input: &Image,
        target: &Target,
        w: &LossWeights,
        reference: &ForwardTrace,
    ) -> Result<LossReport> {
        if reference.param_count != self.param_count() {
            return Err(Error::Shape("reference trace was not produced by this network".into()));
        }
        let forced = reference.teacher_forced.then_some(reference.flows.as_slice());
        let trace = self.forward_impl(input, forced, Some(reference))?;
        Ok(self.loss_and_output_grads(&trace, target, w)?.0)
    }

    fn forward_impl(
        &self,
        input: &Image,
        forced: Option<&[FlowField]>,
        reference: Option<&ForwardTrace>,
    ) -> Result<ForwardTrace> {
        self.check_input(input)?;
        let levels = self.config.pyramid_levels;
        let x = Tensor::from_image(input);
        let fem = self.run_branch(&self.fem, x.clone(), reference.map(|r| &r.fem), |_, e| Ok(e.clone()))?;
        let flow_tensors: Vec<Tensor> = match forced {
            Some(f) => {
                if f.len() != levels {
                    return Err(Error::Shape(format!("need {levels} flow levels, got {}", f.len())));
                }
                for (i, fl) in f.iter().enumerate() {
                    let s = self.config.side(i + 1);
                    if fl.width() != s || fl.height() != s {
                        return Err(Error::Shape(format!(
                            "flow level {} is {}x{}, expected {s}x{s}",
                            i + 1,
                            fl.width(),
                            fl.height()
                        )));
                    }
                }
                f.iter().map(Tensor::from_flow).collect()
            }
            None => fem.heads.clone(),
        };
        let flows: Vec<FlowField> = flow_tensors.iter().map(Tensor::to_flow).collect();
        let mut warp_calls = 0;
        let dcm = self.run_branch(&self.dcm, x, reference.map(|r| &r.dcm), |i, e| {
            if !self.config.corrected_layers[i - 1] {
                return Ok(e.clone());
            }
            warp_calls += 1;
            let e = e.to_image();
            let warped = match reference {
                Some(r) => warp_bilinear_in_cells(&e, &flows[i - 1], &r.flows[i - 1], Border::Zeros)?,
                None => warp_bilinear(&e, &flows[i - 1], Border::Zeros)?,
            };
            Ok(Tensor::from_image(&warped))
        })?;
        let outputs = dcm.heads.iter().map(|h| ops::sigmoid(h).to_image()).collect();
        let up = ops::upsample2(&dcm.z[0]);
        let pre = self.conv(self.final_conv, &up);
        let hidden = match reference {
            Some(r) => ops::leaky_relu_masked(&pre, &r.fin.pre),
            None => ops::leaky_relu(&pre),
        };
        let output = ops::sigmoid(&self.conv(self.out_conv, &hidden)).to_image();
        Ok(ForwardTrace {
            flows,
            outputs,
            output,
            warp_calls,
            fem,
            dcm,
            fin: FinalCache { up, pre, hidden },
            flow_tensors,
            teacher_forced: forced.is_some(),
            param_count: self.param_count(),
        })
    }

    /// Predicted flows as a pyramid, finest first.
    pub fn predict_flow_pyramid(&self, input: &Image) -> Result<FlowPyramid> {
        Ok(self.forward(input)?.flow_pyramid())
    }

    /// Loss terms of a trace against its target, plus gradients w.r.t. the
    /// final image, the multi-scale images and the flows.
    fn loss_and_output_grads(
        &self,
        trace: &ForwardTrace,
        target: &Target,
        w: &LossWeights,
    ) -> Result<OutputGrads> {
        let gt = target.gt;
        let l_r = losses::l1_loss(&trace.output, gt)?;
        let l_m = losses::multi_scale_l1(&trace.outputs, gt)?;
        let mut d_out = losses::l1_grad(&trace.output, gt)?.map(|g| w.lambda_r * g);
        let d_multi: Vec<Image> = losses::multi_scale_l1_grads(&trace.outputs, gt)?
            .into_iter()
            .map(|g| g.map(|v| w.lambda_m * v))
            .collect();
        let mut report = LossReport {
            l_r,
            l_m,
            ..LossReport::default()
        };
        let mut l_e = 0.0;
        if w.include_enhanced {
            let c = losses::content_loss(&trace.output, gt)?;
            let s = losses::style_loss(&trace.output, gt)?;
            l_e = losses::enhanced_loss(&[c], &[s], w.lambda_s);
            let gc = losses::content_grad(&trace.output, gt)?;
            let gs = losses::style_grad(&trace.output, gt)?;
            for ((d, a), b) in d_out.data_mut().iter_mut().zip(gc.data()).zip(gs.data()) {
                *d += a + w.lambda_s * b;
            }
            report.l_e = Some(l_e);
        }
        if w.include_adv {
            report.l_adv = Some(losses::adversarial_loss(gt, &trace.output).g_loss);
        }
        report.total = losses::overall_loss(l_r, 0.0, l_m, l_e, w);
        let mut d_flows = None;
        if let Some(gt_flows) = target.gt_flows {
            if gt_flows.len() != trace.flows.len() {
                return Err(Error::Shape("ground-truth flow levels do not match the network".into()));
            }
            let mut grads = Vec::with_capacity(gt_flows.len());
            let mut epe_sum = 0.0;
            for (p, g) in trace.flows.iter().zip(gt_flows) {
                epe_sum += metrics::flow_epe(p, g, None)?;
                grads.push(epe_grad(p, g, target.flow_weight));
            }
            report.epe = Some(metrics::flow_epe(&trace.flows[0], &gt_flows[0], None)?);
            report.total += target.flow_weight * epe_sum;
            d_flows = Some(grads);
        }
        Ok((report, d_out, d_multi, d_flows))
    }

    /// Loss of the current parameters on one sample, without gradients.
    pub fn evaluate(&self, input: &Image, target: &Target, w: &LossWeights) -> Result<LossReport> {
        let trace = self.forward(input)?;
        Ok(self.loss_and_output_grads(&trace, target, w)?.0)
    }

    /// Accumulates `scale ·` the gradient of the loss of `trace` into the
    /// parameter gradient buffers and returns the loss report.
    pub fn backward(&mut self, trace: &ForwardTrace, target: &Target, w: &LossWeights, scale: f64) -> Result<LossReport> {
        if trace.param_count != self.param_count() || trace.outputs.len() != self.config.pyramid_levels {
            return Err(Error::Shape("trace was not produced by this network".into()));
        }
        let (report, d_out, d_multi, d_flows) = self.loss_and_output_grads(trace, target, w)?;

        // final stage
        let out = Tensor::from_image(&trace.output);
        let mut g = Tensor::from_image(&d_out);
        scale_tensor(&mut g, scale);
        ops::sigmoid_backward(&out, &mut g);
        let fin = &trace.fin;
        let mut g = self.conv_backward(self.out_conv, &fin.hidden, &g, true).expect("input grad");
        ops::leaky_relu_backward(&fin.pre, &mut g);
        let g = self.conv_backward(self.final_conv, &fin.up, &g, true).expect("input grad");
        let dz1 = ops::upsample2_backward(&g);

        // correction branch
        let d_heads: Vec<Tensor> = d_multi
            .iter()
            .zip(&trace.outputs)
            .map(|(d, o)| {
                let mut g = Tensor::from_image(d);
                scale_tensor(&mut g, scale);
                ops::sigmoid_backward(&Tensor::from_image(o), &mut g);
                g
            })
            .collect();
        let mut d_flow: Vec<Option<Tensor>> = vec![None; self.config.pyramid_levels];
        let corrected = self.config.corrected_layers.clone();
        let dcm = self.dcm.clone();
        self.branch_backward(&dcm, &trace.dcm, d_heads, Some(dz1), |i, ds| {
            if !corrected[i - 1] {
                return Ok(ds);
            }
            let e = trace.dcm.enc[i - 1].to_image();
            let (gin, gflow) = warp_backward(&e, &trace.flows[i - 1], &ds.to_image(), Border::Zeros)?;
            d_flow[i - 1] = Some(Tensor::from_flow(&gflow));
            Ok(Tensor::from_image(&gin))
        })?;

        // flow branch, only reachable when its flows were used
        if !trace.teacher_forced {
            let d_heads: Vec<Tensor> = (0..self.config.pyramid_levels)
                .map(|i| {
                    let mut g = d_flow[i]
                        .take()
                        .unwrap_or_else(|| Tensor::zeros(trace.flow_tensors[i].shape()));
                    if let Some(df) = &d_flows {
                        let extra = Tensor::from_flow(&df[i]);
                        let mut extra = extra;
                        scale_tensor(&mut extra, scale);
                        ops::add_assign(&mut g, &extra);
                    }
                    g
                })
                .collect();
            let fem = self.fem.clone();
            self.branch_backward(&fem, &trace.fem, d_heads, None, |_, ds| Ok(ds))?;
        }
        Ok(report)
    }

    fn branch_backward(
        &mut self,
        br: &Branch,
        cache: &BranchCache,
        d_heads: Vec<Tensor>,
        d_z1: Option<Tensor>,
        mut d_skip: impl FnMut(usize, Tensor) -> Result<Tensor>,
    ) -> Result<()> {
        let n = br.enc.len();
        let mut d_enc: Vec<Option<Tensor>> = vec![None; n];
        let mut carry = d_z1;
        for i in 1..n {
            let mut dz = self
                .conv_backward(br.heads[i - 1], &cache.z[i - 1], &d_heads[i - 1], true)
                .expect("input grad");
            if let Some(c) = carry.take() {
                ops::add_assign(&mut dz, &c);
            }
            let (mut dh, ds) = ops::split(&dz, self.config.enc_channels[i - 1]);
            let de = d_skip(i, ds)?;
            accumulate(&mut d_enc[i - 1], de);
            ops::leaky_relu_backward(&cache.dec_pre[i - 1], &mut dh);
            let du = self
                .conv_backward(br.dec[i - 1], &cache.up[i - 1], &dh, true)
                .expect("input grad");
            carry = Some(ops::upsample2_backward(&du));
        }
        if let Some(c) = carry {
            accumulate(&mut d_enc[n - 1], c);
        }
        for j in (0..n).rev() {
            let Some(d) = d_enc[j].take() else {
                continue;
            };
            let mut g = ops::avg_pool2_backward(&d);
            ops::leaky_relu_backward(&cache.enc_pre[j], &mut g);
            let x = if j == 0 { &cache.input } else { &cache.enc[j - 1] };
            if let Some(dx) = self.conv_backward(br.enc[j], x, &g, j > 0) {
                accumulate(&mut d_enc[j - 1], dx);
            }
        }
        Ok(())
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => ops::add_assign(acc, &g),
        None => *slot = Some(g),
    }
}

fn scale_tensor(t: &mut Tensor, s: f64) {
    if s != 1.0 {
        t.data_mut().iter_mut().for_each(|v| *v *= s);
    }
}

/// Gradient of `weight · mean_p ‖pred_p − gt_p‖` w.r.t. `pred`; zero where the
/// vectors coincide.
fn epe_grad(pred: &FlowField, gt: &FlowField, weight: f64) -> FlowField {
    let n = (pred.width() * pred.height()) as f64;
    FlowField::from_fn(pred.width(), pred.height(), |x, y| {
        let (pu, pv) = pred.get(x, y);
        let (gu, gv) = gt.get(x, y);
        let (du, dv) = (pu - gu, pv - gv);
        let norm = du.hypot(dv);
        if norm == 0.0 {
            (0.0, 0.0)
        } else {
            (weight * du / (norm * n), weight * dv / (norm * n))
        }
    })
}

/// Loss report plus gradients w.r.t. the final image, the multi-scale
/// images and (when supervised) the flows.
type OutputGrads = (LossReport, Image, Vec<Image>, Option<Vec<FlowField>>);
