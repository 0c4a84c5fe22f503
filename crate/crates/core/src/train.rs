//! Optimization: Adam, the three training regimes, evaluation and ablations.
//!
//! Every regime samples mini-batches from one seeded generator, sums the
//! per-sample gradients in a fixed order, takes an Adam step and then
//! projects every convolution back onto the Lipschitz budget. Runs are
//! therefore bit-reproducible for a given configuration.
//!
//! - forward: `forward_loss(channel0(S(R, R)), I)`
//! - backward: `backward_loss(S^-1(I, Y), R)`
//! - bidirectional: `forward + beta * backward`
//!
//! The data-consistency layer is not part of any training graph.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{backprop, Tape};
use crate::error::{Error, Result};
use crate::lipschitz::LipschitzBudget;
use crate::losses::{backward_loss, bidirectional_loss, forward_loss, LossWeights};
use crate::metrics::{evaluate_pairset, MetricsReport, SsimParams};
use crate::mri_sim::Sample;
use crate::net::{Geometry, InvSharpNet};
use crate::tensor::Tensor;

/// Adam moment buffers and step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let sizes: Vec<usize> = params.into_iter().map(Tensor::len).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// One bias-corrected Adam update. A non-finite gradient aborts the step
/// before anything is modified.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[Tensor], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape("adam_step", "parameter count", state.m.len(), params.len().max(grads.len())));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(Error::InvalidArgument(format!(
                "adam_step: gradient {i} has shape {:?}, parameter has {:?}",
                g.shape(),
                p.shape()
            )));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient of parameter {i}")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        for (((w, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Forward,
    Backward,
    Bidirectional,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(Self::Forward),
            "backward" => Ok(Self::Backward),
            "bidirectional" => Ok(Self::Bidirectional),
            other => Err(Error::Config(format!(
                "unknown mode {other:?} (expected forward, backward or bidirectional)"
            ))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Forward => "forward",
            Self::Backward => "backward",
            Self::Bidirectional => "bidirectional",
        })
    }
}

/// Network shape as written in configuration files.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySpec {
    pub blocks: usize,
    pub layers: usize,
    pub channels: usize,
}

impl GeometrySpec {
    pub const DESK: Self = Self {
        blocks: 4,
        layers: 3,
        channels: 32,
    };
    pub const FULL: Self = Self {
        blocks: 12,
        layers: 5,
        channels: 128,
    };

    pub fn geometry(&self) -> Result<Geometry> {
        Geometry::new(self.blocks, self.layers, self.channels)
    }

    pub fn label(&self) -> String {
        format!("{}x{}x{}", self.blocks, self.layers, self.channels)
    }
}

impl Default for GeometrySpec {
    fn default() -> Self {
        Self::DESK
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: Mode,
    /// Weight of the structural term; used by forward and bidirectional.
    pub alpha: Option<f64>,
    /// Weight of the backward term; used by bidirectional.
    pub beta: Option<f64>,
    pub c: f64,
    pub fixed_point_iters: usize,
    pub power_iters: usize,
    pub tol: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_iterations: usize,
    pub seed: u64,
    pub log_every: usize,
    /// Train on random square crops of this size instead of whole images.
    pub patch: Option<usize>,
    pub geometry: GeometrySpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Backward,
            alpha: Some(0.84),
            beta: Some(2.0),
            c: 0.7,
            fixed_point_iters: 2,
            power_iters: 5,
            tol: 0.02,
            learning_rate: 1e-3,
            batch_size: 8,
            max_iterations: 2000,
            seed: 0,
            log_every: 50,
            patch: None,
            geometry: GeometrySpec::DESK,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = self.weights()?;
        if let Some(a) = weights.0 {
            LossWeights::new(a, weights.1.unwrap_or(0.0))?;
        }
        if let Some(b) = weights.1 {
            LossWeights::new(weights.0.unwrap_or(0.0), b)?;
        }
        self.budget()?;
        self.geometry.geometry()?;
        if self.fixed_point_iters == 0 {
            return Err(Error::Config("fixed_point_iters must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be positive".into()));
        }
        if let Some(p) = self.patch {
            let min = if self.mode == Mode::Backward { 1 } else { crate::metrics::SsimParams::default().window };
            if p < min {
                return Err(Error::Config(format!("patch {p} is smaller than {min}")));
            }
        }
        Ok(())
    }

    /// The `(alpha, beta)` the mode uses; `None` where the mode has no use
    /// for a weight.
    fn weights(&self) -> Result<(Option<f64>, Option<f64>)> {
        let need = |w: Option<f64>, name: &str| {
            w.ok_or_else(|| Error::Config(format!("mode {} requires {name}", self.mode)))
        };
        Ok(match self.mode {
            Mode::Forward => (Some(need(self.alpha, "alpha")?), None),
            Mode::Backward => (None, None),
            Mode::Bidirectional => (Some(need(self.alpha, "alpha")?), Some(need(self.beta, "beta")?)),
        })
    }

    pub fn budget(&self) -> Result<LipschitzBudget> {
        LipschitzBudget::new(self.c, self.power_iters, self.tol).map_err(|e| Error::Config(e.to_string()))
    }

    /// Freshly initialized network for this configuration.
    pub fn init_net(&self, image_hw: (usize, usize)) -> Result<InvSharpNet> {
        InvSharpNet::new_random(self.geometry.geometry()?, self.budget()?, self.fixed_point_iters, image_hw, self.seed)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    /// Final network, or the last finite one when training aborted.
    pub net: InvSharpNet,
    /// `(step, mean batch loss)` every `log_every` steps and at the last step.
    pub log: Vec<(usize, f64)>,
    /// Set when a non-finite loss or gradient stopped training early.
    pub aborted: Option<String>,
}

impl TrainOutcome {
    pub fn log_csv(&self) -> String {
        let mut s = String::from("step,loss\n");
        for (step, loss) in &self.log {
            let _ = writeln!(s, "{step},{loss}");
        }
        s
    }
}

/// Aligned crops of one sample's training images.
struct View {
    truth: Tensor,
    undersampled: Tensor,
    recon: Tensor,
}

fn view(sample: &Sample, patch: Option<usize>, rng: &mut ChaCha8Rng) -> Result<View> {
    let (h, w) = sample.truth.hw()?;
    match patch {
        Some(p) if p < h || p < w => {
            let (ph, pw) = (p.min(h), p.min(w));
            let top = rng.random_range(0..=h - ph);
            let left = rng.random_range(0..=w - pw);
            Ok(View {
                truth: sample.truth.crop(top, left, ph, pw)?,
                undersampled: sample.undersampled.crop(top, left, ph, pw)?,
                recon: sample.recon.crop(top, left, ph, pw)?,
            })
        }
        _ => Ok(View {
            truth: sample.truth.clone(),
            undersampled: sample.undersampled.clone(),
            recon: sample.recon.clone(),
        }),
    }
}

/// Loss value and parameter gradients for one sample.
fn sample_gradients(net: &InvSharpNet, cfg: &TrainConfig, v: &View) -> Result<(f64, Vec<Tensor>)> {
    let (alpha, beta) = cfg.weights()?;
    let tape = Tape::new();
    let bound = net.bind(&tape);
    let forward_term = || -> Result<_> {
        let x = tape.constant(Tensor::stack_channels(&[&v.recon, &v.recon])?);
        let out = bound.forward(x)?.channel(0)?;
        forward_loss(out, tape.constant(v.truth.clone()), alpha.expect("validated"))
    };
    let backward_term = || -> Result<_> {
        let x = tape.constant(Tensor::stack_channels(&[&v.truth, &v.undersampled])?);
        let out = bound.inverse(x)?;
        backward_loss(out.channel(0)?, out.channel(1)?, tape.constant(v.recon.clone()))
    };
    let loss = match cfg.mode {
        Mode::Forward => forward_term()?,
        Mode::Backward => backward_term()?,
        Mode::Bidirectional => bidirectional_loss(forward_term()?, backward_term()?, beta.expect("validated"))?,
    };
    let value = loss.value().item();
    let mut grads = backprop(&tape, loss)?;
    let g = bound
        .vars()
        .into_iter()
        .map(|var| grads.take(var).expect("every parameter reaches the loss"))
        .collect();
    Ok((value, g))
}

/// Training loss of `cfg.mode` on one whole sample and its gradient with
/// respect to every network parameter, in [`InvSharpNet::params`] order.
pub fn loss_and_gradients(net: &InvSharpNet, cfg: &TrainConfig, truth: &Tensor, undersampled: &Tensor, recon: &Tensor) -> Result<(f64, Vec<Tensor>)> {
    let v = View {
        truth: truth.clone(),
        undersampled: undersampled.clone(),
        recon: recon.clone(),
    };
    sample_gradients(net, cfg, &v)
}

/// Run the configured regime on `samples` starting from `net`.
pub fn train_from(mut net: InvSharpNet, cfg: &TrainConfig, samples: &[Sample]) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut log = Vec::new();
    if cfg.max_iterations == 0 {
        return Ok(TrainOutcome { net, log, aborted: None });
    }
    if samples.is_empty() {
        return Err(Error::InvalidArgument("training needs at least one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let mut adam = AdamState::new(net.params());
    let mut order: Vec<usize> = Vec::new();
    let inv_b = 1.0 / cfg.batch_size as f64;
    for step in 0..cfg.max_iterations {
        let mut acc: Vec<Tensor> = net.params().map(|p| Tensor::zeros(p.shape())).collect();
        let mut loss_sum = 0.0;
        for _ in 0..cfg.batch_size {
            if order.is_empty() {
                order = (0..samples.len()).collect();
                order.shuffle(&mut rng);
            }
            let v = view(&samples[order.pop().expect("refilled")], cfg.patch, &mut rng)?;
            let (loss, grads) = sample_gradients(&net, cfg, &v)?;
            loss_sum += loss;
            for (a, g) in acc.iter_mut().zip(&grads) {
                a.data_mut().iter_mut().zip(g.data()).for_each(|(a, g)| *a += g);
            }
        }
        let loss = loss_sum * inv_b;
        if !loss.is_finite() {
            let msg = format!("non-finite loss {loss} at step {step}");
            return Ok(TrainOutcome { net, log, aborted: Some(msg) });
        }
        if step % cfg.log_every == 0 || step + 1 == cfg.max_iterations {
            log.push((step, loss));
        }
        acc.iter_mut().for_each(|t| t.data_mut().iter_mut().for_each(|g| *g *= inv_b));
        let before = net.clone();
        let mut params: Vec<&mut Tensor> = net.params_mut().collect();
        if let Err(e) = adam_step(&mut params, &acc, &mut adam, cfg.learning_rate) {
            return Ok(TrainOutcome {
                net: before,
                log,
                aborted: Some(format!("step {step}: {e}")),
            });
        }
        net.enforce_budget()?;
        if !net.params().all(Tensor::is_finite) {
            return Ok(TrainOutcome {
                net: before,
                log,
                aborted: Some(format!("non-finite parameters after step {step}")),
            });
        }
    }
    Ok(TrainOutcome { net, log, aborted: None })
}

/// Initialize from the configuration and train.
pub fn train(cfg: &TrainConfig, samples: &[Sample], image_hw: (usize, usize)) -> Result<TrainOutcome> {
    cfg.validate()?;
    train_from(cfg.init_net(image_hw)?, cfg, samples)
}

/// Metrics against the ground truth for the baseline reconstruction, the
/// sharpened reconstruction (with data consistency) and the under-sampled
/// image.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReports {
    pub recon: MetricsReport,
    pub sharp: MetricsReport,
    pub undersampled: MetricsReport,
}

pub fn evaluate(net: &InvSharpNet, samples: &[Sample]) -> Result<EvalReports> {
    for s in samples {
        let hw = s.truth.hw()?;
        if hw != net.image_hw {
            return Err(Error::Incompatible(format!(
                "network was built for {}x{} images, sample {} is {}x{}",
                net.image_hw.0, net.image_hw.1, s.index, hw.0, hw.1
            )));
        }
    }
    let sharp = samples
        .iter()
        .map(|s| net.sharpen(&s.recon, &s.dc()?))
        .collect::<Result<Vec<_>>>()?;
    let truth: Vec<Tensor> = samples.iter().map(|s| s.truth.clone()).collect();
    let recon: Vec<Tensor> = samples.iter().map(|s| s.recon.clone()).collect();
    let under: Vec<Tensor> = samples.iter().map(|s| s.undersampled.clone()).collect();
    let params = SsimParams::default();
    let label = |mut r: MetricsReport| {
        for (row, s) in r.rows.iter_mut().zip(samples) {
            row.id = s.index.to_string();
        }
        r
    };
    Ok(EvalReports {
        recon: label(evaluate_pairset(&recon, &truth, &params)?),
        sharp: label(evaluate_pairset(&sharp, &truth, &params)?),
        undersampled: label(evaluate_pairset(&under, &truth, &params)?),
    })
}

/// Mean inversion error `mean |I - S(S^-1(I, Y))|` over samples.
pub fn mean_inversion_error(net: &InvSharpNet, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for s in samples {
        total += net.inversion_error_map(&s.truth, &s.undersampled)?.mean();
    }
    Ok(total / samples.len() as f64)
}

/// Mean backward loss over whole images.
pub fn mean_backward_error(net: &InvSharpNet, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for s in samples {
        let (a, b) = net.backward_pass(&s.truth, &s.undersampled)?;
        total += crate::metrics::mae(&a, &s.recon)? + crate::metrics::mae(&b, &s.recon)?;
    }
    Ok(total / samples.len() as f64)
}

/// Settings shared by both ablation sweeps. Each run trains in backward mode
/// from `base` with the swept value substituted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateConfig {
    pub c_list: Vec<f64>,
    pub seeds: Vec<u64>,
    pub small: GeometrySpec,
    /// Defaults to the training geometry.
    pub large: Option<GeometrySpec>,
    /// Training samples used for the final backward error.
    pub error_samples: usize,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self {
            c_list: vec![0.8, 0.7, 0.6],
            seeds: (0..5).collect(),
            small: GeometrySpec {
                blocks: 2,
                layers: 3,
                channels: 8,
            },
            large: None,
            error_samples: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LipschitzRow {
    pub c: f64,
    pub mean_inv_error: f64,
    pub final_backward_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SizeRow {
    pub geometry: String,
    pub params: usize,
    pub final_backward_error: f64,
}

/// One backward-mode run: its mean inversion error on `eval` and mean
/// backward error on the first `error_samples` training samples.
fn ablation_run(cfg: &TrainConfig, train_set: &[Sample], eval: &[Sample], error_samples: usize, hw: (usize, usize)) -> Result<(f64, f64)> {
    let out = train(cfg, train_set, hw)?;
    if let Some(msg) = out.aborted {
        return Err(Error::NonFinite(msg));
    }
    let inv = mean_inversion_error(&out.net, eval)?;
    let bwd = mean_backward_error(&out.net, &train_set[..error_samples.min(train_set.len())])?;
    Ok((inv, bwd))
}

fn ablation_cfg(base: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        mode: Mode::Backward,
        seed,
        ..base.clone()
    }
}

pub fn ablate_lipschitz(base: &TrainConfig, ab: &AblateConfig, train_set: &[Sample], eval_set: &[Sample], hw: (usize, usize)) -> Result<Vec<LipschitzRow>> {
    if ab.seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    ab.c_list
        .iter()
        .map(|&c| {
            let (mut inv, mut bwd) = (0.0, 0.0);
            for &seed in &ab.seeds {
                let cfg = TrainConfig { c, ..ablation_cfg(base, seed) };
                let (i, b) = ablation_run(&cfg, train_set, eval_set, ab.error_samples, hw)?;
                inv += i;
                bwd += b;
            }
            let n = ab.seeds.len() as f64;
            Ok(LipschitzRow {
                c,
                mean_inv_error: inv / n,
                final_backward_error: bwd / n,
            })
        })
        .collect()
}

pub fn ablate_size(base: &TrainConfig, ab: &AblateConfig, train_set: &[Sample], hw: (usize, usize)) -> Result<Vec<SizeRow>> {
    if ab.seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let large = ab.large.unwrap_or(base.geometry);
    [large, ab.small]
        .iter()
        .map(|g| {
            let mut bwd = 0.0;
            for &seed in &ab.seeds {
                let cfg = TrainConfig {
                    geometry: *g,
                    ..ablation_cfg(base, seed)
                };
                bwd += ablation_run(&cfg, train_set, &[], ab.error_samples, hw)?.1;
            }
            Ok(SizeRow {
                geometry: g.label(),
                params: g.geometry()?.param_count(),
                final_backward_error: bwd / ab.seeds.len() as f64,
            })
        })
        .collect()
}

pub fn lipschitz_csv(rows: &[LipschitzRow]) -> String {
    let mut s = String::from("c,mean_inv_error,final_backward_error\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{}", r.c, r.mean_inv_error, r.final_backward_error);
    }
    s
}

pub fn size_csv(rows: &[SizeRow]) -> String {
    let mut s = String::from("geometry,params,final_backward_error\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{}", r.geometry, r.params, r.final_backward_error);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    use crate::mri_sim::{build_dataset, Dataset, DatasetConfig, PhantomSpec, ReconMode, ReconSpec};

    fn tiny_dataset(n_train: usize, n_eval: usize) -> Dataset {
        let dir = tempfile::tempdir().unwrap();
        let cfg = DatasetConfig {
            n_train,
            n_eval,
            phantom: PhantomSpec {
                size: 16,
                ..PhantomSpec::default()
            },
            recon: ReconSpec {
                mode: ReconMode::ZeroFilled,
                ..ReconSpec::default()
            },
            ..DatasetConfig::default()
        };
        build_dataset(&cfg, dir.path()).unwrap();
        let ds = Dataset::load(dir.path()).unwrap();
        std::mem::forget(dir);
        ds
    }

    fn tiny_cfg(mode: Mode, steps: usize) -> TrainConfig {
        TrainConfig {
            mode,
            max_iterations: steps,
            batch_size: 2,
            log_every: 5,
            learning_rate: 3e-3,
            geometry: GeometrySpec {
                blocks: 2,
                layers: 3,
                channels: 4,
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_iterations_returns_initialization() {
        let ds = tiny_dataset(2, 0);
        let cfg = tiny_cfg(Mode::Backward, 0);
        let out = train(&cfg, &ds.train, (16, 16)).unwrap();
        assert_eq!(out.net, cfg.init_net((16, 16)).unwrap());
        assert!(out.log.is_empty());
    }

    #[test]
    fn training_is_deterministic_and_respects_budget() {
        let ds = tiny_dataset(4, 0);
        for mode in [Mode::Forward, Mode::Backward, Mode::Bidirectional] {
            let cfg = tiny_cfg(mode, 6);
            let a = train(&cfg, &ds.train, (16, 16)).unwrap();
            let b = train(&cfg, &ds.train, (16, 16)).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.log.iter().map(|l| l.0).collect::<Vec<_>>(), vec![0, 5]);
            assert!(a.aborted.is_none());
            for block in &a.net.blocks {
                for layer in &block.branch.layers {
                    let cin = layer.weight.shape()[1];
                    let n = crate::lipschitz::brute_force_operator_norm(&layer.weight, [cin, 16, 16]).unwrap();
                    assert!(n <= 0.7 * 1.02, "{mode}: norm {n}");
                }
            }
        }
    }

    #[test]
    fn bidirectional_with_zero_beta_is_forward() {
        let ds = tiny_dataset(3, 0);
        let fwd = train(&tiny_cfg(Mode::Forward, 4), &ds.train, (16, 16)).unwrap();
        let cfg = TrainConfig {
            beta: Some(0.0),
            ..tiny_cfg(Mode::Bidirectional, 4)
        };
        let bi = train(&cfg, &ds.train, (16, 16)).unwrap();
        assert_eq!(fwd.log_csv(), bi.log_csv());
        assert_eq!(fwd.net, bi.net);
    }

    #[test]
    fn mode_weights_validation() {
        let mut cfg = tiny_cfg(Mode::Forward, 1);
        cfg.alpha = None;
        assert!(cfg.validate().is_err());
        cfg.mode = Mode::Backward;
        assert!(cfg.validate().is_ok());
        cfg.mode = Mode::Bidirectional;
        cfg.alpha = Some(0.84);
        cfg.beta = None;
        assert!(cfg.validate().is_err());
        assert!("sideways".parse::<Mode>().is_err());
        assert_eq!("bidirectional".parse::<Mode>().unwrap(), Mode::Bidirectional);
    }

    #[test]
    fn evaluate_trivial_cases() {
        let ds = tiny_dataset(0, 3);
        let geometry = GeometrySpec::DESK.geometry().unwrap();
        let id = InvSharpNet::identity(geometry, LipschitzBudget::default(), 2, (16, 16));
        let reports = evaluate(&id, &ds.eval).unwrap();
        // Zero-filled recon already satisfies DC, so the identity keeps it.
        assert!((reports.sharp.mean_psnr() - reports.recon.mean_psnr()).abs() < 1e-9);
        assert_eq!(reports.recon.rows[0].id, "0");

        let mut full = ds.eval.clone();
        for s in &mut full {
            s.mask = Tensor::full(&[16, 16], 1.0);
            s.measured = crate::fft::fft2(&s.truth).unwrap();
        }
        let net = tiny_cfg(Mode::Backward, 0).init_net((16, 16)).unwrap();
        let reports = evaluate(&net, &full).unwrap();
        assert!(reports.sharp.rows.iter().all(|r| r.psnr_db > 200.0 || r.psnr_db.is_infinite()));

        let wrong = tiny_cfg(Mode::Backward, 0).init_net((8, 8)).unwrap();
        assert!(matches!(evaluate(&wrong, &ds.eval), Err(Error::Incompatible(_))));
    }

    #[test]
    fn small_c_has_tiny_inversion_error() {
        let ds = tiny_dataset(1, 2);
        let cfg = TrainConfig {
            c: 0.01,
            ..tiny_cfg(Mode::Backward, 0)
        };
        let net = cfg.init_net((16, 16)).unwrap();
        assert!(mean_inversion_error(&net, &ds.eval).unwrap() < 1e-6);
    }

    #[test]
    fn ablations_shape_and_identical_geometries() {
        let ds = tiny_dataset(3, 2);
        let base = tiny_cfg(Mode::Backward, 3);
        let ab = AblateConfig {
            seeds: vec![0, 1],
            small: base.geometry,
            error_samples: 2,
            ..AblateConfig::default()
        };
        let rows = ablate_lipschitz(&base, &ab, &ds.train, &ds.eval, (16, 16)).unwrap();
        assert_eq!(rows.iter().map(|r| r.c).collect::<Vec<_>>(), vec![0.8, 0.7, 0.6]);
        assert_eq!(lipschitz_csv(&rows).lines().count(), 4);
        let rows = ablate_size(&base, &ab, &ds.train, (16, 16)).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].final_backward_error, rows[1].final_backward_error);
        assert!(size_csv(&rows).starts_with("geometry,params,final_backward_error\n2x3x4,"));
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut w = Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let before = w.clone();
        let mut state = AdamState::new([&w]);
        adam_step(&mut [&mut w], &[Tensor::zeros(&[3])], &mut state, 0.1).unwrap();
        assert_eq!(w, before);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut w = Tensor::new(&[2], vec![0.0, 0.0]).unwrap();
        let mut state = AdamState::new([&w]);
        let g = Tensor::new(&[2], vec![3.0, -0.2]).unwrap();
        adam_step(&mut [&mut w], &[g], &mut state, 1e-3).unwrap();
        assert!((w.data()[0] + 1e-3).abs() < 1e-10);
        assert!((w.data()[1] - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn scalar_quadratic_converges() {
        let mut w = Tensor::scalar(0.0);
        let mut state = AdamState::new([&w]);
        for _ in 0..100 {
            let g = Tensor::scalar(2.0 * (w.item() - 3.0));
            adam_step(&mut [&mut w], &[g], &mut state, 0.1).unwrap();
        }
        assert!((w.item() - 3.0).abs() < 0.1, "w = {}", w.item());
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut w = Tensor::scalar(1.0);
        let mut state = AdamState::new([&w]);
        let err = adam_step(&mut [&mut w], &[Tensor::scalar(f64::NAN)], &mut state, 0.1);
        assert!(matches!(err, Err(Error::NonFinite(_))));
        assert_eq!(w.item(), 1.0);
        assert_eq!(state.step, 0);
    }
}
