//! KL-divergence training: loss, momentum SGD with per-group learning rates,
//! the step-decay schedule, clip sampling, validation and checkpointing.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::archive::{self, DType};
use crate::data::PreparedVideo;
use crate::error::{Error, Result};
use crate::infer::{assemble_clip, stack_batch};
use crate::model::{ModelConfig, Network};
use crate::ops::Mode;
use crate::rng::{self, Prng};
use crate::tape::Tape;
use crate::tensor::{ParamGroup, Parameter, Tensor};

/// Number of decoder learning-rate decays over a run.
pub const DECAYS: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Decay {
    /// Decay at fixed step counts.
    Steps { steps: [usize; 2] },
    /// Decay when validation loss has not improved for `patience` validations.
    Patience { patience: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    /// Clips per forward/backward pass; gradients of the micro-batches are
    /// averaged into one step. Defaults to the whole batch.
    #[serde(default)]
    pub micro_batch: Option<usize>,
    #[serde(default = "d_momentum")]
    pub momentum: f64,
    #[serde(default = "d_encoder_lr")]
    pub encoder_lr: f64,
    #[serde(default = "d_decoder_lr")]
    pub decoder_lr: f64,
    #[serde(default = "d_decay_factor")]
    pub decay_factor: f64,
    #[serde(default = "d_decay")]
    pub decay: Decay,
    #[serde(default = "d_total_steps")]
    pub total_steps: usize,
    #[serde(default = "d_validation_samples")]
    pub validation_samples: usize,
    #[serde(default = "d_validate_every")]
    pub validate_every: usize,
    #[serde(default = "d_loss_eps")]
    pub loss_eps: f64,
    #[serde(default)]
    pub seed: u64,
}

fn d_batch() -> usize {
    40
}
fn d_momentum() -> f64 {
    0.9
}
fn d_encoder_lr() -> f64 {
    0.001
}
fn d_decoder_lr() -> f64 {
    0.1
}
fn d_decay_factor() -> f64 {
    10.0
}
fn d_decay() -> Decay {
    Decay::Steps { steps: [750, 950] }
}
fn d_total_steps() -> usize {
    1000
}
fn d_validation_samples() -> usize {
    2000
}
fn d_validate_every() -> usize {
    25
}
fn d_loss_eps() -> f64 {
    1e-7
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: d_batch(),
            micro_batch: None,
            momentum: d_momentum(),
            encoder_lr: d_encoder_lr(),
            decoder_lr: d_decoder_lr(),
            decay_factor: d_decay_factor(),
            decay: d_decay(),
            total_steps: d_total_steps(),
            validation_samples: d_validation_samples(),
            validate_every: d_validate_every(),
            loss_eps: d_loss_eps(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Desk-scale defaults: batch 4, small validation sample.
    pub fn toy() -> Self {
        Self {
            batch_size: 4,
            validation_samples: 32,
            ..Self::default()
        }
    }

    pub fn micro_batch_size(&self) -> usize {
        self.micro_batch.unwrap_or(self.batch_size).clamp(1, self.batch_size.max(1))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("momentum", self.momentum, true),
            ("encoder_lr", self.encoder_lr, false),
            ("decoder_lr", self.decoder_lr, false),
            ("loss_eps", self.loss_eps, false),
        ];
        for (name, v, allow_zero) in positive {
            if !v.is_finite() || v < 0.0 || (!allow_zero && v == 0.0) {
                return Err(Error::Config(format!("{name} = {v} must be positive")));
            }
        }
        if !(self.decay_factor >= 1.0) {
            return Err(Error::Config(format!("decay_factor = {} must be >= 1", self.decay_factor)));
        }
        if self.batch_size == 0 || self.total_steps == 0 || self.validate_every == 0 {
            return Err(Error::Config("batch_size, total_steps and validate_every must be >= 1".into()));
        }
        if self.micro_batch == Some(0) {
            return Err(Error::Config("micro_batch must be >= 1".into()));
        }
        match &self.decay {
            Decay::Steps { steps: [a, b] } => {
                if !(a < b && *b < self.total_steps) {
                    return Err(Error::Config(format!(
                        "decay steps [{a}, {b}] must be strictly increasing and below total_steps = {}",
                        self.total_steps
                    )));
                }
            }
            Decay::Patience { patience } if *patience == 0 => {
                return Err(Error::Config("patience must be >= 1".into()));
            }
            Decay::Patience { .. } => {}
        }
        Ok(())
    }
}

/// Learning rate per parameter group.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrMap {
    pub encoder: f64,
    pub decoder: f64,
}

impl LrMap {
    pub fn get(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Encoder => self.encoder,
            ParamGroup::Decoder => self.decoder,
        }
    }
}

/// Batch-mean KL divergence `sum G log(G / (P + eps))` between maps
/// normalized to unit sum, and its gradient with respect to `pred`.
/// The leading axis indexes maps.
pub fn kl_loss_with_grad(pred: &Tensor, gt: &Tensor, eps: f64) -> Result<(f64, Tensor)> {
    pred.check_same_shape("kl_loss", gt)?;
    let batch = pred.shape()[0];
    let n = pred.len() / batch;
    let mut grad = vec![0.0; pred.len()];
    let mut total = 0.0;
    for b in 0..batch {
        let p = &pred.data()[b * n..][..n];
        let g = &gt.data()[b * n..][..n];
        if p.iter().chain(g).any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("kl_loss: map {b} has negative or non-finite values")));
        }
        let gs: f64 = g.iter().sum();
        if gs == 0.0 {
            return Err(Error::InvalidArgument(format!("kl_loss: ground truth map {b} is all zero")));
        }
        let ps: f64 = p.iter().sum();
        if ps == 0.0 {
            return Err(Error::InvalidArgument(format!("kl_loss: prediction map {b} is all zero")));
        }
        let mut loss = 0.0;
        let mut inner = 0.0;
        for (pi, gi) in p.iter().zip(g) {
            let (ph, gh) = (pi / ps, gi / gs);
            if gh > 0.0 {
                loss += gh * (gh / (ph + eps)).ln();
                inner += gh * ph / (ph + eps);
            }
        }
        total += loss;
        let out = &mut grad[b * n..][..n];
        for ((o, pi), gi) in out.iter_mut().zip(p).zip(g) {
            let (ph, gh) = (pi / ps, gi / gs);
            *o = (inner - gh / (ph + eps)) / ps / batch as f64;
        }
    }
    Ok((total / batch as f64, Tensor::from_vec(pred.shape().to_vec(), grad)?))
}

pub fn kl_loss(pred: &Tensor, gt: &Tensor, eps: f64) -> Result<f64> {
    Ok(kl_loss_with_grad(pred, gt, eps)?.0)
}

/// Classic momentum: `v = m v + g; w -= lr v`. Every gradient is checked
/// before any parameter changes.
pub fn sgd_step(params: &mut [Parameter], lr: LrMap, momentum: f64) -> Result<()> {
    if let Some(p) = params.iter().find(|p| !p.grad.all_finite()) {
        return Err(Error::NonFinite(format!("gradient of {}", p.name)));
    }
    for p in params {
        let rate = lr.get(p.group);
        for ((w, v), g) in p.value.data_mut().iter_mut().zip(p.momentum.data_mut()).zip(p.grad.data()) {
            *v = momentum * *v + g;
            *w -= rate * *v;
        }
    }
    Ok(())
}

/// Decoder learning rate for fixed decay steps. In patience mode this is
/// the undecayed rate; use [`ScheduleState::decoder_lr`] instead.
pub fn lr_schedule(step: usize, config: &TrainConfig) -> f64 {
    let decays = match &config.decay {
        Decay::Steps { steps } => steps.iter().filter(|&&s| step >= s).count(),
        Decay::Patience { .. } => 0,
    };
    config.decoder_lr / config.decay_factor.powi(decays as i32)
}

/// Mutable schedule state, saved in checkpoints.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScheduleState {
    pub decays: usize,
    pub best_val: Option<f64>,
    pub since_best: usize,
}

impl ScheduleState {
    pub fn decoder_lr(&self, step: usize, config: &TrainConfig) -> f64 {
        match config.decay {
            Decay::Steps { .. } => lr_schedule(step, config),
            Decay::Patience { .. } => config.decoder_lr / config.decay_factor.powi(self.decays as i32),
        }
    }

    /// Records a validation loss; returns true when this triggers a decay.
    pub fn observe(&mut self, val_loss: f64, config: &TrainConfig) -> bool {
        let improved = self.best_val.is_none_or(|b| val_loss < b);
        if improved {
            self.best_val = Some(val_loss);
            self.since_best = 0;
            return false;
        }
        self.since_best += 1;
        match config.decay {
            Decay::Patience { patience } if self.since_best >= patience && self.decays < DECAYS => {
                self.decays += 1;
                self.since_best = 0;
                true
            }
            _ => false,
        }
    }
}

/// A clip: frames `start..start+T` of video `video`, indices wrapping for
/// videos shorter than `T`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ClipRef {
    pub video: usize,
    pub start: usize,
}

fn starts(video: &PreparedVideo, clip_len: usize) -> usize {
    (video.len() + 1).saturating_sub(clip_len).max(1)
}

pub fn total_clips(videos: &[PreparedVideo], clip_len: usize) -> usize {
    videos.iter().map(|v| starts(v, clip_len)).sum()
}

fn clip_at(videos: &[PreparedVideo], clip_len: usize, mut flat: usize) -> ClipRef {
    for (i, v) in videos.iter().enumerate() {
        let n = starts(v, clip_len);
        if flat < n {
            return ClipRef { video: i, start: flat };
        }
        flat -= n;
    }
    unreachable!("flat clip index beyond total")
}

fn check_videos(videos: &[PreparedVideo]) -> Result<()> {
    if videos.is_empty() || videos.iter().any(PreparedVideo::is_empty) {
        return Err(Error::InvalidArgument("dataset has no videos or an empty video".into()));
    }
    Ok(())
}

/// `count` clips drawn uniformly (with replacement) from all
/// `(video, start)` pairs, so longer videos contribute proportionally more.
pub fn sample_clips<R: Rng + ?Sized>(
    videos: &[PreparedVideo],
    clip_len: usize,
    count: usize,
    rng: &mut R,
) -> Result<Vec<ClipRef>> {
    check_videos(videos)?;
    let total = total_clips(videos, clip_len);
    Ok((0..count).map(|_| clip_at(videos, clip_len, rng.random_range(0..total))).collect())
}

/// Input `(B, 3, T, H, W)` and target `(B, 1, H, W)`; the target is the
/// density of the clip's last frame.
pub fn clip_batch(videos: &[PreparedVideo], clips: &[ClipRef], clip_len: usize) -> Result<(Tensor, Tensor)> {
    let mut inputs = Vec::with_capacity(clips.len());
    let mut targets = Vec::with_capacity(clips.len());
    for c in clips {
        let v = &videos[c.video];
        let idx: Vec<usize> = (0..clip_len).map(|i| (c.start + i) % v.len()).collect();
        inputs.push(assemble_clip(&v.frames, &idx)?);
        let last = &v.targets[*idx.last().expect("clip_len >= 1")];
        let mut shape = vec![1, 1];
        shape.extend_from_slice(last.shape());
        targets.push(last.reshape(shape)?);
    }
    Ok((stack_batch(&inputs)?, stack_batch(&targets)?))
}

/// Mean eval-mode KL over `count` clips sampled without replacement, or over
/// every clip when `count` reaches the total.
pub fn validate<R: Rng + ?Sized>(
    net: &Network,
    videos: &[PreparedVideo],
    count: usize,
    eps: f64,
    batch: usize,
    rng: &mut R,
) -> Result<f64> {
    check_videos(videos)?;
    let clip_len = net.config().clip_len;
    let total = total_clips(videos, clip_len);
    let flat: Vec<usize> = if count >= total {
        (0..total).collect()
    } else {
        index::sample(rng, total, count.max(1)).into_vec()
    };
    let clips: Vec<ClipRef> = flat.into_iter().map(|f| clip_at(videos, clip_len, f)).collect();
    let mut sum = 0.0;
    for chunk in clips.chunks(batch.max(1)) {
        let (x, y) = clip_batch(videos, chunk, clip_len)?;
        let pred = net.forward(&x, Mode::Eval)?;
        sum += kl_loss(&pred, &y, eps)? * chunk.len() as f64;
    }
    Ok(sum / clips.len() as f64)
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    /// Completed optimizer steps, starting at 1.
    pub step: usize,
    pub loss: f64,
    pub decoder_lr: f64,
    pub val_loss: Option<f64>,
}

impl LogRow {
    pub const HEADER: &'static str = "step,loss,decoder_lr,val_loss";

    pub fn csv(&self) -> String {
        let val = self.val_loss.map(|v| v.to_string()).unwrap_or_default();
        format!("{},{},{},{val}", self.step, self.loss, self.decoder_lr)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub row: LogRow,
    /// Learning rates used for this step.
    pub lr: LrMap,
    /// The decoder rate changes after this step.
    pub decayed: bool,
}

/// Everything besides tensors needed to resume a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub step: usize,
    pub schedule: ScheduleState,
    pub rng: Prng,
    pub momentum_buffers: Vec<String>,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

pub const MOMENTUM_PREFIX: &str = "optimizer.momentum.";

pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub struct Trainer {
    pub net: Network,
    pub config: TrainConfig,
    step: usize,
    schedule: ScheduleState,
    rng: Prng,
}

impl Trainer {
    pub fn new(net: Network, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let rng = rng::seeded(config.seed);
        Ok(Self {
            net,
            config,
            step: 0,
            schedule: ScheduleState::default(),
            rng,
        })
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn schedule(&self) -> &ScheduleState {
        &self.schedule
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.config.total_steps
    }

    pub fn lr_map(&self) -> LrMap {
        LrMap {
            encoder: self.config.encoder_lr,
            decoder: self.schedule.decoder_lr(self.step, &self.config),
        }
    }

    /// Runs one optimizer step on `train`, validating on `val` every
    /// `validate_every` steps when given.
    pub fn step(&mut self, train: &[PreparedVideo], val: Option<&[PreparedVideo]>) -> Result<StepOutcome> {
        let clip_len = self.net.config().clip_len;
        let lr = self.lr_map();
        let batch = self.config.batch_size;
        let clips = sample_clips(train, clip_len, batch, &mut self.rng)?;
        self.net.zero_grad();
        let mut loss = 0.0;
        for chunk in clips.chunks(self.config.micro_batch_size()) {
            let (x, y) = clip_batch(train, chunk, clip_len)?;
            let weight = chunk.len() as f64 / batch as f64;
            let mut tape = Tape::new();
            let input = tape.leaf(x);
            let out = self.net.forward_train(&mut tape, input)?;
            let (l, g) = kl_loss_with_grad(tape.value(out), &y, self.config.loss_eps)?;
            let grads = tape.backward_with(out, g.scale(weight))?;
            self.net.accumulate(&grads)?;
            loss += l * weight;
        }
        sgd_step(self.net.params_mut(), lr, self.config.momentum)?;
        self.step += 1;

        let mut val_loss = None;
        let mut decayed = false;
        if let Some(val) = val.filter(|_| self.step % self.config.validate_every == 0) {
            let mut vr = rng::child(self.config.seed ^ 0x5641_4c49_4441_5445, self.step as u64);
            let v = validate(
                &self.net,
                val,
                self.config.validation_samples,
                self.config.loss_eps,
                self.config.micro_batch_size(),
                &mut vr,
            )?;
            decayed |= self.schedule.observe(v, &self.config);
            val_loss = Some(v);
        }
        if let Decay::Steps { .. } = self.config.decay {
            decayed = lr_schedule(self.step, &self.config) < lr.decoder;
        }
        Ok(StepOutcome {
            row: LogRow {
                step: self.step,
                loss,
                decoder_lr: lr.decoder,
                val_loss,
            },
            lr,
            decayed,
        })
    }

    pub fn sidecar(&self) -> Sidecar {
        Sidecar {
            step: self.step,
            schedule: self.schedule.clone(),
            rng: self.rng.clone(),
            momentum_buffers: self.net.params().iter().map(|p| format!("{MOMENTUM_PREFIX}{}", p.name)).collect(),
            model: self.net.config().clone(),
            train: self.config.clone(),
        }
    }

    /// Network state and momentum buffers at full precision.
    pub fn checkpoint_entries(&self) -> Vec<(String, Tensor)> {
        let mut entries = self.net.state();
        entries.extend(
            self.net
                .params()
                .iter()
                .map(|p| (format!("{MOMENTUM_PREFIX}{}", p.name), p.momentum.clone())),
        );
        entries
    }

    /// Writes `path` (f64 archive) and `path.json` (sidecar).
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        archive::save(path, &self.checkpoint_entries(), DType::F64)?;
        let side = sidecar_path(path);
        fs::write(&side, serde_json::to_string_pretty(&self.sidecar())?).map_err(|e| Error::io(&side, e))
    }

    /// Rebuilds a trainer from [`Trainer::save_checkpoint`] output. The
    /// model config comes from the sidecar; `config` may override training
    /// settings (e.g. extend `total_steps`).
    pub fn resume(path: &Path, config: Option<TrainConfig>) -> Result<Self> {
        let side = sidecar_path(path);
        let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let sidecar: Sidecar = serde_json::from_str(&text)?;
        let mut entries = archive::load(path)?;
        let mut net = Network::build(&sidecar.model)?;
        let mut momenta = Vec::with_capacity(sidecar.momentum_buffers.len());
        entries.retain(|(name, t)| match name.strip_prefix(MOMENTUM_PREFIX) {
            Some(param) => {
                momenta.push((param.to_string(), t.clone()));
                false
            }
            None => true,
        });
        net.load_state(&entries)?;
        for p in net.params_mut() {
            let (_, m) = momenta
                .iter()
                .find(|(n, _)| *n == p.name)
                .ok_or_else(|| Error::Archive(format!("missing momentum buffer for {}", p.name)))?;
            p.value.check_same_shape("momentum buffer", m)?;
            p.momentum = m.clone();
        }
        let config = config.unwrap_or(sidecar.train);
        config.validate()?;
        Ok(Self {
            net,
            config,
            step: sidecar.step,
            schedule: sidecar.schedule,
            rng: sidecar.rng,
        })
    }
}
