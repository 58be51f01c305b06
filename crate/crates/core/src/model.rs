//! Network assembly: an S3D-style separable encoder followed by a
//! prediction network that upsamples spatially and aggregates time.
//!
//! The encoder reaches `(C, T/td, H/32, W/32)` where `td` is the encoder's
//! temporal downsample factor. The decoder first climbs to quarter
//! resolution with one transposed convolution and two switch-fed
//! max-unpoolings, then runs the aggregation plan, which interleaves two
//! more spatial doublings with temporal convolutions until one frame is
//! left. A `1x1x1` convolution and a sigmoid produce the map.
//!
//! Max-unpooling cannot reuse the encoder's own pooling switches because
//! the encoder taps still carry more time steps than the decoder. Each
//! unpooling layer therefore gets its switches from an auxiliary pooling
//! pair on its encoder tap: a temporal max-pool down to the decoder's
//! temporal length, then a spatial max-pool that records the switches.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::{self, ConvSpec, Mode, RunningStats};
use crate::rng;
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::{ParamGroup, Parameter, Tensor};

pub const SPATIAL_DOWNSAMPLE: usize = 32;
/// Stage-B decoder layers never go below this width.
pub const MIN_DECODER_CHANNELS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// Two spatial upsamplings, then one temporal convolution.
    Late,
    /// A temporal convolution before each spatial upsampling.
    EarlyTwoStep,
    /// A temporal convolution after each spatial upsampling.
    LateTwoStep,
}

impl Aggregation {
    pub const ALL: [Aggregation; 3] = [Self::Late, Self::EarlyTwoStep, Self::LateTwoStep];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Upsampling {
    /// Max-unpooling fed by auxiliary-pooling switches.
    Unpool,
    /// Trilinear interpolation in place of unpooling.
    Trilinear,
    /// `1x2x2` stride-`1x2x2` transposed convolution in place of unpooling.
    Transposed,
}

impl Upsampling {
    pub const ALL: [Upsampling; 3] = [Self::Unpool, Self::Trilinear, Self::Transposed];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "ModelConfigFile")]
pub struct ModelConfig {
    /// Frames per input clip (T).
    pub clip_len: usize,
    /// `(H, W)` every frame is resized to.
    pub input_size: [usize; 2],
    /// Widths of the four encoder stages.
    pub encoder_channels: [usize; 4],
    pub spatial_downsample: usize,
    /// Encoder temporal reduction: 8 for the full encoder, 4 or 2 for short
    /// clips. Defaults to [`ModelConfig::temporal_downsample_for`] when omitted.
    pub temporal_downsample: usize,
    pub aggregation: Aggregation,
    pub upsampling: Upsampling,
    /// How many of the two quarter-resolution upsamplings are max-unpoolings
    /// in `unpool` mode; the others become transposed convolutions.
    pub unpool_layers: usize,
    pub seed: u64,
}

/// On-disk form: every field but `clip_len` optional.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelConfigFile {
    clip_len: usize,
    #[serde(default = "default_input_size")]
    input_size: [usize; 2],
    #[serde(default = "default_channels")]
    encoder_channels: [usize; 4],
    #[serde(default = "default_spatial_downsample")]
    spatial_downsample: usize,
    #[serde(default)]
    temporal_downsample: Option<usize>,
    #[serde(default = "default_aggregation")]
    aggregation: Aggregation,
    #[serde(default = "default_upsampling")]
    upsampling: Upsampling,
    #[serde(default = "default_unpool_layers")]
    unpool_layers: usize,
    #[serde(default)]
    seed: u64,
}

impl From<ModelConfigFile> for ModelConfig {
    fn from(f: ModelConfigFile) -> Self {
        Self {
            clip_len: f.clip_len,
            input_size: f.input_size,
            encoder_channels: f.encoder_channels,
            spatial_downsample: f.spatial_downsample,
            temporal_downsample: f
                .temporal_downsample
                .unwrap_or_else(|| Self::temporal_downsample_for(f.clip_len)),
            aggregation: f.aggregation,
            upsampling: f.upsampling,
            unpool_layers: f.unpool_layers,
            seed: f.seed,
        }
    }
}

fn default_input_size() -> [usize; 2] {
    [224, 384]
}
fn default_channels() -> [usize; 4] {
    [16, 32, 64, 128]
}
fn default_spatial_downsample() -> usize {
    SPATIAL_DOWNSAMPLE
}
fn default_aggregation() -> Aggregation {
    Aggregation::LateTwoStep
}
fn default_upsampling() -> Upsampling {
    Upsampling::Unpool
}
fn default_unpool_layers() -> usize {
    2
}

impl ModelConfig {
    /// Toy widths `[16, 32, 64, 128]` at 224x384.
    pub fn toy(clip_len: usize) -> Self {
        Self {
            clip_len,
            input_size: default_input_size(),
            encoder_channels: default_channels(),
            spatial_downsample: SPATIAL_DOWNSAMPLE,
            temporal_downsample: Self::temporal_downsample_for(clip_len),
            aggregation: Aggregation::LateTwoStep,
            upsampling: Upsampling::Unpool,
            unpool_layers: 2,
            seed: 0,
        }
    }

    /// Widths `[2, 4, 8, 16]` at 32x64, for tests and desk-scale training.
    pub fn tiny(clip_len: usize) -> Self {
        Self {
            input_size: [32, 64],
            encoder_channels: [2, 4, 8, 16],
            ..Self::toy(clip_len)
        }
    }

    /// Inception-scale widths, roughly the size of the original model.
    pub fn paperlike(clip_len: usize) -> Self {
        Self {
            encoder_channels: [64, 192, 480, 832],
            ..Self::toy(clip_len)
        }
    }

    /// Largest supported encoder temporal factor for a clip length:
    /// 8 when `T % 16 == 0`, else 4 or 2 (reduced temporal depth).
    pub fn temporal_downsample_for(clip_len: usize) -> usize {
        [8, 4, 2]
            .into_iter()
            .find(|td| clip_len % (2 * td) == 0)
            .unwrap_or(8)
    }

    pub fn with_aggregation(mut self, aggregation: Aggregation) -> Self {
        self.aggregation = aggregation;
        self
    }

    pub fn with_upsampling(mut self, upsampling: Upsampling) -> Self {
        self.upsampling = upsampling;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Temporal length of the encoder output, `T / td`.
    pub fn encoded_len(&self) -> usize {
        self.clip_len / self.temporal_downsample
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.clip_len;
        let td = self.temporal_downsample;
        let [h, w] = self.input_size;
        if self.spatial_downsample != SPATIAL_DOWNSAMPLE {
            return Err(Error::Config(format!(
                "spatial_downsample = {} but the encoder reduces space by exactly {SPATIAL_DOWNSAMPLE}",
                self.spatial_downsample
            )));
        }
        if ![2, 4, 8].contains(&td) {
            return Err(Error::Config(format!("temporal_downsample = {td}, expected 2, 4 or 8")));
        }
        if t == 0 || t % (2 * td) != 0 {
            return Err(Error::Config(format!(
                "T = {t} must be a positive multiple of 2 * temporal_downsample = {} \
                 (encoder gives T/{td} steps, the first temporal conv halves them); T % {} = {}",
                2 * td,
                2 * td,
                t % (2 * td).max(1)
            )));
        }
        for (name, d) in [("H", h), ("W", w)] {
            if d == 0 || d % SPATIAL_DOWNSAMPLE != 0 {
                return Err(Error::Config(format!(
                    "{name} = {d} must be a positive multiple of {SPATIAL_DOWNSAMPLE}; {name} % {SPATIAL_DOWNSAMPLE} = {}",
                    d % SPATIAL_DOWNSAMPLE
                )));
            }
        }
        if self.encoder_channels.contains(&0) {
            return Err(Error::Config(format!(
                "encoder_channels {:?} must all be positive",
                self.encoder_channels
            )));
        }
        if self.unpool_layers > 2 {
            return Err(Error::Config(format!(
                "unpool_layers = {} but the encoder exposes only 2 switch taps",
                self.unpool_layers
            )));
        }
        let plan = aggregation_plan(self)?;
        let temporal: usize = plan
            .iter()
            .map(|s| match s {
                AggStep::TemporalConv(k) => *k,
                AggStep::SpatialUp => 1,
            })
            .product();
        if td * temporal != t {
            return Err(Error::Config(format!(
                "encoder factor {td} x decoder temporal factors {temporal} != T = {t}"
            )));
        }
        Ok(())
    }
}

/// One step of the stage-B decoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AggStep {
    /// Transposed convolution doubling H and W.
    SpatialUp,
    /// Non-overlapping temporal convolution dividing T by the factor.
    TemporalConv(usize),
}

impl fmt::Display for AggStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AggStep::SpatialUp => write!(f, "up x2"),
            AggStep::TemporalConv(k) => write!(f, "tconv /{k}"),
        }
    }
}

/// The order of spatial doublings and temporal reductions after quarter
/// resolution. With `Te = T / td` encoded steps, `p = 2` and `q = Te / 2`:
/// late is `[up, up, /Te]`, early two-step `[/p, up, /q, up]` and late
/// two-step `[up, /p, up, /q]`.
pub fn aggregation_plan(config: &ModelConfig) -> Result<Vec<AggStep>> {
    use AggStep::*;
    let te = config.clip_len / config.temporal_downsample.max(1);
    let plan = match config.aggregation {
        Aggregation::Late => vec![SpatialUp, SpatialUp, TemporalConv(te)],
        Aggregation::EarlyTwoStep => vec![TemporalConv(2), SpatialUp, TemporalConv(te / 2), SpatialUp],
        Aggregation::LateTwoStep => vec![SpatialUp, TemporalConv(2), SpatialUp, TemporalConv(te / 2)],
    };
    let mut remaining = te;
    for step in &plan {
        if let TemporalConv(k) = *step {
            if k == 0 || remaining % k != 0 {
                return Err(Error::Config(format!(
                    "temporal factor {k} does not divide the running temporal length {remaining} \
                     (T = {}, encoded length {te})",
                    config.clip_len
                )));
            }
            remaining /= k;
        }
    }
    if remaining != 1 {
        return Err(Error::Config(format!(
            "aggregation leaves {remaining} time steps instead of 1 (T = {})",
            config.clip_len
        )));
    }
    Ok(plan)
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerKind {
    Conv {
        spec: ConvSpec,
        weight: usize,
        bias: Option<usize>,
    },
    TransposedConv {
        spec: ConvSpec,
        weight: usize,
        bias: Option<usize>,
    },
    BatchNorm {
        gamma: usize,
        beta: usize,
        stats: usize,
    },
    Relu,
    MaxPool {
        kernel: [usize; 3],
        stride: [usize; 3],
    },
    /// Records the current encoder activation for an auxiliary pooling pair.
    Tap { slot: usize },
    /// Max-unpooling with switches from the auxiliary pooling pair on `slot`.
    Unpool { slot: usize, temporal_factor: usize },
    Trilinear { scale: [usize; 3] },
    Sigmoid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub name: String,
    pub group: ParamGroup,
    pub kind: LayerKind,
}

impl Layer {
    fn type_name(&self) -> &'static str {
        match self.kind {
            LayerKind::Conv { .. } => "conv3d",
            LayerKind::TransposedConv { .. } => "transposed_conv3d",
            LayerKind::BatchNorm { .. } => "batchnorm",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool { .. } => "maxpool3d",
            LayerKind::Tap { .. } => "tap",
            LayerKind::Unpool { .. } => "maxunpool3d",
            LayerKind::Trilinear { .. } => "trilinear",
            LayerKind::Sigmoid => "sigmoid",
        }
    }
}

/// A built network: the layer list, its parameters and batch-norm statistics.
#[derive(Clone, Debug)]
pub struct Network {
    config: ModelConfig,
    layers: Vec<Layer>,
    params: Vec<Parameter>,
    bn_stats: Vec<RunningStats>,
}

struct Builder {
    layers: Vec<Layer>,
    params: Vec<Parameter>,
    bn_stats: Vec<RunningStats>,
    rng: rng::Prng,
    group: ParamGroup,
}

impl Builder {
    fn param(&mut self, name: String, value: Tensor) -> usize {
        self.params.push(Parameter::new(name, self.group, value));
        self.params.len() - 1
    }

    fn layer(&mut self, name: impl Into<String>, kind: LayerKind) {
        self.layers.push(Layer {
            name: name.into(),
            group: self.group,
            kind,
        });
    }

    fn conv(&mut self, name: &str, spec: ConvSpec) {
        let weight = ops::init_conv_weight(&spec, &mut self.rng);
        let weight = self.param(format!("{name}.weight"), weight);
        let bias = spec
            .bias
            .then(|| self.param(format!("{name}.bias"), Tensor::zeros(vec![spec.out_channels])));
        self.layer(name, LayerKind::Conv { spec, weight, bias });
    }

    fn transposed(&mut self, name: &str, spec: ConvSpec) {
        let weight = ops::init_transposed_weight(&spec, &mut self.rng);
        let weight = self.param(format!("{name}.weight"), weight);
        let bias = spec
            .bias
            .then(|| self.param(format!("{name}.bias"), Tensor::zeros(vec![spec.out_channels])));
        self.layer(name, LayerKind::TransposedConv { spec, weight, bias });
    }

    fn bn_relu(&mut self, name: &str, channels: usize) {
        let gamma = self.param(format!("{name}.bn.gamma"), Tensor::ones(vec![channels]));
        let beta = self.param(format!("{name}.bn.beta"), Tensor::zeros(vec![channels]));
        self.bn_stats.push(RunningStats::new(channels));
        let stats = self.bn_stats.len() - 1;
        self.layer(format!("{name}.bn"), LayerKind::BatchNorm { gamma, beta, stats });
        self.layer(format!("{name}.relu"), LayerKind::Relu);
    }

    fn conv_bn_relu(&mut self, name: &str, spec: ConvSpec) {
        let channels = spec.out_channels;
        self.conv(name, spec.no_bias());
        self.bn_relu(name, channels);
    }

    fn transposed_bn_relu(&mut self, name: &str, spec: ConvSpec) {
        let channels = spec.out_channels;
        self.transposed(name, spec.no_bias());
        self.bn_relu(name, channels);
    }

    /// Spatial `1x3x3` then temporal `3x1x1`, each followed by BN + ReLU.
    fn separable_block(&mut self, name: &str, cin: usize, cout: usize, spatial_stride: usize, temporal_stride: usize) {
        let spatial = ConvSpec::new(cin, cout, [1, 3, 3])
            .padding([0, 1, 1])
            .stride([1, spatial_stride, spatial_stride]);
        self.conv_bn_relu(&format!("{name}.spatial"), spatial);
        let temporal = ConvSpec::new(cout, cout, [3, 1, 1])
            .padding([1, 0, 0])
            .stride([temporal_stride, 1, 1]);
        self.conv_bn_relu(&format!("{name}.temporal"), temporal);
    }

    fn maxpool(&mut self, name: &str, kernel: [usize; 3]) {
        self.layer(name, LayerKind::MaxPool { kernel, stride: kernel });
    }

    /// One quarter-resolution doubling at `channels` width.
    fn upsampler(&mut self, name: &str, config: &ModelConfig, slot: usize, channels: usize) {
        let unpool = config.upsampling == Upsampling::Unpool && slot < config.unpool_layers;
        match config.upsampling {
            _ if unpool => self.layer(
                name,
                LayerKind::Unpool {
                    slot,
                    temporal_factor: config.temporal_downsample / 2,
                },
            ),
            Upsampling::Trilinear => self.layer(name, LayerKind::Trilinear { scale: [1, 2, 2] }),
            Upsampling::Unpool | Upsampling::Transposed => {
                let spec = ConvSpec::new(channels, channels, [1, 2, 2]).stride([1, 2, 2]);
                self.transposed_bn_relu(name, spec);
            }
        }
    }
}

impl Network {
    pub fn build(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let [c0, c1, c2, c3] = config.encoder_channels;
        let td = config.temporal_downsample;
        let mut b = Builder {
            layers: Vec::new(),
            params: Vec::new(),
            bn_stats: Vec::new(),
            rng: rng::seeded(config.seed),
            group: ParamGroup::Encoder,
        };
        let uses_tap = |slot: usize| config.upsampling == Upsampling::Unpool && slot < config.unpool_layers;

        // encoder: (3, T, H, W) -> (c3, T/td, H/32, W/32)
        b.separable_block("encoder.stem", 3, c0, 2, 2);
        b.maxpool("encoder.pool1", [1, 2, 2]);
        b.separable_block("encoder.block2", c0, c1, 1, 1);
        if uses_tap(0) {
            b.layer("encoder.tap0", LayerKind::Tap { slot: 0 });
        }
        b.maxpool("encoder.pool2", [1, 2, 2]);
        b.separable_block("encoder.block3", c1, c2, 1, 1);
        if uses_tap(1) {
            b.layer("encoder.tap1", LayerKind::Tap { slot: 1 });
        }
        b.maxpool("encoder.pool3", [if td >= 4 { 2 } else { 1 }, 2, 2]);
        b.separable_block("encoder.block4", c2, c3, 1, 1);
        b.maxpool("encoder.pool4", [if td >= 8 { 2 } else { 1 }, 2, 2]);
        b.separable_block("encoder.block5", c3, c3, 1, 1);

        // prediction network, stage A: up to quarter resolution
        b.group = ParamGroup::Decoder;
        b.conv_bn_relu("decoder.redistribute", ConvSpec::new(c3, c3, [1, 1, 1]));
        let up = |cin, cout| ConvSpec::new(cin, cout, [1, 4, 4]).stride([1, 2, 2]).padding([0, 1, 1]);
        b.transposed_bn_relu("decoder.up1", up(c3, c2));
        b.upsampler("decoder.up2", config, 1, c2);
        b.conv_bn_relu("decoder.conv2", ConvSpec::new(c2, c1, [1, 3, 3]).padding([0, 1, 1]));
        b.upsampler("decoder.up3", config, 0, c1);
        b.conv_bn_relu("decoder.conv3", ConvSpec::new(c1, c0, [1, 3, 3]).padding([0, 1, 1]));

        // stage B: temporal aggregation interleaved with spatial doublings
        let mut channels = c0;
        for (i, step) in aggregation_plan(config)?.into_iter().enumerate() {
            match step {
                AggStep::SpatialUp => {
                    let out = (channels / 2).max(MIN_DECODER_CHANNELS);
                    b.transposed_bn_relu(&format!("decoder.agg{i}.up"), up(channels, out));
                    channels = out;
                }
                AggStep::TemporalConv(k) => {
                    let spec = ConvSpec::new(channels, channels, [k, 1, 1]).stride([k, 1, 1]);
                    b.conv_bn_relu(&format!("decoder.agg{i}.temporal"), spec);
                }
            }
        }
        b.conv("decoder.head", ConvSpec::new(channels, 1, [1, 1, 1]));
        b.layer("decoder.sigmoid", LayerKind::Sigmoid);

        let net = Self {
            config: config.clone(),
            layers: b.layers,
            params: b.params,
            bn_stats: b.bn_stats,
        };
        debug_assert!(net.check_unique_names().is_ok());
        Ok(net)
    }

    fn check_unique_names(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for p in &self.params {
            if !seen.insert(p.name.as_str()) {
                return Err(Error::Config(format!("duplicate parameter name {}", p.name)));
            }
        }
        Ok(())
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn bn_stats(&self) -> &[RunningStats] {
        &self.bn_stats
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Parameter::numel).sum()
    }

    /// `(tap slot, unpooling layer name)` pairs: the switch transfers.
    pub fn switch_transfers(&self) -> Vec<(usize, String)> {
        self.layers
            .iter()
            .filter_map(|l| match l.kind {
                LayerKind::Unpool { slot, .. } => Some((slot, l.name.clone())),
                _ => None,
            })
            .collect()
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(Parameter::zero_grad);
    }

    /// Adds the parameter gradients of one backward pass to the accumulators.
    pub fn accumulate(&mut self, grads: &Gradients) -> Result<()> {
        for (i, g) in grads.params() {
            self.params[i].grad.add_assign(g)?;
        }
        Ok(())
    }

    pub fn input_shape(&self, batch: usize) -> [usize; 5] {
        let [h, w] = self.config.input_size;
        [batch, 3, self.config.clip_len, h, w]
    }

    fn check_input(&self, clip: &Tensor) -> Result<()> {
        let [b, ..] = clip.dims5()?;
        let expect = self.input_shape(b);
        if clip.shape() != expect {
            return Err(Error::ShapeMismatch {
                op: "network input (expected B x 3 x T x H x W)",
                left: clip.shape().to_vec(),
                right: expect.to_vec(),
            });
        }
        Ok(())
    }

    /// Runs the layers on `tape`. Returns the `(B, 1, H, W)` output and, in
    /// train mode, the batch statistics of every batch-norm layer.
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        clip: Var,
        mode: Mode,
    ) -> Result<(Var, Vec<(usize, ops::norm::BatchStats)>)> {
        self.check_input(tape.value(clip))?;
        let batch = tape.value(clip).shape()[0];
        let params: Vec<Option<Var>> = vec![None; self.params.len()];
        let mut params = params;
        let mut param = |tape: &mut Tape, i: usize| -> Var {
            *params[i].get_or_insert_with(|| tape.param(i, self.params[i].value.clone()))
        };
        let mut taps: [Option<Var>; 2] = [None, None];
        let mut updates = Vec::new();
        let mut x = clip;
        for layer in &self.layers {
            x = match &layer.kind {
                LayerKind::Conv { spec, weight, bias } => {
                    let w = param(tape, *weight);
                    let b = bias.map(|i| param(tape, i));
                    tape.conv3d(x, w, b, *spec)?
                }
                LayerKind::TransposedConv { spec, weight, bias } => {
                    let w = param(tape, *weight);
                    let b = bias.map(|i| param(tape, i));
                    tape.transposed_conv3d(x, w, b, *spec)?
                }
                LayerKind::BatchNorm { gamma, beta, stats } => {
                    let (g, b) = (param(tape, *gamma), param(tape, *beta));
                    let (y, batch_stats) = tape.batchnorm(x, g, b, &self.bn_stats[*stats], mode)?;
                    updates.extend(batch_stats.map(|s| (*stats, s)));
                    y
                }
                LayerKind::Relu => tape.relu(x),
                LayerKind::Sigmoid => tape.sigmoid(x),
                LayerKind::MaxPool { kernel, stride } => tape.maxpool(x, *kernel, *stride)?.0,
                LayerKind::Tap { slot } => {
                    taps[*slot] = Some(x);
                    x
                }
                LayerKind::Unpool { slot, temporal_factor } => {
                    let tap = taps[*slot].ok_or_else(|| {
                        Error::Config(format!("{} has no registered encoder tap {slot}", layer.name))
                    })?;
                    let switches = ops::aux_pool_pair(tape.value(tap), *temporal_factor, [2, 2])?;
                    let features = tape.value(x).shape();
                    if features != switches.shape() {
                        return Err(Error::ShapeMismatch {
                            op: "switch transfer (decoder features vs switches)",
                            left: features.to_vec(),
                            right: switches.shape().to_vec(),
                        });
                    }
                    let out_shape = switches.unpooled_shape();
                    tape.maxunpool(x, switches, out_shape)?
                }
                LayerKind::Trilinear { scale } => tape.trilinear(x, *scale)?,
            };
        }
        let [h, w] = self.config.input_size;
        let out = tape.reshape(x, vec![batch, 1, h, w])?;
        Ok((out, updates))
    }

    /// Forward pass without gradients or running-stat updates.
    pub fn forward(&self, clip: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut tape = Tape::inference();
        let x = tape.leaf(clip.clone());
        let (y, _) = self.forward_tape(&mut tape, x, mode)?;
        Ok(tape.value(y).clone())
    }

    /// Train-mode forward on a recording tape; folds batch statistics into
    /// the running stats.
    pub fn forward_train(&mut self, tape: &mut Tape, clip: Var) -> Result<Var> {
        let (y, updates) = self.forward_tape(tape, clip, Mode::Train)?;
        self.apply_batch_stats(&updates);
        Ok(y)
    }

    pub fn apply_batch_stats(&mut self, updates: &[(usize, ops::norm::BatchStats)]) {
        for (i, s) in updates {
            self.bn_stats[*i].update(s);
        }
    }

    /// Every persistent tensor by name: parameters, then running statistics.
    pub fn state(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = self
            .params
            .iter()
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect();
        for layer in &self.layers {
            if let LayerKind::BatchNorm { stats, .. } = layer.kind {
                let s = &self.bn_stats[stats];
                let c = s.channels();
                out.push((
                    format!("{}.running_mean", layer.name),
                    Tensor::from_vec(vec![c], s.mean.clone()).expect("stats shape"),
                ));
                out.push((
                    format!("{}.running_var", layer.name),
                    Tensor::from_vec(vec![c], s.var.clone()).expect("stats shape"),
                ));
            }
        }
        out
    }

    /// Restores [`Network::state`]. Every name must be present with the
    /// configured shape; extra names are rejected.
    pub fn load_state(&mut self, entries: &[(String, Tensor)]) -> Result<()> {
        let mut by_name: std::collections::HashMap<&str, &Tensor> =
            entries.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let mut take = |name: &str, shape: &[usize]| -> Result<Tensor> {
            let t = by_name
                .remove(name)
                .ok_or_else(|| Error::Archive(format!("missing tensor {name}")))?;
            if t.shape() != shape {
                return Err(Error::Archive(format!(
                    "tensor {name} has shape {:?}, network expects {shape:?}",
                    t.shape()
                )));
            }
            Ok(t.clone())
        };
        let mut params = Vec::with_capacity(self.params.len());
        for p in &self.params {
            params.push(take(&p.name, p.value.shape())?);
        }
        let mut stats = self.bn_stats.clone();
        for layer in &self.layers {
            if let LayerKind::BatchNorm { stats: i, .. } = layer.kind {
                let c = stats[i].channels();
                stats[i].mean = take(&format!("{}.running_mean", layer.name), &[c])?.into_data();
                stats[i].var = take(&format!("{}.running_var", layer.name), &[c])?.into_data();
            }
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::Archive(format!("unexpected tensor {extra}")));
        }
        for (p, v) in self.params.iter_mut().zip(params) {
            p.value = v;
        }
        self.bn_stats = stats;
        Ok(())
    }

    /// Per-layer parameter counts and multiply-accumulates for a batch of one.
    pub fn summary(&self) -> Summary {
        let mut shape = self.input_shape(1);
        let mut tap_shapes = [[0usize; 5]; 2];
        let mut rows = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let [b, c, t, h, w] = shape;
            let (params, macs) = match &layer.kind {
                LayerKind::Conv { spec, .. } => {
                    let [ot, oh, ow] = spec.output_dims([t, h, w]).expect("validated config");
                    shape = [b, spec.out_channels, ot, oh, ow];
                    let out: usize = shape.iter().product();
                    (spec.param_count(), (out * spec.in_channels * spec.kernel_volume()) as u64)
                }
                LayerKind::TransposedConv { spec, .. } => {
                    let [ot, oh, ow] = spec.transposed_output_dims([t, h, w]).expect("validated config");
                    let input: usize = shape.iter().product();
                    shape = [b, spec.out_channels, ot, oh, ow];
                    (spec.param_count(), (input * spec.out_channels * spec.kernel_volume()) as u64)
                }
                LayerKind::BatchNorm { .. } => (2 * c, 0),
                LayerKind::MaxPool { kernel, stride } => {
                    shape = [
                        b,
                        c,
                        (t - kernel[0]) / stride[0] + 1,
                        (h - kernel[1]) / stride[1] + 1,
                        (w - kernel[2]) / stride[2] + 1,
                    ];
                    (0, 0)
                }
                LayerKind::Tap { slot } => {
                    tap_shapes[*slot] = shape;
                    (0, 0)
                }
                LayerKind::Unpool { slot, .. } => {
                    let tap = tap_shapes[*slot];
                    shape = [b, c, t, tap[3], tap[4]];
                    (0, 0)
                }
                LayerKind::Trilinear { scale } => {
                    shape = [b, c, t * scale[0], h * scale[1], w * scale[2]];
                    (0, 0)
                }
                LayerKind::Relu | LayerKind::Sigmoid => (0, 0),
            };
            rows.push(LayerSummary {
                name: layer.name.clone(),
                kind: layer.type_name().to_string(),
                group: layer.group,
                output_shape: shape.to_vec(),
                params,
                macs,
            });
        }
        Summary {
            input_shape: self.input_shape(1).to_vec(),
            total_params: rows.iter().map(|r| r.params).sum(),
            total_macs: rows.iter().map(|r| r.macs).sum(),
            layers: rows,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSummary {
    pub name: String,
    pub kind: String,
    pub group: ParamGroup,
    pub output_shape: Vec<usize>,
    pub params: usize,
    pub macs: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSummary>,
    pub total_params: usize,
    pub total_macs: u64,
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<32} {:<18} {:<24} {:>10} {:>14}", "layer", "type", "output", "params", "MACs")?;
        for row in &self.layers {
            writeln!(
                f,
                "{:<32} {:<18} {:<24} {:>10} {:>14}",
                row.name,
                row.kind,
                format!("{:?}", row.output_shape),
                row.params,
                row.macs
            )?;
        }
        writeln!(f, "input {:?}", self.input_shape)?;
        writeln!(f, "total params {}", self.total_params)?;
        write!(f, "total MACs   {}", self.total_macs)
    }
}
