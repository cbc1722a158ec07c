//! Network configuration, the assembled model and its footprint.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Array4};
use serde::{Deserialize, Serialize};

use super::blocks::{ChannelAttention, DeepFeatureBlock, InputBlock, RegressionHead, SpatialAttention};
use super::layers::MaxPool2;
use super::{record, Module, Real, Slot, Trace};
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// Input block, channel attention, residual features, spatial attention, head.
    Proposed,
    /// The proposed model with both attention blocks removed.
    BaselineCnn,
    /// Flatten followed by a plain dense stack.
    BaselineMlp,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Proposed => "proposed",
            ModelKind::BaselineCnn => "baseline-cnn",
            ModelKind::BaselineMlp => "baseline-mlp",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "proposed" => Ok(ModelKind::Proposed),
            "baseline-cnn" => Ok(ModelKind::BaselineCnn),
            "baseline-mlp" => Ok(ModelKind::BaselineMlp),
            other => Err(Error::Config(format!(
                "unknown model '{other}' (expected proposed, baseline-cnn or baseline-mlp)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub in_planes: usize,
    /// Input height and width, `[N, N]` for covariance or `[K, N]` for CSI.
    pub input_hw: [usize; 2],
    pub width: usize,
    pub input_convs: usize,
    pub kernel: usize,
    pub ca_hidden: usize,
    pub stages: usize,
    pub blocks_per_stage: usize,
    pub sa_kernel: usize,
    pub head_hidden: Vec<usize>,
    pub outputs: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl ModelConfig {
    pub fn proposed() -> Self {
        Self {
            kind: ModelKind::Proposed,
            in_planes: 2,
            input_hw: [64, 64],
            width: 128,
            input_convs: 4,
            kernel: 3,
            ca_hidden: 8,
            stages: 2,
            blocks_per_stage: 2,
            sa_kernel: 7,
            head_hidden: vec![128, 128],
            outputs: 2,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }

    pub fn baseline_cnn() -> Self {
        Self {
            kind: ModelKind::BaselineCnn,
            ..Self::proposed()
        }
    }

    pub fn baseline_mlp() -> Self {
        Self {
            kind: ModelKind::BaselineMlp,
            head_hidden: vec![512, 256],
            ..Self::proposed()
        }
    }

    pub fn of_kind(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Proposed => Self::proposed(),
            ModelKind::BaselineCnn => Self::baseline_cnn(),
            ModelKind::BaselineMlp => Self::baseline_mlp(),
        }
    }

    pub fn with_width(mut self, width: usize) -> Self {
        self.width = width;
        self
    }

    pub fn for_input(mut self, h: usize, w: usize) -> Self {
        self.input_hw = [h, w];
        self
    }

    pub fn has_convs(&self) -> bool {
        self.kind != ModelKind::BaselineMlp
    }

    pub fn has_attention(&self) -> bool {
        self.kind == ModelKind::Proposed
    }

    /// Spatial size after the pooling stages.
    pub fn feature_hw(&self) -> [usize; 2] {
        let [mut h, mut w] = self.input_hw;
        for _ in 0..self.stages {
            (h, w) = MaxPool2::output_hw(h, w);
        }
        [h, w]
    }

    pub fn flatten_width(&self) -> usize {
        if self.has_convs() {
            let [h, w] = self.feature_hw();
            self.width * h * w
        } else {
            self.in_planes * self.input_hw[0] * self.input_hw[1]
        }
    }

    pub fn head_widths(&self) -> Vec<usize> {
        let mut v = vec![self.flatten_width()];
        v.extend(&self.head_hidden);
        v.push(self.outputs);
        v
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.in_planes == 0 || self.outputs == 0 || self.input_hw.contains(&0) {
            return bad("model input planes, size and outputs must be positive");
        }
        if self.has_convs() {
            if self.width == 0 || self.input_convs == 0 {
                return bad("convolutional width and input conv count must be positive");
            }
            if self.kernel % 2 == 0 || self.sa_kernel % 2 == 0 {
                return bad("kernel sizes must be odd so padding preserves size");
            }
            if self.has_attention() && self.ca_hidden == 0 {
                return bad("channel attention hidden width must be positive");
            }
        }
        if self.head_hidden.contains(&0) {
            return bad("hidden widths must be positive");
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) || !(self.bn_eps > 0.0) {
            return bad("batch norm momentum must lie in (0, 1] and epsilon be positive");
        }
        Ok(())
    }

    /// Multiply-accumulates of one inference pass for a single sample.
    pub fn forward_macs(&self) -> u64 {
        let dense: u64 = self.head_widths().windows(2).map(|p| (p[0] * p[1]) as u64).sum();
        if !self.has_convs() {
            return dense;
        }
        let [mut h, mut w] = self.input_hw;
        let kk = (self.kernel * self.kernel) as u64;
        let c = self.width as u64;
        let mut macs = (self.in_planes as u64 * c + (self.input_convs as u64 - 1) * c * c) * kk * (h * w) as u64;
        if self.has_attention() {
            macs += 2 * 2 * c * self.ca_hidden as u64;
        }
        for _ in 0..self.stages {
            macs += 2 * self.blocks_per_stage as u64 * c * c * kk * (h * w) as u64;
            (h, w) = MaxPool2::output_hw(h, w);
        }
        if self.has_attention() {
            macs += 2 * (self.sa_kernel * self.sa_kernel * h * w) as u64;
        }
        macs + dense
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::proposed()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Footprint {
    pub params: usize,
    /// Storage at 32-bit precision.
    pub bytes: usize,
}

impl Footprint {
    pub fn megabytes(&self) -> f64 {
        self.bytes as f64 / 1e6
    }
}

/// Closed-form count of trainable parameters.
pub fn parameter_footprint(cfg: &ModelConfig) -> Footprint {
    let conv = |ci: usize, co: usize, k: usize| ci * co * k * k + co;
    let bn = |c: usize| 2 * c;
    let mut params: usize = cfg.head_widths().windows(2).map(|p| p[0] * p[1] + p[1]).sum();
    if cfg.has_convs() {
        let (c, k) = (cfg.width, cfg.kernel);
        params += conv(cfg.in_planes, c, k) + bn(c);
        params += (cfg.input_convs - 1) * (conv(c, c, k) + bn(c));
        params += cfg.stages * cfg.blocks_per_stage * 2 * (conv(c, c, k) + bn(c));
        if cfg.has_attention() {
            params += (c * cfg.ca_hidden + cfg.ca_hidden) + (cfg.ca_hidden * c + c);
            params += conv(2, 1, cfg.sa_kernel);
        }
    }
    Footprint {
        params,
        bytes: 4 * params,
    }
}

/// Per-pass diagnostics from [`PosNet::infer_detailed`].
pub struct Inference<T> {
    pub output: Array2<T>,
    pub trace: Trace,
    /// `A_C`, `[B, C, 1, 1]`.
    pub channel_weights: Option<Array4<T>>,
    /// `A_S`, `[B, 1, H, W]`.
    pub spatial_weights: Option<Array4<T>>,
}

/// The positioning network (or one of its baselines).
#[derive(Clone, Debug)]
pub struct PosNet<T> {
    config: ModelConfig,
    pub input: Option<InputBlock<T>>,
    pub ca: Option<ChannelAttention<T>>,
    pub dfeb: Option<DeepFeatureBlock<T>>,
    pub sa: Option<SpatialAttention<T>>,
    pub head: RegressionHead<T>,
}

impl<T: Real> PosNet<T> {
    /// Deterministic initialization from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let rng = &mut stream(seed, Stream::Init);
        let (m, e) = (config.bn_momentum, config.bn_eps);
        let c = config.width;
        let (input, ca, dfeb, sa) = if config.has_convs() {
            let input = InputBlock::new(config.in_planes, c, config.input_convs, config.kernel, m, e, rng);
            let ca = config
                .has_attention()
                .then(|| ChannelAttention::new(c, config.ca_hidden, rng));
            let dfeb = DeepFeatureBlock::new(c, config.stages, config.blocks_per_stage, config.kernel, m, e, rng);
            let sa = config.has_attention().then(|| SpatialAttention::new(config.sa_kernel, rng));
            (Some(input), ca, Some(dfeb), sa)
        } else {
            (None, None, None, None)
        };
        let head = RegressionHead::new(&config.head_widths(), rng);
        Ok(Self {
            config,
            input,
            ca,
            dfeb,
            sa,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn check_input(&self, x: &Array4<T>) -> Result<()> {
        let (b, c, h, w) = x.dim();
        let [eh, ew] = self.config.input_hw;
        if b == 0 || c != self.config.in_planes || h != eh || w != ew {
            return Err(Error::Contract(format!(
                "model expects input (B≥1, {}, {eh}, {ew}), got {:?}",
                self.config.in_planes,
                x.dim()
            )));
        }
        Ok(())
    }

    /// Evaluation-mode pass with shapes and attention maps.
    pub fn infer_detailed(&self, x: &Array4<T>) -> Result<Inference<T>> {
        self.check_input(x)?;
        let mut trace = Trace::new();
        let tr = &mut Some(&mut trace);
        record(tr, "input", x.shape());
        let mut h = x.to_owned();
        let mut channel_weights = None;
        let mut spatial_weights = None;
        if let Some(input) = &self.input {
            h = input.infer(&h)?;
            record(tr, "input_block", h.shape());
        }
        if let Some(ca) = &self.ca {
            let out = ca.infer_traced(&h, tr.as_deref_mut())?;
            h = out.features;
            channel_weights = Some(out.weights);
        }
        if let Some(dfeb) = &self.dfeb {
            h = dfeb.infer(&h)?;
            record(tr, "dfeb", h.shape());
        }
        if let Some(sa) = &self.sa {
            let out = sa.infer_traced(&h, tr.as_deref_mut())?;
            h = out.features;
            spatial_weights = Some(out.weights);
        }
        let output = self.head.infer_traced(&h, tr.as_deref_mut())?;
        Ok(Inference {
            output,
            trace,
            channel_weights,
            spatial_weights,
        })
    }

    /// Evaluation-mode pass (running batch-norm statistics, no caches).
    pub fn infer(&self, x: &Array4<T>) -> Result<Array2<T>> {
        self.check_input(x)?;
        let mut h = x.to_owned();
        if let Some(input) = &self.input {
            h = input.infer(&h)?;
        }
        if let Some(ca) = &self.ca {
            h = ca.infer(&h)?;
        }
        if let Some(dfeb) = &self.dfeb {
            h = dfeb.infer(&h)?;
        }
        if let Some(sa) = &self.sa {
            h = sa.infer(&h)?;
        }
        self.head.infer(&h)
    }

    /// Training-mode pass; caches activations for [`PosNet::backward`].
    pub fn forward(&mut self, x: &Array4<T>) -> Result<Array2<T>> {
        self.check_input(x)?;
        let mut h = x.to_owned();
        if let Some(input) = &mut self.input {
            h = input.forward(&h)?;
        }
        if let Some(ca) = &mut self.ca {
            h = ca.forward(&h)?;
        }
        if let Some(dfeb) = &mut self.dfeb {
            h = dfeb.forward(&h)?;
        }
        if let Some(sa) = &mut self.sa {
            h = sa.forward(&h)?;
        }
        self.head.forward(&h)
    }

    /// Accumulates parameter gradients for the output gradient `dy`.
    pub fn backward(&mut self, dy: &Array2<T>) -> Result<()> {
        self.backward_impl(dy, false).map(|_| ())
    }

    /// Like [`PosNet::backward`] but also returns the input gradient.
    pub fn backward_with_input(&mut self, dy: &Array2<T>) -> Result<Array4<T>> {
        Ok(self.backward_impl(dy, true)?.expect("input gradient requested"))
    }

    fn backward_impl(&mut self, dy: &Array2<T>, need_input_grad: bool) -> Result<Option<Array4<T>>> {
        let mut g = self.head.backward(dy)?;
        if let Some(sa) = &mut self.sa {
            g = sa.backward(&g)?;
        }
        if let Some(dfeb) = &mut self.dfeb {
            g = dfeb.backward(&g)?;
        }
        if let Some(ca) = &mut self.ca {
            g = ca.backward(&g)?;
        }
        match &mut self.input {
            Some(input) => input.backward(&g, need_input_grad),
            None => Ok(Some(g)),
        }
    }
}

impl<T: Real> Module<T> for PosNet<T> {
    fn slots<'a>(&'a mut self, prefix: &str, out: &mut Vec<Slot<'a, T>>) {
        if let Some(m) = &mut self.input {
            m.slots(&super::join(prefix, "input"), out);
        }
        if let Some(m) = &mut self.ca {
            m.slots(&super::join(prefix, "ca"), out);
        }
        if let Some(m) = &mut self.dfeb {
            m.slots(&super::join(prefix, "dfeb"), out);
        }
        if let Some(m) = &mut self.sa {
            m.slots(&super::join(prefix, "sa"), out);
        }
        self.head.slots(&super::join(prefix, "head"), out);
    }
}
