//! Experiment configuration: schema, parsing, validation, and presets.
//!
//! The on-disk format is a flat key-value text with `[section]` headers so
//! experiment records stay diffable. Unknown sections or keys are rejected,
//! every value is validated on load, and `serialize` emits a canonical form
//! that re-parses to an equal configuration.

use crate::error::CoreError;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

/// Named layers of the perceptual backbone, VGG-style.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FeatLayer {
    Relu1_2,
    Relu2_2,
    Relu3_2,
    Relu4_2,
    Relu5_2,
}

impl FeatLayer {
    pub const ALL: [FeatLayer; 5] = [
        FeatLayer::Relu1_2,
        FeatLayer::Relu2_2,
        FeatLayer::Relu3_2,
        FeatLayer::Relu4_2,
        FeatLayer::Relu5_2,
    ];

    /// Stage index 0..5 (deeper stages have coarser resolution).
    pub fn stage(self) -> usize {
        match self {
            FeatLayer::Relu1_2 => 0,
            FeatLayer::Relu2_2 => 1,
            FeatLayer::Relu3_2 => 2,
            FeatLayer::Relu4_2 => 3,
            FeatLayer::Relu5_2 => 4,
        }
    }
}

impl fmt::Display for FeatLayer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FeatLayer::Relu1_2 => "relu1_2",
            FeatLayer::Relu2_2 => "relu2_2",
            FeatLayer::Relu3_2 => "relu3_2",
            FeatLayer::Relu4_2 => "relu4_2",
            FeatLayer::Relu5_2 => "relu5_2",
        };
        f.write_str(s)
    }
}

impl FromStr for FeatLayer {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "relu1_2" => Ok(FeatLayer::Relu1_2),
            "relu2_2" => Ok(FeatLayer::Relu2_2),
            "relu3_2" => Ok(FeatLayer::Relu3_2),
            "relu4_2" => Ok(FeatLayer::Relu4_2),
            "relu5_2" => Ok(FeatLayer::Relu5_2),
            other => Err(format!("unknown backbone layer `{other}`")),
        }
    }
}

/// Output shape of one generator block: square spatial size and channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenLayerSpec {
    pub size: usize,
    pub channels: usize,
}

/// Architecture sizes shared by correspondence and translation.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub image_size: usize,
    /// Spatial size of the shared domain; the correlation matrix has side
    /// `corr_size * corr_size`.
    pub corr_size: usize,
    /// Channel width of the shared-domain representation.
    pub feature_channels: usize,
    /// Seven generator block output shapes, 8x8 code up to `image_size`.
    pub generator_layers: Vec<GenLayerSpec>,
    /// Softmax sharpness for correlation warping.
    pub softmax_alpha: f64,
    /// Added inside every variance denominator.
    pub pn_epsilon: f64,
    pub use_nonlocal: bool,
    /// Spectral normalization on generator/style/discriminator convolutions.
    pub use_spectral_norm: bool,
    /// Epochs during which the mask auxiliary channel and warped-mask
    /// cross-entropy are active.
    pub warmup_epochs: usize,
}

/// Objective weights and backbone layer selections.
#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    /// (feat, perc, context, adv_g, domain, reg) weights.
    pub psi: [f64; 6],
    pub lambda_feat: Vec<f64>,
    pub omega_context: Vec<f64>,
    pub context_bandwidth: f64,
    pub feat_layers: Vec<FeatLayer>,
    pub perc_layer: FeatLayer,
    pub context_layers: Vec<FeatLayer>,
}

/// Optimization loop settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub pseudo_prob: f64,
    pub deterministic: bool,
    pub log_every: usize,
    /// 0 means checkpoint only at the end of training.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 4,
            steps: 500,
            lr_g: 1e-4,
            lr_d: 4e-4,
            adam_beta1: 0.0,
            adam_beta2: 0.999,
            pseudo_prob: 0.5,
            deterministic: true,
            log_every: 1,
            checkpoint_every: 0,
        }
    }
}

/// Environment variable overriding `[train] deterministic`.
pub const DETERMINISTIC_ENV: &str = "WARPGEN_DETERMINISTIC";

fn key_err(key: &str, msg: impl Into<String>) -> CoreError {
    CoreError::ConfigKey {
        key: key.to_string(),
        msg: msg.into(),
    }
}

/// Default generator ladder: seven blocks from the 8x8 code to `image_size`,
/// upsampling at block six and at the leading blocks, channels starting at
/// four times the shared-domain width and halving after each later upsample.
pub fn default_generator_layers(image_size: usize, feature_channels: usize) -> Vec<GenLayerSpec> {
    let n_up = (image_size / 8).trailing_zeros() as usize;
    let mut up_at = vec![false; 7];
    if n_up > 0 {
        up_at[5] = true;
        for slot in up_at.iter_mut().take(n_up - 1) {
            *slot = true;
        }
    }
    let mut layers = Vec::with_capacity(7);
    let mut size = 8;
    let mut channels = (4 * feature_channels).min(1024);
    let mut ups_seen = 0;
    for &up in &up_at {
        if up {
            size *= 2;
            ups_seen += 1;
            if ups_seen > 1 {
                channels = (channels / 2).max(16);
            }
        }
        layers.push(GenLayerSpec { size, channels });
    }
    layers
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), CoreError> {
        if !self.image_size.is_power_of_two() || self.image_size < 16 {
            return Err(key_err(
                "image_size",
                format!("must be a power of two >= 16, got {}", self.image_size),
            ));
        }
        if self.corr_size == 0 || self.image_size % self.corr_size != 0 {
            return Err(key_err(
                "corr_size",
                format!(
                    "{} does not divide image_size {}",
                    self.corr_size, self.image_size
                ),
            ));
        }
        let ratio = self.image_size / self.corr_size;
        if !ratio.is_power_of_two() || !(2..=8).contains(&ratio) {
            return Err(key_err(
                "corr_size",
                format!("image_size/corr_size must be 2, 4 or 8, got {ratio}"),
            ));
        }
        if self.feature_channels < 4 || self.feature_channels % 4 != 0 {
            return Err(key_err(
                "feature_channels",
                format!("must be a multiple of 4 >= 4, got {}", self.feature_channels),
            ));
        }
        if !(self.softmax_alpha > 0.0) {
            return Err(key_err(
                "softmax_alpha",
                format!("must be > 0, got {}", self.softmax_alpha),
            ));
        }
        if !(self.pn_epsilon > 0.0) {
            return Err(key_err(
                "pn_epsilon",
                format!("must be > 0, got {}", self.pn_epsilon),
            ));
        }
        if self.generator_layers.len() != 7 {
            return Err(key_err(
                "generator_layers",
                format!("exactly 7 block specs required, got {}", self.generator_layers.len()),
            ));
        }
        let mut prev = 8usize;
        for (i, spec) in self.generator_layers.iter().enumerate() {
            if spec.size != prev && spec.size != 2 * prev {
                return Err(key_err(
                    "generator_layers",
                    format!(
                        "block {i} size {} must equal or double the previous size {prev}",
                        spec.size
                    ),
                ));
            }
            if spec.channels == 0 {
                return Err(key_err("generator_layers", format!("block {i} has 0 channels")));
            }
            prev = spec.size;
        }
        if prev != self.image_size {
            return Err(key_err(
                "generator_layers",
                format!("final block size {prev} != image_size {}", self.image_size),
            ));
        }
        Ok(())
    }

    /// Side length of the correlation matrix (corr_size squared).
    pub fn corr_elems(&self) -> usize {
        self.corr_size * self.corr_size
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), CoreError> {
        if self.psi.iter().any(|&p| p < 0.0) {
            return Err(key_err("psi", "weights must be >= 0"));
        }
        if self.psi.iter().all(|&p| p == 0.0) {
            return Err(key_err("psi", "at least one weight must be > 0"));
        }
        if self.feat_layers.is_empty() {
            return Err(key_err("feat_layers", "at least one layer required"));
        }
        if self.lambda_feat.len() != self.feat_layers.len() {
            return Err(key_err(
                "lambda_feat",
                format!(
                    "{} weights for {} feat_layers",
                    self.lambda_feat.len(),
                    self.feat_layers.len()
                ),
            ));
        }
        if self.context_layers.is_empty() {
            return Err(key_err("context_layers", "at least one layer required"));
        }
        if self.omega_context.len() != self.context_layers.len() {
            return Err(key_err(
                "omega_context",
                format!(
                    "{} weights for {} context_layers",
                    self.omega_context.len(),
                    self.context_layers.len()
                ),
            ));
        }
        if self.lambda_feat.iter().any(|&l| l < 0.0) {
            return Err(key_err("lambda_feat", "weights must be >= 0"));
        }
        if self.omega_context.iter().any(|&l| l < 0.0) {
            return Err(key_err("omega_context", "weights must be >= 0"));
        }
        if !(self.context_bandwidth > 0.0) {
            return Err(key_err("context_bandwidth", "must be > 0"));
        }
        Ok(())
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        let feat_layers = FeatLayer::ALL.to_vec();
        let n = feat_layers.len();
        // geometric layer weights: deepest layer weighted 1
        let lambda_feat = (0..n).map(|l| 1.0 / (1 << (n - 1 - l)) as f64).collect();
        let context_layers = vec![
            FeatLayer::Relu2_2,
            FeatLayer::Relu3_2,
            FeatLayer::Relu4_2,
            FeatLayer::Relu5_2,
        ];
        LossConfig {
            psi: [10.0, 1.0, 1.0, 1.0, 10.0, 1.0],
            lambda_feat,
            omega_context: vec![1.0; context_layers.len()],
            context_bandwidth: 0.5,
            feat_layers,
            perc_layer: FeatLayer::Relu4_2,
            context_layers,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), CoreError> {
        if self.batch_size == 0 {
            return Err(key_err("batch_size", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.pseudo_prob) {
            return Err(key_err(
                "pseudo_prob",
                format!("must be in [0, 1], got {}", self.pseudo_prob),
            ));
        }
        for (k, v) in [
            ("lr_g", self.lr_g),
            ("lr_d", self.lr_d),
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
        ] {
            if !(0.0..1.0).contains(&v) && (k == "adam_beta1" || k == "adam_beta2") {
                return Err(key_err(k, format!("must be in [0, 1), got {v}")));
            }
            if v < 0.0 {
                return Err(key_err(k, format!("must be >= 0, got {v}")));
            }
        }
        if self.log_every == 0 {
            return Err(key_err("log_every", "must be >= 1"));
        }
        Ok(())
    }

    /// Apply the `WARPGEN_DETERMINISTIC` environment override if present.
    pub fn apply_env_override(&mut self) {
        if let Ok(v) = std::env::var(DETERMINISTIC_ENV) {
            match v.as_str() {
                "1" | "true" | "on" => self.deterministic = true,
                "0" | "false" | "off" => self.deterministic = false,
                _ => {}
            }
        }
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool, CoreError> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(key_err(key, format!("expected true/false, got `{v}`"))),
    }
}

fn parse_usize(key: &str, v: &str) -> Result<usize, CoreError> {
    v.parse()
        .map_err(|_| key_err(key, format!("expected unsigned integer, got `{v}`")))
}

fn parse_f64(key: &str, v: &str) -> Result<f64, CoreError> {
    v.parse()
        .map_err(|_| key_err(key, format!("expected number, got `{v}`")))
}

fn parse_f64_list(key: &str, v: &str) -> Result<Vec<f64>, CoreError> {
    v.split_whitespace().map(|t| parse_f64(key, t)).collect()
}

fn parse_layer_list(key: &str, v: &str) -> Result<Vec<FeatLayer>, CoreError> {
    v.split_whitespace()
        .map(|t| FeatLayer::from_str(t).map_err(|e| key_err(key, e)))
        .collect()
}

fn parse_gen_layers(key: &str, v: &str) -> Result<Vec<GenLayerSpec>, CoreError> {
    v.split_whitespace()
        .map(|tok| {
            let parts: Vec<&str> = tok.split('x').collect();
            if parts.len() != 3 {
                return Err(key_err(key, format!("expected HxWxC token, got `{tok}`")));
            }
            let h = parse_usize(key, parts[0])?;
            let w = parse_usize(key, parts[1])?;
            let c = parse_usize(key, parts[2])?;
            if h != w {
                return Err(key_err(key, format!("non-square block `{tok}`")));
            }
            Ok(GenLayerSpec { size: h, channels: c })
        })
        .collect()
}

/// Parse configuration text into validated sections.
pub fn parse_config_text(
    text: &str,
) -> Result<(ModelConfig, LossConfig, TrainConfig), CoreError> {
    // collected raw values; generator_layers defaulted after model keys known
    let mut image_size = 64usize;
    let mut corr_size = 16usize;
    let mut feature_channels = 64usize;
    let mut softmax_alpha = 100.0;
    let mut pn_epsilon = 1e-5;
    let mut use_nonlocal = true;
    let mut use_spectral_norm = true;
    let mut warmup_epochs = 0usize;
    let mut generator_layers: Option<Vec<GenLayerSpec>> = None;

    let mut loss = LossConfig::default();
    let mut train = TrainConfig::default();

    let mut section = String::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name.strip_suffix(']').ok_or(CoreError::ConfigParse {
                line: lineno + 1,
                msg: format!("malformed section header `{line}`"),
            })?;
            match name {
                "model" | "loss" | "train" => section = name.to_string(),
                other => {
                    return Err(CoreError::ConfigParse {
                        line: lineno + 1,
                        msg: format!("unknown section `[{other}]`"),
                    })
                }
            }
            continue;
        }
        let (key, value) = line.split_once('=').ok_or(CoreError::ConfigParse {
            line: lineno + 1,
            msg: format!("expected `key = value`, got `{line}`"),
        })?;
        let key = key.trim();
        let value = value.trim();
        match (section.as_str(), key) {
            ("model", "image_size") => image_size = parse_usize(key, value)?,
            ("model", "corr_size") => corr_size = parse_usize(key, value)?,
            ("model", "feature_channels") => feature_channels = parse_usize(key, value)?,
            ("model", "softmax_alpha") => softmax_alpha = parse_f64(key, value)?,
            ("model", "pn_epsilon") => pn_epsilon = parse_f64(key, value)?,
            ("model", "use_nonlocal") => use_nonlocal = parse_bool(key, value)?,
            ("model", "use_spectral_norm") => use_spectral_norm = parse_bool(key, value)?,
            ("model", "warmup_epochs") => warmup_epochs = parse_usize(key, value)?,
            ("model", "generator_layers") => {
                generator_layers = Some(parse_gen_layers(key, value)?)
            }
            ("loss", "psi") => {
                let vals = parse_f64_list(key, value)?;
                if vals.len() != 6 {
                    return Err(key_err(
                        key,
                        format!("expected 6 weights (feat perc context adv domain reg), got {}", vals.len()),
                    ));
                }
                loss.psi = [vals[0], vals[1], vals[2], vals[3], vals[4], vals[5]];
            }
            ("loss", "lambda_feat") => loss.lambda_feat = parse_f64_list(key, value)?,
            ("loss", "omega_context") => loss.omega_context = parse_f64_list(key, value)?,
            ("loss", "context_bandwidth") => loss.context_bandwidth = parse_f64(key, value)?,
            ("loss", "feat_layers") => loss.feat_layers = parse_layer_list(key, value)?,
            ("loss", "perc_layer") => {
                let layers = parse_layer_list(key, value)?;
                if layers.len() != 1 {
                    return Err(key_err(key, "exactly one layer expected"));
                }
                loss.perc_layer = layers[0];
            }
            ("loss", "context_layers") => loss.context_layers = parse_layer_list(key, value)?,
            ("train", "batch_size") => train.batch_size = parse_usize(key, value)?,
            ("train", "steps") => train.steps = parse_usize(key, value)?,
            ("train", "lr_g") => train.lr_g = parse_f64(key, value)?,
            ("train", "lr_d") => train.lr_d = parse_f64(key, value)?,
            ("train", "adam_beta1") => train.adam_beta1 = parse_f64(key, value)?,
            ("train", "adam_beta2") => train.adam_beta2 = parse_f64(key, value)?,
            ("train", "pseudo_prob") => train.pseudo_prob = parse_f64(key, value)?,
            ("train", "deterministic") => train.deterministic = parse_bool(key, value)?,
            ("train", "log_every") => train.log_every = parse_usize(key, value)?,
            ("train", "checkpoint_every") => train.checkpoint_every = parse_usize(key, value)?,
            ("", k) => {
                return Err(CoreError::ConfigParse {
                    line: lineno + 1,
                    msg: format!("key `{k}` appears before any [section]"),
                })
            }
            (s, k) => {
                return Err(CoreError::UnknownKey {
                    section: s.to_string(),
                    key: k.to_string(),
                })
            }
        }
    }

    let model = ModelConfig {
        image_size,
        corr_size,
        feature_channels,
        generator_layers: generator_layers
            .unwrap_or_else(|| default_generator_layers(image_size, feature_channels)),
        softmax_alpha,
        pn_epsilon,
        use_nonlocal,
        use_spectral_norm,
        warmup_epochs,
    };
    model.validate()?;
    loss.validate()?;
    train.validate()?;
    Ok((model, loss, train))
}

/// Load model and loss sections from a config file.
pub fn load_config(path: &Path) -> Result<(ModelConfig, LossConfig), CoreError> {
    let (m, l, _) = load_full_config(path)?;
    Ok((m, l))
}

/// Load all three sections from a config file.
pub fn load_full_config(
    path: &Path,
) -> Result<(ModelConfig, LossConfig, TrainConfig), CoreError> {
    let text = std::fs::read_to_string(path)?;
    parse_config_text(&text)
}

fn fmt_f64_list(vals: &[f64]) -> String {
    vals.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

fn fmt_layer_list(layers: &[FeatLayer]) -> String {
    layers
        .iter()
        .map(|l| l.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Canonical serialization; parsing it back yields an equal configuration.
pub fn serialize_config(model: &ModelConfig, loss: &LossConfig, train: &TrainConfig) -> String {
    let gen = model
        .generator_layers
        .iter()
        .map(|s| format!("{}x{}x{}", s.size, s.size, s.channels))
        .collect::<Vec<_>>()
        .join(" ");
    format!(
        "[model]\n\
         image_size = {}\n\
         corr_size = {}\n\
         feature_channels = {}\n\
         softmax_alpha = {}\n\
         pn_epsilon = {}\n\
         use_nonlocal = {}\n\
         use_spectral_norm = {}\n\
         warmup_epochs = {}\n\
         generator_layers = {}\n\
         \n\
         [loss]\n\
         psi = {}\n\
         lambda_feat = {}\n\
         omega_context = {}\n\
         context_bandwidth = {}\n\
         feat_layers = {}\n\
         perc_layer = {}\n\
         context_layers = {}\n\
         \n\
         [train]\n\
         batch_size = {}\n\
         steps = {}\n\
         lr_g = {}\n\
         lr_d = {}\n\
         adam_beta1 = {}\n\
         adam_beta2 = {}\n\
         pseudo_prob = {}\n\
         deterministic = {}\n\
         log_every = {}\n\
         checkpoint_every = {}\n",
        model.image_size,
        model.corr_size,
        model.feature_channels,
        model.softmax_alpha,
        model.pn_epsilon,
        model.use_nonlocal,
        model.use_spectral_norm,
        model.warmup_epochs,
        gen,
        fmt_f64_list(&loss.psi),
        fmt_f64_list(&loss.lambda_feat),
        fmt_f64_list(&loss.omega_context),
        loss.context_bandwidth,
        fmt_layer_list(&loss.feat_layers),
        loss.perc_layer,
        fmt_layer_list(&loss.context_layers),
        train.batch_size,
        train.steps,
        train.lr_g,
        train.lr_d,
        train.adam_beta1,
        train.adam_beta2,
        train.pseudo_prob,
        train.deterministic,
        train.log_every,
        train.checkpoint_every,
    )
}

/// FNV-1a hash of the model+loss canonical form; identifies the architecture
/// and objective a checkpoint was trained with ([train] stays adjustable).
pub fn config_hash(model: &ModelConfig, loss: &LossConfig) -> u64 {
    let text = serialize_config(model, loss, &TrainConfig::default());
    let arch_part = text.split("[train]").next().unwrap();
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in arch_part.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    h
}

/// Built-in configurations. `full256` mirrors the published architecture
/// sizes; the smaller ones are scaled for CPU-budget experiments and tests.
pub fn preset(name: &str) -> Option<(ModelConfig, LossConfig, TrainConfig)> {
    let gl = |specs: &[(usize, usize)]| {
        specs
            .iter()
            .map(|&(size, channels)| GenLayerSpec { size, channels })
            .collect::<Vec<_>>()
    };
    let (model, train) = match name {
        "full256" => (
            ModelConfig {
                image_size: 256,
                corr_size: 64,
                feature_channels: 256,
                generator_layers: gl(&[
                    (16, 1024),
                    (32, 512),
                    (64, 256),
                    (128, 256),
                    (128, 256),
                    (256, 128),
                    (256, 64),
                ]),
                softmax_alpha: 100.0,
                pn_epsilon: 1e-5,
                use_nonlocal: true,
                use_spectral_norm: true,
                warmup_epochs: 80,
            },
            TrainConfig::default(),
        ),
        "desk64" => (
            ModelConfig {
                image_size: 64,
                corr_size: 16,
                feature_channels: 64,
                generator_layers: gl(&[
                    (16, 256),
                    (32, 128),
                    (32, 64),
                    (32, 64),
                    (32, 64),
                    (64, 32),
                    (64, 16),
                ]),
                softmax_alpha: 100.0,
                pn_epsilon: 1e-5,
                use_nonlocal: true,
                use_spectral_norm: true,
                warmup_epochs: 0,
            },
            TrainConfig::default(),
        ),
        "toy32" => (
            ModelConfig {
                image_size: 32,
                corr_size: 8,
                feature_channels: 32,
                generator_layers: gl(&[
                    (16, 48),
                    (16, 32),
                    (16, 32),
                    (16, 32),
                    (16, 32),
                    (32, 16),
                    (32, 12),
                ]),
                softmax_alpha: 100.0,
                pn_epsilon: 1e-5,
                use_nonlocal: true,
                use_spectral_norm: true,
                warmup_epochs: 0,
            },
            TrainConfig {
                batch_size: 2,
                steps: 500,
                ..TrainConfig::default()
            },
        ),
        "tiny16" => (
            ModelConfig {
                image_size: 16,
                corr_size: 4,
                feature_channels: 16,
                generator_layers: gl(&[
                    (8, 32),
                    (8, 32),
                    (8, 32),
                    (8, 32),
                    (8, 32),
                    (16, 16),
                    (16, 8),
                ]),
                softmax_alpha: 100.0,
                pn_epsilon: 1e-5,
                use_nonlocal: true,
                use_spectral_norm: true,
                warmup_epochs: 0,
            },
            TrainConfig {
                batch_size: 2,
                steps: 200,
                ..TrainConfig::default()
            },
        ),
        _ => return None,
    };
    Some((model, LossConfig::default(), train))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_reads_alpha() {
        let text = "[model]\nimage_size = 64\ncorr_size = 16\nsoftmax_alpha = 100\n";
        let (m, _, _) = parse_config_text(text).unwrap();
        assert_eq!(m.softmax_alpha, 100.0);
    }

    #[test]
    fn omitted_pn_epsilon_defaults() {
        let text = "[model]\nimage_size = 64\ncorr_size = 16\n";
        let (m, _, _) = parse_config_text(text).unwrap();
        assert_eq!(m.pn_epsilon, 1e-5);
    }

    #[test]
    fn indivisible_corr_size_rejected() {
        let text = "[model]\nimage_size = 256\ncorr_size = 48\n";
        let err = parse_config_text(text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("corr_size"), "{msg}");
        assert!(msg.contains("does not divide"), "{msg}");
    }

    #[test]
    fn unknown_key_rejected() {
        let text = "[model]\nimage_size = 64\ncorr_size = 16\nfrobnicate = 3\n";
        let err = parse_config_text(text).unwrap_err();
        assert!(err.to_string().contains("frobnicate"));
    }

    #[test]
    fn round_trip_is_identity() {
        for name in ["full256", "desk64", "toy32", "tiny16"] {
            let (m, l, t) = preset(name).unwrap();
            let text = serialize_config(&m, &l, &t);
            let (m2, l2, t2) = parse_config_text(&text).unwrap();
            assert_eq!(m, m2, "{name}");
            assert_eq!(l, l2, "{name}");
            assert_eq!(t, t2, "{name}");
        }
    }

    #[test]
    fn presets_validate() {
        for name in ["full256", "desk64", "toy32", "tiny16"] {
            let (m, l, t) = preset(name).unwrap();
            m.validate().unwrap();
            l.validate().unwrap();
            t.validate().unwrap();
        }
    }

    #[test]
    fn full_preset_carries_reference_constants() {
        let (m, _, t) = preset("full256").unwrap();
        assert_eq!(m.softmax_alpha, 100.0);
        assert_eq!(m.warmup_epochs, 80);
        assert_eq!(m.corr_size, 64);
        assert_eq!(t.lr_g, 1e-4);
        assert_eq!(t.lr_d, 4e-4);
        assert_eq!(t.adam_beta1, 0.0);
        assert_eq!(t.adam_beta2, 0.999);
        assert_eq!(t.lr_d / t.lr_g, 4.0);
    }

    #[test]
    fn hash_tracks_architecture_and_objective() {
        let (m, l, _) = preset("toy32").unwrap();
        let h1 = config_hash(&m, &l);
        let mut m2 = m.clone();
        m2.softmax_alpha = 50.0;
        assert_ne!(h1, config_hash(&m2, &l));
        let mut l2 = l.clone();
        l2.psi[0] = 3.0;
        assert_ne!(h1, config_hash(&m, &l2));
    }

    #[test]
    fn bad_generator_ladder_is_a_construction_error() {
        let (mut m, _, _) = preset("toy32").unwrap();
        // final block does not reach image_size
        m.generator_layers.last_mut().unwrap().size = 16;
        assert!(m.validate().is_err());
        let (mut m, _, _) = preset("toy32").unwrap();
        // tripling a block size breaks the ladder
        m.generator_layers[2].size = 64;
        assert!(m.validate().is_err());
    }

    #[test]
    fn default_ladder_is_valid() {
        for (s, c) in [(16, 16), (32, 32), (64, 64), (256, 256)] {
            let layers = default_generator_layers(s, c);
            let cfg = ModelConfig {
                image_size: s,
                corr_size: s / 4,
                feature_channels: c,
                generator_layers: layers,
                softmax_alpha: 100.0,
                pn_epsilon: 1e-5,
                use_nonlocal: true,
                use_spectral_norm: true,
                warmup_epochs: 0,
            };
            cfg.validate().unwrap();
        }
    }
}
