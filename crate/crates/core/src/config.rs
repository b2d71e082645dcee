//! Experiment configuration and its text format.
//!
//! The format is one `key = value` per line. Keys are dotted
//! (`loss.reg = 4`); a `[section]` line prefixes the keys that follow it.
//! `#` starts a comment. Lists are comma separated. Every key has a
//! default, so an empty file is a valid configuration.

use std::collections::BTreeSet;

use crate::cvlr::DictionaryMode;
use crate::data::{DatasetSpec, Regime, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::mvmc::{CalibrationConfig, RefineConfig};
use crate::net::{feature_size, ToyNetConfig};
use crate::transforms::{AugmentSpec, GeomTransform};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Largest global gradient norm before rescaling; zero disables.
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch: 8,
            lr: 5e-3,
            momentum: 0.9,
            weight_decay: 5e-4,
            grad_clip: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MvmcConfig {
    pub gamma: f64,
    pub tie_band: f64,
    pub refine: bool,
    pub refine_cfg: RefineConfig,
    /// Restrict pseudo-labels to background plus the image's classes when
    /// image labels are visible.
    pub label_filter: bool,
}

impl Default for MvmcConfig {
    fn default() -> Self {
        let c = CalibrationConfig::default();
        Self {
            gamma: c.gamma,
            tie_band: c.tie_band,
            refine: c.refine.is_some(),
            refine_cfg: c.refine.unwrap_or_default(),
            label_filter: true,
        }
    }
}

impl MvmcConfig {
    pub fn calibration(&self) -> CalibrationConfig {
        CalibrationConfig {
            gamma: self.gamma,
            tie_band: self.tie_band,
            refine: self.refine.then_some(self.refine_cfg),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    /// Drives data generation, initialization, augmentation and ordering.
    pub seed: u64,
    pub data: DatasetSpec,
    pub aug: AugmentSpec,
    pub model: ToyNetConfig,
    /// Supervise the code initializer and tie codes across views.
    pub latent_reg: bool,
    pub mvmc: MvmcConfig,
    pub loss: LossWeights,
    /// Repetitions of every pixel-labeled sample per epoch.
    pub pixel_oversample: usize,
    /// Loss multiplier for pixel-labeled samples.
    pub pixel_loss_scale: f64,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let data = DatasetSpec::default();
        Self {
            seed: 0,
            aug: AugmentSpec {
                crop: data.size,
                ..AugmentSpec::default()
            },
            data,
            model: ToyNetConfig::default(),
            latent_reg: true,
            mvmc: MvmcConfig::default(),
            loss: LossWeights::default(),
            pixel_oversample: 5,
            pixel_loss_scale: 2.0,
            train: TrainConfig::default(),
        }
    }
}

fn field_err(field: &str, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.to_string(),
        message: message.into(),
    }
}

fn parse_num<T: std::str::FromStr>(field: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| field_err(field, format!("cannot parse `{v}` as a {}", std::any::type_name::<T>())))
}

fn parse_real(field: &str, v: &str) -> Result<f64> {
    let x: f64 = parse_num(field, v)?;
    if !x.is_finite() {
        return Err(field_err(field, format!("`{v}` is not finite")));
    }
    Ok(x)
}

fn parse_bool(field: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(field_err(field, format!("expected true or false, got `{v}`"))),
    }
}

fn parse_list<T>(field: &str, v: &str, item: impl Fn(&str, &str) -> Result<T>) -> Result<Vec<T>> {
    v.split(',').map(|s| item(field, s.trim())).collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(", ")
}

impl ExperimentConfig {
    /// Every key with its current value, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let d = &self.data;
        let a = &self.aug;
        let m = &self.model;
        let r = self.mvmc.refine_cfg;
        vec![
            ("seed", self.seed.to_string()),
            ("data.regime", d.regime.name().to_string()),
            ("data.train", d.train.to_string()),
            ("data.val", d.val.to_string()),
            ("data.size", d.size.to_string()),
            ("data.min_shapes", d.min_shapes.to_string()),
            ("data.max_shapes", d.max_shapes.to_string()),
            ("data.noise", d.noise.to_string()),
            ("data.pixel_fraction", d.pixel_fraction.to_string()),
            ("aug.scales", join(&a.scales)),
            ("aug.flip", a.flip.to_string()),
            ("aug.color", a.color.to_string()),
            ("aug.brightness", a.color_strength.brightness.to_string()),
            ("aug.contrast", a.color_strength.contrast.to_string()),
            ("aug.saturation", a.color_strength.saturation.to_string()),
            ("aug.hue", a.color_strength.hue.to_string()),
            ("aug.crop", a.crop.to_string()),
            ("model.channels", join(&m.channels)),
            ("model.d_model", m.d_model.to_string()),
            ("model.decoder", m.decoder_channels.to_string()),
            ("model.aux", m.aux_channels.to_string()),
            ("cvlr.enabled", m.use_cvlr.to_string()),
            ("cvlr.k", m.cvlr.k.to_string()),
            ("cvlr.d", m.cvlr.d.to_string()),
            ("cvlr.temperature", m.cvlr.temperature.to_string()),
            ("cvlr.iterations", m.cvlr.iterations.to_string()),
            (
                "cvlr.dictionary",
                match m.cvlr.dictionary {
                    DictionaryMode::Shared => "shared",
                    DictionaryMode::Separate => "separate",
                }
                .to_string(),
            ),
            ("cvlr.latent_reg", self.latent_reg.to_string()),
            ("mvmc.gamma", self.mvmc.gamma.to_string()),
            ("mvmc.tie_band", self.mvmc.tie_band.to_string()),
            ("mvmc.refine", self.mvmc.refine.to_string()),
            ("mvmc.refine_iterations", r.iterations.to_string()),
            ("mvmc.kernel", r.kernel_size.to_string()),
            ("mvmc.sigma_color", r.sigma_color.to_string()),
            ("mvmc.label_filter", self.mvmc.label_filter.to_string()),
            ("loss.seg", self.loss.seg.to_string()),
            ("loss.cls", self.loss.cls.to_string()),
            ("loss.reg", self.loss.reg.to_string()),
            ("loss.warmup", self.loss.warmup_epochs.to_string()),
            ("loss.pixel_oversample", self.pixel_oversample.to_string()),
            ("loss.pixel_scale", self.pixel_loss_scale.to_string()),
            ("train.epochs", self.train.epochs.to_string()),
            ("train.batch", self.train.batch.to_string()),
            ("train.lr", self.train.lr.to_string()),
            ("train.momentum", self.train.momentum.to_string()),
            ("train.weight_decay", self.train.weight_decay.to_string()),
            ("train.grad_clip", self.train.grad_clip.to_string()),
        ]
    }

    /// Assigns one key. Values are checked for syntax here and for range in
    /// [`ExperimentConfig::validate`].
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let v = v.trim();
        match key {
            "seed" => self.seed = parse_num(key, v)?,
            "data.regime" => {
                self.data.regime = Regime::parse(v).ok_or_else(|| {
                    field_err(
                        key,
                        format!("unknown regime `{v}` (wsss, semi_pixel_image, semi_pixel_unlabeled)"),
                    )
                })?
            }
            "data.train" => self.data.train = parse_num(key, v)?,
            "data.val" => self.data.val = parse_num(key, v)?,
            "data.size" => {
                let size = parse_num(key, v)?;
                // A crop that covered the whole image keeps doing so.
                if self.aug.crop == self.data.size {
                    self.aug.crop = size;
                }
                self.data.size = size;
            }
            "data.min_shapes" => self.data.min_shapes = parse_num(key, v)?,
            "data.max_shapes" => self.data.max_shapes = parse_num(key, v)?,
            "data.noise" => self.data.noise = parse_real(key, v)?,
            "data.pixel_fraction" => self.data.pixel_fraction = parse_real(key, v)?,
            "aug.scales" => self.aug.scales = parse_list(key, v, parse_real)?,
            "aug.flip" => self.aug.flip = parse_bool(key, v)?,
            "aug.color" => self.aug.color = parse_bool(key, v)?,
            "aug.brightness" => self.aug.color_strength.brightness = parse_real(key, v)?,
            "aug.contrast" => self.aug.color_strength.contrast = parse_real(key, v)?,
            "aug.saturation" => self.aug.color_strength.saturation = parse_real(key, v)?,
            "aug.hue" => self.aug.color_strength.hue = parse_real(key, v)?,
            "aug.crop" => self.aug.crop = parse_num(key, v)?,
            "model.channels" => {
                let c: Vec<usize> = parse_list(key, v, parse_num)?;
                self.model.channels = c
                    .try_into()
                    .map_err(|_| field_err(key, "expected three channel counts"))?;
            }
            "model.d_model" => self.model.d_model = parse_num(key, v)?,
            "model.decoder" => self.model.decoder_channels = parse_num(key, v)?,
            "model.aux" => self.model.aux_channels = parse_num(key, v)?,
            "cvlr.enabled" => self.model.use_cvlr = parse_bool(key, v)?,
            "cvlr.k" => self.model.cvlr.k = parse_num(key, v)?,
            "cvlr.d" => self.model.cvlr.d = parse_num(key, v)?,
            "cvlr.temperature" => self.model.cvlr.temperature = parse_real(key, v)?,
            "cvlr.iterations" => self.model.cvlr.iterations = parse_num(key, v)?,
            "cvlr.dictionary" => {
                self.model.cvlr.dictionary = match v {
                    "shared" => DictionaryMode::Shared,
                    "separate" => DictionaryMode::Separate,
                    _ => return Err(field_err(key, format!("expected shared or separate, got `{v}`"))),
                }
            }
            "cvlr.latent_reg" => self.latent_reg = parse_bool(key, v)?,
            "mvmc.gamma" => self.mvmc.gamma = parse_real(key, v)?,
            "mvmc.tie_band" => self.mvmc.tie_band = parse_real(key, v)?,
            "mvmc.refine" => self.mvmc.refine = parse_bool(key, v)?,
            "mvmc.refine_iterations" => self.mvmc.refine_cfg.iterations = parse_num(key, v)?,
            "mvmc.kernel" => self.mvmc.refine_cfg.kernel_size = parse_num(key, v)?,
            "mvmc.sigma_color" => self.mvmc.refine_cfg.sigma_color = parse_real(key, v)?,
            "mvmc.label_filter" => self.mvmc.label_filter = parse_bool(key, v)?,
            "loss.seg" => self.loss.seg = parse_real(key, v)?,
            "loss.cls" => self.loss.cls = parse_real(key, v)?,
            "loss.reg" => self.loss.reg = parse_real(key, v)?,
            "loss.warmup" => self.loss.warmup_epochs = parse_num(key, v)?,
            "loss.pixel_oversample" => self.pixel_oversample = parse_num(key, v)?,
            "loss.pixel_scale" => self.pixel_loss_scale = parse_real(key, v)?,
            "train.epochs" => self.train.epochs = parse_num(key, v)?,
            "train.batch" => self.train.batch = parse_num(key, v)?,
            "train.lr" => self.train.lr = parse_real(key, v)?,
            "train.momentum" => self.train.momentum = parse_real(key, v)?,
            "train.weight_decay" => self.train.weight_decay = parse_real(key, v)?,
            "train.grad_clip" => self.train.grad_clip = parse_real(key, v)?,
            _ => return Err(field_err(key, "unknown key")),
        }
        Ok(())
    }
}

impl ExperimentConfig {
    /// Parses configuration text on top of the defaults and validates it.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = BTreeSet::new();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |message: String| field_err(&format!("line {}", lineno + 1), message);
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| at(format!("unterminated section header `{line}`")))?
                    .trim();
                if name.is_empty() || name.contains(char::is_whitespace) {
                    return Err(at(format!("bad section name `{name}`")));
                }
                section = format!("{name}.");
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected `key = value`, got `{line}`")))?;
            let key = format!("{section}{}", key.trim());
            if !seen.insert(key.clone()) {
                return Err(field_err(&key, format!("set twice (line {})", lineno + 1)));
            }
            cfg.set(&key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `key=value` overrides in order, then validates.
    pub fn with_overrides(mut self, overrides: &[(String, String)]) -> Result<Self> {
        for (k, v) in overrides {
            self.set(k, v)?;
        }
        self.validate()?;
        Ok(self)
    }

    /// Canonical text form; parsing it gives back an equal config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut section = "";
        for (key, value) in self.entries() {
            let (sec, name) = key.split_once('.').unwrap_or(("", key));
            if sec != section {
                out.push_str(&format!("\n[{sec}]\n"));
                section = sec;
            }
            out.push_str(&format!("{name} = {value}\n"));
        }
        out
    }

    /// The dataset description, seeded from the experiment seed.
    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            seed: self.seed,
            ..self.data
        }
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |field: &str, r: Result<()>| {
            r.map_err(|e| match e {
                Error::Parameter(m) => field_err(field, m),
                other => other,
            })
        };
        wrap("data", self.data.validate())?;
        wrap("aug", self.aug.validate())?;
        wrap("mvmc", self.mvmc.calibration().validate())?;
        wrap("loss", self.loss.validate())?;
        if self.aug.crop > self.data.size {
            return Err(field_err(
                "aug.crop",
                format!("crop {} exceeds image size {}", self.aug.crop, self.data.size),
            ));
        }
        let m = &self.model;
        if m.num_classes != NUM_CLASSES {
            return Err(field_err("model", format!("the dataset has {NUM_CLASSES} classes")));
        }
        if m.channels.contains(&0) || m.d_model == 0 || m.decoder_channels == 0 || m.aux_channels == 0 {
            return Err(field_err("model", "channel counts must be positive"));
        }
        if m.use_cvlr {
            if m.cvlr.k != NUM_CLASSES {
                return Err(field_err(
                    "cvlr.k",
                    format!("must equal the class count {NUM_CLASSES}, got {}", m.cvlr.k),
                ));
            }
            if m.cvlr.d <= m.cvlr.k {
                return Err(field_err("cvlr.d", format!("must exceed k={}", m.cvlr.k)));
            }
            if !(m.cvlr.temperature > 0.0) {
                return Err(field_err("cvlr.temperature", "must be positive"));
            }
        }
        // Feature maps of every view must invert onto the source feature map.
        let crop = self.aug.crop;
        let target = feature_size(crop);
        for &s in &self.aug.scales {
            let g = GeomTransform::new(s, false).map_err(|e| field_err("aug.scales", e.to_string()))?;
            let view = feature_size(g.scaled_len(crop));
            if view != g.scaled_len(target) {
                return Err(field_err(
                    "aug.scales",
                    format!(
                        "scale {s} on crop {crop} gives {view} feature rows, expected {}",
                        g.scaled_len(target)
                    ),
                ));
            }
            if m.use_cvlr && view * view <= m.cvlr.k && self.aug.scales.len() == 1 {
                return Err(field_err(
                    "aug.scales",
                    format!("scale {s} leaves too few feature pixels"),
                ));
            }
        }
        let t = &self.train;
        if t.epochs == 0 || t.batch == 0 {
            return Err(field_err("train", "epochs and batch must be positive"));
        }
        if !(t.lr > 0.0) {
            return Err(field_err("train.lr", "must be positive"));
        }
        if !(0.0..1.0).contains(&t.momentum) {
            return Err(field_err("train.momentum", "must lie in [0, 1)"));
        }
        if !(t.weight_decay >= 0.0) {
            return Err(field_err("train.weight_decay", "must be nonnegative"));
        }
        if !(t.grad_clip >= 0.0) || !t.grad_clip.is_finite() {
            return Err(field_err("train.grad_clip", "must be finite and nonnegative"));
        }
        if self.pixel_oversample == 0 {
            return Err(field_err("loss.pixel_oversample", "must be at least 1"));
        }
        if !(self.pixel_loss_scale >= 0.0) {
            return Err(field_err("loss.pixel_scale", "must be nonnegative"));
        }
        Ok(())
    }
}

/// Splits one `key=value` override.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| field_err(s, "override must look like key=value"))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(field_err(s, "empty key"));
    }
    Ok((k.to_string(), v.trim().to_string()))
}

pub fn parse_overrides<S: AsRef<str>>(items: &[S]) -> Result<Vec<(String, String)>> {
    items.iter().map(|s| parse_override(s.as_ref())).collect()
}
