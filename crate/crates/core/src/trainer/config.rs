use std::fs;
use std::path::{Path, PathBuf};

use crate::data::PrepOptions;
use crate::error::{FreaError, Result};
use crate::frea_unet::config::{fmt_f64, parse};
use crate::frea_unet::{Ablation, ModelConfig};
use crate::image_ops::{DEFAULT_KERNEL_SIZE, DEFAULT_SIGMA};
use crate::objectives::DEFAULT_MASK_THRESHOLD;

/// Named starting points for the model architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// 64×64 input with narrow layers.
    Desk,
    /// 256×256 input with the full-width layers.
    Full,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Desk => "desk",
            Preset::Full => "full",
        }
    }

    pub fn model(self) -> ModelConfig {
        match self {
            Preset::Desk => ModelConfig::desk(),
            Preset::Full => ModelConfig::default(),
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = FreaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "full" => Ok(Preset::Full),
            _ => Err(FreaError::Config(format!("unknown preset {s:?} (expected desk or full)"))),
        }
    }
}

/// Everything a run needs besides the data.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub preset: Preset,
    pub model: ModelConfig,
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Linear decay over the second half of training, ending one step above zero.
    pub lr_decay: bool,
    pub sigma: f64,
    pub kernel_size: usize,
    pub k: usize,
    pub data_seed: u64,
    pub shuffle_seed: u64,
    pub mask_threshold: f64,
    /// Forces the attention/branch switches of one ablation arm.
    pub ablation: Option<Ablation>,
    pub out_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::with_preset(Preset::Desk)
    }
}

/// Keys accepted by [`TrainConfig::set`], in echo order.
pub const CONFIG_KEYS: &[&str] = &[
    "preset",
    "input_size",
    "encoder_filters",
    "decoder_filters",
    "low_branch_layer",
    "high_branch_layer",
    "use_attention",
    "use_freq_branches",
    "dropout_p",
    "lambda_low",
    "lambda_high",
    "lambda_rec",
    "init_std",
    "rng_seed",
    "epochs",
    "lr",
    "beta1",
    "beta2",
    "adam_eps",
    "lr_decay",
    "sigma",
    "kernel_size",
    "k",
    "data_seed",
    "shuffle_seed",
    "mask_threshold",
    "ablation",
    "out_dir",
];

impl TrainConfig {
    pub fn with_preset(preset: Preset) -> Self {
        TrainConfig {
            preset,
            model: preset.model(),
            epochs: 200,
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            adam_eps: 1e-8,
            lr_decay: false,
            sigma: DEFAULT_SIGMA,
            kernel_size: DEFAULT_KERNEL_SIZE,
            k: 3,
            data_seed: 0,
            shuffle_seed: 0,
            mask_threshold: DEFAULT_MASK_THRESHOLD,
            ablation: None,
            out_dir: None,
        }
    }

    /// Model config with the ablation switches applied.
    pub fn effective_model(&self) -> ModelConfig {
        match self.ablation {
            Some(a) => self.model.clone().with_ablation(a),
            None => self.model.clone(),
        }
    }

    pub fn prep_options(&self) -> PrepOptions {
        PrepOptions {
            size: self.model.input_size,
            sigma: self.sigma,
            kernel_size: self.kernel_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FreaError::Config(m));
        self.effective_model().validate()?;
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return bad(format!("adam_eps must be positive, got {}", self.adam_eps));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if self.kernel_size % 2 == 0 {
            return bad(format!("kernel_size must be odd, got {}", self.kernel_size));
        }
        if self.k < 2 {
            return bad(format!("k must be at least 2, got {}", self.k));
        }
        if !(0.0..1.0).contains(&self.mask_threshold) {
            return bad(format!("mask_threshold must lie in [0, 1), got {}", self.mask_threshold));
        }
        if let Some(dir) = &self.out_dir {
            fs::create_dir_all(dir).map_err(|e| FreaError::io(dir, e))?;
            let probe = dir.join(".frea-write-test");
            fs::write(&probe, b"").map_err(|e| FreaError::io(&probe, e))?;
            let _ = fs::remove_file(&probe);
        }
        Ok(())
    }

    /// Applies one setting. `preset` resets the architecture.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "preset" => {
                self.preset = v.parse()?;
                self.model = self.preset.model();
            }
            "epochs" => self.epochs = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "beta1" => self.beta1 = parse(key, v)?,
            "beta2" => self.beta2 = parse(key, v)?,
            "adam_eps" => self.adam_eps = parse(key, v)?,
            "lr_decay" => self.lr_decay = parse(key, v)?,
            "sigma" => self.sigma = parse(key, v)?,
            "kernel_size" => self.kernel_size = parse(key, v)?,
            "k" => self.k = parse(key, v)?,
            "data_seed" => self.data_seed = parse(key, v)?,
            "shuffle_seed" => self.shuffle_seed = parse(key, v)?,
            "mask_threshold" => self.mask_threshold = parse(key, v)?,
            "ablation" => self.ablation = if v.is_empty() { None } else { Some(v.parse()?) },
            "out_dir" => self.out_dir = if v.is_empty() { None } else { Some(PathBuf::from(v)) },
            _ => {
                if !self.model.set(key, v)? {
                    return Err(FreaError::Config(format!("unknown key {key:?}")));
                }
            }
        }
        Ok(())
    }

    /// Applies settings in order, except that a `preset` is applied first.
    pub fn apply<'a>(&mut self, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<()> {
        let pairs: Vec<_> = pairs.into_iter().collect();
        if let Some((_, p)) = pairs.iter().rev().find(|(k, _)| *k == "preset") {
            self.set("preset", p)?;
        }
        for (k, v) in pairs.into_iter().filter(|(k, _)| *k != "preset") {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let pairs = parse_config_text(text)?;
        let mut c = TrainConfig::default();
        c.apply(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
        Ok(c)
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let mut out = vec![("preset", self.preset.name().to_string())];
        out.extend(self.model.to_pairs());
        out.extend([
            ("epochs", self.epochs.to_string()),
            ("lr", fmt_f64(self.lr)),
            ("beta1", fmt_f64(self.beta1)),
            ("beta2", fmt_f64(self.beta2)),
            ("adam_eps", fmt_f64(self.adam_eps)),
            ("lr_decay", self.lr_decay.to_string()),
            ("sigma", fmt_f64(self.sigma)),
            ("kernel_size", self.kernel_size.to_string()),
            ("k", self.k.to_string()),
            ("data_seed", self.data_seed.to_string()),
            ("shuffle_seed", self.shuffle_seed.to_string()),
            ("mask_threshold", fmt_f64(self.mask_threshold)),
            ("ablation", self.ablation.map(|a| a.name().to_string()).unwrap_or_default()),
            (
                "out_dir",
                self.out_dir.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            ),
        ]);
        out
    }

    /// `key = value` lines that [`TrainConfig::from_text`] reads back.
    pub fn to_text(&self) -> String {
        self.to_pairs().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_text(&fs::read_to_string(path).map_err(|e| FreaError::io(path, e))?)
    }
}

/// Splits `key = value` lines, dropping blank lines and `#` comments.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| FreaError::Config(format!("line {}: expected key = value", n + 1)))?;
        let k = k.trim();
        if !CONFIG_KEYS.contains(&k) {
            return Err(FreaError::Config(format!("line {}: unknown key {k:?}", n + 1)));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_cover_echo() {
        let keys: Vec<&str> = TrainConfig::default().to_pairs().iter().map(|p| p.0).collect();
        assert_eq!(keys, CONFIG_KEYS);
    }

    #[test]
    fn preset_applies_before_other_keys() {
        let mut c = TrainConfig::default();
        c.apply([("input_size", "128"), ("preset", "full")]).unwrap();
        assert_eq!(c.model.input_size, 128);
        assert_eq!(c.model.encoder_filters, ModelConfig::default().encoder_filters);
    }
}
