use std::fmt;
use std::str::FromStr;

use crate::error::{FreaError, Result};

pub const DEPTH: usize = 6;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_size: usize,
    pub encoder_filters: Vec<usize>,
    pub decoder_filters: Vec<usize>,
    /// 1-based decoder layer feeding the low-frequency branch.
    pub low_branch_layer: usize,
    /// 1-based decoder layer feeding the high-frequency branch.
    pub high_branch_layer: usize,
    pub use_attention: bool,
    pub use_freq_branches: bool,
    pub dropout_p: f64,
    pub lambda_low: f64,
    pub lambda_high: f64,
    pub lambda_rec: f64,
    pub init_std: f64,
    pub rng_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_size: 256,
            encoder_filters: vec![64, 128, 256, 512, 512, 512],
            decoder_filters: vec![512, 1024, 1024, 512, 256, 128],
            low_branch_layer: 4,
            high_branch_layer: 5,
            use_attention: true,
            use_freq_branches: true,
            dropout_p: 0.5,
            lambda_low: 1.0,
            lambda_high: 1.0,
            lambda_rec: 1.0,
            init_std: 0.02,
            rng_seed: 0,
        }
    }
}

impl ModelConfig {
    /// 64×64 input with narrow layers; small enough for CI and gradient checks.
    pub fn desk() -> Self {
        ModelConfig {
            input_size: 64,
            encoder_filters: vec![8, 16, 16, 16, 16, 16],
            decoder_filters: vec![16, 16, 16, 16, 16, 8],
            ..Default::default()
        }
    }

    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        let (att, freq) = ablation.switches();
        self.use_attention = att;
        self.use_freq_branches = freq;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FreaError::Config(m));
        if self.encoder_filters.len() != DEPTH || self.decoder_filters.len() != DEPTH {
            return bad(format!("filter lists must have {DEPTH} entries"));
        }
        if self.encoder_filters.iter().chain(&self.decoder_filters).any(|&f| f == 0) {
            return bad("filter counts must be positive".into());
        }
        if self.input_size < 64 || !self.input_size.is_power_of_two() {
            return bad(format!(
                "input_size must be a power of two >= 64, got {}",
                self.input_size
            ));
        }
        let (lo, hi) = (self.low_branch_layer, self.high_branch_layer);
        if !(1..=DEPTH).contains(&lo) || !(1..=DEPTH).contains(&hi) {
            return bad(format!("branch layers must lie in 1..={DEPTH}"));
        }
        if lo >= hi || hi >= DEPTH {
            return bad(format!(
                "need low_branch_layer < high_branch_layer < {DEPTH}, got {lo} and {hi}"
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p must lie in [0, 1), got {}", self.dropout_p));
        }
        for (name, v) in [
            ("lambda_low", self.lambda_low),
            ("lambda_high", self.lambda_high),
            ("lambda_rec", self.lambda_rec),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be a finite non-negative number, got {v}"));
            }
        }
        if !(self.init_std > 0.0) {
            return bad(format!("init_std must be positive, got {}", self.init_std));
        }
        Ok(())
    }

    /// Spatial sizes after each encoder layer and each decoder layer.
    pub fn spatial_trace(&self) -> (Vec<usize>, Vec<usize>) {
        let enc = (1..=DEPTH).map(|i| self.input_size >> i).collect();
        let dec = (1..=DEPTH).map(|j| self.input_size >> (DEPTH - j)).collect();
        (enc, dec)
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let list = |v: &[usize]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        vec![
            ("input_size", self.input_size.to_string()),
            ("encoder_filters", list(&self.encoder_filters)),
            ("decoder_filters", list(&self.decoder_filters)),
            ("low_branch_layer", self.low_branch_layer.to_string()),
            ("high_branch_layer", self.high_branch_layer.to_string()),
            ("use_attention", self.use_attention.to_string()),
            ("use_freq_branches", self.use_freq_branches.to_string()),
            ("dropout_p", fmt_f64(self.dropout_p)),
            ("lambda_low", fmt_f64(self.lambda_low)),
            ("lambda_high", fmt_f64(self.lambda_high)),
            ("lambda_rec", fmt_f64(self.lambda_rec)),
            ("init_std", fmt_f64(self.init_std)),
            ("rng_seed", self.rng_seed.to_string()),
        ]
    }

    /// Applies one `key = value` setting. Returns `Ok(false)` for keys this
    /// config does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "input_size" => self.input_size = parse(key, value)?,
            "encoder_filters" => self.encoder_filters = parse_list(key, value)?,
            "decoder_filters" => self.decoder_filters = parse_list(key, value)?,
            "low_branch_layer" => self.low_branch_layer = parse(key, value)?,
            "high_branch_layer" => self.high_branch_layer = parse(key, value)?,
            "use_attention" => self.use_attention = parse(key, value)?,
            "use_freq_branches" => self.use_freq_branches = parse(key, value)?,
            "dropout_p" => self.dropout_p = parse(key, value)?,
            "lambda_low" => self.lambda_low = parse(key, value)?,
            "lambda_high" => self.lambda_high = parse(key, value)?,
            "lambda_rec" => self.lambda_rec = parse(key, value)?,
            "init_std" => self.init_std = parse(key, value)?,
            "rng_seed" => self.rng_seed = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Shortest decimal that parses back to the same `f64`.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub(crate) fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| FreaError::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|v| parse(key, v)).collect()
}

/// The four arms of the ablation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Ablation {
    Unet,
    WoFreq,
    WoAtt,
    Full,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Unet, Ablation::WoFreq, Ablation::WoAtt, Ablation::Full];

    /// `(use_attention, use_freq_branches)`.
    pub fn switches(self) -> (bool, bool) {
        match self {
            Ablation::Unet => (false, false),
            Ablation::WoFreq => (true, false),
            Ablation::WoAtt => (false, true),
            Ablation::Full => (true, true),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Unet => "unet",
            Ablation::WoFreq => "wo-freq",
            Ablation::WoAtt => "wo-att",
            Ablation::Full => "full",
        }
    }

    /// Row label used in the comparison table.
    pub fn label(self) -> &'static str {
        match self {
            Ablation::Unet => "U-net",
            Ablation::WoFreq => "FREA-Unet-wo-Freq",
            Ablation::WoAtt => "FREA-Unet-wo-Att",
            Ablation::Full => "FREA-Unet",
        }
    }
}

impl FromStr for Ablation {
    type Err = FreaError;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                FreaError::Config(format!(
                    "unknown ablation {s:?} (expected unet, wo-freq, wo-att or full)"
                ))
            })
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Default architecture with the switches of the named ablation arm.
pub fn ablation_config(name: &str) -> Result<ModelConfig> {
    Ok(ModelConfig::default().with_ablation(name.parse()?))
}
