//! Layered run configuration: built-in defaults, then `--config FILE`
//! key-values, then command-line flags, later layers winning.
//!
//! The file format is plain `key = value` text with `#` comments. Keys are
//! dotted (`lffpm.base_width = 16`); a `[section]` header prefixes the keys
//! that follow (`[lffpm]` + `base_width = 16` names the same key). Flags
//! mirror keys with dots replaced by dashes (`--lffpm-base-width`).

use crate::{io_error, CliError, CliResult};
use mfdnet_core::data::DatasetConfig;
use mfdnet_core::model::ModelConfig;
use mfdnet_core::train::TrainConfig;
use std::path::Path;

/// Everything the commands configure from keys. The model keys are the
/// canonical checkpoint-config set; loss/train/data keys steer the rest.
#[derive(Debug, Clone)]
pub struct AppConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DatasetConfig,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            data: DatasetConfig::default(),
        }
    }
}

impl AppConfig {
    /// Route one `key = value` assignment. Unknown keys and malformed
    /// values are usage errors.
    pub fn apply(&mut self, key: &str, value: &str) -> CliResult<()> {
        let value = value.trim();
        match key {
            k if k.starts_with("pyramid.") || k.starts_with("lffpm.") || k.starts_with("hfrm.") => {
                self.model.set(k, value)?;
            }
            "loss.lambda_m" => self.train.weights.lambda_m = parse_f64(key, value)?,
            "loss.lambda_s" => self.train.weights.lambda_s = parse_f64(key, value)?,
            "loss.lambda_p" => self.train.weights.lambda_p = parse_f64(key, value)?,
            "train.lr" => self.train.lr = parse_f64(key, value)?,
            "train.steps" => self.train.steps = parse_int(key, value)?,
            "train.batch" => self.train.batch = parse_int::<usize>(key, value)?,
            "train.seed" => self.train.seed = parse_int(key, value)?,
            "train.eval_every" => self.train.eval_every = parse_int(key, value)?,
            // 0 disables clipping.
            "train.clip_norm" => {
                let v = parse_f64(key, value)?;
                self.train.clip_norm = (v != 0.0).then_some(v);
            }
            "train.patch" => self.data.patch = parse_int::<usize>(key, value)?,
            "data.epoch_len" => self.data.epoch_len = parse_int::<usize>(key, value)?,
            "data.augment" => self.data.augment = parse_bool(key, value)?,
            _ => {
                return Err(CliError::Usage(format!("unknown config key {key:?}")));
            }
        }
        Ok(())
    }

    /// Load a config file (if given) and then the flag overrides, in that
    /// order, on top of the defaults.
    pub fn layered(config: Option<&Path>, overrides: &Overrides) -> CliResult<Self> {
        let mut cfg = AppConfig::default();
        if let Some(path) = config {
            let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
            for (key, value) in parse_config_text(&text)? {
                cfg.apply(&key, &value)?;
            }
        }
        for (key, value) in overrides.pairs() {
            cfg.apply(key, &value)?;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.data.validate()?;
        Ok(())
    }
}

fn parse_f64(key: &str, value: &str) -> CliResult<f64> {
    value
        .parse()
        .map_err(|_| CliError::Usage(format!("value for {key:?} is not a number: {value:?}")))
}

fn parse_int<T: std::str::FromStr>(key: &str, value: &str) -> CliResult<T> {
    value.parse().map_err(|_| {
        CliError::Usage(format!(
            "value for {key:?} is not a whole number: {value:?}"
        ))
    })
}

fn parse_bool(key: &str, value: &str) -> CliResult<bool> {
    match value {
        "true" | "1" | "on" => Ok(true),
        "false" | "0" | "off" => Ok(false),
        _ => Err(CliError::Usage(format!(
            "value for {key:?} is not a boolean: {value:?}"
        ))),
    }
}

/// Parse `key = value` lines with optional `[section]` headers into ordered
/// assignments. Duplicate keys are allowed; the last assignment wins when
/// applied in order.
pub fn parse_config_text(text: &str) -> CliResult<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut section = String::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            let name = name.trim();
            if name.is_empty() {
                return Err(CliError::Usage(format!(
                    "config line {}: empty section name",
                    lineno + 1
                )));
            }
            section = format!("{name}.");
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Usage(format!(
                "config line {}: expected `key = value`, got {line:?}",
                lineno + 1
            )));
        };
        out.push((
            format!("{section}{}", key.trim()),
            value.trim().to_string(),
        ));
    }
    Ok(out)
}

/// Per-key command-line overrides; each flag mirrors a config key with dots
/// replaced by dashes. Values are parsed by the same code path as the file.
#[derive(clap::Args, Debug, Default, Clone)]
pub struct Overrides {
    /// Config file of `key = value` lines (flags override it).
    #[arg(long, value_name = "FILE")]
    pub config: Option<std::path::PathBuf>,

    #[arg(long, value_name = "INT", help = "Frequency-band count of the image pyramid")]
    pub pyramid_depth: Option<String>,
    #[arg(long, value_name = "INT", help = "Channel width of the low-frequency network")]
    pub lffpm_base_width: Option<String>,
    #[arg(long, value_name = "INT", help = "Transformer blocks before the encoder")]
    pub lffpm_n_fetb: Option<String>,
    #[arg(long, value_name = "INT", help = "Transformer blocks after the decoder")]
    pub lffpm_n_frtb: Option<String>,
    #[arg(long, value_name = "INT", help = "Downsampling stages in the U-shaped core")]
    pub lffpm_unet_depth: Option<String>,
    #[arg(long, value_name = "INT", help = "Conv blocks per encoder stage")]
    pub lffpm_enc_blocks: Option<String>,
    #[arg(long, value_name = "INT", help = "Conv blocks per decoder stage")]
    pub lffpm_dec_blocks: Option<String>,
    #[arg(long, value_name = "INT", help = "Conv blocks at the bottleneck")]
    pub lffpm_bottleneck_blocks: Option<String>,
    #[arg(long, value_name = "INT", help = "Attention heads per transformer block")]
    pub lffpm_heads: Option<String>,
    #[arg(long, value_name = "INT", help = "Feed-forward expansion factor")]
    pub lffpm_ffn_expansion: Option<String>,
    #[arg(long, value_name = "INT", help = "Channel width of the per-band mask head")]
    pub hfrm_mask_width: Option<String>,
    #[arg(long, value_name = "INT", help = "Channel width of the per-band refinement head")]
    pub hfrm_refine_width: Option<String>,
    #[arg(long, value_name = "INT", help = "Channel reduction inside aggregation blocks")]
    pub hfrm_fab_reduction: Option<String>,
    #[arg(long, value_name = "FLOAT", help = "Weight of the pixel (MSE) loss term")]
    pub loss_lambda_m: Option<String>,
    #[arg(long, value_name = "FLOAT", help = "Weight of the structural-similarity loss term")]
    pub loss_lambda_s: Option<String>,
    #[arg(long, value_name = "FLOAT", help = "Weight of the perceptual loss term")]
    pub loss_lambda_p: Option<String>,
    #[arg(long, value_name = "FLOAT", help = "Learning rate")]
    pub train_lr: Option<String>,
    #[arg(long, value_name = "INT", help = "Total optimizer steps (resume counts prior steps)")]
    pub train_steps: Option<String>,
    #[arg(long, value_name = "INT", help = "Pairs per optimizer step")]
    pub train_batch: Option<String>,
    #[arg(long, value_name = "INT", help = "Seed for sampling, initialization, and asset generation")]
    pub train_seed: Option<String>,
    #[arg(long, value_name = "INT", help = "Evaluate and snapshot-if-best every N steps; 0 = final only")]
    pub train_eval_every: Option<String>,
    #[arg(long, value_name = "FLOAT", help = "Global gradient-norm ceiling; 0 disables")]
    pub train_clip_norm: Option<String>,
    #[arg(long, value_name = "INT", help = "Square crop size of training pairs")]
    pub train_patch: Option<String>,
    #[arg(long, value_name = "INT", help = "Distinct pairs the sampler cycles through")]
    pub data_epoch_len: Option<String>,
    #[arg(long, value_name = "BOOL", help = "Randomly warp flare assets during sampling")]
    pub data_augment: Option<String>,
}

impl Overrides {
    /// The set flags as `(config key, value)` pairs, in declaration order.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let mut push = |key: &'static str, v: &Option<String>| {
            if let Some(v) = v {
                out.push((key, v.clone()));
            }
        };
        push("pyramid.depth", &self.pyramid_depth);
        push("lffpm.base_width", &self.lffpm_base_width);
        push("lffpm.n_fetb", &self.lffpm_n_fetb);
        push("lffpm.n_frtb", &self.lffpm_n_frtb);
        push("lffpm.unet_depth", &self.lffpm_unet_depth);
        push("lffpm.enc_blocks", &self.lffpm_enc_blocks);
        push("lffpm.dec_blocks", &self.lffpm_dec_blocks);
        push("lffpm.bottleneck_blocks", &self.lffpm_bottleneck_blocks);
        push("lffpm.heads", &self.lffpm_heads);
        push("lffpm.ffn_expansion", &self.lffpm_ffn_expansion);
        push("hfrm.mask_width", &self.hfrm_mask_width);
        push("hfrm.refine_width", &self.hfrm_refine_width);
        push("hfrm.fab_reduction", &self.hfrm_fab_reduction);
        push("loss.lambda_m", &self.loss_lambda_m);
        push("loss.lambda_s", &self.loss_lambda_s);
        push("loss.lambda_p", &self.loss_lambda_p);
        push("train.lr", &self.train_lr);
        push("train.steps", &self.train_steps);
        push("train.batch", &self.train_batch);
        push("train.seed", &self.train_seed);
        push("train.eval_every", &self.train_eval_every);
        push("train.clip_norm", &self.train_clip_norm);
        push("train.patch", &self.train_patch);
        push("data.epoch_len", &self.data_epoch_len);
        push("data.augment", &self.data_augment);
        out
    }
}
