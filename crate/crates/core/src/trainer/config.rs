//! Run configuration as a flat `key = value` text file.
//!
//! Lines starting with `#` and blank lines are ignored. Unknown and repeated
//! keys are errors. [`RunConfig::to_text`] writes every key in a fixed order,
//! so the output can be fed back to reproduce a run exactly.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::encoder::{TokenizerConfig, UnicodeForm};
use crate::error::{Error, Result};
use crate::losses::{LossFlags, LossWeights, RegNegatives};

use super::model::ModelDims;
use super::optim::AdamWConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub dims: ModelDims,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: AdamWConfig,
    pub schedule_start_factor: f64,
    pub max_grad_norm: f64,
    pub weights: LossWeights,
    pub flags: LossFlags,
    /// Train only the head and temperature; adapters stay at init.
    pub head_only: bool,
    pub init_tau: f64,
    /// Adapter entries start in `[-s/sqrt(d_f), s/sqrt(d_f)]`.
    pub adapter_init_scale: f64,
    /// Both adapters start from one draw, like towers sharing a pretrained encoder.
    pub tied_adapter_init: bool,
    pub tokenizer: TokenizerConfig,
    /// Store optimizer moments in the checkpoint for resuming.
    pub save_optimizer: bool,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            dims: ModelDims::default(),
            batch_size: 32,
            epochs: 50,
            optimizer: AdamWConfig::default(),
            schedule_start_factor: 0.1,
            max_grad_norm: 1.0,
            weights: LossWeights::default(),
            flags: LossFlags::default(),
            head_only: false,
            init_tau: 1.0,
            adapter_init_scale: 2.0,
            tied_adapter_init: true,
            tokenizer: TokenizerConfig::default(),
            save_optimizer: false,
            data: None,
            out: None,
        }
    }
}

const KEYS: &[&str] = &[
    "seed",
    "feature_dim",
    "embed_dim",
    "hidden_dim",
    "batch_size",
    "epochs",
    "lr",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "weight_decay",
    "schedule_start_factor",
    "max_grad_norm",
    "alpha",
    "beta",
    "gamma",
    "epsilon",
    "reg_sign",
    "in_batch_negatives",
    "reg_negatives",
    "head_only",
    "init_tau",
    "adapter_init_scale",
    "tied_adapter_init",
    "lowercase",
    "strip_diacritics",
    "unicode_form",
    "save_optimizer",
    "data",
    "out",
];

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean `{value}` for `{key}`"))),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = HashSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", idx + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(Error::Config(format!("line {}: unknown key `{key}`", idx + 1)));
            }
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key `{key}`", idx + 1)));
            }
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        RunConfig::parse(&std::fs::read_to_string(path)?)
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_value(key, value)?,
            "feature_dim" => self.dims.feature_dim = parse_value(key, value)?,
            "embed_dim" => self.dims.embed_dim = parse_value(key, value)?,
            "hidden_dim" => self.dims.hidden_dim = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "lr" => self.optimizer.lr = parse_value(key, value)?,
            "adam_beta1" => self.optimizer.beta1 = parse_value(key, value)?,
            "adam_beta2" => self.optimizer.beta2 = parse_value(key, value)?,
            "adam_eps" => self.optimizer.eps = parse_value(key, value)?,
            "weight_decay" => self.optimizer.weight_decay = parse_value(key, value)?,
            "schedule_start_factor" => self.schedule_start_factor = parse_value(key, value)?,
            "max_grad_norm" => self.max_grad_norm = parse_value(key, value)?,
            "alpha" => self.weights.alpha = parse_value(key, value)?,
            "beta" => self.weights.beta = parse_value(key, value)?,
            "gamma" => self.weights.gamma = parse_value(key, value)?,
            "epsilon" => self.weights.epsilon = parse_value(key, value)?,
            "reg_sign" => self.weights.reg_sign = parse_value(key, value)?,
            "in_batch_negatives" => self.flags.in_batch_negatives = parse_bool(key, value)?,
            "reg_negatives" => {
                self.flags.reg_negatives = match value {
                    "selected" => RegNegatives::Selected,
                    "pool" => RegNegatives::Pool,
                    _ => return Err(Error::Config(format!("reg_negatives must be `selected` or `pool`, got `{value}`"))),
                }
            }
            "head_only" => self.head_only = parse_bool(key, value)?,
            "init_tau" => self.init_tau = parse_value(key, value)?,
            "adapter_init_scale" => self.adapter_init_scale = parse_value(key, value)?,
            "tied_adapter_init" => self.tied_adapter_init = parse_bool(key, value)?,
            "lowercase" => self.tokenizer.lowercase = parse_bool(key, value)?,
            "strip_diacritics" => self.tokenizer.strip_diacritics = parse_bool(key, value)?,
            "unicode_form" => {
                self.tokenizer.unicode_form = UnicodeForm::parse(value)
                    .ok_or_else(|| Error::Config(format!("unicode_form must be nfc or nfkc, got `{value}`")))?
            }
            "save_optimizer" => self.save_optimizer = parse_bool(key, value)?,
            "data" => self.data = (!value.is_empty()).then(|| PathBuf::from(value)),
            "out" => self.out = (!value.is_empty()).then(|| PathBuf::from(value)),
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let d = self.dims;
        if d.feature_dim == 0 || d.embed_dim < 2 || d.hidden_dim == 0 {
            return bad(format!(
                "dims must satisfy feature_dim >= 1, embed_dim >= 2, hidden_dim >= 1 (got {}, {}, {})",
                d.feature_dim, d.embed_dim, d.hidden_dim
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0 && o.lr.is_finite()) {
            return bad("lr must be positive".into());
        }
        if !((0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2)) {
            return bad("adam betas must lie in [0, 1)".into());
        }
        if !(o.eps > 0.0) || !(o.weight_decay >= 0.0) {
            return bad("adam_eps must be positive and weight_decay non-negative".into());
        }
        if !(self.schedule_start_factor > 0.0 && self.schedule_start_factor <= 1.0) {
            return bad("schedule_start_factor must lie in (0, 1]".into());
        }
        if !(self.max_grad_norm > 0.0) {
            return bad("max_grad_norm must be positive".into());
        }
        if !(self.init_tau > 0.0 && self.init_tau.is_finite()) {
            return bad("init_tau must be positive".into());
        }
        if !(self.adapter_init_scale > 0.0 && self.adapter_init_scale.is_finite()) {
            return bad("adapter_init_scale must be positive".into());
        }
        self.weights.validate()
    }

    pub fn to_text(&self) -> String {
        let b = |x: bool| if x { "true" } else { "false" };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let reg_neg = match self.flags.reg_negatives {
            RegNegatives::Selected => "selected",
            RegNegatives::Pool => "pool",
        };
        let values: Vec<String> = vec![
            self.seed.to_string(),
            self.dims.feature_dim.to_string(),
            self.dims.embed_dim.to_string(),
            self.dims.hidden_dim.to_string(),
            self.batch_size.to_string(),
            self.epochs.to_string(),
            self.optimizer.lr.to_string(),
            self.optimizer.beta1.to_string(),
            self.optimizer.beta2.to_string(),
            self.optimizer.eps.to_string(),
            self.optimizer.weight_decay.to_string(),
            self.schedule_start_factor.to_string(),
            self.max_grad_norm.to_string(),
            self.weights.alpha.to_string(),
            self.weights.beta.to_string(),
            self.weights.gamma.to_string(),
            self.weights.epsilon.to_string(),
            self.weights.reg_sign.to_string(),
            b(self.flags.in_batch_negatives).into(),
            reg_neg.into(),
            b(self.head_only).into(),
            self.init_tau.to_string(),
            self.adapter_init_scale.to_string(),
            b(self.tied_adapter_init).into(),
            b(self.tokenizer.lowercase).into(),
            b(self.tokenizer.strip_diacritics).into(),
            self.tokenizer.unicode_form.name().into(),
            b(self.save_optimizer).into(),
            path(&self.data),
            path(&self.out),
        ];
        KEYS.iter()
            .zip(values)
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}
