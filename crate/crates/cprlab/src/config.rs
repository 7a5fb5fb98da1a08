//! Run configuration: strict JSON, unknown keys rejected, defaults filled
//! in and cross-field rules checked by [`RunConfig::validate`].
//!
//! The validated config is what gets echoed to `config.json` in each run
//! directory, so every resolved default is visible there.

use std::fs;
use std::path::{Path, PathBuf};

use cpr_core::cpr::{default_sample_interval, default_warm_start};
use cpr_core::{
    Activation, CprConfig, Hyperparams, InitMode, KappaInit, Loss, LrSchedule, LrScheduleKind,
    MlpSpec, OptimizerKind, RegMeasure, WdSchedule, WdScheduleKind,
};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub data: DataConfig,
    pub optimizer: OptimizerConfig,
    pub cpr: CprSection,
    pub schedule: ScheduleConfig,
    pub wd_schedule: Option<WdScheduleConfig>,
    pub training: TrainingConfig,
    pub logging: LoggingConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Mlp,
    /// Single bias-free linear layer.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Full widths including input and output; when unset, derived from the
    /// data dimensions with `hidden` in between.
    pub layer_widths: Option<Vec<usize>>,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub bias: bool,
    pub init_half_width: f64,
    /// Defaults to cross-entropy for class targets, MSE otherwise.
    pub loss: Option<Loss>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Mlp,
            layer_widths: None,
            hidden: vec![32],
            activation: Activation::Tanh,
            bias: true,
            init_half_width: 0.02,
            loss: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    TeacherStudent,
    TwoGaussians,
    RidgeSynthetic,
    CsvFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub kind: DataKind,
    pub n_train: usize,
    pub n_val: usize,
    pub input_dim: usize,
    pub output_dim: usize,
    /// Label noise standard deviation (regression targets).
    pub noise: f64,
    pub teacher_hidden: usize,
    /// Distance between the two class means, in units of the class std.
    pub separation: f64,
    pub path: Option<String>,
    pub has_header: bool,
    /// Trailing CSV columns used as targets.
    pub target_cols: usize,
    pub val_fraction: f64,
    /// Defaults to the run seed.
    pub seed: Option<u64>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            kind: DataKind::TeacherStudent,
            n_train: 256,
            n_val: 1024,
            input_dim: 10,
            output_dim: 2,
            noise: 0.1,
            teacher_hidden: 8,
            separation: 4.0,
            path: None,
            has_header: false,
            target_cols: 1,
            val_fraction: 0.2,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerChoice {
    #[serde(rename = "sgd")]
    Sgd,
    #[serde(rename = "adam")]
    Adam,
    #[serde(rename = "adamw")]
    AdamW,
    #[serde(rename = "adam_cpr")]
    AdamCpr,
    #[serde(rename = "sgd_cpr")]
    SgdCpr,
}

impl OptimizerChoice {
    pub fn base(self) -> OptimizerKind {
        match self {
            OptimizerChoice::Sgd | OptimizerChoice::SgdCpr => OptimizerKind::Sgd,
            OptimizerChoice::Adam | OptimizerChoice::AdamCpr => OptimizerKind::Adam,
            OptimizerChoice::AdamW => OptimizerKind::AdamW,
        }
    }

    pub fn uses_cpr(self) -> bool {
        matches!(self, OptimizerChoice::AdamCpr | OptimizerChoice::SgdCpr)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerChoice,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub momentum: f64,
    /// Decoupled for SGD and AdamW, coupled L2 for plain Adam.
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let hp = Hyperparams::default();
        Self {
            kind: OptimizerChoice::AdamW,
            lr: hp.lr,
            beta1: hp.beta1,
            beta2: hp.beta2,
            eps: hp.eps,
            momentum: hp.momentum,
            weight_decay: hp.weight_decay,
        }
    }
}

impl OptimizerConfig {
    pub fn hyperparams(&self) -> Hyperparams {
        Hyperparams {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CprSection {
    pub mu: f64,
    pub measure: RegMeasure,
    pub init_mode: InitMode,
    /// κ for Kappa-K, the factor k for Kappa-kI₀, warm-start steps for
    /// Kappa-WS (default twice the LR warmup); unused by Kappa-IP.
    pub init_param: Option<f64>,
    pub adaptive: bool,
    /// Kappa-IP sampling interval; defaults to a tenth of the LR warmup.
    pub sample_interval: Option<u64>,
    /// Kappa-IP moving-average width over samples (1 = off).
    pub ip_smoothing: usize,
}

impl Default for CprSection {
    fn default() -> Self {
        Self {
            mu: 1.0,
            measure: RegMeasure::SquaredL2,
            init_mode: InitMode::KappaWS,
            init_param: None,
            adaptive: false,
            sample_interval: None,
            ip_smoothing: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub kind: LrScheduleKind,
    pub warmup_steps: u64,
    pub decay_factor: f64,
    pub poly_exponent: f64,
    pub warmup_start_factor: Option<f64>,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            kind: LrScheduleKind::CosineWarmup,
            warmup_steps: 100,
            decay_factor: 0.1,
            poly_exponent: 0.9,
            warmup_start_factor: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WdScheduleConfig {
    pub kind: WdScheduleKind,
    pub final_factor: f64,
}

impl Default for WdScheduleConfig {
    fn default() -> Self {
        Self {
            kind: WdScheduleKind::ConstantWd,
            final_factor: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub total_steps: u64,
    /// 0 means full batch.
    pub batch_size: usize,
    pub eval_every: u64,
    /// Global-norm gradient clipping threshold.
    pub grad_clip: Option<f64>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            total_steps: 5000,
            batch_size: 32,
            eval_every: 100,
            grad_clip: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoggingConfig {
    /// Relative paths resolve against the run's output directory.
    pub metrics_path: String,
    pub log_every: u64,
}

impl Default for LoggingConfig {
    fn default() -> Self {
        Self {
            metrics_path: "metrics.jsonl".into(),
            log_every: 10,
        }
    }
}

fn config_err(field: &str, msg: impl std::fmt::Display) -> HarnessError {
    HarnessError::Config(format!("{field}: {msg}"))
}

impl RunConfig {
    /// Parses JSON text, naming the offending field on any error. Returns
    /// the raw (not yet validated) config.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            if path == "." || path.is_empty() {
                HarnessError::Config(inner.to_string())
            } else {
                config_err(&path, inner)
            }
        })
    }

    pub fn from_json_value(value: serde_json::Value) -> Result<Self> {
        Self::from_json_str(&value.to_string())
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn data_seed(&self) -> u64 {
        self.data.seed.unwrap_or(self.seed)
    }

    pub fn uses_cpr(&self) -> bool {
        self.optimizer.kind.uses_cpr()
    }

    /// Applies defaults and checks every cross-field rule. `base_dir`
    /// anchors relative data paths.
    pub fn validate(&mut self, base_dir: Option<&Path>) -> Result<()> {
        let total = self.training.total_steps;
        if total == 0 {
            return Err(config_err("training.total_steps", "must be positive"));
        }
        if self.training.eval_every == 0 {
            return Err(config_err("training.eval_every", "must be positive"));
        }
        if self.logging.log_every == 0 {
            return Err(config_err("logging.log_every", "must be positive"));
        }
        if self.logging.metrics_path.is_empty() {
            return Err(config_err("logging.metrics_path", "must not be empty"));
        }
        if let Some(c) = self.training.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                return Err(config_err("training.grad_clip", "must be positive"));
            }
        }
        self.optimizer
            .hyperparams()
            .validate()
            .map_err(|e| config_err("optimizer", e))?;
        if !(self.optimizer.lr > 0.0) {
            return Err(config_err("optimizer.lr", "must be positive"));
        }
        self.lr_schedule()
            .validate()
            .map_err(|e| config_err("schedule", e))?;

        if self.uses_cpr() {
            if self.optimizer.weight_decay > 0.0 {
                return Err(config_err(
                    "optimizer.weight_decay",
                    "weight decay and CPR cannot be combined in one run",
                ));
            }
            if self.wd_schedule.is_some() {
                return Err(config_err(
                    "wd_schedule",
                    "a weight-decay schedule cannot be combined with CPR",
                ));
            }
            self.resolve_cpr()?;
        }
        if let Some(wd) = self.wd_schedule() {
            wd.validate().map_err(|e| config_err("wd_schedule", e))?;
        }
        self.validate_data(base_dir)?;
        self.mlp_spec()?;
        Ok(())
    }

    fn resolve_cpr(&mut self) -> Result<()> {
        let total = self.training.total_steps;
        let warmup = self.schedule.warmup_steps;
        let cpr = &mut self.cpr;
        match cpr.init_mode {
            InitMode::KappaK | InitMode::KappaKI0 => {
                if cpr.init_param.is_none() {
                    return Err(config_err(
                        "cpr.init_param",
                        "required for kappa_k (bound) and kappa_ki0 (factor)",
                    ));
                }
            }
            InitMode::KappaWS => {
                let s = match cpr.init_param {
                    Some(v) => {
                        if v.fract() != 0.0 || v < 1.0 {
                            return Err(config_err(
                                "cpr.init_param",
                                format!("warm-start steps must be a positive integer, got {v}"),
                            ));
                        }
                        v as u64
                    }
                    None => default_warm_start(warmup),
                };
                if s == 0 {
                    return Err(config_err(
                        "cpr.init_param",
                        "warm start defaults to twice the LR warmup, which is 0; set it explicitly",
                    ));
                }
                if s >= total {
                    return Err(config_err(
                        "cpr.init_param",
                        format!("warm-start step {s} must be below training.total_steps ({total})"),
                    ));
                }
                cpr.init_param = Some(s as f64);
            }
            InitMode::KappaIP => {
                if cpr.init_param.is_some() {
                    return Err(config_err("cpr.init_param", "unused by kappa_ip; leave unset"));
                }
                if cpr.sample_interval == Some(0) {
                    return Err(config_err("cpr.sample_interval", "must be at least 1"));
                }
                cpr.sample_interval = Some(
                    cpr.sample_interval
                        .unwrap_or_else(|| default_sample_interval(warmup)),
                );
            }
        }
        if cpr.init_mode != InitMode::KappaIP && cpr.sample_interval.is_some() {
            return Err(config_err("cpr.sample_interval", "only used by kappa_ip"));
        }
        self.cpr_config()
            .expect("resolved")
            .validate()
            .map_err(|e| config_err("cpr", e))
    }

    fn validate_data(&mut self, base_dir: Option<&Path>) -> Result<()> {
        let d = &mut self.data;
        match d.kind {
            DataKind::CsvFile => {
                let Some(p) = &d.path else {
                    return Err(config_err("data.path", "required for csv_file"));
                };
                let mut path = PathBuf::from(p);
                if path.is_relative() {
                    if let Some(base) = base_dir {
                        path = base.join(path);
                    }
                }
                if !path.is_file() {
                    return Err(config_err(
                        "data.path",
                        format!("{} does not exist", path.display()),
                    ));
                }
                d.path = Some(path.display().to_string());
                if d.target_cols == 0 {
                    return Err(config_err("data.target_cols", "must be at least 1"));
                }
                if !(d.val_fraction > 0.0 && d.val_fraction < 1.0) {
                    return Err(config_err("data.val_fraction", "must lie in (0, 1)"));
                }
            }
            _ => {
                if d.n_train == 0 || d.n_val == 0 {
                    return Err(config_err("data", "n_train and n_val must be positive"));
                }
                if d.input_dim == 0 || d.output_dim == 0 {
                    return Err(config_err("data", "input_dim and output_dim must be positive"));
                }
                if !(d.noise >= 0.0 && d.noise.is_finite()) {
                    return Err(config_err("data.noise", "must be non-negative"));
                }
                if d.kind == DataKind::TwoGaussians && d.output_dim != 2 {
                    return Err(config_err("data.output_dim", "two_gaussians has 2 classes"));
                }
                if d.kind == DataKind::TeacherStudent && d.teacher_hidden == 0 {
                    return Err(config_err("data.teacher_hidden", "must be positive"));
                }
            }
        }
        Ok(())
    }

    pub fn lr_schedule(&self) -> LrSchedule {
        LrSchedule {
            kind: self.schedule.kind,
            base_lr: self.optimizer.lr,
            warmup_steps: self.schedule.warmup_steps,
            total_steps: self.training.total_steps,
            decay_factor: self.schedule.decay_factor,
            poly_exponent: self.schedule.poly_exponent,
            warmup_start_factor: self.schedule.warmup_start_factor,
        }
    }

    pub fn wd_schedule(&self) -> Option<WdSchedule> {
        self.wd_schedule.as_ref().map(|w| WdSchedule {
            kind: w.kind,
            base_gamma: self.optimizer.weight_decay,
            final_factor: w.final_factor,
            total_steps: self.training.total_steps,
        })
    }

    /// CPR settings after defaults are resolved; `None` when CPR is off.
    pub fn cpr_config(&self) -> Option<CprConfig> {
        if !self.uses_cpr() {
            return None;
        }
        let c = &self.cpr;
        let init = match c.init_mode {
            InitMode::KappaK => KappaInit::Uniform {
                kappa: c.init_param?,
            },
            InitMode::KappaKI0 => KappaInit::Factor { k: c.init_param? },
            InitMode::KappaWS => KappaInit::WarmStart {
                steps: c.init_param? as u64,
            },
            InitMode::KappaIP => KappaInit::Inflection {
                sample_interval: c.sample_interval?,
                smoothing: c.ip_smoothing,
            },
        };
        Some(CprConfig {
            mu: c.mu,
            measure: c.measure,
            init,
            adaptive: c.adaptive,
        })
    }

    /// Input and output widths implied by the data section.
    fn data_dims(&self) -> Option<(usize, usize)> {
        match self.data.kind {
            DataKind::CsvFile => None,
            _ => Some((self.data.input_dim, self.data.output_dim)),
        }
    }

    pub fn mlp_spec(&self) -> Result<MlpSpec> {
        self.mlp_spec_for(self.data_dims())
    }

    /// Builds the network spec, taking data dimensions from `dims` when the
    /// config does not pin them (CSV data is only sized once loaded).
    pub fn mlp_spec_for(&self, dims: Option<(usize, usize)>) -> Result<MlpSpec> {
        let m = &self.model;
        let loss = m.loss.unwrap_or(match self.data.kind {
            DataKind::TwoGaussians => Loss::CrossEntropy,
            _ => Loss::Mse,
        });
        let widths = match (&m.layer_widths, m.kind) {
            (Some(w), _) => w.clone(),
            (None, ModelKind::Linear) => match dims {
                Some((i, o)) => vec![i, o],
                None => return Ok(placeholder_spec(m, loss)),
            },
            (None, ModelKind::Mlp) => match dims {
                Some((i, o)) => {
                    let mut w = vec![i];
                    w.extend(&m.hidden);
                    w.push(o);
                    w
                }
                None => return Ok(placeholder_spec(m, loss)),
            },
        };
        let (bias, half_width) = match m.kind {
            ModelKind::Mlp => (m.bias, m.init_half_width),
            ModelKind::Linear => (false, m.init_half_width),
        };
        if m.kind == ModelKind::Linear && widths.len() != 2 {
            return Err(config_err("model.layer_widths", "a linear model has exactly two widths"));
        }
        if let (Some((i, o)), Some(_)) = (dims, &m.layer_widths) {
            if widths.first() != Some(&i) || widths.last() != Some(&o) {
                return Err(config_err(
                    "model.layer_widths",
                    format!("{widths:?} does not match data dimensions {i} -> {o}"),
                ));
            }
        }
        let spec = MlpSpec {
            layer_widths: widths,
            activation: m.activation,
            bias,
            init_half_width: half_width,
            loss,
        };
        spec.validate().map_err(|e| config_err("model", e))?;
        Ok(spec)
    }
}

fn placeholder_spec(m: &ModelConfig, loss: Loss) -> MlpSpec {
    MlpSpec {
        layer_widths: vec![1, 1],
        activation: m.activation,
        bias: m.bias,
        init_half_width: m.init_half_width,
        loss,
    }
}

/// Reads, parses and validates a config file.
pub fn config_load(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let mut cfg = RunConfig::from_json_str(&text)?;
    cfg.validate(path.parent())?;
    Ok(cfg)
}
