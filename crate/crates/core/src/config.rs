//! Experiment configuration: a TOML file with `data`, `bank`, `model`,
//! `train` and `eval` sections. Every key has a default and unknown keys are
//! rejected. `section.key=value` overrides are applied to the parsed file
//! before it is interpreted.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bank::BankParams;
use crate::error::{Error, Result};
use crate::kmedoids::MedoidInit;
use crate::metrics::EvalOptions;
use crate::neural::{AdamConfig, AttentionBlockConfig, LossChoice, ModelConfig, Pooling};
use crate::smoothing::{ControlRule, SmoothingDomain};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    #[default]
    Synthetic,
    File,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// Trajectory text file (`frame ped x y`), for `source = "file"`.
    pub path: String,
    /// Optional held-out file; when empty the data is split by `test_fraction`.
    pub test_path: String,
    /// Optional scene raster JSON.
    pub scene_path: String,
    pub t_pas: usize,
    pub t_fut: usize,
    pub stride: usize,
    pub n_groups: usize,
    pub per_group: usize,
    pub noise_sigma: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            path: String::new(),
            test_path: String::new(),
            scene_path: String::new(),
            t_pas: 8,
            t_fut: 12,
            stride: 1,
            n_groups: 3,
            per_group: 200,
            noise_sigma: 0.05,
            test_fraction: 1.0 / 6.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BankConfig {
    pub k: usize,
    pub max_iter: usize,
    pub init: MedoidInit,
    pub seed: u64,
    /// Update threshold. Unset: `theta_fraction` × the converged training
    /// error of a pilot run with updates disabled.
    pub theta: Option<f64>,
    pub theta_fraction: f64,
    pub beta: usize,
    pub k_recluster: Option<usize>,
    pub translate_to_origin: bool,
}

impl Default for BankConfig {
    fn default() -> Self {
        let p = BankParams::default();
        Self {
            k: p.k,
            max_iter: p.max_iter,
            init: p.init,
            seed: p.seed,
            theta: None,
            theta_fraction: 0.75,
            beta: p.beta,
            k_recluster: None,
            translate_to_origin: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers_traj: usize,
    pub n_layers_cross: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub positional_encoding: bool,
    pub pooling: Pooling,
    pub seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            d_model: m.attention.d_model,
            n_heads: m.attention.n_heads,
            n_layers_traj: m.attention.n_layers_traj,
            n_layers_cross: m.attention.n_layers_cross,
            d_ff: m.d_ff,
            dropout: m.attention.dropout,
            positional_encoding: m.positional_encoding,
            pooling: m.pooling,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    #[default]
    Shenet,
    RawRetrieval,
    ConstantVelocity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub predictor: PredictorKind,
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub loss: LossChoice,
    /// Control rule for the smoothed target when `loss = "cs"`.
    pub cs_control: ControlRule,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let a = AdamConfig::default();
        Self {
            predictor: PredictorKind::Shenet,
            epochs: 20,
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            loss: LossChoice::Mse,
            cs_control: ControlRule::MidTrajectoryPoint,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Number of retrieved candidates scored best-of-K.
    pub top_k: usize,
    pub control: ControlRule,
    pub domain: SmoothingDomain,
    pub smooth_predictions: bool,
    /// Output directory, relative to the config file.
    pub output_dir: String,
    /// Trajectories drawn in the report plot.
    pub report_samples: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            top_k: 1,
            control: ControlRule::MidTrajectoryPoint,
            domain: SmoothingDomain::Future,
            smooth_predictions: false,
            output_dir: "out".into(),
            report_samples: 3,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub bank: BankConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    /// Directory relative paths are resolved against; not part of the file.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Keys whose default is "unset", with a description of the fallback.
const OPTIONAL_KEYS: &[(&str, &str)] = &[
    ("bank.theta", "unset (theta_fraction × converged training error)"),
    ("bank.k_recluster", "unset (max(1, round(beta / 4)))"),
];

/// Every configurable key with its default value, in file order.
pub fn known_keys() -> Vec<(String, String)> {
    let value = toml::Value::try_from(ExperimentConfig::default()).expect("default config serializes");
    let mut out = Vec::new();
    if let toml::Value::Table(sections) = value {
        for (section, body) in sections {
            if let toml::Value::Table(keys) = body {
                for (key, v) in keys {
                    out.push((format!("{section}.{key}"), v.to_string()));
                }
            }
        }
    }
    for (k, d) in OPTIONAL_KEYS {
        out.push((k.to_string(), d.to_string()));
    }
    out
}

/// Multi-line listing of all keys and defaults for `--help`.
pub fn keys_help() -> String {
    let keys = known_keys();
    let w = keys.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    keys.iter().map(|(k, d)| format!("  {k:<w$}  {d}\n")).collect()
}

fn parse_override_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Apply one `section.key=value` override to a parsed config table.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override '{spec}' is not of the form section.key=value")))?;
    let key = key.trim();
    if !known_keys().iter().any(|(k, _)| k == key) {
        return Err(Error::config(format!("unknown config key '{key}'")));
    }
    let (section, field) = key.split_once('.').expect("known keys are dotted");
    let entry = table.entry(section).or_insert_with(|| toml::Value::Table(toml::Table::new()));
    let toml::Value::Table(sec) = entry else {
        return Err(Error::config(format!("config section '{section}' is not a table")));
    };
    sec.insert(field.to_string(), parse_override_value(raw.trim()));
    Ok(())
}

impl ExperimentConfig {
    /// Parse TOML text, apply overrides and validate.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Self = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text, overrides)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Resolve a config path against the config file's directory.
    pub fn resolve(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.eval.output_dir)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.t_pas < 2 || d.t_fut < 2 {
            return Err(Error::config("data.t_pas and data.t_fut must be at least 2"));
        }
        if d.stride == 0 {
            return Err(Error::config("data.stride must be at least 1"));
        }
        if !(0.0..1.0).contains(&d.test_fraction) {
            return Err(Error::config(format!("data.test_fraction = {} must be in [0, 1)", d.test_fraction)));
        }
        if !(d.noise_sigma >= 0.0 && d.noise_sigma.is_finite()) {
            return Err(Error::config("data.noise_sigma must be finite and non-negative"));
        }
        if d.source == DataSource::File && d.path.is_empty() {
            return Err(Error::config("data.path is required when data.source = \"file\""));
        }
        let b = &self.bank;
        if b.k == 0 {
            return Err(Error::config("bank.k must be at least 1"));
        }
        if let Some(t) = b.theta {
            if t.is_nan() || t < 0.0 {
                return Err(Error::config(format!("bank.theta = {t} must be non-negative")));
            }
        }
        if !(b.theta_fraction > 0.0 && b.theta_fraction.is_finite()) {
            return Err(Error::config("bank.theta_fraction must be positive"));
        }
        if b.beta == 0 || b.k_recluster == Some(0) {
            return Err(Error::config("bank.beta and bank.k_recluster must be at least 1"));
        }
        let t = &self.train;
        if !(t.lr > 0.0) || !(0.0..1.0).contains(&t.beta1) || !(0.0..1.0).contains(&t.beta2) || !(t.eps > 0.0) {
            return Err(Error::config("train.lr, train.beta1, train.beta2, train.eps out of range"));
        }
        if self.eval.top_k == 0 {
            return Err(Error::config("eval.top_k must be at least 1"));
        }
        // shape-independent model checks
        self.model_config(1, 1, 1, 1).validate()
    }

    pub fn model_config(&self, n_cls: usize, grid_h: usize, grid_w: usize, t_fut: usize) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            attention: AttentionBlockConfig {
                d_model: m.d_model,
                n_heads: m.n_heads,
                n_layers_traj: m.n_layers_traj,
                n_layers_cross: m.n_layers_cross,
                dropout: m.dropout,
            },
            d_ff: m.d_ff,
            positional_encoding: m.positional_encoding,
            pooling: m.pooling,
            t_pas: self.data.t_pas,
            t_fut,
            n_cls,
            grid_h,
            grid_w,
        }
    }

    /// Bank parameters with the given update threshold.
    pub fn bank_params(&self, theta: f64) -> BankParams {
        let b = &self.bank;
        BankParams {
            k: b.k,
            max_iter: b.max_iter,
            init: b.init,
            seed: b.seed,
            theta,
            beta: b.beta,
            k_recluster: b.k_recluster,
            translate_to_origin: b.translate_to_origin,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        let t = &self.train;
        AdamConfig { lr: t.lr, beta1: t.beta1, beta2: t.beta2, eps: t.eps }
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions { control: self.eval.control, domain: self.eval.domain, smooth_predictions: self.eval.smooth_predictions }
    }
}
