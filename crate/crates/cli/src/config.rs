//! Experiment configuration: TOML files, built-in presets and `key=value` overrides.

use std::path::{Path, PathBuf};

use rsig_core::Activation;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Uncond,
    Cond,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Bm,
    Ar,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSpec {
    pub source: Source,
    pub mu: f64,
    pub sigma: f64,
    pub phis: Vec<f64>,
    pub burn_in: usize,
    pub n_paths: usize,
    pub csv_path: Option<PathBuf>,
    pub train_frac: f64,
    pub seed: u64,
    pub split_seed: u64,
}

impl Default for DataSpec {
    fn default() -> Self {
        Self {
            source: Source::Bm,
            mu: 0.0,
            sigma: 1.0,
            phis: vec![],
            burn_in: 500,
            n_paths: 10_000,
            csv_path: None,
            train_frac: 0.8,
            seed: 100,
            split_seed: 101,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RsSpec {
    pub n_dim: usize,
    pub activation: Activation,
    pub weight_std: f64,
    pub seed: u64,
}

impl Default for RsSpec {
    fn default() -> Self {
        Self { n_dim: 80, activation: Activation::Sigmoid, weight_std: 1.0, seed: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenSpec {
    pub reservoir_dim: usize,
    pub n_brownian: usize,
    /// Defaults to 5 (uncond) or 15 (cond).
    pub noise_dim: Option<usize>,
    pub hidden: usize,
    /// Path length `T` in unconditional mode.
    pub horizon: usize,
    pub past: usize,
    pub future: usize,
    pub weight_std: f64,
    pub activation: Activation,
    pub proj_radius: Option<f64>,
    pub rho5_trainable: bool,
    pub seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        Self {
            reservoir_dim: 80,
            n_brownian: 1,
            noise_dim: None,
            hidden: 64,
            horizon: 10,
            past: 5,
            future: 10,
            weight_std: 1.0,
            activation: Activation::Sigmoid,
            proj_radius: None,
            rho5_trainable: false,
            seed: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSpec {
    pub steps: usize,
    /// Defaults to 1500 (uncond) or 1000 (cond).
    pub batch: Option<usize>,
    pub learning_rate: f64,
    pub mc_width: usize,
    pub ridge: f64,
    pub batch_seed: u64,
    pub noise_seed: u64,
    pub checkpoint_every: Option<usize>,
    pub patience: Option<usize>,
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            steps: 2500,
            batch: None,
            learning_rate: 1e-4,
            mc_width: 20,
            ridge: 1e-8,
            batch_seed: 400,
            noise_seed: 401,
            checkpoint_every: None,
            patience: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSpec {
    pub expect_normal: bool,
    pub sw_alpha: f64,
    /// Generated futures per test past in conditional mode.
    pub per_past: usize,
    pub seed: u64,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self { expect_normal: false, sw_alpha: 0.05, per_past: 50, seed: 500 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub mode: Mode,
    #[serde(default)]
    pub data: DataSpec,
    #[serde(default)]
    pub rs: RsSpec,
    #[serde(default)]
    pub generator: GenSpec,
    #[serde(default)]
    pub training: TrainSpec,
    #[serde(default)]
    pub evaluation: EvalSpec,
}

pub const PRESETS: [&str; 12] = [
    "bm0",
    "bm1",
    "ar1_0.1",
    "ar1_0.9",
    "ar1_-0.1",
    "ar1_-0.9",
    "spx",
    "forex",
    "bm0_cond",
    "bm1_cond",
    "spx_cond",
    "forex_cond",
];

impl ExperimentConfig {
    fn base(name: &str, mode: Mode) -> Self {
        let mut cfg = Self {
            name: name.to_string(),
            mode,
            data: DataSpec::default(),
            rs: RsSpec::default(),
            generator: GenSpec::default(),
            training: TrainSpec::default(),
            evaluation: EvalSpec::default(),
        };
        cfg.normalize();
        cfg
    }

    pub fn preset(name: &str) -> Option<Self> {
        let (stem, mode) = match name.strip_suffix("_cond") {
            Some(s) => (s, Mode::Cond),
            None => (name, Mode::Uncond),
        };
        let mut cfg = Self::base(name, mode);
        match stem {
            "bm0" | "bm1" => {
                cfg.data.source = Source::Bm;
                cfg.data.mu = if stem == "bm1" { 1.0 } else { 0.0 };
                cfg.evaluation.expect_normal = true;
            }
            "spx" | "forex" => {
                cfg.data.source = Source::Csv;
                cfg.data.csv_path = Some(PathBuf::from(format!("data/{stem}.csv")));
            }
            _ if mode == Mode::Uncond => {
                let phi: f64 = stem.strip_prefix("ar1_")?.parse().ok()?;
                if !PRESETS.contains(&name) {
                    return None;
                }
                cfg.data.source = Source::Ar;
                cfg.data.phis = vec![phi];
            }
            _ => return None,
        }
        Some(cfg)
    }

    /// Fills mode-dependent defaults.
    pub fn normalize(&mut self) {
        let cond = self.mode == Mode::Cond;
        self.generator.noise_dim.get_or_insert(if cond { 15 } else { 5 });
        self.training.batch.get_or_insert(if cond { 1000 } else { 1500 });
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Usage(m));
        let g = &self.generator;
        if self.rs.n_dim == 0 || g.reservoir_dim == 0 || g.hidden == 0 || g.n_brownian == 0 {
            return bad("dimensions must be positive".into());
        }
        match self.mode {
            Mode::Uncond if g.horizon < 2 => return bad("generator.horizon must be at least 2".into()),
            Mode::Cond if g.past == 0 || g.future < 2 => {
                return bad("conditional mode needs generator.past >= 1 and generator.future >= 2".into())
            }
            _ => {}
        }
        if self.data.source == Source::Ar && self.data.phis.is_empty() {
            return bad("AR data needs data.phis".into());
        }
        if self.data.source == Source::Csv && self.data.csv_path.is_none() {
            return bad("CSV data needs data.csv_path".into());
        }
        if !(self.data.train_frac > 0.0 && self.data.train_frac < 1.0) {
            return bad(format!("data.train_frac must lie in (0, 1), got {}", self.data.train_frac));
        }
        if self.training.steps == 0 || self.training.batch == Some(0) || self.training.mc_width == 0 {
            return bad("training steps, batch and mc_width must be positive".into());
        }
        if self.evaluation.per_past == 0 {
            return bad("evaluation.per_past must be positive".into());
        }
        Ok(())
    }

    /// Length of one sample path in the dataset.
    pub fn window_len(&self) -> usize {
        match self.mode {
            Mode::Uncond => self.generator.horizon,
            Mode::Cond => self.generator.past + self.generator.future,
        }
    }

    pub fn batch(&self) -> usize {
        self.training.batch.unwrap_or(1500)
    }

    pub fn noise_dim(&self) -> usize {
        self.generator.noise_dim.unwrap_or(5)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    /// Reads a config from TOML text, applying `section.key=value` overrides.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut table: toml::Table =
            text.parse().map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg: Self = table
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Usage(format!("invalid config: {e}")))?;
        cfg.normalize();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Runtime(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text, overrides)
    }

    pub fn from_preset(name: &str, overrides: &[String]) -> Result<Self, CliError> {
        let cfg = Self::preset(name).ok_or_else(|| {
            CliError::Usage(format!("unknown preset {name:?}; available: {}", PRESETS.join(", ")))
        })?;
        Self::from_toml(&cfg.to_toml(), overrides)
    }
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override {spec:?} is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    let value = parse_value(raw.trim());
    let (last, path) = parts.split_last().expect("split yields one part");
    let mut node = table;
    for p in path {
        node = node
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| CliError::Usage(format!("override key {key:?} crosses a non-table")))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}
