//! `key = value` run configuration with command-line overrides.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};
use tdam_core::model::{Ablation, ModelConfig};
use tdam_core::trainer::TrainConfig;

use crate::error::{CliError, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Raw pairs from a config file and `--set` flags, later entries winning.
/// `[model]` / `[train]` section headers prefix the keys that follow.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut section = String::new();
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.trim().to_string();
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::Parse(format!("config line {}: expected key = value", lineno + 1)));
        };
        let key = match section.as_str() {
            "" => k.trim().to_string(),
            s => format!("{s}.{}", k.trim()),
        };
        out.push((key, v.trim().trim_matches('"').to_string()));
    }
    Ok(out)
}

pub fn parse_override(s: &str) -> Result<(String, String)> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => Err(CliError::Usage(format!("--set expects key=value, got {s:?}"))),
    }
}

/// Resolved model and training settings.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Whether `model.d_in` was given explicitly (otherwise it follows the bags).
    pub d_in_set: bool,
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| CliError::Usage(format!("invalid value {v:?} for {key}")))
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(CliError::Usage(format!("invalid boolean {v:?} for {key}"))),
    }
}

impl RunConfig {
    pub fn load(config: Option<&Path>, overrides: &[String], seed: u64) -> Result<Self> {
        let mut pairs = Vec::new();
        if let Some(path) = config {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            pairs.extend(parse_pairs(&text)?);
        }
        for o in overrides {
            pairs.push(parse_override(o)?);
        }
        let mut rc = RunConfig::default();
        for (k, v) in &pairs {
            rc.set(k, v)?;
        }
        rc.train.seed = seed;
        Ok(rc)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let (m, t) = (&mut self.model, &mut self.train);
        match key {
            "model.d_in" => {
                m.d_in = num(key, v)?;
                self.d_in_set = true;
            }
            "model.d_model" => m.d_model = num(key, v)?,
            "model.n_heads" => m.n_heads = num(key, v)?,
            "model.n_agents" => m.n_agents = num(key, v)?,
            "model.n_landmarks" => m.n_landmarks = num(key, v)?,
            "model.pinv_iters" => m.pinv_iters = num(key, v)?,
            "model.srmamba_layers" => m.srmamba_layers = num(key, v)?,
            "model.srmamba_rate" => m.srmamba_rate = num(key, v)?,
            "model.ssm_state_dim" => m.ssm_state_dim = num(key, v)?,
            "model.dropout" => m.dropout = num(key, v)?,
            "model.n_bins" => m.n_bins = num(key, v)?,
            "model.ablation" => {
                m.ablation = Ablation::parse(v).ok_or_else(|| CliError::Usage(format!("unknown ablation {v:?}")))?
            }
            "model.pool_includes_class" => m.pool_includes_class = flag(key, v)?,
            "model.agent_bias_side" => m.agent_bias_side = num(key, v)?,
            "train.lr" => t.lr = num(key, v)?,
            "train.beta1" => t.beta1 = num(key, v)?,
            "train.beta2" => t.beta2 = num(key, v)?,
            "train.eps" => t.eps = num(key, v)?,
            "train.max_epochs" => t.max_epochs = num(key, v)?,
            "train.warmup_epochs" => t.warmup_epochs = num(key, v)?,
            "train.patience" => t.patience = num(key, v)?,
            "train.min_epochs_for_stop" => t.min_epochs_for_stop = num(key, v)?,
            "train.folds" => t.folds = num(key, v)?,
            "train.min_improvement" => t.min_improvement = num(key, v)?,
            "train.seed" => return Err(CliError::Usage("set the seed with --seed".into())),
            _ => return Err(CliError::Usage(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Every setting except the seed as sorted `key=value` pairs.
    pub fn canonical(&self) -> BTreeMap<String, String> {
        let mut out = model_pairs(&self.model);
        let t = &self.train;
        for (k, v) in [
            ("lr", t.lr.to_string()),
            ("beta1", t.beta1.to_string()),
            ("beta2", t.beta2.to_string()),
            ("eps", t.eps.to_string()),
            ("max_epochs", t.max_epochs.to_string()),
            ("warmup_epochs", t.warmup_epochs.to_string()),
            ("patience", t.patience.to_string()),
            ("min_epochs_for_stop", t.min_epochs_for_stop.to_string()),
            ("folds", t.folds.to_string()),
            ("min_improvement", t.min_improvement.to_string()),
        ] {
            out.insert(format!("train.{k}"), v);
        }
        out
    }

    /// sha256 over the canonical pairs, hex encoded.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.canonical() {
            h.update(format!("{k}={v}\n").as_bytes());
        }
        hex::encode(h.finalize())
    }
}

pub fn model_pairs(m: &ModelConfig) -> BTreeMap<String, String> {
    [
        ("d_in", m.d_in.to_string()),
        ("d_model", m.d_model.to_string()),
        ("n_heads", m.n_heads.to_string()),
        ("n_agents", m.n_agents.to_string()),
        ("n_landmarks", m.n_landmarks.to_string()),
        ("pinv_iters", m.pinv_iters.to_string()),
        ("srmamba_layers", m.srmamba_layers.to_string()),
        ("srmamba_rate", m.srmamba_rate.to_string()),
        ("ssm_state_dim", m.ssm_state_dim.to_string()),
        ("dropout", m.dropout.to_string()),
        ("n_bins", m.n_bins.to_string()),
        ("ablation", m.ablation.name().to_string()),
        ("pool_includes_class", m.pool_includes_class.to_string()),
        ("agent_bias_side", m.agent_bias_side.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (format!("model.{k}"), v))
    .collect()
}

pub fn model_from_pairs(pairs: &BTreeMap<String, String>) -> Result<ModelConfig> {
    let mut rc = RunConfig::default();
    for (k, v) in pairs {
        rc.set(k, v)?;
    }
    Ok(rc.model)
}

/// Tool version, seed and config hash carried by every output artifact.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
}

impl Provenance {
    pub fn new(seed: u64, config_hash: impl Into<String>) -> Self {
        Self { tool: "tdam".into(), version: VERSION.into(), seed, config_hash: config_hash.into() }
    }

    /// Body of a `#` comment line.
    pub fn comment(&self) -> String {
        format!("{} {} seed={} config={}", self.tool, self.version, self.seed, self.config_hash)
    }

    pub fn json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("provenance serializes")
    }
}
