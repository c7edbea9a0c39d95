//! Flat key/value pipeline configuration with dotted section prefixes.
//!
//! Values come from the config file, overridden by `MFT_*` environment
//! variables (`linker.api_key` <- `MFT_LINKER_API_KEY`). Unknown keys are
//! rejected so typos fail fast.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};

use mft_core::eval::{EvalConfig, ReportTarget};
use mft_core::features::{CpmidConfig, SoftEncoderConfig};
use mft_core::linking::LinkerConfig;
use mft_core::model::{FeatureFlags, TrainConfig};

const KNOWN_KEYS: [&str; 33] = [
    "corpus.path",
    "corpus.topic",
    "paths.output_dir",
    "paths.embeddings",
    "paths.mfd",
    "linker.fixtures",
    "linker.endpoint",
    "linker.api_key",
    "linker.cache_dir",
    "linker.rho_threshold",
    "linker.type_blacklist",
    "kb.snapshot",
    "kb.endpoint",
    "kb.cache_dir",
    "kb.whitelist",
    "cpmid.delta",
    "cpmid.k",
    "cpmid.min_df",
    "encoder.theta",
    "train.hidden_dim",
    "train.head_dim",
    "train.learning_rate",
    "train.epochs",
    "train.dropout_embed",
    "train.dropout_lstm",
    "train.dropout_fc",
    "train.l2_lambda",
    "train.seed",
    "train.features",
    "eval.folds",
    "eval.seed",
    "eval.feature_sets",
    "eval.targets",
];

const ENV_PREFIX: &str = "MFT_";

#[derive(Clone, Debug)]
pub struct PipelineConfig {
    pub corpus_path: PathBuf,
    pub corpus_topic: String,
    pub output_dir: PathBuf,
    pub embeddings: Option<PathBuf>,
    pub mfd: Option<PathBuf>,
    pub linker_fixtures: Option<PathBuf>,
    pub linker_endpoint: Option<String>,
    pub linker_api_key: Option<String>,
    pub linker_cache_dir: Option<PathBuf>,
    pub linker: LinkerConfig,
    pub kb_snapshot: Option<PathBuf>,
    pub kb_endpoint: Option<String>,
    pub kb_cache_dir: Option<PathBuf>,
    pub kb_whitelist: Option<Vec<String>>,
    pub cpmid: CpmidConfig,
    pub encoder: SoftEncoderConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub feature_sets: Vec<FeatureFlags>,
    pub targets: Vec<ReportTarget>,
}

fn parse_feature_flags(label: &str) -> Result<FeatureFlags> {
    match label {
        "E" => Ok(FeatureFlags {
            bk: false,
            mfd: false,
        }),
        "E+BK" => Ok(FeatureFlags {
            bk: true,
            mfd: false,
        }),
        "E+MFD" => Ok(FeatureFlags {
            bk: false,
            mfd: true,
        }),
        "E+BK+MFD" => Ok(FeatureFlags {
            bk: true,
            mfd: true,
        }),
        other => bail!("unknown feature set {other:?} (expected E, E+BK, E+MFD, or E+BK+MFD)"),
    }
}

fn parse_target(slug: &str) -> Result<ReportTarget> {
    ReportTarget::ALL
        .iter()
        .copied()
        .find(|t| t.slug() == slug)
        .ok_or_else(|| anyhow!("unknown evaluation target {slug:?}"))
}

struct RawConfig {
    values: BTreeMap<String, String>,
    base_dir: PathBuf,
}

impl RawConfig {
    fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| anyhow!("missing required config key {key:?}"))
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(|v| {
            let p = PathBuf::from(v);
            if p.is_absolute() {
                p
            } else {
                self.base_dir.join(p)
            }
        })
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            Some(v) => v
                .parse()
                .map_err(|e| anyhow!("config key {key}: bad value {v:?}: {e}")),
            None => Ok(default),
        }
    }
}

/// Parse `key = value` lines, apply environment overrides, reject unknown
/// keys. Relative paths resolve against the config file's directory.
pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config file {}", path.display()))?;
    let mut values = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("{}:{}: expected 'key = value'", path.display(), idx + 1))?;
        let key = key.trim().to_string();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            bail!("{}:{}: unknown config key {key:?}", path.display(), idx + 1);
        }
        values.insert(key, value.trim().to_string());
    }
    for key in KNOWN_KEYS {
        let env_key = format!("{ENV_PREFIX}{}", key.to_uppercase().replace('.', "_"));
        if let Ok(v) = std::env::var(&env_key) {
            values.insert(key.to_string(), v);
        }
    }
    let base_dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let raw = RawConfig { values, base_dir };

    let mut linker = LinkerConfig {
        rho_threshold: raw.parse("linker.rho_threshold", 0.1)?,
        ..LinkerConfig::default()
    };
    if let Some(blacklist) = raw.get("linker.type_blacklist") {
        linker.type_blacklist = blacklist
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
    }

    let cpmid = CpmidConfig {
        delta: raw.parse("cpmid.delta", 0.9)?,
        k: raw.parse("cpmid.k", 100)?,
        min_df: raw.parse("cpmid.min_df", 2)?,
    };
    let encoder = SoftEncoderConfig {
        theta: raw.parse("encoder.theta", 0.6)?,
    };
    let defaults = TrainConfig::default();
    let train = TrainConfig {
        hidden_dim: raw.parse("train.hidden_dim", defaults.hidden_dim)?,
        head_dim: raw.parse("train.head_dim", defaults.head_dim)?,
        learning_rate: raw.parse("train.learning_rate", defaults.learning_rate)?,
        epochs: raw.parse("train.epochs", defaults.epochs)?,
        dropout_embed: raw.parse("train.dropout_embed", defaults.dropout_embed)?,
        dropout_lstm: raw.parse("train.dropout_lstm", defaults.dropout_lstm)?,
        dropout_fc: raw.parse("train.dropout_fc", defaults.dropout_fc)?,
        l2_lambda: raw.parse("train.l2_lambda", defaults.l2_lambda)?,
        seed: raw.parse("train.seed", defaults.seed)?,
        features: parse_feature_flags(raw.get("train.features").unwrap_or("E+BK+MFD"))?,
    };
    let eval = EvalConfig {
        folds: raw.parse("eval.folds", 10)?,
        master_seed: raw.parse("eval.seed", 42)?,
    };
    let feature_sets = raw
        .get("eval.feature_sets")
        .unwrap_or("E,E+BK,E+BK+MFD")
        .split(',')
        .map(|s| parse_feature_flags(s.trim()))
        .collect::<Result<Vec<_>>>()?;
    let targets = match raw.get("eval.targets") {
        None => ReportTarget::ALL.to_vec(),
        Some(list) => list
            .split(',')
            .map(|s| parse_target(s.trim()))
            .collect::<Result<Vec<_>>>()?,
    };

    let config = PipelineConfig {
        corpus_path: raw
            .path("corpus.path")
            .ok_or_else(|| anyhow!("missing required config key \"corpus.path\""))?,
        corpus_topic: raw.require("corpus.topic")?.to_string(),
        output_dir: raw
            .path("paths.output_dir")
            .ok_or_else(|| anyhow!("missing required config key \"paths.output_dir\""))?,
        embeddings: raw.path("paths.embeddings"),
        mfd: raw.path("paths.mfd"),
        linker_fixtures: raw.path("linker.fixtures"),
        linker_endpoint: raw.get("linker.endpoint").map(str::to_string),
        linker_api_key: raw.get("linker.api_key").map(str::to_string),
        linker_cache_dir: raw.path("linker.cache_dir"),
        linker,
        kb_snapshot: raw.path("kb.snapshot"),
        kb_endpoint: raw.get("kb.endpoint").map(str::to_string),
        kb_cache_dir: raw.path("kb.cache_dir"),
        kb_whitelist: raw.get("kb.whitelist").map(|v| {
            v.split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect()
        }),
        cpmid,
        encoder,
        train,
        eval,
        feature_sets,
        targets,
    };
    config.cpmid.validate().map_err(|e| anyhow!("{e}"))?;
    config.train.validate().map_err(|e| anyhow!("{e}"))?;
    config.linker.validate().map_err(|e| anyhow!("{e}"))?;
    Ok(config)
}
