//! Layered settings: built-in defaults < config file < environment < flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;

use fbpr::model::NegationMode;

/// Every recognised key with its default (empty = unset).
pub const KEYS: &[(&str, &str)] = &[
    ("backend.url", "https://api.infini-gram.io/"),
    ("backend.index", "v4_dolma-v1_7_llama"),
    ("backend.max_inflight", "4"),
    ("backend.requests_per_second", "10"),
    ("backend.local_corpus", ""),
    ("cache.dir", ""),
    ("chat.model", "gpt-4o"),
    ("chat.url", "https://api.openai.com/v1/chat/completions"),
    ("chat.replay", ""),
    ("scoring.delta", "1.0"),
    ("scoring.mode", "ignore"),
];

pub const ENV_PREFIX: &str = "FBPR_";

/// `backend.max_inflight` -> `FBPR_BACKEND_MAX_INFLIGHT`.
pub fn env_name(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.replace('.', "_").to_uppercase())
}

fn known(key: &str) -> Result<()> {
    if KEYS.iter().any(|(k, _)| *k == key) {
        Ok(())
    } else {
        bail!("unknown config key `{key}`")
    }
}

fn flatten_toml(text: &str, path: &Path) -> Result<BTreeMap<String, String>> {
    let table: toml::Table =
        toml::from_str(text).with_context(|| format!("parsing {}", path.display()))?;
    let mut out = BTreeMap::new();
    for (section, v) in table {
        let inner = v
            .as_table()
            .ok_or_else(|| anyhow!("{}: `{section}` must be a table", path.display()))?;
        for (k, v) in inner {
            let key = format!("{section}.{k}");
            known(&key).with_context(|| path.display().to_string())?;
            let s = match v {
                toml::Value::String(s) => s.clone(),
                toml::Value::Integer(i) => i.to_string(),
                toml::Value::Float(f) => f.to_string(),
                toml::Value::Boolean(b) => b.to_string(),
                other => bail!("{}: `{key}` has unsupported value {other}", path.display()),
            };
            out.insert(key, s);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BackendConfig {
    pub url: String,
    pub index: String,
    pub max_inflight: usize,
    pub requests_per_second: Option<f64>,
    pub local_corpus: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CacheConfig {
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatConfig {
    pub model: String,
    pub url: String,
    pub replay: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoringSection {
    pub delta: f64,
    pub mode: NegationMode,
}

/// The resolved configuration, embedded in every output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectiveConfig {
    pub backend: BackendConfig,
    pub cache: CacheConfig,
    pub chat: ChatConfig,
    pub scoring: ScoringSection,
}

impl EffectiveConfig {
    /// Merges the layers. `env` looks up an environment variable by name;
    /// `flags` are `(key, value)` pairs from the command line.
    pub fn resolve(
        file: Option<&Path>,
        env: impl Fn(&str) -> Option<String>,
        flags: &[(String, String)],
    ) -> Result<Self> {
        let mut values: BTreeMap<String, String> = KEYS
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            values.extend(flatten_toml(&text, path)?);
        }
        for (k, _) in KEYS {
            if let Some(v) = env(&env_name(k)) {
                values.insert(k.to_string(), v);
            }
        }
        for (k, v) in flags {
            known(k)?;
            values.insert(k.clone(), v.clone());
        }
        Self::from_values(&values)
    }

    fn from_values(v: &BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| v[k].trim().to_string();
        let opt = |k: &str| Some(get(k)).filter(|s| !s.is_empty());
        let parse = |k: &str| -> Result<f64> {
            get(k)
                .parse::<f64>()
                .map_err(|e| anyhow!("`{k}`: {e}"))
        };
        let rps = match opt("backend.requests_per_second") {
            None => None,
            Some(s) => {
                let r: f64 = s.parse().map_err(|e| anyhow!("`backend.requests_per_second`: {e}"))?;
                (r > 0.0).then_some(r)
            }
        };
        let max_inflight: usize = get("backend.max_inflight")
            .parse()
            .map_err(|e| anyhow!("`backend.max_inflight`: {e}"))?;
        if max_inflight == 0 {
            bail!("`backend.max_inflight` must be at least 1");
        }
        Ok(EffectiveConfig {
            backend: BackendConfig {
                url: get("backend.url"),
                index: get("backend.index"),
                max_inflight,
                requests_per_second: rps,
                local_corpus: opt("backend.local_corpus").map(PathBuf::from),
            },
            cache: CacheConfig {
                dir: opt("cache.dir").map(PathBuf::from),
            },
            chat: ChatConfig {
                model: get("chat.model"),
                url: get("chat.url"),
                replay: opt("chat.replay").map(PathBuf::from),
            },
            scoring: ScoringSection {
                delta: parse("scoring.delta")?,
                mode: get("scoring.mode")
                    .parse()
                    .map_err(|e| anyhow!("`scoring.mode`: {e}"))?,
            },
        })
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
