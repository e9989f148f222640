//! Run configuration: one JSON document with optional `system`, `train` and
//! `hyper` sections. Missing fields take defaults; unknown fields are errors.

use std::path::Path;

use cfisac_core::gnn::GnnHyperparams;
use cfisac_core::training::TrainConfig;
use cfisac_core::SystemConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::CliError;

pub const SEED_ENV: &str = "CFISAC_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub system: SystemConfig,
    pub train: TrainConfig,
    pub hyper: GnnHyperparams,
}

impl Default for RunConfig {
    fn default() -> Self {
        let system = SystemConfig::default();
        RunConfig {
            system,
            train: TrainConfig::desk_scale(),
            hyper: GnnHyperparams {
                tx_antennas: system.tx_antennas,
                ..GnnHyperparams::default()
            },
        }
    }
}

/// Overlays `patch` onto the serialized defaults, rejecting keys the
/// defaults do not have.
fn overlay<T: Serialize + DeserializeOwned>(
    section: &str,
    defaults: &T,
    patch: Option<&Value>,
) -> Result<T, CliError> {
    let mut base = serde_json::to_value(defaults).expect("configuration serializes");
    if let Some(patch) = patch {
        let patch = patch
            .as_object()
            .ok_or_else(|| CliError::Config(format!("`{section}` must be a JSON object")))?;
        let target = base
            .as_object_mut()
            .expect("struct serializes to an object");
        merge(section, target, patch)?;
    }
    serde_json::from_value(base).map_err(|e| CliError::Config(format!("`{section}`: {e}")))
}

fn merge(
    path: &str,
    target: &mut Map<String, Value>,
    patch: &Map<String, Value>,
) -> Result<(), CliError> {
    for (key, value) in patch {
        let field = format!("{path}.{key}");
        match target.get_mut(key) {
            None => return Err(CliError::Config(format!("unknown field `{field}`"))),
            Some(Value::Object(inner)) if value.is_object() => {
                merge(&field, inner, value.as_object().expect("checked"))?
            }
            Some(slot) => *slot = value.clone(),
        }
    }
    Ok(())
}

impl RunConfig {
    /// Parses a configuration document. The per-AP power defaults to `1/M`
    /// and the network width `tx_antennas` to the scenario's `N_t`.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let doc: Value = serde_json::from_str(text)
            .map_err(|e| CliError::Config(format!("invalid JSON: {e}")))?;
        let doc = doc
            .as_object()
            .ok_or_else(|| CliError::Config("configuration must be a JSON object".into()))?;
        if let Some(key) = doc
            .keys()
            .find(|k| !matches!(k.as_str(), "system" | "train" | "hyper"))
        {
            return Err(CliError::Config(format!("unknown field `{key}`")));
        }
        let defaults = RunConfig::default();
        let sys_patch = doc.get("system");
        let mut system = overlay("system", &defaults.system, sys_patch)?;
        let has = |v: Option<&Value>, k: &str| v.and_then(|v| v.get(k)).is_some();
        if !has(sys_patch, "P") && system.ap_count > 0 {
            system.ap_power = 1.0 / system.ap_count as f64;
        }
        let train = overlay("train", &defaults.train, doc.get("train"))?;
        let hyper_patch = doc.get("hyper");
        let mut hyper = overlay("hyper", &defaults.hyper, hyper_patch)?;
        if !has(hyper_patch, "tx_antennas") {
            hyper.tx_antennas = system.tx_antennas;
        }
        Ok(RunConfig {
            system,
            train,
            hyper,
        })
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                RunConfig::from_json(&text)
            }
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.system.validate()?;
        self.train.validate()?;
        self.hyper.validate()?;
        Ok(())
    }
}

/// Seed precedence: explicit flag, then the environment, then `fallback`.
pub fn resolve_seed(flag: Option<u64>, fallback: u64) -> Result<u64, CliError> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("{SEED_ENV}=`{v}` is not an unsigned integer"))),
        Err(_) => Ok(fallback),
    }
}

pub fn parse_list<T: std::str::FromStr>(flag: &str, text: &str) -> Result<Vec<T>, CliError> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| CliError::Config(format!("--{flag}: cannot parse `{s}`")))
        })
        .collect()
}
