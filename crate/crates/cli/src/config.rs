//! The key-value config document and dotted-path overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use gcsam_core::landscape::Normalization;
use gcsam_core::two_minima::TwoMinimaSetup;
use gcsam_core::{Error, ExperimentConfig, SweepParam, SweepValue};
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub parameter: SweepParam,
    pub values: Vec<SweepValue>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self { parameter: SweepParam::Rho, values: vec![0.1.into(), 0.2.into(), 0.3.into()] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterSource {
    /// Train with the experiment config and slice around the final prompt.
    Trained,
    /// Slice around the initial prompt.
    Init,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LandscapeSection {
    pub normalization: Normalization,
    pub two_d: bool,
    /// Points along alpha and beta.
    pub resolution: [usize; 2],
    pub alpha_range: [f64; 2],
    pub beta_range: [f64; 2],
    pub direction_seed: u64,
    pub center: CenterSource,
    /// Take the center from this run.json instead of training.
    pub run_path: Option<PathBuf>,
    /// Which run of the batch to use; defaults to the first configured seed.
    pub run_seed: Option<u64>,
}

impl Default for LandscapeSection {
    fn default() -> Self {
        Self {
            normalization: Normalization::PerToken,
            two_d: true,
            resolution: [41, 41],
            alpha_range: [-1.0, 1.0],
            beta_range: [-1.0, 1.0],
            direction_seed: 0,
            center: CenterSource::Trained,
            run_path: None,
            run_seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagSection {
    pub histogram_bins: usize,
    /// Read traces from this run.json instead of training.
    pub run_path: Option<PathBuf>,
}

impl Default for DiagSection {
    fn default() -> Self {
        Self { histogram_bins: 20, run_path: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub setup: TwoMinimaSetup,
    pub rho_list: Vec<f64>,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self { setup: TwoMinimaSetup::default(), rho_list: vec![0.05, 0.1, 0.2, 0.3] }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabConfig {
    pub experiment: ExperimentConfig,
    /// Train on this task.json instead of generating tasks.
    pub task_path: Option<PathBuf>,
    pub sweep: SweepSection,
    pub landscape: LandscapeSection,
    pub diag: DiagSection,
    pub bench2min: BenchSection,
}

/// The replay document written as resolved_config.json.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub schema_version: u32,
    pub command: String,
    pub config: LabConfig,
}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Error::Config(msg.into()).into()
}

/// Reads a TOML config, or the `config` field of a resolved_config.json.
pub fn load(path: Option<&Path>) -> anyhow::Result<LabConfig> {
    let Some(path) = path else {
        return Ok(LabConfig::default());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "json") {
        let doc: ResolvedConfig =
            serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        return Ok(doc.config);
    }
    toml::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn parse_value(raw: &str) -> Value {
    // TOML scalar or array syntax; anything else is a bare string
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").and_then(|v| serde_json::to_value(v).ok()).unwrap_or(Value::String(raw.into())),
        Err(_) => Value::String(raw.to_string()),
    }
}

/// Applies `key.path=value` overrides in order. Paths not under a top-level
/// section are looked up under `experiment`, so `optimizer.rho=0.2` works.
pub fn apply_overrides(cfg: LabConfig, overrides: &[String]) -> anyhow::Result<LabConfig> {
    let mut doc = serde_json::to_value(&cfg)?;
    for ov in overrides {
        let Some((key, raw)) = ov.split_once('=') else {
            bail!(invalid(format!("override '{ov}' is not key=value")));
        };
        let mut parts: Vec<&str> = key.trim().split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            bail!(invalid(format!("bad override key '{key}'")));
        }
        if doc.get(parts[0]).is_none() {
            parts.insert(0, "experiment");
        }
        let mut slot = &mut doc;
        for p in &parts {
            slot = slot
                .as_object_mut()
                .and_then(|o| o.get_mut(*p))
                .ok_or_else(|| invalid(format!("unknown config key '{key}'")))?;
        }
        *slot = parse_value(raw.trim());
    }
    serde_json::from_value(doc).map_err(|e| invalid(format!("override rejected: {e}")))
}
