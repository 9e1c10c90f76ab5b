//! Run configuration: one JSON document, optionally patched by
//! `--dotted.path=value` overrides before it is deserialized.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use xfpt_core::diagnostics::ClassifyOptions;
use xfpt_core::evt::MeanMode;
use xfpt_core::mc::SamplingMode;
use xfpt_core::ModelConfig;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub statistics: StatisticsConfig,
    #[serde(default)]
    pub mc: McBlock,
    #[serde(default)]
    pub compare: CompareConfig,
    #[serde(default)]
    pub diagnose: DiagnoseConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AsymptoticChoice {
    /// Renormalize by the probability that some walker arrives.
    #[default]
    Conditional,
    /// Sum the first `truncation + 1` terms (default `⌈ln N⌉`).
    Truncated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatisticsConfig {
    pub lambda: Option<f64>,
    pub n: Option<u64>,
    pub k_max: usize,
    pub moments: Vec<u32>,
    pub mean_mode: MeanMode,
    pub asymptotic: AsymptoticChoice,
    pub truncation: Option<usize>,
    /// Exact-distribution horizon `K`; chosen automatically when absent.
    pub horizon: Option<usize>,
}

impl Default for StatisticsConfig {
    fn default() -> Self {
        Self {
            lambda: None,
            n: None,
            k_max: 20,
            moments: vec![1, 2],
            mean_mode: MeanMode::Conditional,
            asymptotic: AsymptoticChoice::Conditional,
            truncation: None,
            horizon: None,
        }
    }
}

/// How the walker count was specified.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WalkerSpec {
    Lambda(f64),
    Count(u64),
}

impl StatisticsConfig {
    pub fn walker_spec(&self) -> CliResult<WalkerSpec> {
        match (self.lambda, self.n) {
            (Some(l), None) => Ok(WalkerSpec::Lambda(l)),
            (None, Some(n)) => Ok(WalkerSpec::Count(n)),
            (Some(_), Some(_)) => Err(CliError::Config(
                "statistics: give exactly one of lambda and n, not both".into(),
            )),
            (None, None) => Err(CliError::Config(
                "statistics: one of lambda and n is required".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McBlock {
    pub trials: u64,
    pub seed: u64,
    pub t_max: Option<u64>,
    pub mode: SamplingMode,
    /// Simulate this model instead of the theory model (for mismatch checks).
    pub model: Option<ModelConfig>,
}

impl Default for McBlock {
    fn default() -> Self {
        Self {
            trials: 10_000,
            seed: 0,
            t_max: None,
            mode: SamplingMode::DirectWalk,
            model: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    /// Largest tolerated `|z|` of the MC tail against the exact tail.
    pub z_max: f64,
    /// Largest tolerated `|mean_mc - mean_exact|` in MC standard errors.
    pub mean_sigma: f64,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            z_max: 3.0,
            mean_sigma: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseConfig {
    pub d_list: Vec<usize>,
    /// Defaults to `statistics.k_max`.
    pub k_max: Option<usize>,
    pub invariance_tol: f64,
    pub slope_sigma: f64,
    pub fit_k: usize,
    /// Single-walker trials for the drift estimate at the largest distance.
    pub drift_trials: Option<u64>,
    pub drift_resamples: usize,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        let defaults = ClassifyOptions::default();
        Self {
            d_list: Vec::new(),
            k_max: None,
            invariance_tol: defaults.invariance_tol,
            slope_sigma: defaults.slope_sigma,
            fit_k: defaults.fit_k,
            drift_trials: None,
            drift_resamples: 1000,
        }
    }
}

impl DiagnoseConfig {
    pub fn classify_options(&self) -> ClassifyOptions {
        ClassifyOptions {
            invariance_tol: self.invariance_tol,
            slope_sigma: self.slope_sigma,
            fit_k: self.fit_k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub lambda: Vec<f64>,
    pub n: Vec<u64>,
    /// Include Monte Carlo columns.
    pub mc: bool,
    pub variance_resamples: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            lambda: Vec::new(),
            n: Vec::new(),
            mc: true,
            variance_resamples: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Not recorded in file headers, so outputs do not depend on where
    /// they are written.
    #[serde(skip_serializing)]
    pub dir: Option<PathBuf>,
    pub formats: Vec<Format>,
    /// Significant digits of floating-point fields.
    pub precision: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: None,
            formats: vec![Format::Csv, Format::Json],
            precision: 17,
        }
    }
}

impl OutputConfig {
    pub fn wants(&self, format: Format) -> bool {
        self.formats.contains(&format)
    }
}

/// Sets `path` (dot separated) in `doc`, creating objects on the way.
/// The value is parsed as JSON when possible and kept as a string otherwise.
pub fn apply_override(doc: &mut Value, path: &str, raw: &str) -> CliResult<()> {
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Usage(format!("malformed override path '{path}'")));
    }
    let mut node = doc;
    for key in &keys[..keys.len() - 1] {
        let object = node.as_object_mut().ok_or_else(|| {
            CliError::Usage(format!(
                "override '{path}': '{key}' is not inside an object"
            ))
        })?;
        node = object
            .entry(key.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    let object = node.as_object_mut().ok_or_else(|| {
        CliError::Usage(format!("override '{path}' does not target an object field"))
    })?;
    object.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

/// Reads the config file and applies overrides in order.
pub fn load(path: &Path, overrides: &[(String, String)]) -> CliResult<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut doc: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if !doc.is_object() {
        return Err(CliError::Config("config must be a JSON object".into()));
    }
    for (key, value) in overrides {
        apply_override(&mut doc, key, value)?;
    }
    serde_json::from_value(doc).map_err(|e| CliError::Config(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn overrides_patch_nested_fields() {
        let mut doc = json!({"model": {"model": "bethe", "z": 3, "d": 4}});
        apply_override(&mut doc, "mc.seed", "7").unwrap();
        apply_override(&mut doc, "model.z", "4").unwrap();
        apply_override(&mut doc, "mc.mode", "inverse-cdf").unwrap();
        assert_eq!(doc["mc"]["seed"], json!(7));
        assert_eq!(doc["model"]["z"], json!(4));
        assert_eq!(doc["mc"]["mode"], json!("inverse-cdf"));
        assert!(apply_override(&mut doc, "model.z.x", "1").is_err());
        assert!(apply_override(&mut doc, "a..b", "1").is_err());
    }

    #[test]
    fn defaults_and_walker_spec() {
        let cfg: RunConfig = serde_json::from_value(json!({
            "model": {"model": "leaky-loop", "s": 0.5, "mu": 0.9, "d": 50},
            "statistics": {"lambda": 1.0}
        }))
        .unwrap();
        assert_eq!(cfg.statistics.k_max, 20);
        assert_eq!(cfg.mc.trials, 10_000);
        assert_eq!(cfg.output.precision, 17);
        assert_eq!(
            cfg.statistics.walker_spec().unwrap(),
            WalkerSpec::Lambda(1.0)
        );

        let mut both = cfg.statistics.clone();
        both.n = Some(5);
        assert!(both.walker_spec().is_err());
        both.lambda = None;
        both.n = None;
        assert!(both.walker_spec().is_err());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let bad = json!({
            "model": {"model": "bethe", "z": 3, "d": 4},
            "statistics": {"lamda": 1.0}
        });
        assert!(serde_json::from_value::<RunConfig>(bad).is_err());
        let two_models = json!({
            "model": {"model": "comet", "head": {"kind": "clique", "m": 4, "start": 0, "exit": 3},
                      "heads": [], "tail_hops": 3, "mu": 0.9}
        });
        assert!(serde_json::from_value::<RunConfig>(two_models).is_err());
    }

    #[test]
    fn diagnose_thresholds_are_configurable() {
        let cfg: DiagnoseConfig =
            serde_json::from_value(json!({"d_list": [2, 4, 8], "slope_sigma": 3.0})).unwrap();
        assert_eq!(cfg.classify_options().slope_sigma, 3.0);
        assert_eq!(cfg.classify_options().invariance_tol, 1e-9);
        assert!(serde_json::from_value::<DiagnoseConfig>(json!({"slope_sigmaa": 3.0})).is_err());
    }
}
