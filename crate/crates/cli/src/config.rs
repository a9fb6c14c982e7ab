use std::path::Path;

use editlab_data::SceneConfig;
use editlab_metrics::MetricsConfig;
use editlab_model::codec::CodecMode;
use editlab_model::denoiser::ArchConfig;
use editlab_model::diffusion::TrainConfig;
use editlab_model::guidance::GuidanceScales;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Sampler settings for `edit`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EditConfig {
    pub steps: usize,
    pub scales: GuidanceScales,
    pub seed: u64,
}

impl Default for EditConfig {
    fn default() -> Self {
        EditConfig { steps: 50, scales: GuidanceScales::default(), seed: 0 }
    }
}

/// Every setting a run can take. A JSON file passed with `--config` fills
/// any subset of these; command-line flags then override individual fields.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub scene: SceneConfig,
    pub arch: ArchConfig,
    pub codec: CodecMode,
    pub train: TrainConfig,
    pub edit: EditConfig,
    pub metrics: MetricsConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::Config(format!("config {}: {e}", p.display())))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_other_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, r#"{"train": {"steps": 7}, "edit": {"seed": 3}}"#).unwrap();
        let cfg = RunConfig::load(Some(&path)).unwrap();
        assert_eq!(cfg.train.steps, 7);
        assert_eq!(cfg.edit.seed, 3);
        assert_eq!(cfg.edit.steps, 50);
        assert_eq!(cfg.arch, ArchConfig::default());
    }

    #[test]
    fn unknown_keys_and_missing_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, r#"{"train": {"stepz": 7}}"#).unwrap();
        assert!(matches!(RunConfig::load(Some(&path)), Err(CliError::Config(_))));
        assert!(matches!(RunConfig::load(Some(&dir.path().join("absent.json"))), Err(CliError::Input(_))));
    }

    #[test]
    fn defaults_round_trip_through_json() {
        let cfg = RunConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), cfg);
    }
}
