use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tased_core::model::ModelConfig;
use tased_core::train::TrainConfig;

use crate::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Training videos.
    #[serde(default)]
    pub data_root: Option<PathBuf>,
    /// Held-out videos for validation; optional.
    #[serde(default)]
    pub val_root: Option<PathBuf>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Resume point for `train`, weights for `predict`.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
}

/// One JSON document: model, training and paths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub paths: Paths,
}

impl RunConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text)
            .map_err(|e| CliError::Usage(format!("{}: {e}", origin.display())))?;
        cfg.model
            .validate()
            .and_then(|_| cfg.train.validate())
            .map_err(|e| CliError::Usage(format!("{}: {e}", origin.display())))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path)
    }
}

pub fn required<'a>(value: Option<&'a PathBuf>, what: &str) -> Result<&'a Path, CliError> {
    value
        .map(PathBuf::as_path)
        .ok_or_else(|| CliError::Usage(format!("missing {what} (set it in the config paths or pass the flag)")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unknown_keys_at_every_level() {
        let origin = Path::new("run.json");
        assert!(RunConfig::parse(r#"{"model": {"clip_len": 16}}"#, origin).is_ok());
        for bad in [
            r#"{"model": {"clip_len": 16}, "extra": 1}"#,
            r#"{"model": {"clip_len": 16, "depth": 3}}"#,
            r#"{"model": {"clip_len": 16}, "train": {"lr": 1}}"#,
            r#"{"model": {"clip_len": 16}, "paths": {"data": "x"}}"#,
        ] {
            assert!(matches!(RunConfig::parse(bad, origin), Err(CliError::Usage(_))), "{bad}");
        }
    }

    #[test]
    fn parse_errors_carry_location() {
        let err = RunConfig::parse("{\n  \"model\": {,\n}", Path::new("run.json")).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn invalid_model_is_a_usage_error() {
        for bad in [
            r#"{"model": {"clip_len": 7}}"#,
            r#"{"model": {"clip_len": 12, "temporal_downsample": 8}}"#,
        ] {
            let err = RunConfig::parse(bad, Path::new("r.json")).unwrap_err();
            assert!(matches!(err, CliError::Usage(_)), "{bad}");
        }
    }
}
