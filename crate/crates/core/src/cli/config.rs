//! The declarative run file read by `train`, `adapt` and `evaluate`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::TrainConfig;
use crate::model::ExtractorConfig;

use super::CliError;

fn default_sample_rate() -> u32 {
    8000
}

fn default_valid_holdout() -> usize {
    2
}

/// Data locations and splitting. Relative paths are resolved against the
/// directory of the run file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default = "default_sample_rate")]
    pub sample_rate_hz: u32,
    /// Corpus manifest to train on (cross-domain adaptation: the target domain).
    pub train_manifest: Option<PathBuf>,
    /// Corpus manifest for validation. Without it, the last
    /// `valid_holdout_per_speaker` utterances of every training speaker are
    /// held out instead.
    pub valid_manifest: Option<PathBuf>,
    #[serde(default = "default_valid_holdout")]
    pub valid_holdout_per_speaker: usize,
    /// Starting point for `train`, or the model to adapt.
    pub init_checkpoint: Option<PathBuf>,
    /// Mixture manifest `mixture_id,path,speaker_ids,utterance_ids`.
    pub eval_mixtures: Option<PathBuf>,
    /// Enrollment list `mixture_id,target_speaker_id,enrollment_utterance_id`.
    pub eval_enrollments: Option<PathBuf>,
    /// Corpus manifest holding the reference sources and enrollment utterances.
    pub eval_corpus: Option<PathBuf>,
    /// Mixture manifest of the unlabeled test mixtures for test-set adaptation.
    pub adapt_mixtures: Option<PathBuf>,
    /// Corpus manifest of the enrollment utterances available for adaptation.
    pub adapt_enroll_pool: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: default_sample_rate(),
            train_manifest: None,
            valid_manifest: None,
            valid_holdout_per_speaker: default_valid_holdout(),
            init_checkpoint: None,
            eval_mixtures: None,
            eval_enrollments: None,
            eval_corpus: None,
            adapt_mixtures: None,
            adapt_enroll_pool: None,
        }
    }
}

fn default_model() -> ExtractorConfig {
    ExtractorConfig::toy()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Where artifacts go; `--out` overrides it.
    pub out_dir: Option<PathBuf>,
    #[serde(default = "default_model")]
    pub model: ExtractorConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub data: DataConfig,
}

impl RunConfig {
    /// Parses and validates `path`. Nothing else is read.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.train.validate_for(&cfg.model).map_err(|e| CliError::Config(e.to_string()))?;
        if cfg.data.sample_rate_hz == 0 {
            return Err(CliError::Config("data.sample_rate_hz must be positive".into()));
        }
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let d = &mut self.data;
        for p in [
            &mut d.train_manifest,
            &mut d.valid_manifest,
            &mut d.init_checkpoint,
            &mut d.eval_mixtures,
            &mut d.eval_enrollments,
            &mut d.eval_corpus,
            &mut d.adapt_mixtures,
            &mut d.adapt_enroll_pool,
            &mut self.out_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}

/// `value` or a config error naming the missing key.
pub fn required<'a>(value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
    value
        .as_deref()
        .ok_or_else(|| CliError::Config(format!("data.{key} is required for this command")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            r#"
            out_dir = "out"
            [train]
            objective = "samom"
            epochs = 1
            steps_per_epoch = 1
            segment_s = 0.5
            lr_initial = 0.001
            lr_halve_patience_epochs = 10
            seed = 0
            [data]
            train_manifest = "corpus/manifest.csv"
            eval_corpus = "/abs/manifest.csv"
            "#,
        )
        .unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.model, ExtractorConfig::toy());
        assert_eq!(cfg.out_dir.unwrap(), dir.path().join("out"));
        assert_eq!(cfg.data.train_manifest.unwrap(), dir.path().join("corpus/manifest.csv"));
        assert_eq!(cfg.data.eval_corpus.unwrap(), PathBuf::from("/abs/manifest.csv"));
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        let base = r#"
            [train]
            objective = "samom"
            epochs = 1
            steps_per_epoch = 1
            segment_s = 0.5
            lr_initial = 0.001
            lr_halve_patience_epochs = 10
            seed = 0
        "#;
        for bad in [
            format!("{base}\nbogus = 1\n"),
            format!("{base}\n[data]\ntrain_manifesto = \"x\"\n"),
            base.replace("epochs = 1", "epochs = 0"),
            format!("{base}\n[model]\nn_filters = 4\n"),
            base.replace("\"samom\"", "\"pit\""),
        ] {
            std::fs::write(&path, bad).unwrap();
            assert!(matches!(RunConfig::load(&path), Err(CliError::Config(_))));
        }
    }
}
