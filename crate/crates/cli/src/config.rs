//! Pipeline configuration: one JSON manifest shared by every subcommand,
//! with command-line flags taking precedence over file values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use lsr_core::impact::TrainingConfig;
use lsr_core::textgen::SamplerConfig;

use crate::commands::CliError;

/// All file locations the pipeline reads or writes. Relative paths are
/// resolved against the directory containing the config file, so a config
/// works no matter where the tool is invoked from.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct Paths {
    pub collection: PathBuf,
    pub queries: PathBuf,
    pub qrels: Option<PathBuf>,
    pub expansions: PathBuf,
    pub filtered_expansions: PathBuf,
    pub groups: Option<PathBuf>,
    pub triples: Option<PathBuf>,
    pub model: PathBuf,
    pub index: PathBuf,
    pub run: PathBuf,
    pub trace: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            collection: "collection.jsonl".into(),
            queries: "queries.tsv".into(),
            qrels: None,
            expansions: "expansions.jsonl".into(),
            filtered_expansions: "expansions.filtered.jsonl".into(),
            groups: None,
            triples: None,
            model: "model.json".into(),
            index: "index.impx".into(),
            run: "run.trec".into(),
            trace: "loss_trace.csv".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub sampler: SamplerConfig,
    pub ngram_order: usize,
    pub ngram_alpha: f64,
    pub fraction: f64,
    pub training: TrainingConfig,
    pub retrieval_k: usize,
    pub run_tag: String,
    pub metric_cutoffs: Vec<usize>,
    pub binarize_grade: u32,
    pub bench_repetitions: usize,
    /// When set, documents are truncated to this many terms. By default the
    /// cut is applied to the merged term sequence (original + injected
    /// expansion terms); `truncate_before_merge` moves it ahead of the
    /// merge, onto the raw document.
    pub max_doc_tokens: Option<usize>,
    #[serde(default)]
    pub truncate_before_merge: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            paths: Paths::default(),
            sampler: SamplerConfig::default(),
            ngram_order: 3,
            ngram_alpha: 1.0,
            fraction: 0.3,
            training: TrainingConfig::default(),
            retrieval_k: 1000,
            run_tag: "lsr".into(),
            metric_cutoffs: vec![10, 100, 200, 400, 600, 800, 1000],
            binarize_grade: 1,
            bench_repetitions: 3,
            max_doc_tokens: None,
            truncate_before_merge: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(CliError::Validation(format!(
                "fraction must be in (0, 1], got {}",
                self.fraction
            )));
        }
        if self.retrieval_k < 1 {
            return Err(CliError::Validation("retrieval k must be >= 1".into()));
        }
        if self.ngram_order < 1 {
            return Err(CliError::Validation("ngram_order must be >= 1".into()));
        }
        if !(self.ngram_alpha > 0.0) {
            return Err(CliError::Validation("ngram_alpha must be > 0".into()));
        }
        self.sampler
            .validate()
            .map_err(|e| CliError::Validation(e.to_string()))?;
        self.training
            .validate()
            .map_err(|e| CliError::Validation(e.to_string()))?;
        Ok(())
    }

    /// Loads the config. An explicitly given path must exist; otherwise
    /// `./config.json` is used when present, else built-in defaults. All
    /// relative paths are rebased onto the config file's directory.
    pub fn load(explicit: Option<&Path>) -> Result<Self, CliError> {
        let path = match explicit {
            Some(p) => Some(p.to_path_buf()),
            None => {
                let fallback = PathBuf::from("config.json");
                fallback.exists().then_some(fallback)
            }
        };
        let Some(path) = path else {
            return Ok(PipelineConfig::default());
        };
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("bad config {}: {e}", path.display())))?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            config.rebase(dir);
        }
        config.validate()?;
        Ok(config)
    }

    fn rebase(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&p);
            }
        };
        let fix_opt = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                if p.is_relative() {
                    *p = dir.join(&p);
                }
            }
        };
        fix(&mut self.paths.collection);
        fix(&mut self.paths.queries);
        fix_opt(&mut self.paths.qrels);
        fix(&mut self.paths.expansions);
        fix(&mut self.paths.filtered_expansions);
        fix_opt(&mut self.paths.groups);
        fix_opt(&mut self.paths.triples);
        fix(&mut self.paths.model);
        fix(&mut self.paths.index);
        fix(&mut self.paths.run);
        fix(&mut self.paths.trace);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        PipelineConfig::default().validate().unwrap();
    }

    #[test]
    fn round_trips_through_json() {
        let config = PipelineConfig::default();
        let json = serde_json::to_string_pretty(&config).unwrap();
        let back: PipelineConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, config);
    }

    #[test]
    fn partial_config_fills_defaults() {
        let config: PipelineConfig =
            serde_json::from_str(r#"{"fraction": 0.5, "paths": {"model": "m.json"}}"#).unwrap();
        assert_eq!(config.fraction, 0.5);
        assert_eq!(config.paths.model, PathBuf::from("m.json"));
        assert_eq!(config.paths.index, PathBuf::from("index.impx"));
        assert_eq!(config.retrieval_k, 1000);
        assert_eq!(config.sampler.k, 50);
    }

    #[test]
    fn bad_fraction_rejected() {
        let config = PipelineConfig {
            fraction: 0.0,
            ..Default::default()
        };
        assert!(config.validate().is_err());
        let config = PipelineConfig {
            fraction: 1.5,
            ..Default::default()
        };
        assert!(config.validate().is_err());
    }

    #[test]
    fn rebase_leaves_absolute_paths_alone() {
        let mut config = PipelineConfig::default();
        config.paths.model = "/abs/model.json".into();
        config.rebase(Path::new("/data/toy"));
        assert_eq!(config.paths.model, PathBuf::from("/abs/model.json"));
        assert_eq!(
            config.paths.collection,
            PathBuf::from("/data/toy/collection.jsonl")
        );
    }
}
