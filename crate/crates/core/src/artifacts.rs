//! The on-disk artifacts directory:
//!
//! * `mapping.tsv`: the phrase table
//! * `lstm.model`: the fallback regressor
//! * `train_meta.json`: seed, configuration and loss curve of the run

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lstm::{load_model, persist_model, LstmError, TrainingReport};
use crate::ngram_index::{load_mapping, persist_mapping, MappingError, PhraseKind};
use crate::pipeline::{TrainedArtifacts, TrainingConfig};
use crate::predictor::{PredictError, PredictorHandle};

pub const MAPPING_FILE: &str = "mapping.tsv";
pub const MODEL_FILE: &str = "lstm.model";
pub const META_FILE: &str = "train_meta.json";
pub const META_FORMAT: &str = "nlorp-train-meta v1";

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Meta {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Mapping(#[from] MappingError),
    #[error(transparent)]
    Model(#[from] LstmError),
    #[error(transparent)]
    Mismatch(#[from] PredictError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntryCounts {
    pub unigram: usize,
    pub bigram: usize,
    pub trigram: usize,
}

impl EntryCounts {
    pub fn of(mapping: &crate::ngram_index::MappingFile) -> Self {
        Self {
            unigram: mapping.count_of_kind(PhraseKind::Unigram),
            bigram: mapping.count_of_kind(PhraseKind::Bigram),
            trigram: mapping.count_of_kind(PhraseKind::Trigram),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub format: String,
    pub build_id: String,
    pub seed: u64,
    pub config: TrainingConfig,
    pub n_records: usize,
    pub corpus_mean_open_rate: f64,
    pub mapping_entry_counts: EntryCounts,
    pub loss_curve: TrainingReport,
}

impl TrainMeta {
    pub fn new(artifacts: &TrainedArtifacts, config: &TrainingConfig) -> Self {
        Self {
            format: META_FORMAT.to_owned(),
            build_id: artifacts.mapping.build_id(),
            seed: config.lstm.seed,
            config: config.clone(),
            n_records: artifacts.n_records,
            corpus_mean_open_rate: artifacts.mean_open_rate,
            mapping_entry_counts: EntryCounts::of(&artifacts.mapping),
            loss_curve: artifacts.report.clone(),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ArtifactError + '_ {
    move |source| ArtifactError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn save_artifacts(
    dir: impl AsRef<Path>,
    artifacts: &TrainedArtifacts,
    config: &TrainingConfig,
) -> Result<(), ArtifactError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    persist_mapping(&artifacts.mapping, dir.join(MAPPING_FILE))?;
    persist_model(&artifacts.model, dir.join(MODEL_FILE))?;
    let meta_path = dir.join(META_FILE);
    let json = serde_json::to_string_pretty(&TrainMeta::new(artifacts, config)).expect("metadata serializes");
    fs::write(&meta_path, json + "\n").map_err(io_err(&meta_path))?;
    Ok(())
}

/// A predictor plus the training metadata, when the directory has one.
#[derive(Debug, Clone)]
pub struct LoadedArtifacts {
    pub handle: PredictorHandle,
    pub meta: Option<TrainMeta>,
}

pub fn load_from_paths(mapping: &Path, model: &Path, meta: Option<&Path>) -> Result<LoadedArtifacts, ArtifactError> {
    let handle = PredictorHandle::new(load_mapping(mapping)?, load_model(model)?)?;
    let meta = match meta.filter(|p| p.exists()) {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(io_err(path))?;
            Some(serde_json::from_str(&text).map_err(|source| ArtifactError::Meta {
                path: path.display().to_string(),
                source,
            })?)
        }
        None => None,
    };
    Ok(LoadedArtifacts { handle, meta })
}

pub fn load_artifacts(dir: impl AsRef<Path>) -> Result<LoadedArtifacts, ArtifactError> {
    let dir = dir.as_ref();
    let meta: PathBuf = dir.join(META_FILE);
    load_from_paths(&dir.join(MAPPING_FILE), &dir.join(MODEL_FILE), Some(&meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SubjectLineRecord;
    use crate::lstm::LstmHyperparams;
    use crate::pipeline::train_artifacts;

    #[test]
    fn directory_round_trip() {
        let records = vec![
            SubjectLineRecord::new("big sale", 0.2).unwrap(),
            SubjectLineRecord::new("big deal", 0.4).unwrap(),
        ];
        let config = TrainingConfig {
            lstm: LstmHyperparams {
                epochs: 1,
                ..Default::default()
            },
            ..Default::default()
        };
        let art = train_artifacts(&records, &config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_artifacts(dir.path(), &art, &config).unwrap();
        let loaded = load_artifacts(dir.path()).unwrap();
        assert_eq!(loaded.handle.mapping(), &art.mapping);
        assert_eq!(loaded.handle.model(), &art.model);
        let meta = loaded.meta.unwrap();
        assert_eq!(meta.build_id, art.mapping.build_id());
        assert_eq!(
            meta.mapping_entry_counts,
            EntryCounts {
                unigram: 3,
                bigram: 2,
                trigram: 0
            }
        );
        assert!(matches!(
            load_artifacts(dir.path().join("missing")),
            Err(ArtifactError::Mapping(_))
        ));
    }
}
