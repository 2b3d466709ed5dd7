//! The training flow: tokenize → build the mapping → fit the fallback LSTM on
//! the mapping's phrases → stamp the model with the mapping's build id.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{SubjectLineRecord, TokenizedRecord};
use crate::lstm::{self, LstmError, LstmHyperparams, LstmModel, TrainingReport};
use crate::ngram_index::{build_mapping, MappingError, MappingFile};
use crate::predictor::PredictorHandle;
use crate::stopwords::default_stopwords;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Mapping(#[from] MappingError),
    #[error(transparent)]
    Lstm(#[from] LstmError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub stopwords: BTreeSet<String>,
    pub min_count: u64,
    pub lstm: LstmHyperparams,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            stopwords: default_stopwords(),
            min_count: 1,
            lstm: LstmHyperparams::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedArtifacts {
    pub mapping: MappingFile,
    pub model: LstmModel,
    pub report: TrainingReport,
    pub n_records: usize,
    pub mean_open_rate: f64,
}

impl TrainedArtifacts {
    pub fn handle(&self) -> PredictorHandle {
        PredictorHandle::new(self.mapping.clone(), self.model.clone()).expect("model is stamped with its own mapping")
    }

    pub fn into_handle(self) -> PredictorHandle {
        PredictorHandle::new(self.mapping, self.model).expect("model is stamped with its own mapping")
    }
}

/// Phrase texts and their stored rates, in mapping order.
pub fn lstm_dataset(mapping: &MappingFile) -> Vec<(String, f64)> {
    mapping
        .entries()
        .map(|(key, stats)| (key.text.clone(), stats.avg_open_rate))
        .collect()
}

pub fn train_artifacts(records: &[SubjectLineRecord], config: &TrainingConfig) -> Result<TrainedArtifacts, TrainError> {
    let tokenized: Vec<TokenizedRecord> = records.iter().map(SubjectLineRecord::tokenize).collect();
    let mapping = build_mapping(&tokenized, &config.stopwords, config.min_count)?;
    let (model, report) = lstm::train(&lstm_dataset(&mapping), &config.lstm)?;
    let model = model.with_build_id(mapping.build_id());
    let mean_open_rate = records.iter().map(|r| r.open_rate).sum::<f64>() / records.len() as f64;
    Ok(TrainedArtifacts {
        mapping,
        model,
        report,
        n_records: records.len(),
        mean_open_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trains_a_consistent_handle() {
        let records = vec![
            SubjectLineRecord::new("Big summer sale", 0.25).unwrap(),
            SubjectLineRecord::new("Last chance: summer escapes", 0.15).unwrap(),
        ];
        let config = TrainingConfig {
            lstm: LstmHyperparams {
                epochs: 2,
                hidden_dim: 8,
                embed_dim: 4,
                ..Default::default()
            },
            ..Default::default()
        };
        let art = train_artifacts(&records, &config).unwrap();
        assert_eq!(art.model.build_id, art.mapping.build_id());
        assert_eq!(art.report.epoch_losses.len(), 2);
        assert!((art.mean_open_rate - 0.2).abs() < 1e-15);
        let p = art.handle().predict("big summer escapes").unwrap();
        assert!((0.0..=1.0).contains(&p.open_rate));
    }

    #[test]
    fn empty_mapping_is_a_training_error() {
        let records = vec![SubjectLineRecord::new("the", 0.25).unwrap()];
        let err = train_artifacts(&records, &TrainingConfig::default()).unwrap_err();
        assert!(matches!(err, TrainError::Lstm(LstmError::EmptyDataset)));
    }
}
