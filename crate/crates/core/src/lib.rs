//! Email subject-line open-rate prediction.
//!
//! Historical open rates are averaged per phrase (unigram, bigram, trigram)
//! into a mapping table. A new subject line is scored trigram by trigram:
//! each trigram combines its own rate with the rates of the bigrams and
//! unigrams inside it, and phrases missing from the table are scored by a
//! small character-level LSTM. The best non-overlapping trigrams (at most
//! five) are averaged into the final rate and double as the explanation.
//!
//! ```no_run
//! use nlorp::corpus::load_corpus;
//! use nlorp::pipeline::{train_artifacts, TrainingConfig};
//!
//! let records = load_corpus("subject_lines.csv", Default::default())?;
//! let handle = train_artifacts(&records, &TrainingConfig::default())?.into_handle();
//! let prediction = handle.predict("Last chance - Great summer escapes. Save up to 25%")?;
//! println!("{:.1}%", 100.0 * prediction.open_rate);
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod artifacts;
pub mod cli;
pub mod corpus;
pub mod evaluation;
pub mod lstm;
pub mod ngram_index;
pub mod pipeline;
pub mod predictor;
pub mod service;
pub mod stopwords;

pub use corpus::{SubjectLineRecord, TokenizedRecord};
pub use evaluation::{cross_validate, CvConfig, EvalReport};
pub use lstm::{LstmHyperparams, LstmModel};
pub use ngram_index::{MappingFile, Phrase, PhraseKind};
pub use pipeline::{train_artifacts, TrainedArtifacts, TrainingConfig};
pub use predictor::{Prediction, PredictorHandle, RateSource};
