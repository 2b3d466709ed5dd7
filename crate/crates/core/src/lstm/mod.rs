//! Character-level stacked LSTM regressor used to score phrases that are
//! missing from the mapping.
//!
//! Architecture: character embedding → three LSTM layers (inverted dropout
//! between layers while training) → affine head on the last hidden state of
//! the top layer → logistic squash. Everything, including backpropagation
//! through time, is implemented here on plain `Vec<f64>` buffers.

mod gradcheck;
mod io;
mod network;
mod train;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use gradcheck::{
    analytic_gradients, central_difference, compare_gradients, deviation, gradient_check, sample_parameters,
    GradientCheckReport, ParamRef, ABSOLUTE_FLOOR,
};
pub use io::{load_model, persist_model, MODEL_HEADER};
pub use network::{LayerParams, Params, Tensor};
pub use train::{train, TrainingReport};

#[derive(Debug, Error)]
pub enum LstmError {
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("label {label} for {phrase:?} is outside [0, 1]")]
    InvalidLabel { phrase: String, label: f64 },
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("loss became non-finite in epoch {epoch} on {phrase:?}; lower the learning rate")]
    NonFiniteLoss { epoch: usize, phrase: String },
    #[error("empty input sequence")]
    EmptySequence,
    #[error("character index {index} out of range for a charset of size {size}")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported model header {0:?}")]
    VersionMismatch(String),
    #[error("tensor {name}: expected {expected}, found {found}")]
    ShapeMismatch {
        name: String,
        expected: String,
        found: String,
    },
    #[error("line {line}: {reason}")]
    CorruptEntry { line: usize, reason: String },
}

/// Index of the unknown-character slot.
pub const UNK: usize = 0;

/// Ordered set of characters the model can embed. Index 0 is reserved for
/// unknown characters, so `chars[i]` has index `i + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct Charset {
    chars: Vec<char>,
}

impl Charset {
    pub fn new(chars: impl IntoIterator<Item = char>) -> Result<Self, LstmError> {
        let chars: Vec<char> = chars.into_iter().collect();
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = chars.iter().find(|c| !seen.insert(**c)) {
            return Err(LstmError::InvalidHyperparams(format!(
                "duplicate charset character {dup:?}"
            )));
        }
        Ok(Self { chars })
    }

    /// Embedding table rows, including the unknown slot.
    pub fn size(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn index_of(&self, c: char) -> usize {
        self.chars.iter().position(|&k| k == c).map_or(UNK, |i| i + 1)
    }

    pub fn as_string(&self) -> String {
        self.chars.iter().collect()
    }
}

impl Default for Charset {
    /// Lowercase letters, digits, space, `%` and `$`: everything normalization
    /// lets through for English text.
    fn default() -> Self {
        Self::new("abcdefghijklmnopqrstuvwxyz0123456789 %$".chars()).expect("default charset has no duplicates")
    }
}

impl From<Charset> for String {
    fn from(c: Charset) -> String {
        c.as_string()
    }
}

impl TryFrom<String> for Charset {
    type Error = LstmError;
    fn try_from(s: String) -> Result<Self, LstmError> {
        Charset::new(s.chars())
    }
}

impl fmt::Display for Charset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.as_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmHyperparams {
    pub charset: Charset,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub dropout_rate: f64,
    pub max_seq_len: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Global L2 norm above which a per-sample gradient is rescaled.
    pub grad_clip: f64,
}

pub const NUM_LAYERS: usize = 3;

impl Default for LstmHyperparams {
    fn default() -> Self {
        Self {
            charset: Charset::default(),
            embed_dim: 24,
            hidden_dim: 48,
            num_layers: NUM_LAYERS,
            dropout_rate: 0.2,
            max_seq_len: 64,
            learning_rate: 0.01,
            epochs: 50,
            seed: 42,
            grad_clip: 5.0,
        }
    }
}

impl LstmHyperparams {
    pub fn validate(&self) -> Result<(), LstmError> {
        let bad = |msg: &str| Err(LstmError::InvalidHyperparams(msg.to_owned()));
        if self.num_layers != NUM_LAYERS {
            return bad("num_layers must be 3");
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.max_seq_len == 0 {
            return bad("embed_dim, hidden_dim and max_seq_len must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must lie in [0, 1)");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(self.grad_clip.is_finite() && self.grad_clip > 0.0) {
            return bad("grad_clip must be positive");
        }
        Ok(())
    }
}

/// Maps a phrase to charset indices, truncated to `max_seq_len`. Empty input
/// becomes a single unknown token so the network always sees one step.
pub fn encode_phrase(phrase_text: &str, hp: &LstmHyperparams) -> Vec<usize> {
    let mut seq: Vec<usize> = phrase_text
        .chars()
        .take(hp.max_seq_len)
        .map(|c| hp.charset.index_of(c))
        .collect();
    if seq.is_empty() {
        seq.push(UNK);
    }
    seq
}

/// A trained (or freshly initialized) regressor.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmModel {
    pub hyperparams: LstmHyperparams,
    pub params: Params,
    /// Build id of the mapping this model was trained against; empty if unstamped.
    pub build_id: String,
}

impl LstmModel {
    /// Random initialization driven by `hp.seed`.
    pub fn new(hp: LstmHyperparams) -> Result<Self, LstmError> {
        use rand::SeedableRng;
        hp.validate()?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(hp.seed);
        let params = Params::init(&hp, &mut rng);
        Ok(Self {
            hyperparams: hp,
            params,
            build_id: String::new(),
        })
    }

    /// All parameters zero; the output is 0.5 for every input.
    pub fn zeros(hp: LstmHyperparams) -> Result<Self, LstmError> {
        hp.validate()?;
        let params = Params::zeros(&hp);
        Ok(Self {
            hyperparams: hp,
            params,
            build_id: String::new(),
        })
    }

    pub fn with_build_id(mut self, build_id: impl Into<String>) -> Self {
        self.build_id = build_id.into();
        self
    }

    pub fn encode(&self, phrase_text: &str) -> Vec<usize> {
        encode_phrase(phrase_text, &self.hyperparams)
    }

    /// Inference-mode forward pass; dropout is never applied here.
    pub fn forward(&self, sequence: &[usize]) -> Result<f64, LstmError> {
        self.check_sequence(sequence)?;
        Ok(network::forward(&self.params, &self.hyperparams, sequence, None).output)
    }

    /// Encodes and scores a phrase.
    pub fn predict(&self, phrase_text: &str) -> f64 {
        let seq = self.encode(phrase_text);
        network::forward(&self.params, &self.hyperparams, &seq, None).output
    }

    fn check_sequence(&self, sequence: &[usize]) -> Result<(), LstmError> {
        if sequence.is_empty() {
            return Err(LstmError::EmptySequence);
        }
        let size = self.hyperparams.charset.size();
        match sequence.iter().find(|&&i| i >= size) {
            Some(&index) => Err(LstmError::IndexOutOfRange { index, size }),
            None => Ok(()),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params
            .tensors()
            .iter()
            .all(|(_, t)| t.data.iter().all(|v| v.is_finite()))
    }
}
