//! Subject-line corpora: CSV ingestion, text normalization and a seeded
//! synthetic generator used by the quantitative tests.
//!
//! Two CSV layouts are accepted:
//!
//! * `subject_line,open_rate`: the rate is given directly as a fraction.
//! * `subject_line,opens,sends`: a campaign export; the rate is `opens / sends`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const OPEN_RATE_HEADER: [&str; 2] = ["subject_line", "open_rate"];
pub const OPENS_SENDS_HEADER: [&str; 3] = ["subject_line", "opens", "sends"];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("unrecognized header {found:?}; expected `subject_line,open_rate` or `subject_line,opens,sends`")]
    SchemaMismatch { found: String },
    #[error("line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("line {line}: {reason}")]
    RateOutOfRange { line: u64, reason: String },
    #[error("corpus contains no records")]
    EmptyCorpus,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// One subject line with its observed open rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectLineRecord {
    pub text: String,
    pub open_rate: f64,
}

impl SubjectLineRecord {
    /// Validating constructor.
    pub fn new(text: impl Into<String>, open_rate: f64) -> Result<Self, CorpusError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(CorpusError::MalformedRow {
                line: 0,
                reason: "empty subject line".into(),
            });
        }
        check_rate(open_rate, 0)?;
        Ok(Self { text, open_rate })
    }

    pub fn tokenize(&self) -> TokenizedRecord {
        TokenizedRecord {
            tokens: normalize_text(&self.text),
            open_rate: self.open_rate,
        }
    }
}

/// A normalized subject line: lowercase tokens without whitespace.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedRecord {
    pub tokens: Vec<String>,
    pub open_rate: f64,
}

impl TokenizedRecord {
    pub fn new(tokens: Vec<String>, open_rate: f64) -> Self {
        debug_assert!(tokens.iter().all(|t| !t.is_empty() && !t.contains(char::is_whitespace)));
        Self { tokens, open_rate }
    }

    /// Convenience for tests and examples: normalizes `text` first.
    pub fn from_text(text: &str, open_rate: f64) -> Self {
        Self::new(normalize_text(text), open_rate)
    }
}

/// Which CSV layout to expect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CsvSchema {
    /// Decide from the header row.
    #[default]
    Detect,
    OpenRate,
    OpensSends,
}

fn check_rate(rate: f64, line: u64) -> Result<(), CorpusError> {
    if rate.is_finite() && (0.0..=1.0).contains(&rate) {
        Ok(())
    } else {
        Err(CorpusError::RateOutOfRange {
            line,
            reason: format!("open rate {rate} outside [0, 1]"),
        })
    }
}

fn parse_number(field: &str, what: &str, line: u64) -> Result<f64, CorpusError> {
    field.trim().parse::<f64>().map_err(|_| CorpusError::MalformedRow {
        line,
        reason: format!("non-numeric {what} {field:?}"),
    })
}

/// Reads a corpus from `path`, preserving row order.
pub fn load_corpus(path: impl AsRef<Path>, schema: CsvSchema) -> Result<Vec<SubjectLineRecord>, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_corpus(file, schema)
}

/// Reads a corpus from any reader; see [`load_corpus`].
pub fn read_corpus<R: io::Read>(reader: R, schema: CsvSchema) -> Result<Vec<SubjectLineRecord>, CorpusError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);

    let header = rdr
        .headers()
        .map_err(|e| CorpusError::MalformedRow {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    let fields: Vec<&str> = header.iter().collect();
    let detected = if fields == OPEN_RATE_HEADER {
        CsvSchema::OpenRate
    } else if fields == OPENS_SENDS_HEADER {
        CsvSchema::OpensSends
    } else {
        return Err(CorpusError::SchemaMismatch {
            found: fields.join(","),
        });
    };
    if schema != CsvSchema::Detect && schema != detected {
        return Err(CorpusError::SchemaMismatch {
            found: fields.join(","),
        });
    }
    let width = fields.len();

    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| CorpusError::MalformedRow {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != width {
            return Err(CorpusError::MalformedRow {
                line,
                reason: format!("expected {width} columns, found {}", row.len()),
            });
        }
        let text = row[0].to_string();
        if text.trim().is_empty() {
            return Err(CorpusError::MalformedRow {
                line,
                reason: "empty subject line".into(),
            });
        }
        let open_rate = match detected {
            CsvSchema::OpenRate => parse_number(&row[1], "open_rate", line)?,
            _ => {
                let opens = parse_number(&row[1], "opens", line)?;
                let sends = parse_number(&row[2], "sends", line)?;
                if sends <= 0.0 || opens < 0.0 {
                    return Err(CorpusError::RateOutOfRange {
                        line,
                        reason: format!("opens={opens} sends={sends}"),
                    });
                }
                opens / sends
            }
        };
        check_rate(open_rate, line)?;
        records.push(SubjectLineRecord { text, open_rate });
    }
    if records.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    Ok(records)
}

/// Writes records in the `subject_line,open_rate` layout. Rates are written
/// with the shortest decimal that parses back to the same `f64`.
pub fn write_corpus<W: Write>(writer: W, records: &[SubjectLineRecord]) -> Result<(), csv::Error> {
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    wtr.write_record(OPEN_RATE_HEADER)?;
    for r in records {
        wtr.write_record([r.text.as_str(), &r.open_rate.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn save_corpus(path: impl AsRef<Path>, records: &[SubjectLineRecord]) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    write_corpus(file, records).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        source: e.into(),
    })
}

fn keep_char(c: char) -> bool {
    c.is_alphanumeric() || c.is_whitespace() || c == '%' || c == '$'
}

/// Lowercases, drops punctuation and symbols (except `%` and `$`, which stay
/// attached to their token) and splits on whitespace.
pub fn normalize_text(raw: &str) -> Vec<String> {
    let cleaned: String = raw.chars().filter(|&c| keep_char(c)).collect::<String>().to_lowercase();
    cleaned.split_whitespace().map(str::to_owned).collect()
}

/// A generated corpus together with the per-word latent scores that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub records: Vec<SubjectLineRecord>,
    pub latent_scores: BTreeMap<String, f64>,
}

pub const SYNTHETIC_SCORE_RANGE: (f64, f64) = (0.05, 0.5);
pub const SYNTHETIC_NOISE_HALF_WIDTH: f64 = 0.02;

const SYLLABLES: [&str; 16] = [
    "ba", "ko", "mi", "ru", "te", "sa", "lo", "ne", "pi", "du", "ga", "ve", "zo", "fi", "ha", "ju",
];

/// Deterministic pronounceable word for index `i`; distinct indices give
/// distinct words.
pub fn synthetic_word(i: usize) -> String {
    let mut n = i + SYLLABLES.len();
    let mut parts = Vec::new();
    while n > 0 {
        parts.push(SYLLABLES[n % SYLLABLES.len()]);
        n /= SYLLABLES.len();
    }
    parts.reverse();
    parts.concat()
}

/// Open rate of a synthetic subject line: the mean latent score of its words
/// plus `noise * draw`, clamped to `[0, 1]`.
pub fn synthetic_rate(scores: &[f64], noise: f64, draw: f64) -> f64 {
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    (mean + noise * draw).clamp(0.0, 1.0)
}

/// Generates `n` subject lines of 4–8 distinct words drawn from a vocabulary
/// of `vocab_size` words. Each word carries a latent score drawn uniformly
/// from [`SYNTHETIC_SCORE_RANGE`]; `noise` scales a uniform perturbation of
/// half-width [`SYNTHETIC_NOISE_HALF_WIDTH`].
pub fn generate_synthetic_corpus(
    seed: u64,
    n: usize,
    vocab_size: usize,
    noise: f64,
) -> Result<SyntheticCorpus, CorpusError> {
    if n == 0 {
        return Err(CorpusError::InvalidArgument("n must be at least 1".into()));
    }
    if vocab_size < 10 {
        return Err(CorpusError::InvalidArgument("vocab_size must be at least 10".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = SYNTHETIC_SCORE_RANGE;
    let words: Vec<String> = (0..vocab_size).map(synthetic_word).collect();
    let scores: Vec<f64> = (0..vocab_size).map(|_| rng.gen_range(lo..=hi)).collect();

    let indices: Vec<usize> = (0..vocab_size).collect();
    let records = (0..n)
        .map(|_| {
            let len = rng.gen_range(4..=8);
            let picked: Vec<usize> = indices.choose_multiple(&mut rng, len).copied().collect();
            let draw = rng.gen_range(-SYNTHETIC_NOISE_HALF_WIDTH..=SYNTHETIC_NOISE_HALF_WIDTH);
            let line_scores: Vec<f64> = picked.iter().map(|&i| scores[i]).collect();
            let text = picked.iter().map(|&i| words[i].as_str()).collect::<Vec<_>>().join(" ");
            SubjectLineRecord {
                text,
                open_rate: synthetic_rate(&line_scores, noise, draw),
            }
        })
        .collect();

    Ok(SyntheticCorpus {
        records,
        latent_scores: words.into_iter().zip(scores).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &str) -> Result<Vec<SubjectLineRecord>, CorpusError> {
        read_corpus(text.as_bytes(), CsvSchema::Detect)
    }

    #[test]
    fn parses_open_rate_schema() {
        let recs = parse("subject_line,open_rate\n\"Big summer sale\",0.25\n").unwrap();
        assert_eq!(recs, vec![SubjectLineRecord::new("Big summer sale", 0.25).unwrap()]);
    }

    #[test]
    fn parses_opens_sends_schema() {
        let recs = parse("subject_line,opens,sends\n\"Flash deal\",50,200\n").unwrap();
        assert_eq!(recs[0].open_rate, 0.25);
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(matches!(
            parse("subject_line,open_rate\n\"Oops\",1.5\n"),
            Err(CorpusError::RateOutOfRange { .. })
        ));
        assert!(matches!(
            parse("subject_line,opens,sends\nx,1,0\n"),
            Err(CorpusError::RateOutOfRange { .. })
        ));
        assert!(matches!(
            parse("subject_line,open_rate\nx,abc\n"),
            Err(CorpusError::MalformedRow { .. })
        ));
        assert!(matches!(
            parse("subject_line,open_rate\nx,0.1,3\n"),
            Err(CorpusError::MalformedRow { .. })
        ));
        assert!(matches!(
            parse("subject_line,open_rate\n"),
            Err(CorpusError::EmptyCorpus)
        ));
        assert!(matches!(
            parse("title,rate\nx,0.1\n"),
            Err(CorpusError::SchemaMismatch { .. })
        ));
        assert!(matches!(
            read_corpus("subject_line,open_rate\nx,0.1\n".as_bytes(), CsvSchema::OpensSends),
            Err(CorpusError::SchemaMismatch { .. })
        ));
    }

    #[test]
    fn preserves_row_order() {
        let recs = parse("subject_line,open_rate\nb,0.2\na,0.1\nc,0.3\n").unwrap();
        let texts: Vec<_> = recs.iter().map(|r| r.text.as_str()).collect();
        assert_eq!(texts, ["b", "a", "c"]);
    }

    #[test]
    fn normalizes_worked_example() {
        assert_eq!(
            normalize_text("Last chance - Great summer escapes."),
            ["last", "chance", "great", "summer", "escapes"]
        );
        assert_eq!(normalize_text("Save up to 25%"), ["save", "up", "to", "25%"]);
        assert_eq!(
            normalize_text("Only $5 – today’s DEAL"),
            ["only", "$5", "todays", "deal"]
        );
        assert!(normalize_text("!!!").is_empty());
        assert!(normalize_text("").is_empty());
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = generate_synthetic_corpus(1, 5, 20, 1.0).unwrap();
        let b = generate_synthetic_corpus(1, 5, 20, 1.0).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_corpus(2, 5, 20, 1.0).unwrap();
        assert_ne!(a.records, c.records);
    }

    #[test]
    fn synthetic_rate_is_mean_of_latent_scores() {
        assert!((synthetic_rate(&[0.1, 0.2, 0.3], 0.0, 0.0) - 0.2).abs() < 1e-15);
        assert_eq!(synthetic_rate(&[0.99, 0.99], 1.0, 0.02), 1.0);

        let corpus = generate_synthetic_corpus(7, 50, 30, 0.0).unwrap();
        for r in &corpus.records {
            let tokens = normalize_text(&r.text);
            assert!((4..=8).contains(&tokens.len()));
            let scores: Vec<f64> = tokens.iter().map(|t| corpus.latent_scores[t]).collect();
            assert_eq!(r.open_rate, synthetic_rate(&scores, 0.0, 0.0));
        }
    }

    #[test]
    fn synthetic_words_are_distinct_and_single_tokens() {
        let words: std::collections::HashSet<_> = (0..1000).map(synthetic_word).collect();
        assert_eq!(words.len(), 1000);
        assert!(words.iter().all(|w| normalize_text(w) == [w.clone()]));
    }

    #[test]
    fn synthetic_rejects_bad_arguments() {
        assert!(generate_synthetic_corpus(1, 0, 20, 0.0).is_err());
        assert!(generate_synthetic_corpus(1, 5, 9, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in "\\PC{0,60}") {
            let once = normalize_text(&s);
            prop_assert_eq!(normalize_text(&once.join(" ")), once.clone());
            for t in &once {
                prop_assert!(!t.is_empty() && !t.contains(char::is_whitespace));
            }
        }

        #[test]
        fn csv_round_trip_is_identity(
            rows in proptest::collection::vec(("[a-zA-Z0-9 ,\"%$!.'-]{0,30}[a-z]", 0.0f64..=1.0), 1..20)
        ) {
            let records: Vec<SubjectLineRecord> = rows
                .into_iter()
                .map(|(t, r)| SubjectLineRecord::new(t, r).unwrap())
                .collect();
            let mut buf = Vec::new();
            write_corpus(&mut buf, &records).unwrap();
            let back = read_corpus(buf.as_slice(), CsvSchema::OpenRate).unwrap();
            prop_assert_eq!(back, records);
        }

        #[test]
        fn synthetic_rates_in_unit_interval(seed in any::<u64>(), noise in 0.0f64..30.0) {
            let corpus = generate_synthetic_corpus(seed, 10, 12, noise).unwrap();
            for r in corpus.records {
                prop_assert!((0.0..=1.0).contains(&r.open_rate));
            }
        }
    }
}
