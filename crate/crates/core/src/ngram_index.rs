//! Phrase extraction and the phrase → historical open rate mapping.
//!
//! A phrase is a contiguous run of one, two or three tokens. The mapping
//! stores, for every phrase seen in training, how often it occurred and the
//! mean open rate of the subject lines it occurred in. Unigrams that are
//! stopwords are never stored; longer phrases keep their stopwords so that
//! spans like "up to 25%" remain scoreable.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::TokenizedRecord;

pub const MAPPING_VERSION: u32 = 1;
const HEADER_PREFIX: &str = "#nlorp-mapping";
const STOPWORDS_PREFIX: &str = "#stopwords";

#[derive(Debug, Error)]
pub enum MappingError {
    #[error("cannot build a mapping from an empty corpus")]
    EmptyCorpus,
    #[error("min_count must be at least 1")]
    InvalidMinCount,
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("unsupported mapping header {0:?}")]
    VersionMismatch(String),
    #[error("line {line}: {reason}")]
    CorruptEntry { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhraseKind {
    Unigram,
    Bigram,
    Trigram,
}

impl PhraseKind {
    pub const ALL: [PhraseKind; 3] = [PhraseKind::Unigram, PhraseKind::Bigram, PhraseKind::Trigram];

    pub fn n_tokens(self) -> usize {
        match self {
            PhraseKind::Unigram => 1,
            PhraseKind::Bigram => 2,
            PhraseKind::Trigram => 3,
        }
    }

    pub fn from_len(n: usize) -> Option<Self> {
        match n {
            1 => Some(PhraseKind::Unigram),
            2 => Some(PhraseKind::Bigram),
            3 => Some(PhraseKind::Trigram),
            _ => None,
        }
    }
}

/// Half-open token range `[start, end)` within the source subject line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{})", self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Phrase {
    pub tokens: Vec<String>,
    pub kind: PhraseKind,
    pub span: Span,
}

impl Phrase {
    /// Builds the phrase covering `tokens[start..start + kind.n_tokens()]`.
    pub fn at(tokens: &[String], start: usize, kind: PhraseKind) -> Self {
        let end = start + kind.n_tokens();
        Self {
            tokens: tokens[start..end].to_vec(),
            kind,
            span: Span { start, end },
        }
    }

    /// Canonical key text: tokens joined by a single space.
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    /// The phrases of a shorter kind contained in this one, left to right.
    pub fn sub_phrases(&self, kind: PhraseKind) -> Vec<Phrase> {
        phrases_of_kind(&self.tokens, kind)
            .into_iter()
            .map(|mut p| {
                p.span.start += self.span.start;
                p.span.end += self.span.start;
                p
            })
            .collect()
    }
}

/// All phrases of one kind, left to right.
pub fn phrases_of_kind(tokens: &[String], kind: PhraseKind) -> Vec<Phrase> {
    let n = kind.n_tokens();
    if tokens.len() < n {
        return Vec::new();
    }
    (0..=tokens.len() - n).map(|i| Phrase::at(tokens, i, kind)).collect()
}

/// Every unigram, then every bigram, then every trigram, each group left to right.
pub fn extract_phrases(tokens: &[String]) -> Vec<Phrase> {
    PhraseKind::ALL
        .iter()
        .flat_map(|&k| phrases_of_kind(tokens, k))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhraseStats {
    pub count: u64,
    pub avg_open_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PhraseKey {
    pub kind: PhraseKind,
    pub text: String,
}

impl PhraseKey {
    pub fn new(kind: PhraseKind, text: impl Into<String>) -> Self {
        Self {
            kind,
            text: text.into(),
        }
    }
}

impl From<&Phrase> for PhraseKey {
    fn from(p: &Phrase) -> Self {
        Self::new(p.kind, p.text())
    }
}

/// The persisted phrase → rate table.
#[derive(Debug, Clone, PartialEq)]
pub struct MappingFile {
    entries: BTreeMap<PhraseKey, PhraseStats>,
    stopwords: BTreeSet<String>,
    version: u32,
}

impl MappingFile {
    pub fn new(stopwords: BTreeSet<String>) -> Self {
        Self {
            entries: BTreeMap::new(),
            stopwords,
            version: MAPPING_VERSION,
        }
    }

    /// Adds an entry, enforcing the table invariants.
    pub fn insert(&mut self, key: PhraseKey, stats: PhraseStats) -> Result<(), String> {
        if stats.count == 0 {
            return Err("count must be at least 1".into());
        }
        if !(stats.avg_open_rate.is_finite() && (0.0..=1.0).contains(&stats.avg_open_rate)) {
            return Err(format!("rate {} outside [0, 1]", stats.avg_open_rate));
        }
        let tokens: Vec<&str> = key.text.split(' ').collect();
        if tokens.len() != key.kind.n_tokens() || tokens.iter().any(|t| t.is_empty() || t.contains(char::is_whitespace))
        {
            return Err(format!("phrase {:?} is not a well-formed {:?}", key.text, key.kind));
        }
        if key.kind == PhraseKind::Unigram && self.stopwords.contains(&key.text) {
            return Err(format!("stopword unigram {:?}", key.text));
        }
        if self.entries.insert(key.clone(), stats).is_some() {
            return Err(format!("duplicate entry {:?}", key.text));
        }
        Ok(())
    }

    pub fn get(&self, key: &PhraseKey) -> Option<&PhraseStats> {
        self.entries.get(key)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&PhraseKey, &PhraseStats)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count_of_kind(&self, kind: PhraseKind) -> usize {
        self.entries.keys().filter(|k| k.kind == kind).count()
    }

    pub fn stopwords(&self) -> &BTreeSet<String> {
        &self.stopwords
    }

    pub fn is_stopword(&self, token: &str) -> bool {
        self.stopwords.contains(token)
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    /// Serializes to the TSV layout read by [`MappingFile::from_tsv`].
    pub fn to_tsv(&self) -> String {
        let mut out = format!("{HEADER_PREFIX} v{}\n{STOPWORDS_PREFIX}", self.version);
        for w in &self.stopwords {
            out.push(' ');
            out.push_str(w);
        }
        out.push('\n');
        for (key, stats) in &self.entries {
            // `{}` on f64 prints the shortest decimal that round-trips exactly.
            writeln!(
                out,
                "{}\t{}\t{}\t{}",
                key.kind.n_tokens(),
                key.text,
                stats.count,
                stats.avg_open_rate
            )
            .expect("writing to a String cannot fail");
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self, MappingError> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        if header != format!("{HEADER_PREFIX} v{MAPPING_VERSION}") {
            return Err(MappingError::VersionMismatch(header.to_owned()));
        }
        let corrupt = |line: usize, reason: String| MappingError::CorruptEntry { line, reason };

        let stop_line = lines.next().ok_or_else(|| corrupt(2, "missing stopword line".into()))?;
        let stop_rest = stop_line
            .strip_prefix(STOPWORDS_PREFIX)
            .filter(|rest| rest.is_empty() || rest.starts_with(' '))
            .ok_or_else(|| corrupt(2, format!("expected `{STOPWORDS_PREFIX}` line")))?;
        let stopwords = stop_rest.split_whitespace().map(str::to_owned).collect();

        let mut mapping = MappingFile::new(stopwords);
        for (idx, line) in lines.enumerate() {
            let lineno = idx + 3;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [kind, phrase, count, rate] = fields[..] else {
                return Err(corrupt(
                    lineno,
                    format!("expected 4 tab-separated fields, found {}", fields.len()),
                ));
            };
            let kind = kind
                .parse::<usize>()
                .ok()
                .and_then(PhraseKind::from_len)
                .ok_or_else(|| corrupt(lineno, format!("bad kind {kind:?}")))?;
            let count = count
                .parse::<u64>()
                .map_err(|_| corrupt(lineno, format!("bad count {count:?}")))?;
            let avg_open_rate = rate
                .parse::<f64>()
                .map_err(|_| corrupt(lineno, format!("bad rate {rate:?}")))?;
            mapping
                .insert(PhraseKey::new(kind, phrase), PhraseStats { count, avg_open_rate })
                .map_err(|reason| corrupt(lineno, reason))?;
        }
        Ok(mapping)
    }

    /// Content hash of the serialized table; trained models carry it so a
    /// predictor can refuse a model that was trained against another table.
    pub fn build_id(&self) -> String {
        let digest = Sha256::digest(self.to_tsv().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Builds the mapping from a tokenized training corpus.
///
/// Each occurrence of a phrase contributes its subject line's open rate once,
/// so a phrase that appears twice in one line counts twice. Contributions are
/// summed in sorted order, which makes the result independent of corpus order.
pub fn build_mapping(
    corpus: &[TokenizedRecord],
    stopwords: &BTreeSet<String>,
    min_count: u64,
) -> Result<MappingFile, MappingError> {
    if corpus.is_empty() {
        return Err(MappingError::EmptyCorpus);
    }
    if min_count == 0 {
        return Err(MappingError::InvalidMinCount);
    }
    let mut occurrences: BTreeMap<PhraseKey, Vec<f64>> = BTreeMap::new();
    for record in corpus {
        for phrase in extract_phrases(&record.tokens) {
            if phrase.kind == PhraseKind::Unigram && stopwords.contains(&phrase.tokens[0]) {
                continue;
            }
            occurrences
                .entry(PhraseKey::from(&phrase))
                .or_default()
                .push(record.open_rate);
        }
    }

    let mut mapping = MappingFile::new(stopwords.clone());
    for (key, mut rates) in occurrences {
        let count = rates.len() as u64;
        if count < min_count {
            continue;
        }
        rates.sort_by(f64::total_cmp);
        let (lo, hi) = (rates[0], rates[rates.len() - 1]);
        let mean = rates.iter().sum::<f64>() / rates.len() as f64;
        let stats = PhraseStats {
            count,
            // Rounding in the sum can push the mean an ulp outside its inputs.
            avg_open_rate: mean.clamp(lo, hi),
        };
        mapping
            .insert(key, stats)
            .expect("entries built from a validated corpus are well formed");
    }
    Ok(mapping)
}

/// Stored rate for `phrase`, if any.
pub fn lookup(mapping: &MappingFile, phrase: &Phrase) -> Option<f64> {
    mapping.get(&PhraseKey::from(phrase)).map(|s| s.avg_open_rate)
}

pub fn persist_mapping(mapping: &MappingFile, path: impl AsRef<Path>) -> Result<(), MappingError> {
    let path = path.as_ref();
    fs::write(path, mapping.to_tsv()).map_err(|source| MappingError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_mapping(path: impl AsRef<Path>) -> Result<MappingFile, MappingError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| MappingError::Io {
        path: path.display().to_string(),
        source,
    })?;
    MappingFile::from_tsv(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_owned).collect()
    }

    fn rec(s: &str, r: f64) -> TokenizedRecord {
        TokenizedRecord::new(toks(s), r)
    }

    fn two_line_mapping() -> MappingFile {
        build_mapping(&[rec("big sale", 0.2), rec("big deal", 0.4)], &BTreeSet::new(), 1).unwrap()
    }

    fn stats(m: &MappingFile, kind: PhraseKind, text: &str) -> Option<(u64, f64)> {
        m.get(&PhraseKey::new(kind, text)).map(|s| (s.count, s.avg_open_rate))
    }

    #[test]
    fn extracts_all_windows() {
        let phrases = extract_phrases(&toks("last chance great"));
        let texts: Vec<_> = phrases.iter().map(|p| (p.kind, p.text(), p.span)).collect();
        use PhraseKind::*;
        assert_eq!(
            texts,
            vec![
                (Unigram, "last".into(), Span { start: 0, end: 1 }),
                (Unigram, "chance".into(), Span { start: 1, end: 2 }),
                (Unigram, "great".into(), Span { start: 2, end: 3 }),
                (Bigram, "last chance".into(), Span { start: 0, end: 2 }),
                (Bigram, "chance great".into(), Span { start: 1, end: 3 }),
                (Trigram, "last chance great".into(), Span { start: 0, end: 3 }),
            ]
        );
        assert_eq!(extract_phrases(&toks("sale")).len(), 1);
        assert!(extract_phrases(&[]).is_empty());
    }

    #[test]
    fn sub_phrases_keep_absolute_spans() {
        let tokens = toks("a b c d e");
        let tri = Phrase::at(&tokens, 2, PhraseKind::Trigram);
        let bigrams = tri.sub_phrases(PhraseKind::Bigram);
        assert_eq!(bigrams[0].span, Span { start: 2, end: 4 });
        assert_eq!(bigrams[1].text(), "d e");
        assert_eq!(tri.sub_phrases(PhraseKind::Unigram)[2].span, Span { start: 4, end: 5 });
    }

    #[test]
    fn builds_hand_averaged_mapping() {
        let m = two_line_mapping();
        use PhraseKind::*;
        assert_eq!(m.len(), 5);
        assert_eq!(stats(&m, Unigram, "big"), Some((2, (0.2 + 0.4) / 2.0)));
        assert_eq!(stats(&m, Unigram, "sale"), Some((1, 0.2)));
        assert_eq!(stats(&m, Unigram, "deal"), Some((1, 0.4)));
        assert_eq!(stats(&m, Bigram, "big sale"), Some((1, 0.2)));
        assert_eq!(stats(&m, Bigram, "big deal"), Some((1, 0.4)));
        assert!((stats(&m, Unigram, "big").unwrap().1 - 0.3).abs() < 1e-15);
    }

    #[test]
    fn stopwords_filter_unigrams_only() {
        let stop: BTreeSet<String> = ["up", "to"].iter().map(|s| s.to_string()).collect();
        let m = build_mapping(&[rec("save up to", 0.3)], &stop, 1).unwrap();
        assert_eq!(m.count_of_kind(PhraseKind::Unigram), 1);
        assert!(stats(&m, PhraseKind::Unigram, "save").is_some());
        assert!(stats(&m, PhraseKind::Bigram, "save up").is_some());
        assert!(stats(&m, PhraseKind::Bigram, "up to").is_some());
        assert!(stats(&m, PhraseKind::Trigram, "save up to").is_some());
        let up = Phrase::at(&toks("save up to"), 1, PhraseKind::Unigram);
        assert_eq!(lookup(&m, &up), None);
    }

    #[test]
    fn repeated_record_scales_counts_only() {
        let one = build_mapping(&[rec("flash sale today", 0.1)], &BTreeSet::new(), 1).unwrap();
        let many = build_mapping(&vec![rec("flash sale today", 0.1); 3], &BTreeSet::new(), 1).unwrap();
        assert_eq!(one.len(), many.len());
        for ((k1, s1), (k3, s3)) in one.entries().zip(many.entries()) {
            assert_eq!(k1, k3);
            assert_eq!(s1.count * 3, s3.count);
            assert_eq!(s1.avg_open_rate, s3.avg_open_rate);
        }
    }

    #[test]
    fn repeated_phrase_counts_per_occurrence() {
        let m = build_mapping(&[rec("sale sale", 0.5), rec("sale", 0.2)], &BTreeSet::new(), 1).unwrap();
        let (count, rate) = stats(&m, PhraseKind::Unigram, "sale").unwrap();
        assert_eq!(count, 3);
        assert!((rate - 0.4).abs() < 1e-15);
    }

    #[test]
    fn min_count_drops_rare_phrases() {
        let m = build_mapping(&[rec("big sale", 0.2), rec("big deal", 0.4)], &BTreeSet::new(), 2).unwrap();
        assert_eq!(m.len(), 1);
        assert!(matches!(
            build_mapping(&[rec("x", 0.1)], &BTreeSet::new(), 0),
            Err(MappingError::InvalidMinCount)
        ));
        assert!(matches!(
            build_mapping(&[], &BTreeSet::new(), 1),
            Err(MappingError::EmptyCorpus)
        ));
    }

    #[test]
    fn lookup_hits_and_misses() {
        let m = two_line_mapping();
        let t = toks("big sale now");
        assert_eq!(lookup(&m, &Phrase::at(&t, 1, PhraseKind::Unigram)), Some(0.2));
        assert_eq!(lookup(&m, &Phrase::at(&t, 0, PhraseKind::Trigram)), None);
        // kinds are namespaced: the unigram "big" does not answer a bigram query
        let key = PhraseKey::new(PhraseKind::Bigram, "big");
        assert!(m.get(&key).is_none());
    }

    #[test]
    fn tsv_round_trip() {
        let mut m = two_line_mapping();
        m.stopwords.insert("the".into());
        let text = m.to_tsv();
        assert!(text.starts_with("#nlorp-mapping v1\n#stopwords the\n"));
        assert_eq!(MappingFile::from_tsv(&text).unwrap(), m);

        let empty = MappingFile::new(BTreeSet::new());
        assert_eq!(empty.to_tsv(), "#nlorp-mapping v1\n#stopwords\n");
        assert_eq!(MappingFile::from_tsv(&empty.to_tsv()).unwrap(), empty);
    }

    #[test]
    fn persists_to_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mapping.tsv");
        let m = two_line_mapping();
        persist_mapping(&m, &path).unwrap();
        assert_eq!(load_mapping(&path).unwrap(), m);
        assert!(matches!(
            load_mapping(dir.path().join("missing")),
            Err(MappingError::Io { .. })
        ));
    }

    #[test]
    fn rejects_bad_files() {
        assert!(matches!(
            MappingFile::from_tsv("#nlorp-mapping v99\n#stopwords\n"),
            Err(MappingError::VersionMismatch(_))
        ));
        assert!(matches!(
            MappingFile::from_tsv(""),
            Err(MappingError::VersionMismatch(_))
        ));
        for body in [
            "1\tbig\t2",
            "4\tbig\t2\t0.3",
            "1\tbig\t0\t0.3",
            "1\tbig\t2\t1.3",
            "1\tbig\t2\tabc",
            "2\tbig\t2\t0.3",
            "1\tthe\t2\t0.3",
            "1\tbig\t2\t0.3\n1\tbig\t2\t0.3",
        ] {
            let text = format!("#nlorp-mapping v1\n#stopwords the\n{body}\n");
            assert!(
                matches!(MappingFile::from_tsv(&text), Err(MappingError::CorruptEntry { .. })),
                "{body:?} should be rejected"
            );
        }
        assert!(matches!(
            MappingFile::from_tsv("#nlorp-mapping v1\nnot stopwords\n"),
            Err(MappingError::CorruptEntry { line: 2, .. })
        ));
    }

    #[test]
    fn build_id_tracks_content() {
        let a = two_line_mapping();
        let b = build_mapping(&[rec("big sale", 0.2), rec("big deal", 0.5)], &BTreeSet::new(), 1).unwrap();
        assert_eq!(a.build_id(), two_line_mapping().build_id());
        assert_ne!(a.build_id(), b.build_id());
        assert_eq!(a.build_id().len(), 16);
    }

    fn corpus_strategy() -> impl Strategy<Value = Vec<TokenizedRecord>> {
        let token = prop::sample::select(vec!["a", "b", "c", "d", "the", "sale"]);
        let line = (prop::collection::vec(token, 0..7), 0.0f64..=1.0)
            .prop_map(|(t, r)| TokenizedRecord::new(t.into_iter().map(str::to_owned).collect(), r));
        prop::collection::vec(line, 1..30)
    }

    proptest! {
        #[test]
        fn phrase_counts_match_formula(n in 0usize..12) {
            let tokens: Vec<String> = (0..n).map(|i| format!("t{i}")).collect();
            let phrases = extract_phrases(&tokens);
            prop_assert_eq!(phrases.len(), n + n.saturating_sub(1) + n.saturating_sub(2));
            for p in phrases {
                prop_assert_eq!(p.span.end - p.span.start, p.kind.n_tokens());
                prop_assert_eq!(&tokens[p.span.start..p.span.end], p.tokens.as_slice());
            }
        }

        #[test]
        fn mapping_is_order_independent_and_bounded(corpus in corpus_strategy(), seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let stop: BTreeSet<String> = ["the".to_string()].into();
            let built = build_mapping(&corpus, &stop, 1).unwrap();
            let mut shuffled = corpus.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(&build_mapping(&shuffled, &stop, 1).unwrap(), &built);

            for (key, s) in built.entries() {
                let rates: Vec<f64> = corpus
                    .iter()
                    .filter(|r| {
                        r.tokens.windows(key.kind.n_tokens()).any(|w| w.join(" ") == key.text)
                    })
                    .map(|r| r.open_rate)
                    .collect();
                let lo = rates.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = rates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(lo <= s.avg_open_rate && s.avg_open_rate <= hi);
            }
            prop_assert_eq!(MappingFile::from_tsv(&built.to_tsv()).unwrap(), built);
        }
    }
}
