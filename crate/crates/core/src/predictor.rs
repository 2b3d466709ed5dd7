//! Subject-line open-rate prediction.
//!
//! 1. Normalize the subject line and enumerate its trigrams.
//! 2. Resolve each component phrase: the stored mapping rate when present,
//!    otherwise the LSTM estimate.
//! 3. Score each trigram from its own rate, its two bigrams and its
//!    non-stopword unigrams (see [`Aggregation`]).
//! 4. Greedily keep the best trigrams with pairwise-disjoint token spans, at
//!    most five.
//! 5. The predicted rate is the mean of the kept scores; the kept trigrams are
//!    the explanation.

use std::cell::RefCell;
use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::normalize_text;
use crate::lstm::LstmModel;
use crate::ngram_index::{lookup, phrases_of_kind, MappingFile, Phrase, PhraseKind};

/// Maximum number of trigrams averaged into a prediction.
pub const DEFAULT_TOP_K: usize = 5;

#[derive(Debug, Error)]
pub enum PredictError {
    #[error("subject line has no tokens after normalization")]
    EmptySubjectLine,
    #[error("model was trained against mapping {model:?}, but the loaded mapping is {mapping:?}")]
    BuildMismatch { mapping: String, model: String },
    #[error("top-k must be at least 1")]
    InvalidTopK,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateSource {
    Mapping,
    Lstm,
}

/// One resolved phrase rate.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentRate {
    pub phrase: Phrase,
    pub rate: f64,
    pub source: RateSource,
}

/// How a trigram's score combines its component rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Mean of {own rate, mean bigram rate, mean unigram rate}, skipping
    /// empty groups.
    #[default]
    GroupMeans,
    /// Mean over every individual component rate.
    FlatMean,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// The subject line's rate from the rates of its selected units: their
/// arithmetic mean, however many were selected.
pub fn final_open_rate(selected_rates: &[f64]) -> f64 {
    mean(selected_rates)
}

impl Aggregation {
    pub fn combine(self, own: f64, bigrams: &[f64], unigrams: &[f64]) -> f64 {
        match self {
            Aggregation::GroupMeans => {
                let mut groups = vec![own];
                if !bigrams.is_empty() {
                    groups.push(mean(bigrams));
                }
                if !unigrams.is_empty() {
                    groups.push(mean(unigrams));
                }
                mean(&groups)
            }
            Aggregation::FlatMean => {
                let all: Vec<f64> = std::iter::once(own)
                    .chain(bigrams.iter().copied())
                    .chain(unigrams.iter().copied())
                    .collect();
                mean(&all)
            }
        }
    }
}

/// Score of one scored unit. For subject lines of three or more tokens the
/// unit is a trigram; shorter lines score their single bigram or unigram.
#[derive(Debug, Clone, PartialEq)]
pub struct TrigramScore {
    pub trigram: Phrase,
    pub rate: f64,
    pub trigram_component: ComponentRate,
    pub bigram_components: Vec<ComponentRate>,
    pub unigram_components: Vec<ComponentRate>,
}

impl TrigramScore {
    /// Recomputes `rate` from the recorded components.
    pub fn recompute(&self, aggregation: Aggregation) -> f64 {
        let rates = |c: &[ComponentRate]| c.iter().map(|c| c.rate).collect::<Vec<_>>();
        aggregation.combine(
            self.trigram_component.rate,
            &rates(&self.bigram_components),
            &rates(&self.unigram_components),
        )
    }

    pub fn components(&self) -> impl Iterator<Item = &ComponentRate> {
        std::iter::once(&self.trigram_component)
            .chain(&self.bigram_components)
            .chain(&self.unigram_components)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub open_rate: f64,
    /// Selected units in selection order (best first).
    pub selected: Vec<TrigramScore>,
    pub tokens: Vec<String>,
}

/// Ordering used by selection: higher rate first, then leftmost span, then
/// lexicographically smaller phrase text.
pub fn selection_order(a: &TrigramScore, b: &TrigramScore) -> Ordering {
    b.rate
        .total_cmp(&a.rate)
        .then(a.trigram.span.start.cmp(&b.trigram.span.start))
        .then_with(|| a.trigram.text().cmp(&b.trigram.text()))
}

/// Greedy non-overlapping selection: walk candidates in [`selection_order`]
/// and keep each one whose span is disjoint from everything kept so far,
/// stopping after `k`.
pub fn select_top_nonoverlapping(scores: &[TrigramScore], k: usize) -> Vec<TrigramScore> {
    let mut order: Vec<&TrigramScore> = scores.iter().collect();
    order.sort_by(|a, b| selection_order(a, b));
    let mut kept: Vec<TrigramScore> = Vec::with_capacity(k.min(scores.len()));
    for cand in order {
        if kept.len() == k {
            break;
        }
        if kept.iter().all(|s| !s.trigram.span.overlaps(&cand.trigram.span)) {
            kept.push(cand.clone());
        }
    }
    kept
}

/// Immutable bundle of the two trained artifacts plus prediction settings.
/// Resolved component rates for one prediction, keyed by kind and text.
type RateCache = RefCell<HashMap<(PhraseKind, String), (f64, RateSource)>>;

#[derive(Debug, Clone)]
pub struct PredictorHandle {
    mapping: MappingFile,
    model: LstmModel,
    aggregation: Aggregation,
    top_k: usize,
    build_id: String,
}

impl PredictorHandle {
    /// Pairs a mapping with the model trained against it. Fails when the
    /// model's build stamp names a different mapping.
    pub fn new(mapping: MappingFile, model: LstmModel) -> Result<Self, PredictError> {
        let build_id = mapping.build_id();
        if model.build_id != build_id {
            return Err(PredictError::BuildMismatch {
                mapping: build_id,
                model: model.build_id.clone(),
            });
        }
        Ok(Self {
            mapping,
            model,
            aggregation: Aggregation::default(),
            top_k: DEFAULT_TOP_K,
            build_id,
        })
    }

    pub fn with_aggregation(mut self, aggregation: Aggregation) -> Self {
        self.aggregation = aggregation;
        self
    }

    pub fn with_top_k(mut self, k: usize) -> Result<Self, PredictError> {
        if k == 0 {
            return Err(PredictError::InvalidTopK);
        }
        self.top_k = k;
        Ok(self)
    }

    pub fn mapping(&self) -> &MappingFile {
        &self.mapping
    }

    pub fn model(&self) -> &LstmModel {
        &self.model
    }

    pub fn aggregation(&self) -> Aggregation {
        self.aggregation
    }

    pub fn top_k(&self) -> usize {
        self.top_k
    }

    pub fn build_id(&self) -> &str {
        &self.build_id
    }

    /// Stored rate when the phrase is in the mapping (even if that rate is
    /// zero), otherwise the LSTM estimate.
    pub fn phrase_rate(&self, phrase: &Phrase) -> (f64, RateSource) {
        match lookup(&self.mapping, phrase) {
            Some(rate) => (rate, RateSource::Mapping),
            None => (self.model.predict(&phrase.text()), RateSource::Lstm),
        }
    }

    fn component(&self, phrase: Phrase, cache: &RateCache) -> ComponentRate {
        let key = (phrase.kind, phrase.text());
        let cached = cache.borrow().get(&key).copied();
        let (rate, source) = cached.unwrap_or_else(|| {
            let r = self.phrase_rate(&phrase);
            cache.borrow_mut().insert(key, r);
            r
        });
        ComponentRate { phrase, rate, source }
    }

    fn score_unit(&self, unit: &Phrase, stopwords: &BTreeSet<String>, cache: &RateCache) -> TrigramScore {
        let trigram_component = self.component(unit.clone(), cache);
        let (bigram_components, unigram_components) = if unit.kind == PhraseKind::Unigram {
            (Vec::new(), Vec::new())
        } else {
            let bigrams = if unit.kind == PhraseKind::Trigram {
                unit.sub_phrases(PhraseKind::Bigram)
                    .into_iter()
                    .map(|p| self.component(p, cache))
                    .collect()
            } else {
                Vec::new()
            };
            let unigrams = unit
                .sub_phrases(PhraseKind::Unigram)
                .into_iter()
                .filter(|p| !stopwords.contains(&p.tokens[0]))
                .map(|p| self.component(p, cache))
                .collect();
            (bigrams, unigrams)
        };
        let mut score = TrigramScore {
            trigram: unit.clone(),
            rate: 0.0,
            trigram_component,
            bigram_components,
            unigram_components,
        };
        score.rate = score.recompute(self.aggregation);
        score
    }

    /// Scores one trigram against `stopwords`, which are excluded from the
    /// unigram group.
    pub fn trigram_score(&self, trigram: &Phrase, stopwords: &BTreeSet<String>) -> TrigramScore {
        debug_assert_eq!(trigram.kind, PhraseKind::Trigram);
        self.score_unit(trigram, stopwords, &RefCell::default())
    }

    /// Every scored unit of a tokenized subject line, left to right.
    pub fn score_tokens(&self, tokens: &[String]) -> Vec<TrigramScore> {
        let unit_kind = PhraseKind::from_len(tokens.len().min(3)).expect("caller checked non-empty");
        let cache = RefCell::default();
        phrases_of_kind(tokens, unit_kind)
            .iter()
            .map(|unit| self.score_unit(unit, self.mapping.stopwords(), &cache))
            .collect()
    }

    pub fn predict(&self, subject_line: &str) -> Result<Prediction, PredictError> {
        let tokens = normalize_text(subject_line);
        if tokens.is_empty() {
            return Err(PredictError::EmptySubjectLine);
        }
        let scores = self.score_tokens(&tokens);
        let selected = select_top_nonoverlapping(&scores, self.top_k);
        let open_rate = final_open_rate(&selected.iter().map(|s| s.rate).collect::<Vec<_>>());
        Ok(Prediction {
            open_rate,
            selected,
            tokens,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TokenizedRecord;
    use crate::lstm::LstmHyperparams;
    use crate::ngram_index::{build_mapping, PhraseKey, PhraseStats, Span};

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_owned).collect()
    }

    fn handle_for(mapping: MappingFile) -> PredictorHandle {
        let model = LstmModel::zeros(LstmHyperparams::default())
            .unwrap()
            .with_build_id(mapping.build_id());
        PredictorHandle::new(mapping, model).unwrap()
    }

    fn mapping_with(entries: &[(PhraseKind, &str, f64)], stopwords: &[&str]) -> MappingFile {
        let mut m = MappingFile::new(stopwords.iter().map(|s| s.to_string()).collect());
        for (kind, text, rate) in entries {
            m.insert(
                PhraseKey::new(*kind, *text),
                PhraseStats {
                    count: 1,
                    avg_open_rate: *rate,
                },
            )
            .unwrap();
        }
        m
    }

    fn score(span: (usize, usize), rate: f64, text: &str) -> TrigramScore {
        let phrase = Phrase {
            tokens: toks(text),
            kind: PhraseKind::Trigram,
            span: Span {
                start: span.0,
                end: span.1,
            },
        };
        let comp = ComponentRate {
            phrase: phrase.clone(),
            rate,
            source: RateSource::Mapping,
        };
        TrigramScore {
            trigram: phrase,
            rate,
            trigram_component: comp,
            bigram_components: vec![],
            unigram_components: vec![],
        }
    }

    #[test]
    fn worked_example_average() {
        assert!((final_open_rate(&[0.17, 0.13, 0.18]) - 0.16).abs() < 1e-12);
    }

    #[test]
    fn group_mean_aggregation() {
        let agg = Aggregation::GroupMeans;
        let r = agg.combine(0.30, &[0.20, 0.40], &[0.10, 0.20, 0.60]);
        assert!((r - 0.30).abs() < 1e-15);
        assert!((agg.combine(0.2, &[0.4, 0.4], &[]) - 0.3).abs() < 1e-15);
        assert_eq!(agg.combine(0.25, &[0.25, 0.25], &[0.25]), 0.25);
        assert!((Aggregation::FlatMean.combine(0.3, &[0.2, 0.4], &[0.1, 0.2, 0.6]) - 1.8 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn phrase_rate_prefers_mapping_presence() {
        let m = mapping_with(
            &[(PhraseKind::Unigram, "free", 0.0), (PhraseKind::Unigram, "big", 0.3)],
            &[],
        );
        let h = handle_for(m);
        let t = toks("free big new");
        assert_eq!(
            h.phrase_rate(&Phrase::at(&t, 0, PhraseKind::Unigram)),
            (0.0, RateSource::Mapping)
        );
        assert_eq!(
            h.phrase_rate(&Phrase::at(&t, 1, PhraseKind::Unigram)),
            (0.3, RateSource::Mapping)
        );
        assert_eq!(
            h.phrase_rate(&Phrase::at(&t, 2, PhraseKind::Unigram)),
            (0.5, RateSource::Lstm)
        );
    }

    #[test]
    fn trigram_score_records_components() {
        use PhraseKind::*;
        let m = mapping_with(
            &[
                (Trigram, "a b c", 0.30),
                (Bigram, "a b", 0.20),
                (Bigram, "b c", 0.40),
                (Unigram, "a", 0.10),
                (Unigram, "b", 0.20),
                (Unigram, "c", 0.60),
            ],
            &[],
        );
        let h = handle_for(m);
        let tri = Phrase::at(&toks("a b c"), 0, Trigram);
        let s = h.trigram_score(&tri, &BTreeSet::new());
        assert!((s.rate - 0.30).abs() < 1e-15);
        assert_eq!(s.bigram_components.len(), 2);
        assert_eq!(s.unigram_components.len(), 3);
        assert!(s.components().all(|c| c.source == RateSource::Mapping));
        assert_eq!(s.rate, s.recompute(Aggregation::GroupMeans));
    }

    #[test]
    fn stopword_unigrams_leave_the_group() {
        use PhraseKind::*;
        let m = mapping_with(
            &[
                (Trigram, "up to it", 0.2),
                (Bigram, "up to", 0.4),
                (Bigram, "to it", 0.4),
            ],
            &["up", "to", "it"],
        );
        let h = handle_for(m);
        let tri = Phrase::at(&toks("up to it"), 0, Trigram);
        let s = h.trigram_score(&tri, h.mapping().stopwords());
        assert!(s.unigram_components.is_empty());
        assert!((s.rate - 0.3).abs() < 1e-15);
    }

    #[test]
    fn greedy_selection_skips_overlaps() {
        let scores = [
            score((0, 3), 0.5, "a b c"),
            score((1, 4), 0.4, "b c d"),
            score((3, 6), 0.3, "d e f"),
        ];
        let kept = select_top_nonoverlapping(&scores, 5);
        let spans: Vec<_> = kept
            .iter()
            .map(|s| (s.trigram.span.start, s.trigram.span.end))
            .collect();
        assert_eq!(spans, [(0, 3), (3, 6)]);

        assert_eq!(select_top_nonoverlapping(&scores[1..2], 5), vec![scores[1].clone()]);

        let disjoint: Vec<_> = (0..7)
            .map(|i| score((3 * i, 3 * i + 3), 0.1 * i as f64, "x y z"))
            .collect();
        let kept = select_top_nonoverlapping(&disjoint, 5);
        let starts: Vec<_> = kept.iter().map(|s| s.trigram.span.start).collect();
        assert_eq!(starts, [18, 15, 12, 9, 6]);
    }

    #[test]
    fn ties_prefer_leftmost_then_text() {
        let scores = [score((2, 5), 0.4, "c d e"), score((0, 3), 0.4, "a b c")];
        let kept = select_top_nonoverlapping(&scores, 5);
        assert_eq!(kept[0].trigram.span.start, 0);
        assert_eq!(kept.len(), 1);

        let a = score((0, 3), 0.4, "b b b");
        let b = score((0, 3), 0.4, "a a a");
        assert_eq!(selection_order(&a, &b), Ordering::Greater);
    }

    #[test]
    fn fully_covered_line_predicts_the_constant() {
        let line = "last chance great summer escapes save up to 25%";
        let corpus = vec![TokenizedRecord::from_text(line, 0.17)];
        let m = build_mapping(&corpus, &crate::stopwords::default_stopwords(), 1).unwrap();
        let h = handle_for(m);
        let p = h.predict(line).unwrap();
        assert!((p.open_rate - 0.17).abs() < 1e-15);
        assert_eq!(p.selected.len(), 3);
        assert!(p
            .selected
            .iter()
            .flat_map(|s| s.components())
            .all(|c| c.source == RateSource::Mapping));
    }

    #[test]
    fn short_lines_fall_back() {
        use PhraseKind::*;
        let m = mapping_with(
            &[(Bigram, "big sale", 0.2), (Unigram, "big", 0.4), (Unigram, "sale", 0.6)],
            &["the"],
        );
        let h = handle_for(m);

        let p = h.predict("Big sale!").unwrap();
        assert_eq!(p.selected.len(), 1);
        assert_eq!(p.selected[0].trigram.kind, Bigram);
        assert!((p.open_rate - 0.35).abs() < 1e-15);

        let p = h.predict("sale").unwrap();
        assert_eq!(p.open_rate, 0.6);

        let p = h.predict("the").unwrap();
        assert_eq!(p.open_rate, 0.5);
        assert_eq!(p.selected[0].trigram_component.source, RateSource::Lstm);

        assert!(matches!(h.predict(" ?! "), Err(PredictError::EmptySubjectLine)));
    }

    #[test]
    fn build_stamp_is_enforced() {
        let m = mapping_with(&[(PhraseKind::Unigram, "big", 0.3)], &[]);
        let model = LstmModel::zeros(LstmHyperparams::default())
            .unwrap()
            .with_build_id("deadbeef");
        assert!(matches!(
            PredictorHandle::new(m, model),
            Err(PredictError::BuildMismatch { .. })
        ));
    }

    #[test]
    fn prediction_is_mean_of_selected() {
        let corpus: Vec<_> = [
            ("huge summer sale on shoes", 0.3),
            ("summer escapes for less", 0.2),
            ("last chance for shoes", 0.1),
        ]
        .iter()
        .map(|(t, r)| TokenizedRecord::from_text(t, *r))
        .collect();
        let m = build_mapping(&corpus, &crate::stopwords::default_stopwords(), 1).unwrap();
        let model = LstmModel::new(LstmHyperparams::default())
            .unwrap()
            .with_build_id(m.build_id());
        let h = PredictorHandle::new(m, model).unwrap();
        let p = h
            .predict("last chance summer sale on new shoes for less today")
            .unwrap();
        let mean = p.selected.iter().map(|s| s.rate).sum::<f64>() / p.selected.len() as f64;
        assert!((p.open_rate - mean).abs() < 1e-12);
        assert!(p.selected.len() <= 5);
        for (i, a) in p.selected.iter().enumerate() {
            for b in &p.selected[i + 1..] {
                assert!(!a.trigram.span.overlaps(&b.trigram.span));
            }
        }
        assert!(p
            .selected
            .iter()
            .flat_map(|s| s.components())
            .any(|c| c.source == RateSource::Lstm));
    }
}
