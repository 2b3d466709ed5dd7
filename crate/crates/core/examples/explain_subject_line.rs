// How a prediction is assembled: per-trigram component rates, greedy
// selection of non-overlapping trigrams, and the final average.
//
//     cargo run --example explain_subject_line

use nlorp::corpus::normalize_text;
use nlorp::lstm::{LstmHyperparams, LstmModel};
use nlorp::ngram_index::{MappingFile, PhraseKey, PhraseKind, PhraseStats};
use nlorp::predictor::{Aggregation, PredictorHandle, RateSource};
use nlorp::stopwords::default_stopwords;

const LINE: &str = "Last chance - Great summer escapes. Save up to 25%";

/// A mapping where every phrase inside one of three blocks of three tokens
/// carries that block's rate and phrases straddling two blocks carry 0.
fn block_mapping(tokens: &[String], blocks: [f64; 3]) -> MappingFile {
    let mut mapping = MappingFile::new(default_stopwords());
    let kinds = [PhraseKind::Unigram, PhraseKind::Bigram, PhraseKind::Trigram];
    for (n, kind) in (1..=3).zip(kinds) {
        for s in 0..=tokens.len() - n {
            let text = tokens[s..s + n].join(" ");
            if kind == PhraseKind::Unigram && mapping.is_stopword(&text) {
                continue;
            }
            let avg_open_rate = if s / 3 == (s + n - 1) / 3 { blocks[s / 3] } else { 0.0 };
            mapping
                .insert(
                    PhraseKey::new(kind, text),
                    PhraseStats {
                        count: 1,
                        avg_open_rate,
                    },
                )
                .expect("valid entry");
        }
    }
    mapping
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tokens = normalize_text(LINE);
    println!("tokens: {tokens:?}\n");

    let mapping = block_mapping(&tokens, [0.17, 0.13, 0.18]);
    let model = LstmModel::new(LstmHyperparams::default())?.with_build_id(mapping.build_id());
    let handle = PredictorHandle::new(mapping, model)?;

    println!("every trigram, left to right:");
    for score in handle.score_tokens(&tokens) {
        println!(
            "  {:<26} {}  {:.4}",
            score.trigram.text(),
            score.trigram.span,
            score.rate
        );
    }

    let prediction = handle.predict(LINE)?;
    println!("\nselected (highest first, no shared tokens):");
    for s in &prediction.selected {
        println!("  {:<26} {:.2}", s.trigram.text(), s.rate);
        for c in s.components() {
            let source = if c.source == RateSource::Mapping {
                "mapping"
            } else {
                "lstm"
            };
            println!("      {:<22} {:.2}  {source}", c.phrase.text(), c.rate);
        }
    }
    println!("\nopen rate = mean of selected = {:.2}", prediction.open_rate);

    // The same line with no mapping support at all: every component comes
    // from the (untrained) LSTM.
    let empty = MappingFile::new(default_stopwords());
    let model = LstmModel::new(LstmHyperparams::default())?.with_build_id(empty.build_id());
    let cold = PredictorHandle::new(empty, model)?.with_aggregation(Aggregation::FlatMean);
    let p = cold.predict("Totally new words")?;
    println!(
        "\nunseen line scored by the fallback alone: {:.4} ({} component rates)",
        p.open_rate,
        p.selected[0].components().count()
    );

    // Fewer than three tokens: the whole line is the single scored unit.
    let p = handle.predict("Summer escapes")?;
    println!("two-token line scores its bigram unit: {:.2}", p.open_rate);
    Ok(())
}
