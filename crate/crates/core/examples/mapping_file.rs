// Build the phrase -> historical open rate table, write it, read it back.
//
//     cargo run --example mapping_file

use std::collections::BTreeSet;

use nlorp::corpus::TokenizedRecord;
use nlorp::ngram_index::{build_mapping, extract_phrases, load_mapping, lookup, persist_mapping, PhraseKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = vec![
        TokenizedRecord::from_text("big sale", 0.2),
        TokenizedRecord::from_text("big deal", 0.4),
    ];
    let mapping = build_mapping(&corpus, &BTreeSet::new(), 1)?;
    for (key, stats) in mapping.entries() {
        println!(
            "{:<8} {:<10} count {}  avg {:.2}",
            format!("{:?}", key.kind),
            key.text,
            stats.count,
            stats.avg_open_rate
        );
    }

    // Stopwords are dropped from unigrams only.
    let stopwords: BTreeSet<String> = ["up", "to"].map(String::from).into();
    let save = build_mapping(&[TokenizedRecord::from_text("save up to", 0.3)], &stopwords, 1)?;
    println!(
        "\n\"save up to\": {} unigram(s), {} bigram(s), {} trigram(s)",
        save.count_of_kind(PhraseKind::Unigram),
        save.count_of_kind(PhraseKind::Bigram),
        save.count_of_kind(PhraseKind::Trigram)
    );

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("mapping.tsv");
    persist_mapping(&mapping, &path)?;
    println!("\n{}:\n{}", path.display(), std::fs::read_to_string(&path)?);

    let reloaded = load_mapping(&path)?;
    assert_eq!(reloaded, mapping);
    println!("build id {}", reloaded.build_id());
    for phrase in extract_phrases(&TokenizedRecord::from_text("big sale today", 0.0).tokens) {
        match lookup(&reloaded, &phrase) {
            Some(rate) => println!("  {:<16} {rate:.2}", phrase.text()),
            None => println!("  {:<16} not in the table", phrase.text()),
        }
    }
    Ok(())
}
