// Train on a handful of labelled subject lines, then score a new one.
//
//     cargo run --example quickstart

use nlorp::corpus::SubjectLineRecord;
use nlorp::lstm::LstmHyperparams;
use nlorp::pipeline::{train_artifacts, TrainingConfig};

const HISTORY: &[(&str, f64)] = &[
    ("Last chance: summer escapes up to 40% off", 0.21),
    ("Great summer escapes for the whole family", 0.18),
    ("Save up to 25% on weekend getaways", 0.16),
    ("Your weekend getaway is waiting", 0.12),
    ("Last chance to save on flights", 0.19),
    ("Flash sale: flights from $49", 0.23),
    ("Summer escapes, now with free breakfast", 0.15),
    ("Members save up to 30% tonight", 0.14),
    ("Great deals on city breaks", 0.11),
    ("Last chance: great city breaks from $99", 0.2),
];

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let records = HISTORY
        .iter()
        .map(|&(text, rate)| SubjectLineRecord::new(text, rate))
        .collect::<Result<Vec<_>, _>>()?;
    let config = TrainingConfig {
        lstm: LstmHyperparams {
            epochs: 5,
            ..LstmHyperparams::default()
        },
        ..TrainingConfig::default()
    };
    let artifacts = train_artifacts(&records, &config)?;
    println!(
        "{} phrases in the mapping, LSTM loss {:.4} -> {:.4}",
        artifacts.mapping.len(),
        artifacts.report.initial_loss,
        artifacts.report.final_loss()
    );

    let handle = artifacts.into_handle();
    let prediction = handle.predict("Last chance - Great summer escapes. Save up to 25%")?;
    println!("predicted open rate: {:.1}%", 100.0 * prediction.open_rate);
    for phrase in &prediction.selected {
        println!("  {:<24} {:.1}%", phrase.trigram.text(), 100.0 * phrase.rate);
    }
    Ok(())
}
