// k-fold cross validation on a synthetic corpus with a known generating
// process.
//
//     cargo run --example cross_validate

use nlorp::corpus::generate_synthetic_corpus;
use nlorp::evaluation::{cross_validate, CvConfig};
use nlorp::lstm::LstmHyperparams;
use nlorp::pipeline::TrainingConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = generate_synthetic_corpus(1, 200, 50, 0.0)?;
    let config = CvConfig {
        folds: 5,
        cutoff: 0.1,
        seed: 1,
        training: TrainingConfig {
            lstm: LstmHyperparams {
                embed_dim: 8,
                hidden_dim: 16,
                epochs: 3,
                ..LstmHyperparams::default()
            },
            ..TrainingConfig::default()
        },
    };
    let report = cross_validate(&corpus.records, &config)?;
    print!("{}", report.summary_table());
    println!("\n{}", serde_json::to_string_pretty(&report.groups)?);
    Ok(())
}
