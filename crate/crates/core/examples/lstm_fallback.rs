// Train the character-level fallback model, verify its gradients against
// finite differences, and persist it.
//
//     cargo run --example lstm_fallback

use nlorp::corpus::{generate_synthetic_corpus, TokenizedRecord};
use nlorp::lstm::{gradient_check, load_model, persist_model, train, LstmHyperparams, LstmModel};
use nlorp::ngram_index::build_mapping;
use nlorp::pipeline::lstm_dataset;
use nlorp::stopwords::default_stopwords;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fresh = LstmModel::new(LstmHyperparams::default())?;
    let check = gradient_check(&fresh, ("great summer escapes", 0.2), 1e-5, 60, 0)?;
    println!(
        "gradient check: {} parameters, worst relative deviation {:.2e} ({} #{})",
        check.checked, check.max_deviation, check.worst.0, check.worst.1
    );

    let corpus = generate_synthetic_corpus(5, 30, 20, 1.0)?;
    let tokenized: Vec<TokenizedRecord> = corpus.records.iter().map(|r| r.tokenize()).collect();
    let mapping = build_mapping(&tokenized, &default_stopwords(), 1)?;
    let dataset = lstm_dataset(&mapping);

    let hp = LstmHyperparams {
        embed_dim: 12,
        hidden_dim: 16,
        epochs: 8,
        ..LstmHyperparams::default()
    };
    let (model, report) = train(&dataset, &hp)?;
    println!("\ntrained on {} phrases", dataset.len());
    println!("  before training  MSE {:.5}", report.initial_loss);
    for (epoch, loss) in report.epoch_losses.iter().enumerate() {
        println!("  epoch {:>2}         MSE {loss:.5}", epoch + 1);
    }

    for (phrase, rate) in dataset.iter().take(3) {
        println!("  {phrase:<24} stored {rate:.3}  model {:.3}", model.predict(phrase));
    }
    println!(
        "  {:<24} stored   -    model {:.3}",
        "never seen before",
        model.predict("never seen before")
    );

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("lstm.model");
    persist_model(&model, &path)?;
    let reloaded = load_model(&path)?;
    assert_eq!(
        reloaded.predict("never seen before"),
        model.predict("never seen before")
    );
    println!(
        "\nreloaded model from {} reproduces its outputs exactly",
        path.display()
    );
    Ok(())
}
