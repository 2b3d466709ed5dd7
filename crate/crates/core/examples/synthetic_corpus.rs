// Generate a labelled corpus whose open rates are the mean latent score of
// each line's words, and save it as CSV for `nlorp train`.
//
//     cargo run --example synthetic_corpus -- [out.csv]

use nlorp::corpus::{generate_synthetic_corpus, load_corpus, save_corpus, CsvSchema};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = generate_synthetic_corpus(1, 200, 50, 0.0)?;
    for record in corpus.records.iter().take(3) {
        let scores: Vec<f64> = record.text.split(' ').map(|w| corpus.latent_scores[w]).collect();
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        println!(
            "{:<44} {:.4}  (mean latent score {mean:.4})",
            record.text, record.open_rate
        );
    }

    let dir = tempfile::tempdir()?;
    let path = match std::env::args().nth(1).filter(|a| a.ends_with(".csv")) {
        Some(p) => p.into(),
        None => dir.path().join("synthetic.csv"),
    };
    save_corpus(&path, &corpus.records)?;
    let back = load_corpus(&path, CsvSchema::Detect)?;
    assert_eq!(back, corpus.records);
    println!("\nwrote {} records to {}", back.len(), path.display());

    let again = generate_synthetic_corpus(1, 200, 50, 0.0)?;
    assert_eq!(again, corpus);
    println!("same seed, same corpus");
    Ok(())
}
