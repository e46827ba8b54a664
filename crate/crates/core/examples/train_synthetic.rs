//! Trains on synthetic click-through data and compares the learned ranker
//! with BM25 on held-out judgments. Half of the instances carry an anagram
//! negative that a bag-of-words model cannot separate from the clicked title.
//!
//! cargo run --release --example train_synthetic -- [epochs]

use seqrank::bptt::{train, TrainConfig};
use seqrank::eval::{evaluate_bm25, evaluate_model, format_table, rank_candidates_scored, BM25_B, BM25_K1};
use seqrank::synthetic::{generate, SyntheticConfig};
use seqrank::text::TrigramVocabulary;

fn main() -> seqrank::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(50);
    let data = generate(&SyntheticConfig::default())?;
    let vocab = TrigramVocabulary::build(data.train.iter().flat_map(|i| i.sequences().cloned()))?;
    let config = TrainConfig { epochs, ..TrainConfig::default() };
    let outcome = train(&config, &data.train, &vocab)?;
    for (epoch, loss) in outcome.epoch_mean_losses().iter().enumerate() {
        if epoch % 10 == 0 || epoch + 1 == epochs {
            println!("epoch {epoch:3}  mean batch loss {loss:8.3}");
        }
    }

    let model = evaluate_model(&outcome.params, &data.judged, &vocab)?;
    let bm25 = evaluate_bm25(&data.judged, BM25_K1, BM25_B)?;
    println!("\n{}", format_table(&[("BM25", &bm25), ("LSTM", &model)]));

    let example = &data.judged[0];
    let candidates: Vec<_> = example.candidates.iter().map(|(d, _)| d.clone()).collect();
    println!("query: {}", example.query.join(" "));
    for (i, score) in rank_candidates_scored(&outcome.params, &example.query, &candidates, &vocab)? {
        println!("  {score:+.4}  grade {}  {}", example.candidates[i].1, candidates[i].join(" "));
    }
    Ok(())
}
