//! Embeds texts with a freshly initialized peephole LSTM and compares them by
//! cosine similarity. The embedding is the output at the last word.
//!
//! cargo run --example embed_sequence

use seqrank::loss::{cosine_similarity, embed_words};
use seqrank::lstm::{count_parameters, init_parameters, ModelDims};
use seqrank::text::{tokenize, TrigramVocabulary};

fn main() -> seqrank::Result<()> {
    let texts = ["how to bake bread", "bread baking guide", "bake bread how to", "used car prices"];
    let vocab = TrigramVocabulary::build(texts.iter().map(|t| tokenize(t)))?;
    let dims = ModelDims::new(vocab.dimension(), 16)?;
    let params = init_parameters(dims, 7);
    println!("{} trigrams, {} parameters", vocab.dimension(), count_parameters(dims));

    let traces = texts
        .iter()
        .map(|t| embed_words(&params, &tokenize(t), &vocab))
        .collect::<seqrank::Result<Vec<_>>>()?;
    let first = &traces[0];
    println!("states per word for {:?}:", texts[0]);
    for (word, snap) in tokenize(texts[0]).iter().zip(&first.snapshots) {
        let mean_forget = snap.f.iter().sum::<f64>() / snap.f.len() as f64;
        println!("  {word:>6}: |c| = {:.3}, mean forget gate {mean_forget:.3}", seqrank::loss::norm(&snap.c));
    }
    for (text, trace) in texts.iter().zip(&traces).skip(1) {
        let cos = cosine_similarity(first.embedding(), trace.embedding())?;
        println!("cos({:?}, {text:?}) = {cos:+.4}", texts[0]);
    }
    Ok(())
}
