//! Letter-trigram word hashing: tokenize, build a vocabulary, and turn words
//! into sparse count vectors.
//!
//! cargo run --example trigram_hashing

use seqrank::text::{hash_sequence, hash_word, tokenize, word_to_trigrams, TrigramVocabulary};

fn main() -> seqrank::Result<()> {
    let corpus = ["Cheap flights to Boston", "boston weather forecast", "flight status"];
    let vocab = TrigramVocabulary::build(corpus.iter().map(|t| tokenize(t)))?;
    println!("{} distinct trigrams", vocab.dimension());

    println!("\"flights\" -> {:?}", word_to_trigrams("flights")?);
    let v = hash_word("flights", &vocab)?;
    for &(col, count) in v.pairs() {
        println!("  column {col:3}  {:?} x{count}", vocab.trigrams()[col]);
    }

    // Unseen words keep whatever trigrams the vocabulary knows. A word of n
    // characters has n trigrams.
    let seq = hash_sequence(&tokenize("Flightless in Bostonia"), &vocab)?;
    for (word, v) in tokenize("Flightless in Bostonia").iter().zip(&seq) {
        println!("{word:>12}: {} known trigrams of {}", v.total_count(), word.len());
    }
    Ok(())
}
