//! Saves a briefly trained model with its momentum, reloads it, and confirms
//! the reload is bit-exact. Also shows a corrupted file being refused.
//!
//! cargo run --release --example checkpoint_roundtrip

use seqrank::bptt::{train, TrainConfig};
use seqrank::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use seqrank::loss::batch_loss;
use seqrank::synthetic::{generate, SyntheticConfig};
use seqrank::text::TrigramVocabulary;

fn main() -> seqrank::Result<()> {
    let data = generate(&SyntheticConfig { train_instances: 100, held_out_instances: 20, ..SyntheticConfig::default() })?;
    let vocab = TrigramVocabulary::build(data.train.iter().flat_map(|i| i.sequences().cloned()))?;
    let config = TrainConfig { epochs: 3, batch_size: 25, ..TrainConfig::default() };
    let outcome = train(&config, &data.train, &vocab)?;

    let mut ck = Checkpoint::new(outcome.params.clone(), &vocab, config.gamma);
    ck.velocity = Some(outcome.velocity);
    ck.step = outcome.steps;
    let dir = std::env::temp_dir().join(format!("seqrank-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("model.ckpt");
    save_checkpoint(&path, &ck)?;
    println!("wrote {} ({} bytes, step {})", path.display(), std::fs::metadata(&path)?.len(), ck.step);

    let back = load_checkpoint(&path)?;
    back.check_vocabulary(&vocab)?;
    let before = batch_loss(&outcome.params, &data.held_out, &vocab, 1.0)?;
    let after = batch_loss(&back.params, &data.held_out, &vocab, 1.0)?;
    println!("held-out loss before {before:.12}, after {after:.12}, identical: {}", before.to_bits() == after.to_bits());

    let mut bytes = std::fs::read(&path)?;
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x10;
    std::fs::write(&path, &bytes)?;
    match load_checkpoint(&path) {
        Ok(_) => println!("corruption went unnoticed"),
        Err(e) => println!("corrupted copy refused: {e}"),
    }
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
