//! NDCG at 1, 3 and 10 and the BM25 baseline on a small hand-written judged set.
//!
//! cargo run --example evaluate_rankings

use seqrank::eval::{evaluate_bm25, format_table, ndcg_at_k, BM25_B, BM25_K1};
use seqrank::text::{tokenize, JudgedRanking};

fn main() -> seqrank::Result<()> {
    for grades in [[3u8, 2, 0], [0, 3, 2], [0, 0, 3]] {
        println!("{grades:?}: NDCG@1 {:.3}  NDCG@3 {:.3}", ndcg_at_k(&grades, 1), ndcg_at_k(&grades, 3));
    }

    let judged = |q: &str, c: &[(&str, u8)]| JudgedRanking {
        query: tokenize(q),
        candidates: c.iter().map(|(d, g)| (tokenize(d), *g)).collect(),
    };
    let set = vec![
        judged(
            "boston flights",
            &[("weather in boston today", 0), ("cheap flights to boston", 4), ("flights flights flights", 1)],
        ),
        judged("bread recipe", &[("sourdough loaf method", 3), ("bread recipe for beginners", 4), ("car parts", 0)]),
    ];
    let bm25 = evaluate_bm25(&set, BM25_K1, BM25_B)?;
    print!("\n{}", format_table(&[("BM25", &bm25)]));
    for (judged, scores) in set.iter().zip(&bm25.per_query) {
        println!("{:>16}: {scores:.3?}", judged.query.join(" "));
    }
    Ok(())
}
