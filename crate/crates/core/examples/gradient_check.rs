//! Checks the hand-derived backpropagation-through-time gradients against
//! central finite differences on small random models, group by group.
//!
//! cargo run --release --example gradient_check -- [cases]

use seqrank::grad_oracle::{GradCheckCase, DEFAULT_EPSILON, DEFAULT_TOLERANCE};

fn main() -> seqrank::Result<()> {
    let cases: u64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(2);
    let mut all = true;
    for seed in 0..cases {
        let gamma = if seed % 2 == 0 { 1.0 } else { 10.0 };
        let case = GradCheckCase::random(seed, 50, 8, 2)?;
        let report = case.check(gamma, DEFAULT_TOLERANCE, DEFAULT_EPSILON)?;
        println!("seed {seed}, gamma {gamma}\n{report}\n");
        all &= report.pass;
    }
    std::process::exit(if all { 0 } else { 1 });
}
