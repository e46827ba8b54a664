//! Seeded synthetic click-through data with a known right answer.
//!
//! Words are pronounceable pseudo-words. A query is a short run of distinct
//! words; its clicked title is a few filler words followed by the query words
//! in their original order. Negatives are titles drawn from the same word
//! list. A fraction of instances also carry an *anagram* negative: the clicked
//! title's own words reordered so the query no longer closes it in order.
//! Bag-of-words rankers cannot tell the anagram from the clicked title; an
//! order-aware embedding can.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::text::{ClickThroughInstance, JudgedRanking, Words, MAX_GRADE};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub train_instances: usize,
    pub held_out_instances: usize,
    /// Size of the pseudo-word list.
    pub word_count: usize,
    pub query_len: (usize, usize),
    pub filler_len: (usize, usize),
    pub negative_len: (usize, usize),
    pub n_negatives: usize,
    /// Probability that an instance carries an anagram negative.
    pub anagram_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            train_instances: 500,
            held_out_instances: 100,
            word_count: 300,
            query_len: (2, 3),
            filler_len: (1, 2),
            negative_len: (3, 5),
            n_negatives: 4,
            anagram_rate: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub train: Vec<ClickThroughInstance>,
    pub held_out: Vec<ClickThroughInstance>,
    /// One judged list per held-out instance: the clicked title at the top
    /// grade, every negative at grade 0, in shuffled order.
    pub judged: Vec<JudgedRanking>,
}

const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st", "tr"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];

fn pseudo_words(count: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut words = Vec::with_capacity(count);
    let mut seen = std::collections::HashSet::new();
    while words.len() < count {
        let syllables = rng.gen_range(2..=3);
        let w: String = (0..syllables)
            .map(|_| format!("{}{}", ONSETS.choose(rng).unwrap(), VOWELS.choose(rng).unwrap()))
            .collect();
        if seen.insert(w.clone()) {
            words.push(w);
        }
    }
    words
}

fn draw(words: &[String], len: usize, rng: &mut ChaCha8Rng) -> Words {
    words.choose_multiple(rng, len).cloned().collect()
}

fn ends_with_in_order(title: &[String], query: &[String]) -> bool {
    title.ends_with(query)
}

fn make_instance(words: &[String], config: &SyntheticConfig, rng: &mut ChaCha8Rng) -> ClickThroughInstance {
    let q_len = rng.gen_range(config.query_len.0..=config.query_len.1);
    let f_len = rng.gen_range(config.filler_len.0..=config.filler_len.1);
    let picked = draw(words, q_len + f_len, rng);
    let (query, filler) = (picked[..q_len].to_vec(), &picked[q_len..]);
    let clicked: Words = filler.iter().chain(&query).cloned().collect();

    let mut negatives = Vec::with_capacity(config.n_negatives);
    if config.n_negatives > 0 && rng.gen_bool(config.anagram_rate) {
        let mut anagram = clicked.clone();
        while ends_with_in_order(&anagram, &query) {
            anagram.shuffle(rng);
        }
        negatives.push(anagram);
    }
    while negatives.len() < config.n_negatives {
        let len = rng.gen_range(config.negative_len.0..=config.negative_len.1);
        let neg = draw(words, len, rng);
        if !ends_with_in_order(&neg, &query) {
            negatives.push(neg);
        }
    }
    negatives.shuffle(rng);
    ClickThroughInstance {
        query,
        clicked,
        negatives,
    }
}

fn judged_list(inst: &ClickThroughInstance, rng: &mut ChaCha8Rng) -> JudgedRanking {
    let mut candidates: Vec<(Words, u8)> = std::iter::once((inst.clicked.clone(), MAX_GRADE))
        .chain(inst.negatives.iter().map(|n| (n.clone(), 0)))
        .collect();
    candidates.shuffle(rng);
    JudgedRanking {
        query: inst.query.clone(),
        candidates,
    }
}

pub fn generate(config: &SyntheticConfig) -> Result<SyntheticData> {
    let (q, f, n) = (config.query_len, config.filler_len, config.negative_len);
    if q.0 < 1 || q.0 > q.1 || f.0 > f.1 || n.0 < 1 || n.0 > n.1 {
        return Err(Error::Config("synthetic length ranges must be non-empty and start at 1 or more".into()));
    }
    if q.1 + f.1 > config.word_count || n.1 > config.word_count {
        return Err(Error::Config("word list too small for the requested title lengths".into()));
    }
    if f.0 == 0 && q.0 == 1 && config.anagram_rate > 0.0 {
        return Err(Error::Config("anagram negatives need titles of at least two words".into()));
    }
    if !(0.0..=1.0).contains(&config.anagram_rate) {
        return Err(Error::Config(format!("anagram rate must lie in [0, 1], got {}", config.anagram_rate)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let words = pseudo_words(config.word_count, &mut rng);
    let train = (0..config.train_instances).map(|_| make_instance(&words, config, &mut rng)).collect();
    let held_out: Vec<_> = (0..config.held_out_instances).map(|_| make_instance(&words, config, &mut rng)).collect();
    let judged = held_out.iter().map(|i| judged_list(i, &mut rng)).collect();
    Ok(SyntheticData { train, held_out, judged })
}
