//! Cosine relevance, the softmax posterior over the clicked document and its
//! unclicked competitors, and the negative log-likelihood built on them.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lstm::{dot, embed_sequence, LstmParameters, SequenceTrace};
use crate::text::{hash_sequence, ClickThroughInstance, TrigramVocabulary};

/// Norms at or below this are treated as a degenerate embedding.
pub const MIN_NORM: f64 = 1e-12;

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn cosine_similarity(y_q: &[f64], y_d: &[f64]) -> Result<f64> {
    if y_q.len() != y_d.len() {
        return Err(Error::DimensionMismatch {
            expected: y_q.len(),
            actual: y_d.len(),
        });
    }
    let (nq, nd) = (norm(y_q), norm(y_d));
    for n in [nq, nd] {
        if !(n > MIN_NORM) {
            return Err(Error::ZeroNorm(n));
        }
    }
    Ok((dot(y_q, y_d) / (nq * nd)).clamp(-1.0, 1.0))
}

/// Similarities of one query against its clicked title and `n` unclicked
/// titles, plus the softmax sharpness `gamma`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilaritySet {
    pub clicked: f64,
    pub negatives: Vec<f64>,
    pub gamma: f64,
}

impl SimilaritySet {
    pub fn new(clicked: f64, negatives: Vec<f64>, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::Config(format!("gamma must be positive, got {gamma}")));
        }
        if let Some(s) = std::iter::once(&clicked)
            .chain(&negatives)
            .find(|s| !(-1.0..=1.0).contains(*s))
        {
            return Err(Error::Config(format!("similarity {s} outside [-1, 1]")));
        }
        Ok(SimilaritySet {
            clicked,
            negatives,
            gamma,
        })
    }

    /// Clicked first, then negatives.
    pub fn all(&self) -> impl Iterator<Item = f64> + '_ {
        std::iter::once(self.clicked).chain(self.negatives.iter().copied())
    }

    fn log_sum_exp(&self) -> (f64, f64) {
        let max = self.all().map(|s| self.gamma * s).fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = self.all().map(|s| (self.gamma * s - max).exp()).sum();
        (max, sum)
    }
}

/// Softmax over the gamma-scaled similarities, clicked entry first.
pub fn posterior(sims: &SimilaritySet) -> Vec<f64> {
    let (max, sum) = sims.log_sum_exp();
    sims.all().map(|s| (sims.gamma * s - max).exp() / sum).collect()
}

/// `-log P(clicked | query)`.
pub fn instance_loss(sims: &SimilaritySet) -> f64 {
    let (max, sum) = sims.log_sum_exp();
    (max + sum.ln() - sims.gamma * sims.clicked).max(0.0)
}

/// Hashes and embeds a tokenized text.
pub fn embed_words(params: &LstmParameters, words: &[String], vocab: &TrigramVocabulary) -> Result<SequenceTrace> {
    embed_sequence(params, &hash_sequence(words, vocab)?)
}

/// Embeds all of an instance's texts and scores them against the query.
pub fn instance_similarities(
    params: &LstmParameters,
    instance: &ClickThroughInstance,
    vocab: &TrigramVocabulary,
    gamma: f64,
) -> Result<SimilaritySet> {
    let y_q = embed_words(params, &instance.query, vocab)?;
    let score = |doc: &[String]| -> Result<f64> {
        cosine_similarity(y_q.embedding(), embed_words(params, doc, vocab)?.embedding())
    };
    let clicked = score(&instance.clicked)?;
    let negatives = instance.negatives.iter().map(|d| score(d)).collect::<Result<_>>()?;
    SimilaritySet::new(clicked, negatives, gamma)
}

/// Summed negative log-likelihood over `instances`. Instances are scored in
/// parallel and reduced in index order.
pub fn batch_loss(
    params: &LstmParameters,
    instances: &[ClickThroughInstance],
    vocab: &TrigramVocabulary,
    gamma: f64,
) -> Result<f64> {
    if instances.is_empty() {
        return Err(Error::Config("batch_loss needs at least one instance".into()));
    }
    let losses: Vec<f64> = instances
        .par_iter()
        .enumerate()
        .map(|(r, inst)| {
            instance_similarities(params, inst, vocab, gamma)
                .map(|s| instance_loss(&s))
                .map_err(|e| e.at_instance(r))
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum())
}
