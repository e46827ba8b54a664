//! Ranking evaluation: NDCG at cutoffs 1, 3 and 10, model-based ranking by
//! cosine similarity, and an Okapi BM25 baseline.

use std::collections::{HashMap, HashSet};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::loss::{cosine_similarity, embed_words};
use crate::lstm::LstmParameters;
use crate::text::{JudgedRanking, TrigramVocabulary, Words};

/// Cutoffs reported by [`EvalResult`].
pub const CUTOFFS: [usize; 3] = [1, 3, 10];

/// Normalized DCG over the first `k` positions, with gain `2^rel − 1` and
/// discount `1 / log2(rank + 1)`. Zero when no grade is positive.
pub fn ndcg_at_k(relevances: &[u8], k: usize) -> f64 {
    let dcg = |grades: &[u8]| -> f64 {
        grades
            .iter()
            .take(k)
            .enumerate()
            .map(|(pos, &g)| ((1u32 << g) - 1) as f64 / ((pos + 2) as f64).log2())
            .sum()
    };
    let mut ideal = relevances.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let best = dcg(&ideal);
    if best == 0.0 {
        0.0
    } else {
        dcg(relevances) / best
    }
}

/// Mean NDCG per cutoff, plus the per-query values.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    /// Indexed like [`CUTOFFS`].
    pub mean: [f64; 3],
    pub per_query: Vec<[f64; 3]>,
}

impl EvalResult {
    fn from_rankings(graded: Vec<Vec<u8>>) -> Self {
        let per_query: Vec<[f64; 3]> = graded
            .iter()
            .map(|g| CUTOFFS.map(|k| ndcg_at_k(g, k)))
            .collect();
        let mut mean = [0.0; 3];
        for q in &per_query {
            for (m, v) in mean.iter_mut().zip(q) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= per_query.len() as f64);
        EvalResult { mean, per_query }
    }

    /// Mean NDCG@k for one of the reported cutoffs.
    pub fn ndcg(&self, k: usize) -> Option<f64> {
        CUTOFFS.iter().position(|&c| c == k).map(|i| self.mean[i])
    }
}

/// A results table with one row per named result, percentages to one decimal.
pub fn format_table(rows: &[(&str, &EvalResult)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(5);
    let mut out = format!("{:<width$}  {:>7}  {:>7}  {:>8}\n", "Model", "NDCG@1", "NDCG@3", "NDCG@10");
    for (name, r) in rows {
        out.push_str(&format!(
            "{:<width$}  {:>6.1}%  {:>6.1}%  {:>7.1}%\n",
            name,
            100.0 * r.mean[0],
            100.0 * r.mean[1],
            100.0 * r.mean[2]
        ));
    }
    out
}

/// Stable descending sort of `(index, score)` pairs.
fn rank_by_score(scores: Vec<f64>) -> Vec<(usize, f64)> {
    let mut ranked: Vec<(usize, f64)> = scores.into_iter().enumerate().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    ranked
}

/// Candidates as `(input index, cosine score)`, best first. Ties keep input
/// order.
pub fn rank_candidates_scored(
    params: &LstmParameters,
    query: &[String],
    candidates: &[Words],
    vocab: &TrigramVocabulary,
) -> Result<Vec<(usize, f64)>> {
    if query.is_empty() || candidates.is_empty() {
        return Err(Error::Config("ranking needs a query and at least one candidate".into()));
    }
    let y_q = embed_words(params, query, vocab)?;
    let scores = candidates
        .iter()
        .map(|c| cosine_similarity(y_q.embedding(), embed_words(params, c, vocab)?.embedding()))
        .collect::<Result<Vec<f64>>>()?;
    Ok(rank_by_score(scores))
}

/// Candidate indices, best first.
pub fn rank_candidates(
    params: &LstmParameters,
    query: &[String],
    candidates: &[Words],
    vocab: &TrigramVocabulary,
) -> Result<Vec<usize>> {
    Ok(rank_candidates_scored(params, query, candidates, vocab)?
        .into_iter()
        .map(|(i, _)| i)
        .collect())
}

fn check_judged(judged: &[JudgedRanking]) -> Result<()> {
    if judged.is_empty() {
        return Err(Error::Config("no judged queries".into()));
    }
    if let Some(i) = judged.iter().position(|j| j.candidates.is_empty()) {
        return Err(Error::Config("ranking has no candidates".into()).at_query(i));
    }
    Ok(())
}

/// Ranks every judged query with the model and averages NDCG over queries.
pub fn evaluate_model(params: &LstmParameters, judged: &[JudgedRanking], vocab: &TrigramVocabulary) -> Result<EvalResult> {
    check_judged(judged)?;
    let graded = judged
        .par_iter()
        .enumerate()
        .map(|(qi, j)| {
            let docs: Vec<Words> = j.candidates.iter().map(|(d, _)| d.clone()).collect();
            let order = rank_candidates(params, &j.query, &docs, vocab).map_err(|e| e.at_query(qi))?;
            Ok(order.into_iter().map(|i| j.candidates[i].1).collect())
        })
        .collect::<Result<Vec<Vec<u8>>>>()?;
    Ok(EvalResult::from_rankings(graded))
}

/// Document count, mean length and per-term document frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusStats {
    pub doc_count: usize,
    pub avg_len: f64,
    pub doc_freq: HashMap<String, usize>,
}

impl CorpusStats {
    pub fn from_documents<'a>(docs: impl IntoIterator<Item = &'a Words>) -> Result<Self> {
        let mut doc_count = 0usize;
        let mut total_len = 0usize;
        let mut doc_freq: HashMap<String, usize> = HashMap::new();
        for doc in docs {
            doc_count += 1;
            total_len += doc.len();
            let distinct: HashSet<&String> = doc.iter().collect();
            for term in distinct {
                *doc_freq.entry(term.clone()).or_default() += 1;
            }
        }
        if doc_count == 0 || total_len == 0 {
            return Err(Error::Config("corpus statistics need at least one non-empty document".into()));
        }
        Ok(CorpusStats {
            doc_count,
            avg_len: total_len as f64 / doc_count as f64,
            doc_freq,
        })
    }

    /// `ln(1 + (N − df + 0.5) / (df + 0.5))`
    pub fn idf(&self, term: &str) -> f64 {
        let df = self.doc_freq.get(term).copied().unwrap_or(0) as f64;
        (1.0 + (self.doc_count as f64 - df + 0.5) / (df + 0.5)).ln()
    }
}

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;

/// Okapi BM25 summed over the distinct query terms.
pub fn bm25_score(query: &[String], document: &[String], stats: &CorpusStats, k1: f64, b: f64) -> f64 {
    let mut tf: HashMap<&str, usize> = HashMap::new();
    for w in document {
        *tf.entry(w.as_str()).or_default() += 1;
    }
    let norm = k1 * (1.0 - b + b * document.len() as f64 / stats.avg_len);
    let mut seen = HashSet::new();
    query
        .iter()
        .filter(|t| seen.insert(t.as_str()))
        .filter_map(|t| tf.get(t.as_str()).map(|&f| (t, f as f64)))
        .map(|(t, f)| stats.idf(t) * f * (k1 + 1.0) / (f + norm))
        .sum()
}

/// Ranks every judged query by BM25, with corpus statistics over the distinct
/// candidate documents of the whole judged set.
pub fn evaluate_bm25(judged: &[JudgedRanking], k1: f64, b: f64) -> Result<EvalResult> {
    check_judged(judged)?;
    let mut seen = HashSet::new();
    let distinct = judged
        .iter()
        .flat_map(|j| j.candidates.iter().map(|(d, _)| d))
        .filter(|d| seen.insert(*d));
    let stats = CorpusStats::from_documents(distinct)?;
    let graded = judged
        .iter()
        .map(|j| {
            let scores = j.candidates.iter().map(|(d, _)| bm25_score(&j.query, d, &stats, k1, b)).collect();
            rank_by_score(scores).into_iter().map(|(i, _)| j.candidates[i].1).collect()
        })
        .collect();
    Ok(EvalResult::from_rankings(graded))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lstm::{init_parameters, ModelDims};
    use crate::text::tokenize;

    #[test]
    fn ndcg_examples() {
        assert_eq!(ndcg_at_k(&[3, 2, 0], 3), 1.0);
        let v = ndcg_at_k(&[0, 3], 2);
        assert!((v - 1.0 / 3f64.log2()).abs() < 1e-15);
        assert!((v - 0.63093).abs() < 1e-5);
        for k in [1, 3, 10] {
            assert_eq!(ndcg_at_k(&[0, 0, 0], k), 0.0);
        }
        // Short lists stop contributing past their end.
        assert_eq!(ndcg_at_k(&[2, 1], 10), 1.0);
        assert_eq!(ndcg_at_k(&[0, 4], 1), 0.0);
    }

    fn judged(query: &str, cands: &[(&str, u8)]) -> JudgedRanking {
        JudgedRanking {
            query: tokenize(query),
            candidates: cands.iter().map(|(d, g)| (tokenize(d), *g)).collect(),
        }
    }

    #[test]
    fn eval_result_means() {
        let r = EvalResult::from_rankings(vec![vec![4, 0], vec![0, 4]]);
        assert_eq!(r.ndcg(1), Some(0.5));
        let r = EvalResult::from_rankings(vec![vec![0, 0]]);
        assert_eq!(r.mean, [0.0; 3]);
        assert_eq!(r.ndcg(5), None);
    }

    #[test]
    fn table_layout() {
        let r = EvalResult {
            mean: [0.305, 0.328, 0.388],
            per_query: vec![],
        };
        let t = format_table(&[("BM25", &r)]);
        assert!(t.lines().nth(1).unwrap().contains("30.5%"));
        assert!(t.lines().nth(1).unwrap().contains("38.8%"));
    }

    #[test]
    fn bm25_by_hand() {
        let docs: Vec<Words> = ["apple x", "apple y", "z w", "v u"].iter().map(|d| tokenize(d)).collect();
        let stats = CorpusStats::from_documents(&docs).unwrap();
        assert_eq!(stats.doc_count, 4);
        assert_eq!(stats.avg_len, 2.0);
        let s = bm25_score(&tokenize("apple"), &tokenize("apple apple"), &stats, BM25_K1, BM25_B);
        assert!((s - 2f64.ln() * (2.0 * 2.2 / 3.2)).abs() < 1e-15);
        // ln(2) · 4.4 / 3.2 = 0.9530773...
        assert!((s - 0.953077).abs() < 1e-6);

        assert_eq!(bm25_score(&tokenize("pear"), &docs[0], &stats, BM25_K1, BM25_B), 0.0);
        let once = bm25_score(&tokenize("apple"), &docs[0], &stats, BM25_K1, BM25_B);
        let twice = bm25_score(&tokenize("apple apple"), &docs[0], &stats, BM25_K1, BM25_B);
        assert_eq!(once, twice);
    }

    #[test]
    fn bm25_monotone_in_tf() {
        let docs: Vec<Words> = ["a b c", "b c d", "c d e"].iter().map(|d| tokenize(d)).collect();
        let stats = CorpusStats::from_documents(&docs).unwrap();
        let mut prev = 0.0;
        for tf in 0..10 {
            // Length held fixed at 12 words.
            let mut fixed: Words = vec!["a".to_string(); tf];
            fixed.resize(12, "pad".into());
            let s = bm25_score(&tokenize("a"), &fixed, &stats, BM25_K1, BM25_B);
            assert!(s >= prev);
            prev = s;
        }
    }

    #[test]
    fn bm25_eval_examples() {
        let j = vec![judged("apple", &[("banana split", 0), ("apple pie", 4), ("cherry tart", 0)])];
        assert_eq!(evaluate_bm25(&j, BM25_K1, BM25_B).unwrap().ndcg(1), Some(1.0));

        // Identical texts tie, so input order decides.
        let j = vec![judged("apple", &[("same doc", 0), ("same doc", 4)])];
        assert_eq!(evaluate_bm25(&j, BM25_K1, BM25_B).unwrap().per_query[0][0], 0.0);
    }

    #[test]
    fn bm25_eval_three_queries_by_hand() {
        let j = vec![
            judged("red car", &[("blue car", 1), ("red car fast", 4), ("green tree", 0)]),
            judged("green tree", &[("red car fast", 0), ("green tree", 3)]),
            judged("nothing", &[("blue car", 2), ("green tree", 0)]),
        ];
        let r = evaluate_bm25(&j, BM25_K1, BM25_B).unwrap();
        // q1: "red car fast" matches both terms and ranks first; q2 exact match
        // ranks first; q3 matches nothing so input order stands.
        assert_eq!(r.per_query[0][0], 1.0);
        assert_eq!(r.per_query[1][0], 1.0);
        assert_eq!(r.per_query[2][0], 1.0);
        let q1_at3 = ndcg_at_k(&[4, 1, 0], 3);
        assert_eq!(r.per_query[0][1], q1_at3);
        assert!((r.mean[0] - 1.0).abs() < 1e-15);
    }

    fn model_fixture() -> (LstmParameters, TrigramVocabulary) {
        let vocab = TrigramVocabulary::build([tokenize("alpha beta gamma delta epsilon zeta")]).unwrap();
        let p = init_parameters(ModelDims::new(vocab.dimension(), 5).unwrap(), 13);
        (p, vocab)
    }

    #[test]
    fn ranking_matches_independent_scores() {
        let (p, vocab) = model_fixture();
        let q = tokenize("alpha beta");
        let cands: Vec<Words> = ["gamma delta", "alpha zeta", "epsilon"].iter().map(|c| tokenize(c)).collect();
        assert_eq!(rank_candidates(&p, &q, &cands[..1], &vocab).unwrap(), vec![0]);

        let yq = embed_words(&p, &q, &vocab).unwrap();
        let mut expected: Vec<(usize, f64)> = cands
            .iter()
            .enumerate()
            .map(|(i, c)| (i, cosine_similarity(yq.embedding(), embed_words(&p, c, &vocab).unwrap().embedding()).unwrap()))
            .collect();
        expected.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        let got = rank_candidates(&p, &q, &cands, &vocab).unwrap();
        assert_eq!(got, expected.iter().map(|e| e.0).collect::<Vec<_>>());
    }

    #[test]
    fn ranking_ties_are_stable() {
        let (p, vocab) = model_fixture();
        let c = tokenize("beta gamma");
        let cands = vec![tokenize("zeta"), c.clone(), c];
        let order = rank_candidates(&p, &tokenize("beta"), &cands, &vocab).unwrap();
        let pos1 = order.iter().position(|&i| i == 1).unwrap();
        let pos2 = order.iter().position(|&i| i == 2).unwrap();
        assert_eq!(pos2, pos1 + 1);
    }

    #[test]
    fn model_eval_perfect_and_empty_grades() {
        let (p, vocab) = model_fixture();
        let q = tokenize("alpha beta");
        let docs: Vec<Words> = ["gamma delta", "alpha zeta", "epsilon", "beta"].iter().map(|c| tokenize(c)).collect();
        let order = rank_candidates(&p, &q, &docs, &vocab).unwrap();
        // Grade candidates so the model's own order is ideal.
        let mut cands = vec![(Words::new(), 0u8); docs.len()];
        for (rank, &i) in order.iter().enumerate() {
            cands[i] = (docs[i].clone(), (4 - rank) as u8);
        }
        let perfect = JudgedRanking { query: q.clone(), candidates: cands };
        let r = evaluate_model(&p, &[perfect], &vocab).unwrap();
        assert_eq!(r.mean, [1.0; 3]);

        let zero = JudgedRanking {
            query: q,
            candidates: docs.into_iter().map(|d| (d, 0)).collect(),
        };
        assert_eq!(evaluate_model(&p, &[zero], &vocab).unwrap().mean, [0.0; 3]);
        assert!(evaluate_model(&p, &[], &vocab).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn ndcg_in_unit_interval(grades in prop::collection::vec(0u8..=4, 1..20), k in 1usize..12) {
                let v = ndcg_at_k(&grades, k);
                prop_assert!((0.0..=1.0 + 1e-15).contains(&v));
                let mut sorted = grades.clone();
                sorted.sort_unstable_by(|a, b| b.cmp(a));
                if sorted.iter().any(|&g| g > 0) {
                    prop_assert!((ndcg_at_k(&sorted, k) - 1.0).abs() < 1e-15);
                }
            }
        }
    }
}
