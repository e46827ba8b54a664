//! Text ingestion: tokenization, letter-trigram hashing, and the click-through
//! and judgment file readers.
//!
//! A word is wrapped in `#` boundary markers and broken into every
//! consecutive three-character window, so `"cat"` becomes `#ca`, `cat`, `at#`.
//! The trigram vocabulary assigns each distinct window a dense column index,
//! and a word is represented by the raw counts of its in-vocabulary windows.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Reserved boundary marker. Never survives tokenization.
pub const BOUNDARY: char = '#';

/// A tokenized text: lowercased words, in order.
pub type Words = Vec<String>;

/// Lowercases `text` and splits it on every run of non-alphanumeric
/// characters. Never fails; may return no words.
pub fn tokenize(text: &str) -> Words {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// All letter trigrams of `#word#`, in order and with multiplicity.
pub fn word_to_trigrams(word: &str) -> Result<Vec<String>> {
    if word.is_empty() {
        return Err(Error::EmptyWord);
    }
    let marked: Vec<char> = std::iter::once(BOUNDARY)
        .chain(word.chars())
        .chain(std::iter::once(BOUNDARY))
        .collect();
    Ok(marked.windows(3).map(|w| w.iter().collect()).collect())
}

/// Dense, first-occurrence-ordered index of letter trigrams.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrigramVocabulary {
    trigrams: Vec<String>,
    index: HashMap<String, usize>,
}

impl TrigramVocabulary {
    /// Collects every distinct trigram of every word in `corpus`.
    pub fn build<I, S>(corpus: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[String]>,
    {
        let mut vocab = TrigramVocabulary::default();
        let mut saw_sequence = false;
        for words in corpus {
            saw_sequence = true;
            for word in words.as_ref() {
                for trigram in word_to_trigrams(word)? {
                    vocab.insert(trigram);
                }
            }
        }
        if !saw_sequence || vocab.trigrams.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Ok(vocab)
    }

    /// Vocabulary with the given trigrams at indices `0..n`, in order.
    pub fn from_trigrams(trigrams: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut vocab = TrigramVocabulary::default();
        for t in trigrams {
            if t.chars().count() != 3 {
                return Err(Error::Config(format!("{t:?} is not a trigram")));
            }
            if vocab.index.contains_key(&t) {
                return Err(Error::Config(format!("duplicate trigram {t:?}")));
            }
            vocab.insert(t);
        }
        if vocab.trigrams.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Ok(vocab)
    }

    fn insert(&mut self, trigram: String) {
        if !self.index.contains_key(&trigram) {
            self.index.insert(trigram.clone(), self.trigrams.len());
            self.trigrams.push(trigram);
        }
    }

    pub fn dimension(&self) -> usize {
        self.trigrams.len()
    }

    pub fn get(&self, trigram: &str) -> Option<usize> {
        self.index.get(trigram).copied()
    }

    /// Trigrams in index order.
    pub fn trigrams(&self) -> &[String] {
        &self.trigrams
    }

    /// The vocabulary file body: one trigram per line, line number is the index.
    pub fn to_file_string(&self) -> String {
        let mut out = String::with_capacity(self.trigrams.len() * 4);
        for t in &self.trigrams {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    /// SHA-256 of the vocabulary file body.
    pub fn content_hash(&self) -> [u8; 32] {
        Sha256::digest(self.to_file_string().as_bytes()).into()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_file_string().as_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let reader = BufReader::new(fs::File::open(path)?);
        let mut vocab = TrigramVocabulary::default();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            let malformed = |reason: String| Error::Malformed {
                path: path.to_path_buf(),
                line: n + 1,
                reason,
            };
            if line.chars().count() != 3 {
                return Err(malformed(format!("{line:?} is not a trigram")));
            }
            if vocab.index.contains_key(&line) {
                return Err(malformed(format!("duplicate trigram {line:?}")));
            }
            vocab.insert(line);
        }
        if vocab.trigrams.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Ok(vocab)
    }
}

/// Hashed representation of one word: sorted `(column, count)` pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseTermVector {
    pairs: Vec<(usize, u32)>,
    dimension: usize,
}

impl SparseTermVector {
    /// Builds a vector from arbitrary `(index, count)` pairs, merging
    /// duplicates and dropping zero counts.
    pub fn from_pairs(dimension: usize, pairs: impl IntoIterator<Item = (usize, u32)>) -> Result<Self> {
        let mut merged: Vec<(usize, u32)> = pairs.into_iter().filter(|&(_, c)| c > 0).collect();
        merged.sort_unstable_by_key(|&(i, _)| i);
        merged.dedup_by(|next, kept| {
            if next.0 == kept.0 {
                kept.1 += next.1;
                true
            } else {
                false
            }
        });
        if let Some(&(i, _)) = merged.last() {
            if i >= dimension {
                return Err(Error::DimensionMismatch {
                    expected: dimension,
                    actual: i + 1,
                });
            }
        }
        Ok(SparseTermVector {
            pairs: merged,
            dimension,
        })
    }

    pub fn zeros(dimension: usize) -> Self {
        SparseTermVector {
            pairs: Vec::new(),
            dimension,
        }
    }

    pub fn pairs(&self) -> &[(usize, u32)] {
        &self.pairs
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn is_zero(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn total_count(&self) -> u64 {
        self.pairs.iter().map(|&(_, c)| u64::from(c)).sum()
    }
}

/// Counts of the in-vocabulary trigrams of `word`. Out-of-vocabulary
/// trigrams are dropped, so a fully unknown word hashes to the zero vector.
pub fn hash_word(word: &str, vocab: &TrigramVocabulary) -> Result<SparseTermVector> {
    let trigrams = word_to_trigrams(word)?;
    SparseTermVector::from_pairs(
        vocab.dimension(),
        trigrams.iter().filter_map(|t| vocab.get(t)).map(|i| (i, 1)),
    )
}

/// Hashes every word of a sequence.
pub fn hash_sequence(words: &[String], vocab: &TrigramVocabulary) -> Result<Vec<SparseTermVector>> {
    words.iter().map(|w| hash_word(w, vocab)).collect()
}

/// One click-through training example: a query, its clicked title, and the
/// unclicked titles it competes against.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClickThroughInstance {
    pub query: Words,
    pub clicked: Words,
    pub negatives: Vec<Words>,
}

impl ClickThroughInstance {
    pub fn new(query: Words, clicked: Words, negatives: Vec<Words>) -> Result<Self> {
        let instance = ClickThroughInstance {
            query,
            clicked,
            negatives,
        };
        match instance.violation() {
            Some(reason) => Err(Error::Config(reason)),
            None => Ok(instance),
        }
    }

    pub(crate) fn violation(&self) -> Option<String> {
        if self.query.is_empty() {
            return Some("query is empty after tokenization".into());
        }
        if self.clicked.is_empty() {
            return Some("clicked title is empty after tokenization".into());
        }
        if let Some(j) = self.negatives.iter().position(|n| n.is_empty()) {
            return Some(format!("unclicked title {} is empty after tokenization", j + 1));
        }
        if self.negatives.contains(&self.clicked) {
            return Some("clicked title repeated among unclicked titles".into());
        }
        None
    }

    /// Re-serializes the instance as a click-through file line.
    pub fn to_line(&self) -> String {
        std::iter::once(&self.query)
            .chain(std::iter::once(&self.clicked))
            .chain(self.negatives.iter())
            .map(|w| w.join(" "))
            .collect::<Vec<_>>()
            .join("\t")
    }

    /// Query, clicked, then negatives.
    pub fn sequences(&self) -> impl Iterator<Item = &Words> {
        std::iter::once(&self.query)
            .chain(std::iter::once(&self.clicked))
            .chain(self.negatives.iter())
    }
}

/// Reads a click-through file, accepting any number of unclicked titles per
/// line. Blank lines are skipped.
pub fn read_clickthrough(path: impl AsRef<Path>) -> Result<Vec<ClickThroughInstance>> {
    Ok(parse_clickthrough(path.as_ref())?.into_iter().map(|(_, i)| i).collect())
}

/// Reads a click-through file where every line must carry exactly
/// `n_required` unclicked titles.
pub fn load_clickthrough(path: impl AsRef<Path>, n_required: usize) -> Result<Vec<ClickThroughInstance>> {
    let path = path.as_ref();
    let parsed = parse_clickthrough(path)?;
    if let Some((line, inst)) = parsed.iter().find(|(_, i)| i.negatives.len() != n_required) {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            line: *line,
            reason: format!(
                "expected {n_required} unclicked titles, found {}",
                inst.negatives.len()
            ),
        });
    }
    Ok(parsed.into_iter().map(|(_, i)| i).collect())
}

fn parse_clickthrough(path: &Path) -> Result<Vec<(usize, ClickThroughInstance)>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| Error::Malformed {
            path: path.to_path_buf(),
            line: n + 1,
            reason,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 2 {
            return Err(malformed(format!(
                "expected at least 2 tab-separated fields, found {}",
                fields.len()
            )));
        }
        let instance = ClickThroughInstance {
            query: tokenize(fields[0]),
            clicked: tokenize(fields[1]),
            negatives: fields[2..].iter().map(|f| tokenize(f)).collect(),
        };
        if let Some(reason) = instance.violation() {
            return Err(malformed(reason));
        }
        out.push((n + 1, instance));
    }
    Ok(out)
}

/// Draws `n` negatives for instance `r` from the clicked titles of the other
/// instances in `pool`, uniformly and without replacement. Titles equal to
/// instance `r`'s clicked title are excluded and duplicates count once.
pub fn sample_negatives(pool: &[ClickThroughInstance], r: usize, n: usize, seed: u64) -> Result<Vec<Words>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let own = &pool
        .get(r)
        .ok_or_else(|| Error::Config(format!("instance index {r} out of range for pool of {}", pool.len())))?
        .clicked;
    let mut candidates: Vec<&Words> = Vec::new();
    for (j, inst) in pool.iter().enumerate() {
        if j != r && &inst.clicked != own && !candidates.contains(&&inst.clicked) {
            candidates.push(&inst.clicked);
        }
    }
    if candidates.len() < n {
        return Err(Error::PoolTooSmall {
            needed: n,
            available: candidates.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(index::sample(&mut rng, candidates.len(), n)
        .into_iter()
        .map(|j| candidates[j].clone())
        .collect())
}

/// Gives every instance without unclicked titles `n` sampled ones. Instances
/// that already carry negatives are left alone.
pub fn fill_negatives(pool: &mut [ClickThroughInstance], n: usize, seed: u64) -> Result<()> {
    for r in 0..pool.len() {
        if pool[r].negatives.is_empty() {
            let per_instance = seed ^ (r as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            let drawn = sample_negatives(pool, r, n, per_instance).map_err(|e| e.at_instance(r))?;
            pool[r].negatives = drawn;
        }
    }
    Ok(())
}

/// A query with graded candidate documents (grades 0 to 4).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JudgedRanking {
    pub query: Words,
    pub candidates: Vec<(Words, u8)>,
}

pub const MAX_GRADE: u8 = 4;

/// Reads a judgment file. Lines with the same tokenized query are grouped into
/// one ranking; rankings keep the order in which their queries first appear.
pub fn load_judgments(path: impl AsRef<Path>) -> Result<Vec<JudgedRanking>> {
    let path = path.as_ref();
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out: Vec<JudgedRanking> = Vec::new();
    let mut by_query: HashMap<Words, usize> = HashMap::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| Error::Malformed {
            path: path.to_path_buf(),
            line: n + 1,
            reason,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(malformed(format!("expected 3 tab-separated fields, found {}", fields.len())));
        }
        let query = tokenize(fields[0]);
        let doc = tokenize(fields[1]);
        if query.is_empty() || doc.is_empty() {
            return Err(malformed("query or candidate is empty after tokenization".into()));
        }
        let grade: u8 = fields[2]
            .trim()
            .parse()
            .ok()
            .filter(|g| *g <= MAX_GRADE)
            .ok_or_else(|| malformed(format!("relevance {:?} is not an integer in 0..=4", fields[2])))?;
        let slot = *by_query.entry(query.clone()).or_insert_with(|| {
            out.push(JudgedRanking {
                query,
                candidates: Vec::new(),
            });
            out.len() - 1
        });
        out[slot].candidates.push((doc, grade));
    }
    Ok(out)
}

/// Serializes rankings in judgment-file form.
pub fn judgments_to_string(judged: &[JudgedRanking]) -> String {
    let mut out = String::new();
    for j in judged {
        let q = j.query.join(" ");
        for (doc, grade) in &j.candidates {
            out.push_str(&format!("{q}\t{}\t{grade}\n", doc.join(" ")));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(s: &str) -> Words {
        tokenize(s)
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("Bing Web-Search"), vec!["bing", "web", "search"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("ABC123  abc123"), vec!["abc123", "abc123"]);
        assert_eq!(tokenize("c#sharp ##"), vec!["c", "sharp"]);
    }

    #[test]
    fn trigram_examples() {
        assert_eq!(word_to_trigrams("cat").unwrap(), vec!["#ca", "cat", "at#"]);
        assert_eq!(word_to_trigrams("a").unwrap(), vec!["#a#"]);
        assert_eq!(word_to_trigrams("aaaa").unwrap(), vec!["#aa", "aaa", "aaa", "aa#"]);
        assert!(matches!(word_to_trigrams(""), Err(Error::EmptyWord)));
    }

    #[test]
    fn vocabulary_first_occurrence_order() {
        let v = TrigramVocabulary::build([words("cat")]).unwrap();
        assert_eq!(v.dimension(), 3);
        assert_eq!(v.get("#ca"), Some(0));
        assert_eq!(v.get("cat"), Some(1));
        assert_eq!(v.get("at#"), Some(2));

        let twice = TrigramVocabulary::build([words("cat"), words("cat")]).unwrap();
        assert_eq!(twice, v);

        // "#at#" adds only "#at"; "at#" is already present.
        let v = TrigramVocabulary::build([words("cat"), words("at")]).unwrap();
        assert_eq!(v.trigrams(), ["#ca", "cat", "at#", "#at"]);
    }

    #[test]
    fn empty_corpus_rejected() {
        let none: Vec<Words> = Vec::new();
        assert!(matches!(TrigramVocabulary::build(none), Err(Error::EmptyCorpus)));
        assert!(matches!(TrigramVocabulary::build([Words::new()]), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn hash_word_examples() {
        let v = TrigramVocabulary::build([words("cat")]).unwrap();
        assert_eq!(hash_word("cat", &v).unwrap().pairs(), &[(0, 1), (1, 1), (2, 1)]);
        assert!(hash_word("zzz", &v).unwrap().is_zero());

        let v = TrigramVocabulary::build([words("aaaa")]).unwrap();
        assert_eq!(hash_word("aaaa", &v).unwrap().pairs(), &[(0, 1), (1, 2), (2, 1)]);
        assert!(hash_word("", &v).is_err());
    }

    #[test]
    fn vocabulary_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let v = TrigramVocabulary::build([words("pizza hut menu"), words("weather")]).unwrap();
        v.save(&path).unwrap();
        let back = TrigramVocabulary::load(&path).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.content_hash(), v.content_hash());
    }

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn load_clickthrough_examples() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.tsv", "best pizza\tpizza hut menu\tcar insurance\tweather today\n");
        let got = load_clickthrough(&p, 2).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].query, words("best pizza"));
        assert_eq!(got[0].negatives.len(), 2);

        let p = write(&dir, "b.tsv", "q one\tclicked one\tneg a\tneg b\nq two\tclicked two\tneg c\n");
        match load_clickthrough(&p, 2) {
            Err(Error::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }

        let p = write(&dir, "c.tsv", "a\tb\tc\nd\te\tf\ng\th\ti\n");
        let got = load_clickthrough(&p, 1).unwrap();
        let queries: Vec<_> = got.iter().map(|i| i.query[0].as_str()).collect();
        assert_eq!(queries, ["a", "d", "g"]);
    }

    #[test]
    fn load_clickthrough_rejects_bad_lines() {
        let dir = tempfile::tempdir().unwrap();
        for (body, line) in [
            ("ok\tfine\nonly-one-field\n", 2),
            ("   \tclicked\n", 1),
            ("query\t###\n", 1),
            ("q\tsame title\tother\tSame  Title\n", 1),
        ] {
            let p = write(&dir, "bad.tsv", body);
            match read_clickthrough(&p) {
                Err(Error::Malformed { line: l, .. }) => assert_eq!(l, line, "{body:?}"),
                other => panic!("{body:?}: unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn clickthrough_reserializes_tokens() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.tsv", "Best  Pizza!\tPizza-Hut menu\tcar #insurance\n");
        let first = read_clickthrough(&p).unwrap();
        let p2 = write(&dir, "b.tsv", &(first[0].to_line() + "\n"));
        assert_eq!(read_clickthrough(&p2).unwrap(), first);
    }

    fn pool(titles: &[&str]) -> Vec<ClickThroughInstance> {
        titles
            .iter()
            .enumerate()
            .map(|(i, t)| ClickThroughInstance::new(vec![format!("q{i}")], words(t), vec![]).unwrap())
            .collect()
    }

    #[test]
    fn sample_negatives_examples() {
        let p = pool(&["alpha", "beta"]);
        assert!(sample_negatives(&p, 0, 0, 1).unwrap().is_empty());
        assert_eq!(sample_negatives(&p, 0, 1, 1).unwrap(), vec![words("beta")]);

        let p = pool(&["a", "b", "c", "d", "e", "f"]);
        assert_eq!(sample_negatives(&p, 2, 3, 42).unwrap(), sample_negatives(&p, 2, 3, 42).unwrap());
    }

    #[test]
    fn sample_negatives_excludes_own_title() {
        let p = pool(&["same", "same", "other"]);
        assert_eq!(sample_negatives(&p, 0, 1, 7).unwrap(), vec![words("other")]);
        assert!(matches!(
            sample_negatives(&p, 0, 2, 7),
            Err(Error::PoolTooSmall { needed: 2, available: 1 })
        ));
    }

    #[test]
    fn fill_negatives_only_touches_empty() {
        let mut p = pool(&["a", "b", "c", "d"]);
        p[1].negatives = vec![words("zz")];
        fill_negatives(&mut p, 2, 3).unwrap();
        assert_eq!(p[1].negatives, vec![words("zz")]);
        for (r, inst) in p.iter().enumerate() {
            assert!(!inst.negatives.contains(&inst.clicked), "instance {r}");
            if r != 1 {
                assert_eq!(inst.negatives.len(), 2);
            }
        }
    }

    #[test]
    fn judgments_group_by_query() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "j.tsv", "q a\tdoc one\t4\nq b\tdoc two\t0\nQ  A\tdoc three\t1\n");
        let j = load_judgments(&p).unwrap();
        assert_eq!(j.len(), 2);
        assert_eq!(j[0].candidates, vec![(words("doc one"), 4), (words("doc three"), 1)]);
        assert_eq!(j[1].candidates, vec![(words("doc two"), 0)]);

        let p = write(&dir, "bad.tsv", "q\tdoc\t5\n");
        assert!(matches!(load_judgments(&p), Err(Error::Malformed { line: 1, .. })));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn hashed_count_is_window_count(corpus in prop::collection::vec("[a-z0-9]{1,12}", 1..20)) {
                let seq: Words = corpus.clone();
                let vocab = TrigramVocabulary::build([seq]).unwrap();
                for w in &corpus {
                    let v = hash_word(w, &vocab).unwrap();
                    prop_assert_eq!(v.total_count() as usize, w.chars().count());
                    prop_assert!(v.pairs().windows(2).all(|p| p[0].0 < p[1].0));
                }
                let mut seen = std::collections::HashSet::new();
                for t in vocab.trigrams() {
                    let i = vocab.get(t).unwrap();
                    prop_assert!(i < vocab.dimension());
                    prop_assert!(seen.insert(i));
                    prop_assert_eq!(t.chars().count(), 3);
                }
            }

            #[test]
            fn sampled_negatives_avoid_own_click(
                titles in prop::collection::vec("[a-e]{1,2}", 3..12),
                r_seed in any::<u64>(),
            ) {
                let p: Vec<ClickThroughInstance> = titles
                    .iter()
                    .map(|t| ClickThroughInstance::new(vec!["q".into()], vec![t.clone()], vec![]).unwrap())
                    .collect();
                let r = (r_seed as usize) % p.len();
                if let Ok(neg) = sample_negatives(&p, r, 1, r_seed) {
                    prop_assert!(!neg.contains(&p[r].clicked));
                }
            }
        }
    }
}
