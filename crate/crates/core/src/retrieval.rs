//! Okapi BM25 retrieval over corpus buggy-code, plus assembly of the
//! composite model input (retrieved examples + target + fault location).
//!
//! Terms are the lowercased lexemes from [`crate::corpus::tokenize`];
//! idf(t) = ln(1 + (N - n_t + 0.5)/(n_t + 0.5)), term factor
//! tf*(k1+1)/(tf + k1*(1 - b + b*len/avglen)).

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, CodeExample, Corpus};
use crate::error::{Error, Result};

pub const DEFAULT_K1: f64 = 1.2;
pub const DEFAULT_B: f64 = 0.75;

const SNAPSHOT_VERSION: u32 = 1;

/// Inverted index over the buggy-code fields of a corpus.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Bm25Index {
    /// term -> (doc index -> term frequency); no zero-frequency entries.
    postings: BTreeMap<String, BTreeMap<usize, u64>>,
    doc_ids: Vec<String>,
    doc_lengths: Vec<u64>,
    avg_doc_length: f64,
    k1: f64,
    b: f64,
    corpus_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    /// (example id, score), scores non-increasing.
    pub ranked: Vec<(String, f64)>,
    pub query: String,
}

/// The assembled model input: examples in retrieval order, then the target
/// and its optional fault location.
#[derive(Debug, Clone, PartialEq)]
pub struct ComposedInput {
    pub examples: Vec<CodeExample>,
    pub target: String,
    pub fault_location: Option<String>,
}

impl ComposedInput {
    pub fn bare(target: &str, fault_location: Option<String>) -> Self {
        ComposedInput {
            examples: Vec::new(),
            target: target.to_string(),
            fault_location,
        }
    }
}

/// Build an index over `corpus`. Fails on an empty corpus or out-of-range
/// parameters (k1 > 0, 0 <= b <= 1).
pub fn build_index(corpus: &Corpus, k1: f64, b: f64) -> Result<Bm25Index> {
    if corpus.is_empty() {
        return Err(Error::Config("cannot index an empty corpus".into()));
    }
    if !(k1 > 0.0) {
        return Err(Error::Config(format!("k1 must be > 0, got {k1}")));
    }
    if !(0.0..=1.0).contains(&b) {
        return Err(Error::Config(format!("b must be in [0, 1], got {b}")));
    }
    let mut postings: BTreeMap<String, BTreeMap<usize, u64>> = BTreeMap::new();
    let mut doc_ids = Vec::with_capacity(corpus.len());
    let mut doc_lengths = Vec::with_capacity(corpus.len());
    for (doc, ex) in corpus.examples().iter().enumerate() {
        let terms = tokenize(&ex.buggy_code).terms();
        doc_lengths.push(terms.len() as u64);
        doc_ids.push(ex.id.clone());
        for term in terms {
            *postings.entry(term).or_default().entry(doc).or_insert(0) += 1;
        }
    }
    let avg_doc_length = doc_lengths.iter().sum::<u64>() as f64 / doc_lengths.len() as f64;
    Ok(Bm25Index {
        postings,
        doc_ids,
        doc_lengths,
        avg_doc_length,
        k1,
        b,
        corpus_hash: corpus.content_hash(),
    })
}

impl Bm25Index {
    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn doc_length(&self, doc: usize) -> u64 {
        self.doc_lengths[doc]
    }

    pub fn term_frequency(&self, term: &str, doc: usize) -> u64 {
        self.postings
            .get(term)
            .and_then(|p| p.get(&doc))
            .copied()
            .unwrap_or(0)
    }

    pub fn corpus_hash(&self) -> &str {
        &self.corpus_hash
    }

    /// Per-doc scores for a query; zero-score docs omitted. Contributions
    /// accumulate in query-term order.
    fn score(&self, target: &str) -> HashMap<usize, f64> {
        let n = self.doc_count() as f64;
        let mut scores: HashMap<usize, f64> = HashMap::new();
        for term in tokenize(target).terms() {
            let Some(plist) = self.postings.get(&term) else {
                continue;
            };
            let df = plist.len() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            for (&doc, &tf) in plist {
                let tf = tf as f64;
                let len_norm =
                    1.0 - self.b + self.b * self.doc_lengths[doc] as f64 / self.avg_doc_length;
                let factor = tf * (self.k1 + 1.0) / (tf + self.k1 * len_norm);
                *scores.entry(doc).or_insert(0.0) += idf * factor;
            }
        }
        scores.retain(|_, s| *s > 0.0);
        scores
    }

    /// Cached-index snapshot, keyed by corpus content hash. A cache, not an
    /// interchange format.
    pub fn save_snapshot(&self, path: &Path) -> Result<()> {
        let bytes = serde_json::to_vec(&(SNAPSHOT_VERSION, self))
            .map_err(|e| Error::Internal(e.to_string()))?;
        fs::write(path, bytes).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load_snapshot(path: &Path, expected_corpus_hash: &str) -> Result<Self> {
        let bytes = fs::read(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let (version, index): (u32, Bm25Index) =
            serde_json::from_slice(&bytes).map_err(|e| Error::Protocol(e.to_string()))?;
        if version != SNAPSHOT_VERSION {
            return Err(Error::Protocol(format!(
                "snapshot version {version} != {SNAPSHOT_VERSION}"
            )));
        }
        if index.corpus_hash != expected_corpus_hash {
            return Err(Error::Config(
                "snapshot was built from a different corpus".into(),
            ));
        }
        Ok(index)
    }
}

/// Top-k documents by BM25 score, ties broken by ascending doc id,
/// zero-score docs excluded. `exclude_id` drops the target's own corpus
/// entry when evaluating over a split that overlaps the repository.
pub fn retrieve_excluding(
    index: &Bm25Index,
    target: &str,
    k: usize,
    exclude_id: Option<&str>,
) -> RetrievalResult {
    let scores = index.score(target);
    let mut ranked: Vec<(usize, f64)> = scores.into_iter().collect();
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    let ranked = ranked
        .into_iter()
        .map(|(doc, s)| (index.doc_ids[doc].clone(), s))
        .filter(|(id, _)| Some(id.as_str()) != exclude_id)
        .take(k)
        .collect();
    RetrievalResult {
        ranked,
        query: target.to_string(),
    }
}

pub fn retrieve(index: &Bm25Index, target: &str, k: usize) -> RetrievalResult {
    retrieve_excluding(index, target, k, None)
}

/// Assemble the model input: retrieved examples in descending-score order,
/// then the target and its location. Unknown ids are an internal error.
pub fn compose_input(
    retrieved: &RetrievalResult,
    corpus: &Corpus,
    target: &str,
    location: Option<&str>,
) -> Result<ComposedInput> {
    let mut examples = Vec::with_capacity(retrieved.ranked.len());
    for (id, _) in &retrieved.ranked {
        let ex = corpus
            .get(id)
            .ok_or_else(|| Error::Internal(format!("retrieved id `{id}` not in corpus")))?;
        examples.push(ex.clone());
    }
    Ok(ComposedInput {
        examples,
        target: target.to_string(),
        fault_location: location.map(str::to_string),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SplitLabel;

    fn ex(id: &str, buggy: &str) -> CodeExample {
        CodeExample {
            id: id.into(),
            buggy_code: buggy.into(),
            fixed_code: "fixed".into(),
            fault_location: None,
            commit_message: None,
        }
    }

    fn corpus(docs: &[(&str, &str)]) -> Corpus {
        Corpus::new(
            docs.iter().map(|(id, b)| ex(id, b)).collect(),
            SplitLabel::Custom,
        )
        .unwrap()
    }

    #[test]
    fn single_doc_counting() {
        let c = corpus(&[("d0", "a b a")]);
        let idx = build_index(&c, DEFAULT_K1, DEFAULT_B).unwrap();
        assert_eq!(idx.term_frequency("a", 0), 2);
        assert_eq!(idx.term_frequency("b", 0), 1);
        assert_eq!(idx.doc_length(0), 3);
        assert_eq!(idx.avg_doc_length(), 3.0);
    }

    #[test]
    fn identical_docs_have_identical_lengths() {
        let c = corpus(&[("d0", "x = y + z"), ("d1", "x = y + z")]);
        let idx = build_index(&c, DEFAULT_K1, DEFAULT_B).unwrap();
        assert_eq!(idx.doc_length(0), idx.doc_length(1));
        assert_eq!(idx.avg_doc_length(), idx.doc_length(0) as f64);
    }

    #[test]
    fn bad_params_rejected() {
        let c = corpus(&[("d0", "a")]);
        assert!(build_index(&c, 0.0, DEFAULT_B).is_err());
        assert!(build_index(&c, DEFAULT_K1, 1.5).is_err());
        let empty = Corpus::new(vec![], SplitLabel::Custom).unwrap();
        assert!(build_index(&empty, DEFAULT_K1, DEFAULT_B).is_err());
    }

    #[test]
    fn single_candidate_ranks_first() {
        let c = corpus(&[("d0", "player release handle")]);
        let idx = build_index(&c, DEFAULT_K1, DEFAULT_B).unwrap();
        let r = retrieve(&idx, "release the player", 5);
        assert_eq!(r.ranked.len(), 1);
        assert_eq!(r.ranked[0].0, "d0");
        assert!(r.ranked[0].1 > 0.0);
    }

    #[test]
    fn no_shared_terms_is_empty() {
        let c = corpus(&[("d0", "alpha beta"), ("d1", "gamma delta")]);
        let idx = build_index(&c, DEFAULT_K1, DEFAULT_B).unwrap();
        assert!(retrieve(&idx, "omega", 5).ranked.is_empty());
    }

    #[test]
    fn terms_are_case_folded() {
        let c = corpus(&[("d0", "PlayerHandle release")]);
        let idx = build_index(&c, DEFAULT_K1, DEFAULT_B).unwrap();
        assert_eq!(retrieve(&idx, "playerhandle", 1).ranked.len(), 1);
    }

    #[test]
    fn self_retrieval_excluded() {
        let c = corpus(&[("d0", "a b c"), ("d1", "a b d")]);
        let idx = build_index(&c, DEFAULT_K1, DEFAULT_B).unwrap();
        let r = retrieve_excluding(&idx, "a b c", 2, Some("d0"));
        assert_eq!(r.ranked.len(), 1);
        assert_eq!(r.ranked[0].0, "d1");
    }

    #[test]
    fn compose_preserves_order_and_handles_empty() {
        let c = corpus(&[("d0", "a"), ("d1", "b"), ("d2", "c")]);
        let r = RetrievalResult {
            ranked: vec![("d2".into(), 2.0), ("d0".into(), 1.0)],
            query: "q".into(),
        };
        let composed = compose_input(&r, &c, "t", None).unwrap();
        assert_eq!(
            composed
                .examples
                .iter()
                .map(|e| e.id.as_str())
                .collect::<Vec<_>>(),
            vec!["d2", "d0"]
        );
        assert_eq!(composed.target, "t");
        assert!(composed.fault_location.is_none());

        let empty = RetrievalResult {
            ranked: vec![],
            query: "q".into(),
        };
        assert!(compose_input(&empty, &c, "t", Some("line 2"))
            .unwrap()
            .examples
            .is_empty());
    }

    #[test]
    fn compose_unknown_id_is_internal_error() {
        let c = corpus(&[("d0", "a")]);
        let r = RetrievalResult {
            ranked: vec![("dX".into(), 1.0)],
            query: "q".into(),
        };
        assert!(matches!(
            compose_input(&r, &c, "t", None),
            Err(Error::Internal(_))
        ));
    }

    #[test]
    fn term_factor_monotone_in_frequency() {
        // with idf and document length held fixed, one more occurrence of
        // a query term never lowers the score
        let factor =
            |tf: f64, len_norm: f64| tf * (DEFAULT_K1 + 1.0) / (tf + DEFAULT_K1 * len_norm);
        for len_norm in [0.5, 1.0, 2.0] {
            for tf in 0..30 {
                assert!(factor(tf as f64 + 1.0, len_norm) >= factor(tf as f64, len_norm));
            }
        }
    }

    #[test]
    fn snapshot_roundtrip() {
        let c = corpus(&[("d0", "a b a"), ("d1", "b c")]);
        let idx = build_index(&c, DEFAULT_K1, DEFAULT_B).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.snap");
        idx.save_snapshot(&path).unwrap();
        let loaded = Bm25Index::load_snapshot(&path, &c.content_hash()).unwrap();
        assert_eq!(
            retrieve(&loaded, "a b", 2).ranked,
            retrieve(&idx, "a b", 2).ranked
        );
        assert!(Bm25Index::load_snapshot(&path, "otherhash").is_err());
    }
}
