use std::collections::{BTreeMap, HashMap};

use crate::encoder::{tokenize, TokenizerConfig};
use crate::error::{Error, Result};
use crate::retrieval::Corpus;

/// Inverted index for BM25 and TF-IDF.
#[derive(Clone, Debug)]
pub struct LexicalIndex {
    pub k1: f64,
    pub b: f64,
    tokenizer: TokenizerConfig,
    ids: Vec<u64>,
    positions: HashMap<u64, usize>,
    doc_len: Vec<f64>,
    avgdl: f64,
    /// term -> (document frequency, postings of (doc position, tf))
    terms: BTreeMap<String, (u32, Vec<(usize, u32)>)>,
    /// ℓ2 norm of each document's ln(1+tf)·idf vector
    tfidf_norm: Vec<f64>,
}

impl LexicalIndex {
    pub const DEFAULT_K1: f64 = 1.2;
    pub const DEFAULT_B: f64 = 0.75;

    pub fn build(corpus: &Corpus, tokenizer: TokenizerConfig) -> Result<Self> {
        Self::with_params(corpus, tokenizer, Self::DEFAULT_K1, Self::DEFAULT_B)
    }

    pub fn with_params(
        corpus: &Corpus,
        tokenizer: TokenizerConfig,
        k1: f64,
        b: f64,
    ) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if !(k1 >= 0.0 && (0.0..=1.0).contains(&b)) {
            return Err(Error::Config(format!(
                "need k1 >= 0 and b in [0, 1], got k1={k1} b={b}"
            )));
        }
        let mut ids = Vec::with_capacity(corpus.len());
        let mut doc_len = Vec::with_capacity(corpus.len());
        let mut terms: BTreeMap<String, (u32, Vec<(usize, u32)>)> = BTreeMap::new();
        for (pos, (pid, passage)) in corpus.iter().enumerate() {
            let tokens = tokenize(&passage.full_text(), &tokenizer);
            doc_len.push(tokens.len() as f64);
            ids.push(pid);
            let mut counts: BTreeMap<String, u32> = BTreeMap::new();
            for t in tokens {
                *counts.entry(t).or_default() += 1;
            }
            for (t, tf) in counts {
                let entry = terms.entry(t).or_default();
                entry.0 += 1;
                entry.1.push((pos, tf));
            }
        }
        let total: f64 = doc_len.iter().sum();
        if total == 0.0 {
            return Err(Error::Config("corpus has no tokens".into()));
        }
        let avgdl = total / ids.len() as f64;
        let positions = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let mut index = LexicalIndex {
            k1,
            b,
            tokenizer,
            ids,
            positions,
            doc_len,
            avgdl,
            terms,
            tfidf_norm: Vec::new(),
        };
        let mut sq = vec![0.0; index.ids.len()];
        for (df, postings) in index.terms.values() {
            let idf = index.tfidf_idf(*df);
            for &(pos, tf) in postings {
                let w = (1.0 + tf as f64).ln() * idf;
                sq[pos] += w * w;
            }
        }
        index.tfidf_norm = sq.into_iter().map(f64::sqrt).collect();
        Ok(index)
    }

    pub fn tokenizer(&self) -> &TokenizerConfig {
        &self.tokenizer
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        tokenize(text, &self.tokenizer)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Document ids in scoring order.
    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn df(&self, term: &str) -> u32 {
        self.terms.get(term).map_or(0, |t| t.0)
    }

    /// `ln(1 + (N - df + 0.5) / (df + 0.5))`, never negative.
    pub fn bm25_idf(&self, df: u32) -> f64 {
        let n = self.ids.len() as f64;
        let df = df as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// `ln((1 + N) / (1 + df)) + 1`.
    pub fn tfidf_idf(&self, df: u32) -> f64 {
        ((1.0 + self.ids.len() as f64) / (1.0 + df as f64)).ln() + 1.0
    }

    fn position(&self, pid: u64) -> Result<usize> {
        self.positions
            .get(&pid)
            .copied()
            .ok_or(Error::UnknownDoc(pid))
    }

    fn bm25_term(&self, idf: f64, tf: u32, pos: usize) -> f64 {
        let tf = tf as f64;
        let norm = 1.0 - self.b + self.b * self.doc_len[pos] / self.avgdl;
        idf * tf * (self.k1 + 1.0) / (tf + self.k1 * norm)
    }

    /// BM25 scores of every document, in [`ids`](Self::ids) order. Repeated
    /// query terms count once per occurrence.
    pub fn bm25_scores(&self, query: &[String]) -> Vec<f64> {
        let mut scores = vec![0.0; self.ids.len()];
        for t in query {
            if let Some((df, postings)) = self.terms.get(t) {
                let idf = self.bm25_idf(*df);
                for &(pos, tf) in postings {
                    scores[pos] += self.bm25_term(idf, tf, pos);
                }
            }
        }
        scores
    }

    fn query_weights(&self, query: &[String]) -> (Vec<(&(u32, Vec<(usize, u32)>), f64)>, f64) {
        let mut counts: BTreeMap<&str, u32> = BTreeMap::new();
        for t in query {
            *counts.entry(t.as_str()).or_default() += 1;
        }
        let mut weights = Vec::new();
        let mut sq = 0.0;
        for (t, qtf) in counts {
            if let Some(entry) = self.terms.get(t) {
                let w = (1.0 + qtf as f64).ln() * self.tfidf_idf(entry.0);
                sq += w * w;
                weights.push((entry, w));
            }
        }
        (weights, sq.sqrt())
    }

    /// Cosine between `ln(1+tf)·idf` vectors for every document.
    pub fn tfidf_scores(&self, query: &[String]) -> Vec<f64> {
        let mut dots = vec![0.0; self.ids.len()];
        let (weights, q_norm) = self.query_weights(query);
        if q_norm == 0.0 {
            return dots;
        }
        for ((df, postings), wq) in weights {
            let idf = self.tfidf_idf(*df);
            for &(pos, tf) in postings {
                dots[pos] += wq * (1.0 + tf as f64).ln() * idf;
            }
        }
        for (d, n) in dots.iter_mut().zip(&self.tfidf_norm) {
            *d = if *n == 0.0 {
                0.0
            } else {
                (*d / (q_norm * n)).min(1.0)
            };
        }
        dots
    }
}

/// Okapi BM25 of one document.
pub fn bm25_score(query: &[String], pid: u64, index: &LexicalIndex) -> Result<f64> {
    let pos = index.position(pid)?;
    let mut score = 0.0;
    for t in query {
        if let Some((df, postings)) = index.terms.get(t) {
            if let Ok(i) = postings.binary_search_by_key(&pos, |p| p.0) {
                score += index.bm25_term(index.bm25_idf(*df), postings[i].1, pos);
            }
        }
    }
    Ok(score)
}

/// TF-IDF cosine of one document, in `[0, 1]`.
pub fn tfidf_score(query: &[String], pid: u64, index: &LexicalIndex) -> Result<f64> {
    let pos = index.position(pid)?;
    Ok(index.tfidf_scores(query)[pos])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::Passage;

    fn corpus(docs: &[&str]) -> Corpus {
        docs.iter()
            .enumerate()
            .map(|(i, t)| {
                (
                    i as u64 + 1,
                    Passage {
                        title: String::new(),
                        text: t.to_string(),
                    },
                )
            })
            .collect()
    }

    fn q(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn bm25_toy_case() {
        let idx =
            LexicalIndex::build(&corpus(&["a b", "a c"]), TokenizerConfig::default()).unwrap();
        let s2 = bm25_score(&q("c"), 2, &idx).unwrap();
        assert!((s2 - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(bm25_score(&q("c"), 1, &idx).unwrap(), 0.0);
        assert_eq!(idx.bm25_scores(&q("c")), vec![0.0, s2]);
    }

    #[test]
    fn bm25_unknown_terms_and_duplicates() {
        let idx =
            LexicalIndex::build(&corpus(&["a b", "a c", "d"]), TokenizerConfig::default()).unwrap();
        assert!(idx.bm25_scores(&q("zzz yyy")).iter().all(|&s| s == 0.0));
        let once = bm25_score(&q("b"), 1, &idx).unwrap();
        let twice = bm25_score(&q("b b"), 1, &idx).unwrap();
        assert!((twice - 2.0 * once).abs() < 1e-15);
        assert!(matches!(
            bm25_score(&q("b"), 99, &idx),
            Err(Error::UnknownDoc(99))
        ));
    }

    #[test]
    fn tfidf_examples() {
        let idx = LexicalIndex::build(
            &corpus(&["solo", "a b", "a c solo"]),
            TokenizerConfig::default(),
        )
        .unwrap();
        let s = idx.tfidf_scores(&q("solo"));
        assert!((s[0] - 1.0).abs() < 1e-12);
        assert!(s[0] > s[2] && s[1] == 0.0);
        assert!(idx
            .tfidf_scores(&q("nothing here"))
            .iter()
            .all(|&x| x == 0.0));
        for x in idx.tfidf_scores(&q("a b c solo a")) {
            assert!((0.0..=1.0).contains(&x));
        }
        assert_eq!(tfidf_score(&q("solo"), 1, &idx).unwrap(), s[0]);
    }

    #[test]
    fn idf_non_negative() {
        let idx =
            LexicalIndex::build(&corpus(&["a", "a", "a b"]), TokenizerConfig::default()).unwrap();
        for df in 0..=3 {
            assert!(idx.bm25_idf(df) >= 0.0);
        }
    }
}
