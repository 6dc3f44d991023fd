//! Top-k accuracy, lexical baselines and evaluation reports.

mod lexical;

pub use lexical::{bm25_score, tfidf_score, LexicalIndex};

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::retrieval::{top_k, Corpus, Retriever};
use crate::trainer::write_atomic;

pub const DEFAULT_KS: [usize; 6] = [1, 5, 10, 20, 50, 100];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalQuery {
    pub qid: u64,
    pub question: String,
    pub relevant: Vec<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EvalSet {
    pub queries: Vec<EvalQuery>,
}

impl EvalSet {
    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    /// Relevant sets must be non-empty, qids unique and, given a corpus,
    /// every id must resolve.
    pub fn validate(&self, corpus: Option<&Corpus>) -> Result<()> {
        let mut seen = BTreeSet::new();
        for q in &self.queries {
            if !seen.insert(q.qid) {
                return Err(Error::DuplicateId(q.qid));
            }
            if q.relevant.is_empty() {
                return Err(Error::Config(format!(
                    "query {} has no relevant passages",
                    q.qid
                )));
            }
            if let Some(c) = corpus {
                if let Some(&pid) = q.relevant.iter().find(|&&p| !c.contains(p)) {
                    return Err(Error::DanglingId { qid: q.qid, pid });
                }
            }
        }
        Ok(())
    }

    pub fn load_jsonl(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut queries = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let q: EvalQuery = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                reason: e.to_string(),
            })?;
            queries.push(q);
        }
        let set = EvalSet { queries };
        if set.is_empty() {
            return Err(Error::EmptyDataset);
        }
        set.validate(None)?;
        Ok(set)
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for q in &self.queries {
            s.push_str(&serde_json::to_string(q).expect("eval query serializes"));
            s.push('\n');
        }
        s
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_jsonl().as_bytes())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub qid: u64,
    /// 1-based rank of the first relevant id; `None` if none was retrieved.
    pub first_hit_rank: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopKReport {
    pub method: String,
    pub ks: Vec<usize>,
    pub accuracies: Vec<f64>,
    pub per_query: Vec<QueryOutcome>,
}

impl TopKReport {
    pub fn accuracy_at(&self, k: usize) -> Option<f64> {
        self.ks
            .iter()
            .position(|&x| x == k)
            .map(|i| self.accuracies[i])
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("bad report: {e}")))
    }

    /// `k,accuracy,method` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,accuracy,method\n");
        for (k, a) in self.ks.iter().zip(&self.accuracies) {
            let _ = writeln!(s, "{k},{a},{}", self.method);
        }
        s
    }

    pub fn write(&self, json_path: &Path, csv_path: &Path) -> Result<()> {
        write_atomic(json_path, self.to_json().as_bytes())?;
        write_atomic(csv_path, self.to_csv().as_bytes())
    }
}

fn normalize_ks(ks: &[usize]) -> Result<Vec<usize>> {
    let set: BTreeSet<usize> = ks.iter().copied().collect();
    if set.is_empty() || set.contains(&0) {
        return Err(Error::Config(
            "ks must be a non-empty list of positive integers".into(),
        ));
    }
    Ok(set.into_iter().collect())
}

/// Fraction of queries with a relevant id in their top `k`, for each `k`.
/// `ranked` maps qid to its ranked id list; scores never enter.
pub fn topk_accuracy(
    ranked: &HashMap<u64, Vec<u64>>,
    eval: &EvalSet,
    ks: &[usize],
    method: &str,
) -> Result<TopKReport> {
    let ks = normalize_ks(ks)?;
    if eval.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let per_query = eval
        .queries
        .iter()
        .map(|q| {
            let ids = ranked.get(&q.qid).ok_or(Error::MissingQuery(q.qid))?;
            Ok(QueryOutcome {
                qid: q.qid,
                first_hit_rank: ids
                    .iter()
                    .position(|id| q.relevant.contains(id))
                    .map(|r| r + 1),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = per_query.len() as f64;
    let accuracies = ks
        .iter()
        .map(|&k| {
            per_query
                .iter()
                .filter(|o| o.first_hit_rank.is_some_and(|r| r <= k))
                .count() as f64
                / n
        })
        .collect();
    Ok(TopKReport {
        method: method.to_string(),
        ks,
        accuracies,
        per_query,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Ars,
    Dot,
    Bm25,
    Tfidf,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Ars, Method::Dot, Method::Bm25, Method::Tfidf];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ars => "ars",
            Method::Dot => "dot",
            Method::Bm25 => "bm25",
            Method::Tfidf => "tfidf",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Method::ALL.into_iter().find(|m| m.name() == s)
    }

    pub fn is_dense(self) -> bool {
        matches!(self, Method::Ars | Method::Dot)
    }
}

/// What a method ranks with.
pub enum Artifacts<'a> {
    Dense(&'a Retriever<'a>),
    Lexical(&'a LexicalIndex),
}

/// Ranks every eval query with `method` (same tie-break everywhere) and
/// scores the result. Queries the encoder cannot embed count as misses.
pub fn evaluate(
    method: Method,
    corpus: &Corpus,
    eval: &EvalSet,
    artifacts: &Artifacts<'_>,
    ks: &[usize],
) -> Result<TopKReport> {
    eval.validate(Some(corpus))?;
    let ks = normalize_ks(ks)?;
    let depth = *ks.last().expect("non-empty ks");
    let ranked: Vec<(u64, Vec<u64>)> = eval
        .queries
        .par_iter()
        .map(|q| -> Result<(u64, Vec<u64>)> {
            let ids = match (method, artifacts) {
                (Method::Ars | Method::Dot, Artifacts::Dense(r)) => {
                    match r.encode_query(&q.question) {
                        Ok(e) => {
                            let res = if method == Method::Ars {
                                r.retrieve_embedding(&e, depth)?
                            } else {
                                r.retrieve_dot_embedding(&e, depth)?
                            };
                            res.ids()
                        }
                        Err(Error::ZeroVector { .. }) => Vec::new(),
                        Err(e) => return Err(e),
                    }
                }
                (Method::Bm25 | Method::Tfidf, Artifacts::Lexical(idx)) => {
                    let tokens = idx.tokenize(&q.question);
                    let scores = if method == Method::Bm25 {
                        idx.bm25_scores(&tokens)
                    } else {
                        idx.tfidf_scores(&tokens)
                    };
                    top_k(
                        scores.into_iter().zip(idx.ids().iter().copied()).collect(),
                        depth,
                    )
                    .into_iter()
                    .map(|(_, id)| id)
                    .collect()
                }
                _ => {
                    return Err(Error::Config(format!(
                        "method {} needs {} artifacts",
                        method.name(),
                        if method.is_dense() {
                            "dense"
                        } else {
                            "lexical"
                        }
                    )))
                }
            };
            Ok((q.qid, ids))
        })
        .collect::<Result<_>>()?;
    topk_accuracy(&ranked.into_iter().collect(), eval, &ks, method.name())
}
