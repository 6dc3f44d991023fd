//! Passage store, binary embedding index and exhaustive top-k retrieval.
//!
//! Index file layout, little-endian:
//!
//! ```text
//! magic   b"APREMB01"
//! version u32
//! d       u32
//! count   u64
//! rows    count × (id u64, d × f32)
//! ```

mod corpus;

pub use corpus::{Corpus, Passage};

use std::cmp::Ordering;
use std::path::Path;

use rayon::prelude::*;

use crate::encoder::{encode, EmbeddingVector};
use crate::error::{Error, Result};
use crate::numerics::{dot_slices, sigmoid, Vector};
use crate::trainer::{write_atomic, Model};

pub const INDEX_MAGIC: &[u8; 8] = b"APREMB01";
pub const INDEX_VERSION: u32 = 1;

/// Stored vectors are f32, so unit norm only holds to this tolerance.
pub const INDEX_NORM_TOLERANCE: f64 = 1e-6;

/// Rows scored per parallel task; fixed so results never depend on the
/// thread count.
const SCORE_BLOCK: usize = 1024;

/// Passage embeddings, f32-rounded, widened to f64 in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingIndex {
    dim: usize,
    ids: Vec<u64>,
    rows: Vec<f64>,
}

impl EmbeddingIndex {
    /// Rounds every vector to f32 storage precision.
    pub fn from_rows(dim: usize, rows: Vec<(u64, EmbeddingVector)>) -> Result<Self> {
        let mut index = EmbeddingIndex {
            dim,
            ids: Vec::with_capacity(rows.len()),
            rows: Vec::with_capacity(rows.len() * dim),
        };
        for (id, v) in rows {
            if v.dim() != dim {
                return Err(Error::dims(dim, v.dim()));
            }
            index.ids.push(id);
            index.rows.extend(v.as_slice().iter().map(|&x| x as f32 as f64));
        }
        index.validate(Path::new("<memory>"))?;
        Ok(index)
    }

    fn validate(&self, path: &Path) -> Result<()> {
        let bad = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        if self.dim == 0 {
            return Err(bad("zero dimension".into()));
        }
        let mut seen = std::collections::HashSet::with_capacity(self.ids.len());
        for (j, &id) in self.ids.iter().enumerate() {
            if !seen.insert(id) {
                return Err(Error::DuplicateId(id));
            }
            let row = self.row(j);
            let n = dot_slices(row, row).sqrt();
            if !((n - 1.0).abs() <= INDEX_NORM_TOLERANCE) {
                return Err(bad(format!("row {j} (id {id}) has norm {n}")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.rows[j * self.dim..(j + 1) * self.dim]
    }

    pub fn position(&self, id: u64) -> Option<usize> {
        self.ids.iter().position(|&x| x == id)
    }

    pub fn embedding(&self, j: usize) -> EmbeddingVector {
        EmbeddingVector::from_unit(Vector::from_raw(self.row(j).to_vec()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + self.len() * (8 + 4 * self.dim));
        out.extend_from_slice(INDEX_MAGIC);
        out.extend_from_slice(&INDEX_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for (j, id) in self.ids.iter().enumerate() {
            out.extend_from_slice(&id.to_le_bytes());
            for &x in self.row(j) {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        if buf.len() < 24 {
            return Err(bad("truncated header".into()));
        }
        if &buf[..8] != INDEX_MAGIC {
            return Err(bad("bad magic".into()));
        }
        let version = u32::from_le_bytes(buf[8..12].try_into().unwrap());
        if version != INDEX_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let dim = u32::from_le_bytes(buf[12..16].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(buf[16..24].try_into().unwrap());
        let row_bytes = 8 + 4 * dim;
        let expected = usize::try_from(count)
            .ok()
            .and_then(|c| c.checked_mul(row_bytes))
            .and_then(|b| b.checked_add(24))
            .ok_or_else(|| bad(format!("row count {count} too large")))?;
        if buf.len() != expected {
            return Err(bad(format!("expected {expected} bytes for {count} rows, found {}", buf.len())));
        }
        let count = count as usize;
        let mut index = EmbeddingIndex {
            dim,
            ids: Vec::with_capacity(count),
            rows: Vec::with_capacity(count * dim),
        };
        for rec in buf[24..].chunks_exact(row_bytes) {
            index.ids.push(u64::from_le_bytes(rec[..8].try_into().unwrap()));
            index.rows.extend(
                rec[8..]
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64),
            );
        }
        index.validate(path)?;
        Ok(index)
    }

    pub fn read(path: &Path) -> Result<Self> {
        EmbeddingIndex::from_bytes(&std::fs::read(path)?, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }
}

#[derive(Debug)]
pub struct IndexBuild {
    pub index: EmbeddingIndex,
    /// Passages that could not be encoded, with the reason.
    pub skipped: Vec<(u64, Error)>,
}

/// Encodes every passage with the passage tower, in corpus id order.
pub fn build_index(corpus: &Corpus, model: &Model) -> Result<IndexBuild> {
    model
        .validate()
        .map_err(|e| Error::CheckpointMismatch(e.to_string()))?;
    if corpus.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let passages: Vec<(u64, &Passage)> = corpus.iter().collect();
    let encoded: Vec<(u64, Result<EmbeddingVector>)> = passages
        .par_iter()
        .map(|(id, p)| (*id, encode(&p.full_text(), &model.passage, &model.featurizer, &model.tokenizer)))
        .collect();
    let mut rows = Vec::with_capacity(encoded.len());
    let mut skipped = Vec::new();
    for (id, r) in encoded {
        match r {
            Ok(v) => rows.push((id, v)),
            Err(e) => skipped.push((id, e)),
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(IndexBuild {
        index: EmbeddingIndex::from_rows(model.dims().embed_dim, rows)?,
        skipped,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub pid: u64,
    /// Relevance `σ(s)`.
    pub r: f64,
    /// Logit, the ranking key.
    pub s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankedResult {
    pub hits: Vec<Hit>,
    /// Set when the requested `k` exceeded the index size.
    pub clamped: bool,
}

impl RankedResult {
    pub fn ids(&self) -> Vec<u64> {
        self.hits.iter().map(|h| h.pid).collect()
    }
}

/// Higher score first, then lower id.
fn rank_order(a: &(f64, u64), b: &(f64, u64)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// Top `k` of `(score, id)` pairs under [`rank_order`]; identical to a full
/// sort followed by truncation since the order is total.
pub fn top_k(mut scored: Vec<(f64, u64)>, k: usize) -> Vec<(f64, u64)> {
    if k == 0 {
        return Vec::new();
    }
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, rank_order);
        scored.truncate(k);
    }
    scored.sort_unstable_by(rank_order);
    scored
}

fn ranked(scores: Vec<f64>, ids: &[u64], k: usize) -> Result<RankedResult> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let clamped = k > ids.len();
    let top = top_k(scores.into_iter().zip(ids.iter().copied()).collect(), k.min(ids.len()));
    Ok(RankedResult {
        hits: top
            .into_iter()
            .map(|(s, pid)| Hit { pid, r: sigmoid(s), s })
            .collect(),
        clamped,
    })
}

/// A model paired with an index, with every passage projection `W_p p`
/// computed once.
pub struct Retriever<'a> {
    model: &'a Model,
    index: &'a EmbeddingIndex,
    projected: Vec<f64>,
}

impl<'a> Retriever<'a> {
    pub fn new(model: &'a Model, index: &'a EmbeddingIndex) -> Result<Self> {
        let d = model.dims().embed_dim;
        if index.dim() != d {
            return Err(Error::CheckpointMismatch(format!(
                "index dimension {} but model embeds into {d}",
                index.dim()
            )));
        }
        let h = model.head.hidden_dim();
        let mut projected = vec![0.0; index.len() * h];
        projected
            .par_chunks_mut(h * SCORE_BLOCK)
            .enumerate()
            .for_each(|(b, out)| {
                for (i, hp) in out.chunks_exact_mut(h).enumerate() {
                    let row = index.row(b * SCORE_BLOCK + i);
                    crate::numerics::matvec_into(&model.head.w_p, row, hp);
                }
            });
        Ok(Retriever { model, index, projected })
    }

    pub fn index(&self) -> &EmbeddingIndex {
        self.index
    }

    pub fn encode_query(&self, text: &str) -> Result<EmbeddingVector> {
        self.model.encode_query(text)
    }

    /// ARS logits for every indexed passage, in index order.
    pub fn ars_logits(&self, q: &EmbeddingVector) -> Result<Vec<f64>> {
        let head = &self.model.head;
        let h_q = head.project_query(q.as_slice())?;
        let h = head.hidden_dim();
        let mut out = vec![0.0; self.index.len()];
        out.par_chunks_mut(SCORE_BLOCK)
            .zip(self.projected.par_chunks(h * SCORE_BLOCK))
            .try_for_each(|(o, rows)| head.logits_projected_rows(&h_q, rows, o))?;
        Ok(out)
    }

    /// Dot products (cosines, since both sides are unit vectors).
    pub fn dot_scores(&self, q: &EmbeddingVector) -> Result<Vec<f64>> {
        if q.dim() != self.index.dim() {
            return Err(Error::dims(self.index.dim(), q.dim()));
        }
        let mut out = vec![0.0; self.index.len()];
        out.par_chunks_mut(SCORE_BLOCK).enumerate().for_each(|(b, o)| {
            for (i, s) in o.iter_mut().enumerate() {
                *s = dot_slices(q.as_slice(), self.index.row(b * SCORE_BLOCK + i));
            }
        });
        Ok(out)
    }

    pub fn retrieve_embedding(&self, q: &EmbeddingVector, k: usize) -> Result<RankedResult> {
        ranked(self.ars_logits(q)?, self.index.ids(), k)
    }

    pub fn retrieve(&self, query: &str, k: usize) -> Result<RankedResult> {
        self.retrieve_embedding(&self.encode_query(query)?, k)
    }

    /// Hits carry `s = q·p` and `r = σ(q·p)`.
    pub fn retrieve_dot_embedding(&self, q: &EmbeddingVector, k: usize) -> Result<RankedResult> {
        ranked(self.dot_scores(q)?, self.index.ids(), k)
    }

    pub fn retrieve_dot(&self, query: &str, k: usize) -> Result<RankedResult> {
        self.retrieve_dot_embedding(&self.encode_query(query)?, k)
    }
}

/// Scores the whole index with the head and returns the best `k`.
pub fn retrieve(query: &str, index: &EmbeddingIndex, model: &Model, k: usize) -> Result<RankedResult> {
    Retriever::new(model, index)?.retrieve(query, k)
}

/// As [`retrieve`], ranking by the plain dot product.
pub fn retrieve_baseline_dot(query: &str, index: &EmbeddingIndex, model: &Model, k: usize) -> Result<RankedResult> {
    Retriever::new(model, index)?.retrieve_dot(query, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::TokenizerConfig;
    use crate::numerics::{l2_normalize, Rng};
    use crate::trainer::ModelDims;

    fn model() -> Model {
        let dims = ModelDims {
            feature_dim: 64,
            embed_dim: 8,
            hidden_dim: 4,
        };
        Model::init(dims, TokenizerConfig::default(), 1.0, false, 1.0, &mut Rng::new(5)).unwrap()
    }

    fn unit(xs: &[f64]) -> EmbeddingVector {
        EmbeddingVector::from_unit(l2_normalize(&Vector::new(xs.to_vec()).unwrap()).unwrap())
    }

    #[test]
    fn top_k_matches_full_sort() {
        let mut rng = Rng::new(1);
        let scored: Vec<(f64, u64)> = (0..200).map(|i| ((rng.below(20) as f64) / 4.0, i)).collect();
        let mut full = scored.clone();
        full.sort_by(rank_order);
        for k in [1, 7, 50, 200, 300] {
            assert_eq!(top_k(scored.clone(), k), full[..k.min(200)].to_vec());
        }
    }

    #[test]
    fn ties_break_by_ascending_id() {
        let v = unit(&[1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let index = EmbeddingIndex::from_rows(8, vec![(9, v.clone()), (3, v.clone()), (5, v.clone())]).unwrap();
        let m = model();
        let r = Retriever::new(&m, &index).unwrap();
        assert_eq!(r.retrieve_embedding(&v, 3).unwrap().ids(), vec![3, 5, 9]);
        assert_eq!(r.retrieve_dot_embedding(&v, 3).unwrap().ids(), vec![3, 5, 9]);
    }

    #[test]
    fn dot_baseline_examples() {
        let e0 = unit(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let e1 = unit(&[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let index = EmbeddingIndex::from_rows(8, vec![(1, e1), (2, e0.clone())]).unwrap();
        let m = model();
        let res = Retriever::new(&m, &index).unwrap().retrieve_dot_embedding(&e0, 2).unwrap();
        assert_eq!(res.hits[0].pid, 2);
        assert_eq!(res.hits[0].s, 1.0);
        assert_eq!(res.hits[1].s, 0.0);
    }

    #[test]
    fn clamp_flag() {
        let m = model();
        let corpus: Corpus = (0..4u64)
            .map(|i| (i, Passage { title: String::new(), text: format!("passage number {i}") }))
            .collect();
        let index = build_index(&corpus, &m).unwrap().index;
        let r = retrieve("number", &index, &m, 10).unwrap();
        assert!(r.clamped);
        assert_eq!(r.hits.len(), 4);
        assert!(!retrieve("number", &index, &m, 4).unwrap().clamped);
        assert!(retrieve("number", &index, &m, 0).is_err());
    }

    #[test]
    fn build_reports_unencodable_passages() {
        let m = model();
        let corpus: Corpus = [(1, "real words"), (2, "   "), (3, "more words")]
            .into_iter()
            .map(|(i, t)| (i, Passage { title: String::new(), text: t.into() }))
            .collect();
        let built = build_index(&corpus, &m).unwrap();
        assert_eq!(built.index.ids(), &[1, 3]);
        assert_eq!(built.skipped.len(), 1);
        assert_eq!(built.skipped[0].0, 2);
    }

    #[test]
    fn index_bytes_round_trip() {
        let m = model();
        let corpus: Corpus = (0..10u64)
            .map(|i| (i * 7, Passage { title: "t".into(), text: format!("w{i} x{}", i % 3) }))
            .collect();
        let index = build_index(&corpus, &m).unwrap().index;
        let bytes = index.to_bytes();
        assert_eq!(&bytes[..8], b"APREMB01");
        assert_eq!(bytes.len(), 24 + 10 * (8 + 4 * 8));
        let back = EmbeddingIndex::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, index);
        assert_eq!(back.to_bytes(), bytes);
        assert!(EmbeddingIndex::from_bytes(&bytes[..bytes.len() - 1], Path::new("mem")).is_err());
    }

    #[test]
    fn single_passage_index_equals_encoding() {
        let m = model();
        let corpus: Corpus = std::iter::once((4, Passage { title: String::new(), text: "alpha beta".into() })).collect();
        let index = build_index(&corpus, &m).unwrap().index;
        let e = m.encode_passage("alpha beta").unwrap();
        let rounded: Vec<f64> = e.as_slice().iter().map(|&x| x as f32 as f64).collect();
        assert_eq!(index.row(0), rounded.as_slice());
    }
}
