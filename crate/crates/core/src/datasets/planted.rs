//! Synthetic corpora with a known relevance function.
//!
//! Every passage and query carries a unit latent vector `x`. Its text spells
//! the latent out as token counts: token `(j, sign x_j)` appears about
//! `magnitude · |x_j|` times, picked among a few synonyms, plus filler noise.
//! Hashed counts are then a linear image of `x`, which a linear adapter can
//! invert. Relevance is decided by a hidden scorer of the same form as the
//! trained head,
//!
//! ```text
//! s*(x_q, x_p) = w*ᵀ tanh(c · (A x_q) ⊙ (B x_p))
//! ```
//!
//! and each query's gold passage is its brute-force argmax over the corpus.
//! Hard negatives are the next `pool_size` passages under the same scorer.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{write_retriever_jsonl, RetrieverExample};
use crate::encoder::HashingFeaturizer;
use crate::error::{Error, Result};
use crate::eval::{EvalQuery, EvalSet};
use crate::numerics::{dot_slices, Matrix, Rng};
use crate::retrieval::{Corpus, Passage};
use crate::trainer::write_atomic;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlantedModelSpec {
    pub seed: u64,
    pub latent_dim: usize,
    /// Nonzero coordinates per latent; 0 means all of them.
    pub active_dims: usize,
    /// Synonyms per latent token.
    pub vocab_size: usize,
    pub corpus_size: usize,
    pub train_queries: usize,
    pub test_queries: usize,
    pub pool_size: usize,
    /// Std of the Gaussian perturbation of a query latent around its target.
    pub noise: f64,
    /// Token mass spent on a unit latent.
    pub magnitude: f64,
    pub filler_tokens: usize,
    /// How far `B` is rotated away from `A`: 0 gives `B = A`, 1 an
    /// independent draw. Away from 0 a plain dot product misranks.
    pub mixing: f64,
    /// Hidden scorer sharpness `c`, in units of `1/latent_dim`.
    pub sharpness: f64,
    /// Hash width the vocabulary is kept collision-free for.
    pub feature_dim: usize,
    /// Queries use a vocabulary disjoint from the passages'.
    pub disjoint_vocab: bool,
}

impl Default for PlantedModelSpec {
    fn default() -> Self {
        PlantedModelSpec {
            seed: 2024,
            latent_dim: 128,
            active_dims: 8,
            vocab_size: 1,
            corpus_size: 1000,
            train_queries: 200,
            test_queries: 100,
            pool_size: super::DEFAULT_POOL_SIZE,
            noise: 0.05,
            magnitude: 80.0,
            filler_tokens: 0,
            sharpness: 2.0,
            mixing: 0.0,
            feature_dim: 1024,
            disjoint_vocab: false,
        }
    }
}

impl PlantedModelSpec {
    fn vocab_len(&self) -> usize {
        let towers = if self.disjoint_vocab { 2 } else { 1 };
        towers * (2 * self.latent_dim * self.vocab_size + 2 * self.filler_tokens.max(1) * 4)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::SpecInfeasible(m));
        if self.corpus_size < self.pool_size + 1 {
            return fail(format!(
                "corpus_size {} must be at least pool_size + 1 = {}",
                self.corpus_size,
                self.pool_size + 1
            ));
        }
        if self.train_queries + self.test_queries > self.corpus_size {
            return fail(format!(
                "{} queries need distinct gold passages but the corpus has {}",
                self.train_queries + self.test_queries,
                self.corpus_size
            ));
        }
        if self.train_queries + self.test_queries == 0 {
            return fail("no queries requested".into());
        }
        if self.latent_dim < 2 || self.vocab_size == 0 || self.pool_size == 0 {
            return fail("latent_dim >= 2, vocab_size >= 1 and pool_size >= 1 required".into());
        }
        if self.active_dims > self.latent_dim {
            return fail(format!(
                "active_dims {} exceeds latent_dim {}",
                self.active_dims, self.latent_dim
            ));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite())
            || !(self.sharpness > 0.0 && self.sharpness.is_finite())
        {
            return fail("noise must be >= 0 and sharpness > 0".into());
        }
        if !(0.0..=1.0).contains(&self.mixing) {
            return fail(format!("mixing must lie in [0, 1], got {}", self.mixing));
        }
        if !(self.magnitude >= 1.0 && self.magnitude.is_finite()) {
            return fail("magnitude must be >= 1".into());
        }
        if self.feature_dim < self.vocab_len() {
            return fail(format!(
                "feature_dim {} cannot hold a collision-free vocabulary of {} tokens",
                self.feature_dim,
                self.vocab_len()
            ));
        }
        Ok(())
    }
}

/// Sizes for the lexical-mismatch generator; the rest follows the planted
/// defaults with disjoint query and passage vocabularies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct LexicalMismatchSizes {
    pub corpus_size: usize,
    pub train_queries: usize,
    pub test_queries: usize,
    pub pool_size: usize,
}

impl Default for LexicalMismatchSizes {
    fn default() -> Self {
        LexicalMismatchSizes {
            corpus_size: 1000,
            train_queries: 200,
            test_queries: 100,
            pool_size: super::DEFAULT_POOL_SIZE,
        }
    }
}

/// The hidden relevance function and every latent it was evaluated on.
/// Never written to disk.
#[derive(Clone, Debug)]
pub struct HiddenScorer {
    pub a: Matrix,
    pub b: Matrix,
    pub w: Vec<f64>,
    pub sharpness: f64,
    pub passage_latents: BTreeMap<u64, Vec<f64>>,
    pub query_latents: BTreeMap<u64, Vec<f64>>,
}

impl HiddenScorer {
    fn project(m: &Matrix, x: &[f64]) -> Vec<f64> {
        (0..m.rows()).map(|i| dot_slices(m.row(i), x)).collect()
    }

    fn score_projected(&self, u: &[f64], v: &[f64]) -> f64 {
        let c = self.sharpness * u.len() as f64;
        self.w
            .iter()
            .zip(u.iter().zip(v))
            .map(|(w, (a, b))| w * (c * a * b).tanh())
            .sum()
    }

    pub fn score(&self, x_q: &[f64], x_p: &[f64]) -> f64 {
        self.score_projected(&Self::project(&self.a, x_q), &Self::project(&self.b, x_p))
    }

    /// Passage ids by descending hidden score, ties by ascending id.
    pub fn rank(&self, x_q: &[f64]) -> Vec<(u64, f64)> {
        let u = Self::project(&self.a, x_q);
        let mut scored: Vec<(u64, f64)> = self
            .passage_latents
            .iter()
            .map(|(&pid, x)| (pid, self.score_projected(&u, &Self::project(&self.b, x))))
            .collect();
        scored.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
        scored
    }

    /// Brute-force check that every query's gold passage ranks first.
    pub fn verify(&self, gold: &BTreeMap<u64, u64>) -> Result<()> {
        for (qid, &pid) in gold {
            let x = self
                .query_latents
                .get(qid)
                .ok_or(Error::MissingQuery(*qid))?;
            let top = self.rank(x)[0].0;
            if top != pid {
                return Err(Error::SpecInfeasible(format!(
                    "query {qid}: hidden scorer ranks {top} above gold {pid}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct GeneratedDataset {
    pub corpus: Corpus,
    pub train: Vec<RetrieverExample>,
    pub test: EvalSet,
    pub hidden: HiddenScorer,
    /// Generator parameters, without the hidden scorer.
    pub spec_echo: serde_json::Value,
}

impl GeneratedDataset {
    /// Gold passage per query, train and test.
    pub fn gold(&self) -> BTreeMap<u64, u64> {
        self.train
            .iter()
            .map(|e| (e.qid, e.positives[0]))
            .chain(self.test.queries.iter().map(|q| (q.qid, q.relevant[0])))
            .collect()
    }

    /// Writes `corpus.jsonl`, `train.jsonl`, `test.jsonl` and `spec.json`
    /// after re-running the hidden-scorer self-test.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        self.hidden.verify(&self.gold())?;
        std::fs::create_dir_all(dir)?;
        let files: Vec<PathBuf> = ["corpus.jsonl", "train.jsonl", "test.jsonl", "spec.json"]
            .iter()
            .map(|f| dir.join(f))
            .collect();
        self.corpus.write_jsonl(&files[0])?;
        write_retriever_jsonl(&files[1], &self.train)?;
        self.test.write_jsonl(&files[2])?;
        let mut spec =
            serde_json::to_string_pretty(&self.spec_echo).map_err(std::io::Error::from)?;
        spec.push('\n');
        write_atomic(&files[3], spec.as_bytes())?;
        Ok(files)
    }
}

/// Unit vector with Gaussian entries on a random support of `active` coordinates.
fn unit_gaussian(k: usize, active: usize, rng: &mut Rng) -> Vec<f64> {
    let mut support: Vec<usize> = (0..k).collect();
    rng.shuffle(&mut support);
    support.truncate(if active == 0 { k } else { active });
    loop {
        let mut x = vec![0.0; k];
        for &j in &support {
            x[j] = rng.normal();
        }
        let n = dot_slices(&x, &x).sqrt();
        if n > 1e-6 {
            return x.into_iter().map(|v| v / n).collect();
        }
    }
}

/// Haar-random orthogonal matrix by Gram–Schmidt on Gaussian rows.
fn random_orthogonal(k: usize, rng: &mut Rng) -> Matrix {
    orthonormalize(k, |_| (0..k).map(|_| rng.normal()).collect())
}

/// Gram–Schmidt over candidate rows `row(i)`; degenerate candidates are
/// redrawn by calling `row` again.
fn orthonormalize(k: usize, mut row: impl FnMut(usize) -> Vec<f64>) -> Matrix {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(k);
    while rows.len() < k {
        let mut v = row(rows.len());
        for r in &rows {
            let c = dot_slices(r, &v);
            v.iter_mut().zip(r).for_each(|(x, y)| *x -= c * y);
        }
        let n = dot_slices(&v, &v).sqrt();
        if n > 1e-6 {
            rows.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    Matrix::from_rows(&rows).expect("square rows")
}

/// Token names for one tower, each in its own hash bucket.
struct Vocabulary {
    /// `latent[j][0 | 1]` = synonyms for `+x_j` / `-x_j`
    latent: Vec<[Vec<String>; 2]>,
    filler: Vec<String>,
}

const SYLLABLES: [&str; 16] = [
    "ka", "lu", "mi", "so", "ta", "ne", "ri", "po", "da", "fe", "gi", "ho", "ju", "ba", "ze", "wo",
];

fn word(mut n: u64, rng: &mut Rng) -> String {
    let mut s = String::new();
    for _ in 0..3 {
        s.push_str(SYLLABLES[(n % 16) as usize]);
        n /= 16;
    }
    s.push_str(SYLLABLES[rng.below(16)]);
    s
}

fn vocabulary(
    spec: &PlantedModelSpec,
    used: &mut HashSet<usize>,
    featurizer: &HashingFeaturizer,
    rng: &mut Rng,
) -> Vocabulary {
    let mut fresh = |rng: &mut Rng| loop {
        let w = word(rng.next_u64(), rng);
        if used.insert(featurizer.bucket(&w)) {
            return w;
        }
    };
    let latent = (0..spec.latent_dim)
        .map(|_| {
            [
                (0..spec.vocab_size).map(|_| fresh(rng)).collect(),
                (0..spec.vocab_size).map(|_| fresh(rng)).collect(),
            ]
        })
        .collect();
    let filler = (0..spec.filler_tokens.max(1) * 4)
        .map(|_| fresh(rng))
        .collect();
    Vocabulary { latent, filler }
}

fn render(x: &[f64], vocab: &Vocabulary, spec: &PlantedModelSpec, rng: &mut Rng) -> String {
    let mut tokens: Vec<&str> = Vec::new();
    for (j, &v) in x.iter().enumerate() {
        let count = (spec.magnitude * v.abs()).round() as usize;
        let syn = &vocab.latent[j][usize::from(v < 0.0)];
        for _ in 0..count {
            tokens.push(&syn[rng.below(syn.len())]);
        }
    }
    for _ in 0..spec.filler_tokens {
        tokens.push(&vocab.filler[rng.below(vocab.filler.len())]);
    }
    if tokens.is_empty() {
        tokens.push(&vocab.filler[0]);
    }
    rng.shuffle(&mut tokens);
    tokens.join(" ")
}

/// Builds corpus, training examples and a held-out eval set from `spec`.
pub fn generate_planted(spec: &PlantedModelSpec) -> Result<GeneratedDataset> {
    spec.validate()?;
    let root = Rng::new(spec.seed);
    let k = spec.latent_dim;
    let featurizer = HashingFeaturizer::new(spec.feature_dim)?;

    let mut vocab_rng = root.derive("vocabulary");
    let mut used = HashSet::new();
    let passage_vocab = vocabulary(spec, &mut used, &featurizer, &mut vocab_rng);
    let query_vocab = if spec.disjoint_vocab {
        Some(vocabulary(spec, &mut used, &featurizer, &mut vocab_rng))
    } else {
        None
    };
    let query_vocab = query_vocab.as_ref().unwrap_or(&passage_vocab);

    let mut scorer_rng = root.derive("scorer");
    let a = random_orthogonal(k, &mut scorer_rng);
    let b = if spec.mixing == 0.0 {
        a.clone()
    } else {
        let other = random_orthogonal(k, &mut scorer_rng);
        let m = spec.mixing;
        orthonormalize(k, |i| {
            a.row(i)
                .iter()
                .zip(other.row(i))
                .map(|(x, y)| (1.0 - m) * x + m * y)
                .collect()
        })
    };
    let w: Vec<f64> = (0..k).map(|_| scorer_rng.uniform(0.5, 1.5)).collect();

    let mut corpus_rng = root.derive("corpus");
    let mut pids: Vec<u64> = (1..=spec.corpus_size as u64).collect();
    corpus_rng.shuffle(&mut pids);
    let mut passage_latents = BTreeMap::new();
    let mut corpus = Corpus::new();
    for &pid in &pids {
        let x = unit_gaussian(k, spec.active_dims, &mut corpus_rng);
        let text = render(&x, &passage_vocab, spec, &mut corpus_rng);
        corpus.insert(
            pid,
            Passage {
                title: String::new(),
                text,
            },
        )?;
        passage_latents.insert(pid, x);
    }
    let mut hidden = HiddenScorer {
        a,
        b,
        w,
        sharpness: spec.sharpness,
        passage_latents,
        query_latents: BTreeMap::new(),
    };

    let mut query_rng = root.derive("queries");
    let total = spec.train_queries + spec.test_queries;
    let mut taken = HashSet::new();
    let mut queries = Vec::with_capacity(total);
    let mut attempts = 0usize;
    while queries.len() < total {
        attempts += 1;
        if attempts > 50 * total + 1000 {
            return Err(Error::SpecInfeasible(format!(
                "found only {} of {total} queries with a distinct, unambiguous gold passage",
                queries.len()
            )));
        }
        let target = pids[query_rng.below(pids.len())];
        // A x_q ∝ w⁻¹ ⊙ B x_t makes x_t the linearized argmax
        let u: Vec<f64> = HiddenScorer::project(&hidden.b, &hidden.passage_latents[&target])
            .iter()
            .zip(&hidden.w)
            .map(|(v, w)| v / w)
            .collect();
        let x_t: Vec<f64> = (0..k)
            .map(|j| (0..k).map(|i| hidden.a.get(i, j) * u[i]).sum())
            .collect();
        let n_t = dot_slices(&x_t, &x_t).sqrt();
        let x: Vec<f64> = x_t
            .iter()
            .map(|v| v / n_t + spec.noise * query_rng.normal() / (k as f64).sqrt())
            .collect();
        let n = dot_slices(&x, &x).sqrt();
        let x_q: Vec<f64> = x.iter().map(|v| v / n).collect();
        let ranked = hidden.rank(&x_q);
        // a unique winner, and one no other query already claimed
        if ranked[0].1 - ranked[1].1 < 1e-9 || !taken.insert(ranked[0].0) {
            continue;
        }
        let qid = queries.len() as u64 + 1;
        let question = render(&x_q, query_vocab, spec, &mut query_rng);
        let negatives: Vec<u64> = ranked[1..=spec.pool_size].iter().map(|r| r.0).collect();
        hidden.query_latents.insert(qid, x_q);
        queries.push(RetrieverExample {
            qid,
            question,
            positives: vec![ranked[0].0],
            negatives,
        });
    }
    let test = EvalSet {
        queries: queries
            .split_off(spec.train_queries)
            .into_iter()
            .map(|e| EvalQuery {
                qid: e.qid,
                question: e.question,
                relevant: e.positives,
            })
            .collect(),
    };
    let mut spec_echo = serde_json::to_value(spec).map_err(std::io::Error::from)?;
    spec_echo["generator"] = serde_json::Value::from(if spec.disjoint_vocab {
        "lexical"
    } else {
        "planted"
    });
    let out = GeneratedDataset {
        corpus,
        train: queries,
        test,
        hidden,
        spec_echo,
    };
    out.hidden.verify(&out.gold())?;
    Ok(out)
}

/// Planted data whose queries share no token with any passage, so term
/// matching scores every gold pair zero.
pub fn generate_lexical_mismatch(
    seed: u64,
    sizes: LexicalMismatchSizes,
) -> Result<GeneratedDataset> {
    generate_planted(&PlantedModelSpec {
        seed,
        corpus_size: sizes.corpus_size,
        train_queries: sizes.train_queries,
        test_queries: sizes.test_queries,
        pool_size: sizes.pool_size,
        latent_dim: 16,
        active_dims: 0,
        disjoint_vocab: true,
        ..PlantedModelSpec::default()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{tokenize, TokenizerConfig};

    fn small(disjoint: bool) -> PlantedModelSpec {
        PlantedModelSpec {
            corpus_size: 120,
            train_queries: 20,
            test_queries: 10,
            disjoint_vocab: disjoint,
            ..PlantedModelSpec::default()
        }
    }

    #[test]
    fn cardinalities_and_ids() {
        let d = generate_planted(&small(false)).unwrap();
        assert_eq!(d.corpus.len(), 120);
        assert_eq!((d.train.len(), d.test.len()), (20, 10));
        let gold = d.gold();
        assert_eq!(gold.len(), 30);
        let distinct: HashSet<u64> = gold.values().copied().collect();
        assert_eq!(distinct.len(), 30);
        for ex in &d.train {
            assert_eq!(ex.negatives.len(), 29);
            assert!(ex.validate().is_ok());
            assert!(ex.negatives.iter().all(|&p| d.corpus.contains(p)));
        }
    }

    #[test]
    fn negatives_are_next_ranks() {
        let d = generate_planted(&small(false)).unwrap();
        for ex in &d.train {
            let ranked = d.hidden.rank(&d.hidden.query_latents[&ex.qid]);
            let ids: Vec<u64> = ranked.iter().map(|r| r.0).collect();
            assert_eq!(ids[0], ex.positives[0]);
            assert_eq!(&ids[1..30], ex.negatives.as_slice());
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_planted(&small(false)).unwrap();
        let b = generate_planted(&small(false)).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        assert_eq!(a.corpus, b.corpus);
        let c = generate_planted(&PlantedModelSpec {
            seed: 1,
            ..small(false)
        })
        .unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn lexical_mismatch_shares_no_tokens() {
        let d = generate_planted(&small(true)).unwrap();
        let cfg = TokenizerConfig::default();
        let passage_tokens: HashSet<String> = d
            .corpus
            .iter()
            .flat_map(|(_, p)| tokenize(&p.full_text(), &cfg))
            .collect();
        for q in &d.test.queries {
            assert!(tokenize(&q.question, &cfg)
                .iter()
                .all(|t| !passage_tokens.contains(t)));
        }
    }

    #[test]
    fn infeasible_specs() {
        let too_small = PlantedModelSpec {
            corpus_size: 29,
            ..small(false)
        };
        assert!(
            matches!(generate_planted(&too_small), Err(Error::SpecInfeasible(m)) if m.contains("pool_size"))
        );
        let too_many = PlantedModelSpec {
            train_queries: 200,
            ..small(false)
        };
        assert!(matches!(
            generate_planted(&too_many),
            Err(Error::SpecInfeasible(_))
        ));
        let narrow = PlantedModelSpec {
            feature_dim: 64,
            ..small(false)
        };
        assert!(matches!(
            generate_planted(&narrow),
            Err(Error::SpecInfeasible(_))
        ));
    }
}
