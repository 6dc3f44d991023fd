//! Dual-tower text encoder.
//!
//! Text is tokenized, hashed into a fixed-width count vector, projected by a
//! trainable per-tower linear adapter and ℓ2-normalized. The two towers share
//! the tokenizer and featurizer but never their adapter weights.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::numerics::{fnv1a64, l2_normalize, Matrix, Rng, Vector, ZERO_NORM};

/// Unicode normalization applied before tokenization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum UnicodeForm {
    Nfc,
    Nfkc,
}

impl UnicodeForm {
    pub fn code(self) -> u8 {
        match self {
            UnicodeForm::Nfc => 0,
            UnicodeForm::Nfkc => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(UnicodeForm::Nfc),
            1 => Some(UnicodeForm::Nfkc),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            UnicodeForm::Nfc => "nfc",
            UnicodeForm::Nfkc => "nfkc",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nfc" => Some(UnicodeForm::Nfc),
            "nfkc" => Some(UnicodeForm::Nfkc),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub lowercase: bool,
    /// Drop Arabic harakat (U+064B..=U+0652) and the superscript alef (U+0670).
    pub strip_diacritics: bool,
    pub unicode_form: UnicodeForm,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig {
            lowercase: true,
            strip_diacritics: true,
            unicode_form: UnicodeForm::Nfc,
        }
    }
}

fn is_arabic_diacritic(c: char) -> bool {
    matches!(c, '\u{064B}'..='\u{0652}' | '\u{0670}')
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '\u{00A1}' | '\u{00AB}' | '\u{00BB}' | '\u{00BF}'
                | '\u{060C}' | '\u{061B}' | '\u{061F}'
                | '\u{066A}'..='\u{066D}'
                | '\u{06D4}'
                | '\u{2010}'..='\u{2027}'
                | '\u{2030}'..='\u{205E}'
                | '\u{3001}' | '\u{3002}'
        )
}

/// Splits on whitespace after isolating each punctuation character as its
/// own token.
pub fn tokenize(text: &str, cfg: &TokenizerConfig) -> Vec<String> {
    let normalized: String = match cfg.unicode_form {
        UnicodeForm::Nfc => text.nfc().collect(),
        UnicodeForm::Nfkc => text.nfkc().collect(),
    };
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in normalized.chars() {
        if cfg.strip_diacritics && is_arabic_diacritic(c) {
            continue;
        }
        if c.is_whitespace() {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
        } else if is_punctuation(c) {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            tokens.push(c.to_string());
        } else if cfg.lowercase {
            current.extend(c.to_lowercase());
        } else {
            current.push(c);
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Hashes tokens into `dim` buckets with 64-bit FNV-1a (`hash mod dim`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HashingFeaturizer {
    dim: usize,
}

impl HashingFeaturizer {
    pub const DEFAULT_DIM: usize = 1024;

    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("feature_dim must be positive".into()));
        }
        Ok(HashingFeaturizer { dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a64(token.as_bytes()) % self.dim as u64) as usize
    }

    /// Sparse form of [`featurize`]: ascending bucket indices with their values.
    pub fn sparse(&self, tokens: &[String]) -> SparseFeatures {
        let mut buckets: Vec<usize> = tokens.iter().map(|t| self.bucket(t)).collect();
        buckets.sort_unstable();
        let scale = if tokens.is_empty() {
            0.0
        } else {
            1.0 / (tokens.len() as f64).sqrt()
        };
        let mut indices = Vec::new();
        let mut values: Vec<f64> = Vec::new();
        for b in buckets {
            if indices.last() == Some(&b) {
                *values.last_mut().unwrap() += 1.0;
            } else {
                indices.push(b);
                values.push(1.0);
            }
        }
        values.iter_mut().for_each(|v| *v *= scale);
        SparseFeatures {
            dim: self.dim,
            indices,
            values,
        }
    }
}

impl Default for HashingFeaturizer {
    fn default() -> Self {
        HashingFeaturizer {
            dim: Self::DEFAULT_DIM,
        }
    }
}

/// Non-zero entries of a hashed feature vector, indices ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseFeatures {
    pub dim: usize,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseFeatures {
    pub fn to_dense(&self) -> Vector {
        let mut out = vec![0.0; self.dim];
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out[i] = v;
        }
        Vector::from_raw(out)
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// `M f` for a `rows x dim` matrix, summing non-zeros in ascending index
    /// order (bit-identical to the dense product).
    pub(crate) fn project(&self, m: &Matrix) -> Vec<f64> {
        let cols = m.cols();
        let data = m.as_slice();
        (0..m.rows())
            .map(|r| {
                let row = &data[r * cols..(r + 1) * cols];
                let mut acc = 0.0;
                for (&i, &v) in self.indices.iter().zip(&self.values) {
                    acc += row[i] * v;
                }
                acc
            })
            .collect()
    }

    /// `grad += g fᵀ`, touching only the non-zero columns.
    pub(crate) fn accumulate_outer(&self, g: &[f64], grad: &mut Matrix) {
        let cols = grad.cols();
        let data = grad.as_mut_slice();
        for (r, &gr) in g.iter().enumerate() {
            if gr == 0.0 {
                continue;
            }
            let row = &mut data[r * cols..(r + 1) * cols];
            for (&i, &v) in self.indices.iter().zip(&self.values) {
                row[i] += gr * v;
            }
        }
    }
}

/// Token counts scaled by `1/sqrt(token count)`; the zero vector for no tokens.
pub fn featurize(tokens: &[String], f: &HashingFeaturizer) -> Vector {
    f.sparse(tokens).to_dense()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tower {
    Question,
    Passage,
}

/// Trainable `d x d_f` projection for one tower. No bias.
#[derive(Clone, Debug, PartialEq)]
pub struct TowerAdapter {
    pub tower: Tower,
    pub weights: Matrix,
}

impl TowerAdapter {
    pub fn new(tower: Tower, weights: Matrix) -> Result<Self> {
        if weights.rows() < 2 {
            return Err(Error::Config(format!(
                "embedding dim must be at least 2, got {}",
                weights.rows()
            )));
        }
        Ok(TowerAdapter { tower, weights })
    }

    /// Uniform init in `[-scale/sqrt(d_f), scale/sqrt(d_f)]`.
    pub fn init(
        tower: Tower,
        dim: usize,
        feature_dim: usize,
        scale: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        let bound = scale / (feature_dim as f64).sqrt();
        TowerAdapter::new(tower, Matrix::uniform(dim, feature_dim, bound, rng))
    }

    pub fn dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.cols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingVector {
    pub values: Vector,
    pub normalized: bool,
}

impl EmbeddingVector {
    /// Normalizes `raw` and marks the result as unit-norm.
    pub fn normalized_from(raw: &Vector) -> Result<Self> {
        Ok(EmbeddingVector {
            values: l2_normalize(raw)?,
            normalized: true,
        })
    }

    /// Wraps values that are already unit-norm (e.g. rows read from an index).
    pub fn from_unit(values: Vector) -> Self {
        EmbeddingVector {
            values,
            normalized: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.values.as_slice()
    }
}

/// Everything the backward pass needs from one encoding.
#[derive(Clone, Debug)]
pub(crate) struct EncodeTrace {
    pub features: SparseFeatures,
    pub norm: f64,
    pub embedding: EmbeddingVector,
}

impl EncodeTrace {
    /// Pulls `dL/d(embedding)` back through normalization and adds
    /// `dL/dW_adapt` into `grad`.
    pub fn backward(&self, d_embedding: &[f64], grad: &mut Matrix) {
        let e = self.embedding.as_slice();
        let proj = crate::numerics::dot_slices(e, d_embedding);
        let d_raw: Vec<f64> = d_embedding
            .iter()
            .zip(e)
            .map(|(g, ei)| (g - ei * proj) / self.norm)
            .collect();
        self.features.accumulate_outer(&d_raw, grad);
    }
}

pub(crate) fn encode_features(
    features: SparseFeatures,
    tower: &TowerAdapter,
) -> Result<EncodeTrace> {
    if features.dim != tower.feature_dim() {
        return Err(Error::dims(tower.feature_dim(), features.dim));
    }
    let raw = features.project(&tower.weights);
    let norm = crate::numerics::norm(&raw);
    if norm < ZERO_NORM || !norm.is_finite() {
        return Err(Error::ZeroVector { norm });
    }
    let values = Vector::from_raw(raw.iter().map(|x| x / norm).collect());
    Ok(EncodeTrace {
        features,
        norm,
        embedding: EmbeddingVector {
            values,
            normalized: true,
        },
    })
}

pub(crate) fn encode_traced(
    text: &str,
    tower: &TowerAdapter,
    f: &HashingFeaturizer,
    cfg: &TokenizerConfig,
) -> Result<EncodeTrace> {
    let tokens = tokenize(text, cfg);
    if tokens.is_empty() {
        return Err(Error::ZeroVector { norm: 0.0 });
    }
    encode_features(f.sparse(&tokens), tower)
}

/// `l2_normalize(W_adapt · featurize(tokenize(text)))`.
pub fn encode(
    text: &str,
    tower: &TowerAdapter,
    f: &HashingFeaturizer,
    cfg: &TokenizerConfig,
) -> Result<EmbeddingVector> {
    encode_traced(text, tower, f, cfg).map(|t| t.embedding)
}

/// Encodes every text independently; one failure does not abort the batch.
pub fn encode_batch<S: AsRef<str> + Sync>(
    texts: &[S],
    tower: &TowerAdapter,
    f: &HashingFeaturizer,
    cfg: &TokenizerConfig,
) -> Vec<Result<EmbeddingVector>> {
    texts
        .par_iter()
        .map(|t| encode(t.as_ref(), tower, f, cfg))
        .collect()
}
