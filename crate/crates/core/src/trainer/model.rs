use rayon::prelude::*;

use crate::ars::ArsParameters;
use crate::encoder::{
    encode, encode_traced, EmbeddingVector, EncodeTrace, HashingFeaturizer, TokenizerConfig, Tower, TowerAdapter,
};
use crate::error::{Error, Result};
use crate::losses::{loss_total, BatchEmbeddings, HeadGradients, LossBreakdown, LossFlags, LossWeights, Temperature};
use crate::numerics::{Matrix, Rng};

/// Trainable tensors, in checkpoint and optimizer order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    AdapterQ,
    AdapterP,
    Wq,
    Wp,
    Wa,
    LogTau,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 6] = [
        ParamGroup::AdapterQ,
        ParamGroup::AdapterP,
        ParamGroup::Wq,
        ParamGroup::Wp,
        ParamGroup::Wa,
        ParamGroup::LogTau,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::AdapterQ => "adapter_q",
            ParamGroup::AdapterP => "adapter_p",
            ParamGroup::Wq => "W_q",
            ParamGroup::Wp => "W_p",
            ParamGroup::Wa => "w_a",
            ParamGroup::LogTau => "log_tau",
        }
    }

    pub fn is_adapter(self) -> bool {
        matches!(self, ParamGroup::AdapterQ | ParamGroup::AdapterP)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            feature_dim: 1024,
            embed_dim: 64,
            hidden_dim: 2048,
        }
    }
}

/// Both towers, the scoring head and the temperature.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub tokenizer: TokenizerConfig,
    pub featurizer: HashingFeaturizer,
    pub question: TowerAdapter,
    pub passage: TowerAdapter,
    pub head: ArsParameters,
    pub temperature: Temperature,
}

impl Model {
    /// Draws adapters, then the head, from `rng`. With `tied`, both towers
    /// start from the same draw.
    pub fn init(
        dims: ModelDims,
        tokenizer: TokenizerConfig,
        adapter_init_scale: f64,
        tied: bool,
        init_tau: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        let featurizer = HashingFeaturizer::new(dims.feature_dim)?;
        let question = TowerAdapter::init(Tower::Question, dims.embed_dim, dims.feature_dim, adapter_init_scale, rng)?;
        let passage = if tied {
            TowerAdapter::new(Tower::Passage, question.weights.clone())?
        } else {
            TowerAdapter::init(Tower::Passage, dims.embed_dim, dims.feature_dim, adapter_init_scale, rng)?
        };
        let head = ArsParameters::init(dims.embed_dim, dims.hidden_dim, rng)?;
        Ok(Model {
            tokenizer,
            featurizer,
            question,
            passage,
            head,
            temperature: Temperature::from_tau(init_tau)?,
        })
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            feature_dim: self.featurizer.dim(),
            embed_dim: self.head.embed_dim(),
            hidden_dim: self.head.hidden_dim(),
        }
    }

    /// Shapes must agree across towers, head and featurizer.
    pub fn validate(&self) -> Result<()> {
        let d = self.head.embed_dim();
        for tower in [&self.question, &self.passage] {
            if tower.dim() != d {
                return Err(Error::dims(d, tower.dim()));
            }
            if tower.feature_dim() != self.featurizer.dim() {
                return Err(Error::dims(self.featurizer.dim(), tower.feature_dim()));
            }
        }
        Ok(())
    }

    pub fn encode_query(&self, text: &str) -> Result<EmbeddingVector> {
        encode(text, &self.question, &self.featurizer, &self.tokenizer)
    }

    pub fn encode_passage(&self, text: &str) -> Result<EmbeddingVector> {
        encode(text, &self.passage, &self.featurizer, &self.tokenizer)
    }

    pub fn group(&self, g: ParamGroup) -> &[f64] {
        match g {
            ParamGroup::AdapterQ => self.question.weights.as_slice(),
            ParamGroup::AdapterP => self.passage.weights.as_slice(),
            ParamGroup::Wq => self.head.w_q.as_slice(),
            ParamGroup::Wp => self.head.w_p.as_slice(),
            ParamGroup::Wa => self.head.w_a.as_slice(),
            ParamGroup::LogTau => std::slice::from_ref(&self.temperature.log_tau),
        }
    }

    pub fn group_mut(&mut self, g: ParamGroup) -> &mut [f64] {
        match g {
            ParamGroup::AdapterQ => self.question.weights.as_mut_slice(),
            ParamGroup::AdapterP => self.passage.weights.as_mut_slice(),
            ParamGroup::Wq => self.head.w_q.as_mut_slice(),
            ParamGroup::Wp => self.head.w_p.as_mut_slice(),
            ParamGroup::Wa => self.head.w_a.as_mut_slice(),
            ParamGroup::LogTau => std::slice::from_mut(&mut self.temperature.log_tau),
        }
    }

    pub fn param_count(&self) -> usize {
        ParamGroup::ALL.iter().map(|&g| self.group(g).len()).sum()
    }
}

/// Gradients shaped like [`Model`]'s trainable groups.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGradients {
    pub adapter_q: Matrix,
    pub adapter_p: Matrix,
    pub head: HeadGradients,
    pub log_tau: f64,
}

impl ModelGradients {
    pub fn zeros(dims: ModelDims) -> Self {
        ModelGradients {
            adapter_q: Matrix::zeros(dims.embed_dim, dims.feature_dim),
            adapter_p: Matrix::zeros(dims.embed_dim, dims.feature_dim),
            head: HeadGradients::zeros(dims.embed_dim, dims.hidden_dim),
            log_tau: 0.0,
        }
    }

    pub fn group(&self, g: ParamGroup) -> &[f64] {
        match g {
            ParamGroup::AdapterQ => self.adapter_q.as_slice(),
            ParamGroup::AdapterP => self.adapter_p.as_slice(),
            ParamGroup::Wq => self.head.d_w_q.as_slice(),
            ParamGroup::Wp => self.head.d_w_p.as_slice(),
            ParamGroup::Wa => &self.head.d_w_a,
            ParamGroup::LogTau => std::slice::from_ref(&self.log_tau),
        }
    }

    pub fn group_mut(&mut self, g: ParamGroup) -> &mut [f64] {
        match g {
            ParamGroup::AdapterQ => self.adapter_q.as_mut_slice(),
            ParamGroup::AdapterP => self.adapter_p.as_mut_slice(),
            ParamGroup::Wq => self.head.d_w_q.as_mut_slice(),
            ParamGroup::Wp => self.head.d_w_p.as_mut_slice(),
            ParamGroup::Wa => &mut self.head.d_w_a,
            ParamGroup::LogTau => std::slice::from_mut(&mut self.log_tau),
        }
    }
}

/// Texts of one batch: per query its question, positive and negative pool,
/// plus which pool entry the head scores.
#[derive(Clone, Debug, Default)]
pub struct BatchTexts {
    pub queries: Vec<String>,
    pub positives: Vec<String>,
    pub negatives: Vec<Vec<String>>,
    pub selected: Vec<usize>,
}

struct EncodedBatch {
    queries: Vec<EncodeTrace>,
    positives: Vec<EncodeTrace>,
    negatives: Vec<Vec<EncodeTrace>>,
}

fn encode_all(texts: &[String], tower: &TowerAdapter, model: &Model) -> Result<Vec<EncodeTrace>> {
    texts
        .par_iter()
        .map(|t| encode_traced(t, tower, &model.featurizer, &model.tokenizer))
        .collect()
}

fn encode_batch_texts(model: &Model, texts: &BatchTexts) -> Result<EncodedBatch> {
    let queries = encode_all(&texts.queries, &model.question, model)?;
    let positives = encode_all(&texts.positives, &model.passage, model)?;
    let negatives = texts
        .negatives
        .iter()
        .map(|pool| encode_all(pool, &model.passage, model))
        .collect::<Result<Vec<_>>>()?;
    Ok(EncodedBatch {
        queries,
        positives,
        negatives,
    })
}

fn embeddings_of(enc: &EncodedBatch, selected: &[usize]) -> BatchEmbeddings {
    let emb = |ts: &[EncodeTrace]| ts.iter().map(|t| t.embedding.clone()).collect::<Vec<_>>();
    BatchEmbeddings {
        queries: emb(&enc.queries),
        positives: emb(&enc.positives),
        negatives: enc.negatives.iter().map(|pool| emb(pool)).collect(),
        selected: selected.to_vec(),
    }
}

/// Loss only; used by finite-difference checks.
pub fn batch_loss(model: &Model, texts: &BatchTexts, weights: &LossWeights, flags: &LossFlags) -> Result<LossBreakdown> {
    let enc = encode_batch_texts(model, texts)?;
    loss_total(&embeddings_of(&enc, &texts.selected), &model.head, model.temperature, weights, flags)
}

/// Loss and gradients w.r.t. every trainable group. With `freeze_adapters`
/// the adapter gradients are left at zero.
pub fn batch_loss_and_grad(
    model: &Model,
    texts: &BatchTexts,
    weights: &LossWeights,
    flags: &LossFlags,
    freeze_adapters: bool,
) -> Result<(LossBreakdown, ModelGradients)> {
    let enc = encode_batch_texts(model, texts)?;
    let breakdown = loss_total(&embeddings_of(&enc, &texts.selected), &model.head, model.temperature, weights, flags)?;
    let mut grads = ModelGradients::zeros(model.dims());
    grads.head = breakdown.grads.head.clone();
    grads.log_tau = breakdown.grads.d_log_tau;
    if !freeze_adapters {
        let g = &breakdown.grads;
        for (trace, d) in enc.queries.iter().zip(&g.d_q) {
            trace.backward(d, &mut grads.adapter_q);
        }
        for (trace, d) in enc.positives.iter().zip(&g.d_pos) {
            trace.backward(d, &mut grads.adapter_p);
        }
        for (pool, d_pool) in enc.negatives.iter().zip(&g.d_neg) {
            for (trace, d) in pool.iter().zip(d_pool) {
                trace.backward(d, &mut grads.adapter_p);
            }
        }
    }
    Ok((breakdown, grads))
}
