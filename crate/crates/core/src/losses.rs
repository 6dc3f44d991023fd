//! Training objective: InfoNCE contrastive loss on the pooled embeddings,
//! the dynamic relevance loss on head scores, and the logit spread term,
//! plus their weighted total with gradients accumulated through every path.

use serde::{Deserialize, Serialize};

use crate::ars::{backward_slices, forward_slices, ArsForwardTrace, ArsParameters, Upstream};
use crate::encoder::EmbeddingVector;
use crate::error::{Error, Result};
use crate::numerics::{dot_slices, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub epsilon: f64,
    /// `+1` applies the spread term as written; `-1` flips it.
    pub reg_sign: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 1.0,
            beta: 1.0,
            gamma: 0.1,
            epsilon: 1e-8,
            reg_sign: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.gamma >= 0.0) {
            return bad("alpha, beta and gamma must be non-negative");
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1e-4) {
            return bad("epsilon must lie in (0, 1e-4]");
        }
        if self.reg_sign != 1.0 && self.reg_sign != -1.0 {
            return bad("reg_sign must be +1 or -1");
        }
        Ok(())
    }
}

/// Which negative logits feed the spread term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegNegatives {
    /// The one negative per query that also feeds the dynamic relevance loss.
    Selected,
    /// Every negative in every pool.
    Pool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossFlags {
    /// Also contrast each query against the other queries' positives.
    pub in_batch_negatives: bool,
    pub reg_negatives: RegNegatives,
}

impl Default for LossFlags {
    fn default() -> Self {
        LossFlags {
            in_batch_negatives: false,
            reg_negatives: RegNegatives::Selected,
        }
    }
}

/// Learnable temperature stored as `log τ`, so `τ > 0` always.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Temperature {
    pub log_tau: f64,
}

impl Temperature {
    pub fn from_tau(tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {tau}"
            )));
        }
        Ok(Temperature { log_tau: tau.ln() })
    }

    pub fn tau(&self) -> f64 {
        self.log_tau.exp()
    }
}

impl Default for Temperature {
    fn default() -> Self {
        Temperature { log_tau: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConsOutput {
    pub value: f64,
    pub d_q: Vec<Vec<f64>>,
    pub d_pos: Vec<Vec<f64>>,
    pub d_neg: Vec<Vec<Vec<f64>>>,
    pub d_log_tau: f64,
}

fn check_dim(e: &EmbeddingVector, d: usize) -> Result<()> {
    if e.dim() != d {
        return Err(Error::dims(d, e.dim()));
    }
    Ok(())
}

/// InfoNCE over `{p⁺_i} ∪ pool_i` (and, with `in_batch`, the other queries'
/// positives), logits `q·p/τ`, averaged over the batch.
pub fn loss_cons(
    queries: &[EmbeddingVector],
    positives: &[EmbeddingVector],
    negatives: &[Vec<EmbeddingVector>],
    temperature: Temperature,
    in_batch: bool,
) -> Result<ConsOutput> {
    let b = queries.len();
    if b == 0 {
        return Err(Error::EmptyBatch);
    }
    if positives.len() != b {
        return Err(Error::dims(b, positives.len()));
    }
    if negatives.len() != b {
        return Err(Error::dims(b, negatives.len()));
    }
    let d = queries[0].dim();
    for e in queries
        .iter()
        .chain(positives)
        .chain(negatives.iter().flatten())
    {
        check_dim(e, d)?;
    }
    if negatives.iter().any(Vec::is_empty) {
        return Err(Error::Config(
            "every query needs at least one negative".into(),
        ));
    }

    let tau = temperature.tau();
    let inv_b = 1.0 / b as f64;
    let mut out = ConsOutput {
        value: 0.0,
        d_q: vec![vec![0.0; d]; b],
        d_pos: vec![vec![0.0; d]; b],
        d_neg: negatives
            .iter()
            .map(|pool| vec![vec![0.0; d]; pool.len()])
            .collect(),
        d_log_tau: 0.0,
    };

    #[derive(Clone, Copy)]
    enum Cand {
        Pos(usize),
        Neg(usize),
    }

    for i in 0..b {
        let q = queries[i].as_slice();
        // candidate 0 is the query's own positive
        let mut cands = vec![Cand::Pos(i)];
        cands.extend((0..negatives[i].len()).map(Cand::Neg));
        if in_batch {
            cands.extend((0..b).filter(|&k| k != i).map(Cand::Pos));
        }
        let vec_of = |c: Cand| match c {
            Cand::Pos(k) => positives[k].as_slice(),
            Cand::Neg(j) => negatives[i][j].as_slice(),
        };
        let logits: Vec<f64> = cands
            .iter()
            .map(|&c| dot_slices(q, vec_of(c)) / tau)
            .collect();
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::NonFinite {
                what: "contrastive logits".into(),
            });
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let lse = max + sum.ln();
        out.value += (lse - logits[0]) * inv_b;

        for (c_idx, (&cand, &l)) in cands.iter().zip(&logits).enumerate() {
            let target = if c_idx == 0 { 1.0 } else { 0.0 };
            let dl = (exps[c_idx] / sum - target) * inv_b;
            if dl == 0.0 {
                continue;
            }
            let v = vec_of(cand);
            for k in 0..d {
                out.d_q[i][k] += dl * v[k] / tau;
            }
            let dv = match cand {
                Cand::Pos(k) => &mut out.d_pos[k],
                Cand::Neg(j) => &mut out.d_neg[i][j],
            };
            for k in 0..d {
                dv[k] += dl * q[k] / tau;
            }
            // l = (q·v) e^{-log τ}
            out.d_log_tau -= dl * l;
        }
    }
    if !out.value.is_finite() {
        return Err(Error::NonFinite {
            what: "contrastive loss".into(),
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DynOutput {
    pub value: f64,
    pub d_r_pos: Vec<f64>,
    pub d_r_neg: Vec<f64>,
}

/// `-(1/B) Σ [ln(r⁺ + ε) + ln(1 - r⁻ + ε)]`.
pub fn loss_dyn(r_pos: &[f64], r_neg: &[f64], eps: f64) -> Result<DynOutput> {
    let b = r_pos.len();
    if b == 0 {
        return Err(Error::EmptyBatch);
    }
    if r_neg.len() != b {
        return Err(Error::dims(b, r_neg.len()));
    }
    for (what, &r) in r_pos
        .iter()
        .map(|r| ("r_pos", r))
        .chain(r_neg.iter().map(|r| ("r_neg", r)))
    {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::OutOfRange {
                what: what.into(),
                value: r,
            });
        }
    }
    let bf = b as f64;
    let mut value = 0.0;
    for (rp, rn) in r_pos.iter().zip(r_neg) {
        value -= ((rp + eps).ln() + (1.0 - rn + eps).ln()) / bf;
    }
    Ok(DynOutput {
        value,
        d_r_pos: r_pos.iter().map(|rp| -1.0 / (bf * (rp + eps))).collect(),
        d_r_neg: r_neg
            .iter()
            .map(|rn| 1.0 / (bf * (1.0 - rn + eps)))
            .collect(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegOutput {
    pub value: f64,
    pub d_s_pos: Vec<f64>,
    pub d_s_neg: Vec<f64>,
}

/// Population std with its gradient; the gradient is 0 where the std is 0.
fn std_with_grad(xs: &[f64]) -> Result<(f64, Vec<f64>)> {
    let std = crate::numerics::population_std(xs)?;
    let n = xs.len() as f64;
    if std == 0.0 {
        return Ok((0.0, vec![0.0; xs.len()]));
    }
    let mean = xs.iter().sum::<f64>() / n;
    Ok((std, xs.iter().map(|x| (x - mean) / (n * std)).collect()))
}

/// `Std(s⁺) + Std(s⁻)` with the population divisor.
pub fn loss_reg(s_pos: &[f64], s_neg: &[f64]) -> Result<RegOutput> {
    let (sp, d_s_pos) = std_with_grad(s_pos)?;
    let (sn, d_s_neg) = std_with_grad(s_neg)?;
    Ok(RegOutput {
        value: sp + sn,
        d_s_pos,
        d_s_neg,
    })
}

/// Embeddings of one training batch.
#[derive(Clone, Debug)]
pub struct BatchEmbeddings {
    pub queries: Vec<EmbeddingVector>,
    pub positives: Vec<EmbeddingVector>,
    /// Per-query negative pools.
    pub negatives: Vec<Vec<EmbeddingVector>>,
    /// Index into each pool of the negative scored by the head.
    pub selected: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadGradients {
    pub d_w_q: Matrix,
    pub d_w_p: Matrix,
    pub d_w_a: Vec<f64>,
}

impl HeadGradients {
    pub fn zeros(d: usize, h: usize) -> Self {
        HeadGradients {
            d_w_q: Matrix::zeros(h, d),
            d_w_p: Matrix::zeros(h, d),
            d_w_a: vec![0.0; h],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchGradients {
    pub d_q: Vec<Vec<f64>>,
    pub d_pos: Vec<Vec<f64>>,
    pub d_neg: Vec<Vec<Vec<f64>>>,
    pub head: HeadGradients,
    pub d_log_tau: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    pub l_cons: f64,
    pub l_dyn: f64,
    pub l_reg: f64,
    pub l_total: f64,
    /// Head logits and scores on the positive and selected negative pairs.
    pub s_pos: Vec<f64>,
    pub s_neg: Vec<f64>,
    pub grads: BatchGradients,
}

/// `α·L_cons + β·L_dyn + γ·sign·L_reg` with gradients w.r.t. every batch
/// embedding, the head parameters and `log τ`.
///
/// Per-query contributions are reduced in query order, so the result does not
/// depend on how the caller parallelized the encoding.
pub fn loss_total(
    batch: &BatchEmbeddings,
    head: &ArsParameters,
    temperature: Temperature,
    weights: &LossWeights,
    flags: &LossFlags,
) -> Result<LossBreakdown> {
    weights.validate()?;
    let b = batch.queries.len();
    if b == 0 {
        return Err(Error::EmptyBatch);
    }
    if batch.selected.len() != b {
        return Err(Error::dims(b, batch.selected.len()));
    }
    let cons = loss_cons(
        &batch.queries,
        &batch.positives,
        &batch.negatives,
        temperature,
        flags.in_batch_negatives,
    )?;
    let d = head.embed_dim();
    let h = head.hidden_dim();

    let mut pos_traces: Vec<ArsForwardTrace> = Vec::with_capacity(b);
    let mut neg_traces: Vec<ArsForwardTrace> = Vec::with_capacity(b);
    for i in 0..b {
        let sel = batch.selected[i];
        let pool = &batch.negatives[i];
        if sel >= pool.len() {
            return Err(Error::Config(format!(
                "selected negative {sel} outside pool of {}",
                pool.len()
            )));
        }
        let q = batch.queries[i].as_slice();
        pos_traces.push(forward_slices(q, batch.positives[i].as_slice(), head)?);
        neg_traces.push(forward_slices(q, pool[sel].as_slice(), head)?);
    }
    // all-pool traces only when the spread term asks for them
    let pool_traces: Option<Vec<Vec<ArsForwardTrace>>> = match flags.reg_negatives {
        RegNegatives::Selected => None,
        RegNegatives::Pool => Some(
            (0..b)
                .map(|i| {
                    let q = batch.queries[i].as_slice();
                    batch.negatives[i]
                        .iter()
                        .map(|p| forward_slices(q, p.as_slice(), head))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?,
        ),
    };

    let r_pos: Vec<f64> = pos_traces.iter().map(|t| t.r).collect();
    let r_neg: Vec<f64> = neg_traces.iter().map(|t| t.r).collect();
    let s_pos: Vec<f64> = pos_traces.iter().map(|t| t.s).collect();
    let s_neg: Vec<f64> = neg_traces.iter().map(|t| t.s).collect();
    let dynamic = loss_dyn(&r_pos, &r_neg, weights.epsilon)?;
    let s_neg_reg: Vec<f64> = match &pool_traces {
        None => s_neg.clone(),
        Some(pools) => pools.iter().flatten().map(|t| t.s).collect(),
    };
    let reg = loss_reg(&s_pos, &s_neg_reg)?;

    let reg_w = weights.gamma * weights.reg_sign;
    let l_total = weights.alpha * cons.value + weights.beta * dynamic.value + reg_w * reg.value;
    for (name, v) in [
        ("l_cons", cons.value),
        ("l_dyn", dynamic.value),
        ("l_reg", reg.value),
        ("l_total", l_total),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite { what: name.into() });
        }
    }

    let scale = |xs: &[f64], c: f64| xs.iter().map(|x| x * c).collect::<Vec<f64>>();
    let mut grads = BatchGradients {
        d_q: cons.d_q.iter().map(|g| scale(g, weights.alpha)).collect(),
        d_pos: cons.d_pos.iter().map(|g| scale(g, weights.alpha)).collect(),
        d_neg: cons
            .d_neg
            .iter()
            .map(|pool| pool.iter().map(|g| scale(g, weights.alpha)).collect())
            .collect(),
        head: HeadGradients::zeros(d, h),
        d_log_tau: weights.alpha * cons.d_log_tau,
    };

    let push = |grads: &mut BatchGradients,
                trace: &ArsForwardTrace,
                i: usize,
                neg: Option<usize>,
                ds: f64|
     -> Result<()> {
        if ds == 0.0 {
            return Ok(());
        }
        let q = batch.queries[i].as_slice();
        let p = match neg {
            None => batch.positives[i].as_slice(),
            Some(j) => batch.negatives[i][j].as_slice(),
        };
        let g = backward_slices(trace, q, p, head, Upstream::Logit(ds))?;
        grads.head.d_w_q.add_scaled(1.0, &g.d_w_q);
        grads.head.d_w_p.add_scaled(1.0, &g.d_w_p);
        for (acc, x) in grads.head.d_w_a.iter_mut().zip(&g.d_w_a) {
            *acc += x;
        }
        for (acc, x) in grads.d_q[i].iter_mut().zip(&g.d_q) {
            *acc += x;
        }
        let dst = match neg {
            None => &mut grads.d_pos[i],
            Some(j) => &mut grads.d_neg[i][j],
        };
        for (acc, x) in dst.iter_mut().zip(&g.d_p) {
            *acc += x;
        }
        Ok(())
    };

    for i in 0..b {
        let tp = &pos_traces[i];
        let ds_pos =
            weights.beta * dynamic.d_r_pos[i] * tp.r * (1.0 - tp.r) + reg_w * reg.d_s_pos[i];
        push(&mut grads, tp, i, None, ds_pos)?;

        let tn = &neg_traces[i];
        let sel = batch.selected[i];
        let mut ds_neg = weights.beta * dynamic.d_r_neg[i] * tn.r * (1.0 - tn.r);
        if pool_traces.is_none() {
            ds_neg += reg_w * reg.d_s_neg[i];
        }
        push(&mut grads, tn, i, Some(sel), ds_neg)?;
    }
    if let Some(pools) = &pool_traces {
        let mut flat = 0;
        for (i, pool) in pools.iter().enumerate() {
            for (j, trace) in pool.iter().enumerate() {
                push(&mut grads, trace, i, Some(j), reg_w * reg.d_s_neg[flat])?;
                flat += 1;
            }
        }
    }

    Ok(LossBreakdown {
        l_cons: cons.value,
        l_dyn: dynamic.value,
        l_reg: reg.value,
        l_total,
        s_pos,
        s_neg,
        grads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{l2_normalize, Rng, Vector};

    fn emb(xs: &[f64]) -> EmbeddingVector {
        EmbeddingVector::from_unit(l2_normalize(&Vector::new(xs.to_vec()).unwrap()).unwrap())
    }

    fn random_unit(d: usize, rng: &mut Rng) -> EmbeddingVector {
        emb(&(0..d).map(|_| rng.normal()).collect::<Vec<_>>())
    }

    #[test]
    fn cons_single_pair() {
        let q = emb(&[1.0, 0.0]);
        let pos = emb(&[1.0, 0.0]);
        let neg = emb(&[-1.0, 0.0]);
        let out = loss_cons(&[q], &[pos], &[vec![neg]], Temperature::default(), false).unwrap();
        let expected = (1.0 + (-2.0f64).exp()).ln();
        assert!((out.value - expected).abs() < 1e-12);
        assert!((out.value - 0.126928).abs() < 1e-6);
    }

    #[test]
    fn cons_uniform_similarities() {
        let q = emb(&[1.0, 0.0, 0.0]);
        let p = emb(&[0.0, 1.0, 0.0]);
        let n = 5;
        for tau in [0.05, 1.0, 20.0] {
            let t = Temperature::from_tau(tau).unwrap();
            let out =
                loss_cons(&[q.clone()], &[p.clone()], &[vec![p.clone(); n]], t, false).unwrap();
            assert!((out.value - ((n + 1) as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn cons_large_temperature_limit() {
        let mut rng = Rng::new(4);
        let q = random_unit(6, &mut rng);
        let pos = random_unit(6, &mut rng);
        let negs: Vec<_> = (0..7).map(|_| random_unit(6, &mut rng)).collect();
        let t = Temperature::from_tau(1e6).unwrap();
        let out = loss_cons(&[q], &[pos], &[negs], t, false).unwrap();
        assert!((out.value - 8f64.ln()).abs() < 1e-3);
    }

    #[test]
    fn cons_decreases_with_positive_similarity() {
        let q = emb(&[1.0, 0.0]);
        let neg = vec![emb(&[0.0, 1.0]), emb(&[-0.6, 0.8])];
        let mut last = f64::INFINITY;
        for angle in [1.5f64, 1.0, 0.5, 0.1, 0.0] {
            let pos = emb(&[angle.cos(), angle.sin()]);
            let v = loss_cons(
                &[q.clone()],
                &[pos],
                &[neg.clone()],
                Temperature::default(),
                false,
            )
            .unwrap()
            .value;
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn cons_in_batch_adds_candidates() {
        let q = vec![emb(&[1.0, 0.0]), emb(&[0.0, 1.0])];
        let pos = vec![emb(&[1.0, 0.0]), emb(&[0.0, 1.0])];
        let neg = vec![vec![emb(&[-1.0, 0.0])], vec![emb(&[0.0, -1.0])]];
        let plain = loss_cons(&q, &pos, &neg, Temperature::default(), false).unwrap();
        let shared = loss_cons(&q, &pos, &neg, Temperature::default(), true).unwrap();
        // each query gains one candidate with logit 0
        let expected = (1.0 + (-2.0f64).exp() + (-1.0f64).exp()).ln();
        assert!((shared.value - expected).abs() < 1e-12);
        assert!(shared.value > plain.value);
        assert!(shared.d_pos[1].iter().any(|&g| g != 0.0));
    }

    #[test]
    fn cons_errors() {
        let q = emb(&[1.0, 0.0]);
        let bad = emb(&[1.0, 0.0, 0.0]);
        assert!(matches!(
            loss_cons(
                &[q.clone()],
                &[bad],
                &[vec![q.clone()]],
                Temperature::default(),
                false
            ),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            loss_cons(&[], &[], &[], Temperature::default(), false),
            Err(Error::EmptyBatch)
        ));
    }

    #[test]
    fn dyn_examples() {
        let out = loss_dyn(&[0.5], &[0.5], 1e-8).unwrap();
        assert!((out.value - 2.0 * 2f64.ln()).abs() < 1e-6);
        assert!((out.value - 1.386294).abs() < 1e-6);

        let ideal = loss_dyn(&[1.0], &[0.0], 1e-8).unwrap();
        assert!(ideal.value < 0.0 && ideal.value > -1e-6);

        let mixed = loss_dyn(&[0.5, 1.0], &[0.5, 0.0], 1e-8).unwrap();
        assert!((mixed.value - 0.693147).abs() < 1e-6);

        assert!(matches!(
            loss_dyn(&[1.5], &[0.1], 1e-8),
            Err(Error::OutOfRange { .. })
        ));
        assert!(matches!(loss_dyn(&[], &[], 1e-8), Err(Error::EmptyBatch)));
    }

    #[test]
    fn dyn_gradients_closed_form() {
        let out = loss_dyn(&[0.3, 0.9], &[0.2, 0.6], 1e-8).unwrap();
        assert!((out.d_r_pos[0] + 1.0 / (2.0 * (0.3 + 1e-8))).abs() < 1e-12);
        assert!((out.d_r_neg[1] - 1.0 / (2.0 * (0.4 + 1e-8))).abs() < 1e-12);
    }

    #[test]
    fn reg_examples() {
        assert_eq!(loss_reg(&[1.0, 3.0], &[2.0, 2.0]).unwrap().value, 1.0);
        let flat = loss_reg(&[0.7; 4], &[0.7; 4]).unwrap();
        assert_eq!(flat.value, 0.0);
        assert!(flat.d_s_pos.iter().all(|&g| g == 0.0));
        assert_eq!(loss_reg(&[0.0], &[0.0]).unwrap().value, 0.0);
        assert!(matches!(loss_reg(&[], &[1.0]), Err(Error::EmptyBatch)));
    }

    #[test]
    fn weights_validation() {
        assert!(LossWeights::default().validate().is_ok());
        let mut w = LossWeights::default();
        w.epsilon = 0.0;
        assert!(w.validate().is_err());
        w = LossWeights::default();
        w.reg_sign = 0.5;
        assert!(w.validate().is_err());
        w = LossWeights::default();
        w.gamma = -1.0;
        assert!(w.validate().is_err());
    }

    fn random_batch(b: usize, n: usize, d: usize, rng: &mut Rng) -> BatchEmbeddings {
        BatchEmbeddings {
            queries: (0..b).map(|_| random_unit(d, rng)).collect(),
            positives: (0..b).map(|_| random_unit(d, rng)).collect(),
            negatives: (0..b)
                .map(|_| (0..n).map(|_| random_unit(d, rng)).collect())
                .collect(),
            selected: (0..b).map(|_| rng.below(n)).collect(),
        }
    }

    #[test]
    fn total_is_weighted_sum() {
        let mut rng = Rng::new(8);
        let batch = random_batch(3, 4, 6, &mut rng);
        let head = ArsParameters::init(6, 3, &mut rng).unwrap();
        let w = LossWeights::default();
        let out = loss_total(
            &batch,
            &head,
            Temperature::default(),
            &w,
            &LossFlags::default(),
        )
        .unwrap();
        let expected = w.alpha * out.l_cons + w.beta * out.l_dyn + w.gamma * w.reg_sign * out.l_reg;
        assert!((out.l_total - expected).abs() < 1e-12);
        assert!(out.l_reg >= 0.0 && out.l_dyn > -1e-6);
    }

    #[test]
    fn total_arithmetic_example() {
        let w = LossWeights::default();
        let total = w.alpha * 0.2 + w.beta * 0.3 + w.gamma * w.reg_sign * 0.5;
        assert!((total - 0.55).abs() < 1e-15);
    }

    #[test]
    fn gamma_zero_ignores_logit_spread() {
        let mut rng = Rng::new(13);
        let batch = random_batch(4, 3, 5, &mut rng);
        let head = ArsParameters::init(5, 2, &mut rng).unwrap();
        let w = LossWeights {
            gamma: 0.0,
            ..LossWeights::default()
        };
        let out = loss_total(
            &batch,
            &head,
            Temperature::default(),
            &w,
            &LossFlags::default(),
        )
        .unwrap();
        assert_eq!(out.l_total, out.l_cons + out.l_dyn);
    }
}
