//! Batch construction, the AdamW training loop, checkpoints and the
//! finite-difference gradient check.

mod checkpoint;
mod config;
mod gradcheck;
mod model;
mod optim;

pub use checkpoint::{write_atomic, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::RunConfig;
pub use gradcheck::{gradcheck, GradcheckOptions, GradcheckReport, GradientFault, GroupCheck};
pub use model::{batch_loss, batch_loss_and_grad, BatchTexts, Model, ModelDims, ModelGradients, ParamGroup};
pub use optim::{adamw_step, clip_gradients, lr_at, AdamWConfig, OptimizerState, ParamSlot, ScheduleConfig};

use std::fmt::Write as _;
use std::path::Path;

use crate::datasets::RetrieverExample;
use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::retrieval::Corpus;

/// One query group inside a batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchGroup {
    pub qid: u64,
    /// Index of the example in the dataset slice.
    pub example: usize,
    pub positive: u64,
    pub negatives: Vec<u64>,
    /// Pool index of the negative scored by the head this epoch.
    pub selected: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainingBatch {
    pub groups: Vec<BatchGroup>,
}

impl TrainingBatch {
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }
}

/// Shuffles the dataset once and cuts it into batches of `batch_size`
/// (the last may be short). Each group's scored negative is drawn from `rng`
/// after the shuffle, in batch order.
pub fn make_batches(dataset: &[RetrieverExample], batch_size: usize, rng: &mut Rng) -> Result<Vec<TrainingBatch>> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    rng.shuffle(&mut order);
    order
        .chunks(batch_size)
        .map(|chunk| {
            let groups = chunk
                .iter()
                .map(|&idx| {
                    let ex = &dataset[idx];
                    ex.validate().map_err(|reason| {
                        Error::Config(format!("example {}: {reason}", ex.qid))
                    })?;
                    if ex.negatives.is_empty() {
                        return Err(Error::Config(format!("example {} has an empty negative pool", ex.qid)));
                    }
                    Ok(BatchGroup {
                        qid: ex.qid,
                        example: idx,
                        positive: ex.positives[0],
                        negatives: ex.negatives.clone(),
                        selected: rng.below(ex.negatives.len()),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(TrainingBatch { groups })
        })
        .collect()
}

/// Resolves a batch's ids to texts.
pub fn batch_texts(batch: &TrainingBatch, dataset: &[RetrieverExample], corpus: &Corpus) -> Result<BatchTexts> {
    let text = |qid: u64, pid: u64| {
        corpus
            .get(pid)
            .map(|p| p.full_text())
            .ok_or(Error::DanglingId { qid, pid })
    };
    let mut out = BatchTexts::default();
    for g in &batch.groups {
        out.queries.push(dataset[g.example].question.clone());
        out.positives.push(text(g.qid, g.positive)?);
        out.negatives.push(
            g.negatives
                .iter()
                .map(|&pid| text(g.qid, pid))
                .collect::<Result<Vec<_>>>()?,
        );
        out.selected.push(g.selected);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    pub lr: f64,
    pub l_cons: f64,
    pub l_dyn: f64,
    pub l_reg: f64,
    pub l_total: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<StepMetrics>,
    pub steps_per_epoch: usize,
}

impl TrainOutput {
    /// Mean of `f` over each epoch's steps.
    pub fn epoch_means(&self, f: impl Fn(&StepMetrics) -> f64) -> Vec<f64> {
        self.metrics
            .chunks(self.steps_per_epoch.max(1))
            .map(|c| c.iter().map(&f).sum::<f64>() / c.len() as f64)
            .collect()
    }
}

pub const METRICS_HEADER: &str = "step\tlr\tl_cons\tl_dyn\tl_reg\tl_total\tgrad_norm";

/// Tab-separated metrics with a header line.
pub fn format_metrics(metrics: &[StepMetrics]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for m in metrics {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            m.step, m.lr, m.l_cons, m.l_dyn, m.l_reg, m.l_total, m.grad_norm
        );
    }
    s
}

pub fn parse_metrics(text: &str) -> Result<Vec<StepMetrics>> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::Config("metrics log has no header".into()));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split('\t').collect();
            let bad = || Error::Config(format!("bad metrics line `{line}`"));
            if f.len() != 7 {
                return Err(bad());
            }
            let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad());
            Ok(StepMetrics {
                step: f[0].parse().map_err(|_| bad())?,
                lr: num(1)?,
                l_cons: num(2)?,
                l_dyn: num(3)?,
                l_reg: num(4)?,
                l_total: num(5)?,
                grad_norm: num(6)?,
            })
        })
        .collect()
}

pub fn write_metrics(path: &Path, metrics: &[StepMetrics]) -> Result<()> {
    write_atomic(path, format_metrics(metrics).as_bytes())
}

/// Fresh model for a run; the same draws `train` starts from.
pub fn init_model(run: &RunConfig) -> Result<Model> {
    let mut rng = Rng::new(run.seed).derive("init");
    Model::init(run.dims, run.tokenizer, run.adapter_init_scale, run.tied_adapter_init, run.init_tau, &mut rng)
}

fn numeric_abort(step: u64, e: Error) -> Error {
    match e {
        Error::NonFinite { what } => Error::NumericAbort { step, component: what },
        Error::NonFiniteGradient { group } => Error::NumericAbort {
            step,
            component: format!("gradient {group}"),
        },
        other => other,
    }
}

/// Runs the full optimization. See [`train_with`] for a per-step hook.
pub fn train(run: &RunConfig, dataset: &[RetrieverExample], corpus: &Corpus) -> Result<TrainOutput> {
    train_with(run, dataset, corpus, |_| {})
}

/// Trains from [`init_model`]: per step encode, score, loss, backward, clip,
/// schedule and AdamW. `T` for the schedule is the run's total step count.
pub fn train_with(
    run: &RunConfig,
    dataset: &[RetrieverExample],
    corpus: &Corpus,
    mut on_step: impl FnMut(&StepMetrics),
) -> Result<TrainOutput> {
    run.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for ex in dataset {
        if let Some(&pid) = ex.positives.iter().chain(&ex.negatives).find(|&&p| !corpus.contains(p)) {
            return Err(Error::DanglingId { qid: ex.qid, pid });
        }
    }
    let mut model = init_model(run)?;
    let mut batch_rng = Rng::new(run.seed).derive("batches");
    let steps_per_epoch = dataset.len().div_ceil(run.batch_size);
    let total_steps = (run.epochs * steps_per_epoch) as u64;
    let schedule = ScheduleConfig {
        total_steps: total_steps.max(1),
        start_factor: run.schedule_start_factor,
    };
    let mut opt = OptimizerState::new(&ParamGroup::ALL.map(|g| model.group(g).len()));
    let mut metrics = Vec::with_capacity(total_steps as usize);

    for _epoch in 0..run.epochs {
        for batch in make_batches(dataset, run.batch_size, &mut batch_rng)? {
            let step = opt.step;
            let texts = batch_texts(&batch, dataset, corpus)?;
            let (breakdown, mut grads) =
                batch_loss_and_grad(&model, &texts, &run.weights, &run.flags, run.head_only)
                    .map_err(|e| numeric_abort(step, e))?;
            let grad_norm = {
                let [a, b, c, d, e, f] = ParamGroup::ALL;
                let (ga, gb, gc, gd, ge, gf) = split_grads(&mut grads, [a, b, c, d, e, f]);
                clip_gradients(&mut [ga, gb, gc, gd, ge, gf], run.max_grad_norm)
                    .map_err(|e| numeric_abort(step, e))?
            };
            let lr = lr_at(step, &schedule, run.optimizer.lr)?;
            apply_update(&mut model, &grads, &mut opt, run, lr)?;
            let m = StepMetrics {
                step,
                lr,
                l_cons: breakdown.l_cons,
                l_dyn: breakdown.l_dyn,
                l_reg: breakdown.l_reg,
                l_total: breakdown.l_total,
                grad_norm,
            };
            on_step(&m);
            metrics.push(m);
        }
    }
    Ok(TrainOutput {
        checkpoint: Checkpoint {
            model,
            optimizer: run.save_optimizer.then_some(opt),
        },
        metrics,
        steps_per_epoch,
    })
}

type GradSlices<'a> = (
    &'a mut [f64],
    &'a mut [f64],
    &'a mut [f64],
    &'a mut [f64],
    &'a mut [f64],
    &'a mut [f64],
);

fn split_grads(grads: &mut ModelGradients, _order: [ParamGroup; 6]) -> GradSlices<'_> {
    (
        grads.adapter_q.as_mut_slice(),
        grads.adapter_p.as_mut_slice(),
        grads.head.d_w_q.as_mut_slice(),
        grads.head.d_w_p.as_mut_slice(),
        &mut grads.head.d_w_a,
        std::slice::from_mut(&mut grads.log_tau),
    )
}

fn apply_update(model: &mut Model, grads: &ModelGradients, opt: &mut OptimizerState, run: &RunConfig, lr: f64) -> Result<()> {
    let frozen = |g: ParamGroup| run.head_only && g.is_adapter();
    let Model {
        question,
        passage,
        head,
        temperature,
        ..
    } = model;
    let mut slots = [
        ParamSlot {
            params: question.weights.as_mut_slice(),
            grads: grads.group(ParamGroup::AdapterQ),
            decay: true,
            frozen: frozen(ParamGroup::AdapterQ),
        },
        ParamSlot {
            params: passage.weights.as_mut_slice(),
            grads: grads.group(ParamGroup::AdapterP),
            decay: true,
            frozen: frozen(ParamGroup::AdapterP),
        },
        ParamSlot {
            params: head.w_q.as_mut_slice(),
            grads: grads.group(ParamGroup::Wq),
            decay: true,
            frozen: false,
        },
        ParamSlot {
            params: head.w_p.as_mut_slice(),
            grads: grads.group(ParamGroup::Wp),
            decay: true,
            frozen: false,
        },
        ParamSlot {
            params: head.w_a.as_mut_slice(),
            grads: grads.group(ParamGroup::Wa),
            decay: true,
            frozen: false,
        },
        // log τ is never decayed
        ParamSlot {
            params: std::slice::from_mut(&mut temperature.log_tau),
            grads: grads.group(ParamGroup::LogTau),
            decay: false,
            frozen: false,
        },
    ];
    adamw_step(&mut slots, opt, &run.optimizer, lr)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn examples(n: usize) -> Vec<RetrieverExample> {
        (0..n as u64)
            .map(|i| RetrieverExample {
                qid: i,
                question: format!("q{i}"),
                positives: vec![i],
                negatives: vec![100 + i, 200 + i],
            })
            .collect()
    }

    #[test]
    fn batch_sizes_and_coverage() {
        let data = examples(5);
        let batches = make_batches(&data, 2, &mut Rng::new(1)).unwrap();
        assert_eq!(batches.iter().map(TrainingBatch::len).collect::<Vec<_>>(), vec![2, 2, 1]);
        let mut seen: Vec<u64> = batches.iter().flat_map(|b| b.groups.iter().map(|g| g.qid)).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..5).collect::<Vec<_>>());
        for g in batches.iter().flat_map(|b| &b.groups) {
            assert!(g.selected < g.negatives.len());
            assert!(!g.negatives.contains(&g.positive));
        }
    }

    #[test]
    fn batches_deterministic_per_seed() {
        let data = examples(40);
        let a = make_batches(&data, 8, &mut Rng::new(9)).unwrap();
        let b = make_batches(&data, 8, &mut Rng::new(9)).unwrap();
        let c = make_batches(&data, 8, &mut Rng::new(10)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(matches!(make_batches(&[], 4, &mut Rng::new(0)), Err(Error::EmptyDataset)));
    }

    #[test]
    fn metrics_round_trip() {
        let m = vec![StepMetrics {
            step: 3,
            lr: 1e-5,
            l_cons: 3.1,
            l_dyn: 1.0 / 3.0,
            l_reg: 0.0,
            l_total: 4.2,
            grad_norm: 12.5,
        }];
        let text = format_metrics(&m);
        assert!(text.starts_with(METRICS_HEADER));
        assert_eq!(parse_metrics(&text).unwrap(), m);
    }
}
