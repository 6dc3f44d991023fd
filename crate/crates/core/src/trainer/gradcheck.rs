//! Central finite differences against the analytic gradient of `l_total`,
//! for every trainable scalar of a small random model.

use crate::error::{Error, Result};
use crate::numerics::Rng;

use super::config::RunConfig;
use super::model::{batch_loss, batch_loss_and_grad, BatchTexts, Model, ModelDims, ModelGradients, ParamGroup};

/// Deliberate gradient bugs for checking that the harness catches them.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradientFault {
    /// Reads `dW_q` with rows and columns swapped.
    TransposeWq,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckOptions {
    pub trials: usize,
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub batch_size: usize,
    pub pool_size: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Coordinates whose absolute difference is within this bound count as
    /// matching, which absorbs difference roundoff on near-zero partials.
    /// Zero keeps the purely relative test.
    pub abs_tolerance: f64,
    pub fault: Option<GradientFault>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            trials: 10,
            feature_dim: 32,
            embed_dim: 8,
            hidden_dim: 4,
            batch_size: 3,
            pool_size: 5,
            step: 1e-6,
            tolerance: 1e-4,
            abs_tolerance: 0.0,
            fault: None,
        }
    }
}

impl GradcheckOptions {
    fn validate(&self) -> Result<()> {
        let ok = self.trials >= 1
            && self.feature_dim >= 1
            && (2..=16).contains(&self.embed_dim)
            && (1..=8).contains(&self.hidden_dim)
            && (1..=4).contains(&self.batch_size)
            && (1..=6).contains(&self.pool_size)
            && self.step > 0.0
            && self.tolerance > 0.0
            && self.abs_tolerance >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(
                "gradcheck needs d in 2..=16, h in 1..=8, batch in 1..=4, pool in 1..=6".into(),
            ))
        }
    }
}

/// Worst coordinate of one parameter group over all trials.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupCheck {
    pub group: ParamGroup,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_trial: usize,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub trials: usize,
    pub tolerance: f64,
    pub groups: Vec<GroupCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.max_rel_error < self.tolerance)
    }

    pub fn failing_groups(&self) -> Vec<ParamGroup> {
        self.groups
            .iter()
            .filter(|g| g.max_rel_error >= self.tolerance)
            .map(|g| g.group)
            .collect()
    }

    pub fn group(&self, g: ParamGroup) -> Option<&GroupCheck> {
        self.groups.iter().find(|c| c.group == g)
    }
}

impl std::fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "group\tchecked\tmax_rel_error\ttrial\tindex\tanalytic\tnumeric")?;
        for g in &self.groups {
            writeln!(
                f,
                "{}\t{}\t{:.3e}\t{}\t{}\t{:.9e}\t{:.9e}",
                g.group.name(),
                g.checked,
                g.max_rel_error,
                g.worst_trial,
                g.worst_index,
                g.analytic,
                g.numeric
            )?;
        }
        write!(
            f,
            "{} over {} trials (tolerance {:e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.trials,
            self.tolerance
        )
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn random_text(rng: &mut Rng, vocab: usize) -> String {
    let len = 3 + rng.below(6);
    (0..len)
        .map(|_| format!("t{}", rng.below(vocab)))
        .collect::<Vec<_>>()
        .join(" ")
}

fn random_problem(opts: &GradcheckOptions, run: &RunConfig, rng: &mut Rng) -> Result<(Model, BatchTexts)> {
    let dims = ModelDims {
        feature_dim: opts.feature_dim,
        embed_dim: opts.embed_dim,
        hidden_dim: opts.hidden_dim,
    };
    // Unit adapter scale keeps every gradient well above the difference noise.
    let tau = (rng.uniform(-0.5, 0.5)).exp();
    let model = Model::init(dims, run.tokenizer, 1.0, false, tau, rng)?;
    let vocab = 2 * opts.feature_dim;
    let mut texts = BatchTexts::default();
    for _ in 0..opts.batch_size {
        texts.queries.push(random_text(rng, vocab));
        texts.positives.push(random_text(rng, vocab));
        texts
            .negatives
            .push((0..opts.pool_size).map(|_| random_text(rng, vocab)).collect());
        texts.selected.push(rng.below(opts.pool_size));
    }
    Ok((model, texts))
}

fn inject(fault: GradientFault, grads: &mut ModelGradients) {
    match fault {
        GradientFault::TransposeWq => {
            let m = &mut grads.head.d_w_q;
            let (h, d) = m.shape();
            let src = m.as_slice().to_vec();
            // flat index i read as if the buffer were stored d×h
            for (i, x) in m.as_mut_slice().iter_mut().enumerate() {
                *x = src[(i % h) * d + i / h];
            }
        }
    }
}

/// Runs `opts.trials` independent checks seeded from `run.seed`, using the
/// run's loss weights and flags with the small dims from `opts`.
pub fn gradcheck(run: &RunConfig, opts: &GradcheckOptions) -> Result<GradcheckReport> {
    opts.validate()?;
    run.weights.validate()?;
    let mut groups: Vec<GroupCheck> = ParamGroup::ALL
        .iter()
        .map(|&group| GroupCheck {
            group,
            checked: 0,
            max_rel_error: 0.0,
            worst_trial: 0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        })
        .collect();
    let root = Rng::new(run.seed).derive("gradcheck");
    for trial in 0..opts.trials {
        let mut rng = root.derive(&format!("trial-{trial}"));
        let (mut model, texts) = random_problem(opts, run, &mut rng)?;
        let (_, mut grads) = batch_loss_and_grad(&model, &texts, &run.weights, &run.flags, false)?;
        if let Some(fault) = opts.fault {
            inject(fault, &mut grads);
        }
        for check in groups.iter_mut() {
            let g = check.group;
            for i in 0..model.group(g).len() {
                let orig = model.group(g)[i];
                model.group_mut(g)[i] = orig + opts.step;
                let plus = batch_loss(&model, &texts, &run.weights, &run.flags)?.l_total;
                model.group_mut(g)[i] = orig - opts.step;
                let minus = batch_loss(&model, &texts, &run.weights, &run.flags)?.l_total;
                model.group_mut(g)[i] = orig;
                let numeric = (plus - minus) / (2.0 * opts.step);
                let analytic = grads.group(g)[i];
                let err = if (analytic - numeric).abs() <= opts.abs_tolerance {
                    0.0
                } else {
                    relative_error(analytic, numeric)
                };
                check.checked += 1;
                if err > check.max_rel_error || check.checked == 1 {
                    check.max_rel_error = err;
                    check.worst_trial = trial;
                    check.worst_index = i;
                    check.analytic = analytic;
                    check.numeric = numeric;
                }
            }
        }
    }
    Ok(GradcheckReport {
        trials: opts.trials,
        tolerance: opts.tolerance,
        groups,
    })
}
