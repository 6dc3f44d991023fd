//! AdamW with decoupled weight decay, a linear learning-rate ramp and
//! global-norm gradient clipping.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moments per parameter group, plus the update count.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(group_lens: &[usize]) -> Self {
        OptimizerState {
            step: 0,
            m: group_lens.iter().map(|&n| vec![0.0; n]).collect(),
            v: group_lens.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// One parameter tensor handed to the optimizer.
pub struct ParamSlot<'a> {
    pub params: &'a mut [f64],
    pub grads: &'a [f64],
    pub decay: bool,
    /// Frozen slots keep their moments and values untouched.
    pub frozen: bool,
}

/// Applies one bias-corrected AdamW update:
///
/// ```text
/// θ ← θ − lr·wd·θ
/// m ← β1 m + (1 − β1) g        v ← β2 v + (1 − β2) g²
/// θ ← θ − lr · (m / (1 − β1ᵗ)) / (sqrt(v / (1 − β2ᵗ)) + ε)
/// ```
pub fn adamw_step(slots: &mut [ParamSlot<'_>], state: &mut OptimizerState, cfg: &AdamWConfig, lr: f64) -> Result<()> {
    if slots.len() != state.m.len() {
        return Err(Error::dims(state.m.len(), slots.len()));
    }
    for (slot, m) in slots.iter().zip(&state.m) {
        if slot.params.len() != slot.grads.len() {
            return Err(Error::dims(slot.params.len(), slot.grads.len()));
        }
        if slot.params.len() != m.len() {
            return Err(Error::dims(m.len(), slot.params.len()));
        }
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (slot, (m, v)) in slots.iter_mut().zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        if slot.frozen {
            continue;
        }
        let decay = if slot.decay { lr * cfg.weight_decay } else { 0.0 };
        for i in 0..slot.params.len() {
            let g = slot.grads[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            let p = &mut slot.params[i];
            *p -= decay * *p;
            *p -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleConfig {
    pub total_steps: u64,
    pub start_factor: f64,
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_steps < 1 {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        if !(self.start_factor > 0.0 && self.start_factor <= 1.0) {
            return Err(Error::Config("start_factor must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// `base_lr · (f + (1 − f) · step / T)`: `f·base_lr` at step 0, `base_lr` at `T`.
pub fn lr_at(step: u64, schedule: &ScheduleConfig, base_lr: f64) -> Result<f64> {
    schedule.validate()?;
    if step > schedule.total_steps {
        return Err(Error::StepOutOfRange {
            step,
            total: schedule.total_steps,
        });
    }
    let f = schedule.start_factor;
    Ok(base_lr * (f + (1.0 - f) * step as f64 / schedule.total_steps as f64))
}

/// Rescales all gradients jointly so their global ℓ2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_gradients(groups: &mut [&mut [f64]], max_norm: f64) -> Result<f64> {
    let mut sq = 0.0;
    for (i, g) in groups.iter().enumerate() {
        for &x in g.iter() {
            if !x.is_finite() {
                return Err(Error::NonFiniteGradient {
                    group: format!("group {i}"),
                });
            }
            sq += x * x;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in groups.iter_mut() {
            g.iter_mut().for_each(|x| *x *= scale);
        }
    }
    Ok(norm)
}
