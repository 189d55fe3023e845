use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

use super::PpoConfig;
use crate::error::{Error, Result};
use crate::nn::{AdamState, GaussianPolicy};

/// Transitions of one behavior batch with their advantages, flattened across
/// episodes. `adv_cost` has one column per working-set entry.
#[derive(Clone, Debug, PartialEq)]
pub struct UpdateBatch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub old_log_probs: Vec<f64>,
    pub adv_reward: Vec<f64>,
    pub adv_cost: Array2<f64>,
}

impl UpdateBatch {
    pub fn len(&self) -> usize {
        self.old_log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.old_log_probs.is_empty()
    }

    pub fn select(&self, rows: &[usize]) -> UpdateBatch {
        UpdateBatch {
            states: self.states.select(Axis(0), rows),
            actions: self.actions.select(Axis(0), rows),
            old_log_probs: rows.iter().map(|&i| self.old_log_probs[i]).collect(),
            adv_reward: rows.iter().map(|&i| self.adv_reward[i]).collect(),
            adv_cost: self.adv_cost.select(Axis(0), rows),
        }
    }

    fn check(&self, policy: &GaussianPolicy, multipliers: &[f64]) -> Result<()> {
        let n = self.len();
        if self.states.nrows() != n
            || self.actions.nrows() != n
            || self.adv_reward.len() != n
            || self.adv_cost.nrows() != n
        {
            return Err(Error::invalid("update batch columns have different lengths"));
        }
        if self.states.ncols() != policy.state_dim() {
            return Err(Error::Dimension {
                context: "update batch states",
                expected: policy.state_dim(),
                got: self.states.ncols(),
            });
        }
        if self.adv_cost.ncols() != multipliers.len() {
            return Err(Error::Dimension {
                context: "cost advantages per multiplier",
                expected: multipliers.len(),
                got: self.adv_cost.ncols(),
            });
        }
        Ok(())
    }
}

/// Reward term `min(r A, clip(r) A)`, maximized; the unclipped branch wins ties.
fn reward_term(ratio: f64, clipped: f64, adv: f64) -> (f64, bool) {
    let (a, b) = (ratio * adv, clipped * adv);
    if a <= b {
        (a, true)
    } else {
        (b, false)
    }
}

/// Cost term `max(r A, clip(r) A)`, minimized: the pessimistic bound on the
/// cost change.
fn cost_term(ratio: f64, clipped: f64, adv: f64) -> (f64, bool) {
    let (a, b) = (ratio * adv, clipped * adv);
    if a >= b {
        (a, true)
    } else {
        (b, false)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateStats {
    pub loss: f64,
    /// Fraction of samples whose ratio lies outside the clip range.
    pub clip_fraction: f64,
}

/// Clipped Lagrangian surrogate
/// `mean_i [ -min(r_i A_i, clip(r_i) A_i) + sum_j v_j max(r_i C_ij, clip(r_i) C_ij) ]`
/// with `r_i = exp(log_prob_i - old_log_prob_i)`. When `grad` is given, the
/// gradient with respect to the policy parameters is added to it.
pub fn surrogate(
    policy: &GaussianPolicy,
    batch: &UpdateBatch,
    multipliers: &[f64],
    clip: f64,
    grad: Option<&mut [f64]>,
) -> Result<SurrogateStats> {
    batch.check(policy, multipliers)?;
    let n = batch.len();
    if n == 0 {
        return Err(Error::invalid("empty update batch"));
    }
    let (log_probs, cache) = policy.log_prob_batch(batch.states.clone(), batch.actions.view())?;
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut clipped_count = 0;
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let ratio = (log_probs[i] - batch.old_log_probs[i]).exp();
        let clipped = ratio.clamp(1.0 - clip, 1.0 + clip);
        if clipped != ratio {
            clipped_count += 1;
        }
        let (term, live) = reward_term(ratio, clipped, batch.adv_reward[i]);
        let mut sample_loss = -term;
        let mut dloss_dratio = if live { -batch.adv_reward[i] } else { 0.0 };
        for (j, &v) in multipliers.iter().enumerate() {
            let adv = batch.adv_cost[[i, j]];
            let (term, live) = cost_term(ratio, clipped, adv);
            sample_loss += v * term;
            if live {
                dloss_dratio += v * adv;
            }
        }
        loss += sample_loss * inv_n;
        weights[i] = dloss_dratio * ratio * inv_n;
    }
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("non-finite surrogate loss {loss}")));
    }
    if let Some(grad) = grad {
        policy.backward_log_prob(&cache, &weights, grad)?;
    }
    Ok(SurrogateStats {
        loss,
        clip_fraction: clipped_count as f64 / n as f64,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct UpdateStats {
    pub mean_loss: f64,
    pub clip_fraction: f64,
    pub steps: usize,
}

/// `epochs` passes of shuffled minibatch Adam steps on [`surrogate`].
pub fn policy_update<R: Rng + ?Sized>(
    policy: &mut GaussianPolicy,
    opt: &mut AdamState,
    batch: &UpdateBatch,
    multipliers: &[f64],
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<UpdateStats> {
    let n = batch.len();
    let mb = cfg.minibatch_size.clamp(1, n.max(1));
    let mut order: Vec<usize> = (0..n).collect();
    let mut params = policy.flat_params();
    let mut grad = vec![0.0; params.len()];
    let (mut loss_sum, mut clip_sum, mut steps) = (0.0, 0.0, 0);
    for _ in 0..cfg.epochs_per_iter {
        order.shuffle(rng);
        for rows in order.chunks(mb) {
            let mini = batch.select(rows);
            grad.iter_mut().for_each(|g| *g = 0.0);
            let stats = surrogate(policy, &mini, multipliers, cfg.clip, Some(&mut grad))?;
            opt.step(&mut params, &grad)?;
            policy.set_flat_params(&params)?;
            loss_sum += stats.loss;
            clip_sum += stats.clip_fraction;
            steps += 1;
        }
    }
    let denom = steps.max(1) as f64;
    Ok(UpdateStats {
        mean_loss: loss_sum / denom,
        clip_fraction: clip_sum / denom,
        steps,
    })
}

/// Projected dual ascent `max(0, v + lr * residual)`.
pub fn dual_update(v: f64, residual: f64, lr_mult: f64) -> f64 {
    (v + lr_mult * residual).max(0.0)
}
