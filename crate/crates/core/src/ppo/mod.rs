//! PPO with a Lagrangian penalty over the working set: the subproblem solver
//! for the reinforcement-learning tasks.

mod critics;
mod update;

pub use critics::{constraint_input, regress, Critics};
pub use update::{dual_update, policy_update, surrogate, SurrogateStats, UpdateBatch, UpdateStats};

use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{ConstraintFamily, Environment, IndexBox};
use crate::error::{Error, Result};
use crate::exchange::{Evaluator, EvaluatorFactory, Solution, SubproblemSolver, WorkingSet};
use crate::nn::{AdamConfig, AdamState, GaussianPolicy};
use crate::rollout::{self, ActionMode, EvalBatch};
use crate::search::{IndexPoint, ViolationOracle};

#[derive(Clone, Debug, PartialEq)]
pub struct PpoConfig {
    pub clip: f64,
    pub lr_net: f64,
    pub lr_mult: f64,
    pub gae_lambda: f64,
    pub inner_iters: usize,
    pub epochs_per_iter: usize,
    pub minibatch_size: usize,
    /// A round counts as satisfied when every entry's violation is at most this.
    pub sub_tolerance: f64,
    /// Episodes per batch.
    pub episodes: usize,
    pub advantage_scaling: AdvantageScaling,
}

/// How advantages are normalized before the policy update. Reward
/// advantages are always centered.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvantageScaling {
    /// Reward advantages scaled to unit variance, cost advantages raw.
    RewardOnly,
    /// Reward and cost advantages divided by the same reward standard
    /// deviation, which keeps the penalty weights relative to the reward.
    Shared,
}

impl PpoConfig {
    pub fn for_eta(eta: f64) -> Self {
        PpoConfig {
            clip: 0.3,
            lr_net: 1e-4,
            lr_mult: 1e-4,
            gae_lambda: 1.0,
            inner_iters: 20,
            epochs_per_iter: 4,
            minibatch_size: 256,
            sub_tolerance: eta / 2.0,
            episodes: 64,
            advantage_scaling: AdvantageScaling::Shared,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("clip", self.clip),
            ("lr_net", self.lr_net),
            ("lr_mult", self.lr_mult),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(Error::invalid(format!("gae_lambda must lie in [0, 1], got {}", self.gae_lambda)));
        }
        if self.inner_iters == 0 || self.epochs_per_iter == 0 || self.minibatch_size == 0 || self.episodes == 0 {
            return Err(Error::invalid("inner_iters, epochs, minibatch size and episodes must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    ToleranceMet,
    BudgetExhausted,
}

/// Diagnostics of one inner round, measured on the batch the round trained on.
#[derive(Clone, Debug, PartialEq)]
pub struct InnerRound {
    pub round: usize,
    pub objective: f64,
    /// Largest working-set violation, `-inf` with an empty working set.
    pub max_violation: f64,
    pub multipliers_l1: f64,
    pub mean_episode_length: f64,
    pub policy_loss: f64,
    pub reward_critic_loss: f64,
    pub constraint_critic_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubproblemReport {
    pub rounds: Vec<InnerRound>,
    /// Violation of each working-set entry on the last batch.
    pub final_violations: Vec<f64>,
    /// Multipliers at the start of every round, then the final values.
    pub multiplier_trajectory: Vec<Vec<f64>>,
    pub stop_reason: StopReason,
}

/// Monte Carlo violation surface of one policy, on one cached batch.
pub struct RlEvaluator {
    pub batch: EvalBatch,
    pub env: Arc<dyn Environment>,
    objective: f64,
}

impl RlEvaluator {
    pub fn new(batch: EvalBatch, env: Arc<dyn Environment>) -> Self {
        let objective = rollout::estimate_objective(&batch, env.gamma_r());
        RlEvaluator { batch, env, objective }
    }

    fn family(&self) -> &dyn ConstraintFamily {
        self.env.family()
    }
}

impl ViolationOracle for RlEvaluator {
    fn index_box(&self, _family: usize) -> &IndexBox {
        self.family().index_box()
    }

    fn violation(&self, y: &IndexPoint) -> f64 {
        rollout::violation(&self.batch, self.family(), &y.coords)
    }

    fn violation_grad(&self, y: &IndexPoint) -> Vec<f64> {
        rollout::violation_grad_y(&self.batch, self.family(), &y.coords)
    }

    fn violation_grid(&self, _family: usize, points: &[Vec<f64>]) -> Vec<f64> {
        let family = self.family();
        let sign = family.orientation().sign();
        rollout::estimate_constraint_grid(&self.batch, family, points)
            .into_iter()
            .zip(points)
            .map(|(j, y)| sign * (j - family.bound(y)))
            .collect()
    }
}

impl Evaluator for RlEvaluator {
    fn objective(&self) -> f64 {
        self.objective
    }
}

/// Collects a fresh sampled batch for every outer iteration.
pub struct RlEvaluatorFactory {
    pub env: Arc<dyn Environment>,
    pub episodes: usize,
    pub rng: ChaCha8Rng,
}

impl EvaluatorFactory<GaussianPolicy> for RlEvaluatorFactory {
    type Eval = RlEvaluator;

    fn evaluate(&mut self, params: &GaussianPolicy, iteration: usize) -> Result<RlEvaluator> {
        let batch = rollout::collect(params, &*self.env, self.episodes, ActionMode::Sample, version(iteration, 0), &mut self.rng)?;
        Ok(RlEvaluator::new(batch, self.env.clone()))
    }
}

fn version(iteration: usize, round: usize) -> u64 {
    (iteration as u64) << 32 | round as u64
}

/// Flattened transitions of a batch plus per-episode bookkeeping.
struct Flat {
    states: Array2<f64>,
    actions: Array2<f64>,
    log_probs: Vec<f64>,
    finals: Array2<f64>,
    offsets: Vec<usize>,
}

impl Flat {
    fn new(batch: &EvalBatch) -> Self {
        let first = &batch.trajectories[0];
        let (sd, ad) = (first.state_dim, first.action_dim);
        let total = batch.transitions();
        let mut states = Vec::with_capacity(total * sd);
        let mut actions = Vec::with_capacity(total * ad);
        let mut log_probs = Vec::with_capacity(total);
        let mut finals = Vec::with_capacity(batch.len() * sd);
        let mut offsets = vec![0];
        for t in &batch.trajectories {
            states.extend_from_slice(&t.states);
            actions.extend_from_slice(&t.actions);
            log_probs.extend_from_slice(&t.log_probs);
            finals.extend_from_slice(&t.final_state);
            offsets.push(offsets.last().unwrap() + t.len());
        }
        Flat {
            states: Array2::from_shape_vec((total, sd), states).expect("row-major states"),
            actions: Array2::from_shape_vec((total, ad), actions).expect("row-major actions"),
            log_probs,
            finals: Array2::from_shape_vec((batch.len(), sd), finals).expect("row-major final states"),
            offsets,
        }
    }
}

/// Per-step signal of every episode turned into GAE advantages and
/// lambda-return targets, given values at all states and final states.
fn advantages(
    batch: &EvalBatch,
    flat: &Flat,
    signal: &[f64],
    values: &[f64],
    final_values: &[f64],
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let mut adv = Vec::with_capacity(signal.len());
    for (m, traj) in batch.trajectories.iter().enumerate() {
        let (a, b) = (flat.offsets[m], flat.offsets[m + 1]);
        let bootstrap = if traj.terminal { 0.0 } else { final_values[m] };
        adv.extend(rollout::gae(&signal[a..b], &values[a..b], bootstrap, gamma, lambda));
    }
    let targets = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, targets)
}

/// Centers `values` and scales them to unit variance; returns the scale.
fn standardize(values: &mut [f64]) -> f64 {
    let n = values.len() as f64;
    if values.len() < 2 {
        return 1.0;
    }
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let scale = 1.0 / (var.sqrt() + 1e-8);
    values.iter_mut().for_each(|v| *v = (*v - mean) * scale);
    scale
}

#[derive(Clone, Debug, PartialEq)]
pub struct CriticLosses {
    pub reward: f64,
    pub constraint: f64,
}

/// Regresses both critics on lambda-return targets of `batch`: reward returns
/// under `gamma_r`, and cost returns under the family's discount at each of
/// `points`. Returns the advantage batch computed with the refitted critics.
#[allow(clippy::too_many_arguments)]
pub fn fit_critics<R: Rng + ?Sized>(
    critics: &mut Critics,
    batch: &EvalBatch,
    points: &[Vec<f64>],
    family: &dyn ConstraintFamily,
    gamma_r: f64,
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<(UpdateBatch, CriticLosses)> {
    let flat = Flat::new(batch);
    let rewards: Vec<f64> = batch.trajectories.iter().flat_map(|t| t.rewards.iter().copied()).collect();
    let costs: Vec<Vec<f64>> = points
        .iter()
        .map(|y| flat.states.rows().into_iter().map(|s| family.cost(y, s.as_slice().unwrap())).collect())
        .collect();
    let gamma_c = family.gamma_c();
    let lambda = cfg.gae_lambda;

    let reward_targets = {
        let v = critics.reward_values(flat.states.view())?;
        let vf = critics.reward_values(flat.finals.view())?;
        advantages(batch, &flat, &rewards, &v, &vf, gamma_r, lambda).1
    };
    let cost_targets: Vec<Vec<f64>> = points
        .iter()
        .zip(&costs)
        .map(|(y, c)| {
            let v = critics.constraint_values(flat.states.view(), y)?;
            let vf = critics.constraint_values(flat.finals.view(), y)?;
            Ok(advantages(batch, &flat, c, &v, &vf, gamma_c, lambda).1)
        })
        .collect::<Result<_>>()?;

    let epochs = cfg.epochs_per_iter;
    let mb = cfg.minibatch_size;
    let losses = CriticLosses {
        reward: critics.fit_reward(flat.states.view(), &reward_targets, epochs, mb, rng)?,
        constraint: critics.fit_constraint(flat.states.view(), points, &cost_targets, epochs, mb, rng)?,
    };

    let v = critics.reward_values(flat.states.view())?;
    let vf = critics.reward_values(flat.finals.view())?;
    let mut adv_reward = advantages(batch, &flat, &rewards, &v, &vf, gamma_r, lambda).0;
    let scale = standardize(&mut adv_reward);
    let mut adv_cost = Array2::zeros((flat.log_probs.len(), points.len()));
    for (j, (y, c)) in points.iter().zip(&costs).enumerate() {
        let v = critics.constraint_values(flat.states.view(), y)?;
        let vf = critics.constraint_values(flat.finals.view(), y)?;
        let a = advantages(batch, &flat, c, &v, &vf, gamma_c, lambda).0;
        adv_cost.column_mut(j).assign(&ndarray::Array1::from(a));
    }
    if cfg.advantage_scaling == AdvantageScaling::Shared {
        adv_cost *= scale;
    }
    let update = UpdateBatch {
        states: flat.states,
        actions: flat.actions,
        old_log_probs: flat.log_probs,
        adv_reward,
        adv_cost,
    };
    Ok((update, losses))
}

/// Learner state carried across subproblems.
pub struct Learner {
    pub critics: Critics,
    pub policy_opt: AdamState,
}

impl Learner {
    pub fn new<R: Rng + ?Sized>(policy: &GaussianPolicy, env: &dyn Environment, hidden: &[usize], lr: f64, rng: &mut R) -> Result<Self> {
        Ok(Learner {
            critics: Critics::new(env.state_dim(), env.family().index_box().dim(), hidden, lr, rng)?,
            policy_opt: AdamState::new(policy.num_params(), AdamConfig::with_lr(lr)),
        })
    }
}

/// Approximately solves the subproblem over `ws` by PPO-Lagrangian rounds,
/// starting from `policy` and the multipliers stored in `ws`.
///
/// Each round trains on one batch (`first_batch` for round 0 when given),
/// then takes one dual step per entry. With a nonempty working set the solve
/// stops once two consecutive rounds see every violation at most
/// `sub_tolerance`.
#[allow(clippy::too_many_arguments)]
pub fn solve_subproblem<R: Rng + ?Sized>(
    policy: &GaussianPolicy,
    learner: &mut Learner,
    ws: &WorkingSet,
    env: &dyn Environment,
    first_batch: Option<&EvalBatch>,
    cfg: &PpoConfig,
    iteration: usize,
    rng: &mut R,
) -> Result<(GaussianPolicy, Vec<f64>, SubproblemReport)> {
    cfg.validate()?;
    let family = env.family();
    let points: Vec<Vec<f64>> = ws.points().map(|p| p.coords.clone()).collect();
    let mut policy = policy.clone();
    let mut v = ws.multipliers();
    let mut rounds = Vec::new();
    let mut trajectory = Vec::new();
    let mut streak = 0;
    let mut stop_reason = StopReason::BudgetExhausted;
    let mut final_violations = Vec::new();

    for round in 0..cfg.inner_iters {
        let collected;
        let batch = match (round, first_batch) {
            (0, Some(b)) => b,
            _ => {
                collected = rollout::collect(&policy, env, cfg.episodes, ActionMode::Sample, version(iteration, round), rng)?;
                &collected
            }
        };
        let violations: Vec<f64> = points.iter().map(|y| rollout::violation(batch, family, y)).collect();
        let objective = rollout::estimate_objective(batch, env.gamma_r());
        let max_violation = violations.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        final_violations = violations.clone();
        trajectory.push(v.clone());

        if !points.is_empty() && max_violation <= cfg.sub_tolerance {
            streak += 1;
        } else {
            streak = 0;
        }
        let mut record = InnerRound {
            round,
            objective,
            max_violation,
            multipliers_l1: v.iter().sum(),
            mean_episode_length: batch.transitions() as f64 / batch.len() as f64,
            policy_loss: f64::NAN,
            reward_critic_loss: f64::NAN,
            constraint_critic_loss: f64::NAN,
        };
        if streak >= 2 {
            stop_reason = StopReason::ToleranceMet;
            rounds.push(record);
            break;
        }

        let (update, losses) = fit_critics(&mut learner.critics, batch, &points, family, env.gamma_r(), cfg, rng)?;
        let stats = policy_update(&mut policy, &mut learner.policy_opt, &update, &v, cfg, rng)?;
        for (vj, &res) in v.iter_mut().zip(&violations) {
            *vj = dual_update(*vj, res, cfg.lr_mult);
        }
        record.policy_loss = stats.mean_loss;
        record.reward_critic_loss = losses.reward;
        record.constraint_critic_loss = losses.constraint;
        log::debug!(
            "iteration {iteration} round {round}: objective {objective:.4}, max violation {max_violation:.5}, episode length {:.1}",
            record.mean_episode_length
        );
        rounds.push(record);
    }
    trajectory.push(v.clone());
    Ok((
        policy,
        v,
        SubproblemReport {
            rounds,
            final_violations,
            multiplier_trajectory: trajectory,
            stop_reason,
        },
    ))
}

/// [`solve_subproblem`] behind the exchange-loop interface.
pub struct PpoLagSolver {
    pub env: Arc<dyn Environment>,
    pub cfg: PpoConfig,
    pub learner: Learner,
    pub rng: ChaCha8Rng,
}

impl PpoLagSolver {
    pub fn new(env: Arc<dyn Environment>, cfg: PpoConfig, learner: Learner, rng: ChaCha8Rng) -> Self {
        PpoLagSolver { env, cfg, learner, rng }
    }
}

impl SubproblemSolver<GaussianPolicy, RlEvaluator> for PpoLagSolver {
    type Report = SubproblemReport;

    fn solve(
        &mut self,
        init: &GaussianPolicy,
        ws: &WorkingSet,
        eval: &RlEvaluator,
        iteration: usize,
    ) -> Result<Solution<GaussianPolicy, SubproblemReport>> {
        let (params, multipliers, report) = solve_subproblem(
            init,
            &mut self.learner,
            ws,
            &*self.env,
            Some(&eval.batch),
            &self.cfg,
            iteration,
            &mut self.rng,
        )?;
        let value = report.rounds.last().map_or(f64::NAN, |r| r.objective);
        Ok(Solution {
            params,
            multipliers,
            value,
            report,
        })
    }
}
