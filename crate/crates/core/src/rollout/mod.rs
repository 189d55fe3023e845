//! Trajectory collection and Monte Carlo estimators.
//!
//! Every estimator is a pure function of an [`EvalBatch`]: the batch is
//! collected once under a fixed policy and then reused for the objective, for
//! any number of constraint indices, and for y-gradients of the violation.

mod estimate;
mod gae;

pub use estimate::{
    discounted_returns, estimate_constraint, estimate_constraint_grid, estimate_objective, objective_standard_error,
    violation, violation_grad_y,
};
pub use gae::{gae, gae_trajectory, returns_to_go};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::nn::GaussianPolicy;

/// One episode. States, actions and log-probabilities are stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub state_dim: usize,
    pub action_dim: usize,
    /// `s_0 .. s_{T-1}`, the states at which actions were taken.
    pub states: Vec<f64>,
    pub actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    /// `s_T`, the state after the last action.
    pub final_state: Vec<f64>,
    /// Ended by reaching the goal rather than by truncation.
    pub terminal: bool,
}

impl Trajectory {
    pub fn new(state_dim: usize, action_dim: usize) -> Self {
        Trajectory {
            state_dim,
            action_dim,
            states: Vec::new(),
            actions: Vec::new(),
            log_probs: Vec::new(),
            rewards: Vec::new(),
            final_state: Vec::new(),
            terminal: false,
        }
    }

    /// Builds a trajectory that only carries states, for estimator tests and
    /// scripted evaluations. Rewards are zero and actions empty.
    pub fn from_states(state_dim: usize, states: &[Vec<f64>]) -> Self {
        let mut t = Trajectory::new(state_dim, 0);
        for s in states {
            t.states.extend_from_slice(s);
            t.rewards.push(0.0);
            t.log_probs.push(0.0);
        }
        t.final_state = states.last().cloned().unwrap_or_else(|| vec![0.0; state_dim]);
        t
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn state(&self, t: usize) -> &[f64] {
        &self.states[t * self.state_dim..(t + 1) * self.state_dim]
    }

    pub fn action(&self, t: usize) -> &[f64] {
        &self.actions[t * self.action_dim..(t + 1) * self.action_dim]
    }

    pub fn state_iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.states.chunks_exact(self.state_dim)
    }
}

/// Episodes collected under one fixed set of policy parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalBatch {
    pub trajectories: Vec<Trajectory>,
    pub policy_version: u64,
}

impl EvalBatch {
    pub fn new(trajectories: Vec<Trajectory>, policy_version: u64) -> Self {
        EvalBatch {
            trajectories,
            policy_version,
        }
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn transitions(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    pub fn terminal_fraction(&self) -> f64 {
        let reached = self.trajectories.iter().filter(|t| t.terminal).count();
        reached as f64 / self.len().max(1) as f64
    }
}

/// How actions are chosen during collection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActionMode {
    Sample,
    /// Squashed mean; log-probabilities are still recorded.
    Greedy,
}

/// Runs `episodes` independent episodes of `policy` in `env`.
///
/// One seed is drawn from `rng`; episode `m` uses its own ChaCha stream `m`
/// under that seed, so the batch does not depend on how episodes are
/// interleaved. Episodes are stepped in lockstep to batch the policy network.
pub fn collect<E: Environment + ?Sized, R: Rng + ?Sized>(
    policy: &GaussianPolicy,
    env: &E,
    episodes: usize,
    mode: ActionMode,
    policy_version: u64,
    rng: &mut R,
) -> Result<EvalBatch> {
    if episodes == 0 {
        return Err(Error::invalid("collect needs at least one episode"));
    }
    let state_dim = env.state_dim();
    let action_dim = policy.action_dim();
    if policy.state_dim() != state_dim {
        return Err(Error::Dimension {
            context: "policy state dimension",
            expected: state_dim,
            got: policy.state_dim(),
        });
    }
    let seed: u64 = rng.random();
    let mut streams: Vec<ChaCha8Rng> = (0..episodes)
        .map(|m| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(m as u64);
            r
        })
        .collect();
    let mut trajectories: Vec<Trajectory> = (0..episodes).map(|_| Trajectory::new(state_dim, action_dim)).collect();
    let mut current: Vec<Vec<f64>> = streams.iter_mut().map(|r| env.reset(r)).collect();
    let mut active: Vec<usize> = (0..episodes).collect();
    let max_steps = env.max_steps();

    for _ in 0..max_steps {
        if active.is_empty() {
            break;
        }
        let mut batch = ndarray::Array2::zeros((active.len(), state_dim));
        for (row, &m) in active.iter().enumerate() {
            for (j, &v) in current[m].iter().enumerate() {
                batch[[row, j]] = v;
            }
        }
        let means = policy.mean_batch(batch.view())?;
        let mut still_active = Vec::with_capacity(active.len());
        for (row, &m) in active.iter().enumerate() {
            let mean = means.row(row);
            let mean = mean.as_slice().expect("row-major");
            let (action, log_prob) = match mode {
                ActionMode::Sample => policy.sample_from_mean(mean, &mut streams[m]),
                ActionMode::Greedy => {
                    let a: Vec<f64> =
                        policy.intervals().iter().zip(mean).map(|(iv, &u)| iv.squash(u)).collect();
                    let lp = policy.log_prob_from_mean(mean, &a);
                    (a, lp)
                }
            };
            if !log_prob.is_finite() {
                return Err(Error::Numerical(format!("non-finite log-probability in episode {m}")));
            }
            let step = env.step(&current[m], &action)?;
            let traj = &mut trajectories[m];
            traj.states.extend_from_slice(&current[m]);
            traj.actions.extend_from_slice(&action);
            traj.log_probs.push(log_prob);
            traj.rewards.push(step.reward);
            current[m] = step.state;
            if step.terminal {
                traj.terminal = true;
            } else {
                still_active.push(m);
            }
        }
        active = still_active;
    }
    for (traj, s) in trajectories.iter_mut().zip(current) {
        traj.final_state = s;
    }
    Ok(EvalBatch::new(trajectories, policy_version))
}
