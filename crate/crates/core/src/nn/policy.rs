//! Gaussian policy with a state-independent learned standard deviation and
//! `tanh` squashing onto a bounded action box.
//!
//! An action is produced as `a = lo + (hi - lo) * (tanh(u) + 1) / 2` with
//! `u ~ N(mean(s), exp(log_std)^2)`. Log-densities include the change of
//! variables `log |da/du| = log((hi - lo) / 2 * (1 - tanh(u)^2))`.
//!
//! For a circular action such as a heading in `[0, 2pi)` the squash leaves a
//! seam at `0 / 2pi`: the two ends are far apart in `u`-space.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use super::mlp::{ForwardCache, Init, Mlp, ParamVector};
use crate::error::{Error, Result};

/// Fraction of the interval width kept clear of each end.
pub const BOUNDARY_EPS: f64 = 1e-6;

const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActionInterval {
    pub lo: f64,
    pub hi: f64,
}

impl ActionInterval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::invalid(format!("bad action interval [{lo}, {hi}]")));
        }
        Ok(ActionInterval { lo, hi })
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, a: f64) -> bool {
        a >= self.lo && a <= self.hi
    }

    pub fn squash(&self, u: f64) -> f64 {
        let a = self.lo + self.width() * 0.5 * (u.tanh() + 1.0);
        self.clamp_interior(a)
    }

    pub fn clamp_interior(&self, a: f64) -> f64 {
        let margin = BOUNDARY_EPS * self.width();
        a.clamp(self.lo + margin, self.hi - margin)
    }

    /// Maps an action to `tanh(u)` in `(-1, 1)`, clamping it off the boundary first.
    fn to_unit(self, a: f64) -> f64 {
        2.0 * (self.clamp_interior(a) - self.lo) / self.width() - 1.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPolicy {
    mean_net: Mlp,
    log_std: Vec<f64>,
    intervals: Vec<ActionInterval>,
}

/// Intermediate values of a batched log-probability evaluation, kept for
/// [`GaussianPolicy::backward_log_prob`].
pub struct LogProbCache {
    net_cache: ForwardCache,
    /// Pre-squash actions `atanh(t)`, row-major `(batch, action_dim)`.
    pre_squash: Array2<f64>,
}

impl GaussianPolicy {
    pub const DEFAULT_LOG_STD: f64 = -0.5;

    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        hidden: &[usize],
        intervals: Vec<ActionInterval>,
        log_std_init: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(state_dim);
        sizes.extend_from_slice(hidden);
        sizes.push(intervals.len());
        let mean_net = Mlp::new(&sizes, Init::POLICY, rng)?;
        Self::from_parts(mean_net, vec![log_std_init; intervals.len()], intervals)
    }

    pub fn from_parts(mean_net: Mlp, log_std: Vec<f64>, intervals: Vec<ActionInterval>) -> Result<Self> {
        if intervals.is_empty() || mean_net.output_dim() != intervals.len() {
            return Err(Error::Dimension {
                context: "GaussianPolicy action dimension",
                expected: intervals.len(),
                got: mean_net.output_dim(),
            });
        }
        if log_std.len() != intervals.len() {
            return Err(Error::Dimension {
                context: "GaussianPolicy log_std",
                expected: intervals.len(),
                got: log_std.len(),
            });
        }
        Ok(GaussianPolicy {
            mean_net,
            log_std,
            intervals,
        })
    }

    pub fn mean_net(&self) -> &Mlp {
        &self.mean_net
    }

    pub fn log_std(&self) -> &[f64] {
        &self.log_std
    }

    pub fn set_log_std(&mut self, log_std: &[f64]) {
        self.log_std.copy_from_slice(log_std);
    }

    pub fn intervals(&self) -> &[ActionInterval] {
        &self.intervals
    }

    pub fn state_dim(&self) -> usize {
        self.mean_net.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.intervals.len()
    }

    /// Number of entries in [`Self::flat_params`]: network parameters then `log_std`.
    pub fn num_params(&self) -> usize {
        self.mean_net.num_params() + self.log_std.len()
    }

    pub fn flat_params(&self) -> ParamVector {
        let mut v = self.mean_net.params().to_vec();
        v.extend_from_slice(&self.log_std);
        v.into()
    }

    pub fn set_flat_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::Dimension {
                context: "GaussianPolicy::set_flat_params",
                expected: self.num_params(),
                got: values.len(),
            });
        }
        let (net, log_std) = values.split_at(self.mean_net.num_params());
        self.mean_net.set_params(net)?;
        self.log_std.copy_from_slice(log_std);
        Ok(())
    }

    /// Unsquashed mean for one state.
    pub fn mean(&self, s: &[f64]) -> Result<Vec<f64>> {
        self.mean_net.forward(s)
    }

    pub fn mean_batch(&self, states: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.mean_net.forward_batch(states)
    }

    /// Squashed mean: the deterministic action used for greedy evaluation.
    pub fn greedy_action(&self, s: &[f64]) -> Result<Vec<f64>> {
        let mean = self.mean(s)?;
        Ok(self.intervals.iter().zip(&mean).map(|(iv, &m)| iv.squash(m)).collect())
    }

    /// Draws an action given a precomputed mean and returns it with its log-density.
    pub fn sample_from_mean<R: Rng + ?Sized>(&self, mean: &[f64], rng: &mut R) -> (Vec<f64>, f64) {
        let action: Vec<f64> = self
            .intervals
            .iter()
            .zip(mean)
            .zip(&self.log_std)
            .map(|((iv, &m), &ls)| {
                let z: f64 = rng.sample(StandardNormal);
                iv.squash(m + ls.exp() * z)
            })
            .collect();
        let log_prob = self.log_prob_from_mean(mean, &action);
        (action, log_prob)
    }

    pub fn sample<R: Rng + ?Sized>(&self, s: &[f64], rng: &mut R) -> Result<(Vec<f64>, f64)> {
        let mean = self.mean(s)?;
        Ok(self.sample_from_mean(&mean, rng))
    }

    /// Log-density of `action` when the unsquashed mean is `mean`.
    pub fn log_prob_from_mean(&self, mean: &[f64], action: &[f64]) -> f64 {
        let mut total = 0.0;
        for (((iv, &m), &ls), &a) in self.intervals.iter().zip(mean).zip(&self.log_std).zip(action) {
            let t = iv.to_unit(a);
            let u = t.atanh();
            let std = ls.exp();
            let z = (u - m) / std;
            total += -0.5 * z * z - ls - HALF_LOG_2PI - (0.5 * iv.width() * (1.0 - t * t)).ln();
        }
        total
    }

    pub fn log_prob(&self, s: &[f64], action: &[f64]) -> Result<f64> {
        if action.len() != self.action_dim() {
            return Err(Error::Dimension {
                context: "GaussianPolicy action",
                expected: self.action_dim(),
                got: action.len(),
            });
        }
        let mean = self.mean(s)?;
        Ok(self.log_prob_from_mean(&mean, action))
    }

    /// Batched log-densities with the intermediates needed for their gradient.
    pub fn log_prob_batch(
        &self,
        states: Array2<f64>,
        actions: ArrayView2<'_, f64>,
    ) -> Result<(Vec<f64>, LogProbCache)> {
        if actions.ncols() != self.action_dim() || actions.nrows() != states.nrows() {
            return Err(Error::Dimension {
                context: "GaussianPolicy::log_prob_batch actions",
                expected: self.action_dim(),
                got: actions.ncols(),
            });
        }
        let net_cache = self.mean_net.forward_cached(states)?;
        let mean = net_cache.output();
        let mut pre_squash = Array2::zeros(actions.dim());
        let mut log_probs = vec![0.0; actions.nrows()];
        for (i, lp) in log_probs.iter_mut().enumerate() {
            for (j, iv) in self.intervals.iter().enumerate() {
                let t = iv.to_unit(actions[[i, j]]);
                let u = t.atanh();
                pre_squash[[i, j]] = u;
                let ls = self.log_std[j];
                let z = (u - mean[[i, j]]) / ls.exp();
                *lp += -0.5 * z * z - ls - HALF_LOG_2PI - (0.5 * iv.width() * (1.0 - t * t)).ln();
            }
        }
        Ok((
            log_probs,
            LogProbCache {
                net_cache,
                pre_squash,
            },
        ))
    }

    /// Accumulates `sum_i weights[i] * d log_prob_i / d params` into `grad`
    /// (layout of [`Self::flat_params`]).
    pub fn backward_log_prob(&self, cache: &LogProbCache, weights: &[f64], grad: &mut [f64]) -> Result<()> {
        if grad.len() != self.num_params() {
            return Err(Error::Dimension {
                context: "GaussianPolicy gradient buffer",
                expected: self.num_params(),
                got: grad.len(),
            });
        }
        let mean = cache.net_cache.output();
        let mut upstream = Array2::zeros(mean.dim());
        let (net_grad, std_grad) = grad.split_at_mut(self.mean_net.num_params());
        for (i, &w) in weights.iter().enumerate() {
            for j in 0..self.action_dim() {
                let inv_var = (-2.0 * self.log_std[j]).exp();
                let diff = cache.pre_squash[[i, j]] - mean[[i, j]];
                upstream[[i, j]] = w * diff * inv_var;
                std_grad[j] += w * (diff * diff * inv_var - 1.0);
            }
        }
        self.mean_net.backward_batch(&cache.net_cache, upstream.view(), net_grad)
    }
}

/// Heading interval `[0, 2pi)` used by the ship task.
pub fn full_turn() -> ActionInterval {
    ActionInterval { lo: 0.0, hi: 2.0 * PI }
}
