use ndarray::{s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{AdamConfig, AdamState, Init, Mlp};

/// Reward value network `V(s)` and a single index-conditioned cost value
/// network `V_c(s, y)` shared by every working-set entry.
#[derive(Clone, Debug)]
pub struct Critics {
    pub reward: Mlp,
    pub constraint: Mlp,
    reward_opt: AdamState,
    constraint_opt: AdamState,
}

impl Critics {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        index_dim: usize,
        hidden: &[usize],
        lr: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let sizes = |input: usize| {
            let mut v = vec![input];
            v.extend_from_slice(hidden);
            v.push(1);
            v
        };
        let reward = Mlp::new(&sizes(state_dim), Init::CRITIC, rng)?;
        let constraint = Mlp::new(&sizes(state_dim + index_dim), Init::CRITIC, rng)?;
        Ok(Critics {
            reward_opt: AdamState::new(reward.num_params(), AdamConfig::with_lr(lr)),
            constraint_opt: AdamState::new(constraint.num_params(), AdamConfig::with_lr(lr)),
            reward,
            constraint,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.reward.input_dim()
    }

    pub fn index_dim(&self) -> usize {
        self.constraint.input_dim() - self.reward.input_dim()
    }

    pub fn reward_values(&self, states: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        Ok(self.reward.forward_batch(states)?.column(0).to_vec())
    }

    /// `V_c(s, y)` for every row of `states`.
    pub fn constraint_values(&self, states: ArrayView2<'_, f64>, y: &[f64]) -> Result<Vec<f64>> {
        let input = constraint_input(states, &[y.to_vec()]);
        Ok(self.constraint.forward_batch(input.view())?.column(0).to_vec())
    }

    pub fn fit_reward<R: Rng + ?Sized>(
        &mut self,
        states: ArrayView2<'_, f64>,
        targets: &[f64],
        epochs: usize,
        minibatch: usize,
        rng: &mut R,
    ) -> Result<f64> {
        regress(&mut self.reward, &mut self.reward_opt, states, targets, epochs, None, minibatch, rng)
    }

    /// Regression of `V_c(s, y_j)` on `targets[j]` for every listed index.
    /// Each epoch visits as many random `(s, y_j)` pairs as there are
    /// states, so the cost does not grow with the number of indices.
    pub fn fit_constraint<R: Rng + ?Sized>(
        &mut self,
        states: ArrayView2<'_, f64>,
        points: &[Vec<f64>],
        targets: &[Vec<f64>],
        epochs: usize,
        minibatch: usize,
        rng: &mut R,
    ) -> Result<f64> {
        if points.is_empty() {
            return Ok(0.0);
        }
        let input = constraint_input(states, points);
        let flat: Vec<f64> = targets.iter().flatten().copied().collect();
        let per_epoch = states.nrows();
        regress(&mut self.constraint, &mut self.constraint_opt, input.view(), &flat, epochs, Some(per_epoch), minibatch, rng)
    }
}

/// Rows `[s, y_j]`, all states for `y_0` first, then `y_1`, and so on.
pub fn constraint_input(states: ArrayView2<'_, f64>, points: &[Vec<f64>]) -> Array2<f64> {
    let (n, d) = states.dim();
    let m = points.first().map_or(0, Vec::len);
    let mut out = Array2::zeros((n * points.len(), d + m));
    for (j, y) in points.iter().enumerate() {
        let mut block = out.slice_mut(s![j * n..(j + 1) * n, ..]);
        block.slice_mut(s![.., ..d]).assign(&states);
        for mut row in block.axis_iter_mut(Axis(0)) {
            for (k, &v) in y.iter().enumerate() {
                row[d + k] = v;
            }
        }
    }
    out
}

/// Minibatch Adam on `1/2 mean (net(x) - target)^2`; returns the mean loss
/// over the last epoch. With `per_epoch` set, each epoch uses only that many
/// rows of a fresh shuffle.
#[allow(clippy::too_many_arguments)]
pub fn regress<R: Rng + ?Sized>(
    net: &mut Mlp,
    opt: &mut AdamState,
    inputs: ArrayView2<'_, f64>,
    targets: &[f64],
    epochs: usize,
    per_epoch: Option<usize>,
    minibatch: usize,
    rng: &mut R,
) -> Result<f64> {
    let n = inputs.nrows();
    if targets.len() != n {
        return Err(Error::Dimension {
            context: "regression targets",
            expected: n,
            got: targets.len(),
        });
    }
    if n == 0 {
        return Ok(0.0);
    }
    let mb = minibatch.clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut params = net.params().to_vec();
    let mut grad = vec![0.0; params.len()];
    let used = per_epoch.map_or(n, |k| k.clamp(1, n));
    let mut last = 0.0;
    for _ in 0..epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for rows in order[..used].chunks(mb) {
            let x = inputs.select(Axis(0), rows);
            let cache = net.forward_cached(x)?;
            let out = cache.output();
            let inv = 1.0 / rows.len() as f64;
            let mut upstream = Array2::zeros((rows.len(), 1));
            for (k, &i) in rows.iter().enumerate() {
                let err = out[[k, 0]] - targets[i];
                upstream[[k, 0]] = err * inv;
                total += 0.5 * err * err;
            }
            grad.iter_mut().for_each(|g| *g = 0.0);
            net.backward_batch(&cache, upstream.view(), &mut grad)?;
            opt.step(&mut params, &grad)?;
            net.set_params(&params)?;
        }
        last = total / used as f64;
    }
    Ok(last)
}
