use super::EvalBatch;
use crate::env::ConstraintFamily;

/// Per-episode discounted reward sums.
pub fn discounted_returns(batch: &EvalBatch, gamma: f64) -> Vec<f64> {
    batch
        .trajectories
        .iter()
        .map(|traj| {
            let mut disc = 1.0;
            let mut total = 0.0;
            for &r in &traj.rewards {
                total += disc * r;
                disc *= gamma;
            }
            total
        })
        .collect()
}

/// Mean discounted return, terminal bonuses included.
pub fn estimate_objective(batch: &EvalBatch, gamma_r: f64) -> f64 {
    let returns = discounted_returns(batch, gamma_r);
    returns.iter().sum::<f64>() / returns.len() as f64
}

/// Standard error of [`estimate_objective`] across episodes.
pub fn objective_standard_error(batch: &EvalBatch, gamma_r: f64) -> f64 {
    let returns = discounted_returns(batch, gamma_r);
    let n = returns.len() as f64;
    if returns.len() < 2 {
        return 0.0;
    }
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1.0);
    (var / n).sqrt()
}

/// Monte Carlo estimate of `J_{c_y}`: the mean over episodes of
/// `sum_t gamma_c^t c_y(s_t)`.
pub fn estimate_constraint(batch: &EvalBatch, family: &dyn ConstraintFamily, y: &[f64]) -> f64 {
    let gamma = family.gamma_c();
    let mut total = 0.0;
    for traj in &batch.trajectories {
        let mut disc = 1.0;
        let mut episode = 0.0;
        for s in traj.state_iter() {
            episode += disc * family.cost(y, s);
            disc *= gamma;
        }
        total += episode;
    }
    total / batch.len() as f64
}

/// [`estimate_constraint`] for many index points in one sweep over the stored
/// states. Each point's sum is accumulated in the same order as the scalar
/// estimator, so the results agree bit for bit.
pub fn estimate_constraint_grid(batch: &EvalBatch, family: &dyn ConstraintFamily, points: &[Vec<f64>]) -> Vec<f64> {
    let gamma = family.gamma_c();
    let mut totals = vec![0.0; points.len()];
    let mut episode = vec![0.0; points.len()];
    for traj in &batch.trajectories {
        episode.iter_mut().for_each(|e| *e = 0.0);
        let mut disc = 1.0;
        for s in traj.state_iter() {
            for (acc, y) in episode.iter_mut().zip(points) {
                *acc += disc * family.cost(y, s);
            }
            disc *= gamma;
        }
        for (t, e) in totals.iter_mut().zip(&episode) {
            *t += e;
        }
    }
    let m = batch.len() as f64;
    totals.iter_mut().for_each(|t| *t /= m);
    totals
}

/// Normalized violation `sigma * (J_{c_y} - d_y)`; positive means violated.
pub fn violation(batch: &EvalBatch, family: &dyn ConstraintFamily, y: &[f64]) -> f64 {
    family.orientation().sign() * (estimate_constraint(batch, family, y) - family.bound(y))
}

/// Analytic `grad_y` of [`violation`].
pub fn violation_grad_y(batch: &EvalBatch, family: &dyn ConstraintFamily, y: &[f64]) -> Vec<f64> {
    let gamma = family.gamma_c();
    let mut grad = vec![0.0; y.len()];
    for traj in &batch.trajectories {
        let mut disc = 1.0;
        for s in traj.state_iter() {
            family.add_cost_grad_y(y, s, disc, &mut grad);
            disc *= gamma;
        }
    }
    let m = batch.len() as f64;
    let sign = family.orientation().sign();
    let bound_grad = family.bound_grad_y(y);
    grad.iter_mut().zip(bound_grad).for_each(|(g, b)| *g = sign * (*g / m - b));
    grad
}
