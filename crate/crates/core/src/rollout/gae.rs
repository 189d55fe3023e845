use super::Trajectory;

/// Generalized advantage estimates for one episode.
///
/// `values[t]` is the baseline at `s_t`; `bootstrap` is the value of the
/// state after the last step (zero for a terminal episode).
pub fn gae(rewards: &[f64], values: &[f64], bootstrap: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    assert_eq!(rewards.len(), values.len(), "one value per reward");
    let mut adv = vec![0.0; rewards.len()];
    let mut next_value = bootstrap;
    let mut running = 0.0;
    for t in (0..rewards.len()).rev() {
        let delta = rewards[t] + gamma * next_value - values[t];
        running = delta + gamma * lambda * running;
        adv[t] = running;
        next_value = values[t];
    }
    adv
}

/// GAE over a stored trajectory, evaluating `value_fn` on its states. The
/// final state is bootstrapped only when the episode was truncated.
pub fn gae_trajectory(traj: &Trajectory, value_fn: impl Fn(&[f64]) -> f64, gamma: f64, lambda: f64) -> Vec<f64> {
    let values: Vec<f64> = traj.state_iter().map(&value_fn).collect();
    let bootstrap = if traj.terminal { 0.0 } else { value_fn(&traj.final_state) };
    gae(&traj.rewards, &values, bootstrap, gamma, lambda)
}

/// `G_t = sum_{u >= t} gamma^{u - t} r_u`.
pub fn returns_to_go(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut running = 0.0;
    for t in (0..rewards.len()).rev() {
        running = rewards[t] + gamma * running;
        out[t] = running;
    }
    out
}
