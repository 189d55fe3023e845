use epo::env::{AgriEnv, Benchmark, Environment, Orientation, ShipEnv};
use epo::nn::GaussianPolicy;
use epo::rollout::{
    self, estimate_constraint, estimate_constraint_grid, estimate_objective, gae, gae_trajectory,
    objective_standard_error, returns_to_go, violation, violation_grad_y, ActionMode, EvalBatch, Trajectory,
};
use epo::search::make_grid;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ship_policy(seed: u64) -> GaussianPolicy {
    let env = ShipEnv::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    GaussianPolicy::new(2, &[16, 16], env.action_intervals(), -0.5, &mut rng).unwrap()
}

fn reward_only(rewards: &[f64]) -> Trajectory {
    let mut t = Trajectory::from_states(2, &vec![vec![0.0, 0.0]; rewards.len()]);
    t.rewards = rewards.to_vec();
    t
}

#[test]
fn resets_are_the_fixed_start_states() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut other = ChaCha8Rng::seed_from_u64(99);
    let ship = ShipEnv::default();
    let agri = AgriEnv::default();
    assert_eq!(ship.reset(&mut rng), vec![0.0, 0.0]);
    assert_eq!(agri.reset(&mut rng), vec![0.0, 1.0]);
    assert_eq!(ship.reset(&mut rng), ship.reset(&mut other));
}

#[test]
fn ship_step_examples() {
    let env = ShipEnv::default();
    let near = env.step(&[1.0 - 1e-3, 1.0 - 1e-3], &[0.1]).unwrap();
    assert!(near.terminal);
    let shaping = -0.1 * ((2.0f64 * 1e-6).sqrt() + 1.0);
    assert!((near.reward - (shaping + 5.0)).abs() < 1e-12, "{}", near.reward);
    let at_goal = env.step(&[1.0, 1.0], &[3.0]).unwrap();
    assert!((at_goal.reward - (-0.1 + 5.0)).abs() < 1e-15);
    let far = env.step(&[0.0, 0.0], &[std::f64::consts::FRAC_PI_4]).unwrap();
    assert!(!far.terminal);
    assert!((far.reward - (-0.1 * (2f64.sqrt() + 1.0))).abs() < 1e-15);
    assert!(env.step(&[0.0, 0.0], &[7.0]).is_err());
}

#[test]
fn agri_step_example() {
    let env = AgriEnv::default();
    let out = env.step(&[0.0, 1.0], &[0.0]).unwrap();
    assert_eq!(out.state, vec![0.5, 1.0]);
    assert!((out.reward - 0.05).abs() < 1e-15);
    assert!(!out.terminal);
    let last = env.step(&[19.8, 1.0], &[0.0]).unwrap();
    assert!(last.terminal);
    assert_eq!(last.state[0], 20.0);
}

#[test]
fn cost_and_bound_closed_forms() {
    let ship = ShipEnv::default();
    let agri = AgriEnv::default();
    let (sf, af) = (ship.family(), agri.family());
    assert_eq!(sf.cost(&[0.3, 0.4], &[0.3, 0.4]), 1.0);
    assert_eq!(af.cost(&[3.0, 1.0], &[3.0, 1.0]), 1.0);
    let expected = (-15.0 * 2f64.sqrt()).exp();
    assert!((sf.cost(&[0.0, 0.0], &[1.0, 1.0]) - expected).abs() < 1e-22);
    assert!((expected - 6.2e-10).abs() < 0.1e-10);

    assert!((sf.bound(&[0.5, 0.5]) - 0.02).abs() < 1e-15);
    let corner = 0.015 + 0.005 * (20.0 * 0.5f64.sqrt()).exp();
    assert!((sf.bound(&[0.0, 0.0]) - corner).abs() < 1e-9 * corner);
    assert!((af.bound(&[5.0, 1.5]) - 2.8).abs() < 1e-12);
    assert_eq!(sf.orientation(), Orientation::UpperBound);
    assert_eq!(af.orientation(), Orientation::LowerBound);
}

#[test]
fn dense_spraying_sweep_satisfies_every_coverage_constraint() {
    let env = AgriEnv::default();
    let family = env.family();
    let mut states = Vec::new();
    for row in [0.25, 0.75, 1.25, 1.75] {
        let mut x = 0.0;
        while x <= 20.0 {
            states.push(vec![x, row]);
            x += 0.5;
        }
    }
    let batch = EvalBatch::new(vec![Trajectory::from_states(2, &states)], 0);
    let grid = make_grid(family.index_box(), 64).unwrap();
    for y in &grid {
        assert!(violation(&batch, family, y) <= 0.0, "violated at {y:?}");
    }
}

#[test]
fn cost_and_bound_are_continuous() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for env in [Benchmark::by_name("ship").unwrap(), Benchmark::by_name("agri").unwrap()] {
        let f = env.family();
        let bx = f.index_box();
        for _ in 0..200 {
            let y: Vec<f64> = (0..2).map(|i| rng.random_range(bx.lo()[i]..bx.hi()[i])).collect();
            let s: Vec<f64> = (0..2).map(|i| rng.random_range(bx.lo()[i]..bx.hi()[i])).collect();
            let y2: Vec<f64> = y.iter().map(|v| v + 1e-9).collect();
            assert!((f.cost(&y, &s) - f.cost(&y2, &s)).abs() < 1e-6);
            assert!((f.bound(&y) - f.bound(&y2)).abs() < 1e-6 * f.bound(&y).abs().max(1.0));
        }
    }
}

#[test]
fn collect_is_reproducible_and_bounded() {
    let env = ShipEnv::default();
    let policy = ship_policy(5);
    let a = rollout::collect(&policy, &env, 64, ActionMode::Sample, 7, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
    let b = rollout::collect(&policy, &env, 64, ActionMode::Sample, 7, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 64);
    assert!(a.trajectories.iter().all(|t| t.len() <= env.max_steps() && !t.is_empty()));
    let greedy = rollout::collect(&policy, &env, 8, ActionMode::Greedy, 0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert!(greedy.trajectories.iter().all(|t| t.states == greedy.trajectories[0].states));
}

#[test]
fn objective_estimator_examples() {
    let batch = EvalBatch::new(vec![reward_only(&[1.0, 1.0, 1.0])], 0);
    assert!((estimate_objective(&batch, 0.95) - 2.8525).abs() < 1e-12);
    let batch = EvalBatch::new(vec![reward_only(&[0.5, -2.0, 4.0])], 0);
    assert_eq!(estimate_objective(&batch, 1.0), 2.5);
    let batch = EvalBatch::new(vec![reward_only(&[1.0, 2.0]), reward_only(&[-4.0])], 0);
    assert_eq!(estimate_objective(&batch, 1.0), -0.5);
}

/// Independent re-implementation of the ship cost.
fn ship_cost(y: &[f64], s: &[f64]) -> f64 {
    let dx = y[0] - s[0];
    let dy = y[1] - s[1];
    (-15.0 * (dx * dx + dy * dy).sqrt()).exp()
}

#[test]
fn constraint_estimate_matches_brute_force_state_sum() {
    let env = ShipEnv::default();
    let policy = ship_policy(13);
    let batch = rollout::collect(&policy, &env, 4, ActionMode::Greedy, 0, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let grid = make_grid(env.family().index_box(), 16).unwrap();
    for y in &grid {
        let mut total = 0.0;
        for traj in &batch.trajectories {
            for t in 0..traj.len() {
                total += ship_cost(y, &traj.states[2 * t..2 * t + 2]);
            }
        }
        let brute = total / batch.len() as f64;
        let est = estimate_constraint(&batch, env.family(), y);
        assert!((est - brute).abs() <= 1e-12 * brute.abs().max(1.0), "{est} vs {brute}");
    }
}

#[test]
fn pinned_trajectory_and_identical_copies() {
    let env = ShipEnv::default();
    let y = vec![0.25, 0.75];
    let pinned = Trajectory::from_states(2, &vec![y.clone(); 17]);
    let single = EvalBatch::new(vec![pinned.clone()], 0);
    assert_eq!(estimate_constraint(&single, env.family(), &y), 17.0);
    let copies = EvalBatch::new(vec![pinned; 5], 0);
    assert_eq!(estimate_constraint(&copies, env.family(), &y), 17.0);
}

#[test]
fn grid_estimator_equals_scalar_estimator_exactly() {
    for env in [Benchmark::by_name("ship").unwrap(), Benchmark::by_name("agri").unwrap()] {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let policy = GaussianPolicy::new(2, &[16], env.action_intervals(), -0.5, &mut rng).unwrap();
        let batch = rollout::collect(&policy, &env, 16, ActionMode::Sample, 0, &mut rng).unwrap();
        let points = make_grid(env.family().index_box(), 32).unwrap();
        let grid = estimate_constraint_grid(&batch, env.family(), &points);
        for (p, g) in points.iter().zip(&grid) {
            assert_eq!(*g, estimate_constraint(&batch, env.family(), p));
        }
        let one = estimate_constraint_grid(&batch, env.family(), &points[5..6]);
        assert_eq!(one[0], grid[5]);
        let mut reversed = points.clone();
        reversed.reverse();
        let rev = estimate_constraint_grid(&batch, env.family(), &reversed);
        assert!(rev.iter().rev().eq(grid.iter()));
    }
}

#[test]
fn undiscounted_constraint_is_additive_over_segments() {
    let env = ShipEnv::default();
    let a: Vec<Vec<f64>> = (0..10).map(|k| vec![0.05 * k as f64, 0.1]).collect();
    let b: Vec<Vec<f64>> = (0..7).map(|k| vec![0.9, 0.1 * k as f64]).collect();
    let joined: Vec<Vec<f64>> = a.iter().chain(&b).cloned().collect();
    let y = [0.4, 0.3];
    let est = |s: &[Vec<f64>]| estimate_constraint(&EvalBatch::new(vec![Trajectory::from_states(2, s)], 0), env.family(), &y);
    assert!((est(&joined) - (est(&a) + est(&b))).abs() < 1e-14);
}

#[test]
fn violation_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    for env in [Benchmark::by_name("ship").unwrap(), Benchmark::by_name("agri").unwrap()] {
        let policy = GaussianPolicy::new(2, &[16], env.action_intervals(), -0.5, &mut rng).unwrap();
        let batch = rollout::collect(&policy, &env, 8, ActionMode::Sample, 0, &mut rng).unwrap();
        let f = env.family();
        let bx = f.index_box();
        for _ in 0..50 {
            let y: Vec<f64> = (0..2).map(|i| rng.random_range(bx.lo()[i]..bx.hi()[i])).collect();
            let g = violation_grad_y(&batch, f, &y);
            let h = 1e-6 * bx.diameter();
            let mut num = vec![0.0; 2];
            for i in 0..2 {
                let mut up = y.clone();
                let mut down = y.clone();
                up[i] += h;
                down[i] -= h;
                num[i] = (violation(&batch, f, &up) - violation(&batch, f, &down)) / (2.0 * h);
            }
            let diff = ((g[0] - num[0]).powi(2) + (g[1] - num[1]).powi(2)).sqrt();
            let scale = (num[0].powi(2) + num[1].powi(2)).sqrt().max(1e-8);
            assert!(diff / scale <= 1e-6, "{} at {y:?}: {g:?} vs {num:?}", env.name());
        }
    }
}

#[test]
fn symmetric_agri_trajectory_has_no_horizontal_gradient() {
    let env = AgriEnv::default();
    let states: Vec<Vec<f64>> = [-1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5].iter().map(|dx| vec![8.0 + dx, 1.2]).collect();
    let batch = EvalBatch::new(vec![Trajectory::from_states(2, &states)], 0);
    // With a lower bound, grad g = grad d - grad J_c; the J_c part vanishes
    // horizontally, leaving the bound's x-derivative.
    let g = violation_grad_y(&batch, env.family(), &[8.0, 0.3]);
    let bound = env.family().bound_grad_y(&[8.0, 0.3]);
    assert!((g[0] - bound[0]).abs() < 1e-15, "{g:?} vs {bound:?}");
}

#[test]
fn gae_identities() {
    let rewards = [0.3, -1.0, 2.0, 0.5];
    let values = [0.1, 0.7, -0.2, 0.4];
    let gamma = 0.9;
    let adv = gae(&rewards, &values, 0.0, gamma, 1.0);
    let ret = returns_to_go(&rewards, gamma);
    for t in 0..4 {
        assert!((adv[t] - (ret[t] - values[t])).abs() < 1e-14);
    }
    assert!(gae(&[0.0; 4], &[0.0; 4], 0.0, gamma, 0.95).iter().all(|&a| a == 0.0));
    let td = gae(&rewards, &values, 1.5, gamma, 0.0);
    let next = [0.7, -0.2, 0.4, 1.5];
    for t in 0..4 {
        assert!((td[t] - (rewards[t] + gamma * next[t] - values[t])).abs() < 1e-14);
    }
    let mut traj = reward_only(&rewards);
    traj.final_state = vec![9.0, 9.0];
    traj.terminal = false;
    let truncated = gae_trajectory(&traj, |s| if s[0] == 9.0 { 2.0 } else { 0.0 }, 1.0, 1.0);
    let expected: f64 = rewards.iter().sum::<f64>() + 2.0;
    assert!((truncated[0] - expected).abs() < 1e-14);
    traj.terminal = true;
    let terminal = gae_trajectory(&traj, |s| if s[0] == 9.0 { 2.0 } else { 0.0 }, 1.0, 1.0);
    assert!((terminal[0] - rewards.iter().sum::<f64>()).abs() < 1e-14);
}

#[test]
fn objective_standard_error_shrinks_like_inverse_sqrt_m() {
    let env = ShipEnv::default();
    let policy = ship_policy(23);
    let se = |m: usize| {
        let batch = rollout::collect(&policy, &env, m, ActionMode::Sample, 0, &mut ChaCha8Rng::seed_from_u64(m as u64)).unwrap();
        objective_standard_error(&batch, 1.0)
    };
    let (s16, s64, s256) = (se(16), se(64), se(256));
    for (ratio, name) in [(s16 / s64, "16/64"), (s64 / s256, "64/256")] {
        assert!(ratio > 1.0 && ratio < 4.0, "standard-error ratio {name} = {ratio}, expected about 2");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn states_never_leave_the_region(
        agri in any::<bool>(),
        x in 0.0f64..1.0,
        y in 0.0f64..1.0,
        unit in 0.0f64..1.0,
    ) {
        let env = if agri { Benchmark::by_name("agri").unwrap() } else { Benchmark::by_name("ship").unwrap() };
        let region = env.region().clone();
        let s = [region.lo()[0] + x * (region.hi()[0] - region.lo()[0]), region.lo()[1] + y * (region.hi()[1] - region.lo()[1])];
        let iv = env.action_intervals()[0];
        let a = iv.lo + unit * (iv.hi - iv.lo) * 0.999_999;
        let out = env.step(&s, &[a]).unwrap();
        prop_assert!(region.contains(&out.state));
        let again = env.step(&s, &[a]).unwrap();
        prop_assert_eq!(out, again);
    }

    #[test]
    fn violation_sign_follows_orientation(y0 in 0.0f64..20.0, y1 in 0.0f64..2.0, level in 0.0f64..10.0) {
        let env = AgriEnv::default();
        let f = env.family();
        let y = [y0, y1];
        // A batch whose constraint value is `level` at y: states pinned at y.
        let n = level.floor() as usize;
        let batch = EvalBatch::new(vec![Trajectory::from_states(2, &vec![y.to_vec(); n.max(1)])], 0);
        let j = estimate_constraint(&batch, f, &y);
        prop_assert!((violation(&batch, f, &y) - (f.bound(&y) - j)).abs() < 1e-12);
    }
}
