use epo::env::{ConstraintFamily, EnvConfig, Environment, IndexBox, Orientation, StepResult};
use epo::exchange::WorkingSet;
use epo::nn::{AdamConfig, AdamState, ActionInterval, GaussianPolicy, Init, Mlp};
use epo::ppo::{
    dual_update, fit_critics, policy_update, regress, solve_subproblem, surrogate, AdvantageScaling, Critics, Learner,
    PpoConfig, UpdateBatch,
};
use epo::rollout::{self, ActionMode};
use epo::search::IndexPoint;
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn tiny_policy(r: &mut ChaCha8Rng) -> GaussianPolicy {
    let intervals = vec![ActionInterval::new(-1.0, 1.0).unwrap(), ActionInterval::new(0.0, 3.0).unwrap()];
    let net = Mlp::new(&[2, 6, 2], Init::CRITIC, r).unwrap();
    GaussianPolicy::from_parts(net, vec![-0.3, -0.7], intervals).unwrap()
}

/// A batch sampled from `policy` whose behavior log-probabilities are offset
/// by at most `max_shift`, so every ratio stays in `exp(+-max_shift)`.
fn batch(policy: &GaussianPolicy, n: usize, constraints: usize, max_shift: f64, r: &mut ChaCha8Rng) -> UpdateBatch {
    let mut states = Array2::zeros((n, 2));
    let mut actions = Array2::zeros((n, 2));
    let mut old = Vec::new();
    for i in 0..n {
        let s = [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)];
        let (a, lp) = policy.sample(&s, r).unwrap();
        states.row_mut(i).assign(&ndarray::arr1(&s));
        actions.row_mut(i).assign(&ndarray::arr1(&a));
        old.push(if max_shift > 0.0 { lp + r.random_range(-max_shift..max_shift) } else { lp });
    }
    UpdateBatch {
        states,
        actions,
        old_log_probs: old,
        adv_reward: (0..n).map(|_| r.random_range(-2.0..2.0)).collect(),
        adv_cost: Array2::from_shape_fn((n, constraints), |_| r.random_range(-1.0..1.0)),
    }
}

#[test]
fn surrogate_gradient_matches_finite_differences() {
    let mut r = rng(11);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let policy = tiny_policy(&mut r);
        // Ratios within exp(+-0.2) stay clear of the 0.7 and 1.3 clip kinks.
        let b = batch(&policy, 8, 2, 0.2, &mut r);
        let v = [r.random_range(0.0..2.0), r.random_range(0.0..2.0)];
        let mut grad = vec![0.0; policy.num_params()];
        surrogate(&policy, &b, &v, 0.3, Some(&mut grad)).unwrap();
        let theta = policy.flat_params().to_vec();
        let h = 1e-6;
        let (mut num, mut den) = (0.0f64, 0.0f64);
        for k in 0..theta.len() {
            let eval = |delta: f64| {
                let mut p = policy.clone();
                let mut t = theta.clone();
                t[k] += delta;
                p.set_flat_params(&t).unwrap();
                surrogate(&p, &b, &v, 0.3, None).unwrap().loss
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            num = num.max((fd - grad[k]).abs());
            den = den.max(fd.abs());
        }
        worst = worst.max(num / den.max(1e-8));
    }
    assert!(worst <= 1e-4, "worst relative error {worst:e}");
}

#[test]
fn zero_advantages_give_zero_gradient() {
    let mut r = rng(12);
    let policy = tiny_policy(&mut r);
    let mut b = batch(&policy, 16, 2, 0.2, &mut r);
    b.adv_reward.iter_mut().for_each(|a| *a = 0.0);
    b.adv_cost.fill(0.0);
    let mut grad = vec![0.0; policy.num_params()];
    let stats = surrogate(&policy, &b, &[1.0, 3.0], 0.3, Some(&mut grad)).unwrap();
    assert_eq!(stats.loss, 0.0);
    assert!(grad.iter().all(|g| *g == 0.0));
}

#[test]
fn clipped_ratio_blocks_the_reward_gradient() {
    let mut r = rng(13);
    let policy = tiny_policy(&mut r);
    let mut b = batch(&policy, 4, 0, 0.0, &mut r);
    for i in 0..4 {
        let s = b.states.row(i).to_vec();
        let a = b.actions.row(i).to_vec();
        b.old_log_probs[i] = policy.log_prob(&s, &a).unwrap() - 2f64.ln();
    }
    // Ratio 2 with a positive advantage: the clipped branch is active.
    b.adv_reward = vec![1.0; 4];
    let mut grad = vec![0.0; policy.num_params()];
    let stats = surrogate(&policy, &b, &[], 0.3, Some(&mut grad)).unwrap();
    assert_eq!(stats.clip_fraction, 1.0);
    assert!(grad.iter().all(|g| *g == 0.0));
    // With a negative advantage the unclipped term is the minimum.
    b.adv_reward = vec![-1.0; 4];
    let mut grad = vec![0.0; policy.num_params()];
    surrogate(&policy, &b, &[], 0.3, Some(&mut grad)).unwrap();
    assert!(grad.iter().any(|g| *g != 0.0));
}

#[test]
fn zero_multipliers_reproduce_plain_ppo() {
    let mut r = rng(14);
    let policy = tiny_policy(&mut r);
    let b = batch(&policy, 40, 3, 0.2, &mut r);
    let plain_batch = UpdateBatch {
        adv_cost: Array2::zeros((40, 0)),
        ..b.clone()
    };
    let mut cfg = PpoConfig::for_eta(0.01);
    cfg.minibatch_size = 16;
    let run = |batch: &UpdateBatch, v: &[f64]| {
        let mut p = policy.clone();
        let mut opt = AdamState::new(p.num_params(), AdamConfig::with_lr(1e-3));
        policy_update(&mut p, &mut opt, batch, v, &cfg, &mut rng(99)).unwrap();
        p
    };
    let with_penalty = run(&b, &[0.0, 0.0, 0.0]);
    let plain = run(&plain_batch, &[]);
    assert_eq!(with_penalty.flat_params().to_vec(), plain.flat_params().to_vec());
}

#[test]
fn update_batch_shape_errors() {
    let mut r = rng(15);
    let policy = tiny_policy(&mut r);
    let b = batch(&policy, 8, 2, 0.2, &mut r);
    assert!(surrogate(&policy, &b, &[1.0], 0.3, None).is_err());
    let mut short = b.clone();
    short.adv_reward.pop();
    assert!(surrogate(&policy, &short, &[1.0, 1.0], 0.3, None).is_err());
}

#[test]
fn dual_update_examples() {
    assert_eq!(dual_update(0.0, -1.0, 1e-4), 0.0);
    assert_eq!(dual_update(0.05, 0.0, 1e-4), 0.05);
    assert!((dual_update(1.0, 0.5, 1e-4) - 1.00005).abs() < 1e-15);
}

proptest! {
    #[test]
    fn dual_update_is_nonnegative(v in 0.0f64..10.0, res in -1e3f64..1e3, lr in 1e-6f64..1.0) {
        let out = dual_update(v, res, lr);
        prop_assert!(out >= 0.0);
        if res >= 0.0 {
            prop_assert!(out >= v);
        }
    }
}

#[test]
fn critic_regression_fits_a_smooth_target() {
    let mut r = rng(16);
    let n = 256;
    let x: Array2<f64> = Array2::from_shape_fn((n, 2), |_| r.random_range(-1.0..1.0));
    let targets: Vec<f64> = x.rows().into_iter().map(|s| (2.0 * s[0]).sin() * 0.5 + s[1] * s[1] * 0.3).collect();
    let mut net = Mlp::new(&[2, 32, 32, 1], Init::CRITIC, &mut r).unwrap();
    let mut opt = AdamState::new(net.num_params(), AdamConfig::with_lr(3e-3));
    // 125 epochs of four minibatches: 500 Adam steps.
    let loss = regress(&mut net, &mut opt, x.view(), &targets, 125, None, 64, &mut r).unwrap();
    assert_eq!(opt.steps(), 500);
    assert!(loss < 1e-3, "loss {loss}");
}

/// Two-step bandit: from `(0, 0)` the first action moves the state to
/// `(a, 1)` and earns `-(a - 1)^2`; the second step ends the episode. The cost
/// `c(s) = s_0` caps the mean action at `bound`.
struct Bandit {
    config: EnvConfig,
    region: IndexBox,
    family: CapOnAction,
}

struct CapOnAction {
    index_box: IndexBox,
    bound: f64,
}

impl ConstraintFamily for CapOnAction {
    fn index_box(&self) -> &IndexBox {
        &self.index_box
    }

    fn orientation(&self) -> Orientation {
        Orientation::UpperBound
    }

    fn gamma_c(&self) -> f64 {
        1.0
    }

    fn cost(&self, _y: &[f64], s: &[f64]) -> f64 {
        s[0]
    }

    fn add_cost_grad_y(&self, _y: &[f64], _s: &[f64], _scale: f64, _out: &mut [f64]) {}

    fn bound(&self, _y: &[f64]) -> f64 {
        self.bound
    }

    fn bound_grad_y(&self, _y: &[f64]) -> Vec<f64> {
        vec![0.0]
    }
}

impl Bandit {
    fn new(bound: f64) -> Self {
        Bandit {
            config: EnvConfig {
                step_length: 1.0,
                max_steps: 2,
                reach_radius: 1.0,
                gamma_r: 1.0,
            },
            region: IndexBox::new(vec![-1.0, 0.0], vec![1.0, 2.0]).unwrap(),
            family: CapOnAction {
                index_box: IndexBox::new(vec![0.0], vec![1.0]).unwrap(),
                bound,
            },
        }
    }
}

impl Environment for Bandit {
    fn name(&self) -> &'static str {
        "bandit"
    }

    fn state_dim(&self) -> usize {
        2
    }

    fn action_intervals(&self) -> Vec<ActionInterval> {
        vec![ActionInterval::new(-1.0, 1.0).unwrap()]
    }

    fn region(&self) -> &IndexBox {
        &self.region
    }

    fn config(&self) -> &EnvConfig {
        &self.config
    }

    fn family(&self) -> &dyn ConstraintFamily {
        &self.family
    }

    fn reset(&self, _rng: &mut dyn RngCore) -> Vec<f64> {
        vec![0.0, 0.0]
    }

    fn step(&self, s: &[f64], a: &[f64]) -> epo::Result<StepResult> {
        Ok(if s[1] == 0.0 {
            StepResult {
                state: vec![a[0], 1.0],
                reward: -(a[0] - 1.0).powi(2),
                terminal: false,
            }
        } else {
            StepResult {
                state: vec![s[0], 2.0],
                reward: 0.0,
                terminal: true,
            }
        })
    }
}

fn bandit_setup(bound: f64, seed: u64) -> (Bandit, GaussianPolicy, Learner, ChaCha8Rng) {
    let env = Bandit::new(bound);
    let mut r = rng(seed);
    let policy = GaussianPolicy::new(2, &[16], env.action_intervals(), -0.5, &mut r).unwrap();
    let learner = Learner::new(&policy, &env, &[32], 3e-3, &mut r).unwrap();
    (env, policy, learner, r)
}

fn one_point(v: f64) -> WorkingSet {
    WorkingSet::from_points(&[IndexPoint::new(0, vec![0.5])], v).unwrap()
}

#[test]
fn bandit_multiplier_approaches_kkt_value() {
    // Deterministic limit: a* = 0.2 and stationarity 2 (1 - a*) = v gives v = 1.6.
    let (env, policy, mut learner, mut r) = bandit_setup(0.2, 17);
    let mut cfg = PpoConfig::for_eta(1e-9);
    cfg.lr_net = 3e-3;
    cfg.lr_mult = 0.2;
    cfg.inner_iters = 200;
    cfg.episodes = 256;
    cfg.minibatch_size = 128;
    cfg.advantage_scaling = AdvantageScaling::Shared;
    // Never stop early: the multiplier has to settle.
    cfg.sub_tolerance = f64::NEG_INFINITY;
    let (_, v, report) = solve_subproblem(&policy, &mut learner, &one_point(1.0), &env, None, &cfg, 1, &mut r).unwrap();
    let tail: Vec<f64> = report.multiplier_trajectory.iter().rev().take(100).map(|m| m[0]).collect();
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    assert!((mean - 1.6).abs() <= 0.2 * 1.6, "mean multiplier {mean}, final {v:?}");
}

#[test]
fn far_inactive_multiplier_decays_and_is_deleted() {
    let (env, policy, mut learner, mut r) = bandit_setup(1e6, 18);
    let mut cfg = PpoConfig::for_eta(0.01);
    cfg.inner_iters = 3;
    cfg.episodes = 32;
    let mut ws = one_point(0.05);
    let (_, v, _) = solve_subproblem(&policy, &mut learner, &ws, &env, None, &cfg, 1, &mut r).unwrap();
    assert_eq!(v, vec![0.0]);
    ws.set_multipliers(&v).unwrap();
    assert_eq!(ws.delete_inactive(1e-3).len(), 1);
    assert!(ws.is_empty());
}

#[test]
fn frozen_policy_pressure_is_monotone() {
    let (env, policy, _, mut r) = bandit_setup(-0.5, 19);
    let batch = rollout::collect(&policy, &env, 64, ActionMode::Sample, 0, &mut r).unwrap();
    let residual = rollout::violation(&batch, env.family(), &[0.5]);
    assert!(residual > 0.0);
    let mut v = 0.0;
    for _ in 0..50 {
        let next = dual_update(v, residual, 1e-4);
        assert!(next > v);
        v = next;
    }
}

#[test]
fn empty_working_set_leaves_constraint_critic_alone() {
    let (env, policy, mut learner, mut r) = bandit_setup(0.2, 20);
    let batch = rollout::collect(&policy, &env, 16, ActionMode::Sample, 0, &mut r).unwrap();
    let before: Critics = learner.critics.clone();
    let cfg = PpoConfig::for_eta(0.01);
    let (update, losses) = fit_critics(&mut learner.critics, &batch, &[], env.family(), 1.0, &cfg, &mut r).unwrap();
    assert_eq!(update.adv_cost.ncols(), 0);
    assert_eq!(losses.constraint, 0.0);
    assert_eq!(learner.critics.constraint.params().to_vec(), before.constraint.params().to_vec());
    assert_ne!(learner.critics.reward.params().to_vec(), before.reward.params().to_vec());
}

#[test]
fn subproblem_is_reproducible() {
    let run = || {
        let (env, policy, mut learner, mut r) = bandit_setup(0.2, 21);
        let mut cfg = PpoConfig::for_eta(0.01);
        cfg.inner_iters = 3;
        cfg.episodes = 16;
        let (p, v, _) = solve_subproblem(&policy, &mut learner, &one_point(0.5), &env, None, &cfg, 1, &mut r).unwrap();
        (p.flat_params().to_vec(), v)
    };
    assert_eq!(run(), run());
}
