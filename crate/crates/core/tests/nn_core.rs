use epo::nn::checkpoint::{decode_policy, encode_policy, load_policy_expecting, save_policy};
use epo::nn::{ActionInterval, AdamConfig, AdamState, GaussianPolicy, Init, Mlp};
use epo::Error;
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn normal_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Largest relative error between an analytic gradient and central
/// differences of `f`, over `coords`.
fn fd_rel_error(f: &dyn Fn(&[f64]) -> f64, params: &[f64], grad: &[f64], coords: &[usize], h: f64) -> f64 {
    let mut p = params.to_vec();
    let mut num = Vec::with_capacity(coords.len());
    let mut ana = Vec::with_capacity(coords.len());
    for &i in coords {
        let orig = p[i];
        p[i] = orig + h;
        let up = f(&p);
        p[i] = orig - h;
        let down = f(&p);
        p[i] = orig;
        num.push((up - down) / (2.0 * h));
        ana.push(grad[i]);
    }
    let diff: f64 = num.iter().zip(&ana).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let scale = num.iter().map(|a| a * a).sum::<f64>().sqrt().max(ana.iter().map(|a| a * a).sum::<f64>().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

fn sample_coords(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    if n <= k {
        return (0..n).collect();
    }
    (0..k).map(|_| rng.random_range(0..n)).collect()
}

#[test]
fn mlp_forward_matches_hand_evaluation() {
    // 2-2-1 network with fixed weights.
    let mut net = Mlp::zeros(&[2, 2, 1]).unwrap();
    // Layout: W1 (2x2 row-major by output), b1, W2 (1x2), b2.
    net.set_params(&[0.5, -0.25, 0.1, 0.3, 0.05, -0.1, 1.5, -2.0, 0.2]).unwrap();
    let x = [0.7, -1.2];
    let h0 = (0.5 * 0.7 + -0.25 * -1.2 + 0.05_f64).tanh();
    let h1 = (0.1 * 0.7 + 0.3 * -1.2 - 0.1_f64).tanh();
    let expected = 1.5 * h0 - 2.0 * h1 + 0.2;
    let out = net.forward(&x).unwrap();
    assert!((out[0] - expected).abs() < 1e-12, "{} vs {expected}", out[0]);
}

#[test]
fn mlp_zero_upstream_and_linearity() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = Mlp::new(&[3, 8, 8, 2], Init::CRITIC, &mut rng).unwrap();
    let x = [0.1, -0.4, 0.9];
    let zero = net.backward(&x, &[0.0, 0.0]).unwrap();
    assert!(zero.iter().all(|&g| g == 0.0));
    let g1 = net.backward(&x, &[0.3, -0.7]).unwrap();
    let g2 = net.backward(&x, &[0.6, -1.4]).unwrap();
    for (a, b) in g1.iter().zip(g2.iter()) {
        assert!((2.0 * a - b).abs() <= 1e-14 * b.abs().max(1.0));
    }
}

#[test]
fn mlp_gradients_match_finite_differences_on_project_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let shapes: [&[usize]; 4] = [&[2, 256, 256, 1], &[4, 256, 256, 1], &[2, 5, 1], &[3, 7, 6, 2]];
    let mut worst: f64 = 0.0;
    for draw in 0..100 {
        let sizes = shapes[draw % shapes.len()];
        let mut net = Mlp::zeros(sizes).unwrap();
        let params = normal_vec(&mut rng, net.num_params(), 0.3);
        net.set_params(&params).unwrap();
        let x = normal_vec(&mut rng, sizes[0], 1.0);
        let up = normal_vec(&mut rng, *sizes.last().unwrap(), 1.0);
        let grad = net.backward(&x, &up).unwrap();
        let f = |p: &[f64]| {
            let mut n = net.clone();
            n.set_params(p).unwrap();
            n.forward(&x).unwrap().iter().zip(&up).map(|(o, u)| o * u).sum::<f64>()
        };
        let coords = sample_coords(&mut rng, params.len(), 40);
        let err = fd_rel_error(&f, &params, &grad, &coords, 1e-5);
        worst = worst.max(err);
        assert!(err <= 1e-5, "draw {draw} shape {sizes:?}: relative error {err:e}");
    }
    eprintln!("worst mlp gradient relative error {worst:e}");
}

#[test]
fn batched_backward_sums_per_row_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let net = Mlp::new(&[2, 6, 1], Init::CRITIC, &mut rng).unwrap();
    let xs = Array2::from_shape_vec((3, 2), normal_vec(&mut rng, 6, 1.0)).unwrap();
    let up = Array2::from_shape_vec((3, 1), vec![0.5, -1.0, 2.0]).unwrap();
    let cache = net.forward_cached(xs.clone()).unwrap();
    let mut batched = vec![0.0; net.num_params()];
    net.backward_batch(&cache, up.view(), &mut batched).unwrap();
    let mut summed = vec![0.0; net.num_params()];
    for i in 0..3 {
        let g = net.backward(xs.row(i).as_slice().unwrap(), &[up[[i, 0]]]).unwrap();
        summed.iter_mut().zip(g.iter()).for_each(|(s, g)| *s += g);
    }
    for (a, b) in batched.iter().zip(&summed) {
        assert!((a - b).abs() < 1e-12);
    }
}

fn random_policy(rng: &mut ChaCha8Rng, hidden: &[usize], interval: ActionInterval) -> GaussianPolicy {
    let mut p = GaussianPolicy::new(2, hidden, vec![interval], -0.5, rng).unwrap();
    let params = normal_vec(rng, p.num_params(), 0.3);
    p.set_flat_params(&params).unwrap();
    let ls = rng.random_range(-1.5..0.5);
    p.set_log_std(&[ls]);
    p
}

#[test]
fn policy_log_prob_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst: f64 = 0.0;
    for draw in 0..100 {
        let hidden: &[usize] = if draw % 2 == 0 { &[256, 256] } else { &[8, 8] };
        let policy = random_policy(&mut rng, hidden, ActionInterval::new(0.0, std::f64::consts::TAU).unwrap());
        let n = 4;
        let states = Array2::from_shape_vec((n, 2), normal_vec(&mut rng, 2 * n, 1.0)).unwrap();
        let mut actions = Array2::zeros((n, 1));
        for i in 0..n {
            actions[[i, 0]] = policy.sample(states.row(i).as_slice().unwrap(), &mut rng).unwrap().0[0];
        }
        let weights = normal_vec(&mut rng, n, 1.0);
        let (_, cache) = policy.log_prob_batch(states.clone(), actions.view()).unwrap();
        let mut grad = vec![0.0; policy.num_params()];
        policy.backward_log_prob(&cache, &weights, &mut grad).unwrap();
        let f = |p: &[f64]| {
            let mut q = policy.clone();
            q.set_flat_params(p).unwrap();
            let (lp, _) = q.log_prob_batch(states.clone(), actions.view()).unwrap();
            lp.iter().zip(&weights).map(|(l, w)| l * w).sum::<f64>()
        };
        let params = policy.flat_params().to_vec();
        let mut coords = sample_coords(&mut rng, params.len(), 30);
        coords.push(params.len() - 1);
        let err = fd_rel_error(&f, &params, &grad, &coords, 1e-5);
        worst = worst.max(err);
        assert!(err <= 1e-5, "draw {draw}: relative error {err:e}");
    }
    eprintln!("worst policy gradient relative error {worst:e}");
}

#[test]
fn squashed_density_integrates_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..10 {
        let lo = rng.random_range(-2.0..0.0);
        let hi = lo + rng.random_range(0.5..7.0);
        let policy = random_policy(&mut rng, &[8, 8], ActionInterval::new(lo, hi).unwrap());
        let s = normal_vec(&mut rng, 2, 1.0);
        // Midpoint rule in the pre-squash variable would hide the Jacobian, so
        // integrate in action space directly.
        let n = 10_000;
        let h = (hi - lo) / n as f64;
        let total: f64 = (0..n)
            .map(|k| {
                let a = lo + (k as f64 + 0.5) * h;
                policy.log_prob(&s, &[a]).unwrap().exp() * h
            })
            .sum();
        assert!((total - 1.0).abs() < 1e-3, "density integrates to {total}");
    }
}

#[test]
fn greedy_action_is_the_density_mode_and_wider_std_lowers_it() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let mut policy = random_policy(&mut rng, &[8], ActionInterval::new(-1.0, 1.0).unwrap());
    // Wide squashed Gaussians turn bimodal at the interval ends; the mode
    // property holds for the narrow heads used in training.
    policy.set_log_std(&[-2.0]);
    let s = [0.2, -0.3];
    let mode = policy.greedy_action(&s).unwrap()[0];
    let at_mode = policy.log_prob(&s, &[mode]).unwrap();
    let grid: Vec<f64> = (0..2001).map(|k| -1.0 + k as f64 * 1e-3).collect();
    let (best, _) = grid
        .iter()
        .map(|&a| (a, policy.log_prob(&s, &[a]).unwrap()))
        .fold((0.0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
    assert!((best - mode).abs() < 0.02, "density peaks at {best}, greedy action {mode}");
    for &a in &grid {
        if (a - mode).abs() > 0.05 {
            assert!(policy.log_prob(&s, &[a]).unwrap() < at_mode);
        }
    }
    let mut wide = policy.clone();
    wide.set_log_std(&[-2.0 + 2f64.ln()]);
    assert!(wide.log_prob(&s, &[mode]).unwrap() < at_mode);
}

#[test]
fn zero_mean_samples_are_symmetric_about_the_midpoint() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let net = Mlp::zeros(&[2, 4, 1]).unwrap();
    let policy = GaussianPolicy::from_parts(net, vec![0.0], vec![ActionInterval::new(1.0, 3.0).unwrap()]).unwrap();
    let n = 100_000;
    let samples: Vec<f64> = (0..n).map(|_| policy.sample(&[0.0, 0.0], &mut rng).unwrap().0[0]).collect();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    let se = (var / n as f64).sqrt();
    assert!((mean - 2.0).abs() < 3.0 * se, "mean {mean}, se {se}");
}

#[test]
fn adam_constant_gradient_moves_by_lr_per_step() {
    let mut opt = AdamState::new(3, AdamConfig::with_lr(1e-3));
    let mut p = vec![0.0; 3];
    let g = [2.0, -0.5, 1e-3];
    for _ in 0..200 {
        opt.step(&mut p, &g).unwrap();
    }
    assert_eq!(opt.steps(), 200);
    for (pi, gi) in p.iter().zip(&g) {
        let expected = -1e-3 * 200.0 * gi.signum();
        assert!((pi - expected).abs() < 0.02 * expected.abs(), "{pi} vs {expected}");
    }
    let before = p.clone();
    let mut fresh = AdamState::new(3, AdamConfig::with_lr(1e-3));
    fresh.step(&mut p, &[0.0; 3]).unwrap();
    assert_eq!(p, before);
    assert!(matches!(fresh.step(&mut p, &[f64::NAN, 0.0, 0.0]), Err(Error::Numerical(_))));
}

#[test]
fn checkpoint_round_trip_and_architecture_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    let policy = random_policy(&mut rng, &[16, 16], ActionInterval::new(-1.5, 1.5).unwrap());
    let bytes = encode_policy(&policy);
    let back = decode_policy(&bytes).unwrap();
    assert_eq!(back.flat_params().to_vec(), policy.flat_params().to_vec());
    assert_eq!(back.intervals(), policy.intervals());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.ckpt");
    save_policy(&policy, &path).unwrap();
    assert!(load_policy_expecting(&path, &[2, 16, 16, 1]).is_ok());
    let err = load_policy_expecting(&path, &[2, 256, 256, 1]).unwrap_err();
    assert!(err.to_string().contains("layer_sizes"), "{err}");
    assert!(decode_policy(&bytes[..bytes.len() - 3]).is_err());
}

#[test]
fn forward_is_bit_deterministic() {
    let build = || {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        Mlp::new(&[2, 256, 256, 1], Init::POLICY, &mut rng).unwrap()
    };
    let (a, b) = (build(), build());
    let x = [0.3, 0.9];
    assert_eq!(a.forward(&x).unwrap(), b.forward(&x).unwrap());
    assert_eq!(a.backward(&x, &[1.0]).unwrap().to_vec(), b.backward(&x, &[1.0]).unwrap().to_vec());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sampled_actions_stay_inside_the_interval(
        seed in any::<u64>(),
        lo in -5.0f64..5.0,
        width in 1e-2f64..10.0,
        log_std in -3.0f64..2.0,
        s in prop::collection::vec(-3.0f64..3.0, 2),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let iv = ActionInterval::new(lo, lo + width).unwrap();
        let policy = GaussianPolicy::new(2, &[8], vec![iv], log_std, &mut rng).unwrap();
        for _ in 0..20 {
            let (a, lp) = policy.sample(&s, &mut rng).unwrap();
            prop_assert!(a[0] >= lo && a[0] <= lo + width);
            prop_assert!(lp.is_finite());
        }
        prop_assert!(policy.log_prob(&s, &[lo]).unwrap().is_finite());
        prop_assert!(policy.log_prob(&s, &[lo + width]).unwrap().is_finite());
    }

    #[test]
    fn flatten_round_trip_is_exact(seed in any::<u64>(), h1 in 1usize..12, h2 in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut policy = GaussianPolicy::new(2, &[h1, h2], vec![ActionInterval::new(0.0, 1.0).unwrap()], -0.5, &mut rng).unwrap();
        let values = normal_vec(&mut rng, policy.num_params(), 1.0);
        policy.set_flat_params(&values).unwrap();
        prop_assert_eq!(policy.flat_params().to_vec(), values);
    }

    #[test]
    fn forward_is_finite_for_finite_inputs(seed in any::<u64>(), x in prop::collection::vec(-1e3f64..1e3, 3)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Mlp::new(&[3, 16, 16, 2], Init::CRITIC, &mut rng).unwrap();
        prop_assert!(net.forward(&x).unwrap().iter().all(|v| v.is_finite()));
    }
}
