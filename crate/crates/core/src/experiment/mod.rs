//! Multi-seed training runs, evaluation of saved policies, and the testbed
//! suite, with their on-disk outputs.

mod config;
mod output;

pub use config::{
    EnvironmentSection, EvaluationSection, ExchangeSection, NetworkSection, PpoSection, RunConfig,
};
pub use output::{
    file_entries, hash_file, metrics_rows, write_heatmap, write_json, write_metrics, write_trajectory,
    write_working_set_log, FileEntry, MetricsRow, METRICS_HEADER,
};

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::exchange::{self, ExchangeStatus, ExchangeTrace};
use crate::nn::{checkpoint, GaussianPolicy};
use crate::ppo::{Learner, PpoLagSolver, RlEvaluatorFactory, SubproblemReport};
use crate::rollout::{self, ActionMode};
use crate::search::make_grid;
use crate::testbed::{self, TestbedConfig, TestbedReport};

/// Overrides the output directory of `run`.
pub const OUT_DIR_VAR: &str = "EPO_OUT_DIR";
/// Number of seeds trained concurrently.
pub const JOBS_VAR: &str = "EPO_JOBS";

/// Independent random stream `k` of a seed.
pub fn seed_stream(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

const STREAM_POLICY: u64 = 0;
const STREAM_CRITICS: u64 = 1;
const STREAM_ROLLOUTS: u64 = 2;
const STREAM_SOLVER: u64 = 3;
const STREAM_EVAL: u64 = 4;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PolicyEvaluation {
    pub objective: f64,
    pub objective_stderr: f64,
    pub sampled_terminal_fraction: f64,
    pub greedy_terminal_fraction: f64,
    /// Largest raw violation on the heatmap grid.
    pub max_violation: f64,
    #[serde(skip)]
    pub heatmap: Vec<(Vec<f64>, f64)>,
    #[serde(skip)]
    pub greedy_states: Vec<Vec<f64>>,
}

/// Objective from `episodes` sampled rollouts, the violation on an
/// `heatmap_n x heatmap_n` grid of the index box, and greedy rollouts.
pub fn evaluate_policy(
    policy: &GaussianPolicy,
    env: &dyn Environment,
    episodes: usize,
    heatmap_n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<PolicyEvaluation> {
    let batch = rollout::collect(policy, env, episodes, ActionMode::Sample, 0, rng)?;
    let family = env.family();
    let points = make_grid(family.index_box(), heatmap_n)?;
    let sign = family.orientation().sign();
    let values = rollout::estimate_constraint_grid(&batch, family, &points);
    let violations: Vec<f64> = values.iter().zip(&points).map(|(j, y)| sign * (j - family.bound(y))).collect();
    let max_violation = violations.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let heatmap = points.into_iter().zip(violations).map(|(y, v)| (y, v.max(0.0))).collect();

    let greedy = rollout::collect(policy, env, episodes, ActionMode::Greedy, 0, rng)?;
    let first = &greedy.trajectories[0];
    let mut greedy_states: Vec<Vec<f64>> = first.state_iter().map(<[f64]>::to_vec).collect();
    greedy_states.push(first.final_state.clone());

    Ok(PolicyEvaluation {
        objective: rollout::estimate_objective(&batch, env.gamma_r()),
        objective_stderr: rollout::objective_standard_error(&batch, env.gamma_r()),
        sampled_terminal_fraction: batch.terminal_fraction(),
        greedy_terminal_fraction: greedy.terminal_fraction(),
        max_violation,
        heatmap,
        greedy_states,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeedSummary {
    pub seed: u64,
    /// `terminated`, `iteration_cap` or `failed`.
    pub status: String,
    pub error: Option<String>,
    /// Outer iterations that solved a subproblem.
    pub outer_iterations: usize,
    pub inner_rounds: usize,
    /// Objective estimate of the untrained policy.
    pub initial_objective: f64,
    /// Objective estimate of the last searched iterate.
    pub final_train_objective: f64,
    pub final_search_violation: f64,
    pub max_working_set_size: usize,
    pub final_working_set_size: usize,
    pub evaluation: Option<PolicyEvaluation>,
    pub runtime_s: f64,
    pub files: Vec<FileEntry>,
}

impl SeedSummary {
    pub fn terminated(&self) -> bool {
        self.status == "terminated"
    }
}

fn trace_summary(seed: u64, trace: &ExchangeTrace<SubproblemReport>) -> SeedSummary {
    let inner_rounds = trace
        .initial
        .iter()
        .map(|s| s.report.rounds.len())
        .chain(trace.records.iter().filter_map(|r| r.solve.as_ref().map(|s| s.report.rounds.len())))
        .sum();
    let initial_objective = trace
        .initial
        .as_ref()
        .and_then(|s| s.report.rounds.first().map(|r| r.objective))
        .or_else(|| trace.records.first().map(|r| r.objective))
        .unwrap_or(f64::NAN);
    let last = trace.records.last();
    SeedSummary {
        seed,
        status: "failed".into(),
        error: None,
        outer_iterations: trace.records.iter().filter(|r| r.solve.is_some()).count(),
        inner_rounds,
        initial_objective,
        final_train_objective: last.map_or(f64::NAN, |r| r.objective),
        final_search_violation: last.map_or(f64::NAN, |r| r.max_violation()),
        max_working_set_size: trace.max_working_set_size(),
        final_working_set_size: last.map_or(0, |r| r.working_set.len()),
        evaluation: None,
        runtime_s: 0.0,
        files: Vec::new(),
    }
}

/// Trains one seed and writes its outputs under `out_dir`. A failed exchange
/// run still writes its partial metrics and reports `failed`.
pub fn run_seed(cfg: &RunConfig, seed: u64, out_dir: &Path, wall_clock: bool) -> Result<SeedSummary> {
    let start = Instant::now();
    std::fs::create_dir_all(out_dir)?;
    let env: Arc<dyn Environment> = Arc::new(cfg.benchmark()?);
    let policy = GaussianPolicy::new(
        env.state_dim(),
        &cfg.network.hidden,
        env.action_intervals(),
        cfg.network.log_std_init,
        &mut seed_stream(seed, STREAM_POLICY),
    )?;
    let learner = Learner::new(&policy, &*env, &cfg.network.hidden, cfg.network.lr_net, &mut seed_stream(seed, STREAM_CRITICS))?;
    let mut factory = RlEvaluatorFactory {
        env: env.clone(),
        episodes: cfg.ppo.episodes,
        rng: seed_stream(seed, STREAM_ROLLOUTS),
    };
    let mut solver = PpoLagSolver::new(env.clone(), cfg.ppo_config(), learner, seed_stream(seed, STREAM_SOLVER));
    let xcfg = cfg.exchange_config()?;
    let searcher = cfg.search_config()?;

    let mut observer = |rec: &exchange::IterationRecord<SubproblemReport>| {
        log::info!(
            "{} seed {seed} iteration {}: objective {:.4}, max violation {:.5}, working set {}",
            cfg.env,
            rec.iteration,
            rec.objective,
            rec.max_violation(),
            rec.working_set.len()
        );
    };
    let result = exchange::run(policy, &mut factory, &mut solver, &searcher, &xcfg, &mut observer);
    let (trace, policy, status, error) = match result {
        Ok(out) => {
            let status = match out.status {
                ExchangeStatus::Terminated => "terminated",
                ExchangeStatus::IterationCapReached => "iteration_cap",
                ExchangeStatus::WorkingSetLimitReached => "working_set_limit",
            };
            (out.trace, Some(out.params), status, None)
        }
        Err(abort) => {
            let msg = abort.to_string();
            (abort.trace, None, "failed", Some(msg))
        }
    };

    let name = |stem: &str, ext: &str| out_dir.join(format!("{stem}_seed{seed}.{ext}"));
    let mut files = Vec::new();
    let metrics = name("metrics", "csv");
    write_metrics(&metrics, &metrics_rows(seed, &trace, wall_clock))?;
    files.push(metrics);
    let ws_log = name("working_set", "csv");
    write_working_set_log(&ws_log, &trace, env.family().index_box().dim())?;
    files.push(ws_log);

    let mut summary = trace_summary(seed, &trace);
    summary.status = status.into();
    summary.error = error;
    if let Some(policy) = policy {
        let ckpt = name("policy", "ckpt");
        checkpoint::save_policy(&policy, &ckpt)?;
        files.push(ckpt);
        let eval = evaluate_policy(
            &policy,
            &*env,
            cfg.evaluation.episodes,
            cfg.evaluation.heatmap_n,
            &mut seed_stream(seed, STREAM_EVAL),
        )?;
        let heat = name("heatmap", "csv");
        write_heatmap(&heat, &eval.heatmap)?;
        files.push(heat);
        let traj = name("trajectory", "csv");
        write_trajectory(&traj, &eval.greedy_states)?;
        files.push(traj);
        summary.evaluation = Some(eval);
    }
    summary.runtime_s = if wall_clock { start.elapsed().as_secs_f64() } else { 0.0 };
    summary.files = file_entries(out_dir, &files)?;
    let summary_path = name("summary", "json");
    write_json(&summary_path, &summary)?;
    Ok(summary)
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub code_version: String,
    pub config: String,
    pub seeds: Vec<SeedSummary>,
    pub files: Vec<FileEntry>,
}

#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub out_dir: PathBuf,
    pub seeds: Vec<SeedSummary>,
}

impl ExperimentReport {
    pub fn all_failed(&self) -> bool {
        self.seeds.iter().all(|s| s.status == "failed")
    }
}

/// Trains every configured seed, `jobs` at a time, then writes
/// `manifest.json`. Wall-clock columns are only filled in with `jobs > 1`;
/// single-job runs are byte-for-byte reproducible.
pub fn run_experiment(cfg: &RunConfig, jobs: usize) -> Result<ExperimentReport> {
    cfg.validate()?;
    let out_dir = cfg.out_dir.clone();
    std::fs::create_dir_all(&out_dir)?;
    let wall_clock = jobs > 1;
    let run_one = |seed: u64| match run_seed(cfg, seed, &out_dir, wall_clock) {
        Ok(s) => s,
        Err(e) => SeedSummary {
            error: Some(e.to_string()),
            ..trace_summary(
                seed,
                &ExchangeTrace {
                    initial: None,
                    records: Vec::new(),
                },
            )
        },
    };
    let seeds: Vec<SeedSummary> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        use rayon::prelude::*;
        pool.install(|| cfg.seeds.par_iter().map(|&s| run_one(s)).collect())
    } else {
        cfg.seeds.iter().map(|&s| run_one(s)).collect()
    };

    let config_path = out_dir.join("config.toml");
    std::fs::write(&config_path, cfg.to_toml())?;
    let mut listed = vec![config_path];
    for s in &seeds {
        listed.push(out_dir.join(format!("summary_seed{}.json", s.seed)));
    }
    let listed: Vec<PathBuf> = listed.into_iter().filter(|p| p.exists()).collect();
    let manifest = Manifest {
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.to_toml(),
        files: file_entries(&out_dir, &listed)?
            .into_iter()
            .chain(seeds.iter().flat_map(|s| s.files.iter().cloned()))
            .collect(),
        seeds: seeds.clone(),
    };
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    Ok(ExperimentReport { out_dir, seeds })
}

/// Loads a checkpoint trained under `cfg`, evaluates it, and writes the
/// heatmap and greedy trajectory into `out_dir`.
pub fn evaluate_checkpoint(path: &Path, cfg: &RunConfig, out_dir: &Path, seed: u64) -> Result<PolicyEvaluation> {
    let policy = checkpoint::load_policy_expecting(path, &cfg.policy_layer_sizes())?;
    let env = cfg.benchmark()?;
    let eval = evaluate_policy(
        &policy,
        &env,
        cfg.evaluation.episodes,
        cfg.evaluation.heatmap_n,
        &mut seed_stream(seed, STREAM_EVAL),
    )?;
    std::fs::create_dir_all(out_dir)?;
    write_heatmap(&out_dir.join("eval_heatmap.csv"), &eval.heatmap)?;
    write_trajectory(&out_dir.join("eval_trajectory.csv"), &eval.greedy_states)?;
    write_json(&out_dir.join("eval_summary.json"), &eval)?;
    Ok(eval)
}

/// Runs every shipped testbed instance against its oracle fixture, taken
/// from `fixture_dir` when given and from the committed copies otherwise.
pub fn run_testbed_suite(fixture_dir: Option<&Path>) -> Result<Vec<TestbedReport>> {
    let mut reports = Vec::new();
    for name in testbed::INSTANCES {
        let inst = testbed::instance_by_name(name).expect("shipped instance");
        let cfg = TestbedConfig::for_instance(name);
        let fixture = match fixture_dir {
            Some(dir) => {
                let path = dir.join(format!("{name}.txt"));
                testbed::OracleFixture::load(&path)?.expect(name, cfg.n_dense, &path.display().to_string())?
            }
            None => testbed::builtin_fixture(name)?.expect(name, cfg.n_dense, name)?,
        };
        reports.push(testbed::run_testbed(inst.as_ref(), &cfg, fixture.value)?);
    }
    Ok(reports)
}
