use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::{AgriEnv, Benchmark, EnvConfig, ShipEnv};
use crate::error::{Error, Result};
use crate::exchange::ExchangeConfig;
use crate::ppo::{AdvantageScaling, PpoConfig};
use crate::search::{GridLadder, SearchConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSection {
    pub step_length: f64,
    pub max_steps: usize,
    pub reach_radius: f64,
    pub gamma_r: f64,
    pub gamma_c: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub hidden: Vec<usize>,
    pub lr_net: f64,
    pub log_std_init: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PpoSection {
    pub clip: f64,
    pub lr_mult: f64,
    pub gae_lambda: f64,
    pub inner_iters: usize,
    pub epochs_per_iter: usize,
    pub minibatch_size: usize,
    pub sub_tolerance: f64,
    pub episodes: usize,
    pub advantage_scaling: AdvantageScaling,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExchangeSection {
    pub eta: f64,
    pub eps_mult: f64,
    pub max_iterations: usize,
    pub initial_multiplier: f64,
    pub grid_ladder: Vec<usize>,
    pub refine_iters: usize,
    /// Ends a seed early once its working set would exceed this size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub working_set_limit: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSection {
    pub episodes: usize,
    pub heatmap_n: usize,
}

/// Everything a run needs. Files only list overrides; every missing key takes
/// the default of the chosen environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env: String,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub environment: EnvironmentSection,
    pub network: NetworkSection,
    pub ppo: PpoSection,
    pub exchange: ExchangeSection,
    pub evaluation: EvaluationSection,
}

impl RunConfig {
    pub fn defaults(env: &str) -> Result<Self> {
        let (eta, gamma_r, max_iterations, initial_multiplier, base) = match env {
            "ship" => (0.01, 1.0, 150, 0.05, ShipEnv::default().config),
            "agri" => (0.1, 0.95, 400, 1.0, AgriEnv::default().config),
            other => return Err(Error::Config(format!("unknown environment {other:?} (expected \"ship\" or \"agri\")"))),
        };
        let ppo = PpoConfig::for_eta(eta);
        Ok(RunConfig {
            env: env.to_string(),
            seeds: (0..10).collect(),
            out_dir: PathBuf::from("runs").join(env),
            environment: EnvironmentSection {
                step_length: base.step_length,
                max_steps: base.max_steps,
                reach_radius: base.reach_radius,
                gamma_r,
                gamma_c: 1.0,
            },
            network: NetworkSection {
                hidden: vec![256, 256],
                lr_net: ppo.lr_net,
                log_std_init: crate::nn::GaussianPolicy::DEFAULT_LOG_STD,
            },
            ppo: PpoSection {
                clip: ppo.clip,
                lr_mult: ppo.lr_mult,
                gae_lambda: ppo.gae_lambda,
                inner_iters: ppo.inner_iters,
                epochs_per_iter: ppo.epochs_per_iter,
                minibatch_size: ppo.minibatch_size,
                sub_tolerance: ppo.sub_tolerance,
                episodes: ppo.episodes,
                advantage_scaling: ppo.advantage_scaling,
            },
            exchange: ExchangeSection {
                eta,
                eps_mult: 1e-3,
                max_iterations,
                initial_multiplier,
                grid_ladder: GridLadder::default().levels().to_vec(),
                refine_iters: 50,
                working_set_limit: None,
            },
            evaluation: EvaluationSection {
                episodes: 256,
                heatmap_n: 64,
            },
        })
    }

    /// Reads `key = value` overrides grouped in sections. `env` is required;
    /// unknown keys are rejected by name.
    pub fn parse(text: &str) -> Result<Self> {
        let user: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let env = user
            .get("env")
            .and_then(|v| v.as_str())
            .ok_or_else(|| Error::Config("missing string key `env`".into()))?;
        let defaults = toml::Table::try_from(Self::defaults(env)?).map_err(|e| Error::Config(e.to_string()))?;
        let merged = merge(defaults, user);
        let cfg: RunConfig = merged.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.env_config().validate()?;
        self.benchmark()?;
        self.ppo_config().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.exchange_config().map_err(|e| Error::Config(e.to_string()))?;
        self.search_config().map_err(|e| Error::Config(e.to_string()))?;
        if self.seeds.is_empty() {
            return Err(Error::Config("no seeds given".into()));
        }
        if self.network.hidden.is_empty() || self.network.hidden.contains(&0) {
            return Err(Error::Config("hidden layer sizes must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.environment.gamma_c) {
            return Err(Error::Config(format!("gamma_c must lie in [0, 1], got {}", self.environment.gamma_c)));
        }
        if self.evaluation.episodes == 0 || self.evaluation.heatmap_n < 2 {
            return Err(Error::Config("evaluation needs episodes >= 1 and heatmap_n >= 2".into()));
        }
        Ok(())
    }

    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            step_length: self.environment.step_length,
            max_steps: self.environment.max_steps,
            reach_radius: self.environment.reach_radius,
            gamma_r: self.environment.gamma_r,
        }
    }

    pub fn benchmark(&self) -> Result<Benchmark> {
        let mut bench = Benchmark::by_name(&self.env)?;
        match &mut bench {
            Benchmark::Ship(e) => {
                e.config = self.env_config();
                e.family.gamma_c = self.environment.gamma_c;
            }
            Benchmark::Agri(e) => {
                e.config = self.env_config();
                e.family.gamma_c = self.environment.gamma_c;
            }
        }
        Ok(bench)
    }

    pub fn ppo_config(&self) -> PpoConfig {
        let p = &self.ppo;
        PpoConfig {
            clip: p.clip,
            lr_net: self.network.lr_net,
            lr_mult: p.lr_mult,
            gae_lambda: p.gae_lambda,
            inner_iters: p.inner_iters,
            epochs_per_iter: p.epochs_per_iter,
            minibatch_size: p.minibatch_size,
            sub_tolerance: p.sub_tolerance,
            episodes: p.episodes,
            advantage_scaling: p.advantage_scaling,
        }
    }

    pub fn exchange_config(&self) -> Result<ExchangeConfig> {
        let x = &self.exchange;
        let mut cfg = ExchangeConfig::new(x.eta, x.eps_mult, x.max_iterations, x.initial_multiplier)?;
        cfg.working_set_limit = x.working_set_limit;
        Ok(cfg)
    }

    pub fn search_config(&self) -> Result<SearchConfig> {
        let mut cfg = SearchConfig::new(GridLadder::new(self.exchange.grid_ladder.clone())?, self.exchange.eta)?;
        cfg.refine_iters = self.exchange.refine_iters;
        Ok(cfg)
    }

    /// Layer sizes of the policy mean network.
    pub fn policy_layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![2];
        sizes.extend_from_slice(&self.network.hidden);
        sizes.push(1);
        sizes
    }
}

/// Overlays `user` on `base`, recursing into tables. Keys absent from `base`
/// are kept so that deserialization can reject them.
fn merge(mut base: toml::Table, user: toml::Table) -> toml::Table {
    for (key, value) in user {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) => {
                let inner = std::mem::take(b);
                *b = merge(inner, u);
            }
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
    base
}
