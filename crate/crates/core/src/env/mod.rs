//! Constrained MDPs with a continuum of constraints.
//!
//! An [`Environment`] supplies deterministic dynamics and a reward; its
//! [`ConstraintFamily`] supplies, for every index point `y` in a box `Y`, a
//! per-state cost `c_y(s)` and a threshold `d_y`. A policy is feasible when
//! `sigma * (J_{c_y} - d_y) <= 0` for all `y`, with `sigma = +1` for upper
//! bounds and `-1` for lower bounds.

mod agri;
mod ship;

pub use agri::{AgriCoverage, AgriEnv};
pub use ship::{ShipEnv, ShipPollution};

use rand::RngCore;

use crate::error::{Error, Result};
use crate::nn::ActionInterval;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Orientation {
    /// `J_{c_y} <= d_y`
    UpperBound,
    /// `J_{c_y} >= d_y`
    LowerBound,
}

impl Orientation {
    pub fn sign(self) -> f64 {
        match self {
            Orientation::UpperBound => 1.0,
            Orientation::LowerBound => -1.0,
        }
    }
}

/// Axis-aligned box in `R^m`.
#[derive(Clone, Debug, PartialEq)]
pub struct IndexBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl IndexBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::invalid("box bounds must be non-empty and of equal length"));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a.is_finite() && b.is_finite() && a <= b)) {
            return Err(Error::invalid(format!("bad box bounds {lo:?} / {hi:?}")));
        }
        Ok(IndexBox { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn contains(&self, y: &[f64]) -> bool {
        y.len() == self.dim() && y.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (a, b))| v >= a && v <= b)
    }

    pub fn project(&self, y: &mut [f64]) {
        for (v, (a, b)) in y.iter_mut().zip(self.lo.iter().zip(&self.hi)) {
            *v = v.clamp(*a, *b);
        }
    }

    /// Diameter in the infinity norm.
    pub fn diameter(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).fold(0.0, f64::max)
    }
}

/// The parameterized constraint set `{ J_{c_y} <= d_y (or >=) : y in Y }`.
pub trait ConstraintFamily: Send + Sync {
    fn index_box(&self) -> &IndexBox;
    fn orientation(&self) -> Orientation;
    /// Discount applied to the cost along a trajectory.
    fn gamma_c(&self) -> f64;
    fn cost(&self, y: &[f64], s: &[f64]) -> f64;
    /// Adds `scale * grad_y c_y(s)` to `out`.
    fn add_cost_grad_y(&self, y: &[f64], s: &[f64], scale: f64, out: &mut [f64]);
    fn bound(&self, y: &[f64]) -> f64;
    fn bound_grad_y(&self, y: &[f64]) -> Vec<f64>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub state: Vec<f64>,
    pub reward: f64,
    /// The goal was reached; the episode ends without truncation.
    pub terminal: bool,
}

/// Episode-independent settings shared by the benchmark tasks.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvConfig {
    /// Distance moved per step.
    pub step_length: f64,
    pub max_steps: usize,
    /// Goal tolerance around the ship's destination.
    pub reach_radius: f64,
    pub gamma_r: f64,
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_length > 0.0 && self.step_length.is_finite()) {
            return Err(Error::Config(format!("step_length must be positive, got {}", self.step_length)));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be positive".into()));
        }
        if self.reach_radius < self.step_length / 2.0 {
            return Err(Error::Config(format!(
                "reach_radius {} is below step_length / 2 = {}",
                self.reach_radius,
                self.step_length / 2.0
            )));
        }
        if !(0.0..=1.0).contains(&self.gamma_r) {
            return Err(Error::Config(format!("gamma_r must lie in [0, 1], got {}", self.gamma_r)));
        }
        Ok(())
    }
}

pub trait Environment: Send + Sync {
    fn name(&self) -> &'static str;
    fn state_dim(&self) -> usize;
    fn action_intervals(&self) -> Vec<ActionInterval>;
    /// Region the state never leaves.
    fn region(&self) -> &IndexBox;
    fn config(&self) -> &EnvConfig;
    fn family(&self) -> &dyn ConstraintFamily;
    /// Initial state. The start distribution is a point mass, so `rng` is unused.
    fn reset(&self, rng: &mut dyn RngCore) -> Vec<f64>;
    fn step(&self, s: &[f64], a: &[f64]) -> Result<StepResult>;

    fn max_steps(&self) -> usize {
        self.config().max_steps
    }

    fn gamma_r(&self) -> f64 {
        self.config().gamma_r
    }
}

pub(crate) fn check_action(intervals: &[ActionInterval], a: &[f64]) -> Result<()> {
    if a.len() != intervals.len() {
        return Err(Error::Dimension {
            context: "action",
            expected: intervals.len(),
            got: a.len(),
        });
    }
    for (iv, &v) in intervals.iter().zip(a) {
        if !iv.contains(v) {
            return Err(Error::invalid(format!("action {v} outside [{}, {}]", iv.lo, iv.hi)));
        }
    }
    Ok(())
}

/// `s + step * (cos a, sin a)`, clipped onto `region`.
pub(crate) fn move_clipped(region: &IndexBox, s: &[f64], heading: f64, step: f64) -> Vec<f64> {
    let mut next = vec![s[0] + step * heading.cos(), s[1] + step * heading.sin()];
    region.project(&mut next);
    next
}

/// One of the two shipped benchmark tasks, selected by name.
#[derive(Clone, Debug)]
pub enum Benchmark {
    Ship(ShipEnv),
    Agri(AgriEnv),
}

impl Benchmark {
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "ship" => Ok(Benchmark::Ship(ShipEnv::default())),
            "agri" => Ok(Benchmark::Agri(AgriEnv::default())),
            other => Err(Error::Config(format!("unknown environment {other:?} (expected \"ship\" or \"agri\")"))),
        }
    }

    fn inner(&self) -> &dyn Environment {
        match self {
            Benchmark::Ship(e) => e,
            Benchmark::Agri(e) => e,
        }
    }
}

impl Environment for Benchmark {
    fn name(&self) -> &'static str {
        self.inner().name()
    }
    fn state_dim(&self) -> usize {
        self.inner().state_dim()
    }
    fn action_intervals(&self) -> Vec<ActionInterval> {
        self.inner().action_intervals()
    }
    fn region(&self) -> &IndexBox {
        self.inner().region()
    }
    fn config(&self) -> &EnvConfig {
        self.inner().config()
    }
    fn family(&self) -> &dyn ConstraintFamily {
        self.inner().family()
    }
    fn reset(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.inner().reset(rng)
    }
    fn step(&self, s: &[f64], a: &[f64]) -> Result<StepResult> {
        self.inner().step(s, a)
    }
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub(crate) fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
}
