//! Agricultural aerial application over a `[0, 20] x [0, 2]` field.

use std::f64::consts::FRAC_PI_2;

use rand::RngCore;

use super::{
    check_action, dist_sq, move_clipped, ConstraintFamily, EnvConfig, Environment, IndexBox, Orientation, StepResult,
};
use crate::error::Result;
use crate::nn::ActionInterval;

/// Spray deposit `c_y(s) = 1 / (1 + |y - s|^2)` that must reach
/// `d_y = peak * sum_i exp(-|y - P_i|^2 / width)` at every field location.
#[derive(Clone, Debug, PartialEq)]
pub struct AgriCoverage {
    pub index_box: IndexBox,
    pub centers: Vec<[f64; 2]>,
    pub peak: f64,
    pub width: f64,
    pub gamma_c: f64,
}

impl Default for AgriCoverage {
    fn default() -> Self {
        AgriCoverage {
            index_box: IndexBox::new(vec![0.0, 0.0], vec![20.0, 2.0]).unwrap(),
            centers: vec![[5.0, 1.5], [10.0, 0.5], [15.0, 1.5]],
            peak: 2.8,
            width: 0.5,
            gamma_c: 1.0,
        }
    }
}

impl ConstraintFamily for AgriCoverage {
    fn index_box(&self) -> &IndexBox {
        &self.index_box
    }

    fn orientation(&self) -> Orientation {
        Orientation::LowerBound
    }

    fn gamma_c(&self) -> f64 {
        self.gamma_c
    }

    fn cost(&self, y: &[f64], s: &[f64]) -> f64 {
        1.0 / (1.0 + dist_sq(y, s))
    }

    fn add_cost_grad_y(&self, y: &[f64], s: &[f64], scale: f64, out: &mut [f64]) {
        let q = 1.0 + dist_sq(y, s);
        let factor = -2.0 * scale / (q * q);
        out[0] += factor * (y[0] - s[0]);
        out[1] += factor * (y[1] - s[1]);
    }

    fn bound(&self, y: &[f64]) -> f64 {
        self.peak * self.centers.iter().map(|p| (-dist_sq(y, p) / self.width).exp()).sum::<f64>()
    }

    fn bound_grad_y(&self, y: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0, 0.0];
        for p in &self.centers {
            let factor = self.peak * (-dist_sq(y, p) / self.width).exp() * (-2.0 / self.width);
            g[0] += factor * (y[0] - p[0]);
            g[1] += factor * (y[1] - p[1]);
        }
        g
    }
}

#[derive(Clone, Debug)]
pub struct AgriEnv {
    pub config: EnvConfig,
    pub region: IndexBox,
    pub start: [f64; 2],
    pub goal_bonus: f64,
    pub family: AgriCoverage,
}

impl Default for AgriEnv {
    fn default() -> Self {
        AgriEnv {
            config: EnvConfig {
                step_length: 0.5,
                max_steps: 120,
                reach_radius: 0.5,
                gamma_r: 0.95,
            },
            region: IndexBox::new(vec![0.0, 0.0], vec![20.0, 2.0]).unwrap(),
            start: [0.0, 1.0],
            goal_bonus: 10.0,
            family: AgriCoverage::default(),
        }
    }
}

impl AgriEnv {
    /// The right boundary `x >= 20` ends the flight.
    pub fn reached(&self, s: &[f64]) -> bool {
        s[0] >= self.region.hi()[0]
    }
}

impl Environment for AgriEnv {
    fn name(&self) -> &'static str {
        "agri"
    }

    fn state_dim(&self) -> usize {
        2
    }

    fn action_intervals(&self) -> Vec<ActionInterval> {
        vec![ActionInterval {
            lo: -FRAC_PI_2,
            hi: FRAC_PI_2,
        }]
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
        self.start.to_vec()
    }

    /// Reward `0.1 * (x' - x)`, plus the bonus on reaching the right boundary.
    fn step(&self, s: &[f64], a: &[f64]) -> Result<StepResult> {
        check_action(&self.action_intervals(), a)?;
        let state = move_clipped(&self.region, s, a[0], self.config.step_length);
        let mut reward = 0.1 * (state[0] - s[0]);
        let terminal = self.reached(s) || self.reached(&state);
        if terminal {
            reward += self.goal_bonus;
        }
        Ok(StepResult {
            state,
            reward,
            terminal,
        })
    }
}
