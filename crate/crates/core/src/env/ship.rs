//! Ship route planning on the unit square around an ecological reserve.

use std::f64::consts::PI;

use rand::RngCore;

use super::{
    check_action, dist, move_clipped, ConstraintFamily, EnvConfig, Environment, IndexBox, Orientation, StepResult,
};
use crate::error::Result;
use crate::nn::ActionInterval;

/// Pollution `c_y(s) = exp(-decay |y - s|)` against the threshold
/// `d_y = base + scale * exp(growth |y - reserve|)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ShipPollution {
    pub index_box: IndexBox,
    pub reserve: [f64; 2],
    pub decay: f64,
    pub base: f64,
    pub scale: f64,
    pub growth: f64,
    pub gamma_c: f64,
}

impl Default for ShipPollution {
    fn default() -> Self {
        ShipPollution {
            index_box: IndexBox::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap(),
            reserve: [0.5, 0.5],
            decay: 15.0,
            base: 0.015,
            scale: 0.005,
            growth: 20.0,
            gamma_c: 1.0,
        }
    }
}

impl ConstraintFamily for ShipPollution {
    fn index_box(&self) -> &IndexBox {
        &self.index_box
    }

    fn orientation(&self) -> Orientation {
        Orientation::UpperBound
    }

    fn gamma_c(&self) -> f64 {
        self.gamma_c
    }

    fn cost(&self, y: &[f64], s: &[f64]) -> f64 {
        (-self.decay * dist(y, s)).exp()
    }

    fn add_cost_grad_y(&self, y: &[f64], s: &[f64], scale: f64, out: &mut [f64]) {
        let r = dist(y, s);
        // |y - s| is not differentiable at y = s; that term is dropped.
        if r == 0.0 {
            return;
        }
        let factor = scale * -self.decay * (-self.decay * r).exp() / r;
        out[0] += factor * (y[0] - s[0]);
        out[1] += factor * (y[1] - s[1]);
    }

    fn bound(&self, y: &[f64]) -> f64 {
        self.base + self.scale * (self.growth * dist(y, &self.reserve)).exp()
    }

    fn bound_grad_y(&self, y: &[f64]) -> Vec<f64> {
        let r = dist(y, &self.reserve);
        if r == 0.0 {
            return vec![0.0, 0.0];
        }
        let factor = self.scale * self.growth * (self.growth * r).exp() / r;
        vec![factor * (y[0] - self.reserve[0]), factor * (y[1] - self.reserve[1])]
    }
}

#[derive(Clone, Debug)]
pub struct ShipEnv {
    pub config: EnvConfig,
    pub region: IndexBox,
    pub start: [f64; 2],
    pub destination: [f64; 2],
    pub goal_bonus: f64,
    pub family: ShipPollution,
}

impl Default for ShipEnv {
    fn default() -> Self {
        ShipEnv {
            config: EnvConfig {
                step_length: 0.05,
                max_steps: 200,
                reach_radius: 0.05,
                gamma_r: 1.0,
            },
            region: IndexBox::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap(),
            start: [0.0, 0.0],
            destination: [1.0, 1.0],
            goal_bonus: 5.0,
            family: ShipPollution::default(),
        }
    }
}

impl ShipEnv {
    pub fn reached(&self, s: &[f64]) -> bool {
        dist(s, &self.destination) <= self.config.reach_radius
    }
}

impl Environment for ShipEnv {
    fn name(&self) -> &'static str {
        "ship"
    }

    fn state_dim(&self) -> usize {
        2
    }

    fn action_intervals(&self) -> Vec<ActionInterval> {
        vec![ActionInterval { lo: 0.0, hi: 2.0 * PI }]
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

    /// Reward is `-0.1 (|s - D| + 1)` on the pre-move state, plus the goal
    /// bonus when `s` or the next state is within `reach_radius` of `D`.
    fn step(&self, s: &[f64], a: &[f64]) -> Result<StepResult> {
        check_action(&self.action_intervals(), a)?;
        let mut reward = -0.1 * (dist(s, &self.destination) + 1.0);
        let state = move_clipped(&self.region, s, a[0], self.config.step_length);
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
