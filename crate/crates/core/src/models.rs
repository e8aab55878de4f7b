//! Battery reliability, success probabilities and Poisson task worths.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("battery parameters must be positive (rho0 = {rho0}, rho1 = {rho1})")]
    BadBattery { rho0: f64, rho1: f64 },
    #[error("degenerate calibration points")]
    Degenerate,
    #[error("calibration requires t1 < t2 and 1 > r1 > r2 > 0")]
    BadCalibration,
    #[error("speeds must be positive (u = {u}, omega = {omega})")]
    BadSpeed { u: f64, omega: f64 },
}

/// Sigmoid battery model: `ρ0` is the curvature (1/s), `ρ1` the inflection time (s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatteryParams {
    pub rho0: f64,
    pub rho1: f64,
}

impl Default for BatteryParams {
    fn default() -> Self {
        Self { rho0: 3.0e-3, rho1: 1400.0 }
    }
}

impl BatteryParams {
    pub fn new(rho0: f64, rho1: f64) -> Result<Self, ModelError> {
        if rho0 > 0.0 && rho1 > 0.0 && rho0.is_finite() && rho1.is_finite() {
            Ok(Self { rho0, rho1 })
        } else {
            Err(ModelError::BadBattery { rho0, rho1 })
        }
    }

    /// Probability the battery is not yet drained at time `t` seconds.
    pub fn reliability(&self, t: f64) -> f64 {
        reliability(self, t)
    }
}

/// `R(t) = 1 / (1 + exp(ρ0 (t − ρ1)))`.
pub fn reliability(params: &BatteryParams, t: f64) -> f64 {
    // exp overflows past ~709
    let z = (params.rho0 * (t - params.rho1)).clamp(-700.0, 700.0);
    1.0 / (1.0 + z.exp())
}

/// Solves the two sigmoid equations `R(t1) = r1`, `R(t2) = r2` in closed form.
pub fn fit_battery_params(t1: f64, r1: f64, t2: f64, r2: f64) -> Result<BatteryParams, ModelError> {
    if t1 == t2 || r1 == r2 {
        return Err(ModelError::Degenerate);
    }
    if !(t1 < t2 && r1 < 1.0 && r1 > r2 && r2 > 0.0) {
        return Err(ModelError::BadCalibration);
    }
    // ρ0 (t − ρ1) = ln((1 − R) / R)
    let g1 = ((1.0 - r1) / r1).ln();
    let g2 = ((1.0 - r2) / r2).ln();
    let rho0 = (g2 - g1) / (t2 - t1);
    let rho1 = t1 - g1 / rho0;
    BatteryParams::new(rho0, rho1)
}

/// Inputs to a robot-task success probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuccessInputs {
    pub battery: BatteryParams,
    /// Accumulated tasking time `t_k` (s).
    pub tasking_time: f64,
    /// Euclidean distance to the task centroid (m).
    pub distance_m: f64,
    /// Unexplored cells left in the task.
    pub unexplored: usize,
    /// Travel speed `u` (m/s).
    pub travel_speed: f64,
    /// Tasking speed `ω` (cells/s).
    pub tasking_speed: f64,
    /// Remaining time on the current task when the robot finishes it first.
    pub extra_current_task_s: f64,
}

impl SuccessInputs {
    /// `t̃ = t_k + t_tr + t_r (+ t_c)`.
    pub fn projected_time(&self) -> Result<f64, ModelError> {
        if !(self.travel_speed > 0.0 && self.tasking_speed > 0.0) {
            return Err(ModelError::BadSpeed { u: self.travel_speed, omega: self.tasking_speed });
        }
        Ok(self.tasking_time
            + self.distance_m / self.travel_speed
            + self.unexplored as f64 / self.tasking_speed
            + self.extra_current_task_s)
    }
}

pub fn success_probability(inputs: &SuccessInputs) -> Result<f64, ModelError> {
    Ok(reliability(&inputs.battery, inputs.projected_time()?))
}

/// Expected undiscovered targets `E[max(X − ξ, 0)]` for `X ~ Poisson(λ)`.
pub fn remaining_worth(lambda: f64, discovered: u32) -> f64 {
    let xi = discovered as f64;
    // e^{-λ} Σ_{x=0}^{ξ} (ξ − x) λ^x / x!, pmf built incrementally
    let mut pmf = (-lambda).exp();
    let mut tail = 0.0;
    for x in 0..=discovered {
        if x > 0 {
            pmf *= lambda / x as f64;
        }
        tail += (xi - x as f64) * pmf;
    }
    ((lambda - xi) + tail).max(0.0)
}

/// `w_r = w̃_r · Π (1 − p)` over non-player robots already in the task.
pub fn available_worth(remaining: f64, non_player_probs: &[f64]) -> f64 {
    remaining * (1.0 - joint_success(non_player_probs))
}

/// `1 − Π (1 − p)`; zero for an empty set.
pub fn joint_success(probs: &[f64]) -> f64 {
    1.0 - probs.iter().map(|p| 1.0 - p).product::<f64>()
}
