//! Swing-leg targets: Raibert foot placement and the foot path between
//! lift-off and touchdown.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::sim::{RigidBodyState, RobotModel};

/// Velocity the Raibert feedback term steers towards.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesiredVelocity {
    /// Planar lift-off velocity of the current jump.
    Liftoff,
    Zero,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SwingConfig {
    pub raibert_gain: f64,
    pub apex_height: f64,
    /// Largest horizontal distance between a target and its neutral point.
    pub max_step_offset: f64,
    pub desired_velocity: DesiredVelocity,
}

impl Default for SwingConfig {
    fn default() -> Self {
        Self {
            raibert_gain: 0.03,
            apex_height: 0.05,
            max_step_offset: 0.1,
            desired_velocity: DesiredVelocity::Liftoff,
        }
    }
}

/// `hip_xy + (T_stance / 2) v + k (v - v_des)` on the ground.
pub fn raibert_target(
    com_velocity: &Vector3<f64>,
    desired_velocity: &Vector3<f64>,
    hip_world: &Vector3<f64>,
    stance_duration: f64,
    gain: f64,
) -> Vector3<f64> {
    let offset = com_velocity * (0.5 * stance_duration) + (com_velocity - desired_velocity) * gain;
    Vector3::new(hip_world.x + offset.x, hip_world.y + offset.y, 0.0)
}

/// Ground point under the leg's neutral foot position, using yaw only.
pub fn neutral_point(state: &RigidBodyState, model: &RobotModel, leg: usize) -> Vector3<f64> {
    let (s, c) = state.yaw().sin_cos();
    let n = model.neutral_foot_offset(leg);
    Vector3::new(state.position.x + c * n.x - s * n.y, state.position.y + s * n.x + c * n.y, 0.0)
}

/// Limits the horizontal distance from `neutral` to `max_offset`.
pub fn clip_step(target: &Vector3<f64>, neutral: &Vector3<f64>, max_offset: f64) -> Vector3<f64> {
    let d = Vector2::new(target.x - neutral.x, target.y - neutral.y);
    let n = d.norm();
    if n <= max_offset {
        return *target;
    }
    let d = d * (max_offset / n);
    Vector3::new(neutral.x + d.x, neutral.y + d.y, target.z)
}

/// Landing target of one leg, inside the step limit.
pub fn foot_target(
    state: &RigidBodyState,
    model: &RobotModel,
    leg: usize,
    desired_velocity: &Vector3<f64>,
    stance_duration: f64,
    cfg: &SwingConfig,
) -> Vector3<f64> {
    let neutral = neutral_point(state, model, leg);
    let v = Vector3::new(state.linear_velocity.x, state.linear_velocity.y, 0.0);
    let v_des = Vector3::new(desired_velocity.x, desired_velocity.y, 0.0);
    let raw = raibert_target(&v, &v_des, &neutral, stance_duration, cfg.raibert_gain);
    clip_step(&raw, &neutral, cfg.max_step_offset)
}

/// Cubic blend horizontally, parabolic bump of `apex_height` vertically.
pub fn swing_path(start: &Vector3<f64>, target: &Vector3<f64>, phase: f64, apex_height: f64) -> Vector3<f64> {
    let s = phase.clamp(0.0, 1.0);
    if s == 0.0 {
        return *start;
    }
    if s == 1.0 {
        return *target;
    }
    let blend = s * s * (3.0 - 2.0 * s);
    let mut p = start + (target - start) * blend;
    p.z += 4.0 * apex_height * s * (1.0 - s);
    p
}
