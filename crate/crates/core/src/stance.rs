//! Acceleration-based stance controller.
//!
//! The jump task fixes a lift-off velocity; the controller tracks it with a
//! time-to-go law and retreats to a low preparation stand whenever the
//! predicted CoM path under that law leaves the feasible box around the
//! current CoM.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::gait::LegSchedule;
use crate::sim::{RigidBodyState, NUM_LEGS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StanceConfig {
    /// Horizontal half-extent of the feasible CoM box, centred on the current CoM.
    pub box_half_extent: f64,
    pub box_min_height: f64,
    pub box_max_height: f64,
    /// Lower bound on the time-to-go divisor.
    pub min_time_to_go: f64,
    pub prep_height: f64,
    pub prep_kp: f64,
    pub prep_kd: f64,
    pub max_linear_acceleration: f64,
    pub max_yaw_acceleration: f64,
    pub prediction_dt: f64,
}

impl Default for StanceConfig {
    fn default() -> Self {
        Self {
            box_half_extent: 0.15,
            box_min_height: 0.12,
            box_max_height: 0.32,
            min_time_to_go: 0.02,
            prep_height: 0.16,
            prep_kp: 100.0,
            prep_kd: 20.0,
            max_linear_acceleration: 40.0,
            max_yaw_acceleration: 40.0,
            prediction_dt: 0.002,
        }
    }
}

/// One jump: planar displacement and yaw change relative to the pose at
/// the start of the jump, expressed in the start heading frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpTask {
    pub displacement: [f64; 3],
    pub start_position: Vector3<f64>,
    pub start_yaw: f64,
    pub swing_duration: f64,
}

impl JumpTask {
    pub fn new(displacement: [f64; 3], start_position: Vector3<f64>, start_yaw: f64, swing_duration: f64) -> Self {
        Self {
            displacement,
            start_position,
            start_yaw,
            swing_duration,
        }
    }

    /// Planar displacement rotated into the world frame.
    pub fn world_displacement(&self) -> Vector2<f64> {
        let (s, c) = self.start_yaw.sin_cos();
        let [px, py, _] = self.displacement;
        Vector2::new(c * px - s * py, s * px + c * py)
    }

    /// Desired landing position; z keeps the start height.
    pub fn target_position(&self) -> Vector3<f64> {
        let d = self.world_displacement();
        self.start_position + Vector3::new(d.x, d.y, 0.0)
    }

    pub fn target_yaw(&self) -> f64 {
        self.start_yaw + self.displacement[2]
    }

    pub fn planar_distance(&self) -> f64 {
        self.displacement[0].hypot(self.displacement[1])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiftoffVelocity {
    /// World frame; z is always positive.
    pub linear: Vector3<f64>,
    pub yaw_rate: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StanceCommand {
    pub linear_acceleration: Vector3<f64>,
    pub yaw_acceleration: f64,
    pub roll: f64,
    pub pitch: f64,
}

impl StanceCommand {
    pub fn to_array(&self) -> [f64; 6] {
        let a = self.linear_acceleration;
        [a.x, a.y, a.z, self.yaw_acceleration, self.roll, self.pitch]
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        Self {
            linear_acceleration: Vector3::new(v[0], v[1], v[2]),
            yaw_acceleration: v[3],
            roll: v[4],
            pitch: v[5],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StanceBranch {
    Track,
    Prepare,
}

/// Planar and yaw rates cover the displacement in one swing; the vertical
/// rate is the minimum that keeps the robot airborne for the swing.
pub fn liftoff_velocity(task: &JumpTask, gravity: f64) -> LiftoffVelocity {
    let t = task.swing_duration;
    let d = task.world_displacement();
    LiftoffVelocity {
        linear: Vector3::new(d.x / t, d.y / t, 0.5 * gravity * t),
        yaw_rate: task.displacement[2] / t,
    }
}

/// Clamps linear acceleration to `[-a_max, a_max]` (z to `[-g, a_max]`)
/// and yaw acceleration to `[-alpha_max, alpha_max]`.
pub fn clip_acceleration(linear: Vector3<f64>, yaw: f64, cfg: &StanceConfig, gravity: f64) -> (Vector3<f64>, f64) {
    let a = cfg.max_linear_acceleration;
    (
        Vector3::new(linear.x.clamp(-a, a), linear.y.clamp(-a, a), linear.z.clamp(-gravity, a)),
        yaw.clamp(-cfg.max_yaw_acceleration, cfg.max_yaw_acceleration),
    )
}

/// Time-to-go law `(v_liftoff - v) / max(t, t_floor)`, clipped.
pub fn tracking_acceleration(
    target: &LiftoffVelocity,
    velocity: &Vector3<f64>,
    yaw_rate: f64,
    t_remaining: f64,
    cfg: &StanceConfig,
    gravity: f64,
) -> (Vector3<f64>, f64) {
    let t = t_remaining.max(cfg.min_time_to_go);
    clip_acceleration((target.linear - velocity) / t, (target.yaw_rate - yaw_rate) / t, cfg, gravity)
}

/// Visits every point of the CoM path under constant acceleration, sampled
/// every `dt` and at `t_remaining`; returns the lift-off point.
fn integrate_path(
    position: &Vector3<f64>,
    velocity: &Vector3<f64>,
    accel: &Vector3<f64>,
    t_remaining: f64,
    dt: f64,
    mut visit: impl FnMut(&Vector3<f64>),
) -> Vector3<f64> {
    let (mut p, mut v) = (*position, *velocity);
    visit(&p);
    let mut elapsed = 0.0;
    while elapsed < t_remaining {
        let h = dt.min(t_remaining - elapsed);
        p += v * h + accel * (0.5 * h * h);
        v += accel * h;
        elapsed += h;
        visit(&p);
    }
    p
}

/// Predicted CoM at lift-off under constant acceleration. Each sub-step is
/// integrated exactly, so the result matches `p + v t + a t^2 / 2`.
pub fn predict_liftoff_com(
    position: &Vector3<f64>,
    velocity: &Vector3<f64>,
    accel: &Vector3<f64>,
    t_remaining: f64,
    dt: f64,
) -> Vector3<f64> {
    integrate_path(position, velocity, accel, t_remaining.max(0.0), dt, |_| {})
}

pub fn in_feasible_box(point: &Vector3<f64>, center: &Vector3<f64>, cfg: &StanceConfig) -> bool {
    (point.x - center.x).abs() <= cfg.box_half_extent
        && (point.y - center.y).abs() <= cfg.box_half_extent
        && point.z >= cfg.box_min_height
        && point.z <= cfg.box_max_height
}

/// True if every sampled CoM position until lift-off stays inside the box
/// around the current CoM.
pub fn path_is_feasible(
    position: &Vector3<f64>,
    velocity: &Vector3<f64>,
    accel: &Vector3<f64>,
    t_remaining: f64,
    cfg: &StanceConfig,
) -> bool {
    let mut ok = true;
    integrate_path(position, velocity, accel, t_remaining.max(0.0), cfg.prediction_dt, |p| {
        ok &= in_feasible_box(p, position, cfg);
    });
    ok
}

/// Low stand above the centroid of the stance feet.
pub fn preparation_target(state: &RigidBodyState, cfg: &StanceConfig) -> Vector3<f64> {
    let feet: Vec<_> = (0..NUM_LEGS)
        .filter(|&l| state.foot_in_contact[l])
        .map(|l| state.foot_positions[l])
        .collect();
    let (x, y) = if feet.is_empty() {
        (state.position.x, state.position.y)
    } else {
        let c: Vector3<f64> = feet.iter().sum::<Vector3<f64>>() / feet.len() as f64;
        (c.x, c.y)
    };
    Vector3::new(x, y, cfg.prep_height)
}

pub fn preparation_command(state: &RigidBodyState, cfg: &StanceConfig, gravity: f64) -> StanceCommand {
    let target = preparation_target(state, cfg);
    let raw = (target - state.position) * cfg.prep_kp - state.linear_velocity * cfg.prep_kd;
    let yaw_rate = state.angular_velocity_world().z;
    let (linear, yaw) = clip_acceleration(raw, -cfg.prep_kd * yaw_rate, cfg, gravity);
    StanceCommand {
        linear_acceleration: linear,
        yaw_acceleration: yaw,
        roll: 0.0,
        pitch: 0.0,
    }
}

/// `state` carries the estimated position and velocity. Roll and pitch are
/// always zero.
pub fn select_command(
    state: &RigidBodyState,
    task: &JumpTask,
    schedule: &LegSchedule,
    cfg: &StanceConfig,
    gravity: f64,
) -> (StanceCommand, StanceBranch) {
    let t = schedule.remaining_phase_time;
    let target = liftoff_velocity(task, gravity);
    let yaw_rate = state.angular_velocity_world().z;
    let (linear, yaw) = tracking_acceleration(&target, &state.linear_velocity, yaw_rate, t, cfg, gravity);
    if path_is_feasible(&state.position, &state.linear_velocity, &linear, t, cfg) {
        let cmd = StanceCommand {
            linear_acceleration: linear,
            yaw_acceleration: yaw,
            roll: 0.0,
            pitch: 0.0,
        };
        (cmd, StanceBranch::Track)
    } else {
        (preparation_command(state, cfg, gravity), StanceBranch::Prepare)
    }
}
