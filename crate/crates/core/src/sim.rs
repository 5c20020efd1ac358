//! Single-rigid-body quadruped simulator with massless legs.
//!
//! Stance feet are pinned to the ground and transmit the force implied by
//! their joint torques (`f = -R (J^T)^-1 tau`), projected onto the friction
//! pyramid. Swing feet are placed kinematically on their targets, clipped to
//! the reachable shell around the hip. The base is integrated with
//! semi-implicit Euler: linear velocity and world angular momentum are
//! updated first, then position and orientation with the new values.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gait::LegSchedule;
use crate::kinematics::{self, JointAngles, LegGeometry, Side};
use crate::wbc::MotorCommand;

pub const NUM_LEGS: usize = 4;
pub const LEG_NAMES: [&str; NUM_LEGS] = ["FR", "FL", "RR", "RL"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("non-finite simulation state at t = {time}")]
    NonFiniteState { time: f64 },
    #[error("leg {leg} Jacobian is singular (|det| < 1e-8)")]
    SingularJacobian { leg: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotModel {
    pub mass: f64,
    /// Body-frame inertia about the CoM, row-major.
    pub inertia: [[f64; 3]; 3],
    /// Hip positions in the body frame, ordered FR, FL, RR, RL.
    pub hip_offsets: [[f64; 3]; NUM_LEGS],
    pub leg: LegGeometry,
    pub friction_coefficient: f64,
    pub max_normal_force: f64,
    pub gravity: f64,
    /// Outer radius of the hip-centred sphere a foot can reach.
    pub max_reach: f64,
    /// Inner radius set by the knee flexion limit.
    pub min_reach: f64,
    pub touchdown_tolerance: f64,
    pub nominal_height: f64,
    /// Base collision box (length, width, height).
    pub body_box: [f64; 3],
}

impl Default for RobotModel {
    fn default() -> Self {
        let (m, l, w, h) = (15.0, 0.38, 0.29, 0.11);
        let k = m / 12.0;
        Self {
            mass: m,
            inertia: [
                [k * (w * w + h * h), 0.0, 0.0],
                [0.0, k * (l * l + h * h), 0.0],
                [0.0, 0.0, k * (l * l + w * w)],
            ],
            hip_offsets: [
                [0.1881, -0.04675, 0.0],
                [0.1881, 0.04675, 0.0],
                [-0.1881, -0.04675, 0.0],
                [-0.1881, 0.04675, 0.0],
            ],
            leg: LegGeometry::default(),
            friction_coefficient: 0.6,
            max_normal_force: 500.0,
            gravity: 9.81,
            max_reach: 0.40,
            min_reach: 0.15,
            touchdown_tolerance: 0.01,
            nominal_height: 0.27,
            body_box: [l, w, h],
        }
    }
}

impl RobotModel {
    pub fn inertia(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.inertia[r][c])
    }

    pub fn hip_offset(&self, leg: usize) -> Vector3<f64> {
        Vector3::from(self.hip_offsets[leg])
    }

    pub fn side(&self, leg: usize) -> Side {
        if self.hip_offsets[leg][1] >= 0.0 {
            Side::Left
        } else {
            Side::Right
        }
    }

    pub fn gravity_vector(&self) -> Vector3<f64> {
        Vector3::new(0.0, 0.0, -self.gravity)
    }

    /// Foot position directly below the hip, shifted sideways by the
    /// abduction offset, in the body frame (z = 0 at hip height).
    pub fn neutral_foot_offset(&self, leg: usize) -> Vector3<f64> {
        let mut p = self.hip_offset(leg);
        p.y += self.side(leg).sign() * self.leg.abduction_offset;
        p
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.mass > 0.0) {
            return Err("robot.mass must be positive".into());
        }
        if !(self.friction_coefficient > 0.0) {
            return Err("robot.friction_coefficient must be positive".into());
        }
        if !(self.leg.thigh_length > 0.0 && self.leg.calf_length > 0.0) {
            return Err("robot.leg lengths must be positive".into());
        }
        if !(self.min_reach >= 0.0 && self.min_reach < self.max_reach) {
            return Err("robot.min_reach must lie in [0, max_reach)".into());
        }
        let i = self.inertia();
        if (i - i.transpose()).abs().max() > 1e-12 {
            return Err("robot.inertia must be symmetric".into());
        }
        if i.cholesky().is_none() {
            return Err("robot.inertia must be positive definite".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidBodyState {
    pub position: Vector3<f64>,
    /// World-from-body rotation.
    pub orientation: UnitQuaternion<f64>,
    /// World frame.
    pub linear_velocity: Vector3<f64>,
    /// Body frame.
    pub angular_velocity: Vector3<f64>,
    /// World frame.
    pub foot_positions: [Vector3<f64>; NUM_LEGS],
    pub foot_in_contact: [bool; NUM_LEGS],
    pub time: f64,
}

impl RigidBodyState {
    /// Robot at rest at `height`, feet on the ground below the neutral
    /// points and pinned.
    pub fn standing(model: &RobotModel, height: f64, yaw: f64) -> Self {
        let orientation = UnitQuaternion::from_euler_angles(0.0, 0.0, yaw);
        let position = Vector3::new(0.0, 0.0, height);
        let feet = std::array::from_fn(|i| {
            let mut p = position + orientation * model.neutral_foot_offset(i);
            p.z = 0.0;
            p
        });
        Self {
            position,
            orientation,
            linear_velocity: Vector3::zeros(),
            angular_velocity: Vector3::zeros(),
            foot_positions: feet,
            foot_in_contact: [true; NUM_LEGS],
            time: 0.0,
        }
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        *self.orientation.to_rotation_matrix().matrix()
    }

    /// Roll, pitch, yaw (Z-Y-X convention).
    pub fn rpy(&self) -> (f64, f64, f64) {
        self.orientation.euler_angles()
    }

    pub fn yaw(&self) -> f64 {
        self.rpy().2
    }

    pub fn angular_velocity_world(&self) -> Vector3<f64> {
        self.orientation * self.angular_velocity
    }

    pub fn angular_momentum_world(&self, model: &RobotModel) -> Vector3<f64> {
        self.orientation * (model.inertia() * self.angular_velocity)
    }

    pub fn hip_world(&self, model: &RobotModel, leg: usize) -> Vector3<f64> {
        self.position + self.orientation * model.hip_offset(leg)
    }

    /// Foot position relative to its hip, in the body frame.
    pub fn foot_in_hip_frame(&self, model: &RobotModel, leg: usize) -> Vector3<f64> {
        self.orientation.inverse() * (self.foot_positions[leg] - self.position) - model.hip_offset(leg)
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.orientation.coords.iter().all(|v| v.is_finite())
            && self.linear_velocity.iter().all(|v| v.is_finite())
            && self.angular_velocity.iter().all(|v| v.is_finite())
            && self.foot_positions.iter().all(|p| p.iter().all(|v| v.is_finite()))
    }

    /// World positions of the eight corners of the base collision box.
    pub fn body_corners(&self, model: &RobotModel) -> [Vector3<f64>; 8] {
        let [l, w, h] = model.body_box;
        std::array::from_fn(|k| {
            let sx = if k & 1 == 0 { 0.5 } else { -0.5 };
            let sy = if k & 2 == 0 { 0.5 } else { -0.5 };
            let sz = if k & 4 == 0 { 0.5 } else { -0.5 };
            self.position + self.orientation * Vector3::new(sx * l, sy * w, sz * h)
        })
    }
}

/// Ground reaction forces on the robot, world frame, one per foot.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FootForces(pub [Vector3<f64>; NUM_LEGS]);

impl FootForces {
    pub fn zeros() -> Self {
        Self([Vector3::zeros(); NUM_LEGS])
    }

    pub fn total(&self) -> Vector3<f64> {
        self.0.iter().sum()
    }
}

/// Result of mapping joint torques to contact forces.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForceMap {
    pub forces: FootForces,
    pub singular: [bool; NUM_LEGS],
}

/// Joint state of one leg recovered from the base pose and foot position.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LegJointState {
    pub q: JointAngles,
    pub qdot: Vector3<f64>,
}

/// Contact force produced by one leg's joint torques.
pub fn leg_force_from_torque(
    tau: &Vector3<f64>,
    q: &JointAngles,
    geo: &LegGeometry,
    side: Side,
    rotation: &Matrix3<f64>,
    leg: usize,
) -> Result<Vector3<f64>, SimError> {
    let j = kinematics::jacobian(q, geo, side);
    if kinematics::is_singular(&j) {
        return Err(SimError::SingularJacobian { leg });
    }
    let jt_inv = j.transpose().try_inverse().ok_or(SimError::SingularJacobian { leg })?;
    Ok(rotation * (-(jt_inv * tau)))
}

/// Maps joint torques to world-frame ground reaction forces for the feet in
/// contact. Singular legs contribute zero and are flagged.
pub fn torques_to_foot_forces(joint_torques: &[Vector3<f64>; NUM_LEGS], state: &RigidBodyState, model: &RobotModel) -> ForceMap {
    let rotation = state.rotation();
    let mut forces = FootForces::zeros();
    let mut singular = [false; NUM_LEGS];
    for leg in 0..NUM_LEGS {
        if !state.foot_in_contact[leg] {
            continue;
        }
        let side = model.side(leg);
        let local = state.foot_in_hip_frame(model, leg);
        let f = kinematics::inverse(&local, &model.leg, side)
            .map_err(|_| SimError::SingularJacobian { leg })
            .and_then(|q| leg_force_from_torque(&joint_torques[leg], &q, &model.leg, side, &rotation, leg));
        match f {
            Ok(f) => forces.0[leg] = f,
            Err(_) => singular[leg] = true,
        }
    }
    ForceMap { forces, singular }
}

/// Unilateral contact with a per-axis friction pyramid:
/// `f_z` in `[0, f_max]`, then `|f_x|, |f_y| <= mu f_z`.
pub fn project_friction(force: &Vector3<f64>, mu: f64, f_max: f64) -> Vector3<f64> {
    let fz = force.z.clamp(0.0, f_max);
    let lim = mu * fz;
    Vector3::new(force.x.clamp(-lim, lim), force.y.clamp(-lim, lim), fz)
}

/// Recovers joint angles and rates of every leg. Rates assume the foot is
/// stationary in the world, which holds for pinned feet; swing legs are
/// massless so their rates never affect the dynamics.
pub fn leg_joint_states(state: &RigidBodyState, model: &RobotModel, dls_lambda: f64) -> [Option<LegJointState>; NUM_LEGS] {
    let r_inv = state.orientation.inverse();
    let v_body = r_inv * state.linear_velocity;
    let w = state.angular_velocity;
    std::array::from_fn(|leg| {
        let side = model.side(leg);
        let local = state.foot_in_hip_frame(model, leg);
        let q = kinematics::inverse(&local, &model.leg, side).ok()?;
        let foot_body = local + model.hip_offset(leg);
        let rel_vel = -w.cross(&foot_body) - v_body;
        let j = kinematics::jacobian(&q, &model.leg, side);
        let qdot = kinematics::damped_solve(&j, &rel_vel, dls_lambda);
        Some(LegJointState { q, qdot })
    })
}

/// Joint-level impedance actuator: `tau = kp (q_des - q) + kd (qd_des - qd) + tau_ff`,
/// saturated at the command's torque limit.
pub fn actuator_torques(cmd: &MotorCommand, state: &RigidBodyState, model: &RobotModel) -> [Vector3<f64>; NUM_LEGS] {
    let joints = leg_joint_states(state, model, cmd.dls_lambda);
    std::array::from_fn(|leg| match joints[leg] {
        Some(js) => {
            let tau = (cmd.q_des[leg].0 - js.q.0) * cmd.kp + (cmd.qdot_des[leg] - js.qdot) * cmd.kd + cmd.tau_ff[leg];
            tau.map(|t| t.clamp(-cmd.torque_limit, cmd.torque_limit))
        }
        None => Vector3::zeros(),
    })
}

/// Per-step diagnostics returned alongside the new state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub forces: FootForces,
    pub singular: [bool; NUM_LEGS],
    /// Net contact force (world) and moment about the CoM (body frame).
    pub wrench: [f64; 6],
    /// Linear acceleration of the base, world frame, gravity included.
    pub linear_acceleration: Vector3<f64>,
}

/// Projects a world-frame point onto the reachable shell around `hip`.
pub fn clip_to_shell(target: &Vector3<f64>, hip: &Vector3<f64>, min_reach: f64, max_reach: f64) -> Vector3<f64> {
    let d = target - hip;
    let n = d.norm();
    if n > max_reach {
        hip + d * (max_reach / n)
    } else if n < min_reach {
        if n > 1e-12 {
            hip + d * (min_reach / n)
        } else {
            hip - Vector3::z() * min_reach
        }
    } else {
        *target
    }
}

pub fn step(
    state: &RigidBodyState,
    joint_torques: &[Vector3<f64>; NUM_LEGS],
    swing_targets: &[Vector3<f64>; NUM_LEGS],
    schedule: &LegSchedule,
    model: &RobotModel,
    dt: f64,
) -> Result<(RigidBodyState, StepReport), SimError> {
    let map = torques_to_foot_forces(joint_torques, state, model);
    let mut forces = FootForces::zeros();
    let mut f_total = Vector3::zeros();
    let mut moment_world = Vector3::zeros();
    for leg in 0..NUM_LEGS {
        if !state.foot_in_contact[leg] {
            continue;
        }
        let f = project_friction(&map.forces.0[leg], model.friction_coefficient, model.max_normal_force);
        forces.0[leg] = f;
        f_total += f;
        moment_world += (state.foot_positions[leg] - state.position).cross(&f);
    }

    let inertia = model.inertia();
    let inertia_inv = inertia.try_inverse().unwrap_or_else(Matrix3::identity);
    let accel = f_total / model.mass + model.gravity_vector();

    let velocity = state.linear_velocity + accel * dt;
    let position = state.position + velocity * dt;

    let momentum = state.orientation * (inertia * state.angular_velocity) + moment_world * dt;
    let omega_mid = inertia_inv * (state.orientation.inverse() * momentum);
    let mut orientation = state.orientation * UnitQuaternion::from_scaled_axis(omega_mid * dt);
    orientation.renormalize();
    let angular_velocity = inertia_inv * (orientation.inverse() * momentum);

    let mut next = RigidBodyState {
        position,
        orientation,
        linear_velocity: velocity,
        angular_velocity,
        foot_positions: state.foot_positions,
        foot_in_contact: state.foot_in_contact,
        time: state.time + dt,
    };

    for leg in 0..NUM_LEGS {
        let hip = next.hip_world(model, leg);
        let target = clip_to_shell(&swing_targets[leg], &hip, model.min_reach, model.max_reach);
        let scheduled_stance = schedule.desired_contact[leg];
        if state.foot_in_contact[leg] {
            let foot = state.foot_positions[leg];
            let reach = (foot - hip).norm();
            if reach > model.max_reach {
                // leg fully extended: contact cannot be maintained
                next.foot_in_contact[leg] = false;
                next.foot_positions[leg] = hip + (foot - hip) * (model.max_reach / reach);
            } else if !scheduled_stance && target.z > 0.0 {
                next.foot_in_contact[leg] = false;
                next.foot_positions[leg] = target;
            }
        } else if target.z <= 0.0 || (scheduled_stance && target.z <= model.touchdown_tolerance) {
            next.foot_in_contact[leg] = true;
            next.foot_positions[leg] = Vector3::new(target.x, target.y, 0.0);
        } else {
            next.foot_positions[leg] = target;
        }
    }

    if !next.is_finite() {
        return Err(SimError::NonFiniteState { time: next.time });
    }

    let m_body = state.orientation.inverse() * moment_world;
    Ok((
        next,
        StepReport {
            forces,
            singular: map.singular,
            wrench: [f_total.x, f_total.y, f_total.z, m_body.x, m_body.y, m_body.z],
            linear_acceleration: accel,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gait::schedule_at;
    use approx::assert_relative_eq;

    fn swing_schedule() -> LegSchedule {
        schedule_at(0.6, 0.5, 0.5).unwrap()
    }

    fn stance_schedule() -> LegSchedule {
        schedule_at(0.1, 0.5, 0.5).unwrap()
    }

    fn stance_torques_for(state: &RigidBodyState, model: &RobotModel, f: &[Vector3<f64>; 4]) -> [Vector3<f64>; 4] {
        let r = state.rotation();
        std::array::from_fn(|leg| {
            let side = model.side(leg);
            let q = kinematics::inverse(&state.foot_in_hip_frame(model, leg), &model.leg, side).unwrap();
            kinematics::jacobian(&q, &model.leg, side).transpose() * (-(r.transpose() * f[leg]))
        })
    }

    #[test]
    fn friction_projection_examples() {
        let mu = 0.6;
        assert_eq!(
            project_friction(&Vector3::new(0.0, 0.0, 100.0), mu, 500.0),
            Vector3::new(0.0, 0.0, 100.0)
        );
        assert_relative_eq!(
            project_friction(&Vector3::new(80.0, 0.0, 100.0), mu, 500.0),
            Vector3::new(60.0, 0.0, 100.0),
            epsilon = 1e-12
        );
        assert_eq!(project_friction(&Vector3::new(10.0, 10.0, -5.0), mu, 500.0), Vector3::zeros());
        assert_eq!(project_friction(&Vector3::new(0.0, 0.0, 900.0), mu, 500.0).z, 500.0);
    }

    #[test]
    fn zero_torque_gives_zero_force() {
        let model = RobotModel::default();
        let state = RigidBodyState::standing(&model, 0.27, 0.0);
        let map = torques_to_foot_forces(&[Vector3::zeros(); 4], &state, &model);
        assert_eq!(map.forces, FootForces::zeros());
        assert_eq!(map.singular, [false; 4]);
    }

    #[test]
    fn statics_torque_maps_to_weight() {
        let model = RobotModel::default();
        let state = RigidBodyState::standing(&model, 0.27, 0.0);
        let per_foot = model.mass * model.gravity / 4.0;
        let f = [Vector3::new(0.0, 0.0, per_foot); 4];
        let tau = stance_torques_for(&state, &model, &f);
        let map = torques_to_foot_forces(&tau, &state, &model);
        for leg in 0..4 {
            assert_relative_eq!(map.forces.0[leg], f[leg], epsilon = 1e-9);
        }
        assert_relative_eq!(map.forces.total().z, 147.15, epsilon = 1e-9);
    }

    #[test]
    fn straight_leg_is_flagged() {
        let model = RobotModel::default();
        let mut state = RigidBodyState::standing(&model, 0.426, 0.0);
        // straight leg: foot exactly at full extension below the hip
        for leg in 0..4 {
            state.foot_positions[leg] = state.position + model.neutral_foot_offset(leg) - Vector3::z() * 0.426;
        }
        let map = torques_to_foot_forces(&[Vector3::new(1.0, 1.0, 1.0); 4], &state, &model);
        assert_eq!(map.singular, [true; 4]);
        assert_eq!(map.forces, FootForces::zeros());
    }

    #[test]
    fn static_stand_stays_still() {
        let model = RobotModel::default();
        let mut state = RigidBodyState::standing(&model, 0.27, 0.0);
        let per_foot = model.mass * model.gravity / 4.0;
        for _ in 0..50 {
            let tau = stance_torques_for(&state, &model, &[Vector3::new(0.0, 0.0, per_foot); 4]);
            let targets = state.foot_positions;
            let (next, _) = step(&state, &tau, &targets, &stance_schedule(), &model, 0.002).unwrap();
            assert!(next.linear_velocity.norm() < 1e-9);
            for leg in 0..4 {
                assert!((next.foot_positions[leg] - state.foot_positions[leg]).norm() < 1e-12);
                assert!(next.foot_in_contact[leg]);
            }
            state = next;
        }
    }

    #[test]
    fn ballistic_flight_returns_on_time() {
        let model = RobotModel::default();
        let mut state = RigidBodyState::standing(&model, 0.3, 0.0);
        state.foot_in_contact = [false; 4];
        state.linear_velocity = Vector3::new(0.0, 0.0, 2.4525);
        let z0 = state.position.z;
        let mut apex: f64 = z0;
        let mut cross = None;
        for k in 1..=300 {
            let targets: [Vector3<f64>; 4] = std::array::from_fn(|leg| state.hip_world(&model, leg) - Vector3::z() * 0.2);
            let (next, _) = step(&state, &[Vector3::zeros(); 4], &targets, &swing_schedule(), &model, 0.002).unwrap();
            apex = apex.max(next.position.z);
            if cross.is_none() && k > 10 && next.position.z <= z0 {
                cross = Some(k as f64 * 0.002);
            }
            state = next;
        }
        assert!((apex - z0 - 0.3066).abs() < 0.005, "apex rise {}", apex - z0);
        let t = cross.unwrap();
        assert!((t - 0.5).abs() < 0.005, "return time {t}");
    }

    #[test]
    fn torque_free_spin_conserves_momentum() {
        let model = RobotModel::default();
        let mut state = RigidBodyState::standing(&model, 0.5, 0.0);
        state.foot_in_contact = [false; 4];
        state.angular_velocity = Vector3::new(1.3, -2.1, 3.5);
        let l0 = state.angular_momentum_world(&model);
        for _ in 0..250 {
            let targets: [Vector3<f64>; 4] = std::array::from_fn(|leg| state.hip_world(&model, leg) - Vector3::z() * 0.2);
            state = step(&state, &[Vector3::zeros(); 4], &targets, &swing_schedule(), &model, 0.002)
                .unwrap()
                .0;
            assert!((state.orientation.coords.norm() - 1.0).abs() < 1e-9);
        }
        let l1 = state.angular_momentum_world(&model);
        assert!((l1 - l0).norm() / l0.norm() < 1e-6);
    }

    #[test]
    fn swing_foot_lifts_and_touches_down() {
        let model = RobotModel::default();
        let state = RigidBodyState::standing(&model, 0.27, 0.0);
        let lifted: [Vector3<f64>; 4] = std::array::from_fn(|leg| state.foot_positions[leg] + Vector3::z() * 0.03);
        let (air, _) = step(&state, &[Vector3::zeros(); 4], &lifted, &swing_schedule(), &model, 0.002).unwrap();
        assert_eq!(air.foot_in_contact, [false; 4]);
        let ground: [Vector3<f64>; 4] = std::array::from_fn(|leg| state.foot_positions[leg] + Vector3::z() * 0.005);
        let (landed, _) = step(&air, &[Vector3::zeros(); 4], &ground, &stance_schedule(), &model, 0.002).unwrap();
        assert_eq!(landed.foot_in_contact, [true; 4]);
        assert!(landed.foot_positions.iter().all(|p| p.z == 0.0));
    }

    #[test]
    fn low_body_forces_early_touchdown() {
        let model = RobotModel::default();
        let mut state = RigidBodyState::standing(&model, 0.10, 0.0);
        state.foot_in_contact = [false; 4];
        state.foot_positions.iter_mut().for_each(|p| p.z = 0.02);
        let targets = state.foot_positions;
        let (next, _) = step(&state, &[Vector3::zeros(); 4], &targets, &swing_schedule(), &model, 0.002).unwrap();
        // the knee limit pushes the foot below the ground
        assert_eq!(next.foot_in_contact, [true; 4]);
    }

    #[test]
    fn nan_state_is_rejected() {
        let model = RobotModel::default();
        let mut state = RigidBodyState::standing(&model, 0.27, 0.0);
        state.linear_velocity.x = f64::NAN;
        let targets = state.foot_positions;
        let err = step(&state, &[Vector3::zeros(); 4], &targets, &stance_schedule(), &model, 0.002).unwrap_err();
        assert!(matches!(err, SimError::NonFiniteState { .. }));
    }

    #[test]
    fn step_is_deterministic() {
        let model = RobotModel::default();
        let mut state = RigidBodyState::standing(&model, 0.27, 0.3);
        state.angular_velocity = Vector3::new(0.1, 0.2, -0.3);
        let tau = [Vector3::new(0.3, -2.0, 4.0); 4];
        let targets = state.foot_positions;
        let a = step(&state, &tau, &targets, &stance_schedule(), &model, 0.002).unwrap().0;
        let b = step(&state, &tau, &targets, &stance_schedule(), &model, 0.002).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn default_model_is_valid() {
        RobotModel::default().validate().unwrap();
        let mut m = RobotModel::default();
        m.inertia[0][1] = 0.5;
        assert!(m.validate().is_err());
    }
}
