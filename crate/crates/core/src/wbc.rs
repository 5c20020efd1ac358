//! Low-level whole-body controller.
//!
//! Fills the 18-value base command from the stance command, distributes
//! ground reaction forces over the stance feet with a constrained QP on the
//! single-rigid-body wrench map, and turns the result into per-motor
//! impedance commands (`q_des`, `qdot_des`, `tau_ff`).
//!
//! Force distribution is lexicographic: when the commanded wrench is
//! achievable inside the friction pyramids it is met exactly and the
//! smallest-norm force set is returned; otherwise the weighted wrench error
//! plus `alpha |f|^2` is minimised.

use nalgebra::{DMatrix, DVector, Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::kinematics::{self, JointAngles};
use crate::qp::{self, QpProblem, QpStatus};
use crate::sim::{project_friction, FootForces, RigidBodyState, RobotModel, NUM_LEGS};
use crate::stance::StanceCommand;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WbcConfig {
    pub kp: f64,
    pub kd: f64,
    pub tau_max: f64,
    /// Force regularisation used when the wrench cannot be met exactly.
    pub alpha: f64,
    pub linear_weight: f64,
    pub angular_weight: f64,
    pub max_iterations: usize,
    pub dls_lambda: f64,
}

impl Default for WbcConfig {
    fn default() -> Self {
        Self {
            kp: 30.0,
            kd: 1.0,
            tau_max: 35.0,
            alpha: 1e-3,
            linear_weight: 1.0,
            angular_weight: 10.0,
            max_iterations: 200,
            dls_lambda: 1e-4,
        }
    }
}

/// Desired base pose, velocity and acceleration (6 each) plus swing-foot
/// targets. A leg without a swing target is a stance leg.
#[derive(Clone, Debug, PartialEq)]
pub struct WbcCommand {
    /// x, y, z, roll, pitch, yaw.
    pub base_pose_des: [f64; 6],
    /// Linear (world) then angular (world).
    pub base_velocity_des: [f64; 6],
    /// Linear (world) then angular (world).
    pub base_acceleration_des: [f64; 6],
    pub swing_foot_targets: [Option<Vector3<f64>>; NUM_LEGS],
}

impl WbcCommand {
    pub fn is_stance(&self, leg: usize) -> bool {
        self.swing_foot_targets[leg].is_none()
    }

    pub fn stance_legs(&self) -> Vec<usize> {
        (0..NUM_LEGS).filter(|&l| self.is_stance(l)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.base_pose_des.iter().all(|v| v.is_finite())
            && self.base_velocity_des.iter().all(|v| v.is_finite())
            && self.base_acceleration_des.iter().all(|v| v.is_finite())
            && self.swing_foot_targets.iter().flatten().all(|p| p.iter().all(|v| v.is_finite()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MotorCommand {
    pub q_des: [JointAngles; NUM_LEGS],
    pub qdot_des: [Vector3<f64>; NUM_LEGS],
    pub tau_ff: [Vector3<f64>; NUM_LEGS],
    pub kp: f64,
    pub kd: f64,
    pub torque_limit: f64,
    pub dls_lambda: f64,
    /// IK target had to be pulled into the workspace.
    pub reach_clipped: [bool; NUM_LEGS],
    /// Feed-forward torque hit the limit.
    pub torque_clipped: [bool; NUM_LEGS],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DistributionStatus {
    /// Wrench met exactly.
    Exact,
    /// Wrench not achievable; weighted least-squares compromise.
    LeastSquares,
    NoStanceFeet,
    /// Iteration cap hit; best iterate returned.
    NonConvergence,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForceDistribution {
    pub forces: FootForces,
    pub status: DistributionStatus,
    pub iterations: usize,
    /// `|A f - b| / |b|` for the returned forces.
    pub wrench_error: f64,
    /// Max KKT residual of the QP that produced the forces.
    pub kkt_residual: f64,
}

/// The stance controller sets linear and yaw accelerations plus roll and
/// pitch; everything else holds the current state (angular velocity and
/// roll/pitch accelerations are zero).
pub fn assemble_command(stance_cmd: &StanceCommand, state: &RigidBodyState, swing_targets: [Option<Vector3<f64>>; NUM_LEGS]) -> WbcCommand {
    let p = state.position;
    let v = state.linear_velocity;
    let a = stance_cmd.linear_acceleration;
    WbcCommand {
        base_pose_des: [p.x, p.y, p.z, stance_cmd.roll, stance_cmd.pitch, state.yaw()],
        // joint damping acts on roll and pitch rate only
        base_velocity_des: [v.x, v.y, v.z, 0.0, 0.0, state.angular_velocity_world().z],
        base_acceleration_des: [a.x, a.y, a.z, 0.0, 0.0, stance_cmd.yaw_acceleration],
        swing_foot_targets: swing_targets,
    }
}

/// Wrench map of the stance feet: rows 0..3 world force, rows 3..6 body
/// moment about the CoM.
pub fn wrench_matrix(state: &RigidBodyState, legs: &[usize]) -> DMatrix<f64> {
    let rt = state.rotation().transpose();
    let mut a = DMatrix::zeros(6, 3 * legs.len());
    for (j, &leg) in legs.iter().enumerate() {
        let r = state.foot_positions[leg] - state.position;
        let moment = rt * r.cross_matrix();
        a.view_mut((0, 3 * j), (3, 3)).copy_from(&Matrix3::identity());
        a.view_mut((3, 3 * j), (3, 3)).copy_from(&moment);
    }
    a
}

/// Desired wrench `[m (a + g_up); I wdot + w x I w]`.
pub fn desired_wrench(cmd: &WbcCommand, state: &RigidBodyState, model: &RobotModel) -> DVector<f64> {
    let acc = &cmd.base_acceleration_des;
    let lin = (Vector3::new(acc[0], acc[1], acc[2]) - model.gravity_vector()) * model.mass;
    let inertia = model.inertia();
    let wdot_body = state.orientation.inverse() * Vector3::new(acc[3], acc[4], acc[5]);
    let w = state.angular_velocity;
    let ang = inertia * wdot_body + w.cross(&(inertia * w));
    DVector::from_vec(vec![lin.x, lin.y, lin.z, ang.x, ang.y, ang.z])
}

/// Friction pyramid and normal-force bounds in `C f >= d` form.
pub fn friction_constraints(num_feet: usize, mu: f64, f_max: f64) -> (DMatrix<f64>, DVector<f64>) {
    let mut c = DMatrix::zeros(6 * num_feet, 3 * num_feet);
    let mut d = DVector::zeros(6 * num_feet);
    for j in 0..num_feet {
        let (r, k) = (6 * j, 3 * j);
        c[(r, k + 2)] = 1.0;
        c[(r + 1, k + 2)] = -1.0;
        d[r + 1] = -f_max;
        for (row, axis, sign) in [(r + 2, k, -1.0), (r + 3, k, 1.0), (r + 4, k + 1, -1.0), (r + 5, k + 1, 1.0)] {
            c[(row, axis)] = sign;
            c[(row, k + 2)] = mu;
        }
    }
    (c, d)
}

pub fn distribute_forces(cmd: &WbcCommand, state: &RigidBodyState, model: &RobotModel, cfg: &WbcConfig) -> ForceDistribution {
    let legs = cmd.stance_legs();
    if legs.is_empty() {
        return ForceDistribution {
            forces: FootForces::zeros(),
            status: DistributionStatus::NoStanceFeet,
            iterations: 0,
            wrench_error: 0.0,
            kkt_residual: 0.0,
        };
    }
    let n = 3 * legs.len();
    let a = wrench_matrix(state, &legs);
    let b = desired_wrench(cmd, state, model);
    let (c, d) = friction_constraints(legs.len(), model.friction_coefficient, model.max_normal_force);

    let exact = QpProblem {
        hessian: DMatrix::identity(n, n),
        linear: DVector::zeros(n),
        eq_matrix: a.clone(),
        eq_rhs: b.clone(),
        ineq_matrix: c.clone(),
        ineq_rhs: d.clone(),
    };
    let mut iterations = 0;
    let mut outcome = None;
    if let Ok(sol) = qp::solve(&exact, cfg.max_iterations) {
        iterations += sol.iterations;
        if sol.status == QpStatus::Optimal {
            let kkt = exact.kkt_residual(&sol).max();
            outcome = Some((sol.x, DistributionStatus::Exact, kkt));
        }
    }
    if outcome.is_none() {
        let w = DMatrix::from_diagonal(&DVector::from_vec(vec![
            cfg.linear_weight,
            cfg.linear_weight,
            cfg.linear_weight,
            cfg.angular_weight,
            cfg.angular_weight,
            cfg.angular_weight,
        ]));
        let at_w = a.transpose() * &w;
        let (em, ev) = (DMatrix::zeros(0, n), DVector::zeros(0));
        let ls = QpProblem {
            hessian: &at_w * &a + DMatrix::identity(n, n) * cfg.alpha,
            linear: -(&at_w * &b),
            eq_matrix: em,
            eq_rhs: ev,
            ineq_matrix: c,
            ineq_rhs: d,
        };
        let sol = qp::solve(&ls, cfg.max_iterations.saturating_sub(iterations).max(1))
            .expect("regularised least-squares Hessian is positive definite");
        iterations += sol.iterations;
        let kkt = ls.kkt_residual(&sol).max();
        let status = match sol.status {
            QpStatus::Optimal => DistributionStatus::LeastSquares,
            _ => DistributionStatus::NonConvergence,
        };
        outcome = Some((sol.x, status, kkt));
    }
    let (x, status, kkt_residual) = outcome.expect("one stage always produces an iterate");

    let mut forces = FootForces::zeros();
    let mut stacked = DVector::zeros(n);
    for (j, &leg) in legs.iter().enumerate() {
        let raw = Vector3::new(x[3 * j], x[3 * j + 1], x[3 * j + 2]);
        // removes round-off violations so the pyramid holds exactly
        let f = project_friction(&raw, model.friction_coefficient, model.max_normal_force);
        forces.0[leg] = f;
        stacked.fixed_rows_mut::<3>(3 * j).copy_from(&f);
    }
    let wrench_error = (&a * &stacked - &b).norm() / b.norm().max(1e-9);
    ForceDistribution {
        forces,
        status,
        iterations,
        wrench_error,
        kkt_residual,
    }
}

/// IK targets, differential IK rates and Jacobian-transpose feed-forward
/// torques for every motor.
pub fn motor_command(cmd: &WbcCommand, forces: &FootForces, state: &RigidBodyState, model: &RobotModel, cfg: &WbcConfig) -> MotorCommand {
    let [px, py, pz, roll, pitch, yaw] = cmd.base_pose_des;
    let p_des = Vector3::new(px, py, pz);
    let r_des = UnitQuaternion::from_euler_angles(roll, pitch, yaw);
    let r_des_inv = r_des.inverse();
    let v_des = Vector3::new(cmd.base_velocity_des[0], cmd.base_velocity_des[1], cmd.base_velocity_des[2]);
    let w_des_body = r_des_inv * Vector3::new(cmd.base_velocity_des[3], cmd.base_velocity_des[4], cmd.base_velocity_des[5]);
    let r_inv = state.orientation.inverse();

    let mut out = MotorCommand {
        q_des: [JointAngles::zeros(); NUM_LEGS],
        qdot_des: [Vector3::zeros(); NUM_LEGS],
        tau_ff: [Vector3::zeros(); NUM_LEGS],
        kp: cfg.kp,
        kd: cfg.kd,
        torque_limit: cfg.tau_max,
        dls_lambda: cfg.dls_lambda,
        reach_clipped: [false; NUM_LEGS],
        torque_clipped: [false; NUM_LEGS],
    };

    for leg in 0..NUM_LEGS {
        let side = model.side(leg);
        let hip = model.hip_offset(leg);
        match cmd.swing_foot_targets[leg] {
            None => {
                let foot_body_des = r_des_inv * (state.foot_positions[leg] - p_des);
                let (local, clipped) = kinematics::clip_to_reach(&(foot_body_des - hip), &model.leg, side);
                let q_des = kinematics::inverse(&local, &model.leg, side).unwrap_or(JointAngles::zeros());
                let rel_vel = -w_des_body.cross(&foot_body_des) - r_des_inv * v_des;
                let j_des = kinematics::jacobian(&q_des, &model.leg, side);
                out.q_des[leg] = q_des;
                out.qdot_des[leg] = kinematics::damped_solve(&j_des, &rel_vel, cfg.dls_lambda);
                out.reach_clipped[leg] = clipped;

                let q_now = kinematics::inverse(&state.foot_in_hip_frame(model, leg), &model.leg, side).unwrap_or(q_des);
                let j_now = kinematics::jacobian(&q_now, &model.leg, side);
                let tau = j_now.transpose() * (-(r_inv * forces.0[leg]));
                let sat = tau.map(|t| t.clamp(-cfg.tau_max, cfg.tau_max));
                out.torque_clipped[leg] = sat != tau;
                out.tau_ff[leg] = sat;
            }
            Some(target) => {
                let local_raw = r_inv * (target - state.position) - hip;
                let (local, clipped) = kinematics::clip_to_reach(&local_raw, &model.leg, side);
                out.q_des[leg] = kinematics::inverse(&local, &model.leg, side).unwrap_or(JointAngles::zeros());
                out.reach_clipped[leg] = clipped;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{actuator_torques, torques_to_foot_forces};
    use approx::assert_relative_eq;

    fn stand() -> (RobotModel, RigidBodyState) {
        let model = RobotModel::default();
        let state = RigidBodyState::standing(&model, 0.27, 0.0);
        (model, state)
    }

    fn zero_cmd() -> StanceCommand {
        StanceCommand::default()
    }

    #[test]
    fn assemble_holds_current_pose_at_rest() {
        let (_, state) = stand();
        let cmd = assemble_command(&zero_cmd(), &state, [None; 4]);
        assert_eq!(cmd.base_pose_des, [0.0, 0.0, 0.27, 0.0, 0.0, 0.0]);
        assert_eq!(cmd.base_velocity_des, [0.0; 6]);
        assert_eq!(cmd.base_acceleration_des, [0.0; 6]);
    }

    #[test]
    fn assemble_slot_mapping() {
        let (_, mut state) = stand();
        state.linear_velocity = Vector3::new(0.3, -0.1, 0.2);
        state.angular_velocity = Vector3::new(0.5, 0.5, 0.5);
        let sc = StanceCommand {
            linear_acceleration: Vector3::new(0.0, 0.0, 9.81),
            yaw_acceleration: 2.0,
            roll: 0.1,
            pitch: -0.05,
        };
        let cmd = assemble_command(&sc, &state, [None; 4]);
        assert_eq!(&cmd.base_acceleration_des[..3], &[0.0, 0.0, 9.81]);
        assert_eq!(&cmd.base_acceleration_des[3..], &[0.0, 0.0, 2.0]);
        assert_eq!(cmd.base_pose_des[3], 0.1);
        assert_eq!(cmd.base_pose_des[4], -0.05);
        assert_eq!(&cmd.base_velocity_des[..3], &[0.3, -0.1, 0.2]);
        assert_eq!(&cmd.base_velocity_des[3..5], &[0.0, 0.0]);
        assert_eq!(cmd.base_velocity_des[5], state.angular_velocity_world().z);
    }

    #[test]
    fn hover_splits_weight_evenly() {
        let (model, state) = stand();
        let cmd = assemble_command(&zero_cmd(), &state, [None; 4]);
        let dist = distribute_forces(&cmd, &state, &model, &WbcConfig::default());
        assert_eq!(dist.status, DistributionStatus::Exact);
        for f in dist.forces.0 {
            assert_relative_eq!(f, Vector3::new(0.0, 0.0, 36.7875), epsilon = 1e-9);
        }
        assert!(dist.kkt_residual < 1e-6);
    }

    #[test]
    fn upward_acceleration_doubles_load() {
        let (model, state) = stand();
        let sc = StanceCommand {
            linear_acceleration: Vector3::new(0.0, 0.0, 9.81),
            ..zero_cmd()
        };
        let cmd = assemble_command(&sc, &state, [None; 4]);
        let dist = distribute_forces(&cmd, &state, &model, &WbcConfig::default());
        assert!((dist.forces.total().z - 294.3).abs() < 1e-3);
    }

    #[test]
    fn no_stance_feet_is_flagged() {
        let (model, state) = stand();
        let t = Some(Vector3::new(0.0, 0.0, 0.05));
        let cmd = assemble_command(&zero_cmd(), &state, [t; 4]);
        let dist = distribute_forces(&cmd, &state, &model, &WbcConfig::default());
        assert_eq!(dist.status, DistributionStatus::NoStanceFeet);
        assert_eq!(dist.forces, FootForces::zeros());
    }

    #[test]
    fn infeasible_command_falls_back_to_least_squares() {
        let (model, state) = stand();
        let sc = StanceCommand {
            linear_acceleration: Vector3::new(40.0, 0.0, 0.0),
            ..zero_cmd()
        };
        let cmd = assemble_command(&sc, &state, [None; 4]);
        let dist = distribute_forces(&cmd, &state, &model, &WbcConfig::default());
        assert_eq!(dist.status, DistributionStatus::LeastSquares);
        for f in dist.forces.0 {
            assert!(f.z >= 0.0 && f.x.abs() <= 0.6 * f.z && f.y.abs() <= 0.6 * f.z);
        }
        assert!(dist.kkt_residual < 1e-6);
    }

    #[test]
    fn zero_error_applies_feedforward_only() {
        let (model, state) = stand();
        let cmd = assemble_command(&zero_cmd(), &state, [None; 4]);
        let cfg = WbcConfig::default();
        let dist = distribute_forces(&cmd, &state, &model, &cfg);
        let motor = motor_command(&cmd, &dist.forces, &state, &model, &cfg);
        let applied = actuator_torques(&motor, &state, &model);
        for leg in 0..4 {
            assert!((applied[leg] - motor.tau_ff[leg]).norm() < 1e-9);
        }
        let back = torques_to_foot_forces(&applied, &state, &model);
        for leg in 0..4 {
            assert!((back.forces.0[leg] - dist.forces.0[leg]).norm() < 1e-9);
        }
    }

    #[test]
    fn pure_position_error_gives_kp_delta() {
        let (model, state) = stand();
        let cmd = assemble_command(&zero_cmd(), &state, [None; 4]);
        let cfg = WbcConfig::default();
        let mut motor = motor_command(&cmd, &FootForces::zeros(), &state, &model, &cfg);
        let delta = Vector3::new(0.01, -0.02, 0.03);
        for q in motor.q_des.iter_mut() {
            q.0 += delta;
        }
        let applied = actuator_torques(&motor, &state, &model);
        for tau in applied {
            assert_relative_eq!(tau, delta * cfg.kp, epsilon = 1e-9);
        }
    }

    #[test]
    fn feedforward_torque_saturates() {
        let (model, state) = stand();
        let mut forces = FootForces::zeros();
        forces.0[0] = Vector3::new(0.0, 0.0, 2000.0);
        let cmd = assemble_command(&zero_cmd(), &state, [None; 4]);
        let cfg = WbcConfig::default();
        let motor = motor_command(&cmd, &forces, &state, &model, &cfg);
        assert!(motor.torque_clipped[0]);
        assert!(motor.tau_ff[0].amax() <= cfg.tau_max);
    }

    #[test]
    fn swing_legs_get_no_feedforward() {
        let (model, state) = stand();
        let targets: [Option<Vector3<f64>>; 4] = std::array::from_fn(|l| Some(state.foot_positions[l] + Vector3::z() * 0.05));
        let cmd = assemble_command(&zero_cmd(), &state, targets);
        let cfg = WbcConfig::default();
        let motor = motor_command(&cmd, &FootForces::zeros(), &state, &model, &cfg);
        for leg in 0..4 {
            assert_eq!(motor.tau_ff[leg], Vector3::zeros());
            let p = kinematics::forward(&motor.q_des[leg], &model.leg, model.side(leg));
            let expected = state.foot_in_hip_frame(&model, leg) + Vector3::z() * 0.05;
            assert!((p - expected).norm() < 1e-9);
        }
    }
}
