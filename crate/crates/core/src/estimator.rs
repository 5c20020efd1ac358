//! Kalman filter over base position and linear velocity.
//!
//! Prediction integrates the world-frame accelerometer with the same
//! semi-implicit scheme as the simulator. Each stance foot yields a base
//! position pseudo-measurement: its anchor on the ground minus the rotated
//! leg offset from kinematics. Orientation and angular velocity are taken
//! from the IMU directly.

use nalgebra::{Matrix3, Matrix3x6, Matrix6, Vector3, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::sim::{RigidBodyState, NUM_LEGS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    /// Accelerometer noise injected into the measurement.
    pub accel_noise_std: f64,
    /// Foot-kinematics noise injected into each pseudo-measurement.
    pub foot_noise_std: f64,
    /// White-noise acceleration density assumed by the process model.
    pub process_accel_std: f64,
    /// Measurement standard deviation assumed by the update.
    pub measurement_std: f64,
    pub initial_position_std: f64,
    pub initial_velocity_std: f64,
    pub inject_noise: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            accel_noise_std: 0.1,
            foot_noise_std: 0.01,
            process_accel_std: 0.1,
            measurement_std: 0.01,
            initial_position_std: 1e-3,
            initial_velocity_std: 1e-3,
            inject_noise: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorState {
    /// Position then velocity.
    pub mean: Vector6<f64>,
    pub covariance: Matrix6<f64>,
}

impl EstimatorState {
    pub fn new(position: Vector3<f64>, velocity: Vector3<f64>, position_std: f64, velocity_std: f64) -> Self {
        let mut mean = Vector6::zeros();
        mean.fixed_rows_mut::<3>(0).copy_from(&position);
        mean.fixed_rows_mut::<3>(3).copy_from(&velocity);
        let p2 = position_std * position_std;
        let v2 = velocity_std * velocity_std;
        let covariance = Matrix6::from_diagonal(&Vector6::new(p2, p2, p2, v2, v2, v2));
        Self { mean, covariance }
    }

    pub fn position(&self) -> Vector3<f64> {
        self.mean.fixed_rows::<3>(0).into_owned()
    }

    pub fn velocity(&self) -> Vector3<f64> {
        self.mean.fixed_rows::<3>(3).into_owned()
    }
}

/// Process noise of a white acceleration entering through `[dt^2; dt]`.
pub fn process_noise(accel_std: f64, dt: f64) -> Matrix6<f64> {
    let mut b = Matrix6::zeros();
    let i = Matrix3::identity();
    b.fixed_view_mut::<3, 3>(0, 0).copy_from(&(i * (dt * dt)));
    b.fixed_view_mut::<3, 3>(3, 0).copy_from(&(i * dt));
    b * b.transpose() * (accel_std * accel_std)
}

fn symmetrize(p: &Matrix6<f64>) -> Matrix6<f64> {
    (p + p.transpose()) * 0.5
}

/// `v += a dt; p += v dt`, covariance `F P F^T + Q`.
pub fn predict(est: &EstimatorState, accel: &Vector3<f64>, dt: f64, q: &Matrix6<f64>) -> EstimatorState {
    let v = est.velocity() + accel * dt;
    let p = est.position() + v * dt;
    let mut mean = Vector6::zeros();
    mean.fixed_rows_mut::<3>(0).copy_from(&p);
    mean.fixed_rows_mut::<3>(3).copy_from(&v);
    let mut f = Matrix6::identity();
    f.fixed_view_mut::<3, 3>(0, 3).copy_from(&(Matrix3::identity() * dt));
    EstimatorState {
        mean,
        covariance: symmetrize(&(f * est.covariance * f.transpose() + q)),
    }
}

/// Sequential update with one base-position measurement per contact foot.
/// Returns the input unchanged when no foot is in contact.
pub fn update(
    est: &EstimatorState,
    implied_positions: &[Vector3<f64>; NUM_LEGS],
    contacts: &[bool; NUM_LEGS],
    measurement_std: f64,
) -> EstimatorState {
    let h = Matrix3x6::new(
        1.0, 0.0, 0.0, 0.0, 0.0, 0.0, //
        0.0, 1.0, 0.0, 0.0, 0.0, 0.0, //
        0.0, 0.0, 1.0, 0.0, 0.0, 0.0,
    );
    let r = Matrix3::identity() * (measurement_std * measurement_std);
    let mut out = est.clone();
    for leg in 0..NUM_LEGS {
        if !contacts[leg] {
            continue;
        }
        let innovation = implied_positions[leg] - out.position();
        let s = h * out.covariance * h.transpose() + r;
        let Some(s_inv) = s.try_inverse() else { continue };
        let k = out.covariance * h.transpose() * s_inv;
        out.mean += k * innovation;
        let a = Matrix6::identity() - k * h;
        out.covariance = symmetrize(&(a * out.covariance * a.transpose() + k * r * k.transpose()));
    }
    out
}

/// Filter plus foot anchors and the noise source.
#[derive(Clone, Debug)]
pub struct Estimator {
    pub state: EstimatorState,
    anchors: [Option<Vector3<f64>>; NUM_LEGS],
    cfg: EstimatorConfig,
    rng: ChaCha8Rng,
}

impl Estimator {
    pub fn new(truth: &RigidBodyState, cfg: &EstimatorConfig, seed: u64) -> Self {
        let state = EstimatorState::new(
            truth.position,
            truth.linear_velocity,
            cfg.initial_position_std,
            cfg.initial_velocity_std,
        );
        let anchors = std::array::from_fn(|leg| truth.foot_in_contact[leg].then_some(truth.foot_positions[leg]));
        Self {
            state,
            anchors,
            cfg: cfg.clone(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn noise(&mut self, std: f64) -> Vector3<f64> {
        if !self.cfg.inject_noise || std <= 0.0 {
            return Vector3::zeros();
        }
        let n = Normal::new(0.0, std).expect("finite std");
        Vector3::new(n.sample(&mut self.rng), n.sample(&mut self.rng), n.sample(&mut self.rng))
    }

    /// One filter cycle after a simulator step. `accel` is the true world
    /// acceleration over the step; `truth` supplies IMU attitude and leg
    /// kinematics.
    pub fn advance(&mut self, accel: &Vector3<f64>, truth: &RigidBodyState, dt: f64) {
        let measured = accel + self.noise(self.cfg.accel_noise_std);
        let q = process_noise(self.cfg.process_accel_std, dt);
        self.state = predict(&self.state, &measured, dt, &q);

        let mut implied = [Vector3::zeros(); NUM_LEGS];
        for leg in 0..NUM_LEGS {
            if !truth.foot_in_contact[leg] {
                self.anchors[leg] = None;
                continue;
            }
            // foot relative to the base, as leg kinematics would report it
            let offset = truth.foot_positions[leg] - truth.position + self.noise(self.cfg.foot_noise_std);
            let anchor = *self.anchors[leg].get_or_insert_with(|| {
                let mut a = self.state.position() + offset;
                a.z = 0.0;
                a
            });
            implied[leg] = anchor - offset;
        }
        self.state = update(&self.state, &implied, &truth.foot_in_contact, self.cfg.measurement_std);
    }

    /// `truth` with position and velocity replaced by the estimate; feet
    /// keep their true offsets from the base.
    pub fn observed(&self, truth: &RigidBodyState) -> RigidBodyState {
        let mut s = truth.clone();
        let p = self.state.position();
        for foot in s.foot_positions.iter_mut() {
            *foot = p + (*foot - truth.position);
        }
        s.position = p;
        s.linear_velocity = self.state.velocity();
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::RobotModel;
    use approx::assert_relative_eq;

    fn rest() -> EstimatorState {
        EstimatorState::new(Vector3::new(0.0, 0.0, 0.27), Vector3::zeros(), 1e-3, 1e-3)
    }

    #[test]
    fn rest_propagation_adds_q() {
        let e = rest();
        let q = process_noise(0.1, 0.002);
        let n = predict(&e, &Vector3::zeros(), 0.002, &q);
        assert_eq!(n.mean, e.mean);
        assert!(n.covariance.trace() > e.covariance.trace());
    }

    #[test]
    fn free_fall_is_ballistic() {
        let mut e = EstimatorState::new(Vector3::zeros(), Vector3::new(0.0, 0.0, 2.4525), 1e-3, 1e-3);
        let q = process_noise(0.1, 0.002);
        let mut v = 2.4525;
        let mut z = 0.0;
        for _ in 0..125 {
            e = predict(&e, &Vector3::new(0.0, 0.0, -9.81), 0.002, &q);
            v -= 9.81 * 0.002;
            z += v * 0.002;
        }
        assert_relative_eq!(e.position().z, z, epsilon = 1e-12);
        assert!((e.position().z - 0.3066).abs() < 0.003);
    }

    #[test]
    fn zero_innovation_keeps_mean() {
        let e = rest();
        let m = [e.position(); 4];
        let u = update(&e, &m, &[true; 4], 0.01);
        assert_relative_eq!(u.mean, e.mean, epsilon = 1e-15);
        assert!(u.covariance.trace() <= e.covariance.trace());
    }

    #[test]
    fn no_contacts_is_identity() {
        let e = rest();
        let m = [Vector3::new(1.0, 2.0, 3.0); 4];
        assert_eq!(update(&e, &m, &[false; 4], 0.01), e);
    }

    #[test]
    fn converges_from_offset() {
        let model = RobotModel::default();
        let truth = RigidBodyState::standing(&model, 0.27, 0.0);
        let mut e = EstimatorState::new(Vector3::new(0.02, -0.01, 0.25), Vector3::new(0.1, 0.0, 0.0), 0.05, 0.2);
        let q = process_noise(0.1, 0.002);
        for _ in 0..100 {
            e = predict(&e, &Vector3::zeros(), 0.002, &q);
            e = update(&e, &[truth.position; 4], &[true; 4], 0.01);
        }
        assert!((e.position() - truth.position).norm() < 1e-3);
    }

    #[test]
    fn covariance_stays_psd() {
        let mut e = rest();
        let q = process_noise(0.1, 0.002);
        for k in 0..500 {
            e = predict(&e, &Vector3::zeros(), 0.002, &q);
            if k % 3 == 0 {
                e = update(&e, &[e.position(); 4], &[true, false, true, k % 2 == 0], 0.01);
            }
            let min = e.covariance.symmetric_eigenvalues().min();
            assert!(min >= -1e-10);
        }
    }

    #[test]
    fn flight_drift_matches_noise_integral() {
        let model = RobotModel::default();
        let mut truth = RigidBodyState::standing(&model, 0.3, 0.0);
        truth.foot_in_contact = [false; 4];
        let cfg = EstimatorConfig {
            inject_noise: true,
            ..EstimatorConfig::default()
        };
        let mut est = Estimator::new(&truth, &cfg, 11);
        let mut replay = ChaCha8Rng::seed_from_u64(11);
        let n = Normal::new(0.0, cfg.accel_noise_std).unwrap();
        let mut integral = Vector3::zeros();
        for _ in 0..250 {
            est.advance(&Vector3::zeros(), &truth, 0.002);
            integral += Vector3::new(n.sample(&mut replay), n.sample(&mut replay), n.sample(&mut replay)) * 0.002;
        }
        assert_relative_eq!(est.state.velocity(), integral, epsilon = 1e-12);
    }
}
