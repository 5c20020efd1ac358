//! Residual policy: observation vector, one-hidden-layer tanh network and
//! composition with the stance controller's command.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::gait::LegSchedule;
use crate::kinematics::wrap_angle;
use crate::sim::{RigidBodyState, NUM_LEGS};
use crate::stance::{clip_acceleration, JumpTask, StanceCommand, StanceConfig};

pub const OBS_DIM: usize = 29;
pub const ACT_DIM: usize = 6;
pub const OBS_STD_FLOOR: f64 = 1e-6;

pub type Observation = [f64; OBS_DIM];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControlMode {
    /// Controller plus residual.
    Residual,
    /// Residual forced to zero.
    ControllerOnly,
    /// Residual replaces the controller's command.
    PolicyOnly,
}

impl std::str::FromStr for ControlMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "residual" => Ok(Self::Residual),
            "controller-only" => Ok(Self::ControllerOnly),
            "policy-only" => Ok(Self::PolicyOnly),
            other => Err(format!(
                "unknown mode '{other}' (expected residual, controller-only or policy-only)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub hidden_units: usize,
    /// Scale of each raw output: linear acceleration (3), yaw acceleration, roll, pitch.
    pub action_scale: [f64; ACT_DIM],
    /// Bound on the composed roll and pitch commands.
    pub max_tilt: f64,
    /// Environment substeps per policy query.
    pub substeps_per_action: usize,
    /// Apply the attitude and yaw channels of the residual during swing.
    pub act_in_swing: bool,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            hidden_units: 256,
            action_scale: [5.0, 5.0, 5.0, 10.0, 0.3, 0.3],
            max_tilt: 0.5,
            substeps_per_action: 10,
            act_in_swing: true,
        }
    }
}

/// Position, roll/pitch/yaw, world velocity, body rates, body-frame feet,
/// displacement and yaw error to the landing target, time left in the cycle.
pub fn observe(state: &RigidBodyState, task: &JumpTask, schedule: &LegSchedule) -> Observation {
    let mut obs = [0.0; OBS_DIM];
    let (roll, pitch, yaw) = state.rpy();
    let r_inv = state.orientation.inverse();
    let target = task.target_position();
    let disp = target - state.position;
    let mut k = 0;
    let mut push = |v: &[f64]| {
        obs[k..k + v.len()].copy_from_slice(v);
        k += v.len();
    };
    push(state.position.as_slice());
    push(&[roll, pitch, yaw]);
    push(state.linear_velocity.as_slice());
    push(state.angular_velocity.as_slice());
    for leg in 0..NUM_LEGS {
        push((r_inv * (state.foot_positions[leg] - state.position)).as_slice());
    }
    push(disp.as_slice());
    push(&[wrap_angle(task.target_yaw() - yaw), schedule.remaining_cycle_time]);
    obs
}

/// Network weights (row-major) and frozen observation normalisation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub hidden_units: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub obs_mean: Vec<f64>,
    pub obs_std: Vec<f64>,
    pub action_scale: [f64; ACT_DIM],
}

impl PolicyParams {
    pub fn zeros(cfg: &PolicyConfig) -> Self {
        let h = cfg.hidden_units;
        Self {
            hidden_units: h,
            w1: vec![0.0; h * OBS_DIM],
            b1: vec![0.0; h],
            w2: vec![0.0; ACT_DIM * h],
            b2: vec![0.0; ACT_DIM],
            obs_mean: vec![0.0; OBS_DIM],
            obs_std: vec![1.0; OBS_DIM],
            action_scale: cfg.action_scale,
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// Trainable parameters in the order w1, b1, w2, b2.
    pub fn flat(&self) -> Vec<f64> {
        [&self.w1[..], &self.b1, &self.w2, &self.b2].concat()
    }

    pub fn set_flat(&mut self, theta: &[f64]) {
        assert_eq!(theta.len(), self.num_parameters(), "parameter vector length");
        let (a, rest) = theta.split_at(self.w1.len());
        let (b, rest) = rest.split_at(self.b1.len());
        let (c, d) = rest.split_at(self.w2.len());
        self.w1.copy_from_slice(a);
        self.b1.copy_from_slice(b);
        self.w2.copy_from_slice(c);
        self.b2.copy_from_slice(d);
    }

    pub fn with_flat(&self, theta: &[f64]) -> Self {
        let mut p = self.clone();
        p.set_flat(theta);
        p
    }

    pub fn is_zero(&self) -> bool {
        self.w2.iter().chain(&self.b2).all(|&v| v == 0.0)
    }

    pub fn validate(&self) -> Result<(), String> {
        let h = self.hidden_units;
        let shapes = [
            ("w1", self.w1.len(), h * OBS_DIM),
            ("b1", self.b1.len(), h),
            ("w2", self.w2.len(), ACT_DIM * h),
            ("b2", self.b2.len(), ACT_DIM),
            ("obs_mean", self.obs_mean.len(), OBS_DIM),
            ("obs_std", self.obs_std.len(), OBS_DIM),
        ];
        for (name, got, want) in shapes {
            if got != want {
                return Err(format!("{name} has {got} entries, expected {want}"));
            }
        }
        if self.obs_std.iter().any(|&s| !(s >= OBS_STD_FLOOR)) {
            return Err(format!("obs_std entries must be >= {OBS_STD_FLOOR}"));
        }
        Ok(())
    }

    /// Raw outputs in (-1, 1).
    pub fn forward_raw(&self, obs: &Observation) -> [f64; ACT_DIM] {
        let mut x = [0.0; OBS_DIM];
        for i in 0..OBS_DIM {
            x[i] = (obs[i] - self.obs_mean[i]) / self.obs_std[i].max(OBS_STD_FLOOR);
        }
        let mut out = [0.0; ACT_DIM];
        out.copy_from_slice(&self.b2);
        if self.is_zero() {
            return out.map(f64::tanh);
        }
        for (j, row) in self.w1.chunks_exact(OBS_DIM).enumerate() {
            let pre: f64 = self.b1[j] + row.iter().zip(&x).map(|(w, v)| w * v).sum::<f64>();
            let hidden = pre.tanh();
            for (a, o) in out.iter_mut().enumerate() {
                *o += self.w2[a * self.hidden_units + j] * hidden;
            }
        }
        out.map(f64::tanh)
    }

    pub fn forward(&self, obs: &Observation) -> ResidualAction {
        ResidualAction::from_raw(self.forward_raw(obs), &self.action_scale)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResidualAction {
    pub raw: [f64; ACT_DIM],
    /// Linear acceleration (3), yaw acceleration, roll, pitch.
    pub scaled: [f64; ACT_DIM],
}

impl ResidualAction {
    pub fn zero() -> Self {
        Self {
            raw: [0.0; ACT_DIM],
            scaled: [0.0; ACT_DIM],
        }
    }

    pub fn from_raw(raw: [f64; ACT_DIM], scale: &[f64; ACT_DIM]) -> Self {
        let raw = raw.map(|v| if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) });
        let scaled = std::array::from_fn(|i| raw[i] * scale[i]);
        Self { raw, scaled }
    }

    /// Keeps only the yaw-acceleration, roll and pitch channels.
    pub fn attitude_only(&self) -> Self {
        let mut out = *self;
        for i in 0..3 {
            out.raw[i] = 0.0;
            out.scaled[i] = 0.0;
        }
        out
    }
}

/// Componentwise sum clipped to the command bounds; the flag reports any clip.
pub fn compose(
    base: &StanceCommand,
    residual: &ResidualAction,
    stance_cfg: &StanceConfig,
    max_tilt: f64,
    gravity: f64,
) -> (StanceCommand, bool) {
    let b = base.to_array();
    let sum: [f64; ACT_DIM] = std::array::from_fn(|i| b[i] + residual.scaled[i]);
    let (linear, yaw) = clip_acceleration(Vector3::new(sum[0], sum[1], sum[2]), sum[3], stance_cfg, gravity);
    let out = StanceCommand {
        linear_acceleration: linear,
        yaw_acceleration: yaw,
        roll: sum[4].clamp(-max_tilt, max_tilt),
        pitch: sum[5].clamp(-max_tilt, max_tilt),
    };
    let clipped = out.to_array() != sum;
    (out, clipped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gait::schedule_at;
    use crate::sim::RobotModel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_params(seed: u64) -> PolicyParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = PolicyParams::zeros(&PolicyConfig::default());
        let theta: Vec<f64> = (0..p.num_parameters()).map(|_| rng.random_range(-0.3..0.3)).collect();
        p.set_flat(&theta);
        p
    }

    #[test]
    fn parameter_count() {
        assert_eq!(PolicyParams::zeros(&PolicyConfig::default()).num_parameters(), 9222);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let p = PolicyParams::zeros(&PolicyConfig::default());
        let a = p.forward(&[0.7; OBS_DIM]);
        assert_eq!(a.raw, [0.0; ACT_DIM]);
        assert_eq!(a.scaled, [0.0; ACT_DIM]);
    }

    #[test]
    fn outputs_inside_unit_box() {
        let p = random_params(3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let obs: Observation = std::array::from_fn(|_| rng.random_range(-10.0..10.0));
            assert!(p.forward_raw(&obs).iter().all(|v| v.abs() < 1.0 || v.abs() == 1.0));
        }
    }

    #[test]
    fn flat_roundtrip() {
        let p = random_params(5);
        let q = PolicyParams::zeros(&PolicyConfig::default()).with_flat(&p.flat());
        assert_eq!(p, q);
    }

    #[test]
    fn observe_at_target() {
        let model = RobotModel::default();
        let state = RigidBodyState::standing(&model, 0.27, 0.0);
        let task = JumpTask::new([0.0; 3], state.position, 0.0, 0.5);
        let obs = observe(&state, &task, &schedule_at(0.0, 0.5, 0.5).unwrap());
        assert_eq!(&obs[24..27], &[0.0, 0.0, 0.0]);
        assert_eq!(obs[27], 0.0);
        assert_eq!(obs[28], 1.0);
        let task = JumpTask::new([1.0, 0.0, 0.0], state.position, 0.0, 0.5);
        let obs = observe(&state, &task, &schedule_at(0.0, 0.5, 0.5).unwrap());
        assert_eq!(&obs[24..27], &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn compose_rules() {
        let cfg = StanceConfig::default();
        let base = StanceCommand {
            linear_acceleration: Vector3::new(1.0, 2.0, 3.0),
            yaw_acceleration: 0.5,
            roll: 0.0,
            pitch: 0.0,
        };
        let (c, clipped) = compose(&base, &ResidualAction::zero(), &cfg, 0.5, 9.81);
        assert_eq!(c, base);
        assert!(!clipped);

        let r = ResidualAction::from_raw([0.0, 0.0, 0.0, 0.0, 1.0 / 3.0, 0.0], &[5.0, 5.0, 5.0, 10.0, 0.3, 0.3]);
        let (c, _) = compose(&StanceCommand::default(), &r, &cfg, 0.5, 9.81);
        assert!((c.roll - 0.1).abs() < 1e-15);

        let big = StanceCommand {
            linear_acceleration: Vector3::new(38.0, 0.0, 0.0),
            ..StanceCommand::default()
        };
        let r = ResidualAction::from_raw([1.0, 0.0, 0.0, 0.0, 0.0, 0.0], &[5.0; 6]);
        let (c, clipped) = compose(&big, &r, &cfg, 0.5, 9.81);
        assert_eq!(c.linear_acceleration.x, 40.0);
        assert!(clipped);
    }
}
