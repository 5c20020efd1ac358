//! Jumping environment.
//!
//! One policy tick runs `substeps_per_action` simulator steps. Each step
//! reads the contact schedule, builds the stance command (controller,
//! residual or both), places the swing feet, runs the whole-body
//! controller and the actuator model, advances the simulator and the
//! estimator, and accrues reward. A new jump task is recorded from the
//! estimated pose at every cycle boundary.

use std::sync::Arc;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Config;
use crate::estimator::Estimator;
use crate::gait::LegSchedule;
use crate::kinematics::wrap_angle;
use crate::policy::{self, ControlMode, Observation, PolicyParams, ResidualAction};
use crate::sim::{self, RigidBodyState, RobotModel, NUM_LEGS};
use crate::stance::{self, JumpTask, StanceBranch, StanceCommand};
use crate::swing::{self, DesiredVelocity};
use crate::wbc;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    /// Per jump: forward, left (m) and yaw change (rad) in the heading frame
    /// at the start of the jump.
    pub jump_sequence: Vec<[f64; 3]>,
    pub alive_bonus: f64,
    pub position_weight: f64,
    pub orientation_weight: f64,
    pub contact_weight: f64,
    /// Floor on the jump distance that normalises the position term.
    pub distance_floor: f64,
    pub min_height: f64,
    /// Minimum dot product of body-up with world-up.
    pub min_upright: f64,
    pub init_height_noise: f64,
    pub init_tilt_noise: f64,
    pub init_yaw_noise: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            jump_sequence: vec![
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [-0.5, 0.0, 0.0],
                [0.0, 0.2, 0.0],
                [0.0, -0.2, 0.0],
            ],
            alive_bonus: 4.0,
            position_weight: 1.0,
            orientation_weight: 5.0,
            contact_weight: 0.4,
            distance_floor: 0.1,
            min_height: 0.08,
            min_upright: 0.6,
            init_height_noise: 0.01,
            init_tilt_noise: 0.02,
            init_yaw_noise: 0.05,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardTerms {
    pub alive: f64,
    /// Non-positive.
    pub position: f64,
    /// Non-positive.
    pub orientation: f64,
    /// Non-positive.
    pub contact: f64,
    pub total: f64,
}

/// Alive bonus plus weighted position, orientation and contact penalties.
pub fn compute_reward(
    state: &RigidBodyState,
    task: &JumpTask,
    desired_contact: &[bool; NUM_LEGS],
    contacts: &[bool; NUM_LEGS],
    cfg: &EpisodeConfig,
) -> RewardTerms {
    let target = task.target_position();
    let dx = state.position.x - target.x;
    let dy = state.position.y - target.y;
    let norm = task.planar_distance().max(cfg.distance_floor);
    let position = -(dx * dx + dy * dy) / (norm * norm);
    let (roll, pitch, _) = state.rpy();
    let orientation = -(roll * roll + pitch * pitch);
    let contact = -((0..NUM_LEGS).filter(|&l| contacts[l] != desired_contact[l]).count() as f64);
    let total = cfg.alive_bonus + cfg.position_weight * position + cfg.orientation_weight * orientation + cfg.contact_weight * contact;
    RewardTerms {
        alive: cfg.alive_bonus,
        position,
        orientation,
        contact,
        total,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Height,
    Orientation,
    BodyContact,
    NonFinite,
}

pub fn check_termination(state: &RigidBodyState, model: &RobotModel, cfg: &EpisodeConfig) -> Option<Termination> {
    if state.position.z < cfg.min_height {
        return Some(Termination::Height);
    }
    let up = state.orientation * Vector3::z();
    if up.z < cfg.min_upright {
        return Some(Termination::Orientation);
    }
    if state.body_corners(model).iter().any(|c| c.z < 0.0) {
        return Some(Termination::BodyContact);
    }
    None
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("step called after the episode finished")]
    EpisodeFinished,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepInfo {
    pub time: f64,
    pub jump_index: usize,
    pub termination: Option<Termination>,
    pub sequence_complete: bool,
    /// The composed stance command hit a bound during this tick.
    pub command_clipped: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub seed: u64,
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub ticks: usize,
    pub duration: f64,
    pub jumps_completed: usize,
    pub termination: Option<Termination>,
    /// Longest all-feet-airborne interval starting in each cycle.
    pub flight_times: Vec<f64>,
    /// Planar CoM distance to the target at the end of each jump cycle.
    pub landing_errors: Vec<f64>,
    pub landing_positions: Vec<[f64; 2]>,
    pub targets: Vec<[f64; 3]>,
    /// Yaw change over each jump cycle.
    pub yaw_progress: Vec<f64>,
    pub peak_yaw_rate: f64,
}

impl EpisodeSummary {
    pub fn mean_flight_time(&self) -> f64 {
        mean(&self.flight_times)
    }

    pub fn success(&self) -> bool {
        self.termination.is_none()
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Column names of a trajectory row.
pub const TRAJECTORY_COLUMNS: &[&str] = &[
    "time",
    "px",
    "py",
    "pz",
    "qw",
    "qx",
    "qy",
    "qz",
    "vx",
    "vy",
    "vz",
    "wx",
    "wy",
    "wz", //
    "fr_x",
    "fr_y",
    "fr_z",
    "fl_x",
    "fl_y",
    "fl_z",
    "rr_x",
    "rr_y",
    "rr_z",
    "rl_x",
    "rl_y",
    "rl_z", //
    "c_fr",
    "c_fl",
    "c_rr",
    "c_rl",
    "force_x",
    "force_y",
    "force_z",
    "moment_x",
    "moment_y",
    "moment_z", //
    "roll",
    "pitch",
    "yaw",
    "yaw_rate",
    "desired_contact",
    "reward",
    "r_alive",
    "r_position",
    "r_orientation",
    "r_contact", //
    "target_x",
    "target_y",
    "target_yaw",
    "est_pos_err",
    "est_vel_err",
    "qp_iterations",
    "wrench_error",
    "prepare",
];

/// One simulator step, laid out as `TRAJECTORY_COLUMNS`.
pub type TrajectoryRow = Vec<f64>;

fn trajectory_row(
    s: &RigidBodyState,
    report: &sim::StepReport,
    desired: bool,
    reward: &RewardTerms,
    task: &JumpTask,
    est: &Estimator,
    dist: &wbc::ForceDistribution,
    branch: StanceBranch,
) -> TrajectoryRow {
    let (roll, pitch, yaw) = s.rpy();
    let q = s.orientation.quaternion();
    let target = task.target_position();
    let mut row = Vec::with_capacity(TRAJECTORY_COLUMNS.len());
    row.push(s.time);
    row.extend(s.position.iter());
    row.extend([q.w, q.i, q.j, q.k]);
    row.extend(s.linear_velocity.iter());
    row.extend(s.angular_velocity.iter());
    for f in &s.foot_positions {
        row.extend(f.iter());
    }
    row.extend(s.foot_in_contact.map(|c| c as u8 as f64));
    row.extend(report.wrench);
    row.extend([roll, pitch, yaw, s.angular_velocity_world().z, desired as u8 as f64]);
    row.extend([reward.total, reward.alive, reward.position, reward.orientation, reward.contact]);
    row.extend([target.x, target.y, task.target_yaw()]);
    row.push((est.state.position() - s.position).norm());
    row.push((est.state.velocity() - s.linear_velocity).norm());
    row.extend([
        dist.iterations as f64,
        dist.wrench_error,
        (branch == StanceBranch::Prepare) as u8 as f64,
    ]);
    row
}

/// Parses a jump-sequence override.
///
/// Forms: `jump_turn:<deg>deg×<n>`, `omni:<dist>m@<deg>deg[×<n>]`,
/// `seq:<x>/<y>/<yaw_deg>;...`. `x` is accepted for `×`.
pub fn parse_task_override(text: &str) -> Result<Vec<[f64; 3]>, String> {
    let text = text.trim();
    let (kind, rest) = text.split_once(':').ok_or_else(|| format!("task '{text}' has no ':'"))?;
    let num =
        |s: &str, what: &str| -> Result<f64, String> { s.trim().parse::<f64>().map_err(|_| format!("bad {what} '{s}' in task '{text}'")) };
    let split_repeat = |s: &str| -> Result<(String, usize), String> {
        match s.rsplit_once(['×', 'x']) {
            Some((body, n)) if !n.is_empty() && n.chars().all(|c| c.is_ascii_digit()) => {
                let n: usize = n.parse().map_err(|_| format!("bad repeat count in task '{text}'"))?;
                if n == 0 {
                    return Err(format!("repeat count must be positive in task '{text}'"));
                }
                Ok((body.to_string(), n))
            }
            _ => Ok((s.to_string(), 1)),
        }
    };
    match kind {
        "jump_turn" => {
            let (body, n) = split_repeat(rest)?;
            let deg = body
                .strip_suffix("deg")
                .ok_or_else(|| format!("jump_turn angle needs 'deg' in '{text}'"))?;
            Ok(vec![[0.0, 0.0, num(deg, "angle")?.to_radians()]; n])
        }
        "omni" => {
            let (body, n) = split_repeat(rest)?;
            let (dist, angle) = body.split_once('@').ok_or_else(|| format!("omni task needs '@' in '{text}'"))?;
            let d = num(dist.strip_suffix('m').unwrap_or(dist), "distance")?;
            let a = num(angle.strip_suffix("deg").unwrap_or(angle), "angle")?.to_radians();
            Ok(vec![[d * a.cos(), d * a.sin(), 0.0]; n])
        }
        "seq" => rest
            .split(';')
            .filter(|s| !s.trim().is_empty())
            .map(|item| {
                let parts: Vec<&str> = item.split('/').collect();
                if parts.len() != 3 {
                    return Err(format!("seq item '{item}' needs x/y/yaw_deg"));
                }
                Ok([num(parts[0], "x")?, num(parts[1], "y")?, num(parts[2], "yaw")?.to_radians()])
            })
            .collect::<Result<Vec<_>, _>>()
            .and_then(|v| {
                if v.is_empty() {
                    Err(format!("task '{text}' is empty"))
                } else {
                    Ok(v)
                }
            }),
        other => Err(format!("unknown task kind '{other}' (expected jump_turn, omni or seq)")),
    }
}

#[derive(Clone, Debug)]
pub struct Env {
    cfg: Arc<Config>,
    mode: ControlMode,
    rate: f64,
    cycle_steps: u64,
    total_steps: u64,

    state: RigidBodyState,
    estimator: Estimator,
    task: JumpTask,
    step_count: u64,
    jump_index: usize,
    prev_stance: bool,
    swing_start: [Vector3<f64>; NUM_LEGS],
    done: bool,

    summary: EpisodeSummary,
    airborne_since: Option<f64>,
    record: bool,
    trajectory: Vec<TrajectoryRow>,
}

impl Env {
    pub fn new(cfg: &Config, mode: ControlMode) -> Self {
        let rate = cfg.sim.steps_per_second();
        let cycle_steps = (cfg.gait.cycle_duration() * rate).round() as u64;
        let state = RigidBodyState::standing(&cfg.robot, cfg.robot.nominal_height, 0.0);
        let estimator = Estimator::new(&state, &cfg.estimator, 0);
        let task = JumpTask::new([0.0; 3], state.position, 0.0, cfg.gait.swing_duration);
        let mut env = Self {
            cfg: Arc::new(cfg.clone()),
            mode,
            rate,
            cycle_steps,
            total_steps: cycle_steps * cfg.env.jump_sequence.len() as u64,
            swing_start: state.foot_positions,
            state,
            estimator,
            task,
            step_count: 0,
            jump_index: 0,
            prev_stance: true,
            done: false,
            summary: EpisodeSummary::default(),
            airborne_since: None,
            record: false,
            trajectory: Vec::new(),
        };
        env.reset(0);
        env
    }

    pub fn config(&self) -> &Config {
        &self.cfg
    }

    pub fn mode(&self) -> ControlMode {
        self.mode
    }

    pub fn state(&self) -> &RigidBodyState {
        &self.state
    }

    pub fn task(&self) -> &JumpTask {
        &self.task
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn time(&self) -> f64 {
        self.step_count as f64 / self.rate
    }

    /// Keeps one row per simulator step from the next reset on.
    pub fn set_recording(&mut self, on: bool) {
        self.record = on;
    }

    pub fn trajectory(&self) -> &[TrajectoryRow] {
        &self.trajectory
    }

    pub fn take_trajectory(&mut self) -> Vec<TrajectoryRow> {
        std::mem::take(&mut self.trajectory)
    }

    pub fn summary(&self) -> &EpisodeSummary {
        &self.summary
    }

    /// Overrides the ground-truth state, e.g. to inject a fault.
    pub fn set_state(&mut self, state: RigidBodyState) {
        self.state = state;
    }

    pub fn reset(&mut self, seed: u64) -> Observation {
        let ecfg = &self.cfg.env;
        let model = &self.cfg.robot;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sym = |a: f64| if a > 0.0 { rng.random_range(-a..=a) } else { 0.0 };
        let height = model.nominal_height + sym(ecfg.init_height_noise);
        let roll = sym(ecfg.init_tilt_noise);
        let pitch = sym(ecfg.init_tilt_noise);
        let yaw = sym(ecfg.init_yaw_noise);
        let mut state = RigidBodyState::standing(model, height, yaw);
        state.orientation = nalgebra::UnitQuaternion::from_euler_angles(roll, pitch, yaw);

        self.estimator = Estimator::new(&state, &self.cfg.estimator, seed ^ 0x9e37_79b9_7f4a_7c15);
        self.state = state;
        self.step_count = 0;
        self.jump_index = 0;
        self.prev_stance = true;
        self.swing_start = self.state.foot_positions;
        self.done = false;
        self.airborne_since = None;
        self.trajectory.clear();
        self.summary = EpisodeSummary {
            seed,
            flight_times: vec![0.0; self.cfg.env.jump_sequence.len()],
            ..EpisodeSummary::default()
        };
        self.record_task();
        self.observation()
    }

    fn schedule(&self, step: u64) -> LegSchedule {
        self.cfg
            .gait
            .schedule_at(step as f64 / self.rate)
            .expect("durations validated with the config")
    }

    fn record_task(&mut self) {
        let observed = self.estimator.observed(&self.state);
        let displacement = self.cfg.env.jump_sequence[self.jump_index];
        self.task = JumpTask::new(displacement, observed.position, observed.yaw(), self.cfg.gait.swing_duration);
        let t = self.task.target_position();
        self.summary.targets.push([t.x, t.y, self.task.target_yaw()]);
    }

    fn finish_jump(&mut self) {
        let target = self.task.target_position();
        let p = self.state.position;
        self.summary.landing_errors.push((p.x - target.x).hypot(p.y - target.y));
        self.summary.landing_positions.push([p.x, p.y]);
        self.summary.yaw_progress.push(wrap_angle(self.state.yaw() - self.task.start_yaw));
        self.summary.jumps_completed += 1;
    }

    pub fn observation(&self) -> Observation {
        let observed = self.estimator.observed(&self.state);
        policy::observe(&observed, &self.task, &self.schedule(self.step_count))
    }

    fn close_flight(&mut self, end: f64) {
        if let Some(start) = self.airborne_since.take() {
            let cycle = ((start * self.rate).round() as u64 / self.cycle_steps) as usize;
            if let Some(slot) = self.summary.flight_times.get_mut(cycle) {
                *slot = slot.max(end - start);
            }
        }
    }

    fn terminate(&mut self, reason: Termination) {
        self.done = true;
        self.summary.termination = Some(reason);
        self.close_flight(self.time());
    }

    pub fn step(&mut self, action: &ResidualAction) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeFinished);
        }
        let n = self.cfg.policy.substeps_per_action;
        let mut reward = 0.0;
        let mut clipped = false;
        for _ in 0..n {
            let (terms, c) = self.substep(action);
            reward += terms.total;
            clipped |= c;
            if self.done {
                break;
            }
        }
        reward /= n as f64;
        self.summary.episode_return += reward;
        self.summary.ticks += 1;
        self.summary.duration = self.time();
        Ok(StepResult {
            observation: self.observation(),
            reward,
            done: self.done,
            info: StepInfo {
                time: self.time(),
                jump_index: self.jump_index,
                termination: self.summary.termination,
                sequence_complete: self.done && self.summary.termination.is_none(),
                command_clipped: clipped,
            },
        })
    }

    fn stance_command(
        &self,
        observed: &RigidBodyState,
        sched: &LegSchedule,
        action: &ResidualAction,
    ) -> (StanceCommand, StanceBranch, bool) {
        let g = self.cfg.robot.gravity;
        let stance = sched.is_stance();
        let (base, branch) = if stance && self.mode != ControlMode::PolicyOnly {
            stance::select_command(observed, &self.task, sched, &self.cfg.stance_accel, g)
        } else {
            (StanceCommand::default(), StanceBranch::Track)
        };
        let residual = match self.mode {
            ControlMode::ControllerOnly => return (base, branch, false),
            _ if stance => *action,
            _ if self.cfg.policy.act_in_swing => action.attitude_only(),
            _ => ResidualAction::zero(),
        };
        let (cmd, clipped) = policy::compose(&base, &residual, &self.cfg.stance_accel, self.cfg.policy.max_tilt, g);
        (cmd, branch, clipped)
    }

    fn substep(&mut self, action: &ResidualAction) -> (RewardTerms, bool) {
        let cfg = Arc::clone(&self.cfg);
        let model = &cfg.robot;
        let dt = self.cfg.sim.dt;
        let sched = self.schedule(self.step_count);
        let sched_end = self.schedule(self.step_count + 1);
        let stance = sched.is_stance();
        if !stance && self.prev_stance {
            self.swing_start = self.state.foot_positions;
        }
        self.prev_stance = stance;

        let observed = self.estimator.observed(&self.state);
        let (cmd, branch, clipped) = self.stance_command(&observed, &sched, action);

        let v_des = match self.cfg.swing.desired_velocity {
            DesiredVelocity::Liftoff => stance::liftoff_velocity(&self.task, model.gravity).linear,
            DesiredVelocity::Zero => Vector3::zeros(),
        };
        let phase_end = if sched_end.is_stance() { 1.0 } else { sched_end.phase_fraction };
        let mut sim_targets = [Vector3::zeros(); NUM_LEGS];
        let mut wbc_targets = [None; NUM_LEGS];
        for leg in 0..NUM_LEGS {
            let landing = swing::foot_target(&observed, model, leg, &v_des, self.cfg.gait.stance_duration, &self.cfg.swing);
            if stance {
                sim_targets[leg] = if self.state.foot_in_contact[leg] {
                    self.state.foot_positions[leg]
                } else {
                    landing
                };
            } else {
                let p = swing::swing_path(&self.swing_start[leg], &landing, phase_end, self.cfg.swing.apex_height);
                sim_targets[leg] = p;
                wbc_targets[leg] = Some(p);
            }
        }

        let wcmd = wbc::assemble_command(&cmd, &observed, wbc_targets);
        let dist = wbc::distribute_forces(&wcmd, &observed, model, &self.cfg.wbc);
        let motor = wbc::motor_command(&wcmd, &dist.forces, &observed, model, &self.cfg.wbc);
        let torques = sim::actuator_torques(&motor, &self.state, model);

        let t_start = self.time();
        let (next, report) = match sim::step(&self.state, &torques, &sim_targets, &sched, model, dt) {
            Ok(r) => r,
            Err(_) => {
                self.step_count += 1;
                self.terminate(Termination::NonFinite);
                return (RewardTerms::default(), clipped);
            }
        };
        self.estimator.advance(&report.linear_acceleration, &next, dt);
        self.state = next;
        self.step_count += 1;
        let t_end = self.time();
        self.state.time = t_end;

        let airborne = self.state.foot_in_contact.iter().all(|c| !c);
        if airborne && self.airborne_since.is_none() {
            self.airborne_since = Some(t_start);
        } else if !airborne {
            self.close_flight(t_end);
        }
        self.summary.peak_yaw_rate = self.summary.peak_yaw_rate.max(self.state.angular_velocity_world().z.abs());

        let terms = compute_reward(
            &self.state,
            &self.task,
            &sched.desired_contact,
            &self.state.foot_in_contact,
            &self.cfg.env,
        );
        if self.record {
            let row = trajectory_row(&self.state, &report, stance, &terms, &self.task, &self.estimator, &dist, branch);
            self.trajectory.push(row);
        }

        if let Some(reason) = check_termination(&self.state, model, &self.cfg.env) {
            self.terminate(reason);
        } else if self.step_count.is_multiple_of(self.cycle_steps) {
            self.finish_jump();
            if self.step_count >= self.total_steps {
                self.done = true;
                self.close_flight(t_end);
            } else {
                self.jump_index += 1;
                self.record_task();
            }
        }
        (terms, clipped)
    }
}

/// Outcome of one full episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeOutcome {
    pub summary: EpisodeSummary,
    pub trajectory: Vec<TrajectoryRow>,
}

/// Runs one episode from `reset(seed)`. `params` may be `None` for a zero
/// residual. Every observation fed to the policy is passed to `on_obs`.
pub fn run_episode(env: &mut Env, params: Option<&PolicyParams>, seed: u64, mut on_obs: impl FnMut(&Observation)) -> EpisodeOutcome {
    let mut obs = env.reset(seed);
    let needs_policy = env.mode() != ControlMode::ControllerOnly;
    loop {
        on_obs(&obs);
        let action = match params {
            Some(p) if needs_policy => p.forward(&obs),
            _ => ResidualAction::zero(),
        };
        let out = env.step(&action).expect("loop stops at done");
        obs = out.observation;
        if out.done {
            break;
        }
    }
    EpisodeOutcome {
        summary: env.summary().clone(),
        trajectory: env.take_trajectory(),
    }
}
