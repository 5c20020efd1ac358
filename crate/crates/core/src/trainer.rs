//! Augmented Random Search with observation normalisation and top-b
//! direction selection.
//!
//! Every direction is evaluated antithetically with one shared episode seed.
//! Rollouts run on a dedicated thread pool; results are reduced in
//! direction order, so a run is identical for any worker count.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::env::{run_episode, Env, EpisodeSummary};
use crate::policy::{ControlMode, Observation, PolicyParams, OBS_DIM, OBS_STD_FLOOR};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArsConfig {
    pub num_directions: usize,
    pub top_directions: usize,
    pub step_size: f64,
    pub exploration_std: f64,
    pub iterations: usize,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub seed: u64,
    pub rollout_workers: usize,
}

impl Default for ArsConfig {
    fn default() -> Self {
        Self {
            num_directions: 32,
            top_directions: 16,
            step_size: 0.015,
            exploration_std: 0.02,
            iterations: 300,
            eval_interval: 10,
            eval_episodes: 5,
            seed: 0,
            rollout_workers: 1,
        }
    }
}

impl ArsConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.num_directions == 0 || self.top_directions == 0 || self.top_directions > self.num_directions {
            return Err("ars requires 1 <= top_directions <= num_directions".into());
        }
        if !(self.step_size >= 0.0 && self.exploration_std > 0.0) {
            return Err("ars.step_size must be >= 0 and ars.exploration_std > 0".into());
        }
        if self.eval_interval == 0 || self.eval_episodes == 0 {
            return Err("ars.eval_interval and ars.eval_episodes must be positive".into());
        }
        Ok(())
    }
}

/// Welford accumulator with Chan's parallel merge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub count: f64,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
}

impl RunningStats {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0.0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn push(&mut self, x: &[f64]) {
        self.count += 1.0;
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let d = v - *m;
            *m += d / self.count;
            *s += d * (v - *m);
        }
    }

    pub fn merge(&mut self, other: &RunningStats) {
        if other.count == 0.0 {
            return;
        }
        let n = self.count + other.count;
        for i in 0..self.mean.len() {
            let d = other.mean[i] - self.mean[i];
            self.mean[i] += d * other.count / n;
            self.m2[i] += other.m2[i] + d * d * self.count * other.count / n;
        }
        self.count = n;
    }

    /// Population standard deviation, floored; 1 before two samples.
    pub fn std(&self) -> Vec<f64> {
        if self.count < 2.0 {
            return vec![1.0; self.mean.len()];
        }
        self.m2.iter().map(|s| (s / self.count).sqrt().max(OBS_STD_FLOOR)).collect()
    }
}

/// Result of one episode used by the optimiser.
#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub episode_return: f64,
    pub obs_stats: Option<RunningStats>,
}

/// Black-box episodic objective over a flat parameter vector.
pub trait Objective: Sync {
    fn dim(&self) -> usize;
    /// One episode at `theta` with the given normalisation and seed.
    fn rollout(&self, theta: &[f64], norm: &RunningStats, seed: u64, collect_stats: bool) -> Rollout;
}

/// The jumping task as an ARS objective.
pub struct JumpObjective {
    pub config: Config,
    pub mode: ControlMode,
    pub template: PolicyParams,
}

impl JumpObjective {
    pub fn new(config: &Config, mode: ControlMode) -> Self {
        Self {
            config: config.clone(),
            mode,
            template: PolicyParams::zeros(&config.policy),
        }
    }

    pub fn params(&self, theta: &[f64], norm: &RunningStats) -> PolicyParams {
        let mut p = self.template.with_flat(theta);
        p.obs_mean = norm.mean.clone();
        p.obs_std = norm.std();
        p
    }

    pub fn episode(&self, params: &PolicyParams, seed: u64, mut on_obs: impl FnMut(&Observation)) -> EpisodeSummary {
        let mut env = Env::new(&self.config, self.mode);
        run_episode(&mut env, Some(params), seed, &mut on_obs).summary
    }
}

impl Objective for JumpObjective {
    fn dim(&self) -> usize {
        self.template.num_parameters()
    }

    fn rollout(&self, theta: &[f64], norm: &RunningStats, seed: u64, collect_stats: bool) -> Rollout {
        let params = self.params(theta, norm);
        let mut stats = RunningStats::new(OBS_DIM);
        let summary = self.episode(&params, seed, |o| {
            if collect_stats {
                stats.push(o)
            }
        });
        Rollout {
            episode_return: summary.episode_return,
            obs_stats: collect_stats.then_some(stats),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: usize,
    pub episodes: usize,
    pub mean_rollout_return: f64,
    pub max_rollout_return: f64,
    pub return_std: f64,
    pub update_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub episodes: usize,
    pub mean_return: f64,
    pub std_return: f64,
    pub wall_clock_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub mean_return: f64,
    pub std_return: f64,
    pub success_rate: f64,
    pub mean_flight_time: f64,
    pub landing_errors: Vec<Vec<f64>>,
    pub flight_times: Vec<Vec<f64>>,
    pub returns: Vec<f64>,
}

/// Seeds used by evaluation episode `i`.
pub fn eval_seed(base: u64, i: usize) -> u64 {
    base.wrapping_mul(1_000_003).wrapping_add(i as u64)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

/// ARS state: parameters, normalisation statistics and the direction RNG.
pub struct Trainer<'a, O: Objective> {
    pub cfg: ArsConfig,
    pub objective: &'a O,
    pub theta: Vec<f64>,
    pub norm: RunningStats,
    pub iteration: usize,
    pub episodes: usize,
    rng: ChaCha8Rng,
    pool: rayon::ThreadPool,
}

impl<'a, O: Objective> Trainer<'a, O> {
    pub fn new(cfg: &ArsConfig, objective: &'a O, theta: Vec<f64>, norm: RunningStats) -> Self {
        assert_eq!(theta.len(), objective.dim(), "parameter vector length");
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.rollout_workers.max(1))
            .build()
            .expect("thread pool");
        Self {
            cfg: cfg.clone(),
            objective,
            theta,
            norm,
            iteration: 0,
            episodes: 0,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            pool,
        }
    }

    /// Samples directions and episode seeds for one iteration.
    pub fn sample_directions(&mut self) -> (Vec<Vec<f64>>, Vec<u64>) {
        let dim = self.theta.len();
        let mut dirs = Vec::with_capacity(self.cfg.num_directions);
        let mut seeds = Vec::with_capacity(self.cfg.num_directions);
        for _ in 0..self.cfg.num_directions {
            dirs.push((0..dim).map(|_| self.rng.sample::<f64, _>(StandardNormal)).collect());
            seeds.push(self.rng.random::<u64>());
        }
        (dirs, seeds)
    }

    /// Evaluates `theta ± nu d_k` for every direction, in direction order.
    pub fn evaluate_directions(&self, dirs: &[Vec<f64>], seeds: &[u64]) -> Vec<(Rollout, Rollout)> {
        let nu = self.cfg.exploration_std;
        let theta = &self.theta;
        let norm = &self.norm;
        let objective = self.objective;
        let jobs: Vec<(usize, f64)> = (0..dirs.len()).flat_map(|k| [(k, 1.0), (k, -1.0)]).collect();
        let results: Vec<Rollout> = self.pool.install(|| {
            jobs.par_iter()
                .map(|&(k, sign)| {
                    let p: Vec<f64> = theta.iter().zip(&dirs[k]).map(|(t, d)| t + sign * nu * d).collect();
                    objective.rollout(&p, norm, seeds[k], true)
                })
                .collect()
        });
        let mut it = results.into_iter();
        (0..dirs.len()).map(|_| (it.next().unwrap(), it.next().unwrap())).collect()
    }

    /// One ARS update; returns its statistics.
    pub fn step(&mut self) -> IterationStats {
        let (dirs, seeds) = self.sample_directions();
        let results = self.evaluate_directions(&dirs, &seeds);
        let returns: Vec<(f64, f64)> = results.iter().map(|(p, m)| (p.episode_return, m.episode_return)).collect();
        let delta = ars_update(&returns, &dirs, self.cfg.top_directions, self.cfg.step_size);
        for (t, d) in self.theta.iter_mut().zip(&delta) {
            *t += d;
        }
        for (p, m) in &results {
            for s in [&p.obs_stats, &m.obs_stats].into_iter().flatten() {
                self.norm.merge(s);
            }
        }
        self.iteration += 1;
        self.episodes += 2 * dirs.len();
        let all: Vec<f64> = returns.iter().flat_map(|&(a, b)| [a, b]).collect();
        let (mean, std) = mean_std(&all);
        IterationStats {
            iteration: self.iteration,
            episodes: self.episodes,
            mean_rollout_return: mean,
            max_rollout_return: all.iter().cloned().fold(f64::MIN, f64::max),
            return_std: std,
            update_norm: delta.iter().map(|d| d * d).sum::<f64>().sqrt(),
        }
    }

    /// Mean and std of `n` noise-free episodes with the current parameters.
    pub fn evaluate_returns(&self, n: usize, seed: u64) -> (f64, f64) {
        let theta = &self.theta;
        let norm = &self.norm;
        let objective = self.objective;
        let returns: Vec<f64> = self.pool.install(|| {
            (0..n)
                .into_par_iter()
                .map(|i| objective.rollout(theta, norm, eval_seed(seed, i), false).episode_return)
                .collect()
        });
        mean_std(&returns)
    }
}

/// ARS V2-t update: keep the `b` directions with the largest
/// `max(r+, r-)`, scale by the std of their returns.
pub fn ars_update(returns: &[(f64, f64)], dirs: &[Vec<f64>], b: usize, step_size: f64) -> Vec<f64> {
    let dim = dirs.first().map_or(0, |d| d.len());
    let mut order: Vec<usize> = (0..returns.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, c) = (returns[i].0.max(returns[i].1), returns[j].0.max(returns[j].1));
        c.total_cmp(&a).then(i.cmp(&j))
    });
    order.truncate(b);
    let selected: Vec<f64> = order.iter().flat_map(|&k| [returns[k].0, returns[k].1]).collect();
    let (_, sigma) = mean_std(&selected);
    let scale = step_size / (b as f64 * sigma.max(1e-6));
    let mut delta = vec![0.0; dim];
    for &k in &order {
        let w = (returns[k].0 - returns[k].1) * scale;
        for (d, v) in delta.iter_mut().zip(&dirs[k]) {
            *d += w * v;
        }
    }
    delta
}

/// Learning curve plus final parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    pub curve: Vec<CurvePoint>,
    pub iterations: Vec<IterationStats>,
}

/// Full training run on the jumping task. `on_eval` sees every curve point
/// with the parameters at that point and may stop training by returning
/// `false`.
pub fn train(config: &Config, mode: ControlMode, mut on_eval: impl FnMut(&CurvePoint, &PolicyParams) -> bool) -> TrainOutcome {
    let objective = JumpObjective::new(config, mode);
    let cfg = &config.ars;
    let mut trainer = Trainer::new(cfg, &objective, vec![0.0; objective.dim()], RunningStats::new(OBS_DIM));
    let start = Instant::now();
    let mut curve = Vec::new();
    let mut iterations = Vec::new();
    let eval_base = cfg.seed.wrapping_add(0x5eed);
    let mut evaluate = |trainer: &Trainer<JumpObjective>, curve: &mut Vec<CurvePoint>| -> bool {
        let (mean, std) = trainer.evaluate_returns(cfg.eval_episodes, eval_base);
        let point = CurvePoint {
            iteration: trainer.iteration,
            episodes: trainer.episodes,
            mean_return: mean,
            std_return: std,
            wall_clock_s: start.elapsed().as_secs_f64(),
        };
        let keep_going = on_eval(&point, &objective.params(&trainer.theta, &trainer.norm));
        curve.push(point);
        keep_going
    };
    let mut keep_going = evaluate(&trainer, &mut curve);
    while keep_going && trainer.iteration < cfg.iterations {
        iterations.push(trainer.step());
        if trainer.iteration.is_multiple_of(cfg.eval_interval) || trainer.iteration == cfg.iterations {
            keep_going = evaluate(&trainer, &mut curve);
        }
    }
    TrainOutcome {
        params: objective.params(&trainer.theta, &trainer.norm),
        curve,
        iterations,
    }
}

/// Deterministic evaluation episodes without exploration noise.
pub fn evaluate(config: &Config, mode: ControlMode, params: &PolicyParams, n_episodes: usize, seed: u64) -> EvalStats {
    assert!(n_episodes >= 1, "at least one episode");
    let summaries: Vec<EpisodeSummary> = (0..n_episodes)
        .map(|i| {
            let mut env = Env::new(config, mode);
            run_episode(&mut env, Some(params), eval_seed(seed, i), |_| {}).summary
        })
        .collect();
    let returns: Vec<f64> = summaries.iter().map(|s| s.episode_return).collect();
    let (mean_return, std_return) = mean_std(&returns);
    let flights: Vec<f64> = summaries.iter().flat_map(|s| s.flight_times.iter().copied()).collect();
    EvalStats {
        mean_return,
        std_return,
        success_rate: summaries.iter().filter(|s| s.success()).count() as f64 / n_episodes as f64,
        mean_flight_time: if flights.is_empty() {
            0.0
        } else {
            flights.iter().sum::<f64>() / flights.len() as f64
        },
        landing_errors: summaries.iter().map(|s| s.landing_errors.clone()).collect(),
        flight_times: summaries.iter().map(|s| s.flight_times.clone()).collect(),
        returns,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Negative squared distance to a fixed optimum; deterministic.
    struct Quadratic {
        optimum: Vec<f64>,
    }

    impl Objective for Quadratic {
        fn dim(&self) -> usize {
            self.optimum.len()
        }

        fn rollout(&self, theta: &[f64], _: &RunningStats, _: u64, _: bool) -> Rollout {
            let r = -theta.iter().zip(&self.optimum).map(|(t, o)| (t - o) * (t - o)).sum::<f64>();
            Rollout {
                episode_return: r,
                obs_stats: None,
            }
        }
    }

    fn dirs(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect()
    }

    #[test]
    fn zero_step_size_keeps_params() {
        let d = dirs(4, 3, 1);
        let r = vec![(1.0, 2.0), (3.0, 0.5), (0.0, 0.0), (2.0, 2.5)];
        assert!(ars_update(&r, &d, 2, 0.0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn equal_returns_give_no_update() {
        let d = dirs(4, 3, 2);
        let r = vec![(1.5, 1.5); 4];
        assert!(ars_update(&r, &d, 4, 0.1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scaling_returns_keeps_update() {
        let d = dirs(8, 5, 3);
        let r: Vec<(f64, f64)> = (0..8).map(|k| (k as f64 * 0.7 - 2.0, (k * k) as f64 * 0.1)).collect();
        let scaled: Vec<(f64, f64)> = r.iter().map(|&(a, b)| (a * 37.0, b * 37.0)).collect();
        let u = ars_update(&r, &d, 4, 0.02);
        let v = ars_update(&scaled, &d, 4, 0.02);
        for (a, b) in u.iter().zip(&v) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn antithetic_symmetry() {
        let d = dirs(6, 4, 4);
        let r: Vec<(f64, f64)> = (0..6).map(|k| ((k as f64).sin(), (k as f64).cos())).collect();
        let neg_d: Vec<Vec<f64>> = d.iter().map(|v| v.iter().map(|x| -x).collect()).collect();
        let swapped: Vec<(f64, f64)> = r.iter().map(|&(a, b)| (b, a)).collect();
        let u = ars_update(&r, &d, 3, 0.05);
        let v = ars_update(&swapped, &neg_d, 3, 0.05);
        for (a, b) in u.iter().zip(&v) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_direction_moves_toward_optimum() {
        let obj = Quadratic { optimum: vec![0.7] };
        let cfg = ArsConfig {
            num_directions: 1,
            top_directions: 1,
            step_size: 0.01,
            seed: 9,
            ..ArsConfig::default()
        };
        let mut t = Trainer::new(&cfg, &obj, vec![0.0], RunningStats::new(0));
        for _ in 0..10 {
            let before = (t.theta[0] - 0.7).abs();
            t.step();
            assert!((t.theta[0] - 0.7).abs() < before);
        }
    }

    #[test]
    fn quadratic_bandit_converges() {
        let obj = Quadratic { optimum: vec![0.7] };
        let cfg = ArsConfig {
            num_directions: 8,
            top_directions: 4,
            step_size: 0.005,
            exploration_std: 0.02,
            seed: 9,
            ..ArsConfig::default()
        };
        let mut t = Trainer::new(&cfg, &obj, vec![0.0], RunningStats::new(0));
        for _ in 0..200 {
            t.step();
        }
        assert!((t.theta[0] - 0.7).abs() < 1e-3, "theta {}", t.theta[0]);
    }

    #[test]
    fn worker_count_invariance() {
        let obj = Quadratic {
            optimum: vec![0.3, -0.2, 0.5],
        };
        let run = |w: usize| {
            let cfg = ArsConfig {
                num_directions: 8,
                top_directions: 4,
                rollout_workers: w,
                seed: 5,
                ..ArsConfig::default()
            };
            let mut t = Trainer::new(&cfg, &obj, vec![0.0; 3], RunningStats::new(0));
            for _ in 0..20 {
                t.step();
            }
            t.theta
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn running_stats_merge_matches_single_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let xs: Vec<Vec<f64>> = (0..50).map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let mut whole = RunningStats::new(3);
        xs.iter().for_each(|x| whole.push(x));
        let mut a = RunningStats::new(3);
        let mut b = RunningStats::new(3);
        xs[..20].iter().for_each(|x| a.push(x));
        xs[20..].iter().for_each(|x| b.push(x));
        a.merge(&b);
        for i in 0..3 {
            assert!((a.mean[i] - whole.mean[i]).abs() < 1e-12);
            assert!((a.m2[i] - whole.m2[i]).abs() < 1e-9);
        }
    }
}
