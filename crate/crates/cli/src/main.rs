//! `leapstack`: train, roll out and export figure data for the jumping
//! controller.
//!
//! Exit codes: 0 success, 1 other failure, 2 config error, 3 unwritable
//! output, 4 checkpoint/config hash mismatch, 5 unknown figure key.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use leapstack_core::env::{parse_task_override, run_episode, Env};
use leapstack_core::io::{self, figures, Checkpoint, RolloutSummary, Table, SCHEMA_VERSION};
use leapstack_core::policy::{ControlMode, PolicyParams};
use leapstack_core::trainer;
use leapstack_core::Config;

const THREADS_VAR: &str = "LEAPSTACK_THREADS";

#[derive(Parser)]
#[command(
    name = "leapstack",
    version,
    about = "Quadruped continuous-jumping controller with a learned residual"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML configuration; defaults apply to every missing key.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run ARS and write the learning curve, checkpoints and the resolved config.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `ars.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `ars.rollout_workers`.
        #[arg(long)]
        workers: Option<usize>,
        /// residual or policy-only.
        #[arg(long, default_value = "residual")]
        mode: ControlMode,
    },
    /// One deterministic episode; writes trajectory.csv and summary.json.
    Rollout {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Policy checkpoint; without one the residual is zero.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// residual, controller-only or policy-only. Defaults to the
        /// checkpoint's mode, else controller-only.
        #[arg(long)]
        mode: Option<ControlMode>,
        /// Jump-sequence override, e.g. `jump_turn:90deg×5`, `omni:0.3m@45deg`.
        #[arg(long)]
        task: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Deterministic evaluation episodes; prints statistics as JSON.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        mode: Option<ControlMode>,
        #[arg(long)]
        task: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        episodes: usize,
    },
    /// Plot-ready data for one figure: omni, yawrate, pitch, contacts or curve.
    ExportFigures {
        which: String,
        /// Trajectory or learning-curve CSVs, in series order.
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the resolved configuration.
    PrintConfig {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

type Outcome = Result<(), Failure>;

fn load_config(args: &ConfigArgs) -> Result<Config, Failure> {
    match &args.config {
        Some(p) => Config::from_file(p).map_err(|e| Failure::new(2, e.to_string())),
        None => Ok(Config::default()),
    }
}

fn resolve_workers(flag: Option<usize>, config: usize) -> Result<usize, Failure> {
    if let Some(w) = flag {
        return Ok(w.max(1));
    }
    match std::env::var(THREADS_VAR) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map(|w| w.max(1))
            .map_err(|_| Failure::new(2, format!("{THREADS_VAR}='{v}' is not a worker count"))),
        Err(_) => Ok(config),
    }
}

fn ensure_dir(dir: &Path) -> Outcome {
    std::fs::create_dir_all(dir).map_err(|e| Failure::new(3, format!("cannot create {}: {e}", dir.display())))
}

fn write_err(e: io::IoError) -> Failure {
    Failure::new(3, e.to_string())
}

fn write_text(path: &Path, text: &str) -> Outcome {
    std::fs::write(path, text).map_err(|e| Failure::new(3, format!("{}: {e}", path.display())))
}

/// Checkpoint params, verified against the configuration that will run them.
fn load_policy(path: &Path, cfg: &Config) -> Result<Checkpoint, Failure> {
    let ck = io::load_checkpoint(path).map_err(|e| Failure::new(1, e.to_string()))?;
    let hash = cfg.env_hash();
    if ck.config_hash != hash {
        return Err(Failure::new(
            4,
            format!(
                "checkpoint {} was trained under config {}, current config is {hash}",
                path.display(),
                ck.config_hash
            ),
        ));
    }
    if ck.params.hidden_units != cfg.policy.hidden_units {
        return Err(Failure::new(4, "checkpoint network width differs from policy.hidden_units"));
    }
    Ok(ck)
}

/// Config with the task override applied, the checkpoint params and mode.
fn prepare_episode(
    config: &ConfigArgs,
    checkpoint: Option<&Path>,
    mode: Option<ControlMode>,
    task: Option<&str>,
) -> Result<(Config, Option<PolicyParams>, ControlMode), Failure> {
    let mut cfg = load_config(config)?;
    let ck = checkpoint.map(|p| load_policy(p, &cfg)).transpose()?;
    let mode = mode.or(ck.as_ref().map(|c| c.mode)).unwrap_or(ControlMode::ControllerOnly);
    if let Some(t) = task {
        cfg.env.jump_sequence = parse_task_override(t).map_err(|e| Failure::new(2, e))?;
    }
    let params = ck
        .map(|c| c.params)
        .or_else(|| (mode == ControlMode::PolicyOnly).then(|| PolicyParams::zeros(&cfg.policy)));
    Ok((cfg, params, mode))
}

fn cmd_train(config: &ConfigArgs, out: &Path, seed: Option<u64>, workers: Option<usize>, mode: ControlMode) -> Outcome {
    let mut cfg = load_config(config)?;
    if mode == ControlMode::ControllerOnly {
        return Err(Failure::new(2, "controller-only has nothing to train"));
    }
    if let Some(s) = seed {
        cfg.ars.seed = s;
    }
    cfg.ars.rollout_workers = resolve_workers(workers, cfg.ars.rollout_workers)?;
    ensure_dir(out)?;
    let ck_dir = out.join("checkpoints");
    ensure_dir(&ck_dir)?;
    write_text(&out.join("config.resolved.toml"), &cfg.to_toml_string())?;

    let hash = cfg.env_hash();
    let curve_path = out.join("learning_curve.csv");
    let mut write_error = None;
    let outcome = trainer::train(&cfg, mode, |point, params| {
        let ck = Checkpoint {
            schema_version: SCHEMA_VERSION,
            config_hash: hash.clone(),
            mode,
            iteration: point.iteration,
            episodes: point.episodes,
            params: params.clone(),
        };
        eprintln!(
            "iteration {:>4}  episodes {:>6}  return {:>9.3} ± {:.3}  ({:.1} s)",
            point.iteration, point.episodes, point.mean_return, point.std_return, point.wall_clock_s
        );
        match io::save_json(&ck, &ck_dir.join(format!("iter_{:05}.json", point.iteration))) {
            Ok(()) => true,
            Err(e) => {
                write_error = Some(e);
                false
            }
        }
    });
    if let Some(e) = write_error {
        return Err(write_err(e));
    }
    io::curve_table(&outcome.curve).save(&curve_path).map_err(write_err)?;
    let last = outcome.curve.last().expect("initial evaluation always recorded");
    let final_ck = Checkpoint {
        schema_version: SCHEMA_VERSION,
        config_hash: hash,
        mode,
        iteration: last.iteration,
        episodes: last.episodes,
        params: outcome.params,
    };
    io::save_json(&final_ck, &out.join("checkpoint.json")).map_err(write_err)?;
    println!("{}", out.join("checkpoint.json").display());
    Ok(())
}

fn cmd_rollout(
    config: &ConfigArgs,
    out: &Path,
    checkpoint: Option<&Path>,
    mode: Option<ControlMode>,
    task: Option<&str>,
    seed: u64,
) -> Outcome {
    let (cfg, params, mode) = prepare_episode(config, checkpoint, mode, task)?;
    ensure_dir(out)?;
    let mut env = Env::new(&cfg, mode);
    env.set_recording(true);
    let episode = run_episode(&mut env, params.as_ref(), seed, |_| {});
    io::trajectory_table(&episode.trajectory)
        .save(&out.join("trajectory.csv"))
        .map_err(write_err)?;
    let summary = RolloutSummary {
        mode,
        config_hash: cfg.env_hash(),
        mean_flight_time: episode.summary.mean_flight_time(),
        episode: episode.summary,
    };
    io::save_json(&summary, &out.join("summary.json")).map_err(write_err)?;
    let e = &summary.episode;
    println!(
        "{mode:?}: return {:.3}, jumps {}/{}, termination {}, mean flight {:.3} s, peak yaw rate {:.3} rad/s",
        e.episode_return,
        e.jumps_completed,
        cfg.env.jump_sequence.len(),
        e.termination.map_or("none".to_string(), |t| format!("{t:?}")),
        summary.mean_flight_time,
        e.peak_yaw_rate
    );
    Ok(())
}

fn cmd_evaluate(
    config: &ConfigArgs,
    checkpoint: Option<&Path>,
    mode: Option<ControlMode>,
    task: Option<&str>,
    seed: u64,
    episodes: usize,
) -> Outcome {
    if episodes == 0 {
        return Err(Failure::new(2, "--episodes must be at least 1"));
    }
    let (cfg, params, mode) = prepare_episode(config, checkpoint, mode, task)?;
    let params = params.unwrap_or_else(|| PolicyParams::zeros(&cfg.policy));
    let stats = trainer::evaluate(&cfg, mode, &params, episodes, seed);
    println!("{}", serde_json::to_string_pretty(&stats).expect("stats serialise"));
    Ok(())
}

fn cmd_export(which: &str, inputs: &[PathBuf], out: &Path) -> Outcome {
    if !figures::KEYS.contains(&which) {
        return Err(Failure::new(
            5,
            format!("unknown figure '{which}' (expected one of {})", figures::KEYS.join(", ")),
        ));
    }
    let tables = inputs
        .iter()
        .map(|p| Table::load(p))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| Failure::new(1, e.to_string()))?;
    let single = || -> Result<&Table, Failure> {
        match tables.as_slice() {
            [t] => Ok(t),
            _ => Err(Failure::new(1, format!("figure '{which}' takes exactly one input"))),
        }
    };
    let fig = match which {
        "contacts" => figures::contacts(single()?),
        "yawrate" => figures::yaw_rate(single()?),
        "pitch" => figures::pitch(&tables),
        "omni" => figures::omni(&tables),
        "curve" => figures::curve(&tables),
        _ => unreachable!("checked against KEYS"),
    }
    .map_err(|e| Failure::new(1, e.to_string()))?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    fig.save(out).map_err(write_err)
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Train {
            config,
            out,
            seed,
            workers,
            mode,
        } => cmd_train(&config, &out, seed, workers, mode),
        Command::Rollout {
            config,
            out,
            checkpoint,
            mode,
            task,
            seed,
        } => cmd_rollout(&config, &out, checkpoint.as_deref(), mode, task.as_deref(), seed),
        Command::Evaluate {
            config,
            checkpoint,
            mode,
            task,
            seed,
            episodes,
        } => cmd_evaluate(&config, checkpoint.as_deref(), mode, task.as_deref(), seed, episodes),
        Command::ExportFigures { which, inputs, out } => cmd_export(&which, &inputs, &out),
        Command::PrintConfig { config } => {
            let cfg = load_config(&config)?;
            print!("{}", cfg.to_toml_string());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
