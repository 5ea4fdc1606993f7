//! `cbf-sim`: scenario front end for the prioritized CBF safety filter.
//!
//! Subcommands:
//! - `run`        one rollout → step log CSV + metrics JSON + config echo
//! - `batch`      seeds 0..N in parallel → one summary row per seed
//! - `sweep-beta` slack-penalty sweep on a tight snapshot of a rollout
//! - `coverage`   random feasibility search over (pose, obstacle) samples
//!
//! Every command echoes the fully-resolved configuration it ran into the
//! output directory, so a run can be reproduced from its artifacts alone.
//! Exit codes: 0 = clean completion (relaxation is clean), 2 = the rollout
//! contained at least one emergency tick, 1 = bad configuration or I/O.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use cbf_core::barrier::Obstacle;
use cbf_core::chain::RobotState;
use cbf_core::filter::{FilterMode, SafetyFilter, SafetyStatus};
use cbf_core::scenario::{parse_config, run_scenario_with, ScenarioConfig, ScenarioRun};
use cbf_core::world::{coverage_search, write_step_csv, CoverageSample};

#[derive(Parser)]
#[command(
    name = "cbf-sim",
    about = "Closed-loop simulator for a prioritized control-barrier-function safety filter",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario rollout and write its artifacts.
    Run {
        /// Scenario config (JSON; a `preset` key merges over a built-in).
        #[arg(long)]
        config: PathBuf,
        /// Replaces `sim.seed` from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (created if missing).
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Also dump the last tick's assembled programs to qp.json.
        #[arg(long)]
        dump_qp: bool,
    },
    /// Run seeds 0..N-1 of one scenario and tabulate per-seed metrics.
    Batch {
        #[arg(long)]
        config: PathBuf,
        /// Number of seeds (0..N-1).
        #[arg(long)]
        seeds: u64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Worker threads (default: logical CPU count).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Sweep the relaxation penalty over a snapshot of one rollout.
    SweepBeta {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated penalty values, e.g. --betas 10,100,1000.
        #[arg(long, value_delimiter = ',')]
        betas: Vec<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Randomized infeasibility search with the config's coverage template.
    Coverage {
        #[arg(long)]
        config: PathBuf,
        /// Number of random samples to draw.
        #[arg(long)]
        samples: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { config, seed, out, dump_qp } => cmd_run(&config, seed, &out, dump_qp),
        Command::Batch { config, seeds, out, workers } => cmd_batch(&config, seeds, &out, workers),
        Command::SweepBeta { config, betas, seed, out } => cmd_sweep_beta(&config, &betas, seed, &out),
        Command::Coverage { config, samples, seed, out } => cmd_coverage(&config, samples, seed, &out),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let config = parse_config(&text).with_context(|| format!("in {}", path.display()))?;
    Ok(config)
}

fn ensure_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output dir {}", dir.display()))
}

fn write_text(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn echo_config(dir: &Path, config: &ScenarioConfig) -> Result<()> {
    let body = serde_json::to_string_pretty(config).context("serializing resolved config")?;
    write_text(&dir.join("config.json"), &(body + "\n"))
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

fn cmd_run(config: &Path, seed: Option<u64>, out: &Path, dump_qp: bool) -> Result<ExitCode> {
    let config = load_config(config)?;
    ensure_out(out)?;
    let run = run_scenario_with(&config, seed, dump_qp)?;

    let steps_name = config.output.steps_csv.clone().unwrap_or_else(|| "steps.csv".into());
    let metrics_name = config.output.metrics_json.clone().unwrap_or_else(|| "metrics.json".into());
    write_step_csv(&out.join(steps_name), &run.records, &run.obstacle_names)?;
    let metrics = serde_json::to_string_pretty(&run.metrics).context("serializing metrics")?;
    write_text(&out.join(metrics_name), &(metrics + "\n"))?;
    echo_config(out, &run.config)?;
    if dump_qp {
        match &run.last_qp {
            Some(record) => {
                let body = serde_json::to_string_pretty(record).context("serializing QP dump")?;
                write_text(&out.join("qp.json"), &(body + "\n"))?;
            }
            None => eprintln!("note: no program was assembled (no constraints?); qp.json skipped"),
        }
    }

    println!(
        "{}: {} ticks, rmse {:.4}, {} relaxing, {} emergency",
        run.config.name,
        run.metrics.ticks,
        run.metrics.rmse,
        run.metrics.relaxing_ticks,
        run.metrics.emergency_ticks
    );
    Ok(exit_for(&run))
}

fn exit_for(run: &ScenarioRun) -> ExitCode {
    if run.metrics.emergency_ticks > 0 {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    }
}

// ---------------------------------------------------------------------------
// batch
// ---------------------------------------------------------------------------

fn cmd_batch(config: &Path, seeds: u64, out: &Path, workers: Option<usize>) -> Result<ExitCode> {
    if seeds == 0 {
        bail!("--seeds must be at least 1");
    }
    let config = load_config(config)?;
    ensure_out(out)?;

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        if n == 0 {
            bail!("--workers must be at least 1");
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().context("building worker pool")?;

    // One world per seed, no shared state; merge by seed index.
    let results: Vec<(u64, Result<ScenarioRun, cbf_core::Error>)> = pool.install(|| {
        use rayon::prelude::*;
        (0..seeds)
            .into_par_iter()
            .map(|seed| (seed, run_scenario_with(&config, Some(seed), false)))
            .collect()
    });

    let obstacle_names: Vec<String> =
        config.obstacles.iter().map(|o| o.name.clone()).collect();
    let mut header = vec![
        "seed".to_string(),
        "ok".to_string(),
        "rmse".to_string(),
        "ticks".to_string(),
        "relaxing_ticks".to_string(),
        "emergency_ticks".to_string(),
    ];
    for name in &obstacle_names {
        header.push(format!("{name}_d_min"));
        header.push(format!("{name}_delta_max"));
        header.push(format!("{name}_violation"));
    }
    header.push("error".to_string());

    let mut lines = vec![header.join(",")];
    let mut any_emergency = false;
    for (seed, result) in &results {
        let mut fields = vec![seed.to_string()];
        match result {
            Ok(run) => {
                any_emergency |= run.metrics.emergency_ticks > 0;
                fields.push("true".into());
                fields.push(format!("{}", run.metrics.rmse));
                fields.push(run.metrics.ticks.to_string());
                fields.push(run.metrics.relaxing_ticks.to_string());
                fields.push(run.metrics.emergency_ticks.to_string());
                for name in &obstacle_names {
                    fields.push(format!("{}", run.metrics.d_min[name]));
                    fields.push(format!("{}", run.metrics.delta_max[name]));
                    fields.push(run.metrics.violation[name].to_string());
                }
                fields.push(String::new());
            }
            Err(e) => {
                // The seed's failure is recorded in its row; the batch goes on.
                fields.push("false".into());
                fields.extend(std::iter::repeat_n(
                    String::new(),
                    4 + 3 * obstacle_names.len(),
                ));
                fields.push(format!("{e}").replace(',', ";"));
            }
        }
        lines.push(fields.join(","));
    }
    write_text(&out.join("batch.csv"), &(lines.join("\n") + "\n"))?;
    echo_config(out, &config)?;

    let failures = results.iter().filter(|(_, r)| r.is_err()).count();
    println!(
        "{}: {} seeds, {} failed, batch.csv written",
        config.name, seeds, failures
    );
    Ok(if any_emergency { ExitCode::from(2) } else { ExitCode::SUCCESS })
}

// ---------------------------------------------------------------------------
// sweep-beta
// ---------------------------------------------------------------------------

/// Rebuilds the obstacle set of `config` at one recorded tick, with every
/// relaxable obstacle's penalty replaced by `beta`.
fn obstacles_at_tick(
    config: &ScenarioConfig,
    record: &cbf_core::world::StepRecord,
    beta: f64,
) -> Vec<Obstacle<f64>> {
    config
        .obstacles
        .iter()
        .zip(&record.obstacles)
        .map(|(spec, state)| {
            let relaxable = spec.priority > 0 && spec.slack_cap != Some(0.0);
            Obstacle {
                name: spec.name.clone(),
                position: state.position,
                velocity: state.velocity,
                radius: spec.radius,
                priority: spec.priority,
                beta: if relaxable { beta } else { 1.0 },
                slack_cap: if spec.priority == 0 {
                    0.0
                } else {
                    spec.slack_cap.unwrap_or(f64::INFINITY)
                },
                gamma: spec.gamma,
            }
        })
        .collect()
}

fn cmd_sweep_beta(
    config: &Path,
    betas: &[f64],
    seed: Option<u64>,
    out: &Path,
) -> Result<ExitCode> {
    if betas.is_empty() {
        bail!("--betas needs at least one value");
    }
    if let Some(bad) = betas.iter().find(|b| !(**b > 0.0 && b.is_finite())) {
        bail!("--betas values must be positive and finite, got {bad}");
    }
    let config = load_config(config)?;
    ensure_out(out)?;

    // The sweep compares against the strict solution, so it needs a snapshot
    // where the strict program is feasible. Probe the rollout's ticks from
    // the tightest barrier value upward and take the first feasible one —
    // that is where the penalty actually shapes the command.
    let run = run_scenario_with(&config, seed, false)?;
    let (chain, _) = config.build_chain()?;
    let (_, filter_config) = config.build_filter()?;

    let mut strict_config = filter_config.clone();
    strict_config.mode = FilterMode::Strict;
    let mut strict_filter = SafetyFilter::new(strict_config)?;

    let min_h = |r: &&cbf_core::world::StepRecord| {
        r.obstacles
            .iter()
            .map(|o| o.h_min)
            .fold(f64::INFINITY, f64::min)
    };
    let mut candidates: Vec<&cbf_core::world::StepRecord> = run.records.iter().collect();
    candidates.sort_by(|a, b| min_h(&a).total_cmp(&min_h(&b)));
    let mut chosen = None;
    for record in candidates {
        let state = RobotState::new(record.q.clone(), record.t);
        let obstacles = obstacles_at_tick(&config, record, 1.0);
        let strict = strict_filter.filter(&chain, &state, &record.q_dot_perf, &obstacles)?;
        if strict.status != SafetyStatus::Emergency {
            chosen = Some((record, state, strict));
            break;
        }
    }
    let (snapshot, state, strict) =
        chosen.context("no strict-feasible tick in the rollout to sweep on")?;

    let mut relaxed_config = filter_config;
    relaxed_config.mode = FilterMode::Relaxed;

    let mut lines = vec!["beta,status,delta_max,distance_to_strict".to_string()];
    for &beta in betas {
        let obstacles = obstacles_at_tick(&config, snapshot, beta);
        let mut filter = SafetyFilter::new(relaxed_config.clone())?;
        let command = filter.filter(&chain, &state, &snapshot.q_dot_perf, &obstacles)?;
        let delta_max =
            command.deltas.values().cloned().fold(0.0_f64, f64::max);
        let distance = (&command.q_dot - &strict.q_dot).norm();
        lines.push(format!(
            "{beta},{},{delta_max},{distance}",
            command.status.as_str()
        ));
    }
    write_text(&out.join("sweep.csv"), &(lines.join("\n") + "\n"))?;
    echo_config(out, &run.config)?;

    println!(
        "{}: swept {} penalties at t={:.3} (min h {:.4})",
        config.name,
        betas.len(),
        snapshot.t,
        snapshot.obstacles.iter().map(|o| o.h_min).fold(f64::INFINITY, f64::min)
    );
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// coverage
// ---------------------------------------------------------------------------

fn cmd_coverage(
    config: &Path,
    samples: usize,
    seed: Option<u64>,
    out: &Path,
) -> Result<ExitCode> {
    if samples == 0 {
        bail!("--samples must be at least 1");
    }
    let config = load_config(config)?;
    ensure_out(out)?;

    let (chain, _) = config.build_chain()?;
    let template = config.coverage_template()?;
    let seed = seed.unwrap_or(config.sim.seed);
    let flagged = coverage_search(&chain, &template, samples, seed)?;

    let mut header = vec!["sample".to_string()];
    header.extend((0..chain.n_joints()).map(|i| format!("q{i}")));
    header.extend([
        "strict_status".to_string(),
        "relaxed_status".to_string(),
        "max_slack".to_string(),
        "min_priority0_residual".to_string(),
    ]);
    let mut lines = vec![header.join(",")];
    for sample in &flagged {
        lines.push(coverage_row(sample));
    }
    write_text(&out.join("coverage.csv"), &(lines.join("\n") + "\n"))?;
    echo_config(out, &config)?;

    println!(
        "{}: {} / {} samples strict-infeasible",
        config.name,
        flagged.len(),
        samples
    );
    Ok(ExitCode::SUCCESS)
}

fn coverage_row(sample: &CoverageSample) -> String {
    let mut fields = vec![sample.index.to_string()];
    fields.extend(sample.q.iter().map(|v| format!("{v}")));
    fields.push(format!("{:?}", sample.strict_status).to_lowercase());
    fields.push(format!("{:?}", sample.relaxed_status).to_lowercase());
    fields.push(format!("{}", sample.max_slack));
    fields.push(format!("{}", sample.min_priority0_residual));
    fields.join(",")
}
