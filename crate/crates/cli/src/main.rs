use std::collections::BTreeMap;
use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use svrdqn::harness::runner::RunSummary;
use svrdqn::harness::score::{ATARI_REFERENCE_DOUBLE_DQN, ATARI_REFERENCE_SVR_DQN};
use svrdqn::harness::{run_experiment, run_variance_sweep, summarize, ExperimentConfig, RunOptions, SweepConfig};
use svrdqn::instrument::write_variance_csv;

#[derive(Parser)]
#[command(name = "svrdqn", version, about = "Variance-reduced Adam for deep Q-learning: experiments and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured (optimizer, seed) trial and write curves.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Parallel trials; overrides run.workers.
        #[arg(long)]
        workers: Option<usize>,
        /// Checkpoint file, or a directory holding checkpoints.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Measure estimator variance against the theoretical bounds.
    VarianceSweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Mean and median normalized scores over finished runs.
    Summarize {
        /// Directory searched recursively for summary.json files.
        #[arg(long)]
        inputs: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, workers, resume } => cmd_run(&config, workers, resume),
        Command::VarianceSweep { config } => cmd_sweep(&config),
        Command::Summarize { inputs } => cmd_summarize(&inputs),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn cmd_run(config: &Path, workers: Option<usize>, resume: Option<PathBuf>) -> Result<bool> {
    let cfg = ExperimentConfig::load(config)?;
    log::info!(
        "{}: {} frames x {} seeds, optimizer {:?}, output {}",
        cfg.environment.name(),
        cfg.run.frames,
        cfg.run.seeds.len(),
        cfg.optimizer.kind,
        cfg.run.output_dir.display()
    );
    let outcome = run_experiment(&cfg, &RunOptions { workers, resume })?;
    let s = &outcome.summary;
    println!(
        "{}: optimal return {:.4}, random {:.4}, solved at >= {:.4}",
        s.environment, s.optimal_return, s.random_return, s.solved_threshold
    );
    for o in &s.optimizers {
        println!(
            "  {:<8} median AUC {}  mean final {}  median frames to solved {}  normalized {}",
            o.optimizer.name(),
            fmt_opt(o.median_auc),
            fmt_opt(o.mean_final_return),
            o.median_frames_to_solved.map_or("never".to_string(), |f| format!("{f:.0}")),
            o.normalized_score.map_or("-".to_string(), |v| format!("{v:.1}%")),
        );
    }
    let aborted: Vec<_> = outcome.trials.iter().filter(|t| t.aborted.is_some()).collect();
    for t in &aborted {
        eprintln!(
            "trial {} seed {} aborted: {}",
            t.key.optimizer,
            t.key.seed,
            t.aborted.as_deref().unwrap_or_default()
        );
    }
    Ok(aborted.is_empty())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("-".to_string(), |x| format!("{x:.4}"))
}

fn cmd_sweep(config: &Path) -> Result<bool> {
    let cfg = SweepConfig::load(config).with_context(|| format!("loading {}", config.display()))?;
    let out = run_variance_sweep(&cfg)?;
    if let Some(parent) = cfg.sweep.output.parent() {
        fs::create_dir_all(parent).ok();
    }
    write_variance_csv(File::create(&cfg.sweep.output)?, &out.reports)?;
    for r in &out.reports {
        println!(
            "point {} {:<21} var {:.3e} (se {:.1e})  bound {:.3e}  subopt {:.3e}  {}",
            r.iteration,
            r.estimator.name(),
            r.empirical_variance,
            r.standard_error,
            r.bound,
            r.suboptimality,
            if r.pass() { "ok" } else { "EXCEEDS BOUND" }
        );
    }
    let c = &out.comparison;
    println!(
        "same budget ({} gradients): svr-dqn {:.3e} vs minibatch {:.3e} at {:.3} of the starting distance",
        c.budget, c.svr_variance, c.minibatch_variance, c.relative_distance
    );
    let t = &out.telescoping;
    println!(
        "telescoping at start: Var(g) {:.3e}, sum Var(tau_i) {:.3e}, cross terms {:.3e}",
        t.total_variance, t.sum_term_variances, t.cross_covariance
    );
    println!("lipschitz-suboptimality inequality held at all points: {}", out.lipschitz_holds);
    println!("wrote {}", cfg.sweep.output.display());
    Ok(out.all_pass() && out.lipschitz_holds)
}

fn find_summaries(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let p = entry?.path();
        if p.is_dir() {
            find_summaries(&p, out)?;
        } else if p.file_name().is_some_and(|n| n == "summary.json") {
            out.push(p);
        }
    }
    Ok(())
}

fn cmd_summarize(inputs: &Path) -> Result<bool> {
    let mut paths = Vec::new();
    find_summaries(inputs, &mut paths)?;
    paths.sort();
    if paths.is_empty() {
        bail!("no summary.json under {}", inputs.display());
    }
    let mut scores: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for p in &paths {
        let s: RunSummary = serde_json::from_str(&fs::read_to_string(p)?).with_context(|| format!("parsing {}", p.display()))?;
        for o in &s.optimizers {
            match o.normalized_score {
                Some(v) => {
                    println!("{:<40} {:<8} {:>9.2}%", p.display(), o.optimizer.name(), v);
                    scores.entry(o.optimizer.name().to_string()).or_default().push(v);
                }
                None => println!("{:<40} {:<8} {:>10}", p.display(), o.optimizer.name(), "undefined"),
            }
        }
    }
    for (name, v) in &scores {
        let s = summarize(v)?;
        println!("{name:<8} mean {:.2}%  median {:.2}%  over {} environments", s.mean, s.median, s.environments);
    }
    println!(
        "atari-scale reference (not reproduced here): svr-dqn {:.2}% / {:.2}%, double-dqn {:.2}% / {:.2}%",
        ATARI_REFERENCE_SVR_DQN.mean,
        ATARI_REFERENCE_SVR_DQN.median,
        ATARI_REFERENCE_DOUBLE_DQN.mean,
        ATARI_REFERENCE_DOUBLE_DQN.median
    );
    Ok(true)
}
