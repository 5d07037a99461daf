//! Seeded multi-trial training runs.
//!
//! Each (optimizer, seed) pair is one trial. Trials run on a pool of
//! worker threads and share nothing; their evaluation rows flow through a
//! channel to a single writer that owns every output file.
//!
//! Random streams per trial come from `ChaCha8Rng::seed_from_u64(seed)`
//! with a fixed stream id per purpose, so the two optimizers start from
//! the same network and see the same environment dynamics, and adding
//! seeds never perturbs existing trials.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{load_checkpoint, save_checkpoint, TrialCheckpoint};
use super::config::ExperimentConfig;
use super::curves::{
    aggregate, area_under_curve, frames_to_threshold, write_aggregate, CurveWriter, EvalRecord,
};
use super::score::normalized_score;
use crate::env::{Environment, EPISODE_CAP};
use crate::error::{Error, Result};
use crate::instrument::{empirical_gradient_variance, GradientEstimator, MinibatchEstimator, SvrDqnEstimator};
use crate::mlp::MlpNetwork;
use crate::optim::{AdamState, SvrgConfig};
use crate::param::ParamVector;
use crate::rl::{
    epsilon_greedy_action, train_iteration, IterationOutcome, OptimizerKind, QLearner, ReplayBuffer,
    TrainConfig, Transition,
};
use crate::stats::{mean, median};

const STREAM_INIT: u64 = 0;
const STREAM_ENV: u64 = 1;
const STREAM_AGENT: u64 = 2;
const STREAM_VARIANCE: u64 = 5;
/// Evaluation `k` uses stream `STREAM_EVAL_BASE + k`.
const STREAM_EVAL_BASE: u64 = 1 << 32;

/// Fraction of the oracle return that counts as "solved".
pub const SOLVED_FRACTION: f64 = 0.95;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TrialKey {
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Overrides `run.workers`.
    pub workers: Option<usize>,
    /// A checkpoint file, or a directory searched for the latest
    /// checkpoint of each trial.
    pub resume: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct TrialResult {
    pub key: TrialKey,
    pub records: Vec<EvalRecord>,
    /// Diagnostic for a trial that stopped early.
    pub aborted: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrialSummary {
    pub seed: u64,
    pub final_return: Option<f64>,
    pub auc: Option<f64>,
    pub frames_to_solved: Option<u64>,
    pub aborted: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OptimizerSummary {
    pub optimizer: OptimizerKind,
    pub trials: Vec<TrialSummary>,
    pub median_auc: Option<f64>,
    /// Mean over trials of the last evaluation return.
    pub mean_final_return: Option<f64>,
    /// Median over trials; a trial that never got there counts as infinite,
    /// so this is `None` when at least half never did.
    pub median_frames_to_solved: Option<f64>,
    /// Against the Adam baseline, when both ran.
    pub normalized_score: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub environment: String,
    pub frames: u64,
    /// Expected return of the value-iteration policy under the evaluation
    /// protocol.
    pub optimal_return: f64,
    /// Expected return of the uniformly random policy.
    pub random_return: f64,
    pub solved_threshold: f64,
    pub optimizers: Vec<OptimizerSummary>,
}

impl RunSummary {
    pub fn optimizer(&self, kind: OptimizerKind) -> Option<&OptimizerSummary> {
        self.optimizers.iter().find(|o| o.optimizer == kind)
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub trials: Vec<TrialResult>,
    pub summary: RunSummary,
}

impl ExperimentOutcome {
    pub fn any_aborted(&self) -> bool {
        self.trials.iter().any(|t| t.aborted.is_some())
    }

    pub fn records(&self, kind: OptimizerKind) -> Vec<&[EvalRecord]> {
        self.trials
            .iter()
            .filter(|t| t.key.optimizer == kind)
            .map(|t| t.records.as_slice())
            .collect()
    }
}

pub fn optimizer_dir(root: &Path, kind: OptimizerKind) -> PathBuf {
    root.join(kind.name())
}

pub fn trial_csv_path(root: &Path, key: TrialKey) -> PathBuf {
    optimizer_dir(root, key.optimizer).join(format!("trial_{}.csv", key.seed))
}

pub fn checkpoint_path(root: &Path, key: TrialKey, frame: u64) -> PathBuf {
    optimizer_dir(root, key.optimizer)
        .join("checkpoints")
        .join(format!("trial_{}_frame_{}.ckpt", key.seed, frame))
}

/// Oracle references for the configured environment: (optimal, random)
/// expected undiscounted returns under the evaluation protocol.
pub fn reference_returns(cfg: &ExperimentConfig) -> Result<(f64, f64)> {
    let model = cfg.environment.build(0)?.tabular_model();
    let policy = model.optimal_policy(cfg.rl.gamma);
    let optimal = model.epsilon_greedy_return(&policy, cfg.run.eval_epsilon, EPISODE_CAP);
    let random = model.epsilon_greedy_return(&policy, 1.0, EPISODE_CAP);
    Ok((optimal, random))
}

enum Message {
    Row(TrialKey, EvalRecord),
    Done(TrialResult),
}

pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let root = cfg.run.output_dir.clone();
    let fingerprint = cfg.fingerprint()?;
    let keys: Vec<TrialKey> = cfg
        .optimizer
        .kind
        .kinds()
        .into_iter()
        .flat_map(|optimizer| cfg.run.seeds.iter().map(move |&seed| TrialKey { optimizer, seed }))
        .collect();

    let mut resume = match &opts.resume {
        Some(p) => find_checkpoints(p)?,
        None => HashMap::new(),
    };
    for (key, ckpt) in &resume {
        if ckpt.config_fingerprint != fingerprint {
            return Err(Error::Config(format!(
                "checkpoint for {} seed {} was written by a different config",
                key.optimizer, key.seed
            )));
        }
    }

    fs::create_dir_all(&root)?;
    fs::write(root.join("config.toml"), cfg.to_toml_string()?)?;
    let mut writers = BTreeMap::new();
    for &key in &keys {
        fs::create_dir_all(optimizer_dir(&root, key.optimizer).join("checkpoints"))?;
        let file = BufWriter::new(File::create(trial_csv_path(&root, key))?);
        writers.insert(key, CurveWriter::new(file)?);
    }

    let workers = opts.workers.unwrap_or(cfg.run.workers).max(1).min(keys.len().max(1));
    let jobs: Vec<(TrialKey, Option<TrialCheckpoint>)> =
        keys.iter().map(|&k| (k, resume.remove(&k))).collect();
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<Message>();
    let mut results: Vec<TrialResult> = Vec::with_capacity(keys.len());

    std::thread::scope(|scope| -> Result<()> {
        for _ in 0..workers {
            let tx = tx.clone();
            let jobs = &jobs;
            let next = &next;
            let root = &root;
            let fingerprint = &fingerprint;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((key, ckpt)) = jobs.get(i) else { break };
                let result = run_trial(cfg, *key, ckpt.clone(), root, fingerprint, |rec| {
                    let _ = tx.send(Message::Row(*key, rec.clone()));
                });
                let _ = tx.send(Message::Done(result));
            });
        }
        drop(tx);
        for msg in rx {
            match msg {
                Message::Row(key, rec) => writers.get_mut(&key).expect("known trial").write(&rec)?,
                Message::Done(result) => {
                    if let Some(why) = &result.aborted {
                        log::error!("{} seed {} aborted: {why}", result.key.optimizer, result.key.seed);
                    } else {
                        log::info!("{} seed {} finished", result.key.optimizer, result.key.seed);
                    }
                    results.push(result);
                }
            }
        }
        Ok(())
    })?;
    drop(writers);
    results.sort_by_key(|r| r.key);

    for kind in cfg.optimizer.kind.kinds() {
        let curves: Vec<Vec<EvalRecord>> = results
            .iter()
            .filter(|r| r.key.optimizer == kind)
            .map(|r| r.records.clone())
            .collect();
        let file = BufWriter::new(File::create(optimizer_dir(&root, kind).join("aggregate.csv"))?);
        write_aggregate(file, &aggregate(&curves))?;
    }
    let summary = summarize_run(cfg, &results)?;
    let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::Corrupt(e.to_string()))?;
    fs::write(root.join("summary.json"), text + "\n")?;
    Ok(ExperimentOutcome { trials: results, summary })
}

/// Loads one checkpoint, or the latest checkpoint per trial under a directory.
fn find_checkpoints(path: &Path) -> Result<HashMap<TrialKey, TrialCheckpoint>> {
    let mut found: HashMap<TrialKey, TrialCheckpoint> = HashMap::new();
    let mut add = |ckpt: TrialCheckpoint| {
        let key = TrialKey {
            optimizer: ckpt.optimizer,
            seed: ckpt.seed,
        };
        match found.get(&key) {
            Some(prev) if prev.frame >= ckpt.frame => {}
            _ => {
                found.insert(key, ckpt);
            }
        }
    };
    if path.is_dir() {
        let mut stack = vec![path.to_path_buf()];
        while let Some(dir) = stack.pop() {
            for entry in fs::read_dir(&dir)? {
                let p = entry?.path();
                if p.is_dir() {
                    stack.push(p);
                } else if p.extension().is_some_and(|e| e == "ckpt") {
                    add(load_checkpoint(&p)?);
                }
            }
        }
    } else {
        add(load_checkpoint(path)?);
    }
    Ok(found)
}

fn summarize_run(cfg: &ExperimentConfig, results: &[TrialResult]) -> Result<RunSummary> {
    let (optimal, random) = reference_returns(cfg)?;
    let threshold = SOLVED_FRACTION * optimal;
    let mut optimizers: Vec<OptimizerSummary> = cfg
        .optimizer
        .kind
        .kinds()
        .into_iter()
        .map(|kind| {
            let trials: Vec<TrialSummary> = results
                .iter()
                .filter(|r| r.key.optimizer == kind)
                .map(|r| TrialSummary {
                    seed: r.key.seed,
                    final_return: r.records.last().map(|x| x.eval_return),
                    auc: area_under_curve(&r.records),
                    frames_to_solved: frames_to_threshold(&r.records, threshold),
                    aborted: r.aborted.clone(),
                })
                .collect();
            let aucs: Vec<f64> = trials.iter().filter_map(|t| t.auc).collect();
            let finals: Vec<f64> = trials.iter().filter_map(|t| t.final_return).collect();
            let solved: Vec<f64> = trials
                .iter()
                .map(|t| t.frames_to_solved.map_or(f64::INFINITY, |f| f as f64))
                .collect();
            let med_solved = median(&solved);
            OptimizerSummary {
                optimizer: kind,
                median_auc: median(&aucs),
                mean_final_return: mean(&finals),
                median_frames_to_solved: med_solved.filter(|f| f.is_finite()),
                normalized_score: None,
                trials,
            }
        })
        .collect();
    let baseline = optimizers
        .iter()
        .find(|o| o.optimizer == OptimizerKind::Adam)
        .and_then(|o| o.mean_final_return);
    if let Some(base) = baseline {
        for o in &mut optimizers {
            o.normalized_score = o.mean_final_return.and_then(|a| normalized_score(a, random, base).ok());
        }
    }
    Ok(RunSummary {
        environment: cfg.environment.name().to_string(),
        frames: cfg.run.frames,
        optimal_return: optimal,
        random_return: random,
        solved_threshold: threshold,
        optimizers,
    })
}

/// Mutable state of one trial between frames.
struct Trial {
    key: TrialKey,
    frame: u64,
    env: crate::env::AnyEnv,
    observation: Vec<f64>,
    learner: QLearner,
    adam: AdamState,
    agent_rng: ChaCha8Rng,
    variance_rng: ChaCha8Rng,
    buffer: ReplayBuffer,
    loss_sum: f64,
    loss_count: u64,
    records: Vec<EvalRecord>,
}

impl Trial {
    fn fresh(cfg: &ExperimentConfig, key: TrialKey) -> Result<Self> {
        let arch = cfg.architecture()?;
        let net = MlpNetwork::init(arch.clone(), &mut stream(key.seed, STREAM_INIT));
        let learner = QLearner::new(net, cfg.rl.gamma, cfg.rl.sync_period)?;
        let adam = AdamState::new(arch.layout(), cfg.adam)?;
        let mut env = cfg.environment.build(stream(key.seed, STREAM_ENV).gen())?;
        let observation = env.reset();
        Ok(Self {
            key,
            frame: 0,
            env,
            observation,
            learner,
            adam,
            agent_rng: stream(key.seed, STREAM_AGENT),
            variance_rng: stream(key.seed, STREAM_VARIANCE),
            buffer: ReplayBuffer::new(cfg.rl.replay_capacity)?,
            loss_sum: 0.0,
            loss_count: 0,
            records: Vec::new(),
        })
    }

    fn restore(cfg: &ExperimentConfig, ckpt: TrialCheckpoint) -> Result<Self> {
        let buffer = match ckpt.buffer {
            Some(b) => b,
            None => {
                log::warn!(
                    "{} seed {}: checkpoint has no replay contents; resuming with an empty buffer",
                    ckpt.optimizer,
                    ckpt.seed
                );
                ReplayBuffer::new(cfg.rl.replay_capacity)?
            }
        };
        Ok(Self {
            key: TrialKey {
                optimizer: ckpt.optimizer,
                seed: ckpt.seed,
            },
            frame: ckpt.frame,
            env: ckpt.env,
            observation: ckpt.observation,
            learner: ckpt.learner,
            adam: ckpt.adam,
            agent_rng: ckpt.agent_rng,
            variance_rng: ckpt.variance_rng,
            buffer,
            loss_sum: ckpt.loss_sum,
            loss_count: ckpt.loss_count,
            records: ckpt.records,
        })
    }

    fn checkpoint(&self, cfg: &ExperimentConfig, fingerprint: &str) -> TrialCheckpoint {
        TrialCheckpoint {
            config_fingerprint: fingerprint.to_string(),
            optimizer: self.key.optimizer,
            seed: self.key.seed,
            frame: self.frame,
            env: self.env.clone(),
            observation: self.observation.clone(),
            learner: self.learner.clone(),
            adam: self.adam.clone(),
            agent_rng: self.agent_rng.clone(),
            variance_rng: self.variance_rng.clone(),
            buffer_meta: self.buffer.meta(),
            buffer: cfg.run.persist_buffer.then(|| self.buffer.clone()),
            loss_sum: self.loss_sum,
            loss_count: self.loss_count,
            records: self.records.clone(),
        }
    }

    /// One environment step, plus an optimizer update when due.
    fn advance(&mut self, cfg: &ExperimentConfig, train: &TrainConfig, epsilon: f64) -> Result<()> {
        let q = self.learner.q_values(&self.observation)?;
        let action = epsilon_greedy_action(&q, epsilon, &mut self.agent_rng)?;
        let out = self.env.step(action)?;
        let done = out.done();
        self.buffer.push(Transition {
            state: std::mem::take(&mut self.observation),
            action,
            reward: out.reward,
            next_state: out.state.clone(),
            terminal: out.terminal,
        });
        self.observation = if done { self.env.reset() } else { out.state };
        self.frame += 1;
        if self.frame % cfg.rl.learn_every == 0 {
            let outcome = train_iteration(&mut self.learner, &self.buffer, &mut self.adam, train, &mut self.agent_rng)?;
            if let IterationOutcome::Updated { loss } = outcome {
                self.loss_sum += loss;
                self.loss_count += 1;
            }
        }
        Ok(())
    }

    fn evaluate(&mut self, cfg: &ExperimentConfig, started: Instant) -> Result<EvalRecord> {
        let index = self.frame / cfg.run.eval_period;
        let eval_return = evaluate_policy(cfg, self.learner.online(), self.key.seed, index)?;
        let loss = (self.loss_count > 0).then(|| self.loss_sum / self.loss_count as f64);
        self.loss_sum = 0.0;
        self.loss_count = 0;
        let grad_var_empirical = self.variance_snapshot(cfg)?;
        let rec = EvalRecord {
            trial_seed: self.key.seed,
            frame: self.frame,
            eval_return,
            loss,
            grad_var_empirical,
            grad_var_bound: None,
            wall_ms: if cfg.run.record_wall_clock {
                started.elapsed().as_millis() as u64
            } else {
                0
            },
        };
        self.records.push(rec.clone());
        Ok(rec)
    }

    /// Trace-variance of this trial's update direction on a replay sample,
    /// per unit of step size so both optimizers are on one scale. No bound
    /// applies: a network's Lipschitz constant is unknown.
    fn variance_snapshot(&mut self, cfg: &ExperimentConfig) -> Result<Option<f64>> {
        let trials = cfg.variance.trials;
        let b = cfg.svrg.anchor_batch();
        if trials < 2 || self.buffer.len() < b {
            return Ok(None);
        }
        let pool_size = self.buffer.len().min(4 * b);
        let pool = self.buffer.sample_distinct(pool_size, &mut self.variance_rng)?;
        let objective = self.learner.bellman_objective(&pool, cfg.rl.target_rule)?;
        let w = self.learner.online().weights();
        let stats = match self.key.optimizer {
            OptimizerKind::Adam => {
                let est = MinibatchEstimator {
                    objective: &objective,
                    size: b,
                    replacement: false,
                };
                empirical_gradient_variance(&est, w, trials, &mut self.variance_rng)?.trace_variance
            }
            OptimizerKind::SvrDqn => {
                let est = PerStepDisplacement(SvrDqnEstimator {
                    objective: &objective,
                    cfg: cfg.svrg,
                });
                empirical_gradient_variance(&est, w, trials, &mut self.variance_rng)?.trace_variance
            }
        };
        Ok(Some(stats))
    }
}

/// `(w~ - w_m) / (m eta)`: the inner loop's average descent direction.
struct PerStepDisplacement<'a, O: ?Sized>(SvrDqnEstimator<'a, O>);

impl<O: crate::objective::SampleGradients + ?Sized> GradientEstimator for PerStepDisplacement<'_, O> {
    fn tag(&self) -> crate::instrument::EstimatorTag {
        self.0.tag()
    }

    fn draw(&self, w: &ParamVector, rng: &mut dyn rand::RngCore) -> Result<Vec<f64>> {
        let cfg: &SvrgConfig = &self.0.cfg;
        let scale = -1.0 / (cfg.inner_steps() as f64 * cfg.eta());
        Ok(self.0.draw(w, rng)?.into_iter().map(|x| x * scale).collect())
    }
}

/// Mean undiscounted return of the epsilon-greedy policy over fresh
/// episodes. Evaluation `index` has its own random stream, so it does not
/// disturb training and is reproducible on resume.
pub fn evaluate_policy(cfg: &ExperimentConfig, net: &MlpNetwork, seed: u64, index: u64) -> Result<f64> {
    let mut rng = stream(seed, STREAM_EVAL_BASE + index);
    let mut env = cfg.environment.build(rng.gen())?;
    let mut total = 0.0;
    for _ in 0..cfg.run.eval_episodes {
        let mut state = env.reset();
        loop {
            let q = net.forward(&state)?;
            let a = epsilon_greedy_action(&q, cfg.run.eval_epsilon, &mut rng)?;
            let out = env.step(a)?;
            total += out.reward;
            if out.done() {
                break;
            }
            state = out.state;
        }
    }
    Ok(total / cfg.run.eval_episodes as f64)
}

/// Runs one trial to `run.frames`, reporting each evaluation row through
/// `emit` as soon as it exists. Errors end the trial with a diagnostic
/// instead of propagating, so sibling trials keep going.
pub fn run_trial(
    cfg: &ExperimentConfig,
    key: TrialKey,
    resume: Option<TrialCheckpoint>,
    root: &Path,
    fingerprint: &str,
    mut emit: impl FnMut(&EvalRecord),
) -> TrialResult {
    let mut records = Vec::new();
    let result = (|| -> Result<()> {
        let mut trial = match resume {
            Some(ckpt) => Trial::restore(cfg, ckpt)?,
            None => Trial::fresh(cfg, key)?,
        };
        for rec in &trial.records {
            emit(rec);
        }
        records = trial.records.clone();
        let train = TrainConfig {
            optimizer: key.optimizer,
            svrg: cfg.svrg,
            target_rule: cfg.rl.target_rule,
        };
        let schedule = cfg.epsilon_schedule()?;
        let started = Instant::now();
        while trial.frame < cfg.run.frames {
            let epsilon = schedule.value(trial.frame);
            trial.advance(cfg, &train, epsilon).map_err(|e| match e {
                Error::NonFinite(what) => Error::NonFinite(format!("{what} at frame {}", trial.frame)),
                other => other,
            })?;
            if trial.frame % cfg.run.eval_period == 0 {
                let rec = trial.evaluate(cfg, started)?;
                emit(&rec);
                records.push(rec);
            }
            let period = cfg.run.checkpoint_period;
            if period > 0 && trial.frame % period == 0 && trial.frame < cfg.run.frames {
                save_checkpoint(&checkpoint_path(root, key, trial.frame), &trial.checkpoint(cfg, fingerprint))?;
            }
        }
        save_checkpoint(&checkpoint_path(root, key, trial.frame), &trial.checkpoint(cfg, fingerprint))?;
        Ok(())
    })();
    TrialResult {
        key,
        records,
        aborted: result.err().map(|e| e.to_string()),
    }
}
