//! Experiment configuration, read from TOML. Unknown keys are errors.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::{AnyEnv, GridWorld, StochasticChain};
use crate::error::{Error, Result};
use crate::mlp::{Activation, Architecture};
use crate::optim::{AdamHyper, SvrgConfig};
use crate::rl::{EpsilonSchedule, OptimizerKind, TargetRule};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub environment: EnvironmentConfig,
    #[serde(default)]
    pub network: NetworkConfig,
    pub optimizer: OptimizerConfig,
    #[serde(default = "desk_svrg")]
    pub svrg: SvrgConfig,
    #[serde(default)]
    pub adam: AdamHyper,
    #[serde(default)]
    pub rl: RlConfig,
    pub run: RunConfig,
    #[serde(default)]
    pub variance: VarianceConfig,
}

/// Desk-scale SVRG settings: `B = 64, b = 8, m = 8, eta = 0.05`.
pub fn desk_svrg() -> SvrgConfig {
    SvrgConfig::new(64, 8, 8, 0.05).unwrap()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum EnvironmentConfig {
    Gridworld(GridworldSpec),
    Chain(ChainSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridworldSpec {
    pub size: usize,
    pub start: [usize; 2],
    pub goal: [usize; 2],
    pub pits: Vec<[usize; 2]>,
    pub slip_prob: f64,
}

impl Default for GridworldSpec {
    fn default() -> Self {
        Self {
            size: 4,
            start: [0, 0],
            goal: [3, 3],
            pits: vec![[1, 1], [2, 3]],
            slip_prob: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChainSpec {
    pub length: usize,
    pub noise: f64,
}

impl Default for ChainSpec {
    fn default() -> Self {
        Self {
            length: 8,
            noise: 0.5,
        }
    }
}

impl EnvironmentConfig {
    pub fn name(&self) -> &'static str {
        match self {
            EnvironmentConfig::Gridworld(_) => "gridworld",
            EnvironmentConfig::Chain(_) => "chain",
        }
    }

    pub fn build(&self, seed: u64) -> Result<AnyEnv> {
        Ok(match self {
            EnvironmentConfig::Gridworld(g) => AnyEnv::Gridworld(GridWorld::new(
                g.size,
                (g.start[0], g.start[1]),
                (g.goal[0], g.goal[1]),
                g.pits.iter().map(|p| (p[0], p[1])).collect(),
                g.slip_prob,
                seed,
            )?),
            EnvironmentConfig::Chain(c) => AnyEnv::Chain(StochasticChain::new(c.length, c.noise, seed)?),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32],
            activation: Activation::Relu,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerChoice {
    Adam,
    SvrDqn,
    Both,
}

impl OptimizerChoice {
    pub fn kinds(self) -> Vec<OptimizerKind> {
        match self {
            OptimizerChoice::Adam => vec![OptimizerKind::Adam],
            OptimizerChoice::SvrDqn => vec![OptimizerKind::SvrDqn],
            OptimizerChoice::Both => vec![OptimizerKind::Adam, OptimizerKind::SvrDqn],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerChoice,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RlConfig {
    pub gamma: f64,
    pub replay_capacity: usize,
    /// Optimizer updates between target syncs.
    pub sync_period: u64,
    /// Environment steps per optimizer update.
    pub learn_every: u64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of `run.frames` over which epsilon anneals.
    pub epsilon_anneal_fraction: f64,
    pub target_rule: TargetRule,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            replay_capacity: 10_000,
            sync_period: 250,
            learn_every: 4,
            epsilon_start: 1.0,
            epsilon_end: 0.1,
            epsilon_anneal_fraction: 0.2,
            target_rule: TargetRule::Double,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub frames: u64,
    pub seeds: Vec<u64>,
    /// Frames between evaluations.
    pub eval_period: u64,
    pub eval_episodes: usize,
    pub eval_epsilon: f64,
    pub output_dir: PathBuf,
    /// Frames between checkpoints; 0 keeps only the final one.
    pub checkpoint_period: u64,
    /// Store replay contents in checkpoints so resumed runs replay exactly.
    pub persist_buffer: bool,
    /// Off by default so repeated runs write byte-identical CSVs.
    pub record_wall_clock: bool,
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            frames: 20_000,
            seeds: (0..6).collect(),
            eval_period: 1_000,
            eval_episodes: 20,
            eval_epsilon: 0.05,
            output_dir: PathBuf::from("runs"),
            checkpoint_period: 0,
            persist_buffer: false,
            record_wall_clock: false,
            workers: 1,
        }
    }
}

/// Gradient-variance snapshots taken at evaluation time.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VarianceConfig {
    /// Repeated estimator draws per snapshot; 0 disables snapshots.
    pub trials: usize,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.environment.build(0).map_err(|e| Error::Config(format!("environment: {e}")))?;
        if self.network.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("network.hidden sizes must be positive".into()));
        }
        self.adam.validate()?;
        let rl = &self.rl;
        if !(0.0..=1.0).contains(&rl.gamma) {
            return Err(Error::Config(format!("rl.gamma must be in [0, 1], got {}", rl.gamma)));
        }
        if rl.replay_capacity < self.svrg.anchor_batch() {
            return Err(Error::Config(format!(
                "rl.replay_capacity {} is smaller than svrg.B {}",
                rl.replay_capacity,
                self.svrg.anchor_batch()
            )));
        }
        if rl.sync_period == 0 || rl.learn_every == 0 {
            return Err(Error::Config("rl.sync_period and rl.learn_every must be positive".into()));
        }
        for (name, e) in [("epsilon_start", rl.epsilon_start), ("epsilon_end", rl.epsilon_end)] {
            if !(0.0..=1.0).contains(&e) {
                return Err(Error::Config(format!("rl.{name} must be in [0, 1], got {e}")));
            }
        }
        if !(rl.epsilon_anneal_fraction > 0.0 && rl.epsilon_anneal_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "rl.epsilon_anneal_fraction must be in (0, 1], got {}",
                rl.epsilon_anneal_fraction
            )));
        }
        let run = &self.run;
        if run.seeds.is_empty() {
            return Err(Error::Config("run.seeds must list at least one seed".into()));
        }
        let mut seeds = run.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != run.seeds.len() {
            return Err(Error::Config("run.seeds contains duplicates".into()));
        }
        if run.eval_period == 0 {
            return Err(Error::Config("run.eval_period must be positive".into()));
        }
        if run.eval_episodes == 0 {
            return Err(Error::Config("run.eval_episodes must be positive".into()));
        }
        if !(0.0..=1.0).contains(&run.eval_epsilon) {
            return Err(Error::Config(format!("run.eval_epsilon must be in [0, 1], got {}", run.eval_epsilon)));
        }
        if run.workers == 0 {
            return Err(Error::Config("run.workers must be positive".into()));
        }
        if self.variance.trials == 1 {
            return Err(Error::Config("variance.trials must be 0 (off) or >= 2".into()));
        }
        Ok(())
    }

    pub fn architecture(&self) -> Result<Architecture> {
        let env = self.environment.build(0)?;
        use crate::env::Environment;
        let mut sizes = vec![env.state_dim()];
        sizes.extend(&self.network.hidden);
        sizes.push(env.action_count());
        Architecture::new(sizes, self.network.activation)
    }

    pub fn epsilon_schedule(&self) -> Result<EpsilonSchedule> {
        let anneal = ((self.run.frames as f64 * self.rl.epsilon_anneal_fraction).round() as u64).max(1);
        EpsilonSchedule::new(self.rl.epsilon_start, self.rl.epsilon_end, anneal)
    }

    /// Digest of everything that shapes a trial's trace. Worker count and
    /// output location are excluded so a run can resume elsewhere.
    pub fn fingerprint(&self) -> Result<String> {
        let mut c = self.clone();
        c.run.workers = 1;
        c.run.output_dir = PathBuf::new();
        c.run.checkpoint_period = 0;
        let text = serde_json::to_string(&c).map_err(|e| Error::Config(e.to_string()))?;
        Ok(hex_digest(text.as_bytes()))
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
