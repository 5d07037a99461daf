use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{one_hot, Environment, StepOutcome, TabularModel, EPISODE_CAP};
use crate::error::{Error, Result};

pub type Cell = (usize, usize);

/// Square grid, one-hot state. Actions: 0 up, 1 right, 2 down, 3 left;
/// moves into a wall leave the agent in place. Reward +1 on entering the
/// goal and -1 on entering a pit (both terminal), 0 otherwise. With
/// probability `slip_prob` the chosen action is replaced by a uniformly
/// random one.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridWorld {
    size: usize,
    start: Cell,
    goal: Cell,
    pits: Vec<Cell>,
    slip_prob: f64,
    pos: Cell,
    steps: usize,
    done: bool,
    rng: ChaCha8Rng,
}

pub const GOAL_REWARD: f64 = 1.0;
pub const PIT_REWARD: f64 = -1.0;

impl GridWorld {
    pub fn new(size: usize, start: Cell, goal: Cell, pits: Vec<Cell>, slip_prob: f64, seed: u64) -> Result<Self> {
        if size < 2 {
            return Err(Error::InvalidArgument(format!("grid size must be >= 2, got {size}")));
        }
        let inside = |c: Cell| c.0 < size && c.1 < size;
        if !inside(goal) {
            return Err(Error::InvalidArgument(format!("goal {goal:?} outside {size}x{size} grid")));
        }
        if !inside(start) {
            return Err(Error::InvalidArgument(format!("start {start:?} outside grid")));
        }
        for &p in &pits {
            if !inside(p) {
                return Err(Error::InvalidArgument(format!("pit {p:?} outside {size}x{size} grid")));
            }
            if p == goal || p == start {
                return Err(Error::InvalidArgument(format!("pit {p:?} overlaps goal or start")));
            }
        }
        if start == goal {
            return Err(Error::InvalidArgument("start equals goal".into()));
        }
        if !(0.0..=1.0).contains(&slip_prob) {
            return Err(Error::InvalidArgument(format!("slip_prob must be in [0, 1], got {slip_prob}")));
        }
        Ok(Self {
            size,
            start,
            goal,
            pits,
            slip_prob,
            pos: start,
            steps: 0,
            done: false,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// The 4x4 layout used by the default experiments: start top-left,
    /// goal bottom-right, two pits off the diagonal.
    pub fn default_4x4(seed: u64) -> Self {
        Self::new(4, (0, 0), (3, 3), vec![(1, 1), (2, 3)], 0.0, seed).unwrap()
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn position(&self) -> Cell {
        self.pos
    }

    fn index(&self, c: Cell) -> usize {
        c.0 * self.size + c.1
    }

    fn is_terminal(&self, c: Cell) -> bool {
        c == self.goal || self.pits.contains(&c)
    }

    fn reward_for(&self, c: Cell) -> f64 {
        if c == self.goal {
            GOAL_REWARD
        } else if self.pits.contains(&c) {
            PIT_REWARD
        } else {
            0.0
        }
    }

    fn moved(&self, c: Cell, action: usize) -> Cell {
        let (r, col) = c;
        match action {
            0 => (r.saturating_sub(1), col),
            1 => (r, (col + 1).min(self.size - 1)),
            2 => ((r + 1).min(self.size - 1), col),
            _ => (r, col.saturating_sub(1)),
        }
    }
}

pub fn gridworld(size: usize, goal: Cell, pits: Vec<Cell>, slip_prob: f64, seed: u64) -> Result<GridWorld> {
    GridWorld::new(size, (0, 0), goal, pits, slip_prob, seed)
}

impl Environment for GridWorld {
    fn state_dim(&self) -> usize {
        self.size * self.size
    }

    fn action_count(&self) -> usize {
        4
    }

    fn reset(&mut self) -> Vec<f64> {
        self.pos = self.start;
        self.steps = 0;
        self.done = false;
        one_hot(self.state_dim(), self.index(self.pos))
    }

    fn step(&mut self, action: usize) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::EpisodeOver);
        }
        if action >= 4 {
            return Err(Error::InvalidArgument(format!("action {action} out of range")));
        }
        let action = if self.slip_prob > 0.0 && self.rng.gen_bool(self.slip_prob) {
            self.rng.gen_range(0..4)
        } else {
            action
        };
        self.pos = self.moved(self.pos, action);
        self.steps += 1;
        let terminal = self.is_terminal(self.pos);
        let truncated = !terminal && self.steps >= EPISODE_CAP;
        self.done = terminal || truncated;
        Ok(StepOutcome {
            state: one_hot(self.state_dim(), self.index(self.pos)),
            reward: self.reward_for(self.pos),
            terminal,
            truncated,
        })
    }

    fn tabular_model(&self) -> TabularModel {
        let n = self.state_dim();
        let mut terminal = vec![false; n];
        let mut transitions = vec![vec![Vec::new(); 4]; n];
        for r in 0..self.size {
            for c in 0..self.size {
                let s = self.index((r, c));
                if self.is_terminal((r, c)) {
                    terminal[s] = true;
                    continue;
                }
                for (a, slot) in transitions[s].iter_mut().enumerate() {
                    for actual in 0..4 {
                        let p = self.slip_prob / 4.0 + if actual == a { 1.0 - self.slip_prob } else { 0.0 };
                        if p == 0.0 {
                            continue;
                        }
                        let next = self.moved((r, c), actual);
                        slot.push((p, self.index(next), self.reward_for(next)));
                    }
                }
            }
        }
        TabularModel {
            n_states: n,
            n_actions: 4,
            start: self.index(self.start),
            terminal,
            transitions,
        }
    }
}
