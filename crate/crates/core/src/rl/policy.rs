use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

pub fn epsilon_greedy_action<R: Rng + ?Sized>(q_values: &[f64], epsilon: f64, rng: &mut R) -> Result<usize> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!("epsilon must be in [0, 1], got {epsilon}")));
    }
    let greedy = argmax(q_values).ok_or(Error::EmptyBatch)?;
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        Ok(rng.gen_range(0..q_values.len()))
    } else {
        Ok(greedy)
    }
}

/// Linear anneal from `start` to `end` over `anneal_frames`, then flat.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub anneal_frames: u64,
}

impl EpsilonSchedule {
    pub fn new(start: f64, end: f64, anneal_frames: u64) -> Result<Self> {
        for e in [start, end] {
            if !(0.0..=1.0).contains(&e) {
                return Err(Error::InvalidArgument(format!("epsilon {e} outside [0, 1]")));
            }
        }
        if anneal_frames == 0 {
            return Err(Error::InvalidArgument("anneal_frames must be positive".into()));
        }
        Ok(Self {
            start,
            end,
            anneal_frames,
        })
    }

    pub fn value(&self, frame: u64) -> f64 {
        if frame >= self.anneal_frames {
            return self.end;
        }
        let frac = frame as f64 / self.anneal_frames as f64;
        self.start + (self.end - self.start) * frac
    }
}
