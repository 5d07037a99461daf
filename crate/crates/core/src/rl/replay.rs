use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::sample_without_replacement;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

/// Fixed-capacity ring of transitions; the oldest entry is overwritten
/// first once full.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: Vec<Transition>,
    /// Next slot to overwrite once full.
    cursor: usize,
}

/// Buffer bookkeeping without the contents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferMeta {
    pub capacity: usize,
    pub len: usize,
    pub cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            storage: Vec::new(),
            cursor: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn meta(&self) -> BufferMeta {
        BufferMeta {
            capacity: self.capacity,
            len: self.storage.len(),
            cursor: self.cursor,
        }
    }

    pub fn push(&mut self, tr: Transition) {
        if self.storage.len() < self.capacity {
            self.storage.push(tr);
        } else {
            self.storage[self.cursor] = tr;
            self.cursor = (self.cursor + 1) % self.capacity;
        }
    }

    /// Raw slot access; slot order is not insertion order once wrapped.
    pub fn get(&self, slot: usize) -> Option<&Transition> {
        self.storage.get(slot)
    }

    /// Oldest to newest.
    pub fn iter_ordered(&self) -> impl Iterator<Item = &Transition> {
        let (newer, older) = self.storage.split_at(self.cursor);
        older.iter().chain(newer)
    }

    /// `n` draws, uniform with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Transition>> {
        if self.storage.is_empty() {
            return Err(Error::EmptyBatch);
        }
        Ok((0..n)
            .map(|_| self.storage[rng.gen_range(0..self.storage.len())].clone())
            .collect())
    }

    /// `n` distinct transitions, uniform without replacement.
    pub fn sample_distinct<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Transition>> {
        if self.storage.len() < n {
            return Err(Error::InsufficientBuffer {
                have: self.storage.len(),
                need: n,
            });
        }
        Ok(sample_without_replacement(rng, self.storage.len(), n)?
            .into_iter()
            .map(|i| self.storage[i].clone())
            .collect())
    }
}

pub fn buffer_push(buf: &mut ReplayBuffer, tr: Transition) {
    buf.push(tr);
}

pub fn buffer_sample<R: Rng + ?Sized>(buf: &ReplayBuffer, n: usize, rng: &mut R) -> Result<Vec<Transition>> {
    buf.sample(n, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tr(i: usize) -> Transition {
        Transition {
            state: vec![i as f64],
            action: 0,
            reward: i as f64,
            next_state: vec![i as f64 + 1.0],
            terminal: false,
        }
    }

    #[test]
    fn push_and_evict() {
        let mut b = ReplayBuffer::new(2).unwrap();
        b.push(tr(0));
        assert_eq!(b.len(), 1);
        b.push(tr(1));
        b.push(tr(2));
        assert_eq!(b.len(), 2);
        assert!(b.iter_ordered().all(|t| t.reward != 0.0));
        assert!(ReplayBuffer::new(0).is_err());
    }

    #[test]
    fn last_128_of_1000_in_order() {
        let mut b = ReplayBuffer::new(128).unwrap();
        let mut naive: Vec<Transition> = Vec::new();
        for i in 0..1000 {
            b.push(tr(i));
            naive.push(tr(i));
        }
        let want = &naive[naive.len() - 128..];
        let got: Vec<Transition> = b.iter_ordered().cloned().collect();
        assert_eq!(got, want);
    }

    #[test]
    fn single_item_sampling() {
        let mut b = ReplayBuffer::new(4).unwrap();
        b.push(tr(7));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(b.sample(5, &mut rng).unwrap(), vec![tr(7); 5]);
        let empty = ReplayBuffer::new(4).unwrap();
        assert!(matches!(empty.sample(1, &mut rng), Err(Error::EmptyBatch)));
        assert!(b.sample_distinct(2, &mut rng).is_err());
    }

    #[test]
    fn sampling_reproducible_under_seed() {
        let mut b = ReplayBuffer::new(50).unwrap();
        (0..50).for_each(|i| b.push(tr(i)));
        let a = b.sample(20, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let c = b.sample(20, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn distinct_sampling_has_no_repeats() {
        let mut b = ReplayBuffer::new(30).unwrap();
        (0..30).for_each(|i| b.push(tr(i)));
        let s = b.sample_distinct(30, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut rewards: Vec<u64> = s.iter().map(|t| t.reward as u64).collect();
        rewards.sort();
        assert_eq!(rewards, (0..30).collect::<Vec<_>>());
    }

    proptest! {
        #[test]
        fn size_never_exceeds_capacity(cap in 1usize..20, pushes in 0usize..100) {
            let mut b = ReplayBuffer::new(cap).unwrap();
            for i in 0..pushes {
                b.push(tr(i));
                prop_assert!(b.len() <= cap);
                prop_assert_eq!(b.len(), (i + 1).min(cap));
            }
            let newest: Vec<f64> = b.iter_ordered().map(|t| t.reward).collect();
            let want: Vec<f64> = (pushes.saturating_sub(cap)..pushes).map(|i| i as f64).collect();
            prop_assert_eq!(newest, want);
        }
    }
}
