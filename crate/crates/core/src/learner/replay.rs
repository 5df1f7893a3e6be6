use std::collections::VecDeque;

use rand::Rng;

use crate::execution::Observation;

use super::LearnError;

/// One environment step. States index rows of a shared feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Observation,
    pub action: usize,
    pub reward: f64,
    pub next_state: Observation,
    pub done: bool,
    /// Optimal action values of `state`, used by the teacher term.
    pub qstar_row: Option<Vec<f64>>,
}

/// FIFO experience buffer with uniform sampling (with replacement).
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self, LearnError> {
        if capacity == 0 {
            return Err(LearnError::Config("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn extend(&mut self, ts: impl IntoIterator<Item = Transition>) {
        for t in ts {
            self.push(t);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R, batch: usize) -> Result<Vec<&Transition>, LearnError> {
        if self.items.len() < batch || batch == 0 {
            return Err(LearnError::NotEnoughSamples {
                have: self.items.len(),
                need: batch,
            });
        }
        Ok((0..batch).map(|_| &self.items[rng.random_range(0..self.items.len())]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tr(i: usize) -> Transition {
        let obs = Observation { t: i, position_index: 0 };
        Transition {
            state: obs,
            action: 0,
            reward: i as f64,
            next_state: obs,
            done: false,
            qstar_row: None,
        }
    }

    #[test]
    fn fifo_eviction() {
        let mut b = ReplayBuffer::new(3).unwrap();
        b.extend((0..5).map(tr));
        assert_eq!(b.len(), 3);
        let rewards: Vec<f64> = b.iter().map(|t| t.reward).collect();
        assert_eq!(rewards, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn sampling_requires_batch() {
        let mut b = ReplayBuffer::new(10).unwrap();
        b.extend((0..3).map(tr));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(b.sample(&mut rng, 4).is_err());
        assert_eq!(b.sample(&mut rng, 3).unwrap().len(), 3);
        assert!(ReplayBuffer::new(0).is_err());
    }
}
