use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::AgentError;
use crate::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    /// `obs` is the first observation of its episode.
    pub is_first: bool,
    /// The episode ended in a true terminal state (no bootstrap).
    pub is_terminal: bool,
    /// The episode hit its time limit (bootstraps as usual).
    pub is_truncated: bool,
}

/// Fixed-capacity FIFO of transitions with seeded uniform sampling (with
/// replacement).
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            cursor: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    pub fn sample(&mut self, batch_size: usize) -> Result<Batch, AgentError> {
        if batch_size == 0 {
            return Err(AgentError::EmptyBatch);
        }
        if self.items.len() < batch_size {
            return Err(AgentError::BufferUnderfull {
                have: self.items.len(),
                need: batch_size,
            });
        }
        let picks: Vec<&Transition> = (0..batch_size)
            .map(|_| &self.items[self.rng.random_range(0..self.items.len())])
            .collect();
        Ok(Batch::from_transitions(picks))
    }
}

/// Column-stacked transitions ready to feed a loss graph.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub obs: Tensor,
    pub action: Tensor,
    pub reward: Tensor,
    pub next_obs: Tensor,
    /// 1 where the transition does not end in a terminal state.
    pub not_terminal: Tensor,
    pub is_first: Tensor,
}

impl Batch {
    pub fn from_transitions<'a>(items: impl IntoIterator<Item = &'a Transition>) -> Self {
        let items: Vec<&Transition> = items.into_iter().collect();
        let b = items.len();
        assert!(b > 0, "batch needs at least one transition");
        let stack = |f: &dyn Fn(&Transition) -> &[f64]| {
            let w = f(items[0]).len();
            let data: Vec<f64> = items.iter().flat_map(|t| f(t).iter().copied()).collect();
            Tensor::matrix(b, w, data)
        };
        let col = |f: &dyn Fn(&Transition) -> f64| {
            Tensor::matrix(b, 1, items.iter().map(|t| f(t)).collect())
        };
        Self {
            obs: stack(&|t| &t.obs),
            action: stack(&|t| &t.action),
            reward: col(&|t| t.reward),
            next_obs: stack(&|t| &t.next_obs),
            not_terminal: col(&|t| if t.is_terminal { 0.0 } else { 1.0 }),
            is_first: col(&|t| if t.is_first { 1.0 } else { 0.0 }),
        }
    }

    pub fn len(&self) -> usize {
        self.obs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tr(i: usize) -> Transition {
        Transition {
            obs: vec![i as f64],
            action: vec![0.0],
            reward: i as f64,
            next_obs: vec![i as f64 + 1.0],
            is_first: i == 0,
            is_terminal: false,
            is_truncated: false,
        }
    }

    #[test]
    fn fifo_eviction() {
        let mut buf = ReplayBuffer::new(3, 0);
        for i in 0..5 {
            buf.push(tr(i));
        }
        assert_eq!(buf.len(), 3);
        let mut rewards: Vec<f64> = buf.iter().map(|t| t.reward).collect();
        rewards.sort_by(f64::total_cmp);
        assert_eq!(rewards, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn underfull_and_empty() {
        let mut buf = ReplayBuffer::new(10, 0);
        buf.push(tr(0));
        assert_eq!(
            buf.sample(4).unwrap_err(),
            AgentError::BufferUnderfull { have: 1, need: 4 }
        );
        assert_eq!(buf.sample(0).unwrap_err(), AgentError::EmptyBatch);
    }

    #[test]
    fn sampling_is_seeded_and_roughly_uniform() {
        let mut a = ReplayBuffer::new(16, 7);
        let mut b = ReplayBuffer::new(16, 7);
        for i in 0..16 {
            a.push(tr(i % 4));
            b.push(tr(i % 4));
        }
        assert_eq!(a.sample(16).unwrap(), b.sample(16).unwrap());
        let mut counts = [0usize; 4];
        for _ in 0..2500 {
            for r in a.sample(16).unwrap().reward.data() {
                counts[*r as usize] += 1;
            }
        }
        for c in counts {
            assert!((c as f64 - 10_000.0).abs() < 400.0, "{counts:?}");
        }
    }

    #[test]
    fn batch_columns() {
        let mut t = tr(0);
        t.is_terminal = true;
        let batch = Batch::from_transitions([&t, &tr(3)]);
        assert_eq!(batch.not_terminal.data(), &[0.0, 1.0]);
        assert_eq!(batch.is_first.data(), &[1.0, 0.0]);
        assert_eq!(batch.next_obs.data(), &[1.0, 4.0]);
    }
}
