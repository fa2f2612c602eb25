//! Fixed-capacity FIFO experience replay with uniform sampling.

use std::collections::VecDeque;

use rand::Rng;

use crate::encoder::StateEncoding;
use crate::error::{Error, Result};
use crate::geometry::Action;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: StateEncoding,
    pub action: Action,
    pub reward: f64,
    pub next_state: StateEncoding,
    pub done: bool,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: VecDeque<Transition>,
    pushed: u64,
}

impl ReplayBuffer {
    pub const DEFAULT_CAPACITY: usize = 10_000;

    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidParameter("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            storage: VecDeque::with_capacity(capacity.min(1 << 16)),
            pushed: 0,
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

    /// Total transitions ever pushed, evicted ones included.
    pub fn total_pushed(&self) -> u64 {
        self.pushed
    }

    /// Appends `t`, evicting the oldest transition when full.
    pub fn push(&mut self, t: Transition) {
        if self.storage.len() == self.capacity {
            self.storage.pop_front();
        }
        self.storage.push_back(t);
        self.pushed += 1;
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.storage.iter()
    }

    /// `k` independent uniform draws with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        if self.storage.is_empty() {
            return Err(Error::EmptyReplay);
        }
        let n = self.storage.len();
        Ok((0..k).map(|_| &self.storage[rng.random_range(0..n)]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(tag: f64) -> Transition {
        Transition {
            state: StateEncoding::new(vec![tag]),
            action: Action::MoveLeft,
            reward: 0.0,
            next_state: StateEncoding::new(vec![tag + 0.5]),
            done: false,
        }
    }

    fn tags(buf: &ReplayBuffer) -> Vec<f64> {
        buf.iter().map(|t| t.state.as_slice()[0]).collect()
    }

    #[test]
    fn push_and_evict_fifo() {
        let mut buf = ReplayBuffer::new(3).unwrap();
        buf.push(t(0.0));
        assert_eq!(buf.len(), 1);
        for i in 1..4 {
            buf.push(t(i as f64));
        }
        assert_eq!(buf.len(), 3);
        assert_eq!(tags(&buf), vec![1.0, 2.0, 3.0]);
        assert_eq!(buf.total_pushed(), 4);
    }

    #[test]
    fn zero_capacity_rejected() {
        assert!(ReplayBuffer::new(0).is_err());
    }

    #[test]
    fn sampling() {
        let mut buf = ReplayBuffer::new(5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(buf.sample(2, &mut rng), Err(Error::EmptyReplay)));

        buf.push(t(7.0));
        let s = buf.sample(5, &mut rng).unwrap();
        assert_eq!(s.len(), 5);
        assert!(s.iter().all(|x| x.state.as_slice()[0] == 7.0));

        for i in 0..4 {
            buf.push(t(i as f64));
        }
        let before = tags(&buf);
        let a: Vec<f64> = buf
            .sample(20, &mut ChaCha8Rng::seed_from_u64(5))
            .unwrap()
            .iter()
            .map(|x| x.state.as_slice()[0])
            .collect();
        let b: Vec<f64> = buf
            .sample(20, &mut ChaCha8Rng::seed_from_u64(5))
            .unwrap()
            .iter()
            .map(|x| x.state.as_slice()[0])
            .collect();
        assert_eq!(a, b);
        assert_eq!(tags(&buf), before);
    }
}
