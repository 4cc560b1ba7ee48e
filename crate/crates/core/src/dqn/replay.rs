//! Proportional prioritized replay backed by sum and min segment trees.

use rand::Rng;

use crate::error::{Error, Result};
use crate::mdp::Transition;

/// Binary segment tree over a power-of-two number of leaves.
#[derive(Debug, Clone)]
struct SegmentTree {
    leaves: usize,
    nodes: Vec<f64>,
    combine: fn(f64, f64) -> f64,
}

impl SegmentTree {
    fn new(capacity: usize, neutral: f64, combine: fn(f64, f64) -> f64) -> Self {
        let leaves = capacity.next_power_of_two();
        SegmentTree {
            leaves,
            nodes: vec![neutral; 2 * leaves],
            combine,
        }
    }

    fn set(&mut self, i: usize, value: f64) {
        let mut node = i + self.leaves;
        self.nodes[node] = value;
        while node > 1 {
            node /= 2;
            self.nodes[node] = (self.combine)(self.nodes[2 * node], self.nodes[2 * node + 1]);
        }
    }

    fn get(&self, i: usize) -> f64 {
        self.nodes[i + self.leaves]
    }

    fn root(&self) -> f64 {
        self.nodes[1]
    }

    /// For a sum tree: the smallest leaf index whose prefix sum exceeds `mass`.
    fn find_prefix(&self, mut mass: f64) -> usize {
        let mut node = 1;
        while node < self.leaves {
            let left = self.nodes[2 * node];
            if mass < left {
                node *= 2;
            } else {
                mass -= left;
                node = 2 * node + 1;
            }
        }
        node - self.leaves
    }
}

/// A sampled minibatch: buffer indices and normalized importance weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
}

/// Bounded ring of transitions sampled with probability
/// `priority^alpha / sum_k priority_k^alpha`.
#[derive(Debug, Clone)]
pub struct PrioritizedReplay {
    capacity: usize,
    alpha: f64,
    items: Vec<Transition>,
    priorities: Vec<f64>,
    next: usize,
    sums: SegmentTree,
    mins: SegmentTree,
    max_priority: f64,
}

impl PrioritizedReplay {
    pub fn new(capacity: usize, alpha: f64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::Config(format!("priority exponent must be >= 0, got {alpha}")));
        }
        Ok(PrioritizedReplay {
            capacity,
            alpha,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            priorities: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
            sums: SegmentTree::new(capacity, 0.0, |a, b| a + b),
            mins: SegmentTree::new(capacity, f64::INFINITY, f64::min),
            max_priority: 1.0,
        })
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

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    /// Raw priority (before the exponent) of entry `i`.
    pub fn priority(&self, i: usize) -> f64 {
        self.priorities[i]
    }

    /// Sampling probability of entry `i`.
    pub fn probability(&self, i: usize) -> f64 {
        self.sums.get(i) / self.sums.root()
    }

    /// Stores a transition with the largest priority seen so far, evicting
    /// the oldest entry when full. Returns the slot index.
    pub fn store(&mut self, transition: Transition) -> usize {
        let slot = self.next;
        if self.items.len() < self.capacity {
            self.items.push(transition);
            self.priorities.push(0.0);
        } else {
            self.items[slot] = transition;
        }
        self.next = (self.next + 1) % self.capacity;
        self.set_priority(slot, self.max_priority);
        slot
    }

    fn set_priority(&mut self, slot: usize, priority: f64) {
        let scaled = priority.powf(self.alpha);
        self.priorities[slot] = priority;
        self.sums.set(slot, scaled);
        self.mins.set(slot, scaled);
    }

    /// Draws `batch_size` indices with replacement. Importance weights are
    /// `(N * P(i))^-beta` divided by the largest possible weight in the buffer.
    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, beta: f64, rng: &mut R) -> Result<Sample> {
        if batch_size == 0 || self.items.len() < batch_size {
            return Err(Error::Usage(format!(
                "cannot sample {batch_size} transitions from a buffer holding {}",
                self.items.len()
            )));
        }
        let total = self.sums.root();
        let n = self.items.len() as f64;
        let max_weight = (n * self.mins.root() / total).powf(-beta);
        let mut indices = Vec::with_capacity(batch_size);
        let mut weights = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let mass = rng.gen::<f64>() * total;
            let i = self.sums.find_prefix(mass).min(self.items.len() - 1);
            let p = self.sums.get(i) / total;
            indices.push(i);
            weights.push((n * p).powf(-beta) / max_weight);
        }
        Ok(Sample { indices, weights })
    }

    /// Replaces the priorities of the given entries. Priorities must be
    /// strictly positive and finite.
    pub fn update_priorities(&mut self, indices: &[usize], priorities: &[f64]) -> Result<()> {
        if indices.len() != priorities.len() {
            return Err(Error::Usage("indices and priorities differ in length".into()));
        }
        for (&i, &p) in indices.iter().zip(priorities) {
            if i >= self.items.len() {
                return Err(Error::Usage(format!("replay index {i} out of range")));
            }
            if !(p.is_finite() && p > 0.0) {
                return Err(Error::Usage(format!("priority must be positive and finite, got {p}")));
            }
            self.set_priority(i, p);
            self.max_priority = self.max_priority.max(p);
        }
        Ok(())
    }
}
