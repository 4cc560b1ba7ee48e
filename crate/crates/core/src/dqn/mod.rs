//! Deep Q-learning: network, prioritized replay, exploration schedule and
//! the one-step TD update.

mod agent;
pub mod loss;
pub mod network;
pub mod optimizer;
pub mod replay;
pub mod schedule;

pub use agent::{select_action, td_train_step, DqnAgent};
pub use network::{argmax, Activation, QNetwork};
pub use replay::{PrioritizedReplay, Sample};
pub use schedule::LinearSchedule;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Training hyperparameters. Defaults reproduce the reference cart-pole
/// configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub total_timesteps: u64,
    pub gamma: f64,
    pub learning_rate: f64,
    pub buffer_size: usize,
    /// Environment step at which gradient updates begin.
    pub learning_starts: u64,
    /// Target network is synchronized every this many environment steps.
    pub target_update_interval: u64,
    pub batch_size: usize,
    pub hidden_sizes: Vec<usize>,
    pub exploration_initial: f64,
    pub exploration_final: f64,
    /// Fraction of `total_timesteps` over which epsilon decays.
    pub exploration_fraction: f64,
    pub prioritized_alpha: f64,
    pub prioritized_beta: f64,
    /// Added to |TD error| so no priority reaches zero.
    pub priority_epsilon: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip_norm: Option<f64>,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            total_timesteps: 100_000,
            gamma: 0.99,
            learning_rate: 1e-3,
            buffer_size: 50_000,
            learning_starts: 1000,
            target_update_interval: 500,
            batch_size: 32,
            hidden_sizes: vec![64, 64],
            exploration_initial: 1.0,
            exploration_final: 0.02,
            exploration_fraction: 0.1,
            prioritized_alpha: 0.6,
            prioritized_beta: 0.4,
            priority_epsilon: 1e-6,
            grad_clip_norm: Some(10.0),
        }
    }
}

impl Hyperparams {
    pub fn exploration(&self) -> LinearSchedule {
        LinearSchedule::exploration(
            self.exploration_initial,
            self.exploration_final,
            self.exploration_fraction,
            self.total_timesteps,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            problems.push(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            problems.push("learning_rate must be positive".to_string());
        }
        if self.buffer_size == 0 || self.batch_size == 0 {
            problems.push("buffer_size and batch_size must be positive".to_string());
        }
        if self.batch_size > self.buffer_size {
            problems.push("batch_size cannot exceed buffer_size".to_string());
        }
        if self.target_update_interval == 0 {
            problems.push("target_update_interval must be positive".to_string());
        }
        if self.hidden_sizes.contains(&0) {
            problems.push("hidden layer widths must be positive".to_string());
        }
        for (name, v) in [
            ("exploration_initial", self.exploration_initial),
            ("exploration_final", self.exploration_final),
            ("exploration_fraction", self.exploration_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                problems.push(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if self.exploration_final > self.exploration_initial {
            problems.push("exploration must not increase".to_string());
        }
        if !(self.prioritized_alpha >= 0.0 && self.prioritized_beta >= 0.0) {
            problems.push("priority exponents must be non-negative".to_string());
        }
        if !(self.priority_epsilon > 0.0) {
            problems.push("priority_epsilon must be positive".to_string());
        }
        if matches!(self.grad_clip_norm, Some(c) if !(c > 0.0)) {
            problems.push("grad_clip_norm must be positive".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let h = Hyperparams::default();
        h.validate().unwrap();
        assert_eq!(h.exploration().horizon, 10_000);
    }

    #[test]
    fn rejects_bad_values() {
        let h = Hyperparams { gamma: 0.0, ..Default::default() };
        assert!(h.validate().is_err());
        let h = Hyperparams { target_update_interval: 0, ..Default::default() };
        assert!(h.validate().is_err());
        let h = Hyperparams { batch_size: 100, buffer_size: 10, ..Default::default() };
        assert!(h.validate().is_err());
    }

    #[test]
    fn json_fills_defaults_and_rejects_unknown() {
        let h: Hyperparams = serde_json::from_str(r#"{"total_timesteps": 2000}"#).unwrap();
        assert_eq!(h.total_timesteps, 2000);
        assert_eq!(h.gamma, 0.99);
        assert!(serde_json::from_str::<Hyperparams>(r#"{"lr": 1}"#).is_err());
    }
}
