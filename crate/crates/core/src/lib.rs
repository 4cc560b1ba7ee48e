//! Behavioral watermarking of deep Q-network policies.
//!
//! A policy is trained jointly on its main task and on a small deterministic
//! watermark MDP whose states lie outside the main observation space. A
//! watermarked policy follows the watermark's identifier loop perfectly when
//! played greedily; an unrelated policy almost never does, which makes the
//! mean watermark return a test of provenance.

pub mod cartpole;
pub mod config;
pub mod dqn;
pub mod error;
pub mod mdp;
pub mod model;
pub mod trainer;
pub mod verifier;
pub mod watermark;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use mdp::{ActionId, EnvMeta, Environment, EpisodeTrace, Policy, StateVector, StepOutcome, Transition};
pub use trainer::{evaluate, train, train_cartpole, AlternationSchedule, JointMdp, Phase, TrainingLog};
pub use verifier::{verify, Verdict, VerificationReport, VerifierConfig};
pub use watermark::{default_cartpole_spec, validate, WatermarkSpec};
