//! Ownership verification: play a suspect policy greedily in the watermark
//! environment and score how closely it follows the identifier loop.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{run_episode, EpisodeTrace, Environment, Policy};
use crate::watermark::{build_env, detect_loop, LoopDescriptor, WatermarkEnv, WatermarkSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifierConfig {
    pub episodes: usize,
    /// Mean reward at or above which the policy is declared a replica.
    pub match_threshold: f64,
    /// Mean reward at or below which the policy is declared unrelated.
    pub reject_threshold: f64,
}

impl VerifierConfig {
    /// 100 episodes; match at 90% and reject at 10% of the perfect return.
    pub fn for_spec(spec: &WatermarkSpec) -> Self {
        let best = spec.reward_magnitude * spec.episode_cap as f64;
        VerifierConfig {
            episodes: 100,
            match_threshold: 0.9 * best,
            reject_threshold: 0.1 * best,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::Config("verification needs at least one episode".into()));
        }
        if !(self.reject_threshold < self.match_threshold) {
            return Err(Error::Config(format!(
                "reject threshold {} must be below match threshold {}",
                self.reject_threshold, self.match_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Match,
    Suspect,
    NoMatch,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Match => "match",
            Verdict::Suspect => "suspect",
            Verdict::NoMatch => "no-match",
        })
    }
}

pub fn verdict(mean_reward: f64, config: &VerifierConfig) -> Verdict {
    if mean_reward >= config.match_threshold {
        Verdict::Match
    } else if mean_reward <= config.reject_threshold {
        Verdict::NoMatch
    } else {
        Verdict::Suspect
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    /// Fingerprint of the watermark spec that was checked.
    pub spec: String,
    pub config: VerifierConfig,
    pub episodes_run: usize,
    pub per_episode_rewards: Vec<f64>,
    pub mean_reward: f64,
    /// Episodes that ran to the cap without a wrong action.
    pub perfect_episodes: usize,
    /// Share of all transitions that were links of the identifier loop.
    pub trajectory_match_fraction: f64,
    pub verdict: Verdict,
}

impl VerificationReport {
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        text
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

/// Number of transitions in `trace` that are links of `identifier`.
fn loop_links(trace: &EpisodeTrace, identifier: &LoopDescriptor, env: &WatermarkEnv) -> usize {
    trace
        .transitions
        .iter()
        .filter(|t| {
            match (env.index_of(t.state.as_slice()), env.index_of(t.next_state.as_slice())) {
                (Some(from), Some(to)) => t.reward > 0.0 && identifier.contains_link(from, to),
                _ => false,
            }
        })
        .count()
}

/// Fraction of the transitions in `trace` that follow the identifier loop.
/// An empty trace scores 0.
pub fn trajectory_match(trace: &EpisodeTrace, identifier: &LoopDescriptor, env: &WatermarkEnv) -> f64 {
    if trace.is_empty() {
        return 0.0;
    }
    loop_links(trace, identifier, env) as f64 / trace.len() as f64
}

/// Runs `config.episodes` greedy episodes of `policy` in the watermark
/// environment built from `spec`.
pub fn verify<P: Policy + ?Sized>(policy: &P, spec: &WatermarkSpec, config: &VerifierConfig) -> Result<VerificationReport> {
    config.validate()?;
    if let Some(dim) = policy.state_dim() {
        if dim != spec.state_dim {
            return Err(Error::Domain(format!(
                "policy expects {dim}-dimensional states, watermark spec has {}",
                spec.state_dim
            )));
        }
    }
    let identifier = detect_loop(spec)
        .ok_or_else(|| Error::Config("watermark spec has no identifier loop".into()))?;
    let mut env = build_env(spec, policy.action_count())?;
    let cap = env.meta().max_steps;

    let mut rewards = Vec::with_capacity(config.episodes);
    let mut perfect = 0;
    let mut links = 0;
    let mut steps = 0;
    for _ in 0..config.episodes {
        let trace = run_episode(&mut env, policy, cap)?;
        if trace.len() == cap && trace.transitions.iter().all(|t| t.reward > 0.0) {
            perfect += 1;
        }
        links += loop_links(&trace, &identifier, &env);
        steps += trace.len();
        rewards.push(trace.total_reward);
    }
    let mean_reward = rewards.iter().sum::<f64>() / rewards.len() as f64;
    Ok(VerificationReport {
        spec: spec.fingerprint()?,
        config: *config,
        episodes_run: config.episodes,
        per_episode_rewards: rewards,
        mean_reward,
        perfect_episodes: perfect,
        trajectory_match_fraction: if steps == 0 { 0.0 } else { links as f64 / steps as f64 },
        verdict: verdict(mean_reward, config),
    })
}
