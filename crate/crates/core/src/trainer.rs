//! Joint training on the main task and the watermark environment.
//!
//! The two state spaces are disjoint, so the joint MDP dispatches by the
//! current phase: the main environment runs for `main_episodes` episodes,
//! then the watermark environment for `watermark_episodes`, and so on.
//! Both phases feed one replay buffer and one network.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cartpole::CartPole;
use crate::config::RunConfig;
use crate::dqn::{DqnAgent, QNetwork};
use crate::error::{Error, Result};
use crate::mdp::{run_episode, Environment, Policy, Transition};
use crate::watermark::{build_env, validate, WatermarkEnv, WatermarkSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Main,
    Watermark,
}

/// Episode counts after which training switches main -> watermark and
/// watermark -> main.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlternationSchedule {
    pub main_episodes: u32,
    pub watermark_episodes: u32,
}

impl Default for AlternationSchedule {
    fn default() -> Self {
        AlternationSchedule {
            main_episodes: 10,
            watermark_episodes: 1,
        }
    }
}

impl AlternationSchedule {
    /// Symmetric alternation every `every` episodes.
    pub fn symmetric(every: u32) -> Self {
        AlternationSchedule {
            main_episodes: every,
            watermark_episodes: every,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.main_episodes == 0 || self.watermark_episodes == 0 {
            return Err(Error::Config("alternation frequencies must be at least 1".into()));
        }
        Ok(())
    }
}

/// Phase of the next episode, given that `episodes_in_phase` episodes of
/// `phase` have completed since the last switch.
pub fn next_phase(schedule: &AlternationSchedule, phase: Phase, episodes_in_phase: u32) -> Phase {
    match phase {
        Phase::Main if episodes_in_phase >= schedule.main_episodes => Phase::Watermark,
        Phase::Watermark if episodes_in_phase >= schedule.watermark_episodes => Phase::Main,
        p => p,
    }
}

/// Main environment joined with an optional watermark environment.
/// Without a watermark every episode is a main episode.
#[derive(Debug, Clone)]
pub struct JointMdp<M> {
    main: M,
    watermark: Option<WatermarkEnv>,
    schedule: AlternationSchedule,
    phase: Phase,
    episodes_in_phase: u32,
}

impl<M: Environment> JointMdp<M> {
    /// Fails unless `spec` satisfies every joinability condition against `main`.
    pub fn new(main: M, spec: &WatermarkSpec, schedule: AlternationSchedule) -> Result<Self> {
        schedule.validate()?;
        validate(spec, main.meta()).into_result()?;
        let watermark = build_env(spec, main.meta().action_count)?;
        Ok(JointMdp {
            main,
            watermark: Some(watermark),
            schedule,
            phase: Phase::Main,
            episodes_in_phase: 0,
        })
    }

    pub fn nominal(main: M) -> Self {
        JointMdp {
            main,
            watermark: None,
            schedule: AlternationSchedule::default(),
            phase: Phase::Main,
            episodes_in_phase: 0,
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn schedule(&self) -> &AlternationSchedule {
        &self.schedule
    }

    pub fn main(&self) -> &M {
        &self.main
    }

    pub fn watermark(&self) -> Option<&WatermarkEnv> {
        self.watermark.as_ref()
    }

    pub fn current(&mut self) -> &mut dyn Environment {
        match (self.phase, self.watermark.as_mut()) {
            (Phase::Watermark, Some(w)) => w,
            _ => &mut self.main,
        }
    }

    /// Records a finished episode and moves to the next phase if due.
    pub fn end_episode(&mut self) {
        if self.watermark.is_none() {
            return;
        }
        self.episodes_in_phase += 1;
        let next = next_phase(&self.schedule, self.phase, self.episodes_in_phase);
        if next != self.phase {
            self.phase = next;
            self.episodes_in_phase = 0;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: u64,
    pub phase: Phase,
    pub total_reward: f64,
    pub length: u64,
    pub epsilon: f64,
    /// Environment steps taken by the end of this episode, over both phases.
    pub global_step: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<EpisodeRecord>,
}

impl TrainingLog {
    pub fn phase_records(&self, phase: Phase) -> impl Iterator<Item = &EpisodeRecord> {
        self.records.iter().filter(move |r| r.phase == phase)
    }

    /// Mean reward of the last `n` episodes of `phase`, if any exist.
    pub fn recent_mean(&self, phase: Phase, n: usize) -> Option<f64> {
        let rewards: Vec<f64> = self.phase_records(phase).map(|r| r.total_reward).collect();
        let tail = &rewards[rewards.len().saturating_sub(n)..];
        (!tail.is_empty()).then(|| tail.iter().sum::<f64>() / tail.len() as f64)
    }

    pub fn total_steps(&self) -> u64 {
        self.records.last().map_or(0, |r| r.global_step)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        for r in &self.records {
            writer.serialize(r)?;
        }
        if self.records.is_empty() {
            writer.write_record(["episode", "phase", "total_reward", "length", "epsilon", "global_step"])?;
        }
        writer.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(input);
        let records = reader.deserialize().collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(TrainingLog { records })
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(file))
    }
}

/// Training stopped early; carries the log up to the failure.
#[derive(Debug)]
pub struct TrainFailure {
    pub error: Error,
    pub log: TrainingLog,
}

impl std::fmt::Display for TrainFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} after {} episodes", self.error, self.log.records.len())
    }
}

impl std::error::Error for TrainFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Runs episodes until the agent's step budget is spent; the episode in
/// progress when the budget runs out is played to completion.
pub fn train<M: Environment>(joint: &mut JointMdp<M>, agent: &mut DqnAgent) -> Result<TrainingLog, TrainFailure> {
    let mut log = TrainingLog::default();
    match train_into(joint, agent, &mut log) {
        Ok(()) => Ok(log),
        Err(error) => Err(TrainFailure { error, log }),
    }
}

fn train_into<M: Environment>(joint: &mut JointMdp<M>, agent: &mut DqnAgent, log: &mut TrainingLog) -> Result<()> {
    let hyper = agent.hyperparams().clone();
    let mut step: u64 = 0;
    while step < hyper.total_timesteps {
        let phase = joint.phase();
        let env = joint.current();
        let mut state = env.reset();
        let mut total_reward = 0.0;
        let mut length = 0u64;
        loop {
            let action = agent.act(&state, step)?;
            let outcome = env.step(action)?;
            total_reward += outcome.reward;
            length += 1;
            agent.remember(Transition {
                state,
                action,
                reward: outcome.reward,
                next_state: outcome.next_state.clone(),
                done: outcome.done,
                truncated: outcome.truncated,
            });
            step += 1;
            if step >= hyper.learning_starts && agent.replay().len() >= hyper.batch_size {
                agent.train_step(step)?;
            }
            if step % hyper.target_update_interval == 0 {
                agent.sync_target();
            }
            if outcome.done {
                break;
            }
            state = outcome.next_state;
        }
        log.records.push(EpisodeRecord {
            episode: log.records.len() as u64,
            phase,
            total_reward,
            length,
            epsilon: agent.epsilon(step),
            global_step: step,
        });
        joint.end_episode();
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: QNetwork,
    pub log: TrainingLog,
}

/// Seed stream of the main environment used during training.
const MAIN_ENV_STREAM: u64 = 2;

/// Trains a cart-pole policy as described by `config`, jointly with the
/// watermark in `spec` when one is given.
pub fn train_cartpole(config: &RunConfig, spec: Option<&WatermarkSpec>) -> Result<TrainOutcome, TrainFailure> {
    let fail = |error| TrainFailure {
        error,
        log: TrainingLog::default(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(MAIN_ENV_STREAM);
    let main = CartPole::from_rng(rng);
    let mut joint = match spec {
        Some(spec) => JointMdp::new(main, spec, config.schedule).map_err(fail)?,
        None => JointMdp::nominal(main),
    };
    let meta = joint.main().meta().clone();
    let mut agent =
        DqnAgent::new(meta.state_dim, meta.action_count, config.hyperparams.clone(), config.seed).map_err(fail)?;
    let log = train(&mut joint, &mut agent)?;
    Ok(TrainOutcome {
        network: agent.into_network(),
        log,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub rewards: Vec<f64>,
    pub mean: f64,
}

/// Plays `episodes` fresh episodes of `env` with `policy` and averages
/// the returns. Rewards are summed in episode order.
pub fn evaluate<P, E>(policy: &P, env: &mut E, episodes: usize) -> Result<Evaluation>
where
    P: Policy + ?Sized,
    E: Environment + ?Sized,
{
    if episodes == 0 {
        return Err(Error::Usage("evaluation needs at least one episode".into()));
    }
    let max_steps = env.meta().max_steps;
    let rewards = (0..episodes)
        .map(|_| run_episode(env, policy, max_steps).map(|t| t.total_reward))
        .collect::<Result<Vec<_>>>()?;
    let mean = rewards.iter().sum::<f64>() / episodes as f64;
    Ok(Evaluation { rewards, mean })
}
