//! Episodic environment abstraction shared by the main task and the
//! watermark environment, plus a generic episode runner.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed-dimension observation. Every entry is finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct StateVector(Vec<f64>);

impl StateVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "state entry {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(StateVector(values))
    }

    pub fn zeros(dim: usize) -> Self {
        StateVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for StateVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        StateVector::new(values)
    }
}

impl From<StateVector> for Vec<f64> {
    fn from(state: StateVector) -> Self {
        state.0
    }
}

impl std::ops::Index<usize> for StateVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Discrete action index in `0..action_count`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ActionId(pub usize);

impl ActionId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: StateVector,
    pub reward: f64,
    pub done: bool,
    /// The episode ended only because the step cap was reached.
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: StateVector,
    pub action: ActionId,
    pub reward: f64,
    pub next_state: StateVector,
    pub done: bool,
    pub truncated: bool,
}

impl Transition {
    /// True when `next_state` has no future value: the episode ended for a
    /// reason other than the step cap.
    pub fn is_terminal(&self) -> bool {
        self.done && !self.truncated
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeTrace {
    pub transitions: Vec<Transition>,
    pub total_reward: f64,
}

impl EpisodeTrace {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }
}

/// Static description of an environment, used to check that two
/// environments can be joined into one MDP.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvMeta {
    pub state_dim: usize,
    pub action_count: usize,
    /// Episode step cap; `done` is forced once this many steps were taken.
    pub max_steps: usize,
    /// Inclusive `(low, high)` bounds of every observation the environment
    /// can emit, one pair per coordinate. Unbounded coordinates use infinities.
    pub observation_bounds: Vec<(f64, f64)>,
}

impl EnvMeta {
    /// True when every coordinate of `state` lies within the observation bounds.
    pub fn contains(&self, state: &[f64]) -> bool {
        state.len() == self.observation_bounds.len()
            && state
                .iter()
                .zip(&self.observation_bounds)
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    pub(crate) fn check_action(&self, action: ActionId) -> Result<()> {
        if action.0 >= self.action_count {
            return Err(Error::Domain(format!(
                "action {} outside action space of size {}",
                action.0, self.action_count
            )));
        }
        Ok(())
    }
}

/// An episodic environment with a discrete action space.
///
/// `step` must report `done` itself once `meta().max_steps` steps have been
/// taken, and must refuse to step again until the next `reset`.
pub trait Environment {
    fn meta(&self) -> &EnvMeta;

    fn reset(&mut self) -> StateVector;

    fn step(&mut self, action: ActionId) -> Result<StepOutcome>;
}

impl<E: Environment + ?Sized> Environment for Box<E> {
    fn meta(&self) -> &EnvMeta {
        (**self).meta()
    }

    fn reset(&mut self) -> StateVector {
        (**self).reset()
    }

    fn step(&mut self, action: ActionId) -> Result<StepOutcome> {
        (**self).step(action)
    }
}

/// A deterministic mapping from states to actions.
pub trait Policy {
    fn act(&self, state: &StateVector) -> Result<ActionId>;

    /// Size of the action space the policy chooses from.
    fn action_count(&self) -> usize;

    /// Input width, when the policy has a fixed one.
    fn state_dim(&self) -> Option<usize> {
        None
    }
}

impl<P: Policy + ?Sized> Policy for &P {
    fn act(&self, state: &StateVector) -> Result<ActionId> {
        (**self).act(state)
    }

    fn action_count(&self) -> usize {
        (**self).action_count()
    }

    fn state_dim(&self) -> Option<usize> {
        (**self).state_dim()
    }
}

/// Adapts a closure into a [`Policy`].
pub struct FnPolicy<F> {
    action_count: usize,
    f: F,
}

impl<F> FnPolicy<F>
where
    F: Fn(&StateVector) -> ActionId,
{
    pub fn new(action_count: usize, f: F) -> Self {
        FnPolicy { action_count, f }
    }
}

impl<F> Policy for FnPolicy<F>
where
    F: Fn(&StateVector) -> ActionId,
{
    fn act(&self, state: &StateVector) -> Result<ActionId> {
        Ok((self.f)(state))
    }

    fn action_count(&self) -> usize {
        self.action_count
    }
}

/// Resets `env` and plays `policy` until the episode ends or `max_steps`
/// transitions were taken.
pub fn run_episode<E, P>(env: &mut E, policy: &P, max_steps: usize) -> Result<EpisodeTrace>
where
    E: Environment + ?Sized,
    P: Policy + ?Sized,
{
    let mut state = env.reset();
    let mut trace = EpisodeTrace::default();
    while trace.len() < max_steps {
        let action = policy.act(&state)?;
        let outcome = env.step(action)?;
        trace.total_reward += outcome.reward;
        trace.transitions.push(Transition {
            state,
            action,
            reward: outcome.reward,
            next_state: outcome.next_state.clone(),
            done: outcome.done,
            truncated: outcome.truncated,
        });
        if outcome.done {
            break;
        }
        state = outcome.next_state;
    }
    Ok(trace)
}
