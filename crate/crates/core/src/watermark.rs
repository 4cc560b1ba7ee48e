//! Watermark environment: a small deterministic MDP whose states lie outside
//! the main task's observation space. Each state has exactly one "link"
//! action leading to the next state of an identifier loop (reward `+c`);
//! any other action ends the episode in the terminal state (reward `-c`).

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mdp::{ActionId, EnvMeta, Environment, Policy, StateVector, StepOutcome};

pub const SPEC_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AngleUnits {
    Degrees,
    Radians,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedState {
    pub name: String,
    pub values: Vec<f64>,
}

impl NamedState {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        NamedState {
            name: name.into(),
            values,
        }
    }
}

/// A link `from -> to`, taken only by `action`. Indices refer to
/// [`WatermarkSpec::states`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Link {
    pub from: usize,
    pub action: ActionId,
    pub to: usize,
}

/// Declarative watermark MDP.
///
/// State values are kept in file units. With [`AngleUnits::Degrees`] on a
/// 4-dimensional spec, coordinates 2 and 3 are angles and are converted to
/// radians by [`WatermarkSpec::internal_values`].
#[derive(Debug, Clone, PartialEq)]
pub struct WatermarkSpec {
    pub state_dim: usize,
    pub states: Vec<NamedState>,
    pub links: Vec<Link>,
    pub terminal: NamedState,
    pub reward_magnitude: f64,
    pub episode_cap: usize,
    pub initial_state: usize,
    pub angle_units: AngleUnits,
}

/// On-disk layout of a watermark spec; links refer to states by name.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecFile {
    version: u32,
    state_dim: usize,
    states: Vec<NamedState>,
    links: Vec<LinkFile>,
    terminal: NamedState,
    reward_magnitude: f64,
    episode_cap: usize,
    initial_state: String,
    angle_units: AngleUnits,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkFile {
    from: String,
    action: usize,
    to: String,
}

/// The identifier sequence used in the cart-pole experiments: four states
/// beyond the cart-pole observation bounds, visited in the order
/// 1 -> 2 -> 3 -> 4 -> 1 by playing action `i % 2` in state `i`.
pub fn default_cartpole_spec() -> WatermarkSpec {
    let raw = [
        [-5.0, 0.0, -25.0, 0.0],
        [-5.0, 0.0, 25.0, 0.0],
        [5.0, 0.0, -25.0, 0.0],
        [5.0, 0.0, 25.0, 0.0],
    ];
    let states = raw
        .iter()
        .enumerate()
        .map(|(i, v)| NamedState::new(format!("State[{}]", i + 1), v.to_vec()))
        .collect();
    // 1-based: State[i] --Actions[i % 2]--> State[i % 4 + 1]
    let links = (1..=4)
        .map(|i| Link {
            from: i - 1,
            action: ActionId(i % 2),
            to: i % 4,
        })
        .collect();
    WatermarkSpec {
        state_dim: 4,
        states,
        links,
        terminal: NamedState::new("Terminal", vec![-6.0, 0.0, -26.0, 0.0]),
        reward_magnitude: 1.0,
        episode_cap: 500,
        initial_state: 0,
        angle_units: AngleUnits::Degrees,
    }
}

impl WatermarkSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let file: SpecFile =
            serde_json::from_str(text).map_err(|e| Error::format("watermark spec", e.to_string()))?;
        if file.version != SPEC_FORMAT_VERSION {
            return Err(Error::format(
                "watermark spec",
                format!(
                    "unsupported version {} (expected {SPEC_FORMAT_VERSION})",
                    file.version
                ),
            ));
        }
        let mut index = HashMap::new();
        for (i, s) in file.states.iter().enumerate() {
            if index.insert(s.name.as_str(), i).is_some() {
                return Err(Error::Config(format!("duplicate state name {:?}", s.name)));
            }
        }
        if index.contains_key(file.terminal.name.as_str()) {
            return Err(Error::Config(format!(
                "terminal name {:?} collides with a state name",
                file.terminal.name
            )));
        }
        let lookup = |name: &str| {
            index
                .get(name)
                .copied()
                .ok_or_else(|| Error::Config(format!("unknown state name {name:?}")))
        };
        let links = file
            .links
            .iter()
            .map(|l| {
                Ok(Link {
                    from: lookup(&l.from)?,
                    action: ActionId(l.action),
                    to: lookup(&l.to)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(WatermarkSpec {
            state_dim: file.state_dim,
            initial_state: lookup(&file.initial_state)?,
            states: file.states,
            links,
            terminal: file.terminal,
            reward_magnitude: file.reward_magnitude,
            episode_cap: file.episode_cap,
            angle_units: file.angle_units,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let name = |i: usize| {
            self.states
                .get(i)
                .map(|s| s.name.clone())
                .ok_or_else(|| Error::Config(format!("state index {i} out of range")))
        };
        let file = SpecFile {
            version: SPEC_FORMAT_VERSION,
            state_dim: self.state_dim,
            states: self.states.clone(),
            links: self
                .links
                .iter()
                .map(|l| {
                    Ok(LinkFile {
                        from: name(l.from)?,
                        action: l.action.0,
                        to: name(l.to)?,
                    })
                })
                .collect::<Result<_>>()?,
            terminal: self.terminal.clone(),
            reward_magnitude: self.reward_magnitude,
            episode_cap: self.episode_cap,
            initial_state: name(self.initial_state)?,
            angle_units: self.angle_units,
        };
        let mut text = serde_json::to_string_pretty(&file).expect("spec serializes");
        text.push('\n');
        Ok(text)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Format { message, .. } => Error::format(path.display(), message),
            other => other,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    /// SHA-256 of the canonical JSON encoding; identifies a spec in reports
    /// and model files.
    pub fn fingerprint(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_json()?.as_bytes())))
    }

    /// State values converted to radians where angle coordinates apply.
    pub fn internal_values(&self, values: &[f64]) -> Vec<f64> {
        let mut out = values.to_vec();
        if self.angle_units == AngleUnits::Degrees && self.state_dim == 4 {
            for v in out.iter_mut().skip(2).take(2) {
                *v = v.to_radians();
            }
        }
        out
    }

    /// Link leaving state `i`, if exactly one exists.
    pub fn link_from(&self, i: usize) -> Option<&Link> {
        let mut it = self.links.iter().filter(|l| l.from == i);
        match (it.next(), it.next()) {
            (Some(l), None) => Some(l),
            _ => None,
        }
    }

    /// Problems that make the spec unusable on its own, independent of any
    /// main environment. Reported under the dimension and determinism conditions.
    fn structural_issues(&self) -> (Vec<String>, Vec<String>) {
        let mut dims = Vec::new();
        let mut det = Vec::new();

        if self.state_dim == 0 {
            dims.push("state_dim must be positive".to_string());
        }
        for s in self.states.iter().chain(std::iter::once(&self.terminal)) {
            if s.values.len() != self.state_dim {
                dims.push(format!(
                    "state {:?} has {} coordinates, spec declares {}",
                    s.name,
                    s.values.len(),
                    self.state_dim
                ));
            }
            if s.values.iter().any(|v| !v.is_finite()) {
                dims.push(format!("state {:?} has a non-finite coordinate", s.name));
            }
        }
        if self.angle_units == AngleUnits::Degrees && self.state_dim != 4 {
            dims.push("degree angle units only apply to 4-dimensional specs".to_string());
        }

        if self.states.is_empty() {
            det.push("spec has no states".to_string());
        }
        if !(self.reward_magnitude.is_finite() && self.reward_magnitude > 0.0) {
            det.push(format!(
                "reward magnitude must be positive, got {}",
                self.reward_magnitude
            ));
        }
        if self.episode_cap == 0 {
            det.push("episode cap must be at least 1".to_string());
        }
        if self.initial_state >= self.states.len() {
            det.push(format!("initial state index {} out of range", self.initial_state));
        }
        let mut outgoing = vec![0usize; self.states.len()];
        for l in &self.links {
            if l.from >= self.states.len() || l.to >= self.states.len() {
                det.push(format!("link {} -> {} references a missing state", l.from, l.to));
                continue;
            }
            outgoing[l.from] += 1;
        }
        for (i, n) in outgoing.iter().enumerate() {
            let name = &self.states[i].name;
            match n {
                1 => {}
                0 => det.push(format!("state {name:?} is not the source of any link")),
                _ => det.push(format!("state {name:?} is the source of {n} links")),
            }
        }
        let all: Vec<(&str, Vec<f64>)> = self
            .states
            .iter()
            .chain(std::iter::once(&self.terminal))
            .map(|s| (s.name.as_str(), self.internal_values(&s.values)))
            .collect();
        for (i, (a, va)) in all.iter().enumerate() {
            for (b, vb) in &all[i + 1..] {
                if va == vb {
                    det.push(format!("states {a:?} and {b:?} are identical"));
                }
            }
        }
        (dims, det)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Condition {
    /// Watermark states are disjoint from the main observation space.
    DisjointStates,
    /// Both environments share the state dimension.
    EqualStateDim,
    /// Both environments share the action space.
    EqualActionSpace,
    /// Watermark dynamics and rewards are deterministic.
    Deterministic,
    /// Both environments share the episode step cap.
    EqualEpisodeCap,
}

impl Condition {
    pub const ALL: [Condition; 5] = [
        Condition::DisjointStates,
        Condition::EqualStateDim,
        Condition::EqualActionSpace,
        Condition::Deterministic,
        Condition::EqualEpisodeCap,
    ];

    pub fn number(self) -> usize {
        Condition::ALL.iter().position(|c| *c == self).unwrap() + 1
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let text = match self {
            Condition::DisjointStates => "state spaces are disjoint",
            Condition::EqualStateDim => "state dimensions are equal",
            Condition::EqualActionSpace => "action spaces are equal",
            Condition::Deterministic => "watermark dynamics are deterministic",
            Condition::EqualEpisodeCap => "episode caps are equal",
        };
        write!(f, "{text}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionCheck {
    pub condition: Condition,
    pub violations: Vec<String>,
}

impl ConditionCheck {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<ConditionCheck>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(ConditionCheck::passed)
    }

    pub fn check(&self, condition: Condition) -> &ConditionCheck {
        self.checks
            .iter()
            .find(|c| c.condition == condition)
            .expect("every condition is checked")
    }

    pub fn violations(&self) -> impl Iterator<Item = &str> {
        self.checks
            .iter()
            .flat_map(|c| c.violations.iter().map(String::as_str))
    }

    pub fn into_result(self) -> Result<()> {
        if self.passed() {
            return Ok(());
        }
        let msg = self.violations().collect::<Vec<_>>().join("; ");
        Err(Error::Config(format!("watermark spec is invalid: {msg}")))
    }
}

/// Checks that `spec` can be joined with the main environment described by
/// `main`. Failures are reported, never raised.
pub fn validate(spec: &WatermarkSpec, main: &EnvMeta) -> ValidationReport {
    let (mut dims, det) = spec.structural_issues();

    let mut disjoint = Vec::new();
    for s in spec.states.iter().chain(std::iter::once(&spec.terminal)) {
        let v = spec.internal_values(&s.values);
        if main.contains(&v) {
            disjoint.push(format!(
                "state {:?} lies inside the main observation space",
                s.name
            ));
        }
    }

    if spec.state_dim != main.state_dim {
        dims.push(format!(
            "watermark state_dim {} differs from main state_dim {}",
            spec.state_dim, main.state_dim
        ));
    }

    let mut actions = Vec::new();
    for l in &spec.links {
        if l.action.0 >= main.action_count {
            actions.push(format!(
                "link from state {} uses action {} outside the main action space of size {}",
                l.from, l.action.0, main.action_count
            ));
        }
    }

    let mut cap = Vec::new();
    if spec.episode_cap != main.max_steps {
        cap.push(format!(
            "watermark episode cap {} differs from main cap {}",
            spec.episode_cap, main.max_steps
        ));
    }

    let checks = Condition::ALL
        .iter()
        .zip([disjoint, dims, actions, det, cap])
        .map(|(&condition, violations)| ConditionCheck {
            condition,
            violations,
        })
        .collect();
    ValidationReport { checks }
}

/// Closed cycle of state indices followed by the link actions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LoopDescriptor {
    pub cycle: Vec<usize>,
    /// State that closes the loop: destination of the last link and source
    /// of the first.
    pub pivot: usize,
}

impl LoopDescriptor {
    pub fn len(&self) -> usize {
        self.cycle.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cycle.is_empty()
    }

    pub fn contains_link(&self, from: usize, to: usize) -> bool {
        let n = self.cycle.len();
        (0..n).any(|i| self.cycle[i] == from && self.cycle[(i + 1) % n] == to)
    }
}

/// Follows links from the initial state and returns the loop it falls into,
/// or `None` if the chain reaches a state with no single outgoing link.
pub fn detect_loop(spec: &WatermarkSpec) -> Option<LoopDescriptor> {
    let mut seen: Vec<usize> = Vec::new();
    let mut current = spec.initial_state;
    loop {
        if current >= spec.states.len() {
            return None;
        }
        if let Some(pos) = seen.iter().position(|&s| s == current) {
            return Some(LoopDescriptor {
                cycle: seen[pos..].to_vec(),
                pivot: current,
            });
        }
        seen.push(current);
        current = spec.link_from(current)?.to;
    }
}

/// Log-probability that a uniform-random policy over `action_count`
/// actions completes a full watermark episode.
pub fn accidental_match_log_prob(spec: &WatermarkSpec, action_count: usize) -> Result<f64> {
    if action_count == 0 {
        return Err(Error::Domain("action count must be positive".into()));
    }
    Ok(spec.episode_cap as f64 * (1.0 / action_count as f64).ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Position {
    State(usize),
    Terminal,
}

/// Runnable watermark environment compiled from a [`WatermarkSpec`].
#[derive(Debug, Clone)]
pub struct WatermarkEnv {
    meta: EnvMeta,
    states: Vec<StateVector>,
    /// `(required action, destination)` per state.
    links: Vec<(ActionId, usize)>,
    terminal: StateVector,
    reward: f64,
    initial: usize,
    position: Position,
    steps: usize,
    needs_reset: bool,
}

/// Compiles `spec` into an environment with `action_count` actions.
/// Fails if the spec is not structurally sound.
pub fn build_env(spec: &WatermarkSpec, action_count: usize) -> Result<WatermarkEnv> {
    let (dims, det) = spec.structural_issues();
    let mut issues: Vec<String> = dims.into_iter().chain(det).collect();
    for l in &spec.links {
        if l.action.0 >= action_count {
            issues.push(format!(
                "link from state {} requires action {} but only {action_count} actions exist",
                l.from, l.action.0
            ));
        }
    }
    if !issues.is_empty() {
        return Err(Error::Config(format!(
            "cannot build watermark environment: {}",
            issues.join("; ")
        )));
    }

    let vector = |s: &NamedState| StateVector::new(spec.internal_values(&s.values));
    let states = spec.states.iter().map(vector).collect::<Result<Vec<_>>>()?;
    let terminal = vector(&spec.terminal)?;
    let links = (0..states.len())
        .map(|i| {
            let l = spec.link_from(i).expect("structure checked");
            (l.action, l.to)
        })
        .collect();

    let mut bounds = vec![(f64::INFINITY, f64::NEG_INFINITY); spec.state_dim];
    for s in states.iter().chain(std::iter::once(&terminal)) {
        for (b, &v) in bounds.iter_mut().zip(s.as_slice()) {
            b.0 = b.0.min(v);
            b.1 = b.1.max(v);
        }
    }

    Ok(WatermarkEnv {
        meta: EnvMeta {
            state_dim: spec.state_dim,
            action_count,
            max_steps: spec.episode_cap,
            observation_bounds: bounds,
        },
        states,
        links,
        terminal,
        reward: spec.reward_magnitude,
        initial: spec.initial_state,
        position: Position::State(spec.initial_state),
        steps: 0,
        needs_reset: true,
    })
}

impl WatermarkEnv {
    pub fn position(&self) -> Position {
        self.position
    }

    pub fn reward_magnitude(&self) -> f64 {
        self.reward
    }

    /// Total reward of a perfect episode.
    pub fn max_return(&self) -> f64 {
        self.reward * self.meta.max_steps as f64
    }

    pub fn state_count(&self) -> usize {
        self.states.len()
    }

    pub fn state(&self, i: usize) -> &StateVector {
        &self.states[i]
    }

    pub fn terminal(&self) -> &StateVector {
        &self.terminal
    }

    pub fn required_action(&self, i: usize) -> ActionId {
        self.links[i].0
    }

    /// Index of the non-terminal state equal to `values`, if any.
    pub fn index_of(&self, values: &[f64]) -> Option<usize> {
        self.states.iter().position(|s| s.as_slice() == values)
    }

    /// Puts the environment at state `i` as if the episode had just started.
    pub fn reset_to(&mut self, i: usize) -> Result<StateVector> {
        if i >= self.states.len() {
            return Err(Error::Domain(format!("state index {i} out of range")));
        }
        self.position = Position::State(i);
        self.steps = 0;
        self.needs_reset = false;
        Ok(self.states[i].clone())
    }

    /// Policy that always plays the link action.
    pub fn identifier_policy(&self) -> IdentifierPolicy<'_> {
        IdentifierPolicy { env: self }
    }
}

impl Environment for WatermarkEnv {
    fn meta(&self) -> &EnvMeta {
        &self.meta
    }

    fn reset(&mut self) -> StateVector {
        self.reset_to(self.initial).expect("initial state checked at build")
    }

    fn step(&mut self, action: ActionId) -> Result<StepOutcome> {
        if self.needs_reset {
            return Err(Error::Usage("watermark episode is over; call reset".into()));
        }
        self.meta.check_action(action)?;
        let Position::State(i) = self.position else {
            unreachable!("terminal position always sets needs_reset");
        };
        self.steps += 1;
        let (required, to) = self.links[i];
        let outcome = if action == required {
            self.position = Position::State(to);
            let capped = self.steps >= self.meta.max_steps;
            StepOutcome {
                next_state: self.states[to].clone(),
                reward: self.reward,
                done: capped,
                truncated: capped,
            }
        } else {
            self.position = Position::Terminal;
            StepOutcome {
                next_state: self.terminal.clone(),
                reward: -self.reward,
                done: true,
                truncated: false,
            }
        };
        self.needs_reset = outcome.done;
        Ok(outcome)
    }
}

pub struct IdentifierPolicy<'a> {
    env: &'a WatermarkEnv,
}

impl Policy for IdentifierPolicy<'_> {
    fn act(&self, state: &StateVector) -> Result<ActionId> {
        Ok(self
            .env
            .index_of(state.as_slice())
            .map(|i| self.env.required_action(i))
            .unwrap_or(ActionId(0)))
    }

    fn action_count(&self) -> usize {
        self.env.meta.action_count
    }

    fn state_dim(&self) -> Option<usize> {
        Some(self.env.meta.state_dim)
    }
}
