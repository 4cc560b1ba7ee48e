//! Cart-pole balancing task: a pole hinged on a cart that is pushed left or
//! right with a fixed force. Reward is +1 per step; the episode fails once
//! the pole tilts beyond 12 degrees or the cart leaves the track.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{ActionId, EnvMeta, Environment, StateVector, StepOutcome};

/// Failure bound on the cart position (m).
pub const X_FAILURE: f64 = 2.4;
/// Failure bound on the pole angle: 12 degrees.
pub const THETA_FAILURE: f64 = 12.0 * std::f64::consts::PI / 180.0;
/// Observation-space bound on the cart position (m).
pub const X_OBSERVATION: f64 = 2.0 * X_FAILURE;
/// Observation-space bound on the pole angle: 24 degrees.
pub const THETA_OBSERVATION: f64 = 2.0 * THETA_FAILURE;
pub const MAX_STEPS: usize = 500;
pub const ACTION_COUNT: usize = 2;
pub const STATE_DIM: usize = 4;
/// Half-width of the uniform reset distribution.
pub const INIT_NOISE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartPoleParams {
    pub gravity: f64,
    pub cart_mass: f64,
    pub pole_mass: f64,
    /// Half the pole length (m).
    pub half_length: f64,
    pub force_mag: f64,
    /// Euler integration step (s).
    pub tau: f64,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        CartPoleParams {
            gravity: 9.8,
            cart_mass: 1.0,
            pole_mass: 0.1,
            half_length: 0.5,
            force_mag: 10.0,
            tau: 0.02,
        }
    }
}

impl CartPoleParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("gravity", self.gravity),
            ("cart_mass", self.cart_mass),
            ("pole_mass", self.pole_mass),
            ("half_length", self.half_length),
            ("force_mag", self.force_mag),
            ("tau", self.tau),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Config(format!(
                    "cart-pole parameter {name} must be positive, got {value}"
                )));
            }
        }
        Ok(())
    }
}

/// Physical state. Angles are in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CartPoleState {
    pub x: f64,
    pub x_dot: f64,
    pub theta: f64,
    pub theta_dot: f64,
}

impl CartPoleState {
    pub fn to_vector(self) -> StateVector {
        StateVector::new(vec![self.x, self.x_dot, self.theta, self.theta_dot])
            .expect("cart-pole state must stay finite")
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        match values {
            &[x, x_dot, theta, theta_dot] => Ok(CartPoleState {
                x,
                x_dot,
                theta,
                theta_dot,
            }),
            _ => Err(Error::Domain(format!(
                "cart-pole state needs 4 coordinates, got {}",
                values.len()
            ))),
        }
    }

    /// Pole beyond 12 degrees or cart beyond 2.4 m.
    pub fn is_failure(&self) -> bool {
        self.x.abs() > X_FAILURE || self.theta.abs() > THETA_FAILURE
    }
}

/// One explicit Euler step of the cart-pole equations of motion.
pub fn integrate(state: &CartPoleState, action: ActionId, params: &CartPoleParams) -> Result<CartPoleState> {
    let force = match action.0 {
        0 => -params.force_mag,
        1 => params.force_mag,
        a => {
            return Err(Error::Domain(format!(
                "cart-pole action must be 0 or 1, got {a}"
            )))
        }
    };
    let total_mass = params.cart_mass + params.pole_mass;
    let pole_moment = params.pole_mass * params.half_length;
    let (sin, cos) = state.theta.sin_cos();

    let temp = (force + pole_moment * state.theta_dot * state.theta_dot * sin) / total_mass;
    let theta_acc = (params.gravity * sin - cos * temp)
        / (params.half_length * (4.0 / 3.0 - params.pole_mass * cos * cos / total_mass));
    let x_acc = temp - pole_moment * theta_acc * cos / total_mass;

    Ok(CartPoleState {
        x: state.x + params.tau * state.x_dot,
        x_dot: state.x_dot + params.tau * x_acc,
        theta: state.theta + params.tau * state.theta_dot,
        theta_dot: state.theta_dot + params.tau * theta_acc,
    })
}

/// Advances the physics one step. `done` reports failure only; the step
/// cap is enforced by [`CartPole`].
pub fn cartpole_step(state: &CartPoleState, action: ActionId, params: &CartPoleParams) -> Result<StepOutcome> {
    let next = integrate(state, action, params)?;
    Ok(StepOutcome {
        next_state: next.to_vector(),
        reward: 1.0,
        done: next.is_failure(),
        truncated: false,
    })
}

pub fn cartpole_reset<R: Rng + ?Sized>(rng: &mut R, noise: f64) -> CartPoleState {
    let mut draw = || if noise > 0.0 { rng.gen_range(-noise..=noise) } else { 0.0 };
    CartPoleState {
        x: draw(),
        x_dot: draw(),
        theta: draw(),
        theta_dot: draw(),
    }
}

pub fn cartpole_meta() -> EnvMeta {
    EnvMeta {
        state_dim: STATE_DIM,
        action_count: ACTION_COUNT,
        max_steps: MAX_STEPS,
        observation_bounds: vec![
            (-X_OBSERVATION, X_OBSERVATION),
            (f64::NEG_INFINITY, f64::INFINITY),
            (-THETA_OBSERVATION, THETA_OBSERVATION),
            (f64::NEG_INFINITY, f64::INFINITY),
        ],
    }
}

/// Seeded cart-pole environment instance.
#[derive(Debug, Clone)]
pub struct CartPole {
    params: CartPoleParams,
    meta: EnvMeta,
    rng: ChaCha8Rng,
    init_noise: f64,
    state: CartPoleState,
    steps: usize,
    needs_reset: bool,
}

impl CartPole {
    pub fn new(seed: u64) -> Self {
        Self::from_rng(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn from_rng(rng: ChaCha8Rng) -> Self {
        CartPole {
            params: CartPoleParams::default(),
            meta: cartpole_meta(),
            rng,
            init_noise: INIT_NOISE,
            state: CartPoleState::default(),
            steps: 0,
            needs_reset: true,
        }
    }

    pub fn with_params(mut self, params: CartPoleParams) -> Result<Self> {
        params.validate()?;
        self.params = params;
        Ok(self)
    }

    /// Half-width of the reset distribution; 0 starts every episode upright at rest.
    pub fn with_init_noise(mut self, noise: f64) -> Self {
        self.init_noise = noise.abs();
        self
    }

    pub fn state(&self) -> CartPoleState {
        self.state
    }

    pub fn params(&self) -> &CartPoleParams {
        &self.params
    }
}

impl Environment for CartPole {
    fn meta(&self) -> &EnvMeta {
        &self.meta
    }

    fn reset(&mut self) -> StateVector {
        self.state = cartpole_reset(&mut self.rng, self.init_noise);
        self.steps = 0;
        self.needs_reset = false;
        self.state.to_vector()
    }

    fn step(&mut self, action: ActionId) -> Result<StepOutcome> {
        if self.needs_reset {
            return Err(Error::Usage("cart-pole episode is over; call reset".into()));
        }
        self.meta.check_action(action)?;
        let next = integrate(&self.state, action, &self.params)?;
        self.state = next;
        self.steps += 1;
        let failed = next.is_failure();
        let truncated = !failed && self.steps >= self.meta.max_steps;
        self.needs_reset = failed || truncated;
        Ok(StepOutcome {
            next_state: next.to_vector(),
            reward: 1.0,
            done: failed || truncated,
            truncated,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Straight-line transcription of the equations of motion with the
    // canonical constants inlined.
    fn oracle_step(s: [f64; 4], push_right: bool) -> [f64; 4] {
        let [x, xd, th, thd] = s;
        let f = if push_right { 10.0 } else { -10.0 };
        let m = 1.1;
        let ml = 0.1 * 0.5;
        let tmp = (f + ml * thd * thd * th.sin()) / m;
        let tha = (9.8 * th.sin() - th.cos() * tmp) / (0.5 * (4.0 / 3.0 - 0.1 * th.cos() * th.cos() / m));
        let xa = tmp - ml * tha * th.cos() / m;
        [x + 0.02 * xd, xd + 0.02 * xa, th + 0.02 * thd, thd + 0.02 * tha]
    }

    #[test]
    fn push_right_from_rest() {
        let out = cartpole_step(&CartPoleState::default(), ActionId(1), &CartPoleParams::default()).unwrap();
        let next = CartPoleState::from_slice(out.next_state.as_slice()).unwrap();
        assert!(next.x_dot > 0.0);
        assert!(next.theta_dot < 0.0);
        assert!(!out.done);
        assert_eq!(out.reward, 1.0);
    }

    #[test]
    fn tilted_pole_fails_immediately() {
        let theta = 13f64.to_radians();
        for a in 0..2 {
            let s = CartPoleState { theta, ..Default::default() };
            let out = cartpole_step(&s, ActionId(a), &CartPoleParams::default()).unwrap();
            assert!(out.done);
            assert_eq!(out.reward, 1.0);
        }
    }

    #[test]
    fn matches_euler_oracle_over_twenty_steps() {
        let params = CartPoleParams::default();
        let mut state = CartPoleState::default();
        let mut expected = [0.0; 4];
        for _ in 0..20 {
            state = integrate(&state, ActionId(1), &params).unwrap();
            expected = oracle_step(expected, true);
        }
        let got = [state.x, state.x_dot, state.theta, state.theta_dot];
        for (g, e) in got.iter().zip(expected) {
            assert!((g - e).abs() <= 1e-12, "{g} vs {e}");
        }
    }

    #[test]
    fn rejects_unknown_action() {
        assert!(matches!(
            integrate(&CartPoleState::default(), ActionId(2), &CartPoleParams::default()),
            Err(Error::Domain(_))
        ));
        let mut env = CartPole::new(0);
        env.reset();
        assert!(matches!(env.step(ActionId(5)), Err(Error::Domain(_))));
    }

    #[test]
    fn zero_noise_reset_is_origin() {
        let mut env = CartPole::new(3).with_init_noise(0.0);
        assert_eq!(env.reset().as_slice(), &[0.0; 4]);
    }

    #[test]
    fn seeded_resets_repeat() {
        let mut a = CartPole::new(11);
        let mut b = CartPole::new(11);
        for _ in 0..5 {
            assert_eq!(a.reset(), b.reset());
        }
    }

    #[test]
    fn reset_distribution_range_and_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 10_000;
        let mut sums = [0.0; 4];
        for _ in 0..n {
            let s = cartpole_reset(&mut rng, INIT_NOISE);
            for (i, v) in [s.x, s.x_dot, s.theta, s.theta_dot].into_iter().enumerate() {
                assert!(v.abs() <= INIT_NOISE);
                sums[i] += v;
            }
        }
        // std of the mean is 0.05/sqrt(3)/100 ~ 2.9e-4; 0.002 is ~7 sigma.
        for s in sums {
            assert!((s / n as f64).abs() < 0.002);
        }
    }

    #[test]
    fn episode_capped_at_max_steps() {
        let mut env = CartPole::new(0).with_init_noise(0.0);
        env.reset();
        env.steps = MAX_STEPS - 1;
        let out = env.step(ActionId(0)).unwrap();
        assert!(out.done && out.truncated);
        assert!(matches!(env.step(ActionId(0)), Err(Error::Usage(_))));
    }

    #[test]
    fn step_requires_reset() {
        let mut env = CartPole::new(0);
        assert!(matches!(env.step(ActionId(0)), Err(Error::Usage(_))));
    }

    #[test]
    fn params_must_be_positive() {
        let bad = CartPoleParams { tau: 0.0, ..Default::default() };
        assert!(CartPole::new(0).with_params(bad).is_err());
    }

    proptest! {
        #[test]
        fn mirror_symmetry(
            x in -2.4f64..2.4,
            xd in -3.0f64..3.0,
            th in -0.2f64..0.2,
            thd in -3.0f64..3.0,
            a in 0usize..2,
        ) {
            let params = CartPoleParams::default();
            let s = CartPoleState { x, x_dot: xd, theta: th, theta_dot: thd };
            let m = CartPoleState { x: -x, x_dot: -xd, theta: -th, theta_dot: -thd };
            let n = integrate(&s, ActionId(a), &params).unwrap();
            let nm = integrate(&m, ActionId(1 - a), &params).unwrap();
            prop_assert_eq!(nm.x, -n.x);
            prop_assert_eq!(nm.x_dot, -n.x_dot);
            prop_assert_eq!(nm.theta, -n.theta);
            prop_assert_eq!(nm.theta_dot, -n.theta_dot);
        }
    }
}
