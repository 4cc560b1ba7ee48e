use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dqn::loss::td_loss;
use crate::dqn::network::QNetwork;
use crate::dqn::optimizer::Adam;
use crate::dqn::replay::PrioritizedReplay;
use crate::dqn::schedule::LinearSchedule;
use crate::dqn::Hyperparams;
use crate::error::{Error, Result};
use crate::mdp::{ActionId, StateVector, Transition};

/// Epsilon-greedy action: uniform with probability `epsilon`, otherwise
/// the lowest-index argmax of the Q-values.
pub fn select_action<R: Rng + ?Sized>(
    net: &QNetwork,
    state: &StateVector,
    epsilon: f64,
    rng: &mut R,
) -> Result<ActionId> {
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        return Ok(ActionId(rng.gen_range(0..net.action_count())));
    }
    net.greedy_action(state)
}

/// One prioritized TD update of `online`. Returns the batch loss.
///
/// `step` is only used to label a training fault.
pub fn td_train_step<R: Rng + ?Sized>(
    online: &mut QNetwork,
    target: &QNetwork,
    replay: &mut PrioritizedReplay,
    optimizer: &mut Adam,
    hyper: &Hyperparams,
    rng: &mut R,
    step: u64,
) -> Result<f64> {
    let sample = replay.sample(hyper.batch_size, hyper.prioritized_beta, rng)?;
    let batch: Vec<&Transition> = sample.indices.iter().map(|&i| replay.get(i)).collect();
    let mut out = td_loss(online, target, &batch, &sample.weights, hyper.gamma)?;

    if !out.loss.is_finite() || out.grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::TrainingFault {
            step,
            message: format!(
                "non-finite loss {} (td errors {:?})",
                out.loss, out.td_errors
            ),
        });
    }
    if let Some(max_norm) = hyper.grad_clip_norm {
        let norm = out.grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > max_norm {
            let scale = max_norm / norm;
            out.grad.iter_mut().for_each(|g| *g *= scale);
        }
    }
    optimizer.step(online.params_mut(), &out.grad);

    let priorities: Vec<f64> = out
        .td_errors
        .iter()
        .map(|e| e.abs() + hyper.priority_epsilon)
        .collect();
    replay.update_priorities(&sample.indices, &priorities)?;
    Ok(out.loss)
}

/// Online network, target copy, optimizer state, replay memory and
/// exploration schedule, owned as one unit.
#[derive(Debug, Clone)]
pub struct DqnAgent {
    online: QNetwork,
    target: QNetwork,
    optimizer: Adam,
    replay: PrioritizedReplay,
    exploration: LinearSchedule,
    hyper: Hyperparams,
    rng: ChaCha8Rng,
}

impl DqnAgent {
    /// Network weights come from stream 0 of `seed`; exploration and
    /// replay sampling from stream 1.
    pub fn new(state_dim: usize, action_count: usize, hyper: Hyperparams, seed: u64) -> Result<Self> {
        hyper.validate()?;
        let mut init = ChaCha8Rng::seed_from_u64(seed);
        init.set_stream(0);
        let online = QNetwork::new(state_dim, &hyper.hidden_sizes, action_count, &mut init)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Ok(DqnAgent {
            target: online.clone(),
            optimizer: Adam::new(online.params().len(), hyper.learning_rate),
            replay: PrioritizedReplay::new(hyper.buffer_size, hyper.prioritized_alpha)?,
            exploration: hyper.exploration(),
            online,
            hyper,
            rng,
        })
    }

    pub fn online(&self) -> &QNetwork {
        &self.online
    }

    pub fn target(&self) -> &QNetwork {
        &self.target
    }

    pub fn replay(&self) -> &PrioritizedReplay {
        &self.replay
    }

    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hyper
    }

    pub fn into_network(self) -> QNetwork {
        self.online
    }

    pub fn epsilon(&self, step: u64) -> f64 {
        self.exploration.value(step)
    }

    pub fn act(&mut self, state: &StateVector, step: u64) -> Result<ActionId> {
        let eps = self.epsilon(step);
        select_action(&self.online, state, eps, &mut self.rng)
    }

    pub fn remember(&mut self, transition: Transition) {
        self.replay.store(transition);
    }

    pub fn train_step(&mut self, step: u64) -> Result<f64> {
        td_train_step(
            &mut self.online,
            &self.target,
            &mut self.replay,
            &mut self.optimizer,
            &self.hyper,
            &mut self.rng,
            step,
        )
    }

    pub fn sync_target(&mut self) {
        self.target.copy_from(&self.online);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_hyper() -> Hyperparams {
        Hyperparams {
            buffer_size: 64,
            batch_size: 8,
            hidden_sizes: vec![8],
            ..Default::default()
        }
    }

    fn random_state(rng: &mut ChaCha8Rng) -> StateVector {
        StateVector::new((0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn fill(agent: &mut DqnAgent, n: usize, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..n {
            let t = Transition {
                state: random_state(&mut rng),
                action: ActionId(rng.gen_range(0..2)),
                reward: 1.0,
                next_state: random_state(&mut rng),
                done: rng.gen_bool(0.1),
                truncated: false,
            };
            agent.remember(t);
        }
    }

    #[test]
    fn greedy_when_epsilon_zero() {
        let net = QNetwork::from_params(1, &[1], 2, vec![1.0, 0.0, -1.0, 1.0, 0.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = StateVector::new(vec![2.0]).unwrap();
        for _ in 0..100 {
            assert_eq!(select_action(&net, &s, 0.0, &mut rng).unwrap(), ActionId(1));
        }
    }

    #[test]
    fn epsilon_one_is_uniform() {
        let net = QNetwork::zeros(1, &[1], 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = StateVector::new(vec![0.0]).unwrap();
        let n = 100_000;
        let ones = (0..n)
            .filter(|_| select_action(&net, &s, 1.0, &mut rng).unwrap() == ActionId(1))
            .count();
        // binomial std at n = 1e5 is 0.0016; 0.01 is ~6 sigma
        assert!((ones as f64 / n as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn sync_copies_exactly_and_is_idempotent() {
        let mut agent = DqnAgent::new(4, 2, small_hyper(), 1).unwrap();
        fill(&mut agent, 32, 2);
        agent.train_step(0).unwrap();
        assert_ne!(agent.online().params(), agent.target().params());
        agent.sync_target();
        assert_eq!(agent.online().params(), agent.target().params());
        let before = agent.target().clone();
        agent.sync_target();
        assert_eq!(&before, agent.target());

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let s = random_state(&mut rng);
            assert_eq!(agent.online().q_values(&s).unwrap(), agent.target().q_values(&s).unwrap());
        }
    }

    #[test]
    fn training_leaves_target_untouched() {
        let mut agent = DqnAgent::new(4, 2, small_hyper(), 1).unwrap();
        fill(&mut agent, 32, 2);
        let target = agent.target().clone();
        for step in 0..10 {
            agent.train_step(step).unwrap();
        }
        assert_eq!(&target, agent.target());
    }

    #[test]
    fn priorities_stay_positive() {
        let mut agent = DqnAgent::new(4, 2, small_hyper(), 5).unwrap();
        fill(&mut agent, 64, 6);
        for step in 0..50 {
            agent.train_step(step).unwrap();
        }
        for i in 0..agent.replay().len() {
            assert!(agent.replay().priority(i) > 0.0);
        }
    }

    #[test]
    fn seeded_agents_train_identically() {
        let run = || {
            let mut agent = DqnAgent::new(4, 2, small_hyper(), 9).unwrap();
            fill(&mut agent, 64, 10);
            let losses: Vec<f64> = (0..20).map(|s| agent.train_step(s).unwrap()).collect();
            (losses, agent.into_network())
        };
        let (la, na) = run();
        let (lb, nb) = run();
        assert_eq!(la, lb);
        assert_eq!(na, nb);
    }

    #[test]
    fn underfull_buffer_cannot_train() {
        let mut agent = DqnAgent::new(4, 2, small_hyper(), 1).unwrap();
        fill(&mut agent, 3, 2);
        assert!(matches!(agent.train_step(0), Err(Error::Usage(_))));
    }

    #[test]
    fn diverged_network_is_a_training_fault() {
        let mut agent = DqnAgent::new(4, 2, small_hyper(), 1).unwrap();
        fill(&mut agent, 32, 2);
        let n = agent.online.params().len();
        agent.online.params_mut()[n - 2..].fill(f64::NAN);
        match agent.train_step(42) {
            Err(Error::TrainingFault { step, .. }) => assert_eq!(step, 42),
            other => panic!("expected training fault, got {other:?}"),
        }
    }
}
