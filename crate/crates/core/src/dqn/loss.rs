//! Importance-weighted Huber loss on one-step TD targets, with its
//! gradient with respect to the online network.

use crate::dqn::network::{Activations, QNetwork};
use crate::error::{Error, Result};
use crate::mdp::Transition;

pub fn huber(error: f64) -> f64 {
    if error.abs() <= 1.0 {
        0.5 * error * error
    } else {
        error.abs() - 0.5
    }
}

pub fn huber_slope(error: f64) -> f64 {
    error.clamp(-1.0, 1.0)
}

#[derive(Debug, Clone)]
pub struct TdLoss {
    /// Weighted mean Huber loss over the batch.
    pub loss: f64,
    /// Gradient of `loss` with respect to the online parameters.
    pub grad: Vec<f64>,
    /// `Q(s, a) - y` per sample.
    pub td_errors: Vec<f64>,
}

/// `r + gamma * max_a' Q_target(s', a')`, or `r` for terminal transitions.
/// Episodes cut off by the step cap still bootstrap from `s'`.
pub fn td_target(target: &QNetwork, transition: &Transition, gamma: f64) -> Result<f64> {
    if transition.is_terminal() {
        return Ok(transition.reward);
    }
    let next = target.q_values(&transition.next_state)?;
    let best = next.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(transition.reward + gamma * best)
}

pub fn td_loss(
    online: &QNetwork,
    target: &QNetwork,
    batch: &[&Transition],
    weights: &[f64],
    gamma: f64,
) -> Result<TdLoss> {
    if batch.is_empty() || batch.len() != weights.len() {
        return Err(Error::Usage(format!(
            "batch of {} transitions with {} weights",
            batch.len(),
            weights.len()
        )));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grad = vec![0.0; online.params().len()];
    let mut td_errors = Vec::with_capacity(batch.len());
    let mut loss = 0.0;
    let mut trace = Activations::for_network(online);
    let mut scratch = Activations::for_network(online);
    let mut grad_out = vec![0.0; online.action_count()];

    for (t, &w) in batch.iter().zip(weights) {
        if t.state.dim() != online.state_dim() {
            return Err(Error::Domain(format!(
                "transition state has dimension {}, network expects {}",
                t.state.dim(),
                online.state_dim()
            )));
        }
        let y = td_target(target, t, gamma)?;
        online.forward(t.state.as_slice(), &mut trace);
        let q = trace.output()[t.action.0];
        let error = q - y;
        td_errors.push(error);
        loss += scale * w * huber(error);

        grad_out.iter_mut().for_each(|g| *g = 0.0);
        grad_out[t.action.0] = scale * w * huber_slope(error);
        online.backward(&trace, &grad_out, &mut grad, &mut scratch);
    }
    Ok(TdLoss {
        loss,
        grad,
        td_errors,
    })
}
