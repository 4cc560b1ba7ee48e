//! Fully connected Q-network with rectifier hidden layers and a linear
//! output head. Parameters live in one flat vector, layer by layer, each
//! layer as a row-major `outputs x inputs` weight block followed by its bias.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{ActionId, Policy, StateVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub inputs: usize,
    pub outputs: usize,
    /// Offset of the weight block in the flat parameter vector.
    pub offset: usize,
}

impl LayerShape {
    pub fn weight_len(&self) -> usize {
        self.inputs * self.outputs
    }

    pub fn param_len(&self) -> usize {
        self.weight_len() + self.outputs
    }

    fn bias_offset(&self) -> usize {
        self.offset + self.weight_len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    state_dim: usize,
    action_count: usize,
    hidden: Vec<usize>,
    layers: Vec<LayerShape>,
    params: Vec<f64>,
}

fn layer_shapes(state_dim: usize, hidden: &[usize], action_count: usize) -> Vec<LayerShape> {
    let widths: Vec<usize> = std::iter::once(state_dim)
        .chain(hidden.iter().copied())
        .chain(std::iter::once(action_count))
        .collect();
    let mut offset = 0;
    widths
        .windows(2)
        .map(|w| {
            let shape = LayerShape {
                inputs: w[0],
                outputs: w[1],
                offset,
            };
            offset += shape.param_len();
            shape
        })
        .collect()
}

impl QNetwork {
    /// Network with every parameter set to zero.
    pub fn zeros(state_dim: usize, hidden: &[usize], action_count: usize) -> Result<Self> {
        if state_dim == 0 || action_count == 0 || hidden.contains(&0) {
            return Err(Error::Config(format!(
                "invalid network shape {state_dim} -> {hidden:?} -> {action_count}"
            )));
        }
        let layers = layer_shapes(state_dim, hidden, action_count);
        let count = layers.iter().map(LayerShape::param_len).sum();
        Ok(QNetwork {
            state_dim,
            action_count,
            hidden: hidden.to_vec(),
            layers,
            params: vec![0.0; count],
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        hidden: &[usize],
        action_count: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut net = Self::zeros(state_dim, hidden, action_count)?;
        for layer in net.layers.clone() {
            let limit = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
            for w in &mut net.params[layer.offset..layer.bias_offset()] {
                *w = rng.gen_range(-limit..limit);
            }
        }
        Ok(net)
    }

    /// Rebuilds a network from a flat parameter vector.
    pub fn from_params(
        state_dim: usize,
        hidden: &[usize],
        action_count: usize,
        params: Vec<f64>,
    ) -> Result<Self> {
        let mut net = Self::zeros(state_dim, hidden, action_count)?;
        if params.len() != net.params.len() {
            return Err(Error::Config(format!(
                "expected {} parameters, got {}",
                net.params.len(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Config("network parameters must be finite".into()));
        }
        net.params = params;
        Ok(net)
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    pub fn hidden_sizes(&self) -> &[usize] {
        &self.hidden
    }

    pub fn activation(&self) -> Activation {
        Activation::Relu
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Overwrites this network's parameters with `other`'s.
    pub fn copy_from(&mut self, other: &QNetwork) {
        assert_eq!(self.layers, other.layers, "network shapes differ");
        self.params.copy_from_slice(&other.params);
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.state_dim {
            return Err(Error::Domain(format!(
                "state has dimension {}, network expects {}",
                input.len(),
                self.state_dim
            )));
        }
        Ok(())
    }

    pub fn q_values(&self, state: &StateVector) -> Result<Vec<f64>> {
        self.check_input(state.as_slice())?;
        let mut trace = Activations::for_network(self);
        self.forward(state.as_slice(), &mut trace);
        Ok(trace.output().to_vec())
    }

    /// Lowest-index argmax of the Q-values.
    pub fn greedy_action(&self, state: &StateVector) -> Result<ActionId> {
        Ok(ActionId(argmax(&self.q_values(state)?)))
    }

    /// Forward pass recording every layer's post-activation output.
    /// `input` must have length `state_dim`.
    pub(crate) fn forward(&self, input: &[f64], trace: &mut Activations) {
        trace.values[0].copy_from_slice(input);
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let (head, tail) = trace.values.split_at_mut(k + 1);
            let x = &head[k];
            let y = &mut tail[0];
            let w = &self.params[layer.offset..layer.bias_offset()];
            let b = &self.params[layer.bias_offset()..layer.offset + layer.param_len()];
            for (o, out) in y.iter_mut().enumerate() {
                let row = &w[o * layer.inputs..(o + 1) * layer.inputs];
                let z = dot(row, x) + b[o];
                *out = if k < last { z.max(0.0) } else { z };
            }
        }
    }

    /// Accumulates into `grad` the gradient of `sum_j grad_out[j] * q_j`
    /// with respect to the parameters, for the forward pass in `trace`.
    pub(crate) fn backward(&self, trace: &Activations, grad_out: &[f64], grad: &mut [f64], scratch: &mut Activations) {
        let last = self.layers.len() - 1;
        scratch.values[last + 1].copy_from_slice(grad_out);
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let x = &trace.values[k];
            let (head, tail) = scratch.values.split_at_mut(k + 1);
            let delta = &tail[0];
            let w = &self.params[layer.offset..layer.bias_offset()];
            let (gw, gb) = grad[layer.offset..layer.offset + layer.param_len()].split_at_mut(layer.weight_len());
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                let row = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                for (g, xi) in row.iter_mut().zip(x) {
                    *g += d * xi;
                }
            }
            if k == 0 {
                break;
            }
            // Propagate through the weights, then through the rectifier of layer k-1.
            let prev = &mut head[k];
            prev.iter_mut().for_each(|p| *p = 0.0);
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &w[o * layer.inputs..(o + 1) * layer.inputs];
                for (p, wi) in prev.iter_mut().zip(row) {
                    *p += d * wi;
                }
            }
            for (p, &a) in prev.iter_mut().zip(&trace.values[k]) {
                if a <= 0.0 {
                    *p = 0.0;
                }
            }
        }
    }
}

/// Per-layer activation buffers, reused across forward/backward passes.
#[derive(Debug, Clone)]
pub(crate) struct Activations {
    values: Vec<Vec<f64>>,
}

impl Activations {
    pub(crate) fn for_network(net: &QNetwork) -> Self {
        let mut values = vec![vec![0.0; net.state_dim]];
        values.extend(net.layers.iter().map(|l| vec![0.0; l.outputs]));
        Activations { values }
    }

    pub(crate) fn output(&self) -> &[f64] {
        self.values.last().expect("at least one layer")
    }
}

/// Dot product with four interleaved partial sums so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

impl Policy for QNetwork {
    fn act(&self, state: &StateVector) -> Result<ActionId> {
        self.greedy_action(state)
    }

    fn action_count(&self) -> usize {
        self.action_count
    }

    fn state_dim(&self) -> Option<usize> {
        Some(self.state_dim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn state(v: &[f64]) -> StateVector {
        StateVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = QNetwork::zeros(4, &[64, 64], 2).unwrap();
        assert_eq!(net.q_values(&state(&[1.0, -2.0, 3.0, 0.5])).unwrap(), vec![0.0, 0.0]);
        assert_eq!(net.params().len(), 4 * 64 + 64 + 64 * 64 + 64 + 64 * 2 + 2);
    }

    #[test]
    fn hand_computed_forward_pass() {
        // 2 -> [2] -> 2: hidden = relu(W1 x + b1), out = W2 h + b2
        let params = vec![
            1.0, 2.0, -1.0, 0.5, // W1 rows
            0.1, -0.2, // b1
            1.0, -1.0, 0.5, 2.0, // W2 rows
            0.0, 1.0, // b2
        ];
        let net = QNetwork::from_params(2, &[2], 2, params).unwrap();
        // x = (1, 1): z1 = (3.1, -0.7) -> h = (3.1, 0); out = (3.1, 1.55 + 1)
        let q = net.q_values(&state(&[1.0, 1.0])).unwrap();
        assert!((q[0] - 3.1).abs() < 1e-12);
        assert!((q[1] - 2.55).abs() < 1e-12);
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = QNetwork::new(4, &[8, 8], 2, &mut rng).unwrap();
        let s = state(&[0.1, 0.2, -0.3, 0.4]);
        assert_eq!(net.q_values(&s).unwrap(), net.q_values(&s).unwrap());
    }

    #[test]
    fn dimension_mismatch_is_domain_error() {
        let net = QNetwork::zeros(4, &[4], 2).unwrap();
        assert!(matches!(net.q_values(&state(&[1.0, 2.0])), Err(Error::Domain(_))));
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 1.0]), 0);
        assert_eq!(argmax(&[0.0, 2.0, 2.0]), 1);
        let net = QNetwork::zeros(4, &[4], 2).unwrap();
        assert_eq!(net.greedy_action(&state(&[0.0; 4])).unwrap(), ActionId(0));
    }

    #[test]
    fn from_params_checks_length() {
        assert!(QNetwork::from_params(2, &[2], 2, vec![0.0; 3]).is_err());
        assert!(QNetwork::zeros(0, &[2], 2).is_err());
    }
}
