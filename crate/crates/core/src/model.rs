//! Model file: an 8-byte magic, a little-endian `u32` header length, a
//! UTF-8 JSON header describing the network, then every parameter as a
//! little-endian `f64` in layer order (row-major weights, then biases).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dqn::{Activation, QNetwork};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 8] = b"SEALQNET";
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Provenance stored alongside the parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMeta {
    pub training: Option<RunConfig>,
    /// Fingerprint of the watermark spec the policy was trained with.
    pub watermark: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerEntry {
    inputs: usize,
    outputs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelHeader {
    format_version: u32,
    state_dim: usize,
    action_count: usize,
    hidden_sizes: Vec<usize>,
    activation: Activation,
    layers: Vec<LayerEntry>,
    param_count: usize,
    meta: ModelMeta,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: u32,
}

pub fn encode_model(net: &QNetwork, meta: &ModelMeta) -> Vec<u8> {
    let header = ModelHeader {
        format_version: MODEL_FORMAT_VERSION,
        state_dim: net.state_dim(),
        action_count: net.action_count(),
        hidden_sizes: net.hidden_sizes().to_vec(),
        activation: net.activation(),
        layers: net
            .layers()
            .iter()
            .map(|l| LayerEntry {
                inputs: l.inputs,
                outputs: l.outputs,
            })
            .collect(),
        param_count: net.params().len(),
        meta: meta.clone(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(12 + json.len() + 8 * net.params().len());
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for p in net.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn decode_model(bytes: &[u8], source: &str) -> Result<(QNetwork, ModelMeta)> {
    let err = |msg: String| Error::format(source, msg);
    if bytes.len() < 12 {
        return Err(err(format!("truncated: {} bytes, header needs 12", bytes.len())));
    }
    if &bytes[..8] != MODEL_MAGIC {
        return Err(err("not a model file (bad magic)".into()));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    if body.len() < header_len {
        return Err(err(format!(
            "truncated header: declared {header_len} bytes, {} present",
            body.len()
        )));
    }
    let (header_bytes, param_bytes) = body.split_at(header_len);

    let probe: VersionProbe = serde_json::from_slice(header_bytes)
        .map_err(|e| err(format!("header.format_version: {e}")))?;
    if probe.format_version != MODEL_FORMAT_VERSION {
        return Err(err(format!(
            "header.format_version: unsupported version {} (this reader understands {MODEL_FORMAT_VERSION})",
            probe.format_version
        )));
    }
    let header: ModelHeader =
        serde_json::from_slice(header_bytes).map_err(|e| err(format!("header: {e}")))?;

    let empty = QNetwork::zeros(header.state_dim, &header.hidden_sizes, header.action_count)
        .map_err(|e| err(format!("header: {e}")))?;
    let expected: Vec<LayerEntry> = empty
        .layers()
        .iter()
        .map(|l| LayerEntry {
            inputs: l.inputs,
            outputs: l.outputs,
        })
        .collect();
    if header.layers != expected {
        return Err(err(format!(
            "header.layers: {:?} inconsistent with state_dim {}, hidden_sizes {:?}, action_count {}",
            header.layers, header.state_dim, header.hidden_sizes, header.action_count
        )));
    }
    if header.param_count != empty.params().len() {
        return Err(err(format!(
            "header.param_count: {} but layers need {}",
            header.param_count,
            empty.params().len()
        )));
    }
    if param_bytes.len() != 8 * header.param_count {
        return Err(err(format!(
            "parameters: expected {} bytes, found {}",
            8 * header.param_count,
            param_bytes.len()
        )));
    }
    let params: Vec<f64> = param_bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let net = QNetwork::from_params(header.state_dim, &header.hidden_sizes, header.action_count, params)
        .map_err(|e| err(format!("parameters: {e}")))?;
    Ok((net, header.meta))
}

pub fn save_model(net: &QNetwork, meta: &ModelMeta, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_model(net, meta)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(QNetwork, ModelMeta)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::StateVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample() -> (QNetwork, ModelMeta) {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let net = QNetwork::new(4, &[64, 64], 2, &mut rng).unwrap();
        let meta = ModelMeta {
            training: Some(RunConfig::default()),
            watermark: Some("ab".repeat(32)),
        };
        (net, meta)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (net, meta) = sample();
        let bytes = encode_model(&net, &meta);
        let (back, back_meta) = decode_model(&bytes, "mem").unwrap();
        assert_eq!(back_meta, meta);
        assert!(net.params().iter().zip(back.params()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(encode_model(&back, &back_meta), bytes);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let s = StateVector::new((0..4).map(|_| rng.gen_range(-5.0..5.0)).collect()).unwrap();
            let a = net.q_values(&s).unwrap();
            let b = back.q_values(&s).unwrap();
            assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn truncation_is_reported() {
        let (net, meta) = sample();
        let bytes = encode_model(&net, &meta);
        for cut in [0, 5, 11, 40, bytes.len() - 1] {
            assert!(matches!(decode_model(&bytes[..cut], "mem"), Err(Error::Format { .. })));
        }
    }

    #[test]
    fn old_version_is_rejected_explicitly() {
        let header = br#"{"format_version":0,"weights":[]}"#;
        let mut bytes = MODEL_MAGIC.to_vec();
        bytes.extend_from_slice(&(header.len() as u32).to_le_bytes());
        bytes.extend_from_slice(header);
        let msg = decode_model(&bytes, "old").unwrap_err().to_string();
        assert!(msg.contains("unsupported version 0"), "{msg}");
    }

    #[test]
    fn inconsistent_shapes_are_rejected() {
        let (net, meta) = sample();
        let bytes = encode_model(&net, &meta);
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header = std::str::from_utf8(&bytes[12..12 + header_len]).unwrap();
        let tampered = header.replace("\"param_count\":4610", "\"param_count\":4611");
        assert_ne!(tampered, header);
        let mut out = MODEL_MAGIC.to_vec();
        out.extend_from_slice(&(tampered.len() as u32).to_le_bytes());
        out.extend_from_slice(tampered.as_bytes());
        out.extend_from_slice(&bytes[12 + header_len..]);
        let msg = decode_model(&out, "mem").unwrap_err().to_string();
        assert!(msg.contains("param_count"), "{msg}");
    }

    #[test]
    fn bad_magic() {
        assert!(decode_model(b"NOTAMODEL___", "mem").is_err());
    }
}
