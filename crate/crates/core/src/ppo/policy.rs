use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::arena::{Action, Observation, CHANNELS};
use crate::container::{fingerprint, Container};
use crate::error::{Error, Result};
use crate::nn::{softmax, LayerSpec, Network, NetworkSpec, Tensor};
use crate::rng::derive_seed;
use crate::srl::{argmax, conv_trunk, pixel_batch, SrlModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InputMode {
    /// Standardised output of a state encoder.
    Encoded,
    /// Raw pixels.
    RawPixels,
}

impl fmt::Display for InputMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InputMode::Encoded => "encoded",
            InputMode::RawPixels => "raw_pixels",
        })
    }
}

impl FromStr for InputMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "encoded" => Ok(InputMode::Encoded),
            "raw_pixels" => Ok(InputMode::RawPixels),
            _ => Err(Error::Format(format!("unknown input mode `{s}`"))),
        }
    }
}

/// Actor (4 logits) and critic networks.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub input_mode: InputMode,
    pub policy: Network,
    pub value: Network,
}

fn mlp(input: usize, hidden: usize, output: usize, seed: u64) -> Result<Network> {
    Network::new(NetworkSpec::new(
        vec![input],
        vec![
            LayerSpec::Dense { input, output: hidden },
            LayerSpec::Tanh,
            LayerSpec::Dense {
                input: hidden,
                output: hidden,
            },
            LayerSpec::Tanh,
            LayerSpec::Dense { input: hidden, output },
        ],
        seed,
    )?)
}

/// Conv trunk, one hidden dense layer, linear head.
pub fn pixel_network(render_size: usize, hidden: usize, output: usize, seed: u64) -> Result<Network> {
    let (mut layers, flat) = conv_trunk(render_size);
    layers.extend([
        LayerSpec::Dense { input: flat, output: hidden },
        LayerSpec::Relu,
        LayerSpec::Dense { input: hidden, output },
    ]);
    Network::new(NetworkSpec::new(vec![CHANNELS, render_size, render_size], layers, seed)?)
}

impl PolicyParams {
    /// Two hidden tanh layers of 64 units over a `state_dim` input.
    pub fn encoded(state_dim: usize, seed: u64) -> Result<Self> {
        let mut policy = mlp(state_dim, 64, Action::COUNT, derive_seed(seed, 1))?;
        let last = policy.spec().layers.len() - 1;
        policy.scale_layer_weights(last, 0.01);
        Ok(PolicyParams {
            input_mode: InputMode::Encoded,
            policy,
            value: mlp(state_dim, 64, 1, derive_seed(seed, 2))?,
        })
    }

    pub fn raw_pixels(render_size: usize, seed: u64) -> Result<Self> {
        let mut policy = pixel_network(render_size, 64, Action::COUNT, derive_seed(seed, 1))?;
        let last = policy.spec().layers.len() - 1;
        policy.scale_layer_weights(last, 0.01);
        Ok(PolicyParams {
            input_mode: InputMode::RawPixels,
            policy,
            value: pixel_network(render_size, 64, 1, derive_seed(seed, 2))?,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        self.policy.input_shape()
    }

    pub fn fingerprint(&self) -> String {
        let mut all = self.policy.params().to_vec();
        all.extend_from_slice(self.value.params());
        fingerprint(&all)
    }

    pub fn write_to(&self, c: &mut Container, prefix: &str) {
        c.set_meta(format!("{prefix}input_mode"), self.input_mode);
        c.push_network(&format!("{prefix}policy"), &self.policy);
        c.push_network(&format!("{prefix}value"), &self.value);
    }

    pub fn read_from(c: &Container, prefix: &str) -> Result<Self> {
        Ok(PolicyParams {
            input_mode: c.meta(&format!("{prefix}input_mode"))?.parse()?,
            policy: c.network(&format!("{prefix}policy"))?,
            value: c.network(&format!("{prefix}value"))?,
        })
    }
}

/// A policy together with what it needs to turn observations into inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub encoder: Option<SrlModel>,
    pub params: PolicyParams,
}

impl Agent {
    pub fn new(encoder: Option<SrlModel>, params: PolicyParams) -> Result<Self> {
        match (&encoder, params.input_mode) {
            (Some(srl), InputMode::Encoded) if srl.state_dim() == params.input_shape()[0] => {}
            (None, InputMode::RawPixels) => {}
            _ => return Err(Error::config("encoder presence does not match the policy input mode")),
        }
        Ok(Agent { encoder, params })
    }

    pub fn feature_len(&self) -> usize {
        self.params.input_shape().iter().product()
    }

    /// Policy input for one observation, appended to `out`.
    pub fn features_into(&self, obs: &Observation, out: &mut Vec<f64>) -> Result<()> {
        match &self.encoder {
            Some(srl) => out.extend(srl.encode_normalized(obs)?),
            None => out.extend(pixel_batch(&[obs])?.into_data()),
        }
        Ok(())
    }

    pub fn features(&self, obs: &Observation) -> Result<Vec<f64>> {
        let mut v = Vec::with_capacity(self.feature_len());
        self.features_into(obs, &mut v)?;
        Ok(v)
    }

    pub fn batch_tensor(&self, features: &[f64]) -> Result<Tensor> {
        let n = features.len() / self.feature_len();
        let mut shape = vec![n];
        shape.extend_from_slice(self.params.input_shape());
        Tensor::new(shape, features.to_vec())
    }

    /// Action logits and state value for one feature vector.
    pub fn evaluate_features(&self, features: &[f64]) -> Result<(Vec<f64>, f64)> {
        let x = self.batch_tensor(features)?;
        let logits = self.params.policy.forward(&x)?.into_data();
        let value = self.params.value.forward(&x)?.data()[0];
        Ok((logits, value))
    }

    pub fn action_probs(&self, obs: &Observation) -> Result<[f64; 4]> {
        let x = self.batch_tensor(&self.features(obs)?)?;
        let p = softmax(self.params.policy.forward(&x)?.data());
        Ok([p[0], p[1], p[2], p[3]])
    }

    /// Argmax action, lowest index on ties.
    pub fn greedy(&self, obs: &Observation) -> Result<Action> {
        Action::from_index(argmax(&self.action_probs(obs)?))
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new("agent");
        self.params.write_to(&mut c, "");
        if let Some(srl) = &self.encoder {
            let sc = srl.to_container();
            c.networks.extend(sc.networks.into_iter().map(|(n, s)| (format!("srl.{n}"), s)));
            c.blobs.extend(sc.blobs.into_iter().map(|(n, b)| (format!("srl.{n}"), b)));
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind("agent")?;
        let params = PolicyParams::read_from(c, "")?;
        let encoder = if params.input_mode == InputMode::Encoded {
            let mut sc = Container::new("srl-model");
            sc.networks = c
                .networks
                .iter()
                .filter_map(|(n, s)| n.strip_prefix("srl.").map(|n| (n.to_string(), s.clone())))
                .collect();
            sc.blobs = c
                .blobs
                .iter()
                .filter_map(|(n, b)| n.strip_prefix("srl.").map(|n| (n.to_string(), b.clone())))
                .collect();
            Some(SrlModel::from_container(&sc)?)
        } else {
            None
        };
        Agent::new(encoder, params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arena::{Arena, ArenaConfig, Task};
    use crate::srl::SrlSpec;

    #[test]
    fn outputs_are_distributions_over_four_actions() {
        let srl = SrlModel::new(&SrlSpec::default()).unwrap();
        let agent = Agent::new(Some(srl), PolicyParams::encoded(16, 3).unwrap()).unwrap();
        let raw = Agent::new(None, PolicyParams::raw_pixels(32, 3).unwrap()).unwrap();
        let mut env = Arena::new(ArenaConfig::new(Task::Escaping).with_randomization(true), 1).unwrap();
        for s in 0..20 {
            let o = env.reset(s);
            for a in [&agent, &raw] {
                let p = a.action_probs(&o).unwrap();
                assert!(p.iter().all(|&v| v >= 0.0));
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn mismatched_encoder_is_rejected() {
        assert!(Agent::new(None, PolicyParams::encoded(16, 0).unwrap()).is_err());
        let srl = SrlModel::new(&SrlSpec::default()).unwrap();
        assert!(Agent::new(Some(srl), PolicyParams::encoded(8, 0).unwrap()).is_err());
    }

    #[test]
    fn agent_container_roundtrip() {
        let srl = SrlModel::new(&SrlSpec::default()).unwrap();
        let agent = Agent::new(Some(srl), PolicyParams::encoded(16, 5).unwrap()).unwrap();
        let back = Agent::from_container(&Container::from_bytes(&agent.to_container().to_bytes()).unwrap()).unwrap();
        assert_eq!(back, agent);
        let raw = Agent::new(None, PolicyParams::raw_pixels(32, 5).unwrap()).unwrap();
        assert_eq!(Agent::from_container(&raw.to_container()).unwrap(), raw);
    }
}
