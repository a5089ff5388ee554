//! State representation learning: an auto-encoder whose latent state is also
//! trained to predict the action between two consecutive observations.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::arena::{Action, Arena, ArenaConfig, Observation, Task, CHANNELS};
use crate::container::Container;
use crate::error::{Error, Result};
use crate::nn::loss::{mse, softmax_cross_entropy};
use crate::nn::{Adam, AdamConfig, LayerSpec, Network, NetworkSpec, Tape, Tensor};
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Observation,
    pub action: usize,
    pub next_obs: Observation,
}

/// Transitions gathered with a uniformly random policy.
#[derive(Debug, Clone, PartialEq)]
pub struct SrlDataset {
    pub task: Task,
    pub seed: u64,
    pub transitions: Vec<Transition>,
}

impl SrlDataset {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new("srl-dataset");
        c.set_meta("task", self.task);
        c.set_meta("seed", self.seed);
        c.set_meta("size", self.len());
        let size = self.transitions.first().map_or(0, |t| t.obs.size());
        let n = self.len();
        let mut obs = Vec::with_capacity(n * CHANNELS * size * size);
        let mut next = Vec::with_capacity(obs.capacity());
        for t in &self.transitions {
            obs.extend_from_slice(t.obs.levels());
            next.extend_from_slice(t.next_obs.levels());
        }
        c.push_u8("obs", vec![n.max(1), CHANNELS, size, size], obs);
        c.push_u8("next_obs", vec![n.max(1), CHANNELS, size, size], next);
        c.push_u8("actions", vec![n.max(1)], self.transitions.iter().map(|t| t.action as u8).collect());
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind("srl-dataset")?;
        let task: Task = c.meta("task")?.parse()?;
        let seed = c.meta_parse("seed")?;
        let n: usize = c.meta_parse("size")?;
        let (shape, obs) = c.u8_blob("obs")?;
        let (_, next) = c.u8_blob("next_obs")?;
        let (_, actions) = c.u8_blob("actions")?;
        let size = shape[2];
        let stride = CHANNELS * size * size;
        let bad = || Error::Format("srl dataset arrays are inconsistent".into());
        if obs.len() < n * stride || next.len() < n * stride || actions.len() < n {
            return Err(bad());
        }
        let transitions = (0..n)
            .map(|i| {
                Ok(Transition {
                    obs: Observation::from_levels(size, obs[i * stride..(i + 1) * stride].to_vec()).ok_or_else(bad)?,
                    action: actions[i] as usize,
                    next_obs: Observation::from_levels(size, next[i * stride..(i + 1) * stride].to_vec())
                        .ok_or_else(bad)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(SrlDataset { task, seed, transitions })
    }
}

/// Runs uniformly random actions, starting new episodes as needed, until
/// exactly `n_samples` transitions are recorded.
pub fn collect_random_dataset(config: &ArenaConfig, n_samples: usize, seed: u64) -> Result<SrlDataset> {
    if n_samples == 0 {
        return Err(Error::config("srl dataset needs at least one sample"));
    }
    let mut rng = rng_from_seed(seed);
    let mut env = Arena::new(config.clone(), derive_seed(seed, 0))?;
    let mut obs = env.observation();
    let mut transitions = Vec::with_capacity(n_samples);
    let mut episode = 0u64;
    while transitions.len() < n_samples {
        let action = rng.gen_range(0..Action::COUNT);
        let step = env.step(Action::from_index(action)?)?;
        transitions.push(Transition {
            obs,
            action,
            next_obs: step.observation.clone(),
        });
        obs = if step.done {
            episode += 1;
            env.reset(derive_seed(seed, episode))
        } else {
            step.observation
        };
    }
    Ok(SrlDataset {
        task: config.task,
        seed,
        transitions,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SrlSpec {
    pub state_dim: usize,
    pub render_size: usize,
    pub decoder_hidden: usize,
    pub inverse_hidden: usize,
    pub seed: u64,
}

impl Default for SrlSpec {
    fn default() -> Self {
        SrlSpec {
            state_dim: 16,
            render_size: 32,
            decoder_hidden: 64,
            inverse_hidden: 64,
            seed: 0,
        }
    }
}

/// Two valid-padding convolutions followed by a dense projection; shared by
/// the encoder and the pixel-input policies.
pub fn conv_trunk(render_size: usize) -> (Vec<LayerSpec>, usize) {
    let c1 = (render_size - 4) / 2 + 1;
    let c2 = (c1 - 3) / 2 + 1;
    let flat = 16 * c2 * c2;
    (
        vec![
            LayerSpec::Conv {
                in_ch: CHANNELS,
                out_ch: 8,
                kernel: 4,
                stride: 2,
            },
            LayerSpec::Relu,
            LayerSpec::Conv {
                in_ch: 8,
                out_ch: 16,
                kernel: 3,
                stride: 2,
            },
            LayerSpec::Relu,
            LayerSpec::Flatten,
        ],
        flat,
    )
}

impl SrlSpec {
    fn networks(&self) -> Result<(Network, Network, Network)> {
        let s = self.render_size;
        let d = self.state_dim;
        let (mut layers, flat) = conv_trunk(s);
        layers.push(LayerSpec::Dense { input: flat, output: d });
        let encoder = Network::new(NetworkSpec::new(vec![CHANNELS, s, s], layers, derive_seed(self.seed, 1))?)?;
        let decoder = Network::new(NetworkSpec::new(
            vec![d],
            vec![
                LayerSpec::Dense {
                    input: d,
                    output: self.decoder_hidden,
                },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    input: self.decoder_hidden,
                    output: CHANNELS * s * s,
                },
            ],
            derive_seed(self.seed, 2),
        )?)?;
        let inverse = Network::new(NetworkSpec::new(
            vec![2 * d],
            vec![
                LayerSpec::Dense {
                    input: 2 * d,
                    output: self.inverse_hidden,
                },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    input: self.inverse_hidden,
                    output: Action::COUNT,
                },
            ],
            derive_seed(self.seed, 3),
        )?)?;
        Ok((encoder, decoder, inverse))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SrlModel {
    pub encoder: Network,
    pub decoder: Network,
    pub inverse: Network,
    /// Per-dimension statistics of encoded training observations, used to
    /// standardise policy inputs.
    pub state_mean: Vec<f64>,
    pub state_std: Vec<f64>,
}

impl SrlModel {
    pub fn new(spec: &SrlSpec) -> Result<Self> {
        let (encoder, decoder, inverse) = spec.networks()?;
        Ok(SrlModel {
            encoder,
            decoder,
            inverse,
            state_mean: vec![0.0; spec.state_dim],
            state_std: vec![1.0; spec.state_dim],
        })
    }

    pub fn state_dim(&self) -> usize {
        self.encoder.output_shape()[0]
    }

    pub fn encode(&self, obs: &Observation) -> Result<Vec<f64>> {
        Ok(self.encoder.forward(&pixel_batch(&[obs])?)?.into_data())
    }

    pub fn encode_batch(&self, obs: &[&Observation]) -> Result<Tensor> {
        self.encoder.forward(&pixel_batch(obs)?)
    }

    /// Encoded state standardised with the training statistics.
    pub fn encode_normalized(&self, obs: &Observation) -> Result<Vec<f64>> {
        let mut s = self.encode(obs)?;
        for ((v, m), sd) in s.iter_mut().zip(&self.state_mean).zip(&self.state_std) {
            *v = (*v - m) / sd;
        }
        Ok(s)
    }

    /// Accuracy of the inverse head at recovering the action of each transition.
    pub fn inverse_accuracy(&self, data: &SrlDataset) -> Result<f64> {
        let mut correct = 0;
        for chunk in data.transitions.chunks(128) {
            let (pairs, _) = self.pair_inputs(chunk)?;
            let logits = self.inverse.forward(&pairs)?;
            for (row, t) in logits.data().chunks(Action::COUNT).zip(chunk) {
                if argmax(row) == t.action {
                    correct += 1;
                }
            }
        }
        Ok(correct as f64 / data.len().max(1) as f64)
    }

    fn pair_inputs(&self, chunk: &[Transition]) -> Result<(Tensor, Tensor)> {
        let b = chunk.len();
        let obs: Vec<&Observation> = chunk.iter().map(|t| &t.obs).chain(chunk.iter().map(|t| &t.next_obs)).collect();
        let s = self.encoder.forward(&pixel_batch(&obs)?)?;
        Ok((pair_states(&s, b), s))
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new("srl-model");
        c.push_network("encoder", &self.encoder);
        c.push_network("decoder", &self.decoder);
        c.push_network("inverse", &self.inverse);
        c.push_f64("state_mean", vec![self.state_mean.len()], self.state_mean.clone());
        c.push_f64("state_std", vec![self.state_std.len()], self.state_std.clone());
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind("srl-model")?;
        Ok(SrlModel {
            encoder: c.network("encoder")?,
            decoder: c.network("decoder")?,
            inverse: c.network("inverse")?,
            state_mean: c.f64_blob("state_mean")?.1.to_vec(),
            state_std: c.f64_blob("state_std")?.1.to_vec(),
        })
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    // first maximum wins ties
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Network input for a batch of observations: pixel values shifted from
/// `[0, 1]` to `[-0.5, 0.5]`.
pub fn pixel_batch(obs: &[&Observation]) -> Result<Tensor> {
    let first = obs.first().ok_or_else(|| Error::config("empty observation batch"))?;
    let size = first.size();
    let mut data = Vec::with_capacity(obs.len() * CHANNELS * size * size);
    for o in obs {
        if o.size() != size {
            return Err(Error::config("observations of different sizes in one batch"));
        }
        data.extend(o.levels().iter().map(|&v| v as f64 / 255.0 - 0.5));
    }
    Tensor::new(vec![obs.len(), CHANNELS, size, size], data)
}

/// Row `i` = concat(states[i], states[b + i]).
fn pair_states(states: &Tensor, b: usize) -> Tensor {
    let d = states.row_len();
    let mut data = Vec::with_capacity(b * 2 * d);
    for i in 0..b {
        data.extend_from_slice(states.row(i));
        data.extend_from_slice(states.row(b + i));
    }
    Tensor::new(vec![b, 2 * d], data).expect("pair shape")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SrlTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub reconstruction_weight: f64,
    pub inverse_weight: f64,
    pub seed: u64,
}

impl Default for SrlTrainConfig {
    fn default() -> Self {
        SrlTrainConfig {
            epochs: 6,
            batch_size: 32,
            lr: 1e-3,
            reconstruction_weight: 1.0,
            inverse_weight: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SrlEpochLoss {
    pub total: f64,
    pub reconstruction: f64,
    pub inverse: f64,
}

/// Minimises `w_rec·MSE(decoder(E(o)), o) + w_inv·CE(inverse(E(o_t), E(o_t+1)), a_t)`.
pub fn train_srl(data: &SrlDataset, spec: &SrlSpec, cfg: &SrlTrainConfig) -> Result<(SrlModel, Vec<SrlEpochLoss>)> {
    if data.is_empty() {
        return Err(Error::config("cannot train an SRL model on an empty dataset"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::config("batch size must be positive"));
    }
    let mut model = SrlModel::new(spec)?;
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut opt_enc = Adam::new(adam, model.encoder.param_count());
    let mut opt_dec = Adam::new(adam, model.decoder.param_count());
    let mut opt_inv = Adam::new(adam, model.inverse.param_count());
    let mut rng = rng_from_seed(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let (mut t_enc, mut t_dec, mut t_inv) = (Tape::new(), Tape::new(), Tape::new());
    let d = model.state_dim();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sum_rec, mut sum_inv, mut batches) = (0.0, 0.0, 0usize);
        for idx in order.chunks(cfg.batch_size) {
            let b = idx.len();
            let obs: Vec<&Observation> = idx
                .iter()
                .map(|&i| &data.transitions[i].obs)
                .chain(idx.iter().map(|&i| &data.transitions[i].next_obs))
                .collect();
            let actions: Vec<usize> = idx.iter().map(|&i| data.transitions[i].action).collect();
            let x = pixel_batch(&obs)?;
            let s = model.encoder.forward_train(&x, &mut t_enc)?;
            let recon = model.decoder.forward_train(&s, &mut t_dec)?;
            let (rec_loss, rec_grad) = mse(recon.data(), x.data())?;
            let logits = model.inverse.forward_train(&pair_states(&s, b), &mut t_inv)?;
            let (inv_loss, inv_grad) = softmax_cross_entropy(logits.data(), Action::COUNT, &actions)?;
            if !rec_loss.is_finite() || !inv_loss.is_finite() {
                return Err(Error::Divergence(format!(
                    "srl loss became non-finite at epoch {epoch} (reconstruction {rec_loss}, inverse {inv_loss})"
                )));
            }
            sum_rec += rec_loss;
            sum_inv += inv_loss;
            batches += 1;

            let scaled = |g: Vec<f64>, w: f64| g.into_iter().map(|v| v * w).collect::<Vec<_>>();
            let mut g_dec = vec![0.0; model.decoder.param_count()];
            let ds_rec = model.decoder.backward_into(
                &t_dec,
                &Tensor::new(recon.shape().to_vec(), scaled(rec_grad, cfg.reconstruction_weight))?,
                &mut g_dec,
            )?;
            let mut g_inv = vec![0.0; model.inverse.param_count()];
            let dpair = model.inverse.backward_into(
                &t_inv,
                &Tensor::new(logits.shape().to_vec(), scaled(inv_grad, cfg.inverse_weight))?,
                &mut g_inv,
            )?;
            let mut ds = ds_rec.into_data();
            for i in 0..b {
                let row = dpair.row(i);
                for j in 0..d {
                    ds[i * d + j] += row[j];
                    ds[(b + i) * d + j] += row[d + j];
                }
            }
            let mut g_enc = vec![0.0; model.encoder.param_count()];
            model
                .encoder
                .backward_into(&t_enc, &Tensor::new(s.shape().to_vec(), ds)?, &mut g_enc)?;
            opt_enc.step(model.encoder.params_mut(), &g_enc)?;
            opt_dec.step(model.decoder.params_mut(), &g_dec)?;
            opt_inv.step(model.inverse.params_mut(), &g_inv)?;
        }
        let n = batches as f64;
        let (rec, inv) = (sum_rec / n, sum_inv / n);
        history.push(SrlEpochLoss {
            total: cfg.reconstruction_weight * rec + cfg.inverse_weight * inv,
            reconstruction: rec,
            inverse: inv,
        });
        log::debug!("srl epoch {epoch}: reconstruction {rec:.5} inverse {inv:.4}");
    }
    fit_state_stats(&mut model, data)?;
    Ok((model, history))
}

/// Squared error summed over each observation, averaged over the batch.
fn fit_state_stats(model: &mut SrlModel, data: &SrlDataset) -> Result<()> {
    let d = model.state_dim();
    let mut sum = vec![0.0; d];
    let mut sq = vec![0.0; d];
    let mut n = 0.0;
    for chunk in data.transitions.chunks(256) {
        let obs: Vec<&Observation> = chunk.iter().map(|t| &t.obs).collect();
        let s = model.encode_batch(&obs)?;
        for row in s.data().chunks(d) {
            for j in 0..d {
                sum[j] += row[j];
                sq[j] += row[j] * row[j];
            }
            n += 1.0;
        }
    }
    model.state_mean = sum.iter().map(|s| s / n).collect();
    model.state_std = sq
        .iter()
        .zip(&model.state_mean)
        .map(|(q, m)| (q / n - m * m).max(0.0).sqrt().max(1e-6))
        .collect();
    Ok(())
}
