//! Convolutional VQ-VAE over pose sequences.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::codebook::{Codebook, EmaConfig};
use crate::error::{Error, Result};
use crate::motion::{Embodiment, Trajectory};
use crate::nn::layers::Conv1d;
use crate::nn::{adam_step, blob, Graph, NodeId, OptimConfig, ParamId, ParamStore, Tensor};

/// Architecture and loss settings of one tokenizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VqConfig {
    pub embodiment: Embodiment,
    pub codebook_size: usize,
    pub code_dim: usize,
    /// Temporal downsampling factor `l`; a power of two.
    pub downsample: usize,
    pub hidden: usize,
    pub commitment_weight: f64,
    pub velocity_weight: f64,
    pub smooth_l1_beta: f64,
    /// EMA codebook updates (otherwise a gradient-trained embedding loss).
    pub ema: bool,
    pub ema_config: EmaConfig,
}

impl Default for VqConfig {
    fn default() -> Self {
        Self::robot()
    }
}

impl VqConfig {
    pub fn robot() -> Self {
        Self {
            embodiment: Embodiment::Robot,
            codebook_size: 128,
            code_dim: 512,
            downsample: 4,
            hidden: 128,
            commitment_weight: 0.25,
            velocity_weight: 0.5,
            smooth_l1_beta: 1.0,
            ema: true,
            ema_config: EmaConfig::default(),
        }
    }

    pub fn human(joints: usize) -> Self {
        Self {
            embodiment: Embodiment::Human { joints },
            codebook_size: 512,
            ..Self::robot()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.codebook_size < 2 || self.code_dim == 0 || self.hidden == 0 {
            return Err(Error::Config("codebook needs N >= 2 and positive widths".into()));
        }
        if !self.downsample.is_power_of_two() {
            return Err(Error::Config(format!("downsample {} is not a power of two", self.downsample)));
        }
        if !(self.commitment_weight >= 0.0 && self.velocity_weight >= 0.0 && self.smooth_l1_beta > 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.ema_config.gamma) {
            return Err(Error::Config("EMA gamma must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Tokens produced for a trajectory of `t` poses.
    pub fn tokens_for(&self, t: usize) -> usize {
        t.max(1).div_ceil(self.downsample)
    }
}

/// Loss terms of one forward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VqLossReport {
    pub reconstruction: f64,
    pub embedding: f64,
    pub commitment: f64,
    pub velocity_reg: f64,
    pub total: f64,
}

impl VqLossReport {
    fn add_scaled(&mut self, o: &VqLossReport, s: f64) {
        self.reconstruction += s * o.reconstruction;
        self.embedding += s * o.embedding;
        self.commitment += s * o.commitment;
        self.velocity_reg += s * o.velocity_reg;
        self.total += s * o.total;
    }
}

/// Per-dimension standardisation fitted on a corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn fit(trajs: &[Trajectory], dim: usize) -> Result<Self> {
        let mut n = 0usize;
        let mut sum = vec![0.0f64; dim];
        let mut sq = vec![0.0f64; dim];
        for t in trajs {
            for p in &t.poses {
                if p.len() != dim {
                    return Err(Error::Shape(format!("pose width {} vs {dim}", p.len())));
                }
                for (i, v) in p.iter().enumerate() {
                    sum[i] += v;
                    sq[i] += v * v;
                }
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::Data("cannot fit normalisation on an empty corpus".into()));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| ((s / n as f64 - m * m).max(0.0).sqrt().max(1e-2)) as f32)
            .collect();
        Ok(Self {
            mean: mean.into_iter().map(|m| m as f32).collect(),
            std,
        })
    }

    /// Poses to a `dim x T` channel-major tensor, padded by repeating the last pose.
    pub fn to_channels(&self, poses: &[Vec<f64>], padded_len: usize) -> Tensor<f32> {
        let d = self.mean.len();
        let mut data = vec![0.0f32; d * padded_len];
        for t in 0..padded_len {
            let p = &poses[t.min(poses.len() - 1)];
            for c in 0..d {
                data[c * padded_len + t] = (p[c] as f32 - self.mean[c]) / self.std[c];
            }
        }
        Tensor::new(vec![d, padded_len], data).expect("consistent shape")
    }

    fn from_channels(&self, x: &Tensor<f32>, len: usize) -> Vec<Vec<f64>> {
        let (d, t) = (x.rows(), x.cols());
        (0..len.min(t))
            .map(|i| (0..d).map(|c| (x.data()[c * t + i] * self.std[c] + self.mean[c]) as f64).collect())
            .collect()
    }
}

/// Settings of the tokenizer training loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VqTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Random crop length in poses (rounded up to a multiple of `l`).
    pub window: usize,
    pub optim: OptimConfig,
    pub seed: u64,
}

impl Default for VqTrainConfig {
    fn default() -> Self {
        Self {
            steps: 3000,
            batch_size: 32,
            window: 40,
            optim: OptimConfig {
                total_steps: 3000,
                ..OptimConfig::default()
            },
            seed: 0,
        }
    }
}

/// One logged training step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VqStepLog {
    pub step: usize,
    pub lr: f64,
    pub loss: VqLossReport,
    pub resets: usize,
}

/// Per-embodiment motion tokenizer.
#[derive(Clone, Debug)]
pub struct VqVae {
    cfg: VqConfig,
    dt: f64,
    store: ParamStore<f32>,
    encoder: Vec<Conv1d>,
    decoder: Vec<Conv1d>,
    codebook_param: Option<ParamId>,
    pub codebook: Codebook,
    pub normalizer: Normalizer,
}

/// Graph handles of one sequence's forward pass.
pub struct SequenceForward {
    pub input: NodeId,
    pub encoded: NodeId,
    pub decoder_input: NodeId,
    pub reconstruction: NodeId,
    pub indices: Vec<usize>,
    pub reconstruction_loss: NodeId,
    pub embedding_loss: Option<NodeId>,
    pub commitment_loss: NodeId,
    pub velocity_loss: NodeId,
    pub total: NodeId,
}

impl VqVae {
    pub fn new(cfg: VqConfig, dt: f64, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (dim, h, d) = (cfg.embodiment.dim(), cfg.hidden, cfg.code_dim);
        let levels = cfg.downsample.trailing_zeros() as usize;
        let mut encoder = vec![Conv1d::new(&mut store, "enc.in", dim, h, 3, 1, 1, &mut rng)];
        for i in 0..levels {
            encoder.push(Conv1d::new(&mut store, &format!("enc.down{i}"), h, h, 4, 2, 1, &mut rng));
        }
        encoder.push(Conv1d::new(&mut store, "enc.out", h, d, 3, 1, 1, &mut rng));
        let mut decoder = vec![Conv1d::new(&mut store, "dec.in", d, h, 3, 1, 1, &mut rng)];
        for i in 0..levels {
            decoder.push(Conv1d::new(&mut store, &format!("dec.up{i}"), h, h, 3, 1, 1, &mut rng));
        }
        decoder.push(Conv1d::new(&mut store, "dec.out", h, dim, 3, 1, 1, &mut rng));
        let entries = Tensor::randn(vec![cfg.codebook_size, d], 1.0, &mut rng);
        let codebook_param = (!cfg.ema).then(|| store.add("codebook", entries.clone()));
        Ok(Self {
            codebook: Codebook::new(entries)?,
            normalizer: Normalizer::identity(dim),
            cfg,
            dt,
            store,
            encoder,
            decoder,
            codebook_param,
        })
    }

    pub fn config(&self) -> &VqConfig {
        &self.cfg
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn store(&self) -> &ParamStore<f32> {
        &self.store
    }

    fn check_embodiment(&self, traj: &Trajectory) -> Result<()> {
        if traj.embodiment != self.cfg.embodiment {
            return Err(Error::Embodiment(format!(
                "tokenizer for {} given a {} trajectory",
                self.cfg.embodiment, traj.embodiment
            )));
        }
        traj.validate()
    }

    fn padded_len(&self, t: usize) -> usize {
        self.cfg.tokens_for(t) * self.cfg.downsample
    }

    /// Normalised, padded `dim x T'` input for `poses`.
    pub fn prepare(&self, poses: &[Vec<f64>]) -> Tensor<f32> {
        self.normalizer.to_channels(poses, self.padded_len(poses.len()))
    }

    fn encode_node(&self, g: &mut Graph<'_, f32>, x: NodeId) -> Result<NodeId> {
        let last = self.encoder.len() - 1;
        let mut h = x;
        for (i, conv) in self.encoder.iter().enumerate() {
            h = conv.forward(g, h)?;
            if i < last {
                h = g.relu(h);
            }
        }
        Ok(g.transpose(h))
    }

    fn decode_node(&self, g: &mut Graph<'_, f32>, zq: NodeId) -> Result<NodeId> {
        let mut h = g.transpose(zq);
        h = self.decoder[0].forward(g, h)?;
        h = g.relu(h);
        for conv in &self.decoder[1..self.decoder.len() - 1] {
            h = g.upsample(h, 2)?;
            h = conv.forward(g, h)?;
            h = g.relu(h);
        }
        self.decoder[self.decoder.len() - 1].forward(g, h)
    }

    fn quantize_rows(&self, z: &Tensor<f32>) -> Result<(Vec<usize>, Tensor<f32>)> {
        let mut idx = Vec::with_capacity(z.rows());
        let mut q = Vec::with_capacity(z.len());
        for r in 0..z.rows() {
            let (k, v) = self.codebook.quantize(z.row(r))?;
            idx.push(k);
            q.extend(v);
        }
        Ok((idx, Tensor::new(z.shape().to_vec(), q)?))
    }

    /// Full forward pass of one prepared `dim x T` input inside `g`.
    pub fn forward_sequence(&self, g: &mut Graph<'_, f32>, x: Tensor<f32>) -> Result<SequenceForward> {
        let input = g.constant(x);
        let encoded = self.encode_node(g, input)?;
        let (indices, q) = self.quantize_rows(g.value(encoded))?;
        let decoder_input = g.straight_through(encoded, q.clone())?;
        let reconstruction = self.decode_node(g, decoder_input)?;
        let beta = self.cfg.smooth_l1_beta as f32;
        let reconstruction_loss = g.smooth_l1(reconstruction, input, beta)?;
        let dr = g.time_diff(reconstruction)?;
        let dx = g.time_diff(input)?;
        let velocity_loss = g.smooth_l1(dr, dx, beta)?;
        let q_const = g.constant(q);
        let commitment_loss = g.smooth_l1(encoded, q_const, beta)?;
        let embedding_loss = match self.codebook_param {
            Some(p) => {
                let table = g.param(p);
                let gathered = g.embedding(table, &indices)?;
                let target = g.detach(encoded);
                Some(g.smooth_l1(gathered, target, beta)?)
            }
            None => None,
        };
        let mut terms = vec![
            (reconstruction_loss, 1.0),
            (commitment_loss, self.cfg.commitment_weight as f32),
            (velocity_loss, self.cfg.velocity_weight as f32),
        ];
        terms.extend(embedding_loss.map(|e| (e, 1.0)));
        let total = g.weighted_sum(&terms)?;
        Ok(SequenceForward {
            input,
            encoded,
            decoder_input,
            reconstruction,
            indices,
            reconstruction_loss,
            embedding_loss,
            commitment_loss,
            velocity_loss,
            total,
        })
    }

    fn report(&self, g: &Graph<'_, f32>, f: &SequenceForward) -> VqLossReport {
        let v = |n: NodeId| g.value(n).item() as f64;
        let mut r = VqLossReport {
            reconstruction: v(f.reconstruction_loss),
            embedding: f.embedding_loss.map_or(0.0, v),
            commitment: v(f.commitment_loss),
            velocity_reg: v(f.velocity_loss),
            total: 0.0,
        };
        r.total = r.reconstruction + r.embedding + self.cfg.commitment_weight * r.commitment + self.cfg.velocity_weight * r.velocity_reg;
        r
    }

    /// Reconstruction, loss terms and token indices for one trajectory.
    pub fn vq_forward(&self, traj: &Trajectory) -> Result<(Trajectory, VqLossReport, Vec<usize>)> {
        self.check_embodiment(traj)?;
        let mut g = Graph::new(&self.store);
        let f = self.forward_sequence(&mut g, self.prepare(&traj.poses))?;
        let recon = g.value(f.reconstruction);
        recon.check_finite("tokenizer forward")?;
        let report = self.report(&g, &f);
        let poses = self.normalizer.from_channels(recon, traj.len());
        Ok((Trajectory::new(traj.embodiment, traj.dt, poses)?, report, f.indices))
    }

    /// Mean loss report over trajectories (full length, no cropping).
    pub fn evaluate(&self, trajs: &[Trajectory]) -> Result<VqLossReport> {
        if trajs.is_empty() {
            return Err(Error::Data("nothing to evaluate".into()));
        }
        let mut acc = VqLossReport::default();
        for t in trajs {
            acc.add_scaled(&self.vq_forward(t)?.1, 1.0 / trajs.len() as f64);
        }
        Ok(acc)
    }

    /// Fraction of codes used when encoding `trajs`.
    pub fn utilization(&self, trajs: &[Trajectory]) -> Result<f64> {
        let mut used = vec![false; self.codebook.len()];
        for t in trajs {
            for k in self.encode_trajectory(t)? {
                used[k] = true;
            }
        }
        Ok(used.iter().filter(|u| **u).count() as f64 / used.len() as f64)
    }

    pub fn encode_trajectory(&self, traj: &Trajectory) -> Result<Vec<usize>> {
        self.check_embodiment(traj)?;
        let mut g = Graph::new(&self.store);
        let x = g.constant(self.prepare(&traj.poses));
        let z = self.encode_node(&mut g, x)?;
        Ok(self.quantize_rows(g.value(z))?.0)
    }

    /// Decodes code indices into `len` poses (default: `tokens * l`).
    pub fn decode_tokens(&self, tokens: &[usize], len: Option<usize>) -> Result<Trajectory> {
        if tokens.is_empty() {
            return Err(Error::Data("cannot decode an empty token sequence".into()));
        }
        let d = self.codebook.dim();
        let mut q = Vec::with_capacity(tokens.len() * d);
        for &k in tokens {
            if k >= self.codebook.len() {
                return Err(Error::TokenRange {
                    id: k,
                    segment: format!("{} codebook", self.cfg.embodiment),
                });
            }
            q.extend_from_slice(self.codebook.entries.row(k));
        }
        let mut g = Graph::new(&self.store);
        let zq = g.constant(Tensor::new(vec![tokens.len(), d], q)?);
        let out = self.decode_node(&mut g, zq)?;
        let full = tokens.len() * self.cfg.downsample;
        let poses = self.normalizer.from_channels(g.value(out), len.unwrap_or(full).min(full));
        Trajectory::new(self.cfg.embodiment, self.dt, poses)
    }

    fn crop(&self, traj: &Trajectory, window: usize, rng: &mut ChaCha8Rng) -> Tensor<f32> {
        let w = window.max(1).div_ceil(self.cfg.downsample) * self.cfg.downsample;
        if traj.len() <= w {
            return self.prepare(&traj.poses);
        }
        let start = rng.gen_range(0..=traj.len() - w);
        self.prepare(&traj.poses[start..start + w])
    }

    /// Trains on `corpus`; `on_step` sees every step's log.
    pub fn train<C: FnMut(&VqStepLog)>(&mut self, corpus: &[Trajectory], tc: &VqTrainConfig, mut on_step: C) -> Result<Vec<VqStepLog>> {
        if corpus.is_empty() || tc.batch_size == 0 {
            return Err(Error::Data("tokenizer training needs a non-empty corpus and batch".into()));
        }
        for t in corpus {
            self.check_embodiment(t)?;
        }
        tc.optim.validate()?;
        self.normalizer = Normalizer::fit(corpus, self.cfg.embodiment.dim())?;
        let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        let mut cursor = order.len();
        let mut logs = Vec::with_capacity(tc.steps);
        let d = self.cfg.code_dim;
        for step in 1..=tc.steps {
            let mut g = Graph::new(&self.store);
            let mut totals = Vec::with_capacity(tc.batch_size);
            let mut z_rows: Vec<f32> = Vec::new();
            let mut assignments = Vec::new();
            let mut report = VqLossReport::default();
            let inv_b = 1.0 / tc.batch_size as f64;
            for _ in 0..tc.batch_size {
                if cursor == order.len() {
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                let x = self.crop(&corpus[order[cursor]], tc.window, &mut rng);
                cursor += 1;
                let f = self.forward_sequence(&mut g, x)?;
                report.add_scaled(&self.report(&g, &f), inv_b);
                z_rows.extend_from_slice(g.value(f.encoded).data());
                assignments.extend_from_slice(&f.indices);
                totals.push((f.total, inv_b as f32));
            }
            if !report.total.is_finite() {
                return Err(Error::NonFinite(format!("tokenizer loss at step {step}")));
            }
            let loss = g.weighted_sum(&totals)?;
            let grads = g.backward(loss)?.params;
            grads.check_finite()?;
            drop(g);
            let lr = adam_step(&mut self.store, &grads, &tc.optim, step)?;
            let resets = if self.cfg.ema {
                debug_assert_eq!(z_rows.len(), assignments.len() * d);
                self.codebook
                    .ema_update_and_reset(&z_rows, &assignments, &self.cfg.ema_config, &mut rng)?
                    .resets
                    .len()
            } else {
                let p = self.codebook_param.expect("gradient mode owns a codebook parameter");
                self.codebook.entries = self.store.value(p).clone();
                0
            };
            let log = VqStepLog {
                step,
                lr,
                loss: report,
                resets,
            };
            on_step(&log);
            logs.push(log);
        }
        Ok(logs)
    }

    /// Writes `tokenizer.json` and the `weights` blob into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut store = self.store.clone();
        let (n, d) = (self.codebook.len(), self.codebook.dim());
        store.add("codebook.entries", self.codebook.entries.clone());
        store.add("codebook.usage", Tensor::new(vec![n], self.codebook.usage.iter().map(|v| *v as f32).collect())?);
        store.add(
            "codebook.ema_sums",
            Tensor::new(vec![n, d], self.codebook.ema_sums.iter().map(|v| *v as f32).collect())?,
        );
        let dim = self.normalizer.mean.len();
        store.add("norm.mean", Tensor::new(vec![dim], self.normalizer.mean.clone())?);
        store.add("norm.std", Tensor::new(vec![dim], self.normalizer.std.clone())?);
        blob::save(dir, "weights", &store)?;
        crate::io::write_json(
            &dir.join("tokenizer.json"),
            &TokenizerManifest {
                config: self.cfg.clone(),
                dt: self.dt,
            },
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let m: TokenizerManifest = crate::io::read_json(&dir.join("tokenizer.json"))?;
        let mut model = Self::new(m.config, m.dt, 0)?;
        let saved = blob::load(dir, "weights")?;
        model.store.load_values_from(&saved)?;
        let get = |name: &str| {
            saved
                .find(name)
                .map(|id| saved.value(id).clone())
                .ok_or_else(|| Error::Mismatch(format!("tokenizer blob lacks {name}")))
        };
        model.codebook = Codebook::new(get("codebook.entries")?)?;
        model.codebook.usage = get("codebook.usage")?.data().iter().map(|v| *v as f64).collect();
        model.codebook.ema_sums = get("codebook.ema_sums")?.data().iter().map(|v| *v as f64).collect();
        if model.codebook.len() != model.cfg.codebook_size || model.codebook.dim() != model.cfg.code_dim {
            return Err(Error::Mismatch("codebook shape disagrees with the tokenizer manifest".into()));
        }
        model.normalizer = Normalizer {
            mean: get("norm.mean")?.into_data(),
            std: get("norm.std")?.into_data(),
        };
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
struct TokenizerManifest {
    config: VqConfig,
    dt: f64,
}
