//! WGAN-GP training: alternating critic and generator updates, validation
//! with early stopping, structured step logs and resumable checkpoints.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::autograd::{Graph, Var};
use crate::checkpoint::Container;
use crate::critic::{reflect_indices, sample_offset, Critic, CriticConfig};
use crate::error::{Error, Result};
use crate::generator::{Generator, GeneratorConfig};
use crate::grid::video::{augment_mirror, VideoSample};
use crate::losses::{
    adversarial_terms, gradient_penalty, l1_loss, perceptual_loss, total_critic_loss, total_generator_loss, tv_loss,
    LossBundle, LossTerms, LossWeights,
};
use crate::metrics::cepstrum::{mcd, CepstrumConfig};
use crate::nn::{Adam, AdamConfig, Bound, ForwardCtx, TensorSet};
use crate::speech_encoder::SpeechEncoder;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub critic_updates_per_gen: usize,
    pub generator_optimizer: AdamConfig,
    pub critic_optimizer: AdamConfig,
    pub weights: LossWeights,
    pub batch_size: usize,
    pub patience: usize,
    /// Validation MCD must drop by at least this many dB to count as improvement.
    pub min_improvement: f64,
    pub max_epochs: usize,
    /// Flip each training clip left-right with probability 1/2.
    pub mirror_augment: bool,
    pub bn_momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            critic_updates_per_gen: 6,
            generator_optimizer: AdamConfig::default(),
            critic_optimizer: AdamConfig::default(),
            weights: LossWeights::default(),
            batch_size: 8,
            patience: 10,
            min_improvement: 1e-4,
            max_epochs: 1000,
            mirror_augment: true,
            bn_momentum: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.critic_updates_per_gen == 0 {
            return Err(Error::Config("trainer.critic_updates_per_gen must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("trainer.patience must be at least 1".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("trainer.batch_size and trainer.max_epochs must be positive".into()));
        }
        if !(self.min_improvement >= 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::Config("trainer.min_improvement must be >= 0 and bn_momentum in [0, 1]".into()));
        }
        for (name, a) in [("generator", &self.generator_optimizer), ("critic", &self.critic_optimizer)] {
            if !(a.lr > 0.0) || !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
                return Err(Error::Config(format!("trainer.{name}_optimizer has invalid Adam settings")));
            }
        }
        self.weights.validate()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    pub generator_steps: u64,
    pub critic_steps: u64,
    pub best_val_mcd: Option<f64>,
    pub best_epoch: Option<usize>,
    pub epochs_since_improvement: usize,
    /// Entries of the step log written so far.
    pub log_lines: usize,
}

/// Critic-step statistics; `total = adv + lambda_gp * gp`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticStats {
    pub adv: f64,
    pub gp: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub epochs: usize,
    pub best_val_mcd: f64,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Equally long clips stacked for one update.
#[derive(Clone, Debug)]
pub struct Batch {
    pub ids: Vec<String>,
    /// `[B * T, C, N, 64, 96]` encoder windows.
    pub windows: Tensor,
    /// `[B, T * H]` reference audio.
    pub target: Tensor,
}

impl Batch {
    pub fn new(generator: &Generator, samples: &[&VideoSample]) -> Result<Self> {
        let videos: Vec<_> = samples.iter().map(|s| &s.video).collect();
        let windows = generator.batch_windows(&videos)?;
        let len = samples[0].video.frames() * generator.samples_per_frame();
        let mut target = Vec::with_capacity(samples.len() * len);
        for s in samples {
            if s.audio.sample_rate != generator.sample_rate() {
                return Err(Error::InvalidInput(format!(
                    "{}: audio at {} Hz, generator at {} Hz",
                    s.id,
                    s.audio.sample_rate,
                    generator.sample_rate()
                )));
            }
            target.extend(s.target_audio());
        }
        Ok(Self {
            ids: samples.iter().map(|s| s.id.clone()).collect(),
            windows,
            target: Tensor::new([samples.len(), len], target),
        })
    }

    pub fn size(&self) -> usize {
        self.target.shape()[0]
    }
}

/// Callbacks invoked by [`Trainer::train`].
pub trait TrainHooks {
    /// Validation score for the current generator (lower is better).
    fn validate(&mut self, generator: &Generator, validation: &[VideoSample]) -> Result<f64>;

    /// Runs after each epoch's bookkeeping, e.g. to persist checkpoints and logs.
    fn epoch_end(&mut self, _trainer: &Trainer) -> Result<()> {
        Ok(())
    }
}

/// Mean MCD between generated and reference audio over the validation clips.
pub fn validation_mcd(generator: &Generator, validation: &[VideoSample], cepstrum: &CepstrumConfig) -> Result<f64> {
    if validation.is_empty() {
        return Err(Error::InvalidInput("validation split is empty".into()));
    }
    let mut total = 0.0;
    for s in validation {
        let generated = generator.generate(&s.video)?;
        total += mcd(&s.target_audio(), &generated.samples, generator.sample_rate(), cepstrum)?;
    }
    Ok(total / validation.len() as f64)
}

pub struct McdValidation {
    pub cepstrum: CepstrumConfig,
}

impl TrainHooks for McdValidation {
    fn validate(&mut self, generator: &Generator, validation: &[VideoSample]) -> Result<f64> {
        validation_mcd(generator, validation, &self.cepstrum)
    }
}

pub struct Trainer {
    config: TrainConfig,
    pub generator: Generator,
    pub critic: Critic,
    encoder: Box<dyn SpeechEncoder>,
    generator_opt: Adam,
    critic_opt: Adam,
    rng: ChaCha8Rng,
    state: TrainState,
    best: Option<(TensorSet, TensorSet)>,
    last_gp: f64,
    /// One JSON record per line; deterministic under a fixed seed.
    pub log: Vec<String>,
    /// Wall-clock time per step, kept apart so the step log stays reproducible.
    pub timing: Vec<String>,
}

impl Trainer {
    pub fn new(generator: Generator, critic: Critic, encoder: Box<dyn SpeechEncoder>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if encoder.sample_rate() != generator.sample_rate() {
            return Err(Error::Config(format!(
                "speech encoder runs at {} Hz, generator at {} Hz",
                encoder.sample_rate(),
                generator.sample_rate()
            )));
        }
        let generator_opt = Adam::new(config.generator_optimizer, &generator.params);
        let critic_opt = Adam::new(config.critic_optimizer, &critic.params);
        let rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(2));
        Ok(Self {
            config,
            generator,
            critic,
            encoder,
            generator_opt,
            critic_opt,
            rng,
            state: TrainState::default(),
            best: None,
            last_gp: 0.0,
            log: Vec::new(),
            timing: Vec::new(),
        })
    }

    /// Fresh networks seeded from `config.seed`.
    pub fn build(
        generator: &GeneratorConfig,
        critic: &CriticConfig,
        encoder: Box<dyn SpeechEncoder>,
        config: TrainConfig,
        sample_rate: u32,
    ) -> Result<Self> {
        let g = Generator::new(generator, sample_rate, config.seed)?;
        let c = Critic::new(critic, sample_rate, config.seed.wrapping_add(1))?;
        Self::new(g, c, encoder, config)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn encoder(&self) -> &dyn SpeechEncoder {
        self.encoder.as_ref()
    }

    /// Raises the epoch budget, e.g. before resuming a finished run.
    pub fn set_max_epochs(&mut self, epochs: usize) {
        self.config.max_epochs = epochs.max(1);
    }

    /// Generator with the best validation weights seen so far (current weights before any validation).
    pub fn best_generator(&self) -> Generator {
        let mut g = self.generator.clone();
        if let Some((params, buffers)) = &self.best {
            g.params = params.clone();
            g.buffers = buffers.clone();
        }
        g
    }

    /// Generated audio for a batch in training mode, without gradients or running-statistic updates.
    pub fn fake_audio(&self, batch: &Batch) -> Tensor {
        let g = Graph::new();
        let p = self.generator.params.bind_frozen(&g);
        let out = self.generator.forward(&p, &mut ForwardCtx::train(), g.constant(batch.windows.clone()), batch.size());
        out.value().as_ref().clone()
    }

    /// Flat indices of one critic-length clip per row of a `[B, len]` signal, reflect-padding short rows.
    fn clip_indices(&mut self, rows: usize, len: usize) -> Result<Vec<usize>> {
        let clip = self.critic.clip_len();
        let padded = reflect_indices(len, clip);
        let mut out = Vec::with_capacity(rows * clip);
        for r in 0..rows {
            let start = sample_offset(padded.len(), clip, &mut self.rng)?;
            out.extend(padded[start..start + clip].iter().map(|&i| r * len + i));
        }
        Ok(out)
    }

    fn gather_clips(&mut self, audio: &Tensor) -> Result<Tensor> {
        let (rows, len) = (audio.shape()[0], audio.shape()[1]);
        let idx = self.clip_indices(rows, len)?;
        let data = idx.iter().map(|&i| audio.data()[i]).collect();
        Ok(Tensor::new([rows, self.critic.clip_len()], data))
    }

    /// One critic update on real clips of `batch` against clips of `fake` (`[B, T * H]`).
    pub fn train_step_critic(&mut self, batch: &Batch, fake: &Tensor) -> Result<CriticStats> {
        let started = Instant::now();
        if fake.shape() != batch.target.shape() {
            return Err(Error::InvalidInput(format!(
                "fake audio {:?} does not match batch {:?}",
                fake.shape(),
                batch.target.shape()
            )));
        }
        let real = self.gather_clips(&batch.target)?;
        let fake = self.gather_clips(fake)?;
        let g = Graph::new();
        let p = self.critic.params.bind(&g);
        let s_real = self.critic.score(&p, g.constant(real.clone()));
        let s_fake = self.critic.score(&p, g.constant(fake.clone()));
        let (adv, _) = adversarial_terms(s_real, s_fake)?;
        let critic = &self.critic;
        let gp = gradient_penalty(&g, |x| critic.score(&p, x), &real, &fake, &mut self.rng)?;
        let stats = total_critic_loss(adv.item(), gp.item(), &self.config.weights)
            .map_err(|e| self.diagnose(e, "critic"))?;
        let loss = adv + gp.scale(self.config.weights.gp);
        let grads = g.gradients(loss, p.vars());
        self.check_grads(&grads, "critic")?;
        self.critic_opt.step(&mut self.critic.params, &grads);

        self.state.critic_steps += 1;
        self.last_gp = stats.gp;
        let stats = CriticStats { adv: stats.adv, gp: stats.gp, total: stats.total };
        self.record(json!({
            "kind": "critic",
            "epoch": self.state.epoch,
            "step": self.state.critic_steps,
            "adv": stats.adv,
            "gp": stats.gp,
            "total": stats.total,
        }));
        self.record_time("critic", self.state.critic_steps, started);
        Ok(stats)
    }

    /// One generator update on `batch`; BN running statistics advance once.
    pub fn train_step_generator(&mut self, batch: &Batch) -> Result<LossBundle> {
        let started = Instant::now();
        let g = Graph::new();
        let p = self.generator.params.bind(&g);
        let mut ctx = ForwardCtx::train();
        let fake = self.generator.forward(&p, &mut ctx, g.constant(batch.windows.clone()), batch.size());
        self.generator_update(batch, &g, &p, ctx, fake, started)
    }

    /// Loss, backward pass and update for a generator output already on `g`.
    fn generator_update<'g>(
        &mut self,
        batch: &Batch,
        g: &'g Graph,
        p: &Bound<'g>,
        ctx: ForwardCtx,
        fake: Var<'g>,
        started: Instant,
    ) -> Result<LossBundle> {
        let (rows, len) = (batch.size(), batch.target.shape()[1]);
        let idx = self.clip_indices(rows, len)?;
        let cp = self.critic.params.bind_frozen(g);
        let real = g.constant(batch.target.clone());
        let clips = fake.reshape([1, rows * len]).gather_last(idx).reshape([rows, self.critic.clip_len()]);
        let adv = self.critic.score(&cp, clips).mean().scale(-1.0);
        let l1 = l1_loss(real, fake)?;
        let tv = tv_loss(fake)?;
        let perceptual = perceptual_loss(self.encoder.as_ref(), real, fake)?;
        let terms = LossTerms { adv: adv.item(), gp: self.last_gp, perceptual: perceptual.item(), l1: l1.item(), tv: tv.item() };
        let bundle = total_generator_loss(&terms, &self.config.weights).map_err(|e| self.diagnose(e, "generator"))?;
        let w = self.config.weights;
        let loss = adv + l1.scale(w.l1) + tv.scale(w.tv) + perceptual.scale(w.perceptual);
        let grads = g.gradients(loss, p.vars());
        self.check_grads(&grads, "generator")?;
        self.generator_opt.step(&mut self.generator.params, &grads);
        ctx.commit(&mut self.generator.buffers, self.config.bn_momentum);

        self.state.generator_steps += 1;
        self.record(json!({
            "kind": "generator",
            "epoch": self.state.epoch,
            "step": self.state.generator_steps,
            "adv": bundle.adv,
            "gp": bundle.gp,
            "perceptual": bundle.perceptual,
            "l1": bundle.l1,
            "tv": bundle.tv,
            "total": bundle.total,
        }));
        self.record_time("generator", self.state.generator_steps, started);
        Ok(bundle)
    }

    /// The configured number of critic updates followed by one generator update.
    pub fn train_batch(&mut self, batch: &Batch) -> Result<LossBundle> {
        // The generator is fixed during the critic updates, so its forward pass serves them and its own update.
        let started = Instant::now();
        let g = Graph::new();
        let p = self.generator.params.bind(&g);
        let mut ctx = ForwardCtx::train();
        let fake = self.generator.forward(&p, &mut ctx, g.constant(batch.windows.clone()), batch.size());
        let fake_audio = fake.value().as_ref().clone();
        for _ in 0..self.config.critic_updates_per_gen {
            self.train_step_critic(batch, &fake_audio)?;
        }
        self.generator_update(batch, &g, &p, ctx, fake, started)
    }

    /// Shuffled batches of equally long clips covering `train` once.
    pub fn epoch_batches(&mut self, train: &[VideoSample]) -> Result<Vec<Batch>> {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.rng);
        order.sort_by_key(|&i| train[i].video.frames());
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for i in order {
            match groups.last_mut() {
                Some(g) if g.len() < self.config.batch_size && train[g[0]].video.frames() == train[i].video.frames() => {
                    g.push(i)
                }
                _ => groups.push(vec![i]),
            }
        }
        groups.shuffle(&mut self.rng);
        let mut batches = Vec::with_capacity(groups.len());
        for group in groups {
            let mut owned = Vec::with_capacity(group.len());
            for i in group {
                let flip = self.config.mirror_augment && self.rng.gen_bool(0.5);
                owned.push(if flip { augment_mirror(&train[i]) } else { train[i].clone() });
            }
            let refs: Vec<&VideoSample> = owned.iter().collect();
            batches.push(Batch::new(&self.generator, &refs)?);
        }
        Ok(batches)
    }

    pub fn train_epoch(&mut self, train: &[VideoSample]) -> Result<()> {
        for batch in self.epoch_batches(train)? {
            self.train_batch(&batch)?;
        }
        Ok(())
    }

    /// Trains until validation stops improving for `patience` epochs or the epoch budget runs out.
    pub fn train(&mut self, train: &[VideoSample], validation: &[VideoSample], hooks: &mut dyn TrainHooks) -> Result<TrainOutcome> {
        if train.is_empty() {
            return Err(Error::InvalidInput("training split is empty".into()));
        }
        if validation.is_empty() {
            return Err(Error::InvalidInput("validation split is empty".into()));
        }
        let encoder_sum = self.encoder.checksum();
        let mut stopped_early = self.state.epochs_since_improvement >= self.config.patience;
        while !stopped_early && self.state.epoch < self.config.max_epochs {
            self.train_epoch(train)?;
            let score = hooks.validate(&self.generator, validation)?;
            if !score.is_finite() {
                return Err(Error::Training(format!("validation score is {score} after epoch {}", self.state.epoch + 1)));
            }
            let improved = self.state.best_val_mcd.map_or(true, |b| score <= b - self.config.min_improvement);
            if improved {
                self.state.best_val_mcd = Some(score);
                self.state.best_epoch = Some(self.state.epoch + 1);
                self.state.epochs_since_improvement = 0;
                self.best = Some((self.generator.params.clone(), self.generator.buffers.clone()));
            } else {
                self.state.epochs_since_improvement += 1;
            }
            self.state.epoch += 1;
            self.record(json!({
                "kind": "epoch",
                "epoch": self.state.epoch,
                "val_mcd": score,
                "best_val_mcd": self.state.best_val_mcd,
                "epochs_since_improvement": self.state.epochs_since_improvement,
                "generator_steps": self.state.generator_steps,
                "critic_steps": self.state.critic_steps,
            }));
            stopped_early = self.state.epochs_since_improvement >= self.config.patience;
            hooks.epoch_end(self)?;
        }
        if self.encoder.checksum() != encoder_sum {
            return Err(Error::Training("speech encoder weights changed during training".into()));
        }
        match (self.state.best_val_mcd, self.state.best_epoch) {
            (Some(best_val_mcd), Some(best_epoch)) => {
                Ok(TrainOutcome { epochs: self.state.epoch, best_val_mcd, best_epoch, stopped_early })
            }
            _ => Err(Error::Training("no epoch was completed".into())),
        }
    }

    fn record(&mut self, value: serde_json::Value) {
        self.log.push(value.to_string());
        self.state.log_lines = self.log.len();
    }

    fn record_time(&mut self, kind: &str, step: u64, started: Instant) {
        let secs = started.elapsed().as_secs_f64();
        self.timing.push(json!({"kind": kind, "step": step, "wall_secs": secs}).to_string());
    }

    fn diagnose(&self, e: Error, side: &str) -> Error {
        Error::Training(format!(
            "{side} step (generator step {}, critic step {}): {e}",
            self.state.generator_steps, self.state.critic_steps
        ))
    }

    fn check_grads(&self, grads: &[Tensor], side: &str) -> Result<()> {
        if grads.iter().all(|g| g.data().iter().all(|v| v.is_finite())) {
            Ok(())
        } else {
            Err(self.diagnose(Error::Training("non-finite gradient".into()), side))
        }
    }

    /// Full training state, resumable with [`Trainer::restore`]. `echo` is stored verbatim in the header.
    pub fn checkpoint(&self, echo: &serde_json::Value) -> Result<Container> {
        let header = json!({
            "kind": "train",
            "sample_rate": self.generator.sample_rate(),
            "generator": self.generator.config(),
            "critic": self.critic.config(),
            "trainer": self.config,
            "state": self.state,
            "rng": serde_json::to_value(&self.rng)?,
            "generator_adam_step": self.generator_opt.state.step,
            "critic_adam_step": self.critic_opt.state.step,
            "last_gp": self.last_gp,
            "speech_encoder": {"id": self.encoder.id(), "checksum": self.encoder.checksum()},
            "config": echo,
        });
        let mut c = Container::new(header);
        c.insert("generator", self.generator.params.clone());
        c.insert("generator.buffers", self.generator.buffers.clone());
        c.insert("critic", self.critic.params.clone());
        c.insert("generator.adam.m", self.generator_opt.state.first.clone());
        c.insert("generator.adam.v", self.generator_opt.state.second.clone());
        c.insert("critic.adam.m", self.critic_opt.state.first.clone());
        c.insert("critic.adam.v", self.critic_opt.state.second.clone());
        if let Some((params, buffers)) = &self.best {
            c.insert("best.generator", params.clone());
            c.insert("best.generator.buffers", buffers.clone());
        }
        Ok(c)
    }

    /// Generator-only checkpoint holding the best weights, for synthesis and evaluation.
    pub fn best_checkpoint(&self, echo: &serde_json::Value) -> Container {
        let best = self.best_generator();
        let mut c = Container::new(json!({
            "kind": "generator",
            "sample_rate": best.sample_rate(),
            "generator": best.config(),
            "state": self.state,
            "config": echo,
        }));
        c.insert("generator", best.params);
        c.insert("generator.buffers", best.buffers);
        c
    }

    /// Restores everything saved by [`Trainer::checkpoint`]; on error nothing is modified.
    pub fn restore(&mut self, c: &Container) -> Result<()> {
        let h = &c.header;
        let bad = |what: &str| Error::Checkpoint(format!("header field `{what}` is missing or malformed"));
        if h.get("kind").and_then(|k| k.as_str()) != Some("train") {
            return Err(Error::Checkpoint("not a training checkpoint".into()));
        }
        let sr = h.get("sample_rate").and_then(|v| v.as_u64()).ok_or_else(|| bad("sample_rate"))?;
        if sr != self.generator.sample_rate() as u64 {
            return Err(Error::Checkpoint(format!(
                "checkpoint sample rate {sr} Hz differs from configured {} Hz",
                self.generator.sample_rate()
            )));
        }
        let enc = h.pointer("/speech_encoder/checksum").and_then(|v| v.as_str()).ok_or_else(|| bad("speech_encoder"))?;
        if enc != self.encoder.checksum() {
            return Err(Error::Checkpoint("speech encoder weights differ from the checkpoint's".into()));
        }
        let state: TrainState = serde_json::from_value(h.get("state").cloned().ok_or_else(|| bad("state"))?)
            .map_err(|_| bad("state"))?;
        let rng: ChaCha8Rng =
            serde_json::from_value(h.get("rng").cloned().ok_or_else(|| bad("rng"))?).map_err(|_| bad("rng"))?;
        let g_step = h.get("generator_adam_step").and_then(|v| v.as_u64()).ok_or_else(|| bad("generator_adam_step"))?;
        let c_step = h.get("critic_adam_step").and_then(|v| v.as_u64()).ok_or_else(|| bad("critic_adam_step"))?;
        let last_gp = h.get("last_gp").and_then(|v| v.as_f64()).ok_or_else(|| bad("last_gp"))?;

        let load = |target: &TensorSet, name: &str| -> Result<TensorSet> {
            let mut out = target.clone();
            out.assign_from(c.require(name)?).map_err(|e| Error::Checkpoint(format!("`{name}`: {e}")))?;
            Ok(out)
        };
        let g_params = load(&self.generator.params, "generator")?;
        let g_buffers = load(&self.generator.buffers, "generator.buffers")?;
        let c_params = load(&self.critic.params, "critic")?;
        let g_m = load(&self.generator_opt.state.first, "generator.adam.m")?;
        let g_v = load(&self.generator_opt.state.second, "generator.adam.v")?;
        let c_m = load(&self.critic_opt.state.first, "critic.adam.m")?;
        let c_v = load(&self.critic_opt.state.second, "critic.adam.v")?;
        let best = match (c.set("best.generator"), c.set("best.generator.buffers")) {
            (Some(_), Some(_)) => {
                Some((load(&self.generator.params, "best.generator")?, load(&self.generator.buffers, "best.generator.buffers")?))
            }
            (None, None) => None,
            _ => return Err(Error::Checkpoint("best generator weights are incomplete".into())),
        };

        self.generator.params = g_params;
        self.generator.buffers = g_buffers;
        self.critic.params = c_params;
        self.generator_opt.state.first = g_m;
        self.generator_opt.state.second = g_v;
        self.generator_opt.state.step = g_step;
        self.critic_opt.state.first = c_m;
        self.critic_opt.state.second = c_v;
        self.critic_opt.state.step = c_step;
        self.rng = rng;
        self.state = state;
        self.best = best;
        self.last_gp = last_gp;
        Ok(())
    }
}

/// Rebuilds the generator stored in a training or generator checkpoint,
/// preferring the best validation weights when present.
pub fn load_generator(c: &Container) -> Result<Generator> {
    let h = &c.header;
    let sr = h
        .get("sample_rate")
        .and_then(|v| v.as_u64())
        .and_then(|v| u32::try_from(v).ok())
        .ok_or_else(|| Error::Checkpoint("header has no sample_rate".into()))?;
    let cfg: GeneratorConfig = serde_json::from_value(h.get("generator").cloned().unwrap_or_default())
        .map_err(|e| Error::Checkpoint(format!("generator config: {e}")))?;
    let mut g = Generator::new(&cfg, sr, 0)?;
    let (pname, bname) = match c.set("best.generator") {
        Some(_) => ("best.generator", "best.generator.buffers"),
        None => ("generator", "generator.buffers"),
    };
    let mut params = g.params.clone();
    params.assign_from(c.require(pname)?).map_err(|e| Error::Checkpoint(format!("`{pname}`: {e}")))?;
    let mut buffers = g.buffers.clone();
    buffers.assign_from(c.require(bname)?).map_err(|e| Error::Checkpoint(format!("`{bname}`: {e}")))?;
    g.params = params;
    g.buffers = buffers;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::speech_encoder::{LogMelEncoder, LogMelEncoderConfig};
    use crate::synthetic::toy_samples;

    fn tiny_generator() -> GeneratorConfig {
        GeneratorConfig {
            window: 3,
            encoder_channels: vec![2, 2, 4, 4, 4],
            gru_hidden: 6,
            decoder_channels: 4,
            ..GeneratorConfig::desk()
        }
    }

    fn tiny_critic() -> CriticConfig {
        CriticConfig { clip_seconds: 0.1, layers: 4, base_channels: 2, max_channels: 4, ..CriticConfig::desk() }
    }

    fn encoder() -> Box<dyn SpeechEncoder> {
        let cfg = LogMelEncoderConfig { channels: vec![8], ..LogMelEncoderConfig::default() };
        Box::new(LogMelEncoder::new(&cfg, 8000).unwrap())
    }

    fn trainer(cfg: TrainConfig) -> Trainer {
        Trainer::build(&tiny_generator(), &tiny_critic(), encoder(), cfg, 8000).unwrap()
    }

    fn data() -> Vec<VideoSample> {
        toy_samples(3, 4, 8000, 11).unwrap()
    }

    struct Constant(f64);

    impl TrainHooks for Constant {
        fn validate(&mut self, _: &Generator, _: &[VideoSample]) -> Result<f64> {
            Ok(self.0)
        }
    }

    #[test]
    fn critic_step_leaves_generator_alone() {
        let mut t = trainer(TrainConfig::default());
        let samples = data();
        let batch = Batch::new(&t.generator, &[&samples[0], &samples[1]]).unwrap();
        let fake = t.fake_audio(&batch);
        let (g_sum, c_sum, b_sum) = (t.generator.params.checksum(), t.critic.params.checksum(), t.generator.buffers.checksum());
        let stats = t.train_step_critic(&batch, &fake).unwrap();
        assert!(stats.gp >= 0.0);
        assert!((stats.total - (stats.adv + 10.0 * stats.gp)).abs() < 1e-12);
        assert_eq!(t.generator.params.checksum(), g_sum);
        assert_eq!(t.generator.buffers.checksum(), b_sum);
        assert_ne!(t.critic.params.checksum(), c_sum);
    }

    #[test]
    fn generator_step_leaves_critic_alone() {
        let mut t = trainer(TrainConfig::default());
        let samples = data();
        let batch = Batch::new(&t.generator, &[&samples[0], &samples[2]]).unwrap();
        let (g_sum, c_sum) = (t.generator.params.checksum(), t.critic.params.checksum());
        let enc_sum = t.encoder().checksum();
        let bundle = t.train_step_generator(&batch).unwrap();
        let w = LossWeights::default();
        assert!((bundle.total - bundle.recomputed_total(&w, false)).abs() < 1e-9 * bundle.total.abs().max(1.0));
        assert_eq!(t.critic.params.checksum(), c_sum);
        assert_ne!(t.generator.params.checksum(), g_sum);
        assert_eq!(t.encoder().checksum(), enc_sum);
        let record: serde_json::Value = serde_json::from_str(t.log.last().unwrap()).unwrap();
        for key in ["adv", "gp", "perceptual", "l1", "tv", "total", "step"] {
            assert!(record.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn constant_validation_stops_after_patience_plus_one() {
        for patience in [1, 3] {
            let mut t = trainer(TrainConfig { patience, batch_size: 2, ..TrainConfig::default() });
            let samples = data();
            let out = t.train(&samples[..2], &samples[2..], &mut Constant(5.0)).unwrap();
            assert_eq!(out.epochs, patience + 1);
            assert!(out.stopped_early);
            assert_eq!(out.best_epoch, 1);
            // Two clips of equal length make one batch per epoch.
            assert_eq!(t.state().generator_steps, out.epochs as u64);
            assert_eq!(t.state().critic_steps, 6 * t.state().generator_steps);
        }
    }

    #[test]
    fn empty_splits_are_rejected() {
        let mut t = trainer(TrainConfig::default());
        let samples = data();
        assert!(t.train(&[], &samples, &mut Constant(1.0)).is_err());
        assert!(t.train(&samples, &[], &mut Constant(1.0)).is_err());
        assert!(t.train(&samples, &samples, &mut Constant(f64::NAN)).is_err());
    }

    #[test]
    fn invalid_config_is_rejected() {
        assert!(TrainConfig { critic_updates_per_gen: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { patience: 0, ..TrainConfig::default() }.validate().is_err());
    }

    #[test]
    fn fixed_seed_gives_identical_logs() {
        let samples = data();
        let run = || {
            let mut t = trainer(TrainConfig { max_epochs: 2, batch_size: 2, ..TrainConfig::default() });
            t.train(&samples[..2], &samples[2..], &mut Constant(1.0)).unwrap();
            (t.log, t.generator.params.checksum())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let samples = data();
        let cfg = TrainConfig { max_epochs: 3, batch_size: 1, patience: 5, ..TrainConfig::default() };
        let mut full = trainer(cfg.clone());
        full.train(&samples[..2], &samples[2..], &mut Constant(2.0)).unwrap();

        let mut first = trainer(TrainConfig { max_epochs: 2, ..cfg.clone() });
        first.train(&samples[..2], &samples[2..], &mut Constant(2.0)).unwrap();
        let bytes = first.checkpoint(&json!({})).unwrap().to_bytes().unwrap();

        let mut resumed = trainer(TrainConfig { seed: 77, ..cfg });
        resumed.restore(&Container::from_bytes(&bytes).unwrap()).unwrap();
        resumed.log = first.log.clone();
        resumed.train(&samples[..2], &samples[2..], &mut Constant(2.0)).unwrap();
        assert_eq!(resumed.log, full.log);
        assert_eq!(resumed.generator.params.checksum(), full.generator.params.checksum());
        assert_eq!(resumed.critic.params.checksum(), full.critic.params.checksum());
    }

    #[test]
    fn bad_checkpoint_leaves_state_untouched() {
        let mut t = trainer(TrainConfig::default());
        let samples = data();
        let batch = Batch::new(&t.generator, &[&samples[0]]).unwrap();
        t.train_batch(&batch).unwrap();
        let mut c = t.checkpoint(&json!({})).unwrap();
        let mut other = trainer(TrainConfig::default());
        let before = (other.generator.params.checksum(), other.critic.params.checksum(), other.state().clone());
        // Wrong critic shapes: generator sets would load, the critic set must abort the whole restore.
        c.insert("critic", Critic::new(&CriticConfig { base_channels: 3, ..tiny_critic() }, 8000, 0).unwrap().params);
        assert!(other.restore(&c).is_err());
        assert_eq!((other.generator.params.checksum(), other.critic.params.checksum(), other.state().clone()), before);
    }

    #[test]
    fn generator_checkpoint_roundtrips() {
        let mut t = trainer(TrainConfig { max_epochs: 1, ..TrainConfig::default() });
        let samples = data();
        t.train(&samples[..2], &samples[2..], &mut Constant(1.0)).unwrap();
        let c = t.best_checkpoint(&json!({"note": 1}));
        let g = load_generator(&Container::from_bytes(&c.to_bytes().unwrap()).unwrap()).unwrap();
        assert_eq!(g.params.checksum(), t.best_generator().params.checksum());
        let a = g.generate(&samples[0].video).unwrap();
        assert_eq!(a, t.best_generator().generate(&samples[0].video).unwrap());
        assert_eq!(a.len(), 4 * 320);
    }

    #[test]
    fn short_audio_is_reflect_padded_for_the_critic() {
        // 4 frames = 1280 samples, while the critic takes 800: no padding. Two frames need it.
        let mut t = trainer(TrainConfig::default());
        let samples = toy_samples(1, 2, 8000, 3).unwrap();
        let batch = Batch::new(&t.generator, &[&samples[0]]).unwrap();
        let fake = t.fake_audio(&batch);
        assert!(t.train_step_critic(&batch, &fake).is_ok());
    }
}
