use ndarray::{Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::lstm::{backward_scaled, batch_loss_sum, forward_batch};
use super::{adam_step, AdamConfig, AdamState, LossMode, LstmModel, ParamSet, INPUT_CHANNELS};
use crate::dataset::{epoch_batches, DEFAULT_BATCH_SIZE, DEFAULT_TIMESTEPS};
use crate::error::{Error, Result};
use crate::par::{self, Execution};

/// Anything that can hand out fixed-length training windows.
pub trait WindowSource: Sync {
    fn len(&self) -> usize;
    fn timesteps(&self) -> usize;
    /// Inputs (timesteps, 6) and per-timestep targets of window `idx`.
    fn window(&self, idx: usize) -> (ArrayView2<'_, f64>, &[f64]);

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub timesteps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub training_steps: u64,
    pub hidden_sizes: (usize, usize),
    pub dropout_rate: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub loss_mode: LossMode,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Windows per forward/backward work unit. Gradients are summed over
    /// chunks in chunk order, so results do not depend on thread count.
    pub chunk_size: usize,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            timesteps: DEFAULT_TIMESTEPS,
            batch_size: DEFAULT_BATCH_SIZE,
            learning_rate: 0.01,
            training_steps: 100,
            hidden_sizes: (64, 64),
            dropout_rate: 0.2,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            loss_mode: LossMode::FullSequence,
            clip_norm: Some(5.0),
            chunk_size: 64,
            execution: Execution::Parallel,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.training_steps < 1 {
            return bad("training_steps must be at least 1".into());
        }
        if self.timesteps < 1 || self.batch_size < 1 || self.chunk_size < 1 {
            return bad("timesteps, batch_size and chunk_size must be positive".into());
        }
        if self.hidden_sizes.0 < 1 || self.hidden_sizes.1 < 1 {
            return bad("hidden sizes must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate must lie in [0, 1), got {}", self.dropout_rate));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return bad(format!("clip_norm must be positive, got {c}"));
            }
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn new_model(&self) -> Result<LstmModel> {
        LstmModel::new(INPUT_CHANNELS, self.hidden_sizes, self.dropout_rate, self.seed)
    }
}

/// Optimizer loop state. Minibatch order is a function of `(seed, epoch)`
/// and dropout masks of `(seed, step, chunk)`, so a trainer rebuilt from a
/// checkpoint continues exactly where the original left off.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: LstmModel,
    pub adam: AdamState,
    pub config: TrainConfig,
    pub loss_trace: Vec<f64>,
    epoch_cache: Option<(u64, Vec<Vec<usize>>)>,
}

impl Trainer {
    pub fn new(model: LstmModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = AdamState::new(&model.params);
        Ok(Trainer {
            model,
            adam,
            config,
            loss_trace: Vec::new(),
            epoch_cache: None,
        })
    }

    pub fn resume(model: LstmModel, adam: AdamState, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if !adam.m.same_shape(&model.params) {
            return Err(Error::ShapeMismatch("Adam state does not match the model".into()));
        }
        Ok(Trainer {
            model,
            adam,
            config,
            loss_trace: Vec::new(),
            epoch_cache: None,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.adam.step
    }

    fn batch_for_step<S: WindowSource + ?Sized>(&mut self, src: &S, step: u64) -> Vec<usize> {
        let n = src.len();
        let bs = self.config.batch_size;
        let per_epoch = n.div_ceil(bs) as u64;
        let epoch = step / per_epoch;
        let within = (step % per_epoch) as usize;
        if self.epoch_cache.as_ref().map(|(e, _)| *e) != Some(epoch) {
            self.epoch_cache = Some((epoch, epoch_batches(n, bs, self.config.seed, epoch)));
        }
        self.epoch_cache.as_ref().expect("filled above").1[within].clone()
    }

    /// Mean loss and gradient over `batch`, computed chunk by chunk.
    pub fn loss_and_gradient<S: WindowSource + ?Sized>(
        &self,
        src: &S,
        batch: &[usize],
        step: u64,
    ) -> Result<(f64, ParamSet)> {
        let cfg = &self.config;
        let t = src.timesteps();
        if t == 0 {
            return Err(Error::EmptyTrainSet);
        }
        let chunks: Vec<&[usize]> = batch.chunks(cfg.chunk_size).collect();
        let scale = 1.0 / batch.len() as f64;
        let model = &self.model;
        let results = par::map_range(cfg.execution, chunks.len(), |ci| -> Result<(f64, ParamSet)> {
            let idx = chunks[ci];
            let mut inputs = Array3::<f64>::zeros((t, idx.len(), INPUT_CHANNELS));
            let mut targets = Array2::<f64>::zeros((t, idx.len()));
            for (b, &w) in idx.iter().enumerate() {
                let (x, y) = src.window(w);
                inputs.index_axis_mut(Axis(1), b).assign(&x);
                targets.column_mut(b).assign(&ndarray::ArrayView1::from(y));
            }
            let mut rng = crate::rng::stream(cfg.seed, &[0xd40, step, ci as u64]);
            let cache = forward_batch(model, inputs.view(), Some(&mut rng))?;
            let loss = batch_loss_sum(cache.outputs(), targets.view(), cfg.loss_mode)?;
            let grads = backward_scaled(model, &cache, targets.view(), cfg.loss_mode, scale)?;
            Ok((loss, grads))
        });
        let mut total = 0.0;
        let mut grads = self.model.params.zeros_like();
        for r in results {
            let (l, g) = r?;
            total += l;
            grads.add_assign(&g);
        }
        Ok((total * scale, grads))
    }

    /// One optimizer update. Returns the minibatch loss before the update.
    pub fn step<S: WindowSource + ?Sized>(&mut self, src: &S) -> Result<f64> {
        if src.is_empty() {
            return Err(Error::EmptyTrainSet);
        }
        if src.timesteps() != self.config.timesteps {
            return Err(Error::ShapeMismatch(format!(
                "windows of {} timesteps for a config of {}",
                src.timesteps(),
                self.config.timesteps
            )));
        }
        let step = self.adam.step;
        let batch = self.batch_for_step(src, step);
        let (loss, mut grads) = match self.loss_and_gradient(src, &batch, step) {
            Err(e) if e.is_divergence() => return Err(Error::DivergedTraining { step }),
            other => other?,
        };
        if !loss.is_finite() || !grads.all_finite() {
            return Err(Error::DivergedTraining { step });
        }
        if let Some(limit) = self.config.clip_norm {
            let norm = grads.norm();
            if norm > limit {
                grads.scale(limit / norm);
            }
        }
        adam_step(&mut self.model.params, &grads, &mut self.adam, &self.config.adam())?;
        if !self.model.params.all_finite() {
            return Err(Error::DivergedTraining { step });
        }
        self.loss_trace.push(loss);
        Ok(loss)
    }

    /// Run until the optimizer has taken `config.training_steps` updates.
    pub fn run<S: WindowSource + ?Sized>(&mut self, src: &S) -> Result<()> {
        while self.adam.step < self.config.training_steps {
            let loss = self.step(src)?;
            let s = self.adam.step;
            if s % 50 == 0 || s == self.config.training_steps {
                log::debug!("step {s}: loss {loss:.5}");
            }
        }
        Ok(())
    }
}

/// Train `model` for `config.training_steps` updates; returns the model and
/// the per-step minibatch loss.
pub fn train<S: WindowSource + ?Sized>(model: LstmModel, src: &S, config: &TrainConfig) -> Result<(LstmModel, Vec<f64>)> {
    let mut trainer = Trainer::new(model, config.clone())?;
    trainer.run(src)?;
    Ok((trainer.model, trainer.loss_trace))
}
