//! L2 reconstruction loss, Adam and the minibatch update.

use alloc::format;
use core::ops::ControlFlow;

use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{SampleTuple, TupleSampler};
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::model::network::flush_subnormal;
use crate::model::{Mode, ModelParameters, Network};

/// Optimizer and loop settings. The dropout keep probability belongs to the
/// model configuration so it travels with every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_steps: u64,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Steps between checkpoints; 0 writes only the final one.
    pub checkpoint_interval: u64,
    pub seed: u64,
    /// Largest displacement sampled for training tuples.
    pub max_displacement_ms: f64,
    /// Start a fresh network's output biases at the mean training intensity
    /// (see [`Network::set_output_prior`]).
    pub output_prior: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            max_steps: 500_000,
            learning_rate: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            checkpoint_interval: 1000,
            seed: 0,
            max_displacement_ms: 200.0,
            output_prior: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!("learning rate must be non-negative, got {}", self.learning_rate)));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.adam_epsilon.is_finite() && self.adam_epsilon > 0.0) {
            return Err(Error::Config(format!("adam_epsilon must be positive, got {}", self.adam_epsilon)));
        }
        if !(self.max_displacement_ms.is_finite() && self.max_displacement_ms > 0.0) {
            return Err(Error::Config(format!(
                "max displacement must be positive, got {}",
                self.max_displacement_ms
            )));
        }
        Ok(())
    }
}

/// Mean squared pixel difference.
pub fn l2_loss(predicted: &Frame, target: &Frame) -> Result<f64> {
    if predicted.resolution() != target.resolution() {
        return Err(Error::Shape(format!(
            "cannot compare a {:?} frame with a {:?} frame",
            predicted.resolution(),
            target.resolution()
        )));
    }
    let sum: f64 = predicted
        .pixels()
        .iter()
        .zip(target.pixels())
        .map(|(&a, &b)| {
            let d = f64::from(a) - f64::from(b);
            d * d
        })
        .sum();
    Ok(sum / predicted.pixels().len() as f64)
}

/// Running statistics of the minibatch loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub last: f64,
    /// Exponential moving average with weight [`LossStats::SMOOTHING`] on the newest value.
    pub average: f64,
    pub best: f64,
}

impl LossStats {
    pub const SMOOTHING: f64 = 0.1;

    fn record(&mut self, loss: f64, first: bool) {
        self.last = loss;
        self.average = if first { loss } else { self.average + Self::SMOOTHING * (loss - self.average) };
        self.best = if first { loss } else { self.best.min(loss) };
    }
}

impl Default for LossStats {
    fn default() -> Self {
        Self { last: f64::NAN, average: f64::NAN, best: f64::NAN }
    }
}

/// Mean pixel intensity over every frame of the sampler's segments.
pub fn mean_intensity(sampler: &TupleSampler<'_>) -> f64 {
    let (mut sum, mut count) = (0.0f64, 0usize);
    for segment in sampler.segments() {
        let video = sampler.corpus().get(&segment.video_id).expect("checked by the sampler");
        for frame in &video.frames[segment.start_frame..=segment.end_frame] {
            sum += frame.pixels().iter().map(|&p| f64::from(p)).sum::<f64>();
            count += frame.pixels().len();
        }
    }
    sum / count as f64
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Debug, Clone)]
pub struct TrainState<T: Float> {
    step: u64,
    network: Network<T>,
    first_moment: ModelParameters<T>,
    second_moment: ModelParameters<T>,
    rng: ChaCha8Rng,
    loss: LossStats,
}

impl<T: Float> TrainState<T> {
    /// Step 0 with zero moments. `seed` drives batch sampling and dropout.
    pub fn new(network: Network<T>, seed: u64) -> Self {
        let zeros = network.params().zeros_like();
        Self {
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
            network,
            rng: ChaCha8Rng::seed_from_u64(seed),
            loss: LossStats::default(),
        }
    }

    /// Reassembles a saved state, checking that both moments match the
    /// parameter shapes.
    pub fn from_parts(
        step: u64,
        network: Network<T>,
        first_moment: ModelParameters<T>,
        second_moment: ModelParameters<T>,
        rng: ChaCha8Rng,
        loss: LossStats,
    ) -> Result<Self> {
        first_moment.audit(network.architecture())?;
        second_moment.audit(network.architecture())?;
        Ok(Self { step, network, first_moment, second_moment, rng, loss })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn network(&self) -> &Network<T> {
        &self.network
    }

    pub fn into_network(self) -> Network<T> {
        self.network
    }

    pub fn moments(&self) -> (&ModelParameters<T>, &ModelParameters<T>) {
        (&self.first_moment, &self.second_moment)
    }

    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }

    pub fn loss(&self) -> LossStats {
        self.loss
    }

    /// One Adam update from the mean gradient over `batch`, dropout active.
    /// Returns the batch loss. On a non-finite loss or gradient the state
    /// is left untouched.
    pub fn train_step(&mut self, batch: &[SampleTuple], config: &TrainConfig) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Config("training batch is empty".into()));
        }
        let timed = self.network.has_time_branch();
        let mut total = self.network.params().zeros_like();
        let mut loss_sum = 0.0;
        for tuple in batch {
            let dt = timed.then_some(tuple.dt);
            let (loss, grad) =
                self.network.loss_and_gradient(&tuple.input_frame, dt, &tuple.target_frame, Mode::Train(&mut self.rng))?;
            loss_sum += loss.to_f64().unwrap_or(f64::NAN);
            total.add_scaled(T::one(), &grad);
        }
        let next_step = self.step + 1;
        let loss = loss_sum / batch.len() as f64;
        if !loss.is_finite() {
            return Err(Error::Divergence { step: next_step, reason: format!("batch loss is {loss}") });
        }
        if !total.all_finite() {
            return Err(Error::Divergence { step: next_step, reason: "non-finite gradient".into() });
        }
        total.scale(cast(1.0 / batch.len() as f64));
        self.adam_update(&total, config, next_step);
        self.step = next_step;
        self.loss.record(loss, next_step == 1);
        Ok(loss)
    }

    fn adam_update(&mut self, grad: &ModelParameters<T>, config: &TrainConfig, t: u64) {
        let (b1, b2) = (config.adam_beta1, config.adam_beta2);
        let t = t.min(i32::MAX as u64) as i32;
        let correction1 = 1.0 - Float::powi(b1, t);
        let correction2 = 1.0 - Float::powi(b2, t);
        // p -= lr * (m / c1) / (sqrt(v / c2) + eps)
        let step_size: T = cast(config.learning_rate / correction1);
        let inv_c2: T = cast(1.0 / correction2);
        let eps: T = cast(config.adam_epsilon);
        let (b1t, b2t): (T, T) = (cast(b1), cast(b2));
        let (one_b1, one_b2): (T, T) = (cast(1.0 - b1), cast(1.0 - b2));

        let params = self.network.params_mut();
        let tensors = params
            .tensors_mut()
            .zip(self.first_moment.tensors_mut())
            .zip(self.second_moment.tensors_mut())
            .zip(grad.tensors());
        for (((p, m), v), g) in tensors {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = b1t * m[i] + one_b1 * gi;
                v[i] = b2t * v[i] + one_b2 * gi * gi;
                p[i] = p[i] - step_size * m[i] / ((v[i] * inv_c2).sqrt() + eps);
            }
            flush_subnormal(m);
            flush_subnormal(v);
        }
    }

    /// Draws minibatches from `sampler` with the state's generator and steps
    /// until `config.max_steps` or until `hook` breaks. `hook` sees the state
    /// after every completed step.
    pub fn run<B>(
        &mut self,
        sampler: &TupleSampler<'_>,
        config: &TrainConfig,
        mut hook: impl FnMut(&Self) -> ControlFlow<B>,
    ) -> Result<Option<B>> {
        config.validate()?;
        while self.step < config.max_steps {
            let batch = sampler.draw_batch(config.batch_size, &mut self.rng);
            self.train_step(&batch, config)?;
            if let ControlFlow::Break(b) = hook(self) {
                return Ok(Some(b));
            }
        }
        Ok(None)
    }
}

fn cast<T: Float>(x: f64) -> T {
    T::from(x).expect("finite constant")
}
