//! Adversarial + L1 objective, Adam, the alternating update and the
//! training loop with its on-disk artifacts.

mod adam;
mod checkpoint;
mod run;

use serde::{Deserialize, Serialize};

use crate::autograd::{backpropagate, bce_with_logits_value, l1_value, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::nn::{
    discriminator_forward, discriminator_forward_on, generator_forward, generator_forward_on,
    init_params, DiscriminatorConfig, GeneratorConfig, Grad, Mode,
};
use crate::tensor::{Real, Tensor};

pub use adam::{adam_step, AdamState};
pub use checkpoint::{decode_tensors, encode_tensors, load_checkpoint, save_checkpoint};
pub use run::{
    format_sig6, held_out_ssim, load_dataset, prepare_volume, stack_batch, to_unit_range,
    train_loop, Pair, RunSummary, LOSSES_HEADER,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the L1 term in the generator objective.
    pub lambda: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub steps: u64,
    pub batch_size: usize,
    pub seed: u64,
    /// Steps between held-out SSIM evaluations; 0 disables them.
    pub eval_interval: u64,
    /// Steps between checkpoints; 0 writes only the final one.
    pub checkpoint_interval: u64,
    /// Also fixes the volume side S.
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 100.0,
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
            steps: 2000,
            batch_size: 1,
            seed: 0,
            eval_interval: 200,
            checkpoint_interval: 1000,
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
        }
    }
}

impl TrainConfig {
    /// The desk-scale setup: S=16, L=3, c0=8, M=3, d0=8.
    pub fn test_scale() -> Self {
        Self {
            generator: GeneratorConfig::test_scale(),
            discriminator: DiscriminatorConfig::test_scale(),
            ..Self::default()
        }
    }

    pub fn side(&self) -> usize {
        self.generator.side
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(format!("{name} must lie in [0,1), got {b}")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config("epsilon must be > 0"));
        }
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::config("steps and batch_size must be >= 1"));
        }
        self.generator.validate()?;
        self.discriminator.validate_for_side(self.side())
    }
}

/// Losses of one training step. `ssim` is present at evaluation steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub d_loss: f64,
    pub g_gan: f64,
    pub g_l1: f64,
    pub g_total: f64,
    pub ssim: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorLosses {
    pub gan: f64,
    pub l1: f64,
    pub total: f64,
}

/// Mean of `max(z,0) - z*t + ln(1 + e^{-|z|})` over all logits.
pub fn bce_with_logits<T: Real>(logits: &Tensor<T>, target: f64) -> f64 {
    bce_with_logits_value(logits, target)
}

/// Mean absolute difference.
pub fn l1_loss<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    l1_value(a, b)
}

/// `½ [bce(real, 1) + bce(fake, 0)]` from the two logit maps.
pub fn discriminator_objective<T: Real>(real_logits: &Tensor<T>, fake_logits: &Tensor<T>) -> f64 {
    0.5 * (bce_with_logits(real_logits, 1.0) + bce_with_logits(fake_logits, 0.0))
}

/// `bce(fake_logits, 1)`, `l1(fake, real)` and `gan + lambda * l1`.
pub fn generator_objective<T: Real>(
    fake_logits: &Tensor<T>,
    fake: &Tensor<T>,
    real: &Tensor<T>,
    lambda: f64,
) -> Result<GeneratorLosses> {
    let gan = bce_with_logits(fake_logits, 1.0);
    let l1 = l1_loss(fake, real)?;
    Ok(GeneratorLosses {
        gan,
        l1,
        total: gan + lambda * l1,
    })
}

/// Discriminator loss on `(us, mri)` versus `(us, G(us))`.
pub fn discriminator_loss(
    params_g: &ParamStore,
    params_d: &ParamStore,
    us: &Tensor,
    mri: &Tensor,
    config: &TrainConfig,
    mode: Mode,
) -> Result<f64> {
    let fake = generator_forward(params_g, us, &config.generator, mode)?;
    let real_logits = discriminator_forward(params_d, us, mri, &config.discriminator)?;
    let fake_logits = discriminator_forward(params_d, us, &fake, &config.discriminator)?;
    Ok(discriminator_objective(&real_logits, &fake_logits))
}

pub fn generator_loss(
    params_g: &ParamStore,
    params_d: &ParamStore,
    us: &Tensor,
    mri: &Tensor,
    config: &TrainConfig,
    mode: Mode,
) -> Result<GeneratorLosses> {
    let fake = generator_forward(params_g, us, &config.generator, mode)?;
    let fake_logits = discriminator_forward(params_d, us, &fake, &config.discriminator)?;
    generator_objective(&fake_logits, &fake, mri, config.lambda)
}

/// Parameters and optimizer state of both networks.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub generator: ParamStore,
    pub discriminator: ParamStore,
    pub adam_g: AdamState,
    pub adam_d: AdamState,
    /// Completed training steps.
    pub step: u64,
}

impl TrainState {
    /// Fresh networks: G from `seed`, D from `seed + 1`.
    pub fn init(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let generator = init_params(config.generator, config.seed)?;
        let discriminator = init_params(config.discriminator, config.seed.wrapping_add(1))?;
        Ok(Self {
            adam_g: AdamState::new(&generator),
            adam_d: AdamState::new(&discriminator),
            generator,
            discriminator,
            step: 0,
        })
    }
}

/// Seed of the dropout masks used at training step `step`.
pub fn dropout_seed(seed: u64, step: u64) -> u64 {
    seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn finite(term: &str, step: u64, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("{term} = {v} at step {step}")))
    }
}

/// One alternating update on a batch of `[N, 1, S, S, S]` tensors in the
/// network range `[-1, 1]`.
///
/// A single generator pass (training mode) feeds both halves. The
/// discriminator is updated first on `discriminator_loss` with the
/// generated volume detached; the generator is then updated on
/// `g_gan + lambda * g_l1` through the updated, frozen discriminator.
/// `d_loss` is measured before the discriminator update, the generator
/// terms after it.
pub fn train_step(
    state: &mut TrainState,
    us: &Tensor,
    mri: &Tensor,
    config: &TrainConfig,
) -> Result<LossRecord> {
    if us.shape() != mri.shape() {
        return Err(Error::shape(format!(
            "batch shapes {:?} and {:?} differ",
            us.shape(),
            mri.shape()
        )));
    }
    let step = state.step + 1;
    let mode = Mode::Train {
        seed: dropout_seed(config.seed, step),
    };
    let dcfg = &config.discriminator;

    let mut tape = Tape::new();
    let us_n = tape.constant(us.clone());
    let mri_n = tape.constant(mri.clone());
    let fake =
        generator_forward_on(&mut tape, &state.generator, Grad::Track, us_n, &config.generator, mode)?
            .output;

    let detached = tape.constant(tape.value(fake)?.clone());
    let real_logits =
        discriminator_forward_on(&mut tape, &state.discriminator, Grad::Track, us_n, mri_n, dcfg)?;
    let fake_logits =
        discriminator_forward_on(&mut tape, &state.discriminator, Grad::Track, us_n, detached, dcfg)?;
    let d_loss = finite(
        "d_loss",
        step,
        discriminator_objective(tape.value(real_logits)?, tape.value(fake_logits)?),
    )?;
    let real_term = tape.bce_with_logits(real_logits, 1.0)?;
    let fake_term = tape.bce_with_logits(fake_logits, 0.0)?;
    let sum = tape.add(real_term, fake_term)?;
    let d_node = tape.scale(sum, 0.5)?;
    state.discriminator.zero_grads();
    backpropagate(&tape, d_node, &mut state.discriminator)?;
    adam_step(
        &mut state.discriminator,
        &mut state.adam_d,
        config.learning_rate,
        config.beta1,
        config.beta2,
        config.epsilon,
    )?;
    state.discriminator.zero_grads();

    let judged =
        discriminator_forward_on(&mut tape, &state.discriminator, Grad::Frozen, us_n, fake, dcfg)?;
    let losses = generator_objective(
        tape.value(judged)?,
        tape.value(fake)?,
        tape.value(mri_n)?,
        config.lambda,
    )?;
    finite("g_gan", step, losses.gan)?;
    finite("g_l1", step, losses.l1)?;
    finite("g_total", step, losses.total)?;
    let gan_node = tape.bce_with_logits(judged, 1.0)?;
    let l1_node = tape.l1(fake, mri_n)?;
    let weighted = tape.scale(l1_node, config.lambda)?;
    let g_node = tape.add(gan_node, weighted)?;
    state.generator.zero_grads();
    backpropagate(&tape, g_node, &mut state.generator)?;
    adam_step(
        &mut state.generator,
        &mut state.adam_g,
        config.learning_rate,
        config.beta1,
        config.beta2,
        config.epsilon,
    )?;
    state.generator.zero_grads();

    state.step = step;
    Ok(LossRecord {
        step,
        d_loss,
        g_gan: losses.gan,
        g_l1: losses.l1,
        g_total: losses.total,
        ssim: None,
    })
}
