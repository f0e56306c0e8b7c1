//! The two networks: a 3D UNET generator and a 3D patch discriminator.
//!
//! # Parameter names
//!
//! Generator (`L` = depth, `ch(i) = min(c0 * 2^i, c_max)`):
//!
//! | name | shape |
//! |------|-------|
//! | `gen.enc.{i}.weight` | `[ch(i), in, 4, 4, 4]`, `in = 1` for `i = 0`, else `ch(i-1)` |
//! | `gen.enc.{i}.bias` | `[ch(i)]` |
//! | `gen.enc.{i}.norm.gamma`, `.norm.beta` | `[ch(i)]`, only for `i >= 1` |
//! | `gen.dec.{j}.weight` | `[in, out, 4, 4, 4]` (transposed layout) |
//! | `gen.dec.{j}.bias`, `.norm.gamma`, `.norm.beta` | `[out]` |
//! | `gen.out.weight` | `[1, c0, 3, 3, 3]` |
//! | `gen.out.bias` | `[1]` |
//!
//! Decoder block `j` (0 = innermost) reads the bottleneck when `j = 0`,
//! otherwise `concat(dec[j-1], enc[L-1-j])`, and emits `ch(L-2-j)` channels
//! (`c0` for the outermost block) so its output matches the skip it is
//! concatenated with next.
//!
//! Discriminator (`M` stride-2 layers, `d(i) = d0 * 2^i`):
//!
//! | name | shape |
//! |------|-------|
//! | `disc.enc.{i}.weight` | `[d(i), in, 4, 4, 4]`, `in = 2` for `i = 0` |
//! | `disc.enc.{i}.bias` | `[d(i)]` |
//! | `disc.enc.{i}.norm.gamma`, `.norm.beta` | `[d(i)]`, only for `i >= 1` |
//! | `disc.out.weight` | `[1, d(M-1), 3, 3, 3]` |
//! | `disc.out.bias` | `[1]` |

mod discriminator;
mod generator;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autograd::{NodeId, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::tensor::{ConvSpec, Tensor};

pub use discriminator::{discriminator_forward, discriminator_forward_on, scalar_probability};
pub use generator::{generator_forward, generator_forward_on, GeneratorTrace};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const NORM_EPSILON: f64 = 1e-5;
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    /// Input side length S (cubic volumes).
    pub side: usize,
    /// Number of stride-2 downsamplings L.
    pub depth: usize,
    pub base_channels: usize,
    pub max_channels: usize,
    /// Dropout rate in the innermost `min(3, L)` decoder blocks.
    pub dropout: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            side: 64,
            depth: 4,
            base_channels: 32,
            max_channels: 256,
            dropout: 0.5,
        }
    }
}

impl GeneratorConfig {
    /// S=16, L=3, c0=8, c_max=32.
    pub fn test_scale() -> Self {
        Self {
            side: 16,
            depth: 3,
            base_channels: 8,
            max_channels: 32,
            dropout: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::config("generator depth must be >= 1"));
        }
        if self.side < 8 || !self.side.is_power_of_two() {
            return Err(Error::config(format!(
                "generator side must be a power of two >= 8, got {}",
                self.side
            )));
        }
        if self.side >> self.depth < 2 {
            return Err(Error::config(format!(
                "side {} with depth {} leaves a bottleneck smaller than 2",
                self.side, self.depth
            )));
        }
        if self.base_channels == 0 || self.max_channels < self.base_channels {
            return Err(Error::config(format!(
                "need 1 <= base_channels <= max_channels, got {} and {}",
                self.base_channels, self.max_channels
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!(
                "dropout must lie in [0,1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    /// Channels produced by encoder block `i`.
    pub fn enc_channels(&self, i: usize) -> usize {
        (self.base_channels << i).min(self.max_channels)
    }

    fn dec_in_channels(&self, j: usize) -> usize {
        let l = self.depth;
        if j == 0 {
            self.enc_channels(l - 1)
        } else {
            self.dec_out_channels(j - 1) + self.enc_channels(l - 1 - j)
        }
    }

    fn dec_out_channels(&self, j: usize) -> usize {
        let l = self.depth;
        if j + 1 == l {
            self.base_channels
        } else {
            self.enc_channels(l - 2 - j)
        }
    }

    /// Number of decoder blocks that apply dropout in training mode.
    pub fn dropout_blocks(&self) -> usize {
        self.depth.min(3)
    }

    pub(crate) fn layers(&self) -> Vec<Layer> {
        let mut layers = Vec::new();
        for i in 0..self.depth {
            let cin = if i == 0 { 1 } else { self.enc_channels(i - 1) };
            layers.push(Layer {
                prefix: format!("gen.enc.{i}"),
                kind: LayerKind::Conv,
                spec: ConvSpec::cubic(cin, self.enc_channels(i), 4, 2, 1),
                norm: i > 0,
            });
        }
        for j in 0..self.depth {
            layers.push(Layer {
                prefix: format!("gen.dec.{j}"),
                kind: LayerKind::ConvTranspose,
                spec: ConvSpec::cubic(self.dec_in_channels(j), self.dec_out_channels(j), 4, 2, 1),
                norm: true,
            });
        }
        layers.push(Layer {
            prefix: "gen.out".into(),
            kind: LayerKind::Conv,
            spec: ConvSpec::cubic(self.base_channels, 1, 3, 1, 1),
            norm: false,
        });
        layers
    }

    /// Recovers the architecture from a parameter set (as stored in a
    /// checkpoint). `side` and `dropout` are not recorded in weights and are
    /// taken from the arguments.
    pub fn infer(params: &ParamStore, side: usize, dropout: f64) -> Result<Self> {
        let depth = (0..)
            .take_while(|i| params.contains(&format!("gen.enc.{i}.weight")))
            .count();
        if depth == 0 {
            return Err(Error::config("parameter set holds no generator weights"));
        }
        let base_channels = params.get("gen.enc.0.weight")?.shape()[0];
        let max_channels = (0..depth)
            .map(|i| params.get(&format!("gen.enc.{i}.weight")).map(|t| t.shape()[0]))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .max()
            .unwrap_or(base_channels);
        let config = Self {
            side,
            depth,
            base_channels,
            max_channels,
            dropout,
        };
        config.validate()?;
        for layer in config.layers() {
            let w = params.get(&format!("{}.weight", layer.prefix))?;
            if w.shape() != layer.weight_shape() {
                return Err(Error::config(format!(
                    "{}.weight has shape {:?}, architecture expects {:?}",
                    layer.prefix,
                    w.shape(),
                    layer.weight_shape()
                )));
            }
        }
        Ok(config)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    /// Number of stride-2 layers M.
    pub layers: usize,
    pub base_channels: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            layers: 3,
            base_channels: 32,
        }
    }
}

impl DiscriminatorConfig {
    /// M=3, d0=8.
    pub fn test_scale() -> Self {
        Self {
            layers: 3,
            base_channels: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.base_channels == 0 {
            return Err(Error::config(
                "discriminator needs at least one layer and one base channel",
            ));
        }
        Ok(())
    }

    pub fn validate_for_side(&self, side: usize) -> Result<()> {
        self.validate()?;
        if side % (1 << self.layers) != 0 {
            return Err(Error::config(format!(
                "side {side} is not divisible by 2^{}",
                self.layers
            )));
        }
        Ok(())
    }

    fn channels(&self, i: usize) -> usize {
        self.base_channels << i
    }

    pub(crate) fn layers(&self) -> Vec<Layer> {
        let mut layers = Vec::new();
        for i in 0..self.layers {
            let cin = if i == 0 { 2 } else { self.channels(i - 1) };
            layers.push(Layer {
                prefix: format!("disc.enc.{i}"),
                kind: LayerKind::Conv,
                spec: ConvSpec::cubic(cin, self.channels(i), 4, 2, 1),
                norm: i > 0,
            });
        }
        layers.push(Layer {
            prefix: "disc.out".into(),
            kind: LayerKind::Conv,
            spec: ConvSpec::cubic(self.channels(self.layers - 1), 1, 3, 1, 1),
            norm: false,
        });
        layers
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum LayerKind {
    Conv,
    ConvTranspose,
}

#[derive(Debug, Clone)]
pub(crate) struct Layer {
    pub prefix: String,
    pub kind: LayerKind,
    pub spec: ConvSpec,
    pub norm: bool,
}

impl Layer {
    fn weight_shape(&self) -> Vec<usize> {
        let (a, b) = match self.kind {
            LayerKind::Conv => (self.spec.out_channels, self.spec.in_channels),
            LayerKind::ConvTranspose => (self.spec.in_channels, self.spec.out_channels),
        };
        let [kd, kh, kw] = self.spec.kernel;
        vec![a, b, kd, kh, kw]
    }
}

/// Whether network parameters are recorded as trainable leaves or read as
/// constants (for example the discriminator during a generator update).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grad {
    Track,
    Frozen,
}

/// Generator evaluation mode. Training enables dropout with masks drawn
/// from `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train { seed: u64 },
    Eval,
}

/// Either network's configuration, for [`init_params`].
#[derive(Debug, Clone, Copy)]
pub enum NetConfig {
    Generator(GeneratorConfig),
    Discriminator(DiscriminatorConfig),
}

impl From<GeneratorConfig> for NetConfig {
    fn from(c: GeneratorConfig) -> Self {
        NetConfig::Generator(c)
    }
}

impl From<DiscriminatorConfig> for NetConfig {
    fn from(c: DiscriminatorConfig) -> Self {
        NetConfig::Discriminator(c)
    }
}

/// Initial parameters: weights ~ Normal(0, 0.02) drawn from ChaCha8 seeded
/// with `seed`, in layer order and row-major within each weight; biases 0;
/// norm gamma 1, beta 0.
pub fn init_params(config: impl Into<NetConfig>, seed: u64) -> Result<ParamStore> {
    let layers = match config.into() {
        NetConfig::Generator(c) => {
            c.validate()?;
            c.layers()
        }
        NetConfig::Discriminator(c) => {
            c.validate()?;
            c.layers()
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f64, INIT_STD).expect("valid std");
    let mut params = ParamStore::new();
    for layer in &layers {
        let shape = layer.weight_shape();
        let w = Tensor::from_fn(&shape, |_| normal.sample(&mut rng) as f32)?;
        let cout = layer.spec.out_channels;
        params.insert(format!("{}.weight", layer.prefix), w)?;
        params.insert(format!("{}.bias", layer.prefix), Tensor::zeros(&[cout])?)?;
        if layer.norm {
            params.insert(
                format!("{}.norm.gamma", layer.prefix),
                Tensor::full(&[cout], 1.0)?,
            )?;
            params.insert(format!("{}.norm.beta", layer.prefix), Tensor::zeros(&[cout])?)?;
        }
    }
    Ok(params)
}

/// Records one conv / transposed-conv layer, optionally followed by
/// instance norm.
pub(crate) fn record_layer<T: crate::tensor::Real>(
    tape: &mut Tape<T>,
    params: &ParamStore<T>,
    grad: Grad,
    layer: &Layer,
    input: NodeId,
) -> Result<NodeId> {
    let leaf = |tape: &mut Tape<T>, suffix: &str| {
        let name = format!("{}.{suffix}", layer.prefix);
        match grad {
            Grad::Track => tape.param(&name, params),
            Grad::Frozen => tape.frozen(&name, params),
        }
    };
    let w = leaf(tape, "weight")?;
    let b = leaf(tape, "bias")?;
    let mut y = match layer.kind {
        LayerKind::Conv => tape.conv3d(input, w, b, layer.spec)?,
        LayerKind::ConvTranspose => tape.conv_transpose3d(input, w, b, layer.spec)?,
    };
    if layer.norm {
        let g = leaf(tape, "norm.gamma")?;
        let be = leaf(tape, "norm.beta")?;
        y = tape.instance_norm(y, g, be, NORM_EPSILON)?;
    }
    Ok(y)
}
