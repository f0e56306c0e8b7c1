use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{NodeId, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::tensor::{Activation, Real, Tensor};

use super::{record_layer, GeneratorConfig, Grad, Mode, LEAKY_SLOPE};

/// Node ids of interest from one recorded generator pass.
#[derive(Debug, Clone)]
pub struct GeneratorTrace {
    pub output: NodeId,
    /// Activation of the deepest encoder block.
    pub bottleneck: NodeId,
    /// `(before, after)` pairs around each dropout site, innermost decoder
    /// block first. Empty in eval mode or with a zero rate.
    pub dropout: Vec<(NodeId, NodeId)>,
}

/// Records a generator pass on `tape`. `input` must hold a
/// `[N, 1, S, S, S]` tensor with `S = config.side`; the output has the same
/// shape with values in `(-1, 1)`.
///
/// In training mode decoder block `j < min(3, L)` multiplies its activation
/// by a mask whose entries are drawn from `ChaCha8Rng::seed_from_u64(seed)`
/// on stream `j`, one `f64` per element in row-major order: the element is
/// dropped when the draw is below the rate, and kept ones are scaled by
/// `1 / (1 - rate)`.
pub fn generator_forward_on<T: Real>(
    tape: &mut Tape<T>,
    params: &ParamStore<T>,
    grad: Grad,
    input: NodeId,
    config: &GeneratorConfig,
    mode: Mode,
) -> Result<GeneratorTrace> {
    config.validate()?;
    let shape = tape.value(input)?.shape().to_vec();
    let s = config.side;
    if shape.len() != 5 || shape[1] != 1 || shape[2..] != [s, s, s] {
        return Err(Error::shape(format!(
            "generator expects [N, 1, {s}, {s}, {s}], got {shape:?}"
        )));
    }

    let layers = config.layers();
    let depth = config.depth;
    let mut skips = Vec::with_capacity(depth);
    let mut h = input;
    for layer in &layers[..depth] {
        h = record_layer(tape, params, grad, layer, h)?;
        h = tape.activation(h, Activation::LeakyRelu(LEAKY_SLOPE))?;
        skips.push(h);
    }

    let bottleneck = h;
    let mut dropout = Vec::new();
    for (j, layer) in layers[depth..2 * depth].iter().enumerate() {
        let x = if j == 0 {
            h
        } else {
            tape.concat_channels(h, skips[depth - 1 - j])?
        };
        h = record_layer(tape, params, grad, layer, x)?;
        h = tape.activation(h, Activation::Relu)?;
        if let Mode::Train { seed } = mode {
            if j < config.dropout_blocks() && config.dropout > 0.0 {
                let mask = dropout_mask::<T>(tape.value(h)?.shape(), config.dropout, seed, j as u64)?;
                let m = tape.constant(mask);
                let after = tape.mul(h, m)?;
                dropout.push((h, after));
                h = after;
            }
        }
    }

    let out = record_layer(tape, params, grad, &layers[2 * depth], h)?;
    let output = tape.activation(out, Activation::Tanh)?;
    Ok(GeneratorTrace {
        output,
        bottleneck,
        dropout,
    })
}

fn dropout_mask<T: Real>(shape: &[usize], rate: f64, seed: u64, stream: u64) -> Result<Tensor<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let keep = T::of(1.0 / (1.0 - rate));
    Tensor::from_fn(shape, |_| {
        if rng.gen::<f64>() < rate {
            T::zero()
        } else {
            keep
        }
    })
}

/// Generator pass without gradient bookkeeping.
pub fn generator_forward<T: Real>(
    params: &ParamStore<T>,
    us: &Tensor<T>,
    config: &GeneratorConfig,
    mode: Mode,
) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let x = tape.constant(us.clone());
    let trace = generator_forward_on(&mut tape, params, Grad::Frozen, x, config, mode)?;
    Ok(tape.value(trace.output)?.clone())
}
