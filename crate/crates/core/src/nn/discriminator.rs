use crate::autograd::{NodeId, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::tensor::{reduce_mean, sigmoid, Activation, Real, Tensor};

use super::{record_layer, DiscriminatorConfig, Grad, LEAKY_SLOPE};

/// Records a discriminator pass on the channel concatenation of `us` and
/// `mri` (each `[N, 1, S, S, S]`). Returns a `[N, 1, S/2^M, S/2^M, S/2^M]`
/// map of patch logits.
pub fn discriminator_forward_on<T: Real>(
    tape: &mut Tape<T>,
    params: &ParamStore<T>,
    grad: Grad,
    us: NodeId,
    mri: NodeId,
    config: &DiscriminatorConfig,
) -> Result<NodeId> {
    let a = tape.value(us)?.shape().to_vec();
    let b = tape.value(mri)?.shape().to_vec();
    if a != b || a.len() != 5 || a[1] != 1 || a[2] != a[3] || a[3] != a[4] {
        return Err(Error::shape(format!(
            "discriminator expects two equal [N, 1, S, S, S] inputs, got {a:?} and {b:?}"
        )));
    }
    config.validate_for_side(a[2])?;

    let layers = config.layers();
    let mut h = tape.concat_channels(us, mri)?;
    for layer in &layers[..config.layers] {
        h = record_layer(tape, params, grad, layer, h)?;
        h = tape.activation(h, Activation::LeakyRelu(LEAKY_SLOPE))?;
    }
    record_layer(tape, params, grad, &layers[config.layers], h)
}

/// Discriminator pass without gradient bookkeeping; returns patch logits.
pub fn discriminator_forward<T: Real>(
    params: &ParamStore<T>,
    us: &Tensor<T>,
    mri: &Tensor<T>,
    config: &DiscriminatorConfig,
) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let u = tape.constant(us.clone());
    let m = tape.constant(mri.clone());
    let out = discriminator_forward_on(&mut tape, params, Grad::Frozen, u, m, config)?;
    Ok(tape.value(out)?.clone())
}

/// `sigmoid(mean(logits))`: a single realness score in `(0, 1)`.
pub fn scalar_probability<T: Real>(logits: &Tensor<T>) -> f64 {
    sigmoid(reduce_mean(logits).widen())
}
