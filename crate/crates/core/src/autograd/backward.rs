use crate::error::{Error, Result};
use crate::tensor::{self, sigmoid, Real, Tensor};

use super::tape::{Op, Tape};
use super::{NodeId, ParamStore};

/// Reverse sweep from a scalar `loss`, adding `∂loss/∂param` into the
/// gradient slot of every parameter recorded on the tape.
///
/// Gradients accumulate: calling this twice without
/// [`ParamStore::zero_grads`] doubles them. Parameters the loss does not
/// depend on keep whatever their slot held (zero after a reset).
pub fn backpropagate<T: Real>(
    tape: &Tape<T>,
    loss: NodeId,
    params: &mut ParamStore<T>,
) -> Result<()> {
    let root = tape.node(loss)?;
    if !root.value.is_scalar() {
        return Err(Error::Contract(format!(
            "loss must be a scalar, node {} has shape {:?}",
            loss.0,
            root.value.shape()
        )));
    }
    if !root.requires_grad {
        return Ok(());
    }

    let mut adjoints: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
    adjoints[loss.0] = Some(Tensor::full(root.value.shape(), T::one())?);

    for idx in (0..=loss.0).rev() {
        let node = &tape.nodes[idx];
        if !node.requires_grad {
            continue;
        }
        let Some(g) = adjoints[idx].take() else {
            continue;
        };
        let needs = |id: &NodeId| tape.nodes[id.0].requires_grad;
        let val = |id: &NodeId| &tape.nodes[id.0].value;
        let mut push = |id: NodeId, grad: Tensor<T>| -> Result<()> {
            if id.0 >= idx {
                return Err(Error::Internal(format!(
                    "node {idx} references non-earlier node {}",
                    id.0
                )));
            }
            match &mut adjoints[id.0] {
                Some(acc) => acc.add_assign(&grad),
                slot @ None => {
                    *slot = Some(grad);
                    Ok(())
                }
            }
        };

        match &node.op {
            Op::Constant => {}
            Op::Param(name) => params.accumulate_grad(name, &g)?,
            Op::Conv3d {
                input,
                kernel,
                bias,
                spec,
            } => {
                let x = val(input);
                let xd = x.dims5()?;
                let yd = node.value.dims5()?;
                if needs(input) {
                    let dx = tensor::conv_input_grad(g.data(), yd, val(kernel).data(), None, spec, xd);
                    push(*input, Tensor::new(xd.shape(), dx)?)?;
                }
                if needs(kernel) {
                    let dk = tensor::conv_weight_grad(x.data(), xd, g.data(), yd, spec);
                    push(*kernel, Tensor::new(val(kernel).shape().to_vec(), dk)?)?;
                }
                if needs(bias) {
                    push(*bias, Tensor::new(vec![yd.c], tensor::channel_sums(g.data(), yd))?)?;
                }
            }
            Op::ConvTranspose3d {
                input,
                kernel,
                bias,
                spec,
            } => {
                // Roles swap relative to Conv3d: the layer output is the
                // "large" side of the underlying correlation.
                let x = val(input);
                let xd = x.dims5()?;
                let yd = node.value.dims5()?;
                if needs(input) {
                    let dx = tensor::conv_forward(g.data(), yd, val(kernel).data(), None, spec, xd);
                    push(*input, dx)?;
                }
                if needs(kernel) {
                    let dk = tensor::conv_weight_grad(g.data(), yd, x.data(), xd, spec);
                    push(*kernel, Tensor::new(val(kernel).shape().to_vec(), dk)?)?;
                }
                if needs(bias) {
                    push(*bias, Tensor::new(vec![yd.c], tensor::channel_sums(g.data(), yd))?)?;
                }
            }
            Op::InstanceNorm {
                input,
                gamma,
                beta,
                inv_stds,
                ..
            } => {
                let (dx, dgamma, dbeta) =
                    tensor::instance_norm_grad(val(input), val(gamma), inv_stds, &g);
                if needs(input) {
                    push(*input, dx)?;
                }
                if needs(gamma) {
                    push(*gamma, dgamma)?;
                }
                if needs(beta) {
                    push(*beta, dbeta)?;
                }
            }
            Op::Activation { input, kind } => {
                let dx = tensor::activation_grad(val(input), &node.value, &g, *kind);
                push(*input, dx)?;
            }
            Op::Concat { a, b } => {
                let first = val(a).dims5()?.c;
                let (ga, gb) = tensor::split_channels(&g, first)?;
                if needs(a) {
                    push(*a, ga)?;
                }
                if needs(b) {
                    push(*b, gb)?;
                }
            }
            Op::Add { a, b } => {
                if needs(a) {
                    push(*a, g.clone())?;
                }
                if needs(b) {
                    push(*b, g)?;
                }
            }
            Op::Mul { a, b } => {
                if needs(a) {
                    push(*a, g.mul(val(b))?)?;
                }
                if needs(b) {
                    push(*b, g.mul(val(a))?)?;
                }
            }
            Op::Scale { input, factor } => push(*input, g.scale(*factor))?,
            Op::Mean { input } => {
                let x = val(input);
                let each = g.data()[0].widen() / x.numel() as f64;
                push(*input, Tensor::full(x.shape(), T::of(each))?)?;
            }
            Op::BceWithLogits { input, target } => {
                let z = val(input);
                let k = g.data()[0].widen() / z.numel() as f64;
                push(*input, z.map(|v| T::of((sigmoid(v.widen()) - target) * k)))?;
            }
            Op::L1 { a, b } => {
                let (va, vb) = (val(a), val(b));
                let k = g.data()[0].widen() / va.numel() as f64;
                let sign: Vec<T> = va
                    .data()
                    .iter()
                    .zip(vb.data())
                    .map(|(x, y)| {
                        let d = x.widen() - y.widen();
                        T::of(if d > 0.0 {
                            k
                        } else if d < 0.0 {
                            -k
                        } else {
                            0.0
                        })
                    })
                    .collect();
                let ga = Tensor::new(va.shape().to_vec(), sign)?;
                if needs(b) {
                    push(*b, ga.scale(-1.0))?;
                }
                if needs(a) {
                    push(*a, ga)?;
                }
            }
        }
    }
    Ok(())
}
