use crate::error::{Error, Result};
use crate::tensor::{self, Activation, ConvSpec, Real, Tensor};

use super::ParamStore;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Constant,
    Param(String),
    Conv3d {
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        spec: ConvSpec,
    },
    ConvTranspose3d {
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        spec: ConvSpec,
    },
    InstanceNorm {
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        epsilon: f64,
        inv_stds: Vec<f64>,
    },
    Activation {
        input: NodeId,
        kind: Activation,
    },
    Concat {
        a: NodeId,
        b: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        input: NodeId,
        factor: f64,
    },
    Mean {
        input: NodeId,
    },
    BceWithLogits {
        input: NodeId,
        target: f64,
    },
    L1 {
        a: NodeId,
        b: NodeId,
    },
}

impl Op {
    pub(crate) fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Constant | Op::Param(_) => vec![],
            Op::Conv3d {
                input,
                kernel,
                bias,
                ..
            }
            | Op::ConvTranspose3d {
                input,
                kernel,
                bias,
                ..
            } => vec![*input, *kernel, *bias],
            Op::InstanceNorm {
                input, gamma, beta, ..
            } => vec![*input, *gamma, *beta],
            Op::Activation { input, .. }
            | Op::Scale { input, .. }
            | Op::Mean { input }
            | Op::BceWithLogits { input, .. } => vec![*input],
            Op::Concat { a, b } | Op::Add { a, b } | Op::Mul { a, b } | Op::L1 { a, b } => {
                vec![*a, *b]
            }
        }
    }
}

pub(crate) struct Node<T: Real> {
    pub value: Tensor<T>,
    pub op: Op,
    pub requires_grad: bool,
}

/// Recorded computation over the tensor primitives, in evaluation order.
///
/// Every op is evaluated eagerly when recorded; the tape keeps the values
/// and whatever the backward rule needs. Nodes that depend on no trainable
/// parameter are marked as not requiring gradients and are skipped during
/// backpropagation.
pub struct Tape<T: Real = f32> {
    pub(crate) nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self { nodes: Vec::new() }
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> Result<&Tensor<T>> {
        self.node(id).map(|n| &n.value)
    }

    pub(crate) fn node(&self, id: NodeId) -> Result<&Node<T>> {
        self.nodes
            .get(id.0)
            .ok_or_else(|| Error::Internal(format!("dangling node id {}", id.0)))
    }

    fn push(&mut self, value: Tensor<T>, op: Op) -> Result<NodeId> {
        let mut requires_grad = false;
        for input in op.inputs() {
            requires_grad |= self.node(input)?.requires_grad;
        }
        if matches!(op, Op::Param(_)) {
            requires_grad = true;
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Constant)
            .expect("constants have no inputs")
    }

    /// A trainable leaf bound to `name` in `params`; backpropagation adds
    /// into that parameter's gradient slot.
    pub fn param(&mut self, name: &str, params: &ParamStore<T>) -> Result<NodeId> {
        let value = params.get(name)?.clone();
        self.push(value, Op::Param(name.to_owned()))
    }

    /// Reads `name` from `params` as a constant (no gradient).
    pub fn frozen(&mut self, name: &str, params: &ParamStore<T>) -> Result<NodeId> {
        let value = params.get(name)?.clone();
        Ok(self.constant(value))
    }

    pub fn conv3d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        spec: ConvSpec,
    ) -> Result<NodeId> {
        let y = tensor::conv3d(
            self.value(input)?,
            self.value(kernel)?,
            self.value(bias)?,
            &spec,
        )?;
        self.push(
            y,
            Op::Conv3d {
                input,
                kernel,
                bias,
                spec,
            },
        )
    }

    pub fn conv_transpose3d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        spec: ConvSpec,
    ) -> Result<NodeId> {
        let y = tensor::conv_transpose3d(
            self.value(input)?,
            self.value(kernel)?,
            self.value(bias)?,
            &spec,
        )?;
        self.push(
            y,
            Op::ConvTranspose3d {
                input,
                kernel,
                bias,
                spec,
            },
        )
    }

    pub fn instance_norm(
        &mut self,
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        epsilon: f64,
    ) -> Result<NodeId> {
        let (y, inv_stds) = tensor::instance_norm_stats(
            self.value(input)?,
            self.value(gamma)?,
            self.value(beta)?,
            epsilon,
        )?;
        self.push(
            y,
            Op::InstanceNorm {
                input,
                gamma,
                beta,
                epsilon,
                inv_stds,
            },
        )
    }

    pub fn activation(&mut self, input: NodeId, kind: Activation) -> Result<NodeId> {
        let y = tensor::activation(self.value(input)?, kind)?;
        self.push(y, Op::Activation { input, kind })
    }

    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let y = tensor::concat_channels(self.value(a)?, self.value(b)?)?;
        self.push(y, Op::Concat { a, b })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let y = self.value(a)?.add(self.value(b)?)?;
        self.push(y, Op::Add { a, b })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let y = self.value(a)?.mul(self.value(b)?)?;
        self.push(y, Op::Mul { a, b })
    }

    pub fn scale(&mut self, input: NodeId, factor: f64) -> Result<NodeId> {
        let y = self.value(input)?.scale(factor);
        self.push(y, Op::Scale { input, factor })
    }

    pub fn mean(&mut self, input: NodeId) -> Result<NodeId> {
        let y = Tensor::scalar(tensor::reduce_mean(self.value(input)?));
        self.push(y, Op::Mean { input })
    }

    /// Mean sigmoid cross-entropy of logits against a constant target.
    pub fn bce_with_logits(&mut self, input: NodeId, target: f64) -> Result<NodeId> {
        let y = Tensor::scalar(T::of(bce_with_logits_value(self.value(input)?, target)));
        self.push(y, Op::BceWithLogits { input, target })
    }

    /// Mean absolute difference.
    pub fn l1(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let y = Tensor::scalar(T::of(l1_value(self.value(a)?, self.value(b)?)?));
        self.push(y, Op::L1 { a, b })
    }

    /// Re-evaluates every recorded op from the recorded leaves.
    pub fn replay(&self) -> Result<Vec<Tensor<T>>> {
        let mut values: Vec<Tensor<T>> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = |id: &NodeId| &values[id.0];
            let y = match &node.op {
                Op::Constant | Op::Param(_) => node.value.clone(),
                Op::Conv3d {
                    input,
                    kernel,
                    bias,
                    spec,
                } => tensor::conv3d(v(input), v(kernel), v(bias), spec)?,
                Op::ConvTranspose3d {
                    input,
                    kernel,
                    bias,
                    spec,
                } => tensor::conv_transpose3d(v(input), v(kernel), v(bias), spec)?,
                Op::InstanceNorm {
                    input,
                    gamma,
                    beta,
                    epsilon,
                    ..
                } => tensor::instance_norm(v(input), v(gamma), v(beta), *epsilon)?,
                Op::Activation { input, kind } => tensor::activation(v(input), *kind)?,
                Op::Concat { a, b } => tensor::concat_channels(v(a), v(b))?,
                Op::Add { a, b } => v(a).add(v(b))?,
                Op::Mul { a, b } => v(a).mul(v(b))?,
                Op::Scale { input, factor } => v(input).scale(*factor),
                Op::Mean { input } => Tensor::scalar(tensor::reduce_mean(v(input))),
                Op::BceWithLogits { input, target } => {
                    Tensor::scalar(T::of(bce_with_logits_value(v(input), *target)))
                }
                Op::L1 { a, b } => Tensor::scalar(T::of(l1_value(v(a), v(b))?)),
            };
            values.push(y);
        }
        Ok(values)
    }
}

/// `mean(max(z,0) - z*t + ln(1 + exp(-|z|)))`, accumulated in `f64`.
pub(crate) fn bce_with_logits_value<T: Real>(logits: &Tensor<T>, target: f64) -> f64 {
    let sum: f64 = logits
        .data()
        .iter()
        .map(|z| {
            let z = z.widen();
            z.max(0.0) - z * target + (-z.abs()).exp().ln_1p()
        })
        .sum();
    sum / logits.numel() as f64
}

pub(crate) fn l1_value<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "l1: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x.widen() - y.widen()).abs())
        .sum();
    Ok(sum / a.numel() as f64)
}
