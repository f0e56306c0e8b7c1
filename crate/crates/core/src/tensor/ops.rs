use crate::error::{Error, Result};

use super::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    LeakyRelu(f64),
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu(alpha) => {
                if x >= 0.0 {
                    x
                } else {
                    alpha * x
                }
            }
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    /// Both rectifiers take the positive branch at exactly zero.
    #[inline]
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::LeakyRelu(alpha) => {
                if x >= 0.0 {
                    1.0
                } else {
                    alpha
                }
            }
            Activation::Relu => {
                if x >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

/// Logistic function, evaluated without overflow for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn activation<T: Real>(input: &Tensor<T>, kind: Activation) -> Result<Tensor<T>> {
    if let Activation::LeakyRelu(alpha) = kind {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::config(format!(
                "leaky_relu slope must lie in (0,1), got {alpha}"
            )));
        }
    }
    if kind == Activation::Tanh {
        // Largest magnitude below one representable in `T`.
        let bound = T::one() - T::epsilon() / T::of(2.0);
        return Ok(input.map(|v| T::of(kind.apply(v.widen())).max(-bound).min(bound)));
    }
    Ok(input.map(|v| T::of(kind.apply(v.widen()))))
}

pub(crate) fn activation_grad<T: Real>(
    input: &Tensor<T>,
    output: &Tensor<T>,
    upstream: &Tensor<T>,
    kind: Activation,
) -> Tensor<T> {
    let data = input
        .data()
        .iter()
        .zip(output.data())
        .zip(upstream.data())
        .map(|((&x, &y), &g)| T::of(g.widen() * kind.derivative(x.widen(), y.widen())))
        .collect();
    Tensor {
        shape: input.shape().to_vec(),
        data,
    }
}

/// Per-sample, per-channel standardization over the spatial axes with a
/// learned affine `gamma`, `beta`. Variance is the population variance.
pub fn instance_norm<T: Real>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    epsilon: f64,
) -> Result<Tensor<T>> {
    Ok(instance_norm_stats(input, gamma, beta, epsilon)?.0)
}

/// Forward pass that also returns the per-(n,c) inverse standard deviations
/// needed by the backward rule.
pub(crate) fn instance_norm_stats<T: Real>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    epsilon: f64,
) -> Result<(Tensor<T>, Vec<f64>)> {
    let d = input.dims5()?;
    if !(epsilon > 0.0) {
        return Err(Error::config(format!(
            "instance_norm epsilon must be > 0, got {epsilon}"
        )));
    }
    for (name, t) in [("gamma", gamma), ("beta", beta)] {
        if t.shape() != [d.c] {
            return Err(Error::shape(format!(
                "instance_norm: {name} shape {:?} does not match [{}]",
                t.shape(),
                d.c
            )));
        }
    }
    let plane = d.voxels();
    let inv_n = 1.0 / plane as f64;
    let mut out = Vec::with_capacity(input.numel());
    let mut inv_stds = Vec::with_capacity(d.n * d.c);
    for (idx, chunk) in input.data().chunks_exact(plane).enumerate() {
        let c = idx % d.c;
        let mean = chunk.iter().map(|v| v.widen()).sum::<f64>() * inv_n;
        let var = chunk
            .iter()
            .map(|v| {
                let t = v.widen() - mean;
                t * t
            })
            .sum::<f64>()
            * inv_n;
        let inv_std = 1.0 / (var + epsilon).sqrt();
        let g = gamma.data()[c].widen();
        let b = beta.data()[c].widen();
        out.extend(chunk.iter().map(|v| T::of((v.widen() - mean) * inv_std * g + b)));
        inv_stds.push(inv_std);
    }
    Ok((
        Tensor {
            shape: input.shape().to_vec(),
            data: out,
        },
        inv_stds,
    ))
}

/// Gradients of instance norm with respect to input, gamma and beta.
pub(crate) fn instance_norm_grad<T: Real>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    inv_stds: &[f64],
    upstream: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let d = input.dims5().expect("shape validated in forward pass");
    let plane = d.voxels();
    let n_inv = 1.0 / plane as f64;
    let mut dx = Vec::with_capacity(input.numel());
    let mut dgamma = vec![0f64; d.c];
    let mut dbeta = vec![0f64; d.c];
    for (idx, (xs, gs)) in input
        .data()
        .chunks_exact(plane)
        .zip(upstream.data().chunks_exact(plane))
        .enumerate()
    {
        let c = idx % d.c;
        let inv_std = inv_stds[idx];
        let mean = xs.iter().map(|v| v.widen()).sum::<f64>() * n_inv;
        let g = gamma.data()[c].widen();
        let mut sum_dy = 0f64;
        let mut sum_dy_xhat = 0f64;
        for (&x, &dy) in xs.iter().zip(gs) {
            let xhat = (x.widen() - mean) * inv_std;
            sum_dy += dy.widen();
            sum_dy_xhat += dy.widen() * xhat;
        }
        dgamma[c] += sum_dy_xhat;
        dbeta[c] += sum_dy;
        let mean_dy = sum_dy * n_inv;
        let mean_dy_xhat = sum_dy_xhat * n_inv;
        dx.extend(xs.iter().zip(gs).map(|(&x, &dy)| {
            let xhat = (x.widen() - mean) * inv_std;
            T::of(g * inv_std * (dy.widen() - mean_dy - xhat * mean_dy_xhat))
        }));
    }
    let wrap = |v: Vec<f64>| Tensor {
        shape: vec![v.len()],
        data: v.into_iter().map(T::of).collect(),
    };
    (
        Tensor {
            shape: input.shape().to_vec(),
            data: dx,
        },
        wrap(dgamma),
        wrap(dbeta),
    )
}

/// Concatenates along the channel axis: `a`'s channels first, then `b`'s.
pub fn concat_channels<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let da = a.dims5()?;
    let db = b.dims5()?;
    if da.n != db.n || da.spatial() != db.spatial() {
        return Err(Error::shape(format!(
            "concat_channels: shapes {:?} and {:?} differ outside the channel axis",
            a.shape(),
            b.shape()
        )));
    }
    let plane = da.voxels();
    let mut data = Vec::with_capacity(a.numel() + b.numel());
    for n in 0..da.n {
        data.extend_from_slice(&a.data()[n * da.c * plane..][..da.c * plane]);
        data.extend_from_slice(&b.data()[n * db.c * plane..][..db.c * plane]);
    }
    Ok(Tensor {
        shape: vec![da.n, da.c + db.c, da.d, da.h, da.w],
        data,
    })
}

/// Inverse of [`concat_channels`]: the first `first` channels and the rest.
pub fn split_channels<T: Real>(t: &Tensor<T>, first: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let d = t.dims5()?;
    if first == 0 || first >= d.c {
        return Err(Error::shape(format!(
            "split_channels: cannot split {} channels at {first}",
            d.c
        )));
    }
    let plane = d.voxels();
    let rest = d.c - first;
    let mut a = Vec::with_capacity(d.n * first * plane);
    let mut b = Vec::with_capacity(d.n * rest * plane);
    for n in 0..d.n {
        let base = n * d.c * plane;
        a.extend_from_slice(&t.data()[base..][..first * plane]);
        b.extend_from_slice(&t.data()[base + first * plane..][..rest * plane]);
    }
    Ok((
        Tensor {
            shape: vec![d.n, first, d.d, d.h, d.w],
            data: a,
        },
        Tensor {
            shape: vec![d.n, rest, d.d, d.h, d.w],
            data: b,
        },
    ))
}

/// Arithmetic mean of every element, accumulated in `f64`.
pub fn reduce_mean<T: Real>(input: &Tensor<T>) -> T {
    let sum: f64 = input.data().iter().map(|v| v.widen()).sum();
    T::of(sum / input.numel() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t5(c: usize, vals: &[f32]) -> Tensor<f32> {
        Tensor::new(vec![1, c, 1, 1, vals.len() / c], vals.to_vec()).unwrap()
    }

    #[test]
    fn instance_norm_constant_channel_is_zero() {
        let x = Tensor::full(&[1, 1, 2, 2, 2], 7.0f32).unwrap();
        let g = Tensor::full(&[1], 1.0).unwrap();
        let b = Tensor::zeros(&[1]).unwrap();
        let y = instance_norm(&x, &g, &b, 1e-5).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn instance_norm_two_voxels() {
        let x = t5(1, &[1.0, 3.0]);
        let g = Tensor::full(&[1], 1.0).unwrap();
        let b = Tensor::<f32>::zeros(&[1]).unwrap();
        let y = instance_norm(&x.cast::<f64>(), &g.cast(), &b.cast(), 1e-5).unwrap();
        // mean 2, var 1: ±1/sqrt(1 + 1e-5)
        let expect = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((y.data()[0] + expect).abs() < 1e-12);
        assert!((y.data()[1] - expect).abs() < 1e-12);
        assert!((expect - 0.999995).abs() < 1e-6);
    }

    #[test]
    fn instance_norm_zero_gamma_gives_beta() {
        let x = t5(2, &[0.3, -1.0, 5.0, 2.0, 9.0, -4.0]);
        let g = Tensor::zeros(&[2]).unwrap();
        let b = Tensor::full(&[2], 4.0f32).unwrap();
        let y = instance_norm(&x, &g, &b, 1e-5).unwrap();
        assert!(y.data().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn activation_values() {
        let x = Tensor::new(vec![1], vec![-2.0f32]).unwrap();
        let y = activation(&x, Activation::LeakyRelu(0.2)).unwrap();
        assert!((y.data()[0] + 0.4).abs() < 1e-7);
        let z = Tensor::<f32>::zeros(&[1]).unwrap();
        assert_eq!(activation(&z, Activation::Tanh).unwrap().data(), &[0.0]);
        assert_eq!(activation(&z, Activation::Sigmoid).unwrap().data(), &[0.5]);
        assert_eq!(activation(&x, Activation::Relu).unwrap().data(), &[0.0]);
        assert!(activation(&x, Activation::LeakyRelu(1.5)).is_err());
    }

    #[test]
    fn tanh_stays_inside_open_interval() {
        let x = Tensor::new(vec![2], vec![40.0f32, -40.0]).unwrap();
        let y = activation(&x, Activation::Tanh).unwrap();
        assert!(y.data()[0] < 1.0 && y.data()[0] > 0.999_999);
        assert!(y.data()[1] > -1.0 && y.data()[1] < -0.999_999);
    }

    #[test]
    fn rectifier_derivative_at_zero_takes_positive_branch() {
        assert_eq!(Activation::LeakyRelu(0.2).derivative(0.0, 0.0), 1.0);
        assert_eq!(Activation::Relu.derivative(0.0, 0.0), 1.0);
        assert_eq!(Activation::LeakyRelu(0.2).derivative(-1e-30, 0.0), 0.2);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert!((sigmoid(20.0) - 0.999_999_997_938_846_4).abs() < 1e-15);
    }

    #[test]
    fn concat_extents_and_roundtrip() {
        let a = Tensor::from_fn(&[1, 1, 2, 2, 2], |i| i as f32).unwrap();
        let b = Tensor::from_fn(&[1, 3, 2, 2, 2], |i| -(i as f32)).unwrap();
        let c = concat_channels(&a, &b).unwrap();
        assert_eq!(c.shape(), &[1, 4, 2, 2, 2]);
        let (a2, b2) = split_channels(&c, 1).unwrap();
        assert_eq!(a2, a);
        assert_eq!(b2, b);

        let z = Tensor::zeros_like(&a);
        let (x, _) = split_channels(&concat_channels(&a, &z).unwrap(), 1).unwrap();
        assert_eq!(x, a);

        let wrong = Tensor::<f32>::zeros(&[1, 1, 2, 2, 3]).unwrap();
        assert!(matches!(concat_channels(&a, &wrong), Err(Error::Shape(_))));
    }

    #[test]
    fn mean_values() {
        let x = Tensor::new(vec![4], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(reduce_mean(&x), 2.5);
        let c = Tensor::full(&[3, 5, 2], 0.7f32).unwrap();
        assert_eq!(reduce_mean(&c), 0.7);
    }
}
