//! Reference implementations used as independent oracles by the
//! integration and acceptance tests. Nothing here calls into the kernels
//! under test.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voxgen::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor<f32> {
    let mut r = rng(seed);
    Tensor::from_fn(shape, |_| r.gen_range(lo..hi) as f32).unwrap()
}

pub fn uniform64(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    Tensor::from_fn(shape, |_| r.gen_range(lo..hi)).unwrap()
}

fn idx5(shape: [usize; 5], n: usize, c: usize, z: usize, y: usize, x: usize) -> usize {
    (((n * shape[1] + c) * shape[2] + z) * shape[3] + y) * shape[4] + x
}

fn dims(t: &[usize]) -> [usize; 5] {
    [t[0], t[1], t[2], t[3], t[4]]
}

/// Six-nested-loop cross-correlation straight from the definition.
pub fn naive_conv3d(
    x: &[f64],
    xs: [usize; 5],
    k: &[f64],
    ks: [usize; 5],
    bias: &[f64],
    stride: usize,
    pad: usize,
) -> (Vec<f64>, [usize; 5]) {
    let out = |e: usize, kk: usize| (e + 2 * pad - kk) / stride + 1;
    let ys = [xs[0], ks[0], out(xs[2], ks[2]), out(xs[3], ks[3]), out(xs[4], ks[4])];
    let mut y = vec![0.0; ys.iter().product()];
    for n in 0..ys[0] {
        for o in 0..ys[1] {
            for oz in 0..ys[2] {
                for oy in 0..ys[3] {
                    for ox in 0..ys[4] {
                        let mut acc = 0.0;
                        for c in 0..xs[1] {
                            for i in 0..ks[2] {
                                for j in 0..ks[3] {
                                    for l in 0..ks[4] {
                                        let iz = (oz * stride + i) as isize - pad as isize;
                                        let iy = (oy * stride + j) as isize - pad as isize;
                                        let ix = (ox * stride + l) as isize - pad as isize;
                                        if iz < 0
                                            || iy < 0
                                            || ix < 0
                                            || iz as usize >= xs[2]
                                            || iy as usize >= xs[3]
                                            || ix as usize >= xs[4]
                                        {
                                            continue;
                                        }
                                        acc += x[idx5(xs, n, c, iz as usize, iy as usize, ix as usize)]
                                            * k[idx5(ks, o, c, i, j, l)];
                                    }
                                }
                            }
                        }
                        y[idx5(ys, n, o, oz, oy, ox)] = acc + bias[o];
                    }
                }
            }
        }
    }
    (y, ys)
}

/// Transposed convolution from its stamping definition: every input voxel
/// adds `value * kernel` at offset `stride * position - pad`.
pub fn naive_conv_transpose3d(
    x: &[f64],
    xs: [usize; 5],
    k: &[f64],
    ks: [usize; 5],
    bias: &[f64],
    stride: usize,
    pad: usize,
) -> (Vec<f64>, [usize; 5]) {
    let out = |e: usize, kk: usize| stride * (e - 1) + kk - 2 * pad;
    let ys = [xs[0], ks[1], out(xs[2], ks[2]), out(xs[3], ks[3]), out(xs[4], ks[4])];
    let mut y = vec![0.0; ys.iter().product()];
    for n in 0..xs[0] {
        for c in 0..xs[1] {
            for z in 0..xs[2] {
                for yy in 0..xs[3] {
                    for xx in 0..xs[4] {
                        let v = x[idx5(xs, n, c, z, yy, xx)];
                        for o in 0..ks[1] {
                            for i in 0..ks[2] {
                                for j in 0..ks[3] {
                                    for l in 0..ks[4] {
                                        let oz = (z * stride + i) as isize - pad as isize;
                                        let oy = (yy * stride + j) as isize - pad as isize;
                                        let ox = (xx * stride + l) as isize - pad as isize;
                                        if oz < 0
                                            || oy < 0
                                            || ox < 0
                                            || oz as usize >= ys[2]
                                            || oy as usize >= ys[3]
                                            || ox as usize >= ys[4]
                                        {
                                            continue;
                                        }
                                        y[idx5(ys, n, o, oz as usize, oy as usize, ox as usize)] +=
                                            v * k[idx5(ks, c, o, i, j, l)];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    for n in 0..ys[0] {
        for o in 0..ys[1] {
            let plane = ys[2] * ys[3] * ys[4];
            let base = (n * ys[1] + o) * plane;
            for v in &mut y[base..base + plane] {
                *v += bias[o];
            }
        }
    }
    (y, ys)
}

pub fn widen(t: &Tensor<f32>) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

pub fn shape5(t: &Tensor<f32>) -> [usize; 5] {
    dims(t.shape())
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Centered moving average keeping only full windows.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    if values.len() < window {
        return Vec::new();
    }
    values
        .windows(window)
        .map(|w| w.iter().sum::<f64>() / window as f64)
        .collect()
}

pub fn inversions(values: &[f64]) -> usize {
    values.windows(2).filter(|w| w[1] < w[0]).count()
}

/// 64-bit scalar Adam reference.
pub struct ScalarAdam {
    pub m: f64,
    pub v: f64,
    pub t: i32,
}

impl ScalarAdam {
    pub fn step(&mut self, theta: f64, g: f64, lr: f64, b1: f64, b2: f64, eps: f64) -> f64 {
        self.t += 1;
        self.m = b1 * self.m + (1.0 - b1) * g;
        self.v = b2 * self.v + (1.0 - b2) * g * g;
        let mh = self.m / (1.0 - b1.powi(self.t));
        let vh = self.v / (1.0 - b2.powi(self.t));
        theta - lr * mh / (vh.sqrt() + eps)
    }
}

/// Random orthonormal basis (rows) by Gram-Schmidt on seeded vectors.
pub fn random_rotation(r: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
    loop {
        let mut q = [[0.0; 3]; 3];
        let mut ok = true;
        for i in 0..3 {
            let mut v: [f64; 3] = std::array::from_fn(|_| r.gen_range(-1.0..1.0));
            for j in 0..i {
                let d: f64 = (0..3).map(|k| v[k] * q[j][k]).sum();
                for k in 0..3 {
                    v[k] -= d * q[j][k];
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 0.1 {
                ok = false;
                break;
            }
            q[i] = v.map(|x| x / norm);
        }
        if ok {
            return q;
        }
    }
}

/// `Q1 · diag(s) · Q2` with singular values drawn from `[lo, hi]`.
pub fn conditioned_matrix(r: &mut ChaCha8Rng, lo: f64, hi: f64) -> [[f64; 3]; 3] {
    let q1 = random_rotation(r);
    let q2 = random_rotation(r);
    let s: [f64; 3] = std::array::from_fn(|_| r.gen_range(lo..=hi));
    std::array::from_fn(|i| {
        std::array::from_fn(|j| (0..3).map(|k| q1[i][k] * s[k] * q2[k][j]).sum())
    })
}
