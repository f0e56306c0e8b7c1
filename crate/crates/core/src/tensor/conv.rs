//! 3D cross-correlation and its adjoint.
//!
//! Three core routines cover forward and backward passes of both layer
//! kinds:
//!
//! * [`conv_forward`]: gather form, `y = K ⋆ x`.
//! * [`conv_input_grad`]: scatter form, the adjoint of `conv_forward` with
//!   respect to `x`. This is exactly the transposed convolution.
//! * [`conv_weight_grad`]: gradient with respect to the kernel.
//!
//! Each output element is accumulated in `f64` in a fixed loop order.

use crate::error::{Error, Result};

use super::{Real, Tensor};

/// Geometry of one convolution layer. Per-axis values are ordered
/// depth, height, width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvSpec {
    /// Same kernel, stride and padding on all three axes.
    pub fn cubic(in_channels: usize, out_channels: usize, k: usize, s: usize, p: usize) -> Self {
        Self {
            kernel: [k; 3],
            stride: [s; 3],
            padding: [p; 3],
            in_channels,
            out_channels,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.kernel.contains(&0) || self.stride.contains(&0) {
            return Err(Error::config(format!(
                "kernel and stride must be >= 1, got kernel {:?} stride {:?}",
                self.kernel, self.stride
            )));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::config("channel counts must be >= 1"));
        }
        Ok(())
    }

    /// Output extents of the forward convolution for the given input extents.
    pub fn conv_output(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            let padded = input[a] + 2 * self.padding[a];
            if padded < self.kernel[a] {
                return Err(Error::config(format!(
                    "axis {a}: padded extent {padded} is smaller than kernel {}",
                    self.kernel[a]
                )));
            }
            out[a] = (padded - self.kernel[a]) / self.stride[a] + 1;
        }
        Ok(out)
    }

    /// Output extents of the transposed convolution: `s(D-1) + k - 2p`.
    pub fn transpose_output(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            let full = self.stride[a] * (input[a] - 1) + self.kernel[a];
            if full <= 2 * self.padding[a] {
                return Err(Error::config(format!(
                    "axis {a}: transposed output extent {full} - 2*{} is not positive",
                    self.padding[a]
                )));
            }
            out[a] = full - 2 * self.padding[a];
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Dims5 {
    pub n: usize,
    pub c: usize,
    pub d: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims5 {
    pub fn of(shape: &[usize]) -> Result<Self> {
        match *shape {
            [n, c, d, h, w] => Ok(Self { n, c, d, h, w }),
            _ => Err(Error::shape(format!(
                "expected a 5-D tensor (N,C,D,H,W), got shape {shape:?}"
            ))),
        }
    }

    pub fn spatial(&self) -> [usize; 3] {
        [self.d, self.h, self.w]
    }

    pub fn voxels(&self) -> usize {
        self.d * self.h * self.w
    }

    pub fn shape(&self) -> Vec<usize> {
        vec![self.n, self.c, self.d, self.h, self.w]
    }
}

/// Range of output positions `o` for which `o*s + tap - pad` lands in
/// `[0, extent)`. Returned as a half-open interval clipped to `[0, out)`.
#[inline]
fn valid_range(out: usize, extent: usize, stride: usize, tap: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > tap {
        (pad - tap).div_ceil(stride)
    } else {
        0
    };
    if extent + pad <= tap {
        return (0, 0);
    }
    let hi = ((extent + pad - tap - 1) / stride + 1).min(out);
    (lo.min(hi), hi)
}

fn check_kernel<T: Real>(
    kernel: &Tensor<T>,
    expect: [usize; 2],
    spec: &ConvSpec,
    what: &str,
) -> Result<()> {
    let want = [expect[0], expect[1], spec.kernel[0], spec.kernel[1], spec.kernel[2]];
    if kernel.shape() != want {
        return Err(Error::shape(format!(
            "{what}: kernel shape {:?} does not match expected {:?}",
            kernel.shape(),
            want
        )));
    }
    Ok(())
}

fn check_bias<T: Real>(bias: &Tensor<T>, channels: usize, what: &str) -> Result<()> {
    if bias.shape() != [channels] {
        return Err(Error::shape(format!(
            "{what}: bias shape {:?} does not match [{channels}]",
            bias.shape()
        )));
    }
    Ok(())
}

/// 3D cross-correlation with zero padding.
///
/// `input` is `[N, C_in, D, H, W]`, `kernel` is `[C_out, C_in, kd, kh, kw]`
/// and `bias` is `[C_out]`.
pub fn conv3d<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    spec.validate()?;
    let x = input.dims5()?;
    if x.c != spec.in_channels {
        return Err(Error::shape(format!(
            "conv3d: input has {} channels, spec expects {}",
            x.c, spec.in_channels
        )));
    }
    check_kernel(kernel, [spec.out_channels, spec.in_channels], spec, "conv3d")?;
    check_bias(bias, spec.out_channels, "conv3d")?;
    let out = spec.conv_output(x.spatial())?;
    let y = Dims5 {
        n: x.n,
        c: spec.out_channels,
        d: out[0],
        h: out[1],
        w: out[2],
    };
    Ok(conv_forward(input.data(), x, kernel.data(), Some(bias.data()), spec, y))
}

/// Transposed 3D convolution, the adjoint of [`conv3d`] (plus bias).
///
/// `input` is `[N, C_in, D, H, W]`, `kernel` is `[C_in, C_out, kd, kh, kw]`
/// and `bias` is `[C_out]`. Output extents are `s(D-1) + k - 2p`.
pub fn conv_transpose3d<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    spec.validate()?;
    let x = input.dims5()?;
    if x.c != spec.in_channels {
        return Err(Error::shape(format!(
            "conv_transpose3d: input has {} channels, spec expects {}",
            x.c, spec.in_channels
        )));
    }
    check_kernel(
        kernel,
        [spec.in_channels, spec.out_channels],
        spec,
        "conv_transpose3d",
    )?;
    check_bias(bias, spec.out_channels, "conv_transpose3d")?;
    let out = spec.transpose_output(x.spatial())?;
    let y = Dims5 {
        n: x.n,
        c: spec.out_channels,
        d: out[0],
        h: out[1],
        w: out[2],
    };
    // The transposed layer's input plays the role of the forward conv's output.
    let data = conv_input_grad(input.data(), x, kernel.data(), Some(bias.data()), spec, y);
    Tensor::new(y.shape(), data)
}

/// Gather-form convolution. `y` gives the (already validated) output dims.
pub(crate) fn conv_forward<T: Real>(
    x: &[T],
    xd: Dims5,
    kernel: &[T],
    bias: Option<&[T]>,
    spec: &ConvSpec,
    yd: Dims5,
) -> Tensor<T> {
    let [kd, kh, kw] = spec.kernel;
    let [sd, sh, sw] = spec.stride;
    let [pd, ph, pw] = spec.padding;
    let plane_in = xd.voxels();
    let plane_out = yd.voxels();
    let mut out = Vec::with_capacity(yd.n * yd.c * plane_out);
    let mut acc = vec![0f64; plane_out];

    for n in 0..yd.n {
        for o in 0..yd.c {
            let b = bias.map_or(0.0, |b| b[o].widen());
            acc.iter_mut().for_each(|v| *v = b);
            for c in 0..xd.c {
                let xin = &x[(n * xd.c + c) * plane_in..][..plane_in];
                let kbase = (o * xd.c + c) * kd * kh * kw;
                for i in 0..kd {
                    let (z0, z1) = valid_range(yd.d, xd.d, sd, i, pd);
                    for j in 0..kh {
                        let (y0, y1) = valid_range(yd.h, xd.h, sh, j, ph);
                        for oz in z0..z1 {
                            let iz = oz * sd + i - pd;
                            for oy in y0..y1 {
                                let iy = oy * sh + j - ph;
                                let row = &xin[(iz * xd.h + iy) * xd.w..][..xd.w];
                                let dst = &mut acc[(oz * yd.h + oy) * yd.w..][..yd.w];
                                for l in 0..kw {
                                    let wv = kernel[kbase + (i * kh + j) * kw + l].widen();
                                    let (x0, x1) = valid_range(yd.w, xd.w, sw, l, pw);
                                    if x0 == x1 {
                                        continue;
                                    }
                                    if sw == 1 {
                                        let src = &row[x0 + l - pw..x1 + l - pw];
                                        for (a, &v) in dst[x0..x1].iter_mut().zip(src) {
                                            *a += v.widen() * wv;
                                        }
                                    } else {
                                        for ox in x0..x1 {
                                            dst[ox] += row[ox * sw + l - pw].widen() * wv;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            out.extend(acc.iter().map(|&v| T::of(v)));
        }
    }
    Tensor {
        shape: yd.shape(),
        data: out,
    }
}

/// Scatter-form adjoint of [`conv_forward`] with respect to its input.
///
/// `dy` has the forward output dims `yd`; the result has dims `xd`. The
/// kernel keeps the forward layout `[yd.c, xd.c, k...]`.
pub(crate) fn conv_input_grad<T: Real>(
    dy: &[T],
    yd: Dims5,
    kernel: &[T],
    bias: Option<&[T]>,
    spec: &ConvSpec,
    xd: Dims5,
) -> Vec<T> {
    let [kd, kh, kw] = spec.kernel;
    let [sd, sh, sw] = spec.stride;
    let [pd, ph, pw] = spec.padding;
    let plane_in = xd.voxels();
    let plane_out = yd.voxels();
    let mut out = Vec::with_capacity(xd.n * xd.c * plane_in);
    let mut acc = vec![0f64; plane_in];

    for n in 0..xd.n {
        for c in 0..xd.c {
            let b = bias.map_or(0.0, |b| b[c].widen());
            acc.iter_mut().for_each(|v| *v = b);
            for o in 0..yd.c {
                let g = &dy[(n * yd.c + o) * plane_out..][..plane_out];
                let kbase = (o * xd.c + c) * kd * kh * kw;
                for i in 0..kd {
                    let (z0, z1) = valid_range(yd.d, xd.d, sd, i, pd);
                    for j in 0..kh {
                        let (y0, y1) = valid_range(yd.h, xd.h, sh, j, ph);
                        for oz in z0..z1 {
                            let iz = oz * sd + i - pd;
                            for oy in y0..y1 {
                                let iy = oy * sh + j - ph;
                                let src = &g[(oz * yd.h + oy) * yd.w..][..yd.w];
                                let dst = &mut acc[(iz * xd.h + iy) * xd.w..][..xd.w];
                                for l in 0..kw {
                                    let wv = kernel[kbase + (i * kh + j) * kw + l].widen();
                                    let (x0, x1) = valid_range(yd.w, xd.w, sw, l, pw);
                                    if x0 == x1 {
                                        continue;
                                    }
                                    if sw == 1 {
                                        let d = &mut dst[x0 + l - pw..x1 + l - pw];
                                        for (a, &v) in d.iter_mut().zip(&src[x0..x1]) {
                                            *a += v.widen() * wv;
                                        }
                                    } else {
                                        for ox in x0..x1 {
                                            dst[ox * sw + l - pw] += src[ox].widen() * wv;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            out.extend(acc.iter().map(|&v| T::of(v)));
        }
    }
    out
}

/// Gradient of [`conv_forward`] with respect to the kernel:
/// `dK[o,c,i,j,l] = Σ dy[n,o,z,y,x] · x[n,c,sz+i-p, sy+j-p, sx+l-p]`.
pub(crate) fn conv_weight_grad<T: Real>(
    x: &[T],
    xd: Dims5,
    dy: &[T],
    yd: Dims5,
    spec: &ConvSpec,
) -> Vec<T> {
    let [kd, kh, kw] = spec.kernel;
    let [sd, sh, sw] = spec.stride;
    let [pd, ph, pw] = spec.padding;
    let plane_in = xd.voxels();
    let plane_out = yd.voxels();
    let taps = kd * kh * kw;
    let mut out = vec![T::zero(); yd.c * xd.c * taps];
    let mut acc = vec![0f64; kw];

    for o in 0..yd.c {
        for c in 0..xd.c {
            for i in 0..kd {
                let (z0, z1) = valid_range(yd.d, xd.d, sd, i, pd);
                for j in 0..kh {
                    let (y0, y1) = valid_range(yd.h, xd.h, sh, j, ph);
                    acc.iter_mut().for_each(|v| *v = 0.0);
                    for n in 0..xd.n {
                        let g = &dy[(n * yd.c + o) * plane_out..][..plane_out];
                        let xin = &x[(n * xd.c + c) * plane_in..][..plane_in];
                        for oz in z0..z1 {
                            let iz = oz * sd + i - pd;
                            for oy in y0..y1 {
                                let iy = oy * sh + j - ph;
                                let grow = &g[(oz * yd.h + oy) * yd.w..][..yd.w];
                                let xrow = &xin[(iz * xd.h + iy) * xd.w..][..xd.w];
                                for (l, a) in acc.iter_mut().enumerate() {
                                    let (x0, x1) = valid_range(yd.w, xd.w, sw, l, pw);
                                    let mut s = 0f64;
                                    for ox in x0..x1 {
                                        s += grow[ox].widen() * xrow[ox * sw + l - pw].widen();
                                    }
                                    *a += s;
                                }
                            }
                        }
                    }
                    let base = (o * xd.c + c) * taps + (i * kh + j) * kw;
                    for (l, &a) in acc.iter().enumerate() {
                        out[base + l] = T::of(a);
                    }
                }
            }
        }
    }
    out
}

/// Per-channel sum over batch and space, the bias gradient.
pub(crate) fn channel_sums<T: Real>(dy: &[T], yd: Dims5) -> Vec<T> {
    let plane = yd.voxels();
    (0..yd.c)
        .map(|o| {
            let mut s = 0f64;
            for n in 0..yd.n {
                for &v in &dy[(n * yd.c + o) * plane..][..plane] {
                    s += v.widen();
                }
            }
            T::of(s)
        })
        .collect()
}
