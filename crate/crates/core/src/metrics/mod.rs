//! Structural similarity for volumes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Window {
    Gaussian { sigma: f64 },
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SsimMode {
    Global,
    /// Mean of local SSIM under a cubic window of odd `side`, renormalized
    /// over the part of the window inside the volume.
    Windowed { side: usize, window: Window },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub dynamic_range: f64,
    pub k1: f64,
    pub k2: f64,
    pub mode: SsimMode,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            dynamic_range: 1.0,
            k1: 0.01,
            k2: 0.03,
            mode: SsimMode::Windowed {
                side: 7,
                window: Window::Gaussian { sigma: 1.5 },
            },
        }
    }
}

impl SsimParams {
    pub fn global() -> Self {
        Self {
            mode: SsimMode::Global,
            ..Self::default()
        }
    }

    fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }
}

/// Weighted sums of intensities taken relative to a reference pair, so
/// locally constant regions produce exactly zero variance.
struct Moments {
    ra: f64,
    rb: f64,
    w: f64,
    a: f64,
    b: f64,
    aa: f64,
    bb: f64,
    ab: f64,
}

impl Moments {
    fn around(ra: f64, rb: f64) -> Self {
        Self {
            ra,
            rb,
            w: 0.0,
            a: 0.0,
            b: 0.0,
            aa: 0.0,
            bb: 0.0,
            ab: 0.0,
        }
    }

    #[inline]
    fn push(&mut self, w: f64, a: f64, b: f64) {
        let (a, b) = (a - self.ra, b - self.rb);
        self.w += w;
        self.a += w * a;
        self.b += w * b;
        self.aa += w * a * a;
        self.bb += w * b * b;
        self.ab += w * (a * b);
    }

    fn ssim(&self, c1: f64, c2: f64) -> f64 {
        let da = self.a / self.w;
        let db = self.b / self.w;
        let var_a = self.aa / self.w - da * da;
        let var_b = self.bb / self.w - db * db;
        let cov = self.ab / self.w - da * db;
        let mu_a = self.ra + da;
        let mu_b = self.rb + db;
        ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
            / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2))
    }
}

fn spatial<T: Real>(t: &Tensor<T>) -> Result<[usize; 3]> {
    let s = t.shape();
    if s.len() < 3 || s[..s.len() - 3].iter().any(|&e| e != 1) {
        return Err(Error::shape(format!(
            "ssim expects a single volume ([D,H,W] or [1,..,1,D,H,W]), got {s:?}"
        )));
    }
    Ok([s[s.len() - 3], s[s.len() - 2], s[s.len() - 1]])
}

fn check_pair<T: Real>(a: &Tensor<T>, b: &Tensor<T>, params: &SsimParams) -> Result<[usize; 3]> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "ssim: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    if !(params.dynamic_range > 0.0) {
        return Err(Error::config("ssim dynamic range must be > 0"));
    }
    let dims = spatial(a)?;
    if let SsimMode::Windowed { side, window } = params.mode {
        let smallest = *dims.iter().min().expect("three axes");
        if side % 2 == 0 || side > smallest {
            return Err(Error::config(format!(
                "ssim window side must be odd and <= {smallest}, got {side}"
            )));
        }
        if let Window::Gaussian { sigma } = window {
            if !(sigma > 0.0) {
                return Err(Error::config("ssim Gaussian sigma must be > 0"));
            }
        }
    }
    Ok(dims)
}

/// Per-voxel local SSIM in windowed mode, row-major over `[D, H, W]`.
/// In global mode the map has a single entry.
pub fn ssim_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, params: &SsimParams) -> Result<Vec<f64>> {
    let [nd, nh, nw] = check_pair(a, b, params)?;
    let (c1, c2) = (params.c1(), params.c2());
    let (a, b) = (a.data(), b.data());
    let (side, window) = match params.mode {
        SsimMode::Global => {
            let mut m = Moments::around(a[0].widen(), b[0].widen());
            for (x, y) in a.iter().zip(b) {
                m.push(1.0, x.widen(), y.widen());
            }
            return Ok(vec![m.ssim(c1, c2)]);
        }
        SsimMode::Windowed { side, window } => (side, window),
    };

    let r = side / 2;
    let taps: Vec<f64> = (0..side)
        .map(|i| {
            let d = i as f64 - r as f64;
            match window {
                Window::Gaussian { sigma } => (-d * d / (2.0 * sigma * sigma)).exp(),
                Window::Uniform => 1.0,
            }
        })
        .collect();
    let range = |c: usize, n: usize| (c.saturating_sub(r), (c + r + 1).min(n));

    let mut out = Vec::with_capacity(nd * nh * nw);
    for z in 0..nd {
        let (z0, z1) = range(z, nd);
        for y in 0..nh {
            let (y0, y1) = range(y, nh);
            for x in 0..nw {
                let (x0, x1) = range(x, nw);
                let centre = (z * nh + y) * nw + x;
                let mut m = Moments::around(a[centre].widen(), b[centre].widen());
                for zz in z0..z1 {
                    let wz = taps[zz + r - z];
                    for yy in y0..y1 {
                        let wzy = wz * taps[yy + r - y];
                        let row = (zz * nh + yy) * nw;
                        for xx in x0..x1 {
                            let w = wzy * taps[xx + r - x];
                            m.push(w, a[row + xx].widen(), b[row + xx].widen());
                        }
                    }
                }
                out.push(m.ssim(c1, c2));
            }
        }
    }
    Ok(out)
}

/// Structural similarity of two same-shape volumes whose intensities lie
/// in `[0, dynamic_range]`.
pub fn ssim3d<T: Real>(a: &Tensor<T>, b: &Tensor<T>, params: &SsimParams) -> Result<f64> {
    let map = ssim_map(a, b, params)?;
    Ok(map.iter().sum::<f64>() / map.len() as f64)
}
