//! Landmark-based affine alignment of a moving volume onto a fixed grid,
//! mutual cropping and percentile intensity normalization.

mod affine;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volumes::Volume3;

pub use affine::{fit_affine, AffineTransform};

/// Corresponding voxel coordinates in the moving and fixed volumes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandmarkPair {
    pub moving: [f64; 3],
    pub fixed: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandmarkFile {
    pub pairs: Vec<LandmarkPair>,
}

pub fn read_landmarks(path: &Path) -> Result<Vec<LandmarkPair>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: LandmarkFile = serde_json::from_str(&text)
        .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
    Ok(file.pairs)
}

/// Target sampling grid: extents `(nx, ny, nz)`, spacing and voxel-to-world
/// affine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub extents: [usize; 3],
    pub spacing: [f64; 3],
    pub affine: [[f64; 4]; 4],
}

impl Grid {
    pub fn of(vol: &Volume3) -> Self {
        Self {
            extents: vol.extents(),
            spacing: vol.spacing(),
            affine: *vol.affine(),
        }
    }
}

/// Positions this close outside the grid (in voxels) are snapped onto its
/// boundary.
pub const EDGE_TOLERANCE: f64 = 1e-9;

/// Trilinear sample at a continuous voxel position; 0 outside
/// `[0, n-1]` (widened by [`EDGE_TOLERANCE`]) on any axis.
pub fn sample_trilinear(vol: &Volume3, p: [f64; 3]) -> f64 {
    let ext = vol.extents();
    let mut base = [0usize; 3];
    let mut frac = [0f64; 3];
    for i in 0..3 {
        let hi = (ext[i] - 1) as f64;
        if !(p[i] >= -EDGE_TOLERANCE && p[i] <= hi + EDGE_TOLERANCE) {
            return 0.0;
        }
        let p = p[i].clamp(0.0, hi);
        if ext[i] == 1 {
            continue;
        }
        let i0 = (p.floor() as usize).min(ext[i] - 2);
        base[i] = i0;
        frac[i] = p - i0 as f64;
    }
    let step = |i: usize| usize::from(ext[i] > 1);
    let mut acc = 0.0;
    for dz in 0..=step(2) {
        let wz = if dz == 0 { 1.0 - frac[2] } else { frac[2] };
        for dy in 0..=step(1) {
            let wy = if dy == 0 { 1.0 - frac[1] } else { frac[1] };
            for dx in 0..=step(0) {
                let wx = if dx == 0 { 1.0 - frac[0] } else { frac[0] };
                let v = vol.get(base[0] + dx, base[1] + dy, base[2] + dz) as f64;
                acc += wz * wy * wx * v;
            }
        }
    }
    acc
}

/// Resamples `moving` onto `grid`, where `transform` maps moving voxel
/// coordinates to grid voxel coordinates. Each output voxel `q` takes the
/// trilinear sample of `moving` at `T⁻¹(q)`.
pub fn resample_trilinear(
    moving: &Volume3,
    transform: &AffineTransform,
    grid: &Grid,
) -> Result<Volume3> {
    let inv = transform.inverse()?;
    let [nx, ny, nz] = grid.extents;
    let mut data = Vec::with_capacity(nx * ny * nz);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let p = inv.apply([x as f64, y as f64, z as f64]);
                data.push(sample_trilinear(moving, p) as f32);
            }
        }
    }
    Volume3::new(grid.extents, grid.spacing, grid.affine, data)
}

/// Half-open voxel box `[lower, upper)` per axis, `(x, y, z)` order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropBox {
    pub lower: [usize; 3],
    pub upper: [usize; 3],
}

impl CropBox {
    pub fn full(extents: [usize; 3]) -> Self {
        Self {
            lower: [0; 3],
            upper: extents,
        }
    }

    pub fn extents(&self) -> [usize; 3] {
        std::array::from_fn(|i| self.upper[i] - self.lower[i])
    }
}

/// Tight bounding box of the voxels where both `|a|` and `|b|` exceed
/// `threshold`.
pub fn mutual_crop_box(a: &Volume3, b: &Volume3, threshold: f64) -> Result<CropBox> {
    if a.extents() != b.extents() {
        return Err(Error::shape(format!(
            "crop needs volumes on one grid, got {:?} and {:?}",
            a.extents(),
            b.extents()
        )));
    }
    let [nx, ny, _] = a.extents();
    let mut lower = [usize::MAX; 3];
    let mut upper = [0usize; 3];
    for (i, (&va, &vb)) in a.data().iter().zip(b.data()).enumerate() {
        if (va as f64).abs() > threshold && (vb as f64).abs() > threshold {
            let p = [i % nx, (i / nx) % ny, i / (nx * ny)];
            for k in 0..3 {
                lower[k] = lower[k].min(p[k]);
                upper[k] = upper[k].max(p[k] + 1);
            }
        }
    }
    if lower[0] == usize::MAX {
        return Err(Error::NoOverlap(threshold));
    }
    Ok(CropBox { lower, upper })
}

/// Copy of the voxels inside `bx`; the affine is shifted so retained
/// voxels keep their world coordinates.
pub fn crop(vol: &Volume3, bx: &CropBox) -> Result<Volume3> {
    let ext = vol.extents();
    if (0..3).any(|i| bx.lower[i] >= bx.upper[i] || bx.upper[i] > ext[i]) {
        return Err(Error::shape(format!(
            "crop box {bx:?} is empty or outside extents {ext:?}"
        )));
    }
    let out_ext = bx.extents();
    let mut data = Vec::with_capacity(out_ext.iter().product());
    for z in bx.lower[2]..bx.upper[2] {
        for y in bx.lower[1]..bx.upper[1] {
            let row = vol.index(bx.lower[0], y, z);
            data.extend_from_slice(&vol.data()[row..row + out_ext[0]]);
        }
    }
    let mut affine = *vol.affine();
    let origin = vol.voxel_to_world(bx.lower.map(|v| v as f64));
    for (r, o) in origin.iter().enumerate() {
        affine[r][3] = *o;
    }
    Volume3::new(out_ext, vol.spacing(), affine, data)
}

/// Nearest-rank percentile: the `ceil(p/100 · N)`-th smallest value (rank
/// clamped to `[1, N]`).
pub fn percentile(values: &[f32], p: f64) -> Result<f32> {
    if values.is_empty() {
        return Err(Error::shape("percentile of an empty set"));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::config(format!("percentile must lie in [0,100], got {p}")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f32::total_cmp);
    let n = sorted.len();
    let rank = ((p / 100.0 * n as f64).ceil() as usize).clamp(1, n);
    Ok(sorted[rank - 1])
}

/// Percentiles used when preparing volumes for the networks.
pub const NETWORK_PERCENTILES: (f64, f64) = (0.0, 100.0);

/// Clips to the `[p_low, p_high]` percentile values and maps that range
/// linearly onto `[-1, 1]`; a degenerate range gives all zeros.
pub fn normalize_intensity(vol: &Volume3, p_low: f64, p_high: f64) -> Result<Volume3> {
    if !(0.0 <= p_low && p_low < p_high && p_high <= 100.0) {
        return Err(Error::config(format!(
            "need 0 <= p_low < p_high <= 100, got ({p_low}, {p_high})"
        )));
    }
    let lo = percentile(vol.data(), p_low)? as f64;
    let hi = percentile(vol.data(), p_high)? as f64;
    let data = if hi > lo {
        vol.data()
            .iter()
            .map(|&v| {
                let c = (v as f64).clamp(lo, hi);
                (2.0 * (c - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0) as f32
            })
            .collect()
    } else {
        vec![0.0; vol.len()]
    };
    vol.with_data(data)
}
