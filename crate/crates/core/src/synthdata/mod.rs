//! Seeded paired pseudo-ultrasound / pseudo-MRI volumes.
//!
//! Both views derive from one latent scene of axis-aligned ellipsoids, so
//! the MRI view is a deterministic function of the scene the ultrasound
//! view observes through depth attenuation and speckle.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volumes::{write_nifti, Volume3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub side: usize,
    /// Speckle amplitude `a` in `(1 + a·η)`, `η ~ U[-1, 1]`.
    pub speckle: f64,
    /// Attenuation `α` in `exp(-α·z/S)` along the depth (z) axis.
    pub attenuation: f64,
}

impl SceneSpec {
    pub fn new(seed: u64, side: usize) -> Self {
        Self {
            seed,
            side,
            speckle: 0.3,
            attenuation: 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.side < 8 {
            return Err(Error::config(format!("scene side must be >= 8, got {}", self.side)));
        }
        if !(self.speckle >= 0.0 && self.attenuation >= 0.0) {
            return Err(Error::config("speckle and attenuation must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipsoid {
    pub center: [f64; 3],
    pub semi_axes: [f64; 3],
    pub intensity: f64,
}

impl Ellipsoid {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3)
            .map(|i| ((p[i] - self.center[i]) / self.semi_axes[i]).powi(2))
            .sum::<f64>()
            <= 1.0
    }
}

/// Draws 2 to 5 ellipsoids with semi-axes in `[S/8, S/3]`, intensities in
/// `[0.3, 1]` and centers keeping every ellipsoid inside `[0, S-1]³`.
pub fn scene_ellipsoids(spec: &SceneSpec) -> Result<Vec<Ellipsoid>> {
    spec.validate()?;
    let s = spec.side as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let count = rng.gen_range(2..=5);
    Ok((0..count)
        .map(|_| {
            let semi_axes: [f64; 3] = std::array::from_fn(|_| rng.gen_range(s / 8.0..=s / 3.0));
            let center = std::array::from_fn(|i| rng.gen_range(semi_axes[i]..=s - 1.0 - semi_axes[i]));
            let intensity = rng.gen_range(0.3..=1.0);
            Ellipsoid {
                center,
                semi_axes,
                intensity,
            }
        })
        .collect())
}

/// Latent scene: per voxel the largest intensity of the ellipsoids
/// containing it, 0 elsewhere. `x` fastest.
pub fn latent_scene(spec: &SceneSpec) -> Result<Vec<f32>> {
    let shapes = scene_ellipsoids(spec)?;
    let n = spec.side;
    let mut out = Vec::with_capacity(n * n * n);
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                let p = [x as f64, y as f64, z as f64];
                let v = shapes
                    .iter()
                    .filter(|e| e.contains(p))
                    .map(|e| e.intensity)
                    .fold(0.0, f64::max);
                out.push(v as f32);
            }
        }
    }
    Ok(out)
}

/// 3×3×3 mean over the in-bounds neighbours of each voxel.
pub fn box_filter(data: &[f32], n: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(data.len());
    let span = |c: usize| c.saturating_sub(1)..(c + 2).min(n);
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                let mut sum = 0.0f64;
                let mut count = 0u32;
                for zz in span(z) {
                    for yy in span(y) {
                        for xx in span(x) {
                            sum += data[(zz * n + yy) * n + xx] as f64;
                            count += 1;
                        }
                    }
                }
                out.push((sum / count as f64) as f32);
            }
        }
    }
    out
}

/// Linear map of `[min, max]` onto `[0, 1]`; all zeros when constant.
pub fn min_max(data: &[f32]) -> Vec<f32> {
    let lo = data.iter().copied().fold(f32::INFINITY, f32::min) as f64;
    let hi = data.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    if !(hi > lo) {
        return vec![0.0; data.len()];
    }
    data.iter()
        .map(|&v| ((v as f64 - lo) / (hi - lo)) as f32)
        .collect()
}

/// `(us, mri)` on a unit-spaced `S³` grid, values in `[0, 1]`.
pub fn generate_pair(spec: &SceneSpec) -> Result<(Volume3, Volume3)> {
    let scene = latent_scene(spec)?;
    let n = spec.side;
    let mri = min_max(&box_filter(&scene, n));

    let mut noise = ChaCha8Rng::seed_from_u64(spec.seed);
    noise.set_stream(1);
    let mut us = Vec::with_capacity(scene.len());
    for (i, &s) in scene.iter().enumerate() {
        let z = (i / (n * n)) as f64;
        let eta: f64 = noise.gen_range(-1.0..=1.0);
        let v = s as f64 * (-spec.attenuation * z / n as f64).exp() * (1.0 + spec.speckle * eta);
        us.push(v.clamp(0.0, 1.0) as f32);
    }
    let extents = [n; 3];
    Ok((
        Volume3::with_spacing(extents, [1.0; 3], us)?,
        Volume3::with_spacing(extents, [1.0; 3], mri)?,
    ))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub us: String,
    pub mri: String,
}

/// Case list with paths relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub train: Vec<ManifestEntry>,
    pub held_out: Vec<ManifestEntry>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

impl Manifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_NAME);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }
}

/// Number of held-out cases: the last 10%, at least one.
pub fn held_out_count(count: usize) -> usize {
    (count / 10).max(1)
}

/// Writes `case_<i>_us.nii` / `case_<i>_mri.nii` for `i < count`, case `i`
/// seeded with `seed ^ i`, and `manifest.json` holding out the last cases.
pub fn generate_dataset(seed: u64, count: usize, side: usize, out_dir: &Path) -> Result<Manifest> {
    if count < 2 {
        return Err(Error::config(format!(
            "need at least 2 cases (one held out), got {count}"
        )));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let (us, mri) = generate_pair(&SceneSpec::new(seed ^ i as u64, side))?;
        let entry = ManifestEntry {
            us: format!("case_{i}_us.nii"),
            mri: format!("case_{i}_mri.nii"),
        };
        write_nifti(&us, &out_dir.join(&entry.us))?;
        write_nifti(&mri, &out_dir.join(&entry.mri))?;
        entries.push(entry);
    }
    let held_out = entries.split_off(count - held_out_count(count));
    let manifest = Manifest {
        train: entries,
        held_out,
    };
    let path = out_dir.join(MANIFEST_NAME);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
