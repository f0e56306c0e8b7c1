//! Volumes on a voxel grid and NIfTI-1 single-file I/O.

mod nifti;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use nifti::{read_nifti, read_nifti_bytes, write_nifti, write_nifti_bytes};

/// A scalar volume with `x` fastest in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3 {
    extents: [usize; 3],
    spacing: [f64; 3],
    affine: [[f64; 4]; 4],
    data: Vec<f32>,
}

pub fn diagonal_affine(spacing: [f64; 3]) -> [[f64; 4]; 4] {
    let mut a = [[0.0; 4]; 4];
    for (i, s) in spacing.iter().enumerate() {
        a[i][i] = *s;
    }
    a[3][3] = 1.0;
    a
}

fn det3(m: &[[f64; 4]; 4]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

impl Volume3 {
    /// `extents` are `(nx, ny, nz)`; `affine` maps voxel to world
    /// coordinates (row-major 4×4).
    pub fn new(
        extents: [usize; 3],
        spacing: [f64; 3],
        affine: [[f64; 4]; 4],
        data: Vec<f32>,
    ) -> Result<Self> {
        if extents.contains(&0) {
            return Err(Error::shape(format!("extents must be >= 1, got {extents:?}")));
        }
        if !spacing.iter().all(|&s| s > 0.0 && s.is_finite()) {
            return Err(Error::config(format!("spacing must be positive, got {spacing:?}")));
        }
        let d = det3(&affine);
        if !(d.abs() > 0.0 && d.is_finite()) {
            return Err(Error::Singular("voxel-to-world affine has a singular 3x3 block".into()));
        }
        let n: usize = extents.iter().product();
        if data.len() != n {
            return Err(Error::shape(format!(
                "extents {extents:?} need {n} voxels, got {}",
                data.len()
            )));
        }
        Ok(Self {
            extents,
            spacing,
            affine,
            data,
        })
    }

    /// Volume with a diagonal voxel-to-world affine built from `spacing`.
    pub fn with_spacing(extents: [usize; 3], spacing: [f64; 3], data: Vec<f32>) -> Result<Self> {
        Self::new(extents, spacing, diagonal_affine(spacing), data)
    }

    pub fn filled(extents: [usize; 3], value: f32) -> Result<Self> {
        let n = extents.iter().product();
        Self::with_spacing(extents, [1.0; 3], vec![value; n])
    }

    pub fn extents(&self) -> [usize; 3] {
        self.extents
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn affine(&self) -> &[[f64; 4]; 4] {
        &self.affine
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.extents[1] + y) * self.extents[0] + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.index(x, y, z)]
    }

    /// World coordinates of a (possibly fractional) voxel position.
    pub fn voxel_to_world(&self, p: [f64; 3]) -> [f64; 3] {
        let a = &self.affine;
        std::array::from_fn(|r| a[r][0] * p[0] + a[r][1] * p[1] + a[r][2] * p[2] + a[r][3])
    }

    /// Same grid and geometry, new voxel values.
    pub fn with_data(&self, data: Vec<f32>) -> Result<Self> {
        Self::new(self.extents, self.spacing, self.affine, data)
    }
}

/// `[1, 1, nz, ny, nx]` tensor sharing the volume's memory order.
pub fn volume_to_tensor(vol: &Volume3) -> Tensor {
    let [nx, ny, nz] = vol.extents;
    Tensor::new(vec![1, 1, nz, ny, nx], vol.data.clone()).expect("extents match data")
}

/// Inverse of [`volume_to_tensor`], taking spacing and affine from
/// `template`.
pub fn tensor_to_volume(t: &Tensor, template: &Volume3) -> Result<Volume3> {
    let [nx, ny, nz] = template.extents;
    if t.shape() != [1, 1, nz, ny, nx] {
        return Err(Error::shape(format!(
            "tensor {:?} does not match template extents {:?}",
            t.shape(),
            template.extents
        )));
    }
    template.with_data(t.data().to_vec())
}
