use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::LandmarkPair;

const PIVOT_TOLERANCE: f64 = 1e-10;

/// `q = A·p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub a: [[f64; 3]; 3],
    pub t: [f64; 3],
}

impl AffineTransform {
    pub fn identity() -> Self {
        Self {
            a: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            t: [0.0; 3],
        }
    }

    pub fn translation(t: [f64; 3]) -> Self {
        Self {
            t,
            ..Self::identity()
        }
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|r| {
            self.a[r][0] * p[0] + self.a[r][1] * p[1] + self.a[r][2] * p[2] + self.t[r]
        })
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        let a = std::array::from_fn(|r| {
            std::array::from_fn(|c| (0..3).map(|k| self.a[r][k] * other.a[k][c]).sum())
        });
        let t = self.apply(other.t);
        Self { a, t }
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.a;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn inverse(&self) -> Result<Self> {
        let mut rhs = [[0.0; 3]; 3];
        for (i, row) in rhs.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        let cols = solve(self.a.map(|r| r.to_vec()).to_vec(), rhs.map(|r| r.to_vec()).to_vec())
            .map_err(|_| Error::Singular("affine matrix is not invertible".into()))?;
        let a: [[f64; 3]; 3] = std::array::from_fn(|r| std::array::from_fn(|c| cols[r][c]));
        let neg_t = std::array::from_fn(|r| -(0..3).map(|k| a[r][k] * self.t[k]).sum::<f64>());
        Ok(Self { a, t: neg_t })
    }
}

/// Solves `M·X = B` (M square, B with several columns) by Gaussian
/// elimination with scaled partial pivoting.
fn solve(mut m: Vec<Vec<f64>>, mut b: Vec<Vec<f64>>) -> Result<Vec<Vec<f64>>> {
    let n = m.len();
    let scale: Vec<f64> = m
        .iter()
        .map(|row| row.iter().fold(0.0f64, |acc, v| acc.max(v.abs())))
        .collect();
    if scale.contains(&0.0) {
        return Err(Error::Singular("zero row in system matrix".into()));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    for col in 0..n {
        let (best, ratio) = (col..n)
            .map(|r| (r, m[r][col].abs() / scale[perm[r]]))
            .fold((col, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if !(ratio >= PIVOT_TOLERANCE) {
            return Err(Error::Singular(format!(
                "pivot {ratio:e} in column {col} below {PIVOT_TOLERANCE:e}"
            )));
        }
        m.swap(col, best);
        b.swap(col, best);
        perm.swap(col, best);
        for r in col + 1..n {
            let f = m[r][col] / m[col][col];
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                m[r][c] -= f * m[col][c];
            }
            for c in 0..b[r].len() {
                b[r][c] -= f * b[col][c];
            }
        }
    }
    for col in (0..n).rev() {
        for c in 0..b[col].len() {
            let mut v = b[col][c];
            for k in col + 1..n {
                v -= m[col][k] * b[k][c];
            }
            b[col][c] = v / m[col][col];
        }
    }
    Ok(b)
}

/// Least-squares affine mapping every `moving` point onto its `fixed`
/// partner, from the normal equations of the homogeneous system.
pub fn fit_affine(pairs: &[LandmarkPair]) -> Result<AffineTransform> {
    if pairs.len() < 4 {
        return Err(Error::InsufficientLandmarks(pairs.len()));
    }
    let mut xtx = vec![vec![0.0; 4]; 4];
    let mut xtq = vec![vec![0.0; 3]; 4];
    for pair in pairs {
        let h = [pair.moving[0], pair.moving[1], pair.moving[2], 1.0];
        for r in 0..4 {
            for c in 0..4 {
                xtx[r][c] += h[r] * h[c];
            }
            for c in 0..3 {
                xtq[r][c] += h[r] * pair.fixed[c];
            }
        }
    }
    let b = solve(xtx, xtq)
        .map_err(|e| Error::Singular(format!("landmarks are degenerate (coplanar?): {e}")))?;
    Ok(AffineTransform {
        a: std::array::from_fn(|r| std::array::from_fn(|c| b[c][r])),
        t: std::array::from_fn(|r| b[3][r]),
    })
}
