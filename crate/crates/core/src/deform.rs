//! Dictionaries, latent codes and the affine deformation action.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::geometry::PointCloud;
use crate::linalg::{Matrix, Vector};
use crate::{Error, Result};

/// Columns with a norm below this are passed through unnormalized.
pub const NORMALIZE_EPS: f64 = 1e-8;

/// A shape's deformation dictionary `A_x` (`3n × k`), columns unit length.
#[derive(Clone, Debug, PartialEq)]
pub struct Dictionary {
    matrix: Matrix,
    unnormalized_columns: usize,
}

impl Dictionary {
    /// Normalizes each column of a raw prediction. Returns the dictionary and
    /// the original column norms.
    pub fn from_raw(mut raw: Matrix) -> (Dictionary, Vec<f64>) {
        let (rows, k) = (raw.rows(), raw.cols());
        let mut norms = Vec::with_capacity(k);
        let mut skipped = 0;
        for j in 0..k {
            let mut s = 0.0;
            for i in 0..rows {
                let v = raw.get(i, j);
                s += v * v;
            }
            let norm = libm::sqrt(s);
            norms.push(norm);
            if norm < NORMALIZE_EPS {
                skipped += 1;
                continue;
            }
            for i in 0..rows {
                raw.set(i, j, raw.get(i, j) / norm);
            }
        }
        (
            Dictionary {
                matrix: raw,
                unnormalized_columns: skipped,
            },
            norms,
        )
    }

    /// Wraps a matrix that is already normalized (e.g. read back from disk).
    pub fn from_normalized(matrix: Matrix) -> Dictionary {
        Dictionary {
            matrix,
            unnormalized_columns: 0,
        }
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn k(&self) -> usize {
        self.matrix.cols()
    }

    pub fn n(&self) -> usize {
        self.matrix.rows() / 3
    }

    /// Columns whose norm fell below [`NORMALIZE_EPS`].
    pub fn unnormalized_columns(&self) -> usize {
        self.unnormalized_columns
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.matrix.column(j)
    }

    pub fn columns(&self) -> Vec<Vec<f64>> {
        (0..self.k()).map(|j| self.column(j)).collect()
    }
}

/// Encoder output `E(x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LatentCode(pub Vector);

/// Latent deformation `v = E(y) − E(x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LatentDelta(pub Vector);

impl LatentCode {
    pub fn k(&self) -> usize {
        self.0.len()
    }
}

impl LatentDelta {
    pub fn k(&self) -> usize {
        self.0.len()
    }

    pub fn zeros(k: usize) -> Self {
        LatentDelta(Vector::zeros(k))
    }

    pub fn negated(&self) -> Self {
        LatentDelta(Vector::from_vec_unchecked(self.0.iter().map(|v| -v).collect()))
    }
}

pub fn latent_delta(e_src: &LatentCode, e_tgt: &LatentCode) -> Result<LatentDelta> {
    if e_src.k() != e_tgt.k() {
        return Err(Error::dim("latent codes", e_src.k(), e_tgt.k()));
    }
    let v: Vec<f64> = e_tgt.0.iter().zip(e_src.0.iter()).map(|(t, s)| t - s).collect();
    Ok(LatentDelta(Vector::from_vec(v)?))
}

/// `x ⊕ v = A_x v + x`.
pub fn apply(x: &PointCloud, dict: &Dictionary, v: &LatentDelta) -> Result<PointCloud> {
    if dict.n() != x.len() || dict.matrix().rows() != 3 * x.len() {
        return Err(Error::dim("dictionary rows vs cloud", 3 * x.len(), dict.matrix().rows()));
    }
    if v.k() != dict.k() {
        return Err(Error::dim("latent delta vs dictionary", dict.k(), v.k()));
    }
    let offset = dict.matrix().matvec(&v.0)?;
    let flat: Vec<f64> = x.flatten().iter().zip(offset.iter()).map(|(p, o)| p + o).collect();
    PointCloud::from_flat(&flat)
}
