//! Orthonormal DCT-II over fixed-length coordinate trajectories.
//!
//! The basis is stored densely: row `l`, column `n` holds
//! `sqrt(2/len) * cos(pi / (2 len) * (2n + 1) * l) / sqrt(1 + [l == 0])`.
//! Forward coefficients are `basis · x`; the inverse is `basisᵀ · c`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct DctBasis {
    len: usize,
    matrix: Vec<f64>,
}

impl DctBasis {
    pub fn new(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::Config("DCT length must be positive".into()));
        }
        let n = len as f64;
        let norm = (2.0 / n).sqrt();
        let mut matrix = vec![0.0; len * len];
        for l in 0..len {
            let dc = if l == 0 {
                std::f64::consts::FRAC_1_SQRT_2
            } else {
                1.0
            };
            for t in 0..len {
                let angle = std::f64::consts::PI / (2.0 * n) * (2 * t + 1) as f64 * l as f64;
                matrix[l * len + t] = norm * dc * angle.cos();
            }
        }
        Ok(Self { len, matrix })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Row-major `[len × len]` basis; row `l` is the `l`-th cosine.
    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    /// The basis as a tensor, for use as a tape constant. Multiplying a row
    /// vector of coefficients by it yields the trajectory.
    pub fn inverse_tensor(&self) -> Tensor {
        Tensor::new(&[self.len, self.len], self.matrix.clone()).unwrap()
    }

    fn check(&self, op: &'static str, data: &[f64]) -> Result<()> {
        if !data.len().is_multiple_of(self.len) {
            return Err(Error::Length {
                op,
                expected: self.len,
                actual: data.len() % self.len,
            });
        }
        Ok(())
    }

    /// Coefficients of every length-`len` row of `x` (last axis).
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check("dct_forward", x)?;
        let mut out = vec![0.0; x.len()];
        for (row, dst) in x.chunks(self.len).zip(out.chunks_mut(self.len)) {
            for (l, d) in dst.iter_mut().enumerate() {
                let b = &self.matrix[l * self.len..(l + 1) * self.len];
                *d = b.iter().zip(row).map(|(u, v)| u * v).sum();
            }
        }
        Ok(out)
    }

    /// Trajectory for every row of coefficients (last axis).
    pub fn inverse(&self, c: &[f64]) -> Result<Vec<f64>> {
        self.check("dct_inverse", c)?;
        let mut out = vec![0.0; c.len()];
        for (row, dst) in c.chunks(self.len).zip(out.chunks_mut(self.len)) {
            for (l, &cl) in row.iter().enumerate() {
                let b = &self.matrix[l * self.len..(l + 1) * self.len];
                for (d, &bv) in dst.iter_mut().zip(b) {
                    *d += cl * bv;
                }
            }
        }
        Ok(out)
    }

    /// Forward transform that requires an exact single-row input.
    pub fn forward_exact(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.len {
            return Err(Error::Length {
                op: "dct_forward",
                expected: self.len,
                actual: x.len(),
            });
        }
        self.forward(x)
    }
}
