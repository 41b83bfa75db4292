//! Dense symmetric positive-definite matrices and their Cholesky factors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SYMMETRY_RTOL: f64 = 1e-12;
const JITTER_SCALE: f64 = 1e-8;

/// Symmetric D×D matrix stored row-major.
///
/// Construction checks symmetry (relative to the largest entry) and then
/// symmetrizes exactly, so `get(i, j) == get(j, i)` always holds bitwise.
/// Positive definiteness is checked by [`cholesky`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdMatrix {
    dim: usize,
    entries: Vec<f64>,
}

impl PsdMatrix {
    pub fn new(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                found: entries.len(),
            });
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix entries".into()));
        }
        let scale = entries.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        for i in 0..dim {
            for j in (i + 1)..dim {
                let (a, b) = (entries[i * dim + j], entries[j * dim + i]);
                if (a - b).abs() > SYMMETRY_RTOL * scale {
                    return Err(Error::NotSymmetric { row: i, col: j });
                }
            }
        }
        let mut m = PsdMatrix { dim, entries };
        m.symmetrize();
        Ok(m)
    }

    /// Builds from an arbitrary square buffer, forcing symmetry without a check.
    pub(crate) fn symmetrized(dim: usize, entries: Vec<f64>) -> Self {
        debug_assert_eq!(entries.len(), dim * dim);
        let mut m = PsdMatrix { dim, entries };
        m.symmetrize();
        m
    }

    pub fn identity(dim: usize) -> Self {
        Self::diagonal(&vec![1.0; dim])
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let dim = diag.len();
        let mut entries = vec![0.0; dim * dim];
        for (i, d) in diag.iter().enumerate() {
            entries[i * dim + i] = *d;
        }
        PsdMatrix { dim, entries }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries[row * self.dim + col]
    }

    /// Row-major entries.
    pub fn as_slice(&self) -> &[f64] {
        &self.entries
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        PsdMatrix {
            dim: self.dim,
            entries: self.entries.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn add_diagonal(&mut self, value: f64) {
        for i in 0..self.dim {
            self.entries[i * self.dim + i] += value;
        }
    }

    /// Adds `weight · v vᵀ`.
    pub fn add_outer(&mut self, v: &[f64], weight: f64) {
        let d = self.dim;
        for (row, vi) in self.entries.chunks_mut(d).zip(v) {
            let wi = weight * vi;
            for (e, vj) in row.iter_mut().zip(v) {
                *e += wi * vj;
            }
        }
    }

    pub(crate) fn add_scaled(&mut self, other: &PsdMatrix, weight: f64) {
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            *a += weight * b;
        }
    }

    fn symmetrize(&mut self) {
        let d = self.dim;
        for i in 0..d {
            for j in (i + 1)..d {
                let avg = 0.5 * (self.entries[i * d + j] + self.entries[j * d + i]);
                self.entries[i * d + j] = avg;
                self.entries[j * d + i] = avg;
            }
        }
    }
}

/// Lower-triangular L with L·Lᵀ equal to the factored matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    dim: usize,
    lower: Vec<f64>,
}

impl CholeskyFactor {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.lower[row * self.dim + col]
    }

    /// 2·Σ ln L_ii
    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.dim)
            .map(|i| self.lower[i * self.dim + i].ln())
            .sum::<f64>()
    }

    /// Solves L y = b in place.
    pub fn solve_lower_in_place(&self, b: &mut [f64]) {
        let d = self.dim;
        for i in 0..d {
            let row = &self.lower[i * d..i * d + i];
            let s: f64 = row.iter().zip(&b[..i]).map(|(l, y)| l * y).sum();
            b[i] = (b[i] - s) / self.lower[i * d + i];
        }
    }

    /// vᵀ M⁻¹ v for the factored M, overwriting `v` with L⁻¹v.
    pub(crate) fn inverse_quad_form_in_place(&self, v: &mut [f64]) -> f64 {
        self.solve_lower_in_place(v);
        v.iter().map(|y| y * y).sum()
    }

    pub fn reconstruct(&self) -> PsdMatrix {
        let d = self.dim;
        let mut out = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..=i {
                let s: f64 = (0..=j).map(|k| self.get(i, k) * self.get(j, k)).sum();
                out[i * d + j] = s;
                out[j * d + i] = s;
            }
        }
        PsdMatrix { dim: d, entries: out }
    }

    /// M⁻¹ via triangular inversion.
    pub fn inverse(&self) -> PsdMatrix {
        let d = self.dim;
        let mut out = vec![0.0; d * d];
        let mut col = vec![0.0; d];
        // M⁻¹ = L⁻ᵀ L⁻¹; column j of L⁻¹ solves L y = e_j.
        let mut linv = vec![0.0; d * d];
        for j in 0..d {
            col.iter_mut().for_each(|c| *c = 0.0);
            col[j] = 1.0;
            self.solve_lower_in_place(&mut col);
            for i in 0..d {
                linv[i * d + j] = col[i];
            }
        }
        for i in 0..d {
            for j in 0..=i {
                let s: f64 = (0..d).map(|k| linv[k * d + i] * linv[k * d + j]).sum();
                out[i * d + j] = s;
                out[j * d + i] = s;
            }
        }
        PsdMatrix { dim: d, entries: out }
    }
}

/// Cholesky factorization; fails with the first non-positive pivot.
pub fn cholesky(m: &PsdMatrix) -> Result<CholeskyFactor> {
    let d = m.dim;
    let mut lower = vec![0.0; d * d];
    for j in 0..d {
        let mut diag = m.get(j, j);
        for k in 0..j {
            diag -= lower[j * d + k] * lower[j * d + k];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(Error::NotPositiveDefinite {
                pivot: j,
                value: diag,
            });
        }
        let ljj = diag.sqrt();
        lower[j * d + j] = ljj;
        for i in (j + 1)..d {
            let mut s = m.get(i, j);
            for k in 0..j {
                s -= lower[i * d + k] * lower[j * d + k];
            }
            lower[i * d + j] = s / ljj;
        }
    }
    Ok(CholeskyFactor { dim: d, lower })
}

/// Factorizes, and on failure retries once with 1e-8·trace(M)/D added to the
/// diagonal. Returns the factor together with the matrix actually factored.
pub fn cholesky_with_jitter(m: &PsdMatrix) -> Result<(CholeskyFactor, Option<PsdMatrix>)> {
    match cholesky(m) {
        Ok(f) => Ok((f, None)),
        Err(first) => {
            let jitter = JITTER_SCALE * m.trace().abs() / m.dim.max(1) as f64;
            if !(jitter > 0.0) {
                return Err(first);
            }
            let mut bumped = m.clone();
            bumped.add_diagonal(jitter);
            let f = cholesky(&bumped)?;
            Ok((f, Some(bumped)))
        }
    }
}

pub fn log_det(f: &CholeskyFactor) -> f64 {
    f.log_det()
}

/// (x − center)ᵀ M⁻¹ (x − center) through a forward substitution on L.
pub fn mahalanobis_sq(x: &[f64], center: &[f64], f: &CholeskyFactor) -> Result<f64> {
    if x.len() != f.dim {
        return Err(Error::DimensionMismatch {
            expected: f.dim,
            found: x.len(),
        });
    }
    if center.len() != f.dim {
        return Err(Error::DimensionMismatch {
            expected: f.dim,
            found: center.len(),
        });
    }
    let mut diff: Vec<f64> = x.iter().zip(center).map(|(a, b)| a - b).collect();
    Ok(f.inverse_quad_form_in_place(&mut diff))
}
