//! Small dense linear algebra on covariance matrices.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::MAX_DIM;

const SYMMETRY_TOL: f64 = 1e-12;

/// A symmetric positive definite `d × d` matrix with its lower Cholesky factor.
#[derive(Clone, Debug, PartialEq)]
pub struct Covariance {
    matrix: DMatrix<f64>,
    chol: DMatrix<f64>,
}

impl Covariance {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let d = matrix.nrows();
        if d == 0 || d != matrix.ncols() {
            return Err(invalid("covariance must be a non-empty square matrix"));
        }
        if d > MAX_DIM {
            return Err(invalid(format!(
                "dimension {d} exceeds the maximum {MAX_DIM}"
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateCovariance);
        }
        let scale = matrix.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0);
        for i in 0..d {
            for j in 0..i {
                if (matrix[(i, j)] - matrix[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return Err(Error::DegenerateCovariance);
                }
            }
        }
        let sym = (&matrix + matrix.transpose()) * 0.5;
        let chol = sym
            .clone()
            .cholesky()
            .ok_or(Error::DegenerateCovariance)?
            .l();
        // Cholesky succeeds on matrices that are PD only up to rounding; insist
        // on a clearly positive smallest eigenvalue.
        let eig = SymmetricEigen::new(sym.clone());
        let min_eig = eig
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if min_eig <= 1e-14 * scale {
            return Err(Error::DegenerateCovariance);
        }
        Ok(Self { matrix: sym, chol })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(invalid("covariance rows must form a square matrix"));
        }
        Self::new(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
    }

    pub fn scalar(variance: f64) -> Result<Self> {
        Self::new(DMatrix::from_element(1, 1, variance))
    }

    pub fn identity(dim: usize) -> Result<Self> {
        Self::new(DMatrix::identity(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[(i, j)]
    }

    /// Lower-triangular `L` with `L Lᵀ = Σ`.
    pub fn cholesky_lower(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace()
    }

    /// Largest absolute eigenvalue.
    pub fn lambda_max(&self) -> f64 {
        lambda_max(&self.matrix)
    }

    pub fn lambda_min(&self) -> f64 {
        SymmetricEigen::new(self.matrix.clone())
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Sum of absolute entries, a bound on `|tr(Σ H)|` per unit of `max |H_ij|`.
    pub fn abs_sum(&self) -> f64 {
        self.matrix.iter().map(|v| v.abs()).sum()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(&self.matrix * factor)
    }

    pub fn add(&self, other: &Covariance) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Self::new(&self.matrix + &other.matrix)
    }

    /// `tr(Σ H)` for a row-major `d × d` matrix `H`.
    pub fn trace_product(&self, hessian: &[f64]) -> f64 {
        let d = self.dim();
        let mut acc = 0.0;
        for i in 0..d {
            for j in 0..d {
                acc += self.matrix[(i, j)] * hessian[j * d + i];
            }
        }
        acc
    }

    /// `L z` written into `out`.
    pub fn transform(&self, z: &[f64], out: &mut [f64]) {
        let d = self.dim();
        for i in 0..d {
            let mut acc = 0.0;
            for j in 0..=i {
                acc += self.chol[(i, j)] * z[j];
            }
            out[i] = acc;
        }
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        (0..d)
            .map(|i| (0..d).map(|j| self.matrix[(i, j)]).collect())
            .collect()
    }
}

impl Serialize for Covariance {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Covariance {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        Covariance::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// `max |λ|` over the eigenvalues of a symmetric matrix.
pub fn lambda_max(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Inverse and determinant of a symmetric positive definite matrix.
pub(crate) fn spd_inverse(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let chol = m.clone().cholesky().ok_or(Error::DegenerateCovariance)?;
    let det = chol.l().diagonal().iter().map(|v| v * v).product();
    Ok((chol.inverse(), det))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rejects_degenerate_and_asymmetric() {
        assert!(Covariance::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).is_err());
        assert!(Covariance::from_rows(&[vec![1.0, 0.5], vec![0.4, 1.0]]).is_err());
        assert!(Covariance::scalar(0.0).is_err());
        assert!(Covariance::scalar(-1.0).is_err());
    }

    #[test]
    fn trace_and_eigen() {
        let c = Covariance::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        assert_relative_eq!(c.trace(), 4.0);
        assert_relative_eq!(c.lambda_max(), 3.0, epsilon = 1e-12);
        assert_relative_eq!(c.lambda_min(), 1.0, epsilon = 1e-12);
        let l = c.cholesky_lower();
        let back = l * l.transpose();
        assert_relative_eq!(back, c.matrix().clone(), epsilon = 1e-12);
        // tr(Σ I) = tr Σ
        assert_relative_eq!(c.trace_product(&[1.0, 0.0, 0.0, 1.0]), 4.0);
    }

    #[test]
    fn inverse_determinant() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let (inv, det) = spd_inverse(&m).unwrap();
        assert_relative_eq!(det, 11.0, epsilon = 1e-12);
        assert_relative_eq!(&m * inv, DMatrix::identity(2, 2), epsilon = 1e-12);
    }
}
