//! Mercer kernels and dense kernel matrices.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigenvalues, Matrix};
use crate::scalar::{dist_sq, dot, Scalar};

pub const DEFAULT_SIGMA: f64 = 0.7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", bound = "")]
pub enum KernelSpec<T: Scalar> {
    /// `exp(−‖x−y‖² / σ)`
    Gaussian { sigma: T },
    /// `(xᵀy + τ)^p`
    Polynomial { tau: T, degree: u32 },
}

impl<T: Scalar> Default for KernelSpec<T> {
    fn default() -> Self {
        KernelSpec::Gaussian {
            sigma: T::lit(DEFAULT_SIGMA),
        }
    }
}

impl<T: Scalar> KernelSpec<T> {
    pub fn gaussian(sigma: T) -> Result<Self> {
        let k = KernelSpec::Gaussian { sigma };
        k.validate()?;
        Ok(k)
    }

    pub fn polynomial(tau: T, degree: u32) -> Result<Self> {
        let k = KernelSpec::Polynomial { tau, degree };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Gaussian { sigma } if !(sigma > T::zero() && sigma.is_finite()) => Err(
                Error::invalid(format!("gaussian sigma must be positive, got {sigma}")),
            ),
            KernelSpec::Polynomial { tau, degree }
                if !(tau >= T::zero() && tau.is_finite()) || degree == 0 =>
            {
                Err(Error::invalid(format!(
                    "polynomial kernel needs tau >= 0 and degree >= 1, got tau={tau}, p={degree}"
                )))
            }
            _ => Ok(()),
        }
    }

    /// Kernel value without the dimension check.
    #[inline]
    pub fn eval(&self, x: &[T], y: &[T]) -> T {
        match *self {
            KernelSpec::Gaussian { sigma } => (-dist_sq(x, y) / sigma).exp(),
            KernelSpec::Polynomial { tau, degree } => {
                let base = dot(x, y) + tau;
                (0..degree).fold(T::one(), |acc, _| acc * base)
            }
        }
    }
}

pub fn kernel_eval<T: Scalar>(spec: &KernelSpec<T>, x: &[T], y: &[T]) -> Result<T> {
    if x.len() != y.len() {
        return Err(Error::Dimension {
            expected: x.len(),
            got: y.len(),
        });
    }
    Ok(spec.eval(x, y))
}

/// Dense `K_ij = K(x_i, x_j)`. Only the upper triangle is evaluated, so the
/// result is symmetric bit for bit.
pub fn kernel_matrix<T: Scalar>(spec: &KernelSpec<T>, points: &[Vec<T>]) -> Matrix<T> {
    let m = points.len();
    let upper: Vec<Vec<T>> = (0..m)
        .into_par_iter()
        .map(|i| (i..m).map(|j| spec.eval(&points[i], &points[j])).collect())
        .collect();
    Matrix::from_fn(m, |i, j| {
        if i <= j {
            upper[i][j - i]
        } else {
            upper[j][i - j]
        }
    })
}

/// Smallest eigenvalue of the kernel matrix on `points`.
pub fn min_eigenvalue<T: Scalar>(spec: &KernelSpec<T>, points: &[Vec<T>]) -> Option<T> {
    symmetric_eigenvalues(&kernel_matrix(spec, points))
        .first()
        .copied()
}
