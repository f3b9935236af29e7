//! Abstract real linear maps `R^n -> R^q` consumed by the recovery stage.

use ndarray::{Array2, ArrayView1};

use crate::scalar::Real;

/// A real linear map with its adjoint.
///
/// Dense Gaussian matrices and the matrix-free structured operator both
/// implement this, so sparse recovery runs unchanged on either.
pub trait LinearMap<T: Real>: Send + Sync {
    /// Output dimension.
    fn nrows(&self) -> usize;

    /// Input dimension.
    fn ncols(&self) -> usize;

    fn apply(&self, x: &[T]) -> Vec<T>;

    fn adjoint(&self, y: &[T]) -> Vec<T>;

    /// Dense copy of the listed columns if the map can produce one cheaply.
    fn columns(&self, _support: &[usize]) -> Option<Array2<T>> {
        None
    }

    /// Applies the map to a vector supported on `support` with the given values.
    fn apply_sparse(&self, support: &[usize], coeffs: &[T]) -> Vec<T> {
        let mut x = vec![T::zero(); self.ncols()];
        for (&j, &c) in support.iter().zip(coeffs) {
            x[j] = c;
        }
        self.apply(&x)
    }

    /// Adjoint followed by restriction to `support`.
    fn adjoint_restricted(&self, support: &[usize], y: &[T]) -> Vec<T> {
        let full = self.adjoint(y);
        support.iter().map(|&j| full[j]).collect()
    }
}

impl<T: Real> LinearMap<T> for Array2<T> {
    fn nrows(&self) -> usize {
        self.nrows()
    }

    fn ncols(&self) -> usize {
        self.ncols()
    }

    fn apply(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.ncols(), "apply: input length");
        self.dot(&ArrayView1::from(x)).to_vec()
    }

    fn adjoint(&self, y: &[T]) -> Vec<T> {
        assert_eq!(y.len(), self.nrows(), "adjoint: input length");
        // Row-wise axpy keeps the access pattern contiguous for row-major storage.
        let mut out = ndarray::Array1::<T>::zeros(self.ncols());
        for (row, &yi) in self.rows().into_iter().zip(y) {
            if yi != T::zero() {
                out.scaled_add(yi, &row);
            }
        }
        out.to_vec()
    }

    fn columns(&self, support: &[usize]) -> Option<Array2<T>> {
        Some(self.select(ndarray::Axis(1), support))
    }

    fn apply_sparse(&self, support: &[usize], coeffs: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.nrows()];
        for (i, row) in self.rows().into_iter().enumerate() {
            out[i] = support
                .iter()
                .zip(coeffs)
                .map(|(&j, &c)| row[j] * c)
                .sum();
        }
        out
    }

    fn adjoint_restricted(&self, support: &[usize], y: &[T]) -> Vec<T> {
        support
            .iter()
            .map(|&j| self.column(j).iter().zip(y).map(|(&a, &b)| a * b).sum())
            .collect()
    }
}

/// Columns of another map picked out by a support set, as a map `R^|S| -> R^q`.
pub(crate) struct Restricted<'a, T: Real> {
    pub inner: &'a dyn LinearMap<T>,
    pub support: &'a [usize],
}

impl<T: Real> LinearMap<T> for Restricted<'_, T> {
    fn nrows(&self) -> usize {
        self.inner.nrows()
    }

    fn ncols(&self) -> usize {
        self.support.len()
    }

    fn apply(&self, x: &[T]) -> Vec<T> {
        self.inner.apply_sparse(self.support, x)
    }

    fn adjoint(&self, y: &[T]) -> Vec<T> {
        self.inner.adjoint_restricted(self.support, y)
    }
}
