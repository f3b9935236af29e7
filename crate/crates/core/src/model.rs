//! Domain types shared across the crate.

use ndarray::Array2;
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linmap::LinearMap;
use crate::scalar::{norm2, Real};

/// A real vector with a declared sparsity budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseSignal<T> {
    pub values: Vec<T>,
    pub sparsity: usize,
    /// Euclidean-norm bound `R`, if one is declared.
    pub norm_bound: Option<T>,
}

impl<T: Real> SparseSignal<T> {
    /// Wraps `values`, rejecting vectors with more than `sparsity` nonzeros.
    pub fn new(values: Vec<T>, sparsity: usize) -> Result<Self> {
        let signal = SparseSignal {
            values,
            sparsity,
            norm_bound: None,
        };
        signal.check()?;
        Ok(signal)
    }

    pub fn zeros(len: usize, sparsity: usize) -> Self {
        SparseSignal {
            values: vec![T::zero(); len],
            sparsity,
            norm_bound: None,
        }
    }

    pub fn with_norm_bound(mut self, bound: T) -> Result<Self> {
        self.norm_bound = Some(bound);
        self.check()?;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn nnz(&self) -> usize {
        self.values.iter().filter(|v| **v != T::zero()).count()
    }

    pub fn norm(&self) -> T {
        norm2(&self.values)
    }

    /// Indices of the nonzero entries, ascending.
    pub fn support(&self) -> Vec<usize> {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != T::zero())
            .map(|(i, _)| i)
            .collect()
    }

    fn check(&self) -> Result<()> {
        if self.nnz() > self.sparsity {
            return Err(Error::InvalidSparsity {
                sparsity: self.sparsity,
                len: self.len(),
            });
        }
        if let Some(r) = self.norm_bound {
            let slack = T::lit(1e-12) * r.max(T::one());
            if self.norm() > r + slack {
                return Err(Error::InvalidSpec(format!(
                    "signal norm {} exceeds declared bound {}",
                    self.norm(),
                    r
                )));
            }
        }
        Ok(())
    }
}

/// The outer factor `D`: `k` diagonal `q x q` blocks stacked vertically.
///
/// Row `r` of `diagonals` is the diagonal of block `r`, so column `l` is the
/// vector of sample times used to estimate coordinate `l` of `z = Bx`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockDiagonal<T> {
    pub diagonals: Array2<T>,
}

impl<T: Real> BlockDiagonal<T> {
    pub fn new(diagonals: Array2<T>) -> Result<Self> {
        if diagonals.nrows() == 0 {
            return Err(Error::DimensionMismatch {
                what: "block count k",
                expected: 1,
                found: 0,
            });
        }
        if diagonals.ncols() == 0 {
            return Err(Error::DimensionMismatch {
                what: "block size q",
                expected: 1,
                found: 0,
            });
        }
        if diagonals.iter().any(|d| !d.is_finite()) {
            return Err(Error::InvalidSpec("non-finite block entry".into()));
        }
        Ok(BlockDiagonal { diagonals })
    }

    pub fn k(&self) -> usize {
        self.diagonals.nrows()
    }

    pub fn q(&self) -> usize {
        self.diagonals.ncols()
    }

    pub fn m(&self) -> usize {
        self.k() * self.q()
    }

    /// Sample times for coordinate `l`, one per block.
    pub fn times(&self, l: usize) -> Vec<T> {
        self.diagonals.column(l).to_vec()
    }

    pub fn max_abs(&self) -> T {
        self.diagonals
            .iter()
            .fold(T::zero(), |acc, &d| acc.max(d.abs()))
    }

    /// `D z`, laid out block after block (index `r * q + l`).
    pub fn apply(&self, z: &[T]) -> Vec<T> {
        assert_eq!(z.len(), self.q());
        self.diagonals
            .rows()
            .into_iter()
            .flat_map(|row| row.iter().zip(z).map(|(&d, &zl)| d * zl).collect::<Vec<_>>())
            .collect()
    }

    /// `D^T w` for `w` of length `m`.
    pub fn adjoint(&self, w: &[T]) -> Vec<T> {
        assert_eq!(w.len(), self.m());
        let q = self.q();
        let mut out = vec![T::zero(); q];
        for (r, row) in self.diagonals.rows().into_iter().enumerate() {
            for (l, &d) in row.iter().enumerate() {
                out[l] += d * w[r * q + l];
            }
        }
        out
    }
}

/// The factorized sensing map `A = D B`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensingOperator<T, M = Array2<T>> {
    /// Inner map `B: R^n -> R^q`.
    pub inner: M,
    pub blocks: BlockDiagonal<T>,
}

impl<T: Real, M: LinearMap<T>> SensingOperator<T, M> {
    pub fn new(inner: M, blocks: BlockDiagonal<T>) -> Result<Self> {
        if inner.nrows() != blocks.q() {
            return Err(Error::DimensionMismatch {
                what: "block size q",
                expected: inner.nrows(),
                found: blocks.q(),
            });
        }
        Ok(SensingOperator { inner, blocks })
    }

    pub fn n(&self) -> usize {
        self.inner.ncols()
    }

    pub fn q(&self) -> usize {
        self.inner.nrows()
    }

    pub fn k(&self) -> usize {
        self.blocks.k()
    }

    pub fn m(&self) -> usize {
        self.blocks.m()
    }

    /// `A x = D B x`.
    pub fn apply_full(&self, x: &[T]) -> Vec<T> {
        self.blocks.apply(&self.inner.apply(x))
    }

    /// `A^T w = B^T D^T w`.
    pub fn adjoint_full(&self, w: &[T]) -> Vec<T> {
        self.inner.adjoint(&self.blocks.adjoint(w))
    }
}

/// Checks that an operator and a signal fit together.
pub fn validate<T: Real, M: LinearMap<T>>(
    op: &SensingOperator<T, M>,
    signal: &SparseSignal<T>,
) -> Result<()> {
    if op.k() == 0 || op.q() == 0 {
        return Err(Error::DimensionMismatch {
            what: "measurement count m = k q",
            expected: 1,
            found: 0,
        });
    }
    if op.blocks.q() != op.q() {
        return Err(Error::DimensionMismatch {
            what: "block size q",
            expected: op.q(),
            found: op.blocks.q(),
        });
    }
    if op.n() != signal.len() {
        return Err(Error::DimensionMismatch {
            what: "signal length n",
            expected: op.n(),
            found: signal.len(),
        });
    }
    signal.check()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkType {
    /// `y = exp(i D B x) + e`
    ComplexExp,
    /// `y = sin(D B x) + e`
    RealSine,
}

impl LinkType {
    pub fn name(self) -> &'static str {
        match self {
            LinkType::ComplexExp => "complex_exp",
            LinkType::RealSine => "real_sine",
        }
    }
}

impl std::str::FromStr for LinkType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "complex_exp" | "complex" | "exp" => Ok(LinkType::ComplexExp),
            "real_sine" | "sine" | "sin" => Ok(LinkType::RealSine),
            other => Err(Error::Parse(format!("unknown link `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureData<T> {
    Complex(Vec<Complex<T>>),
    Real(Vec<T>),
}

/// Observed random features together with the noise level used to make them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector<T> {
    pub data: FeatureData<T>,
    pub noise_sigma: T,
}

impl<T: Real> FeatureVector<T> {
    pub fn link(&self) -> LinkType {
        match self.data {
            FeatureData::Complex(_) => LinkType::ComplexExp,
            FeatureData::Real(_) => LinkType::RealSine,
        }
    }

    pub fn len(&self) -> usize {
        match &self.data {
            FeatureData::Complex(v) => v.len(),
            FeatureData::Real(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Real-valued view: the features themselves for the sine link, the real
    /// part for the complex link.
    pub fn real_part(&self) -> Vec<T> {
        match &self.data {
            FeatureData::Complex(v) => v.iter().map(|c| c.re).collect(),
            FeatureData::Real(v) => v.clone(),
        }
    }

    pub(crate) fn check_len(&self, m: usize) -> Result<()> {
        if self.len() != m {
            return Err(Error::DimensionMismatch {
                what: "feature length m",
                expected: m,
                found: self.len(),
            });
        }
        Ok(())
    }
}

/// Search set `[-omega, omega]` for the matched filter, searched coarse to fine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToneGrid<T> {
    pub omega: T,
    pub coarse_points: usize,
    pub refine_rounds: usize,
    pub refine_factor: usize,
}

impl<T: Real> ToneGrid<T> {
    pub const DEFAULT_COARSE_POINTS: usize = 4096;
    pub const DEFAULT_REFINE_ROUNDS: usize = 3;
    pub const DEFAULT_REFINE_FACTOR: usize = 16;

    pub fn new(
        omega: T,
        coarse_points: usize,
        refine_rounds: usize,
        refine_factor: usize,
    ) -> Result<Self> {
        let grid = ToneGrid {
            omega,
            coarse_points,
            refine_rounds,
            refine_factor,
        };
        grid.check()?;
        Ok(grid)
    }

    /// Default resolution settings over `[-omega, omega]`.
    pub fn with_omega(omega: T) -> Result<Self> {
        Self::new(
            omega,
            Self::DEFAULT_COARSE_POINTS,
            Self::DEFAULT_REFINE_ROUNDS,
            Self::DEFAULT_REFINE_FACTOR,
        )
    }

    pub(crate) fn check(&self) -> Result<()> {
        if self.coarse_points == 0 {
            return Err(Error::EmptyGrid);
        }
        if !(self.omega > T::zero()) || !self.omega.is_finite() {
            return Err(Error::InvalidSpec(format!("grid half-width {} must be positive", self.omega)));
        }
        if self.coarse_points < 3 {
            return Err(Error::InvalidSpec("tone grid needs at least 3 coarse points".into()));
        }
        if self.refine_rounds > 0 && self.refine_factor < 2 {
            return Err(Error::InvalidSpec("refine factor must be at least 2".into()));
        }
        Ok(())
    }

    pub fn coarse_step(&self) -> T {
        T::lit(2.0) * self.omega / T::from_count(self.coarse_points - 1)
    }

    /// Coarse grid point `j`, `0 <= j < coarse_points`.
    ///
    /// Written so that point `P-1-j` is exactly the negation of point `j`.
    pub fn point(&self, j: usize) -> T {
        let last = T::from_count(self.coarse_points - 1);
        self.omega * ((T::lit(2.0) * T::from_count(j) - last) / last)
    }

    /// Spacing of the last refinement pass.
    pub fn final_resolution(&self) -> T {
        self.coarse_step() / T::from_count(self.refine_factor).powi(self.refine_rounds as i32)
    }

    /// Rejects grids whose coarse step would let the true peak fall between
    /// samples when sample times reach `max_abs_t`.
    pub fn check_resolution(&self, max_abs_t: T) -> Result<()> {
        if max_abs_t <= T::zero() {
            return Ok(());
        }
        let limit = T::one() / (T::lit(2.0) * max_abs_t);
        let step = self.coarse_step();
        if step > limit {
            return Err(Error::GridTooCoarse {
                step: step.as_f64(),
                limit: limit.as_f64(),
            });
        }
        Ok(())
    }
}
