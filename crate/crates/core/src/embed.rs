//! Random sensing operators and the forward feature map `y = link(D B x) + e`.

use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex;
use rand::seq::index;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rustdct::{DctPlanner, TransformType2And3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linmap::LinearMap;
use crate::model::{BlockDiagonal, FeatureData, FeatureVector, LinkType, SensingOperator, SparseSignal};
use crate::scalar::{norm2, Real};
use crate::seed;

/// Fraction of the noise variance placed on each of the real and imaginary
/// parts of complex features. With one half each, `E|e_j|^2 = sigma^2` for
/// both links.
pub const COMPLEX_NOISE_SPLIT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerDist {
    /// Entries `N(0, 1/q)`; `E||Bx||^2 = ||x||^2`.
    GaussianVar1OverQ,
    /// Entries `N(0, 1/sqrt(q))`, the scaling used in the recovery experiments.
    GaussianVar1OverSqrtQ,
}

impl InnerDist {
    pub fn std_dev(self, q: usize) -> f64 {
        match self {
            InnerDist::GaussianVar1OverQ => (1.0 / q as f64).sqrt(),
            InnerDist::GaussianVar1OverSqrtQ => (q as f64).powf(-0.25),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockDist {
    /// Uniform on `[-t, t]`.
    UniformSym(f64),
    StandardNormal,
}

impl BlockDist {
    /// `E[d^2]` for one diagonal entry.
    pub fn mean_square(self) -> f64 {
        match self {
            BlockDist::UniformSym(t) => t * t / 3.0,
            BlockDist::StandardNormal => 1.0,
        }
    }

    fn sample(self, rng: &mut seed::Rng) -> f64 {
        match self {
            BlockDist::UniformSym(t) => t * (2.0 * rng.random::<f64>() - 1.0),
            BlockDist::StandardNormal => StandardNormal.sample(rng),
        }
    }

    fn check(self) -> Result<()> {
        match self {
            BlockDist::UniformSym(t) if !(t > 0.0 && t.is_finite()) => Err(Error::InvalidSpec(
                format!("uniform block half-width must be positive, got {t}"),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatorSpec {
    pub n: usize,
    pub q: usize,
    pub k: usize,
    pub inner_dist: InnerDist,
    pub block_dist: BlockDist,
    pub seed: u64,
}

impl OperatorSpec {
    fn check(&self) -> Result<()> {
        for (name, v) in [("n", self.n), ("q", self.q), ("k", self.k)] {
            if v == 0 {
                return Err(Error::InvalidSpec(format!("dimension {name} must be positive")));
            }
        }
        self.block_dist.check()
    }
}

/// Draws a dense Gaussian operator.
///
/// One ChaCha8 stream keyed by `spec.seed` fills `B` row-major and then the
/// block diagonals row-major, so the result depends only on `spec`.
pub fn make_operator<T: Real>(spec: &OperatorSpec) -> Result<SensingOperator<T>> {
    spec.check()?;
    let mut rng = seed::rng(spec.seed);
    let std = spec.inner_dist.std_dev(spec.q);
    let inner = Array2::from_shape_simple_fn((spec.q, spec.n), || {
        let g: f64 = StandardNormal.sample(&mut rng);
        T::lit(std * g)
    });
    let blocks = Array2::from_shape_simple_fn((spec.k, spec.q), || T::lit(spec.block_dist.sample(&mut rng)));
    SensingOperator::new(inner, BlockDiagonal::new(blocks)?)
}

/// Deterministic blocks with block `r` (1-based) equal to `r * spacing` on
/// every coordinate: uniform sample times, as subspace methods expect.
pub fn uniform_time_blocks<T: Real>(k: usize, q: usize, spacing: T) -> Result<BlockDiagonal<T>> {
    if !(spacing > T::zero()) {
        return Err(Error::InvalidSpec("sample spacing must be positive".into()));
    }
    BlockDiagonal::new(Array2::from_shape_fn((k, q), |(r, _)| T::from_count(r + 1) * spacing))
}

/// Random `s`-sparse vector: uniform support, standard normal values,
/// rescaled so its Euclidean norm is exactly `norm`.
pub fn synthesize_signal<T: Real>(n: usize, s: usize, norm: f64, seed: u64) -> Result<SparseSignal<T>> {
    if s > n {
        return Err(Error::InvalidSparsity { sparsity: s, len: n });
    }
    if !(norm >= 0.0 && norm.is_finite()) {
        return Err(Error::InvalidSpec(format!("signal norm must be finite and nonnegative, got {norm}")));
    }
    let mut rng = seed::rng(seed);
    let mut support = index::sample(&mut rng, n, s).into_vec();
    support.sort_unstable();
    let raw: Vec<f64> = support.iter().map(|_| StandardNormal.sample(&mut rng)).collect();
    let scale = if s == 0 { 0.0 } else { norm / norm2(&raw) };
    let mut values = vec![T::zero(); n];
    for (&j, &v) in support.iter().zip(&raw) {
        values[j] = T::lit(v * scale);
    }
    Ok(SparseSignal {
        values,
        sparsity: s,
        norm_bound: Some(T::lit(norm)),
    })
}

/// `z = B x`.
pub fn linear_project<T: Real, M: LinearMap<T>>(op: &SensingOperator<T, M>, x: &SparseSignal<T>) -> Result<Vec<T>> {
    if x.len() != op.n() {
        return Err(Error::DimensionMismatch {
            what: "signal length n",
            expected: op.n(),
            found: x.len(),
        });
    }
    let support = x.support();
    if support.len() * 4 < x.len() {
        let coeffs: Vec<T> = support.iter().map(|&j| x.values[j]).collect();
        Ok(op.inner.apply_sparse(&support, &coeffs))
    } else {
        Ok(op.inner.apply(&x.values))
    }
}

/// Computes features from a precomputed projection `z = B x`.
pub fn features_from_projection<T: Real>(
    blocks: &BlockDiagonal<T>,
    z: &[T],
    link: LinkType,
    sigma: f64,
    noise_seed: u64,
) -> Result<FeatureVector<T>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidSpec(format!("noise level must be nonnegative, got {sigma}")));
    }
    if z.len() != blocks.q() {
        return Err(Error::DimensionMismatch {
            what: "projection length q",
            expected: blocks.q(),
            found: z.len(),
        });
    }
    let phases = blocks.apply(z);
    let mut rng = seed::rng(noise_seed);
    let mut gauss = |s: f64| -> T {
        if s == 0.0 {
            T::zero()
        } else {
            let g: f64 = StandardNormal.sample(&mut rng);
            T::lit(s * g)
        }
    };
    let data = match link {
        LinkType::ComplexExp => {
            let s = sigma * COMPLEX_NOISE_SPLIT.sqrt();
            FeatureData::Complex(
                phases
                    .iter()
                    .map(|&p| {
                        let (sin, cos) = p.sin_cos();
                        let re = gauss(s);
                        let im = gauss(s);
                        Complex::new(cos + re, sin + im)
                    })
                    .collect(),
            )
        }
        LinkType::RealSine => FeatureData::Real(phases.iter().map(|&p| p.sin() + gauss(sigma)).collect()),
    };
    Ok(FeatureVector {
        data,
        noise_sigma: T::lit(sigma),
    })
}

/// `y = link(D B x) + e` with Gaussian noise drawn from `noise_seed`.
pub fn forward<T: Real, M: LinearMap<T>>(
    op: &SensingOperator<T, M>,
    x: &SparseSignal<T>,
    link: LinkType,
    sigma: f64,
    noise_seed: u64,
) -> Result<FeatureVector<T>> {
    let z = linear_project(op, x)?;
    features_from_projection(&op.blocks, &z, link, sigma, noise_seed)
}

/// Randomized subsampled orthonormal DCT: `sqrt(n/q) * S C R`, with `R` a
/// random sign flip, `C` the orthonormal DCT-II and `S` a selection of `q`
/// distinct rows. Applied in `O(n log n)` without forming a matrix.
#[derive(Clone)]
pub struct StructuredOperator<T: Real> {
    signs: Vec<T>,
    rows: Vec<usize>,
    scale: T,
    dct: Arc<dyn TransformType2And3<T>>,
}

impl<T: Real> std::fmt::Debug for StructuredOperator<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StructuredOperator")
            .field("n", &self.signs.len())
            .field("q", &self.rows.len())
            .finish()
    }
}

impl<T: Real> StructuredOperator<T> {
    pub fn new(n: usize, q: usize, seed: u64) -> Result<Self> {
        Self::from_rng(n, q, &mut seed::rng(seed))
    }

    fn from_rng(n: usize, q: usize, rng: &mut seed::Rng) -> Result<Self> {
        if n == 0 || q == 0 || q > n {
            return Err(Error::InvalidSpec(format!("need 0 < q <= n, got q={q}, n={n}")));
        }
        let signs = (0..n)
            .map(|_| if rng.random::<bool>() { T::one() } else { -T::one() })
            .collect();
        let mut rows = index::sample(rng, n, q).into_vec();
        rows.sort_unstable();
        let dct = DctPlanner::new().plan_dct2(n);
        Ok(StructuredOperator {
            signs,
            rows,
            scale: T::lit((n as f64 / q as f64).sqrt()),
            dct,
        })
    }

    pub fn selected_rows(&self) -> &[usize] {
        &self.rows
    }

    /// Full orthonormal transform `C R x` before row selection.
    pub fn transform(&self, x: &[T]) -> Vec<T> {
        let n = self.signs.len();
        let mut buf: Vec<T> = x.iter().zip(&self.signs).map(|(&a, &s)| a * s).collect();
        self.dct.process_dct2(&mut buf);
        let c0 = T::lit((1.0 / n as f64).sqrt());
        let ck = T::lit((2.0 / n as f64).sqrt());
        for (i, v) in buf.iter_mut().enumerate() {
            *v *= if i == 0 { c0 } else { ck };
        }
        buf
    }

    /// Inverse (= transpose) of [`Self::transform`].
    pub fn inverse_transform(&self, coeffs: &[T]) -> Vec<T> {
        let n = self.signs.len();
        let c0 = T::lit((1.0 / n as f64).sqrt());
        let ck = T::lit((2.0 / n as f64).sqrt());
        // The unnormalized DCT-III halves the first term.
        let mut buf: Vec<T> = coeffs
            .iter()
            .enumerate()
            .map(|(i, &c)| if i == 0 { c * c0 * T::lit(2.0) } else { c * ck })
            .collect();
        self.dct.process_dct3(&mut buf);
        buf.iter().zip(&self.signs).map(|(&a, &s)| a * s).collect()
    }
}

impl<T: Real> LinearMap<T> for StructuredOperator<T> {
    fn nrows(&self) -> usize {
        self.rows.len()
    }

    fn ncols(&self) -> usize {
        self.signs.len()
    }

    fn apply(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.ncols(), "apply: input length");
        let full = self.transform(x);
        self.rows.iter().map(|&r| full[r] * self.scale).collect()
    }

    fn adjoint(&self, y: &[T]) -> Vec<T> {
        assert_eq!(y.len(), self.nrows(), "adjoint: input length");
        let mut full = vec![T::zero(); self.ncols()];
        for (&r, &v) in self.rows.iter().zip(y) {
            full[r] = v * self.scale;
        }
        self.inverse_transform(&full)
    }
}

/// Structured operator for an `n`-pixel square image plus random blocks.
///
/// `n` must be a power of four so the image side is a power of two.
pub fn make_structured_operator<T: Real>(
    n: usize,
    q: usize,
    k: usize,
    block_dist: BlockDist,
    seed: u64,
) -> Result<SensingOperator<T, StructuredOperator<T>>> {
    if n == 0 || !n.is_power_of_two() || n.trailing_zeros() % 2 != 0 {
        return Err(Error::InvalidSpec(format!("pixel count {n} is not a power of 4")));
    }
    if k == 0 {
        return Err(Error::InvalidSpec("block count k must be positive".into()));
    }
    block_dist.check()?;
    let mut rng = seed::rng(seed);
    let inner = StructuredOperator::from_rng(n, q, &mut rng)?;
    let blocks = Array2::from_shape_simple_fn((k, q), || T::lit(block_dist.sample(&mut rng)));
    SensingOperator::new(inner, BlockDiagonal::new(blocks)?)
}
