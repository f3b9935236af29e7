//! Comparison estimators: gradient hard thresholding on the sine loss, and
//! one-step thresholding of the back-projected features.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linmap::LinearMap;
use crate::model::{FeatureData, FeatureVector, SensingOperator, SparseSignal};
use crate::recovery::{hard_threshold, top_indices};
use crate::scalar::{norm2, Real};

/// How GHT picks its step size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    Fixed(f64),
    /// `1 / ||D B||^2` from power iteration.
    InverseSpectralNorm,
    /// Gauss-Newton step along the gradient restricted to the current
    /// support, halved until the loss does not increase.
    Normalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GhtConfig {
    pub step: StepRule,
    pub iters: usize,
    pub power_iters: usize,
    /// Stop after this many iterations without a new best loss.
    pub patience: usize,
}

impl Default for GhtConfig {
    fn default() -> Self {
        GhtConfig {
            step: StepRule::Normalized,
            iters: 300,
            power_iters: 20,
            patience: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GhtOutput<T> {
    pub signal: SparseSignal<T>,
    pub loss: T,
    /// Last step size taken.
    pub step: T,
    pub iterations: usize,
    /// The loss blew up or became non-finite at some iterate.
    pub diverged: bool,
}

/// Estimate of `||A||_2^2` for `A = D B` by power iteration on `A^T A`.
pub fn spectral_norm_sq<T: Real, M: LinearMap<T>>(op: &SensingOperator<T, M>, iters: usize) -> T {
    let n = op.n();
    let mut v = vec![T::one() / T::from_count(n).sqrt(); n];
    let mut lambda = T::zero();
    for _ in 0..iters.max(1) {
        let w = op.adjoint_full(&op.apply_full(&v));
        lambda = norm2(&w);
        if lambda == T::zero() {
            return T::zero();
        }
        v = w.iter().map(|&a| a / lambda).collect();
    }
    lambda
}

/// `(A x, 0.5 ||y - sin(A x)||^2)`.
fn sine_loss<T: Real, M: LinearMap<T>>(op: &SensingOperator<T, M>, y: &[T], x: &[T]) -> (Vec<T>, T) {
    let support: Vec<usize> = (0..x.len()).filter(|&j| x[j] != T::zero()).collect();
    let coeffs: Vec<T> = support.iter().map(|&j| x[j]).collect();
    let ax = op.blocks.apply(&op.inner.apply_sparse(&support, &coeffs));
    let loss = ax
        .iter()
        .zip(y)
        .map(|(&a, &b)| (b - a.sin()).powi(2))
        .sum::<T>()
        * T::lit(0.5);
    (ax, loss)
}

/// Projected gradient descent on `L(x) = 0.5 ||y - sin(D B x)||^2` with hard
/// thresholding to `s` entries after every step, started from zero.
///
/// Only defined for real sine features. Returns the iterate with the lowest
/// loss.
pub fn ght<T: Real, M: LinearMap<T>>(
    y: &FeatureVector<T>,
    op: &SensingOperator<T, M>,
    s: usize,
    cfg: &GhtConfig,
) -> Result<GhtOutput<T>> {
    let FeatureData::Real(obs) = &y.data else {
        return Err(Error::LinkMismatch {
            expected: "real_sine",
            found: y.link().name(),
        });
    };
    y.check_len(op.m())?;
    let n = op.n();
    if s > n {
        return Err(Error::InvalidSparsity { sparsity: s, len: n });
    }
    let mut step = match cfg.step {
        StepRule::Fixed(mu) => T::lit(mu),
        StepRule::InverseSpectralNorm => {
            let l = spectral_norm_sq(op, cfg.power_iters);
            if l > T::zero() {
                T::one() / l
            } else {
                T::zero()
            }
        }
        StepRule::Normalized => T::one(),
    };
    let normalized = cfg.step == StepRule::Normalized;

    let mut x = vec![T::zero(); n];
    let (mut ax, mut loss) = sine_loss(op, obs, &x);
    let initial = loss;
    let mut best = (x.clone(), loss);
    let mut since_best = 0;
    let mut diverged = false;
    let mut iterations = 0;
    for _ in 0..cfg.iters {
        if step == T::zero() || loss == T::zero() {
            break;
        }
        iterations += 1;
        let w: Vec<T> = ax.iter().zip(obs).map(|(&a, &b)| a.cos() * (b - a.sin())).collect();
        // Descent direction -grad = A^T w.
        let back = op.adjoint_full(&w);
        if normalized {
            let mut support: Vec<usize> = (0..n).filter(|&j| x[j] != T::zero()).collect();
            if support.is_empty() {
                support = top_indices(&back, s);
            }
            let g: Vec<T> = support.iter().map(|&j| back[j]).collect();
            let ag = op.blocks.apply(&op.inner.apply_sparse(&support, &g));
            let num: T = g.iter().map(|&v| v * v).sum();
            let den: T = ag.iter().zip(&ax).map(|(&v, &a)| (v * a.cos()).powi(2)).sum();
            if num == T::zero() || den == T::zero() {
                break;
            }
            step = num / den;
        }
        let mut tries = 0;
        let (next, next_ax, next_loss) = loop {
            let moved: Vec<T> = x.iter().zip(&back).map(|(&xi, &g)| xi + step * g).collect();
            let cand = hard_threshold(&moved, s)?;
            let (cand_ax, cand_loss) = sine_loss(op, obs, &cand);
            tries += 1;
            if !normalized || cand_loss <= loss || tries >= 30 {
                break (cand, cand_ax, cand_loss);
            }
            step = step * T::lit(0.5);
        };
        (x, ax, loss) = (next, next_ax, next_loss);
        if !loss.is_finite() || loss > T::lit(10.0) * initial {
            diverged = true;
            break;
        }
        if loss < best.1 {
            best = (x.clone(), loss);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }

    Ok(GhtOutput {
        signal: SparseSignal {
            values: best.0,
            sparsity: s,
            norm_bound: None,
        },
        loss: best.1,
        step,
        iterations,
        diverged,
    })
}

/// One-step thresholding: `H_s(A^T y)` scaled to unit norm.
///
/// Complex features contribute their real part. The scale of `x` is not
/// identifiable by this estimator, so only its direction is meaningful.
pub fn one_step_threshold<T: Real, M: LinearMap<T>>(
    y: &FeatureVector<T>,
    op: &SensingOperator<T, M>,
    s: usize,
) -> Result<SparseSignal<T>> {
    y.check_len(op.m())?;
    let n = op.n();
    if s > n {
        return Err(Error::InvalidSparsity { sparsity: s, len: n });
    }
    let back = op.adjoint_full(&y.real_part());
    let mut values = vec![T::zero(); n];
    for j in top_indices(&back, s) {
        values[j] = back[j];
    }
    let norm = norm2(&values);
    if norm == T::zero() {
        return Err(Error::ZeroEstimate);
    }
    for v in values.iter_mut() {
        *v = *v / norm;
    }
    Ok(SparseSignal {
        values,
        sparsity: s,
        norm_bound: Some(T::one()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{forward, make_operator, synthesize_signal, BlockDist, InnerDist, OperatorSpec};
    use crate::model::LinkType;

    fn op(seed: u64) -> SensingOperator<f64> {
        make_operator(&OperatorSpec {
            n: 128,
            q: 40,
            k: 3,
            inner_dist: InnerDist::GaussianVar1OverSqrtQ,
            block_dist: BlockDist::StandardNormal,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn ght_is_stationary_at_zero() {
        let op = op(1);
        let y = FeatureVector {
            data: FeatureData::Real(vec![0.0; op.m()]),
            noise_sigma: 0.0,
        };
        let out = ght(&y, &op, 5, &GhtConfig::default()).unwrap();
        assert_eq!(out.signal.values, vec![0.0; 128]);
    }

    #[test]
    fn ght_with_zero_step_returns_start() {
        let op = op(2);
        let x = synthesize_signal(128, 5, 1.0, 3).unwrap();
        let y = forward(&op, &x, LinkType::RealSine, 0.0, 0).unwrap();
        let cfg = GhtConfig {
            step: StepRule::Fixed(0.0),
            ..GhtConfig::default()
        };
        let out = ght(&y, &op, 5, &cfg).unwrap();
        assert_eq!(out.signal.values, vec![0.0; 128]);
        assert_eq!(out.iterations, 0);
    }

    #[test]
    fn ght_rejects_complex_features() {
        let op = op(3);
        let x = synthesize_signal(128, 5, 1.0, 3).unwrap();
        let y = forward(&op, &x, LinkType::ComplexExp, 0.0, 0).unwrap();
        assert!(matches!(ght(&y, &op, 5, &GhtConfig::default()), Err(Error::LinkMismatch { .. })));
    }

    #[test]
    fn ght_loss_never_worse_than_start() {
        let op = op(4);
        let x = synthesize_signal(128, 5, 1.0, 5).unwrap();
        let y = forward(&op, &x, LinkType::RealSine, 0.0, 0).unwrap();
        let out = ght(&y, &op, 5, &GhtConfig::default()).unwrap();
        let FeatureData::Real(obs) = &y.data else { panic!() };
        let start = 0.5 * obs.iter().map(|v| v * v).sum::<f64>();
        assert!(out.loss <= start);
        assert!(out.signal.nnz() <= 5);
    }

    #[test]
    fn power_iteration_matches_dense_norm() {
        let op = op(5);
        // Twenty iterations land within a few percent of a long run.
        let lambda = spectral_norm_sq(&op, 500);
        let short = spectral_norm_sq(&op, 20);
        assert!((short - lambda).abs() / lambda < 0.05);
    }

    #[test]
    fn one_step_zero_input() {
        let op = op(6);
        let y = FeatureVector {
            data: FeatureData::Real(vec![0.0; op.m()]),
            noise_sigma: 0.0,
        };
        assert!(matches!(one_step_threshold(&y, &op, 5), Err(Error::ZeroEstimate)));
    }

    #[test]
    fn one_step_has_unit_norm_and_is_scale_free() {
        let op = op(7);
        let x = synthesize_signal(128, 5, 1.0, 8).unwrap();
        let y = forward(&op, &x, LinkType::RealSine, 0.1, 9).unwrap();
        let a = one_step_threshold(&y, &op, 5).unwrap();
        assert!((a.norm() - 1.0).abs() < 1e-12);
        assert!(a.nnz() <= 5);
        let FeatureData::Real(obs) = &y.data else { panic!() };
        let scaled = FeatureVector {
            data: FeatureData::Real(obs.iter().map(|v| v * 3.5).collect()),
            noise_sigma: 0.0,
        };
        let b = one_step_threshold(&scaled, &op, 5).unwrap();
        for (u, v) in a.values.iter().zip(&b.values) {
            assert!((u - v).abs() < 1e-12);
        }
    }
}
