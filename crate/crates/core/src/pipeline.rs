//! MF-Sparse end to end: matched-filter tone estimation, then CoSaMP.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linmap::LinearMap;
use crate::model::{FeatureVector, SensingOperator, SparseSignal, ToneGrid};
use crate::recovery::{cosamp, CosampConfig};
use crate::scalar::{dot, norm2, Real};
use crate::spectral::{estimate_tones, estimate_tones_uniform, tone_residual};

/// Fraction of coordinates at the grid boundary above which the search set
/// is flagged as too narrow.
pub const BOUNDARY_FLAG_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub tone_ms: f64,
    pub recovery_ms: f64,
    pub tone_residual_mean: f64,
    pub tone_residual_max: f64,
    /// Fraction of coordinates whose estimate sits on `+-omega`.
    pub boundary_fraction: f64,
    /// More than [`BOUNDARY_FLAG_FRACTION`] of the estimates hit the boundary.
    pub omega_too_small: bool,
    pub cosamp_iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MfSparseOutput<T> {
    pub signal: SparseSignal<T>,
    pub tones: Vec<T>,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum StageOne {
    MatchedFilter,
    UniformGrid,
}

fn two_stage<T: Real, M: LinearMap<T>>(
    y: &FeatureVector<T>,
    op: &SensingOperator<T, M>,
    grid: &ToneGrid<T>,
    s: usize,
    cfg: &CosampConfig,
    stage_one: StageOne,
) -> Result<MfSparseOutput<T>> {
    let started = Instant::now();
    let tones = match stage_one {
        StageOne::MatchedFilter => estimate_tones(y, &op.blocks, grid)?,
        StageOne::UniformGrid => estimate_tones_uniform(y, &op.blocks, grid)?,
    };
    let tone_ms = started.elapsed().as_secs_f64() * 1e3;

    let residuals: Vec<f64> = tones
        .iter()
        .enumerate()
        .map(|(l, &v)| tone_residual(y, &op.blocks, l, v).as_f64())
        .collect();
    let edge = grid.omega - grid.final_resolution() * T::lit(0.5);
    let hits = tones.iter().filter(|v| v.abs() >= edge).count();
    let boundary_fraction = hits as f64 / tones.len().max(1) as f64;

    let started = Instant::now();
    let rec = cosamp(&tones, &op.inner, s, cfg)?;
    let recovery_ms = started.elapsed().as_secs_f64() * 1e3;

    Ok(MfSparseOutput {
        signal: rec.signal,
        tones,
        diagnostics: Diagnostics {
            tone_ms,
            recovery_ms,
            tone_residual_mean: residuals.iter().sum::<f64>() / residuals.len().max(1) as f64,
            tone_residual_max: residuals.iter().copied().fold(0.0, f64::max),
            boundary_fraction,
            omega_too_small: stage_one == StageOne::MatchedFilter && boundary_fraction > BOUNDARY_FLAG_FRACTION,
            cosamp_iterations: rec.iterations,
            converged: rec.converged,
        },
    })
}

/// Recovers an `s`-sparse `x` from `y = link(D B x) + e`.
///
/// Stage one estimates every coordinate of `z = B x` with the matched filter
/// over `grid`; stage two runs CoSaMP on the estimate `z_hat ~ B x`.
pub fn mf_sparse<T: Real, M: LinearMap<T>>(
    y: &FeatureVector<T>,
    op: &SensingOperator<T, M>,
    grid: &ToneGrid<T>,
    s: usize,
    cfg: &CosampConfig,
) -> Result<MfSparseOutput<T>> {
    two_stage(y, op, grid, s, cfg, StageOne::MatchedFilter)
}

/// Same two stages, with the uniform-grid DFT estimator in stage one. Needs
/// arithmetic sample times (see [`crate::embed::uniform_time_blocks`]).
pub fn uniform_grid_sparse<T: Real, M: LinearMap<T>>(
    y: &FeatureVector<T>,
    op: &SensingOperator<T, M>,
    grid: &ToneGrid<T>,
    s: usize,
    cfg: &CosampConfig,
) -> Result<MfSparseOutput<T>> {
    two_stage(y, op, grid, s, cfg, StageOne::UniformGrid)
}

/// Constants of the sample-complexity rule; they are not pinned down
/// theoretically, so the defaults are calibrated rather than derived.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamConstants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
}

impl Default for ParamConstants {
    fn default() -> Self {
        ParamConstants {
            c1: 4.0,
            c2: 4.0,
            c3: 3.0,
            c4: 1.0,
        }
    }
}

/// Parameters before rounding up to integers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawParams {
    pub q: f64,
    pub k: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefaultParams {
    pub q: usize,
    pub k: usize,
    pub omega: f64,
    /// Half-width of the uniform block distribution.
    pub t: f64,
    pub raw: RawParams,
}

/// Block size, block count, search half-width and block spread for target
/// accuracy `eps` with failure probability `delta`:
///
/// * `q = ceil(c2 s ln(n/s))`
/// * `k = ceil(c1 (1 + sigma^2) ln(R q / (eps delta)))`
/// * `omega = c3 R`
/// * `T = c4 / eps'` with per-coordinate accuracy `eps' = eps / sqrt(q)`
pub fn default_params(
    n: usize,
    s: usize,
    r: f64,
    eps: f64,
    delta: f64,
    sigma: f64,
    c: &ParamConstants,
) -> Result<DefaultParams> {
    if n == 0 || s == 0 || s > n || !(r > 0.0) || !(eps > 0.0) || !(delta > 0.0) || !(sigma >= 0.0) {
        return Err(Error::InvalidSpec("default_params needs positive n, s <= n, R, eps, delta".into()));
    }
    let q_raw = c.c2 * s as f64 * (n as f64 / s as f64).ln();
    let q = (q_raw.ceil() as usize).max(1);
    let k_raw = c.c1 * (1.0 + sigma * sigma) * (r * q as f64 / (eps * delta)).ln();
    let k = (k_raw.ceil() as usize).max(1);
    let eps_coord = eps / (q as f64).sqrt();
    Ok(DefaultParams {
        q,
        k,
        omega: c.c3 * r,
        t: c.c4 / eps_coord,
        raw: RawParams { q: q_raw, k: k_raw },
    })
}

/// `(||x_hat - x|| / ||x||, cosine(x_hat, x))`.
pub fn metrics<T: Real>(x_hat: &[T], x: &[T]) -> Result<(f64, f64)> {
    if x_hat.len() != x.len() {
        return Err(Error::DimensionMismatch {
            what: "estimate length",
            expected: x.len(),
            found: x_hat.len(),
        });
    }
    let nx = norm2(x).as_f64();
    let nh = norm2(x_hat).as_f64();
    if nx == 0.0 || nh == 0.0 {
        return Err(Error::ZeroVector);
    }
    let diff: Vec<T> = x_hat.iter().zip(x).map(|(&a, &b)| a - b).collect();
    let rel = norm2(&diff).as_f64() / nx;
    let cosine = (dot(x_hat, x).as_f64() / (nh * nx)).clamp(-1.0, 1.0);
    Ok((rel, cosine))
}

/// Relative error alone; defined whenever `x` is nonzero.
pub fn relative_error<T: Real>(x_hat: &[T], x: &[T]) -> Result<f64> {
    let nx = norm2(x).as_f64();
    if nx == 0.0 {
        return Err(Error::ZeroVector);
    }
    let diff: Vec<T> = x_hat.iter().zip(x).map(|(&a, &b)| a - b).collect();
    Ok(norm2(&diff).as_f64() / nx)
}
