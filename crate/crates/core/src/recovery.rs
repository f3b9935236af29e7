//! Sparse recovery from (noisy) linear measurements `z ~ B x`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linmap::{LinearMap, Restricted};
use crate::model::SparseSignal;
use crate::scalar::{norm2, Real};

/// Restricted least-squares systems with a larger condition estimate are
/// treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CosampConfig {
    pub max_iters: usize,
    /// Stop once `||z - B x|| / ||z||` falls below this.
    pub residual_tol: f64,
    pub ls_iters: usize,
    pub ls_tol: f64,
}

impl Default for CosampConfig {
    fn default() -> Self {
        CosampConfig {
            max_iters: 50,
            residual_tol: 1e-6,
            ls_iters: 100,
            ls_tol: 1e-10,
        }
    }
}

impl CosampConfig {
    pub fn check(&self) -> Result<()> {
        if self.max_iters == 0 || self.ls_iters == 0 || !(self.residual_tol > 0.0) || !(self.ls_tol > 0.0) {
            return Err(Error::InvalidSpec("CoSaMP settings must all be positive".into()));
        }
        Ok(())
    }
}

/// Indices of the `count` largest-magnitude entries, ascending.
///
/// Ties in magnitude go to the lower index.
pub fn top_indices<T: Real>(v: &[T], count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    let count = count.min(v.len());
    if count < v.len() {
        order.select_nth_unstable_by(count, |&a, &b| {
            v[b].abs()
                .partial_cmp(&v[a].abs())
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        order.truncate(count);
    }
    order.sort_unstable();
    order
}

/// Keeps the `s` largest-magnitude entries of `v` and zeroes the rest.
pub fn hard_threshold<T: Real>(v: &[T], s: usize) -> Result<Vec<T>> {
    if s > v.len() {
        return Err(Error::InvalidSparsity {
            sparsity: s,
            len: v.len(),
        });
    }
    let mut out = vec![T::zero(); v.len()];
    for j in top_indices(v, s) {
        out[j] = v[j];
    }
    Ok(out)
}

/// Extreme eigenvalues of a symmetric tridiagonal matrix by Sturm bisection.
fn tridiagonal_extremes(diag: &[f64], off: &[f64]) -> (f64, f64) {
    let n = diag.len();
    let radius = |i: usize| {
        let left = if i > 0 { off[i - 1].abs() } else { 0.0 };
        let right = if i + 1 < n { off[i].abs() } else { 0.0 };
        left + right
    };
    let lo = (0..n).map(|i| diag[i] - radius(i)).fold(f64::INFINITY, f64::min);
    let hi = (0..n).map(|i| diag[i] + radius(i)).fold(f64::NEG_INFINITY, f64::max);
    // Number of eigenvalues strictly below x.
    let count_below = |x: f64| {
        let mut count = 0;
        let mut d = 1.0;
        for i in 0..n {
            let o2 = if i > 0 { off[i - 1] * off[i - 1] } else { 0.0 };
            d = diag[i] - x - if i > 0 { o2 / d } else { 0.0 };
            if d == 0.0 {
                d = -f64::EPSILON * (x.abs() + 1.0);
            }
            if d < 0.0 {
                count += 1;
            }
        }
        count
    };
    let kth = |k: usize| {
        let (mut a, mut b) = (lo, hi);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if count_below(mid) > k {
                b = mid;
            } else {
                a = mid;
            }
            if b - a <= 1e-15 * (a.abs() + b.abs()) {
                break;
            }
        }
        0.5 * (a + b)
    };
    (kth(0), kth(n - 1))
}

/// Least squares `min ||A c - z||` by conjugate gradients on the normal
/// equations (CGLS). The CG coefficients define a Lanczos tridiagonal whose
/// extreme eigenvalues estimate the conditioning of `A^T A`.
pub fn least_squares<T: Real>(a: &dyn LinearMap<T>, z: &[T], max_iters: usize, tol: f64) -> Result<Vec<T>> {
    let cols = a.ncols();
    if cols > a.nrows() {
        return Err(Error::SolverBreakdown {
            support_size: cols,
            condition: f64::INFINITY,
        });
    }
    let mut x = vec![T::zero(); cols];
    let mut r = z.to_vec();
    let mut s = a.adjoint(&r);
    let mut p = s.clone();
    let mut gamma = s.iter().map(|v| v.as_f64().powi(2)).sum::<f64>();
    let gamma0 = gamma;
    if gamma0 == 0.0 {
        return Ok(x);
    }
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    for _ in 0..max_iters {
        let ap = a.apply(&p);
        let delta = ap.iter().map(|v| v.as_f64().powi(2)).sum::<f64>();
        if !(delta > 0.0) {
            return Err(Error::SolverBreakdown {
                support_size: cols,
                condition: f64::INFINITY,
            });
        }
        let alpha = gamma / delta;
        let at = T::lit(alpha);
        for (xi, &pi) in x.iter_mut().zip(&p) {
            *xi += at * pi;
        }
        for (ri, &qi) in r.iter_mut().zip(&ap) {
            *ri -= at * qi;
        }
        s = a.adjoint(&r);
        let gamma_new = s.iter().map(|v| v.as_f64().powi(2)).sum::<f64>();
        let beta = gamma_new / gamma;
        alphas.push(alpha);
        betas.push(beta);
        if gamma_new.sqrt() <= tol * gamma0.sqrt() {
            break;
        }
        let bt = T::lit(beta);
        for (pi, &si) in p.iter_mut().zip(&s) {
            *pi = si + bt * *pi;
        }
        gamma = gamma_new;
    }

    let n = alphas.len();
    let diag: Vec<f64> = (0..n)
        .map(|j| 1.0 / alphas[j] + if j > 0 { betas[j - 1] / alphas[j - 1] } else { 0.0 })
        .collect();
    let off: Vec<f64> = (0..n.saturating_sub(1)).map(|j| betas[j].sqrt() / alphas[j]).collect();
    let (lmin, lmax) = tridiagonal_extremes(&diag, &off);
    let condition = if lmin > 0.0 { lmax / lmin } else { f64::INFINITY };
    if condition > MAX_CONDITION {
        return Err(Error::SolverBreakdown {
            support_size: cols,
            condition,
        });
    }
    Ok(x)
}

fn restricted_least_squares<T: Real, M: LinearMap<T>>(
    b: &M,
    support: &[usize],
    z: &[T],
    cfg: &CosampConfig,
) -> Result<Vec<T>> {
    match b.columns(support) {
        Some(sub) => least_squares(&sub, z, cfg.ls_iters, cfg.ls_tol),
        None => {
            let restricted = Restricted {
                inner: b as &dyn LinearMap<T>,
                support,
            };
            least_squares(&restricted, z, cfg.ls_iters, cfg.ls_tol)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CosampOutput<T> {
    pub signal: SparseSignal<T>,
    /// Best residual norm so far, one entry per iteration (entry 0 is `||z||`).
    pub residual_history: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
}

/// CoSaMP: estimate an `s`-sparse `x` with `B x ~ z`.
///
/// Each iteration merges the current support with the `2s` largest entries
/// of the proxy `B^T r`, solves least squares on the merged support, prunes
/// to the `s` largest entries and recomputes the residual. The best iterate
/// seen is returned; hitting the iteration cap is reported through
/// `converged`, not as an error.
pub fn cosamp<T: Real, M: LinearMap<T>>(z: &[T], b: &M, s: usize, cfg: &CosampConfig) -> Result<CosampOutput<T>> {
    cfg.check()?;
    let (q, n) = (b.nrows(), b.ncols());
    if z.len() != q {
        return Err(Error::DimensionMismatch {
            what: "measurement length q",
            expected: q,
            found: z.len(),
        });
    }
    if s > n {
        return Err(Error::InvalidSparsity { sparsity: s, len: n });
    }
    if s > q {
        log::warn!("sparsity {s} exceeds measurement count {q}; recovery is ill-posed");
    }

    let z_norm = norm2(z);
    let mut best = vec![T::zero(); n];
    let mut best_res = z_norm;
    let mut history = vec![z_norm];
    let tol = T::lit(cfg.residual_tol);
    if z_norm == T::zero() || s == 0 {
        return Ok(CosampOutput {
            signal: SparseSignal::zeros(n, s),
            residual_history: history,
            iterations: 0,
            converged: z_norm == T::zero(),
        });
    }

    let mut x_support: Vec<usize> = Vec::new();
    let mut residual = z.to_vec();
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..cfg.max_iters {
        iterations += 1;
        let proxy = b.adjoint(&residual);
        let mut merged = top_indices(&proxy, 2 * s);
        merged.extend_from_slice(&x_support);
        merged.sort_unstable();
        merged.dedup();

        let coeffs = restricted_least_squares(b, &merged, z, cfg)?;
        let keep = top_indices(&coeffs, s);
        let new_support: Vec<usize> = keep.iter().map(|&i| merged[i]).collect();
        let new_coeffs: Vec<T> = keep.iter().map(|&i| coeffs[i]).collect();

        let fit = b.apply_sparse(&new_support, &new_coeffs);
        residual = z.iter().zip(&fit).map(|(&a, &f)| a - f).collect();
        let res = norm2(&residual);
        let stalled = new_support == x_support && res >= best_res;
        if res < best_res {
            best_res = res;
            best = vec![T::zero(); n];
            for (&j, &c) in new_support.iter().zip(&new_coeffs) {
                best[j] = c;
            }
        }
        history.push(best_res);
        x_support = new_support;
        if best_res <= tol * z_norm {
            converged = true;
            break;
        }
        if stalled {
            break;
        }
    }

    Ok(CosampOutput {
        signal: SparseSignal {
            values: best,
            sparsity: s,
            norm_bound: None,
        },
        residual_history: history,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{make_operator, synthesize_signal, BlockDist, InnerDist, OperatorSpec};
    use ndarray::{array, Array2};

    #[test]
    fn threshold_examples() {
        assert_eq!(hard_threshold(&[3.0, -5.0, 1.0], 2).unwrap(), vec![3.0, -5.0, 0.0]);
        assert_eq!(hard_threshold(&[3.0, -5.0, 1.0], 3).unwrap(), vec![3.0, -5.0, 1.0]);
        assert_eq!(hard_threshold(&[2.0, -2.0, 2.0], 2).unwrap(), vec![2.0, -2.0, 0.0]);
        assert!(matches!(hard_threshold(&[1.0], 2), Err(Error::InvalidSparsity { .. })));
    }

    #[test]
    fn tridiagonal_extremes_of_known_matrix() {
        // Second-difference matrix of size 4: eigenvalues 2 - 2 cos(j pi / 5).
        let (lo, hi) = tridiagonal_extremes(&[2.0; 4], &[-1.0; 3]);
        let pi = std::f64::consts::PI;
        assert!((lo - (2.0 - 2.0 * (pi / 5.0).cos())).abs() < 1e-12);
        assert!((hi - (2.0 - 2.0 * (4.0 * pi / 5.0).cos())).abs() < 1e-12);
    }

    #[test]
    fn least_squares_solves_small_system() {
        let a = array![[1.0, 0.0], [1.0, 1.0], [0.0, 2.0]];
        // Normal equations [[2,1],[1,5]] c = [4, 9] -> c = (11/9, 14/9).
        let c: Vec<f64> = least_squares(&a, &[1.0, 3.0, 3.0], 10, 1e-14).unwrap();
        assert!((c[0] - 11.0 / 9.0).abs() < 1e-12);
        assert!((c[1] - 14.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn least_squares_flags_singular_systems() {
        let a = array![[1.0, 1.0], [2.0, 2.0], [3.0, 3.0 + 1e-9]];
        assert!(matches!(
            least_squares(&a, &[1.0, 0.0, 2.0], 10, 1e-14),
            Err(Error::SolverBreakdown { support_size: 2, .. })
        ));
        let wide = Array2::<f64>::ones((2, 3));
        assert!(matches!(least_squares(&wide, &[1.0, 1.0], 10, 1e-14), Err(Error::SolverBreakdown { .. })));
    }

    #[test]
    fn zero_measurements_give_zero() {
        let b = Array2::<f64>::ones((4, 8));
        let out = cosamp(&[0.0; 4], &b, 2, &CosampConfig::default()).unwrap();
        assert_eq!(out.iterations, 0);
        assert!(out.converged);
        assert_eq!(out.signal.values, vec![0.0; 8]);
    }

    fn gaussian(n: usize, q: usize, seed: u64) -> Array2<f64> {
        make_operator::<f64>(&OperatorSpec {
            n,
            q,
            k: 1,
            inner_dist: InnerDist::GaussianVar1OverQ,
            block_dist: BlockDist::StandardNormal,
            seed,
        })
        .unwrap()
        .inner
    }

    #[test]
    fn exact_recovery_of_noiseless_measurements() {
        let (n, q, s) = (256, 128, 10);
        for trial in 0..5 {
            let b = gaussian(n, q, 100 + trial);
            let x = synthesize_signal::<f64>(n, s, 1.0, 200 + trial).unwrap();
            let z = LinearMap::apply(&b, &x.values);
            let out = cosamp(&z, &b, s, &CosampConfig::default()).unwrap();
            let err: f64 = out.signal.values.iter().zip(&x.values).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(err < 1e-6, "trial {trial}: {err}");
            assert!(out.converged);
        }
    }

    #[test]
    fn residual_history_never_increases_and_output_is_sparse() {
        let (n, q, s) = (512, 100, 25);
        let b = gaussian(n, q, 9);
        let x = synthesize_signal::<f64>(n, s, 1.0, 10).unwrap();
        let mut z = LinearMap::apply(&b, &x.values);
        for (i, v) in z.iter_mut().enumerate() {
            *v += 0.05 * ((i as f64) * 1.7).sin();
        }
        let out = cosamp(&z, &b, s, &CosampConfig::default()).unwrap();
        assert!(out.signal.nnz() <= s);
        for w in out.residual_history.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let b = Array2::<f64>::ones((4, 8));
        assert!(matches!(
            cosamp(&[1.0; 3], &b, 2, &CosampConfig::default()),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            cosamp(&[1.0; 4], &b, 9, &CosampConfig::default()),
            Err(Error::InvalidSparsity { .. })
        ));
    }
}
