//! Per-coordinate tone estimation.
//!
//! For coordinate `l` of `z = B x`, block `r` contributes one sample
//! `u_r = link(t_r z_l) + noise` at "time" `t_r = D^r[l, l]`. Recovering `z_l`
//! is single-tone frequency estimation from irregular samples, solved here by
//! a matched filter evaluated coarse to fine over the tone grid.

use std::sync::Arc;

use num_complex::Complex;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::model::{BlockDiagonal, FeatureData, FeatureVector, ToneGrid};
use crate::scalar::Real;

/// Coarse-pass phasors are recomputed exactly this often; in between they
/// advance by complex rotation.
const REANCHOR_EVERY: usize = 64;

/// Sample times and observations for one coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct ToneSamples<T, U> {
    pub t: Vec<T>,
    pub u: Vec<U>,
}

impl<T: Real, U> ToneSamples<T, U> {
    pub fn new(t: Vec<T>, u: Vec<U>) -> Result<Self> {
        if t.len() != u.len() {
            return Err(Error::DimensionMismatch {
                what: "tone sample count",
                expected: t.len(),
                found: u.len(),
            });
        }
        if t.is_empty() {
            return Err(Error::DimensionMismatch {
                what: "tone sample count",
                expected: 1,
                found: 0,
            });
        }
        Ok(ToneSamples { t, u })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// Strictly better objective, or an exact tie resolved toward smaller `|v|`
/// and then smaller `v`.
#[inline]
fn beats<T: Real>(obj: T, v: T, best_obj: T, best_v: T) -> bool {
    obj > best_obj || (obj == best_obj && (v.abs() < best_v.abs() || (v.abs() == best_v.abs() && v < best_v)))
}

#[inline]
fn phasor<T: Real>(phase: T) -> Complex<T> {
    let (s, c) = phase.sin_cos();
    Complex::new(c, s)
}

/// Grid search over coarse indices `lo..=hi` followed by local refinement
/// within `[lower, upper]`. `objective` receives `exp(i t_r v)` for every
/// sample and must be a deterministic function of those phasors.
fn grid_search<T, F>(t: &[T], grid: &ToneGrid<T>, lo: usize, hi: usize, lower: T, upper: T, objective: F) -> T
where
    T: Real,
    F: Fn(&[Complex<T>]) -> T,
{
    let step = grid.coarse_step();
    let rotations: Vec<Complex<T>> = t.iter().map(|&tr| phasor(tr * step)).collect();
    let mut phasors = vec![Complex::new(T::zero(), T::zero()); t.len()];

    let mut best_v = grid.point(lo);
    let mut best_obj = T::neg_infinity();
    for j in lo..=hi {
        let v = grid.point(j);
        if (j - lo) % REANCHOR_EVERY == 0 {
            for (p, &tr) in phasors.iter_mut().zip(t) {
                *p = phasor(tr * v);
            }
        } else {
            for (p, rot) in phasors.iter_mut().zip(&rotations) {
                *p *= rot;
            }
        }
        let obj = objective(&phasors);
        if beats(obj, v, best_obj, best_v) {
            best_obj = obj;
            best_v = v;
        }
    }

    // Zoom around the incumbent; offset 0 keeps the incumbent itself, so an
    // exact coarse hit survives refinement.
    let mut h = step;
    let factor = grid.refine_factor as i64;
    for _ in 0..grid.refine_rounds {
        h = h / T::from_count(grid.refine_factor);
        let center = best_v;
        best_obj = T::neg_infinity();
        for i in -factor..=factor {
            let v = if i == 0 { center } else { center + T::lit(i as f64) * h };
            if v < lower || v > upper {
                continue;
            }
            for (p, &tr) in phasors.iter_mut().zip(t) {
                *p = phasor(tr * v);
            }
            let obj = objective(&phasors);
            if beats(obj, v, best_obj, best_v) || best_obj == T::neg_infinity() {
                best_obj = obj;
                best_v = v;
            }
        }
    }
    best_v
}

/// Matched filter for complex samples `u = exp(i z t) + h`: the grid point
/// maximizing `|<u, exp(i t v)>|`.
pub fn matched_filter_complex<T: Real>(samples: &ToneSamples<T, Complex<T>>, grid: &ToneGrid<T>) -> Result<T> {
    grid.check()?;
    let u = &samples.u;
    let objective = |ph: &[Complex<T>]| {
        let acc = u
            .iter()
            .zip(ph)
            .fold(Complex::new(T::zero(), T::zero()), |acc, (a, p)| acc + a * p.conj());
        acc.norm_sqr()
    };
    Ok(grid_search(
        &samples.t,
        grid,
        0,
        grid.coarse_points - 1,
        -grid.omega,
        grid.omega,
        objective,
    ))
}

/// Objective maximized by the sine matched filter at template `sin(t v)`,
/// together with the signed correlation `<u, sin(t v)>`.
pub fn sine_objective<T: Real>(t: &[T], u: &[T], v: T) -> (T, T) {
    let mut corr = T::zero();
    let mut energy = T::zero();
    for (&tr, &ur) in t.iter().zip(u) {
        let s = (tr * v).sin();
        corr += ur * s;
        energy += s * s;
    }
    (T::lit(2.0) * corr.abs() - energy, corr)
}

/// Matched filter for real samples `u = sin(z t) + h`.
///
/// Maximizes `2|<u, psi_v>| - ||psi_v||^2` with `psi_v = sin(t v)` over
/// `v >= 0`, which is the least-squares fit `min ||u -+ psi_v||^2`. Since
/// `psi_{-v} = -psi_v`, the sign of the estimate is the sign of `<u, psi_v>`.
pub fn matched_filter_sine<T: Real>(samples: &ToneSamples<T, T>, grid: &ToneGrid<T>) -> Result<T> {
    grid.check()?;
    let u = &samples.u;
    let objective = |ph: &[Complex<T>]| {
        let mut corr = T::zero();
        let mut energy = T::zero();
        for (&ur, p) in u.iter().zip(ph) {
            corr += ur * p.im;
            energy += p.im * p.im;
        }
        T::lit(2.0) * corr.abs() - energy
    };
    let p = grid.coarse_points;
    let v = grid_search(&samples.t, grid, p / 2, p - 1, T::zero(), grid.omega, objective);
    let (_, corr) = sine_objective(&samples.t, u, v);
    Ok(if corr < T::zero() { -v } else { v })
}

/// Observations for coordinate `l`: entries `l, l + q, ..., l + (k-1) q`.
pub fn gather<U: Copy>(data: &[U], q: usize, k: usize, l: usize) -> Vec<U> {
    (0..k).map(|r| data[r * q + l]).collect()
}

fn check_features<T: Real>(y: &FeatureVector<T>, blocks: &BlockDiagonal<T>) -> Result<()> {
    y.check_len(blocks.m())
}

/// Stage one: matched-filter estimate of every coordinate of `z = B x`.
///
/// Coordinates are independent, so they are estimated in parallel; the
/// result is identical to a sequential pass.
pub fn estimate_tones<T: Real>(y: &FeatureVector<T>, blocks: &BlockDiagonal<T>, grid: &ToneGrid<T>) -> Result<Vec<T>> {
    grid.check()?;
    check_features(y, blocks)?;
    grid.check_resolution(blocks.max_abs())?;
    let (q, k) = (blocks.q(), blocks.k());
    match &y.data {
        FeatureData::Complex(data) => (0..q)
            .into_par_iter()
            .map(|l| matched_filter_complex(&ToneSamples::new(blocks.times(l), gather(data, q, k, l))?, grid))
            .collect(),
        FeatureData::Real(data) => (0..q)
            .into_par_iter()
            .map(|l| matched_filter_sine(&ToneSamples::new(blocks.times(l), gather(data, q, k, l))?, grid))
            .collect(),
    }
}

/// `||u - link(v t)||_2` for coordinate `l`, used as a fit diagnostic.
pub fn tone_residual<T: Real>(y: &FeatureVector<T>, blocks: &BlockDiagonal<T>, l: usize, v: T) -> T {
    let (q, k) = (blocks.q(), blocks.k());
    let t = blocks.times(l);
    match &y.data {
        FeatureData::Complex(data) => gather(data, q, k, l)
            .iter()
            .zip(&t)
            .map(|(u, &tr)| (u - phasor(tr * v)).norm_sqr())
            .sum::<T>()
            .sqrt(),
        FeatureData::Real(data) => gather(data, q, k, l)
            .iter()
            .zip(&t)
            .map(|(&u, &tr)| (u - (tr * v).sin()).powi(2))
            .sum::<T>()
            .sqrt(),
    }
}

/// Single-tone estimator for uniformly spaced samples: magnitude peak of a
/// zero-padded DFT refined by parabolic interpolation.
///
/// Estimates are confined to the band `|z| <= pi / spacing`; tones outside
/// it come back aliased.
pub struct UniformGridEstimator<T: Real> {
    fft: Arc<dyn Fft<T>>,
    len: usize,
}

impl<T: Real> UniformGridEstimator<T> {
    /// FFT length is the next power of two at or above both the grid's
    /// coarse point count and eight times the sample count.
    pub fn new(grid: &ToneGrid<T>, samples: usize) -> Result<Self> {
        grid.check()?;
        let len = grid.coarse_points.max(8 * samples).next_power_of_two();
        let fft = FftPlanner::new().plan_fft_forward(len);
        Ok(UniformGridEstimator { fft, len })
    }

    fn spacing(t: &[T]) -> Result<T> {
        if t.len() < 2 {
            return Err(Error::NonUniformSamples);
        }
        let dt = t[1] - t[0];
        let scale = t.iter().fold(T::zero(), |a, &b| a.max(b.abs()));
        let tol = T::lit(1e-9) * scale;
        if dt == T::zero() {
            return Err(Error::NonUniformSamples);
        }
        for (r, &tr) in t.iter().enumerate() {
            if (tr - (t[0] + T::from_count(r) * dt)).abs() > tol {
                return Err(Error::NonUniformSamples);
            }
        }
        Ok(dt)
    }

    fn spectrum(&self, u: impl Iterator<Item = Complex<T>>) -> Vec<T> {
        let mut buf = vec![Complex::new(T::zero(), T::zero()); self.len];
        for (b, v) in buf.iter_mut().zip(u) {
            *b = v;
        }
        self.fft.process(&mut buf);
        buf.iter().map(|c| c.norm()).collect()
    }

    /// Fractional peak bin in `[lo, hi]` of a cyclic magnitude spectrum.
    fn peak(&self, mag: &[T], lo: usize, hi: usize) -> T {
        let n = self.len;
        let mut best = lo;
        for f in lo..=hi {
            if mag[f] > mag[best] {
                best = f;
            }
        }
        let a = mag[(best + n - 1) % n];
        let b = mag[best];
        let c = mag[(best + 1) % n];
        let denom = a - T::lit(2.0) * b + c;
        let delta = if denom < T::zero() {
            (T::lit(0.5) * (a - c) / denom).max(T::lit(-0.5)).min(T::lit(0.5))
        } else {
            T::zero()
        };
        T::from_count(best) + delta
    }

    fn to_tone(&self, bin: T, dt: T) -> T {
        let n = T::from_count(self.len);
        let mut f = bin;
        if f > n / T::lit(2.0) {
            f -= n;
        }
        T::lit(2.0) * T::PI() * f / n / dt
    }

    pub fn estimate_complex(&self, samples: &ToneSamples<T, Complex<T>>) -> Result<T> {
        let dt = Self::spacing(&samples.t)?;
        let mag = self.spectrum(samples.u.iter().copied());
        let bin = self.peak(&mag, 0, self.len - 1);
        Ok(self.to_tone(bin, dt))
    }

    /// Real samples: the peak is searched over non-negative frequencies and
    /// the sign taken from the correlation with the fitted sine.
    pub fn estimate_sine(&self, samples: &ToneSamples<T, T>) -> Result<T> {
        let dt = Self::spacing(&samples.t)?;
        let mag = self.spectrum(samples.u.iter().map(|&r| Complex::new(r, T::zero())));
        let bin = self.peak(&mag, 0, self.len / 2);
        let v = self.to_tone(bin, dt).abs();
        let (_, corr) = sine_objective(&samples.t, &samples.u, v);
        Ok(if corr < T::zero() { -v } else { v })
    }
}

/// One-shot form of [`UniformGridEstimator::estimate_complex`].
pub fn uniform_grid_estimator<T: Real>(samples: &ToneSamples<T, Complex<T>>, grid: &ToneGrid<T>) -> Result<T> {
    UniformGridEstimator::new(grid, samples.len())?.estimate_complex(samples)
}

/// Stage one with the uniform-grid estimator in place of the matched filter.
pub fn estimate_tones_uniform<T: Real>(
    y: &FeatureVector<T>,
    blocks: &BlockDiagonal<T>,
    grid: &ToneGrid<T>,
) -> Result<Vec<T>> {
    check_features(y, blocks)?;
    let (q, k) = (blocks.q(), blocks.k());
    let est = UniformGridEstimator::new(grid, k)?;
    match &y.data {
        FeatureData::Complex(data) => (0..q)
            .into_par_iter()
            .map(|l| est.estimate_complex(&ToneSamples::new(blocks.times(l), gather(data, q, k, l))?))
            .collect(),
        FeatureData::Real(data) => (0..q)
            .into_par_iter()
            .map(|l| est.estimate_sine(&ToneSamples::new(blocks.times(l), gather(data, q, k, l))?))
            .collect(),
    }
}
