//! Experiment configs, seeded Monte Carlo sweeps and result files.
//!
//! A sweep is the cartesian product of the dimension lists in an
//! [`ExperimentConfig`]. Cells are numbered with `n` outermost, then `q`,
//! `s`, `norm`, `sigma`, and `k` innermost. Trial `t` of cell `c` draws all
//! of its randomness from `seed::derive(master, [c, t])`, so any single row
//! can be regenerated on its own.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{ght, one_step_threshold, GhtConfig};
use crate::embed::{
    forward, make_operator, make_structured_operator, synthesize_signal, uniform_time_blocks, BlockDist, InnerDist,
    OperatorSpec,
};
use crate::error::{Error, Result};
use crate::model::{FeatureData, FeatureVector, LinkType, SensingOperator, SparseSignal, ToneGrid};
use crate::pipeline::{default_params, metrics, mf_sparse, uniform_grid_sparse, ParamConstants};
use crate::recovery::CosampConfig;
use crate::seed;
use crate::transforms::{haar2d_inverse, load_pgm, psnr, save_pgm, sparsify_image, test_pattern, HaarSynthesisMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    RecoverySweep,
    CosineSweep,
    NoiseSweep,
    Image,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    MfSparse,
    Ght,
    OneStep,
    RmStyle,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::MfSparse => "mf_sparse",
            Algorithm::Ght => "ght",
            Algorithm::OneStep => "one_step",
            Algorithm::RmStyle => "rm_style",
        }
    }
}

/// Sample spacing of the deterministic blocks used by `rm_style`; block `r`
/// holds `r * spacing`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UniformSpacing {
    /// Same mean square entry as the random blocks.
    EnergyMatched,
    /// `pi / omega`, so the unaliased band is exactly the search set.
    BandMatched,
    Fixed(f64),
}

impl UniformSpacing {
    pub fn resolve(self, k: usize, block_dist: BlockDist, omega: f64) -> f64 {
        match self {
            UniformSpacing::EnergyMatched => {
                let mean_r2 = (1..=k).map(|r| (r * r) as f64).sum::<f64>() / k as f64;
                (block_dist.mean_square() / mean_r2).sqrt()
            }
            UniformSpacing::BandMatched => std::f64::consts::PI / omega,
            UniformSpacing::Fixed(d) => d,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub coarse_points: usize,
    pub refine_rounds: usize,
    pub refine_factor: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            coarse_points: ToneGrid::<f64>::DEFAULT_COARSE_POINTS,
            refine_rounds: ToneGrid::<f64>::DEFAULT_REFINE_ROUNDS,
            refine_factor: ToneGrid::<f64>::DEFAULT_REFINE_FACTOR,
        }
    }
}

impl GridConfig {
    pub fn grid(&self, omega: f64) -> Result<ToneGrid<f64>> {
        ToneGrid::new(omega, self.coarse_points, self.refine_rounds, self.refine_factor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImageSettings {
    /// P5 PGM to use; the built-in test pattern when absent.
    pub input: Option<PathBuf>,
    /// Side of the test pattern.
    pub side: usize,
}

impl Default for ImageSettings {
    fn default() -> Self {
        ImageSettings { input: None, side: 64 }
    }
}

fn default_sigma() -> Vec<f64> {
    vec![0.0]
}

fn default_norm() -> Vec<f64> {
    vec![1.0]
}

fn default_link() -> LinkType {
    LinkType::RealSine
}

fn default_algorithms() -> Vec<Algorithm> {
    vec![Algorithm::MfSparse]
}

fn default_trials() -> usize {
    1
}

fn default_threshold() -> f64 {
    0.05
}

fn default_inner() -> InnerDist {
    InnerDist::GaussianVar1OverQ
}

fn default_eps() -> f64 {
    0.1
}

fn default_delta() -> f64 {
    0.05
}

fn default_spacing() -> UniformSpacing {
    UniformSpacing::EnergyMatched
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    /// Ambient dimensions; unused by image runs, where `n` is the pixel count.
    #[serde(default)]
    pub n: Vec<usize>,
    pub q: Vec<usize>,
    pub k: Vec<usize>,
    pub s: Vec<usize>,
    #[serde(default = "default_sigma")]
    pub sigma: Vec<f64>,
    /// Target `||x||_2` values; unused by image runs.
    #[serde(default = "default_norm")]
    pub norm: Vec<f64>,
    #[serde(default = "default_link")]
    pub link: LinkType,
    #[serde(default = "default_algorithms")]
    pub algorithms: Vec<Algorithm>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_threshold")]
    pub success_threshold: f64,
    #[serde(default = "default_inner")]
    pub inner_dist: InnerDist,
    /// When absent, `UniformSym(T)` with `T` from [`default_params`] at
    /// accuracy `target_eps` and failure probability `delta`.
    #[serde(default)]
    pub block_dist: Option<BlockDist>,
    #[serde(default = "default_eps")]
    pub target_eps: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub constants: ParamConstants,
    /// Search half-width; `c3 * ||x||_2` when absent.
    #[serde(default)]
    pub omega: Option<f64>,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default = "default_spacing")]
    pub rm_spacing: UniformSpacing,
    #[serde(default)]
    pub cosamp: CosampConfig,
    #[serde(default)]
    pub ght: GhtConfig,
    /// Write wall times; off gives fully reproducible files.
    #[serde(default = "yes")]
    pub record_timing: bool,
    #[serde(default)]
    pub image: ImageSettings,
    /// Output stem: `<stem>.csv`, `<stem>.summary.csv`, `<stem>.json`.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn nonempty<T>(v: &[T], path: &str) -> Result<()> {
    if v.is_empty() {
        return Err(Error::config(path, "list must not be empty"));
    }
    Ok(())
}

fn each<T: Copy>(v: &[T], path: &str, ok: impl Fn(T) -> bool, what: &str) -> Result<()> {
    nonempty(v, path)?;
    for (i, &x) in v.iter().enumerate() {
        if !ok(x) {
            return Err(Error::config(format!("{path}[{i}]"), what));
        }
    }
    Ok(())
}

impl ExperimentConfig {
    /// Parses JSON, reporting the path of the offending field on failure.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(if path == "." { "<root>".to_string() } else { path }, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let image = self.kind == ExperimentKind::Image;
        if !image {
            each(&self.n, "n", |v| v > 0, "must be positive")?;
            each(&self.norm, "norm", |v: f64| v > 0.0 && v.is_finite(), "must be positive")?;
            nonempty(&self.algorithms, "algorithms")?;
        }
        each(&self.q, "q", |v| v > 0, "must be positive")?;
        each(&self.k, "k", |v| v > 0, "must be positive")?;
        each(&self.s, "s", |v| v > 0, "must be positive")?;
        each(&self.sigma, "sigma", |v: f64| v >= 0.0 && v.is_finite(), "must be non-negative")?;
        if self.trials == 0 {
            return Err(Error::config("trials", "must be at least 1"));
        }
        if !(self.success_threshold > 0.0) {
            return Err(Error::config("success_threshold", "must be positive"));
        }
        if !(self.target_eps > 0.0) {
            return Err(Error::config("target_eps", "must be positive"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::config("delta", "must lie in (0, 1)"));
        }
        if let Some(w) = self.omega {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::config("omega", "must be positive"));
            }
        }
        if let Some(BlockDist::UniformSym(t)) = self.block_dist {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::config("block_dist.uniform_sym", "half-width must be positive"));
            }
        }
        if let UniformSpacing::Fixed(d) = self.rm_spacing {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::config("rm_spacing.fixed", "must be positive"));
            }
        }
        if let Err(e) = self.grid.grid(1.0) {
            return Err(Error::config("grid", e.to_string()));
        }
        if let Err(e) = self.cosamp.check() {
            return Err(Error::config("cosamp", e.to_string()));
        }
        if !image {
            let smallest = *self.n.iter().min().expect("nonempty");
            for (i, &s) in self.s.iter().enumerate() {
                if s > smallest {
                    return Err(Error::config(format!("s[{i}]"), format!("exceeds n = {smallest}")));
                }
            }
            if self.algorithms.contains(&Algorithm::Ght) && self.link != LinkType::RealSine {
                return Err(Error::config("algorithms", "ght needs the real_sine link"));
            }
        }
        Ok(())
    }

    /// Parameter cells in sweep order.
    pub fn cells(&self) -> Vec<Cell> {
        let ns: Vec<usize> = if self.kind == ExperimentKind::Image {
            vec![self.image.side * self.image.side]
        } else {
            self.n.clone()
        };
        let norms: Vec<f64> = if self.kind == ExperimentKind::Image { vec![0.0] } else { self.norm.clone() };
        let mut out = Vec::new();
        for &n in &ns {
            for &q in &self.q {
                for &s in &self.s {
                    for &norm in &norms {
                        for &sigma in &self.sigma {
                            for &k in &self.k {
                                out.push(Cell {
                                    index: out.len(),
                                    n,
                                    q,
                                    k,
                                    s,
                                    sigma,
                                    norm,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn block_dist_for(&self, cell: &Cell) -> Result<BlockDist> {
        match self.block_dist {
            Some(d) => Ok(d),
            None => {
                let p = default_params(
                    cell.n,
                    cell.s,
                    cell.norm,
                    self.target_eps,
                    self.delta,
                    cell.sigma,
                    &self.constants,
                )?;
                Ok(BlockDist::UniformSym(p.t))
            }
        }
    }

    fn omega_for(&self, norm: f64) -> f64 {
        self.omega.unwrap_or(self.constants.c3 * norm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub index: usize,
    pub n: usize,
    pub q: usize,
    pub k: usize,
    pub s: usize,
    pub sigma: f64,
    pub norm: f64,
}

/// Settings a cell actually ran with after defaults were applied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolvedCell {
    #[serde(flatten)]
    pub cell: Cell,
    pub block_dist: Option<BlockDist>,
    pub omega: f64,
    pub rm_spacing: Option<f64>,
}

/// One algorithm on one trial. Columns are written in field order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub cell: usize,
    pub trial: usize,
    pub algorithm: Algorithm,
    pub n: usize,
    pub q: usize,
    pub k: usize,
    pub s: usize,
    pub sigma: f64,
    pub norm: f64,
    pub link: LinkType,
    pub seed: u64,
    /// Absent for one-step thresholding, whose scale is unidentifiable.
    pub rel_error: Option<f64>,
    pub cosine: Option<f64>,
    pub success: Option<bool>,
    /// Empty unless the algorithm failed on this trial.
    pub error: String,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: usize,
    pub algorithm: Algorithm,
    pub n: usize,
    pub q: usize,
    pub k: usize,
    pub s: usize,
    pub sigma: f64,
    pub norm: f64,
    pub trials: usize,
    pub failures: usize,
    pub successes: usize,
    /// Failed trials count as unsuccessful.
    pub success_rate: Option<f64>,
    pub mean_rel_error: Option<f64>,
    pub median_rel_error: Option<f64>,
    pub mean_cosine: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub cells: Vec<ResolvedCell>,
    pub records: Vec<TrialRecord>,
    pub summary: Vec<CellSummary>,
}

impl ExperimentResult {
    pub fn summary_for(&self, cell: usize, algorithm: Algorithm) -> Option<&CellSummary> {
        self.summary
            .iter()
            .find(|c| c.cell == cell && c.algorithm == algorithm)
    }
}

/// Seeds for one trial: operator, signal, noise.
pub fn trial_seeds(master: u64, cell: usize, trial: usize) -> (u64, [u64; 3]) {
    let child = seed::derive(master, &[cell as u64, trial as u64]);
    (child, [0, 1, 2].map(|i| seed::derive(child, &[i])))
}

struct Outcome {
    rel_error: Option<f64>,
    cosine: Option<f64>,
}

fn run_algorithm(
    cfg: &ExperimentConfig,
    cell: &Cell,
    algorithm: Algorithm,
    op: &SensingOperator<f64>,
    x: &SparseSignal<f64>,
    y: &FeatureVector<f64>,
    noise_seed: u64,
) -> Result<Outcome> {
    let grid = cfg.grid.grid(cfg.omega_for(cell.norm))?;
    let estimate = match algorithm {
        Algorithm::MfSparse => mf_sparse(y, op, &grid, cell.s, &cfg.cosamp)?.signal,
        Algorithm::Ght => ght(y, op, cell.s, &cfg.ght)?.signal,
        Algorithm::OneStep => {
            let est = one_step_threshold(y, op, cell.s)?;
            let (_, cosine) = metrics(&est.values, &x.values)?;
            return Ok(Outcome {
                rel_error: None,
                cosine: Some(cosine),
            });
        }
        Algorithm::RmStyle => {
            let block_dist = cfg.block_dist_for(cell)?;
            let spacing = cfg.rm_spacing.resolve(cell.k, block_dist, grid.omega);
            let uniform = SensingOperator::new(op.inner.clone(), uniform_time_blocks(cell.k, cell.q, spacing)?)?;
            let y_uniform = forward(&uniform, x, cfg.link, cell.sigma, noise_seed)?;
            uniform_grid_sparse(&y_uniform, &uniform, &grid, cell.s, &cfg.cosamp)?.signal
        }
    };
    let rel = crate::pipeline::relative_error(&estimate.values, &x.values)?;
    // A zero estimate has no direction; report it as orthogonal.
    let cosine = metrics(&estimate.values, &x.values).map(|m| m.1).unwrap_or(0.0);
    Ok(Outcome {
        rel_error: Some(rel),
        cosine: Some(cosine),
    })
}

fn run_trial(cfg: &ExperimentConfig, cell: &Cell, trial: usize) -> Vec<TrialRecord> {
    let (child, [op_seed, signal_seed, noise_seed]) = trial_seeds(cfg.seed, cell.index, trial);
    let setup = (|| -> Result<_> {
        let spec = OperatorSpec {
            n: cell.n,
            q: cell.q,
            k: cell.k,
            inner_dist: cfg.inner_dist,
            block_dist: cfg.block_dist_for(cell)?,
            seed: op_seed,
        };
        let op = make_operator::<f64>(&spec)?;
        let x = synthesize_signal(cell.n, cell.s, cell.norm, signal_seed)?;
        let y = forward(&op, &x, cfg.link, cell.sigma, noise_seed)?;
        Ok((op, x, y))
    })();

    cfg.algorithms
        .iter()
        .map(|&algorithm| {
            let started = Instant::now();
            let outcome = match &setup {
                Ok((op, x, y)) => run_algorithm(cfg, cell, algorithm, op, x, y, noise_seed),
                Err(e) => Err(Error::InvalidSpec(e.to_string())),
            };
            let elapsed_ms = if cfg.record_timing {
                started.elapsed().as_secs_f64() * 1e3
            } else {
                0.0
            };
            let (rel_error, cosine, error) = match outcome {
                Ok(o) => (o.rel_error, o.cosine, String::new()),
                Err(e) => {
                    log::warn!("cell {} trial {trial} {}: {e}", cell.index, algorithm.name());
                    (None, None, e.to_string())
                }
            };
            TrialRecord {
                cell: cell.index,
                trial,
                algorithm,
                n: cell.n,
                q: cell.q,
                k: cell.k,
                s: cell.s,
                sigma: cell.sigma,
                norm: cell.norm,
                link: cfg.link,
                seed: child,
                success: rel_error.map(|r| r < cfg.success_threshold),
                rel_error,
                cosine,
                error,
                elapsed_ms,
            }
        })
        .collect()
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    let h = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[h] } else { 0.5 * (v[h - 1] + v[h]) })
}

/// Per-cell, per-algorithm aggregates of sorted records.
pub fn summarize(cells: &[Cell], algorithms: &[Algorithm], records: &[TrialRecord]) -> Vec<CellSummary> {
    let mut out = Vec::new();
    for cell in cells {
        for &algorithm in algorithms {
            let rows: Vec<&TrialRecord> = records
                .iter()
                .filter(|r| r.cell == cell.index && r.algorithm == algorithm)
                .collect();
            let rel: Vec<f64> = rows.iter().filter_map(|r| r.rel_error).collect();
            let cos: Vec<f64> = rows.iter().filter_map(|r| r.cosine).collect();
            let successes = rows.iter().filter(|r| r.success == Some(true)).count();
            let scored = algorithm != Algorithm::OneStep && !rows.is_empty();
            out.push(CellSummary {
                cell: cell.index,
                algorithm,
                n: cell.n,
                q: cell.q,
                k: cell.k,
                s: cell.s,
                sigma: cell.sigma,
                norm: cell.norm,
                trials: rows.len(),
                failures: rows.iter().filter(|r| !r.error.is_empty()).count(),
                successes,
                success_rate: scored.then(|| successes as f64 / rows.len() as f64),
                mean_rel_error: mean(&rel),
                median_rel_error: median(&rel),
                mean_cosine: mean(&cos),
            });
        }
    }
    out
}

/// Runs every cell and trial of a sweep. Trials run in parallel on the
/// current rayon pool; rows come back sorted by `(cell, trial)` with
/// algorithms in config order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    if cfg.kind == ExperimentKind::Image {
        return Err(Error::config("kind", "image experiments run through run_image_experiment"));
    }
    let cells = cfg.cells();
    let mut resolved = Vec::with_capacity(cells.len());
    for cell in &cells {
        let block_dist = cfg.block_dist_for(cell).ok();
        let omega = cfg.omega_for(cell.norm);
        resolved.push(ResolvedCell {
            cell: *cell,
            block_dist,
            omega,
            rm_spacing: match (cfg.algorithms.contains(&Algorithm::RmStyle), block_dist) {
                (true, Some(d)) => Some(cfg.rm_spacing.resolve(cell.k, d, omega)),
                _ => None,
            },
        });
    }
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..cfg.trials).map(move |t| (c, t)))
        .collect();
    let records: Vec<TrialRecord> = jobs
        .par_iter()
        .flat_map_iter(|&(c, t)| run_trial(cfg, &cells[c], t))
        .collect();
    let summary = summarize(&cells, &cfg.algorithms, &records);
    Ok(ExperimentResult {
        config: cfg.clone(),
        cells: resolved,
        records,
        summary,
    })
}

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    Ok(())
}

pub fn write_records<W: std::io::Write>(records: &[TrialRecord], w: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    for r in records {
        csv.serialize(r)?;
    }
    csv.flush()?;
    Ok(())
}

pub fn read_records<R: std::io::Read>(r: R) -> Result<Vec<TrialRecord>> {
    let mut csv = csv::Reader::from_reader(r);
    let rows: std::result::Result<Vec<TrialRecord>, csv::Error> = csv.deserialize().collect();
    Ok(rows?)
}

fn write_csv<S: Serialize>(rows: &[S], path: &Path) -> Result<()> {
    let mut csv = csv::Writer::from_path(path)?;
    for r in rows {
        csv.serialize(r)?;
    }
    csv.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct Sidecar<'a, C, S> {
    version: &'static str,
    config: &'a ExperimentConfig,
    cells: &'a [C],
    summary: &'a [S],
}

fn write_sidecar<C: Serialize, S: Serialize>(
    cfg: &ExperimentConfig,
    cells: &[C],
    summary: &[S],
    path: &Path,
) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(
        &mut f,
        &Sidecar {
            version: env!("CARGO_PKG_VERSION"),
            config: cfg,
            cells,
            summary,
        },
    )?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

/// Writes `<stem>.csv`, `<stem>.summary.csv` and the `<stem>.json` sidecar.
pub fn write_results(result: &ExperimentResult, stem: &Path) -> Result<Vec<PathBuf>> {
    ensure_parent(stem)?;
    let rows = with_suffix(stem, ".csv");
    let summary = with_suffix(stem, ".summary.csv");
    let sidecar = with_suffix(stem, ".json");
    write_records(&result.records, BufWriter::new(File::create(&rows)?))?;
    write_csv(&result.summary, &summary)?;
    write_sidecar(&result.config, &result.cells, &result.summary, &sidecar)?;
    Ok(vec![rows, summary, sidecar])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub cell: usize,
    pub q: usize,
    pub k: usize,
    pub s: usize,
    pub sigma: f64,
    pub omega: f64,
    pub seed: u64,
    /// Against the input image.
    pub psnr: Option<f64>,
    /// PSNR of the best `s`-term approximation: the most any recovery can reach.
    pub ceiling_psnr: f64,
    /// Against the `s`-term approximation that was actually encoded.
    pub psnr_vs_target: Option<f64>,
    pub boundary_fraction: Option<f64>,
    pub error: String,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageResult {
    pub config: ExperimentConfig,
    pub records: Vec<ImageRecord>,
    pub image: Array2<f64>,
    /// `s`-term approximations, one per entry of `config.s`.
    pub targets: Vec<Array2<f64>>,
    /// Reconstruction for each record; `None` where recovery failed.
    pub reconstructions: Vec<Option<Array2<f64>>>,
}

fn load_image(cfg: &ExperimentConfig) -> Result<Array2<f64>> {
    match &cfg.image.input {
        Some(path) => load_pgm(path),
        None => {
            let side = cfg.image.side;
            if side == 0 || !side.is_power_of_two() {
                return Err(Error::config("image.side", "must be a power of two"));
            }
            Ok(test_pattern(side))
        }
    }
}

/// Sparsifies an image in the Haar basis, encodes it through the structured
/// operator and recovers it with MF-Sparse, once per parameter cell.
pub fn run_image_experiment(cfg: &ExperimentConfig) -> Result<ImageResult> {
    cfg.validate()?;
    if cfg.kind != ExperimentKind::Image {
        return Err(Error::config("kind", "expected `image`"));
    }
    let image = load_image(cfg)?;
    let (h, w) = image.dim();
    if h != w || !w.is_power_of_two() {
        return Err(Error::config("image.input", format!("image is {h}x{w}, need a power-of-two square")));
    }
    let n = w * w;
    for (i, &s) in cfg.s.iter().enumerate() {
        if s >= n {
            return Err(Error::config(
                format!("s[{i}]"),
                format!("keeping all {n} coefficients leaves nothing to recover"),
            ));
        }
    }
    for (i, &q) in cfg.q.iter().enumerate() {
        if q > n {
            return Err(Error::config(format!("q[{i}]"), format!("exceeds the pixel count {n}")));
        }
    }

    let targets: Vec<_> = cfg
        .s
        .iter()
        .map(|&s| sparsify_image(&image, s, 1.0))
        .collect::<Result<_>>()?;
    let cells: Vec<Cell> = cfg
        .cells()
        .into_iter()
        .map(|c| Cell { n, ..c })
        .collect();

    let outcomes: Vec<(ImageRecord, Option<Array2<f64>>)> = cells
        .par_iter()
        .map(|cell| {
            let target = &targets[cfg.s.iter().position(|&s| s == cell.s).expect("cell s from list")];
            let coeffs: Vec<f64> = target.coeffs.iter().copied().collect();
            let norm = crate::scalar::norm2(&coeffs);
            let omega = cfg.omega_for(norm);
            let cell_seed = seed::derive(cfg.seed, &[cell.index as u64]);
            let started = Instant::now();
            let run = (|| -> Result<_> {
                let with_norm = Cell { norm, ..*cell };
                let base = make_structured_operator::<f64>(
                    n,
                    cell.q,
                    cell.k,
                    cfg.block_dist_for(&with_norm)?,
                    seed::derive(cell_seed, &[0]),
                )?;
                let op = SensingOperator::new(HaarSynthesisMap::new(base.inner)?, base.blocks)?;
                let x = SparseSignal::new(coeffs.clone(), cell.s)?;
                let y = forward(&op, &x, cfg.link, cell.sigma, seed::derive(cell_seed, &[1]))?;
                let grid = cfg.grid.grid(omega)?;
                let out = mf_sparse(&y, &op, &grid, cell.s, &cfg.cosamp)?;
                let rec = haar2d_inverse(&Array2::from_shape_vec((w, w), out.signal.values).expect("square"))?;
                Ok((rec, out.diagnostics.boundary_fraction))
            })();
            let elapsed_ms = if cfg.record_timing {
                started.elapsed().as_secs_f64() * 1e3
            } else {
                0.0
            };
            let mut record = ImageRecord {
                cell: cell.index,
                q: cell.q,
                k: cell.k,
                s: cell.s,
                sigma: cell.sigma,
                omega,
                seed: cell_seed,
                psnr: None,
                ceiling_psnr: target.psnr,
                psnr_vs_target: None,
                boundary_fraction: None,
                error: String::new(),
                elapsed_ms,
            };
            match run {
                Ok((rec, boundary)) => {
                    record.psnr = Some(psnr(&image, &rec, 1.0));
                    record.psnr_vs_target = Some(psnr(&target.approx, &rec, 1.0));
                    record.boundary_fraction = Some(boundary);
                    (record, Some(rec))
                }
                Err(e) => {
                    record.error = e.to_string();
                    (record, None)
                }
            }
        })
        .collect();
    let (records, reconstructions) = outcomes.into_iter().unzip();
    Ok(ImageResult {
        config: cfg.clone(),
        records,
        image,
        targets: targets.into_iter().map(|t| t.approx).collect(),
        reconstructions,
    })
}

/// Writes `<stem>.csv`, `<stem>.json`, `<stem>.target_s<s>.pgm` per
/// sparsity and `<stem>.cell<i>.pgm` per successful reconstruction.
pub fn write_image_results(result: &ImageResult, stem: &Path) -> Result<Vec<PathBuf>> {
    ensure_parent(stem)?;
    let mut written = Vec::new();
    let table = with_suffix(stem, ".csv");
    write_csv(&result.records, &table)?;
    written.push(table);
    let sidecar = with_suffix(stem, ".json");
    write_sidecar::<ImageRecord, ImageRecord>(&result.config, &[], &result.records, &sidecar)?;
    written.push(sidecar);
    for (s, target) in result.config.s.iter().zip(&result.targets) {
        let path = with_suffix(stem, &format!(".target_s{s}.pgm"));
        save_pgm(target, &path)?;
        written.push(path);
    }
    for (record, rec) in result.records.iter().zip(&result.reconstructions) {
        if let Some(img) = rec {
            let path = with_suffix(stem, &format!(".cell{}.pgm", record.cell));
            save_pgm(img, &path)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// One value per line.
pub fn write_vector(path: &Path, v: &[f64]) -> Result<()> {
    let mut csv = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for &x in v {
        csv.serialize(x)?;
    }
    csv.flush()?;
    Ok(())
}

pub fn read_vector(path: &Path) -> Result<Vec<f64>> {
    let mut csv = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let rows: std::result::Result<Vec<f64>, csv::Error> = csv.deserialize().collect();
    Ok(rows?)
}

/// Real features one per line; complex features as `re,im` pairs.
pub fn write_features(path: &Path, y: &FeatureVector<f64>) -> Result<()> {
    let mut csv = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    match &y.data {
        FeatureData::Real(v) => {
            for &x in v {
                csv.serialize(x)?;
            }
        }
        FeatureData::Complex(v) => {
            for c in v {
                csv.serialize((c.re, c.im))?;
            }
        }
    }
    csv.flush()?;
    Ok(())
}

pub fn read_features(path: &Path, link: LinkType, noise_sigma: f64) -> Result<FeatureVector<f64>> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)?;
    let data = match link {
        LinkType::RealSine => {
            let rows: std::result::Result<Vec<f64>, csv::Error> = csv.deserialize().collect();
            FeatureData::Real(rows?)
        }
        LinkType::ComplexExp => {
            let rows: std::result::Result<Vec<(f64, f64)>, csv::Error> = csv.deserialize().collect();
            FeatureData::Complex(rows?.into_iter().map(|(re, im)| Complex::new(re, im)).collect())
        }
    };
    Ok(FeatureVector { data, noise_sigma })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig::from_json(
            r#"{
                "kind": "recovery_sweep",
                "n": [128], "q": [48], "k": [2, 4], "s": [3],
                "norm": [1.0], "sigma": [0.0],
                "algorithms": ["mf_sparse", "ght", "one_step"],
                "trials": 3, "seed": 11,
                "inner_dist": "gaussian_var1_over_q",
                "block_dist": "standard_normal",
                "grid": {"coarse_points": 512, "refine_rounds": 2},
                "record_timing": false
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn defaults_fill_in() {
        let cfg = small();
        assert_eq!(cfg.success_threshold, 0.05);
        assert_eq!(cfg.link, LinkType::RealSine);
        assert_eq!(cfg.grid.refine_factor, 16);
        assert_eq!(cfg.rm_spacing, UniformSpacing::EnergyMatched);
    }

    #[test]
    fn config_errors_name_the_field() {
        let bad = r#"{"kind": "recovery_sweep", "n": [64], "q": [8], "k": [2], "s": [2], "trials": "many"}"#;
        match ExperimentConfig::from_json(bad) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "trials"),
            other => panic!("{other:?}"),
        }
        let bad = r#"{"kind": "recovery_sweep", "n": [64], "q": [8], "k": [2, 0], "s": [2]}"#;
        match ExperimentConfig::from_json(bad) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "k[1]"),
            other => panic!("{other:?}"),
        }
        let bad = r#"{"kind": "recovery_sweep", "n": [64], "q": [8], "k": [2], "s": [2], "grid": {"coarse": 3}}"#;
        match ExperimentConfig::from_json(bad) {
            Err(Error::Config { path, .. }) => assert!(path.starts_with("grid"), "{path}"),
            other => panic!("{other:?}"),
        }
        let bad = r#"{"kind": "recovery_sweep", "n": [], "q": [8], "k": [2], "s": [2]}"#;
        assert!(matches!(ExperimentConfig::from_json(bad), Err(Error::Config { path, .. }) if path == "n"));
        let bad = r#"{"kind": "noise_sweep", "n": [64], "q": [8], "k": [2], "s": [2], "link": "complex_exp", "algorithms": ["ght"]}"#;
        assert!(matches!(ExperimentConfig::from_json(bad), Err(Error::Config { path, .. }) if path == "algorithms"));
    }

    #[test]
    fn cells_put_k_innermost() {
        let cfg = small();
        let cells = cfg.cells();
        assert_eq!(cells.len(), 2);
        assert_eq!((cells[0].k, cells[1].k), (2, 4));
        assert_eq!(cells[1].index, 1);
    }

    #[test]
    fn sweep_is_sorted_and_counts_add_up() {
        let cfg = small();
        let res = run_experiment(&cfg).unwrap();
        assert_eq!(res.records.len(), 2 * 3 * 3);
        let keys: Vec<(usize, usize)> = res.records.iter().map(|r| (r.cell, r.trial)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        for s in &res.summary {
            assert_eq!(s.trials, 3);
            if let Some(p) = s.success_rate {
                assert!((0.0..=1.0).contains(&p));
            }
        }
        let one = res.records.iter().find(|r| r.algorithm == Algorithm::OneStep).unwrap();
        assert!(one.rel_error.is_none() && one.success.is_none() && one.cosine.is_some());
    }

    #[test]
    fn trial_errors_are_recorded_not_raised() {
        let mut cfg = small();
        // A grid this coarse cannot resolve standard normal sample times.
        cfg.grid = GridConfig {
            coarse_points: 3,
            refine_rounds: 0,
            refine_factor: 2,
        };
        cfg.omega = Some(50.0);
        let res = run_experiment(&cfg).unwrap();
        let mf: Vec<_> = res.records.iter().filter(|r| r.algorithm == Algorithm::MfSparse).collect();
        assert!(mf.iter().all(|r| r.error.contains("too coarse") && r.success.is_none()));
        let s = res.summary_for(0, Algorithm::MfSparse).unwrap();
        assert_eq!((s.failures, s.success_rate), (3, Some(0.0)));
    }

    #[test]
    fn reruns_match_and_serial_matches_parallel() {
        let cfg = small();
        let a = run_experiment(&cfg).unwrap();
        let b = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| run_experiment(&cfg).unwrap());
        assert_eq!(a.records, b.records);
        let mut x = Vec::new();
        let mut y = Vec::new();
        write_records(&a.records, &mut x).unwrap();
        write_records(&b.records, &mut y).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn child_seeds_depend_on_cell_and_trial() {
        let (a, _) = trial_seeds(5, 0, 1);
        let (b, _) = trial_seeds(5, 1, 0);
        let (c, sub) = trial_seeds(5, 0, 1);
        assert_ne!(a, b);
        assert_eq!(a, c);
        assert!(sub[0] != sub[1] && sub[1] != sub[2]);
    }

    #[test]
    fn energy_matched_spacing() {
        // k = 2: mean r^2 = 2.5, standard normal mean square 1.
        let d = UniformSpacing::EnergyMatched.resolve(2, BlockDist::StandardNormal, 3.0);
        assert!((d - (1.0f64 / 2.5).sqrt()).abs() < 1e-15);
        let d = UniformSpacing::BandMatched.resolve(2, BlockDist::StandardNormal, 2.0);
        assert!((d - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn results_written_to_disk() {
        let dir = tempfile::tempdir().unwrap();
        let res = run_experiment(&small()).unwrap();
        let files = write_results(&res, &dir.path().join("out/run")).unwrap();
        assert_eq!(files.len(), 3);
        let back = read_records(File::open(&files[0]).unwrap()).unwrap();
        assert_eq!(back, res.records);
        let header = std::fs::read_to_string(&files[0]).unwrap();
        assert!(header.starts_with(
            "cell,trial,algorithm,n,q,k,s,sigma,norm,link,seed,rel_error,cosine,success,error,elapsed_ms\n"
        ));
        let sidecar: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&files[2]).unwrap()).unwrap();
        let cfg: ExperimentConfig = serde_json::from_value(sidecar["config"].clone()).unwrap();
        assert_eq!(cfg, res.config);
    }

    #[test]
    fn image_rejects_full_sparsity() {
        let cfg = ExperimentConfig::from_json(
            r#"{"kind": "image", "q": [40], "k": [3], "s": [256], "image": {"side": 16}}"#,
        )
        .unwrap();
        assert!(matches!(run_image_experiment(&cfg), Err(Error::Config { path, .. }) if path == "s[0]"));
    }

    #[test]
    fn small_image_run() {
        let cfg = ExperimentConfig::from_json(
            r#"{"kind": "image", "q": [120], "k": [3], "s": [12], "omega": 4.0,
                "block_dist": "standard_normal", "image": {"side": 16}, "seed": 2}"#,
        )
        .unwrap();
        let res = run_image_experiment(&cfg).unwrap();
        assert_eq!(res.records.len(), 1);
        let r = &res.records[0];
        assert!(r.error.is_empty(), "{}", r.error);
        assert!(r.psnr.unwrap() <= r.ceiling_psnr + 1e-9);
        let dir = tempfile::tempdir().unwrap();
        let files = write_image_results(&res, &dir.path().join("img")).unwrap();
        assert!(files.iter().any(|p| p.to_string_lossy().ends_with(".cell0.pgm")));
    }

    #[test]
    fn feature_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("y.csv");
        let y = FeatureVector {
            data: FeatureData::Complex(vec![Complex::new(0.1, -2.5e-17), Complex::new(1.0 / 3.0, 7.0)]),
            noise_sigma: 0.2,
        };
        write_features(&path, &y).unwrap();
        assert_eq!(read_features(&path, LinkType::ComplexExp, 0.2).unwrap(), y);
        let v = vec![0.1, -1.0 / 7.0, 1e300];
        write_vector(&path, &v).unwrap();
        assert_eq!(read_vector(&path).unwrap(), v);
    }

    fn record() -> impl Strategy<Value = TrialRecord> {
        (
            0usize..50,
            0usize..50,
            prop_oneof![Just(Algorithm::MfSparse), Just(Algorithm::OneStep), Just(Algorithm::RmStyle)],
            any::<u64>(),
            proptest::option::of(0.0f64..10.0),
            proptest::option::of(-1.0f64..1.0),
            -1e6f64..1e6,
        )
            .prop_map(|(cell, trial, algorithm, seed, rel, cos, ms)| TrialRecord {
                cell,
                trial,
                algorithm,
                n: 64,
                q: 8,
                k: 3,
                s: 2,
                sigma: ms.abs() * 1e-7,
                norm: 15.0,
                link: LinkType::ComplexExp,
                seed,
                rel_error: rel,
                cosine: cos,
                success: rel.map(|r| r < 0.05),
                error: if rel.is_none() { "zero, \"quoted\"".into() } else { String::new() },
                elapsed_ms: ms,
            })
    }

    proptest! {
        #[test]
        fn records_round_trip_through_csv(rows in proptest::collection::vec(record(), 0..20)) {
            let mut bytes = Vec::new();
            write_records(&rows, &mut bytes).unwrap();
            prop_assert_eq!(read_records(&bytes[..]).unwrap(), rows);
        }

        #[test]
        fn config_round_trips_through_json(trials in 1usize..100, seed in any::<u64>(), eps in 0.01f64..1.0) {
            let mut cfg = small();
            cfg.trials = trials;
            cfg.seed = seed;
            cfg.target_eps = eps;
            cfg.rm_spacing = UniformSpacing::Fixed(eps);
            let back = ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap();
            prop_assert_eq!(back, cfg);
        }
    }
}
