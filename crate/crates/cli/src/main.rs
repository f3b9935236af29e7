use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use mfsparse::harness::{
    read_features, read_vector, write_features, write_image_results, write_results, write_vector,
};
use mfsparse::pipeline::metrics;
use mfsparse::{
    forward, make_operator, mf_sparse, run_experiment, run_image_experiment, synthesize_signal, BlockDist,
    CosampConfig, Error, ExperimentConfig, ExperimentKind, InnerDist, LinkType, OperatorSpec, Signal, ToneGrid,
};

#[derive(Parser)]
#[command(name = "mfsparse", version, about = "Sparse recovery from random sinusoidal features")]
struct Cli {
    #[command(flatten)]
    global: Global,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Master seed (overrides the config's).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output path: a file, or a stem for experiment results.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Link {
    ComplexExp,
    RealSine,
}

impl From<Link> for LinkType {
    fn from(l: Link) -> Self {
        match l {
            Link::ComplexExp => LinkType::ComplexExp,
            Link::RealSine => LinkType::RealSine,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Inner {
    Var1OverQ,
    Var1OverSqrtQ,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded operator spec and a random sparse signal.
    Generate {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        q: usize,
        #[arg(long)]
        k: usize,
        /// Sparsity.
        #[arg(long)]
        s: usize,
        #[arg(long, default_value_t = 1.0)]
        norm: f64,
        #[arg(long, value_enum, default_value = "var1-over-q")]
        inner: Inner,
        /// Half-width of uniform blocks; standard normal blocks when absent.
        #[arg(long)]
        uniform_t: Option<f64>,
    },
    /// Compute features for a signal.
    Embed {
        #[arg(long)]
        operator: PathBuf,
        #[arg(long)]
        signal: PathBuf,
        #[arg(long, value_enum, default_value = "real-sine")]
        link: Link,
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
    },
    /// Run MF-Sparse on a feature file.
    Recover {
        #[arg(long)]
        operator: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long, value_enum, default_value = "real-sine")]
        link: Link,
        /// Sparsity.
        #[arg(long)]
        s: usize,
        /// Search half-width.
        #[arg(long)]
        omega: f64,
        /// Ground truth; prints relative error and cosine when given.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Run a Monte Carlo sweep (or an image run) from a JSON config.
    Experiment { config: PathBuf },
    /// Run an image reconstruction experiment from a JSON config.
    Image { config: PathBuf },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config { .. }) => 2,
        Some(e) if e.is_io() => 3,
        _ if err.downcast_ref::<std::io::Error>().is_some() => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn read_spec(path: &Path) -> anyhow::Result<OperatorSpec> {
    let text = std::fs::read_to_string(path).map_err(Error::from)?;
    Ok(serde_json::from_str(&text).map_err(Error::from)?)
}

fn load_config(path: &Path, g: &Global) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &g.out {
        cfg.output = Some(out.clone());
    }
    Ok(cfg)
}

fn output_stem(cfg: &ExperimentConfig, config_path: &Path) -> PathBuf {
    cfg.output
        .clone()
        .unwrap_or_else(|| config_path.with_extension(""))
}

fn sweep(cfg: ExperimentConfig, config_path: &Path) -> anyhow::Result<()> {
    let stem = output_stem(&cfg, config_path);
    let result = run_experiment(&cfg)?;
    for s in &result.summary {
        log::info!(
            "cell {:>3} {:<9} n={} q={} k={} s={} sigma={} norm={}: success {} rel {} cos {}",
            s.cell,
            s.algorithm.name(),
            s.n,
            s.q,
            s.k,
            s.s,
            s.sigma,
            s.norm,
            s.success_rate.map_or("-".into(), |v| format!("{v:.2}")),
            s.mean_rel_error.map_or("-".into(), |v| format!("{v:.3e}")),
            s.mean_cosine.map_or("-".into(), |v| format!("{v:.3}")),
        );
    }
    for path in write_results(&result, &stem)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn image(cfg: ExperimentConfig, config_path: &Path) -> anyhow::Result<()> {
    let stem = output_stem(&cfg, config_path);
    let result = run_image_experiment(&cfg)?;
    for r in &result.records {
        log::info!(
            "cell {} q={} k={} s={} sigma={}: psnr {} (ceiling {:.2} dB) {}",
            r.cell,
            r.q,
            r.k,
            r.s,
            r.sigma,
            r.psnr.map_or("-".into(), |v| format!("{v:.2} dB")),
            r.ceiling_psnr,
            r.error
        );
    }
    for path in write_image_results(&result, &stem)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let g = cli.global;
    if let Some(threads) = g.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let seed = g.seed.unwrap_or(0);
    match cli.command {
        Command::Generate {
            n,
            q,
            k,
            s,
            norm,
            inner,
            uniform_t,
        } => {
            let spec = OperatorSpec {
                n,
                q,
                k,
                inner_dist: match inner {
                    Inner::Var1OverQ => InnerDist::GaussianVar1OverQ,
                    Inner::Var1OverSqrtQ => InnerDist::GaussianVar1OverSqrtQ,
                },
                block_dist: uniform_t.map_or(BlockDist::StandardNormal, BlockDist::UniformSym),
                seed: mfsparse::seed::derive(seed, &[0]),
            };
            make_operator::<f64>(&spec)?;
            let x: Signal = synthesize_signal(n, s, norm, mfsparse::seed::derive(seed, &[1]))?;
            let dir = g.out.unwrap_or_else(|| PathBuf::from("."));
            std::fs::create_dir_all(&dir).map_err(Error::from)?;
            let op_path = dir.join("operator.json");
            std::fs::write(&op_path, serde_json::to_string_pretty(&spec).map_err(Error::from)? + "\n")
                .map_err(Error::from)?;
            let x_path = dir.join("signal.csv");
            write_vector(&x_path, &x.values)?;
            println!("{}\n{}", op_path.display(), x_path.display());
        }
        Command::Embed {
            operator,
            signal,
            link,
            sigma,
        } => {
            let spec = read_spec(&operator)?;
            let op = make_operator::<f64>(&spec)?;
            let values = read_vector(&signal)?;
            let nnz = values.iter().filter(|v| **v != 0.0).count();
            let x = Signal::new(values, nnz)?;
            let y = forward(&op, &x, link.into(), sigma, mfsparse::seed::derive(seed, &[2]))?;
            let out = g.out.unwrap_or_else(|| PathBuf::from("features.csv"));
            write_features(&out, &y)?;
            println!("{}", out.display());
        }
        Command::Recover {
            operator,
            features,
            link,
            s,
            omega,
            truth,
        } => {
            let spec = read_spec(&operator)?;
            let op = make_operator::<f64>(&spec)?;
            let y = read_features(&features, link.into(), 0.0)?;
            let grid = ToneGrid::with_omega(omega)?;
            let out = mf_sparse(&y, &op, &grid, s, &CosampConfig::default())?;
            if out.diagnostics.omega_too_small {
                log::warn!(
                    "{:.1}% of tone estimates sit on the grid boundary; omega is probably too small",
                    100.0 * out.diagnostics.boundary_fraction
                );
            }
            let path = g.out.unwrap_or_else(|| PathBuf::from("recovered.csv"));
            write_vector(&path, &out.signal.values)?;
            println!("{}", path.display());
            if let Some(truth) = truth {
                let x = read_vector(&truth)?;
                let (rel, cos) = metrics(&out.signal.values, &x)?;
                println!("rel_error {rel:.6e}\ncosine {cos:.6}");
            }
        }
        Command::Experiment { config } => {
            let cfg = load_config(&config, &g)?;
            if cfg.kind == ExperimentKind::Image {
                image(cfg, &config)?;
            } else {
                sweep(cfg, &config)?;
            }
        }
        Command::Image { config } => {
            let cfg = load_config(&config, &g)?;
            image(cfg, &config)?;
        }
    }
    Ok(())
}
