use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use icreg::commands::{evaluate_command, gen_data, load_model, register, save_registration, train_command};
use icreg::grid::{run_affine_grid, ExperimentGridSpec};
use icreg::jobs::resolve_workers;
use icreg::pnm;
use icreg::zoo::{run_zoo, ZooOptions};
use icreg_core::train::{Adam, DataSource, Objective};

#[derive(Parser)]
#[command(name = "icreg", version, about = "Inverse-consistent image registration experiments")]
struct Cli {
    /// Seed for data generation, pair sampling and initialization.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Concurrent jobs; defaults to the number of cores.
    #[arg(long, global = true, env = "ICREG_WORKERS")]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    TriCirc,
    BlobDigits,
    Idx,
}

#[derive(clap::Args)]
struct DataArgs {
    /// Dataset directory; when absent a synthetic set is generated.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Synthetic image count; 120 for the zoo, 200 for the grid.
    #[arg(long)]
    count: Option<usize>,
    #[arg(long, default_value_t = 32)]
    size: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Generate or import a dataset directory.
    GenData {
        #[arg(long, value_enum, default_value = "tri-circ")]
        kind: Kind,
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
        /// IDX image file (kind idx).
        #[arg(long)]
        images: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        digit: Option<u8>,
    },
    /// Train one model from a JSON config.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Register a moving image to a fixed image.
    Register {
        /// Checkpoint file; the descriptor is read from `model.json` beside it.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        descriptor: Option<PathBuf>,
        #[arg(long)]
        moving: PathBuf,
        #[arg(long)]
        fixed: PathBuf,
        /// Instance optimization steps (0 disables).
        #[arg(long, default_value_t = 0)]
        instance_steps: usize,
        #[arg(long, default_value_t = 1e-4)]
        lr: f64,
    },
    /// Metrics of a trained model over sampled pairs.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        descriptor: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 20)]
        pairs: usize,
        /// Sample only among the last N images (0 = all).
        #[arg(long, default_value_t = 0)]
        held_out: usize,
    },
    /// Train the six-model zoo on digit-like data and render panels.
    Zoo {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 500)]
        iterations: usize,
        #[arg(long, default_value_t = 2)]
        batch: usize,
        #[arg(long, default_value_t = 1e-4)]
        lr: f64,
    },
    /// Nine affine configurations over several seeds.
    AffineGrid {
        #[command(flatten)]
        data: DataArgs,
        /// JSON grid spec; overrides the other options.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 400)]
        iterations: usize,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
    },
}

fn data_source(args: &DataArgs, kind: Kind, default_count: usize, seed: u64) -> DataSource {
    let count = args.count.unwrap_or(default_count);
    match (&args.data, kind) {
        (Some(path), _) => DataSource::Dir { path: path.clone() },
        (None, Kind::BlobDigits) => DataSource::BlobDigits {
            count,
            size: args.size,
            seed,
        },
        (None, _) => DataSource::TriCirc {
            count,
            size: args.size,
            seed,
        },
    }
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    let workers = resolve_workers(cli.workers);
    let out = &cli.out;
    match cli.cmd {
        Command::GenData {
            kind,
            count,
            size,
            images,
            labels,
            digit,
        } => {
            let source = match kind {
                Kind::TriCirc => DataSource::TriCirc { count, size, seed },
                Kind::BlobDigits => DataSource::BlobDigits { count, size, seed },
                Kind::Idx => DataSource::Idx {
                    images: images.context("--images is required for kind idx")?,
                    labels,
                    digit,
                },
            };
            let ds = gen_data(&source, out)?;
            println!("wrote {} images of {}x{} to {}", ds.len(), ds.shape().0, ds.shape().1, out.display());
        }
        Command::Train { config } => {
            let outcome = train_command(&config, cli.seed, out)?;
            if let Some(last) = outcome.metrics.last() {
                println!("final loss {:.6}, inverse consistency {:.3e} px", last.loss, last.inv_consistency_err);
            }
        }
        Command::Register {
            model,
            descriptor,
            moving,
            fixed,
            instance_steps,
            lr,
        } => {
            let (model, params) = load_model(&model, descriptor.as_deref())?;
            let (a, b) = (pnm::load_image(&moving)?, pnm::load_image(&fixed)?);
            let reg = register(&model, &params, &a, &b, instance_steps, Objective::default(), &Adam::new(lr))?;
            save_registration(out, &reg)?;
            if let (Some(before), Some(after)) = (reg.loss_before, reg.loss_after) {
                println!("instance optimization: loss {before:.6} -> {after:.6}");
            }
            println!("wrote {}", out.display());
        }
        Command::Evaluate {
            model,
            descriptor,
            data,
            pairs,
            held_out,
        } => {
            let (model, params) = load_model(&model, descriptor.as_deref())?;
            let ds = icreg_core::data::Dataset::load(&data).with_context(|| format!("loading dataset {}", data.display()))?;
            let rows = evaluate_command(&model, &params, &ds, pairs, held_out, seed, Objective::default(), out)?;
            if let Some(mean) = rows.last() {
                println!(
                    "mean over {} pairs: similarity {:.4}, inverse consistency {:.3e} px, negative Jacobian {:.2}%",
                    mean.step, mean.similarity, mean.inv_consistency_err, mean.pct_neg_jacobian
                );
            }
        }
        Command::Zoo { data, iterations, batch, lr } => {
            let source = data_source(&data, Kind::BlobDigits, 120, seed);
            let ds = source.load().context("loading zoo data")?;
            let opts = ZooOptions {
                iterations,
                batch_size: batch,
                lr,
                seed,
                ..ZooOptions::default()
            };
            let report = run_zoo(&source, &ds, &opts, workers, Some(out))?;
            for m in &report.models {
                let before: f64 = m.evals.iter().map(|e| e.mse_before).sum();
                let after: f64 = m.evals.iter().map(|e| e.mse_after).sum();
                let ice = m.evals.iter().map(|e| e.inv_consistency_err).fold(0.0, f64::max);
                println!("{:8} mse ratio {:.3}  max inverse consistency {:.3e} px", m.model.name(), after / before, ice);
            }
        }
        Command::AffineGrid {
            data,
            spec,
            iterations,
            seeds,
        } => {
            let spec = match spec {
                Some(path) => {
                    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
                }
                None => ExperimentGridSpec::new(data_source(&data, Kind::TriCirc, 200, seed), iterations, (seed..seed + seeds).collect()),
            };
            let ds = spec.base.data.load().context("loading grid data")?;
            let report = run_affine_grid(&spec, &ds, workers, Some(out))?;
            for s in &report.summary {
                println!(
                    "{:18} median final {:>9}  failures {}  max inverse consistency {}",
                    s.cell,
                    s.median_final.map_or("-".into(), |v| format!("{v:.4}")),
                    s.failures,
                    s.max_inv_consistency_err.map_or("-".into(), |v| format!("{v:.2e}")),
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
