use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use oceantl::pipeline::{self, PipelineConfig};

/// Transmission-loss surrogate pipeline.
#[derive(Parser)]
#[command(name = "oceantl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Grid as N_RANGExN_DEPTH, e.g. 176x256.
    #[arg(long, value_parser = parse_grid)]
    grid: Option<(usize, usize)>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the task datasets.
    Generate(Common),
    /// Run the ray oracle on one bathymetry CSV.
    Solve {
        #[command(flatten)]
        common: Common,
        bathy_csv: PathBuf,
    },
    /// Train over the task sequence with replay.
    Train {
        #[command(flatten)]
        common: Common,
        /// Defaults to OUT/dataset.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Score a checkpoint against the test splits.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Defaults to OUT/train/model.tlf.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Predict a field for one bathymetry CSV.
    Predict {
        #[command(flatten)]
        common: Common,
        bathy_csv: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Task whose normalization to use; defaults to the lowest id.
        #[arg(long)]
        task: Option<usize>,
    },
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected WxH, got {s:?}"))?;
    let n = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("{t:?}: {e}"));
    Ok((n(a)?, n(b)?))
}

fn load(common: &Common) -> oceantl::Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.reseed(seed);
    }
    if let Some((nr, nd)) = common.grid {
        cfg.set_grid(nr, nd);
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn or_default(path: &Option<PathBuf>, base: &Path, rel: &str) -> PathBuf {
    path.clone().unwrap_or_else(|| base.join(rel))
}

fn run(cli: Cli) -> oceantl::Result<()> {
    match cli.command {
        Command::Generate(common) => {
            let cfg = load(&common)?;
            let report = pipeline::cmd_generate(&cfg)?;
            for (task, n) in &report.tasks {
                println!("task {task}: {n} samples");
            }
            println!("dataset: {}", report.dataset_dir.display());
        }
        Command::Solve { common, bathy_csv } => {
            let cfg = load(&common)?;
            let out = pipeline::cmd_solve(&cfg, &bathy_csv)?;
            println!("field: {}", out.field_path.display());
            println!("render: {}", out.render_path.display());
            println!("solve time: {:.3} s", out.seconds);
        }
        Command::Train { common, dataset } => {
            let cfg = load(&common)?;
            let dataset = or_default(&dataset, &cfg.output_dir, "dataset");
            let report = pipeline::cmd_train(&cfg, &dataset)?;
            if report.resumed_from_stage > 0 {
                println!("resumed after stage {}", report.resumed_from_stage);
            }
            for (row, ssims) in report.log.matrix.iter().enumerate() {
                let cells: Vec<String> = ssims.iter().map(|v| format!("{v:.3}")).collect();
                println!("stage {:>2}: {}", row + 1, cells.join(" "));
            }
            println!("checkpoints: {}", report.train_dir.display());
        }
        Command::Evaluate { common, checkpoint, dataset } => {
            let cfg = load(&common)?;
            let checkpoint = or_default(&checkpoint, &cfg.output_dir, "train/model.tlf");
            let dataset = or_default(&dataset, &cfg.output_dir, "dataset");
            let report = pipeline::cmd_evaluate(&cfg, &checkpoint, &dataset)?;
            for t in &report.tasks {
                println!(
                    "task {}: ssim {:.4} (water {:.4}, train {:.4})  mae {:.2} dB  rmse {:.2} dB",
                    t.task_id, t.test_ssim, t.test_ssim_water, t.train_ssim, t.mean_abs_db, t.rmse_db
                );
            }
            println!("mean test ssim: {:.4}", report.mean_test_ssim);
            if let Some(t) = &report.timing {
                println!(
                    "inference {:.4} s/field vs oracle {:.3} s/field: {:.1}x",
                    t.inference_seconds_per_field, t.oracle_seconds_per_field, t.speedup
                );
            }
        }
        Command::Predict { common, bathy_csv, checkpoint, task } => {
            let cfg = load(&common)?;
            let checkpoint = or_default(&checkpoint, &cfg.output_dir, "train/model.tlf");
            let out = pipeline::cmd_predict(&cfg, &checkpoint, &bathy_csv, task)?;
            println!("field: {}", out.field_path.display());
            println!("render: {}", out.render_path.display());
            println!("wall time: {:.3} s", out.seconds);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("OCEANTL_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // only fails if a pool already exists, which cannot happen this early
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
