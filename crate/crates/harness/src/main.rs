use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use fracgd_harness::config::ExperimentConfig;
use fracgd_harness::error::{io_at, Result};
use fracgd_harness::grid::{describe, grid_search, stock_grid, write_grid_csv};
use fracgd_harness::metacli;
use fracgd_harness::plotdata::{self, PlotKind};
use fracgd_harness::records::RunRecord;
use fracgd_harness::runner::run_to_dir;

/// Benchmark harness for fractional and learned gradient-descent variants.
#[derive(Parser)]
#[command(name = "fracgd", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Experiment config file (`key = value` lines); defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replace the config's seed list with 0..N
    #[arg(long, value_name = "N")]
    seeds: Option<u64>,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Shrink problem sizes and budgets to finish on a desktop core
    #[arg(long)]
    desk_scale: bool,
    /// Controller checkpoint: read by `run`, written by `meta-train`
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Directory holding the MNIST IDX files
    #[arg(long)]
    mnist_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the configured optimizer over every seed and record CSVs
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Rank the stock hyperparameter sweep for the configured optimizer
    Grid {
        #[command(flatten)]
        common: Common,
    },
    /// Train the learned-optimizer controller and write its checkpoint
    MetaTrain {
        #[command(flatten)]
        common: Common,
        /// Continue from the existing checkpoint and its state file
        #[arg(long)]
        resume: bool,
    },
    /// Reshape run records into plot-ready CSV tables
    Plotdata {
        #[command(flatten)]
        common: Common,
        /// Figure kind: loss_curves, strategy, or scatter
        #[arg(long)]
        kind: String,
        /// Run-record CSV files produced by `run`
        #[arg(required = true, value_name = "RECORD")]
        records: Vec<PathBuf>,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let text = match &common.config {
        Some(path) => io_at(path, std::fs::read_to_string(path))?,
        None => String::new(),
    };
    let mut cfg = ExperimentConfig::parse(&text)?;
    if common.desk_scale {
        cfg.apply_desk_scale();
    }
    if let Some(n) = common.seeds {
        cfg.seeds = (0..n).collect();
    }
    if let Some(path) = &common.checkpoint {
        cfg.checkpoint = Some(path.clone());
    }
    if let Some(dir) = &common.mnist_dir {
        cfg.mnist_dir = Some(dir.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Records the fully resolved config beside the artifacts it produced.
fn save_config(cfg: &ExperimentConfig, out: &PathBuf) -> Result<()> {
    io_at(out, std::fs::create_dir_all(out))?;
    let path = out.join("config.txt");
    io_at(&path, std::fs::write(&path, cfg.canonical()))
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Run { common } => {
            let cfg = load_config(&common)?;
            save_config(&cfg, &common.out)?;
            let written = run_to_dir(&cfg, &common.out)?;
            println!("wrote {} files to {}", written.len() + 1, common.out.display());
        }
        Cmd::Grid { common } => {
            let cfg = load_config(&common)?;
            save_config(&cfg, &common.out)?;
            let space = stock_grid(&cfg)?;
            let ranked = grid_search(&cfg, &space)?;
            let path = common.out.join("grid.csv");
            let mut buf = Vec::new();
            write_grid_csv(&mut buf, &space, &ranked)?;
            io_at(&path, std::fs::write(&path, buf))?;
            let best = &ranked[0];
            println!(
                "best: {} mean_final_loss={}",
                describe(&space, &best.values),
                best.mean_final_loss
            );
        }
        Cmd::MetaTrain { common, resume } => {
            let cfg = load_config(&common)?;
            save_config(&cfg, &common.out)?;
            let ckpt = cfg
                .checkpoint
                .clone()
                .unwrap_or_else(|| common.out.join("checkpoint.ckpt"));
            let log = metacli::train(&cfg, &ckpt, resume)?;
            metacli::append_log(&common.out.join("meta_log.csv"), &log)?;
            let skipped = log.iter().filter(|r| r.skipped).count();
            println!(
                "trained {} unrolls ({} skipped), checkpoint at {}",
                log.len(),
                skipped,
                ckpt.display()
            );
        }
        Cmd::Plotdata {
            common,
            kind,
            records,
        } => {
            let kind = PlotKind::parse(&kind)?;
            let mut recs = Vec::with_capacity(records.len());
            for path in &records {
                let file = io_at(path, File::open(path))?;
                recs.push(RunRecord::read(BufReader::new(file))?);
            }
            let written = plotdata::emit(kind, &recs, &common.out)?;
            for path in &written {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind::{DisplayHelp, DisplayVersion};
            let code = if matches!(e.kind(), DisplayHelp | DisplayVersion) {
                0
            } else {
                1
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(err) = dispatch(cli) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
