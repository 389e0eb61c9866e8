//! Meta-training driver: turns an experiment config into a trained
//! controller checkpoint.
//!
//! The checkpoint file holds only the network weights, in the same format
//! the `run` subcommand consumes. Training progress — Adam moments and the
//! next outer run index — lives in a sibling `<checkpoint>.state` file, so
//! an interrupted session resumes exactly where it stopped: runs are keyed
//! by their index, every random stream is a pure function of (seed, run,
//! step), and both files round-trip their floats bit-exactly. Resuming is
//! therefore byte-identical to having never been interrupted.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use fracgd_core::meta::{meta_train, AdamState, MetaConfig, UnrollRecord};
use fracgd_core::optnet::{HeadKind, OptimizerNet};
use fracgd_core::rng::{self, StreamKind};

use crate::config::ExperimentConfig;
use crate::csvio::{fmt_float, write_row};
use crate::error::{io_at, HarnessError, Result};
use crate::runner::{rate_policy, ProblemFactory};

/// The head a trainable optimizer uses; hand-tuned optimizers have none.
pub fn head_for(cfg: &ExperimentConfig) -> Result<HeadKind> {
    use crate::config::OptimizerId::*;
    match cfg.optimizer {
        L2o => Ok(HeadKind::DirectUpdate),
        L2oCfgd => Ok(HeadKind::FracHyper),
        other => Err(HarnessError::Config(format!(
            "optimizer {other} has no trainable controller"
        ))),
    }
}

/// Where training progress lives, next to the checkpoint.
pub fn state_path_for(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint
        .file_name()
        .map_or_else(|| "checkpoint".into(), |n| n.to_os_string());
    name.push(".state");
    checkpoint.with_file_name(name)
}

fn save_state(path: &Path, adam: &AdamState, next_run: u64) -> Result<()> {
    let mut buf = Vec::new();
    adam.save(&mut buf)?;
    writeln!(buf, "next_run {next_run}").map_err(|e| HarnessError::Io(e.to_string()))?;
    write_atomic(path, &buf)
}

fn load_state(path: &Path) -> Result<(AdamState, u64)> {
    let bytes = io_at(path, std::fs::read(path))?;
    let adam = AdamState::load(&mut &bytes[..])?;
    let text = String::from_utf8_lossy(&bytes);
    let next_run = text
        .lines()
        .rev()
        .find_map(|l| l.strip_prefix("next_run "))
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| {
            HarnessError::Io(format!("`{}` has no next_run line", path.display()))
        })?;
    Ok((adam, next_run))
}

/// Write-then-rename so a crash never leaves a half-written file behind.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    io_at(&tmp, std::fs::write(&tmp, bytes))?;
    io_at(path, std::fs::rename(&tmp, path))?;
    Ok(())
}

fn save_checkpoint(path: &Path, net: &OptimizerNet) -> Result<()> {
    let mut buf = Vec::new();
    net.save(&mut buf)?;
    write_atomic(path, &buf)
}

/// Trains (or continues training) the controller described by `cfg` and
/// leaves the weights at `checkpoint`. The checkpoint and state are written
/// after every outer run, and once up front, so a zero-run budget still
/// produces a loadable checkpoint: the untouched initialization. Returns
/// the per-unroll log rows of this invocation.
pub fn train(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    resume: bool,
) -> Result<Vec<UnrollRecord>> {
    let head = head_for(cfg)?;
    let state_path = state_path_for(checkpoint);

    let (mut net, mut adam, first_run) = if resume {
        if !checkpoint.exists() {
            return Err(HarnessError::Config(format!(
                "nothing to resume: `{}` does not exist",
                checkpoint.display()
            )));
        }
        let net = OptimizerNet::load_from_path(checkpoint)?;
        if net.head != head {
            return Err(HarnessError::Config(format!(
                "checkpoint `{}` holds a {:?} head, but optimizer {} trains {:?}",
                checkpoint.display(),
                net.head,
                cfg.optimizer,
                head
            )));
        }
        let (adam, next_run) = load_state(&state_path)?;
        (net, adam, next_run)
    } else {
        let mut nrng = rng::stream(cfg.meta.seed, StreamKind::NetInit, 0, 0);
        let net = OptimizerNet::new(head, cfg.meta.hidden, &mut nrng);
        let adam = AdamState::like(&net.params());
        (net, adam, 0)
    };

    save_checkpoint(checkpoint, &net)?;
    save_state(&state_path, &adam, first_run)?;

    let mc = MetaConfig {
        runs: cfg.meta.runs,
        max_steps: cfg.meta.steps,
        unroll: cfg.meta.unroll,
        unroll_weights: None,
        meta_lr: cfg.meta.lr,
        optimizee_lr: cfg.lr,
        quad_points: 1,
        probes: cfg.meta.probes,
        seed: cfg.meta.seed,
    };
    let policy = rate_policy(cfg);
    let problems = ProblemFactory::new(cfg)?;
    let meta_seed = cfg.meta.seed;
    let total_runs = cfg.meta.runs;

    let mut factory = |run: u64| {
        problems
            .build(meta_seed, run)
            .map(|(p, x0)| (p.into_obj(), x0))
            .map_err(io_core)
    };
    let mut on_run = |run: u64, net: &OptimizerNet, adam: &AdamState| {
        eprintln!("meta-train run {}/{total_runs}", run + 1);
        save_checkpoint(checkpoint, net).map_err(io_core)?;
        save_state(&state_path, adam, run + 1).map_err(io_core)?;
        Ok(())
    };

    let log = meta_train(
        &mc,
        &mut net,
        &mut adam,
        first_run,
        &mut factory,
        policy,
        &mut on_run,
    )?;
    Ok(log)
}

/// Checkpointing callbacks cross the core boundary, which speaks its own
/// error type; file problems map onto its I/O variant.
fn io_core(err: HarnessError) -> fracgd_core::error::CoreError {
    fracgd_core::error::CoreError::Io(std::io::Error::new(
        std::io::ErrorKind::Other,
        err.to_string(),
    ))
}

/// Appends this invocation's unroll log to `path` (creating it, with a
/// header, when new) — `run,step,loss,grad_norm,skipped`.
pub fn append_log(path: &Path, log: &[UnrollRecord]) -> Result<()> {
    let fresh = !path.exists();
    let file = io_at(
        path,
        std::fs::OpenOptions::new().create(true).append(true).open(path),
    )?;
    let mut w = std::io::BufWriter::new(file);
    if fresh {
        write_row(
            &mut w,
            &["run".into(), "step".into(), "loss".into(), "grad_norm".into(), "skipped".into()],
        )?;
    }
    for r in log {
        write_row(
            &mut w,
            &[
                r.run.to_string(),
                r.step.to_string(),
                fmt_float(r.loss),
                fmt_float(r.grad_norm),
                if r.skipped { "1" } else { "0" }.to_string(),
            ],
        )?;
    }
    w.flush().map_err(|e| HarnessError::Io(e.to_string()))?;
    Ok(())
}
