//! Hyperparameter sweeps for the hand-tuned optimizers.
//!
//! A sweep is a cartesian product of named axes over the static
//! hyperparameters (`alpha`, `beta`, `c`, `lag`, `lr`). Every point runs the
//! full seed list and is scored by the mean final loss across seeds, with
//! diverged runs counting as +∞, so a configuration that blows up on any
//! seed can never outrank one that finishes everywhere. Ranking ties break
//! toward the earlier point in enumeration order, which makes the winner
//! deterministic.

use std::io::Write;

use crate::config::{ExperimentConfig, ExperimentId, OptimizerId};
use crate::csvio::write_row;
use crate::error::{HarnessError, Result};
use crate::records::RunRecord;
use crate::runner::{run_all_seeds_with, ProblemFactory};

/// The config keys a sweep may vary.
const SWEEPABLE: [&str; 5] = ["alpha", "beta", "c", "lag", "lr"];

/// One sweep dimension: a config key and the values to try, in order.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub name: String,
    pub values: Vec<f64>,
}

impl Axis {
    pub fn new(name: &str, values: &[f64]) -> Axis {
        Axis {
            name: name.to_string(),
            values: values.to_vec(),
        }
    }
}

/// A cartesian product of axes. Point `i` is obtained by treating `i` as a
/// mixed-radix number with the first axis as the most significant digit, so
/// enumeration order matches the order the axes were given in.
#[derive(Debug, Clone)]
pub struct GridSpace {
    axes: Vec<Axis>,
}

impl GridSpace {
    pub fn new(axes: Vec<Axis>) -> Result<GridSpace> {
        if axes.is_empty() {
            return Err(HarnessError::Config("a sweep needs at least one axis".into()));
        }
        for (i, ax) in axes.iter().enumerate() {
            if !SWEEPABLE.contains(&ax.name.as_str()) {
                return Err(HarnessError::Config(format!(
                    "`{}` is not a sweepable key (one of {})",
                    ax.name,
                    SWEEPABLE.join(", ")
                )));
            }
            if ax.values.is_empty() {
                return Err(HarnessError::Config(format!(
                    "axis `{}` has no values",
                    ax.name
                )));
            }
            if axes[..i].iter().any(|prev| prev.name == ax.name) {
                return Err(HarnessError::Config(format!(
                    "axis `{}` appears twice",
                    ax.name
                )));
            }
        }
        Ok(GridSpace { axes })
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    /// Number of points in the product.
    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.values.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The axis values at enumeration index `idx`.
    pub fn point(&self, idx: usize) -> Vec<f64> {
        let mut rem = idx;
        let mut out = vec![0.0; self.axes.len()];
        for (slot, ax) in out.iter_mut().zip(&self.axes).rev() {
            let n = ax.values.len();
            *slot = ax.values[rem % n];
            rem /= n;
        }
        out
    }
}

/// The stock sweep for a hand-tuned optimizer on one experiment: the same
/// axes the benchmark protocol searched when picking its static
/// hyperparameters. Learned optimizers have nothing to sweep.
pub fn stock_grid(cfg: &ExperimentConfig) -> Result<GridSpace> {
    use ExperimentId::*;
    use OptimizerId::*;
    let axes = match (cfg.experiment, cfg.optimizer) {
        (LeastSquares, NaCfgd) => vec![
            Axis::new("alpha", &[0.2, 0.6, 0.9]),
            Axis::new("beta", &[-5.0, -1.0, -0.3, 0.0, 0.3, 1.0, 5.0]),
            Axis::new("c", &[-10.0, -1.0, -0.5, 0.0, 0.5, 1.0, 10.0]),
        ],
        (LeastSquares, AtCfgd) => vec![
            Axis::new("alpha", &[0.2, 0.6, 0.9]),
            Axis::new("beta", &[-5.0, -1.0, -0.3, 0.0, 0.3, 1.0, 5.0]),
            Axis::new("lag", &[1.0, 2.0, 3.0, 4.0]),
        ],
        (H1 | H2, NaCfgd) => vec![
            Axis::new("alpha", &[0.2, 0.4, 0.7, 0.95]),
            Axis::new("beta", &[-50.0, -10.0, -1.0, 0.0, 1.0, 10.0, 50.0]),
            Axis::new("c", &[-5.0, -1.0, -0.5, 0.0, 0.5, 1.0, 5.0]),
        ],
        (H1 | H2, AtCfgd) => vec![
            Axis::new("alpha", &[0.2, 0.4, 0.7, 0.95]),
            Axis::new("beta", &[-50.0, -10.0, -1.0, 0.0, 1.0, 10.0, 50.0]),
            Axis::new("lag", &[1.0, 2.0, 3.0, 4.0]),
        ],
        (Mnist, NaCfgd) => vec![
            Axis::new("alpha", &[0.1, 0.3, 0.6, 0.9]),
            Axis::new("beta", &[-20.0, -2.0, 0.0, 2.0, 20.0]),
            Axis::new("c", &[-1.0, 0.0, 1.0]),
            Axis::new("lr", &[0.003, 0.02, 0.04]),
        ],
        (Mnist, AtCfgd) => vec![
            Axis::new("alpha", &[0.2, 0.6, 0.9]),
            Axis::new("beta", &[-10.0, -2.0, -1.0, 0.0, 1.0, 2.0, 10.0]),
            Axis::new("lag", &[1.0, 2.0, 3.0, 4.0]),
            Axis::new("lr", &[0.1, 0.5]),
        ],
        (_, other) => {
            return Err(HarnessError::Config(format!(
                "no stock sweep for optimizer {other}"
            )))
        }
    };
    GridSpace::new(axes)
}

/// A scored sweep point: its enumeration index, the axis values it was run
/// with, and the mean final loss across the configured seeds.
#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub index: usize,
    pub values: Vec<f64>,
    pub mean_final_loss: f64,
    pub diverged_seeds: usize,
}

/// A copy of `base` with the sweep point's values written into the fields
/// the axes name. The result is re-validated, so an axis can never smuggle
/// an out-of-range value past the config checks.
pub fn apply_point(
    base: &ExperimentConfig,
    space: &GridSpace,
    values: &[f64],
) -> Result<ExperimentConfig> {
    let mut cfg = base.clone();
    for (ax, &v) in space.axes().iter().zip(values) {
        match ax.name.as_str() {
            "alpha" => cfg.alpha = v,
            "beta" => cfg.beta = v,
            "c" => cfg.c = v,
            "lag" => {
                if v < 1.0 || v.fract() != 0.0 {
                    return Err(HarnessError::Config(format!(
                        "lag must be a positive integer, got {v}"
                    )));
                }
                cfg.lag = v as usize;
            }
            "lr" => cfg.lr = v,
            other => {
                return Err(HarnessError::Config(format!(
                    "`{other}` is not a sweepable key"
                )))
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs every point of the sweep over the configured seed list and returns
/// the outcomes ranked best first. The problem instances depend only on the
/// experiment and the seed, never on the swept values, so all points see
/// identical problems and the comparison is paired.
pub fn grid_search(base: &ExperimentConfig, space: &GridSpace) -> Result<Vec<GridOutcome>> {
    if base.optimizer.is_learned() {
        return Err(HarnessError::Config(format!(
            "optimizer {} is trained, not swept",
            base.optimizer
        )));
    }
    let factory = ProblemFactory::new(base)?;
    let n = space.len();
    let mut outcomes = Vec::with_capacity(n);
    for index in 0..n {
        let values = space.point(index);
        let cfg = apply_point(base, space, &values)?;
        let records = run_all_seeds_with(&cfg, &factory, None)?;
        let outcome = score_point(index, values, &records);
        eprintln!(
            "grid {}/{}: [{}] mean final loss {}",
            index + 1,
            n,
            describe(space, &outcome.values),
            outcome.mean_final_loss
        );
        outcomes.push(outcome);
    }
    outcomes.sort_by(|a, b| {
        f64::total_cmp(&a.mean_final_loss, &b.mean_final_loss)
            .then(a.index.cmp(&b.index))
    });
    Ok(outcomes)
}

fn score_point(index: usize, values: Vec<f64>, records: &[RunRecord]) -> GridOutcome {
    let mean = records.iter().map(|r| r.final_loss()).sum::<f64>() / records.len() as f64;
    GridOutcome {
        index,
        values,
        mean_final_loss: mean,
        diverged_seeds: records.iter().filter(|r| r.diverged()).count(),
    }
}

/// `alpha=0.6 beta=0.3 c=1` — the human-readable form of one point.
pub fn describe(space: &GridSpace, values: &[f64]) -> String {
    space
        .axes()
        .iter()
        .zip(values)
        .map(|(ax, v)| format!("{}={}", ax.name, v))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Writes the ranked sweep as CSV: `rank`, one column per axis, then the
/// score columns. Values use the shortest representation that parses back
/// to the same float.
pub fn write_grid_csv(
    w: &mut impl Write,
    space: &GridSpace,
    outcomes: &[GridOutcome],
) -> Result<()> {
    let mut header = vec!["rank".to_string()];
    header.extend(space.axes().iter().map(|a| a.name.clone()));
    header.push("mean_final_loss".into());
    header.push("diverged_seeds".into());
    write_row(w, &header)?;
    for (rank, o) in outcomes.iter().enumerate() {
        let mut row = vec![rank.to_string()];
        row.extend(o.values.iter().map(|v| v.to_string()));
        row.push(o.mean_final_loss.to_string());
        row.push(o.diverged_seeds.to_string());
        write_row(w, &row)?;
    }
    Ok(())
}
