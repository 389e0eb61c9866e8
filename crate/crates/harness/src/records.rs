//! Per-run step records: one CSV per seed with the loss, the chosen step
//! size, per-coordinate hyperparameter statistics, and a fixed random sample
//! of coordinate trajectories (the material behind the strategy and scatter
//! figures), plus the cross-seed aggregate table.

use std::io::{BufRead, Write};

use fracgd_core::rng::{self, StreamKind};
use fracgd_core::tensor::Tensor;
use rand::seq::SliceRandom;

use crate::csvio::{self, fmt_float, parse_float};
use crate::error::{HarnessError, Result};

/// How many coordinate trajectories a record tracks (fewer when the problem
/// has fewer coordinates).
pub const TRACKED_COORDS: usize = 16;

/// Mean / min / max over coordinates of one hyperparameter vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat3 {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Stat3 {
    pub fn of(values: &[f64]) -> Stat3 {
        if values.is_empty() {
            return Stat3::nan();
        }
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for &v in values {
            min = min.min(v);
            max = max.max(v);
            sum += v;
        }
        Stat3 {
            mean: sum / values.len() as f64,
            min,
            max,
        }
    }

    /// Placeholder statistics for optimizers without that hyperparameter.
    pub fn nan() -> Stat3 {
        Stat3 {
            mean: f64::NAN,
            min: f64::NAN,
            max: f64::NAN,
        }
    }

    /// Every tracked coordinate holds the same scalar (static schedules).
    pub fn constant(v: f64) -> Stat3 {
        Stat3 {
            mean: v,
            min: v,
            max: v,
        }
    }
}

/// One tracked coordinate at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordTrack {
    pub grad: f64,
    pub alpha: f64,
    pub beta: f64,
    pub c: f64,
}

impl CoordTrack {
    pub fn nan() -> CoordTrack {
        CoordTrack {
            grad: f64::NAN,
            alpha: f64::NAN,
            beta: f64::NAN,
            c: f64::NAN,
        }
    }
}

/// One step of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRow {
    pub step: usize,
    /// `f(x^(t))` on the step's batch, before the update. Non-finite values
    /// are stored as `+∞` (the run is flagged from there on).
    pub loss: f64,
    /// Step size the active rate rule selected.
    pub lr: f64,
    pub alpha: Stat3,
    pub beta: Stat3,
    pub c: Stat3,
    /// Mean controller hidden activation (NaN for hand-tuned optimizers).
    pub hidden_mean: f64,
    pub diverged: bool,
    /// One entry per tracked coordinate, aligned with `RunRecord::coord_ids`.
    pub coords: Vec<CoordTrack>,
}

/// Everything one (config, seed) run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub experiment: String,
    pub optimizer: String,
    pub config_hash: String,
    pub seed: u64,
    /// Which coordinates the per-coordinate columns follow (sorted).
    pub coord_ids: Vec<usize>,
    /// Exactly T rows; after a divergence the tail is `+∞`-padded and
    /// flagged.
    pub rows: Vec<StepRow>,
}

/// The fixed random coordinate sample for a run: `min(16, d)` distinct
/// indices in ascending order, drawn from the seed's own stream so the
/// sample never changes when other settings do.
pub fn sample_coords(d: usize, seed: u64) -> Vec<usize> {
    let n = TRACKED_COORDS.min(d);
    let mut all: Vec<usize> = (0..d).collect();
    let mut r = rng::stream(seed, StreamKind::CoordSample, 0, 0);
    let (picked, _) = all.partial_shuffle(&mut r, n);
    let mut ids = picked.to_vec();
    ids.sort_unstable();
    ids
}

/// Gathers the tracked entries of a vector, in `coord_ids` order.
pub fn gather(v: &Tensor, ids: &[usize]) -> Vec<f64> {
    ids.iter().map(|&j| v.data()[j]).collect()
}

impl RunRecord {
    /// Records store every non-finite loss as `+∞` so ranking and
    /// aggregation stay total-ordered.
    pub fn normalize_loss(loss: f64) -> f64 {
        if loss.is_finite() {
            loss
        } else {
            f64::INFINITY
        }
    }

    /// Loss of the last row — the ranking key for grid search.
    pub fn final_loss(&self) -> f64 {
        self.rows.last().map_or(f64::INFINITY, |r| r.loss)
    }

    pub fn diverged(&self) -> bool {
        self.rows.iter().any(|r| r.diverged)
    }

    fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = [
            "step",
            "loss",
            "lr",
            "alpha_mean",
            "alpha_min",
            "alpha_max",
            "beta_mean",
            "beta_min",
            "beta_max",
            "c_mean",
            "c_min",
            "c_max",
            "hidden_mean",
            "diverged",
            "seed",
            "config_hash",
            "experiment",
            "optimizer",
        ]
        .map(String::from)
        .to_vec();
        for k in 0..self.coord_ids.len() {
            for col in ["id", "grad", "alpha", "beta", "c"] {
                h.push(format!("s{k:02}_{col}"));
            }
        }
        h
    }

    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        csvio::write_row(w, &self.header())?;
        for row in &self.rows {
            let mut fields = vec![
                row.step.to_string(),
                fmt_float(row.loss),
                fmt_float(row.lr),
                fmt_float(row.alpha.mean),
                fmt_float(row.alpha.min),
                fmt_float(row.alpha.max),
                fmt_float(row.beta.mean),
                fmt_float(row.beta.min),
                fmt_float(row.beta.max),
                fmt_float(row.c.mean),
                fmt_float(row.c.min),
                fmt_float(row.c.max),
                fmt_float(row.hidden_mean),
                if row.diverged { "1" } else { "0" }.to_string(),
                self.seed.to_string(),
                self.config_hash.clone(),
                self.experiment.clone(),
                self.optimizer.clone(),
            ];
            if row.coords.len() != self.coord_ids.len() {
                return Err(HarnessError::Io(format!(
                    "step {} tracks {} coordinates, expected {}",
                    row.step,
                    row.coords.len(),
                    self.coord_ids.len()
                )));
            }
            for (id, t) in self.coord_ids.iter().zip(&row.coords) {
                fields.push(id.to_string());
                fields.push(fmt_float(t.grad));
                fields.push(fmt_float(t.alpha));
                fields.push(fmt_float(t.beta));
                fields.push(fmt_float(t.c));
            }
            csvio::write_row(w, &fields)?;
        }
        Ok(())
    }

    pub fn read(r: impl BufRead) -> Result<RunRecord> {
        let rows = csvio::read_rows(r)?;
        let Some((header, data)) = rows.split_first() else {
            return Err(HarnessError::Io("empty record file".into()));
        };
        if header.len() < 18 || (header.len() - 18) % 5 != 0 {
            return Err(HarnessError::Io(format!(
                "unexpected record header width {}",
                header.len()
            )));
        }
        let tracked = (header.len() - 18) / 5;
        let mut record = RunRecord {
            experiment: String::new(),
            optimizer: String::new(),
            config_hash: String::new(),
            seed: 0,
            coord_ids: Vec::new(),
            rows: Vec::with_capacity(data.len()),
        };
        for (i, f) in data.iter().enumerate() {
            if f.len() != header.len() {
                return Err(HarnessError::Io(format!(
                    "row {} has {} fields, header has {}",
                    i + 1,
                    f.len(),
                    header.len()
                )));
            }
            let stat = |base: usize| -> Result<Stat3> {
                Ok(Stat3 {
                    mean: parse_float(&f[base])?,
                    min: parse_float(&f[base + 1])?,
                    max: parse_float(&f[base + 2])?,
                })
            };
            let mut coords = Vec::with_capacity(tracked);
            let mut ids = Vec::with_capacity(tracked);
            for k in 0..tracked {
                let base = 18 + 5 * k;
                ids.push(f[base].parse::<usize>().map_err(|_| {
                    HarnessError::Io(format!("bad coordinate id `{}`", f[base]))
                })?);
                coords.push(CoordTrack {
                    grad: parse_float(&f[base + 1])?,
                    alpha: parse_float(&f[base + 2])?,
                    beta: parse_float(&f[base + 3])?,
                    c: parse_float(&f[base + 4])?,
                });
            }
            if i == 0 {
                record.seed = f[14]
                    .parse()
                    .map_err(|_| HarnessError::Io(format!("bad seed `{}`", f[14])))?;
                record.config_hash = f[15].clone();
                record.experiment = f[16].clone();
                record.optimizer = f[17].clone();
                record.coord_ids = ids;
            }
            record.rows.push(StepRow {
                step: f[0]
                    .parse()
                    .map_err(|_| HarnessError::Io(format!("bad step `{}`", f[0])))?,
                loss: parse_float(&f[1])?,
                lr: parse_float(&f[2])?,
                alpha: stat(3)?,
                beta: stat(6)?,
                c: stat(9)?,
                hidden_mean: parse_float(&f[12])?,
                diverged: f[13] == "1",
                coords,
            });
        }
        Ok(record)
    }
}

/// Per-step mean and median loss across seeds. All records must have the
/// same length (they do, by the exactly-T-rows contract).
pub fn aggregate(records: &[RunRecord]) -> Result<Vec<(usize, f64, f64)>> {
    let Some(first) = records.first() else {
        return Err(HarnessError::Io("no records to aggregate".into()));
    };
    let t = first.rows.len();
    if let Some(bad) = records.iter().find(|r| r.rows.len() != t) {
        return Err(HarnessError::Io(format!(
            "record for seed {} has {} rows, expected {t}",
            bad.seed,
            bad.rows.len()
        )));
    }
    let mut out = Vec::with_capacity(t);
    for step in 0..t {
        let mut losses: Vec<f64> = records.iter().map(|r| r.rows[step].loss).collect();
        let mean = losses.iter().sum::<f64>() / losses.len() as f64;
        losses.sort_by(|a, b| a.partial_cmp(b).expect("losses are never NaN"));
        let n = losses.len();
        let median = if n % 2 == 1 {
            losses[n / 2]
        } else {
            (losses[n / 2 - 1] + losses[n / 2]) / 2.0
        };
        out.push((step, mean, median));
    }
    Ok(out)
}

/// Writes the aggregate table (`step,loss_mean,loss_median`).
pub fn write_aggregate(w: &mut impl Write, records: &[RunRecord]) -> Result<()> {
    csvio::write_row(
        w,
        &["step".into(), "loss_mean".into(), "loss_median".into()],
    )?;
    for (step, mean, median) in aggregate(records)? {
        csvio::write_row(
            w,
            &[step.to_string(), fmt_float(mean), fmt_float(median)],
        )?;
    }
    Ok(())
}
