//! Tidy long-format CSV extracts for plotting.
//!
//! Run records hold everything a figure needs, but in a wide per-step
//! layout. The extractors here reshape them into the three narrow tables
//! the plots are drawn from: per-seed loss curves, the per-step
//! hyperparameter strategy of a single run, and a per-coordinate scatter of
//! hyperparameters against partial derivatives. All of them refuse to mix
//! records from different experiments, because the resulting table would
//! silently average incomparable losses.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::csvio::{fmt_float, write_row};
use crate::error::{io_at, HarnessError, Result};
use crate::records::{write_aggregate, RunRecord};

/// The figure kinds the `plotdata` subcommand can produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    LossCurves,
    Strategy,
    Scatter,
}

impl PlotKind {
    pub fn parse(s: &str) -> Result<PlotKind> {
        match s {
            "loss_curves" => Ok(PlotKind::LossCurves),
            "strategy" => Ok(PlotKind::Strategy),
            "scatter" => Ok(PlotKind::Scatter),
            other => Err(HarnessError::Config(format!(
                "unknown plot kind `{other}` (expected loss_curves, strategy, or scatter)"
            ))),
        }
    }
}

/// All records must describe the same experiment.
fn check_same_experiment(records: &[RunRecord]) -> Result<()> {
    let Some(first) = records.first() else {
        return Err(HarnessError::Config("no records given".into()));
    };
    if let Some(other) = records.iter().find(|r| r.experiment != first.experiment) {
        return Err(HarnessError::Config(format!(
            "records mix experiments `{}` and `{}`",
            first.experiment, other.experiment
        )));
    }
    Ok(())
}

/// `step,seed,loss` — one row per record per step.
pub fn write_loss_curves(w: &mut impl Write, records: &[RunRecord]) -> Result<()> {
    write_row(w, &["step".into(), "seed".into(), "loss".into()])?;
    for rec in records {
        for row in &rec.rows {
            write_row(
                w,
                &[row.step.to_string(), rec.seed.to_string(), fmt_float(row.loss)],
            )?;
        }
    }
    Ok(())
}

/// `step,stat,alpha,beta,c` — per step, the cross-coordinate mean followed
/// by each tracked coordinate as `sample_00`, `sample_01`, … in coordinate
/// order. This is the table a strategy plot is drawn from.
pub fn write_strategy(w: &mut impl Write, rec: &RunRecord) -> Result<()> {
    write_row(
        w,
        &["step".into(), "stat".into(), "alpha".into(), "beta".into(), "c".into()],
    )?;
    for row in &rec.rows {
        write_row(
            w,
            &[
                row.step.to_string(),
                "mean".into(),
                fmt_float(row.alpha.mean),
                fmt_float(row.beta.mean),
                fmt_float(row.c.mean),
            ],
        )?;
        for (k, t) in row.coords.iter().enumerate() {
            write_row(
                w,
                &[
                    row.step.to_string(),
                    format!("sample_{k:02}"),
                    fmt_float(t.alpha),
                    fmt_float(t.beta),
                    fmt_float(t.c),
                ],
            )?;
        }
    }
    Ok(())
}

/// `iteration,coordinate,partial_derivative,alpha,beta,c,hidden_mean` —
/// one row per tracked coordinate per step, relating the emitted
/// hyperparameters to the partial derivative they responded to.
pub fn write_scatter(w: &mut impl Write, rec: &RunRecord) -> Result<()> {
    write_row(
        w,
        &[
            "iteration".into(),
            "coordinate".into(),
            "partial_derivative".into(),
            "alpha".into(),
            "beta".into(),
            "c".into(),
            "hidden_mean".into(),
        ],
    )?;
    for row in &rec.rows {
        for (id, t) in rec.coord_ids.iter().zip(&row.coords) {
            write_row(
                w,
                &[
                    row.step.to_string(),
                    id.to_string(),
                    fmt_float(t.grad),
                    fmt_float(t.alpha),
                    fmt_float(t.beta),
                    fmt_float(t.c),
                    fmt_float(row.hidden_mean),
                ],
            )?;
        }
    }
    Ok(())
}

fn exactly_one<'a>(kind: &str, records: &'a [RunRecord]) -> Result<&'a RunRecord> {
    match records {
        [one] => Ok(one),
        many => Err(HarnessError::Config(format!(
            "{kind} data describes a single run, got {} records",
            many.len()
        ))),
    }
}

/// Writes the files for one plot kind into `out` and returns their paths.
/// Loss curves take any number of same-experiment records and also emit the
/// per-step mean/median aggregate; strategy and scatter take exactly one.
pub fn emit(kind: PlotKind, records: &[RunRecord], out: &Path) -> Result<Vec<PathBuf>> {
    check_same_experiment(records)?;
    io_at(out, std::fs::create_dir_all(out))?;
    let save = |name: &str, body: Vec<u8>| -> Result<PathBuf> {
        let path = out.join(name);
        io_at(&path, std::fs::write(&path, body))?;
        Ok(path)
    };
    Ok(match kind {
        PlotKind::LossCurves => {
            let mut curves = Vec::new();
            write_loss_curves(&mut curves, records)?;
            let mut agg = Vec::new();
            write_aggregate(&mut agg, records)?;
            vec![
                save("loss_curves.csv", curves)?,
                save("loss_aggregate.csv", agg)?,
            ]
        }
        PlotKind::Strategy => {
            let mut buf = Vec::new();
            write_strategy(&mut buf, exactly_one("strategy", records)?)?;
            vec![save("strategy.csv", buf)?]
        }
        PlotKind::Scatter => {
            let mut buf = Vec::new();
            write_scatter(&mut buf, exactly_one("scatter", records)?)?;
            vec![save("scatter.csv", buf)?]
        }
    })
}
