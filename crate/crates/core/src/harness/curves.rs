//! Learning-curve records and their CSV forms.
//!
//! Per-trial CSV columns, in this order:
//! `trial_seed, frame, eval_return, loss, grad_var_empirical, grad_var_bound, wall_ms`.
//! Optional values are written as empty fields.
//!
//! Aggregate CSV columns:
//! `frame, trials, mean_return, std_return, moving_avg_return`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{compensated_sum, sample_std};

pub const CURVE_HEADER: [&str; 7] = [
    "trial_seed",
    "frame",
    "eval_return",
    "loss",
    "grad_var_empirical",
    "grad_var_bound",
    "wall_ms",
];

pub const AGGREGATE_HEADER: [&str; 5] = ["frame", "trials", "mean_return", "std_return", "moving_avg_return"];

/// Points in the trailing moving average of the aggregate curve.
pub const MOVING_AVERAGE_WINDOW: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub trial_seed: u64,
    pub frame: u64,
    /// Mean undiscounted return over the evaluation episodes.
    pub eval_return: f64,
    /// Mean training loss over the updates since the previous evaluation.
    pub loss: Option<f64>,
    pub grad_var_empirical: Option<f64>,
    pub grad_var_bound: Option<f64>,
    pub wall_ms: u64,
}

/// Row writer that emits the header on creation, so a curve with no
/// records is still a valid CSV.
pub struct CurveWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> CurveWriter<W> {
    pub fn new(out: W) -> Result<Self> {
        let mut inner = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        inner.write_record(CURVE_HEADER)?;
        inner.flush()?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, rec: &EvalRecord) -> Result<()> {
        self.inner.serialize(rec)?;
        self.inner.flush()?;
        Ok(())
    }
}

pub fn write_curve<W: Write>(out: W, records: &[EvalRecord]) -> Result<()> {
    let mut w = CurveWriter::new(out)?;
    for r in records {
        w.write(r)?;
    }
    Ok(())
}

pub fn read_curve<R: Read>(input: R) -> Result<Vec<EvalRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != CURVE_HEADER {
        return Err(Error::Corrupt(format!("unexpected curve header {header:?}")));
    }
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub frame: u64,
    pub trials: usize,
    pub mean_return: f64,
    /// Sample standard deviation across trials; 0 for a single trial.
    pub std_return: f64,
    pub moving_avg_return: f64,
}

/// Mean and spread across trials at every evaluated frame, plus a trailing
/// moving average of the mean. Frames reached by only some trials (e.g.
/// after an abort) use the trials that reached them.
pub fn aggregate(curves: &[Vec<EvalRecord>]) -> Vec<AggregateRow> {
    let mut frames: Vec<u64> = curves.iter().flatten().map(|r| r.frame).collect();
    frames.sort_unstable();
    frames.dedup();
    let mut rows: Vec<AggregateRow> = frames
        .into_iter()
        .map(|frame| {
            let vals: Vec<f64> = curves
                .iter()
                .filter_map(|c| c.iter().find(|r| r.frame == frame))
                .map(|r| r.eval_return)
                .collect();
            AggregateRow {
                frame,
                trials: vals.len(),
                mean_return: compensated_sum(vals.iter().copied()) / vals.len() as f64,
                std_return: sample_std(&vals),
                moving_avg_return: 0.0,
            }
        })
        .collect();
    let means: Vec<f64> = rows.iter().map(|r| r.mean_return).collect();
    for (row, ma) in rows.iter_mut().zip(moving_average(&means, MOVING_AVERAGE_WINDOW)) {
        row.moving_avg_return = ma;
    }
    rows
}

/// Trailing mean over up to `window` points.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    (0..values.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            let w = &values[lo..=i];
            compensated_sum(w.iter().copied()) / w.len() as f64
        })
        .collect()
}

pub fn write_aggregate<W: Write>(out: W, rows: &[AggregateRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(AGGREGATE_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Mean evaluation return over the curve: the area under it per unit of
/// evaluation spacing. `None` for an empty curve.
pub fn area_under_curve(records: &[EvalRecord]) -> Option<f64> {
    if records.is_empty() {
        return None;
    }
    Some(compensated_sum(records.iter().map(|r| r.eval_return)) / records.len() as f64)
}

/// First evaluated frame whose return reaches `threshold`.
pub fn frames_to_threshold(records: &[EvalRecord], threshold: f64) -> Option<u64> {
    records.iter().find(|r| r.eval_return >= threshold).map(|r| r.frame)
}
