//! Per-iteration records, CSV/JSON serialization, and the drift and
//! smoothing diagnostics computed from them.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

/// Column order of the CSV log.
pub const CSV_HEADER: &str =
    "iter,term1,term2,reg,train_loss,mi_estimate,diag_mean,diag_min,diag_max,offdiag_mean,offdiag_min,offdiag_max,diverged";

/// Mean, min and max of a set of critic outputs.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ScoreStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl ScoreStats {
    pub fn of(values: &[f64]) -> Self {
        let mut s = Self {
            mean: 0.0,
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        };
        for &v in values {
            s.mean += v;
            s.min = s.min.min(v);
            s.max = s.max.max(v);
        }
        s.mean /= values.len() as f64;
        s
    }

    pub fn max_abs(&self) -> f64 {
        self.min.abs().max(self.max.abs())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub iter: usize,
    pub term1: f64,
    pub term2: f64,
    #[serde(rename = "reg")]
    pub regularizer: f64,
    pub train_loss: f64,
    pub mi_estimate: f64,
    pub diag_mean: f64,
    pub diag_min: f64,
    pub diag_max: f64,
    pub offdiag_mean: f64,
    pub offdiag_min: f64,
    pub offdiag_max: f64,
    pub diverged: bool,
}

impl RunRecord {
    /// The value of a CSV column; `diverged` reads as 0 or 1.
    pub fn value(&self, column: &str) -> Option<f64> {
        Some(match column {
            "iter" => self.iter as f64,
            "term1" => self.term1,
            "term2" => self.term2,
            "reg" => self.regularizer,
            "train_loss" => self.train_loss,
            "mi_estimate" => self.mi_estimate,
            "diag_mean" => self.diag_mean,
            "diag_min" => self.diag_min,
            "diag_max" => self.diag_max,
            "offdiag_mean" => self.offdiag_mean,
            "offdiag_min" => self.offdiag_min,
            "offdiag_max" => self.offdiag_max,
            "diverged" => f64::from(u8::from(self.diverged)),
            _ => return None,
        })
    }

    pub fn max_abs_score(&self) -> f64 {
        [
            self.diag_min,
            self.diag_max,
            self.offdiag_min,
            self.offdiag_max,
        ]
        .iter()
        .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Everything a run records.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunLog {
    pub records: Vec<RunRecord>,
    pub divergence_iteration: Option<usize>,
    /// Largest `|score|` seen at any iteration, logged or not.
    pub max_abs_score: f64,
    /// `(first iteration, true MI)` at every change of the true MI.
    pub true_mi_schedule: Vec<(usize, f64)>,
    /// Held-out accuracy, for cluster tasks.
    pub accuracy: Option<f64>,
}

fn mean_finite(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = values
        .filter(|v| v.is_finite())
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

impl RunLog {
    pub fn diverged(&self) -> bool {
        self.divergence_iteration.is_some()
    }

    /// Mean of the finite `mi_estimate` values over the final 10% of records.
    pub fn converged_estimate(&self) -> Option<f64> {
        let n = self.records.len();
        let tail = (n / 10).max(1).min(n);
        mean_finite(self.records[n - tail..].iter().map(|r| r.mi_estimate))
    }

    /// Mean of a column over records with `from <= iter < to`.
    pub fn window_mean(
        &self,
        from: usize,
        to: usize,
        column: impl Fn(&RunRecord) -> f64,
    ) -> Option<f64> {
        mean_finite(
            self.records
                .iter()
                .filter(|r| r.iter >= from && r.iter < to)
                .map(column),
        )
    }

    /// Largest logged `|score|` over records with `from <= iter < to`.
    pub fn window_max_abs_score(&self, from: usize, to: usize) -> f64 {
        self.records
            .iter()
            .filter(|r| r.iter >= from && r.iter < to)
            .fold(0.0, |m, r| m.max(r.max_abs_score()))
    }

    pub fn true_mi_at(&self, iteration: usize) -> f64 {
        self.true_mi_schedule
            .iter()
            .take_while(|(t, _)| *t <= iteration)
            .last()
            .map_or(f64::NAN, |&(_, v)| v)
    }

    pub fn column(&self, f: impl Fn(&RunRecord) -> f64) -> Vec<f64> {
        self.records.iter().map(f).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.records {
            out.serialize(r)?;
        }
        if self.records.is_empty() {
            out.write_record(CSV_HEADER.split(','))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::InvalidArgument(e.to_string()))
    }
}

/// Parses a CSV log, checking the header.
pub fn read_csv<R: Read>(r: R) -> Result<Vec<RunRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if header.join(",") != CSV_HEADER {
        return Err(Error::InvalidArgument(format!(
            "unexpected CSV header {:?}; expected {CSV_HEADER}",
            header.join(",")
        )));
    }
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Slope thresholds for [`drift_metric`], in nats per iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftThresholds {
    /// Both term slopes must exceed this in magnitude.
    pub drift: f64,
    /// The slope of their difference must stay below this.
    pub stable: f64,
}

impl Default for DriftThresholds {
    fn default() -> Self {
        Self {
            drift: 2e-5,
            stable: 2e-5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftMetric {
    pub slope_term1: f64,
    pub slope_term2: f64,
    pub slope_difference: f64,
    pub detected: bool,
}

/// Least-squares slope of `ys` against `xs`.
pub fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    sxy / sxx
}

/// Slopes of `term1`, `term2` and `term1 - term2` over the trailing `window`
/// records. Drift is both terms moving faster than `drift` while their
/// difference moves slower than `stable`.
pub fn drift_metric(
    records: &[RunRecord],
    window: usize,
    th: &DriftThresholds,
) -> Result<DriftMetric> {
    if window < 10 {
        return Err(Error::InvalidArgument(format!(
            "drift window needs at least 10 records, got {window}"
        )));
    }
    if window > records.len() {
        return Err(Error::InvalidArgument(format!(
            "drift window {window} exceeds the {} logged records",
            records.len()
        )));
    }
    let tail = &records[records.len() - window..];
    if tail
        .iter()
        .any(|r| !r.term1.is_finite() || !r.term2.is_finite())
    {
        return Err(Error::InvalidArgument(
            "drift window contains non-finite terms".into(),
        ));
    }
    let xs: Vec<f64> = tail.iter().map(|r| r.iter as f64).collect();
    let t1: Vec<f64> = tail.iter().map(|r| r.term1).collect();
    let t2: Vec<f64> = tail.iter().map(|r| r.term2).collect();
    let diff: Vec<f64> = tail.iter().map(|r| r.term1 - r.term2).collect();
    let (s1, s2, sd) = (ls_slope(&xs, &t1), ls_slope(&xs, &t2), ls_slope(&xs, &diff));
    Ok(DriftMetric {
        slope_term1: s1,
        slope_term2: s2,
        slope_difference: sd,
        detected: s1.abs() > th.drift && s2.abs() > th.drift && sd.abs() < th.stable,
    })
}

/// `y_t = α x_t + (1 - α) y_{t-1}`, `y_0 = x_0`.
pub fn ema_smooth(series: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if series.is_empty() {
        return Err(Error::Empty("ema_smooth"));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "EMA alpha must lie in (0, 1], got {alpha}"
        )));
    }
    let mut out = Vec::with_capacity(series.len());
    let mut y = series[0];
    out.push(y);
    for &x in &series[1..] {
        y = alpha * x + (1.0 - alpha) * y;
        out.push(y);
    }
    Ok(out)
}
