//! Positioning metrics (RMSE, R²) and empirical error CDFs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::positioning::{heading_error, PredictionRow};
use crate::scene::{Pattern, Scenario};
use crate::{Error, Result};

/// RMSE and R² of one group of predictions. `None` marks an undefined R²
/// (zero-variance truth).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub rmse_x: f64,
    pub rmse_y: f64,
    pub rmse_heading: f64,
    pub rmse_dist: f64,
    pub r2_x: Option<f64>,
    pub r2_y: Option<f64>,
    pub r2_heading: Option<f64>,
}

fn rmse(residuals: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for r in residuals {
        sum += r * r;
        n += 1;
    }
    (sum / n.max(1) as f64).sqrt()
}

fn r2(pred: &[f64], truth: &[f64]) -> Option<f64> {
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
    let ss_res: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    (ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot)
}

/// R² on the circle: residuals are wrapped errors, the total sum of squares
/// is taken around the circular mean of the truth.
fn r2_heading(pred: &[f64], truth: &[f64]) -> Option<f64> {
    let (s, c) = truth.iter().fold((0.0, 0.0), |(s, c), h| {
        let r = h.to_radians();
        (s + r.sin(), c + r.cos())
    });
    if s == 0.0 && c == 0.0 {
        return None;
    }
    let mean = s.atan2(c).to_degrees();
    let ss_tot: f64 = truth.iter().map(|&t| heading_error(t, mean).powi(2)).sum();
    let ss_res: f64 = pred.iter().zip(truth).map(|(&p, &t)| heading_error(p, t).powi(2)).sum();
    (ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot)
}

/// Metrics over aligned predictions and truths.
pub fn compute_metrics(rows: &[PredictionRow]) -> Result<Metrics> {
    if rows.is_empty() {
        return Err(Error::Empty("prediction set"));
    }
    let col = |f: fn(&PredictionRow) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
    let (px, py, ph) = (col(|r| r.pred.x), col(|r| r.pred.y), col(|r| r.pred.heading));
    let (tx, ty, th) = (col(|r| r.truth.x), col(|r| r.truth.y), col(|r| r.truth.heading));
    Ok(Metrics {
        n: rows.len(),
        rmse_x: rmse(px.iter().zip(&tx).map(|(p, t)| p - t)),
        rmse_y: rmse(py.iter().zip(&ty).map(|(p, t)| p - t)),
        rmse_heading: rmse(ph.iter().zip(&th).map(|(&p, &t)| heading_error(p, t))),
        rmse_dist: rmse(rows.iter().map(|r| (r.pred.x - r.truth.x).hypot(r.pred.y - r.truth.y))),
        r2_x: r2(&px, &tx),
        r2_y: r2(&py, &ty),
        r2_heading: r2_heading(&ph, &th),
    })
}

/// Group a metrics row refers to; `pattern: None` pools all patterns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scenario: Scenario,
    pub pattern: Option<Pattern>,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
}

impl MetricsReport {
    /// Per-pattern rows followed by a pooled row. `pattern_of` maps a user
    /// id to its mobility pattern.
    pub fn build(scenario: Scenario, rows: &[PredictionRow], pattern_of: impl Fn(usize) -> Pattern) -> Result<Self> {
        let mut out = Vec::new();
        for pattern in Pattern::ALL {
            let group: Vec<PredictionRow> = rows
                .iter()
                .filter(|r| pattern_of(r.pred.user) == pattern)
                .copied()
                .collect();
            if !group.is_empty() {
                out.push(MetricsRow {
                    scenario,
                    pattern: Some(pattern),
                    metrics: compute_metrics(&group)?,
                });
            }
        }
        out.push(MetricsRow {
            scenario,
            pattern: None,
            metrics: compute_metrics(rows)?,
        });
        Ok(Self { rows: out })
    }

    pub fn pooled(&self) -> Option<&Metrics> {
        self.rows.iter().find(|r| r.pattern.is_none()).map(|r| &r.metrics)
    }

    /// CSV `scenario,pattern,n,rmse_x,rmse_y,rmse_heading,rmse_dist,r2_x,r2_y,r2_heading`;
    /// undefined R² is written as `NA`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "scenario",
            "pattern",
            "n",
            "rmse_x",
            "rmse_y",
            "rmse_heading",
            "rmse_dist",
            "r2_x",
            "r2_y",
            "r2_heading",
        ])?;
        let opt = |v: Option<f64>| v.map_or("NA".to_string(), |v| v.to_string());
        for r in &self.rows {
            let m = &r.metrics;
            w.write_record(&[
                r.scenario.to_string(),
                r.pattern.map_or("all".to_string(), |p| p.name().to_string()),
                m.n.to_string(),
                m.rmse_x.to_string(),
                m.rmse_y.to_string(),
                m.rmse_heading.to_string(),
                m.rmse_dist.to_string(),
                opt(m.r2_x),
                opt(m.r2_y),
                opt(m.r2_heading),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Empirical CDF points `(error, k/n)` in ascending error order.
pub fn cdf_points(errors: &[f64]) -> Result<Vec<(f64, f64)>> {
    if errors.is_empty() {
        return Err(Error::Empty("error list"));
    }
    if errors.iter().any(|e| e.is_nan()) {
        return Err(Error::NonFinite("error list"));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(sorted
        .into_iter()
        .enumerate()
        .map(|(k, e)| (e, (k + 1) as f64 / n))
        .collect())
}

/// Writes the empirical CDF of `errors` as CSV `error,probability`.
pub fn export_cdf(errors: &[f64], path: &Path) -> Result<Vec<(f64, f64)>> {
    let points = cdf_points(errors)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["error", "probability"])?;
    for (e, p) in &points {
        w.write_record(&[e.to_string(), p.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(points)
}

pub fn read_cdf(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let parse = |i: usize| -> Result<f64> {
            rec[i].parse().map_err(|e| Error::Malformed {
                path: path.into(),
                reason: format!("{e}"),
            })
        };
        out.push((parse(0)?, parse(1)?));
    }
    Ok(out)
}
