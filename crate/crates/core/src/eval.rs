//! Error metrics, rank reports and CSV tables.

use crate::diffcore::Matrix;
use crate::error::{Error, Result};
use crate::models::Model;
use crate::sampling::{CollocationSet, ParamGrid};
use serde::{Deserialize, Serialize};
use std::io::Write;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub abs_err: f64,
    pub rel_err: f64,
    pub max_err: f64,
    pub explained_var: f64,
}

fn population_variance(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = v.clone().count() as f64;
    let mean = v.clone().sum::<f64>() / n;
    v.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

/// Mean absolute error, relative L2 error, max error and explained
/// variance `1 - Var(u - û) / Var(u)` (population variances).
///
/// A constant reference has zero variance; its explained variance is 1 when
/// the residual is constant too and `-inf` otherwise.
pub fn metrics(u_ref: &[f64], u_pred: &[f64]) -> Result<MetricSet> {
    if u_ref.len() != u_pred.len() {
        return Err(Error::Shape(format!("{} reference vs {} predicted values", u_ref.len(), u_pred.len())));
    }
    if u_ref.len() < 2 {
        return Err(Error::Argument("metrics need at least two points".into()));
    }
    let n = u_ref.len() as f64;
    let err = u_ref.iter().zip(u_pred).map(|(a, b)| a - b);
    let norm_ref = u_ref.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm_ref == 0.0 {
        return Err(Error::Division("reference vector has zero norm".into()));
    }
    let abs_err = err.clone().map(f64::abs).sum::<f64>() / n;
    let rel_err = err.clone().map(|e| e * e).sum::<f64>().sqrt() / norm_ref;
    let max_err = err.clone().map(f64::abs).fold(0.0, f64::max);
    let var_ref = population_variance(u_ref.iter().copied());
    let var_err = population_variance(err);
    let explained_var = if var_ref > 0.0 {
        1.0 - var_err / var_ref
    } else if var_err == 0.0 {
        1.0
    } else {
        f64::NEG_INFINITY
    };
    Ok(MetricSet {
        abs_err,
        rel_err,
        max_err,
        explained_var,
    })
}

/// Metrics of `model` on the test points of `set`.
pub fn evaluate(model: &Model, set: &CollocationSet) -> Result<MetricSet> {
    let pred = model.predict(&set.spec.mu(), &set.test)?;
    metrics(&set.test_u, &pred)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub mu: Vec<f64>,
    pub ranks: Vec<usize>,
    /// Scalars phase 2 would train at this `mu`: the surviving coefficients
    /// plus the input and output layers.
    pub phase2_trainable: usize,
}

/// Per-layer coefficient counts across a parameter grid.
pub fn rank_report(model: &Model, grid: &ParamGrid) -> Result<Vec<RankRow>> {
    let io: usize = ["input.w", "input.b", "output.w", "output.b"]
        .iter()
        .map(|n| model.store.get(n).map(Matrix::len))
        .sum::<Result<usize>>()?;
    grid.iter()
        .map(|mu| {
            let ranks = model.active_ranks(mu)?;
            Ok(RankRow {
                mu: mu.to_vec(),
                phase2_trainable: ranks.iter().sum::<usize>() + io,
                ranks,
            })
        })
        .collect()
}

/// Coefficients of one layer across the grid, each row sorted descending.
pub fn diag_heatmap(model: &Model, grid: &ParamGrid, layer: usize) -> Result<Matrix> {
    let mut rows = Vec::with_capacity(grid.len());
    for mu in grid.iter() {
        let s = model.coefficients(mu)?;
        let mut row = s
            .get(layer)
            .ok_or_else(|| Error::Argument(format!("layer {layer} out of range")))?
            .clone();
        row.sort_by(|a, b| b.total_cmp(a));
        rows.push(row);
    }
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Shape("layers of differing rank across the grid".into()));
    }
    Matrix::from_vec(rows.len(), cols, rows.concat())
}

fn mu_label(mu: &[f64]) -> String {
    mu.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";")
}

pub fn write_metrics_csv<W: Write>(out: W, rows: &[(Vec<f64>, String, MetricSet)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["mu", "method", "abs_err", "rel_err", "max_err", "explained_var"])?;
    for (mu, method, m) in rows {
        w.write_record([
            mu_label(mu),
            method.clone(),
            m.abs_err.to_string(),
            m.rel_err.to_string(),
            m.max_err.to_string(),
            m.explained_var.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_rank_report_csv<W: Write>(out: W, rows: &[RankRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let layers = rows.first().map_or(0, |r| r.ranks.len());
    let mut header = vec!["mu".to_string()];
    header.extend((1..=layers).map(|l| format!("r{l}")));
    header.push("phase2_trainable".into());
    w.write_record(&header)?;
    for row in rows {
        let mut rec = vec![mu_label(&row.mu)];
        rec.extend(row.ranks.iter().map(usize::to_string));
        rec.push(row.phase2_trainable.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_heatmap_csv<W: Write>(out: W, grid: &ParamGrid, heat: &Matrix) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["mu".to_string()];
    header.extend((1..=heat.cols()).map(|i| format!("s{i}")));
    w.write_record(&header)?;
    for (i, mu) in grid.iter().enumerate() {
        let mut rec = vec![mu_label(mu)];
        rec.extend(heat.row(i).iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Mean and population standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    (mean, population_variance(v.iter().copied()).sqrt())
}

/// One cell group of a Table-2 style comparison: errors of one method at one
/// coefficient value, aggregated over seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub mu: Vec<f64>,
    pub method: String,
    pub abs_err: Vec<f64>,
    pub rel_err: Vec<f64>,
}

pub fn write_comparison_csv<W: Write>(out: W, rows: &[ComparisonRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["mu", "method", "abs_err_mean", "abs_err_std", "rel_err_mean", "rel_err_std", "runs"])?;
    for r in rows {
        let (am, asd) = mean_std(&r.abs_err);
        let (rm, rsd) = mean_std(&r.rel_err);
        w.write_record([
            mu_label(&r.mu),
            r.method.clone(),
            am.to_string(),
            asd.to_string(),
            rm.to_string(),
            rsd.to_string(),
            r.abs_err.len().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
