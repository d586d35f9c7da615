//! Error metrics and the report tables built from them.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::counts::csv_io;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPair {
    pub predicted: f64,
    pub truth: f64,
    pub label: String,
}

impl EvalPair {
    pub fn new(predicted: f64, truth: f64) -> Self {
        EvalPair {
            predicted,
            truth,
            label: String::new(),
        }
    }

    pub fn labelled(predicted: f64, truth: f64, label: impl Into<String>) -> Self {
        EvalPair {
            predicted,
            truth,
            label: label.into(),
        }
    }
}

fn check_finite(pairs: &[EvalPair]) -> Result<()> {
    match pairs
        .iter()
        .find(|p| !p.predicted.is_finite() || !p.truth.is_finite())
    {
        Some(p) => Err(Error::Invalid(format!("non-finite evaluation pair '{}'", p.label))),
        None => Ok(()),
    }
}

pub fn rmse(pairs: &[EvalPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("rmse of no pairs"));
    }
    check_finite(pairs)?;
    let sse: f64 = pairs.iter().map(|p| (p.predicted - p.truth).powi(2)).sum();
    Ok((sse / pairs.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Mape {
    pub value: f64,
    /// Pairs skipped because their truth is zero.
    pub excluded: usize,
}

/// Mean absolute percentage error as a fraction. Zero-truth pairs are excluded and counted.
pub fn mape(pairs: &[EvalPair]) -> Result<Mape> {
    if pairs.is_empty() {
        return Err(Error::Empty("mape of no pairs"));
    }
    check_finite(pairs)?;
    let kept: Vec<f64> = pairs
        .iter()
        .filter(|p| p.truth != 0.0)
        .map(|p| (p.predicted - p.truth).abs() / p.truth.abs())
        .collect();
    if kept.is_empty() {
        return Err(Error::Invalid("mape undefined: every truth value is zero".into()));
    }
    Ok(Mape {
        value: kept.iter().sum::<f64>() / kept.len() as f64,
        excluded: pairs.len() - kept.len(),
    })
}

/// Coefficient of determination, `1 - SS_res / SS_tot`.
pub fn r_squared(pairs: &[EvalPair]) -> Result<f64> {
    if pairs.len() < 2 {
        return Err(Error::Invalid("r_squared needs at least 2 pairs".into()));
    }
    check_finite(pairs)?;
    let mean = pairs.iter().map(|p| p.truth).sum::<f64>() / pairs.len() as f64;
    let ss_tot: f64 = pairs.iter().map(|p| (p.truth - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::Degenerate("r_squared undefined: truth has zero variance".into()));
    }
    let ss_res: f64 = pairs.iter().map(|p| (p.truth - p.predicted).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub const AVERAGE_LABEL: &str = "AVERAGE";

/// One row of a metric table (per site, or per LA and road type).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub group: String,
    pub label: String,
    pub rmse: f64,
    pub mape: f64,
}

impl MetricRow {
    pub fn from_pairs(group: &str, label: &str, pairs: &[EvalPair]) -> Result<Self> {
        Ok(MetricRow {
            group: group.to_string(),
            label: label.to_string(),
            rmse: rmse(pairs)?,
            mape: mape(pairs)?.value,
        })
    }
}

/// Appends one unweighted AVERAGE row per distinct group, in first-seen order.
pub fn with_average_rows(rows: &[MetricRow]) -> Vec<MetricRow> {
    let mut out = rows.to_vec();
    let mut groups: Vec<&str> = Vec::new();
    for r in rows {
        if !groups.contains(&r.group.as_str()) {
            groups.push(&r.group);
        }
    }
    for g in groups {
        let members: Vec<&MetricRow> = rows.iter().filter(|r| r.group == g).collect();
        let n = members.len() as f64;
        out.push(MetricRow {
            group: g.to_string(),
            label: AVERAGE_LABEL.to_string(),
            rmse: members.iter().map(|r| r.rmse).sum::<f64>() / n,
            mape: members.iter().map(|r| r.mape).sum::<f64>() / n,
        });
    }
    out
}

pub fn write_metric_table(path: &Path, header: [&str; 4], rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(header).map_err(|e| csv_io(path, e))?;
    for r in rows {
        w.write_record([
            r.label.clone(),
            r.group.clone(),
            r.rmse.to_string(),
            r.mape.to_string(),
        ])
        .map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub const SCATTER_HEADER: [&str; 6] = ["la", "road_type", "aadt_pred", "aadt_true", "ghg_pred", "ghg_true"];

/// Predicted and true LA totals for a scatter plot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub la: String,
    pub road_type: String,
    pub aadt_pred: f64,
    pub aadt_true: f64,
    pub ghg_pred: f64,
    pub ghg_true: f64,
}

pub fn write_scatter(path: &Path, points: &[ScatterPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(SCATTER_HEADER).map_err(|e| csv_io(path, e))?;
    for p in points {
        w.write_record([
            p.la.clone(),
            p.road_type.clone(),
            p.aadt_pred.to_string(),
            p.aadt_true.to_string(),
            p.ghg_pred.to_string(),
            p.ghg_true.to_string(),
        ])
        .map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_scatter(path: &Path) -> Result<Vec<ScatterPoint>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    let header = rdr.headers().map_err(|e| csv_io(path, e))?.clone();
    if header.iter().collect::<Vec<_>>() != SCATTER_HEADER {
        return Err(Error::schema(path, "unexpected scatter header"));
    }
    rdr.deserialize()
        .map(|r| r.map_err(|e| csv_io(path, e)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(v: &[(f64, f64)]) -> Vec<EvalPair> {
        v.iter().map(|&(p, t)| EvalPair::new(p, t)).collect()
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&pairs(&[(1.0, 1.0), (5.0, 5.0)])).unwrap(), 0.0);
        assert_eq!(rmse(&pairs(&[(0.0, 3.0), (0.0, 4.0)])).unwrap(), 12.5f64.sqrt());
        assert_eq!(rmse(&pairs(&[(10.0, 7.0)])).unwrap(), 3.0);
        assert!(rmse(&[]).is_err());
    }

    #[test]
    fn mape_examples() {
        assert_eq!(mape(&pairs(&[(3.0, 3.0)])).unwrap().value, 0.0);
        assert!((mape(&pairs(&[(110.0, 100.0)])).unwrap().value - 0.10).abs() < 1e-15);
        assert!((mape(&pairs(&[(110.0, 100.0), (80.0, 100.0)])).unwrap().value - 0.15).abs() < 1e-15);
        let m = mape(&pairs(&[(110.0, 100.0), (5.0, 0.0)])).unwrap();
        assert_eq!(m.excluded, 1);
        assert!(mape(&pairs(&[(1.0, 0.0)])).is_err());
    }

    #[test]
    fn r_squared_examples() {
        assert_eq!(r_squared(&pairs(&[(1.0, 1.0), (2.0, 2.0)])).unwrap(), 1.0);
        assert_eq!(r_squared(&pairs(&[(1.0, 1.0), (2.0, 2.0), (4.0, 3.0)])).unwrap(), 0.5);
        assert!(r_squared(&pairs(&[(1.0, 2.0), (3.0, 2.0)])).is_err());
        assert!(r_squared(&pairs(&[(1.0, 2.0)])).is_err());
    }

    #[test]
    fn average_row_per_group() {
        let rows = vec![
            MetricRow { group: "sites".into(), label: "a".into(), rmse: 2.0, mape: 0.1 },
            MetricRow { group: "sites".into(), label: "b".into(), rmse: 4.0, mape: 0.3 },
        ];
        let out = with_average_rows(&rows);
        assert_eq!(out.len(), 3);
        assert_eq!(out[2].label, AVERAGE_LABEL);
        assert_eq!(out[2].rmse, 3.0);
        assert!((out[2].mape - 0.2).abs() < 1e-15);
    }
}
