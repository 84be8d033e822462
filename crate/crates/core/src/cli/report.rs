use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::ExperimentConfig;
use crate::cfrm::{ClusterChain, StepRecord};
use crate::clustering::PartitionMetrics;
use crate::dcmtf::{EpochRecord, Trial};
use crate::error::{Error, Result};

/// Matrices with more entries than this are written to a sidecar file.
pub const SIDECAR_ENTRIES: usize = 1_000_000;

/// A dense matrix in a report: inline row-major values, or the name of a
/// sidecar JSON file next to the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMatrix {
    pub rows: usize,
    pub cols: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sidecar: Option<String>,
}

impl ReportMatrix {
    pub fn from_array(a: &Array2<f64>) -> Self {
        Self {
            rows: a.nrows(),
            cols: a.ncols(),
            values: Some(a.rows().into_iter().map(|r| r.to_vec()).collect()),
            sidecar: None,
        }
    }

    pub fn to_array(&self) -> Result<Array2<f64>> {
        let values = self
            .values
            .as_ref()
            .ok_or_else(|| Error::Config("matrix values live in an unresolved sidecar".into()))?;
        let flat: Vec<f64> = values.iter().flatten().copied().collect();
        Array2::from_shape_vec((self.rows, self.cols), flat).map_err(|e| Error::ShapeMismatch(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityReport {
    pub name: String,
    pub k: usize,
    pub assignments: Vec<usize>,
    pub silhouette: Option<f64>,
    /// Present when truth labels were supplied for this entity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<PartitionMetrics>,
    /// The points that were clustered, when the config asks for them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<ReportMatrix>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationReport {
    pub matrix: usize,
    pub row_entity: String,
    pub col_entity: String,
    pub values: ReportMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Timings {
    pub total_secs: f64,
    /// Seconds per named stage.
    pub stages: BTreeMap<String, f64>,
}

/// Everything one run produced. Field order is the JSON key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: String,
    pub config: ExperimentConfig,
    pub entities: Vec<EntityReport>,
    pub associations: Vec<AssociationReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub loss_history: Vec<EpochRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace_history: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cfrm_steps: Vec<StepRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trials: Vec<Trial>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub chains: Vec<ClusterChain>,
    /// Epochs or sweeps actually run.
    pub iterations: usize,
    pub converged: bool,
    /// Wall clock; excluded when comparing runs.
    pub timings: Timings,
}

impl RunReport {
    pub fn entity(&self, name: &str) -> Option<&EntityReport> {
        self.entities.iter().find(|e| e.name == name)
    }

    /// Mean ARI over entities with truth labels.
    pub fn mean_ari(&self) -> Option<f64> {
        let aris: Vec<f64> = self.entities.iter().filter_map(|e| e.metrics.map(|m| m.ari)).collect();
        (!aris.is_empty()).then(|| aris.iter().sum::<f64>() / aris.len() as f64)
    }
}

fn sidecar_path(report: &Path, name: &str) -> PathBuf {
    report.with_file_name(name)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn matrices_mut(report: &mut RunReport) -> Vec<(String, &mut ReportMatrix)> {
    let mut out = Vec::new();
    for e in &mut report.entities {
        if let Some(m) = e.embedding.as_mut() {
            out.push((format!("embedding.{}", e.name), m));
        }
    }
    for a in &mut report.associations {
        out.push((format!("assoc{}", a.matrix), &mut a.values));
    }
    out
}

pub fn emit_report(report: &RunReport, path: &Path) -> Result<()> {
    emit_report_with(report, path, SIDECAR_ENTRIES)
}

/// As [`emit_report`] with an explicit sidecar threshold.
pub fn emit_report_with(report: &RunReport, path: &Path, sidecar_above: usize) -> Result<()> {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("report").to_string();
    let mut out = report.clone();
    for (name, m) in matrices_mut(&mut out) {
        if m.rows * m.cols > sidecar_above {
            let name = format!("{stem}.{name}.json");
            let values = m.values.take().unwrap_or_default();
            write_json(&sidecar_path(path, &name), &values)?;
            m.sidecar = Some(name);
        }
    }
    write_json(path, &out)
}

/// Reads a report and resolves its sidecars.
pub fn read_report(path: &Path) -> Result<RunReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut report: RunReport = serde_json::from_str(&text).map_err(|e| Error::ParseError {
        path: path.display().to_string(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    for (_, m) in matrices_mut(&mut report) {
        if let Some(name) = m.sidecar.take() {
            let sp = sidecar_path(path, &name);
            let text = fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
            let values: Vec<Vec<f64>> = serde_json::from_str(&text).map_err(|e| Error::ParseError {
                path: sp.display().to_string(),
                line: e.line(),
                msg: e.to_string(),
            })?;
            m.values = Some(values);
        }
    }
    Ok(report)
}

/// Report JSON with the timing block removed, for run-to-run comparison.
pub fn without_timings(json: &str) -> Result<serde_json::Value> {
    let mut v: serde_json::Value = serde_json::from_str(json).map_err(|e| Error::Config(e.to_string()))?;
    if let Some(obj) = v.as_object_mut() {
        obj.remove("timings");
    }
    Ok(v)
}
