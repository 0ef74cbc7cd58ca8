//! Phase timing samples and the single/distributed timing model.
//!
//! * `T_single = T_r + T_m + T_f + T_a + T_s`
//! * BAS: `T_dist = T_r + T_marshal + T_trans + max_k(T_m + T_f + T_a)_k + T_unmarshal + T_s`
//! * TS:  `T_dist = T_r + T_marshal + T_trans + max_k(T_f + T_m + T_a + T_s')_k`
//! * `speedup = T_single / T_dist`, `improvement = speedup / m`
//!
//! Communication terms are summed over subpopulations; only the compute term
//! takes the maximum over slaves. The TS form carries no unmarshal or master
//! selection term.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::SolveResult;
use crate::evolution::SelectionMethod;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("distributed timing needs per-slave samples")]
    MissingSlaveSamples,
    #[error("distributed time is zero")]
    ZeroDistributedTime,
    #[error("no results to report")]
    EmptyResults,
    #[error("report I/O failed: {0}")]
    IoError(#[from] std::io::Error),
    #[error("report serialization failed: {0}")]
    Serialize(#[from] serde_json::Error),
}

/// Compute time of one slave for one generation, in seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SlavePhase {
    pub t_m: f64,
    pub t_f: f64,
    pub t_a: f64,
    #[serde(default)]
    pub t_s_partial: f64,
}

/// Per-generation phase durations in seconds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub t_r: f64,
    pub t_m: f64,
    pub t_f: f64,
    pub t_a: f64,
    pub t_s: f64,
    pub t_marshal: f64,
    pub t_trans: f64,
    pub t_unmarshal: f64,
    #[serde(default)]
    pub per_slave: Vec<SlavePhase>,
}

impl PhaseTimings {
    fn max_slave(&self, term: impl Fn(&SlavePhase) -> f64) -> Result<f64, MetricsError> {
        self.per_slave
            .iter()
            .map(term)
            .reduce(f64::max)
            .ok_or(MetricsError::MissingSlaveSamples)
    }

    /// Adds another sample component-wise. Per-slave entries are summed
    /// position by position.
    pub fn accumulate(&mut self, other: &PhaseTimings) {
        self.t_r += other.t_r;
        self.t_m += other.t_m;
        self.t_f += other.t_f;
        self.t_a += other.t_a;
        self.t_s += other.t_s;
        self.t_marshal += other.t_marshal;
        self.t_trans += other.t_trans;
        self.t_unmarshal += other.t_unmarshal;
        if self.per_slave.len() < other.per_slave.len() {
            self.per_slave.resize(other.per_slave.len(), SlavePhase::default());
        }
        for (a, b) in self.per_slave.iter_mut().zip(&other.per_slave) {
            a.t_m += b.t_m;
            a.t_f += b.t_f;
            a.t_a += b.t_a;
            a.t_s_partial += b.t_s_partial;
        }
    }
}

pub fn t_single(ph: &PhaseTimings) -> f64 {
    ph.t_r + ph.t_m + ph.t_f + ph.t_a + ph.t_s
}

pub fn t_distributed(ph: &PhaseTimings, method: SelectionMethod) -> Result<f64, MetricsError> {
    let comm = ph.t_marshal + ph.t_trans;
    match method {
        SelectionMethod::Bas => {
            let compute = ph.max_slave(|s| s.t_m + s.t_f + s.t_a)?;
            Ok(ph.t_r + (comm + compute) + ph.t_unmarshal + ph.t_s)
        }
        SelectionMethod::Ts => {
            let compute = ph.max_slave(|s| s.t_f + s.t_m + s.t_a + s.t_s_partial)?;
            Ok(ph.t_r + comm + compute)
        }
    }
}

/// Returns `(speedup, improvement)` where improvement is a fraction of 1.
pub fn speedup(t_single: f64, t_distributed: f64, m: usize) -> Result<(f64, f64), MetricsError> {
    if t_distributed <= 0.0 {
        return Err(MetricsError::ZeroDistributedTime);
    }
    let s = t_single / t_distributed;
    Ok((s, s / m.max(1) as f64))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[default]
    Csv,
    Json,
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Csv => "csv",
            Self::Json => "json",
        })
    }
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(format!("unknown report format `{other}` (expected csv or json)")),
        }
    }
}

/// One finished run and how it was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub label: String,
    /// `single`, `virtual` or `network`.
    pub topology: String,
    pub slaves: usize,
    pub selection: SelectionMethod,
    pub seed: u64,
    /// Fully resolved configuration the run was started with.
    pub config: serde_json::Value,
    pub result: SolveResult,
}

impl RunRecord {
    pub fn is_single(&self) -> bool {
        self.topology == "single"
    }

    /// Modelled time of one generation: `T_single` for single-process runs,
    /// `T_distributed` otherwise.
    pub fn model_time(&self, ph: &PhaseTimings) -> Result<f64, MetricsError> {
        if self.is_single() {
            Ok(t_single(ph))
        } else {
            t_distributed(ph, self.selection)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    /// Generation number (1-based), `None` for the run total.
    pub generation: Option<u64>,
    #[serde(with = "crate::json::real")]
    pub champion_error: f64,
    #[serde(flatten)]
    pub timings: PhaseTimings,
    pub t_model: f64,
    pub speedup: Option<f64>,
    pub improvement: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRun {
    #[serde(flatten)]
    pub record: RunRecord,
    pub rows: Vec<ReportRow>,
    pub total: ReportRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub notes: Vec<String>,
    pub runs: Vec<ReportRun>,
}

const NOTES: &[&str] = &[
    "times are seconds on a monotonic clock",
    "t_model is t_single for single-process runs and t_distributed for cluster runs",
    "t_distributed(bas) = t_r + t_marshal + t_trans + max_slave(t_m + t_f + t_a) + t_unmarshal + t_s",
    "t_distributed(ts) = t_r + t_marshal + t_trans + max_slave(t_f + t_m + t_a + t_s_partial); the ts form has no unmarshal or master selection term",
    "speedup = total t_single of the single-process run / total t_distributed of this run; improvement = speedup / slaves",
    "t_trans is measured at the master as (first response byte - send complete) - slave busy time",
];

/// Builds the report rows. The first single-process record, if any, is the
/// baseline for the speedup of every cluster record.
pub fn build_report(records: &[RunRecord]) -> Result<Report, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyResults);
    }
    let mut runs = Vec::with_capacity(records.len());
    for rec in records {
        let mut rows = Vec::with_capacity(rec.result.timings.len());
        let mut total = PhaseTimings::default();
        let mut total_model = 0.0;
        for (g, ph) in rec.result.timings.iter().enumerate() {
            let t_model = rec.model_time(ph)?;
            total_model += t_model;
            total.accumulate(ph);
            rows.push(ReportRow {
                generation: Some(g as u64 + 1),
                champion_error: rec.result.trajectory.get(g).copied().unwrap_or(f64::NAN),
                timings: ph.clone(),
                t_model,
                speedup: None,
                improvement: None,
            });
        }
        runs.push(ReportRun {
            record: rec.clone(),
            rows,
            total: ReportRow {
                generation: None,
                champion_error: rec.result.champion_error,
                timings: total,
                t_model: total_model,
                speedup: None,
                improvement: None,
            },
        });
    }
    if let Some(base) = runs.iter().position(|r| r.record.is_single()) {
        let baseline = runs[base].total.t_model;
        for run in runs.iter_mut().filter(|r| !r.record.is_single()) {
            if run.total.t_model > 0.0 {
                let (s, imp) = speedup(baseline, run.total.t_model, run.record.slaves)?;
                run.total.speedup = Some(s);
                run.total.improvement = Some(imp);
            }
        }
    }
    Ok(Report {
        notes: NOTES.iter().map(|s| s.to_string()).collect(),
        runs,
    })
}

const CSV_HEADER: &str = "run,topology,selection,slaves,generation,champion_error,t_r,t_m,t_f,t_a,t_s,t_marshal,t_trans,t_unmarshal,t_model,speedup,improvement";

fn csv_row(out: &mut String, run: &ReportRun, row: &ReportRow) {
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    let gen = row.generation.map(|g| g.to_string()).unwrap_or_else(|| "total".into());
    let t = &row.timings;
    let rec = &run.record;
    out.push_str(&format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
        rec.label,
        rec.topology,
        rec.selection,
        rec.slaves,
        gen,
        row.champion_error,
        t.t_r,
        t.t_m,
        t.t_f,
        t.t_a,
        t.t_s,
        t.t_marshal,
        t.t_trans,
        t.t_unmarshal,
        row.t_model,
        opt(row.speedup),
        opt(row.improvement),
    ));
}

pub fn render_csv(report: &Report) -> Result<String, MetricsError> {
    let mut out = String::new();
    for run in &report.runs {
        out.push_str(&format!(
            "# config[{}]={}\n",
            run.record.label,
            serde_json::to_string(&run.record.config)?
        ));
    }
    out.push_str(CSV_HEADER);
    out.push('\n');
    for run in &report.runs {
        for row in &run.rows {
            csv_row(&mut out, run, row);
        }
        csv_row(&mut out, run, &run.total);
    }
    Ok(out)
}

pub fn render_json(report: &Report) -> Result<String, MetricsError> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    Ok(text)
}

/// Writes the report. Nothing is created when `records` is empty.
pub fn emit_report(
    records: &[RunRecord],
    path: impl AsRef<Path>,
    format: ReportFormat,
) -> Result<(), MetricsError> {
    let report = build_report(records)?;
    let text = match format {
        ReportFormat::Csv => render_csv(&report)?,
        ReportFormat::Json => render_json(&report)?,
    };
    fs::write(path, text)?;
    Ok(())
}

/// Reads the records back from a JSON report.
pub fn load_report(path: impl AsRef<Path>) -> Result<Vec<RunRecord>, MetricsError> {
    let text = fs::read_to_string(path)?;
    let report: Report = serde_json::from_str(&text)?;
    Ok(report.runs.into_iter().map(|r| r.record).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic() -> PhaseTimings {
        PhaseTimings {
            t_r: 0.1,
            t_m: 0.2,
            t_f: 0.05,
            t_a: 0.03,
            t_s: 0.02,
            ..PhaseTimings::default()
        }
    }

    #[test]
    fn single_time_examples() {
        assert_eq!(t_single(&PhaseTimings::default()), 0.0);
        assert!((t_single(&synthetic()) - 0.40).abs() < 1e-15);
        let permuted = PhaseTimings {
            t_r: 0.02,
            t_m: 0.05,
            t_f: 0.2,
            t_a: 0.1,
            t_s: 0.03,
            ..PhaseTimings::default()
        };
        assert!((t_single(&permuted) - t_single(&synthetic())).abs() < 1e-15);
    }

    #[test]
    fn distributed_time_examples() {
        let mut ph = PhaseTimings {
            t_r: 0.1,
            t_s: 0.02,
            t_marshal: 0.01,
            t_trans: 0.004,
            t_unmarshal: 0.003,
            ..PhaseTimings::default()
        };
        assert!(matches!(
            t_distributed(&ph, SelectionMethod::Bas),
            Err(MetricsError::MissingSlaveSamples)
        ));
        ph.per_slave = vec![SlavePhase::default()];
        let expected = 0.1 + 0.01 + 0.004 + 0.003 + 0.02;
        assert!((t_distributed(&ph, SelectionMethod::Bas).unwrap() - expected).abs() < 1e-15);

        ph.per_slave = vec![
            SlavePhase { t_m: 0.03, t_f: 0.01, t_a: 0.01, t_s_partial: 0.0 },
            SlavePhase { t_m: 0.05, t_f: 0.03, t_a: 0.01, t_s_partial: 0.0 },
            SlavePhase { t_m: 0.04, t_f: 0.02, t_a: 0.01, t_s_partial: 0.0 },
        ];
        let bas = t_distributed(&ph, SelectionMethod::Bas).unwrap();
        assert!((bas - (0.1 + 0.01 + 0.004 + 0.09 + 0.003 + 0.02)).abs() < 1e-15);
    }

    #[test]
    fn distributed_collapses_to_single() {
        let mut ph = synthetic();
        ph.per_slave = vec![SlavePhase {
            t_m: ph.t_m,
            t_f: ph.t_f,
            t_a: ph.t_a,
            t_s_partial: 0.0,
        }];
        assert_eq!(t_distributed(&ph, SelectionMethod::Bas).unwrap(), t_single(&ph));
    }

    #[test]
    fn speedup_examples() {
        let (_, imp) = speedup(3.36, 1.0, 5).unwrap();
        assert!((imp - 0.672).abs() < 1e-12);
        let (_, imp) = speedup(6.72, 1.0, 15).unwrap();
        assert!((imp - 0.448).abs() < 1e-12);
        let (s, imp) = speedup(2.5, 2.5, 4).unwrap();
        assert_eq!((s, imp), (1.0, 0.25));
        assert!(matches!(speedup(1.0, 0.0, 1), Err(MetricsError::ZeroDistributedTime)));
    }

    #[test]
    fn empty_report_creates_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        assert!(matches!(
            emit_report(&[], &path, ReportFormat::Csv),
            Err(MetricsError::EmptyResults)
        ));
        assert!(!path.exists());
    }
}
