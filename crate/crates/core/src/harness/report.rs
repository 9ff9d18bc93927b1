//! `report.json` (JSON lines), `summary.csv` and `plotdata/*.csv`.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AssertionResult, CellSummary, ExperimentConfig, FailureReport, InstanceSummary, MonotoneCheck, TrialRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Csv,
    Plotdata,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [Self::Json, Self::Csv, Self::Plotdata];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Line {
    Header {
        schema_version: u32,
        config: ExperimentConfig,
        instance: InstanceSummary,
    },
    Cell(CellSummary),
    Trial(TrialRecord),
    Assertion(AssertionResult),
    Monotone(MonotoneCheck),
}

pub const SUMMARY_COLUMNS: [&str; 15] = [
    "cell",
    "preconditioner",
    "m",
    "n",
    "m_over_n",
    "trials",
    "failures",
    "successes",
    "ambiguous",
    "errors",
    "failure_rate",
    "success_rate",
    "ambiguous_rate",
    "mean_objective_gap",
    "wall_time_s",
];

pub const PLOT_COLUMNS: [&str; 4] = ["m_over_n", "failure_rate", "m", "trials"];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::param(format!("{}: {other:?}", path.display())),
    }
}

/// File-name-safe form of a preconditioner label.
pub fn plot_file_stem(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

pub fn write_report_json(report: &FailureReport, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    let mut put = |line: &Line| -> Result<()> {
        serde_json::to_writer(&mut w, line)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))
    };
    put(&Line::Header {
        schema_version: report.schema_version,
        config: report.config.clone(),
        instance: report.instance.clone(),
    })?;
    for c in &report.cells {
        put(&Line::Cell(c.clone()))?;
    }
    for t in &report.trials {
        put(&Line::Trial(t.clone()))?;
    }
    for a in &report.assertions {
        put(&Line::Assertion(a.clone()))?;
    }
    if let Some(m) = &report.monotone {
        put(&Line::Monotone(m.clone()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_report_json(path: &Path) -> Result<FailureReport> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut header = None;
    let (mut cells, mut trials, mut assertions, mut monotone) = (Vec::new(), Vec::new(), Vec::new(), None);
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        match parsed {
            Line::Header {
                schema_version,
                config,
                instance,
            } => header = Some((schema_version, config, instance)),
            Line::Cell(c) => cells.push(c),
            Line::Trial(t) => trials.push(t),
            Line::Assertion(a) => assertions.push(a),
            Line::Monotone(m) => monotone = Some(m),
        }
    }
    let (schema_version, config, instance) = header.ok_or_else(|| Error::Parse {
        line: 1,
        msg: "missing header record".into(),
    })?;
    Ok(FailureReport {
        schema_version,
        config,
        instance,
        cells,
        trials,
        assertions,
        monotone,
    })
}

pub fn write_summary_csv(cells: &[CellSummary], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(SUMMARY_COLUMNS).map_err(|e| csv_err(path, e))?;
    for c in cells {
        w.write_record([
            c.cell.to_string(),
            c.preconditioner.clone(),
            c.m.to_string(),
            c.n.to_string(),
            c.m_over_n.to_string(),
            c.trials.to_string(),
            c.failures.to_string(),
            c.successes.to_string(),
            c.ambiguous.to_string(),
            c.errors.to_string(),
            c.failure_rate.to_string(),
            c.success_rate.to_string(),
            c.ambiguous_rate.to_string(),
            opt(c.mean_objective_gap),
            opt(c.wall_time_s),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One `(m/n, failure_rate)` series per preconditioner, in first-seen order.
pub fn write_plotdata(cells: &[CellSummary], dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut labels: Vec<&str> = Vec::new();
    for c in cells {
        if !labels.contains(&c.preconditioner.as_str()) {
            labels.push(&c.preconditioner);
        }
    }
    let mut paths = Vec::new();
    for label in labels {
        let path = dir.join(format!("{}.csv", plot_file_stem(label)));
        let mut w = csv::Writer::from_writer(create(&path)?);
        w.write_record(PLOT_COLUMNS).map_err(|e| csv_err(&path, e))?;
        let mut series: Vec<&CellSummary> = cells.iter().filter(|c| c.preconditioner == label).collect();
        series.sort_by_key(|c| c.m);
        for c in series {
            w.write_record([
                c.m_over_n.to_string(),
                c.failure_rate.to_string(),
                c.m.to_string(),
                c.trials.to_string(),
            ])
            .map_err(|e| csv_err(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}

/// Writes the requested formats under `dir` and returns the files written.
pub fn emit_report(report: &FailureReport, dir: &Path, formats: &[ReportFormat]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for f in formats {
        match f {
            ReportFormat::Json => {
                let p = dir.join("report.json");
                write_report_json(report, &p)?;
                written.push(p);
            }
            ReportFormat::Csv => {
                let p = dir.join("summary.csv");
                write_summary_csv(&report.cells, &p)?;
                written.push(p);
            }
            ReportFormat::Plotdata => written.extend(write_plotdata(&report.cells, &dir.join("plotdata"))?),
        }
    }
    Ok(written)
}
