//! Accuracy and confusion reports, trace export and run comparison.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{CategoryId, LabeledDataset};
use crate::fsutil::write_atomic;
use crate::learner::{LearnerError, Network, RunKind, StepRecord, TerminalStatus, TrainingTrace};

pub const REPORT_VERSION: u64 = 1;

pub const TRACE_COLUMNS: [&str; 7] = [
    "neuron_count",
    "sq_norm",
    "train_accuracy",
    "test_accuracy",
    "sigma_used",
    "retries_used",
    "elapsed_seconds",
];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error(transparent)]
    Learner(#[from] LearnerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    /// Comma-separated with a fixed header row.
    Table,
    /// Versioned JSON document.
    Structured,
}

impl std::str::FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "table" => Ok(Self::Table),
            "structured" => Ok(Self::Structured),
            other => Err(format!(
                "unknown format `{other}` (expected `table` or `structured`)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub categories: Vec<CategoryId>,
    /// `confusion[true][predicted]`, over the network's categories.
    pub confusion: Vec<Vec<usize>>,
    /// `None` for categories without samples.
    pub per_category_accuracy: Vec<Option<f64>>,
    pub n_hidden: usize,
    pub space_complexity: usize,
    pub labels: Vec<usize>,
    pub predictions: Vec<usize>,
}

pub fn evaluate(net: &Network, ds: &LabeledDataset) -> Result<EvalReport, LearnerError> {
    let predictions = net.predict(ds)?;
    let labels = ds.label_indices().to_vec();
    let m = net.categories().len();
    let mut confusion = vec![vec![0usize; m]; m];
    for (&l, &p) in labels.iter().zip(&predictions) {
        confusion[l][p] += 1;
    }
    let correct: usize = (0..m).map(|q| confusion[q][q]).sum();
    let accuracy = if labels.is_empty() {
        0.0
    } else {
        correct as f64 / labels.len() as f64
    };
    let per_category_accuracy = confusion
        .iter()
        .enumerate()
        .map(|(q, row)| {
            let total: usize = row.iter().sum();
            (total > 0).then(|| row[q] as f64 / total as f64)
        })
        .collect();
    Ok(EvalReport {
        accuracy,
        categories: net.categories().to_vec(),
        confusion,
        per_category_accuracy,
        n_hidden: net.n_hidden(),
        space_complexity: space_complexity(net),
        labels,
        predictions,
    })
}

pub fn space_complexity(net: &Network) -> usize {
    net.space_complexity()
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn encode_report(report: &EvalReport, format: OutputFormat) -> Vec<u8> {
    match format {
        OutputFormat::Structured => versioned_json("eval_report", report),
        OutputFormat::Table => {
            let m = report.categories.len();
            let mut out = String::from("category,samples,correct,accuracy");
            for q in 0..m {
                write!(out, ",predicted_{q}").unwrap();
            }
            out.push('\n');
            for (q, row) in report.confusion.iter().enumerate() {
                let total: usize = row.iter().sum();
                let acc = report.per_category_accuracy[q].map_or(String::new(), |a| a.to_string());
                write!(out, "{},{total},{},{acc}", report.categories[q], row[q]).unwrap();
                for c in row {
                    write!(out, ",{c}").unwrap();
                }
                out.push('\n');
            }
            out.into_bytes()
        }
    }
}

pub fn write_report(
    report: &EvalReport,
    path: &Path,
    format: OutputFormat,
) -> Result<(), EvalError> {
    write_atomic(path, &encode_report(report, format)).map_err(io_err(path))
}

/// `N x n` hidden rate features with the label index in the first column.
pub fn export_features(net: &Network, ds: &LabeledDataset, path: &Path) -> Result<(), EvalError> {
    let h = net.features(ds)?;
    let mut out = String::from("label_index");
    for j in 0..h.cols() {
        write!(out, ",neuron_{j}").unwrap();
    }
    out.push('\n');
    for (i, &l) in ds.label_indices().iter().enumerate() {
        write!(out, "{l}").unwrap();
        for x in h.row(i) {
            write!(out, ",{x}").unwrap();
        }
        out.push('\n');
    }
    write_atomic(path, out.as_bytes()).map_err(io_err(path))
}

#[derive(Serialize)]
struct Versioned<'a, T: Serialize> {
    format_version: u64,
    kind: &'a str,
    data: &'a T,
}

fn versioned_json<T: Serialize>(kind: &str, body: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(&Versioned {
        format_version: REPORT_VERSION,
        kind,
        data: body,
    })
    .expect("report serializes");
    out.push(b'\n');
    out
}

pub fn encode_trace(trace: &TrainingTrace, format: OutputFormat) -> Vec<u8> {
    match format {
        OutputFormat::Structured => versioned_json("training_trace", trace),
        OutputFormat::Table => {
            let mut out = TRACE_COLUMNS.join(",");
            out.push('\n');
            for r in &trace.records {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    r.neuron_count,
                    r.sq_norm,
                    r.train_accuracy,
                    r.test_accuracy,
                    r.sigma_used,
                    r.retries_used,
                    r.elapsed_seconds
                )
                .unwrap();
            }
            out.into_bytes()
        }
    }
}

pub fn export_trace(
    trace: &TrainingTrace,
    path: &Path,
    format: OutputFormat,
) -> Result<(), EvalError> {
    write_atomic(path, &encode_trace(trace, format)).map_err(io_err(path))
}

#[derive(Deserialize)]
struct TraceDocument {
    format_version: u64,
    kind: String,
    data: TrainingTrace,
}

pub fn parse_trace_structured(bytes: &[u8]) -> Result<TrainingTrace, String> {
    let doc: TraceDocument = serde_json::from_slice(bytes).map_err(|e| e.to_string())?;
    if doc.format_version != REPORT_VERSION {
        return Err(format!("unsupported format_version {}", doc.format_version));
    }
    if doc.kind != "training_trace" {
        return Err(format!(
            "document kind `{}` is not a training trace",
            doc.kind
        ));
    }
    Ok(doc.data)
}

/// Parses the step rows of a table-format trace.
pub fn parse_trace_table(text: &str) -> Result<Vec<StepRecord>, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty table")?;
    if header != TRACE_COLUMNS.join(",") {
        return Err(format!("unexpected header `{header}`"));
    }
    lines
        .enumerate()
        .map(|(k, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != TRACE_COLUMNS.len() {
                return Err(format!("row {}: {} fields", k + 1, f.len()));
            }
            let num = |i: usize| {
                f[i].parse::<f64>()
                    .map_err(|e| format!("row {}: {e}", k + 1))
            };
            Ok(StepRecord {
                neuron_count: f[0].parse().map_err(|e| format!("row {}: {e}", k + 1))?,
                sq_norm: num(1)?,
                train_accuracy: num(2)?,
                test_accuracy: num(3)?,
                sigma_used: num(4)?,
                retries_used: f[5].parse().map_err(|e| format!("row {}: {e}", k + 1))?,
                elapsed_seconds: num(6)?,
            })
        })
        .collect()
}

pub fn read_trace(path: &Path) -> Result<TrainingTrace, EvalError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    parse_trace_structured(&bytes).map_err(|msg| EvalError::Parse {
        path: path.to_path_buf(),
        msg,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub kind: RunKind,
    /// Best test accuracy over the run.
    pub accuracy: f64,
    pub final_test_accuracy: f64,
    pub final_train_accuracy: f64,
    /// Neuron count at the last step.
    pub n_hidden: usize,
    pub best_neurons: usize,
    pub added_neurons: usize,
    pub elapsed_seconds: f64,
    pub status: TerminalStatus,
    pub fastest_to_target: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    /// Sorted by `elapsed_seconds`, ascending.
    pub rows: Vec<ComparisonRow>,
}

pub fn compare_runs(runs: &[(String, TrainingTrace)]) -> ComparisonReport {
    let mut rows: Vec<ComparisonRow> = runs
        .iter()
        .map(|(label, t)| ComparisonRow {
            label: label.clone(),
            kind: t.kind,
            accuracy: t.best_test_accuracy,
            final_test_accuracy: t.final_test_accuracy(),
            final_train_accuracy: t.final_train_accuracy(),
            n_hidden: t.final_neurons(),
            best_neurons: t.best_neurons,
            added_neurons: t.added_neurons(),
            elapsed_seconds: t.elapsed_seconds(),
            status: t.status,
            fastest_to_target: false,
        })
        .collect();
    rows.sort_by(|a, b| {
        a.elapsed_seconds
            .total_cmp(&b.elapsed_seconds)
            .then_with(|| a.label.cmp(&b.label))
    });
    if let Some(first) = rows
        .iter_mut()
        .find(|r| r.status == TerminalStatus::TargetReached)
    {
        first.fastest_to_target = true;
    }
    ComparisonReport { rows }
}

pub fn encode_comparison(report: &ComparisonReport, format: OutputFormat) -> Vec<u8> {
    match format {
        OutputFormat::Structured => versioned_json("comparison", report),
        OutputFormat::Table => {
            let mut out = String::from(
                "label,kind,accuracy,final_test_accuracy,final_train_accuracy,n_hidden,best_neurons,added_neurons,status,fastest_to_target,elapsed_seconds\n",
            );
            for r in &report.rows {
                let kind = match r.kind {
                    RunKind::Fresh => "fresh",
                    RunKind::OneLoop => "one_loop",
                    RunKind::Experienced => "experienced",
                };
                writeln!(
                    out,
                    "{},{kind},{},{},{},{},{},{},{},{},{}",
                    r.label,
                    r.accuracy,
                    r.final_test_accuracy,
                    r.final_train_accuracy,
                    r.n_hidden,
                    r.best_neurons,
                    r.added_neurons,
                    r.status.as_str(),
                    r.fastest_to_target,
                    r.elapsed_seconds
                )
                .unwrap();
            }
            out.into_bytes()
        }
    }
}
