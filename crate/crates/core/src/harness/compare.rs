//! Quality-versus-cost summary across finished experiments.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

use super::metrics::{read_csv_file, MetricsRow};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSummary {
    pub name: String,
    pub rounds: u64,
    pub final_train_loss: f64,
    pub final_eval_loss: f64,
    pub final_eval_accuracy: f64,
    pub cfmq_terabytes: f64,
}

/// Summaries sorted by total CFMQ, cheapest first.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryTable {
    pub rows: Vec<ExperimentSummary>,
}

pub fn summarize(name: impl Into<String>, rows: &[MetricsRow]) -> Result<ExperimentSummary> {
    let last = rows
        .last()
        .ok_or_else(|| Error::InvalidArgument("experiment has no metrics rows".into()))?;
    Ok(ExperimentSummary {
        name: name.into(),
        rounds: last.round,
        final_train_loss: last.train_loss,
        final_eval_loss: last.eval_loss,
        final_eval_accuracy: last.eval_accuracy,
        cfmq_terabytes: last.cfmq_terabytes,
    })
}

impl SummaryTable {
    pub fn new(mut rows: Vec<ExperimentSummary>) -> Self {
        rows.sort_by(|a, b| a.cfmq_terabytes.total_cmp(&b.cfmq_terabytes));
        SummaryTable { rows }
    }

    /// Column-aligned text for terminals.
    pub fn to_text(&self) -> String {
        let headers = ["experiment", "rounds", "eval_loss", "eval_accuracy", "train_loss", "cfmq_tb"];
        let cells: Vec<[String; 6]> = self
            .rows
            .iter()
            .map(|s| {
                [
                    s.name.clone(),
                    s.rounds.to_string(),
                    format!("{:.6}", s.final_eval_loss),
                    format!("{:.4}", s.final_eval_accuracy),
                    format!("{:.6}", s.final_train_loss),
                    format!("{:.6e}", s.cfmq_terabytes),
                ]
            })
            .collect();
        let mut widths = headers.map(str::len);
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        let mut line = |fields: Vec<&str>| {
            let parts: Vec<String> = fields
                .iter()
                .zip(widths)
                .enumerate()
                .map(|(i, (f, w))| if i == 0 { format!("{f:<w$}") } else { format!("{f:>w$}") })
                .collect();
            out.push_str(parts.join("  ").trim_end());
            out.push('\n');
        };
        line(headers.to_vec());
        for row in &cells {
            line(row.iter().map(String::as_str).collect());
        }
        out
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "experiment,rounds,final_eval_loss,final_eval_accuracy,final_train_loss,cfmq_terabytes")?;
        for s in &self.rows {
            writeln!(
                out,
                "{},{},{:.16e},{:.16e},{:.16e},{:.16e}",
                s.name, s.rounds, s.final_eval_loss, s.final_eval_accuracy, s.final_train_loss, s.cfmq_terabytes
            )?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn write_summary_csv(table: &SummaryTable, path: impl AsRef<Path>) -> Result<()> {
    table.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
}

/// Reads metrics CSVs and summarizes each; experiments are named by file stem.
pub fn compare_experiments<P: AsRef<Path>>(paths: &[P]) -> Result<SummaryTable> {
    if paths.is_empty() {
        return Err(Error::InvalidArgument("compare needs at least one CSV".into()));
    }
    let mut rows = Vec::with_capacity(paths.len());
    for p in paths {
        let p = p.as_ref();
        let metrics = read_csv_file(p).map_err(|e| match e {
            Error::Parse { line, message } => Error::Parse {
                line,
                message: format!("{}: {message}", p.display()),
            },
            Error::Io(m) => Error::Io(format!("{}: {m}", p.display())),
            other => other,
        })?;
        let name = p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| p.display().to_string());
        rows.push(summarize(name, &metrics)?);
    }
    Ok(SummaryTable::new(rows))
}
