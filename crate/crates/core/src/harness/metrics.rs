//! Metrics CSV: one row per evaluation point.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const CSV_HEADER: &str =
    "round,train_loss,eval_loss,eval_accuracy,cfmq_terabytes,fvn_std,lr_server,clients_selected";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub round: u64,
    pub train_loss: f64,
    pub eval_loss: f64,
    /// NaN for regression models.
    pub eval_accuracy: f64,
    pub cfmq_terabytes: f64,
    pub fvn_std: f64,
    pub lr_server: f64,
    pub clients_selected: usize,
}

/// Writes the header and rows with reals at 17 significant digits.
pub fn write_csv<W: Write>(rows: &[MetricsRow], mut out: W) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
            r.round,
            r.train_loss,
            r.eval_loss,
            r.eval_accuracy,
            r.cfmq_terabytes,
            r.fvn_std,
            r.lr_server,
            r.clients_selected
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn emit_csv(rows: &[MetricsRow], path: impl AsRef<Path>) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no metrics rows to write".into()));
    }
    write_csv(rows, BufWriter::new(File::create(path)?))
}

pub fn read_csv<R: BufRead>(input: R) -> Result<Vec<MetricsRow>> {
    let mut lines = input.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim_end_matches('\r') != CSV_HEADER {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header {CSV_HEADER:?}"),
        });
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let lineno = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse { line: lineno, message };
        let fields: Vec<&str> = line.trim_end_matches('\r').split(',').collect();
        if fields.len() != 8 {
            return Err(err(format!("expected 8 fields, found {}", fields.len())));
        }
        let real = |j: usize| {
            fields[j]
                .parse::<f64>()
                .map_err(|e| err(format!("field {j} ({:?}): {e}", fields[j])))
        };
        let row = MetricsRow {
            round: fields[0].parse().map_err(|e| err(format!("round: {e}")))?,
            train_loss: real(1)?,
            eval_loss: real(2)?,
            eval_accuracy: real(3)?,
            cfmq_terabytes: real(4)?,
            fvn_std: real(5)?,
            lr_server: real(6)?,
            clients_selected: fields[7].parse().map_err(|e| err(format!("clients_selected: {e}")))?,
        };
        if let Some(prev) = rows.last().map(|r: &MetricsRow| r.round) {
            if row.round <= prev {
                return Err(err(format!("round {} does not increase", row.round)));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "no data rows".into(),
        });
    }
    Ok(rows)
}

pub fn read_csv_file(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>> {
    read_csv(BufReader::new(File::open(path)?))
}
