use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::Serialize;

use super::{BenchResults, CellRecord, ScoredRow, Summary, Unusable, REFERENCE_DESCRIPTION};
use crate::bench::spec::BenchSpec;
use crate::error::{Error, Result};

pub const RESULTS_VERSION: u64 = 1;
pub const TRACE_COLUMNS: [&str; 7] = ["iter", "cost", "gap", "violation", "messages", "mac_ops", "saturations"];

/// A `# version: N` comment line, then the fixed header and one row per record.
pub fn write_trace_csv<W: Write>(mut out: W, rows: &[ScoredRow]) -> Result<()> {
    writeln!(out, "# version: {RESULTS_VERSION}").map_err(|e| Error::io("<trace>", e))?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_COLUMNS)?;
    for r in rows {
        w.write_record(&[
            r.iter.to_string(),
            r.cost.to_string(),
            r.gap.to_string(),
            r.violation.to_string(),
            r.messages.to_string(),
            r.mac_ops.to_string(),
            r.saturations.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<trace>", e))?;
    Ok(())
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<ScoredRow>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut first = String::new();
    reader.read_line(&mut first).map_err(|e| Error::io(path, e))?;
    let version = first
        .trim()
        .strip_prefix("# version:")
        .and_then(|v| v.trim().parse::<u64>().ok())
        .ok_or_else(|| Error::Parse {
            context: path.display().to_string(),
            line: 1,
            column: 1,
            message: "missing `# version:` line".into(),
        })?;
    if version != RESULTS_VERSION {
        return Err(Error::SchemaVersion {
            found: version,
            expected: RESULTS_VERSION,
        });
    }
    let mut csv = csv::Reader::from_reader(reader);
    let mut rows = Vec::new();
    for rec in csv.records() {
        let rec = rec?;
        let field = |i: usize| -> Result<&str> {
            rec.get(i).ok_or_else(|| Error::Parse {
                context: path.display().to_string(),
                line: rec.position().map(|p| p.line() as usize + 1).unwrap_or(0),
                column: i + 1,
                message: format!("missing column {}", TRACE_COLUMNS[i]),
            })
        };
        let num_err = |i: usize| Error::Parse {
            context: path.display().to_string(),
            line: rec.position().map(|p| p.line() as usize + 1).unwrap_or(0),
            column: i + 1,
            message: format!("bad number in column {}", TRACE_COLUMNS[i]),
        };
        let f = |i: usize| -> Result<f64> { field(i)?.parse().map_err(|_| num_err(i)) };
        let u = |i: usize| -> Result<u64> { field(i)?.parse().map_err(|_| num_err(i)) };
        rows.push(ScoredRow {
            iter: u(0)? as usize,
            cost: f(1)?,
            gap: f(2)?,
            violation: f(3)?,
            messages: u(4)?,
            mac_ops: u(5)?,
            saturations: u(6)?,
        });
    }
    Ok(rows)
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    version: u64,
    reference: &'static str,
    spec: &'a BenchSpec,
    records: &'a [CellRecord],
    unusable: &'a [Unusable],
    summary: &'a Summary,
}

/// Writes every trace CSV and `summary.json` into `dir` (created if needed).
pub fn write_results(results: &BenchResults, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (rec, rows) in results.records.iter().zip(&results.traces) {
        let path = dir.join(&rec.trace_file);
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        write_trace_csv(std::io::BufWriter::new(file), rows)?;
    }
    let summary = SummaryFile {
        version: RESULTS_VERSION,
        reference: REFERENCE_DESCRIPTION,
        spec: &results.spec,
        records: &results.records,
        unusable: &results.unusable,
        summary: &results.summary,
    };
    let path = dir.join("summary.json");
    let text = serde_json::to_string_pretty(&summary)?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}
