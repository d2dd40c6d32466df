//! Artifact renderers: metric reports, sweep tables, tuning traces, and
//! ablations as CSV, JSON, or markdown. Column order is fixed, floats render
//! in shortest round-trip form (CSV/JSON) or fixed precision (markdown), and
//! every format embeds the manifest hash of the run that produced it.

use std::path::Path;

use genbias::metrics::BiasReport;
use genbias::mitigation::SweepOutcome;
use genbias::tuning::{AblationRow, LossBreakdown};
use serde::Serialize;
use serde_json::Value;

use crate::errors::{io_error, AppError};
use crate::manifest::tool_stamp;

fn csv_error(e: csv::Error) -> AppError {
    AppError::internal(format!("csv rendering: {e}"))
}

fn finish_csv(writer: csv::Writer<Vec<u8>>, manifest_hash: &str) -> Result<Vec<u8>, AppError> {
    let table = writer
        .into_inner()
        .map_err(|e| AppError::internal(format!("csv rendering: {e}")))?;
    let mut out = format!("# manifest: {manifest_hash}\n").into_bytes();
    out.extend_from_slice(&table);
    Ok(out)
}

/// Metric reports as CSV: a manifest comment, a header, one row per report.
pub fn reports_csv(reports: &[BiasReport], manifest_hash: &str) -> Result<Vec<u8>, AppError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for report in reports {
        w.serialize(report).map_err(csv_error)?;
    }
    finish_csv(w, manifest_hash)
}

/// Metric reports as a pretty-printed JSON object with a `reports` array.
pub fn reports_json(reports: &[BiasReport], manifest_hash: &str) -> Result<String, AppError> {
    let value = serde_json::to_value(reports)
        .map_err(|e| AppError::internal(format!("report serialization: {e}")))?;
    wrap_json("reports", value, manifest_hash)
}

fn wrap_json(key: &str, value: Value, manifest_hash: &str) -> Result<String, AppError> {
    let mut object = serde_json::Map::new();
    object.insert("_manifest".to_string(), Value::String(manifest_hash.to_string()));
    object.insert("_tool".to_string(), Value::String(tool_stamp()));
    object.insert(key.to_string(), value);
    let mut body = serde_json::to_string_pretty(&Value::Object(object))
        .map_err(|e| AppError::internal(format!("artifact serialization: {e}")))?;
    body.push('\n');
    Ok(body)
}

/// Appends the manifest footer every markdown artifact carries.
pub fn finish_md(body: &str, manifest_hash: &str) -> String {
    format!("{body}\n---\nmanifest: `{manifest_hash}`\n")
}

/// One-line human summary of a report for terminal output.
pub fn report_summary(r: &BiasReport) -> String {
    format!(
        "{}: gas={} gas_f={} gas_m={} delta={} gld={} add_log={}",
        r.method,
        fmt4(r.gas),
        fmt4(r.gas_f),
        fmt4(r.gas_m),
        fmt4(r.delta),
        fmt4(r.gld),
        fmt_log(r.add_log),
    )
}

fn fmt4(v: f64) -> String {
    format!("{v:.4}")
}

fn fmt_sci(v: f64) -> String {
    format!("{v:.6e}")
}

fn fmt_log(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.4}")
    } else {
        "-inf".to_string()
    }
}

fn bold_if(text: String, yes: bool) -> String {
    if yes {
        format!("**{text}**")
    } else {
        text
    }
}

/// Metric reports as markdown, grouped by probe set. Within each group the
/// best (lowest) GAS, GLD, and log10(ADD) are bolded. The caller appends the
/// manifest footer via [`finish_md`].
pub fn reports_md(reports: &[BiasReport]) -> String {
    let mut sets: Vec<&str> = Vec::new();
    for r in reports {
        if !sets.contains(&r.set_name.as_str()) {
            sets.push(&r.set_name);
        }
    }

    let mut out = String::from("# Bias reports\n");
    for set in sets {
        let rows: Vec<&BiasReport> = reports.iter().filter(|r| r.set_name == set).collect();
        let min_gas = rows.iter().map(|r| r.gas).fold(f64::INFINITY, f64::min);
        let min_gld = rows.iter().map(|r| r.gld).fold(f64::INFINITY, f64::min);
        let min_log = rows.iter().map(|r| r.add_log).fold(f64::INFINITY, f64::min);

        out.push_str(&format!("\n## {set}\n\n"));
        out.push_str("| method | backend | n | GAS | GAS(F) | GAS(M) | delta | GLD | ADD | log10(ADD) |\n");
        out.push_str("|---|---|--:|--:|--:|--:|--:|--:|--:|--:|\n");
        for r in rows {
            out.push_str(&format!(
                "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |\n",
                r.method,
                r.backend,
                r.n,
                bold_if(fmt4(r.gas), r.gas == min_gas),
                fmt4(r.gas_f),
                fmt4(r.gas_m),
                fmt4(r.delta),
                bold_if(fmt4(r.gld), r.gld == min_gld),
                fmt_sci(r.add_raw),
                bold_if(fmt_log(r.add_log), r.add_log == min_log),
            ));
        }
    }
    out
}

/// One sweep cell flattened for CSV; metric columns are empty when the cell
/// failed, and `error` says why.
#[derive(Debug, Serialize)]
struct SweepCsvRow<'a> {
    label: &'a str,
    temperature: f64,
    top_p: f64,
    top_k: u32,
    seed: u64,
    n: Option<usize>,
    gas: Option<f64>,
    gas_f: Option<f64>,
    gas_m: Option<f64>,
    delta: Option<f64>,
    gld: Option<f64>,
    add_raw: Option<f64>,
    add_log: Option<f64>,
    selected: bool,
    error: &'a str,
}

/// A sweep outcome as CSV, one row per grid cell in grid order.
pub fn sweep_csv(outcome: &SweepOutcome, manifest_hash: &str) -> Result<Vec<u8>, AppError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for (i, entry) in outcome.entries.iter().enumerate() {
        let r = entry.report.as_ref();
        let row = SweepCsvRow {
            label: &entry.label,
            temperature: entry.decode.temperature,
            top_p: entry.decode.top_p,
            top_k: entry.decode.top_k,
            seed: entry.decode.seed,
            n: r.map(|r| r.n),
            gas: r.map(|r| r.gas),
            gas_f: r.map(|r| r.gas_f),
            gas_m: r.map(|r| r.gas_m),
            delta: r.map(|r| r.delta),
            gld: r.map(|r| r.gld),
            add_raw: r.map(|r| r.add_raw),
            add_log: r.map(|r| r.add_log).filter(|v| v.is_finite()),
            selected: i == outcome.best,
            error: entry.error.as_deref().unwrap_or(""),
        };
        w.serialize(row).map_err(csv_error)?;
    }
    finish_csv(w, manifest_hash)
}

/// The full sweep outcome as JSON (entries, best index, selection rule).
pub fn sweep_json(outcome: &SweepOutcome, manifest_hash: &str) -> Result<String, AppError> {
    let value = serde_json::to_value(outcome)
        .map_err(|e| AppError::internal(format!("sweep serialization: {e}")))?;
    wrap_json("sweep", value, manifest_hash)
}

#[derive(Debug, Serialize)]
struct TraceCsvRow {
    step: usize,
    l_d: f64,
    l_g: f64,
    l_l: f64,
    total: f64,
}

/// A tuning loss trace as CSV, steps numbered from 1.
pub fn trace_csv(trace: &[LossBreakdown], manifest_hash: &str) -> Result<Vec<u8>, AppError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for (i, b) in trace.iter().enumerate() {
        w.serialize(TraceCsvRow { step: i + 1, l_d: b.l_d, l_g: b.l_g, l_l: b.l_l, total: b.total })
            .map_err(csv_error)?;
    }
    finish_csv(w, manifest_hash)
}

/// Ablation rows as JSON.
pub fn ablation_json(rows: &[AblationRow], manifest_hash: &str) -> Result<String, AppError> {
    let value = serde_json::to_value(rows)
        .map_err(|e| AppError::internal(format!("ablation serialization: {e}")))?;
    wrap_json("rows", value, manifest_hash)
}

/// Ablation rows as a markdown table with the loss subset up front; best
/// (lowest) GAS, GLD, and log10(ADD) are bolded.
pub fn ablation_md(rows: &[AblationRow]) -> String {
    let min_gas = rows.iter().map(|r| r.report.gas).fold(f64::INFINITY, f64::min);
    let min_gld = rows.iter().map(|r| r.report.gld).fold(f64::INFINITY, f64::min);
    let min_log = rows.iter().map(|r| r.report.add_log).fold(f64::INFINITY, f64::min);

    let mut out = String::from("# Loss ablation\n\n");
    out.push_str("| losses | n | GAS | GAS(F) | GAS(M) | delta | GLD | ADD | log10(ADD) |\n");
    out.push_str("|---|--:|--:|--:|--:|--:|--:|--:|--:|\n");
    for row in rows {
        let r = &row.report;
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} |\n",
            row.label,
            r.n,
            bold_if(fmt4(r.gas), r.gas == min_gas),
            fmt4(r.gas_f),
            fmt4(r.gas_m),
            fmt4(r.delta),
            bold_if(fmt4(r.gld), r.gld == min_gld),
            fmt_sci(r.add_raw),
            bold_if(fmt_log(r.add_log), r.add_log == min_log),
        ));
    }
    out
}

/// Reads reports back from a JSON artifact: accepts the `reports` wrapper,
/// the ablation `rows` wrapper, or a bare array.
pub fn parse_reports_json(path: &Path) -> Result<Vec<BiasReport>, AppError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let value: Value =
        serde_json::from_str(&text).map_err(|e| AppError::data(format!("{}: {e}", path.display())))?;
    let bad = |what: &str| AppError::data(format!("{}: {what}", path.display()));

    let reports = if let Some(arr) = value.get("reports").and_then(Value::as_array) {
        arr.clone()
    } else if let Some(arr) = value.get("rows").and_then(Value::as_array) {
        let rows: Vec<AblationRow> = serde_json::from_value(Value::Array(arr.clone()))
            .map_err(|e| bad(&format!("bad ablation rows: {e}")))?;
        return Ok(rows.into_iter().map(|r| r.report).collect());
    } else if let Some(arr) = value.as_array() {
        arr.clone()
    } else {
        return Err(bad("expected a reports array or a wrapper object holding one"));
    };
    serde_json::from_value(Value::Array(reports))
        .map_err(|e| bad(&format!("bad report values: {e}")))
}
