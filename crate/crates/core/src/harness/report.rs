//! Report files: full-precision JSON, fixed-precision CSV and Markdown, and
//! reliability-diagram data.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::bench::{Aggregate, BenchmarkReport, Cell};
use crate::harness::config::MethodId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReportFormats {
    pub json: bool,
    pub csv: bool,
    pub markdown: bool,
}

impl ReportFormats {
    pub const ALL: ReportFormats = ReportFormats {
        json: true,
        csv: true,
        markdown: true,
    };
}

impl Default for ReportFormats {
    fn default() -> Self {
        Self::ALL
    }
}

/// Pretty JSON with a trailing newline.
pub fn to_json_string(value: &impl Serialize) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    std::fs::write(path, to_json_string(value)?).map_err(|e| Error::io(path, e))
}

fn pct(v: f64) -> String {
    format!("{:.4}", 100.0 * v)
}

fn fixed3(v: f64) -> String {
    format!("{v:.3}")
}

fn opt3(v: Option<f64>) -> String {
    v.map(fixed3).unwrap_or_else(|| "-".into())
}

/// One row per cell; ECE columns in percent.
pub fn cells_csv(cells: &[Cell]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Input(format!("csv: {e}"));
    w.write_record([
        "method",
        "seed",
        "oracle",
        "T",
        "ece_true",
        "aece_true",
        "cwece_true",
        "ece_voted",
        "brier_soft",
        "nll_soft",
        "error",
    ])
    .map_err(io)?;
    for c in cells {
        let mut row = vec![
            c.method.to_string(),
            c.seed.to_string(),
            c.oracle.to_string(),
            opt3(c.temperature()),
        ];
        match &c.metrics {
            Some(m) => row.extend([
                pct(m.ece_true),
                pct(m.aece_true),
                pct(m.cwece_true),
                pct(m.ece_voted),
                fixed3(m.brier_soft),
                fixed3(m.nll_soft),
                String::new(),
            ]),
            None => {
                row.extend(std::iter::repeat_n(String::new(), 6));
                row.push(
                    c.error
                        .as_ref()
                        .map(|e| format!("{}: {}", e.kind, e.message))
                        .unwrap_or_default(),
                );
            }
        }
        w.write_record(&row).map_err(io)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Input(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn mean_pm(mean: f64, std: f64, n: usize, fmt: fn(f64) -> String) -> String {
    if n > 1 {
        format!("{} ± {}", fmt(mean), fmt(std))
    } else {
        fmt(mean)
    }
}

/// Markdown table with one row per method; ECE columns in percent.
pub fn aggregates_markdown(aggregates: &[Aggregate]) -> String {
    let mut out = String::from("| Method | T | ECE | aECE | cwECE | ECE_voted | Br | NLL |\n");
    out.push_str("|---|---|---|---|---|---|---|---|\n");
    for a in aggregates {
        let name = if a.oracle {
            format!("{} (oracle)", a.method)
        } else {
            a.method.to_string()
        };
        let (Some(m), Some(s)) = (&a.mean, &a.std) else {
            let _ = writeln!(
                out,
                "| {name} | failed ({} errors) | | | | | | |",
                a.n_error
            );
            continue;
        };
        let n = a.n_ok;
        let t = match (m.t, s.t) {
            (Some(mt), Some(st)) => mean_pm(mt, st, n, fixed3),
            _ => "-".into(),
        };
        let _ = writeln!(
            out,
            "| {name} | {t} | {} | {} | {} | {} | {} | {} |",
            mean_pm(m.ece_true, s.ece_true, n, pct),
            mean_pm(m.aece_true, s.aece_true, n, pct),
            mean_pm(m.cwece_true, s.cwece_true, n, pct),
            mean_pm(m.ece_voted, s.ece_voted, n, pct),
            mean_pm(m.brier_soft, s.brier_soft, n, fixed3),
            mean_pm(m.nll_soft, s.nll_soft, n, fixed3),
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReliabilityBin {
    pub count: usize,
    pub conf: f64,
    pub acc: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReliabilityCurve {
    pub method: MethodId,
    pub seed: u64,
    pub edges: Vec<f64>,
    pub bins: Vec<ReliabilityBin>,
}

/// True-label reliability data of every successful cell.
pub fn reliability_curves(cells: &[Cell]) -> Vec<ReliabilityCurve> {
    cells
        .iter()
        .filter_map(|c| {
            let r = &c.metrics.as_ref()?.reliability;
            Some(ReliabilityCurve {
                method: c.method,
                seed: c.seed,
                edges: r.edges.clone(),
                bins: r
                    .bins
                    .iter()
                    .map(|b| ReliabilityBin {
                        count: b.count,
                        conf: b.mean_confidence,
                        acc: b.mean_accuracy,
                        gap: b.gap,
                    })
                    .collect(),
            })
        })
        .collect()
}

/// Writes `report.{json,csv,md}` and `reliability.json` into `out_dir`.
pub fn emit_report(
    report: &BenchmarkReport,
    formats: ReportFormats,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    let mut put = |name: &str, text: String| -> Result<()> {
        let path = out_dir.join(name);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        written.push(path);
        Ok(())
    };
    if formats.json {
        put("report.json", to_json_string(report)?)?;
        put(
            "reliability.json",
            to_json_string(&reliability_curves(&report.cells))?,
        )?;
    }
    if formats.csv {
        put("report.csv", cells_csv(&report.cells)?)?;
    }
    if formats.markdown {
        put("report.md", aggregates_markdown(&report.aggregates))?;
    }
    Ok(written)
}
