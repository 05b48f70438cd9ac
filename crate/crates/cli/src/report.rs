//! Tables and figures from metrics reports.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use sasreg::fsutil;
use sasreg::metrics::{Aggregate, FrameMetrics, MetricsReport, REPORT_SCHEMA_VERSION};
use sasreg::trainer::AblationReport;

use crate::exit::{fail, ExitClass};
use crate::figures::{box_plot, palette_hex, save_png, BoxStats};

/// Reads a report, rejecting other schema versions before parsing the rest.
pub fn read_report(path: &Path) -> Result<MetricsReport> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("{} is not JSON", path.display()))?;
    check_schema(&value, path)?;
    serde_json::from_value(value).with_context(|| format!("{} is not a metrics report", path.display()))
}

pub fn read_ablation(path: &Path) -> Result<AblationReport> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let report: AblationReport =
        serde_json::from_str(&text).with_context(|| format!("{} is not an ablation report", path.display()))?;
    for row in &report.rows {
        if row.report.schema_version != REPORT_SCHEMA_VERSION {
            return Err(schema_error(path, row.report.schema_version as u64));
        }
    }
    Ok(report)
}

fn schema_error(path: &Path, found: u64) -> anyhow::Error {
    fail(
        ExitClass::DataFormat,
        format!(
            "{} has schema_version {found}; this build reads version {REPORT_SCHEMA_VERSION}",
            path.display()
        ),
    )
}

fn check_schema(value: &serde_json::Value, path: &Path) -> Result<()> {
    match value.get("schema_version").and_then(|v| v.as_u64()) {
        Some(v) if v == REPORT_SCHEMA_VERSION as u64 => Ok(()),
        Some(v) => Err(schema_error(path, v)),
        None => Err(fail(
            ExitClass::DataFormat,
            format!("{} has no schema_version", path.display()),
        )),
    }
}

/// A reported metric: how to pull it from a frame and how to name its files.
pub struct Metric {
    pub key: &'static str,
    pub header: &'static str,
    pub value: fn(&FrameMetrics) -> Option<f64>,
}

pub const METRICS: [Metric; 4] = [
    Metric {
        key: "ssim",
        header: "SSIM",
        value: |m| Some(m.ssim),
    },
    Metric {
        key: "psnr",
        header: "PSNR (dB)",
        value: |m| {
            if m.psnr_infinite {
                Some(f64::INFINITY)
            } else {
                m.psnr_db
            }
        },
    },
    Metric {
        key: "ncc",
        header: "NCC",
        value: |m| m.ncc,
    },
    Metric {
        key: "vci",
        header: "VCI",
        value: |m| Some(m.vci_after),
    },
];

/// Mean ± std over finite values; exact predictions (infinite PSNR) are
/// counted separately.
fn cell(values: &[f64]) -> String {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let infinite = values.len() - finite.len();
    match (Aggregate::of(&finite), infinite) {
        (None, 0) => "n/a".to_string(),
        (None, _) => "inf".to_string(),
        (Some(a), 0) => format!("{:.3} ± {:.3}", a.mean, a.std),
        (Some(a), k) => format!("{:.3} ± {:.3} ({k} inf)", a.mean, a.std),
    }
}

/// One row per method, mean ± sample std of each metric.
pub fn comparison_table(reports: &[MetricsReport]) -> String {
    let mut out = String::from("| Method |");
    for m in &METRICS {
        out.push_str(&format!(" {} |", m.header));
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(METRICS.len()));
    out.push('\n');
    for r in reports {
        out.push_str(&format!("| {} |", r.method));
        for m in &METRICS {
            let values: Vec<f64> = r.per_frame.iter().filter_map(m.value).collect();
            out.push_str(&format!(" {} |", cell(&values)));
        }
        out.push('\n');
    }
    out
}

/// The unregistered input as a pseudo-method: the raw even half scored
/// against the odd half. PSNR is not recorded for it.
pub fn baseline_report(like: &MetricsReport) -> MetricsReport {
    let per_frame: Vec<FrameMetrics> = like
        .per_frame
        .iter()
        .map(|m| FrameMetrics {
            ssim: m.baseline_ssim,
            psnr_db: None,
            psnr_infinite: false,
            ncc: m.baseline_ncc,
            vci_after: m.vci_before,
            vci_after_raw: m.vci_before_raw,
            ..m.clone()
        })
        .collect();
    MetricsReport {
        method: "unregistered".to_string(),
        aggregate: sasreg::metrics::AggregateMetrics::from_frames(&per_frame),
        per_frame,
        interframe_ncc: None,
        ..like.clone()
    }
}

#[derive(Debug, Serialize)]
struct FigureIndex {
    methods: Vec<MethodEntry>,
    figures: Vec<FigureEntry>,
}

#[derive(Debug, Serialize)]
struct MethodEntry {
    name: String,
    colour: String,
}

#[derive(Debug, Serialize)]
struct FigureEntry {
    metric: String,
    file: PathBuf,
    boxes: Vec<Option<BoxStats>>,
}

/// Writes `table.md`, one `boxplot_<metric>.png` per metric and
/// `figures.json`, returning every path written.
pub fn write_report(out: &Path, reports: &[MetricsReport], ablation: Option<&AblationReport>) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let table = out.join("table.md");
    fsutil::write_atomic(&table, comparison_table(reports).as_bytes())
        .with_context(|| format!("writing {}", table.display()))?;
    written.push(table);
    if let Some(a) = ablation {
        let path = out.join("ablation.md");
        fsutil::write_atomic(&path, a.markdown_table().as_bytes())
            .with_context(|| format!("writing {}", path.display()))?;
        written.push(path);
    }

    let mut figures = Vec::with_capacity(METRICS.len());
    for m in &METRICS {
        let boxes: Vec<Option<BoxStats>> = reports
            .iter()
            .map(|r| BoxStats::of(&r.per_frame.iter().filter_map(m.value).collect::<Vec<_>>()))
            .collect();
        let file = out.join(format!("boxplot_{}.png", m.key));
        save_png(&file, &box_plot(&boxes))?;
        written.push(file.clone());
        figures.push(FigureEntry {
            metric: m.key.to_string(),
            file,
            boxes,
        });
    }
    let index = FigureIndex {
        methods: reports
            .iter()
            .enumerate()
            .map(|(i, r)| MethodEntry {
                name: r.method.clone(),
                colour: palette_hex(i),
            })
            .collect(),
        figures,
    };
    let path = out.join("figures.json");
    fsutil::write_json_atomic(&path, &index).with_context(|| format!("writing {}", path.display()))?;
    written.push(path);
    Ok(written)
}
