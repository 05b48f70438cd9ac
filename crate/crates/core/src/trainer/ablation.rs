use serde::{Deserialize, Serialize};

use super::{train, AblationFlags, TrainConfig, TrainData, TrainError};
use crate::metrics::{evaluate_dataset, Aggregate, MetricsReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub flags: AblationFlags,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub epochs: usize,
    pub seed: u64,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, name: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Mean test NCC of a configuration.
    pub fn ncc(&self, name: &str) -> Option<f64> {
        self.row(name)?.report.aggregate.ncc.map(|a| a.mean)
    }

    /// One row per configuration: NCC and SSIM as mean ± std.
    pub fn markdown_table(&self) -> String {
        let cell = |a: Option<Aggregate>| match a {
            Some(a) => format!("{:.3} ± {:.3}", a.mean, a.std),
            None => "n/a".to_string(),
        };
        let mut out = String::from("| Configuration | NCC | SSIM |\n|---|---|---|\n");
        for r in &self.rows {
            let agg = &r.report.aggregate;
            out.push_str(&format!("| {} | {} | {} |\n", r.name, cell(agg.ncc), cell(agg.ssim)));
        }
        out
    }
}

/// Trains each variant from the same seed and budget in
/// `out_dir/<label>` and evaluates it on the test split.
pub fn run_ablation_suite(
    base: &TrainConfig,
    data: &TrainData,
    variants: &[AblationFlags],
) -> Result<AblationReport, TrainError> {
    let mut rows = Vec::with_capacity(variants.len());
    for flags in variants {
        let name = flags.label();
        let mut cfg = base.clone();
        cfg.ablation = *flags;
        cfg.run.out_dir = base.run.out_dir.join(&name);
        log::info!("ablation {name}: training {} epochs", cfg.optim.epochs);
        let out = train(&cfg, data)?;
        let report = evaluate_dataset(&name, &data.test, &out.state.net)?;
        rows.push(AblationRow {
            name,
            flags: *flags,
            report,
        });
    }
    Ok(AblationReport {
        epochs: base.optim.epochs,
        seed: base.run.seed,
        rows,
    })
}
