use privi_core::metrics::{Aggregates, MetricReport};
use serde::{Deserialize, Serialize};

use super::jsonl::to_jsonl;

/// One record of a report file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum ReportLine {
    Class { class: String, value: Option<f64>, support: usize, excluded: bool },
    Aggregate { n_samples: usize, #[serde(flatten)] aggregates: Aggregates },
}

/// Per-class lines followed by one aggregate line.
pub fn report_jsonl(report: &MetricReport) -> Vec<u8> {
    let mut lines: Vec<ReportLine> = report
        .per_class
        .iter()
        .map(|c| ReportLine::Class { class: c.class.clone(), value: c.value, support: c.support, excluded: c.excluded })
        .collect();
    lines.push(ReportLine::Aggregate { n_samples: report.n_samples, aggregates: report.aggregates });
    to_jsonl(&lines)
}

/// A point of a label-efficiency curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub fraction: f64,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

pub fn plot_csv(points: &[CurvePoint]) -> Vec<u8> {
    let mut out = String::from("fraction,mean,ci_low,ci_high\n");
    for p in points {
        out.push_str(&format!("{},{:.6},{:.6},{:.6}\n", p.fraction, p.mean, p.ci_low, p.ci_high));
    }
    out.into_bytes()
}
