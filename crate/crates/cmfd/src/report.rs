//! Detection sidecars and evaluation reports.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use cmfd_core::eval::{DatasetReport, MetricsRow};
use cmfd_core::pipeline::{Detection, Stage};
use serde::Serialize;

use crate::error::{io_err, Error, Result};

/// One line of a detection sidecar.
#[derive(Clone, Debug, Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum SidecarRecord {
    Summary {
        image: String,
        forged: bool,
        width: usize,
        height: usize,
        regions: usize,
        detected_keypoints: usize,
        distributed_keypoints: usize,
        descriptors: usize,
        correspondences: usize,
        proposed_pairs: usize,
        verified_pairs: usize,
        tampered_pixels: usize,
        timings_ms: BTreeMap<String, f64>,
    },
    /// A proposed pair that RANSAC fitted; `transform` is row-major 2×3.
    Pair { label_i: u32, label_j: u32, matches: usize, inliers: usize, verified: bool, transform: [f64; 6] },
    Error { image: String, error: String },
}

pub fn detection_records(image: &str, d: &Detection, timings: &[(Stage, std::time::Duration)]) -> Vec<SidecarRecord> {
    let summary = SidecarRecord::Summary {
        image: image.to_string(),
        forged: d.is_forged(),
        width: d.tamper_map.width,
        height: d.tamper_map.height,
        regions: d.labels.n_labels,
        detected_keypoints: d.detected_keypoints,
        distributed_keypoints: d.distributed_keypoints,
        descriptors: d.descriptors,
        correspondences: d.correspondences,
        proposed_pairs: d.pairs.len(),
        verified_pairs: d.verified_pairs().count(),
        tampered_pixels: d.tamper_map.count(),
        timings_ms: timings.iter().map(|(s, t)| (s.name().to_string(), t.as_secs_f64() * 1e3)).collect(),
    };
    let pairs = d.pairs.iter().filter_map(|p| {
        p.transform.map(|t| SidecarRecord::Pair {
            label_i: p.label_i,
            label_j: p.label_j,
            matches: p.correspondences.len(),
            inliers: p.inliers,
            verified: p.verified,
            transform: t.to_array(),
        })
    });
    std::iter::once(summary).chain(pairs).collect()
}

pub fn write_jsonl(path: impl AsRef<Path>, records: &[SidecarRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::Format(e.to_string()))?;
        out.push(b'\n');
    }
    std::fs::write(path, out).map_err(io_err(path))
}

/// Per-image rows `path, precision, recall, f1, verdict`, then a summary
/// row with the dataset averages and image-level rates.
pub fn write_evaluation_csv(
    out: impl Write,
    names: &[String],
    rows: &[MetricsRow],
    verdicts: &[bool],
    report: &DatasetReport,
) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Format(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["path", "precision", "recall", "f1", "verdict"]).map_err(csv_err)?;
    for ((name, r), &v) in names.iter().zip(rows).zip(verdicts) {
        let verdict = if v { "forged" } else { "original" };
        w.write_record([name.as_str(), &fmt(r.precision), &fmt(r.recall), &fmt(r.f1), verdict]).map_err(csv_err)?;
    }
    let summary = format!(
        "summary tp={} fp={} tn={} fn={} tpr={} fpr={} f1_above_half={}",
        report.tp,
        report.fp,
        report.tn,
        report.fn_,
        fmt(report.tpr),
        fmt(report.fpr),
        report.f1_above_half
    );
    w.write_record(["mean", &fmt(report.mean_precision), &fmt(report.mean_recall), &fmt(report.mean_f1), &summary])
        .map_err(csv_err)?;
    w.flush().map_err(|e| Error::Format(e.to_string()))?;
    Ok(())
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}
