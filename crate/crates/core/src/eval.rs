//! Pose and box error metrics and range-binned summaries.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::camera::BoundingBox;
use crate::error::{Error, Result};
use crate::rotations::{angular_distance, UnitQuaternion};
use crate::scene::SceneRecord;

pub const DEFAULT_BIN_SIZE: usize = 100;

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let w = (a.right.min(b.right) - a.left.max(b.left)).max(0.0);
    let h = (a.bottom.min(b.bottom) - a.top.max(b.top)).max(0.0);
    let inter = w * h;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return if a == b { 1.0 } else { 0.0 };
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Component-wise absolute difference, meters.
pub fn translation_error(t: &Vector3<f64>, t_est: &Vector3<f64>) -> Vector3<f64> {
    (t - t_est).abs()
}

/// Rotation angle between two attitudes, radians.
pub fn attitude_error(q: &UnitQuaternion, q_est: &UnitQuaternion) -> f64 {
    angular_distance(q, q_est)
}

/// One estimated pose. Solver diagnostics are optional so that externally
/// produced predictions can be evaluated too.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub id: u64,
    pub q: UnitQuaternion,
    pub t: Vector3<f64>,
    pub bbox: BoundingBox,
    pub iterations: Option<usize>,
    pub residual: Option<f64>,
    pub converged: Option<bool>,
}

const PREDICTION_HEADER: [&str; 15] = [
    "id",
    "qw",
    "qx",
    "qy",
    "qz",
    "tx",
    "ty",
    "tz",
    "b1",
    "b2",
    "b3",
    "b4",
    "iterations",
    "residual_px",
    "converged",
];

pub fn predictions_to_csv(preds: &[Prediction]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(PREDICTION_HEADER)?;
    for p in preds {
        let mut row: Vec<String> = vec![p.id.to_string()];
        row.extend(p.q.to_array().iter().map(|c| format!("{c:.16e}")));
        row.extend(p.t.iter().map(|c| format!("{c:.16e}")));
        row.extend(p.bbox.edges().iter().map(|c| format!("{c:.16e}")));
        row.push(p.iterations.map(|i| i.to_string()).unwrap_or_default());
        row.push(p.residual.map(|r| format!("{r:.16e}")).unwrap_or_default());
        row.push(
            p.converged
                .map(|c| (c as u8).to_string())
                .unwrap_or_default(),
        );
        w.write_record(row)?;
    }
    into_string(w)
}

fn into_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::io("buffering csv", e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::invalid(e.to_string()))
}

/// Needs the first twelve columns (`id`, quaternion, translation, box);
/// the solver columns may be absent or empty.
pub fn read_predictions(text: &str, path: &Path) -> Result<Vec<Prediction>> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    if header.len() < 12
        || header
            .iter()
            .take(12)
            .ne(PREDICTION_HEADER[..12].iter().copied())
    {
        return Err(Error::parse(
            path,
            1,
            "predictions need columns id,qw,qx,qy,qz,tx,ty,tz,b1,b2,b3,b4",
        ));
    }
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let bad = |msg: String| Error::parse(path, line, msg);
        if row.len() < 12 {
            return Err(bad(format!(
                "expected at least 12 fields, got {}",
                row.len()
            )));
        }
        let num = |k: usize| -> Result<f64> {
            row[k]
                .parse::<f64>()
                .map_err(|_| bad(format!("bad number in column `{}`", PREDICTION_HEADER[k])))
        };
        let opt = |k: usize| row.get(k).filter(|s| !s.is_empty());
        let id = row[0].parse::<u64>().map_err(|_| bad("bad id".into()))?;
        out.push(Prediction {
            id,
            q: UnitQuaternion::from_unit_array([num(1)?, num(2)?, num(3)?, num(4)?])
                .map_err(|e| bad(e.to_string()))?,
            t: Vector3::new(num(5)?, num(6)?, num(7)?),
            bbox: BoundingBox::new(num(8)?, num(9)?, num(10)?, num(11)?)
                .map_err(|e| bad(e.to_string()))?,
            iterations: opt(12)
                .map(|s| s.parse().map_err(|_| bad("bad iterations".into())))
                .transpose()?,
            residual: opt(13)
                .map(|s| s.parse().map_err(|_| bad("bad residual".into())))
                .transpose()?,
            converged: opt(14)
                .map(|s| match s {
                    "1" => Ok(true),
                    "0" => Ok(false),
                    _ => Err(bad("converged must be 0 or 1".into())),
                })
                .transpose()?,
        });
    }
    Ok(out)
}

pub fn load_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    read_predictions(&text, path)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRecord {
    pub id: u64,
    pub iou: f64,
    /// Meters, component-wise absolute.
    pub e_t: Vector3<f64>,
    /// Radians.
    pub e_r: f64,
    pub range: f64,
}

pub fn evaluate_one(truth: &SceneRecord, pred: &Prediction) -> EvalRecord {
    EvalRecord {
        id: truth.id,
        iou: iou(&truth.bbox, &pred.bbox),
        e_t: translation_error(&truth.pose.t, &pred.t),
        e_r: attitude_error(&truth.pose.q, &pred.q),
        range: truth.range,
    }
}

/// Pairs truth and predictions by id; both sides must cover the same ids.
/// Output follows truth order.
pub fn evaluate(truth: &[SceneRecord], preds: &[Prediction]) -> Result<Vec<EvalRecord>> {
    let mut by_id: HashMap<u64, &Prediction> = HashMap::with_capacity(preds.len());
    for p in preds {
        if by_id.insert(p.id, p).is_some() {
            return Err(Error::invalid(format!(
                "duplicate prediction for id {}",
                p.id
            )));
        }
    }
    if let Some(r) = truth.iter().find(|r| !by_id.contains_key(&r.id)) {
        return Err(Error::invalid(format!("id {} has no prediction", r.id)));
    }
    if preds.len() != truth.len() {
        let known: std::collections::HashSet<u64> = truth.iter().map(|r| r.id).collect();
        if let Some(p) = preds.iter().find(|p| !known.contains(&p.id)) {
            return Err(Error::invalid(format!(
                "prediction id {} is not in the truth set",
                p.id
            )));
        }
    }
    Ok(truth
        .par_iter()
        .map(|r| evaluate_one(r, by_id[&r.id]))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub p25: f64,
    pub p75: f64,
}

/// Linear interpolation between order statistics at rank `(n - 1) p`.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let rank = (n - 1) as f64 * p;
    let lo = rank.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (rank - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::invalid("cannot summarize an empty set"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    // shifted by the minimum so a constant column averages to itself exactly
    let base = sorted[0];
    Ok(Summary {
        mean: base + sorted.iter().map(|x| x - base).sum::<f64>() / values.len() as f64,
        median: percentile(&sorted, 0.5),
        p25: percentile(&sorted, 0.25),
        p75: percentile(&sorted, 0.75),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bin {
    pub index: usize,
    pub mean_range: f64,
    pub iou: Summary,
    pub et_x: Summary,
    pub et_y: Summary,
    pub et_z: Summary,
    /// Degrees.
    pub er_deg: Summary,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinnedReport {
    pub bin_size: usize,
    pub bins: Vec<Bin>,
}

/// Sorts by range (ties by id) and summarizes consecutive chunks of
/// `bin_size`; the last bin may be short.
pub fn binned_report(records: &[EvalRecord], bin_size: usize) -> Result<BinnedReport> {
    if records.is_empty() {
        return Err(Error::invalid("no records to report"));
    }
    if bin_size == 0 {
        return Err(Error::invalid("bin size must be at least 1"));
    }
    let mut sorted = records.to_vec();
    sorted.sort_by(|a, b| a.range.total_cmp(&b.range).then(a.id.cmp(&b.id)));
    let bins = sorted
        .chunks(bin_size)
        .enumerate()
        .map(|(index, chunk)| {
            let col =
                |f: fn(&EvalRecord) -> f64| summarize(&chunk.iter().map(f).collect::<Vec<_>>());
            Ok(Bin {
                index,
                mean_range: chunk.iter().map(|r| r.range).sum::<f64>() / chunk.len() as f64,
                iou: col(|r| r.iou)?,
                et_x: col(|r| r.e_t.x)?,
                et_y: col(|r| r.e_t.y)?,
                et_z: col(|r| r.e_t.z)?,
                er_deg: col(|r| r.e_r.to_degrees())?,
                count: chunk.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BinnedReport { bin_size, bins })
}

pub fn records_to_csv(records: &[EvalRecord]) -> String {
    let mut out = String::from("id,range_m,iou,et_x_m,et_y_m,et_z_m,er_deg\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.id,
            r.range,
            r.iou,
            r.e_t.x,
            r.e_t.y,
            r.e_t.z,
            r.e_r.to_degrees()
        );
    }
    out
}

pub fn report_to_csv(report: &BinnedReport) -> String {
    let mut out = String::from("bin_index,mean_range_m");
    for metric in ["iou", "et_x", "et_y", "et_z", "er_deg"] {
        for stat in ["mean", "median", "p25", "p75"] {
            let _ = write!(out, ",{metric}_{stat}");
        }
    }
    out.push_str(",count\n");
    for b in &report.bins {
        let _ = write!(out, "{},{}", b.index, b.mean_range);
        for s in [b.iou, b.et_x, b.et_y, b.et_z, b.er_deg] {
            let _ = write!(out, ",{},{},{},{}", s.mean, s.median, s.p25, s.p75);
        }
        let _ = writeln!(out, ",{}", b.count);
    }
    out
}
