//! Per-sample and aggregated pose metrics for any set of camera-frame
//! predictions, with an optional ambiguous/plain breakdown.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{depth_error, mpjpe, pa_mpjpe, scale_by_bone_length, Shape3D, SkeletonTopology};
use crate::student::ROOT_JOINT;
use crate::synth::{Dataset, Skeleton};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub id: String,
    pub group: String,
    pub mpjpe: f64,
    pub pa_mpjpe: f64,
    pub depth_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub samples: usize,
    pub mpjpe: f64,
    pub pa_mpjpe: f64,
    pub depth_error: f64,
}

impl MetricSummary {
    fn mean(rows: &[&SampleMetrics]) -> Self {
        let n = rows.len() as f64;
        MetricSummary {
            samples: rows.len(),
            mpjpe: rows.iter().map(|r| r.mpjpe).sum::<f64>() / n,
            pa_mpjpe: rows.iter().map(|r| r.pa_mpjpe).sum::<f64>() / n,
            depth_error: rows.iter().map(|r| r.depth_error).sum::<f64>() / n,
        }
    }
}

/// Metrics of one predictor over a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub name: String,
    /// Whether every prediction was depth-reflected before scoring.
    pub reflected: bool,
    pub all: MetricSummary,
    pub groups: BTreeMap<String, MetricSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_sample: Vec<SampleMetrics>,
}

fn reflect(s: &Shape3D) -> Shape3D {
    let mut m = s.matrix().clone();
    m.column_mut(2).neg_mut();
    Shape3D::new(m).expect("same shape")
}

fn sample_metrics(pred: &Shape3D, gt: &Shape3D, topo: &SkeletonTopology) -> Result<(f64, f64, f64)> {
    let scaled = scale_by_bone_length(pred, gt, topo)?;
    Ok((
        mpjpe(&scaled, gt, ROOT_JOINT)?,
        pa_mpjpe(&scaled, gt)?,
        depth_error(&scaled, gt, ROOT_JOINT)?,
    ))
}

/// Scores camera-frame predictions against the dataset's camera-frame ground
/// truth after bone-length rescaling. Weak perspective leaves the overall depth
/// sign unobservable, so one global reflection is allowed, chosen by the lower
/// mean depth error.
pub fn evaluate_shapes(name: &str, preds: &[Shape3D], ds: &Dataset) -> Result<MetricRow> {
    if preds.len() != ds.len() || preds.is_empty() {
        return Err(Error::dim(format!("{} predictions for {} samples", preds.len(), ds.len())));
    }
    let points = ds.points().expect("non-empty");
    let topo = Skeleton::for_points(points)?.topology();
    let gts: Vec<Shape3D> = ds
        .samples
        .iter()
        .map(|s| s.gt_camera_frame().ok_or_else(|| Error::format(format!("sample {}", s.id), "evaluation needs gt and cam")))
        .collect::<Result<_>>()?;
    let score = |flip: bool| -> Result<Vec<(f64, f64, f64)>> {
        preds
            .iter()
            .zip(&gts)
            .map(|(p, g)| if flip { sample_metrics(&reflect(p), g, &topo) } else { sample_metrics(p, g, &topo) })
            .collect()
    };
    let direct = score(false)?;
    let flipped = score(true)?;
    let mean_depth = |v: &[(f64, f64, f64)]| v.iter().map(|m| m.2).sum::<f64>() / v.len() as f64;
    let reflected = mean_depth(&flipped) < mean_depth(&direct);
    let chosen = if reflected { flipped } else { direct };

    let per_sample: Vec<SampleMetrics> = ds
        .samples
        .iter()
        .zip(chosen)
        .map(|(s, (mpjpe, pa_mpjpe, depth_error))| SampleMetrics {
            id: s.id.clone(),
            group: s.group.clone(),
            mpjpe,
            pa_mpjpe,
            depth_error,
        })
        .collect();
    let mut by_group: BTreeMap<String, Vec<&SampleMetrics>> = BTreeMap::new();
    for m in &per_sample {
        by_group.entry(m.group.clone()).or_default().push(m);
    }
    let all: Vec<&SampleMetrics> = per_sample.iter().collect();
    Ok(MetricRow {
        name: name.to_owned(),
        reflected,
        all: MetricSummary::mean(&all),
        groups: by_group.iter().map(|(g, rows)| (g.clone(), MetricSummary::mean(rows))).collect(),
        per_sample,
    })
}

/// True when every sample carries the fields needed for 3D metrics.
pub fn has_ground_truth(ds: &Dataset) -> bool {
    !ds.is_empty() && ds.samples.iter().all(|s| s.gt.is_some() && s.cam.is_some())
}

/// Aligned plain-text table, one line per predictor and group.
pub fn format_table(rows: &[MetricRow]) -> String {
    let mut lines: Vec<[String; 6]> = vec![["method", "group", "n", "MPJPE", "PA-MPJPE", "depth"].map(str::to_owned)];
    for r in rows {
        let name = if r.reflected { format!("{} (reflected)", r.name) } else { r.name.clone() };
        for (group, m) in std::iter::once(("all", &r.all)).chain(r.groups.iter().map(|(g, m)| (g.as_str(), m))) {
            lines.push([
                name.clone(),
                group.to_owned(),
                m.samples.to_string(),
                format!("{:.6}", m.mpjpe),
                format!("{:.6}", m.pa_mpjpe),
                format!("{:.6}", m.depth_error),
            ]);
        }
    }
    let width: Vec<usize> = (0..6).map(|c| lines.iter().map(|l| l[c].len()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for l in &lines {
        let cells: Vec<String> = l
            .iter()
            .zip(&width)
            .enumerate()
            .map(|(c, (v, &w))| if c < 2 { format!("{v:<w$}") } else { format!("{v:>w$}") })
            .collect();
        out.push_str(&cells.join("  "));
        out.push('\n');
    }
    out
}
