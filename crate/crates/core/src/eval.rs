//! Pseudo-label quality metrics: rotated BEV IoU via convex polygon
//! clipping, 3D IoU with vertical interval overlap, and per-run aggregation
//! into mean IoU and precision at IoU thresholds.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{BevPoint, Box3D};
use crate::kitti::{label_to_box3d, LabelRecord};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("frame {0}: prediction does not match any ground-truth 2D box")]
    UnmatchedPrediction(String),
    #[error("invalid label: {0}")]
    BadLabel(String),
}

fn polygon_area(poly: &[BevPoint]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        acc += a.cross(&b);
    }
    0.5 * acc.abs()
}

fn clip_halfplane(poly: &[BevPoint], a: &BevPoint, b: &BevPoint) -> Vec<BevPoint> {
    let edge = b.sub(a);
    let side = |p: &BevPoint| edge.cross(&p.sub(a));
    let mut out = Vec::with_capacity(poly.len() + 1);
    let n = poly.len();
    for i in 0..n {
        let s = poly[i];
        let e = poly[(i + 1) % n];
        let sc = side(&s);
        let ec = side(&e);
        let s_in = sc >= 0.0;
        let e_in = ec >= 0.0;
        let intersection = |sc: f64, ec: f64| {
            let t = sc / (sc - ec);
            BevPoint::new(s.x + (e.x - s.x) * t, s.z + (e.z - s.z) * t)
        };
        match (s_in, e_in) {
            (true, true) => out.push(e),
            (true, false) => {
                if (sc - ec).abs() > 1e-300 {
                    out.push(intersection(sc, ec));
                }
            }
            (false, true) => {
                if (sc - ec).abs() > 1e-300 {
                    out.push(intersection(sc, ec));
                }
                out.push(e);
            }
            (false, false) => {}
        }
    }
    out
}

/// Area of the intersection of two convex, counterclockwise polygons via
/// successive half-plane clipping. Zero when disjoint.
pub fn convex_polygon_intersection_area(a: &[BevPoint], b: &[BevPoint]) -> f64 {
    if a.len() < 3 || b.len() < 3 {
        return 0.0;
    }
    let mut poly = a.to_vec();
    let n = b.len();
    for i in 0..n {
        poly = clip_halfplane(&poly, &b[i], &b[(i + 1) % n]);
        if poly.len() < 3 {
            return 0.0;
        }
    }
    polygon_area(&poly)
}

/// Rotated IoU of the BEV footprints.
pub fn iou_bev(a: &Box3D, b: &Box3D) -> f64 {
    let ca = a.corners_bev();
    let cb = b.corners_bev();
    let inter = convex_polygon_intersection_area(&ca, &cb);
    let union = a.length * a.width + b.length * b.width - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// 3D IoU: BEV intersection area times vertical interval overlap over the
/// volume union.
pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    let ca = a.corners_bev();
    let cb = b.corners_bev();
    let inter_bev = convex_polygon_intersection_area(&ca, &cb);
    let (a_top, a_bot) = a.y_interval();
    let (b_top, b_bot) = b.y_interval();
    let overlap = (a_bot.min(b_bot) - a_top.max(b_top)).max(0.0);
    let inter = inter_bev * overlap;
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Per-object score row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectScore {
    pub frame_id: String,
    /// Index of the source object in the ground-truth label file.
    pub object_index: usize,
    pub iou_bev: f64,
    pub iou_3d: f64,
    pub matched: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EvalCounts {
    /// Labels the pipeline emitted.
    pub generated: usize,
    /// Ground-truth objects considered.
    pub gt_total: usize,
    /// Objects skipped before fitting (empty or thin frustum, failed
    /// segmentation). Zero when evaluating plain label directories.
    pub skipped: usize,
    /// Boxes dropped by the size filter.
    pub filtered: usize,
    /// Labels whose rectangle refinement did not settle.
    pub unstable: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    /// Mean 3D IoU over generated labels.
    pub mean_iou: f64,
    /// Mean 3D IoU counting unmatched ground truth as zero.
    pub mean_iou_with_misses: f64,
    /// Generated labels / ground-truth objects.
    pub coverage: f64,
    /// (threshold, fraction of generated labels with iou_3d >= threshold).
    pub precision: Vec<(f64, f64)>,
    pub per_object: Vec<ObjectScore>,
    pub counts: EvalCounts,
}

impl EvalReport {
    pub fn precision_at(&self, t: f64) -> Option<f64> {
        self.precision
            .iter()
            .find(|(k, _)| (k - t).abs() < 1e-9)
            .map(|(_, v)| *v)
    }

    /// Human-readable summary table.
    pub fn table(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "objects: gt={} generated={} skipped={} filtered={} unstable={}\n",
            self.counts.gt_total,
            self.counts.generated,
            self.counts.skipped,
            self.counts.filtered,
            self.counts.unstable
        ));
        s.push_str(&format!(
            "mean IoU (generated): {:.4}\nmean IoU (with misses): {:.4}\ncoverage: {:.4}\n",
            self.mean_iou, self.mean_iou_with_misses, self.coverage
        ));
        s.push_str("precision:");
        for (t, p) in &self.precision {
            s.push_str(&format!("  IoU>={t:.1}: {:.2}%", p * 100.0));
        }
        s.push('\n');
        s
    }

    /// One JSON record per object, newline-delimited.
    pub fn jsonl(&self) -> String {
        let mut s = String::new();
        for o in &self.per_object {
            s.push_str(&serde_json::to_string(o).unwrap());
            s.push('\n');
        }
        s
    }
}

/// Labels of one frame.
#[derive(Debug, Clone)]
pub struct FrameLabels {
    pub frame_id: String,
    pub records: Vec<LabelRecord>,
}

#[derive(Debug, Clone)]
pub struct MatchOptions {
    /// Ground-truth class to evaluate.
    pub class: String,
    /// Max per-coordinate difference for 2D-box identity matching (pixels).
    pub box2d_tolerance: f64,
    pub thresholds: Vec<f64>,
}

impl Default for MatchOptions {
    fn default() -> Self {
        Self {
            class: "Car".to_string(),
            box2d_tolerance: 0.05,
            thresholds: vec![0.3, 0.5, 0.7],
        }
    }
}

fn boxes_equal(a: &crate::geom::Box2D, b: &crate::geom::Box2D, tol: f64) -> bool {
    (a.u_min - b.u_min).abs() <= tol
        && (a.v_min - b.v_min).abs() <= tol
        && (a.u_max - b.u_max).abs() <= tol
        && (a.v_max - b.v_max).abs() <= tol
}

/// Score predictions against ground truth.
///
/// Predictions are matched to the ground-truth object whose 2D box they were
/// generated from (the pipeline copies the source 2D box into each label),
/// so matching is by 2D-box identity, first unmatched in file order on
/// duplicates. Mean IoU and precision are computed over generated labels;
/// unmatched ground truth enters only `mean_iou_with_misses` and coverage.
pub fn match_and_score(
    pred: &[FrameLabels],
    gt: &[FrameLabels],
    opts: &MatchOptions,
) -> Result<EvalReport, EvalError> {
    let mut per_object = Vec::new();
    let mut ious = Vec::new();
    let mut gt_total = 0usize;
    let mut generated = 0usize;

    for gt_frame in gt {
        let empty = FrameLabels {
            frame_id: gt_frame.frame_id.clone(),
            records: Vec::new(),
        };
        let pred_frame = pred
            .iter()
            .find(|p| p.frame_id == gt_frame.frame_id)
            .unwrap_or(&empty);
        let gt_idx: Vec<usize> = gt_frame
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.class == opts.class)
            .map(|(i, _)| i)
            .collect();
        gt_total += gt_idx.len();
        let mut taken = vec![false; gt_frame.records.len()];
        let mut matched_iou = vec![None; gt_frame.records.len()];

        for p in &pred_frame.records {
            generated += 1;
            let target = gt_idx.iter().copied().find(|&i| {
                !taken[i] && boxes_equal(&gt_frame.records[i].box2d, &p.box2d, opts.box2d_tolerance)
            });
            let Some(i) = target else {
                return Err(EvalError::UnmatchedPrediction(gt_frame.frame_id.clone()));
            };
            taken[i] = true;
            let gt_box = label_to_box3d(&gt_frame.records[i])
                .map_err(|e| EvalError::BadLabel(e.to_string()))?;
            let p_box =
                label_to_box3d(p).map_err(|e| EvalError::BadLabel(e.to_string()))?;
            let bev = iou_bev(&p_box, &gt_box);
            let full = iou_3d(&p_box, &gt_box);
            ious.push(full);
            matched_iou[i] = Some((bev, full));
        }
        for &i in &gt_idx {
            let (bev, full) = matched_iou[i].unwrap_or((0.0, 0.0));
            per_object.push(ObjectScore {
                frame_id: gt_frame.frame_id.clone(),
                object_index: i,
                iou_bev: bev,
                iou_3d: full,
                matched: matched_iou[i].is_some(),
                flags: Vec::new(),
            });
        }
    }

    let mean_iou = if ious.is_empty() {
        0.0
    } else {
        ious.iter().sum::<f64>() / ious.len() as f64
    };
    let mean_iou_with_misses = if gt_total == 0 {
        0.0
    } else {
        ious.iter().sum::<f64>() / gt_total as f64
    };
    let precision = opts
        .thresholds
        .iter()
        .map(|&t| {
            let hits = ious.iter().filter(|&&v| v >= t).count();
            let denom = ious.len().max(1);
            (t, hits as f64 / denom as f64)
        })
        .collect();
    Ok(EvalReport {
        mean_iou,
        mean_iou_with_misses,
        coverage: if gt_total == 0 {
            0.0
        } else {
            ious.len() as f64 / gt_total as f64
        },
        precision,
        per_object,
        counts: EvalCounts {
            generated,
            gt_total,
            ..EvalCounts::default()
        },
    })
}
