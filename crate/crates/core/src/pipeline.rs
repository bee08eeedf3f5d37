//! End-to-end label generation: ground removal, frustum extraction,
//! depth-ordered segmentation with point claiming, rectangle fitting,
//! frustum completion, lifting, and the size filter — over single frames
//! or a whole KITTI-layout directory in parallel.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boxfit::{
    denoise_key_vertex, fit_rectangle, intersect_frustum, lift_to_3d, size_filter_keep,
    Objective, RectFitConfig,
};
use crate::frustum::{extract_frustum, order_by_depth};
use crate::geom::{bev_of, BevPoint, Box3D, Plane, PointSet};
use crate::ground::{estimate_ground, remove_ground, GroundError, RansacConfig};
use crate::kitti::{box3d_to_label, list_frames, load_scene, write_labels, KittiError, LabelRecord, SceneInput};
use crate::segmentation::{build_indexes, segment_vehicle, SegmentationConfig};
use crate::spatial::active_mask;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Kitti(#[from] KittiError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("all {0} frames failed")]
    AllFramesFailed(usize),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub ransac: RansacConfig,
    pub segmentation: SegmentationConfig,
    pub rect_fit: RectFitConfig,
    pub objective: Objective,
    /// Remove ground points before region growing. The plane is still
    /// estimated either way; boxes need a ground height.
    pub ground_removal: bool,
    /// Run the iterative key-vertex refinement (otherwise a single fit).
    pub denoise: bool,
    /// Complete rectangles against the frustum boundaries.
    pub frustum_intersection: bool,
    /// Objects with fewer frustum points than this are skipped.
    pub min_frustum_points: usize,
    /// Class of 2D boxes to label.
    pub class: String,
    /// Worker threads for directory runs; 0 = rayon default.
    pub jobs: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            ransac: RansacConfig::default(),
            segmentation: SegmentationConfig::default(),
            rect_fit: RectFitConfig::default(),
            objective: Objective::EdgeSupport,
            ground_removal: true,
            denoise: true,
            frustum_intersection: true,
            min_frustum_points: 10,
            class: "Car".to_string(),
            jobs: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct ObjectFlags {
    /// Rectangle refinement hit its iteration cap without settling.
    pub unstable: bool,
    /// Key vertex fell outside the frustum; the un-completed rectangle
    /// was used instead.
    pub intersect_fallback: bool,
}

#[derive(Debug, Clone)]
pub enum SkipReason {
    /// The frustum held fewer live points than the configured floor.
    ThinFrustum(usize),
    /// Region growing produced no component passing the ratio filter.
    Segmentation(String),
}

impl std::fmt::Display for SkipReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SkipReason::ThinFrustum(n) => write!(f, "{n} frustum points"),
            SkipReason::Segmentation(msg) => write!(f, "{msg}"),
        }
    }
}

#[derive(Debug, Clone)]
pub enum ObjectStatus {
    Labeled { box3d: Box3D, flags: ObjectFlags },
    Skipped { reason: SkipReason },
    Filtered { box3d: Box3D },
    Failed { reason: String },
}

#[derive(Debug, Clone)]
pub struct ObjectOutcome {
    /// Index of the object's line in the source label file.
    pub source_index: usize,
    pub status: ObjectStatus,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct GenCounts {
    pub objects: usize,
    pub generated: usize,
    pub skipped: usize,
    pub filtered: usize,
    pub failed: usize,
    pub unstable: usize,
    pub intersect_fallback: usize,
}

impl GenCounts {
    pub fn absorb(&mut self, other: &GenCounts) {
        self.objects += other.objects;
        self.generated += other.generated;
        self.skipped += other.skipped;
        self.filtered += other.filtered;
        self.failed += other.failed;
        self.unstable += other.unstable;
        self.intersect_fallback += other.intersect_fallback;
    }
}

#[derive(Debug)]
pub struct FrameResult {
    pub frame_id: String,
    pub records: Vec<LabelRecord>,
    pub outcomes: Vec<ObjectOutcome>,
    pub plane: Option<Plane>,
    pub counts: GenCounts,
}

/// Fallback ground plane when estimation fails outright: horizontal, near
/// the bottom of the cloud's vertical extent (98th percentile of y).
fn fallback_plane(scene: &SceneInput) -> Plane {
    let mut ys: Vec<f64> = scene.cloud.iter().map(|(_, p)| p.y).collect();
    let y = if ys.is_empty() {
        1.65
    } else {
        ys.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let idx = ((ys.len() as f64 * 0.98) as usize).min(ys.len() - 1);
        ys[idx]
    };
    Plane::new([0.0, -1.0, 0.0], y).expect("vertical normal")
}

/// Label one frame.
pub fn label_frame(scene: &SceneInput, cfg: &PipelineConfig) -> FrameResult {
    let mut counts = GenCounts::default();
    let mut outcomes = Vec::new();
    let mut records = Vec::new();

    // Stage zero: ground plane.
    let (plane, ground) = match estimate_ground(&scene.cloud, &cfg.ransac) {
        Ok((plane, ground)) => (plane, ground),
        Err(GroundError::LowConfidence { plane, ground, .. }) => (plane, ground),
        Err(GroundError::Degenerate) => (fallback_plane(scene), PointSet::empty()),
    };
    let available_set = if cfg.ground_removal {
        remove_ground(&scene.cloud, &ground)
    } else {
        PointSet::full(scene.cloud.len())
    };

    // Frustums for the configured class, processed nearest first.
    let object_boxes: Vec<_> = scene
        .boxes2d
        .iter()
        .filter(|b| b.class == cfg.class)
        .collect();
    let frustums: Vec<_> = object_boxes
        .iter()
        .map(|b| extract_frustum(&scene.cloud, &available_set, b.box2d, &scene.calib))
        .collect();
    let order = order_by_depth(&frustums);

    let indexes = build_indexes(&scene.cloud, &available_set, &cfg.segmentation);
    let mut active = active_mask(scene.cloud.len(), &available_set);

    for &oi in &order {
        counts.objects += 1;
        let frustum = &frustums[oi];
        let source_index = object_boxes[oi].source_index;
        let live = frustum
            .points
            .iter()
            .filter(|&id| active[id as usize])
            .count();
        if live < cfg.min_frustum_points.max(1) {
            counts.skipped += 1;
            outcomes.push(ObjectOutcome {
                source_index,
                status: ObjectStatus::Skipped {
                    reason: SkipReason::ThinFrustum(live),
                },
            });
            continue;
        }
        let seg = match segment_vehicle(&frustum.points, &indexes, &active, &cfg.segmentation) {
            Ok(seg) => seg,
            Err(e) => {
                counts.skipped += 1;
                outcomes.push(ObjectOutcome {
                    source_index,
                    status: ObjectStatus::Skipped {
                        reason: SkipReason::Segmentation(e.to_string()),
                    },
                });
                continue;
            }
        };
        // Claim the mask before the next (deeper) vehicle runs.
        for id in seg.mask.iter() {
            active[id as usize] = false;
        }

        let bev_points: Vec<BevPoint> = seg
            .mask
            .iter()
            .map(|id| bev_of(&scene.cloud.get(id)))
            .collect();
        let mut flags = ObjectFlags::default();
        let rect = if cfg.denoise {
            match denoise_key_vertex(&bev_points, &cfg.rect_fit, cfg.objective) {
                Ok(out) => {
                    flags.unstable = !out.converged;
                    out.rect
                }
                Err(e) => {
                    counts.failed += 1;
                    outcomes.push(ObjectOutcome {
                        source_index,
                        status: ObjectStatus::Failed {
                            reason: e.to_string(),
                        },
                    });
                    continue;
                }
            }
        } else {
            match fit_rectangle(&bev_points, &cfg.rect_fit, cfg.objective) {
                Ok(rect) => rect,
                Err(e) => {
                    counts.failed += 1;
                    outcomes.push(ObjectOutcome {
                        source_index,
                        status: ObjectStatus::Failed {
                            reason: e.to_string(),
                        },
                    });
                    continue;
                }
            }
        };
        let rect = if cfg.frustum_intersection {
            match intersect_frustum(&rect, frustum) {
                Ok(r) => r,
                Err(_) => {
                    flags.intersect_fallback = true;
                    rect
                }
            }
        } else {
            rect
        };
        let box3d = match lift_to_3d(&rect, &seg.mask, &scene.cloud, &plane) {
            Ok(b) => b,
            Err(e) => {
                counts.failed += 1;
                outcomes.push(ObjectOutcome {
                    source_index,
                    status: ObjectStatus::Failed {
                        reason: e.to_string(),
                    },
                });
                continue;
            }
        };
        if !size_filter_keep(&box3d, &cfg.rect_fit.size_filter) {
            counts.filtered += 1;
            outcomes.push(ObjectOutcome {
                source_index,
                status: ObjectStatus::Filtered { box3d },
            });
            continue;
        }
        counts.generated += 1;
        if flags.unstable {
            counts.unstable += 1;
        }
        if flags.intersect_fallback {
            counts.intersect_fallback += 1;
        }
        outcomes.push(ObjectOutcome {
            source_index,
            status: ObjectStatus::Labeled { box3d, flags },
        });
        records.push((
            source_index,
            box3d_to_label(&box3d, object_boxes[oi].box2d, &cfg.class),
        ));
    }

    // Label lines in source order, independent of processing order.
    records.sort_by_key(|(i, _)| *i);
    outcomes.sort_by_key(|o| o.source_index);
    FrameResult {
        frame_id: scene.frame_id.clone(),
        records: records.into_iter().map(|(_, r)| r).collect(),
        outcomes,
        plane: Some(plane),
        counts,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenSummary {
    pub frames: usize,
    pub frames_failed: usize,
    pub counts: GenCounts,
}

/// Per-object flag rows written next to the labels, consumed by evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatsRecord {
    pub frame_id: String,
    pub object_index: usize,
    pub status: String,
    #[serde(default)]
    pub unstable: bool,
    #[serde(default)]
    pub intersect_fallback: bool,
}

fn stats_records(result: &FrameResult) -> Vec<StatsRecord> {
    result
        .outcomes
        .iter()
        .map(|o| {
            let (status, unstable, fallback) = match &o.status {
                ObjectStatus::Labeled { flags, .. } => {
                    ("labeled", flags.unstable, flags.intersect_fallback)
                }
                ObjectStatus::Skipped { .. } => ("skipped", false, false),
                ObjectStatus::Filtered { .. } => ("filtered", false, false),
                ObjectStatus::Failed { .. } => ("failed", false, false),
            };
            StatsRecord {
                frame_id: result.frame_id.clone(),
                object_index: o.source_index,
                status: status.to_string(),
                unstable,
                intersect_fallback: fallback,
            }
        })
        .collect()
}

/// Run label generation over a KITTI-layout dataset directory.
///
/// One label file per frame is written to `out_dir`, together with
/// `stats.jsonl` (per-object outcomes) and `effective_config.json`.
/// Unreadable frames are skipped; the run fails only when every frame does.
pub fn run_generate(
    data_root: &Path,
    out_dir: &Path,
    frames: &[String],
    cfg: &PipelineConfig,
) -> Result<GenSummary, PipelineError> {
    std::fs::create_dir_all(out_dir)?;
    let frames: Vec<String> = if frames.is_empty() {
        list_frames(data_root)?
    } else {
        frames.to_vec()
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .expect("thread pool");
    let results: Vec<Result<(GenCounts, Vec<StatsRecord>), KittiError>> = pool.install(|| {
        frames
            .par_iter()
            .map(|frame_id| {
                let scene = load_scene(data_root, frame_id)?;
                let result = label_frame(&scene, cfg);
                let text = write_labels(&result.records);
                std::fs::write(out_dir.join(format!("{frame_id}.txt")), text)
                    .map_err(|e| KittiError::Io(frame_id.clone(), e))?;
                Ok((result.counts, stats_records(&result)))
            })
            .collect()
    });

    let mut counts = GenCounts::default();
    let mut failed = 0usize;
    let mut all_stats = Vec::new();
    for r in &results {
        match r {
            Ok((c, stats)) => {
                counts.absorb(c);
                all_stats.extend(stats.iter().cloned());
            }
            Err(_) => failed += 1,
        }
    }
    if failed == frames.len() && !frames.is_empty() {
        return Err(PipelineError::AllFramesFailed(failed));
    }
    all_stats.sort_by(|a, b| (&a.frame_id, a.object_index).cmp(&(&b.frame_id, b.object_index)));
    let mut stats_text = String::new();
    for s in &all_stats {
        stats_text.push_str(&serde_json::to_string(s).unwrap());
        stats_text.push('\n');
    }
    std::fs::write(out_dir.join("stats.jsonl"), stats_text)?;
    std::fs::write(
        out_dir.join("effective_config.json"),
        serde_json::to_string_pretty(cfg).unwrap(),
    )?;
    Ok(GenSummary {
        frames: frames.len(),
        frames_failed: failed,
        counts,
    })
}
