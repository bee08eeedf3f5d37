//! Ground plane estimation with seeded RANSAC and least-squares refinement,
//! plus the ground / non-ground partition of the cloud.

use nalgebra::{Matrix3, Vector3};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Plane, Point3, PointCloud, PointId, PointSet};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Point-to-plane distance below which a point counts as ground (meters).
    pub inlier_threshold: f64,
    /// Minimum inlier fraction of the candidate pool for a confident result.
    pub min_inliers: f64,
    pub seed: u64,
    /// Maximum angle between the plane normal and vertical (radians).
    pub max_normal_tilt: f64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            inlier_threshold: 0.15,
            min_inliers: 0.15,
            seed: 0,
            max_normal_tilt: 30f64.to_radians(),
        }
    }
}

#[derive(Debug, Error)]
pub enum GroundError {
    #[error("cloud too small or degenerate for plane estimation")]
    Degenerate,
    #[error("low-confidence ground plane: inlier fraction {fraction:.3}")]
    LowConfidence {
        plane: Plane,
        ground: PointSet,
        fraction: f64,
    },
}

fn plane_from_three(a: &Point3, b: &Point3, c: &Point3) -> Option<Plane> {
    let ab = Vector3::new(b.x - a.x, b.y - a.y, b.z - a.z);
    let ac = Vector3::new(c.x - a.x, c.y - a.y, c.z - a.z);
    let n = ab.cross(&ac);
    if n.norm() < 1e-12 {
        return None;
    }
    let offset = -(n.x * a.x + n.y * a.y + n.z * a.z);
    Plane::new([n.x, n.y, n.z], offset).ok()
}

/// Least-squares plane through the given points via the covariance
/// eigen-decomposition; the normal is the direction of least variance.
fn refine_plane(cloud: &PointCloud, inliers: &[PointId]) -> Option<Plane> {
    let n = inliers.len();
    if n < 3 {
        return None;
    }
    let mut centroid = Vector3::zeros();
    for &id in inliers {
        let p = cloud.get(id);
        centroid += Vector3::new(p.x, p.y, p.z);
    }
    centroid /= n as f64;
    let mut cov = Matrix3::zeros();
    for &id in inliers {
        let p = cloud.get(id);
        let d = Vector3::new(p.x, p.y, p.z) - centroid;
        cov += d * d.transpose();
    }
    cov /= n as f64;
    let eig = cov.symmetric_eigen();
    let mut min_idx = 0;
    for i in 1..3 {
        if eig.eigenvalues[i] < eig.eigenvalues[min_idx] {
            min_idx = i;
        }
    }
    let normal = eig.eigenvectors.column(min_idx);
    let offset = -normal.dot(&centroid);
    Plane::new([normal.x, normal.y, normal.z], offset).ok()
}

fn classify_ground(cloud: &PointCloud, plane: &Plane, threshold: f64) -> PointSet {
    let ids = cloud
        .iter()
        .filter(|(_, p)| plane.distance(p) <= threshold)
        .map(|(id, _)| id)
        .collect();
    PointSet::from_sorted(ids)
}

/// Estimate the ground plane and return it together with the set of points
/// within the inlier threshold of the refined plane.
///
/// Minimal samples are drawn only from the spatially lower half of the
/// scene's vertical range, and samples whose normal tilts more than
/// `max_normal_tilt` from vertical are rejected so vehicle sides cannot win.
/// The best sample by inlier count is refined by least squares over its
/// inliers; ground membership is then re-decided against the refined plane.
pub fn estimate_ground(
    cloud: &PointCloud,
    cfg: &RansacConfig,
) -> Result<(Plane, PointSet), GroundError> {
    if cloud.len() < 3 {
        return Err(GroundError::Degenerate);
    }
    // +y points down, so the spatially lowest points have the largest y.
    let y_min = cloud
        .iter()
        .map(|(_, p)| p.y)
        .fold(f64::INFINITY, f64::min);
    let y_max = cloud
        .iter()
        .map(|(_, p)| p.y)
        .fold(f64::NEG_INFINITY, f64::max);
    let y_mid = 0.5 * (y_min + y_max);
    let candidates: Vec<PointId> = cloud
        .iter()
        .filter(|(_, p)| p.y >= y_mid)
        .map(|(id, _)| id)
        .collect();
    if candidates.len() < 3 {
        return Err(GroundError::Degenerate);
    }

    let min_cos = cfg.max_normal_tilt.cos();
    let mut rng = StdRng::seed_from_u64(cfg.seed);
    let mut best: Option<(usize, Plane)> = None;
    for _ in 0..cfg.iterations {
        let mut pick = [0usize; 3];
        pick[0] = rng.gen_range(0..candidates.len());
        loop {
            pick[1] = rng.gen_range(0..candidates.len());
            if pick[1] != pick[0] {
                break;
            }
        }
        loop {
            pick[2] = rng.gen_range(0..candidates.len());
            if pick[2] != pick[0] && pick[2] != pick[1] {
                break;
            }
        }
        let a = cloud.get(candidates[pick[0]]);
        let b = cloud.get(candidates[pick[1]]);
        let c = cloud.get(candidates[pick[2]]);
        let Some(plane) = plane_from_three(&a, &b, &c) else {
            continue;
        };
        // Plane::new orients the normal upward, so -normal.y = cos(tilt).
        if -plane.normal[1] < min_cos {
            continue;
        }
        let count = candidates
            .iter()
            .filter(|&&id| plane.distance(&cloud.get(id)) <= cfg.inlier_threshold)
            .count();
        // Strictly-greater keeps the earliest trial on ties.
        if best.as_ref().map_or(true, |(c0, _)| count > *c0) {
            best = Some((count, plane));
        }
    }
    let Some((_, sample_plane)) = best else {
        return Err(GroundError::Degenerate);
    };

    let sample_inliers: Vec<PointId> = candidates
        .iter()
        .copied()
        .filter(|&id| sample_plane.distance(&cloud.get(id)) <= cfg.inlier_threshold)
        .collect();
    let plane = refine_plane(cloud, &sample_inliers)
        .filter(|p| -p.normal[1] >= min_cos)
        .unwrap_or(sample_plane);

    let ground = classify_ground(cloud, &plane, cfg.inlier_threshold);
    let fraction = candidates
        .iter()
        .filter(|&&id| plane.distance(&cloud.get(id)) <= cfg.inlier_threshold)
        .count() as f64
        / candidates.len() as f64;
    if fraction < cfg.min_inliers {
        return Err(GroundError::LowConfidence {
            plane,
            ground,
            fraction,
        });
    }
    Ok((plane, ground))
}

/// Complement of the ground set: the points region growing may touch.
pub fn remove_ground(cloud: &PointCloud, ground: &PointSet) -> PointSet {
    ground.complement(cloud.len())
}
