//! Oriented BEV rectangle estimation and 3D box lifting.
//!
//! A rotation grid over [0, 90) proposes bounding rectangles; each proposal
//! is scored by the fraction of points far from both key edges (the two
//! edges meeting at the key vertex, the corner whose incident half-rectangle
//! holds the most points). Minimizing that fraction instead of area removes
//! the two-way ambiguity that area has on corner-shaped point sets.
//!
//! The key vertex is then stabilized by iterative peeling: each round removes
//! the weakest of the three support groups (points near one key edge, near
//! the other, or near neither) and refits. The loop stops when the key
//! vertex settles below `vertex_stability_eps`, or when a removal stops
//! improving the objective, and returns the fit that the removed points
//! still supported.
//!
//! Finally the rectangle is completed against the frustum boundary lines and
//! lifted to a 7-DoF box between the ground plane and the mask's top.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frustum::FrustumRegion;
use crate::geom::{BevPoint, Box3D, GeomError, Plane, Point3, PointCloud, PointSet};

#[derive(Debug, Error)]
pub enum FitError {
    #[error("need at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("points are collinear; no oriented rectangle")]
    Collinear,
    #[error("key vertex lies outside the frustum cone")]
    KeyVertexOutsideFrustum,
    #[error("invalid geometry: {0}")]
    Geometry(#[from] GeomError),
}

/// Closed dimension bounds for plausible vehicles, in meters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SizeFilter {
    pub length: (f64, f64),
    pub width: (f64, f64),
    pub height: (f64, f64),
}

impl Default for SizeFilter {
    fn default() -> Self {
        Self {
            length: (2.0, 7.0),
            width: (1.0, 3.0),
            height: (0.5, 3.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Fraction of points far from both key edges (default).
    EdgeSupport,
    /// Rectangle area; kept as a comparison baseline.
    Area,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RectFitConfig {
    pub angle_step_deg: f64,
    /// Band width around each key-edge support line, as a fraction of the
    /// shorter key edge.
    pub theta_rect_fraction: f64,
    /// Key-vertex movement below which the peeling loop stops (meters).
    pub vertex_stability_eps: f64,
    pub max_denoise_iters: usize,
    /// Return the post-peel fit instead of the pre-peel one on a stable stop.
    pub return_refit_on_stable: bool,
    pub size_filter: SizeFilter,
}

impl Default for RectFitConfig {
    fn default() -> Self {
        Self {
            angle_step_deg: 0.5,
            theta_rect_fraction: 0.1,
            vertex_stability_eps: 0.01,
            max_denoise_iters: 20,
            return_refit_on_stable: false,
            size_filter: SizeFilter::default(),
        }
    }
}

/// Oriented rectangle in the BEV plane with an identified key vertex.
/// Corners are in counterclockwise order viewed from above.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BevRectangle {
    corners: [BevPoint; 4],
    key: usize,
}

impl BevRectangle {
    pub fn new(corners: [BevPoint; 4], key: usize) -> Self {
        debug_assert!(key < 4);
        Self { corners, key }
    }

    pub fn corners(&self) -> &[BevPoint; 4] {
        &self.corners
    }

    pub fn key_index(&self) -> usize {
        self.key
    }

    pub fn key_vertex(&self) -> BevPoint {
        self.corners[self.key]
    }

    pub fn center(&self) -> BevPoint {
        let mut x = 0.0;
        let mut z = 0.0;
        for c in &self.corners {
            x += c.x;
            z += c.z;
        }
        BevPoint::new(x / 4.0, z / 4.0)
    }

    /// The two edges incident to the key vertex: (direction, length) each,
    /// directions pointing away from the key vertex.
    pub fn key_edges(&self) -> [(BevPoint, f64); 2] {
        let v = self.corners[self.key];
        let a = self.corners[(self.key + 1) % 4];
        let b = self.corners[(self.key + 3) % 4];
        let da = a.sub(&v);
        let db = b.sub(&v);
        [
            (da.scale(1.0 / da.norm()), da.norm()),
            (db.scale(1.0 / db.norm()), db.norm()),
        ]
    }

    pub fn shorter_key_edge(&self) -> f64 {
        let [(_, l1), (_, l2)] = self.key_edges();
        l1.min(l2)
    }

    /// Perpendicular distances from `p` to the two key-edge support lines.
    pub fn key_edge_distances(&self, p: &BevPoint) -> (f64, f64) {
        let v = self.corners[self.key];
        let [(d1, _), (d2, _)] = self.key_edges();
        let rel = p.sub(&v);
        (d1.cross(&rel).abs(), d2.cross(&rel).abs())
    }

    pub fn edge_lengths(&self) -> (f64, f64) {
        let e0 = self.corners[1].sub(&self.corners[0]).norm();
        let e1 = self.corners[2].sub(&self.corners[1]).norm();
        (e0, e1)
    }

    pub fn area(&self) -> f64 {
        let (a, b) = self.edge_lengths();
        a * b
    }

    /// True when `p` is inside the rectangle, within `eps` of signed distance.
    pub fn contains(&self, p: &BevPoint, eps: f64) -> bool {
        for i in 0..4 {
            let a = self.corners[i];
            let b = self.corners[(i + 1) % 4];
            let edge = b.sub(&a);
            if edge.cross(&p.sub(&a)) < -eps * edge.norm() {
                return false;
            }
        }
        true
    }
}

/// Minimal bounding rectangle of `q` in the frame rotated by `angle`,
/// mapped back to world BEV. Corners are counterclockwise; the edge from
/// corner 0 to corner 1 points along the rotated +x axis.
pub fn bounding_rect_at_angle(q: &[BevPoint], angle: f64) -> [BevPoint; 4] {
    debug_assert!(!q.is_empty());
    let (sin, cos) = angle.sin_cos();
    let mut u_min = f64::INFINITY;
    let mut u_max = f64::NEG_INFINITY;
    let mut v_min = f64::INFINITY;
    let mut v_max = f64::NEG_INFINITY;
    for p in q {
        let u = p.x * cos + p.z * sin;
        let v = -p.x * sin + p.z * cos;
        u_min = u_min.min(u);
        u_max = u_max.max(u);
        v_min = v_min.min(v);
        v_max = v_max.max(v);
    }
    let back = |u: f64, v: f64| BevPoint::new(u * cos - v * sin, u * sin + v * cos);
    [
        back(u_min, v_min),
        back(u_max, v_min),
        back(u_max, v_max),
        back(u_min, v_max),
    ]
}

/// Corner whose incident right triangle (the half-rectangle cut by the
/// diagonal not through that corner) contains the most points of `q`.
/// Ties break to the lowest corner index.
pub fn key_vertex_of(corners: &[BevPoint; 4], q: &[BevPoint]) -> usize {
    let origin = corners[0];
    let e_u = corners[1].sub(&corners[0]);
    let e_v = corners[3].sub(&corners[0]);
    let lu2 = e_u.dot(&e_u).max(1e-300);
    let lv2 = e_v.dot(&e_v).max(1e-300);
    let mut counts = [0usize; 4];
    for p in q {
        let rel = p.sub(&origin);
        let s = rel.dot(&e_u) / lu2;
        let t = rel.dot(&e_v) / lv2;
        if s + t <= 1.0 {
            counts[0] += 1;
        }
        if (1.0 - s) + t <= 1.0 {
            counts[1] += 1;
        }
        if (1.0 - s) + (1.0 - t) <= 1.0 {
            counts[2] += 1;
        }
        if s + (1.0 - t) <= 1.0 {
            counts[3] += 1;
        }
    }
    let mut best = 0;
    for i in 1..4 {
        if counts[i] > counts[best] {
            best = i;
        }
    }
    best
}

/// Fraction of `q` farther than `theta_rect` from both key-edge support
/// lines. Small values mean the key edges explain the point mass well.
pub fn off_edge_fraction(rect: &BevRectangle, q: &[BevPoint], theta_rect: f64) -> f64 {
    if q.is_empty() {
        return 0.0;
    }
    let far = q
        .iter()
        .filter(|p| {
            let (d1, d2) = rect.key_edge_distances(p);
            d1 > theta_rect && d2 > theta_rect
        })
        .count();
    far as f64 / q.len() as f64
}

fn collinearity_check(q: &[BevPoint]) -> Result<(), FitError> {
    if q.len() < 3 {
        return Err(FitError::TooFewPoints(q.len()));
    }
    let a = q[0];
    let mut far = a;
    let mut far_d = 0.0;
    for p in q {
        let d = p.distance(&a);
        if d > far_d {
            far_d = d;
            far = *p;
        }
    }
    if far_d < 1e-12 {
        return Err(FitError::Collinear);
    }
    let dir = far.sub(&a).scale(1.0 / far_d);
    let spread = q
        .iter()
        .map(|p| dir.cross(&p.sub(&a)).abs())
        .fold(0.0f64, f64::max);
    if spread < 1e-9 {
        return Err(FitError::Collinear);
    }
    Ok(())
}

/// Sweep the rotation grid and return the rectangle minimizing the
/// configured objective, with its key vertex.
///
/// The far-fraction objective ties exactly (often at zero) across a small
/// angular plateau on shell-like masks, so ties break toward the rectangle
/// whose key edges hug the points most tightly (smallest summed distance to
/// the nearest key edge), then toward the smaller angle.
pub fn fit_rectangle(
    q: &[BevPoint],
    cfg: &RectFitConfig,
    objective: Objective,
) -> Result<BevRectangle, FitError> {
    collinearity_check(q)?;
    let step = cfg.angle_step_deg.to_radians();
    let n_angles = (90.0 / cfg.angle_step_deg).ceil() as usize;
    let mut best: Option<((f64, f64), BevRectangle)> = None;
    for i in 0..n_angles {
        let angle = i as f64 * step;
        if angle >= std::f64::consts::FRAC_PI_2 {
            break;
        }
        let corners = bounding_rect_at_angle(q, angle);
        let key = key_vertex_of(&corners, q);
        let rect = BevRectangle::new(corners, key);
        let score = match objective {
            Objective::EdgeSupport => {
                let theta = cfg.theta_rect_fraction * rect.shorter_key_edge();
                let mut far = 0usize;
                let mut nearness = 0.0;
                for p in q {
                    let (d1, d2) = rect.key_edge_distances(p);
                    if d1 > theta && d2 > theta {
                        far += 1;
                    }
                    nearness += d1.min(d2);
                }
                (far as f64 / q.len() as f64, nearness)
            }
            Objective::Area => (rect.area(), 0.0),
        };
        let better = match &best {
            None => true,
            Some((s, _)) => score.0 < s.0 || (score.0 == s.0 && score.1 < s.1),
        };
        if better {
            best = Some((score, rect));
        }
    }
    Ok(best.expect("angle grid is nonempty").1)
}

#[derive(Debug, Clone)]
pub struct DenoiseOutcome {
    pub rect: BevRectangle,
    /// Indices into the input slice that were peeled away.
    pub removed: Vec<usize>,
    /// False when the loop hit `max_denoise_iters` without settling.
    pub converged: bool,
    pub iterations: usize,
}

/// Iterative key-vertex stabilization.
///
/// Each round partitions the surviving points into the two key-edge bands
/// (within `theta_rect` of either support line) and the far remainder, then
/// removes the smallest nonempty group and refits. The loop stops when the
/// key vertex moves less than `vertex_stability_eps` between fits, when the
/// working set would drop below 3 points (or below half the original mass),
/// or at the iteration cap.
///
/// Points of `q` within the rectangle's own band of either key-edge support
/// line: the evidence the rectangle claims to explain.
fn claimed_support(rect: &BevRectangle, q: &[BevPoint], band_fraction: f64) -> Vec<usize> {
    let theta = band_fraction * rect.shorter_key_edge();
    (0..q.len())
        .filter(|&i| {
            let (d1, d2) = rect.key_edge_distances(&q[i]);
            d1 <= theta || d2 <= theta
        })
        .collect()
}

/// Re-fit the rectangle on exactly the points it claims, repeated until the
/// claim stops changing (a few rounds at most). A fit whose key edges align
/// with real structure snaps onto the full extent of that structure, even
/// when the starting fit was tilted or truncated by contamination; a fit
/// pinned by stray points keeps its thin claim and scores poorly.
fn snap_to_support(
    fit: BevRectangle,
    q: &[BevPoint],
    cfg: &RectFitConfig,
    objective: Objective,
) -> (BevRectangle, Vec<usize>) {
    let mut rect = fit;
    let mut claim = claimed_support(&rect, q, cfg.theta_rect_fraction);
    for _ in 0..4 {
        if claim.len() < 3 {
            break;
        }
        let pts: Vec<BevPoint> = claim.iter().map(|&i| q[i]).collect();
        let Ok(refit) = fit_rectangle(&pts, cfg, objective) else {
            break;
        };
        let next_claim = claimed_support(&refit, q, cfg.theta_rect_fraction);
        let stable = next_claim == claim;
        rect = refit;
        claim = next_claim;
        if stable {
            break;
        }
    }
    (rect, claim)
}

/// Iterative key-vertex stabilization.
///
/// Every candidate fit is first snapped to the mask evidence it explains
/// (see [`snap_to_support`]). Contamination that merely inflates or tilts
/// the rectangle dissolves right there. Contamination that pins the key
/// corner is peeled instead: each round partitions the surviving points
/// into the two key-edge bands and the far remainder, removes the smallest
/// group (noise occupies a nearly-empty one), refits and snaps again. The
/// loop stops when the key vertex settles below `vertex_stability_eps`,
/// when the working set would drop below 3 points or half the mask, or at
/// the iteration cap.
///
/// The returned rectangle is the candidate whose claim covers the most mask
/// points (earliest on ties); `removed` lists the points outside its
/// support.
pub fn denoise_key_vertex(
    q: &[BevPoint],
    cfg: &RectFitConfig,
    objective: Objective,
) -> Result<DenoiseOutcome, FitError> {
    let initial = fit_rectangle(q, cfg, objective)?;
    // Candidate = (rect, support indices). An unsnappable fit keeps its
    // working set as support.
    let evaluate = |fit: BevRectangle, working: &[usize]| -> (BevRectangle, Vec<usize>) {
        let (rect, claim) = snap_to_support(fit, q, cfg, objective);
        if claim.len() >= 3 {
            (rect, claim)
        } else {
            (fit, working.to_vec())
        }
    };

    let mut active: Vec<usize> = (0..q.len()).collect();
    let mut candidates = vec![evaluate(initial, &active)];
    let mut fit_prev = initial;
    let mut converged = false;
    let mut iterations = 0usize;

    for _ in 0..cfg.max_denoise_iters {
        let theta = cfg.theta_rect_fraction * fit_prev.shorter_key_edge();
        let mut band1 = Vec::new();
        let mut band2 = Vec::new();
        let mut far = Vec::new();
        for &i in &active {
            let (d1, d2) = fit_prev.key_edge_distances(&q[i]);
            if d1 <= theta {
                band1.push(i);
            } else if d2 <= theta {
                band2.push(i);
            } else {
                far.push(i);
            }
        }
        // Smallest nonempty group loses; the far remainder wins ties since
        // it never supports the key corner.
        let groups = [band1, band2, far];
        let Some(peel_slot) = (0..3)
            .filter(|&k| !groups[k].is_empty())
            .min_by_key(|&k| (groups[k].len(), [1, 2, 0][k]))
        else {
            converged = true;
            break;
        };
        let peel = &groups[peel_slot];
        let remaining_len = active.len() - peel.len();
        if remaining_len < 3 || remaining_len * 2 < q.len() {
            converged = true;
            break;
        }
        iterations += 1;
        let peel_set: std::collections::HashSet<usize> = peel.iter().copied().collect();
        let remaining: Vec<usize> = active
            .iter()
            .copied()
            .filter(|i| !peel_set.contains(i))
            .collect();
        let remaining_pts: Vec<BevPoint> = remaining.iter().map(|&i| q[i]).collect();
        let Ok(fit_next) = fit_rectangle(&remaining_pts, cfg, objective) else {
            converged = true;
            break;
        };
        active = remaining;
        candidates.push(evaluate(fit_next, &active));
        let moved = fit_next.key_vertex().distance(&fit_prev.key_vertex());
        fit_prev = fit_next;
        if moved < cfg.vertex_stability_eps {
            converged = true;
            break;
        }
    }

    let chosen = if cfg.return_refit_on_stable && converged {
        candidates.len() - 1
    } else {
        let mut best = 0;
        for (i, c) in candidates.iter().enumerate() {
            if c.1.len() > candidates[best].1.len() {
                best = i;
            }
        }
        best
    };
    let (rect, support) = &candidates[chosen];
    let in_support: std::collections::HashSet<usize> = support.iter().copied().collect();
    let removed = (0..q.len()).filter(|i| !in_support.contains(i)).collect();
    Ok(DenoiseOutcome {
        rect: *rect,
        removed,
        converged,
        iterations,
    })
}

/// Extend the key edges from the key vertex until they meet the frustum
/// boundary lines, completing the rectangle for occluded vehicles.
///
/// Each key-edge ray keeps its observed extent unless a boundary
/// intersection lies strictly beyond it (in front of the camera); the
/// nearest such intersection wins. The completed rectangle keeps the key
/// vertex as corner 0.
pub fn intersect_frustum(
    rect: &BevRectangle,
    frustum: &FrustumRegion,
) -> Result<BevRectangle, FitError> {
    let v = rect.key_vertex();
    // Tolerant inside test: a key vertex exactly on a boundary line is fine.
    let tol = 1e-9 * v.norm().max(1.0);
    if frustum.left_dir.cross(&v) > tol || frustum.right_dir.cross(&v) < -tol {
        return Err(FitError::KeyVertexOutsideFrustum);
    }
    let mut endpoints = [BevPoint::new(0.0, 0.0); 2];
    for (slot, (dir, len)) in rect.key_edges().into_iter().enumerate() {
        // Nearest boundary intersection strictly beyond the observed extent,
        // in front of the camera; otherwise keep the observed extent.
        let mut best: Option<f64> = None;
        for boundary in [&frustum.left_dir, &frustum.right_dir] {
            let denom = dir.cross(boundary);
            if denom.abs() < 1e-12 {
                continue; // ray parallel to this boundary
            }
            let t = -v.cross(boundary) / denom;
            let s = v.add(&dir.scale(t)).dot(boundary);
            if t > len && s > 0.0 && best.map_or(true, |b| t < b) {
                best = Some(t);
            }
        }
        endpoints[slot] = v.add(&dir.scale(best.unwrap_or(len)));
    }
    let c1 = endpoints[0];
    let c2 = endpoints[1];
    let c3 = c1.add(&c2).sub(&v);
    let corners = if c1.sub(&v).cross(&c2.sub(&v)) > 0.0 {
        [v, c1, c3, c2]
    } else {
        [v, c2, c3, c1]
    };
    Ok(BevRectangle::new(corners, 0))
}

/// Lift a BEV rectangle to a 7-DoF box: bottom on the ground plane under the
/// rectangle center, top at the mask's highest point, height clamped to at
/// least 0.5 m.
pub fn lift_to_3d(
    rect: &BevRectangle,
    mask: &PointSet,
    cloud: &PointCloud,
    plane: &Plane,
) -> Result<Box3D, FitError> {
    let center_bev = rect.center();
    let y_ground = plane.height_at(&center_bev);
    let y_top = mask
        .iter()
        .map(|id| cloud.get(id).y)
        .fold(f64::INFINITY, f64::min);
    let height = (y_ground - y_top).max(0.5);
    let center = Point3::new(center_bev.x, y_ground - height / 2.0, center_bev.z);
    let e1 = rect.corners[1].sub(&rect.corners[0]);
    let e2 = rect.corners[3].sub(&rect.corners[0]);
    let yaw = e1.z.atan2(e1.x);
    Ok(Box3D::new(
        center,
        e1.norm().max(1e-6),
        e2.norm().max(1e-6),
        height,
        yaw,
    )?)
}

/// Closed-interval plausibility check on the box dimensions.
pub fn size_filter_keep(b: &Box3D, filter: &SizeFilter) -> bool {
    b.length >= filter.length.0
        && b.length <= filter.length.1
        && b.width >= filter.width.0
        && b.width <= filter.width.1
        && b.height >= filter.height.0
        && b.height <= filter.height.1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::wrap_angle;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn unit_square() -> Vec<BevPoint> {
        vec![
            BevPoint::new(0.0, 0.0),
            BevPoint::new(1.0, 0.0),
            BevPoint::new(1.0, 1.0),
            BevPoint::new(0.0, 1.0),
        ]
    }

    #[test]
    fn bounding_rect_axis_aligned_square() {
        let corners = bounding_rect_at_angle(&unit_square(), 0.0);
        let expect = unit_square();
        for (c, e) in corners.iter().zip(expect.iter()) {
            assert_relative_eq!(c.x, e.x, epsilon = 1e-12);
            assert_relative_eq!(c.z, e.z, epsilon = 1e-12);
        }
    }

    #[test]
    fn bounding_rect_square_at_45_degrees() {
        let corners = bounding_rect_at_angle(&unit_square(), std::f64::consts::FRAC_PI_4);
        let e0 = corners[1].sub(&corners[0]).norm();
        let e1 = corners[3].sub(&corners[0]).norm();
        assert_relative_eq!(e0, std::f64::consts::SQRT_2, epsilon = 1e-12);
        assert_relative_eq!(e1, std::f64::consts::SQRT_2, epsilon = 1e-12);
        assert_relative_eq!(e0 * e1, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn bounding_rect_contains_and_touches() {
        let mut rng = StdRng::seed_from_u64(2);
        for _ in 0..100 {
            let n = rng.gen_range(3..80);
            let q: Vec<BevPoint> = (0..n)
                .map(|_| BevPoint::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)))
                .collect();
            let angle = rng.gen_range(0.0..std::f64::consts::FRAC_PI_2);
            let corners = bounding_rect_at_angle(&q, angle);
            let rect = BevRectangle::new(corners, 0);
            for p in &q {
                assert!(rect.contains(p, 1e-9));
            }
            // Tightness: every edge is touched by at least one point.
            for i in 0..4 {
                let a = corners[i];
                let b = corners[(i + 1) % 4];
                let dir = b.sub(&a).normalized();
                let min_d = q
                    .iter()
                    .map(|p| dir.cross(&p.sub(&a)).abs())
                    .fold(f64::INFINITY, f64::min);
                assert!(min_d <= 1e-9, "edge {i} untouched: {min_d}");
            }
        }
    }

    #[test]
    fn rectangle_invariants_hold() {
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..50 {
            let q: Vec<BevPoint> = (0..30)
                .map(|_| BevPoint::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)))
                .collect();
            let corners =
                bounding_rect_at_angle(&q, rng.gen_range(0.0..std::f64::consts::FRAC_PI_2));
            let e01 = corners[1].sub(&corners[0]);
            let e32 = corners[2].sub(&corners[3]);
            let e03 = corners[3].sub(&corners[0]);
            assert!((e01.norm() - e32.norm()).abs() < 1e-6);
            assert!(e01.dot(&e03).abs() < 1e-6 * e01.norm() * e03.norm().max(1e-12));
        }
    }

    #[test]
    fn key_vertex_follows_corner_cluster() {
        let mut q = Vec::new();
        let mut rng = StdRng::seed_from_u64(4);
        for _ in 0..50 {
            q.push(BevPoint::new(
                rng.gen_range(0.0..0.2),
                rng.gen_range(0.0..0.2),
            ));
        }
        // A couple of far points define the rectangle extent.
        q.push(BevPoint::new(2.0, 0.0));
        q.push(BevPoint::new(0.0, 1.0));
        q.push(BevPoint::new(2.0, 1.0));
        let corners = bounding_rect_at_angle(&q, 0.0);
        assert_eq!(key_vertex_of(&corners, &q), 0);
    }

    #[test]
    fn key_vertex_tie_breaks_to_lowest_index() {
        // Perfectly symmetric: all four triangles hold the same count.
        let corners = bounding_rect_at_angle(&unit_square(), 0.0);
        assert_eq!(key_vertex_of(&corners, &unit_square()), 0);
    }

    fn point_in_triangle(p: &BevPoint, a: &BevPoint, b: &BevPoint, c: &BevPoint) -> bool {
        // Brute-force sign test against each edge, inclusive.
        let s1 = b.sub(a).cross(&p.sub(a));
        let s2 = c.sub(b).cross(&p.sub(b));
        let s3 = a.sub(c).cross(&p.sub(c));
        let eps = 1e-9;
        (s1 >= -eps && s2 >= -eps && s3 >= -eps) || (s1 <= eps && s2 <= eps && s3 <= eps)
    }

    #[test]
    fn key_vertex_matches_triangle_count_oracle_on_l_shapes() {
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..30 {
            let a = rng.gen_range(2.5..4.5);
            let b = rng.gen_range(1.2..2.0);
            let q = l_shape(&mut rng, a, b, 0.01);
            let corners = bounding_rect_at_angle(&q, 0.0);
            let got = key_vertex_of(&corners, &q);
            let mut counts = [0usize; 4];
            for (i, count) in counts.iter_mut().enumerate() {
                let a = corners[i];
                let b = corners[(i + 1) % 4];
                let c = corners[(i + 3) % 4];
                *count = q.iter().filter(|p| point_in_triangle(p, &a, &b, &c)).count();
            }
            let best = (0..4).max_by_key(|&i| counts[i]).unwrap();
            assert_eq!(counts[got], counts[best]);
            assert_eq!(got, 0, "L corner at origin should win");
        }
    }

    #[test]
    fn off_edge_fraction_extremes() {
        let rect = BevRectangle::new(
            [
                BevPoint::new(0.0, 0.0),
                BevPoint::new(4.0, 0.0),
                BevPoint::new(4.0, 2.0),
                BevPoint::new(0.0, 2.0),
            ],
            0,
        );
        // All points exactly on the first key edge.
        let on_l1: Vec<BevPoint> = (0..10).map(|i| BevPoint::new(i as f64 * 0.4, 0.0)).collect();
        assert_relative_eq!(off_edge_fraction(&rect, &on_l1, 0.2), 0.0);
        // All points at the rectangle center, far from both edges.
        let center = vec![BevPoint::new(2.0, 1.0); 7];
        assert_relative_eq!(off_edge_fraction(&rect, &center, 0.2), 1.0);
    }

    #[test]
    fn off_edge_fraction_monotone_in_theta() {
        let mut rng = StdRng::seed_from_u64(6);
        let q: Vec<BevPoint> = (0..100)
            .map(|_| BevPoint::new(rng.gen_range(0.0..4.0), rng.gen_range(0.0..2.0)))
            .collect();
        let rect = BevRectangle::new(bounding_rect_at_angle(&q, 0.0), 0);
        let mut prev = 1.0;
        for i in 1..20 {
            let theta = i as f64 * 0.05;
            let f = off_edge_fraction(&rect, &q, theta);
            assert!(f <= prev + 1e-12);
            assert!((0.0..=1.0).contains(&f));
            prev = f;
        }
    }

    /// Points filling a right triangle with legs `a` (along +x) and `b`
    /// (along +z) meeting at the origin.
    fn filled_right_triangle(rng: &mut StdRng, a: f64, b: f64, n: usize) -> Vec<BevPoint> {
        let mut q = Vec::with_capacity(n);
        while q.len() < n {
            let x = rng.gen_range(0.0..a);
            let z = rng.gen_range(0.0..b);
            if x / a + z / b <= 1.0 {
                q.push(BevPoint::new(x, z));
            }
        }
        q
    }

    #[test]
    fn edge_support_resolves_the_area_tie() {
        let mut rng = StdRng::seed_from_u64(7);
        let q = filled_right_triangle(&mut rng, 3.0, 2.0, 800);
        let cfg = RectFitConfig::default();
        // Candidate 1: rectangle aligned with the legs.
        let legs = BevRectangle::new(bounding_rect_at_angle(&q, 0.0), 0);
        let key = key_vertex_of(legs.corners(), &q);
        let legs = BevRectangle::new(*legs.corners(), key);
        // Candidate 2: rectangle aligned with the hypotenuse.
        let hyp_angle = (-(2.0f64 / 3.0)).atan(); // direction of the hypotenuse
        let hyp_corners = bounding_rect_at_angle(&q, hyp_angle.rem_euclid(std::f64::consts::FRAC_PI_2));
        let hyp_key = key_vertex_of(&hyp_corners, &q);
        let hyp = BevRectangle::new(hyp_corners, hyp_key);
        // Both have (nearly) the same area, the classic ambiguity.
        assert!((legs.area() - hyp.area()).abs() / legs.area() < 0.05);
        // The leg-aligned rectangle explains far more points near its edges.
        let f_legs = off_edge_fraction(&legs, &q, cfg.theta_rect_fraction * legs.shorter_key_edge());
        let f_hyp = off_edge_fraction(&hyp, &q, cfg.theta_rect_fraction * hyp.shorter_key_edge());
        assert!(
            f_legs < f_hyp,
            "expected leg alignment to win: {f_legs} vs {f_hyp}"
        );
        // And the grid search picks (a rotation of) the leg alignment.
        let fit = fit_rectangle(&q, &cfg, Objective::EdgeSupport).unwrap();
        let key_dist = fit.key_vertex().norm();
        assert!(key_dist < 0.06, "key vertex {key_dist} m from the corner");
    }

    /// Two perpendicular leg segments meeting at the origin, with noise.
    /// Legs run along +x (length `a`) and +z (length `b`), ~10 points per
    /// meter, jitter sigma on every coordinate.
    fn l_shape(rng: &mut StdRng, a: f64, b: f64, sigma: f64) -> Vec<BevPoint> {
        let mut q = Vec::new();
        let noise = |rng: &mut StdRng| -> f64 {
            let u1: f64 = rng.gen_range(1e-12..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            sigma * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        };
        let na = (a * 10.0) as usize;
        for i in 0..=na {
            q.push(BevPoint::new(
                i as f64 * a / na as f64 + noise(rng),
                noise(rng),
            ));
        }
        let nb = (b * 10.0) as usize;
        for i in 1..=nb {
            q.push(BevPoint::new(
                noise(rng),
                i as f64 * b / nb as f64 + noise(rng),
            ));
        }
        q
    }

    fn rotate_all(q: &[BevPoint], angle: f64) -> Vec<BevPoint> {
        let (s, c) = angle.sin_cos();
        q.iter()
            .map(|p| BevPoint::new(p.x * c - p.z * s, p.x * s + p.z * c))
            .collect()
    }

    #[test]
    fn fit_recovers_rotated_l_orientation() {
        let mut rng = StdRng::seed_from_u64(8);
        let q0 = l_shape(&mut rng, 4.0, 1.8, 0.008);
        let truth = 30f64.to_radians();
        let q = rotate_all(&q0, truth);
        let cfg = RectFitConfig::default();
        let fit = fit_rectangle(&q, &cfg, Objective::EdgeSupport).unwrap();
        let dir = fit.corners()[1].sub(&fit.corners()[0]);
        let yaw = dir.z.atan2(dir.x);
        let delta = wrap_angle(yaw - truth).abs();
        let mod90 = delta
            .min((delta - std::f64::consts::FRAC_PI_2).abs())
            .min((delta - std::f64::consts::PI).abs());
        assert!(
            mod90 <= cfg.angle_step_deg.to_radians() + 1e-9,
            "yaw error {mod90}"
        );
        let theta = cfg.theta_rect_fraction * fit.shorter_key_edge();
        assert!(off_edge_fraction(&fit, &q, theta) <= 0.05);
        // Key vertex lands at the rotated corner (the origin).
        assert!(fit.key_vertex().norm() < 0.05);
    }

    #[test]
    fn fit_on_rectangle_outline_matches_direct_objective_evaluation() {
        let mut q = Vec::new();
        for i in 0..=40 {
            let x = i as f64 * 0.1;
            q.push(BevPoint::new(x, 0.0));
            q.push(BevPoint::new(x, 2.0));
        }
        for j in 1..20 {
            let z = j as f64 * 0.1;
            q.push(BevPoint::new(0.0, z));
            q.push(BevPoint::new(4.0, z));
        }
        let cfg = RectFitConfig::default();
        let fit = fit_rectangle(&q, &cfg, Objective::EdgeSupport).unwrap();
        let dir = fit.corners()[1].sub(&fit.corners()[0]);
        let yaw = dir.z.atan2(dir.x).rem_euclid(std::f64::consts::FRAC_PI_2);
        let near_zero = yaw.min(std::f64::consts::FRAC_PI_2 - yaw);
        assert!(near_zero <= cfg.angle_step_deg.to_radians() + 1e-9);
        // Independent evaluation of the objective on the chosen rectangle.
        let v = fit.key_vertex();
        let [(d1, _), (d2, _)] = fit.key_edges();
        let theta = cfg.theta_rect_fraction * fit.shorter_key_edge();
        let far = q
            .iter()
            .filter(|p| {
                let rel = p.sub(&v);
                d1.cross(&rel).abs() > theta && d2.cross(&rel).abs() > theta
            })
            .count();
        let f_direct = far as f64 / q.len() as f64;
        let f_fit = off_edge_fraction(&fit, &q, theta);
        assert_relative_eq!(f_fit, f_direct, epsilon = 1e-12);
    }

    #[test]
    fn argmin_is_equivariant_under_grid_rotations() {
        let mut rng = StdRng::seed_from_u64(9);
        let q = l_shape(&mut rng, 3.5, 1.6, 0.01);
        let cfg = RectFitConfig::default();
        let fit0 = fit_rectangle(&q, &cfg, Objective::EdgeSupport).unwrap();
        let k = 20; // 10 degrees
        let shift = k as f64 * cfg.angle_step_deg.to_radians();
        let q_rot = rotate_all(&q, shift);
        let fit1 = fit_rectangle(&q_rot, &cfg, Objective::EdgeSupport).unwrap();
        let v_expect = {
            let v = fit0.key_vertex();
            let (s, c) = shift.sin_cos();
            BevPoint::new(v.x * c - v.z * s, v.x * s + v.z * c)
        };
        assert!(fit1.key_vertex().distance(&v_expect) < 1e-6);
    }

    #[test]
    fn collinear_or_tiny_sets_are_rejected() {
        let line: Vec<BevPoint> = (0..10).map(|i| BevPoint::new(i as f64, 2.0)).collect();
        assert!(matches!(
            fit_rectangle(&line, &RectFitConfig::default(), Objective::EdgeSupport),
            Err(FitError::Collinear)
        ));
        let two = vec![BevPoint::new(0.0, 0.0), BevPoint::new(1.0, 1.0)];
        assert!(matches!(
            fit_rectangle(&two, &RectFitConfig::default(), Objective::EdgeSupport),
            Err(FitError::TooFewPoints(2))
        ));
    }

    #[test]
    fn denoise_clean_l_converges_immediately() {
        let mut rng = StdRng::seed_from_u64(10);
        let q = l_shape(&mut rng, 4.2, 1.75, 0.008);
        let cfg = RectFitConfig::default();
        let naive = fit_rectangle(&q, &cfg, Objective::EdgeSupport).unwrap();
        let out = denoise_key_vertex(&q, &cfg, Objective::EdgeSupport).unwrap();
        assert!(out.converged);
        // Clean data: the probe peels roll back and the single-pass fit
        // stands, with nothing removed from its support.
        assert!(out.rect.key_vertex().distance(&naive.key_vertex()) < 1e-9);
        assert!(out.removed.is_empty());
        assert!(out.rect.key_vertex().norm() < 0.05);
    }

    #[test]
    fn denoise_shakes_off_a_far_outlier() {
        let mut rng = StdRng::seed_from_u64(11);
        let mut worst_naive = 0.0f64;
        for trial in 0..20 {
            let mut q = l_shape(&mut rng, 4.2, 1.75, 0.008);
            // Contaminant ahead of the key corner, biased toward the x axis.
            q.push(BevPoint::new(-2.2, -0.8));
            let cfg = RectFitConfig::default();
            let naive = fit_rectangle(&q, &cfg, Objective::EdgeSupport).unwrap();
            let out = denoise_key_vertex(&q, &cfg, Objective::EdgeSupport).unwrap();
            let denoised_err = out.rect.key_vertex().norm();
            let naive_err = naive.key_vertex().norm();
            worst_naive = worst_naive.max(naive_err);
            assert!(
                denoised_err < 0.05,
                "trial {trial}: denoised key vertex off by {denoised_err}"
            );
            assert!(out.removed.contains(&(q.len() - 1)), "outlier not removed");
        }
        // The single-pass fit is pulled to the contaminant.
        assert!(worst_naive > 1.0);
    }

    #[test]
    fn denoise_floor_keeps_initial_fit_on_three_points() {
        let q = vec![
            BevPoint::new(0.0, 0.0),
            BevPoint::new(2.0, 0.1),
            BevPoint::new(0.3, 1.0),
        ];
        let cfg = RectFitConfig::default();
        let naive = fit_rectangle(&q, &cfg, Objective::EdgeSupport).unwrap();
        let out = denoise_key_vertex(&q, &cfg, Objective::EdgeSupport).unwrap();
        assert!(out.converged);
        assert_eq!(out.rect.corners(), naive.corners());
        assert!(out.removed.is_empty());
    }

    #[test]
    fn denoise_never_underflows_max_iterations() {
        let mut rng = StdRng::seed_from_u64(12);
        for _ in 0..20 {
            let n: usize = rng.gen_range(3..120);
            let q: Vec<BevPoint> = (0..n)
                .map(|_| BevPoint::new(rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)))
                .collect();
            let cfg = RectFitConfig::default();
            if let Ok(out) = denoise_key_vertex(&q, &cfg, Objective::EdgeSupport) {
                assert!(out.iterations <= cfg.max_denoise_iters);
                assert!(out.removed.len() <= n.saturating_sub(3));
            }
        }
    }

    fn wedge(left_ratio: f64, right_ratio: f64) -> FrustumRegion {
        FrustumRegion {
            box2d: crate::geom::Box2D::new(0.0, 0.0, 1.0, 1.0).unwrap(),
            points: PointSet::empty(),
            left_dir: BevPoint::new(left_ratio, 1.0).normalized(),
            right_dir: BevPoint::new(right_ratio, 1.0).normalized(),
            median_depth: None,
        }
    }

    #[test]
    fn intersect_is_identity_when_rect_touches_boundaries() {
        // Wedge between x/z = -0.5 and x/z = +0.5; rectangle spanning it.
        let frustum = wedge(-0.5, 0.5);
        let q = vec![
            BevPoint::new(-5.0, 10.0),
            BevPoint::new(5.0, 10.0),
            BevPoint::new(5.0, 12.0),
            BevPoint::new(-5.0, 12.0),
        ];
        let corners = bounding_rect_at_angle(&q, 0.0);
        // Key at corner (-5, 10), which sits on the left boundary line.
        let rect = BevRectangle::new(corners, 0);
        let out = intersect_frustum(&rect, &frustum).unwrap();
        for c in out.corners() {
            let best = rect
                .corners()
                .iter()
                .map(|r| r.distance(c))
                .fold(f64::INFINITY, f64::min);
            assert!(best < 1e-9, "corner moved by {best}");
        }
    }

    #[test]
    fn intersect_extends_occluded_side_to_boundary() {
        // Key vertex near the left boundary; observed extent falls short of
        // the right boundary and must be extended to it.
        let frustum = wedge(-0.3, 0.3);
        let q = vec![
            BevPoint::new(-2.9, 10.0),
            BevPoint::new(0.0, 10.0),
            BevPoint::new(0.0, 11.5),
            BevPoint::new(-2.9, 11.5),
        ];
        let rect = BevRectangle::new(bounding_rect_at_angle(&q, 0.0), 0);
        let out = intersect_frustum(&rect, &frustum).unwrap();
        // Containment: the completed rectangle contains the input.
        for c in rect.corners() {
            assert!(out.contains(c, 1e-9));
        }
        // The extended edge endpoint sits on the right boundary line.
        let touched = out
            .corners()
            .iter()
            .any(|c| frustum.right_dir.cross(c).abs() < 1e-9 * c.norm().max(1.0));
        assert!(touched, "no corner on the right boundary: {:?}", out.corners());
        // Idempotence.
        let again = intersect_frustum(&out, &frustum).unwrap();
        for (a, b) in out.corners().iter().zip(again.corners().iter()) {
            assert!(a.distance(b) < 1e-9);
        }
    }

    #[test]
    fn intersect_keeps_extent_when_parallel_to_boundary() {
        // Left boundary parallel to one key edge: that edge keeps its extent.
        let frustum = wedge(0.0, 0.5);
        let q = vec![
            BevPoint::new(0.5, 10.0),
            BevPoint::new(1.5, 10.0),
            BevPoint::new(1.5, 12.0),
            BevPoint::new(0.5, 12.0),
        ];
        let rect = BevRectangle::new(bounding_rect_at_angle(&q, 0.0), 0);
        let out = intersect_frustum(&rect, &frustum).unwrap();
        // The edge parallel to the left boundary (along +z from the key
        // vertex) cannot hit it; with the right boundary ahead of the box
        // both edges extend at most to the right line.
        for c in rect.corners() {
            assert!(out.contains(c, 1e-9));
        }
    }

    #[test]
    fn intersect_rejects_key_vertex_outside_cone() {
        let frustum = wedge(-0.1, 0.1);
        let q = vec![
            BevPoint::new(5.0, 10.0),
            BevPoint::new(6.0, 10.0),
            BevPoint::new(6.0, 11.0),
            BevPoint::new(5.0, 11.0),
        ];
        let rect = BevRectangle::new(bounding_rect_at_angle(&q, 0.0), 0);
        assert!(matches!(
            intersect_frustum(&rect, &frustum),
            Err(FitError::KeyVertexOutsideFrustum)
        ));
    }

    #[test]
    fn lift_takes_ground_and_mask_extremes() {
        let plane = Plane::new([0.0, -1.0, 0.0], 1.65).unwrap();
        let cloud = PointCloud::new(vec![
            Point3::new(0.0, 1.6, 10.0),
            Point3::new(1.0, 0.15, 10.0), // highest point: 1.5 above ground
            Point3::new(2.0, 1.0, 11.0),
        ]);
        let mask = PointSet::full(3);
        let rect = BevRectangle::new(
            [
                BevPoint::new(0.0, 9.0),
                BevPoint::new(4.0, 9.0),
                BevPoint::new(4.0, 11.0),
                BevPoint::new(0.0, 11.0),
            ],
            0,
        );
        let b = lift_to_3d(&rect, &mask, &cloud, &plane).unwrap();
        assert_relative_eq!(b.height, 1.5, epsilon = 1e-9);
        assert_relative_eq!(b.center.y, 1.65 - 0.75, epsilon = 1e-9);
        assert_relative_eq!(b.length, 4.0, epsilon = 1e-9);
        assert_relative_eq!(b.width, 2.0, epsilon = 1e-9);
    }

    #[test]
    fn lift_clamps_thin_slabs() {
        let plane = Plane::new([0.0, -1.0, 0.0], 1.65).unwrap();
        let cloud = PointCloud::new(vec![Point3::new(0.0, 1.6, 10.0)]);
        let mask = PointSet::full(1);
        let rect = BevRectangle::new(
            [
                BevPoint::new(0.0, 9.0),
                BevPoint::new(3.0, 9.0),
                BevPoint::new(3.0, 10.5),
                BevPoint::new(0.0, 10.5),
            ],
            0,
        );
        let b = lift_to_3d(&rect, &mask, &cloud, &plane).unwrap();
        assert_relative_eq!(b.height, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn size_filter_bounds_are_closed() {
        let filter = SizeFilter::default();
        let mk = |l: f64, w: f64, h: f64| {
            Box3D::new(Point3::new(0.0, 0.0, 10.0), l, w, h, 0.0).unwrap()
        };
        assert!(size_filter_keep(&mk(4.0, 1.8, 1.6), &filter));
        assert!(!size_filter_keep(&mk(15.0, 1.8, 1.6), &filter));
        assert!(size_filter_keep(&mk(7.0, 1.8, 1.6), &filter)); // boundary
        assert!(!size_filter_keep(&mk(7.0001, 1.8, 1.6), &filter));
        assert!(!size_filter_keep(&mk(4.0, 0.9, 1.6), &filter));
        assert!(!size_filter_keep(&mk(4.0, 1.8, 0.4), &filter));
    }

    #[test]
    fn key_corner_identity_survives_yaw_canonicalization() {
        // Lifting swaps length/width when needed; the physical key corner
        // must remain one of the box's BEV corners.
        let plane = Plane::new([0.0, -1.0, 0.0], 1.65).unwrap();
        let cloud = PointCloud::new(vec![Point3::new(0.5, 0.5, 9.3)]);
        let mask = PointSet::full(1);
        // Rectangle whose first edge is the SHORT one.
        let rect = BevRectangle::new(
            [
                BevPoint::new(0.0, 9.0),
                BevPoint::new(1.5, 9.0),
                BevPoint::new(1.5, 13.0),
                BevPoint::new(0.0, 13.0),
            ],
            2,
        );
        let key = rect.key_vertex();
        let b = lift_to_3d(&rect, &mask, &cloud, &plane).unwrap();
        assert!(b.length >= b.width);
        let match_dist = b
            .corners_bev()
            .iter()
            .map(|c| c.distance(&key))
            .fold(f64::INFINITY, f64::min);
        assert!(match_dist < 1e-9);
    }
}
