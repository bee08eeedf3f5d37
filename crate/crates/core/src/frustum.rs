//! Frustum extraction: the non-ground points projecting into a 2D box, the
//! BEV traces of the box's left/right side planes, and depth ordering of
//! vehicles so nearer ones are processed first.

use crate::geom::{project_to_image, BevPoint, Box2D, Calibration, PointCloud, PointSet};

/// Frustum of one 2D box.
///
/// The boundary directions are the BEV traces of the vertical planes through
/// the camera center and the box's left/right edges: lines through the BEV
/// origin with direction `((u - c_u) / f_u, 1)`, normalized. Both have a
/// positive z component.
#[derive(Debug, Clone)]
pub struct FrustumRegion {
    pub box2d: Box2D,
    pub points: PointSet,
    pub left_dir: BevPoint,
    pub right_dir: BevPoint,
    pub median_depth: Option<f64>,
}

impl FrustumRegion {
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Strictly-inside test against the two boundary lines (cross-product
    /// sign): right of the left boundary and left of the right boundary.
    pub fn contains_bev(&self, p: &BevPoint) -> bool {
        self.left_dir.cross(p) < 0.0 && self.right_dir.cross(p) > 0.0
    }
}

fn median(sorted: &[f64]) -> Option<f64> {
    match sorted.len() {
        0 => None,
        n if n % 2 == 1 => Some(sorted[n / 2]),
        n => Some(0.5 * (sorted[n / 2 - 1] + sorted[n / 2])),
    }
}

/// Collect the non-ground points whose projection falls inside `box2d`
/// (closed membership) and derive the BEV boundary directions.
pub fn extract_frustum(
    cloud: &PointCloud,
    nonground: &PointSet,
    box2d: Box2D,
    calib: &Calibration,
) -> FrustumRegion {
    let mut ids = Vec::new();
    for id in nonground.iter() {
        let p = cloud.get(id);
        if let Ok((u, v)) = project_to_image(&p, calib) {
            if box2d.contains(u, v) {
                ids.push(id);
            }
        }
    }
    let mut depths: Vec<f64> = ids.iter().map(|&id| cloud.get(id).z).collect();
    depths.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let left_dir = BevPoint::new((box2d.u_min - calib.cu()) / calib.fu(), 1.0).normalized();
    let right_dir = BevPoint::new((box2d.u_max - calib.cu()) / calib.fu(), 1.0).normalized();
    FrustumRegion {
        box2d,
        points: PointSet::from_sorted(ids),
        left_dir,
        right_dir,
        median_depth: median(&depths),
    }
}

/// Processing order: ascending median depth, empty frustums last, ties broken
/// by the 2D box's left edge and then by input index.
pub fn order_by_depth(frustums: &[FrustumRegion]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..frustums.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = &frustums[a];
        let fb = &frustums[b];
        let key = |f: &FrustumRegion| (f.median_depth.is_none(), f.median_depth.unwrap_or(0.0));
        let (ea, da) = key(fa);
        let (eb, db) = key(fb);
        ea.cmp(&eb)
            .then(da.partial_cmp(&db).unwrap())
            .then(fa.box2d.u_min.partial_cmp(&fb.box2d.u_min).unwrap())
            .then(a.cmp(&b))
    });
    order
}
