//! Independent reference implementations backing the acceptance suite.
//! Everything here is deliberately simple and separate from the library's
//! algorithm paths.

use lidarlabel::geom::{BevPoint, Point3, PointCloud, PointId};
use rand::rngs::StdRng;
use rand::Rng;

/// O(n^2) union-find connected components of the strict epsilon graph.
pub fn brute_components(cloud: &PointCloud, phi: f64) -> Vec<Vec<PointId>> {
    let n = cloud.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if cloud.get(i as PointId).distance(&cloud.get(j as PointId)) < phi {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[rj] = ri;
                }
            }
        }
    }
    let mut map: std::collections::HashMap<usize, Vec<PointId>> = std::collections::HashMap::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        map.entry(r).or_default().push(i as PointId);
    }
    let mut out: Vec<Vec<PointId>> = map.into_values().collect();
    for c in out.iter_mut() {
        c.sort_unstable();
    }
    out.sort_by_key(|c| c[0]);
    out
}

pub fn gaussian(rng: &mut StdRng, sigma: f64) -> f64 {
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    sigma * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn rotate(p: &BevPoint, angle: f64) -> BevPoint {
    let (s, c) = angle.sin_cos();
    BevPoint::new(p.x * c - p.z * s, p.x * s + p.z * c)
}

/// An L-shaped mask: two perpendicular noisy leg segments meeting at a known
/// corner, in a rotated and translated world pose.
pub struct LMask {
    pub points: Vec<BevPoint>,
    pub corner: BevPoint,
    /// Leg lengths along the local +x and +z axes.
    pub legs: (f64, f64),
    pub pose_angle: f64,
    pub pose_offset: BevPoint,
}

impl LMask {
    /// Map a point from the mask's local frame into the world.
    pub fn to_world(&self, local: &BevPoint) -> BevPoint {
        rotate(local, self.pose_angle).add(&self.pose_offset)
    }
}

pub fn l_mask(rng: &mut StdRng, sigma: f64) -> LMask {
    let la = rng.gen_range(3.5..4.5);
    let lb = rng.gen_range(1.5..2.0);
    let pose_angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let pose_offset = BevPoint::new(rng.gen_range(-8.0..8.0), rng.gen_range(8.0..25.0));
    let mut local = Vec::new();
    let density = 10.5;
    let na = (la * density) as usize;
    for i in 0..=na {
        local.push(BevPoint::new(
            i as f64 * la / na as f64 + gaussian(rng, sigma),
            gaussian(rng, sigma),
        ));
    }
    let nb = (lb * density) as usize;
    for i in 1..=nb {
        local.push(BevPoint::new(
            gaussian(rng, sigma),
            i as f64 * lb / nb as f64 + gaussian(rng, sigma),
        ));
    }
    let mask = LMask {
        points: Vec::new(),
        corner: BevPoint::new(0.0, 0.0),
        legs: (la, lb),
        pose_angle,
        pose_offset,
    };
    let points = local.iter().map(|p| mask.to_world(p)).collect();
    let corner = mask.to_world(&BevPoint::new(0.0, 0.0));
    LMask {
        points,
        corner,
        ..mask
    }
}

/// Contaminant placement relative to the L's local frame. Leakage comes from
/// a single neighboring surface: either beyond the vehicle (far side) or
/// alongside one visible face. Offsets are 2-5 m from the mask.
pub enum OutlierSource {
    Far,
    NearLegA,
    NearLegB,
}

pub fn add_outliers(rng: &mut StdRng, mask: &LMask, source: &OutlierSource, count: usize) -> Vec<BevPoint> {
    let (la, lb) = mask.legs;
    let mut out = Vec::new();
    for _ in 0..count {
        let local = match source {
            OutlierSource::Far => BevPoint::new(
                la + rng.gen_range(0.5..2.0),
                lb + rng.gen_range(0.5..2.0),
            ),
            OutlierSource::NearLegA => BevPoint::new(
                -rng.gen_range(2.0..4.0),
                -rng.gen_range(0.6..1.2),
            ),
            OutlierSource::NearLegB => BevPoint::new(
                -rng.gen_range(0.6..1.2),
                -rng.gen_range(2.0..4.0),
            ),
        };
        out.push(mask.to_world(&local));
    }
    out
}

/// Deterministic grid fill of the right triangle with legs `a` and `b`
/// meeting at the origin, then rotated and translated.
pub fn filled_triangle(a: f64, b: f64, spacing: f64, angle: f64, offset: BevPoint) -> Vec<BevPoint> {
    let mut out = Vec::new();
    let nx = (a / spacing).ceil() as usize;
    let nz = (b / spacing).ceil() as usize;
    for i in 0..=nx {
        for j in 0..=nz {
            let x = i as f64 * a / nx as f64;
            let z = j as f64 * b / nz as f64;
            if x / a + z / b <= 1.0 + 1e-12 {
                out.push(rotate(&BevPoint::new(x, z), angle).add(&offset));
            }
        }
    }
    out
}

fn point_in_convex_ccw(p: &BevPoint, poly: &[BevPoint]) -> bool {
    let n = poly.len();
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        if b.sub(&a).cross(&p.sub(&a)) < 0.0 {
            return false;
        }
    }
    true
}

/// Stratified (jittered-grid) Monte-Carlo estimate of |A intersect B| over
/// `n_side`^2 samples in the union's bounding box. Returns the estimate,
/// the sampling box area and the sample count, so the caller can form the
/// binomial sigma under the analytic value; stratification keeps the actual
/// error well inside the plain Monte-Carlo bound.
pub fn mc_intersection_area(
    rng: &mut StdRng,
    a: &[BevPoint],
    b: &[BevPoint],
    n_side: usize,
) -> (f64, f64, usize) {
    let mut x_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    let mut z_min = f64::INFINITY;
    let mut z_max = f64::NEG_INFINITY;
    for p in a.iter().chain(b.iter()) {
        x_min = x_min.min(p.x);
        x_max = x_max.max(p.x);
        z_min = z_min.min(p.z);
        z_max = z_max.max(p.z);
    }
    let area_box = (x_max - x_min) * (z_max - z_min);
    let n = n_side * n_side;
    let mut hits = 0usize;
    for i in 0..n_side {
        for j in 0..n_side {
            let x = x_min + (x_max - x_min) * (i as f64 + rng.gen::<f64>()) / n_side as f64;
            let z = z_min + (z_max - z_min) * (j as f64 + rng.gen::<f64>()) / n_side as f64;
            let p = BevPoint::new(x, z);
            if point_in_convex_ccw(&p, a) && point_in_convex_ccw(&p, b) {
                hits += 1;
            }
        }
    }
    ((hits as f64 / n as f64) * area_box, area_box, n)
}

/// Random camera-frame point cloud for the component-oracle runs.
pub fn random_cloud(rng: &mut StdRng, n: usize, extent: f64) -> PointCloud {
    PointCloud::new(
        (0..n)
            .map(|_| {
                Point3::new(
                    rng.gen_range(-extent..extent),
                    rng.gen_range(-0.6..0.6),
                    rng.gen_range(-extent..extent),
                )
            })
            .collect(),
    )
}
