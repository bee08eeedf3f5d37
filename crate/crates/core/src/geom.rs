//! Shared geometric primitives and coordinate-frame conventions.
//!
//! Everything runs in the camera-rectified frame: x right, y down, z forward.
//! The vertical axis is y, so the bird's-eye view (BEV) is the x-z plane.
//! Yaw is the rotation of a box's length axis away from +x, counterclockwise
//! when viewed from above.

use nalgebra::{Matrix3x4, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index of a point within its owning [`PointCloud`].
pub type PointId = u32;

#[derive(Debug, Error)]
pub enum GeomError {
    #[error("point behind camera (z = {0})")]
    BehindCamera(f64),
    #[error("projection produced a non-positive homogeneous depth")]
    DegenerateProjection,
    #[error("plane normal has zero length")]
    ZeroNormal,
    #[error("plane normal is horizontal; cannot orient it upward")]
    HorizontalNormal,
    #[error("invalid 2D box: ({0}, {1}) .. ({2}, {3})")]
    InvalidBox2d(f64, f64, f64, f64),
    #[error("invalid 3D box dimensions: l={0} w={1} h={2}")]
    InvalidBox3d(f64, f64, f64),
    #[error("camera projection matrix is rank-deficient")]
    RankDeficientProjection,
}

/// A point in the camera-rectified frame, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        (dx * dx + dy * dy + dz * dz).sqrt()
    }
}

/// A point in the BEV (x-z) plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BevPoint {
    pub x: f64,
    pub z: f64,
}

impl BevPoint {
    pub fn new(x: f64, z: f64) -> Self {
        Self { x, z }
    }

    pub fn distance(&self, other: &BevPoint) -> f64 {
        let dx = self.x - other.x;
        let dz = self.z - other.z;
        (dx * dx + dz * dz).sqrt()
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.z * self.z).sqrt()
    }

    pub fn dot(&self, other: &BevPoint) -> f64 {
        self.x * other.x + self.z * other.z
    }

    /// 2D cross product with z playing the role of the second axis.
    pub fn cross(&self, other: &BevPoint) -> f64 {
        self.x * other.z - self.z * other.x
    }

    pub fn sub(&self, other: &BevPoint) -> BevPoint {
        BevPoint::new(self.x - other.x, self.z - other.z)
    }

    pub fn add(&self, other: &BevPoint) -> BevPoint {
        BevPoint::new(self.x + other.x, self.z + other.z)
    }

    pub fn scale(&self, s: f64) -> BevPoint {
        BevPoint::new(self.x * s, self.z * s)
    }

    pub fn normalized(&self) -> BevPoint {
        let n = self.norm();
        BevPoint::new(self.x / n, self.z / n)
    }
}

/// Drop the vertical coordinate; pure projection onto the ground plane axes.
pub fn bev_of(p: &Point3) -> BevPoint {
    BevPoint::new(p.x, p.z)
}

/// A flat set of 3D points with dense, stable indices.
#[derive(Debug, Clone, Default)]
pub struct PointCloud {
    points: Vec<Point3>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn get(&self, id: PointId) -> Point3 {
        self.points[id as usize]
    }

    pub fn iter(&self) -> impl Iterator<Item = (PointId, &Point3)> {
        self.points.iter().enumerate().map(|(i, p)| (i as PointId, p))
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }
}

/// A sorted, duplicate-free set of point ids referencing one cloud.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PointSet {
    ids: Vec<PointId>,
}

impl PointSet {
    pub fn from_vec(mut ids: Vec<PointId>) -> Self {
        ids.sort_unstable();
        ids.dedup();
        Self { ids }
    }

    /// Caller guarantees `ids` is sorted and duplicate-free.
    pub fn from_sorted(ids: Vec<PointId>) -> Self {
        debug_assert!(ids.windows(2).all(|w| w[0] < w[1]));
        Self { ids }
    }

    pub fn full(n: usize) -> Self {
        Self {
            ids: (0..n as PointId).collect(),
        }
    }

    pub fn empty() -> Self {
        Self { ids: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: PointId) -> bool {
        self.ids.binary_search(&id).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = PointId> + '_ {
        self.ids.iter().copied()
    }

    pub fn ids(&self) -> &[PointId] {
        &self.ids
    }

    /// Ids of the cloud (size `n`) not present in this set.
    pub fn complement(&self, n: usize) -> PointSet {
        let mut out = Vec::with_capacity(n - self.ids.len());
        let mut it = self.ids.iter().peekable();
        for id in 0..n as PointId {
            match it.peek() {
                Some(&&next) if next == id => {
                    it.next();
                }
                _ => out.push(id),
            }
        }
        PointSet::from_sorted(out)
    }

    pub fn minus(&self, other: &PointSet) -> PointSet {
        let out = self
            .ids
            .iter()
            .copied()
            .filter(|&id| !other.contains(id))
            .collect();
        PointSet::from_sorted(out)
    }
}

/// Ground plane in Hessian normal form: `{ p : normal . p + offset = 0 }`.
///
/// The normal is unit length and oriented upward in the camera frame,
/// i.e. `normal.y < 0` since +y points down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub normal: [f64; 3],
    pub offset: f64,
}

impl Plane {
    pub fn new(normal: [f64; 3], offset: f64) -> Result<Self, GeomError> {
        let n = Vector3::new(normal[0], normal[1], normal[2]);
        let len = n.norm();
        if len < 1e-12 {
            return Err(GeomError::ZeroNormal);
        }
        let mut n = n / len;
        let mut d = offset / len;
        if n.y.abs() < 1e-12 {
            return Err(GeomError::HorizontalNormal);
        }
        if n.y > 0.0 {
            n = -n;
            d = -d;
        }
        Ok(Self {
            normal: [n.x, n.y, n.z],
            offset: d,
        })
    }

    pub fn signed_distance(&self, p: &Point3) -> f64 {
        self.normal[0] * p.x + self.normal[1] * p.y + self.normal[2] * p.z + self.offset
    }

    pub fn distance(&self, p: &Point3) -> f64 {
        self.signed_distance(p).abs()
    }

    /// Vertical coordinate of the plane below the given BEV location.
    pub fn height_at(&self, bev: &BevPoint) -> f64 {
        -(self.offset + self.normal[0] * bev.x + self.normal[2] * bev.z) / self.normal[1]
    }

    /// Angle between the plane normal and the vertical axis, in radians.
    pub fn tilt(&self) -> f64 {
        (-self.normal[1]).clamp(-1.0, 1.0).acos()
    }
}

/// Axis-aligned 2D bounding box in image pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box2D {
    pub u_min: f64,
    pub v_min: f64,
    pub u_max: f64,
    pub v_max: f64,
}

impl Box2D {
    pub fn new(u_min: f64, v_min: f64, u_max: f64, v_max: f64) -> Result<Self, GeomError> {
        if !(u_min < u_max && v_min < v_max)
            || !(u_min.is_finite() && v_min.is_finite() && u_max.is_finite() && v_max.is_finite())
        {
            return Err(GeomError::InvalidBox2d(u_min, v_min, u_max, v_max));
        }
        Ok(Self {
            u_min,
            v_min,
            u_max,
            v_max,
        })
    }

    /// Closed membership: boundary pixels count as inside.
    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= self.u_min && u <= self.u_max && v >= self.v_min && v <= self.v_max
    }

    pub fn width(&self) -> f64 {
        self.u_max - self.u_min
    }

    pub fn height(&self) -> f64 {
        self.v_max - self.v_min
    }
}

/// Oriented 7-DoF box: centroid, dimensions, and yaw about the vertical axis.
///
/// Roll and pitch are zero by construction. Length is always the longer
/// horizontal dimension; the constructor canonicalizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub center: Point3,
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub yaw: f64,
}

/// Wrap an angle to [-pi, pi).
pub fn wrap_angle(a: f64) -> f64 {
    let mut a = (a + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI);
    if a < 0.0 {
        a += 2.0 * std::f64::consts::PI;
    }
    a - std::f64::consts::PI
}

impl Box3D {
    pub fn new(
        center: Point3,
        length: f64,
        width: f64,
        height: f64,
        yaw: f64,
    ) -> Result<Self, GeomError> {
        if !(length > 0.0 && width > 0.0 && height > 0.0) || !center.is_finite() {
            return Err(GeomError::InvalidBox3d(length, width, height));
        }
        // Canonical form: length >= width, with yaw following the long axis.
        let (length, width, yaw) = if width > length {
            (width, length, wrap_angle(yaw + std::f64::consts::FRAC_PI_2))
        } else {
            (length, width, wrap_angle(yaw))
        };
        Ok(Self {
            center,
            length,
            width,
            height,
            yaw,
        })
    }

    /// Direction of the length axis in the BEV plane.
    pub fn length_dir(&self) -> BevPoint {
        BevPoint::new(self.yaw.cos(), self.yaw.sin())
    }

    /// Direction of the width axis in the BEV plane.
    pub fn width_dir(&self) -> BevPoint {
        BevPoint::new(-self.yaw.sin(), self.yaw.cos())
    }

    /// BEV footprint corners in counterclockwise order (viewed from above).
    pub fn corners_bev(&self) -> [BevPoint; 4] {
        let c = bev_of(&self.center);
        let u = self.length_dir().scale(self.length / 2.0);
        let v = self.width_dir().scale(self.width / 2.0);
        [
            c.sub(&u).sub(&v),
            c.add(&u).sub(&v),
            c.add(&u).add(&v),
            c.sub(&u).add(&v),
        ]
    }

    /// All 8 corners; the first four lie on the bottom face.
    pub fn corners(&self) -> [Point3; 8] {
        let bev = self.corners_bev();
        let y_bottom = self.center.y + self.height / 2.0;
        let y_top = self.center.y - self.height / 2.0;
        let mut out = [Point3::new(0.0, 0.0, 0.0); 8];
        for (i, b) in bev.iter().enumerate() {
            out[i] = Point3::new(b.x, y_bottom, b.z);
            out[i + 4] = Point3::new(b.x, y_top, b.z);
        }
        out
    }

    /// Vertical interval occupied by the box, as (y_top, y_bottom) with y down.
    pub fn y_interval(&self) -> (f64, f64) {
        (
            self.center.y - self.height / 2.0,
            self.center.y + self.height / 2.0,
        )
    }

    pub fn volume(&self) -> f64 {
        self.length * self.width * self.height
    }
}

/// Camera model for one KITTI-style frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    /// 3x4 projection: image <- rectified-camera homogeneous coordinates.
    pub projection: Matrix3x4<f64>,
    /// 4x4 rigid transform: camera <- lidar.
    pub lidar_to_cam: Matrix4<f64>,
    /// 4x4 rectifying rotation.
    pub rectification: Matrix4<f64>,
}

impl Calibration {
    pub fn new(
        projection: Matrix3x4<f64>,
        lidar_to_cam: Matrix4<f64>,
        rectification: Matrix4<f64>,
    ) -> Result<Self, GeomError> {
        let block = projection.fixed_view::<3, 3>(0, 0).into_owned();
        if block.determinant().abs() < 1e-9 {
            return Err(GeomError::RankDeficientProjection);
        }
        Ok(Self {
            projection,
            lidar_to_cam,
            rectification,
        })
    }

    /// Pinhole calibration with identity extrinsics, mostly for synthetic data.
    pub fn from_intrinsics(f: f64, cu: f64, cv: f64) -> Self {
        let projection = Matrix3x4::new(
            f, 0.0, cu, 0.0, //
            0.0, f, cv, 0.0, //
            0.0, 0.0, 1.0, 0.0,
        );
        Self {
            projection,
            lidar_to_cam: Matrix4::identity(),
            rectification: Matrix4::identity(),
        }
    }

    pub fn fu(&self) -> f64 {
        self.projection[(0, 0)]
    }

    pub fn cu(&self) -> f64 {
        self.projection[(0, 2)]
    }

    pub fn cv(&self) -> f64 {
        self.projection[(1, 2)]
    }

    /// Combined lidar -> rectified-camera transform.
    pub fn lidar_to_rect_matrix(&self) -> Matrix4<f64> {
        self.rectification * self.lidar_to_cam
    }
}

/// Project a camera-frame point to pixel coordinates.
pub fn project_to_image(p: &Point3, calib: &Calibration) -> Result<(f64, f64), GeomError> {
    if p.z <= 0.0 {
        return Err(GeomError::BehindCamera(p.z));
    }
    let h = calib.projection * Vector4::new(p.x, p.y, p.z, 1.0);
    if h.z <= 1e-12 {
        return Err(GeomError::DegenerateProjection);
    }
    Ok((h.x / h.z, h.y / h.z))
}

/// Apply a 4x4 homogeneous rigid transform to a point.
pub fn transform_point(m: &Matrix4<f64>, p: &Point3) -> Point3 {
    let v = m * Vector4::new(p.x, p.y, p.z, 1.0);
    Point3::new(v.x, v.y, v.z)
}
