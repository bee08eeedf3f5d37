//! Deterministic synthetic LiDAR scenes with exact ground truth.
//!
//! Vehicles are sampled as point grids on selected box faces, with seeded
//! Gaussian jitter, optional detached clutter blobs, phantom occluder boxes
//! that shadow whatever lies behind them, and a sampled ground plane. Every
//! non-ground point carries the index of the spec entry that produced it,
//! which is what the differential tests lean on.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{
    bev_of, project_to_image, BevPoint, Box2D, Box3D, Calibration, Point3, PointCloud,
};
use crate::kitti::{box3d_to_label, write_calibration, write_labels, write_scan, SceneBox2D, SceneInput};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("vehicle {0} projects outside the image")]
    OutsideFov(usize),
    #[error("invalid spec: {0}")]
    BadSpec(String),
    #[error("spec line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Face {
    Front,
    Back,
    Left,
    Right,
    Top,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum FaceSelection {
    /// Side faces whose outward normal points toward the camera.
    Auto,
    Faces(Vec<Face>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VehicleSpec {
    pub box3d: Box3D,
    pub faces: FaceSelection,
    pub point_spacing: f64,
    pub noise_sigma: f64,
    pub outlier_count: usize,
    /// Labeled vehicles get a 2D box and a ground-truth entry; unlabeled
    /// entries act as clutter (stray structure near a vehicle).
    pub labeled: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundSpec {
    /// Plane height (camera frame, +y down).
    pub y: f64,
    pub x_range: (f64, f64),
    pub z_range: (f64, f64),
    pub spacing: f64,
    /// Vertical jitter; clamped to 3 sigma.
    pub sigma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraSpec {
    pub focal: f64,
    pub cu: f64,
    pub cv: f64,
    pub image_width: f64,
    pub image_height: f64,
}

impl Default for CameraSpec {
    fn default() -> Self {
        Self {
            focal: 700.0,
            cu: 621.0,
            cv: 187.5,
            image_width: 1242.0,
            image_height: 375.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub ground: GroundSpec,
    pub camera: CameraSpec,
    pub vehicles: Vec<VehicleSpec>,
    /// Phantom boxes that cast shadows but add no points.
    pub occluders: Vec<Box3D>,
}

/// Per-vehicle generation bookkeeping.
#[derive(Debug, Clone, Default)]
pub struct VehicleStats {
    pub generated_points: usize,
    pub shadowed_points: usize,
}

#[derive(Debug)]
pub struct SynthScene {
    pub scene: SceneInput,
    /// Ground-truth boxes for the labeled vehicles, in label-file order.
    pub gt: Vec<Box3D>,
    /// For each labeled vehicle, its index in `spec.vehicles`.
    pub gt_spec_indices: Vec<usize>,
    /// Per point: index into `spec.vehicles`, or -1 for ground.
    pub point_labels: Vec<i32>,
    /// Indexed like `spec.vehicles`.
    pub stats: Vec<VehicleStats>,
}

fn gaussian(rng: &mut StdRng, sigma: f64) -> f64 {
    if sigma <= 0.0 {
        return 0.0;
    }
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    sigma * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn grid_steps(extent: f64, spacing: f64) -> usize {
    ((extent / spacing).round() as usize).max(1) + 1
}

/// Which side faces a camera at the BEV origin can see.
fn visible_side_faces(b: &Box3D) -> Vec<Face> {
    let c = bev_of(&b.center);
    let u = b.length_dir();
    let v = b.width_dir();
    let mut out = Vec::new();
    let candidates = [
        (Face::Front, u, b.length / 2.0),
        (Face::Back, u.scale(-1.0), b.length / 2.0),
        (Face::Left, v, b.width / 2.0),
        (Face::Right, v.scale(-1.0), b.width / 2.0),
    ];
    for (face, normal, half) in candidates {
        let face_center = c.add(&normal.scale(half));
        if normal.dot(&face_center) < -1e-9 {
            out.push(face);
        }
    }
    out
}

/// Sample one face as a regular grid in the box's local frame.
fn sample_face(b: &Box3D, face: Face, spacing: f64, sigma: f64, rng: &mut StdRng) -> Vec<Point3> {
    let c = bev_of(&b.center);
    let u = b.length_dir();
    let v = b.width_dir();
    let y_bottom = b.center.y + b.height / 2.0;
    let mut out = Vec::new();
    let mut push = |lu: f64, lv: f64, t: f64, rng: &mut StdRng| {
        let bev = c.add(&u.scale(lu)).add(&v.scale(lv));
        out.push(Point3::new(
            bev.x + gaussian(rng, sigma),
            y_bottom - t + gaussian(rng, sigma),
            bev.z + gaussian(rng, sigma),
        ));
    };
    let (hl, hw, h) = (b.length / 2.0, b.width / 2.0, b.height);
    match face {
        Face::Front | Face::Back => {
            let lu = if face == Face::Front { hl } else { -hl };
            let nv = grid_steps(b.width, spacing);
            let nt = grid_steps(h, spacing);
            for i in 0..nv {
                for j in 0..nt {
                    let lv = -hw + b.width * i as f64 / (nv - 1).max(1) as f64;
                    let t = h * j as f64 / (nt - 1).max(1) as f64;
                    push(lu, lv, t, rng);
                }
            }
        }
        Face::Left | Face::Right => {
            let lv = if face == Face::Left { hw } else { -hw };
            let nu = grid_steps(b.length, spacing);
            let nt = grid_steps(h, spacing);
            for i in 0..nu {
                for j in 0..nt {
                    let lu = -hl + b.length * i as f64 / (nu - 1).max(1) as f64;
                    let t = h * j as f64 / (nt - 1).max(1) as f64;
                    push(lu, lv, t, rng);
                }
            }
        }
        Face::Top => {
            let nu = grid_steps(b.length, spacing);
            let nv = grid_steps(b.width, spacing);
            for i in 0..nu {
                for j in 0..nv {
                    let lu = -hl + b.length * i as f64 / (nu - 1).max(1) as f64;
                    let lv = -hw + b.width * j as f64 / (nv - 1).max(1) as f64;
                    push(lu, lv, h, rng);
                }
            }
        }
    }
    out
}

/// True when the segment from the camera origin to `p` passes through the
/// box strictly before reaching `p` (slab test in the box's local frame).
fn shadowed_by(p: &Point3, occ: &Box3D) -> bool {
    let u = occ.length_dir();
    let v = occ.width_dir();
    let cb = bev_of(&occ.center);
    // Ray r(t) = t * p for t in (0, 1). Local coordinates along u, v, y.
    let proj = |q_bev: BevPoint, axis: &BevPoint| q_bev.dot(axis);
    let o_u = proj(cb.scale(-1.0), &u);
    let o_v = proj(cb.scale(-1.0), &v);
    let o_y = -occ.center.y;
    let d_u = proj(bev_of(p), &u);
    let d_v = proj(bev_of(p), &v);
    let d_y = p.y;
    let half = [occ.length / 2.0, occ.width / 2.0, occ.height / 2.0];
    let origin = [o_u, o_v, o_y];
    let dir = [d_u, d_v, d_y];
    let mut t_min = 0.0f64;
    let mut t_max = 1.0f64 - 1e-9;
    for k in 0..3 {
        if dir[k].abs() < 1e-12 {
            if origin[k].abs() > half[k] {
                return false;
            }
            continue;
        }
        let t1 = (-half[k] - origin[k]) / dir[k];
        let t2 = (half[k] - origin[k]) / dir[k];
        let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
        t_min = t_min.max(lo);
        t_max = t_max.min(hi);
        if t_min > t_max {
            return false;
        }
    }
    true
}

/// Generate the scene: face grids, noise, outliers, ground, tight 2D boxes
/// from the 8 projected corners, and occlusion shadowing.
pub fn generate(spec: &SynthSpec) -> Result<SynthScene, SynthError> {
    let mut rng = StdRng::seed_from_u64(spec.seed);
    let calib = Calibration::from_intrinsics(spec.camera.focal, spec.camera.cu, spec.camera.cv);
    let mut points: Vec<Point3> = Vec::new();
    let mut labels: Vec<i32> = Vec::new();
    let mut stats = vec![VehicleStats::default(); spec.vehicles.len()];

    for (vi, vehicle) in spec.vehicles.iter().enumerate() {
        let faces = match &vehicle.faces {
            FaceSelection::Auto => visible_side_faces(&vehicle.box3d),
            FaceSelection::Faces(fs) => fs.clone(),
        };
        let mut generated = 0usize;
        for face in faces {
            for p in sample_face(
                &vehicle.box3d,
                face,
                vehicle.point_spacing,
                vehicle.noise_sigma,
                &mut rng,
            ) {
                points.push(p);
                labels.push(vi as i32);
                generated += 1;
            }
        }
        // Outliers scattered in a BEV ring around the vehicle.
        let b = &vehicle.box3d;
        for _ in 0..vehicle.outlier_count {
            let ang: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let radius = b.length.hypot(b.width) / 2.0 + rng.gen_range(0.3..1.5);
            let bev = bev_of(&b.center).add(&BevPoint::new(ang.cos(), ang.sin()).scale(radius));
            let y = b.center.y + rng.gen_range(-b.height / 2.0..b.height / 2.0);
            points.push(Point3::new(bev.x, y, bev.z));
            labels.push(vi as i32);
            generated += 1;
        }
        stats[vi].generated_points = generated;
    }

    // Ground grid with clamped vertical jitter.
    let g = &spec.ground;
    let nx = grid_steps(g.x_range.1 - g.x_range.0, g.spacing);
    let nz = grid_steps(g.z_range.1 - g.z_range.0, g.spacing);
    for i in 0..nx {
        for j in 0..nz {
            let x = g.x_range.0 + (g.x_range.1 - g.x_range.0) * i as f64 / (nx - 1).max(1) as f64;
            let z = g.z_range.0 + (g.z_range.1 - g.z_range.0) * j as f64 / (nz - 1).max(1) as f64;
            let dy = gaussian(&mut rng, g.sigma).clamp(-3.0 * g.sigma, 3.0 * g.sigma);
            points.push(Point3::new(x, g.y + dy, z));
            labels.push(-1);
        }
    }

    // Occlusion shadowing over everything generated so far. Every solid box
    // casts a shadow: the phantom occluders and the vehicles themselves
    // (a scan cannot see through a nearer vehicle), except that points are
    // never shadowed by their own box.
    let mut kept_points = Vec::with_capacity(points.len());
    let mut kept_labels = Vec::with_capacity(labels.len());
    for (p, l) in points.into_iter().zip(labels.into_iter()) {
        let by_occluder = spec.occluders.iter().any(|occ| shadowed_by(&p, occ));
        let by_vehicle = || {
            spec.vehicles
                .iter()
                .enumerate()
                .any(|(vi, v)| vi as i32 != l && shadowed_by(&p, &v.box3d))
        };
        if by_occluder || by_vehicle() {
            if l >= 0 {
                stats[l as usize].shadowed_points += 1;
            }
            continue;
        }
        kept_points.push(p);
        kept_labels.push(l);
    }

    // Tight 2D boxes from the 8 projected corners of each labeled vehicle.
    let mut boxes2d = Vec::new();
    let mut gt = Vec::new();
    let mut gt_spec_indices = Vec::new();
    for (vi, vehicle) in spec.vehicles.iter().enumerate() {
        if !vehicle.labeled {
            continue;
        }
        let mut u_lo = f64::INFINITY;
        let mut u_hi = f64::NEG_INFINITY;
        let mut v_lo = f64::INFINITY;
        let mut v_hi = f64::NEG_INFINITY;
        for corner in vehicle.box3d.corners() {
            let (u, v) = project_to_image(&corner, &calib).map_err(|_| SynthError::OutsideFov(vi))?;
            u_lo = u_lo.min(u);
            u_hi = u_hi.max(u);
            v_lo = v_lo.min(v);
            v_hi = v_hi.max(v);
        }
        if u_lo < 0.0
            || v_lo < 0.0
            || u_hi > spec.camera.image_width
            || v_hi > spec.camera.image_height
        {
            return Err(SynthError::OutsideFov(vi));
        }
        let source_index = gt.len();
        boxes2d.push(SceneBox2D {
            class: "Car".to_string(),
            box2d: Box2D::new(u_lo, v_lo, u_hi, v_hi)
                .map_err(|e| SynthError::BadSpec(e.to_string()))?,
            truncation: 0.0,
            occlusion: 0,
            source_index,
        });
        gt.push(vehicle.box3d);
        gt_spec_indices.push(vi);
    }

    Ok(SynthScene {
        scene: SceneInput {
            frame_id: String::new(),
            cloud: PointCloud::new(kept_points),
            calib,
            boxes2d,
        },
        gt,
        gt_spec_indices,
        point_labels: kept_labels,
        stats,
    })
}

/// Write a generated scene as one KITTI-layout frame (velodyne/calib/label_2).
/// The cloud is stored in the camera frame with identity extrinsics.
pub fn write_kitti_frame(
    root: &std::path::Path,
    frame_id: &str,
    scene: &SynthScene,
) -> Result<(), SynthError> {
    std::fs::create_dir_all(root.join("velodyne"))?;
    std::fs::create_dir_all(root.join("calib"))?;
    std::fs::create_dir_all(root.join("label_2"))?;
    std::fs::write(
        root.join("velodyne").join(format!("{frame_id}.bin")),
        write_scan(&scene.scene.cloud),
    )?;
    std::fs::write(
        root.join("calib").join(format!("{frame_id}.txt")),
        write_calibration(&scene.scene.calib),
    )?;
    let records: Vec<_> = scene
        .gt
        .iter()
        .zip(scene.scene.boxes2d.iter())
        .map(|(b, sb)| box3d_to_label(b, sb.box2d, &sb.class))
        .collect();
    std::fs::write(
        root.join("label_2").join(format!("{frame_id}.txt")),
        write_labels(&records),
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Plain-text spec files
// ---------------------------------------------------------------------------

fn parse_face_list(s: &str) -> Result<FaceSelection, String> {
    if s == "auto" {
        return Ok(FaceSelection::Auto);
    }
    let mut faces = Vec::new();
    for tok in s.split(',') {
        faces.push(match tok {
            "front" => Face::Front,
            "back" => Face::Back,
            "left" => Face::Left,
            "right" => Face::Right,
            "top" => Face::Top,
            other => return Err(format!("unknown face `{other}`")),
        });
    }
    Ok(FaceSelection::Faces(faces))
}

/// Parse the key=value scene description format.
///
/// ```text
/// seed = 7
/// ground = 1.65 -12 12 4 40 0.3 0.01     # y x0 x1 z0 z1 spacing sigma
/// camera = 700 621 187.5 1242 375        # focal cu cv width height
/// # vehicle: cx cy cz l w h yaw spacing sigma outliers faces
/// vehicle = 2.0 0.9 12.0 4.2 1.75 1.5 0.5 0.08 0.01 0 auto
/// clutter = 6.6 1.4 12.3 0.4 0.4 0.5 0.0 0.12 0.005
/// occluder = -1.0 0.9 8.0 3.8 1.6 1.5 0.2
/// ```
pub fn parse_spec(text: &str) -> Result<SynthSpec, SynthError> {
    let mut seed = 0u64;
    let mut ground: Option<GroundSpec> = None;
    let mut camera = CameraSpec::default();
    let mut vehicles = Vec::new();
    let mut occluders = Vec::new();
    let fail = |line: usize, msg: &str| SynthError::Parse {
        line,
        msg: msg.to_string(),
    };
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| fail(line_no, "expected key = value"))?;
        let key = key.trim();
        let toks: Vec<&str> = value.split_whitespace().collect();
        let nums = |want: usize| -> Result<Vec<f64>, SynthError> {
            if toks.len() < want {
                return Err(fail(line_no, "too few values"));
            }
            toks[..want]
                .iter()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| fail(line_no, &format!("bad number `{t}`")))
                })
                .collect()
        };
        match key {
            "seed" => {
                seed = toks
                    .first()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| fail(line_no, "bad seed"))?
            }
            "ground" => {
                let v = nums(7)?;
                ground = Some(GroundSpec {
                    y: v[0],
                    x_range: (v[1], v[2]),
                    z_range: (v[3], v[4]),
                    spacing: v[5],
                    sigma: v[6],
                });
            }
            "camera" => {
                let v = nums(5)?;
                camera = CameraSpec {
                    focal: v[0],
                    cu: v[1],
                    cv: v[2],
                    image_width: v[3],
                    image_height: v[4],
                };
            }
            "vehicle" | "clutter" => {
                let labeled = key == "vehicle";
                let want = if labeled { 10 } else { 9 };
                let v = nums(want)?;
                let faces = if labeled {
                    let face_tok = toks
                        .get(10)
                        .ok_or_else(|| fail(line_no, "missing faces"))?;
                    parse_face_list(face_tok).map_err(|m| fail(line_no, &m))?
                } else {
                    FaceSelection::Faces(vec![
                        Face::Front,
                        Face::Back,
                        Face::Left,
                        Face::Right,
                        Face::Top,
                    ])
                };
                let box3d = Box3D::new(Point3::new(v[0], v[1], v[2]), v[3], v[4], v[5], v[6])
                    .map_err(|e| fail(line_no, &e.to_string()))?;
                vehicles.push(VehicleSpec {
                    box3d,
                    faces,
                    point_spacing: v[7],
                    noise_sigma: v[8],
                    outlier_count: if labeled { v[9] as usize } else { 0 },
                    labeled,
                });
            }
            "occluder" => {
                let v = nums(7)?;
                occluders.push(
                    Box3D::new(Point3::new(v[0], v[1], v[2]), v[3], v[4], v[5], v[6])
                        .map_err(|e| fail(line_no, &e.to_string()))?,
                );
            }
            other => return Err(fail(line_no, &format!("unknown key `{other}`"))),
        }
    }
    let ground = ground.ok_or_else(|| SynthError::BadSpec("missing ground line".into()))?;
    if ground.spacing <= 0.0 {
        return Err(SynthError::BadSpec("ground spacing must be positive".into()));
    }
    Ok(SynthSpec {
        seed,
        ground,
        camera,
        vehicles,
        occluders,
    })
}

// ---------------------------------------------------------------------------
// Random scene sampling (shared by the CLI and the test suite)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SamplerOptions {
    pub max_vehicles: usize,
    /// Fraction of vehicles that get a detached clutter blob near one face.
    pub clutter_fraction: f64,
    /// Fraction of scenes with a phantom occluder in front of one vehicle.
    pub occluder_fraction: f64,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        Self {
            max_vehicles: 4,
            clutter_fraction: 0.4,
            occluder_fraction: 0.3,
        }
    }
}

#[derive(Debug)]
pub struct SampledScene {
    pub spec: SynthSpec,
    /// Per labeled vehicle: no clutter was attached to it.
    pub clutter_free: Vec<bool>,
}

fn box_fits_image(b: &Box3D, camera: &CameraSpec) -> bool {
    let calib = Calibration::from_intrinsics(camera.focal, camera.cu, camera.cv);
    let margin = 4.0;
    b.corners().iter().all(|c| {
        project_to_image(c, &calib).is_ok_and(|(u, v)| {
            u > margin
                && v > margin
                && u < camera.image_width - margin
                && v < camera.image_height - margin
        })
    })
}

/// Nearest-to-camera BEV corner and the two edges leaving it.
fn key_corner_geometry(b: &Box3D) -> (BevPoint, [(BevPoint, f64); 2]) {
    let corners = b.corners_bev();
    let nearest = corners
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| a.norm().partial_cmp(&b.norm()).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    let v = corners[nearest];
    let next = corners[(nearest + 1) % 4].sub(&v);
    let prev = corners[(nearest + 3) % 4].sub(&v);
    (
        v,
        [
            (next.normalized(), next.norm()),
            (prev.normalized(), prev.norm()),
        ],
    )
}

/// Draw one random multi-vehicle scene. Vehicles present two side faces to
/// the camera, spacing classes mix dense and sparse scans, some vehicles get
/// a detached clutter blob just beyond one visible face (reachable only at
/// the largest growth radii), and some scenes put a phantom occluder in
/// front of a vehicle.
pub fn sample_scene(seed: u64, opts: &SamplerOptions) -> SampledScene {
    let mut rng = StdRng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let camera = CameraSpec::default();
    let ground_y = 1.65;
    let n_vehicles = rng.gen_range(1..=opts.max_vehicles.max(1));
    let mut vehicles: Vec<VehicleSpec> = Vec::new();
    let mut labeled_boxes: Vec<Box3D> = Vec::new();
    let mut clutter_free = Vec::new();
    let mut occluders = Vec::new();

    'place: for _ in 0..n_vehicles {
        for _attempt in 0..60 {
            let l = rng.gen_range(3.7..4.7);
            let w = rng.gen_range(1.6..1.95);
            let h = rng.gen_range(1.4..1.75);
            let z = rng.gen_range(9.0..30.0);
            let x = rng.gen_range(-0.32..0.32) * z;
            let yaw = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
            let center = Point3::new(x, ground_y - h / 2.0, z);
            let Ok(b) = Box3D::new(center, l, w, h, yaw) else {
                continue;
            };
            // Two side faces must be visible and well-conditioned, so the
            // scan shows an unambiguous corner.
            let faces = visible_side_faces(&b);
            if faces.len() != 2 {
                continue;
            }
            let bearing = x.atan2(z);
            let rel = crate::geom::wrap_angle(yaw - bearing);
            if rel.sin().abs() < 0.20 || rel.cos().abs() < 0.20 {
                continue;
            }
            if !box_fits_image(&b, &camera) {
                continue;
            }
            let bc = bev_of(&b.center);
            let clear = labeled_boxes.iter().all(|other| {
                bev_of(&other.center).distance(&bc) > (other.length + l) / 2.0 + 1.0
            });
            if !clear {
                continue;
            }
            let spacing_class: f64 = rng.gen();
            let spacing = if spacing_class < 0.2 {
                rng.gen_range(0.06..0.08)
            } else if spacing_class < 0.7 {
                rng.gen_range(0.15..0.32)
            } else {
                rng.gen_range(0.42..0.5)
            };
            labeled_boxes.push(b);
            vehicles.push(VehicleSpec {
                box3d: b,
                faces: FaceSelection::Auto,
                point_spacing: spacing,
                noise_sigma: 0.01,
                outlier_count: 0,
                labeled: true,
            });
            clutter_free.push(true);
            continue 'place;
        }
        break; // crowded scene; keep what we have
    }

    // Detached clutter: a thin post just beyond the far end of one visible
    // face, offset away from the body. It joins the vehicle's component only
    // at the largest growth radii and stays small enough to pass the
    // in-frustum ratio filter.
    let n_labeled = vehicles.len();
    for vi in 0..n_labeled {
        if rng.gen::<f64>() >= opts.clutter_fraction {
            continue;
        }
        let b = vehicles[vi].box3d;
        let spacing = vehicles[vi].point_spacing;
        let (corner, edges) = key_corner_geometry(&b);
        let (dir, len) = edges[rng.gen_range(0..2)];
        let other_dir = if edges[0].0.x == dir.x && edges[0].0.z == dir.z {
            edges[1].0
        } else {
            edges[0].0
        };
        let gap = rng.gen_range(0.42..0.52);
        let lateral = rng.gen_range(0.25..0.4);
        let half = 0.125;
        let bev = corner
            .add(&dir.scale(len + gap + half))
            .add(&other_dir.scale(-(lateral + half)));
        let post_h = 1.0;
        let Ok(post) = Box3D::new(
            Point3::new(bev.x, ground_y - post_h / 2.0, bev.z),
            2.0 * half,
            2.0 * half,
            post_h,
            b.yaw,
        ) else {
            continue;
        };
        vehicles.push(VehicleSpec {
            box3d: post,
            faces: FaceSelection::Auto,
            point_spacing: spacing.max(0.1),
            noise_sigma: 0.008,
            outlier_count: 0,
            labeled: false,
        });
        clutter_free[vi] = false;
    }

    // Phantom occluder halfway to one vehicle, offset sideways so that the
    // shadow clips part of it.
    if !labeled_boxes.is_empty() && rng.gen::<f64>() < opts.occluder_fraction {
        let target = rng.gen_range(0..labeled_boxes.len());
        let tb = labeled_boxes[target];
        let zt = tb.center.z;
        let z_occ = zt * rng.gen_range(0.45..0.6);
        let lateral = rng.gen_range(0.4..1.1) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let x = tb.center.x / zt * z_occ + lateral;
        let h = 1.4;
        if let Ok(occ) = Box3D::new(
            Point3::new(x, ground_y - h / 2.0, z_occ),
            rng.gen_range(1.2..2.2),
            rng.gen_range(0.6..1.2),
            h,
            rng.gen_range(-1.0..1.0),
        ) {
            occluders.push(occ);
        }
    }

    SampledScene {
        spec: SynthSpec {
            seed: seed.wrapping_add(1),
            ground: GroundSpec {
                y: ground_y,
                x_range: (-14.0, 14.0),
                z_range: (4.0, 42.0),
                spacing: 0.3,
                sigma: 0.008,
            },
            camera,
            vehicles,
            occluders,
        },
        clutter_free,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::PointSet;

    fn one_car_spec(noise: f64) -> SynthSpec {
        let b = Box3D::new(Point3::new(2.0, 1.65 - 0.75, 12.0), 4.2, 1.75, 1.5, 0.6).unwrap();
        SynthSpec {
            seed: 5,
            ground: GroundSpec {
                y: 1.65,
                x_range: (-10.0, 10.0),
                z_range: (4.0, 30.0),
                spacing: 0.3,
                sigma: 0.01,
            },
            camera: CameraSpec::default(),
            vehicles: vec![VehicleSpec {
                box3d: b,
                faces: FaceSelection::Auto,
                point_spacing: 0.1,
                noise_sigma: noise,
                outlier_count: 0,
                labeled: true,
            }],
            occluders: vec![],
        }
    }

    #[test]
    fn noiseless_points_lie_on_faces() {
        let spec = one_car_spec(0.0);
        let out = generate(&spec).unwrap();
        let b = spec.vehicles[0].box3d;
        let corners = b.corners_bev();
        for (i, p) in out.scene.cloud.iter() {
            if out.point_labels[i as usize] != 0 {
                continue;
            }
            // On a side face: BEV position on the rectangle boundary.
            let rect = crate::boxfit::BevRectangle::new(corners, 0);
            assert!(rect.contains(&bev_of(p), 1e-9));
            let on_edge = (0..4).any(|k| {
                let a = corners[k];
                let bq = corners[(k + 1) % 4];
                let dir = bq.sub(&a).normalized();
                dir.cross(&bev_of(p).sub(&a)).abs() < 1e-9
            });
            assert!(on_edge, "point off the box faces");
        }
    }

    #[test]
    fn fixed_seed_reproduces_scene_exactly() {
        let spec = one_car_spec(0.02);
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.scene.cloud.len(), b.scene.cloud.len());
        for (pa, pb) in a.scene.cloud.points().iter().zip(b.scene.cloud.points()) {
            assert_eq!(pa, pb);
        }
        assert_eq!(a.point_labels, b.point_labels);
    }

    #[test]
    fn projected_box_contains_every_noiseless_vehicle_point() {
        let spec = one_car_spec(0.0);
        let out = generate(&spec).unwrap();
        let b2 = out.scene.boxes2d[0].box2d;
        for (i, p) in out.scene.cloud.iter() {
            if out.point_labels[i as usize] != 0 {
                continue;
            }
            let (u, v) = project_to_image(p, &out.scene.calib).unwrap();
            assert!(b2.contains(u, v), "point projects outside the 2D box");
        }
    }

    #[test]
    fn labels_partition_non_ground_points() {
        let spec = one_car_spec(0.01);
        let out = generate(&spec).unwrap();
        let vehicle_count = out
            .point_labels
            .iter()
            .filter(|&&l| l >= 0)
            .count();
        assert_eq!(vehicle_count, out.stats[0].generated_points);
        // Ground points stay within 3 sigma of the plane.
        for (i, p) in out.scene.cloud.iter() {
            if out.point_labels[i as usize] == -1 {
                assert!((p.y - spec.ground.y).abs() <= 3.0 * spec.ground.sigma + 1e-12);
            }
        }
    }

    #[test]
    fn occluder_casts_a_shadow_and_may_empty_the_frustum() {
        let mut spec = one_car_spec(0.0);
        // A wall directly in front of the car, wide and tall enough to
        // blot it out completely.
        spec.occluders.push(
            Box3D::new(Point3::new(1.0, 1.65 - 1.25, 6.0), 6.0, 0.4, 2.5, 0.6).unwrap(),
        );
        let out = generate(&spec).unwrap();
        assert_eq!(out.stats[0].shadowed_points, out.stats[0].generated_points);
        // The 2D box is still emitted; its frustum is simply empty.
        assert_eq!(out.scene.boxes2d.len(), 1);
        let nonground = PointSet::from_vec(
            out.point_labels
                .iter()
                .enumerate()
                .filter(|(_, &l)| l >= 0)
                .map(|(i, _)| i as u32)
                .collect(),
        );
        assert!(nonground.is_empty());
    }

    #[test]
    fn spec_file_roundtrip() {
        let text = "\
seed = 9
ground = 1.65 -10 10 4 30 0.3 0.01
camera = 700 621 187.5 1242 375
vehicle = 2.0 0.9 12.0 4.2 1.75 1.5 0.5 0.1 0.01 0 auto
vehicle = -3.0 0.9 18.0 4.0 1.7 1.5 -0.4 0.2 0.01 2 left,back
clutter = 6.6 1.4 12.3 0.4 0.4 0.5 0.0 0.12 0.005
occluder = -1.0 0.9 8.0 3.8 1.6 1.5 0.2
";
        let spec = parse_spec(text).unwrap();
        assert_eq!(spec.seed, 9);
        assert_eq!(spec.vehicles.len(), 3);
        assert_eq!(spec.occluders.len(), 1);
        assert!(spec.vehicles[0].labeled);
        assert!(!spec.vehicles[2].labeled);
        assert_eq!(spec.vehicles[1].outlier_count, 2);
        assert!(generate(&spec).is_ok());
    }

    #[test]
    fn spec_parse_errors_carry_line_numbers() {
        let err = parse_spec("seed = 1\nvehicle = 2 oops\n").unwrap_err();
        match err {
            SynthError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn sampled_scenes_generate_and_stay_in_fov() {
        for seed in 0..25 {
            let sampled = sample_scene(seed, &SamplerOptions::default());
            let out = generate(&sampled.spec).unwrap();
            assert!(!out.gt.is_empty());
            assert_eq!(
                sampled.clutter_free.len(),
                out.gt.len(),
                "bookkeeping mismatch"
            );
        }
    }
}
