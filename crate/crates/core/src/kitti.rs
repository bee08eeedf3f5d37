//! KITTI object-detection dataset I/O: velodyne scans, calibration files and
//! label files, plus the conversions between label records and 3D boxes.
//!
//! Directory layout mirrors KITTI: `velodyne/`, `calib/`, `label_2/` with
//! zero-padded 6-digit frame ids.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3x4, Matrix4};
use thiserror::Error;

use crate::geom::{
    transform_point, wrap_angle, Box2D, Box3D, Calibration, GeomError, Point3, PointCloud,
    PointId,
};

#[derive(Debug, Error)]
pub enum KittiError {
    #[error("scan length {0} is not a multiple of 16 bytes")]
    BadScanLength(usize),
    #[error("non-finite coordinate in scan record {0}")]
    NonFiniteScanValue(usize),
    #[error("missing calibration key {0}")]
    MissingKey(&'static str),
    #[error("line {line}: cannot parse token `{token}` as a number")]
    BadToken { line: usize, token: String },
    #[error("line {line}: key {key} has {got} values, expected {expected}")]
    BadValueCount {
        line: usize,
        key: String,
        expected: usize,
        got: usize,
    },
    #[error("line {line}: label needs 15 or 16 fields, found {got}")]
    BadLabelArity { line: usize, got: usize },
    #[error("invalid geometry: {0}")]
    Geometry(#[from] GeomError),
    #[error("frame {0}: {1}")]
    Io(String, std::io::Error),
}

/// Parse a raw KITTI `.bin` scan: little-endian f32 quadruples
/// (x, y, z, reflectance). Reflectance is discarded.
pub fn read_scan(bytes: &[u8]) -> Result<PointCloud, KittiError> {
    if bytes.len() % 16 != 0 {
        return Err(KittiError::BadScanLength(bytes.len()));
    }
    let mut points = Vec::with_capacity(bytes.len() / 16);
    for (i, rec) in bytes.chunks_exact(16).enumerate() {
        let x = f32::from_le_bytes([rec[0], rec[1], rec[2], rec[3]]) as f64;
        let y = f32::from_le_bytes([rec[4], rec[5], rec[6], rec[7]]) as f64;
        let z = f32::from_le_bytes([rec[8], rec[9], rec[10], rec[11]]) as f64;
        let p = Point3::new(x, y, z);
        if !p.is_finite() {
            return Err(KittiError::NonFiniteScanValue(i));
        }
        points.push(p);
    }
    Ok(PointCloud::new(points))
}

/// Serialize a cloud back to the `.bin` layout with zero reflectance.
pub fn write_scan(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * 16);
    for (_, p) in cloud.iter() {
        for v in [p.x as f32, p.y as f32, p.z as f32, 0.0f32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn parse_matrix_line(
    line_no: usize,
    key: &str,
    rest: &str,
    expected: usize,
) -> Result<Vec<f64>, KittiError> {
    let tokens: Vec<&str> = rest.split_whitespace().collect();
    if tokens.len() != expected {
        return Err(KittiError::BadValueCount {
            line: line_no,
            key: key.to_string(),
            expected,
            got: tokens.len(),
        });
    }
    tokens
        .iter()
        .map(|t| {
            t.parse::<f64>().map_err(|_| KittiError::BadToken {
                line: line_no,
                token: (*t).to_string(),
            })
        })
        .collect()
}

/// Parse a KITTI calibration file. Requires `P2`, `R0_rect` and
/// `Tr_velo_to_cam`; other keys are ignored. The two transforms are promoted
/// to homogeneous 4x4 form.
pub fn read_calibration(text: &str) -> Result<Calibration, KittiError> {
    let mut p2: Option<Vec<f64>> = None;
    let mut r0: Option<Vec<f64>> = None;
    let mut tr: Option<Vec<f64>> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, rest)) = line.split_once(':') else {
            continue;
        };
        match key.trim() {
            "P2" => p2 = Some(parse_matrix_line(i + 1, "P2", rest, 12)?),
            "R0_rect" => r0 = Some(parse_matrix_line(i + 1, "R0_rect", rest, 9)?),
            "Tr_velo_to_cam" => {
                tr = Some(parse_matrix_line(i + 1, "Tr_velo_to_cam", rest, 12)?)
            }
            _ => {}
        }
    }
    let p2 = p2.ok_or(KittiError::MissingKey("P2"))?;
    let r0 = r0.ok_or(KittiError::MissingKey("R0_rect"))?;
    let tr = tr.ok_or(KittiError::MissingKey("Tr_velo_to_cam"))?;

    let projection = Matrix3x4::from_fn(|r, c| p2[r * 4 + c]);
    let mut rectification = Matrix4::identity();
    for r in 0..3 {
        for c in 0..3 {
            rectification[(r, c)] = r0[r * 3 + c];
        }
    }
    let mut lidar_to_cam = Matrix4::identity();
    for r in 0..3 {
        for c in 0..4 {
            lidar_to_cam[(r, c)] = tr[r * 4 + c];
        }
    }
    Ok(Calibration::new(projection, lidar_to_cam, rectification)?)
}

pub fn write_calibration(calib: &Calibration) -> String {
    let fmt_row_major = |vals: &[f64]| {
        vals.iter()
            .map(|v| format!("{v:.12e}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let p: Vec<f64> = (0..3)
        .flat_map(|r| (0..4).map(move |c| (r, c)))
        .map(|(r, c)| calib.projection[(r, c)])
        .collect();
    let r0: Vec<f64> = (0..3)
        .flat_map(|r| (0..3).map(move |c| (r, c)))
        .map(|(r, c)| calib.rectification[(r, c)])
        .collect();
    let tr: Vec<f64> = (0..3)
        .flat_map(|r| (0..4).map(move |c| (r, c)))
        .map(|(r, c)| calib.lidar_to_cam[(r, c)])
        .collect();
    format!(
        "P2: {}\nR0_rect: {}\nTr_velo_to_cam: {}\n",
        fmt_row_major(&p),
        fmt_row_major(&r0),
        fmt_row_major(&tr)
    )
}

/// Transform a lidar-frame cloud into the rectified camera frame, dropping
/// points at or behind the camera (z <= 0.1 m). Returns the surviving cloud
/// and, per new point, the index it had in the input cloud.
pub fn lidar_to_rect(cloud: &PointCloud, calib: &Calibration) -> (PointCloud, Vec<PointId>) {
    let m = calib.lidar_to_rect_matrix();
    let mut points = Vec::with_capacity(cloud.len());
    let mut remap = Vec::with_capacity(cloud.len());
    for (id, p) in cloud.iter() {
        let q = transform_point(&m, p);
        if q.z > 0.1 {
            points.push(q);
            remap.push(id);
        }
    }
    (PointCloud::new(points), remap)
}

/// One line of a KITTI label file.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelRecord {
    pub class: String,
    pub truncation: f64,
    pub occlusion: i32,
    pub alpha: f64,
    pub box2d: Box2D,
    /// Dimensions in KITTI order: height, width, length (meters).
    pub height: f64,
    pub width: f64,
    pub length: f64,
    /// Bottom-face center in the rectified camera frame.
    pub location: Point3,
    pub rotation_y: f64,
    pub score: Option<f64>,
}

/// Serialize records to KITTI label text, one line per record.
///
/// Alpha is derived from rotation_y and location (`ry - atan2(x, z)`,
/// wrapped to [-pi, pi)) rather than trusted from the record.
pub fn write_labels(records: &[LabelRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let alpha = wrap_angle(r.rotation_y - r.location.x.atan2(r.location.z));
        out.push_str(&format!(
            "{} {:.2} {} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2}",
            r.class,
            r.truncation,
            r.occlusion,
            alpha,
            r.box2d.u_min,
            r.box2d.v_min,
            r.box2d.u_max,
            r.box2d.v_max,
            r.height,
            r.width,
            r.length,
            r.location.x,
            r.location.y,
            r.location.z,
            r.rotation_y,
        ));
        if let Some(s) = r.score {
            out.push_str(&format!(" {s:.2}"));
        }
        out.push('\n');
    }
    out
}

pub fn read_labels(text: &str) -> Result<Vec<LabelRecord>, KittiError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() != 15 && tok.len() != 16 {
            return Err(KittiError::BadLabelArity {
                line: i + 1,
                got: tok.len(),
            });
        }
        let num = |t: &str| -> Result<f64, KittiError> {
            t.parse::<f64>().map_err(|_| KittiError::BadToken {
                line: i + 1,
                token: t.to_string(),
            })
        };
        let box2d = Box2D::new(num(tok[4])?, num(tok[5])?, num(tok[6])?, num(tok[7])?)?;
        out.push(LabelRecord {
            class: tok[0].to_string(),
            truncation: num(tok[1])?,
            occlusion: num(tok[2])? as i32,
            alpha: num(tok[3])?,
            box2d,
            height: num(tok[8])?,
            width: num(tok[9])?,
            length: num(tok[10])?,
            location: Point3::new(num(tok[11])?, num(tok[12])?, num(tok[13])?),
            rotation_y: num(tok[14])?,
            score: if tok.len() == 16 {
                Some(num(tok[15])?)
            } else {
                None
            },
        });
    }
    Ok(out)
}

/// Convert an oriented box into a KITTI label record.
///
/// The box centroid is shifted down by height/2 to KITTI's bottom-center
/// convention, and the yaw is mapped to KITTI rotation_y, picking the
/// representative whose observation angle lies in [-pi/2, pi/2).
pub fn box3d_to_label(b: &Box3D, box2d: Box2D, class: &str) -> LabelRecord {
    let location = Point3::new(
        b.center.x,
        b.center.y + b.height / 2.0,
        b.center.z,
    );
    // KITTI rotation_y is clockwise when viewed from above, i.e. -yaw.
    let ry_raw = -b.yaw;
    let theta = location.x.atan2(location.z);
    let mut alpha = wrap_angle(ry_raw - theta);
    if alpha < -std::f64::consts::FRAC_PI_2 {
        alpha += std::f64::consts::PI;
    } else if alpha >= std::f64::consts::FRAC_PI_2 {
        alpha -= std::f64::consts::PI;
    }
    let rotation_y = wrap_angle(alpha + theta);
    LabelRecord {
        class: class.to_string(),
        truncation: 0.0,
        occlusion: 0,
        alpha,
        box2d,
        height: b.height,
        width: b.width,
        length: b.length,
        location,
        rotation_y,
        score: None,
    }
}

pub fn label_to_box3d(r: &LabelRecord) -> Result<Box3D, GeomError> {
    let center = Point3::new(
        r.location.x,
        r.location.y - r.height / 2.0,
        r.location.z,
    );
    Box3D::new(center, r.length, r.width, r.height, -r.rotation_y)
}

/// One 2D box taken from a label file, with its source line index.
#[derive(Debug, Clone)]
pub struct SceneBox2D {
    pub class: String,
    pub box2d: Box2D,
    pub truncation: f64,
    pub occlusion: i32,
    pub source_index: usize,
}

/// One frame ready for labeling: rectified cloud, calibration, 2D boxes.
#[derive(Debug, Clone)]
pub struct SceneInput {
    pub frame_id: String,
    pub cloud: PointCloud,
    pub calib: Calibration,
    pub boxes2d: Vec<SceneBox2D>,
}

fn read_file(path: &Path, frame: &str) -> Result<Vec<u8>, KittiError> {
    fs::read(path).map_err(|e| KittiError::Io(frame.to_string(), e))
}

/// Load one frame from a KITTI-layout directory. The label file supplies the
/// 2D boxes; its 3D fields are ignored here.
pub fn load_scene(root: &Path, frame_id: &str) -> Result<SceneInput, KittiError> {
    let scan = read_scan(&read_file(
        &root.join("velodyne").join(format!("{frame_id}.bin")),
        frame_id,
    )?)?;
    let calib_text = String::from_utf8_lossy(&read_file(
        &root.join("calib").join(format!("{frame_id}.txt")),
        frame_id,
    )?)
    .into_owned();
    let calib = read_calibration(&calib_text)?;
    let label_text = String::from_utf8_lossy(&read_file(
        &root.join("label_2").join(format!("{frame_id}.txt")),
        frame_id,
    )?)
    .into_owned();
    let labels = read_labels(&label_text)?;
    let (cloud, _) = lidar_to_rect(&scan, &calib);
    let boxes2d = labels
        .iter()
        .enumerate()
        .map(|(i, r)| SceneBox2D {
            class: r.class.clone(),
            box2d: r.box2d,
            truncation: r.truncation,
            occlusion: r.occlusion,
            source_index: i,
        })
        .collect();
    Ok(SceneInput {
        frame_id: frame_id.to_string(),
        cloud,
        calib,
        boxes2d,
    })
}

/// Frame ids present in `root/velodyne`, sorted ascending.
pub fn list_frames(root: &Path) -> Result<Vec<String>, KittiError> {
    let dir = root.join("velodyne");
    let entries = fs::read_dir(&dir).map_err(|e| KittiError::Io(dir.display().to_string(), e))?;
    let mut out = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| KittiError::Io(dir.display().to_string(), e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(stem) = name.strip_suffix(".bin") {
            out.push(stem.to_string());
        }
    }
    out.sort();
    Ok(out)
}
