//! BEV figures as standalone SVG: point scatter, ground-truth and predicted
//! boxes, frustum boundary lines and key-vertex markers.

use crate::geom::{BevPoint, Box3D, Point3};

pub const GT_COLOR: &str = "#f4c20d";
pub const PRED_COLOR: &str = "#a142f4";
pub const FRUSTUM_COLOR: &str = "#00bcd4";
pub const KEY_COLOR: &str = "#0f9d58";
pub const POINT_COLOR: &str = "#9aa0a6";
pub const GROUND_COLOR: &str = "#d7dbdf";

/// Affine world (BEV) -> pixel mapping with isotropic scale, +z up on screen.
#[derive(Debug, Clone, Copy)]
pub struct Viewport {
    pub width: f64,
    pub height: f64,
    margin: f64,
    scale: f64,
    x_min: f64,
    z_max: f64,
}

impl Viewport {
    pub fn fit(extent: (f64, f64, f64, f64), width: f64, height: f64) -> Self {
        let (x_min, x_max, z_min, z_max) = extent;
        let margin = 20.0;
        let dx = (x_max - x_min).max(1e-6);
        let dz = (z_max - z_min).max(1e-6);
        let scale = ((width - 2.0 * margin) / dx).min((height - 2.0 * margin) / dz);
        Self {
            width,
            height,
            margin,
            scale,
            x_min,
            z_max,
        }
    }

    pub fn to_px(&self, p: &BevPoint) -> (f64, f64) {
        (
            self.margin + (p.x - self.x_min) * self.scale,
            self.margin + (self.z_max - p.z) * self.scale,
        )
    }
}

#[derive(Debug, Default)]
pub struct RenderInput {
    pub points: Vec<Point3>,
    /// Flags aligned with `points`; ground points draw lighter.
    pub ground_flags: Vec<bool>,
    pub gt_boxes: Vec<Box3D>,
    pub pred_boxes: Vec<Box3D>,
    /// Frustum boundary direction pairs (left, right), drawn from the origin.
    pub frustums: Vec<(BevPoint, BevPoint)>,
    pub key_vertices: Vec<BevPoint>,
}

fn bev_extent(input: &RenderInput) -> (f64, f64, f64, f64) {
    let mut x_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    let mut z_min = f64::INFINITY;
    let mut z_max = f64::NEG_INFINITY;
    let mut feed = |x: f64, z: f64| {
        x_min = x_min.min(x);
        x_max = x_max.max(x);
        z_min = z_min.min(z);
        z_max = z_max.max(z);
    };
    for p in &input.points {
        feed(p.x, p.z);
    }
    for b in input.gt_boxes.iter().chain(input.pred_boxes.iter()) {
        for c in b.corners_bev() {
            feed(c.x, c.z);
        }
    }
    feed(0.0, 0.0); // camera origin
    if !x_min.is_finite() {
        (-1.0, 1.0, 0.0, 1.0)
    } else {
        (x_min, x_max, z_min, z_max)
    }
}

fn box_path(b: &Box3D, vp: &Viewport, color: &str) -> String {
    let mut d = String::new();
    for (i, c) in b.corners_bev().iter().enumerate() {
        let (x, y) = vp.to_px(c);
        d.push_str(&format!("{}{x:.2} {y:.2} ", if i == 0 { "M" } else { "L" }));
    }
    d.push('Z');
    format!("<path d=\"{d}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n")
}

/// Render the scene to an SVG document string.
pub fn render_bev(input: &RenderInput, width: f64, height: f64) -> String {
    let vp = Viewport::fit(bev_extent(input), width, height);
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
    ));
    svg.push_str(&format!(
        "<rect width=\"{width}\" height=\"{height}\" fill=\"#ffffff\"/>\n"
    ));
    // Axes through the camera origin.
    let (ox, oy) = vp.to_px(&BevPoint::new(0.0, 0.0));
    svg.push_str(&format!(
        "<line x1=\"0\" y1=\"{oy:.2}\" x2=\"{width}\" y2=\"{oy:.2}\" stroke=\"#eeeeee\"/>\n"
    ));
    svg.push_str(&format!(
        "<line x1=\"{ox:.2}\" y1=\"0\" x2=\"{ox:.2}\" y2=\"{height}\" stroke=\"#eeeeee\"/>\n"
    ));
    // Frustum boundary lines from the origin.
    for (left, right) in &input.frustums {
        for dir in [left, right] {
            let far = dir.scale(1000.0);
            let (x1, y1) = vp.to_px(&BevPoint::new(0.0, 0.0));
            let (x2, y2) = vp.to_px(&far);
            svg.push_str(&format!(
                "<line x1=\"{x1:.2}\" y1=\"{y1:.2}\" x2=\"{x2:.2}\" y2=\"{y2:.2}\" stroke=\"{FRUSTUM_COLOR}\" stroke-width=\"0.8\"/>\n"
            ));
        }
    }
    // Points.
    for (i, p) in input.points.iter().enumerate() {
        let ground = input.ground_flags.get(i).copied().unwrap_or(false);
        let color = if ground { GROUND_COLOR } else { POINT_COLOR };
        let (x, y) = vp.to_px(&BevPoint::new(p.x, p.z));
        svg.push_str(&format!(
            "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"0.8\" fill=\"{color}\"/>\n"
        ));
    }
    for b in &input.gt_boxes {
        svg.push_str(&box_path(b, &vp, GT_COLOR));
    }
    for b in &input.pred_boxes {
        svg.push_str(&box_path(b, &vp, PRED_COLOR));
    }
    for v in &input.key_vertices {
        let (x, y) = vp.to_px(v);
        svg.push_str(&format!(
            "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"3\" fill=\"{KEY_COLOR}\"/>\n"
        ));
    }
    svg.push_str("</svg>\n");
    svg
}
