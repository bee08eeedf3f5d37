//! Oriented 3D vehicle bounding-box pseudo-labels from LiDAR point clouds
//! and 2D image-plane boxes.
//!
//! The pipeline has two stages. Stage one segments each vehicle's points:
//! the ground plane is removed with RANSAC, a frustum is extracted per 2D
//! box, and a depth-ordered adaptive region growing selects the vehicle
//! mask. Stage two fits an oriented BEV rectangle to the mask, localizes
//! its key vertex with an iterative denoising loop, completes the rectangle
//! against the frustum boundaries, and lifts it to a 7-DoF box.
//!
//! The crate also ships a KITTI-format reader/writer, a rotated-IoU
//! evaluation harness, a deterministic synthetic-scene generator used as
//! the test oracle, and an SVG BEV renderer.

pub mod boxfit;
pub mod eval;
pub mod frustum;
pub mod geom;
pub mod ground;
pub mod kitti;
pub mod pipeline;
pub mod render;
pub mod segmentation;
pub mod spatial;
pub mod synth;

pub use geom::{bev_of, project_to_image, BevPoint, Box2D, Box3D, Plane, Point3, PointCloud, PointId, PointSet};
