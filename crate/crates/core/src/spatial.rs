//! Uniform hash grid over 3D cells for fixed-radius neighbor queries.
//!
//! Cell side equals the radius the grid is queried with, so a query only
//! inspects the 27 cells around the query point. Availability is kept in an
//! external mask so several grids (one per growth radius) can share it; the
//! scene pipeline clears mask bits as points are claimed by nearer vehicles.

use std::collections::HashMap;

use crate::geom::{Point3, PointCloud, PointId, PointSet};

#[derive(Debug)]
pub struct SpatialIndex {
    cell: f64,
    cells: HashMap<(i32, i32, i32), Vec<PointId>>,
    positions: Vec<Point3>,
}

fn cell_of(p: &Point3, cell: f64) -> (i32, i32, i32) {
    (
        (p.x / cell).floor() as i32,
        (p.y / cell).floor() as i32,
        (p.z / cell).floor() as i32,
    )
}

impl SpatialIndex {
    /// Index the given subset of the cloud for queries of radius <= `cell`.
    pub fn build(cloud: &PointCloud, members: &PointSet, cell: f64) -> Self {
        assert!(cell > 0.0);
        let mut cells: HashMap<(i32, i32, i32), Vec<PointId>> = HashMap::new();
        for id in members.iter() {
            let p = cloud.get(id);
            cells.entry(cell_of(&p, cell)).or_default().push(id);
        }
        SpatialIndex {
            cell,
            cells,
            positions: cloud.points().to_vec(),
        }
    }

    pub fn cell_size(&self) -> f64 {
        self.cell
    }

    pub fn position(&self, id: PointId) -> Point3 {
        self.positions[id as usize]
    }

    /// Indexed points strictly within `radius` of `center` whose `active`
    /// bit is set, appended to `out` in deterministic (cell-scan, then
    /// insertion) order. Includes the query point itself when it qualifies.
    pub fn neighbors_within(
        &self,
        center: &Point3,
        radius: f64,
        active: &[bool],
        out: &mut Vec<PointId>,
    ) {
        debug_assert!(radius <= self.cell + 1e-12);
        let r2 = radius * radius;
        let (cx, cy, cz) = cell_of(center, self.cell);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(bucket) = self.cells.get(&(cx + dx, cy + dy, cz + dz)) else {
                        continue;
                    };
                    for &id in bucket {
                        if !active[id as usize] {
                            continue;
                        }
                        let p = &self.positions[id as usize];
                        let ddx = p.x - center.x;
                        let ddy = p.y - center.y;
                        let ddz = p.z - center.z;
                        if ddx * ddx + ddy * ddy + ddz * ddz < r2 {
                            out.push(id);
                        }
                    }
                }
            }
        }
    }
}

/// Activity mask with `true` exactly at the member ids.
pub fn active_mask(n: usize, members: &PointSet) -> Vec<bool> {
    let mut mask = vec![false; n];
    for id in members.iter() {
        mask[id as usize] = true;
    }
    mask
}
