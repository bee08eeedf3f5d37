//! Adaptive region growing over the whole cloud.
//!
//! For each distance threshold phi, connected components are grown from
//! frustum seeds through all still-available points (not just the frustum).
//! Components whose in-frustum fraction falls below `theta_seg` are treated
//! as belonging to other objects and dropped; the largest survivor wins the
//! phi pass, and the largest winner across the phi sweep becomes the mask.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{PointCloud, PointId, PointSet};
use crate::spatial::SpatialIndex;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentationConfig {
    /// Ascending distance thresholds (meters) to sweep.
    pub phis: Vec<f64>,
    /// Minimum in-frustum fraction for a component to count as the vehicle.
    pub theta_seg: f64,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            phis: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7],
            theta_seg: 0.8,
        }
    }
}

impl SegmentationConfig {
    pub fn validate(&self) -> Result<(), SegmentationError> {
        let ascending = self.phis.windows(2).all(|w| w[0] < w[1]);
        if self.phis.is_empty() || !ascending || self.phis.iter().any(|&p| p <= 0.0) {
            return Err(SegmentationError::BadConfig(
                "phis must be nonempty, ascending and positive",
            ));
        }
        if !(self.theta_seg > 0.0 && self.theta_seg <= 1.0) {
            return Err(SegmentationError::BadConfig("theta_seg must be in (0, 1]"));
        }
        Ok(())
    }

    pub fn max_phi(&self) -> f64 {
        *self.phis.last().unwrap()
    }
}

#[derive(Debug, Error)]
pub enum SegmentationError {
    #[error("invalid segmentation config: {0}")]
    BadConfig(&'static str),
    #[error("phi list and index list differ in length")]
    IndexMismatch,
    #[error("no frustum seed available")]
    NoSeeds,
    #[error("every component was filtered out for every phi")]
    AllComponentsFiltered,
}

#[derive(Debug, Clone)]
pub struct SegmentationResult {
    pub mask: PointSet,
    pub chosen_phi: f64,
    pub per_phi_sizes: Vec<(f64, usize)>,
    pub components_examined: usize,
}

/// Grow the connected component of `seed` under the relation
/// "Euclidean distance < phi", over the points whose `active` bit is set.
/// Visited flags are shared so one phi pass never regrows a point.
pub fn grow_component(
    seed: PointId,
    index: &SpatialIndex,
    phi: f64,
    active: &[bool],
    visited: &mut [bool],
    scratch: &mut Vec<PointId>,
) -> Vec<PointId> {
    debug_assert!(active[seed as usize]);
    let mut component = vec![seed];
    visited[seed as usize] = true;
    let mut cursor = 0;
    while cursor < component.len() {
        let p = index.position(component[cursor]);
        cursor += 1;
        scratch.clear();
        index.neighbors_within(&p, phi, active, scratch);
        for &q in scratch.iter() {
            if !visited[q as usize] {
                visited[q as usize] = true;
                component.push(q);
            }
        }
    }
    component
}

/// Convenience wrapper growing a single component with fresh bookkeeping.
pub fn component_of(
    cloud: &PointCloud,
    available: &PointSet,
    seed: PointId,
    phi: f64,
) -> PointSet {
    let index = SpatialIndex::build(cloud, available, phi);
    let active = crate::spatial::active_mask(cloud.len(), available);
    let mut visited = vec![false; cloud.len()];
    let mut scratch = Vec::new();
    PointSet::from_vec(grow_component(
        seed,
        &index,
        phi,
        &active,
        &mut visited,
        &mut scratch,
    ))
}

/// Run the full phi sweep for one vehicle.
///
/// `indexes` holds one grid per phi (same order as `cfg.phis`), all built
/// over the same cloud; `active` marks the still-available points. Only the
/// frustum points that are still active seed growth and enter the
/// in-frustum ratio.
pub fn segment_vehicle(
    frustum: &PointSet,
    indexes: &[SpatialIndex],
    active: &[bool],
    cfg: &SegmentationConfig,
) -> Result<SegmentationResult, SegmentationError> {
    cfg.validate()?;
    if indexes.len() != cfg.phis.len() {
        return Err(SegmentationError::IndexMismatch);
    }
    let n_points = active.len();
    let seeds: Vec<PointId> = frustum.iter().filter(|&id| active[id as usize]).collect();
    if seeds.is_empty() {
        return Err(SegmentationError::NoSeeds);
    }
    let mut in_frustum = vec![false; n_points];
    for &id in &seeds {
        in_frustum[id as usize] = true;
    }

    let mut visited = vec![false; n_points];
    let mut scratch = Vec::new();
    let mut best: Option<(Vec<PointId>, f64)> = None;
    let mut per_phi_sizes = Vec::with_capacity(cfg.phis.len());
    let mut components_examined = 0usize;

    for (k, &phi) in cfg.phis.iter().enumerate() {
        visited.iter_mut().for_each(|v| *v = false);
        let mut phi_best: Option<Vec<PointId>> = None;
        // Seeds scanned in ascending id order; ties on component size keep
        // the first (smallest-seed) component.
        for &seed in &seeds {
            if visited[seed as usize] {
                continue;
            }
            let component =
                grow_component(seed, &indexes[k], phi, active, &mut visited, &mut scratch);
            components_examined += 1;
            let inside = component
                .iter()
                .filter(|&&id| in_frustum[id as usize])
                .count();
            let ratio = inside as f64 / component.len() as f64;
            if ratio < cfg.theta_seg {
                // Belongs to other objects; its points stay visited and the
                // component is out of the running.
                continue;
            }
            if phi_best.as_ref().map_or(true, |b| component.len() > b.len()) {
                phi_best = Some(component);
            }
        }
        per_phi_sizes.push((phi, phi_best.as_ref().map_or(0, |c| c.len())));
        if let Some(candidate) = phi_best {
            // Strictly-greater keeps the smaller phi on ties.
            if best.as_ref().map_or(true, |(b, _)| candidate.len() > b.len()) {
                best = Some((candidate, phi));
            }
        }
    }

    match best {
        Some((mask, chosen_phi)) => Ok(SegmentationResult {
            mask: PointSet::from_vec(mask),
            chosen_phi,
            per_phi_sizes,
            components_examined,
        }),
        None => Err(SegmentationError::AllComponentsFiltered),
    }
}

/// Build one grid per phi over the available points.
pub fn build_indexes(
    cloud: &PointCloud,
    available: &PointSet,
    cfg: &SegmentationConfig,
) -> Vec<SpatialIndex> {
    cfg.phis
        .iter()
        .map(|&phi| SpatialIndex::build(cloud, available, phi))
        .collect()
}
