//! DBSCAN over 3D points and over precomputed distance matrices.
//!
//! Both run the same deterministic expansion: seeds are visited in
//! ascending index order, breadth-first (FIFO), so border points join the
//! cluster of the first core point that reaches them. Neighborhoods are
//! closed balls and include the point itself, so a point is core iff
//! `|N_eps(p)| >= min_pts`. Output labels are canonical (0..K-1 by first
//! occurrence), noise is -1.

use std::collections::VecDeque;

use crate::error::{Result, Sp4dError};
use crate::index::NeighborIndex;
use crate::model::{canonicalize_frame, Point3, NOISE};

#[derive(Debug, Clone, Copy)]
pub struct DbscanParams {
    /// Neighborhood radius, meters (unitless in matrix mode).
    pub eps: f64,
    /// Minimum neighborhood size (self included) for a core point.
    pub min_pts: usize,
}

impl DbscanParams {
    fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) {
            return Err(Sp4dError::Param(format!("eps must be > 0, got {}", self.eps)));
        }
        if self.min_pts < 1 {
            return Err(Sp4dError::Param("min_pts must be >= 1".into()));
        }
        Ok(())
    }
}

/// Cluster a single frame's points. Empty input yields an empty labeling.
pub fn dbscan_points(points: &[Point3], params: &DbscanParams) -> Result<Vec<i32>> {
    params.validate()?;
    if points.is_empty() {
        return Ok(Vec::new());
    }
    let index = NeighborIndex::new(points);
    let eps = params.eps;
    expand(points.len(), params.min_pts, |i| {
        index
            .radius_query(&points[i], eps)
            .expect("eps validated > 0")
    })
}

/// Cluster the rows of a symmetric distance matrix with neighborhoods
/// `N_eps(i) = {j : dist[i][j] <= eps}`.
pub fn dbscan_matrix(dist: &[Vec<f64>], params: &DbscanParams) -> Result<Vec<i32>> {
    params.validate()?;
    let n = dist.len();
    for (i, row) in dist.iter().enumerate() {
        if row.len() != n {
            return Err(Sp4dError::Param(format!(
                "distance matrix row {i} has {} entries, expected {n}",
                row.len()
            )));
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if (dist[i][j] - dist[j][i]).abs() > 1e-9 {
                return Err(Sp4dError::Param(format!(
                    "distance matrix asymmetric at ({i},{j}): {} vs {}",
                    dist[i][j], dist[j][i]
                )));
            }
        }
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let eps = params.eps;
    expand(n, params.min_pts, |i| {
        (0..n).filter(|&j| dist[i][j] <= eps).collect()
    })
}

/// Shared expansion over an abstract neighborhood function.
fn expand<F>(n: usize, min_pts: usize, neighbors: F) -> Result<Vec<i32>>
where
    F: Fn(usize) -> Vec<usize>,
{
    const UNSET: i32 = i32::MIN;
    let mut labels = vec![UNSET; n];
    let mut visited = vec![false; n];
    let mut cluster = 0i32;
    let mut queue = VecDeque::new();

    for seed in 0..n {
        if visited[seed] {
            continue;
        }
        visited[seed] = true;
        let hood = neighbors(seed);
        if hood.len() < min_pts {
            labels[seed] = NOISE;
            continue;
        }
        labels[seed] = cluster;
        queue.clear();
        queue.extend(hood);
        while let Some(q) = queue.pop_front() {
            if labels[q] == NOISE {
                labels[q] = cluster; // border point reclaimed
            }
            if visited[q] {
                continue;
            }
            visited[q] = true;
            labels[q] = cluster;
            let hood_q = neighbors(q);
            if hood_q.len() >= min_pts {
                queue.extend(hood_q);
            }
        }
        cluster += 1;
    }

    debug_assert!(labels.iter().all(|&l| l != UNSET));
    Ok(canonicalize_frame(&labels))
}
