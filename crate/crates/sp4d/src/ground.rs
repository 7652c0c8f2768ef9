//! Per-frame ground removal, the preprocessing step before clustering.
//!
//! Default method is a seeded RANSAC plane fit refined by a least-squares
//! pass over the inliers. The mask is one-sided: everything within the
//! inlier threshold of the plane *or below it* is ground, with the plane
//! orientation chosen so the masked side is the low one. If RANSAC finds
//! too few inliers the frame falls back to a plain height cutoff.
//!
//! Candidate planes must be near-level (|n_z| above a cos threshold) and
//! are scored by in-band count minus the count of points below the band:
//! ground is a support surface, so points underneath a candidate are
//! evidence against it. Without the penalty a slightly tilted plane
//! hovering above the road can out-count the road itself and the
//! one-sided mask then swallows every object under it.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, Sp4dError};
use crate::model::{Point3, PointFrame};

/// Inlier fraction below which the RANSAC fit is rejected.
const MIN_INLIER_FRACTION: f64 = 0.2;

/// Candidate planes must be this upright (cos of max tilt, about 32
/// degrees); steeper fits are walls, not ground.
const MIN_UPRIGHT_NZ: f64 = 0.85;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroundMethod {
    Ransac,
    Height,
}

#[derive(Debug, Clone)]
pub struct GroundConfig {
    pub method: GroundMethod,
    /// Plane inlier threshold, meters.
    pub threshold_m: f64,
    /// RANSAC iterations.
    pub iterations: usize,
    /// RANSAC sampling seed.
    pub seed: u64,
    /// Height-fallback cutoff above the frame's minimum z, meters.
    pub z_max_m: f64,
}

impl Default for GroundConfig {
    fn default() -> Self {
        GroundConfig {
            method: GroundMethod::Ransac,
            threshold_m: 0.15,
            iterations: 200,
            seed: 0,
            z_max_m: 0.3,
        }
    }
}

/// Fitted ground plane for one frame: unit normal `n` and offset `d`, with
/// signed distance `n·p + d` (positive above ground).
#[derive(Debug, Clone)]
pub struct GroundModel {
    pub normal: Point3,
    pub offset: f64,
    pub inlier_threshold: f64,
    pub method_used: GroundMethod,
    /// Fraction of frame points within the threshold band of the plane.
    pub inlier_fraction: f64,
}

impl GroundModel {
    pub fn signed_distance(&self, p: &Point3) -> f64 {
        self.normal[0] * p[0] + self.normal[1] * p[1] + self.normal[2] * p[2] + self.offset
    }
}

/// Compute the ground mask for one frame. `mask[i]` is true for ground
/// points; the frame itself is not modified.
pub fn remove_ground(frame: &PointFrame, cfg: &GroundConfig) -> Result<(Vec<bool>, GroundModel)> {
    if frame.is_empty() {
        return Err(Sp4dError::Param(format!(
            "frame {} is empty, cannot fit ground",
            frame.t
        )));
    }
    match cfg.method {
        GroundMethod::Height => Ok(height_mask(frame, cfg)),
        GroundMethod::Ransac => {
            match ransac_plane(&frame.points, cfg) {
                Some(model) => {
                    let mask: Vec<bool> = frame
                        .points
                        .iter()
                        .map(|p| model.signed_distance(p) <= model.inlier_threshold)
                        .collect();
                    Ok((mask, model))
                }
                // Too few inliers: no dominant plane in this frame.
                None => Ok(height_mask(frame, cfg)),
            }
        }
    }
}

fn height_mask(frame: &PointFrame, cfg: &GroundConfig) -> (Vec<bool>, GroundModel) {
    let min_z = frame
        .points
        .iter()
        .map(|p| p[2])
        .fold(f64::INFINITY, f64::min);
    let cutoff = min_z + cfg.z_max_m;
    let mask: Vec<bool> = frame.points.iter().map(|p| p[2] <= cutoff).collect();
    let n_in = mask.iter().filter(|&&m| m).count();
    let model = GroundModel {
        normal: [0.0, 0.0, 1.0],
        offset: -cutoff,
        inlier_threshold: cfg.threshold_m,
        method_used: GroundMethod::Height,
        inlier_fraction: n_in as f64 / frame.points.len() as f64,
    };
    (mask, model)
}

fn ransac_plane(points: &[Point3], cfg: &GroundConfig) -> Option<GroundModel> {
    let n = points.len();
    if n < 3 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best_score = i64::MIN;
    let mut best_count = 0usize;
    let mut best: Option<(Point3, f64)> = None;

    for _ in 0..cfg.iterations {
        let sample = rand::seq::index::sample(&mut rng, n, 3);
        let a = points[sample.index(0)];
        let b = points[sample.index(1)];
        let c = points[sample.index(2)];
        let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
        let mut normal = [
            u[1] * v[2] - u[2] * v[1],
            u[2] * v[0] - u[0] * v[2],
            u[0] * v[1] - u[1] * v[0],
        ];
        let len = (normal[0] * normal[0] + normal[1] * normal[1] + normal[2] * normal[2]).sqrt();
        if len < 1e-12 {
            continue; // collinear sample
        }
        for x in normal.iter_mut() {
            *x /= len;
        }
        if normal[2].abs() < MIN_UPRIGHT_NZ {
            continue;
        }
        let (normal, offset) = oriented_up(normal, -(dot3(normal, a)));
        let (in_band, below) = band_counts(points, normal, offset, cfg.threshold_m);
        let score = in_band as i64 - below as i64;
        if score > best_score {
            best_score = score;
            best_count = in_band;
            best = Some((normal, offset));
        }
    }

    let (normal, offset) = best?;
    if (best_count as f64) < MIN_INLIER_FRACTION * n as f64 {
        return None;
    }

    // Least-squares refit on the consensus set: centroid + smallest
    // eigenvector of the covariance.
    let inliers: Vec<usize> = (0..n)
        .filter(|&i| (dot3(normal, points[i]) + offset).abs() <= cfg.threshold_m)
        .collect();
    let (normal, offset) = refit_plane(points, &inliers).unwrap_or((normal, offset));
    let (normal, offset) = oriented_up(normal, offset);

    let (in_band, _) = band_counts(points, normal, offset, cfg.threshold_m);
    Some(GroundModel {
        normal,
        offset,
        inlier_threshold: cfg.threshold_m,
        method_used: GroundMethod::Ransac,
        inlier_fraction: in_band as f64 / n as f64,
    })
}

fn dot3(a: Point3, b: Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Flip the plane so the normal points up (positive z component).
fn oriented_up(normal: Point3, offset: f64) -> (Point3, f64) {
    if normal[2] < 0.0 {
        ([-normal[0], -normal[1], -normal[2]], -offset)
    } else {
        (normal, offset)
    }
}

/// Points inside the threshold band, and strictly below it.
fn band_counts(points: &[Point3], normal: Point3, offset: f64, thr: f64) -> (usize, usize) {
    let mut in_band = 0usize;
    let mut below = 0usize;
    for p in points {
        let signed = dot3(normal, *p) + offset;
        if signed.abs() <= thr {
            in_band += 1;
        } else if signed < -thr {
            below += 1;
        }
    }
    (in_band, below)
}

fn refit_plane(points: &[Point3], inliers: &[usize]) -> Option<(Point3, f64)> {
    if inliers.len() < 3 {
        return None;
    }
    let m = inliers.len() as f64;
    let mut c = [0.0f64; 3];
    for &i in inliers {
        for a in 0..3 {
            c[a] += points[i][a];
        }
    }
    for v in c.iter_mut() {
        *v /= m;
    }
    let mut cov = Matrix3::<f64>::zeros();
    for &i in inliers {
        let d = Vector3::new(points[i][0] - c[0], points[i][1] - c[1], points[i][2] - c[2]);
        cov += d * d.transpose();
    }
    cov /= m;
    let eig = SymmetricEigen::new(cov);
    let mut min_idx = 0;
    for k in 1..3 {
        if eig.eigenvalues[k] < eig.eigenvalues[min_idx] {
            min_idx = k;
        }
    }
    let v = eig.eigenvectors.column(min_idx);
    let len = v.norm();
    if len < 1e-12 {
        return None;
    }
    let normal = [v[0] / len, v[1] / len, v[2] / len];
    let offset = -(normal[0] * c[0] + normal[1] * c[1] + normal[2] * c[2]);
    Some((normal, offset))
}
