//! Core domain types shared by every pipeline stage.
//!
//! Identity is carried by point *indices*, never by coordinates: a point is
//! "point `i` of frame `t`" for the whole run, and all downstream sets
//! (clusters, superpoint members, instance members) are index sets. Label
//! arrays use two fixed sentinels, [`NOISE`] and [`GROUND`], in memory and
//! in every file format.

use crate::error::{Result, Sp4dError};

/// Label for points not absorbed by any cluster.
pub const NOISE: i32 = -1;
/// Label for points masked out by ground removal.
pub const GROUND: i32 = -2;

/// A 3D point or displacement, meters, double precision.
pub type Point3 = [f64; 3];

pub fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn add(a: Point3, b: Point3) -> Point3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn dot(a: Point3, b: Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm(a: Point3) -> f64 {
    dot(a, a).sqrt()
}

pub fn dist(a: Point3, b: Point3) -> f64 {
    norm(sub(a, b))
}

pub fn scale(a: Point3, s: f64) -> Point3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

/// One LiDAR frame: an ordered array of points plus an optional ground mask.
#[derive(Debug, Clone, PartialEq)]
pub struct PointFrame {
    /// Frame index within the sequence.
    pub t: usize,
    /// Point positions; the array index is the point's stable identity.
    pub points: Vec<Point3>,
    /// `true` marks a ground point. `None` until ground removal ran.
    pub ground_mask: Option<Vec<bool>>,
}

impl PointFrame {
    pub fn new(t: usize, points: Vec<Point3>) -> Self {
        PointFrame {
            t,
            points,
            ground_mask: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_ground(&self, i: usize) -> bool {
        self.ground_mask.as_ref().is_some_and(|m| m[i])
    }

    /// Indices of points not masked as ground (all points if no mask).
    pub fn non_ground_indices(&self) -> Vec<usize> {
        match &self.ground_mask {
            None => (0..self.points.len()).collect(),
            Some(m) => (0..self.points.len()).filter(|&i| !m[i]).collect(),
        }
    }
}

/// An ordered, contiguous sequence of LiDAR frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub frames: Vec<PointFrame>,
}

impl FrameSequence {
    pub fn new(frames: Vec<PointFrame>) -> Self {
        FrameSequence { frames }
    }

    /// Number of frames T.
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Per-frame integer labels with the [`NOISE`]/[`GROUND`] sentinels.
///
/// After canonicalization the non-sentinel labels within a frame are
/// `0..K_t-1`, numbered by first occurrence in ascending point index.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterLabeling {
    /// `labels[t][i]` is the label of point `i` at frame `t`.
    pub labels: Vec<Vec<i32>>,
}

impl ClusterLabeling {
    pub fn new(labels: Vec<Vec<i32>>) -> Self {
        ClusterLabeling { labels }
    }

    /// Number of distinct non-sentinel labels in frame `t`.
    /// Assumes canonical labels (0..K-1).
    pub fn cluster_count(&self, t: usize) -> usize {
        self.labels[t]
            .iter()
            .filter(|&&l| l >= 0)
            .max()
            .map_or(0, |&m| m as usize + 1)
    }

    /// Point indices of cluster `k` in frame `t`, ascending.
    pub fn cluster_members(&self, t: usize, k: i32) -> Vec<usize> {
        self.labels[t]
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == k)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Per-point 3D displacements mapping frame `t` onto frame `t+1`.
///
/// `slices[t]` has exactly one row per point of frame `t`, for
/// `t = 0..T-2`. Ground points carry zero flow.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub slices: Vec<Vec<Point3>>,
}

impl FlowField {
    pub fn new(slices: Vec<Vec<Point3>>) -> Self {
        FlowField { slices }
    }

    /// Number of frame pairs covered (T-1 for a full sequence).
    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    /// Check coverage and finiteness against a sequence.
    pub fn validate(&self, seq: &FrameSequence) -> Result<()> {
        if self.slices.len() + 1 != seq.len() {
            return Err(Sp4dError::Param(format!(
                "flow covers {} pairs but sequence has {} frames",
                self.slices.len(),
                seq.len()
            )));
        }
        for (t, slice) in self.slices.iter().enumerate() {
            if slice.len() != seq.frames[t].len() {
                return Err(Sp4dError::Param(format!(
                    "flow slice {} has {} rows, frame has {} points",
                    t,
                    slice.len(),
                    seq.frames[t].len()
                )));
            }
            for (i, f) in slice.iter().enumerate() {
                if !f.iter().all(|v| v.is_finite()) {
                    return Err(Sp4dError::Param(format!(
                        "non-finite flow at pair {} row {}",
                        t, i
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One defect found by [`validate_sequence`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub frame: Option<usize>,
    pub point: Option<usize>,
    pub kind: ViolationKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    EmptySequence,
    EmptyFrame,
    NonFinite,
    NonContiguousIndex,
}

/// Outcome of sequence validation; empty `violations` means OK.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check a sequence for empty frames, non-finite coordinates and
/// non-contiguous frame indices. Pure report; never mutates.
pub fn validate_sequence(seq: &FrameSequence) -> ValidationReport {
    let mut report = ValidationReport::default();
    if seq.is_empty() {
        report.violations.push(Violation {
            frame: None,
            point: None,
            kind: ViolationKind::EmptySequence,
        });
        return report;
    }
    for (expected_t, frame) in seq.frames.iter().enumerate() {
        if frame.t != expected_t {
            report.violations.push(Violation {
                frame: Some(expected_t),
                point: None,
                kind: ViolationKind::NonContiguousIndex,
            });
        }
        if frame.is_empty() {
            report.violations.push(Violation {
                frame: Some(expected_t),
                point: None,
                kind: ViolationKind::EmptyFrame,
            });
        }
        for (i, p) in frame.points.iter().enumerate() {
            if !p.iter().all(|v| v.is_finite()) {
                report.violations.push(Violation {
                    frame: Some(expected_t),
                    point: Some(i),
                    kind: ViolationKind::NonFinite,
                });
            }
        }
    }
    report
}

/// Renumber the non-sentinel labels of one frame to `0..K-1` in order of
/// first occurrence by ascending point index. Sentinels pass through.
pub fn canonicalize_frame(labels: &[i32]) -> Vec<i32> {
    let mut remap: Vec<(i32, i32)> = Vec::new(); // (old, new), small K: linear scan
    let mut next = 0i32;
    labels
        .iter()
        .map(|&l| {
            if l < 0 {
                l
            } else if let Some(&(_, n)) = remap.iter().find(|&&(o, _)| o == l) {
                n
            } else {
                remap.push((l, next));
                next += 1;
                next - 1
            }
        })
        .collect()
}

/// Canonicalize every frame of a labeling. Idempotent; preserves the
/// partition (two points share a label before iff after).
pub fn canonicalize_labels(lab: &ClusterLabeling) -> ClusterLabeling {
    ClusterLabeling::new(lab.labels.iter().map(|f| canonicalize_frame(f)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq3() -> FrameSequence {
        FrameSequence::new(
            (0..3)
                .map(|t| PointFrame::new(t, vec![[0.0, 0.0, 0.0], [1.0, 2.0, 3.0]]))
                .collect(),
        )
    }

    #[test]
    fn validate_well_formed() {
        assert!(validate_sequence(&seq3()).is_ok());
    }

    #[test]
    fn validate_nan_reported_with_location() {
        let mut seq = seq3();
        seq.frames[1].points.push([0.0, f64::NAN, 0.0]);
        let r = validate_sequence(&seq);
        assert_eq!(r.violations.len(), 1);
        assert_eq!(
            r.violations[0],
            Violation {
                frame: Some(1),
                point: Some(2),
                kind: ViolationKind::NonFinite
            }
        );
    }

    #[test]
    fn validate_empty_sequence() {
        let r = validate_sequence(&FrameSequence::new(vec![]));
        assert_eq!(r.violations[0].kind, ViolationKind::EmptySequence);
    }

    #[test]
    fn validate_non_contiguous() {
        let mut seq = seq3();
        seq.frames[2].t = 5;
        let r = validate_sequence(&seq);
        assert_eq!(r.violations[0].kind, ViolationKind::NonContiguousIndex);
        assert_eq!(r.violations[0].frame, Some(2));
    }

    #[test]
    fn validate_does_not_mutate() {
        let seq = seq3();
        let before = format!("{:?}", seq);
        let _ = validate_sequence(&seq);
        assert_eq!(before, format!("{:?}", seq));
    }

    #[test]
    fn canonicalize_first_occurrence() {
        assert_eq!(canonicalize_frame(&[5, 5, -1, 9]), vec![0, 0, -1, 1]);
    }

    #[test]
    fn canonicalize_all_noise() {
        assert_eq!(canonicalize_frame(&[-1, -1]), vec![-1, -1]);
    }

    #[test]
    fn canonicalize_already_canonical() {
        assert_eq!(canonicalize_frame(&[0, 1, 1]), vec![0, 1, 1]);
    }

    #[test]
    fn canonicalize_preserves_ground() {
        assert_eq!(canonicalize_frame(&[-2, 7, -2, 7, 3]), vec![-2, 0, -2, 0, 1]);
    }

    #[test]
    fn canonicalize_idempotent_and_partition_preserving() {
        let lab = ClusterLabeling::new(vec![vec![4, -1, 4, 2, -2, 2, 9]]);
        let once = canonicalize_labels(&lab);
        let twice = canonicalize_labels(&once);
        assert_eq!(once, twice);
        // partition preserved
        let a = &lab.labels[0];
        let b = &once.labels[0];
        for i in 0..a.len() {
            for j in 0..a.len() {
                assert_eq!(a[i] == a[j], b[i] == b[j]);
            }
        }
    }
}
