//! 4D superpoint generation: cross-frame cluster matching by scene-flow
//! consistency plus the vanish/emerge/split lifecycle.
//!
//! A 4D superpoint is one cluster tracked through time: a contiguous
//! lifespan `[t1, t2]` and, for every frame in it, the point-index set of
//! the cluster it occupies in that frame. The forward sweep warps each
//! frame-`t` cluster by its per-point flow, counts how many points land
//! inside each frame-`t+1` cluster (nearest eligible neighbor within
//! `r_match`), and decides per source cluster:
//!
//! - **vanish** — no target received at least `n_min` landed points;
//! - **split** — at least two targets each received a `theta_split`
//!   fraction of the landed points (children get fresh ids, the parent
//!   closes);
//! - **match** — otherwise the target with the most landings inherits the
//!   source's identity (ties to the lower target id).
//!
//! When two sources claim the same target, the larger landed count wins
//! and the loser vanishes (ties to the lower superpoint id). Target
//! clusters nobody claimed start fresh superpoints.

use std::collections::BTreeMap;

use crate::error::{Result, Sp4dError};
use crate::index::NeighborIndex;
use crate::model::{add, dist, ClusterLabeling, FlowField, FrameSequence, Point3};

/// Thresholds of the matching step.
#[derive(Debug, Clone, Copy)]
pub struct MatchThresholds {
    /// Landing radius for the Eq.-4 indicator, meters.
    pub r_match: f64,
    /// Minimum landed points for a valid match.
    pub n_min: usize,
    /// Fraction of landed points a split child must receive.
    pub theta_split: f64,
}

impl Default for MatchThresholds {
    fn default() -> Self {
        MatchThresholds {
            r_match: 0.5,
            n_min: 3,
            theta_split: 0.3,
        }
    }
}

/// One tracked cluster over its lifespan.
#[derive(Debug, Clone)]
pub struct SuperPoint4D {
    pub id: usize,
    /// Parent superpoint when born from a split.
    pub parent: Option<usize>,
    /// First frame of the lifespan.
    pub t1: usize,
    /// Last frame of the lifespan (inclusive).
    pub t2: usize,
    /// Per-frame member point indices, `members[t - t1]`, each sorted.
    pub members: Vec<Vec<usize>>,
}

impl SuperPoint4D {
    pub fn alive_at(&self, t: usize) -> bool {
        t >= self.t1 && t <= self.t2
    }

    pub fn members_at(&self, t: usize) -> Option<&[usize]> {
        if self.alive_at(t) {
            Some(&self.members[t - self.t1])
        } else {
            None
        }
    }

    pub fn lifespan(&self) -> (usize, usize) {
        (self.t1, self.t2)
    }
}

/// Outcome of matching one source cluster against frame t+1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MatchDecision {
    Vanish,
    Match(i32),
    Split(Vec<i32>),
}

/// Eligible (non-ground, non-noise) points of a target frame, indexed for
/// nearest-neighbor lookup and mapped back to their cluster ids.
#[derive(Debug)]
pub struct TargetFrame {
    index: NeighborIndex,
    cluster_of: Vec<i32>,
}

impl TargetFrame {
    /// Build from a frame's points and labels. Returns `None` when the
    /// frame has no cluster points at all.
    pub fn new(points: &[Point3], labels: &[i32]) -> Option<Self> {
        let eligible: Vec<usize> = (0..points.len()).filter(|&i| labels[i] >= 0).collect();
        if eligible.is_empty() {
            return None;
        }
        let pts: Vec<Point3> = eligible.iter().map(|&i| points[i]).collect();
        let cluster_of = eligible.iter().map(|&i| labels[i]).collect();
        Some(TargetFrame {
            index: NeighborIndex::new(&pts),
            cluster_of,
        })
    }
}

/// Count, per target cluster, how many source points land inside it after
/// warping by their flow (Eq.-4 indicator realized as nearest eligible
/// neighbor within `r_match`). Only nonzero counts are returned.
pub fn count_landings(
    src_cluster: &[usize],
    frame_points: &[Point3],
    flow_slice: &[Point3],
    target: &TargetFrame,
    r_match: f64,
) -> Result<BTreeMap<i32, usize>> {
    if !(r_match > 0.0) {
        return Err(Sp4dError::Param(format!(
            "r_match must be > 0, got {r_match}"
        )));
    }
    let mut counts = BTreeMap::new();
    for &i in src_cluster {
        let warped = add(frame_points[i], flow_slice[i]);
        let nn = target
            .index
            .knn_query(&warped, 1, false)
            .expect("target frame non-empty")[0];
        if dist(warped, target.index.point(nn)) <= r_match {
            *counts.entry(target.cluster_of[nn]).or_insert(0) += 1;
        }
    }
    Ok(counts)
}

/// Apply the lifecycle decision rule to one source cluster's landing
/// counts.
pub fn match_clusters(counts: &BTreeMap<i32, usize>, th: &MatchThresholds) -> MatchDecision {
    let viable = counts.values().any(|&c| c >= th.n_min);
    if !viable {
        return MatchDecision::Vanish;
    }
    let landed: usize = counts.values().sum();
    let split_targets: Vec<i32> = counts
        .iter()
        .filter(|(_, &c)| c as f64 >= th.theta_split * landed as f64)
        .map(|(&k, _)| k)
        .collect();
    if split_targets.len() >= 2 {
        return MatchDecision::Split(split_targets);
    }
    // argmax count, ties to the lower target id (BTreeMap iterates
    // ascending, so strict `>` keeps the first maximum)
    let mut best = None;
    for (&k, &c) in counts {
        match best {
            None => best = Some((k, c)),
            Some((_, bc)) if c > bc => best = Some((k, c)),
            _ => {}
        }
    }
    MatchDecision::Match(best.expect("counts non-empty").0)
}

/// Run the forward sweep over the whole sequence.
///
/// `labelings` must hold canonical per-frame cluster labels (ground and
/// noise as sentinels), `flow` one slice per adjacent pair.
pub fn generate_superpoints(
    seq: &FrameSequence,
    labelings: &ClusterLabeling,
    flow: &FlowField,
    th: &MatchThresholds,
) -> Result<Vec<SuperPoint4D>> {
    let t_count = seq.len();
    if labelings.labels.len() != t_count {
        return Err(Sp4dError::Param(format!(
            "labelings cover {} frames, sequence has {}",
            labelings.labels.len(),
            t_count
        )));
    }
    if t_count == 0 {
        return Ok(Vec::new());
    }
    if flow.len() + 1 != t_count {
        return Err(Sp4dError::Param(format!(
            "flow covers {} pairs, sequence needs {}",
            flow.len(),
            t_count - 1
        )));
    }
    for (t, frame) in seq.frames.iter().enumerate() {
        if labelings.labels[t].len() != frame.len() {
            return Err(Sp4dError::Param(format!(
                "labeling of frame {t} has {} entries, frame has {} points",
                labelings.labels[t].len(),
                frame.len()
            )));
        }
    }

    let mut superpoints: Vec<SuperPoint4D> = Vec::new();
    // cluster id at current frame -> superpoint index
    let mut owner: BTreeMap<i32, usize> = BTreeMap::new();

    // Every frame-0 cluster starts a superpoint.
    for k in 0..labelings.cluster_count(0) as i32 {
        let id = superpoints.len();
        owner.insert(k, id);
        superpoints.push(SuperPoint4D {
            id,
            parent: None,
            t1: 0,
            t2: 0,
            members: vec![labelings.cluster_members(0, k)],
        });
    }

    for t in 0..t_count - 1 {
        let next_labels = &labelings.labels[t + 1];
        let target = TargetFrame::new(&seq.frames[t + 1].points, next_labels);
        let next_cluster_count = labelings.cluster_count(t + 1) as i32;

        // Decisions for every live source cluster at t, ascending sp id.
        let mut decisions: Vec<(usize, MatchDecision, BTreeMap<i32, usize>)> = Vec::new();
        for &sp in owner.values() {
            let counts = match &target {
                Some(tf) => count_landings(
                    &superpoints[sp].members[t - superpoints[sp].t1],
                    &seq.frames[t].points,
                    &flow.slices[t],
                    tf,
                    th.r_match,
                )?,
                None => BTreeMap::new(),
            };
            decisions.push((sp, match_clusters(&counts, th), counts));
        }
        decisions.sort_by_key(|(sp, _, _)| *sp);

        // Resolve conflicting claims per target: larger landed count wins,
        // ties to the lower superpoint id.
        let mut claim: BTreeMap<i32, (usize, usize)> = BTreeMap::new(); // target -> (winner sp, count)
        for (sp, decision, counts) in &decisions {
            let targets: Vec<i32> = match decision {
                MatchDecision::Vanish => Vec::new(),
                MatchDecision::Match(m) => vec![*m],
                MatchDecision::Split(children) => children.clone(),
            };
            for m in targets {
                let c = counts[&m];
                match claim.get(&m) {
                    Some(&(wsp, wc)) if (wc, usize::MAX - wsp) >= (c, usize::MAX - sp) => {}
                    _ => {
                        claim.insert(m, (*sp, c));
                    }
                }
            }
        }

        let mut next_owner: BTreeMap<i32, usize> = BTreeMap::new();
        // Extensions and split children, ascending sp id.
        for (sp, decision, _) in &decisions {
            let surviving: Vec<i32> = match decision {
                MatchDecision::Vanish => Vec::new(),
                MatchDecision::Match(m) => {
                    if claim[m].0 == *sp {
                        vec![*m]
                    } else {
                        Vec::new()
                    }
                }
                MatchDecision::Split(children) => children
                    .iter()
                    .copied()
                    .filter(|m| claim[m].0 == *sp)
                    .collect(),
            };
            match (decision, surviving.len()) {
                (_, 0) => {} // vanishes (lifespan already ends at t)
                (MatchDecision::Split(_), n) if n >= 2 => {
                    // parent closes at t; children are born at t+1
                    for m in surviving {
                        let child = superpoints.len();
                        superpoints.push(SuperPoint4D {
                            id: child,
                            parent: Some(*sp),
                            t1: t + 1,
                            t2: t + 1,
                            members: vec![members_of(next_labels, m)],
                        });
                        next_owner.insert(m, child);
                    }
                }
                (_, _) => {
                    // single survivor: the source identity continues
                    let m = surviving[0];
                    let s = &mut superpoints[*sp];
                    s.t2 = t + 1;
                    s.members.push(members_of(next_labels, m));
                    next_owner.insert(m, *sp);
                }
            }
        }

        // Emergence: unclaimed clusters at t+1 start new superpoints.
        for m in 0..next_cluster_count {
            next_owner.entry(m).or_insert_with(|| {
                let id = superpoints.len();
                superpoints.push(SuperPoint4D {
                    id,
                    parent: None,
                    t1: t + 1,
                    t2: t + 1,
                    members: vec![members_of(next_labels, m)],
                });
                id
            });
        }

        owner = next_owner;
    }

    for sp in &superpoints {
        debug_assert!(sp.members.iter().all(|m| !m.is_empty()));
        debug_assert_eq!(sp.members.len(), sp.t2 - sp.t1 + 1);
    }
    Ok(superpoints)
}

fn members_of(labels: &[i32], cluster: i32) -> Vec<usize> {
    labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == cluster)
        .map(|(i, _)| i)
        .collect()
}
