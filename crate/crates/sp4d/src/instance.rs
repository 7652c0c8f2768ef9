//! Superpoint-to-instance clustering and per-instance initialization.
//!
//! Each superpoint gets per-frame statistics (centroid and mean flow).
//! Pairs of co-alive superpoints are scored by a blend of motion-direction
//! cosine similarity and centroid proximity; frame-wise scores are summed
//! into a similarity matrix, DBSCAN over its distance conversion merges
//! over-decomposed superpoints into instances. Each instance then receives
//! a canonical frame (maximum point count), a per-frame deformation track
//! accumulated from instance mean flow, and a static/dynamic class from
//! its average flow magnitude.


use crate::dbscan::{dbscan_matrix, DbscanParams};
use crate::error::{Result, Sp4dError};
use crate::model::{add, dist, dot, norm, scale, sub, FlowField, FrameSequence, Point3};
use crate::superpoint::SuperPoint4D;

/// Flows shorter than this have no usable direction; the cosine term of
/// the similarity is defined as zero for them.
pub const EPS_FLOW: f64 = 1e-6;

/// Per-frame centroid and mean flow of one superpoint.
#[derive(Debug, Clone)]
pub struct SuperPointStats {
    pub t1: usize,
    pub t2: usize,
    /// `centroid[t - t1]` for t in the lifespan.
    pub centroid: Vec<Point3>,
    /// `mean_flow[t - t1]`; `None` at the last sequence frame, which has
    /// no outgoing flow.
    pub mean_flow: Vec<Option<Point3>>,
}

impl SuperPointStats {
    pub fn alive_at(&self, t: usize) -> bool {
        t >= self.t1 && t <= self.t2
    }

    pub fn centroid_at(&self, t: usize) -> Option<Point3> {
        if self.alive_at(t) {
            Some(self.centroid[t - self.t1])
        } else {
            None
        }
    }

    pub fn flow_at(&self, t: usize) -> Option<Point3> {
        if self.alive_at(t) {
            self.mean_flow[t - self.t1]
        } else {
            None
        }
    }
}

/// Exact arithmetic means over the member set, per lifespan frame.
pub fn compute_stats(
    sp: &SuperPoint4D,
    seq: &FrameSequence,
    flow: &FlowField,
) -> Result<SuperPointStats> {
    let mut centroid = Vec::with_capacity(sp.t2 - sp.t1 + 1);
    let mut mean_flow = Vec::with_capacity(sp.t2 - sp.t1 + 1);
    for t in sp.t1..=sp.t2 {
        let members = sp.members_at(t).expect("t within lifespan");
        if members.is_empty() {
            return Err(Sp4dError::Invariant(format!(
                "superpoint {} has an empty member set at frame {t}",
                sp.id
            )));
        }
        let m = members.len() as f64;
        let mut c = [0.0f64; 3];
        for &i in members {
            c = add(c, seq.frames[t].points[i]);
        }
        centroid.push([c[0] / m, c[1] / m, c[2] / m]);
        if t < flow.len() {
            let mut f = [0.0f64; 3];
            for &i in members {
                f = add(f, flow.slices[t][i]);
            }
            mean_flow.push(Some([f[0] / m, f[1] / m, f[2] / m]));
        } else {
            mean_flow.push(None);
        }
    }
    Ok(SuperPointStats {
        t1: sp.t1,
        t2: sp.t2,
        centroid,
        mean_flow,
    })
}

/// Frame-t similarity of two superpoints:
/// `lambda * cos(F_a, F_b) + (1 - lambda) * exp(-||mu_a - mu_b||^2 / sigma^2)`.
///
/// Both superpoints must be alive at `t` with defined flow. A flow below
/// [`EPS_FLOW`] contributes a zero cosine term.
pub fn pair_similarity(
    a: &SuperPointStats,
    b: &SuperPointStats,
    t: usize,
    lambda: f64,
    sigma: f64,
) -> f64 {
    let fa = a.flow_at(t).expect("a alive at t with flow");
    let fb = b.flow_at(t).expect("b alive at t with flow");
    let mu_a = a.centroid_at(t).expect("a alive at t");
    let mu_b = b.centroid_at(t).expect("b alive at t");
    let na = norm(fa);
    let nb = norm(fb);
    let cosine = if na < EPS_FLOW || nb < EPS_FLOW {
        0.0
    } else {
        dot(fa, fb) / (na * nb)
    };
    let d = dist(mu_a, mu_b);
    lambda * cosine + (1.0 - lambda) * (-(d * d) / (sigma * sigma)).exp()
}

/// Aggregated similarity `M = sum_t M^t` over co-alive frames, plus the
/// co-alive frame counts used for normalization. Pairs that never share a
/// frame with defined flow carry `NEG_INFINITY` and are excluded from
/// merging. The diagonal holds each row's maximum co-alive count; the
/// distance conversion ignores it.
#[derive(Debug, Clone)]
pub struct SimilarityMatrix {
    pub values: Vec<Vec<f64>>,
    pub co_alive: Vec<Vec<usize>>,
    pub lambda: f64,
    pub sigma: f64,
}

pub fn aggregate_similarity(stats: &[SuperPointStats], lambda: f64, sigma: f64) -> SimilarityMatrix {
    let k = stats.len();
    let mut values = vec![vec![0.0f64; k]; k];
    let mut co_alive = vec![vec![0usize; k]; k];
    for i in 0..k {
        for j in (i + 1)..k {
            let lo = stats[i].t1.max(stats[j].t1);
            let hi = stats[i].t2.min(stats[j].t2);
            let mut sum = 0.0;
            let mut frames = 0usize;
            let mut t = lo;
            while t <= hi && lo <= hi {
                if stats[i].flow_at(t).is_some() && stats[j].flow_at(t).is_some() {
                    sum += pair_similarity(&stats[i], &stats[j], t, lambda, sigma);
                    frames += 1;
                }
                t += 1;
            }
            if frames == 0 {
                values[i][j] = f64::NEG_INFINITY;
                values[j][i] = f64::NEG_INFINITY;
            } else {
                values[i][j] = sum;
                values[j][i] = sum;
            }
            co_alive[i][j] = frames;
            co_alive[j][i] = frames;
        }
    }
    for i in 0..k {
        let row_max = (0..k).filter(|&j| j != i).map(|j| co_alive[i][j]).max();
        values[i][i] = row_max.unwrap_or(0) as f64;
    }
    SimilarityMatrix {
        values,
        co_alive,
        lambda,
        sigma,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct InstanceParams {
    /// DBSCAN eps over the similarity-derived distances.
    pub eps: f64,
    pub min_pts: usize,
    /// Normalize M by co-alive frame count before the distance conversion.
    pub normalize: bool,
}

impl Default for InstanceParams {
    fn default() -> Self {
        InstanceParams {
            eps: 0.35,
            min_pts: 1,
            normalize: true,
        }
    }
}

/// Distance assigned to pairs that never share a frame; at least as far
/// as any real pair after normalization (1 - M_hat <= 1 + lambda <= 2).
const SENTINEL_DISTANCE: f64 = 2.0;

/// One merged instance: a set of superpoints plus the union of their
/// member points per frame. Frames inside `[t1, t2]` where no member
/// superpoint is alive hold an empty set (occlusion gap).
#[derive(Debug, Clone)]
pub struct Instance {
    pub id: usize,
    pub superpoints: Vec<usize>,
    pub t1: usize,
    pub t2: usize,
    /// `members[t - t1]`, sorted point indices.
    pub members: Vec<Vec<usize>>,
}

impl Instance {
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

    pub fn point_count_at(&self, t: usize) -> usize {
        self.members_at(t).map_or(0, |m| m.len())
    }
}

/// Superpoint-to-instance assignment plus the assembled instances.
#[derive(Debug, Clone)]
pub struct InstanceDecomposition {
    /// `instance_of[sp_id]` = instance id.
    pub instance_of: Vec<usize>,
    pub instances: Vec<Instance>,
}

/// DBSCAN over the similarity matrix. Noise superpoints become singleton
/// instances; instance ids are canonical in ascending superpoint order.
pub fn cluster_superpoints(
    m: &SimilarityMatrix,
    superpoints: &[SuperPoint4D],
    params: &InstanceParams,
) -> Result<InstanceDecomposition> {
    let k = m.values.len();
    if superpoints.len() != k {
        return Err(Sp4dError::Param(format!(
            "similarity matrix is {k}x{k} but there are {} superpoints",
            superpoints.len()
        )));
    }
    let mut dist_matrix = vec![vec![0.0f64; k]; k];
    for i in 0..k {
        for j in (i + 1)..k {
            let d = if m.co_alive[i][j] == 0 {
                SENTINEL_DISTANCE
            } else {
                let v = if params.normalize {
                    m.values[i][j] / m.co_alive[i][j] as f64
                } else {
                    m.values[i][j]
                };
                (1.0 - v).clamp(0.0, SENTINEL_DISTANCE)
            };
            dist_matrix[i][j] = d;
            dist_matrix[j][i] = d;
        }
    }
    let labels = dbscan_matrix(
        &dist_matrix,
        &DbscanParams {
            eps: params.eps,
            min_pts: params.min_pts,
        },
    )?;

    // noise rows -> fresh singleton ids after the clustered ones
    let clustered = labels.iter().filter(|&&l| l >= 0).max().map_or(0, |&l| l + 1);
    let mut next = clustered;
    let instance_of: Vec<usize> = labels
        .iter()
        .map(|&l| {
            if l >= 0 {
                l as usize
            } else {
                next += 1;
                (next - 1) as usize
            }
        })
        .collect();

    let n_instances = next as usize;
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); n_instances];
    for (sp, &inst) in instance_of.iter().enumerate() {
        groups[inst].push(sp);
    }

    let instances: Vec<Instance> = groups
        .iter()
        .enumerate()
        .map(|(id, sps)| rebuild_instance(id, sps, superpoints))
        .collect();

    Ok(InstanceDecomposition {
        instance_of,
        instances,
    })
}

/// Assemble one instance from a set of superpoints (union of member
/// sets per frame). Also used when rebuilding a decomposition from
/// label files.
pub fn rebuild_instance(id: usize, sps: &[usize], superpoints: &[SuperPoint4D]) -> Instance {
    let t1 = sps.iter().map(|&s| superpoints[s].t1).min().expect("non-empty group");
    let t2 = sps.iter().map(|&s| superpoints[s].t2).max().expect("non-empty group");
    let mut members = vec![Vec::new(); t2 - t1 + 1];
    for &s in sps {
        let sp = &superpoints[s];
        for t in sp.t1..=sp.t2 {
            members[t - t1].extend_from_slice(sp.members_at(t).expect("alive"));
        }
    }
    for m in members.iter_mut() {
        m.sort_unstable();
    }
    Instance {
        id,
        superpoints: sps.to_vec(),
        t1,
        t2,
        members,
    }
}

/// Canonical frame: the lifespan frame with the maximum point count, ties
/// to the earliest frame.
pub fn select_canonical(inst: &Instance) -> usize {
    let mut best_t = inst.t1;
    let mut best_n = inst.point_count_at(inst.t1);
    for t in inst.t1 + 1..=inst.t2 {
        let n = inst.point_count_at(t);
        if n > best_n {
            best_n = n;
            best_t = t;
        }
    }
    best_t
}

/// Instance mean flow at frame `t`: the membership-count-weighted mean of
/// the member superpoints' mean flows. `None` when no member superpoint
/// is alive with defined flow at `t`.
pub fn instance_mean_flow(
    inst: &Instance,
    stats: &[SuperPointStats],
    superpoints: &[SuperPoint4D],
    t: usize,
) -> Option<Point3> {
    let mut sum = [0.0f64; 3];
    let mut weight = 0usize;
    for &s in &inst.superpoints {
        if let Some(f) = stats[s].flow_at(t) {
            let w = superpoints[s].members_at(t).map_or(0, |m| m.len());
            sum = add(sum, scale(f, w as f64));
            weight += w;
        }
    }
    if weight == 0 {
        None
    } else {
        Some(scale(sum, 1.0 / weight as f64))
    }
}

/// Per-frame deformation of one instance relative to its canonical frame.
///
/// Scale and rotation offsets are exactly zero at initialization; only the
/// translation accumulates instance mean flow away from `t*`.
#[derive(Debug, Clone)]
pub struct DeformationTrack {
    pub instance_id: usize,
    pub canonical_frame: usize,
    /// Point indices at the canonical frame.
    pub canonical_points: Vec<usize>,
    /// One step per lifespan frame, ascending `t`.
    pub steps: Vec<DeformationStep>,
}

#[derive(Debug, Clone, Copy)]
pub struct DeformationStep {
    pub t: usize,
    pub delta_x: Point3,
    pub delta_s: Point3,
    /// Quaternion offset from the canonical orientation; zero at init.
    pub delta_r: [f64; 4],
}

impl DeformationTrack {
    pub fn step_at(&self, t: usize) -> Option<&DeformationStep> {
        self.steps.iter().find(|s| s.t == t)
    }
}

/// Accumulate the deformation track: forward sums of instance mean flow
/// for `t > t*`, backward negated sums for `t < t*`, identity at `t*`.
/// Frames with no alive members inside the lifespan (occlusion gaps)
/// contribute zero flow.
pub fn build_deformation(
    inst: &Instance,
    stats: &[SuperPointStats],
    superpoints: &[SuperPoint4D],
    flow_pairs: usize,
    canonical: usize,
) -> Result<DeformationTrack> {
    if !inst.alive_at(canonical) {
        return Err(Sp4dError::Param(format!(
            "canonical frame {canonical} outside instance lifespan [{}, {}]",
            inst.t1, inst.t2
        )));
    }
    let flow_at = |t: usize| -> Result<Point3> {
        if t >= flow_pairs {
            return Err(Sp4dError::Param(format!(
                "flow missing for pair {t} inside instance {} lifespan",
                inst.id
            )));
        }
        Ok(instance_mean_flow(inst, stats, superpoints, t).unwrap_or([0.0; 3]))
    };

    let span = inst.t2 - inst.t1 + 1;
    let mut deltas: Vec<Point3> = vec![[0.0; 3]; span];
    // forward accumulation, delta_x[t+1] = delta_x[t] + F^t
    let mut acc = [0.0f64; 3];
    for t in canonical..inst.t2 {
        acc = add(acc, flow_at(t)?);
        deltas[t + 1 - inst.t1] = acc;
    }
    // backward accumulation, delta_x[t] = delta_x[t+1] - F^t
    let mut acc = [0.0f64; 3];
    for t in (inst.t1..canonical).rev() {
        acc = sub(acc, flow_at(t)?);
        deltas[t - inst.t1] = acc;
    }

    let steps = deltas
        .into_iter()
        .enumerate()
        .map(|(off, delta_x)| DeformationStep {
            t: inst.t1 + off,
            delta_x,
            delta_s: [0.0; 3],
            delta_r: [0.0; 4],
        })
        .collect();

    Ok(DeformationTrack {
        instance_id: inst.id,
        canonical_frame: canonical,
        canonical_points: inst.members_at(canonical).expect("alive").to_vec(),
        steps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Motion {
    Static,
    Dynamic,
}

/// Motion class plus the statistic that produced it.
#[derive(Debug, Clone, Copy)]
pub struct MotionClass {
    pub class: Motion,
    /// Lifespan- and membership-weighted mean of `||F^t(I)||`, m/frame.
    pub mean_flow_magnitude: f64,
}

/// Threshold the instance's average flow magnitude (strictly greater than
/// `tau_dyn` is dynamic).
pub fn classify_motion(
    inst: &Instance,
    stats: &[SuperPointStats],
    superpoints: &[SuperPoint4D],
    tau_dyn: f64,
) -> MotionClass {
    let mut weighted = 0.0f64;
    let mut weight = 0usize;
    for t in inst.t1..=inst.t2 {
        if let Some(f) = instance_mean_flow(inst, stats, superpoints, t) {
            let w = inst.point_count_at(t);
            weighted += norm(f) * w as f64;
            weight += w;
        }
    }
    let mean = if weight == 0 { 0.0 } else { weighted / weight as f64 };
    MotionClass {
        class: if mean > tau_dyn {
            Motion::Dynamic
        } else {
            Motion::Static
        },
        mean_flow_magnitude: mean,
    }
}
