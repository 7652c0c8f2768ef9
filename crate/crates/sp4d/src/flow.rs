//! Scene flow between adjacent frames.
//!
//! Two sources of flow: [`estimate_flow`] runs a small self-supervised
//! optimizer (truncated nearest-neighbor distance plus a kNN rigidity
//! term, gradient descent from zero flow), and [`load_flow`] ingests
//! precomputed per-pair CSV files so an external flow method can be
//! plugged in. Flow is defined on non-ground points; ground rows carry
//! zero flow in memory and in exports.
//!
//! The optimizer minimizes
//!
//! ```text
//! J(f) = sum_i rho(minDist(p_i + f_i, dst)) + w_r * sum_i ||f_i - mean_{j in kNN(i)} f_j||^2
//! ```
//!
//! where `rho` is the squared distance capped at `truncation_radius^2`
//! and the kNN graph is built once over the source positions. Each
//! iteration backtracks (step halving) until the freshly evaluated
//! objective does not increase, so the recorded trace is non-increasing.
//!
//! Plain per-point descent from zero flow stalls in nearest-neighbor
//! aliases well before recovering meter-scale motion, so the descent is
//! preceded by a rigid warm start: one shared translation per connected
//! component of the rigidity graph, optimized by a multi-scale line probe
//! along the component's mean data gradient. Every accepted move in both
//! phases decreases the same objective J.

use std::path::Path;

use crate::error::{Result, Sp4dError};
use crate::index::NeighborIndex;
use crate::model::{add, dist, scale, sub, FlowField, FrameSequence, Point3};

#[derive(Debug, Clone)]
pub struct FlowConfig {
    /// Maximum descent iterations.
    pub iterations: usize,
    /// Initial step size per iteration (backtracking halves it on failure).
    pub step_size: f64,
    /// Weight of the kNN rigidity term.
    pub rigidity_weight: f64,
    /// Neighborhood size of the rigidity graph.
    pub rigidity_k: usize,
    /// Data-term residual cap, meters.
    pub truncation_radius: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            iterations: 300,
            step_size: 0.05,
            rigidity_weight: 1.0,
            rigidity_k: 8,
            truncation_radius: 2.0,
        }
    }
}

impl FlowConfig {
    fn validate(&self) -> Result<()> {
        if self.rigidity_k < 1 {
            return Err(Sp4dError::Param("rigidity_k must be >= 1".into()));
        }
        if !(self.step_size > 0.0) {
            return Err(Sp4dError::Param("step_size must be > 0".into()));
        }
        if self.rigidity_weight < 0.0 {
            return Err(Sp4dError::Param("rigidity_weight must be >= 0".into()));
        }
        if !(self.truncation_radius > 0.0) {
            return Err(Sp4dError::Param("truncation_radius must be > 0".into()));
        }
        Ok(())
    }
}

/// Result of one pair's optimization: the flow plus the objective values
/// recorded after the start and each accepted iteration.
#[derive(Debug, Clone)]
pub struct FlowEstimate {
    pub flow: Vec<Point3>,
    pub objective_trace: Vec<f64>,
}

const MAX_HALVINGS: u32 = 30;
/// Relative improvement below which the descent stops early.
const CONVERGENCE_RTOL: f64 = 1e-12;

/// Estimate per-point flow mapping `src` onto `dst`.
pub fn estimate_flow(src: &[Point3], dst: &[Point3], cfg: &FlowConfig) -> Result<FlowEstimate> {
    cfg.validate()?;
    if src.is_empty() || dst.is_empty() {
        return Err(Sp4dError::Param(
            "flow estimation needs non-empty source and target point sets".into(),
        ));
    }
    let n = src.len();
    let dst_index = NeighborIndex::new(dst);
    let src_index = NeighborIndex::new(src);
    let k = cfg.rigidity_k.min(n.saturating_sub(1));
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            if k == 0 {
                Vec::new()
            } else {
                src_index
                    .knn_excluding(&src[i], k, Some(i))
                    .expect("k bounded by population")
            }
        })
        .collect();

    let mut flow = vec![[0.0f64; 3]; n];
    let mut objective = eval_objective(src, &dst_index, &flow, &neighbors, cfg);
    let mut trace = vec![objective];

    // Phase 1: component-rigid warm start. Constant flow within a
    // component keeps the rigidity term at zero, so only the data term
    // moves; every accepted probe lowers it.
    rigid_warm_start(src, &dst_index, &neighbors, cfg, &mut flow);
    let warmed = eval_objective(src, &dst_index, &flow, &neighbors, cfg);
    debug_assert!(warmed <= objective + 1e-9);
    if warmed < objective {
        objective = warmed;
        trace.push(objective);
    }

    // Phase 2: per-point refinement.
    for _ in 0..cfg.iterations {
        let grad = eval_gradient(src, &dst_index, &flow, &neighbors, cfg);
        let mut step = cfg.step_size;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let candidate: Vec<Point3> = flow
                .iter()
                .zip(grad.iter())
                .map(|(f, g)| sub(*f, scale(*g, step)))
                .collect();
            let j = eval_objective(src, &dst_index, &candidate, &neighbors, cfg);
            if j <= objective {
                let improvement = objective - j;
                flow = candidate;
                objective = j;
                trace.push(objective);
                accepted = improvement > CONVERGENCE_RTOL * (1.0 + objective.abs());
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break; // converged or no decreasing step found
        }
    }

    Ok(FlowEstimate {
        flow,
        objective_trace: trace,
    })
}

/// Line-probe distances for the warm start, meters, coarse to fine. The
/// coarse probes leapfrog sample-aliasing washboard in the data term.
const PROBES: [f64; 7] = [2.0, 1.0, 0.5, 0.25, 0.1, 0.05, 0.02];
const WARM_START_ITERS: usize = 40;

fn rigid_warm_start(
    src: &[Point3],
    dst_index: &NeighborIndex,
    neighbors: &[Vec<usize>],
    cfg: &FlowConfig,
    flow: &mut [Point3],
) {
    let n = src.len();
    // Connected components of the (undirected) rigidity graph.
    let mut comp = UnionFind::new(n);
    for (i, nb) in neighbors.iter().enumerate() {
        for &j in nb {
            comp.union(i, j);
        }
    }
    let mut members: Vec<Vec<usize>> = Vec::new();
    {
        let mut slot = vec![usize::MAX; n];
        for i in 0..n {
            let root = comp.find(i);
            if slot[root] == usize::MAX {
                slot[root] = members.len();
                members.push(Vec::new());
            }
            members[slot[root]].push(i);
        }
    }

    let cap = cfg.truncation_radius * cfg.truncation_radius;
    let data_j = |ids: &[usize], shift: Point3| -> f64 {
        let mut j = 0.0;
        for &i in ids {
            let q = add(src[i], shift);
            let nn = dst_index.knn_query(&q, 1, false).expect("dst non-empty")[0];
            let d = dist(q, dst_index.point(nn));
            j += (d * d).min(cap);
        }
        j
    };

    for ids in &members {
        let mut shift = [0.0f64; 3];
        let mut current = data_j(ids, shift);
        for _ in 0..WARM_START_ITERS {
            // Mean truncated-data gradient over the component.
            let mut g = [0.0f64; 3];
            for &i in ids {
                let q = add(src[i], shift);
                let nn = dst_index.knn_query(&q, 1, false).expect("dst non-empty")[0];
                let r = sub(q, dst_index.point(nn));
                if (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt() < cfg.truncation_radius {
                    g = add(g, r);
                }
            }
            let gn = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
            if gn < 1e-12 {
                break;
            }
            let dir = scale(g, -1.0 / gn);
            let mut best: Option<(f64, f64)> = None; // (J, probe)
            for &p in PROBES.iter() {
                let j = data_j(ids, add(shift, scale(dir, p)));
                if best.is_none_or(|(bj, _)| j < bj) {
                    best = Some((j, p));
                }
            }
            match best {
                Some((j, p)) if j < current - 1e-15 * (1.0 + current) => {
                    shift = add(shift, scale(dir, p));
                    current = j;
                }
                _ => break,
            }
        }
        for &i in ids {
            flow[i] = shift;
        }
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra != rb {
            // smaller root wins, keeps component ids deterministic
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

fn eval_objective(
    src: &[Point3],
    dst_index: &NeighborIndex,
    flow: &[Point3],
    neighbors: &[Vec<usize>],
    cfg: &FlowConfig,
) -> f64 {
    let cap = cfg.truncation_radius * cfg.truncation_radius;
    let mut j = 0.0;
    for (i, p) in src.iter().enumerate() {
        let q = add(*p, flow[i]);
        let nn = dst_index.knn_query(&q, 1, false).expect("dst non-empty")[0];
        let d = dist(q, dst_index.point(nn));
        j += (d * d).min(cap);
    }
    if cfg.rigidity_weight > 0.0 {
        for (i, nb) in neighbors.iter().enumerate() {
            if nb.is_empty() {
                continue;
            }
            let mut mean = [0.0f64; 3];
            for &jx in nb {
                mean = add(mean, flow[jx]);
            }
            mean = scale(mean, 1.0 / nb.len() as f64);
            let r = sub(flow[i], mean);
            j += cfg.rigidity_weight * (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]);
        }
    }
    j
}

fn eval_gradient(
    src: &[Point3],
    dst_index: &NeighborIndex,
    flow: &[Point3],
    neighbors: &[Vec<usize>],
    cfg: &FlowConfig,
) -> Vec<Point3> {
    let n = src.len();
    let mut grad = vec![[0.0f64; 3]; n];
    // Data term: correspondences held fixed for the step (ICP-style).
    for (i, p) in src.iter().enumerate() {
        let q = add(*p, flow[i]);
        let nn = dst_index.knn_query(&q, 1, false).expect("dst non-empty")[0];
        let residual = sub(q, dst_index.point(nn));
        let d = (residual[0] * residual[0] + residual[1] * residual[1] + residual[2] * residual[2])
            .sqrt();
        if d < cfg.truncation_radius {
            grad[i] = add(grad[i], scale(residual, 2.0));
        }
    }
    // Rigidity term: direct part plus the transpose contributions from
    // points listing i as a neighbor.
    if cfg.rigidity_weight > 0.0 {
        for (i, nb) in neighbors.iter().enumerate() {
            if nb.is_empty() {
                continue;
            }
            let inv_k = 1.0 / nb.len() as f64;
            let mut mean = [0.0f64; 3];
            for &jx in nb {
                mean = add(mean, flow[jx]);
            }
            mean = scale(mean, inv_k);
            let r = scale(sub(flow[i], mean), 2.0 * cfg.rigidity_weight);
            grad[i] = add(grad[i], r);
            for &jx in nb {
                grad[jx] = sub(grad[jx], scale(r, inv_k));
            }
        }
    }
    grad
}

/// Load a precomputed flow field from `flow_%04d.csv` files, one per frame
/// pair, validating row counts and finiteness. Files with one row per
/// non-ground point are scattered to full frame length with zeros on
/// ground rows; files with one row per point are taken as-is.
pub fn load_flow(dir: &Path, seq: &FrameSequence) -> Result<FlowField> {
    if seq.len() < 2 {
        return Ok(FlowField::new(Vec::new()));
    }
    let mut slices = Vec::with_capacity(seq.len() - 1);
    for t in 0..seq.len() - 1 {
        let path = dir.join(format!("flow_{t:04}.csv"));
        if !path.exists() {
            return Err(Sp4dError::format(
                path.display().to_string(),
                format!("missing flow file for frame pair {t}"),
            ));
        }
        let rows = read_flow_file(&path)?;
        let frame = &seq.frames[t];
        let full = frame.len();
        let non_ground = frame.non_ground_indices();
        let slice = if rows.len() == full {
            rows
        } else if rows.len() == non_ground.len() {
            let mut out = vec![[0.0f64; 3]; full];
            for (row, &i) in rows.into_iter().zip(non_ground.iter()) {
                out[i] = row;
            }
            out
        } else {
            return Err(Sp4dError::format(
                path.display().to_string(),
                format!(
                    "row count {} matches neither point count {} nor non-ground count {} of frame {}",
                    rows.len(),
                    full,
                    non_ground.len(),
                    t
                ),
            ));
        };
        slices.push(slice);
    }
    let field = FlowField::new(slices);
    field.validate(seq)?;
    Ok(field)
}

/// Parse one `fx,fy,fz` CSV file.
pub fn read_flow_file(path: &Path) -> Result<Vec<Point3>> {
    let text = std::fs::read_to_string(path)?;
    let name = path.display().to_string();
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "fx,fy,fz" => {}
        Some((_, h)) => {
            return Err(Sp4dError::format(
                name,
                format!("expected header 'fx,fy,fz', got '{}'", h.trim()),
            ))
        }
        None => return Err(Sp4dError::format(name, "empty flow file")),
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Sp4dError::format(
                name,
                format!("line {}: expected 3 columns, got {}", lineno + 1, fields.len()),
            ));
        }
        let mut row = [0.0f64; 3];
        for (k, s) in fields.iter().enumerate() {
            row[k] = s.trim().parse::<f64>().map_err(|e| {
                Sp4dError::format(&name, format!("line {}: {e}", lineno + 1))
            })?;
        }
        if !row.iter().all(|v| v.is_finite()) {
            return Err(Sp4dError::format(
                name,
                format!("line {}: non-finite flow value", lineno + 1),
            ));
        }
        rows.push(row);
    }
    Ok(rows)
}
