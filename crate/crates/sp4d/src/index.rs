//! Exact spatial nearest-neighbor queries over a fixed point set.
//!
//! A median-split KD-tree with two query modes:
//! - radius queries use closed-ball semantics (`||x - q|| <= r`), and
//! - kNN queries order by ascending distance with ties broken by
//!   ascending point index.
//!
//! Both are exact: results must match a brute-force scan, which the tests
//! enforce. The tie and boundary rules are part of the contract — the
//! DBSCAN, cluster-matching and 3D-smoothness stages all rely on them for
//! reproducibility.

use std::collections::HashMap;

use crate::error::{Result, Sp4dError};
use crate::model::Point3;

#[derive(Debug, Clone)]
struct Node {
    /// Index into the permutation array of the splitting point.
    point: usize,
    axis: usize,
    left: Option<usize>,
    right: Option<usize>,
}

/// Immutable KD-tree over a point array. Queries return indices into the
/// original array; concurrent queries are safe.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    points: Vec<Point3>,
    nodes: Vec<Node>,
    root: Option<usize>,
    /// Lowest original index per exact coordinate, for self-exclusion.
    exact: HashMap<[u64; 3], usize>,
}

const LEAF_SIZE: usize = 8;

fn key_of(p: &Point3) -> [u64; 3] {
    [p[0].to_bits(), p[1].to_bits(), p[2].to_bits()]
}

impl NeighborIndex {
    pub fn new(points: &[Point3]) -> Self {
        let mut exact = HashMap::with_capacity(points.len());
        for (i, p) in points.iter().enumerate() {
            exact.entry(key_of(p)).or_insert(i);
        }
        let mut idx: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::new();
        let root = Self::build(points, &mut idx, &mut nodes);
        // `idx` was the workspace; nodes store original indices directly.
        NeighborIndex {
            points: points.to_vec(),
            nodes,
            root,
            exact,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> Point3 {
        self.points[i]
    }

    fn build(points: &[Point3], idx: &mut [usize], nodes: &mut Vec<Node>) -> Option<usize> {
        if idx.is_empty() {
            return None;
        }
        if idx.len() <= LEAF_SIZE {
            // Chain small groups as a degenerate subtree; simpler than a
            // separate leaf node type and still O(log n) overall.
            return Self::build_chain(idx, nodes);
        }
        // Split on the widest axis for balanced boxes.
        let axis = widest_axis(points, idx);
        let mid = idx.len() / 2;
        idx.sort_unstable_by(|&a, &b| {
            points[a][axis]
                .partial_cmp(&points[b][axis])
                .unwrap()
                .then(a.cmp(&b))
        });
        let (left_slice, rest) = idx.split_at_mut(mid);
        let (mid_ref, right_slice) = rest.split_at_mut(1);
        let node_id = nodes.len();
        nodes.push(Node {
            point: mid_ref[0],
            axis,
            left: None,
            right: None,
        });
        let left = Self::build(points, left_slice, nodes);
        let right = Self::build(points, right_slice, nodes);
        nodes[node_id].left = left;
        nodes[node_id].right = right;
        Some(node_id)
    }

    /// Chain nodes carry no spatial split (`CHAIN_AXIS`); `descend` reports
    /// a zero-width plane so both sides are always visited.
    fn build_chain(idx: &[usize], nodes: &mut Vec<Node>) -> Option<usize> {
        if idx.is_empty() {
            return None;
        }
        let node_id = nodes.len();
        nodes.push(Node {
            point: idx[0],
            axis: CHAIN_AXIS,
            left: None,
            right: None,
        });
        let rest = Self::build_chain(&idx[1..], nodes);
        nodes[node_id].right = rest;
        Some(node_id)
    }

    /// All indices `i` with `||points[i] - q|| <= r` (closed ball),
    /// ascending.
    pub fn radius_query(&self, q: &Point3, r: f64) -> Result<Vec<usize>> {
        if !(r > 0.0) {
            return Err(Sp4dError::Param(format!("radius must be > 0, got {r}")));
        }
        let mut out = Vec::new();
        if let Some(root) = self.root {
            self.radius_rec(root, q, r * r, &mut out);
        }
        out.sort_unstable();
        Ok(out)
    }

    fn radius_rec(&self, node_id: usize, q: &Point3, r2: f64, out: &mut Vec<usize>) {
        let node = &self.nodes[node_id];
        let p = &self.points[node.point];
        if dist2(p, q) <= r2 {
            out.push(node.point);
        }
        let (near, far, gap) = self.descend(node, q);
        if let Some(n) = near {
            self.radius_rec(n, q, r2, out);
        }
        if let Some(f) = far {
            if gap * gap <= r2 {
                self.radius_rec(f, q, r2, out);
            }
        }
    }

    /// `k` nearest neighbors of `q` by ascending distance, ties broken by
    /// ascending index. With `exclude_self`, the lowest-index stored point
    /// exactly coincident with `q` is removed from the candidate set.
    pub fn knn_query(&self, q: &Point3, k: usize, exclude_self: bool) -> Result<Vec<usize>> {
        let exclude = if exclude_self {
            self.exact.get(&key_of(q)).copied()
        } else {
            None
        };
        self.knn_excluding(q, k, exclude)
    }

    /// kNN with an explicit excluded index. This is the form the pipeline
    /// uses when the query point is a member of the indexed set.
    pub fn knn_excluding(&self, q: &Point3, k: usize, exclude: Option<usize>) -> Result<Vec<usize>> {
        if k == 0 {
            return Err(Sp4dError::Param("k must be >= 1".into()));
        }
        let population = self.points.len() - usize::from(exclude.is_some());
        if k > population {
            return Err(Sp4dError::Param(format!(
                "k={k} exceeds population {population}"
            )));
        }
        // Best-so-far list kept sorted by (dist2, index); tiny k keeps
        // insertion cheap.
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        if let Some(root) = self.root {
            self.knn_rec(root, q, k, exclude, &mut best);
        }
        Ok(best.into_iter().map(|(_, i)| i).collect())
    }

    fn knn_rec(
        &self,
        node_id: usize,
        q: &Point3,
        k: usize,
        exclude: Option<usize>,
        best: &mut Vec<(f64, usize)>,
    ) {
        let node = &self.nodes[node_id];
        if Some(node.point) != exclude {
            let d2 = dist2(&self.points[node.point], q);
            let cand = (d2, node.point);
            if best.len() < k || cand < best[best.len() - 1] {
                let pos = best.partition_point(|&b| b < cand);
                best.insert(pos, cand);
                if best.len() > k {
                    best.pop();
                }
            }
        }
        let (near, far, gap) = self.descend(node, q);
        if let Some(n) = near {
            self.knn_rec(n, q, k, exclude, best);
        }
        if let Some(f) = far {
            // Equal plane distance may still hide a lower-index tie, so
            // prune only on a strict excess.
            let worst = if best.len() < k {
                f64::INFINITY
            } else {
                best[best.len() - 1].0
            };
            if gap * gap <= worst {
                self.knn_rec(f, q, k, exclude, best);
            }
        }
    }

    /// Children ordered (near, far) plus the distance from `q` to the
    /// splitting plane; chain nodes report zero so both sides are visited.
    fn descend(&self, node: &Node, q: &Point3) -> (Option<usize>, Option<usize>, f64) {
        if node.axis == CHAIN_AXIS {
            return (node.left, node.right, 0.0);
        }
        let split = self.points[node.point][node.axis];
        let delta = q[node.axis] - split;
        if delta < 0.0 {
            (node.left, node.right, -delta)
        } else {
            (node.right, node.left, delta)
        }
    }
}

const CHAIN_AXIS: usize = usize::MAX;

fn dist2(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

fn widest_axis(points: &[Point3], idx: &[usize]) -> usize {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in idx {
        for a in 0..3 {
            lo[a] = lo[a].min(points[i][a]);
            hi[a] = hi[a].max(points[i][a]);
        }
    }
    let mut axis = 0;
    let mut w = hi[0] - lo[0];
    for a in 1..3 {
        if hi[a] - lo[a] > w {
            w = hi[a] - lo[a];
            axis = a;
        }
    }
    axis
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent O(n) oracle: exhaustive scan with the same rules.
    fn brute_radius(points: &[Point3], q: &Point3, r: f64) -> Vec<usize> {
        (0..points.len())
            .filter(|&i| dist2(&points[i], q) <= r * r)
            .collect()
    }

    fn brute_knn(points: &[Point3], q: &Point3, k: usize, exclude: Option<usize>) -> Vec<usize> {
        let mut v: Vec<(f64, usize)> = (0..points.len())
            .filter(|&i| Some(i) != exclude)
            .map(|i| (dist2(&points[i], q), i))
            .collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v.truncate(k);
        v.into_iter().map(|(_, i)| i).collect()
    }

    fn random_points(rng: &mut ChaCha8Rng, n: usize, extent: f64) -> Vec<Point3> {
        (0..n)
            .map(|_| {
                [
                    rng.gen_range(-extent..extent),
                    rng.gen_range(-extent..extent),
                    rng.gen_range(-extent..extent),
                ]
            })
            .collect()
    }

    #[test]
    fn radius_closed_ball_boundary() {
        let pts = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        let index = NeighborIndex::new(&pts);
        assert_eq!(index.radius_query(&[0.0, 0.0, 0.0], 1.0).unwrap(), vec![0, 1]);
        assert_eq!(index.radius_query(&[0.0, 0.0, 0.0], 0.5).unwrap(), vec![0]);
    }

    #[test]
    fn radius_rejects_nonpositive() {
        let index = NeighborIndex::new(&[[0.0; 3]]);
        assert!(index.radius_query(&[0.0; 3], 0.0).is_err());
        assert!(index.radius_query(&[0.0; 3], -1.0).is_err());
    }

    #[test]
    fn knn_basic_order() {
        let pts = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0]];
        let index = NeighborIndex::new(&pts);
        assert_eq!(index.knn_query(&[0.0; 3], 2, false).unwrap(), vec![0, 1]);
    }

    #[test]
    fn knn_tie_lower_index_wins() {
        let pts = vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]];
        let index = NeighborIndex::new(&pts);
        assert_eq!(index.knn_query(&[0.0; 3], 1, false).unwrap(), vec![0]);
        // and with reversed storage order the other one wins
        let pts = vec![[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        let index = NeighborIndex::new(&pts);
        assert_eq!(index.knn_query(&[0.0; 3], 1, false).unwrap(), vec![0]);
    }

    #[test]
    fn knn_exclude_self() {
        let pts = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        let index = NeighborIndex::new(&pts);
        assert_eq!(index.knn_query(&[0.0; 3], 1, true).unwrap(), vec![1]);
        assert_eq!(index.knn_excluding(&[0.0; 3], 1, Some(0)).unwrap(), vec![1]);
    }

    #[test]
    fn knn_k_exceeding_population_errors() {
        let pts = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        let index = NeighborIndex::new(&pts);
        assert!(index.knn_query(&[0.0; 3], 3, false).is_err());
        assert!(index.knn_query(&[0.0; 3], 2, true).is_err());
        assert!(index.knn_query(&[0.0; 3], 0, false).is_err());
    }

    #[test]
    fn radius_matches_brute_force_200_points_50_queries() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts = random_points(&mut rng, 200, 10.0);
        let index = NeighborIndex::new(&pts);
        for _ in 0..50 {
            let q = [
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-10.0..10.0),
            ];
            let r = rng.gen_range(0.1..8.0);
            assert_eq!(index.radius_query(&q, r).unwrap(), brute_radius(&pts, &q, r));
        }
    }

    #[test]
    fn knn_matches_brute_force_500_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let pts = random_points(&mut rng, 500, 5.0);
        let index = NeighborIndex::new(&pts);
        for _ in 0..50 {
            let q = [
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
            ];
            assert_eq!(
                index.knn_query(&q, 8, false).unwrap(),
                brute_knn(&pts, &q, 8, None)
            );
        }
    }

    #[test]
    fn grid_points_with_exact_ties() {
        // Integer grid puts many points at identical distances.
        let mut pts = Vec::new();
        for x in 0..4 {
            for y in 0..4 {
                for z in 0..2 {
                    pts.push([x as f64, y as f64, z as f64]);
                }
            }
        }
        let index = NeighborIndex::new(&pts);
        for k in [1, 3, 7, 12] {
            assert_eq!(
                index.knn_query(&[1.0, 1.0, 0.0], k, false).unwrap(),
                brute_knn(&pts, &[1.0, 1.0, 0.0], k, None),
                "k={k}"
            );
        }
        assert_eq!(
            index.radius_query(&[1.0, 1.0, 0.0], 1.0).unwrap(),
            brute_radius(&pts, &[1.0, 1.0, 0.0], 1.0)
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(120))]

        #[test]
        fn prop_radius_oracle_equivalence(
            seed in 0u64..10_000,
            n in 1usize..120,
            r in 0.05f64..6.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts = random_points(&mut rng, n, 4.0);
            let index = NeighborIndex::new(&pts);
            let q = [
                rng.gen_range(-4.0..4.0),
                rng.gen_range(-4.0..4.0),
                rng.gen_range(-4.0..4.0),
            ];
            prop_assert_eq!(index.radius_query(&q, r).unwrap(), brute_radius(&pts, &q, r));
        }

        #[test]
        fn prop_knn_oracle_equivalence(
            seed in 0u64..10_000,
            n in 1usize..120,
            k in 1usize..16,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts = random_points(&mut rng, n, 4.0);
            let k = k.min(n);
            let index = NeighborIndex::new(&pts);
            let q = [
                rng.gen_range(-4.0..4.0),
                rng.gen_range(-4.0..4.0),
                rng.gen_range(-4.0..4.0),
            ];
            prop_assert_eq!(
                index.knn_query(&q, k, false).unwrap(),
                brute_knn(&pts, &q, k, None)
            );
        }
    }
}
