//! Spatial neighborhood graphs: each patch plus its K nearest same-frame
//! patches by 3D distance, fully connected.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scenegen::{Frame, LocationFrame, Patch, Pose};
use crate::tensorcore::Tensor;

pub const DEFAULT_K: usize = 5;

/// Clique over a center patch and its neighbors. Vertices are patch
/// indices within the owning frame; the center is always vertex 0 unless
/// the graph was built from an explicit ordering.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct NeighborhoodGraph {
    pub vertices: Vec<usize>,
    pub center: usize,
    /// Row-major `v x v` binary adjacency.
    pub adjacency: Vec<bool>,
    pub k: usize,
}

impl NeighborhoodGraph {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn adjacent(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.len() + j]
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().filter(|&&a| a).count() / 2
    }

    pub fn adjacency_tensor(&self) -> Tensor {
        let n = self.len();
        let data = self.adjacency.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect();
        Tensor::new(vec![n, n], data).expect("non-empty graph")
    }

    /// Builds a graph from an explicit vertex order and adjacency. Used for
    /// permutation tests and hand-made graphs.
    pub fn from_parts(vertices: Vec<usize>, center: usize, adjacency: Vec<bool>) -> Result<Self> {
        let n = vertices.len();
        if n == 0 || center >= n || adjacency.len() != n * n {
            return Err(Error::InvalidArgument(format!(
                "graph with {n} vertices, center {center}, {} adjacency entries",
                adjacency.len()
            )));
        }
        for i in 0..n {
            if adjacency[i * n + i] {
                return Err(Error::InvalidArgument(format!("self loop at vertex {i}")));
            }
            for j in 0..n {
                if adjacency[i * n + j] != adjacency[j * n + i] {
                    return Err(Error::InvalidArgument(format!("asymmetric edge ({i}, {j})")));
                }
            }
        }
        Ok(Self {
            vertices,
            center,
            adjacency,
            k: n - 1,
        })
    }

    /// Relabels vertices: new vertex `i` is old vertex `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.len();
        let mut adjacency = vec![false; n * n];
        for i in 0..n {
            for j in 0..n {
                adjacency[i * n + j] = self.adjacent(perm[i], perm[j]);
            }
        }
        Self {
            vertices: perm.iter().map(|&p| self.vertices[p]).collect(),
            center: perm.iter().position(|&p| p == self.center).expect("perm is a permutation"),
            adjacency,
            k: self.k,
        }
    }

    /// JSON dump with patch ids, for debugging.
    pub fn debug_json(&self, frame: &Frame) -> serde_json::Value {
        let n = self.len();
        let rows: Vec<Vec<u8>> = (0..n)
            .map(|i| (0..n).map(|j| u8::from(self.adjacent(i, j))).collect())
            .collect();
        serde_json::json!({
            "frame_id": frame.id,
            "center": frame.patches[self.vertices[self.center]].id,
            "vertices": self.vertices.iter().map(|&v| &frame.patches[v].id).collect::<Vec<_>>(),
            "adjacency": rows,
            "k": self.k,
        })
    }
}

fn location(p: &Patch) -> Result<[f64; 3]> {
    p.location.ok_or_else(|| Error::MissingLocation {
        patch_id: p.id.clone(),
    })
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Indices into `candidates` of the `k` nearest patches to `center`, by
/// ascending distance with ties broken by ascending patch id.
pub fn knn_neighbors(center: &Patch, candidates: &[&Patch], k: usize) -> Result<Vec<usize>> {
    let c = location(center)?;
    let mut scored = Vec::with_capacity(candidates.len());
    for (i, p) in candidates.iter().enumerate() {
        scored.push((dist(c, location(p)?), i));
    }
    scored.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then_with(|| candidates[a.1].id.cmp(&candidates[b.1].id))
    });
    Ok(scored.into_iter().take(k).map(|(_, i)| i).collect())
}

/// Complete graph over `center` followed by `neighbors`.
pub fn build_clique(center: usize, neighbors: &[usize], k: usize) -> NeighborhoodGraph {
    let mut vertices = Vec::with_capacity(neighbors.len() + 1);
    vertices.push(center);
    vertices.extend_from_slice(neighbors);
    let n = vertices.len();
    let adjacency = (0..n * n).map(|idx| idx / n != idx % n).collect();
    NeighborhoodGraph {
        vertices,
        center: 0,
        adjacency,
        k,
    }
}

fn camera_to_world(pose: &Pose, p: [f64; 3]) -> [f64; 3] {
    // p_world = R^T (p_cam - t)
    let r = &pose.rotation;
    let d = [p[0] - pose.translation[0], p[1] - pose.translation[1], p[2] - pose.translation[2]];
    std::array::from_fn(|j| (0..3).map(|i| r[i][j] * d[i]).sum())
}

/// Neighborhood graph of patch `index` in `frame`. Mixed location frames
/// are brought to world coordinates with the frame pose first.
pub fn graph_for(frame: &Frame, index: usize, k: usize) -> Result<NeighborhoodGraph> {
    let mixed = frame
        .patches
        .iter()
        .any(|p| p.location_frame != frame.patches[index].location_frame);
    let normalized: Vec<Patch>;
    let patches: &[Patch] = if mixed {
        normalized = frame
            .patches
            .iter()
            .map(|p| {
                let mut q = p.clone();
                if p.location_frame == LocationFrame::Camera {
                    q.location = p.location.map(|l| camera_to_world(&frame.camera.pose, l));
                    q.location_frame = LocationFrame::World;
                }
                q
            })
            .collect();
        &normalized
    } else {
        &frame.patches
    };
    let others: Vec<usize> = (0..patches.len()).filter(|&i| i != index).collect();
    let refs: Vec<&Patch> = others.iter().map(|&i| &patches[i]).collect();
    let picked = knn_neighbors(&patches[index], &refs, k)?;
    let neighbors: Vec<usize> = picked.into_iter().map(|i| others[i]).collect();
    Ok(build_clique(index, &neighbors, k))
}

/// Graphs for every patch of a frame, in patch order.
pub fn frame_graphs(frame: &Frame, k: usize) -> Result<Vec<NeighborhoodGraph>> {
    (0..frame.patches.len()).map(|i| graph_for(frame, i, k)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegen::{BBox, PixelBlock};
    use proptest::prelude::*;

    fn patch(id: &str, loc: [f64; 3]) -> Patch {
        Patch {
            id: id.into(),
            frame_id: "f".into(),
            bbox: BBox::new(0.0, 0.0, 1.0, 1.0).unwrap(),
            pixels: PixelBlock::new(1, 1, 1, vec![0]).unwrap(),
            location: Some(loc),
            location_frame: LocationFrame::World,
            landmark_id: None,
        }
    }

    #[test]
    fn no_candidates_gives_singleton() {
        let c = patch("c", [0.0; 3]);
        assert!(knn_neighbors(&c, &[], 5).unwrap().is_empty());
        let g = build_clique(0, &[], 5);
        assert_eq!(g.len(), 1);
        assert_eq!(g.adjacency, vec![false]);
    }

    #[test]
    fn nearest_in_order() {
        let c = patch("c", [0.0; 3]);
        let p3 = patch("a", [3.0, 0.0, 0.0]);
        let p1 = patch("b", [0.0, 1.0, 0.0]);
        let p2 = patch("z", [0.0, 0.0, 2.0]);
        assert_eq!(knn_neighbors(&c, &[&p3, &p1, &p2], 2).unwrap(), vec![1, 2]);
    }

    #[test]
    fn ties_break_by_id() {
        let c = patch("c", [0.0; 3]);
        let ps = [patch("p3", [1.0, 0.0, 0.0]), patch("p1", [0.0, 1.0, 0.0]), patch("p2", [0.0, 0.0, 1.0])];
        let refs: Vec<&Patch> = ps.iter().collect();
        assert_eq!(knn_neighbors(&c, &refs, 2).unwrap(), vec![1, 2]);
    }

    #[test]
    fn missing_location_names_patch() {
        let c = patch("c", [0.0; 3]);
        let mut q = patch("lost", [0.0; 3]);
        q.location = None;
        let err = knn_neighbors(&c, &[&q], 1).unwrap_err();
        assert!(err.to_string().contains("lost"));
    }

    #[test]
    fn clique_edge_count() {
        let g = build_clique(7, &[1, 2, 3], 5);
        assert_eq!(g.len(), 4);
        assert_eq!(g.edge_count(), 6);
        assert_eq!(g.vertices[g.center], 7);
    }

    #[test]
    fn permutation_tracks_center() {
        let g = build_clique(7, &[1, 2, 3], 5);
        let p = g.permuted(&[2, 0, 3, 1]);
        assert_eq!(p.vertices, vec![2, 7, 3, 1]);
        assert_eq!(p.center, 1);
        assert_eq!(p.edge_count(), 6);
    }

    proptest! {
        #[test]
        fn clique_is_symmetric_and_hollow(m in 0usize..8) {
            let nb: Vec<usize> = (1..=m).collect();
            let g = build_clique(0, &nb, 8);
            let n = g.len();
            prop_assert_eq!(n, m + 1);
            for i in 0..n {
                prop_assert!(!g.adjacent(i, i));
                for j in 0..n {
                    prop_assert_eq!(g.adjacent(i, j), g.adjacent(j, i));
                    if i != j { prop_assert!(g.adjacent(i, j)); }
                }
            }
        }

        #[test]
        fn neighbor_set_stable_under_small_noise(
            dists in proptest::collection::vec(1.0f64..20.0, 2..8),
            seed in any::<u64>(),
        ) {
            // spread distances so the minimum gap is known
            let mut ds = dists.clone();
            ds.sort_by(f64::total_cmp);
            for i in 1..ds.len() { if ds[i] - ds[i - 1] < 0.2 { ds[i] = ds[i - 1] + 0.2; } }
            let gap = ds.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
            let c = patch("c", [0.0; 3]);
            let ps: Vec<Patch> = ds.iter().enumerate().map(|(i, &d)| patch(&format!("p{i}"), [d, 0.0, 0.0])).collect();
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let noisy: Vec<Patch> = ps.iter().map(|p| {
                let mut q = p.clone();
                let l = q.location.unwrap();
                let e = 0.49 * gap / 3f64.sqrt() / 2.0;
                q.location = Some(std::array::from_fn(|i| l[i] + rng.random_range(-e..e)));
                q
            }).collect();
            let k = ds.len() / 2;
            let mut a = knn_neighbors(&c, &ps.iter().collect::<Vec<_>>(), k).unwrap();
            let mut b = knn_neighbors(&c, &noisy.iter().collect::<Vec<_>>(), k).unwrap();
            a.sort_unstable();
            b.sort_unstable();
            prop_assert_eq!(a, b);
        }
    }
}
