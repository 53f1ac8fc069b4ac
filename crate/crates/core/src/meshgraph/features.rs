use serde::{Deserialize, Serialize};

use super::{MeshTopology, NodeKind};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Mesh–collider proximity threshold in normalized units.
pub const DEFAULT_RADIUS: f64 = 0.3;

/// Task-specific node inputs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskFeatures {
    /// `(axis, level)` of a floor plane in normalized units.
    pub floor: Option<(usize, f64)>,
    /// Per-node flag for nodes an external force acts on; empty when the task has none.
    pub force_nodes: Vec<bool>,
}

impl TaskFeatures {
    pub fn has_force(&self) -> bool {
        !self.force_nodes.is_empty()
    }
}

/// Column layout: `[one-hot kind | history·d velocities | floor height? | force flag?]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub dim: usize,
    pub history: usize,
    pub floor: bool,
    pub force: bool,
}

impl FeatureLayout {
    pub fn for_task(dim: usize, history: usize, task: &TaskFeatures) -> Self {
        FeatureLayout {
            dim,
            history,
            floor: task.floor.is_some(),
            force: task.has_force(),
        }
    }

    pub fn width(&self) -> usize {
        NodeKind::COUNT + self.history * self.dim + self.floor as usize + self.force as usize
    }
}

/// One encoded frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSample {
    pub node_features: Tensor<f64>,
    pub edges: Vec<(usize, usize)>,
    pub edge_features: Tensor<f64>,
}

impl GraphSample {
    pub fn n_nodes(&self) -> usize {
        self.node_features.rows()
    }
}

/// Topology edges in both directions, then every mesh–collider pair closer
/// than `radius` in both directions (mesh-major order).
pub fn build_edges(
    topology: &MeshTopology,
    positions: &[f64],
    kinds: &[NodeKind],
    dim: usize,
    radius: f64,
) -> Vec<(usize, usize)> {
    let mut edges = topology.directed_edges();
    let colliders: Vec<usize> = (0..kinds.len())
        .filter(|&i| kinds[i] == NodeKind::Collider)
        .collect();
    if colliders.is_empty() {
        return edges;
    }
    let r2 = radius * radius;
    for m in (0..kinds.len()).filter(|&i| kinds[i] != NodeKind::Collider) {
        let pm = &positions[m * dim..(m + 1) * dim];
        for &c in &colliders {
            let pc = &positions[c * dim..(c + 1) * dim];
            let d2: f64 = pm.iter().zip(pc).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2 < r2 {
                edges.push((m, c));
                edges.push((c, m));
            }
        }
    }
    edges
}

/// Orders edges by receiver and, within a receiver, by the sender's relative
/// position. Aggregations that sum in edge order then see the incoming
/// messages in an order that survives any relabelling of the nodes.
pub fn sort_incoming_by_geometry(edges: &mut [(usize, usize)], positions: &[f64], dim: usize) {
    let offset = |(u, v): (usize, usize), i: usize| positions[u * dim + i] - positions[v * dim + i];
    edges.sort_by(|&a, &b| {
        a.1.cmp(&b.1).then_with(|| {
            (0..dim)
                .map(|i| offset(a, i).total_cmp(&offset(b, i)))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
}

/// Per edge `(u → v)`: `[pos(v) − pos(u), |pos(v) − pos(u)|]`.
pub fn encode_edge_features(
    positions: &[f64],
    dim: usize,
    edges: &[(usize, usize)],
) -> Tensor<f64> {
    let mut out = Tensor::zeros(&[edges.len(), dim + 1]);
    for (e, &(u, v)) in edges.iter().enumerate() {
        let row = out.row_mut(e);
        let mut n2 = 0.0;
        for i in 0..dim {
            let d = positions[v * dim + i] - positions[u * dim + i];
            row[i] = d;
            n2 += d * d;
        }
        row[dim] = n2.sqrt();
    }
    out
}

/// Node features for the last frame of `history` (oldest first, `layout.history + 1`
/// frames, already padded at the trajectory start).
pub fn encode_node_features(
    history: &[&[f64]],
    kinds: &[NodeKind],
    task: &TaskFeatures,
    layout: &FeatureLayout,
) -> Result<Tensor<f64>> {
    if history.len() != layout.history + 1 {
        return Err(Error::config(format!(
            "feature layout expects {} history frames, got {}",
            layout.history + 1,
            history.len()
        )));
    }
    if layout.floor != task.floor.is_some() || layout.force != task.has_force() {
        return Err(Error::config(format!(
            "feature layout {layout:?} does not match task features (floor {}, force {})",
            task.floor.is_some(),
            task.has_force()
        )));
    }
    let (n, d) = (kinds.len(), layout.dim);
    if history.iter().any(|f| f.len() != n * d) || (layout.force && task.force_nodes.len() != n) {
        return Err(Error::config(format!(
            "frames or flags do not cover {n} nodes in {d}D"
        )));
    }
    let current = history[layout.history];
    let mut out = Tensor::zeros(&[n, layout.width()]);
    for v in 0..n {
        let row = out.row_mut(v);
        row[kinds[v].one_hot()] = 1.0;
        let mut col = NodeKind::COUNT;
        // Most recent velocity first.
        for h in 0..layout.history {
            let (new, old) = (history[layout.history - h], history[layout.history - h - 1]);
            for i in 0..d {
                row[col + i] = new[v * d + i] - old[v * d + i];
            }
            col += d;
        }
        if let Some((axis, level)) = task.floor {
            row[col] = current[v * d + axis] - level;
            col += 1;
        }
        if layout.force {
            row[col] = if task.force_nodes[v] { 1.0 } else { 0.0 };
        }
    }
    Ok(out)
}

/// `pos_final − pos_current` on collider nodes, zero elsewhere; `[N × d]`.
pub fn collider_target_offset(
    current: &[f64],
    target: &[f64],
    kinds: &[NodeKind],
    dim: usize,
) -> Tensor<f64> {
    let mut out = Tensor::zeros(&[kinds.len(), dim]);
    for (v, k) in kinds.iter().enumerate() {
        if *k == NodeKind::Collider {
            for i in 0..dim {
                out.set(v, i, target[v * dim + i] - current[v * dim + i]);
            }
        }
    }
    out
}

/// Node features, edges from the current frame, and edge features.
pub fn encode_graph(
    topology: &MeshTopology,
    history: &[&[f64]],
    kinds: &[NodeKind],
    task: &TaskFeatures,
    layout: &FeatureLayout,
    radius: f64,
) -> Result<GraphSample> {
    let node_features = encode_node_features(history, kinds, task, layout)?;
    let current = history[history.len() - 1];
    let mut edges = build_edges(topology, current, kinds, layout.dim, radius);
    sort_incoming_by_geometry(&mut edges, current, layout.dim);
    let edge_features = encode_edge_features(current, layout.dim, &edges);
    Ok(GraphSample {
        node_features,
        edges,
        edge_features,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line(n: usize) -> MeshTopology {
        MeshTopology::new(n, (0..n as u32 - 1).map(|i| vec![i, i + 1]).collect()).unwrap()
    }

    #[test]
    fn far_collider_adds_nothing() {
        let topo = line(3);
        let pos = [0.0, 0.0, 0.1, 0.0, 0.2, 0.0, 5.0, 5.0];
        let kinds = [
            NodeKind::Mesh,
            NodeKind::Mesh,
            NodeKind::Fixed,
            NodeKind::Collider,
        ];
        let edges = build_edges(&topo, &pos, &kinds, 2, 0.3);
        assert_eq!(edges.len(), 2 * topo.edges.len());
    }

    #[test]
    fn radius_threshold() {
        let topo = MeshTopology::new(2, vec![]).unwrap();
        let pos = [0.0, 0.0, 0.29, 0.0];
        let kinds = [NodeKind::Mesh, NodeKind::Collider];
        assert_eq!(
            build_edges(&topo, &pos, &kinds, 2, 0.3),
            vec![(0, 1), (1, 0)]
        );
        let pos = [0.0, 0.0, 0.31, 0.0];
        assert!(build_edges(&topo, &pos, &kinds, 2, 0.3).is_empty());
    }

    #[test]
    fn radius_edges_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (n_mesh, n_col) = (50, 9);
        let n = n_mesh + n_col;
        let pos: Vec<f64> = (0..n * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let kinds: Vec<NodeKind> = (0..n)
            .map(|i| {
                if i < n_mesh {
                    NodeKind::Mesh
                } else {
                    NodeKind::Collider
                }
            })
            .collect();
        let topo = MeshTopology::new(n, vec![]).unwrap();
        let got: std::collections::BTreeSet<_> = build_edges(&topo, &pos, &kinds, 2, 0.3)
            .into_iter()
            .collect();
        let mut want = std::collections::BTreeSet::new();
        for a in 0..n {
            for b in 0..n {
                let cross = (kinds[a] == NodeKind::Collider) != (kinds[b] == NodeKind::Collider);
                let d = ((pos[2 * a] - pos[2 * b]).powi(2)
                    + (pos[2 * a + 1] - pos[2 * b + 1]).powi(2))
                .sqrt();
                if cross && d < 0.3 {
                    want.insert((a, b));
                }
            }
        }
        assert!(!want.is_empty());
        assert_eq!(got, want);
    }

    #[test]
    fn edge_features_antisymmetric_and_translation_invariant() {
        let pos = vec![0.1, 0.2, -0.4, 0.7, 0.3, -0.2];
        let edges = vec![(0, 1), (1, 0), (2, 0)];
        let f = encode_edge_features(&pos, 2, &edges);
        assert_eq!(f.get(0, 0), -f.get(1, 0));
        assert_eq!(f.get(0, 2), f.get(1, 2));
        assert!(f.data().chunks(3).all(|r| r[2] > 0.0));
        for (e, &(u, v)) in edges.iter().enumerate() {
            let d = ((pos[2 * v] - pos[2 * u]).powi(2) + (pos[2 * v + 1] - pos[2 * u + 1]).powi(2))
                .sqrt();
            assert!((f.get(e, 2) - d).abs() < 1e-6);
        }
        // Dyadic shift keeps every difference exact.
        let pos_d: Vec<f64> = pos.iter().map(|v| (v * 64.0_f64).round() / 64.0).collect();
        let shifted_d: Vec<f64> = pos_d
            .iter()
            .enumerate()
            .map(|(i, v)| v + if i % 2 == 0 { 0.5 } else { 0.0 })
            .collect();
        assert_eq!(
            encode_edge_features(&pos_d, 2, &edges),
            encode_edge_features(&shifted_d, 2, &edges)
        );
    }

    #[test]
    fn block_layout_width() {
        let task = TaskFeatures::default();
        let layout = FeatureLayout::for_task(2, 1, &task);
        assert_eq!(layout.width(), 5);
        let sheet = TaskFeatures {
            floor: None,
            force_nodes: vec![false; 4],
        };
        assert_eq!(FeatureLayout::for_task(3, 2, &sheet).width(), 3 + 6 + 1);
    }

    #[test]
    fn velocity_block() {
        let kinds = [NodeKind::Mesh, NodeKind::Collider];
        let f0 = [0.0, 0.0, 1.0, 1.0];
        let f1 = [0.5, 0.0, 1.0, 0.75];
        let task = TaskFeatures::default();
        let h0 = FeatureLayout::for_task(2, 0, &task);
        let x = encode_node_features(&[&f1], &kinds, &task, &h0).unwrap();
        assert_eq!(x.cols(), 3);
        let h1 = FeatureLayout::for_task(2, 1, &task);
        let x = encode_node_features(&[&f0, &f1], &kinds, &task, &h1).unwrap();
        assert_eq!(x.row(0), &[1.0, 0.0, 0.0, 0.5, 0.0]);
        assert_eq!(x.row(1), &[0.0, 1.0, 0.0, 0.0, -0.25]);
        let x = encode_node_features(&[&f1, &f1], &kinds, &task, &h1).unwrap();
        assert!(x.data().iter().skip(3).step_by(5).all(|&v| v == 0.0));
        assert!(matches!(
            encode_node_features(&[&f1], &kinds, &task, &h1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn floor_and_force_columns() {
        let kinds = [NodeKind::Mesh, NodeKind::Fixed];
        let task = TaskFeatures {
            floor: Some((1, -1.0)),
            force_nodes: vec![true, false],
        };
        let layout = FeatureLayout::for_task(2, 0, &task);
        let f = [0.2, -0.5, 0.0, -1.0];
        let x = encode_node_features(&[&f], &kinds, &task, &layout).unwrap();
        assert_eq!(x.row(0), &[1.0, 0.0, 0.0, 0.5, 1.0]);
        assert_eq!(x.row(1), &[0.0, 0.0, 1.0, 0.0, 0.0]);
        let wrong = FeatureLayout {
            force: false,
            ..layout
        };
        assert!(encode_node_features(&[&f], &kinds, &task, &wrong).is_err());
    }

    #[test]
    fn collider_offset_only_on_colliders() {
        let kinds = [NodeKind::Mesh, NodeKind::Collider];
        let off = collider_target_offset(&[0.0, 0.0, 1.0, 1.0], &[9.0, 9.0, 1.0, 0.5], &kinds, 2);
        assert_eq!(off.data(), &[0.0, 0.0, 0.0, -0.5]);
    }
}
