//! Raw simulation frames to graph inputs.
//!
//! Nodes are indexed mesh first, then collider. Positions are flat
//! node-major `[N·d]` slices throughout.

mod dataset;
mod features;
mod normalize;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dataset::{
    Dataset, Episode, Manifest, RawTrajectory, Split, TrajectoryMeta, FORMAT_VERSION,
};
pub use features::{
    build_edges, collider_target_offset, encode_edge_features, encode_graph, encode_node_features,
    sort_incoming_by_geometry, FeatureLayout, GraphSample, TaskFeatures, DEFAULT_RADIUS,
};
pub use normalize::{normalize_world, NormalizationMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Mesh,
    Collider,
    Fixed,
}

impl NodeKind {
    pub const COUNT: usize = 3;

    pub fn one_hot(self) -> usize {
        match self {
            NodeKind::Mesh => 0,
            NodeKind::Collider => 1,
            NodeKind::Fixed => 2,
        }
    }

    /// Nodes whose motion the models predict.
    pub fn is_free(self) -> bool {
        self == NodeKind::Mesh
    }
}

/// Cells over the combined node index space and their undirected edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MeshTopology {
    pub n_nodes: usize,
    pub cells: Vec<Vec<u32>>,
    /// Undirected edges `(a, b)` with `a < b`, sorted.
    pub edges: Vec<(u32, u32)>,
}

impl MeshTopology {
    /// Every pair of vertices sharing a cell becomes an edge; 2-cells are plain edges.
    pub fn new(n_nodes: usize, cells: Vec<Vec<u32>>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for cell in &cells {
            for &i in cell {
                if i as usize >= n_nodes {
                    return Err(Error::Index {
                        op: "mesh cell",
                        index: i as usize,
                        limit: n_nodes,
                    });
                }
            }
            for (k, &a) in cell.iter().enumerate() {
                for &b in &cell[k + 1..] {
                    if a != b {
                        set.insert((a.min(b), a.max(b)));
                    }
                }
            }
        }
        Ok(MeshTopology {
            n_nodes,
            cells,
            edges: set.into_iter().collect(),
        })
    }

    /// Both directions of every undirected edge, `(a,b)` then `(b,a)`.
    pub fn directed_edges(&self) -> Vec<(usize, usize)> {
        self.edges
            .iter()
            .flat_map(|&(a, b)| [(a as usize, b as usize), (b as usize, a as usize)])
            .collect()
    }
}

/// One recorded frame split into mesh and collider parts.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameState {
    pub t: usize,
    pub dim: usize,
    pub mesh_positions: Vec<f64>,
    pub collider_positions: Vec<f64>,
    /// Kinds of all nodes, mesh then collider.
    pub kinds: Vec<NodeKind>,
}

impl FrameState {
    pub fn n_mesh(&self) -> usize {
        self.mesh_positions.len() / self.dim
    }

    pub fn n_nodes(&self) -> usize {
        self.kinds.len()
    }

    pub fn positions(&self) -> Vec<f64> {
        let mut out = self.mesh_positions.clone();
        out.extend_from_slice(&self.collider_positions);
        out
    }
}
