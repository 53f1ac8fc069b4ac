#![allow(dead_code)]

use std::sync::Arc;

use m3gn::m3gn::M3gnConfig;
use m3gn::meshgraph::{Episode, MeshTopology, NodeKind, TaskFeatures};
use m3gn::prodmp::ProDmpConfig;

/// Five nodes in 2D: three free mesh nodes, one fixed node and one collider
/// node, over eight frames.
pub fn toy_episode() -> Episode {
    let kinds = vec![
        NodeKind::Mesh,
        NodeKind::Mesh,
        NodeKind::Mesh,
        NodeKind::Fixed,
        NodeKind::Collider,
    ];
    let topology = MeshTopology::new(5, vec![vec![0, 1, 3], vec![1, 2, 3]]).unwrap();
    let base = [0.0, 0.0, 0.3, 0.05, 0.55, -0.02, 0.2, -0.3, 0.35, 0.5];
    let n_frames = 8;
    let mut positions = Vec::new();
    for t in 0..n_frames {
        let s = t as f64 / (n_frames - 1) as f64;
        for v in 0..5 {
            let (dx, dy) = match kinds[v] {
                NodeKind::Fixed => (0.0, 0.0),
                NodeKind::Collider => (0.0, -0.3 * s),
                NodeKind::Mesh => (
                    0.05 * (s * 3.0 + v as f64).sin() * s,
                    -0.1 * s * s * (1.0 + v as f64),
                ),
            };
            positions.push(base[2 * v] + dx);
            positions.push(base[2 * v + 1] + dy);
        }
    }
    Episode {
        id: 0,
        kappa: 1.0,
        dim: 2,
        n_frames,
        n_mesh: 4,
        positions,
        kinds: kinds.into(),
        topology: Arc::new(topology),
        task: Arc::new(TaskFeatures::default()),
    }
}

/// A narrow M3GN suited to finite-difference checks.
pub fn tiny_m3gn() -> M3gnConfig {
    M3gnConfig {
        latent: 6,
        steps: 2,
        latent_task: 4,
        tau_hidden: 3,
        weight_head_scale: 1.0,
        radius: 0.5,
        prodmp: ProDmpConfig {
            n_weights: 4,
            table_resolution: 200,
            ..ProDmpConfig::default()
        },
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
