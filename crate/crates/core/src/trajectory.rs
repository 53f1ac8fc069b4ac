//! Context sets and predicted trajectories shared by both model families.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meshgraph::{Episode, NodeKind};

/// The first `n_context` frames of an episode plus its known collider future.
#[derive(Debug, Clone, Copy)]
pub struct ContextSet<'a> {
    pub episode: &'a Episode,
    pub n_context: usize,
}

impl<'a> ContextSet<'a> {
    pub fn new(episode: &'a Episode, n_context: usize) -> Result<Self> {
        if n_context < 2 || n_context >= episode.n_frames {
            return Err(Error::contract(format!(
                "context size {n_context} must lie in [2, {})",
                episode.n_frames
            )));
        }
        Ok(ContextSet { episode, n_context })
    }

    /// Index of the last observed frame.
    pub fn anchor(&self) -> usize {
        self.n_context - 1
    }

    /// Frames from the anchor through the end of the episode.
    pub fn horizon(&self) -> usize {
        self.episode.n_frames - self.anchor()
    }

    pub fn has_collider(&self) -> bool {
        self.episode.kinds.contains(&NodeKind::Collider)
    }
}

/// Instrumented count of network evaluations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelCalls {
    pub context: usize,
    pub simulator: usize,
}

impl ModelCalls {
    pub fn total(&self) -> usize {
        self.context + self.simulator
    }
}

/// Predicted positions for frames `anchor ..= T−1`, `[K × N × d]` over all nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub anchor: usize,
    pub n_nodes: usize,
    pub dim: usize,
    pub positions: Vec<f64>,
    pub calls: ModelCalls,
    /// Set when a rollout produced non-finite state and stopped early.
    pub diverged: bool,
}

impl Prediction {
    pub fn n_frames(&self) -> usize {
        self.positions.len() / (self.n_nodes * self.dim)
    }

    /// Predicted frame at absolute index `t ≥ anchor`.
    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.n_nodes * self.dim;
        let k = t - self.anchor;
        &self.positions[k * n..(k + 1) * n]
    }
}
