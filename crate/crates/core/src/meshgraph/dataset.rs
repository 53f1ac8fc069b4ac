//! Dataset container: `manifest.json` plus one directory per trajectory with
//! little-endian `f32` `positions.bin` `[T×V×d]`, `collider.bin` `[T×U×d]` and
//! `topology.bin` (`u32` node count, cell count, then per cell its arity and
//! indices).

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{FrameState, MeshTopology, NodeKind, NormalizationMap, TaskFeatures};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
    /// Test trajectories with material values never seen in training.
    Ood,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub id: usize,
    pub kappa: f64,
    pub split: Split,
    pub seed: u64,
}

impl TrajectoryMeta {
    pub fn dir_name(&self) -> String {
        format!("traj_{:05}", self.id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub task: String,
    pub seed: u64,
    pub n_trajectories: usize,
    pub n_frames: usize,
    pub n_mesh: usize,
    pub n_collider: usize,
    pub dim: usize,
    /// Kinds of all nodes, mesh then collider.
    pub node_kinds: Vec<NodeKind>,
    /// Nodes an external force acts on.
    pub force_nodes: Vec<usize>,
    /// World-to-normalized map fitted on the training split.
    pub normalization: NormalizationMap,
    pub trajectories: Vec<TrajectoryMeta>,
}

impl Manifest {
    pub fn n_nodes(&self) -> usize {
        self.n_mesh + self.n_collider
    }

    pub fn task_features(&self) -> TaskFeatures {
        let mut force_nodes = Vec::new();
        if !self.force_nodes.is_empty() {
            force_nodes = vec![false; self.n_nodes()];
            for &i in &self.force_nodes {
                force_nodes[i] = true;
            }
        }
        TaskFeatures {
            floor: None,
            force_nodes,
        }
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.trajectories.len())
            .filter(|&i| self.trajectories[i].split == split)
            .collect()
    }

    fn check(&self, path: &Path) -> Result<()> {
        let bad = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        if self.format_version != FORMAT_VERSION {
            return Err(bad(format!(
                "unsupported format version {}",
                self.format_version
            )));
        }
        if self.node_kinds.len() != self.n_nodes() || self.trajectories.len() != self.n_trajectories
        {
            return Err(bad(
                "node kinds or trajectory list inconsistent with counts".into(),
            ));
        }
        if !(self.dim == 2 || self.dim == 3) || self.normalization.dim() != self.dim {
            return Err(bad(format!("unsupported dimension {}", self.dim)));
        }
        if let Some(&i) = self.force_nodes.iter().find(|&&i| i >= self.n_nodes()) {
            return Err(bad(format!("force node {i} out of range")));
        }
        Ok(())
    }
}

/// Raw world-unit positions of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTrajectory {
    pub mesh: Vec<f64>,
    pub collider: Vec<f64>,
}

/// A trajectory in normalized coordinates over the combined node set.
#[derive(Debug, Clone)]
pub struct Episode {
    pub id: usize,
    pub kappa: f64,
    pub dim: usize,
    pub n_frames: usize,
    pub n_mesh: usize,
    /// `[T × N × d]`, mesh nodes then collider nodes in every frame.
    pub positions: Vec<f64>,
    pub kinds: Arc<[NodeKind]>,
    pub topology: Arc<MeshTopology>,
    pub task: Arc<TaskFeatures>,
}

impl Episode {
    pub fn n_nodes(&self) -> usize {
        self.kinds.len()
    }

    pub fn frame_len(&self) -> usize {
        self.n_nodes() * self.dim
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.frame_len();
        &self.positions[t * n..(t + 1) * n]
    }

    /// Frames `t−h ..= t`, oldest first; indices before 0 repeat frame 0.
    pub fn history(&self, t: usize, h: usize) -> Vec<&[f64]> {
        (0..=h)
            .map(|k| self.frame((t + k).saturating_sub(h)))
            .collect()
    }

    pub fn frame_state(&self, t: usize) -> FrameState {
        let f = self.frame(t);
        let split = self.n_mesh * self.dim;
        FrameState {
            t,
            dim: self.dim,
            mesh_positions: f[..split].to_vec(),
            collider_positions: f[split..].to_vec(),
            kinds: self.kinds.to_vec(),
        }
    }

    /// Copy with every position shifted by `offset` (one value per axis).
    pub fn translated(&self, offset: &[f64]) -> Episode {
        let mut out = self.clone();
        for (i, v) in out.positions.iter_mut().enumerate() {
            *v += offset[i % self.dim];
        }
        out
    }

    /// Copy with node `i` moved to index `perm[i]`. Mesh and collider blocks
    /// keep their positions in the frame layout, so `perm` must map each
    /// block onto itself.
    pub fn relabeled(&self, perm: &[usize]) -> Result<Episode> {
        let n = self.n_nodes();
        if perm.len() != n {
            return Err(Error::contract(format!(
                "permutation of {} entries for {n} nodes",
                perm.len()
            )));
        }
        let mut seen = vec![false; n];
        for (i, &p) in perm.iter().enumerate() {
            if p >= n || seen[p] || (i < self.n_mesh) != (p < self.n_mesh) {
                return Err(Error::contract(format!(
                    "{perm:?} is not a block permutation of {n} nodes"
                )));
            }
            seen[p] = true;
        }
        let d = self.dim;
        let mut positions = vec![0.0; self.positions.len()];
        for t in 0..self.n_frames {
            let (src, base) = (self.frame(t), t * n * d);
            for (i, &p) in perm.iter().enumerate() {
                positions[base + p * d..base + (p + 1) * d]
                    .copy_from_slice(&src[i * d..(i + 1) * d]);
            }
        }
        let mut kinds = vec![NodeKind::Mesh; n];
        for (i, &p) in perm.iter().enumerate() {
            kinds[p] = self.kinds[i];
        }
        let cells = self
            .topology
            .cells
            .iter()
            .map(|c| c.iter().map(|&v| perm[v as usize] as u32).collect())
            .collect();
        let mut task = (*self.task).clone();
        if !task.force_nodes.is_empty() {
            let mut flags = vec![false; n];
            for (i, &p) in perm.iter().enumerate() {
                flags[p] = task.force_nodes[i];
            }
            task.force_nodes = flags;
        }
        Ok(Episode {
            positions,
            kinds: kinds.into(),
            topology: Arc::new(MeshTopology::new(n, cells)?),
            task: Arc::new(task),
            ..self.clone()
        })
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
    pub topology: Arc<MeshTopology>,
    pub trajectories: Vec<RawTrajectory>,
}

fn write_f32(path: &Path, values: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for &v in values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn read_f32(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected * 4 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("expected {expected} floats, found {} bytes", bytes.len()),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

fn write_topology(path: &Path, topo: &MeshTopology) -> Result<()> {
    let mut words = vec![topo.n_nodes as u32, topo.cells.len() as u32];
    for cell in &topo.cells {
        words.push(cell.len() as u32);
        words.extend_from_slice(cell);
    }
    let buf: Vec<u8> = words.iter().flat_map(|w| w.to_le_bytes()).collect();
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn read_topology(path: &Path) -> Result<MeshTopology> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: &str| Error::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() % 4 != 0 {
        return Err(bad("length not a multiple of 4"));
    }
    let words: Vec<u32> = bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let mut it = words.into_iter();
    let mut next = || it.next().ok_or_else(|| bad("truncated topology"));
    let n_nodes = next()? as usize;
    let n_cells = next()? as usize;
    let mut cells = Vec::with_capacity(n_cells);
    for _ in 0..n_cells {
        let arity = next()? as usize;
        cells.push((0..arity).map(|_| next()).collect::<Result<Vec<u32>>>()?);
    }
    MeshTopology::new(n_nodes, cells)
}

impl Dataset {
    /// Writes the container; positions are stored as 32-bit floats.
    pub fn write(
        root: impl AsRef<Path>,
        manifest: &Manifest,
        topology: &MeshTopology,
        trajectories: &[RawTrajectory],
    ) -> Result<()> {
        let root = root.as_ref();
        manifest.check(&root.join("manifest.json"))?;
        if trajectories.len() != manifest.n_trajectories {
            return Err(Error::contract(format!(
                "{} trajectories for a manifest listing {}",
                trajectories.len(),
                manifest.n_trajectories
            )));
        }
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        for (meta, traj) in manifest.trajectories.iter().zip(trajectories) {
            let dir = root.join(meta.dir_name());
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            write_f32(&dir.join("positions.bin"), &traj.mesh)?;
            write_f32(&dir.join("collider.bin"), &traj.collider)?;
            write_topology(&dir.join("topology.bin"), topology)?;
        }
        let path = root.join("manifest.json");
        let json = serde_json::to_string_pretty(manifest).expect("manifest serializes");
        fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }

    pub fn load(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let path = root.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        manifest.check(&path)?;
        let (t, d) = (manifest.n_frames, manifest.dim);
        let mut topology: Option<MeshTopology> = None;
        let mut trajectories = Vec::with_capacity(manifest.n_trajectories);
        for meta in &manifest.trajectories {
            let dir = root.join(meta.dir_name());
            let topo_path = dir.join("topology.bin");
            let topo = read_topology(&topo_path)?;
            if topo.n_nodes != manifest.n_nodes() || topology.as_ref().is_some_and(|t0| *t0 != topo)
            {
                return Err(Error::Format {
                    path: topo_path,
                    reason: "topology differs from the dataset's".into(),
                });
            }
            topology.get_or_insert(topo);
            trajectories.push(RawTrajectory {
                mesh: read_f32(&dir.join("positions.bin"), t * manifest.n_mesh * d)?,
                collider: read_f32(&dir.join("collider.bin"), t * manifest.n_collider * d)?,
            });
        }
        let topology = match topology {
            Some(t) => t,
            None => MeshTopology::new(manifest.n_nodes(), Vec::new())?,
        };
        Ok(Dataset {
            root,
            manifest,
            topology: Arc::new(topology),
            trajectories,
        })
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Normalized episode for trajectory `i`.
    pub fn episode(&self, i: usize) -> Episode {
        let m = &self.manifest;
        let raw = &self.trajectories[i];
        let (vm, vc) = (m.n_mesh * m.dim, m.n_collider * m.dim);
        let mut positions = Vec::with_capacity(m.n_frames * (vm + vc));
        for t in 0..m.n_frames {
            positions.extend_from_slice(&raw.mesh[t * vm..(t + 1) * vm]);
            positions.extend_from_slice(&raw.collider[t * vc..(t + 1) * vc]);
        }
        m.normalization.normalize(&mut positions);
        Episode {
            id: m.trajectories[i].id,
            kappa: m.trajectories[i].kappa,
            dim: m.dim,
            n_frames: m.n_frames,
            n_mesh: m.n_mesh,
            positions,
            kinds: m.node_kinds.clone().into(),
            topology: self.topology.clone(),
            task: Arc::new(m.task_features()),
        }
    }

    pub fn episodes(&self, split: Split) -> Vec<Episode> {
        self.manifest
            .indices(split)
            .into_iter()
            .map(|i| self.episode(i))
            .collect()
    }
}
