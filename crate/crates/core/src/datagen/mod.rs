//! Synthetic ground truth: a 2D block pressed by a falling disc and a 3D
//! sheet under constant point forces, each with a hidden stiffness `kappa`.

mod block;
mod sheet;
mod springs;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meshgraph::{
    Dataset, Manifest, MeshTopology, NodeKind, NormalizationMap, RawTrajectory, Split,
    TrajectoryMeta, FORMAT_VERSION,
};

pub use block::{simulate_block, BlockSpec, COLLIDER_RIM};
pub use sheet::{simulate_sheet, SheetSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Block,
    Sheet,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Block => "block",
            Task::Sheet => "sheet",
        }
    }
}

/// World-unit output of one simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTrajectory {
    pub dim: usize,
    pub n_frames: usize,
    /// `[T × V × d]`.
    pub mesh: Vec<f64>,
    /// `[T × U × d]`, empty without a collider.
    pub collider: Vec<f64>,
}

impl SimTrajectory {
    pub fn mesh_frame(&self, t: usize) -> &[f64] {
        let n = self.mesh.len() / self.n_frames;
        &self.mesh[t * n..(t + 1) * n]
    }

    pub fn collider_frame(&self, t: usize) -> &[f64] {
        let n = self.collider.len() / self.n_frames;
        &self.collider[t * n..(t + 1) * n]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub task: Task,
    /// In-distribution trajectories, split into train/val/test.
    pub n: usize,
    pub seed: u64,
    pub kappa_set: Vec<f64>,
    pub ood_kappa: Vec<f64>,
    /// Extra trajectories drawn from `ood_kappa`.
    pub n_ood: usize,
    /// Train/val/test fractions.
    pub split: [f64; 3],
    pub threads: usize,
    /// Recorded frames per trajectory when not the scene default; the
    /// simulated duration and substep size stay the same.
    #[serde(default)]
    pub n_frames: Option<usize>,
}

impl GenConfig {
    pub fn new(task: Task) -> Self {
        GenConfig {
            task,
            n: 280,
            seed: 0,
            kappa_set: vec![0.5, 2.0, 8.0],
            ood_kappa: vec![0.2, 20.0],
            n_ood: 40,
            split: [5.0 / 7.0, 1.0 / 7.0, 1.0 / 7.0],
            threads: std::thread::available_parallelism().map_or(1, |n| n.get()),
            n_frames: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.kappa_set.is_empty() || self.kappa_set.iter().any(|&k| !(k > 0.0)) {
            return Err(Error::config("kappa set must be non-empty and positive"));
        }
        if self.ood_kappa.iter().any(|&k| !(k > 0.0)) {
            return Err(Error::config(
                "out-of-distribution kappa values must be positive",
            ));
        }
        if self.n_ood > 0 && self.ood_kappa.is_empty() {
            return Err(Error::config(
                "out-of-distribution trajectories need kappa values",
            ));
        }
        if let Some(k) = self.ood_kappa.iter().find(|k| self.kappa_set.contains(k)) {
            return Err(Error::config(format!(
                "kappa {k} appears in both the training and out-of-distribution sets"
            )));
        }
        if self.n_frames.is_some_and(|t| t < 3) {
            return Err(Error::config("trajectories need at least 3 frames"));
        }
        if self.split.iter().any(|&r| !(r >= 0.0))
            || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::config(format!(
                "split fractions {:?} must sum to 1",
                self.split
            )));
        }
        Ok(())
    }
}

/// Per-split counts; validation and test are rounded, training takes the rest.
pub fn split_counts(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let val = (n as f64 * fractions[1]).round() as usize;
    let test = ((n as f64 * fractions[2]).round() as usize).min(n - val.min(n));
    let val = val.min(n);
    [n - val - test, val, test]
}

/// Independent per-trajectory seed (SplitMix64 finalizer over master seed and index).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A generated dataset held in memory, ready for [`write_dataset`].
#[derive(Debug, Clone)]
pub struct GeneratedData {
    pub manifest: Manifest,
    pub topology: MeshTopology,
    pub trajectories: Vec<RawTrajectory>,
}

impl GeneratedData {
    /// The dataset as it would load from disk, without touching the filesystem.
    pub fn into_dataset(self) -> Dataset {
        Dataset {
            root: PathBuf::new(),
            manifest: self.manifest,
            topology: Arc::new(self.topology),
            trajectories: self.trajectories,
        }
    }
}

struct SceneLayout {
    dim: usize,
    n_frames: usize,
    n_mesh: usize,
    n_collider: usize,
    kinds: Vec<NodeKind>,
    cells: Vec<Vec<u32>>,
    force_nodes: Vec<usize>,
}

/// Frame interval and substep count that keep the duration and substep size
/// of an `n_frames` recording when `target` frames are recorded instead.
pub fn resample_frames(
    n_frames: usize,
    frame_dt: f64,
    substeps: usize,
    target: usize,
) -> (f64, usize) {
    let dt = frame_dt * (n_frames - 1) as f64 / (target - 1) as f64;
    let h = frame_dt / substeps as f64;
    (dt, ((dt / h) - 1e-9).ceil().max(1.0) as usize)
}

fn layout(task: Task, n_frames: Option<usize>) -> SceneLayout {
    match task {
        Task::Block => {
            let s = BlockSpec::default().with_frames(n_frames);
            SceneLayout {
                dim: 2,
                n_frames: s.n_frames,
                n_mesh: s.n_mesh(),
                n_collider: COLLIDER_RIM + 1,
                kinds: s.node_kinds(),
                cells: s.cells(),
                force_nodes: Vec::new(),
            }
        }
        Task::Sheet => {
            let s = SheetSpec::default().with_frames(n_frames);
            SceneLayout {
                dim: 3,
                n_frames: s.n_frames,
                n_mesh: s.n_mesh(),
                n_collider: 0,
                kinds: s.node_kinds(),
                cells: s.cells(),
                force_nodes: SheetSpec::default_force_nodes(s.grid),
            }
        }
    }
}

fn simulate_one(
    task: Task,
    kappa: f64,
    seed: u64,
    n_frames: Option<usize>,
) -> Result<SimTrajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match task {
        Task::Block => simulate_block(&BlockSpec::random(kappa, &mut rng).with_frames(n_frames)),
        Task::Sheet => simulate_sheet(&SheetSpec::random(kappa, &mut rng).with_frames(n_frames)),
    }
}

/// Simulates every trajectory of the configured dataset. The output depends
/// only on the configuration, not on the thread count.
pub fn generate(cfg: &GenConfig) -> Result<GeneratedData> {
    cfg.validate()?;
    let scene = layout(cfg.task, cfg.n_frames);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let counts = split_counts(cfg.n, cfg.split);
    let mut order: Vec<usize> = (0..cfg.n).collect();
    order.shuffle(&mut rng);
    let mut splits = vec![Split::Train; cfg.n];
    for (rank, &i) in order.iter().enumerate() {
        splits[i] = if rank < counts[0] {
            Split::Train
        } else if rank < counts[0] + counts[1] {
            Split::Val
        } else {
            Split::Test
        };
    }
    let mut metas: Vec<TrajectoryMeta> = (0..cfg.n)
        .map(|i| TrajectoryMeta {
            id: i,
            kappa: cfg.kappa_set[i % cfg.kappa_set.len()],
            split: splits[i],
            seed: derive_seed(cfg.seed, i as u64),
        })
        .collect();
    metas.extend((0..cfg.n_ood).map(|j| TrajectoryMeta {
        id: cfg.n + j,
        kappa: cfg.ood_kappa[j % cfg.ood_kappa.len().max(1)],
        split: Split::Ood,
        seed: derive_seed(cfg.seed, (cfg.n + j) as u64),
    }));

    let sims = simulate_parallel(cfg.task, &metas, cfg.threads.max(1), cfg.n_frames)?;
    let trajectories: Vec<RawTrajectory> = sims
        .into_iter()
        .map(|s| RawTrajectory {
            mesh: s.mesh,
            collider: s.collider,
        })
        .collect();

    let train: Vec<&RawTrajectory> = metas
        .iter()
        .zip(&trajectories)
        .filter(|(m, _)| m.split == Split::Train)
        .map(|(_, t)| t)
        .collect();
    if train.is_empty() {
        return Err(Error::config(
            "no training trajectories to fit the normalization on",
        ));
    }
    let normalization = NormalizationMap::fit(
        scene.dim,
        train
            .iter()
            .flat_map(|t| [t.mesh.as_slice(), t.collider.as_slice()]),
    )?;
    let topology = MeshTopology::new(scene.n_mesh + scene.n_collider, scene.cells)?;
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        task: cfg.task.name().to_string(),
        seed: cfg.seed,
        n_trajectories: metas.len(),
        n_frames: scene.n_frames,
        n_mesh: scene.n_mesh,
        n_collider: scene.n_collider,
        dim: scene.dim,
        node_kinds: scene.kinds,
        force_nodes: scene.force_nodes,
        normalization,
        trajectories: metas,
    };
    Ok(GeneratedData {
        manifest,
        topology,
        trajectories,
    })
}

fn simulate_parallel(
    task: Task,
    metas: &[TrajectoryMeta],
    threads: usize,
    n_frames: Option<usize>,
) -> Result<Vec<SimTrajectory>> {
    let chunk = metas.len().div_ceil(threads).max(1);
    std::thread::scope(|scope| {
        let handles: Vec<_> = metas
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|m| simulate_one(task, m.kappa, m.seed, n_frames))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        let mut out = Vec::with_capacity(metas.len());
        for h in handles {
            out.extend(h.join().expect("simulation thread panicked")?);
        }
        Ok(out)
    })
}

/// Writes the dataset container and reloads it.
pub fn write_dataset(root: impl AsRef<Path>, data: &GeneratedData) -> Result<Dataset> {
    Dataset::write(&root, &data.manifest, &data.topology, &data.trajectories)?;
    Dataset::load(root)
}
