use rand::Rng;
use serde::{Deserialize, Serialize};

use super::springs::{check_speed, grid_cells, grid_springs, round_f32, with_retry, SpringSystem};
use super::SimTrajectory;
use crate::error::{Error, Result};
use crate::meshgraph::NodeKind;

/// A square spring-mass sheet in the `z = 0` plane with its boundary ring
/// held in place and constant forces acting on chosen nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SheetSpec {
    pub grid: usize,
    pub spacing: f64,
    pub kappa: f64,
    pub base_stiffness: f64,
    pub damping: f64,
    /// `(node, force)` pairs.
    pub forces: Vec<(usize, [f64; 3])>,
    pub n_frames: usize,
    pub frame_dt: f64,
    pub substeps: usize,
}

impl Default for SheetSpec {
    fn default() -> Self {
        let grid = 9;
        SheetSpec {
            grid,
            spacing: 0.125,
            kappa: 1.0,
            base_stiffness: 50.0,
            damping: 0.2,
            forces: SheetSpec::default_force_nodes(grid)
                .into_iter()
                .map(|n| (n, [0.0, 0.0, 2.0]))
                .collect(),
            n_frames: 50,
            frame_dt: 0.02,
            substeps: 20,
        }
    }
}

impl SheetSpec {
    /// Same scene recorded at `n_frames` frames when given.
    pub fn with_frames(mut self, n_frames: Option<usize>) -> Self {
        if let Some(t) = n_frames {
            (self.frame_dt, self.substeps) =
                super::resample_frames(self.n_frames, self.frame_dt, self.substeps, t);
            self.n_frames = t;
        }
        self
    }

    /// Two interior nodes on the middle row, a quarter of the way in from each side.
    pub fn default_force_nodes(grid: usize) -> Vec<usize> {
        let j = grid / 2;
        vec![j * grid + grid / 4, j * grid + grid - 1 - grid / 4]
    }

    /// Default sheet with random force vectors on the default force nodes.
    pub fn random<R: Rng + ?Sized>(kappa: f64, rng: &mut R) -> Self {
        let base = SheetSpec::default();
        let forces = SheetSpec::default_force_nodes(base.grid)
            .into_iter()
            .map(|n| {
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let f = [
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                    sign * rng.random_range(1.0..3.0),
                ];
                (n, f)
            })
            .collect();
        SheetSpec {
            kappa,
            forces,
            ..base
        }
    }

    pub fn n_mesh(&self) -> usize {
        self.grid * self.grid
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        let (i, j) = (node % self.grid, node / self.grid);
        i == 0 || j == 0 || i + 1 == self.grid || j + 1 == self.grid
    }

    pub fn node_kinds(&self) -> Vec<NodeKind> {
        (0..self.n_mesh())
            .map(|n| {
                if self.is_boundary(n) {
                    NodeKind::Fixed
                } else {
                    NodeKind::Mesh
                }
            })
            .collect()
    }

    pub fn cells(&self) -> Vec<Vec<u32>> {
        grid_cells(self.grid)
    }

    pub fn rest_positions(&self) -> Vec<f64> {
        (0..self.n_mesh())
            .flat_map(|k| {
                [
                    (k % self.grid) as f64 * self.spacing,
                    (k / self.grid) as f64 * self.spacing,
                    0.0,
                ]
            })
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if self.grid < 3 || !(self.spacing > 0.0) {
            return Err(Error::config(
                "sheet needs at least 3×3 masses and positive spacing",
            ));
        }
        if !(self.kappa > 0.0) || !(self.base_stiffness > 0.0) || self.damping < 0.0 {
            return Err(Error::config(format!(
                "invalid sheet material kappa {}",
                self.kappa
            )));
        }
        if self.n_frames < 2 || self.substeps == 0 {
            return Err(Error::config("frame count and substeps must be positive"));
        }
        if let Some(&(n, _)) = self.forces.iter().find(|(n, _)| *n >= self.n_mesh()) {
            return Err(Error::config(format!("force node {n} outside the sheet")));
        }
        Ok(())
    }
}

fn run_sheet(spec: &SheetSpec, substeps: usize) -> Result<SimTrajectory> {
    let x0 = spec.rest_positions();
    let fixed: Vec<bool> = (0..spec.n_mesh()).map(|n| spec.is_boundary(n)).collect();
    let mut sys = SpringSystem::new(3, &x0, fixed, spec.damping);
    grid_springs(&mut sys, &x0, spec.grid, spec.kappa * spec.base_stiffness);
    for &(n, f) in &spec.forces {
        for i in 0..3 {
            sys.external[3 * n + i] += f[i];
        }
    }
    let dt = spec.frame_dt / substeps as f64;
    let mut x = x0;
    let mut v = vec![0.0; x.len()];
    let mut buf = vec![0.0; x.len()];
    let mut mesh = Vec::with_capacity(spec.n_frames * x.len());
    mesh.extend_from_slice(&x);
    for frame in 1..spec.n_frames {
        for _ in 0..substeps {
            sys.step(&mut x, &mut v, &mut buf, dt);
        }
        check_speed(&v, &format!("sheet frame {frame}"))?;
        mesh.extend_from_slice(&x);
    }
    round_f32(&mut mesh);
    Ok(SimTrajectory {
        dim: 3,
        n_frames: spec.n_frames,
        mesh,
        collider: Vec::new(),
    })
}

pub fn simulate_sheet(spec: &SheetSpec) -> Result<SimTrajectory> {
    spec.validate()?;
    with_retry(spec.substeps, |substeps| run_sheet(spec, substeps))
}
