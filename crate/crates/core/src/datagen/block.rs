use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::springs::{check_speed, grid_cells, grid_springs, round_f32, with_retry, SpringSystem};
use super::SimTrajectory;
use crate::error::{Error, Result};
use crate::meshgraph::NodeKind;

/// Rim vertices of the recorded collider outline; one more node marks its center.
pub const COLLIDER_RIM: usize = 8;

/// A square spring-mass block pressed by a rigid disc moving at constant velocity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    /// Masses per side.
    pub grid: usize,
    pub spacing: f64,
    pub kappa: f64,
    /// Spring stiffness at `kappa = 1`.
    pub base_stiffness: f64,
    pub damping: f64,
    pub collider_radius: f64,
    pub collider_start: [f64; 2],
    pub collider_velocity: [f64; 2],
    pub n_frames: usize,
    pub frame_dt: f64,
    pub substeps: usize,
}

impl Default for BlockSpec {
    fn default() -> Self {
        BlockSpec {
            grid: 7,
            spacing: 0.2,
            kappa: 1.0,
            base_stiffness: 50.0,
            damping: 0.2,
            collider_radius: 0.2,
            collider_start: [0.6, 1.45],
            collider_velocity: [0.0, -0.45],
            n_frames: 40,
            frame_dt: 0.025,
            substeps: 20,
        }
    }
}

impl BlockSpec {
    /// Same scene recorded at `n_frames` frames when given.
    pub fn with_frames(mut self, n_frames: Option<usize>) -> Self {
        if let Some(t) = n_frames {
            (self.frame_dt, self.substeps) =
                super::resample_frames(self.n_frames, self.frame_dt, self.substeps, t);
            self.n_frames = t;
        }
        self
    }

    /// Default block with a random collider radius, horizontal start and speed.
    pub fn random<R: Rng + ?Sized>(kappa: f64, rng: &mut R) -> Self {
        let base = BlockSpec::default();
        let width = base.width();
        let radius = rng.random_range(0.15..0.25);
        let gap = rng.random_range(0.01..0.05);
        BlockSpec {
            kappa,
            collider_radius: radius,
            collider_start: [
                rng.random_range(0.2 * width..0.8 * width),
                width + radius + gap,
            ],
            collider_velocity: [0.0, -rng.random_range(0.35..0.5)],
            ..base
        }
    }

    pub fn width(&self) -> f64 {
        (self.grid - 1) as f64 * self.spacing
    }

    pub fn n_mesh(&self) -> usize {
        self.grid * self.grid
    }

    pub fn duration(&self) -> f64 {
        (self.n_frames - 1) as f64 * self.frame_dt
    }

    pub fn collider_center(&self, t: f64) -> [f64; 2] {
        [
            self.collider_start[0] + self.collider_velocity[0] * t,
            self.collider_start[1] + self.collider_velocity[1] * t,
        ]
    }

    fn validate(&self) -> Result<()> {
        if self.grid < 2 || !(self.spacing > 0.0) {
            return Err(Error::config(
                "block needs at least 2×2 masses and positive spacing",
            ));
        }
        if !(self.kappa > 0.0) || !(self.base_stiffness > 0.0) || self.damping < 0.0 {
            return Err(Error::config(format!(
                "invalid material: kappa {}, base stiffness {}, damping {}",
                self.kappa, self.base_stiffness, self.damping
            )));
        }
        if !(self.collider_radius > 0.0) || self.n_frames < 2 || self.substeps == 0 {
            return Err(Error::config(
                "collider radius, frame count and substeps must be positive",
            ));
        }
        Ok(())
    }

    /// Whether the disc reaches the block's bounding box at some recorded frame.
    pub fn collider_reaches_block(&self) -> bool {
        let w = self.width();
        (0..self.n_frames).any(|k| {
            let c = self.collider_center(k as f64 * self.frame_dt);
            let dx = c[0] - c[0].clamp(0.0, w);
            let dy = c[1] - c[1].clamp(0.0, w);
            dx * dx + dy * dy < self.collider_radius * self.collider_radius
        })
    }

    /// Node kinds: block masses (bottom row fixed) then collider center and rim.
    pub fn node_kinds(&self) -> Vec<NodeKind> {
        let mut kinds: Vec<NodeKind> = (0..self.n_mesh())
            .map(|k| {
                if k < self.grid {
                    NodeKind::Fixed
                } else {
                    NodeKind::Mesh
                }
            })
            .collect();
        kinds.extend(std::iter::repeat_n(NodeKind::Collider, COLLIDER_RIM + 1));
        kinds
    }

    /// Block triangles followed by the collider's triangle fan.
    pub fn cells(&self) -> Vec<Vec<u32>> {
        let mut cells = grid_cells(self.grid);
        let c = self.n_mesh() as u32;
        for j in 0..COLLIDER_RIM as u32 {
            let next = (j + 1) % COLLIDER_RIM as u32;
            cells.push(vec![c, c + 1 + j, c + 1 + next]);
        }
        cells
    }

    pub fn rest_positions(&self) -> Vec<f64> {
        (0..self.n_mesh())
            .flat_map(|k| {
                [
                    (k % self.grid) as f64 * self.spacing,
                    (k / self.grid) as f64 * self.spacing,
                ]
            })
            .collect()
    }

    fn collider_nodes(&self, t: f64) -> Vec<f64> {
        let c = self.collider_center(t);
        let mut out = c.to_vec();
        for j in 0..COLLIDER_RIM {
            let a = TAU * j as f64 / COLLIDER_RIM as f64;
            out.push(c[0] + self.collider_radius * a.cos());
            out.push(c[1] + self.collider_radius * a.sin());
        }
        out
    }
}

/// Moves particles inside the disc onto its surface and removes their
/// inward velocity relative to the disc.
fn project_out(
    x: &mut [f64],
    v: &mut [f64],
    fixed: &[bool],
    center: [f64; 2],
    vel: [f64; 2],
    r: f64,
) {
    for (n, &is_fixed) in fixed.iter().enumerate() {
        if is_fixed {
            continue;
        }
        let dx = x[2 * n] - center[0];
        let dy = x[2 * n + 1] - center[1];
        let dist = (dx * dx + dy * dy).sqrt();
        if dist >= r {
            continue;
        }
        let (nx, ny) = if dist > 1e-12 {
            (dx / dist, dy / dist)
        } else {
            (0.0, 1.0)
        };
        x[2 * n] = center[0] + r * nx;
        x[2 * n + 1] = center[1] + r * ny;
        let rel = (v[2 * n] - vel[0]) * nx + (v[2 * n + 1] - vel[1]) * ny;
        if rel < 0.0 {
            v[2 * n] -= rel * nx;
            v[2 * n + 1] -= rel * ny;
        }
    }
}

fn run_block(spec: &BlockSpec, substeps: usize) -> Result<SimTrajectory> {
    let x0 = spec.rest_positions();
    let fixed: Vec<bool> = (0..spec.n_mesh()).map(|k| k < spec.grid).collect();
    let mut sys = SpringSystem::new(2, &x0, fixed, spec.damping);
    grid_springs(&mut sys, &x0, spec.grid, spec.kappa * spec.base_stiffness);

    let dt = spec.frame_dt / substeps as f64;
    let mut x = x0.clone();
    let mut v = vec![0.0; x.len()];
    let mut buf = vec![0.0; x.len()];
    let mut mesh = Vec::with_capacity(spec.n_frames * x.len());
    let mut collider = Vec::with_capacity(spec.n_frames * 2 * (COLLIDER_RIM + 1));
    mesh.extend_from_slice(&x);
    collider.extend(spec.collider_nodes(0.0));
    for frame in 1..spec.n_frames {
        for s in 1..=substeps {
            let t = (frame - 1) as f64 * spec.frame_dt + s as f64 * dt;
            sys.step(&mut x, &mut v, &mut buf, dt);
            project_out(
                &mut x,
                &mut v,
                &sys.fixed,
                spec.collider_center(t),
                spec.collider_velocity,
                spec.collider_radius,
            );
        }
        check_speed(&v, &format!("block frame {frame}"))?;
        mesh.extend_from_slice(&x);
        collider.extend(spec.collider_nodes(frame as f64 * spec.frame_dt));
    }
    round_f32(&mut mesh);
    round_f32(&mut collider);
    Ok(SimTrajectory {
        dim: 2,
        n_frames: spec.n_frames,
        mesh,
        collider,
    })
}

pub fn simulate_block(spec: &BlockSpec) -> Result<SimTrajectory> {
    spec.validate()?;
    with_retry(spec.substeps, |substeps| run_block(spec, substeps))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_final_displacement(spec: &BlockSpec, traj: &SimTrajectory) -> f64 {
        let x0 = spec.rest_positions();
        let last = traj.mesh_frame(spec.n_frames - 1);
        (0..spec.n_mesh())
            .map(|n| {
                ((last[2 * n] - x0[2 * n]).powi(2) + (last[2 * n + 1] - x0[2 * n + 1]).powi(2))
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn untouched_block_stays_static() {
        let spec = BlockSpec {
            collider_start: [0.6, 3.0],
            ..BlockSpec::default()
        };
        assert!(!spec.collider_reaches_block());
        let traj = simulate_block(&spec).unwrap();
        let x0 = spec.rest_positions();
        for t in 0..spec.n_frames {
            assert_eq!(
                traj.mesh_frame(t),
                x0.iter().map(|&v| v as f32 as f64).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn fixed_row_never_moves() {
        let traj = simulate_block(&BlockSpec::default()).unwrap();
        let spec = BlockSpec::default();
        let mut x0 = spec.rest_positions();
        round_f32(&mut x0);
        for t in 0..spec.n_frames {
            assert_eq!(&traj.mesh_frame(t)[..2 * spec.grid], &x0[..2 * spec.grid]);
        }
    }

    fn mean_final_displacement(spec: &BlockSpec, traj: &SimTrajectory) -> f64 {
        let x0 = spec.rest_positions();
        let last = traj.mesh_frame(spec.n_frames - 1);
        (0..spec.n_mesh())
            .map(|n| {
                ((last[2 * n] - x0[2 * n]).powi(2) + (last[2 * n + 1] - x0[2 * n + 1]).powi(2))
                    .sqrt()
            })
            .sum::<f64>()
            / spec.n_mesh() as f64
    }

    #[test]
    fn indentation_depth_does_not_depend_on_stiffness() {
        let soft = BlockSpec {
            kappa: 0.5,
            ..BlockSpec::default()
        };
        let stiff = BlockSpec {
            kappa: 50.0,
            ..BlockSpec::default()
        };
        let d_soft = max_final_displacement(&soft, &simulate_block(&soft).unwrap());
        let d_stiff = max_final_displacement(&stiff, &simulate_block(&stiff).unwrap());
        assert!((d_stiff - d_soft).abs() < 1e-3, "{d_stiff} vs {d_soft}");
    }

    #[test]
    fn stiffer_block_spreads_the_dent() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..6 {
            let base = BlockSpec::random(1.0, &mut rng);
            let soft = BlockSpec {
                kappa: 0.5,
                ..base.clone()
            };
            let stiff = BlockSpec { kappa: 8.0, ..base };
            let m_soft = mean_final_displacement(&soft, &simulate_block(&soft).unwrap());
            let m_stiff = mean_final_displacement(&stiff, &simulate_block(&stiff).unwrap());
            assert!(m_stiff > 1.3 * m_soft, "{m_stiff} vs {m_soft}");
        }
    }

    #[test]
    fn no_mesh_node_inside_collider() {
        let spec = BlockSpec::default();
        let traj = simulate_block(&spec).unwrap();
        for t in 0..spec.n_frames {
            let c = &traj.collider_frame(t)[..2];
            let m = traj.mesh_frame(t);
            for n in 0..spec.n_mesh() {
                let d = ((m[2 * n] - c[0]).powi(2) + (m[2 * n + 1] - c[1]).powi(2)).sqrt();
                assert!(d > spec.collider_radius - 1e-6, "frame {t} node {n}: {d}");
            }
        }
    }

    #[test]
    fn random_specs_hit_the_block() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            assert!(BlockSpec::random(1.0, &mut rng).collider_reaches_block());
        }
    }

    #[test]
    fn huge_stiffness_reports_instability() {
        let spec = BlockSpec {
            kappa: 1e7,
            substeps: 1,
            ..BlockSpec::default()
        };
        assert!(matches!(simulate_block(&spec), Err(Error::Unstable(_))));
    }
}
