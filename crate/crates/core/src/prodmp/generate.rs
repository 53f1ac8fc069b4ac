use super::{BasisTables, GoalMode, InitialCondition, WeightVector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory1d {
    pub positions: Vec<f64>,
    pub velocities: Vec<f64>,
}

/// Positions and velocities `[time][dim]` on the grid points from `t_b` on.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryNd {
    pub times: Vec<f64>,
    pub positions: Vec<Vec<f64>>,
    pub velocities: Vec<Vec<f64>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_weights(
    tables: &BasisTables,
    ic: &InitialCondition,
    weights: &[WeightVector],
) -> Result<()> {
    if weights.len() != ic.dim() || ic.y_dot_b.len() != ic.dim() {
        return Err(Error::contract(format!(
            "{} weight vectors for a {}-dimensional initial condition ({} velocities)",
            weights.len(),
            ic.dim(),
            ic.y_dot_b.len()
        )));
    }
    let want = tables.n_weights() + 1;
    if let Some(w) = weights.iter().find(|w| w.w_g.len() != want) {
        return Err(Error::contract(format!(
            "weight vector has length {}, expected {want}",
            w.w_g.len()
        )));
    }
    if !(ic.y_b.iter().chain(&ic.y_dot_b).all(|v| v.is_finite()) && ic.t_b.is_finite()) {
        return Err(Error::contract("non-finite initial condition"));
    }
    Ok(())
}

/// Complementary-function coefficients solving the boundary conditions in
/// canonical time:
/// `c1 = (ẏ2 (y_b − Φ_b w) − y2 (ẏ_b − Φ̇_b w)) / (y1 ẏ2 − y2 ẏ1)`,
/// `c2 = (y1 (ẏ_b − Φ̇_b w) − ẏ1 (y_b − Φ_b w)) / (y1 ẏ2 − y2 ẏ1)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn solve_coefficients(
    y1: f64,
    y2: f64,
    y1_dot: f64,
    y2_dot: f64,
    phi_w: f64,
    phi_dot_w: f64,
    y_b: f64,
    y_dot_b: f64,
) -> Result<(f64, f64)> {
    let den = y1 * y2_dot - y2 * y1_dot;
    let scale = (y1 * y2_dot).abs().max((y2 * y1_dot).abs());
    if !(den.abs() >= 1e-12 * scale) || den == 0.0 {
        return Err(Error::Numeric(format!(
            "degenerate boundary system: determinant {den:e} at scale {scale:e}"
        )));
    }
    let dp = y_b - phi_w;
    let dv = y_dot_b - phi_dot_w;
    Ok(((y2_dot * dp - y2 * dv) / den, (y1 * dv - y1_dot * dp) / den))
}

/// Start position in the frame the trajectory is generated in: relative goals
/// generate from the origin and are shifted by `y_b` afterwards.
fn local_start(w: &WeightVector, y_b: f64) -> (f64, f64) {
    match w.goal_mode {
        GoalMode::Absolute => (y_b, 0.0),
        GoalMode::RelativeToStart => (0.0, y_b),
    }
}

/// Boundary coefficients `(c1, c2)` per dimension at `τ = 1`; `ic.t_b` must be a
/// table grid point. For relative goals they describe the trajectory generated
/// from the origin.
pub fn boundary_coefficients(
    tables: &BasisTables,
    ic: &InitialCondition,
    weights: &[WeightVector],
) -> Result<Vec<(f64, f64)>> {
    check_weights(tables, ic, weights)?;
    let k = tables
        .grid_index(ic.t_b)
        .ok_or_else(|| Error::contract(format!("t_b = {} is not a table grid point", ic.t_b)))?;
    weights
        .iter()
        .enumerate()
        .map(|(d, w)| {
            let (start, _) = local_start(w, ic.y_b[d]);
            solve_coefficients(
                tables.y1[k],
                tables.y2[k],
                tables.y1_dot[k],
                tables.y2_dot[k],
                dot(tables.phi.row(k), &w.w_g),
                dot(tables.phi_dot.row(k), &w.w_g),
                start,
                ic.y_dot_b[d],
            )
        })
        .collect()
}

/// Generates positions and velocities on `times[j] ≥ t_b` for execution speed
/// `tau`. `times` are real times in units of the canonical duration; `t_b` must
/// be one of them.
pub fn generate_trajectory(
    tables: &BasisTables,
    times: &[f64],
    ic: &InitialCondition,
    weights: &[WeightVector],
    tau: f64,
) -> Result<TrajectoryNd> {
    tables.config.check_tau(tau)?;
    check_weights(tables, ic, weights)?;
    let start = times
        .iter()
        .position(|&t| t == ic.t_b)
        .ok_or_else(|| Error::contract(format!("t_b = {} is not a grid point", ic.t_b)))?;
    let a = tables.config.half_alpha();
    let s_b = ic.t_b / tau;
    let e_b = (-a * s_b).exp();
    let (y1b, y2b, y1db, y2db) = (e_b, s_b * e_b, -a * e_b, (1.0 - a * s_b) * e_b);
    let row_b = tables.eval(s_b)?;

    let mut coeffs = Vec::with_capacity(ic.dim());
    for (d, w) in weights.iter().enumerate() {
        let (y_start, _) = local_start(w, ic.y_b[d]);
        // Canonical velocity: dY/ds = τ · dy/dt.
        coeffs.push(solve_coefficients(
            y1b,
            y2b,
            y1db,
            y2db,
            dot(&row_b.pos, &w.w_g),
            dot(&row_b.vel, &w.w_g),
            y_start,
            tau * ic.y_dot_b[d],
        )?);
    }

    let mut out = TrajectoryNd {
        times: times[start..].to_vec(),
        positions: Vec::with_capacity(times.len() - start),
        velocities: Vec::with_capacity(times.len() - start),
    };
    for &t in &times[start..] {
        let s = t / tau;
        let row = if t == ic.t_b {
            row_b.clone()
        } else {
            tables.eval(s)?
        };
        let e = (-a * s).exp();
        let (y1, y2, y1d, y2d) = (e, s * e, -a * e, (1.0 - a * s) * e);
        let mut pos = Vec::with_capacity(ic.dim());
        let mut vel = Vec::with_capacity(ic.dim());
        for (d, w) in weights.iter().enumerate() {
            let (c1, c2) = coeffs[d];
            let (_, shift) = local_start(w, ic.y_b[d]);
            pos.push(dot(&row.pos, &w.w_g) + c1 * y1 + c2 * y2 + shift);
            vel.push((dot(&row.vel, &w.w_g) + c1 * y1d + c2 * y2d) / tau);
        }
        out.positions.push(pos);
        out.velocities.push(vel);
    }
    Ok(out)
}

impl TrajectoryNd {
    pub fn dim(&self, d: usize) -> Trajectory1d {
        Trajectory1d {
            positions: self.positions.iter().map(|p| p[d]).collect(),
            velocities: self.velocities.iter().map(|v| v[d]).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prodmp::ProDmpConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tables() -> BasisTables {
        BasisTables::new(&ProDmpConfig {
            table_resolution: 250,
            ..ProDmpConfig::default()
        })
        .unwrap()
    }

    fn random_weights(rng: &mut ChaCha8Rng, n: usize, mode: GoalMode) -> WeightVector {
        let mut w: Vec<f64> = (0..n)
            .map(|_| rng.random_range(-1.0..1.0) * 156.25)
            .collect();
        w.push(rng.random_range(-1.0..1.0));
        WeightVector::new(w, mode)
    }

    #[test]
    fn coefficients_at_origin() {
        let t = tables();
        let ic = InitialCondition {
            t_b: 0.0,
            y_b: vec![0.7],
            y_dot_b: vec![-0.4],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = random_weights(&mut rng, 30, GoalMode::Absolute);
        let c = boundary_coefficients(&t, &ic, &[w]).unwrap();
        assert!((c[0].0 - 0.7).abs() < 1e-15);
        assert!((c[0].1 - (-0.4 + 12.5 * 0.7)).abs() < 1e-12);
        let zero = InitialCondition {
            t_b: 0.4,
            y_b: vec![0.0],
            y_dot_b: vec![0.0],
        };
        assert_eq!(
            boundary_coefficients(&t, &zero, &[WeightVector::zeros(30)]).unwrap(),
            vec![(0.0, 0.0)]
        );
    }

    #[test]
    fn coefficients_are_affine_in_weights() {
        let t = tables();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let ic = InitialCondition {
                t_b: t.times[rng.random_range(0..300)],
                y_b: vec![rng.random_range(-1.0..1.0)],
                y_dot_b: vec![rng.random_range(-1.0..1.0)],
            };
            let wa = random_weights(&mut rng, 30, GoalMode::Absolute);
            let wb = random_weights(&mut rng, 30, GoalMode::Absolute);
            let lam: f64 = rng.random();
            let mix = WeightVector::new(
                wa.w_g
                    .iter()
                    .zip(&wb.w_g)
                    .map(|(a, b)| lam * a + (1.0 - lam) * b)
                    .collect(),
                GoalMode::Absolute,
            );
            let ca = boundary_coefficients(&t, &ic, &[wa]).unwrap()[0];
            let cb = boundary_coefficients(&t, &ic, &[wb]).unwrap()[0];
            let cm = boundary_coefficients(&t, &ic, &[mix]).unwrap()[0];
            let tol = 1e-9 * (1.0 + ca.0.abs() + cb.0.abs() + ca.1.abs() + cb.1.abs());
            assert!((cm.0 - (lam * ca.0 + (1.0 - lam) * cb.0)).abs() < tol);
            assert!((cm.1 - (lam * ca.1 + (1.0 - lam) * cb.1)).abs() < tol);
        }
    }

    #[test]
    fn off_grid_anchor_rejected() {
        let t = tables();
        let ic = InitialCondition {
            t_b: 0.0012345,
            y_b: vec![0.0],
            y_dot_b: vec![0.0],
        };
        assert!(matches!(
            boundary_coefficients(&t, &ic, &[WeightVector::zeros(30)]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn zero_everything_gives_zero_trajectory() {
        let t = tables();
        let times: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
        let ic = InitialCondition {
            t_b: 0.25,
            y_b: vec![0.0, 0.0],
            y_dot_b: vec![0.0, 0.0],
        };
        let traj = generate_trajectory(
            &t,
            &times,
            &ic,
            &[WeightVector::zeros(30), WeightVector::zeros(30)],
            1.0,
        )
        .unwrap();
        assert_eq!(traj.positions.len(), 16);
        assert!(traj.positions.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn tau_outside_range_rejected() {
        let t = tables();
        let ic = InitialCondition {
            t_b: 0.0,
            y_b: vec![0.0],
            y_dot_b: vec![0.0],
        };
        let r = generate_trajectory(&t, &[0.0, 0.5], &ic, &[WeightVector::zeros(30)], 3.5);
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn relative_goal_shifts_origin_trajectory() {
        let t = tables();
        let times: Vec<f64> = (0..=40).map(|i| i as f64 / 40.0).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rel = random_weights(&mut rng, 30, GoalMode::RelativeToStart);
        let ic = InitialCondition {
            t_b: 0.25,
            y_b: vec![0.8],
            y_dot_b: vec![0.3],
        };
        let at_origin = InitialCondition {
            y_b: vec![0.0],
            ..ic.clone()
        };
        let shifted = generate_trajectory(&t, &times, &ic, &[rel.clone()], 0.7).unwrap();
        let abs = WeightVector::new(rel.w_g.clone(), GoalMode::Absolute);
        let origin = generate_trajectory(&t, &times, &at_origin, &[abs], 0.7).unwrap();
        for (a, b) in shifted.positions.iter().zip(&origin.positions) {
            assert!((a[0] - (b[0] + 0.8)).abs() < 1e-12);
        }
        assert!((shifted.positions[0][0] - 0.8).abs() < 1e-12);
    }
}
