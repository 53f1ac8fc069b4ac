use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    generate_trajectory, BasisTables, ForcingBasis, GoalMode, InitialCondition, ProDmpConfig,
    TrajectoryNd, WeightVector,
};
use crate::error::{Error, Result};

/// Forward-Euler integration of `τ²ÿ = α(β(g − y) − τẏ) + x(t/τ)·φ(t/τ)ᵀw`
/// from the initial condition, sampled at the `times` from `t_b` on. Each
/// sample time must be `t_b` plus a whole number of steps.
pub fn euler_oracle(
    cfg: &ProDmpConfig,
    weights: &[WeightVector],
    ic: &InitialCondition,
    tau: f64,
    dt: f64,
    times: &[f64],
) -> Result<TrajectoryNd> {
    if !(dt > 0.0 && dt <= 1e-3) {
        return Err(Error::contract(format!(
            "oracle step {dt} must lie in (0, 1e-3]"
        )));
    }
    if weights.len() != ic.dim() {
        return Err(Error::contract("one weight vector per dimension required"));
    }
    let basis = ForcingBasis::new(cfg)?;
    let n = basis.len();
    let samples: Vec<(f64, usize)> = times
        .iter()
        .filter(|&&t| t >= ic.t_b)
        .map(|&t| {
            let steps = (t - ic.t_b) / dt;
            let r = steps.round();
            if (steps - r).abs() > 1e-6 {
                Err(Error::contract(format!(
                    "sample time {t} is not on the step lattice"
                )))
            } else {
                Ok((t, r as usize))
            }
        })
        .collect::<Result<_>>()?;

    let d = ic.dim();
    let mut goal = vec![0.0; d];
    let mut y = vec![0.0; d];
    let mut shift = vec![0.0; d];
    for k in 0..d {
        goal[k] = weights[k].goal();
        match weights[k].goal_mode {
            GoalMode::Absolute => y[k] = ic.y_b[k],
            GoalMode::RelativeToStart => shift[k] = ic.y_b[k],
        }
    }
    let mut v = ic.y_dot_b.clone();
    let mut phi = vec![0.0; n];
    let mut out = TrajectoryNd {
        times: samples.iter().map(|s| s.0).collect(),
        positions: Vec::with_capacity(samples.len()),
        velocities: Vec::with_capacity(samples.len()),
    };
    let mut step = 0usize;
    for &(_, target) in &samples {
        while step < target {
            let t = ic.t_b + step as f64 * dt;
            let s = t / tau;
            basis.row(s, &mut phi);
            let x = (-cfg.alpha_x * s).exp();
            for k in 0..d {
                let f: f64 = x * phi
                    .iter()
                    .zip(&weights[k].w_g)
                    .map(|(p, w)| p * w)
                    .sum::<f64>();
                let acc =
                    (cfg.alpha * (cfg.beta * (goal[k] - y[k]) - tau * v[k]) + f) / (tau * tau);
                y[k] += dt * v[k];
                v[k] += dt * acc;
            }
            step += 1;
        }
        out.positions
            .push(y.iter().zip(&shift).map(|(a, b)| a + b).collect());
        out.velocities.push(v.clone());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCase {
    pub tau: f64,
    pub seed: u64,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub dt: f64,
    pub cases: Vec<OracleCase>,
    /// Worst case per `τ`, in the order requested.
    pub max_error_by_tau: Vec<(f64, f64)>,
    pub max_error: f64,
}

/// Forcing weights uniform in `[−forcing_scale, forcing_scale]`, goal, start
/// position and start velocity uniform in `[−1, 1]`, anchored at `t_b = 0`.
pub fn random_case(
    cfg: &ProDmpConfig,
    forcing_scale: f64,
    rng: &mut ChaCha8Rng,
) -> (InitialCondition, WeightVector) {
    let mut w: Vec<f64> = (0..cfg.n_weights)
        .map(|_| rng.random_range(-1.0..1.0) * forcing_scale)
        .collect();
    w.push(rng.random_range(-1.0..1.0));
    let ic = InitialCondition {
        t_b: 0.0,
        y_b: vec![rng.random_range(-1.0..1.0)],
        y_dot_b: vec![rng.random_range(-1.0..1.0)],
    };
    (ic, WeightVector::new(w, GoalMode::Absolute))
}

/// Compares generated trajectories with the Euler oracle on `t ∈ [0, 1]` at
/// 100 samples for `n_seeds` random cases per `τ` (see [`random_case`]).
pub fn oracle_suite(
    tables: &BasisTables,
    taus: &[f64],
    n_seeds: u64,
    forcing_scale: f64,
    dt: f64,
) -> Result<OracleReport> {
    let cfg = &tables.config;
    let stride = (0.01 / dt).round() as usize;
    let times: Vec<f64> = (0..=100).map(|i| (i * stride) as f64 * dt).collect();
    let mut cases = Vec::new();
    let mut by_tau = Vec::new();
    for &tau in taus {
        let mut worst: f64 = 0.0;
        for seed in 0..n_seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (ic, w) = random_case(cfg, forcing_scale, &mut rng);
            let ws = [w];
            let gen = generate_trajectory(tables, &times, &ic, &ws, tau)?;
            let ode = euler_oracle(cfg, &ws, &ic, tau, dt, &times)?;
            let err = gen
                .positions
                .iter()
                .zip(&ode.positions)
                .map(|(a, b)| (a[0] - b[0]).abs())
                .fold(0.0, f64::max);
            worst = worst.max(err);
            cases.push(OracleCase {
                tau,
                seed,
                max_abs_error: err,
            });
        }
        by_tau.push((tau, worst));
    }
    let max_error = by_tau.iter().map(|x| x.1).fold(0.0, f64::max);
    Ok(OracleReport {
        dt,
        cases,
        max_error_by_tau: by_tau,
        max_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lattice(n: usize, dt: f64) -> Vec<f64> {
        (0..=n).map(|i| i as f64 * dt).collect()
    }

    #[test]
    fn equilibrium_stays_put() {
        let cfg = ProDmpConfig::default();
        let mut w = vec![0.0; 31];
        w[30] = 0.6;
        let ic = InitialCondition {
            t_b: 0.0,
            y_b: vec![0.6],
            y_dot_b: vec![0.0],
        };
        let out = euler_oracle(
            &cfg,
            &[WeightVector::new(w, GoalMode::Absolute)],
            &ic,
            1.0,
            1e-3,
            &lattice(1000, 1e-3),
        )
        .unwrap();
        assert!(out.positions.iter().all(|p| p[0] == 0.6));
    }

    #[test]
    fn critically_damped_convergence() {
        let cfg = ProDmpConfig::default();
        let mut w = vec![0.0; 31];
        w[30] = 1.0;
        let ic = InitialCondition {
            t_b: 0.0,
            y_b: vec![-0.5],
            y_dot_b: vec![0.0],
        };
        let out = euler_oracle(
            &cfg,
            &[WeightVector::new(w, GoalMode::Absolute)],
            &ic,
            1.0,
            1e-4,
            &lattice(10, 0.1),
        )
        .unwrap();
        let gaps: Vec<f64> = out.positions.iter().map(|p| (p[0] - 1.0).abs()).collect();
        assert!(gaps.windows(2).all(|g| g[1] < g[0]));
        assert!(gaps[10] < 1.5 * (-2.0f64).exp());
    }

    #[test]
    fn first_order_convergence() {
        let cfg = ProDmpConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (ic, w) = random_case(&cfg, cfg.weight_scale, &mut rng);
        let times = lattice(10, 0.1);
        let run = |dt| euler_oracle(&cfg, &[w.clone()], &ic, 1.0, dt, &times).unwrap();
        let (a, b, c) = (run(4e-4), run(2e-4), run(1e-4));
        let diff = |x: &TrajectoryNd, y: &TrajectoryNd| {
            x.positions
                .iter()
                .zip(&y.positions)
                .map(|(p, q)| (p[0] - q[0]).abs())
                .fold(0.0, f64::max)
        };
        let ratio = diff(&a, &b) / diff(&b, &c);
        assert!((1.7..2.3).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn step_bound_enforced() {
        let cfg = ProDmpConfig::default();
        let ic = InitialCondition {
            t_b: 0.0,
            y_b: vec![0.0],
            y_dot_b: vec![0.0],
        };
        let r = euler_oracle(&cfg, &[WeightVector::zeros(30)], &ic, 1.0, 1e-2, &[0.0]);
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn generated_trajectories_match_oracle() {
        let tables = BasisTables::new(&ProDmpConfig::default()).unwrap();
        let report = oracle_suite(&tables, &[0.3, 1.0, 3.0], 10, 1.0, 1e-4).unwrap();
        assert!(report.max_error < 1e-3, "{:?}", report.max_error_by_tau);
    }

    #[test]
    fn large_forcing_matches_extrapolated_oracle() {
        // Forcing weights at the model's output scale drive Euler's own O(dt)
        // error past 1e-3 at small τ; one Richardson step removes it.
        let tables = BasisTables::new(&ProDmpConfig::default()).unwrap();
        let cfg = &tables.config;
        let times: Vec<f64> = (0..=20).map(|i| i as f64 * 0.05).collect();
        for tau in [0.3, 1.0, 3.0] {
            for seed in 0..3 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let (ic, w) = random_case(cfg, cfg.weight_scale, &mut rng);
                let ws = [w];
                let gen = generate_trajectory(&tables, &times, &ic, &ws, tau).unwrap();
                let coarse = euler_oracle(cfg, &ws, &ic, tau, 1e-4, &times).unwrap();
                let fine = euler_oracle(cfg, &ws, &ic, tau, 5e-5, &times).unwrap();
                for k in 0..times.len() {
                    let extrapolated = 2.0 * fine.positions[k][0] - coarse.positions[k][0];
                    let err = (gen.positions[k][0] - extrapolated).abs();
                    assert!(err < 2e-5, "tau {tau} seed {seed} t {}: {err:e}", times[k]);
                }
            }
        }
    }
}
