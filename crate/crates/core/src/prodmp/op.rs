use std::sync::Arc;

use super::{BasisTables, Propagator};
use crate::error::{Error, Result};
use crate::numerics::{CustomOp, Scalar, Tensor};

/// Everything about a batch of per-node trajectories except the learned inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ProDmpRequest {
    /// Output times in canonical units; the first one is the anchor time `t_b`.
    pub times: Vec<f64>,
    /// Anchor positions, node-major `[V·d]`.
    pub anchor: Vec<f64>,
    /// Anchor velocities per unit canonical time, node-major `[V·d]`.
    pub anchor_velocity: Vec<f64>,
    pub n_nodes: usize,
    pub dim: usize,
}

impl ProDmpRequest {
    pub fn t_b(&self) -> f64 {
        self.times[0]
    }

    fn check(&self) -> Result<()> {
        let n = self.n_nodes * self.dim;
        if self.times.is_empty() || self.anchor.len() != n || self.anchor_velocity.len() != n {
            return Err(Error::contract(format!(
                "trajectory request: {} times, {} anchor values, {} velocities for {} nodes x {} dims",
                self.times.len(),
                self.anchor.len(),
                self.anchor_velocity.len(),
                self.n_nodes,
                self.dim
            )));
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::contract(
                "trajectory times must be strictly ascending",
            ));
        }
        Ok(())
    }
}

/// Per-node trajectories with relative goals as a differentiable function of
/// the raw weight head output `[V × d·(N_w+1)]` and a `[1 × 1]` execution
/// speed `τ`. Output is `[K × V·d]` absolute positions at the request times.
///
/// Each trajectory is written in propagator form around the anchor,
/// `Y(s) = Φ(s)w + (Y_b − Φ(s_b)w)·h1(s − s_b) + (Y'_b − Φ̇(s_b)w)·h2(s − s_b)`,
/// with `s = t/τ` and `Y'_b = τ·ẏ_b`, which is algebraically the same as
/// solving for the complementary-function coefficients at `s_b`.
#[derive(Debug, Clone)]
pub struct ProDmpOp {
    tables: Arc<BasisTables>,
    request: Arc<ProDmpRequest>,
}

/// Row coefficients of the propagator form and their `τ` derivatives.
struct Rows {
    /// `[K × (N+1)]`: Φ(s) − h1 Φ(s_b) − h2 Φ̇(s_b).
    a: Vec<f64>,
    /// `h2(u)`; multiplies `τ·ẏ_b`.
    b: Vec<f64>,
    da: Vec<f64>,
    /// `d(τ h2(u))/dτ`.
    db: Vec<f64>,
}

impl ProDmpOp {
    pub fn new(tables: Arc<BasisTables>, request: Arc<ProDmpRequest>) -> Result<Self> {
        request.check()?;
        let horizon = *request.times.last().expect("checked non-empty") / tables.config.tau_range.0;
        if horizon > tables.horizon() * (1.0 + 1e-12) {
            return Err(Error::config(format!(
                "basis tables cover canonical time {}, trajectories need {horizon}",
                tables.horizon()
            )));
        }
        Ok(ProDmpOp { tables, request })
    }

    pub fn request(&self) -> &ProDmpRequest {
        &self.request
    }

    fn width(&self) -> usize {
        self.tables.n_weights() + 1
    }

    fn rows(&self, tau: f64) -> Result<Rows> {
        self.tables.config.check_tau(tau)?;
        let a_half = self.tables.config.half_alpha();
        let w = self.width();
        let times = &self.request.times;
        let s_b = self.request.t_b() / tau;
        let at_b = self.tables.eval(s_b)?;
        let k_len = times.len();
        let mut rows = Rows {
            a: vec![0.0; k_len * w],
            b: vec![0.0; k_len],
            da: vec![0.0; k_len * w],
            db: vec![0.0; k_len],
        };
        for (k, &t) in times.iter().enumerate() {
            let s = t / tau;
            let u = s - s_b;
            let p = Propagator::at(a_half, u);
            let here = self.tables.eval(s)?;
            let (ds, dsb, du) = (-s / tau, -s_b / tau, -u / tau);
            let a = &mut rows.a[k * w..(k + 1) * w];
            let da = &mut rows.da[k * w..(k + 1) * w];
            for j in 0..w {
                a[j] = here.pos[j] - p.h1 * at_b.pos[j] - p.h2 * at_b.vel[j];
                da[j] = here.pos_ds[j] * ds
                    - p.h1_dot * du * at_b.pos[j]
                    - p.h1 * at_b.pos_ds[j] * dsb
                    - p.h2_dot * du * at_b.vel[j]
                    - p.h2 * at_b.vel_ds[j] * dsb;
            }
            rows.b[k] = p.h2;
            rows.db[k] = p.h2 - u * p.h2_dot;
        }
        Ok(rows)
    }

    /// `W_eff[j, v·d + i] = weights[v, i·(N+1) + j]`, forcing rows scaled.
    fn effective_weights(&self, weights: &[f64]) -> Result<Vec<f64>> {
        let (n_nodes, dim, w) = (self.request.n_nodes, self.request.dim, self.width());
        if weights.len() != n_nodes * dim * w {
            return Err(Error::Dimension {
                op: "prodmp weights",
                lhs: vec![weights.len()],
                rhs: vec![n_nodes, dim * w],
            });
        }
        let cols = n_nodes * dim;
        let scale = self.tables.config.weight_scale;
        let mut out = vec![0.0; w * cols];
        for v in 0..n_nodes {
            for i in 0..dim {
                for j in 0..w {
                    let f = if j + 1 < w { scale } else { 1.0 };
                    out[j * cols + v * dim + i] = f * weights[v * dim * w + i * w + j];
                }
            }
        }
        Ok(out)
    }

    /// Untraced evaluation: positions `[K × V·d]`, row-major.
    pub fn evaluate(&self, weights: &[f64], tau: f64) -> Result<Vec<f64>> {
        let rows = self.rows(tau)?;
        let w_eff = self.effective_weights(weights)?;
        let k_len = self.request.times.len();
        let cols = self.request.n_nodes * self.request.dim;
        let mut out = vec![0.0; k_len * cols];
        f64::gemm(
            k_len,
            self.width(),
            cols,
            &rows.a,
            (self.width(), 1),
            &w_eff,
            (cols, 1),
            0.0,
            &mut out,
        );
        for k in 0..k_len {
            let row = &mut out[k * cols..(k + 1) * cols];
            for c in 0..cols {
                row[c] +=
                    rows.b[k] * tau * self.request.anchor_velocity[c] + self.request.anchor[c];
            }
        }
        Ok(out)
    }

    /// Reads `τ`, snapping values within 32-bit rounding of the range ends onto them.
    fn tau_of<T: Scalar>(&self, t: &Tensor<T>) -> Result<f64> {
        if t.len() != 1 {
            return Err(Error::Dimension {
                op: "prodmp tau",
                lhs: t.shape().to_vec(),
                rhs: vec![1, 1],
            });
        }
        let tau = t.data()[0].as_f64();
        let (lo, hi) = self.tables.config.tau_range;
        let slack = 1e-6 * hi;
        Ok(if tau < lo && tau > lo - slack {
            lo
        } else if tau > hi && tau < hi + slack {
            hi
        } else {
            tau
        })
    }

    /// Propagator rows at `τ`: `A [K × (N+1)]` multiplying the scaled weights
    /// and `b [K]` multiplying `τ·ẏ_b`.
    pub fn propagator_rows(&self, tau: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let rows = self.rows(tau)?;
        Ok((rows.a, rows.b))
    }

    /// Weights as they enter the propagator, `[(N+1) × V·d]`.
    pub fn scaled_weights(&self, weights: &[f64]) -> Result<Vec<f64>> {
        self.effective_weights(weights)
    }
}

impl<T: Scalar> CustomOp<T> for ProDmpOp {
    fn name(&self) -> &'static str {
        "prodmp"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let tau = self.tau_of(inputs[1])?;
        let out = self.evaluate(&inputs[0].to_f64_vec(), tau)?;
        let cols = self.request.n_nodes * self.request.dim;
        Tensor::from_f64(&[self.request.times.len(), cols], &out)
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad_output: &Tensor<T>,
    ) -> Result<Vec<Tensor<T>>> {
        let tau = self.tau_of(inputs[1])?;
        let rows = self.rows(tau)?;
        let w_eff = self.effective_weights(&inputs[0].to_f64_vec())?;
        let g = grad_output.to_f64_vec();
        let (k_len, w) = (self.request.times.len(), self.width());
        let (n_nodes, dim) = (self.request.n_nodes, self.request.dim);
        let cols = n_nodes * dim;

        // dL/dW_eff = Aᵀ G.
        let mut g_eff = vec![0.0; w * cols];
        f64::gemm(
            w,
            k_len,
            cols,
            &rows.a,
            (1, w),
            &g,
            (cols, 1),
            0.0,
            &mut g_eff,
        );
        let scale = self.tables.config.weight_scale;
        let mut g_w = vec![0.0; n_nodes * dim * w];
        for v in 0..n_nodes {
            for i in 0..dim {
                for j in 0..w {
                    let f = if j + 1 < w { scale } else { 1.0 };
                    g_w[v * dim * w + i * w + j] = f * g_eff[j * cols + v * dim + i];
                }
            }
        }

        // dL/dτ = Σ G ∘ (dA W_eff) + Σ_k db_k Σ_c G[k,c] ẏ_b[c].
        let mut dy = vec![0.0; k_len * cols];
        f64::gemm(
            k_len,
            w,
            cols,
            &rows.da,
            (w, 1),
            &w_eff,
            (cols, 1),
            0.0,
            &mut dy,
        );
        let mut g_tau = 0.0;
        for k in 0..k_len {
            for c in 0..cols {
                let gk = g[k * cols + c];
                g_tau += gk * (dy[k * cols + c] + rows.db[k] * self.request.anchor_velocity[c]);
            }
        }
        Ok(vec![
            Tensor::from_f64(inputs[0].shape(), &g_w)?,
            Tensor::from_f64(inputs[1].shape(), &[g_tau])?,
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::check_gradients;
    use crate::numerics::{ParamStore, Tape};
    use crate::prodmp::{
        generate_trajectory, GoalMode, InitialCondition, ProDmpConfig, WeightVector,
    };
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64) -> (Arc<BasisTables>, Arc<ProDmpRequest>, Vec<f64>) {
        let tables = Arc::new(
            BasisTables::new(&ProDmpConfig {
                n_weights: 6,
                table_resolution: 400,
                ..ProDmpConfig::default()
            })
            .unwrap(),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n_nodes, dim) = (3, 2);
        let t_total = 19;
        let anchor_frame = 6;
        let times = (anchor_frame..=t_total)
            .map(|k| k as f64 / t_total as f64)
            .collect();
        let anchor = (0..n_nodes * dim)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let anchor_velocity = (0..n_nodes * dim)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let weights = (0..n_nodes * dim * 7)
            .map(|_| rng.random_range(-0.2..0.2))
            .collect();
        (
            tables,
            Arc::new(ProDmpRequest {
                times,
                anchor,
                anchor_velocity,
                n_nodes,
                dim,
            }),
            weights,
        )
    }

    #[test]
    fn matches_boundary_coefficient_generation() {
        for seed in 0..4 {
            let (tables, req, weights) = setup(seed);
            let op = ProDmpOp::new(tables.clone(), req.clone()).unwrap();
            for tau in [0.3, 0.9, 2.7] {
                let out = op.evaluate(&weights, tau).unwrap();
                let cols = req.n_nodes * req.dim;
                for v in 0..req.n_nodes {
                    let c = v * req.dim;
                    let ic = InitialCondition {
                        t_b: req.t_b(),
                        y_b: req.anchor[c..c + req.dim].to_vec(),
                        y_dot_b: req.anchor_velocity[c..c + req.dim].to_vec(),
                    };
                    let ws: Vec<WeightVector> = (0..req.dim)
                        .map(|i| {
                            let raw = &weights[(v * req.dim + i) * 7..(v * req.dim + i + 1) * 7];
                            let mut w: Vec<f64> = raw[..6]
                                .iter()
                                .map(|x| x * tables.config.weight_scale)
                                .collect();
                            w.push(raw[6]);
                            WeightVector::new(w, GoalMode::RelativeToStart)
                        })
                        .collect();
                    let gen = generate_trajectory(&tables, &req.times, &ic, &ws, tau).unwrap();
                    for (k, p) in gen.positions.iter().enumerate() {
                        for i in 0..req.dim {
                            let diff = (out[k * cols + c + i] - p[i]).abs();
                            assert!(diff < 1e-9, "seed {seed} tau {tau} k {k}: {diff:e}");
                        }
                    }
                }
                assert_eq!(&out[..cols], &req.anchor[..]);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..3 {
            let (tables, req, weights) = setup(seed);
            let op = ProDmpOp::new(tables, req.clone()).unwrap();
            let mut store = ParamStore::<f64>::new();
            store
                .insert(
                    "w",
                    Tensor::new(&[req.n_nodes, req.dim * 7], weights).unwrap(),
                )
                .unwrap();
            store
                .insert("tau", Tensor::scalar(0.4 + 0.8 * seed as f64))
                .unwrap();
            let target = Tensor::uniform(
                &[req.times.len(), req.n_nodes * req.dim],
                1.0,
                &mut ChaCha8Rng::seed_from_u64(9),
            );
            let report = check_gradients(&store, 1e-6, |tape: &mut Tape<f64>, store| {
                let w = tape.param(store, "w")?;
                let tau = tape.param(store, "tau")?;
                let y = tape.custom(&[w, tau], Box::new(op.clone()))?;
                let t = tape.constant(target.clone());
                let d = tape.sub(y, t)?;
                let sq = tape.square(d);
                Ok(tape.mean_all(sq))
            })
            .unwrap();
            for e in &report.entries {
                assert!(
                    e.relative_error() < 1e-6,
                    "{}: {:e}",
                    e.name,
                    e.relative_error()
                );
            }
        }
    }

    #[test]
    fn rejects_short_tables() {
        let (_, req, _) = setup(0);
        let short = Arc::new(assemble(&ProDmpConfig {
            n_weights: 6,
            table_resolution: 100,
            ..ProDmpConfig::default()
        }));
        assert!(matches!(ProDmpOp::new(short, req), Err(Error::Config(_))));
    }

    fn assemble(cfg: &ProDmpConfig) -> BasisTables {
        let times: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        crate::prodmp::assemble_basis_tables(cfg, &times).unwrap()
    }
}
