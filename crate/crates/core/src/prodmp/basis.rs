use super::ProDmpConfig;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

fn check_times(times: &[f64]) -> Result<()> {
    match times.first() {
        None => return Err(Error::contract("empty time grid")),
        Some(&t0) if t0 != 0.0 => {
            return Err(Error::contract(format!(
                "time grid must start at 0, starts at {t0}"
            )))
        }
        _ => {}
    }
    if let Some(w) = times.windows(2).find(|w| !(w[1] > w[0])) {
        return Err(Error::contract(format!(
            "time grid not strictly ascending at {} -> {}",
            w[0], w[1]
        )));
    }
    Ok(())
}

/// Phase `x(t) = exp(−α_x t)` on a canonical grid.
pub fn build_phase(cfg: &ProDmpConfig, times: &[f64]) -> Result<Vec<f64>> {
    check_times(times)?;
    Ok(times.iter().map(|&t| (-cfg.alpha_x * t).exp()).collect())
}

/// Normalized Gaussian bumps, uniformly centred in canonical time.
#[derive(Debug, Clone, PartialEq)]
pub struct ForcingBasis {
    pub centers: Vec<f64>,
    pub width: f64,
}

impl ForcingBasis {
    pub fn new(cfg: &ProDmpConfig) -> Result<Self> {
        if cfg.n_weights < 2 {
            return Err(Error::config(format!(
                "need at least 2 forcing basis functions, got {}",
                cfg.n_weights
            )));
        }
        Ok(ForcingBasis {
            centers: cfg.basis_centers(),
            width: cfg.basis_width(),
        })
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// `ln φ_i(s)` for every basis, via log-sum-exp so far tails stay finite.
    pub fn ln_row(&self, s: f64, out: &mut [f64]) {
        let inv = 1.0 / (2.0 * self.width * self.width);
        let mut top = f64::NEG_INFINITY;
        for (o, &c) in out.iter_mut().zip(&self.centers) {
            *o = -(s - c) * (s - c) * inv;
            top = top.max(*o);
        }
        let lse = top + out.iter().map(|&v| (v - top).exp()).sum::<f64>().ln();
        out.iter_mut().for_each(|v| *v -= lse);
    }

    pub fn row(&self, s: f64, out: &mut [f64]) {
        self.ln_row(s, out);
        out.iter_mut().for_each(|v| *v = v.exp());
    }
}

/// `φ` evaluated at the canonical times implied by `phase` values.
pub fn build_forcing_basis(cfg: &ProDmpConfig, phase: &[f64]) -> Result<Tensor<f64>> {
    let basis = ForcingBasis::new(cfg)?;
    let n = basis.len();
    let mut out = Tensor::zeros(&[phase.len(), n]);
    for (k, &x) in phase.iter().enumerate() {
        if !(x > 0.0 && x <= 1.0) {
            return Err(Error::contract(format!("phase value {x} outside (0, 1]")));
        }
        let s = -x.ln() / cfg.alpha_x;
        basis.row(s, out.row_mut(k));
    }
    Ok(out)
}

/// Particular-solution integrals on the output grid.
///
/// The decayed forms `p̃ = e^{−as}·p` and `q̃ = e^{−as}·q` (with `a = α/2`) are
/// what the basis assembly consumes; they stay bounded for any horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct PqTables {
    pub times: Vec<f64>,
    pub p1_decayed: Tensor<f64>,
    pub p2_decayed: Tensor<f64>,
    pub q1_decayed: Vec<f64>,
    pub q2_decayed: Vec<f64>,
    half_alpha: f64,
}

impl PqTables {
    fn grow(&self, t: &Tensor<f64>) -> Tensor<f64> {
        let mut out = t.clone();
        for (k, &s) in self.times.iter().enumerate() {
            let g = (self.half_alpha * s).exp();
            out.row_mut(k).iter_mut().for_each(|v| *v *= g);
        }
        out
    }

    /// `p1(t) = ∫₀ᵗ t′ e^{a t′} x(t′) φ(t′) dt′`.
    pub fn p1(&self) -> Tensor<f64> {
        self.grow(&self.p1_decayed)
    }

    /// `p2(t) = ∫₀ᵗ e^{a t′} x(t′) φ(t′) dt′`.
    pub fn p2(&self) -> Tensor<f64> {
        self.grow(&self.p2_decayed)
    }

    /// `q1(t) = (at − 1)e^{at} + 1`.
    pub fn q1(&self) -> Vec<f64> {
        let a = self.half_alpha;
        self.times
            .iter()
            .map(|&t| (a * t - 1.0) * (a * t).exp() + 1.0)
            .collect()
    }

    /// `q2(t) = a(e^{at} − 1)`.
    pub fn q2(&self) -> Vec<f64> {
        let a = self.half_alpha;
        self.times
            .iter()
            .map(|&t| a * ((a * t).exp() - 1.0))
            .collect()
    }
}

/// Cumulative trapezoid of the forcing integrals, `quad_factor` sub-steps per
/// output interval, carried in decayed form:
/// `p̃(s+h) = e^{−ah} p̃(s) + h/2 · (e^{−ah} F(s) + F(s+h))` with `F = [s·]x φ`.
pub fn compute_pq(cfg: &ProDmpConfig, times: &[f64]) -> Result<PqTables> {
    cfg.validate()?;
    check_times(times)?;
    let basis = ForcingBasis::new(cfg)?;
    let n = basis.len();
    let a = cfg.half_alpha();
    let mut p1 = Tensor::zeros(&[times.len(), n]);
    let mut p2 = Tensor::zeros(&[times.len(), n]);

    // Log of the phase-weighted basis at s; the integrands are exp of this (times s for p1).
    let ln_f = |s: f64, out: &mut [f64]| {
        basis.ln_row(s, out);
        out.iter_mut().for_each(|v| *v -= cfg.alpha_x * s);
    };
    let mut acc1 = vec![0.0; n];
    let mut acc2 = vec![0.0; n];
    let mut f_prev = vec![0.0; n];
    let mut f_next = vec![0.0; n];
    ln_f(0.0, &mut f_prev);
    let mut s_prev = 0.0;
    for k in 1..times.len() {
        let (t0, t1) = (times[k - 1], times[k]);
        let m = cfg.quad_factor;
        for j in 1..=m {
            let s = if j == m {
                t1
            } else {
                t0 + (t1 - t0) * j as f64 / m as f64
            };
            let h = s - s_prev;
            let decay = (-a * h).exp();
            ln_f(s, &mut f_next);
            for i in 0..n {
                let lo = (f_prev[i] - a * h).exp();
                let hi = f_next[i].exp();
                acc1[i] = decay * acc1[i] + 0.5 * h * (s_prev * lo + s * hi);
                acc2[i] = decay * acc2[i] + 0.5 * h * (lo + hi);
            }
            std::mem::swap(&mut f_prev, &mut f_next);
            s_prev = s;
        }
        p1.row_mut(k).copy_from_slice(&acc1);
        p2.row_mut(k).copy_from_slice(&acc2);
    }
    let q1_decayed = times
        .iter()
        .map(|&t| (a * t - 1.0) + (-a * t).exp())
        .collect();
    let q2_decayed = times.iter().map(|&t| a * (1.0 - (-a * t).exp())).collect();
    Ok(PqTables {
        times: times.to_vec(),
        p1_decayed: p1,
        p2_decayed: p2,
        q1_decayed,
        q2_decayed,
        half_alpha: a,
    })
}

/// Canonical (`τ = 1`) position, velocity and acceleration bases plus the
/// complementary functions `y1 = e^{−at}`, `y2 = t e^{−at}`.
///
/// Column `N_w` of each basis table is the goal basis.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisTables {
    pub config: ProDmpConfig,
    pub times: Vec<f64>,
    pub phi: Tensor<f64>,
    pub phi_dot: Tensor<f64>,
    pub phi_ddot: Tensor<f64>,
    pub y1: Vec<f64>,
    pub y2: Vec<f64>,
    pub y1_dot: Vec<f64>,
    pub y2_dot: Vec<f64>,
}

/// Interpolated basis rows at one canonical time.
#[derive(Debug, Clone)]
pub struct BasisRow {
    pub pos: Vec<f64>,
    /// Derivative of the position interpolant.
    pub pos_ds: Vec<f64>,
    pub vel: Vec<f64>,
    /// Derivative of the velocity interpolant.
    pub vel_ds: Vec<f64>,
}

pub fn assemble_basis_tables(cfg: &ProDmpConfig, times: &[f64]) -> Result<BasisTables> {
    let pq = compute_pq(cfg, times)?;
    let basis = ForcingBasis::new(cfg)?;
    let n = cfg.n_weights;
    let a = cfg.half_alpha();
    let a2 = a * a;
    let rows = times.len();
    let mut phi = Tensor::zeros(&[rows, n + 1]);
    let mut phi_dot = Tensor::zeros(&[rows, n + 1]);
    let mut phi_ddot = Tensor::zeros(&[rows, n + 1]);
    let (mut y1, mut y2, mut y1_dot, mut y2_dot) = (
        Vec::with_capacity(rows),
        Vec::with_capacity(rows),
        Vec::with_capacity(rows),
        Vec::with_capacity(rows),
    );
    let mut forcing = vec![0.0; n];
    for (k, &s) in times.iter().enumerate() {
        let e = (-a * s).exp();
        y1.push(e);
        y2.push(s * e);
        y1_dot.push(-a * e);
        y2_dot.push((1.0 - a * s) * e);
        // With y1 = e^{−as}, y2 = s e^{−as}: y2 p2 − y1 p1 = s p̃2 − p̃1 and
        // ẏ2 p2 − ẏ1 p1 = (1 − as) p̃2 + a p̃1 (the ṗ terms cancel).
        basis.row(s, &mut forcing);
        let x = (-cfg.alpha_x * s).exp();
        let (p1, p2) = (pq.p1_decayed.row(k), pq.p2_decayed.row(k));
        for i in 0..n {
            let pos = s * p2[i] - p1[i];
            let vel = (1.0 - a * s) * p2[i] + a * p1[i];
            phi.set(k, i, pos);
            phi_dot.set(k, i, vel);
            phi_ddot.set(k, i, x * forcing[i] - cfg.alpha * vel - a2 * pos);
        }
        let (q1, q2) = (pq.q1_decayed[k], pq.q2_decayed[k]);
        let pos = s * q2 - q1;
        let vel = (1.0 - a * s) * q2 + a * q1;
        phi.set(k, n, pos);
        phi_dot.set(k, n, vel);
        phi_ddot.set(k, n, a2 * (1.0 - pos) - cfg.alpha * vel);
    }
    Ok(BasisTables {
        config: cfg.clone(),
        times: times.to_vec(),
        phi,
        phi_dot,
        phi_ddot,
        y1,
        y2,
        y1_dot,
        y2_dot,
    })
}

impl BasisTables {
    /// Tables on the configuration's default canonical grid.
    pub fn new(cfg: &ProDmpConfig) -> Result<Self> {
        assemble_basis_tables(cfg, &cfg.table_times())
    }

    pub fn n_weights(&self) -> usize {
        self.config.n_weights
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("non-empty grid")
    }

    /// Index of `s` on the grid if it is a grid point.
    pub fn grid_index(&self, s: f64) -> Option<usize> {
        let i = self.times.partition_point(|&t| t < s);
        (i < self.times.len() && self.times[i] == s).then_some(i)
    }

    /// Cubic Hermite interpolation: positions with velocity slopes, velocities
    /// with acceleration slopes.
    pub fn eval(&self, s: f64) -> Result<BasisRow> {
        let last = self.times.len() - 1;
        if !(s >= 0.0 && s <= self.times[last] * (1.0 + 1e-12)) {
            return Err(Error::config(format!(
                "canonical time {s} outside basis tables [0, {}]",
                self.times[last]
            )));
        }
        let k = self.times.partition_point(|&t| t <= s).clamp(1, last) - 1;
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let h = t1 - t0;
        let u = (s - t0) / h;
        let (u2, u3) = (u * u, u * u * u);
        let w = [
            2.0 * u3 - 3.0 * u2 + 1.0,
            (u3 - 2.0 * u2 + u) * h,
            -2.0 * u3 + 3.0 * u2,
            (u3 - u2) * h,
        ];
        let dw = [
            (6.0 * u2 - 6.0 * u) / h,
            3.0 * u2 - 4.0 * u + 1.0,
            (-6.0 * u2 + 6.0 * u) / h,
            3.0 * u2 - 2.0 * u,
        ];
        let herm = |f: &Tensor<f64>, df: &Tensor<f64>, c: &[f64; 4]| -> Vec<f64> {
            let (f0, f1, d0, d1) = (f.row(k), f.row(k + 1), df.row(k), df.row(k + 1));
            (0..f0.len())
                .map(|i| c[0] * f0[i] + c[1] * d0[i] + c[2] * f1[i] + c[3] * d1[i])
                .collect()
        };
        Ok(BasisRow {
            pos: herm(&self.phi, &self.phi_dot, &w),
            pos_ds: herm(&self.phi, &self.phi_dot, &dw),
            vel: herm(&self.phi_dot, &self.phi_ddot, &w),
            vel_ds: herm(&self.phi_dot, &self.phi_ddot, &dw),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ProDmpConfig {
        ProDmpConfig {
            table_resolution: 200,
            ..ProDmpConfig::default()
        }
    }

    #[test]
    fn phase_values() {
        let cfg = ProDmpConfig::default();
        let times: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let x = build_phase(&cfg, &times).unwrap();
        assert_eq!(x[0], 1.0);
        assert!(x.windows(2).all(|w| w[1] < w[0]));
        assert!((x[10] - (-3.0f64).exp()).abs() < 1e-15);
        assert!((x[10] - 0.0498).abs() < 1e-4);
        assert!(matches!(
            build_phase(&cfg, &[0.0, 0.5, 0.4]),
            Err(Error::Contract(_))
        ));
        assert!(build_phase(&cfg, &[0.1, 0.2]).is_err());
    }

    #[test]
    fn forcing_rows_normalized() {
        let cfg = ProDmpConfig::default();
        let times: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        let phi = build_forcing_basis(&cfg, &build_phase(&cfg, &times).unwrap()).unwrap();
        for k in 0..times.len() {
            let row = phi.row(k);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| (0.0..1.0).contains(&v)));
        }
    }

    #[test]
    fn forcing_entries_strictly_inside_unit_interval() {
        // Few wide bases: no entry underflows to 0.
        let cfg = ProDmpConfig::with_weights(5);
        let times: Vec<f64> = (0..=50).map(|i| i as f64 / 50.0).collect();
        let phi = build_forcing_basis(&cfg, &build_phase(&cfg, &times).unwrap()).unwrap();
        assert!(phi.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn row_at_center_peaks_at_that_basis() {
        let cfg = ProDmpConfig::default();
        let basis = ForcingBasis::new(&cfg).unwrap();
        let mut row = vec![0.0; basis.len()];
        for (i, &c) in basis.centers.iter().enumerate() {
            basis.row(c, &mut row);
            let arg = (0..row.len())
                .max_by(|&a, &b| row[a].total_cmp(&row[b]))
                .unwrap();
            assert_eq!(arg, i);
        }
        assert!(matches!(
            ForcingBasis::new(&ProDmpConfig::with_weights(1)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn pq_vanish_at_zero_and_q2_closed_form() {
        let cfg = small_cfg();
        let times: Vec<f64> = (0..=20).map(|i| i as f64 * 0.01).collect();
        let pq = compute_pq(&cfg, &times).unwrap();
        let (p1, p2, q1, q2) = (pq.p1(), pq.p2(), pq.q1(), pq.q2());
        assert!(p1.row(0).iter().chain(p2.row(0)).all(|&v| v == 0.0));
        assert_eq!((q1[0], q2[0]), (0.0, 0.0));
        let direct = 12.5 * ((12.5f64 * 0.1).exp() - 1.0);
        assert!((q2[10] - direct).abs() < 1e-12);
    }

    #[test]
    fn quadrature_refinement_converges() {
        let coarse = small_cfg();
        let fine = ProDmpConfig {
            quad_factor: 2 * coarse.quad_factor,
            ..coarse.clone()
        };
        let times: Vec<f64> = (0..=1000).map(|i| i as f64 * 1e-3).collect();
        let a = compute_pq(&coarse, &times).unwrap();
        let b = compute_pq(&fine, &times).unwrap();
        // Compared in decayed form, the scale at which they enter the basis.
        let (d1, d2) = (
            a.p1_decayed.max_abs_diff(&b.p1_decayed),
            a.p2_decayed.max_abs_diff(&b.p2_decayed),
        );
        assert!(d1 < 1e-6);
        assert!(d2 < 1e-6);
    }

    #[test]
    fn first_rows_vanish_and_goal_converges() {
        let tables = BasisTables::new(&small_cfg()).unwrap();
        assert!(tables
            .phi
            .row(0)
            .iter()
            .chain(tables.phi_dot.row(0))
            .all(|&v| v == 0.0));
        assert_eq!((tables.y1[0], tables.y2[0]), (1.0, 0.0));
        assert!(
            tables.phi.is_finite() && tables.phi_dot.is_finite() && tables.phi_ddot.is_finite()
        );
        // t = 1 at τ = 0.3 is canonical s = 1/0.3.
        let row = tables.eval(1.0 / 0.3).unwrap();
        assert!(row.pos[30] > 0.95);
    }

    #[test]
    fn builds_are_bitwise_identical() {
        let cfg = small_cfg();
        assert_eq!(
            BasisTables::new(&cfg).unwrap(),
            BasisTables::new(&cfg).unwrap()
        );
    }

    #[test]
    fn goal_column_matches_closed_form() {
        let tables = BasisTables::new(&small_cfg()).unwrap();
        let a = 12.5;
        for (k, &s) in tables.times.iter().enumerate().step_by(37) {
            let exact = 1.0 - (-a * s).exp() * (1.0 + a * s);
            assert!((tables.phi.get(k, 30) - exact).abs() < 1e-12);
            assert!((tables.phi_dot.get(k, 30) - a * a * s * (-a * s).exp()).abs() < 1e-11);
        }
    }

    #[test]
    fn interpolation_hits_grid_and_is_smooth() {
        let tables = BasisTables::new(&small_cfg()).unwrap();
        let k = 57;
        let row = tables.eval(tables.times[k]).unwrap();
        for i in 0..31 {
            assert!((row.pos[i] - tables.phi.get(k, i)).abs() < 1e-15);
            assert!((row.vel[i] - tables.phi_dot.get(k, i)).abs() < 1e-12);
        }
        let s = 0.3137;
        let h = 1e-6;
        let (up, down, mid) = (
            tables.eval(s + h).unwrap(),
            tables.eval(s - h).unwrap(),
            tables.eval(s).unwrap(),
        );
        for i in 0..31 {
            let fd = (up.pos[i] - down.pos[i]) / (2.0 * h);
            assert!((fd - mid.pos_ds[i]).abs() < 1e-7);
            // Derivative of the interpolant tracks the velocity table.
            assert!((mid.pos_ds[i] - mid.vel[i]).abs() < 1e-4);
        }
        assert!(matches!(tables.eval(10.0), Err(Error::Config(_))));
    }
}
