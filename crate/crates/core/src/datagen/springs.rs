use crate::error::{Error, Result};

/// Speed above which a run counts as blown up.
pub(crate) const SPEED_BOUND: f64 = 100.0;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Spring {
    pub a: usize,
    pub b: usize,
    pub rest: f64,
    pub k: f64,
}

/// Unit-mass particles joined by linear springs, integrated with
/// semi-implicit Euler and linear velocity damping.
#[derive(Debug, Clone)]
pub(crate) struct SpringSystem {
    pub dim: usize,
    pub springs: Vec<Spring>,
    pub fixed: Vec<bool>,
    pub damping: f64,
    /// Constant external force, `[N·d]`.
    pub external: Vec<f64>,
}

impl SpringSystem {
    pub fn new(dim: usize, rest_positions: &[f64], fixed: Vec<bool>, damping: f64) -> Self {
        SpringSystem {
            dim,
            springs: Vec::new(),
            fixed,
            damping,
            external: vec![0.0; rest_positions.len()],
        }
    }

    /// Adds a spring whose rest length is the current distance between `a` and `b`.
    pub fn connect(&mut self, positions: &[f64], a: usize, b: usize, k: f64) {
        let d = self.dim;
        let rest = (0..d)
            .map(|i| (positions[b * d + i] - positions[a * d + i]).powi(2))
            .sum::<f64>()
            .sqrt();
        self.springs.push(Spring { a, b, rest, k });
    }

    fn forces(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        out.copy_from_slice(&self.external);
        let mut delta = [0.0; 3];
        for s in &self.springs {
            let mut len2 = 0.0;
            for i in 0..d {
                delta[i] = x[s.b * d + i] - x[s.a * d + i];
                len2 += delta[i] * delta[i];
            }
            let len = len2.sqrt();
            if len == 0.0 {
                continue;
            }
            let f = s.k * (len - s.rest) / len;
            for i in 0..d {
                out[s.a * d + i] += f * delta[i];
                out[s.b * d + i] -= f * delta[i];
            }
        }
    }

    /// One substep; fixed particles keep position and zero velocity.
    pub fn step(&self, x: &mut [f64], v: &mut [f64], force_buf: &mut [f64], dt: f64) {
        let d = self.dim;
        self.forces(x, force_buf);
        for (n, &fixed) in self.fixed.iter().enumerate() {
            if fixed {
                continue;
            }
            for i in n * d..(n + 1) * d {
                v[i] += dt * (force_buf[i] - self.damping * v[i]);
                x[i] += dt * v[i];
            }
        }
    }
}

pub(crate) fn check_speed(v: &[f64], context: &str) -> Result<()> {
    match v
        .iter()
        .position(|s| !s.is_finite() || s.abs() > SPEED_BOUND)
    {
        None => Ok(()),
        Some(i) => Err(Error::Unstable(format!(
            "{context}: velocity component {i} reached {}",
            v[i]
        ))),
    }
}

/// Runs `attempt(substeps)`, retrying once at twice the substep count on instability.
pub(crate) fn with_retry<T>(substeps: usize, attempt: impl Fn(usize) -> Result<T>) -> Result<T> {
    match attempt(substeps) {
        Err(Error::Unstable(first)) => {
            log::warn!("{first}; retrying with {} substeps", substeps * 2);
            attempt(substeps * 2).map_err(|e| match e {
                Error::Unstable(second) => {
                    Error::Unstable(format!("{second} (after retry; first attempt: {first})"))
                }
                other => other,
            })
        }
        other => other,
    }
}

/// Rounds to the nearest 32-bit float so stored datasets reload bit-exactly.
pub(crate) fn round_f32(values: &mut [f64]) {
    for v in values {
        *v = *v as f32 as f64;
    }
}

/// Row-major `n×n` grid of quads, each split into two triangles.
pub(crate) fn grid_cells(n: usize) -> Vec<Vec<u32>> {
    let id = |i: usize, j: usize| (j * n + i) as u32;
    let mut cells = Vec::new();
    for j in 0..n - 1 {
        for i in 0..n - 1 {
            cells.push(vec![id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            cells.push(vec![id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    cells
}

/// Structural and shear springs of an `n×n` grid.
pub(crate) fn grid_springs(sys: &mut SpringSystem, positions: &[f64], n: usize, k: f64) {
    let id = |i: usize, j: usize| j * n + i;
    for j in 0..n {
        for i in 0..n {
            if i + 1 < n {
                sys.connect(positions, id(i, j), id(i + 1, j), k);
            }
            if j + 1 < n {
                sys.connect(positions, id(i, j), id(i, j + 1), k);
            }
            if i + 1 < n && j + 1 < n {
                sys.connect(positions, id(i, j), id(i + 1, j + 1), k);
                sys.connect(positions, id(i + 1, j), id(i, j + 1), k);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stretched_spring_oscillates_about_rest() {
        let x0 = vec![0.0, 0.0, 1.0, 0.0];
        let mut sys = SpringSystem::new(2, &x0, vec![true, false], 0.0);
        sys.connect(&x0, 0, 1, 10.0);
        let mut x = vec![0.0, 0.0, 1.1, 0.0];
        let mut v = vec![0.0; 4];
        let mut buf = vec![0.0; 4];
        let mut lo = f64::INFINITY;
        for _ in 0..5000 {
            sys.step(&mut x, &mut v, &mut buf, 1e-3);
            lo = lo.min(x[2]);
        }
        assert!((lo - 0.9).abs() < 5e-3, "{lo}");
        assert_eq!(&x[..2], &[0.0, 0.0]);
    }

    #[test]
    fn grid_counts() {
        assert_eq!(grid_cells(3).len(), 8);
        let x: Vec<f64> = (0..9)
            .flat_map(|k| [(k % 3) as f64, (k / 3) as f64])
            .collect();
        let mut sys = SpringSystem::new(2, &x, vec![false; 9], 0.0);
        grid_springs(&mut sys, &x, 3, 1.0);
        assert_eq!(sys.springs.len(), 12 + 8);
    }
}
