use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-axis affine map of a bounding box onto `[−1, 1]^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationMap {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl NormalizationMap {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::config(
                "normalization bounds need matching non-empty extents",
            ));
        }
        if let Some(axis) = (0..lo.len()).find(|&i| !(hi[i] - lo[i] > 0.0)) {
            return Err(Error::config(format!(
                "degenerate normalization axis {axis}: [{}, {}]",
                lo[axis], hi[axis]
            )));
        }
        Ok(NormalizationMap { lo, hi })
    }

    pub fn identity(dim: usize) -> Self {
        NormalizationMap {
            lo: vec![-1.0; dim],
            hi: vec![1.0; dim],
        }
    }

    /// Bounding box of flat `[N·d]` position slices.
    pub fn fit<'a>(dim: usize, positions: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for p in positions {
            for (i, &v) in p.iter().enumerate() {
                let a = i % dim;
                lo[a] = lo[a].min(v);
                hi[a] = hi[a].max(v);
            }
        }
        Self::new(lo, hi)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// Multiplier from world to normalized units along `axis`.
    pub fn scale(&self, axis: usize) -> f64 {
        2.0 / (self.hi[axis] - self.lo[axis])
    }

    pub fn center(&self, axis: usize) -> f64 {
        0.5 * (self.lo[axis] + self.hi[axis])
    }

    pub fn normalize(&self, positions: &mut [f64]) {
        let d = self.dim();
        for (i, v) in positions.iter_mut().enumerate() {
            let a = i % d;
            *v = (*v - self.center(a)) * self.scale(a);
        }
    }

    pub fn denormalize(&self, positions: &mut [f64]) {
        let d = self.dim();
        for (i, v) in positions.iter_mut().enumerate() {
            let a = i % d;
            *v = *v / self.scale(a) + self.center(a);
        }
    }
}

/// Applies the map to every flat position slice, mesh and collider alike.
pub fn normalize_world(map: &NormalizationMap, frames: &mut [Vec<f64>]) {
    for f in frames {
        map.normalize(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_box_is_identity() {
        let map = NormalizationMap::identity(2);
        let mut x = vec![0.3, -0.7, 1.0, -1.0];
        let orig = x.clone();
        map.normalize(&mut x);
        assert_eq!(x, orig);
    }

    #[test]
    fn midpoint_maps_to_origin() {
        let map = NormalizationMap::new(vec![0.0, 0.0], vec![2.0, 4.0]).unwrap();
        let mut x = vec![1.0, 2.0];
        map.normalize(&mut x);
        assert_eq!(x, vec![0.0, 0.0]);
    }

    #[test]
    fn round_trip() {
        let map = NormalizationMap::new(vec![-0.3, 0.1, 2.0], vec![1.7, 0.4, 9.0]).unwrap();
        let orig: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin() * 5.0).collect();
        let mut x = orig.clone();
        map.normalize(&mut x);
        map.denormalize(&mut x);
        for (a, b) in x.iter().zip(&orig) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn degenerate_axis_rejected() {
        let frames = [vec![0.0, 1.0, 2.0, 1.0]];
        let r = NormalizationMap::fit(2, frames.iter().map(Vec::as_slice));
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
