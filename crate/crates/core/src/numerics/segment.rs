//! Per-segment reductions over the rows of a matrix.
//!
//! Rows are visited in ascending row order, so results are bit-reproducible
//! for a fixed row ordering.

use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduce {
    Sum,
    Mean,
    Max,
}

/// Output of a segment reduction plus what backward needs.
#[derive(Debug, Clone)]
pub struct SegmentOutput<T> {
    pub values: Tensor<T>,
    /// Number of rows per segment.
    pub counts: Vec<usize>,
    /// For `Max`: contributing row per output entry, `usize::MAX` for empty segments.
    pub argmax: Option<Vec<usize>>,
}

/// Reduces rows of `values` (E×D) into `n_segments` rows.
///
/// Empty segments produce zeros for every mode, including `Max`.
pub fn segment_reduce<T: Scalar>(
    values: &Tensor<T>,
    segment_of: &[usize],
    n_segments: usize,
    mode: Reduce,
) -> Result<SegmentOutput<T>> {
    let (e, d) = values.dims2();
    if segment_of.len() != e {
        return Err(Error::Dimension {
            op: "segment_reduce",
            lhs: values.shape().to_vec(),
            rhs: vec![segment_of.len()],
        });
    }
    if let Some(&bad) = segment_of.iter().find(|&&s| s >= n_segments) {
        return Err(Error::Index {
            op: "segment_reduce",
            index: bad,
            limit: n_segments,
        });
    }

    let mut counts = vec![0usize; n_segments];
    for &s in segment_of {
        counts[s] += 1;
    }
    let src = values.data();
    let mut out = vec![T::zero(); n_segments * d];

    let argmax = match mode {
        Reduce::Sum | Reduce::Mean => {
            for (row, &s) in segment_of.iter().enumerate() {
                let dst = &mut out[s * d..(s + 1) * d];
                for (o, &v) in dst.iter_mut().zip(&src[row * d..(row + 1) * d]) {
                    *o += v;
                }
            }
            if mode == Reduce::Mean {
                for (s, &c) in counts.iter().enumerate() {
                    if c > 0 {
                        let inv = T::from_f64(c as f64);
                        out[s * d..(s + 1) * d].iter_mut().for_each(|v| *v /= inv);
                    }
                }
            }
            None
        }
        Reduce::Max => {
            let mut arg = vec![usize::MAX; n_segments * d];
            for (row, &s) in segment_of.iter().enumerate() {
                for j in 0..d {
                    let v = src[row * d + j];
                    let slot = s * d + j;
                    if arg[slot] == usize::MAX || v > out[slot] {
                        out[slot] = v;
                        arg[slot] = row;
                    }
                }
            }
            Some(arg)
        }
    };

    Ok(SegmentOutput {
        values: Tensor::new(&[n_segments, d], out)?,
        counts,
        argmax,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn col(v: &[f64]) -> Tensor<f64> {
        Tensor::new(&[v.len(), 1], v.to_vec()).unwrap()
    }

    #[test]
    fn sum_and_mean_small() {
        let v = col(&[1.0, 2.0, 3.0]);
        let s = segment_reduce(&v, &[0, 0, 1], 2, Reduce::Sum).unwrap();
        assert_eq!(s.values.data(), &[3.0, 3.0]);
        let m = segment_reduce(&v, &[0, 0, 1], 2, Reduce::Mean).unwrap();
        assert_eq!(m.values.data(), &[1.5, 3.0]);
    }

    #[test]
    fn empty_segments_are_zero() {
        let v = col(&[-4.0, -2.0]);
        for mode in [Reduce::Sum, Reduce::Mean, Reduce::Max] {
            let out = segment_reduce(&v, &[0, 0], 3, mode).unwrap();
            assert_eq!(out.values.data()[1], 0.0);
            assert_eq!(out.values.data()[2], 0.0);
        }
        let max = segment_reduce(&v, &[0, 0], 3, Reduce::Max).unwrap();
        assert_eq!(max.values.data()[0], -2.0);
    }

    #[test]
    fn out_of_range_index() {
        let v = col(&[1.0]);
        let err = segment_reduce(&v, &[4], 2, Reduce::Sum).unwrap_err();
        assert!(matches!(
            err,
            Error::Index {
                index: 4,
                limit: 2,
                ..
            }
        ));
    }

    #[test]
    fn random_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let v = Tensor::<f64>::uniform(&[100, 4], 1.0, &mut rng);
        let seg: Vec<usize> = (0..100).map(|_| rng.random_range(0..10)).collect();
        for mode in [Reduce::Sum, Reduce::Mean, Reduce::Max] {
            let got = segment_reduce(&v, &seg, 10, mode).unwrap().values;
            for s in 0..10 {
                for j in 0..4 {
                    let members: Vec<f64> = (0..100)
                        .filter(|&r| seg[r] == s)
                        .map(|r| v.get(r, j))
                        .collect();
                    let expected = match mode {
                        Reduce::Sum => members.iter().fold(0.0, |a, b| a + b),
                        Reduce::Mean => {
                            members.iter().fold(0.0, |a, b| a + b) / members.len() as f64
                        }
                        Reduce::Max => members.iter().copied().fold(f64::MIN, f64::max),
                    };
                    assert_eq!(got.get(s, j), expected);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn sum_equals_indicator_matmul(
            rows in prop::collection::vec((0usize..5, prop::collection::vec(-4i32..4, 3)), 1..30)
        ) {
            // small integers keep every partial sum exact
            let e = rows.len();
            let seg: Vec<usize> = rows.iter().map(|r| r.0).collect();
            let data: Vec<f64> = rows.iter().flat_map(|r| r.1.iter().map(|&x| x as f64)).collect();
            let v = Tensor::new(&[e, 3], data).unwrap();
            let mut ind = Tensor::<f64>::zeros(&[5, e]);
            for (r, &s) in seg.iter().enumerate() {
                ind.set(s, r, 1.0);
            }
            let via_mm = ind.matmul(&v).unwrap();
            let via_seg = segment_reduce(&v, &seg, 5, Reduce::Sum).unwrap().values;
            prop_assert_eq!(via_mm.data(), via_seg.data());
        }

        #[test]
        fn reductions_are_permutation_invariant(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let e = rng.random_range(1..40);
            // dyadic values: sums are exact so reordering cannot change bits
            let data: Vec<f64> = (0..e * 2).map(|_| rng.random_range(-64i32..64) as f64 / 8.0).collect();
            let v = Tensor::new(&[e, 2], data).unwrap();
            let seg: Vec<usize> = (0..e).map(|_| rng.random_range(0..6)).collect();
            let mut perm: Vec<usize> = (0..e).collect();
            use rand::seq::SliceRandom;
            perm.shuffle(&mut rng);
            let pv = v.gather_rows(&perm).unwrap();
            let pseg: Vec<usize> = perm.iter().map(|&i| seg[i]).collect();
            for mode in [Reduce::Sum, Reduce::Mean, Reduce::Max] {
                let a = segment_reduce(&v, &seg, 6, mode).unwrap().values;
                let b = segment_reduce(&pv, &pseg, 6, mode).unwrap().values;
                prop_assert_eq!(a.data(), b.data());
            }
        }
    }
}
