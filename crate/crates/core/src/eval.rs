//! Rollout metrics, bootstrap intervals, evaluation reports and runtime benchmarks.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::m3gn::M3gn;
use crate::meshgraph::{Episode, NodeKind};
use crate::model::Model;
use crate::numerics::{ParamStore, Scalar};
use crate::trajectory::{ContextSet, ModelCalls, Prediction};

/// Context sizes swept by default.
pub const DEFAULT_CONTEXT_SIZES: [usize; 4] = [2, 5, 10, 15];
pub const BOOTSTRAP_RESAMPLES: usize = 1000;
pub const BOOTSTRAP_LEVEL: f64 = 0.95;

fn mesh_nodes(ep: &Episode) -> Vec<usize> {
    (0..ep.n_nodes())
        .filter(|&v| ep.kinds[v] == NodeKind::Mesh)
        .collect()
}

fn check_aligned(pred: &Prediction, ep: &Episode) -> Result<()> {
    let expected = (ep.n_frames - pred.anchor) * ep.frame_len();
    if pred.n_nodes != ep.n_nodes() || pred.dim != ep.dim || pred.positions.len() != expected {
        return Err(Error::contract(format!(
            "prediction of {} values over {} nodes does not cover episode {} after anchor {}",
            pred.positions.len(),
            pred.n_nodes,
            ep.id,
            pred.anchor
        )));
    }
    Ok(())
}

/// Squared error per frame `t ∈ (anchor, T−1]`, averaged over mesh nodes and
/// dims; `None` when the rollout diverged.
pub fn trajectory_per_timestep(pred: &Prediction, ep: &Episode) -> Result<Option<Vec<f64>>> {
    check_aligned(pred, ep)?;
    if pred.diverged {
        return Ok(None);
    }
    let (d, mesh) = (ep.dim, mesh_nodes(ep));
    let denom = (mesh.len() * d) as f64;
    let out = (pred.anchor + 1..ep.n_frames)
        .map(|t| {
            let (p, g) = (pred.frame(t), ep.frame(t));
            let sum: f64 = mesh
                .iter()
                .flat_map(|&v| (v * d..(v + 1) * d).map(move |i| (p[i] - g[i]).powi(2)))
                .sum();
            sum / denom
        })
        .collect();
    Ok(Some(out))
}

/// Full-rollout MSE of one trajectory, `None` when it diverged.
pub fn trajectory_mse(pred: &Prediction, ep: &Episode) -> Result<Option<f64>> {
    Ok(trajectory_per_timestep(pred, ep)?.map(|s| s.iter().sum::<f64>() / s.len() as f64))
}

/// Per-trajectory MSEs over the set plus their mean; diverged rollouts are
/// excluded from the mean and counted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutMse {
    pub mean: f64,
    pub per_trajectory: Vec<f64>,
    pub n_diverged: usize,
}

pub fn full_rollout_mse(preds: &[Prediction], episodes: &[Episode]) -> Result<RolloutMse> {
    if preds.len() != episodes.len() {
        return Err(Error::contract(format!(
            "{} predictions for {} episodes",
            preds.len(),
            episodes.len()
        )));
    }
    let mut per_trajectory = Vec::new();
    let mut n_diverged = 0;
    for (p, ep) in preds.iter().zip(episodes) {
        match trajectory_mse(p, ep)? {
            Some(m) if m.is_finite() => per_trajectory.push(m),
            _ => n_diverged += 1,
        }
    }
    let mean = if per_trajectory.is_empty() {
        f64::NAN
    } else {
        per_trajectory.iter().sum::<f64>() / per_trajectory.len() as f64
    };
    Ok(RolloutMse {
        mean,
        per_trajectory,
        n_diverged,
    })
}

/// Mean over non-diverged trajectories of the per-frame MSE; all trajectories
/// must share the anchor and length.
pub fn per_timestep_mse(preds: &[Prediction], episodes: &[Episode]) -> Result<Vec<f64>> {
    let mut acc: Option<Vec<f64>> = None;
    let mut count = 0usize;
    for (p, ep) in preds.iter().zip(episodes) {
        let Some(s) = trajectory_per_timestep(p, ep)? else {
            continue;
        };
        match acc.as_mut() {
            None => acc = Some(s),
            Some(a) if a.len() == s.len() => a.iter_mut().zip(&s).for_each(|(x, y)| *x += y),
            Some(a) => {
                return Err(Error::contract(format!(
                    "horizon {} differs from {}",
                    s.len(),
                    a.len()
                )));
            }
        }
        count += 1;
    }
    Ok(acc
        .map(|a| a.into_iter().map(|x| x / count as f64).collect())
        .unwrap_or_default())
}

/// Percentile bootstrap interval of the mean.
///
/// Each resample draws `n` indices uniformly with replacement; the bounds are
/// the sorted resample means at ranks `round(q·(B−1))` for `q = (1 ∓ level)/2`.
pub fn bootstrap_ci(
    values: &[f64],
    n_resamples: usize,
    level: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::contract(format!(
            "bootstrap needs ≥ 2 values, got {}",
            values.len()
        )));
    }
    if n_resamples == 0 || !(level > 0.0 && level < 1.0) {
        return Err(Error::config(format!(
            "bootstrap with {n_resamples} resamples at level {level}"
        )));
    }
    let n = values.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..n_resamples)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let rank = |q: f64| means[(q * (n_resamples - 1) as f64).round() as usize];
    Ok((rank((1.0 - level) / 2.0), rank((1.0 + level) / 2.0)))
}

/// Predictions for every episode, evaluated on `threads` workers.
pub fn predict_all<T: Scalar>(
    model: &Model,
    store: &ParamStore<T>,
    episodes: &[Episode],
    n_context: usize,
    threads: usize,
) -> Result<Vec<(Prediction, f64)>> {
    let run = |ep: &Episode| -> Result<(Prediction, f64)> {
        let ctx = ContextSet::new(ep, n_context)?;
        let start = Instant::now();
        let p = model.predict(store, &ctx)?;
        Ok((p, start.elapsed().as_secs_f64()))
    };
    let threads = threads.max(1).min(episodes.len().max(1));
    if threads == 1 {
        return episodes.iter().map(run).collect();
    }
    let chunk = episodes.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = episodes
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(run).collect::<Result<Vec<_>>>()))
            .collect();
        let mut out = Vec::with_capacity(episodes.len());
        for h in handles {
            out.extend(h.join().expect("evaluation worker panicked")?);
        }
        Ok(out)
    })
}

/// Metrics for one context size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextResult {
    pub context_size: usize,
    pub n_trajectories: usize,
    pub n_diverged: usize,
    pub mse: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub per_trajectory: Vec<f64>,
    pub per_timestep: Vec<f64>,
    /// Network evaluations per trajectory.
    pub calls: ModelCalls,
    pub median_rollout_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub split: String,
    pub seed: u64,
    pub results: Vec<ContextResult>,
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    }
}

/// Evaluates `model` over `episodes` at every context size.
pub fn evaluate<T: Scalar>(
    model: &Model,
    store: &ParamStore<T>,
    episodes: &[Episode],
    context_sizes: &[usize],
    split: &str,
    seed: u64,
    threads: usize,
) -> Result<EvalReport> {
    let mut results = Vec::with_capacity(context_sizes.len());
    for &c in context_sizes {
        let out = predict_all(model, store, episodes, c, threads)?;
        let (preds, mut times): (Vec<Prediction>, Vec<f64>) = out.into_iter().unzip();
        let mse = full_rollout_mse(&preds, episodes)?;
        let (ci_low, ci_high) = if mse.per_trajectory.len() >= 2 {
            bootstrap_ci(
                &mse.per_trajectory,
                BOOTSTRAP_RESAMPLES,
                BOOTSTRAP_LEVEL,
                seed,
            )?
        } else {
            (mse.mean, mse.mean)
        };
        results.push(ContextResult {
            context_size: c,
            n_trajectories: episodes.len(),
            n_diverged: mse.n_diverged,
            mse: mse.mean,
            ci_low,
            ci_high,
            per_timestep: per_timestep_mse(&preds, episodes)?,
            per_trajectory: mse.per_trajectory,
            calls: preds.first().map(|p| p.calls).unwrap_or_default(),
            median_rollout_seconds: median(&mut times),
        });
    }
    Ok(EvalReport {
        model: model.label().to_string(),
        split: split.to_string(),
        seed,
        results,
    })
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    model: &'a str,
    split: &'a str,
    seed: u64,
    context_size: usize,
    n_trajectories: usize,
    n_diverged: usize,
    mse: f64,
    ci_low: f64,
    ci_high: f64,
    context_calls: usize,
    simulator_calls: usize,
    median_rollout_seconds: f64,
}

#[derive(Serialize)]
struct TimestepRow<'a> {
    model: &'a str,
    context_size: usize,
    step: usize,
    mse: f64,
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

pub(crate) fn write_csv<R: Serialize>(
    path: &Path,
    rows: impl IntoIterator<Item = R>,
) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

impl EvalReport {
    /// Writes `<stem>.json`, `<stem>.csv` and `<stem>_timesteps.csv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        write_json(&dir.join(format!("{stem}.json")), self)?;
        write_csv(
            &dir.join(format!("{stem}.csv")),
            self.results.iter().map(|r| SummaryRow {
                model: &self.model,
                split: &self.split,
                seed: self.seed,
                context_size: r.context_size,
                n_trajectories: r.n_trajectories,
                n_diverged: r.n_diverged,
                mse: r.mse,
                ci_low: r.ci_low,
                ci_high: r.ci_high,
                context_calls: r.calls.context,
                simulator_calls: r.calls.simulator,
                median_rollout_seconds: r.median_rollout_seconds,
            }),
        )?;
        write_csv(
            &dir.join(format!("{stem}_timesteps.csv")),
            self.results.iter().flat_map(|r| {
                r.per_timestep
                    .iter()
                    .enumerate()
                    .map(|(k, &mse)| TimestepRow {
                        model: &self.model,
                        context_size: r.context_size,
                        step: k + 1,
                        mse,
                    })
            }),
        )
    }
}

/// Writes `z_v` rows of every episode at context size `n_context` as CSV:
/// `trajectory, kappa, node, kind, z0 … z{d−1}`.
pub fn dump_latents<T: Scalar>(
    model: &M3gn,
    store: &ParamStore<T>,
    episodes: &[Episode],
    n_context: usize,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let d_z = model.config.latent_task;
    let mut header = vec![
        "trajectory".to_string(),
        "kappa".into(),
        "node".into(),
        "kind".into(),
    ];
    header.extend((0..d_z).map(|i| format!("z{i}")));
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for ep in episodes {
        let z = model.latents(store, &ContextSet::new(ep, n_context)?)?;
        for (v, row) in z.data().chunks(d_z).enumerate() {
            let mut rec = vec![
                ep.id.to_string(),
                ep.kappa.to_string(),
                v.to_string(),
                format!("{:?}", ep.kinds[v]).to_lowercase(),
            ];
            rec.extend(row.iter().map(f64::to_string));
            w.write_record(&rec).map_err(|e| csv_error(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One timing measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub model: String,
    pub horizon: usize,
    pub context_size: usize,
    pub median_seconds: f64,
    pub context_calls: usize,
    pub simulator_calls: usize,
}

pub const BENCH_REPEATS: usize = 10;

/// Median wall-clock of `repeats` single-threaded rollouts of `episode`.
pub fn bench_model<T: Scalar>(
    model: &Model,
    store: &ParamStore<T>,
    episode: &Episode,
    n_context: usize,
    repeats: usize,
) -> Result<BenchRow> {
    let ctx = ContextSet::new(episode, n_context)?;
    let mut times = Vec::with_capacity(repeats);
    let mut calls = ModelCalls::default();
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        let p = model.predict(store, &ctx)?;
        times.push(start.elapsed().as_secs_f64());
        calls = p.calls;
    }
    Ok(BenchRow {
        model: model.label().to_string(),
        horizon: episode.n_frames,
        context_size: n_context,
        median_seconds: median(&mut times),
        context_calls: calls.context,
        simulator_calls: calls.simulator,
    })
}

/// Writes benchmark rows as `<stem>.json` and `<stem>.csv`.
pub fn write_bench(rows: &[BenchRow], dir: impl AsRef<Path>, stem: &str) -> Result<()> {
    let dir = dir.as_ref();
    write_json(&dir.join(format!("{stem}.json")), &rows)?;
    write_csv(&dir.join(format!("{stem}.csv")), rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::m3gn::tests::toy_episode;

    fn perfect(ep: &Episode, anchor: usize) -> Prediction {
        Prediction {
            anchor,
            n_nodes: ep.n_nodes(),
            dim: ep.dim,
            positions: ep.positions[anchor * ep.frame_len()..].to_vec(),
            calls: ModelCalls::default(),
            diverged: false,
        }
    }

    #[test]
    fn perfect_prediction_scores_zero() {
        let ep = toy_episode();
        let p = perfect(&ep, 2);
        assert_eq!(trajectory_mse(&p, &ep).unwrap(), Some(0.0));
        assert!(trajectory_per_timestep(&p, &ep)
            .unwrap()
            .unwrap()
            .iter()
            .all(|&x| x == 0.0));
    }

    #[test]
    fn constant_offset_scores_its_square() {
        let ep = toy_episode();
        let mut p = perfect(&ep, 3);
        p.positions.iter_mut().for_each(|x| *x += 0.1);
        let m = trajectory_mse(&p, &ep).unwrap().unwrap();
        assert!((m - 0.01).abs() < 1e-12, "{m}");
    }

    #[test]
    fn only_mesh_nodes_after_the_anchor_count() {
        let ep = toy_episode();
        let mut p = perfect(&ep, 3);
        let n = ep.frame_len();
        // Anchor frame, fixed node (3) and collider node (4) are ignored.
        p.positions[..n].iter_mut().for_each(|x| *x += 5.0);
        for k in 1..p.n_frames() {
            for i in 6..10 {
                p.positions[k * n + i] += 5.0;
            }
        }
        assert_eq!(trajectory_mse(&p, &ep).unwrap(), Some(0.0));
    }

    #[test]
    fn per_timestep_mean_equals_full_rollout() {
        let ep = toy_episode();
        let mut p = perfect(&ep, 2);
        for (i, x) in p.positions.iter_mut().enumerate() {
            *x += ((i * 7919) % 13) as f64 * 0.01;
        }
        let s = trajectory_per_timestep(&p, &ep).unwrap().unwrap();
        let full = trajectory_mse(&p, &ep).unwrap().unwrap();
        assert!((s.iter().sum::<f64>() / s.len() as f64 - full).abs() < 1e-15);
        assert_eq!(s.len(), ep.n_frames - 1 - 2);
    }

    #[test]
    fn diverged_rollouts_are_excluded_and_counted() {
        let ep = toy_episode();
        let good = perfect(&ep, 2);
        let mut bad = perfect(&ep, 2);
        bad.diverged = true;
        let r = full_rollout_mse(&[good, bad], &[ep.clone(), ep]).unwrap();
        assert_eq!(r.n_diverged, 1);
        assert_eq!(r.per_trajectory, vec![0.0]);
        assert_eq!(r.mean, 0.0);
    }

    #[test]
    fn misaligned_prediction_is_a_contract_error() {
        let ep = toy_episode();
        let mut p = perfect(&ep, 2);
        p.positions.pop();
        assert!(matches!(trajectory_mse(&p, &ep), Err(Error::Contract(_))));
    }

    #[test]
    fn bootstrap_degenerate_and_bracketing() {
        assert_eq!(bootstrap_ci(&[0.3; 5], 1000, 0.95, 1).unwrap(), (0.3, 0.3));
        let v = [0.1, 0.4, 0.2, 0.9, 0.5, 0.3];
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let (lo, hi) = bootstrap_ci(&v, 1000, 0.95, 7).unwrap();
        assert!(lo <= mean && mean <= hi && lo < hi);
        assert_eq!(bootstrap_ci(&v, 1000, 0.95, 7).unwrap(), (lo, hi));
        assert!(matches!(
            bootstrap_ci(&[1.0], 1000, 0.95, 0),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn bootstrap_matches_scripted_resampling() {
        let v = [0.12, 0.55, 0.31, 0.08, 0.97, 0.44, 0.23, 0.61, 0.19, 0.72];
        let (b, seed) = (1000usize, 2024u64);
        // Independent script: explicit loops, insertion into a sorted list,
        // percentile ranks 25 and 974 of 1000.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sorted: Vec<f64> = Vec::new();
        for _ in 0..b {
            let mut total = 0.0;
            for _ in 0..v.len() {
                let j: usize = rng.random_range(0..v.len());
                total += v[j];
            }
            let m = total / v.len() as f64;
            let pos = sorted.partition_point(|&x| x < m);
            sorted.insert(pos, m);
        }
        assert_eq!(
            bootstrap_ci(&v, b, 0.95, seed).unwrap(),
            (sorted[25], sorted[974])
        );
    }
}
