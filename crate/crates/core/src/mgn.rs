//! Autoregressive next-step baseline: predicts per-node velocities from the
//! current graph and integrates them one frame at a time.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::m3gn::free_nodes;
use crate::meshgraph::{
    encode_graph, Episode, FeatureLayout, GraphSample, NodeKind, DEFAULT_RADIUS,
};
use crate::mpn::{GraphIndex, Mpn, MpnConfig};
use crate::numerics::params::STATS_PREFIX;
use crate::numerics::{ParamStore, Scalar, Tape, Tensor, Var};
use crate::trajectory::{ContextSet, ModelCalls, Prediction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaterialFeature {
    Off,
    /// `ln κ` appended to every node.
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MgnConfig {
    pub latent: usize,
    pub steps: usize,
    /// Past velocities in the node features.
    pub history: usize,
    /// Standard deviation of the input velocity noise at the current frame.
    pub noise_sigma: f64,
    pub material: MaterialFeature,
    pub radius: f64,
}

impl Default for MgnConfig {
    fn default() -> Self {
        MgnConfig {
            latent: 64,
            steps: 5,
            history: 2,
            noise_sigma: 1e-3,
            material: MaterialFeature::Off,
            radius: DEFAULT_RADIUS,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Mgn {
    pub config: MgnConfig,
    pub dim: usize,
    pub layout: FeatureLayout,
    pub has_collider: bool,
    pub net: Mpn,
}

/// Inputs and target of one training transition.
#[derive(Debug, Clone)]
pub struct Transition {
    pub sample: GraphSample,
    pub graph: GraphIndex,
    /// `[F × d]` velocity targets of the free nodes.
    pub target: Tensor<f64>,
}

impl Mgn {
    pub fn new(config: MgnConfig, episode: &Episode) -> Result<Self> {
        if !(config.noise_sigma >= 0.0) {
            return Err(Error::config(format!(
                "noise sigma {} must be ≥ 0",
                config.noise_sigma
            )));
        }
        let dim = episode.dim;
        let layout = FeatureLayout::for_task(dim, config.history, &episode.task);
        let has_collider = episode.kinds.contains(&NodeKind::Collider);
        let node_in = layout.width()
            + if has_collider { dim } else { 0 }
            + (config.material == MaterialFeature::Oracle) as usize;
        let net = Mpn::new(
            "mgn",
            MpnConfig {
                steps: config.steps,
                latent: config.latent,
                ..MpnConfig::new(node_in, dim + 1, dim)
            },
        )?;
        Ok(Mgn {
            config,
            dim,
            layout,
            has_collider,
            net,
        })
    }

    fn target_stats_name(which: &str) -> String {
        format!("{STATS_PREFIX}mgn.target_{which}")
    }

    pub fn init<T: Scalar, R: Rng + ?Sized>(
        &self,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<()> {
        self.net.init(store, rng, 1.0)?;
        store.insert(
            Self::target_stats_name("mean"),
            Tensor::zeros(&[1, self.dim]),
        )?;
        store.insert(
            Self::target_stats_name("std"),
            Tensor::full(&[1, self.dim], T::one()),
        )
    }

    /// Graph for predicting frame `t+1` from `history` (frames `t−h ..= t`,
    /// oldest first) and the known next collider frame.
    pub fn encode(
        &self,
        ep: &Episode,
        history: &[&[f64]],
        next_collider: &[f64],
    ) -> Result<GraphSample> {
        let mut g = encode_graph(
            &ep.topology,
            history,
            &ep.kinds,
            &ep.task,
            &self.layout,
            self.config.radius,
        )?;
        let n = ep.n_nodes();
        let current = history[history.len() - 1];
        let mut extra = Vec::new();
        if self.has_collider {
            let mut off = Tensor::zeros(&[n, self.dim]);
            for v in (0..n).filter(|&v| ep.kinds[v] == NodeKind::Collider) {
                for i in 0..self.dim {
                    off.set(
                        v,
                        i,
                        next_collider[v * self.dim + i] - current[v * self.dim + i],
                    );
                }
            }
            extra.push(off);
        }
        if self.config.material == MaterialFeature::Oracle {
            extra.push(Tensor::full(&[n, 1], ep.kappa.ln()));
        }
        if !extra.is_empty() {
            let mut parts = vec![&g.node_features];
            parts.extend(extra.iter());
            g.node_features = Tensor::concat_cols(&parts)?;
        }
        Ok(g)
    }

    /// Transition `t → t+1` with random-walk noise on the free nodes' input
    /// positions; the target is corrected so that `noisy pos_t + target = pos_{t+1}`.
    pub fn transition<R: Rng + ?Sized>(
        &self,
        ep: &Episode,
        t: usize,
        rng: &mut R,
    ) -> Result<Transition> {
        if t + 1 >= ep.n_frames {
            return Err(Error::contract(format!("no frame after {t}")));
        }
        let (d, h) = (self.dim, self.config.history);
        let free = free_nodes(&ep.kinds);
        let mut frames: Vec<Vec<f64>> = ep.history(t, h).into_iter().map(<[f64]>::to_vec).collect();
        if self.config.noise_sigma > 0.0 {
            // Velocity noise is a random walk over the window with total
            // variance σ² at the current frame; positions integrate it from
            // the oldest frame on.
            let n_f = frames.len();
            let steps = (n_f - 1).max(1);
            let normal = Normal::new(0.0, self.config.noise_sigma / (steps as f64).sqrt())
                .map_err(|e| Error::config(e.to_string()))?;
            for &v in &free {
                for i in 0..d {
                    if n_f == 1 {
                        frames[0][v * d + i] += normal.sample(rng);
                        continue;
                    }
                    let (mut vel, mut pos) = (0.0, 0.0);
                    for frame in frames.iter_mut().skip(1) {
                        vel += normal.sample(rng);
                        pos += vel;
                        frame[v * d + i] += pos;
                    }
                }
            }
        }
        let history: Vec<&[f64]> = frames.iter().map(Vec::as_slice).collect();
        let sample = self.encode(ep, &history, ep.frame(t + 1))?;
        let graph = GraphIndex::new(ep.n_nodes(), &sample.edges)?;
        let current = &frames[frames.len() - 1];
        let next = ep.frame(t + 1);
        let mut target = Tensor::zeros(&[free.len(), d]);
        for (j, &v) in free.iter().enumerate() {
            for i in 0..d {
                target.set(j, i, next[v * d + i] - current[v * d + i]);
            }
        }
        Ok(Transition {
            sample,
            graph,
            target,
        })
    }

    /// Standardized velocity predictions of the free nodes, `[F × d]`.
    fn predict_normalized<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        sample: &GraphSample,
        graph: &GraphIndex,
        free: &[usize],
    ) -> Result<Var> {
        let x = tape.constant(sample.node_features.cast());
        let e = tape.constant(sample.edge_features.cast());
        let h = self.net.run(tape, store, x, e, graph)?;
        let out = self.net.decode(tape, store, h)?;
        tape.gather_rows(out, free.to_vec().into())
    }

    fn standardize_target<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        target: &Tensor<f64>,
    ) -> Result<Tensor<T>> {
        let mean = store.get(&Self::target_stats_name("mean"))?.to_f64_vec();
        let std = store.get(&Self::target_stats_name("std"))?.to_f64_vec();
        let mut out = target.clone();
        for r in 0..out.rows() {
            for (i, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = (*v - mean[i]) / std[i];
            }
        }
        Ok(out.cast())
    }

    /// Mean squared error between standardized predicted and target velocities.
    pub fn loss<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        ep: &Episode,
        batch: &[Transition],
    ) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::contract("empty transition batch"));
        }
        let free = free_nodes(&ep.kinds);
        let mut total: Option<Var> = None;
        for tr in batch {
            let pred = self.predict_normalized(tape, store, &tr.sample, &tr.graph, &free)?;
            let target = tape.constant(self.standardize_target(store, &tr.target)?);
            let diff = tape.sub(pred, target)?;
            let sq = tape.square(diff);
            let m = tape.mean_all(sq);
            total = Some(match total {
                None => m,
                Some(acc) => tape.add(acc, m)?,
            });
        }
        Ok(tape.scale(
            total.expect("non-empty"),
            T::from_f64(1.0 / batch.len() as f64),
        ))
    }

    /// Velocity of every free node in world-normalized units, `[F × d]`.
    pub fn step_velocity<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        ep: &Episode,
        sample: &GraphSample,
    ) -> Result<Vec<f64>> {
        let free = free_nodes(&ep.kinds);
        let graph = GraphIndex::new(ep.n_nodes(), &sample.edges)?;
        let mut tape = Tape::new();
        let out = self.predict_normalized(&mut tape, store, sample, &graph, &free)?;
        let mean = store.get(&Self::target_stats_name("mean"))?.to_f64_vec();
        let std = store.get(&Self::target_stats_name("std"))?.to_f64_vec();
        let vals = tape.value(out).to_f64_vec();
        Ok(vals
            .iter()
            .enumerate()
            .map(|(k, &v)| v * std[k % self.dim] + mean[k % self.dim])
            .collect())
    }

    /// Autoregressive rollout from the context anchor; collider nodes follow
    /// the ground truth and fixed nodes stay at the anchor.
    pub fn rollout<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        ctx: &ContextSet,
    ) -> Result<Prediction> {
        let ep = ctx.episode;
        let (a, d, n) = (ctx.anchor(), self.dim, ep.n_nodes());
        let h = self.config.history;
        let free = free_nodes(&ep.kinds);
        // Frames known to the model: ground truth up to the anchor, predictions after.
        let mut states: Vec<Vec<f64>> = (0..=a).map(|t| ep.frame(t).to_vec()).collect();
        let mut calls = ModelCalls::default();
        let mut diverged = false;
        for t in a..ep.n_frames - 1 {
            let history: Vec<&[f64]> = (0..=h)
                .map(|k| states[(t + k).saturating_sub(h)].as_slice())
                .collect();
            let next_truth = ep.frame(t + 1);
            let sample = self.encode(ep, &history, next_truth)?;
            let vel = self.step_velocity(store, ep, &sample)?;
            calls.simulator += 1;
            let mut next = states[t].clone();
            for v in (0..n).filter(|&v| ep.kinds[v] == NodeKind::Collider) {
                next[v * d..(v + 1) * d].copy_from_slice(&next_truth[v * d..(v + 1) * d]);
            }
            for (j, &v) in free.iter().enumerate() {
                for i in 0..d {
                    next[v * d + i] += vel[j * d + i];
                }
            }
            if !next.iter().all(|x| x.is_finite()) {
                diverged = true;
                break;
            }
            states.push(next);
        }
        let mut positions: Vec<f64> = states[a..].concat();
        if diverged {
            positions.resize(ctx.horizon() * n * d, f64::NAN);
        }
        Ok(Prediction {
            anchor: a,
            n_nodes: n,
            dim: d,
            positions,
            calls,
            diverged,
        })
    }

    /// Input and target standardisation from every clean transition of `episodes`.
    pub fn fit_stats<T: Scalar>(
        &self,
        store: &mut ParamStore<T>,
        episodes: &[Episode],
    ) -> Result<()> {
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        let mut sum = vec![0.0; self.dim];
        let mut sq = vec![0.0; self.dim];
        let mut count = 0usize;
        for ep in episodes {
            let free = free_nodes(&ep.kinds);
            for t in 0..ep.n_frames - 1 {
                let g = self.encode(ep, &ep.history(t, self.config.history), ep.frame(t + 1))?;
                let (now, next) = (ep.frame(t), ep.frame(t + 1));
                for &v in &free {
                    for i in 0..self.dim {
                        let dv = next[v * self.dim + i] - now[v * self.dim + i];
                        sum[i] += dv;
                        sq[i] += dv * dv;
                    }
                    count += 1;
                }
                nodes.push(g.node_features);
                edges.push(g.edge_features);
            }
        }
        self.net.fit_input_stats(
            store,
            &nodes.iter().collect::<Vec<_>>(),
            &edges.iter().collect::<Vec<_>>(),
        )?;
        if count > 0 {
            let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
            let std: Vec<f64> = sq
                .iter()
                .zip(&mean)
                .map(|(s, m)| {
                    let sd = (s / count as f64 - m * m).max(0.0).sqrt();
                    if sd < 1e-8 {
                        1.0
                    } else {
                        sd
                    }
                })
                .collect();
            *store.get_mut(&Self::target_stats_name("mean"))? =
                Tensor::from_f64(&[1, self.dim], &mean)?;
            *store.get_mut(&Self::target_stats_name("std"))? =
                Tensor::from_f64(&[1, self.dim], &std)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::m3gn::tests::toy_episode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(cfg: MgnConfig, ep: &Episode) -> (Mgn, ParamStore<f64>) {
        let m = Mgn::new(cfg, ep).unwrap();
        let mut store = ParamStore::new();
        m.init(&mut store, &mut ChaCha8Rng::seed_from_u64(2))
            .unwrap();
        (m, store)
    }

    fn small() -> MgnConfig {
        MgnConfig {
            latent: 6,
            steps: 2,
            noise_sigma: 0.0,
            radius: 0.5,
            ..MgnConfig::default()
        }
    }

    fn zero_head(m: &Mgn, store: &mut ParamStore<f64>, bias: &[f64]) {
        let last = m.net.decoder.n_layers() - 1;
        store
            .get_mut(&m.net.decoder.weight_name(last))
            .unwrap()
            .data_mut()
            .fill(0.0);
        store
            .get_mut(&m.net.decoder.bias_name(last))
            .unwrap()
            .data_mut()
            .copy_from_slice(bias);
    }

    #[test]
    fn noiseless_transition_targets_clean_velocity() {
        let ep = toy_episode();
        let (m, _) = model(small(), &ep);
        let tr = m
            .transition(&ep, 3, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        let free = free_nodes(&ep.kinds);
        for (j, &v) in free.iter().enumerate() {
            for i in 0..2 {
                assert_eq!(
                    tr.target.get(j, i),
                    ep.frame(4)[v * 2 + i] - ep.frame(3)[v * 2 + i]
                );
            }
        }
        let clean = m.encode(&ep, &ep.history(3, 2), ep.frame(4)).unwrap();
        assert_eq!(tr.sample, clean);
    }

    #[test]
    fn noisy_target_recovers_next_position() {
        let ep = toy_episode();
        let (m, _) = model(
            MgnConfig {
                noise_sigma: 0.05,
                ..small()
            },
            &ep,
        );
        let tr = m
            .transition(&ep, 4, &mut ChaCha8Rng::seed_from_u64(9))
            .unwrap();
        // Most recent velocity column holds the noisy pos_t − noisy pos_{t−1}.
        let noisy_vel = tr.sample.node_features.get(0, NodeKind::COUNT);
        let clean_vel = ep.frame(4)[0] - ep.frame(3)[0];
        assert_ne!(noisy_vel, clean_vel);
        let noisy_now = ep.frame(4)[0]
            + (tr.sample.node_features.get(0, NodeKind::COUNT) - clean_vel)
            + (tr.sample.node_features.get(0, NodeKind::COUNT + 2)
                - (ep.frame(3)[0] - ep.frame(2)[0]));
        assert!((noisy_now + tr.target.get(0, 0) - ep.frame(5)[0]).abs() < 1e-12);
    }

    #[test]
    fn loss_matches_scripted_mse() {
        let ep = toy_episode();
        let (m, mut store) = model(small(), &ep);
        zero_head(&m, &mut store, &[0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let batch = vec![m.transition(&ep, 2, &mut rng).unwrap()];
        let mut tape = Tape::new();
        let loss = m.loss(&mut tape, &store, &ep, &batch).unwrap();
        let t = &batch[0].target;
        let expect = t.data().iter().map(|v| v * v).sum::<f64>() / t.len() as f64;
        assert!((tape.value(loss).data()[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn perfect_predictor_has_zero_loss() {
        let mut ep = toy_episode();
        let c = [0.01, -0.02];
        for t in 0..ep.n_frames {
            for v in 0..3 {
                for i in 0..2 {
                    ep.positions[t * 10 + v * 2 + i] = ep.positions[v * 2 + i] + c[i] * t as f64;
                }
            }
        }
        let (m, mut store) = model(small(), &ep);
        zero_head(&m, &mut store, &c);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let batch: Vec<_> = (0..5)
            .map(|t| m.transition(&ep, t, &mut rng).unwrap())
            .collect();
        let mut tape = Tape::new();
        let loss = m.loss(&mut tape, &store, &ep, &batch).unwrap();
        assert!(tape.value(loss).data()[0] < 1e-30);
    }

    #[test]
    fn zero_velocity_freezes_mesh() {
        let ep = toy_episode();
        let (m, mut store) = model(small(), &ep);
        zero_head(&m, &mut store, &[0.0, 0.0]);
        let ctx = ContextSet::new(&ep, 3).unwrap();
        let pred = m.rollout(&store, &ctx).unwrap();
        assert_eq!(pred.calls.simulator, ep.n_frames - 3);
        for t in 2..ep.n_frames {
            assert_eq!(&pred.frame(t)[..8], &ep.frame(2)[..8]);
            assert_eq!(&pred.frame(t)[8..], &ep.frame(t)[8..]);
        }
    }

    #[test]
    fn first_rollout_step_is_one_forward_pass() {
        let ep = toy_episode();
        let (m, store) = model(small(), &ep);
        let ctx = ContextSet::new(&ep, 4).unwrap();
        let pred = m.rollout(&store, &ctx).unwrap();
        let tr = m
            .transition(&ep, 3, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        let vel = m.step_velocity(&store, &ep, &tr.sample).unwrap();
        for (j, &v) in free_nodes(&ep.kinds).iter().enumerate() {
            for i in 0..2 {
                assert_eq!(
                    pred.frame(4)[v * 2 + i],
                    ep.frame(3)[v * 2 + i] + vel[j * 2 + i]
                );
            }
        }
    }

    #[test]
    fn oracle_feature_adds_a_column() {
        let ep = toy_episode();
        let off = Mgn::new(small(), &ep).unwrap();
        let on = Mgn::new(
            MgnConfig {
                material: MaterialFeature::Oracle,
                ..small()
            },
            &ep,
        )
        .unwrap();
        assert_eq!(on.net.config.node_in, off.net.config.node_in + 1);
    }
}
