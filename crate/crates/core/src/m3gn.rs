//! Trajectory-level meta-learning simulator.
//!
//! A context MPN encodes every observed transition `(G_t, G_{t+1} − G_t)`
//! into per-node latents, which are max-aggregated over time into `z_v`. A
//! simulator MPN reads the anchor graph together with `z_v` and emits
//! per-node ProDMP weights; a small head maps the node-mean of `z_v` to a
//! global execution speed `τ`. The remaining trajectory comes out of one
//! simulator call.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meshgraph::{
    collider_target_offset, encode_graph, Episode, FeatureLayout, GraphSample, NodeKind,
    DEFAULT_RADIUS,
};
use crate::mpn::{GraphIndex, Mpn, MpnConfig};
use crate::numerics::{MlpSpec, ParamStore, Scalar, Tape, Tensor, Var};
use crate::prodmp::{BasisTables, ProDmpConfig, ProDmpOp, ProDmpRequest};
use crate::trajectory::{ContextSet, ModelCalls, Prediction};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct M3gnConfig {
    pub latent: usize,
    pub steps: usize,
    /// Width of the latent task descriptor `z_v`.
    pub latent_task: usize,
    pub tau_hidden: usize,
    /// Initial scale of the weight head's last layer.
    pub weight_head_scale: f64,
    pub radius: f64,
    pub prodmp: ProDmpConfig,
}

impl Default for M3gnConfig {
    fn default() -> Self {
        M3gnConfig {
            latent: 64,
            steps: 5,
            latent_task: 32,
            tau_hidden: 16,
            weight_head_scale: 0.01,
            radius: DEFAULT_RADIUS,
            prodmp: ProDmpConfig::default(),
        }
    }
}

/// One encoded context transition: frame `t` features with the collider-target
/// offset and the label `y_t = pos(t+1) − pos(t)` appended.
#[derive(Debug, Clone)]
pub struct ContextPair {
    pub t: usize,
    pub sample: GraphSample,
    pub graph: GraphIndex,
}

/// Traced outputs of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Traced {
    /// `[K × F·d]` positions of the free nodes for frames `anchor ..= T−1`.
    pub positions: Var,
    pub tau: Var,
    pub latent: Var,
    pub calls: ModelCalls,
}

#[derive(Debug, Clone)]
pub struct M3gn {
    pub config: M3gnConfig,
    pub dim: usize,
    pub layout: FeatureLayout,
    pub has_collider: bool,
    pub context: Mpn,
    pub simulator: Mpn,
    pub tau_head: MlpSpec,
    tables: Arc<BasisTables>,
}

fn frame_offsets(ep: &Episode, t: usize) -> Vec<f64> {
    let (now, next) = (ep.frame(t), ep.frame(t + 1));
    next.iter().zip(now).map(|(a, b)| a - b).collect()
}

fn append_cols(base: &Tensor<f64>, extra: &[&Tensor<f64>]) -> Tensor<f64> {
    let mut parts = vec![base];
    parts.extend_from_slice(extra);
    Tensor::concat_cols(&parts).expect("row counts agree")
}

/// Indices of nodes whose motion is predicted.
pub fn free_nodes(kinds: &[NodeKind]) -> Vec<usize> {
    (0..kinds.len()).filter(|&v| kinds[v].is_free()).collect()
}

impl M3gn {
    pub fn new(config: M3gnConfig, episode: &Episode) -> Result<Self> {
        let tables = Arc::new(BasisTables::new(&config.prodmp)?);
        Self::with_tables(config, episode, tables)
    }

    /// Shares already assembled basis tables; their configuration replaces `config.prodmp`.
    pub fn with_tables(
        mut config: M3gnConfig,
        episode: &Episode,
        tables: Arc<BasisTables>,
    ) -> Result<Self> {
        config.prodmp = tables.config.clone();
        let dim = episode.dim;
        let layout = FeatureLayout::for_task(dim, 1, &episode.task);
        let has_collider = episode.kinds.contains(&NodeKind::Collider);
        let offset = if has_collider { dim } else { 0 };
        let base = layout.width() + offset;
        let edge_in = dim + 1;
        let mk = |node_in, out| MpnConfig {
            steps: config.steps,
            latent: config.latent,
            ..MpnConfig::new(node_in, edge_in, out)
        };
        let n_w = config.prodmp.n_weights + 1;
        let context = Mpn::new("ctx", mk(base + dim, config.latent_task))?;
        let simulator = Mpn::new("sim", mk(base + config.latent_task, dim * n_w))?;
        let tau_head = MlpSpec::new("tau", &[config.latent_task, config.tau_hidden, 1]);
        Ok(M3gn {
            config,
            dim,
            layout,
            has_collider,
            context,
            simulator,
            tau_head,
            tables,
        })
    }

    pub fn tables(&self) -> &Arc<BasisTables> {
        &self.tables
    }

    pub fn init<T: Scalar, R: Rng + ?Sized>(
        &self,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<()> {
        self.context.init(store, rng, 1.0)?;
        self.simulator
            .init(store, rng, self.config.weight_head_scale)?;
        self.tau_head.init(store, rng, 1.0)
    }

    /// Frame-`t` graph with history-1 velocities and, with a collider, the
    /// offset of every collider node to its final position.
    fn frame_graph(&self, ep: &Episode, t: usize) -> Result<GraphSample> {
        let history = ep.history(t, 1);
        let mut g = encode_graph(
            &ep.topology,
            &history,
            &ep.kinds,
            &ep.task,
            &self.layout,
            self.config.radius,
        )?;
        if self.has_collider {
            let target = ep.frame(ep.n_frames - 1);
            let off = collider_target_offset(ep.frame(t), target, &ep.kinds, self.dim);
            g.node_features = append_cols(&g.node_features, &[&off]);
        }
        Ok(g)
    }

    pub fn context_pairs(&self, ctx: &ContextSet) -> Result<Vec<ContextPair>> {
        let ep = ctx.episode;
        (0..ctx.anchor())
            .map(|t| {
                let mut sample = self.frame_graph(ep, t)?;
                let y = Tensor::from_f64(&[ep.n_nodes(), self.dim], &frame_offsets(ep, t))?;
                sample.node_features = append_cols(&sample.node_features, &[&y]);
                let graph = GraphIndex::new(ep.n_nodes(), &sample.edges)?;
                Ok(ContextPair { t, sample, graph })
            })
            .collect()
    }

    /// `z_v`: element-wise max over the per-pair latents.
    pub fn encode_context<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        pairs: &[ContextPair],
    ) -> Result<Var> {
        if pairs.is_empty() {
            return Err(Error::contract("context needs at least one transition"));
        }
        let mut zs = Vec::with_capacity(pairs.len());
        for p in pairs {
            let x = tape.constant(p.sample.node_features.cast());
            let e = tape.constant(p.sample.edge_features.cast());
            let h = self.context.run(tape, store, x, e, &p.graph)?;
            zs.push(self.context.decode(tape, store, h)?);
        }
        tape.max_of(&zs)
    }

    fn request(&self, ctx: &ContextSet, free: &[usize]) -> ProDmpRequest {
        let ep = ctx.episode;
        let (a, d) = (ctx.anchor(), self.dim);
        let span = (ep.n_frames - 1) as f64;
        let (now, prev) = (ep.frame(a), ep.frame(a - 1));
        let mut anchor = Vec::with_capacity(free.len() * d);
        let mut velocity = Vec::with_capacity(free.len() * d);
        for &v in free {
            for i in 0..d {
                anchor.push(now[v * d + i]);
                velocity.push((now[v * d + i] - prev[v * d + i]) * span);
            }
        }
        ProDmpRequest {
            times: (a..ep.n_frames).map(|k| k as f64 / span).collect(),
            anchor,
            anchor_velocity: velocity,
            n_nodes: free.len(),
            dim: d,
        }
    }

    /// Builds the full differentiable prediction for the free nodes.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        ctx: &ContextSet,
    ) -> Result<Traced> {
        let ep = ctx.episode;
        if ep.dim != self.dim {
            return Err(Error::config(format!(
                "model is {}D, episode is {}D",
                self.dim, ep.dim
            )));
        }
        let pairs = self.context_pairs(ctx)?;
        let latent = self.encode_context(tape, store, &pairs)?;

        let anchor = self.frame_graph(ep, ctx.anchor())?;
        let graph = GraphIndex::new(ep.n_nodes(), &anchor.edges)?;
        let x0 = tape.constant(anchor.node_features.cast());
        let x = tape.concat_cols(&[x0, latent])?;
        let e = tape.constant(anchor.edge_features.cast());
        let h = self.simulator.run(tape, store, x, e, &graph)?;
        let weights_all = self.simulator.decode(tape, store, h)?;

        let pooled = tape.mean_rows(latent);
        let raw = self.tau_head.forward(tape, store, pooled)?;
        let s = tape.sigmoid(raw);
        let (lo, hi) = self.config.prodmp.tau_range;
        let scaled = tape.scale(s, T::from_f64(hi - lo));
        let lo_v = tape.constant(Tensor::scalar(T::from_f64(lo)).reshape(&[1, 1])?);
        let tau = tape.add(scaled, lo_v)?;

        let free = free_nodes(&ep.kinds);
        let weights = tape.gather_rows(weights_all, free.clone().into())?;
        let op = ProDmpOp::new(self.tables.clone(), Arc::new(self.request(ctx, &free)))?;
        let positions = tape.custom(&[weights, tau], Box::new(op))?;
        Ok(Traced {
            positions,
            tau,
            latent,
            calls: ModelCalls {
                context: pairs.len(),
                simulator: 1,
            },
        })
    }

    /// Mean squared position error of the free nodes over frames after the anchor.
    pub fn loss<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        ctx: &ContextSet,
    ) -> Result<Var> {
        let traced = self.forward(tape, store, ctx)?;
        let ep = ctx.episode;
        let free = free_nodes(&ep.kinds);
        let (a, d) = (ctx.anchor(), self.dim);
        let k = ctx.horizon();
        let mut truth = Vec::with_capacity((k - 1) * free.len() * d);
        for t in a + 1..ep.n_frames {
            let f = ep.frame(t);
            for &v in &free {
                truth.extend_from_slice(&f[v * d..(v + 1) * d]);
            }
        }
        let truth = tape.constant(Tensor::from_f64(&[k - 1, free.len() * d], &truth)?);
        let rows: Arc<[usize]> = (1..k).collect();
        let pred = tape.gather_rows(traced.positions, rows)?;
        let diff = tape.sub(pred, truth)?;
        let sq = tape.square(diff);
        Ok(tape.mean_all(sq))
    }

    /// Full-node prediction: free nodes from the primitive, fixed nodes held
    /// at the anchor, collider nodes on their known future.
    pub fn predict<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        ctx: &ContextSet,
    ) -> Result<(Prediction, f64)> {
        let mut tape = Tape::new();
        let traced = self.forward(&mut tape, store, ctx)?;
        let tau = tape.value(traced.tau).data()[0].as_f64();
        let free_pos = tape.value(traced.positions).to_f64_vec();
        let ep = ctx.episode;
        let (a, d, n) = (ctx.anchor(), self.dim, ep.n_nodes());
        let free = free_nodes(&ep.kinds);
        let mut positions = Vec::with_capacity(ctx.horizon() * n * d);
        for (k, t) in (a..ep.n_frames).enumerate() {
            let start = positions.len();
            positions.extend_from_slice(ep.frame(t));
            for v in 0..n {
                if ep.kinds[v] == NodeKind::Fixed {
                    positions[start + v * d..start + (v + 1) * d]
                        .copy_from_slice(&ep.frame(a)[v * d..(v + 1) * d]);
                }
            }
            let row = &free_pos[k * free.len() * d..(k + 1) * free.len() * d];
            for (j, &v) in free.iter().enumerate() {
                positions[start + v * d..start + (v + 1) * d]
                    .copy_from_slice(&row[j * d..(j + 1) * d]);
            }
        }
        let diverged = !positions.iter().all(|p| p.is_finite());
        Ok((
            Prediction {
                anchor: a,
                n_nodes: n,
                dim: d,
                positions,
                calls: traced.calls,
                diverged,
            },
            tau,
        ))
    }

    /// `z_v` rows `[N × d_z]` for latent export.
    pub fn latents<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        ctx: &ContextSet,
    ) -> Result<Tensor<f64>> {
        let mut tape = Tape::new();
        let pairs = self.context_pairs(ctx)?;
        let z = self.encode_context(&mut tape, store, &pairs)?;
        Ok(tape.value(z).cast())
    }

    /// Input standardisation from context and anchor features of `episodes`
    /// at every admissible anchor.
    pub fn fit_input_stats<T: Scalar>(
        &self,
        store: &mut ParamStore<T>,
        episodes: &[Episode],
    ) -> Result<()> {
        let mut ctx_nodes = Vec::new();
        let mut sim_nodes = Vec::new();
        let mut edges = Vec::new();
        for ep in episodes {
            for t in 0..ep.n_frames - 1 {
                let g = self.frame_graph(ep, t)?;
                let y = Tensor::from_f64(&[ep.n_nodes(), self.dim], &frame_offsets(ep, t))?;
                ctx_nodes.push(append_cols(&g.node_features, &[&y]));
                let z = Tensor::zeros(&[ep.n_nodes(), self.config.latent_task]);
                sim_nodes.push(append_cols(&g.node_features, &[&z]));
                edges.push(g.edge_features);
            }
        }
        let edge_refs: Vec<&Tensor<f64>> = edges.iter().collect();
        self.context
            .fit_input_stats(store, &ctx_nodes.iter().collect::<Vec<_>>(), &edge_refs)?;
        self.simulator
            .fit_input_stats(store, &sim_nodes.iter().collect::<Vec<_>>(), &edge_refs)
    }
}
