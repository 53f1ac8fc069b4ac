//! Encode-process-decode message passing over a directed graph.
//!
//! Each step updates every edge from `[h_src, h_dst, h_e]` and every node from
//! `[h_v, mean of incoming edge latents]`, both with residual connections.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::params::STATS_PREFIX;
use crate::numerics::{MlpSpec, ParamStore, Reduce, Scalar, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MpnConfig {
    pub steps: usize,
    pub latent: usize,
    pub node_in: usize,
    pub edge_in: usize,
    pub out_dim: usize,
    /// Decoder depth in layers; 1 makes the head a single affine map.
    pub decoder_layers: usize,
}

impl MpnConfig {
    pub fn new(node_in: usize, edge_in: usize, out_dim: usize) -> Self {
        MpnConfig {
            steps: 5,
            latent: 64,
            node_in,
            edge_in,
            out_dim,
            decoder_layers: 2,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.latent == 0 || self.decoder_layers == 0 {
            return Err(Error::config(format!(
                "message passing needs steps, latent width and decoder depth ≥ 1, got {self:?}"
            )));
        }
        if self.node_in == 0 || self.edge_in == 0 || self.out_dim == 0 {
            return Err(Error::config(format!("zero feature width in {self:?}")));
        }
        Ok(())
    }
}

/// Directed edge lists in the form the reductions consume.
#[derive(Debug, Clone)]
pub struct GraphIndex {
    pub n_nodes: usize,
    pub senders: Arc<[usize]>,
    pub receivers: Arc<[usize]>,
}

impl GraphIndex {
    pub fn new(n_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if let Some(&(a, b)) = edges.iter().find(|&&(a, b)| a >= n_nodes || b >= n_nodes) {
            return Err(Error::Index {
                op: "graph edge",
                index: a.max(b),
                limit: n_nodes,
            });
        }
        Ok(GraphIndex {
            n_nodes,
            senders: edges.iter().map(|e| e.0).collect(),
            receivers: edges.iter().map(|e| e.1).collect(),
        })
    }

    pub fn n_edges(&self) -> usize {
        self.senders.len()
    }
}

/// Parameter layout of one message-passing network under a name prefix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mpn {
    pub prefix: String,
    pub config: MpnConfig,
    pub node_encoder: MlpSpec,
    pub edge_encoder: MlpSpec,
    pub edge_updates: Vec<MlpSpec>,
    pub node_updates: Vec<MlpSpec>,
    pub decoder: MlpSpec,
}

impl Mpn {
    pub fn new(prefix: &str, config: MpnConfig) -> Result<Self> {
        config.validate()?;
        let l = config.latent;
        let mut decoder_sizes = vec![l; config.decoder_layers];
        decoder_sizes.push(config.out_dim);
        Ok(Mpn {
            prefix: prefix.to_string(),
            node_encoder: MlpSpec::new(format!("{prefix}.node_enc"), &[config.node_in, l, l]),
            edge_encoder: MlpSpec::new(format!("{prefix}.edge_enc"), &[config.edge_in, l, l]),
            edge_updates: (0..config.steps)
                .map(|m| MlpSpec::new(format!("{prefix}.edge{m}"), &[3 * l, l, l]))
                .collect(),
            node_updates: (0..config.steps)
                .map(|m| MlpSpec::new(format!("{prefix}.node{m}"), &[2 * l, l, l]))
                .collect(),
            decoder: MlpSpec::new(format!("{prefix}.dec"), &decoder_sizes),
            config,
        })
    }

    fn stats_name(&self, which: &str) -> String {
        format!("{STATS_PREFIX}{}.{which}", self.prefix)
    }

    /// Creates all parameters; the decoder's last layer is scaled by `head_scale`.
    /// Input statistics start as the identity map.
    pub fn init<T: Scalar, R: Rng + ?Sized>(
        &self,
        store: &mut ParamStore<T>,
        rng: &mut R,
        head_scale: f64,
    ) -> Result<()> {
        self.node_encoder.init(store, rng, 1.0)?;
        self.edge_encoder.init(store, rng, 1.0)?;
        for (e, n) in self.edge_updates.iter().zip(&self.node_updates) {
            e.init(store, rng, 1.0)?;
            n.init(store, rng, 1.0)?;
        }
        self.decoder.init(store, rng, head_scale)?;
        for (which, width) in [("node", self.config.node_in), ("edge", self.config.edge_in)] {
            store.insert(
                self.stats_name(&format!("{which}_mean")),
                Tensor::zeros(&[1, width]),
            )?;
            store.insert(
                self.stats_name(&format!("{which}_std")),
                Tensor::full(&[1, width], T::one()),
            )?;
        }
        Ok(())
    }

    /// Sets the input standardisation from sample feature rows. Columns with
    /// (near) zero spread keep unit scale.
    pub fn fit_input_stats<T: Scalar>(
        &self,
        store: &mut ParamStore<T>,
        node_rows: &[&Tensor<f64>],
        edge_rows: &[&Tensor<f64>],
    ) -> Result<()> {
        for (which, rows, width) in [
            ("node", node_rows, self.config.node_in),
            ("edge", edge_rows, self.config.edge_in),
        ] {
            let (mean, std) = column_stats(rows, width)?;
            *store.get_mut(&self.stats_name(&format!("{which}_mean")))? =
                Tensor::from_f64(&[1, width], &mean)?;
            *store.get_mut(&self.stats_name(&format!("{which}_std")))? =
                Tensor::from_f64(&[1, width], &std)?;
        }
        Ok(())
    }

    /// `(x − mean) / std` with the statistics held as constants.
    fn standardize<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
        which: &str,
    ) -> Result<Var> {
        let mean = store.get(&self.stats_name(&format!("{which}_mean")))?;
        let std = store.get(&self.stats_name(&format!("{which}_std")))?;
        let width = mean.len();
        if tape.value(x).cols() != width {
            return Err(Error::config(format!(
                "`{}` expects {width} {which} features, got {}",
                self.prefix,
                tape.value(x).cols()
            )));
        }
        let shift = tape.constant(mean.map(|v| -v));
        let mut diag = Tensor::zeros(&[width, width]);
        for (i, &s) in std.data().iter().enumerate() {
            diag.set(i, i, T::one() / s);
        }
        let diag = tape.constant(diag);
        let centered = tape.add_row(x, shift)?;
        tape.matmul(centered, diag)
    }

    /// Node latents after all message-passing steps.
    pub fn run<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        node_features: Var,
        edge_features: Var,
        graph: &GraphIndex,
    ) -> Result<Var> {
        if tape.value(node_features).rows() != graph.n_nodes
            || tape.value(edge_features).rows() != graph.n_edges()
        {
            return Err(Error::Dimension {
                op: "mpn run",
                lhs: vec![
                    tape.value(node_features).rows(),
                    tape.value(edge_features).rows(),
                ],
                rhs: vec![graph.n_nodes, graph.n_edges()],
            });
        }
        let x = self.standardize(tape, store, node_features, "node")?;
        let e = self.standardize(tape, store, edge_features, "edge")?;
        let mut h_v = self.node_encoder.forward(tape, store, x)?;
        let mut h_e = self.edge_encoder.forward(tape, store, e)?;
        for (f_e, f_v) in self.edge_updates.iter().zip(&self.node_updates) {
            let src = tape.gather_rows(h_v, graph.senders.clone())?;
            let dst = tape.gather_rows(h_v, graph.receivers.clone())?;
            let edge_in = tape.concat_cols(&[src, dst, h_e])?;
            let de = f_e.forward(tape, store, edge_in)?;
            h_e = tape.add(h_e, de)?;
            let agg =
                tape.segment_reduce(h_e, graph.receivers.clone(), graph.n_nodes, Reduce::Mean)?;
            let node_in = tape.concat_cols(&[h_v, agg])?;
            let dv = f_v.forward(tape, store, node_in)?;
            h_v = tape.add(h_v, dv)?;
        }
        Ok(h_v)
    }

    pub fn decode<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        h_v: Var,
    ) -> Result<Var> {
        self.decoder.forward(tape, store, h_v)
    }

    /// Number of scalar parameters excluding input statistics.
    pub fn n_parameters<T: Scalar>(&self, store: &ParamStore<T>) -> usize {
        store
            .iter()
            .filter(|(name, _)| name.starts_with(&format!("{}.", self.prefix)))
            .map(|(_, t)| t.len())
            .sum()
    }
}

fn column_stats(rows: &[&Tensor<f64>], width: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut sum = vec![0.0; width];
    let mut sq = vec![0.0; width];
    let mut n = 0usize;
    for t in rows {
        if t.cols() != width {
            return Err(Error::config(format!(
                "feature rows have {} columns, expected {width}",
                t.cols()
            )));
        }
        for r in 0..t.rows() {
            for (j, &v) in t.row(r).iter().enumerate() {
                sum[j] += v;
                sq[j] += v * v;
            }
        }
        n += t.rows();
    }
    if n == 0 {
        return Ok((vec![0.0; width], vec![1.0; width]));
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
    let std = sq
        .iter()
        .zip(&mean)
        .map(|(s, m)| {
            let var = (s / n as f64 - m * m).max(0.0);
            if var.sqrt() < 1e-8 {
                1.0
            } else {
                var.sqrt()
            }
        })
        .collect();
    Ok((mean, std))
}
