//! Episodic training: one trajectory per update, Adam, validation-based
//! checkpoint selection and a single NaN recovery.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::trajectory_mse;
use crate::meshgraph::Episode;
use crate::model::Model;
use crate::numerics::params::STATS_PREFIX;
use crate::numerics::{ParamStore, Scalar, Tape};
use crate::trajectory::ContextSet;

/// Adam with bias correction; moments kept in f64. Standardisation entries are frozen.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    moments: HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            moments: HashMap::new(),
        }
    }

    pub fn reset(&mut self) {
        self.t = 0;
        self.moments.clear();
    }

    pub fn step<T: Scalar>(&mut self, store: &mut ParamStore<T>) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, value, grad) in store.iter_with_grad_mut() {
            if name.starts_with(STATS_PREFIX) {
                continue;
            }
            let (m, v) = self
                .moments
                .entry(name.to_string())
                .or_insert_with(|| (vec![0.0; grad.len()], vec![0.0; grad.len()]));
            for (i, (p, g)) in value.data_mut().iter_mut().zip(grad.data()).enumerate() {
                let g = g.as_f64();
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let update = self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
                *p = T::from_f64(p.as_f64() - update);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Smallest sampled context size `T_min`; also the validation context size.
    pub context_min: usize,
    pub context_max: usize,
    pub eval_every: usize,
    /// Transitions per update for step-based models.
    pub batch_transitions: usize,
    /// Validate on at most this many validation trajectories.
    pub val_limit: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 5e-4,
            epochs: 50,
            seed: 0,
            context_min: 2,
            context_max: 15,
            eval_every: 5,
            batch_transitions: 8,
            val_limit: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n_frames: usize) -> Result<()> {
        if !(2 <= self.context_min
            && self.context_min <= self.context_max
            && self.context_max < n_frames)
        {
            return Err(Error::config(format!(
                "context bounds {}..={} must satisfy 2 ≤ T_min ≤ T_max < {n_frames}",
                self.context_min, self.context_max
            )));
        }
        if !(self.lr > 0.0) || self.eval_every == 0 || self.batch_transitions == 0 {
            return Err(Error::config(format!(
                "lr {}, eval-every {} and batch size {} must be positive",
                self.lr, self.eval_every, self.batch_transitions
            )));
        }
        Ok(())
    }
}

/// One row of the loss curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mse: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub curve: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_mse: Option<f64>,
    /// How often each context size was sampled.
    pub context_counts: BTreeMap<usize, usize>,
    pub updates: usize,
    pub nan_recoveries: usize,
}

impl TrainReport {
    pub fn write_curve(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let fail = |e: csv::Error| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        };
        let mut w = csv::Writer::from_path(path).map_err(fail)?;
        for r in &self.curve {
            w.serialize(r).map_err(fail)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Mean of squared differences; the slices hold the same window of two trajectories.
pub fn compute_loss(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::contract(format!(
            "loss over {} predicted and {} true values",
            pred.len(),
            truth.len()
        )));
    }
    Ok(pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t).powi(2))
        .sum::<f64>()
        / pred.len() as f64)
}

/// Fresh parameters with standardisation fitted on `train`.
pub fn init_params<T: Scalar>(
    model: &Model,
    train: &[Episode],
    seed: u64,
) -> Result<ParamStore<T>> {
    let mut store = ParamStore::default();
    model.init(&mut store, &mut ChaCha8Rng::seed_from_u64(seed))?;
    model.fit_stats(&mut store, train)?;
    Ok(store)
}

/// Loss of one update on `ep`, with gradients accumulated into `store`.
/// Returns the loss and the sampled context size (step-based models sample none).
pub fn loss_and_grad<T: Scalar, R: Rng + ?Sized>(
    model: &Model,
    store: &mut ParamStore<T>,
    ep: &Episode,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<(f64, Option<usize>)> {
    let mut tape = Tape::new();
    let (loss, context) = match model {
        Model::M3gn(m) => {
            let c = rng.random_range(cfg.context_min..=cfg.context_max);
            (m.loss(&mut tape, store, &ContextSet::new(ep, c)?)?, Some(c))
        }
        Model::Mgn(m) => {
            let batch = (0..cfg.batch_transitions)
                .map(|_| {
                    let t = rng.random_range(0..ep.n_frames - 1);
                    m.transition(ep, t, rng)
                })
                .collect::<Result<Vec<_>>>()?;
            (m.loss(&mut tape, store, ep, &batch)?, None)
        }
    };
    let value = tape.value(loss).data()[0].as_f64();
    if value.is_finite() {
        tape.backward(loss, store)?;
    }
    Ok((value, context))
}

/// Mean full-rollout MSE at `n_context`; diverged rollouts score infinity.
pub fn validation_mse<T: Scalar>(
    model: &Model,
    store: &ParamStore<T>,
    episodes: &[Episode],
    n_context: usize,
) -> Result<f64> {
    let mut total = 0.0;
    for ep in episodes {
        let p = model.predict(store, &ContextSet::new(ep, n_context)?)?;
        total += trajectory_mse(&p, ep)?.unwrap_or(f64::INFINITY);
    }
    Ok(total / episodes.len().max(1) as f64)
}

fn all_finite<T: Scalar>(store: &ParamStore<T>) -> bool {
    store
        .iter()
        .all(|(_, t)| t.data().iter().all(|x| x.as_f64().is_finite()))
}

/// Trains `store` in place. With a validation set, the parameters of the best
/// validation epoch are restored at the end.
pub fn train<T: Scalar>(
    model: &Model,
    store: &mut ParamStore<T>,
    train_set: &[Episode],
    val_set: &[Episode],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    let first = train_set
        .first()
        .ok_or_else(|| Error::contract("empty training split"))?;
    cfg.validate(first.n_frames)?;
    let val_set = &val_set[..cfg.val_limit.unwrap_or(val_set.len()).min(val_set.len())];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.lr);
    let mut report = TrainReport::default();
    let mut last_good = store.clone();
    let mut best: Option<ParamStore<T>> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut n = 0usize;
        for &i in &order {
            store.zero_grad();
            let (loss, context) = loss_and_grad(model, store, &train_set[i], cfg, &mut rng)?;
            if loss.is_finite() {
                adam.step(store);
            }
            if !loss.is_finite() || !all_finite(store) {
                if report.nan_recoveries > 0 {
                    return Err(Error::Numeric(format!(
                        "non-finite loss again in epoch {epoch} after halving the learning rate"
                    )));
                }
                report.nan_recoveries += 1;
                adam.lr *= 0.5;
                adam.reset();
                store.load_values_from(&last_good)?;
                log::warn!(
                    "non-finite loss in epoch {epoch}; learning rate halved to {}",
                    adam.lr
                );
                continue;
            }
            if let Some(c) = context {
                *report.context_counts.entry(c).or_default() += 1;
            }
            report.updates += 1;
            sum += loss;
            n += 1;
        }
        let train_loss = if n > 0 { sum / n as f64 } else { f64::NAN };
        last_good = store.clone();
        let val_mse = if !val_set.is_empty() && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs)
        {
            let v = validation_mse(model, store, val_set, cfg.context_min)?;
            if report.best_val_mse.is_none_or(|b| v < b) {
                report.best_val_mse = Some(v);
                report.best_epoch = Some(epoch);
                best = Some(store.clone());
            }
            Some(v)
        } else {
            None
        };
        log::info!(
            "{} epoch {epoch}: train loss {train_loss:.4e}{}",
            model.label(),
            val_mse
                .map(|v| format!(", val mse {v:.4e}"))
                .unwrap_or_default()
        );
        report.curve.push(EpochRecord {
            epoch,
            train_loss,
            val_mse,
            lr: adam.lr,
        });
    }
    if let Some(b) = best {
        store.load_values_from(&b)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::m3gn::tests::toy_episode;
    use crate::m3gn::M3gnConfig;
    use crate::mgn::MgnConfig;
    use crate::model::ModelSpec;
    use crate::prodmp::ProDmpConfig;

    fn small_m3gn() -> ModelSpec {
        ModelSpec::M3gn(M3gnConfig {
            latent: 16,
            steps: 2,
            latent_task: 8,
            tau_hidden: 8,
            weight_head_scale: 0.1,
            radius: 0.5,
            prodmp: ProDmpConfig {
                n_weights: 4,
                ..ProDmpConfig::default()
            },
        })
    }

    fn small_mgn() -> ModelSpec {
        ModelSpec::Mgn(MgnConfig {
            latent: 16,
            steps: 2,
            radius: 0.5,
            ..MgnConfig::default()
        })
    }

    fn cfg(epochs: usize, c: usize) -> TrainConfig {
        TrainConfig {
            lr: 1e-3,
            epochs,
            context_min: c,
            context_max: c,
            eval_every: 10,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn compute_loss_reference_values() {
        let truth: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        assert_eq!(compute_loss(&truth, &truth).unwrap(), 0.0);
        let shifted: Vec<f64> = truth.iter().map(|x| x + 1.0).collect();
        assert!((compute_loss(&shifted, &truth).unwrap() - 1.0).abs() < 1e-15);
        // 2×3×2 tensors against scripted arithmetic.
        let pred: Vec<f64> = (0..12).map(|i| (i as f64 * 1.3).cos()).collect();
        let mut script = 0.0;
        for t in 0..2 {
            for v in 0..3 {
                for d in 0..2 {
                    let k = (t * 3 + v) * 2 + d;
                    script += (pred[k] - truth[k]) * (pred[k] - truth[k]);
                }
            }
        }
        assert!((compute_loss(&pred, &truth).unwrap() - script / 12.0).abs() < 1e-15);
        assert!(matches!(
            compute_loss(&pred[..5], &truth),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn config_bounds_are_checked() {
        assert!(cfg(1, 3).validate(8).is_ok());
        assert!(cfg(1, 1).validate(8).is_err());
        assert!(cfg(1, 8).validate(8).is_err());
        let mut c = cfg(1, 3);
        c.context_max = 2;
        assert!(c.validate(8).is_err());
    }

    #[test]
    fn memorizes_a_single_trajectory() {
        let ep = toy_episode();
        let model = Model::build(&small_m3gn(), &ep).unwrap();
        let mut store = init_params::<f32>(&model, std::slice::from_ref(&ep), 0).unwrap();
        let report = train(
            &model,
            &mut store,
            std::slice::from_ref(&ep),
            &[],
            &cfg(200, 3),
        )
        .unwrap();
        let first = report.curve[0].train_loss;
        let last = report.curve.last().unwrap().train_loss;
        assert!(last * 10.0 <= first, "loss {first:.3e} → {last:.3e}");
    }

    #[test]
    fn fixed_seed_reproduces_the_curve() {
        let ep = toy_episode();
        let eps = vec![ep.clone(), ep.translated(&[0.1, 0.0])];
        for spec in [small_m3gn(), small_mgn()] {
            let model = Model::build(&spec, &ep).unwrap();
            let run = || {
                let mut store = init_params::<f32>(&model, &eps, 4).unwrap();
                let mut c = cfg(6, 2);
                c.context_max = 5;
                c.eval_every = 2;
                let r = train(&model, &mut store, &eps, &eps[..1], &c).unwrap();
                (r, store.to_bytes())
            };
            let (a, sa) = run();
            let (b, sb) = run();
            assert_eq!(a, b);
            assert_eq!(sa, sb);
        }
    }

    #[test]
    fn equal_context_bounds_fix_every_batch() {
        let ep = toy_episode();
        let model = Model::build(&small_m3gn(), &ep).unwrap();
        let mut store = init_params::<f32>(&model, std::slice::from_ref(&ep), 0).unwrap();
        let r = train(
            &model,
            &mut store,
            std::slice::from_ref(&ep),
            &[],
            &cfg(12, 4),
        )
        .unwrap();
        assert_eq!(r.context_counts, BTreeMap::from([(4, 12)]));
        assert_eq!(r.updates, 12);
    }

    #[test]
    fn sampled_context_sizes_cover_the_range() {
        let ep = toy_episode();
        let model = Model::build(&small_m3gn(), &ep).unwrap();
        let mut store = init_params::<f32>(&model, std::slice::from_ref(&ep), 0).unwrap();
        let mut c = cfg(60, 2);
        c.context_max = 6;
        let r = train(&model, &mut store, std::slice::from_ref(&ep), &[], &c).unwrap();
        assert_eq!(
            r.context_counts.keys().copied().collect::<Vec<_>>(),
            vec![2, 3, 4, 5, 6]
        );
    }

    #[test]
    fn one_step_reaches_every_parameter() {
        let ep = toy_episode();
        for spec in [small_m3gn(), small_mgn()] {
            let model = Model::build(&spec, &ep).unwrap();
            let mut store = init_params::<f64>(&model, std::slice::from_ref(&ep), 1).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            loss_and_grad(&model, &mut store, &ep, &cfg(1, 4), &mut rng).unwrap();
            let names: Vec<String> = store.names().map(str::to_string).collect();
            for name in names.iter().filter(|n| !n.starts_with(STATS_PREFIX)) {
                let g = store.grad(name).unwrap();
                assert!(
                    g.data().iter().any(|&x| x != 0.0),
                    "{} has zero gradient in {name}",
                    spec.label()
                );
            }
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut store = ParamStore::<f64>::default();
        store
            .insert(
                "w",
                crate::numerics::Tensor::from_f64(&[1, 2], &[1.0, -1.0]).unwrap(),
            )
            .unwrap();
        store
            .insert(
                "stats.s",
                crate::numerics::Tensor::from_f64(&[1, 1], &[3.0]).unwrap(),
            )
            .unwrap();
        let mut tape = Tape::new();
        let w = tape.param(&store, "w").unwrap();
        let s = tape.param(&store, "stats.s").unwrap();
        let sq = tape.square(w);
        let a = tape.sum_all(sq);
        let b = tape.sum_all(s);
        let loss = tape.add(a, b).unwrap();
        tape.backward(loss, &mut store).unwrap();
        let mut adam = Adam::new(0.1);
        adam.step(&mut store);
        let w = store.get("w").unwrap().data().to_vec();
        assert!(
            (w[0] - 0.9).abs() < 1e-9 && (w[1] + 0.9).abs() < 1e-9,
            "{w:?}"
        );
        assert_eq!(store.get("stats.s").unwrap().data(), &[3.0]);
    }

    #[test]
    fn best_validation_epoch_is_restored() {
        let ep = toy_episode();
        let model = Model::build(&small_m3gn(), &ep).unwrap();
        let mut store = init_params::<f32>(&model, std::slice::from_ref(&ep), 0).unwrap();
        let mut c = cfg(8, 2);
        c.eval_every = 2;
        let r = train(
            &model,
            &mut store,
            std::slice::from_ref(&ep),
            std::slice::from_ref(&ep),
            &c,
        )
        .unwrap();
        let best = r.best_val_mse.unwrap();
        assert_eq!(r.curve.iter().filter(|e| e.val_mse.is_some()).count(), 4);
        assert!(r.curve.iter().filter_map(|e| e.val_mse).all(|v| v >= best));
        let again = validation_mse(&model, &store, std::slice::from_ref(&ep), 2).unwrap();
        assert_eq!(again, best);
    }

    #[test]
    fn repeated_non_finite_loss_aborts() {
        let ep = toy_episode();
        let model = Model::build(&small_mgn(), &ep).unwrap();
        let mut store = init_params::<f32>(&model, std::slice::from_ref(&ep), 0).unwrap();
        let mut c = cfg(20, 2);
        c.lr = 1e37;
        let err = train(&model, &mut store, std::slice::from_ref(&ep), &[], &c).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)), "{err}");
    }

    #[test]
    fn curve_csv_has_one_row_per_epoch() {
        let report = TrainReport {
            curve: vec![
                EpochRecord {
                    epoch: 1,
                    train_loss: 0.5,
                    val_mse: None,
                    lr: 5e-4,
                },
                EpochRecord {
                    epoch: 2,
                    train_loss: 0.25,
                    val_mse: Some(0.3),
                    lr: 5e-4,
                },
            ],
            ..TrainReport::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curve.csv");
        report.write_curve(&path).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert_eq!(
            text,
            "epoch,train_loss,val_mse,lr\n1,0.5,,0.0005\n2,0.25,0.3,0.0005\n"
        );
    }
}
