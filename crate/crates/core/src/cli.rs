//! Command-line surface. Every option can also come from a TOML file passed
//! with `--config`, one table per subcommand (`[gen-data]`, `[train]`, ...);
//! flags override the file, which overrides the built-in defaults.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::datagen::{generate, write_dataset, GenConfig, Task};
use crate::error::{Error, Result};
use crate::eval::{
    bench_model, dump_latents, evaluate, median, write_bench, write_csv, write_json, EvalReport,
    BENCH_REPEATS, DEFAULT_CONTEXT_SIZES,
};
use crate::m3gn::M3gnConfig;
use crate::meshgraph::{Dataset, Episode, Split};
use crate::mgn::{MaterialFeature, MgnConfig};
use crate::model::{Checkpoint, Model, ModelSpec};
use crate::prodmp::{oracle_suite, BasisTables, ProDmpConfig};
use crate::trainer::{init_params, train, TrainConfig};
use crate::trajectory::ContextSet;

#[derive(Debug, Parser)]
#[command(
    name = "m3gn",
    version,
    about = "Trajectory-level meta-learning for mesh simulation"
)]
pub struct Cli {
    /// TOML file with one table of options per subcommand.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a synthetic dataset.
    GenData(GenDataArgs),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// Full-rollout metrics over context sizes.
    Eval(EvalArgs),
    /// Predict one trajectory and write it as CSV.
    Rollout(RolloutArgs),
    /// Compare generated primitives against the ODE oracle.
    ProdmpCheck(ProdmpCheckArgs),
    /// Rollout wall-clock and call counts over horizons.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    M3gn,
    Mgn,
    /// MGN with the log material parameter as an extra node input.
    MgnOracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SplitArg {
    Train,
    Val,
    Test,
    Ood,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
            SplitArg::Ood => Split::Ood,
        }
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct GenDataArgs {
    #[arg(long, value_enum)]
    pub task: Option<Task>,
    /// In-distribution trajectories (train + val + test).
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    pub kappa_set: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub ood_kappa: Option<Vec<f64>>,
    #[arg(long)]
    pub n_ood: Option<usize>,
    #[arg(long)]
    pub n_frames: Option<usize>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Latent width of every message-passing network.
    #[arg(long)]
    pub latent: Option<usize>,
    /// Message-passing steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Width of the task descriptor (M3GN).
    #[arg(long)]
    pub latent_task: Option<usize>,
    #[arg(long)]
    pub context_min: Option<usize>,
    #[arg(long)]
    pub context_max: Option<usize>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Transitions per update (MGN).
    #[arg(long)]
    pub batch_transitions: Option<usize>,
    /// Input noise standard deviation (MGN).
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub val_limit: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct EvalArgs {
    /// Checkpoint directory; with `--seeds`, `{seed}` in the path is replaced per seed.
    #[arg(long)]
    pub checkpoint: Option<String>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub split: Option<SplitArg>,
    #[arg(long, value_delimiter = ',')]
    pub context_sizes: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// CSV path for the task latents (M3GN only), taken at the first context size.
    #[arg(long)]
    pub dump_latents: Option<PathBuf>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct RolloutArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Trajectory id as listed in the manifest.
    #[arg(long)]
    pub trajectory: Option<usize>,
    #[arg(long)]
    pub context: Option<usize>,
    /// Write normalized coordinates instead of world coordinates.
    #[arg(long)]
    pub normalized: Option<bool>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ProdmpCheckArgs {
    #[arg(long, value_delimiter = ',')]
    pub taus: Option<Vec<f64>>,
    /// Random cases per execution speed.
    #[arg(long)]
    pub cases: Option<u64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub forcing_scale: Option<f64>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',')]
    pub checkpoints: Option<Vec<PathBuf>>,
    #[arg(long, value_enum)]
    pub task: Option<Task>,
    #[arg(long, value_delimiter = ',')]
    pub horizons: Option<Vec<usize>>,
    #[arg(long)]
    pub context: Option<usize>,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn section_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::GenData(_) => "gen-data",
        Command::Train(_) => "train",
        Command::Eval(_) => "eval",
        Command::Rollout(_) => "rollout",
        Command::ProdmpCheck(_) => "prodmp-check",
        Command::Bench(_) => "bench",
    }
}

/// Overlays the flags that were given onto the matching table of the config file.
pub fn layered<A: Serialize + DeserializeOwned>(
    flags: &A,
    file: Option<&toml::Table>,
    section: &str,
) -> Result<A> {
    let bad = |reason: String| Error::config(format!("[{section}]: {reason}"));
    let mut merged = match file.and_then(|t| t.get(section)) {
        Some(v) => serde_json::to_value(v).map_err(|e| bad(e.to_string()))?,
        None => serde_json::Value::Object(Default::default()),
    };
    let given = serde_json::to_value(flags).map_err(|e| bad(e.to_string()))?;
    let (Some(base), Some(over)) = (merged.as_object_mut(), given.as_object()) else {
        return Err(bad("expected a table".into()));
    };
    for (k, v) in over {
        if !v.is_null() {
            base.insert(k.clone(), v.clone());
        }
    }
    serde_json::from_value(merged).map_err(|e| bad(e.to_string()))
}

fn read_config(path: &Path) -> Result<toml::Table> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.parse::<toml::Table>().map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn required<T>(v: Option<T>, flag: &str) -> Result<T> {
    v.ok_or_else(|| Error::config(format!("--{flag} is required")))
}

pub fn run(cli: Cli) -> Result<()> {
    let file = cli.config.as_deref().map(read_config).transpose()?;
    let section = section_name(&cli.command);
    let file = file.as_ref();
    match &cli.command {
        Command::GenData(a) => gen_data(layered(a, file, section)?),
        Command::Train(a) => train_cmd(layered(a, file, section)?),
        Command::Eval(a) => eval_cmd(layered(a, file, section)?),
        Command::Rollout(a) => rollout_cmd(layered(a, file, section)?),
        Command::ProdmpCheck(a) => prodmp_check(layered(a, file, section)?),
        Command::Bench(a) => bench_cmd(layered(a, file, section)?),
    }
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let defaults = GenConfig::new(a.task.unwrap_or(Task::Block));
    let cfg = GenConfig {
        n: a.n.unwrap_or(defaults.n),
        seed: a.seed.unwrap_or(defaults.seed),
        kappa_set: a.kappa_set.unwrap_or(defaults.kappa_set.clone()),
        ood_kappa: a.ood_kappa.unwrap_or(defaults.ood_kappa.clone()),
        n_ood: a.n_ood.unwrap_or(defaults.n_ood),
        n_frames: a.n_frames.or(defaults.n_frames),
        threads: a.threads.unwrap_or(defaults.threads),
        ..defaults
    };
    let out = required(a.out, "out")?;
    let ds = write_dataset(&out, &generate(&cfg)?)?;
    let count = |s| ds.manifest.indices(s).len();
    println!(
        "{} dataset at {}: {} train, {} val, {} test, {} ood; {} frames, {} nodes",
        cfg.task.name(),
        out.display(),
        count(Split::Train),
        count(Split::Val),
        count(Split::Test),
        count(Split::Ood),
        ds.manifest.n_frames,
        ds.manifest.n_nodes()
    );
    Ok(())
}

fn model_spec(kind: ModelKind, a: &TrainArgs, sheet: bool) -> ModelSpec {
    match kind {
        ModelKind::M3gn => {
            let d = M3gnConfig::default();
            ModelSpec::M3gn(M3gnConfig {
                latent: a.latent.unwrap_or(d.latent),
                steps: a.steps.unwrap_or(d.steps),
                latent_task: a.latent_task.unwrap_or(d.latent_task),
                ..d
            })
        }
        ModelKind::Mgn | ModelKind::MgnOracle => {
            let d = MgnConfig::default();
            ModelSpec::Mgn(MgnConfig {
                latent: a.latent.unwrap_or(d.latent),
                steps: a.steps.unwrap_or(d.steps),
                noise_sigma: a.noise.unwrap_or(if sheet { 1e-4 } else { d.noise_sigma }),
                material: if kind == ModelKind::MgnOracle {
                    MaterialFeature::Oracle
                } else {
                    MaterialFeature::Off
                },
                ..d
            })
        }
    }
}

fn load_split(data: &Path, split: Split) -> Result<(Dataset, Vec<Episode>)> {
    let ds = Dataset::load(data)?;
    let eps = ds.episodes(split);
    if eps.is_empty() {
        return Err(Error::contract(format!(
            "{} has no {split:?} trajectories",
            data.display()
        )));
    }
    Ok((ds, eps))
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let kind = a.model.unwrap_or(ModelKind::M3gn);
    let data = required(a.data.clone(), "data")?;
    let out = required(a.out.clone(), "out")?;
    let (ds, train_set) = load_split(&data, Split::Train)?;
    let val = ds.episodes(Split::Val);
    let d = TrainConfig::default();
    let sheet = ds.manifest.task == Task::Sheet.name();
    // Trajectory-level models train the sheet task with a smaller step.
    let lr = if sheet && kind == ModelKind::M3gn {
        1e-5
    } else {
        d.lr
    };
    let cfg = TrainConfig {
        lr: a.lr.unwrap_or(lr),
        epochs: a.epochs.unwrap_or(d.epochs),
        seed: a.seed.unwrap_or(d.seed),
        context_min: a.context_min.unwrap_or(d.context_min),
        context_max: a.context_max.unwrap_or(d.context_max),
        eval_every: a.eval_every.unwrap_or(d.eval_every),
        batch_transitions: a.batch_transitions.unwrap_or(d.batch_transitions),
        val_limit: a.val_limit.or(d.val_limit),
    };
    let spec = model_spec(kind, &a, sheet);
    let model = Model::build(&spec, &train_set[0])?;
    let mut params = init_params::<f32>(&model, &train_set, cfg.seed)?;
    let report = train(&model, &mut params, &train_set, &val, &cfg)?;
    Checkpoint { spec, params }.save(&out)?;
    report.write_curve(out.join("loss_curve.csv"))?;
    write_json(&out.join("train_report.json"), &report)?;
    write_json(&out.join("train_config.json"), &cfg)?;
    println!(
        "trained {} for {} epochs ({} updates); best validation MSE {} at epoch {}; checkpoint in {}",
        model.label(),
        cfg.epochs,
        report.updates,
        report.best_val_mse.map_or("n/a".into(), |v| format!("{v:.4e}")),
        report.best_epoch.map_or("n/a".into(), |e| e.to_string()),
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct SeedSummaryRow {
    model: String,
    context_size: usize,
    n_seeds: usize,
    median_mse: f64,
    min_mse: f64,
    max_mse: f64,
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let template = required(a.checkpoint, "checkpoint")?;
    let data = required(a.data, "data")?;
    let out = required(a.out, "out")?;
    let split = a.split.unwrap_or(SplitArg::Test);
    let (ds, episodes) = load_split(&data, split.into())?;
    let t = ds.manifest.n_frames;
    let sizes: Vec<usize> = match a.context_sizes {
        Some(s) => s,
        None => DEFAULT_CONTEXT_SIZES
            .iter()
            .copied()
            .filter(|&c| c < t)
            .collect(),
    };
    if let Some(bad) = sizes.iter().find(|&&c| c < 2 || c >= t) {
        return Err(Error::contract(format!(
            "context size {bad} must lie in [2, {t})"
        )));
    }
    let threads = a
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let seeds = a.seeds.unwrap_or_else(|| vec![0]);
    let split_name = format!("{split:?}").to_lowercase();
    let mut reports: Vec<EvalReport> = Vec::new();
    for &seed in &seeds {
        let dir = PathBuf::from(template.replace("{seed}", &seed.to_string()));
        let ck = Checkpoint::load(&dir)?;
        let model = ck.model(&episodes[0])?;
        let report = evaluate(
            &model,
            &ck.params,
            &episodes,
            &sizes,
            &split_name,
            seed,
            threads,
        )?;
        let stem = format!("eval_{}_{split_name}_seed{seed}", report.model);
        report.write(&out, &stem)?;
        for r in &report.results {
            println!(
                "{} seed {seed} context {:>2}: mse {:.4e} [{:.4e}, {:.4e}], diverged {}/{}",
                report.model,
                r.context_size,
                r.mse,
                r.ci_low,
                r.ci_high,
                r.n_diverged,
                r.n_trajectories
            );
        }
        if let (Some(path), Model::M3gn(m)) = (&a.dump_latents, &model) {
            let path = if seeds.len() > 1 {
                path.with_file_name(format!(
                    "{}_seed{seed}.csv",
                    path.file_stem()
                        .and_then(|s| s.to_str())
                        .unwrap_or("latents")
                ))
            } else {
                path.clone()
            };
            dump_latents(m, &ck.params, &episodes, sizes[0], &path)?;
        }
        reports.push(report);
    }
    if reports.len() > 1 {
        let rows = sizes.iter().enumerate().map(|(i, &c)| {
            let mut v: Vec<f64> = reports.iter().map(|r| r.results[i].mse).collect();
            let median_mse = median(&mut v);
            SeedSummaryRow {
                model: reports[0].model.clone(),
                context_size: c,
                n_seeds: v.len(),
                median_mse,
                min_mse: v[0],
                max_mse: v[v.len() - 1],
            }
        });
        write_csv(
            &out.join(format!("eval_{}_{split_name}_seeds.csv", reports[0].model)),
            rows,
        )?;
    }
    Ok(())
}

fn rollout_cmd(a: RolloutArgs) -> Result<()> {
    let ck = Checkpoint::load(required(a.checkpoint, "checkpoint")?)?;
    let ds = Dataset::load(required(a.data, "data")?)?;
    let out = required(a.out, "out")?;
    let id = a.trajectory.unwrap_or(0);
    let index = ds
        .manifest
        .trajectories
        .iter()
        .position(|m| m.id == id)
        .ok_or_else(|| Error::contract(format!("no trajectory with id {id}")))?;
    let ep = ds.episode(index);
    let ctx = ContextSet::new(&ep, a.context.unwrap_or(2))?;
    let model = ck.model(&ep)?;
    let pred = model.predict(&ck.params, &ctx)?;
    let mut truth = ep.positions[ctx.anchor() * ep.frame_len()..].to_vec();
    let mut positions = pred.positions.clone();
    if !a.normalized.unwrap_or(false) {
        ds.manifest.normalization.denormalize(&mut truth);
        ds.manifest.normalization.denormalize(&mut positions);
    }
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let fail = |e: csv::Error| Error::Format {
        path: out.clone(),
        reason: e.to_string(),
    };
    let mut w = csv::Writer::from_path(&out).map_err(fail)?;
    let axes = ["x", "y", "z"];
    let d = ep.dim;
    let mut header = vec!["frame".to_string(), "node".into(), "kind".into()];
    header.extend(axes[..d].iter().map(|x| format!("pred_{x}")));
    header.extend(axes[..d].iter().map(|x| format!("true_{x}")));
    w.write_record(&header).map_err(fail)?;
    let n = ep.n_nodes();
    for k in 0..pred.n_frames() {
        for v in 0..n {
            let at = (k * n + v) * d;
            let mut rec = vec![
                (pred.anchor + k).to_string(),
                v.to_string(),
                format!("{:?}", ep.kinds[v]).to_lowercase(),
            ];
            rec.extend(positions[at..at + d].iter().map(f64::to_string));
            rec.extend(truth[at..at + d].iter().map(f64::to_string));
            w.write_record(&rec).map_err(fail)?;
        }
    }
    w.flush().map_err(|e| Error::io(&out, e))?;
    println!(
        "{} rollout of trajectory {id} from context {}: {} frames, {} calls, written to {}",
        model.label(),
        ctx.n_context,
        pred.n_frames(),
        pred.calls.total(),
        out.display()
    );
    Ok(())
}

fn prodmp_check(a: ProdmpCheckArgs) -> Result<()> {
    let taus = a.taus.unwrap_or_else(|| vec![0.3, 1.0, 3.0]);
    let tolerance = a.tolerance.unwrap_or(1e-3);
    let tables = BasisTables::new(&ProDmpConfig::default())?;
    let report = oracle_suite(
        &tables,
        &taus,
        a.cases.unwrap_or(10),
        a.forcing_scale.unwrap_or(1.0),
        a.dt.unwrap_or(1e-4),
    )?;
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    for (tau, err) in &report.max_error_by_tau {
        println!("tau {tau}: max abs error {err:.3e}");
    }
    if report.max_error >= tolerance {
        return Err(Error::contract(format!(
            "generated trajectories deviate from the oracle by {:.3e} (tolerance {tolerance:e})",
            report.max_error
        )));
    }
    Ok(())
}

fn bench_cmd(a: BenchArgs) -> Result<()> {
    let checkpoints = required(a.checkpoints, "checkpoints")?;
    let out = required(a.out, "out")?;
    let horizons = a.horizons.unwrap_or_else(|| vec![50, 100, 200]);
    let context = a.context.unwrap_or(20);
    let repeats = a.repeats.unwrap_or(BENCH_REPEATS);
    let task = a.task.unwrap_or(Task::Block);
    let cks = checkpoints
        .iter()
        .map(Checkpoint::load)
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for &h in &horizons {
        let data = generate(&GenConfig {
            n: 1,
            n_ood: 0,
            seed: a.seed.unwrap_or(0),
            n_frames: Some(h),
            threads: 1,
            ..GenConfig::new(task)
        })?
        .into_dataset();
        let ep = data.episode(0);
        for ck in &cks {
            let model = ck.model(&ep)?;
            let row = bench_model(&model, &ck.params, &ep, context, repeats)?;
            println!(
                "{:>10} horizon {:>4}: {:8.2} ms, {} context + {} simulator calls",
                row.model,
                h,
                row.median_seconds * 1e3,
                row.context_calls,
                row.simulator_calls
            );
            rows.push(row);
        }
    }
    write_bench(&rows, &out, "bench")
}
