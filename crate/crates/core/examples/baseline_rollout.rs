//! Trains the step-wise MGN baseline briefly and shows how its one-step
//! error compounds over an autoregressive rollout.

use m3gn::datagen::{generate, GenConfig, Task};
use m3gn::eval::evaluate;
use m3gn::meshgraph::Split;
use m3gn::mgn::MgnConfig;
use m3gn::model::{Model, ModelSpec};
use m3gn::trainer::{init_params, train, TrainConfig};

fn main() -> m3gn::Result<()> {
    let data = generate(&GenConfig {
        n: 40,
        n_ood: 0,
        seed: 5,
        ..GenConfig::new(Task::Block)
    })?
    .into_dataset();
    let train_set = data.episodes(Split::Train);
    let spec = ModelSpec::Mgn(MgnConfig {
        latent: 32,
        steps: 3,
        ..MgnConfig::default()
    });
    let model = Model::build(&spec, &train_set[0])?;
    let cfg = TrainConfig {
        epochs: 3,
        ..TrainConfig::default()
    };
    let mut params = init_params::<f32>(&model, &train_set, 0)?;
    train(&model, &mut params, &train_set, &[], &cfg)?;
    let report = evaluate(
        &model,
        &params,
        &data.episodes(Split::Test),
        &[2],
        "test",
        0,
        1,
    )?;
    let r = &report.results[0];
    println!(
        "full-rollout mse {:.4e}, {} of {} diverged",
        r.mse, r.n_diverged, r.n_trajectories
    );
    for (k, e) in r.per_timestep.iter().enumerate().step_by(5) {
        println!("step {:>3}: {:.3e}", k + 1, e);
    }
    Ok(())
}
