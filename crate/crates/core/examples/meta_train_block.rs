//! Trains a small M3GN on the block task and reports test error as the
//! number of context frames grows.
//!
//! `cargo run --release --example meta_train_block -- [epochs]`

use m3gn::datagen::{generate, GenConfig, Task};
use m3gn::eval::evaluate;
use m3gn::m3gn::M3gnConfig;
use m3gn::meshgraph::Split;
use m3gn::model::{Model, ModelSpec};
use m3gn::trainer::{init_params, train, TrainConfig};

fn main() -> m3gn::Result<()> {
    env_logger::init();
    let epochs = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(4);
    let data = generate(&GenConfig {
        n: 60,
        n_ood: 10,
        seed: 1,
        ..GenConfig::new(Task::Block)
    })?
    .into_dataset();
    let (train_set, val, test) = (
        data.episodes(Split::Train),
        data.episodes(Split::Val),
        data.episodes(Split::Test),
    );
    let spec = ModelSpec::M3gn(M3gnConfig {
        latent: 32,
        steps: 3,
        latent_task: 16,
        ..M3gnConfig::default()
    });
    let model = Model::build(&spec, &train_set[0])?;
    let cfg = TrainConfig {
        epochs,
        eval_every: 2,
        ..TrainConfig::default()
    };
    let mut params = init_params::<f32>(&model, &train_set, cfg.seed)?;
    let report = train(&model, &mut params, &train_set, &val, &cfg)?;
    for r in &report.curve {
        println!(
            "epoch {:>3}: train loss {:.4e} val {:?}",
            r.epoch, r.train_loss, r.val_mse
        );
    }
    let eval = evaluate(&model, &params, &test, &[2, 5, 10, 15], "test", 0, 1)?;
    for r in &eval.results {
        println!(
            "context {:>2}: mse {:.4e} [{:.4e}, {:.4e}]",
            r.context_size, r.mse, r.ci_low, r.ci_high
        );
    }
    let ood = evaluate(
        &model,
        &params,
        &data.episodes(Split::Ood),
        &[5],
        "ood",
        0,
        1,
    )?;
    println!(
        "unseen stiffness, context 5: mse {:.4e}",
        ood.results[0].mse
    );
    Ok(())
}
