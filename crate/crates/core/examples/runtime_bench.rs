//! Times full rollouts of freshly initialized models over growing horizons
//! and counts network calls.

use m3gn::datagen::{generate, GenConfig, Task};
use m3gn::eval::bench_model;
use m3gn::m3gn::M3gnConfig;
use m3gn::mgn::MgnConfig;
use m3gn::model::{Model, ModelSpec};
use m3gn::trainer::init_params;

fn main() -> m3gn::Result<()> {
    let specs = [
        ModelSpec::M3gn(M3gnConfig::default()),
        ModelSpec::Mgn(MgnConfig::default()),
    ];
    println!(
        "{:>6} {:>8} {:>10} {:>8} {:>10}",
        "model", "horizon", "ms", "context", "simulator"
    );
    for horizon in [50, 100, 200] {
        let ep = generate(&GenConfig {
            n: 1,
            n_ood: 0,
            n_frames: Some(horizon),
            ..GenConfig::new(Task::Block)
        })?
        .into_dataset()
        .episode(0);
        for spec in &specs {
            let model = Model::build(spec, &ep)?;
            let params = init_params::<f32>(&model, std::slice::from_ref(&ep), 0)?;
            let row = bench_model(&model, &params, &ep, 20, 3)?;
            println!(
                "{:>6} {:>8} {:>10.2} {:>8} {:>10}",
                row.model,
                horizon,
                row.median_seconds * 1e3,
                row.context_calls,
                row.simulator_calls
            );
        }
    }
    Ok(())
}
