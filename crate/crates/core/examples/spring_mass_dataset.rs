//! Simulates a small block dataset, writes it to disk, reloads it and prints
//! per-split statistics.
//!
//! `cargo run --release --example spring_mass_dataset -- [out_dir]`; the
//! default directory is under the system temp dir.

use m3gn::datagen::{generate, write_dataset, GenConfig, Task};
use m3gn::meshgraph::{Dataset, NodeKind, Split};

fn main() -> m3gn::Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "target/example_data/block".into());
    let cfg = GenConfig {
        n: 20,
        n_ood: 4,
        seed: 3,
        ..GenConfig::new(Task::Block)
    };
    write_dataset(&out, &generate(&cfg)?)?;
    let ds = Dataset::load(&out)?;
    let m = &ds.manifest;
    let mesh = m
        .node_kinds
        .iter()
        .filter(|k| **k == NodeKind::Mesh)
        .count();
    println!(
        "{} nodes ({mesh} free mesh, {} collider), {} frames, {} cells",
        m.n_nodes(),
        m.n_collider,
        m.n_frames,
        ds.topology.cells.len()
    );
    for split in [Split::Train, Split::Val, Split::Test, Split::Ood] {
        let eps = ds.episodes(split);
        let mut kappas: Vec<f64> = eps.iter().map(|e| e.kappa).collect();
        kappas.sort_by(f64::total_cmp);
        kappas.dedup();
        let travel: f64 = eps
            .iter()
            .map(|e| {
                let (a, b) = (e.frame(0), e.frame(e.n_frames - 1));
                a.iter()
                    .zip(b)
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        println!(
            "{split:?}: {} trajectories, stiffness {kappas:?}, max node travel {travel:.3}",
            eps.len()
        );
    }
    Ok(())
}
