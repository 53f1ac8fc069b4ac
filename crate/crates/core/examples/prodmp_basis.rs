//! Generates one movement primitive from a random weight vector and compares
//! it with forward-Euler integration of the same second-order system.

use m3gn::prodmp::{euler_oracle, generate_trajectory, random_case, BasisTables, ProDmpConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> m3gn::Result<()> {
    let cfg = ProDmpConfig::default();
    let tables = BasisTables::new(&cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (ic, w) = random_case(&cfg, 1.0, &mut rng);
    let tau = 1.0;
    let times: Vec<f64> = (0..=20).map(|i| i as f64 * 0.05).collect();

    let fast = generate_trajectory(&tables, &times, &ic, std::slice::from_ref(&w), tau)?;
    let slow = euler_oracle(&cfg, std::slice::from_ref(&w), &ic, tau, 1e-4, &times)?;

    println!(
        "{:>6} {:>12} {:>12} {:>10}",
        "t", "closed form", "euler", "|diff|"
    );
    for (i, t) in fast.times.iter().enumerate() {
        let (a, b) = (fast.positions[i][0], slow.positions[i][0]);
        println!("{t:>6.2} {a:>12.6} {b:>12.6} {:>10.2e}", (a - b).abs());
    }
    println!("goal {:.4}, start {:.4}", w.goal(), ic.y_b[0]);
    Ok(())
}
