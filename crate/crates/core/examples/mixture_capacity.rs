//! Memorization capacity on a noisy autoencoder: a Bernoulli(p) mixture of a
//! linear and a purely nonlinear unit against the best single activation.

use rfmix::laws::ShapeParams;
use rfmix::risk::mixture_train_search;

fn main() -> rfmix::Result<()> {
    let shape = ShapeParams::new(0.5, 0.5)?;
    let grid: Vec<f64> = (0..=50).map(|i| 0.02 * i as f64).collect();
    let rows = mixture_train_search(shape, 1.0, 1.0, &[0.01, 0.1, 0.5, 2.0], &grid, &grid)?;
    println!("{:>6} {:>7} {:>10} {:>7} {:>10} {:>10}", "gamma", "best p", "mixture", "zeta", "single", "gap");
    for r in rows {
        println!(
            "{:>6} {:>7.4} {:>10.6} {:>7.4} {:>10.6} {:>10.2e}",
            r.gamma, r.best_p, r.mixture_e_train, r.best_single_zeta, r.single_e_train, r.gap
        );
    }
    Ok(())
}
