//! Test error of a linear teacher fitted on random features: the best single
//! activation against a Bernoulli mixture of a linear and a nonlinear unit.

use rfmix::laws::ShapeParams;
use rfmix::risk::{mixture_search, optimal_reg_relation, MixtureGrid};

fn main() -> rfmix::Result<()> {
    let shape = ShapeParams::new(0.5, 0.125)?;
    let (sigma_eps_sq, gamma) = (2.0, 0.2);
    let grid = MixtureGrid {
        p_values: vec![0.5, 0.9, 0.99, 0.995, 0.998, 0.999],
        zeta1_values: (0..=20).map(|i| 0.05 * i as f64).collect(),
        single_zetas: (0..=100).map(|i| 0.01 * i as f64).collect(),
    };
    let search = mixture_search(shape, sigma_eps_sq, gamma, &grid)?;
    println!(
        "best single activation: zeta = {:.4}, E_test = {:.5}",
        search.baseline.best_zeta, search.baseline.best_e_test
    );
    println!("five best mixtures:");
    for p in search.ranked.iter().take(5) {
        println!("  p = {:<6} zeta1 = {:<5.2} E_test = {:.5}", p.p, p.zeta1, p.e_test);
    }
    let improving = search.ranked.iter().filter(|p| p.improving).count();
    println!("{improving} of {} grid points beat every single activation", search.ranked.len());

    let r = optimal_reg_relation(1.0, 0.5, sigma_eps_sq)?;
    println!("ridge constant balancing eta = 1, zeta = 0.5: {:.3}", r.gamma);
    Ok(())
}
