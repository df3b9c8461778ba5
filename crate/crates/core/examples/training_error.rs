//! Predicted training error of ridge regression on random features for a
//! noisy autoencoder, against simulations sharing one eigendecomposition per
//! seed.

use rfmix::laws::{ShapeParams, SpectralLaw};
use rfmix::moments::{compute_moments, ActivationFamily, ActivationSpec, BiasLaw};
use rfmix::risk::{predict_train_error, TaskSpec};
use rfmix::sce::SceProblem;
use rfmix::simulate::{generate_features, kernel_eigen, train_error_sweep, SimConfig};

fn main() -> rfmix::Result<()> {
    let spec = ActivationSpec::new(ActivationFamily::Relu, BiasLaw::Gaussian { sigma: 1.0 }).normalized();
    let shape = ShapeParams::new(0.5, 0.5)?;
    let problem = SceProblem::new(compute_moments(&spec)?, SpectralLaw::marchenko_pastur(shape.phi, 1.0), shape)?;
    let gammas = [0.01, 0.05, 0.2, 1.0, 5.0];
    let (sigma_a, sigma_eps) = (1.0, 0.2);

    let (m, seeds) = (768, 3);
    let mut mc = vec![0.0; gammas.len()];
    for seed in 0..seeds {
        let cfg = SimConfig::gaussian(m, m / 2, m, seed, spec.clone(), TaskSpec::autoencoder(sigma_a, sigma_eps, 1.0));
        let sim = generate_features(&cfg)?;
        let eig = kernel_eigen(sim.f.as_ref())?;
        for (acc, p) in mc.iter_mut().zip(train_error_sweep(&eig, sim.targets().y.as_ref(), &gammas)?) {
            *acc += p.e_train / seeds as f64;
        }
    }

    println!("{:>8} {:>10} {:>10} {:>8}", "gamma", "theory", "sim", "rel");
    for (g, sim) in gammas.iter().zip(&mc) {
        let th = predict_train_error(&problem, &TaskSpec::autoencoder(sigma_a, sigma_eps, *g))?.e_train;
        println!("{g:>8} {th:>10.5} {sim:>10.5} {:>+8.4}", sim / th - 1.0);
    }
    Ok(())
}
