//! Limiting eigenvalue density of the kernel F^T F / n1 for relu features
//! with a Gaussian or Bernoulli bias, against one seeded simulation.

use rfmix::density::{density_from_sce, l1_distance, DensityOptions, Histogram};
use rfmix::laws::{ShapeParams, SpectralLaw};
use rfmix::moments::{compute_moments, ActivationFamily, ActivationSpec, BiasLaw};
use rfmix::risk::TaskSpec;
use rfmix::sce::SceProblem;
use rfmix::simulate::{generate_features, SimConfig};

fn main() -> rfmix::Result<()> {
    let shape = ShapeParams::new(1.5, 0.8)?;
    let m = 1024;
    for (name, bias) in [("gaussian", BiasLaw::Gaussian { sigma: 1.0 }), ("bernoulli", BiasLaw::Bernoulli { p: 0.5 })] {
        let spec = ActivationSpec::new(ActivationFamily::Relu, bias);
        let problem = SceProblem::new(compute_moments(&spec)?, SpectralLaw::marchenko_pastur(shape.phi, 1.0), shape)?;
        let curve = density_from_sce(&problem, &DensityOptions::default())?;

        let n0 = (shape.phi * m as f64) as usize;
        let n1 = (n0 as f64 / shape.psi) as usize;
        let cfg = SimConfig::gaussian(m, n0, n1, 1, spec, TaskSpec::autoencoder(1.0, 0.0, 1.0));
        let eigenvalues = generate_features(&cfg)?.kernel_spectrum()?;
        let hist = Histogram::matching(&curve, &eigenvalues, 64)?;

        println!("{name} bias: mass {:.4}, support up to {:.3}", curve.total_mass(), curve.grid.last().unwrap());
        for x in [0.05, 0.2, 0.5, 1.0, 1.5] {
            println!("  rho({x:.2}) = {:.4}", curve.value_at(x));
        }
        println!("  L1 vs simulation (m = {m}, 64 bins): {:.4}", l1_distance(&curve, &hist)?);
    }
    Ok(())
}
