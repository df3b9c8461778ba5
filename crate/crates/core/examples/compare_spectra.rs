//! Theory from the spectrum of a data matrix on disk against features built
//! on the same data. The data have a bimodal per-feature variance.

use rfmix::density::{density_from_sce, l1_distance, DensityOptions, Histogram};
use rfmix::laws::{empirical_law_from_matrix, ShapeParams, SpectralLaw};
use rfmix::moments::{compute_moments, ActivationFamily, ActivationSpec, BiasLaw};
use rfmix::risk::TaskSpec;
use rfmix::sce::SceProblem;
use rfmix::simulate::matrix_io::{ingest_matrix, write_rfm1, MatrixFormat};
use rfmix::simulate::{generate_data, generate_features_on, DataSpec, SimConfig};

fn main() -> rfmix::Result<()> {
    let (m, n0, n1) = (1024, 1536, 1920);
    let spec = ActivationSpec::new(ActivationFamily::Relu, BiasLaw::Gaussian { sigma: 1.0 });
    let mut cfg = SimConfig::gaussian(m, n0, n1, 5, spec.clone(), TaskSpec::autoencoder(1.0, 0.0, 1.0));
    cfg.data = DataSpec::Bimodal { low: 0.5, high: 1.5, high_fraction: 0.5 };

    let dir = std::env::temp_dir().join("rfmix-compare-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("bimodal.rfm");
    write_rfm1(&path, generate_data(&cfg)?.as_ref())?;

    let x = ingest_matrix(&path, MatrixFormat::Auto, true, false)?;
    let law = empirical_law_from_matrix(x.as_ref(), false)?;
    let SpectralLaw::Empirical { eigenvalues } = &law else { unreachable!() };
    let sigma_x = (eigenvalues.iter().sum::<f64>() / m as f64).sqrt();
    let spec = ActivationSpec { sigma_x, ..spec };
    println!("data: {n0} x {m}, largest eigenvalue {:.3}, sigma_x {sigma_x:.4}", eigenvalues[m - 1]);

    let shape = ShapeParams::new(n0 as f64 / m as f64, n0 as f64 / n1 as f64)?;
    let problem = SceProblem::new(compute_moments(&spec)?, law, shape)?;
    let curve = density_from_sce(&problem, &DensityOptions::default())?;
    cfg.activation = spec;
    let ev = generate_features_on(&cfg, x)?.kernel_spectrum()?;
    let hist = Histogram::matching(&curve, &ev, 64)?;
    println!("L1 between theory and simulation: {:.4}", l1_distance(&curve, &hist)?);
    Ok(())
}
