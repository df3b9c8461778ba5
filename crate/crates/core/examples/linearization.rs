//! The nonlinear feature matrix and its two Gaussian linearizations have the
//! same kernel spectrum.

use rfmix::density::Histogram;
use rfmix::moments::{ActivationFamily, ActivationSpec, BiasLaw};
use rfmix::risk::TaskSpec;
use rfmix::simulate::{generate_features, kernel_spectrum, Linearization, SimConfig};

fn main() -> rfmix::Result<()> {
    let spec = ActivationSpec::new(ActivationFamily::Relu, BiasLaw::Gaussian { sigma: 1.0 });
    let cfg = SimConfig::gaussian(1024, 1536, 1920, 11, spec, TaskSpec::autoencoder(1.0, 0.0, 1.0));
    let sim = generate_features(&cfg)?;
    let ev = sim.kernel_spectrum()?;
    for variant in [Linearization::ThetaSigma, Linearization::WeightsData] {
        let lin = kernel_spectrum(sim.linearized(variant)?.as_ref())?;
        let (a, b) = Histogram::pair(&ev, &lin, 32)?;
        println!(
            "{variant:?}: largest eigenvalue {:.4} vs {:.4}, histogram L1 {:.4}",
            ev[ev.len() - 1],
            lin[lin.len() - 1],
            a.l1(&b)?
        );
    }
    Ok(())
}
