//! Gaussian transforms of a few activation families, with and without a
//! random bias, and the Stein identity residual.

use rfmix::moments::{compute_moments, stein_check, ActivationFamily, ActivationSpec, BiasLaw, MixtureSpec};

fn main() -> rfmix::Result<()> {
    let families = [
        ("linear", ActivationFamily::Linear),
        ("relu", ActivationFamily::Relu),
        ("leaky_relu(0.3)", ActivationFamily::LeakyRelu { alpha: 0.3 }),
        ("abs", ActivationFamily::Abs),
        ("erf", ActivationFamily::Erf),
    ];
    println!("{:<16} {:<12} {:>10} {:>10} {:>10}", "family", "bias", "E eta", "E zeta", "stein");
    for (name, fam) in &families {
        for (bname, bias) in [("none", BiasLaw::Dirac { b0: 0.0 }), ("N(0,1)", BiasLaw::Gaussian { sigma: 1.0 })] {
            let spec = ActivationSpec::new(fam.clone(), bias);
            let t = compute_moments(&spec)?;
            let stein = stein_check(&spec, 0.5)?;
            println!("{name:<16} {bname:<12} {:>10.6} {:>10.6} {:>10.1e}", t.mean_eta(), t.mean_zeta(), stein);
        }
    }

    // Normalizing rescales the activation so that E_b eta(b) = 1.
    let spec = ActivationSpec::new(ActivationFamily::Relu, BiasLaw::Gaussian { sigma: 1.0 }).normalized();
    let t = compute_moments(&spec)?;
    println!("\nnormalized relu: E eta = {:.12}, E zeta = {:.6}", t.mean_eta(), t.mean_zeta());

    let mix = compute_moments(&ActivationSpec::mixture(MixtureSpec::balanced(0.999, 0.364)))?;
    println!("balanced mixture p=0.999: E eta = {:.6}, E zeta = {:.6}", mix.mean_eta(), mix.mean_zeta());
    Ok(())
}
