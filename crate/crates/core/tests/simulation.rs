use faer::Mat;
use rfmix::density::{density_from_sce, l1_distance, DensityOptions, Histogram};
use rfmix::laws::{empirical_law_from_matrix, ShapeParams, SpectralLaw};
use rfmix::linalg;
use rfmix::moments::{compute_moments, ActivationFamily, ActivationSpec, BiasLaw};
use rfmix::risk::TaskSpec;
use rfmix::sce::SceProblem;
use rfmix::simulate::{generate_data, generate_features, kernel_spectrum, Linearization, SimConfig};

fn relu_gaussian() -> ActivationSpec {
    ActivationSpec::new(ActivationFamily::Relu, BiasLaw::Gaussian { sigma: 1.0 })
}

fn cfg(m: usize, n0: usize, n1: usize, seed: u64, spec: ActivationSpec) -> SimConfig {
    SimConfig::gaussian(m, n0, n1, seed, spec, TaskSpec::autoencoder(1.0, 0.1, 0.5))
}

#[test]
fn orthogonal_rows_give_unit_spectrum() {
    let n = 64;
    let f = Mat::<f64>::from_fn(n, n, |i, j| if i == j { (n as f64).sqrt() } else { 0.0 });
    let ev = kernel_spectrum(f.as_ref()).unwrap();
    assert!(ev.iter().all(|v| (v - 1.0).abs() < 1e-12));
}

#[test]
fn iid_data_follows_marchenko_pastur() {
    let c = cfg(2048, 3072, 16, 3, relu_gaussian());
    let x = generate_data(&c).unwrap();
    let SpectralLaw::Empirical { eigenvalues } = empirical_law_from_matrix(x.as_ref(), false).unwrap() else { unreachable!() };
    let mp = SpectralLaw::marchenko_pastur(1.5, 1.0);
    let (a, b) = mp.mp_edges().unwrap();
    let bins = 64;
    let hist = Histogram::from_samples(&eigenvalues, 0.0, b * 1.05, bins).unwrap();
    let w = b * 1.05 / bins as f64;
    // MP mass per bin by midpoint-refined trapezoid.
    let mass = |lo: f64, hi: f64| -> f64 {
        let k = 64;
        (0..k).map(|i| mp.mp_density(lo + (hi - lo) * (i as f64 + 0.5) / k as f64).unwrap_or(0.0) * (hi - lo) / k as f64).sum()
    };
    let l1: f64 = (0..bins).map(|i| (mass(i as f64 * w, (i + 1) as f64 * w) - hist.masses[i]).abs()).sum();
    assert!(a > 0.0);
    assert!(l1 < 0.05, "L1 {l1}");
}

#[test]
fn second_moments_of_features_match_transforms() {
    let c = cfg(256, 2048, 1024, 8, relu_gaussian());
    let sim = generate_features(&c).unwrap();
    let table = &sim.table;
    let (n1, m) = (c.n1, c.m);
    let mut eta_hat = 0.0;
    let mut zeta_hat = 0.0;
    for a in 0..n1 {
        let t = sim.activation.transforms_at(sim.b[a]).unwrap();
        eta_hat += t.eta() / n1 as f64;
        zeta_hat += t.zeta() / n1 as f64;
    }
    assert!((eta_hat - table.mean_eta()).abs() < 0.1);
    let sq: f64 = (0..m).map(|j| (0..n1).map(|a| sim.f[(a, j)].powi(2)).sum::<f64>()).sum::<f64>() / (n1 * m) as f64;
    assert!((sq - eta_hat).abs() < 0.05, "{sq} vs {eta_hat}");

    let xtx = linalg::mul_tn(sim.x.as_ref(), sim.x.as_ref(), 1.0 / c.n0 as f64);
    let mut worst = 0.0f64;
    for (al, be) in [(0, 1), (2, 7), (10, 100), (50, 51)] {
        let cross: f64 = (0..n1).map(|a| sim.f[(a, al)] * sim.f[(a, be)]).sum::<f64>() / n1 as f64;
        worst = worst.max((cross - zeta_hat * xtx[(al, be)]).abs());
    }
    assert!(worst < 0.05, "{worst}");
}

#[test]
fn distinct_rows_are_nearly_uncorrelated() {
    let c = cfg(1024, 512, 400, 9, relu_gaussian());
    let f = generate_features(&c).unwrap().f;
    let m = c.m as f64;
    let corr = |a: usize, b: usize| {
        let (ma, mb) = ((0..c.m).map(|j| f[(a, j)]).sum::<f64>() / m, (0..c.m).map(|j| f[(b, j)]).sum::<f64>() / m);
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for j in 0..c.m {
            let (x, y) = (f[(a, j)] - ma, f[(b, j)] - mb);
            sab += x * y;
            saa += x * x;
            sbb += y * y;
        }
        sab / (saa * sbb).sqrt()
    };
    let pairs: Vec<(usize, usize)> = (0..200).map(|k| (k, 399 - k)).collect();
    let bound = 3.0 / (c.n1 as f64).sqrt();
    let ok = pairs.iter().filter(|&&(a, b)| corr(a, b).abs() < bound).count();
    assert!(ok as f64 >= 0.99 * pairs.len() as f64 - 1.0, "{ok} of {}", pairs.len());
}

#[test]
fn linear_spectrum_scales_quadratically_with_data() {
    let lin = ActivationSpec::single(ActivationFamily::Linear);
    let base = cfg(128, 96, 160, 4, lin.clone());
    let sim = generate_features(&base).unwrap();
    let ev = sim.kernel_spectrum().unwrap();
    let scaled = generate_features(&SimConfig { data: rfmix::simulate::DataSpec::GaussianIid { sigma_x: 3.0 }, ..base }).unwrap();
    let ev3 = scaled.kernel_spectrum().unwrap();
    for (a, b) in ev.iter().zip(&ev3) {
        assert!((9.0 * a - b).abs() < 1e-9 * (1.0 + b), "{a} {b}");
    }
}

#[test]
fn output_does_not_depend_on_thread_count() {
    let c = cfg(300, 200, 500, 42, relu_gaussian());
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| {
            let sim = generate_features(&c).unwrap();
            let r = sim.ridge(0.3).unwrap();
            let ev = sim.kernel_spectrum().unwrap();
            (sim.f, ev, r.e_train_emp)
        })
    };
    let (f1, e1, t1) = run(1);
    let (f4, e4, t4) = run(4);
    assert_eq!(t1.to_bits(), t4.to_bits());
    assert!(e1.iter().zip(&e4).all(|(a, b)| a.to_bits() == b.to_bits()));
    for j in 0..c.m {
        for i in 0..c.n1 {
            assert_eq!(f1[(i, j)].to_bits(), f4[(i, j)].to_bits());
        }
    }
}

#[test]
fn eigenpairs_have_small_residuals() {
    let sim = generate_features(&cfg(400, 300, 500, 12, relu_gaussian())).unwrap();
    let k = linalg::mul_tn(sim.f.as_ref(), sim.f.as_ref(), 1.0 / 500.0);
    let (vals, vecs) = linalg::sym_eigen(k.as_ref()).unwrap();
    let norm = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    for idx in (0..400).step_by(40) {
        let v = vecs.col(idx);
        let mut r = 0.0f64;
        for i in 0..400 {
            let kv: f64 = (0..400).map(|j| k[(i, j)] * v[j]).sum();
            r += (kv - vals[idx] * v[i]).powi(2);
        }
        assert!(r.sqrt() <= 1e-8 * norm);
    }
}

#[test]
fn pure_nonlinear_linearization_is_wishart() {
    let spec = ActivationSpec::single(ActivationFamily::PureNonlinear { eta_target: 1.0 });
    let c = cfg(512, 384, 640, 21, spec);
    let sim = generate_features(&c).unwrap();
    let lin = kernel_spectrum(sim.linearized(Linearization::WeightsData).unwrap().as_ref()).unwrap();
    // F_lin = Theta2 with unit entries: MP with ratio m / n1.
    let mp = SpectralLaw::marchenko_pastur(c.n1 as f64 / c.m as f64, 1.0);
    let (a, b) = mp.mp_edges().unwrap();
    assert!((lin[0] - a).abs() < 0.1 && (lin[lin.len() - 1] - b).abs() < 0.15, "{} {} vs {a} {b}", lin[0], lin[lin.len() - 1]);
    let mean = lin.iter().sum::<f64>() / lin.len() as f64;
    assert!((mean - 1.0).abs() < 0.02);
}

#[test]
fn linear_activation_linearizations_match_features() {
    let c = cfg(512, 384, 640, 22, ActivationSpec::single(ActivationFamily::Linear));
    let sim = generate_features(&c).unwrap();
    let ev = sim.kernel_spectrum().unwrap();
    for v in [Linearization::ThetaSigma, Linearization::WeightsData] {
        let lin = kernel_spectrum(sim.linearized(v).unwrap().as_ref()).unwrap();
        let (h1, h2) = Histogram::pair(&ev, &lin, 32).unwrap();
        assert!(h1.l1(&h2).unwrap() < 0.08);
    }
    // With the weights variant and zeta = eta, F_lin is exactly W X.
    let lin = sim.linearized(Linearization::WeightsData).unwrap();
    assert!((0..c.m).all(|j| (0..c.n1).all(|i| (lin[(i, j)] - sim.f[(i, j)]).abs() < 1e-12)));
}

#[test]
fn rank_deficient_kernel_has_zero_atom_in_theory_and_simulation() {
    // n1 < m: at least 1 - n1/m of the eigenvalues vanish.
    let spec = relu_gaussian();
    let shape = ShapeParams::new(1.0, 2.0).unwrap();
    let problem = SceProblem::new(compute_moments(&spec).unwrap(), SpectralLaw::marchenko_pastur(1.0, 1.0), shape).unwrap();
    let curve = density_from_sce(&problem, &DensityOptions::default()).unwrap();
    let atom = curve.atoms.iter().find(|a| a.location == 0.0).map(|a| a.mass).unwrap_or(0.0);
    assert!(atom >= 0.5 - 1e-2, "atom {atom}");
    assert!((curve.total_mass() - 1.0).abs() < 1e-2);

    let sim = generate_features(&cfg(512, 512, 256, 5, spec)).unwrap();
    let ev = sim.kernel_spectrum().unwrap();
    let zeros = ev.iter().filter(|v| **v < 1e-8).count();
    assert!(zeros >= 256);
    let hist = Histogram::matching(&curve, &ev, 64).unwrap();
    assert!(l1_distance(&curve, &hist).unwrap() < 0.1);
}
