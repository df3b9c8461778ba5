use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use faer::Mat;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rfmix::laws::{empirical_law_from_matrix, SpectralLaw};
use rfmix::simulate::matrix_io::{ingest_matrix, write_csv, MatrixFormat};

fn rfmix(dir: &Path, config: &str, args: &[&str]) -> std::process::Output {
    let cfg = dir.join("run.toml");
    fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_rfmix"))
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .args(args)
        .output()
        .unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(2)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

fn example_config(name: &str) -> String {
    fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)).unwrap()
}

const DENSITY: &str = r#"
seed = 3
[activation]
family = "erf"
[shape]
phi = 1.0
psi = 0.5
[density]
points = 128
bins = 64
simulate = true
[simulation]
m = 256
"#;

#[test]
fn density_without_simulation_writes_theory_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = rfmix(dir.path(), DENSITY, &["density", "--simulate", "false"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let o = dir.path().join("out");
    assert!(o.join("density.csv").exists() && o.join("atoms.json").exists());
    assert!(!o.join("histogram.csv").exists());
    let rows = csv_rows(&o.join("density.csv"));
    assert_eq!(rows.len(), 128);
    assert!(rows.iter().all(|r| r[1] >= 0.0));
}

#[test]
fn csv_outputs_carry_the_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let out = rfmix(dir.path(), DENSITY, &["density"]);
    assert!(out.status.success());
    let files: Vec<_> = fs::read_dir(dir.path().join("out")).unwrap().map(|e| e.unwrap().path()).collect();
    let csvs: Vec<_> = files.iter().filter(|p| p.extension().is_some_and(|e| e == "csv")).collect();
    assert!(csvs.len() >= 3);
    let first = fs::read_to_string(csvs[0]).unwrap().lines().next().unwrap().to_string();
    assert!(first.starts_with("# rfmix density config-sha256="));
    for p in csvs {
        assert_eq!(fs::read_to_string(p).unwrap().lines().next().unwrap(), first);
    }
}

#[test]
fn thread_count_does_not_change_outputs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(rfmix(a.path(), DENSITY, &["--threads", "1", "density"]).status.success());
    assert!(rfmix(b.path(), DENSITY, &["--threads", "2", "density"]).status.success());
    for name in ["density.csv", "histogram.csv", "eigenvalues.csv", "l1.json"] {
        let x = fs::read(a.path().join("out").join(name)).unwrap();
        let y = fs::read(b.path().join("out").join(name)).unwrap();
        assert!(x == y, "{name} differs");
    }
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = rfmix(dir.path(), &format!("{DENSITY}\nbogus = 1\n"), &["density"]);
    assert_eq!(out.status.code(), Some(2));
    let out = rfmix(dir.path(), "[activation]\nfamily = \"relu\"\nparams = { slope = 2.0 }\n[shape]\nphi = 1.0\npsi = 1.0\n", &["density"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn empty_ridge_sweep_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[shape]\nphi = 0.5\npsi = 0.5\n[task]\nkind = \"noisy_autoencoder\"\ngamma = 0.1\n[errors]\ngammas = []\n";
    let out = rfmix(dir.path(), cfg, &["errors"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn non_finite_data_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("x.csv"), "1.0,2.0\nNaN,0.5\n3.0,1.0\n").unwrap();
    let cfg = format!("[shape]\nphi = 1.0\npsi = 0.5\n[compare]\ndata = {:?}\n", dir.path().join("x.csv"));
    let out = rfmix(dir.path(), &cfg, &["compare-spectra"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn mixture_search_reproduces_the_reference_argmin() {
    let dir = tempfile::tempdir().unwrap();
    let out = rfmix(dir.path(), &example_config("mixture_search.toml"), &["mixture-search"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let o = dir.path().join("out");
    let best = &csv_rows(&o.join("argmin.csv"))[0];
    assert!((best[0] - 0.999).abs() <= 1e-3 && (best[1] - 0.364).abs() <= 1e-2);
    assert!((best[2] - 0.783).abs() < 5e-3);
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(o.join("mixture_summary.json")).unwrap()).unwrap();
    let base = summary["single_best_e_test"].as_f64().unwrap();
    assert!((base - 0.945).abs() < 5e-3);
    for r in csv_rows(&o.join("mixture_grid.csv")) {
        assert_eq!(r[3] == 1.0, r[2] < base);
    }
}

#[test]
fn no_mixture_beats_an_already_optimal_linear_model() {
    // eta = zeta = 1, sigma_eps^2 = 2 gives optimal ridge gamma = 2.
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[shape]\nphi = 0.5\npsi = 1e-4\n[mixture_search]\nsigma_eps_sq = 2.0\ngamma = 2.0\n\
               p_values = [0.1, 0.5, 0.9]\nzeta1_values = [0.0, 0.25, 0.5]\n";
    let out = rfmix(dir.path(), cfg, &["mixture-search"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(&dir.path().join("out").join("mixture_grid.csv"));
    assert_eq!(rows.len(), 9);
    assert!(rows.iter().all(|r| r[3] == 0.0));
}

#[test]
fn compare_spectra_theory_matches_density_with_the_same_law() {
    let dir = tempfile::tempdir().unwrap();
    let (n0, m) = (96, 128);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let x = Mat::<f64>::from_fn(n0, m, |_, _| StandardNormal.sample(&mut rng));
    let data = dir.path().join("x.csv");
    write_csv(&data, x.as_ref()).unwrap();

    let head = "[activation]\nfamily = \"relu\"\n[density]\npoints = 64\n";
    let cfg = format!("{head}[shape]\nphi = 1.0\npsi = 0.5\n[compare]\ndata = {data:?}\nsimulate = false\n");
    let out = rfmix(dir.path(), &cfg, &["compare-spectra"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let via_compare = csv_rows(&dir.path().join("out").join("density.csv"));

    let ingested = ingest_matrix(&data, MatrixFormat::Auto, true, false).unwrap();
    let SpectralLaw::Empirical { eigenvalues } = empirical_law_from_matrix(ingested.as_ref(), false).unwrap() else { unreachable!() };
    let sigma_x = (eigenvalues.iter().sum::<f64>() / m as f64).sqrt();
    let eig: Vec<String> = eigenvalues.iter().map(|v| format!("{v:?}")).collect();
    let cfg = format!(
        "sigma_x = {sigma_x:?}\n{head}[shape]\nphi = {:?}\npsi = 0.5\n[law]\nkind = \"empirical\"\neigenvalues = [{}]\n",
        n0 as f64 / m as f64,
        eig.join(", ")
    );
    let other = tempfile::tempdir().unwrap();
    let out = rfmix(other.path(), &cfg, &["density", "--simulate", "false"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let via_density = csv_rows(&other.path().join("out").join("density.csv"));

    assert_eq!(via_compare.len(), via_density.len());
    for (a, b) in via_compare.iter().zip(&via_density) {
        assert!((a[0] - b[0]).abs() <= 1e-6 * (1.0 + b[0].abs()));
        assert!((a[1] - b[1]).abs() <= 1e-6 * (1.0 + b[1].abs()), "{a:?} vs {b:?}");
    }
}
