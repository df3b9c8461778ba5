//! Seeded Monte Carlo counterpart of the asymptotic predictions: feature
//! matrices, their linearized surrogates, kernel spectra and ridge fits.

pub mod kde;
pub mod matrix_io;
pub mod rng;

use std::collections::HashMap;
use std::path::PathBuf;

use faer::linalg::solvers::Solve;
use faer::{Mat, MatRef, Side};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laws::ShapeParams;
use crate::linalg;
use crate::moments::{compute_moments, ActivationSpec, BiasLaw, MomentTable, ResolvedActivation, Transforms};
use crate::risk::{TaskKind, TaskSpec};
use matrix_io::MatrixFormat;
use rng::{fill_normal, stream, Role};

const TEST_BATCH: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    GaussianIid {
        sigma_x: f64,
    },
    FromFile {
        path: PathBuf,
        #[serde(default)]
        format: MatrixFormat,
        #[serde(default)]
        mean_subtract: bool,
        #[serde(default)]
        rescale: bool,
    },
    /// Independent Gaussian features, a fraction `high_fraction` of them
    /// with variance `high` and the rest with variance `low`.
    Bimodal { low: f64, high: f64, high_fraction: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub m: usize,
    pub n0: usize,
    pub n1: usize,
    pub n2: usize,
    pub seed: u64,
    pub activation: ActivationSpec,
    pub data: DataSpec,
    pub task: TaskSpec,
    pub center_features: bool,
    /// Fresh samples for the test error; defaults to `10 m`.
    pub n_test: Option<usize>,
}

impl SimConfig {
    /// Gaussian data with unit scale, `n2 = 16`, centered features.
    pub fn gaussian(m: usize, n0: usize, n1: usize, seed: u64, activation: ActivationSpec, task: TaskSpec) -> Self {
        Self {
            m,
            n0,
            n1,
            n2: 16,
            seed,
            data: DataSpec::GaussianIid { sigma_x: activation.sigma_x },
            activation,
            task,
            center_features: true,
            n_test: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 2 || self.n0 < 2 || self.n1 < 2 || self.n2 < 1 {
            return Err(Error::InvalidSpec(format!(
                "dimensions must be at least 2 (m = {}, n0 = {}, n1 = {}, n2 = {})",
                self.m, self.n0, self.n1, self.n2
            )));
        }
        self.activation.validate()?;
        self.task.validate()?;
        match &self.data {
            DataSpec::GaussianIid { sigma_x } if !(*sigma_x > 0.0) => {
                Err(Error::InvalidSpec(format!("data scale must be positive, got {sigma_x}")))
            }
            DataSpec::Bimodal { low, high, high_fraction }
                if !(*low >= 0.0 && *high >= 0.0 && (0.0..=1.0).contains(high_fraction)) =>
            {
                Err(Error::InvalidSpec("bimodal data needs nonnegative variances and a fraction in [0, 1]".into()))
            }
            _ => Ok(()),
        }
    }

    /// `(n0 / m, n0 / n1)` as realized by the dimensions.
    pub fn realized_shape(&self) -> ShapeParams {
        ShapeParams { phi: self.n0 as f64 / self.m as f64, psi: self.n0 as f64 / self.n1 as f64 }
    }

    pub fn n_test(&self) -> usize {
        self.n_test.unwrap_or(10 * self.m)
    }
}

/// Gaussian matrix whose row `i` is drawn from stream `i` of `(seed, role)`.
pub fn gaussian_rows(rows: usize, cols: usize, seed: u64, role: Role, scale: f64) -> Mat<f64> {
    let mut t = Mat::<f64>::zeros(cols, rows);
    t.par_col_chunks_mut(1).enumerate().for_each(|(i, mut col)| {
        let mut rng = stream(seed, role, i as u64);
        let mut buf = vec![0.0; cols];
        fill_normal(&mut rng, &mut buf, scale);
        for (k, v) in buf.into_iter().enumerate() {
            col[(k, 0)] = v;
        }
    });
    t.transpose().to_owned()
}

/// Gaussian matrix whose column `j` is drawn from stream `offset + j`.
pub fn gaussian_cols(rows: usize, cols: usize, seed: u64, role: Role, offset: u64, scale: f64) -> Mat<f64> {
    let mut x = Mat::<f64>::zeros(rows, cols);
    x.par_col_chunks_mut(1).enumerate().for_each(|(j, mut col)| {
        let mut rng = stream(seed, role, offset + j as u64);
        let mut buf = vec![0.0; rows];
        fill_normal(&mut rng, &mut buf, scale);
        for (k, v) in buf.into_iter().enumerate() {
            col[(k, 0)] = v;
        }
    });
    x
}

fn row_scales(config: &SimConfig) -> Vec<f64> {
    match &config.data {
        DataSpec::GaussianIid { sigma_x } => vec![*sigma_x; config.n0],
        DataSpec::Bimodal { low, high, high_fraction } => {
            let k = (high_fraction * config.n0 as f64).round() as usize;
            (0..config.n0).map(|i| if i < k { high.sqrt() } else { low.sqrt() }).collect()
        }
        DataSpec::FromFile { .. } => unreachable!("file data has no generator"),
    }
}

/// Data columns `offset .. offset + cols` from the generator of `role`.
fn synthetic_data(config: &SimConfig, role: Role, offset: u64, cols: usize) -> Mat<f64> {
    let scales = row_scales(config);
    let mut x = gaussian_cols(config.n0, cols, config.seed, role, offset, 1.0);
    x.par_col_chunks_mut(1).for_each(|mut col| {
        for (i, s) in scales.iter().enumerate() {
            col[(i, 0)] *= s;
        }
    });
    x
}

/// The `n0 x m` training data.
pub fn generate_data(config: &SimConfig) -> Result<Mat<f64>> {
    match &config.data {
        DataSpec::FromFile { path, format, mean_subtract, rescale } => {
            let x = matrix_io::ingest_matrix(path, *format, *mean_subtract, *rescale)?;
            if x.nrows() != config.n0 || x.ncols() != config.m {
                return Err(Error::Dimension(format!(
                    "{} is {}x{} but the configuration expects n0 x m = {}x{}",
                    path.display(),
                    x.nrows(),
                    x.ncols(),
                    config.n0,
                    config.m
                )));
            }
            Ok(x)
        }
        _ => Ok(synthetic_data(config, Role::Data, 0, config.m)),
    }
}

/// `n` iid draws from the parameter law.
pub fn sample_biases(law: &BiasLaw, n: usize, seed: u64) -> Result<Vec<f64>> {
    law.validate()?;
    let mut rng = stream(seed, Role::Bias, 0);
    let out = (0..n)
        .map(|_| match law {
            BiasLaw::Dirac { b0 } => *b0,
            BiasLaw::Gaussian { sigma } => {
                let g: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
                sigma * g
            }
            BiasLaw::Bernoulli { p } => {
                if rng.random::<f64>() < *p {
                    1.0
                } else {
                    0.0
                }
            }
            BiasLaw::Discrete { atoms } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = atoms.last().expect("validated").0;
                for &(b, w) in atoms {
                    acc += w;
                    if u < acc {
                        pick = b;
                        break;
                    }
                }
                pick
            }
        })
        .collect();
    Ok(out)
}

/// Per-row transforms, computed once per distinct parameter value.
fn row_transforms(act: &ResolvedActivation, b: &[f64]) -> Result<Vec<Transforms>> {
    let mut cache: HashMap<u64, Transforms> = HashMap::new();
    b.iter()
        .map(|&v| {
            if let Some(t) = cache.get(&v.to_bits()) {
                return Ok(*t);
            }
            let t = act.transforms_at(v)?;
            cache.insert(v.to_bits(), t);
            Ok(t)
        })
        .collect()
}

/// Applies the activation row by row to preactivations `z = W X`, centering
/// each row by its theoretical mean when requested.
pub fn apply_activation(mut z: Mat<f64>, b: &[f64], act: &ResolvedActivation, center: bool) -> Result<Mat<f64>> {
    let shift: Vec<f64> = if center { row_transforms(act, b)?.iter().map(|t| t.xi0).collect() } else { vec![0.0; b.len()] };
    z.par_col_chunks_mut(1).for_each(|mut col| {
        for i in 0..b.len() {
            col[(i, 0)] = act.eval(col[(i, 0)], b[i]) - shift[i];
        }
    });
    Ok(z)
}

/// One realization of the random-feature model.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub config: SimConfig,
    pub table: MomentTable,
    pub activation: ResolvedActivation,
    /// `n0 x m` data.
    pub x: Mat<f64>,
    /// `n1 x n0` first-layer weights.
    pub w: Mat<f64>,
    /// Per-unit activation parameters.
    pub b: Vec<f64>,
    /// `n1 x m` features.
    pub f: Mat<f64>,
}

/// Draws `X`, `W`, `b` and builds `F = f(W X; b)`.
pub fn generate_features(config: &SimConfig) -> Result<Simulation> {
    config.validate()?;
    let x = generate_data(config)?;
    generate_features_on(config, x)
}

/// Like [`generate_features`] on caller-supplied data.
pub fn generate_features_on(config: &SimConfig, x: Mat<f64>) -> Result<Simulation> {
    config.validate()?;
    if x.nrows() != config.n0 || x.ncols() != config.m {
        return Err(Error::Dimension(format!("data is {}x{}, expected {}x{}", x.nrows(), x.ncols(), config.n0, config.m)));
    }
    let table = compute_moments(&config.activation)?;
    let activation = ResolvedActivation::new(&config.activation, &table);
    let sw = config.activation.sigma_w;
    let w = gaussian_rows(config.n1, config.n0, config.seed, Role::Weights, sw / (config.n0 as f64).sqrt());
    let b = sample_biases(&config.activation.bias_law, config.n1, config.seed)?;
    let z = linalg::mul(w.as_ref(), x.as_ref(), 1.0);
    let f = apply_activation(z, &b, &activation, config.center_features)?;
    Ok(Simulation { config: config.clone(), table, activation, x, w, b, f })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Linearization {
    /// `C Theta1 Sigma / sigma_x + sqrt(V^2 - C^2) Theta2`, with `Sigma` the
    /// square root of `X^T X / n0`.
    ThetaSigma,
    /// `C W X / sigma_z + sqrt(V^2 - C^2) Theta2`, reusing the weights.
    WeightsData,
}

impl Simulation {
    pub fn realized_shape(&self) -> ShapeParams {
        self.config.realized_shape()
    }

    /// Eigenvalues of `F^T F / n1`, ascending.
    pub fn kernel_spectrum(&self) -> Result<Vec<f64>> {
        kernel_spectrum(self.f.as_ref())
    }

    /// Gaussian surrogate with the same second-order structure as `F`, on
    /// the same data and parameters.
    pub fn linearized(&self, variant: Linearization) -> Result<Mat<f64>> {
        let (n1, m) = (self.config.n1, self.config.m);
        let seed = self.config.seed;
        let t = row_transforms(&self.activation, &self.b)?;
        let mut lin_coef = Vec::with_capacity(n1);
        let mut res_coef = Vec::with_capacity(n1);
        for (a, tr) in t.iter().enumerate() {
            let (eta, zeta) = (tr.eta(), tr.zeta());
            if eta < zeta - 1e-12 * eta.max(1.0) {
                return Err(Error::InvalidSpec(format!(
                    "unit {a} has eta = {eta} < zeta = {zeta}; the linearization needs eta >= zeta"
                )));
            }
            lin_coef.push(tr.xi1);
            res_coef.push((eta - zeta).max(0.0).sqrt());
        }
        let base = match variant {
            Linearization::ThetaSigma => {
                let (vals, vecs) = linalg::sym_eigen(linalg::mul_tn(self.x.as_ref(), self.x.as_ref(), 1.0 / self.config.n0 as f64).as_ref())?;
                let scaled = Mat::<f64>::from_fn(m, m, |i, j| vecs[(i, j)] * vals[j].max(0.0).sqrt());
                let sigma = linalg::mul(scaled.as_ref(), vecs.transpose(), 1.0);
                let theta1 = gaussian_rows(n1, m, seed, Role::Theta1, 1.0);
                let sx = self.config.activation.sigma_x;
                let mut l = linalg::mul(theta1.as_ref(), sigma.as_ref(), 1.0);
                scale_rows(&mut l, &lin_coef.iter().map(|c| c / sx).collect::<Vec<_>>());
                l
            }
            Linearization::WeightsData => {
                let sz = self.config.activation.sigma_z();
                let mut l = linalg::mul(self.w.as_ref(), self.x.as_ref(), 1.0);
                scale_rows(&mut l, &lin_coef.iter().map(|c| c / sz).collect::<Vec<_>>());
                l
            }
        };
        let mut theta2 = gaussian_rows(n1, m, seed, Role::Theta2, 1.0);
        scale_rows(&mut theta2, &res_coef);
        Ok(Mat::from_fn(n1, m, |i, j| base[(i, j)] + theta2[(i, j)]))
    }

    /// Training targets and, for the teacher task, the teacher vector.
    pub fn targets(&self) -> Targets {
        make_targets(&self.config, self.x.as_ref())
    }

    /// Features of fresh data columns `offset .. offset + cols`.
    pub fn fresh_features(&self, offset: u64, cols: usize) -> Result<(Mat<f64>, Mat<f64>)> {
        if matches!(self.config.data, DataSpec::FromFile { .. }) {
            return Err(Error::InvalidSpec("fresh samples need a synthetic data model".into()));
        }
        let x = synthetic_data(&self.config, Role::TestData, offset, cols);
        let z = linalg::mul(self.w.as_ref(), x.as_ref(), 1.0);
        let f = apply_activation(z, &self.b, &self.activation, self.config.center_features)?;
        Ok((x, f))
    }

    /// Closed-form ridge fit at `gamma`, with the fresh-sample test error for
    /// the linear-teacher task.
    pub fn ridge(&self, gamma: f64) -> Result<SimResult> {
        let targets = self.targets();
        let fit = ridge_fit_and_errors(self.f.as_ref(), targets.y.as_ref(), gamma)?;
        let e_test = match &targets.beta {
            Some(beta) => Some(self.teacher_test_error(&fit.weights, beta)?),
            None => None,
        };
        Ok(SimResult {
            eigenvalues: Vec::new(),
            e_train_emp: fit.e_train,
            e_test_emp: e_test,
            gcv_emp: fit.gcv_emp,
            s_emp: fit.s_emp,
        })
    }

    /// `mean (beta^T x - w f(W x; b))^2` over fresh samples, with its
    /// standard error.
    pub fn teacher_test_error(&self, weights: &Mat<f64>, beta: &[f64]) -> Result<TestEstimate> {
        let n_test = self.config.n_test();
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut done = 0;
        while done < n_test {
            let cols = TEST_BATCH.min(n_test - done);
            let (x, f) = self.fresh_features(done as u64, cols)?;
            let pred = linalg::mul(weights.as_ref(), f.as_ref(), 1.0);
            for j in 0..cols {
                let target: f64 = (0..self.config.n0).map(|k| beta[k] * x[(k, j)]).sum();
                let e = (target - pred[(0, j)]).powi(2);
                sum += e;
                sum_sq += e * e;
            }
            done += cols;
        }
        let n = n_test as f64;
        let mean = sum / n;
        let var = (sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0).max(1.0);
        Ok(TestEstimate { mean, std_err: (var / n).sqrt() })
    }
}

fn scale_rows(m: &mut Mat<f64>, s: &[f64]) {
    m.par_col_chunks_mut(1).for_each(|mut col| {
        for (i, c) in s.iter().enumerate() {
            col[(i, 0)] *= c;
        }
    });
}

#[derive(Debug, Clone)]
pub struct Targets {
    /// `n2 x m` (autoencoder) or `1 x m` (teacher).
    pub y: Mat<f64>,
    pub beta: Option<Vec<f64>>,
}

pub fn make_targets(config: &SimConfig, x: MatRef<'_, f64>) -> Targets {
    let (n0, m, seed) = (config.n0, x.ncols(), config.seed);
    match config.task.kind {
        TaskKind::NoisyAutoencoder { sigma_a, sigma_eps } => {
            let a = gaussian_rows(config.n2, n0, seed, Role::Signal, sigma_a / (n0 as f64).sqrt());
            let noise = gaussian_rows(config.n2, m, seed, Role::Noise, sigma_eps);
            let ax = linalg::mul(a.as_ref(), x, 1.0);
            Targets { y: Mat::from_fn(config.n2, m, |i, j| ax[(i, j)] + noise[(i, j)]), beta: None }
        }
        TaskKind::LinearTeacher { sigma_eps } => {
            let beta_m = gaussian_rows(1, n0, seed, Role::Teacher, 1.0 / (n0 as f64).sqrt());
            let noise = gaussian_rows(1, m, seed, Role::Noise, sigma_eps);
            let bx = linalg::mul(beta_m.as_ref(), x, 1.0);
            let beta = (0..n0).map(|k| beta_m[(0, k)]).collect();
            Targets { y: Mat::from_fn(1, m, |_, j| bx[(0, j)] + noise[(0, j)]), beta: Some(beta) }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestEstimate {
    pub mean: f64,
    pub std_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    /// Kernel eigenvalues, ascending (empty when not requested).
    pub eigenvalues: Vec<f64>,
    pub e_train_emp: f64,
    pub e_test_emp: Option<TestEstimate>,
    pub gcv_emp: f64,
    /// `tr G(gamma) / m`, the empirical `s(-gamma)`.
    pub s_emp: f64,
}

/// All `m` eigenvalues of `F^T F / n1`, ascending.
pub fn kernel_spectrum(f: MatRef<'_, f64>) -> Result<Vec<f64>> {
    if (0..f.ncols()).any(|j| (0..f.nrows()).any(|i| !f[(i, j)].is_finite())) {
        return Err(Error::InvalidSpec("feature matrix has non-finite entries".into()));
    }
    linalg::gram_eigenvalues(f, 1.0 / f.nrows() as f64)
}

#[derive(Debug, Clone)]
pub struct RidgeFit {
    /// `n2 x n1` readout `W2 = Y G F^T / n1`.
    pub weights: Mat<f64>,
    pub e_train: f64,
    pub s_emp: f64,
    /// Training error over the squared normalized trace of `I - H`, with the
    /// smoother `H = K G` formed explicitly.
    pub gcv_emp: f64,
    pub smoother_trace: f64,
}

/// Ridge readout through a Cholesky factorization of `K + gamma I`.
pub fn ridge_fit_and_errors(f: MatRef<'_, f64>, y: MatRef<'_, f64>, gamma: f64) -> Result<RidgeFit> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidSpec(format!("ridge constant must be positive, got {gamma}")));
    }
    let (n1, m) = (f.nrows(), f.ncols());
    if y.ncols() != m {
        return Err(Error::Dimension(format!("targets have {} columns, features have {m}", y.ncols())));
    }
    let n2 = y.nrows();
    let k = linalg::mul_tn(f, f, 1.0 / n1 as f64);
    let a = Mat::<f64>::from_fn(m, m, |i, j| k[(i, j)] + if i == j { gamma } else { 0.0 });
    let llt = a.llt(Side::Lower).map_err(|e| Error::Singular(format!("{e:?}")))?;
    let g = llt.solve(Mat::<f64>::identity(m, m));
    let alpha = llt.solve(y.transpose().to_owned());
    let weights = linalg::mul_tn(alpha.as_ref(), f.transpose(), 1.0 / n1 as f64);
    let pred = linalg::mul(weights.as_ref(), f, 1.0);
    let mut sq = 0.0;
    for j in 0..m {
        for i in 0..n2 {
            sq += (y[(i, j)] - pred[(i, j)]).powi(2);
        }
    }
    let e_train = sq / (n2 * m) as f64;
    let s_emp = (0..m).map(|i| g[(i, i)]).sum::<f64>() / m as f64;
    let h = linalg::mul(k.as_ref(), g.as_ref(), 1.0);
    let smoother_trace = (0..m).map(|i| h[(i, i)]).sum::<f64>();
    let den = 1.0 - smoother_trace / m as f64;
    Ok(RidgeFit { weights, e_train, s_emp, gcv_emp: e_train / (den * den), smoother_trace })
}

/// Eigendecomposition of the kernel, for cheap sweeps over the ridge constant.
#[derive(Debug, Clone)]
pub struct KernelEigen {
    pub values: Vec<f64>,
    pub vectors: Mat<f64>,
}

pub fn kernel_eigen(f: MatRef<'_, f64>) -> Result<KernelEigen> {
    let k = linalg::mul_tn(f, f, 1.0 / f.nrows() as f64);
    let (values, vectors) = linalg::sym_eigen(k.as_ref())?;
    Ok(KernelEigen { values, vectors })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub gamma: f64,
    pub e_train: f64,
    pub s_emp: f64,
    pub gcv: f64,
}

/// Training error, `s(-gamma)` and GCV at each ridge constant from one
/// eigendecomposition: `Y - W2 F = gamma Y G`.
pub fn train_error_sweep(eig: &KernelEigen, y: MatRef<'_, f64>, gammas: &[f64]) -> Result<Vec<SweepPoint>> {
    let m = eig.values.len();
    if y.ncols() != m {
        return Err(Error::Dimension(format!("targets have {} columns, kernel is {m}x{m}", y.ncols())));
    }
    let yu = linalg::mul(y, eig.vectors.as_ref(), 1.0);
    let energy: Vec<f64> = (0..m).map(|i| (0..y.nrows()).map(|r| yu[(r, i)].powi(2)).sum()).collect();
    let n2m = (y.nrows() * m) as f64;
    gammas
        .iter()
        .map(|&g| {
            if !(g > 0.0) {
                return Err(Error::InvalidSpec(format!("ridge constant must be positive, got {g}")));
            }
            let mut e = 0.0;
            let mut s = 0.0;
            for (l, en) in eig.values.iter().zip(&energy) {
                let inv = 1.0 / (l.max(0.0) + g);
                e += en * inv * inv;
                s += inv;
            }
            let e_train = g * g * e / n2m;
            let s_emp = s / m as f64;
            Ok(SweepPoint { gamma: g, e_train, s_emp, gcv: e_train / (g * s_emp).powi(2) })
        })
        .collect()
}

/// Full pipeline for one configuration: features, kernel spectrum and the
/// ridge fit at `gamma`.
pub fn run_simulation(config: &SimConfig, gamma: f64) -> Result<SimResult> {
    let sim = generate_features(config)?;
    let mut result = sim.ridge(gamma)?;
    result.eigenvalues = sim.kernel_spectrum()?;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::ActivationFamily;

    fn small(family: ActivationFamily, seed: u64) -> SimConfig {
        SimConfig::gaussian(64, 48, 80, seed, ActivationSpec::single(family), TaskSpec::autoencoder(1.0, 0.1, 0.5))
    }

    #[test]
    fn shapes_and_determinism() {
        let cfg = small(ActivationFamily::Relu, 42);
        let a = generate_features(&cfg).unwrap();
        let b = generate_features(&cfg).unwrap();
        assert_eq!((a.x.nrows(), a.x.ncols()), (48, 64));
        assert_eq!((a.w.nrows(), a.w.ncols()), (80, 48));
        assert_eq!((a.f.nrows(), a.f.ncols()), (80, 64));
        for j in 0..64 {
            for i in 0..80 {
                assert_eq!(a.f[(i, j)].to_bits(), b.f[(i, j)].to_bits());
            }
        }
    }

    #[test]
    fn linear_features_are_wx() {
        let s = generate_features(&small(ActivationFamily::Linear, 1)).unwrap();
        let wx = linalg::mul(s.w.as_ref(), s.x.as_ref(), 1.0);
        for j in 0..64 {
            for i in 0..80 {
                assert_eq!(s.f[(i, j)], wx[(i, j)]);
            }
        }
    }

    #[test]
    fn kernel_trace_identity() {
        let s = generate_features(&small(ActivationFamily::Relu, 3)).unwrap();
        let ev = s.kernel_spectrum().unwrap();
        let fro: f64 = (0..64).flat_map(|j| (0..80).map(move |i| (i, j))).map(|(i, j)| s.f[(i, j)].powi(2)).sum();
        let tr: f64 = ev.iter().sum();
        assert!((tr - fro / 80.0).abs() < 1e-8 * tr);
        assert!(kernel_spectrum(Mat::<f64>::zeros(5, 4).as_ref()).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn gcv_identity_and_sweep_agree() {
        let s = generate_features(&small(ActivationFamily::Relu, 5)).unwrap();
        let y = s.targets().y;
        let fit = ridge_fit_and_errors(s.f.as_ref(), y.as_ref(), 0.3).unwrap();
        let ident = fit.e_train / (0.3 * fit.s_emp).powi(2);
        assert!((ident - fit.gcv_emp).abs() < 1e-10 * fit.gcv_emp);
        let eig = kernel_eigen(s.f.as_ref()).unwrap();
        let sw = train_error_sweep(&eig, y.as_ref(), &[0.3]).unwrap()[0];
        assert!((sw.e_train - fit.e_train).abs() < 1e-9 * fit.e_train);
        assert!((sw.s_emp - fit.s_emp).abs() < 1e-12);
    }

    #[test]
    fn huge_ridge_returns_target_energy() {
        let s = generate_features(&small(ActivationFamily::Relu, 9)).unwrap();
        let y = s.targets().y;
        let fit = ridge_fit_and_errors(s.f.as_ref(), y.as_ref(), 1e9).unwrap();
        let energy: f64 = (0..y.ncols()).flat_map(|j| (0..y.nrows()).map(move |i| (i, j))).map(|(i, j)| y[(i, j)].powi(2)).sum::<f64>()
            / (y.nrows() * y.ncols()) as f64;
        assert!((fit.e_train - energy).abs() < 1e-3 * energy);
    }

    #[test]
    fn bernoulli_biases_have_right_frequency() {
        let b = sample_biases(&BiasLaw::Bernoulli { p: 0.3 }, 20000, 7).unwrap();
        let frac = b.iter().sum::<f64>() / b.len() as f64;
        assert!((frac - 0.3).abs() < 0.02);
    }

    #[test]
    fn file_dimension_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        std::fs::write(&p, "1,2\n3,4\n").unwrap();
        let mut cfg = small(ActivationFamily::Relu, 1);
        cfg.data = DataSpec::FromFile { path: p, format: MatrixFormat::Csv, mean_subtract: false, rescale: false };
        assert!(matches!(generate_features(&cfg), Err(Error::Dimension(_))));
    }
}
