//! Asymptotic training and test errors of random-feature ridge regression,
//! and searches over activation mixtures.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::laws::{ShapeParams, SpectralLaw};
use crate::moments::{compute_moments, ActivationSpec, MixtureSpec, MomentTable};
use crate::sce::{solve_sce, transform_derivatives, SceProblem, SolverOptions, TransformDerivatives};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskKind {
    /// Targets `Y = A X + noise`, `A` with iid `N(0, sigma_a^2 / n0)` entries.
    NoisyAutoencoder { sigma_a: f64, sigma_eps: f64 },
    /// Scalar targets `y = beta^T x + noise` with `Var beta_i = 1 / n0`.
    LinearTeacher { sigma_eps: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub gamma: f64,
}

impl TaskSpec {
    pub fn autoencoder(sigma_a: f64, sigma_eps: f64, gamma: f64) -> Self {
        Self { kind: TaskKind::NoisyAutoencoder { sigma_a, sigma_eps }, gamma }
    }

    pub fn linear_teacher(sigma_eps: f64, gamma: f64) -> Self {
        Self { kind: TaskKind::LinearTeacher { sigma_eps }, gamma }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidSpec(format!("ridge constant must be positive, got {}", self.gamma)));
        }
        let (a, e) = self.variances();
        if !(a >= 0.0 && e >= 0.0 && a.is_finite() && e.is_finite()) {
            return Err(Error::InvalidSpec("task scales must be finite and nonnegative".into()));
        }
        Ok(())
    }

    /// `(sigma_a^2, sigma_eps^2)`; a linear teacher has unit signal.
    pub fn variances(&self) -> (f64, f64) {
        match self.kind {
            TaskKind::NoisyAutoencoder { sigma_a, sigma_eps } => (sigma_a * sigma_a, sigma_eps * sigma_eps),
            TaskKind::LinearTeacher { sigma_eps } => (1.0, sigma_eps * sigma_eps),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub e_train: f64,
    pub e_test: Option<f64>,
    pub s_at: Complex64,
    pub s_tilde_at: Complex64,
    pub derivatives: TransformDerivatives,
    /// `gamma s(-gamma)`, the normalized trace of `I - smoother`.
    pub gcv_denominator: f64,
    pub problem: SceProblem,
    pub task: TaskSpec,
}

impl ErrorReport {
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "config": { "problem": self.problem, "task": self.task },
            "e_train": self.e_train,
            "e_test": self.e_test,
            "s": self.s_at.re,
            "s_tilde": self.s_tilde_at.re,
            "s_prime": self.derivatives.s_prime.re,
            "s_tilde_prime": self.derivatives.s_tilde_prime.re,
            "gcv_denominator": self.gcv_denominator,
        })
    }
}

/// Training error `gamma^2 (sigma_a^2 s~'(-gamma) + sigma_eps^2 s'(-gamma))`,
/// derivatives taken in `z`.
pub fn predict_train_error(problem: &SceProblem, task: &TaskSpec) -> Result<ErrorReport> {
    predict_train_error_with(problem, task, &SolverOptions::default())
}

pub fn predict_train_error_with(problem: &SceProblem, task: &TaskSpec, opts: &SolverOptions) -> Result<ErrorReport> {
    task.validate()?;
    let g = task.gamma;
    let z = Complex64::new(-g, 0.0);
    let pair = solve_sce(problem, z, opts)?;
    let d = transform_derivatives(problem, z, &pair)?;
    let (a2, e2) = task.variances();
    let e_train = (g * g * (a2 * d.s_tilde_prime.re + e2 * d.s_prime.re)).max(0.0);
    Ok(ErrorReport {
        e_train,
        e_test: None,
        s_at: pair.s,
        s_tilde_at: pair.s_tilde,
        derivatives: d,
        gcv_denominator: g * pair.s.re,
        problem: problem.clone(),
        task: *task,
    })
}

/// Excess test error of the linear-teacher task, `GCV - sigma_eps^2`, where
/// `GCV = E_train / (gamma s(-gamma))^2`.
pub fn predict_test_error(problem: &SceProblem, task: &TaskSpec) -> Result<ErrorReport> {
    predict_test_error_with(problem, task, &SolverOptions::default())
}

pub fn predict_test_error_with(problem: &SceProblem, task: &TaskSpec, opts: &SolverOptions) -> Result<ErrorReport> {
    let TaskKind::LinearTeacher { sigma_eps } = task.kind else {
        return Err(Error::InvalidSpec("test error is defined for the linear-teacher task".into()));
    };
    if !matches!(problem.law, SpectralLaw::MarchenkoPastur { .. }) {
        return Err(Error::InvalidSpec("test error prediction assumes iid Gaussian data (Marchenko-Pastur law)".into()));
    }
    let mut report = predict_train_error_with(problem, task, opts)?;
    let den = report.gcv_denominator;
    if den.abs() < 1e-10 {
        return Err(Error::DegenerateDenominator { value: den });
    }
    let gcv = report.e_train / (den * den);
    report.e_test = Some((gcv - sigma_eps * sigma_eps).max(0.0));
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalRegularization {
    pub gamma: f64,
    /// False when the relation asks for `gamma <= 0`, which the predictors
    /// cannot evaluate.
    pub reachable: bool,
}

/// Ridge constant satisfying `(gamma - eta + zeta) / zeta = sigma_eps^2`.
pub fn optimal_reg_relation(eta0: f64, zeta0: f64, sigma_eps_sq: f64) -> Result<OptimalRegularization> {
    if zeta0 == 0.0 {
        return Err(Error::NoSolution("the relation is undefined for zeta = 0".into()));
    }
    let gamma = zeta0 * sigma_eps_sq + eta0 - zeta0;
    Ok(OptimalRegularization { gamma, reachable: gamma > 0.0 })
}

/// Test error of a single activation with `eta = 1` and the given `zeta`,
/// iid Gaussian data with unit scale.
pub fn single_activation_test_error(shape: ShapeParams, sigma_eps_sq: f64, gamma: f64, zeta: f64) -> Result<f64> {
    let problem = SceProblem::new(MomentTable::single(1.0, zeta)?, SpectralLaw::marchenko_pastur(shape.phi, 1.0), shape)?;
    let r = predict_test_error(&problem, &TaskSpec::linear_teacher(sigma_eps_sq.sqrt(), gamma))?;
    Ok(r.e_test.expect("test error set"))
}

/// Test error of the balanced Bernoulli mixture with parameters `(p, zeta1)`.
pub fn mixture_test_error(shape: ShapeParams, sigma_eps_sq: f64, gamma: f64, p: f64, zeta1: f64) -> Result<f64> {
    let table = compute_moments(&ActivationSpec::mixture(MixtureSpec::balanced(p, zeta1)))?;
    let problem = SceProblem::new(table, SpectralLaw::marchenko_pastur(shape.phi, 1.0), shape)?;
    let r = predict_test_error(&problem, &TaskSpec::linear_teacher(sigma_eps_sq.sqrt(), gamma))?;
    Ok(r.e_test.expect("test error set"))
}

/// Minimizes a function of one variable on a sampled grid, then refines in
/// the bracketing cells by golden-section search.
fn grid_then_golden(xs: &[f64], f: &(dyn Fn(f64) -> Result<f64> + Sync)) -> Result<(f64, f64, Vec<(f64, f64)>)> {
    if xs.is_empty() {
        return Err(Error::EmptyGrid("no points to search".into()));
    }
    let vals: Vec<(f64, f64)> = xs.par_iter().map(|&x| f(x).map(|v| (x, v))).collect::<Result<_>>()?;
    let (imin, _) = vals.iter().enumerate().min_by(|a, b| a.1 .1.total_cmp(&b.1 .1)).expect("non-empty");
    let lo = vals[imin.saturating_sub(1)].0;
    let hi = vals[(imin + 1).min(vals.len() - 1)].0;
    let (mut a, mut b) = (lo, hi);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut c, mut d) = (b - g * (b - a), a + g * (b - a));
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    for _ in 0..60 {
        if (b - a).abs() < 1e-7 {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d)?;
        }
    }
    let (mut bx, mut bv) = if fc < fd { (c, fc) } else { (d, fd) };
    if vals[imin].1 < bv {
        (bx, bv) = vals[imin];
    }
    Ok((bx, bv, vals))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleBaseline {
    /// `(zeta, e_test)` on the sampled grid.
    pub curve: Vec<(f64, f64)>,
    pub best_zeta: f64,
    pub best_e_test: f64,
}

/// Best single activation (`eta = 1`, `zeta` swept) for the linear teacher.
pub fn best_single_activation(shape: ShapeParams, sigma_eps_sq: f64, gamma: f64, zetas: &[f64]) -> Result<SingleBaseline> {
    let f = |z: f64| single_activation_test_error(shape, sigma_eps_sq, gamma, z);
    let (best_zeta, best_e_test, curve) = grid_then_golden(zetas, &f)?;
    Ok(SingleBaseline { curve, best_zeta, best_e_test })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureGrid {
    pub p_values: Vec<f64>,
    pub zeta1_values: Vec<f64>,
    /// `zeta` values for the single-activation baseline.
    pub single_zetas: Vec<f64>,
}

impl MixtureGrid {
    pub fn uniform(p_points: usize, zeta_points: usize) -> Self {
        let lin = |n: usize, lo: f64, hi: f64| -> Vec<f64> {
            (0..n).map(|i| lo + (hi - lo) * i as f64 / (n.max(2) - 1) as f64).collect()
        };
        Self {
            p_values: lin(p_points, 0.001, 0.999),
            zeta1_values: lin(zeta_points, 0.0, 1.0),
            single_zetas: lin(101, 0.0, 1.0),
        }
    }
}

/// Relative margin below which a mixture counts as a tie with the baseline.
pub const IMPROVEMENT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixturePoint {
    pub p: f64,
    pub zeta1: f64,
    pub e_test: f64,
    /// Better than every single activation by more than `IMPROVEMENT_TOL`.
    pub improving: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSearch {
    /// Ascending by test error, ties broken by `(p, zeta1)`.
    pub ranked: Vec<MixturePoint>,
    pub baseline: SingleBaseline,
    /// Grid points skipped because `zeta1 > eta1 = 1/(2p)`.
    pub skipped: usize,
}

impl MixtureSearch {
    pub fn best(&self) -> Option<&MixturePoint> {
        self.ranked.first()
    }
}

pub fn mixture_search(shape: ShapeParams, sigma_eps_sq: f64, gamma: f64, grid: &MixtureGrid) -> Result<MixtureSearch> {
    if grid.p_values.is_empty() || grid.zeta1_values.is_empty() {
        return Err(Error::EmptyGrid("mixture grid needs p and zeta1 values".into()));
    }
    if let Some(p) = grid.p_values.iter().find(|p| !(**p >= 0.0 && **p < 1.0)) {
        return Err(Error::InvalidSpec(format!("mixture p must lie in [0, 1), got {p}")));
    }
    let baseline = best_single_activation(shape, sigma_eps_sq, gamma, &grid.single_zetas)?;
    let mut points = Vec::new();
    let mut skipped = 0;
    for &p in &grid.p_values {
        for &z1 in &grid.zeta1_values {
            if p > 0.0 && z1 > 1.0 / (2.0 * p) {
                skipped += 1;
            } else {
                points.push((p, z1));
            }
        }
    }
    let mut ranked: Vec<MixturePoint> = points
        .par_iter()
        .map(|&(p, zeta1)| {
            let e_test = mixture_test_error(shape, sigma_eps_sq, gamma, p, zeta1)?;
            let improving = e_test < baseline.best_e_test - IMPROVEMENT_TOL * baseline.best_e_test.abs().max(1.0);
            Ok(MixturePoint { p, zeta1, e_test, improving })
        })
        .collect::<Result<_>>()?;
    ranked.sort_by(|a, b| a.e_test.total_cmp(&b.e_test).then(a.p.total_cmp(&b.p)).then(a.zeta1.total_cmp(&b.zeta1)));
    Ok(MixtureSearch { ranked, baseline, skipped })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainGapRow {
    pub gamma: f64,
    pub best_p: f64,
    pub mixture_e_train: f64,
    pub best_single_zeta: f64,
    pub single_e_train: f64,
    /// `single_e_train - mixture_e_train`; positive when the mixture wins.
    pub gap: f64,
}

/// Training error of the linear / purely nonlinear Bernoulli(p) mixture.
pub fn capacity_mixture_train_error(shape: ShapeParams, task: &TaskSpec, p: f64) -> Result<f64> {
    let table = compute_moments(&ActivationSpec::mixture(MixtureSpec::linear_pure_nonlinear(p)))?;
    let problem = SceProblem::new(table, SpectralLaw::marchenko_pastur(shape.phi, 1.0), shape)?;
    Ok(predict_train_error(&problem, task)?.e_train)
}

/// Training error of a single activation with `eta = 1`.
pub fn single_activation_train_error(shape: ShapeParams, task: &TaskSpec, zeta: f64) -> Result<f64> {
    let problem = SceProblem::new(MomentTable::single(1.0, zeta)?, SpectralLaw::marchenko_pastur(shape.phi, 1.0), shape)?;
    Ok(predict_train_error(&problem, task)?.e_train)
}

/// For each ridge constant, the best mixture weight `p` against the best
/// single `zeta`; rows sorted by decreasing gap.
pub fn mixture_train_search(
    shape: ShapeParams,
    sigma_a: f64,
    sigma_eps: f64,
    gammas: &[f64],
    p_values: &[f64],
    zetas: &[f64],
) -> Result<Vec<TrainGapRow>> {
    if gammas.is_empty() || p_values.is_empty() || zetas.is_empty() {
        return Err(Error::EmptyGrid("mixture training search needs gamma, p and zeta values".into()));
    }
    let mut rows = gammas
        .iter()
        .map(|&gamma| {
            let task = TaskSpec::autoencoder(sigma_a, sigma_eps, gamma);
            let mix = |p: f64| capacity_mixture_train_error(shape, &task, p);
            let single = |z: f64| single_activation_train_error(shape, &task, z);
            let (best_p, mixture_e_train, _) = grid_then_golden(p_values, &mix)?;
            let (best_single_zeta, single_e_train, _) = grid_then_golden(zetas, &single)?;
            Ok(TrainGapRow {
                gamma,
                best_p,
                mixture_e_train,
                best_single_zeta,
                single_e_train,
                gap: single_e_train - mixture_e_train,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| b.gap.total_cmp(&a.gap));
    Ok(rows)
}
