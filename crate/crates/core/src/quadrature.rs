//! Quadrature rules used throughout the crate.
//!
//! * Gauss–Legendre rules of arbitrary order (Newton iteration on the
//!   Legendre recurrence), used for piecewise integration of activation
//!   transforms against the Gaussian weight.
//! * An adaptive Gauss–Kronrod (7/15) integrator over vector-valued
//!   integrands, used for expectations under continuous spectral laws.
//! * Probabilists' Gauss–Hermite rules, used to discretize Gaussian
//!   parameter laws.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};
use std::sync::{Mutex, OnceLock};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// A Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n > 0, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let half = n.div_ceil(2);
        for i in 0..half {
            // Tricomi initial guess, then Newton on P_n.
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d.is_finite() {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    /// Integrates `f` over `[a, b]`.
    pub fn integrate<V, F>(&self, a: f64, b: f64, mut f: F) -> V
    where
        V: QuadValue,
        F: FnMut(f64) -> V,
    {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        let mut acc = V::zero();
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc = acc + f(c + h * x) * (w * h);
        }
        acc
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Cached Gauss–Legendre rule; rules are built once per order and shared.
pub fn gauss_legendre(n: usize) -> &'static GaussLegendre {
    static CACHE: OnceLock<Mutex<HashMap<usize, &'static GaussLegendre>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("quadrature cache poisoned");
    guard
        .entry(n)
        .or_insert_with(|| Box::leak(Box::new(GaussLegendre::new(n))))
}

/// Probabilists' Gauss–Hermite rule: nodes and weights such that
/// `sum_i w_i g(x_i) ~ E[g(N)]` for `N ~ N(0, 1)`. Weights sum to one.
///
/// Built by Golub–Welsch on the Jacobi matrix of the Hermite-e recurrence.
pub fn gauss_hermite_probabilists(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 {
        return Err(Error::InvalidSpec("Gauss-Hermite rule needs at least one node".into()));
    }
    let jacobi = faer::Mat::<f64>::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64).sqrt()
        } else {
            0.0
        }
    });
    let eig = jacobi
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::Eigen(format!("{e:?}")))?;
    let values = eig.S().column_vector();
    let vectors = eig.U();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let v0 = vectors[(0, k)];
            (values[k], v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Symmetrize to remove eigensolver round-off.
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (pairs[j].0 - pairs[i].0);
        let w = 0.5 * (pairs[i].1 + pairs[j].1);
        pairs[i] = (-x, w);
        pairs[j] = (x, w);
    }
    if n % 2 == 1 {
        pairs[n / 2].0 = 0.0;
    }
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    let nodes = pairs.iter().map(|p| p.0).collect();
    let weights = pairs.iter().map(|p| p.1 / total).collect();
    Ok((nodes, weights))
}

/// Values that can be accumulated by a quadrature rule.
pub trait QuadValue: Copy + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self> {
    fn zero() -> Self;
    fn norm(&self) -> f64;
    fn is_finite(&self) -> bool;
}

impl QuadValue for f64 {
    fn zero() -> Self {
        0.0
    }
    fn norm(&self) -> f64 {
        self.abs()
    }
    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }
}

impl QuadValue for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn norm(&self) -> f64 {
        Complex64::norm(*self)
    }
    fn is_finite(&self) -> bool {
        Complex64::is_finite(*self)
    }
}

/// Fixed-length vector of complex values, for integrating several related
/// integrands in a single adaptive pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CVec<const N: usize>(pub [Complex64; N]);

impl<const N: usize> Add for CVec<N> {
    type Output = Self;
    fn add(mut self, rhs: Self) -> Self {
        for (a, b) in self.0.iter_mut().zip(rhs.0) {
            *a += b;
        }
        self
    }
}

impl<const N: usize> Sub for CVec<N> {
    type Output = Self;
    fn sub(mut self, rhs: Self) -> Self {
        for (a, b) in self.0.iter_mut().zip(rhs.0) {
            *a -= b;
        }
        self
    }
}

impl<const N: usize> Mul<f64> for CVec<N> {
    type Output = Self;
    fn mul(mut self, rhs: f64) -> Self {
        for a in self.0.iter_mut() {
            *a *= rhs;
        }
        self
    }
}

impl<const N: usize> QuadValue for CVec<N> {
    fn zero() -> Self {
        CVec([Complex64::new(0.0, 0.0); N])
    }
    fn norm(&self) -> f64 {
        self.0.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }
    fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }
}

// Kronrod 15-point abscissae and weights with the embedded 7-point Gauss rule.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<V, F>(f: &mut F, a: f64, b: f64) -> Result<(V, f64)>
where
    V: QuadValue,
    F: FnMut(f64) -> V,
{
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    if !fc.is_finite() {
        return Err(Error::NonFiniteIntegrand { at: c });
    }
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let f1 = f(c - dx);
        let f2 = f(c + dx);
        if !f1.is_finite() {
            return Err(Error::NonFiniteIntegrand { at: c - dx });
        }
        if !f2.is_finite() {
            return Err(Error::NonFiniteIntegrand { at: c + dx });
        }
        let sum = f1 + f2;
        kronrod = kronrod + sum * WGK[j];
        if j % 2 == 1 {
            gauss = gauss + sum * WG[j / 2];
        }
    }
    let kronrod = kronrod * h;
    let gauss = gauss * h;
    Ok((kronrod, (kronrod - gauss).norm()))
}

/// Tolerances for [`integrate_adaptive`].
#[derive(Debug, Clone, Copy)]
pub struct AdaptiveOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_intervals: usize,
}

impl Default for AdaptiveOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-12,
            abs_tol: 1e-14,
            max_intervals: 4000,
        }
    }
}

/// Globally adaptive Gauss–Kronrod integration of `f` over `[a, b]`.
///
/// The interval with the largest error estimate is bisected until the summed
/// estimate falls below `max(abs_tol, rel_tol * |I|)`. Hitting the interval
/// budget returns the best estimate rather than failing; the caller's own
/// convergence test (residuals of the equations being solved) is the final
/// arbiter.
pub fn integrate_adaptive<V, F>(mut f: F, a: f64, b: f64, opts: AdaptiveOptions) -> Result<V>
where
    V: QuadValue,
    F: FnMut(f64) -> V,
{
    let (v, e) = gk15(&mut f, a, b)?;
    let mut pieces: Vec<(f64, f64, V, f64)> = vec![(a, b, v, e)];
    let mut total = v;
    let mut err = e;
    while pieces.len() < opts.max_intervals {
        if err <= opts.abs_tol.max(opts.rel_tol * total.norm()) {
            break;
        }
        let (idx, _) = pieces
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("non-empty");
        let (lo, hi, old_v, old_e) = pieces.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            // Interval cannot be split further in floating point.
            pieces.push((lo, hi, old_v, 0.0));
            err -= old_e;
            continue;
        }
        let (v1, e1) = gk15(&mut f, lo, mid)?;
        let (v2, e2) = gk15(&mut f, mid, hi)?;
        total = total - old_v + v1 + v2;
        err = err - old_e + e1 + e2;
        pieces.push((lo, mid, v1, e1));
        pieces.push((mid, hi, v2, e2));
    }
    // Re-sum to shed accumulated cancellation from the running updates.
    let mut sum = V::zero();
    for p in &pieces {
        sum = sum + p.2;
    }
    Ok(sum)
}
