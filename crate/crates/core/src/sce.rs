//! Coupled self-consistent equations for the Stieltjes transform `s(z)` of
//! the kernel `F^T F / n1` and its companion `s~(z)`.
//!
//! With `r = psi / phi` and the data law normalized to `S_n = S / sigma_x^2`:
//!
//! ```text
//! D(b)  = 1 + r (zeta(b) t + (eta(b) - zeta(b)) s)
//! C0    = -z + E_B[(eta(B) - zeta(B)) / D(B)]
//! C1    = E_B[zeta(B) / D(B)]
//! s     = E[1 / (C0 + S_n C1)]
//! t     = E[S_n / (C0 + S_n C1)]
//! ```
//!
//! and `s~ = sigma_x^2 t`. For `sigma_x = 1` this is the familiar pair.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laws::{ShapeParams, SpectralLaw};
use crate::moments::MomentTable;
use crate::quadrature::{CVec, QuadValue};

type C = Complex64;

const SINGULAR_D: f64 = 1e-14;
const NEWTON_THRESHOLD: f64 = 1e-2;
const GAMMA_FLOOR: f64 = 1e-12;
const TRACE_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceProblem {
    pub moments: MomentTable,
    pub law: SpectralLaw,
    pub shape: ShapeParams,
}

impl SceProblem {
    pub fn new(moments: MomentTable, law: SpectralLaw, shape: ShapeParams) -> Result<Self> {
        let p = Self { moments, law, shape };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.shape.validate()?;
        self.law.validate()?;
        if self.moments.entries.is_empty() {
            return Err(Error::InvalidSpec("moment table is empty".into()));
        }
        for e in &self.moments.entries {
            if !(e.eta.is_finite() && e.zeta >= 0.0 && e.zeta <= e.eta * (1.0 + 1e-12) + 1e-300) {
                return Err(Error::InvalidSpec(format!(
                    "moment entry at b = {} violates 0 <= zeta <= eta (eta = {}, zeta = {})",
                    e.b, e.eta, e.zeta
                )));
            }
        }
        if !(self.moments.sigma_x > 0.0) {
            return Err(Error::InvalidSpec("moment table sigma_x must be positive".into()));
        }
        Ok(())
    }

    /// The same problem with the parameter law collapsed to its averages.
    pub fn averaged(&self) -> Self {
        Self { moments: self.moments.averaged(), ..self.clone() }
    }

    fn sigma_x2(&self) -> f64 {
        self.moments.sigma_x * self.moments.sigma_x
    }

    fn ratio(&self) -> f64 {
        self.shape.psi / self.shape.phi
    }

    fn normalized_law(&self) -> SpectralLaw {
        let sx2 = self.sigma_x2();
        if sx2 == 1.0 {
            self.law.clone()
        } else {
            self.law.scaled(1.0 / sx2)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub damping_floor: f64,
    /// Take Newton steps once the residual is small (accepted only when they
    /// reduce the residual and keep the sign of the imaginary parts).
    pub newton: bool,
    /// Also solve from `-2/z` and fail if the two fixed points disagree.
    pub check_uniqueness: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-11, max_iter: 10_000, damping_floor: 1.0 / 64.0, newton: true, check_uniqueness: false }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iter == 0 || !(self.damping_floor > 0.0 && self.damping_floor <= 1.0) {
            return Err(Error::InvalidSpec(format!(
                "solver options need tol > 0, max_iter > 0 and damping_floor in (0, 1] (got {self:?})"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformPair {
    pub z: C,
    pub s: C,
    pub s_tilde: C,
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DerivativeMethod {
    Implicit,
    FiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformDerivatives {
    pub s_prime: C,
    pub s_tilde_prime: C,
    pub method: DerivativeMethod,
}

/// How `E[1/Q]`, `E[S/Q]` (and second-order moments) are evaluated for
/// `Q = C0 + S_n C1`.
enum Expectations {
    Law(SpectralLaw),
    /// Closed-form Marchenko–Pastur transform with ratio `c = 1/phi`, unit scale.
    ClosedMp { c: f64 },
}

struct Second {
    first: [C; 2],
    /// `E[1/Q^2], E[S/Q^2], E[S^2/Q^2]`.
    second: [C; 3],
}

impl Expectations {
    fn first(&self, c0: C, c1: C) -> Result<[C; 2]> {
        match self {
            Expectations::Law(law) => {
                let v = law.expect(|s| {
                    let q = 1.0 / (c0 + c1 * s);
                    CVec([q, q * s])
                })?;
                Ok(v.0)
            }
            Expectations::ClosedMp { c } => Ok(closed_mp(*c, c0, c1, false)?.first),
        }
    }

    fn second(&self, c0: C, c1: C) -> Result<Second> {
        match self {
            Expectations::Law(law) => {
                let v = law.expect(|s| {
                    let q = 1.0 / (c0 + c1 * s);
                    let q2 = q * q;
                    CVec([q, q * s, q2, q2 * s, q2 * s * s])
                })?;
                let v = v.0;
                Ok(Second { first: [v[0], v[1]], second: [v[2], v[3], v[4]] })
            }
            Expectations::ClosedMp { c } => closed_mp(*c, c0, c1, true),
        }
    }
}

/// Stieltjes transform `m(w) = E[1/(S - w)]` of the unit-scale MP law with
/// ratio `c`, using the product of principal square roots, which is analytic
/// off the support and behaves like `-1/w` at infinity.
pub fn mp_stieltjes(c: f64, w: C) -> C {
    let (a, b) = ((1.0 - c.sqrt()).powi(2), (1.0 + c.sqrt()).powi(2));
    let root = (w - a).sqrt() * (w - b).sqrt();
    (1.0 - c - w + root) / (2.0 * c * w)
}

fn closed_mp(c: f64, c0: C, c1: C, want_second: bool) -> Result<Second> {
    if c1.norm() < 1e-300 || (c0 / c1).norm() > 1e150 {
        // Purely nonlinear: Q = C0 independent of S, and E[S_n] = 1.
        let q = 1.0 / c0;
        return Ok(Second { first: [q, q], second: [q * q, q * q, q * q * (1.0 + c)] });
    }
    let w = -c0 / c1;
    if w.norm() == 0.0 {
        return Err(Error::SceSingular { z: w });
    }
    let m = mp_stieltjes(c, w);
    let first = [m / c1, (1.0 + w * m) / c1];
    let second = if want_second {
        let mp = -(c * m * m + m) / (2.0 * c * w * m + w - 1.0 + c);
        let c12 = c1 * c1;
        [mp / c12, (m + w * mp) / c12, (1.0 + 2.0 * w * m + w * w * mp) / c12]
    } else {
        [C::zero(); 3]
    };
    Ok(Second { first, second })
}

/// Coefficient sums entering `C0`, `C1` and their partial derivatives.
struct Aux {
    c0: C,
    c1: C,
    /// `dC0/ds, dC0/dt, dC1/ds, dC1/dt`.
    grad: [C; 4],
}

fn aux(moments: &MomentTable, r: f64, z: C, s: C, t: C) -> Result<Aux> {
    let mut c0 = -z;
    let mut c1 = C::zero();
    let mut grad = [C::zero(); 4];
    for e in &moments.entries {
        let nl = e.eta - e.zeta;
        let d = 1.0 + r * (e.zeta * t + nl * s);
        if d.norm() < SINGULAR_D {
            return Err(Error::SceSingular { z });
        }
        let inv = 1.0 / d;
        c0 += e.weight * nl * inv;
        c1 += e.weight * e.zeta * inv;
        let k = -e.weight * r * inv * inv;
        grad[0] += k * nl * nl;
        grad[1] += k * nl * e.zeta;
        grad[2] += k * e.zeta * nl;
        grad[3] += k * e.zeta * e.zeta;
    }
    Ok(Aux { c0, c1, grad })
}

struct Driver<'a> {
    moments: &'a MomentTable,
    r: f64,
    exp: Expectations,
    z: C,
}

impl Driver<'_> {
    fn map(&self, x: [C; 2]) -> Result<[C; 2]> {
        let a = aux(self.moments, self.r, self.z, x[0], x[1])?;
        self.exp.first(a.c0, a.c1)
    }

    /// `Phi(x)` and the Jacobian `dPhi/dx` (row-major) together with `dPhi/dz`.
    fn map_with_jacobian(&self, x: [C; 2]) -> Result<([C; 2], [C; 4], [C; 2])> {
        let a = aux(self.moments, self.r, self.z, x[0], x[1])?;
        let sec = self.exp.second(a.c0, a.c1)?;
        let [e_q2, e_sq2, e_ssq2] = sec.second;
        // dPhi_s/dC0 = -E[1/Q^2], dPhi_s/dC1 = -E[S/Q^2], and so on.
        let dphi_dc = [-e_q2, -e_sq2, -e_sq2, -e_ssq2];
        let [g00, g01, g10, g11] = a.grad;
        let jac = [
            dphi_dc[0] * g00 + dphi_dc[1] * g10,
            dphi_dc[0] * g01 + dphi_dc[1] * g11,
            dphi_dc[2] * g00 + dphi_dc[3] * g10,
            dphi_dc[2] * g01 + dphi_dc[3] * g11,
        ];
        // dC0/dz = -1.
        Ok((sec.first, jac, [e_q2, e_sq2]))
    }

    fn residual(x: [C; 2], phi: [C; 2]) -> f64 {
        (0..2).map(|i| (phi[i] - x[i]).norm() / x[i].norm().max(1.0)).fold(0.0, f64::max)
    }

    fn herglotz_ok(&self, x: [C; 2]) -> bool {
        let sign = self.z.im;
        if sign == 0.0 {
            return x.iter().all(|v| v.is_finite());
        }
        x.iter().all(|v| v.im * sign > 0.0)
    }

    fn solve(&self, init: [C; 2], opts: &SolverOptions) -> Result<([C; 2], f64, usize)> {
        let mut x = init;
        let mut fx = self.map(x)?;
        let mut res = Self::residual(x, fx);
        let mut omega: f64 = 1.0;
        let mut trace = vec![res];
        for iter in 0..opts.max_iter {
            if res < opts.tol {
                return Ok((x, res, iter));
            }
            if !res.is_finite() {
                break;
            }
            if opts.newton && res < NEWTON_THRESHOLD {
                if let Some((xn, fxn, resn)) = self.newton_step(x, fx, res)? {
                    x = xn;
                    fx = fxn;
                    res = resn;
                    push_trace(&mut trace, res);
                    continue;
                }
            }
            let xn = [x[0] + (fx[0] - x[0]) * omega, x[1] + (fx[1] - x[1]) * omega];
            let fxn = self.map(xn)?;
            let resn = Self::residual(xn, fxn);
            if resn > res {
                omega = (omega * 0.5).max(opts.damping_floor);
            }
            x = xn;
            fx = fxn;
            res = resn;
            push_trace(&mut trace, res);
        }
        if res < opts.tol {
            return Ok((x, res, opts.max_iter));
        }
        Err(Error::SceNonConvergence { z: self.z, trace })
    }

    fn newton_step(&self, x: [C; 2], fx: [C; 2], res: f64) -> Result<Option<([C; 2], [C; 2], f64)>> {
        let (_, jac, _) = self.map_with_jacobian(x)?;
        // Solve (J - I) dx = -(Phi(x) - x).
        let a = [jac[0] - 1.0, jac[1], jac[2], jac[3] - 1.0];
        let rhs = [x[0] - fx[0], x[1] - fx[1]];
        let Some(dx) = solve2(a, rhs) else {
            return Ok(None);
        };
        let xn = [x[0] + dx[0], x[1] + dx[1]];
        if !self.herglotz_ok(xn) {
            return Ok(None);
        }
        let fxn = match self.map(xn) {
            Ok(v) => v,
            Err(Error::SceSingular { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        let resn = Self::residual(xn, fxn);
        if resn.is_finite() && resn < res {
            Ok(Some((xn, fxn, resn)))
        } else {
            Ok(None)
        }
    }
}

fn push_trace(trace: &mut Vec<f64>, r: f64) {
    if trace.len() == TRACE_LEN {
        trace.remove(0);
    }
    trace.push(r);
}

fn det2(a: [C; 4]) -> C {
    a[0] * a[3] - a[1] * a[2]
}

fn solve2(a: [C; 4], b: [C; 2]) -> Option<[C; 2]> {
    let det = det2(a);
    if det.norm() == 0.0 || !det.is_finite() {
        return None;
    }
    let x = [(a[3] * b[0] - a[1] * b[1]) / det, (a[0] * b[1] - a[2] * b[0]) / det];
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Frobenius-norm condition number of a 2x2 matrix.
fn cond2(a: [C; 4]) -> f64 {
    let det = det2(a);
    let fro = a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    // ||A^{-1}||_F = ||A||_F / |det A| for 2x2 matrices.
    if det.norm() == 0.0 {
        f64::INFINITY
    } else {
        fro * fro / det.norm()
    }
}

fn check_z(z: C) -> Result<C> {
    if !z.is_finite() {
        return Err(Error::InvalidSpec(format!("z = {z} is not finite")));
    }
    if z.im == 0.0 {
        if z.re > 0.0 {
            return Err(Error::InvalidSpec(format!(
                "z = {z} lies on the positive real axis; use Im z > 0 or a negative real point"
            )));
        }
        if z.re > -GAMMA_FLOOR {
            return Ok(C::new(-GAMMA_FLOOR, 0.0));
        }
    }
    Ok(z)
}

fn driver(problem: &SceProblem, z: C, exp: Expectations) -> Driver<'_> {
    Driver { moments: &problem.moments, r: problem.ratio(), exp, z }
}

fn finish(problem: &SceProblem, z: C, x: [C; 2], residual: f64, iterations: usize) -> TransformPair {
    TransformPair { z, s: x[0], s_tilde: x[1] * problem.sigma_x2(), residual, iterations }
}

fn cold_start(z: C) -> [C; 2] {
    [-1.0 / z, -1.0 / z]
}

/// Solves the coupled equations at `z` from the standard initial guess.
pub fn solve_sce(problem: &SceProblem, z: C, opts: &SolverOptions) -> Result<TransformPair> {
    solve_from(problem, z, opts, None)
}

/// Like [`solve_sce`] but starting from a previously converged pair
/// (typically a neighbouring grid point).
pub fn solve_sce_warm(problem: &SceProblem, z: C, opts: &SolverOptions, start: &TransformPair) -> Result<TransformPair> {
    solve_from(problem, z, opts, Some(start))
}

fn solve_from(problem: &SceProblem, z: C, opts: &SolverOptions, start: Option<&TransformPair>) -> Result<TransformPair> {
    problem.validate()?;
    opts.validate()?;
    let z = check_z(z)?;
    let d = driver(problem, z, Expectations::Law(problem.normalized_law()));
    let init = match start {
        Some(p) if p.s.is_finite() && p.s_tilde.is_finite() && d.herglotz_ok([p.s, p.s_tilde]) => {
            [p.s, p.s_tilde / problem.sigma_x2()]
        }
        _ => cold_start(z),
    };
    let warm_result = d.solve(init, opts);
    let (x, res, it) = match (warm_result, start.is_some()) {
        (Ok(v), _) => v,
        // A poor warm start must not make a solvable point fail.
        (Err(_), true) => d.solve(cold_start(z), opts)?,
        (Err(e), false) => return Err(e),
    };
    if opts.check_uniqueness {
        let (y, _, _) = d.solve([-2.0 / z, -2.0 / z], opts)?;
        for i in 0..2 {
            if (x[i] - y[i]).norm() > 100.0 * opts.tol * x[i].norm().max(1.0) {
                return Err(Error::MultipleFixedPoints { z, first: x[i], second: y[i] });
            }
        }
    }
    Ok(finish(problem, z, x, res, it))
}

/// Solution through the explicit Marchenko–Pastur transform instead of
/// quadrature, with the parameter law collapsed to its averages. Only
/// supported for `0 < phi <= psi <= 1`.
pub fn closed_form_mp(problem: &SceProblem, z: C) -> Result<TransformPair> {
    closed_form_mp_with(problem, z, &SolverOptions::default())
}

pub fn closed_form_mp_with(problem: &SceProblem, z: C, opts: &SolverOptions) -> Result<TransformPair> {
    problem.validate()?;
    let ShapeParams { phi, psi } = problem.shape;
    let SpectralLaw::MarchenkoPastur { phi: law_phi, .. } = problem.law else {
        return Err(Error::UnsupportedRange { phi, psi });
    };
    if !(phi > 0.0 && phi <= psi && psi <= 1.0) {
        return Err(Error::UnsupportedRange { phi, psi });
    }
    let z = check_z(z)?;
    let averaged = problem.averaged();
    let d = driver(&averaged, z, Expectations::ClosedMp { c: 1.0 / law_phi });
    let (x, res, it) = d.solve(cold_start(z), opts)?;
    let pair = finish(problem, z, x, res, it);
    if z.im != 0.0 && !(pair.s.im * z.im > 0.0 && pair.s_tilde.im * z.im > 0.0) {
        return Err(Error::NoSolution(format!("closed form lost the Herglotz branch at z = {z}")));
    }
    Ok(pair)
}

/// Fixed-point residual `max(|Phi_s - s|, |Phi_t - t|)` (scaled as in the
/// solver) of a candidate pair, evaluated by quadrature.
pub fn pair_residual(problem: &SceProblem, pair: &TransformPair) -> Result<f64> {
    let d = driver(problem, pair.z, Expectations::Law(problem.normalized_law()));
    let x = [pair.s, pair.s_tilde / problem.sigma_x2()];
    Ok(Driver::residual(x, d.map(x)?))
}

/// `|P(s)|` for the quartic as printed in the source derivation for a single
/// activation with MP data (`sigma_x = 1`).
pub fn quartic_residual(s: C, z: C, eta_bar: f64, zeta_bar: f64, shape: ShapeParams) -> f64 {
    let ShapeParams { phi, psi } = shape;
    let (eta, zeta) = (eta_bar, zeta_bar);
    let c4 = z * z * zeta * zeta * psi * psi;
    let c3 = 2.0 * z * zeta * zeta * psi * (psi - phi);
    let c2 = zeta * zeta * (psi - phi).powi(2) + z * zeta * phi * psi + z * eta * phi * phi * psi;
    let c1 = zeta * phi * (psi - phi) + phi * phi * (z * phi + eta * (psi - phi));
    let c0 = C::new(phi.powi(3), 0.0);
    horner(&[c0, c1, c2, c3, c4], s).norm()
}

/// `|P(s)|` for the quartic obtained by eliminating `t` from the coupled
/// equations with a single activation and unit-scale MP data.
pub fn derived_quartic_residual(s: C, z: C, eta_bar: f64, zeta_bar: f64, shape: ShapeParams) -> f64 {
    let ShapeParams { phi, psi } = shape;
    let (e, k) = (eta_bar, zeta_bar);
    let (f2, f3, p2) = (phi * phi, phi.powi(3), psi * psi);
    let z2 = z * z;
    let c4 = z2 * p2 * k * (k - e);
    let c3 = z * (2.0 * e * phi * psi * k - 2.0 * e * p2 * k - 2.0 * phi * psi * k * k + 2.0 * p2 * k * k) - z2 * phi * psi * k;
    let c2 = z * (e * f2 * psi + f2 * k - 2.0 * phi * psi * k)
        + (-e * f2 * k + 2.0 * e * phi * psi * k - e * p2 * k + f2 * k * k - 2.0 * phi * psi * k * k + p2 * k * k);
    let c1 = z * f3 + (-e * f3 + e * f2 * psi + f2 * k - phi * psi * k);
    let c0 = C::new(f3, 0.0);
    horner(&[c0, c1, c2, c3, c4], s).norm()
}

fn horner(coeffs: &[C], s: C) -> C {
    coeffs.iter().rev().fold(C::zero(), |acc, c| acc * s + c)
}

/// `d s / dz` and `d s~ / dz` by implicit differentiation of the fixed-point
/// equations, falling back to a five-point central difference when the
/// linear system is ill-conditioned.
pub fn transform_derivatives(problem: &SceProblem, z: C, pair: &TransformPair) -> Result<TransformDerivatives> {
    match implicit_derivatives(problem, z, pair) {
        Ok(Some(d)) => Ok(d),
        Ok(None) | Err(_) => finite_difference_derivatives(problem, z, pair, &SolverOptions::default())
            .map_err(|_| Error::DerivativeFailure { z }),
    }
}

fn implicit_derivatives(problem: &SceProblem, z: C, pair: &TransformPair) -> Result<Option<TransformDerivatives>> {
    let d = driver(problem, z, Expectations::Law(problem.normalized_law()));
    let x = [pair.s, pair.s_tilde / problem.sigma_x2()];
    let (_, jac, dz) = d.map_with_jacobian(x)?;
    let a = [1.0 - jac[0], -jac[1], -jac[2], 1.0 - jac[3]];
    if !(cond2(a) <= 1e12) {
        return Ok(None);
    }
    let Some(u) = solve2(a, dz) else {
        return Ok(None);
    };
    Ok(Some(TransformDerivatives {
        s_prime: u[0],
        s_tilde_prime: u[1] * problem.sigma_x2(),
        method: DerivativeMethod::Implicit,
    }))
}

/// Five-point central difference with step `1e-5 max(1, |z|)` along the
/// real direction, each point warm-started from `pair`.
pub fn finite_difference_derivatives(
    problem: &SceProblem,
    z: C,
    pair: &TransformPair,
    opts: &SolverOptions,
) -> Result<TransformDerivatives> {
    let h = 1e-5 * z.norm().max(1.0);
    let eval = |k: f64| solve_sce_warm(problem, z + k * h, opts, pair);
    let (p2, p1, m1, m2) = (eval(2.0)?, eval(1.0)?, eval(-1.0)?, eval(-2.0)?);
    let diff = |f: fn(&TransformPair) -> C| (-f(&p2) + 8.0 * f(&p1) - 8.0 * f(&m1) + f(&m2)) / (12.0 * h);
    Ok(TransformDerivatives {
        s_prime: diff(|p| p.s),
        s_tilde_prime: diff(|p| p.s_tilde),
        method: DerivativeMethod::FiniteDifference,
    })
}
