//! Limiting spectral laws of the data Gram matrix `X^T X / n0` and
//! expectations against them.

use std::f64::consts::PI;

use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::quadrature::{integrate_adaptive, AdaptiveOptions, QuadValue};

/// Shape ratios `phi = n0 / m` and `psi = n0 / n1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeParams {
    pub phi: f64,
    pub psi: f64,
}

impl ShapeParams {
    pub fn new(phi: f64, psi: f64) -> Result<Self> {
        let s = Self { phi, psi };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.phi > 0.0 && self.phi.is_finite() && self.psi > 0.0 && self.psi.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "shape parameters must be positive (phi = {}, psi = {})",
                self.phi, self.psi
            )));
        }
        Ok(())
    }

    /// `n1 / m = phi / psi`.
    pub fn width_ratio(&self) -> f64 {
        self.phi / self.psi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpectralLaw {
    /// Law of `X^T X / n0` for an `n0 x m` matrix with iid `N(0, sigma_x^2)`
    /// entries and `n0 / m -> phi`.
    MarchenkoPastur { phi: f64, sigma_x: f64 },
    /// Uniform weight on each eigenvalue.
    Empirical { eigenvalues: Vec<f64> },
    Discrete { atoms: Vec<(f64, f64)> },
}

impl SpectralLaw {
    pub fn marchenko_pastur(phi: f64, sigma_x: f64) -> Self {
        SpectralLaw::MarchenkoPastur { phi, sigma_x }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SpectralLaw::MarchenkoPastur { phi, sigma_x } => {
                if !(*phi > 0.0 && phi.is_finite() && *sigma_x > 0.0 && sigma_x.is_finite()) {
                    return Err(Error::InvalidSpec(format!(
                        "Marchenko-Pastur law needs phi > 0 and sigma_x > 0 (got {phi}, {sigma_x})"
                    )));
                }
            }
            SpectralLaw::Empirical { eigenvalues } => {
                if eigenvalues.is_empty() {
                    return Err(Error::InvalidSpec("empirical law has no eigenvalues".into()));
                }
                if let Some(v) = eigenvalues.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
                    return Err(Error::InvalidSpec(format!("empirical eigenvalue {v} is negative or not finite")));
                }
            }
            SpectralLaw::Discrete { atoms } => {
                if atoms.is_empty() {
                    return Err(Error::InvalidSpec("discrete law has no atoms".into()));
                }
                if atoms.iter().any(|(l, w)| !(*l >= 0.0 && l.is_finite() && *w >= 0.0)) {
                    return Err(Error::InvalidSpec("discrete law atoms need nonnegative locations and weights".into()));
                }
                let total: f64 = atoms.iter().map(|a| a.1).sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidSpec(format!("discrete law weights sum to {total}, expected 1")));
                }
            }
        }
        Ok(())
    }

    /// Edges `(a, b)` of the continuous part of a Marchenko–Pastur law.
    pub fn mp_edges(&self) -> Option<(f64, f64)> {
        match self {
            SpectralLaw::MarchenkoPastur { phi, sigma_x } => {
                let r = (1.0 / phi).sqrt();
                let s2 = sigma_x * sigma_x;
                Some((s2 * (1.0 - r).powi(2), s2 * (1.0 + r).powi(2)))
            }
            _ => None,
        }
    }

    /// Continuous Marchenko–Pastur density at `x` (zero outside the support).
    pub fn mp_density(&self, x: f64) -> Option<f64> {
        let SpectralLaw::MarchenkoPastur { phi, sigma_x } = self else {
            return None;
        };
        let (a, b) = self.mp_edges()?;
        if x <= a || x >= b || x <= 0.0 {
            return Some(0.0);
        }
        let c = 1.0 / phi;
        Some(((b - x) * (x - a)).sqrt() / (2.0 * PI * sigma_x * sigma_x * c * x))
    }

    /// Point masses `(location, mass)` of the law.
    pub fn atoms(&self) -> Vec<(f64, f64)> {
        match self {
            SpectralLaw::MarchenkoPastur { phi, .. } if *phi < 1.0 => vec![(0.0, 1.0 - phi)],
            SpectralLaw::MarchenkoPastur { .. } => Vec::new(),
            SpectralLaw::Empirical { eigenvalues } => {
                let w = 1.0 / eigenvalues.len() as f64;
                eigenvalues.iter().map(|&l| (l, w)).collect()
            }
            SpectralLaw::Discrete { atoms } => atoms.clone(),
        }
    }

    /// Largest point of the support.
    pub fn support_max(&self) -> f64 {
        match self {
            SpectralLaw::MarchenkoPastur { .. } => self.mp_edges().map(|e| e.1).unwrap_or(0.0),
            SpectralLaw::Empirical { eigenvalues } => eigenvalues.iter().copied().fold(0.0, f64::max),
            SpectralLaw::Discrete { atoms } => atoms.iter().filter(|a| a.1 > 0.0).map(|a| a.0).fold(0.0, f64::max),
        }
    }

    /// Law of `c S` for `S` drawn from `self`.
    pub fn scaled(&self, c: f64) -> Self {
        match self {
            SpectralLaw::MarchenkoPastur { phi, sigma_x } => SpectralLaw::MarchenkoPastur { phi: *phi, sigma_x: sigma_x * c.sqrt() },
            SpectralLaw::Empirical { eigenvalues } => SpectralLaw::Empirical { eigenvalues: eigenvalues.iter().map(|l| c * l).collect() },
            SpectralLaw::Discrete { atoms } => SpectralLaw::Discrete { atoms: atoms.iter().map(|&(l, w)| (c * l, w)).collect() },
        }
    }

    /// `E_S[g(S)]`.
    pub fn expect<V: QuadValue>(&self, g: impl FnMut(f64) -> V) -> Result<V> {
        self.expect_with(g, AdaptiveOptions::default())
    }

    pub fn expect_with<V: QuadValue>(&self, mut g: impl FnMut(f64) -> V, opts: AdaptiveOptions) -> Result<V> {
        let mut total = V::zero();
        for (l, w) in self.atoms() {
            if w == 0.0 {
                continue;
            }
            let v = g(l);
            if !v.is_finite() {
                return Err(Error::NonFiniteIntegrand { at: l });
            }
            total = total + v * w;
        }
        if let SpectralLaw::MarchenkoPastur { phi, sigma_x } = self {
            let (a, b) = self.mp_edges().expect("MP law has edges");
            let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
            let norm = half * half / (2.0 * PI * sigma_x * sigma_x / phi);
            // S = mid + half cos(theta) turns the square-root edges into a
            // smooth sin^2 factor.
            let cont = integrate_adaptive(
                |theta: f64| {
                    let s = mid + half * theta.cos();
                    let sin = theta.sin();
                    let jac = if s > 0.0 { norm * sin * sin / s } else { 0.0 };
                    if jac == 0.0 {
                        V::zero()
                    } else {
                        g(s) * jac
                    }
                },
                0.0,
                PI,
                opts,
            )?;
            total = total + cont;
        }
        Ok(total)
    }

    /// `E_S[S^k]`.
    pub fn moment(&self, k: i32) -> Result<f64> {
        self.expect(|s| s.powi(k))
    }

    pub fn is_marchenko_pastur(&self) -> bool {
        matches!(self, SpectralLaw::MarchenkoPastur { .. })
    }
}

/// Empirical law of `X^T X / n0` for an `n0 x m` matrix: all `m`
/// eigenvalues, zeros included. With `mean_subtract`, each row (feature) is
/// centered across samples first.
pub fn empirical_law_from_matrix(x: MatRef<'_, f64>, mean_subtract: bool) -> Result<SpectralLaw> {
    let (n0, m) = (x.nrows(), x.ncols());
    if n0 == 0 || m == 0 {
        return Err(Error::Dimension("data matrix is empty".into()));
    }
    if let Some((i, j)) = (0..n0).flat_map(|i| (0..m).map(move |j| (i, j))).find(|&(i, j)| !x[(i, j)].is_finite()) {
        return Err(Error::MatrixFormat(format!("entry ({i}, {j}) is not finite")));
    }
    let eigenvalues = if mean_subtract {
        let centered = center_rows(x);
        linalg::gram_eigenvalues(centered.as_ref(), 1.0 / n0 as f64)?
    } else {
        linalg::gram_eigenvalues(x, 1.0 / n0 as f64)?
    };
    Ok(SpectralLaw::Empirical { eigenvalues })
}

/// Subtracts each row's mean.
pub fn center_rows(x: MatRef<'_, f64>) -> Mat<f64> {
    let m = x.ncols() as f64;
    let means: Vec<f64> = (0..x.nrows()).map(|i| (0..x.ncols()).map(|j| x[(i, j)]).sum::<f64>() / m).collect();
    Mat::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] - means[i])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use num_complex::Complex64;

    #[test]
    fn mp_mass_and_moments() {
        for phi in [0.3, 1.0, 2.0] {
            let law = SpectralLaw::marchenko_pastur(phi, 1.3);
            assert_relative_eq!(law.moment(0).unwrap(), 1.0, epsilon = 1e-10);
            assert_relative_eq!(law.moment(1).unwrap(), 1.3f64.powi(2), epsilon = 1e-9);
            assert_relative_eq!(law.moment(2).unwrap(), 1.3f64.powi(4) * (1.0 + 1.0 / phi), epsilon = 1e-8);
        }
    }

    #[test]
    fn mp_edge_at_phi_one() {
        let law = SpectralLaw::marchenko_pastur(1.0, 1.0);
        assert_eq!(law.mp_edges(), Some((0.0, 4.0)));
        assert!(law.atoms().is_empty());
    }

    #[test]
    fn mp_stieltjes_matches_quadratic() {
        // m(w) = E 1/(S - w) solves c w m^2 + (w - 1 + c) m + 1 = 0 for unit scale.
        let phi = 0.7;
        let c = 1.0 / phi;
        let law = SpectralLaw::marchenko_pastur(phi, 1.0);
        let w = Complex64::new(1.1, 0.3);
        let m = law.expect(|s| Complex64::new(1.0, 0.0) / (s - w)).unwrap();
        let r = c * w * m * m + (w - 1.0 + c) * m + 1.0;
        assert!(r.norm() < 1e-10, "{r}");
    }

    #[test]
    fn empirical_mean_is_exact() {
        let law = SpectralLaw::Empirical { eigenvalues: vec![1.0, 2.0, 3.0] };
        assert_eq!(law.expect(|s| s).unwrap(), 2.0);
    }

    #[test]
    fn expect_rejects_non_finite() {
        let law = SpectralLaw::Empirical { eigenvalues: vec![0.0, 1.0] };
        assert!(matches!(law.expect(|s| 1.0 / s), Err(Error::NonFiniteIntegrand { at }) if at == 0.0));
    }

    #[test]
    fn matrix_laws() {
        let zero = Mat::<f64>::zeros(4, 3);
        let law = empirical_law_from_matrix(zero.as_ref(), false).unwrap();
        assert_eq!(law, SpectralLaw::Empirical { eigenvalues: vec![0.0; 3] });
        let n0 = 5;
        let id = Mat::<f64>::from_fn(n0, n0, |i, j| if i == j { (n0 as f64).sqrt() } else { 0.0 });
        if let SpectralLaw::Empirical { eigenvalues } = empirical_law_from_matrix(id.as_ref(), false).unwrap() {
            assert!(eigenvalues.iter().all(|v| (v - 1.0).abs() < 1e-12));
        }
        let constant = Mat::<f64>::from_fn(2, 4, |i, _| i as f64 + 1.0);
        assert!(center_rows(constant.as_ref()).col_iter().all(|c| c.iter().all(|v| *v == 0.0)));
    }
}
