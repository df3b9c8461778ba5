//! Eigenvalue density of the kernel from `s(z)` by Stieltjes inversion, and
//! comparison against empirical spectra.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sce::{solve_sce, solve_sce_warm, SceProblem, SolverOptions, TransformPair};

const CLIP: f64 = 1e-12;
const EDGE_DENSITY: f64 = 1e-8;
const ATOM_REPORT: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityOptions {
    pub points: usize,
    /// Right end of the grid; chosen automatically when absent.
    pub lambda_max: Option<f64>,
    /// Imaginary offsets, decreasing; the two smallest drive the
    /// extrapolation to zero.
    pub epsilons: Vec<f64>,
    pub solver: SolverOptions,
}

impl Default for DensityOptions {
    fn default() -> Self {
        Self { points: 512, lambda_max: None, epsilons: vec![1e-2, 1e-3, 1e-4], solver: SolverOptions::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub location: f64,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityCurve {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub atoms: Vec<Atom>,
    /// Smallest imaginary offset used.
    pub epsilon: f64,
    pub mass_continuous: f64,
    /// Continuous mass at each offset of the schedule, before extrapolation.
    pub schedule_masses: Vec<(f64, f64)>,
}

impl DensityCurve {
    pub fn total_mass(&self) -> f64 {
        self.mass_continuous + self.atoms.iter().map(|a| a.mass).sum::<f64>()
    }

    /// Linear interpolation of the density (zero outside the grid).
    pub fn value_at(&self, x: f64) -> f64 {
        let g = &self.grid;
        if g.is_empty() || x < g[0] || x > g[g.len() - 1] {
            return 0.0;
        }
        let i = g.partition_point(|v| *v <= x).clamp(1, g.len() - 1);
        let (x0, x1) = (g[i - 1], g[i]);
        if x1 == x0 {
            return self.values[i];
        }
        let t = (x - x0) / (x1 - x0);
        self.values[i - 1] * (1.0 - t) + self.values[i] * t
    }

    /// Mass of the piecewise-linear density on `[a, b]`.
    pub fn mass_between(&self, a: f64, b: f64) -> f64 {
        let g = &self.grid;
        if g.len() < 2 || b <= a {
            return 0.0;
        }
        let (lo, hi) = (a.max(g[0]), b.min(g[g.len() - 1]));
        if hi <= lo {
            return 0.0;
        }
        let mut pts = vec![lo];
        let start = g.partition_point(|v| *v <= lo);
        pts.extend(g[start..].iter().copied().take_while(|v| *v < hi));
        pts.push(hi);
        pts.windows(2).map(|w| 0.5 * (w[1] - w[0]) * (self.value_at(w[0]) + self.value_at(w[1]))).sum()
    }

    pub fn write_csv(&self, mut w: impl Write, comment: Option<&str>) -> Result<()> {
        if let Some(c) = comment {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "lambda,density")?;
        for (x, v) in self.grid.iter().zip(&self.values) {
            writeln!(w, "{x:.10e},{v:.10e}")?;
        }
        Ok(())
    }

    pub fn atoms_json(&self) -> String {
        serde_json::to_string_pretty(&self.atoms).expect("atoms serialize")
    }
}

/// `n` points on `[0, hi]`, clustered towards both ends.
pub fn cosine_grid(hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 * hi * (1.0 - (PI * i as f64 / (n - 1) as f64).cos())).collect()
}

/// Operator-norm bound on the limiting kernel spectrum: the kernel is
/// `F^T F / n1` with `F` a sum of a linear part (row scale `sqrt(zeta)`) and
/// an independent nonlinear part (row scale `sqrt(eta - zeta)`).
pub fn spectral_edge_bound(problem: &SceProblem) -> f64 {
    let sx2 = problem.moments.sigma_x.powi(2);
    let s_max = problem.law.support_max() / sx2;
    let zmax = problem.moments.entries.iter().map(|e| e.zeta).fold(0.0, f64::max);
    let nmax = problem.moments.entries.iter().map(|e| e.eta - e.zeta).fold(0.0, f64::max);
    let (phi, psi) = (problem.shape.phi, problem.shape.psi);
    let lin = zmax * s_max * (1.0 + psi.sqrt()).powi(2);
    let nonlin = nmax * (1.0 + (psi / phi).sqrt()).powi(2);
    (lin.sqrt() + nonlin.sqrt()).powi(2)
}

fn validate(opts: &DensityOptions) -> Result<()> {
    if opts.points < 2 {
        return Err(Error::EmptyGrid("density grid needs at least two points".into()));
    }
    if opts.epsilons.len() < 2 {
        return Err(Error::InvalidSpec("epsilon schedule needs at least two offsets".into()));
    }
    if opts.epsilons.iter().any(|e| !(*e > 0.0)) || opts.epsilons.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidSpec("epsilon schedule must be positive and strictly decreasing".into()));
    }
    if let Some(l) = opts.lambda_max {
        if !(l > 0.0 && l.is_finite()) {
            return Err(Error::InvalidSpec(format!("lambda_max must be positive, got {l}")));
        }
    }
    Ok(())
}

/// `(eps_a, v_a), (eps_b, v_b)` with `eps_b < eps_a` extrapolated linearly to 0.
fn extrapolate(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 * b.1 - b.0 * a.1) / (a.0 - b.0)
}

/// Solves along the epsilon schedule at one real point, each offset warm
/// started from the previous one.
fn im_s_schedule(problem: &SceProblem, lambda: f64, eps: &[f64], opts: &SolverOptions) -> Result<Vec<TransformPair>> {
    let mut out: Vec<TransformPair> = Vec::with_capacity(eps.len());
    for &e in eps {
        let z = Complex64::new(lambda, e);
        let pair = match out.last() {
            Some(prev) => solve_sce_warm(problem, z, opts, prev),
            None => solve_sce(problem, z, opts),
        }
        .map_err(|err| Error::DensityPoint { lambda, source: Box::new(err) })?;
        out.push(pair);
    }
    Ok(out)
}

/// Mass of the atom at zero, `lim eps Im s(i eps)`.
pub fn zero_atom_mass(problem: &SceProblem, opts: &DensityOptions) -> Result<f64> {
    validate(opts)?;
    let pairs = im_s_schedule(problem, 0.0, &opts.epsilons, &opts.solver)?;
    let vals: Vec<(f64, f64)> = opts.epsilons.iter().zip(&pairs).map(|(&e, p)| (e, e * p.s.im)).collect();
    let n = vals.len();
    Ok(extrapolate(vals[n - 2], vals[n - 1]).clamp(0.0, 1.0))
}

/// Density of the limiting kernel spectrum on a cosine-clustered grid.
pub fn density_from_sce(problem: &SceProblem, opts: &DensityOptions) -> Result<DensityCurve> {
    validate(opts)?;
    problem.validate()?;
    let atom0 = zero_atom_mass(problem, opts)?;
    let mut hi = opts.lambda_max.unwrap_or_else(|| 1.05 * spectral_edge_bound(problem));
    loop {
        let curve = density_on_grid(problem, opts, hi, atom0)?;
        let last = *curve.values.last().expect("grid is non-empty");
        if opts.lambda_max.is_some() || last < EDGE_DENSITY {
            return Ok(curve);
        }
        hi *= 2.0;
    }
}

fn density_on_grid(problem: &SceProblem, opts: &DensityOptions, hi: f64, atom0: f64) -> Result<DensityCurve> {
    let grid = cosine_grid(hi, opts.points);
    let eps = &opts.epsilons;
    let per_point: Vec<Vec<f64>> = grid
        .par_iter()
        .map(|&lambda| {
            let pairs = im_s_schedule(problem, lambda, eps, &opts.solver)?;
            // Remove the zero atom's Lorentzian before extrapolating.
            Ok(eps
                .iter()
                .zip(&pairs)
                .map(|(&e, p)| (p.s.im - atom0 * e / (lambda * lambda + e * e)) / PI)
                .collect())
        })
        .collect::<Result<_>>()?;
    let n = eps.len();
    let values: Vec<f64> = per_point
        .iter()
        .map(|v| {
            let d = extrapolate((eps[n - 2], v[n - 2]), (eps[n - 1], v[n - 1]));
            if d < CLIP {
                0.0
            } else {
                d
            }
        })
        .collect();
    let trap = |vals: &dyn Fn(usize) -> f64| -> f64 {
        grid.windows(2).enumerate().map(|(i, w)| 0.5 * (w[1] - w[0]) * (vals(i) + vals(i + 1))).sum()
    };
    let schedule_masses = (0..n).map(|k| (eps[k], trap(&|i| per_point[i][k].max(0.0)))).collect();
    let mass_continuous = trap(&|i| values[i]);
    let atoms = if atom0 > ATOM_REPORT { vec![Atom { location: 0.0, mass: atom0 }] } else { Vec::new() };
    Ok(DensityCurve { grid, values, atoms, epsilon: eps[n - 1], mass_continuous, schedule_masses })
}

/// Binned empirical spectrum: `masses[i]` is the fraction of eigenvalues in
/// `[edges[i], edges[i + 1])` (the last bin is closed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub masses: Vec<f64>,
}

impl Histogram {
    pub fn from_samples(samples: &[f64], lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if bins == 0 || !(hi > lo) {
            return Err(Error::EmptyGrid(format!("histogram needs bins > 0 and hi > lo (got {bins}, [{lo}, {hi}])")));
        }
        if samples.is_empty() {
            return Err(Error::EmptyGrid("no samples to bin".into()));
        }
        let width = (hi - lo) / bins as f64;
        let edges: Vec<f64> = (0..=bins).map(|i| lo + width * i as f64).collect();
        let mut masses = vec![0.0; bins];
        let w = 1.0 / samples.len() as f64;
        for &x in samples {
            if x < lo || x > hi {
                continue;
            }
            let i = (((x - lo) / width) as usize).min(bins - 1);
            masses[i] += w;
        }
        Ok(Self { edges, masses })
    }

    /// Histogram over `[0, hi]` where `hi` covers both the theoretical
    /// curve and the samples.
    pub fn matching(curve: &DensityCurve, samples: &[f64], bins: usize) -> Result<Self> {
        let smax = samples.iter().copied().fold(0.0, f64::max);
        let cmax = curve.grid.last().copied().unwrap_or(0.0);
        let hi = smax.max(cmax) * (1.0 + 1e-9);
        Self::from_samples(samples, 0.0, hi, bins)
    }

    /// Histograms of two samples on a common range `[min(0, lo), hi]`.
    pub fn pair(a: &[f64], b: &[f64], bins: usize) -> Result<(Self, Self)> {
        let lo = a.iter().chain(b).copied().fold(0.0, f64::min);
        let hi = a.iter().chain(b).copied().fold(f64::NEG_INFINITY, f64::max) * (1.0 + 1e-9);
        Ok((Self::from_samples(a, lo, hi, bins)?, Self::from_samples(b, lo, hi, bins)?))
    }

    /// `sum_bins |mass_a - mass_b|` for histograms on identical bins.
    pub fn l1(&self, other: &Histogram) -> Result<f64> {
        if self.edges != other.edges {
            return Err(Error::DisjointSupport("histograms have different bins".into()));
        }
        Ok(self.masses.iter().zip(&other.masses).map(|(a, b)| (a - b).abs()).sum())
    }

    pub fn densities(&self) -> Vec<f64> {
        self.masses.iter().zip(self.edges.windows(2)).map(|(m, e)| m / (e[1] - e[0])).collect()
    }

    pub fn write_csv(&self, mut w: impl Write, comment: Option<&str>) -> Result<()> {
        if let Some(c) = comment {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "bin_lo,bin_hi,density")?;
        for (e, d) in self.edges.windows(2).zip(self.densities()) {
            writeln!(w, "{:.10e},{:.10e},{d:.10e}", e[0], e[1])?;
        }
        Ok(())
    }
}

/// Total variation style distance `sum_bins |mass_theory - mass_empirical|`
/// plus any theoretical mass falling outside the histogram range. Atoms are
/// assigned to the bin containing them.
pub fn l1_distance(curve: &DensityCurve, hist: &Histogram) -> Result<f64> {
    let (lo, hi) = (hist.edges[0], *hist.edges.last().expect("edges"));
    let (clo, chi) = (curve.grid.first().copied().unwrap_or(0.0), curve.grid.last().copied().unwrap_or(0.0));
    let atom_inside = curve.atoms.iter().any(|a| a.location >= lo && a.location <= hi);
    if (chi < lo || clo > hi) && !atom_inside {
        return Err(Error::DisjointSupport(format!(
            "curve covers [{clo}, {chi}] but histogram covers [{lo}, {hi}]"
        )));
    }
    let nb = hist.masses.len();
    let mut theory: Vec<f64> = hist.edges.windows(2).map(|e| curve.mass_between(e[0], e[1])).collect();
    let mut outside = curve.mass_between(clo, lo) + curve.mass_between(hi, chi);
    for a in &curve.atoms {
        if a.location < lo || a.location > hi {
            outside += a.mass;
            continue;
        }
        let i = hist.edges.partition_point(|e| *e <= a.location).saturating_sub(1).min(nb - 1);
        theory[i] += a.mass;
    }
    Ok(theory.iter().zip(&hist.masses).map(|(t, e)| (t - e).abs()).sum::<f64>() + outside)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::laws::{ShapeParams, SpectralLaw};
    use crate::moments::MomentTable;

    fn box_curve(a: f64, w: f64, h: f64) -> DensityCurve {
        let grid: Vec<f64> = (0..=4000).map(|i| i as f64 * 0.001).collect();
        let values = grid.iter().map(|&x| if x > a + 1e-9 && x < a + w - 1e-9 { h } else { 0.0 }).collect();
        DensityCurve { grid, values, atoms: vec![], epsilon: 0.0, mass_continuous: w * h, schedule_masses: vec![] }
    }

    #[test]
    fn l1_identical_and_shifted() {
        let curve = box_curve(1.0, 1.0, 1.0);
        let exact = Histogram { edges: (0..=40).map(|i| i as f64 * 0.1).collect(), masses: (0..40).map(|i| if (10..20).contains(&i) { 0.1 } else { 0.0 }).collect() };
        assert!(l1_distance(&curve, &exact).unwrap() < 2e-3);
        let shifted = Histogram { edges: exact.edges.clone(), masses: (0..40).map(|i| if (11..21).contains(&i) { 0.1 } else { 0.0 }).collect() };
        assert!((l1_distance(&curve, &shifted).unwrap() - 0.2).abs() < 3e-3);
    }

    #[test]
    fn l1_rejects_disjoint() {
        let curve = box_curve(1.0, 1.0, 1.0);
        let far = Histogram::from_samples(&[10.0, 11.0], 9.0, 12.0, 3).unwrap();
        assert!(matches!(l1_distance(&curve, &far), Err(Error::DisjointSupport(_))));
    }

    #[test]
    fn pure_nonlinear_gives_mp_density() {
        // zeta = 0: the kernel is a Wishart matrix with ratio m / n1 = psi / phi.
        let (phi, psi) = (1.0, 0.5);
        let p = SceProblem::new(
            MomentTable::single(1.0, 0.0).unwrap(),
            SpectralLaw::marchenko_pastur(phi, 1.0),
            ShapeParams::new(phi, psi).unwrap(),
        )
        .unwrap();
        let curve = density_from_sce(&p, &DensityOptions { points: 256, ..Default::default() }).unwrap();
        let mp = SpectralLaw::marchenko_pastur(phi / psi, 1.0);
        for (x, v) in curve.grid.iter().zip(&curve.values) {
            let want = mp.mp_density(*x).unwrap();
            assert!((v - want).abs() < 2e-2 * want.max(0.05), "x = {x}: {v} vs {want}");
        }
        assert!((curve.total_mass() - 1.0).abs() < 1e-2);
    }

    #[test]
    fn rank_atom_is_detected() {
        // n1 / m = phi / psi = 0.5, so at least half the kernel spectrum is zero.
        let p = SceProblem::new(
            MomentTable::single(1.0, 0.4).unwrap(),
            SpectralLaw::marchenko_pastur(1.0, 1.0),
            ShapeParams::new(1.0, 2.0).unwrap(),
        )
        .unwrap();
        let curve = density_from_sce(&p, &DensityOptions { points: 200, ..Default::default() }).unwrap();
        let m0 = curve.atoms.iter().map(|a| a.mass).sum::<f64>();
        assert!(m0 >= 0.5 - 1e-2, "atom {m0}");
        assert!((curve.total_mass() - 1.0).abs() < 1e-2, "total {}", curve.total_mass());
    }
}
