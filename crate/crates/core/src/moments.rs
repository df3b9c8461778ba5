//! Activation families, parameter laws, and the Gaussian transforms
//! `(xi0, eta, zeta, xi1)` that feed every asymptotic formula.
//!
//! For a family `f(.; b)` and `u ~ N(0, 1)`, `x = sigma_z * u`:
//!
//! * `xi0(b) = E f(x; b)`
//! * `xi1(b) = E[u f(x; b)]`, `zeta(b) = xi1(b)^2`
//! * `eta(b) = E f(x; b)^2 - xi0(b)^2` (the centered second moment)
//!
//! Everything downstream works with the centered activation `f - xi0(b)`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use serde::{Deserialize, Serialize};
use libm::{erf, erfc};

use crate::error::{Error, Result};
use crate::quadrature::{gauss_hermite_probabilists, gauss_legendre};

/// Number of atoms used to discretize a Gaussian parameter law.
pub const DEFAULT_BIAS_ATOMS: usize = 64;

/// Half-width (in standard deviations) of the Gaussian integration window.
const GAUSS_WINDOW: f64 = 12.0;
const MIN_NODES: usize = 16;
const MAX_NODES: usize = 1024;
const NODE_DOUBLING_TOL: f64 = 1e-9;

/// Two-branch Bernoulli mixture: with probability `1 - p` the unit uses the
/// linear branch `sqrt(linear_eta) * u`, with probability `p` the nonlinear
/// branch `sqrt(zeta) * u + sqrt(eta - zeta) * He2(u) / sqrt(2)`, where
/// `u = x / sigma_z`. The parameter `b` is 0 for the linear branch, 1 for the
/// nonlinear one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub p: f64,
    pub linear_eta: f64,
    pub nonlinear_eta: f64,
    pub nonlinear_zeta: f64,
}

impl MixtureSpec {
    /// Mixture with a scaled linear branch (variance `1/(2 - 2p)`) and a
    /// nonlinear branch with `eta(1) = 1/(2p)` and the given `zeta(1)`, so
    /// that `E_B eta(B) = 1` for every `p`.
    pub fn balanced(p: f64, zeta1: f64) -> Self {
        Self {
            p,
            linear_eta: 1.0 / (2.0 - 2.0 * p),
            nonlinear_eta: 1.0 / (2.0 * p),
            nonlinear_zeta: zeta1,
        }
    }

    /// Mixture of the identity (weight `1 - p`) and a purely nonlinear unit
    /// with `eta = 1, zeta = 0` (weight `p`).
    pub fn linear_pure_nonlinear(p: f64) -> Self {
        Self {
            p,
            linear_eta: 1.0,
            nonlinear_eta: 1.0,
            nonlinear_zeta: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ActivationFamily {
    Linear,
    Relu,
    /// `x` for `x > 0`, `alpha * x` otherwise (`alpha = -1` gives `|x|`).
    LeakyRelu { alpha: f64 },
    Abs,
    Erf,
    /// Piecewise-linear interpolation through `(x, f(x))` knots, extended
    /// linearly beyond the end knots.
    Tabulated { knots: Vec<(f64, f64)> },
    /// `sqrt(eta_target) * He2(x / sigma_z) / sqrt(2)`: no linear component.
    PureNonlinear { eta_target: f64 },
    BernoulliMixture(MixtureSpec),
}

impl ActivationFamily {
    /// Whether the parameter acts as an additive bias `f(x + b)`.
    fn additive(&self) -> bool {
        !matches!(
            self,
            ActivationFamily::PureNonlinear { .. } | ActivationFamily::BernoulliMixture(_)
        )
    }

    fn kinks(&self) -> Vec<f64> {
        match self {
            ActivationFamily::Relu | ActivationFamily::LeakyRelu { .. } | ActivationFamily::Abs => vec![0.0],
            ActivationFamily::Tabulated { knots } => knots.iter().map(|k| k.0).collect(),
            _ => Vec::new(),
        }
    }

    fn has_closed_form(&self) -> bool {
        !matches!(self, ActivationFamily::Erf | ActivationFamily::Tabulated { .. })
    }
}

/// Law of the activation parameter `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BiasLaw {
    Dirac { b0: f64 },
    Gaussian { sigma: f64 },
    /// `P(b = 1) = p`, `P(b = 0) = 1 - p`.
    Bernoulli { p: f64 },
    Discrete { atoms: Vec<(f64, f64)> },
}

impl BiasLaw {
    pub fn validate(&self) -> Result<()> {
        match self {
            BiasLaw::Dirac { b0 } if !b0.is_finite() => Err(Error::InvalidSpec("dirac location must be finite".into())),
            BiasLaw::Gaussian { sigma } if !(*sigma > 0.0 && sigma.is_finite()) => {
                Err(Error::InvalidSpec(format!("gaussian bias sigma must be positive, got {sigma}")))
            }
            BiasLaw::Bernoulli { p } if !(0.0..=1.0).contains(p) => {
                Err(Error::InvalidSpec(format!("bernoulli p must lie in [0, 1], got {p}")))
            }
            BiasLaw::Discrete { atoms } => {
                if atoms.is_empty() {
                    return Err(Error::InvalidSpec("discrete bias law has no atoms".into()));
                }
                if atoms.iter().any(|(b, w)| !b.is_finite() || !(*w >= 0.0)) {
                    return Err(Error::InvalidSpec("discrete bias atoms need finite locations and nonnegative weights".into()));
                }
                let total: f64 = atoms.iter().map(|a| a.1).sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidSpec(format!("discrete bias weights sum to {total}, expected 1")));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Deterministic atoms `(b, weight)`; continuous laws are discretized on
    /// `resolution` Gauss–Hermite nodes. Zero-weight atoms are dropped.
    pub fn atoms(&self, resolution: usize) -> Result<Vec<(f64, f64)>> {
        self.validate()?;
        let atoms = match self {
            BiasLaw::Dirac { b0 } => vec![(*b0, 1.0)],
            BiasLaw::Gaussian { sigma } => {
                let (x, w) = gauss_hermite_probabilists(resolution)?;
                x.into_iter().zip(w).map(|(x, w)| (sigma * x, w)).collect()
            }
            BiasLaw::Bernoulli { p } => vec![(0.0, 1.0 - p), (1.0, *p)],
            BiasLaw::Discrete { atoms } => atoms.clone(),
        };
        Ok(atoms.into_iter().filter(|a| a.1 > 0.0).collect())
    }

    pub fn is_continuous(&self) -> bool {
        matches!(self, BiasLaw::Gaussian { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationSpec {
    pub family: ActivationFamily,
    pub bias_law: BiasLaw,
    pub sigma_w: f64,
    pub sigma_x: f64,
    /// Rescale so that `E_B eta(B) = 1`.
    pub normalize: bool,
    /// Output multiplier applied before normalization.
    pub scale: f64,
}

impl ActivationSpec {
    pub fn new(family: ActivationFamily, bias_law: BiasLaw) -> Self {
        Self {
            family,
            bias_law,
            sigma_w: 1.0,
            sigma_x: 1.0,
            normalize: false,
            scale: 1.0,
        }
    }

    pub fn single(family: ActivationFamily) -> Self {
        Self::new(family, BiasLaw::Dirac { b0: 0.0 })
    }

    pub fn mixture(mix: MixtureSpec) -> Self {
        Self::new(ActivationFamily::BernoulliMixture(mix), BiasLaw::Bernoulli { p: mix.p })
    }

    pub fn normalized(mut self) -> Self {
        self.normalize = true;
        self
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    pub fn with_sigmas(mut self, sigma_w: f64, sigma_x: f64) -> Self {
        self.sigma_w = sigma_w;
        self.sigma_x = sigma_x;
        self
    }

    pub fn sigma_z(&self) -> f64 {
        self.sigma_w * self.sigma_x
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("sigma_w", self.sigma_w), ("sigma_x", self.sigma_x), ("scale", self.scale)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidSpec(format!("{name} must be positive and finite, got {v}")));
            }
        }
        self.bias_law.validate()?;
        match &self.family {
            ActivationFamily::LeakyRelu { alpha } if !alpha.is_finite() => {
                Err(Error::InvalidSpec("leaky-relu slope must be finite".into()))
            }
            ActivationFamily::Tabulated { knots } => {
                if knots.len() < 2 {
                    return Err(Error::InvalidSpec("tabulated activation needs at least two knots".into()));
                }
                if knots.windows(2).any(|w| !(w[1].0 > w[0].0)) || knots.iter().any(|k| !k.1.is_finite()) {
                    return Err(Error::InvalidSpec("tabulated knots must be strictly increasing with finite values".into()));
                }
                Ok(())
            }
            ActivationFamily::PureNonlinear { eta_target } if !(*eta_target >= 0.0) => {
                Err(Error::InvalidSpec("pure-nonlinear eta target must be nonnegative".into()))
            }
            ActivationFamily::BernoulliMixture(mix) => {
                if !(0.0..=1.0).contains(&mix.p) {
                    return Err(Error::InvalidSpec(format!("mixture p must lie in [0, 1], got {}", mix.p)));
                }
                if self.bias_law != (BiasLaw::Bernoulli { p: mix.p }) {
                    return Err(Error::InvalidSpec("a Bernoulli mixture requires bias law bernoulli(p) with the same p".into()));
                }
                if mix.p < 1.0 && !(mix.linear_eta >= 0.0 && mix.linear_eta.is_finite()) {
                    return Err(Error::InvalidSpec("mixture linear branch variance must be finite and nonnegative".into()));
                }
                if mix.p > 0.0 && !(mix.nonlinear_zeta >= 0.0 && mix.nonlinear_zeta <= mix.nonlinear_eta * (1.0 + 1e-12)) {
                    return Err(Error::InvalidSpec(format!(
                        "mixture nonlinear branch needs 0 <= zeta <= eta (zeta = {}, eta = {})",
                        mix.nonlinear_zeta, mix.nonlinear_eta
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Unscaled activation value `f(x; b)`.
    fn raw(&self, x: f64, b: f64) -> f64 {
        let sz = self.sigma_z();
        match &self.family {
            ActivationFamily::PureNonlinear { eta_target } => eta_target.sqrt() * he2(x / sz) * FRAC_1_SQRT_2,
            ActivationFamily::BernoulliMixture(mix) => {
                let u = x / sz;
                if b == 0.0 {
                    mix.linear_eta.sqrt() * u
                } else {
                    mix.nonlinear_zeta.sqrt() * u
                        + (mix.nonlinear_eta - mix.nonlinear_zeta).max(0.0).sqrt() * he2(u) * FRAC_1_SQRT_2
                }
            }
            family => additive_value(family, x + b),
        }
    }

    /// Unscaled weak derivative `d f(x; b) / dx`.
    fn raw_derivative(&self, x: f64, b: f64) -> f64 {
        let sz = self.sigma_z();
        match &self.family {
            ActivationFamily::PureNonlinear { eta_target } => eta_target.sqrt() * 2.0 * (x / sz) / sz * FRAC_1_SQRT_2,
            ActivationFamily::BernoulliMixture(mix) => {
                let u = x / sz;
                if b == 0.0 {
                    mix.linear_eta.sqrt() / sz
                } else {
                    (mix.nonlinear_zeta.sqrt()
                        + (mix.nonlinear_eta - mix.nonlinear_zeta).max(0.0).sqrt() * 2.0 * u * FRAC_1_SQRT_2)
                        / sz
                }
            }
            family => additive_derivative(family, x + b),
        }
    }

    /// Activation value including the spec's output scale (but not any
    /// normalization, which lives on [`MomentTable`]).
    pub fn eval(&self, x: f64, b: f64) -> f64 {
        self.scale * self.raw(x, b)
    }

    /// Transforms at a single parameter value, before normalization.
    /// Closed forms are used where available.
    pub fn transforms_at(&self, b: f64) -> Result<Transforms> {
        let t = match closed_form(self, b) {
            Some(t) => t,
            None => self.quadrature_transforms(b)?.0,
        };
        Ok(t.scaled(self.scale))
    }

    /// Transforms at `b` computed by piecewise Gauss–Legendre quadrature,
    /// with the node count used.
    pub fn quadrature_transforms(&self, b: f64) -> Result<(Transforms, usize)> {
        let sz = self.sigma_z();
        let [m0, m2, m1, nodes] = {
            let (v, n) = gaussian_expectation(&self.breakpoints(b), |u| {
                let f = self.raw(sz * u, b);
                [f, f * f, u * f]
            })?;
            [v[0], v[1], v[2], n as f64]
        };
        Ok((Transforms { xi0: m0, second_moment: m2, xi1: m1 }.scaled(self.scale), nodes as usize))
    }

    /// Breakpoints of `u -> f(sigma_z u + b; b)` inside the integration window.
    fn breakpoints(&self, b: f64) -> Vec<f64> {
        let sz = self.sigma_z();
        let shift = if self.family.additive() { b } else { 0.0 };
        let mut pts: Vec<f64> = self
            .family
            .kinks()
            .into_iter()
            .map(|k| (k - shift) / sz)
            .filter(|u| u.abs() < GAUSS_WINDOW)
            .collect();
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }
}

fn he2(u: f64) -> f64 {
    u * u - 1.0
}

fn additive_value(family: &ActivationFamily, y: f64) -> f64 {
    match family {
        ActivationFamily::Linear => y,
        ActivationFamily::Relu => y.max(0.0),
        ActivationFamily::LeakyRelu { alpha } => {
            if y > 0.0 {
                y
            } else {
                alpha * y
            }
        }
        ActivationFamily::Abs => y.abs(),
        ActivationFamily::Erf => erf(y),
        ActivationFamily::Tabulated { knots } => interpolate(knots, y).0,
        _ => unreachable!("non-additive family"),
    }
}

fn additive_derivative(family: &ActivationFamily, y: f64) -> f64 {
    match family {
        ActivationFamily::Linear => 1.0,
        ActivationFamily::Relu => {
            if y > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        ActivationFamily::LeakyRelu { alpha } => {
            if y > 0.0 {
                1.0
            } else {
                *alpha
            }
        }
        ActivationFamily::Abs => y.signum(),
        ActivationFamily::Erf => 2.0 / PI.sqrt() * (-y * y).exp(),
        ActivationFamily::Tabulated { knots } => interpolate(knots, y).1,
        _ => unreachable!("non-additive family"),
    }
}

/// Piecewise-linear interpolation with linear extension; returns value and slope.
fn interpolate(knots: &[(f64, f64)], y: f64) -> (f64, f64) {
    let n = knots.len();
    let seg = match knots.iter().position(|k| k.0 > y) {
        Some(0) => 0,
        Some(i) => i - 1,
        None => n - 2,
    }
    .min(n - 2);
    let (x0, y0) = knots[seg];
    let (x1, y1) = knots[seg + 1];
    let slope = (y1 - y0) / (x1 - x0);
    (y0 + slope * (y - x0), slope)
}

/// Standard normal CDF.
fn norm_cdf(t: f64) -> f64 {
    0.5 * erfc(-t * FRAC_1_SQRT_2)
}

fn norm_pdf(t: f64) -> f64 {
    (-0.5 * t * t).exp() / (2.0 * PI).sqrt()
}

/// Raw Gaussian transforms at one parameter value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transforms {
    pub xi0: f64,
    pub second_moment: f64,
    pub xi1: f64,
}

impl Transforms {
    pub fn eta(&self) -> f64 {
        (self.second_moment - self.xi0 * self.xi0).max(0.0)
    }

    pub fn zeta(&self) -> f64 {
        self.xi1 * self.xi1
    }

    fn scaled(self, c: f64) -> Self {
        Self {
            xi0: c * self.xi0,
            second_moment: c * c * self.second_moment,
            xi1: c * self.xi1,
        }
    }
}

/// Moments of the positive and negative parts of `y = sigma u + b`.
struct HalfMoments {
    pos_mean: f64,
    pos_sq: f64,
    neg_mean: f64,
    neg_sq: f64,
    pos_prob: f64,
}

fn half_moments(sigma: f64, b: f64) -> HalfMoments {
    let t = b / sigma;
    let (cdf, pdf) = (norm_cdf(t), norm_pdf(t));
    let ccdf = norm_cdf(-t);
    HalfMoments {
        pos_mean: sigma * pdf + b * cdf,
        pos_sq: (sigma * sigma + b * b) * cdf + b * sigma * pdf,
        neg_mean: sigma * pdf - b * ccdf,
        neg_sq: (sigma * sigma + b * b) * ccdf - b * sigma * pdf,
        pos_prob: cdf,
    }
}

fn closed_form(spec: &ActivationSpec, b: f64) -> Option<Transforms> {
    let s = spec.sigma_z();
    let t = match &spec.family {
        ActivationFamily::Linear => Transforms { xi0: b, second_moment: s * s + b * b, xi1: s },
        ActivationFamily::Relu => {
            let h = half_moments(s, b);
            Transforms { xi0: h.pos_mean, second_moment: h.pos_sq, xi1: s * h.pos_prob }
        }
        ActivationFamily::LeakyRelu { alpha } => {
            let h = half_moments(s, b);
            Transforms {
                xi0: h.pos_mean - alpha * h.neg_mean,
                second_moment: h.pos_sq + alpha * alpha * h.neg_sq,
                xi1: s * (h.pos_prob + alpha * (1.0 - h.pos_prob)),
            }
        }
        ActivationFamily::Abs => {
            let h = half_moments(s, b);
            Transforms {
                xi0: h.pos_mean + h.neg_mean,
                second_moment: s * s + b * b,
                xi1: s * (2.0 * h.pos_prob - 1.0),
            }
        }
        ActivationFamily::PureNonlinear { eta_target } => Transforms { xi0: 0.0, second_moment: *eta_target, xi1: 0.0 },
        ActivationFamily::BernoulliMixture(mix) => {
            if b == 0.0 {
                Transforms { xi0: 0.0, second_moment: mix.linear_eta, xi1: mix.linear_eta.sqrt() }
            } else {
                Transforms { xi0: 0.0, second_moment: mix.nonlinear_eta, xi1: mix.nonlinear_zeta.sqrt() }
            }
        }
        ActivationFamily::Erf | ActivationFamily::Tabulated { .. } => return None,
    };
    Some(t)
}

/// `E[g(u)]` for `u ~ N(0, 1)` and a vector-valued `g`, integrating each
/// piece between breakpoints with Gauss–Legendre and doubling the node count
/// until the estimate settles. Returns the estimate and the largest per-piece
/// node count used.
pub fn gaussian_expectation<const K: usize>(
    breakpoints: &[f64],
    g: impl Fn(f64) -> [f64; K],
) -> Result<([f64; K], usize)> {
    let mut edges = Vec::with_capacity(breakpoints.len() + 2);
    edges.push(-GAUSS_WINDOW);
    edges.extend(breakpoints.iter().copied().filter(|u| u.abs() < GAUSS_WINDOW));
    edges.push(GAUSS_WINDOW);
    let weight = |u: f64| (-0.5 * u * u).exp() / (2.0 * PI).sqrt();

    let mut total = [0.0; K];
    let mut max_nodes = 0;
    for w in edges.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b - a <= 0.0 {
            continue;
        }
        let piece = |n: usize| -> [f64; K] {
            let rule = gauss_legendre(n);
            let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
            let mut acc = [0.0; K];
            for (x, wt) in rule.nodes.iter().zip(&rule.weights) {
                let u = c + h * x;
                let v = g(u);
                let ww = wt * h * weight(u);
                for k in 0..K {
                    acc[k] += ww * v[k];
                }
            }
            acc
        };
        let mut n = MIN_NODES;
        let mut prev = piece(n);
        loop {
            let next_n = n * 2;
            let next = piece(next_n);
            let scale = next.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
            let delta = prev.iter().zip(&next).fold(0.0_f64, |m, (p, q)| m.max((p - q).abs()));
            n = next_n;
            if delta <= 1e-14 * scale {
                prev = next;
                break;
            }
            if n >= MAX_NODES {
                if delta > NODE_DOUBLING_TOL {
                    let k = prev
                        .iter()
                        .zip(&next)
                        .enumerate()
                        .max_by(|x, y| (x.1 .0 - x.1 .1).abs().total_cmp(&(y.1 .0 - y.1 .1).abs()))
                        .map(|e| e.0)
                        .unwrap_or(0);
                    return Err(Error::QuadratureNonConvergence { last: next[k], previous: prev[k] });
                }
                prev = next;
                break;
            }
            prev = next;
        }
        max_nodes = max_nodes.max(n);
        for k in 0..K {
            total[k] += prev[k];
        }
    }
    Ok((total, max_nodes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentMethod {
    ClosedForm,
    Quadrature,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentEntry {
    pub b: f64,
    pub weight: f64,
    pub eta: f64,
    pub zeta: f64,
    pub xi0: f64,
    pub xi1: f64,
}

/// Per-parameter transforms after normalization. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentTable {
    pub entries: Vec<MomentEntry>,
    pub quadrature_nodes: usize,
    pub method: MomentMethod,
    pub sigma_w: f64,
    pub sigma_x: f64,
    /// Multiplier applied to the spec's activation (`scale` times the
    /// normalization factor); simulations must use the same value.
    pub output_scale: f64,
}

impl MomentTable {
    /// Table from explicit `(weight, eta, zeta)` triples with `sigma_w =
    /// sigma_x = 1`, for working directly in moment space.
    pub fn from_moments(triples: &[(f64, f64, f64)]) -> Result<Self> {
        if triples.is_empty() {
            return Err(Error::InvalidSpec("moment table needs at least one entry".into()));
        }
        let total: f64 = triples.iter().map(|t| t.0).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidSpec(format!("moment weights sum to {total}, expected 1")));
        }
        let entries = triples
            .iter()
            .enumerate()
            .map(|(i, &(weight, eta, zeta))| {
                if !(weight >= 0.0 && zeta >= 0.0 && eta >= zeta * (1.0 - 1e-12)) || !eta.is_finite() {
                    return Err(Error::InvalidSpec(format!(
                        "moment entry {i} violates 0 <= zeta <= eta (eta = {eta}, zeta = {zeta})"
                    )));
                }
                Ok(MomentEntry { b: i as f64, weight, eta, zeta, xi0: 0.0, xi1: zeta.sqrt() })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            entries,
            quadrature_nodes: 0,
            method: MomentMethod::ClosedForm,
            sigma_w: 1.0,
            sigma_x: 1.0,
            output_scale: 1.0,
        })
    }

    /// Single-activation table with the given `(eta, zeta)`.
    pub fn single(eta: f64, zeta: f64) -> Result<Self> {
        Self::from_moments(&[(1.0, eta, zeta)])
    }

    pub fn mean_eta(&self) -> f64 {
        self.entries.iter().map(|e| e.weight * e.eta).sum()
    }

    pub fn mean_zeta(&self) -> f64 {
        self.entries.iter().map(|e| e.weight * e.zeta).sum()
    }

    /// Collapse to one atom carrying the averaged `(eta, zeta)`.
    pub fn averaged(&self) -> Self {
        let (eta, zeta) = (self.mean_eta(), self.mean_zeta());
        Self {
            entries: vec![MomentEntry { b: 0.0, weight: 1.0, eta, zeta, xi0: 0.0, xi1: zeta.sqrt() }],
            ..self.clone()
        }
    }

    /// Entrywise `(eta, zeta) -> (c^2 eta, c^2 zeta)`: the table of `c f`.
    pub fn rescaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        for e in &mut out.entries {
            e.eta *= c * c;
            e.zeta *= c * c;
            e.xi0 *= c;
            e.xi1 *= c;
        }
        out.output_scale *= c;
        out
    }

    pub fn is_single(&self) -> bool {
        self.entries.len() == 1
    }
}

/// Builds the moment table for `spec`, discretizing continuous parameter
/// laws on [`DEFAULT_BIAS_ATOMS`] atoms.
pub fn compute_moments(spec: &ActivationSpec) -> Result<MomentTable> {
    compute_moments_with(spec, DEFAULT_BIAS_ATOMS)
}

pub fn compute_moments_with(spec: &ActivationSpec, bias_atoms: usize) -> Result<MomentTable> {
    spec.validate()?;
    let atoms = spec.bias_law.atoms(bias_atoms)?;
    let closed = spec.family.has_closed_form();
    let mut nodes = 0;
    let mut entries = Vec::with_capacity(atoms.len());
    for (b, weight) in atoms {
        let t = if closed {
            spec.transforms_at(b)?
        } else {
            let (t, n) = spec.quadrature_transforms(b)?;
            nodes = nodes.max(n);
            t
        };
        entries.push(MomentEntry { b, weight, eta: t.eta(), zeta: t.zeta(), xi0: t.xi0, xi1: t.xi1 });
    }
    let mut table = MomentTable {
        entries,
        quadrature_nodes: nodes,
        method: if closed { MomentMethod::ClosedForm } else { MomentMethod::Quadrature },
        sigma_w: spec.sigma_w,
        sigma_x: spec.sigma_x,
        output_scale: spec.scale,
    };
    if spec.normalize {
        let mean = table.mean_eta();
        if !(mean > 0.0) {
            return Err(Error::InvalidSpec("cannot normalize an activation with E_B eta(B) = 0".into()));
        }
        let c = 1.0 / mean.sqrt();
        table = table.rescaled(c);
    }
    Ok(table)
}

/// Evaluates a spec together with the normalization recorded in its table.
#[derive(Debug, Clone)]
pub struct ResolvedActivation {
    pub spec: ActivationSpec,
    /// Extra factor applied on top of `spec.scale` (the normalization).
    pub norm_factor: f64,
}

impl ResolvedActivation {
    pub fn new(spec: &ActivationSpec, table: &MomentTable) -> Self {
        Self { spec: spec.clone(), norm_factor: table.output_scale / spec.scale }
    }

    pub fn eval(&self, x: f64, b: f64) -> f64 {
        self.norm_factor * self.spec.eval(x, b)
    }

    /// Transforms at an arbitrary parameter value, normalized consistently
    /// with the table.
    pub fn transforms_at(&self, b: f64) -> Result<Transforms> {
        Ok(self.spec.transforms_at(b)?.scaled(self.norm_factor))
    }
}

/// `|E[u f(sigma_z u + b)] - sigma_z E[f'(sigma_z u + b)]|` by two separate
/// quadratures (Stein's identity).
pub fn stein_check(spec: &ActivationSpec, b: f64) -> Result<f64> {
    spec.validate()?;
    let sz = spec.sigma_z();
    let bp = spec.breakpoints(b);
    let (lhs, _) = gaussian_expectation(&bp, |u| [u * spec.eval(sz * u, b)])?;
    let (rhs, _) = gaussian_expectation(&bp, |u| [spec.scale * spec.raw_derivative(sz * u, b)])?;
    Ok((lhs[0] - sz * rhs[0]).abs())
}

/// Variance of the residual of the centered activation after projecting out
/// its degree-1 Hermite component, i.e. `eta(b) - zeta(b)` computed directly.
pub fn nonlinear_residual(spec: &ActivationSpec, b: f64) -> Result<f64> {
    let sz = spec.sigma_z();
    let t = spec.transforms_at(b)?;
    let bp = spec.breakpoints(b);
    let (r, _) = gaussian_expectation(&bp, |u| {
        let d = spec.eval(sz * u, b) - t.xi0 - t.xi1 * u;
        [d * d]
    })?;
    Ok(r[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn relu() -> ActivationSpec {
        ActivationSpec::single(ActivationFamily::Relu)
    }

    #[test]
    fn relu_closed_form_values() {
        let t = compute_moments(&relu()).unwrap();
        let e = t.entries[0];
        assert_relative_eq!(e.eta, 0.5 - 1.0 / (2.0 * PI), epsilon = 1e-14);
        assert_relative_eq!(e.zeta, 0.25, epsilon = 1e-14);
        assert_relative_eq!(e.xi0, 1.0 / (2.0 * PI).sqrt(), epsilon = 1e-14);
        assert_eq!(t.method, MomentMethod::ClosedForm);
    }

    #[test]
    fn relu_quadrature_oracle_with_many_nodes() {
        // Independent oracle: plain 400-node Gauss-Legendre on [0, 12] for
        // E relu(u), E relu(u)^2 and E u relu(u).
        let rule = crate::quadrature::GaussLegendre::new(400);
        let m = |k: i32| rule.integrate(0.0, 12.0, |u| u.powi(k) * norm_pdf(u));
        let eta = m(2) - m(1) * m(1);
        let zeta = m(2) * m(2);
        let t = compute_moments(&relu()).unwrap().entries[0];
        assert_relative_eq!(t.eta, eta, epsilon = 1e-12);
        assert_relative_eq!(t.zeta, zeta, epsilon = 1e-12);
    }

    #[test]
    fn linear_is_identity_moments() {
        let t = compute_moments(&ActivationSpec::single(ActivationFamily::Linear)).unwrap();
        assert_relative_eq!(t.entries[0].eta, 1.0);
        assert_relative_eq!(t.entries[0].zeta, 1.0);
    }

    #[test]
    fn balanced_mixture_has_unit_mean_eta() {
        let p = 0.5;
        let spec = ActivationSpec::mixture(MixtureSpec::balanced(p, 0.3));
        let t = compute_moments(&spec).unwrap();
        assert_relative_eq!(t.mean_eta(), 1.0, epsilon = 1e-14);
        assert_relative_eq!(t.entries[1].eta, 1.0 / (2.0 * p), epsilon = 1e-14);
        assert_relative_eq!(t.entries[1].zeta, 0.3, epsilon = 1e-14);
    }

    #[test]
    fn mixture_branch_moments_match_quadrature() {
        let spec = ActivationSpec::mixture(MixtureSpec::balanced(0.7, 0.4)).with_sigmas(1.3, 0.8);
        for b in [0.0, 1.0] {
            let closed = spec.transforms_at(b).unwrap();
            let (quad, _) = spec.quadrature_transforms(b).unwrap();
            assert_relative_eq!(closed.eta(), quad.eta(), epsilon = 1e-12);
            assert_relative_eq!(closed.zeta(), quad.zeta(), epsilon = 1e-12);
        }
    }

    #[test]
    fn closed_forms_agree_with_quadrature() {
        let families = [
            ActivationFamily::Linear,
            ActivationFamily::Relu,
            ActivationFamily::LeakyRelu { alpha: 0.2 },
            ActivationFamily::LeakyRelu { alpha: -0.7 },
            ActivationFamily::Abs,
            ActivationFamily::PureNonlinear { eta_target: 0.8 },
        ];
        for fam in families {
            for (sw, b) in [(1.0, 0.0), (2.0, -1.0), (0.5, 0.7), (1.0, 3.0)] {
                let spec = ActivationSpec::single(fam.clone()).with_sigmas(sw, 1.0);
                let c = spec.transforms_at(b).unwrap();
                let (q, _) = spec.quadrature_transforms(b).unwrap();
                assert!((c.eta() - q.eta()).abs() < 1e-9, "{fam:?} b={b}");
                assert!((c.zeta() - q.zeta()).abs() < 1e-9, "{fam:?} b={b}");
                assert!((c.xi0 - q.xi0).abs() < 1e-9, "{fam:?} b={b}");
            }
        }
    }

    #[test]
    fn normalization_gives_unit_mean_eta() {
        let spec = ActivationSpec::new(ActivationFamily::Relu, BiasLaw::Gaussian { sigma: 1.0 }).normalized();
        let t = compute_moments(&spec).unwrap();
        assert!((t.mean_eta() - 1.0).abs() < 1e-10);
        assert_eq!(t.entries.len(), DEFAULT_BIAS_ATOMS);
    }

    #[test]
    fn doubling_bias_atoms_is_stable() {
        let spec = ActivationSpec::new(ActivationFamily::Relu, BiasLaw::Gaussian { sigma: 1.0 });
        let a = compute_moments_with(&spec, DEFAULT_BIAS_ATOMS).unwrap();
        let b = compute_moments_with(&spec, 2 * DEFAULT_BIAS_ATOMS).unwrap();
        assert!((a.mean_eta() - b.mean_eta()).abs() < 1e-6);
        assert!((a.mean_zeta() - b.mean_zeta()).abs() < 1e-6);
    }

    #[test]
    fn erf_uses_quadrature() {
        let t = compute_moments(&ActivationSpec::single(ActivationFamily::Erf)).unwrap();
        assert_eq!(t.method, MomentMethod::Quadrature);
        assert!(t.quadrature_nodes >= MIN_NODES);
        // E erf(u)^2 = (2/pi) asin(2/3); E[u erf(u)] = 2/sqrt(3 pi).
        let e = t.entries[0];
        assert_relative_eq!(e.eta, 2.0 / PI * (2.0_f64 / 3.0).asin(), epsilon = 1e-12);
        assert_relative_eq!(e.zeta, 4.0 / (3.0 * PI), epsilon = 1e-12);
    }

    #[test]
    fn tabulated_relu_matches_relu() {
        let tab = ActivationSpec::new(
            ActivationFamily::Tabulated { knots: vec![(-1.0, 0.0), (0.0, 0.0), (1.0, 1.0)] },
            BiasLaw::Dirac { b0: 0.3 },
        );
        let relu = ActivationSpec::new(ActivationFamily::Relu, BiasLaw::Dirac { b0: 0.3 });
        let a = compute_moments(&tab).unwrap().entries[0];
        let b = compute_moments(&relu).unwrap().entries[0];
        assert!((a.eta - b.eta).abs() < 1e-12);
        assert!((a.zeta - b.zeta).abs() < 1e-12);
    }

    #[test]
    fn stein_examples() {
        let leaky = ActivationSpec::single(ActivationFamily::LeakyRelu { alpha: 0.3 });
        assert!(stein_check(&leaky, 0.0).unwrap() < 1e-8);
        assert_relative_eq!(leaky.transforms_at(0.0).unwrap().xi1, 0.65, epsilon = 1e-14);
        let lin = ActivationSpec::new(ActivationFamily::Linear, BiasLaw::Dirac { b0: 3.0 });
        assert!(stein_check(&lin, 3.0).unwrap() < 1e-12);
        let relu = relu().with_sigmas(2.0, 1.0);
        assert!(stein_check(&relu, -1.0).unwrap() < 1e-8);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = relu();
        s.sigma_w = 0.0;
        assert!(compute_moments(&s).is_err());
        let d = ActivationSpec::new(ActivationFamily::Relu, BiasLaw::Discrete { atoms: vec![(0.0, 0.5), (1.0, 0.4)] });
        assert!(compute_moments(&d).is_err());
        let mut m = ActivationSpec::mixture(MixtureSpec::balanced(0.5, 0.3));
        m.bias_law = BiasLaw::Dirac { b0: 0.0 };
        assert!(compute_moments(&m).is_err());
        let too_linear = ActivationSpec::mixture(MixtureSpec::balanced(0.5, 1.5));
        assert!(compute_moments(&too_linear).is_err());
    }

    #[test]
    fn pure_nonlinear_has_zero_zeta() {
        let s = ActivationSpec::single(ActivationFamily::PureNonlinear { eta_target: 1.0 });
        let (q, _) = s.quadrature_transforms(0.0).unwrap();
        assert!(q.zeta() < 1e-24);
        assert_relative_eq!(q.eta(), 1.0, epsilon = 1e-12);
    }
}
