use num_complex::Complex64;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("quadrature did not converge: last estimate {last}, previous {previous}")]
    QuadratureNonConvergence { last: f64, previous: f64 },

    #[error("integrand is not finite at S = {at}")]
    NonFiniteIntegrand { at: f64 },

    #[error("eigensolver failed: {0}")]
    Eigen(String),

    #[error("linear solve failed: {0}")]
    Singular(String),

    #[error("self-consistent iteration did not converge at z = {z} (last residuals {trace:?})")]
    SceNonConvergence { z: Complex64, trace: Vec<f64> },

    #[error("D(b) vanished at z = {z}; the self-consistent equations are singular there")]
    SceSingular { z: Complex64 },

    #[error("fixed points from different initializations disagree at z = {z}: {first} vs {second}")]
    MultipleFixedPoints {
        z: Complex64,
        first: Complex64,
        second: Complex64,
    },

    #[error("closed form requires 0 < phi <= psi <= 1 and a Marchenko-Pastur law (got phi = {phi}, psi = {psi}); use sce::solve_sce instead")]
    UnsupportedRange { phi: f64, psi: f64 },

    #[error("both implicit and finite-difference derivatives failed at z = {z}")]
    DerivativeFailure { z: Complex64 },

    #[error("GCV denominator gamma*s(-gamma) = {value} is degenerate")]
    DegenerateDenominator { value: f64 },

    #[error("no solution: {0}")]
    NoSolution(String),

    #[error("empty grid: {0}")]
    EmptyGrid(String),

    #[error("density extraction failed at lambda = {lambda}: {source}")]
    DensityPoint {
        lambda: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("supports do not overlap: {0}")]
    DisjointSupport(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("malformed matrix input: {0}")]
    MatrixFormat(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::EmptyGrid(_) | Error::InvalidSpec(_) => 2,
            Error::MatrixFormat(_) | Error::Dimension(_) | Error::Io(_) => 3,
            Error::SceNonConvergence { .. }
            | Error::SceSingular { .. }
            | Error::MultipleFixedPoints { .. }
            | Error::QuadratureNonConvergence { .. }
            | Error::DerivativeFailure { .. } => 4,
            Error::DensityPoint { source, .. } => source.exit_code(),
            _ => 1,
        }
    }
}
