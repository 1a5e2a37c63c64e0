use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("interface could not be isolated in cell [{lo:?}, {hi:?}] after {depth} subdivisions")]
    UnresolvedCut { lo: [f64; 2], hi: [f64; 2], depth: usize },
    #[error("interface meets the outer boundary (boundary element {element} is cut)")]
    InterfaceTouchesBoundary { element: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("mesh needs at least 2 subdivisions per axis, got {0}")]
    TooCoarse(usize),
    #[error("subdivision count must be even, got {0}")]
    OddSubdivision(usize),
    #[error("refinement list must be strictly increasing powers of two, got {0:?}")]
    InvalidRefinement(Vec<usize>),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("linear solve did not reach relative residual {tol:e} (got {residual:e})")]
    NonConverged { residual: f64, tol: f64 },
    #[error("factorization broke down: {0}")]
    Singular(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("viscosities must satisfy 0 < mu_minus <= mu_plus (got {mu_minus}, {mu_plus})")]
    Viscosity { mu_minus: f64, mu_plus: f64 },
    #[error("slip coefficient must be {requirement} (got {value})")]
    Slip { value: f64, requirement: &'static str },
    #[error("average weights must satisfy alpha + beta = 1 with both in [0, 1] (got {alpha}, {beta})")]
    Weights { alpha: f64, beta: f64 },
    #[error("{name} must be {requirement} (got {value})")]
    Penalty { name: &'static str, value: f64, requirement: &'static str },
}

/// Top-level error for a full solve pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Param(#[from] ParamError),
}

impl Error {
    /// Short machine-readable status used in result tables.
    pub fn status(&self) -> &'static str {
        match self {
            Error::Geometry(_) => "GEOMETRY_ERROR",
            Error::Mesh(_) => "MESH_ERROR",
            Error::Solve(SolveError::NonConverged { .. }) => "NON_CONVERGED",
            Error::Solve(SolveError::Singular(_)) => "SINGULAR",
            Error::Solve(SolveError::DimensionMismatch(_)) => "DIMENSION_MISMATCH",
            Error::Param(_) => "INVALID_PARAMS",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
