use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: parameter {value} outside [0, 1]")]
    Domain { value: f64 },

    #[error("invalid knot vector: {0}")]
    InvalidKnots(String),

    #[error("invalid spline patch: {0}")]
    InvalidPatch(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("tile not periodic-conforming: {0}")]
    NonConformingTile(String),

    #[error("rational macro map: the Jacobian determinant has no polynomial degree")]
    RationalMacro,

    #[error("degenerate macro element {element} at xi = {xi:?}")]
    DegenerateMacro { element: usize, xi: [f64; 3] },

    #[error("singular tile Jacobian in patch {patch} at theta = {theta:?}")]
    SingularTile { patch: usize, theta: [f64; 3] },

    #[error("unsupported load scenario: {0}")]
    UnsupportedLoad(String),

    #[error(
        "projection did not converge below tol {tol:e} (error {error:e} at degrees {degrees:?})"
    )]
    ProjectionNotConverged {
        tol: f64,
        error: f64,
        degrees: Vec<usize>,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("lookup-table cache: {0}")]
    Cache(String),

    #[error("empty Dirichlet set on face {0}")]
    EmptyDirichlet(usize),

    #[error("CG did not converge in {iterations} iterations (final relative residual {final_residual:e})")]
    CgNotConverged {
        iterations: usize,
        final_residual: f64,
        history: Vec<f64>,
    },

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics (as opposed to bad input or IO).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateMacro { .. }
                | Error::SingularTile { .. }
                | Error::ProjectionNotConverged { .. }
                | Error::CgNotConverged { .. }
                | Error::Factorization(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
