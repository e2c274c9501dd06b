use thiserror::Error;

#[derive(Debug, Error)]
pub enum CellwallError {
    #[error("rank-4 tensor violates major/minor symmetry (relative residual {residual:.3e})")]
    TensorSymmetry { residual: f64 },

    #[error("invalid material parameter: {0}")]
    InvalidMaterial(String),

    #[error("compliance matrix not positive definite (min eigenvalue {min_eig:.3e})")]
    ComplianceNotPd { min_eig: f64 },

    #[error("invalid mesh parameter: {0}")]
    InvalidMesh(String),

    #[error("coefficient tensor is not positive definite")]
    CoefficientNotPd,

    #[error("dependent constraints detected (pivot {pivot:.3e} below tolerance)")]
    DependentConstraints { pivot: f64 },

    #[error("CG did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    SolverDiverged { iterations: usize, residual: f64 },

    #[error("loss of ellipticity: Voigt min eigenvalue {min_eig:.3e} at element {element}")]
    LossOfEllipticity { element: usize, min_eig: f64 },

    #[error("invalid chemistry input: {0}")]
    InvalidChemistry(String),

    #[error("species undershoot beyond clamp tolerance: {species} = {value:.3e}")]
    NegativeSpecies { species: &'static str, value: f64 },

    #[error("invalid coupling parameter: {0}")]
    InvalidCoupling(String),

    #[error("stale localization field: expected mesh id {expected}, got {got}")]
    StaleLocalization { expected: u64, got: u64 },

    #[error("inner fixed-point iteration failed to converge (last change {last_change:.3e}) and time step floor {dt_floor:.3e} reached")]
    FixedPointFailure { last_change: f64, dt_floor: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("configuration errors:\n{}", .0.join("\n"))]
    ConfigList(Vec<String>),

    #[error("i/o failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CellwallError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        CellwallError::Io {
            path: path.into(),
            source,
        }
    }
}
