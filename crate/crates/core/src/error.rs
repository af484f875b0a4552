use std::path::PathBuf;

/// Errors raised by the filters, oracles and the experiment harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("non-finite value in {context} (component {component}: {value})")]
    NumericalDomain {
        context: &'static str,
        component: usize,
        value: f64,
    },

    #[error("particle {index} became non-finite: drift={drift:e}, diffusion={diffusion:e}, control={control:e}, correction={correction:e}")]
    NonFiniteParticle {
        index: usize,
        drift: f64,
        diffusion: f64,
        control: f64,
        correction: f64,
    },

    #[error("covariance is not positive semidefinite (min eigenvalue {min_eigenvalue:e}, asymmetry {asymmetry:e})")]
    NotPositiveSemidefinite { min_eigenvalue: f64, asymmetry: f64 },

    #[error("association belief degenerated during projection: {0:?}")]
    DegenerateBelief(Vec<f64>),

    #[error("association update too stiff: |dpi| = {increment:e} after {substeps} sub-steps (pi = {pi:?})")]
    StiffUpdate {
        increment: f64,
        substeps: usize,
        pi: [f64; 2],
    },

    #[error("grid too small: boundary mass {boundary_mass:e} exceeds {limit:e}")]
    GridTooSmall { boundary_mass: f64, limit: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("empty metric window [{start}, {end}]")]
    EmptyWindow { start: f64, end: f64 },

    #[error("step {step}, {entity}: {source}")]
    AtStep {
        step: usize,
        entity: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_step(self, step: usize, entity: impl Into<String>) -> Self {
        Error::AtStep {
            step,
            entity: entity.into(),
            source: Box::new(self),
        }
    }

    /// Process exit code: 2 config, 3 numerical failure, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) | Error::Json(_) => 2,
            Error::Io { .. } => 4,
            Error::AtStep { source, .. } => source.exit_code(),
            _ => 3,
        }
    }
}

/// Returns `NumericalDomain` for the first non-finite entry of `values`.
pub(crate) fn ensure_finite(context: &'static str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(component) => Err(Error::NumericalDomain {
            context,
            component,
            value: values[component],
        }),
        None => Ok(()),
    }
}
