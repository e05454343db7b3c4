use std::fmt;

use crate::market::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the library.
///
/// The CLI maps each variant onto one of its exit codes through
/// [`Error::kind`].
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("no products")]
    NoProducts,

    #[error("schema violation in {field} at {location}: {message}")]
    Schema {
        field: String,
        location: String,
        message: String,
    },

    #[error("{}", ViolationList(.0))]
    Invalid(Vec<Violation>),

    #[error("unknown firm reference `{0}`")]
    UnknownFirm(String),

    #[error("unknown product reference `{0}`")]
    UnknownProduct(String),

    #[error("missing revenue diversion ratio {from} -> {to}")]
    MissingDiversion { from: String, to: String },

    #[error("missing margin for product {0}")]
    MissingMargin(String),

    #[error("inelastic pricing violates Bertrand FOC (own-price elasticity {0})")]
    InelasticPricing(f64),

    #[error("margins inconsistent with Bertrand FOC for product {product}: {detail}")]
    InconsistentMargins { product: String, detail: String },

    #[error("CMCR system singular (condition number {condition:e})")]
    SingularSystem { condition: f64 },

    #[error("pass-through Jacobian is singular (determinant {determinant:e})")]
    SingularJacobian { determinant: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("inversion requires interior shares ({0})")]
    NonInteriorShares(String),

    #[error("rank-deficient design (rank {rank} < {columns} columns)")]
    RankDeficientDesign { rank: usize, columns: usize },

    #[error("zero denominator: {0}")]
    ZeroDenominator(&'static str),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("solver did not converge: {0}")]
    NonConvergence(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse classification used for exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    NonConvergence,
    Io,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } => ErrorKind::Io,
            Error::NonConvergence(_) => ErrorKind::NonConvergence,
            _ => ErrorKind::Validation,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

struct ViolationList<'a>(&'a [Violation]);

impl fmt::Display for ViolationList<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} validation error(s): ", self.0.len())?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}
