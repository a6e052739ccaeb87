use thiserror::Error;

use crate::system::Branch;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Input outside the domain of an operation (non-finite time, empty grid, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A system or config failed validation; `field` is the offending key path.
    #[error("invalid `{field}`: {message}")]
    Invalid { field: String, message: String },

    #[error("not hyperbolic: characteristic root on the imaginary axis at z = {z}")]
    NotHyperbolic { z: f64 },

    #[error("{branch} limit system: {source}")]
    Branch {
        branch: Branch,
        #[source]
        source: Box<Error>,
    },

    #[error("rectangle on root: boundary smallest singular value {smin:.3e} after retries")]
    RectangleOnRoot { smin: f64 },

    #[error("singular characteristic matrix at s = {re}{im:+}i")]
    Resolvent { re: f64, im: f64 },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("small-gain condition violated: eps = {eps:.6e} >= threshold {threshold:.6e}")]
    SmallGain { eps: f64, threshold: f64 },

    #[error("Neumann series not contracting: measured ratio {ratio:.4}")]
    Divergence { ratio: f64 },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("integration blew up at t = {t} (norm {norm:.3e})")]
    BlowUp { t: f64, norm: f64 },

    #[error("kernel obstruction: collocation matrix is numerically singular ({0})")]
    KernelObstruction(String),

    #[error("domain too small: boundary leakage {leakage:.3e} exceeds {limit:.3e}; increase the half-width")]
    DomainTooSmall { leakage: f64, limit: f64 },

    #[error("F-space degeneracy: restricted operator condition number {cond:.3e}")]
    FSpaceDegeneracy { cond: f64 },
}

impl Error {
    pub fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn on_branch(self, branch: Branch) -> Self {
        Error::Branch {
            branch,
            source: Box::new(self),
        }
    }

    /// Short machine-readable tag, used by report serialization.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Invalid { .. } => "invalid",
            Error::NotHyperbolic { .. } => "not_hyperbolic",
            Error::Branch { source, .. } => source.kind(),
            Error::RectangleOnRoot { .. } => "rectangle_on_root",
            Error::Resolvent { .. } => "resolvent",
            Error::Precondition(_) => "precondition",
            Error::SmallGain { .. } => "small_gain",
            Error::Divergence { .. } => "divergence",
            Error::DegenerateFit(_) => "degenerate_fit",
            Error::BlowUp { .. } => "blow_up",
            Error::KernelObstruction(_) => "kernel_obstruction",
            Error::DomainTooSmall { .. } => "domain_too_small",
            Error::FSpaceDegeneracy { .. } => "f_space_degeneracy",
        }
    }
}
