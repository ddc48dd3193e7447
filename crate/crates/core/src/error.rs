use std::fmt;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// One violated dataset invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation(pub String);

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dataset:\n{}", format_violations(.0))]
    InvalidDataset(Vec<Violation>),

    #[error("constant feature '{0}' cannot be standardized")]
    ConstantFeature(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("correlation matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("non-finite {quantity} at iteration {iteration}")]
    Divergence { quantity: &'static str, iteration: usize },

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("p-value {0} outside [0, 1]")]
    InvalidPValue(f64),

    #[error("{0}")]
    Undefined(String),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| format!("  - {x}"))
        .collect::<Vec<_>>()
        .join("\n")
}
