//! Longitudinal sparse regression by threshold gradient descent on a GEE
//! quasi-likelihood.
//!
//! A continuous outcome observed at `t` time points per subject is modelled
//! as a per-time linear function of `P` time-invariant covariates. The
//! coefficients are grown from zero by small gradient steps on the
//! generalized-least-squares objective, and at every step only the
//! coefficients whose gradient is close to the per-time maximum are moved.
//! The number of steps `K` is the regularization parameter and is chosen by
//! subject-level cross-validation.
//!
//! Modules:
//! * [`datamodel`]: dataset container, validation, standardization, configuration.
//! * [`correlation`]: working correlation structures and their moment estimators.
//! * [`tgdr`]: the univariate threshold gradient descent building block.
//! * [`geetgdr`]: the longitudinal fit.
//! * [`modelselect`]: MSE, k-fold CV over `K`, feature sets, structure comparison.
//! * [`simgen`]: synthetic data with known sparse truth.
//! * [`assoc`]: Spearman correlation network with Benjamini-Hochberg FDR.

pub mod assoc;
pub mod correlation;
pub mod datamodel;
pub mod error;
pub mod geetgdr;
pub mod modelselect;
pub mod simgen;
pub mod tgdr;

pub use correlation::{CorrelationStructure, VarianceProfile, WorkingCorrelation};
pub use datamodel::{CoefficientMatrix, FitConfig, LongitudinalDataset, RawDataset, Standardization};
pub use error::{Error, Result};
pub use geetgdr::{gee_tgdr_fit, FitResult};
pub use modelselect::{compare_structures, cross_validate, CvResult, Selection, StructureComparison};
