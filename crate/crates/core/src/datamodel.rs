//! Dataset container, validation, covariate standardization and fit
//! configuration.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::correlation::CorrelationStructure;
use crate::error::{Error, Result, Violation};

/// Unvalidated dataset as parsed from input files. Matrices are row-major,
/// one row per subject.
#[derive(Debug, Clone, Default)]
pub struct RawDataset {
    pub subject_ids: Vec<String>,
    pub feature_names: Vec<String>,
    pub time_labels: Vec<String>,
    pub covariates: Vec<Vec<f64>>,
    pub outcomes: Vec<Vec<f64>>,
}

/// `n` subjects with `P` time-invariant covariates and an outcome observed
/// at the same `t` time points for everyone.
///
/// Only constructible through [`validate_dataset`], so every instance
/// satisfies: `n >= 2`, `t >= 2`, `P >= 1`, unique identifiers, finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct LongitudinalDataset {
    subject_ids: Vec<String>,
    feature_names: Vec<String>,
    time_labels: Vec<String>,
    covariates: DMatrix<f64>,
    outcomes: DMatrix<f64>,
}

impl LongitudinalDataset {
    pub fn from_matrices(
        subject_ids: Vec<String>,
        feature_names: Vec<String>,
        time_labels: Vec<String>,
        covariates: DMatrix<f64>,
        outcomes: DMatrix<f64>,
    ) -> Result<Self> {
        let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            (0..m.nrows())
                .map(|i| m.row(i).iter().copied().collect())
                .collect()
        };
        validate_dataset(RawDataset {
            covariates: rows(&covariates),
            outcomes: rows(&outcomes),
            subject_ids,
            feature_names,
            time_labels,
        })
    }

    pub fn n_subjects(&self) -> usize {
        self.subject_ids.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn n_times(&self) -> usize {
        self.time_labels.len()
    }

    pub fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn time_labels(&self) -> &[String] {
        &self.time_labels
    }

    /// `n × P`.
    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }

    /// `n × t`.
    pub fn outcomes(&self) -> &DMatrix<f64> {
        &self.outcomes
    }

    /// Dataset restricted to the given subject rows, in the given order.
    pub fn subset(&self, rows: &[usize]) -> LongitudinalDataset {
        LongitudinalDataset {
            subject_ids: rows.iter().map(|&i| self.subject_ids[i].clone()).collect(),
            feature_names: self.feature_names.clone(),
            time_labels: self.time_labels.clone(),
            covariates: self.covariates.select_rows(rows),
            outcomes: self.outcomes.select_rows(rows),
        }
    }

    /// Replaces the covariate matrix; used by the standardization transform.
    fn with_covariates(&self, covariates: DMatrix<f64>) -> LongitudinalDataset {
        LongitudinalDataset {
            covariates,
            ..self.clone()
        }
    }
}

/// Checks every dataset invariant and reports all violations at once.
pub fn validate_dataset(raw: RawDataset) -> Result<LongitudinalDataset> {
    let mut issues = Vec::new();
    let n = raw.subject_ids.len();
    let p = raw.feature_names.len();
    let t = raw.time_labels.len();

    if n < 2 {
        issues.push(format!("need at least 2 subjects, found {n}"));
    }
    if t < 2 {
        issues.push(format!("need at least 2 time points, found {t}"));
    }
    if p < 1 {
        issues.push("need at least 1 feature, found 0".to_string());
    }
    duplicates(&raw.subject_ids, "subject identifier", &mut issues);
    duplicates(&raw.feature_names, "feature name", &mut issues);
    duplicates(&raw.time_labels, "time label", &mut issues);

    check_block(
        "covariates",
        &raw.covariates,
        &raw.subject_ids,
        &raw.feature_names,
        "feature",
        &mut issues,
    );
    check_block(
        "outcomes",
        &raw.outcomes,
        &raw.subject_ids,
        &raw.time_labels,
        "time",
        &mut issues,
    );

    if !issues.is_empty() {
        return Err(Error::InvalidDataset(issues.into_iter().map(Violation).collect()));
    }

    let covariates = DMatrix::from_fn(n, p, |i, j| raw.covariates[i][j]);
    let outcomes = DMatrix::from_fn(n, t, |i, j| raw.outcomes[i][j]);
    Ok(LongitudinalDataset {
        subject_ids: raw.subject_ids,
        feature_names: raw.feature_names,
        time_labels: raw.time_labels,
        covariates,
        outcomes,
    })
}

fn duplicates(names: &[String], what: &str, issues: &mut Vec<String>) {
    let mut seen = HashSet::new();
    let mut reported = HashSet::new();
    for name in names {
        if !seen.insert(name.as_str()) && reported.insert(name.as_str()) {
            issues.push(format!("duplicate {what} \"{name}\""));
        }
    }
}

fn check_block(
    block: &str,
    rows: &[Vec<f64>],
    subjects: &[String],
    columns: &[String],
    column_kind: &str,
    issues: &mut Vec<String>,
) {
    if rows.len() != subjects.len() {
        issues.push(format!(
            "{block}: {} rows for {} subjects",
            rows.len(),
            subjects.len()
        ));
    }
    for (i, row) in rows.iter().enumerate() {
        let subject = subjects.get(i).map(String::as_str).unwrap_or("?");
        if row.len() != columns.len() {
            issues.push(format!(
                "{block}: row {} (subject \"{subject}\") has {} values, expected {}",
                i + 1,
                row.len(),
                columns.len()
            ));
        }
        for (j, v) in row.iter().enumerate() {
            if !v.is_finite() {
                let column = columns.get(j).map(String::as_str).unwrap_or("?");
                issues.push(format!(
                    "{block}: non-finite value {v} at subject {} (\"{subject}\"), {column_kind} {} (\"{column}\")",
                    i + 1,
                    j + 1
                ));
            }
        }
    }
}

/// Per-feature z-score parameters (sample standard deviation, `ddof = 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl Standardization {
    /// Estimates the transform from the covariates of `ds`.
    pub fn fit(ds: &LongitudinalDataset) -> Result<Self> {
        let x = ds.covariates();
        let n = x.nrows() as f64;
        let mut means = Vec::with_capacity(x.ncols());
        let mut sds = Vec::with_capacity(x.ncols());
        for (p, col) in x.column_iter().enumerate() {
            let mean = col.sum() / n;
            let ss: f64 = col.iter().map(|v| (v - mean).powi(2)).sum();
            let sd = (ss / (n - 1.0)).sqrt();
            if !(sd > f64::EPSILON * mean.abs().max(1.0)) {
                return Err(Error::ConstantFeature(ds.feature_names()[p].clone()));
            }
            means.push(mean);
            sds.push(sd);
        }
        Ok(Standardization { means, sds })
    }

    pub fn apply(&self, ds: &LongitudinalDataset) -> Result<LongitudinalDataset> {
        let x = ds.covariates();
        if x.ncols() != self.means.len() {
            return Err(Error::DimensionMismatch(format!(
                "standardization has {} features, dataset has {}",
                self.means.len(),
                x.ncols()
            )));
        }
        let z = DMatrix::from_fn(x.nrows(), x.ncols(), |i, p| {
            (x[(i, p)] - self.means[p]) / self.sds[p]
        });
        Ok(ds.with_covariates(z))
    }

    pub fn invert(&self, ds: &LongitudinalDataset) -> Result<LongitudinalDataset> {
        let z = ds.covariates();
        if z.ncols() != self.means.len() {
            return Err(Error::DimensionMismatch(format!(
                "standardization has {} features, dataset has {}",
                self.means.len(),
                z.ncols()
            )));
        }
        let x = DMatrix::from_fn(z.nrows(), z.ncols(), |i, p| {
            z[(i, p)] * self.sds[p] + self.means[p]
        });
        Ok(ds.with_covariates(x))
    }

    /// Maps coefficients fitted on standardized covariates back to the
    /// original covariate scale.
    pub fn coefficients_to_original(&self, beta: &CoefficientMatrix) -> CoefficientMatrix {
        let b = beta.as_matrix();
        let mut out = b.clone();
        for j in 0..b.nrows() {
            let mut intercept = b[(j, 0)];
            for p in 0..self.means.len() {
                let slope = b[(j, p + 1)] / self.sds[p];
                out[(j, p + 1)] = slope;
                intercept -= slope * self.means[p];
            }
            out[(j, 0)] = intercept;
        }
        CoefficientMatrix(out)
    }
}

/// Z-scores every covariate column. Returns the transformed dataset and the
/// transform so coefficients can be reported on either scale.
pub fn standardize_covariates(
    ds: &LongitudinalDataset,
) -> Result<(LongitudinalDataset, Standardization)> {
    let s = Standardization::fit(ds)?;
    Ok((s.apply(ds)?, s))
}

/// `t × (P + 1)` coefficients. Column 0 holds the per-time intercepts.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientMatrix(DMatrix<f64>);

impl CoefficientMatrix {
    pub fn zeros(n_times: usize, n_features: usize) -> Self {
        CoefficientMatrix(DMatrix::zeros(n_times, n_features + 1))
    }

    pub fn from_matrix(beta: DMatrix<f64>) -> Result<Self> {
        if beta.ncols() < 2 || beta.nrows() < 1 {
            return Err(Error::DimensionMismatch(format!(
                "coefficient matrix must be t × (P + 1) with P ≥ 1, got {} × {}",
                beta.nrows(),
                beta.ncols()
            )));
        }
        if beta.iter().any(|v| !v.is_finite()) {
            return Err(Error::DimensionMismatch(
                "coefficient matrix has non-finite entries".into(),
            ));
        }
        Ok(CoefficientMatrix(beta))
    }

    pub fn n_times(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.0.ncols() - 1
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub(crate) fn as_matrix_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.0
    }

    pub fn intercept(&self, time: usize) -> f64 {
        self.0[(time, 0)]
    }

    /// Coefficient of feature `feature` (0-based) at time `time`.
    pub fn feature(&self, time: usize, feature: usize) -> f64 {
        self.0[(time, feature + 1)]
    }

    /// Row `time` as an intercept-first vector.
    pub fn row(&self, time: usize) -> DVector<f64> {
        self.0.row(time).transpose()
    }

    pub(crate) fn check_against(&self, ds: &LongitudinalDataset) -> Result<()> {
        if self.n_times() != ds.n_times() || self.n_features() != ds.n_features() {
            return Err(Error::DimensionMismatch(format!(
                "coefficients are {} × {}, dataset needs {} × {}",
                self.0.nrows(),
                self.0.ncols(),
                ds.n_times(),
                ds.n_features() + 1
            )));
        }
        Ok(())
    }
}

/// Tuning and numerical settings of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub structure: CorrelationStructure,
    /// Threshold fraction in `[0, 1]`.
    pub tau: f64,
    /// Step increment.
    pub dv: f64,
    /// Iteration budget `K`.
    pub k_max: usize,
    pub standardize: bool,
    pub alpha_floor_epsilon: f64,
    pub selection_tolerance: f64,
    pub rng_seed: u64,
    /// When false, the variance profile is held at 1 for every time point.
    pub estimate_variances: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            structure: CorrelationStructure::Exchangeable,
            tau: 1.0,
            dv: 0.01,
            k_max: 1000,
            standardize: true,
            alpha_floor_epsilon: 0.01,
            selection_tolerance: 0.0,
            rng_seed: 0,
            estimate_variances: true,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(0.0..=1.0).contains(&self.tau) {
            problems.push(format!("tau must lie in [0, 1], got {}", self.tau));
        }
        if !(self.dv > 0.0 && self.dv.is_finite()) {
            problems.push(format!("dv must be positive, got {}", self.dv));
        }
        if !(self.alpha_floor_epsilon > 0.0 && self.alpha_floor_epsilon < 0.5) {
            problems.push(format!(
                "alpha_floor_epsilon must lie in (0, 0.5), got {}",
                self.alpha_floor_epsilon
            ));
        }
        if !(self.selection_tolerance >= 0.0) {
            problems.push(format!(
                "selection_tolerance must be non-negative, got {}",
                self.selection_tolerance
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems.join("; ")))
        }
    }
}
