//! Threshold gradient descent on the GEE quasi-likelihood.
//!
//! The mean model has one coefficient row per time point,
//! `μ_ij = β_j0 + Σ_p β_jp x_ip`, and the loss is the generalized
//! least-squares form `QL(β) = n⁻¹ Σ_i r_iᵀ V⁻¹ r_i` with
//! `V = A^{1/2} R(α) A^{1/2}`. Each iteration takes a thresholded step along
//! the negative gradient, then re-estimates `σ²` and `α` from the new
//! residuals.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::correlation::{
    build_correlation, estimate_alpha, estimate_variances, repair_positive_definite,
    sample_variances, standardize_residuals, VarianceProfile, WorkingCorrelation,
};
use crate::datamodel::{CoefficientMatrix, FitConfig, LongitudinalDataset, Standardization};
use crate::error::{Error, Result};
use crate::modelselect::{select_features, Selection};
use crate::tgdr::threshold_mask;

/// `t × (P + 1)` negative gradient of `QL/2`; column 0 holds the intercepts.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMatrix(pub DMatrix<f64>);

impl GradientMatrix {
    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    /// Feature entries (intercept excluded) of row `time`.
    pub fn feature_row(&self, time: usize) -> Vec<f64> {
        self.0.row(time).iter().skip(1).copied().collect()
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// On the standardized scale when `standardization` is present.
    pub beta: CoefficientMatrix,
    pub correlation: WorkingCorrelation,
    pub variances: VarianceProfile,
    /// QL at the start and after every iteration, each under the nuisance
    /// estimates current at that point.
    pub ql_trace: Vec<f64>,
    pub selection: Selection,
    pub k_used: usize,
    /// Number of positive-definite repairs that fired during the fit.
    pub repairs: usize,
    pub standardization: Option<Standardization>,
    /// Human-readable notes (repairs and the iteration they fired at).
    pub log: Vec<String>,
}

impl FitResult {
    /// Coefficients on the original covariate scale.
    pub fn original_scale_beta(&self) -> CoefficientMatrix {
        match &self.standardization {
            Some(s) => s.coefficients_to_original(&self.beta),
            None => self.beta.clone(),
        }
    }

    /// Fitted means for `ds`, whose covariates are on the original scale.
    pub fn predict(&self, ds: &LongitudinalDataset) -> Result<DMatrix<f64>> {
        match &self.standardization {
            Some(s) => fitted_values(&s.apply(ds)?, &self.beta),
            None => fitted_values(ds, &self.beta),
        }
    }
}

/// Details of one update, handed to path observers.
#[derive(Debug)]
pub struct StepInfo<'a> {
    pub beta_before: &'a CoefficientMatrix,
    pub gradient: &'a GradientMatrix,
    pub mask: &'a [Vec<bool>],
    /// Correlation matrix the gradient was computed with (after any repair).
    pub correlation: &'a DMatrix<f64>,
    pub variances: &'a VarianceProfile,
    /// Number of subject terms summed into each gradient entry.
    pub gradient_terms: usize,
}

/// A point on the coefficient path. `step` is `None` for the starting point.
#[derive(Debug)]
pub struct PathPoint<'a> {
    pub k: usize,
    pub beta: &'a CoefficientMatrix,
    pub step: Option<StepInfo<'a>>,
}

/// `μ_ij = β_j0 + Σ_p β_jp x_ip` for one subject.
pub fn mean_response(beta: &CoefficientMatrix, x_i: &[f64]) -> Result<DVector<f64>> {
    if x_i.len() != beta.n_features() {
        return Err(Error::DimensionMismatch(format!(
            "covariate vector has {} entries, coefficients cover {} features",
            x_i.len(),
            beta.n_features()
        )));
    }
    let b = beta.as_matrix();
    Ok(DVector::from_fn(beta.n_times(), |j, _| {
        let mut mu = b[(j, 0)];
        for (p, x) in x_i.iter().enumerate() {
            let c = b[(j, p + 1)];
            if c != 0.0 {
                mu += c * x;
            }
        }
        mu
    }))
}

/// `n × t` matrix of fitted means.
pub fn fitted_values(ds: &LongitudinalDataset, beta: &CoefficientMatrix) -> Result<DMatrix<f64>> {
    beta.check_against(ds)?;
    let x = ds.covariates();
    let b = beta.as_matrix();
    let (n, t, p) = (ds.n_subjects(), ds.n_times(), ds.n_features());
    let mut mu = DMatrix::zeros(n, t);
    for j in 0..t {
        let active: Vec<(usize, f64)> = (0..p)
            .map(|q| (q, b[(j, q + 1)]))
            .filter(|(_, c)| *c != 0.0)
            .collect();
        for i in 0..n {
            let mut m = b[(j, 0)];
            for &(q, c) in &active {
                m += c * x[(i, q)];
            }
            mu[(i, j)] = m;
        }
    }
    Ok(mu)
}

pub fn residuals(ds: &LongitudinalDataset, beta: &CoefficientMatrix) -> Result<DMatrix<f64>> {
    Ok(ds.outcomes() - fitted_values(ds, beta)?)
}

/// Cholesky factor of `V = A^{1/2} R A^{1/2}`.
struct Whitener {
    chol: Cholesky<f64, Dyn>,
    correlation: DMatrix<f64>,
    repaired: bool,
}

impl Whitener {
    fn new(r: &DMatrix<f64>, variances: &VarianceProfile) -> Result<Self> {
        let t = r.nrows();
        if !r.is_square() || variances.len() != t {
            return Err(Error::DimensionMismatch(format!(
                "correlation is {} × {}, variance profile has {} entries",
                r.nrows(),
                r.ncols(),
                variances.len()
            )));
        }
        let (correlation, repaired) = repair_positive_definite(r);
        let sd: Vec<f64> = variances.as_slice().iter().map(|v| v.sqrt()).collect();
        let v = DMatrix::from_fn(t, t, |j, k| sd[j] * correlation[(j, k)] * sd[k]);
        let chol = v
            .cholesky()
            .ok_or_else(|| Error::Factorization("working covariance after repair".into()))?;
        Ok(Whitener {
            chol,
            correlation,
            repaired,
        })
    }

    /// `n⁻¹ Σ_i r_iᵀ V⁻¹ r_i`.
    fn quasi_likelihood(&self, res: &DMatrix<f64>) -> f64 {
        let z = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&res.transpose())
            .expect("Cholesky factor has a positive diagonal");
        z.norm_squared() / res.nrows() as f64
    }

    /// `t × n` matrix whose column `i` is `V⁻¹ r_i`.
    fn whiten(&self, res: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(&res.transpose())
    }
}

fn gradient_from_weights(x: &DMatrix<f64>, w: &DMatrix<f64>) -> GradientMatrix {
    let (t, n) = w.shape();
    let p = x.ncols();
    let mut g = DMatrix::zeros(t, p + 1);
    for j in 0..t {
        let mut s = 0.0;
        for i in 0..n {
            s += w[(j, i)];
        }
        g[(j, 0)] = s;
    }
    for q in 0..p {
        for j in 0..t {
            let mut s = 0.0;
            for i in 0..n {
                s += x[(i, q)] * w[(j, i)];
            }
            g[(j, q + 1)] = s;
        }
    }
    GradientMatrix(g / n as f64)
}

/// `QL(β)` for correlation matrix `r` and variance profile `variances`,
/// evaluated through a Cholesky solve.
pub fn quasi_likelihood(
    ds: &LongitudinalDataset,
    beta: &CoefficientMatrix,
    r: &DMatrix<f64>,
    variances: &VarianceProfile,
) -> Result<f64> {
    let w = Whitener::new(r, variances)?;
    Ok(w.quasi_likelihood(&residuals(ds, beta)?))
}

/// `g_jp = n⁻¹ Σ_i x_ip [V⁻¹ (Y_i − μ_i)]_j` with `x_i0 ≡ 1`.
pub fn ql_gradient(
    ds: &LongitudinalDataset,
    beta: &CoefficientMatrix,
    r: &DMatrix<f64>,
    variances: &VarianceProfile,
) -> Result<GradientMatrix> {
    let w = Whitener::new(r, variances)?;
    Ok(gradient_from_weights(ds.covariates(), &w.whiten(&residuals(ds, beta)?)))
}

/// Row-wise threshold of the feature gradients; the maximum is taken within
/// each time point.
pub fn per_time_threshold(g: &GradientMatrix, tau: f64) -> Vec<Vec<bool>> {
    (0..g.0.nrows())
        .map(|j| threshold_mask(&g.feature_row(j), tau))
        .collect()
}

pub fn gee_tgdr_fit(ds: &LongitudinalDataset, config: &FitConfig) -> Result<FitResult> {
    gee_tgdr_fit_observed(ds, config, |_| {})
}

/// Like [`gee_tgdr_fit`], calling `observe` at the starting point and after
/// every iteration. Coefficients passed to the observer are on the scale the
/// fit runs on (standardized when `config.standardize`).
pub fn gee_tgdr_fit_observed<F>(
    ds: &LongitudinalDataset,
    config: &FitConfig,
    observe: F,
) -> Result<FitResult>
where
    F: FnMut(&PathPoint<'_>),
{
    config.validate()?;
    if config.standardize {
        let s = Standardization::fit(ds)?;
        let z = s.apply(ds)?;
        let mut fit = run_path(&z, config, observe)?;
        fit.standardization = Some(s);
        Ok(fit)
    } else {
        run_path(ds, config, observe)
    }
}

fn run_path<F>(ds: &LongitudinalDataset, config: &FitConfig, mut observe: F) -> Result<FitResult>
where
    F: FnMut(&PathPoint<'_>),
{
    let t = ds.n_times();
    let kind = config.structure;
    let mut log = Vec::new();
    let mut repairs = 0usize;

    let mut beta = CoefficientMatrix::zeros(t, ds.n_features());
    let mut variances = if config.estimate_variances {
        sample_variances(ds.outcomes())
    } else {
        VarianceProfile::ones(t)
    };
    let mut correlation = WorkingCorrelation::identity(kind, t);
    let mut whitener = Whitener::new(&build_correlation(&correlation, t)?, &variances)?;
    let mut res = residuals(ds, &beta)?;

    let mut trace = Vec::with_capacity(config.k_max + 1);
    trace.push(whitener.quasi_likelihood(&res));
    observe(&PathPoint {
        k: 0,
        beta: &beta,
        step: None,
    });

    for k in 1..=config.k_max {
        let g = gradient_from_weights(ds.covariates(), &whitener.whiten(&res));
        if g.0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                quantity: "gradient",
                iteration: k,
            });
        }
        let mask = per_time_threshold(&g, config.tau);

        let before = beta.clone();
        let b = beta.as_matrix_mut();
        for j in 0..t {
            b[(j, 0)] += config.dv * g.0[(j, 0)];
            for (p, keep) in mask[j].iter().enumerate() {
                if *keep {
                    b[(j, p + 1)] += config.dv * g.0[(j, p + 1)];
                }
            }
        }

        res = residuals(ds, &beta)?;
        let used_variances = variances.clone();
        let used_whitener = whitener;
        if config.estimate_variances {
            variances = estimate_variances(&res);
        }
        let est = estimate_alpha(
            &standardize_residuals(&res, &variances),
            kind,
            config.alpha_floor_epsilon,
        );
        if est.repaired {
            repairs += 1;
            log.push(format!(
                "iteration {k}: unstructured correlation estimate repaired to positive definite"
            ));
        }
        correlation = est.correlation;
        whitener = Whitener::new(&build_correlation(&correlation, t)?, &variances)?;
        if whitener.repaired {
            repairs += 1;
            log.push(format!(
                "iteration {k}: working correlation repaired before factorization"
            ));
        }

        let ql = whitener.quasi_likelihood(&res);
        if !ql.is_finite() {
            return Err(Error::Divergence {
                quantity: "quasi-likelihood",
                iteration: k,
            });
        }
        trace.push(ql);

        observe(&PathPoint {
            k,
            beta: &beta,
            step: Some(StepInfo {
                beta_before: &before,
                gradient: &g,
                mask: &mask,
                correlation: &used_whitener.correlation,
                variances: &used_variances,
                gradient_terms: ds.n_subjects(),
            }),
        });
    }

    let selection = select_features(&beta, config.selection_tolerance);
    Ok(FitResult {
        beta,
        correlation,
        variances,
        ql_trace: trace,
        selection,
        k_used: config.k_max,
        repairs,
        standardization: None,
        log,
    })
}
