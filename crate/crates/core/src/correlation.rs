//! Working correlation structures `R(α)`, the per-time variance profile
//! `A = diag(σ²)`, and their residual moment estimators.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Eigenvalue floor used by the positive-definite repair.
pub const EIGEN_FLOOR: f64 = 1e-8;

/// Floor applied to every variance estimate.
pub const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationStructure {
    Independent,
    Exchangeable,
    Ar1,
    Unstructured,
}

impl CorrelationStructure {
    /// All four structures in report order.
    pub const ALL: [CorrelationStructure; 4] = [
        CorrelationStructure::Ar1,
        CorrelationStructure::Unstructured,
        CorrelationStructure::Exchangeable,
        CorrelationStructure::Independent,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CorrelationStructure::Independent => "independent",
            CorrelationStructure::Exchangeable => "exchangeable",
            CorrelationStructure::Ar1 => "ar1",
            CorrelationStructure::Unstructured => "unstructured",
        }
    }
}

impl fmt::Display for CorrelationStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CorrelationStructure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "independent" | "independence" => Ok(CorrelationStructure::Independent),
            "exchangeable" => Ok(CorrelationStructure::Exchangeable),
            "ar1" => Ok(CorrelationStructure::Ar1),
            "unstructured" => Ok(CorrelationStructure::Unstructured),
            other => Err(Error::InvalidConfig(format!(
                "unknown correlation structure '{other}' (expected ar1, exchangeable, unstructured or independent)"
            ))),
        }
    }
}

/// A correlation structure together with its estimated parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum WorkingCorrelation {
    Independent,
    Exchangeable(f64),
    Ar1(f64),
    /// Symmetric, unit diagonal, positive definite.
    Unstructured(DMatrix<f64>),
}

impl WorkingCorrelation {
    /// The parameter-free starting point for `kind`: `α = 0`, i.e. `R = I`.
    pub fn identity(kind: CorrelationStructure, t: usize) -> Self {
        match kind {
            CorrelationStructure::Independent => WorkingCorrelation::Independent,
            CorrelationStructure::Exchangeable => WorkingCorrelation::Exchangeable(0.0),
            CorrelationStructure::Ar1 => WorkingCorrelation::Ar1(0.0),
            CorrelationStructure::Unstructured => {
                WorkingCorrelation::Unstructured(DMatrix::identity(t, t))
            }
        }
    }

    pub fn kind(&self) -> CorrelationStructure {
        match self {
            WorkingCorrelation::Independent => CorrelationStructure::Independent,
            WorkingCorrelation::Exchangeable(_) => CorrelationStructure::Exchangeable,
            WorkingCorrelation::Ar1(_) => CorrelationStructure::Ar1,
            WorkingCorrelation::Unstructured(_) => CorrelationStructure::Unstructured,
        }
    }

    /// Scalar `α` for exchangeable and AR1.
    pub fn alpha_scalar(&self) -> Option<f64> {
        match self {
            WorkingCorrelation::Exchangeable(a) | WorkingCorrelation::Ar1(a) => Some(*a),
            _ => None,
        }
    }

    pub fn matrix(&self, t: usize) -> Result<DMatrix<f64>> {
        build_correlation(self, t)
    }
}

/// Per-time outcome variances `σ_j²`, shared by all subjects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceProfile(Vec<f64>);

impl VarianceProfile {
    pub fn new(sigma_sq: Vec<f64>) -> Result<Self> {
        if let Some(bad) = sigma_sq.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidConfig(format!(
                "variances must be positive and finite, got {bad}"
            )));
        }
        Ok(VarianceProfile(sigma_sq))
    }

    pub fn ones(t: usize) -> Self {
        VarianceProfile(vec![1.0; t])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Builds the `t × t` matrix `R(α)`.
pub fn build_correlation(wc: &WorkingCorrelation, t: usize) -> Result<DMatrix<f64>> {
    Ok(match wc {
        WorkingCorrelation::Independent => DMatrix::identity(t, t),
        WorkingCorrelation::Exchangeable(a) => {
            DMatrix::from_fn(t, t, |j, k| if j == k { 1.0 } else { *a })
        }
        WorkingCorrelation::Ar1(a) => {
            DMatrix::from_fn(t, t, |j, k| a.powi(j.abs_diff(k) as i32))
        }
        WorkingCorrelation::Unstructured(m) => {
            if m.nrows() != t || m.ncols() != t {
                return Err(Error::DimensionMismatch(format!(
                    "unstructured correlation is {} × {}, expected {t} × {t}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            m.clone()
        }
    })
}

fn asymmetry(r: &DMatrix<f64>) -> f64 {
    (r - r.transpose()).amax()
}

/// Result of [`invert_correlation`].
#[derive(Debug, Clone)]
pub struct InvertedCorrelation {
    pub inverse: DMatrix<f64>,
    /// The matrix actually inverted (differs from the input only when repaired).
    pub matrix: DMatrix<f64>,
    pub repaired: bool,
}

/// Inverts a correlation matrix, repairing it to positive definite first if
/// its smallest eigenvalue is below [`EIGEN_FLOOR`].
pub fn invert_correlation(r: &DMatrix<f64>) -> Result<InvertedCorrelation> {
    if !r.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "correlation matrix is {} × {}",
            r.nrows(),
            r.ncols()
        )));
    }
    let asym = asymmetry(r);
    if asym > 1e-10 * r.amax().max(1.0) {
        return Err(Error::NotSymmetric(asym));
    }
    let (matrix, repaired) = repair_positive_definite(r);
    let inverse = matrix
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Factorization("correlation matrix after repair".into()))?
        .inverse();
    Ok(InvertedCorrelation {
        inverse,
        matrix,
        repaired,
    })
}

/// Floors eigenvalues at [`EIGEN_FLOOR`] and rescales back to a unit
/// diagonal. Returns the input unchanged (and `false`) when no eigenvalue
/// is below the floor.
pub fn repair_positive_definite(r: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let eig = SymmetricEigen::new(r.clone());
    if eig.eigenvalues.min() >= EIGEN_FLOOR {
        return (r.clone(), false);
    }
    let floored = eig.eigenvalues.map(|v| v.max(EIGEN_FLOOR));
    let q = &eig.eigenvectors;
    let m = q * DMatrix::from_diagonal(&floored) * q.transpose();
    let t = m.nrows();
    let d: Vec<f64> = (0..t).map(|j| m[(j, j)].sqrt()).collect();
    let mut out = DMatrix::from_fn(t, t, |j, k| m[(j, k)] / (d[j] * d[k]));
    for j in 0..t {
        out[(j, j)] = 1.0;
        for k in 0..j {
            let v = 0.5 * (out[(j, k)] + out[(k, j)]);
            out[(j, k)] = v;
            out[(k, j)] = v;
        }
    }
    (out, true)
}

/// `σ_j² = n⁻¹ Σ_i r_ij²`, floored at [`VARIANCE_FLOOR`].
pub fn estimate_variances(residuals: &DMatrix<f64>) -> VarianceProfile {
    let n = residuals.nrows() as f64;
    VarianceProfile(
        residuals
            .column_iter()
            .map(|c| (c.iter().map(|r| r * r).sum::<f64>() / n).max(VARIANCE_FLOOR))
            .collect(),
    )
}

/// Per-column sample variances (`ddof = 1`), floored at [`VARIANCE_FLOOR`].
pub fn sample_variances(y: &DMatrix<f64>) -> VarianceProfile {
    let n = y.nrows() as f64;
    VarianceProfile(
        y.column_iter()
            .map(|c| {
                let mean = c.sum() / n;
                let ss: f64 = c.iter().map(|v| (v - mean).powi(2)).sum();
                (ss / (n - 1.0)).max(VARIANCE_FLOOR)
            })
            .collect(),
    )
}

/// Divides column `j` of `residuals` by `σ_j`.
pub fn standardize_residuals(residuals: &DMatrix<f64>, variances: &VarianceProfile) -> DMatrix<f64> {
    let sd: Vec<f64> = variances.as_slice().iter().map(|v| v.sqrt()).collect();
    DMatrix::from_fn(residuals.nrows(), residuals.ncols(), |i, j| {
        residuals[(i, j)] / sd[j]
    })
}

/// Admissible range of the exchangeable parameter for `t` time points.
pub fn exchangeable_bounds(t: usize, eps: f64) -> (f64, f64) {
    (-1.0 / (t as f64 - 1.0) + eps, 1.0 - eps)
}

/// Outcome of [`estimate_alpha`].
#[derive(Debug, Clone)]
pub struct AlphaEstimate {
    pub correlation: WorkingCorrelation,
    pub repaired: bool,
}

/// Residual moment estimate of the correlation parameters of `kind`.
///
/// `std_residuals` holds raw residuals divided column-wise by `σ_j`.
pub fn estimate_alpha(
    std_residuals: &DMatrix<f64>,
    kind: CorrelationStructure,
    eps: f64,
) -> AlphaEstimate {
    let n = std_residuals.nrows();
    let t = std_residuals.ncols();
    let e = std_residuals;
    let plain = |correlation| AlphaEstimate {
        correlation,
        repaired: false,
    };
    match kind {
        CorrelationStructure::Independent => plain(WorkingCorrelation::Independent),
        CorrelationStructure::Exchangeable => {
            let mut sum = 0.0;
            for i in 0..n {
                for j in 0..t {
                    for k in j + 1..t {
                        sum += e[(i, j)] * e[(i, k)];
                    }
                }
            }
            let pairs = (n * t * (t - 1) / 2) as f64;
            let (lo, hi) = exchangeable_bounds(t, eps);
            plain(WorkingCorrelation::Exchangeable((sum / pairs).clamp(lo, hi)))
        }
        CorrelationStructure::Ar1 => {
            let mut sum = 0.0;
            for i in 0..n {
                for j in 0..t - 1 {
                    sum += e[(i, j)] * e[(i, j + 1)];
                }
            }
            let alpha = sum / (n * (t - 1)) as f64;
            plain(WorkingCorrelation::Ar1(alpha.clamp(-1.0 + eps, 1.0 - eps)))
        }
        CorrelationStructure::Unstructured => {
            let mut r = DMatrix::identity(t, t);
            for j in 0..t {
                for k in j + 1..t {
                    let mut s = 0.0;
                    for i in 0..n {
                        s += e[(i, j)] * e[(i, k)];
                    }
                    let v = s / n as f64;
                    r[(j, k)] = v;
                    r[(k, j)] = v;
                }
            }
            let (m, repaired) = repair_positive_definite(&r);
            AlphaEstimate {
                correlation: WorkingCorrelation::Unstructured(m),
                repaired,
            }
        }
    }
}

pub fn is_positive_definite(r: &DMatrix<f64>) -> bool {
    r.clone().cholesky().is_some()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
        (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
    }

    #[test]
    fn independent_is_identity() {
        let r = build_correlation(&WorkingCorrelation::Independent, 3).unwrap();
        assert_eq!(r, DMatrix::identity(3, 3));
    }

    #[test]
    fn ar1_powers() {
        let r = build_correlation(&WorkingCorrelation::Ar1(0.5), 3).unwrap();
        assert_eq!(
            rows(&r),
            vec![vec![1.0, 0.5, 0.25], vec![0.5, 1.0, 0.5], vec![0.25, 0.5, 1.0]]
        );
    }

    #[test]
    fn exchangeable_two_by_two() {
        let r = build_correlation(&WorkingCorrelation::Exchangeable(0.3), 2).unwrap();
        assert_eq!(rows(&r), vec![vec![1.0, 0.3], vec![0.3, 1.0]]);
    }

    #[test]
    fn unstructured_dimension_checked() {
        let wc = WorkingCorrelation::Unstructured(DMatrix::identity(3, 3));
        assert!(matches!(build_correlation(&wc, 4), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn inverse_of_identity() {
        let inv = invert_correlation(&DMatrix::identity(4, 4)).unwrap();
        assert!(!inv.repaired);
        assert!((inv.inverse - DMatrix::<f64>::identity(4, 4)).amax() < 1e-15);
    }

    #[test]
    fn inverse_two_by_two_closed_form() {
        let r = build_correlation(&WorkingCorrelation::Exchangeable(0.5), 2).unwrap();
        let inv = invert_correlation(&r).unwrap().inverse;
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, -0.5, -0.5, 1.0]) / 0.75;
        assert!((inv - expected).amax() < 1e-14);
    }

    #[test]
    fn ar1_inverse_matches_dense_lu() {
        let r = build_correlation(&WorkingCorrelation::Ar1(0.5), 4).unwrap();
        let inv = invert_correlation(&r).unwrap().inverse;
        let oracle = r.clone().lu().try_inverse().unwrap();
        assert!((&inv - &oracle).amax() < 1e-12);
        // the AR1 inverse is tridiagonal
        assert!(inv[(0, 2)].abs() < 1e-12 && inv[(0, 3)].abs() < 1e-12 && inv[(1, 3)].abs() < 1e-12);
    }

    #[test]
    fn asymmetric_input_rejected() {
        let r = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.3, 1.0]);
        assert!(matches!(invert_correlation(&r), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn singular_matrix_repaired() {
        let r = DMatrix::from_element(3, 3, 1.0);
        let inv = invert_correlation(&r).unwrap();
        assert!(inv.repaired);
        for j in 0..3 {
            assert!((inv.matrix[(j, j)] - 1.0).abs() < 1e-15);
        }
        assert!(is_positive_definite(&inv.matrix));
        let prod = &inv.matrix * &inv.inverse;
        assert!((prod - DMatrix::<f64>::identity(3, 3)).amax() < 1e-6);
    }

    #[test]
    fn variances_mean_of_squares() {
        let r = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        assert_eq!(estimate_variances(&r).as_slice(), &[1.0]);
        let z = DMatrix::zeros(3, 2);
        assert_eq!(estimate_variances(&z).as_slice(), &[1e-12, 1e-12]);
    }

    #[test]
    fn variances_match_column_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let r = DMatrix::from_fn(10, 3, |_, _| rng.random_range(-2.0..2.0));
        let v = estimate_variances(&r);
        for j in 0..3 {
            let mut s = 0.0;
            for i in 0..10 {
                s += r[(i, j)] * r[(i, j)];
            }
            assert!((v.as_slice()[j] - s / 10.0).abs() < 1e-15);
        }
    }

    #[test]
    fn perfect_agreement_clamps_exchangeable() {
        // each subject has the same value at every time, columns have unit mean square
        let vals = [1.0, -1.0, 1.0, -1.0];
        let e = DMatrix::from_fn(4, 3, |i, _| vals[i]);
        let est = estimate_alpha(&e, CorrelationStructure::Exchangeable, 0.01);
        assert_eq!(est.correlation, WorkingCorrelation::Exchangeable(0.99));
        let est = estimate_alpha(&e, CorrelationStructure::Ar1, 0.01);
        assert_eq!(est.correlation, WorkingCorrelation::Ar1(0.99));
    }

    #[test]
    fn zero_cross_products_give_zero_alpha() {
        // each subject is non-zero at a single time point
        let e = DMatrix::from_fn(3, 3, |i, j| if i == j { 1.5 } else { 0.0 });
        for kind in [CorrelationStructure::Exchangeable, CorrelationStructure::Ar1] {
            assert_eq!(estimate_alpha(&e, kind, 0.01).correlation.alpha_scalar(), Some(0.0));
        }
    }

    #[test]
    fn negative_exchangeable_clamped_to_lower_bound() {
        let e = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        let est = estimate_alpha(&e, CorrelationStructure::Exchangeable, 0.01);
        assert_eq!(est.correlation, WorkingCorrelation::Exchangeable(-1.0 + 0.01));
    }

    #[test]
    fn unstructured_repaired_when_rank_deficient() {
        // n = 2 < t = 4 forces a singular moment estimate
        let e = DMatrix::from_row_slice(2, 4, &[1.0, 0.5, -1.0, 1.2, -1.0, 1.3, 1.0, 0.7]);
        let est = estimate_alpha(&e, CorrelationStructure::Unstructured, 0.01);
        assert!(est.repaired);
        match est.correlation {
            WorkingCorrelation::Unstructured(m) => assert!(is_positive_definite(&m)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn structure_names_round_trip() {
        for s in CorrelationStructure::ALL {
            assert_eq!(s.name().parse::<CorrelationStructure>().unwrap(), s);
        }
        assert!("toeplitz".parse::<CorrelationStructure>().is_err());
    }
}
