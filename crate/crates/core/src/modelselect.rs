//! Prediction error, subject-level k-fold cross-validation over the
//! iteration budget `K`, selected-feature sets, and the four-structure
//! comparison.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::correlation::CorrelationStructure;
use crate::datamodel::{CoefficientMatrix, FitConfig, LongitudinalDataset, Standardization};
use crate::error::{Error, Result};
use crate::geetgdr::{fitted_values, gee_tgdr_fit, gee_tgdr_fit_observed, FitResult, PathPoint};

/// Two `mean_mse` values closer than this count as tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Feature indices (0-based) with a non-zero coefficient, per time point and
/// pooled.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Selection {
    pub per_time: Vec<BTreeSet<usize>>,
    pub union: BTreeSet<usize>,
    pub intersection: BTreeSet<usize>,
}

/// Per-time set `{p : |β_jp| > tol}`, with union and intersection over time.
pub fn select_features(beta: &CoefficientMatrix, tol: f64) -> Selection {
    let per_time: Vec<BTreeSet<usize>> = (0..beta.n_times())
        .map(|j| {
            (0..beta.n_features())
                .filter(|&p| beta.feature(j, p).abs() > tol)
                .collect()
        })
        .collect();
    let union = per_time.iter().flatten().copied().collect();
    let intersection = match per_time.split_first() {
        Some((first, rest)) => first
            .iter()
            .copied()
            .filter(|p| rest.iter().all(|s| s.contains(p)))
            .collect(),
        None => BTreeSet::new(),
    };
    Selection {
        per_time,
        union,
        intersection,
    }
}

/// Per-observation mean squared error, `(n t)⁻¹ Σ_ij (Y_ij − μ_ij)²`.
pub fn mse(ds: &LongitudinalDataset, beta: &CoefficientMatrix) -> Result<f64> {
    Ok(mse_of(ds.outcomes(), &fitted_values(ds, beta)?))
}

fn mse_of(y: &DMatrix<f64>, mu: &DMatrix<f64>) -> f64 {
    (y - mu).norm_squared() / y.len() as f64
}

/// Assigns each of `n` subjects to one of `folds` folds. Sizes differ by at
/// most one; the assignment depends only on `(n, folds, seed)`.
pub fn kfold_split(n: usize, folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 || folds > n {
        return Err(Error::InvalidConfig(format!(
            "number of folds must lie in [2, n = {n}], got {folds}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = vec![0; n];
    for (pos, subject) in order.into_iter().enumerate() {
        assignment[subject] = pos % folds;
    }
    Ok(assignment)
}

/// `0..=k_max` in steps of `max(1, k_max / 100)`, always ending at `k_max`.
pub fn default_k_grid(k_max: usize) -> Vec<usize> {
    let step = (k_max / 100).max(1);
    let mut grid: Vec<usize> = (0..=k_max).step_by(step).collect();
    if grid.last() != Some(&k_max) {
        grid.push(k_max);
    }
    grid
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub k_grid: Vec<usize>,
    pub mean_mse: Vec<f64>,
    /// Sample standard deviation (`ddof = 1`) across folds.
    pub sd_mse: Vec<f64>,
    pub best_k: usize,
    pub fold_assignments: Vec<usize>,
    /// `fold_mse[k][f]`: held-out MSE of fold `f` at `k_grid[k]`.
    pub fold_mse: Vec<Vec<f64>>,
}

impl CvResult {
    pub fn best_index(&self) -> usize {
        self.k_grid
            .iter()
            .position(|k| *k == self.best_k)
            .expect("best_k is drawn from k_grid")
    }
}

pub fn cross_validate(
    ds: &LongitudinalDataset,
    config: &FitConfig,
    folds: usize,
    k_grid: &[usize],
    seed: u64,
) -> Result<CvResult> {
    cross_validate_observed(ds, config, folds, k_grid, seed, &|_, _, _| {})
}

/// [`cross_validate`] with a hook that sees, for every fold, the training
/// dataset and each point on that fold's path.
pub fn cross_validate_observed<F>(
    ds: &LongitudinalDataset,
    config: &FitConfig,
    folds: usize,
    k_grid: &[usize],
    seed: u64,
    observe: &F,
) -> Result<CvResult>
where
    F: Fn(usize, &LongitudinalDataset, &PathPoint<'_>) + Sync,
{
    config.validate()?;
    if k_grid.is_empty() || k_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig(
            "k grid must be non-empty and strictly increasing".into(),
        ));
    }
    let assignment = kfold_split(ds.n_subjects(), folds, seed)?;
    let k_top = *k_grid.last().expect("non-empty");

    let per_fold: Vec<Vec<f64>> = (0..folds)
        .into_par_iter()
        .map(|f| {
            fold_path_mse(ds, config, &assignment, f, k_grid, k_top, observe)
                .map_err(|e| Error::Fold {
                    fold: f,
                    source: Box::new(e),
                })
        })
        .collect::<Result<_>>()?;

    let m = folds as f64;
    let fold_mse: Vec<Vec<f64>> = (0..k_grid.len())
        .map(|k| per_fold.iter().map(|f| f[k]).collect())
        .collect();
    let mean_mse: Vec<f64> = fold_mse.iter().map(|v| v.iter().sum::<f64>() / m).collect();
    let sd_mse = fold_mse
        .iter()
        .zip(&mean_mse)
        .map(|(v, mean)| (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt())
        .collect();

    let mut best = 0;
    for k in 1..k_grid.len() {
        if mean_mse[k] < mean_mse[best] - TIE_TOLERANCE {
            best = k;
        }
    }

    Ok(CvResult {
        k_grid: k_grid.to_vec(),
        best_k: k_grid[best],
        mean_mse,
        sd_mse,
        fold_assignments: assignment,
        fold_mse,
    })
}

fn fold_path_mse<F>(
    ds: &LongitudinalDataset,
    config: &FitConfig,
    assignment: &[usize],
    fold: usize,
    k_grid: &[usize],
    k_top: usize,
    observe: &F,
) -> Result<Vec<f64>>
where
    F: Fn(usize, &LongitudinalDataset, &PathPoint<'_>) + Sync,
{
    let (test_rows, train_rows): (Vec<usize>, Vec<usize>) =
        (0..assignment.len()).partition(|&i| assignment[i] == fold);
    let mut train = ds.subset(&train_rows);
    let mut test = ds.subset(&test_rows);
    if config.standardize {
        let s = Standardization::fit(&train)?;
        train = s.apply(&train)?;
        test = s.apply(&test)?;
    }
    let cfg = FitConfig {
        k_max: k_top,
        standardize: false,
        ..config.clone()
    };

    let mut out = Vec::with_capacity(k_grid.len());
    let mut next = 0;
    let mut failure = None;
    gee_tgdr_fit_observed(&train, &cfg, |pt| {
        observe(fold, &train, pt);
        if next < k_grid.len() && pt.k == k_grid[next] {
            match mse(&test, pt.beta) {
                Ok(v) => out.push(v),
                Err(e) => failure = Some(e),
            }
            next += 1;
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(out)
}

/// Cross-validation summary and whole-data fit for one structure.
#[derive(Debug, Clone)]
pub struct StructureSummary {
    pub cv: CvResult,
    /// MSE of the whole-data fit at `best_k` on the data it was fit to.
    pub alldata_mse: f64,
    pub fit: FitResult,
    /// Selected feature names per time point, in feature order.
    pub per_time_features: Vec<Vec<String>>,
    pub union_features: Vec<String>,
}

#[derive(Debug)]
pub struct StructureRow {
    pub structure: CorrelationStructure,
    pub outcome: std::result::Result<StructureSummary, String>,
}

/// One row per working correlation structure, in
/// [`CorrelationStructure::ALL`] order.
#[derive(Debug)]
pub struct StructureComparison {
    pub rows: Vec<StructureRow>,
}

pub fn compare_structures(
    ds: &LongitudinalDataset,
    base_config: &FitConfig,
    folds: usize,
    k_grid: &[usize],
    seed: u64,
) -> StructureComparison {
    let rows = CorrelationStructure::ALL
        .par_iter()
        .map(|&structure| StructureRow {
            structure,
            outcome: summarize_structure(ds, base_config, structure, folds, k_grid, seed)
                .map_err(|e| e.to_string()),
        })
        .collect();
    StructureComparison { rows }
}

fn summarize_structure(
    ds: &LongitudinalDataset,
    base_config: &FitConfig,
    structure: CorrelationStructure,
    folds: usize,
    k_grid: &[usize],
    seed: u64,
) -> Result<StructureSummary> {
    let config = FitConfig {
        structure,
        ..base_config.clone()
    };
    let cv = cross_validate(ds, &config, folds, k_grid, seed)?;
    let fit = gee_tgdr_fit(
        ds,
        &FitConfig {
            k_max: cv.best_k,
            ..config
        },
    )?;
    let alldata_mse = mse_of(ds.outcomes(), &fit.predict(ds)?);
    let names = |set: &BTreeSet<usize>| -> Vec<String> {
        set.iter().map(|&p| ds.feature_names()[p].clone()).collect()
    };
    Ok(StructureSummary {
        per_time_features: fit.selection.per_time.iter().map(names).collect(),
        union_features: names(&fit.selection.union),
        alldata_mse,
        cv,
        fit,
    })
}
