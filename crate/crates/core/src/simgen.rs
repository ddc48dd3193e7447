//! Synthetic longitudinal datasets with a known sparse coefficient matrix
//! and a known noise correlation.
//!
//! Random numbers come from ChaCha8 seeded with `seed` via
//! `seed_from_u64`. Covariates are drawn first, row by row (subject-major),
//! then one `t`-vector of standard normals per subject for the noise.
//! Normals use the ziggurat sampler of `rand_distr::StandardNormal`.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::correlation::{build_correlation, WorkingCorrelation};
use crate::datamodel::{CoefficientMatrix, LongitudinalDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSpec {
    pub n: usize,
    pub p: usize,
    pub t: usize,
    /// 0-based feature indices with non-zero true coefficients.
    pub true_support: BTreeSet<usize>,
    /// `t × (P + 1)`, zero outside the support columns.
    pub true_beta: DMatrix<f64>,
    /// Correlation of the noise across time points.
    pub correlation: WorkingCorrelation,
    /// Per-time noise standard deviation.
    pub noise_sd: Vec<f64>,
    pub seed: u64,
}

impl SimulationSpec {
    /// Zero intercepts and coefficient `±magnitude` on every support feature
    /// at every time point, signs alternating along the support.
    #[allow(clippy::too_many_arguments)]
    pub fn sparse(
        n: usize,
        p: usize,
        t: usize,
        support: &[usize],
        magnitude: f64,
        correlation: WorkingCorrelation,
        noise_sd: f64,
        seed: u64,
    ) -> Self {
        let true_support: BTreeSet<usize> = support.iter().copied().collect();
        let mut true_beta = DMatrix::zeros(t, p + 1);
        for (rank, &q) in true_support.iter().enumerate() {
            let sign = if rank % 2 == 0 { 1.0 } else { -1.0 };
            if q < p {
                for j in 0..t {
                    true_beta[(j, q + 1)] = sign * magnitude;
                }
            }
        }
        SimulationSpec {
            n,
            p,
            t,
            true_support,
            true_beta,
            correlation,
            noise_sd: vec![noise_sd; t],
            seed,
        }
    }

    /// Sets the per-time intercepts `β_j0`.
    pub fn with_intercepts(mut self, intercepts: &[f64]) -> Self {
        for (j, b) in intercepts.iter().enumerate().take(self.t) {
            self.true_beta[(j, 0)] = *b;
        }
        self
    }

    /// Flips the sign of every non-zero true coefficient independently per
    /// (time, feature) cell. Signs come from stream 1 of ChaCha8 seeded with
    /// `seed`, so they do not disturb the data stream.
    pub fn with_random_signs(mut self) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(1);
        for q in &self.true_support {
            for j in 0..self.t {
                let b = self.true_beta[(j, q + 1)].abs();
                self.true_beta[(j, q + 1)] = if rng.random::<bool>() { b } else { -b };
            }
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.n < 2 || self.t < 2 || self.p < 1 {
            problems.push(format!(
                "need n ≥ 2, t ≥ 2, P ≥ 1 (got n = {}, t = {}, P = {})",
                self.n, self.t, self.p
            ));
        }
        if let Some(q) = self.true_support.iter().find(|q| **q >= self.p) {
            problems.push(format!("support index {q} outside 0..{}", self.p));
        }
        if self.true_beta.shape() != (self.t, self.p + 1) {
            problems.push(format!(
                "true beta is {:?}, expected ({}, {})",
                self.true_beta.shape(),
                self.t,
                self.p + 1
            ));
        } else {
            for q in 0..self.p {
                if !self.true_support.contains(&q)
                    && self.true_beta.column(q + 1).iter().any(|b| *b != 0.0)
                {
                    problems.push(format!("feature {q} has a non-zero coefficient outside the support"));
                }
            }
        }
        if self.true_beta.iter().any(|b| !b.is_finite()) {
            problems.push("true beta has non-finite entries".into());
        }
        if self.noise_sd.len() != self.t || self.noise_sd.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            problems.push(format!(
                "noise_sd needs {} positive entries, got {:?}",
                self.t, self.noise_sd
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems.join("; ")))
        }
    }
}

/// What the generator knows and a fit does not.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub support: BTreeSet<usize>,
    pub beta: CoefficientMatrix,
    pub correlation: WorkingCorrelation,
    pub noise_sd: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupportMetrics {
    pub true_positives: usize,
    pub selected: usize,
    pub actual: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl SupportMetrics {
    fn from_counts(true_positives: usize, selected: usize, actual: usize) -> Self {
        let ratio = |a: usize, b: usize, empty: f64| if b == 0 { empty } else { a as f64 / b as f64 };
        SupportMetrics {
            true_positives,
            selected,
            actual,
            precision: ratio(true_positives, selected, if actual == 0 { 1.0 } else { 0.0 }),
            recall: ratio(true_positives, actual, 1.0),
            f1: ratio(2 * true_positives, selected + actual, 1.0),
        }
    }
}

impl GroundTruth {
    /// Feature-level recovery of a pooled selection (e.g. the union over time).
    pub fn support_metrics(&self, selected: &BTreeSet<usize>) -> SupportMetrics {
        let tp = selected.intersection(&self.support).count();
        SupportMetrics::from_counts(tp, selected.len(), self.support.len())
    }

    /// Recovery of the exact non-zero pattern, counted over (time, feature)
    /// cells.
    pub fn exact_support_metrics(&self, beta: &CoefficientMatrix) -> SupportMetrics {
        let (mut tp, mut sel, mut act) = (0, 0, 0);
        for j in 0..self.beta.n_times() {
            for q in 0..self.beta.n_features() {
                let truth = self.beta.feature(j, q) != 0.0;
                let fitted = beta.feature(j, q) != 0.0;
                act += truth as usize;
                sel += fitted as usize;
                tp += (truth && fitted) as usize;
            }
        }
        SupportMetrics::from_counts(tp, sel, act)
    }
}

fn labels(prefix: &str, count: usize, first: usize) -> Vec<String> {
    let width = (count + first).to_string().len();
    (first..first + count)
        .map(|i| format!("{prefix}{i:0width$}"))
        .collect()
}

/// Draws a dataset from `spec`.
pub fn generate(spec: &SimulationSpec) -> Result<(LongitudinalDataset, GroundTruth)> {
    spec.validate()?;
    let (n, p, t) = (spec.n, spec.p, spec.t);
    let r = build_correlation(&spec.correlation, t)?;
    let l = r
        .cholesky()
        .ok_or_else(|| Error::Factorization("requested noise correlation is not positive definite".into()))?
        .unpack();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        for q in 0..p {
            x[(i, q)] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    let mut y = DMatrix::zeros(n, t);
    for i in 0..n {
        let z = DVector::from_fn(t, |_, _| rng.sample::<f64, _>(StandardNormal));
        let e = &l * z;
        for j in 0..t {
            let mut mu = spec.true_beta[(j, 0)];
            for q in &spec.true_support {
                mu += spec.true_beta[(j, q + 1)] * x[(i, *q)];
            }
            y[(i, j)] = mu + spec.noise_sd[j] * e[j];
        }
    }

    let ds = LongitudinalDataset::from_matrices(
        labels("S", n, 1),
        labels("F", p, 1),
        labels("T", t, 1),
        x,
        y,
    )?;
    let truth = GroundTruth {
        support: spec.true_support.clone(),
        beta: CoefficientMatrix::from_matrix(spec.true_beta.clone())?,
        correlation: spec.correlation.clone(),
        noise_sd: spec.noise_sd.clone(),
    };
    Ok((ds, truth))
}
