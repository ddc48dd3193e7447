//! Threshold gradient descent regularization for a single continuous
//! outcome.
//!
//! Starting from the null model, each iteration moves only the coefficients
//! whose gradient magnitude is at least `τ` times the largest feature
//! gradient. The intercept is always moved and never competes in the
//! threshold.

use nalgebra::{DMatrix, DVector};

use crate::datamodel::FitConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct UnivariateFit {
    /// Intercept first, then one coefficient per feature.
    pub beta: DVector<f64>,
    /// `Res(β)` at the start and after every iteration (`k_used + 1` values).
    pub response_trace: Vec<f64>,
    pub k_used: usize,
}

impl UnivariateFit {
    /// 0-based indices of features with `|β_p| > tol`.
    pub fn selected(&self, tol: f64) -> Vec<usize> {
        (0..self.beta.len() - 1)
            .filter(|&p| self.beta[p + 1].abs() > tol)
            .collect()
    }
}

fn check_dims(x: &DMatrix<f64>, y: &[f64], beta: &DVector<f64>) -> Result<()> {
    if x.nrows() != y.len() || x.ncols() + 1 != beta.len() {
        return Err(Error::DimensionMismatch(format!(
            "X is {} × {}, y has {} entries, beta has {} (expected {} and {})",
            x.nrows(),
            x.ncols(),
            y.len(),
            beta.len(),
            x.nrows(),
            x.ncols() + 1
        )));
    }
    Ok(())
}

fn linear_predictor(x: &DMatrix<f64>, i: usize, beta: &DVector<f64>) -> f64 {
    let mut mu = beta[0];
    for p in 0..x.ncols() {
        let b = beta[p + 1];
        if b != 0.0 {
            mu += b * x[(i, p)];
        }
    }
    mu
}

/// `Res(β) = n⁻¹ Σ_i (y_i − β_0 − Σ_p x_ip β_p)²`.
pub fn response(x: &DMatrix<f64>, y: &[f64], beta: &DVector<f64>) -> Result<f64> {
    check_dims(x, y, beta)?;
    let n = y.len() as f64;
    let ss: f64 = (0..y.len())
        .map(|i| (y[i] - linear_predictor(x, i, beta)).powi(2))
        .sum();
    Ok(ss / n)
}

/// Negative gradient of `Res` with the factor 2 dropped:
/// `g_p = n⁻¹ Σ_i x_ip (y_i − μ_i)`, with `x_i0 ≡ 1` for the intercept.
pub fn gradient(x: &DMatrix<f64>, y: &[f64], beta: &DVector<f64>) -> Result<DVector<f64>> {
    check_dims(x, y, beta)?;
    let n = y.len();
    let p = x.ncols();
    let mut g = DVector::zeros(p + 1);
    for i in 0..n {
        let r = y[i] - linear_predictor(x, i, beta);
        g[0] += r;
        for q in 0..p {
            g[q + 1] += x[(i, q)] * r;
        }
    }
    Ok(g / n as f64)
}

/// `f_p = 1{|g_p| ≥ τ · max_l |g_l|}`. An all-zero gradient passes everything.
pub fn threshold_mask(g_features: &[f64], tau: f64) -> Vec<bool> {
    let max = g_features.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    if max == 0.0 {
        return vec![true; g_features.len()];
    }
    let cut = tau * max;
    g_features.iter().map(|g| g.abs() >= cut).collect()
}

/// Runs exactly `config.k_max` iterations from `β = 0`.
pub fn tgdr_fit(x: &DMatrix<f64>, y: &[f64], config: &FitConfig) -> Result<UnivariateFit> {
    tgdr_fit_observed(x, y, config, |_, _| {})
}

/// Like [`tgdr_fit`], calling `observe(k, β)` for the starting point
/// (`k = 0`) and after every iteration.
pub fn tgdr_fit_observed<F>(
    x: &DMatrix<f64>,
    y: &[f64],
    config: &FitConfig,
    mut observe: F,
) -> Result<UnivariateFit>
where
    F: FnMut(usize, &DVector<f64>),
{
    config.validate()?;
    let mut beta = DVector::zeros(x.ncols() + 1);
    check_dims(x, y, &beta)?;
    let mut trace = Vec::with_capacity(config.k_max + 1);
    trace.push(response(x, y, &beta)?);
    observe(0, &beta);

    for k in 1..=config.k_max {
        let g = gradient(x, y, &beta)?;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                quantity: "gradient",
                iteration: k,
            });
        }
        let mask = threshold_mask(&g.as_slice()[1..], config.tau);
        beta[0] += config.dv * g[0];
        for (p, keep) in mask.iter().enumerate() {
            if *keep {
                beta[p + 1] += config.dv * g[p + 1];
            }
        }
        let res = response(x, y, &beta)?;
        if !res.is_finite() {
            return Err(Error::Divergence {
                quantity: "response",
                iteration: k,
            });
        }
        trace.push(res);
        observe(k, &beta);
    }

    Ok(UnivariateFit {
        beta,
        response_trace: trace,
        k_used: config.k_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(seed: u64, n: usize, p: usize) -> (DMatrix<f64>, Vec<f64>, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| rng.random_range(-2.0..2.0));
        let y = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let beta = DVector::from_fn(p + 1, |_, _| rng.random_range(-1.0..1.0));
        (x, y, beta)
    }

    fn config(tau: f64, dv: f64, k_max: usize) -> FitConfig {
        FitConfig {
            tau,
            dv,
            k_max,
            ..FitConfig::default()
        }
    }

    #[test]
    fn response_arithmetic() {
        let x = DMatrix::zeros(2, 1);
        let beta = DVector::zeros(2);
        assert_eq!(response(&x, &[0.0, 0.0], &beta).unwrap(), 0.0);
        assert_eq!(response(&x, &[1.0, 3.0], &beta).unwrap(), 5.0);
    }

    #[test]
    fn response_matches_loop() {
        let (x, y, beta) = random_problem(3, 9, 4);
        let mut ss = 0.0;
        for i in 0..9 {
            let mut mu = beta[0];
            for p in 0..4 {
                mu += x[(i, p)] * beta[p + 1];
            }
            ss += (y[i] - mu) * (y[i] - mu);
        }
        assert!((response(&x, &y, &beta).unwrap() - ss / 9.0).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_reported() {
        let x = DMatrix::zeros(3, 2);
        assert!(matches!(
            response(&x, &[1.0, 2.0], &DVector::zeros(3)),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(gradient(&x, &[1.0, 2.0, 3.0], &DVector::zeros(2)).is_err());
    }

    #[test]
    fn gradient_single_observation() {
        let x = DMatrix::from_element(1, 1, 2.0);
        let g = gradient(&x, &[3.0], &DVector::zeros(2)).unwrap();
        assert_eq!(g.as_slice(), &[3.0, 6.0]);
    }

    #[test]
    fn gradient_zero_at_perfect_fit() {
        let x = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        let beta = DVector::from_vec(vec![1.0, 2.0]);
        let g = gradient(&x, &[3.0, 5.0, 7.0], &beta).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..5 {
            let (x, y, beta) = random_problem(seed, 12, 5);
            let g = gradient(&x, &y, &beta).unwrap();
            let h = 1e-5;
            for p in 0..6 {
                let mut up = beta.clone();
                let mut down = beta.clone();
                up[p] += h;
                down[p] -= h;
                let fd = -(response(&x, &y, &up).unwrap() - response(&x, &y, &down).unwrap())
                    / (2.0 * h)
                    / 2.0;
                let rel = (fd - g[p]).abs() / g[p].abs().max(1e-8);
                assert!(rel < 1e-6, "seed {seed} p {p}: fd {fd} vs {}", g[p]);
            }
        }
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(threshold_mask(&[0.5, 1.0, 0.2], 0.5), vec![true, true, false]);
        assert_eq!(threshold_mask(&[0.5, -1.0, 0.2], 0.0), vec![true; 3]);
        assert_eq!(threshold_mask(&[0.3, -0.9, 0.9], 1.0), vec![false, true, true]);
        assert_eq!(threshold_mask(&[0.0, 0.0], 1.0), vec![true, true]);
    }

    #[test]
    fn zero_budget_is_null_model() {
        let (x, y, _) = random_problem(1, 6, 3);
        let fit = tgdr_fit(&x, &y, &config(1.0, 0.01, 0)).unwrap();
        assert!(fit.beta.iter().all(|b| *b == 0.0));
        assert_eq!(fit.response_trace, vec![response(&x, &y, &fit.beta).unwrap()]);
        assert_eq!(fit.k_used, 0);
    }

    #[test]
    fn noiseless_single_feature_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 40;
        let x = DMatrix::from_fn(n, 6, |_, _| rng.random_range(-1.5..1.5));
        let y: Vec<f64> = (0..n).map(|i| 2.0 * x[(i, 0)]).collect();
        let fit = tgdr_fit(&x, &y, &config(1.0, 0.01, 2000)).unwrap();
        assert_eq!(fit.selected(0.0), vec![0]);
        assert!((fit.beta[1] - 2.0).abs() < 0.05, "{}", fit.beta[1]);
        for w in fit.response_trace.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn tau_zero_is_plain_gradient_descent() {
        let (x, y, _) = random_problem(8, 15, 6);
        let fit = tgdr_fit(&x, &y, &config(0.0, 0.05, 300)).unwrap();

        // independently coded descent on Res/2
        let n = 15;
        let mut b = vec![0.0f64; 7];
        for _ in 0..300 {
            let mut g = vec![0.0f64; 7];
            for i in 0..n {
                let mut mu = b[0];
                for p in 0..6 {
                    mu += b[p + 1] * x[(i, p)];
                }
                let r = y[i] - mu;
                g[0] += r;
                for p in 0..6 {
                    g[p + 1] += x[(i, p)] * r;
                }
            }
            for p in 0..7 {
                b[p] += 0.05 * (g[p] / n as f64);
            }
        }
        for p in 0..7 {
            assert!((fit.beta[p] - b[p]).abs() < 1e-12, "p {p}");
        }
    }

    #[test]
    fn small_step_full_descent_is_monotone() {
        let (x, y, _) = random_problem(21, 20, 10);
        let fit = tgdr_fit(&x, &y, &config(0.0, 1e-3, 500)).unwrap();
        for w in fit.response_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-15);
        }
    }

    #[test]
    fn steps_align_with_negative_gradient() {
        let (x, y, _) = random_problem(4, 20, 8);
        let cfg = config(0.7, 0.02, 150);
        let mut prev: Option<DVector<f64>> = None;
        tgdr_fit_observed(&x, &y, &cfg, |_, beta| {
            if let Some(before) = &prev {
                let g = gradient(&x, &y, before).unwrap();
                let step = beta - before;
                let dot = step.dot(&g);
                assert!(dot >= 0.0);
                if step.iter().any(|s| *s != 0.0) {
                    assert!(dot > 0.0);
                }
            }
            prev = Some(beta.clone());
        })
        .unwrap();
    }

    #[test]
    fn never_unmasked_features_are_exactly_zero() {
        let (x, y, _) = random_problem(9, 25, 12);
        let cfg = config(1.0, 0.01, 200);
        let mut touched = vec![false; 12];
        let mut prev = DVector::zeros(13);
        tgdr_fit_observed(&x, &y, &cfg, |k, beta| {
            if k > 0 {
                let g = gradient(&x, &y, &prev).unwrap();
                for (p, m) in threshold_mask(&g.as_slice()[1..], 1.0).iter().enumerate() {
                    touched[p] |= *m;
                }
            }
            prev = beta.clone();
        })
        .unwrap();
        for p in 0..12 {
            if !touched[p] {
                assert_eq!(prev[p + 1].to_bits(), 0.0f64.to_bits());
            }
        }
        assert!(touched.iter().any(|t| !t));
    }

    #[test]
    fn feature_permutation_equivariance() {
        let (x, y, _) = random_problem(13, 18, 5);
        let perm = [3usize, 0, 4, 1, 2];
        let xp = DMatrix::from_fn(18, 5, |i, p| x[(i, perm[p])]);
        let cfg = config(0.8, 0.02, 120);
        let a = tgdr_fit(&x, &y, &cfg).unwrap();
        let b = tgdr_fit(&xp, &y, &cfg).unwrap();
        assert!((a.beta[0] - b.beta[0]).abs() < 1e-12);
        for p in 0..5 {
            assert!((b.beta[p + 1] - a.beta[perm[p] + 1]).abs() < 1e-12);
        }
    }
}
