//! Spearman correlation between a feature panel and a target expression
//! matrix, with Benjamini-Hochberg adjustment over every tested pair.

use std::cmp::Ordering;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Average (mid) ranks, 1-based. Ties share the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && x[idx[end]] == x[idx[start]] {
            end += 1;
        }
        // positions start+1 ..= end share their mean
        let r = (start + 1 + end) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = r;
        }
        start = end;
    }
    ranks
}

/// Centered ranks and their norm, or `None` for a constant vector.
fn centered_ranks(x: &[f64]) -> Option<(Vec<f64>, f64)> {
    let r = average_ranks(x);
    let mean = (r.len() as f64 + 1.0) / 2.0;
    let c: Vec<f64> = r.iter().map(|v| v - mean).collect();
    let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
    (norm > 0.0).then_some((c, norm))
}

fn rank_correlation(a: &(Vec<f64>, f64), b: &(Vec<f64>, f64)) -> f64 {
    let dot: f64 = a.0.iter().zip(&b.0).map(|(u, v)| u * v).sum();
    (dot / (a.1 * b.1)).clamp(-1.0, 1.0)
}

/// Two-sided p-value of `rho` from the t approximation with `n − 2`
/// degrees of freedom.
pub fn spearman_p_value(rho: f64, n: usize) -> f64 {
    if rho.abs() >= 1.0 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    let t = rho * (df / (1.0 - rho * rho)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    (2.0 * dist.sf(t.abs())).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spearman {
    pub rho: f64,
    pub p_value: f64,
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<Spearman> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "vectors have {} and {} entries",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(Error::Undefined(format!(
            "Spearman correlation needs at least 3 observations, got {}",
            x.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Undefined("non-finite input to Spearman correlation".into()));
    }
    let (a, b) = match (centered_ranks(x), centered_ranks(y)) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::Undefined(
                "Spearman correlation is undefined for a constant vector".into(),
            ))
        }
    };
    let rho = rank_correlation(&a, &b);
    Ok(Spearman {
        rho,
        p_value: spearman_p_value(rho, x.len()),
    })
}

/// Benjamini-Hochberg step-up adjusted p-values, in input order.
pub fn bh_adjust(p_values: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidPValue(*bad));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for rank in (0..m).rev() {
        let i = order[rank];
        running = running.min(p_values[i] * (m as f64 / (rank + 1) as f64));
        adjusted[i] = running;
    }
    Ok(adjusted)
}

/// Matrix with named rows (subjects) and columns (features).
#[derive(Debug, Clone, PartialEq)]
pub struct NamedMatrix {
    pub row_ids: Vec<String>,
    pub column_names: Vec<String>,
    pub values: DMatrix<f64>,
}

impl NamedMatrix {
    pub fn new(row_ids: Vec<String>, column_names: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        if values.shape() != (row_ids.len(), column_names.len()) {
            return Err(Error::DimensionMismatch(format!(
                "matrix is {:?} but has {} row ids and {} column names",
                values.shape(),
                row_ids.len(),
                column_names.len()
            )));
        }
        Ok(NamedMatrix {
            row_ids,
            column_names,
            values,
        })
    }

    /// Keeps the named columns, in the given order.
    pub fn select_columns(&self, names: &[String]) -> Result<NamedMatrix> {
        let idx = names
            .iter()
            .map(|name| {
                self.column_names
                    .iter()
                    .position(|c| c == name)
                    .ok_or_else(|| Error::Undefined(format!("no column named '{name}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(NamedMatrix {
            row_ids: self.row_ids.clone(),
            column_names: names.to_vec(),
            values: self.values.select_columns(&idx),
        })
    }

    fn column(&self, c: usize) -> Vec<f64> {
        self.values.column(c).iter().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Edge {
    pub source: String,
    pub target: String,
    pub rho: f64,
    pub p_value: f64,
    pub adjusted_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeList {
    pub edges: Vec<Edge>,
    pub rho_min: f64,
    pub fdr_q: f64,
    /// Size of the multiple-testing family (all defined panel × target pairs).
    pub tests: usize,
    /// Pairs skipped because one side is constant.
    pub undefined_pairs: usize,
}

/// Tests every panel × target pair and keeps those with `|rho| > rho_min`
/// and BH-adjusted `p < fdr_q`, ordered by source then target name.
pub fn correlate_panel(
    panel: &NamedMatrix,
    targets: &NamedMatrix,
    rho_min: f64,
    fdr_q: f64,
) -> Result<EdgeList> {
    if panel.row_ids != targets.row_ids {
        return Err(Error::DimensionMismatch(
            "panel and target matrices are not row-aligned on the same subjects".into(),
        ));
    }
    let n = panel.row_ids.len();
    if n < 3 {
        return Err(Error::Undefined(format!(
            "Spearman correlation needs at least 3 subjects, got {n}"
        )));
    }
    if panel.values.iter().chain(targets.values.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Undefined("non-finite expression value".into()));
    }

    let rank_all = |m: &NamedMatrix| -> Vec<Option<(Vec<f64>, f64)>> {
        (0..m.column_names.len())
            .into_par_iter()
            .map(|c| centered_ranks(&m.column(c)))
            .collect()
    };
    let panel_ranks = rank_all(panel);
    let target_ranks = rank_all(targets);

    let tested: Vec<(usize, usize, f64)> = panel_ranks
        .par_iter()
        .enumerate()
        .flat_map_iter(|(s, a)| {
            target_ranks.iter().enumerate().filter_map(move |(t, b)| match (a, b) {
                (Some(a), Some(b)) => Some((s, t, rank_correlation(a, b))),
                _ => None,
            })
        })
        .collect();
    let total = panel_ranks.len() * target_ranks.len();

    let p: Vec<f64> = tested.iter().map(|&(_, _, rho)| spearman_p_value(rho, n)).collect();
    let adjusted = bh_adjust(&p)?;

    let mut edges: Vec<Edge> = tested
        .iter()
        .zip(p.iter().zip(&adjusted))
        .filter(|((_, _, rho), (_, adj))| rho.abs() > rho_min && **adj < fdr_q)
        .map(|(&(s, t, rho), (&p_value, &adjusted_p))| Edge {
            source: panel.column_names[s].clone(),
            target: targets.column_names[t].clone(),
            rho,
            p_value,
            adjusted_p,
        })
        .collect();
    edges.sort_by(|a, b| a.source.cmp(&b.source).then_with(|| a.target.cmp(&b.target)));

    Ok(EdgeList {
        edges,
        rho_min,
        fdr_q,
        tests: tested.len(),
        undefined_pairs: total - tested.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ranks_with_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        assert_eq!(average_ranks(&[5.0, 5.0, 5.0]), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn monotone_relations() {
        let x: Vec<f64> = (0..8).map(|i| i as f64 - 3.5).collect();
        let cube: Vec<f64> = x.iter().map(|v| v.powi(3)).collect();
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let s = spearman(&x, &cube).unwrap();
        assert_eq!(s.rho, 1.0);
        assert_eq!(s.p_value, 0.0);
        assert_eq!(spearman(&x, &neg).unwrap().rho, -1.0);
    }

    #[test]
    fn constant_input_is_undefined() {
        assert!(matches!(
            spearman(&[1.0, 2.0, 3.0], &[4.0, 4.0, 4.0]),
            Err(Error::Undefined(_))
        ));
        assert!(spearman(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn p_value_reference() {
        // rho = 0.5, n = 12: t = 0.5 * sqrt(10 / 0.75) = 1.825742, two-sided p = 0.0978546 (scipy.stats.t.sf)
        let p = spearman_p_value(0.5, 12);
        assert!((p - 0.0978546).abs() < 1e-6, "{p}");
        assert_eq!(spearman_p_value(0.0, 10), 1.0);
    }

    #[test]
    fn bh_examples() {
        let adj = bh_adjust(&[0.01, 0.02, 0.03, 0.9]).unwrap();
        let expected = [0.04, 0.04, 0.04, 0.9];
        for (a, e) in adj.iter().zip(expected) {
            assert!((a - e).abs() < 1e-15);
        }
        assert_eq!(bh_adjust(&[0.2, 0.2, 0.2]).unwrap(), vec![0.2, 0.2, 0.2]);
        assert_eq!(bh_adjust(&[0.37]).unwrap(), vec![0.37]);
        assert!(bh_adjust(&[]).unwrap().is_empty());
        assert!(matches!(bh_adjust(&[0.1, 1.5]), Err(Error::InvalidPValue(_))));
    }

    fn matrix(rows: usize, names: &[&str], f: impl Fn(usize, usize) -> f64) -> NamedMatrix {
        NamedMatrix::new(
            (0..rows).map(|i| format!("S{i}")).collect(),
            names.iter().map(|s| s.to_string()).collect(),
            DMatrix::from_fn(rows, names.len(), f),
        )
        .unwrap()
    }

    #[test]
    fn duplicated_column_becomes_edge() {
        let base = |i: usize, c: usize| ((i * 7 + c * 3) % 11) as f64 + 0.1 * (i as f64);
        let panel = matrix(12, &["L1", "L2"], base);
        let targets = matrix(12, &["M1", "M2", "M3"], |i, c| if c == 1 { base(i, 0) } else { ((i * 5 + c) % 4) as f64 });
        let edges = correlate_panel(&panel, &targets, 0.6, 0.05).unwrap();
        let e = edges
            .edges
            .iter()
            .find(|e| e.source == "L1" && e.target == "M2")
            .expect("duplicated column must be an edge");
        assert!((e.rho - 1.0).abs() < 1e-12);
        for e in &edges.edges {
            assert!(e.rho.abs() > 0.6 && e.adjusted_p < 0.05);
        }
    }

    #[test]
    fn misaligned_rows_rejected() {
        let a = matrix(4, &["A"], |i, _| i as f64);
        let mut b = matrix(4, &["B"], |i, _| i as f64);
        b.row_ids.swap(0, 1);
        assert!(matches!(correlate_panel(&a, &b, 0.6, 0.001), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn constant_targets_are_skipped_not_tested() {
        let a = matrix(5, &["A"], |i, _| i as f64);
        let b = matrix(5, &["B", "C"], |i, c| if c == 0 { 1.0 } else { i as f64 });
        let edges = correlate_panel(&a, &b, 0.6, 0.001).unwrap();
        assert_eq!((edges.tests, edges.undefined_pairs), (1, 1));
    }

    proptest! {
        #[test]
        fn symmetric_and_monotone_invariant(
            pairs in proptest::collection::vec((-5i32..5, -5i32..5), 4..15)
        ) {
            let x: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
            let y: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
            match (spearman(&x, &y), spearman(&y, &x)) {
                (Ok(a), Ok(b)) => {
                    prop_assert!((a.rho - b.rho).abs() < 1e-12);
                    let xt: Vec<f64> = x.iter().map(|v| v.exp() + 3.0 * v).collect();
                    let c = spearman(&xt, &y).unwrap();
                    prop_assert!((a.rho - c.rho).abs() < 1e-12);
                }
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "asymmetric definedness"),
            }
        }

        #[test]
        fn bh_is_monotone(ps in proptest::collection::vec(0.0f64..1.0, 1..40), bump in 0.0f64..0.2) {
            // raising every p-value keeps the order statistics aligned
            let raised: Vec<f64> = ps.iter().map(|p| (p + bump).min(1.0)).collect();
            let a = bh_adjust(&ps).unwrap();
            let b = bh_adjust(&raised).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!(x <= y);
            }
            for (x, p) in a.iter().zip(&ps) {
                prop_assert!(*x >= *p && *x <= 1.0);
            }
        }
    }
}
