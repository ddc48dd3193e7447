//! Report writers and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

use geetgdr::correlation::WorkingCorrelation;
use geetgdr::{CvResult, FitResult, LongitudinalDataset};

use crate::input::sha256_file;

pub const INTERCEPT: &str = "(intercept)";

/// Output directory collecting files to write. Nothing touches the disk
/// until [`Outputs::commit`], so a failed run leaves no partial report.
pub struct Outputs {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Self {
        Outputs {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    pub fn csv(&mut self, name: &str, header: &[String], rows: &[Vec<String>]) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for row in rows {
            w.write_record(row)?;
        }
        let bytes = w.into_inner().context("flushing CSV buffer")?;
        self.files.push((name.to_string(), bytes));
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.files.push((name.to_string(), bytes));
        Ok(())
    }

    pub fn names(&self) -> Vec<String> {
        self.files.iter().map(|(n, _)| n.clone()).collect()
    }

    pub fn commit(self) -> Result<()> {
        fs::create_dir_all(&self.dir)
            .with_context(|| format!("{}: cannot create output directory", self.dir.display()))?;
        for (name, bytes) in &self.files {
            let path = self.dir.join(name);
            fs::write(&path, bytes).with_context(|| format!("{}: write failed", path.display()))?;
        }
        Ok(())
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn num(v: f64) -> String {
    format!("{v}")
}

pub struct Manifest {
    subcommand: &'static str,
    config: Value,
    inputs: Vec<Value>,
    seed: Option<u64>,
}

impl Manifest {
    pub fn new(subcommand: &'static str, config: Value, seed: Option<u64>) -> Self {
        Manifest {
            subcommand,
            config,
            inputs: Vec::new(),
            seed,
        }
    }

    pub fn input(&mut self, role: &str, path: &Path) -> Result<()> {
        self.inputs.push(json!({
            "role": role,
            "path": path.display().to_string(),
            "sha256": sha256_file(path)?,
        }));
        Ok(())
    }

    /// Adds `manifest.json` listing every other file in `out`.
    pub fn finish(self, out: &mut Outputs) -> Result<()> {
        let doc = json!({
            "tool": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "subcommand": self.subcommand,
            "config": self.config,
            "seed": self.seed,
            "inputs": self.inputs,
            "outputs": out.names(),
            "created_at": chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        });
        out.json("manifest.json", &doc)
    }
}

fn correlation_json(wc: &WorkingCorrelation, t: usize) -> Value {
    let structure = wc.kind().name();
    match wc {
        WorkingCorrelation::Independent => json!({ "structure": structure }),
        WorkingCorrelation::Exchangeable(a) | WorkingCorrelation::Ar1(a) => {
            json!({ "structure": structure, "alpha": a })
        }
        WorkingCorrelation::Unstructured(_) => {
            let m = wc.matrix(t).expect("unstructured matrix has the fit's size");
            let rows: Vec<Vec<f64>> = (0..t).map(|j| m.row(j).iter().copied().collect()).collect();
            json!({ "structure": structure, "matrix": rows })
        }
    }
}

/// Per-observation MSE of `fit` on `ds`, in the outcome's units.
pub fn alldata_mse(ds: &LongitudinalDataset, fit: &FitResult) -> Result<f64> {
    let pred = fit.predict(ds)?;
    let diff = ds.outcomes() - pred;
    Ok(diff.norm_squared() / (ds.n_subjects() * ds.n_times()) as f64)
}

pub fn names(ds: &LongitudinalDataset, set: &std::collections::BTreeSet<usize>) -> Vec<String> {
    set.iter().map(|&p| ds.feature_names()[p].clone()).collect()
}

/// coefficients.csv, selection.csv and fit_report.json.
pub fn fit_outputs(
    out: &mut Outputs,
    ds: &LongitudinalDataset,
    fit: &FitResult,
    cv: Option<&CvResult>,
) -> Result<()> {
    let t = ds.n_times();
    let beta = fit.original_scale_beta();
    let mut rows = Vec::new();
    for (j, label) in ds.time_labels().iter().enumerate() {
        rows.push(vec![label.clone(), INTERCEPT.into(), num(beta.intercept(j))]);
        for (q, name) in ds.feature_names().iter().enumerate() {
            rows.push(vec![label.clone(), name.clone(), num(beta.feature(j, q))]);
        }
    }
    out.csv(
        "coefficients.csv",
        &["time_label".into(), "feature".into(), "beta".into()],
        &rows,
    )?;

    let sel = &fit.selection;
    let mut header = vec!["feature".to_string()];
    header.extend(ds.time_labels().iter().cloned());
    header.push("union".into());
    let flag = |b: bool| if b { "1".to_string() } else { "0".to_string() };
    let rows: Vec<Vec<String>> = ds
        .feature_names()
        .iter()
        .enumerate()
        .map(|(q, name)| {
            let mut row = vec![name.clone()];
            row.extend(sel.per_time.iter().map(|s| flag(s.contains(&q))));
            row.push(flag(sel.union.contains(&q)));
            row
        })
        .collect();
    out.csv("selection.csv", &header, &rows)?;

    let per_time: serde_json::Map<String, Value> = ds
        .time_labels()
        .iter()
        .zip(&sel.per_time)
        .map(|(label, s)| (label.clone(), json!(names(ds, s))))
        .collect();
    let mut report = json!({
        "structure": fit.correlation.kind().name(),
        "k_used": fit.k_used,
        "n_subjects": ds.n_subjects(),
        "n_features": ds.n_features(),
        "n_times": t,
        "standardized": fit.standardization.is_some(),
        "coefficient_scale": "input covariate units",
        "correlation": correlation_json(&fit.correlation, t),
        "variances": fit.variances.as_slice(),
        "mse": alldata_mse(ds, fit)?,
        "mse_convention": "sum of squared residuals divided by n * t",
        "quasi_likelihood_trace": fit.ql_trace,
        "correlation_repairs": fit.repairs,
        "log": fit.log,
        "selected": {
            "per_time": per_time,
            "union": names(ds, &sel.union),
            "intersection": names(ds, &sel.intersection),
        },
    });
    if let Some(cv) = cv {
        report["cross_validation"] = json!({
            "best_k": cv.best_k,
            "folds": cv.fold_mse.first().map_or(0, Vec::len),
            "best_mean_mse": cv.mean_mse[cv.best_index()],
            "best_sd_mse": cv.sd_mse[cv.best_index()],
            "tie_rule": "smallest K within 1e-12 of the minimum mean MSE",
        });
    }
    out.json("fit_report.json", &report)
}

/// cv.csv (one row per grid point) and folds.csv (fold of every subject).
pub fn cv_outputs(out: &mut Outputs, ds: &LongitudinalDataset, cv: &CvResult) -> Result<()> {
    let folds = cv.fold_mse.first().map_or(0, Vec::len);
    let mut header: Vec<String> = vec!["K".into(), "mean_mse".into(), "sd_mse".into()];
    header.extend((1..=folds).map(|f| format!("fold_{f}")));
    let rows: Vec<Vec<String>> = cv
        .k_grid
        .iter()
        .enumerate()
        .map(|(i, k)| {
            let mut row = vec![k.to_string(), num(cv.mean_mse[i]), num(cv.sd_mse[i])];
            row.extend(cv.fold_mse[i].iter().map(|v| num(*v)));
            row
        })
        .collect();
    out.csv("cv.csv", &header, &rows)?;
    let rows: Vec<Vec<String>> = ds
        .subject_ids()
        .iter()
        .zip(&cv.fold_assignments)
        .map(|(id, f)| vec![id.clone(), (f + 1).to_string()])
        .collect();
    out.csv("folds.csv", &["subject_id".into(), "fold".into()], &rows)
}
