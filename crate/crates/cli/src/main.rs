//! `geetgdr`: sparse feature selection for longitudinal outcomes.

mod input;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use geetgdr::assoc::{correlate_panel, NamedMatrix};
use geetgdr::correlation::{CorrelationStructure, WorkingCorrelation};
use geetgdr::modelselect::{compare_structures, default_k_grid};
use geetgdr::simgen::{generate, SimulationSpec};
use geetgdr::{cross_validate, gee_tgdr_fit, FitConfig, LongitudinalDataset};

use input::{load_dataset, read_table, ID_COLUMN};
use output::{cv_outputs, fit_outputs, names, num, Manifest, Outputs};

#[derive(Parser)]
#[command(name = "geetgdr", version, about = "Threshold gradient descent feature selection for longitudinal outcomes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one working correlation structure for a fixed number of iterations.
    Fit(FitArgs),
    /// Choose the iteration count by subject-level k-fold CV, then refit.
    Cv(CvArgs),
    /// Cross-validate and refit every working correlation structure.
    Compare(CompareArgs),
    /// Write a synthetic dataset with known sparse truth.
    Simulate(SimulateArgs),
    /// Spearman correlation edges between selected features and targets.
    Assoc(AssocArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Covariates: subject_id column, then one column per feature.
    #[arg(long)]
    expression: PathBuf,
    /// Outcomes: subject_id column, then one column per time point in order.
    #[arg(long)]
    outcomes: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PathArgs {
    /// Threshold in [0, 1] relative to the largest gradient at each time point.
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    /// Step increment.
    #[arg(long, default_value_t = 0.01)]
    dv: f64,
    /// Iteration budget.
    #[arg(long, default_value_t = 1000)]
    kmax: usize,
    /// Fit on the covariates as given instead of z-scoring them.
    #[arg(long)]
    no_standardize: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct CvFlags {
    /// Grid of iteration counts: "0,10,20" or "start:stop:step". Defaults to
    /// 0..=kmax in max(1, kmax/100) steps.
    #[arg(long)]
    k_grid: Option<String>,
    #[arg(long, default_value_t = 5)]
    folds: usize,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "exchangeable", value_parser = parse_structure)]
    structure: CorrelationStructure,
    #[command(flatten)]
    path: PathArgs,
}

#[derive(Args)]
struct CvArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "exchangeable", value_parser = parse_structure)]
    structure: CorrelationStructure,
    #[command(flatten)]
    path: PathArgs,
    #[command(flatten)]
    cv: CvFlags,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    path: PathArgs,
    #[command(flatten)]
    cv: CvFlags,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 60)]
    n: usize,
    #[arg(long, default_value_t = 200)]
    p: usize,
    #[arg(long, default_value_t = 4)]
    t: usize,
    /// 0-based indices of the truly associated features.
    #[arg(long, default_value = "0,1,2,3,4")]
    support: String,
    /// Absolute value of every non-zero coefficient.
    #[arg(long, default_value_t = 1.0)]
    magnitude: f64,
    /// Draw an independent sign per time point and feature instead of alternating signs.
    #[arg(long)]
    random_signs: bool,
    /// Comma-separated per-time intercepts.
    #[arg(long)]
    intercepts: Option<String>,
    /// Noise correlation: independent, exchangeable or ar1.
    #[arg(long, default_value = "exchangeable", value_parser = parse_structure)]
    structure: CorrelationStructure,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    noise_sd: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AssocArgs {
    /// Matrix holding the panel features (subject_id first).
    #[arg(long)]
    expression: PathBuf,
    /// Matrix of targets to correlate against (subject_id first).
    #[arg(long)]
    targets: PathBuf,
    /// A selection.csv from fit or cv; features with union = 1 form the panel.
    #[arg(long, conflicts_with = "features", required_unless_present = "features")]
    selection: Option<PathBuf>,
    /// Comma-separated panel feature names.
    #[arg(long)]
    features: Option<String>,
    #[arg(long, default_value_t = 0.6)]
    rho_min: f64,
    #[arg(long, default_value_t = 0.001)]
    fdr: f64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_structure(s: &str) -> std::result::Result<CorrelationStructure, String> {
    s.parse::<CorrelationStructure>().map_err(|e| e.to_string())
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| v.parse().map_err(|_| anyhow::anyhow!("{what}: cannot parse \"{v}\"")))
        .collect()
}

fn parse_k_grid(s: &str) -> Result<Vec<usize>> {
    let grid: Vec<usize> = if s.contains(':') {
        let parts: Vec<usize> = s
            .split(':')
            .map(|v| v.trim().parse().with_context(|| format!("--k-grid: cannot parse \"{v}\"")))
            .collect::<Result<_>>()?;
        let [start, stop, step] = parts[..] else {
            bail!("--k-grid: expected start:stop:step, got \"{s}\"");
        };
        if step == 0 || start > stop {
            bail!("--k-grid: need step > 0 and start <= stop, got \"{s}\"");
        }
        (start..=stop).step_by(step).collect()
    } else {
        parse_list(s, "--k-grid")?
    };
    if grid.is_empty() || grid.windows(2).any(|w| w[0] >= w[1]) {
        bail!("--k-grid must be non-empty and strictly increasing, got \"{s}\"");
    }
    Ok(grid)
}

fn fit_config(structure: CorrelationStructure, path: &PathArgs, k_max: usize) -> FitConfig {
    FitConfig {
        structure,
        tau: path.tau,
        dv: path.dv,
        k_max,
        standardize: !path.no_standardize,
        rng_seed: path.seed,
        ..FitConfig::default()
    }
}

fn grid_for(path: &PathArgs, cv: &CvFlags) -> Result<Vec<usize>> {
    match &cv.k_grid {
        Some(s) => parse_k_grid(s),
        None => Ok(default_k_grid(path.kmax)),
    }
}

fn check_folds(ds: &LongitudinalDataset, folds: usize) -> Result<()> {
    if folds < 2 || folds > ds.n_subjects() {
        bail!(
            "--folds must lie in 2..={} (the number of subjects), got {folds}",
            ds.n_subjects()
        );
    }
    Ok(())
}

fn manifest_for(name: &'static str, config: serde_json::Value, seed: u64, data: &DataArgs) -> Result<Manifest> {
    let mut m = Manifest::new(name, config, Some(seed));
    m.input("expression", &data.expression)?;
    m.input("outcomes", &data.outcomes)?;
    Ok(m)
}

fn cmd_fit(a: FitArgs) -> Result<()> {
    let ds = load_dataset(&a.data.expression, &a.data.outcomes)?;
    let config = fit_config(a.structure, &a.path, a.path.kmax);
    let fit = gee_tgdr_fit(&ds, &config)?;
    let mut out = Outputs::new(&a.data.out);
    fit_outputs(&mut out, &ds, &fit, None)?;
    manifest_for("fit", json!({ "fit": config }), a.path.seed, &a.data)?.finish(&mut out)?;
    out.commit()
}

fn cmd_cv(a: CvArgs) -> Result<()> {
    let ds = load_dataset(&a.data.expression, &a.data.outcomes)?;
    check_folds(&ds, a.cv.folds)?;
    let grid = grid_for(&a.path, &a.cv)?;
    let k_top = *grid.last().expect("grid is non-empty");
    let config = fit_config(a.structure, &a.path, k_top);
    let cv = cross_validate(&ds, &config, a.cv.folds, &grid, a.path.seed)?;
    let fit = gee_tgdr_fit(&ds, &FitConfig { k_max: cv.best_k, ..config.clone() })?;
    let mut out = Outputs::new(&a.data.out);
    cv_outputs(&mut out, &ds, &cv)?;
    fit_outputs(&mut out, &ds, &fit, Some(&cv))?;
    let settings = json!({ "fit": config, "folds": a.cv.folds, "k_grid": grid });
    manifest_for("cv", settings, a.path.seed, &a.data)?.finish(&mut out)?;
    out.commit()
}

fn cmd_compare(a: CompareArgs) -> Result<()> {
    let ds = load_dataset(&a.data.expression, &a.data.outcomes)?;
    check_folds(&ds, a.cv.folds)?;
    let grid = grid_for(&a.path, &a.cv)?;
    let k_top = *grid.last().expect("grid is non-empty");
    let config = fit_config(CorrelationStructure::Exchangeable, &a.path, k_top);
    let cmp = compare_structures(&ds, &config, a.cv.folds, &grid, a.path.seed);

    let mut header: Vec<String> = ["structure", "cv_mean_mse", "cv_sd_mse", "alldata_mse"]
        .map(String::from)
        .to_vec();
    header.extend(ds.time_labels().iter().map(|l| format!("selected_{l}")));
    header.extend(["best_k", "n_selected", "error"].map(String::from));
    let mut rows = Vec::new();
    for row in &cmp.rows {
        let mut r = vec![row.structure.name().to_string()];
        match &row.outcome {
            Ok(s) => {
                let i = s.cv.best_index();
                r.extend([num(s.cv.mean_mse[i]), num(s.cv.sd_mse[i]), num(s.alldata_mse)]);
                r.extend(s.per_time_features.iter().map(|f| f.join(";")));
                r.extend([s.cv.best_k.to_string(), s.union_features.len().to_string(), String::new()]);
            }
            Err(e) => {
                eprintln!("warning: {} failed: {e}", row.structure);
                r.extend(std::iter::repeat_n(String::new(), 3 + ds.n_times() + 2));
                r.push(e.replace('\n', " "));
            }
        }
        rows.push(r);
    }
    let mut out = Outputs::new(&a.data.out);
    out.csv("table1.csv", &header, &rows)?;
    let mut base = serde_json::to_value(&config)?;
    base.as_object_mut().expect("config is an object").remove("structure");
    let settings = json!({ "fit": base, "structures": CorrelationStructure::ALL, "folds": a.cv.folds, "k_grid": grid });
    manifest_for("compare", settings, a.path.seed, &a.data)?.finish(&mut out)?;
    out.commit()
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let correlation = match a.structure {
        CorrelationStructure::Independent => WorkingCorrelation::Independent,
        CorrelationStructure::Exchangeable => WorkingCorrelation::Exchangeable(a.alpha),
        CorrelationStructure::Ar1 => WorkingCorrelation::Ar1(a.alpha),
        CorrelationStructure::Unstructured => {
            bail!("--structure unstructured needs a full matrix; simulate supports independent, exchangeable and ar1")
        }
    };
    let support: Vec<usize> = parse_list(&a.support, "--support")?;
    let mut spec = SimulationSpec::sparse(a.n, a.p, a.t, &support, a.magnitude, correlation, a.noise_sd, a.seed);
    if a.random_signs {
        spec = spec.with_random_signs();
    }
    if let Some(s) = &a.intercepts {
        let b: Vec<f64> = parse_list(s, "--intercepts")?;
        if b.len() != a.t {
            bail!("--intercepts needs {} values, got {}", a.t, b.len());
        }
        spec = spec.with_intercepts(&b);
    }
    let (ds, truth) = generate(&spec)?;

    let mut out = Outputs::new(&a.out);
    let matrix_rows = |m: &nalgebra::DMatrix<f64>| -> Vec<Vec<String>> {
        (0..m.nrows())
            .map(|i| {
                let mut row = vec![ds.subject_ids()[i].clone()];
                row.extend(m.row(i).iter().map(|v| num(*v)));
                row
            })
            .collect()
    };
    let mut header = vec![ID_COLUMN.to_string()];
    header.extend(ds.feature_names().iter().cloned());
    out.csv("expression.csv", &header, &matrix_rows(ds.covariates()))?;
    let mut header = vec![ID_COLUMN.to_string()];
    header.extend(ds.time_labels().iter().cloned());
    out.csv("outcomes.csv", &header, &matrix_rows(ds.outcomes()))?;

    let mut coefficients = Vec::new();
    for (j, label) in ds.time_labels().iter().enumerate() {
        coefficients.push(json!({ "time_label": label, "feature": output::INTERCEPT, "beta": truth.beta.intercept(j) }));
        for &q in &truth.support {
            coefficients.push(json!({ "time_label": label, "feature": ds.feature_names()[q], "beta": truth.beta.feature(j, q) }));
        }
    }
    let alpha = truth.correlation.alpha_scalar();
    out.json(
        "truth.json",
        &json!({
            "support": names(&ds, &truth.support),
            "support_indices": truth.support,
            "coefficients": coefficients,
            "noise_correlation": { "structure": truth.correlation.kind().name(), "alpha": alpha },
            "noise_sd": truth.noise_sd,
        }),
    )?;
    let settings = json!({
        "n": a.n, "p": a.p, "t": a.t, "support": support, "magnitude": a.magnitude,
        "random_signs": a.random_signs, "intercepts": a.intercepts, "structure": a.structure,
        "alpha": a.alpha, "noise_sd": a.noise_sd,
    });
    Manifest::new("simulate", settings, Some(a.seed)).finish(&mut out)?;
    out.commit()
}

fn selection_union(path: &Path) -> Result<Vec<String>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("{}: cannot open", path.display()))?;
    let header = reader.headers().with_context(|| format!("{}: unreadable header", path.display()))?.clone();
    if header.get(0) != Some("feature") {
        bail!("{}:1:1: expected a selection table starting with \"feature\"", path.display());
    }
    let Some(col) = header.iter().position(|h| h == "union") else {
        bail!("{}:1: no \"union\" column", path.display());
    };
    let mut panel = Vec::new();
    for record in reader.records() {
        let record = record.with_context(|| format!("{}: malformed row", path.display()))?;
        let line = record.position().map_or(0, |p| p.line());
        match record.get(col) {
            Some("1") => panel.push(record[0].to_string()),
            Some("0") => {}
            other => bail!(
                "{}:{line}:{}: union flag must be 0 or 1, found {:?}",
                path.display(),
                col + 1,
                other.unwrap_or("")
            ),
        }
    }
    Ok(panel)
}

fn cmd_assoc(a: AssocArgs) -> Result<()> {
    let x = read_table(&a.expression)?;
    let y = read_table(&a.targets)?;
    let y_rows = y.aligned_to(&x.row_ids, &a.expression)?;
    let panel_names = match (&a.selection, &a.features) {
        (Some(path), _) => selection_union(path)?,
        (None, Some(list)) => parse_list(list, "--features")?,
        (None, None) => unreachable!("clap requires one of --selection, --features"),
    };
    if panel_names.is_empty() {
        bail!("the feature panel is empty");
    }
    let panel = NamedMatrix::new(x.row_ids.clone(), x.columns.clone(), x.matrix(&x.values))?
        .select_columns(&panel_names)
        .with_context(|| format!("panel feature missing from {}", a.expression.display()))?;
    let targets = NamedMatrix::new(x.row_ids.clone(), y.columns.clone(), y.matrix(&y_rows))?;
    let edges = correlate_panel(&panel, &targets, a.rho_min, a.fdr)?;

    let mut out = Outputs::new(&a.out);
    let rows: Vec<Vec<String>> = edges
        .edges
        .iter()
        .map(|e| vec![e.source.clone(), e.target.clone(), num(e.rho), num(e.p_value), num(e.adjusted_p)])
        .collect();
    out.csv("edges.csv", &["source", "target", "rho", "p", "p_adjusted"].map(String::from), &rows)?;
    out.json(
        "assoc_report.json",
        &json!({
            "rho_min": a.rho_min,
            "fdr_q": a.fdr,
            "fdr_family": "every panel x target pair with a defined correlation, adjusted together",
            "tests": edges.tests,
            "undefined_pairs": edges.undefined_pairs,
            "panel": panel_names,
            "n_targets": y.columns.len(),
            "n_subjects": x.row_ids.len(),
            "edges": edges.edges.len(),
        }),
    )?;
    let mut m = Manifest::new(
        "assoc",
        json!({ "rho_min": a.rho_min, "fdr": a.fdr, "features": a.features }),
        None,
    );
    m.input("expression", &a.expression)?;
    m.input("targets", &a.targets)?;
    if let Some(path) = &a.selection {
        m.input("selection", path)?;
    }
    m.finish(&mut out)?;
    out.commit()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Cv(a) => cmd_cv(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Assoc(a) => cmd_assoc(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
