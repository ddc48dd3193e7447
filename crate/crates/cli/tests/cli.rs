use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geetgdr"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read(path: PathBuf) -> String {
    fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn simulate(dir: &Path, extra: &[&str]) -> (PathBuf, PathBuf) {
    let mut args = vec!["simulate", "--n", "24", "--p", "15", "--t", "3", "--seed", "5", "--out", p(dir)];
    args.extend_from_slice(extra);
    ok(&args);
    (dir.join("expression.csv"), dir.join("outcomes.csv"))
}

#[test]
fn minimal_dataset_with_zero_iterations_selects_nothing() {
    let tmp = TempDir::new().unwrap();
    let x = tmp.path().join("x.csv");
    let y = tmp.path().join("y.csv");
    fs::write(&x, "subject_id,g1,g2\nA,1.0,2.0\nB,3.0,-1.0\n").unwrap();
    // Outcome rows in the opposite order: matched by identifier.
    fs::write(&y, "subject_id,w0,w1\nB,2.0,1.5\nA,0.5,1.0\n").unwrap();
    let out = tmp.path().join("fit");
    ok(&["fit", "--expression", p(&x), "--outcomes", p(&y), "--kmax", "0", "--out", p(&out)]);

    let coef = read(out.join("coefficients.csv"));
    let mut lines = coef.lines();
    assert_eq!(lines.next(), Some("time_label,feature,beta"));
    assert_eq!(coef.lines().count(), 1 + 2 * 3);
    for line in lines {
        assert!(line.ends_with(",0"), "{line}");
    }
    assert_eq!(read(out.join("selection.csv")), "feature,w0,w1,union\ng1,0,0,0\ng2,0,0,0\n");
    let report: serde_json::Value = serde_json::from_str(&read(out.join("fit_report.json"))).unwrap();
    assert_eq!(report["k_used"], 0);
    assert_eq!(report["quasi_likelihood_trace"].as_array().unwrap().len(), 1);
    assert!(out.join("manifest.json").exists());
}

#[test]
fn simulated_files_round_trip_through_fit() {
    let tmp = TempDir::new().unwrap();
    let (x, y) = simulate(&tmp.path().join("sim"), &["--magnitude", "2", "--support", "0,3"]);
    let truth: serde_json::Value = serde_json::from_str(&read(tmp.path().join("sim/truth.json"))).unwrap();
    assert_eq!(truth["support"], serde_json::json!(["F01", "F04"]));

    let out = tmp.path().join("fit");
    ok(&["fit", "--expression", p(&x), "--outcomes", p(&y), "--kmax", "400", "--out", p(&out)]);
    let selection = read(out.join("selection.csv"));
    let union: Vec<&str> = selection
        .lines()
        .skip(1)
        .filter(|l| l.ends_with(",1"))
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert!(union.contains(&"F01") && union.contains(&"F04"), "{union:?}");
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let (x, y) = simulate(&tmp.path().join("sim"), &[]);
    let mut dirs = Vec::new();
    for run_id in 0..2 {
        let cv = tmp.path().join(format!("cv{run_id}"));
        let cmp = tmp.path().join(format!("cmp{run_id}"));
        ok(&["cv", "--expression", p(&x), "--outcomes", p(&y), "--kmax", "150", "--seed", "9", "--out", p(&cv)]);
        ok(&["compare", "--expression", p(&x), "--outcomes", p(&y), "--kmax", "150", "--seed", "9", "--out", p(&cmp)]);
        dirs.push((cv, cmp));
    }
    for name in ["cv.csv", "folds.csv", "coefficients.csv", "selection.csv", "fit_report.json"] {
        assert_eq!(fs::read(dirs[0].0.join(name)).unwrap(), fs::read(dirs[1].0.join(name)).unwrap(), "{name}");
    }
    assert_eq!(
        fs::read(dirs[0].1.join("table1.csv")).unwrap(),
        fs::read(dirs[1].1.join("table1.csv")).unwrap()
    );

    // The manifest differs only in its timestamp.
    let strip = |path: PathBuf| {
        let mut v: serde_json::Value = serde_json::from_str(&read(path)).unwrap();
        v.as_object_mut().unwrap().remove("created_at");
        v
    };
    assert_eq!(strip(dirs[0].0.join("manifest.json")), strip(dirs[1].0.join("manifest.json")));

    let sim2 = tmp.path().join("sim2");
    simulate(&sim2, &[]);
    for name in ["expression.csv", "outcomes.csv", "truth.json"] {
        assert_eq!(fs::read(tmp.path().join("sim").join(name)).unwrap(), fs::read(sim2.join(name)).unwrap());
    }
}

#[test]
fn leave_one_out_and_single_point_grid() {
    let tmp = TempDir::new().unwrap();
    let (x, y) = simulate(&tmp.path().join("sim"), &[]);
    let loo = tmp.path().join("loo");
    ok(&["cv", "--expression", p(&x), "--outcomes", p(&y), "--folds", "24", "--kmax", "20", "--out", p(&loo)]);
    let cv = read(loo.join("cv.csv"));
    assert!(cv.lines().next().unwrap().ends_with("fold_24"));
    let folds = read(loo.join("folds.csv"));
    let mut assigned: Vec<&str> = folds.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assigned.sort_by_key(|f| f.parse::<usize>().unwrap());
    assigned.dedup();
    assert_eq!(assigned.len(), 24);

    let single = tmp.path().join("single");
    ok(&["cv", "--expression", p(&x), "--outcomes", p(&y), "--k-grid", "0", "--out", p(&single)]);
    assert_eq!(read(single.join("cv.csv")).lines().count(), 2);

    let too_many = run(&["cv", "--expression", p(&x), "--outcomes", p(&y), "--folds", "25", "--out", p(&tmp.path().join("bad"))]);
    assert!(!too_many.status.success());
    assert!(!tmp.path().join("bad").exists());
}

#[test]
fn seed_changes_folds_not_schema() {
    let tmp = TempDir::new().unwrap();
    let (x, y) = simulate(&tmp.path().join("sim"), &[]);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&["cv", "--expression", p(&x), "--outcomes", p(&y), "--kmax", "20", "--seed", "1", "--out", p(&a)]);
    ok(&["cv", "--expression", p(&x), "--outcomes", p(&y), "--kmax", "20", "--seed", "2", "--out", p(&b)]);
    assert_ne!(read(a.join("folds.csv")), read(b.join("folds.csv")));
    let header = |d: &Path| read(d.join("cv.csv")).lines().next().unwrap().to_string();
    assert_eq!(header(&a), header(&b));
}

#[test]
fn compare_reports_four_structures() {
    let tmp = TempDir::new().unwrap();
    let (x, y) = simulate(&tmp.path().join("sim"), &[]);
    let out = tmp.path().join("cmp");
    ok(&["compare", "--expression", p(&x), "--outcomes", p(&y), "--kmax", "100", "--out", p(&out)]);
    let table = read(out.join("table1.csv"));
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(
        lines[0],
        "structure,cv_mean_mse,cv_sd_mse,alldata_mse,selected_T1,selected_T2,selected_T3,best_k,n_selected,error"
    );
    let structures: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(structures, ["ar1", "unstructured", "exchangeable", "independent"]);
}

#[test]
fn duplicated_column_yields_a_perfect_edge() {
    let tmp = TempDir::new().unwrap();
    let (x, _) = simulate(&tmp.path().join("sim"), &[]);
    let expression = read(x.clone());
    // Targets: F03 copied under a new name, rows reversed, plus pure noise.
    let mut rows: Vec<Vec<String>> = expression
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    let header = rows.remove(0);
    let f03 = header.iter().position(|h| h == "F03").unwrap();
    let noise = header.iter().position(|h| h == "F10").unwrap();
    let mut targets = String::from("subject_id,copy,other\n");
    for row in rows.iter().rev() {
        targets += &format!("{},{},{}\n", row[0], row[f03], row[noise]);
    }
    let t = tmp.path().join("targets.csv");
    fs::write(&t, targets).unwrap();

    let out = tmp.path().join("assoc");
    ok(&["assoc", "--expression", p(&x), "--targets", p(&t), "--features", "F01,F03", "--out", p(&out)]);
    let edges = read(out.join("edges.csv"));
    let lines: Vec<&str> = edges.lines().collect();
    assert_eq!(lines[0], "source,target,rho,p,p_adjusted");
    assert!(lines.contains(&"F03,copy,1,0,0"), "{edges}");
    let report: serde_json::Value = serde_json::from_str(&read(out.join("assoc_report.json"))).unwrap();
    assert_eq!(report["tests"], 4);
}

#[test]
fn ingestion_errors_name_file_line_and_column() {
    let tmp = TempDir::new().unwrap();
    let x = tmp.path().join("x.csv");
    let y = tmp.path().join("y.csv");
    fs::write(&y, "subject_id,w0,w1\nA,1,2\nB,3,4\nC,5,6\n").unwrap();
    let out = tmp.path().join("out");
    let err = |x_body: &str| {
        fs::write(&x, x_body).unwrap();
        let o = run(&["fit", "--expression", p(&x), "--outcomes", p(&y), "--out", p(&out)]);
        assert!(!o.status.success());
        assert!(!out.exists(), "no output on failure");
        String::from_utf8(o.stderr).unwrap()
    };

    let e = err("subject_id,g1,g2\nA,1,2\nB,oops,3\nC,1,1\n");
    assert!(e.contains("x.csv:3:2") && e.contains("oops"), "{e}");
    let e = err("subject_id,g1,g2\nA,1,2\nB,NaN,3\nC,1,1\n");
    assert!(e.contains("x.csv:3:2") && e.contains("non-finite"), "{e}");
    let e = err("id,g1\nA,1\n");
    assert!(e.contains("x.csv:1:1"), "{e}");
    let e = err("subject_id,g1,g2\nA,1,2\nB,1\n");
    assert!(e.contains("x.csv:3"), "{e}");
    let e = err("subject_id,g1\nA,1\nB,2\nB,3\n");
    assert!(e.contains("duplicate subject_id \"B\""), "{e}");
    let e = err("subject_id,g1\nA,1\nB,2\nD,3\n");
    assert!(e.contains("y.csv") && e.contains("\"D\"") && e.contains("\"C\""), "{e}");
}
