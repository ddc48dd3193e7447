//! Pilot for the AR1 under-selection check: how often AR1 has the worst CV
//! MSE when the true noise correlation is exchangeable.
//!
//! cargo run --release -p geetgdr-core --example calibrate_ar1 -- <n> <p> <noise_sd> <k_max> <seeds> [intercepts]

use std::env;

use geetgdr::correlation::{CorrelationStructure, WorkingCorrelation};
use geetgdr::modelselect::{compare_structures, default_k_grid};
use geetgdr::simgen::{generate, SimulationSpec};
use geetgdr::FitConfig;

fn main() {
    let a: Vec<String> = env::args().collect();
    let n: usize = a[1].parse().unwrap();
    let p: usize = a[2].parse().unwrap();
    let noise: f64 = a[3].parse().unwrap();
    let k_max: usize = a[4].parse().unwrap();
    let seeds: u64 = a[5].parse().unwrap();
    let intercepts: Vec<f64> = a.get(6).map_or(vec![0.0; 4], |s| s.split(',').map(|v| v.parse().unwrap()).collect());
    let grid = default_k_grid(k_max);
    let mut worst = 0;
    for seed in 0..seeds {
        let spec = SimulationSpec::sparse(n, p, 4, &[2, 6, 10, 14, 18], 1.0, WorkingCorrelation::Exchangeable(0.6), noise, 2000 + seed)
            .with_random_signs()
            .with_intercepts(&intercepts);
        let (ds, _) = generate(&spec).unwrap();
        let cfg = FitConfig { k_max, ..FitConfig::default() };
        let cmp = compare_structures(&ds, &cfg, 5, &grid, seed);
        let mut line = format!("seed {seed}:");
        let mut means = Vec::new();
        for row in &cmp.rows {
            let s = row.outcome.as_ref().unwrap();
            let m = s.cv.mean_mse[s.cv.best_index()];
            means.push((row.structure, m));
            line += &format!(" {}={:.3}(K{} n{})", row.structure, m, s.cv.best_k, s.union_features.len());
        }
        let w = means.iter().cloned().fold((CorrelationStructure::Independent, f64::MIN), |a, b| if b.1 > a.1 { b } else { a });
        if w.0 == CorrelationStructure::Ar1 { worst += 1; }
        println!("{line} worst={}", w.0);
    }
    println!("AR1 worst in {worst}/{seeds}");
}
