//! Pilot runs used to pick the noise level and iteration budget of the
//! simulation-based acceptance checks.
//!
//! cargo run --release -p geetgdr-core --example calibrate -- <noise_sd> <k_max> <seeds> [dv] [constant]
//!
//! Passing `constant` as the fifth argument keeps each feature's sign fixed
//! across time instead of drawing it per time point.

use std::env;

use geetgdr::correlation::{CorrelationStructure, WorkingCorrelation};
use geetgdr::modelselect::{cross_validate, default_k_grid};
use geetgdr::simgen::{generate, SimulationSpec};
use geetgdr::{gee_tgdr_fit, FitConfig};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 0 {
        0.5 * (v[m - 1] + v[m])
    } else {
        v[m]
    }
}

fn main() {
    let args: Vec<String> = env::args().collect();
    let noise_sd: f64 = args.get(1).map_or(1.0, |s| s.parse().unwrap());
    let k_max: usize = args.get(2).map_or(2000, |s| s.parse().unwrap());
    let seeds: u64 = args.get(3).map_or(20, |s| s.parse().unwrap());
    let dv: f64 = args.get(4).map_or(0.01, |s| s.parse().unwrap());
    let constant_signs = args.get(5).is_some_and(|s| s == "constant");
    let grid = default_k_grid(k_max);

    for structure in [CorrelationStructure::Independent, CorrelationStructure::Exchangeable] {
        let mut f1 = Vec::new();
        let mut recall = Vec::new();
        let mut ks = Vec::new();
        for seed in 0..seeds {
            let spec = SimulationSpec::sparse(
                60,
                200,
                4,
                &[2, 6, 10, 14, 18],
                1.0,
                WorkingCorrelation::Exchangeable(0.5),
                noise_sd,
                1000 + seed,
            );
            let spec = if constant_signs { spec } else { spec.with_random_signs() };
            let (ds, truth) = generate(&spec).unwrap();
            let config = FitConfig {
                structure,
                dv,
                k_max,
                ..FitConfig::default()
            };
            let cv = cross_validate(&ds, &config, 5, &grid, seed).unwrap();
            let fit = gee_tgdr_fit(&ds, &FitConfig { k_max: cv.best_k, ..config }).unwrap();
            f1.push(truth.exact_support_metrics(&fit.beta).f1);
            recall.push(truth.support_metrics(&fit.selection.union).recall);
            ks.push(cv.best_k as f64);
        }
        println!(
            "{structure:>12}: median F1 {:.3} (min {:.3} max {:.3}) median union recall {:.3} min recall {:.3} median K {}",
            median(f1.clone()),
            f1.iter().cloned().fold(f64::INFINITY, f64::min),
            f1.iter().cloned().fold(0.0, f64::max),
            median(recall.clone()),
            recall.iter().cloned().fold(f64::INFINITY, f64::min),
            median(ks)
        );
    }
}
