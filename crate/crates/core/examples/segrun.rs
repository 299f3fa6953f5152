//! End-to-end segmentation over seeds; prints interior breakpoints and their
//! errors against ground truth. `cargo run --release -p cdss-core --example
//! segrun -- <stationary|nonstationary|both> [key=value ...]`.

use cdss_core::segmentation::*;
use cdss_core::synth::*;
use std::time::Instant;

fn run(series: &cdss_core::series::MultivariateSeries, truth: &[usize], cfg: &SegmentationConfig) {
    let t0 = Instant::now();
    match segment(series, cfg) {
        Ok(result) => {
            let interior = result.interior_breakpoints();
            let errs: Vec<String> = truth
                .iter()
                .map(|t| {
                    interior
                        .iter()
                        .map(|b| b.abs_diff(*t))
                        .min()
                        .map(|e| e.to_string())
                        .unwrap_or_else(|| "miss".into())
                })
                .collect();
            let ok = interior.len() == truth.len()
                && truth
                    .iter()
                    .zip(interior.iter())
                    .all(|(t, b)| b.abs_diff(*t) <= 40);
            let h_max = result
                .phases
                .iter()
                .map(|p| p.h_value)
                .fold(0.0f64, f64::max);
            let h_conv = result.phases.iter().all(|p| p.h_converged);
            println!(
                "  bpt={interior:?} errors={errs:?} phases={} ok={} h_max={h_max:.1e} h_conv={h_conv} t={:.0}s",
                result.phases.len(),
                ok,
                t0.elapsed().as_secs_f64()
            );
        }
        Err(e) => println!("  ERROR: {e}"),
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).map(|s| s.as_str()).unwrap_or("both");
    let mut cfg = SegmentationConfig::default();
    let mut seeds = 5u64;
    let mut seed_base = 0u64;
    for kv in args.iter().skip(2) {
        let (k, v) = kv.split_once('=').expect("key=value");
        match k {
            "h" => cfg.h_init = v.parse().unwrap(),
            "w" => cfg.extension_step = v.parse().unwrap(),
            "zeta" => cfg.zeta = v.parse().unwrap(),
            "alpha" => cfg.alpha = v.parse().unwrap(),
            "beta" => cfg.beta = v.parse().unwrap(),
            "m" => cfg.discovery.kernels_per_target = v.parse().unwrap(),
            "hidden" => cfg.discovery.hidden_width = v.parse().unwrap(),
            "lambda1" => {
                let l: f64 = v.parse().unwrap();
                cfg.discovery.lambda1 = vec![l; cfg.discovery.lag_order + 1];
            }
            "lambda2" => cfg.discovery.lambda2 = v.parse().unwrap(),
            "steps" => cfg.discovery.steps_per_round = v.parse().unwrap(),
            "rounds" => cfg.discovery.max_rounds = v.parse().unwrap(),
            "conv" => cfg.discovery.conventional_rmse = v.parse().unwrap(),
            "jitter" => cfg.discovery.input_jitter = v.parse().unwrap(),
            "clip" => cfg.discovery.residual_clip = Some(v.parse().unwrap()),
            "norm" => {
                cfg.test_normalization = if v == "train" {
                    TestNormalization::TrainStats
                } else {
                    TestNormalization::OwnStats
                }
            }
            "window" => {
                cfg.window_mode = if v == "sliding" {
                    WindowMode::Sliding
                } else {
                    WindowMode::Cumulative
                }
            }
            "seeds" => seeds = v.parse().unwrap(),
            "seed_base" => seed_base = v.parse().unwrap(),
            other => panic!("unknown key {other}"),
        }
    }
    cfg.l_min = cfg.h_init + cfg.extension_step;
    println!(
        "h={} w={} zeta={} alpha={} beta={} m={} l2={} norm={:?} conv={} window={:?}",
        cfg.h_init,
        cfg.extension_step,
        cfg.zeta,
        cfg.alpha,
        cfg.beta,
        cfg.discovery.kernels_per_target,
        cfg.discovery.lambda2,
        cfg.test_normalization,
        cfg.discovery.conventional_rmse,
        cfg.window_mode,
    );

    if which == "both" || which == "stationary" {
        println!("== stationary ==");
        for seed in seed_base..seed_base + seeds {
            let (series, truth) =
                generate_stationary_example(&StationaryConfig::default(), seed).unwrap();
            let mut c = cfg.clone();
            c.discovery.seed = seed;
            print!("s{seed}");
            run(&series, &truth.true_breakpoints, &c);
        }
    }
    if which == "both" || which == "nonstationary" {
        println!("== nonstationary ==");
        for seed in seed_base..seed_base + seeds {
            let (series, truth) =
                generate_nonstationary_example(&NonstationaryConfig::default(), seed).unwrap();
            let mut c = cfg.clone();
            c.discovery.seed = seed;
            print!("n{seed}");
            run(&series, &truth.true_breakpoints, &c);
        }
    }
}
