//! Prints distance statistics of the synthetic examples to support choosing
//! segmentation defaults. Run with `cargo run --release -p cdss-core
//! --example calibrate -- <stationary|nonstationary|both> [key=value ...]`.
//!
//! Keys: h, w, zeta, m, hidden, lambda1, lambda2, steps, rounds, norm
//! (own|train), seeds.

use cdss_core::discovery::train_discovery;
use cdss_core::segmentation::*;
use cdss_core::series::{normalize_window, window_mean, MultivariateSeries};
use cdss_core::synth::*;
use std::time::Instant;

static mut GEN: StationaryConfig = StationaryConfig {
    dim: 5,
    lag_order: 3,
    mode_length: 500,
    n_modes: 3,
    inst_edge_prob: 0.3,
    lag_edge_prob: 0.2,
    weight_lo: 0.5,
    weight_hi: 1.0,
    noise_std: 1.0,
};

struct PhaseReport {
    l_train: f64,
    in_dists: Vec<f64>,
    out_dists: Vec<f64>, // cumulative windows whose end is past the break
    pure_out: Vec<f64>,  // sliding last-w windows fully past the break
}

fn phase_stats(
    series: &MultivariateSeries,
    cfg: &SegmentationConfig,
    start: usize,
    true_break: usize,
) -> PhaseReport {
    let h = cfg.h_init;
    let train = series.window(start, start + h).unwrap();
    let (normed, stats) = normalize_window(train, None).unwrap();
    let t0 = Instant::now();
    let mut disc = cfg.discovery.clone();
    disc.seed = disc.seed.wrapping_add(start as u64);
    let outcome = train_discovery(normed.view(), series.var_names(), &disc).unwrap();
    let train_time = t0.elapsed().as_secs_f64();
    eprint!(
        "  [L={:.4} h={:.2e} conv={} t={:.1}s]",
        outcome.l_train, outcome.h_value, outcome.h_converged, train_time
    );

    let w = cfg.extension_step;
    let mut report = PhaseReport {
        l_train: outcome.l_train,
        in_dists: vec![],
        out_dists: vec![],
        pure_out: vec![],
    };
    let mut n = 1;
    while start + h + n * w <= series.len() && n <= 16 {
        let end = start + h + n * w;
        let w_start = match cfg.window_mode {
            WindowMode::Cumulative => start + h,
            WindowMode::Sliding => end - w,
        };
        let win = series.window(w_start, end).unwrap();
        let dc = causal_similarity_distance(&outcome.model, &stats, win, cfg).unwrap();
        let mu = window_mean(win).unwrap();
        let dm = stable_similarity_distance(stats.mean.view(), mu.view()).unwrap();
        let dist = similarity_distance(dc, dm, cfg.zeta);
        if end <= true_break {
            report.in_dists.push(dist);
        } else {
            report.out_dists.push(dist);
        }
        // sliding window fully past the break, same length w
        let s_start = end - w;
        if s_start >= true_break {
            let sw = series.window(s_start, end).unwrap();
            let dc = causal_similarity_distance(&outcome.model, &stats, sw, cfg).unwrap();
            let mu = window_mean(sw).unwrap();
            let dm = stable_similarity_distance(stats.mean.view(), mu.view()).unwrap();
            report.pure_out.push(similarity_distance(dc, dm, cfg.zeta));
        }
        n += 1;
    }
    report
}

fn summarize(tag: &str, reports: &[PhaseReport], alpha: f64, beta: f64) {
    let mut worst_margin = f64::INFINITY;
    for r in reports {
        let rho = alpha * r.l_train + beta;
        let in_max = r.in_dists.iter().cloned().fold(0.0f64, f64::max);
        let first_out = r.out_dists.first().cloned().unwrap_or(f64::NAN);
        let second_out = r.out_dists.get(1).cloned().unwrap_or(f64::NAN);
        let pure = r.pure_out.first().cloned().unwrap_or(f64::NAN);
        let fp_margin = rho - in_max; // >0 means no false positive
        let det_margin = first_out - rho; // >0 means detection at the 1st failing window
        worst_margin = worst_margin.min(fp_margin.min(det_margin));
        eprintln!(
            "    {tag} L={:.3} rho={:.3} in={:?} out={:?} pure={:?} fp={:+.3} det1={:+.3}",
            r.l_train,
            rho,
            r.in_dists.iter().map(|d| (d * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            r.out_dists.iter().map(|d| (d * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            r.pure_out.iter().map(|d| (d * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            fp_margin,
            det_margin
        );
        let _ = (in_max, first_out, second_out, pure);
    }
    eprintln!("    {tag} WORST MARGIN {worst_margin:+.3}");
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).map(|s| s.as_str()).unwrap_or("both");
    let mut cfg = SegmentationConfig::default();
    let mut seeds = 5u64;
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
            "norm" => {
                cfg.test_normalization = if v == "train" {
                    TestNormalization::TrainStats
                } else {
                    TestNormalization::OwnStats
                }
            }
            "conv" => cfg.discovery.conventional_rmse = v.parse().unwrap(),
            "jitter" => cfg.discovery.input_jitter = v.parse().unwrap(),
            "clip" => cfg.discovery.residual_clip = Some(v.parse().unwrap()),
            "gen_inst" => unsafe { GEN.inst_edge_prob = v.parse().unwrap() },
            "gen_lag" => unsafe { GEN.lag_edge_prob = v.parse().unwrap() },
            "gen_wlo" => unsafe { GEN.weight_lo = v.parse().unwrap() },
            "gen_whi" => unsafe { GEN.weight_hi = v.parse().unwrap() },
            "window" => {
                cfg.window_mode = if v == "sliding" {
                    WindowMode::Sliding
                } else {
                    WindowMode::Cumulative
                }
            }
            "seeds" => seeds = v.parse().unwrap(),
            other => panic!("unknown key {other}"),
        }
    }
    cfg.l_min = cfg.h_init + 2 * cfg.extension_step;
    eprintln!(
        "config: h={} w={} zeta={} m={} hidden={} l1={:?} l2={} steps={} rounds={} norm={:?} conv={}",
        cfg.h_init,
        cfg.extension_step,
        cfg.zeta,
        cfg.discovery.kernels_per_target,
        cfg.discovery.hidden_width,
        cfg.discovery.lambda1[0],
        cfg.discovery.lambda2,
        cfg.discovery.steps_per_round,
        cfg.discovery.max_rounds,
        cfg.test_normalization,
        cfg.discovery.conventional_rmse,
    );

    if which == "both" || which == "stationary" {
        eprintln!("== stationary ==");
        let mut reports = vec![];
        for seed in 0..seeds {
            let gen = unsafe { GEN.clone() };
            let (series, truth) = generate_stationary_example(&gen, seed).unwrap();
            let mut c = cfg.clone();
            c.discovery.seed = seed;
            eprint!("s{seed} p1");
            reports.push(phase_stats(&series, &c, 0, truth.true_breakpoints[0]));
            eprintln!();
            eprint!("s{seed} p2");
            reports.push(phase_stats(
                &series,
                &c,
                truth.true_breakpoints[0] + 25,
                truth.true_breakpoints[1],
            ));
            eprintln!();
        }
        summarize("stat", &reports, cfg.alpha, cfg.beta);
    }
    if which == "both" || which == "nonstationary" {
        eprintln!("== nonstationary ==");
        let mut reports = vec![];
        for seed in 0..seeds {
            let (series, truth) =
                generate_nonstationary_example(&NonstationaryConfig::default(), seed).unwrap();
            let mut c = cfg.clone();
            c.discovery.seed = seed;
            eprint!("n{seed} p1");
            reports.push(phase_stats(&series, &c, 0, truth.true_breakpoints[0]));
            eprintln!();
            eprint!("n{seed} p2");
            reports.push(phase_stats(
                &series,
                &c,
                truth.true_breakpoints[0] + 25,
                truth.true_breakpoints[1],
            ));
            eprintln!();
        }
        summarize("nonstat", &reports, cfg.alpha, cfg.beta);
    }
}
