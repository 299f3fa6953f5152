//! Multi-seed experiment runner driven by a JSON spec file.

use anyhow::{bail, Context, Result};
use cdss_core::eval::{baseline_mean_shift_segment, breakpoint_error, BreakpointReport};
use cdss_core::pipeline::{offline_train, online_predict};
use cdss_core::segmentation::{segment, SegmentationConfig, SegmentationSummary};
use cdss_core::series::{load_csv, MultivariateSeries};
use cdss_core::synth::{
    generate_nonstationary_example, generate_stationary_example, synthesize_nonstationary,
    synthesize_stationary, NonstationaryConfig, StationaryConfig, SyntheticGroundTruth,
};
use cdss_core::tcgcn::{rmse, TcGcnConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::output::write_string_atomic;
use crate::plot;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub data: DataSpec,
    pub method: Method,
    #[serde(default)]
    pub seg_config: Option<SegmentationConfig>,
    #[serde(default)]
    pub baseline: BaselineSpec,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    #[serde(default = "default_radius")]
    pub match_radius: usize,
    #[serde(default)]
    pub soft_sensing: Option<SoftSensingSpec>,
}

fn default_radius() -> usize {
    cdss_core::eval::DEFAULT_MATCH_RADIUS
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, untagged)]
pub enum DataSpec {
    Generator {
        generator: GeneratorKind,
        #[serde(default)]
        mode_length: Option<usize>,
    },
    Csv {
        csv: PathBuf,
        #[serde(default)]
        truth: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorKind {
    Stationary,
    Nonstationary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Cdss,
    Baseline,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSpec {
    pub window: usize,
    pub threshold: f64,
}

impl Default for BaselineSpec {
    fn default() -> Self {
        Self {
            window: 100,
            threshold: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SoftSensingSpec {
    pub target: String,
    #[serde(default)]
    pub gcn_config: Option<TcGcnConfig>,
    #[serde(default = "default_matching_window")]
    pub matching_window: usize,
}

fn default_matching_window() -> usize {
    20
}

#[derive(Debug, Serialize)]
pub struct SeedReport {
    pub seed: u64,
    pub method: Method,
    pub interior_breakpoints: Vec<usize>,
    pub breakpoint_report: Option<BreakpointReport>,
    pub segmentation: Option<SegmentationSummary>,
    pub soft_sensing: Option<SoftSensingReport>,
}

#[derive(Debug, Serialize)]
pub struct SoftSensingReport {
    pub target: String,
    pub phase_count: usize,
    pub per_phase_train_rmse: Vec<f64>,
    pub per_phase_val_rmse: Vec<Option<f64>>,
    pub heldout_rmse: f64,
}

#[derive(Debug, Serialize)]
pub struct AggregateReport {
    pub seeds: Vec<u64>,
    pub per_seed_errors: Vec<Vec<Option<usize>>>,
    pub exact_recovery_count: usize,
    pub max_matched_error: Option<usize>,
}

pub fn load_spec(path: &Path) -> Result<ExperimentSpec> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading experiment spec {}", path.display()))?;
    let spec: ExperimentSpec =
        serde_json::from_str(&text).context("experiment spec does not match the schema")?;
    if spec.seeds.is_empty() {
        bail!("experiment spec needs at least one seed");
    }
    Ok(spec)
}

struct SeedData {
    series: MultivariateSeries,
    truth: Option<SyntheticGroundTruth>,
    heldout: Option<MultivariateSeries>,
}

fn materialize(spec: &ExperimentSpec, seed: u64) -> Result<SeedData> {
    match &spec.data {
        DataSpec::Generator {
            generator,
            mode_length,
        } => match generator {
            GeneratorKind::Stationary => {
                let mut cfg = StationaryConfig::default();
                if let Some(m) = mode_length {
                    cfg.mode_length = *m;
                }
                let (series, truth) = generate_stationary_example(&cfg, seed)?;
                let heldout = synthesize_stationary(&truth, seed.wrapping_add(0x5eed))?;
                Ok(SeedData {
                    series,
                    truth: Some(truth),
                    heldout: Some(heldout),
                })
            }
            GeneratorKind::Nonstationary => {
                let mut cfg = NonstationaryConfig::default();
                if let Some(m) = mode_length {
                    cfg.mode_length = *m;
                }
                let (series, truth) = generate_nonstationary_example(&cfg, seed)?;
                let heldout = synthesize_nonstationary(&cfg, seed.wrapping_add(0x5eed))?;
                Ok(SeedData {
                    series,
                    truth: Some(truth),
                    heldout: Some(heldout),
                })
            }
        },
        DataSpec::Csv { csv, truth } => {
            let series = load_csv(csv)?;
            let truth = match truth {
                Some(path) => Some(serde_json::from_reader(std::io::BufReader::new(
                    std::fs::File::open(path)?,
                ))?),
                None => None,
            };
            Ok(SeedData {
                series,
                truth,
                heldout: None,
            })
        }
    }
}

fn run_seed(spec: &ExperimentSpec, seed: u64, dir: &Path) -> Result<SeedReport> {
    std::fs::create_dir_all(dir)?;
    let timer = Instant::now();
    let data = materialize(spec, seed)?;
    let true_breaks = data.truth.as_ref().map(|t| t.true_breakpoints.clone());

    let (interior, segmentation) = match spec.method {
        Method::Cdss => {
            let mut cfg = spec.seg_config.clone().unwrap_or_default();
            cfg.discovery.seed = seed;
            let result = segment(&data.series, &cfg)?;
            let summary = SegmentationSummary::from(&result);
            // distance-trace plot per phase
            let mut plots = Vec::new();
            for phase in &result.phases {
                let points: Vec<(f64, f64)> = phase
                    .trace
                    .iter()
                    .map(|s| ((phase.start + cfg.h_init + s.n * cfg.extension_step) as f64, s.dist))
                    .collect();
                if points.is_empty() {
                    continue;
                }
                plots.push(
                    plot::LinePlot::new(format!("phase {} similarity distance", phase.index))
                        .labels("sample", "distance")
                        .line("Dist", points)
                        .hline(phase.rho, "rho"),
                );
            }
            if !plots.is_empty() {
                write_string_atomic(&dir.join("distances.svg"), &plot::render_document(&plots))?;
            }
            (result.interior_breakpoints(), Some(summary))
        }
        Method::Baseline => {
            let bps =
                baseline_mean_shift_segment(&data.series, spec.baseline.window, spec.baseline.threshold)?;
            (bps, None)
        }
    };

    // series plot with found/true breakpoints
    let mut series_plot = plot::LinePlot::new(format!("series (seed {seed})")).labels("sample", "value");
    for (j, name) in data.series.var_names().iter().enumerate() {
        let pts: Vec<(f64, f64)> = data
            .series
            .values()
            .column(j)
            .iter()
            .enumerate()
            .map(|(t, v)| (t as f64, *v))
            .collect();
        series_plot = series_plot.line(name.clone(), pts);
    }
    for b in &interior {
        series_plot = series_plot.vline(*b as f64, format!("{b}"), false);
    }
    if let Some(tb) = &true_breaks {
        for b in tb {
            series_plot = series_plot.vline(*b as f64, format!("true {b}"), true);
        }
    }
    write_string_atomic(&dir.join("series.svg"), &plot::render_document(&[series_plot]))?;

    let breakpoint_report = true_breaks
        .as_ref()
        .map(|tb| breakpoint_error(tb, &interior, spec.match_radius))
        .transpose()?;

    let soft_sensing = if let Some(ss) = &spec.soft_sensing {
        let mut seg_cfg = spec.seg_config.clone().unwrap_or_default();
        seg_cfg.discovery.seed = seed;
        let mut gcn_cfg = ss.gcn_config.clone().unwrap_or_default();
        gcn_cfg.seed = seed;
        let library = offline_train(&data.series, &ss.target, &seg_cfg, &gcn_cfg)?;
        let heldout = data.heldout.as_ref().unwrap_or(&data.series);
        let preds = online_predict(&library, heldout, ss.matching_window)?;
        let target_col = heldout
            .var_index(&ss.target)
            .context("target variable missing from held-out series")?;
        let y_true: Vec<f64> = preds
            .iter()
            .map(|p| heldout.values()[[p.t, target_col]])
            .collect();
        let y_hat: Vec<f64> = preds.iter().map(|p| p.y_hat).collect();
        // prediction-vs-truth plot
        let pplot = plot::LinePlot::new(format!("{} prediction (seed {seed})", ss.target))
            .labels("sample", &ss.target)
            .line(
                "truth",
                preds.iter().zip(&y_true).map(|(p, v)| (p.t as f64, *v)).collect(),
            )
            .line(
                "predicted",
                preds.iter().map(|p| (p.t as f64, p.y_hat)).collect(),
            );
        write_string_atomic(&dir.join("predictions.svg"), &plot::render_document(&[pplot]))?;
        Some(SoftSensingReport {
            target: ss.target.clone(),
            phase_count: library.phases.len(),
            per_phase_train_rmse: library.phases.iter().map(|p| p.model.train_rmse).collect(),
            per_phase_val_rmse: library.phases.iter().map(|p| p.model.val_rmse).collect(),
            heldout_rmse: rmse(&y_true, &y_hat)?,
        })
    } else {
        None
    };

    let report = SeedReport {
        seed,
        method: spec.method,
        interior_breakpoints: interior,
        breakpoint_report,
        segmentation,
        soft_sensing,
    };
    write_string_atomic(
        &dir.join("report.json"),
        &format!("{}\n", serde_json::to_string_pretty(&report)?),
    )?;
    // wall-clock goes to a side file so report.json stays reproducible
    write_string_atomic(
        &dir.join("timing.json"),
        &format!("{{\n  \"seconds\": {:.3}\n}}\n", timer.elapsed().as_secs_f64()),
    )?;
    Ok(report)
}

/// Execute every seed (in parallel) and write per-seed reports, plots, and an
/// aggregate summary under the spec's output directory.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<AggregateReport> {
    std::fs::create_dir_all(&spec.output_dir)?;
    let reports: Vec<SeedReport> = spec
        .seeds
        .par_iter()
        .map(|&seed| run_seed(spec, seed, &spec.output_dir.join(format!("seed_{seed:04}"))))
        .collect::<Result<Vec<_>>>()?;

    let per_seed_errors: Vec<Vec<Option<usize>>> = reports
        .iter()
        .map(|r| match &r.breakpoint_report {
            Some(rep) => {
                let mut errs = Vec::new();
                let mut matched: std::collections::BTreeMap<usize, usize> = Default::default();
                for m in &rep.matches {
                    matched.insert(m.truth, m.error);
                }
                for t in rep
                    .matches
                    .iter()
                    .map(|m| m.truth)
                    .chain(rep.unmatched_truth.iter().copied())
                    .collect::<std::collections::BTreeSet<_>>()
                {
                    errs.push(matched.get(&t).copied());
                }
                errs
            }
            None => Vec::new(),
        })
        .collect();
    let exact = reports
        .iter()
        .filter(|r| {
            r.breakpoint_report
                .as_ref()
                .map(|rep| rep.unmatched_truth.is_empty() && rep.unmatched_estimate.is_empty())
                .unwrap_or(false)
        })
        .count();
    let max_err = reports
        .iter()
        .filter_map(|r| r.breakpoint_report.as_ref().and_then(|rep| rep.max_error()))
        .max();
    let aggregate = AggregateReport {
        seeds: spec.seeds.clone(),
        per_seed_errors,
        exact_recovery_count: exact,
        max_matched_error: max_err,
    };
    write_string_atomic(
        &spec.output_dir.join("aggregate.json"),
        &format!("{}\n", serde_json::to_string_pretty(&aggregate)?),
    )?;
    Ok(aggregate)
}
