//! Phase segmentation by causal-mechanism drift.
//!
//! A phase starts with a discovery model trained on an initial window. The
//! phase then grows in steps of `w` samples while the similarity distance of
//! the incoming samples stays below the phase threshold; the first failing
//! window ends the phase and its end becomes the next breakpoint.

use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::discovery::{
    model_test_rmse, train_discovery, CnnEnsemble, DiscoveryConfig, TemporalCausalGraph,
};
use crate::error::{Error, Result};
use crate::series::{
    lag_extend_matrix, normalize_window, window_mean, MultivariateSeries, NormalizationStats,
};
use crate::util::derive_seed;

/// How a test window is normalized before computing its prediction loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestNormalization {
    /// Normalize by the test window's own mean and std (mirrors the training
    /// window's treatment; the default).
    OwnStats,
    /// Normalize by the phase's training-window stats.
    TrainStats,
}

/// Where the breakpoint lands relative to the first failing window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BreakPlacement {
    /// End of the failing window (the failing window stays in the old phase).
    WindowEnd,
    /// Start of the failing extension step.
    WindowStart,
}

/// Whether the test window accumulates from the phase start or slides.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowMode {
    /// Cumulative window covering all samples since the training window.
    Cumulative,
    /// Only the latest `w` samples (documented extension, off by default).
    Sliding,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentationConfig {
    /// Initial training window length.
    pub h_init: usize,
    /// Extension step `w`.
    pub extension_step: usize,
    /// Balance coefficient between the two distance terms.
    pub zeta: f64,
    /// Threshold scale on the training loss.
    pub alpha: f64,
    /// Threshold offset.
    pub beta: f64,
    /// Maximum breakpoint-list length (including the leading 0).
    pub n_max: usize,
    /// Minimum remaining length to keep segmenting.
    pub l_min: usize,
    pub discovery: DiscoveryConfig,
    pub test_normalization: TestNormalization,
    pub break_placement: BreakPlacement,
    pub window_mode: WindowMode,
}

impl SegmentationConfig {
    pub fn lag_order(&self) -> usize {
        self.discovery.lag_order
    }

    pub fn validate(&self) -> Result<()> {
        self.discovery.validate()?;
        if self.h_init <= self.discovery.lag_order {
            return Err(Error::invalid("h_init must exceed the lag order"));
        }
        if self.extension_step < self.discovery.lag_order + 2 {
            return Err(Error::invalid(
                "extension step must allow at least one lag-extended test row (w >= K+2)",
            ));
        }
        if !(self.zeta > 0.0) {
            return Err(Error::invalid("zeta must be positive"));
        }
        if !(self.alpha > 0.0) || !(self.beta >= 0.0) {
            return Err(Error::invalid("alpha must be positive and beta nonnegative"));
        }
        if self.n_max < 1 {
            return Err(Error::invalid("n_max must be at least 1"));
        }
        if self.l_min < self.h_init + self.extension_step {
            return Err(Error::invalid("l_min must be at least h_init + w"));
        }
        Ok(())
    }

    /// Discovery config with a phase-specific seed stream.
    fn discovery_for_phase(&self, phase: usize) -> DiscoveryConfig {
        let mut cfg = self.discovery.clone();
        cfg.seed = derive_seed(self.discovery.seed, phase as u64);
        cfg
    }
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            h_init: 450,
            extension_step: 20,
            zeta: 40.0,
            alpha: 1.4,
            beta: 0.05,
            n_max: 10,
            l_min: 470,
            discovery: DiscoveryConfig::default(),
            test_normalization: TestNormalization::TrainStats,
            break_placement: BreakPlacement::WindowEnd,
            window_mode: WindowMode::Sliding,
        }
    }
}

/// One distance evaluation during phase extension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceSample {
    pub n: usize,
    pub dist_c: f64,
    pub dist_m: f64,
    pub dist: f64,
}

/// A discovered phase with everything needed to reuse its mechanism.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub index: usize,
    pub start: usize,
    pub end: usize,
    pub graph: TemporalCausalGraph,
    pub predictor: CnnEnsemble,
    pub train_stats: NormalizationStats,
    pub l_train: f64,
    pub rho: f64,
    pub trace: Vec<DistanceSample>,
    pub h_value: f64,
    pub h_converged: bool,
    pub terminal: bool,
}

/// Ordered breakpoints with aligned graphs and full phase records.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentationResult {
    /// Starts with 0; strictly increasing; last entry at most the series
    /// length.
    pub breakpoints: Vec<usize>,
    /// Aligned with `breakpoints`; the first entry is empty.
    pub graphs: Vec<Option<TemporalCausalGraph>>,
    pub phases: Vec<PhaseRecord>,
    /// Set once the final phase has been extended to the end of the series.
    pub terminal: bool,
    pub series_len: usize,
}

impl SegmentationResult {
    pub fn new(series_len: usize) -> Self {
        Self {
            breakpoints: vec![0],
            graphs: vec![None],
            phases: Vec::new(),
            terminal: false,
            series_len,
        }
    }

    /// Breakpoints excluding the leading 0 and a terminal end-of-series entry.
    pub fn interior_breakpoints(&self) -> Vec<usize> {
        self.breakpoints
            .iter()
            .copied()
            .filter(|&b| b != 0 && b != self.series_len)
            .collect()
    }
}

/// Lightweight serializable view (no predictors) for JSON reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentationSummary {
    pub breakpoints: Vec<usize>,
    pub interior_breakpoints: Vec<usize>,
    pub terminal: bool,
    pub series_len: usize,
    pub phases: Vec<PhaseSummary>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub index: usize,
    pub start: usize,
    pub end: usize,
    pub l_train: f64,
    pub rho: f64,
    pub h_value: f64,
    pub h_converged: bool,
    pub terminal: bool,
    pub trace: Vec<DistanceSample>,
}

impl From<&SegmentationResult> for SegmentationSummary {
    fn from(r: &SegmentationResult) -> Self {
        Self {
            breakpoints: r.breakpoints.clone(),
            interior_breakpoints: r.interior_breakpoints(),
            terminal: r.terminal,
            series_len: r.series_len,
            phases: r
                .phases
                .iter()
                .map(|p| PhaseSummary {
                    index: p.index,
                    start: p.start,
                    end: p.end,
                    l_train: p.l_train,
                    rho: p.rho,
                    h_value: p.h_value,
                    h_converged: p.h_converged,
                    terminal: p.terminal,
                    trace: p.trace.clone(),
                })
                .collect(),
        }
    }
}

/// Prediction loss of a phase's predictor on a raw test window.
///
/// The window is normalized (by its own stats by default), lag-extended, and
/// scored with the same norm-averaging convention as the training loss.
pub fn causal_similarity_distance(
    predictor: &CnnEnsemble,
    train_stats: &NormalizationStats,
    window_raw: ArrayView2<'_, f64>,
    config: &SegmentationConfig,
) -> Result<f64> {
    let k = config.lag_order();
    if window_raw.nrows() < (k + 1).max(2) {
        return Err(Error::invalid(format!(
            "test window of {} rows cannot form a lag-extended row with K={k}",
            window_raw.nrows()
        )));
    }
    let (normed, _) = match config.test_normalization {
        TestNormalization::OwnStats => normalize_window(window_raw, None)?,
        TestNormalization::TrainStats => normalize_window(window_raw, Some(train_stats))?,
    };
    let extended = lag_extend_matrix(normed.view(), k)?;
    model_test_rmse(predictor, &extended, config.discovery.conventional_rmse)
}

/// Manhattan distance between raw window means.
pub fn stable_similarity_distance(
    mu_train: ArrayView1<'_, f64>,
    mu_test: ArrayView1<'_, f64>,
) -> Result<f64> {
    if mu_train.len() != mu_test.len() {
        return Err(Error::dims(
            format!("mean vector of length {}", mu_train.len()),
            format!("{}", mu_test.len()),
        ));
    }
    Ok(mu_train
        .iter()
        .zip(mu_test.iter())
        .map(|(a, b)| (a - b).abs())
        .sum())
}

/// `Dist = Dist_c + Dist_m / zeta`.
pub fn similarity_distance(dist_c: f64, dist_m: f64, zeta: f64) -> f64 {
    dist_c + dist_m / zeta
}

/// `rho = alpha * L_train + beta`.
pub fn phase_threshold(l_train: f64, alpha: f64, beta: f64) -> f64 {
    alpha * l_train + beta
}

/// Grow one phase from the last breakpoint and append its end.
///
/// Trains a discovery model on the initial window, extends in steps of `w`
/// until the similarity distance reaches the phase threshold or the series
/// ends; in the latter case the phase is extended to the series end and
/// marked terminal.
pub fn add_new_breakpoint(
    series: &MultivariateSeries,
    result: &mut SegmentationResult,
    config: &SegmentationConfig,
) -> Result<()> {
    let t_len = series.len();
    let b_prev = *result
        .breakpoints
        .last()
        .ok_or_else(|| Error::invalid("breakpoint list must not be empty"))?;
    let phase_index = result.phases.len() + 1;

    // Not enough room for the initial window plus one extension: extend the
    // final phase to the series end instead of opening a new one.
    if b_prev + config.h_init + config.extension_step > t_len {
        let last_phase = result
            .phases
            .last_mut()
            .ok_or_else(|| Error::invalid("series shorter than h_init + w"))?;
        last_phase.end = t_len;
        last_phase.terminal = true;
        *result.breakpoints.last_mut().unwrap() = t_len;
        result.terminal = true;
        return Ok(());
    }

    let train_window = series.window(b_prev, b_prev + config.h_init)?;
    let (normed, train_stats) = normalize_window(train_window, None)?;
    let discovery_cfg = config.discovery_for_phase(phase_index);
    let outcome = train_discovery(normed.view(), series.var_names(), &discovery_cfg)
        .map_err(|e| e.in_phase(phase_index))?;
    let rho = phase_threshold(outcome.l_train, config.alpha, config.beta);

    let mut trace = Vec::new();
    let mut n = 1usize;
    let mut crossed = false;
    while b_prev + config.h_init + n * config.extension_step < t_len {
        let test_start = match config.window_mode {
            WindowMode::Cumulative => b_prev + config.h_init,
            WindowMode::Sliding => b_prev + config.h_init + (n - 1) * config.extension_step,
        };
        let test_end = b_prev + config.h_init + n * config.extension_step;
        let window = series.window(test_start, test_end)?;
        let dist_c = causal_similarity_distance(&outcome.model, &train_stats, window, config)
            .map_err(|e| e.in_phase(phase_index))?;
        let mu_test = window_mean(window)?;
        let dist_m = stable_similarity_distance(train_stats.mean.view(), mu_test.view())?;
        let dist = similarity_distance(dist_c, dist_m, config.zeta);
        trace.push(DistanceSample {
            n,
            dist_c,
            dist_m,
            dist,
        });
        if dist < rho {
            n += 1;
        } else {
            crossed = true;
            break;
        }
    }

    let (b_new, terminal) = if crossed {
        let b = match config.break_placement {
            BreakPlacement::WindowEnd => b_prev + config.h_init + n * config.extension_step,
            BreakPlacement::WindowStart => {
                b_prev + config.h_init + (n - 1) * config.extension_step
            }
        };
        (b, false)
    } else {
        (t_len, true)
    };

    result.phases.push(PhaseRecord {
        index: phase_index,
        start: b_prev,
        end: b_new,
        graph: outcome.graph.clone(),
        predictor: outcome.model,
        train_stats,
        l_train: outcome.l_train,
        rho,
        trace,
        h_value: outcome.h_value,
        h_converged: outcome.h_converged,
        terminal,
    });
    result.breakpoints.push(b_new);
    result.graphs.push(Some(outcome.graph));
    result.terminal = terminal;
    Ok(())
}

/// Run phase discovery over the whole series.
pub fn segment(series: &MultivariateSeries, config: &SegmentationConfig) -> Result<SegmentationResult> {
    config.validate()?;
    let t_len = series.len();
    if t_len < config.h_init + config.extension_step {
        return Err(Error::invalid(format!(
            "series of length {t_len} is shorter than h_init + w = {}",
            config.h_init + config.extension_step
        )));
    }
    let mut result = SegmentationResult::new(t_len);
    while result.breakpoints.len() < config.n_max && !result.terminal {
        add_new_breakpoint(series, &mut result, config)?;
        if result.breakpoints.last().unwrap() + config.l_min > t_len {
            break;
        }
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array1, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn similarity_distance_examples() {
        assert_abs_diff_eq!(similarity_distance(0.5, 3.0, 10.0), 0.8, epsilon = 1e-15);
        assert_eq!(similarity_distance(0.7, 0.0, 3.0), 0.7);
        // monotone in zeta
        let mut prev = similarity_distance(0.4, 2.0, 1.0);
        for zeta in [2.0, 5.0, 50.0, 1e6] {
            let d = similarity_distance(0.4, 2.0, zeta);
            assert!(d <= prev);
            prev = d;
        }
        assert!((prev - 0.4).abs() < 1e-5);
    }

    #[test]
    fn phase_threshold_examples() {
        assert_abs_diff_eq!(phase_threshold(0.1, 2.0, 1.2), 1.4, epsilon = 1e-15);
        assert_eq!(phase_threshold(0.9, 0.0, 0.5), 0.5);
        assert_eq!(phase_threshold(0.37, 1.0, 0.0), 0.37);
    }

    #[test]
    fn stable_distance_examples() {
        let a = array![0.0, 0.0];
        let b = array![1.0, -2.0];
        assert_eq!(stable_similarity_distance(a.view(), b.view()).unwrap(), 3.0);
        assert_eq!(stable_similarity_distance(a.view(), a.view()).unwrap(), 0.0);
        let c = array![1.0, 2.0, 3.0];
        assert!(stable_similarity_distance(a.view(), c.view()).is_err());
    }

    #[test]
    fn stable_distance_matches_coordinatewise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let normal = Normal::new(0.0, 2.0).unwrap();
        for _ in 0..50 {
            let a: Array1<f64> = Array1::from_iter((0..6).map(|_| normal.sample(&mut rng)));
            let b: Array1<f64> = Array1::from_iter((0..6).map(|_| normal.sample(&mut rng)));
            let mut oracle = 0.0;
            for i in 0..6 {
                oracle += (a[i] - b[i]).abs();
            }
            assert_abs_diff_eq!(
                stable_similarity_distance(a.view(), b.view()).unwrap(),
                oracle,
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn single_row_error_vector_gives_sqrt_5() {
        // a predictor with zero parameters predicts 0; feed it one extended
        // row whose instantaneous values are (-3, -4): error norm 5, mean 5,
        // sqrt(5).
        let model = CnnEnsemble::zeros(2, 0, 2, 3, vec!["a".into(), "b".into()]);
        let rows = lag_extend_matrix(array![[-3.0, -4.0]].view(), 0).unwrap();
        let d = model_test_rmse(&model, &rows, false).unwrap();
        assert_abs_diff_eq!(d, 5.0f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn config_validation() {
        let mut cfg = SegmentationConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.l_min = 10;
        assert!(cfg.validate().is_err());
        let mut cfg = SegmentationConfig::default();
        cfg.zeta = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = SegmentationConfig::default();
        cfg.extension_step = cfg.discovery.lag_order + 1;
        assert!(cfg.validate().is_err());
    }

    fn quick_config() -> SegmentationConfig {
        let mut discovery = DiscoveryConfig::new(1);
        discovery.kernels_per_target = 4;
        discovery.hidden_width = 6;
        discovery.steps_per_round = 100;
        discovery.max_rounds = 6;
        SegmentationConfig {
            h_init: 60,
            extension_step: 10,
            zeta: 10.0,
            alpha: 2.0,
            beta: 0.2,
            n_max: 10,
            l_min: 80,
            discovery,
            test_normalization: TestNormalization::OwnStats,
            break_placement: BreakPlacement::WindowEnd,
            window_mode: WindowMode::Cumulative,
        }
    }

    fn noise_series(len: usize, dim: usize, seed: u64) -> MultivariateSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let values = Array2::from_shape_fn((len, dim), |_| normal.sample(&mut rng));
        let names = (1..=dim).map(|i| format!("v{i}")).collect();
        MultivariateSeries::new(values, names).unwrap()
    }

    #[test]
    fn unreachable_threshold_emits_no_interior_breakpoints() {
        let series = noise_series(300, 3, 5);
        let mut cfg = quick_config();
        cfg.beta = 1e9;
        let result = segment(&series, &cfg).unwrap();
        assert!(result.interior_breakpoints().is_empty(), "{:?}", result.breakpoints);
        assert!(result.terminal);
        assert_eq!(*result.breakpoints.last().unwrap(), 300);
        assert_eq!(result.phases.len(), 1);
    }

    #[test]
    fn n_max_one_keeps_only_the_origin() {
        let series = noise_series(200, 2, 6);
        let mut cfg = quick_config();
        cfg.n_max = 1;
        let result = segment(&series, &cfg).unwrap();
        assert_eq!(result.breakpoints, vec![0]);
        assert!(result.phases.is_empty());
    }

    #[test]
    fn breakpoints_strictly_increasing_and_aligned() {
        let series = noise_series(400, 3, 7);
        let mut cfg = quick_config();
        cfg.beta = 0.05;
        cfg.alpha = 1.0;
        let result = segment(&series, &cfg).unwrap();
        for w in result.breakpoints.windows(2) {
            assert!(w[0] < w[1], "breakpoints {:?}", result.breakpoints);
        }
        assert_eq!(result.breakpoints.len(), result.graphs.len());
        assert!(result.graphs[0].is_none());
        assert!(*result.breakpoints.last().unwrap() <= 400);
    }

    #[test]
    fn trace_entries_below_threshold_until_the_last() {
        let series = noise_series(400, 3, 8);
        let mut cfg = quick_config();
        cfg.beta = 0.05;
        cfg.alpha = 1.0;
        let result = segment(&series, &cfg).unwrap();
        for phase in &result.phases {
            assert_abs_diff_eq!(
                phase.rho,
                cfg.alpha * phase.l_train + cfg.beta,
                epsilon = 0.0
            );
            for (i, s) in phase.trace.iter().enumerate() {
                if i + 1 < phase.trace.len() || phase.terminal {
                    assert!(s.dist < phase.rho, "phase {} step {i}", phase.index);
                } else {
                    assert!(s.dist >= phase.rho, "phase {} final step", phase.index);
                }
                assert!(s.dist_c >= 0.0 && s.dist_m >= 0.0);
            }
        }
    }

    #[test]
    fn scaling_series_preserves_dist_c_and_scales_dist_m() {
        let series = noise_series(150, 3, 9);
        let cfg = quick_config();
        let train = series.window(0, 60).unwrap();
        let (normed, stats) = normalize_window(train, None).unwrap();
        let disc = cfg.discovery.clone();
        let outcome = train_discovery(normed.view(), series.var_names(), &disc).unwrap();
        let test = series.window(60, 100).unwrap();
        let dist_c = causal_similarity_distance(&outcome.model, &stats, test, &cfg).unwrap();
        let mu_test = window_mean(test).unwrap();
        let dist_m = stable_similarity_distance(stats.mean.view(), mu_test.view()).unwrap();

        let scaled_values = series.values().mapv(|v| 3.5 * v);
        let scaled =
            MultivariateSeries::new(scaled_values, series.var_names().to_vec()).unwrap();
        let s_train = scaled.window(0, 60).unwrap();
        let (_, s_stats) = normalize_window(s_train, None).unwrap();
        let s_test = scaled.window(60, 100).unwrap();
        let s_dist_c =
            causal_similarity_distance(&outcome.model, &s_stats, s_test, &cfg).unwrap();
        let s_mu = window_mean(s_test).unwrap();
        let s_dist_m = stable_similarity_distance(s_stats.mean.view(), s_mu.view()).unwrap();

        assert_abs_diff_eq!(dist_c, s_dist_c, epsilon = 1e-9);
        assert_abs_diff_eq!(s_dist_m, 3.5 * dist_m, epsilon = 1e-9);
    }

    #[test]
    fn test_window_too_short_rejected() {
        let model = CnnEnsemble::zeros(2, 3, 2, 3, vec!["a".into(), "b".into()]);
        let stats = crate::series::compute_stats(array![[0.0, 0.0], [1.0, 1.0]].view());
        let cfg = SegmentationConfig::default();
        let window = array![[0.1, 0.2], [0.3, 0.4], [0.5, 0.6]];
        let err = causal_similarity_distance(&model, &stats, window.view(), &cfg).unwrap_err();
        assert!(err.to_string().contains("K=3"), "{err}");
    }
}
