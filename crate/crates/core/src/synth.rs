//! Synthetic multiphase generators used for validation.
//!
//! Two processes are provided: a stationary one whose modes differ only in
//! their (randomly drawn) temporal causal graphs and mixing weights, and a
//! non-stationary three-variable one driven by a sinusoid whose coupling
//! coefficients change between modes.

use ndarray::{Array2, Array3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::acyclic::topological_order;
use crate::error::{Error, Result};
use crate::series::MultivariateSeries;
use crate::util::derive_seed;

/// Ground truth emitted alongside a generated series.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticGroundTruth {
    pub example: ExampleKind,
    /// Interior breakpoints (sample indices where a new mode starts).
    pub true_breakpoints: Vec<usize>,
    pub lag_order: usize,
    pub var_names: Vec<String>,
    pub modes: Vec<ModeTruth>,
    pub noise: NoiseSpec,
    pub seed: u64,
    pub mode_length: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExampleKind {
    Stationary,
    Nonstationary,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub mean: f64,
    pub std: f64,
}

/// One mode's structure: boolean TCG plus the coefficients of its mechanism.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeTruth {
    /// `(K+1) x d x d` boolean tensor; slice `K` is instantaneous, slice `k`
    /// refers to time `t-(K-k)`. Entry `[k][i][j]` is the edge `i -> j`.
    pub adjacency: Array3<u8>,
    /// Mixing weights for the three nonlinear channels (stationary example).
    pub mixing: Option<[Array3<f64>; 3]>,
    /// Closed-form coefficients (non-stationary example).
    pub coefficients: Option<NonstationaryMode>,
}

/// Coefficients of one non-stationary mode:
/// `y1 = sin(omega * t) + z`, `y2 = y2_on_y1 * y1 + z`,
/// `y3 = y3_on_y1sq * y1^2 + y3_on_y2 * y2 + z`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NonstationaryMode {
    pub omega: f64,
    pub y2_on_y1: f64,
    pub y3_on_y1sq: f64,
    pub y3_on_y2: f64,
}

/// Configuration of the stationary generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StationaryConfig {
    pub dim: usize,
    pub lag_order: usize,
    pub mode_length: usize,
    pub n_modes: usize,
    /// Probability of each permutation-consistent instantaneous edge.
    pub inst_edge_prob: f64,
    /// Probability of each lagged edge (self-lags allowed).
    pub lag_edge_prob: f64,
    /// Mixing weights are drawn uniformly from `[-hi,-lo] U [lo,hi]`.
    pub weight_lo: f64,
    pub weight_hi: f64,
    pub noise_std: f64,
}

impl Default for StationaryConfig {
    fn default() -> Self {
        Self {
            dim: 5,
            lag_order: 3,
            mode_length: 500,
            n_modes: 3,
            inst_edge_prob: 0.3,
            lag_edge_prob: 0.2,
            weight_lo: 0.5,
            weight_hi: 1.0,
            noise_std: 1.0,
        }
    }
}

/// Configuration of the non-stationary generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NonstationaryConfig {
    pub mode_length: usize,
    pub noise_mean: f64,
    pub noise_std: f64,
}

impl Default for NonstationaryConfig {
    fn default() -> Self {
        Self {
            mode_length: 500,
            noise_mean: 0.1,
            noise_std: 0.05,
        }
    }
}

/// Draw the per-mode structures (graphs + mixing weights) for the stationary
/// example. Pure function of `(config, seed)`.
pub fn draw_stationary_truth(cfg: &StationaryConfig, seed: u64) -> Result<SyntheticGroundTruth> {
    if cfg.mode_length <= cfg.lag_order {
        return Err(Error::invalid("mode_length must exceed the lag order"));
    }
    if cfg.dim == 0 || cfg.n_modes == 0 {
        return Err(Error::invalid("dim and n_modes must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    let (d, k) = (cfg.dim, cfg.lag_order);
    let mut modes = Vec::with_capacity(cfg.n_modes);
    for _ in 0..cfg.n_modes {
        let mut adjacency = Array3::<u8>::zeros((k + 1, d, d));
        // random topological order, then forward edges with fixed probability
        let mut perm: Vec<usize> = (0..d).collect();
        for i in (1..d).rev() {
            let j = rng.random_range(0..=i);
            perm.swap(i, j);
        }
        let mut pos = vec![0usize; d];
        for (p, &v) in perm.iter().enumerate() {
            pos[v] = p;
        }
        for i in 0..d {
            for j in 0..d {
                if i != j && pos[i] < pos[j] && rng.random_bool(cfg.inst_edge_prob) {
                    adjacency[[k, i, j]] = 1;
                }
            }
        }
        for lag_slice in 0..k {
            for i in 0..d {
                for j in 0..d {
                    if rng.random_bool(cfg.lag_edge_prob) {
                        adjacency[[lag_slice, i, j]] = 1;
                    }
                }
            }
        }
        let mut mixing = [
            Array3::<f64>::zeros((k + 1, d, d)),
            Array3::<f64>::zeros((k + 1, d, d)),
            Array3::<f64>::zeros((k + 1, d, d)),
        ];
        for slice in 0..=k {
            for i in 0..d {
                for j in 0..d {
                    if adjacency[[slice, i, j]] == 1 {
                        for w in mixing.iter_mut() {
                            let mag = rng.random_range(cfg.weight_lo..cfg.weight_hi);
                            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                            w[[slice, i, j]] = sign * mag;
                        }
                    }
                }
            }
        }
        modes.push(ModeTruth {
            adjacency,
            mixing: Some(mixing),
            coefficients: None,
        });
    }
    let true_breakpoints = (1..cfg.n_modes).map(|m| m * cfg.mode_length).collect();
    Ok(SyntheticGroundTruth {
        example: ExampleKind::Stationary,
        true_breakpoints,
        lag_order: k,
        var_names: (1..=d).map(|i| format!("x{i}")).collect(),
        modes,
        noise: NoiseSpec {
            mean: 0.0,
            std: cfg.noise_std,
        },
        seed,
        mode_length: cfg.mode_length,
    })
}

/// Synthesize a stationary series from a drawn structure. Each value is
/// `tanh(PA . W1) + cos(PA . W2) + sin(PA . W3) + z` with `z ~ N(0, std)`;
/// lag context runs continuously across mode boundaries.
pub fn synthesize_stationary(
    truth: &SyntheticGroundTruth,
    noise_seed: u64,
) -> Result<MultivariateSeries> {
    if truth.example != ExampleKind::Stationary {
        return Err(Error::invalid("ground truth is not from the stationary example"));
    }
    let d = truth.var_names.len();
    let k = truth.lag_order;
    let n_modes = truth.modes.len();
    let total = n_modes * truth.mode_length;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(noise_seed, 2));
    let noise = Normal::new(truth.noise.mean, truth.noise.std.max(0.0))
        .map_err(|e| Error::invalid(format!("noise spec: {e}")))?;

    // topological orders + warm-up history
    let mut orders = Vec::with_capacity(n_modes);
    for (m, mode) in truth.modes.iter().enumerate() {
        let inst = mode.adjacency.index_axis(ndarray::Axis(0), k).mapv(|v| v as f64);
        let order = topological_order(inst.view()).ok_or_else(|| {
            Error::invalid(format!("mode {m} instantaneous graph is cyclic"))
        })?;
        orders.push(order);
    }
    // warm-up rows standing in for times -K..-1
    let history: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..d).map(|_| noise.sample(&mut rng)).collect())
        .collect();

    let mut values = Array2::<f64>::zeros((total, d));
    for (m, mode) in truth.modes.iter().enumerate() {
        let mixing = mode
            .mixing
            .as_ref()
            .ok_or_else(|| Error::invalid("stationary mode lacks mixing weights"))?;
        for t in 0..truth.mode_length {
            let row_idx = m * truth.mode_length + t;
            let mut row = vec![0.0f64; d];
            let z: Vec<f64> = (0..d).map(|_| noise.sample(&mut rng)).collect();
            for &j in &orders[m] {
                let mut acc = [0.0f64; 3];
                for slice in 0..=k {
                    for i in 0..d {
                        if mode.adjacency[[slice, i, j]] == 1 {
                            let v = if slice == k {
                                row[i]
                            } else {
                                // slice holds time t-(K-slice)
                                let back = k - slice;
                                if back <= row_idx {
                                    values[[row_idx - back, i]]
                                } else {
                                    history[k + row_idx - back][i]
                                }
                            };
                            for (c, acc_c) in acc.iter_mut().enumerate() {
                                *acc_c += mixing[c][[slice, i, j]] * v;
                            }
                        }
                    }
                }
                row[j] = acc[0].tanh() + acc[1].cos() + acc[2].sin() + z[j];
            }
            for (i, &v) in row.iter().enumerate() {
                values[[row_idx, i]] = v;
            }
        }
    }
    MultivariateSeries::new(values, truth.var_names.clone())
}

/// Generate the stationary example: draw structures, then synthesize.
pub fn generate_stationary_example(
    cfg: &StationaryConfig,
    seed: u64,
) -> Result<(MultivariateSeries, SyntheticGroundTruth)> {
    let truth = draw_stationary_truth(cfg, seed)?;
    let series = synthesize_stationary(&truth, seed)?;
    Ok((series, truth))
}

/// The three fixed modes of the non-stationary example.
pub fn nonstationary_modes() -> [NonstationaryMode; 3] {
    [
        NonstationaryMode {
            omega: 0.05,
            y2_on_y1: 1.2,
            y3_on_y1sq: 0.5,
            y3_on_y2: 0.0,
        },
        NonstationaryMode {
            omega: 0.05,
            y2_on_y1: 0.6,
            y3_on_y1sq: 0.5,
            y3_on_y2: 0.6,
        },
        NonstationaryMode {
            omega: 0.03,
            y2_on_y1: 0.6,
            y3_on_y1sq: 0.5,
            y3_on_y2: 1.0,
        },
    ]
}

/// Noise-free value of one non-stationary mode at (1-based) step `t`.
pub fn nonstationary_clean(mode: &NonstationaryMode, t: usize) -> [f64; 3] {
    let y1 = (mode.omega * t as f64).sin();
    let y2 = mode.y2_on_y1 * y1;
    let y3 = mode.y3_on_y1sq * y1 * y1 + mode.y3_on_y2 * y2;
    [y1, y2, y3]
}

/// Ground truth of the non-stationary example (fixed structure).
pub fn nonstationary_truth(cfg: &NonstationaryConfig, seed: u64) -> SyntheticGroundTruth {
    let modes = nonstationary_modes()
        .into_iter()
        .map(|c| {
            // instantaneous edges only: y1 -> y2 (when coupled), y1 -> y3, y2 -> y3
            let mut adjacency = Array3::<u8>::zeros((1, 3, 3));
            if c.y2_on_y1 != 0.0 {
                adjacency[[0, 0, 1]] = 1;
            }
            if c.y3_on_y1sq != 0.0 {
                adjacency[[0, 0, 2]] = 1;
            }
            if c.y3_on_y2 != 0.0 {
                adjacency[[0, 1, 2]] = 1;
            }
            ModeTruth {
                adjacency,
                mixing: None,
                coefficients: Some(c),
            }
        })
        .collect();
    SyntheticGroundTruth {
        example: ExampleKind::Nonstationary,
        true_breakpoints: vec![cfg.mode_length, 2 * cfg.mode_length],
        lag_order: 0,
        var_names: vec!["y1".into(), "y2".into(), "y3".into()],
        modes,
        noise: NoiseSpec {
            mean: cfg.noise_mean,
            std: cfg.noise_std,
        },
        seed,
        mode_length: cfg.mode_length,
    }
}

/// Synthesize the non-stationary example. `t` restarts at 1 in each mode.
pub fn synthesize_nonstationary(
    cfg: &NonstationaryConfig,
    noise_seed: u64,
) -> Result<MultivariateSeries> {
    if cfg.mode_length == 0 {
        return Err(Error::invalid("mode_length must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(noise_seed, 3));
    let noise = Normal::new(cfg.noise_mean, cfg.noise_std.max(0.0))
        .map_err(|e| Error::invalid(format!("noise spec: {e}")))?;
    let modes = nonstationary_modes();
    let mut values = Array2::<f64>::zeros((3 * cfg.mode_length, 3));
    for (m, mode) in modes.iter().enumerate() {
        for t in 1..=cfg.mode_length {
            let row = m * cfg.mode_length + (t - 1);
            let z1 = noise.sample(&mut rng);
            let z2 = noise.sample(&mut rng);
            let z3 = noise.sample(&mut rng);
            let y1 = (mode.omega * t as f64).sin() + z1;
            let y2 = mode.y2_on_y1 * y1 + z2;
            let y3 = mode.y3_on_y1sq * y1 * y1 + mode.y3_on_y2 * y2 + z3;
            values[[row, 0]] = y1;
            values[[row, 1]] = y2;
            values[[row, 2]] = y3;
        }
    }
    MultivariateSeries::new(values, vec!["y1".into(), "y2".into(), "y3".into()])
}

/// Generate the non-stationary example with its ground truth.
pub fn generate_nonstationary_example(
    cfg: &NonstationaryConfig,
    seed: u64,
) -> Result<(MultivariateSeries, SyntheticGroundTruth)> {
    let truth = nonstationary_truth(cfg, seed);
    let series = synthesize_nonstationary(cfg, seed)?;
    Ok((series, truth))
}
