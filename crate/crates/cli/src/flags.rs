//! Clap argument groups mirroring the library configs.

use cdss_core::discovery::DiscoveryConfig;
use cdss_core::segmentation::{BreakPlacement, SegmentationConfig, TestNormalization, WindowMode};
use cdss_core::tcgcn::{AdjacencyMode, TcGcnConfig};
use clap::{Args, ValueEnum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TestNormArg {
    Own,
    Train,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BreakAtArg {
    WindowEnd,
    WindowStart,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WindowModeArg {
    Cumulative,
    Sliding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AdjacencyModeArg {
    Bool,
    Weighted,
}

#[derive(Debug, Args)]
pub struct DiscoveryFlags {
    /// Maximum time lag K
    #[arg(long, default_value_t = 3)]
    pub lag: usize,
    /// Convolution kernels per target
    #[arg(long, default_value_t = 6)]
    pub kernels: usize,
    /// Hidden fully-connected width
    #[arg(long, default_value_t = 8)]
    pub hidden_width: usize,
    /// Sparsity weight (applied to every lag position)
    #[arg(long, default_value_t = 0.01)]
    pub lambda1: f64,
    /// Ridge weight
    #[arg(long, default_value_t = 0.02)]
    pub lambda2: f64,
    /// Pruning threshold (applied to every lag position)
    #[arg(long, default_value_t = 0.3)]
    pub threshold: f64,
    #[arg(long, default_value_t = 1e-2)]
    pub step_size: f64,
    #[arg(long, default_value_t = 300)]
    pub steps_per_round: usize,
    #[arg(long, default_value_t = 16)]
    pub max_rounds: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub h_tol: f64,
    #[arg(long, default_value_t = 1.0)]
    pub rho_init: f64,
    #[arg(long, default_value_t = 10.0)]
    pub rho_mult: f64,
    #[arg(long, default_value_t = 1e16)]
    pub rho_max: f64,
    #[arg(long, default_value_t = 0.1)]
    pub init_scale: f64,
    /// Input jitter during training, relative to the residual level
    #[arg(long, default_value_t = 0.2)]
    pub input_jitter: f64,
    /// Per-row gradient cap as a multiple of residual RMS (0 disables)
    #[arg(long, default_value_t = 3.0)]
    pub residual_clip: f64,
    /// Use the literal root-of-mean-of-norms loss convention instead of the
    /// element-wise RMSE
    #[arg(long, default_value_t = false)]
    pub literal_rmse: bool,
}

impl DiscoveryFlags {
    pub fn to_config(&self, seed: u64) -> DiscoveryConfig {
        let mut cfg = DiscoveryConfig::new(self.lag);
        cfg.kernels_per_target = self.kernels;
        cfg.hidden_width = self.hidden_width;
        cfg.lambda1 = vec![self.lambda1; self.lag + 1];
        cfg.lambda2 = self.lambda2;
        cfg.thresholds = vec![self.threshold; self.lag + 1];
        cfg.step_size = self.step_size;
        cfg.steps_per_round = self.steps_per_round;
        cfg.max_rounds = self.max_rounds;
        cfg.h_tol = self.h_tol;
        cfg.rho_init = self.rho_init;
        cfg.rho_mult = self.rho_mult;
        cfg.rho_max = self.rho_max;
        cfg.init_scale = self.init_scale;
        cfg.input_jitter = self.input_jitter;
        cfg.residual_clip = if self.residual_clip > 0.0 {
            Some(self.residual_clip)
        } else {
            None
        };
        cfg.conventional_rmse = !self.literal_rmse;
        cfg.seed = seed;
        cfg
    }
}

#[derive(Debug, Args)]
pub struct SegmentationFlags {
    /// Initial training window length
    #[arg(long, default_value_t = 450)]
    pub h_init: usize,
    /// Extension step w
    #[arg(long = "w", default_value_t = 20)]
    pub extension_step: usize,
    /// Balance coefficient between distances
    #[arg(long, default_value_t = 40.0)]
    pub zeta: f64,
    /// Threshold scale on the training loss
    #[arg(long, default_value_t = 1.4)]
    pub alpha: f64,
    /// Threshold offset
    #[arg(long, default_value_t = 0.05)]
    pub beta: f64,
    /// Maximum breakpoint-list length
    #[arg(long, default_value_t = 10)]
    pub n_max: usize,
    /// Minimum remaining length to keep segmenting
    #[arg(long, default_value_t = 470)]
    pub l_min: usize,
    #[arg(long, value_enum, default_value_t = TestNormArg::Train)]
    pub test_norm: TestNormArg,
    #[arg(long, value_enum, default_value_t = BreakAtArg::WindowEnd)]
    pub break_at: BreakAtArg,
    #[arg(long, value_enum, default_value_t = WindowModeArg::Sliding)]
    pub window_mode: WindowModeArg,
    #[command(flatten)]
    pub discovery: DiscoveryFlags,
}

impl SegmentationFlags {
    pub fn to_config(&self, seed: u64) -> SegmentationConfig {
        SegmentationConfig {
            h_init: self.h_init,
            extension_step: self.extension_step,
            zeta: self.zeta,
            alpha: self.alpha,
            beta: self.beta,
            n_max: self.n_max,
            l_min: self.l_min,
            discovery: self.discovery.to_config(seed),
            test_normalization: match self.test_norm {
                TestNormArg::Own => TestNormalization::OwnStats,
                TestNormArg::Train => TestNormalization::TrainStats,
            },
            break_placement: match self.break_at {
                BreakAtArg::WindowEnd => BreakPlacement::WindowEnd,
                BreakAtArg::WindowStart => BreakPlacement::WindowStart,
            },
            window_mode: match self.window_mode {
                WindowModeArg::Cumulative => WindowMode::Cumulative,
                WindowModeArg::Sliding => WindowMode::Sliding,
            },
        }
    }
}

#[derive(Debug, Args)]
pub struct TcGcnFlags {
    /// Graph-convolution hidden sizes
    #[arg(long, value_delimiter = ',', default_values_t = vec![512, 256])]
    pub gc_hidden: Vec<usize>,
    /// MLP hidden sizes
    #[arg(long, value_delimiter = ',', default_values_t = vec![512, 128])]
    pub mlp_hidden: Vec<usize>,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 2000)]
    pub epochs: usize,
    #[arg(long, value_enum, default_value_t = AdjacencyModeArg::Bool)]
    pub adjacency_mode: AdjacencyModeArg,
    /// Chronological validation fraction
    #[arg(long, default_value_t = 0.1)]
    pub val_fraction: f64,
    #[arg(long = "gcn-init-scale", default_value_t = 1.0)]
    pub gcn_init_scale: f64,
}

impl TcGcnFlags {
    pub fn to_config(&self, seed: u64) -> TcGcnConfig {
        TcGcnConfig {
            gc_hidden: self.gc_hidden.clone(),
            mlp_hidden: self.mlp_hidden.clone(),
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            adjacency_mode: match self.adjacency_mode {
                AdjacencyModeArg::Bool => AdjacencyMode::Boolean,
                AdjacencyModeArg::Weighted => AdjacencyMode::Weighted,
            },
            val_fraction: self.val_fraction,
            init_scale: self.gcn_init_scale,
            seed,
        }
    }
}
