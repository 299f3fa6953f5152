//! Graph-convolutional soft sensor over lag-extended inputs.
//!
//! The temporal causal graph is flattened into one node per (lag position,
//! variable) cell and injected as a symmetrized, self-looped,
//! degree-normalized adjacency. A graph-convolution block mixes the node
//! values of each sample along that adjacency and adds a linear residual
//! projection of the raw input; an MLP head produces the scalar quality
//! prediction.
//!
//! Stacked blocks after the first operate on learned features where no node
//! structure remains, so only the first block applies the adjacency; deeper
//! blocks use identity mixing.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::discovery::TemporalCausalGraph;
use crate::error::{Error, Result};
use crate::opt::Adam;
use crate::series::{compute_stats, NormalizationStats, STD_FLOOR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdjacencyMode {
    Boolean,
    Weighted,
}

/// Prepared adjacency over the `(K+1) * d_in` extended nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphAdjacency {
    /// `D^{-1/2} (A + I) D^{-1/2}` with `A` symmetrized by elementwise max.
    pub normalized: Array2<f64>,
    pub mode: AdjacencyMode,
    pub lag_order: usize,
    pub input_vars: Vec<String>,
}

impl GraphAdjacency {
    pub fn node_count(&self) -> usize {
        self.normalized.nrows()
    }

    /// Identity adjacency (the plain-MLP-equivalent baseline).
    pub fn identity(lag_order: usize, input_vars: Vec<String>) -> Self {
        let n = (lag_order + 1) * input_vars.len();
        Self {
            normalized: Array2::eye(n),
            mode: AdjacencyMode::Boolean,
            lag_order,
            input_vars,
        }
    }
}

/// Build the normalized extended-node adjacency from a temporal causal graph.
///
/// Edges run from node `(k, i)` into instantaneous nodes `(K, j)` with the
/// graph's (thresholded) weights; boolean mode maps surviving edges to 1.
pub fn prepare_adjacency(
    graph: &TemporalCausalGraph,
    input_vars: &[String],
    target_var: &str,
    mode: AdjacencyMode,
) -> Result<GraphAdjacency> {
    if input_vars.iter().any(|v| v == target_var) {
        return Err(Error::invalid(format!(
            "target variable '{target_var}' must not be among the inputs"
        )));
    }
    if input_vars.is_empty() {
        return Err(Error::invalid("no input variables"));
    }
    let mut graph_idx = Vec::with_capacity(input_vars.len());
    for v in input_vars {
        let gi = graph
            .var_names
            .iter()
            .position(|n| n == v)
            .ok_or_else(|| Error::invalid(format!("graph does not cover variable '{v}'")))?;
        graph_idx.push(gi);
    }
    let k = graph.lag_order();
    let d_in = input_vars.len();
    let n = (k + 1) * d_in;
    let mut a = Array2::<f64>::zeros((n, n));
    for slice in 0..=k {
        let thr = graph.thresholds[slice];
        for (ai, &gi) in graph_idx.iter().enumerate() {
            for (bj, &gj) in graph_idx.iter().enumerate() {
                let w = graph.weights[[slice, gi, gj]];
                if w > thr {
                    let src = slice * d_in + ai;
                    let dst = k * d_in + bj;
                    if src != dst {
                        a[[src, dst]] = match mode {
                            AdjacencyMode::Boolean => 1.0,
                            AdjacencyMode::Weighted => w,
                        };
                    }
                }
            }
        }
    }
    // symmetrize, add self-loops, degree-normalize
    let mut sym = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            sym[[i, j]] = a[[i, j]].max(a[[j, i]]);
        }
        sym[[i, i]] += 1.0;
    }
    let mut inv_sqrt_deg = Array1::<f64>::zeros(n);
    for i in 0..n {
        let deg: f64 = sym.row(i).sum();
        inv_sqrt_deg[i] = 1.0 / deg.sqrt();
    }
    let mut normalized = sym;
    for i in 0..n {
        for j in 0..n {
            normalized[[i, j]] *= inv_sqrt_deg[i] * inv_sqrt_deg[j];
        }
    }
    Ok(GraphAdjacency {
        normalized,
        mode,
        lag_order: k,
        input_vars: input_vars.to_vec(),
    })
}

/// Soft sensor hyperparameters. Defaults mirror the reference large-process
/// setup; synthetic tasks use much smaller layer sizes via the config.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TcGcnConfig {
    pub gc_hidden: Vec<usize>,
    pub mlp_hidden: Vec<usize>,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub adjacency_mode: AdjacencyMode,
    /// Chronological fraction held out for loss monitoring.
    pub val_fraction: f64,
    /// Multiplier on the default initialization scale (0 gives a zero init).
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for TcGcnConfig {
    fn default() -> Self {
        Self {
            gc_hidden: vec![512, 256],
            mlp_hidden: vec![512, 128],
            batch_size: 128,
            learning_rate: 1e-3,
            epochs: 2000,
            adjacency_mode: AdjacencyMode::Boolean,
            val_fraction: 0.1,
            init_scale: 1.0,
            seed: 0,
        }
    }
}

impl TcGcnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gc_hidden.is_empty() || self.gc_hidden.iter().any(|&s| s == 0) {
            return Err(Error::invalid("gc_hidden sizes must be positive"));
        }
        if self.mlp_hidden.iter().any(|&s| s == 0) {
            return Err(Error::invalid("mlp_hidden sizes must be positive"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::invalid("batch size and epochs must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::invalid("val_fraction must be in [0, 1)"));
        }
        Ok(())
    }
}

/// One graph-convolution block: `h = (x A) W_enc + x W_res`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcBlock {
    /// `in x out`
    pub w_enc: Array2<f64>,
    /// `in x out`
    pub w_res: Array2<f64>,
    /// Whether this block applies the graph adjacency (first block only).
    pub mixes: bool,
}

/// One MLP layer `h W^T + b`; hidden layers are rectified, the last is linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpLayer {
    /// `out x in`
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Forward pass of a single GC block on a batch.
pub fn gc_block_forward(
    a_hat: ArrayView2<'_, f64>,
    batch: ArrayView2<'_, f64>,
    w_enc: ArrayView2<'_, f64>,
    w_res: ArrayView2<'_, f64>,
) -> Result<Array2<f64>> {
    let n = a_hat.nrows();
    if a_hat.ncols() != n || batch.ncols() != n || w_enc.nrows() != n || w_res.nrows() != n {
        return Err(Error::dims(
            format!("adjacency {n}x{n}, batch *x{n}, weights {n}x*"),
            format!(
                "adjacency {}x{}, batch {}x{}, w_enc {}x{}, w_res {}x{}",
                a_hat.nrows(),
                a_hat.ncols(),
                batch.nrows(),
                batch.ncols(),
                w_enc.nrows(),
                w_enc.ncols(),
                w_res.nrows(),
                w_res.ncols()
            ),
        ));
    }
    if w_enc.ncols() != w_res.ncols() {
        return Err(Error::dims(
            format!("{} output columns", w_enc.ncols()),
            format!("{}", w_res.ncols()),
        ));
    }
    Ok(batch.dot(&a_hat).dot(&w_enc) + batch.dot(&w_res))
}

/// Forward pass of an MLP head; hidden layers rectified, output linear.
pub fn mlp_forward(h0: ArrayView2<'_, f64>, layers: &[MlpLayer]) -> Result<Array1<f64>> {
    if layers.is_empty() {
        return Err(Error::invalid("MLP needs at least the output layer"));
    }
    let mut h = h0.to_owned();
    for (li, layer) in layers.iter().enumerate() {
        if layer.w.ncols() != h.ncols() {
            return Err(Error::dims(
                format!("layer {li} input of {} columns", layer.w.ncols()),
                format!("{}", h.ncols()),
            ));
        }
        let z = h.dot(&layer.w.t()) + &layer.b;
        if li + 1 < layers.len() {
            h = z.mapv(|v| v.max(0.0));
        } else {
            if layer.w.nrows() != 1 {
                return Err(Error::invalid("output layer must produce a scalar"));
            }
            return Ok(z.column(0).to_owned());
        }
    }
    unreachable!()
}

/// Trained soft sensor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TcGcnModel {
    pub adjacency: GraphAdjacency,
    pub blocks: Vec<GcBlock>,
    pub mlp: Vec<MlpLayer>,
    /// Per-extended-column stats used to normalize inputs.
    pub input_stats: NormalizationStats,
    pub target_mean: f64,
    pub target_std: f64,
    pub target_var: String,
    pub train_rmse: f64,
    pub val_rmse: Option<f64>,
    /// Mean normalized batch MSE per epoch (training trace).
    pub epoch_mse: Vec<f64>,
    pub seed: u64,
}

impl TcGcnModel {
    pub fn input_width(&self) -> usize {
        self.adjacency.node_count()
    }

    /// Zero- or random-initialized model (no training), mainly for tests and
    /// as the starting point of [`train_soft_sensor`].
    pub fn init(
        adjacency: GraphAdjacency,
        config: &TcGcnConfig,
        target_var: String,
        input_stats: NormalizationStats,
        target_mean: f64,
        target_std: f64,
    ) -> Result<Self> {
        config.validate()?;
        let n = adjacency.node_count();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut blocks = Vec::new();
        let mut in_dim = n;
        for (bi, &out) in config.gc_hidden.iter().enumerate() {
            // unactivated linear blocks: Xavier-style scale
            let scale = config.init_scale * (2.0 / (in_dim + out) as f64).sqrt();
            blocks.push(GcBlock {
                w_enc: random_matrix(&mut rng, in_dim, out, scale),
                w_res: random_matrix(&mut rng, in_dim, out, scale),
                mixes: bi == 0,
            });
            in_dim = out;
        }
        let mut mlp = Vec::new();
        for &out in &config.mlp_hidden {
            let scale = config.init_scale * (2.0 / in_dim as f64).sqrt();
            mlp.push(MlpLayer {
                w: random_matrix(&mut rng, out, in_dim, scale),
                b: Array1::zeros(out),
            });
            in_dim = out;
        }
        let scale = config.init_scale * (1.0 / in_dim as f64).sqrt();
        mlp.push(MlpLayer {
            w: random_matrix(&mut rng, 1, in_dim, scale),
            b: Array1::zeros(1),
        });
        Ok(Self {
            adjacency,
            blocks,
            mlp,
            input_stats,
            target_mean,
            target_std,
            target_var,
            train_rmse: f64::NAN,
            val_rmse: None,
            epoch_mse: Vec::new(),
            seed: config.seed,
        })
    }

    /// Forward pass on normalized inputs; returns normalized predictions.
    pub fn forward_normalized(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        if x.ncols() != self.input_width() {
            return Err(Error::dims(
                format!("{} extended columns", self.input_width()),
                format!("{}", x.ncols()),
            ));
        }
        let mut h = x.to_owned();
        for block in &self.blocks {
            h = if block.mixes {
                gc_block_forward(
                    self.adjacency.normalized.view(),
                    h.view(),
                    block.w_enc.view(),
                    block.w_res.view(),
                )?
            } else {
                h.dot(&block.w_enc) + h.dot(&block.w_res)
            };
        }
        mlp_forward(h.view(), &self.mlp)
    }

    /// Predict raw-unit targets from raw extended inputs. Pure function.
    pub fn predict(&self, extended_raw: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        let x = self.input_stats.apply(extended_raw)?;
        let y = self.forward_normalized(x.view())?;
        Ok(y.mapv(|v| v * self.target_std + self.target_mean))
    }

    /// Normalized-unit MSE on normalized inputs/targets.
    pub fn mse_loss(&self, x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>) -> Result<f64> {
        let preds = self.forward_normalized(x)?;
        let n = y.len() as f64;
        Ok(preds
            .iter()
            .zip(y.iter())
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / n)
    }

    /// Normalized-unit MSE and its gradient for every parameter (packed).
    pub fn mse_loss_grad(
        &self,
        x: ArrayView2<'_, f64>,
        y: ArrayView1<'_, f64>,
    ) -> Result<(f64, Vec<f64>)> {
        let b_rows = x.nrows();
        // forward with caches
        let mut block_inputs: Vec<Array2<f64>> = Vec::with_capacity(self.blocks.len());
        let mut block_mixed: Vec<Array2<f64>> = Vec::with_capacity(self.blocks.len());
        let mut h = x.to_owned();
        for block in &self.blocks {
            block_inputs.push(h.clone());
            let mixed = if block.mixes {
                h.dot(&self.adjacency.normalized)
            } else {
                h.clone()
            };
            h = mixed.dot(&block.w_enc) + h.dot(&block.w_res);
            block_mixed.push(mixed);
        }
        let mut mlp_inputs: Vec<Array2<f64>> = Vec::with_capacity(self.mlp.len());
        let mut preacts: Vec<Array2<f64>> = Vec::with_capacity(self.mlp.len().saturating_sub(1));
        for (li, layer) in self.mlp.iter().enumerate() {
            mlp_inputs.push(h.clone());
            let z = h.dot(&layer.w.t()) + &layer.b;
            if li + 1 < self.mlp.len() {
                h = z.mapv(|v| v.max(0.0));
                preacts.push(z);
            } else {
                h = z;
            }
        }
        let preds = h.column(0).to_owned();
        let err = &preds - &y;
        let loss = err.iter().map(|e| e * e).sum::<f64>() / b_rows as f64;

        // backward
        let mut grad_blocks: Vec<GcBlock> = self
            .blocks
            .iter()
            .map(|b| GcBlock {
                w_enc: Array2::zeros(b.w_enc.dim()),
                w_res: Array2::zeros(b.w_res.dim()),
                mixes: b.mixes,
            })
            .collect();
        let mut grad_mlp: Vec<MlpLayer> = self
            .mlp
            .iter()
            .map(|l| MlpLayer {
                w: Array2::zeros(l.w.dim()),
                b: Array1::zeros(l.b.len()),
            })
            .collect();

        let dy = err.mapv(|e| 2.0 * e / b_rows as f64);
        // output layer
        let last = self.mlp.len() - 1;
        let d_out = dy.clone().insert_axis(Axis(1)); // B x 1
        grad_mlp[last].w += &d_out.t().dot(&mlp_inputs[last]);
        grad_mlp[last].b += &d_out.sum_axis(Axis(0));
        let mut dh = d_out.dot(&self.mlp[last].w); // B x in

        for li in (0..last).rev() {
            let mut dz = dh;
            for (dzv, zv) in dz.iter_mut().zip(preacts[li].iter()) {
                if *zv <= 0.0 {
                    *dzv = 0.0;
                }
            }
            grad_mlp[li].w += &dz.t().dot(&mlp_inputs[li]);
            grad_mlp[li].b += &dz.sum_axis(Axis(0));
            dh = dz.dot(&self.mlp[li].w);
        }

        for bi in (0..self.blocks.len()).rev() {
            let block = &self.blocks[bi];
            grad_blocks[bi].w_enc += &block_mixed[bi].t().dot(&dh);
            grad_blocks[bi].w_res += &block_inputs[bi].t().dot(&dh);
            if bi > 0 {
                let mut d_in = dh.dot(&block.w_res.t());
                let d_mixed = dh.dot(&block.w_enc.t());
                if block.mixes {
                    d_in += &d_mixed.dot(&self.adjacency.normalized.t());
                } else {
                    d_in += &d_mixed;
                }
                dh = d_in;
            }
        }

        let mut packed = Vec::new();
        for g in &grad_blocks {
            packed.extend(g.w_enc.iter());
            packed.extend(g.w_res.iter());
        }
        for g in &grad_mlp {
            packed.extend(g.w.iter());
            packed.extend(g.b.iter());
        }
        Ok((loss, packed))
    }

    pub fn pack(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.extend(b.w_enc.iter());
            out.extend(b.w_res.iter());
        }
        for l in &self.mlp {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    pub fn unpack(&mut self, packed: &[f64]) {
        let mut it = packed.iter();
        for b in &mut self.blocks {
            for v in b.w_enc.iter_mut() {
                *v = *it.next().expect("packed vector too short");
            }
            for v in b.w_res.iter_mut() {
                *v = *it.next().expect("packed vector too short");
            }
        }
        for l in &mut self.mlp {
            for v in l.w.iter_mut() {
                *v = *it.next().expect("packed vector too short");
            }
            for v in l.b.iter_mut() {
                *v = *it.next().expect("packed vector too short");
            }
        }
        assert!(it.next().is_none(), "packed vector too long");
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    if scale == 0.0 {
        return Array2::zeros((rows, cols));
    }
    let dist = Normal::new(0.0, scale).unwrap();
    Array2::from_shape_fn((rows, cols), |_| dist.sample(rng))
}

/// Train a soft sensor on raw extended inputs and raw scalar targets.
///
/// Inputs and targets are z-scored with chronological-train-split stats;
/// optimization is seeded mini-batch Adam on the mean squared error.
pub fn train_soft_sensor(
    extended_inputs: ArrayView2<'_, f64>,
    targets: ArrayView1<'_, f64>,
    adjacency: GraphAdjacency,
    target_var: &str,
    config: &TcGcnConfig,
) -> Result<TcGcnModel> {
    config.validate()?;
    let n = extended_inputs.nrows();
    if n != targets.len() {
        return Err(Error::dims(
            format!("{n} targets"),
            format!("{}", targets.len()),
        ));
    }
    if n < 2 {
        return Err(Error::invalid("need at least 2 training samples"));
    }
    if extended_inputs.ncols() != adjacency.node_count() {
        return Err(Error::dims(
            format!("{} extended columns", adjacency.node_count()),
            format!("{}", extended_inputs.ncols()),
        ));
    }
    if !extended_inputs.iter().all(|v| v.is_finite()) || !targets.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite {
            context: "soft sensor training data".into(),
        });
    }

    let n_val = ((n as f64) * config.val_fraction).floor() as usize;
    let n_train = n - n_val;
    let train_x = extended_inputs.slice(ndarray::s![..n_train, ..]);
    let train_y = targets.slice(ndarray::s![..n_train]);

    let input_stats = compute_stats(train_x);
    let target_mean = train_y.iter().sum::<f64>() / n_train as f64;
    let target_var_value = train_y
        .iter()
        .map(|v| (v - target_mean) * (v - target_mean))
        .sum::<f64>()
        / n_train as f64;
    let target_std = target_var_value.sqrt().max(STD_FLOOR);

    let x_norm = input_stats.apply(extended_inputs)?;
    let y_norm = targets.mapv(|v| (v - target_mean) / target_std);

    let mut model = TcGcnModel::init(
        adjacency,
        config,
        target_var.to_string(),
        input_stats,
        target_mean,
        target_std,
    )?;
    let mut params = model.pack();
    let mut opt = Adam::new(params.len(), config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x00ba_7c4e);

    let mut order: Vec<usize> = (0..n_train).collect();
    let mut epoch_mse = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let xb = x_norm.select(Axis(0), chunk);
            let yb = Array1::from_iter(chunk.iter().map(|&i| y_norm[i]));
            let (loss, grads) = model.mse_loss_grad(xb.view(), yb.view())?;
            if !loss.is_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite soft-sensor loss at epoch {epoch}"
                )));
            }
            epoch_loss += loss;
            batches += 1;
            opt.step(&mut params, &grads);
            model.unpack(&params);
        }
        epoch_mse.push(epoch_loss / batches.max(1) as f64);
    }
    model.epoch_mse = epoch_mse;

    let train_preds = model.predict(train_x)?;
    model.train_rmse = rmse(
        &train_y.to_owned().to_vec(),
        &train_preds.to_vec(),
    )?;
    if n_val > 0 {
        let val_x = extended_inputs.slice(ndarray::s![n_train.., ..]);
        let val_y = targets.slice(ndarray::s![n_train..]);
        let val_preds = model.predict(val_x)?;
        model.val_rmse = Some(rmse(&val_y.to_owned().to_vec(), &val_preds.to_vec())?);
    }
    Ok(model)
}

/// Root mean squared error.
pub fn rmse(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    if y_true.is_empty() {
        return Err(Error::invalid("rmse of empty input"));
    }
    if y_true.len() != y_pred.len() {
        return Err(Error::dims(
            format!("{} predictions", y_true.len()),
            format!("{}", y_pred.len()),
        ));
    }
    let acc: f64 = y_true
        .iter()
        .zip(y_pred.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((acc / y_true.len() as f64).sqrt())
}
