//! Per-target convolutional predictors.
//!
//! One predictor per variable: `m` kernels spanning all `(K+1) x d` input
//! cells (a single convolution position, stride 1, no padding), a rectified
//! hidden layer, and a linear output. The kernel column for the target's own
//! instantaneous value is hard-masked to zero; masked entries are excluded
//! from the packed parameter vector, so no optimizer step can touch them.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.rotate_left(23);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Parameters of one target's predictor (also reused as its gradient buffer).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetNet {
    /// `m x (K+1)*d` kernel weights; the masked column is always zero.
    pub kernels: Array2<f64>,
    pub kernel_bias: Array1<f64>,
    /// `hidden x m`
    pub w_hidden: Array2<f64>,
    pub b_hidden: Array1<f64>,
    pub w_out: Array1<f64>,
    pub b_out: f64,
}

impl TargetNet {
    pub fn zeros(m: usize, n_in: usize, hidden: usize) -> Self {
        Self {
            kernels: Array2::zeros((m, n_in)),
            kernel_bias: Array1::zeros(m),
            w_hidden: Array2::zeros((hidden, m)),
            b_hidden: Array1::zeros(hidden),
            w_out: Array1::zeros(hidden),
            b_out: 0.0,
        }
    }

    pub fn param_count(&self, masked_cols: usize) -> usize {
        let (m, n_in) = self.kernels.dim();
        let hidden = self.w_hidden.nrows();
        m * (n_in - masked_cols) + m + hidden * m + hidden + hidden + 1
    }

    /// Forward pass for a batch of extended rows; returns per-layer values.
    fn forward_batch(&self, x: ArrayView2<'_, f64>) -> BatchCache {
        let u = x.dot(&self.kernels.t()) + &self.kernel_bias;
        let a = u.mapv(|v| v.max(0.0));
        let v = a.dot(&self.w_hidden.t()) + &self.b_hidden;
        let s = v.mapv(|z| z.max(0.0));
        let y = s.dot(&self.w_out) + self.b_out;
        BatchCache { u, a, v, s, y }
    }

    pub fn predict_batch(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        self.forward_batch(x).y
    }

    pub fn predict_one(&self, x: ArrayView1<'_, f64>) -> f64 {
        let row = x.insert_axis(Axis(0));
        self.predict_batch(row)[0]
    }

    /// Sum of squared prediction errors plus data-term gradients.
    ///
    /// `dy_scale` multiplies the raw residual gradient `2 e`, so passing
    /// `1 / n_rows` yields the gradient of the mean squared-error sum.
    ///
    /// `residual_clip` optionally bounds each row's gradient contribution at
    /// `clip * rms(e)` (Huber-style), which keeps a handful of alien rows
    /// from dominating a step; the returned sum of squares is unweighted.
    pub fn sumsq_and_grad(
        &self,
        x: ArrayView2<'_, f64>,
        targets: ArrayView1<'_, f64>,
        dy_scale: f64,
        residual_clip: Option<f64>,
        grad: &mut TargetNet,
    ) -> f64 {
        let cache = self.forward_batch(x);
        let err = &cache.y - &targets;
        let sumsq = err.iter().map(|e| e * e).sum::<f64>();

        let cap = residual_clip.map(|mult| {
            let rms = (sumsq / err.len().max(1) as f64).sqrt();
            mult * rms.max(1e-12)
        });
        let dy = err.mapv(|e| {
            let e = match cap {
                Some(c) => e.clamp(-c, c),
                None => e,
            };
            2.0 * e * dy_scale
        });
        grad.b_out += dy.sum();
        grad.w_out += &cache.s.t().dot(&dy);

        // dS = dy (x) w_out, masked by the hidden rectifier
        let mut dv = Array2::zeros(cache.v.dim());
        for (r, &dyr) in dy.iter().enumerate() {
            if dyr != 0.0 {
                for h in 0..self.w_out.len() {
                    if cache.v[[r, h]] > 0.0 {
                        dv[[r, h]] = dyr * self.w_out[h];
                    }
                }
            }
        }
        grad.w_hidden += &dv.t().dot(&cache.a);
        grad.b_hidden += &dv.sum_axis(Axis(0));

        let da = dv.dot(&self.w_hidden);
        let mut du = da;
        for (duv, uv) in du.iter_mut().zip(cache.u.iter()) {
            if *uv <= 0.0 {
                *duv = 0.0;
            }
        }
        grad.kernels += &du.t().dot(&x);
        grad.kernel_bias += &du.sum_axis(Axis(0));
        sumsq
    }
}

struct BatchCache {
    u: Array2<f64>,
    a: Array2<f64>,
    v: Array2<f64>,
    s: Array2<f64>,
    y: Array1<f64>,
}

/// The ensemble of `d` per-target predictors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnEnsemble {
    pub targets: Vec<TargetNet>,
    pub dim: usize,
    pub lag_order: usize,
    pub var_names: Vec<String>,
}

impl CnnEnsemble {
    pub fn input_width(&self) -> usize {
        (self.lag_order + 1) * self.dim
    }

    /// Column of the instantaneous value of variable `j`.
    pub fn masked_col(&self, j: usize) -> usize {
        self.lag_order * self.dim + j
    }

    pub fn zeros(
        dim: usize,
        lag_order: usize,
        kernels: usize,
        hidden: usize,
        var_names: Vec<String>,
    ) -> Self {
        let n_in = (lag_order + 1) * dim;
        Self {
            targets: (0..dim).map(|_| TargetNet::zeros(kernels, n_in, hidden)).collect(),
            dim,
            lag_order,
            var_names,
        }
    }

    /// Seeded random initialization.
    ///
    /// Kernel columns are seeded per (target, source) variable pair and the
    /// dense layers per target, so relabeling variables permutes the
    /// initialization consistently.
    pub fn random(
        dim: usize,
        lag_order: usize,
        kernels: usize,
        hidden: usize,
        var_names: Vec<String>,
        seed: u64,
        init_scale: f64,
    ) -> Self {
        let mut model = Self::zeros(dim, lag_order, kernels, hidden, var_names);
        let kernel_dist = Normal::new(0.0, init_scale.max(1e-12)).unwrap();
        let hidden_dist = Normal::new(0.0, 1.0 / (kernels as f64).sqrt()).unwrap();
        let out_dist = Normal::new(0.0, 1.0 / (hidden as f64).sqrt()).unwrap();
        for j in 0..dim {
            let name_j = fnv1a(model.var_names[j].as_bytes());
            for i in 0..dim {
                let name_i = fnv1a(model.var_names[i].as_bytes());
                let mut rng = ChaCha8Rng::seed_from_u64(mix(mix(seed, name_j), name_i));
                for c in 0..kernels {
                    for k in 0..=lag_order {
                        let col = k * dim + i;
                        let v = kernel_dist.sample(&mut rng);
                        if col != model.masked_col(j) {
                            model.targets[j].kernels[[c, col]] = v;
                        }
                    }
                }
            }
            let mut rng = ChaCha8Rng::seed_from_u64(mix(seed ^ 0x5ca1ab1e, name_j));
            for w in model.targets[j].w_hidden.iter_mut() {
                *w = hidden_dist.sample(&mut rng);
            }
            for w in model.targets[j].w_out.iter_mut() {
                *w = out_dist.sample(&mut rng);
            }
            // small positive biases keep rectifier preactivations off the
            // exact kink (zero bias parks every all-dead-kernel row at 0.0)
            model.targets[j].kernel_bias.fill(0.01);
            model.targets[j].b_hidden.fill(0.01);
        }
        model
    }

    fn check_width(&self, got: usize) -> Result<()> {
        if got != self.input_width() {
            return Err(Error::dims(
                format!("{} extended columns", self.input_width()),
                format!("{got}"),
            ));
        }
        Ok(())
    }

    /// Predict every variable's instantaneous value from one extended row.
    pub fn predict_conditional(&self, row: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        self.check_width(row.len())?;
        Ok(Array1::from_iter(
            self.targets.iter().map(|t| t.predict_one(row)),
        ))
    }

    /// Batched predictions: one column per target variable.
    pub fn predict_rows(&self, rows: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_width(rows.ncols())?;
        let mut out = Array2::zeros((rows.nrows(), self.dim));
        for (j, t) in self.targets.iter().enumerate() {
            let y = t.predict_batch(rows);
            out.column_mut(j).assign(&y);
        }
        Ok(out)
    }

    /// `d x d` instantaneous adjacency from kernel-column norms.
    pub fn instantaneous_adjacency(&self) -> Array2<f64> {
        let mut w = Array2::zeros((self.dim, self.dim));
        for j in 0..self.dim {
            for i in 0..self.dim {
                let col = self.lag_order * self.dim + i;
                let norm = self.targets[j]
                    .kernels
                    .column(col)
                    .iter()
                    .map(|v| v * v)
                    .sum::<f64>()
                    .sqrt();
                w[[i, j]] = norm;
            }
        }
        w
    }

    /// Pack one target's free parameters (masked kernel column excluded).
    pub fn pack_target(&self, j: usize) -> Vec<f64> {
        let t = &self.targets[j];
        let masked = self.masked_col(j);
        let mut out = Vec::with_capacity(t.param_count(1));
        for row in t.kernels.rows() {
            for (c, v) in row.iter().enumerate() {
                if c != masked {
                    out.push(*v);
                }
            }
        }
        out.extend(t.kernel_bias.iter());
        out.extend(t.w_hidden.iter());
        out.extend(t.b_hidden.iter());
        out.extend(t.w_out.iter());
        out.push(t.b_out);
        out
    }

    pub fn unpack_target(&mut self, j: usize, packed: &[f64]) {
        let masked = self.masked_col(j);
        let t = &mut self.targets[j];
        let mut it = packed.iter();
        for mut row in t.kernels.rows_mut() {
            for (c, v) in row.iter_mut().enumerate() {
                if c != masked {
                    *v = *it.next().expect("packed vector too short");
                }
            }
        }
        for v in t.kernel_bias.iter_mut() {
            *v = *it.next().expect("packed vector too short");
        }
        for v in t.w_hidden.iter_mut() {
            *v = *it.next().expect("packed vector too short");
        }
        for v in t.b_hidden.iter_mut() {
            *v = *it.next().expect("packed vector too short");
        }
        for v in t.w_out.iter_mut() {
            *v = *it.next().expect("packed vector too short");
        }
        t.b_out = *it.next().expect("packed vector too short");
        assert!(it.next().is_none(), "packed vector too long");
    }

    pub fn pack_all(&self) -> Vec<f64> {
        (0..self.dim).flat_map(|j| self.pack_target(j)).collect()
    }

    pub fn unpack_all(&mut self, packed: &[f64]) {
        let per = self.targets[0].param_count(1);
        for j in 0..self.dim {
            let chunk = &packed[j * per..(j + 1) * per];
            self.unpack_target(j, chunk);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn names(d: usize) -> Vec<String> {
        (1..=d).map(|i| format!("x{i}")).collect()
    }

    #[test]
    fn zero_model_outputs_bias_only() {
        let model = CnnEnsemble::zeros(3, 1, 2, 4, names(3));
        let row = Array1::from_vec(vec![0.5; 6]);
        let out = model.predict_conditional(row.view()).unwrap();
        assert_eq!(out, array![0.0, 0.0, 0.0]);
    }

    #[test]
    fn masked_self_input_has_no_effect() {
        let model = CnnEnsemble::random(3, 1, 4, 5, names(3), 99, 0.3);
        let mut row = Array1::from_vec((0..6).map(|i| 0.1 * i as f64 - 0.2).collect());
        let base = model.predict_conditional(row.view()).unwrap();
        for j in 0..3 {
            let col = model.masked_col(j);
            let saved = row[col];
            row[col] += 10.0;
            let out = model.predict_conditional(row.view()).unwrap();
            assert_eq!(out[j], base[j], "target {j} must ignore its own instantaneous value");
            row[col] = saved;
        }
    }

    #[test]
    fn forward_matches_manual_recomputation() {
        let model = CnnEnsemble::random(2, 1, 3, 4, names(2), 7, 0.4);
        let row = array![0.3, -1.2, 0.8, 0.05];
        let out = model.predict_conditional(row.view()).unwrap();
        for j in 0..2 {
            let t = &model.targets[j];
            let mut manual = t.b_out;
            let mut hidden_in = vec![0.0; 4];
            for c in 0..3 {
                let mut u = t.kernel_bias[c];
                for col in 0..4 {
                    u += t.kernels[[c, col]] * row[col];
                }
                let a = u.max(0.0);
                for h in 0..4 {
                    hidden_in[h] += t.w_hidden[[h, c]] * a;
                }
            }
            for h in 0..4 {
                let s = (hidden_in[h] + t.b_hidden[h]).max(0.0);
                manual += t.w_out[h] * s;
            }
            assert_abs_diff_eq!(out[j], manual, epsilon = 1e-10);
        }
    }

    #[test]
    fn pack_unpack_round_trip() {
        let model = CnnEnsemble::random(3, 2, 4, 5, names(3), 13, 0.2);
        let mut other = CnnEnsemble::zeros(3, 2, 4, 5, names(3));
        for j in 0..3 {
            let packed = model.pack_target(j);
            other.unpack_target(j, &packed);
        }
        assert_eq!(model, other);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let model = CnnEnsemble::zeros(3, 1, 2, 4, names(3));
        let row = Array1::from_vec(vec![0.0; 5]);
        assert!(model.predict_conditional(row.view()).is_err());
    }
}
