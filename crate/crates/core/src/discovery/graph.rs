//! Weighted temporal causal graphs extracted from trained ensembles.

use ndarray::{Array3, ArrayView2};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::acyclic::is_acyclic;
use crate::error::{Error, Result};

use super::model::CnnEnsemble;

/// Nonnegative edge-strength tensor over `(K+1)` lag positions.
///
/// `weights[[k, i, j]]` is the strength of the edge from variable `i` at lag
/// position `k` (slice `K` is instantaneous) into variable `j` at the current
/// step. The instantaneous slice has a zero diagonal and, after pruning, an
/// acyclic boolean view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalCausalGraph {
    pub weights: Array3<f64>,
    pub thresholds: Vec<f64>,
    pub var_names: Vec<String>,
}

impl TemporalCausalGraph {
    pub fn lag_order(&self) -> usize {
        self.weights.dim().0 - 1
    }

    pub fn dim(&self) -> usize {
        self.weights.dim().1
    }

    pub fn instantaneous(&self) -> ArrayView2<'_, f64> {
        self.weights.index_axis(ndarray::Axis(0), self.lag_order())
    }

    /// Boolean view: entries strictly above their slice threshold.
    pub fn bool_view(&self) -> Array3<u8> {
        let mut out = Array3::zeros(self.weights.dim());
        for (k, thr) in self.thresholds.iter().enumerate() {
            for i in 0..self.dim() {
                for j in 0..self.dim() {
                    if self.weights[[k, i, j]] > *thr {
                        out[[k, i, j]] = 1;
                    }
                }
            }
        }
        out
    }

    /// Edges above threshold as `(lag_position, source, target, weight)`.
    pub fn edges(&self) -> Vec<(usize, usize, usize, f64)> {
        let mut out = Vec::new();
        for k in 0..=self.lag_order() {
            for i in 0..self.dim() {
                for j in 0..self.dim() {
                    let w = self.weights[[k, i, j]];
                    if w > self.thresholds[k] {
                        out.push((k, i, j, w));
                    }
                }
            }
        }
        out
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }

    /// Edge-list CSV `(lag, source, target, weight)` for external tooling.
    pub fn save_edge_csv(&self, path: &Path) -> Result<()> {
        let mut wtr =
            csv::Writer::from_path(path).map_err(|e| Error::CsvFile { msg: e.to_string() })?;
        wtr.write_record(["lag_position", "source", "target", "weight"])
            .map_err(|e| Error::CsvFile { msg: e.to_string() })?;
        for (k, i, j, w) in self.edges() {
            wtr.write_record([
                k.to_string(),
                self.var_names[i].clone(),
                self.var_names[j].clone(),
                format!("{w}"),
            ])
            .map_err(|e| Error::CsvFile { msg: e.to_string() })?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Kernel-column L2 norms of a (trained or untrained) ensemble.
pub fn extract_adjacency(model: &CnnEnsemble, thresholds: &[f64]) -> Result<TemporalCausalGraph> {
    let (d, k) = (model.dim, model.lag_order);
    if thresholds.len() != k + 1 {
        return Err(Error::dims(
            format!("{} thresholds", k + 1),
            format!("{}", thresholds.len()),
        ));
    }
    let mut weights = Array3::zeros((k + 1, d, d));
    for j in 0..d {
        let kernels = &model.targets[j].kernels;
        for slice in 0..=k {
            for i in 0..d {
                let col = slice * d + i;
                let norm = kernels.column(col).iter().map(|v| v * v).sum::<f64>().sqrt();
                weights[[slice, i, j]] = norm;
            }
        }
    }
    Ok(TemporalCausalGraph {
        weights,
        thresholds: thresholds.to_vec(),
        var_names: model.var_names.clone(),
    })
}

/// Zero out entries at or below their per-slice threshold, then re-verify
/// that the surviving instantaneous support is acyclic.
pub fn prune_graph(graph: &TemporalCausalGraph, thresholds: &[f64]) -> Result<TemporalCausalGraph> {
    let k = graph.lag_order();
    if thresholds.len() != k + 1 {
        return Err(Error::dims(
            format!("{} thresholds", k + 1),
            format!("{}", thresholds.len()),
        ));
    }
    if thresholds.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(Error::invalid("thresholds must be nonnegative"));
    }
    let mut weights = graph.weights.clone();
    for (slice, thr) in thresholds.iter().enumerate() {
        for i in 0..graph.dim() {
            for j in 0..graph.dim() {
                if weights[[slice, i, j]] <= *thr {
                    weights[[slice, i, j]] = 0.0;
                }
            }
        }
    }
    let pruned = TemporalCausalGraph {
        weights,
        thresholds: thresholds.to_vec(),
        var_names: graph.var_names.clone(),
    };
    if !is_acyclic(pruned.instantaneous()) {
        return Err(Error::CyclicAfterPruning(format!(
            "thresholds {:?} leave a directed cycle among instantaneous edges",
            thresholds
        )));
    }
    Ok(pruned)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn names(d: usize) -> Vec<String> {
        (1..=d).map(|i| format!("x{i}")).collect()
    }

    #[test]
    fn norm_of_3_4_is_5() {
        let mut model = CnnEnsemble::zeros(2, 0, 2, 3, names(2));
        // kernels of target 1, input cell = instantaneous x1 (col 0)
        model.targets[1].kernels[[0, 0]] = 3.0;
        model.targets[1].kernels[[1, 0]] = 4.0;
        let g = extract_adjacency(&model, &[0.0]).unwrap();
        assert_abs_diff_eq!(g.weights[[0, 0, 1]], 5.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_model_gives_zero_tensor() {
        let model = CnnEnsemble::zeros(3, 2, 4, 5, names(3));
        let g = extract_adjacency(&model, &[0.1, 0.1, 0.1]).unwrap();
        assert!(g.weights.iter().all(|w| *w == 0.0));
    }

    #[test]
    fn adjacency_matches_sqrt_of_squares_oracle() {
        let model = CnnEnsemble::random(3, 1, 4, 5, names(3), 5, 0.7);
        let g = extract_adjacency(&model, &[0.0, 0.0]).unwrap();
        for slice in 0..=1 {
            for i in 0..3 {
                for j in 0..3 {
                    let col = slice * 3 + i;
                    let mut acc = 0.0;
                    for c in 0..4 {
                        let w = model.targets[j].kernels[[c, col]];
                        acc += w * w;
                    }
                    assert_abs_diff_eq!(g.weights[[slice, i, j]], acc.sqrt(), epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn adjacency_invariant_under_kernel_sign_flip() {
        let mut model = CnnEnsemble::random(3, 1, 4, 5, names(3), 6, 0.5);
        let before = extract_adjacency(&model, &[0.0, 0.0]).unwrap();
        model.targets[1].kernels.mapv_inplace(|v| -v);
        let after = extract_adjacency(&model, &[0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(before.weights, after.weights, epsilon = 1e-15);
    }

    #[test]
    fn prune_examples() {
        let mut weights = Array3::zeros((1, 3, 3));
        weights[[0, 0, 1]] = 0.5;
        weights[[0, 1, 2]] = 0.1;
        let g = TemporalCausalGraph {
            weights,
            thresholds: vec![0.0],
            var_names: names(3),
        };
        // threshold 0 keeps everything
        let same = prune_graph(&g, &[0.0]).unwrap();
        assert_eq!(same.weights, g.weights);
        // threshold 0.3 keeps only the 0.5 edge
        let pruned = prune_graph(&g, &[0.3]).unwrap();
        assert_eq!(pruned.weights[[0, 0, 1]], 0.5);
        assert_eq!(pruned.weights[[0, 1, 2]], 0.0);
        // threshold above the max empties the graph
        let empty = prune_graph(&g, &[1.0]).unwrap();
        assert!(empty.weights.iter().all(|w| *w == 0.0));
    }

    #[test]
    fn prune_detects_surviving_cycle() {
        let mut weights = Array3::zeros((1, 2, 2));
        weights[[0, 0, 1]] = 0.9;
        weights[[0, 1, 0]] = 0.8;
        let g = TemporalCausalGraph {
            weights,
            thresholds: vec![0.0],
            var_names: names(2),
        };
        let err = prune_graph(&g, &[0.3]).unwrap_err();
        assert!(matches!(err, Error::CyclicAfterPruning(_)));
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.json");
        let model = CnnEnsemble::random(3, 1, 2, 4, names(3), 8, 0.4);
        let g = extract_adjacency(&model, &[0.3, 0.3]).unwrap();
        g.save_json(&path).unwrap();
        let back = TemporalCausalGraph::load_json(&path).unwrap();
        assert_eq!(g, back);
    }
}
