//! Acyclicity penalty `h(W) = tr(exp(W .* W)) - d` and support cycle checks.
//!
//! `h` is zero exactly when the weighted instantaneous graph has no directed
//! cycle, and its gradient `(exp(W .* W))^T .* 2W` drives cycle-forming
//! weights to zero during training.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Matrix exponential by scaling-and-squaring with a truncated Taylor series.
///
/// Term accumulation stops once the next term's 1-norm drops below
/// `1e-16 * max(1, ||sum||_1)`, which keeps the truncation error well under
/// 1e-12 for the nonnegative matrices used here.
pub fn matrix_exp(a: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let d = a.nrows();
    if a.ncols() != d {
        return Err(Error::dims(
            "square matrix".to_string(),
            format!("{}x{}", a.nrows(), a.ncols()),
        ));
    }
    let norm = one_norm(&a.to_owned());
    let s = if norm > 1.0 {
        (norm.log2().ceil() as i32).clamp(0, 60) as u32
    } else {
        0
    };
    let scaled = a.mapv(|v| v / f64::powi(2.0, s as i32));

    let mut sum = Array2::eye(d);
    let mut term = Array2::eye(d);
    for k in 1..=120 {
        term = term.dot(&scaled) / k as f64;
        sum += &term;
        if one_norm(&term) < 1e-16 * one_norm(&sum).max(1.0) {
            break;
        }
    }
    for _ in 0..s {
        sum = sum.dot(&sum);
    }
    Ok(sum)
}

fn one_norm(a: &Array2<f64>) -> f64 {
    let mut best = 0.0f64;
    for j in 0..a.ncols() {
        let s: f64 = a.column(j).iter().map(|v| v.abs()).sum();
        best = best.max(s);
    }
    best
}

/// `h(W) = tr(exp(W .* W)) - d` for a square nonnegative matrix.
pub fn acyclicity_penalty(w: ArrayView2<'_, f64>) -> Result<f64> {
    let d = w.nrows();
    if w.ncols() != d {
        return Err(Error::dims(
            "square matrix".to_string(),
            format!("{}x{}", w.nrows(), w.ncols()),
        ));
    }
    let sq = w.mapv(|v| v * v);
    let e = matrix_exp(sq.view())?;
    Ok(e.diag().sum() - d as f64)
}

/// `h(W)` together with `exp(W .* W)` itself, for chain rules that factor
/// through squared edge strengths.
pub fn acyclicity_penalty_exp(w: ArrayView2<'_, f64>) -> Result<(f64, Array2<f64>)> {
    let d = w.nrows();
    if w.ncols() != d {
        return Err(Error::dims(
            "square matrix".to_string(),
            format!("{}x{}", w.nrows(), w.ncols()),
        ));
    }
    let sq = w.mapv(|v| v * v);
    let e = matrix_exp(sq.view())?;
    let h = e.diag().sum() - d as f64;
    Ok((h, e))
}

/// `h(W)` together with its gradient `(exp(W .* W))^T .* 2W`.
pub fn acyclicity_penalty_grad(w: ArrayView2<'_, f64>) -> Result<(f64, Array2<f64>)> {
    let d = w.nrows();
    let (h, e) = acyclicity_penalty_exp(w)?;
    let mut grad = Array2::zeros((d, d));
    for i in 0..d {
        for j in 0..d {
            grad[[i, j]] = e[[j, i]] * 2.0 * w[[i, j]];
        }
    }
    Ok((h, grad))
}

/// Kahn topological check on the support of a nonnegative matrix.
///
/// Entry `(i, j) > 0` is read as edge `i -> j`. Returns a topological order
/// when acyclic, `None` otherwise. Independent of the `h` computation, so the
/// two can be used to cross-check each other.
pub fn topological_order(support: ArrayView2<'_, f64>) -> Option<Vec<usize>> {
    let d = support.nrows();
    debug_assert_eq!(d, support.ncols());
    let mut indeg = vec![0usize; d];
    for j in 0..d {
        for i in 0..d {
            if i != j && support[[i, j]] > 0.0 {
                indeg[j] += 1;
            }
        }
    }
    let mut queue: Vec<usize> = (0..d).filter(|&j| indeg[j] == 0).collect();
    let mut order = Vec::with_capacity(d);
    let mut head = 0;
    while head < queue.len() {
        let u = queue[head];
        head += 1;
        order.push(u);
        for v in 0..d {
            if v != u && support[[u, v]] > 0.0 {
                indeg[v] -= 1;
                if indeg[v] == 0 {
                    queue.push(v);
                }
            }
        }
    }
    if order.len() == d {
        Some(order)
    } else {
        None
    }
}

pub fn is_acyclic(support: ArrayView2<'_, f64>) -> bool {
    topological_order(support).is_some()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    /// Brute-force Taylor series for tr(exp(M)) without scaling tricks.
    fn trace_exp_series(m: &Array2<f64>, terms: usize) -> f64 {
        let d = m.nrows();
        let mut sum = Array2::eye(d);
        let mut t = Array2::eye(d);
        for k in 1..=terms {
            t = t.dot(m) / k as f64;
            sum += &t;
        }
        sum.diag().sum()
    }

    #[test]
    fn zero_matrix_has_zero_penalty() {
        let w = Array2::<f64>::zeros((4, 4));
        assert_eq!(acyclicity_penalty(w.view()).unwrap(), 0.0);
    }

    #[test]
    fn single_edge_is_acyclic() {
        let w = array![[0.0, 1.0], [0.0, 0.0]];
        assert_eq!(acyclicity_penalty(w.view()).unwrap(), 0.0);
        assert!(is_acyclic(w.view()));
    }

    #[test]
    fn two_cycle_matches_cosh_closed_form() {
        for &a in &[0.3, 0.9, 1.7] {
            let w = array![[0.0, a], [a, 0.0]];
            let h = acyclicity_penalty(w.view()).unwrap();
            // tr(exp([[0,a^2],[a^2,0]])) = 2 cosh(a^2)
            let closed = 2.0 * (a * a).cosh() - 2.0;
            assert_abs_diff_eq!(h, closed, epsilon = 1e-12);
            let sq = w.mapv(|v| v * v);
            let brute = trace_exp_series(&sq, 60) - 2.0;
            assert_abs_diff_eq!(h, brute, epsilon = 1e-12);
            assert!(!is_acyclic(w.view()));
        }
    }

    #[test]
    fn strictly_triangular_is_zero_and_cycles_are_positive() {
        let tri = array![[0.0, 2.0, 0.5], [0.0, 0.0, 1.5], [0.0, 0.0, 0.0]];
        assert_abs_diff_eq!(acyclicity_penalty(tri.view()).unwrap(), 0.0, epsilon = 1e-12);
        let cyc = array![[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.4, 0.0, 0.0]];
        assert!(acyclicity_penalty(cyc.view()).unwrap() > 1e-6);
        assert!(!is_acyclic(cyc.view()));
    }

    #[test]
    fn non_square_rejected() {
        let w = Array2::<f64>::zeros((2, 3));
        assert!(acyclicity_penalty(w.view()).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let w = array![[0.0, 0.7, 0.2], [0.3, 0.0, 0.5], [0.1, 0.6, 0.0]];
        let (_, grad) = acyclicity_penalty_grad(w.view()).unwrap();
        let eps = 1e-6;
        for i in 0..3 {
            for j in 0..3 {
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[[i, j]] += eps;
                wm[[i, j]] -= eps;
                let fd = (acyclicity_penalty(wp.view()).unwrap()
                    - acyclicity_penalty(wm.view()).unwrap())
                    / (2.0 * eps);
                assert_abs_diff_eq!(grad[[i, j]], fd, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn matrix_exp_matches_series_on_larger_norms() {
        let m = array![[3.0, 1.0], [0.5, 2.0]];
        let e = matrix_exp(m.view()).unwrap();
        let mut sum = Array2::eye(2);
        let mut t = Array2::eye(2);
        for k in 1..=200 {
            t = t.dot(&m) / k as f64;
            sum += &t;
        }
        assert_abs_diff_eq!(e, sum, epsilon = 1e-10);
    }
}
