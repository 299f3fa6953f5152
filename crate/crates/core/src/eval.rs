//! Breakpoint-accuracy metrics and a naive mean-shift baseline segmenter.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{compute_stats, MultivariateSeries};

/// Default matching radius for breakpoint evaluation.
pub const DEFAULT_MATCH_RADIUS: usize = 150;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchedBreak {
    pub truth: usize,
    pub estimate: usize,
    pub error: usize,
}

/// Greedy nearest-neighbor matching between true and estimated breakpoints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BreakpointReport {
    pub radius: usize,
    /// Matched pairs ordered by the true breakpoint.
    pub matches: Vec<MatchedBreak>,
    pub unmatched_truth: Vec<usize>,
    pub unmatched_estimate: Vec<usize>,
}

impl BreakpointReport {
    pub fn errors(&self) -> Vec<usize> {
        self.matches.iter().map(|m| m.error).collect()
    }

    pub fn max_error(&self) -> Option<usize> {
        self.errors().into_iter().max()
    }
}

fn check_sorted(list: &[usize], name: &str) -> Result<()> {
    if list.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::invalid(format!("{name} breakpoints must be sorted")));
    }
    Ok(())
}

/// Match each estimate to its nearest true breakpoint (injectively, within
/// `radius`), reporting absolute errors and the unmatched on both sides.
pub fn breakpoint_error(
    truth: &[usize],
    estimate: &[usize],
    radius: usize,
) -> Result<BreakpointReport> {
    check_sorted(truth, "true")?;
    check_sorted(estimate, "estimated")?;
    let mut pairs: Vec<(usize, usize, usize)> = Vec::new();
    for (ti, &t) in truth.iter().enumerate() {
        for (ei, &e) in estimate.iter().enumerate() {
            let dist = t.abs_diff(e);
            if dist <= radius {
                pairs.push((dist, ti, ei));
            }
        }
    }
    pairs.sort_unstable();
    let mut truth_used = vec![false; truth.len()];
    let mut est_used = vec![false; estimate.len()];
    let mut matches = Vec::new();
    for (dist, ti, ei) in pairs {
        if !truth_used[ti] && !est_used[ei] {
            truth_used[ti] = true;
            est_used[ei] = true;
            matches.push(MatchedBreak {
                truth: truth[ti],
                estimate: estimate[ei],
                error: dist,
            });
        }
    }
    matches.sort_unstable_by_key(|m| m.truth);
    Ok(BreakpointReport {
        radius,
        matches,
        unmatched_truth: truth
            .iter()
            .enumerate()
            .filter(|(i, _)| !truth_used[*i])
            .map(|(_, &t)| t)
            .collect(),
        unmatched_estimate: estimate
            .iter()
            .enumerate()
            .filter(|(i, _)| !est_used[*i])
            .map(|(_, &e)| e)
            .collect(),
    })
}

/// Greedy mean-shift segmenter used as a comparison stand-in.
///
/// The series is z-scored globally; a breakpoint is emitted wherever the L1
/// distance between the means of the two adjacent windows `[t-window, t)` and
/// `[t, t+window)` exceeds `threshold`, with a refractory period of one
/// window after each emission.
pub fn baseline_mean_shift_segment(
    series: &MultivariateSeries,
    window: usize,
    threshold: f64,
) -> Result<Vec<usize>> {
    if window < 2 {
        return Err(Error::invalid("baseline window must be at least 2"));
    }
    let t_len = series.len();
    if t_len < 2 * window {
        return Ok(Vec::new());
    }
    let stats = compute_stats(series.values());
    let z = stats.apply(series.values())?;
    let d = z.ncols();

    // prefix sums per column for O(1) window means
    let mut prefix = vec![vec![0.0f64; t_len + 1]; d];
    for j in 0..d {
        for t in 0..t_len {
            prefix[j][t + 1] = prefix[j][t] + z[[t, j]];
        }
    }
    let mean = |j: usize, a: usize, b: usize| (prefix[j][b] - prefix[j][a]) / (b - a) as f64;

    let mut breakpoints = Vec::new();
    let mut last_emit: Option<usize> = None;
    for t in window..=(t_len - window) {
        if let Some(last) = last_emit {
            if t < last + window {
                continue;
            }
        }
        let mut l1 = 0.0;
        for j in 0..d {
            l1 += (mean(j, t - window, t) - mean(j, t, t + window)).abs();
        }
        if l1 > threshold {
            breakpoints.push(t);
            last_emit = Some(t);
        }
    }
    Ok(breakpoints)
}
