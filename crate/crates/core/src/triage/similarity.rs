//! Stack trace similarity.
//!
//! Frames match when file and function agree; line numbers are ignored so
//! traces from slightly different builds still line up. Matched pairs are
//! order preserving in both traces, and each pair `(i, j)` contributes
//!
//! ```text
//! 2^(-min(i, j) / theta) * 2^(-|i - j| / rho)
//! ```
//!
//! The first factor discounts pairs far from the top of the stack, the second
//! discounts pairs whose positions drifted apart. The best total is found by
//! dynamic programming and normalized by the larger of the two traces'
//! self-weights `sum_i 2^(-i / theta)`.

use serde::{Deserialize, Serialize};

use super::TriageError;
use crate::model::StackTrace;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityParams {
    /// Top-of-stack decay: a pair `theta` frames down weighs half.
    pub theta: f64,
    /// Alignment-drift decay: pairs `rho` positions apart weigh half.
    pub rho: f64,
    /// Clusters merge while their complete-linkage distance is below this.
    pub threshold: f64,
}

impl Default for SimilarityParams {
    fn default() -> Self {
        SimilarityParams {
            theta: 8.0,
            rho: 4.0,
            threshold: 0.3,
        }
    }
}

impl SimilarityParams {
    pub fn validate(&self) -> Result<(), TriageError> {
        if !(self.theta > 0.0 && self.theta.is_finite()) {
            return Err(TriageError::InvalidParams(format!(
                "theta must be > 0, got {}",
                self.theta
            )));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(TriageError::InvalidParams(format!(
                "rho must be > 0, got {}",
                self.rho
            )));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(TriageError::InvalidParams(format!(
                "threshold must lie in (0, 1), got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// Contribution of matching position `i` of one trace with position `j` of
/// the other.
pub fn pair_weight(i: usize, j: usize, p: &SimilarityParams) -> f64 {
    let top = i.min(j) as f64;
    let rel = i.abs_diff(j) as f64;
    (-top / p.theta).exp2() * (-rel / p.rho).exp2()
}

/// Self-weight of a trace of `len` frames.
pub fn trace_weight(len: usize, p: &SimilarityParams) -> f64 {
    (0..len).map(|i| (-(i as f64) / p.theta).exp2()).sum()
}

/// Similarity in `[0, 1]`; 1 for identical non-empty traces, 0 when either
/// trace is empty or no frame keys are shared.
pub fn similarity(a: &StackTrace, b: &StackTrace, p: &SimilarityParams) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let score = best_alignment_score(a, b, p);
    let norm = trace_weight(a.len(), p).max(trace_weight(b.len(), p));
    (score / norm).clamp(0.0, 1.0)
}

pub fn dist(a: &StackTrace, b: &StackTrace, p: &SimilarityParams) -> f64 {
    1.0 - similarity(a, b, p)
}

fn best_alignment_score(a: &StackTrace, b: &StackTrace, p: &SimilarityParams) -> f64 {
    let m = b.len();
    let mut prev = vec![0.0f64; m + 1];
    let mut cur = vec![0.0f64; m + 1];
    for (i, fa) in a.iter().enumerate() {
        cur[0] = 0.0;
        for (j, fb) in b.iter().enumerate() {
            let mut best = prev[j + 1].max(cur[j]);
            if fa.match_key() == fb.match_key() {
                best = best.max(prev[j] + pair_weight(i, j, p));
            }
            cur[j + 1] = best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m]
}
