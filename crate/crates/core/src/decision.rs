//! Moving-windows cumulative discrimination: fuses a pulse train's
//! single-pulse angle estimates into one decision by multi-level token
//! counting. A window slides over the estimate axis; every estimate inside
//! the current window earns tokens equal to the window's occupancy, so
//! estimates sitting in dense neighborhoods accumulate the most; each
//! further level halves the window and re-runs over the winner's
//! neighborhood.

use crate::estimator::{predict, NetworkParams};
use crate::{Error, Result};

/// Window geometry for the token accumulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MovingWindowConfig {
    /// Level-1 window length, degrees; level k uses L/2^(k−1).
    pub window_length_deg: f64,
    /// Slide step, degrees (shared by all levels).
    pub step_deg: f64,
    /// Number of levels.
    pub levels: usize,
}

impl Default for MovingWindowConfig {
    fn default() -> Self {
        MovingWindowConfig { window_length_deg: 8.0, step_deg: 1.0, levels: 3 }
    }
}

impl MovingWindowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.window_length_deg > 0.0 && self.window_length_deg.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "window length {} must be positive",
                self.window_length_deg
            )));
        }
        if !(self.step_deg > 0.0 && self.step_deg <= self.window_length_deg) {
            return Err(Error::InvalidConfig(format!(
                "step {} must lie in (0, window length {}]",
                self.step_deg, self.window_length_deg
            )));
        }
        if self.levels == 0 {
            return Err(Error::InvalidConfig("levels must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Per-level diagnostics of one estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowTrace {
    /// Winner after each executed level (may be shorter than `levels` when
    /// a tie midpoint leaves the next level's neighborhood empty).
    pub level_winners: Vec<f64>,
    /// Whether the corresponding level resolved by the tie-midpoint rule
    /// (distinct leftmost and rightmost maximal estimates).
    pub level_ties: Vec<bool>,
    pub result: f64,
}

/// One level of token accumulation over `sorted` estimates: slide a closed
/// window of `length` from the minimum in steps of `step` until the right
/// edge first covers the maximum (that window included); each estimate in a
/// window gains the window's occupancy count. Returns the winner and
/// whether it came from the tie rule.
fn run_level(sorted: &[f64], length: f64, step: f64) -> (f64, bool) {
    let min = sorted[0];
    let max = *sorted.last().unwrap();
    let mut tokens = vec![0u64; sorted.len()];
    let mut j = 0u64;
    loop {
        // Window origin recomputed from j so the positions are identical
        // across translated re-runs of translated data.
        let x = min + j as f64 * step;
        let lo = sorted.partition_point(|&v| v < x);
        let hi = sorted.partition_point(|&v| v <= x + length);
        let occupancy = (hi - lo) as u64;
        for t in &mut tokens[lo..hi] {
            *t += occupancy;
        }
        if x + length >= max {
            break;
        }
        j += 1;
    }
    let best = *tokens.iter().max().unwrap();
    let leftmost = tokens.iter().position(|&t| t == best).unwrap();
    let rightmost = tokens.iter().rposition(|&t| t == best).unwrap();
    let (a, b) = (sorted[leftmost], sorted[rightmost]);
    (0.5 * (a + b), a != b)
}

/// Full multi-level run with per-level diagnostics. Level k ≥ 2 keeps only
/// the estimates within half the previous level's window length of the
/// previous winner (the winning window's extent); when a tie midpoint lands
/// away from every estimate that neighborhood can be empty, and the
/// procedure stops early with the midpoint as the result.
pub fn moving_window_trace(values: &[f64], cfg: &MovingWindowConfig) -> Result<WindowTrace> {
    cfg.validate()?;
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut domain = values.to_vec();
    domain.sort_unstable_by(f64::total_cmp);
    let mut trace = WindowTrace { level_winners: Vec::new(), level_ties: Vec::new(), result: 0.0 };
    let mut length = cfg.window_length_deg;
    for level in 0..cfg.levels {
        if level > 0 {
            let center = trace.result;
            let half = length / 2.0;
            domain.retain(|&v| (v - center).abs() <= half);
            if domain.is_empty() {
                break;
            }
            length /= 2.0;
        }
        let (winner, tie) = run_level(&domain, length, cfg.step_deg);
        trace.level_winners.push(winner);
        trace.level_ties.push(tie);
        trace.result = winner;
    }
    Ok(trace)
}

/// The fused angle for one pulse train of single-pulse estimates.
pub fn moving_window_estimate(values: &[f64], cfg: &MovingWindowConfig) -> Result<f64> {
    Ok(moving_window_trace(values, cfg)?.result)
}

/// A pulse train's per-pulse predictions and their fused decision.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseTrainEstimate {
    pub values: Vec<f64>,
    pub config: MovingWindowConfig,
    pub level_winners: Vec<f64>,
    pub result_deg: f64,
}

/// Predicts every pulse's angle with the network, then fuses the
/// predictions. Feature rows must already carry whatever conditioning the
/// network was trained with.
pub fn fuse_pulse_train(
    features: &[Vec<f64>],
    network: &NetworkParams,
    cfg: &MovingWindowConfig,
) -> Result<PulseTrainEstimate> {
    if features.is_empty() {
        return Err(Error::EmptyInput);
    }
    let values =
        features.iter().map(|x| predict(network, x)).collect::<Result<Vec<f64>>>()?;
    let trace = moving_window_trace(&values, cfg)?;
    Ok(PulseTrainEstimate {
        values,
        config: *cfg,
        level_winners: trace.level_winners,
        result_deg: trace.result,
    })
}
