//! Stochastic-approximation search for the minimal bandwidth satisfying a
//! statistical QoS constraint.
//!
//! The constraint has the form `E{stat(W)} <= target`, where the fading
//! average can only be estimated from finite batches. The iteration
//!
//! `W <- max(W + phi(t) * gain * (est(W) - target), floor)`
//!
//! with diminishing step `phi(t) = 1/(1 + 0.1 t)` walks the estimate to the
//! root. The raw residual lives on a probability scale (order 1e-1) while
//! bandwidth lives on a hertz scale (order 1e5), so a fixed `gain` bridges
//! the two: it is calibrated up front from a two-point slope probe (a
//! Newton-style estimate of `dW/d residual`), every step is clamped to a
//! tenth of the current bandwidth, and the gain doubles whenever an
//! apparent stall fails its verification (the iterate froze short of the
//! root). Convergence is declared when the recent steps stall
//! (sliding-window mean below a relative tolerance) *and* a large
//! independent verification batch confirms the constraint to within its
//! own tolerance.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

/// Tuning knobs for [`solve_bandwidth`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchOptions {
    /// Hard cap on iterations before giving up.
    pub max_iters: usize,
    /// Fading draws per iteration for the residual estimate.
    pub batch: usize,
    /// Sliding-window length for the stall detector.
    pub window: usize,
    /// Stall threshold: mean |step| below `rel_tol * W`.
    pub rel_tol: f64,
    /// Draws for the final verification estimate.
    pub verify_samples: usize,
    /// Accept when |E{stat} - target| / target is below this.
    pub verify_rel_tol: f64,
    /// Bandwidth never drops below this (Hz).
    pub w_floor_hz: f64,
    /// First-step size as a fraction of the starting bandwidth.
    pub step_frac: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            max_iters: 1000,
            batch: 100,
            window: 50,
            rel_tol: 1e-3,
            verify_samples: 100_000,
            verify_rel_tol: 1e-2,
            w_floor_hz: 1e3,
            step_frac: 0.1,
        }
    }
}

/// One record of the search trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    /// Iteration counter (0-based).
    pub t: usize,
    /// Bandwidth before the step, Hz.
    pub w_hz: f64,
    /// Estimated residual `est - target` at that bandwidth.
    pub residual: f64,
}

/// Successful search result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    /// Accepted bandwidth, Hz.
    pub w_hz: f64,
    /// Iterations actually used.
    pub iters: usize,
    /// Relative residual measured by the verification batch.
    pub verified_rel_residual: f64,
    /// Full trajectory, one point per iteration.
    pub trace: Vec<TracePoint>,
}

/// Diminishing step-size schedule.
pub fn step_schedule(t: usize) -> f64 {
    1.0 / (1.0 + 0.1 * t as f64)
}

/// Run the search. `avg_stat(w, n)` must return the Monte-Carlo mean of the
/// QoS statistic at bandwidth `w` over `n` fresh fading draws; it owns its
/// RNG, so the whole search is deterministic in the caller's seeding.
pub fn solve_bandwidth<F>(
    mut avg_stat: F,
    target: f64,
    w0_hz: f64,
    opts: &SearchOptions,
) -> Result<SearchOutcome>
where
    F: FnMut(f64, usize) -> Result<f64>,
{
    if !(target > 0.0) || !target.is_finite() {
        return Err(Error::invalid(format!("target must be positive, got {target}")));
    }
    if !(w0_hz > 0.0) || !w0_hz.is_finite() {
        return Err(Error::invalid(format!("starting bandwidth must be positive, got {w0_hz}")));
    }
    let mut w = w0_hz.max(opts.w_floor_hz);
    let mut trace = Vec::with_capacity(opts.max_iters.min(4096));
    let mut recent_steps: VecDeque<f64> = VecDeque::with_capacity(opts.window);

    // Two-point probe: a Newton-style gain from the local slope of the
    // statistic, falling back to a first-step-sized heuristic when the
    // probe is uninformative (flat or noise-dominated statistic).
    let r0 = avg_stat(w, opts.batch)? - target;
    let probe = opts.step_frac * w;
    let r1 = avg_stat(w + probe, opts.batch)? - target;
    let slope = (r1 - r0) / probe;
    let heuristic = opts.step_frac * w / r0.abs().max(1e-3 * target);
    let mut gain = if slope.is_finite() && slope < 0.0 {
        (-1.0 / slope).min(100.0 * heuristic)
    } else {
        heuristic
    };
    let gain_cap = 1e4 * gain;

    for t in 0..opts.max_iters {
        let residual = avg_stat(w, opts.batch)? - target;
        if !residual.is_finite() {
            return Err(Error::NonFinite { context: "bandwidth-search residual", user: 0, draw: t });
        }
        trace.push(TracePoint { t, w_hz: w, residual });

        let mut step = step_schedule(t) * gain * residual;
        let cap = opts.step_frac * w;
        step = step.clamp(-cap, cap);
        w = (w + step).max(opts.w_floor_hz);

        if recent_steps.len() == opts.window {
            recent_steps.pop_front();
        }
        recent_steps.push_back(step.abs());

        if recent_steps.len() == opts.window {
            let mean_step = recent_steps.iter().sum::<f64>() / opts.window as f64;
            if mean_step < opts.rel_tol * w {
                let verified = avg_stat(w, opts.verify_samples)?;
                let rel = (verified - target) / target;
                if rel.abs() < opts.verify_rel_tol {
                    return Ok(SearchOutcome {
                        w_hz: w,
                        iters: t + 1,
                        verified_rel_residual: rel,
                        trace,
                    });
                }
                // Verification contradicted the stall: the iterate froze
                // short of the root, so enlarge the gain and make the
                // detector stall afresh.
                gain = (gain * 2.0).min(gain_cap);
                recent_steps.clear();
            }
        }
    }

    let last = trace.last().copied().unwrap_or(TracePoint { t: 0, w_hz: w, residual: f64::NAN });
    Err(Error::SearchDidNotConverge {
        iters: opts.max_iters,
        last_w_hz: w,
        last_residual: last.residual,
        trace: trace.iter().map(|p| (p.t, p.w_hz, p.residual)).collect(),
    })
}
