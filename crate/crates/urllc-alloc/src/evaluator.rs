//! Monte-Carlo QoS verification of allocation policies, plus the policies
//! themselves: the learned network, the closed-form optimal split for the
//! symmetric case, and the equal-power baseline.
//!
//! Evaluation streams fading frames in fixed-size chunks: sampling is
//! sequential (one RNG), the per-frame work is row-parallel, and the
//! reduction is sequential and compensated — so the report is identical,
//! bit for bit, in sequential and parallel mode.

use crate::channel::GainSampler;
use crate::error::{Error, Result};
use crate::exec::{map_rows, ExecMode};
use crate::math::{derive_seed, StableAcc, Stream};
use crate::mlp::Mlp;
use crate::qos::LinkParams;
use crate::sa::{solve_bandwidth, SearchOptions};
use crate::scenario::Scenario;
use crate::symmetric::optimal_power;
use crate::trainer::TrainState;
use serde::{Deserialize, Serialize};

/// Frames per evaluation chunk; bounds peak memory without affecting
/// results.
const CHUNK_FRAMES: usize = 4096;

/// A joint power-and-bandwidth allocation rule that can be evaluated.
pub trait PowerPolicy: Sync {
    /// Short name used in reports ("learned", "optimal", "equal").
    fn label(&self) -> &'static str;
    /// Per-user bandwidths, Hz.
    fn bandwidths_hz(&self) -> &[f64];
    /// Total transmit power the policy is allowed to spend, W.
    fn power_budget_w(&self) -> f64;
    /// Power split for one fading draw. Writes one value per user; on an
    /// infeasible draw it may leave NaNs, which evaluation reports as an
    /// error with the draw index.
    fn powers(&self, gains: &[f64], out: &mut [f64]);
}

/// Policy backed by a trained network: softmax fractions of the budget,
/// fixed per-user bandwidths.
pub struct LearnedPolicy {
    mlp: Mlp,
    w_hz: Vec<f64>,
    pmax_w: f64,
    n_antennas: usize,
}

impl LearnedPolicy {
    pub fn from_state(state: &TrainState) -> Self {
        LearnedPolicy {
            mlp: state.mlp().clone(),
            w_hz: state.w_hz(),
            pmax_w: state.pmax_w(),
            n_antennas: state.n_antennas(),
        }
    }
}

impl PowerPolicy for LearnedPolicy {
    fn label(&self) -> &'static str {
        "learned"
    }
    fn bandwidths_hz(&self) -> &[f64] {
        &self.w_hz
    }
    fn power_budget_w(&self) -> f64 {
        self.pmax_w
    }
    fn powers(&self, gains: &[f64], out: &mut [f64]) {
        let norm: Vec<f64> = gains.iter().map(|g| g / self.n_antennas as f64).collect();
        self.mlp.infer_into(&norm, out);
        for p in out.iter_mut() {
            *p *= self.pmax_w;
        }
    }
}

/// Closed-form optimal split for the symmetric scenario, at a fixed shared
/// per-user bandwidth.
pub struct OptimalSymmetricPolicy {
    link: LinkParams,
    w_hz: Vec<f64>,
    pmax_w: f64,
}

impl OptimalSymmetricPolicy {
    pub fn new(link: LinkParams, n_users: usize, w_per_user_hz: f64, pmax_w: f64) -> Self {
        OptimalSymmetricPolicy {
            link,
            w_hz: vec![w_per_user_hz; n_users],
            pmax_w,
        }
    }
}

impl PowerPolicy for OptimalSymmetricPolicy {
    fn label(&self) -> &'static str {
        "optimal"
    }
    fn bandwidths_hz(&self) -> &[f64] {
        &self.w_hz
    }
    fn power_budget_w(&self) -> f64 {
        self.pmax_w
    }
    fn powers(&self, gains: &[f64], out: &mut [f64]) {
        if optimal_power(&self.link, self.w_hz[0], self.pmax_w, gains, out, 0).is_err() {
            out.iter_mut().for_each(|p| *p = f64::NAN);
        }
    }
}

/// Baseline that splits the budget evenly regardless of fading, with
/// independently sized per-user bandwidths.
pub struct EqualPowerPolicy {
    w_hz: Vec<f64>,
    pmax_w: f64,
}

impl EqualPowerPolicy {
    pub fn new(w_hz: Vec<f64>, pmax_w: f64) -> Self {
        EqualPowerPolicy { w_hz, pmax_w }
    }

    /// Size each user's bandwidth by the same stochastic search the
    /// symmetric solver uses, but with the power fixed at an even split.
    /// Each user's constraint depends only on that user's own fading, so
    /// the searches run independently.
    pub fn solve(scenario: &Scenario, seed: u64, opts: &SearchOptions) -> Result<Self> {
        let links = LinkParams::for_scenario(scenario)?;
        let k = scenario.n_users();
        let p_each = scenario.system.pmax_w / k as f64;
        let nt = scenario.system.n_antennas;
        let mut w_hz = Vec::with_capacity(k);
        for (i, link) in links.iter().enumerate() {
            let mut sampler =
                GainSampler::new(1, nt, derive_seed(seed, Stream::Channel, 1 + i as u64))?;
            let mut g = [0.0];
            let link_ref = link;
            let avg_stat = move |w: f64, n: usize| -> Result<f64> {
                let mut acc = StableAcc::new();
                for draw in 0..n {
                    sampler.sample_frame(&mut g);
                    let stat = link_ref.qos_stat(g[0], p_each, w);
                    if !stat.is_finite() {
                        return Err(Error::NonFinite { context: "equal-power statistic", user: i, draw });
                    }
                    acc.add(stat);
                }
                Ok(acc.total() / n as f64)
            };
            let w0 = crate::symmetric::warm_start_bandwidth(link, k, nt, scenario.system.pmax_w);
            let out = solve_bandwidth(avg_stat, link.qos_target, w0, opts)?;
            w_hz.push(out.w_hz);
        }
        Ok(EqualPowerPolicy {
            w_hz,
            pmax_w: scenario.system.pmax_w,
        })
    }
}

impl PowerPolicy for EqualPowerPolicy {
    fn label(&self) -> &'static str {
        "equal"
    }
    fn bandwidths_hz(&self) -> &[f64] {
        &self.w_hz
    }
    fn power_budget_w(&self) -> f64 {
        self.pmax_w
    }
    fn powers(&self, gains: &[f64], out: &mut [f64]) {
        let p = self.pmax_w / gains.len() as f64;
        out.iter_mut().for_each(|slot| *slot = p);
    }
}

/// Monte-Carlo verification verdict for one policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub policy: String,
    pub n_samples: usize,
    /// Per-user Monte-Carlo mean of the QoS statistic.
    pub mean_stat: Vec<f64>,
    /// Per-user constraint right-hand sides.
    pub qos_target: Vec<f64>,
    /// Per-user relative margin `mean/target - 1` (negative = satisfied).
    pub rel_margin: Vec<f64>,
    /// Average positive relative violation across users.
    pub xi: f64,
    /// Largest single-user relative violation.
    pub worst_rel_violation: f64,
    /// Per-user mean achievable rate, packets/frame.
    pub mean_rate_pkt: Vec<f64>,
    /// Largest relative deviation of the spent power from the budget seen
    /// in any draw.
    pub max_budget_rel_err: f64,
    /// Sum of the policy's per-user bandwidths, Hz.
    pub total_bandwidth_hz: f64,
    /// True when every user's margin stays within `tolerance`.
    pub qos_ok: bool,
    /// Relative tolerance used for `qos_ok`.
    pub tolerance: f64,
}

/// Estimate every user's QoS statistic under `policy` over `n_samples`
/// fading frames. Deterministic in `seed` and identical across execution
/// modes.
pub fn evaluate(
    links: &[LinkParams],
    policy: &dyn PowerPolicy,
    n_antennas: usize,
    n_samples: usize,
    seed: u64,
    mode: ExecMode,
    tolerance: f64,
) -> Result<EvalReport> {
    let k = links.len();
    if k == 0 || policy.bandwidths_hz().len() != k {
        return Err(Error::ShapeMismatch(format!(
            "policy covers {} users, scenario has {k}",
            policy.bandwidths_hz().len()
        )));
    }
    if n_samples == 0 {
        return Err(Error::invalid("n_samples must be positive".to_string()));
    }
    let mut sampler = GainSampler::new(k, n_antennas, derive_seed(seed, Stream::Eval, 0))?;
    let w = policy.bandwidths_hz().to_vec();
    let budget = policy.power_budget_w();

    // Per-frame outputs: k stats, k rates, 1 budget error.
    let out_stride = 2 * k + 1;
    let mut stat_acc: Vec<StableAcc> = vec![StableAcc::new(); k];
    let mut rate_acc: Vec<StableAcc> = vec![StableAcc::new(); k];
    let mut max_budget_err = 0.0f64;

    let mut done = 0usize;
    let mut out = vec![0.0; CHUNK_FRAMES * out_stride];
    while done < n_samples {
        let frames = CHUNK_FRAMES.min(n_samples - done);
        let gains = sampler.sample_block(frames);
        let out_block = &mut out[..frames * out_stride];
        map_rows(mode, &gains, k, out_block, out_stride, |g, row| {
            let mut p = vec![0.0; k];
            policy.powers(g, &mut p);
            let mut spent = 0.0;
            for i in 0..k {
                let s = links[i].rate(g[i], p[i], w[i]);
                row[i] = (-links[i].theta * s).exp();
                row[k + i] = s;
                spent += p[i];
            }
            row[2 * k] = (spent - budget) / budget;
        });
        for (r, row) in out_block.chunks(out_stride).enumerate() {
            for i in 0..k {
                if !row[i].is_finite() {
                    return Err(Error::NonFinite { context: "evaluation statistic", user: i, draw: done + r });
                }
                stat_acc[i].add(row[i]);
                rate_acc[i].add(row[k + i]);
            }
            max_budget_err = max_budget_err.max(row[2 * k].abs());
        }
        done += frames;
    }

    let n = n_samples as f64;
    let mean_stat: Vec<f64> = stat_acc.iter().map(|a| a.total() / n).collect();
    let mean_rate: Vec<f64> = rate_acc.iter().map(|a| a.total() / n).collect();
    let qos_target: Vec<f64> = links.iter().map(|l| l.qos_target).collect();
    let rel_margin: Vec<f64> = mean_stat
        .iter()
        .zip(qos_target.iter())
        .map(|(m, t)| m / t - 1.0)
        .collect();
    let xi = rel_margin.iter().map(|r| r.max(0.0)).sum::<f64>() / k as f64;
    let worst = rel_margin.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(EvalReport {
        policy: policy.label().to_string(),
        n_samples,
        qos_ok: rel_margin.iter().all(|&r| r <= tolerance),
        mean_stat,
        qos_target,
        rel_margin,
        xi,
        worst_rel_violation: worst.max(0.0),
        mean_rate_pkt: mean_rate,
        max_budget_rel_err: max_budget_err,
        total_bandwidth_hz: w.iter().sum(),
        tolerance,
    })
}
