//! Unsupervised primal-dual training of the power-split network together
//! with per-user bandwidths and dual multipliers.
//!
//! The problem: minimize total bandwidth `sum_k W_k` subject to the
//! per-user statistical QoS constraints `E{exp(-theta_k s_k)} <= target_k`,
//! where the rate `s_k` depends on the network's power split and on `W_k`.
//! The Lagrangian is driven to a saddle point by stochastic gradient steps:
//! descent in the network weights and the bandwidths, ascent in the
//! multipliers, all under one diminishing step-size schedule indexed by
//! the frame counter (the several updates within one frame share a step
//! size; decaying per update was tried and freezes the iterates an order
//! of magnitude too early).
//!
//! Internally bandwidths are kept in *normalized* units (`beta = W / w_scale`
//! with `w_scale` the mean warm-start bandwidth) so that weight, bandwidth,
//! and multiplier gradients share an O(1) scale and one convergence
//! statistic can compare them. The multipliers are normalized accordingly;
//! checkpoints store physical values.
//!
//! Training follows a frame-by-frame protocol: each new fading frame joins
//! a sliding window of recent frames, several gradient updates run on that
//! window, and a held-out estimate of the gradient norm (`zeta`) and the
//! QoS violation (`xi`) decides convergence, debounced over consecutive
//! frames and confirmed on a larger batch before the converged flag is set.

use crate::channel::GainSampler;
use crate::error::{Error, Result};
use crate::math::{derive_seed, Stream};
use crate::mlp::{Mlp, MlpGrads};
use crate::qos::LinkParams;
use crate::sa::step_schedule;
use crate::scenario::Scenario;
use crate::symmetric::warm_start_bandwidth;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

/// Hyperparameters of the training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Sliding-window size: how many recent frames form a batch.
    pub batch: usize,
    /// Gradient updates per incoming frame.
    pub inner_iters: usize,
    /// Give up after this many frames without convergence.
    pub max_frames: usize,
    /// Base step size for the network weights.
    pub lr_omega: f64,
    /// Base step size for the normalized bandwidths.
    pub lr_w: f64,
    /// Base step size for the normalized multipliers.
    pub lr_lambda: f64,
    /// Held-out draws per convergence check.
    pub eval_batch: usize,
    /// Run the convergence check every this many frames.
    pub eval_every: usize,
    /// Convergence needs `zeta < zeta_tol_frac * sum(beta)`.
    pub zeta_tol_frac: f64,
    /// Convergence needs `xi < xi_tol`.
    pub xi_tol: f64,
    /// Consecutive passing checks required before confirmation.
    pub debounce: usize,
    /// Draws for the final confirmation pass.
    pub confirm_samples: usize,
    /// The constraint is tightened by this relative margin during training
    /// so the converged policy sits strictly inside the true QoS region.
    pub target_margin: f64,
    /// Confirmation rejects states whose slack exceeds the intended margin
    /// by more than this (over-provisioned bandwidth masquerading as
    /// convergence once the dual re-balances).
    pub slack_tol: f64,
    /// Normalized bandwidths never drop below this.
    pub beta_floor: f64,
    /// Divergence guard: abort if `sum(beta)` exceeds this multiple of its
    /// starting value.
    pub sum_beta_cap_factor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch: 100,
            inner_iters: 10,
            max_frames: 4000,
            lr_omega: 0.2,
            lr_w: 0.02,
            lr_lambda: 0.5,
            eval_batch: 1000,
            eval_every: 1,
            zeta_tol_frac: 0.01,
            xi_tol: 0.01,
            debounce: 3,
            confirm_samples: 20_000,
            target_margin: 0.01,
            slack_tol: 0.015,
            beta_floor: 0.05,
            sum_beta_cap_factor: 100.0,
        }
    }
}

/// One line of the per-frame training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    /// Fading frames consumed so far.
    pub frame: usize,
    /// Gradient updates taken so far.
    pub t: usize,
    /// Total physical bandwidth, Hz.
    pub sum_w_hz: f64,
    /// Held-out gradient-norm statistic (normalized units).
    pub zeta: f64,
    /// Held-out average relative QoS violation.
    pub xi: f64,
    /// Physical multipliers, one per user.
    pub lambda_hz: Vec<f64>,
    /// Physical bandwidths, one per user, Hz.
    pub w_hz: Vec<f64>,
}

/// Result of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub converged: bool,
    pub frames_used: usize,
    pub history: Vec<HistoryRow>,
}

/// Held-out convergence statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalStats {
    /// L1 norm of the mean parameter gradient plus bandwidth-gradient and
    /// residual magnitudes, all in normalized units.
    pub zeta: f64,
    /// Average relative violation of the true QoS targets.
    pub xi: f64,
    /// Worst single-user relative violation of the true targets.
    pub worst_rel_violation: f64,
    /// Largest single-user relative slack below the true targets.
    pub max_rel_slack: f64,
    /// Per-user mean QoS statistic.
    pub mean_stat: Vec<f64>,
}

/// Learner state: network, bandwidths, multipliers, and the bookkeeping
/// needed to resume.
#[derive(Debug, Clone)]
pub struct TrainState {
    mlp: Mlp,
    /// Normalized per-user bandwidth.
    beta: Vec<f64>,
    /// Normalized per-user dual multiplier.
    lambda: Vec<f64>,
    /// Physical meaning of one unit of `beta`, Hz.
    w_scale_hz: f64,
    /// Global gradient-update counter within the current run.
    t: usize,
    /// Frames consumed within the current run.
    frame: usize,
    converged: bool,
    /// Sliding window of recent fading frames. Persisted across runs:
    /// fading is i.i.d. and position-independent, so a retrain after the
    /// users move can hit the ground with full-batch (low-noise) gradients
    /// instead of jolting a nearly-optimal state with one-sample steps.
    window: VecDeque<Vec<f64>>,
    links: Vec<LinkParams>,
    pmax_w: f64,
    n_antennas: usize,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    version: u32,
    n_users: usize,
    w_scale_hz: f64,
    /// Physical bandwidths/multipliers for human consumption.
    w_hz: Vec<f64>,
    lambda_hz: Vec<f64>,
    /// Exact normalized state (`w_hz / w_scale_hz` would lose an ulp).
    beta: Vec<f64>,
    lambda: Vec<f64>,
    t: usize,
    frame: usize,
    converged: bool,
    /// Sliding window of fading frames, so a resumed run updates on
    /// full-size batches from its first frame.
    window: Vec<Vec<f64>>,
}

impl TrainState {
    /// Fresh learner for a scenario. Network weights come from the
    /// init stream of `seed`; bandwidths start at the per-user
    /// zero-dispersion warm start; each multiplier starts at the value
    /// that balances its user's bandwidth gradient at the mean fading
    /// gain under an even power split, so neither primal variable is
    /// yanked before the dual has any information.
    pub fn new(scenario: &Scenario, seed: u64) -> Result<Self> {
        let k = scenario.n_users();
        let links = LinkParams::for_scenario(scenario)?;
        let nt = scenario.system.n_antennas;
        let pmax = scenario.system.pmax_w;
        let w0: Vec<f64> = links
            .iter()
            .map(|l| warm_start_bandwidth(l, k, nt, pmax))
            .collect();
        let w_scale = w0.iter().sum::<f64>() / k as f64;
        let g_mean = nt as f64;
        let p_even = pmax / k as f64;
        let lambda: Vec<f64> = links
            .iter()
            .zip(w0.iter())
            .map(|(l, &w)| {
                let stat = (-l.theta * l.rate(g_mean, p_even, w)).exp();
                let denom = l.theta * w_scale * l.rate_grad_w(g_mean, p_even, w) * stat;
                if denom.is_finite() && denom > 0.0 {
                    1.0 / denom
                } else {
                    1.0
                }
            })
            .collect();
        let mlp = Mlp::new(&[k, k, k, k], derive_seed(seed, Stream::Init, 0))?;
        Ok(TrainState {
            mlp,
            beta: w0.iter().map(|w| w / w_scale).collect(),
            lambda,
            w_scale_hz: w_scale,
            t: 0,
            frame: 0,
            converged: false,
            window: VecDeque::new(),
            links,
            pmax_w: pmax,
            n_antennas: nt,
        })
    }

    /// How many fading frames the sliding window currently holds.
    pub fn buffered_frames(&self) -> usize {
        self.window.len()
    }

    pub fn n_users(&self) -> usize {
        self.links.len()
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn links(&self) -> &[LinkParams] {
        &self.links
    }

    pub fn pmax_w(&self) -> f64 {
        self.pmax_w
    }

    pub fn n_antennas(&self) -> usize {
        self.n_antennas
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn frames_used(&self) -> usize {
        self.frame
    }

    /// Physical per-user bandwidths, Hz.
    pub fn w_hz(&self) -> Vec<f64> {
        self.beta.iter().map(|b| b * self.w_scale_hz).collect()
    }

    /// Physical per-user multipliers.
    pub fn lambda_hz(&self) -> Vec<f64> {
        self.lambda.iter().map(|l| l * self.w_scale_hz).collect()
    }

    /// Total physical bandwidth, Hz.
    pub fn sum_w_hz(&self) -> f64 {
        self.beta.iter().sum::<f64>() * self.w_scale_hz
    }

    /// Power split for one fading draw: softmax fractions times the budget.
    pub fn powers_into(&self, gains: &[f64], out: &mut [f64]) {
        debug_assert_eq!(gains.len(), self.n_users());
        let norm: Vec<f64> = gains.iter().map(|g| g / self.n_antennas as f64).collect();
        self.mlp.infer_into(&norm, out);
        for p in out.iter_mut() {
            *p *= self.pmax_w;
        }
    }

    /// One primal-dual update on the current window of frames.
    fn inner_update(
        &mut self,
        window: &VecDeque<Vec<f64>>,
        cfg: &TrainConfig,
        grads: &mut MlpGrads,
    ) -> Result<()> {
        let k = self.n_users();
        let nb = window.len() as f64;
        grads.zero();
        let mut mean_stat = vec![0.0; k];
        let mut dbeta_constraint = vec![0.0; k];
        let mut grad_probs = vec![0.0; k];
        for gains in window {
            let norm: Vec<f64> = gains.iter().map(|g| g / self.n_antennas as f64).collect();
            let trace = self.mlp.forward(&norm);
            for i in 0..k {
                let link = &self.links[i];
                let g = gains[i];
                let w = self.beta[i] * self.w_scale_hz;
                let p = self.pmax_w * trace.probs[i];
                let stat = (-link.theta * link.rate(g, p, w)).exp();
                if !stat.is_finite() {
                    return Err(Error::NonFinite { context: "training statistic", user: i, draw: self.frame });
                }
                mean_stat[i] += stat / nb;
                let lam_theta = self.lambda[i] * link.theta;
                grad_probs[i] =
                    -lam_theta * self.pmax_w * link.rate_grad_p(g, p, w) * stat / nb;
                dbeta_constraint[i] -=
                    lam_theta * self.w_scale_hz * link.rate_grad_w(g, p, w) * stat / nb;
            }
            self.mlp.backward(&trace, &grad_probs, grads);
        }
        let phi = step_schedule(self.frame.saturating_sub(1));
        self.mlp.sgd_step(grads, cfg.lr_omega * phi);
        for i in 0..k {
            let shifted = self.links[i].qos_target * (1.0 - cfg.target_margin);
            let resid = mean_stat[i] - shifted;
            let dbeta = 1.0 + dbeta_constraint[i];
            self.beta[i] = (self.beta[i] - cfg.lr_w * phi * dbeta).max(cfg.beta_floor);
            self.lambda[i] = (self.lambda[i] + cfg.lr_lambda * phi * resid).max(0.0);
        }
        self.t += 1;
        Ok(())
    }

    /// Held-out convergence statistics on `n` fresh draws.
    fn stats(&self, sampler: &mut GainSampler, n: usize, cfg: &TrainConfig) -> Result<EvalStats> {
        let k = self.n_users();
        let mut grads = MlpGrads::zeroed(&self.mlp);
        let mut mean_stat = vec![0.0; k];
        let mut dbeta_constraint = vec![0.0; k];
        let mut grad_probs = vec![0.0; k];
        let mut gains = vec![0.0; k];
        let nf = n as f64;
        for draw in 0..n {
            sampler.sample_frame(&mut gains);
            let norm: Vec<f64> = gains.iter().map(|g| g / self.n_antennas as f64).collect();
            let trace = self.mlp.forward(&norm);
            for i in 0..k {
                let link = &self.links[i];
                let g = gains[i];
                let w = self.beta[i] * self.w_scale_hz;
                let p = self.pmax_w * trace.probs[i];
                let stat = (-link.theta * link.rate(g, p, w)).exp();
                if !stat.is_finite() {
                    return Err(Error::NonFinite { context: "held-out statistic", user: i, draw });
                }
                mean_stat[i] += stat / nf;
                let lam_theta = self.lambda[i] * link.theta;
                grad_probs[i] =
                    -lam_theta * self.pmax_w * link.rate_grad_p(g, p, w) * stat / nf;
                dbeta_constraint[i] -=
                    lam_theta * self.w_scale_hz * link.rate_grad_w(g, p, w) * stat / nf;
            }
            self.mlp.backward(&trace, &grad_probs, &mut grads);
        }
        let mut zeta = grads.l1_norm();
        let mut xi = 0.0;
        let mut worst: f64 = 0.0;
        let mut slack: f64 = 0.0;
        for i in 0..k {
            let shifted = self.links[i].qos_target * (1.0 - cfg.target_margin);
            zeta += (1.0 + dbeta_constraint[i]).abs();
            zeta += (mean_stat[i] - shifted).abs();
            let rel = mean_stat[i] / self.links[i].qos_target - 1.0;
            xi += rel.max(0.0) / k as f64;
            worst = worst.max(rel.max(0.0));
            slack = slack.max(-rel);
        }
        Ok(EvalStats {
            zeta,
            xi,
            worst_rel_violation: worst,
            max_rel_slack: slack,
            mean_stat,
        })
    }

    /// Run the frame-by-frame protocol until convergence or the frame cap.
    ///
    /// Fresh channel and held-out streams are derived from `seed`, so the
    /// whole run is reproducible. Calling this on an already-trained state
    /// performs a warm retrain: the step schedule restarts but the network,
    /// bandwidths, multipliers, and the frame window carry over, so the
    /// first updates already average over a full batch instead of kicking
    /// a nearly-optimal state around with single-sample gradients.
    pub fn train(&mut self, cfg: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
        self.train_with(cfg, seed, |_| {})
    }

    /// Like [`train`](Self::train), but calls `on_row` as each history row
    /// is produced, so callers can persist the log incrementally and keep
    /// it even when the run later aborts with a divergence error.
    pub fn train_with(
        &mut self,
        cfg: &TrainConfig,
        seed: u64,
        on_row: impl FnMut(&HistoryRow),
    ) -> Result<TrainOutcome> {
        if cfg.batch == 0 || cfg.inner_iters == 0 || cfg.eval_every == 0 {
            return Err(Error::invalid(
                "batch, inner_iters, and eval_every must be positive".to_string(),
            ));
        }
        let mut window = std::mem::take(&mut self.window);
        let result = self.train_loop(&mut window, cfg, seed, on_row);
        self.window = window;
        result
    }

    fn train_loop(
        &mut self,
        window: &mut VecDeque<Vec<f64>>,
        cfg: &TrainConfig,
        seed: u64,
        mut on_row: impl FnMut(&HistoryRow),
    ) -> Result<TrainOutcome> {
        let k = self.n_users();
        let mut channel = GainSampler::new(k, self.n_antennas, derive_seed(seed, Stream::Channel, 0))?;
        let mut heldout = GainSampler::new(k, self.n_antennas, derive_seed(seed, Stream::Eval, 0))?;
        while window.len() > cfg.batch {
            window.pop_front();
        }
        let mut grads = MlpGrads::zeroed(&self.mlp);
        let mut history = Vec::new();
        let mut streak = 0usize;
        let sum_beta_cap = self.beta.iter().sum::<f64>() * cfg.sum_beta_cap_factor;

        self.t = 0;
        self.frame = 0;
        self.converged = false;

        for frame in 1..=cfg.max_frames {
            self.frame = frame;
            let mut gains = vec![0.0; k];
            channel.sample_frame(&mut gains);
            if window.len() == cfg.batch {
                window.pop_front();
            }
            window.push_back(gains);

            for _ in 0..cfg.inner_iters {
                self.inner_update(&window, cfg, &mut grads)?;
            }

            let sum_beta = self.beta.iter().sum::<f64>();
            if !sum_beta.is_finite() || sum_beta > sum_beta_cap {
                return Err(Error::Diverged {
                    frame,
                    what: format!("normalized bandwidth sum reached {sum_beta}"),
                });
            }
            if self.lambda.iter().any(|l| !l.is_finite() || *l > 1e6) {
                return Err(Error::Diverged {
                    frame,
                    what: "multiplier escaped its cap".to_string(),
                });
            }

            if frame % cfg.eval_every == 0 {
                let stats = self.stats(&mut heldout, cfg.eval_batch, cfg)?;
                let row = HistoryRow {
                    frame,
                    t: self.t,
                    sum_w_hz: self.sum_w_hz(),
                    zeta: stats.zeta,
                    xi: stats.xi,
                    lambda_hz: self.lambda_hz(),
                    w_hz: self.w_hz(),
                };
                on_row(&row);
                history.push(row);
                if stats.zeta < cfg.zeta_tol_frac * sum_beta && stats.xi < cfg.xi_tol {
                    streak += 1;
                } else {
                    streak = 0;
                }
                if streak >= cfg.debounce {
                    // Confirmation: the tightened training targets leave a
                    // margin, so a converged policy must show every user
                    // at or below its true target even on a point estimate.
                    let confirm = self.stats(&mut heldout, cfg.confirm_samples, cfg)?;
                    if confirm.worst_rel_violation <= 0.0
                        && confirm.max_rel_slack <= cfg.target_margin + cfg.slack_tol
                        && confirm.zeta < cfg.zeta_tol_frac * sum_beta
                    {
                        self.converged = true;
                        return Ok(TrainOutcome {
                            converged: true,
                            frames_used: frame,
                            history,
                        });
                    }
                    streak = 0;
                }
            }
        }
        Ok(TrainOutcome {
            converged: false,
            frames_used: cfg.max_frames,
            history,
        })
    }

    /// Point the learner at an updated scenario (same user count, new
    /// positions): path gains are recomputed, while the network, the
    /// bandwidths, and the multipliers carry over as a warm start.
    pub fn rebind(&mut self, scenario: &Scenario) -> Result<()> {
        if scenario.n_users() != self.n_users() {
            return Err(Error::ShapeMismatch(format!(
                "cannot rebind a {}-user learner to {} users",
                self.n_users(),
                scenario.n_users()
            )));
        }
        self.links = LinkParams::for_scenario(scenario)?;
        self.pmax_w = scenario.system.pmax_w;
        self.n_antennas = scenario.system.n_antennas;
        self.converged = false;
        Ok(())
    }

    /// Sidecar file that accompanies a network checkpoint.
    pub fn sidecar_path(path: &Path) -> PathBuf {
        PathBuf::from(format!("{}.meta.json", path.display()))
    }

    /// Save the network (text) plus a JSON sidecar holding the bandwidths,
    /// multipliers, and counters.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path)?;
        let mut writer = BufWriter::new(file);
        self.mlp.save(&mut writer)?;
        let sidecar = Sidecar {
            version: 1,
            n_users: self.n_users(),
            w_scale_hz: self.w_scale_hz,
            w_hz: self.w_hz(),
            lambda_hz: self.lambda_hz(),
            beta: self.beta.clone(),
            lambda: self.lambda.clone(),
            t: self.t,
            frame: self.frame,
            converged: self.converged,
            window: self.window.iter().cloned().collect(),
        };
        let side_file = File::create(Self::sidecar_path(path))?;
        serde_json::to_writer_pretty(BufWriter::new(side_file), &sidecar)
            .map_err(|e| Error::Parse(format!("sidecar write failed: {e}")))?;
        Ok(())
    }

    /// Load a checkpoint for the given scenario. The scenario must describe
    /// the same number of users the checkpoint was trained for.
    pub fn load(path: &Path, scenario: &Scenario) -> Result<Self> {
        let mlp = Mlp::load(BufReader::new(File::open(path)?))?;
        let side_file = File::open(Self::sidecar_path(path))?;
        let sidecar: Sidecar = serde_json::from_reader(BufReader::new(side_file))
            .map_err(|e| Error::Parse(format!("sidecar read failed: {e}")))?;
        if sidecar.version != 1 {
            return Err(Error::Parse(format!("unknown sidecar version {}", sidecar.version)));
        }
        let k = scenario.n_users();
        if sidecar.n_users != k || mlp.input_dim() != k || mlp.output_dim() != k {
            return Err(Error::Parse(format!(
                "checkpoint is for {} users, scenario has {k}",
                sidecar.n_users
            )));
        }
        if !(sidecar.w_scale_hz > 0.0)
            || sidecar.beta.len() != k
            || sidecar.lambda.len() != k
            || sidecar.w_hz.len() != k
            || sidecar.lambda_hz.len() != k
        {
            return Err(Error::Parse("sidecar fields malformed".to_string()));
        }
        if sidecar
            .beta
            .iter()
            .chain(sidecar.lambda.iter())
            .any(|v| !v.is_finite() || *v < 0.0)
        {
            return Err(Error::Parse("sidecar holds non-finite or negative values".to_string()));
        }
        if sidecar
            .window
            .iter()
            .any(|row| row.len() != k || row.iter().any(|g| !g.is_finite() || *g <= 0.0))
        {
            return Err(Error::Parse("sidecar frame window malformed".to_string()));
        }
        let links = LinkParams::for_scenario(scenario)?;
        Ok(TrainState {
            mlp,
            beta: sidecar.beta,
            lambda: sidecar.lambda,
            w_scale_hz: sidecar.w_scale_hz,
            t: sidecar.t,
            frame: sidecar.frame,
            converged: sidecar.converged,
            window: sidecar.window.into_iter().collect(),
            links,
            pmax_w: scenario.system.pmax_w,
            n_antennas: scenario.system.n_antennas,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::SystemParams;

    fn tiny_scenario(k: usize) -> Scenario {
        Scenario::symmetric(SystemParams::default(), k, 250.0).unwrap()
    }

    #[test]
    fn fresh_state_has_sane_shape() {
        let s = TrainState::new(&tiny_scenario(4), 1).unwrap();
        assert_eq!(s.n_users(), 4);
        assert_eq!(s.w_hz().len(), 4);
        assert!(s.w_hz().iter().all(|&w| w > 1e3));
        assert!(s.lambda_hz().iter().all(|&l| l > 0.0));
        assert!(!s.converged());
        // Symmetric scenario: all warm starts identical, beta == 1.
        let w = s.w_hz();
        for v in &w {
            assert!(((v - w[0]) / w[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn powers_respect_the_budget_exactly() {
        let s = TrainState::new(&tiny_scenario(4), 3).unwrap();
        let mut out = vec![0.0; 4];
        s.powers_into(&[8.0, 2.0, 11.0, 5.0], &mut out);
        let total: f64 = out.iter().sum();
        let pmax = SystemParams::default().pmax_w;
        assert!(((total - pmax) / pmax).abs() < 1e-12);
        assert!(out.iter().all(|&p| p > 0.0));
    }

    #[test]
    fn short_training_run_is_deterministic() {
        let cfg = TrainConfig {
            max_frames: 5,
            eval_batch: 50,
            confirm_samples: 100,
            ..TrainConfig::default()
        };
        let scenario = tiny_scenario(2);
        let mut a = TrainState::new(&scenario, 9).unwrap();
        let out_a = a.train(&cfg, 9).unwrap();
        let mut b = TrainState::new(&scenario, 9).unwrap();
        let out_b = b.train(&cfg, 9).unwrap();
        assert_eq!(a.w_hz(), b.w_hz());
        assert_eq!(a.lambda_hz(), b.lambda_hz());
        assert_eq!(out_a.history.len(), out_b.history.len());
        for (ra, rb) in out_a.history.iter().zip(out_b.history.iter()) {
            assert_eq!(ra, rb);
        }
    }

    #[test]
    fn history_rows_are_well_formed() {
        let cfg = TrainConfig {
            max_frames: 4,
            eval_batch: 30,
            ..TrainConfig::default()
        };
        let scenario = tiny_scenario(3);
        let mut s = TrainState::new(&scenario, 2).unwrap();
        let out = s.train(&cfg, 2).unwrap();
        assert_eq!(out.history.len(), 4);
        for (i, row) in out.history.iter().enumerate() {
            assert_eq!(row.frame, i + 1);
            assert_eq!(row.t, (i + 1) * cfg.inner_iters);
            assert_eq!(row.lambda_hz.len(), 3);
            assert_eq!(row.w_hz.len(), 3);
            assert!(row.sum_w_hz > 0.0 && row.zeta.is_finite() && row.xi >= 0.0);
        }
    }

    #[test]
    fn checkpoint_round_trips_the_state() {
        let dir = std::env::temp_dir().join(format!("alloc-ckpt-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("state.mlp");
        let scenario = tiny_scenario(3);
        let mut s = TrainState::new(&scenario, 4).unwrap();
        let cfg = TrainConfig {
            max_frames: 3,
            eval_batch: 20,
            ..TrainConfig::default()
        };
        s.train(&cfg, 4).unwrap();
        s.save(&path).unwrap();
        let loaded = TrainState::load(&path, &scenario).unwrap();
        assert_eq!(loaded.w_hz(), s.w_hz());
        assert_eq!(loaded.lambda_hz(), s.lambda_hz());
        assert_eq!(loaded.mlp(), s.mlp());
        assert_eq!(loaded.frames_used(), s.frames_used());
        assert_eq!(loaded.buffered_frames(), s.buffered_frames());
        // Same inference behavior.
        let mut pa = vec![0.0; 3];
        let mut pb = vec![0.0; 3];
        s.powers_into(&[4.0, 9.0, 7.0], &mut pa);
        loaded.powers_into(&[4.0, 9.0, 7.0], &mut pb);
        assert_eq!(pa, pb);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn resume_from_checkpoint_matches_in_memory_resume() {
        let dir = std::env::temp_dir().join(format!("alloc-ckpt-resume-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("state.mlp");
        let scenario = tiny_scenario(2);
        let cfg = TrainConfig {
            max_frames: 4,
            eval_batch: 25,
            confirm_samples: 50,
            ..TrainConfig::default()
        };
        let mut a = TrainState::new(&scenario, 7).unwrap();
        a.train(&cfg, 7).unwrap();
        a.save(&path).unwrap();
        let mut b = TrainState::load(&path, &scenario).unwrap();
        let out_a = a.train(&cfg, 8).unwrap();
        let out_b = b.train(&cfg, 8).unwrap();
        assert_eq!(a.w_hz(), b.w_hz());
        assert_eq!(a.lambda_hz(), b.lambda_hz());
        assert_eq!(out_a.history, out_b.history);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn checkpoint_for_wrong_user_count_is_refused() {
        let dir = std::env::temp_dir().join(format!("alloc-ckpt-mismatch-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("state.mlp");
        let s = TrainState::new(&tiny_scenario(3), 4).unwrap();
        s.save(&path).unwrap();
        let err = TrainState::load(&path, &tiny_scenario(2)).unwrap_err();
        assert!(matches!(err, Error::Parse(_)));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn corrupt_sidecar_is_refused() {
        let dir = std::env::temp_dir().join(format!("alloc-sidecar-bad-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("state.mlp");
        let scenario = tiny_scenario(2);
        let s = TrainState::new(&scenario, 4).unwrap();
        s.save(&path).unwrap();
        std::fs::write(TrainState::sidecar_path(&path), b"{not json").unwrap();
        assert!(TrainState::load(&path, &scenario).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn bad_config_is_rejected() {
        let mut s = TrainState::new(&tiny_scenario(2), 0).unwrap();
        let cfg = TrainConfig { batch: 0, ..TrainConfig::default() };
        assert!(s.train(&cfg, 0).is_err());
    }
}
