//! Globally optimal policy for the symmetric scenario (all users at the
//! same distance, hence the same path gain and the same per-user bandwidth).
//!
//! For a fixed per-user bandwidth the total-power split across users has a
//! closed form derived from the KKT stationarity of the weighted sum of QoS
//! statistics: every user's `(d rate / d power) * exp(-theta rate)` is
//! equalized, the budget binds exactly, and the resulting SNRs satisfy
//! `1 + snr_k = g_k^eta * C` with a gain-independent constant `C`. The
//! minimal bandwidth is then the root of the averaged QoS constraint,
//! found by the stochastic search in [`crate::sa`].

use crate::channel::GainSampler;
use crate::error::{Error, Result};
use crate::math::{derive_seed, stable_mean, Stream};
use crate::qos::LinkParams;
use crate::sa::{solve_bandwidth, SearchOptions, SearchOutcome};
use crate::scenario::Scenario;
use serde::{Deserialize, Serialize};

const LN2: f64 = std::f64::consts::LN_2;

/// Exponent `eta = 1 / (1 + theta * tau * W / (u ln 2))` controlling how
/// strongly the optimal split favors stronger channels.
pub fn power_exponent(link: &LinkParams, w_hz: f64) -> f64 {
    1.0 / (1.0 + link.theta * link.tx_duration_s * w_hz / (link.packet_bits * LN2))
}

/// Closed-form optimal power split for one fading draw.
///
/// Writes one power per user into `out`. The split satisfies
/// `sum_k out[k] == pmax_w` exactly (up to rounding) for every draw. Fails
/// with [`Error::InfeasiblePower`] if the interior-point assumption breaks
/// (a user would need negative power), which at realistic SNRs requires
/// astronomically unlikely fades; `draw` only labels the error message.
pub fn optimal_power(
    link: &LinkParams,
    w_hz: f64,
    pmax_w: f64,
    gains: &[f64],
    out: &mut [f64],
    draw: usize,
) -> Result<()> {
    debug_assert_eq!(gains.len(), out.len());
    let eta = power_exponent(link, w_hz);
    let n0w = link.n0_w_per_hz * w_hz;
    // x = alpha * Pmax / (N0 W): total-budget SNR headroom.
    let x = link.alpha * pmax_w / n0w;
    let mut sum_inv = 0.0;
    let mut sum_eta = 0.0;
    for (k, &g) in gains.iter().enumerate() {
        if !(g > 0.0) || !g.is_finite() {
            return Err(Error::NonFinite { context: "channel gain", user: k, draw });
        }
        sum_inv += 1.0 / g;
        sum_eta += g.powf(eta - 1.0);
    }
    // 1 + snr_k = g_k^eta * common; common > 0 always.
    let common = (x + sum_inv) / sum_eta;
    for (k, &g) in gains.iter().enumerate() {
        let p = n0w / (link.alpha * g) * (g.powf(eta) * common - 1.0);
        if p < 0.0 {
            return Err(Error::InfeasiblePower { user: k, power_w: p, draw });
        }
        out[k] = p;
    }
    Ok(())
}

/// Zero-dispersion warm start: the bandwidth at which the Shannon-limit
/// rate, taken at the mean fading gain under an equal power split, exactly
/// carries the arrivals' effective bandwidth. This ignores the
/// finite-blocklength penalty and fading spread, so it starts below the
/// true requirement; the stochastic search walks it up.
pub fn warm_start_bandwidth(
    link: &LinkParams,
    n_users: usize,
    n_antennas: usize,
    pmax_w: f64,
) -> f64 {
    let g_mean = n_antennas as f64;
    let p = pmax_w / n_users as f64;
    let c = link.tx_duration_s / (link.packet_bits * LN2);
    let shannon = |w: f64| c * w * (1.0 + link.alpha * g_mean * p / (link.n0_w_per_hz * w)).ln();
    // shannon(w) is strictly increasing in w; bracket then bisect.
    let target = link.effective_bw_pkt;
    let (mut lo, mut hi) = (1.0f64, 2.0f64);
    while shannon(hi) < target && hi < 1e15 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if shannon(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo) < 1e-9 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Result of the symmetric-scenario solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetricSolution {
    /// Per-user bandwidth, Hz.
    pub w_per_user_hz: f64,
    /// Total bandwidth over all users, Hz.
    pub total_bandwidth_hz: f64,
    /// Iterations used by the bandwidth search.
    pub iters: usize,
    /// Relative QoS residual measured on the verification batch.
    pub verified_rel_residual: f64,
    /// Search trajectory for diagnostics / CSV export.
    pub trace: Vec<crate::sa::TracePoint>,
}

/// Solve the symmetric scenario: closed-form power plus the minimal shared
/// per-user bandwidth meeting the QoS constraint. Deterministic in `seed`.
pub fn solve_symmetric(
    scenario: &Scenario,
    seed: u64,
    opts: &SearchOptions,
) -> Result<SymmetricSolution> {
    if !scenario.is_symmetric() {
        return Err(Error::invalid(
            "symmetric solver requires all users at the same distance".to_string(),
        ));
    }
    let k = scenario.n_users();
    let link = LinkParams::new(&scenario.system, scenario.distances_m[0])?;
    let pmax = scenario.system.pmax_w;
    let nt = scenario.system.n_antennas;

    let mut sampler = GainSampler::new(k, nt, derive_seed(seed, Stream::Channel, 0))?;
    let mut gains = vec![0.0; k];
    let mut powers = vec![0.0; k];
    let mut draw_no = 0usize;

    let link_ref = &link;
    let avg_stat = move |w: f64, n: usize| -> Result<f64> {
        let mut stats = Vec::with_capacity(n);
        for _ in 0..n {
            sampler.sample_frame(&mut gains);
            optimal_power(link_ref, w, pmax, &gains, &mut powers, draw_no)?;
            let mut acc = 0.0;
            for (idx, (&g, &p)) in gains.iter().zip(powers.iter()).enumerate() {
                let s = link_ref.qos_stat(g, p, w);
                if !s.is_finite() {
                    return Err(Error::NonFinite { context: "qos statistic", user: idx, draw: draw_no });
                }
                acc += s;
            }
            stats.push(acc / k as f64);
            draw_no += 1;
        }
        Ok(stable_mean(&stats))
    };

    let w0 = warm_start_bandwidth(&link, k, nt, pmax);
    let out: SearchOutcome = solve_bandwidth(avg_stat, link.qos_target, w0, opts)?;
    Ok(SymmetricSolution {
        w_per_user_hz: out.w_hz,
        total_bandwidth_hz: out.w_hz * k as f64,
        iters: out.iters,
        verified_rel_residual: out.verified_rel_residual,
        trace: out.trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::SystemParams;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn link_at(d: f64) -> LinkParams {
        LinkParams::new(&SystemParams::default(), d).unwrap()
    }

    #[test]
    fn single_user_gets_the_whole_budget() {
        let link = link_at(200.0);
        let mut out = [0.0];
        for g in [0.3, 1.0, 8.0, 25.0] {
            optimal_power(&link, 2e5, 19.95, &[g], &mut out, 0).unwrap();
            assert!(
                ((out[0] - 19.95) / 19.95).abs() < 1e-12,
                "K=1 power {} for gain {g}",
                out[0]
            );
        }
    }

    #[test]
    fn budget_binds_exactly_for_random_draws() {
        let link = link_at(250.0);
        let pmax = SystemParams::default().pmax_w;
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for k in [2usize, 4, 8, 16] {
            let mut out = vec![0.0; k];
            for draw in 0..200 {
                let gains: Vec<f64> =
                    (0..k).map(|_| rng.gen_range(0.05f64..40.0)).collect();
                optimal_power(&link, 1.8e5, pmax, &gains, &mut out, draw).unwrap();
                let total: f64 = out.iter().sum();
                assert!(
                    ((total - pmax) / pmax).abs() < 1e-9,
                    "sum {total} != {pmax} at k={k} draw={draw}"
                );
                assert!(out.iter().all(|&p| p >= 0.0));
            }
        }
    }

    #[test]
    fn kkt_stationarity_holds() {
        // (d rate / d power) * exp(-theta * rate) equal across users.
        let link = link_at(150.0);
        let pmax = SystemParams::default().pmax_w;
        let w = 2.2e5;
        let gains = [2.0, 7.5, 13.0, 0.9];
        let mut p = [0.0; 4];
        optimal_power(&link, w, pmax, &gains, &mut p, 0).unwrap();
        let mults: Vec<f64> = gains
            .iter()
            .zip(p.iter())
            .map(|(&g, &pk)| link.rate_grad_p(g, pk, w) * (-link.theta * link.rate(g, pk, w)).exp())
            .collect();
        let base = mults[0];
        for m in &mults {
            assert!(
                ((m - base) / base).abs() < 1e-9,
                "multipliers diverge: {mults:?}"
            );
        }
    }

    #[test]
    fn stronger_channel_higher_snr_but_bounded_power_ratio() {
        // The split gives the stronger user the larger SNR while the
        // equalized multiplier keeps powers finite and positive.
        let link = link_at(250.0);
        let w = 2e5;
        let gains = [2.0, 16.0];
        let mut p = [0.0; 2];
        optimal_power(&link, w, 19.95, &gains, &mut p, 0).unwrap();
        let snr0 = link.snr(gains[0], p[0], w);
        let snr1 = link.snr(gains[1], p[1], w);
        assert!(snr1 > snr0);
    }

    #[test]
    fn matches_independent_bisection_oracle() {
        // Independent route to the same split: parameterize the family
        // p_k(y) = (N0 W / (alpha g_k)) (y g_k^eta - 1) by the unknown KKT
        // level y and bisect y until the budget binds.
        let link = link_at(250.0);
        let pmax = SystemParams::default().pmax_w;
        let w = 1.9e5;
        let gains = [1.3, 4.2, 9.9, 22.0, 6.6];
        let eta = power_exponent(&link, w);
        let n0w = link.n0_w_per_hz * w;
        let total_for = |y: f64| -> f64 {
            gains
                .iter()
                .map(|&g| n0w / (link.alpha * g) * (y * g.powf(eta) - 1.0))
                .sum()
        };
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        while total_for(hi) < pmax {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if total_for(mid) < pmax {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let y = 0.5 * (lo + hi);
        let oracle: Vec<f64> = gains
            .iter()
            .map(|&g| n0w / (link.alpha * g) * (y * g.powf(eta) - 1.0))
            .collect();
        let mut got = [0.0; 5];
        optimal_power(&link, w, pmax, &gains, &mut got, 0).unwrap();
        for (a, b) in got.iter().zip(oracle.iter()) {
            assert!(((a - b) / b).abs() < 1e-9, "closed form {a} vs oracle {b}");
        }
    }

    #[test]
    fn permuting_gains_permutes_powers() {
        let link = link_at(180.0);
        let w = 2e5;
        let gains = [3.0, 11.0, 6.5];
        let mut p = [0.0; 3];
        optimal_power(&link, w, 19.95, &gains, &mut p, 0).unwrap();
        let permuted = [11.0, 6.5, 3.0];
        let mut q = [0.0; 3];
        optimal_power(&link, w, 19.95, &permuted, &mut q, 0).unwrap();
        assert!((p[1] - q[0]).abs() < 1e-12 * p[1].abs());
        assert!((p[2] - q[1]).abs() < 1e-12 * p[2].abs());
        assert!((p[0] - q[2]).abs() < 1e-12 * p[0].abs());
    }

    #[test]
    fn infeasible_draw_is_reported_not_clamped() {
        // An absurdly lopsided draw at very low SNR forces a negative
        // component; the solver must refuse rather than silently clip.
        let mut link = link_at(250.0);
        link.alpha *= 1e-6; // crush the SNR so the budget matters
        let gains = [1e-6, 1e4];
        let mut p = [0.0; 2];
        let err = optimal_power(&link, 2e5, 1e-3, &gains, &mut p, 42).unwrap_err();
        match err {
            Error::InfeasiblePower { draw, .. } => assert_eq!(draw, 42),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn warm_start_is_positive_and_below_requirement_scale() {
        let link = link_at(250.0);
        let w0 = warm_start_bandwidth(&link, 4, 8, SystemParams::default().pmax_w);
        assert!(w0 > 1e3 && w0 < 1e7, "warm start {w0}");
        // At the warm start, the Shannon rate at mean gain equals the
        // arrivals' effective bandwidth by construction.
        let c = link.tx_duration_s / (link.packet_bits * LN2);
        let p = SystemParams::default().pmax_w / 4.0;
        let rate =
            c * w0 * (1.0 + link.alpha * 8.0 * p / (link.n0_w_per_hz * w0)).ln();
        assert!(((rate - link.effective_bw_pkt) / link.effective_bw_pkt).abs() < 1e-6);
    }

    #[test]
    fn solve_symmetric_is_deterministic_and_verified() {
        let scenario =
            Scenario::symmetric(SystemParams::default(), 2, 250.0).unwrap();
        let opts = SearchOptions {
            verify_samples: 20_000,
            ..SearchOptions::default()
        };
        let a = solve_symmetric(&scenario, 5, &opts).unwrap();
        let b = solve_symmetric(&scenario, 5, &opts).unwrap();
        assert_eq!(a.w_per_user_hz, b.w_per_user_hz);
        assert!(a.verified_rel_residual.abs() < opts.verify_rel_tol);
        assert!(a.iters <= opts.max_iters);
        assert!((a.total_bandwidth_hz - 2.0 * a.w_per_user_hz).abs() < 1e-9);
        // Different seed still converges, to a nearby bandwidth.
        let c = solve_symmetric(&scenario, 6, &opts).unwrap();
        assert!(((c.w_per_user_hz - a.w_per_user_hz) / a.w_per_user_hz).abs() < 0.05);
    }

    #[test]
    fn asymmetric_scenario_is_refused() {
        let sys = SystemParams::default();
        let scenario = Scenario::from_distances(sys, vec![100.0, 200.0]).unwrap();
        assert!(solve_symmetric(&scenario, 1, &SearchOptions::default()).is_err());
    }
}
