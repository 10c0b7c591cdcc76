//! Matched-provisioning bandwidth comparison between two allocation
//! policies.
//!
//! "Policy A needs less bandwidth than policy B" is only meaningful when
//! both requirements are measured by the same procedure. A policy's own
//! bandwidths come from wherever it was built (training, closed form, a
//! stochastic search), each with its own convergence slack, so comparing
//! them directly confounds the power rule with the provisioning artifact.
//!
//! This module freezes each policy's *power rule* and re-provisions both
//! sides identically: on one shared set of fading draws it finds, per
//! user, the minimal bandwidth whose Monte-Carlo mean QoS statistic hits
//! the target exactly. With a frozen power rule each user's statistic
//! depends only on that user's own bandwidth, so the roots are
//! independent one-dimensional problems solved by bisection.
//!
//! Because both sides see the same draws, the difference of the two
//! totals is a paired estimate with far lower variance than either total
//! alone. Its standard error is propagated through the root-finding step
//! (delta method), and the verdict applies the standard-error gate used
//! for every statistical acceptance comparison in this crate: a policy
//! counts as "no worse" when its total does not exceed the other's by
//! more than three standard errors of the difference.

use crate::channel::GainSampler;
use crate::error::{Error, Result};
use crate::evaluator::PowerPolicy;
use crate::exec::{map_rows, ExecMode};
use crate::math::{derive_seed, StableAcc, Stream};
use crate::qos::LinkParams;
use serde::{Deserialize, Serialize};

/// Bisection stops when the bracket is this narrow relative to its upper
/// end; far below any statistical resolution of the comparison.
const BRACKET_REL_TOL: f64 = 1e-12;

/// Hard cap on bisection steps per user (a ~60-step bisection already
/// reaches `BRACKET_REL_TOL`).
const MAX_BISECT_STEPS: usize = 200;

/// Relative step for the central-difference slope of the mean statistic
/// at the provisioned bandwidth. The mean over fixed draws is smooth in
/// the bandwidth, so this is accurate to O(step²).
const SLOPE_REL_STEP: f64 = 1e-4;

/// One side of a matched comparison: the per-user minimal bandwidths the
/// policy's power rule needs on the shared draws, and their total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequiredBandwidth {
    pub policy: String,
    pub w_hz: Vec<f64>,
    pub total_hz: f64,
}

/// Outcome of re-provisioning two policies on common fading draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthComparison {
    pub a: RequiredBandwidth,
    pub b: RequiredBandwidth,
    /// Fading draws shared by both sides.
    pub n_samples: usize,
    /// `a.total_hz - b.total_hz`; negative means A needs less bandwidth.
    pub diff_hz: f64,
    /// Standard error of `diff_hz` from the paired draws (delta method).
    pub se_hz: f64,
    /// Comparison tolerance: three standard errors (with a vanishing
    /// floor so exact ties compare cleanly).
    pub tolerance_hz: f64,
    /// True when A's requirement does not exceed B's beyond `tolerance_hz`.
    pub a_no_worse: bool,
}

/// Per-user `[gain, power]` pairs for one policy on the shared draws,
/// plus the per-draw QoS statistics at the provisioned bandwidth and the
/// slope of the mean statistic there (both needed for the standard
/// error).
struct ProvisionedUser {
    w_hz: f64,
    stats: Vec<f64>,
    slope: f64,
}

/// Mean of `exp(-theta * rate)` over the draws in `gp` (stride-2
/// `[gain, power]` rows) at bandwidth `w_hz`. Row-parallel map, bitwise
/// deterministic across execution modes thanks to the sequential
/// compensated reduction.
fn mean_stat(
    link: &LinkParams,
    gp: &[f64],
    w_hz: f64,
    mode: ExecMode,
    scratch: &mut [f64],
    user: usize,
) -> Result<f64> {
    let n = gp.len() / 2;
    let out = &mut scratch[..n];
    map_rows(mode, gp, 2, out, 1, |row, o| {
        o[0] = link.qos_stat(row[0], row[1], w_hz);
    });
    let mut acc = StableAcc::new();
    for (draw, s) in out.iter().enumerate() {
        if !s.is_finite() {
            return Err(Error::NonFinite { context: "matched-provisioning statistic", user, draw });
        }
        acc.add(*s);
    }
    Ok(acc.total() / n as f64)
}

/// Minimal bandwidth at which the mean statistic meets the target, found
/// by bracketing around `w0` and bisecting. The mean statistic decreases
/// in bandwidth throughout the operating region, so the bracket invariant
/// is `stat(lo) > target >= stat(hi)`.
fn provision_user(
    link: &LinkParams,
    gp: &[f64],
    w0: f64,
    mode: ExecMode,
    scratch: &mut [f64],
    user: usize,
) -> Result<ProvisionedUser> {
    if !(w0.is_finite() && w0 > 0.0) {
        return Err(Error::invalid(format!(
            "user {user}: starting bandwidth guess must be positive, got {w0}"
        )));
    }
    let target = link.qos_target;
    let mut stat = |w: f64| mean_stat(link, gp, w, mode, scratch, user);

    let (mut lo, mut hi);
    if stat(w0)? > target {
        // The guess is infeasible: grow the upper end until it satisfies.
        lo = w0;
        hi = w0;
        loop {
            hi *= 2.0;
            if stat(hi)? <= target {
                break;
            }
            if hi > w0 * 1e6 {
                return Err(Error::invalid(format!(
                    "user {user}: no bandwidth up to {hi} Hz meets the QoS target under this power rule"
                )));
            }
        }
    } else {
        // The guess already satisfies: shrink the lower end until it fails.
        hi = w0;
        lo = w0;
        loop {
            lo *= 0.5;
            if stat(lo)? > target {
                break;
            }
            if lo < 1.0 {
                return Err(Error::invalid(format!(
                    "user {user}: QoS target is met even at {lo} Hz; target bracket is degenerate"
                )));
            }
        }
    }

    for _ in 0..MAX_BISECT_STEPS {
        if hi - lo <= BRACKET_REL_TOL * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if stat(mid)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let w = 0.5 * (lo + hi);

    // Per-draw statistics and mean-statistic slope at the root, for the
    // delta-method standard error of the provisioned bandwidth.
    let n = gp.len() / 2;
    let mut stats = vec![0.0; n];
    map_rows(mode, gp, 2, &mut stats, 1, |row, o| {
        o[0] = link.qos_stat(row[0], row[1], w);
    });
    let dw = SLOPE_REL_STEP * w;
    let slope = (stat(w + dw)? - stat(w - dw)?) / (2.0 * dw);
    if !slope.is_finite() || slope >= 0.0 {
        return Err(Error::invalid(format!(
            "user {user}: mean QoS statistic is not decreasing at {w} Hz (slope {slope}); \
             the bandwidth requirement is ill-defined there"
        )));
    }
    Ok(ProvisionedUser { w_hz: w, stats, slope })
}

/// Freeze `policy`'s power rule on the shared `gains` block and provision
/// every user's minimal bandwidth, starting the searches from the
/// policy's own bandwidths.
fn provision_policy(
    links: &[LinkParams],
    policy: &dyn PowerPolicy,
    gains: &[f64],
    mode: ExecMode,
    scratch: &mut [f64],
) -> Result<Vec<ProvisionedUser>> {
    let k = links.len();
    let n = gains.len() / k;

    // Power table: the rule's split for every shared draw, computed once.
    let mut powers = vec![0.0; n * k];
    map_rows(mode, gains, k, &mut powers, k, |g, out| {
        policy.powers(g, out);
    });
    for (idx, p) in powers.iter().enumerate() {
        if !p.is_finite() {
            return Err(Error::NonFinite {
                context: "matched-provisioning power rule",
                user: idx % k,
                draw: idx / k,
            });
        }
    }

    let mut users = Vec::with_capacity(k);
    for i in 0..k {
        let mut gp = vec![0.0; 2 * n];
        for d in 0..n {
            gp[2 * d] = gains[d * k + i];
            gp[2 * d + 1] = powers[d * k + i];
        }
        users.push(provision_user(
            &links[i],
            &gp,
            policy.bandwidths_hz()[i],
            mode,
            scratch,
            i,
        )?);
    }
    Ok(users)
}

/// Re-provision policies `a` and `b` on one shared set of fading draws
/// and compare their total bandwidth requirements under the
/// standard-error gate. The policies' own `bandwidths_hz()` are used only
/// as starting guesses for the searches.
///
/// Deterministic in `seed` and identical across execution modes.
pub fn compare_required_bandwidth(
    links: &[LinkParams],
    a: &dyn PowerPolicy,
    b: &dyn PowerPolicy,
    n_antennas: usize,
    n_samples: usize,
    seed: u64,
    mode: ExecMode,
) -> Result<BandwidthComparison> {
    let k = links.len();
    if k == 0 {
        return Err(Error::invalid("comparison needs at least one user".to_string()));
    }
    for side in [a, b] {
        if side.bandwidths_hz().len() != k {
            return Err(Error::ShapeMismatch(format!(
                "policy '{}' covers {} users, scenario has {k}",
                side.label(),
                side.bandwidths_hz().len()
            )));
        }
    }
    if n_samples < 2 {
        return Err(Error::invalid("comparison needs at least two draws".to_string()));
    }

    let mut sampler = GainSampler::new(k, n_antennas, derive_seed(seed, Stream::Eval, 0))?;
    let gains = sampler.sample_block(n_samples);
    let mut scratch = vec![0.0; n_samples];

    let ua = provision_policy(links, a, &gains, mode, &mut scratch)?;
    let ub = provision_policy(links, b, &gains, mode, &mut scratch)?;

    // Delta method on the paired draws: each provisioned bandwidth moves
    // with the empirical mean statistic as dW = d(mean)/slope, so the
    // per-draw contribution to the *difference* of totals is
    //   v_n = sum_i stats_a[n][i]/slope_a[i] - stats_b[n][i]/slope_b[i],
    // and Var(diff) = Var(v)/n.
    let mut v = vec![0.0; n_samples];
    for (side, sign) in [(&ua, 1.0), (&ub, -1.0)] {
        for u in side.iter() {
            for (vn, s) in v.iter_mut().zip(u.stats.iter()) {
                *vn += sign * s / u.slope;
            }
        }
    }
    let mut mean_acc = StableAcc::new();
    for x in &v {
        mean_acc.add(*x);
    }
    let v_mean = mean_acc.total() / n_samples as f64;
    let mut var_acc = StableAcc::new();
    for x in &v {
        let d = x - v_mean;
        var_acc.add(d * d);
    }
    let var_v = var_acc.total() / (n_samples as f64 - 1.0);
    let se = (var_v / n_samples as f64).sqrt();

    let finish = |side: &dyn PowerPolicy, users: &[ProvisionedUser]| RequiredBandwidth {
        policy: side.label().to_string(),
        w_hz: users.iter().map(|u| u.w_hz).collect(),
        total_hz: {
            let mut acc = StableAcc::new();
            users.iter().for_each(|u| acc.add(u.w_hz));
            acc.total()
        },
    };
    let ra = finish(a, &ua);
    let rb = finish(b, &ub);
    let diff = ra.total_hz - rb.total_hz;
    let tolerance = (3.0 * se).max(1e-9 * rb.total_hz.abs());
    Ok(BandwidthComparison {
        n_samples,
        diff_hz: diff,
        se_hz: se,
        tolerance_hz: tolerance,
        a_no_worse: diff <= tolerance,
        a: ra,
        b: rb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluator::EqualPowerPolicy;
    use crate::sa::SearchOptions;
    use crate::scenario::{Scenario, SystemParams};
    use crate::symmetric::solve_symmetric;

    fn scenario(k: usize) -> Scenario {
        Scenario::symmetric(SystemParams::default(), k, 250.0).unwrap()
    }

    /// Even split with the right shape; the comparison re-provisions, so
    /// the starting bandwidths only need to be in a sane range.
    fn equal_guess(sc: &Scenario, w_guess: f64) -> EqualPowerPolicy {
        EqualPowerPolicy::new(vec![w_guess; sc.n_users()], sc.system.pmax_w)
    }

    #[test]
    fn self_comparison_is_an_exact_tie() {
        let sc = scenario(2);
        let links = LinkParams::for_scenario(&sc).unwrap();
        let pol = equal_guess(&sc, 1.5e5);
        let cmp =
            compare_required_bandwidth(&links, &pol, &pol, 8, 4_000, 7, ExecMode::default())
                .unwrap();
        assert_eq!(cmp.a.w_hz, cmp.b.w_hz);
        assert_eq!(cmp.diff_hz, 0.0);
        assert!(cmp.a_no_worse);
    }

    #[test]
    fn optimal_power_needs_no_more_bandwidth_than_equal() {
        let sc = scenario(4);
        let links = LinkParams::for_scenario(&sc).unwrap();
        let opts = SearchOptions { verify_samples: 20_000, ..SearchOptions::default() };
        let sol = solve_symmetric(&sc, 11, &opts).unwrap();
        let optimal = crate::evaluator::OptimalSymmetricPolicy::new(
            links[0].clone(),
            4,
            sol.w_per_user_hz,
            sc.system.pmax_w,
        );
        let equal = equal_guess(&sc, sol.w_per_user_hz);
        let cmp = compare_required_bandwidth(
            &links,
            &optimal,
            &equal,
            8,
            60_000,
            23,
            ExecMode::default(),
        )
        .unwrap();
        assert!(
            cmp.a_no_worse,
            "optimal {} vs equal {} (diff {}, tol {})",
            cmp.a.total_hz, cmp.b.total_hz, cmp.diff_hz, cmp.tolerance_hz
        );
        // The paired estimate resolves the (small) true gap: the optimal
        // rule strictly saves bandwidth here.
        assert!(cmp.diff_hz < 0.0, "diff {} se {}", cmp.diff_hz, cmp.se_hz);
        assert!(cmp.se_hz > 0.0);
    }

    #[test]
    fn lopsided_power_rule_loses_the_comparison() {
        // A rule that starves user 0 must need more total bandwidth.
        struct Starved {
            w_hz: Vec<f64>,
            pmax_w: f64,
        }
        impl crate::evaluator::PowerPolicy for Starved {
            fn label(&self) -> &'static str {
                "starved"
            }
            fn bandwidths_hz(&self) -> &[f64] {
                &self.w_hz
            }
            fn power_budget_w(&self) -> f64 {
                self.pmax_w
            }
            fn powers(&self, gains: &[f64], out: &mut [f64]) {
                let k = gains.len() as f64;
                let rich = self.pmax_w * (1.0 - 0.01 / k) / (k - 1.0);
                out.iter_mut().for_each(|p| *p = rich);
                out[0] = self.pmax_w * 0.01 / k;
            }
        }
        let sc = scenario(2);
        let links = LinkParams::for_scenario(&sc).unwrap();
        let starved = Starved { w_hz: vec![1.5e5; 2], pmax_w: sc.system.pmax_w };
        let equal = equal_guess(&sc, 1.5e5);
        let cmp =
            compare_required_bandwidth(&links, &starved, &equal, 8, 20_000, 5, ExecMode::default())
                .unwrap();
        assert!(cmp.diff_hz > cmp.tolerance_hz, "diff {} tol {}", cmp.diff_hz, cmp.tolerance_hz);
        assert!(!cmp.a_no_worse);
        // Equal wins the reversed comparison.
        let rev =
            compare_required_bandwidth(&links, &equal, &starved, 8, 20_000, 5, ExecMode::default())
                .unwrap();
        assert!(rev.a_no_worse);
        assert_eq!(rev.diff_hz, -cmp.diff_hz);
    }

    #[test]
    fn provisioning_matches_the_stochastic_search_sizing() {
        // The equal-power baseline sized by its own stochastic search and
        // by the matched bisection agree to within the search tolerance.
        let sc = scenario(2);
        let links = LinkParams::for_scenario(&sc).unwrap();
        let opts = SearchOptions { verify_samples: 20_000, ..SearchOptions::default() };
        let solved = EqualPowerPolicy::solve(&sc, 13, &opts).unwrap();
        let cmp = compare_required_bandwidth(
            &links,
            &solved,
            &solved,
            8,
            50_000,
            13,
            ExecMode::default(),
        )
        .unwrap();
        for (w_search, w_bisect) in solved.bandwidths_hz().iter().zip(cmp.a.w_hz.iter()) {
            let rel = (w_search - w_bisect).abs() / w_bisect;
            assert!(rel < 0.01, "search {w_search} vs bisect {w_bisect} (rel {rel})");
        }
    }

    #[test]
    fn modes_agree_bitwise() {
        let sc = scenario(3);
        let links = LinkParams::for_scenario(&sc).unwrap();
        let pol = equal_guess(&sc, 1.5e5);
        let a = compare_required_bandwidth(&links, &pol, &pol, 8, 5_000, 3, ExecMode::Sequential)
            .unwrap();
        let b = compare_required_bandwidth(&links, &pol, &pol, 8, 5_000, 3, ExecMode::Parallel)
            .unwrap();
        assert_eq!(a.a.w_hz, b.a.w_hz);
        assert_eq!(a.se_hz, b.se_hz);
        assert_eq!(a.diff_hz, b.diff_hz);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let sc = scenario(3);
        let links = LinkParams::for_scenario(&sc).unwrap();
        let good = equal_guess(&sc, 1.5e5);
        let bad = EqualPowerPolicy::new(vec![1.5e5; 2], sc.system.pmax_w);
        assert!(compare_required_bandwidth(
            &links,
            &good,
            &bad,
            8,
            100,
            1,
            ExecMode::default()
        )
        .is_err());
    }
}
