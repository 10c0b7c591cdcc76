//! Quality-of-service core: delay-exponent and effective-bandwidth algebra,
//! the short-packet achievable rate, and its exact partial derivatives.
//!
//! Units: rates are in packets per frame, bandwidth in Hz, power in watts.
//! The rate expression may legitimately be negative in deep fades; callers
//! rely on it being returned untouched (the QoS statistic `e^{-theta s}`
//! then simply exceeds one).

use crate::error::Result;
use crate::math::gaussian_q_inv;
use crate::scenario::{Scenario, SystemParams};
use serde::{Deserialize, Serialize};

const LN2: f64 = std::f64::consts::LN_2;

/// Delay QoS exponent `theta` implied by the arrival rate, the queueing
/// delay budget, and the delay-violation probability target (half the
/// overall loss budget).
pub fn qos_exponent(system: &SystemParams) -> f64 {
    let eps_q = 0.5 * system.epsilon_max;
    let dq = system.queue_delay_frames();
    (1.0 - eps_q.ln() / (system.arrival_pkt_per_frame * dq)).ln()
}

/// Effective bandwidth of the Poisson packet arrivals, in packets per
/// frame: the constant service rate that keeps the delay-violation
/// probability at its target under exponent `theta`.
pub fn effective_bandwidth(system: &SystemParams) -> f64 {
    let theta = qos_exponent(system);
    system.arrival_pkt_per_frame * (theta.exp() - 1.0) / theta
}

/// Everything needed to evaluate one user's rate and QoS statistic in a hot
/// loop, with the scenario-level algebra done once up front.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    /// Large-scale channel gain (path loss), linear.
    pub alpha: f64,
    /// Noise spectral density, W/Hz.
    pub n0_w_per_hz: f64,
    /// Data transmission time per frame, seconds.
    pub tx_duration_s: f64,
    /// Packet size, bits.
    pub packet_bits: f64,
    /// Delay QoS exponent.
    pub theta: f64,
    /// Inverse Gaussian tail at the decoding error target.
    pub qinv_eps_c: f64,
    /// Effective bandwidth of the arrivals, packets/frame.
    pub effective_bw_pkt: f64,
    /// Right-hand side of the linearized QoS constraint:
    /// `exp(-theta * effective_bw)`.
    pub qos_target: f64,
}

impl LinkParams {
    /// Assemble the per-user bundle for a given distance.
    pub fn new(system: &SystemParams, distance_m: f64) -> Result<Self> {
        system.validate()?;
        let theta = qos_exponent(system);
        let be = effective_bandwidth(system);
        let eps_c = 0.5 * system.epsilon_max;
        Ok(LinkParams {
            alpha: crate::scenario::path_gain(distance_m),
            n0_w_per_hz: system.n0_w_per_hz,
            tx_duration_s: system.tx_duration_s,
            packet_bits: system.packet_bits,
            theta,
            qinv_eps_c: gaussian_q_inv(eps_c)?,
            effective_bw_pkt: be,
            qos_target: (-theta * be).exp(),
        })
    }

    /// One bundle per user of the scenario.
    pub fn for_scenario(scenario: &Scenario) -> Result<Vec<LinkParams>> {
        scenario
            .distances_m
            .iter()
            .map(|&d| LinkParams::new(&scenario.system, d))
            .collect()
    }

    /// Receive SNR for fading gain `g`, transmit power `p_w`, bandwidth
    /// `w_hz`.
    #[inline]
    pub fn snr(&self, g: f64, p_w: f64, w_hz: f64) -> f64 {
        self.alpha * g * p_w / (self.n0_w_per_hz * w_hz)
    }

    /// Short-packet achievable rate in packets per frame:
    /// `(tau W / (u ln2)) * [ln(1+snr) - Qinv(eps_c)/sqrt(tau W)]`.
    ///
    /// The channel-dispersion factor is taken at its high-SNR limit of one,
    /// which under-estimates the rate and therefore keeps the QoS guarantee
    /// conservative. May return a negative value; callers must not clamp.
    #[inline]
    pub fn rate(&self, g: f64, p_w: f64, w_hz: f64) -> f64 {
        let tw = self.tx_duration_s * w_hz;
        let snr = self.snr(g, p_w, w_hz);
        tw / (self.packet_bits * LN2) * ((1.0 + snr).ln() - self.qinv_eps_c / tw.sqrt())
    }

    /// Exact partial derivative of the rate with respect to transmit power.
    #[inline]
    pub fn rate_grad_p(&self, g: f64, p_w: f64, w_hz: f64) -> f64 {
        let snr = self.snr(g, p_w, w_hz);
        self.tx_duration_s / (self.packet_bits * LN2) * self.alpha * g
            / (self.n0_w_per_hz * (1.0 + snr))
    }

    /// Exact partial derivative of the rate with respect to bandwidth.
    #[inline]
    pub fn rate_grad_w(&self, g: f64, p_w: f64, w_hz: f64) -> f64 {
        let snr = self.snr(g, p_w, w_hz);
        let c = self.tx_duration_s / (self.packet_bits * LN2);
        c * ((1.0 + snr).ln() - snr / (1.0 + snr))
            - self.qinv_eps_c / (2.0 * self.packet_bits * LN2)
                * (self.tx_duration_s / w_hz).sqrt()
    }

    /// Per-draw QoS statistic `exp(-theta * rate)`. The linearized QoS
    /// constraint requires its fading average to stay at or below
    /// [`LinkParams::qos_target`].
    #[inline]
    pub fn qos_stat(&self, g: f64, p_w: f64, w_hz: f64) -> f64 {
        (-self.theta * self.rate(g, p_w, w_hz)).exp()
    }
}

/// Channel dispersion `V = 1 - 1/(1+snr)^2` (diagnostic only; the rate
/// formula itself uses the conservative high-SNR limit `V = 1`).
pub fn channel_dispersion(snr: f64) -> f64 {
    let one_plus = 1.0 + snr;
    1.0 - 1.0 / (one_plus * one_plus)
}

/// Check that the accepted QoS pair reproduces the delay-violation budget:
/// `exp(-theta * effective_bw * queue_delay) == epsilon_max / 2`.
/// Returns the relative error of the identity.
pub fn delay_budget_identity_error(system: &SystemParams) -> f64 {
    let theta = qos_exponent(system);
    let be = effective_bandwidth(system);
    let lhs = (-theta * be * system.queue_delay_frames()).exp();
    let rhs = 0.5 * system.epsilon_max;
    ((lhs - rhs) / rhs).abs()
}
