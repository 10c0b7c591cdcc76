//! System-level parameters and user layouts.
//!
//! All quantities are stored in SI units (watts, hertz, seconds). Decibel
//! forms exist only at the configuration boundary, via the explicit
//! conversion helpers below.

use crate::error::{Error, Result};
use crate::math::{derive_seed, Stream};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// Convert a dBm figure to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Convert watts to dBm.
pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

/// Convert a dB ratio to linear scale.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Large-scale channel gain (path loss) at `distance_m` meters, from the
/// urban log-distance model `-(35.3 + 37.6 log10 d)` dB.
pub fn path_gain(distance_m: f64) -> f64 {
    db_to_linear(-(35.3 + 37.6 * distance_m.log10()))
}

/// Physical constants and QoS targets shared by every user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Overall packet-loss budget per user (split evenly between decoding
    /// error and queueing delay violation).
    pub epsilon_max: f64,
    /// Frame duration in seconds.
    pub frame_duration_s: f64,
    /// Portion of a frame spent on data transmission, in seconds.
    pub tx_duration_s: f64,
    /// End-to-end delay bound in frames.
    pub dmax_frames: f64,
    /// Frames consumed by transmission itself.
    pub dt_frames: f64,
    /// Frames reserved for coding/processing.
    pub dc_frames: f64,
    /// Total transmit power budget at the base station, in watts.
    pub pmax_w: f64,
    /// Number of transmit antennas (also the fading shape parameter under
    /// maximum-ratio transmission).
    pub n_antennas: usize,
    /// Single-sided noise spectral density, W/Hz.
    pub n0_w_per_hz: f64,
    /// Packet size in bits.
    pub packet_bits: f64,
    /// Mean packet arrival rate, packets per frame.
    pub arrival_pkt_per_frame: f64,
    /// Closest allowed user distance, meters.
    pub min_distance_m: f64,
    /// Cell radius (farthest user distance), meters.
    pub cell_radius_m: f64,
}

impl Default for SystemParams {
    fn default() -> Self {
        SystemParams {
            epsilon_max: 1e-5,
            frame_duration_s: 1e-4,
            tx_duration_s: 5e-5,
            dmax_frames: 10.0,
            dt_frames: 1.0,
            dc_frames: 1.0,
            pmax_w: dbm_to_watts(43.0),
            n_antennas: 8,
            n0_w_per_hz: dbm_to_watts(-173.0),
            packet_bits: 160.0,
            arrival_pkt_per_frame: 0.2,
            min_distance_m: 50.0,
            cell_radius_m: 250.0,
        }
    }
}

impl SystemParams {
    /// Queueing-delay budget in frames: the end-to-end bound minus the
    /// frames spent transmitting and decoding.
    pub fn queue_delay_frames(&self) -> f64 {
        self.dmax_frames - self.dt_frames - self.dc_frames
    }

    /// Check the documented preconditions.
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_max > 0.0 && self.epsilon_max < 1.0) {
            return Err(Error::invalid(format!(
                "epsilon_max must lie in (0,1), got {}",
                self.epsilon_max
            )));
        }
        for (name, v) in [
            ("frame_duration_s", self.frame_duration_s),
            ("tx_duration_s", self.tx_duration_s),
            ("pmax_w", self.pmax_w),
            ("n0_w_per_hz", self.n0_w_per_hz),
            ("packet_bits", self.packet_bits),
            ("arrival_pkt_per_frame", self.arrival_pkt_per_frame),
            ("min_distance_m", self.min_distance_m),
            ("cell_radius_m", self.cell_radius_m),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.tx_duration_s > self.frame_duration_s {
            return Err(Error::invalid(
                "tx_duration_s cannot exceed frame_duration_s".to_string(),
            ));
        }
        if self.queue_delay_frames() <= 0.0 {
            return Err(Error::invalid(format!(
                "delay bound leaves no queueing budget: dmax={} dt={} dc={}",
                self.dmax_frames, self.dt_frames, self.dc_frames
            )));
        }
        if self.n_antennas == 0 {
            return Err(Error::invalid("n_antennas must be at least 1".to_string()));
        }
        if self.min_distance_m >= self.cell_radius_m {
            return Err(Error::invalid(format!(
                "min_distance_m ({}) must be below cell_radius_m ({})",
                self.min_distance_m, self.cell_radius_m
            )));
        }
        Ok(())
    }
}

/// A concrete drop of users: shared system parameters plus per-user
/// distances from the base station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub system: SystemParams,
    /// Distance of each user from the base station, meters.
    pub distances_m: Vec<f64>,
}

impl Scenario {
    /// All `k` users at the same distance (the symmetric benchmark case).
    pub fn symmetric(system: SystemParams, k: usize, distance_m: f64) -> Result<Self> {
        system.validate()?;
        if k == 0 {
            return Err(Error::invalid("need at least one user".to_string()));
        }
        if !(distance_m >= system.min_distance_m && distance_m <= system.cell_radius_m) {
            return Err(Error::invalid(format!(
                "distance {distance_m} m outside [{}, {}] m",
                system.min_distance_m, system.cell_radius_m
            )));
        }
        Ok(Scenario {
            system,
            distances_m: vec![distance_m; k],
        })
    }

    /// `k` users dropped uniformly along the road segment between the
    /// minimum distance and the cell edge. Deterministic in the seed.
    pub fn road_drop(system: SystemParams, k: usize, master_seed: u64, trial: u64) -> Result<Self> {
        system.validate()?;
        if k == 0 {
            return Err(Error::invalid("need at least one user".to_string()));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(master_seed, Stream::Scenario, trial));
        let lo = system.min_distance_m;
        let hi = system.cell_radius_m;
        let distances_m = (0..k).map(|_| rng.gen_range(lo..hi)).collect();
        Ok(Scenario { system, distances_m })
    }

    /// Build a scenario from explicit distances (already in meters).
    pub fn from_distances(system: SystemParams, distances_m: Vec<f64>) -> Result<Self> {
        system.validate()?;
        if distances_m.is_empty() {
            return Err(Error::invalid("need at least one user".to_string()));
        }
        for &d in &distances_m {
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::invalid(format!("distance must be positive, got {d}")));
            }
        }
        Ok(Scenario { system, distances_m })
    }

    /// Move every user `delta_m` meters along the road, reflecting off the
    /// segment ends so distances stay within the allowed band. Models user
    /// motion between two consecutive optimization episodes.
    pub fn advance_positions(&mut self, delta_m: f64) {
        let lo = self.system.min_distance_m;
        let hi = self.system.cell_radius_m;
        let span = hi - lo;
        for d in &mut self.distances_m {
            let mut x = (*d - lo + delta_m).rem_euclid(2.0 * span);
            if x > span {
                x = 2.0 * span - x;
            }
            *d = lo + x;
        }
    }

    /// Number of users.
    pub fn n_users(&self) -> usize {
        self.distances_m.len()
    }

    /// Large-scale gain of each user.
    pub fn path_gains(&self) -> Vec<f64> {
        self.distances_m.iter().map(|&d| path_gain(d)).collect()
    }

    /// True when every user sits at the same distance.
    pub fn is_symmetric(&self) -> bool {
        self.distances_m
            .iter()
            .all(|&d| d == self.distances_m[0])
    }
}
