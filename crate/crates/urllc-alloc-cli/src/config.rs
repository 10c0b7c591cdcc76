//! Run configuration: one TOML file per scenario.
//!
//! Decibel units (dBm, dB) appear only here, at the boundary; everything
//! behind [`SystemSection::to_params`] works in SI units. Every field has
//! a default matching the reference urban-road setup, so a config file
//! only states what differs. Unknown keys are rejected — a typo should
//! fail the run, not silently fall back to a default.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;
use urllc_alloc::scenario::dbm_to_watts;
use urllc_alloc::{ExecMode, Scenario, SearchOptions, SystemParams, TrainConfig};

/// Geometry selector for [`ScenarioSection`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    /// Every user at the same distance from the base station.
    Symmetric,
    /// Users dropped uniformly along the road; deterministic in the seed
    /// and the drop index.
    Road,
    /// Distances listed verbatim in the config.
    Explicit,
}

/// `[scenario]` — who is being served and where they stand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub kind: ScenarioKind,
    /// User count for `symmetric` and `road` kinds.
    pub n_users: usize,
    /// Common distance for the `symmetric` kind, meters.
    pub distance_m: f64,
    /// Which random drop to use for the `road` kind.
    pub drop_index: u64,
    /// Per-user distances for the `explicit` kind, meters.
    pub distances_m: Vec<f64>,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        ScenarioSection {
            kind: ScenarioKind::Symmetric,
            n_users: 4,
            distance_m: 250.0,
            drop_index: 0,
            distances_m: Vec::new(),
        }
    }
}

impl ScenarioSection {
    /// Materialize the scenario with `n_users` overridden (the sweep and
    /// study commands vary the user count).
    pub fn build_with_users(
        &self,
        system: &SystemParams,
        seed: u64,
        n_users: usize,
    ) -> Result<Scenario> {
        let s = match self.kind {
            ScenarioKind::Symmetric => {
                Scenario::symmetric(system.clone(), n_users, self.distance_m)?
            }
            ScenarioKind::Road => {
                Scenario::road_drop(system.clone(), n_users, seed, self.drop_index)?
            }
            ScenarioKind::Explicit => {
                if self.distances_m.is_empty() {
                    bail!("scenario.kind = \"explicit\" needs a non-empty distances_m list");
                }
                if self.distances_m.len() != n_users {
                    bail!(
                        "explicit scenario lists {} distances, cannot provide {n_users} users",
                        self.distances_m.len()
                    );
                }
                Scenario::from_distances(system.clone(), self.distances_m.clone())?
            }
        };
        Ok(s)
    }

    pub fn build(&self, system: &SystemParams, seed: u64) -> Result<Scenario> {
        let n = match self.kind {
            ScenarioKind::Explicit => self.distances_m.len(),
            _ => self.n_users,
        };
        self.build_with_users(system, seed, n)
    }
}

/// `[system]` — physical constants and QoS targets, decibel units where
/// engineers expect them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemSection {
    pub epsilon_max: f64,
    pub frame_duration_s: f64,
    pub tx_duration_s: f64,
    pub dmax_frames: f64,
    pub dt_frames: f64,
    pub dc_frames: f64,
    pub pmax_dbm: f64,
    pub n_antennas: usize,
    pub noise_dbm_per_hz: f64,
    pub packet_bits: f64,
    pub arrival_pkt_per_frame: f64,
    pub min_distance_m: f64,
    pub cell_radius_m: f64,
}

impl Default for SystemSection {
    fn default() -> Self {
        SystemSection {
            epsilon_max: 1e-5,
            frame_duration_s: 1e-4,
            tx_duration_s: 5e-5,
            dmax_frames: 10.0,
            dt_frames: 1.0,
            dc_frames: 1.0,
            pmax_dbm: 43.0,
            n_antennas: 8,
            noise_dbm_per_hz: -173.0,
            packet_bits: 160.0,
            arrival_pkt_per_frame: 0.2,
            min_distance_m: 50.0,
            cell_radius_m: 250.0,
        }
    }
}

impl SystemSection {
    pub fn to_params(&self) -> Result<SystemParams> {
        let p = SystemParams {
            epsilon_max: self.epsilon_max,
            frame_duration_s: self.frame_duration_s,
            tx_duration_s: self.tx_duration_s,
            dmax_frames: self.dmax_frames,
            dt_frames: self.dt_frames,
            dc_frames: self.dc_frames,
            pmax_w: dbm_to_watts(self.pmax_dbm),
            n_antennas: self.n_antennas,
            n0_w_per_hz: dbm_to_watts(self.noise_dbm_per_hz),
            packet_bits: self.packet_bits,
            arrival_pkt_per_frame: self.arrival_pkt_per_frame,
            min_distance_m: self.min_distance_m,
            cell_radius_m: self.cell_radius_m,
        };
        p.validate()?;
        Ok(p)
    }
}

/// Policy selector for the `evaluate` command.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// Trained network from a checkpoint.
    Learned,
    /// Closed-form optimum (symmetric scenarios only).
    Optimal,
    /// Equal power split with per-user bandwidth search.
    EqualPower,
}

/// `[eval]` — Monte-Carlo verification knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Fading draws per verification run.
    pub samples: usize,
    /// Relative QoS margin treated as a pass.
    pub tolerance: f64,
    pub policy: PolicyKind,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            samples: 100_000,
            tolerance: 0.01,
            policy: PolicyKind::Learned,
        }
    }
}

/// `[sweep]` — user counts the sweep command visits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub k_values: Vec<usize>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            k_values: vec![2, 4, 6, 8],
        }
    }
}

/// `[study]` — cold-vs-warm convergence experiment shape. Training
/// hyperparameters come from `[trainer]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudySection {
    pub n_trials: usize,
    pub n_users: usize,
    pub move_distance_m: f64,
}

impl Default for StudySection {
    fn default() -> Self {
        StudySection {
            n_trials: 100,
            n_users: 8,
            move_distance_m: 2.0,
        }
    }
}

/// The whole run configuration. Command-line flags override `seed` and
/// `eval.samples`; everything else comes from the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Execution mode for row-parallel workloads and study trials.
    pub exec: ExecMode,
    pub scenario: ScenarioSection,
    pub system: SystemSection,
    pub solver: SearchOptions,
    pub trainer: TrainConfig,
    pub eval: EvalSection,
    pub sweep: SweepSection,
    pub study: StudySection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            exec: ExecMode::default(),
            scenario: ScenarioSection::default(),
            system: SystemSection::default(),
            solver: SearchOptions::default(),
            trainer: TrainConfig::default(),
            eval: EvalSection::default(),
            sweep: SweepSection::default(),
            study: StudySection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let cfg: RunConfig = toml::from_str(&text)
            .with_context(|| format!("cannot parse config {}", path.display()))?;
        Ok(cfg)
    }
}
