//! Convergence study: how much faster does training converge when it
//! starts from a policy trained moments earlier, before the users moved?
//!
//! Each trial drops users randomly on the road, trains from scratch
//! ("cold"), advances every user by a fixed distance (vehicle motion
//! between optimization episodes), and retrains from the converged state
//! ("warm"). The study reports per-trial frames-to-convergence and
//! nearest-rank medians across trials.

use crate::error::Result;
use crate::exec::ExecMode;
use crate::math::{derive_seed, Stream};
use crate::scenario::{Scenario, SystemParams};
use crate::trainer::{TrainConfig, TrainState};
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Study parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    /// Number of independent user drops.
    pub n_trials: usize,
    /// Users per drop.
    pub n_users: usize,
    /// How far each user moves between the cold and warm episodes, meters
    /// (default: 2 m, i.e. 72 km/h over a 100 ms gap).
    pub move_distance_m: f64,
    /// Training hyperparameters shared by both episodes.
    pub train: TrainConfig,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            n_trials: 100,
            n_users: 8,
            move_distance_m: 2.0,
            train: TrainConfig::default(),
        }
    }
}

/// One episode's outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    /// False for the cold episode, true for the warm retrain.
    pub pretrained: bool,
    /// Frames consumed until convergence (or the cap, if unconverged).
    pub frames_to_converge: usize,
    pub converged: bool,
}

/// Aggregated study result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyOutcome {
    pub records: Vec<TrialRecord>,
    pub cold_median_frames: f64,
    pub warm_median_frames: f64,
    pub n_unconverged: usize,
}

/// Nearest-rank percentile of already-sorted data: the smallest element
/// with at least `p` percent of the sample at or below it.
pub fn nearest_rank_percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty sample");
    assert!((0.0..=100.0).contains(&p));
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.max(1) - 1]
}

/// One full trial: cold episode on a fresh drop, then a warm retrain after
/// every user advances along the road.
fn run_trial(
    system: &SystemParams,
    cfg: &StudyConfig,
    seed: u64,
    trial: usize,
) -> Result<(TrialRecord, TrialRecord)> {
    let mut scenario = Scenario::road_drop(system.clone(), cfg.n_users, seed, trial as u64)?;
    let cold_seed = derive_seed(seed, Stream::Channel, 2 * trial as u64);
    let warm_seed = derive_seed(seed, Stream::Channel, 2 * trial as u64 + 1);

    let mut state = TrainState::new(&scenario, cold_seed)?;
    let cold_out = state.train(&cfg.train, cold_seed)?;
    let cold_rec = TrialRecord {
        trial,
        pretrained: false,
        frames_to_converge: cold_out.frames_used,
        converged: cold_out.converged,
    };

    // Users drive on; the large-scale gains change, the learned policy
    // is nearly right already.
    scenario.advance_positions(cfg.move_distance_m);
    state.rebind(&scenario)?;
    let warm_out = state.train(&cfg.train, warm_seed)?;
    let warm_rec = TrialRecord {
        trial,
        pretrained: true,
        frames_to_converge: warm_out.frames_used,
        converged: warm_out.converged,
    };
    Ok((cold_rec, warm_rec))
}

/// Run the full study. Deterministic in `seed` regardless of `mode`: each
/// trial derives its own seeds, and records are merged in trial order.
/// `progress` fires per episode — live under [`ExecMode::Sequential`],
/// after the parallel join otherwise.
pub fn run_study(
    system: &SystemParams,
    cfg: &StudyConfig,
    seed: u64,
    mode: ExecMode,
    mut progress: impl FnMut(&TrialRecord),
) -> Result<StudyOutcome> {
    let mut records = Vec::with_capacity(2 * cfg.n_trials);
    let mut cold = Vec::with_capacity(cfg.n_trials);
    let mut warm = Vec::with_capacity(cfg.n_trials);
    let mut n_unconverged = 0usize;

    let mut ingest = |pair: (TrialRecord, TrialRecord),
                      progress: &mut dyn FnMut(&TrialRecord)| {
        let (cold_rec, warm_rec) = pair;
        progress(&cold_rec);
        cold.push(cold_rec.frames_to_converge as f64);
        n_unconverged += usize::from(!cold_rec.converged);
        records.push(cold_rec);
        progress(&warm_rec);
        warm.push(warm_rec.frames_to_converge as f64);
        n_unconverged += usize::from(!warm_rec.converged);
        records.push(warm_rec);
    };

    match mode {
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => {
            let pairs: Vec<(TrialRecord, TrialRecord)> = (0..cfg.n_trials)
                .into_par_iter()
                .map(|trial| run_trial(system, cfg, seed, trial))
                .collect::<Result<_>>()?;
            for pair in pairs {
                ingest(pair, &mut progress);
            }
        }
        // Without the feature, Parallel degrades to the sequential loop,
        // mirroring `exec::map_rows`.
        _ => {
            for trial in 0..cfg.n_trials {
                ingest(run_trial(system, cfg, seed, trial)?, &mut progress);
            }
        }
    }

    cold.sort_by(|a, b| a.partial_cmp(b).unwrap());
    warm.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(StudyOutcome {
        cold_median_frames: nearest_rank_percentile(&cold, 50.0),
        warm_median_frames: nearest_rank_percentile(&warm, 50.0),
        records,
        n_unconverged,
    })
}
