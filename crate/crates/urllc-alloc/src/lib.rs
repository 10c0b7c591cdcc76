//! Joint power and bandwidth allocation for ultra-reliable low-latency
//! downlinks.
//!
//! A base station serves `K` users under a statistical QoS contract: each
//! packet must be delivered within a delay bound except with a tiny
//! violation probability, split between decoding errors (short-packet
//! coding at finite blocklength) and queueing delay (effective-bandwidth
//! theory). The crate provides three coordinated pieces:
//!
//! * **Closed-form optimum for the symmetric case** ([`symmetric`]): when
//!   all users share one distance, the per-fading power split is known in
//!   closed form and the minimal per-user bandwidth is found by a
//!   stochastic root search ([`sa`]).
//! * **Unsupervised learner for the general case** ([`trainer`], [`mlp`]):
//!   a small softmax network maps fading gains to a power split while
//!   per-user bandwidths and dual multipliers adapt alongside it by
//!   primal-dual stochastic gradients — no labeled optima needed.
//! * **Monte-Carlo verification** ([`evaluator`]): large-sample QoS checks
//!   of any policy, an equal-power baseline, matched-provisioning
//!   comparisons between policies ([`compare`]), and bitwise-reproducible
//!   results independent of the execution mode ([`exec`]).
//!
//! Supporting modules: [`scenario`] (system parameters, path loss, user
//! drops), [`channel`] (fading), [`qos`] (rate and QoS algebra), [`math`]
//! (numerics), [`study`] (cold-vs-warm convergence experiments).
//!
//! Everything is deterministic in the caller's seed: independent random
//! streams are derived per purpose, so training, evaluation, and scenario
//! generation never share draws.

pub mod channel;
pub mod compare;
pub mod error;
pub mod evaluator;
pub mod exec;
pub mod math;
pub mod mlp;
pub mod qos;
pub mod sa;
pub mod scenario;
pub mod study;
pub mod symmetric;
pub mod trainer;

pub use compare::{compare_required_bandwidth, BandwidthComparison, RequiredBandwidth};
pub use error::{Error, Result};
pub use evaluator::{evaluate, EqualPowerPolicy, EvalReport, LearnedPolicy, OptimalSymmetricPolicy, PowerPolicy};
pub use exec::ExecMode;
pub use qos::LinkParams;
pub use sa::{SearchOptions, TracePoint};
pub use scenario::{Scenario, SystemParams};
pub use study::{run_study, StudyConfig, StudyOutcome};
pub use symmetric::{solve_symmetric, SymmetricSolution};
pub use trainer::{TrainConfig, TrainOutcome, TrainState};
