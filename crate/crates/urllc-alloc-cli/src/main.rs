//! Command-line front end: parse a TOML run configuration, execute one of
//! the allocation pipelines, and emit CSV traces plus JSON reports, each
//! run accompanied by a manifest that snapshots the resolved configuration.
//!
//! Exit codes: 0 success (and converged / QoS pass where applicable),
//! 2 unconverged or QoS fail, 1 usage or configuration error.

mod config;

use anyhow::{bail, Context, Result};
use clap::{Args, CommandFactory, Parser, Subcommand};
use serde::Serialize;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use config::{PolicyKind, RunConfig, ScenarioKind};
use urllc_alloc::math::{derive_seed, Stream};
use urllc_alloc::study::{nearest_rank_percentile, TrialRecord};
use urllc_alloc::trainer::HistoryRow;
use urllc_alloc::{
    compare_required_bandwidth, evaluate, run_study, solve_symmetric, EqualPowerPolicy,
    EvalReport, LearnedPolicy, LinkParams, OptimalSymmetricPolicy, PowerPolicy, StudyConfig,
    SymmetricSolution, TrainState,
};

#[derive(Parser)]
#[command(
    name = "urllc-alloc",
    version,
    about = "Joint power and bandwidth allocation for URLLC downlinks",
    subcommand_required = true,
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form power plus bandwidth search for a symmetric scenario.
    SolveSymmetric(CommonArgs),
    /// Train the power-split network with primal-dual updates.
    Train(TrainArgs),
    /// Compare policies across user counts; one CSV row per (K, policy).
    Sweep(CommonArgs),
    /// Cold-vs-warm convergence study over random road drops.
    ConvergenceStudy(CommonArgs),
    /// Monte-Carlo QoS verification of one policy.
    Evaluate(EvalArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for outputs (created if missing).
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Monte-Carlo draws for verification; overrides the config file.
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Checkpoint path: resumed from when it already exists, written on
    /// completion. Defaults to <out-dir>/checkpoint.mlp.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Checkpoint of a trained policy (required when the policy is
    /// "learned").
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

/// Written next to every command's outputs: what ran, with which resolved
/// configuration, and what it produced.
#[derive(Serialize)]
struct RunManifest<'a> {
    schema: &'static str,
    tool: String,
    command: String,
    argv: Vec<String>,
    seed: u64,
    outputs: Vec<String>,
    wall_clock_s: f64,
    config: &'a RunConfig,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints rich usage itself; keep its text but force the
            // documented usage-error exit code.
            let _ = e.print();
            std::process::exit(1);
        }
    };
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = exit_code_for(&e);
            if code == 1 {
                eprintln!("{}", Cli::command().render_usage());
            }
            code
        }
    };
    std::process::exit(i32::from(code));
}

/// Map library failures onto the documented exit codes: iteration caps and
/// divergence are "unconverged" (2), everything else is a usage/config
/// error (1).
fn exit_code_for(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<urllc_alloc::Error>() {
        Some(urllc_alloc::Error::SearchDidNotConverge { .. })
        | Some(urllc_alloc::Error::Diverged { .. }) => 2,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::SolveSymmetric(args) => cmd_solve_symmetric(args),
        Command::Train(args) => cmd_train(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::ConvergenceStudy(args) => cmd_convergence_study(args),
        Command::Evaluate(args) => cmd_evaluate(args),
    }
}

/// Load the config and fold in the command-line overrides.
fn resolve(common: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(samples) = common.samples {
        if samples == 0 {
            bail!("--samples must be positive");
        }
        cfg.eval.samples = samples;
    }
    std::fs::create_dir_all(&common.out_dir)
        .with_context(|| format!("cannot create out dir {}", common.out_dir.display()))?;
    Ok(cfg)
}

fn write_manifest(
    out_dir: &Path,
    command: &str,
    cfg: &RunConfig,
    outputs: &[PathBuf],
    started: Instant,
) -> Result<PathBuf> {
    let manifest = RunManifest {
        schema: "run-manifest v1",
        tool: format!("urllc-alloc {}", env!("CARGO_PKG_VERSION")),
        command: command.to_string(),
        argv: std::env::args().skip(1).collect(),
        seed: cfg.seed,
        outputs: outputs
            .iter()
            .map(|p| p.display().to_string())
            .collect(),
        wall_clock_s: started.elapsed().as_secs_f64(),
        config: cfg,
    };
    let path = out_dir.join(format!("{command}.manifest.json"));
    let file = File::create(&path)
        .with_context(|| format!("cannot create manifest {}", path.display()))?;
    serde_json::to_writer_pretty(BufWriter::new(file), &manifest)?;
    Ok(path)
}

fn create_output(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| {
        format!("cannot create output {}", path.display())
    })?))
}

/// CSV schema "search-trace v1": one row per bandwidth-search iteration.
fn write_trace_csv(
    path: &Path,
    points: impl IntoIterator<Item = (usize, f64, f64)>,
) -> Result<()> {
    let mut out = create_output(path)?;
    writeln!(out, "iter,w_hz,residual")?;
    for (t, w_hz, residual) in points {
        writeln!(out, "{t},{w_hz},{residual}")?;
    }
    out.flush()?;
    Ok(())
}

fn history_header(k: usize) -> String {
    let mut head = String::from("frame,updates,sum_w_hz,zeta,xi");
    for i in 1..=k {
        head.push_str(&format!(",lambda_hz_{i}"));
    }
    for i in 1..=k {
        head.push_str(&format!(",w_hz_{i}"));
    }
    head
}

fn history_line(row: &HistoryRow) -> String {
    let mut line = format!(
        "{},{},{},{},{}",
        row.frame, row.t, row.sum_w_hz, row.zeta, row.xi
    );
    for v in &row.lambda_hz {
        line.push_str(&format!(",{v}"));
    }
    for v in &row.w_hz {
        line.push_str(&format!(",{v}"));
    }
    line
}

fn cmd_solve_symmetric(args: CommonArgs) -> Result<u8> {
    let started = Instant::now();
    let cfg = resolve(&args)?;
    let system = cfg.system.to_params()?;
    let scenario = cfg.scenario.build(&system, cfg.seed)?;
    if !scenario.is_symmetric() {
        bail!("solve-symmetric needs every user at the same distance; this scenario is asymmetric");
    }
    let trace_path = args.out_dir.join("trace.csv");
    let report_path = args.out_dir.join("solve-symmetric.report.json");

    let solution = match solve_symmetric(&scenario, cfg.seed, &cfg.solver) {
        Ok(sol) => sol,
        Err(e) => {
            // Keep the partial trajectory on failure so the stall is
            // inspectable.
            if let urllc_alloc::Error::SearchDidNotConverge { ref trace, .. } = e {
                write_trace_csv(&trace_path, trace.iter().copied())?;
                write_manifest(
                    &args.out_dir,
                    "solve-symmetric",
                    &cfg,
                    &[trace_path.clone()],
                    started,
                )?;
            }
            return Err(e.into());
        }
    };
    write_trace_csv(
        &trace_path,
        solution.trace.iter().map(|p| (p.t, p.w_hz, p.residual)),
    )?;

    let link = LinkParams::new(&scenario.system, scenario.distances_m[0])?;
    let k = scenario.n_users();
    let policy = OptimalSymmetricPolicy::new(
        link,
        k,
        solution.w_per_user_hz,
        scenario.system.pmax_w,
    );
    let links = LinkParams::for_scenario(&scenario)?;
    let report = evaluate(
        &links,
        &policy,
        scenario.system.n_antennas,
        cfg.eval.samples,
        derive_seed(cfg.seed, Stream::Eval, 1),
        cfg.exec,
        cfg.eval.tolerance,
    )?;

    #[derive(Serialize)]
    struct SolveReport<'a> {
        schema: &'static str,
        n_users: usize,
        solution: &'a SymmetricSolution,
        verification: &'a EvalReport,
    }
    let file = create_output(&report_path)?;
    serde_json::to_writer_pretty(
        file,
        &SolveReport {
            schema: "solve-symmetric v1",
            n_users: k,
            solution: &solution,
            verification: &report,
        },
    )?;
    write_manifest(
        &args.out_dir,
        "solve-symmetric",
        &cfg,
        &[trace_path, report_path],
        started,
    )?;

    println!(
        "solved K={k}: W* = {:.3} Hz/user, total {:.3} Hz, {} iterations, QoS {}",
        solution.w_per_user_hz,
        solution.total_bandwidth_hz,
        solution.iters,
        if report.qos_ok { "pass" } else { "FAIL" }
    );
    Ok(if report.qos_ok { 0 } else { 2 })
}

fn cmd_train(args: TrainArgs) -> Result<u8> {
    let started = Instant::now();
    let cfg = resolve(&args.common)?;
    let system = cfg.system.to_params()?;
    let scenario = cfg.scenario.build(&system, cfg.seed)?;
    let ckpt_path = args
        .checkpoint
        .unwrap_or_else(|| args.common.out_dir.join("checkpoint.mlp"));
    let history_path = args.common.out_dir.join("history.csv");
    let report_path = args.common.out_dir.join("train.report.json");

    let resumed = ckpt_path.exists();
    let mut state = if resumed {
        TrainState::load(&ckpt_path, &scenario)
            .with_context(|| format!("cannot resume from {}", ckpt_path.display()))?
    } else {
        TrainState::new(&scenario, cfg.seed)?
    };

    // Stream the log so a diverging run still leaves its history behind.
    let mut history = create_output(&history_path)?;
    writeln!(history, "{}", history_header(scenario.n_users()))?;
    let mut io_err: Option<std::io::Error> = None;
    let outcome = state.train_with(&cfg.trainer, cfg.seed, |row| {
        if io_err.is_none() {
            io_err = writeln!(history, "{}", history_line(row)).err();
        }
    });
    history.flush()?;
    if let Some(e) = io_err {
        return Err(e).context("cannot write history.csv");
    }
    let outcome = match outcome {
        Ok(outcome) => outcome,
        Err(e) => {
            write_manifest(
                &args.common.out_dir,
                "train",
                &cfg,
                &[history_path.clone()],
                started,
            )?;
            return Err(e.into());
        }
    };

    state.save(&ckpt_path)?;
    #[derive(Serialize)]
    struct TrainReport {
        schema: &'static str,
        converged: bool,
        resumed_from_checkpoint: bool,
        frames_used: usize,
        sum_w_hz: f64,
        w_hz: Vec<f64>,
        lambda_hz: Vec<f64>,
    }
    let file = create_output(&report_path)?;
    serde_json::to_writer_pretty(
        file,
        &TrainReport {
            schema: "train v1",
            converged: outcome.converged,
            resumed_from_checkpoint: resumed,
            frames_used: outcome.frames_used,
            sum_w_hz: state.sum_w_hz(),
            w_hz: state.w_hz(),
            lambda_hz: state.lambda_hz(),
        },
    )?;
    let sidecar = TrainState::sidecar_path(&ckpt_path);
    write_manifest(
        &args.common.out_dir,
        "train",
        &cfg,
        &[history_path, ckpt_path, sidecar, report_path],
        started,
    )?;

    println!(
        "{} after {} frames ({}); total bandwidth {:.3} Hz",
        if outcome.converged { "converged" } else { "did not converge" },
        outcome.frames_used,
        if resumed { "resumed" } else { "cold start" },
        state.sum_w_hz()
    );
    Ok(if outcome.converged { 0 } else { 2 })
}

fn cmd_sweep(args: CommonArgs) -> Result<u8> {
    let started = Instant::now();
    let cfg = resolve(&args)?;
    let system = cfg.system.to_params()?;
    if cfg.scenario.kind == ScenarioKind::Explicit {
        bail!("sweep varies the user count; use a symmetric or road scenario");
    }
    if cfg.sweep.k_values.is_empty() {
        bail!("sweep.k_values must not be empty");
    }
    let sweep_path = args.out_dir.join("sweep.csv");
    let mut out = create_output(&sweep_path)?;
    writeln!(
        out,
        "n_users,policy,total_bandwidth_hz,xi,worst_rel_violation,qos_ok"
    )?;
    // Matched learned-vs-equal comparison: both power rules re-provisioned
    // per user on common draws, difference gated at three standard errors.
    let cmp_path = args.out_dir.join("sweep_comparison.csv");
    let mut cmp_out = create_output(&cmp_path)?;
    writeln!(
        cmp_out,
        "n_users,learned_required_hz,equal_required_hz,diff_hz,se_hz,tolerance_hz,learned_no_worse"
    )?;

    let mut all_ok = true;
    for &k in &cfg.sweep.k_values {
        let scenario = cfg.scenario.build_with_users(&system, cfg.seed, k)?;
        let links = LinkParams::for_scenario(&scenario)?;
        let eval_seed = derive_seed(cfg.seed, Stream::Eval, k as u64);
        let verify = |policy: &dyn PowerPolicy| -> Result<EvalReport> {
            Ok(evaluate(
                &links,
                policy,
                scenario.system.n_antennas,
                cfg.eval.samples,
                eval_seed,
                cfg.exec,
                cfg.eval.tolerance,
            )?)
        };
        let mut reports: Vec<EvalReport> = Vec::new();

        let mut state = TrainState::new(&scenario, derive_seed(cfg.seed, Stream::Init, k as u64))?;
        let outcome = state.train(&cfg.trainer, derive_seed(cfg.seed, Stream::Init, k as u64))?;
        all_ok &= outcome.converged;
        reports.push(verify(&LearnedPolicy::from_state(&state))?);

        if scenario.is_symmetric() {
            let solution = solve_symmetric(&scenario, cfg.seed, &cfg.solver)?;
            let link = LinkParams::new(&scenario.system, scenario.distances_m[0])?;
            reports.push(verify(&OptimalSymmetricPolicy::new(
                link,
                k,
                solution.w_per_user_hz,
                scenario.system.pmax_w,
            ))?);
        }

        let equal = EqualPowerPolicy::solve(
            &scenario,
            derive_seed(cfg.seed, Stream::Channel, k as u64),
            &cfg.solver,
        )?;
        reports.push(verify(&equal)?);

        for r in &reports {
            all_ok &= r.qos_ok;
            writeln!(
                out,
                "{k},{},{},{},{},{}",
                r.policy, r.total_bandwidth_hz, r.xi, r.worst_rel_violation, r.qos_ok
            )?;
        }

        let cmp = compare_required_bandwidth(
            &links,
            &LearnedPolicy::from_state(&state),
            &equal,
            scenario.system.n_antennas,
            cfg.eval.samples,
            derive_seed(cfg.seed, Stream::Eval, 1000 + k as u64),
            cfg.exec,
        )?;
        writeln!(
            cmp_out,
            "{k},{},{},{},{},{},{}",
            cmp.a.total_hz, cmp.b.total_hz, cmp.diff_hz, cmp.se_hz, cmp.tolerance_hz, cmp.a_no_worse
        )?;
    }
    out.flush()?;
    cmp_out.flush()?;
    write_manifest(
        &args.out_dir,
        "sweep",
        &cfg,
        &[sweep_path.clone(), cmp_path],
        started,
    )?;
    println!(
        "sweep over K = {:?} written to {} ({})",
        cfg.sweep.k_values,
        sweep_path.display(),
        if all_ok { "all QoS pass" } else { "QoS FAILURES present" }
    );
    Ok(if all_ok { 0 } else { 2 })
}

fn cmd_convergence_study(args: CommonArgs) -> Result<u8> {
    let started = Instant::now();
    let cfg = resolve(&args)?;
    let system = cfg.system.to_params()?;
    if cfg.scenario.kind != ScenarioKind::Road {
        bail!("convergence-study draws random road drops; set scenario.kind = \"road\"");
    }
    let study_cfg = StudyConfig {
        n_trials: cfg.study.n_trials,
        n_users: cfg.study.n_users,
        move_distance_m: cfg.study.move_distance_m,
        train: cfg.trainer.clone(),
    };
    let records_path = args.out_dir.join("study.csv");
    let summary_path = args.out_dir.join("study_summary.csv");

    let mut out = create_output(&records_path)?;
    writeln!(out, "trial,pretrained,frames_to_converge,converged")?;
    let mut io_err: Option<std::io::Error> = None;
    let outcome = run_study(&system, &study_cfg, cfg.seed, cfg.exec, |rec: &TrialRecord| {
        if io_err.is_none() {
            io_err = writeln!(
                out,
                "{},{},{},{}",
                rec.trial, rec.pretrained, rec.frames_to_converge, rec.converged
            )
            .err();
        }
    })?;
    out.flush()?;
    if let Some(e) = io_err {
        return Err(e).context("cannot write study.csv");
    }

    let mut summary = create_output(&summary_path)?;
    writeln!(
        summary,
        "episode,n_trials,median_frames,p99_9_frames,p99_99_frames,n_unconverged"
    )?;
    for pretrained in [false, true] {
        let mut frames: Vec<f64> = outcome
            .records
            .iter()
            .filter(|r| r.pretrained == pretrained)
            .map(|r| r.frames_to_converge as f64)
            .collect();
        frames.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let unconverged = outcome
            .records
            .iter()
            .filter(|r| r.pretrained == pretrained && !r.converged)
            .count();
        writeln!(
            summary,
            "{},{},{},{},{},{unconverged}",
            if pretrained { "warm" } else { "cold" },
            frames.len(),
            nearest_rank_percentile(&frames, 50.0),
            nearest_rank_percentile(&frames, 99.9),
            nearest_rank_percentile(&frames, 99.99),
        )?;
    }
    summary.flush()?;
    write_manifest(
        &args.out_dir,
        "convergence-study",
        &cfg,
        &[records_path, summary_path],
        started,
    )?;

    println!(
        "study: {} trials, cold median {} frames, warm median {} frames, {} unconverged",
        cfg.study.n_trials,
        outcome.cold_median_frames,
        outcome.warm_median_frames,
        outcome.n_unconverged
    );
    Ok(if outcome.n_unconverged == 0 { 0 } else { 2 })
}

fn cmd_evaluate(args: EvalArgs) -> Result<u8> {
    let started = Instant::now();
    let cfg = resolve(&args.common)?;
    let system = cfg.system.to_params()?;
    let scenario = cfg.scenario.build(&system, cfg.seed)?;
    let links = LinkParams::for_scenario(&scenario)?;

    let policy: Box<dyn PowerPolicy> = match (cfg.eval.policy, &args.checkpoint) {
        (_, Some(path)) => {
            // A checkpoint always means "evaluate this trained policy".
            let state = TrainState::load(path, &scenario)
                .with_context(|| format!("cannot load checkpoint {}", path.display()))?;
            if !state.converged() {
                eprintln!("note: checkpoint was not flagged converged; evaluating anyway");
            }
            Box::new(LearnedPolicy::from_state(&state))
        }
        (PolicyKind::Learned, None) => {
            bail!("eval.policy = \"learned\" needs --checkpoint");
        }
        (PolicyKind::Optimal, None) => {
            if !scenario.is_symmetric() {
                bail!("the optimal policy is defined for symmetric scenarios only");
            }
            let solution = solve_symmetric(&scenario, cfg.seed, &cfg.solver)?;
            let link = LinkParams::new(&scenario.system, scenario.distances_m[0])?;
            Box::new(OptimalSymmetricPolicy::new(
                link,
                scenario.n_users(),
                solution.w_per_user_hz,
                scenario.system.pmax_w,
            ))
        }
        (PolicyKind::EqualPower, None) => Box::new(EqualPowerPolicy::solve(
            &scenario,
            cfg.seed,
            &cfg.solver,
        )?),
    };

    let report = evaluate(
        &links,
        policy.as_ref(),
        scenario.system.n_antennas,
        cfg.eval.samples,
        derive_seed(cfg.seed, Stream::Eval, 1),
        cfg.exec,
        cfg.eval.tolerance,
    )?;
    let report_path = args.common.out_dir.join("evaluate.report.json");
    let file = create_output(&report_path)?;
    serde_json::to_writer_pretty(file, &report)?;
    write_manifest(
        &args.common.out_dir,
        "evaluate",
        &cfg,
        &[report_path],
        started,
    )?;

    println!(
        "policy {}: total bandwidth {:.3} Hz, xi = {:.3e}, QoS {} over {} draws",
        report.policy,
        report.total_bandwidth_hz,
        report.xi,
        if report.qos_ok { "pass" } else { "FAIL" },
        report.n_samples
    );
    Ok(if report.qos_ok { 0 } else { 2 })
}
