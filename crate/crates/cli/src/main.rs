//! Command-line entry point: run simulations, verify audit artifacts, replay
//! manifests, and host the example external policies used for testing the
//! wire protocol.
//!
//! Exit codes are a stable contract: 0 success, 1 validation/config error,
//! 2 invariant violation, 3 audit/determinism failure.

use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use medchain_core::runner::{
    default_config, replay, run_to_dir, sweep_dir_name, verify_audit, DefaultParams, PolicySpec,
    ReplayReport, RunError,
};
use medchain_core::scenario::{DisruptionParams, ScenarioConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "medchain", version, about = "Deterministic pandemic supply chain simulator with a tamper-evident enforcement ledger")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation and write a self-contained artifact directory.
    Run(RunArgs),
    /// Verify an exported audit chain and content store end-to-end.
    VerifyAudit {
        /// Path to audit_chain.csv
        #[arg(long)]
        chain: PathBuf,
        /// Path to the content store directory
        #[arg(long)]
        store: PathBuf,
    },
    /// Re-run a manifest's config and byte-compare the round log and audit head.
    Replay {
        /// Path to manifest.json
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Print the resolved default configuration as JSON.
    PrintConfig(ScenarioArgs),
    /// Built-in example policies speaking the external-policy wire protocol.
    #[command(subcommand)]
    Policy(PolicyCmd),
}

#[derive(Args, Clone)]
struct ScenarioArgs {
    #[arg(long, default_value_t = 3)]
    regions: u32,
    #[arg(long, default_value_t = 3)]
    drugs: u32,
    /// Simulation horizon in days.
    #[arg(long, default_value_t = 30)]
    days: u64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Pandemic severity multiplier on the baseline infection rate.
    #[arg(long, default_value_t = 0.8)]
    severity: f64,
    /// Uniform per-agent daily disruption probability.
    #[arg(long, default_value_t = 0.1)]
    disruption_prob: f64,
    /// Fairness sharpness.
    #[arg(long, default_value_t = 15.0)]
    alpha: f64,
    /// Minimum-support fraction.
    #[arg(long, default_value_t = 0.05)]
    epsilon: f64,
    #[arg(long, default_value_t = 1)]
    lead_time: u64,
    /// Demand noise sigma as a fraction of mean demand.
    #[arg(long, default_value_t = 0.1)]
    noise_frac: f64,
    /// Manufacturer capacity as a multiple of peak projected demand.
    #[arg(long, default_value_t = 1.5)]
    capacity_mult: f64,
}

impl ScenarioArgs {
    fn to_params(&self) -> DefaultParams {
        DefaultParams {
            num_regions: self.regions,
            num_drugs: self.drugs,
            horizon_days: self.days,
            seed: self.seed,
            severity: self.severity,
            disruption_prob: self.disruption_prob,
            alpha: self.alpha,
            epsilon: self.epsilon,
            lead_time_days: self.lead_time,
            demand_noise_frac: self.noise_frac,
            capacity_mult: self.capacity_mult,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Scenario config JSON; when omitted, defaults are built from the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Output directory for run artifacts.
    #[arg(long)]
    out: PathBuf,
    /// Decision source: builtin or external:<command>.
    #[arg(long, default_value = "builtin")]
    policy: String,
    /// Per-decision deadline for external policies.
    #[arg(long, default_value_t = 5000)]
    policy_timeout_ms: u64,
    /// Parameter sweep, e.g. --sweep disruption=0.05,0.15,0.25.
    #[arg(long)]
    sweep: Option<String>,
}

#[derive(Subcommand)]
enum PolicyCmd {
    /// Echo policy: answers every request with its builtin decision, so a
    /// run through the wire protocol reproduces the builtin run exactly.
    Echo,
    /// Hostile fuzzing policy: emits malformed lines, out-of-range values,
    /// wrong shapes, stale echoes, and occasional silence.
    Fuzz {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Exit abruptly after this many requests (0 = never).
        #[arg(long, default_value_t = 0)]
        die_after: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::VerifyAudit { chain, store } => cmd_verify_audit(&chain, &store),
        Command::Replay { manifest } => cmd_replay(&manifest),
        Command::PrintConfig(args) => cmd_print_config(&args),
        Command::Policy(PolicyCmd::Echo) => policy_echo(),
        Command::Policy(PolicyCmd::Fuzz { seed, die_after }) => policy_fuzz(seed, die_after),
    }
}

fn exit_for_run_error(err: &RunError) -> ExitCode {
    match err {
        RunError::Config(_)
        | RunError::Manifest(_)
        | RunError::ReplayRefused(_)
        | RunError::PolicySpawn { .. }
        | RunError::Io(_) => ExitCode::from(1),
        RunError::Coordination(_)
        | RunError::Canon(_)
        | RunError::Ledger(_)
        | RunError::Metrics(_) => ExitCode::from(2),
    }
}

fn build_config(args: &RunArgs) -> Result<ScenarioConfig, String> {
    match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
            let mut config =
                ScenarioConfig::from_json(&text).map_err(|e| format!("config: {e}"))?;
            // flags that differ from their defaults override the file
            let defaults = DefaultParams::default();
            let s = &args.scenario;
            if s.seed != defaults.seed {
                config.seed = s.seed;
            }
            if s.days != defaults.horizon_days {
                config.horizon_days = s.days;
            }
            if s.alpha != defaults.alpha {
                config.alpha = s.alpha;
            }
            if s.epsilon != defaults.epsilon {
                config.epsilon = s.epsilon;
            }
            if s.lead_time != defaults.lead_time_days {
                config.lead_time_days = s.lead_time;
            }
            if s.noise_frac != defaults.demand_noise_frac {
                config.demand_noise_frac = s.noise_frac;
            }
            if s.disruption_prob != defaults.disruption_prob {
                config.disruption =
                    DisruptionParams::uniform(s.disruption_prob, config.num_regions);
            }
            if s.regions != defaults.num_regions
                || s.drugs != defaults.num_drugs
                || s.severity != defaults.severity
                || s.capacity_mult != defaults.capacity_mult
            {
                return Err(
                    "structural flags (--regions, --drugs, --severity, --capacity-mult) cannot \
                     override an explicit --config; edit the config file instead"
                        .to_string(),
                );
            }
            config.validate().map_err(|e| format!("config: {e}"))?;
            Ok(config)
        }
        None => default_config(&args.scenario.to_params()).map_err(|e| format!("config: {e}")),
    }
}

fn summarize(run: &medchain_core::runner::CompletedRun, dir: &std::path::Path) {
    let accepted = run
        .receipts
        .iter()
        .filter(|r| r.verdict.is_accepted())
        .count();
    println!(
        "run complete: {} days, seed {}, policy fallbacks {}, clamps {}",
        run.config.horizon_days,
        run.config.seed,
        run.report.policy_fallbacks,
        run.report.policy_clamps
    );
    println!(
        "service_level: {:.4}%  unfulfilled: {:.4}%  stockout series: {}",
        run.report.service_level,
        run.report.unfulfilled_pct,
        run.report.stockouts.len()
    );
    println!(
        "snapshots: {accepted}/{} accepted, chain length {}, audit head {}",
        run.receipts.len(),
        run.ledger.chain().len(),
        hex::encode(run.head_hash())
    );
    println!("artifacts: {}", dir.display());
}

fn cmd_run(args: RunArgs) -> ExitCode {
    let policy = match PolicySpec::parse(&args.policy) {
        Ok(PolicySpec::External { command, .. }) => {
            PolicySpec::External { command, timeout_ms: args.policy_timeout_ms }
        }
        Ok(spec) => spec,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(1);
        }
    };
    let base = match build_config(&args) {
        Ok(config) => config,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(1);
        }
    };

    let sweep_values = match args.sweep.as_deref().map(parse_sweep) {
        None => None,
        Some(Ok(values)) => Some(values),
        Some(Err(msg)) => {
            eprintln!("error: {msg}");
            return ExitCode::from(1);
        }
    };

    let runs: Vec<(ScenarioConfig, PathBuf)> = match sweep_values {
        None => vec![(base, args.out.clone())],
        Some(values) => values
            .into_iter()
            .map(|p| {
                let mut config = base.clone();
                config.disruption = DisruptionParams::uniform(p, config.num_regions);
                (config, args.out.join(sweep_dir_name("disruption", p)))
            })
            .collect(),
    };

    for (config, dir) in runs {
        match run_to_dir(&config, &policy, &dir) {
            Ok((run, _)) => summarize(&run, &dir),
            Err(err) => {
                eprintln!("error: {err}");
                return exit_for_run_error(&err);
            }
        }
    }
    ExitCode::SUCCESS
}

fn parse_sweep(text: &str) -> Result<Vec<f64>, String> {
    let (name, values) = text
        .split_once('=')
        .ok_or_else(|| format!("sweep must look like disruption=0.05,0.15, got {text:?}"))?;
    if name != "disruption" {
        return Err(format!("unsupported sweep parameter {name:?} (only: disruption)"));
    }
    values
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|e| format!("sweep value {v:?}: {e}"))
        })
        .collect()
}

fn cmd_verify_audit(chain: &std::path::Path, store: &std::path::Path) -> ExitCode {
    match verify_audit(chain, store) {
        Ok(Ok(report)) => {
            println!(
                "ok: {} records, {} snapshot commits, {} store objects",
                report.records, report.snapshot_commits, report.store_objects
            );
            ExitCode::SUCCESS
        }
        Ok(Err(failure)) => {
            eprintln!("audit failure: {failure}");
            ExitCode::from(3)
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(1)
        }
    }
}

fn cmd_replay(manifest: &std::path::Path) -> ExitCode {
    match replay(manifest) {
        Ok(ReplayReport::Clean) => {
            println!("replay clean: round log and audit head match");
            ExitCode::SUCCESS
        }
        Ok(ReplayReport::Divergent { line, original, replayed }) => {
            eprintln!("replay diverges at round_log.csv line {line}:");
            eprintln!("  original: {original}");
            eprintln!("  replayed: {replayed}");
            ExitCode::from(3)
        }
        Ok(ReplayReport::HeadMismatch { original, replayed }) => {
            eprintln!("replay audit head mismatch: manifest {original}, replayed {replayed}");
            ExitCode::from(3)
        }
        Err(err) => {
            eprintln!("error: {err}");
            exit_for_run_error(&err)
        }
    }
}

fn cmd_print_config(args: &ScenarioArgs) -> ExitCode {
    match default_config(&args.to_params()) {
        Ok(config) => {
            let value = serde_json::to_value(&config).expect("config serializes");
            println!("{}", serde_json::to_string_pretty(&value).expect("config serializes"));
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(1)
        }
    }
}

/// Reads requests line by line, echoing each request's builtin decision.
fn policy_echo() -> ExitCode {
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for line in stdin.lock().lines() {
        let Ok(line) = line else { break };
        let Ok(request) = serde_json::from_str::<serde_json::Value>(&line) else { continue };
        let response = serde_json::json!({
            "agent_id": request["agent_id"],
            "day": request["day"],
            "decision": request["builtin"],
        });
        if writeln!(out, "{response}").and_then(|_| out.flush()).is_err() {
            break;
        }
    }
    ExitCode::SUCCESS
}

/// Deterministic hostile policy for conformance testing.
fn policy_fuzz(seed: u64, die_after: u64) -> ExitCode {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let mut handled = 0u64;
    for line in stdin.lock().lines() {
        let Ok(line) = line else { break };
        handled += 1;
        if die_after > 0 && handled > die_after {
            return ExitCode::from(0);
        }
        let Ok(request) = serde_json::from_str::<serde_json::Value>(&line) else { continue };
        let roll: f64 = rng.random();
        let response = if roll < 0.20 {
            // well-behaved echo
            serde_json::json!({
                "agent_id": request["agent_id"],
                "day": request["day"],
                "decision": request["builtin"],
            })
            .to_string()
        } else if roll < 0.55 {
            // schema-valid but hostile values
            let decision = mutate_decision(&request["builtin"], &mut rng);
            serde_json::json!({
                "agent_id": request["agent_id"],
                "day": request["day"],
                "decision": decision,
            })
            .to_string()
        } else if roll < 0.70 {
            // wrong shape: drop or duplicate an entry
            let decision = reshape_decision(&request["builtin"], &mut rng);
            serde_json::json!({
                "agent_id": request["agent_id"],
                "day": request["day"],
                "decision": decision,
            })
            .to_string()
        } else if roll < 0.85 {
            // malformed line
            String::from("{\"agent_id\": \"h0\", \"day\": oops")
        } else if roll < 0.95 {
            // stale echo for a different agent/day
            serde_json::json!({
                "agent_id": "h999",
                "day": 123456,
                "decision": request["builtin"],
            })
            .to_string()
        } else {
            // silence: force a timeout
            continue;
        };
        if writeln!(out, "{response}").and_then(|_| out.flush()).is_err() {
            break;
        }
    }
    ExitCode::SUCCESS
}

fn hostile_quantity(rng: &mut ChaCha8Rng) -> i64 {
    match rng.random_range(0..5u32) {
        0 => -(rng.random_range(1..1_000_000i64)),
        1 => i64::MAX,
        2 => i64::MIN,
        3 => rng.random_range(0..10_000_000_000_000i64),
        _ => rng.random_range(0..1000i64),
    }
}

fn mutate_decision(builtin: &serde_json::Value, rng: &mut ChaCha8Rng) -> serde_json::Value {
    let mut decision = builtin.clone();
    match decision.get("kind").and_then(|k| k.as_str()) {
        Some("hospital_orders") => {
            if let Some(q) = decision["quantities"].as_array() {
                let n = q.len();
                decision["quantities"] =
                    (0..n).map(|_| hostile_quantity(rng)).collect::<Vec<i64>>().into();
            }
        }
        Some("distributor_sub_allocations") => {
            if let Some(rows) = decision["per_hospital"].as_array().cloned() {
                let mutated: Vec<Vec<i64>> = rows
                    .iter()
                    .map(|row| {
                        (0..row.as_array().map_or(0, |r| r.len()))
                            .map(|_| hostile_quantity(rng))
                            .collect()
                    })
                    .collect();
                decision["per_hospital"] = serde_json::json!(mutated);
            }
        }
        Some("manufacturer_allocations") => {
            if let Some(rows) = decision["per_region"].as_array().cloned() {
                let mutated: Vec<Vec<i64>> = rows
                    .iter()
                    .map(|row| {
                        (0..row.as_array().map_or(0, |r| r.len()))
                            .map(|_| hostile_quantity(rng))
                            .collect()
                    })
                    .collect();
                decision["per_region"] = serde_json::json!(mutated);
            }
        }
        _ => {}
    }
    decision
}

fn reshape_decision(builtin: &serde_json::Value, rng: &mut ChaCha8Rng) -> serde_json::Value {
    let mut decision = builtin.clone();
    let drop_one = rng.random::<bool>();
    for field in ["quantities", "per_hospital", "per_region"] {
        if let Some(array) = decision.get_mut(field).and_then(|v| v.as_array_mut()) {
            if drop_one && !array.is_empty() {
                array.pop();
            } else {
                let extra = array.first().cloned().unwrap_or(serde_json::json!(0));
                array.push(extra);
            }
        }
    }
    if rng.random::<f64>() < 0.2 {
        decision["kind"] = serde_json::json!("manufacturer_allocations");
    }
    decision
}
