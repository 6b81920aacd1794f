//! Full-run orchestration and artifact management.
//!
//! A run executes `horizon_days` day cycles — coordinate, apply, snapshot,
//! submit — then computes metrics and exports a self-contained artifact
//! directory: round log, event log, shipment flow, inventory and epidemic
//! series, receipts, the audit chain, the content store, metrics, the
//! resolved config, and a manifest carrying the audit head hash. Replay
//! re-runs from the manifest and byte-compares; audit verification needs
//! nothing but the exported chain and store.

use std::fmt::Write as _;
use std::io;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::coordination::{
    apply_outcome, run_round, CoordinationError, RoundOutcome, Topology, WorldState,
};
use crate::crosslayer::{
    build_snapshot, canonical_serialize, parse_payload, submit_snapshot, verify_snapshot,
    CanonError, ReserveDeployment, SnapshotPayload, SubmissionReceipt,
};
use crate::ledger::{
    compute_mac, sha256, AuditAction, AuditRecord, Ledger, LedgerError, RoleRecord,
};
use crate::metrics::{service_summary, MetricsError, MetricsReport, RunRecords, DEFAULT_THETA_FRAC};
use crate::policy::{BuiltinPolicy, DecisionPolicy, ExternalPolicy, DEFAULT_TIMEOUT_MS};
use crate::rng::StreamFactory;
use crate::scenario::{
    generate_scenario, integrate_sir, ConfigError, ScenarioConfig, SirParams, Timeline,
    BASELINE_BETA,
};
use crate::types::{AgentClass, AgentId};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("coordination: {0}")]
    Coordination(#[from] CoordinationError),
    #[error("snapshot: {0}")]
    Canon(#[from] CanonError),
    #[error("ledger: {0}")]
    Ledger(#[from] LedgerError),
    #[error("metrics: {0}")]
    Metrics(#[from] MetricsError),
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("could not spawn external policy {command:?}: {source}")]
    PolicySpawn { command: String, source: io::Error },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("replay refused: {0}")]
    ReplayRefused(String),
}

/// Which decision source drives the agents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum PolicySpec {
    Builtin,
    External { command: String, timeout_ms: u64 },
}

impl PolicySpec {
    pub fn parse(text: &str) -> Result<Self, String> {
        if text == "builtin" {
            Ok(PolicySpec::Builtin)
        } else if let Some(command) = text.strip_prefix("external:") {
            if command.trim().is_empty() {
                return Err("external policy command is empty".to_string());
            }
            Ok(PolicySpec::External {
                command: command.to_string(),
                timeout_ms: DEFAULT_TIMEOUT_MS,
            })
        } else {
            Err(format!("unknown policy {text:?}; expected builtin or external:<command>"))
        }
    }

    pub fn label(&self) -> String {
        match self {
            PolicySpec::Builtin => "builtin".to_string(),
            PolicySpec::External { command, .. } => format!("external:{command}"),
        }
    }
}

/// Everything a finished run leaves behind, in memory.
pub struct CompletedRun {
    pub config: ScenarioConfig,
    pub timeline: Timeline,
    pub topology: Topology,
    pub outcomes: Vec<RoundOutcome>,
    pub receipts: Vec<SubmissionReceipt>,
    pub deployments: Vec<ReserveDeployment>,
    /// Post-deployment end-of-day balances, indexed [day] -> (agent, stock).
    pub balance_series: Vec<Vec<(AgentId, Vec<u64>)>>,
    pub final_world: WorldState,
    pub ledger: Ledger,
    pub report: MetricsReport,
}

fn all_agents(topology: &Topology) -> Vec<AgentId> {
    let mut agents = vec![AgentId::manufacturer(0)];
    for j in 0..topology.num_distributors() {
        agents.push(AgentId::distributor(j));
    }
    for k in 0..topology.num_hospitals() {
        agents.push(AgentId::hospital(k));
    }
    agents
}

/// Executes a full simulation with the given policy source.
pub fn run_simulation(
    config: &ScenarioConfig,
    policy_spec: &PolicySpec,
) -> Result<CompletedRun, RunError> {
    config.validate()?;
    let timeline = generate_scenario(config)?;
    let topology = Topology::build(config)?;
    let streams = StreamFactory::new(config.seed);
    let mut world = WorldState::init(config, &topology);
    let mut ledger = Ledger::new(
        config.num_drugs,
        config.horizon_days,
        config.epsilon,
        config.reserve_stock.clone(),
    );

    for agent in all_agents(&topology) {
        ledger.register_role(RoleRecord {
            role_id: agent.to_string(),
            class: agent.class,
            auth_key: streams.role_key(&agent.to_string()).to_vec(),
        })?;
    }
    // genesis commit: the derived initial stock positions
    let genesis: Vec<(String, Vec<i64>)> = world
        .balances()
        .into_iter()
        .map(|(agent, stock)| {
            (agent.to_string(), stock.into_iter().map(|q| q as i64).collect())
        })
        .collect();
    let submitter = AgentId::manufacturer(0).to_string();
    ledger.commit_inventory(&submitter, 0, &genesis)?;
    let submitter_key = streams.role_key(&submitter);

    let mut policy: Box<dyn DecisionPolicy> = match policy_spec {
        PolicySpec::Builtin => Box::new(BuiltinPolicy),
        PolicySpec::External { command, timeout_ms } => Box::new(
            ExternalPolicy::spawn(command, *timeout_ms)
                .map_err(|source| RunError::PolicySpawn { command: command.clone(), source })?,
        ),
    };

    let mut outcomes = Vec::with_capacity(config.horizon_days as usize);
    let mut receipts = Vec::with_capacity(config.horizon_days as usize);
    let mut deployments = Vec::new();
    let mut balance_series = Vec::with_capacity(config.horizon_days as usize);
    for _ in 0..config.horizon_days {
        let outcome =
            run_round(&world, &timeline, &topology, config, policy.as_mut(), &streams)?;
        let mut next = apply_outcome(&world, &outcome)?;

        let payload = SnapshotPayload::from_round(&outcome, &next.balances());
        let snapshot = build_snapshot(payload, &mut ledger)?;
        let bytes = canonical_serialize(&snapshot.payload)?;
        let mac = compute_mac(&submitter_key, &bytes);
        let (receipt, day_deployments) =
            submit_snapshot(&mut ledger, &snapshot, &submitter, &mac);
        // contingency stock reaches the region's distributor overnight
        for deployment in &day_deployments {
            for (d, &quantity) in deployment.quantities.iter().enumerate() {
                next.distributors[deployment.region as usize].inventory[d] += quantity;
            }
        }
        receipts.push(receipt);
        deployments.extend(day_deployments);
        balance_series.push(next.balances());
        outcomes.push(outcome);
        world = next;
    }
    drop(policy);

    let verified_days = receipts
        .iter()
        .filter(|receipt| {
            receipt.verdict.is_accepted() && verify_snapshot(receipt, &ledger).is_ok()
        })
        .count() as u64;

    let report = compute_report(config, &timeline, &outcomes, &balance_series, &ledger, verified_days)?;
    Ok(CompletedRun {
        config: config.clone(),
        timeline,
        topology,
        outcomes,
        receipts,
        deployments,
        balance_series,
        final_world: world,
        ledger,
        report,
    })
}

fn compute_report(
    config: &ScenarioConfig,
    timeline: &Timeline,
    outcomes: &[RoundOutcome],
    balance_series: &[Vec<(AgentId, Vec<u64>)>],
    ledger: &Ledger,
    verified_days: u64,
) -> Result<MetricsReport, MetricsError> {
    let days = config.horizon_days as usize;
    let hospitals = config.num_regions as usize;
    let requested: Vec<Vec<Vec<u64>>> = outcomes
        .iter()
        .map(|o| o.orders.iter().map(|m| m.quantities.clone()).collect())
        .collect();
    let fulfilled: Vec<Vec<Vec<u64>>> = outcomes
        .iter()
        .map(|o| o.fulfillments.iter().map(|m| m.quantities.clone()).collect())
        .collect();
    let allocations: Vec<Vec<Vec<u64>>> = outcomes
        .iter()
        .map(|o| o.allocations.iter().map(|m| m.quantities.clone()).collect())
        .collect();
    let criticality_sum: f64 = timeline.drug_criticality.iter().sum();
    let severity_weights: Vec<Vec<f64>> = (0..days as u64)
        .map(|day| {
            (0..config.num_regions)
                .map(|r| timeline.sir[day as usize][r as usize].i * criticality_sum)
                .collect()
        })
        .collect();
    // resilience and stockouts are judged on opening stock (post-delivery,
    // pre-consumption): closing balance plus the day's consumption
    let inventories: Vec<Vec<Vec<u64>>> = balance_series
        .iter()
        .zip(outcomes)
        .map(|(balances, outcome)| {
            balances
                .iter()
                .filter(|(agent, _)| agent.class == AgentClass::Hospital)
                .map(|(agent, stock)| {
                    let consumed = &outcome.consumption[agent.index as usize];
                    stock.iter().zip(consumed).map(|(&s, &c)| s + c).collect()
                })
                .collect()
        })
        .collect();
    let buffers: Vec<Vec<u64>> = (0..hospitals)
        .map(|r| config.buffer_targets[r].clone())
        .collect();
    let policy_fallbacks: u64 = outcomes.iter().map(|o| o.policy_fallbacks()).sum();
    let policy_clamps: u64 = outcomes.iter().map(|o| o.policy_clamps.len() as u64).sum();
    let records = RunRecords {
        horizon_days: config.horizon_days,
        requested: &requested,
        fulfilled: &fulfilled,
        allocations: &allocations,
        severity_weights: &severity_weights,
        inventories: &inventories,
        buffers: &buffers,
        policy_fallbacks,
        policy_clamps,
        verified_days,
    };
    service_summary(&records, ledger.chain(), DEFAULT_THETA_FRAC)
}

fn fmt_f64(x: f64) -> String {
    // shortest round-trip form; identical on every platform
    format!("{x}")
}

impl CompletedRun {
    pub fn head_hash(&self) -> [u8; 32] {
        self.ledger.head_hash()
    }

    /// `day,msg_type,src,dst,drug,quantity` — one row per message per drug.
    pub fn round_log_csv(&self) -> String {
        let mut out = String::from("day,msg_type,src,dst,drug,quantity\n");
        for outcome in &self.outcomes {
            let day = outcome.day;
            for msg in &outcome.orders {
                let src = AgentId::hospital(msg.hospital);
                let dst = AgentId::distributor(self.topology.distributor_of(msg.hospital));
                for (drug, &q) in msg.quantities.iter().enumerate() {
                    let _ = writeln!(out, "{day},order,{src},{dst},{drug},{q}");
                }
            }
            for msg in &outcome.aggregates {
                let src = AgentId::distributor(msg.region);
                for (drug, &q) in msg.totals.iter().enumerate() {
                    let _ = writeln!(out, "{day},aggregate_demand,{src},m0,{drug},{q}");
                }
            }
            for msg in &outcome.allocations {
                let dst = AgentId::distributor(msg.region);
                for (drug, &q) in msg.quantities.iter().enumerate() {
                    let _ = writeln!(out, "{day},allocation,m0,{dst},{drug},{q}");
                }
            }
            for msg in &outcome.fulfillments {
                let src = AgentId::distributor(self.topology.distributor_of(msg.hospital));
                let dst = AgentId::hospital(msg.hospital);
                for (drug, &q) in msg.quantities.iter().enumerate() {
                    let _ = writeln!(out, "{day},fulfillment,{src},{dst},{drug},{q}");
                }
            }
        }
        out
    }

    /// `day,event,agent,drug,quantity` — physical events plus policy
    /// fallbacks; zero-quantity moves are omitted.
    pub fn events_csv(&self) -> String {
        let mut out = String::from("day,event,agent,drug,quantity\n");
        for outcome in &self.outcomes {
            let day = outcome.day;
            for s in &outcome.delivered {
                let _ = writeln!(out, "{day},deliver,{},{},{}", s.dst, s.drug, s.quantity);
            }
            for (k, row) in outcome.consumption.iter().enumerate() {
                for (drug, &q) in row.iter().enumerate() {
                    if q > 0 {
                        let _ =
                            writeln!(out, "{day},consume,h{k},{drug},{q}");
                    }
                }
            }
            for (drug, &q) in outcome.produced.iter().enumerate() {
                if q > 0 {
                    let _ = writeln!(out, "{day},produce,m0,{drug},{q}");
                }
            }
            for event in &outcome.disruptions {
                let _ = writeln!(
                    out,
                    "{day},disruption_{},{},-,1",
                    event.event_type, event.agent
                );
            }
            for agent in &outcome.fallback_agents {
                let _ = writeln!(out, "{day},policy_fallback,{agent},-,1");
            }
        }
        for deployment in &self.deployments {
            for (drug, &q) in deployment.quantities.iter().enumerate() {
                if q > 0 {
                    let _ = writeln!(
                        out,
                        "{},deploy,d{},{drug},{q}",
                        deployment.day, deployment.region
                    );
                }
            }
        }
        out
    }

    /// `day,src,dst,drug,quantity,arrival_day` — every scheduled shipment.
    pub fn flow_csv(&self) -> String {
        let mut out = String::from("day,src,dst,drug,quantity,arrival_day\n");
        for outcome in &self.outcomes {
            for s in &outcome.new_shipments {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    s.ship_day, s.src, s.dst, s.drug, s.quantity, s.arrival_day
                );
            }
        }
        out
    }

    /// `day,agent,drug,inventory` — post-deployment end-of-day balances.
    pub fn inventory_csv(&self) -> String {
        let mut out = String::from("day,agent,drug,inventory\n");
        for (day, balances) in self.balance_series.iter().enumerate() {
            for (agent, stock) in balances {
                for (drug, &q) in stock.iter().enumerate() {
                    let _ = writeln!(out, "{day},{agent},{drug},{q}");
                }
            }
        }
        out
    }

    /// `day,region,s,i,r` — the epidemic curves behind the demand signal.
    pub fn epidemic_csv(&self) -> String {
        let mut out = String::from("day,region,s,i,r\n");
        for (day, states) in self.timeline.sir.iter().enumerate() {
            for (region, state) in states.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{day},{region},{},{},{}",
                    fmt_f64(state.s),
                    fmt_f64(state.i),
                    fmt_f64(state.r)
                );
            }
        }
        out
    }

    /// `day,region,drug,demand` — realized daily demand.
    pub fn demand_csv(&self) -> String {
        let mut out = String::from("day,region,drug,demand\n");
        for (day, regions) in self.timeline.demand.iter().enumerate() {
            for (region, drugs) in regions.iter().enumerate() {
                for (drug, sample) in drugs.iter().enumerate() {
                    let _ = writeln!(out, "{day},{region},{drug},{}", sample.expected);
                }
            }
        }
        out
    }

    /// `day,tx_id,hash,verdict` — one row per snapshot submission.
    pub fn receipts_csv(&self) -> String {
        let mut out = String::from("day,tx_id,hash,verdict\n");
        for receipt in &self.receipts {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                receipt.day,
                receipt.tx_id,
                hex::encode(receipt.integrity_hash),
                receipt.verdict.as_text()
            );
        }
        out
    }

    /// The audit chain, one canonical record per line, no header.
    pub fn audit_chain_text(&self) -> String {
        let mut out = String::new();
        for record in self.ledger.chain() {
            out.push_str(&record.to_line());
            out.push('\n');
        }
        out
    }

    /// Tidy per-day metric series: `day,metric,subject,value`.
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("day,metric,subject,value\n");
        for day in &self.report.per_day {
            if let Some(eta) = day.eta {
                let _ = writeln!(out, "{},eta,,{}", day.day, fmt_f64(eta));
            }
            let _ = writeln!(out, "{},throughput,,{}", day.day, day.throughput);
            if let Some(delta) = &day.delta {
                for (region, &d) in delta.iter().enumerate() {
                    let _ = writeln!(out, "{},delta,r{region},{}", day.day, fmt_f64(d));
                }
            }
        }
        out
    }

    pub fn metrics_json(&self) -> String {
        let value = serde_json::to_value(&self.report).expect("report serializes");
        serde_json::to_string_pretty(&value).expect("report serializes")
    }

    pub fn config_json(&self) -> String {
        let value = serde_json::to_value(&self.config).expect("config serializes");
        serde_json::to_string_pretty(&value).expect("config serializes")
    }

    /// Writes the self-contained artifact directory, manifest last (via a
    /// temp file and rename, so a manifest implies a complete run).
    pub fn write_artifacts(
        &self,
        dir: &Path,
        policy: &PolicySpec,
        started_unix_ms: u128,
    ) -> Result<RunManifest, RunError> {
        std::fs::create_dir_all(dir)?;
        let config_text = self.config_json();
        std::fs::write(dir.join("config.json"), &config_text)?;
        std::fs::write(dir.join("round_log.csv"), self.round_log_csv())?;
        std::fs::write(dir.join("events.csv"), self.events_csv())?;
        std::fs::write(dir.join("flow.csv"), self.flow_csv())?;
        std::fs::write(dir.join("inventory.csv"), self.inventory_csv())?;
        std::fs::write(dir.join("epidemic.csv"), self.epidemic_csv())?;
        std::fs::write(dir.join("demand.csv"), self.demand_csv())?;
        std::fs::write(dir.join("receipts.csv"), self.receipts_csv())?;
        std::fs::write(dir.join("audit_chain.csv"), self.audit_chain_text())?;
        std::fs::write(dir.join("metrics.json"), self.metrics_json())?;
        std::fs::write(dir.join("metrics.csv"), self.metrics_csv())?;
        self.ledger.store().export_dir(&dir.join("store"))?;

        let manifest = RunManifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.config.seed,
            config_path: "config.json".to_string(),
            config_sha256: hex::encode(sha256(config_text.as_bytes())),
            audit_head: hex::encode(self.head_hash()),
            horizon_days: self.config.horizon_days,
            policy: policy.label(),
            service_level: self.report.service_level,
            started_unix_ms,
            finished_unix_ms: now_unix_ms(),
        };
        let manifest_text = serde_json::to_string_pretty(
            &serde_json::to_value(&manifest).expect("manifest serializes"),
        )
        .expect("manifest serializes");
        let tmp = dir.join("manifest.json.tmp");
        std::fs::write(&tmp, &manifest_text)?;
        std::fs::rename(&tmp, dir.join("manifest.json"))?;
        Ok(manifest)
    }
}

pub fn now_unix_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

/// Written atomically at run end; replay and audit verification start here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub version: String,
    pub seed: u64,
    pub config_path: String,
    pub config_sha256: String,
    pub audit_head: String,
    pub horizon_days: u64,
    pub policy: String,
    pub service_level: f64,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
}

/// Outcome of a replay comparison.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReplayReport {
    /// Byte-identical round log and matching audit head.
    Clean,
    /// First divergence, as (line number, original, replayed).
    Divergent { line: usize, original: String, replayed: String },
    /// Audit heads differ while logs match.
    HeadMismatch { original: String, replayed: String },
}

/// Re-runs a manifest's configuration and byte-compares the round log and
/// audit head. Refuses when the config file was edited (hash mismatch) or
/// when the original run used an external policy.
pub fn replay(manifest_path: &Path) -> Result<ReplayReport, RunError> {
    let dir = manifest_path
        .parent()
        .ok_or_else(|| RunError::Manifest("manifest has no parent directory".to_string()))?;
    let manifest: RunManifest = serde_json::from_str(&std::fs::read_to_string(manifest_path)?)
        .map_err(|e| RunError::Manifest(e.to_string()))?;
    if manifest.policy != "builtin" {
        return Err(RunError::ReplayRefused(format!(
            "run used policy {:?}; only builtin runs replay deterministically",
            manifest.policy
        )));
    }
    let config_text = std::fs::read_to_string(dir.join(&manifest.config_path))?;
    let actual_hash = hex::encode(sha256(config_text.as_bytes()));
    if actual_hash != manifest.config_sha256 {
        return Err(RunError::ReplayRefused(format!(
            "config hash mismatch: manifest {}, file {}",
            manifest.config_sha256, actual_hash
        )));
    }
    let config = ScenarioConfig::from_json(&config_text)
        .map_err(|e| RunError::Manifest(format!("config does not parse: {e}")))?;

    let run = run_simulation(&config, &PolicySpec::Builtin)?;
    let replayed_log = run.round_log_csv();
    let original_log = std::fs::read_to_string(dir.join("round_log.csv"))?;
    if original_log != replayed_log {
        let mut line = 1usize;
        for (a, b) in original_log.lines().zip(replayed_log.lines()) {
            if a != b {
                return Ok(ReplayReport::Divergent {
                    line,
                    original: a.to_string(),
                    replayed: b.to_string(),
                });
            }
            line += 1;
        }
        return Ok(ReplayReport::Divergent {
            line,
            original: original_log.lines().nth(line - 1).unwrap_or("").to_string(),
            replayed: replayed_log.lines().nth(line - 1).unwrap_or("").to_string(),
        });
    }
    let replayed_head = hex::encode(run.head_hash());
    if replayed_head != manifest.audit_head {
        return Ok(ReplayReport::HeadMismatch {
            original: manifest.audit_head,
            replayed: replayed_head,
        });
    }
    Ok(ReplayReport::Clean)
}

/// First failure found while verifying exported audit artifacts.
#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AuditFailure {
    #[error("record {index}: does not parse: {reason}")]
    ParseRecord { index: usize, reason: String },
    #[error("record {index}: hash chain inconsistent")]
    Chain { index: usize },
    #[error("record {index}: content object {cid}: {reason}")]
    Content { index: usize, cid: String, reason: String },
    #[error("record {index}: stored payload malformed: {reason}")]
    Payload { index: usize, reason: String },
    #[error("record {index}: payload day {payload} != record timestamp {timestamp}")]
    PayloadDay { index: usize, payload: u64, timestamp: u64 },
    #[error("store object {name}: bytes hash to {actual}")]
    StoreObject { name: String, actual: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifyReport {
    pub records: usize,
    pub snapshot_commits: usize,
    pub store_objects: usize,
}

/// Verifies exported artifacts end-to-end: chain integrity, every committed
/// snapshot's content object, and the name/content binding of every stored
/// object (so tampering with unreferenced objects is caught too).
pub fn verify_audit(chain_path: &Path, store_dir: &Path) -> Result<Result<VerifyReport, AuditFailure>, io::Error> {
    let text = std::fs::read_to_string(chain_path)?;
    let mut records = Vec::new();
    for (index, line) in text.lines().enumerate() {
        match AuditRecord::parse_line(line) {
            Ok(record) => records.push(record),
            Err(reason) => return Ok(Err(AuditFailure::ParseRecord { index, reason })),
        }
    }
    if let Err(index) = crate::ledger::verify_chain(&records) {
        return Ok(Err(AuditFailure::Chain { index }));
    }
    let store = crate::ledger::ContentStore::load_dir(store_dir)?;
    let mut commits = 0usize;
    for (index, record) in records.iter().enumerate() {
        if record.action != AuditAction::SnapshotCommit {
            continue;
        }
        commits += 1;
        let cid = hex::encode(record.payload_hash);
        let bytes = match store.fetch(&cid) {
            Ok(bytes) => bytes,
            Err(err) => {
                return Ok(Err(AuditFailure::Content { index, cid, reason: err.to_string() }))
            }
        };
        match parse_payload(bytes) {
            Ok(payload) => {
                if payload.day != record.timestamp {
                    return Ok(Err(AuditFailure::PayloadDay {
                        index,
                        payload: payload.day,
                        timestamp: record.timestamp,
                    }));
                }
            }
            Err(err) => {
                return Ok(Err(AuditFailure::Payload { index, reason: err.to_string() }))
            }
        }
    }
    for (name, bytes) in store.iter() {
        let actual = hex::encode(sha256(bytes));
        if &actual != name {
            return Ok(Err(AuditFailure::StoreObject { name: name.clone(), actual }));
        }
    }
    Ok(Ok(VerifyReport {
        records: records.len(),
        snapshot_commits: commits,
        store_objects: store.len(),
    }))
}

/// Tunable knobs for the default scenario builder.
#[derive(Debug, Clone, PartialEq)]
pub struct DefaultParams {
    pub num_regions: u32,
    pub num_drugs: u32,
    pub horizon_days: u64,
    pub seed: u64,
    /// Multiplier on the baseline infection rate; beta = severity * 0.375.
    pub severity: f64,
    pub disruption_prob: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub lead_time_days: u64,
    pub demand_noise_frac: f64,
    /// Manufacturer capacity as a multiple of peak projected total demand.
    pub capacity_mult: f64,
}

impl Default for DefaultParams {
    fn default() -> Self {
        DefaultParams {
            num_regions: 3,
            num_drugs: 3,
            horizon_days: 30,
            seed: 42,
            severity: 0.8,
            disruption_prob: 0.1,
            alpha: 15.0,
            epsilon: 0.05,
            lead_time_days: 1,
            demand_noise_frac: 0.1,
            capacity_mult: 1.5,
        }
    }
}

/// Builds the default scenario: staggered regional epidemics, criticality
/// tiers per drug, hospital buffers at 3x each hospital's peak projected
/// daily demand, and manufacturer capacity at `capacity_mult` x the peak
/// projected system demand.
pub fn default_config(params: &DefaultParams) -> Result<ScenarioConfig, ConfigError> {
    let sir_params: Vec<SirParams> = (0..params.num_regions)
        .map(|r| SirParams {
            beta: BASELINE_BETA * params.severity,
            gamma: 0.1,
            population: 10_000,
            initial_infected: 5 + 5 * r as u64,
        })
        .collect();
    let drug_criticality: Vec<f64> = (0..params.num_drugs)
        .map(|d| (1.0 - 0.2 * d as f64).max(0.2))
        .collect();

    // noiseless projection to size buffers and capacity
    let mut peak_regional = vec![vec![0u64; params.num_drugs as usize]; params.num_regions as usize];
    let mut peak_total = vec![0u64; params.num_drugs as usize];
    let mut states: Vec<_> = sir_params.iter().map(SirParams::initial_state).collect();
    for day in 0..params.horizon_days {
        if day > 0 {
            for (r, state) in states.iter_mut().enumerate() {
                *state = integrate_sir(&sir_params[r], state, 1.0)
                    .map_err(|e| ConfigError::BadSirParams { region: r, reason: e.to_string() })?;
            }
        }
        for (d, &c) in drug_criticality.iter().enumerate() {
            let mut total = 0u64;
            for (r, state) in states.iter().enumerate() {
                let projected = (state.i * c).round().max(0.0) as u64;
                peak_regional[r][d] = peak_regional[r][d].max(projected);
                total += projected;
            }
            peak_total[d] = peak_total[d].max(total);
        }
    }

    let buffer_targets: Vec<Vec<u64>> = peak_regional
        .iter()
        .map(|row| row.iter().map(|&p| (3 * p).max(30)).collect())
        .collect();
    let manufacturer_capacity: Vec<u64> = peak_total
        .iter()
        .map(|&p| ((p as f64 * params.capacity_mult).ceil() as u64).max(10))
        .collect();
    let reserve_stock: Vec<u64> = peak_total.iter().map(|&p| p.max(10)).collect();

    let config = ScenarioConfig {
        num_regions: params.num_regions,
        num_drugs: params.num_drugs,
        horizon_days: params.horizon_days,
        sir_params,
        drug_criticality,
        disruption: crate::scenario::DisruptionParams::uniform(
            params.disruption_prob,
            params.num_regions,
        ),
        alpha: params.alpha,
        epsilon: params.epsilon,
        buffer_targets,
        lead_time_days: params.lead_time_days,
        manufacturer_capacity,
        reserve_stock,
        demand_noise_frac: params.demand_noise_frac,
        capacity_outages: vec![],
        seed: params.seed,
    };
    config.validate()?;
    Ok(config)
}

/// Convenience wrapper: run and export in one call.
pub fn run_to_dir(
    config: &ScenarioConfig,
    policy: &PolicySpec,
    dir: &Path,
) -> Result<(CompletedRun, RunManifest), RunError> {
    let started = now_unix_ms();
    let run = run_simulation(config, policy)?;
    let manifest = run.write_artifacts(dir, policy, started)?;
    Ok((run, manifest))
}

/// Output directory name for one sweep point.
pub fn sweep_dir_name(parameter: &str, value: f64) -> String {
    format!("sweep_{parameter}_{value}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_params(seed: u64) -> DefaultParams {
        DefaultParams { horizon_days: 12, seed, ..DefaultParams::default() }
    }

    #[test]
    fn default_config_sizes_capacity_from_projection() {
        let config = default_config(&DefaultParams::default()).unwrap();
        assert_eq!(config.num_regions, 3);
        assert_eq!(config.manufacturer_capacity.len(), 3);
        // capacity comfortably exceeds every single hospital's buffer refill rate
        for d in 0..3 {
            assert!(config.manufacturer_capacity[d] >= 10);
            for r in 0..3 {
                assert!(config.buffer_targets[r][d] >= 30);
            }
        }
        assert_eq!(config.drug_criticality, vec![1.0, 0.8, 0.6]);
    }

    #[test]
    fn run_produces_audited_metrics() {
        let config = default_config(&quick_params(7)).unwrap();
        let run = run_simulation(&config, &PolicySpec::Builtin).unwrap();
        assert_eq!(run.outcomes.len(), 12);
        assert_eq!(run.receipts.len(), 12);
        assert!(run.receipts.iter().all(|r| r.verdict.is_accepted()));
        assert_eq!(run.report.auditability_pass_rate, 1.0);
        assert_eq!(run.report.per_day.len(), 12);
        // ledger committed balances mirror the simulator at snapshot time:
        // hospitals and manufacturer match exactly (no deployments touch them)
        let last = run.balance_series.last().unwrap();
        for (agent, stock) in last {
            if agent.class != AgentClass::Distributor {
                assert_eq!(
                    run.ledger.committed_balance(&agent.to_string()).unwrap(),
                    stock.as_slice(),
                    "{agent}"
                );
            }
        }
    }

    #[test]
    fn artifacts_round_trip_through_verify_and_replay() {
        let dir = tempfile::tempdir().unwrap();
        let config = default_config(&quick_params(11)).unwrap();
        let (run, manifest) =
            run_to_dir(&config, &PolicySpec::Builtin, dir.path()).unwrap();
        assert_eq!(manifest.audit_head, hex::encode(run.head_hash()));

        let verdict =
            verify_audit(&dir.path().join("audit_chain.csv"), &dir.path().join("store"))
                .unwrap()
                .unwrap();
        assert_eq!(verdict.records, run.ledger.chain().len());
        assert!(verdict.snapshot_commits >= 12);

        let report = replay(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(report, ReplayReport::Clean);
    }

    #[test]
    fn replay_refuses_edited_config() {
        let dir = tempfile::tempdir().unwrap();
        let config = default_config(&quick_params(13)).unwrap();
        run_to_dir(&config, &PolicySpec::Builtin, dir.path()).unwrap();
        let config_path = dir.path().join("config.json");
        let mut text = std::fs::read_to_string(&config_path).unwrap();
        text = text.replace("\"seed\": 13", "\"seed\": 14");
        std::fs::write(&config_path, text).unwrap();
        assert!(matches!(
            replay(&dir.path().join("manifest.json")),
            Err(RunError::ReplayRefused(_))
        ));
    }

    #[test]
    fn seed_changes_audit_head() {
        let a = run_simulation(&default_config(&quick_params(1)).unwrap(), &PolicySpec::Builtin)
            .unwrap();
        let b = run_simulation(&default_config(&quick_params(2)).unwrap(), &PolicySpec::Builtin)
            .unwrap();
        assert_ne!(a.head_hash(), b.head_hash());
    }

    #[test]
    fn policy_spec_parses() {
        assert_eq!(PolicySpec::parse("builtin"), Ok(PolicySpec::Builtin));
        assert!(matches!(
            PolicySpec::parse("external:./policy --flag"),
            Ok(PolicySpec::External { .. })
        ));
        assert!(PolicySpec::parse("external:").is_err());
        assert!(PolicySpec::parse("magic").is_err());
    }
}
