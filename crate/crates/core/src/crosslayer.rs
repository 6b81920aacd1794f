//! Bridges the coordination layer and the enforcement ledger.
//!
//! Each day's outcome is packed into a snapshot — allocations (with the
//! demand they answered and the fairness weights), end-of-day inventories,
//! and disruption reports — canonically serialized, stored under its content
//! address, and submitted with an HMAC tag. The ledger re-derives the hash
//! from the stored bytes, authenticates, validates every drug's allocation,
//! and commits atomically; any failure leaves only a rejection record.
//!
//! Canonical byte form: compact JSON with all object keys sorted
//! lexicographically, integer quantities in plain decimal, and the
//! disruption list pre-sorted by (agent_id, event_type). Identical logical
//! content therefore yields identical bytes everywhere, which is what makes
//! `H(snapshot)` well-defined.

use serde::{Deserialize, Serialize};

use crate::coordination::RoundOutcome;
use crate::ledger::{
    sha256, validate_allocation, AuditAction, DisruptionEventType, DisruptionReport, Ledger,
    LedgerError,
};
use crate::types::{AgentClass, AgentId};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CanonError {
    #[error("disruption list must be sorted by (agent_id, event_type)")]
    UnsortedDisruptions,
    #[error("non-finite fairness weight for region {0}")]
    NonFiniteWeight(u32),
    #[error("payload does not parse: {0}")]
    Malformed(String),
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SnapshotVerifyError {
    #[error("receipt was not an acceptance")]
    NotCommitted,
    #[error("no audit record with tx_id {0}")]
    RecordMissing(u64),
    #[error("audit record does not match receipt: {0}")]
    RecordMismatch(String),
    #[error("missing content object {0}")]
    MissingContent(String),
    #[error("content object corrupt: {0}")]
    CorruptContent(String),
    #[error("stored payload malformed: {0}")]
    MalformedPayload(String),
    #[error("payload day {payload} disagrees with receipt day {receipt}")]
    DayMismatch { payload: u64, receipt: u64 },
}

/// Allocation entry for one (region, drug).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrugAllocation {
    /// Units allocated to the region.
    pub allocated: u64,
    /// Aggregate demand the region reported; the cap the allocation was
    /// validated against.
    pub demand: u64,
}

/// One region's row of the allocation matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionAllocation {
    pub region: u32,
    /// Fairness weight phi for the region (shared across drugs).
    pub fairness: f64,
    pub drugs: Vec<DrugAllocation>,
}

/// The allocation section of a snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllocationSection {
    /// Units produced today per drug, declared for budget validation.
    pub produced: Vec<u64>,
    pub regions: Vec<RegionAllocation>,
}

/// End-of-day balance of one agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentInventory {
    pub agent_id: String,
    pub stock: Vec<u64>,
}

/// Everything the ledger needs to enforce one day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotPayload {
    pub day: u64,
    pub allocations: AllocationSection,
    pub inventories: Vec<AgentInventory>,
    pub disruptions: Vec<DisruptionReport>,
}

impl SnapshotPayload {
    /// Packs a round outcome plus the end-of-day balances.
    pub fn from_round(outcome: &RoundOutcome, balances: &[(AgentId, Vec<u64>)]) -> Self {
        let regions = outcome
            .allocations
            .iter()
            .map(|alloc| RegionAllocation {
                region: alloc.region,
                fairness: alloc.fairness,
                drugs: alloc
                    .quantities
                    .iter()
                    .enumerate()
                    .map(|(d, &allocated)| DrugAllocation {
                        allocated,
                        demand: outcome.regional_demand[alloc.region as usize][d],
                    })
                    .collect(),
            })
            .collect();
        let mut disruptions: Vec<DisruptionReport> = outcome
            .disruptions
            .iter()
            .map(|event| DisruptionReport {
                agent_id: event.agent.to_string(),
                event_type: match event.event_type.as_str() {
                    "transit_delay" => DisruptionEventType::TransitDelay,
                    _ => DisruptionEventType::SupplyHalt,
                },
                timestamp: outcome.day,
            })
            .collect();
        disruptions.sort();
        SnapshotPayload {
            day: outcome.day,
            allocations: AllocationSection { produced: outcome.produced.clone(), regions },
            inventories: balances
                .iter()
                .map(|(agent, stock)| AgentInventory {
                    agent_id: agent.to_string(),
                    stock: stock.clone(),
                })
                .collect(),
            disruptions,
        }
    }
}

/// A built snapshot: payload plus its content address and integrity hash.
/// With a local content-addressed store the two are derived from the same
/// bytes; the invariant `cid == hex(integrity_hash)` is checked on submit.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub payload: SnapshotPayload,
    pub cid: String,
    pub integrity_hash: [u8; 32],
}

impl Snapshot {
    pub fn day(&self) -> u64 {
        self.payload.day
    }
}

/// Whether a submission was enforced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Accepted,
    Rejected { code: String },
}

impl Verdict {
    pub fn is_accepted(&self) -> bool {
        matches!(self, Verdict::Accepted)
    }

    /// Stable text form used in receipt exports.
    pub fn as_text(&self) -> String {
        match self {
            Verdict::Accepted => "accepted".to_string(),
            Verdict::Rejected { code } => format!("rejected:{code}"),
        }
    }
}

/// Result of one snapshot submission.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubmissionReceipt {
    /// Tx id of the snapshot_commit (or snapshot_reject) record;
    /// `u64::MAX` when the submitter was unknown and nothing could be logged.
    pub tx_id: u64,
    pub day: u64,
    pub integrity_hash: [u8; 32],
    pub verdict: Verdict,
}

/// Reserve units released to a region by contingency handling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReserveDeployment {
    pub day: u64,
    pub region: u32,
    pub quantities: Vec<u64>,
}

/// Deterministic byte encoding of a snapshot payload: compact JSON with keys
/// sorted at every level.
pub fn canonical_serialize(payload: &SnapshotPayload) -> Result<Vec<u8>, CanonError> {
    if !payload.disruptions.windows(2).all(|w| w[0] <= w[1]) {
        return Err(CanonError::UnsortedDisruptions);
    }
    for region in &payload.allocations.regions {
        if !region.fairness.is_finite() {
            return Err(CanonError::NonFiniteWeight(region.region));
        }
    }
    // serde_json maps are BTree-backed, so object keys come out sorted
    let value = serde_json::to_value(payload).expect("payload serializes");
    Ok(serde_json::to_vec(&value).expect("json value serializes"))
}

/// Parses canonical bytes back into a payload.
pub fn parse_payload(bytes: &[u8]) -> Result<SnapshotPayload, CanonError> {
    serde_json::from_slice(bytes).map_err(|e| CanonError::Malformed(e.to_string()))
}

/// Serializes, stores, and hashes a payload. The disruption list is
/// normalized (sorted) first.
pub fn build_snapshot(
    mut payload: SnapshotPayload,
    ledger: &mut Ledger,
) -> Result<Snapshot, CanonError> {
    payload.disruptions.sort();
    let bytes = canonical_serialize(&payload)?;
    let cid = ledger.store_mut().store(&bytes);
    let integrity_hash = sha256(&bytes);
    Ok(Snapshot { payload, cid, integrity_hash })
}

fn reject(
    ledger: &mut Ledger,
    snapshot: &Snapshot,
    submitter: &str,
    code: &str,
) -> SubmissionReceipt {
    let tx_id = match ledger.append_audit(
        AuditAction::SnapshotReject,
        submitter,
        snapshot.integrity_hash,
        snapshot.day(),
    ) {
        Ok(record) => record.tx_id,
        Err(_) => u64::MAX,
    };
    SubmissionReceipt {
        tx_id,
        day: snapshot.day(),
        integrity_hash: snapshot.integrity_hash,
        verdict: Verdict::Rejected { code: code.to_string() },
    }
}

/// A content rejection judges the day and consumes it: the decisions were
/// authentic but non-compliant, so the ledger records the verdict and moves
/// on. Authentication and transport failures never consume the day.
fn reject_consuming_day(
    ledger: &mut Ledger,
    snapshot: &Snapshot,
    submitter: &str,
    code: &str,
) -> SubmissionReceipt {
    let receipt = reject(ledger, snapshot, submitter, code);
    ledger.set_current_day(snapshot.day() + 1);
    receipt
}

/// Submits a snapshot for enforcement.
///
/// The ledger fetches the stored bytes by CID, re-derives the hash, checks
/// the MAC, validates every drug's allocation against its committed view of
/// manufacturer stock plus declared production, then atomically commits
/// inventories, processes disruptions (deploying emergency reserve against
/// regional shortfalls), and appends the snapshot_commit record. Any failed
/// check leaves no trace but a rejection record.
pub fn submit_snapshot(
    ledger: &mut Ledger,
    snapshot: &Snapshot,
    submitter: &str,
    mac: &[u8],
) -> (SubmissionReceipt, Vec<ReserveDeployment>) {
    let day = snapshot.day();
    let Some(role) = ledger.role(submitter) else {
        return (
            SubmissionReceipt {
                tx_id: u64::MAX,
                day,
                integrity_hash: snapshot.integrity_hash,
                verdict: Verdict::Rejected { code: "unknown_role".to_string() },
            },
            Vec::new(),
        );
    };
    if role.class != AgentClass::Manufacturer {
        return (reject(ledger, snapshot, submitter, "wrong_role"), Vec::new());
    }

    let bytes = match ledger.store().fetch(&snapshot.cid) {
        Ok(bytes) => bytes.to_vec(),
        Err(crate::ledger::StoreError::NotFound(_)) => {
            return (reject(ledger, snapshot, submitter, "missing_content"), Vec::new())
        }
        Err(crate::ledger::StoreError::Corrupt { .. }) => {
            return (reject(ledger, snapshot, submitter, "hash_mismatch"), Vec::new())
        }
    };
    if sha256(&bytes) != snapshot.integrity_hash || hex::encode(snapshot.integrity_hash) != snapshot.cid {
        return (reject(ledger, snapshot, submitter, "hash_mismatch"), Vec::new());
    }
    if !ledger.verify_mac(submitter, &bytes, mac) {
        return (reject(ledger, snapshot, submitter, "bad_mac"), Vec::new());
    }
    let payload = match parse_payload(&bytes) {
        Ok(payload) if payload.day == day => payload,
        _ => return (reject(ledger, snapshot, submitter, "malformed_payload"), Vec::new()),
    };
    if day != expected_day(ledger) {
        return (reject(ledger, snapshot, submitter, "day_order"), Vec::new());
    }
    for report in &payload.disruptions {
        if ledger.role(&report.agent_id).is_none() {
            return (reject_consuming_day(ledger, snapshot, submitter, "unknown_agent"), Vec::new());
        }
        if report.timestamp != day {
            return (reject_consuming_day(ledger, snapshot, submitter, "stale_report"), Vec::new());
        }
    }
    for inventory in &payload.inventories {
        if ledger.role(&inventory.agent_id).is_none() {
            return (reject_consuming_day(ledger, snapshot, submitter, "unknown_agent"), Vec::new());
        }
        if inventory.stock.len() != ledger.num_drugs() as usize {
            return (
                reject_consuming_day(ledger, snapshot, submitter, "malformed_payload"),
                Vec::new(),
            );
        }
    }

    // allocation validation per drug against the committed budget
    let drugs = ledger.num_drugs() as usize;
    if payload.allocations.produced.len() != drugs {
        return (reject_consuming_day(ledger, snapshot, submitter, "malformed_payload"), Vec::new());
    }
    let halted = payload
        .disruptions
        .iter()
        .any(|r| r.agent_id == submitter && r.event_type == DisruptionEventType::SupplyHalt);
    let committed_stock: Vec<u64> = ledger
        .committed_balance(submitter)
        .map(|b| b.to_vec())
        .unwrap_or_else(|| vec![0; drugs]);
    let fairness: Vec<f64> =
        payload.allocations.regions.iter().map(|r| r.fairness).collect();
    for d in 0..drugs {
        let alloc: Vec<u64> = payload
            .allocations
            .regions
            .iter()
            .map(|r| r.drugs.get(d).map(|e| e.allocated).unwrap_or(0))
            .collect();
        let demand: Vec<u64> = payload
            .allocations
            .regions
            .iter()
            .map(|r| r.drugs.get(d).map(|e| e.demand).unwrap_or(0))
            .collect();
        let budget = committed_stock[d] + payload.allocations.produced[d];
        if let Err(reason) =
            validate_allocation(&alloc, &demand, &fairness, budget, ledger.epsilon(), halted)
        {
            return (reject_consuming_day(ledger, snapshot, submitter, reason.code()), Vec::new());
        }
    }

    // compute inventory deltas against committed balances
    let mut deltas = Vec::with_capacity(payload.inventories.len());
    for inventory in &payload.inventories {
        let committed = ledger
            .committed_balance(&inventory.agent_id)
            .map(|b| b.to_vec())
            .unwrap_or_else(|| vec![0; drugs]);
        let delta: Vec<i64> = inventory
            .stock
            .iter()
            .zip(&committed)
            .map(|(&new, &old)| new as i64 - old as i64)
            .collect();
        deltas.push((inventory.agent_id.clone(), delta));
    }

    // all checks passed: apply atomically
    ledger.set_current_day(day);
    if let Err(err) = ledger.commit_inventory(submitter, day, &deltas) {
        let code = match err {
            LedgerError::NegativeBalance { .. } => "negative_balance",
            _ => "malformed_payload",
        };
        return (reject_consuming_day(ledger, snapshot, submitter, code), Vec::new());
    }
    let alloc_bytes =
        serde_json::to_vec(&serde_json::to_value(&payload.allocations).expect("serializes"))
            .expect("serializes");
    ledger
        .append_audit(AuditAction::AllocationCommit, submitter, sha256(&alloc_bytes), day)
        .expect("submitter registered");

    let mut deployments = Vec::new();
    for report in &payload.disruptions {
        let shortfall = contingency_shortfall(&payload, report, drugs);
        let deployed = ledger
            .report_disruption(report, &shortfall)
            .expect("report pre-validated");
        if deployed.iter().any(|&q| q > 0) {
            let region = report
                .agent_id
                .parse::<AgentId>()
                .map(|a| a.index)
                .unwrap_or(0);
            deployments.push(ReserveDeployment { day, region, quantities: deployed });
        }
    }

    let record = ledger
        .append_audit(AuditAction::SnapshotCommit, submitter, snapshot.integrity_hash, day)
        .expect("submitter registered");
    let receipt = SubmissionReceipt {
        tx_id: record.tx_id,
        day,
        integrity_hash: snapshot.integrity_hash,
        verdict: Verdict::Accepted,
    };
    ledger.set_current_day(day + 1);
    (receipt, deployments)
}

/// Shortfall a disruption report is entitled to draw against: for a
/// distributor, its region's unfilled aggregate demand today; manufacturer
/// and hospital reports are logged without automatic deployment.
fn contingency_shortfall(
    payload: &SnapshotPayload,
    report: &DisruptionReport,
    drugs: usize,
) -> Vec<u64> {
    let Ok(agent) = report.agent_id.parse::<AgentId>() else {
        return vec![0; drugs];
    };
    if agent.class != AgentClass::Distributor {
        return vec![0; drugs];
    }
    payload
        .allocations
        .regions
        .iter()
        .find(|r| r.region == agent.index)
        .map(|r| r.drugs.iter().map(|e| e.demand.saturating_sub(e.allocated)).collect())
        .unwrap_or_else(|| vec![0; drugs])
}

/// The next day the ledger will accept.
pub fn expected_day(ledger: &Ledger) -> u64 {
    ledger.current_day()
}

/// Re-derives an accepted receipt end-to-end: audit record, stored bytes,
/// hash, and day must all line up. Works from the exported chain and store
/// alone.
pub fn verify_snapshot(
    receipt: &SubmissionReceipt,
    ledger: &Ledger,
) -> Result<(), SnapshotVerifyError> {
    if !receipt.verdict.is_accepted() {
        return Err(SnapshotVerifyError::NotCommitted);
    }
    let record = ledger
        .chain()
        .get(receipt.tx_id as usize)
        .ok_or(SnapshotVerifyError::RecordMissing(receipt.tx_id))?;
    if record.action != AuditAction::SnapshotCommit {
        return Err(SnapshotVerifyError::RecordMismatch("action".to_string()));
    }
    if record.payload_hash != receipt.integrity_hash {
        return Err(SnapshotVerifyError::RecordMismatch("payload hash".to_string()));
    }
    if record.timestamp != receipt.day {
        return Err(SnapshotVerifyError::RecordMismatch("timestamp".to_string()));
    }
    let cid = hex::encode(record.payload_hash);
    let bytes = match ledger.store().fetch(&cid) {
        Ok(bytes) => bytes,
        Err(crate::ledger::StoreError::NotFound(_)) => {
            return Err(SnapshotVerifyError::MissingContent(cid))
        }
        Err(crate::ledger::StoreError::Corrupt { .. }) => {
            return Err(SnapshotVerifyError::CorruptContent(cid))
        }
    };
    let payload =
        parse_payload(bytes).map_err(|e| SnapshotVerifyError::MalformedPayload(e.to_string()))?;
    if payload.day != receipt.day {
        return Err(SnapshotVerifyError::DayMismatch { payload: payload.day, receipt: receipt.day });
    }
    Ok(())
}
