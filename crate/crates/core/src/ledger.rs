//! Simulated on-chain enforcement layer.
//!
//! A single logical state machine holds permissioned roles, committed
//! inventories, an emergency reserve, a SHA-256 hash-chained audit log, and a
//! content-addressed store. Every state mutation appends an audit record;
//! the chain plus a published head hash gives tamper evidence over the whole
//! history. Submissions authenticate with HMAC-SHA256 over the canonical
//! payload using the role's key.
//!
//! Known property of hash chains: truncating the tail is only detectable
//! against an externally published head hash; the exported run manifest
//! carries that head.

use std::collections::BTreeMap;
use std::io;
use std::path::Path;

use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::types::AgentClass;

/// Genesis predecessor: 32 zero bytes.
pub const GENESIS_HASH: [u8; 32] = [0; 32];

pub fn sha256(bytes: &[u8]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher.finalize().into()
}

/// HMAC-SHA256 authentication tag over a canonical payload.
pub fn compute_mac(key: &[u8], payload: &[u8]) -> [u8; 32] {
    let mut mac = Hmac::<Sha256>::new_from_slice(key).expect("hmac accepts any key length");
    mac.update(payload);
    mac.finalize().into_bytes().into()
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum LedgerError {
    #[error("role {0} already registered")]
    DuplicateRole(String),
    #[error("unknown role {0}")]
    UnknownRole(String),
    #[error("role id {0:?} contains characters outside [a-z0-9_-]")]
    BadRoleId(String),
    #[error("auth key must be 32 bytes")]
    MalformedKey,
    #[error("delta would drive {agent} drug {drug} negative")]
    NegativeBalance { agent: String, drug: u32 },
    #[error("inventory batch shape does not match {expected} drugs")]
    BadBatchShape { expected: u32 },
    #[error("disruption report timestamp {got} is stale (current day {current})")]
    StaleReport { got: u64, current: u64 },
    #[error("timestamp {0} outside horizon {1}")]
    OutOfHorizon(u64, u64),
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum StoreError {
    #[error("content {0} not found")]
    NotFound(String),
    #[error("content {cid} is corrupt: bytes hash to {actual}")]
    Corrupt { cid: String, actual: String },
}

/// Why an allocation was rejected; codes are machine-readable and stable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum AllocationReject {
    /// Total allocation exceeds the available budget.
    Budget,
    /// A demanded region received less than the epsilon floor.
    MinSupport { region: u32 },
    /// A higher-weighted region received materially less than a lower one.
    SeverityConsistency { high: u32, low: u32 },
    /// Vector shapes disagree.
    Malformed,
}

impl AllocationReject {
    pub fn code(&self) -> &'static str {
        match self {
            AllocationReject::Budget => "budget",
            AllocationReject::MinSupport { .. } => "min_support",
            AllocationReject::SeverityConsistency { .. } => "severity_consistency",
            AllocationReject::Malformed => "malformed",
        }
    }
}

/// Checks one drug's regional allocation against the enforcement rules:
///
/// (a) budget: `sum(alloc) <= available`;
/// (b) minimum support: every region with nonzero demand gets at least
///     `floor(epsilon * available)` unless its full demand was satisfied;
/// (c) severity consistency: a region with the higher fairness weight never
///     receives more than one unit less than a lower-weighted region, unless
///     the higher region was demand-capped.
///
/// While the manufacturer has filed a supply halt for the day (`halted`),
/// only the budget rule applies: a halted plant legitimately allocates zero.
pub fn validate_allocation(
    alloc: &[u64],
    demand: &[u64],
    fairness: &[f64],
    available: u64,
    epsilon: f64,
    halted: bool,
) -> Result<(), AllocationReject> {
    let regions = alloc.len();
    if demand.len() != regions || fairness.len() != regions || regions == 0 {
        return Err(AllocationReject::Malformed);
    }
    if fairness.iter().any(|w| !w.is_finite()) || !epsilon.is_finite() || epsilon < 0.0 {
        return Err(AllocationReject::Malformed);
    }
    let total: u64 = alloc.iter().sum();
    if total > available {
        return Err(AllocationReject::Budget);
    }
    if halted {
        return Ok(());
    }
    let floor = (epsilon * available as f64).floor() as u64;
    for (r, &x) in alloc.iter().enumerate() {
        if demand[r] > 0 && x < floor && x < demand[r] {
            return Err(AllocationReject::MinSupport { region: r as u32 });
        }
    }
    for r in 0..regions {
        // a region that got everything it asked for is exempt
        if alloc[r] >= demand[r] {
            continue;
        }
        for q in 0..regions {
            if fairness[r] >= fairness[q] && alloc[r] + 1 < alloc[q] {
                return Err(AllocationReject::SeverityConsistency {
                    high: r as u32,
                    low: q as u32,
                });
            }
        }
    }
    Ok(())
}

/// Action vocabulary of the audit log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditAction {
    RoleRegister,
    SnapshotCommit,
    SnapshotReject,
    AllocationCommit,
    InventoryCommit,
    DisruptionCommit,
    ReserveDeploy,
}

impl AuditAction {
    pub fn as_str(&self) -> &'static str {
        match self {
            AuditAction::RoleRegister => "role_register",
            AuditAction::SnapshotCommit => "snapshot_commit",
            AuditAction::SnapshotReject => "snapshot_reject",
            AuditAction::AllocationCommit => "allocation_commit",
            AuditAction::InventoryCommit => "inventory_commit",
            AuditAction::DisruptionCommit => "disruption_commit",
            AuditAction::ReserveDeploy => "reserve_deploy",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "role_register" => AuditAction::RoleRegister,
            "snapshot_commit" => AuditAction::SnapshotCommit,
            "snapshot_reject" => AuditAction::SnapshotReject,
            "allocation_commit" => AuditAction::AllocationCommit,
            "inventory_commit" => AuditAction::InventoryCommit,
            "disruption_commit" => AuditAction::DisruptionCommit,
            "reserve_deploy" => AuditAction::ReserveDeploy,
            _ => return None,
        })
    }
}

/// One hash-chained audit record.
///
/// `record_hash = SHA256("tx_id,role_id,action,payload_hash,timestamp,prev_hash")`
/// over the exact exported line prefix, so a chain file verifies byte-for-byte.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditRecord {
    pub tx_id: u64,
    pub role_id: String,
    pub action: AuditAction,
    pub payload_hash: [u8; 32],
    pub timestamp: u64,
    pub prev_hash: [u8; 32],
    pub record_hash: [u8; 32],
}

impl AuditRecord {
    fn preimage(
        tx_id: u64,
        role_id: &str,
        action: AuditAction,
        payload_hash: &[u8; 32],
        timestamp: u64,
        prev_hash: &[u8; 32],
    ) -> String {
        format!(
            "{tx_id},{role_id},{},{},{timestamp},{}",
            action.as_str(),
            hex::encode(payload_hash),
            hex::encode(prev_hash)
        )
    }

    /// The canonical exported line (no trailing newline).
    pub fn to_line(&self) -> String {
        format!(
            "{},{}",
            Self::preimage(
                self.tx_id,
                &self.role_id,
                self.action,
                &self.payload_hash,
                self.timestamp,
                &self.prev_hash
            ),
            hex::encode(self.record_hash)
        )
    }

    pub fn parse_line(line: &str) -> Result<AuditRecord, String> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(format!("expected 7 fields, got {}", fields.len()));
        }
        let tx_id = fields[0].parse::<u64>().map_err(|e| format!("tx_id: {e}"))?;
        let role_id = fields[1].to_string();
        let action = AuditAction::parse(fields[2]).ok_or_else(|| format!("action {:?}", fields[2]))?;
        let payload_hash = parse_hash(fields[3])?;
        let timestamp = fields[4].parse::<u64>().map_err(|e| format!("timestamp: {e}"))?;
        let prev_hash = parse_hash(fields[5])?;
        let record_hash = parse_hash(fields[6])?;
        Ok(AuditRecord { tx_id, role_id, action, payload_hash, timestamp, prev_hash, record_hash })
    }
}

fn parse_hash(s: &str) -> Result<[u8; 32], String> {
    let bytes = hex::decode(s).map_err(|e| format!("hash: {e}"))?;
    bytes.try_into().map_err(|_| "hash: wrong length".to_string())
}

/// Recomputes every record hash and linkage; returns the earliest
/// inconsistent index on failure.
pub fn verify_chain(chain: &[AuditRecord]) -> Result<(), usize> {
    let mut prev = GENESIS_HASH;
    for (i, record) in chain.iter().enumerate() {
        if record.tx_id != i as u64 || record.prev_hash != prev {
            return Err(i);
        }
        let preimage = AuditRecord::preimage(
            record.tx_id,
            &record.role_id,
            record.action,
            &record.payload_hash,
            record.timestamp,
            &record.prev_hash,
        );
        if sha256(preimage.as_bytes()) != record.record_hash {
            return Err(i);
        }
        prev = record.record_hash;
    }
    Ok(())
}

/// Local content-addressed blob store: CID = lowercase hex SHA-256 of the
/// payload. Stands in for a networked system; fetch re-hashes to detect
/// corruption.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ContentStore {
    objects: BTreeMap<String, Vec<u8>>,
}

impl ContentStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores a payload and returns its CID. Idempotent.
    pub fn store(&mut self, payload: &[u8]) -> String {
        let cid = hex::encode(sha256(payload));
        self.objects.entry(cid.clone()).or_insert_with(|| payload.to_vec());
        cid
    }

    /// Returns the exact stored bytes, verifying integrity on read.
    pub fn fetch(&self, cid: &str) -> Result<&[u8], StoreError> {
        let bytes = self
            .objects
            .get(cid)
            .ok_or_else(|| StoreError::NotFound(cid.to_string()))?;
        let actual = hex::encode(sha256(bytes));
        if actual != cid {
            return Err(StoreError::Corrupt { cid: cid.to_string(), actual });
        }
        Ok(bytes)
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Vec<u8>)> {
        self.objects.iter()
    }

    /// Inserts bytes under a caller-supplied key without verification;
    /// corruption surfaces at fetch time. Used by directory import.
    pub fn insert_raw(&mut self, cid: String, bytes: Vec<u8>) {
        self.objects.insert(cid, bytes);
    }

    /// Writes one file per object, named by CID.
    pub fn export_dir(&self, dir: &Path) -> io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for (cid, bytes) in &self.objects {
            std::fs::write(dir.join(cid), bytes)?;
        }
        Ok(())
    }

    /// Loads a directory of CID-named files.
    pub fn load_dir(dir: &Path) -> io::Result<Self> {
        let mut store = ContentStore::new();
        let mut entries: Vec<_> =
            std::fs::read_dir(dir)?.collect::<io::Result<Vec<_>>>()?;
        entries.sort_by_key(|e| e.file_name());
        for entry in entries {
            if entry.file_type()?.is_file() {
                let cid = entry.file_name().to_string_lossy().into_owned();
                store.insert_raw(cid, std::fs::read(entry.path())?);
            }
        }
        Ok(store)
    }
}

/// A registered participant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleRecord {
    pub role_id: String,
    pub class: AgentClass,
    /// 32-byte HMAC verification key.
    pub auth_key: Vec<u8>,
}

/// Kinds of disruption an agent can report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisruptionEventType {
    SupplyHalt,
    TransitDelay,
}

impl DisruptionEventType {
    pub fn as_str(&self) -> &'static str {
        match self {
            DisruptionEventType::SupplyHalt => "supply_halt",
            DisruptionEventType::TransitDelay => "transit_delay",
        }
    }
}

/// A disruption report submitted for enforcement.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DisruptionReport {
    pub agent_id: String,
    pub event_type: DisruptionEventType,
    pub timestamp: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TxReceipt {
    pub tx_id: u64,
}

/// The enforcement state machine. All mutating operations are serialized;
/// the total order defines tx ids.
#[derive(Debug, Clone)]
pub struct Ledger {
    num_drugs: u32,
    horizon_days: u64,
    epsilon: f64,
    roles: BTreeMap<String, RoleRecord>,
    committed: BTreeMap<String, Vec<u64>>,
    reserve: Vec<u64>,
    chain: Vec<AuditRecord>,
    store: ContentStore,
    /// Day currently being processed; advanced by snapshot submission.
    current_day: u64,
}

impl Ledger {
    pub fn new(num_drugs: u32, horizon_days: u64, epsilon: f64, reserve: Vec<u64>) -> Self {
        assert_eq!(reserve.len(), num_drugs as usize);
        Ledger {
            num_drugs,
            horizon_days,
            epsilon,
            roles: BTreeMap::new(),
            committed: BTreeMap::new(),
            reserve,
            chain: Vec::new(),
            store: ContentStore::new(),
        current_day: 0,
        }
    }

    pub fn num_drugs(&self) -> u32 {
        self.num_drugs
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn horizon_days(&self) -> u64 {
        self.horizon_days
    }

    pub fn chain(&self) -> &[AuditRecord] {
        &self.chain
    }

    pub fn store(&self) -> &ContentStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ContentStore {
        &mut self.store
    }

    pub fn reserve(&self) -> &[u64] {
        &self.reserve
    }

    pub fn current_day(&self) -> u64 {
        self.current_day
    }

    pub(crate) fn set_current_day(&mut self, day: u64) {
        self.current_day = day;
    }

    /// Head of the audit chain; all zeros while empty.
    pub fn head_hash(&self) -> [u8; 32] {
        self.chain.last().map(|r| r.record_hash).unwrap_or(GENESIS_HASH)
    }

    pub fn role(&self, role_id: &str) -> Option<&RoleRecord> {
        self.roles.get(role_id)
    }

    pub fn committed_balance(&self, role_id: &str) -> Option<&[u64]> {
        self.committed.get(role_id).map(Vec::as_slice)
    }

    /// Registers a role and appends a `role_register` record.
    pub fn register_role(&mut self, record: RoleRecord) -> Result<TxReceipt, LedgerError> {
        if record.role_id.is_empty()
            || !record
                .role_id
                .chars()
                .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_' || c == '-')
        {
            return Err(LedgerError::BadRoleId(record.role_id));
        }
        if record.auth_key.len() != 32 {
            return Err(LedgerError::MalformedKey);
        }
        if self.roles.contains_key(&record.role_id) {
            return Err(LedgerError::DuplicateRole(record.role_id));
        }
        let payload = serde_json::to_vec(&record).expect("role record serializes");
        let role_id = record.role_id.clone();
        self.roles.insert(role_id.clone(), record);
        self.committed.insert(role_id.clone(), vec![0; self.num_drugs as usize]);
        let record = self.append_unchecked(
            AuditAction::RoleRegister,
            &role_id,
            sha256(&payload),
            self.current_day,
        );
        Ok(TxReceipt { tx_id: record.tx_id })
    }

    /// Verifies an HMAC tag against a registered role's key.
    pub fn verify_mac(&self, role_id: &str, payload: &[u8], mac: &[u8]) -> bool {
        match self.roles.get(role_id) {
            Some(role) => compute_mac(&role.auth_key, payload) == mac,
            None => false,
        }
    }

    /// Applies a batch of per-agent inventory deltas atomically: if any delta
    /// would drive a balance negative or names an unknown agent, the whole
    /// batch is rejected and the ledger is untouched.
    pub fn commit_inventory(
        &mut self,
        submitter: &str,
        day: u64,
        deltas: &[(String, Vec<i64>)],
    ) -> Result<TxReceipt, LedgerError> {
        if !self.roles.contains_key(submitter) {
            return Err(LedgerError::UnknownRole(submitter.to_string()));
        }
        // dry-run the whole batch before applying anything
        let mut staged: BTreeMap<&str, Vec<u64>> = BTreeMap::new();
        for (agent, per_drug) in deltas {
            if per_drug.len() != self.num_drugs as usize {
                return Err(LedgerError::BadBatchShape { expected: self.num_drugs });
            }
            let balance = self
                .committed
                .get(agent.as_str())
                .ok_or_else(|| LedgerError::UnknownRole(agent.clone()))?;
            let entry = staged.entry(agent).or_insert_with(|| balance.clone());
            for (drug, &delta) in per_drug.iter().enumerate() {
                let current = entry[drug] as i128 + delta as i128;
                if current < 0 {
                    return Err(LedgerError::NegativeBalance {
                        agent: agent.clone(),
                        drug: drug as u32,
                    });
                }
                entry[drug] = current as u64;
            }
        }
        for (agent, balance) in staged {
            self.committed.insert(agent.to_string(), balance);
        }
        let payload = serde_json::to_vec(&deltas).expect("delta batch serializes");
        let record = self.append_unchecked(
            AuditAction::InventoryCommit,
            submitter,
            sha256(&payload),
            day,
        );
        Ok(TxReceipt { tx_id: record.tx_id })
    }

    /// Logs a disruption report and deploys `min(reserve, shortfall)` per
    /// drug from the emergency reserve. Returns the deployed quantities.
    pub fn report_disruption(
        &mut self,
        report: &DisruptionReport,
        shortfall: &[u64],
    ) -> Result<Vec<u64>, LedgerError> {
        if !self.roles.contains_key(&report.agent_id) {
            return Err(LedgerError::UnknownRole(report.agent_id.clone()));
        }
        if report.timestamp >= self.horizon_days {
            return Err(LedgerError::OutOfHorizon(report.timestamp, self.horizon_days));
        }
        if report.timestamp != self.current_day {
            return Err(LedgerError::StaleReport {
                got: report.timestamp,
                current: self.current_day,
            });
        }
        if shortfall.len() != self.num_drugs as usize {
            return Err(LedgerError::BadBatchShape { expected: self.num_drugs });
        }
        let payload = serde_json::to_vec(report).expect("report serializes");
        self.append_unchecked(
            AuditAction::DisruptionCommit,
            &report.agent_id.clone(),
            sha256(&payload),
            report.timestamp,
        );
        let deployed: Vec<u64> = shortfall
            .iter()
            .enumerate()
            .map(|(d, &s)| {
                let give = s.min(self.reserve[d]);
                self.reserve[d] -= give;
                give
            })
            .collect();
        if deployed.iter().any(|&d| d > 0) {
            let payload =
                serde_json::to_vec(&(&report.agent_id, &deployed)).expect("deployment serializes");
            self.append_unchecked(
                AuditAction::ReserveDeploy,
                &report.agent_id.clone(),
                sha256(&payload),
                report.timestamp,
            );
        }
        Ok(deployed)
    }

    /// Appends a record for a registered role.
    pub fn append_audit(
        &mut self,
        action: AuditAction,
        role_id: &str,
        payload_hash: [u8; 32],
        day: u64,
    ) -> Result<&AuditRecord, LedgerError> {
        if !self.roles.contains_key(role_id) {
            return Err(LedgerError::UnknownRole(role_id.to_string()));
        }
        Ok(self.append_unchecked(action, role_id, payload_hash, day))
    }

    fn append_unchecked(
        &mut self,
        action: AuditAction,
        role_id: &str,
        payload_hash: [u8; 32],
        timestamp: u64,
    ) -> &AuditRecord {
        let tx_id = self.chain.len() as u64;
        let prev_hash = self.head_hash();
        let preimage =
            AuditRecord::preimage(tx_id, role_id, action, &payload_hash, timestamp, &prev_hash);
        let record = AuditRecord {
            tx_id,
            role_id: role_id.to_string(),
            action,
            payload_hash,
            timestamp,
            prev_hash,
            record_hash: sha256(preimage.as_bytes()),
        };
        self.chain.push(record);
        self.chain.last().expect("just pushed")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::AgentClass;

    fn role(id: &str, class: AgentClass) -> RoleRecord {
        RoleRecord { role_id: id.to_string(), class, auth_key: vec![7u8; 32] }
    }

    fn ledger() -> Ledger {
        Ledger::new(2, 60, 0.05, vec![100, 100])
    }

    #[test]
    fn register_role_examples() {
        let mut l = ledger();
        let receipt = l.register_role(role("m0", AgentClass::Manufacturer)).unwrap();
        assert_eq!(receipt.tx_id, 0, "first tx on an empty ledger");
        let before = l.chain().len();
        let err = l.register_role(role("m0", AgentClass::Manufacturer)).unwrap_err();
        assert_eq!(err, LedgerError::DuplicateRole("m0".to_string()));
        assert_eq!(l.chain().len(), before, "rejected registration leaves chain unchanged");

        let mut l = ledger();
        for id in ["m0", "d0", "d1", "d2", "h0", "h1", "h2"] {
            let class = match id.chars().next().unwrap() {
                'm' => AgentClass::Manufacturer,
                'd' => AgentClass::Distributor,
                _ => AgentClass::Hospital,
            };
            l.register_role(role(id, class)).unwrap();
        }
        assert_eq!(l.chain().len(), 7);
    }

    #[test]
    fn register_role_rejects_malformed() {
        let mut l = ledger();
        assert_eq!(
            l.register_role(RoleRecord {
                role_id: "M0,".to_string(),
                class: AgentClass::Manufacturer,
                auth_key: vec![0; 32],
            })
            .unwrap_err(),
            LedgerError::BadRoleId("M0,".to_string())
        );
        assert_eq!(
            l.register_role(RoleRecord {
                role_id: "m0".to_string(),
                class: AgentClass::Manufacturer,
                auth_key: vec![0; 16],
            })
            .unwrap_err(),
            LedgerError::MalformedKey
        );
    }

    #[test]
    fn validate_allocation_examples() {
        // plainly valid
        assert_eq!(
            validate_allocation(
                &[400, 300, 300],
                &[500, 400, 400],
                &[0.4, 0.3, 0.3],
                1000,
                0.05,
                false
            ),
            Ok(())
        );
        // budget overrun
        assert_eq!(
            validate_allocation(
                &[500, 300, 300],
                &[500, 400, 400],
                &[0.4, 0.3, 0.3],
                1000,
                0.05,
                false
            ),
            Err(AllocationReject::Budget)
        );
        // floor(0.05 * 1000) = 50 > 40 for a demanding region
        assert_eq!(
            validate_allocation(
                &[960, 40, 0],
                &[2000, 2000, 2000],
                &[0.9, 0.05, 0.05],
                1000,
                0.05,
                false
            ),
            Err(AllocationReject::MinSupport { region: 1 })
        );
    }

    #[test]
    fn validate_allocation_demand_cap_exemptions() {
        // region 1 demanded only 40 and got it all: floor does not apply
        assert_eq!(
            validate_allocation(&[910, 40, 50], &[2000, 40, 2000], &[0.6, 0.2, 0.2], 1000, 0.05, false),
            Ok(())
        );
        // severity consistency: higher-weight region 0 capped at its demand,
        // lower-weight regions may exceed it
        assert_eq!(
            validate_allocation(&[10, 500, 490], &[10, 2000, 2000], &[0.8, 0.15, 0.05], 1000, 0.05, false),
            Ok(())
        );
        // but an uncapped higher-weight region must not be dominated
        assert_eq!(
            validate_allocation(&[100, 500, 50], &[2000, 2000, 2000], &[0.8, 0.1, 0.1], 1000, 0.05, false),
            Err(AllocationReject::SeverityConsistency { high: 0, low: 1 })
        );
    }

    #[test]
    fn validate_allocation_halted_day_accepts_zero() {
        assert_eq!(
            validate_allocation(&[0, 0, 0], &[500, 400, 400], &[0.4, 0.3, 0.3], 5000, 0.05, true),
            Ok(())
        );
        // budget still applies when halted
        assert_eq!(
            validate_allocation(&[1, 0, 0], &[500, 400, 400], &[0.4, 0.3, 0.3], 0, 0.05, true),
            Err(AllocationReject::Budget)
        );
    }

    #[test]
    fn commit_inventory_zero_delta_and_atomic_reject() {
        let mut l = ledger();
        l.register_role(role("m0", AgentClass::Manufacturer)).unwrap();
        l.register_role(role("h0", AgentClass::Hospital)).unwrap();
        l.commit_inventory("m0", 0, &[("h0".to_string(), vec![5, 0])]).unwrap();
        assert_eq!(l.committed_balance("h0").unwrap(), &[5, 0]);
        // zero-delta batch accepted, balances unchanged
        l.commit_inventory("m0", 0, &[("h0".to_string(), vec![0, 0])]).unwrap();
        assert_eq!(l.committed_balance("h0").unwrap(), &[5, 0]);
        // -10 against balance 5 rejects the whole batch atomically
        let before = l.clone();
        let err = l
            .commit_inventory(
                "m0",
                0,
                &[("m0".to_string(), vec![3, 0]), ("h0".to_string(), vec![-10, 0])],
            )
            .unwrap_err();
        assert_eq!(err, LedgerError::NegativeBalance { agent: "h0".to_string(), drug: 0 });
        assert_eq!(l.committed_balance("m0").unwrap(), before.committed_balance("m0").unwrap());
        assert_eq!(l.committed_balance("h0").unwrap(), before.committed_balance("h0").unwrap());
        assert_eq!(l.chain().len(), before.chain().len());
    }

    #[test]
    fn disruption_reports_deploy_reserve_sequentially() {
        let mut l = ledger();
        l.register_role(role("d0", AgentClass::Distributor)).unwrap();
        l.register_role(role("d1", AgentClass::Distributor)).unwrap();

        let report = |agent: &str| DisruptionReport {
            agent_id: agent.to_string(),
            event_type: DisruptionEventType::TransitDelay,
            timestamp: 0,
        };
        // zero shortfall: logged, nothing deployed
        let chain_before = l.chain().len();
        assert_eq!(l.report_disruption(&report("d0"), &[0, 0]).unwrap(), vec![0, 0]);
        assert_eq!(l.chain().len(), chain_before + 1, "report logged without deployment record");
        // min clamp then sequential depletion: (80, 80) against reserve 100
        assert_eq!(l.report_disruption(&report("d0"), &[80, 250]).unwrap(), vec![80, 100]);
        assert_eq!(l.report_disruption(&report("d1"), &[80, 10]).unwrap(), vec![20, 0]);
        assert_eq!(l.reserve(), &[0, 0]);
    }

    #[test]
    fn disruption_report_preconditions() {
        let mut l = ledger();
        l.register_role(role("d0", AgentClass::Distributor)).unwrap();
        let mut report = DisruptionReport {
            agent_id: "ghost".to_string(),
            event_type: DisruptionEventType::SupplyHalt,
            timestamp: 0,
        };
        assert!(matches!(
            l.report_disruption(&report, &[0, 0]),
            Err(LedgerError::UnknownRole(_))
        ));
        report.agent_id = "d0".to_string();
        report.timestamp = 3;
        assert!(matches!(
            l.report_disruption(&report, &[0, 0]),
            Err(LedgerError::StaleReport { .. })
        ));
        report.timestamp = 999;
        assert!(matches!(
            l.report_disruption(&report, &[0, 0]),
            Err(LedgerError::OutOfHorizon(..))
        ));
    }

    #[test]
    fn audit_chain_linkage_laws() {
        let mut l = ledger();
        l.register_role(role("m0", AgentClass::Manufacturer)).unwrap();
        assert_eq!(l.chain()[0].prev_hash, GENESIS_HASH, "genesis convention");
        l.append_audit(AuditAction::SnapshotCommit, "m0", [1; 32], 0).unwrap();
        let chain = l.chain();
        assert_eq!(chain[1].prev_hash, chain[0].record_hash);
        assert_eq!(chain[1].tx_id, 1);
        assert!(matches!(
            l.append_audit(AuditAction::SnapshotCommit, "nobody", [0; 32], 0),
            Err(LedgerError::UnknownRole(_))
        ));
    }

    #[test]
    fn verify_chain_detects_tampering_at_exact_index() {
        let mut l = ledger();
        l.register_role(role("m0", AgentClass::Manufacturer)).unwrap();
        for day in 0..9u64 {
            l.append_audit(AuditAction::SnapshotCommit, "m0", [day as u8; 32], day).unwrap();
        }
        let chain: Vec<AuditRecord> = l.chain().to_vec();
        assert_eq!(verify_chain(&chain), Ok(()));

        let mut tampered = chain.clone();
        tampered[5].payload_hash[0] ^= 0x01;
        assert_eq!(verify_chain(&tampered), Err(5));

        // truncation alone verifies; only the published head exposes it
        let truncated = &chain[..chain.len() - 2];
        assert_eq!(verify_chain(truncated), Ok(()));
        assert_ne!(truncated.last().unwrap().record_hash, l.head_hash());
    }

    #[test]
    fn chain_lines_round_trip() {
        let mut l = ledger();
        l.register_role(role("m0", AgentClass::Manufacturer)).unwrap();
        l.append_audit(AuditAction::AllocationCommit, "m0", [9; 32], 4).unwrap();
        for record in l.chain() {
            let line = record.to_line();
            let back = AuditRecord::parse_line(&line).unwrap();
            assert_eq!(&back, record);
        }
        assert!(AuditRecord::parse_line("not,a,chain,line").is_err());
    }

    #[test]
    fn content_store_examples() {
        let mut store = ContentStore::new();
        // SHA-256 of the empty string, the standard test vector
        let cid = store.store(b"");
        assert_eq!(cid, "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
        // idempotent
        let again = store.store(b"");
        assert_eq!(cid, again);
        assert_eq!(store.len(), 1);
        // round trip
        let cid2 = store.store(b"payload");
        assert_eq!(store.fetch(&cid2).unwrap(), b"payload");
        assert!(matches!(store.fetch("00ff"), Err(StoreError::NotFound(_))));
        // corruption is caught on read
        store.insert_raw(cid2.clone(), b"tampered".to_vec());
        assert!(matches!(store.fetch(&cid2), Err(StoreError::Corrupt { .. })));
    }

    #[test]
    fn mac_verification() {
        let mut l = ledger();
        let key = vec![42u8; 32];
        l.register_role(RoleRecord {
            role_id: "m0".to_string(),
            class: AgentClass::Manufacturer,
            auth_key: key.clone(),
        })
        .unwrap();
        let mac = compute_mac(&key, b"payload");
        assert!(l.verify_mac("m0", b"payload", &mac));
        assert!(!l.verify_mac("m0", b"other", &mac));
        assert!(!l.verify_mac("ghost", b"payload", &mac));
        let mut bad = mac;
        bad[0] ^= 1;
        assert!(!l.verify_mac("m0", b"payload", &bad));
    }
}
