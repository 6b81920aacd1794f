//! External decision policies over a line-delimited wire protocol.
//!
//! Any built-in agent policy can be replaced by an external process: the
//! engine writes one JSON request per decision to the process's stdin and
//! reads one JSON response line from its stdout. The request carries the full
//! observation, the incoming messages, and the decision the built-in tools
//! would make, so a trivial echo policy reproduces the built-in run exactly.
//!
//! The protocol is defensive by contract: on timeout, malformed output, a
//! schema mismatch, or a dead process, the engine falls back to the built-in
//! decision and records the fallback. Whatever an external policy answers,
//! [`sanitize_decision`] clamps it into the feasible region before it touches
//! world state, and every clamp is recorded.
//!
//! Wire schema v1 (one line per message, `\n`-terminated UTF-8 JSON):
//!
//! ```text
//! request  = {"protocol_version":1,"day":N,"agent_id":"h0","role":"hospital",
//!             "deadline_ms":N,"observation":{...},"builtin":DECISION,
//!             "incoming_orders":[...]?,"regional_demand":[...]?,"severity":[...]?}
//! response = {"agent_id":"h0","day":N,"decision":DECISION}
//! DECISION = {"kind":"hospital_orders","quantities":[i,...]}
//!          | {"kind":"distributor_sub_allocations","per_hospital":[[i,...],...]}
//!          | {"kind":"manufacturer_allocations","per_region":[[i,...],...]}
//! ```

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::agents::{largest_remainder, Observation};
use crate::types::{AgentClass, AgentId};

/// Current wire protocol version.
pub const PROTOCOL_VERSION: u32 = 1;

/// Default per-decision deadline, sized for LLM-scale latency.
pub const DEFAULT_TIMEOUT_MS: u64 = 5000;

/// Hard ceiling on any single wire quantity; keeps downstream integer
/// arithmetic far from u64 overflow even for hostile policies.
pub const MAX_UNITS: u64 = 1_000_000_000_000;

/// A decision in internal (validated, non-negative) form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DecisionPayload {
    HospitalOrders { quantities: Vec<u64> },
    DistributorSubAllocations { per_hospital: Vec<Vec<u64>> },
    ManufacturerAllocations { per_region: Vec<Vec<u64>> },
}

/// A decision as read off the wire: signed so that hostile negative values
/// can be parsed, then clamped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WireDecision {
    HospitalOrders { quantities: Vec<i64> },
    DistributorSubAllocations { per_hospital: Vec<Vec<i64>> },
    ManufacturerAllocations { per_region: Vec<Vec<i64>> },
}

impl From<&DecisionPayload> for WireDecision {
    fn from(d: &DecisionPayload) -> Self {
        let cast = |v: &[u64]| v.iter().map(|&x| x.min(i64::MAX as u64) as i64).collect();
        match d {
            DecisionPayload::HospitalOrders { quantities } => {
                WireDecision::HospitalOrders { quantities: cast(quantities) }
            }
            DecisionPayload::DistributorSubAllocations { per_hospital } => {
                WireDecision::DistributorSubAllocations {
                    per_hospital: per_hospital.iter().map(|r| cast(r)).collect(),
                }
            }
            DecisionPayload::ManufacturerAllocations { per_region } => {
                WireDecision::ManufacturerAllocations {
                    per_region: per_region.iter().map(|r| cast(r)).collect(),
                }
            }
        }
    }
}

/// One hospital order as presented to a distributor policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncomingOrder {
    pub hospital: u32,
    pub quantities: Vec<u64>,
    pub criticality: Vec<f64>,
}

/// One region's aggregate demand as presented to a manufacturer policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionDemand {
    pub region: u32,
    pub quantities: Vec<u64>,
    pub disrupted: bool,
}

/// One decision request. Serialized on a single line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRequest {
    pub protocol_version: u32,
    pub day: u64,
    pub agent_id: AgentId,
    pub role: AgentClass,
    pub deadline_ms: u64,
    pub observation: Observation,
    /// Decision the built-in tools would make; also the fallback.
    pub builtin: DecisionPayload,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub incoming_orders: Option<Vec<IncomingOrder>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub regional_demand: Option<Vec<RegionDemand>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub severity: Option<Vec<f64>>,
}

/// One decision response; must echo (agent_id, day).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyResponse {
    pub agent_id: AgentId,
    pub day: u64,
    pub decision: WireDecision,
}

/// Feasibility envelope for sanitizing one decision.
#[derive(Debug, Clone)]
pub enum DecisionConstraints {
    Hospital { num_drugs: usize },
    Distributor {
        /// On-hand stock per drug; sub-allocations may not exceed it in sum.
        inventory: Vec<u64>,
        /// Requested quantities per hospital per drug; hard caps.
        orders: Vec<Vec<u64>>,
    },
    Manufacturer {
        /// Allocatable stock per drug (zero while disrupted).
        available: Vec<u64>,
        num_regions: usize,
    },
}

/// The decision's shape does not fit the role; the caller must fall back.
#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("schema violation: {0}")]
pub struct SchemaViolation(pub String);

/// One recorded clamp applied during sanitization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClampEvent {
    pub reason: String,
}

fn clamp_scalar(x: i64, what: &str, clamps: &mut Vec<ClampEvent>) -> u64 {
    if x < 0 {
        clamps.push(ClampEvent { reason: format!("{what}: negative {x} clamped to 0") });
        0
    } else if x as u64 > MAX_UNITS {
        clamps.push(ClampEvent {
            reason: format!("{what}: {x} exceeds unit ceiling, clamped to {MAX_UNITS}"),
        });
        MAX_UNITS
    } else {
        x as u64
    }
}

/// Scales `values` down to `limit` proportionally (largest-remainder) when
/// their sum exceeds it. Scaling never raises any entry.
fn scale_to_limit(
    values: &mut [u64],
    limit: u64,
    what: &str,
    clamps: &mut Vec<ClampEvent>,
) {
    let sum: u64 = values.iter().sum();
    if sum <= limit {
        return;
    }
    let weights: Vec<f64> = values.iter().map(|&v| v as f64).collect();
    let scaled = largest_remainder(&weights, limit);
    values.copy_from_slice(&scaled);
    clamps.push(ClampEvent {
        reason: format!("{what}: total {sum} scaled down to {limit}"),
    });
}

/// Clamps a wire decision into the feasible region for its role.
///
/// Shape mismatches (wrong variant, wrong lengths) are schema violations and
/// make the caller fall back to the built-in decision; value problems
/// (negatives, over-stock, over-order) are clamped and recorded, never
/// silent.
pub fn sanitize_decision(
    decision: &WireDecision,
    constraints: &DecisionConstraints,
) -> Result<(DecisionPayload, Vec<ClampEvent>), SchemaViolation> {
    let mut clamps = Vec::new();
    match (decision, constraints) {
        (
            WireDecision::HospitalOrders { quantities },
            DecisionConstraints::Hospital { num_drugs },
        ) => {
            if quantities.len() != *num_drugs {
                return Err(SchemaViolation(format!(
                    "expected {num_drugs} per-drug order quantities, got {}",
                    quantities.len()
                )));
            }
            let orders: Vec<u64> = quantities
                .iter()
                .enumerate()
                .map(|(d, &q)| clamp_scalar(q, &format!("order drug {d}"), &mut clamps))
                .collect();
            Ok((DecisionPayload::HospitalOrders { quantities: orders }, clamps))
        }
        (
            WireDecision::DistributorSubAllocations { per_hospital },
            DecisionConstraints::Distributor { inventory, orders },
        ) => {
            if per_hospital.len() != orders.len()
                || per_hospital.iter().any(|row| row.len() != inventory.len())
            {
                return Err(SchemaViolation(format!(
                    "expected {} x {} sub-allocation matrix",
                    orders.len(),
                    inventory.len()
                )));
            }
            let mut alloc: Vec<Vec<u64>> = per_hospital
                .iter()
                .enumerate()
                .map(|(k, row)| {
                    row.iter()
                        .enumerate()
                        .map(|(d, &q)| {
                            clamp_scalar(q, &format!("sub-allocation h{k} drug {d}"), &mut clamps)
                        })
                        .collect()
                })
                .collect();
            // never over-ship an order
            for (k, row) in alloc.iter_mut().enumerate() {
                for (d, q) in row.iter_mut().enumerate() {
                    if *q > orders[k][d] {
                        clamps.push(ClampEvent {
                            reason: format!(
                                "sub-allocation h{k} drug {d}: {q} capped at order {}",
                                orders[k][d]
                            ),
                        });
                        *q = orders[k][d];
                    }
                }
            }
            // never ship more than on-hand stock
            for d in 0..inventory.len() {
                let mut column: Vec<u64> = alloc.iter().map(|row| row[d]).collect();
                scale_to_limit(
                    &mut column,
                    inventory[d],
                    &format!("sub-allocations drug {d}"),
                    &mut clamps,
                );
                for (k, q) in column.into_iter().enumerate() {
                    alloc[k][d] = q;
                }
            }
            Ok((DecisionPayload::DistributorSubAllocations { per_hospital: alloc }, clamps))
        }
        (
            WireDecision::ManufacturerAllocations { per_region },
            DecisionConstraints::Manufacturer { available, num_regions },
        ) => {
            if per_region.len() != *num_regions
                || per_region.iter().any(|row| row.len() != available.len())
            {
                return Err(SchemaViolation(format!(
                    "expected {num_regions} x {} allocation matrix",
                    available.len()
                )));
            }
            let mut alloc: Vec<Vec<u64>> = per_region
                .iter()
                .enumerate()
                .map(|(r, row)| {
                    row.iter()
                        .enumerate()
                        .map(|(d, &q)| {
                            clamp_scalar(q, &format!("allocation r{r} drug {d}"), &mut clamps)
                        })
                        .collect()
                })
                .collect();
            for d in 0..available.len() {
                let mut column: Vec<u64> = alloc.iter().map(|row| row[d]).collect();
                scale_to_limit(
                    &mut column,
                    available[d],
                    &format!("allocations drug {d}"),
                    &mut clamps,
                );
                for (r, q) in column.into_iter().enumerate() {
                    alloc[r][d] = q;
                }
            }
            Ok((DecisionPayload::ManufacturerAllocations { per_region: alloc }, clamps))
        }
        _ => Err(SchemaViolation("decision kind does not match role".to_string())),
    }
}

/// What a policy answered for one request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyAnswer {
    pub decision: WireDecision,
    /// True when the built-in decision was substituted (timeout, parse
    /// failure, dead process).
    pub fell_back: bool,
}

/// A source of decisions for the coordination engine.
pub trait DecisionPolicy {
    fn decide(&mut self, request: &PolicyRequest) -> PolicyAnswer;
}

/// The built-in deterministic policy: always answers with the request's
/// `builtin` decision.
#[derive(Debug, Default)]
pub struct BuiltinPolicy;

impl DecisionPolicy for BuiltinPolicy {
    fn decide(&mut self, request: &PolicyRequest) -> PolicyAnswer {
        PolicyAnswer { decision: (&request.builtin).into(), fell_back: false }
    }
}

/// Drives an external policy process over the line protocol.
///
/// The child's stdout is drained by a reader thread so that slow or silent
/// processes can be abandoned at the deadline without blocking the run.
pub struct ExternalPolicy {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    timeout: Duration,
    dead: bool,
}

impl ExternalPolicy {
    /// Spawns `command` (split on whitespace; no shell) with piped stdio.
    pub fn spawn(command: &str, timeout_ms: u64) -> std::io::Result<Self> {
        let mut parts = command.split_whitespace();
        let program = parts.next().ok_or_else(|| {
            std::io::Error::new(std::io::ErrorKind::InvalidInput, "empty policy command")
        })?;
        let mut child = Command::new(program)
            .args(parts)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("stdout piped");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let reader = BufReader::new(stdout);
            for line in reader.lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(ExternalPolicy {
            child,
            stdin,
            lines: rx,
            timeout: Duration::from_millis(timeout_ms),
            dead: false,
        })
    }

    /// One request/response exchange. `None` means the caller must fall back.
    fn exchange(&mut self, request: &PolicyRequest) -> Option<WireDecision> {
        if self.dead {
            return None;
        }
        let line = serde_json::to_string(request).expect("request serializes");
        let stdin = self.stdin.as_mut()?;
        if stdin.write_all(line.as_bytes()).is_err()
            || stdin.write_all(b"\n").is_err()
            || stdin.flush().is_err()
        {
            self.dead = true;
            return None;
        }
        let deadline = Instant::now() + self.timeout;
        loop {
            let remaining = deadline.saturating_duration_since(Instant::now());
            if remaining.is_zero() {
                return None;
            }
            match self.lines.recv_timeout(remaining) {
                Ok(Ok(line)) => match serde_json::from_str::<PolicyResponse>(&line) {
                    Ok(response) => {
                        if response.agent_id == request.agent_id && response.day == request.day {
                            return Some(response.decision);
                        }
                        // stale response from an earlier timed-out request; skip
                    }
                    Err(_) => return None,
                },
                Ok(Err(_)) => {
                    self.dead = true;
                    return None;
                }
                Err(RecvTimeoutError::Timeout) => return None,
                Err(RecvTimeoutError::Disconnected) => {
                    self.dead = true;
                    return None;
                }
            }
        }
    }
}

impl DecisionPolicy for ExternalPolicy {
    fn decide(&mut self, request: &PolicyRequest) -> PolicyAnswer {
        match self.exchange(request) {
            Some(decision) => PolicyAnswer { decision, fell_back: false },
            None => PolicyAnswer { decision: (&request.builtin).into(), fell_back: true },
        }
    }
}

impl Drop for ExternalPolicy {
    fn drop(&mut self) {
        self.stdin.take();
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hospital_constraints() -> DecisionConstraints {
        DecisionConstraints::Hospital { num_drugs: 2 }
    }

    #[test]
    fn in_bounds_decision_passes_unchanged() {
        let wire = WireDecision::HospitalOrders { quantities: vec![5, 0] };
        let (decision, clamps) = sanitize_decision(&wire, &hospital_constraints()).unwrap();
        assert_eq!(decision, DecisionPayload::HospitalOrders { quantities: vec![5, 0] });
        assert!(clamps.is_empty());
    }

    #[test]
    fn negative_order_clamps_to_zero_with_record() {
        let wire = WireDecision::HospitalOrders { quantities: vec![-5, 3] };
        let (decision, clamps) = sanitize_decision(&wire, &hospital_constraints()).unwrap();
        assert_eq!(decision, DecisionPayload::HospitalOrders { quantities: vec![0, 3] });
        assert_eq!(clamps.len(), 1);
        assert!(clamps[0].reason.contains("negative"));
    }

    #[test]
    fn oversized_order_clamps_to_unit_ceiling() {
        let wire = WireDecision::HospitalOrders { quantities: vec![i64::MAX, 0] };
        let (decision, clamps) = sanitize_decision(&wire, &hospital_constraints()).unwrap();
        assert_eq!(
            decision,
            DecisionPayload::HospitalOrders { quantities: vec![MAX_UNITS, 0] }
        );
        assert_eq!(clamps.len(), 1);
    }

    #[test]
    fn wrong_shape_is_schema_violation() {
        let wire = WireDecision::HospitalOrders { quantities: vec![1] };
        assert!(sanitize_decision(&wire, &hospital_constraints()).is_err());
        let wire = WireDecision::ManufacturerAllocations { per_region: vec![vec![1, 1]] };
        assert!(sanitize_decision(&wire, &hospital_constraints()).is_err());
    }

    #[test]
    fn suballocation_over_inventory_scales_proportionally() {
        // inventory 100 vs requested shipment 120 -> scaled 100, caps kept
        let constraints = DecisionConstraints::Distributor {
            inventory: vec![100],
            orders: vec![vec![90], vec![90]],
        };
        let wire = WireDecision::DistributorSubAllocations {
            per_hospital: vec![vec![80], vec![40]],
        };
        let (decision, clamps) = sanitize_decision(&wire, &constraints).unwrap();
        let DecisionPayload::DistributorSubAllocations { per_hospital } = decision else {
            panic!("wrong variant")
        };
        let shipped: u64 = per_hospital.iter().map(|r| r[0]).sum();
        assert_eq!(shipped, 100, "scaled exactly to stock");
        assert!(per_hospital[0][0] <= 90 && per_hospital[1][0] <= 90);
        assert_eq!(per_hospital, vec![vec![67], vec![33]]);
        assert!(!clamps.is_empty());
    }

    #[test]
    fn suballocation_capped_at_each_order() {
        let constraints = DecisionConstraints::Distributor {
            inventory: vec![1000],
            orders: vec![vec![10], vec![20]],
        };
        let wire = WireDecision::DistributorSubAllocations {
            per_hospital: vec![vec![500], vec![5]],
        };
        let (decision, clamps) = sanitize_decision(&wire, &constraints).unwrap();
        assert_eq!(
            decision,
            DecisionPayload::DistributorSubAllocations { per_hospital: vec![vec![10], vec![5]] }
        );
        assert_eq!(clamps.len(), 1);
    }

    #[test]
    fn manufacturer_allocation_scaled_to_available() {
        let constraints =
            DecisionConstraints::Manufacturer { available: vec![100], num_regions: 2 };
        let wire = WireDecision::ManufacturerAllocations { per_region: vec![vec![300], vec![100]] };
        let (decision, clamps) = sanitize_decision(&wire, &constraints).unwrap();
        let DecisionPayload::ManufacturerAllocations { per_region } = decision else {
            panic!("wrong variant")
        };
        assert_eq!(per_region.iter().map(|r| r[0]).sum::<u64>(), 100);
        assert_eq!(per_region, vec![vec![75], vec![25]]);
        assert!(!clamps.is_empty());
    }

    #[test]
    fn builtin_round_trips_through_wire_form() {
        let builtin = DecisionPayload::ManufacturerAllocations {
            per_region: vec![vec![5, 0], vec![7, 2]],
        };
        let wire: WireDecision = (&builtin).into();
        let constraints =
            DecisionConstraints::Manufacturer { available: vec![100, 100], num_regions: 2 };
        let (decision, clamps) = sanitize_decision(&wire, &constraints).unwrap();
        assert_eq!(decision, builtin);
        assert!(clamps.is_empty());
    }

    #[test]
    fn wire_schema_line_round_trip() {
        let response = PolicyResponse {
            agent_id: crate::types::AgentId::hospital(1),
            day: 4,
            decision: WireDecision::HospitalOrders { quantities: vec![3, -1] },
        };
        let line = serde_json::to_string(&response).unwrap();
        assert!(!line.contains('\n'));
        let back: PolicyResponse = serde_json::from_str(&line).unwrap();
        assert_eq!(back, response);
    }
}
