//! One single-pass coordination round per day over the supply-chain DAG.
//!
//! Phase order within a day:
//!
//! 1. deliver shipments due today
//! 2. hospitals consume patient demand (backlog if short)
//! 3. hospitals order (buffer gap plus backlog)
//! 4. distributors aggregate orders upward
//! 5. the manufacturer produces and allocates across regions
//! 6. distributors sub-allocate to their hospitals
//! 7. new shipments are scheduled with lead times
//!
//! [`run_round`] is a pure function from (world, timeline, policies, streams)
//! to a [`RoundOutcome`]; [`apply_outcome`] replays the outcome onto the
//! world and enforces exact integer goods conservation. Splitting decision
//! from bookkeeping keeps both replayable and lets the conservation check
//! catch engine bugs instead of silently correcting them.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::agents::{
    self, fairness_weights, tool_epidemic_predictor, DistributorState, HospitalOrder,
    HospitalState, ManufacturerState, Observation,
};
use crate::policy::{
    sanitize_decision, ClampEvent, DecisionConstraints, DecisionPayload, DecisionPolicy,
    IncomingOrder, PolicyRequest, RegionDemand, PROTOCOL_VERSION,
};
use crate::rng::StreamFactory;
use crate::scenario::{sample_disruption, ScenarioConfig, Timeline};
use crate::types::{AgentClass, AgentId};

/// Days of noiseless projection included in each observation.
pub const FORECAST_WINDOW_DAYS: u64 = 7;

#[derive(Debug, thiserror::Error)]
pub enum CoordinationError {
    #[error("topology: graph contains a cycle")]
    CyclicGraph,
    #[error("topology: {0}")]
    BadShape(String),
    #[error("round {day}: policy failure for {agent}: {reason}")]
    PolicyFailure { day: u64, agent: AgentId, reason: String },
    #[error("outcome day {outcome} does not match world day {world}")]
    DayMismatch { outcome: u64, world: u64 },
    #[error("delivered shipment not found in transit: {0:?}")]
    UnknownShipment(String),
    #[error("inventory underflow at {agent} drug {drug}")]
    InventoryUnderflow { agent: AgentId, drug: u32 },
    #[error(
        "goods conservation violated on day {day} drug {drug}: produced {produced} - consumed {consumed} != delta {delta}"
    )]
    ConservationViolated { day: u64, drug: u32, produced: u64, consumed: u64, delta: i128 },
}

/// The supply-chain DAG: hospitals feed distributors, distributors feed the
/// manufacturer tier. In the default shape there is one manufacturer, one
/// distributor per region, and one hospital per region; distributor index is
/// identified with region index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub nodes: Vec<AgentId>,
    /// Demand-direction edges: hospital -> distributor, distributor -> manufacturer.
    pub edges: Vec<(AgentId, AgentId)>,
    pub lead_time_days: u64,
    hospital_distributor: Vec<u32>,
    distributor_hospitals: Vec<Vec<u32>>,
    num_distributors: u32,
    num_hospitals: u32,
}

impl Topology {
    /// Default shape from a config: 1 manufacturer, one distributor and one
    /// hospital per region.
    pub fn build(config: &ScenarioConfig) -> Result<Self, CoordinationError> {
        let mut nodes = vec![AgentId::manufacturer(0)];
        let mut edges = Vec::new();
        for r in 0..config.num_regions {
            nodes.push(AgentId::distributor(r));
            nodes.push(AgentId::hospital(r));
            edges.push((AgentId::hospital(r), AgentId::distributor(r)));
            edges.push((AgentId::distributor(r), AgentId::manufacturer(0)));
        }
        Topology::from_edges(nodes, edges, config.lead_time_days)
    }

    /// General constructor; validates acyclicity and the tiered shape.
    pub fn from_edges(
        nodes: Vec<AgentId>,
        edges: Vec<(AgentId, AgentId)>,
        lead_time_days: u64,
    ) -> Result<Self, CoordinationError> {
        // cycle check first (Kahn's algorithm over arbitrary edges)
        let index_of: BTreeMap<AgentId, usize> =
            nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();
        if index_of.len() != nodes.len() {
            return Err(CoordinationError::BadShape("duplicate node".to_string()));
        }
        let mut indegree = vec![0usize; nodes.len()];
        let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
        for (src, dst) in &edges {
            let (si, di) = match (index_of.get(src), index_of.get(dst)) {
                (Some(&s), Some(&d)) => (s, d),
                _ => {
                    return Err(CoordinationError::BadShape(format!(
                        "edge references unknown node: {src} -> {dst}"
                    )))
                }
            };
            adjacency[si].push(di);
            indegree[di] += 1;
        }
        let mut queue: Vec<usize> =
            (0..nodes.len()).filter(|&i| indegree[i] == 0).collect();
        let mut visited = 0usize;
        while let Some(i) = queue.pop() {
            visited += 1;
            for &j in &adjacency[i] {
                indegree[j] -= 1;
                if indegree[j] == 0 {
                    queue.push(j);
                }
            }
        }
        if visited != nodes.len() {
            return Err(CoordinationError::CyclicGraph);
        }

        let num_hospitals =
            nodes.iter().filter(|n| n.class == AgentClass::Hospital).count() as u32;
        let num_distributors =
            nodes.iter().filter(|n| n.class == AgentClass::Distributor).count() as u32;
        let num_manufacturers =
            nodes.iter().filter(|n| n.class == AgentClass::Manufacturer).count() as u32;
        if num_manufacturers != 1 {
            return Err(CoordinationError::BadShape(format!(
                "expected exactly one manufacturer, got {num_manufacturers}"
            )));
        }
        // contiguous indices
        for class in [AgentClass::Hospital, AgentClass::Distributor] {
            let count = if class == AgentClass::Hospital { num_hospitals } else { num_distributors };
            for i in 0..count {
                if !nodes.contains(&AgentId { class, index: i }) {
                    return Err(CoordinationError::BadShape(format!(
                        "missing {} index {i}",
                        class.as_str()
                    )));
                }
            }
        }

        let mut hospital_distributor = vec![None; num_hospitals as usize];
        let mut distributor_manufacturer = vec![None; num_distributors as usize];
        for (src, dst) in &edges {
            match (src.class, dst.class) {
                (AgentClass::Hospital, AgentClass::Distributor) => {
                    let slot = &mut hospital_distributor[src.index as usize];
                    if slot.is_some() {
                        return Err(CoordinationError::BadShape(format!(
                            "{src} has more than one distributor"
                        )));
                    }
                    *slot = Some(dst.index);
                }
                (AgentClass::Distributor, AgentClass::Manufacturer) => {
                    let slot = &mut distributor_manufacturer[src.index as usize];
                    if slot.is_some() {
                        return Err(CoordinationError::BadShape(format!(
                            "{src} has more than one manufacturer"
                        )));
                    }
                    *slot = Some(dst.index);
                }
                _ => {
                    return Err(CoordinationError::BadShape(format!(
                        "edge {src} -> {dst} violates the tier order"
                    )))
                }
            }
        }
        let hospital_distributor: Vec<u32> = hospital_distributor
            .into_iter()
            .enumerate()
            .map(|(k, d)| {
                d.ok_or_else(|| {
                    CoordinationError::BadShape(format!("hospital h{k} has no distributor"))
                })
            })
            .collect::<Result<_, _>>()?;
        for (j, m) in distributor_manufacturer.iter().enumerate() {
            if m.is_none() {
                return Err(CoordinationError::BadShape(format!(
                    "distributor d{j} has no manufacturer"
                )));
            }
        }
        let mut distributor_hospitals = vec![Vec::new(); num_distributors as usize];
        for (k, &d) in hospital_distributor.iter().enumerate() {
            distributor_hospitals[d as usize].push(k as u32);
        }
        Ok(Topology {
            nodes,
            edges,
            lead_time_days,
            hospital_distributor,
            distributor_hospitals,
            num_distributors,
            num_hospitals,
        })
    }

    pub fn num_hospitals(&self) -> u32 {
        self.num_hospitals
    }

    pub fn num_distributors(&self) -> u32 {
        self.num_distributors
    }

    pub fn distributor_of(&self, hospital: u32) -> u32 {
        self.hospital_distributor[hospital as usize]
    }

    pub fn hospitals_of(&self, distributor: u32) -> &[u32] {
        &self.distributor_hospitals[distributor as usize]
    }

    /// Region of a hospital: the index of its distributor.
    pub fn region_of_hospital(&self, hospital: u32) -> u32 {
        self.distributor_of(hospital)
    }
}

/// Order message, hospital -> distributor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderMsg {
    pub hospital: u32,
    /// Requested units per drug.
    pub quantities: Vec<u64>,
    /// Today's noiseless projected demand per drug.
    pub forecast: Vec<u64>,
    /// Criticality score per drug.
    pub criticality: Vec<f64>,
}

/// Aggregate demand message, distributor -> manufacturer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateDemandMsg {
    pub region: u32,
    /// Sum of constituent hospital orders per drug.
    pub totals: Vec<u64>,
    pub disrupted: bool,
}

/// Allocation message, manufacturer -> distributor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationMsg {
    pub region: u32,
    pub quantities: Vec<u64>,
    /// Fairness weight phi for the region.
    pub fairness: f64,
}

/// Fulfillment message, distributor -> hospital.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FulfillmentMsg {
    pub hospital: u32,
    pub quantities: Vec<u64>,
    /// Set when the distributor is disrupted and shipping with extra delay.
    pub delay_flag: bool,
}

/// One scheduled shipment of a single drug.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shipment {
    pub src: AgentId,
    pub dst: AgentId,
    pub drug: u32,
    pub quantity: u64,
    pub ship_day: u64,
    pub arrival_day: u64,
}

/// A disruption that fired for one agent on one day.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisruptionEvent {
    pub agent: AgentId,
    /// "supply_halt" for manufacturer/hospital outages, "transit_delay" for
    /// distributors.
    pub event_type: String,
}

/// Complete record of one coordination round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundOutcome {
    pub day: u64,
    pub orders: Vec<OrderMsg>,
    pub aggregates: Vec<AggregateDemandMsg>,
    pub allocations: Vec<AllocationMsg>,
    pub fulfillments: Vec<FulfillmentMsg>,
    /// Shipments that arrived this day.
    pub delivered: Vec<Shipment>,
    /// Shipments scheduled this day.
    pub new_shipments: Vec<Shipment>,
    /// Units produced per drug (zero while disrupted).
    pub produced: Vec<u64>,
    /// Realized patient demand, indexed [hospital][drug].
    pub patient_demand: Vec<Vec<u64>>,
    /// Patient demand served, indexed [hospital][drug].
    pub consumption: Vec<Vec<u64>>,
    /// Hospital backlog after consumption, indexed [hospital][drug].
    pub backlog_after: Vec<Vec<u64>>,
    /// Order shortfall r - y, indexed [hospital][drug].
    pub unmet_orders: Vec<Vec<u64>>,
    pub disruptions: Vec<DisruptionEvent>,
    /// Fairness weights phi per region.
    pub fairness: Vec<f64>,
    /// Aggregate regional demand the manufacturer saw, indexed [region][drug].
    pub regional_demand: Vec<Vec<u64>>,
    /// Number of decide() invocations per agent (single-pass instrumentation).
    pub decide_calls: BTreeMap<AgentId, u32>,
    /// Agents whose external decision was replaced by the builtin fallback.
    pub fallback_agents: Vec<AgentId>,
    pub policy_clamps: Vec<ClampEvent>,
}

impl RoundOutcome {
    pub fn policy_fallbacks(&self) -> u64 {
        self.fallback_agents.len() as u64
    }
}

/// Mutable physical state of the whole chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub day: u64,
    pub hospitals: Vec<HospitalState>,
    pub distributors: Vec<DistributorState>,
    pub manufacturer: ManufacturerState,
    pub in_transit: Vec<Shipment>,
}

impl WorldState {
    /// Initial inventories are derived from the config: hospitals start at
    /// their buffer target, distributors at twice the sum of their hospitals'
    /// buffers, the manufacturer at zero stock.
    pub fn init(config: &ScenarioConfig, topology: &Topology) -> Self {
        let drugs = config.num_drugs as usize;
        let hospitals = (0..topology.num_hospitals())
            .map(|k| {
                let region = topology.region_of_hospital(k) as usize;
                HospitalState {
                    buffer_target: config.buffer_targets[region].clone(),
                    inventory: config.buffer_targets[region].clone(),
                    pipeline: vec![0; drugs],
                    backlog: vec![0; drugs],
                    criticality_weight: config.drug_criticality.clone(),
                }
            })
            .collect();
        let distributors = (0..topology.num_distributors())
            .map(|j| {
                let mut inventory = vec![0u64; drugs];
                for &k in topology.hospitals_of(j) {
                    let region = topology.region_of_hospital(k) as usize;
                    for d in 0..drugs {
                        inventory[d] += 2 * config.buffer_targets[region][d];
                    }
                }
                DistributorState { inventory, pipeline: vec![0; drugs], disrupted: false }
            })
            .collect();
        WorldState {
            day: 0,
            hospitals,
            distributors,
            manufacturer: ManufacturerState {
                available: vec![0; drugs],
                daily_capacity: config.manufacturer_capacity.clone(),
                disrupted: false,
            },
            in_transit: Vec::new(),
        }
    }

    pub fn num_drugs(&self) -> usize {
        self.manufacturer.available.len()
    }

    /// Total on-hand stock across all tiers for one drug.
    pub fn total_on_hand(&self, drug: usize) -> u64 {
        self.manufacturer.available[drug]
            + self.distributors.iter().map(|d| d.inventory[drug]).sum::<u64>()
            + self.hospitals.iter().map(|h| h.inventory[drug]).sum::<u64>()
    }

    /// Total in-transit stock for one drug.
    pub fn total_in_transit(&self, drug: usize) -> u64 {
        self.in_transit
            .iter()
            .filter(|s| s.drug as usize == drug)
            .map(|s| s.quantity)
            .sum()
    }

    /// On-hand balances per agent, in canonical agent order.
    pub fn balances(&self) -> Vec<(AgentId, Vec<u64>)> {
        let mut out = vec![(AgentId::manufacturer(0), self.manufacturer.available.clone())];
        for (j, d) in self.distributors.iter().enumerate() {
            out.push((AgentId::distributor(j as u32), d.inventory.clone()));
        }
        for (k, h) in self.hospitals.iter().enumerate() {
            out.push((AgentId::hospital(k as u32), h.inventory.clone()));
        }
        out
    }

    fn recompute_pipelines(&mut self) {
        let drugs = self.num_drugs();
        for h in &mut self.hospitals {
            h.pipeline = vec![0; drugs];
        }
        for d in &mut self.distributors {
            d.pipeline = vec![0; drugs];
        }
        for s in &self.in_transit {
            match s.dst.class {
                AgentClass::Hospital => {
                    self.hospitals[s.dst.index as usize].pipeline[s.drug as usize] += s.quantity
                }
                AgentClass::Distributor => {
                    self.distributors[s.dst.index as usize].pipeline[s.drug as usize] += s.quantity
                }
                AgentClass::Manufacturer => {}
            }
        }
    }
}

fn credit(world: &mut WorldState, agent: AgentId, drug: u32, quantity: u64) {
    match agent.class {
        AgentClass::Hospital => {
            world.hospitals[agent.index as usize].inventory[drug as usize] += quantity
        }
        AgentClass::Distributor => {
            world.distributors[agent.index as usize].inventory[drug as usize] += quantity
        }
        AgentClass::Manufacturer => world.manufacturer.available[drug as usize] += quantity,
    }
}

fn debit(
    world: &mut WorldState,
    agent: AgentId,
    drug: u32,
    quantity: u64,
) -> Result<(), CoordinationError> {
    let balance = match agent.class {
        AgentClass::Hospital => {
            &mut world.hospitals[agent.index as usize].inventory[drug as usize]
        }
        AgentClass::Distributor => {
            &mut world.distributors[agent.index as usize].inventory[drug as usize]
        }
        AgentClass::Manufacturer => &mut world.manufacturer.available[drug as usize],
    };
    *balance = balance
        .checked_sub(quantity)
        .ok_or(CoordinationError::InventoryUnderflow { agent, drug })?;
    Ok(())
}

struct PolicyRunner<'a> {
    policy: &'a mut dyn DecisionPolicy,
    fallback_agents: Vec<AgentId>,
    clamps: Vec<ClampEvent>,
    calls: BTreeMap<AgentId, u32>,
}

impl<'a> PolicyRunner<'a> {
    fn decide(
        &mut self,
        request: PolicyRequest,
        constraints: &DecisionConstraints,
    ) -> DecisionPayload {
        *self.calls.entry(request.agent_id).or_insert(0) += 1;
        let answer = self.policy.decide(&request);
        if answer.fell_back {
            self.fallback_agents.push(request.agent_id);
        }
        match sanitize_decision(&answer.decision, constraints) {
            Ok((decision, clamps)) => {
                for clamp in clamps {
                    self.clamps.push(ClampEvent {
                        reason: format!("{}: {}", request.agent_id, clamp.reason),
                    });
                }
                decision
            }
            Err(violation) => {
                // schema mismatch: fall back to the built-in decision
                if !answer.fell_back {
                    self.fallback_agents.push(request.agent_id);
                }
                self.clamps.push(ClampEvent {
                    reason: format!("{}: {violation}, using builtin", request.agent_id),
                });
                request.builtin
            }
        }
    }
}

/// Executes one full coordination round. Pure: the world is not mutated;
/// apply the returned outcome with [`apply_outcome`].
pub fn run_round(
    world: &WorldState,
    timeline: &Timeline,
    topology: &Topology,
    config: &ScenarioConfig,
    policy: &mut dyn DecisionPolicy,
    streams: &StreamFactory,
) -> Result<RoundOutcome, CoordinationError> {
    let day = world.day;
    let drugs = world.num_drugs();
    let regions = topology.num_distributors();
    let mut w = world.clone();

    // phase 1: deliver due shipments
    let (delivered, remaining): (Vec<Shipment>, Vec<Shipment>) =
        w.in_transit.iter().cloned().partition(|s| s.arrival_day == day);
    w.in_transit = remaining;
    for s in &delivered {
        credit(&mut w, s.dst, s.drug, s.quantity);
    }
    w.recompute_pipelines();

    // phase 2: hospitals consume patient demand, backlogging shortfalls
    let mut patient_demand = vec![vec![0u64; drugs]; w.hospitals.len()];
    let mut consumption = vec![vec![0u64; drugs]; w.hospitals.len()];
    let mut backlog_after = vec![vec![0u64; drugs]; w.hospitals.len()];
    for (k, hospital) in w.hospitals.iter_mut().enumerate() {
        let region = topology.region_of_hospital(k as u32);
        for d in 0..drugs {
            let demand = timeline.realized_demand(day, region, d as u32);
            let need = demand + hospital.backlog[d];
            let served = need.min(hospital.inventory[d]);
            hospital.inventory[d] -= served;
            hospital.backlog[d] = need - served;
            patient_demand[k][d] = demand;
            consumption[k][d] = served;
            backlog_after[k][d] = hospital.backlog[d];
        }
    }

    // disruption draws for every agent, in canonical order
    let mut disruptions = Vec::new();
    let disrupted = |agent: AgentId| -> bool {
        let p = config.disruption.probability_of(agent);
        let mut rng = streams.disruption(agent, day);
        sample_disruption(p, &mut rng).expect("config probabilities validated")
    };
    let manufacturer_disrupted = disrupted(AgentId::manufacturer(0));
    if manufacturer_disrupted {
        disruptions.push(DisruptionEvent {
            agent: AgentId::manufacturer(0),
            event_type: "supply_halt".to_string(),
        });
    }
    w.manufacturer.disrupted = manufacturer_disrupted;
    for j in 0..regions {
        let flag = disrupted(AgentId::distributor(j));
        w.distributors[j as usize].disrupted = flag;
        if flag {
            disruptions.push(DisruptionEvent {
                agent: AgentId::distributor(j),
                event_type: "transit_delay".to_string(),
            });
        }
    }
    for k in 0..topology.num_hospitals() {
        if disrupted(AgentId::hospital(k)) {
            disruptions.push(DisruptionEvent {
                agent: AgentId::hospital(k),
                event_type: "supply_halt".to_string(),
            });
        }
    }

    let mut runner = PolicyRunner {
        policy,
        fallback_agents: Vec::new(),
        clamps: Vec::new(),
        calls: BTreeMap::new(),
    };
    let window = FORECAST_WINDOW_DAYS.min(timeline.horizon_days - day);
    let forecast_for = |region: u32| {
        tool_epidemic_predictor(timeline, region, day, window)
            .expect("window clamped to horizon")
    };

    // phase 3: hospital orders
    let mut orders = Vec::with_capacity(w.hospitals.len());
    for (k, hospital) in w.hospitals.iter().enumerate() {
        let region = topology.region_of_hospital(k as u32);
        let agent = AgentId::hospital(k as u32);
        let obs = Observation {
            day,
            agent,
            region: Some(region),
            inventory: hospital.inventory.clone(),
            pipeline: hospital.pipeline.clone(),
            buffer_target: hospital.buffer_target.clone(),
            backlog: hospital.backlog.clone(),
            criticality_weights: hospital.criticality_weight.clone(),
            forecast: forecast_for(region),
            disrupted: false,
        };
        let builtin = agents::hospital_decide(&obs);
        let request = PolicyRequest {
            protocol_version: PROTOCOL_VERSION,
            day,
            agent_id: agent,
            role: AgentClass::Hospital,
            deadline_ms: 0,
            observation: obs,
            builtin: DecisionPayload::HospitalOrders { quantities: builtin.orders.clone() },
            incoming_orders: None,
            regional_demand: None,
            severity: None,
        };
        let constraints = DecisionConstraints::Hospital { num_drugs: drugs };
        let DecisionPayload::HospitalOrders { quantities } = runner.decide(request, &constraints)
        else {
            unreachable!("sanitize guarantees the variant matches the constraints")
        };
        orders.push(OrderMsg {
            hospital: k as u32,
            quantities,
            forecast: builtin.forecast,
            criticality: builtin.criticality,
        });
    }

    // phase 4: distributors aggregate demand upward
    let mut aggregates = Vec::with_capacity(regions as usize);
    for j in 0..regions {
        let mut totals = vec![0u64; drugs];
        for &k in topology.hospitals_of(j) {
            for d in 0..drugs {
                totals[d] += orders[k as usize].quantities[d];
            }
        }
        aggregates.push(AggregateDemandMsg {
            region: j,
            totals,
            disrupted: w.distributors[j as usize].disrupted,
        });
    }
    let regional_demand: Vec<Vec<u64>> =
        aggregates.iter().map(|a| a.totals.clone()).collect();

    // phase 5: manufacturer produces and allocates
    let mut produced = vec![0u64; drugs];
    if !manufacturer_disrupted {
        for d in 0..drugs {
            produced[d] = config.capacity_on(day, d as u32);
            w.manufacturer.available[d] += produced[d];
        }
    }
    let severity = timeline.severity_vector(day);
    let fairness = fairness_weights(&severity, config.alpha)
        .map_err(|e| CoordinationError::PolicyFailure {
            day,
            agent: AgentId::manufacturer(0),
            reason: e.to_string(),
        })?;
    // a halted manufacturer can ship nothing today; stock carries over
    let allocatable: Vec<u64> = if manufacturer_disrupted {
        vec![0; drugs]
    } else {
        w.manufacturer.available.clone()
    };
    let builtin = agents::manufacturer_decide(
        &allocatable,
        &severity,
        config.alpha,
        config.epsilon,
        &regional_demand,
    )
    .map_err(|e| CoordinationError::PolicyFailure {
        day,
        agent: AgentId::manufacturer(0),
        reason: e.to_string(),
    })?;
    let obs = Observation {
        day,
        agent: AgentId::manufacturer(0),
        region: None,
        inventory: w.manufacturer.available.clone(),
        pipeline: vec![0; drugs],
        buffer_target: vec![0; drugs],
        backlog: vec![0; drugs],
        criticality_weights: timeline.drug_criticality.clone(),
        forecast: Vec::new(),
        disrupted: manufacturer_disrupted,
    };
    let request = PolicyRequest {
        protocol_version: PROTOCOL_VERSION,
        day,
        agent_id: AgentId::manufacturer(0),
        role: AgentClass::Manufacturer,
        deadline_ms: 0,
        observation: obs,
        builtin: DecisionPayload::ManufacturerAllocations {
            per_region: builtin.allocations.clone(),
        },
        incoming_orders: None,
        regional_demand: Some(
            aggregates
                .iter()
                .map(|a| RegionDemand {
                    region: a.region,
                    quantities: a.totals.clone(),
                    disrupted: a.disrupted,
                })
                .collect(),
        ),
        severity: Some(severity.clone()),
    };
    let constraints = DecisionConstraints::Manufacturer {
        available: allocatable,
        num_regions: regions as usize,
    };
    let DecisionPayload::ManufacturerAllocations { per_region } =
        runner.decide(request, &constraints)
    else {
        unreachable!("sanitize guarantees the variant matches the constraints")
    };

    let mut new_shipments = Vec::new();
    let mut allocations = Vec::with_capacity(regions as usize);
    for (r, quantities) in per_region.iter().enumerate() {
        for (d, &quantity) in quantities.iter().enumerate() {
            if quantity > 0 {
                debit(&mut w, AgentId::manufacturer(0), d as u32, quantity)?;
                new_shipments.push(Shipment {
                    src: AgentId::manufacturer(0),
                    dst: AgentId::distributor(r as u32),
                    drug: d as u32,
                    quantity,
                    ship_day: day,
                    arrival_day: day + topology.lead_time_days,
                });
            }
        }
        allocations.push(AllocationMsg {
            region: r as u32,
            quantities: quantities.clone(),
            fairness: fairness[r],
        });
    }

    // phase 6: distributors sub-allocate from on-hand stock
    let mut fulfillments: Vec<FulfillmentMsg> = Vec::with_capacity(w.hospitals.len());
    let mut unmet_orders = vec![vec![0u64; drugs]; w.hospitals.len()];
    for j in 0..regions {
        let hospital_ids = topology.hospitals_of(j).to_vec();
        let distributor = &w.distributors[j as usize];
        let agent = AgentId::distributor(j);
        let hospital_orders: Vec<HospitalOrder> = hospital_ids
            .iter()
            .map(|&k| HospitalOrder {
                quantities: orders[k as usize].quantities.clone(),
                criticality: orders[k as usize].criticality.clone(),
            })
            .collect();
        let builtin = agents::distributor_decide(&distributor.inventory, &hospital_orders);
        let obs = Observation {
            day,
            agent,
            region: Some(j),
            inventory: distributor.inventory.clone(),
            pipeline: distributor.pipeline.clone(),
            buffer_target: vec![0; drugs],
            backlog: vec![0; drugs],
            criticality_weights: timeline.drug_criticality.clone(),
            forecast: forecast_for(j),
            disrupted: distributor.disrupted,
        };
        let request = PolicyRequest {
            protocol_version: PROTOCOL_VERSION,
            day,
            agent_id: agent,
            role: AgentClass::Distributor,
            deadline_ms: 0,
            observation: obs,
            builtin: DecisionPayload::DistributorSubAllocations { per_hospital: builtin.clone() },
            incoming_orders: Some(
                hospital_ids
                    .iter()
                    .map(|&k| IncomingOrder {
                        hospital: k,
                        quantities: orders[k as usize].quantities.clone(),
                        criticality: orders[k as usize].criticality.clone(),
                    })
                    .collect(),
            ),
            regional_demand: None,
            severity: None,
        };
        let constraints = DecisionConstraints::Distributor {
            inventory: distributor.inventory.clone(),
            orders: hospital_orders.iter().map(|o| o.quantities.clone()).collect(),
        };
        let DecisionPayload::DistributorSubAllocations { per_hospital } =
            runner.decide(request, &constraints)
        else {
            unreachable!("sanitize guarantees the variant matches the constraints")
        };

        let disrupted_flag = w.distributors[j as usize].disrupted;
        let extra_delay = if disrupted_flag { 1 } else { 0 };
        for (slot, &k) in hospital_ids.iter().enumerate() {
            let quantities = &per_hospital[slot];
            for (d, &quantity) in quantities.iter().enumerate() {
                unmet_orders[k as usize][d] =
                    orders[k as usize].quantities[d].saturating_sub(quantity);
                if quantity > 0 {
                    debit(&mut w, AgentId::distributor(j), d as u32, quantity)?;
                    new_shipments.push(Shipment {
                        src: AgentId::distributor(j),
                        dst: AgentId::hospital(k),
                        drug: d as u32,
                        quantity,
                        ship_day: day,
                        arrival_day: day + topology.lead_time_days + extra_delay,
                    });
                }
            }
            fulfillments.push(FulfillmentMsg {
                hospital: k,
                quantities: quantities.clone(),
                delay_flag: disrupted_flag,
            });
        }
    }
    fulfillments.sort_by_key(|f| f.hospital);

    Ok(RoundOutcome {
        day,
        orders,
        aggregates,
        allocations,
        fulfillments,
        delivered,
        new_shipments,
        produced,
        patient_demand,
        consumption,
        backlog_after,
        unmet_orders,
        disruptions,
        fairness,
        regional_demand,
        decide_calls: runner.calls,
        fallback_agents: runner.fallback_agents,
        policy_clamps: runner.clamps,
    })
}

/// Replays an outcome onto the world, producing the next day's state.
///
/// Conservation is re-derived from the outcome's own numbers; a mismatch is a
/// hard failure (it indicates an engine bug and is never silently corrected).
pub fn apply_outcome(
    world: &WorldState,
    outcome: &RoundOutcome,
) -> Result<WorldState, CoordinationError> {
    if outcome.day != world.day {
        return Err(CoordinationError::DayMismatch { outcome: outcome.day, world: world.day });
    }
    let drugs = world.num_drugs();
    let before: Vec<i128> = (0..drugs)
        .map(|d| (world.total_on_hand(d) + world.total_in_transit(d)) as i128)
        .collect();

    let mut next = world.clone();
    for shipment in &outcome.delivered {
        let position = next
            .in_transit
            .iter()
            .position(|s| s == shipment)
            .ok_or_else(|| CoordinationError::UnknownShipment(format!("{shipment:?}")))?;
        next.in_transit.remove(position);
        credit(&mut next, shipment.dst, shipment.drug, shipment.quantity);
    }
    for (k, per_drug) in outcome.consumption.iter().enumerate() {
        for (d, &served) in per_drug.iter().enumerate() {
            debit(&mut next, AgentId::hospital(k as u32), d as u32, served)?;
        }
        next.hospitals[k].backlog = outcome.backlog_after[k].clone();
    }
    for (d, &units) in outcome.produced.iter().enumerate() {
        credit(&mut next, AgentId::manufacturer(0), d as u32, units);
    }
    for shipment in &outcome.new_shipments {
        debit(&mut next, shipment.src, shipment.drug, shipment.quantity)?;
        next.in_transit.push(shipment.clone());
    }
    next.recompute_pipelines();
    next.manufacturer.disrupted = outcome
        .disruptions
        .iter()
        .any(|e| e.agent == AgentId::manufacturer(0));
    for (j, distributor) in next.distributors.iter_mut().enumerate() {
        distributor.disrupted = outcome
            .disruptions
            .iter()
            .any(|e| e.agent == AgentId::distributor(j as u32));
    }
    next.day = world.day + 1;

    for d in 0..drugs {
        let after = (next.total_on_hand(d) + next.total_in_transit(d)) as i128;
        let consumed: u64 = outcome.consumption.iter().map(|row| row[d]).sum();
        let produced = outcome.produced[d];
        let delta = after - before[d];
        if produced as i128 - consumed as i128 != delta {
            return Err(CoordinationError::ConservationViolated {
                day: outcome.day,
                drug: d as u32,
                produced,
                consumed,
                delta,
            });
        }
    }
    Ok(next)
}
