//! The three agent classes and their deterministic, stateless reasoning
//! tools.
//!
//! Every tool is a pure function: equal inputs give equal outputs, so agent
//! decisions can be replayed and audited. Hospitals order up to a buffer
//! target, manufacturers allocate by exponentially severity-weighted fairness
//! with a minimum-support floor, and distributors ration proportionally with
//! a criticality boost. All integer splitting uses largest-remainder rounding
//! with ties broken by lowest index, so totals are exact.

use serde::{Deserialize, Serialize};

use crate::scenario::{sample_disruption, ScenarioError, Timeline};
use crate::types::AgentId;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AgentError {
    #[error("severity scores must be finite")]
    NonFiniteSeverity,
    #[error("alpha must be finite and >= 0, got {0}")]
    BadAlpha(f64),
    #[error("epsilon {epsilon} infeasible for {regions} regions")]
    InfeasibleEpsilon { epsilon: f64, regions: usize },
    #[error("allocation does not sum to available ({sum} != {available})")]
    AllocationSumMismatch { sum: u64, available: u64 },
    #[error("forecast window {day}+{horizon} exceeds timeline of {limit} days")]
    ForecastOutOfRange { day: u64, horizon: u64, limit: u64 },
    #[error("no regions to allocate across")]
    NoRegions,
}

/// Hospital-side inventory position for one agent, per drug.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HospitalState {
    pub buffer_target: Vec<u64>,
    pub inventory: Vec<u64>,
    pub pipeline: Vec<u64>,
    /// Cumulative unmet patient demand, served later when stock arrives.
    pub backlog: Vec<u64>,
    pub criticality_weight: Vec<f64>,
}

/// Distributor inventory position, per drug.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributorState {
    pub inventory: Vec<u64>,
    pub pipeline: Vec<u64>,
    pub disrupted: bool,
}

/// Manufacturer stock position, per drug.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManufacturerState {
    /// Unallocated stock Q, per drug.
    pub available: Vec<u64>,
    pub daily_capacity: Vec<u64>,
    pub disrupted: bool,
}

/// An agent's local view at one timestep; the only input a policy sees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub day: u64,
    pub agent: AgentId,
    /// Region index for distributors and hospitals.
    pub region: Option<u32>,
    pub inventory: Vec<u64>,
    pub pipeline: Vec<u64>,
    /// Zeros for non-hospital agents.
    pub buffer_target: Vec<u64>,
    /// Zeros for non-hospital agents.
    pub backlog: Vec<u64>,
    pub criticality_weights: Vec<f64>,
    /// Noiseless projected demand [day offset][drug] for the forecast window.
    pub forecast: Vec<Vec<u64>>,
    pub disrupted: bool,
}

/// Splits `total` into integer parts proportional to `weights` using
/// largest-remainder rounding; ties go to the lowest index. The parts always
/// sum to `total` exactly. Non-positive weight sums fall back to a uniform
/// split.
pub fn largest_remainder(weights: &[f64], total: u64) -> Vec<u64> {
    let n = weights.len();
    if n == 0 {
        return Vec::new();
    }
    let sum: f64 = weights.iter().sum();
    let shares: Vec<f64> = if sum > 0.0 {
        weights.iter().map(|w| w / sum * total as f64).collect()
    } else {
        vec![total as f64 / n as f64; n]
    };
    let mut parts: Vec<u64> = shares.iter().map(|s| s.floor() as u64).collect();
    let assigned: u64 = parts.iter().sum();
    let mut order: Vec<usize> = (0..n).collect();
    // stable sort by descending fractional part; stability gives lowest-index ties
    order.sort_by(|&a, &b| {
        let fa = shares[a] - shares[a].floor();
        let fb = shares[b] - shares[b].floor();
        fb.partial_cmp(&fa).unwrap()
    });
    let mut remainder = total - assigned;
    for idx in order {
        if remainder == 0 {
            break;
        }
        parts[idx] += 1;
        remainder -= 1;
    }
    parts
}

/// Order quantity `max(0, B - (I + P))`.
pub fn tool_order_estimator(buffer_target: u64, inventory: u64, pipeline: u64) -> u64 {
    buffer_target.saturating_sub(inventory.saturating_add(pipeline))
}

/// Normalized exponential fairness weights `phi_r = e^(alpha S_r) / sum`.
///
/// Scores are shifted by their maximum before exponentiation for overflow
/// safety; the weights are mathematically unchanged.
pub fn fairness_weights(severity: &[f64], alpha: f64) -> Result<Vec<f64>, AgentError> {
    if severity.is_empty() {
        return Err(AgentError::NoRegions);
    }
    if severity.iter().any(|s| !s.is_finite()) {
        return Err(AgentError::NonFiniteSeverity);
    }
    if !alpha.is_finite() || alpha < 0.0 {
        return Err(AgentError::BadAlpha(alpha));
    }
    let max = severity.iter().cloned().fold(f64::MIN, f64::max);
    let exps: Vec<f64> = severity.iter().map(|&s| (alpha * (s - max)).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Allocates `available` units across regions proportionally to the
/// exponential fairness weights, rounded by largest remainder. The result
/// sums to `available` exactly.
pub fn tool_allocation_engine(
    severity: &[f64],
    alpha: f64,
    available: u64,
) -> Result<Vec<u64>, AgentError> {
    let weights = fairness_weights(severity, alpha)?;
    Ok(largest_remainder(&weights, available))
}

/// Raises every region to the minimum-support floor `floor(epsilon * Q)`,
/// funding the raise proportionally from above-floor regions' surplus
/// (largest-remainder on the reductions). The total is preserved.
pub fn tool_fairness_floor(
    allocation: &[u64],
    epsilon: f64,
    available: u64,
) -> Result<Vec<u64>, AgentError> {
    let regions = allocation.len();
    if regions == 0 {
        return Err(AgentError::NoRegions);
    }
    if !epsilon.is_finite() || epsilon < 0.0 || epsilon * regions as f64 > 1.0 + 1e-12 {
        return Err(AgentError::InfeasibleEpsilon { epsilon, regions });
    }
    let sum: u64 = allocation.iter().sum();
    if sum != available {
        return Err(AgentError::AllocationSumMismatch { sum, available });
    }
    let floor = (epsilon * available as f64).floor() as u64;
    if floor == 0 {
        return Ok(allocation.to_vec());
    }
    let deficit: u64 = allocation.iter().map(|&x| floor.saturating_sub(x)).sum();
    if deficit == 0 {
        return Ok(allocation.to_vec());
    }
    let surplus: Vec<u64> = allocation.iter().map(|&x| x.saturating_sub(floor)).collect();
    let surplus_weights: Vec<f64> = surplus.iter().map(|&s| s as f64).collect();
    // epsilon * regions <= 1 guarantees total surplus covers the deficit
    let reductions = largest_remainder(&surplus_weights, deficit);
    let mut adjusted = Vec::with_capacity(regions);
    for r in 0..regions {
        let x = if allocation[r] < floor {
            floor
        } else {
            allocation[r] - reductions[r]
        };
        adjusted.push(x);
    }
    Ok(adjusted)
}

/// Criticality score: criticality-weighted shortfall fraction
/// `c * max(0, B - (I + P)) / max(B, 1)`, bounded to [0, c].
pub fn tool_criticality(buffer_target: u64, inventory: u64, pipeline: u64, weight: f64) -> f64 {
    let shortfall = tool_order_estimator(buffer_target, inventory, pipeline);
    weight * shortfall as f64 / buffer_target.max(1) as f64
}

/// Noiseless projected demand for `region` over `[day, day + horizon)`,
/// indexed [offset][drug]. Agents forecast the epidemic curve, not the noise.
pub fn tool_epidemic_predictor(
    timeline: &Timeline,
    region: u32,
    day: u64,
    horizon: u64,
) -> Result<Vec<Vec<u64>>, AgentError> {
    if day + horizon > timeline.horizon_days {
        return Err(AgentError::ForecastOutOfRange {
            day,
            horizon,
            limit: timeline.horizon_days,
        });
    }
    Ok((day..day + horizon)
        .map(|t| {
            (0..timeline.num_drugs)
                .map(|drug| timeline.projected_demand(t, region, drug))
                .collect()
        })
        .collect())
}

/// Bernoulli disruption draw; delegates to the scenario sampler so every
/// layer shares one reproducibility contract.
pub fn tool_disruption_simulator(
    p: f64,
    rng: &mut impl rand::Rng,
) -> Result<bool, ScenarioError> {
    sample_disruption(p, rng)
}

/// A hospital's decision for one day: per-drug orders plus the criticality
/// and forecast attached to the upstream message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HospitalDecision {
    pub orders: Vec<u64>,
    pub criticality: Vec<f64>,
    /// Today's noiseless projected demand per drug.
    pub forecast: Vec<u64>,
}

/// Buffer-adjusted ordering: the gap is measured against the buffer target
/// plus accumulated backlog, so unmet patient demand is re-ordered rather
/// than silently dropped.
pub fn hospital_decide(obs: &Observation) -> HospitalDecision {
    let drugs = obs.inventory.len();
    let mut orders = Vec::with_capacity(drugs);
    let mut criticality = Vec::with_capacity(drugs);
    for d in 0..drugs {
        let target = obs.buffer_target[d].saturating_add(obs.backlog[d]);
        orders.push(tool_order_estimator(target, obs.inventory[d], obs.pipeline[d]));
        criticality.push(tool_criticality(
            obs.buffer_target[d],
            obs.inventory[d],
            obs.pipeline[d],
            obs.criticality_weights[d],
        ));
    }
    let forecast = obs
        .forecast
        .first()
        .cloned()
        .unwrap_or_else(|| vec![0; drugs]);
    HospitalDecision { orders, criticality, forecast }
}

/// One hospital order as seen by its distributor.
#[derive(Debug, Clone, PartialEq)]
pub struct HospitalOrder {
    /// Requested units per drug.
    pub quantities: Vec<u64>,
    /// Criticality score per drug.
    pub criticality: Vec<f64>,
}

/// Sub-allocates distributor stock against hospital orders, per drug.
///
/// Full orders are satisfied when stock suffices; otherwise stock is rationed
/// proportionally to `order * (1 + criticality)`, largest-remainder rounded,
/// capped at each order with the excess re-rationed among uncapped orders
/// until a fixpoint. Never ships more than on-hand inventory and never
/// over-ships an order.
pub fn distributor_decide(inventory: &[u64], orders: &[HospitalOrder]) -> Vec<Vec<u64>> {
    let drugs = inventory.len();
    let hospitals = orders.len();
    let mut result = vec![vec![0u64; drugs]; hospitals];
    for d in 0..drugs {
        let requested: Vec<u64> = orders.iter().map(|o| o.quantities[d]).collect();
        let total: u64 = requested.iter().sum();
        if total == 0 {
            continue;
        }
        if total <= inventory[d] {
            for (k, &r) in requested.iter().enumerate() {
                result[k][d] = r;
            }
            continue;
        }
        let weights: Vec<f64> = orders
            .iter()
            .map(|o| o.quantities[d] as f64 * (1.0 + o.criticality[d]))
            .collect();
        let shares = cap_and_redistribute(&weights, &requested, inventory[d]);
        for (k, share) in shares.into_iter().enumerate() {
            result[k][d] = share;
        }
    }
    result
}

/// A manufacturer's decision for one day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManufacturerDecision {
    /// Allocation indexed [region][drug]; sums per drug never exceed Q.
    pub allocations: Vec<Vec<u64>>,
    /// Fairness weights phi per region (shared across drugs).
    pub fairness: Vec<f64>,
}

/// Fairness-weighted allocation across regions, per drug: exponential
/// weights, minimum-support floor, then a cap at each region's aggregate
/// demand with surplus re-rationed by the same weights until a fixpoint.
/// Undemanded stock stays with the manufacturer.
pub fn manufacturer_decide(
    available: &[u64],
    severity: &[f64],
    alpha: f64,
    epsilon: f64,
    regional_demand: &[Vec<u64>],
) -> Result<ManufacturerDecision, AgentError> {
    let regions = severity.len();
    let drugs = available.len();
    let weights = fairness_weights(severity, alpha)?;
    let mut allocations = vec![vec![0u64; drugs]; regions];
    for d in 0..drugs {
        let demand: Vec<u64> = regional_demand.iter().map(|row| row[d]).collect();
        let total_demand: u64 = demand.iter().sum();
        if total_demand == 0 || available[d] == 0 {
            continue;
        }
        let engine = tool_allocation_engine(severity, alpha, available[d])?;
        let floored = tool_fairness_floor(&engine, epsilon, available[d])?;
        let capped = cap_and_redistribute_from(&weights, &floored, &demand);
        for (r, units) in capped.into_iter().enumerate() {
            allocations[r][d] = units;
        }
    }
    Ok(ManufacturerDecision { allocations, fairness: weights })
}

/// Rations `supply` across recipients proportionally to `weights`, capping
/// each at its request and re-rationing overflow among uncapped recipients.
fn cap_and_redistribute(weights: &[f64], caps: &[u64], supply: u64) -> Vec<u64> {
    let start = largest_remainder(weights, supply.min(caps.iter().sum()));
    cap_and_redistribute_from(weights, &start, caps)
}

/// Same fixpoint capping, starting from an already-computed allocation.
fn cap_and_redistribute_from(weights: &[f64], start: &[u64], caps: &[u64]) -> Vec<u64> {
    let n = start.len();
    let mut alloc = start.to_vec();
    loop {
        let mut overflow = 0u64;
        for r in 0..n {
            if alloc[r] > caps[r] {
                overflow += alloc[r] - caps[r];
                alloc[r] = caps[r];
            }
        }
        if overflow == 0 {
            return alloc;
        }
        let open: Vec<usize> = (0..n).filter(|&r| alloc[r] < caps[r]).collect();
        if open.is_empty() {
            // every recipient is saturated; the remainder stays unallocated
            return alloc;
        }
        let open_weights: Vec<f64> = open.iter().map(|&r| weights[r]).collect();
        let extra = largest_remainder(&open_weights, overflow);
        for (slot, &r) in open.iter().enumerate() {
            alloc[r] += extra[slot];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate_scenario, DisruptionParams, ScenarioConfig, SirParams};

    #[test]
    fn order_estimator_examples() {
        assert_eq!(tool_order_estimator(100, 40, 30), 30);
        assert_eq!(tool_order_estimator(100, 100, 0), 0);
        assert_eq!(tool_order_estimator(100, 120, 50), 0);
    }

    #[test]
    fn allocation_engine_uniform_when_alpha_zero() {
        let alloc = tool_allocation_engine(&[0.9, 0.1, 0.5], 0.0, 300).unwrap();
        assert_eq!(alloc, vec![100, 100, 100]);
    }

    #[test]
    fn allocation_engine_single_region_gets_everything() {
        let alloc = tool_allocation_engine(&[0.42], 7.0, 250).unwrap();
        assert_eq!(alloc, vec![250]);
    }

    #[test]
    fn allocation_engine_matches_high_precision_softmax() {
        // alpha=1, S=(2,1,0), Q=1000: weights (0.66524, 0.24473, 0.09003),
        // largest remainder gives (665, 245, 90).
        let severity = [2.0, 1.0, 0.0];
        let weights = fairness_weights(&severity, 1.0).unwrap();
        let expect = |s: f64| {
            let z: f64 = severity.iter().map(|&x| (x - 2.0f64).exp()).sum();
            (s - 2.0f64).exp() / z
        };
        for (r, &s) in severity.iter().enumerate() {
            assert!((weights[r] - expect(s)).abs() < 1e-12);
        }
        assert!((weights[0] - 0.66524).abs() < 1e-5);
        assert!((weights[1] - 0.24473).abs() < 1e-5);
        assert!((weights[2] - 0.09003).abs() < 1e-5);
        let alloc = tool_allocation_engine(&severity, 1.0, 1000).unwrap();
        assert_eq!(alloc, vec![665, 245, 90]);
    }

    #[test]
    fn allocation_engine_rejects_non_finite_severity() {
        assert_eq!(
            tool_allocation_engine(&[1.0, f64::NAN], 1.0, 10).unwrap_err(),
            AgentError::NonFiniteSeverity
        );
    }

    #[test]
    fn allocation_sums_exactly_for_fuzzed_inputs() {
        let mut state = 0x243F6A8885A308D3u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        for _ in 0..500 {
            let regions = 1 + (next() % 8) as usize;
            let severity: Vec<f64> = (0..regions).map(|_| (next() % 1000) as f64 / 100.0).collect();
            let alpha = (next() % 400) as f64 / 10.0;
            let q = next() % 100_000;
            let alloc = tool_allocation_engine(&severity, alpha, q).unwrap();
            assert_eq!(alloc.iter().sum::<u64>(), q);
        }
    }

    #[test]
    fn shift_invariance_is_exact_on_dyadic_grid() {
        // Severities and shifts on a 1/64 grid keep the additions exact in
        // binary floating point, so the identity holds bit-for-bit.
        let mut state = 0x9E3779B97F4A7C15u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        for _ in 0..200 {
            let regions = 2 + (next() % 6) as usize;
            let severity: Vec<f64> =
                (0..regions).map(|_| (next() % 1280) as f64 / 64.0).collect();
            let shift = ((next() % 640) as f64 - 320.0) / 64.0;
            let shifted: Vec<f64> = severity.iter().map(|s| s + shift).collect();
            let alpha = (next() % 200) as f64 / 10.0;
            let q = next() % 10_000;
            assert_eq!(
                tool_allocation_engine(&severity, alpha, q).unwrap(),
                tool_allocation_engine(&shifted, alpha, q).unwrap()
            );
        }
    }

    #[test]
    fn monotone_priority_without_binding_floors() {
        let severity = [0.9, 0.5, 0.1];
        let alloc = tool_allocation_engine(&severity, 10.0, 5000).unwrap();
        assert!(alloc[0] >= alloc[1] && alloc[1] >= alloc[2], "{alloc:?}");
    }

    /// Brute-force check of the floor redistribution contract.
    fn check_floor_properties(original: &[u64], adjusted: &[u64], epsilon: f64, q: u64) {
        let floor = (epsilon * q as f64).floor() as u64;
        assert_eq!(adjusted.iter().sum::<u64>(), q, "sum preserved");
        assert!(adjusted.iter().all(|&x| x >= floor), "floor guaranteed: {adjusted:?}");
        // deficit regions land exactly on the floor
        for (o, a) in original.iter().zip(adjusted) {
            if *o < floor {
                assert_eq!(*a, floor);
            }
        }
        // above-floor regions are reduced proportionally to surplus (within
        // one unit of the real-valued reduction)
        let deficit: u64 = original.iter().map(|&x| floor.saturating_sub(x)).sum();
        let total_surplus: u64 = original.iter().map(|&x| x.saturating_sub(floor)).sum();
        if deficit > 0 && total_surplus > 0 {
            for (o, a) in original.iter().zip(adjusted) {
                if *o >= floor {
                    let ideal = *o as f64
                        - deficit as f64 * (o - floor) as f64 / total_surplus as f64;
                    assert!((ideal - *a as f64).abs() < 1.0, "o={o} a={a} ideal={ideal}");
                }
            }
        }
        // relative order of above-floor regions is preserved
        let above: Vec<usize> = (0..original.len()).filter(|&r| original[r] > floor).collect();
        for w in above.windows(2) {
            if original[w[0]] > original[w[1]] {
                assert!(adjusted[w[0]] >= adjusted[w[1]]);
            }
        }
    }

    #[test]
    fn fairness_floor_examples_and_properties() {
        // no floor
        assert_eq!(tool_fairness_floor(&[990, 10, 0], 0.0, 1000).unwrap(), vec![990, 10, 0]);
        // deficit raise funded from the single surplus region
        let adjusted = tool_fairness_floor(&[990, 10, 0], 0.05, 1000).unwrap();
        check_floor_properties(&[990, 10, 0], &adjusted, 0.05, 1000);
        assert_eq!(adjusted, vec![900, 50, 50]);
        // epsilon = 1/R with divisible Q consumes everything into uniformity
        assert_eq!(
            tool_fairness_floor(&[800, 100, 0], 1.0 / 3.0, 900).unwrap(),
            vec![300, 300, 300]
        );
        // infeasible epsilon rejected
        assert!(matches!(
            tool_fairness_floor(&[1, 1], 0.6, 2),
            Err(AgentError::InfeasibleEpsilon { .. })
        ));
    }

    #[test]
    fn fairness_floor_fuzzed_redistribution_properties() {
        let mut state = 0xD1B54A32D192ED03u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        for _ in 0..500 {
            let regions = 2 + (next() % 6) as usize;
            let epsilon = (next() % 100) as f64 / 100.0 / regions as f64;
            let weights: Vec<f64> = (0..regions).map(|_| (next() % 1000) as f64).collect();
            let q = next() % 50_000;
            let original = largest_remainder(&weights, q);
            let adjusted = tool_fairness_floor(&original, epsilon, q).unwrap();
            check_floor_properties(&original, &adjusted, epsilon, q);
        }
    }

    #[test]
    fn criticality_examples() {
        assert_eq!(tool_criticality(100, 60, 40, 1.0), 0.0);
        assert_eq!(tool_criticality(100, 0, 0, 1.0), 1.0);
        assert!((tool_criticality(200, 50, 50, 0.5) - 0.25).abs() < 1e-12);
    }

    fn forecast_config() -> ScenarioConfig {
        ScenarioConfig {
            num_regions: 1,
            num_drugs: 2,
            horizon_days: 30,
            sir_params: vec![SirParams {
                beta: 0.0,
                gamma: 0.1,
                population: 10_000,
                initial_infected: 1000,
            }],
            drug_criticality: vec![1.0, 0.5],
            disruption: DisruptionParams::default(),
            alpha: 15.0,
            epsilon: 0.05,
            buffer_targets: vec![vec![100, 100]],
            lead_time_days: 1,
            manufacturer_capacity: vec![100, 100],
            reserve_stock: vec![0, 0],
            demand_noise_frac: 0.0,
            capacity_outages: vec![],
            seed: 5,
        }
    }

    #[test]
    fn epidemic_predictor_decays_with_beta_zero() {
        let timeline = generate_scenario(&forecast_config()).unwrap();
        let forecast = tool_epidemic_predictor(&timeline, 0, 0, 10).unwrap();
        assert_eq!(forecast.len(), 10);
        for w in forecast.windows(2) {
            assert!(w[1][0] < w[0][0], "beta=0 forecast must strictly decrease: {forecast:?}");
        }
        // zero-noise consistency: forecast day t equals realized demand at t
        for day in 0..10 {
            assert_eq!(forecast[day][0], timeline.realized_demand(day as u64, 0, 0));
            assert_eq!(forecast[day][1], timeline.realized_demand(day as u64, 0, 1));
        }
    }

    #[test]
    fn epidemic_predictor_bounds() {
        let timeline = generate_scenario(&forecast_config()).unwrap();
        assert_eq!(tool_epidemic_predictor(&timeline, 0, 3, 0).unwrap(), Vec::<Vec<u64>>::new());
        assert!(matches!(
            tool_epidemic_predictor(&timeline, 0, 25, 10),
            Err(AgentError::ForecastOutOfRange { .. })
        ));
    }

    fn obs(buffer: u64, inventory: u64, pipeline: u64, backlog: u64) -> Observation {
        Observation {
            day: 3,
            agent: AgentId::hospital(0),
            region: Some(0),
            inventory: vec![inventory; 2],
            pipeline: vec![pipeline; 2],
            buffer_target: vec![buffer; 2],
            backlog: vec![backlog; 2],
            criticality_weights: vec![1.0, 0.5],
            forecast: vec![vec![7, 3]],
            disrupted: false,
        }
    }

    #[test]
    fn hospital_decide_examples() {
        let at_buffer = hospital_decide(&obs(100, 100, 0, 0));
        assert_eq!(at_buffer.orders, vec![0, 0]);
        let empty = hospital_decide(&obs(100, 0, 0, 0));
        assert_eq!(empty.orders, vec![100, 100]);
        assert_eq!(empty.forecast, vec![7, 3]);
        // backlog inflates the gap
        let backlogged = hospital_decide(&obs(100, 20, 30, 40));
        assert_eq!(backlogged.orders, vec![90, 90]);
        // statelessness: replay gives the identical decision
        assert_eq!(hospital_decide(&obs(100, 20, 30, 40)), backlogged);
    }

    fn order(quantities: Vec<u64>, criticality: Vec<f64>) -> HospitalOrder {
        HospitalOrder { quantities, criticality }
    }

    #[test]
    fn distributor_fulfills_fully_in_abundance() {
        let orders = vec![order(vec![40], vec![0.5]), order(vec![50], vec![0.0])];
        let y = distributor_decide(&[100], &orders);
        assert_eq!(y, vec![vec![40], vec![50]]);
    }

    #[test]
    fn distributor_starvation_ships_nothing() {
        let orders = vec![order(vec![40], vec![0.5]), order(vec![50], vec![0.0])];
        let y = distributor_decide(&[0], &orders);
        assert_eq!(y, vec![vec![0], vec![0]]);
    }

    #[test]
    fn distributor_rations_by_criticality_boosted_proportion() {
        // inventory 100 against orders (100, 100) with criticality (1, 0):
        // weights 200:100 -> (67, 33).
        let orders = vec![order(vec![100], vec![1.0]), order(vec![100], vec![0.0])];
        let y = distributor_decide(&[100], &orders);
        assert_eq!(y, vec![vec![67], vec![33]]);
    }

    #[test]
    fn distributor_never_overships_order_or_stock() {
        let mut state = 0xA5A5A5A55A5A5A5Au64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        for _ in 0..300 {
            let hospitals = 1 + (next() % 5) as usize;
            let orders: Vec<HospitalOrder> = (0..hospitals)
                .map(|_| {
                    order(
                        vec![next() % 500],
                        vec![(next() % 100) as f64 / 100.0],
                    )
                })
                .collect();
            let inventory = [next() % 600];
            let y = distributor_decide(&inventory, &orders);
            let shipped: u64 = y.iter().map(|row| row[0]).sum();
            let requested: u64 = orders.iter().map(|o| o.quantities[0]).sum();
            assert!(shipped <= inventory[0]);
            assert_eq!(shipped, requested.min(inventory[0]), "rationing exhausts stock");
            for (k, row) in y.iter().enumerate() {
                assert!(row[0] <= orders[k].quantities[0], "cap respect");
            }
        }
    }

    /// Independent oracle for the manufacturer pipeline: plain softmax,
    /// floor-raise, then greedy cap/redistribute, all recomputed from scratch.
    fn manufacturer_oracle(
        severity: &[f64],
        alpha: f64,
        epsilon: f64,
        q: u64,
        demand: &[u64],
    ) -> Vec<u64> {
        let regions = severity.len();
        let max = severity.iter().cloned().fold(f64::MIN, f64::max);
        let exps: Vec<f64> = severity.iter().map(|&s| (alpha * (s - max)).exp()).collect();
        let z: f64 = exps.iter().sum();
        let weights: Vec<f64> = exps.iter().map(|e| e / z).collect();
        let mut alloc = largest_remainder(&weights, q);
        let floor = (epsilon * q as f64).floor() as u64;
        let deficit: u64 = alloc.iter().map(|&x| floor.saturating_sub(x)).sum();
        if deficit > 0 {
            let surplus: Vec<f64> =
                alloc.iter().map(|&x| x.saturating_sub(floor) as f64).collect();
            let cuts = largest_remainder(&surplus, deficit);
            for r in 0..regions {
                alloc[r] = if alloc[r] < floor { floor } else { alloc[r] - cuts[r] };
            }
        }
        loop {
            let mut over = 0u64;
            for r in 0..regions {
                if alloc[r] > demand[r] {
                    over += alloc[r] - demand[r];
                    alloc[r] = demand[r];
                }
            }
            if over == 0 {
                break;
            }
            let open: Vec<usize> = (0..regions).filter(|&r| alloc[r] < demand[r]).collect();
            if open.is_empty() {
                break;
            }
            let w: Vec<f64> = open.iter().map(|&r| weights[r]).collect();
            let extra = largest_remainder(&w, over);
            for (slot, &r) in open.iter().enumerate() {
                alloc[r] += extra[slot];
            }
        }
        alloc
    }

    #[test]
    fn manufacturer_matches_independent_pipeline_oracle() {
        let severity = [0.05, 0.02, 0.01];
        let demand = vec![vec![10_000u64], vec![10_000], vec![10_000]];
        let decision = manufacturer_decide(&[1000], &severity, 20.0, 0.05, &demand).unwrap();
        let oracle = manufacturer_oracle(&severity, 20.0, 0.05, 1000, &[10_000, 10_000, 10_000]);
        let got: Vec<u64> = decision.allocations.iter().map(|row| row[0]).collect();
        assert_eq!(got, oracle);
        assert_eq!(got.iter().sum::<u64>(), 1000);
        assert_eq!(got, vec![500, 275, 225]);
    }

    #[test]
    fn manufacturer_zero_demand_allocates_nothing() {
        let decision =
            manufacturer_decide(&[500], &[0.5, 0.2], 15.0, 0.05, &[vec![0], vec![0]]).unwrap();
        assert_eq!(decision.allocations, vec![vec![0], vec![0]]);
    }

    #[test]
    fn manufacturer_uniform_severity_splits_uniformly() {
        let demand = vec![vec![10_000u64]; 4];
        let decision =
            manufacturer_decide(&[800], &[0.3; 4], 27.0, 0.0, &demand).unwrap();
        let got: Vec<u64> = decision.allocations.iter().map(|row| row[0]).collect();
        assert_eq!(got, vec![200; 4]);
    }

    #[test]
    fn manufacturer_caps_at_demand_and_redistributes() {
        let mut state = 0xC0FFEE1234567890u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        for _ in 0..300 {
            let regions = 2 + (next() % 5) as usize;
            let severity: Vec<f64> = (0..regions).map(|_| (next() % 100) as f64 / 100.0).collect();
            let alpha = (next() % 300) as f64 / 10.0;
            let q = next() % 20_000;
            let demand: Vec<u64> = (0..regions).map(|_| next() % 8_000).collect();
            let regional: Vec<Vec<u64>> = demand.iter().map(|&d| vec![d]).collect();
            let decision =
                manufacturer_decide(&[q], &severity, alpha, 0.05, &regional).unwrap();
            let got: Vec<u64> = decision.allocations.iter().map(|row| row[0]).collect();
            let oracle = manufacturer_oracle(&severity, alpha, 0.05, q, &demand);
            assert_eq!(got, oracle);
            let total: u64 = got.iter().sum();
            let total_demand: u64 = demand.iter().sum();
            assert!(total <= q);
            assert_eq!(total, q.min(total_demand), "allocate all stock the market can absorb");
            for (r, &x) in got.iter().enumerate() {
                assert!(x <= demand[r], "demand cap respected");
            }
        }
    }

    #[test]
    fn largest_remainder_tie_breaks_to_lowest_index() {
        // equal weights, one leftover unit -> index 0 wins the tie
        assert_eq!(largest_remainder(&[1.0, 1.0, 1.0], 301), vec![101, 100, 100]);
        assert_eq!(largest_remainder(&[0.0, 0.0], 5), vec![3, 2]);
        assert_eq!(largest_remainder(&[], 5), Vec::<u64>::new());
    }
}
