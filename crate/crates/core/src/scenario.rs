//! The exogenous world: epidemic trajectories, stochastic demand, and
//! disruption draws, generated from a declarative config plus one seed.
//!
//! Epidemic progression per region follows the classical SIR compartment
//! model
//!
//! ```text
//! dS/dt = -beta * S * I / N
//! dI/dt =  beta * S * I / N - gamma * I
//! dR/dt =  gamma * I
//! ```
//!
//! integrated with fixed-step RK4 (substep <= 0.25 day) and sampled at day
//! boundaries. Daily drug demand per region is the infected count scaled by
//! drug criticality plus zero-mean normal noise; disruptions are per-agent
//! Bernoulli draws. Demand and disruption draws come from disjoint
//! sub-streams (see [`crate::rng::StreamFactory`]).

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng::StreamFactory;
use crate::types::AgentId;

/// Largest RK4 substep, in days.
pub const MAX_RK4_SUBSTEP: f64 = 0.25;

/// Relative tolerance on S+I+R population conservation.
pub const CONSERVATION_RTOL: f64 = 1e-6;

/// Baseline infection rate; the config's `severity` multiplier scales it.
/// severity 0.8 => beta 0.3.
pub const BASELINE_BETA: f64 = 0.375;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ScenarioError {
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("integration step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("probability {0} outside [0, 1]")]
    BadProbability(f64),
    #[error("state violates conservation: S+I+R={sum} vs N={population}")]
    ConservationViolated { sum: f64, population: f64 },
    #[error("negative compartment beyond tolerance: {0}")]
    NegativeCompartment(f64),
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("num_regions must be >= 1")]
    NoRegions,
    #[error("num_drugs must be >= 1")]
    NoDrugs,
    #[error("horizon_days must be >= 1")]
    ZeroHorizon,
    #[error("sir_params must have one entry per region (expected {expected}, got {got})")]
    SirParamsLength { expected: usize, got: usize },
    #[error("drug_criticality must have one entry per drug (expected {expected}, got {got})")]
    CriticalityLength { expected: usize, got: usize },
    #[error("drug_criticality[{0}] = {1} outside [0, 1]")]
    CriticalityRange(usize, f64),
    #[error("buffer_targets must be num_regions x num_drugs")]
    BufferShape,
    #[error("manufacturer_capacity must have one entry per drug")]
    CapacityLength,
    #[error("reserve_stock must have one entry per drug")]
    ReserveLength,
    #[error("sir params for region {region}: {reason}")]
    BadSirParams { region: usize, reason: String },
    #[error("disruption probability for {agent} = {p} outside [0, 1]")]
    BadDisruptionProbability { agent: String, p: f64 },
    #[error("alpha must be finite and >= 0, got {0}")]
    BadAlpha(f64),
    #[error("epsilon {epsilon} infeasible: epsilon * num_regions must be <= 1")]
    InfeasibleEpsilon { epsilon: f64 },
    #[error("demand_noise_frac must be finite and >= 0, got {0}")]
    BadNoiseFrac(f64),
    #[error("capacity outage range {start}..={end} invalid or outside horizon {horizon}")]
    BadOutage { start: u64, end: u64, horizon: u64 },
}

/// SIR rate parameters for one region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SirParams {
    /// Infection rate per day.
    pub beta: f64,
    /// Recovery rate per day.
    pub gamma: f64,
    /// Total regional population N.
    pub population: u64,
    /// Infected persons at day 0.
    pub initial_infected: u64,
}

impl SirParams {
    pub fn validate(&self) -> Result<(), String> {
        if !self.beta.is_finite() || self.beta < 0.0 {
            return Err(format!("beta must be finite and >= 0, got {}", self.beta));
        }
        if !self.gamma.is_finite() || self.gamma < 0.0 {
            return Err(format!("gamma must be finite and >= 0, got {}", self.gamma));
        }
        if self.population == 0 {
            return Err("population must be positive".to_string());
        }
        if self.initial_infected > self.population {
            return Err(format!(
                "initial_infected {} exceeds population {}",
                self.initial_infected, self.population
            ));
        }
        Ok(())
    }

    pub fn initial_state(&self) -> SirState {
        SirState {
            s: (self.population - self.initial_infected) as f64,
            i: self.initial_infected as f64,
            r: 0.0,
        }
    }
}

/// Epidemic compartments of one region at one instant, in persons.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SirState {
    pub s: f64,
    pub i: f64,
    pub r: f64,
}

impl SirState {
    fn sum(&self) -> f64 {
        self.s + self.i + self.r
    }

    fn check_finite(&self) -> Result<(), ScenarioError> {
        if !(self.s.is_finite() && self.i.is_finite() && self.r.is_finite()) {
            return Err(ScenarioError::NonFinite("SirState"));
        }
        Ok(())
    }
}

fn sir_derivative(params: &SirParams, s: f64, i: f64) -> (f64, f64, f64) {
    let n = params.population as f64;
    let infection = params.beta * s * i / n;
    let recovery = params.gamma * i;
    (-infection, infection - recovery, recovery)
}

/// Advances `state` by `dt` days with fixed-step RK4.
///
/// The step is split into substeps of at most [`MAX_RK4_SUBSTEP`] days.
/// Population conservation is enforced to [`CONSERVATION_RTOL`] and tiny
/// negative excursions (>= -1e-9) are clamped to zero on emission.
pub fn integrate_sir(
    params: &SirParams,
    state: &SirState,
    dt: f64,
) -> Result<SirState, ScenarioError> {
    if !dt.is_finite() {
        return Err(ScenarioError::NonFinite("dt"));
    }
    if dt <= 0.0 {
        return Err(ScenarioError::NonPositiveStep(dt));
    }
    state.check_finite()?;
    if !params.beta.is_finite() || !params.gamma.is_finite() {
        return Err(ScenarioError::NonFinite("params"));
    }

    let n = params.population as f64;
    let substeps = (dt / MAX_RK4_SUBSTEP).ceil().max(1.0) as usize;
    let h = dt / substeps as f64;

    let (mut s, mut i, mut r) = (state.s, state.i, state.r);
    for _ in 0..substeps {
        let (k1s, k1i, k1r) = sir_derivative(params, s, i);
        let (k2s, k2i, k2r) = sir_derivative(params, s + 0.5 * h * k1s, i + 0.5 * h * k1i);
        let (k3s, k3i, k3r) = sir_derivative(params, s + 0.5 * h * k2s, i + 0.5 * h * k2i);
        let (k4s, k4i, k4r) = sir_derivative(params, s + h * k3s, i + h * k3i);
        s += h / 6.0 * (k1s + 2.0 * k2s + 2.0 * k3s + k4s);
        i += h / 6.0 * (k1i + 2.0 * k2i + 2.0 * k3i + k4i);
        r += h / 6.0 * (k1r + 2.0 * k2r + 2.0 * k3r + k4r);
    }

    let next = SirState {
        s: clamp_compartment(s)?,
        i: clamp_compartment(i)?,
        r: clamp_compartment(r)?,
    };
    next.check_finite()?;
    let drift = (next.sum() - n).abs() / n;
    if drift > CONSERVATION_RTOL {
        return Err(ScenarioError::ConservationViolated { sum: next.sum(), population: n });
    }
    Ok(next)
}

fn clamp_compartment(x: f64) -> Result<f64, ScenarioError> {
    if x < -1e-9 {
        return Err(ScenarioError::NegativeCompartment(x));
    }
    Ok(x.max(0.0))
}

/// One realized daily demand draw for (region, drug).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemandSample {
    pub region: u32,
    pub drug: u32,
    /// Realized demand in whole units, >= 0.
    pub expected: u64,
    /// Standard deviation of the noise term that was applied.
    pub noise_sigma: f64,
}

/// Draws one demand sample: `max(0, round(infected * criticality + eps))`
/// with `eps ~ Normal(0, noise_frac * infected * criticality)`.
pub fn sample_demand(
    region: u32,
    drug: u32,
    infected: f64,
    criticality: f64,
    noise_frac: f64,
    rng: &mut impl Rng,
) -> DemandSample {
    debug_assert!(infected >= 0.0 && criticality >= 0.0 && noise_frac >= 0.0);
    let mean = infected * criticality;
    let sigma = noise_frac * mean;
    // Normal::new only fails on non-finite/negative sigma, excluded above.
    let noise = Normal::new(0.0, sigma).expect("valid sigma").sample(rng);
    let expected = (mean + noise).round().max(0.0) as u64;
    DemandSample { region, drug, expected, noise_sigma: sigma }
}

/// Draws one Bernoulli disruption indicator, consuming exactly one value
/// from the stream.
pub fn sample_disruption(p: f64, rng: &mut impl Rng) -> Result<bool, ScenarioError> {
    if !p.is_finite() || !(0.0..=1.0).contains(&p) {
        return Err(ScenarioError::BadProbability(p));
    }
    let draw: f64 = rng.random();
    Ok(draw < p)
}

/// Per-agent disruption probabilities, keyed by canonical agent id strings.
/// Agents absent from the map never experience disruptions.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisruptionParams {
    pub per_agent_probability: BTreeMap<String, f64>,
}

impl DisruptionParams {
    /// The same probability for every agent in the default topology.
    pub fn uniform(p: f64, num_regions: u32) -> Self {
        let mut map = BTreeMap::new();
        map.insert(AgentId::manufacturer(0).to_string(), p);
        for r in 0..num_regions {
            map.insert(AgentId::distributor(r).to_string(), p);
            map.insert(AgentId::hospital(r).to_string(), p);
        }
        DisruptionParams { per_agent_probability: map }
    }

    pub fn probability_of(&self, agent: AgentId) -> f64 {
        self.per_agent_probability
            .get(&agent.to_string())
            .copied()
            .unwrap_or(0.0)
    }
}

/// Inclusive day range during which manufacturer production is zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DayRange {
    pub start: u64,
    pub end: u64,
}

impl DayRange {
    pub fn contains(&self, day: u64) -> bool {
        (self.start..=self.end).contains(&day)
    }
}

fn default_lead_time() -> u64 {
    1
}

fn default_noise_frac() -> f64 {
    0.1
}

/// Full declarative description of one scenario. JSON keys match the field
/// names exactly; unknown keys are a hard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub num_regions: u32,
    pub num_drugs: u32,
    /// Simulation horizon T; days are numbered 0..T-1.
    pub horizon_days: u64,
    /// One entry per region.
    pub sir_params: Vec<SirParams>,
    /// Per-drug criticality weight in [0, 1].
    pub drug_criticality: Vec<f64>,
    pub disruption: DisruptionParams,
    /// Fairness sharpness alpha >= 0.
    pub alpha: f64,
    /// Minimum-support fraction; epsilon * num_regions must be <= 1.
    pub epsilon: f64,
    /// Hospital buffer targets, indexed [region][drug].
    pub buffer_targets: Vec<Vec<u64>>,
    /// Shipment delay on every edge, in days.
    #[serde(default = "default_lead_time")]
    pub lead_time_days: u64,
    /// Daily production per drug, in units.
    pub manufacturer_capacity: Vec<u64>,
    /// Emergency reserve per drug held by the enforcement layer.
    pub reserve_stock: Vec<u64>,
    /// Demand noise sigma as a fraction of mean demand.
    #[serde(default = "default_noise_frac")]
    pub demand_noise_frac: f64,
    /// Days on which production is forced to zero (stress scenarios).
    #[serde(default)]
    pub capacity_outages: Vec<DayRange>,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.num_regions == 0 {
            return Err(ConfigError::NoRegions);
        }
        if self.num_drugs == 0 {
            return Err(ConfigError::NoDrugs);
        }
        if self.horizon_days == 0 {
            return Err(ConfigError::ZeroHorizon);
        }
        if self.sir_params.len() != self.num_regions as usize {
            return Err(ConfigError::SirParamsLength {
                expected: self.num_regions as usize,
                got: self.sir_params.len(),
            });
        }
        if self.drug_criticality.len() != self.num_drugs as usize {
            return Err(ConfigError::CriticalityLength {
                expected: self.num_drugs as usize,
                got: self.drug_criticality.len(),
            });
        }
        for (d, &c) in self.drug_criticality.iter().enumerate() {
            if !c.is_finite() || !(0.0..=1.0).contains(&c) {
                return Err(ConfigError::CriticalityRange(d, c));
            }
        }
        if self.buffer_targets.len() != self.num_regions as usize
            || self
                .buffer_targets
                .iter()
                .any(|row| row.len() != self.num_drugs as usize)
        {
            return Err(ConfigError::BufferShape);
        }
        if self.manufacturer_capacity.len() != self.num_drugs as usize {
            return Err(ConfigError::CapacityLength);
        }
        if self.reserve_stock.len() != self.num_drugs as usize {
            return Err(ConfigError::ReserveLength);
        }
        for (region, params) in self.sir_params.iter().enumerate() {
            params
                .validate()
                .map_err(|reason| ConfigError::BadSirParams { region, reason })?;
        }
        for (agent, &p) in &self.disruption.per_agent_probability {
            if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                return Err(ConfigError::BadDisruptionProbability { agent: agent.clone(), p });
            }
        }
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(ConfigError::BadAlpha(self.alpha));
        }
        if !self.epsilon.is_finite()
            || self.epsilon < 0.0
            || self.epsilon * self.num_regions as f64 > 1.0 + 1e-12
        {
            return Err(ConfigError::InfeasibleEpsilon { epsilon: self.epsilon });
        }
        if !self.demand_noise_frac.is_finite() || self.demand_noise_frac < 0.0 {
            return Err(ConfigError::BadNoiseFrac(self.demand_noise_frac));
        }
        for outage in &self.capacity_outages {
            if outage.start > outage.end || outage.end >= self.horizon_days {
                return Err(ConfigError::BadOutage {
                    start: outage.start,
                    end: outage.end,
                    horizon: self.horizon_days,
                });
            }
        }
        Ok(())
    }

    /// Production available on `day`, accounting for configured outages.
    pub fn capacity_on(&self, day: u64, drug: u32) -> u64 {
        if self.capacity_outages.iter().any(|o| o.contains(day)) {
            0
        } else {
            self.manufacturer_capacity[drug as usize]
        }
    }

    /// Strict JSON parse: unknown keys are rejected.
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// The generated exogenous timeline: one SIR state per (day, region) and one
/// demand sample per (day, region, drug).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    pub horizon_days: u64,
    pub num_regions: u32,
    pub num_drugs: u32,
    /// Indexed [day][region]; day 0 is the initial state.
    pub sir: Vec<Vec<SirState>>,
    /// Indexed [day][region][drug].
    pub demand: Vec<Vec<Vec<DemandSample>>>,
    pub drug_criticality: Vec<f64>,
    pub populations: Vec<u64>,
}

impl Timeline {
    /// Infected fraction I_r(t) / N_r, the regional severity score.
    pub fn severity(&self, day: u64, region: u32) -> f64 {
        let state = &self.sir[day as usize][region as usize];
        state.i / self.populations[region as usize] as f64
    }

    pub fn severity_vector(&self, day: u64) -> Vec<f64> {
        (0..self.num_regions).map(|r| self.severity(day, r)).collect()
    }

    /// Noiseless projected demand: `round(I_r(t) * criticality)`.
    pub fn projected_demand(&self, day: u64, region: u32, drug: u32) -> u64 {
        let infected = self.sir[day as usize][region as usize].i;
        (infected * self.drug_criticality[drug as usize]).round().max(0.0) as u64
    }

    /// Realized (noisy) demand for the day.
    pub fn realized_demand(&self, day: u64, region: u32, drug: u32) -> u64 {
        self.demand[day as usize][region as usize][drug as usize].expected
    }
}

/// Materializes the timeline from a validated config. The same (config, seed)
/// always yields the identical timeline.
pub fn generate_scenario(config: &ScenarioConfig) -> Result<Timeline, ConfigError> {
    config.validate()?;
    let streams = StreamFactory::new(config.seed);
    let days = config.horizon_days as usize;
    let regions = config.num_regions as usize;

    let mut sir: Vec<Vec<SirState>> = Vec::with_capacity(days);
    let mut states: Vec<SirState> = config
        .sir_params
        .iter()
        .map(SirParams::initial_state)
        .collect();
    for day in 0..days {
        if day > 0 {
            for (region, state) in states.iter_mut().enumerate() {
                *state = integrate_sir(&config.sir_params[region], state, 1.0)
                    .expect("validated SIR params integrate cleanly");
            }
        }
        sir.push(states.clone());
    }

    let mut demand = Vec::with_capacity(days);
    for (day, day_states) in sir.iter().enumerate() {
        let mut per_region = Vec::with_capacity(regions);
        for (region, state) in day_states.iter().enumerate() {
            let mut per_drug = Vec::with_capacity(config.num_drugs as usize);
            for drug in 0..config.num_drugs {
                let mut rng = streams.demand(region as u32, drug, day as u64);
                per_drug.push(sample_demand(
                    region as u32,
                    drug,
                    state.i,
                    config.drug_criticality[drug as usize],
                    config.demand_noise_frac,
                    &mut rng,
                ));
            }
            per_region.push(per_drug);
        }
        demand.push(per_region);
    }

    Ok(Timeline {
        horizon_days: config.horizon_days,
        num_regions: config.num_regions,
        num_drugs: config.num_drugs,
        sir,
        demand,
        drug_criticality: config.drug_criticality.clone(),
        populations: config.sir_params.iter().map(|p| p.population).collect(),
    })
}
