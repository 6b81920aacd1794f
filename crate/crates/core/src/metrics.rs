//! Evaluation metrics over run logs: resilience (stockout recovery time),
//! fairness deviation, fulfillment efficiency, per-day throughput, and the
//! service-level summary. All metrics are pure post-processing over
//! immutable logs; days that cannot be attributed to the audit chain are
//! refused rather than silently skipped.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ledger::{verify_chain, AuditAction, AuditRecord};

/// Fraction of the buffer target used as the stockout threshold theta.
pub const DEFAULT_THETA_FRAC: f64 = 0.1;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("audit chain fails verification at record {0}")]
    UnverifiedChain(usize),
    #[error("day {0} is absent from the audit chain; logs are not auditable")]
    MissingAuditDay(u64),
    #[error("theta {theta} must be below the buffer target {buffer}")]
    BadTheta { theta: u64, buffer: u64 },
    #[error("run logs truncated: {0}")]
    TruncatedLogs(String),
}

/// One stockout episode for a (hospital, drug) series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StockoutEpisode {
    pub start_day: u64,
    /// Days until inventory first returned to the buffer target;
    /// `None` when the episode never recovered within the horizon.
    pub recovery_days: Option<u64>,
}

/// Recovery times for one inventory series: an episode opens on a day with
/// `inventory < theta` and closes on the first later day with
/// `inventory >= buffer`.
pub fn resilience(
    inventory: &[u64],
    theta: u64,
    buffer: u64,
) -> Result<Vec<StockoutEpisode>, MetricsError> {
    if theta >= buffer {
        return Err(MetricsError::BadTheta { theta, buffer });
    }
    let mut episodes = Vec::new();
    let mut open: Option<u64> = None;
    for (day, &level) in inventory.iter().enumerate() {
        let day = day as u64;
        match open {
            Some(start) => {
                if level >= buffer {
                    episodes.push(StockoutEpisode {
                        start_day: start,
                        recovery_days: Some(day - start),
                    });
                    open = None;
                }
            }
            None => {
                if level < theta {
                    open = Some(day);
                }
            }
        }
    }
    if let Some(start) = open {
        episodes.push(StockoutEpisode { start_day: start, recovery_days: None });
    }
    Ok(episodes)
}

/// Outcome of the per-day fairness computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FairnessDay {
    /// Per-region deviations |x_r / sum(x) - w_r / sum(w)|.
    Defined(Vec<f64>),
    /// Both allocation and weights are all-zero; deviation defined as zero.
    BothZero,
    /// Exactly one side is all-zero; the day is excluded from aggregates.
    OneSidedZero,
}

/// Deviation between allocation shares and severity-weighted demand shares.
pub fn fairness_deviation(allocation: &[u64], weights: &[f64]) -> FairnessDay {
    let alloc_sum: u64 = allocation.iter().sum();
    let weight_sum: f64 = weights.iter().sum();
    match (alloc_sum > 0, weight_sum > 0.0) {
        (false, false) => FairnessDay::BothZero,
        (true, true) => FairnessDay::Defined(
            allocation
                .iter()
                .zip(weights)
                .map(|(&x, &w)| (x as f64 / alloc_sum as f64 - w / weight_sum).abs())
                .collect(),
        ),
        _ => FairnessDay::OneSidedZero,
    }
}

/// Fulfillment efficiency `sum(fulfilled) / sum(requested)`; `None` on
/// no-demand days.
pub fn fulfillment_efficiency(fulfilled: &[u64], requested: &[u64]) -> Option<f64> {
    let demand: u64 = requested.iter().sum();
    if demand == 0 {
        return None;
    }
    let served: u64 = fulfilled.iter().sum();
    debug_assert!(served <= demand, "cap respect is an upstream invariant");
    Some(served as f64 / demand as f64)
}

/// Number of audit records stamped with `day`. The chain is verified first;
/// an unverifiable chain is refused.
pub fn throughput(chain: &[AuditRecord], day: u64) -> Result<u64, MetricsError> {
    verify_chain(chain).map_err(MetricsError::UnverifiedChain)?;
    Ok(chain.iter().filter(|r| r.timestamp == day).count() as u64)
}

/// Per-day action counts over the whole chain, verified once.
pub fn throughput_by_day(chain: &[AuditRecord]) -> Result<BTreeMap<u64, u64>, MetricsError> {
    verify_chain(chain).map_err(MetricsError::UnverifiedChain)?;
    let mut counts = BTreeMap::new();
    for record in chain {
        *counts.entry(record.timestamp).or_insert(0) += 1;
    }
    Ok(counts)
}

/// Everything `service_summary` needs from a finished run.
#[derive(Debug, Clone)]
pub struct RunRecords<'a> {
    pub horizon_days: u64,
    /// Requested hospital orders, indexed [day][hospital][drug].
    pub requested: &'a [Vec<Vec<u64>>],
    /// Fulfilled quantities, indexed [day][hospital][drug].
    pub fulfilled: &'a [Vec<Vec<u64>>],
    /// Regional allocations, indexed [day][region][drug].
    pub allocations: &'a [Vec<Vec<u64>>],
    /// Severity weights w_r = active cases x criticality (summed over
    /// drugs), indexed [day][region].
    pub severity_weights: &'a [Vec<f64>],
    /// End-of-day hospital inventories, indexed [day][hospital][drug].
    pub inventories: &'a [Vec<Vec<u64>>],
    /// Hospital buffer targets, indexed [hospital][drug].
    pub buffers: &'a [Vec<u64>],
    pub policy_fallbacks: u64,
    pub policy_clamps: u64,
    /// Days with a verified snapshot commit.
    pub verified_days: u64,
}

/// Per (hospital, drug) stockout summary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StockoutCount {
    pub hospital: u32,
    pub drug: u32,
    pub days: u64,
    pub episodes: Vec<StockoutEpisode>,
}

/// One day's metric row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayMetrics {
    pub day: u64,
    /// Fulfillment efficiency; absent on no-demand days.
    pub eta: Option<f64>,
    pub throughput: u64,
    /// Mean per-region fairness deviation; absent on undefined days.
    pub mean_delta: Option<f64>,
    /// Per-region deviations when defined.
    pub delta: Option<Vec<f64>>,
}

/// The full machine-readable report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    /// Percent of requested units fulfilled on time over the run.
    pub service_level: f64,
    /// Exact complement of the service level.
    pub unfulfilled_pct: f64,
    pub per_day: Vec<DayMetrics>,
    pub stockouts: Vec<StockoutCount>,
    pub no_demand_days: u64,
    pub undefined_fairness_days: u64,
    pub policy_fallbacks: u64,
    pub policy_clamps: u64,
    /// Fraction of days whose snapshot verified end-to-end.
    pub auditability_pass_rate: f64,
}

/// Aggregates the five evaluation metrics plus service-level summaries.
///
/// Every day in the horizon must appear in the audit chain (as a commit or a
/// rejection); otherwise the logs are not auditable and the computation is
/// refused.
pub fn service_summary(
    records: &RunRecords<'_>,
    chain: &[AuditRecord],
    theta_frac: f64,
) -> Result<MetricsReport, MetricsError> {
    let days = records.horizon_days;
    for series in [
        records.requested.len(),
        records.fulfilled.len(),
        records.allocations.len(),
        records.severity_weights.len(),
        records.inventories.len(),
    ] {
        if series != days as usize {
            return Err(MetricsError::TruncatedLogs(format!(
                "expected {days} days of logs, got {series}"
            )));
        }
    }
    let per_day_throughput = throughput_by_day(chain)?;
    let mut audited_days = vec![false; days as usize];
    for record in chain {
        if matches!(record.action, AuditAction::SnapshotCommit | AuditAction::SnapshotReject)
            && (record.timestamp as usize) < audited_days.len()
        {
            audited_days[record.timestamp as usize] = true;
        }
    }
    if let Some(missing) = audited_days.iter().position(|&seen| !seen) {
        return Err(MetricsError::MissingAuditDay(missing as u64));
    }

    let mut total_requested: u64 = 0;
    let mut total_fulfilled: u64 = 0;
    let mut per_day = Vec::with_capacity(days as usize);
    let mut no_demand_days = 0;
    let mut undefined_fairness_days = 0;
    for day in 0..days as usize {
        let requested: Vec<u64> =
            records.requested[day].iter().map(|row| row.iter().sum()).collect();
        let fulfilled: Vec<u64> =
            records.fulfilled[day].iter().map(|row| row.iter().sum()).collect();
        total_requested += requested.iter().sum::<u64>();
        total_fulfilled += fulfilled.iter().sum::<u64>();
        let eta = fulfillment_efficiency(&fulfilled, &requested);
        if eta.is_none() {
            no_demand_days += 1;
        }
        let allocation: Vec<u64> =
            records.allocations[day].iter().map(|row| row.iter().sum()).collect();
        let (delta, mean_delta) =
            match fairness_deviation(&allocation, &records.severity_weights[day]) {
                FairnessDay::Defined(delta) => {
                    let mean = delta.iter().sum::<f64>() / delta.len() as f64;
                    (Some(delta), Some(mean))
                }
                FairnessDay::BothZero => (Some(Vec::new()), Some(0.0)),
                FairnessDay::OneSidedZero => {
                    undefined_fairness_days += 1;
                    (None, None)
                }
            };
        per_day.push(DayMetrics {
            day: day as u64,
            eta,
            throughput: per_day_throughput.get(&(day as u64)).copied().unwrap_or(0),
            mean_delta,
            delta,
        });
    }

    let mut stockouts = Vec::new();
    let hospitals = records.buffers.len();
    for k in 0..hospitals {
        for d in 0..records.buffers[k].len() {
            let buffer = records.buffers[k][d];
            if buffer == 0 {
                continue;
            }
            let theta = ((buffer as f64 * theta_frac).ceil() as u64).min(buffer - 1).max(1);
            let series: Vec<u64> = (0..days as usize)
                .map(|day| records.inventories[day][k][d])
                .collect();
            let episodes = resilience(&series, theta, buffer)?;
            let below_days = series.iter().filter(|&&level| level < theta).count() as u64;
            if !episodes.is_empty() || below_days > 0 {
                stockouts.push(StockoutCount {
                    hospital: k as u32,
                    drug: d as u32,
                    days: below_days,
                    episodes,
                });
            }
        }
    }

    // with zero requested units over a whole run there is nothing unfulfilled
    let ratio = if total_requested == 0 {
        1.0
    } else {
        total_fulfilled as f64 / total_requested as f64
    };
    Ok(MetricsReport {
        schema_version: 1,
        service_level: 100.0 * ratio,
        unfulfilled_pct: 100.0 * (1.0 - ratio),
        per_day,
        stockouts,
        no_demand_days,
        undefined_fairness_days,
        policy_fallbacks: records.policy_fallbacks,
        policy_clamps: records.policy_clamps,
        auditability_pass_rate: records.verified_days as f64 / days as f64,
    })
}
