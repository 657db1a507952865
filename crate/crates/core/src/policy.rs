//! Dynamic upload policies: when should the off-chain state go on-chain?
//!
//! A policy watches the accumulated window — funding and spend counts since
//! the last upload, plus its age in blocks — and decides at every block
//! boundary whether to upload. Uploading settles all pending spends and
//! starts a fresh epoch, so each epoch is charged the one-commit cost form.
//!
//! * `every_K` uploads on a fixed cadence.
//! * `max_K` defers while the accumulated window still satisfies the
//!   write-intensive condition (deferral keeps the eventual batch below the
//!   per-transfer base fee) but never longer than `K` blocks.
//! * `optimize_cost` defers until a pending spend exists and the window has
//!   stopped satisfying the condition, with no age bound.

use std::collections::BTreeSet;

use num_traits::Zero;
use thiserror::Error;

use crate::auth_state::AccountId;
use crate::chain_sim::{self, SimError, SimulationReport, UploadDecider, WindowView};
use crate::gas_model::{derive_write_intensive, GasSchedule, WriteIntensiveCondition};
use crate::rational::{rat, ratio, Rat};
use crate::workload::{window_stats, ClassifiedWorkload};

/// An upload policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    /// Upload only when deferral stops saving: a spend is pending and the
    /// accumulated window no longer satisfies the write-intensive condition.
    OptimizeCost,
    /// Like `OptimizeCost`, but never defer longer than this many blocks.
    /// `MaxDelay(0)` uploads every block.
    MaxDelay(u64),
    /// Upload every `k` blocks unconditionally (`k >= 1`).
    EveryK(u64),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PolicyError {
    #[error("unknown policy {0:?} (expected optimize_cost, max_K or every_K)")]
    UnknownPolicy(String),
    #[error("every_K requires K >= 1")]
    ZeroInterval,
    #[error("cannot evaluate a policy over an empty workload")]
    EmptyWorkload,
    #[error("selection fraction must be in (0, 1]")]
    InvalidFraction,
    #[error(transparent)]
    Sim(#[from] SimError),
}

impl Policy {
    /// Parses policy names like `optimize_cost`, `max_5`, `every_1`.
    pub fn parse(name: &str) -> Result<Policy, PolicyError> {
        let lower = name.trim().to_ascii_lowercase();
        if lower == "optimize_cost" || lower == "optimize" {
            return Ok(Policy::OptimizeCost);
        }
        if let Some(k) = lower.strip_prefix("max_") {
            if let Ok(k) = k.parse() {
                return Ok(Policy::MaxDelay(k));
            }
        }
        if let Some(k) = lower.strip_prefix("every_") {
            if let Ok(k) = k.parse::<u64>() {
                if k == 0 {
                    return Err(PolicyError::ZeroInterval);
                }
                return Ok(Policy::EveryK(k));
            }
        }
        Err(PolicyError::UnknownPolicy(name.to_string()))
    }

    pub fn name(&self) -> String {
        match self {
            Policy::OptimizeCost => "optimize_cost".to_string(),
            Policy::MaxDelay(k) => format!("max_{k}"),
            Policy::EveryK(k) => format!("every_{k}"),
        }
    }
}

/// One policy decision: should the accumulated window upload now?
pub fn decide_upload(
    window: &WindowView,
    policy: &Policy,
    condition: &WriteIntensiveCondition,
) -> bool {
    let writes = rat(window.funding_accumulated as i128);
    let reads = rat(window.spends_pending as i128);
    match policy {
        Policy::EveryK(k) => window.age >= *k,
        Policy::MaxDelay(k) => window.age >= *k || !condition.evaluate(&writes, &reads),
        Policy::OptimizeCost => window.spends_pending > 0 && !condition.evaluate(&writes, &reads),
    }
}

/// Adapter that lets a [`Policy`] drive the simulator.
#[derive(Debug, Clone)]
pub struct PolicyDecider {
    policy: Policy,
    condition: WriteIntensiveCondition,
}

impl PolicyDecider {
    pub fn new(policy: Policy, schedule: &GasSchedule) -> PolicyDecider {
        PolicyDecider {
            policy,
            condition: derive_write_intensive(schedule, 1),
        }
    }
}

impl UploadDecider for PolicyDecider {
    fn should_upload(&mut self, window: &WindowView) -> bool {
        decide_upload(window, &self.policy, &self.condition)
    }
}

/// Outcome of running one policy over one workload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyOutcome {
    pub policy: Policy,
    /// Gas per transfer divided by the base fee.
    pub normalized_cost: Rat,
    /// Mean spend settlement delay in blocks.
    pub average_delay: Rat,
    /// Largest spend settlement delay observed.
    pub max_delay: u64,
    /// Share of recipient accounts whose own rates satisfy the
    /// write-intensive condition.
    pub write_intensive_fraction: Rat,
}

/// Drives the epoch-settled simulator over `w` with `policy` deciding the
/// uploads.
pub fn evaluate_policy(
    w: &ClassifiedWorkload,
    policy: Policy,
    schedule: &GasSchedule,
) -> Result<PolicyOutcome, PolicyError> {
    if w.is_empty() {
        return Err(PolicyError::EmptyWorkload);
    }
    if let Policy::EveryK(0) = policy {
        return Err(PolicyError::ZeroInterval);
    }
    let mut decider = PolicyDecider::new(policy, schedule);
    let report = chain_sim::run_epochs(w.requests(), schedule, &mut decider)?;
    Ok(outcome_from_report(w, policy, schedule, &report))
}

fn outcome_from_report(
    w: &ClassifiedWorkload,
    policy: Policy,
    schedule: &GasSchedule,
    report: &SimulationReport,
) -> PolicyOutcome {
    PolicyOutcome {
        policy,
        normalized_cost: report.normalized_cost(schedule),
        average_delay: report.mean_spend_delay(),
        max_delay: report.max_spend_delay(),
        write_intensive_fraction: write_intensive_fraction(w, schedule),
    }
}

/// Per-recipient funding and spend rates per block over the workload span.
pub fn account_rates(w: &ClassifiedWorkload) -> Vec<(AccountId, Rat, Rat)> {
    let Some((first, last)) = w.span() else {
        return Vec::new();
    };
    let span = (last - first + 1) as i128;
    let counts = account_counts(w);
    counts
        .into_iter()
        .map(|(a, nw, nr)| (a, ratio(nw as i128, span), ratio(nr as i128, span)))
        .collect()
}

fn account_counts(w: &ClassifiedWorkload) -> Vec<(AccountId, u64, u64)> {
    let mut counts: std::collections::BTreeMap<AccountId, (u64, u64)> =
        w.receivers().iter().map(|a| (*a, (0u64, 0u64))).collect();
    for r in w.requests() {
        match r.kind {
            crate::chain_sim::TxKind::Funding => {
                if let Some(c) = counts.get_mut(&r.receiver) {
                    c.0 += 1;
                }
            }
            crate::chain_sim::TxKind::Spend => {
                if let Some(c) = counts.get_mut(&r.sender) {
                    c.1 += 1;
                }
            }
        }
    }
    counts
        .into_iter()
        .map(|(a, (nw, nr))| (a, nw, nr))
        .collect()
}

/// Share of recipient accounts whose per-block rates satisfy the
/// write-intensive condition for this schedule.
pub fn write_intensive_fraction(w: &ClassifiedWorkload, schedule: &GasSchedule) -> Rat {
    let rates = account_rates(w);
    if rates.is_empty() {
        return rat(0);
    }
    let condition = derive_write_intensive(schedule, 1);
    let hits = rates
        .iter()
        .filter(|(_, nw, nr)| condition.evaluate(nw, nr))
        .count();
    ratio(hits as i128, rates.len() as i128)
}

/// Restricts `w` to the top `fraction` of recipients ranked by their
/// funding-to-spend ratio (descending; spend-free accounts first, ties by
/// funding count then address).
pub fn select_write_intensive(
    w: &ClassifiedWorkload,
    fraction: Rat,
) -> Result<ClassifiedWorkload, PolicyError> {
    if fraction <= rat(0) || fraction > rat(1) {
        return Err(PolicyError::InvalidFraction);
    }
    if w.receivers().is_empty() {
        return Err(PolicyError::EmptyWorkload);
    }
    let mut ranked = account_counts(w);
    ranked.sort_by(|(addr_a, nw_a, nr_a), (addr_b, nw_b, nr_b)| {
        // nw_a/nr_a vs nw_b/nr_b descending, cross-multiplied to stay
        // exact; nr == 0 ranks above everything.
        let ord = match (*nr_a == 0, *nr_b == 0) {
            (true, true) => std::cmp::Ordering::Equal,
            (true, false) => std::cmp::Ordering::Less,
            (false, true) => std::cmp::Ordering::Greater,
            (false, false) => {
                let lhs = *nw_a as u128 * *nr_b as u128;
                let rhs = *nw_b as u128 * *nr_a as u128;
                rhs.cmp(&lhs)
            }
        };
        ord.then(nw_b.cmp(nw_a)).then(addr_a.cmp(addr_b))
    });
    let count = (fraction * rat(ranked.len() as i128)).ceil().to_integer() as usize;
    let keep: BTreeSet<AccountId> = ranked.into_iter().take(count).map(|(a, _, _)| a).collect();
    Ok(w.restrict_to(&keep))
}

/// Windowed closed-form sweep row: amortized batched and off-chain gas when
/// statistics are recomputed per `window` blocks and the digest uploads once
/// per window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepRow {
    pub window: u64,
    pub batched_amortized: i128,
    pub off_chain_amortized: i128,
}

/// Computes [`SweepRow`]s for each window size in `windows`, using
/// [`window_stats`] at that size and the closed forms with one upload per
/// window.
pub fn sweep(
    w: &ClassifiedWorkload,
    windows: impl IntoIterator<Item = u64>,
    schedule: &GasSchedule,
) -> Result<Vec<SweepRow>, crate::gas_model::CostError> {
    use crate::gas_model::{cost_batched, cost_off_chain, WorkloadShape};
    let mut rows = Vec::new();
    for k in windows {
        let (writes, reads) = window_stats(w, k);
        if (writes + reads).is_zero() {
            continue;
        }
        let shape = WorkloadShape::new(writes, reads, k, k)?;
        rows.push(SweepRow {
            window: k,
            batched_amortized: cost_batched(&shape, schedule)?.amortized_gas(),
            off_chain_amortized: cost_off_chain(&shape, schedule)?.amortized_gas(),
        });
    }
    Ok(rows)
}
