//! Deterministic block-by-block simulator with an itemized gas meter.
//!
//! [`Simulation::run`] executes an ordered transfer trace under one of the
//! three modes and books every unit of gas to the block whose transaction
//! consumed it, keyed by component (base fees, calldata, hashes, and so on).
//! It is the independent oracle for the closed forms in [`crate::gas_model`]:
//! on integer workloads the simulated total must match the formula to the
//! gas unit.
//!
//! In off-chain mode, funding transfers append delta entries to a real
//! [`crate::auth_state::AuthenticatedState`]; whenever the upload decider
//! fires at a block boundary, the window is sealed, verified by the on-chain
//! side, and every spend that arrived since the previous upload settles with
//! a full Merkle proof. The commit log grows across the run, so a settlement
//! after `B` sealed commits carries a `(depth + B)`-level proof.
//!
//! Policy evaluation uses [`run_epochs`] instead: every upload settles all
//! pending spends and compacts the log, so each epoch is independently
//! charged with single-commit proofs.

use std::collections::{BTreeMap, BTreeSet};

use num_traits::Signed;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auth_state::{init_state, AccountId, AuthError, DeltaEntry, OnChainVerifier};
use crate::gas_model::{CostReport, GasSchedule, Mode};
use crate::meter::GasBreakdown;
use crate::rational::{rat, ratio, Rat};

/// Workload role of a transfer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxKind {
    /// Institution → recipient credit.
    Funding,
    /// Recipient → anyone transfer out.
    Spend,
}

/// One Ether transfer in a trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransferRequest {
    pub sender: AccountId,
    pub receiver: AccountId,
    /// Amount in wei; strictly positive.
    pub value: u128,
    pub block: u64,
    pub kind: TxKind,
}

/// What the upload decider sees at a block boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowView {
    /// Funding transfers accumulated since the last upload.
    pub funding_accumulated: u64,
    /// Spends waiting for settlement.
    pub spends_pending: u64,
    /// Blocks since the last upload, counting the one just ended.
    pub age: u64,
}

/// Decides at each block boundary whether to send the upload transaction.
pub trait UploadDecider {
    fn should_upload(&mut self, window: &WindowView) -> bool;
}

impl<F: FnMut(&WindowView) -> bool> UploadDecider for F {
    fn should_upload(&mut self, window: &WindowView) -> bool {
        self(window)
    }
}

/// Uploads every `interval` blocks regardless of window contents.
#[derive(Debug, Clone, Copy)]
pub struct EveryBlocks {
    pub interval: u64,
}

impl EveryBlocks {
    pub fn new(interval: u64) -> EveryBlocks {
        assert!(interval >= 1, "upload interval must be at least one block");
        EveryBlocks { interval }
    }
}

impl UploadDecider for EveryBlocks {
    fn should_upload(&mut self, window: &WindowView) -> bool {
        window.age >= self.interval
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("trace is not sorted by block at position {position}")]
    UnsortedTrace { position: usize },
    #[error("transfer at position {position} has zero value")]
    ZeroValue { position: usize },
    #[error("failed to initialize the off-chain state: {0}")]
    Setup(#[from] AuthError),
    #[error("spend by unknown sender {sender} at block {block}")]
    UnknownSender { sender: AccountId, block: u64 },
    #[error("spend by {sender} at block {block} for {value} failed: {source}")]
    SpendFailed {
        sender: AccountId,
        block: u64,
        value: u128,
        source: AuthError,
    },
    #[error("funding transfer at block {block} rejected: {source}")]
    FundingFailed { block: u64, source: AuthError },
}

/// Gas consumed inside one block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockGas {
    pub block: u64,
    pub gas: GasBreakdown,
}

/// When a transfer actually executed relative to its arrival.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelayRecord {
    pub kind: TxKind,
    pub sender: AccountId,
    pub block: u64,
    pub executed_block: u64,
    pub delay: u64,
}

/// The simulator's full output: per-block itemized gas, totals, and the
/// delay experienced by every transfer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub mode: Mode,
    pub per_block: Vec<BlockGas>,
    pub totals: GasBreakdown,
    pub total_gas: u128,
    pub transfer_count: u64,
    pub delays: Vec<DelayRecord>,
}

impl SimulationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Mean settlement delay over spends; zero when there are none.
    pub fn mean_spend_delay(&self) -> Rat {
        let mut total = 0u64;
        let mut count = 0i128;
        for d in self.delays.iter().filter(|d| d.kind == TxKind::Spend) {
            total += d.delay;
            count += 1;
        }
        if count == 0 {
            rat(0)
        } else {
            ratio(total as i128, count)
        }
    }

    pub fn max_spend_delay(&self) -> u64 {
        self.delays
            .iter()
            .filter(|d| d.kind == TxKind::Spend)
            .map(|d| d.delay)
            .max()
            .unwrap_or(0)
    }

    /// Gas per transfer divided by the base fee.
    pub fn normalized_cost(&self, s: &GasSchedule) -> Rat {
        ratio(
            self.total_gas as i128,
            self.transfer_count as i128 * s.base_fee as i128,
        )
    }
}

/// Signed gas difference between a simulated run and a closed-form report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleComparison {
    pub simulated: u128,
    pub expected: Rat,
    pub difference: Rat,
    pub pass: bool,
}

/// Compares a simulated total against a closed-form total at `tolerance`
/// gas. Integer workloads are expected to match with tolerance zero.
pub fn oracle_compare(
    report: &SimulationReport,
    expected: &CostReport,
    tolerance: u64,
) -> OracleComparison {
    let difference = rat(report.total_gas as i128) - expected.total;
    let pass = difference.abs() <= rat(tolerance as i128);
    OracleComparison {
        simulated: report.total_gas,
        expected: expected.total,
        difference,
        pass,
    }
}

/// A configured simulator.
#[derive(Debug, Clone)]
pub struct Simulation<'s> {
    schedule: &'s GasSchedule,
    initial_accounts: Vec<(AccountId, u128)>,
}

impl<'s> Simulation<'s> {
    pub fn new(schedule: &'s GasSchedule) -> Simulation<'s> {
        Simulation {
            schedule,
            initial_accounts: Vec::new(),
        }
    }

    /// Seeds the off-chain state with pre-funded accounts (only meaningful
    /// in off-chain mode).
    pub fn with_initial_accounts(mut self, accounts: Vec<(AccountId, u128)>) -> Simulation<'s> {
        self.initial_accounts = accounts;
        self
    }

    /// Executes `trace` under `mode`, consulting `decider` at every block
    /// boundary in batched and off-chain modes.
    pub fn run(
        &self,
        trace: &[TransferRequest],
        mode: Mode,
        decider: &mut dyn UploadDecider,
    ) -> Result<SimulationReport, SimError> {
        validate_trace(trace)?;
        match mode {
            Mode::Dedicated => self.run_dedicated(trace),
            Mode::Batched => self.run_batched(trace, decider),
            Mode::OffChain => self.run_off_chain(trace, decider),
        }
    }

    fn run_dedicated(&self, trace: &[TransferRequest]) -> Result<SimulationReport, SimError> {
        let mut rb = ReportBuilder::new(Mode::Dedicated, trace.len());
        for r in trace {
            rb.book(r.block, base_fee_only(self.schedule));
            rb.delay(r, r.block);
        }
        Ok(rb.finish())
    }

    fn run_batched(
        &self,
        trace: &[TransferRequest],
        decider: &mut dyn UploadDecider,
    ) -> Result<SimulationReport, SimError> {
        let s = self.schedule;
        let mut rb = ReportBuilder::new(Mode::Batched, trace.len());
        let Some((first, last)) = trace_span(trace) else {
            return Ok(rb.finish());
        };
        let mut i = 0;
        let mut window: Vec<TransferRequest> = Vec::new();
        let mut last_upload = first - 1;
        for h in first..=last {
            while i < trace.len() && trace[i].block == h {
                let r = trace[i];
                match r.kind {
                    TxKind::Funding => window.push(r),
                    // Spends touch on-chain state only, so each one is an
                    // ordinary dedicated transaction.
                    TxKind::Spend => {
                        rb.book(h, base_fee_only(s));
                        rb.delay(&r, h);
                    }
                }
                i += 1;
            }
            let view = WindowView {
                funding_accumulated: window.len() as u64,
                spends_pending: 0,
                age: h - last_upload,
            };
            if decider.should_upload(&view) || h == last {
                self.dispatch_batch(&mut rb, &mut window, h);
                last_upload = h;
            }
        }
        Ok(rb.finish())
    }

    /// One dispatcher transaction carrying every buffered funding request.
    fn dispatch_batch(&self, rb: &mut ReportBuilder, window: &mut Vec<TransferRequest>, h: u64) {
        if window.is_empty() {
            return;
        }
        let s = self.schedule;
        let n = window.len() as u128;
        rb.book(
            h,
            GasBreakdown {
                base_fee: s.base_fee as u128,
                calldata: n * s.calldata_byte as u128 * (s.addr_bytes + s.value_bytes_m2) as u128,
                internal_transfer: n * s.internal_transfer as u128,
                ..GasBreakdown::default()
            },
        );
        for r in window.drain(..) {
            rb.delay(&r, h);
        }
    }

    fn run_off_chain(
        &self,
        trace: &[TransferRequest],
        decider: &mut dyn UploadDecider,
    ) -> Result<SimulationReport, SimError> {
        let s = self.schedule;
        let mut rb = ReportBuilder::new(Mode::OffChain, trace.len());
        let Some((first, last)) = trace_span(trace) else {
            return Ok(rb.finish());
        };
        let depth = s.base_tree_depth as u32;
        let mut state = init_state(&self.initial_accounts, depth)?;
        let mut verifier = OnChainVerifier::new(state.digest(), s.clone());
        let mut settled: BTreeSet<AccountId> = BTreeSet::new();
        let mut spend_queue: Vec<TransferRequest> = Vec::new();
        let mut funding_window: Vec<TransferRequest> = Vec::new();
        let mut last_upload = first - 1;
        let mut i = 0;

        for h in first..=last {
            while i < trace.len() && trace[i].block == h {
                let r = trace[i];
                match r.kind {
                    TxKind::Funding if settled.contains(&r.receiver) => {
                        // The recipient already settled on-chain, so this is
                        // an ordinary transfer.
                        verifier.credit(&r.receiver, r.value);
                        rb.book(h, base_fee_only(s));
                        rb.delay(&r, h);
                    }
                    TxKind::Funding => {
                        state
                            .append_delta(DeltaEntry {
                                receiver: r.receiver,
                                value: r.value,
                                block: h,
                            })
                            .map_err(|source| SimError::FundingFailed { block: h, source })?;
                        funding_window.push(r);
                    }
                    TxKind::Spend if settled.contains(&r.sender) => {
                        verifier
                            .transfer_on_chain(&r.sender, &r.receiver, r.value)
                            .map_err(|source| SimError::SpendFailed {
                                sender: r.sender,
                                block: h,
                                value: r.value,
                                source,
                            })?;
                        rb.book(h, base_fee_only(s));
                        rb.delay(&r, h);
                    }
                    TxKind::Spend => {
                        if !state.knows_account(&r.sender) {
                            return Err(SimError::UnknownSender {
                                sender: r.sender,
                                block: h,
                            });
                        }
                        spend_queue.push(r);
                    }
                }
                i += 1;
            }
            let view = WindowView {
                funding_accumulated: funding_window.len() as u64,
                spends_pending: spend_queue.len() as u64,
                age: h - last_upload,
            };
            if decider.should_upload(&view) {
                self.upload(
                    &mut rb,
                    &mut state,
                    &mut verifier,
                    &mut settled,
                    &mut funding_window,
                    &mut spend_queue,
                    h,
                )?;
                last_upload = h;
            }
        }
        // Anything still pending settles in a final upload at the last
        // block, so no transfer is left unexecuted.
        self.upload(
            &mut rb,
            &mut state,
            &mut verifier,
            &mut settled,
            &mut funding_window,
            &mut spend_queue,
            last,
        )?;
        Ok(rb.finish())
    }

    /// Seals the window, verifies the commit on-chain and settles every
    /// queued spend. Empty windows cost nothing.
    #[allow(clippy::too_many_arguments)]
    fn upload(
        &self,
        rb: &mut ReportBuilder,
        state: &mut crate::auth_state::AuthenticatedState,
        verifier: &mut OnChainVerifier,
        settled: &mut BTreeSet<AccountId>,
        funding_window: &mut Vec<TransferRequest>,
        spend_queue: &mut Vec<TransferRequest>,
        h: u64,
    ) -> Result<(), SimError> {
        if state.pending_len() == 0 && spend_queue.is_empty() {
            return Ok(());
        }
        let commit = state.seal_block();
        let gas = verifier
            .verify_commit(&commit)
            .expect("sealed commit verifies against its own digest");
        rb.book(h, gas);
        rb.book(h, base_fee_only(self.schedule));

        for r in spend_queue.drain(..) {
            if settled.contains(&r.sender) {
                // Settled earlier in this very drain; executes on-chain.
                verifier
                    .transfer_on_chain(&r.sender, &r.receiver, r.value)
                    .map_err(|source| SimError::SpendFailed {
                        sender: r.sender,
                        block: r.block,
                        value: r.value,
                        source,
                    })?;
                rb.book(h, base_fee_only(self.schedule));
                rb.delay(&r, h);
                continue;
            }
            let mut proof =
                state
                    .prove_account(&r.sender)
                    .map_err(|source| SimError::SpendFailed {
                        sender: r.sender,
                        block: r.block,
                        value: r.value,
                        source,
                    })?;
            proof.authorize(&r.receiver, r.value, &verifier.digest());
            let gas = verifier
                .settle_account(&proof, &r.receiver, r.value)
                .map_err(|source| SimError::SpendFailed {
                    sender: r.sender,
                    block: r.block,
                    value: r.value,
                    source,
                })?;
            rb.book(h, gas);
            rb.delay(&r, h);
            settled.insert(r.sender);
        }
        for r in funding_window.drain(..) {
            rb.delay(&r, h);
        }
        Ok(())
    }
}

/// Convenience wrapper over [`Simulation::run`] with no initial accounts.
pub fn run(
    trace: &[TransferRequest],
    mode: Mode,
    schedule: &GasSchedule,
    decider: &mut dyn UploadDecider,
) -> Result<SimulationReport, SimError> {
    Simulation::new(schedule).run(trace, mode, decider)
}

/// Off-chain execution in which every upload settles all pending spends and
/// starts a fresh epoch, so each epoch is charged with single-commit
/// proofs. This is how the dynamic upload policies account cost and delay;
/// the Merkle machinery itself is exercised by [`Simulation::run`].
pub(crate) fn run_epochs(
    trace: &[TransferRequest],
    schedule: &GasSchedule,
    decider: &mut dyn UploadDecider,
) -> Result<SimulationReport, SimError> {
    validate_trace(trace)?;
    let s = schedule;
    let mut rb = ReportBuilder::new(Mode::OffChain, trace.len());
    let Some((first, last)) = trace_span(trace) else {
        return Ok(rb.finish());
    };
    let mut books = EpochBooks::default();
    let mut last_upload = first - 1;
    let mut i = 0;

    for h in first..=last {
        while i < trace.len() && trace[i].block == h {
            let r = trace[i];
            match r.kind {
                TxKind::Funding if books.settled.contains(&r.receiver) => {
                    *books.on_chain.entry(r.receiver).or_insert(0) += r.value;
                    rb.book(h, base_fee_only(s));
                    rb.delay(&r, h);
                }
                TxKind::Funding => {
                    *books.off_chain.entry(r.receiver).or_insert(0) += r.value;
                    books.funding_window.push(r);
                }
                TxKind::Spend => {
                    if !books.off_chain.contains_key(&r.sender)
                        && !books.settled.contains(&r.sender)
                    {
                        return Err(SimError::UnknownSender {
                            sender: r.sender,
                            block: h,
                        });
                    }
                    books.spend_queue.push(r);
                }
            }
            i += 1;
        }
        let view = WindowView {
            funding_accumulated: books.funding_window.len() as u64,
            spends_pending: books.spend_queue.len() as u64,
            age: h - last_upload,
        };
        if decider.should_upload(&view) {
            books.flush(&mut rb, s, h)?;
            last_upload = h;
        }
    }
    books.flush(&mut rb, s, last)?;
    Ok(rb.finish())
}

/// Balance and window bookkeeping for epoch-settled runs.
#[derive(Default)]
struct EpochBooks {
    off_chain: BTreeMap<AccountId, u128>,
    on_chain: BTreeMap<AccountId, u128>,
    settled: BTreeSet<AccountId>,
    funding_window: Vec<TransferRequest>,
    spend_queue: Vec<TransferRequest>,
}

impl EpochBooks {
    /// Uploads the epoch at block `h`: one commit carrying the window's
    /// entries, then every pending spend settles with a depth+1 proof and
    /// its account moves on-chain. Empty epochs cost nothing.
    fn flush(&mut self, rb: &mut ReportBuilder, s: &GasSchedule, h: u64) -> Result<(), SimError> {
        if self.funding_window.is_empty() && self.spend_queue.is_empty() {
            return Ok(());
        }
        let n_f = self.funding_window.len() as u128;
        let depth = s.base_tree_depth as u128;
        let mut gas = GasBreakdown {
            base_fee: s.base_fee as u128,
            calldata: (n_f * s.delta_entry_bytes() as u128 + s.digest_bytes as u128)
                * s.calldata_byte as u128,
            digest_update: s.digest_update as u128,
            hash: n_f * s.hash_op as u128,
            ..GasBreakdown::default()
        };
        for r in self.spend_queue.drain(..) {
            if self.settled.contains(&r.sender) {
                let balance = self.on_chain.entry(r.sender).or_insert(0);
                if *balance < r.value {
                    return Err(SimError::SpendFailed {
                        sender: r.sender,
                        block: r.block,
                        value: r.value,
                        source: AuthError::Overdraft {
                            available: *balance,
                            requested: r.value,
                        },
                    });
                }
                *balance -= r.value;
                *self.on_chain.entry(r.receiver).or_insert(0) += r.value;
                gas.base_fee += s.base_fee as u128;
                rb.delay(&r, h);
                continue;
            }
            let balance = self.off_chain.remove(&r.sender).unwrap_or(0);
            if balance < r.value {
                return Err(SimError::SpendFailed {
                    sender: r.sender,
                    block: r.block,
                    value: r.value,
                    source: AuthError::Overdraft {
                        available: balance,
                        requested: r.value,
                    },
                });
            }
            gas.calldata +=
                s.calldata_byte as u128 * (s.addr_bytes + s.payload_bytes_m3 + s.sig_bytes) as u128;
            gas.sig_verify += s.sig_verify as u128;
            gas.internal_transfer += s.internal_transfer as u128;
            gas.proof_bytes += s.calldata_byte as u128 * (depth + 1) * s.digest_bytes as u128;
            gas.hash += (depth + 1) * s.hash_op as u128;
            *self.on_chain.entry(r.sender).or_insert(0) += balance - r.value;
            *self.on_chain.entry(r.receiver).or_insert(0) += r.value;
            self.settled.insert(r.sender);
            rb.delay(&r, h);
        }
        for r in self.funding_window.drain(..) {
            rb.delay(&r, h);
        }
        rb.book(h, gas);
        Ok(())
    }
}

fn validate_trace(trace: &[TransferRequest]) -> Result<(), SimError> {
    for (position, pair) in trace.windows(2).enumerate() {
        if pair[1].block < pair[0].block {
            return Err(SimError::UnsortedTrace {
                position: position + 1,
            });
        }
    }
    if let Some(position) = trace.iter().position(|r| r.value == 0) {
        return Err(SimError::ZeroValue { position });
    }
    Ok(())
}

fn trace_span(trace: &[TransferRequest]) -> Option<(u64, u64)> {
    match (trace.first(), trace.last()) {
        (Some(f), Some(l)) => Some((f.block, l.block)),
        _ => None,
    }
}

fn base_fee_only(s: &GasSchedule) -> GasBreakdown {
    GasBreakdown {
        base_fee: s.base_fee as u128,
        ..GasBreakdown::default()
    }
}

struct ReportBuilder {
    mode: Mode,
    per_block: BTreeMap<u64, GasBreakdown>,
    delays: Vec<DelayRecord>,
    transfer_count: u64,
}

impl ReportBuilder {
    fn new(mode: Mode, transfers: usize) -> ReportBuilder {
        ReportBuilder {
            mode,
            per_block: BTreeMap::new(),
            delays: Vec::new(),
            transfer_count: transfers as u64,
        }
    }

    fn book(&mut self, block: u64, gas: GasBreakdown) {
        *self.per_block.entry(block).or_default() += gas;
    }

    fn delay(&mut self, r: &TransferRequest, executed_block: u64) {
        self.delays.push(DelayRecord {
            kind: r.kind,
            sender: r.sender,
            block: r.block,
            executed_block,
            delay: executed_block - r.block,
        });
    }

    fn finish(self) -> SimulationReport {
        let mut totals = GasBreakdown::default();
        let per_block: Vec<BlockGas> = self
            .per_block
            .into_iter()
            .map(|(block, gas)| {
                totals += gas;
                BlockGas { block, gas }
            })
            .collect();
        SimulationReport {
            mode: self.mode,
            per_block,
            totals,
            total_gas: totals.total(),
            transfer_count: self.transfer_count,
            delays: self.delays,
        }
    }
}
