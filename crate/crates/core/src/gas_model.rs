//! Closed-form gas-cost calculators for the three execution modes.
//!
//! A [`WorkloadShape`] describes a span of `blocks` consecutive blocks that
//! carries `writes` funding transfers (institution → recipient) and `reads`
//! spend transfers (recipient → anyone), with the off-chain digest uploaded
//! every `upload_interval` blocks. Costs are computed exactly over rationals
//! and floored to integer gas only when a report is rendered.
//!
//! Two named schedule presets are shipped: `istanbul` (16 gas per calldata
//! byte) and `legacy` (68 gas per calldata byte). Everything else is
//! identical between them.

use std::collections::BTreeMap;
use std::fmt;

use num_integer::Integer;
use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rational::{floor_gas, rat, ratio, Rat};

/// Execution mode of a transfer workload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// One dedicated transaction per transfer, all state on-chain.
    Dedicated,
    /// Requests batched into dispatcher transactions, state on-chain.
    Batched,
    /// Requests batched, recipient state held off-chain behind a digest.
    OffChain,
}

impl Mode {
    pub fn parse(s: &str) -> Option<Mode> {
        match s.to_ascii_lowercase().as_str() {
            "m1" | "dedicated" => Some(Mode::Dedicated),
            "m2" | "batched" => Some(Mode::Batched),
            "m3" | "offchain" | "off-chain" => Some(Mode::OffChain),
            _ => None,
        }
    }

    /// Short label used in reports (`m1`, `m2`, `m3`).
    pub fn label(&self) -> &'static str {
        match self {
            Mode::Dedicated => "m1",
            Mode::Batched => "m2",
            Mode::OffChain => "m3",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("schedule field {0} must be a strictly positive integer")]
    NonPositive(&'static str),
    #[error("unknown schedule preset {0:?} (expected \"istanbul\" or \"legacy\")")]
    UnknownPreset(String),
    #[error("line {line}: unknown schedule key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: expected `key = integer`, got {text:?}")]
    Malformed { line: usize, text: String },
    #[error("schedule file is missing field {0}")]
    Missing(&'static str),
    #[error("schedule field {0} is set twice")]
    Duplicate(&'static str),
}

/// All gas constants of the cost model.
///
/// The unit-cost fields are gas amounts; the `*_bytes` fields are byte
/// lengths charged at `calldata_byte` gas each when they travel in a
/// transaction's data field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GasSchedule {
    /// Flat fee charged once per transaction.
    pub base_fee: u64,
    /// Gas per byte in the transaction data field.
    pub calldata_byte: u64,
    /// Gas per internal Ether transfer performed by a contract.
    pub internal_transfer: u64,
    /// Gas per Keccak-256 over two 32-byte words.
    pub hash_op: u64,
    /// Gas to overwrite the on-chain digest storage slot.
    pub digest_update: u64,
    /// Gas to verify one signature inside a contract.
    pub sig_verify: u64,
    /// Address length in bytes.
    pub addr_bytes: u64,
    /// Value payload bytes per request in batched mode.
    pub value_bytes_m2: u64,
    /// Payload bytes per request beyond the address in off-chain mode.
    pub payload_bytes_m3: u64,
    /// Signature length in bytes.
    pub sig_bytes: u64,
    /// Digest length in bytes.
    pub digest_bytes: u64,
    /// Depth of the base account tree.
    pub base_tree_depth: u64,
}

const SCHEDULE_FIELDS: &[&str] = &[
    "base_fee",
    "calldata_byte",
    "internal_transfer",
    "hash_op",
    "digest_update",
    "sig_verify",
    "addr_bytes",
    "value_bytes_m2",
    "payload_bytes_m3",
    "sig_bytes",
    "digest_bytes",
    "base_tree_depth",
];

impl GasSchedule {
    /// The post-Istanbul schedule: 16 gas per calldata byte.
    pub fn istanbul() -> GasSchedule {
        GasSchedule {
            base_fee: 21000,
            calldata_byte: 16,
            internal_transfer: 7500,
            hash_op: 222,
            digest_update: 5000,
            sig_verify: 6600,
            addr_bytes: 20,
            value_bytes_m2: 32,
            payload_bytes_m3: 36,
            sig_bytes: 65,
            digest_bytes: 32,
            base_tree_depth: 20,
        }
    }

    /// The pre-Istanbul schedule: 68 gas per calldata byte.
    pub fn legacy() -> GasSchedule {
        GasSchedule {
            calldata_byte: 68,
            ..GasSchedule::istanbul()
        }
    }

    /// Resolves a reserved preset name.
    pub fn preset(name: &str) -> Result<GasSchedule, ScheduleError> {
        match name.to_ascii_lowercase().as_str() {
            "istanbul" => Ok(GasSchedule::istanbul()),
            "legacy" => Ok(GasSchedule::legacy()),
            other => Err(ScheduleError::UnknownPreset(other.to_string())),
        }
    }

    /// Parses a schedule from `key = integer` lines.
    ///
    /// `#` starts a comment; blank lines are skipped; every field must be
    /// assigned exactly once.
    pub fn from_config_str(text: &str) -> Result<GasSchedule, ScheduleError> {
        let mut seen: BTreeMap<&'static str, u64> = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or(ScheduleError::Malformed {
                line,
                text: raw.to_string(),
            })?;
            let key = key.trim();
            let field = SCHEDULE_FIELDS
                .iter()
                .find(|f| **f == key)
                .copied()
                .ok_or_else(|| ScheduleError::UnknownKey {
                    line,
                    key: key.to_string(),
                })?;
            let value: u64 = value.trim().parse().map_err(|_| ScheduleError::Malformed {
                line,
                text: raw.to_string(),
            })?;
            if seen.insert(field, value).is_some() {
                return Err(ScheduleError::Duplicate(field));
            }
        }
        let get = |name: &'static str| seen.get(name).copied().ok_or(ScheduleError::Missing(name));
        let s = GasSchedule {
            base_fee: get("base_fee")?,
            calldata_byte: get("calldata_byte")?,
            internal_transfer: get("internal_transfer")?,
            hash_op: get("hash_op")?,
            digest_update: get("digest_update")?,
            sig_verify: get("sig_verify")?,
            addr_bytes: get("addr_bytes")?,
            value_bytes_m2: get("value_bytes_m2")?,
            payload_bytes_m3: get("payload_bytes_m3")?,
            sig_bytes: get("sig_bytes")?,
            digest_bytes: get("digest_bytes")?,
            base_tree_depth: get("base_tree_depth")?,
        };
        s.validate()?;
        Ok(s)
    }

    /// Checks the strict-positivity invariant on every field.
    pub fn validate(&self) -> Result<(), ScheduleError> {
        let fields: [(&'static str, u64); 12] = [
            ("base_fee", self.base_fee),
            ("calldata_byte", self.calldata_byte),
            ("internal_transfer", self.internal_transfer),
            ("hash_op", self.hash_op),
            ("digest_update", self.digest_update),
            ("sig_verify", self.sig_verify),
            ("addr_bytes", self.addr_bytes),
            ("value_bytes_m2", self.value_bytes_m2),
            ("payload_bytes_m3", self.payload_bytes_m3),
            ("sig_bytes", self.sig_bytes),
            ("digest_bytes", self.digest_bytes),
            ("base_tree_depth", self.base_tree_depth),
        ];
        for (name, value) in fields {
            if value == 0 {
                return Err(ScheduleError::NonPositive(name));
            }
        }
        Ok(())
    }

    /// Gas to dispatch one batched request: calldata for address plus value,
    /// then the internal transfer (8332 istanbul, 11036 legacy).
    pub fn batched_request_gas(&self) -> u64 {
        self.calldata_byte * (self.addr_bytes + self.value_bytes_m2) + self.internal_transfer
    }

    /// Serialized length of one delta entry (56 bytes on both presets).
    pub fn delta_entry_bytes(&self) -> u64 {
        self.addr_bytes + self.payload_bytes_m3
    }

    /// Gas to post one delta entry: its calldata plus one hash into the log
    /// (1118 istanbul, 4030 legacy).
    pub fn delta_write_gas(&self) -> u64 {
        self.calldata_byte * self.delta_entry_bytes() + self.hash_op
    }

    /// Gas per digest upload beyond the base fee: digest calldata plus the
    /// storage update (5512 istanbul, 7176 legacy).
    pub fn digest_upload_gas(&self) -> u64 {
        self.calldata_byte * self.digest_bytes + self.digest_update
    }

    /// Fixed gas per settlement: calldata for address, payload and
    /// signature, then signature verification and the internal transfer
    /// (16036 istanbul, 22328 legacy).
    pub fn settlement_header_gas(&self) -> u64 {
        self.calldata_byte * (self.addr_bytes + self.payload_bytes_m3 + self.sig_bytes)
            + self.sig_verify
            + self.internal_transfer
    }

    /// Proof path bytes charged for a settlement after `uploads` sealed
    /// commits: `(depth + B) * digest_bytes * B`.
    pub fn settlement_path_bytes(&self, uploads: &Rat) -> Rat {
        (rat(self.base_tree_depth as i128) + uploads) * rat(self.digest_bytes as i128) * uploads
    }

    /// Hash gas charged to re-walk a settlement proof: `(depth + B) * hash_op`.
    pub fn settlement_hash_gas(&self, uploads: &Rat) -> Rat {
        (rat(self.base_tree_depth as i128) + uploads) * rat(self.hash_op as i128)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CostError {
    #[error("degenerate workload: no transfers to amortize over")]
    DegenerateWorkload,
    #[error("batched mode needs at least one funding transfer in the span")]
    NoFundingTransfers,
    #[error("invalid workload shape: {0}")]
    InvalidShape(String),
}

/// A workload span: transfer counts, its length in blocks, and the digest
/// upload interval.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkloadShape {
    /// Funding transfers (institution → recipient) in the span.
    pub writes: Rat,
    /// Spend transfers (recipient → anyone) in the span.
    pub reads: Rat,
    /// Span length in blocks.
    pub blocks: u64,
    /// Blocks between digest uploads.
    pub upload_interval: u64,
    /// Round the upload count up to a whole number of uploads instead of
    /// using the exact rational `blocks / upload_interval`.
    pub whole_uploads: bool,
}

impl WorkloadShape {
    pub fn new(
        writes: Rat,
        reads: Rat,
        blocks: u64,
        upload_interval: u64,
    ) -> Result<Self, CostError> {
        if writes.is_negative() || reads.is_negative() {
            return Err(CostError::InvalidShape(
                "transfer counts must be non-negative".into(),
            ));
        }
        if blocks == 0 {
            return Err(CostError::InvalidShape(
                "span must cover at least one block".into(),
            ));
        }
        if upload_interval == 0 {
            return Err(CostError::InvalidShape(
                "upload interval must be at least one block".into(),
            ));
        }
        Ok(WorkloadShape {
            writes,
            reads,
            blocks,
            upload_interval,
            whole_uploads: false,
        })
    }

    /// Integer convenience constructor.
    pub fn from_ints(
        writes: u64,
        reads: u64,
        blocks: u64,
        upload_interval: u64,
    ) -> Result<Self, CostError> {
        WorkloadShape::new(
            rat(writes as i128),
            rat(reads as i128),
            blocks,
            upload_interval,
        )
    }

    pub fn with_whole_uploads(mut self) -> Self {
        self.whole_uploads = true;
        self
    }

    /// Number of digest uploads across the span.
    pub fn uploads(&self) -> Rat {
        let exact = ratio(self.blocks as i128, self.upload_interval as i128);
        if self.whole_uploads {
            rat(exact.ceil().to_integer())
        } else {
            exact
        }
    }

    pub fn transfers(&self) -> Rat {
        self.writes + self.reads
    }
}

/// Cost of a workload under one mode, exact and per transfer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostReport {
    pub mode: Mode,
    /// Total gas over the span, exact.
    pub total: Rat,
    /// Gas per transfer, exact.
    pub amortized: Rat,
    /// Amortized gas divided by the base fee.
    pub normalized: Rat,
}

impl CostReport {
    fn build(mode: Mode, total: Rat, transfers: Rat, schedule: &GasSchedule) -> CostReport {
        let amortized = total / transfers;
        let normalized = amortized / rat(schedule.base_fee as i128);
        CostReport {
            mode,
            total,
            amortized,
            normalized,
        }
    }

    /// Total gas floored to an integer.
    pub fn total_gas(&self) -> i128 {
        floor_gas(&self.total)
    }

    /// Amortized gas floored to an integer, the figure quoted in reports.
    pub fn amortized_gas(&self) -> i128 {
        floor_gas(&self.amortized)
    }
}

/// Dedicated mode: every transfer is a standalone transaction.
pub fn cost_dedicated(shape: &WorkloadShape, s: &GasSchedule) -> Result<CostReport, CostError> {
    let transfers = shape.transfers();
    if transfers.is_zero() {
        return Err(CostError::DegenerateWorkload);
    }
    let total = rat(s.base_fee as i128) * transfers;
    Ok(CostReport::build(Mode::Dedicated, total, transfers, s))
}

/// Batched mode: one dispatcher transaction per upload window carries all
/// funding transfers; spends remain dedicated transactions.
pub fn cost_batched(shape: &WorkloadShape, s: &GasSchedule) -> Result<CostReport, CostError> {
    let transfers = shape.transfers();
    if transfers.is_zero() {
        return Err(CostError::DegenerateWorkload);
    }
    if shape.writes.is_zero() {
        return Err(CostError::NoFundingTransfers);
    }
    let base = rat(s.base_fee as i128);
    let total = base * shape.uploads()
        + shape.writes * rat(s.batched_request_gas() as i128)
        + base * shape.reads;
    Ok(CostReport::build(Mode::Batched, total, transfers, s))
}

/// Off-chain mode: funding transfers post delta leaves to the hash log, the
/// digest is uploaded once per window, and each spend settles the sender's
/// balance on-chain with a Merkle proof.
pub fn cost_off_chain(shape: &WorkloadShape, s: &GasSchedule) -> Result<CostReport, CostError> {
    let transfers = shape.transfers();
    if transfers.is_zero() {
        return Err(CostError::DegenerateWorkload);
    }
    let base = rat(s.base_fee as i128);
    let uploads = shape.uploads();
    let total = base * uploads
        + shape.writes * rat(s.delta_write_gas() as i128)
        + rat(s.digest_upload_gas() as i128) * uploads
        + shape.reads * rat(s.settlement_header_gas() as i128)
        + shape.reads * rat(s.calldata_byte as i128) * s.settlement_path_bytes(&uploads)
        + shape.reads * s.settlement_hash_gas(&uploads);
    Ok(CostReport::build(Mode::OffChain, total, transfers, s))
}

/// Cost of `shape` under `mode`.
pub fn cost(shape: &WorkloadShape, s: &GasSchedule, mode: Mode) -> Result<CostReport, CostError> {
    match mode {
        Mode::Dedicated => cost_dedicated(shape, s),
        Mode::Batched => cost_batched(shape, s),
        Mode::OffChain => cost_off_chain(shape, s),
    }
}

/// The region of (writes, reads) space where off-chain execution beats the
/// per-transfer base fee, as `reads < (slope*writes - intercept) / denominator`
/// with `writes > intercept / slope`.
///
/// Coefficients are reduced integers derived symbolically from the same
/// schedule constants the off-chain cost formula uses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WriteIntensiveCondition {
    pub slope: i128,
    pub intercept: i128,
    pub denominator: i128,
}

impl WriteIntensiveCondition {
    /// Lower bound on the write count: `intercept / slope`.
    pub fn writes_min(&self) -> Rat {
        ratio(self.intercept, self.slope)
    }

    /// True iff both strict inequalities hold. Agrees exactly with
    /// `cost_off_chain(..).amortized < base_fee` on the same schedule and
    /// span for all non-negative rational inputs.
    pub fn evaluate(&self, writes: &Rat, reads: &Rat) -> bool {
        let margin = rat(self.slope) * writes - rat(self.intercept);
        margin.is_positive() && reads * rat(self.denominator) < margin
    }
}

impl fmt::Display for WriteIntensiveCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "reads < ({}*writes - {}) / {} and writes > {}",
            self.slope,
            self.intercept,
            self.denominator,
            crate::rational::format_fixed(&self.writes_min(), 2)
        )
    }
}

/// Derives the write-intensive condition for a span of `blocks` blocks with
/// per-block uploads, by solving `amortized off-chain cost < base_fee`
/// symbolically. No coefficient is hard-coded.
pub fn derive_write_intensive(s: &GasSchedule, blocks: u64) -> WriteIntensiveCondition {
    assert!(
        blocks >= 1,
        "the condition needs a span of at least one block"
    );
    let l = blocks as i128;
    let per_upload = (s.base_fee + s.digest_upload_gas()) as i128;
    let per_write = s.delta_write_gas() as i128;
    let proof_depth = s.base_tree_depth as i128 + l;
    let per_read = s.settlement_header_gas() as i128
        + s.calldata_byte as i128 * proof_depth * s.digest_bytes as i128 * l
        + proof_depth * s.hash_op as i128;

    // total < base*(writes+reads)
    //   <=>  (per_read - base)*reads < (base - per_write)*writes - per_upload*l
    let slope = s.base_fee as i128 - per_write;
    let intercept = per_upload * l;
    let denominator = per_read - s.base_fee as i128;
    let g = slope.gcd(&intercept).gcd(&denominator);
    let g = if g == 0 { 1 } else { g };
    WriteIntensiveCondition {
        slope: slope / g,
        intercept: intercept / g,
        denominator: denominator / g,
    }
}

/// Free-function form of [`WriteIntensiveCondition::evaluate`].
pub fn evaluate_condition(c: &WriteIntensiveCondition, writes: &Rat, reads: &Rat) -> bool {
    c.evaluate(writes, reads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::parse_decimal;
    use proptest::prelude::*;

    fn shape(nw: &str, nr: &str, l: u64, k: u64) -> WorkloadShape {
        WorkloadShape::new(parse_decimal(nw).unwrap(), parse_decimal(nr).unwrap(), l, k).unwrap()
    }

    #[test]
    fn preset_constants() {
        let i = GasSchedule::istanbul();
        let g = GasSchedule::legacy();
        assert_eq!(i.calldata_byte, 16);
        assert_eq!(g.calldata_byte, 68);
        assert_eq!(i.batched_request_gas(), 8332);
        assert_eq!(g.batched_request_gas(), 11036);
        assert_eq!(i.delta_write_gas(), 1118);
        assert_eq!(g.delta_write_gas(), 4030);
        assert_eq!(i.settlement_header_gas(), 16036);
        assert_eq!(g.settlement_header_gas(), 22328);
        assert_eq!(i.base_fee + i.digest_upload_gas(), 26512);
        assert_eq!(g.base_fee + g.digest_upload_gas(), 28176);
        // Schedule-consistency identities.
        assert_eq!(i.batched_request_gas(), i.calldata_byte * 52 + 7500);
        assert_eq!(i.delta_write_gas(), i.calldata_byte * 56 + 222);
        assert_eq!(g.delta_write_gas(), g.calldata_byte * 56 + 222);
        i.validate().unwrap();
        g.validate().unwrap();
    }

    #[test]
    fn schedule_config_round_trip() {
        let text = "\
# full schedule
base_fee = 21000
calldata_byte = 16
internal_transfer = 7500
hash_op = 222
digest_update = 5000
sig_verify = 6600
addr_bytes = 20
value_bytes_m2 = 32
payload_bytes_m3 = 36
sig_bytes = 65
digest_bytes = 32
base_tree_depth = 20
";
        assert_eq!(
            GasSchedule::from_config_str(text).unwrap(),
            GasSchedule::istanbul()
        );
        assert!(matches!(
            GasSchedule::from_config_str("base_fee = 21000\nbogus = 3"),
            Err(ScheduleError::UnknownKey { line: 2, .. })
        ));
        assert!(matches!(
            GasSchedule::from_config_str("base_fee = 21000"),
            Err(ScheduleError::Missing(_))
        ));
        let zeroed = text.replace("hash_op = 222", "hash_op = 0");
        assert_eq!(
            GasSchedule::from_config_str(&zeroed),
            Err(ScheduleError::NonPositive("hash_op"))
        );
    }

    #[test]
    fn dedicated_is_always_the_base_fee() {
        let s = GasSchedule::istanbul();
        let r = cost_dedicated(&shape("12.30", "34.76", 1, 1), &s).unwrap();
        assert_eq!(r.amortized, rat(21000));
        assert_eq!(r.amortized_gas(), 21000);

        let single = cost_dedicated(&shape("1", "0", 1, 1), &s).unwrap();
        assert_eq!(single.total, rat(21000));

        let r2 = cost_dedicated(&shape("4.65", "9.00", 1, 1), &s).unwrap();
        assert_eq!(r2.amortized_gas(), 21000);
    }

    #[test]
    fn batched_reproduces_the_case_studies() {
        let ist = GasSchedule::istanbul();
        let leg = GasSchedule::legacy();
        assert_eq!(
            cost_batched(&shape("12.30", "34.76", 1, 1), &ist)
                .unwrap()
                .amortized_gas(),
            18135
        );
        assert_eq!(
            cost_batched(&shape("12.30", "25.62", 1, 1), &leg)
                .unwrap()
                .amortized_gas(),
            18321
        );
        assert_eq!(
            cost_batched(&shape("59.64", "168.60", 5, 5), &ist)
                .unwrap()
                .amortized_gas(),
            17781
        );
        // One transfer at base fee plus the dispatch cost: 21000 + 16*52 + 7500.
        assert_eq!(
            cost_batched(&shape("1", "0", 1, 1), &ist)
                .unwrap()
                .amortized_gas(),
            29332
        );
    }

    #[test]
    fn off_chain_reproduces_the_case_studies() {
        let ist = GasSchedule::istanbul();
        let leg = GasSchedule::legacy();
        assert_eq!(
            cost_off_chain(&shape("12.30", "34.76", 1, 1), &ist)
                .unwrap()
                .amortized_gas(),
            24085
        );
        assert_eq!(
            cost_off_chain(&shape("4.65", "9.00", 1, 1), &ist)
                .unwrap()
                .amortized_gas(),
            23059
        );
        assert_eq!(
            cost_off_chain(&shape("12.30", "25.62", 1, 1), &leg)
                .unwrap()
                .amortized_gas(),
            51159
        );
        assert_eq!(
            cost_off_chain(&shape("59.64", "168.60", 5, 5), &ist)
                .unwrap()
                .amortized_gas(),
            23640
        );
        assert_eq!(
            cost_off_chain(&shape("6.70", "48.94", 5, 5), &ist)
                .unwrap()
                .amortized_gas(),
            28274
        );
    }

    #[test]
    fn degenerate_workloads_are_rejected() {
        let s = GasSchedule::istanbul();
        let empty = shape("0", "0", 1, 1);
        assert_eq!(
            cost_dedicated(&empty, &s),
            Err(CostError::DegenerateWorkload)
        );
        assert_eq!(cost_batched(&empty, &s), Err(CostError::DegenerateWorkload));
        assert_eq!(
            cost_off_chain(&empty, &s),
            Err(CostError::DegenerateWorkload)
        );
        assert_eq!(
            cost_batched(&shape("0", "3", 1, 1), &s),
            Err(CostError::NoFundingTransfers)
        );
        assert!(WorkloadShape::from_ints(1, 1, 0, 1).is_err());
        assert!(WorkloadShape::from_ints(1, 1, 1, 0).is_err());
    }

    #[test]
    fn writes_only_span_reduces_to_the_single_sender_form() {
        // With no reads and per-block uploads the amortized cost collapses to
        // (base + digest_upload)*blocks/writes + delta_write.
        for s in [GasSchedule::istanbul(), GasSchedule::legacy()] {
            let per_upload = rat((s.base_fee + s.digest_upload_gas()) as i128);
            for blocks in [1u64, 2, 5, 9] {
                for writes in [1u64, 3, 10, 50] {
                    let sh = WorkloadShape::from_ints(writes, 0, blocks, 1).unwrap();
                    let got = cost_off_chain(&sh, &s).unwrap().amortized;
                    let want = per_upload * ratio(blocks as i128, writes as i128)
                        + rat(s.delta_write_gas() as i128);
                    assert_eq!(got, want);
                }
            }
        }
    }

    #[test]
    fn condition_coefficients_reduce_to_the_published_form() {
        let legacy = derive_write_intensive(&GasSchedule::legacy(), 1);
        assert_eq!(
            (legacy.slope, legacy.intercept, legacy.denominator),
            (8485, 14088, 25843)
        );
        assert_eq!(legacy.writes_min(), ratio(14088, 8485));

        // Istanbul, straight from solving the closed form by hand:
        // (19882*writes - 26512)/10450 before reduction.
        let ist = derive_write_intensive(&GasSchedule::istanbul(), 1);
        assert_eq!(
            (ist.slope * 2, ist.intercept * 2, ist.denominator * 2),
            (19882, 26512, 10450)
        );
    }

    #[test]
    fn condition_examples() {
        let c = derive_write_intensive(&GasSchedule::legacy(), 1);
        assert!(c.evaluate(&rat(10), &rat(1)));
        assert!(!c.evaluate(&rat(1), &rat(0)));
        assert!(!c.evaluate(&rat(0), &rat(0)));
        // Exactly at the writes bound the strict inequality fails.
        assert!(!c.evaluate(&parse_decimal("1.66").unwrap(), &rat(0)));
    }

    proptest! {
        #[test]
        fn dedicated_amortized_is_base_fee(
            nw in 0u32..2000, nr in 0u32..2000, l in 1u64..20, k in 1u64..20
        ) {
            prop_assume!(nw + nr > 0);
            let sh = WorkloadShape::new(ratio(nw as i128, 100), ratio(nr as i128, 100), l, k).unwrap();
            for s in [GasSchedule::istanbul(), GasSchedule::legacy()] {
                let r = cost_dedicated(&sh, &s).unwrap();
                prop_assert_eq!(r.amortized, rat(s.base_fee as i128));
                prop_assert_eq!(r.normalized, rat(1));
            }
        }

        #[test]
        fn batched_amortized_never_increases_with_more_writes(
            nw in 1u32..500, bump in 1u32..500, nr in 0u32..500, l in 1u64..10, k in 1u64..10
        ) {
            let s = GasSchedule::istanbul();
            let lo = WorkloadShape::new(ratio(nw as i128, 10), ratio(nr as i128, 10), l, k).unwrap();
            let hi = WorkloadShape::new(ratio((nw + bump) as i128, 10), ratio(nr as i128, 10), l, k).unwrap();
            let a = cost_batched(&lo, &s).unwrap().amortized;
            let b = cost_batched(&hi, &s).unwrap().amortized;
            prop_assert!(b <= a);
        }

        #[test]
        fn off_chain_amortized_never_increases_with_longer_intervals(
            nw in 1u32..500, nr in 0u32..500, l in 1u64..30, k1 in 1u64..30, k2 in 1u64..30
        ) {
            prop_assume!(k1 < k2);
            let s = GasSchedule::legacy();
            let a = cost_off_chain(&WorkloadShape::new(ratio(nw as i128, 10), ratio(nr as i128, 10), l, k1).unwrap(), &s).unwrap();
            let b = cost_off_chain(&WorkloadShape::new(ratio(nw as i128, 10), ratio(nr as i128, 10), l, k2).unwrap(), &s).unwrap();
            prop_assert!(b.amortized <= a.amortized);
        }

        #[test]
        fn condition_matches_the_cost_comparison(
            nw in 1u32..10_000, nr in 0u32..10_000, l in 1u64..6
        ) {
            for s in [GasSchedule::istanbul(), GasSchedule::legacy()] {
                let c = derive_write_intensive(&s, l);
                let writes = ratio(nw as i128, 100);
                let reads = ratio(nr as i128, 100);
                let sh = WorkloadShape::new(writes, reads, l, 1).unwrap();
                let cheaper = cost_off_chain(&sh, &s).unwrap().amortized < rat(s.base_fee as i128);
                prop_assert_eq!(c.evaluate(&writes, &reads), cheaper);
            }
        }

        #[test]
        fn whole_upload_rounding_only_raises_cost(
            nw in 1u32..200, nr in 0u32..200, l in 1u64..20, k in 1u64..20
        ) {
            let s = GasSchedule::istanbul();
            let exact = WorkloadShape::new(rat(nw as i128), rat(nr as i128), l, k).unwrap();
            let ceiled = exact.clone().with_whole_uploads();
            let a = cost_off_chain(&exact, &s).unwrap().total;
            let b = cost_off_chain(&ceiled, &s).unwrap().total;
            prop_assert!(b >= a);
            if l % k == 0 {
                prop_assert_eq!(a, b);
            }
        }
    }
}
