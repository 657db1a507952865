//! Itemized gas accounting shared by the verifier and the simulator.

use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

/// Gas split by the component that consumed it. The report schema keeps
/// these key names stable.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GasBreakdown {
    /// Flat per-transaction fees.
    pub base_fee: u128,
    /// Calldata bytes other than settlement proof paths.
    pub calldata: u128,
    /// Internal Ether transfers executed by contracts.
    pub internal_transfer: u128,
    /// Keccak-256 invocations.
    pub hash: u128,
    /// On-chain digest storage updates.
    pub digest_update: u128,
    /// Signature verifications.
    pub sig_verify: u128,
    /// Calldata carrying settlement proof paths.
    pub proof_bytes: u128,
}

impl GasBreakdown {
    pub fn total(&self) -> u128 {
        self.base_fee
            + self.calldata
            + self.internal_transfer
            + self.hash
            + self.digest_update
            + self.sig_verify
            + self.proof_bytes
    }

    pub fn is_zero(&self) -> bool {
        self.total() == 0
    }
}

impl Add for GasBreakdown {
    type Output = GasBreakdown;
    fn add(self, rhs: GasBreakdown) -> GasBreakdown {
        GasBreakdown {
            base_fee: self.base_fee + rhs.base_fee,
            calldata: self.calldata + rhs.calldata,
            internal_transfer: self.internal_transfer + rhs.internal_transfer,
            hash: self.hash + rhs.hash,
            digest_update: self.digest_update + rhs.digest_update,
            sig_verify: self.sig_verify + rhs.sig_verify,
            proof_bytes: self.proof_bytes + rhs.proof_bytes,
        }
    }
}

impl AddAssign for GasBreakdown {
    fn add_assign(&mut self, rhs: GasBreakdown) {
        *self = *self + rhs;
    }
}
