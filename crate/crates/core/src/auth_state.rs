//! Authenticated off-chain account state with an append-only delta log.
//!
//! Recipient balances live in a fixed-depth binary Merkle tree whose leaves
//! are addressed by a hash prefix of the account address. Incoming credits
//! never rewrite a base leaf; each one is appended as a *delta entry* to the
//! current block window. Sealing a window folds the pending entries into the
//! running digest:
//!
//! ```text
//! d_j = Keccak256(d_{j-1} || Keccak256(entry_j))        d_0 = previous digest
//! ```
//!
//! so the digest after a seal commits to the base tree root and every sealed
//! entry, in order. The on-chain side ([`OnChainVerifier`]) stores only the
//! 32-byte digest, re-runs the fold over uploaded entries to accept a new
//! digest, and settles an account on-chain when given a [`SettlementProof`]
//! that reconstructs the current digest from the account's base leaf and its
//! deltas.
//!
//! ## Wire formats (big-endian, length-prefixed)
//!
//! Delta entry (56 bytes): `receiver(20) || value(32) || block(4)`.
//!
//! Block commit: `digest(32) || count(4) || count * entry(56)`.
//!
//! Settlement proof: `account(20) || leaf_tag(1) || base_balance(32) ||
//! path_len(2) || path_len * sibling(32) || commit_count(4) ||` for each
//! commit `item_count(4)` then items — tag `0` followed by a 32-byte sibling
//! hash, or tag `1` followed by `value(32) || block(4)` — `|| signature(65)`.
//!
//! Signatures are a deterministic keyed-hash placeholder of exactly 65
//! bytes; the cost model needs only their length and a verify/fail outcome.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use sha3::{Digest as _, Keccak256};
use thiserror::Error;

use crate::gas_model::GasSchedule;
use crate::meter::GasBreakdown;

pub const ADDR_LEN: usize = 20;
pub const DIGEST_LEN: usize = 32;
pub const SIG_LEN: usize = 65;
pub const DELTA_ENTRY_LEN: usize = 56;

/// A 20-byte account identifier, compared bytewise.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AccountId(pub [u8; ADDR_LEN]);

impl AccountId {
    pub fn as_bytes(&self) -> &[u8; ADDR_LEN] {
        &self.0
    }

    /// Parses 40 hex characters, with or without a `0x` prefix.
    pub fn from_hex(s: &str) -> Result<AccountId, AuthError> {
        let body = s
            .strip_prefix("0x")
            .or_else(|| s.strip_prefix("0X"))
            .unwrap_or(s);
        if body.len() != ADDR_LEN * 2 {
            return Err(AuthError::BadAddress(s.to_string()));
        }
        let mut out = [0u8; ADDR_LEN];
        for (i, chunk) in body.as_bytes().chunks(2).enumerate() {
            let hi = (chunk[0] as char).to_digit(16);
            let lo = (chunk[1] as char).to_digit(16);
            match (hi, lo) {
                (Some(h), Some(l)) => out[i] = (h as u8) << 4 | l as u8,
                _ => return Err(AuthError::BadAddress(s.to_string())),
            }
        }
        Ok(AccountId(out))
    }

    pub fn to_hex(&self) -> String {
        let mut s = String::with_capacity(2 + ADDR_LEN * 2);
        s.push_str("0x");
        for b in self.0 {
            s.push_str(&format!("{b:02x}"));
        }
        s
    }

    /// Deterministic address derived from a label and an index. Used by the
    /// synthetic workload generator and tests.
    pub fn derived(label: &str, n: u64) -> AccountId {
        let d = keccak(&[label.as_bytes(), &n.to_be_bytes()].concat());
        let mut out = [0u8; ADDR_LEN];
        out.copy_from_slice(&d.0[..ADDR_LEN]);
        AccountId(out)
    }
}

impl fmt::Debug for AccountId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl serde::Serialize for AccountId {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> serde::Deserialize<'de> for AccountId {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        AccountId::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for AccountId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// A 32-byte Keccak-256 digest.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

pub fn keccak(data: &[u8]) -> Digest {
    let mut h = Keccak256::new();
    h.update(data);
    Digest(h.finalize().into())
}

fn keccak_pair(a: &Digest, b: &Digest) -> Digest {
    let mut h = Keccak256::new();
    h.update(a.0);
    h.update(b.0);
    Digest(h.finalize().into())
}

fn value_be32(value: u128) -> [u8; 32] {
    let mut out = [0u8; 32];
    out[16..].copy_from_slice(&value.to_be_bytes());
    out
}

/// One credit to an off-chain account.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeltaEntry {
    pub receiver: AccountId,
    /// Amount in wei; strictly positive.
    pub value: u128,
    /// Block height the credit belongs to.
    pub block: u64,
}

impl DeltaEntry {
    /// Fixed 56-byte serialization: `receiver || value || block`.
    pub fn to_bytes(&self) -> [u8; DELTA_ENTRY_LEN] {
        let mut out = [0u8; DELTA_ENTRY_LEN];
        out[..20].copy_from_slice(&self.receiver.0);
        out[20..52].copy_from_slice(&value_be32(self.value));
        out[52..].copy_from_slice(&(self.block as u32).to_be_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<DeltaEntry, AuthError> {
        if bytes.len() != DELTA_ENTRY_LEN {
            return Err(AuthError::MalformedEncoding("delta entry length"));
        }
        let mut addr = [0u8; ADDR_LEN];
        addr.copy_from_slice(&bytes[..20]);
        if bytes[20..36].iter().any(|b| *b != 0) {
            return Err(AuthError::MalformedEncoding("delta value overflow"));
        }
        let mut v = [0u8; 16];
        v.copy_from_slice(&bytes[36..52]);
        let mut b4 = [0u8; 4];
        b4.copy_from_slice(&bytes[52..]);
        Ok(DeltaEntry {
            receiver: AccountId(addr),
            value: u128::from_be_bytes(v),
            block: u32::from_be_bytes(b4) as u64,
        })
    }

    fn hash(&self) -> Digest {
        keccak(&self.to_bytes())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AuthError {
    #[error("bad address {0:?}: expected 40 hex characters")]
    BadAddress(String),
    #[error("tree depth {0} out of range (1..=32)")]
    InvalidDepth(u32),
    #[error("{accounts} accounts exceed tree capacity {capacity}")]
    CapacityExceeded { accounts: usize, capacity: u64 },
    #[error("duplicate account {0}")]
    DuplicateAccount(AccountId),
    #[error("accounts {first} and {second} hash to the same leaf index {index}")]
    LeafCollision {
        first: AccountId,
        second: AccountId,
        index: u32,
    },
    #[error("delta value must be strictly positive")]
    ZeroValue,
    #[error("block height {0} does not fit the 4-byte wire field")]
    BlockOutOfRange(u64),
    #[error("block {block} is already sealed (sealed through {sealed_through})")]
    OutOfOrderBlock { block: u64, sealed_through: u64 },
    #[error("block {block} precedes pending block {pending_through}")]
    NonMonotonicBlock { block: u64, pending_through: u64 },
    #[error("account {0} has pending entries; seal the window before proving")]
    PendingEntries(AccountId),
    #[error("account {0} is unknown to the off-chain state")]
    UnknownAccount(AccountId),
    #[error("digest mismatch: reconstruction does not match the stored digest")]
    DigestMismatch,
    #[error("signature verification failed")]
    BadSignature,
    #[error("overdraft: requested {requested} with effective balance {available}")]
    Overdraft { available: u128, requested: u128 },
    #[error("malformed encoding: {0}")]
    MalformedEncoding(&'static str),
}

fn empty_leaf_digest() -> Digest {
    keccak(&[0u8; ADDR_LEN + 32])
}

fn leaf_digest(account: &AccountId, balance: u128) -> Digest {
    let mut buf = [0u8; ADDR_LEN + 32];
    buf[..ADDR_LEN].copy_from_slice(&account.0);
    buf[ADDR_LEN..].copy_from_slice(&value_be32(balance));
    keccak(&buf)
}

/// Leaf index: the first `depth` bits of `Keccak256(address)`.
fn leaf_index(account: &AccountId, depth: u32) -> u32 {
    let d = keccak(&account.0);
    let word = u32::from_be_bytes([d.0[0], d.0[1], d.0[2], d.0[3]]);
    if depth == 32 {
        word
    } else {
        word >> (32 - depth)
    }
}

/// Sparse fixed-depth Merkle tree over account leaves. Only occupied paths
/// are materialized; empty subtrees use precomputed default digests.
#[derive(Debug, Clone)]
struct BaseTree {
    depth: u32,
    defaults: Vec<Digest>,
    nodes: HashMap<(u32, u32), Digest>,
}

impl BaseTree {
    fn build(accounts: &BTreeMap<AccountId, u128>, depth: u32) -> Result<BaseTree, AuthError> {
        let mut defaults = Vec::with_capacity(depth as usize + 1);
        defaults.push(empty_leaf_digest());
        for level in 0..depth {
            let d = keccak_pair(&defaults[level as usize], &defaults[level as usize]);
            defaults.push(d);
        }

        let mut nodes: HashMap<(u32, u32), Digest> = HashMap::new();
        let mut owners: HashMap<u32, AccountId> = HashMap::new();
        for (account, balance) in accounts {
            let idx = leaf_index(account, depth);
            if let Some(prev) = owners.insert(idx, *account) {
                return Err(AuthError::LeafCollision {
                    first: prev,
                    second: *account,
                    index: idx,
                });
            }
            nodes.insert((0, idx), leaf_digest(account, *balance));
        }

        let mut frontier: Vec<u32> = owners.keys().copied().collect();
        for level in 0..depth {
            let mut parents: Vec<u32> = frontier.iter().map(|i| i >> 1).collect();
            parents.sort_unstable();
            parents.dedup();
            for &p in &parents {
                let left = Self::node(&nodes, &defaults, level, p << 1);
                let right = Self::node(&nodes, &defaults, level, (p << 1) | 1);
                nodes.insert((level + 1, p), keccak_pair(&left, &right));
            }
            frontier = parents;
        }
        Ok(BaseTree {
            depth,
            defaults,
            nodes,
        })
    }

    fn node(
        nodes: &HashMap<(u32, u32), Digest>,
        defaults: &[Digest],
        level: u32,
        idx: u32,
    ) -> Digest {
        nodes
            .get(&(level, idx))
            .copied()
            .unwrap_or(defaults[level as usize])
    }

    fn root(&self) -> Digest {
        Self::node(&self.nodes, &self.defaults, self.depth, 0)
    }

    /// Sibling path from the leaf at `idx` to the root, bottom-up.
    fn path(&self, idx: u32) -> Vec<Digest> {
        (0..self.depth)
            .map(|level| Self::node(&self.nodes, &self.defaults, level, (idx >> level) ^ 1))
            .collect()
    }
}

/// Folds a leaf digest up a sibling path using the index bits for sides.
fn fold_base_path(leaf: Digest, idx: u32, path: &[Digest]) -> Digest {
    let mut acc = leaf;
    for (level, sibling) in path.iter().enumerate() {
        let bit = (idx >> level) & 1;
        acc = if bit == 0 {
            keccak_pair(&acc, sibling)
        } else {
            keccak_pair(sibling, &acc)
        };
    }
    acc
}

/// A sealed window of delta entries together with the digest it advanced to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockCommit {
    pub digest: Digest,
    pub entries: Vec<DeltaEntry>,
}

impl BlockCommit {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(DIGEST_LEN + 4 + self.entries.len() * DELTA_ENTRY_LEN);
        out.extend_from_slice(&self.digest.0);
        out.extend_from_slice(&(self.entries.len() as u32).to_be_bytes());
        for e in &self.entries {
            out.extend_from_slice(&e.to_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<BlockCommit, AuthError> {
        if bytes.len() < DIGEST_LEN + 4 {
            return Err(AuthError::MalformedEncoding("commit header"));
        }
        let mut digest = [0u8; DIGEST_LEN];
        digest.copy_from_slice(&bytes[..DIGEST_LEN]);
        let mut n4 = [0u8; 4];
        n4.copy_from_slice(&bytes[DIGEST_LEN..DIGEST_LEN + 4]);
        let n = u32::from_be_bytes(n4) as usize;
        let body = &bytes[DIGEST_LEN + 4..];
        if body.len() != n * DELTA_ENTRY_LEN {
            return Err(AuthError::MalformedEncoding("commit body length"));
        }
        let entries = body
            .chunks(DELTA_ENTRY_LEN)
            .map(DeltaEntry::from_bytes)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(BlockCommit {
            digest: Digest(digest),
            entries,
        })
    }
}

/// The off-chain server's view: base tree, sealed delta log, running digest
/// and the still-open window.
#[derive(Debug, Clone)]
pub struct AuthenticatedState {
    tree: BaseTree,
    base_balances: BTreeMap<AccountId, u128>,
    sealed: Vec<BlockCommit>,
    /// Entry hashes per sealed commit, cached so proof generation does not
    /// re-hash the whole log.
    sealed_entry_hashes: Vec<Vec<Digest>>,
    pending: Vec<DeltaEntry>,
    digest: Digest,
    sealed_delta: BTreeMap<AccountId, u128>,
    pending_delta: BTreeMap<AccountId, u128>,
    sealed_through: Option<u64>,
}

/// Builds the initial state. Leaf position is the hash prefix of the
/// address; a prefix collision is an explicit error, not a probe.
pub fn init_state(
    accounts: &[(AccountId, u128)],
    depth: u32,
) -> Result<AuthenticatedState, AuthError> {
    if depth == 0 || depth > 32 {
        return Err(AuthError::InvalidDepth(depth));
    }
    let capacity = 1u64 << depth;
    if accounts.len() as u64 > capacity {
        return Err(AuthError::CapacityExceeded {
            accounts: accounts.len(),
            capacity,
        });
    }
    let mut balances = BTreeMap::new();
    for (account, balance) in accounts {
        if balances.insert(*account, *balance).is_some() {
            return Err(AuthError::DuplicateAccount(*account));
        }
    }
    let tree = BaseTree::build(&balances, depth)?;
    let digest = tree.root();
    Ok(AuthenticatedState {
        tree,
        base_balances: balances,
        sealed: Vec::new(),
        sealed_entry_hashes: Vec::new(),
        pending: Vec::new(),
        digest,
        sealed_delta: BTreeMap::new(),
        pending_delta: BTreeMap::new(),
        sealed_through: None,
    })
}

impl AuthenticatedState {
    pub fn digest(&self) -> Digest {
        self.digest
    }

    /// Number of sealed commits; settlement proof depth is
    /// `base_tree_depth + sealed_commits()`.
    pub fn sealed_commits(&self) -> usize {
        self.sealed.len()
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn tree_depth(&self) -> u32 {
        self.tree.depth
    }

    /// Base balance plus all sealed and pending deltas for `account`.
    pub fn effective_balance(&self, account: &AccountId) -> u128 {
        self.base_balances.get(account).copied().unwrap_or(0)
            + self.sealed_delta.get(account).copied().unwrap_or(0)
            + self.pending_delta.get(account).copied().unwrap_or(0)
    }

    pub fn knows_account(&self, account: &AccountId) -> bool {
        self.base_balances.contains_key(account)
            || self.sealed_delta.contains_key(account)
            || self.pending_delta.contains_key(account)
    }

    /// Appends a credit to the open window. Base leaves are never touched.
    pub fn append_delta(&mut self, entry: DeltaEntry) -> Result<(), AuthError> {
        if entry.value == 0 {
            return Err(AuthError::ZeroValue);
        }
        if entry.block > u32::MAX as u64 {
            return Err(AuthError::BlockOutOfRange(entry.block));
        }
        if let Some(sealed_through) = self.sealed_through {
            if entry.block <= sealed_through {
                return Err(AuthError::OutOfOrderBlock {
                    block: entry.block,
                    sealed_through,
                });
            }
        }
        if let Some(last) = self.pending.last() {
            if entry.block < last.block {
                return Err(AuthError::NonMonotonicBlock {
                    block: entry.block,
                    pending_through: last.block,
                });
            }
        }
        *self.pending_delta.entry(entry.receiver).or_insert(0) += entry.value;
        self.pending.push(entry);
        Ok(())
    }

    /// Seals the open window: folds pending entries into the digest and
    /// moves them to the sealed log. Sealing an empty window leaves the
    /// digest unchanged but still deepens the log by one commit.
    pub fn seal_block(&mut self) -> BlockCommit {
        let mut d = self.digest;
        let mut entry_hashes = Vec::with_capacity(self.pending.len());
        for entry in &self.pending {
            let h = entry.hash();
            d = keccak_pair(&d, &h);
            entry_hashes.push(h);
        }
        self.sealed_entry_hashes.push(entry_hashes);
        let entries = std::mem::take(&mut self.pending);
        if let Some(last) = entries.last() {
            self.sealed_through = Some(match self.sealed_through {
                Some(s) => s.max(last.block),
                None => last.block,
            });
        }
        for (account, delta) in std::mem::take(&mut self.pending_delta) {
            *self.sealed_delta.entry(account).or_insert(0) += delta;
        }
        self.digest = d;
        let commit = BlockCommit { digest: d, entries };
        self.sealed.push(commit.clone());
        commit
    }

    /// Builds a settlement proof for `account` against the current digest.
    pub fn prove_account(&self, account: &AccountId) -> Result<SettlementProof, AuthError> {
        if self.pending_delta.contains_key(account) {
            return Err(AuthError::PendingEntries(*account));
        }
        if !self.base_balances.contains_key(account) && !self.sealed_delta.contains_key(account) {
            return Err(AuthError::UnknownAccount(*account));
        }
        let base_leaf = match self.base_balances.get(account) {
            Some(balance) => BaseLeaf::Occupied(*balance),
            None => BaseLeaf::Vacant,
        };
        let idx = leaf_index(account, self.tree.depth);
        let base_path = self.tree.path(idx);
        let slices = self
            .sealed
            .iter()
            .zip(&self.sealed_entry_hashes)
            .map(|(commit, hashes)| CommitSlice {
                items: commit
                    .entries
                    .iter()
                    .zip(hashes)
                    .map(|(e, h)| {
                        if e.receiver == *account {
                            ProofItem::Delta {
                                value: e.value,
                                block: e.block,
                            }
                        } else {
                            ProofItem::Sibling(*h)
                        }
                    })
                    .collect(),
            })
            .collect();
        Ok(SettlementProof {
            account: *account,
            base_leaf,
            base_path,
            slices,
            signature: [0u8; SIG_LEN],
        })
    }

    /// Every account with a positive effective balance. Used when a modeled
    /// epoch compacts the log into a fresh base tree.
    pub fn accounts_with_balance(&self) -> Vec<(AccountId, u128)> {
        let mut all: BTreeMap<AccountId, u128> = BTreeMap::new();
        for (a, v) in &self.base_balances {
            *all.entry(*a).or_insert(0) += v;
        }
        for (a, v) in &self.sealed_delta {
            *all.entry(*a).or_insert(0) += v;
        }
        for (a, v) in &self.pending_delta {
            *all.entry(*a).or_insert(0) += v;
        }
        all.into_iter().filter(|(_, v)| *v > 0).collect()
    }
}

/// Whether the account occupies its base leaf, and with what balance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaseLeaf {
    Vacant,
    Occupied(u128),
}

/// One proof item inside a sealed commit, in entry order: either the hash
/// of someone else's entry or this account's claimed delta.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProofItem {
    Sibling(Digest),
    Delta { value: u128, block: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CommitSlice {
    pub items: Vec<ProofItem>,
}

/// Everything needed to settle one off-chain account on-chain: the base
/// leaf with its Merkle path, the account's deltas per sealed commit with
/// the sibling hashes to replay the fold, and a 65-byte authorization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SettlementProof {
    pub account: AccountId,
    pub base_leaf: BaseLeaf,
    pub base_path: Vec<Digest>,
    pub slices: Vec<CommitSlice>,
    pub signature: [u8; SIG_LEN],
}

impl SettlementProof {
    /// Number of sealed commits the proof spans (`B`).
    pub fn commit_count(&self) -> u64 {
        self.slices.len() as u64
    }

    pub fn claimed_delta_total(&self) -> u128 {
        self.slices
            .iter()
            .flat_map(|s| &s.items)
            .map(|item| match item {
                ProofItem::Delta { value, .. } => *value,
                ProofItem::Sibling(_) => 0,
            })
            .sum()
    }

    pub fn effective_balance(&self) -> u128 {
        let base = match self.base_leaf {
            BaseLeaf::Occupied(v) => v,
            BaseLeaf::Vacant => 0,
        };
        base + self.claimed_delta_total()
    }

    /// Path bytes the protocol charges for this proof:
    /// `(depth + B) * digest_bytes * B`.
    pub fn accounted_path_bytes(&self, s: &GasSchedule) -> u128 {
        let b = self.commit_count() as u128;
        (s.base_tree_depth as u128 + b) * s.digest_bytes as u128 * b
    }

    /// Signs the settlement of `value` to `receiver` against `digest` with
    /// the account's placeholder key.
    pub fn authorize(&mut self, receiver: &AccountId, value: u128, digest: &Digest) {
        let msg = settlement_message(&self.account, receiver, value, digest);
        self.signature = mock_sign(&self.account, &msg);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.account.0);
        match self.base_leaf {
            BaseLeaf::Vacant => {
                out.push(0);
                out.extend_from_slice(&[0u8; 32]);
            }
            BaseLeaf::Occupied(v) => {
                out.push(1);
                out.extend_from_slice(&value_be32(v));
            }
        }
        out.extend_from_slice(&(self.base_path.len() as u16).to_be_bytes());
        for d in &self.base_path {
            out.extend_from_slice(&d.0);
        }
        out.extend_from_slice(&(self.slices.len() as u32).to_be_bytes());
        for slice in &self.slices {
            out.extend_from_slice(&(slice.items.len() as u32).to_be_bytes());
            for item in &slice.items {
                match item {
                    ProofItem::Sibling(d) => {
                        out.push(0);
                        out.extend_from_slice(&d.0);
                    }
                    ProofItem::Delta { value, block } => {
                        out.push(1);
                        out.extend_from_slice(&value_be32(*value));
                        out.extend_from_slice(&(*block as u32).to_be_bytes());
                    }
                }
            }
        }
        out.extend_from_slice(&self.signature);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<SettlementProof, AuthError> {
        let mut cur = Cursor { bytes, pos: 0 };
        let account = AccountId(cur.take_array::<ADDR_LEN>("account")?);
        let tag = cur.take_array::<1>("leaf tag")?[0];
        let balance_raw = cur.take_array::<32>("base balance")?;
        if balance_raw[..16].iter().any(|b| *b != 0) {
            return Err(AuthError::MalformedEncoding("base balance overflow"));
        }
        let mut v = [0u8; 16];
        v.copy_from_slice(&balance_raw[16..]);
        let base_leaf = match tag {
            0 => BaseLeaf::Vacant,
            1 => BaseLeaf::Occupied(u128::from_be_bytes(v)),
            _ => return Err(AuthError::MalformedEncoding("leaf tag")),
        };
        let path_len = u16::from_be_bytes(cur.take_array::<2>("path length")?) as usize;
        cur.check_remaining(path_len, DIGEST_LEN, "path length")?;
        let mut base_path = Vec::with_capacity(path_len);
        for _ in 0..path_len {
            base_path.push(Digest(cur.take_array::<DIGEST_LEN>("path node")?));
        }
        let commit_count = u32::from_be_bytes(cur.take_array::<4>("commit count")?) as usize;
        cur.check_remaining(commit_count, 4, "commit count")?;
        let mut slices = Vec::with_capacity(commit_count);
        for _ in 0..commit_count {
            let item_count = u32::from_be_bytes(cur.take_array::<4>("item count")?) as usize;
            // Smallest item is a tag plus a 32-byte sibling.
            cur.check_remaining(item_count, 1 + DIGEST_LEN, "item count")?;
            let mut items = Vec::with_capacity(item_count);
            for _ in 0..item_count {
                match cur.take_array::<1>("item tag")?[0] {
                    0 => items.push(ProofItem::Sibling(Digest(
                        cur.take_array::<DIGEST_LEN>("sibling")?,
                    ))),
                    1 => {
                        let raw = cur.take_array::<32>("delta value")?;
                        if raw[..16].iter().any(|b| *b != 0) {
                            return Err(AuthError::MalformedEncoding("delta value overflow"));
                        }
                        let mut v = [0u8; 16];
                        v.copy_from_slice(&raw[16..]);
                        let block = u32::from_be_bytes(cur.take_array::<4>("delta block")?) as u64;
                        items.push(ProofItem::Delta {
                            value: u128::from_be_bytes(v),
                            block,
                        });
                    }
                    _ => return Err(AuthError::MalformedEncoding("item tag")),
                }
            }
            slices.push(CommitSlice { items });
        }
        let signature = cur.take_array::<SIG_LEN>("signature")?;
        if cur.pos != bytes.len() {
            return Err(AuthError::MalformedEncoding("trailing bytes"));
        }
        Ok(SettlementProof {
            account,
            base_leaf,
            base_path,
            slices,
            signature,
        })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take_array<const N: usize>(&mut self, what: &'static str) -> Result<[u8; N], AuthError> {
        if self.pos + N > self.bytes.len() {
            return Err(AuthError::MalformedEncoding(what));
        }
        let mut out = [0u8; N];
        out.copy_from_slice(&self.bytes[self.pos..self.pos + N]);
        self.pos += N;
        Ok(out)
    }

    /// Rejects a claimed element count that cannot fit in the remaining
    /// input, so untrusted counts never drive allocation.
    fn check_remaining(
        &self,
        count: usize,
        min_elem_len: usize,
        what: &'static str,
    ) -> Result<(), AuthError> {
        let remaining = self.bytes.len() - self.pos;
        if count
            .checked_mul(min_elem_len)
            .is_none_or(|need| need > remaining)
        {
            return Err(AuthError::MalformedEncoding(what));
        }
        Ok(())
    }
}

fn settlement_message(
    account: &AccountId,
    receiver: &AccountId,
    value: u128,
    digest: &Digest,
) -> Vec<u8> {
    let mut msg = Vec::with_capacity(7 + 2 * ADDR_LEN + 32 + DIGEST_LEN);
    msg.extend_from_slice(b"settle:");
    msg.extend_from_slice(&account.0);
    msg.extend_from_slice(&receiver.0);
    msg.extend_from_slice(&value_be32(value));
    msg.extend_from_slice(&digest.0);
    msg
}

fn mock_secret(account: &AccountId) -> Digest {
    keccak(&[b"account-key:", account.0.as_slice()].concat())
}

/// Deterministic 65-byte keyed-hash signature placeholder.
pub fn mock_sign(account: &AccountId, msg: &[u8]) -> [u8; SIG_LEN] {
    let secret = mock_secret(account);
    let t = keccak(&[secret.0.as_slice(), msg].concat());
    let u = keccak(&[t.0.as_slice(), msg].concat());
    let mut sig = [0u8; SIG_LEN];
    sig[..32].copy_from_slice(&t.0);
    sig[32..64].copy_from_slice(&u.0);
    sig[64] = 0x1b;
    sig
}

pub fn mock_verify(account: &AccountId, msg: &[u8], sig: &[u8; SIG_LEN]) -> bool {
    mock_sign(account, msg) == *sig
}

/// The on-chain contract's state: the mirrored digest, settled balances and
/// an accumulated gas meter charged per the active schedule.
#[derive(Debug, Clone)]
pub struct OnChainVerifier {
    digest: Digest,
    balances: BTreeMap<AccountId, u128>,
    gas_meter: u128,
    schedule: GasSchedule,
}

impl OnChainVerifier {
    pub fn new(genesis_digest: Digest, schedule: GasSchedule) -> OnChainVerifier {
        OnChainVerifier {
            digest: genesis_digest,
            balances: BTreeMap::new(),
            gas_meter: 0,
            schedule,
        }
    }

    pub fn digest(&self) -> Digest {
        self.digest
    }

    pub fn gas_meter(&self) -> u128 {
        self.gas_meter
    }

    pub fn balances(&self) -> &BTreeMap<AccountId, u128> {
        &self.balances
    }

    pub fn balance_of(&self, account: &AccountId) -> u128 {
        self.balances.get(account).copied().unwrap_or(0)
    }

    pub fn credit(&mut self, account: &AccountId, value: u128) {
        *self.balances.entry(*account).or_insert(0) += value;
    }

    /// Re-runs the digest fold over the uploaded entries; accepts the commit
    /// and charges gas on a match, rejects and stays unchanged otherwise.
    pub fn verify_commit(&mut self, commit: &BlockCommit) -> Result<GasBreakdown, AuthError> {
        let mut d = self.digest;
        for entry in &commit.entries {
            d = keccak_pair(&d, &entry.hash());
        }
        if d != commit.digest {
            return Err(AuthError::DigestMismatch);
        }
        let s = &self.schedule;
        let n = commit.entries.len() as u128;
        let gas = GasBreakdown {
            calldata: (n * s.delta_entry_bytes() as u128 + s.digest_bytes as u128)
                * s.calldata_byte as u128,
            digest_update: s.digest_update as u128,
            hash: n * s.hash_op as u128,
            ..GasBreakdown::default()
        };
        self.digest = commit.digest;
        self.gas_meter += gas.total();
        Ok(gas)
    }

    /// Settles `value` from the proven account to `receiver`. On success the
    /// account's remaining effective balance moves on-chain and gas for the
    /// proof upload and verification is charged. Any failure leaves the
    /// verifier untouched.
    pub fn settle_account(
        &mut self,
        proof: &SettlementProof,
        receiver: &AccountId,
        value: u128,
    ) -> Result<GasBreakdown, AuthError> {
        let s = &self.schedule;
        if proof.base_path.len() != s.base_tree_depth as usize {
            return Err(AuthError::MalformedEncoding("base path depth"));
        }
        let msg = settlement_message(&proof.account, receiver, value, &self.digest);
        if !mock_verify(&proof.account, &msg, &proof.signature) {
            return Err(AuthError::BadSignature);
        }

        let leaf = match proof.base_leaf {
            BaseLeaf::Occupied(balance) => leaf_digest(&proof.account, balance),
            BaseLeaf::Vacant => empty_leaf_digest(),
        };
        let idx = leaf_index(&proof.account, s.base_tree_depth as u32);
        let mut d = fold_base_path(leaf, idx, &proof.base_path);
        for slice in &proof.slices {
            for item in &slice.items {
                let h = match item {
                    ProofItem::Sibling(h) => *h,
                    ProofItem::Delta { value, block } => DeltaEntry {
                        receiver: proof.account,
                        value: *value,
                        block: *block,
                    }
                    .hash(),
                };
                d = keccak_pair(&d, &h);
            }
        }
        if d != self.digest {
            return Err(AuthError::DigestMismatch);
        }

        let effective = proof.effective_balance();
        if value > effective {
            return Err(AuthError::Overdraft {
                available: effective,
                requested: value,
            });
        }

        let b = proof.commit_count() as u128;
        let depth = s.base_tree_depth as u128;
        let gas = GasBreakdown {
            calldata: s.calldata_byte as u128
                * (s.addr_bytes + s.payload_bytes_m3 + s.sig_bytes) as u128,
            sig_verify: s.sig_verify as u128,
            internal_transfer: s.internal_transfer as u128,
            proof_bytes: s.calldata_byte as u128 * proof.accounted_path_bytes(s),
            hash: (depth + b) * s.hash_op as u128,
            ..GasBreakdown::default()
        };

        *self.balances.entry(proof.account).or_insert(0) += effective - value;
        *self.balances.entry(*receiver).or_insert(0) += value;
        self.gas_meter += gas.total();
        Ok(gas)
    }

    /// Moves value between two settled on-chain accounts.
    pub fn transfer_on_chain(
        &mut self,
        from: &AccountId,
        to: &AccountId,
        value: u128,
    ) -> Result<(), AuthError> {
        let available = self.balance_of(from);
        if value > available {
            return Err(AuthError::Overdraft {
                available,
                requested: value,
            });
        }
        *self.balances.get_mut(from).expect("checked above") -= value;
        *self.balances.entry(*to).or_insert(0) += value;
        Ok(())
    }
}
