//! Canonical chain data types and hash commitments.
//!
//! Everything that crosses a node boundary or ends up in a hash is defined
//! here, together with the canonical byte serialization the hashes are
//! computed over. The encoding is fixed field order, big-endian fixed-width
//! integers, with account identifiers widened to 32 bytes so the coinbase
//! placeholder (32 bytes of 0xFF) fits the same slot. See
//! `docs/serialization.md` for the full layout.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// 32-byte digest with bytewise total order (used for selection tie-breaks).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Hash256(pub [u8; 32]);

impl Hash256 {
    pub const ZERO: Hash256 = Hash256([0u8; 32]);

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Hash256> {
        let bytes = hex::decode(s).ok()?;
        let arr: [u8; 32] = bytes.try_into().ok()?;
        Some(Hash256(arr))
    }
}

impl fmt::Debug for Hash256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", &self.to_hex()[..12])
    }
}

impl fmt::Display for Hash256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_hex())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AccountId(pub u64);

impl fmt::Debug for AccountId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "acct:{}", self.0)
    }
}

/// Transaction recipient: either a concrete account or the coinbase
/// placeholder, resolved to the miner address at execution time.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub enum Recipient {
    Account(AccountId),
    Coinbase,
}

fn account_bytes(id: AccountId) -> [u8; 32] {
    let mut b = [0u8; 32];
    b[24..].copy_from_slice(&id.0.to_be_bytes());
    b
}

fn recipient_bytes(r: Recipient) -> [u8; 32] {
    match r {
        Recipient::Account(id) => account_bytes(id),
        Recipient::Coinbase => [0xFF; 32],
    }
}

/// A signed transfer. Identity (the tx hash) covers only the consensus
/// fields; `created_ts`, origin and the local-only flag are node-local
/// metadata so that nodes with different receive times agree on identity.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct Transaction {
    pub sender: AccountId,
    pub recipient: Recipient,
    pub nonce: u64,
    pub gas_price: u64,
    pub gas_used: u64,
    pub amount: u64,
    pub created_ts: u64,
    pub origin_node: usize,
    pub is_local_only: bool,
    hash: Hash256,
}

impl Transaction {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        sender: AccountId,
        recipient: Recipient,
        nonce: u64,
        gas_price: u64,
        gas_used: u64,
        amount: u64,
        created_ts: u64,
        origin_node: usize,
    ) -> Transaction {
        let mut tx = Transaction {
            sender,
            recipient,
            nonce,
            gas_price,
            gas_used,
            amount,
            created_ts,
            origin_node,
            is_local_only: false,
            hash: Hash256::ZERO,
        };
        tx.hash = Hash256(Sha256::digest(tx.canonical_bytes()).into());
        tx
    }

    pub fn local_only(mut self) -> Transaction {
        self.is_local_only = true;
        self
    }

    /// Canonical byte serialization over the hashed fields only.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(96);
        out.extend_from_slice(&account_bytes(self.sender));
        out.extend_from_slice(&recipient_bytes(self.recipient));
        out.extend_from_slice(&self.nonce.to_be_bytes());
        out.extend_from_slice(&self.gas_price.to_be_bytes());
        out.extend_from_slice(&self.gas_used.to_be_bytes());
        out.extend_from_slice(&self.amount.to_be_bytes());
        out
    }

    pub fn hash(&self) -> Hash256 {
        self.hash
    }

    pub fn fee(&self) -> u64 {
        self.gas_price.saturating_mul(self.gas_used)
    }

    /// The accessed-account set is {sender, recipient}; a coinbase-placeholder
    /// recipient counts as accessing the (unknown) coinbase address.
    pub fn accesses_coinbase(&self) -> bool {
        self.recipient == Recipient::Coinbase
    }
}

pub fn tx_hash(tx: &Transaction) -> Hash256 {
    tx.hash()
}

/// Order-sensitive commitment over a transaction list: SHA-256 over the
/// concatenated tx hashes.
pub fn body_hash(txs: &[Transaction]) -> Hash256 {
    let mut h = Sha256::new();
    for tx in txs {
        h.update(tx.hash().0);
    }
    Hash256(h.finalize().into())
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct BlockHeader {
    pub parent_hash: Hash256,
    pub number: u64,
    pub timestamp: u64,
    pub coinbase: AccountId,
    pub txs_hash: Hash256,
    pub state_root: Hash256,
}

impl BlockHeader {
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(144);
        out.extend_from_slice(&self.parent_hash.0);
        out.extend_from_slice(&self.number.to_be_bytes());
        out.extend_from_slice(&self.timestamp.to_be_bytes());
        out.extend_from_slice(&account_bytes(self.coinbase));
        out.extend_from_slice(&self.txs_hash.0);
        out.extend_from_slice(&self.state_root.0);
        out
    }

    pub fn hash(&self) -> Hash256 {
        Hash256(Sha256::digest(self.canonical_bytes()).into())
    }
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct Block {
    pub header: BlockHeader,
    pub body: Vec<Transaction>,
}

impl Block {
    pub fn hash(&self) -> Hash256 {
        self.header.hash()
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
pub struct AccountState {
    pub nonce: u64,
    pub balance: u64,
}

/// Flat account map. The state commitment is a sorted flat hash, not a trie:
/// identical states yield identical roots, which is all the protocols need.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct WorldState {
    accounts: HashMap<AccountId, AccountState>,
}

impl WorldState {
    pub fn new() -> WorldState {
        WorldState::default()
    }

    pub fn with_accounts(entries: impl IntoIterator<Item = (AccountId, AccountState)>) -> WorldState {
        WorldState {
            accounts: entries.into_iter().collect(),
        }
    }

    pub fn get(&self, id: AccountId) -> AccountState {
        self.accounts.get(&id).copied().unwrap_or_default()
    }

    pub fn contains(&self, id: AccountId) -> bool {
        self.accounts.contains_key(&id)
    }

    pub fn set(&mut self, id: AccountId, st: AccountState) {
        self.accounts.insert(id, st);
    }

    pub fn remove(&mut self, id: AccountId) -> Option<AccountState> {
        self.accounts.remove(&id)
    }

    pub fn credit(&mut self, id: AccountId, amount: u64) {
        let e = self.accounts.entry(id).or_default();
        e.balance += amount;
    }

    pub fn len(&self) -> usize {
        self.accounts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accounts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&AccountId, &AccountState)> {
        self.accounts.iter()
    }

    pub fn total_balance(&self) -> u128 {
        self.accounts.values().map(|a| a.balance as u128).sum()
    }
}

/// SHA-256 over (account, nonce, balance) triples sorted ascending by
/// account id; invariant under map insertion order.
pub fn state_root(state: &WorldState) -> Hash256 {
    let mut ids: Vec<AccountId> = state.accounts.keys().copied().collect();
    ids.sort_unstable();
    let mut h = Sha256::new();
    for id in ids {
        let st = state.accounts[&id];
        h.update(account_bytes(id));
        h.update(st.nonce.to_be_bytes());
        h.update(st.balance.to_be_bytes());
    }
    Hash256(h.finalize().into())
}
