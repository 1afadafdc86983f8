//! Wire messages shared by the four block-propagation protocols and the
//! transaction gossip / PPB synchronization machinery.
//!
//! Sizes are modeled, not serialized: every variant has a byte-size function
//! driven by the configurable size table. Hop counters on block-carrying
//! messages are measurement metadata and do not count toward the size.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::chain::{Block, BlockHeader, Hash256, Transaction};

/// Message sizes in bytes. `s_hash` includes the fixed message overhead, so
/// every hash-only control message costs exactly `s_hash` on the wire.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SizeTable {
    pub s_hash: u64,
    pub s_header: u64,
    pub s_tx: u64,
}

impl Default for SizeTable {
    fn default() -> SizeTable {
        SizeTable {
            s_hash: 104, // 32-byte hash + 72 bytes message overhead
            s_header: 508,
            s_tx: 250,
        }
    }
}

#[derive(Clone, Debug)]
pub enum WireMessage {
    // transaction gossip
    NewTx(Arc<Transaction>),
    TxHashAnnounce(Hash256),
    GetTx(Hash256),
    // PPB synchronization
    CheckSync { height: u64, body_hash: Hash256 },
    PpbPayload { height: u64, txs: Arc<Vec<Transaction>> },
    // block propagation
    BlockHeaderMsg { header: BlockHeader, hop: u32 },
    FullBlock { block: Arc<Block>, hop: u32 },
    Inv { block_hash: Hash256, hop: u32 },
    GetData(Hash256),
    BlockHashAnnounce { block_hash: Hash256, hop: u32 },
    GetHeader(Hash256),
    GetBody(Hash256),
    CompactBlock { header: BlockHeader, tx_hashes: Arc<Vec<Hash256>>, hop: u32 },
    GetMissedTxs { block_hash: Hash256, hashes: Vec<Hash256> },
    MissedTxs { block_hash: Hash256, txs: Vec<Transaction> },
}

/// Traffic class used by the measurement layer: block dissemination bytes
/// are reported separately from the continuous gossip/sync background.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum TrafficClass {
    TxGossip,
    PpbSync,
    BlockProp,
}

impl WireMessage {
    pub fn size_bytes(&self, s: &SizeTable) -> u64 {
        match self {
            WireMessage::NewTx(_) => s.s_tx,
            WireMessage::TxHashAnnounce(_) | WireMessage::GetTx(_) => s.s_hash,
            WireMessage::CheckSync { .. } => s.s_hash,
            WireMessage::PpbPayload { txs, .. } => s.s_hash + txs.len() as u64 * s.s_tx,
            WireMessage::BlockHeaderMsg { .. } => s.s_header,
            WireMessage::FullBlock { block, .. } => {
                s.s_header + block.body.len() as u64 * s.s_tx
            }
            WireMessage::Inv { .. }
            | WireMessage::GetData(_)
            | WireMessage::BlockHashAnnounce { .. }
            | WireMessage::GetHeader(_)
            | WireMessage::GetBody(_) => s.s_hash,
            WireMessage::CompactBlock { tx_hashes, .. } => {
                s.s_header + tx_hashes.len() as u64 * s.s_hash
            }
            WireMessage::GetMissedTxs { .. } => s.s_hash,
            WireMessage::MissedTxs { txs, .. } => s.s_hash + txs.len() as u64 * s.s_tx,
        }
    }

    pub fn class(&self) -> TrafficClass {
        match self {
            WireMessage::NewTx(_) | WireMessage::TxHashAnnounce(_) | WireMessage::GetTx(_) => {
                TrafficClass::TxGossip
            }
            WireMessage::CheckSync { .. } | WireMessage::PpbPayload { .. } => TrafficClass::PpbSync,
            _ => TrafficClass::BlockProp,
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            WireMessage::NewTx(_) => "new_tx",
            WireMessage::TxHashAnnounce(_) => "tx_hash_announce",
            WireMessage::GetTx(_) => "get_tx",
            WireMessage::CheckSync { .. } => "check_sync",
            WireMessage::PpbPayload { .. } => "ppb_payload",
            WireMessage::BlockHeaderMsg { .. } => "block_header",
            WireMessage::FullBlock { .. } => "full_block",
            WireMessage::Inv { .. } => "inv",
            WireMessage::GetData(_) => "get_data",
            WireMessage::BlockHashAnnounce { .. } => "block_hash_announce",
            WireMessage::GetHeader(_) => "get_header",
            WireMessage::GetBody(_) => "get_body",
            WireMessage::CompactBlock { .. } => "compact_block",
            WireMessage::GetMissedTxs { .. } => "get_missed_txs",
            WireMessage::MissedTxs { .. } => "missed_txs",
        }
    }
}
