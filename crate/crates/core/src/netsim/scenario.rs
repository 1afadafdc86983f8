//! Run configuration: one deserializable struct with defaults for every
//! knob, so a scenario file only has to name what it changes.

use serde::{Deserialize, Serialize};

use crate::protocols::messages::SizeTable;
use crate::protocols::node::{CostModel, NodeConfig, ProtocolKind};

pub const GAS_PER_TRANSFER: u64 = 21_000;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub protocol: ProtocolKind,
    pub seed: u64,
    pub n_nodes: usize,
    pub n_blocks: u64,
    /// Mean block interval in seconds.
    pub block_interval_s: f64,
    /// Target transactions per block; drives both the workload rate and the
    /// default gas limit.
    pub txs_per_block: u64,
    /// Block gas limit; 0 means `txs_per_block * GAS_PER_TRANSFER`.
    pub gas_limit: u64,
    /// Number of workload sender accounts; 0 means `max(64, 4 * txs_per_block)`.
    pub n_accounts: usize,
    pub bandwidth_mbps: f64,
    pub sizes: SizeTable,
    pub cost: CostModel,
    /// Receive-time slack (ms) accepted when merging a neighbor's body.
    pub delta_ms: u64,
    pub max_sync_rounds: u32,
    pub rebuild_delay_ms: u64,
    /// Grace period (ms) before a body-hash mismatch draws a payload.
    pub sync_recheck_ms: u64,
    /// Interval (ms) between periodic body-hash re-announcements.
    pub sync_heartbeat_ms: u64,
    pub bhp_t1_ms: u64,
    pub bhp_t2_ms: u64,
    /// Fraction of transactions paying the coinbase placeholder.
    pub coinbase_tx_fraction: f64,
    /// Fraction of transactions gossiped only shortly before the next block.
    pub late_tx_fraction: f64,
    /// Fraction of transactions submitted directly to a miner and not
    /// gossiped; they still enter that miner's pre-packed body.
    pub local_tx_fraction: f64,
    /// Fraction of transactions a miner never shares: excluded from shared
    /// pre-packing, appearing only in that miner's own blocks.
    pub withheld_tx_fraction: f64,
    /// Fraction of nodes that mine; winners are drawn uniformly from this
    /// subset. At least one node always mines.
    pub miner_fraction: f64,
    /// Fraction of nodes that mine from their private pool view instead of
    /// the shared pre-packed body.
    pub dishonest_fraction: f64,
    /// Preferential-attachment links per new node.
    pub attach_m: usize,
    /// Edge rewiring probability.
    pub rewire_p: f64,
    /// Retransmission penalty multiplier applied on message loss.
    pub retx_multiplier: f64,
    /// Extra simulated time (s) after the last mining event.
    pub drain_s: f64,
}

impl Default for Scenario {
    fn default() -> Scenario {
        Scenario {
            name: "default".into(),
            protocol: ProtocolKind::Bbp,
            seed: 1,
            n_nodes: 100,
            n_blocks: 20,
            block_interval_s: 15.0,
            txs_per_block: 200,
            gas_limit: 0,
            n_accounts: 0,
            bandwidth_mbps: 55.0,
            sizes: SizeTable::default(),
            cost: CostModel::default(),
            delta_ms: 1000,
            max_sync_rounds: 4,
            rebuild_delay_ms: 100,
            sync_recheck_ms: 2000,
            sync_heartbeat_ms: 2000,
            bhp_t1_ms: 400,
            bhp_t2_ms: 100,
            coinbase_tx_fraction: 0.0,
            late_tx_fraction: 0.0,
            local_tx_fraction: 0.0,
            withheld_tx_fraction: 0.0,
            miner_fraction: 1.0,
            dishonest_fraction: 0.0,
            attach_m: 3,
            rewire_p: 0.1,
            retx_multiplier: 1.0,
            drain_s: 10.0,
        }
    }
}

impl Scenario {
    pub fn effective_gas_limit(&self) -> u64 {
        if self.gas_limit > 0 {
            self.gas_limit
        } else {
            self.txs_per_block * GAS_PER_TRANSFER
        }
    }

    pub fn effective_accounts(&self) -> usize {
        if self.n_accounts > 0 {
            self.n_accounts
        } else {
            (4 * self.txs_per_block as usize).max(64)
        }
    }

    pub fn bandwidth_bps(&self) -> f64 {
        self.bandwidth_mbps * 1_000_000.0
    }

    /// Coinbase account of a node; far outside the workload account range so
    /// miner rewards never interfere with workload balances.
    pub fn coinbase_of(&self, node: usize) -> u64 {
        1_000_000_000 + node as u64
    }

    pub fn node_config(&self, node: usize) -> NodeConfig {
        NodeConfig {
            kind: self.protocol,
            coinbase: crate::chain::AccountId(self.coinbase_of(node)),
            gas_limit: self.effective_gas_limit(),
            delta_ms: self.delta_ms,
            max_sync_rounds: self.max_sync_rounds,
            rebuild_delay_ms: self.rebuild_delay_ms,
            sync_recheck_ms: self.sync_recheck_ms,
            sync_heartbeat_ms: self.sync_heartbeat_ms,
            bhp_t1_ms: self.bhp_t1_ms,
            bhp_t2_ms: self.bhp_t2_ms,
            dishonest_miner: false,
            sizes: self.sizes,
            cost: self.cost,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.n_nodes < 2 {
            return Err("n_nodes must be at least 2".into());
        }
        if self.n_blocks == 0 {
            return Err("n_blocks must be positive".into());
        }
        if !(self.block_interval_s > 0.0) {
            return Err("block_interval_s must be positive".into());
        }
        if !(self.bandwidth_mbps > 0.0) {
            return Err("bandwidth_mbps must be positive".into());
        }
        for (name, v) in [
            ("coinbase_tx_fraction", self.coinbase_tx_fraction),
            ("late_tx_fraction", self.late_tx_fraction),
            ("local_tx_fraction", self.local_tx_fraction),
            ("withheld_tx_fraction", self.withheld_tx_fraction),
            ("miner_fraction", self.miner_fraction),
            ("dishonest_fraction", self.dishonest_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} must be within [0, 1]"));
            }
        }
        if self.late_tx_fraction + self.local_tx_fraction + self.withheld_tx_fraction > 1.0 {
            return Err("tx special-fraction sum exceeds 1".into());
        }
        if self.sync_heartbeat_ms == 0 {
            return Err("sync_heartbeat_ms must be positive".into());
        }
        if self.attach_m == 0 {
            return Err("attach_m must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.rewire_p) {
            return Err("rewire_p must be within [0, 1]".into());
        }
        if self.retx_multiplier < 0.0 {
            return Err("retx_multiplier must be non-negative".into());
        }
        Ok(())
    }
}
