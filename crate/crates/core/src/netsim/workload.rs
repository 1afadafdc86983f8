//! Pre-generated run plan: mining schedule, transaction workload and genesis
//! balances. Everything is drawn up front from one seeded generator, so a
//! scenario always replays identically.

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::chain::{AccountId, AccountState, Recipient, Transaction};
use crate::netsim::scenario::{Scenario, GAS_PER_TRANSFER};
use crate::protocols::NodeId;

/// Plenty for any workload: the richest transaction costs amount + fee
/// ≤ 1000 + 100 * 21000 wei, and accounts send a few thousand each.
const GENESIS_BALANCE: u64 = 1_000_000_000_000;

#[derive(Clone, Debug)]
pub enum TxPlanKind {
    /// Created at `origin`, gossiped immediately.
    Normal,
    /// Reaches only the next winner `holder` in time for its block; the
    /// gossip release at `release_ms` trails the mine, so peers first see the
    /// transaction inside the block (or a missed-tx reply) rather than in
    /// their pools.
    Late { holder: NodeId, release_ms: u64 },
    /// Submitted directly to a miner and never gossiped before commit; the
    /// miner still pre-packs it like any pool transaction.
    Local { holder: NodeId },
    /// Never gossiped and excluded from shared pre-packing; appears only in
    /// the holding miner's own (legacy-selected) blocks.
    Withheld { holder: NodeId },
}

#[derive(Clone, Debug)]
pub struct PlannedTx {
    pub tx: Transaction,
    pub origin: NodeId,
    pub kind: TxPlanKind,
}

#[derive(Clone, Debug)]
pub struct Plan {
    /// (time_ms, winner), strictly increasing in time.
    pub mine_schedule: Vec<(u64, NodeId)>,
    /// Sorted by creation time.
    pub txs: Vec<PlannedTx>,
    pub genesis_accounts: Vec<(AccountId, AccountState)>,
    pub dishonest: Vec<bool>,
    /// Nodes eligible to win mining events.
    pub miners: Vec<NodeId>,
}

fn exp_ms(rng: &mut ChaCha12Rng, mean_ms: f64) -> u64 {
    let u: f64 = rng.gen_range(f64::EPSILON..1.0);
    (-mean_ms * u.ln()).max(1.0) as u64
}

pub fn build_plan(sc: &Scenario, rng: &mut ChaCha12Rng) -> Plan {
    let n_accounts = sc.effective_accounts();
    let mean_interval_ms = sc.block_interval_s * 1000.0;

    let n_miners = ((sc.miner_fraction * sc.n_nodes as f64).round() as usize)
        .clamp(1, sc.n_nodes);
    let mut miners: Vec<NodeId> = {
        let mut ids: Vec<NodeId> = (0..sc.n_nodes).collect();
        for i in 0..n_miners {
            let j = rng.gen_range(i..ids.len());
            ids.swap(i, j);
        }
        ids.truncate(n_miners);
        ids
    };
    miners.sort_unstable();

    let mut mine_schedule = Vec::with_capacity(sc.n_blocks as usize);
    let mut t = 0u64;
    for _ in 0..sc.n_blocks {
        t += exp_ms(rng, mean_interval_ms);
        mine_schedule.push((t, miners[rng.gen_range(0..miners.len())]));
    }
    let last_mine = t;

    let dishonest_count = (sc.dishonest_fraction * sc.n_nodes as f64).round() as usize;
    let mut dishonest = vec![false; sc.n_nodes];
    {
        let mut ids: Vec<usize> = (0..sc.n_nodes).collect();
        for i in 0..dishonest_count.min(sc.n_nodes) {
            let j = rng.gen_range(i..ids.len());
            ids.swap(i, j);
            dishonest[ids[i]] = true;
        }
    }

    // Transaction stream: Poisson with rate txs_per_block per block interval,
    // stopped slightly before the last mine so late blocks are not starved of
    // a drained pool.
    let mean_tx_gap_ms = mean_interval_ms / sc.txs_per_block.max(1) as f64;
    let mut txs = Vec::new();
    let mut nonces = vec![0u64; n_accounts];
    let mut t_tx = 0u64;
    while sc.txs_per_block > 0 {
        t_tx += exp_ms(rng, mean_tx_gap_ms).max(1);
        if t_tx >= last_mine {
            break;
        }
        let sender_idx = rng.gen_range(0..n_accounts);
        nonces[sender_idx] += 1;
        let origin = rng.gen_range(0..sc.n_nodes);
        let roll: f64 = rng.gen();
        let recipient = if roll < sc.coinbase_tx_fraction {
            Recipient::Coinbase
        } else {
            let mut r = rng.gen_range(0..n_accounts);
            if r == sender_idx {
                r = (r + 1) % n_accounts;
            }
            Recipient::Account(AccountId(r as u64))
        };
        let roll2: f64 = rng.gen();
        let kind = if roll2 < sc.late_tx_fraction {
            // Handed to the winner of the next block just in time for that
            // block; everyone else learns of it from the block itself.
            match mine_schedule.iter().find(|(mt, _)| *mt > t_tx + 25) {
                Some(&(mt, winner)) => TxPlanKind::Late {
                    holder: winner,
                    release_ms: mt + 50,
                },
                None => TxPlanKind::Normal,
            }
        } else if roll2 < sc.late_tx_fraction + sc.local_tx_fraction {
            TxPlanKind::Local {
                holder: miners[rng.gen_range(0..miners.len())],
            }
        } else if roll2 < sc.late_tx_fraction + sc.local_tx_fraction + sc.withheld_tx_fraction {
            TxPlanKind::Withheld {
                holder: miners[rng.gen_range(0..miners.len())],
            }
        } else {
            TxPlanKind::Normal
        };
        let mut tx = Transaction::new(
            AccountId(sender_idx as u64),
            recipient,
            nonces[sender_idx],
            rng.gen_range(1..=100),
            GAS_PER_TRANSFER,
            rng.gen_range(1..=1000),
            t_tx,
            origin,
        );
        if matches!(kind, TxPlanKind::Withheld { .. }) {
            tx = tx.local_only();
        }
        txs.push(PlannedTx { tx, origin, kind });
    }

    let genesis_accounts = (0..n_accounts)
        .map(|i| {
            (
                AccountId(i as u64),
                AccountState {
                    nonce: 0,
                    balance: GENESIS_BALANCE,
                },
            )
        })
        .collect();

    Plan {
        mine_schedule,
        txs,
        genesis_accounts,
        dishonest,
        miners,
    }
}
