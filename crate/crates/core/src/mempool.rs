//! Per-node transaction pool: per-account nonce queues, the deterministic
//! time-specific selection/ordering used for pre-packed bodies, the legacy
//! (Ethereum-style) selection used by baseline miners, the reset on block
//! commit, and the PPB merge rule used during synchronization.

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::chain::{body_hash, AccountId, Block, Hash256, Transaction};

#[derive(Clone, Debug)]
pub struct PoolEntry {
    pub tx: Transaction,
    /// This node's receive time; the anti-spoof check during PPB merge keys
    /// off it, never off the (forgeable) creation timestamp.
    pub local_ts: u64,
    pub is_local: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Error)]
pub enum InsertError {
    #[error("stale transaction")]
    Stale,
    #[error("duplicate transaction")]
    Duplicate,
}

/// A node's anticipated ordered body for the next block.
#[derive(Clone, Debug)]
pub struct PrePackedBody {
    pub txs: Vec<Transaction>,
    pub body_hash: Hash256,
    pub threshold_t: u64,
}

impl PrePackedBody {
    pub fn new(txs: Vec<Transaction>, threshold_t: u64) -> PrePackedBody {
        let body_hash = body_hash(&txs);
        PrePackedBody {
            txs,
            body_hash,
            threshold_t,
        }
    }

    pub fn empty(threshold_t: u64) -> PrePackedBody {
        PrePackedBody::new(Vec::new(), threshold_t)
    }
}

#[derive(Clone, Default, Debug)]
pub struct TxPool {
    queues: HashMap<AccountId, BTreeMap<u64, PoolEntry>>,
    by_hash: HashMap<Hash256, (AccountId, u64)>,
    committed: HashMap<AccountId, u64>,
}

impl TxPool {
    pub fn new() -> TxPool {
        TxPool::default()
    }

    pub fn len(&self) -> usize {
        self.by_hash.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_hash.is_empty()
    }

    pub fn contains(&self, h: &Hash256) -> bool {
        self.by_hash.contains_key(h)
    }

    pub fn entry(&self, h: &Hash256) -> Option<&PoolEntry> {
        let (acct, nonce) = self.by_hash.get(h)?;
        self.queues.get(acct)?.get(nonce)
    }

    pub fn committed_nonce(&self, acct: AccountId) -> u64 {
        self.committed.get(&acct).copied().unwrap_or(0)
    }

    /// Records the committed nonce for an account (e.g. from genesis state).
    pub fn observe_nonce(&mut self, acct: AccountId, nonce: u64) {
        let e = self.committed.entry(acct).or_insert(0);
        if nonce > *e {
            *e = nonce;
        }
    }

    /// Inserts a transaction at its nonce position. Stale transactions
    /// (nonce at or below the committed account nonce) and duplicates are
    /// rejected; future nonces are queued.
    pub fn insert(
        &mut self,
        tx: Transaction,
        local_ts: u64,
        is_local: bool,
    ) -> Result<(), InsertError> {
        if tx.nonce <= self.committed_nonce(tx.sender) {
            return Err(InsertError::Stale);
        }
        if self.by_hash.contains_key(&tx.hash()) {
            return Err(InsertError::Duplicate);
        }
        let queue = self.queues.entry(tx.sender).or_default();
        if queue.contains_key(&tx.nonce) {
            // Same (account, nonce) with different content: first one wins.
            return Err(InsertError::Duplicate);
        }
        self.by_hash.insert(tx.hash(), (tx.sender, tx.nonce));
        queue.insert(
            tx.nonce,
            PoolEntry {
                tx,
                local_ts,
                is_local,
            },
        );
        Ok(())
    }

    /// Time-specific selection and ordering.
    ///
    /// Only transactions created at or before `t` are eligible; candidates
    /// are the per-account queue heads contiguous from the committed nonce,
    /// and the loop greedily picks the highest gas price, breaking ties by
    /// the higher transaction hash. Selection stops when the best candidate
    /// no longer fits the gas budget. Transactions flagged local-only never
    /// gossip, so they are excluded to keep the result reproducible at every
    /// node.
    pub fn tso_select(&self, t: u64, gas_limit: u64) -> PrePackedBody {
        let mut queues: HashMap<AccountId, Vec<&Transaction>> = HashMap::new();
        for (acct, q) in &self.queues {
            let mut next = self.committed_nonce(*acct) + 1;
            let mut list = Vec::new();
            for (nonce, e) in q {
                if *nonce != next || e.tx.is_local_only {
                    break;
                }
                list.push(&e.tx);
                next += 1;
            }
            if !list.is_empty() {
                queues.insert(*acct, list);
            }
        }
        let txs = tso_order(queues, t, gas_limit);
        PrePackedBody::new(txs, t)
    }

    /// Baseline miner selection: local transactions first, then gas price,
    /// then earliest local receive time, subject to per-account nonce order
    /// and the gas budget.
    pub fn legacy_select(&self, gas_limit: u64) -> Vec<Transaction> {
        let mut heads: BTreeMap<AccountId, usize> = BTreeMap::new();
        let mut queues: HashMap<AccountId, Vec<&PoolEntry>> = HashMap::new();
        for (acct, q) in &self.queues {
            let mut next = self.committed_nonce(*acct) + 1;
            let mut list = Vec::new();
            for (nonce, e) in q {
                if *nonce != next {
                    break;
                }
                list.push(e);
                next += 1;
            }
            if !list.is_empty() {
                queues.insert(*acct, list);
                heads.insert(*acct, 0);
            }
        }
        let mut out = Vec::new();
        let mut gas_left = gas_limit;
        loop {
            let best = heads
                .iter()
                .map(|(acct, idx)| (queues[acct][*idx], *acct))
                .max_by(|(a, aid), (b, bid)| {
                    a.is_local
                        .cmp(&b.is_local)
                        .then(a.tx.gas_price.cmp(&b.tx.gas_price))
                        .then(b.local_ts.cmp(&a.local_ts))
                        .then(b.tx.hash().cmp(&a.tx.hash()))
                        .then(bid.cmp(aid))
                });
            let Some((entry, acct)) = best else { break };
            if entry.tx.gas_used > gas_left {
                break;
            }
            gas_left -= entry.tx.gas_used;
            out.push(entry.tx.clone());
            let idx = heads[&acct] + 1;
            if idx < queues[&acct].len() {
                heads.insert(acct, idx);
            } else {
                heads.remove(&acct);
            }
        }
        out
    }

    /// Pool reset on block commit: removes the block's transactions and
    /// sweeps everything made stale by the new committed nonces.
    pub fn reset(&mut self, block: &Block) {
        for tx in &block.body {
            self.observe_nonce(tx.sender, tx.nonce);
        }
        for tx in &block.body {
            if let Some((acct, nonce)) = self.by_hash.remove(&tx.hash()) {
                if let Some(q) = self.queues.get_mut(&acct) {
                    q.remove(&nonce);
                }
            }
        }
        // Stale sweep.
        let committed = &self.committed;
        for (acct, q) in self.queues.iter_mut() {
            let floor = committed.get(acct).copied().unwrap_or(0);
            while let Some((&nonce, e)) = q.iter().next() {
                if nonce <= floor {
                    self.by_hash.remove(&e.tx.hash());
                    q.remove(&nonce);
                } else {
                    break;
                }
            }
        }
        self.queues.retain(|_, q| !q.is_empty());
    }

    /// Debug dump of the pool contents, one CSV row per entry.
    pub fn dump_csv(&self) -> String {
        let mut rows: Vec<String> = Vec::new();
        for (acct, q) in &self.queues {
            for (nonce, e) in q {
                rows.push(format!(
                    "{},{},{},{},{},{}",
                    e.tx.hash().to_hex(),
                    acct.0,
                    nonce,
                    e.tx.gas_price,
                    e.tx.created_ts,
                    e.local_ts
                ));
            }
        }
        rows.sort();
        let mut out = String::from("tx_hash,account,nonce,gas_price,created_ts,local_ts\n");
        for r in rows {
            out.push_str(&r);
            out.push('\n');
        }
        out
    }
}

/// Core TSO ordering over per-account nonce-ascending candidate queues.
fn tso_order(
    queues: HashMap<AccountId, Vec<&Transaction>>,
    t: u64,
    gas_limit: u64,
) -> Vec<Transaction> {
    // Candidate set keyed by (gas_price, hash); max element is the pick.
    let mut candidates: BTreeMap<(u64, Hash256), (AccountId, usize)> = BTreeMap::new();
    for (acct, q) in &queues {
        let head = q[0];
        if head.created_ts <= t {
            candidates.insert((head.gas_price, head.hash()), (*acct, 0));
        }
    }
    let mut out = Vec::new();
    let mut gas_left = gas_limit;
    while let Some((&key, &(acct, idx))) = candidates.iter().next_back() {
        let tx = queues[&acct][idx];
        if tx.gas_used > gas_left {
            break;
        }
        gas_left -= tx.gas_used;
        out.push(tx.clone());
        candidates.remove(&key);
        let next = idx + 1;
        if let Some(n) = queues[&acct].get(next) {
            if n.created_ts <= t {
                candidates.insert((n.gas_price, n.hash()), (acct, next));
            }
        }
    }
    out
}

/// Merges a neighbor's PPB transactions into the local one.
///
/// Remote transactions are only considered if they are already known to the
/// local pool with a receive time no later than `t + delta` (the anti-spoof
/// rule); the union is then re-ordered by the TSO rules under the gas budget.
pub fn merge_ppb(
    local: &PrePackedBody,
    remote_txs: &[Transaction],
    pool: &TxPool,
    t: u64,
    delta: u64,
    gas_limit: u64,
) -> PrePackedBody {
    let mut union: HashMap<Hash256, &Transaction> = HashMap::new();
    for tx in &local.txs {
        union.insert(tx.hash(), tx);
    }
    for tx in remote_txs {
        if tx.created_ts > t {
            continue;
        }
        match pool.entry(&tx.hash()) {
            Some(e) if e.local_ts <= t + delta => {
                union.entry(tx.hash()).or_insert(&e.tx);
            }
            _ => {}
        }
    }
    // Rebuild contiguous per-account nonce queues from the union.
    let mut by_acct: HashMap<AccountId, BTreeMap<u64, &Transaction>> = HashMap::new();
    for tx in union.values() {
        by_acct.entry(tx.sender).or_default().insert(tx.nonce, tx);
    }
    let mut queues: HashMap<AccountId, Vec<&Transaction>> = HashMap::new();
    for (acct, q) in &by_acct {
        let mut next = pool.committed_nonce(*acct) + 1;
        let mut list = Vec::new();
        for (nonce, tx) in q {
            if *nonce != next {
                break;
            }
            list.push(*tx);
            next += 1;
        }
        if !list.is_empty() {
            queues.insert(*acct, list);
        }
    }
    PrePackedBody::new(tso_order(queues, t, gas_limit), t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::Recipient;

    const GAS: u64 = 21_000;
    const LIMIT: u64 = 100 * GAS;

    fn tx(sender: u64, nonce: u64, gas_price: u64, created_ts: u64, amount: u64) -> Transaction {
        Transaction::new(
            AccountId(sender),
            Recipient::Account(AccountId(1000 + sender)),
            nonce,
            gas_price,
            GAS,
            amount,
            created_ts,
            0,
        )
    }

    #[test]
    fn insert_head_duplicate_and_stale() {
        let mut pool = TxPool::new();
        let t = tx(1, 1, 5, 0, 1);
        assert_eq!(pool.insert(t.clone(), 0, false), Ok(()));
        assert_eq!(pool.insert(t.clone(), 0, false), Err(InsertError::Duplicate));
        // Same (account, nonce), different content: first one wins.
        assert_eq!(
            pool.insert(tx(1, 1, 5, 0, 2), 0, false),
            Err(InsertError::Duplicate)
        );
        pool.observe_nonce(AccountId(2), 3);
        assert_eq!(pool.insert(tx(2, 1, 5, 0, 1), 0, false), Err(InsertError::Stale));
        assert_eq!(pool.len(), 1);
    }

    #[test]
    fn tso_excludes_future_and_breaks_ties_by_hash() {
        // A and B tie at gas 5; C has the best gas price but a timestamp past
        // the threshold and must not be selected.
        let mut pool = TxPool::new();
        let a = tx(1, 1, 5, 10, 1);
        let b = tx(2, 1, 5, 12, 1);
        let c = tx(3, 1, 7, 20, 1);
        for t in [&a, &b, &c] {
            pool.insert(t.clone(), t.created_ts, false).unwrap();
        }
        let ppb = pool.tso_select(15, LIMIT);
        let (hi, lo) = if a.hash() > b.hash() { (a, b) } else { (b, a) };
        assert_eq!(ppb.txs, vec![hi, lo]);
    }

    #[test]
    fn tso_only_queue_heads_compete() {
        // D: nonce1 gas 1, nonce2 gas 9; E: nonce1 gas 5. D2's high price
        // cannot jump ahead of D1, so the order is E1, D1, D2.
        let mut pool = TxPool::new();
        let d1 = tx(4, 1, 1, 0, 1);
        let d2 = tx(4, 2, 9, 0, 1);
        let e1 = tx(5, 1, 5, 0, 1);
        for t in [&d1, &d2, &e1] {
            pool.insert(t.clone(), 0, false).unwrap();
        }
        let ppb = pool.tso_select(10, LIMIT);
        assert_eq!(ppb.txs, vec![e1, d1, d2]);
    }

    #[test]
    fn tso_stops_when_best_candidate_does_not_fit() {
        // Budget 2.5 blocks of one tx; after the first pick the best-priced
        // candidate is too large, and selection stops rather than skipping to
        // a smaller, cheaper one.
        let big = Transaction::new(AccountId(1), Recipient::Account(AccountId(7)), 1, 10, 80, 1, 0, 0);
        let wide = Transaction::new(AccountId(2), Recipient::Account(AccountId(8)), 1, 9, 90, 1, 0, 0);
        let small = Transaction::new(AccountId(3), Recipient::Account(AccountId(9)), 1, 1, 10, 1, 0, 0);
        let mut pool = TxPool::new();
        for t in [&big, &wide, &small] {
            pool.insert(t.clone(), 0, false).unwrap();
        }
        let ppb = pool.tso_select(10, 100);
        assert_eq!(ppb.txs, vec![big]);
    }

    #[test]
    fn tso_skips_local_only_txs() {
        let mut pool = TxPool::new();
        let withheld = tx(1, 1, 50, 0, 1).local_only();
        let normal = tx(2, 1, 5, 0, 1);
        pool.insert(withheld, 0, true).unwrap();
        pool.insert(normal.clone(), 0, false).unwrap();
        assert_eq!(pool.tso_select(10, LIMIT).txs, vec![normal]);
    }

    #[test]
    fn tso_respects_threshold_on_promotion() {
        // Second tx of the account was created after T: only the head is taken.
        let mut pool = TxPool::new();
        let t1 = tx(1, 1, 5, 5, 1);
        let t2 = tx(1, 2, 9, 50, 1);
        pool.insert(t1.clone(), 5, false).unwrap();
        pool.insert(t2, 50, false).unwrap();
        assert_eq!(pool.tso_select(10, LIMIT).txs, vec![t1]);
    }

    #[test]
    fn legacy_prefers_local_then_gas_then_receive_time() {
        let mut pool = TxPool::new();
        let local_cheap = tx(1, 1, 2, 0, 1);
        let remote_rich = tx(2, 1, 50, 0, 1);
        pool.insert(local_cheap.clone(), 0, true).unwrap();
        pool.insert(remote_rich.clone(), 0, false).unwrap();
        assert_eq!(pool.legacy_select(LIMIT), vec![local_cheap, remote_rich]);

        let mut pool = TxPool::new();
        let early = tx(3, 1, 5, 0, 1);
        let late = tx(4, 1, 5, 0, 1);
        pool.insert(early.clone(), 10, false).unwrap();
        pool.insert(late.clone(), 12, false).unwrap();
        assert_eq!(pool.legacy_select(LIMIT), vec![early, late]);
    }

    #[test]
    fn legacy_respects_nonce_order() {
        // One account's (gas 2, gas 9) chain against another's gas-5 head:
        // heads are gas2 and gas5, so gas5 goes first, then the chain.
        let mut pool = TxPool::new();
        let d1 = tx(1, 1, 2, 0, 1);
        let d2 = tx(1, 2, 9, 0, 1);
        let e1 = tx(2, 1, 5, 0, 1);
        for t in [&d1, &d2, &e1] {
            pool.insert(t.clone(), 0, false).unwrap();
        }
        assert_eq!(pool.legacy_select(LIMIT), vec![e1, d1, d2]);
    }

    fn block_with(txs: Vec<Transaction>) -> Block {
        use crate::chain::{body_hash, BlockHeader, Hash256};
        Block {
            header: BlockHeader {
                parent_hash: Hash256::ZERO,
                number: 1,
                timestamp: 1,
                coinbase: AccountId(0),
                txs_hash: body_hash(&txs),
                state_root: Hash256::ZERO,
            },
            body: txs,
        }
    }

    #[test]
    fn reset_removes_block_txs_and_stale_entries() {
        let mut pool = TxPool::new();
        let n2 = tx(1, 2, 5, 0, 1);
        let n4 = tx(1, 4, 5, 0, 1);
        pool.observe_nonce(AccountId(1), 1);
        pool.insert(n2.clone(), 0, false).unwrap();
        pool.insert(n4.clone(), 0, false).unwrap();
        // The committed block carries the account's nonce-3 tx (not in pool).
        let n3 = tx(1, 3, 5, 0, 2);
        pool.reset(&block_with(vec![n3]));
        assert!(!pool.contains(&n2.hash()));
        assert!(pool.contains(&n4.hash()));
        assert_eq!(pool.committed_nonce(AccountId(1)), 3);
    }

    #[test]
    fn reset_empties_pool_of_committed_txs() {
        let mut pool = TxPool::new();
        let t = tx(1, 1, 5, 0, 1);
        pool.insert(t.clone(), 0, false).unwrap();
        pool.reset(&block_with(vec![t]));
        assert!(pool.is_empty());
    }

    #[test]
    fn merge_is_idempotent_on_own_txs() {
        let mut pool = TxPool::new();
        let a = tx(1, 1, 5, 0, 1);
        let b = tx(2, 1, 7, 0, 1);
        pool.insert(a.clone(), 0, false).unwrap();
        pool.insert(b.clone(), 0, false).unwrap();
        let local = pool.tso_select(10, LIMIT);
        let merged = merge_ppb(&local, &local.txs.clone(), &pool, 10, 1000, LIMIT);
        assert_eq!(merged.body_hash, local.body_hash);
    }

    #[test]
    fn merge_rejects_late_local_receipt() {
        // The remote tx is known locally, but it arrived after T + delta:
        // the anti-spoof rule keeps it out of the merged body.
        let (t, delta) = (10u64, 1000u64);
        let mut pool = TxPool::new();
        let a = tx(1, 1, 5, 0, 1);
        let spoofed = tx(2, 1, 9, 0, 1);
        pool.insert(a.clone(), 0, false).unwrap();
        pool.insert(spoofed.clone(), t + delta + 1, false).unwrap();
        let local = PrePackedBody::new(vec![a.clone()], t);
        let merged = merge_ppb(&local, &[spoofed], &pool, t, delta, LIMIT);
        assert_eq!(merged.txs, vec![a]);
    }

    #[test]
    fn merge_ignores_unknown_remote_txs() {
        let mut pool = TxPool::new();
        let a = tx(1, 1, 5, 0, 1);
        pool.insert(a.clone(), 0, false).unwrap();
        let stranger = tx(9, 1, 50, 0, 1);
        let local = PrePackedBody::new(vec![a.clone()], 10);
        let merged = merge_ppb(&local, &[stranger], &pool, 10, 1000, LIMIT);
        assert_eq!(merged.txs, vec![a]);
    }

    #[test]
    fn merge_converges_two_views_to_the_union() {
        // X holds {a,b}, Y holds {b,c}; both know all three txs with timely
        // receive times, so one exchange lands both on TSO({a,b,c}).
        let a = tx(1, 1, 5, 0, 1);
        let b = tx(2, 1, 7, 0, 1);
        let c = tx(3, 1, 3, 0, 1);
        let mut pool = TxPool::new();
        for t in [&a, &b, &c] {
            pool.insert(t.clone(), 0, false).unwrap();
        }
        let full = pool.tso_select(10, LIMIT);
        let x = PrePackedBody::new(vec![a.clone(), b.clone()], 10);
        let y = PrePackedBody::new(vec![b.clone(), c.clone()], 10);
        let x2 = merge_ppb(&x, &y.txs, &pool, 10, 1000, LIMIT);
        let y2 = merge_ppb(&y, &x.txs, &pool, 10, 1000, LIMIT);
        assert_eq!(x2.body_hash, full.body_hash);
        assert_eq!(y2.body_hash, full.body_hash);
    }

    #[test]
    fn dump_csv_lists_all_entries() {
        let mut pool = TxPool::new();
        pool.insert(tx(1, 1, 5, 3, 1), 4, false).unwrap();
        pool.insert(tx(2, 1, 7, 5, 1), 6, false).unwrap();
        let dump = pool.dump_csv();
        assert_eq!(dump.lines().count(), 3);
        assert!(dump.starts_with("tx_hash,account,nonce,gas_price,created_ts,local_ts\n"));
    }
}
