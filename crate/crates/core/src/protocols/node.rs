//! Event-driven protocol state machines.
//!
//! A [`Node`] owns one simulated peer: its chain store, transaction pool,
//! pre-packed body and per-protocol bookkeeping. Handlers are transition
//! functions from one event to a list of outgoing actions; they never read
//! clocks or perform I/O, which keeps every protocol unit-testable and the
//! whole simulation deterministic.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::chain::{AccountId, Block, BlockHeader, Hash256, Transaction, WorldState};
use crate::execution::{
    finalize_validate, full_validate, pre_validate, seal_from_prevalidation, seal_from_txs,
    ValidateMismatch, ValidationInfo,
};
use crate::mempool::{merge_ppb, InsertError, PrePackedBody, TxPool};
use crate::protocols::messages::{SizeTable, WireMessage};

pub type NodeId = usize;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolKind {
    Bbp,
    Lbp,
    Bhp,
    Cbp,
}

impl ProtocolKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ProtocolKind::Bbp => "bbp",
            ProtocolKind::Lbp => "lbp",
            ProtocolKind::Bhp => "bhp",
            ProtocolKind::Cbp => "cbp",
        }
    }
}

/// Simulated validation costs in milliseconds; charged as virtual time, so
/// runs are deterministic and independent of the host machine.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CostModel {
    pub t_h_ms: f64,
    pub t_e_ms: f64,
    pub t_w_ms: f64,
    pub t_r_ms: f64,
}

impl Default for CostModel {
    fn default() -> CostModel {
        // Calibrated so that header validation of a 2000-tx pre-validated
        // block costs ~12 ms (t_h + n_t * t_r) and full validation of a
        // 200-tx block costs ~102 ms, in line with the Ethereum-testbed
        // anchor the default scenario reproduces.
        CostModel {
            t_h_ms: 2.0,
            t_e_ms: 0.4,
            t_w_ms: 0.1,
            t_r_ms: 0.005,
        }
    }
}

impl CostModel {
    pub fn full_validation_ms(&self, n_txs: usize) -> f64 {
        self.t_h_ms + n_txs as f64 * (self.t_e_ms + self.t_w_ms)
    }

    pub fn ppb_validation_ms(&self, n_txs: usize, n_unexec: usize) -> f64 {
        self.t_h_ms + (n_txs - n_unexec) as f64 * self.t_r_ms + n_unexec as f64 * self.t_e_ms
    }

    pub fn pre_execution_ms(&self, n_exec: usize) -> f64 {
        n_exec as f64 * (self.t_e_ms + self.t_w_ms)
    }
}

#[derive(Clone, Debug)]
pub struct NodeConfig {
    pub kind: ProtocolKind,
    pub coinbase: AccountId,
    pub gas_limit: u64,
    pub delta_ms: u64,
    pub max_sync_rounds: u32,
    pub rebuild_delay_ms: u64,
    /// Grace period before a body-hash mismatch is answered with a payload;
    /// ordinary transaction gossip heals most divergence within it.
    pub sync_recheck_ms: u64,
    /// Interval between periodic body-hash re-announcements.
    pub sync_heartbeat_ms: u64,
    pub bhp_t1_ms: u64,
    pub bhp_t2_ms: u64,
    pub dishonest_miner: bool,
    pub sizes: SizeTable,
    pub cost: CostModel,
}

impl NodeConfig {
    pub fn new(kind: ProtocolKind, coinbase: AccountId, gas_limit: u64) -> NodeConfig {
        NodeConfig {
            kind,
            coinbase,
            gas_limit,
            delta_ms: 1000,
            max_sync_rounds: 4,
            rebuild_delay_ms: 100,
            sync_recheck_ms: 2000,
            sync_heartbeat_ms: 2000,
            bhp_t1_ms: 400,
            bhp_t2_ms: 100,
            dishonest_miner: false,
            sizes: SizeTable::default(),
            cost: CostModel::default(),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum TimerKind {
    PpbRebuild(u64),
    /// Re-examine a neighbor whose announced body hash disagreed with ours.
    SyncRecheck(NodeId),
    /// Periodic body-hash re-announcement to all neighbors.
    SyncHeartbeat,
    BhpHeaderWait(Hash256),
    BhpBodyWait(Hash256),
}

#[derive(Clone, Debug)]
pub enum NodeEvent {
    Recv { from: NodeId, msg: WireMessage },
    Timer(TimerKind),
    /// This node won the mining lottery at the event time.
    MineSuccess,
    /// A transaction created at this node enters the pool; gossip may be
    /// withheld (late/local/withheld workload modeling).
    LocalTx { tx: Transaction, gossip: bool },
    /// Deferred gossip release of a previously withheld transaction.
    ReleaseTx(Hash256),
}

#[derive(Clone, Debug)]
pub enum Action {
    Send {
        to: NodeId,
        msg: WireMessage,
        /// Local processing time charged before the message leaves the node.
        delay_ms: f64,
    },
    StartTimer {
        kind: TimerKind,
        delay_ms: f64,
    },
    Note(TraceNote),
}

/// Measurement hooks emitted by handlers and recorded by the engine.
#[derive(Clone, Debug)]
pub enum TraceNote {
    Commit {
        block_hash: Hash256,
        parent_hash: Hash256,
        height: u64,
        n_txs: usize,
        hop: u32,
        processing_ms: f64,
        via_header: bool,
    },
    SyncStatus {
        height: u64,
        synced: bool,
    },
    StaleTx,
    TxAccepted(Hash256),
    CompactArrived {
        matched: bool,
    },
    InvalidBlock,
    SideBlock(Hash256),
}

/// Per-node view of the chain: committed head plus enough recent blocks and
/// post-states to validate siblings and perform a one-block reorg.
#[derive(Clone, Debug)]
pub struct ChainStore {
    pub head: Hash256,
    pub headers: HashMap<Hash256, BlockHeader>,
    pub blocks: HashMap<Hash256, Arc<Block>>,
    pub states: HashMap<Hash256, WorldState>,
}

impl ChainStore {
    pub fn new(genesis: Arc<Block>, genesis_state: WorldState) -> ChainStore {
        let h = genesis.hash();
        let mut headers = HashMap::new();
        headers.insert(h, genesis.header.clone());
        let mut blocks = HashMap::new();
        blocks.insert(h, genesis);
        let mut states = HashMap::new();
        states.insert(h, genesis_state);
        ChainStore {
            head: h,
            headers,
            blocks,
            states,
        }
    }

    pub fn head_header(&self) -> &BlockHeader {
        &self.headers[&self.head]
    }

    pub fn head_state(&self) -> &WorldState {
        &self.states[&self.head]
    }

    pub fn height(&self) -> u64 {
        self.head_header().number
    }

    pub fn knows(&self, h: &Hash256) -> bool {
        self.headers.contains_key(h)
    }

    fn insert(&mut self, block: Arc<Block>, state: WorldState) {
        let h = block.hash();
        self.headers.insert(h, block.header.clone());
        self.states.insert(h, state);
        self.blocks.insert(h, block);
    }

    fn prune(&mut self) {
        let keep_from = self.height().saturating_sub(2);
        let headers = &self.headers;
        self.states.retain(|h, _| headers[h].number >= keep_from);
        self.blocks.retain(|h, _| headers[h].number >= keep_from);
        // Headers stay; they are small and anchor duplicate detection.
    }
}

#[derive(Debug)]
struct BhpPending {
    announcers: Vec<NodeId>,
    header: Option<BlockHeader>,
    timer_started: bool,
}

#[derive(Debug)]
struct CbpPending {
    header: BlockHeader,
    tx_hashes: Arc<Vec<Hash256>>,
    from: NodeId,
    collected: HashMap<Hash256, Transaction>,
    hop: u32,
    retried: bool,
}

pub struct Node {
    pub id: NodeId,
    pub neighbors: Vec<NodeId>,
    pub cfg: NodeConfig,
    pub chain: ChainStore,
    pub pool: TxPool,
    pub ppb: Option<PrePackedBody>,
    pub vinfo: Option<ValidationInfo>,
    ppb_parent: Hash256,
    rebuild_gen: u64,
    rebuild_pending: bool,
    sync_rounds: u32,
    neighbor_hash: HashMap<NodeId, (u64, Hash256)>,
    replied_payload: HashSet<(NodeId, Hash256)>,
    /// Announcement snapshot per neighbor with a grace timer running; the
    /// payload is only sent when the same announcement is still current (and
    /// still mismatching) at expiry.
    recheck_pending: HashMap<NodeId, (u64, Hash256)>,
    sync_reported: HashSet<u64>,
    seen_txs: HashSet<Hash256>,
    requested_txs: HashSet<Hash256>,
    requested_blocks: HashSet<Hash256>,
    sent_block_to: HashSet<(Hash256, NodeId)>,
    inv_hop: HashMap<Hash256, u32>,
    bhp_pending: HashMap<Hash256, BhpPending>,
    cbp_pending: HashMap<Hash256, CbpPending>,
    served_compact: HashSet<(Hash256, NodeId)>,
    commit_hop: HashMap<Hash256, u32>,
    now_ms: u64,
    rng: ChaCha12Rng,
}

impl Node {
    pub fn new(
        id: NodeId,
        neighbors: Vec<NodeId>,
        cfg: NodeConfig,
        genesis: Arc<Block>,
        genesis_state: WorldState,
        seed: u64,
    ) -> Node {
        let mut pool = TxPool::new();
        for (acct, st) in genesis_state.iter() {
            if st.nonce > 0 {
                pool.observe_nonce(*acct, st.nonce);
            }
        }
        let genesis_hash = genesis.hash();
        let mut rng_seed = [0u8; 32];
        rng_seed[..8].copy_from_slice(&seed.to_le_bytes());
        rng_seed[8..16].copy_from_slice(&(id as u64).to_le_bytes());
        Node {
            id,
            neighbors,
            cfg,
            chain: ChainStore::new(genesis, genesis_state),
            pool,
            ppb: None,
            vinfo: None,
            ppb_parent: genesis_hash,
            rebuild_gen: 0,
            rebuild_pending: false,
            sync_rounds: 0,
            neighbor_hash: HashMap::new(),
            replied_payload: HashSet::new(),
            recheck_pending: HashMap::new(),
            sync_reported: HashSet::new(),
            seen_txs: HashSet::new(),
            requested_txs: HashSet::new(),
            requested_blocks: HashSet::new(),
            sent_block_to: HashSet::new(),
            inv_hop: HashMap::new(),
            bhp_pending: HashMap::new(),
            cbp_pending: HashMap::new(),
            served_compact: HashSet::new(),
            commit_hop: HashMap::new(),
            now_ms: 0,
            rng: ChaCha12Rng::from_seed(rng_seed),
        }
    }

    /// Builds the initial PPB (empty for the genesis threshold) and announces
    /// it; called once by the engine before the run starts.
    pub fn init(&mut self) -> Vec<Action> {
        if self.cfg.kind == ProtocolKind::Bbp {
            let mut actions = self.rebuild_ppb();
            // Desynchronize the first beat across nodes so announcements do
            // not arrive as network-wide bursts.
            let phase = self.rng.gen_range(0..self.cfg.sync_heartbeat_ms.max(1));
            actions.push(Action::StartTimer {
                kind: TimerKind::SyncHeartbeat,
                delay_ms: phase as f64,
            });
            actions
        } else {
            Vec::new()
        }
    }

    pub fn handle(&mut self, now_ms: u64, event: NodeEvent) -> Vec<Action> {
        self.now_ms = now_ms;
        match event {
            NodeEvent::Recv { from, msg } => self.on_message(from, msg),
            NodeEvent::Timer(kind) => self.on_timer(kind),
            NodeEvent::MineSuccess => self.on_mine(now_ms),
            NodeEvent::LocalTx { tx, gossip } => self.on_local_tx(tx, gossip),
            NodeEvent::ReleaseTx(h) => self.on_release_tx(h),
        }
    }

    // ---- transaction gossip -------------------------------------------------

    fn sqrt_fanout(&mut self, candidates: &[NodeId]) -> (Vec<NodeId>, Vec<NodeId>) {
        let deg = self.neighbors.len();
        let k = (deg as f64).sqrt().ceil() as usize;
        let mut shuffled = candidates.to_vec();
        shuffled.shuffle(&mut self.rng);
        let k = k.min(shuffled.len());
        let rest = shuffled.split_off(k);
        (shuffled, rest)
    }

    fn gossip_tx(&mut self, tx: &Transaction, exclude: Option<NodeId>) -> Vec<Action> {
        let candidates: Vec<NodeId> = self
            .neighbors
            .iter()
            .copied()
            .filter(|n| Some(*n) != exclude)
            .collect();
        let (full, rest) = self.sqrt_fanout(&candidates);
        let tx = Arc::new(tx.clone());
        let mut actions = Vec::new();
        for n in full {
            actions.push(Action::Send {
                to: n,
                msg: WireMessage::NewTx(tx.clone()),
                delay_ms: 0.0,
            });
        }
        for n in rest {
            actions.push(Action::Send {
                to: n,
                msg: WireMessage::TxHashAnnounce(tx.hash()),
                delay_ms: 0.0,
            });
        }
        actions
    }

    fn accept_tx(&mut self, tx: Transaction, is_local: bool) -> (bool, Vec<Action>) {
        let mut notes = Vec::new();
        let h = tx.hash();
        self.seen_txs.insert(h);
        match self.pool.insert(tx.clone(), self.now_ms, is_local) {
            Ok(()) => {
                notes.push(Action::Note(TraceNote::TxAccepted(h)));
                if self.cfg.kind == ProtocolKind::Bbp {
                    notes.extend(self.maybe_schedule_rebuild(&tx));
                }
                (true, notes)
            }
            Err(InsertError::Stale) => {
                notes.push(Action::Note(TraceNote::StaleTx));
                (false, notes)
            }
            Err(InsertError::Duplicate) => (false, notes),
        }
    }

    fn on_local_tx(&mut self, tx: Transaction, gossip: bool) -> Vec<Action> {
        if self.seen_txs.contains(&tx.hash()) {
            return Vec::new();
        }
        let local_only = tx.is_local_only;
        let (accepted, mut actions) = self.accept_tx(tx.clone(), true);
        if accepted && gossip && !local_only {
            actions.extend(self.gossip_tx(&tx, None));
        }
        actions
    }

    fn on_release_tx(&mut self, h: Hash256) -> Vec<Action> {
        match self.pool.entry(&h) {
            Some(e) => {
                let tx = e.tx.clone();
                self.gossip_tx(&tx, None)
            }
            None => Vec::new(),
        }
    }

    fn on_new_tx(&mut self, from: NodeId, tx: Arc<Transaction>) -> Vec<Action> {
        if self.seen_txs.contains(&tx.hash()) {
            return Vec::new();
        }
        let (accepted, mut actions) = self.accept_tx((*tx).clone(), false);
        if accepted {
            actions.extend(self.gossip_tx(&tx, Some(from)));
        }
        actions
    }

    // ---- PPB lifecycle (BBP) ------------------------------------------------

    fn target_height(&self) -> u64 {
        self.chain.height() + 1
    }

    fn maybe_schedule_rebuild(&mut self, tx: &Transaction) -> Vec<Action> {
        let Some(ppb) = &self.ppb else { return Vec::new() };
        if tx.created_ts > ppb.threshold_t || tx.is_local_only || self.rebuild_pending {
            return Vec::new();
        }
        self.rebuild_pending = true;
        vec![Action::StartTimer {
            kind: TimerKind::PpbRebuild(self.rebuild_gen),
            delay_ms: self.cfg.rebuild_delay_ms as f64,
        }]
    }

    /// Rebuilds the PPB from the pool and pre-validates it; announces the new
    /// body hash to all neighbors when it changed.
    fn rebuild_ppb(&mut self) -> Vec<Action> {
        let t = self.chain.head_header().timestamp;
        let ppb = self.pool.tso_select(t, self.cfg.gas_limit);
        let same = self.ppb_parent == self.chain.head
            && self
                .ppb
                .as_ref()
                .map(|p| p.body_hash == ppb.body_hash)
                .unwrap_or(false);
        if same {
            return Vec::new();
        }
        let info = pre_validate(self.chain.head_state(), &ppb.txs);
        let cost = self
            .cfg
            .cost
            .pre_execution_ms(info.pruned_ppb.len() - info.unexecutable.len());
        let announce = info.body_hash;
        self.ppb = Some(ppb);
        self.vinfo = Some(info);
        self.ppb_parent = self.chain.head;
        let height = self.target_height();
        let mut actions = Vec::new();
        for n in self.neighbors.clone() {
            actions.push(Action::Send {
                to: n,
                msg: WireMessage::CheckSync {
                    height,
                    body_hash: announce,
                },
                delay_ms: cost,
            });
        }
        actions
    }

    /// A mismatching announcement does not draw a payload immediately: most
    /// divergence right after a commit is a transaction still in flight, and
    /// ordinary gossip heals it for free. Only a mismatch that survives the
    /// grace period is answered with our body.
    fn on_check_sync(&mut self, from: NodeId, height: u64, body_hash: Hash256) -> Vec<Action> {
        self.neighbor_hash.insert(from, (height, body_hash));
        if self.cfg.kind != ProtocolKind::Bbp || height != self.target_height() {
            return Vec::new();
        }
        let Some(info) = &self.vinfo else { return Vec::new() };
        if info.body_hash == body_hash {
            return Vec::new();
        }
        if self.replied_payload.contains(&(from, body_hash)) {
            return Vec::new();
        }
        if self.recheck_pending.contains_key(&from) {
            // A grace timer is already running; its expiry handler picks up
            // whatever this neighbor has announced most recently.
            return Vec::new();
        }
        self.recheck_pending.insert(from, (height, body_hash));
        vec![Action::StartTimer {
            kind: TimerKind::SyncRecheck(from),
            delay_ms: self.cfg.sync_recheck_ms as f64,
        }]
    }

    /// Fires after the grace period: the payload goes out only when the very
    /// announcement that started the timer is still the neighbor's latest and
    /// still disagrees with our body. A changed announcement — e.g. the
    /// post-commit rebuild churn around a new block — restarts the grace
    /// period instead.
    fn on_sync_recheck(&mut self, from: NodeId) -> Vec<Action> {
        let Some(snapshot) = self.recheck_pending.remove(&from) else {
            return Vec::new();
        };
        if self.cfg.kind != ProtocolKind::Bbp {
            return Vec::new();
        }
        let Some(&(height, theirs)) = self.neighbor_hash.get(&from) else {
            return Vec::new();
        };
        if height != self.target_height() {
            return Vec::new();
        }
        let Some(info) = &self.vinfo else { return Vec::new() };
        if info.body_hash == theirs {
            return Vec::new();
        }
        if snapshot != (height, theirs) {
            self.recheck_pending.insert(from, (height, theirs));
            return vec![Action::StartTimer {
                kind: TimerKind::SyncRecheck(from),
                delay_ms: self.cfg.sync_recheck_ms as f64,
            }];
        }
        if !self.replied_payload.insert((from, theirs)) {
            return Vec::new();
        }
        let txs = self.ppb.as_ref().map(|p| p.txs.clone()).unwrap_or_default();
        vec![Action::Send {
            to: from,
            msg: WireMessage::PpbPayload {
                height,
                txs: Arc::new(txs),
            },
            delay_ms: 0.0,
        }]
    }

    /// Periodic re-announcement keeps neighbors' views fresh even when no
    /// rebuild happened, at a cost independent of the body size.
    fn on_sync_heartbeat(&mut self) -> Vec<Action> {
        let mut actions = vec![Action::StartTimer {
            kind: TimerKind::SyncHeartbeat,
            delay_ms: self.cfg.sync_heartbeat_ms.max(1) as f64,
        }];
        if let Some(info) = &self.vinfo {
            let height = self.target_height();
            let body_hash = info.body_hash;
            for n in self.neighbors.clone() {
                actions.push(Action::Send {
                    to: n,
                    msg: WireMessage::CheckSync { height, body_hash },
                    delay_ms: 0.0,
                });
            }
        }
        actions
    }

    fn on_ppb_payload(&mut self, _from: NodeId, height: u64, txs: Arc<Vec<Transaction>>) -> Vec<Action> {
        if self.cfg.kind != ProtocolKind::Bbp || height != self.target_height() {
            return Vec::new();
        }
        let Some(local) = &self.ppb else { return Vec::new() };
        let t = local.threshold_t;
        let merged = merge_ppb(
            local,
            &txs,
            &self.pool,
            t,
            self.cfg.delta_ms,
            self.cfg.gas_limit,
        );
        if merged.body_hash == local.body_hash {
            return Vec::new();
        }
        let info = pre_validate(self.chain.head_state(), &merged.txs);
        let cost = self
            .cfg
            .cost
            .pre_execution_ms(info.pruned_ppb.len() - info.unexecutable.len());
        let announce = info.body_hash;
        self.ppb = Some(merged);
        self.vinfo = Some(info);
        self.ppb_parent = self.chain.head;
        let mut actions = Vec::new();
        if self.sync_rounds < self.cfg.max_sync_rounds {
            self.sync_rounds += 1;
            for n in self.neighbors.clone() {
                actions.push(Action::Send {
                    to: n,
                    msg: WireMessage::CheckSync {
                        height,
                        body_hash: announce,
                    },
                    delay_ms: cost,
                });
            }
        }
        actions
    }

    fn on_timer(&mut self, kind: TimerKind) -> Vec<Action> {
        match kind {
            TimerKind::PpbRebuild(gen) => {
                if gen != self.rebuild_gen {
                    return Vec::new();
                }
                self.rebuild_pending = false;
                self.rebuild_ppb()
            }
            TimerKind::SyncRecheck(from) => self.on_sync_recheck(from),
            TimerKind::SyncHeartbeat => self.on_sync_heartbeat(),
            TimerKind::BhpHeaderWait(h) => self.on_bhp_t1(h),
            TimerKind::BhpBodyWait(h) => self.on_bhp_t2(h),
        }
    }

    // ---- commit and forwarding ----------------------------------------------

    fn commit_block(
        &mut self,
        block: Arc<Block>,
        state: WorldState,
        hop: u32,
        processing_ms: f64,
        via_header: bool,
    ) -> Vec<Action> {
        let hash = block.hash();
        let parent = block.header.parent_hash;
        let height = block.header.number;
        self.chain.insert(block.clone(), state);
        self.chain.head = hash;
        self.chain.prune();
        self.commit_hop.insert(hash, hop);
        self.pool.reset(&block);
        let mut actions = vec![Action::Note(TraceNote::Commit {
            block_hash: hash,
            parent_hash: parent,
            height,
            n_txs: block.body.len(),
            hop,
            processing_ms,
            via_header,
        })];
        if self.cfg.kind == ProtocolKind::Bbp {
            self.sync_rounds = 0;
            self.replied_payload.clear();
            self.rebuild_gen += 1;
            self.rebuild_pending = false;
            let mut rebuild = self.rebuild_ppb();
            for a in rebuild.iter_mut() {
                if let Action::Send { delay_ms, .. } = a {
                    *delay_ms += processing_ms;
                }
            }
            actions.extend(rebuild);
        }
        actions
    }

    fn forward_targets(&mut self, block_hash: Hash256, exclude: Option<NodeId>) -> Vec<NodeId> {
        let mut out = Vec::new();
        for n in self.neighbors.clone() {
            if Some(n) == exclude {
                continue;
            }
            if self.sent_block_to.insert((block_hash, n)) {
                out.push(n);
            }
        }
        out
    }

    /// BBP per-neighbor rule: header to neighbors whose announced body hash
    /// matches the block's, full block to the rest.
    fn bbp_forward(
        &mut self,
        block: &Arc<Block>,
        hop: u32,
        exclude: Option<NodeId>,
        delay_ms: f64,
    ) -> Vec<Action> {
        let hash = block.hash();
        let height = block.header.number;
        let txs_hash = block.header.txs_hash;
        let mut actions = Vec::new();
        for n in self.forward_targets(hash, exclude) {
            // A neighbor announcing a PPB for a later height has already
            // committed this block; a header is enough for it.
            let synced = match self.neighbor_hash.get(&n) {
                Some(&(h, bh)) => (h == height && bh == txs_hash) || h > height,
                None => false,
            };
            let msg = if synced {
                WireMessage::BlockHeaderMsg {
                    header: block.header.clone(),
                    hop: hop + 1,
                }
            } else {
                WireMessage::FullBlock {
                    block: block.clone(),
                    hop: hop + 1,
                }
            };
            actions.push(Action::Send {
                to: n,
                msg,
                delay_ms,
            });
        }
        actions
    }

    fn inv_forward(&mut self, block_hash: Hash256, hop: u32, exclude: Option<NodeId>, delay_ms: f64) -> Vec<Action> {
        self.forward_targets(block_hash, exclude)
            .into_iter()
            .map(|n| Action::Send {
                to: n,
                msg: WireMessage::Inv {
                    block_hash,
                    hop: hop + 1,
                },
                delay_ms,
            })
            .collect()
    }

    // ---- mining -------------------------------------------------------------

    /// Mining success at virtual time `now_ms`. The block timestamp is the
    /// event time, which is strictly after the parent's by construction of
    /// the mining process.
    pub fn on_mine(&mut self, now_ms: u64) -> Vec<Action> {
        match self.cfg.kind {
            ProtocolKind::Bbp => self.mine_bbp(now_ms),
            ProtocolKind::Lbp | ProtocolKind::Cbp => self.mine_inv_based(now_ms),
            ProtocolKind::Bhp => self.mine_bhp(now_ms),
        }
    }

    fn mine_bbp(&mut self, now_ms: u64) -> Vec<Action> {
        let mut actions = Vec::new();
        if self.cfg.dishonest_miner {
            let txs = self.pool.legacy_select(self.cfg.gas_limit);
            let parent = self.chain.head_header().clone();
            let (block, state) = seal_from_txs(
                self.chain.head_state(),
                &txs,
                &parent,
                now_ms.max(parent.timestamp + 1),
                self.cfg.coinbase,
            );
            let block = Arc::new(block);
            let cost = self.cfg.cost.full_validation_ms(block.body.len());
            actions.extend(self.commit_block(block.clone(), state, 0, cost, false));
            actions.extend(self.bbp_forward(&block, 0, None, cost));
            return actions;
        }
        if self.ppb_parent != self.chain.head || self.vinfo.is_none() {
            actions.extend(self.rebuild_ppb());
        }
        let info = self.vinfo.as_ref().expect("ppb built").clone();
        let parent = self.chain.head_header().clone();
        let (block, state) = seal_from_prevalidation(
            &info,
            &parent,
            now_ms.max(parent.timestamp + 1),
            self.cfg.coinbase,
        );
        let block = Arc::new(block);
        let cost = self
            .cfg
            .cost
            .ppb_validation_ms(block.body.len(), info.unexecutable.len());
        actions.extend(self.commit_block(block.clone(), state, 0, cost, true));
        actions.extend(self.bbp_forward(&block, 0, None, cost));
        actions
    }

    fn mine_inv_based(&mut self, now_ms: u64) -> Vec<Action> {
        let txs = self.pool.legacy_select(self.cfg.gas_limit);
        let parent = self.chain.head_header().clone();
        let (block, state) = seal_from_txs(
            self.chain.head_state(),
            &txs,
            &parent,
            now_ms.max(parent.timestamp + 1),
            self.cfg.coinbase,
        );
        let block = Arc::new(block);
        let hash = block.hash();
        let cost = self.cfg.cost.full_validation_ms(block.body.len());
        let mut actions = self.commit_block(block, state, 0, cost, false);
        actions.extend(self.inv_forward(hash, 0, None, cost));
        actions
    }

    fn mine_bhp(&mut self, now_ms: u64) -> Vec<Action> {
        let txs = self.pool.legacy_select(self.cfg.gas_limit);
        let parent = self.chain.head_header().clone();
        let (block, state) = seal_from_txs(
            self.chain.head_state(),
            &txs,
            &parent,
            now_ms.max(parent.timestamp + 1),
            self.cfg.coinbase,
        );
        let block = Arc::new(block);
        let cost = self.cfg.cost.full_validation_ms(block.body.len());
        let mut actions = self.commit_block(block.clone(), state, 0, cost, false);
        actions.extend(self.bhp_fanout(&block, 0, &[], 0.0, 0.0));
        actions
    }

    // ---- BBP block handling -------------------------------------------------

    fn report_sync(&mut self, header: &BlockHeader) -> Option<Action> {
        if self.cfg.kind != ProtocolKind::Bbp || !self.sync_reported.insert(header.number) {
            return None;
        }
        let synced = self.ppb_parent == header.parent_hash
            && self
                .vinfo
                .as_ref()
                .map(|i| i.body_hash == header.txs_hash)
                .unwrap_or(false);
        Some(Action::Note(TraceNote::SyncStatus {
            height: header.number,
            synced,
        }))
    }

    fn on_block_header(&mut self, from: NodeId, header: BlockHeader, hop: u32) -> Vec<Action> {
        if self.cfg.kind == ProtocolKind::Bhp {
            return self.on_bhp_header_reply(from, header, hop);
        }
        let hash = header.hash();
        if self.chain.knows(&hash) {
            return Vec::new();
        }
        let mut actions = Vec::new();
        actions.extend(self.report_sync(&header));
        let can_fast = header.parent_hash == self.chain.head
            && self.ppb_parent == self.chain.head
            && self.vinfo.is_some();
        if can_fast {
            let info = self.vinfo.as_ref().unwrap();
            match finalize_validate(info, &header, self.chain.head_state()) {
                Ok(state) => {
                    let body = info.pruned_ppb.clone();
                    let n_u = info.unexecutable.len();
                    let cost = self.cfg.cost.ppb_validation_ms(body.len(), n_u);
                    let block = Arc::new(Block { header, body });
                    actions.extend(self.commit_block(block.clone(), state, hop, cost, true));
                    actions.extend(self.bbp_forward(&block, hop, Some(from), cost));
                    return actions;
                }
                Err(ValidateMismatch::Body) => {}
                Err(ValidateMismatch::State) => {
                    actions.push(Action::Note(TraceNote::InvalidBlock));
                    return actions;
                }
            }
        }
        // Body mismatch or no usable pre-validation info: request the full block.
        if self.requested_blocks.insert(hash) {
            actions.push(Action::Send {
                to: from,
                msg: WireMessage::GetData(hash),
                delay_ms: self.cfg.cost.t_h_ms,
            });
        }
        actions
    }

    fn on_full_block(&mut self, from: NodeId, block: Arc<Block>, hop: u32) -> Vec<Action> {
        let hash = block.hash();
        if self.cfg.kind == ProtocolKind::Bhp {
            self.bhp_pending.remove(&hash); // abort any hash-path retrieval
        }
        if self.chain.knows(&hash) {
            return Vec::new();
        }
        let mut actions = Vec::new();
        actions.extend(self.report_sync(&block.header));
        let Some(parent_state) = self.chain.states.get(&block.header.parent_hash).cloned() else {
            return actions; // unknown ancestry; out of reorg window
        };
        let parent = self.chain.headers[&block.header.parent_hash].clone();
        let cost = self.cfg.cost.full_validation_ms(block.body.len());
        match full_validate(&parent_state, &parent, &block) {
            Ok(state) => {
                if block.header.number > self.chain.height() {
                    actions.extend(self.commit_block(block.clone(), state, hop, cost, false));
                    actions.extend(self.forward_new_block(&block, hop, Some(from), cost));
                } else {
                    // Valid sibling of (or behind) our head: store for a
                    // potential one-block reorg, first-received wins.
                    self.chain.insert(block.clone(), state);
                    actions.push(Action::Note(TraceNote::SideBlock(hash)));
                }
            }
            Err(_) => actions.push(Action::Note(TraceNote::InvalidBlock)),
        }
        actions
    }

    /// Protocol-specific forwarding of a freshly committed full block.
    fn forward_new_block(
        &mut self,
        block: &Arc<Block>,
        hop: u32,
        exclude: Option<NodeId>,
        cost: f64,
    ) -> Vec<Action> {
        match self.cfg.kind {
            ProtocolKind::Bbp => self.bbp_forward(block, hop, exclude, cost),
            ProtocolKind::Lbp | ProtocolKind::Cbp => {
                self.inv_forward(block.hash(), hop, exclude, cost)
            }
            ProtocolKind::Bhp => {
                let exclude: Vec<NodeId> = exclude.into_iter().collect();
                self.bhp_fanout(block, hop, &exclude, self.cfg.cost.t_h_ms, cost)
            }
        }
    }

    fn on_get_data(&mut self, from: NodeId, hash: Hash256) -> Vec<Action> {
        let Some(block) = self.chain.blocks.get(&hash).cloned() else {
            return Vec::new();
        };
        let hop = self.commit_hop.get(&hash).copied().unwrap_or(0);
        match self.cfg.kind {
            ProtocolKind::Cbp => {
                if self.served_compact.insert((hash, from)) {
                    let tx_hashes: Vec<Hash256> = block.body.iter().map(|t| t.hash()).collect();
                    vec![Action::Send {
                        to: from,
                        msg: WireMessage::CompactBlock {
                            header: block.header.clone(),
                            tx_hashes: Arc::new(tx_hashes),
                            hop: hop + 1,
                        },
                        delay_ms: 0.0,
                    }]
                } else {
                    // Second request for the same block: compact reconstruction
                    // failed on the peer, serve the full block.
                    vec![Action::Send {
                        to: from,
                        msg: WireMessage::FullBlock {
                            block,
                            hop: hop + 1,
                        },
                        delay_ms: 0.0,
                    }]
                }
            }
            _ => vec![Action::Send {
                to: from,
                msg: WireMessage::FullBlock {
                    block,
                    hop: hop + 1,
                },
                delay_ms: 0.0,
            }],
        }
    }

    // ---- LBP / CBP inv handling ---------------------------------------------

    fn on_inv(&mut self, from: NodeId, block_hash: Hash256, hop: u32) -> Vec<Action> {
        if self.chain.knows(&block_hash) || !self.requested_blocks.insert(block_hash) {
            return Vec::new();
        }
        self.inv_hop.insert(block_hash, hop);
        vec![Action::Send {
            to: from,
            msg: WireMessage::GetData(block_hash),
            delay_ms: 0.0,
        }]
    }

    // ---- CBP reconstruction -------------------------------------------------

    fn on_compact_block(
        &mut self,
        from: NodeId,
        header: BlockHeader,
        tx_hashes: Arc<Vec<Hash256>>,
        hop: u32,
    ) -> Vec<Action> {
        let hash = header.hash();
        if self.chain.knows(&hash) {
            return Vec::new();
        }
        let mut collected = HashMap::new();
        let mut missing = Vec::new();
        for h in tx_hashes.iter() {
            match self.pool.entry(h) {
                Some(e) => {
                    collected.insert(*h, e.tx.clone());
                }
                None => missing.push(*h),
            }
        }
        let matched = missing.is_empty();
        let mut actions = vec![Action::Note(TraceNote::CompactArrived { matched })];
        if matched {
            let body: Vec<Transaction> = tx_hashes.iter().map(|h| collected[h].clone()).collect();
            let block = Arc::new(Block { header, body });
            actions.extend(self.on_full_block(from, block, hop));
        } else {
            self.cbp_pending.insert(
                hash,
                CbpPending {
                    header,
                    tx_hashes,
                    from,
                    collected,
                    hop,
                    retried: false,
                },
            );
            actions.push(Action::Send {
                to: from,
                msg: WireMessage::GetMissedTxs {
                    block_hash: hash,
                    hashes: missing,
                },
                delay_ms: 0.0,
            });
        }
        actions
    }

    fn on_get_missed_txs(&mut self, from: NodeId, block_hash: Hash256, hashes: Vec<Hash256>) -> Vec<Action> {
        // Served from the stored block (the sender committed it before
        // announcing); transactions the block does not contain are omitted
        // and the peer falls back to a full-block request.
        let mut txs = Vec::new();
        if let Some(block) = self.chain.blocks.get(&block_hash) {
            let want: HashSet<Hash256> = hashes.into_iter().collect();
            for tx in &block.body {
                if want.contains(&tx.hash()) {
                    txs.push(tx.clone());
                }
            }
        }
        vec![Action::Send {
            to: from,
            msg: WireMessage::MissedTxs { block_hash, txs },
            delay_ms: 0.0,
        }]
    }

    fn on_missed_txs(&mut self, _from: NodeId, block_hash: Hash256, txs: Vec<Transaction>) -> Vec<Action> {
        let Some(mut pending) = self.cbp_pending.remove(&block_hash) else {
            return Vec::new();
        };
        for tx in txs {
            pending.collected.insert(tx.hash(), tx);
        }
        let complete = pending.tx_hashes.iter().all(|h| pending.collected.contains_key(h));
        if complete {
            let body: Vec<Transaction> = pending
                .tx_hashes
                .iter()
                .map(|h| pending.collected[h].clone())
                .collect();
            let block = Arc::new(Block {
                header: pending.header.clone(),
                body,
            });
            return self.on_full_block(pending.from, block, pending.hop);
        }
        if pending.retried {
            return Vec::new();
        }
        // Sender could not supply everything: fall back to the full block.
        pending.retried = true;
        let from = pending.from;
        self.cbp_pending.insert(block_hash, pending);
        vec![Action::Send {
            to: from,
            msg: WireMessage::GetData(block_hash),
            delay_ms: 0.0,
        }]
    }

    // ---- BHP ----------------------------------------------------------------

    /// Full block to ceil(sqrt(N)) random not-yet-notified neighbors after
    /// header verification; hash announcement to the remainder once full
    /// validation completes.
    fn bhp_fanout(
        &mut self,
        block: &Arc<Block>,
        hop: u32,
        exclude: &[NodeId],
        header_done_ms: f64,
        validated_ms: f64,
    ) -> Vec<Action> {
        let hash = block.hash();
        let candidates: Vec<NodeId> = self
            .neighbors
            .iter()
            .copied()
            .filter(|n| !exclude.contains(n))
            .filter(|n| !self.sent_block_to.contains(&(hash, *n)))
            .collect();
        let k = (self.neighbors.len() as f64).sqrt().ceil() as usize;
        let mut shuffled = candidates;
        shuffled.shuffle(&mut self.rng);
        let k = k.min(shuffled.len());
        let mut actions = Vec::new();
        for (i, n) in shuffled.into_iter().enumerate() {
            self.sent_block_to.insert((hash, n));
            if i < k {
                actions.push(Action::Send {
                    to: n,
                    msg: WireMessage::FullBlock {
                        block: block.clone(),
                        hop: hop + 1,
                    },
                    delay_ms: header_done_ms,
                });
            } else {
                actions.push(Action::Send {
                    to: n,
                    msg: WireMessage::BlockHashAnnounce {
                        block_hash: hash,
                        hop: hop + 1,
                    },
                    delay_ms: validated_ms,
                });
            }
        }
        actions
    }

    fn on_block_hash_announce(&mut self, from: NodeId, block_hash: Hash256, _hop: u32) -> Vec<Action> {
        if self.chain.knows(&block_hash) {
            return Vec::new();
        }
        let pending = self.bhp_pending.entry(block_hash).or_insert(BhpPending {
            announcers: Vec::new(),
            header: None,
            timer_started: false,
        });
        pending.announcers.push(from);
        if pending.timer_started {
            return Vec::new();
        }
        pending.timer_started = true;
        vec![Action::StartTimer {
            kind: TimerKind::BhpHeaderWait(block_hash),
            delay_ms: self.cfg.bhp_t1_ms as f64,
        }]
    }

    fn on_bhp_t1(&mut self, block_hash: Hash256) -> Vec<Action> {
        if self.chain.knows(&block_hash) {
            self.bhp_pending.remove(&block_hash);
            return Vec::new();
        }
        let Some(pending) = self.bhp_pending.get(&block_hash) else {
            return Vec::new();
        };
        let target = pending.announcers[0];
        vec![Action::Send {
            to: target,
            msg: WireMessage::GetHeader(block_hash),
            delay_ms: 0.0,
        }]
    }

    fn on_get_header(&mut self, from: NodeId, block_hash: Hash256) -> Vec<Action> {
        let Some(header) = self.chain.headers.get(&block_hash).cloned() else {
            return Vec::new();
        };
        let hop = self.commit_hop.get(&block_hash).copied().unwrap_or(0);
        vec![Action::Send {
            to: from,
            msg: WireMessage::BlockHeaderMsg {
                header,
                hop: hop + 1,
            },
            delay_ms: 0.0,
        }]
    }

    fn on_bhp_header_reply(&mut self, _from: NodeId, header: BlockHeader, _hop: u32) -> Vec<Action> {
        let hash = header.hash();
        if self.chain.knows(&hash) {
            self.bhp_pending.remove(&hash);
            return Vec::new();
        }
        let Some(pending) = self.bhp_pending.get_mut(&hash) else {
            return Vec::new();
        };
        if pending.header.is_some() {
            return Vec::new();
        }
        pending.header = Some(header);
        vec![Action::StartTimer {
            kind: TimerKind::BhpBodyWait(hash),
            delay_ms: self.cfg.bhp_t2_ms as f64,
        }]
    }

    fn on_bhp_t2(&mut self, block_hash: Hash256) -> Vec<Action> {
        if self.chain.knows(&block_hash) {
            self.bhp_pending.remove(&block_hash);
            return Vec::new();
        }
        let Some(pending) = self.bhp_pending.get(&block_hash) else {
            return Vec::new();
        };
        let idx = rand::Rng::gen_range(&mut self.rng, 0..pending.announcers.len());
        let target = pending.announcers[idx];
        vec![Action::Send {
            to: target,
            msg: WireMessage::GetBody(block_hash),
            delay_ms: 0.0,
        }]
    }

    fn on_get_body(&mut self, from: NodeId, block_hash: Hash256) -> Vec<Action> {
        // Simplification: the body reply carries the assembled block.
        self.on_get_data(from, block_hash)
    }

    // ---- dispatch -----------------------------------------------------------

    fn on_message(&mut self, from: NodeId, msg: WireMessage) -> Vec<Action> {
        match msg {
            WireMessage::NewTx(tx) => self.on_new_tx(from, tx),
            WireMessage::TxHashAnnounce(h) => {
                if self.seen_txs.contains(&h) || !self.requested_txs.insert(h) {
                    Vec::new()
                } else {
                    vec![Action::Send {
                        to: from,
                        msg: WireMessage::GetTx(h),
                        delay_ms: 0.0,
                    }]
                }
            }
            WireMessage::GetTx(h) => match self.pool.entry(&h) {
                Some(e) => vec![Action::Send {
                    to: from,
                    msg: WireMessage::NewTx(Arc::new(e.tx.clone())),
                    delay_ms: 0.0,
                }],
                // Post-reset requests for committed transactions go unanswered.
                None => Vec::new(),
            },
            WireMessage::CheckSync { height, body_hash } => self.on_check_sync(from, height, body_hash),
            WireMessage::PpbPayload { height, txs } => self.on_ppb_payload(from, height, txs),
            WireMessage::BlockHeaderMsg { header, hop } => self.on_block_header(from, header, hop),
            WireMessage::FullBlock { block, hop } => self.on_full_block(from, block, hop),
            WireMessage::Inv { block_hash, hop } => self.on_inv(from, block_hash, hop),
            WireMessage::GetData(h) => self.on_get_data(from, h),
            WireMessage::BlockHashAnnounce { block_hash, hop } => {
                self.on_block_hash_announce(from, block_hash, hop)
            }
            WireMessage::GetHeader(h) => self.on_get_header(from, h),
            WireMessage::GetBody(h) => self.on_get_body(from, h),
            WireMessage::CompactBlock {
                header,
                tx_hashes,
                hop,
            } => self.on_compact_block(from, header, tx_hashes, hop),
            WireMessage::GetMissedTxs { block_hash, hashes } => {
                self.on_get_missed_txs(from, block_hash, hashes)
            }
            WireMessage::MissedTxs { block_hash, txs } => self.on_missed_txs(from, block_hash, txs),
        }
    }
}
