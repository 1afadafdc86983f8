//! Deterministic discrete-event loop.
//!
//! All delays are virtual; events are ordered by (microsecond timestamp,
//! insertion sequence), so identical scenarios replay identically on any
//! machine. Network cost = link latency + serialization delay, with an
//! optional one-shot retransmission penalty on lossy links.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::analytics::transmission_ms;
use crate::chain::{body_hash, state_root, AccountId, Block, BlockHeader, WorldState};
use crate::netsim::scenario::Scenario;
use crate::netsim::topology::Topology;
use crate::netsim::trace::{CommitRow, MinedRow, MsgRow, RawTrace, SyncRow};
use crate::netsim::workload::{build_plan, Plan, TxPlanKind};
use crate::protocols::messages::TrafficClass;
use crate::protocols::node::{Action, Node, NodeEvent, TraceNote};
use crate::protocols::{NodeId, WireMessage};

struct QItem {
    t_us: u64,
    seq: u64,
    node: NodeId,
    ev: NodeEvent,
}

impl PartialEq for QItem {
    fn eq(&self, other: &Self) -> bool {
        (self.t_us, self.seq) == (other.t_us, other.seq)
    }
}
impl Eq for QItem {}
impl PartialOrd for QItem {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for QItem {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.t_us, self.seq).cmp(&(other.t_us, other.seq))
    }
}

/// Total network delay (ms) for a message on one link: propagation latency
/// plus serialization time, with one bounded retransmission penalty when the
/// first attempt is lost.
pub fn delivery_delay_ms(
    link: &crate::netsim::topology::Link,
    bytes: u64,
    bandwidth_bps: f64,
    retx_multiplier: f64,
    lost: bool,
) -> f64 {
    let base = link.latency_ms + transmission_ms(bytes as f64, bandwidth_bps);
    if lost {
        base + retx_multiplier * base
    } else {
        base
    }
}

fn sub_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut s = [0u8; 32];
    s[..8].copy_from_slice(&seed.to_le_bytes());
    s[8..16].copy_from_slice(&stream.to_le_bytes());
    ChaCha12Rng::from_seed(s)
}

pub fn genesis(state: &WorldState) -> Arc<Block> {
    Arc::new(Block {
        header: BlockHeader {
            parent_hash: crate::chain::Hash256::ZERO,
            number: 0,
            timestamp: 0,
            coinbase: AccountId(0),
            txs_hash: body_hash(&[]),
            state_root: state_root(state),
        },
        body: Vec::new(),
    })
}

pub struct Sim {
    pub scenario: Scenario,
    pub topology: Topology,
    pub plan: Plan,
    pub nodes: Vec<Node>,
    queue: BinaryHeap<Reverse<QItem>>,
    seq: u64,
    net_rng: ChaCha12Rng,
    trace: RawTrace,
}

impl Sim {
    pub fn new(scenario: Scenario) -> Sim {
        let mut topo_rng = sub_rng(scenario.seed, 0xA11CE);
        let mut plan_rng = sub_rng(scenario.seed, 0xB0B);
        let net_rng = sub_rng(scenario.seed, 0x11);
        let topology = Topology::generate(
            scenario.n_nodes,
            scenario.attach_m,
            scenario.rewire_p,
            &mut topo_rng,
        );
        let plan = build_plan(&scenario, &mut plan_rng);
        let genesis_state = WorldState::with_accounts(plan.genesis_accounts.iter().copied());
        let genesis_block = genesis(&genesis_state);
        let nodes: Vec<Node> = (0..scenario.n_nodes)
            .map(|id| {
                let mut cfg = scenario.node_config(id);
                cfg.dishonest_miner = plan.dishonest[id];
                Node::new(
                    id,
                    topology.adj[id].clone(),
                    cfg,
                    genesis_block.clone(),
                    genesis_state.clone(),
                    scenario.seed,
                )
            })
            .collect();
        Sim {
            scenario,
            topology,
            plan,
            nodes,
            queue: BinaryHeap::new(),
            seq: 0,
            net_rng,
            trace: RawTrace::default(),
        }
    }

    fn push(&mut self, t_us: u64, node: NodeId, ev: NodeEvent) {
        self.seq += 1;
        self.queue.push(Reverse(QItem {
            t_us,
            seq: self.seq,
            node,
            ev,
        }));
    }

    fn schedule_plan(&mut self) {
        for (t_ms, winner) in self.plan.mine_schedule.clone() {
            self.push(t_ms * 1000, winner, NodeEvent::MineSuccess);
        }
        for planned in self.plan.txs.clone() {
            let t_us = planned.tx.created_ts * 1000;
            match planned.kind {
                TxPlanKind::Normal => self.push(
                    t_us,
                    planned.origin,
                    NodeEvent::LocalTx {
                        tx: planned.tx,
                        gossip: true,
                    },
                ),
                TxPlanKind::Late { holder, release_ms } => {
                    let hash = planned.tx.hash();
                    self.push(
                        t_us,
                        holder,
                        NodeEvent::LocalTx {
                            tx: planned.tx,
                            gossip: false,
                        },
                    );
                    self.push(release_ms * 1000, holder, NodeEvent::ReleaseTx(hash));
                }
                TxPlanKind::Local { holder } | TxPlanKind::Withheld { holder } => self.push(
                    t_us,
                    holder,
                    NodeEvent::LocalTx {
                        tx: planned.tx,
                        gossip: false,
                    },
                ),
            }
        }
    }

    fn apply_actions(&mut self, now_us: u64, from: NodeId, actions: Vec<Action>) {
        let now_ms = now_us as f64 / 1000.0;
        for action in actions {
            match action {
                Action::Send { to, msg, delay_ms } => {
                    let size = msg.size_bytes(&self.scenario.sizes);
                    match msg.class() {
                        TrafficClass::TxGossip => {
                            self.trace.class_bytes.tx_gossip += size;
                            self.trace.class_counts.tx_gossip += 1;
                        }
                        TrafficClass::PpbSync => {
                            self.trace.class_bytes.ppb_sync += size;
                            self.trace.class_counts.ppb_sync += 1;
                        }
                        TrafficClass::BlockProp => {
                            self.trace.class_bytes.block_prop += size;
                            self.trace.class_counts.block_prop += 1;
                            let hop = match &msg {
                                WireMessage::BlockHeaderMsg { hop, .. }
                                | WireMessage::FullBlock { hop, .. }
                                | WireMessage::Inv { hop, .. }
                                | WireMessage::BlockHashAnnounce { hop, .. }
                                | WireMessage::CompactBlock { hop, .. } => Some(*hop),
                                _ => None,
                            };
                            self.trace.block_msgs.push(MsgRow {
                                time_ms: now_ms + delay_ms,
                                from,
                                to,
                                msg_type: msg.type_name(),
                                size_bytes: size,
                                hop,
                            });
                        }
                    }
                    match &msg {
                        WireMessage::FullBlock { .. } => self.trace.full_block_sends += 1,
                        WireMessage::BlockHeaderMsg { .. } => self.trace.header_sends += 1,
                        WireMessage::GetBody(_) => self.trace.get_body_sends += 1,
                        WireMessage::PpbPayload { txs, .. } => {
                            self.trace.payload_sends.push((now_ms as u64, from, to, txs.len()));
                        }
                        _ => {}
                    }
                    let link = *self.topology.link(from, to);
                    let lost = self.net_rng.gen::<f64>() < link.loss;
                    let total = delay_ms
                        + delivery_delay_ms(
                            &link,
                            size,
                            self.scenario.bandwidth_bps(),
                            self.scenario.retx_multiplier,
                            lost,
                        );
                    let arrival = now_us + (total * 1000.0).round() as u64;
                    self.push(arrival, to, NodeEvent::Recv { from, msg });
                }
                Action::StartTimer { kind, delay_ms } => {
                    let at = now_us + (delay_ms * 1000.0).round() as u64;
                    self.push(at, from, NodeEvent::Timer(kind));
                }
                Action::Note(note) => self.record_note(now_ms, from, note),
            }
        }
    }

    fn record_note(&mut self, now_ms: f64, node: NodeId, note: TraceNote) {
        match note {
            TraceNote::Commit {
                block_hash,
                parent_hash,
                height,
                n_txs,
                hop,
                processing_ms,
                via_header,
            } => {
                if hop == 0 {
                    self.trace.mined.push(MinedRow {
                        block_hash,
                        parent_hash,
                        height,
                        miner: node,
                        time_ms: now_ms,
                        n_txs: n_txs as u64,
                    });
                }
                self.trace.commits.push(CommitRow {
                    node,
                    block_hash,
                    parent_hash,
                    height,
                    time_ms: now_ms + processing_ms,
                    hop,
                    processing_ms,
                    via_header,
                });
            }
            TraceNote::SyncStatus { height, synced } => self.trace.sync_reports.push(SyncRow {
                node,
                height,
                synced,
                time_ms: now_ms,
            }),
            TraceNote::StaleTx => self.trace.stale_txs += 1,
            TraceNote::TxAccepted(_) => self.trace.accepted_txs += 1,
            TraceNote::CompactArrived { matched } => {
                if matched {
                    self.trace.compact_matched += 1;
                } else {
                    self.trace.compact_missed += 1;
                }
            }
            TraceNote::InvalidBlock => self.trace.invalid_blocks += 1,
            TraceNote::SideBlock(_) => self.trace.side_blocks += 1,
        }
    }

    pub fn run(mut self) -> RawTrace {
        // Initial pre-packed bodies (and their announcements) at time zero.
        for id in 0..self.nodes.len() {
            let actions = self.nodes[id].init();
            self.apply_actions(0, id, actions);
        }
        self.schedule_plan();
        let last_mine_ms = self.plan.mine_schedule.last().map(|(t, _)| *t).unwrap_or(0);
        let horizon_us = (last_mine_ms + (self.scenario.drain_s * 1000.0) as u64) * 1000;
        while let Some(Reverse(item)) = self.queue.pop() {
            if item.t_us > horizon_us {
                break;
            }
            let actions = self.nodes[item.node].handle(item.t_us / 1000, item.ev);
            self.apply_actions(item.t_us, item.node, actions);
        }
        self.trace.final_heads = self.nodes.iter().map(|n| n.chain.head).collect();
        self.trace.duration_ms = last_mine_ms as f64;
        self.trace.n_nodes = self.nodes.len();
        self.trace.mean_link_latency_ms = self.topology.mean_link_latency_ms();
        self.trace
    }
}

/// Convenience wrapper: build and run a scenario, returning the raw trace.
pub fn run_scenario(sc: &Scenario) -> RawTrace {
    Sim::new(sc.clone()).run()
}
