//! Scripted message-level walkthroughs of the four propagation protocols and
//! the body synchronization handshake, driving node state machines directly.

use std::sync::Arc;

use bbp_core::chain::{AccountId, AccountState, Block, Hash256, Recipient, Transaction, WorldState};
use bbp_core::netsim::engine::genesis;
use bbp_core::protocols::messages::WireMessage;
use bbp_core::protocols::node::{Action, Node, NodeConfig, NodeEvent, TimerKind, TraceNote};
use bbp_core::protocols::ProtocolKind;

const GAS_LIMIT: u64 = 30_000_000;

fn funded_state() -> WorldState {
    WorldState::with_accounts((0..8).map(|i| {
        (
            AccountId(i),
            AccountState {
                nonce: 0,
                balance: 1_000_000_000,
            },
        )
    }))
}

fn node(kind: ProtocolKind, id: usize, neighbors: Vec<usize>) -> Node {
    let state = funded_state();
    let gen = genesis(&state);
    let cfg = NodeConfig::new(kind, AccountId(1_000_000_000 + id as u64), GAS_LIMIT);
    Node::new(id, neighbors, cfg, gen, state, 7)
}

fn tx(sender: u64, nonce: u64, gas_price: u64) -> Transaction {
    Transaction::new(
        AccountId(sender),
        Recipient::Account(AccountId(sender + 1)),
        nonce,
        gas_price,
        21_000,
        10,
        0,
        0,
    )
}

fn sends(actions: &[Action]) -> Vec<(usize, &WireMessage)> {
    actions
        .iter()
        .filter_map(|a| match a {
            Action::Send { to, msg, .. } => Some((*to, msg)),
            _ => None,
        })
        .collect()
}

fn count<F: Fn(&WireMessage) -> bool>(actions: &[Action], pred: F) -> usize {
    sends(actions).iter().filter(|(_, m)| pred(m)).count()
}

fn recv(n: &mut Node, now: u64, from: usize, msg: WireMessage) -> Vec<Action> {
    n.handle(now, NodeEvent::Recv { from, msg })
}

/// Fires the rebuild timer a LocalTx event scheduled, returning the node's
/// follow-up actions (its CheckSync announcements).
fn fire_rebuild(n: &mut Node, now: u64, scheduled: &[Action]) -> Vec<Action> {
    let kind = scheduled
        .iter()
        .find_map(|a| match a {
            Action::StartTimer {
                kind: k @ TimerKind::PpbRebuild(_),
                ..
            } => Some(*k),
            _ => None,
        })
        .expect("rebuild timer scheduled");
    n.handle(now, NodeEvent::Timer(kind))
}

/// Fires the mismatch grace-period timer a CheckSync scheduled, returning the
/// node's follow-up actions (its payload, if the mismatch persisted).
fn fire_recheck(n: &mut Node, now: u64, scheduled: &[Action]) -> Vec<Action> {
    let kind = scheduled
        .iter()
        .find_map(|a| match a {
            Action::StartTimer {
                kind: k @ TimerKind::SyncRecheck(_),
                ..
            } => Some(*k),
            _ => None,
        })
        .expect("recheck timer scheduled");
    n.handle(now, NodeEvent::Timer(kind))
}

// ---- PPB synchronization ----------------------------------------------------

#[test]
fn check_sync_with_equal_hash_is_silent() {
    let mut a = node(ProtocolKind::Bbp, 0, vec![1]);
    let init = a.init();
    let own_hash = a.vinfo.as_ref().unwrap().body_hash;
    assert_eq!(count(&init, |m| matches!(m, WireMessage::CheckSync { .. })), 1);
    let actions = recv(
        &mut a,
        1,
        1,
        WireMessage::CheckSync {
            height: 1,
            body_hash: own_hash,
        },
    );
    assert!(sends(&actions).is_empty());
}

#[test]
fn check_sync_mismatch_draws_exactly_one_payload() {
    let mut a = node(ProtocolKind::Bbp, 0, vec![1]);
    a.init();
    let t = tx(0, 1, 5);
    let scheduled = a.handle(0, NodeEvent::LocalTx { tx: t, gossip: false });
    fire_rebuild(&mut a, 10, &scheduled);
    let foreign = Hash256([9; 32]);
    // The mismatch is not answered immediately: gossip first gets a grace
    // period to heal it.
    let first = recv(
        &mut a,
        20,
        1,
        WireMessage::CheckSync {
            height: 1,
            body_hash: foreign,
        },
    );
    assert!(sends(&first).is_empty());
    let after_grace = fire_recheck(&mut a, 1020, &first);
    assert_eq!(
        count(&after_grace, |m| matches!(m, WireMessage::PpbPayload { .. })),
        1
    );
    // A repeat of the same announcement is not answered again.
    let second = recv(
        &mut a,
        1021,
        1,
        WireMessage::CheckSync {
            height: 1,
            body_hash: foreign,
        },
    );
    assert!(sends(&second).is_empty() && second.is_empty());
}

#[test]
fn two_nodes_converge_within_two_rounds() {
    let mut n0 = node(ProtocolKind::Bbp, 0, vec![1]);
    let mut n1 = node(ProtocolKind::Bbp, 1, vec![0]);
    n0.init();
    n1.init();
    let a = tx(0, 1, 5);
    let b = tx(1, 1, 7);

    // Each node pre-packs only its own transaction, but both know both.
    let s0 = n0.handle(0, NodeEvent::LocalTx { tx: a.clone(), gossip: false });
    let ann0 = fire_rebuild(&mut n0, 5, &s0);
    let s1 = n1.handle(0, NodeEvent::LocalTx { tx: b.clone(), gossip: false });
    let ann1 = fire_rebuild(&mut n1, 5, &s1);
    recv(&mut n0, 6, 1, WireMessage::NewTx(Arc::new(b)));
    recv(&mut n1, 6, 0, WireMessage::NewTx(Arc::new(a)));
    assert_ne!(
        n0.vinfo.as_ref().unwrap().body_hash,
        n1.vinfo.as_ref().unwrap().body_hash
    );

    // Round 1: exchange announcements; after the grace period each side
    // answers with its own body, addressed back to the announcer.
    let mut payload_to_0 = Vec::new();
    for (_, msg) in sends(&ann0) {
        let sched = recv(&mut n1, 10, 0, msg.clone());
        let reply = fire_recheck(&mut n1, 1010, &sched);
        payload_to_0.extend(sends(&reply).into_iter().map(|(_, m)| m.clone()));
    }
    let mut payload_to_1 = Vec::new();
    for (_, msg) in sends(&ann1) {
        let sched = recv(&mut n0, 10, 1, msg.clone());
        let reply = fire_recheck(&mut n0, 1010, &sched);
        payload_to_1.extend(sends(&reply).into_iter().map(|(_, m)| m.clone()));
    }

    // Round 2: merge the payloads.
    for msg in payload_to_0 {
        recv(&mut n0, 1020, 1, msg);
    }
    for msg in payload_to_1 {
        recv(&mut n1, 1020, 0, msg);
    }
    assert_eq!(
        n0.vinfo.as_ref().unwrap().body_hash,
        n1.vinfo.as_ref().unwrap().body_hash
    );
    assert_eq!(n0.ppb.as_ref().unwrap().txs.len(), 2);
}

// ---- bodyless propagation ---------------------------------------------------

#[test]
fn synced_neighbors_receive_headers_only() {
    let mut miner = node(ProtocolKind::Bbp, 0, vec![1, 2]);
    let init = miner.init();
    let empty_hash = miner.vinfo.as_ref().unwrap().body_hash;
    assert_eq!(sends(&init).len(), 2);
    for peer in [1, 2] {
        recv(
            &mut miner,
            1,
            peer,
            WireMessage::CheckSync {
                height: 1,
                body_hash: empty_hash,
            },
        );
    }
    let actions = miner.handle(1000, NodeEvent::MineSuccess);
    assert_eq!(
        count(&actions, |m| matches!(m, WireMessage::BlockHeaderMsg { .. })),
        2
    );
    assert_eq!(count(&actions, |m| matches!(m, WireMessage::FullBlock { .. })), 0);
}

#[test]
fn desynced_neighbor_gets_the_full_block() {
    let mut miner = node(ProtocolKind::Bbp, 0, vec![1, 2]);
    miner.init();
    let empty_hash = miner.vinfo.as_ref().unwrap().body_hash;
    recv(
        &mut miner,
        1,
        1,
        WireMessage::CheckSync {
            height: 1,
            body_hash: empty_hash,
        },
    );
    recv(
        &mut miner,
        1,
        2,
        WireMessage::CheckSync {
            height: 1,
            body_hash: Hash256([9; 32]),
        },
    );
    let actions = miner.handle(1000, NodeEvent::MineSuccess);
    let sent = sends(&actions);
    assert!(sent
        .iter()
        .any(|(to, m)| *to == 1 && matches!(m, WireMessage::BlockHeaderMsg { .. })));
    assert!(sent
        .iter()
        .any(|(to, m)| *to == 2 && matches!(m, WireMessage::FullBlock { .. })));
}

#[test]
fn stale_sync_falls_back_to_get_data_and_still_commits() {
    let mut miner = node(ProtocolKind::Bbp, 0, vec![1]);
    miner.init();
    let mut peer = node(ProtocolKind::Bbp, 1, vec![0]);
    peer.init();
    // The peer pre-packed a transaction the miner never saw.
    let s = peer.handle(0, NodeEvent::LocalTx { tx: tx(2, 1, 9), gossip: false });
    fire_rebuild(&mut peer, 5, &s);

    let mine = miner.handle(1000, NodeEvent::MineSuccess);
    let header_msg = sends(&mine)
        .into_iter()
        .find(|(_, m)| matches!(m, WireMessage::BlockHeaderMsg { .. } | WireMessage::FullBlock { .. }))
        .map(|(_, m)| m.clone())
        .unwrap();
    // The miner saw no announcement from the peer, so it pushes a full
    // block; force the header path to exercise the fallback.
    let header = match header_msg {
        WireMessage::FullBlock { block, .. } => block.header.clone(),
        WireMessage::BlockHeaderMsg { header, .. } => header,
        _ => unreachable!(),
    };
    let reaction = recv(
        &mut peer,
        1100,
        0,
        WireMessage::BlockHeaderMsg {
            header,
            hop: 1,
        },
    );
    let get_data = sends(&reaction);
    assert_eq!(get_data.len(), 1);
    assert!(matches!(get_data[0].1, WireMessage::GetData(_)));

    let block = miner.chain.blocks[&miner.chain.head].clone();
    let commit = recv(&mut peer, 1200, 0, WireMessage::FullBlock { block, hop: 1 });
    assert!(commit
        .iter()
        .any(|a| matches!(a, Action::Note(TraceNote::Commit { .. }))));
    assert_eq!(peer.chain.height(), 1);
}

// ---- legacy announce/request propagation ------------------------------------

#[test]
fn legacy_delivery_takes_three_messages_per_hop() {
    let mut miner = node(ProtocolKind::Lbp, 0, vec![1]);
    let mut peer = node(ProtocolKind::Lbp, 1, vec![0, 2]);
    let mine = miner.handle(1000, NodeEvent::MineSuccess);
    let inv = sends(&mine);
    assert_eq!(inv.len(), 1);
    assert!(matches!(inv[0].1, WireMessage::Inv { .. }));

    let ask = recv(&mut peer, 1050, 0, inv[0].1.clone());
    assert_eq!(count(&ask, |m| matches!(m, WireMessage::GetData(_))), 1);
    // A second announcement of the same block draws no second request.
    let again = recv(&mut peer, 1051, 0, inv[0].1.clone());
    assert!(sends(&again).is_empty());

    let serve = recv(&mut miner, 1100, 1, sends(&ask)[0].1.clone());
    assert_eq!(count(&serve, |m| matches!(m, WireMessage::FullBlock { .. })), 1);

    let deliver = recv(&mut peer, 1150, 0, sends(&serve)[0].1.clone());
    assert!(deliver
        .iter()
        .any(|a| matches!(a, Action::Note(TraceNote::Commit { .. }))));
    // The committed block is announced onward, not flooded in full.
    assert_eq!(count(&deliver, |m| matches!(m, WireMessage::Inv { .. })), 1);
    assert_eq!(count(&deliver, |m| matches!(m, WireMessage::FullBlock { .. })), 0);
}

// ---- hybrid header-first propagation ----------------------------------------

#[test]
fn hybrid_fanout_splits_sqrt_full_blocks_from_announcements() {
    let mut miner = node(ProtocolKind::Bhp, 0, (1..=9).collect());
    let actions = miner.handle(1000, NodeEvent::MineSuccess);
    assert_eq!(count(&actions, |m| matches!(m, WireMessage::FullBlock { .. })), 3);
    assert_eq!(
        count(&actions, |m| matches!(m, WireMessage::BlockHashAnnounce { .. })),
        6
    );
}

#[test]
fn hybrid_pull_path_requests_header_then_body() {
    let mut miner = node(ProtocolKind::Bhp, 0, vec![1]);
    let mine = miner.handle(1000, NodeEvent::MineSuccess);
    let block_hash = match sends(&mine)[0].1 {
        WireMessage::FullBlock { block, .. } => block.hash(),
        WireMessage::BlockHashAnnounce { block_hash, .. } => *block_hash,
        _ => unreachable!(),
    };

    let mut peer = node(ProtocolKind::Bhp, 1, vec![0]);
    let t1 = recv(&mut peer, 1050, 0, WireMessage::BlockHashAnnounce { block_hash, hop: 1 });
    let t1_kind = match &t1[..] {
        [Action::StartTimer { kind, delay_ms }] => {
            assert_eq!(*delay_ms, 400.0);
            *kind
        }
        other => panic!("expected one timer, got {other:?}"),
    };
    let ask_header = peer.handle(1450, NodeEvent::Timer(t1_kind));
    assert_eq!(count(&ask_header, |m| matches!(m, WireMessage::GetHeader(_))), 1);

    let reply = recv(&mut miner, 1500, 1, sends(&ask_header)[0].1.clone());
    let t2 = recv(&mut peer, 1550, 0, sends(&reply)[0].1.clone());
    let t2_kind = match &t2[..] {
        [Action::StartTimer { kind, delay_ms }] => {
            assert_eq!(*delay_ms, 100.0);
            *kind
        }
        other => panic!("expected one timer, got {other:?}"),
    };
    let ask_body = peer.handle(1650, NodeEvent::Timer(t2_kind));
    assert_eq!(count(&ask_body, |m| matches!(m, WireMessage::GetBody(_))), 1);

    let serve = recv(&mut miner, 1700, 1, sends(&ask_body)[0].1.clone());
    let commit = recv(&mut peer, 1750, 0, sends(&serve)[0].1.clone());
    assert!(commit
        .iter()
        .any(|a| matches!(a, Action::Note(TraceNote::Commit { .. }))));
}

#[test]
fn hybrid_pull_aborts_when_the_block_arrives() {
    let mut miner = node(ProtocolKind::Bhp, 0, vec![1, 2]);
    miner.handle(1000, NodeEvent::MineSuccess);
    let block = miner.chain.blocks[&miner.chain.head].clone();
    let block_hash = block.hash();

    let mut peer = node(ProtocolKind::Bhp, 1, vec![0, 2]);
    let t1 = recv(&mut peer, 1050, 2, WireMessage::BlockHashAnnounce { block_hash, hop: 1 });
    let t1_kind = match &t1[..] {
        [Action::StartTimer { kind, .. }] => *kind,
        other => panic!("expected one timer, got {other:?}"),
    };
    // The full block lands 200 ms into the wait.
    let commit = recv(&mut peer, 1250, 0, WireMessage::FullBlock { block, hop: 1 });
    assert!(commit
        .iter()
        .any(|a| matches!(a, Action::Note(TraceNote::Commit { .. }))));
    // The expiring timer must stay silent: no header request goes out.
    let expiry = peer.handle(1450, NodeEvent::Timer(t1_kind));
    assert!(sends(&expiry).is_empty());
}

// ---- compact propagation ----------------------------------------------------

fn cbp_pair_with_tx(peer_knows_tx: bool) -> (Node, Node, Transaction) {
    let t = tx(0, 1, 5);
    let mut miner = node(ProtocolKind::Cbp, 0, vec![1]);
    miner.handle(0, NodeEvent::LocalTx { tx: t.clone(), gossip: false });
    let mut peer = node(ProtocolKind::Cbp, 1, vec![0]);
    if peer_knows_tx {
        peer.handle(0, NodeEvent::LocalTx { tx: t.clone(), gossip: false });
    }
    (miner, peer, t)
}

#[test]
fn compact_delivery_with_complete_pool_needs_no_extra_round() {
    let (mut miner, mut peer, _) = cbp_pair_with_tx(true);
    let mine = miner.handle(1000, NodeEvent::MineSuccess);
    let ask = recv(&mut peer, 1050, 0, sends(&mine)[0].1.clone());
    let serve = recv(&mut miner, 1100, 1, sends(&ask)[0].1.clone());
    assert_eq!(count(&serve, |m| matches!(m, WireMessage::CompactBlock { .. })), 1);
    let deliver = recv(&mut peer, 1150, 0, sends(&serve)[0].1.clone());
    assert!(deliver
        .iter()
        .any(|a| matches!(a, Action::Note(TraceNote::CompactArrived { matched: true }))));
    assert!(deliver
        .iter()
        .any(|a| matches!(a, Action::Note(TraceNote::Commit { .. }))));
    assert_eq!(count(&deliver, |m| matches!(m, WireMessage::GetMissedTxs { .. })), 0);
}

#[test]
fn one_missing_tx_costs_one_round_trip() {
    let (mut miner, mut peer, _) = cbp_pair_with_tx(false);
    let mine = miner.handle(1000, NodeEvent::MineSuccess);
    let ask = recv(&mut peer, 1050, 0, sends(&mine)[0].1.clone());
    let serve = recv(&mut miner, 1100, 1, sends(&ask)[0].1.clone());
    let react = recv(&mut peer, 1150, 0, sends(&serve)[0].1.clone());
    assert!(react
        .iter()
        .any(|a| matches!(a, Action::Note(TraceNote::CompactArrived { matched: false }))));
    let missed: Vec<_> = sends(&react)
        .into_iter()
        .filter(|(_, m)| matches!(m, WireMessage::GetMissedTxs { .. }))
        .collect();
    assert_eq!(missed.len(), 1);
    let reply = recv(&mut miner, 1200, 1, missed[0].1.clone());
    assert_eq!(count(&reply, |m| matches!(m, WireMessage::MissedTxs { .. })), 1);
    let commit = recv(&mut peer, 1250, 0, sends(&reply)[0].1.clone());
    assert!(commit
        .iter()
        .any(|a| matches!(a, Action::Note(TraceNote::Commit { .. }))));
    assert_eq!(peer.chain.height(), 1);
}

// ---- transaction gossip -----------------------------------------------------

#[test]
fn duplicate_new_tx_is_not_reforwarded() {
    let mut n = node(ProtocolKind::Lbp, 0, vec![1, 2, 3]);
    let t = Arc::new(tx(0, 1, 5));
    let first = recv(&mut n, 10, 1, WireMessage::NewTx(t.clone()));
    assert!(!sends(&first).is_empty());
    let second = recv(&mut n, 11, 2, WireMessage::NewTx(t));
    assert!(sends(&second).is_empty());
}

#[test]
fn hash_announce_triggers_a_single_fetch() {
    let mut n = node(ProtocolKind::Lbp, 0, vec![1, 2]);
    let h = tx(0, 1, 5).hash();
    let first = recv(&mut n, 10, 1, WireMessage::TxHashAnnounce(h));
    assert_eq!(count(&first, |m| matches!(m, WireMessage::GetTx(_))), 1);
    let second = recv(&mut n, 11, 2, WireMessage::TxHashAnnounce(h));
    assert!(sends(&second).is_empty());
}

#[test]
fn get_tx_after_pool_reset_goes_unanswered() {
    let mut miner = node(ProtocolKind::Lbp, 0, vec![1]);
    let t = tx(0, 1, 5);
    miner.handle(0, NodeEvent::LocalTx { tx: t.clone(), gossip: false });
    let before = recv(&mut miner, 10, 1, WireMessage::GetTx(t.hash()));
    assert_eq!(count(&before, |m| matches!(m, WireMessage::NewTx(_))), 1);
    // Mining commits the transaction and resets the pool.
    miner.handle(1000, NodeEvent::MineSuccess);
    let block: &Arc<Block> = &miner.chain.blocks[&miner.chain.head];
    assert_eq!(block.body.len(), 1);
    let after = recv(&mut miner, 1100, 1, WireMessage::GetTx(t.hash()));
    assert!(sends(&after).is_empty());
}
