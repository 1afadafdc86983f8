//! Simplified ledger execution: single-transaction application, transaction
//! intersection, un-executable sequence construction, pre-validation and the
//! two validation paths (fast header validation against pre-validation info,
//! and full sequential validation).

use thiserror::Error;

use crate::chain::{
    body_hash, state_root, AccountId, Block, BlockHeader, Hash256, Recipient, Transaction,
    WorldState,
};

/// Sentinel account that collects fees of pre-executed transactions while the
/// real coinbase is still unknown. Drained into the coinbase at finalization.
pub const ESCROW_ACCOUNT: AccountId = AccountId(u64::MAX);

#[derive(Clone, Copy, PartialEq, Eq, Debug, Error)]
pub enum ExecFailure {
    #[error("bad nonce")]
    BadNonce,
    #[error("insufficient balance")]
    InsufficientBalance,
}

/// Applies one transaction. Succeeds iff the nonce is exactly the sender's
/// next nonce and the balance covers amount plus fee. On failure the state is
/// left untouched; failures are ordinary data outcomes, not faults.
pub fn apply_tx(
    state: &mut WorldState,
    tx: &Transaction,
    coinbase: AccountId,
) -> Result<(), ExecFailure> {
    let sender = state.get(tx.sender);
    if tx.nonce != sender.nonce + 1 {
        return Err(ExecFailure::BadNonce);
    }
    let fee = tx.fee();
    let total = tx.amount.checked_add(fee).ok_or(ExecFailure::InsufficientBalance)?;
    if sender.balance < total {
        return Err(ExecFailure::InsufficientBalance);
    }
    let recipient = match tx.recipient {
        Recipient::Account(id) => id,
        Recipient::Coinbase => coinbase,
    };
    let mut s = sender;
    s.balance -= total;
    s.nonce += 1;
    state.set(tx.sender, s);
    state.credit(recipient, tx.amount);
    state.credit(coinbase, fee);
    Ok(())
}

/// Two transactions intersect if they share at least one accessed account.
/// The accessed set of a transfer is {sender, recipient}; two transactions
/// paying the (unknown) coinbase share that address.
pub fn intersects(a: &Transaction, b: &Transaction) -> bool {
    let shares_account = |x: &Transaction, y: &Transaction| {
        x.sender == y.sender
            || Recipient::Account(x.sender) == y.recipient
            || x.recipient == Recipient::Account(y.sender)
            || x.recipient == y.recipient
    };
    shares_account(a, b)
}

/// Splits a PPB into the un-executable sequence and the executable remainder.
///
/// The un-executable sequence is the least fixpoint seeded with every
/// coinbase-accessing transaction and closed under intersection with any
/// member. Both outputs preserve the PPB order.
pub fn build_unexecutable_seq(ppb: &[Transaction]) -> (Vec<Transaction>, Vec<Transaction>) {
    let n = ppb.len();
    let mut in_ug = vec![false; n];
    for (i, tx) in ppb.iter().enumerate() {
        if tx.accesses_coinbase() {
            in_ug[i] = true;
        }
    }
    loop {
        let mut changed = false;
        for i in 0..n {
            if in_ug[i] {
                continue;
            }
            if (0..n).any(|j| in_ug[j] && intersects(&ppb[i], &ppb[j])) {
                in_ug[i] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let mut ug = Vec::new();
    let mut executable = Vec::new();
    for (i, tx) in ppb.iter().enumerate() {
        if in_ug[i] {
            ug.push(tx.clone());
        } else {
            executable.push(tx.clone());
        }
    }
    (ug, executable)
}

/// Pre-validation output: the body commitment over the pruned PPB, the
/// un-executable sequence, and the state after executing everything else.
#[derive(Clone, Debug)]
pub struct ValidationInfo {
    pub body_hash: Hash256,
    pub unexecutable: Vec<Transaction>,
    pub intermediate_state: WorldState,
    pub pruned_ppb: Vec<Transaction>,
}

/// Pre-validates a PPB against the committed base state.
///
/// Coinbase-dependent transactions are set aside; the rest execute in PPB
/// order with fees escrowed (the coinbase is not known yet). A transaction
/// that fails to execute is removed from the PPB.
pub fn pre_validate(base_state: &WorldState, ppb: &[Transaction]) -> ValidationInfo {
    let (ug, executable) = build_unexecutable_seq(ppb);
    let mut state = base_state.clone();
    let mut pruned: Vec<bool> = Vec::with_capacity(executable.len());
    for tx in &executable {
        pruned.push(apply_tx(&mut state, tx, ESCROW_ACCOUNT).is_err());
    }
    let mut failed = std::collections::HashSet::new();
    for (tx, p) in executable.iter().zip(&pruned) {
        if *p {
            failed.insert(tx.hash());
        }
    }
    let pruned_ppb: Vec<Transaction> = ppb
        .iter()
        .filter(|tx| !failed.contains(&tx.hash()))
        .cloned()
        .collect();
    ValidationInfo {
        body_hash: body_hash(&pruned_ppb),
        unexecutable: ug,
        intermediate_state: state,
        pruned_ppb,
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Error)]
pub enum ValidateMismatch {
    /// Local body differs from the header commitment; fall back to the full block.
    #[error("body hash mismatch")]
    Body,
    /// Post-execution state root differs; the block is invalid.
    #[error("state root mismatch")]
    State,
}

/// Moves the escrow balance to the real coinbase and drops the sentinel entry.
fn drain_escrow(state: &mut WorldState, coinbase: AccountId) {
    if let Some(e) = state.remove(ESCROW_ACCOUNT) {
        debug_assert_eq!(e.nonce, 0);
        state.credit(coinbase, e.balance);
    }
}

/// Fast validation of a received header against pre-validation info.
///
/// Gates on the body hash first; only then executes the un-executable
/// sequence on the intermediate state with the now-known coinbase. A failing
/// un-executable transaction is skipped, mirroring the pruning rule of
/// pre-validation; a mismatching root then rejects the block.
pub fn finalize_validate(
    info: &ValidationInfo,
    header: &BlockHeader,
    _base_state: &WorldState,
) -> Result<WorldState, ValidateMismatch> {
    if info.body_hash != header.txs_hash {
        return Err(ValidateMismatch::Body);
    }
    let mut state = info.intermediate_state.clone();
    for tx in &info.unexecutable {
        let _ = apply_tx(&mut state, tx, header.coinbase);
    }
    drain_escrow(&mut state, header.coinbase);
    if state_root(&state) != header.state_root {
        return Err(ValidateMismatch::State);
    }
    Ok(state)
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Error)]
pub enum RejectReason {
    #[error("invalid header")]
    Header,
    #[error("transaction execution failed")]
    Execution,
    #[error("state root mismatch")]
    StateRoot,
}

/// Full legacy validation: header checks, sequential execution of the whole
/// body (any failing transaction rejects the block), state root comparison.
pub fn full_validate(
    base_state: &WorldState,
    parent: &BlockHeader,
    block: &Block,
) -> Result<WorldState, RejectReason> {
    let h = &block.header;
    if h.parent_hash != parent.hash()
        || h.number != parent.number + 1
        || h.timestamp <= parent.timestamp
    {
        return Err(RejectReason::Header);
    }
    if h.txs_hash != body_hash(&block.body) {
        return Err(RejectReason::Header);
    }
    let mut state = base_state.clone();
    for tx in &block.body {
        if apply_tx(&mut state, tx, h.coinbase).is_err() {
            return Err(RejectReason::Execution);
        }
    }
    if state_root(&state) != h.state_root {
        return Err(RejectReason::StateRoot);
    }
    Ok(state)
}

/// Executes a candidate body sequentially with the given coinbase, dropping
/// transactions that fail. Used by miners to seal a block whose body is
/// guaranteed to pass full validation.
pub fn execute_pruning(
    base_state: &WorldState,
    txs: &[Transaction],
    coinbase: AccountId,
) -> (Vec<Transaction>, WorldState) {
    let mut state = base_state.clone();
    let mut kept = Vec::with_capacity(txs.len());
    for tx in txs {
        if apply_tx(&mut state, tx, coinbase).is_ok() {
            kept.push(tx.clone());
        }
    }
    (kept, state)
}

/// Seals a block from pre-validation info: executes the un-executable
/// sequence with the miner's own coinbase (dropping failures), drains the
/// escrow, and commits the resulting root into the header.
pub fn seal_from_prevalidation(
    info: &ValidationInfo,
    parent: &BlockHeader,
    timestamp: u64,
    coinbase: AccountId,
) -> (Block, WorldState) {
    let mut state = info.intermediate_state.clone();
    let mut dropped = std::collections::HashSet::new();
    for tx in &info.unexecutable {
        if apply_tx(&mut state, tx, coinbase).is_err() {
            dropped.insert(tx.hash());
        }
    }
    drain_escrow(&mut state, coinbase);
    let body: Vec<Transaction> = info
        .pruned_ppb
        .iter()
        .filter(|tx| !dropped.contains(&tx.hash()))
        .cloned()
        .collect();
    let header = BlockHeader {
        parent_hash: parent.hash(),
        number: parent.number + 1,
        timestamp,
        coinbase,
        txs_hash: body_hash(&body),
        state_root: state_root(&state),
    };
    (Block { header, body }, state)
}

/// Seals a block from an arbitrary ordered transaction list (baseline miners
/// and the dishonest-miner mode), pruning transactions that fail to execute.
pub fn seal_from_txs(
    base_state: &WorldState,
    txs: &[Transaction],
    parent: &BlockHeader,
    timestamp: u64,
    coinbase: AccountId,
) -> (Block, WorldState) {
    let (body, state) = execute_pruning(base_state, txs, coinbase);
    let header = BlockHeader {
        parent_hash: parent.hash(),
        number: parent.number + 1,
        timestamp,
        coinbase,
        txs_hash: body_hash(&body),
        state_root: state_root(&state),
    };
    (Block { header, body }, state)
}
