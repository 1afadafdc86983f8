//! Raw measurement trace of a simulation run plus its CSV renderings.
//!
//! Block dissemination messages are logged individually; transaction gossip
//! and body synchronization traffic is only aggregated, which keeps traces
//! of large runs manageable.

use std::io::Write;
use std::path::Path;

use crate::chain::Hash256;
use crate::protocols::NodeId;

#[derive(Clone, Debug)]
pub struct CommitRow {
    pub node: NodeId,
    pub block_hash: Hash256,
    pub parent_hash: Hash256,
    pub height: u64,
    pub time_ms: f64,
    pub hop: u32,
    pub processing_ms: f64,
    pub via_header: bool,
}

#[derive(Clone, Debug)]
pub struct MinedRow {
    pub block_hash: Hash256,
    pub parent_hash: Hash256,
    pub height: u64,
    pub miner: NodeId,
    pub time_ms: f64,
    pub n_txs: u64,
}

#[derive(Clone, Debug)]
pub struct SyncRow {
    pub node: NodeId,
    pub height: u64,
    pub synced: bool,
    pub time_ms: f64,
}

/// One logged block-dissemination message.
#[derive(Clone, Debug)]
pub struct MsgRow {
    pub time_ms: f64,
    pub from: NodeId,
    pub to: NodeId,
    pub msg_type: &'static str,
    pub size_bytes: u64,
    pub hop: Option<u32>,
}

#[derive(Clone, Copy, Default, Debug)]
pub struct ClassBytes {
    pub tx_gossip: u64,
    pub ppb_sync: u64,
    pub block_prop: u64,
}

#[derive(Clone, Copy, Default, Debug)]
pub struct ClassCounts {
    pub tx_gossip: u64,
    pub ppb_sync: u64,
    pub block_prop: u64,
}

#[derive(Clone, Default, Debug)]
pub struct RawTrace {
    pub commits: Vec<CommitRow>,
    pub mined: Vec<MinedRow>,
    pub sync_reports: Vec<SyncRow>,
    pub block_msgs: Vec<MsgRow>,
    pub class_bytes: ClassBytes,
    pub class_counts: ClassCounts,
    pub stale_txs: u64,
    pub accepted_txs: u64,
    pub compact_matched: u64,
    pub compact_missed: u64,
    pub full_block_sends: u64,
    pub header_sends: u64,
    pub get_body_sends: u64,
    /// (send time ms, src, dst, body len) of every body payload, for
    /// inspecting residual synchronization work.
    pub payload_sends: Vec<(u64, usize, usize, usize)>,
    pub invalid_blocks: u64,
    pub side_blocks: u64,
    pub final_heads: Vec<Hash256>,
    pub duration_ms: f64,
    pub n_nodes: usize,
    pub mean_link_latency_ms: f64,
}

impl RawTrace {
    /// Hashes of blocks that never became part of the majority head chain.
    pub fn stale_hashes(&self) -> Vec<Hash256> {
        use std::collections::{HashMap, HashSet};
        let mut votes: HashMap<Hash256, usize> = HashMap::new();
        for h in &self.final_heads {
            *votes.entry(*h).or_insert(0) += 1;
        }
        let Some((&head, _)) = votes.iter().max_by_key(|(h, n)| (**n, std::cmp::Reverse(**h)))
        else {
            return Vec::new();
        };
        let parent: HashMap<Hash256, Hash256> =
            self.mined.iter().map(|m| (m.block_hash, m.parent_hash)).collect();
        let mut canonical = HashSet::new();
        let mut cur = head;
        loop {
            canonical.insert(cur);
            match parent.get(&cur) {
                Some(p) => cur = *p,
                None => break,
            }
        }
        self.mined
            .iter()
            .filter(|m| !canonical.contains(&m.block_hash))
            .map(|m| m.block_hash)
            .collect()
    }

    pub fn write_csvs(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        self.write_blocks_csv(&dir.join("blocks.csv"))?;
        self.write_messages_csv(&dir.join("messages.csv"))?;
        self.write_sync_csv(&dir.join("sync.csv"))?;
        self.write_stale_csv(&dir.join("stale.csv"))?;
        Ok(())
    }

    /// Per-block commit-delay percentile (ms) across all nodes; `None` when
    /// fewer nodes committed than the percentile rank requires.
    fn block_percentile(&self, delays: &[f64], q: f64) -> Option<f64> {
        let rank = ((self.n_nodes as f64 * q).ceil() as usize).max(1);
        if delays.len() < rank {
            return None;
        }
        Some(delays[rank - 1])
    }

    fn write_blocks_csv(&self, path: &Path) -> std::io::Result<()> {
        let stale: std::collections::HashSet<Hash256> = self.stale_hashes().into_iter().collect();
        let mut delays: std::collections::HashMap<Hash256, Vec<f64>> = Default::default();
        let mine_time: std::collections::HashMap<Hash256, f64> =
            self.mined.iter().map(|m| (m.block_hash, m.time_ms)).collect();
        for c in &self.commits {
            if let Some(t0) = mine_time.get(&c.block_hash) {
                delays.entry(c.block_hash).or_default().push(c.time_ms - t0);
            }
        }
        for d in delays.values_mut() {
            d.sort_by(|a, b| a.partial_cmp(b).unwrap());
        }
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_default();
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(
            f,
            "block_hash,height,miner,mine_ms,p50_ms,p90_ms,p99_ms,n_txs,commits,stale"
        )?;
        let mut rows = self.mined.clone();
        rows.sort_by(|a, b| (a.height, a.block_hash).cmp(&(b.height, b.block_hash)));
        for m in rows {
            let empty = Vec::new();
            let d = delays.get(&m.block_hash).unwrap_or(&empty);
            writeln!(
                f,
                "{},{},{},{:.3},{},{},{},{},{},{}",
                m.block_hash.to_hex(),
                m.height,
                m.miner,
                m.time_ms,
                fmt(self.block_percentile(d, 0.5)),
                fmt(self.block_percentile(d, 0.9)),
                fmt(self.block_percentile(d, 0.99)),
                m.n_txs,
                d.len(),
                stale.contains(&m.block_hash) as u8
            )?;
        }
        Ok(())
    }

    fn write_messages_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "time_ms,src,dst,type,bytes")?;
        for m in &self.block_msgs {
            writeln!(
                f,
                "{:.3},{},{},{},{}",
                m.time_ms, m.from, m.to, m.msg_type, m.size_bytes
            )?;
        }
        Ok(())
    }

    fn write_sync_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut per_height: std::collections::BTreeMap<u64, (u64, u64)> = Default::default();
        for s in &self.sync_reports {
            let e = per_height.entry(s.height).or_insert((0, 0));
            if s.synced {
                e.0 += 1;
            }
            e.1 += 1;
        }
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "height,synced_nodes,total_nodes")?;
        for (height, (synced, total)) in per_height {
            writeln!(f, "{height},{synced},{total}")?;
        }
        Ok(())
    }

    fn write_stale_csv(&self, path: &Path) -> std::io::Result<()> {
        let stale: std::collections::HashSet<Hash256> = self.stale_hashes().into_iter().collect();
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "kind,count,height")?;
        let mut rows: Vec<&MinedRow> = self
            .mined
            .iter()
            .filter(|m| stale.contains(&m.block_hash))
            .collect();
        rows.sort_by_key(|m| (m.height, m.block_hash));
        for m in rows {
            writeln!(f, "block,1,{}", m.height)?;
        }
        writeln!(f, "tx,{},0", self.stale_txs)?;
        Ok(())
    }
}
