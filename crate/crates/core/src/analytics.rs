//! Closed-form performance models and reduction of simulation traces into a
//! metrics report.
//!
//! The latency models mirror the per-hop message/validation pipelines of the
//! four protocols; throughput and fork probability follow from the block
//! interval and the propagation latency. All model times are milliseconds
//! unless a name says otherwise.

use std::collections::HashMap;

use serde::Serialize;
use thiserror::Error;

use crate::netsim::trace::RawTrace;
use crate::protocols::messages::SizeTable;
use crate::protocols::node::CostModel;
use crate::protocols::ProtocolKind;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Error)]
pub enum ModelError {
    #[error("missing model parameter: {0}")]
    MissingParam(&'static str),
}

/// Serialization/transmission delay of `bytes` over a `bps` bits-per-second
/// link, in milliseconds.
pub fn transmission_ms(bytes: f64, bps: f64) -> f64 {
    8000.0 * bytes / bps
}

/// Throughput in transactions per second for `n_t` transactions per block
/// and a mean block interval of `t_g_s` seconds.
pub fn tps(n_t: f64, t_g_s: f64) -> f64 {
    n_t / t_g_s
}

/// Fork probability under exponential block intervals: the chance that a
/// competing block is found while the previous one is still propagating.
pub fn fork_probability(t_l_s: f64, t_g_s: f64) -> f64 {
    1.0 - (-t_l_s / t_g_s).exp()
}

/// Fork probability as a function of throughput, at fixed transactions per
/// block: substituting t_g = n_t / TPS into the interval form.
pub fn fork_probability_from_tps(t_l_s: f64, tps: f64, n_t: f64) -> f64 {
    1.0 - (-t_l_s * tps / n_t).exp()
}

/// Inputs of the closed-form latency models.
#[derive(Clone, Debug)]
pub struct AnalyticParams {
    /// Transactions per block.
    pub n_t: f64,
    /// Un-executable (coinbase-dependent) transactions per block.
    pub n_u: f64,
    /// Propagation hops to reach 90% of the network.
    pub hops: f64,
    /// Mean one-way link latency, ms.
    pub t_c_ms: f64,
    /// Link bandwidth, bits per second.
    pub bandwidth_bps: f64,
    pub sizes: SizeTable,
    pub cost: CostModel,
    /// Fraction of unsynchronized transfers (full-block fallback), bodyless
    /// protocol only.
    pub gamma: Option<f64>,
    /// Fraction of nodes served through the announce/header/body path,
    /// header-first protocol only.
    pub alpha: Option<f64>,
    /// Fraction of compact blocks needing a missing-transaction round trip.
    pub beta: Option<f64>,
    /// Expected number of transactions fetched in such a round trip.
    pub missed_txs: f64,
    /// Header-first retrieval hold-off before requesting the header, ms.
    pub t1_ms: f64,
    /// Header-first hold-off before requesting the body, ms.
    pub t2_ms: f64,
}

impl AnalyticParams {
    pub fn new(n_t: f64, hops: f64, t_c_ms: f64, bandwidth_bps: f64) -> AnalyticParams {
        AnalyticParams {
            n_t,
            n_u: 0.0,
            hops,
            t_c_ms,
            bandwidth_bps,
            sizes: SizeTable::default(),
            cost: CostModel::default(),
            gamma: None,
            alpha: None,
            beta: None,
            missed_txs: 0.0,
            t1_ms: 400.0,
            t2_ms: 100.0,
        }
    }

    fn body_bytes(&self) -> f64 {
        self.sizes.s_header as f64 + self.n_t * self.sizes.s_tx as f64
    }

    fn exec_ms(&self) -> f64 {
        self.n_t * (self.cost.t_e_ms + self.cost.t_w_ms)
    }

    /// Expected one-hop-chain latency (ms) for a block to reach a node `hops`
    /// hops from the miner.
    pub fn latency_ms(&self, kind: ProtocolKind) -> Result<f64, ModelError> {
        let c = &self.cost;
        let s = &self.sizes;
        let h = self.hops;
        let t_c = self.t_c_ms;
        let bw = self.bandwidth_bps;
        match kind {
            ProtocolKind::Bbp => {
                let gamma = self.gamma.ok_or(ModelError::MissingParam("gamma"))?;
                let slow = self.exec_ms() + c.t_h_ms + transmission_ms(self.body_bytes(), bw) + t_c;
                let fast = (self.n_t - self.n_u) * c.t_r_ms
                    + self.n_u * c.t_e_ms
                    + c.t_h_ms
                    + transmission_ms(s.s_header as f64, bw)
                    + t_c;
                Ok(gamma * h * slow + (1.0 - gamma) * h * fast)
            }
            ProtocolKind::Lbp => {
                let per_hop = self.exec_ms()
                    + c.t_h_ms
                    + transmission_ms(2.0 * s.s_hash as f64 + self.body_bytes(), bw)
                    + 3.0 * t_c;
                Ok(h * per_hop)
            }
            ProtocolKind::Bhp => {
                let alpha = self.alpha.ok_or(ModelError::MissingParam("alpha"))?;
                let push = c.t_h_ms + transmission_ms(self.body_bytes(), bw) + t_c;
                let t_c_prime = 4.0 * t_c + self.t1_ms + self.t2_ms;
                let pull = self.exec_ms()
                    + transmission_ms(3.0 * s.s_hash as f64, bw)
                    + t_c_prime;
                Ok(h * push + alpha * h * pull)
            }
            ProtocolKind::Cbp => {
                let beta = self.beta.ok_or(ModelError::MissingParam("beta"))?;
                let t_v = c.t_h_ms + self.exec_ms();
                let compact_bytes = s.s_header as f64 + self.n_t * s.s_hash as f64;
                let base = t_v
                    + 3.0 * t_c
                    + transmission_ms(2.0 * s.s_hash as f64 + compact_bytes, bw);
                let missed_bytes = s.s_hash as f64 + self.missed_txs * s.s_tx as f64;
                let retry = 2.0 * t_c + transmission_ms(s.s_hash as f64 + missed_bytes, bw);
                Ok(h * base + beta * h * retry)
            }
        }
    }
}

/// Aggregate metrics of a single simulation run.
#[derive(Clone, Debug, Serialize)]
pub struct MetricsReport {
    pub protocol: String,
    pub n_nodes: usize,
    pub blocks_mined: u64,
    pub canonical_len: u64,
    pub stale_blocks: u64,
    pub fork_rate: f64,
    /// Mean over blocks of the time (ms) until 90% of nodes committed.
    pub p90_latency_ms: f64,
    /// Mean hop count of the 90th-percentile committer.
    pub p90_hops: f64,
    pub tps_observed: f64,
    pub txs_committed: u64,
    pub mean_txs_per_block: f64,
    /// Mean per-commit processing charge (ms), all commits.
    pub mean_processing_ms: f64,
    /// Mean processing charge over header-validated (synchronized) commits.
    pub mean_header_processing_ms: f64,
    /// Unsynchronized-transfer fraction (bodyless protocol).
    pub gamma: Option<f64>,
    /// Announce-path fraction (header-first protocol).
    pub alpha: Option<f64>,
    /// Missing-transaction round-trip fraction (compact protocol).
    pub beta: Option<f64>,
    /// Fraction of node-block arrivals where the local pre-packed body
    /// already matched the committed body.
    pub sync_fraction: Option<f64>,
    pub stale_txs: u64,
    pub block_prop_bytes: u64,
    pub tx_gossip_bytes: u64,
    pub ppb_sync_bytes: u64,
    pub duration_s: f64,
    /// Mean one-way link latency of the generated topology, for plugging
    /// measured runs back into the closed-form models.
    pub mean_link_latency_ms: f64,
}

/// Reduces a raw trace to the metrics report.
pub fn reduce_trace(trace: &RawTrace, protocol: ProtocolKind, n_nodes: usize) -> MetricsReport {
    let mined = &trace.mined;
    let blocks_mined = mined.len() as u64;

    // Canonical chain: walk parents back from the most common head.
    let mut head_votes: HashMap<crate::chain::Hash256, usize> = HashMap::new();
    for h in &trace.final_heads {
        *head_votes.entry(*h).or_insert(0) += 1;
    }
    let mut parent_of: HashMap<crate::chain::Hash256, crate::chain::Hash256> = HashMap::new();
    let mut height_of: HashMap<crate::chain::Hash256, u64> = HashMap::new();
    let mut txs_of: HashMap<crate::chain::Hash256, u64> = HashMap::new();
    for m in mined {
        parent_of.insert(m.block_hash, m.parent_hash);
        height_of.insert(m.block_hash, m.height);
        txs_of.insert(m.block_hash, m.n_txs);
    }
    let best_head = head_votes
        .iter()
        .max_by_key(|(h, n)| (**n, std::cmp::Reverse(**h)))
        .map(|(h, _)| *h);
    let mut canonical = Vec::new();
    if let Some(mut cur) = best_head {
        while let Some(&h) = height_of.get(&cur) {
            canonical.push(cur);
            if h == 0 {
                break;
            }
            match parent_of.get(&cur) {
                Some(p) => cur = *p,
                None => break,
            }
        }
    }
    let canonical_len = canonical.len() as u64;
    let stale_blocks = blocks_mined.saturating_sub(canonical_len);

    // Per-block 90th percentile commit delay and hop.
    let mut mine_time: HashMap<crate::chain::Hash256, f64> = HashMap::new();
    for m in mined {
        mine_time.insert(m.block_hash, m.time_ms);
    }
    let mut per_block: HashMap<crate::chain::Hash256, Vec<(f64, u32)>> = HashMap::new();
    for c in &trace.commits {
        if let Some(t0) = mine_time.get(&c.block_hash) {
            per_block
                .entry(c.block_hash)
                .or_default()
                .push((c.time_ms - t0, c.hop));
        }
    }
    let idx90 = ((n_nodes as f64 * 0.9).ceil() as usize).max(1) - 1;
    let mut lat_sum = 0.0;
    let mut hop_sum = 0.0;
    let mut lat_n = 0usize;
    // Iterate in block-hash order so float accumulation is reproducible.
    let mut block_keys: Vec<crate::chain::Hash256> = per_block.keys().copied().collect();
    block_keys.sort_unstable();
    for key in block_keys {
        let delays = per_block.get_mut(&key).unwrap();
        delays.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        if let Some(&(d, hop)) = delays.get(idx90.min(delays.len() - 1)) {
            // Only blocks the (near-)whole network saw are meaningful samples;
            // stale blocks typically stop early.
            if delays.len() * 10 >= n_nodes * 9 {
                lat_sum += d;
                hop_sum += hop as f64;
                lat_n += 1;
            }
        }
    }
    let p90_latency_ms = if lat_n > 0 { lat_sum / lat_n as f64 } else { 0.0 };
    let p90_hops = if lat_n > 0 { hop_sum / lat_n as f64 } else { 0.0 };

    let txs_committed: u64 = canonical.iter().filter_map(|h| txs_of.get(h)).sum();
    let duration_s = trace.duration_ms / 1000.0;
    let tps_observed = if duration_s > 0.0 {
        txs_committed as f64 / duration_s
    } else {
        0.0
    };
    let mean_txs_per_block = if canonical_len > 0 {
        txs_committed as f64 / canonical_len as f64
    } else {
        0.0
    };

    let (mut proc_sum, mut proc_n) = (0.0, 0usize);
    let (mut hproc_sum, mut hproc_n) = (0.0, 0usize);
    for c in &trace.commits {
        proc_sum += c.processing_ms;
        proc_n += 1;
        if c.via_header && c.hop > 0 {
            hproc_sum += c.processing_ms;
            hproc_n += 1;
        }
    }

    let gamma = if protocol == ProtocolKind::Bbp {
        let full = trace.full_block_sends as f64;
        let header = trace.header_sends as f64;
        let total = full + header;
        Some(if total > 0.0 { full / total } else { 0.0 })
    } else {
        None
    };
    let alpha = if protocol == ProtocolKind::Bhp {
        let receivers = trace.commits.iter().filter(|c| c.hop > 0).count() as f64;
        Some(if receivers > 0.0 {
            trace.get_body_sends as f64 / receivers
        } else {
            0.0
        })
    } else {
        None
    };
    let beta = if protocol == ProtocolKind::Cbp {
        let total = trace.compact_matched + trace.compact_missed;
        Some(if total > 0 {
            trace.compact_missed as f64 / total as f64
        } else {
            0.0
        })
    } else {
        None
    };
    let sync_fraction = if protocol == ProtocolKind::Bbp {
        let total = trace.sync_reports.len() as f64;
        let synced = trace.sync_reports.iter().filter(|s| s.synced).count() as f64;
        Some(if total > 0.0 { synced / total } else { 0.0 })
    } else {
        None
    };

    MetricsReport {
        protocol: protocol.as_str().to_string(),
        n_nodes,
        blocks_mined,
        canonical_len,
        stale_blocks,
        fork_rate: if blocks_mined > 0 {
            stale_blocks as f64 / blocks_mined as f64
        } else {
            0.0
        },
        p90_latency_ms,
        p90_hops,
        tps_observed,
        txs_committed,
        mean_txs_per_block,
        mean_processing_ms: if proc_n > 0 { proc_sum / proc_n as f64 } else { 0.0 },
        mean_header_processing_ms: if hproc_n > 0 {
            hproc_sum / hproc_n as f64
        } else {
            0.0
        },
        gamma,
        alpha,
        beta,
        sync_fraction,
        stale_txs: trace.stale_txs,
        block_prop_bytes: trace.class_bytes.block_prop,
        tx_gossip_bytes: trace.class_bytes.tx_gossip,
        ppb_sync_bytes: trace.class_bytes.ppb_sync,
        duration_s,
        mean_link_latency_ms: trace.mean_link_latency_ms,
    }
}

impl MetricsReport {
    /// Two-column metric,value CSV rendering.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        let mut push = |k: &str, v: String| {
            out.push_str(k);
            out.push(',');
            out.push_str(&v);
            out.push('\n');
        };
        push("protocol", self.protocol.clone());
        push("n_nodes", self.n_nodes.to_string());
        push("blocks_mined", self.blocks_mined.to_string());
        push("canonical_len", self.canonical_len.to_string());
        push("stale_blocks", self.stale_blocks.to_string());
        push("fork_rate", format!("{:.6}", self.fork_rate));
        push("p90_latency_ms", format!("{:.3}", self.p90_latency_ms));
        push("p90_hops", format!("{:.3}", self.p90_hops));
        push("tps_observed", format!("{:.3}", self.tps_observed));
        push("txs_committed", self.txs_committed.to_string());
        push("mean_txs_per_block", format!("{:.3}", self.mean_txs_per_block));
        push("mean_processing_ms", format!("{:.4}", self.mean_processing_ms));
        push(
            "mean_header_processing_ms",
            format!("{:.4}", self.mean_header_processing_ms),
        );
        if let Some(g) = self.gamma {
            push("gamma", format!("{:.6}", g));
        }
        if let Some(a) = self.alpha {
            push("alpha", format!("{:.6}", a));
        }
        if let Some(b) = self.beta {
            push("beta", format!("{:.6}", b));
        }
        if let Some(s) = self.sync_fraction {
            push("sync_fraction", format!("{:.6}", s));
        }
        push("stale_txs", self.stale_txs.to_string());
        push("block_prop_bytes", self.block_prop_bytes.to_string());
        push("tx_gossip_bytes", self.tx_gossip_bytes.to_string());
        push("ppb_sync_bytes", self.ppb_sync_bytes.to_string());
        push("duration_s", format!("{:.3}", self.duration_s));
        push(
            "mean_link_latency_ms",
            format!("{:.3}", self.mean_link_latency_ms),
        );
        out
    }
}
