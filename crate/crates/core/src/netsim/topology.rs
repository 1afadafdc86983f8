//! Random peer-to-peer topology: preferential attachment with optional edge
//! rewiring, nodes partitioned into four geographic groups with link
//! latencies drawn from group-pair dependent ranges.

use std::collections::{BTreeSet, HashMap, VecDeque};

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::protocols::NodeId;

pub const N_REGIONS: usize = 4;
pub const REGION_NAMES: [&str; N_REGIONS] = ["asia", "oceania", "north_america", "europe"];

/// One-way latency range (ms) between two regions.
pub fn latency_range(a: usize, b: usize) -> (f64, f64) {
    let (lo, hi) = (a.min(b), a.max(b));
    match (lo, hi) {
        _ if lo == hi => (10.0, 40.0),
        // long-haul pairs
        (0, 2) | (1, 3) => (60.0, 90.0),
        (0, 3) => (90.0, 110.0),
        // neighboring pairs
        _ => (40.0, 60.0),
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Link {
    pub latency_ms: f64,
    /// Per-message loss probability in [0, 0.01); a lost message costs one
    /// extra retransmission penalty, never a second one.
    pub loss: f64,
}

#[derive(Clone, Debug)]
pub struct Topology {
    pub n: usize,
    pub adj: Vec<Vec<NodeId>>,
    pub regions: Vec<usize>,
    links: HashMap<(NodeId, NodeId), Link>,
}

fn key(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    (a.min(b), a.max(b))
}

impl Topology {
    /// Preferential-attachment graph: a clique over the first `m + 1` nodes,
    /// then each new node links to `m` distinct existing nodes with
    /// probability proportional to degree; afterwards each edge endpoint is
    /// rewired to a random node with probability `rewire_p` (connectivity is
    /// repaired if rewiring splits the graph).
    pub fn generate(n: usize, m: usize, rewire_p: f64, rng: &mut ChaCha12Rng) -> Topology {
        assert!(n >= 2, "need at least two nodes");
        let m = m.max(1).min(n - 1);
        // Ordered set: edge iteration must not depend on process-random
        // hashing, or identical seeds would yield different graphs.
        let mut edges: BTreeSet<(NodeId, NodeId)> = BTreeSet::new();
        let m0 = (m + 1).min(n);
        for a in 0..m0 {
            for b in (a + 1)..m0 {
                edges.insert(key(a, b));
            }
        }
        // Degree-proportional sampling via the repeated-endpoints trick.
        let mut endpoints: Vec<NodeId> = Vec::new();
        for &(a, b) in &edges {
            endpoints.push(a);
            endpoints.push(b);
        }
        for v in m0..n {
            let mut targets: BTreeSet<NodeId> = BTreeSet::new();
            while targets.len() < m {
                let t = if endpoints.is_empty() || rng.gen_bool(0.1) {
                    rng.gen_range(0..v)
                } else {
                    endpoints[rng.gen_range(0..endpoints.len())]
                };
                if t != v {
                    targets.insert(t);
                }
            }
            for t in targets {
                if edges.insert(key(v, t)) {
                    endpoints.push(v);
                    endpoints.push(t);
                }
            }
        }
        // Rewiring pass.
        if rewire_p > 0.0 {
            let snapshot: Vec<(NodeId, NodeId)> = edges.iter().copied().collect();
            for (a, b) in snapshot {
                if !rng.gen_bool(rewire_p) {
                    continue;
                }
                let c = rng.gen_range(0..n);
                if c == a || c == b || edges.contains(&key(a, c)) {
                    continue;
                }
                edges.remove(&key(a, b));
                edges.insert(key(a, c));
            }
        }
        let mut adj: Vec<Vec<NodeId>> = vec![Vec::new(); n];
        for &(a, b) in &edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        // Connectivity repair: attach every stray component to component 0.
        loop {
            let mut seen = vec![false; n];
            let mut q = VecDeque::from([0usize]);
            seen[0] = true;
            while let Some(v) = q.pop_front() {
                for &w in &adj[v] {
                    if !seen[w] {
                        seen[w] = true;
                        q.push_back(w);
                    }
                }
            }
            match (0..n).find(|v| !seen[*v]) {
                None => break,
                Some(v) => {
                    let mut t = rng.gen_range(0..n);
                    while !seen[t] {
                        t = rng.gen_range(0..n);
                    }
                    edges.insert(key(v, t));
                    adj[v].push(t);
                    adj[t].push(v);
                }
            }
        }
        for l in adj.iter_mut() {
            l.sort_unstable();
        }
        // Contiguous region blocks approximate geographic clustering.
        let regions: Vec<usize> = (0..n).map(|i| i * N_REGIONS / n).collect();
        let mut links = HashMap::new();
        let mut sorted_edges: Vec<(NodeId, NodeId)> = edges.into_iter().collect();
        sorted_edges.sort_unstable();
        for (a, b) in sorted_edges {
            let (lo, hi) = latency_range(regions[a], regions[b]);
            links.insert(
                (a, b),
                Link {
                    latency_ms: rng.gen_range(lo..hi),
                    loss: rng.gen_range(0.0..0.01),
                },
            );
        }
        Topology {
            n,
            adj,
            regions,
            links,
        }
    }

    pub fn link(&self, a: NodeId, b: NodeId) -> &Link {
        &self.links[&key(a, b)]
    }

    pub fn n_edges(&self) -> usize {
        self.links.len()
    }

    pub fn degree(&self, v: NodeId) -> usize {
        self.adj[v].len()
    }

    pub fn mean_link_latency_ms(&self) -> f64 {
        if self.links.is_empty() {
            return 0.0;
        }
        let mut keys: Vec<(NodeId, NodeId)> = self.links.keys().copied().collect();
        keys.sort_unstable();
        keys.iter().map(|k| self.links[k].latency_ms).sum::<f64>() / keys.len() as f64
    }

    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n];
        let mut q = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = q.pop_front() {
            for &w in &self.adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    count += 1;
                    q.push_back(w);
                }
            }
        }
        count == self.n
    }
}
