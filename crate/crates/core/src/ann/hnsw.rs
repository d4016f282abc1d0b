//! Hierarchical navigable small-world graph over L2 distance.
//!
//! Items with bit-identical vectors share one graph node; the node keeps
//! every item id in insertion order. Decoded patch vectors take at most K
//! distinct values, and without this sharing each layer-0 neighbourhood
//! would fill up with zero-distance copies and split into islands.
//!
//! Insertion is serial and all ties break by node id, so a graph is a pure
//! function of its inputs and `seed`.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Posting;
use crate::error::{Error, Result};
use crate::linalg;

const MAX_LEVEL: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HnswParams {
    /// Links per node on upper layers; layer 0 allows twice as many.
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    pub seed: u64,
}

impl Default for HnswParams {
    fn default() -> Self {
        Self {
            m: 16,
            ef_construction: 200,
            ef_search: 64,
            seed: 0x5eed,
        }
    }
}

impl HnswParams {
    pub fn validate(&self) -> Result<()> {
        if self.m < 2 || self.ef_construction == 0 || self.ef_search == 0 {
            return Err(Error::InvalidConfig(
                "hnsw needs m >= 2 and positive ef values".into(),
            ));
        }
        Ok(())
    }

    fn max_links(&self, layer: usize) -> usize {
        if layer == 0 {
            2 * self.m
        } else {
            self.m
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist: f32,
    node: u32,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.node.cmp(&other.node))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Visited {
    marks: Vec<u32>,
    epoch: u32,
}

impl Visited {
    fn new(n: usize) -> Self {
        Self {
            marks: vec![0; n],
            epoch: 0,
        }
    }

    fn reset(&mut self, n: usize) {
        if self.marks.len() < n {
            self.marks.resize(n, 0);
        }
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.marks.fill(0);
            self.epoch = 1;
        }
    }

    /// Returns true if `node` was not yet visited.
    fn insert(&mut self, node: u32) -> bool {
        let m = &mut self.marks[node as usize];
        if *m == self.epoch {
            false
        } else {
            *m = self.epoch;
            true
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HnswGraph {
    pub(crate) params: HnswParams,
    pub(crate) dim: usize,
    /// One row per node.
    pub(crate) vectors: Vec<f32>,
    /// Item ids (insertion indices) per node, ascending.
    pub(crate) node_items: Vec<Vec<u32>>,
    /// Payload per item.
    pub(crate) payloads: Vec<Posting>,
    /// `links[node][layer]`; a node on layer L has lists for 0..=L.
    pub(crate) links: Vec<Vec<Vec<u32>>>,
    pub(crate) entry: u32,
}

impl HnswGraph {
    /// Builds a graph over row-major `vectors` with one payload per row.
    pub fn build(
        vectors: &[f32],
        dim: usize,
        payloads: Vec<Posting>,
        params: HnswParams,
    ) -> Result<Self> {
        params.validate()?;
        if dim == 0 || vectors.len() != payloads.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: payloads.len() * dim,
                found: vectors.len(),
            });
        }
        if payloads.is_empty() {
            return Err(Error::EmptyIndex);
        }
        if let Some(pos) = vectors.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue {
                row: pos / dim,
                column: pos % dim,
            });
        }
        let mut g = HnswGraph {
            params,
            dim,
            vectors: Vec::new(),
            node_items: Vec::new(),
            payloads,
            links: Vec::new(),
            entry: 0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let level_mult = 1.0 / (params.m as f64).ln();
        let mut by_bits: HashMap<Vec<u32>, u32> = HashMap::new();
        let mut visited = Visited::new(0);
        for (item, v) in vectors.chunks_exact(dim).enumerate() {
            let key: Vec<u32> = v.iter().map(|x| x.to_bits()).collect();
            if let Some(&node) = by_bits.get(&key) {
                g.node_items[node as usize].push(item as u32);
                continue;
            }
            let node = g.node_items.len() as u32;
            by_bits.insert(key, node);
            let u: f64 = 1.0 - rng.random::<f64>();
            let level = ((-u.ln() * level_mult).floor() as usize).min(MAX_LEVEL);
            g.vectors.extend_from_slice(v);
            g.node_items.push(vec![item as u32]);
            g.links.push(vec![Vec::new(); level + 1]);
            g.insert(node, &mut visited);
        }
        g.connect_stragglers(&mut visited);
        Ok(g)
    }

    pub fn params(&self) -> &HnswParams {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_nodes(&self) -> usize {
        self.node_items.len()
    }

    pub fn num_items(&self) -> usize {
        self.payloads.len()
    }

    pub fn payload(&self, item: usize) -> Posting {
        self.payloads[item]
    }

    pub fn node_vector(&self, node: usize) -> &[f32] {
        &self.vectors[node * self.dim..(node + 1) * self.dim]
    }

    pub fn node_items(&self, node: usize) -> &[u32] {
        &self.node_items[node]
    }

    pub fn level(&self, node: usize) -> usize {
        self.links[node].len() - 1
    }

    pub fn neighbors(&self, node: usize, layer: usize) -> &[u32] {
        &self.links[node][layer]
    }

    pub fn entry_point(&self) -> usize {
        self.entry as usize
    }

    fn top_level(&self) -> usize {
        self.level(self.entry as usize)
    }

    fn dist(&self, q: &[f32], node: u32) -> f32 {
        linalg::l2_sq(q, self.node_vector(node as usize))
    }

    fn insert(&mut self, node: u32, visited: &mut Visited) {
        if node == 0 {
            self.entry = 0;
            return;
        }
        let q = self.node_vector(node as usize).to_vec();
        let level = self.level(node as usize);
        let top = self.top_level();
        let mut ep = Candidate {
            dist: self.dist(&q, self.entry),
            node: self.entry,
        };
        for layer in (level + 1..=top).rev() {
            ep = self.greedy(&q, ep, layer);
        }
        let mut entry_points = vec![ep];
        for layer in (0..=level.min(top)).rev() {
            let found = self.search_layer(
                &q,
                &entry_points,
                self.params.ef_construction,
                layer,
                visited,
            );
            let chosen = self.select_neighbors(&found, self.params.m);
            self.links[node as usize][layer] = chosen.iter().map(|c| c.node).collect();
            for c in &chosen {
                self.link(c.node, node, layer);
            }
            entry_points = found;
        }
        if level > top {
            self.entry = node;
        }
    }

    /// Adds `to` to `from`'s list on `layer`, shrinking it if over budget.
    fn link(&mut self, from: u32, to: u32, layer: usize) {
        let cap = self.params.max_links(layer);
        self.links[from as usize][layer].push(to);
        if self.links[from as usize][layer].len() <= cap {
            return;
        }
        let base = self.node_vector(from as usize).to_vec();
        let mut cands: Vec<Candidate> = self.links[from as usize][layer]
            .iter()
            .map(|&n| Candidate {
                dist: self.dist(&base, n),
                node: n,
            })
            .collect();
        cands.sort();
        let kept = self.select_neighbors(&cands, cap);
        self.links[from as usize][layer] = kept.iter().map(|c| c.node).collect();
    }

    /// Diversity heuristic: walk candidates nearest-first and drop any that
    /// is strictly closer to an already kept neighbour than to the base.
    /// `sorted` must be ascending.
    fn select_neighbors(&self, sorted: &[Candidate], limit: usize) -> Vec<Candidate> {
        let mut kept: Vec<Candidate> = Vec::with_capacity(limit);
        for c in sorted {
            if kept.len() == limit {
                break;
            }
            let v = self.node_vector(c.node as usize);
            let dominated = kept.iter().any(|k| self.dist(v, k.node) < c.dist);
            if !dominated {
                kept.push(*c);
            }
        }
        kept
    }

    fn greedy(&self, q: &[f32], mut best: Candidate, layer: usize) -> Candidate {
        loop {
            let mut improved = false;
            for &n in &self.links[best.node as usize][layer] {
                let c = Candidate {
                    dist: self.dist(q, n),
                    node: n,
                };
                if c < best {
                    best = c;
                    improved = true;
                }
            }
            if !improved {
                return best;
            }
        }
    }

    /// Beam search on one layer; returns up to `ef` nodes ascending.
    fn search_layer(
        &self,
        q: &[f32],
        entry_points: &[Candidate],
        ef: usize,
        layer: usize,
        visited: &mut Visited,
    ) -> Vec<Candidate> {
        visited.reset(self.num_nodes());
        let mut frontier: BinaryHeap<std::cmp::Reverse<Candidate>> = BinaryHeap::new();
        let mut results: BinaryHeap<Candidate> = BinaryHeap::new();
        for ep in entry_points {
            if visited.insert(ep.node) {
                frontier.push(std::cmp::Reverse(*ep));
                results.push(*ep);
            }
        }
        while results.len() > ef {
            results.pop();
        }
        while let Some(std::cmp::Reverse(cur)) = frontier.pop() {
            if let Some(worst) = results.peek() {
                if results.len() >= ef && cur > *worst {
                    break;
                }
            }
            for &n in &self.links[cur.node as usize][layer] {
                if !visited.insert(n) {
                    continue;
                }
                let c = Candidate {
                    dist: self.dist(q, n),
                    node: n,
                };
                let admit = results.len() < ef || c < *results.peek().expect("non-empty");
                if admit {
                    frontier.push(std::cmp::Reverse(c));
                    results.push(c);
                    if results.len() > ef {
                        results.pop();
                    }
                }
            }
        }
        results.into_sorted_vec()
    }

    /// Links every layer-0 node not reachable from the entry point to its
    /// nearest reachable node, so the whole graph is searchable.
    fn connect_stragglers(&mut self, visited: &mut Visited) {
        loop {
            let reach = self.reachable_from_entry();
            let Some(orphan) = reach.iter().position(|r| !r) else {
                return;
            };
            let q = self.node_vector(orphan).to_vec();
            let start = Candidate {
                dist: self.dist(&q, self.entry),
                node: self.entry,
            };
            let found = self.search_layer(&q, &[start], self.params.ef_construction, 0, visited);
            let anchor = found
                .iter()
                .find(|c| reach[c.node as usize])
                .expect("search only visits reachable nodes");
            self.links[anchor.node as usize][0].push(orphan as u32);
        }
    }

    /// Layer-0 reachability from the entry point.
    pub fn reachable_from_entry(&self) -> Vec<bool> {
        let mut seen = vec![false; self.num_nodes()];
        let mut stack = vec![self.entry];
        seen[self.entry as usize] = true;
        while let Some(n) = stack.pop() {
            for &m in &self.links[n as usize][0] {
                if !seen[m as usize] {
                    seen[m as usize] = true;
                    stack.push(m);
                }
            }
        }
        seen
    }

    /// Up to `top_n` nearest nodes as `(node, squared distance)`, ascending.
    pub fn search_nodes(&self, query: &[f32], top_n: usize, ef_search: usize) -> Result<Vec<(usize, f32)>> {
        if query.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: query.len(),
            });
        }
        let mut visited = Visited::new(self.num_nodes());
        let mut ep = Candidate {
            dist: self.dist(query, self.entry),
            node: self.entry,
        };
        for layer in (1..=self.top_level()).rev() {
            ep = self.greedy(query, ep, layer);
        }
        let found = self.search_layer(query, &[ep], ef_search.max(top_n), 0, &mut visited);
        Ok(found
            .into_iter()
            .take(top_n)
            .map(|c| (c.node as usize, c.dist))
            .collect())
    }

    /// Up to `top_n` nearest items as `(item id, L2 distance)`, ascending by
    /// distance; items sharing a vector come out in insertion order.
    pub fn search(&self, query: &[f32], top_n: usize, ef_search: usize) -> Result<Vec<(usize, f32)>> {
        let nodes = self.search_nodes(query, top_n, ef_search)?;
        let mut out = Vec::with_capacity(top_n);
        'outer: for (node, d) in nodes {
            for &item in &self.node_items[node] {
                if out.len() == top_n {
                    break 'outer;
                }
                out.push((item as usize, d.sqrt()));
            }
        }
        Ok(out)
    }

    pub(crate) fn from_parts(
        params: HnswParams,
        dim: usize,
        vectors: Vec<f32>,
        node_items: Vec<Vec<u32>>,
        payloads: Vec<Posting>,
        links: Vec<Vec<Vec<u32>>>,
        entry: u32,
    ) -> Result<Self> {
        let n = node_items.len();
        let bad = |m: &str| Error::Format(format!("hnsw graph: {m}"));
        if n == 0 || vectors.len() != n * dim || links.len() != n || entry as usize >= n {
            return Err(bad("inconsistent node counts"));
        }
        let mut seen = vec![false; payloads.len()];
        for items in &node_items {
            for &i in items {
                let slot = seen.get_mut(i as usize).ok_or_else(|| bad("item out of range"))?;
                if std::mem::replace(slot, true) {
                    return Err(bad("item listed twice"));
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(bad("item not attached to a node"));
        }
        for l in &links {
            if l.is_empty() || l.iter().flatten().any(|&m| m as usize >= n) {
                return Err(bad("bad adjacency"));
            }
        }
        Ok(Self {
            params,
            dim,
            vectors,
            node_items,
            payloads,
            links,
            entry,
        })
    }
}
