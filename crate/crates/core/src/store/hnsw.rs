//! Hierarchical navigable small-world graph over cosine similarity.
//!
//! Nodes are record ids. Layer 0 holds every node with up to `2 * m` links;
//! upper layers hold geometrically fewer nodes with up to `m` links. A new
//! node fills its layer 0 list to the full `2 * m` rather than `m`, which
//! costs build time but buys several points of recall on high-dimensional
//! data.
//! Neighbour lists are chosen with the diversity heuristic (a candidate is
//! kept only if it is closer to the base node than to any already kept
//! neighbour), topped up from the pruned candidates. Level draws come from a
//! ChaCha8 stream seeded by the caller, so a build is reproducible.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::dot;

const MAX_LEVEL: usize = 31;
const FORMAT_MAGIC: &[u8; 4] = b"VHNS";
const FORMAT_VERSION: u32 = 1;
const NO_ENTRY: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HnswParams {
    pub m: usize,
    pub ef_construction: usize,
}

impl Default for HnswParams {
    fn default() -> Self {
        Self {
            m: 16,
            ef_construction: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Cand {
    sim: f64,
    id: u32,
}

impl Eq for Cand {}

impl Ord for Cand {
    /// Greater means better: higher similarity, then lower id.
    fn cmp(&self, other: &Self) -> Ordering {
        self.sim
            .total_cmp(&other.sim)
            .then_with(|| other.id.cmp(&self.id))
    }
}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Generation-stamped visited set; clearing is O(1).
struct Visited {
    stamp: u32,
    marks: Vec<u32>,
}

impl Visited {
    fn new(n: usize) -> Self {
        Self {
            stamp: 0,
            marks: vec![0; n],
        }
    }

    fn reset(&mut self) {
        self.stamp = self.stamp.wrapping_add(1);
        if self.stamp == 0 {
            self.marks.fill(0);
            self.stamp = 1;
        }
    }

    /// Returns true the first time `id` is seen since the last reset.
    fn insert(&mut self, id: u32) -> bool {
        let slot = &mut self.marks[id as usize];
        if *slot == self.stamp {
            false
        } else {
            *slot = self.stamp;
            true
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HnswIndex {
    params: HnswParams,
    seed: u64,
    /// `links[node][layer]`; a node's layer count is its level + 1.
    links: Vec<Vec<Vec<u32>>>,
    entry: u32,
    max_level: usize,
}

struct Graph<'a> {
    vectors: &'a [f32],
    dim: usize,
}

impl Graph<'_> {
    fn row(&self, id: u32) -> &[f32] {
        let i = id as usize * self.dim;
        &self.vectors[i..i + self.dim]
    }

    fn sim(&self, a: u32, b: u32) -> f64 {
        dot(self.row(a), self.row(b))
    }

    fn sim_to(&self, q: &[f32], id: u32) -> f64 {
        dot(q, self.row(id))
    }
}

impl HnswIndex {
    pub fn params(&self) -> HnswParams {
        self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of indexed records.
    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    fn max_links(&self, layer: usize) -> usize {
        if layer == 0 {
            2 * self.params.m
        } else {
            self.params.m
        }
    }

    pub(crate) fn build(vectors: &[f32], dim: usize, params: HnswParams, seed: u64) -> Self {
        let params = HnswParams {
            m: params.m.max(2),
            ef_construction: params.ef_construction.max(1),
        };
        let n = vectors.len() / dim;
        let graph = Graph { vectors, dim };
        let mut index = Self {
            params,
            seed,
            links: Vec::with_capacity(n),
            entry: NO_ENTRY,
            max_level: 0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let level_mult = 1.0 / (params.m as f64).ln();
        let mut visited = Visited::new(n);

        for id in 0..n as u32 {
            let u: f64 = rng.random();
            let level = ((-(1.0 - u).ln() * level_mult).floor() as usize).min(MAX_LEVEL);
            index.insert(&graph, id, level, &mut visited);
        }
        index
    }

    fn insert(&mut self, graph: &Graph<'_>, id: u32, level: usize, visited: &mut Visited) {
        self.links.push(vec![Vec::new(); level + 1]);
        if self.entry == NO_ENTRY {
            self.entry = id;
            self.max_level = level;
            return;
        }
        let q = graph.row(id);

        let mut entry = self.entry;
        for layer in (level + 1..=self.max_level).rev() {
            entry = self.greedy_closest(graph, q, entry, layer);
        }

        let mut entries = vec![entry];
        for layer in (0..=level.min(self.max_level)).rev() {
            let found = self.search_layer(
                graph,
                q,
                &entries,
                self.params.ef_construction,
                layer,
                visited,
                |_| true,
            );
            let neighbours = select_diverse(graph, &found, self.max_links(layer));
            for &nb in &neighbours {
                self.connect(graph, nb, id, layer);
            }
            self.links[id as usize][layer] = neighbours;
            entries = found.iter().map(|c| c.id).collect();
        }

        if level > self.max_level {
            self.max_level = level;
            self.entry = id;
        }
    }

    /// Adds the edge `from -> to`, re-pruning `from`'s list when it overflows.
    fn connect(&mut self, graph: &Graph<'_>, from: u32, to: u32, layer: usize) {
        let cap = self.max_links(layer);
        let list = &mut self.links[from as usize][layer];
        list.push(to);
        if list.len() <= cap {
            return;
        }
        let mut cands: Vec<Cand> = list
            .iter()
            .map(|&x| Cand {
                sim: graph.sim(from, x),
                id: x,
            })
            .collect();
        cands.sort_unstable_by(|a, b| b.cmp(a));
        *list = select_diverse(graph, &cands, cap);
    }

    fn greedy_closest(&self, graph: &Graph<'_>, q: &[f32], start: u32, layer: usize) -> u32 {
        let mut best = Cand {
            sim: graph.sim_to(q, start),
            id: start,
        };
        loop {
            let mut improved = false;
            for &nb in &self.links[best.id as usize][layer] {
                let c = Cand {
                    sim: graph.sim_to(q, nb),
                    id: nb,
                };
                if c > best {
                    best = c;
                    improved = true;
                }
            }
            if !improved {
                return best.id;
            }
        }
    }

    /// Beam search on one layer. Every reachable node is a traversal
    /// candidate; only nodes passing `accept` enter the result set. Results
    /// come back best first.
    #[allow(clippy::too_many_arguments)]
    fn search_layer(
        &self,
        graph: &Graph<'_>,
        q: &[f32],
        entries: &[u32],
        ef: usize,
        layer: usize,
        visited: &mut Visited,
        accept: impl Fn(u32) -> bool,
    ) -> Vec<Cand> {
        visited.reset();
        let mut frontier: BinaryHeap<Cand> = BinaryHeap::new();
        let mut results: BinaryHeap<Reverse<Cand>> = BinaryHeap::new();

        for &e in entries {
            if !visited.insert(e) {
                continue;
            }
            let c = Cand {
                sim: graph.sim_to(q, e),
                id: e,
            };
            frontier.push(c);
            if accept(e) {
                results.push(Reverse(c));
                if results.len() > ef {
                    results.pop();
                }
            }
        }

        while let Some(c) = frontier.pop() {
            if results.len() >= ef && results.peek().is_some_and(|w| c < w.0) {
                break;
            }
            for &nb in &self.links[c.id as usize][layer] {
                if !visited.insert(nb) {
                    continue;
                }
                let cand = Cand {
                    sim: graph.sim_to(q, nb),
                    id: nb,
                };
                if results.len() < ef || results.peek().is_some_and(|w| cand > w.0) {
                    frontier.push(cand);
                    if accept(nb) {
                        results.push(Reverse(cand));
                        if results.len() > ef {
                            results.pop();
                        }
                    }
                }
            }
        }

        let mut out: Vec<Cand> = results.into_iter().map(|r| r.0).collect();
        out.sort_unstable_by(|a, b| b.cmp(a));
        out
    }

    /// Ids of up to `ef` accepted nodes near `q`, best first.
    pub(crate) fn search(
        &self,
        vectors: &[f32],
        q: &[f32],
        k: usize,
        ef: usize,
        accept: impl Fn(u32) -> bool,
    ) -> Vec<u32> {
        if self.is_empty() || k == 0 {
            return Vec::new();
        }
        let graph = Graph {
            vectors,
            dim: q.len(),
        };
        let mut entry = self.entry;
        for layer in (1..=self.max_level).rev() {
            entry = self.greedy_closest(&graph, q, entry, layer);
        }
        let mut visited = Visited::new(self.len());
        self.search_layer(&graph, q, &[entry], ef.max(k), 0, &mut visited, accept)
            .into_iter()
            .map(|c| c.id)
            .collect()
    }

    pub(crate) fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(FORMAT_MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(self.params.m as u32).to_le_bytes());
        out.extend_from_slice(&(self.params.ef_construction as u32).to_le_bytes());
        out.extend_from_slice(&(self.links.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.entry.to_le_bytes());
        out.extend_from_slice(&(self.max_level as u32).to_le_bytes());
        for node in &self.links {
            out.push((node.len() - 1) as u8);
            for layer in node {
                out.extend_from_slice(&(layer.len() as u32).to_le_bytes());
                for &nb in layer {
                    out.extend_from_slice(&nb.to_le_bytes());
                }
            }
        }
        out
    }

    /// Parses the on-disk form. Errors carry the byte offset of the problem.
    pub(crate) fn from_bytes(bytes: &[u8]) -> Result<Self, IndexDecodeError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != FORMAT_MAGIC {
            return Err(r.fail_at(0, "bad magic"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(IndexDecodeError::Version(version as u64));
        }
        let seed = r.u64()?;
        let m = r.u32()? as usize;
        let ef_construction = r.u32()? as usize;
        let n = r.u64()?;
        let entry = r.u32()?;
        let max_level = r.u32()? as usize;
        if n > u32::MAX as u64 || (n > 0 && entry as u64 >= n) || max_level > MAX_LEVEL {
            return Err(r.fail_at(20, "inconsistent header"));
        }

        let mut links = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let level = r.take(1)?[0] as usize;
            if level > max_level {
                return Err(r.fail("node level above index maximum"));
            }
            let mut node = Vec::with_capacity(level + 1);
            for _ in 0..=level {
                let count = r.u32()? as usize;
                let mut layer = Vec::with_capacity(count.min(1024));
                for _ in 0..count {
                    let nb = r.u32()?;
                    if nb as u64 >= n {
                        return Err(r.fail("neighbour id out of range"));
                    }
                    layer.push(nb);
                }
                node.push(layer);
            }
            links.push(node);
        }
        if r.pos != bytes.len() {
            return Err(r.fail("trailing bytes"));
        }
        Ok(Self {
            params: HnswParams { m, ef_construction },
            seed,
            links,
            entry: if n == 0 { NO_ENTRY } else { entry },
            max_level,
        })
    }
}

/// Picks up to `m` neighbours from `cands` (sorted best first).
fn select_diverse(graph: &Graph<'_>, cands: &[Cand], m: usize) -> Vec<u32> {
    let mut kept: Vec<u32> = Vec::with_capacity(m);
    let mut pruned: Vec<u32> = Vec::new();
    for c in cands {
        if kept.len() >= m {
            break;
        }
        if kept.iter().all(|&k| graph.sim(c.id, k) < c.sim) {
            kept.push(c.id);
        } else {
            pruned.push(c.id);
        }
    }
    for p in pruned {
        if kept.len() >= m {
            break;
        }
        kept.push(p);
    }
    kept
}

#[derive(Debug)]
pub(crate) enum IndexDecodeError {
    At { offset: u64, reason: String },
    Version(u64),
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IndexDecodeError> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(self.fail_at(self.bytes.len() as u64, "truncated"));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, IndexDecodeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, IndexDecodeError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn fail(&self, reason: &str) -> IndexDecodeError {
        self.fail_at(self.pos as u64, reason)
    }

    fn fail_at(&self, offset: u64, reason: &str) -> IndexDecodeError {
        IndexDecodeError::At {
            offset,
            reason: reason.to_owned(),
        }
    }
}
