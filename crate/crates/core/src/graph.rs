//! Compact directed-graph machinery backing the combinatorial dynamics:
//! CSR adjacency (forward and reverse), iterative Tarjan SCC, reachability
//! closures and per-vertex component-reachability masks.

use crate::par::{map_indexed, Exec};

/// Directed graph in CSR form with both orientations materialized.
#[derive(Debug, Clone)]
pub struct DiGraph {
    n: usize,
    fwd_off: Vec<u64>,
    fwd: Vec<u32>,
    rev_off: Vec<u64>,
    rev: Vec<u32>,
}

impl DiGraph {
    /// Builds from a per-vertex successor generator. `fill` must append the
    /// successors of `v` (any order, duplicates allowed) to the buffer.
    pub fn from_successors<F>(n: usize, exec: Exec, fill: F) -> Self
    where
        F: Fn(u32, &mut Vec<u32>) + Sync,
    {
        let mut rows: Vec<Vec<u32>> = map_indexed(exec, n, |v| {
            let mut buf = Vec::new();
            fill(v as u32, &mut buf);
            buf.sort_unstable();
            buf.dedup();
            buf
        });
        let mut fwd_off = Vec::with_capacity(n + 1);
        fwd_off.push(0u64);
        let total: u64 = rows.iter().map(|r| r.len() as u64).sum();
        let mut fwd = Vec::with_capacity(total as usize);
        for r in &mut rows {
            fwd.extend_from_slice(r);
            fwd_off.push(fwd.len() as u64);
            r.clear();
            r.shrink_to_fit();
        }
        drop(rows);
        // transpose by counting sort
        let mut deg = vec![0u64; n + 1];
        for &t in &fwd {
            deg[t as usize + 1] += 1;
        }
        for i in 0..n {
            deg[i + 1] += deg[i];
        }
        let rev_off = deg.clone();
        let mut cursor = deg;
        let mut rev = vec![0u32; fwd.len()];
        for v in 0..n {
            let (s, e) = (fwd_off[v] as usize, fwd_off[v + 1] as usize);
            for &t in &fwd[s..e] {
                rev[cursor[t as usize] as usize] = v as u32;
                cursor[t as usize] += 1;
            }
        }
        Self {
            n,
            fwd_off,
            fwd,
            rev_off,
            rev,
        }
    }

    pub fn from_edges(n: usize, edges: &[(u32, u32)]) -> Self {
        let mut rows: Vec<Vec<u32>> = vec![Vec::new(); n];
        for &(a, b) in edges {
            rows[a as usize].push(b);
        }
        Self::from_successors(n, Exec::Sequential, |v, buf| {
            buf.extend_from_slice(&rows[v as usize])
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.fwd.len()
    }

    #[inline]
    pub fn succ(&self, v: u32) -> &[u32] {
        &self.fwd[self.fwd_off[v as usize] as usize..self.fwd_off[v as usize + 1] as usize]
    }

    #[inline]
    pub fn pred(&self, v: u32) -> &[u32] {
        &self.rev[self.rev_off[v as usize] as usize..self.rev_off[v as usize + 1] as usize]
    }

    pub fn has_edge(&self, a: u32, b: u32) -> bool {
        self.succ(a).binary_search(&b).is_ok()
    }

    /// Vertices reachable from the seed set along edges (paths of length >= 0).
    pub fn forward_closure(&self, seed: &[bool]) -> Vec<bool> {
        self.closure(seed, true)
    }

    /// Vertices from which the seed set is reachable (paths of length >= 0).
    pub fn backward_closure(&self, seed: &[bool]) -> Vec<bool> {
        self.closure(seed, false)
    }

    fn closure(&self, seed: &[bool], forward: bool) -> Vec<bool> {
        debug_assert_eq!(seed.len(), self.n);
        let mut mark = seed.to_vec();
        let mut frontier: Vec<u32> = (0..self.n as u32).filter(|&v| seed[v as usize]).collect();
        while let Some(v) = frontier.pop() {
            let nexts = if forward { self.succ(v) } else { self.pred(v) };
            for &w in nexts {
                if !mark[w as usize] {
                    mark[w as usize] = true;
                    frontier.push(w);
                }
            }
        }
        mark
    }

    /// True if a directed path of length >= 1 exists from `a` to `b`.
    pub fn reaches(&self, a: u32, b: u32) -> bool {
        let mut seed = vec![false; self.n];
        for &w in self.succ(a) {
            seed[w as usize] = true;
        }
        self.forward_closure(&seed)[b as usize]
    }
}

/// Strongly connected components, Tarjan with an explicit stack so graphs
/// with millions of boxes do not overflow the call stack.
#[derive(Debug, Clone)]
pub struct Scc {
    /// Component id per vertex; ids are in reverse topological order of the
    /// condensation (every edge goes from a higher id to a lower or equal id).
    pub comp_of: Vec<u32>,
    pub comp_count: usize,
}

pub fn tarjan_scc(g: &DiGraph) -> Scc {
    const NONE: u32 = u32::MAX;
    let n = g.vertex_count();
    let mut index = vec![NONE; n];
    let mut low = vec![0u32; n];
    let mut on_stack = vec![false; n];
    let mut comp_of = vec![NONE; n];
    let mut stack: Vec<u32> = Vec::new();
    let mut next_index = 0u32;
    let mut comp_count = 0u32;
    // frames: (vertex, next child offset)
    let mut frames: Vec<(u32, u64)> = Vec::new();

    for root in 0..n as u32 {
        if index[root as usize] != NONE {
            continue;
        }
        frames.push((root, g.fwd_off[root as usize]));
        index[root as usize] = next_index;
        low[root as usize] = next_index;
        next_index += 1;
        stack.push(root);
        on_stack[root as usize] = true;

        while let Some(&mut (v, ref mut child)) = frames.last_mut() {
            if *child < g.fwd_off[v as usize + 1] {
                let w = g.fwd[*child as usize];
                *child += 1;
                if index[w as usize] == NONE {
                    index[w as usize] = next_index;
                    low[w as usize] = next_index;
                    next_index += 1;
                    stack.push(w);
                    on_stack[w as usize] = true;
                    frames.push((w, g.fwd_off[w as usize]));
                } else if on_stack[w as usize] {
                    low[v as usize] = low[v as usize].min(index[w as usize]);
                }
            } else {
                frames.pop();
                if let Some(&mut (p, _)) = frames.last_mut() {
                    low[p as usize] = low[p as usize].min(low[v as usize]);
                }
                if low[v as usize] == index[v as usize] {
                    loop {
                        let w = stack.pop().expect("tarjan stack underflow");
                        on_stack[w as usize] = false;
                        comp_of[w as usize] = comp_count;
                        if w == v {
                            break;
                        }
                    }
                    comp_count += 1;
                }
            }
        }
    }
    Scc {
        comp_of,
        comp_count: comp_count as usize,
    }
}

impl Scc {
    /// Members of every component.
    pub fn members(&self) -> Vec<Vec<u32>> {
        let mut out = vec![Vec::new(); self.comp_count];
        for (v, &c) in self.comp_of.iter().enumerate() {
            out[c as usize].push(v as u32);
        }
        out
    }
}

/// Chain-recurrent vertices: members of nontrivial SCCs plus self-loop
/// vertices (cycles of length >= 1).
pub fn recurrent_vertices(g: &DiGraph, scc: &Scc) -> Vec<bool> {
    let mut comp_size = vec![0u32; scc.comp_count];
    for &c in &scc.comp_of {
        comp_size[c as usize] += 1;
    }
    (0..g.vertex_count() as u32)
        .map(|v| comp_size[scc.comp_of[v as usize] as usize] > 1 || g.has_edge(v, v))
        .collect()
}

/// Fixed-width bitmask over the recurrent components.
pub type CompMask = Vec<u64>;

pub fn mask_set(mask: &mut CompMask, bit: usize) {
    mask[bit / 64] |= 1 << (bit % 64);
}

pub fn mask_get(mask: &CompMask, bit: usize) -> bool {
    mask[bit / 64] >> (bit % 64) & 1 == 1
}

pub fn mask_or(into: &mut CompMask, from: &CompMask) {
    for (a, b) in into.iter_mut().zip(from) {
        *a |= b;
    }
}

pub fn mask_is_subset(a: &CompMask, b: &CompMask) -> bool {
    a.iter().zip(b).all(|(x, y)| x & !y == 0)
}

/// Reachability analysis over the recurrent components.
///
/// `rec_comp_index` numbers the recurrent components; `vertex_mask[v]` has
/// bit `k` set iff recurrent component `k` is reachable from `v` (paths of
/// length >= 0, so a recurrent vertex sees its own component). These masks
/// are exactly the principal downsets of the component order.
pub struct CompReach {
    pub rec_comp_index: Vec<Option<u32>>,
    pub rec_comp_count: usize,
    pub words: usize,
    pub vertex_mask: Vec<CompMask>,
    /// Mask per SCC (indexed by Tarjan component id).
    pub comp_mask: Vec<CompMask>,
    /// SCC id per recurrent-component bit.
    pub bit_to_comp: Vec<u32>,
}

impl CompReach {
    /// Everything reachable from the recurrent component with the given bit.
    pub fn mask_of_bit(&self, bit: usize) -> &CompMask {
        &self.comp_mask[self.bit_to_comp[bit] as usize]
    }
}

pub fn component_reachability(g: &DiGraph, scc: &Scc, recurrent: &[bool]) -> CompReach {
    // pick out the recurrent components in comp-id order
    let mut is_rec_comp = vec![false; scc.comp_count];
    for (v, &r) in recurrent.iter().enumerate() {
        if r {
            is_rec_comp[scc.comp_of[v] as usize] = true;
        }
    }
    let mut rec_comp_index = vec![None; scc.comp_count];
    let mut bit_to_comp = Vec::new();
    let mut k = 0u32;
    for (c, &rec) in is_rec_comp.iter().enumerate() {
        if rec {
            rec_comp_index[c] = Some(k);
            bit_to_comp.push(c as u32);
            k += 1;
        }
    }
    let rec_comp_count = k as usize;
    let words = rec_comp_count.div_ceil(64).max(1);

    // Tarjan comp ids are in reverse topological order: every edge target
    // has a comp id <= the source id, so a single pass over components in
    // increasing id order propagates masks from successors to predecessors.
    let mut comp_masks: Vec<CompMask> = vec![vec![0u64; words]; scc.comp_count];
    let members = scc.members();
    for c in 0..scc.comp_count {
        if let Some(kbit) = rec_comp_index[c] {
            mask_set(&mut comp_masks[c], kbit as usize);
        }
        for &v in &members[c] {
            for &w in g.succ(v) {
                let cw = scc.comp_of[w as usize] as usize;
                if cw != c {
                    debug_assert!(cw < c, "tarjan order violated");
                    let (lo, hi) = comp_masks.split_at_mut(c);
                    mask_or(&mut hi[0], &lo[cw]);
                }
            }
        }
    }
    let vertex_mask: Vec<CompMask> = scc
        .comp_of
        .iter()
        .map(|&c| comp_masks[c as usize].clone())
        .collect();
    CompReach {
        rec_comp_index,
        rec_comp_count,
        words,
        vertex_mask,
        comp_mask: comp_masks,
        bit_to_comp,
    }
}
