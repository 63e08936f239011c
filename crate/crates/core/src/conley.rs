//! The random Conley decomposition on the combinatorial chain graphs:
//! chain recurrent set, chain transitive components with their order, the
//! attractor-repeller lattice with basins, duality checks, and the
//! pullback-simulation limit-set operations.
//!
//! Combinatorial conventions (per graph, every vertex has outdegree >= 1):
//! writing `F` / `B` for forward / backward reachability closure and `Rec`
//! for the cycle vertices,
//!
//! * pre-attractor (hull) of a seed `S`:  `H = F(S)` (edge-closed),
//! * attractor:                            `A = F(Rec n H)`,
//! * repeller:                             `R = B(Rec n B(V - H))`,
//! * basin of attraction:                  `basin = V - R`.
//!
//! With the record family containing the principal component-downsets these
//! definitions make `Rec = intersection of (A u R)` and
//! `V - Rec = union of (basin - A)` exact set identities, checked with zero
//! tolerance; the repeller-side basin is `V - A` by the same construction
//! on the reversed graph.

use crate::boxmap::{box_template, AggregatedMap};
use crate::cocycle::{Flow, SystemDef};
use crate::error::{Error, Result};
use crate::graph::{
    component_reachability, mask_get, mask_is_subset, mask_set, recurrent_vertices, tarjan_scc,
    CompMask, CompReach, DiGraph, Scc,
};
use crate::grid::{BoxGrid, BoxIdx, BoxSet, RandomBoxSet};
use crate::noise::{time_to_steps, SampleEnsemble};
use crate::par::Exec;
use crate::util::derive_seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::io::Write;
use std::sync::Arc;

/// One chain transitive component (a recurrent SCC of interior boxes).
#[derive(Debug, Clone)]
pub struct Component {
    pub id: usize,
    pub boxes: Vec<BoxIdx>,
    /// Bit index of this component in the graph-level recurrence masks.
    pub mask_bit: usize,
}

/// Condensation of the aggregated chain graph.
pub struct MorseDecomposition {
    pub grid: Arc<BoxGrid>,
    pub scc: Scc,
    /// Interior chain-recurrent boxes. The EXTERIOR box, when enabled, is
    /// recurrent in the graph (it self-loops by convention) but models the
    /// window complement, not state recurrence, so it is excluded here and
    /// from `components`.
    pub recurrent: BoxSet,
    /// Graph-level recurrence per vertex, including EXTERIOR.
    pub graph_recurrent: Vec<bool>,
    /// Interior chain transitive components, ordered by smallest box index.
    pub components: Vec<Component>,
    /// Mask bit of the EXTERIOR component, when the grid has one.
    pub exterior_bit: Option<usize>,
    /// Reachability order among interior components:
    /// `order[i][j]` iff component `i` reaches component `j` (i != j).
    pub order: Vec<Vec<bool>>,
    pub reach: CompReach,
}

/// Computes the chain recurrent set and the component structure of an
/// aggregated map.
pub fn chain_recurrent_set(agg: &AggregatedMap) -> MorseDecomposition {
    decompose_graph(&agg.grid, &agg.graph)
}

/// As [`chain_recurrent_set`], on an explicit graph over the grid's boxes.
pub fn decompose_graph(grid: &Arc<BoxGrid>, graph: &DiGraph) -> MorseDecomposition {
    assert_eq!(graph.vertex_count(), grid.box_count() as usize);
    let scc = tarjan_scc(graph);
    let graph_recurrent = recurrent_vertices(graph, &scc);
    let reach = component_reachability(graph, &scc, &graph_recurrent);
    let mut recurrent = BoxSet::empty(grid);
    for (v, &r) in graph_recurrent.iter().enumerate() {
        if r && !grid.is_exterior(v as BoxIdx) {
            recurrent.insert(v as BoxIdx);
        }
    }
    // group recurrent vertices by component
    let mut comp_boxes: HashMap<u32, Vec<BoxIdx>> = HashMap::new();
    let mut exterior_bit = None;
    for (v, &r) in graph_recurrent.iter().enumerate() {
        if !r {
            continue;
        }
        let c = scc.comp_of[v];
        if grid.is_exterior(v as BoxIdx) {
            exterior_bit = reach.rec_comp_index[c as usize].map(|k| k as usize);
            continue;
        }
        comp_boxes.entry(c).or_default().push(v as BoxIdx);
    }
    let mut components: Vec<Component> = comp_boxes
        .into_iter()
        .map(|(c, mut boxes)| {
            boxes.sort_unstable();
            Component {
                id: 0,
                boxes,
                mask_bit: reach.rec_comp_index[c as usize].expect("recurrent comp has a bit")
                    as usize,
            }
        })
        .collect();
    components.sort_by_key(|c| c.boxes[0]);
    for (i, c) in components.iter_mut().enumerate() {
        c.id = i;
    }
    let order: Vec<Vec<bool>> = components
        .iter()
        .map(|ci| {
            let mi = reach.mask_of_bit(ci.mask_bit);
            components
                .iter()
                .map(|cj| ci.id != cj.id && mask_get(mi, cj.mask_bit))
                .collect()
        })
        .collect();
    MorseDecomposition {
        grid: Arc::clone(grid),
        scc,
        recurrent,
        graph_recurrent,
        components,
        exterior_bit,
        order,
        reach,
    }
}

impl MorseDecomposition {
    /// Morse graph DOT export: components as nodes labeled with box counts,
    /// transitive reduction of the reachability order as edges.
    pub fn write_morse_dot<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "digraph morse {{")?;
        for c in &self.components {
            writeln!(w, "  c{} [label=\"C{} ({} boxes)\"];", c.id, c.id, c.boxes.len())?;
        }
        let n = self.components.len();
        for i in 0..n {
            for j in 0..n {
                if i == j || !self.order[i][j] {
                    continue;
                }
                let through =
                    (0..n).any(|k| k != i && k != j && self.order[i][k] && self.order[k][j]);
                if !through {
                    writeln!(w, "  c{i} -> c{j};")?;
                }
            }
        }
        writeln!(w, "}}")?;
        Ok(())
    }
}

/// One attractor-repeller record over the ensemble.
#[derive(Debug, Clone)]
pub struct AttractorRecord {
    pub id: usize,
    pub seed_desc: String,
    /// Forward-invariant pre-attractor (hull of the seed).
    pub pre_attractor: RandomBoxSet,
    pub attractor: RandomBoxSet,
    pub repeller: RandomBoxSet,
    pub basin: RandomBoxSet,
    pub forward_invariant: bool,
    /// Simulation diagnostic: the pullback omega-limit of the hull landed
    /// inside the hull's grid interior. `None` when the check was not run.
    pub omega_inside_interior: Option<bool>,
}

/// Attractor/repeller/basin sets from a seed on one graph.
/// Returns (hull, attractor, repeller, basin) as vertex marks.
pub fn record_sets_on_graph(
    graph: &DiGraph,
    recurrent: &[bool],
    seed: &[bool],
) -> (Vec<bool>, Vec<bool>, Vec<bool>, Vec<bool>) {
    let n = graph.vertex_count();
    let hull = graph.forward_closure(seed);
    let rec_in_h: Vec<bool> = (0..n).map(|v| recurrent[v] && hull[v]).collect();
    let attractor = graph.forward_closure(&rec_in_h);
    let compl: Vec<bool> = hull.iter().map(|&h| !h).collect();
    let b_compl = graph.backward_closure(&compl);
    let rec_escaping: Vec<bool> = (0..n).map(|v| recurrent[v] && b_compl[v]).collect();
    let repeller = graph.backward_closure(&rec_escaping);
    let basin: Vec<bool> = repeller.iter().map(|&r| !r).collect();
    (hull, attractor, repeller, basin)
}

/// The smallest box set containing `u` and closed under the aggregated
/// edges (forward-invariant hull). Idempotent.
pub fn forward_invariant_hull(u: &BoxSet, agg: &AggregatedMap) -> BoxSet {
    let n = agg.graph.vertex_count();
    let closed = agg.graph.forward_closure(&set_to_marks(n, u));
    marks_to_set(&agg.grid, &closed)
}

fn marks_to_set(grid: &BoxGrid, marks: &[bool]) -> BoxSet {
    let mut s = BoxSet::empty(grid);
    for (v, &m) in marks.iter().enumerate() {
        if m {
            s.insert(v as BoxIdx);
        }
    }
    s
}

fn set_to_marks(n: usize, s: &BoxSet) -> Vec<bool> {
    let mut marks = vec![false; n];
    for b in s.iter() {
        marks[b as usize] = true;
    }
    marks
}

/// Options for attractor enumeration.
#[derive(Debug, Clone)]
pub struct AttractorOptions {
    /// Number of point-seeded neighborhoods added to the downset family.
    pub point_seeds: usize,
    /// Seed for the deterministic point sampler.
    pub master_seed: u64,
    /// Cap on the number of deduplicated records kept.
    pub max_records: usize,
    /// Enumerate every component-downset when there are at most this many;
    /// the principal downsets, which suffice for the exact identities, are
    /// always included.
    pub max_full_downsets: usize,
}

impl Default for AttractorOptions {
    fn default() -> Self {
        Self {
            point_seeds: 64,
            master_seed: 0,
            max_records: 40,
            max_full_downsets: 4096,
        }
    }
}

/// Enumerates attractor-repeller records from the default seed family:
/// component downsets of the condensation order (all of them when the
/// lattice is small, always at least the principal downsets) plus inflated
/// neighborhoods of sampled points and any caller-provided seeds. Records
/// with identical attractors are deduplicated, then ordered by (attractor
/// box count ascending, smallest attractor box index).
///
/// With `per_sample_graphs`, each record also carries per-sample
/// realizations computed from the same seed on each sample's graph.
pub fn enumerate_attractors(
    decomp: &MorseDecomposition,
    agg: &AggregatedMap,
    extra_seeds: &[BoxSet],
    per_sample_graphs: Option<&[DiGraph]>,
    opts: &AttractorOptions,
) -> Vec<AttractorRecord> {
    let n = agg.graph.vertex_count();
    let grid = &agg.grid;
    let words = decomp.reach.words;
    let k = decomp.reach.rec_comp_count;

    // component bit -> boxes (including the exterior component)
    let mut bit_boxes: Vec<Vec<BoxIdx>> = vec![Vec::new(); k];
    for c in &decomp.components {
        bit_boxes[c.mask_bit] = c.boxes.clone();
    }
    if let (Some(bit), Some(ext)) = (decomp.exterior_bit, grid.exterior()) {
        bit_boxes[bit] = vec![ext];
    }

    // collect downset masks: principal ones first, then the full family,
    // then every downset when the lattice is small
    let mut masks: Vec<CompMask> = Vec::new();
    let mut seen_masks: HashMap<CompMask, ()> = HashMap::new();
    for v in 0..n {
        let m = decomp.reach.vertex_mask[v].clone();
        if seen_masks.insert(m.clone(), ()).is_none() {
            masks.push(m);
        }
    }
    let mut full = vec![0u64; words];
    for bit in 0..k {
        mask_set(&mut full, bit);
    }
    if seen_masks.insert(full.clone(), ()).is_none() {
        masks.push(full);
    }
    if k <= 12 && (1usize << k) <= opts.max_full_downsets {
        for m in 1u64..(1u64 << k) {
            let cand = vec![m];
            let closed = (0..k)
                .filter(|&bit| mask_get(&cand, bit))
                .all(|bit| mask_is_subset(decomp.reach.mask_of_bit(bit), &cand));
            if closed && seen_masks.insert(cand.clone(), ()).is_none() {
                masks.push(cand);
            }
        }
    }

    // seeds from masks
    let mut seeds: Vec<(String, Vec<bool>)> = Vec::new();
    for m in &masks {
        let mut marks = vec![false; n];
        for bit in 0..k {
            if mask_get(m, bit) {
                for &b in &bit_boxes[bit] {
                    marks[b as usize] = true;
                }
            }
        }
        seeds.push((format!("downset:{:x}", m[0]), marks));
    }
    // point-seeded neighborhoods mimicking U(x, eps, T)
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.master_seed, "attractor-point-seeds"));
    let radii: Vec<u32> = grid.quantize_radius(agg.eps).into_iter().map(|r| r + 1).collect();
    for _ in 0..opts.point_seeds {
        let x: Vec<f64> = grid
            .window()
            .lo
            .iter()
            .zip(&grid.window().hi)
            .map(|(&lo, &hi)| rng.random_range(lo..hi))
            .collect();
        let b = grid.locate(&x).expect("sampled point is in-window");
        let seed_set = BoxSet::from_boxes(grid, [b]).inflate_by_radii(grid, &radii);
        let desc = format!(
            "point:{}",
            x.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(",")
        );
        seeds.push((desc, set_to_marks(n, &seed_set)));
    }
    for (i, s) in extra_seeds.iter().enumerate() {
        seeds.push((format!("user:{i}"), set_to_marks(n, s)));
    }

    // build records on the aggregated graph, dedupe by attractor
    struct Raw {
        desc: String,
        seed: Vec<bool>,
        hull: BoxSet,
        attractor: BoxSet,
        repeller: BoxSet,
        basin: BoxSet,
    }
    let mut raws: Vec<Raw> = Vec::new();
    let mut seen_attractors: HashMap<Vec<u64>, ()> = HashMap::new();
    for (desc, seed) in seeds {
        let (h, a, r, basin) = record_sets_on_graph(&agg.graph, &decomp.graph_recurrent, &seed);
        let mut key = vec![0u64; n.div_ceil(64)];
        for (i, &m) in a.iter().enumerate() {
            if m {
                key[i / 64] |= 1 << (i % 64);
            }
        }
        if seen_attractors.insert(key, ()).is_some() {
            continue;
        }
        raws.push(Raw {
            desc,
            seed,
            hull: marks_to_set(grid, &h),
            attractor: marks_to_set(grid, &a),
            repeller: marks_to_set(grid, &r),
            basin: marks_to_set(grid, &basin),
        });
    }
    raws.sort_by_key(|r| (r.attractor.count(), r.attractor.iter().next().unwrap_or(u32::MAX)));
    raws.truncate(opts.max_records);

    raws.into_iter()
        .enumerate()
        .map(|(id, raw)| {
            let (pre, att, rep, bas) = match per_sample_graphs {
                None => (
                    RandomBoxSet::uniform(raw.hull),
                    RandomBoxSet::uniform(raw.attractor),
                    RandomBoxSet::uniform(raw.repeller),
                    RandomBoxSet::uniform(raw.basin),
                ),
                Some(graphs) => {
                    let mut hs = Vec::with_capacity(graphs.len());
                    let mut as_ = Vec::with_capacity(graphs.len());
                    let mut rs = Vec::with_capacity(graphs.len());
                    let mut bs = Vec::with_capacity(graphs.len());
                    for g in graphs {
                        let rec = recurrent_vertices(g, &tarjan_scc(g));
                        let (h, a, r, b) = record_sets_on_graph(g, &rec, &raw.seed);
                        hs.push(marks_to_set(grid, &h));
                        as_.push(marks_to_set(grid, &a));
                        rs.push(marks_to_set(grid, &r));
                        bs.push(marks_to_set(grid, &b));
                    }
                    (
                        RandomBoxSet::per_sample(hs).unwrap(),
                        RandomBoxSet::per_sample(as_).unwrap(),
                        RandomBoxSet::per_sample(rs).unwrap(),
                        RandomBoxSet::per_sample(bs).unwrap(),
                    )
                }
            };
            AttractorRecord {
                id,
                seed_desc: raw.desc,
                pre_attractor: pre,
                attractor: att,
                repeller: rep,
                basin: bas,
                forward_invariant: true,
                omega_inside_interior: None,
            }
        })
        .collect()
}

/// Result of the exact duality check on one graph.
#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct DualityLevel {
    pub recurrent_matches: bool,
    pub complement_matches: bool,
    /// Recurrent vertices missing from the intersection (cap 20).
    pub witnesses_intersection: Vec<BoxIdx>,
    /// Transient vertices wrongly inside the intersection.
    pub witnesses_intersection_extra: Vec<BoxIdx>,
    /// Mismatch witnesses for the union identity.
    pub witnesses_union: Vec<BoxIdx>,
}

impl DualityLevel {
    pub fn exact(&self) -> bool {
        self.recurrent_matches && self.complement_matches
    }
}

fn duality_from_parts(
    recurrent: &[bool],
    records: &[(Vec<bool>, Vec<bool>, Vec<bool>)], // (attractor, repeller, basin)
) -> DualityLevel {
    let n = recurrent.len();
    let mut inter = vec![true; n];
    let mut union = vec![false; n];
    for (a, r, basin) in records {
        for v in 0..n {
            inter[v] &= a[v] || r[v];
            union[v] |= basin[v] && !a[v];
        }
    }
    let mut level = DualityLevel {
        recurrent_matches: true,
        complement_matches: true,
        ..Default::default()
    };
    for v in 0..n {
        if inter[v] != recurrent[v] {
            level.recurrent_matches = false;
            let w = if recurrent[v] {
                &mut level.witnesses_intersection
            } else {
                &mut level.witnesses_intersection_extra
            };
            if w.len() < 20 {
                w.push(v as BoxIdx);
            }
        }
        if union[v] != !recurrent[v] {
            level.complement_matches = false;
            if level.witnesses_union.len() < 20 {
                level.witnesses_union.push(v as BoxIdx);
            }
        }
    }
    level
}

/// Checks the exact combinatorial identities on the aggregated graph with
/// the given records: `recurrent == intersection(A u R)` and
/// `complement(recurrent) == union(basin - A)`, over the graph-level
/// universe (EXTERIOR included when enabled).
pub fn check_duality(
    decomp: &MorseDecomposition,
    agg: &AggregatedMap,
    records: &[AttractorRecord],
) -> DualityLevel {
    let n = agg.graph.vertex_count();
    let parts: Vec<(Vec<bool>, Vec<bool>, Vec<bool>)> = records
        .iter()
        .map(|rec| match (&rec.attractor, &rec.repeller) {
            (RandomBoxSet::Uniform(a), RandomBoxSet::Uniform(r)) => {
                let a = set_to_marks(n, a);
                let r = set_to_marks(n, r);
                let basin: Vec<bool> = r.iter().map(|&x| !x).collect();
                (a, r, basin)
            }
            // per-sample records: recompute the aggregated realization from
            // the record's hull so the identity is checked on this graph
            _ => {
                let seed = set_to_marks(n, rec.pre_attractor.for_sample(0));
                let (_, a, r, basin) =
                    record_sets_on_graph(&agg.graph, &decomp.graph_recurrent, &seed);
                (a, r, basin)
            }
        })
        .collect();
    duality_from_parts(&decomp.graph_recurrent, &parts)
}

/// Self-contained duality check on an arbitrary digraph: enumerates the
/// principal downsets (plus the full family) internally and verifies both
/// identities exactly.
pub fn duality_on_graph(graph: &DiGraph) -> DualityLevel {
    let scc = tarjan_scc(graph);
    let recurrent = recurrent_vertices(graph, &scc);
    let reach = component_reachability(graph, &scc, &recurrent);
    let n = graph.vertex_count();
    let k = reach.rec_comp_count;
    let mut masks: Vec<CompMask> = Vec::new();
    let mut seen: HashMap<CompMask, ()> = HashMap::new();
    for v in 0..n {
        let m = reach.vertex_mask[v].clone();
        if seen.insert(m.clone(), ()).is_none() {
            masks.push(m);
        }
    }
    let mut full = vec![0u64; reach.words];
    for bit in 0..k {
        mask_set(&mut full, bit);
    }
    if seen.insert(full.clone(), ()).is_none() {
        masks.push(full);
    }
    let mut bit_vertices: Vec<Vec<u32>> = vec![Vec::new(); k];
    for v in 0..n {
        if recurrent[v] {
            if let Some(bit) = reach.rec_comp_index[scc.comp_of[v] as usize] {
                bit_vertices[bit as usize].push(v as u32);
            }
        }
    }
    let parts: Vec<(Vec<bool>, Vec<bool>, Vec<bool>)> = masks
        .iter()
        .map(|m| {
            let mut seed = vec![false; n];
            for bit in 0..k {
                if mask_get(m, bit) {
                    for &v in &bit_vertices[bit] {
                        seed[v as usize] = true;
                    }
                }
            }
            let (_, a, r, basin) = record_sets_on_graph(graph, &recurrent, &seed);
            (a, r, basin)
        })
        .collect();
    duality_from_parts(&recurrent, &parts)
}

/// Pullback omega-limit of a random box set: per sample, the nested
/// intersection over the thresholds in `t_grid` (ascending) of the unions
/// of box-covered pullback images `phi(t, shift(w,-t)) D` for `t` from the
/// threshold up to `pullback_depth`. The box sets are read as constant
/// along shifts of the driving sample.
#[allow(clippy::too_many_arguments)]
pub fn omega_limit(
    d: &RandomBoxSet,
    system: &SystemDef,
    ensemble: &SampleEnsemble,
    grid: &Arc<BoxGrid>,
    pullback_depth: f64,
    t_grid: &[f64],
    points_per_box: usize,
    exec: Exec,
) -> Result<RandomBoxSet> {
    limit_set(d, system, ensemble, grid, pullback_depth, t_grid, points_per_box, false, exec)
}

/// Pullback alpha-limit: time-reversed mirror of [`omega_limit`],
/// `phi(-t, shift(w,+t)) D`, via the backward integrator.
#[allow(clippy::too_many_arguments)]
pub fn alpha_limit(
    d: &RandomBoxSet,
    system: &SystemDef,
    ensemble: &SampleEnsemble,
    grid: &Arc<BoxGrid>,
    pullback_depth: f64,
    t_grid: &[f64],
    points_per_box: usize,
    exec: Exec,
) -> Result<RandomBoxSet> {
    limit_set(d, system, ensemble, grid, pullback_depth, t_grid, points_per_box, true, exec)
}

#[allow(clippy::too_many_arguments)]
fn limit_set(
    d: &RandomBoxSet,
    system: &SystemDef,
    ensemble: &SampleEnsemble,
    grid: &Arc<BoxGrid>,
    pullback_depth: f64,
    t_grid: &[f64],
    points_per_box: usize,
    backward: bool,
    exec: Exec,
) -> Result<RandomBoxSet> {
    let dt = ensemble.spec().dt;
    let depth_steps = time_to_steps(pullback_depth, dt)?;
    if t_grid.is_empty() {
        return Err(Error::InvalidArgument("t_grid must be nonempty".into()));
    }
    let mut t_steps = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let s = time_to_steps(t, dt)?;
        if s < 0 || s > depth_steps {
            return Err(Error::InvalidArgument(format!(
                "t_grid entry {t} outside [0, pullback_depth]"
            )));
        }
        t_steps.push(s);
    }
    let sets = crate::par::map_indexed(exec, ensemble.count(), |si| -> Result<BoxSet> {
        let set = d.for_sample(si);
        let sample = ensemble.sample(si);
        let mut result: Option<BoxSet> = None;
        for &t_lo in &t_steps {
            let union = pullback_image_union(
                set, system, sample, grid, t_lo, depth_steps, points_per_box, backward,
            )?;
            result = Some(match result {
                None => union,
                Some(acc) => acc.intersect(&union),
            });
        }
        Ok(result.unwrap())
    });
    let sets: Vec<BoxSet> = sets.into_iter().collect::<Result<_>>()?;
    RandomBoxSet::per_sample(sets)
}

/// Union over `t in [t_lo, t_hi]` (strided to at most 64 evaluation times,
/// endpoints always included) of the box-covered pullback image of `set`.
#[allow(clippy::too_many_arguments)]
fn pullback_image_union(
    set: &BoxSet,
    system: &SystemDef,
    sample: &crate::noise::NoiseSample,
    grid: &Arc<BoxGrid>,
    t_lo: i64,
    t_hi: i64,
    points_per_box: usize,
    backward: bool,
) -> Result<BoxSet> {
    let mut out = BoxSet::empty(grid);
    let span = (t_hi - t_lo).max(0);
    let stride = (span / 63).max(1);
    let mut template = Vec::new();
    let dim = grid.dim();
    let exterior = grid.exterior_enabled();
    let mut ts: Vec<i64> = (0..)
        .map(|k| t_lo + k * stride)
        .take_while(|&t| t < t_hi)
        .collect();
    ts.push(t_hi);
    for &t in &ts {
        let shifted = sample.shift_steps(if backward { t } else { -t })?;
        let flow = Flow::new(system, &shifted)?;
        let flow = if exterior { flow.free_space() } else { flow };
        let mut walker = flow.walker();
        let mut endpoint = vec![0.0; dim];
        for b in set.iter() {
            if grid.is_exterior(b) {
                continue;
            }
            box_template(grid, b, points_per_box, &mut template);
            for p in 0..points_per_box {
                let x0 = &template[p * dim..(p + 1) * dim];
                endpoint.copy_from_slice(x0);
                if backward {
                    walker.run_backward(x0, t, |_, x| {
                        endpoint.copy_from_slice(x);
                        true
                    })?;
                } else {
                    walker.run(x0, t, |_, x| {
                        endpoint.copy_from_slice(x);
                        true
                    })?;
                }
                if let Ok(bx) = grid.locate(&endpoint) {
                    out.insert(bx);
                }
            }
        }
    }
    Ok(out)
}

/// Absorbing-set test per sample: whether the inflated pullback forward
/// image `B_eps(U_T)` is contained in `U`.
#[allow(clippy::too_many_arguments)]
pub fn check_absorbing(
    u: &RandomBoxSet,
    system: &SystemDef,
    ensemble: &SampleEnsemble,
    grid: &Arc<BoxGrid>,
    eps: f64,
    t: f64,
    pullback_depth: f64,
    points_per_box: usize,
    exec: Exec,
) -> Result<Vec<bool>> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument("absorbing test needs eps > 0".into()));
    }
    let dt = ensemble.spec().dt;
    let t_lo = time_to_steps(t, dt)?;
    let t_hi = time_to_steps(pullback_depth, dt)?;
    if t_lo > t_hi {
        return Err(Error::InvalidArgument("need T <= pullback_depth".into()));
    }
    let results = crate::par::map_indexed(exec, ensemble.count(), |si| -> Result<bool> {
        let set = u.for_sample(si);
        let u_t = pullback_image_union(
            set,
            system,
            ensemble.sample(si),
            grid,
            t_lo,
            t_hi,
            points_per_box,
            false,
        )?;
        Ok(u_t.inflate(grid, eps).is_subset(set))
    });
    results.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boxmap::AggregationMode;
    use crate::grid::Window;

    fn grid_n(n: u32) -> Arc<BoxGrid> {
        BoxGrid::new(Window::new(vec![0.0], vec![1.0]).unwrap(), vec![n], false).unwrap()
    }

    #[test]
    fn identity_map_every_box_is_its_own_component() {
        let grid = grid_n(8);
        let edges: Vec<(u32, u32)> = (0..8).map(|v| (v, v)).collect();
        let g = DiGraph::from_edges(8, &edges);
        let decomp = decompose_graph(&grid, &g);
        assert_eq!(decomp.recurrent.count(), 8);
        assert_eq!(decomp.components.len(), 8);
        assert!(decomp.components.iter().all(|c| c.boxes.len() == 1));
        let level = duality_on_graph(&g);
        assert!(level.exact(), "{level:?}");
    }

    #[test]
    fn three_chain_condensation() {
        // 0 (loop) -> 1 -> 2 (loop); 1 transient
        let grid = grid_n(3);
        let g = DiGraph::from_edges(3, &[(0, 0), (0, 1), (1, 2), (2, 2)]);
        let decomp = decompose_graph(&grid, &g);
        assert_eq!(decomp.components.len(), 2);
        assert_eq!(decomp.recurrent.count(), 2);
        assert!(!decomp.recurrent.contains(1));
        let c0 = decomp.components.iter().position(|c| c.boxes == vec![0]).unwrap();
        let c2 = decomp.components.iter().position(|c| c.boxes == vec![2]).unwrap();
        assert!(decomp.order[c0][c2]);
        assert!(!decomp.order[c2][c0]);
        assert!(duality_on_graph(&g).exact());
    }

    #[test]
    fn hull_is_reachability_closure_and_idempotent() {
        let grid = grid_n(4);
        let g = DiGraph::from_edges(4, &[(0, 1), (1, 2), (2, 2), (3, 3)]);
        let agg = AggregatedMap {
            grid: Arc::clone(&grid),
            t: 1.0,
            eps: 0.0,
            mode: AggregationMode::AllSamples,
            n_samples: 1,
            graph: g,
        };
        let u = BoxSet::from_boxes(&grid, [0]);
        let h = forward_invariant_hull(&u, &agg);
        assert_eq!(h, BoxSet::from_boxes(&grid, [0, 1, 2]));
        assert_eq!(forward_invariant_hull(&h, &agg), h);
        let closed = BoxSet::from_boxes(&grid, [3]);
        assert_eq!(forward_invariant_hull(&closed, &agg), closed);
    }

    fn random_digraph_min_outdeg(n: usize, extra_edges: usize, seed: u64) -> DiGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut edges = Vec::new();
        for v in 0..n as u32 {
            edges.push((v, rng.random_range(0..n as u32)));
        }
        for _ in 0..extra_edges {
            edges.push((rng.random_range(0..n as u32), rng.random_range(0..n as u32)));
        }
        DiGraph::from_edges(n, &edges)
    }

    #[test]
    fn duality_identities_hold_on_random_digraphs() {
        for seed in 0..50u64 {
            let n = 20 + (seed as usize * 13) % 180;
            let g = random_digraph_min_outdeg(n, n / 2, 1000 + seed);
            let level = duality_on_graph(&g);
            assert!(level.exact(), "duality failed on seed {seed}: {level:?}");
        }
    }

    #[test]
    fn repeller_is_attractor_of_reversed_graph() {
        for seed in 0..10u64 {
            let n = 60;
            let g = random_digraph_min_outdeg(n, 40, 77 + seed);
            let scc = tarjan_scc(&g);
            let rec = recurrent_vertices(&g, &scc);
            let mut redges = Vec::new();
            for v in 0..n as u32 {
                for &w in g.succ(v) {
                    redges.push((w, v));
                }
            }
            let gr = DiGraph::from_edges(n, &redges);
            let reach = component_reachability(&g, &scc, &rec);
            let Some(v0) = (0..n).find(|&v| !rec[v]) else { continue };
            // seed with the principal downset of a transient vertex
            let mut seed_marks = vec![false; n];
            for v in 0..n {
                if rec[v] {
                    if let Some(bit) = reach.rec_comp_index[scc.comp_of[v] as usize] {
                        if mask_get(&reach.vertex_mask[v0], bit as usize) {
                            seed_marks[v] = true;
                        }
                    }
                }
            }
            let (h, a, r, _basin) = record_sets_on_graph(&g, &rec, &seed_marks);
            // reversed-graph record grown from the hull complement: its
            // attractor is R, its repeller is A, its basin is V - A
            let compl: Vec<bool> = h.iter().map(|&x| !x).collect();
            let (h2, a2, r2, basin2) = record_sets_on_graph(&gr, &rec, &compl);
            assert_eq!(h2, compl, "hull complement is reverse-closed");
            assert_eq!(a2, r, "reversed attractor == repeller");
            assert_eq!(r2, a, "reversed repeller == attractor");
            let v_minus_a: Vec<bool> = a.iter().map(|&x| !x).collect();
            assert_eq!(basin2, v_minus_a, "repeller-side basin == complement(A)");
        }
    }

    #[test]
    fn record_invariants_and_basin_forward_closure() {
        for seed in 0..10u64 {
            let n = 100;
            let g = random_digraph_min_outdeg(n, 60, 300 + seed);
            let scc = tarjan_scc(&g);
            let rec = recurrent_vertices(&g, &scc);
            let reach = component_reachability(&g, &scc, &rec);
            // every principal downset
            let mut seen = std::collections::HashSet::new();
            for v0 in 0..n {
                if !seen.insert(reach.vertex_mask[v0].clone()) {
                    continue;
                }
                let mut seed_marks = vec![false; n];
                for v in 0..n {
                    if rec[v] {
                        if let Some(bit) = reach.rec_comp_index[scc.comp_of[v] as usize] {
                            if mask_get(&reach.vertex_mask[v0], bit as usize) {
                                seed_marks[v] = true;
                            }
                        }
                    }
                }
                let (h, a, r, basin) = record_sets_on_graph(&g, &rec, &seed_marks);
                for v in 0..n {
                    // A inside U, A and R disjoint, basin contains A
                    assert!(!a[v] || h[v]);
                    assert!(!(a[v] && r[v]));
                    assert!(!a[v] || basin[v]);
                    if basin[v] {
                        for &w in g.succ(v as u32) {
                            assert!(basin[w as usize], "basin not forward closed");
                        }
                    }
                }
            }
        }
    }
}
