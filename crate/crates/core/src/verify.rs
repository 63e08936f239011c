//! Trajectory-level verification harness: certifies the complete Lyapunov
//! function's defining properties along simulated orbits (strict decrease
//! off the recurrent set, constancy on it, exact base-3 critical values,
//! strict ordering along the condensation) and runs the independent
//! brute-force oracles. Every check re-evaluates `L` pointwise via fresh
//! entrance-time computation; nothing is read back from the field being
//! checked except where the field itself is the object under test.

use crate::cocycle::{Flow, SystemDef};
use crate::conley::{duality_on_graph, AttractorRecord, MorseDecomposition};
use crate::error::Result;
use crate::graph::{recurrent_vertices, tarjan_scc, DiGraph};
use crate::grid::{BoxGrid, BoxIdx, BoxSet};
use crate::lyapunov::{
    entrance_times_at_point, pair_lyapunov_value, ComponentLabeling, LyapunovField, PairView,
    ScanParams,
};
use crate::noise::SampleEnsemble;
use crate::par::Exec;
use crate::util::derive_seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

/// A concrete counterexample carried by a failing check.
#[derive(Debug, Clone, Serialize)]
pub struct Counterexample {
    pub sample: usize,
    pub x: Vec<f64>,
    pub t: f64,
    pub values: Vec<f64>,
    pub what: String,
}

/// Outcome of one verification section.
#[derive(Debug, Clone, Serialize)]
pub struct SectionReport {
    pub name: String,
    pub pass: bool,
    pub checked: usize,
    pub skipped: usize,
    pub stats: BTreeMap<String, f64>,
    pub counterexamples: Vec<Counterexample>,
    pub notes: Vec<String>,
}

impl SectionReport {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            pass: true,
            checked: 0,
            skipped: 0,
            stats: BTreeMap::new(),
            counterexamples: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn fail(&mut self, ce: Counterexample) {
        self.pass = false;
        if self.counterexamples.len() < 20 {
            self.counterexamples.push(ce);
        }
    }
}

/// Full verification report; `hard_failure` drives the process exit code.
#[derive(Debug, Clone, Serialize)]
pub struct VerificationReport {
    pub sections: Vec<SectionReport>,
    pub config_echo: BTreeMap<String, String>,
    pub hard_failure: bool,
}

impl VerificationReport {
    pub fn assemble(sections: Vec<SectionReport>, config_echo: BTreeMap<String, String>) -> Self {
        let hard_failure = sections.iter().any(|s| !s.pass);
        Self {
            sections,
            config_echo,
            hard_failure,
        }
    }

    pub fn write_text<W: Write>(&self, w: &mut W) -> Result<()> {
        for s in &self.sections {
            writeln!(
                w,
                "[{}] {}: checked={} skipped={}",
                if s.pass { "PASS" } else { "FAIL" },
                s.name,
                s.checked,
                s.skipped
            )?;
            for (k, v) in &s.stats {
                writeln!(w, "    {k} = {v:.6e}")?;
            }
            for n in &s.notes {
                writeln!(w, "    note: {n}")?;
            }
            for ce in &s.counterexamples {
                writeln!(
                    w,
                    "    counterexample: sample={} x={:?} t={} {} values={:?}",
                    ce.sample, ce.x, ce.t, ce.what, ce.values
                )?;
            }
        }
        writeln!(
            w,
            "overall: {}",
            if self.hard_failure { "FAIL" } else { "PASS" }
        )?;
        Ok(())
    }
}

/// Everything the trajectory-level checks need.
pub struct VerifyInputs<'a> {
    pub system: &'a SystemDef,
    pub ensemble: &'a SampleEnsemble,
    pub grid: &'a Arc<BoxGrid>,
    pub decomp: &'a MorseDecomposition,
    pub records: &'a [AttractorRecord],
    pub field: &'a LyapunovField,
    pub labeling: &'a ComponentLabeling,
    pub scan: ScanParams,
    pub exec: Exec,
}

/// Knobs for the sampled checks.
#[derive(Debug, Clone)]
pub struct VerifyParams {
    pub n_points: usize,
    pub t_checks: Vec<f64>,
    pub delta_dec: f64,
    pub master_seed: u64,
}

/// Pointwise complete Lyapunov value at `x` under one sample, by fresh
/// entrance-time computation over the record family.
pub fn point_lyapunov(
    system: &SystemDef,
    sample: &crate::noise::NoiseSample,
    grid: &Arc<BoxGrid>,
    records: &[AttractorRecord],
    sample_index: usize,
    x: &[f64],
    scan: ScanParams,
) -> Result<f64> {
    let pairs: Vec<PairView> = records.iter().map(|r| r.view(sample_index)).collect();
    let taus = entrance_times_at_point(system, sample, grid, x, &pairs, scan)?;
    let mut acc = 0.0;
    for (n, t) in taus.iter().enumerate() {
        acc += pair_lyapunov_value(t.tau) * 2.0 / 3f64.powi(n as i32 + 1);
    }
    Ok(acc)
}

fn interior_transient_boxes(inputs: &VerifyInputs) -> Vec<BoxIdx> {
    (0..inputs.grid.interior_count())
        .filter(|&b| !inputs.decomp.recurrent.contains(b))
        .collect()
}

fn random_point_in_box(grid: &BoxGrid, b: BoxIdx, rng: &mut ChaCha8Rng) -> Vec<f64> {
    grid.lower_corner(b)
        .iter()
        .zip(grid.widths())
        .map(|(&lo, &w)| lo + w * rng.random_range(0.0..1.0))
        .collect()
}

/// Strict decrease of `L` along orbits from non-recurrent boxes:
/// `L(shift(w,t), phi(t,w)x) < L(w,x) - delta_dec` for every sampled
/// `(sample, x, t)`.
pub fn verify_decrease(inputs: &VerifyInputs, params: &VerifyParams) -> Result<SectionReport> {
    let mut report = SectionReport::new("decrease");
    let transient = interior_transient_boxes(inputs);
    if transient.is_empty() {
        report.notes.push("no transient boxes to sample".into());
        return Ok(report);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.master_seed, "verify-decrease"));
    let tasks: Vec<(usize, Vec<f64>)> = (0..params.n_points)
        .map(|k| {
            let b = transient[rng.random_range(0..transient.len())];
            (k % inputs.ensemble.count(), random_point_in_box(inputs.grid, b, &mut rng))
        })
        .collect();
    let results = crate::par::map_slice(inputs.exec, &tasks, |(si, x)| -> Result<Vec<(f64, f64)>> {
        let sample = inputs.ensemble.sample(*si);
        let before = point_lyapunov(
            inputs.system, sample, inputs.grid, inputs.records, *si, x, inputs.scan,
        )?;
        let mut flow = Flow::new(inputs.system, sample)?;
        if inputs.grid.exterior_enabled() {
            flow = flow.free_space();
        }
        let mut out = Vec::with_capacity(params.t_checks.len());
        for &t in &params.t_checks {
            let moved = flow.evolve(x, t)?;
            let shifted = sample.shift(t)?;
            let after = point_lyapunov(
                inputs.system, &shifted, inputs.grid, inputs.records, *si, &moved, inputs.scan,
            )?;
            out.push((before, after));
        }
        Ok(out)
    });
    let mut min_margin = f64::INFINITY;
    let mut margin_sum = 0.0;
    for ((si, x), res) in tasks.iter().zip(results) {
        let res = res?;
        for (&t, &(before, after)) in params.t_checks.iter().zip(&res) {
            report.checked += 1;
            let margin = before - after;
            min_margin = min_margin.min(margin);
            margin_sum += margin;
            if margin <= params.delta_dec {
                report.fail(Counterexample {
                    sample: *si,
                    x: x.clone(),
                    t,
                    values: vec![before, after, margin],
                    what: "L failed to decrease strictly".into(),
                });
            }
        }
    }
    if report.checked > 0 {
        report.stats.insert("min_margin".into(), min_margin);
        report
            .stats
            .insert("mean_margin".into(), margin_sum / report.checked as f64);
    }
    Ok(report)
}

/// Constancy of `L` on the recurrent set: points in recurrent boxes whose
/// box-orbit stays inside their component for the whole check horizon must
/// satisfy `|delta L| <= delta_const`. Points that leave their component's
/// box cover at this grid resolution are reported and skipped (they are not
/// certified recurrent at this resolution).
pub fn verify_constancy(inputs: &VerifyInputs, params: &VerifyParams) -> Result<SectionReport> {
    let mut report = SectionReport::new("constancy");
    let delta_const = delta_const(inputs);
    report.stats.insert("delta_const".into(), delta_const);
    let comps = &inputs.decomp.components;
    if comps.is_empty() {
        report.notes.push("no components".into());
        return Ok(report);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.master_seed, "verify-constancy"));
    let per_comp = (params.n_points / comps.len()).max(1);
    let t_last = params.t_checks.iter().cloned().fold(0.0, f64::max);
    let scan_every = (inputs.scan.dt_scan / inputs.ensemble.spec().dt).round() as i64;
    let mut max_drift: f64 = 0.0;
    for comp in comps {
        let comp_set = BoxSet::from_boxes(inputs.grid, comp.boxes.iter().copied());
        let mut included = 0usize;
        for k in 0..per_comp {
            let si = k % inputs.ensemble.count();
            let sample = inputs.ensemble.sample(si);
            // bias the first point to the component's center box for a
            // guaranteed stayer near the stationary structure
            let b = comp.boxes[rng.random_range(0..comp.boxes.len())];
            let x = if k == 0 {
                inputs.grid.center(comp.boxes[comp.boxes.len() / 2])
            } else {
                random_point_in_box(inputs.grid, b, &mut rng)
            };
            let mut flow = Flow::new(inputs.system, sample)?;
            if inputs.grid.exterior_enabled() {
                flow = flow.free_space();
            }
            // does the box-orbit stay within the component?
            let steps = crate::noise::time_to_steps(t_last, sample.dt())?;
            let mut stayed = true;
            flow.walk(&x, steps, |i, s| {
                if i % scan_every == 0 {
                    if let Ok(bx) = inputs.grid.locate(s) {
                        if !comp_set.contains(bx) {
                            stayed = false;
                        }
                    } else {
                        stayed = false;
                    }
                }
                stayed
            })?;
            if !stayed {
                report.skipped += 1;
                continue;
            }
            included += 1;
            let before = point_lyapunov(
                inputs.system, sample, inputs.grid, inputs.records, si, &x, inputs.scan,
            )?;
            for &t in &params.t_checks {
                let moved = flow.evolve(&x, t)?;
                let shifted = sample.shift(t)?;
                let after = point_lyapunov(
                    inputs.system, &shifted, inputs.grid, inputs.records, si, &moved, inputs.scan,
                )?;
                report.checked += 1;
                let drift = (after - before).abs();
                max_drift = max_drift.max(drift);
                if drift > delta_const {
                    report.fail(Counterexample {
                        sample: si,
                        x: x.clone(),
                        t,
                        values: vec![before, after, drift],
                        what: format!("constancy drift beyond {delta_const}"),
                    });
                }
            }
        }
        if included == 0 {
            report.pass = false;
            report
                .notes
                .push(format!("component {} had no certified-recurrent sample points", comp.id));
        }
    }
    report.stats.insert("max_drift".into(), max_drift);
    Ok(report)
}

/// Runtime tolerance for constancy drift: the scan resolution error mapped
/// through the Lipschitz bound of the pair formula (slope at most 1/2)
/// and the geometric weights (summing to less than 1), doubled because two
/// independent scans enter the comparison.
pub fn delta_const(inputs: &VerifyInputs) -> f64 {
    let weight_sum: f64 = (1..=inputs.records.len().max(1))
        .map(|n| 2.0 / 3f64.powi(n as i32))
        .sum();
    2.0 * inputs.scan.dt_scan * 0.5 * weight_sum
}

/// Exact range check: on recurrent boxes the field equals the component's
/// signature value bit-for-bit, and every critical value has base-3 digits
/// in {0, 2}. Reports the set of critical values.
pub fn verify_range(inputs: &VerifyInputs) -> Result<SectionReport> {
    let mut report = SectionReport::new("range");
    let mut criticals: Vec<f64> = Vec::new();
    for lc in &inputs.labeling.per_component {
        criticals.push(lc.critical_f64);
        if !lc.critical.digits().iter().all(|&d| d == 0 || d == 2) {
            report.fail(Counterexample {
                sample: 0,
                x: vec![],
                t: 0.0,
                values: vec![lc.critical_f64],
                what: format!("critical value of component {} has a base-3 digit outside {{0,2}}", lc.component_id),
            });
        }
        report.checked += 1;
    }
    for comp in &inputs.decomp.components {
        let expect = inputs.labeling.per_component[comp.id].critical_f64;
        for si in 0..inputs.field.n_samples {
            for &b in &comp.boxes {
                report.checked += 1;
                let v = inputs.field.big_l_at(si, b);
                if v != expect {
                    report.fail(Counterexample {
                        sample: si,
                        x: inputs.grid.center(b),
                        t: 0.0,
                        values: vec![v, expect],
                        what: format!("field value on recurrent box {b} differs from signature value"),
                    });
                }
            }
        }
    }
    criticals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for (i, c) in criticals.iter().enumerate() {
        report.stats.insert(format!("critical_{i}"), *c);
    }
    Ok(report)
}

/// Strict ordering along the condensation: if component C reaches C', then
/// the critical value of C strictly exceeds that of C' (exact integer
/// comparison), and the attractor-inclusion premise holds per record
/// (an attractor containing C contains C').
pub fn verify_ordering(inputs: &VerifyInputs) -> Result<SectionReport> {
    let mut report = SectionReport::new("ordering");
    let comps = &inputs.decomp.components;
    let lab = &inputs.labeling.per_component;
    for i in 0..comps.len() {
        for j in 0..comps.len() {
            if i == j || !inputs.decomp.order[i][j] {
                continue;
            }
            report.checked += 1;
            // attractor inclusion: l_n(C) = 0 implies l_n(C') = 0
            for (n, rec) in inputs.records.iter().enumerate() {
                let ci_in_a = lab[i].signature.as_bytes()[n] == b'A';
                let cj_in_a = lab[j].signature.as_bytes()[n] == b'A';
                if ci_in_a && !cj_in_a {
                    report.fail(Counterexample {
                        sample: 0,
                        x: vec![],
                        t: 0.0,
                        values: vec![i as f64, j as f64, n as f64],
                        what: format!(
                            "attractor {} contains component {i} but not its successor {j}",
                            rec.id
                        ),
                    });
                }
            }
            if lab[i].critical <= lab[j].critical {
                report.fail(Counterexample {
                    sample: 0,
                    x: vec![],
                    t: 0.0,
                    values: vec![lab[i].critical_f64, lab[j].critical_f64],
                    what: format!("ordering violated: L(C{i}) <= L(C{j}) along a condensation edge"),
                });
            }
        }
    }
    if report.checked == 0 {
        report.notes.push("no condensation edges (single component)".into());
    }
    Ok(report)
}

/// Deterministic random digraph with minimum outdegree 1.
pub fn seeded_digraph(n: usize, extra_edges: usize, seed: u64) -> DiGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::with_capacity(n + extra_edges);
    for v in 0..n as u32 {
        edges.push((v, rng.random_range(0..n as u32)));
    }
    for _ in 0..extra_edges {
        edges.push((rng.random_range(0..n as u32), rng.random_range(0..n as u32)));
    }
    DiGraph::from_edges(n, &edges)
}

/// Exhaustive chain-recurrence oracle: a vertex is recurrent iff some path
/// of length >= 1 returns to it.
pub fn recurrence_oracle(g: &DiGraph) -> Vec<bool> {
    (0..g.vertex_count() as u32).map(|v| g.reaches(v, v)).collect()
}

/// Aggregates the independent brute-force oracles:
/// SCC recurrence vs exhaustive cycle enumeration, exact duality on seeded
/// digraphs, the closed-form double-well integration error, and the Lorenz
/// dissipation bound.
pub fn run_oracles(master_seed: u64) -> SectionReport {
    let mut report = SectionReport::new("oracles");

    // SCC chain recurrence vs exhaustive enumeration, 100 seeded digraphs
    for k in 0..100u64 {
        let n = 20 + (k as usize * 7) % 180;
        let g = seeded_digraph(n, n / 2, derive_seed(master_seed, &format!("oracle-scc-{k}")));
        let scc = tarjan_scc(&g);
        let fast = recurrent_vertices(&g, &scc);
        let slow = recurrence_oracle(&g);
        report.checked += 1;
        if fast != slow {
            report.fail(Counterexample {
                sample: k as usize,
                x: vec![],
                t: 0.0,
                values: vec![n as f64],
                what: "SCC recurrence disagrees with exhaustive cycle oracle".into(),
            });
        }
    }

    // exact duality identities on 50 seeded digraphs
    for k in 0..50u64 {
        let n = 20 + (k as usize * 13) % 180;
        let g = seeded_digraph(n, n / 2, derive_seed(master_seed, &format!("oracle-dual-{k}")));
        let level = duality_on_graph(&g);
        report.checked += 1;
        if !level.exact() {
            report.fail(Counterexample {
                sample: k as usize,
                x: vec![],
                t: 0.0,
                values: vec![n as f64],
                what: "duality identities failed on seeded digraph".into(),
            });
        }
    }

    // double-well integrator vs closed form at dt = 1e-3 over [0, 10]
    (|| -> Result<()> {
        let w = crate::grid::Window::new(vec![-2.0], vec![2.0])?;
        let sys = SystemDef::double_well(w, 0.1)?;
        let ens = crate::noise::generate_ensemble(&crate::noise::EnsembleSpec {
            kind: crate::noise::NoiseKind::Constant,
            count: 1,
            channels: 1,
            dt: 1e-3,
            horizon: 11.0,
            master_seed,
        })?;
        let flow = Flow::new(&sys, ens.sample(0))?;
        let exact = |x0: f64, t: f64| {
            let u0 = x0 * x0;
            let e = (2.0 * t).exp();
            x0.signum() * (u0 * e / (1.0 - u0 + u0 * e)).sqrt()
        };
        let mut worst: f64 = 0.0;
        for &x0 in &[0.5, -0.3, 1.5, 0.05] {
            flow.walk(&[x0], 10_000, |i, s| {
                worst = worst.max((s[0] - exact(x0, i as f64 * 1e-3)).abs());
                true
            })?;
        }
        report.checked += 1;
        report.stats.insert("double_well_max_error".into(), worst);
        if worst >= 1e-6 {
            report.fail(Counterexample {
                sample: 0,
                x: vec![],
                t: 0.0,
                values: vec![worst],
                what: "double-well integration error above 1e-6".into(),
            });
        }
        Ok(())
    })()
    .unwrap_or_else(|e| {
        report.pass = false;
        report.notes.push(format!("double-well oracle errored: {e}"));
    });

    // Lorenz dissipation bound dominates the exact chain rule
    (|| -> Result<()> {
        let w = crate::grid::Window::new(vec![-3.0; 3], vec![3.0; 3])?;
        let sys = SystemDef::random_lorenz(w)?;
        let ens = crate::noise::generate_ensemble(&crate::noise::EnsembleSpec {
            kind: crate::noise::NoiseKind::Ou,
            count: 2,
            channels: 3,
            dt: 0.02,
            horizon: 10.0,
            master_seed: derive_seed(master_seed, "oracle-lorenz"),
        })?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master_seed, "oracle-lorenz-pts"));
        let mut worst_gap: f64 = f64::INFINITY;
        for _ in 0..500 {
            let si = rng.random_range(0..2);
            let flow = Flow::new(&sys, ens.sample(si))?;
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let step = rng.random_range(-200..200);
            let (sg, rh, bt) = flow.lorenz_params_at(step)?;
            let bound = crate::cocycle::lorenz_dissipation_rate(&x, sg, rh, bt)?;
            let f = flow.drift_at(&x, step)?;
            let exact = 2.0 * (x[0] * f[0] + x[1] * f[1] + x[2] * f[2]);
            worst_gap = worst_gap.min(bound - exact);
            report.checked += 1;
            if bound < exact - 1e-12 {
                report.fail(Counterexample {
                    sample: si,
                    x: x.clone(),
                    t: step as f64 * 0.02,
                    values: vec![bound, exact],
                    what: "dissipation bound fails to dominate chain rule".into(),
                });
            }
        }
        report.stats.insert("lorenz_min_bound_gap".into(), worst_gap);
        Ok(())
    })()
    .unwrap_or_else(|e| {
        report.pass = false;
        report.notes.push(format!("lorenz oracle errored: {e}"));
    });

    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lyapunov::ScanParams;
    use crate::noise::{generate_ensemble, EnsembleSpec, NoiseKind};

    #[test]
    fn oracles_pass() {
        let report = run_oracles(12345);
        assert!(report.pass, "{report:?}");
        assert!(report.checked >= 150);
    }

    #[test]
    fn margins_shrink_toward_the_repelling_component() {
        // double well, constant noise: points closer to the unstable point
        // have larger entrance times into the right attractor, hence
        // smaller decrease margins over a fixed t
        let w = crate::grid::Window::new(vec![-2.0], vec![2.0]).unwrap();
        let sys = SystemDef::double_well(w.clone(), 0.1).unwrap();
        let ens = generate_ensemble(&EnsembleSpec {
            kind: NoiseKind::Constant,
            count: 1,
            channels: 1,
            dt: 0.01,
            horizon: 80.0,
            master_seed: 3,
        })
        .unwrap();
        let grid = crate::grid::BoxGrid::new(w, vec![1024], false).unwrap();
        let mk = |lo: f64, hi: f64| {
            let mut s = BoxSet::empty(&grid);
            for b in 0..grid.interior_count() {
                let c = grid.center(b)[0];
                if c >= lo && c <= hi {
                    s.insert(b);
                }
            }
            s
        };
        let record = AttractorRecord {
            id: 0,
            seed_desc: "right-well".into(),
            pre_attractor: crate::grid::RandomBoxSet::uniform(mk(0.8, 1.2)),
            attractor: crate::grid::RandomBoxSet::uniform(mk(0.8, 1.2)),
            repeller: crate::grid::RandomBoxSet::uniform(BoxSet::empty(&grid)),
            basin: crate::grid::RandomBoxSet::uniform(grid.full_set()),
            forward_invariant: true,
            omega_inside_interior: None,
        };
        let records = vec![record];
        let scan = ScanParams {
            t_max: 30.0,
            dt_scan: 0.01,
        };
        let t = 1.0;
        let mut margins = Vec::new();
        for x in [0.4, 0.1, 0.02] {
            let before =
                point_lyapunov(&sys, ens.sample(0), &grid, &records, 0, &[x], scan).unwrap();
            let flow = Flow::new(&sys, ens.sample(0)).unwrap();
            let moved = flow.evolve(&[x], t).unwrap();
            let shifted = ens.sample(0).shift(t).unwrap();
            let after =
                point_lyapunov(&sys, &shifted, &grid, &records, 0, &moved, scan).unwrap();
            margins.push(before - after);
        }
        assert!(
            margins[0] > margins[1] && margins[1] > margins[2],
            "margins should shrink toward 0: {margins:?}"
        );
        assert!(margins[2] > 0.0);
    }

    #[test]
    fn seeded_digraph_is_deterministic_with_min_outdegree() {
        let a = seeded_digraph(50, 25, 7);
        let b = seeded_digraph(50, 25, 7);
        for v in 0..50u32 {
            assert_eq!(a.succ(v), b.succ(v));
            assert!(!a.succ(v).is_empty());
        }
    }
}
