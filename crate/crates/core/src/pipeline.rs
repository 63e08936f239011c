//! End-to-end pipeline: ensemble generation, the (epsilon, T) sweep of box
//! maps, aggregation, Morse decomposition, attractor enumeration, duality
//! checks, the Lyapunov stage and the verification stage, plus the artifact
//! writers (`decomposition.json`, `boxes_XX.csv`, `morse.dot`,
//! `lyapunov.csv`, `components.json`, `report.json` / `report.txt`).

use crate::boxmap::{aggregate, build_box_maps_at, AggregatedMap, BoxMap};
use crate::cocycle::SystemDef;
use crate::config::RunConfig;
use crate::conley::{
    chain_recurrent_set, check_duality, enumerate_attractors, omega_limit, AttractorOptions,
    AttractorRecord, DualityLevel, MorseDecomposition,
};
use crate::error::{Error, Result};
use crate::graph::DiGraph;
use crate::grid::{BoxGrid, BoxSet};
use crate::lyapunov::{
    complete_lyapunov, compute_entrance_fields, label_components, ComponentLabeling,
    EntranceTimeField, LyapunovField, ScanParams,
};
use crate::noise::{dump_ensemble, generate_ensemble, SampleEnsemble};
use crate::par::Exec;
use crate::util::derive_seed;
use crate::verify::{
    delta_const, run_oracles, verify_constancy, verify_decrease, verify_ordering, verify_range,
    Counterexample, SectionReport, VerificationReport, VerifyInputs, VerifyParams,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

/// Decomposition at one sweep point.
pub struct SweepPoint {
    pub eps: f64,
    pub t: f64,
    pub edge_count: usize,
    pub decomp: MorseDecomposition,
}

/// Everything the decompose stage produces; later stages build on the
/// finest sweep point.
pub struct Decomposition {
    pub config: RunConfig,
    pub system: SystemDef,
    pub grid: Arc<BoxGrid>,
    pub ensemble: SampleEnsemble,
    pub sweep: Vec<SweepPoint>,
    pub maps: Vec<BoxMap>,
    pub agg: AggregatedMap,
    pub records: Vec<AttractorRecord>,
    pub duality: DualityLevel,
    pub per_sample_duality: Option<Vec<DualityLevel>>,
    /// Chain recurrence shrank monotonically along the descending epsilon
    /// sweep at each fixed T.
    pub monotone_recurrent: bool,
}

impl Decomposition {
    pub fn final_point(&self) -> &SweepPoint {
        self.sweep.last().expect("sweep is nonempty")
    }

    pub fn decomp(&self) -> &MorseDecomposition {
        &self.final_point().decomp
    }
}

/// Per-sample graphs are materialized (for per-sample attractors and
/// duality) only under this box-count bound.
const PER_SAMPLE_GRAPH_LIMIT: u32 = 65_536;
/// Pullback omega-limit diagnostics run only for hulls up to this size.
const OMEGA_DIAGNOSTIC_HULL_LIMIT: u32 = 4_000;

/// Runs ensemble generation, the sweep, and the attractor/duality stage.
pub fn run_decompose(config: &RunConfig, exec: Exec) -> Result<Decomposition> {
    let system = config.build_system()?;
    let grid = config.build_grid()?;
    if system.dim != grid.dim() {
        return Err(Error::Config {
            location: "[window]".into(),
            message: "window dimension does not match the system".into(),
        });
    }
    let ensemble = generate_ensemble(&config.ensemble_spec()?)?;
    if let Some(path) = &config.noise_dump {
        let mut w = BufWriter::new(fs::File::create(path)?);
        dump_ensemble(&ensemble, &mut w)?;
    }
    let sample_indices: Vec<usize> = (0..ensemble.count()).collect();

    let mut sweep: Vec<SweepPoint> = Vec::new();
    let mut final_maps: Option<Vec<BoxMap>> = None;
    let mut final_agg: Option<AggregatedMap> = None;
    let mut monotone = true;
    for &t in &config.t_list {
        // integrate once per T at the widest radius; narrower radii reuse
        // the endpoints
        let base_maps = build_box_maps_at(
            &system,
            &ensemble,
            &sample_indices,
            &grid,
            t,
            config.eps_list[0],
            config.points_per_box,
            config.reentry_horizon,
            exec,
        )?;
        let mut prev_recurrent: Option<BoxSet> = None;
        for (ei, &eps) in config.eps_list.iter().enumerate() {
            let maps: Vec<BoxMap> = if ei == 0 {
                base_maps.clone()
            } else {
                base_maps.iter().map(|m| m.with_eps(eps)).collect()
            };
            let agg = aggregate(&maps, config.aggregation, exec)?;
            let decomp = chain_recurrent_set(&agg);
            if let Some(prev) = &prev_recurrent {
                // eps decreases: recurrence must shrink
                monotone &= decomp.recurrent.is_subset(prev);
            }
            prev_recurrent = Some(decomp.recurrent.clone());
            let is_final =
                ei + 1 == config.eps_list.len() && t == *config.t_list.last().unwrap();
            sweep.push(SweepPoint {
                eps,
                t,
                edge_count: agg.graph.edge_count(),
                decomp,
            });
            if is_final {
                final_maps = Some(maps);
                final_agg = Some(agg);
            }
        }
    }
    let maps = final_maps.expect("sweep produced a finest point");
    let agg = final_agg.expect("sweep produced a finest point");
    let decomp = sweep.last().unwrap();

    // per-sample graphs when the grid is small enough
    let per_sample_graphs: Option<Vec<DiGraph>> = if grid.box_count() <= PER_SAMPLE_GRAPH_LIMIT {
        Some(maps.iter().map(|m| m.to_graph(exec)).collect())
    } else {
        None
    };
    let opts = AttractorOptions {
        point_seeds: config.point_seeds,
        master_seed: config.master_seed,
        max_records: config.max_pairs,
        ..Default::default()
    };
    let mut records = enumerate_attractors(
        &decomp.decomp,
        &agg,
        &[],
        per_sample_graphs.as_deref(),
        &opts,
    );
    let duality = check_duality(&decomp.decomp, &agg, &records);
    let per_sample_duality = per_sample_graphs
        .as_ref()
        .map(|graphs| graphs.iter().map(crate::conley::duality_on_graph).collect());

    // pullback omega-limit diagnostic for small hulls: the simulated limit
    // set should land in the hull's grid interior
    let half_depth_steps = crate::noise::time_to_steps(config.pullback_depth, config.dt)? / 2;
    let t_half = half_depth_steps as f64 * config.dt;
    for rec in records.iter_mut() {
        let hull0 = rec.pre_attractor.for_sample(0);
        if hull0.count() == 0 || hull0.count() > OMEGA_DIAGNOSTIC_HULL_LIMIT {
            continue;
        }
        let omega = omega_limit(
            &rec.pre_attractor,
            &system,
            &ensemble,
            &grid,
            config.pullback_depth,
            &[t_half],
            2,
            exec,
        )?;
        let mut inside = true;
        for si in 0..ensemble.count() {
            let hull = rec.pre_attractor.for_sample(si);
            let interior = hull.interior(&grid);
            inside &= omega.for_sample(si).is_subset(&interior);
        }
        rec.omega_inside_interior = Some(inside);
    }

    Ok(Decomposition {
        config: config.clone(),
        system,
        grid,
        ensemble,
        sweep,
        maps,
        agg,
        records,
        duality,
        per_sample_duality,
        monotone_recurrent: monotone,
    })
}

/// Which boxes the Lyapunov field covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldScope {
    /// Every box (required for the CSV export).
    Full,
    /// Recurrent boxes only (enough for labeling, range and ordering).
    Recurrent,
}

pub struct LyapunovStage {
    pub fields: Vec<EntranceTimeField>,
    pub field: LyapunovField,
    pub labeling: ComponentLabeling,
}

pub fn scan_params(config: &RunConfig) -> ScanParams {
    ScanParams {
        t_max: config.t_max,
        dt_scan: config.dt_scan,
    }
}

/// Extends a decomposition with entrance-time fields, the complete
/// function and the component labeling.
pub fn run_lyapunov_stage(dec: &Decomposition, scope: FieldScope, exec: Exec) -> Result<LyapunovStage> {
    let config = &dec.config;
    let scope_set = match scope {
        FieldScope::Full => None,
        FieldScope::Recurrent => {
            let mut s = dec.decomp().recurrent.clone();
            if let Some(ext) = dec.grid.exterior() {
                s.insert(ext);
            }
            Some(s)
        }
    };
    let fields = compute_entrance_fields(
        &dec.system,
        &dec.ensemble,
        &dec.grid,
        &dec.records,
        scan_params(config),
        scope_set.as_ref(),
        exec,
    )?;
    let field = complete_lyapunov(&dec.grid, dec.ensemble.count(), &fields)?;
    let labeling = label_components(dec.decomp(), &dec.records, &field)?;
    Ok(LyapunovStage {
        fields,
        field,
        labeling,
    })
}

/// Shift-identity spot checks: `tau(shift(w,t), phi(t,w)x) = tau(w,x) - t`
/// within the scan resolution, over sampled transient points.
pub fn verify_shift_identity(
    dec: &Decomposition,
    n_target: usize,
    master_seed: u64,
) -> Result<SectionReport> {
    let mut report = SectionReport::new("shift_identity");
    let scan = scan_params(&dec.config);
    let transient: Vec<u32> = (0..dec.grid.interior_count())
        .filter(|&b| !dec.decomp().recurrent.contains(b))
        .collect();
    if transient.is_empty() || dec.records.is_empty() {
        report.notes.push("nothing to sample".into());
        return Ok(report);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master_seed, "shift-identity"));
    let mut max_residual: f64 = 0.0;
    let mut attempts = 0usize;
    while report.checked < n_target && attempts < 10 * n_target {
        attempts += 1;
        let b = transient[rng.random_range(0..transient.len())];
        let x: Vec<f64> = dec
            .grid
            .lower_corner(b)
            .iter()
            .zip(dec.grid.widths())
            .map(|(&lo, &w)| lo + w * rng.random_range(0.0..1.0))
            .collect();
        let si = attempts % dec.ensemble.count();
        let t = dec.config.t_checks[attempts % dec.config.t_checks.len()];
        let rec = &dec.records[attempts % dec.records.len()];
        let res = crate::lyapunov::shift_identity_check(
            &dec.system,
            dec.ensemble.sample(si),
            &dec.grid,
            &x,
            rec,
            si,
            t,
            scan,
        )?;
        if let Some(residual) = res {
            report.checked += 1;
            max_residual = max_residual.max(residual);
            if residual > scan.dt_scan + 1e-9 {
                report.fail(Counterexample {
                    sample: si,
                    x,
                    t,
                    values: vec![residual],
                    what: "shift identity residual above dt_scan".into(),
                });
            }
        } else {
            report.skipped += 1;
        }
    }
    report.stats.insert("max_residual".into(), max_residual);
    if report.checked < n_target {
        report.pass = false;
        report
            .notes
            .push(format!("only {} of {n_target} samples had finite taus", report.checked));
    }
    Ok(report)
}

/// Runs the whole verification stage on top of decompose + lyapunov.
pub fn run_verify_stage(
    dec: &Decomposition,
    lyap: &LyapunovStage,
    exec: Exec,
) -> Result<VerificationReport> {
    let config = &dec.config;
    let inputs = VerifyInputs {
        system: &dec.system,
        ensemble: &dec.ensemble,
        grid: &dec.grid,
        decomp: dec.decomp(),
        records: &dec.records,
        field: &lyap.field,
        labeling: &lyap.labeling,
        scan: scan_params(config),
        exec,
    };
    let params = VerifyParams {
        n_points: config.n_points,
        t_checks: config.t_checks.clone(),
        delta_dec: config.delta_dec,
        master_seed: config.master_seed,
    };
    let mut sections = Vec::new();
    // exact combinatorial identities first
    let mut duality_section = SectionReport::new("duality");
    duality_section.checked = dec.records.len();
    if !dec.duality.exact() {
        duality_section.pass = false;
        duality_section.notes.push(format!("{:?}", dec.duality));
    }
    if let Some(per_sample) = &dec.per_sample_duality {
        duality_section.checked += per_sample.len();
        for (i, lvl) in per_sample.iter().enumerate() {
            if !lvl.exact() {
                duality_section.pass = false;
                duality_section.notes.push(format!("sample {i}: {lvl:?}"));
            }
        }
    }
    sections.push(duality_section);
    sections.push(verify_range(&inputs)?);
    sections.push(verify_ordering(&inputs)?);
    sections.push(verify_decrease(&inputs, &params)?);
    sections.push(verify_constancy(&inputs, &params)?);
    sections.push(verify_shift_identity(dec, params.n_points, params.master_seed)?);
    sections.push(run_oracles(config.master_seed));

    let mut echo = BTreeMap::new();
    echo.insert("master_seed".into(), config.master_seed.to_string());
    echo.insert("samples".into(), config.sample_count.to_string());
    echo.insert("dt".into(), config.dt.to_string());
    echo.insert("epsilon_finest".into(), config.eps_list.last().unwrap().to_string());
    echo.insert("t_chain_finest".into(), config.t_list.last().unwrap().to_string());
    echo.insert("delta_dec".into(), config.delta_dec.to_string());
    echo.insert(
        "delta_const".into(),
        format!("{:.17e}", delta_const(&inputs)),
    );
    Ok(VerificationReport::assemble(sections, echo))
}

// ---------------------------------------------------------------------------
// artifact writers
// ---------------------------------------------------------------------------

const BOX_LIST_CAP: u32 = 10_000;

#[derive(Serialize)]
struct SweepEntryJson {
    epsilon: f64,
    t_chain: f64,
    component_count: usize,
    recurrent_box_count: u32,
    edge_count: usize,
}

#[derive(Serialize)]
struct ComponentJson {
    id: usize,
    box_count: usize,
    min_box: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    boxes: Option<Vec<u32>>,
    center_of_mass: Vec<f64>,
}

#[derive(Serialize)]
struct AttractorJson {
    id: usize,
    seed: String,
    attractor_box_count: u32,
    repeller_box_count: u32,
    basin_box_count: u32,
    pre_attractor_box_count: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    attractor_boxes: Option<Vec<u32>>,
    forward_invariant: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    omega_inside_interior: Option<bool>,
}

#[derive(Serialize)]
struct ExteriorJson {
    enabled: bool,
    reachable_from_interior: bool,
}

#[derive(Serialize)]
struct DualityJson {
    exact: bool,
    recurrent_matches: bool,
    complement_matches: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    per_sample_exact: Option<Vec<bool>>,
}

#[derive(Serialize)]
struct DecompositionJson {
    schema: &'static str,
    system: String,
    master_seed: u64,
    samples: usize,
    divisions: Vec<u32>,
    aggregation: String,
    sweep: Vec<SweepEntryJson>,
    epsilon: f64,
    t_chain: f64,
    recurrent_box_count: u32,
    component_count: usize,
    components: Vec<ComponentJson>,
    order_edges: Vec<(usize, usize)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    exterior: Option<ExteriorJson>,
    attractors: Vec<AttractorJson>,
    duality: DualityJson,
    monotone_recurrent_under_eps: bool,
}

fn box_list(set_boxes: &[u32]) -> Option<Vec<u32>> {
    (set_boxes.len() <= BOX_LIST_CAP as usize).then(|| set_boxes.to_vec())
}

fn component_center(grid: &BoxGrid, boxes: &[u32]) -> Vec<f64> {
    let dim = grid.dim();
    let mut acc = vec![0.0; dim];
    for &b in boxes {
        for (a, c) in grid.center(b).into_iter().enumerate() {
            acc[a] += c;
        }
    }
    for a in acc.iter_mut() {
        *a /= boxes.len() as f64;
    }
    acc
}

/// Writes `decomposition.json`, per-sweep-point `boxes_XX.csv` and
/// `morse_XX.dot`, plus the final `morse.dot` and `boxes.csv`.
pub fn write_decompose_artifacts(dec: &Decomposition, outdir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(outdir)?;
    let mut written = Vec::new();
    for (i, point) in dec.sweep.iter().enumerate() {
        let csv = outdir.join(format!("boxes_{i:02}.csv"));
        let mut w = BufWriter::new(fs::File::create(&csv)?);
        point.decomp.recurrent.write_csv(&dec.grid, &mut w)?;
        written.push(csv);
        let dot = outdir.join(format!("morse_{i:02}.dot"));
        let mut w = BufWriter::new(fs::File::create(&dot)?);
        point.decomp.write_morse_dot(&mut w)?;
        written.push(dot);
    }
    // final copies under the stable names
    let final_point = dec.final_point();
    let csv = outdir.join("boxes.csv");
    let mut w = BufWriter::new(fs::File::create(&csv)?);
    final_point.decomp.recurrent.write_csv(&dec.grid, &mut w)?;
    written.push(csv);
    let dot = outdir.join("morse.dot");
    let mut w = BufWriter::new(fs::File::create(&dot)?);
    final_point.decomp.write_morse_dot(&mut w)?;
    written.push(dot);

    let decomp = dec.decomp();
    let mut order_edges = Vec::new();
    for i in 0..decomp.components.len() {
        for j in 0..decomp.components.len() {
            if i != j && decomp.order[i][j] {
                order_edges.push((i, j));
            }
        }
    }
    let exterior = dec.grid.exterior().map(|ext| ExteriorJson {
        enabled: true,
        reachable_from_interior: !dec.agg.graph.pred(ext).iter().all(|&p| p == ext),
    });
    let json = DecompositionJson {
        schema: "rds-conley.decomposition.v1",
        system: format!("{:?}", dec.system.kind),
        master_seed: dec.config.master_seed,
        samples: dec.ensemble.count(),
        divisions: dec.config.divisions.clone(),
        aggregation: format!("{:?}", dec.config.aggregation),
        sweep: dec
            .sweep
            .iter()
            .map(|p| SweepEntryJson {
                epsilon: p.eps,
                t_chain: p.t,
                component_count: p.decomp.components.len(),
                recurrent_box_count: p.decomp.recurrent.count(),
                edge_count: p.edge_count,
            })
            .collect(),
        epsilon: final_point.eps,
        t_chain: final_point.t,
        recurrent_box_count: decomp.recurrent.count(),
        component_count: decomp.components.len(),
        components: decomp
            .components
            .iter()
            .map(|c| ComponentJson {
                id: c.id,
                box_count: c.boxes.len(),
                min_box: c.boxes[0],
                boxes: box_list(&c.boxes),
                center_of_mass: component_center(&dec.grid, &c.boxes),
            })
            .collect(),
        order_edges,
        exterior,
        attractors: dec
            .records
            .iter()
            .map(|r| {
                let a = r.attractor.for_sample(0);
                let a_boxes: Vec<u32> = a.iter().collect();
                AttractorJson {
                    id: r.id,
                    seed: r.seed_desc.clone(),
                    attractor_box_count: a.count(),
                    repeller_box_count: r.repeller.for_sample(0).count(),
                    basin_box_count: r.basin.for_sample(0).count(),
                    pre_attractor_box_count: r.pre_attractor.for_sample(0).count(),
                    attractor_boxes: box_list(&a_boxes),
                    forward_invariant: r.forward_invariant,
                    omega_inside_interior: r.omega_inside_interior,
                }
            })
            .collect(),
        duality: DualityJson {
            exact: dec.duality.exact(),
            recurrent_matches: dec.duality.recurrent_matches,
            complement_matches: dec.duality.complement_matches,
            per_sample_exact: dec
                .per_sample_duality
                .as_ref()
                .map(|v| v.iter().map(|l| l.exact()).collect()),
        },
        monotone_recurrent_under_eps: dec.monotone_recurrent,
    };
    let path = outdir.join("decomposition.json");
    let mut w = BufWriter::new(fs::File::create(&path)?);
    serde_json::to_writer_pretty(&mut w, &json).map_err(|e| Error::Io(e.into()))?;
    w.write_all(b"\n")?;
    written.push(path);
    Ok(written)
}

#[derive(Serialize)]
struct LabeledComponentJson {
    id: usize,
    critical_value: f64,
    critical_numerator: String,
    critical_depth: u32,
    signature: String,
    box_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    boxes: Option<Vec<u32>>,
}

#[derive(Serialize)]
struct ComponentsJson {
    schema: &'static str,
    pair_count: usize,
    components: Vec<LabeledComponentJson>,
    merge_warnings: Vec<(usize, usize)>,
    truncated_scans: usize,
}

/// Writes `lyapunov.csv` (full scope only) and `components.json`
/// (components ordered by critical value descending).
pub fn write_lyapunov_artifacts(
    dec: &Decomposition,
    lyap: &LyapunovStage,
    scope: FieldScope,
    outdir: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(outdir)?;
    let mut written = Vec::new();
    if scope == FieldScope::Full {
        let path = outdir.join("lyapunov.csv");
        let mut w = BufWriter::new(fs::File::create(&path)?);
        lyap.field.write_csv(&mut w)?;
        written.push(path);
    }
    let decomp = dec.decomp();
    let mut comps: Vec<&crate::lyapunov::LabeledComponent> =
        lyap.labeling.per_component.iter().collect();
    comps.sort_by(|a, b| b.critical.cmp(&a.critical).then(a.component_id.cmp(&b.component_id)));
    let json = ComponentsJson {
        schema: "rds-conley.components.v1",
        pair_count: lyap.field.pair_count,
        components: comps
            .into_iter()
            .map(|lc| {
                let boxes = &decomp.components[lc.component_id].boxes;
                LabeledComponentJson {
                    id: lc.component_id,
                    critical_value: lc.critical_f64,
                    critical_numerator: lc.critical.numerator.to_string(),
                    critical_depth: lc.critical.depth,
                    signature: lc.signature.clone(),
                    box_count: boxes.len(),
                    boxes: box_list(boxes),
                }
            })
            .collect(),
        merge_warnings: lyap.labeling.merge_warnings.clone(),
        truncated_scans: lyap.field.truncated_count,
    };
    let path = outdir.join("components.json");
    let mut w = BufWriter::new(fs::File::create(&path)?);
    serde_json::to_writer_pretty(&mut w, &json).map_err(|e| Error::Io(e.into()))?;
    w.write_all(b"\n")?;
    written.push(path);
    Ok(written)
}

/// Writes `report.json` and `report.txt`.
pub fn write_verify_artifacts(report: &VerificationReport, outdir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(outdir)?;
    let json_path = outdir.join("report.json");
    let mut w = BufWriter::new(fs::File::create(&json_path)?);
    serde_json::to_writer_pretty(&mut w, report).map_err(|e| Error::Io(e.into()))?;
    w.write_all(b"\n")?;
    let txt_path = outdir.join("report.txt");
    let mut w = BufWriter::new(fs::File::create(&txt_path)?);
    report.write_text(&mut w)?;
    Ok(vec![json_path, txt_path])
}
