//! The complete Lyapunov function: first-entrance times per
//! attractor-repeller pair, the pair functions `l_n`, the weighted sum
//! `L = sum 2 l_n / 3^n`, and the labeling of chain transitive components
//! by exact critical values.
//!
//! Entrance times are box-gated: a point in an attractor box is `-inf`, in
//! a repeller box `+inf`, and otherwise the time axis is scanned at
//! `dt_scan` resolution along the simulated trajectory until it enters the
//! pre-attractor's box set (forward for points outside the pre-attractor,
//! backward for points inside it, since a forward-invariant pre-attractor
//! is entered exactly once). All pairs share one trajectory per evaluation
//! point. On chain-recurrent boxes every `l_n` is exactly 0 or 1 by the
//! duality identity, so `L` restricted to the recurrent set takes exact
//! base-3 values with digits in {0, 2}; those are computed in integer
//! arithmetic as [`CriticalValue`]s.

use crate::cocycle::{Flow, SystemDef};
use crate::conley::{AttractorRecord, MorseDecomposition};
use crate::error::{Error, Result};
use crate::grid::{BoxGrid, BoxIdx, BoxSet};
use crate::noise::{time_to_steps, NoiseSample, SampleEnsemble};
use crate::par::{map_indexed, Exec};
use std::io::Write;
use std::sync::Arc;

/// Extended-real first entrance time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tau {
    /// The point sits in an attractor box.
    NegInf,
    /// Scanned entrance time (multiple of `dt_scan`, may be negative).
    Finite(f64),
    /// The point sits in a repeller box, or never entered within `t_max`.
    PosInf,
}

/// Entrance time plus the truncation marker distinguishing a structural
/// `+inf` (repeller box) from a scan that ran out of `t_max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauResult {
    pub tau: Tau,
    pub truncated: bool,
}

/// One attractor-repeller pair's sets realized for one sample.
#[derive(Clone, Copy)]
pub struct PairView<'a> {
    pub attractor: &'a BoxSet,
    pub repeller: &'a BoxSet,
    pub pre_attractor: &'a BoxSet,
}

impl AttractorRecord {
    /// The pair's sets as realized for ensemble member `i`.
    pub fn view(&self, i: usize) -> PairView<'_> {
        PairView {
            attractor: self.attractor.for_sample(i),
            repeller: self.repeller.for_sample(i),
            pre_attractor: self.pre_attractor.for_sample(i),
        }
    }
}

/// The pair Lyapunov value: `exp(tau)/2` below zero,
/// `(1 + (2/pi) atan(tau))/2` above; 0 and 1 at the infinities, strictly
/// increasing, both branches meet at `1/2`.
pub fn pair_lyapunov_value(tau: Tau) -> f64 {
    match tau {
        Tau::NegInf => 0.0,
        Tau::PosInf => 1.0,
        Tau::Finite(t) => {
            assert!(!t.is_nan(), "entrance time must not be NaN");
            if t < 0.0 {
                0.5 * t.exp()
            } else {
                0.5 * (1.0 + std::f64::consts::FRAC_2_PI * t.atan())
            }
        }
    }
}

/// Scan parameters for entrance-time computation.
#[derive(Debug, Clone, Copy)]
pub struct ScanParams {
    pub t_max: f64,
    pub dt_scan: f64,
}

impl ScanParams {
    fn steps(&self, dt: f64) -> Result<(i64, i64)> {
        let every = time_to_steps(self.dt_scan, dt)?;
        let total = time_to_steps(self.t_max, dt)?;
        if every <= 0 || total <= 0 {
            return Err(Error::InvalidArgument(
                "t_max and dt_scan must be positive multiples of dt".into(),
            ));
        }
        Ok((every, total))
    }
}

/// First entrance times of the trajectory through `x` for every pair at
/// once, sharing a single forward (and, when needed, backward) walk.
pub fn entrance_times_at_point(
    system: &SystemDef,
    sample: &NoiseSample,
    grid: &Arc<BoxGrid>,
    x: &[f64],
    pairs: &[PairView<'_>],
    scan: ScanParams,
) -> Result<Vec<TauResult>> {
    let dt = sample.dt();
    let (every, total) = scan.steps(dt)?;
    let b0 = grid.locate(x)?;
    let mut out = vec![
        TauResult {
            tau: Tau::PosInf,
            truncated: false,
        };
        pairs.len()
    ];
    // box-gated structural cases; the rest scan forward or backward
    let mut fwd: Vec<usize> = Vec::new();
    let mut bwd: Vec<usize> = Vec::new();
    for (n, p) in pairs.iter().enumerate() {
        if p.attractor.contains(b0) {
            out[n].tau = Tau::NegInf;
        } else if p.repeller.contains(b0) {
            out[n].tau = Tau::PosInf;
        } else if p.pre_attractor.contains(b0) {
            bwd.push(n);
        } else {
            fwd.push(n);
        }
    }
    let mut flow = Flow::new(system, sample)?;
    if grid.exterior_enabled() {
        flow = flow.free_space();
    }
    if !fwd.is_empty() {
        let mut pending = fwd.clone();
        let mut walker = flow.walker();
        walker.run(x, total, |i, s| {
            if i % every != 0 {
                return true;
            }
            if let Ok(b) = grid.locate(s) {
                pending.retain(|&n| {
                    if pairs[n].pre_attractor.contains(b) {
                        out[n].tau = Tau::Finite(i as f64 * dt);
                        false
                    } else {
                        true
                    }
                });
            }
            !pending.is_empty()
        })?;
        for &n in &pending {
            out[n] = TauResult {
                tau: Tau::PosInf,
                truncated: true,
            };
        }
    }
    if !bwd.is_empty() {
        // inside a forward-invariant pre-attractor the membership set is a
        // ray [tau, +inf): walk back to its start
        let mut last_inside = vec![0i64; bwd.len()];
        let mut pending: Vec<usize> = (0..bwd.len()).collect();
        let mut walker = flow.walker();
        walker.run_backward(x, total, |i, s| {
            if (-i) % every != 0 {
                return true;
            }
            let b = grid.locate(s).ok();
            pending.retain(|&j| {
                let inside = b.is_some_and(|bx| pairs[bwd[j]].pre_attractor.contains(bx));
                if inside {
                    last_inside[j] = i;
                    true
                } else {
                    out[bwd[j]].tau = Tau::Finite(last_inside[j] as f64 * dt);
                    false
                }
            });
            !pending.is_empty()
        })?;
        for &j in &pending {
            // still inside at -t_max: report the deepest scanned time
            out[bwd[j]] = TauResult {
                tau: Tau::Finite(-scan.t_max),
                truncated: true,
            };
        }
    }
    Ok(out)
}

/// First entrance time of the trajectory through `x` into the pair's
/// pre-attractor: `-inf` on attractor boxes, `+inf` on repeller boxes
/// (truncation flagged separately when `t_max` runs out).
pub fn entrance_time(
    system: &SystemDef,
    sample: &NoiseSample,
    grid: &Arc<BoxGrid>,
    x: &[f64],
    pair: PairView<'_>,
    scan: ScanParams,
) -> Result<TauResult> {
    Ok(entrance_times_at_point(system, sample, grid, x, &[pair], scan)?[0])
}

/// Residual of the shift identity `tau(shift(w,t), phi(t,w)x) = tau(w,x) - t`.
/// Returns `Some(residual)` when both entrance times are finite, `Some(0)`
/// when both are the same infinity (the identity holds conventionally), and
/// `None` for mixed cases that carry no quantitative residual.
pub fn shift_identity_check(
    system: &SystemDef,
    sample: &NoiseSample,
    grid: &Arc<BoxGrid>,
    x: &[f64],
    record: &AttractorRecord,
    sample_index: usize,
    t: f64,
    scan: ScanParams,
) -> Result<Option<f64>> {
    let pair = record.view(sample_index);
    let before = entrance_time(system, sample, grid, x, pair, scan)?;
    let mut flow = Flow::new(system, sample)?;
    if grid.exterior_enabled() {
        flow = flow.free_space();
    }
    let moved = flow.evolve(x, t)?;
    let shifted = sample.shift(t)?;
    let after = entrance_time(system, &shifted, grid, &moved, pair, scan)?;
    Ok(match (before.tau, after.tau) {
        (Tau::Finite(a), Tau::Finite(b)) => Some((b - (a - t)).abs()),
        (Tau::NegInf, Tau::NegInf) | (Tau::PosInf, Tau::PosInf) => Some(0.0),
        _ => None,
    })
}

/// Entrance-time field of one pair: tau per (sample, box), encoded as f64
/// with the infinities; NaN marks boxes outside the computed scope.
pub struct EntranceTimeField {
    pub record_id: usize,
    pub tau: Vec<f64>,
    pub truncated_count: usize,
}

/// Per-(sample, box) pair values and the complete function.
pub struct LyapunovField {
    pub grid: Arc<BoxGrid>,
    pub n_samples: usize,
    pub pair_count: usize,
    /// `l[(sample * box_count + box) * pair_count + n]`, NaN outside scope.
    pub l: Vec<f64>,
    /// `L[sample * box_count + box]`, NaN outside scope.
    pub big_l: Vec<f64>,
    pub truncated_count: usize,
}

impl LyapunovField {
    pub fn l_at(&self, sample: usize, b: BoxIdx, pair: usize) -> f64 {
        self.l[(sample * self.grid.box_count() as usize + b as usize) * self.pair_count + pair]
    }

    pub fn big_l_at(&self, sample: usize, b: BoxIdx) -> f64 {
        self.big_l[sample * self.grid.box_count() as usize + b as usize]
    }

    /// CSV export: `sample_id,box,center...,l_1..l_N,L`, samples then boxes
    /// ascending. EXTERIOR has empty center columns.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        let dim = self.grid.dim();
        write!(w, "sample_id,box")?;
        for a in 0..dim {
            write!(w, ",center{a}")?;
        }
        for n in 1..=self.pair_count {
            write!(w, ",l_{n}")?;
        }
        writeln!(w, ",L")?;
        for s in 0..self.n_samples {
            for b in 0..self.grid.box_count() {
                write!(w, "{s},{b}")?;
                if self.grid.is_exterior(b) {
                    for _ in 0..dim {
                        write!(w, ",")?;
                    }
                } else {
                    for c in self.grid.center(b) {
                        write!(w, ",{}", crate::util::fmt_f64(c))?;
                    }
                }
                for n in 0..self.pair_count {
                    write!(w, ",{}", crate::util::fmt_f64(self.l_at(s, b, n)))?;
                }
                writeln!(w, ",{}", crate::util::fmt_f64(self.big_l_at(s, b)))?;
            }
        }
        Ok(())
    }
}

/// Computes entrance-time fields for every record, sharing one trajectory
/// per (sample, box). `scope` limits the boxes computed (recurrent boxes
/// are always box-gated and cost nothing extra).
pub fn compute_entrance_fields(
    system: &SystemDef,
    ensemble: &SampleEnsemble,
    grid: &Arc<BoxGrid>,
    records: &[AttractorRecord],
    scan: ScanParams,
    scope: Option<&BoxSet>,
    exec: Exec,
) -> Result<Vec<EntranceTimeField>> {
    let nb = grid.box_count() as usize;
    let ns = ensemble.count();
    let np = records.len();
    let rows: Vec<Result<(Vec<f64>, usize)>> = map_indexed(exec, ns * nb, |idx| {
        let (si, b) = (idx / nb, (idx % nb) as BoxIdx);
        if let Some(s) = scope {
            if !s.contains(b) {
                return Ok((vec![f64::NAN; np], 0));
            }
        }
        let pairs: Vec<PairView> = records.iter().map(|r| r.view(si)).collect();
        if grid.is_exterior(b) {
            // EXTERIOR carries no geometry; gate by set membership only
            let row = pairs
                .iter()
                .map(|p| {
                    if p.attractor.contains(b) {
                        f64::NEG_INFINITY
                    } else {
                        f64::INFINITY
                    }
                })
                .collect();
            return Ok((row, 0));
        }
        let x = grid.center(b);
        let taus = entrance_times_at_point(system, ensemble.sample(si), grid, &x, &pairs, scan)?;
        let mut truncated = 0;
        let row = taus
            .iter()
            .map(|t| {
                if t.truncated {
                    truncated += 1;
                }
                match t.tau {
                    Tau::NegInf => f64::NEG_INFINITY,
                    Tau::PosInf => f64::INFINITY,
                    Tau::Finite(v) => v,
                }
            })
            .collect();
        Ok((row, truncated))
    });
    let mut fields: Vec<EntranceTimeField> = (0..np)
        .map(|n| EntranceTimeField {
            record_id: records[n].id,
            tau: vec![f64::NAN; ns * nb],
            truncated_count: 0,
        })
        .collect();
    for (idx, row) in rows.into_iter().enumerate() {
        let (row, truncated) = row?;
        for (n, field) in fields.iter_mut().enumerate() {
            field.tau[idx] = row[n];
        }
        if truncated > 0 {
            // attribute truncations to the first field for the count; the
            // total matters, per-pair split does not
            fields[0].truncated_count += truncated;
        }
    }
    Ok(fields)
}

/// Sums per-pair values into the complete function `L = sum 2 l_n / 3^n`
/// over a fixed pair enumeration.
pub fn complete_lyapunov(
    grid: &Arc<BoxGrid>,
    n_samples: usize,
    fields: &[EntranceTimeField],
) -> Result<LyapunovField> {
    if fields.is_empty() {
        return Err(Error::InvalidArgument("no pair fields".into()));
    }
    let nb = grid.box_count() as usize;
    let len = n_samples * nb;
    if fields.iter().any(|f| f.tau.len() != len) {
        return Err(Error::DomainMismatch(
            "pair fields cover different (sample, box) domains".into(),
        ));
    }
    let np = fields.len();
    let weights: Vec<f64> = (1..=np).map(|n| 2.0 / 3f64.powi(n as i32)).collect();
    let mut l = vec![f64::NAN; len * np];
    let mut big_l = vec![f64::NAN; len];
    for idx in 0..len {
        if fields[0].tau[idx].is_nan() {
            continue;
        }
        let mut acc = 0.0;
        for (n, f) in fields.iter().enumerate() {
            let tau = f.tau[idx];
            let ln = if tau == f64::NEG_INFINITY {
                0.0
            } else if tau == f64::INFINITY {
                1.0
            } else {
                pair_lyapunov_value(Tau::Finite(tau))
            };
            l[idx * np + n] = ln;
            acc += ln * weights[n];
        }
        big_l[idx] = acc;
    }
    Ok(LyapunovField {
        grid: Arc::clone(grid),
        n_samples,
        pair_count: np,
        l,
        big_l,
        truncated_count: fields.iter().map(|f| f.truncated_count).sum(),
    })
}

/// Exact critical value: `sum of 2/3^n` over the repeller-side pairs,
/// stored as `numerator / 3^depth` in integer arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct CriticalValue {
    pub numerator: u128,
    pub depth: u32,
}

impl CriticalValue {
    /// `bits[n]` set means pair `n+1` contributes `2/3^(n+1)` (the
    /// component lies in that pair's repeller).
    pub fn from_bits(bits: &[bool]) -> Self {
        let depth = bits.len() as u32;
        let mut numerator: u128 = 0;
        for (n, &b) in bits.iter().enumerate() {
            if b {
                numerator += 2 * 3u128.pow(depth - 1 - n as u32);
            }
        }
        Self { numerator, depth }
    }

    /// Base-3 digits, most significant first; all in {0, 2} by construction.
    pub fn digits(&self) -> Vec<u8> {
        let mut digits = vec![0u8; self.depth as usize];
        let mut rem = self.numerator;
        for i in (0..self.depth as usize).rev() {
            digits[i] = (rem % 3) as u8;
            rem /= 3;
        }
        digits
    }

    /// The f64 value summed in the same order as the field's `L`, so exact
    /// bit-comparison against field values is meaningful.
    pub fn to_f64(&self) -> f64 {
        let digits = self.digits();
        let mut acc = 0.0;
        for (i, &d) in digits.iter().enumerate() {
            if d != 0 {
                acc += d as f64 / 3f64.powi(i as i32 + 1);
            }
        }
        acc
    }
}

/// A labeled chain transitive component.
#[derive(Debug, Clone)]
pub struct LabeledComponent {
    pub component_id: usize,
    /// One letter per pair: 'A' if the component lies in the attractor,
    /// 'R' if in the repeller.
    pub signature: String,
    pub critical: CriticalValue,
    pub critical_f64: f64,
}

/// Component labels plus the per-box component assignment.
#[derive(Debug, Clone)]
pub struct ComponentLabeling {
    pub per_component: Vec<LabeledComponent>,
    /// Component id per box; `None` for transient boxes.
    pub box_label: Vec<Option<u32>>,
    /// Components that could not be separated by the pair family.
    pub merge_warnings: Vec<(usize, usize)>,
}

/// Labels each component with its signature over the pair family and its
/// critical value, and checks the field is constant (and exactly the
/// signature value) on the component's boxes across all samples.
pub fn label_components(
    decomp: &MorseDecomposition,
    records: &[AttractorRecord],
    field: &LyapunovField,
) -> Result<ComponentLabeling> {
    let grid = &decomp.grid;
    let nb = grid.box_count() as usize;
    let n_samples = field.n_samples;
    let mut per_component = Vec::with_capacity(decomp.components.len());
    let mut box_label = vec![None; nb];
    for comp in &decomp.components {
        let mut bits = Vec::with_capacity(records.len());
        for rec in records {
            // the component must lie wholly in A or wholly in R, in every
            // sample realization
            let mut in_a = true;
            let mut in_r = true;
            let realizations = match &rec.attractor {
                crate::grid::RandomBoxSet::Uniform(_) => 1,
                crate::grid::RandomBoxSet::PerSample(v) => v.len(),
            };
            for i in 0..realizations {
                let v = rec.view(i);
                for &b in &comp.boxes {
                    in_a &= v.attractor.contains(b);
                    in_r &= v.repeller.contains(b);
                }
            }
            if !in_a && !in_r {
                return Err(Error::DomainMismatch(format!(
                    "component {} is split by record {} (grid too coarse)",
                    comp.id, rec.id
                )));
            }
            bits.push(!in_a);
        }
        let critical = CriticalValue::from_bits(&bits);
        let critical_f64 = critical.to_f64();
        // consistency: the field on the component's boxes equals the
        // signature value exactly, for every sample
        for i in 0..n_samples {
            for &b in &comp.boxes {
                let v = field.big_l_at(i, b);
                if v != critical_f64 {
                    return Err(Error::DomainMismatch(format!(
                        "L is not constant on component {}: box {b} sample {i} has {v}, signature gives {critical_f64}",
                        comp.id
                    )));
                }
            }
        }
        for &b in &comp.boxes {
            box_label[b as usize] = Some(comp.id as u32);
        }
        per_component.push(LabeledComponent {
            component_id: comp.id,
            signature: bits.iter().map(|&r| if r { 'R' } else { 'A' }).collect(),
            critical,
            critical_f64,
        });
    }
    let mut merge_warnings = Vec::new();
    for i in 0..per_component.len() {
        for j in i + 1..per_component.len() {
            if per_component[i].signature == per_component[j].signature {
                merge_warnings.push((i, j));
            }
        }
    }
    Ok(ComponentLabeling {
        per_component,
        box_label,
        merge_warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{RandomBoxSet, Window};
    use crate::noise::{generate_ensemble, EnsembleSpec, NoiseKind};

    #[test]
    fn pair_value_formula() {
        assert_eq!(pair_lyapunov_value(Tau::NegInf), 0.0);
        assert_eq!(pair_lyapunov_value(Tau::PosInf), 1.0);
        assert_eq!(pair_lyapunov_value(Tau::Finite(0.0)), 0.5);
        assert_eq!(pair_lyapunov_value(Tau::Finite(0.5f64.ln())), 0.25);
        // both branches meet at 0
        let below = pair_lyapunov_value(Tau::Finite(-1e-12));
        let above = pair_lyapunov_value(Tau::Finite(1e-12));
        assert!((below - 0.5).abs() < 1e-12 && (above - 0.5).abs() < 1e-12);
    }

    #[test]
    fn pair_value_is_strictly_monotone() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let a: f64 = rng.random_range(-30.0..30.0);
            let b: f64 = rng.random_range(-30.0..30.0);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            if lo == hi {
                continue;
            }
            assert!(
                pair_lyapunov_value(Tau::Finite(lo)) < pair_lyapunov_value(Tau::Finite(hi)),
                "monotonicity failed at ({lo}, {hi})"
            );
        }
    }

    /// Closed-form time for `x' = x - x^3` to flow from `a` to `b` (same
    /// basin, 0 < a < b < 1).
    fn well_travel_time(a: f64, b: f64) -> f64 {
        let q = |x: f64| {
            let u = x * x;
            u / (1.0 - u)
        };
        0.5 * (q(b) / q(a)).ln()
    }

    fn well_setup() -> (SystemDef, SampleEnsemble, Arc<BoxGrid>) {
        let w = Window::new(vec![-2.0], vec![2.0]).unwrap();
        let sys = SystemDef::double_well(w.clone(), 0.1).unwrap();
        let ens = generate_ensemble(&EnsembleSpec {
            kind: NoiseKind::Constant,
            count: 1,
            channels: 1,
            dt: 0.01,
            horizon: 60.0,
            master_seed: 1,
        })
        .unwrap();
        let grid = BoxGrid::new(w, vec![1024], false).unwrap();
        (sys, ens, grid)
    }

    fn hand_record(grid: &Arc<BoxGrid>, a_range: (f64, f64), u_range: (f64, f64)) -> AttractorRecord {
        let boxes_in = |lo: f64, hi: f64| {
            let mut s = BoxSet::empty(grid);
            for b in 0..grid.interior_count() {
                let c = grid.center(b)[0];
                if c >= lo && c <= hi {
                    s.insert(b);
                }
            }
            s
        };
        AttractorRecord {
            id: 0,
            seed_desc: "hand".into(),
            pre_attractor: RandomBoxSet::uniform(boxes_in(u_range.0, u_range.1)),
            attractor: RandomBoxSet::uniform(boxes_in(a_range.0, a_range.1)),
            repeller: RandomBoxSet::uniform(BoxSet::empty(grid)),
            basin: RandomBoxSet::uniform(grid.full_set()),
            forward_invariant: true,
            omega_inside_interior: None,
        }
    }

    #[test]
    fn entrance_time_matches_closed_form() {
        let (sys, ens, grid) = well_setup();
        let record = hand_record(&grid, (0.95, 1.05), (0.8, 1.2));
        let scan = ScanParams {
            t_max: 30.0,
            dt_scan: 0.01,
        };
        let pair = record.view(0);
        // x in A: -inf; pick the box center nearest 1
        let a_center = grid.center(grid.locate(&[1.0]).unwrap());
        let r = entrance_time(&sys, ens.sample(0), &grid, &a_center, pair, scan).unwrap();
        assert_eq!(r.tau, Tau::NegInf);
        // x = 0.5: finite positive entrance; oracle = closed-form time to
        // the U set's lowest covered coordinate (its first box's left edge
        // snapped to the scan grid from above)
        let r = entrance_time(&sys, ens.sample(0), &grid, &[0.5], pair, scan).unwrap();
        let Tau::Finite(tau) = r.tau else {
            panic!("expected finite tau, got {:?}", r.tau)
        };
        let u_lo_box = pair.pre_attractor.iter().next().unwrap();
        // membership is tested at box centers' boxes: entry happens when the
        // trajectory reaches the U set's lowest box, i.e. its lower edge
        let edge = grid.lower_corner(u_lo_box)[0];
        let expected = well_travel_time(0.5, edge);
        assert!(
            (tau - expected).abs() <= scan.dt_scan + 1e-9,
            "tau {tau} vs closed form {expected}"
        );
        assert!(!r.truncated);
    }

    #[test]
    fn entrance_time_negative_inside_pre_attractor() {
        let (sys, ens, grid) = well_setup();
        let record = hand_record(&grid, (0.98, 1.02), (0.8, 1.2));
        let scan = ScanParams {
            t_max: 30.0,
            dt_scan: 0.01,
        };
        let pair = record.view(0);
        // x = 0.9 is in U \ A; it entered U when it crossed U's lower edge
        let r = entrance_time(&sys, ens.sample(0), &grid, &[0.9], pair, scan).unwrap();
        let Tau::Finite(tau) = r.tau else {
            panic!("expected finite tau, got {:?}", r.tau)
        };
        assert!(tau < 0.0, "tau should be negative, got {tau}");
        let u_lo_box = pair.pre_attractor.iter().next().unwrap();
        let edge = grid.lower_corner(u_lo_box)[0];
        let expected = -well_travel_time(edge, 0.9);
        assert!(
            (tau - expected).abs() <= 2.0 * scan.dt_scan + 1e-9,
            "tau {tau} vs closed form {expected}"
        );
    }

    #[test]
    fn entrance_time_truncation_flag() {
        let (sys, ens, grid) = well_setup();
        // U far on the left: a right-basin point never enters
        let record = hand_record(&grid, (-1.05, -0.95), (-1.2, -0.8));
        let scan = ScanParams {
            t_max: 5.0,
            dt_scan: 0.01,
        };
        let r = entrance_time(&sys, ens.sample(0), &grid, &[0.5], record.view(0), scan).unwrap();
        assert_eq!(r.tau, Tau::PosInf);
        assert!(r.truncated, "5s is not long enough; must be flagged");
    }

    #[test]
    fn shift_identity_residual_is_zero_on_grid() {
        let w = Window::new(vec![-2.0], vec![2.0]).unwrap();
        let sys = SystemDef::double_well(w.clone(), 0.1).unwrap();
        let ens = generate_ensemble(&EnsembleSpec {
            kind: NoiseKind::Wiener,
            count: 2,
            channels: 1,
            dt: 0.01,
            horizon: 80.0,
            master_seed: 9,
        })
        .unwrap();
        let grid = BoxGrid::new(w, vec![1024], false).unwrap();
        let record = hand_record(&grid, (0.95, 1.05), (0.8, 1.2));
        let scan = ScanParams {
            t_max: 30.0,
            dt_scan: 0.01,
        };
        for (x, t) in [(0.5, 0.25), (0.3, 1.0), (0.6, 0.01)] {
            let r = shift_identity_check(&sys, ens.sample(0), &grid, &[x], &record, 0, t, scan)
                .unwrap()
                .expect("both taus finite");
            assert!(r <= scan.dt_scan + 1e-9, "residual {r} at ({x}, {t})");
        }
        // t = 0 gives residual exactly 0
        let r = shift_identity_check(&sys, ens.sample(0), &grid, &[0.5], &record, 0, 0.0, scan)
            .unwrap()
            .unwrap();
        assert_eq!(r, 0.0);
        // stationary point: both taus are the same infinity
        let r = shift_identity_check(&sys, ens.sample(0), &grid, &[-0.0019], &record, 0, 1.0, scan)
            .unwrap();
        assert_eq!(r, Some(0.0));
    }

    #[test]
    fn complete_sum_trivials() {
        let w = Window::new(vec![0.0], vec![1.0]).unwrap();
        let grid = BoxGrid::new(w, vec![4], false).unwrap();
        let mk = |tau: f64| EntranceTimeField {
            record_id: 0,
            tau: vec![tau; 4],
            truncated_count: 0,
        };
        // all zeros
        let f = complete_lyapunov(&grid, 1, &[mk(f64::NEG_INFINITY), mk(f64::NEG_INFINITY)]).unwrap();
        assert_eq!(f.big_l_at(0, 0), 0.0);
        // l1 = 1, rest 0: L = 2/3
        let f = complete_lyapunov(&grid, 1, &[mk(f64::INFINITY), mk(f64::NEG_INFINITY)]).unwrap();
        assert_eq!(f.big_l_at(0, 0), 2.0 / 3.0);
        // all ones, N pairs: L = 1 - 3^-N
        let fields: Vec<_> = (0..6).map(|_| mk(f64::INFINITY)).collect();
        let f = complete_lyapunov(&grid, 1, &fields).unwrap();
        let expect: f64 = (1..=6).map(|n| 2.0 / 3f64.powi(n)).sum();
        assert_eq!(f.big_l_at(0, 0), expect);
        assert!((f.big_l_at(0, 0) - (1.0 - 3f64.powi(-6))).abs() < 1e-15);
    }

    #[test]
    fn critical_values_exact() {
        let c = CriticalValue::from_bits(&[true, false, true]);
        // 2/3 + 2/27 = 20/27
        assert_eq!(c.numerator, 20);
        assert_eq!(c.digits(), vec![2, 0, 2]);
        assert!((c.to_f64() - 20.0 / 27.0).abs() < 1e-15);
        let lo = CriticalValue::from_bits(&[false, true, true]); // 8/27
        assert!(lo < c);
        // digits always in {0, 2}
        for bits in 0..16u32 {
            let v: Vec<bool> = (0..4).map(|i| bits >> i & 1 == 1).collect();
            let c = CriticalValue::from_bits(&v);
            assert!(c.digits().iter().all(|&d| d == 0 || d == 2));
        }
    }
}
