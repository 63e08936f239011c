//! Uniform box discretization of a compact window.
//!
//! Boxes are half-open `[lo, hi)` on every axis except the top face of the
//! window, which is closed, so the boxes partition the window exactly.
//! Box membership is integral: all set operations are exact bit operations,
//! and inflation radii are measured in whole boxes (sup metric), quantized
//! upward so an inflated set never misses anything within the requested
//! radius.
//!
//! An optional symbolic EXTERIOR box stands for the complement of the
//! window; it has no geometry and is used by noncompact-mode box maps as a
//! sink for trajectories that leave the window.

use crate::error::{Error, Result};
use crate::util::fnv1a64;
use std::sync::Arc;

/// Axis-aligned compact box in state space.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Window {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::InvalidArgument(
                "window bounds must be nonempty and of equal dimension".into(),
            ));
        }
        for (a, (&l, &h)) in lo.iter().zip(&hi).enumerate() {
            if !(h - l).is_finite() || h <= l {
                return Err(Error::InvalidArgument(format!(
                    "window axis {a} must have positive finite extent (got [{l}, {h}])"
                )));
            }
        }
        Ok(Self { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(&v, (&l, &h))| v >= l && v <= h)
    }

    /// Clamps `x` onto the window in place; returns true if any coordinate moved.
    pub fn clamp(&self, x: &mut [f64]) -> bool {
        let mut moved = false;
        for (v, (&l, &h)) in x.iter_mut().zip(self.lo.iter().zip(&self.hi)) {
            let c = v.clamp(l, h);
            if c != *v {
                *v = c;
                moved = true;
            }
        }
        moved
    }
}

/// Index of a box within its grid. The EXTERIOR box, when enabled, is the
/// last index (`grid.interior_count()`).
pub type BoxIdx = u32;

/// Uniform box covering of a window.
#[derive(Debug, Clone)]
pub struct BoxGrid {
    window: Window,
    divisions: Vec<u32>,
    widths: Vec<f64>,
    strides: Vec<u64>,
    interior_count: u32,
    exterior_enabled: bool,
    id: u64,
}

impl BoxGrid {
    pub fn new(window: Window, divisions: Vec<u32>, exterior_enabled: bool) -> Result<Arc<Self>> {
        if divisions.len() != window.dim() {
            return Err(Error::InvalidArgument(
                "divisions must match window dimension".into(),
            ));
        }
        if divisions.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument("divisions must be positive".into()));
        }
        let mut count: u64 = 1;
        for &d in &divisions {
            count = count.checked_mul(d as u64).ok_or_else(|| {
                Error::InvalidArgument("box count overflows".into())
            })?;
        }
        if count + 1 > u32::MAX as u64 {
            return Err(Error::InvalidArgument(format!(
                "grid too large: {count} boxes"
            )));
        }
        let widths: Vec<f64> = window
            .lo
            .iter()
            .zip(&window.hi)
            .zip(&divisions)
            .map(|((&l, &h), &d)| (h - l) / d as f64)
            .collect();
        // last axis fastest
        let dim = divisions.len();
        let mut strides = vec![1u64; dim];
        for a in (0..dim.saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * divisions[a + 1] as u64;
        }
        let mut tag = Vec::new();
        for &l in &window.lo {
            tag.extend_from_slice(&l.to_bits().to_le_bytes());
        }
        for &h in &window.hi {
            tag.extend_from_slice(&h.to_bits().to_le_bytes());
        }
        for &d in &divisions {
            tag.extend_from_slice(&d.to_le_bytes());
        }
        tag.push(exterior_enabled as u8);
        let id = fnv1a64(&tag);
        Ok(Arc::new(Self {
            window,
            divisions,
            widths,
            strides,
            interior_count: count as u32,
            exterior_enabled,
            id,
        }))
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn dim(&self) -> usize {
        self.divisions.len()
    }

    pub fn divisions(&self) -> &[u32] {
        &self.divisions
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    /// Number of geometric (interior) boxes.
    pub fn interior_count(&self) -> u32 {
        self.interior_count
    }

    /// Total box count including the EXTERIOR box when enabled.
    pub fn box_count(&self) -> u32 {
        self.interior_count + self.exterior_enabled as u32
    }

    pub fn exterior_enabled(&self) -> bool {
        self.exterior_enabled
    }

    /// Index of the EXTERIOR box, if enabled.
    pub fn exterior(&self) -> Option<BoxIdx> {
        self.exterior_enabled.then_some(self.interior_count)
    }

    pub fn is_exterior(&self, b: BoxIdx) -> bool {
        self.exterior_enabled && b == self.interior_count
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    fn axis_bound(&self, axis: usize, k: u32) -> f64 {
        self.window.lo[axis] + k as f64 * self.widths[axis]
    }

    fn locate_axis(&self, axis: usize, x: f64) -> Option<u32> {
        let lo = self.window.lo[axis];
        let hi = self.window.hi[axis];
        let div = self.divisions[axis];
        if !(x >= lo && x <= hi) {
            return None;
        }
        if x == hi {
            return Some(div - 1);
        }
        let mut k = (((x - lo) / self.widths[axis]).floor() as i64).clamp(0, div as i64 - 1);
        // fix toward the exact bound ladder so locate agrees with a linear
        // scan over lo + k*w at every representable point
        while k > 0 && x < self.axis_bound(axis, k as u32) {
            k -= 1;
        }
        while (k as u32) + 1 < div && x >= self.axis_bound(axis, k as u32 + 1) {
            k += 1;
        }
        Some(k as u32)
    }

    /// Returns the unique box containing `x`, the EXTERIOR box for
    /// out-of-window points when enabled, or an error otherwise.
    pub fn locate(&self, x: &[f64]) -> Result<BoxIdx> {
        debug_assert_eq!(x.len(), self.dim());
        let mut idx: u64 = 0;
        for (a, &v) in x.iter().enumerate() {
            match self.locate_axis(a, v) {
                Some(k) => idx += k as u64 * self.strides[a],
                None => {
                    return self
                        .exterior()
                        .ok_or_else(|| Error::OutOfWindow { point: x.to_vec() });
                }
            }
        }
        Ok(idx as BoxIdx)
    }

    /// Per-axis integer coordinates of an interior box.
    pub fn coords(&self, b: BoxIdx) -> Vec<u32> {
        debug_assert!(!self.is_exterior(b) && b < self.interior_count);
        let mut rem = b as u64;
        self.strides
            .iter()
            .map(|&s| {
                let k = rem / s;
                rem %= s;
                k as u32
            })
            .collect()
    }

    pub fn index_of_coords(&self, coords: &[u32]) -> BoxIdx {
        coords
            .iter()
            .zip(&self.strides)
            .map(|(&k, &s)| k as u64 * s)
            .sum::<u64>() as BoxIdx
    }

    /// Lower corner of an interior box.
    pub fn lower_corner(&self, b: BoxIdx) -> Vec<f64> {
        self.coords(b)
            .iter()
            .enumerate()
            .map(|(a, &k)| self.axis_bound(a, k))
            .collect()
    }

    /// Center point of an interior box.
    pub fn center(&self, b: BoxIdx) -> Vec<f64> {
        self.coords(b)
            .iter()
            .enumerate()
            .map(|(a, &k)| self.axis_bound(a, k) + 0.5 * self.widths[a])
            .collect()
    }

    /// Quantizes a sup-metric radius upward to whole boxes, per axis.
    pub fn quantize_radius(&self, eps: f64) -> Vec<u32> {
        self.widths
            .iter()
            .map(|&w| {
                if eps <= 0.0 {
                    0
                } else {
                    ((eps / w) - 1e-9).ceil().max(0.0) as u32
                }
            })
            .collect()
    }

    /// Sup-metric distance between two interior boxes, in whole boxes per axis.
    /// Returns the per-axis index gaps.
    pub fn box_gap(&self, a: BoxIdx, b: BoxIdx) -> Vec<u32> {
        let ca = self.coords(a);
        let cb = self.coords(b);
        ca.iter()
            .zip(&cb)
            .map(|(&x, &y)| x.abs_diff(y))
            .collect()
    }

    /// Visits every interior box within the given per-axis radii of `b`.
    pub fn for_each_in_block(&self, b: BoxIdx, radii: &[u32], mut visit: impl FnMut(BoxIdx)) {
        let coords = self.coords(b);
        let dim = self.dim();
        let mut lo = vec![0u32; dim];
        let mut hi = vec![0u32; dim];
        for a in 0..dim {
            lo[a] = coords[a].saturating_sub(radii[a]);
            hi[a] = (coords[a] + radii[a]).min(self.divisions[a] - 1);
        }
        let mut cur = lo.clone();
        loop {
            visit(self.index_of_coords(&cur));
            let mut a = dim;
            loop {
                if a == 0 {
                    return;
                }
                a -= 1;
                if cur[a] < hi[a] {
                    cur[a] += 1;
                    break;
                }
                cur[a] = lo[a];
            }
        }
    }

    /// True if the interior box touches the window boundary.
    pub fn on_boundary(&self, b: BoxIdx) -> bool {
        self.coords(b)
            .iter()
            .zip(&self.divisions)
            .any(|(&k, &d)| k == 0 || k + 1 == d)
    }

    /// Empty box set over this grid.
    pub fn empty_set(self: &Arc<Self>) -> BoxSet {
        BoxSet::empty(self)
    }

    /// Box set containing every box (including EXTERIOR when enabled).
    pub fn full_set(self: &Arc<Self>) -> BoxSet {
        let mut s = BoxSet::empty(self);
        for b in 0..self.box_count() {
            s.insert(b);
        }
        s
    }
}

/// Set of boxes over a fixed grid, stored as a bit mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoxSet {
    grid_id: u64,
    len: u32,
    bits: Vec<u64>,
}

impl BoxSet {
    pub fn empty(grid: &BoxGrid) -> Self {
        let len = grid.box_count();
        Self {
            grid_id: grid.id(),
            len,
            bits: vec![0u64; (len as usize + 63) / 64],
        }
    }

    pub fn from_boxes(grid: &BoxGrid, boxes: impl IntoIterator<Item = BoxIdx>) -> Self {
        let mut s = Self::empty(grid);
        for b in boxes {
            s.insert(b);
        }
        s
    }

    pub fn grid_id(&self) -> u64 {
        self.grid_id
    }

    pub fn len(&self) -> u32 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&w| w == 0)
    }

    pub fn contains(&self, b: BoxIdx) -> bool {
        debug_assert!(b < self.len);
        self.bits[(b / 64) as usize] >> (b % 64) & 1 == 1
    }

    pub fn insert(&mut self, b: BoxIdx) {
        debug_assert!(b < self.len);
        self.bits[(b / 64) as usize] |= 1u64 << (b % 64);
    }

    pub fn remove(&mut self, b: BoxIdx) {
        debug_assert!(b < self.len);
        self.bits[(b / 64) as usize] &= !(1u64 << (b % 64));
    }

    pub fn count(&self) -> u32 {
        self.bits.iter().map(|w| w.count_ones()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = BoxIdx> + '_ {
        self.bits.iter().enumerate().flat_map(move |(wi, &w)| {
            let mut w = w;
            let mut out = Vec::with_capacity(w.count_ones() as usize);
            while w != 0 {
                let bit = w.trailing_zeros();
                out.push(wi as u32 * 64 + bit);
                w &= w - 1;
            }
            out
        })
    }

    fn check_same(&self, other: &Self) {
        assert_eq!(
            (self.grid_id, self.len),
            (other.grid_id, other.len),
            "box set operation across different grids"
        );
    }

    pub fn union(&self, other: &Self) -> Self {
        self.check_same(other);
        let bits = self
            .bits
            .iter()
            .zip(&other.bits)
            .map(|(a, b)| a | b)
            .collect();
        Self { bits, ..*self }
    }

    pub fn intersect(&self, other: &Self) -> Self {
        self.check_same(other);
        let bits = self
            .bits
            .iter()
            .zip(&other.bits)
            .map(|(a, b)| a & b)
            .collect();
        Self { bits, ..*self }
    }

    pub fn difference(&self, other: &Self) -> Self {
        self.check_same(other);
        let bits = self
            .bits
            .iter()
            .zip(&other.bits)
            .map(|(a, b)| a & !b)
            .collect();
        Self { bits, ..*self }
    }

    /// Complement relative to the full grid (including EXTERIOR when enabled).
    pub fn complement(&self) -> Self {
        let mut bits: Vec<u64> = self.bits.iter().map(|w| !w).collect();
        let tail = self.len as usize % 64;
        if tail != 0 {
            if let Some(last) = bits.last_mut() {
                *last &= (1u64 << tail) - 1;
            }
        }
        Self { bits, ..*self }
    }

    pub fn is_subset(&self, other: &Self) -> bool {
        self.check_same(other);
        self.bits.iter().zip(&other.bits).all(|(a, b)| a & !b == 0)
    }

    /// All boxes within sup-metric distance `eps` of the set. The radius is
    /// quantized upward to whole box widths per axis; `inflate(s, 0)` is the
    /// identity. The EXTERIOR box carries no geometry and passes through
    /// unchanged.
    pub fn inflate(&self, grid: &BoxGrid, eps: f64) -> Self {
        assert_eq!(self.grid_id, grid.id(), "inflate with foreign grid");
        let radii = grid.quantize_radius(eps);
        self.inflate_by_radii(grid, &radii)
    }

    pub fn inflate_by_radii(&self, grid: &BoxGrid, radii: &[u32]) -> Self {
        if radii.iter().all(|&r| r == 0) {
            return self.clone();
        }
        let mut out = self.clone();
        for b in self.iter() {
            if grid.is_exterior(b) {
                continue;
            }
            grid.for_each_in_block(b, radii, |nb| out.insert(nb));
        }
        out
    }

    /// Grid-level interior: boxes all of whose sup-metric 1-neighbors lie in
    /// the set. When the grid has an EXTERIOR box, window-boundary boxes
    /// count EXTERIOR among their neighbors, and EXTERIOR counts every
    /// boundary box.
    pub fn interior(&self, grid: &BoxGrid) -> Self {
        assert_eq!(self.grid_id, grid.id(), "interior with foreign grid");
        let ones = vec![1u32; grid.dim()];
        let mut out = BoxSet::empty(grid);
        for b in self.iter() {
            if grid.is_exterior(b) {
                let mut all_in = true;
                for ib in 0..grid.interior_count() {
                    if grid.on_boundary(ib) && !self.contains(ib) {
                        all_in = false;
                        break;
                    }
                }
                if all_in {
                    out.insert(b);
                }
                continue;
            }
            let mut all_in = true;
            grid.for_each_in_block(b, &ones, |nb| {
                if !self.contains(nb) {
                    all_in = false;
                }
            });
            if all_in && grid.exterior_enabled() && grid.on_boundary(b) {
                all_in = self.contains(grid.exterior().unwrap());
            }
            if all_in {
                out.insert(b);
            }
        }
        out
    }

    /// CSV export: `box,lower coords...,width...,member`.
    pub fn write_csv<W: std::io::Write>(&self, grid: &BoxGrid, w: &mut W) -> Result<()> {
        assert_eq!(self.grid_id, grid.id(), "csv export with foreign grid");
        let dim = grid.dim();
        write!(w, "box")?;
        for a in 0..dim {
            write!(w, ",lo{a}")?;
        }
        for a in 0..dim {
            write!(w, ",width{a}")?;
        }
        writeln!(w, ",member")?;
        for b in 0..grid.box_count() {
            if grid.is_exterior(b) {
                write!(w, "{b}")?;
                for _ in 0..2 * dim {
                    write!(w, ",")?;
                }
                writeln!(w, ",{}", self.contains(b) as u8)?;
                continue;
            }
            write!(w, "{b}")?;
            for v in grid.lower_corner(b) {
                write!(w, ",{}", crate::util::fmt_f64(v))?;
            }
            for &v in grid.widths() {
                write!(w, ",{}", crate::util::fmt_f64(v))?;
            }
            writeln!(w, ",{}", self.contains(b) as u8)?;
        }
        Ok(())
    }
}

/// One box set per noise sample: the computable stand-in for a random set.
///
/// A `Uniform` value models a set with no realized sample dependence (all
/// samples share one box set); `PerSample` carries one set per ensemble
/// member.
#[derive(Debug, Clone, PartialEq)]
pub enum RandomBoxSet {
    Uniform(BoxSet),
    PerSample(Vec<BoxSet>),
}

impl RandomBoxSet {
    pub fn uniform(set: BoxSet) -> Self {
        RandomBoxSet::Uniform(set)
    }

    pub fn per_sample(sets: Vec<BoxSet>) -> Result<Self> {
        if sets.is_empty() {
            return Err(Error::InvalidArgument("empty per-sample set list".into()));
        }
        let id = sets[0].grid_id();
        if sets.iter().any(|s| s.grid_id() != id) {
            return Err(Error::GridMismatch);
        }
        Ok(RandomBoxSet::PerSample(sets))
    }

    /// The box set realized for ensemble member `i`.
    pub fn for_sample(&self, i: usize) -> &BoxSet {
        match self {
            RandomBoxSet::Uniform(s) => s,
            RandomBoxSet::PerSample(v) => &v[i],
        }
    }

    pub fn grid_id(&self) -> u64 {
        match self {
            RandomBoxSet::Uniform(s) => s.grid_id(),
            RandomBoxSet::PerSample(v) => v[0].grid_id(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid1d(div: u32) -> Arc<BoxGrid> {
        BoxGrid::new(Window::new(vec![-2.0], vec![2.0]).unwrap(), vec![div], false).unwrap()
    }

    #[test]
    fn locate_boundary_conventions() {
        let g = grid1d(4);
        assert_eq!(g.locate(&[-2.0]).unwrap(), 0);
        assert_eq!(g.locate(&[0.0]).unwrap(), 2); // window center, lower-closed
        assert_eq!(g.locate(&[2.0]).unwrap(), 3); // top face closed
        assert!(g.locate(&[2.1]).is_err());
    }

    #[test]
    fn locate_center_roundtrip() {
        let g = BoxGrid::new(
            Window::new(vec![-2.0, 0.0], vec![2.0, 1.0]).unwrap(),
            vec![16, 8],
            false,
        )
        .unwrap();
        for b in 0..g.box_count() {
            assert_eq!(g.locate(&g.center(b)).unwrap(), b);
        }
    }

    /// Brute-force locate over the explicit bound ladder.
    fn locate_oracle(g: &BoxGrid, x: &[f64]) -> Option<BoxIdx> {
        let mut idx: u64 = 0;
        for a in 0..g.dim() {
            let (lo, hi, div) = (g.window().lo[a], g.window().hi[a], g.divisions()[a]);
            if !(x[a] >= lo && x[a] <= hi) {
                return None;
            }
            let mut found = None;
            for k in 0..div {
                let upper = lo + (k + 1) as f64 * g.widths()[a];
                if k == div - 1 || x[a] < upper {
                    found = Some(k);
                    break;
                }
            }
            idx += found.unwrap() as u64 * (0..g.dim())
                .skip(a + 1)
                .map(|b| g.divisions()[b] as u64)
                .product::<u64>();
        }
        Some(idx as BoxIdx)
    }

    #[test]
    fn locate_matches_linear_scan() {
        use rand::{Rng, SeedableRng};
        let g = BoxGrid::new(
            Window::new(vec![-2.0, -1.0], vec![2.0, 3.0]).unwrap(),
            vec![37, 11],
            false,
        )
        .unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(71);
        for _ in 0..100_000 {
            let x = [rng.random_range(-2.0..=2.0), rng.random_range(-1.0..=3.0)];
            assert_eq!(g.locate(&x).unwrap(), locate_oracle(&g, &x).unwrap());
        }
        // points exactly on bounds
        for k in 0..37u32 {
            let x = [-2.0 + k as f64 * g.widths()[0], 0.25];
            assert_eq!(g.locate(&x).unwrap(), locate_oracle(&g, &x).unwrap());
        }
    }

    #[test]
    fn exterior_box_catches_outside_points() {
        let g = BoxGrid::new(Window::new(vec![0.0], vec![1.0]).unwrap(), vec![8], true).unwrap();
        assert_eq!(g.locate(&[5.0]).unwrap(), g.exterior().unwrap());
        assert_eq!(g.box_count(), 9);
    }

    #[test]
    fn inflate_zero_is_identity_and_block_shape() {
        let g = BoxGrid::new(
            Window::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap(),
            vec![8, 8],
            false,
        )
        .unwrap();
        let b = g.locate(&[0.5, 0.5]).unwrap();
        let s = BoxSet::from_boxes(&g, [b]);
        assert_eq!(s.inflate(&g, 0.0), s);
        // one box width in sup metric -> 3^dim block in the interior
        let w = g.widths()[0];
        assert_eq!(s.inflate(&g, w).count(), 9);
    }

    #[test]
    fn inflate_matches_pairwise_distance_oracle() {
        use rand::{Rng, SeedableRng};
        let g = BoxGrid::new(
            Window::new(vec![0.0, 0.0], vec![1.0, 2.0]).unwrap(),
            vec![12, 9],
            false,
        )
        .unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let members: Vec<BoxIdx> = (0..g.box_count())
                .filter(|_| rng.random_bool(0.15))
                .collect();
            let s = BoxSet::from_boxes(&g, members.iter().copied());
            let eps = rng.random_range(0.0..0.4);
            let radii = g.quantize_radius(eps);
            let fast = s.inflate(&g, eps);
            // O(n^2) oracle: box is in the inflation iff within the quantized
            // per-axis radius of some member
            let mut slow = BoxSet::empty(&g);
            for b in 0..g.box_count() {
                for &m in &members {
                    let gap = g.box_gap(b, m);
                    if gap.iter().zip(&radii).all(|(&d, &r)| d <= r) {
                        slow.insert(b);
                        break;
                    }
                }
            }
            assert_eq!(fast, slow);
        }
    }

    #[test]
    fn inflate_is_monotone() {
        let g = grid1d(64);
        let s = BoxSet::from_boxes(&g, [10, 30]);
        let t = BoxSet::from_boxes(&g, [10, 30, 31]);
        let w = g.widths()[0];
        assert!(s.inflate(&g, 2.0 * w).is_subset(&t.inflate(&g, 2.0 * w)));
        assert!(s.inflate(&g, w).is_subset(&s.inflate(&g, 3.0 * w)));
    }

    #[test]
    fn set_algebra_identities() {
        use rand::{Rng, SeedableRng};
        let g = grid1d(130);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let a = BoxSet::from_boxes(&g, (0..130).filter(|_| rng.random_bool(0.4)));
            let b = BoxSet::from_boxes(&g, (0..130).filter(|_| rng.random_bool(0.4)));
            assert_eq!(a.complement().complement(), a);
            assert!(BoxSet::empty(&g).is_subset(&a));
            // De Morgan against an elementwise oracle
            let de_morgan = a.union(&b).complement();
            let mut oracle = BoxSet::empty(&g);
            for x in 0..130 {
                if !(a.contains(x) || b.contains(x)) {
                    oracle.insert(x);
                }
            }
            assert_eq!(de_morgan, oracle);
            assert_eq!(a.complement().intersect(&b.complement()), de_morgan);
        }
    }

    #[test]
    fn interior_drops_rim() {
        let g = grid1d(16);
        let s = BoxSet::from_boxes(&g, 4..=8);
        let int = s.interior(&g);
        assert_eq!(int, BoxSet::from_boxes(&g, 5..=7));
    }

    #[test]
    #[should_panic(expected = "different grids")]
    fn cross_grid_ops_panic() {
        let g1 = grid1d(8);
        let g2 = grid1d(16);
        let _ = BoxSet::empty(&g1).union(&BoxSet::empty(&g2));
    }
}
