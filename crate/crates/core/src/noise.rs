//! The base space of the random system: discretized two-sided noise paths
//! and the measure-preserving time shift acting on them.
//!
//! Paths are pre-generated on a uniform grid over `[-horizon, +horizon]`.
//! The shift is an index offset restricted to multiples of `dt`, so the
//! group property `shift(s) . shift(t) = shift(s+t)` holds bit-exactly and
//! integration over a shifted path reads exactly the same stored values as
//! the corresponding tail of the unshifted one. Shifting past the stored
//! range is an error, never a wraparound.

use crate::error::{Error, Result};
use crate::util::derive_seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::collections::HashSet;
use std::io::{Read, Write};
use std::sync::Arc;

/// Magic string for the binary ensemble dump format.
pub const DUMP_MAGIC: &[u8; 5] = b"RDSN1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// Two-sided Wiener path; integrators read its increments.
    Wiener,
    /// Stationary Ornstein-Uhlenbeck state (unit variance, unit rate),
    /// generated by the exact transition so stationarity holds at every
    /// grid time.
    Ou,
    /// Identically zero; the autonomous case.
    Constant,
}

impl NoiseKind {
    fn code(self) -> u8 {
        match self {
            NoiseKind::Wiener => 0,
            NoiseKind::Ou => 1,
            NoiseKind::Constant => 2,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        Ok(match c {
            0 => NoiseKind::Wiener,
            1 => NoiseKind::Ou,
            2 => NoiseKind::Constant,
            _ => return Err(Error::BadFormat(format!("unknown noise kind {c}"))),
        })
    }
}

/// One realized driving-noise path: a single point of the base space.
///
/// `values` covers grid times `[-horizon, +horizon]` at resolution `dt`,
/// time-major with `channels` values per grid time. Shifted samples share
/// the underlying buffer.
#[derive(Debug, Clone)]
pub struct NoiseSample {
    kind: NoiseKind,
    dt: f64,
    horizon: f64,
    seed: u64,
    channels: usize,
    half_steps: i64,
    offset: i64,
    values: Arc<Vec<f64>>,
}

/// Converts a time to a whole number of `dt` steps, rejecting off-grid times.
pub fn time_to_steps(t: f64, dt: f64) -> Result<i64> {
    let ratio = t / dt;
    let steps = ratio.round();
    if (ratio - steps).abs() > 1e-9 * ratio.abs().max(1.0) {
        return Err(Error::OffGridTime { t, dt });
    }
    Ok(steps as i64)
}

impl NoiseSample {
    fn generate(kind: NoiseKind, channels: usize, dt: f64, horizon: f64, seed: u64) -> Result<Self> {
        let half_steps = time_to_steps(horizon, dt)?;
        if half_steps <= 0 {
            return Err(Error::InvalidArgument("horizon must cover at least one step".into()));
        }
        let n_points = (2 * half_steps + 1) as usize;
        let mut values = vec![0.0f64; n_points * channels];
        match kind {
            NoiseKind::Constant => {}
            NoiseKind::Wiener => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let sd = dt.sqrt();
                // cumulative path, W(-horizon) = 0 per channel
                for i in 1..n_points {
                    for c in 0..channels {
                        let xi: f64 = rng.sample(StandardNormal);
                        values[i * channels + c] = values[(i - 1) * channels + c] + sd * xi;
                    }
                }
            }
            NoiseKind::Ou => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                // dz = -z dt + sqrt(2) dW, unit stationary variance; exact
                // one-step transition keeps every grid marginal N(0,1)
                let a = (-dt).exp();
                let s = (1.0 - a * a).sqrt();
                for c in 0..channels {
                    let z0: f64 = rng.sample(StandardNormal);
                    values[c] = z0;
                }
                for i in 1..n_points {
                    for c in 0..channels {
                        let xi: f64 = rng.sample(StandardNormal);
                        values[i * channels + c] = a * values[(i - 1) * channels + c] + s * xi;
                    }
                }
            }
        }
        Ok(Self {
            kind,
            dt,
            horizon,
            seed,
            channels,
            half_steps,
            offset: 0,
            values: Arc::new(values),
        })
    }

    pub fn kind(&self) -> NoiseKind {
        self.kind
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Current shift of this sample, in steps of `dt`.
    pub fn offset_steps(&self) -> i64 {
        self.offset
    }

    /// The measure-preserving shift: local time `s` of the result reads the
    /// underlying path at `s + t`. `t` must be a multiple of `dt` and the
    /// shifted origin must stay inside the stored range.
    pub fn shift(&self, t: f64) -> Result<Self> {
        let steps = time_to_steps(t, self.dt)?;
        self.shift_steps(steps)
    }

    pub fn shift_steps(&self, steps: i64) -> Result<Self> {
        let offset = self.offset + steps;
        if offset.abs() > self.half_steps {
            return Err(Error::HorizonExhausted {
                requested: offset as f64 * self.dt,
                min: -self.horizon,
                max: self.horizon,
            });
        }
        Ok(Self {
            offset,
            values: Arc::clone(&self.values),
            ..*self
        })
    }

    fn underlying(&self, local_step: i64) -> Result<usize> {
        let idx = self.half_steps + self.offset + local_step;
        if idx < 0 || idx > 2 * self.half_steps {
            return Err(Error::HorizonExhausted {
                requested: (self.offset + local_step) as f64 * self.dt,
                min: -self.horizon,
                max: self.horizon,
            });
        }
        Ok(idx as usize)
    }

    /// Noise state at local grid step `i` (may be negative), channel `c`.
    pub fn value(&self, c: usize, local_step: i64) -> Result<f64> {
        let idx = self.underlying(local_step)?;
        Ok(self.values[idx * self.channels + c])
    }

    /// Increment between local steps `i` and `i+1`.
    pub fn increment(&self, c: usize, local_step: i64) -> Result<f64> {
        Ok(self.value(c, local_step + 1)? - self.value(c, local_step)?)
    }

    /// Validates the local step range `[lo, hi]` once and returns a view
    /// with unchecked access for hot loops.
    pub fn view(&self, lo: i64, hi: i64) -> Result<PathView<'_>> {
        self.underlying(lo)?;
        self.underlying(hi)?;
        let base = (self.half_steps + self.offset) as usize;
        Ok(PathView {
            values: &self.values,
            channels: self.channels,
            base,
        })
    }

    pub fn values_raw(&self) -> &[f64] {
        &self.values
    }
}

/// Range-checked-once window into a noise path.
#[derive(Clone, Copy)]
pub struct PathView<'a> {
    values: &'a [f64],
    channels: usize,
    base: usize,
}

impl PathView<'_> {
    #[inline]
    pub fn state(&self, c: usize, local_step: i64) -> f64 {
        let idx = (self.base as i64 + local_step) as usize;
        self.values[idx * self.channels + c]
    }

    #[inline]
    pub fn incr(&self, c: usize, local_step: i64) -> f64 {
        self.state(c, local_step + 1) - self.state(c, local_step)
    }
}

/// Parameters for ensemble generation.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSpec {
    pub kind: NoiseKind,
    pub count: usize,
    pub channels: usize,
    pub dt: f64,
    pub horizon: f64,
    pub master_seed: u64,
}

/// A finite family of independent noise paths: the computable surrogate for
/// almost-sure quantification over the base space.
#[derive(Debug, Clone)]
pub struct SampleEnsemble {
    spec: EnsembleSpec,
    samples: Vec<NoiseSample>,
}

impl SampleEnsemble {
    pub fn spec(&self) -> &EnsembleSpec {
        &self.spec
    }

    pub fn count(&self) -> usize {
        self.samples.len()
    }

    pub fn sample(&self, i: usize) -> &NoiseSample {
        &self.samples[i]
    }

    pub fn samples(&self) -> &[NoiseSample] {
        &self.samples
    }
}

/// Generates `count` mutually independent noise paths. Deterministic:
/// identical arguments produce bit-identical ensembles.
pub fn generate_ensemble(spec: &EnsembleSpec) -> Result<SampleEnsemble> {
    if spec.count == 0 {
        return Err(Error::InvalidArgument("ensemble count must be >= 1".into()));
    }
    if !(spec.dt > 0.0) || !(spec.horizon > 0.0) {
        return Err(Error::InvalidArgument("dt and horizon must be positive".into()));
    }
    if spec.channels == 0 {
        return Err(Error::InvalidArgument("channels must be >= 1".into()));
    }
    let mut seeder = ChaCha8Rng::seed_from_u64(derive_seed(spec.master_seed, "ensemble-seeds"));
    let mut seen = HashSet::new();
    let mut seeds = Vec::with_capacity(spec.count);
    while seeds.len() < spec.count {
        let s: u64 = seeder.random();
        if seen.insert(s) {
            seeds.push(s);
        }
    }
    let samples = seeds
        .into_iter()
        .map(|seed| NoiseSample::generate(spec.kind, spec.channels, spec.dt, spec.horizon, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(SampleEnsemble {
        spec: spec.clone(),
        samples,
    })
}

/// Writes the versioned binary dump (`RDSN1`): header with kind, channels,
/// dt, horizon, count and the per-sample seeds, then raw values. Samples are
/// dumped unshifted.
pub fn dump_ensemble<W: Write>(ens: &SampleEnsemble, w: &mut W) -> Result<()> {
    w.write_all(DUMP_MAGIC)?;
    w.write_all(&[ens.spec.kind.code()])?;
    w.write_all(&(ens.spec.channels as u32).to_le_bytes())?;
    w.write_all(&ens.spec.dt.to_le_bytes())?;
    w.write_all(&ens.spec.horizon.to_le_bytes())?;
    w.write_all(&(ens.samples.len() as u32).to_le_bytes())?;
    for s in &ens.samples {
        w.write_all(&s.seed.to_le_bytes())?;
    }
    for s in &ens.samples {
        w.write_all(&(s.values.len() as u64).to_le_bytes())?;
        for v in s.values.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_ensemble<R: Read>(r: &mut R) -> Result<SampleEnsemble> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != DUMP_MAGIC {
        return Err(Error::BadFormat("missing RDSN1 magic".into()));
    }
    let mut b1 = [0u8; 1];
    r.read_exact(&mut b1)?;
    let kind = NoiseKind::from_code(b1[0])?;
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let channels = u32::from_le_bytes(b4) as usize;
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let dt = f64::from_le_bytes(b8);
    r.read_exact(&mut b8)?;
    let horizon = f64::from_le_bytes(b8);
    r.read_exact(&mut b4)?;
    let count = u32::from_le_bytes(b4) as usize;
    let mut seeds = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut b8)?;
        seeds.push(u64::from_le_bytes(b8));
    }
    let half_steps = time_to_steps(horizon, dt)?;
    let mut samples = Vec::with_capacity(count);
    for seed in seeds {
        r.read_exact(&mut b8)?;
        let n = u64::from_le_bytes(b8) as usize;
        if n != (2 * half_steps + 1) as usize * channels {
            return Err(Error::BadFormat(format!("value block length {n} inconsistent with header")));
        }
        let mut values = vec![0.0f64; n];
        for v in values.iter_mut() {
            r.read_exact(&mut b8)?;
            *v = f64::from_le_bytes(b8);
        }
        samples.push(NoiseSample {
            kind,
            dt,
            horizon,
            seed,
            channels,
            half_steps,
            offset: 0,
            values: Arc::new(values),
        });
    }
    // master seed is not part of the dump; seeds are authoritative
    Ok(SampleEnsemble {
        spec: EnsembleSpec {
            kind,
            count,
            channels,
            dt,
            horizon,
            master_seed: 0,
        },
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: NoiseKind, count: usize, dt: f64, horizon: f64, seed: u64) -> EnsembleSpec {
        EnsembleSpec {
            kind,
            count,
            channels: 1,
            dt,
            horizon,
            master_seed: seed,
        }
    }

    #[test]
    fn constant_noise_is_zero() {
        let ens = generate_ensemble(&spec(NoiseKind::Constant, 3, 0.01, 10.0, 42)).unwrap();
        assert_eq!(ens.count(), 3);
        for s in ens.samples() {
            assert!(s.values_raw().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_ensemble(&spec(NoiseKind::Wiener, 1, 0.01, 10.0, 7)).unwrap();
        let b = generate_ensemble(&spec(NoiseKind::Wiener, 1, 0.01, 10.0, 7)).unwrap();
        assert_eq!(a.sample(0).values_raw(), b.sample(0).values_raw());
        assert_eq!(a.sample(0).seed(), b.sample(0).seed());
    }

    #[test]
    fn seeds_are_pairwise_distinct() {
        let ens = generate_ensemble(&spec(NoiseKind::Wiener, 64, 0.1, 1.0, 3)).unwrap();
        let mut seeds: Vec<u64> = ens.samples().iter().map(|s| s.seed()).collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), 64);
    }

    #[test]
    fn wiener_increment_variance_matches_dt() {
        // law-of-large-numbers check computed here, not frozen
        let dt = 0.01;
        let ens = generate_ensemble(&spec(NoiseKind::Wiener, 1000, dt, 1.0, 7)).unwrap();
        let mut incs = Vec::new();
        for s in ens.samples() {
            let n = s.values_raw().len() as i64;
            let half = (n - 1) / 2;
            for i in -half..half {
                incs.push(s.increment(0, i).unwrap());
            }
        }
        let n = incs.len() as f64;
        let mean = incs.iter().sum::<f64>() / n;
        let var = incs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!(
            (var - dt).abs() < 0.05 * dt,
            "variance {var} not within 5% of {dt}"
        );
    }

    #[test]
    fn ou_is_stationary_at_grid_times() {
        let ens = generate_ensemble(&spec(NoiseKind::Ou, 4000, 0.05, 1.0, 11)).unwrap();
        for &step in &[-20i64, 0, 13] {
            let vals: Vec<f64> = ens
                .samples()
                .iter()
                .map(|s| s.value(0, step).unwrap())
                .collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            assert!(mean.abs() < 0.08, "mean {mean} at step {step}");
            assert!((var - 1.0).abs() < 0.1, "variance {var} at step {step}");
        }
    }

    #[test]
    fn shift_group_property_is_exact() {
        let ens = generate_ensemble(&spec(NoiseKind::Wiener, 1, 0.25, 8.0, 5)).unwrap();
        let s = ens.sample(0);
        let a = s.shift(0.5).unwrap().shift(0.25).unwrap();
        let b = s.shift(0.75).unwrap();
        assert_eq!(a.offset_steps(), b.offset_steps());
        for i in -4..4 {
            assert_eq!(a.value(0, i).unwrap(), b.value(0, i).unwrap());
        }
        // identity and inverse
        let idn = s.shift(0.0).unwrap();
        assert_eq!(idn.offset_steps(), s.offset_steps());
        let back = s.shift(1.0).unwrap().shift(-1.0).unwrap();
        assert_eq!(back.offset_steps(), 0);
        assert_eq!(back.value(0, 3).unwrap(), s.value(0, 3).unwrap());
    }

    #[test]
    fn shift_past_horizon_errors() {
        let ens = generate_ensemble(&spec(NoiseKind::Constant, 1, 0.5, 2.0, 1)).unwrap();
        let s = ens.sample(0);
        assert!(s.shift(2.0).is_ok());
        assert!(matches!(
            s.shift(2.5),
            Err(Error::HorizonExhausted { .. })
        ));
        assert!(matches!(s.shift(0.3), Err(Error::OffGridTime { .. })));
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(generate_ensemble(&spec(NoiseKind::Wiener, 0, 0.1, 1.0, 1)).is_err());
        assert!(generate_ensemble(&spec(NoiseKind::Wiener, 1, 0.0, 1.0, 1)).is_err());
        assert!(generate_ensemble(&spec(NoiseKind::Wiener, 1, 0.1, -1.0, 1)).is_err());
    }

    #[test]
    fn dump_load_roundtrip() {
        let ens = generate_ensemble(&EnsembleSpec {
            kind: NoiseKind::Ou,
            count: 3,
            channels: 2,
            dt: 0.1,
            horizon: 2.0,
            master_seed: 99,
        })
        .unwrap();
        let mut buf = Vec::new();
        dump_ensemble(&ens, &mut buf).unwrap();
        assert_eq!(&buf[..5], DUMP_MAGIC);
        let back = load_ensemble(&mut buf.as_slice()).unwrap();
        assert_eq!(back.count(), 3);
        for i in 0..3 {
            assert_eq!(back.sample(i).values_raw(), ens.sample(i).values_raw());
            assert_eq!(back.sample(i).seed(), ens.sample(i).seed());
        }
    }
}
