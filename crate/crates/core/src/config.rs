//! Run configuration: INI-style sections of `key = value` pairs, typed
//! validation with line/key diagnostics, and the two built-in presets.
//!
//! Unknown keys are errors (they are almost always typos), all times must
//! be multiples of the noise `dt`, the epsilon sweep must be strictly
//! descending and the chain-time sweep strictly ascending.

use crate::boxmap::AggregationMode;
use crate::cocycle::SystemDef;
use crate::error::{Error, Result};
use crate::grid::{BoxGrid, Window};
use crate::noise::{time_to_steps, EnsembleSpec, NoiseKind};
use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

/// The shipped preset configurations. The files under `presets/` in the
/// repository root carry the same bytes (a test enforces it).
pub const DOUBLE_WELL_PRESET: &str = include_str!("presets/double-well.cfg");
pub const RANDOM_LORENZ_PRESET: &str = include_str!("presets/random-lorenz.cfg");

/// Resolves a preset name to its embedded config text.
pub fn preset(name: &str) -> Option<&'static str> {
    match name {
        "double-well" => Some(DOUBLE_WELL_PRESET),
        "random-lorenz" => Some(RANDOM_LORENZ_PRESET),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SystemConfig {
    DoubleWell { sigma_n: f64 },
    RandomLorenz,
    Custom {
        drift: Vec<String>,
        diffusion: Vec<String>,
        params: Vec<(String, f64)>,
    },
}

/// Fully validated run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub system: SystemConfig,
    pub window_low: Vec<f64>,
    pub window_high: Vec<f64>,
    pub divisions: Vec<u32>,
    pub exterior: bool,
    pub noise_kind: NoiseKind,
    pub sample_count: usize,
    pub dt: f64,
    pub horizon: f64,
    pub master_seed: u64,
    pub noise_dump: Option<PathBuf>,
    /// Inflation radii sweep, strictly descending (length units).
    pub eps_list: Vec<f64>,
    /// Chain step times, strictly ascending.
    pub t_list: Vec<f64>,
    pub points_per_box: usize,
    pub reentry_horizon: f64,
    pub aggregation: AggregationMode,
    pub point_seeds: usize,
    pub max_pairs: usize,
    pub pullback_depth: f64,
    pub t_max: f64,
    pub dt_scan: f64,
    pub n_points: usize,
    pub t_checks: Vec<f64>,
    pub delta_dec: f64,
    pub output_dir: PathBuf,
    pub threads: usize,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let raw = RawConfig::parse(text)?;
        Self::from_raw(raw)
    }

    pub fn build_system(&self) -> Result<SystemDef> {
        let window = Window::new(self.window_low.clone(), self.window_high.clone())?;
        match &self.system {
            SystemConfig::DoubleWell { sigma_n } => SystemDef::double_well(window, *sigma_n),
            SystemConfig::RandomLorenz => SystemDef::random_lorenz(window),
            SystemConfig::Custom {
                drift,
                diffusion,
                params,
            } => SystemDef::custom(window, drift, diffusion, params.clone()),
        }
    }

    pub fn build_grid(&self) -> Result<Arc<BoxGrid>> {
        let window = Window::new(self.window_low.clone(), self.window_high.clone())?;
        BoxGrid::new(window, self.divisions.clone(), self.exterior)
    }

    pub fn ensemble_spec(&self) -> Result<EnsembleSpec> {
        let system = self.build_system()?;
        Ok(EnsembleSpec {
            kind: self.noise_kind,
            count: self.sample_count,
            channels: system.required_channels(),
            dt: self.dt,
            horizon: self.horizon,
            master_seed: self.master_seed,
        })
    }

    fn from_raw(mut raw: RawConfig) -> Result<Self> {
        let kind = raw.take("system", "kind")?;
        let system = match kind.as_str() {
            "double_well" => SystemConfig::DoubleWell {
                sigma_n: raw.take_or("system", "sigma_n", 0.1)?,
            },
            "random_lorenz" => SystemConfig::RandomLorenz,
            "custom" => {
                let dim: usize = raw.take_parsed("system", "dim")?;
                let mut drift = Vec::with_capacity(dim);
                for i in 1..=dim {
                    drift.push(raw.take("system", &format!("drift_{i}"))?);
                }
                let mut diffusion = Vec::new();
                if raw.has("system", "diffusion_1") {
                    for i in 1..=dim {
                        diffusion.push(raw.take("system", &format!("diffusion_{i}"))?);
                    }
                }
                let params = raw.take_params("system")?;
                SystemConfig::Custom {
                    drift,
                    diffusion,
                    params,
                }
            }
            other => {
                return Err(raw.err("system", "kind", &format!("unknown system kind '{other}'")))
            }
        };
        let window_low = raw.take_f64_list("window", "low")?;
        let window_high = raw.take_f64_list("window", "high")?;
        let divisions: Vec<u32> = raw.take_u32_list("window", "divisions")?;
        let exterior = raw.take_bool_or("window", "exterior", false)?;
        if window_low.len() != window_high.len() || window_low.len() != divisions.len() {
            return Err(raw.err("window", "divisions", "low/high/divisions lengths differ"));
        }

        let noise_kind = match raw.take("ensemble", "kind")?.as_str() {
            "wiener" => NoiseKind::Wiener,
            "ou" => NoiseKind::Ou,
            "constant" => NoiseKind::Constant,
            other => {
                return Err(raw.err("ensemble", "kind", &format!("unknown noise kind '{other}'")))
            }
        };
        let sample_count: usize = raw.take_parsed("ensemble", "count")?;
        let dt: f64 = raw.take_parsed("ensemble", "dt")?;
        let horizon: f64 = raw.take_parsed("ensemble", "horizon")?;
        let master_seed: u64 = raw.take_parsed("ensemble", "master_seed")?;
        let noise_dump = raw.take_opt("ensemble", "dump")?.map(PathBuf::from);

        // epsilon in box widths or absolute lengths, mutually exclusive
        let eps_boxes = raw.take_opt("sweep", "epsilon_boxes")?;
        let eps_abs = raw.take_opt("sweep", "epsilon")?;
        let eps_list: Vec<f64> = match (eps_boxes, eps_abs) {
            (Some(bs), None) => {
                let widths: Vec<f64> = window_low
                    .iter()
                    .zip(&window_high)
                    .zip(&divisions)
                    .map(|((&l, &h), &d)| (h - l) / d as f64)
                    .collect();
                let wmax = widths.iter().cloned().fold(0.0, f64::max);
                parse_list::<f64>(&bs)
                    .map_err(|m| raw.err("sweep", "epsilon_boxes", &m))?
                    .into_iter()
                    .map(|k| k * wmax)
                    .collect()
            }
            (None, Some(es)) => {
                parse_list::<f64>(&es).map_err(|m| raw.err("sweep", "epsilon", &m))?
            }
            (Some(_), Some(_)) => {
                return Err(raw.err("sweep", "epsilon", "give epsilon or epsilon_boxes, not both"))
            }
            (None, None) => return Err(raw.err("sweep", "epsilon", "missing epsilon sweep")),
        };
        let t_list = raw.take_f64_list("sweep", "t_chain")?;
        let points_per_box: usize = raw.take_parsed("sweep", "points_per_box")?;
        let reentry_horizon: f64 = raw.take_or("sweep", "reentry_horizon", 0.0)?;

        let aggregation = match raw.take_or_str("aggregation", "mode", "all_samples")?.as_str() {
            "all_samples" => AggregationMode::AllSamples,
            "quantile" => AggregationMode::Quantile(raw.take_parsed("aggregation", "q")?),
            other => {
                return Err(raw.err("aggregation", "mode", &format!("unknown mode '{other}'")))
            }
        };
        let point_seeds: usize = raw.take_or("attractors", "point_seeds", 64.0)? as usize;
        let max_pairs: usize = raw.take_or("attractors", "max_pairs", 40.0)? as usize;

        let pullback_depth: f64 = raw.take_parsed("lyapunov", "pullback_depth")?;
        let t_max: f64 = raw.take_parsed("lyapunov", "t_max")?;
        let dt_scan: f64 = raw.take_or("lyapunov", "dt_scan", dt)?;

        let n_points: usize = raw.take_parsed("verify", "n_points")?;
        let t_checks = raw.take_f64_list("verify", "t_checks")?;
        let delta_dec: f64 = raw.take_or("verify", "delta_dec", 1e-9)?;

        let output_dir = PathBuf::from(raw.take_or_str("output", "dir", "out")?);
        let threads = raw.take_or("output", "threads", 0.0)? as usize;

        raw.finish()?;

        let cfg = Self {
            system,
            window_low,
            window_high,
            divisions,
            exterior,
            noise_kind,
            sample_count,
            dt,
            horizon,
            master_seed,
            noise_dump,
            eps_list,
            t_list,
            points_per_box,
            reentry_horizon,
            aggregation,
            point_seeds,
            max_pairs,
            pullback_depth,
            t_max,
            dt_scan,
            n_points,
            t_checks,
            delta_dec,
            output_dir,
            threads,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |loc: &str, msg: String| Error::Config {
            location: loc.into(),
            message: msg,
        };
        if self.sample_count == 0 {
            return Err(bad("[ensemble] count", "must be >= 1".into()));
        }
        if !(self.dt > 0.0) || !(self.horizon > 0.0) {
            return Err(bad("[ensemble]", "dt and horizon must be positive".into()));
        }
        if self.eps_list.is_empty() {
            return Err(bad("[sweep] epsilon", "sweep list must be nonempty".into()));
        }
        if !self.eps_list.windows(2).all(|w| w[0] > w[1]) {
            return Err(bad("[sweep] epsilon", "must be strictly descending".into()));
        }
        if self.eps_list.iter().any(|&e| e < 0.0) {
            return Err(bad("[sweep] epsilon", "must be nonnegative".into()));
        }
        if self.t_list.is_empty() {
            return Err(bad("[sweep] t_chain", "sweep list must be nonempty".into()));
        }
        if !self.t_list.windows(2).all(|w| w[0] < w[1]) {
            return Err(bad("[sweep] t_chain", "must be strictly ascending".into()));
        }
        if self.t_checks.is_empty() {
            return Err(bad("[verify] t_checks", "must be nonempty".into()));
        }
        if self.points_per_box == 0 {
            return Err(bad("[sweep] points_per_box", "must be >= 1".into()));
        }
        // all times on the dt grid
        let on_grid = |loc: &str, t: f64| -> Result<()> {
            if t < 0.0 {
                return Err(bad(loc, format!("{t} must be nonnegative")));
            }
            time_to_steps(t, self.dt).map_err(|_| bad(loc, format!("{t} is not a multiple of dt = {}", self.dt)))?;
            Ok(())
        };
        for &t in &self.t_list {
            on_grid("[sweep] t_chain", t)?;
            if t <= 0.0 {
                return Err(bad("[sweep] t_chain", "chain times must be positive".into()));
            }
        }
        for &t in &self.t_checks {
            on_grid("[verify] t_checks", t)?;
        }
        on_grid("[lyapunov] pullback_depth", self.pullback_depth)?;
        on_grid("[lyapunov] t_max", self.t_max)?;
        on_grid("[lyapunov] dt_scan", self.dt_scan)?;
        on_grid("[sweep] reentry_horizon", self.reentry_horizon)?;
        // t_checks must align with the scan grid so shifted scans stay exact
        for &t in &self.t_checks {
            if time_to_steps(t, self.dt_scan).is_err() {
                return Err(bad(
                    "[verify] t_checks",
                    format!("{t} is not a multiple of dt_scan = {}", self.dt_scan),
                ));
            }
        }
        // horizon budget: every walk must stay inside the stored two-sided path
        let t_check_max = self.t_checks.iter().cloned().fold(0.0, f64::max);
        let t_chain_max = self.t_list.last().copied().unwrap_or(0.0);
        let needed = (self.pullback_depth)
            .max(self.t_max + t_check_max)
            .max(t_chain_max + self.reentry_horizon);
        if self.horizon < needed {
            return Err(bad(
                "[ensemble] horizon",
                format!(
                    "horizon {} too small: pullback depth, scans and chain steps need at least {needed}",
                    self.horizon
                ),
            ));
        }
        Ok(())
    }
}

fn parse_list<T: std::str::FromStr>(s: &str) -> std::result::Result<Vec<T>, String> {
    s.split(',')
        .map(|p| p.trim())
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<T>().map_err(|_| format!("bad list entry '{p}'")))
        .collect()
}

/// Raw parsed key/value pairs with source lines, consumed by typed getters.
struct RawConfig {
    entries: HashMap<(String, String), (String, usize)>,
}

impl RawConfig {
    fn parse(text: &str) -> Result<Self> {
        let mut entries = HashMap::new();
        let mut section = String::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = match line.find('#') {
                Some(i) => &line[..i],
                None => line,
            };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| Error::Config {
                    location: format!("line {}", lineno + 1),
                    message: "unterminated section header".into(),
                })?;
                section = name.trim().to_string();
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config {
                    location: format!("line {}", lineno + 1),
                    message: format!("expected 'key = value', got '{line}'"),
                });
            };
            if section.is_empty() {
                return Err(Error::Config {
                    location: format!("line {}", lineno + 1),
                    message: "key outside of any [section]".into(),
                });
            }
            let prev = entries.insert(
                (section.clone(), key.trim().to_string()),
                (value.trim().to_string(), lineno + 1),
            );
            if prev.is_some() {
                return Err(Error::Config {
                    location: format!("line {}", lineno + 1),
                    message: format!("duplicate key '{}' in [{}]", key.trim(), section),
                });
            }
        }
        Ok(Self { entries })
    }

    fn err(&self, section: &str, key: &str, msg: &str) -> Error {
        Error::Config {
            location: format!("[{section}] {key}"),
            message: msg.to_string(),
        }
    }

    fn has(&self, section: &str, key: &str) -> bool {
        self.entries.contains_key(&(section.to_string(), key.to_string()))
    }

    fn take_opt(&mut self, section: &str, key: &str) -> Result<Option<String>> {
        Ok(self
            .entries
            .remove(&(section.to_string(), key.to_string()))
            .map(|(v, _)| v))
    }

    fn take(&mut self, section: &str, key: &str) -> Result<String> {
        self.take_opt(section, key)?
            .ok_or_else(|| self.err(section, key, "missing required key"))
    }

    fn take_parsed<T: std::str::FromStr>(&mut self, section: &str, key: &str) -> Result<T> {
        let v = self.take(section, key)?;
        v.parse::<T>()
            .map_err(|_| self.err(section, key, &format!("cannot parse '{v}'")))
    }

    fn take_or(&mut self, section: &str, key: &str, default: f64) -> Result<f64> {
        match self.take_opt(section, key)? {
            None => Ok(default),
            Some(v) => v
                .parse::<f64>()
                .map_err(|_| self.err(section, key, &format!("cannot parse '{v}'"))),
        }
    }

    fn take_or_str(&mut self, section: &str, key: &str, default: &str) -> Result<String> {
        Ok(self.take_opt(section, key)?.unwrap_or_else(|| default.to_string()))
    }

    fn take_bool_or(&mut self, section: &str, key: &str, default: bool) -> Result<bool> {
        match self.take_opt(section, key)?.as_deref() {
            None => Ok(default),
            Some("true") | Some("1") | Some("yes") => Ok(true),
            Some("false") | Some("0") | Some("no") => Ok(false),
            Some(v) => Err(self.err(section, key, &format!("expected a boolean, got '{v}'"))),
        }
    }

    fn take_f64_list(&mut self, section: &str, key: &str) -> Result<Vec<f64>> {
        let v = self.take(section, key)?;
        parse_list(&v).map_err(|m| self.err(section, key, &m))
    }

    fn take_u32_list(&mut self, section: &str, key: &str) -> Result<Vec<u32>> {
        let v = self.take(section, key)?;
        parse_list(&v).map_err(|m| self.err(section, key, &m))
    }

    /// All `param.NAME` keys in a section, sorted by name.
    fn take_params(&mut self, section: &str) -> Result<Vec<(String, f64)>> {
        let keys: Vec<String> = self
            .entries
            .keys()
            .filter(|(s, k)| s == section && k.starts_with("param."))
            .map(|(_, k)| k.clone())
            .collect();
        let mut out = Vec::with_capacity(keys.len());
        for k in keys {
            let v: f64 = self.take_parsed(section, &k)?;
            out.push((k.trim_start_matches("param.").to_string(), v));
        }
        out.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(out)
    }

    /// Rejects unconsumed keys (typos).
    fn finish(self) -> Result<()> {
        if let Some(((section, key), (_, line))) = self.entries.into_iter().next() {
            return Err(Error::Config {
                location: format!("line {line}"),
                message: format!("unknown key '{key}' in [{section}]"),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_and_validate() {
        let dw = RunConfig::parse(DOUBLE_WELL_PRESET).unwrap();
        assert_eq!(dw.divisions, vec![1024]);
        assert_eq!(dw.sample_count, 20);
        assert!(matches!(dw.system, SystemConfig::DoubleWell { sigma_n } if sigma_n == 0.1));
        assert!(!dw.exterior);
        // finest sweep point: eps = 2 box widths, T = 1
        let w = 4.0 / 1024.0;
        assert!((dw.eps_list.last().unwrap() - 2.0 * w).abs() < 1e-12);
        assert_eq!(*dw.t_list.last().unwrap(), 1.0);

        let lz = RunConfig::parse(RANDOM_LORENZ_PRESET).unwrap();
        assert_eq!(lz.divisions, vec![64, 64, 64]);
        assert_eq!(lz.sample_count, 10);
        assert!(lz.exterior);
        assert!(matches!(lz.system, SystemConfig::RandomLorenz));
        assert_eq!(lz.build_system().unwrap().required_channels(), 3);
    }

    #[test]
    fn rejects_bad_configs() {
        // empty sweep list
        let text = DOUBLE_WELL_PRESET.replace("epsilon_boxes = 8, 4, 2", "epsilon_boxes = ");
        assert!(RunConfig::parse(&text).is_err());
        // non-descending epsilon
        let text = DOUBLE_WELL_PRESET.replace("epsilon_boxes = 8, 4, 2", "epsilon_boxes = 2, 4");
        let e = RunConfig::parse(&text).unwrap_err().to_string();
        assert!(e.contains("descending"), "{e}");
        // time off the dt grid
        let text = DOUBLE_WELL_PRESET.replace("t_chain = 0.5, 1.0", "t_chain = 0.505, 1.0");
        let e = RunConfig::parse(&text).unwrap_err().to_string();
        assert!(e.contains("multiple of dt") || e.contains("t_chain"), "{e}");
        // unknown key reported with its line
        let text = format!("{DOUBLE_WELL_PRESET}\n[system]\nbogus = 1\n");
        let e = RunConfig::parse(&text).unwrap_err().to_string();
        assert!(e.contains("bogus"), "{e}");
        // duplicate key
        let text = format!("{DOUBLE_WELL_PRESET}\n[ensemble]\ncount = 5\n");
        assert!(RunConfig::parse(&text).is_err());
        // empty t_checks
        let text = DOUBLE_WELL_PRESET.replace("t_checks = 0.25, 0.5, 1.0", "t_checks = ");
        assert!(RunConfig::parse(&text).is_err());
        // horizon too small for the scans
        let text = DOUBLE_WELL_PRESET.replace("horizon = 64.0", "horizon = 4.0");
        let e = RunConfig::parse(&text).unwrap_err().to_string();
        assert!(e.contains("horizon"), "{e}");
    }

    #[test]
    fn custom_system_config() {
        let text = "
[system]
kind = custom
dim = 1
drift_1 = a*x - x^3
param.a = 1.0

[window]
low = -2.0
high = 2.0
divisions = 64

[ensemble]
kind = constant
count = 1
dt = 0.01
horizon = 32.0
master_seed = 1

[sweep]
epsilon_boxes = 1
t_chain = 0.5
points_per_box = 3

[lyapunov]
pullback_depth = 4.0
t_max = 10.0

[verify]
n_points = 10
t_checks = 0.5
";
        let cfg = RunConfig::parse(text).unwrap();
        let sys = cfg.build_system().unwrap();
        assert_eq!(sys.required_channels(), 1);
        assert!(!sys.has_diffusion());
    }
}
