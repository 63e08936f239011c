//! Random dynamical systems as numerical cocycles over noise paths.
//!
//! The integrator is a fixed-step explicit scheme with step equal to the
//! noise grid `dt`: classical RK4 for random ODEs whose randomness enters
//! through parameters or the drift (and for the autonomous case driven by
//! constant noise), Euler-Maruyama with the Stratonovich drift correction
//! when a diffusion term is active. Each step is a pure function of the
//! state and the stored noise values at the step's grid indices, so the
//! cocycle identity `evolve(s+t, w, x) = evolve(t, shift(w,s), evolve(s, w, x))`
//! holds bit-exactly on grid times.

use crate::error::{Error, Result};
use crate::expr::{self, Expr, VarTable};
use crate::grid::Window;
use crate::noise::{time_to_steps, NoiseKind, NoiseSample, PathView};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    /// `dx = (x - x^3) dt + sigma_n (x - x^3) o dW`. The multiplicative
    /// coupling vanishes at -1, 0, 1, so those points stay exactly
    /// stationary for every sample.
    DoubleWell,
    /// Lorenz vector field with parameters perturbed by bounded stationary
    /// noise: `sigma = 0.9 + 0.05 tanh(z1)`, `rho = 0.4 + 0.1 tanh(z2)`,
    /// `beta = 1 + 0.2 tanh(z3)` over independent OU channels, which keeps
    /// `rho < sigma <= 1` and `beta > 0` surely.
    RandomLorenz,
    /// Config-defined drift/diffusion expressions.
    Custom,
}

/// Definition of a random dynamical system on a compact window.
#[derive(Debug, Clone)]
pub struct SystemDef {
    pub kind: SystemKind,
    pub dim: usize,
    pub window: Window,
    /// Noise coupling strength for the double-well system.
    pub sigma_n: f64,
    drift: Vec<Expr>,
    diffusion: Vec<Expr>,
    param_values: Vec<f64>,
    param_names: Vec<String>,
    channels: usize,
}

pub fn lorenz_parameter_map(z: &[f64]) -> (f64, f64, f64) {
    (
        0.9 + 0.05 * z[0].tanh(),
        0.4 + 0.1 * z[1].tanh(),
        1.0 + 0.2 * z[2].tanh(),
    )
}

impl SystemDef {
    pub fn double_well(window: Window, sigma_n: f64) -> Result<Self> {
        if window.dim() != 1 {
            return Err(Error::InvalidArgument("double_well is one-dimensional".into()));
        }
        Ok(Self {
            kind: SystemKind::DoubleWell,
            dim: 1,
            window,
            sigma_n,
            drift: Vec::new(),
            diffusion: Vec::new(),
            param_values: Vec::new(),
            param_names: Vec::new(),
            channels: 1,
        })
    }

    pub fn random_lorenz(window: Window) -> Result<Self> {
        if window.dim() != 3 {
            return Err(Error::InvalidArgument("random_lorenz is three-dimensional".into()));
        }
        Ok(Self {
            kind: SystemKind::RandomLorenz,
            dim: 3,
            window,
            sigma_n: 0.0,
            drift: Vec::new(),
            diffusion: Vec::new(),
            param_values: Vec::new(),
            param_names: Vec::new(),
            channels: 3,
        })
    }

    /// Builds a system from drift/diffusion expression sources. Empty
    /// diffusion entries mean zero. The noise channel count is inferred
    /// from the highest noise variable referenced.
    pub fn custom(
        window: Window,
        drift_src: &[String],
        diffusion_src: &[String],
        params: Vec<(String, f64)>,
    ) -> Result<Self> {
        let dim = window.dim();
        if drift_src.len() != dim {
            return Err(Error::InvalidArgument(format!(
                "need {dim} drift expressions, got {}",
                drift_src.len()
            )));
        }
        if !diffusion_src.is_empty() && diffusion_src.len() != dim {
            return Err(Error::InvalidArgument(format!(
                "need 0 or {dim} diffusion expressions, got {}",
                diffusion_src.len()
            )));
        }
        let param_names: Vec<String> = params.iter().map(|(n, _)| n.clone()).collect();
        let param_values: Vec<f64> = params.iter().map(|(_, v)| *v).collect();
        // parse twice: once with a generous channel budget to discover usage
        let probe = VarTable::conventional(dim, 16, param_names.clone());
        let mut max_chan = 0usize;
        let mut parse_all = |srcs: &[String]| -> Result<Vec<Expr>> {
            srcs.iter()
                .map(|s| {
                    let e = expr::parse(s, &probe)?;
                    if let Some(c) = e.max_noise_channel() {
                        max_chan = max_chan.max(c + 1);
                    }
                    Ok(e)
                })
                .collect()
        };
        let drift = parse_all(drift_src)?;
        let diffusion = if diffusion_src.is_empty() {
            vec![Expr::Const(0.0); dim]
        } else {
            parse_all(diffusion_src)?
        };
        let channels = max_chan.max(1);
        let has_diffusion = diffusion.iter().any(|e| !e.is_zero());
        if has_diffusion && channels > 1 && channels != dim {
            return Err(Error::InvalidArgument(
                "multi-channel diffusion requires one channel per state dimension".into(),
            ));
        }
        Ok(Self {
            kind: SystemKind::Custom,
            dim,
            window,
            sigma_n: 0.0,
            drift,
            diffusion,
            param_values,
            param_names,
            channels,
        })
    }

    pub fn param_names(&self) -> &[String] {
        &self.param_names
    }

    /// Noise channels this system reads.
    pub fn required_channels(&self) -> usize {
        self.channels
    }

    /// True if the system has an active diffusion term (randomness multiplying
    /// Wiener increments rather than entering through parameters).
    pub fn has_diffusion(&self) -> bool {
        match self.kind {
            SystemKind::DoubleWell => self.sigma_n != 0.0,
            SystemKind::RandomLorenz => false,
            SystemKind::Custom => self.diffusion.iter().any(|e| !e.is_zero()),
        }
    }

    fn eval_drift(&self, x: &[f64], z: &[f64], out: &mut [f64]) {
        match self.kind {
            SystemKind::DoubleWell => {
                out[0] = x[0] - x[0] * x[0] * x[0];
            }
            SystemKind::RandomLorenz => {
                let (s, r, b) = lorenz_parameter_map(z);
                out[0] = s * (x[1] - x[0]);
                out[1] = r * x[0] - x[1] - x[0] * x[2];
                out[2] = x[0] * x[1] - b * x[2];
            }
            SystemKind::Custom => {
                for (j, e) in self.drift.iter().enumerate() {
                    out[j] = e.eval(x, z, &self.param_values);
                }
            }
        }
    }

    fn eval_diffusion(&self, x: &[f64], out: &mut [f64]) {
        match self.kind {
            SystemKind::DoubleWell => {
                out[0] = self.sigma_n * (x[0] - x[0] * x[0] * x[0]);
            }
            SystemKind::RandomLorenz => out.fill(0.0),
            SystemKind::Custom => {
                for (j, e) in self.diffusion.iter().enumerate() {
                    out[j] = e.eval(x, &[], &self.param_values);
                }
            }
        }
    }

    /// Noise channel driving state dimension `j` in a diffusion system.
    fn diffusion_channel(&self, j: usize) -> usize {
        if self.channels == 1 {
            0
        } else {
            j
        }
    }

    /// Ito correction for the Stratonovich interpretation:
    /// `0.5 * sum_k b_k d(b_j)/dx_k` over dimensions driven by the same channel.
    fn stratonovich_correction(&self, x: &[f64], out: &mut [f64]) {
        match self.kind {
            SystemKind::DoubleWell => {
                let b = self.sigma_n * (x[0] - x[0] * x[0] * x[0]);
                let db = self.sigma_n * (1.0 - 3.0 * x[0] * x[0]);
                out[0] = 0.5 * b * db;
            }
            SystemKind::RandomLorenz => out.fill(0.0),
            SystemKind::Custom => {
                let dim = self.dim;
                let mut b = vec![0.0; dim];
                self.eval_diffusion(x, &mut b);
                let mut xp = x.to_vec();
                for j in 0..dim {
                    let mut acc = 0.0;
                    for k in 0..dim {
                        if self.diffusion_channel(k) != self.diffusion_channel(j) {
                            continue;
                        }
                        let h = 1e-6 * x[k].abs().max(1.0);
                        xp[k] = x[k] + h;
                        let up = self.diffusion[j].eval(&xp, &[], &self.param_values);
                        xp[k] = x[k] - h;
                        let dn = self.diffusion[j].eval(&xp, &[], &self.param_values);
                        xp[k] = x[k];
                        acc += b[k] * (up - dn) / (2.0 * h);
                    }
                    out[j] = 0.5 * acc;
                }
            }
        }
    }
}

/// Quadratic-form upper bound on `d(x^2+y^2+z^2)/dt` along Lorenz orbits,
/// valid under `rho < sigma <= 1`, `beta > 0`; strictly negative off the
/// origin.
pub fn lorenz_dissipation_rate(state: &[f64], sigma: f64, rho: f64, beta: f64) -> Result<f64> {
    if !(rho < sigma && sigma <= 1.0 && beta > 0.0) {
        return Err(Error::ParameterConstraint(format!(
            "need rho < sigma <= 1 and beta > 0, got sigma={sigma}, rho={rho}, beta={beta}"
        )));
    }
    let (x, y, z) = (state[0], state[1], state[2]);
    Ok(-(sigma - rho) * x * x - (2.0 - rho - sigma) * y * y - 2.0 * beta * z * z)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scheme {
    Rk4,
    EmStratonovich,
}

/// A discrete time-grid trajectory of the cocycle.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Seed of the driving noise sample.
    pub sample_seed: u64,
}

/// The cocycle bound to one driving noise sample.
///
/// With `clamp` set (the compact-window mode), states leaving the window are
/// clamped onto it and the excursion is flagged; without it the integration
/// runs in free space and the caller owns exterior semantics.
pub struct Flow<'a> {
    system: &'a SystemDef,
    sample: &'a NoiseSample,
    clamp: bool,
    scheme: Scheme,
}

/// Outcome flags of a walk.
#[derive(Debug, Clone, Copy, Default)]
pub struct WalkFlags {
    /// Some intermediate state left the window (clamped mode only).
    pub exited: bool,
}

impl<'a> Flow<'a> {
    pub fn new(system: &'a SystemDef, sample: &'a NoiseSample) -> Result<Self> {
        if sample.channels() < system.required_channels() {
            return Err(Error::InvalidArgument(format!(
                "system needs {} noise channels, sample has {}",
                system.required_channels(),
                sample.channels()
            )));
        }
        let diffusion_active = system.has_diffusion() && sample.kind() == NoiseKind::Wiener;
        let scheme = if diffusion_active {
            Scheme::EmStratonovich
        } else {
            Scheme::Rk4
        };
        Ok(Self {
            system,
            sample,
            clamp: true,
            scheme,
        })
    }

    /// Free-space variant: no clamping; used with exterior-enabled grids.
    pub fn free_space(mut self) -> Self {
        self.clamp = false;
        self
    }

    pub fn sample(&self) -> &NoiseSample {
        self.sample
    }

    pub fn system(&self) -> &SystemDef {
        self.system
    }

    fn stepper(&self) -> Stepper<'_> {
        let dim = self.system.dim;
        Stepper {
            flow: self,
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            xt: vec![0.0; dim],
            corr: vec![0.0; dim],
            zbuf: vec![0.0; self.sample.channels() * 3],
        }
    }

    /// Reusable walker owning the integration scratch buffers. Prefer this
    /// over repeated [`walk`](Self::walk) calls in per-box loops.
    pub fn walker(&self) -> Walker<'_> {
        Walker {
            stepper: self.stepper(),
            x: vec![0.0; self.system.dim],
        }
    }

    /// Walks `steps` grid steps forward from local time 0, invoking `visit`
    /// after every step with the step index just reached and the state.
    /// Returning `false` from the visitor stops the walk early.
    pub fn walk<F: FnMut(i64, &[f64]) -> bool>(
        &self,
        x0: &[f64],
        steps: i64,
        visit: F,
    ) -> Result<WalkFlags> {
        self.walker().run(x0, steps, visit)
    }

    /// Walks backward: from local time 0 down to `-steps`, approximating the
    /// inverse flow. Exact order for RK4 systems; first-order approximate
    /// for diffusion systems (documented limitation).
    pub fn walk_backward<F: FnMut(i64, &[f64]) -> bool>(
        &self,
        x0: &[f64],
        steps: i64,
        visit: F,
    ) -> Result<WalkFlags> {
        self.walker().run_backward(x0, steps, visit)
    }

    /// The cocycle map `phi(t, w)x` for `t >= 0` on the grid.
    pub fn evolve(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        Ok(self.evolve_flagged(x, t)?.0)
    }

    /// As [`evolve`](Self::evolve), also reporting whether the trajectory
    /// left the window (clamped mode).
    pub fn evolve_flagged(&self, x: &[f64], t: f64) -> Result<(Vec<f64>, bool)> {
        let steps = time_to_steps(t, self.sample.dt())?;
        if steps < 0 {
            return Err(Error::InvalidArgument("evolve needs t >= 0".into()));
        }
        let mut out = x.to_vec();
        let flags = self.walk(x, steps, |_, s| {
            out.copy_from_slice(s);
            true
        })?;
        Ok((out, flags.exited))
    }

    /// The pullback expression `phi(t, shift(w, -t))x`.
    pub fn evolve_pullback(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let steps = time_to_steps(t, self.sample.dt())?;
        if steps < 0 {
            return Err(Error::InvalidArgument("evolve_pullback needs t >= 0".into()));
        }
        let shifted = self.sample.shift_steps(-steps)?;
        let flow = Flow {
            system: self.system,
            sample: &shifted,
            clamp: self.clamp,
            scheme: self.scheme,
        };
        flow.evolve(x, t)
    }

    /// Backward solve: approximate `phi(-t, w)x` for `t >= 0`.
    pub fn evolve_backward(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let steps = time_to_steps(t, self.sample.dt())?;
        if steps < 0 {
            return Err(Error::InvalidArgument("evolve_backward needs t >= 0".into()));
        }
        let mut out = x.to_vec();
        self.walk_backward(x, steps, |_, s| {
            out.copy_from_slice(s);
            true
        })?;
        Ok(out)
    }

    /// Records a trajectory sampled every `every` steps.
    pub fn trajectory(&self, x: &[f64], t: f64, every: i64) -> Result<Trajectory> {
        let dt = self.sample.dt();
        let steps = time_to_steps(t, dt)?;
        let mut times = vec![0.0];
        let mut states = vec![x.to_vec()];
        self.walk(x, steps, |i, s| {
            if i % every == 0 {
                times.push(i as f64 * dt);
                states.push(s.to_vec());
            }
            true
        })?;
        Ok(Trajectory {
            times,
            states,
            sample_seed: self.sample.seed(),
        })
    }

    /// Realized Lorenz parameters at a local grid step.
    pub fn lorenz_params_at(&self, local_step: i64) -> Result<(f64, f64, f64)> {
        let z: Vec<f64> = (0..3)
            .map(|c| self.sample.value(c, local_step))
            .collect::<Result<_>>()?;
        Ok(lorenz_parameter_map(&z))
    }

    /// Drift vector at state `x` and local grid step `i` (parameters read
    /// from the noise path).
    pub fn drift_at(&self, x: &[f64], local_step: i64) -> Result<Vec<f64>> {
        let z: Vec<f64> = (0..self.sample.channels())
            .map(|c| self.sample.value(c, local_step))
            .collect::<Result<_>>()?;
        let mut out = vec![0.0; self.system.dim];
        self.system.eval_drift(x, &z, &mut out);
        Ok(out)
    }
}

/// Owns integration scratch so repeated walks allocate nothing.
pub struct Walker<'a> {
    stepper: Stepper<'a>,
    x: Vec<f64>,
}

impl Walker<'_> {
    pub fn run<F: FnMut(i64, &[f64]) -> bool>(
        &mut self,
        x0: &[f64],
        steps: i64,
        mut visit: F,
    ) -> Result<WalkFlags> {
        let flow = self.stepper.flow;
        let view = flow.sample.view(0, steps)?;
        self.x.copy_from_slice(x0);
        let mut flags = WalkFlags::default();
        if flow.clamp && flow.system.window.clamp(&mut self.x) {
            flags.exited = true;
        }
        for i in 0..steps {
            self.stepper.step_forward(&mut self.x, i, &view)?;
            if flow.clamp && flow.system.window.clamp(&mut self.x) {
                flags.exited = true;
            }
            if !visit(i + 1, &self.x) {
                break;
            }
        }
        Ok(flags)
    }

    pub fn run_backward<F: FnMut(i64, &[f64]) -> bool>(
        &mut self,
        x0: &[f64],
        steps: i64,
        mut visit: F,
    ) -> Result<WalkFlags> {
        let flow = self.stepper.flow;
        let view = flow.sample.view(-steps, 0)?;
        self.x.copy_from_slice(x0);
        let mut flags = WalkFlags::default();
        if flow.clamp && flow.system.window.clamp(&mut self.x) {
            flags.exited = true;
        }
        for i in 0..steps {
            // stepping from local time -i down to -(i+1)
            self.stepper.step_backward(&mut self.x, -i - 1, &view)?;
            if flow.clamp && flow.system.window.clamp(&mut self.x) {
                flags.exited = true;
            }
            if !visit(-(i + 1), &self.x) {
                break;
            }
        }
        Ok(flags)
    }
}

struct Stepper<'a> {
    flow: &'a Flow<'a>,
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    xt: Vec<f64>,
    corr: Vec<f64>,
    zbuf: Vec<f64>,
}

impl Stepper<'_> {
    fn load_noise(&mut self, view: &PathView, i: i64) {
        let ch = self.flow.sample.channels();
        for c in 0..ch {
            let z0 = view.state(c, i);
            let z1 = view.state(c, i + 1);
            self.zbuf[c] = z0;
            self.zbuf[ch + c] = 0.5 * (z0 + z1);
            self.zbuf[2 * ch + c] = z1;
        }
    }

    fn check_finite(&self, x: &[f64], t: f64) -> Result<()> {
        for (j, v) in x.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Blowup { t, component: j });
            }
        }
        Ok(())
    }

    /// One forward step: local time `i` to `i+1`.
    fn step_forward(&mut self, x: &mut [f64], i: i64, view: &PathView) -> Result<()> {
        let dt = self.flow.sample.dt();
        let sys = self.flow.system;
        let ch = self.flow.sample.channels();
        match self.flow.scheme {
            Scheme::Rk4 => {
                self.load_noise(view, i);
                let (z0, zm, z1) = (
                    &self.zbuf[..ch],
                    &self.zbuf[ch..2 * ch],
                    &self.zbuf[2 * ch..],
                );
                sys.eval_drift(x, z0, &mut self.k1);
                for j in 0..sys.dim {
                    self.xt[j] = x[j] + 0.5 * dt * self.k1[j];
                }
                sys.eval_drift(&self.xt, zm, &mut self.k2);
                for j in 0..sys.dim {
                    self.xt[j] = x[j] + 0.5 * dt * self.k2[j];
                }
                sys.eval_drift(&self.xt, zm, &mut self.k3);
                for j in 0..sys.dim {
                    self.xt[j] = x[j] + dt * self.k3[j];
                }
                sys.eval_drift(&self.xt, z1, &mut self.k4);
                for j in 0..sys.dim {
                    x[j] += dt / 6.0 * (self.k1[j] + 2.0 * self.k2[j] + 2.0 * self.k3[j] + self.k4[j]);
                }
            }
            Scheme::EmStratonovich => {
                self.load_noise(view, i);
                let z0: Vec<f64> = self.zbuf[..ch].to_vec();
                sys.eval_drift(x, &z0, &mut self.k1);
                sys.eval_diffusion(x, &mut self.k2);
                sys.stratonovich_correction(x, &mut self.corr);
                for j in 0..sys.dim {
                    let dw = view.incr(sys.diffusion_channel(j), i);
                    x[j] += (self.k1[j] + self.corr[j]) * dt + self.k2[j] * dw;
                }
            }
        }
        self.check_finite(x, (i + 1) as f64 * dt)
    }

    /// One backward step: local time `i+1` down to `i`.
    fn step_backward(&mut self, x: &mut [f64], i: i64, view: &PathView) -> Result<()> {
        let dt = self.flow.sample.dt();
        let sys = self.flow.system;
        let ch = self.flow.sample.channels();
        match self.flow.scheme {
            Scheme::Rk4 => {
                self.load_noise(view, i);
                let (z0, zm, z1) = (
                    &self.zbuf[..ch],
                    &self.zbuf[ch..2 * ch],
                    &self.zbuf[2 * ch..],
                );
                // integrate the time-reversed field from i+1 to i
                sys.eval_drift(x, z1, &mut self.k1);
                for j in 0..sys.dim {
                    self.xt[j] = x[j] - 0.5 * dt * self.k1[j];
                }
                sys.eval_drift(&self.xt, zm, &mut self.k2);
                for j in 0..sys.dim {
                    self.xt[j] = x[j] - 0.5 * dt * self.k2[j];
                }
                sys.eval_drift(&self.xt, zm, &mut self.k3);
                for j in 0..sys.dim {
                    self.xt[j] = x[j] - dt * self.k3[j];
                }
                sys.eval_drift(&self.xt, z0, &mut self.k4);
                for j in 0..sys.dim {
                    x[j] -= dt / 6.0 * (self.k1[j] + 2.0 * self.k2[j] + 2.0 * self.k3[j] + self.k4[j]);
                }
            }
            Scheme::EmStratonovich => {
                // first-order approximate inverse of the forward step
                self.load_noise(view, i);
                let z1: Vec<f64> = self.zbuf[2 * ch..].to_vec();
                sys.eval_drift(x, &z1, &mut self.k1);
                sys.eval_diffusion(x, &mut self.k2);
                sys.stratonovich_correction(x, &mut self.corr);
                for j in 0..sys.dim {
                    let dw = view.incr(sys.diffusion_channel(j), i);
                    x[j] -= (self.k1[j] + self.corr[j]) * dt + self.k2[j] * dw;
                }
            }
        }
        self.check_finite(x, i as f64 * dt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{generate_ensemble, EnsembleSpec};

    fn well_window() -> Window {
        Window::new(vec![-2.0], vec![2.0]).unwrap()
    }

    fn ensemble(kind: NoiseKind, channels: usize, dt: f64, seed: u64) -> crate::noise::SampleEnsemble {
        generate_ensemble(&EnsembleSpec {
            kind,
            count: 4,
            channels,
            dt,
            horizon: 40.0,
            master_seed: seed,
        })
        .unwrap()
    }

    /// Closed-form solution of `x' = x - x^3`.
    fn double_well_exact(x0: f64, t: f64) -> f64 {
        let u0 = x0 * x0;
        let e = (2.0 * t).exp();
        let u = u0 * e / (1.0 - u0 + u0 * e);
        x0.signum() * u.sqrt()
    }

    #[test]
    fn stationary_points_are_exact() {
        let sys = SystemDef::double_well(well_window(), 0.1).unwrap();
        for kind in [NoiseKind::Constant, NoiseKind::Wiener] {
            let ens = ensemble(kind, 1, 0.01, 3);
            for s in ens.samples() {
                let flow = Flow::new(&sys, s).unwrap();
                for p in [-1.0, 0.0, 1.0] {
                    let y = flow.evolve(&[p], 5.0).unwrap();
                    assert!(
                        (y[0] - p).abs() < 1e-12,
                        "{p} moved to {} under {kind:?}",
                        y[0]
                    );
                }
            }
        }
    }

    #[test]
    fn evolve_t0_is_identity() {
        let sys = SystemDef::double_well(well_window(), 0.1).unwrap();
        let ens = ensemble(NoiseKind::Wiener, 1, 0.01, 9);
        let flow = Flow::new(&sys, ens.sample(0)).unwrap();
        assert_eq!(flow.evolve(&[0.37], 0.0).unwrap(), vec![0.37]);
    }

    #[test]
    fn double_well_matches_closed_form() {
        let sys = SystemDef::double_well(well_window(), 0.1).unwrap();
        let ens = ensemble(NoiseKind::Constant, 1, 1e-3, 1);
        let flow = Flow::new(&sys, ens.sample(0)).unwrap();
        // x = 0.5, t = 10 ends within 1e-6 of 1
        let y = flow.evolve(&[0.5], 10.0).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-6);
        // max error against the closed form along the way
        let mut worst: f64 = 0.0;
        flow.walk(&[0.5], 10_000, |i, s| {
            let t = i as f64 * 1e-3;
            worst = worst.max((s[0] - double_well_exact(0.5, t)).abs());
            true
        })
        .unwrap();
        assert!(worst < 1e-6, "max integrator error {worst}");
    }

    #[test]
    fn cocycle_identity_is_bit_exact() {
        let sys = SystemDef::double_well(well_window(), 0.1).unwrap();
        let ens = ensemble(NoiseKind::Wiener, 1, 0.01, 12);
        for s in ens.samples() {
            let flow = Flow::new(&sys, s).unwrap();
            for (a, b, x0) in [(1.0, 2.0, 0.5), (0.25, 0.75, -0.3), (3.0, 0.5, 1.4)] {
                let whole = flow.evolve(&[x0], a + b).unwrap();
                let mid = flow.evolve(&[x0], a).unwrap();
                let shifted = s.shift(a).unwrap();
                let flow2 = Flow::new(&sys, &shifted).unwrap();
                let composed = flow2.evolve(&mid, b).unwrap();
                assert_eq!(whole, composed, "cocycle identity broken at ({a},{b})");
            }
        }
    }

    #[test]
    fn pullback_equals_forward_for_constant_noise() {
        let sys = SystemDef::double_well(well_window(), 0.1).unwrap();
        let ens = ensemble(NoiseKind::Constant, 1, 0.01, 2);
        let flow = Flow::new(&sys, ens.sample(0)).unwrap();
        let a = flow.evolve(&[0.5], 3.0).unwrap();
        let b = flow.evolve_pullback(&[0.5], 3.0).unwrap();
        assert_eq!(a, b);
        assert_eq!(flow.evolve_pullback(&[0.5], 0.0).unwrap(), vec![0.5]);
    }

    #[test]
    fn pullback_converges_to_random_fixed_point() {
        let sys = SystemDef::double_well(well_window(), 0.1).unwrap();
        let ens = ensemble(NoiseKind::Wiener, 1, 0.01, 77);
        for s in ens.samples() {
            let flow = Flow::new(&sys, s).unwrap();
            // pullback limit from two different starts agree and sit near 1
            let a = flow.evolve_pullback(&[0.5], 30.0).unwrap();
            let b = flow.evolve_pullback(&[1.8], 30.0).unwrap();
            assert!((a[0] - b[0]).abs() < 1e-6, "pullback limits disagree");
            assert!((a[0] - 1.0).abs() < 0.5, "pullback limit far from 1: {}", a[0]);
        }
    }

    #[test]
    fn backward_inverts_forward_for_rk4() {
        let sys = SystemDef::double_well(well_window(), 0.0).unwrap();
        let ens = ensemble(NoiseKind::Constant, 1, 0.001, 4);
        let flow = Flow::new(&sys, ens.sample(0)).unwrap();
        let fwd = flow.evolve(&[0.5], 2.0).unwrap();
        // phi(-t, shift(w, t)) inverts phi(t, w)
        let shifted = ens.sample(0).shift(2.0).unwrap();
        let back = Flow::new(&sys, &shifted)
            .unwrap()
            .evolve_backward(&fwd, 2.0)
            .unwrap();
        assert!((back[0] - 0.5).abs() < 1e-9, "got {}", back[0]);
    }

    #[test]
    fn lorenz_parameters_stay_in_range() {
        let w = Window::new(vec![-3.0; 3], vec![3.0; 3]).unwrap();
        let sys = SystemDef::random_lorenz(w).unwrap();
        let ens = ensemble(NoiseKind::Ou, 3, 0.02, 21);
        for s in ens.samples() {
            let flow = Flow::new(&sys, s).unwrap();
            for step in -500..500 {
                let (sig, rho, beta) = flow.lorenz_params_at(step).unwrap();
                assert!(rho < sig && sig <= 1.0 && beta > 0.0);
            }
        }
    }

    #[test]
    fn lorenz_radius_is_nonincreasing() {
        let w = Window::new(vec![-3.0; 3], vec![3.0; 3]).unwrap();
        let sys = SystemDef::random_lorenz(w).unwrap();
        let ens = ensemble(NoiseKind::Ou, 3, 0.02, 8);
        let flow = Flow::new(&sys, ens.sample(0)).unwrap().free_space();
        let mut prev = 27.0f64; // V at the corner (3,3,3)
        flow.walk(&[3.0, 3.0, 3.0], 500, |_, s| {
            let v = s.iter().map(|a| a * a).sum::<f64>();
            let tol = 10.0 * 0.02f64.powi(4) * (1.0 + prev);
            assert!(v <= prev + tol, "V increased: {prev} -> {v}");
            prev = v;
            true
        })
        .unwrap();
        assert!(prev < 1.0, "V should have contracted, still {prev}");
    }

    #[test]
    fn dissipation_bound_dominates_chain_rule() {
        use rand::{Rng, SeedableRng};
        let w = Window::new(vec![-3.0; 3], vec![3.0; 3]).unwrap();
        let sys = SystemDef::random_lorenz(w).unwrap();
        let ens = ensemble(NoiseKind::Ou, 3, 0.02, 13);
        let flow = Flow::new(&sys, ens.sample(0)).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let step = rng.random_range(-100..100);
            let (sig, rho, beta) = flow.lorenz_params_at(step).unwrap();
            let bound = lorenz_dissipation_rate(&x, sig, rho, beta).unwrap();
            let f = flow.drift_at(&x, step).unwrap();
            let exact = 2.0 * (x[0] * f[0] + x[1] * f[1] + x[2] * f[2]);
            assert!(
                bound >= exact - 1e-12,
                "bound {bound} fails to dominate exact {exact}"
            );
        }
    }

    #[test]
    fn dissipation_rate_values() {
        assert_eq!(lorenz_dissipation_rate(&[0.0; 3], 1.0, 0.5, 1.0).unwrap(), 0.0);
        assert_eq!(
            lorenz_dissipation_rate(&[1.0, 0.0, 0.0], 1.0, 0.5, 1.0).unwrap(),
            -0.5
        );
        assert!(lorenz_dissipation_rate(&[1.0; 3], 0.5, 0.9, 1.0).is_err());
    }

    #[test]
    fn custom_system_via_expressions() {
        let w = Window::new(vec![-2.0], vec![2.0]).unwrap();
        let sys = SystemDef::custom(
            w,
            &["a*x - x^3".to_string()],
            &[],
            vec![("a".to_string(), 1.0)],
        )
        .unwrap();
        let ens = ensemble(NoiseKind::Constant, 1, 1e-3, 5);
        let flow = Flow::new(&sys, ens.sample(0)).unwrap();
        let y = flow.evolve(&[0.5], 10.0).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-6, "custom pitchfork: {}", y[0]);
    }

    #[test]
    fn blowup_is_reported() {
        let w = Window::new(vec![-2.0], vec![2.0]).unwrap();
        let sys = SystemDef::custom(w, &["x^3".to_string()], &[], vec![]).unwrap();
        let ens = ensemble(NoiseKind::Constant, 1, 0.1, 5);
        let flow = Flow::new(&sys, ens.sample(0)).unwrap().free_space();
        let err = flow.evolve(&[5.0], 30.0).unwrap_err();
        assert!(matches!(err, Error::Blowup { .. }), "{err}");
    }

    #[test]
    fn clamped_walk_flags_excursions() {
        let w = Window::new(vec![-1.0], vec![1.0]).unwrap();
        let sys = SystemDef::custom(w, &["1".to_string()], &[], vec![]).unwrap();
        let ens = ensemble(NoiseKind::Constant, 1, 0.1, 5);
        let flow = Flow::new(&sys, ens.sample(0)).unwrap();
        let (y, exited) = flow.evolve_flagged(&[0.9], 5.0).unwrap();
        assert!(exited);
        assert_eq!(y[0], 1.0);
    }
}
