//! Euler–Maruyama integration of the reduced `(r_z, φ)` dynamics on the unit
//! sphere and of the full coherence-vector dynamics.

use std::f64::consts::TAU;

use crate::entropy::EntropyIncrement;
use crate::error::{Error, Result};
use crate::model::{self, Bloch3, BlochState, ModelParams};
use crate::noise::{NoiseIncrement, NoiseSource};

/// Default distance from ±1 across which `r_z` is reflected.
pub const DEFAULT_REFLECTION_MARGIN: f64 = 1e-9;

/// How the σ_z coupling depends on time.
///
/// A quench holds `initial` only for the thermal preparation at t = 0; every
/// step of the evolution (t > 0) uses `dynamics`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaSchedule {
    Constant(f64),
    Quench { initial: f64, dynamics: f64 },
}

impl GammaSchedule {
    /// Coupling of the thermal state the evolution starts from.
    pub fn initial(&self) -> f64 {
        match *self {
            GammaSchedule::Constant(g) => g,
            GammaSchedule::Quench { initial, .. } => initial,
        }
    }

    /// Coupling governing a step that starts at `t`.
    pub fn at_step_start(&self, _t: f64) -> f64 {
        match *self {
            GammaSchedule::Constant(g) => g,
            GammaSchedule::Quench { dynamics, .. } => dynamics,
        }
    }
}

/// A step produced a NaN or infinity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonFinite {
    pub rz: f64,
    pub phi: f64,
}

impl NonFinite {
    pub fn into_error(self, traj: usize, step: usize) -> Error {
        Error::Integration {
            traj,
            step,
            reason: format!("non-finite state (rz = {}, phi = {})", self.rz, self.phi),
        }
    }
}

/// Result of one reduced step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stepped {
    pub state: BlochState,
    pub reflected: bool,
}

/// Mirror `rz` back inside `[-(1-margin), 1-margin]`.
#[inline]
pub fn reflect(mut rz: f64, margin: f64) -> (f64, bool) {
    let edge = 1.0 - margin;
    let mut reflected = false;
    // more than one pass only for absurd overshoots
    for _ in 0..4 {
        if rz > edge {
            rz = 2.0 * edge - rz;
        } else if rz < -edge {
            rz = -2.0 * edge - rz;
        } else {
            break;
        }
        reflected = true;
    }
    (rz, reflected)
}

/// One Euler–Maruyama step of the reduced dynamics, reflecting at `1 - margin`.
#[inline]
pub fn step_with_margin(
    s: &BlochState,
    w: &NoiseIncrement,
    dt: f64,
    p: &ModelParams,
    margin: f64,
) -> std::result::Result<Stepped, NonFinite> {
    let (x, l, g) = (p.beta_eps(), p.lambda(), p.gamma());
    let rz = s.rz;
    let one_minus = 1.0 - rz * rz;
    let rho = one_minus.sqrt();
    let (sin, cos) = s.phi.sin_cos();
    let transverse = cos * w.dw_x + sin * w.dw_y;
    let twisted = -sin * w.dw_x + cos * w.dw_y;
    let rz_new = rz + model::drift_z(rz, p) * dt - l * (x + 2.0 * rz) * rho * transverse
        + 2.0 * g * l * one_minus * w.dw_z;
    let phi_new = s.phi + 2.0 * p.epsilon() * dt + l * (x * rz + 2.0) / rho * twisted;
    if !(rz_new.is_finite() && phi_new.is_finite()) {
        return Err(NonFinite { rz: rz_new, phi: phi_new });
    }
    let (rz_new, reflected) = reflect(rz_new, margin);
    if rz_new.abs() > 1.0 - margin {
        return Err(NonFinite { rz: rz_new, phi: phi_new });
    }
    let mut phi_new = phi_new.rem_euclid(TAU);
    if phi_new >= TAU {
        phi_new = 0.0;
    }
    Ok(Stepped { state: BlochState { rz: rz_new, phi: phi_new }, reflected })
}

/// [`step_with_margin`] with the default reflection margin.
pub fn step(
    s: &BlochState,
    w: &NoiseIncrement,
    dt: f64,
    p: &ModelParams,
) -> std::result::Result<Stepped, NonFinite> {
    step_with_margin(s, w, dt, p, DEFAULT_REFLECTION_MARGIN)
}

/// One Euler–Maruyama step of the full coherence vector. No reflection: the
/// radius is left free so purity drift can be measured.
pub fn step_3d(
    s: &Bloch3,
    w: &NoiseIncrement,
    dt: f64,
    p: &ModelParams,
) -> std::result::Result<Bloch3, NonFinite> {
    let a = model::drift_3d(s, p);
    let b = model::noise_matrix_3d(s, p);
    let dw = w.as_array();
    let mut next = [s.rx, s.ry, s.rz];
    for i in 0..3 {
        next[i] += a[i] * dt + b[i][0] * dw[0] + b[i][1] * dw[1] + b[i][2] * dw[2];
    }
    if next.iter().any(|v| !v.is_finite()) {
        return Err(NonFinite { rz: next[2], phi: f64::NAN });
    }
    Ok(Bloch3 { rx: next[0], ry: next[1], rz: next[2] })
}

/// Number of steps covering `[0, t_max]`; `t_max` must be a multiple of `dt`.
pub fn step_count(t_max: f64, dt: f64) -> Result<usize> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt must be finite and > 0 (got {dt})")));
    }
    if !(t_max.is_finite() && t_max >= 0.0) {
        return Err(Error::InvalidParameter(format!("t_max must be finite and >= 0 (got {t_max})")));
    }
    let n = (t_max / dt).round();
    // division rounding allows a few ulps of slack in the ratio
    if (n - t_max / dt).abs() > 1e-9 * n.max(1.0) {
        return Err(Error::InvalidParameter(format!("t_max = {t_max} is not a multiple of dt = {dt}")));
    }
    Ok(n as usize)
}

/// Recorded path of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<BlochState>,
    pub reflections: u64,
    /// Per-step entropy increments, when entropy accounting was attached.
    pub increments: Option<Vec<EntropyIncrement>>,
}

/// Coupling cache so the schedule is consulted every step without
/// revalidating parameters each time.
#[derive(Debug, Clone)]
pub(crate) struct ScheduledParams {
    base: ModelParams,
    schedule: GammaSchedule,
    current: ModelParams,
}

impl ScheduledParams {
    pub(crate) fn new(base: &ModelParams, schedule: GammaSchedule) -> Result<Self> {
        let current = base.with_gamma(schedule.at_step_start(0.0))?;
        base.with_gamma(schedule.initial())?;
        Ok(Self { base: *base, schedule, current })
    }

    #[inline]
    pub(crate) fn at(&mut self, t: f64) -> Result<&ModelParams> {
        let g = self.schedule.at_step_start(t);
        if g != self.current.gamma() {
            self.current = self.base.with_gamma(g)?;
        }
        Ok(&self.current)
    }
}

/// Integrate one reduced trajectory from `initial`.
pub fn simulate<N: NoiseSource>(
    initial: BlochState,
    schedule: GammaSchedule,
    params: &ModelParams,
    t_max: f64,
    dt: f64,
    noise: &mut N,
) -> Result<Trajectory> {
    simulate_with_margin(initial, schedule, params, t_max, dt, noise, DEFAULT_REFLECTION_MARGIN, 0)
}

#[allow(clippy::too_many_arguments)]
pub fn simulate_with_margin<N: NoiseSource>(
    initial: BlochState,
    schedule: GammaSchedule,
    params: &ModelParams,
    t_max: f64,
    dt: f64,
    noise: &mut N,
    margin: f64,
    traj: usize,
) -> Result<Trajectory> {
    let n = step_count(t_max, dt)?;
    let mut sp = ScheduledParams::new(params, schedule)?;
    let mut times = Vec::with_capacity(n + 1);
    let mut states = Vec::with_capacity(n + 1);
    times.push(0.0);
    states.push(initial);
    let mut reflections = 0;
    let mut s = initial;
    for k in 0..n {
        let t = k as f64 * dt;
        let p = sp.at(t)?;
        let w = noise.increment(dt);
        let out = step_with_margin(&s, &w, dt, p, margin).map_err(|e| e.into_error(traj, k))?;
        reflections += out.reflected as u64;
        s = out.state;
        times.push((k + 1) as f64 * dt);
        states.push(s);
    }
    Ok(Trajectory { times, states, reflections, increments: None })
}

/// Integrate the full coherence vector, returning the state at every step.
pub fn simulate_3d<N: NoiseSource>(
    initial: Bloch3,
    schedule: GammaSchedule,
    params: &ModelParams,
    t_max: f64,
    dt: f64,
    noise: &mut N,
) -> Result<Vec<Bloch3>> {
    let n = step_count(t_max, dt)?;
    let mut sp = ScheduledParams::new(params, schedule)?;
    let mut out = Vec::with_capacity(n + 1);
    out.push(initial);
    let mut s = initial;
    for k in 0..n {
        let p = sp.at(k as f64 * dt)?;
        let w = noise.increment(dt);
        s = step_3d(&s, &w, dt, p).map_err(|e| e.into_error(0, k))?;
        out.push(s);
    }
    Ok(out)
}
