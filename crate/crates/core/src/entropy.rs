//! Stochastic entropy production along trajectories.
//!
//! The environmental increment is the Itô functional of drift and diffusion
//! (eight terms per coordinate, split by time-reversal parity); the system
//! increment is −d ln p with p from the Fokker–Planck solution. Because
//! `D_zz` vanishes at r_z = ±1 while ∂p/∂r_z diverges there, the mean system
//! entropy picks up a boundary term `−[D_zz ∂p/∂r_z]` at ±1 that the
//! trajectory sums miss; it is supplied here as a constant rate.

use std::f64::consts::PI;

use crate::ensemble::{Observer, StepContext};
use crate::error::{Error, Result};
use crate::fokker_planck::{PdfGrid, PdfSnapshots, P_FLOOR};
use crate::model::{self, BlochState, ModelParams, StationaryPdf};

/// Entropy produced in one step (k_B = 1).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EntropyIncrement {
    pub ds_sys: f64,
    pub ds_env: f64,
    pub ds_tot: f64,
}

impl EntropyIncrement {
    pub fn new(ds_sys: f64, ds_env: f64) -> Self {
        Self { ds_sys, ds_env, ds_tot: ds_sys + ds_env }
    }
}

/// Running entropy account of one trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EntropyLedger {
    pub last: EntropyIncrement,
    pub cum_sys: f64,
    pub cum_env: f64,
    /// Constant rate added to ensemble means of the system entropy.
    pub boundary_correction_rate: f64,
}

impl EntropyLedger {
    pub fn new(boundary_correction_rate: f64) -> Self {
        Self { boundary_correction_rate, ..Default::default() }
    }

    pub fn push(&mut self, inc: EntropyIncrement) {
        self.last = inc;
        self.cum_sys += inc.ds_sys;
        self.cum_env += inc.ds_env;
    }

    pub fn cum_tot(&self) -> f64 {
        self.cum_sys + self.cum_env
    }
}

/// Ingredients of the environmental sum for one coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordinateTerms {
    pub a_irr: f64,
    pub a_rev: f64,
    /// ∂A^irr/∂x
    pub da_irr: f64,
    /// ∂A^rev/∂x
    pub da_rev: f64,
    /// D_ii
    pub diff: f64,
    /// ∂D_ii/∂x
    pub ddiff: f64,
    /// ∂²D_ii/∂x²
    pub d2diff: f64,
    /// Realized increment of the coordinate.
    pub dx: f64,
}

/// The eight terms for one coordinate, in order.
pub fn env_terms(c: &CoordinateTerms, dt: f64) -> Result<[f64; 8]> {
    if !(c.diff > 0.0) {
        return Err(Error::Domain(format!("diffusion coefficient {} is not positive", c.diff)));
    }
    let inv = 1.0 / c.diff;
    Ok([
        c.a_irr * inv * c.dx,
        -c.a_rev * c.a_irr * inv * dt,
        c.da_irr * dt,
        -c.da_rev * dt,
        -inv * c.ddiff * c.dx,
        (c.a_rev - c.a_irr) * inv * c.ddiff * dt,
        -c.d2diff * dt,
        inv * c.ddiff * c.ddiff * dt,
    ])
}

/// Coordinate terms for `(r_z, φ)` at `state` with realized increment `d_state`.
pub fn coordinate_terms(state: &BlochState, d_state: [f64; 2], p: &ModelParams) -> Result<[CoordinateTerms; 2]> {
    let split = model::drift_split(state, p);
    let [dzz, dpp] = model::diffusion(state, p)?;
    let der = model::diffusion_derivatives(state, p);
    if !(dzz > 0.0) {
        return Err(Error::Singular { rz: state.rz, limit: 1.0 - model::SINGULARITY_GUARD });
    }
    Ok([
        CoordinateTerms {
            a_irr: split.a_irr[0],
            a_rev: split.a_rev[0],
            da_irr: -4.0 * p.lambda_sq(),
            da_rev: 0.0,
            diff: dzz,
            ddiff: der.dzz,
            d2diff: der.d2zz,
            dx: d_state[0],
        },
        CoordinateTerms {
            a_irr: split.a_irr[1],
            a_rev: split.a_rev[1],
            da_irr: 0.0,
            da_rev: 0.0,
            diff: dpp,
            ddiff: der.dphiphi_dphi,
            d2diff: 0.0,
            dx: d_state[1],
        },
    ])
}

/// Environmental entropy of one step, summed over both coordinates.
pub fn env_increment(state: &BlochState, d_state: [f64; 2], dt: f64, p: &ModelParams) -> Result<f64> {
    let mut total = 0.0;
    for c in coordinate_terms(state, d_state, p)? {
        total += env_terms(&c, dt)?.iter().sum::<f64>();
    }
    Ok(total)
}

/// Realized `(Δr_z, Δφ)` between two states, with Δφ taken on the short arc.
pub fn realized_increment(prev: &BlochState, next: &BlochState) -> [f64; 2] {
    let mut dphi = next.phi - prev.phi;
    if dphi > PI {
        dphi -= 2.0 * PI;
    } else if dphi <= -PI {
        dphi += 2.0 * PI;
    }
    [next.rz - prev.rz, dphi]
}

/// −[ln p_next(r_next) − ln p_prev(r_prev)] with linear interpolation.
pub fn sys_increment(rz_prev: f64, rz_next: f64, p_prev: &PdfGrid, p_next: &PdfGrid) -> Result<f64> {
    Ok(-(p_next.log_pdf_at(rz_next)?.value - p_prev.log_pdf_at(rz_prev)?.value))
}

/// Boundary rate and the evidence behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryRate {
    pub rate: f64,
    /// `(h, −[D_zz p′] between ±(1−h))` for every cutoff tried.
    pub raw: Vec<(f64, f64)>,
    /// Richardson estimates from consecutive cutoffs.
    pub extrapolated: Vec<f64>,
}

/// −[D_zz ∂p/∂r_z] between ±(1−h) for the stationary density.
pub fn boundary_bracket(pdf: &StationaryPdf, p: &ModelParams, h: f64) -> f64 {
    let flux_part = |r: f64| model::diffusion_zz(r, p) * pdf.density(r) * pdf.d_ln_density(r);
    -(flux_part(1.0 - h) - flux_part(-1.0 + h))
}

/// Rate of the stationary boundary term in the mean system entropy, from the
/// endpoint limit of `D_zz ∂p_st/∂r_z`.
///
/// Cutoffs `h = 1e-2, 5e-3, 2.5e-3, …` are combined by first-order Richardson
/// extrapolation until two successive estimates agree within 0.5%.
pub fn boundary_correction_rate(p: &ModelParams) -> Result<BoundaryRate> {
    const REL_TOL: f64 = 5e-3;
    let pdf = StationaryPdf::new(p)?;
    let mut h = 1e-2;
    let mut raw = vec![(h, boundary_bracket(&pdf, p, h))];
    let mut extrapolated: Vec<f64> = Vec::new();
    for _ in 0..40 {
        h *= 0.5;
        let f = boundary_bracket(&pdf, p, h);
        if !f.is_finite() {
            break;
        }
        let prev = raw.last().expect("non-empty").1;
        raw.push((h, f));
        let r = 2.0 * f - prev;
        if let Some(&last) = extrapolated.last() {
            if (r - last).abs() <= REL_TOL * r.abs() {
                extrapolated.push(r);
                return Ok(BoundaryRate { rate: r, raw, extrapolated });
            }
        }
        extrapolated.push(r);
    }
    Err(Error::NumericalLimit(format!(
        "boundary rate estimates did not settle within 0.5%: last cutoffs {:?}, extrapolations {:?}",
        &raw[raw.len().saturating_sub(3)..],
        &extrapolated[extrapolated.len().saturating_sub(3)..]
    )))
}

/// Leading small-βε form of the boundary rate: −λ²(βε)²·2/Z(γ) with
/// Z(γ) = ∫ (γ² − (γ²−1) r²)⁻² dr; for γ = 1 this is −λ²(βε)².
///
/// The next correction is relative O((βε)²).
pub fn boundary_rate_series(p: &ModelParams) -> f64 {
    let x = p.beta_eps();
    let g = p.gamma();
    let z = if (g - 1.0).abs() <= 1e-8 {
        2.0
    } else {
        let b = (g * g - 1.0).sqrt();
        1.0 / (g * g) + ((g + b) / (g - b)).ln() / (2.0 * g.powi(3) * b)
    };
    -p.lambda_sq() * x * x * 2.0 / z
}

/// ∫ p_a ln(p_a/p_b) by the midpoint rule on a common grid.
pub fn kl_divergence(pa: &PdfGrid, pb: &PdfGrid) -> Result<f64> {
    pa.check_same_nodes(pb)?;
    let w = pa.cell_widths();
    let mut total = 0.0;
    for (i, (a, b)) in pa.values().iter().zip(pb.values()).enumerate() {
        if *a <= P_FLOOR {
            continue;
        }
        if *b <= P_FLOOR {
            return Err(Error::Divergence(format!("second density vanishes at node {i} where the first is {a}")));
        }
        total += w[i] * a * (a / b).ln();
    }
    Ok(total)
}

/// −∫ p ln p by the midpoint rule.
pub fn gibbs_entropy(p: &PdfGrid) -> f64 {
    -p.weighted_sum(|_, v| if v > P_FLOOR { v * v.ln() } else { 0.0 })
}

/// Least-squares slope of a cumulative channel over a window of steps,
/// accumulated on the fly as Σ w_k y_k.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeWindow {
    first: usize,
    last: usize,
    t_mean: f64,
    sxx: f64,
    dt: f64,
}

impl SlopeWindow {
    /// Steps whose end time lies in `[t0, t1]`.
    pub fn new(t0: f64, t1: f64, dt: f64) -> Result<Self> {
        let first = (t0 / dt).ceil() as usize;
        let last = (t1 / dt + 1e-9).floor() as usize;
        if last <= first {
            return Err(Error::InvalidParameter(format!("slope window [{t0}, {t1}] holds fewer than two steps")));
        }
        let n = (last - first + 1) as f64;
        let t_mean = 0.5 * (first + last) as f64 * dt;
        let sxx = dt * dt * n * (n * n - 1.0) / 12.0;
        Ok(Self { first, last, t_mean, sxx, dt })
    }

    #[inline]
    fn weight(&self, step_end: usize) -> f64 {
        if step_end < self.first || step_end > self.last {
            0.0
        } else {
            (step_end as f64 * self.dt - self.t_mean) / self.sxx
        }
    }
}

/// Per-trajectory state of [`EntropyObserver`].
#[derive(Debug, Clone)]
pub struct EntropyState {
    pub ledger: EntropyLedger,
    ln_p_prev: f64,
    pub floor_events: u64,
    pub outside_node_events: u64,
    slope: f64,
}

/// Accumulates system, environmental and total entropy along trajectories.
#[derive(Debug, Clone)]
pub struct EntropyObserver<'a> {
    snapshots: &'a PdfSnapshots,
    boundary_rate: f64,
    slope: Option<SlopeWindow>,
}

impl<'a> EntropyObserver<'a> {
    pub const CHANNELS: [&'static str; 3] = ["ds_sys", "ds_env", "ds_tot"];
    pub const EXTRAS: [&'static str; 3] = ["floor_events", "outside_node_events", "ds_tot_slope"];

    pub fn new(snapshots: &'a PdfSnapshots, boundary_rate: f64) -> Self {
        Self { snapshots, boundary_rate, slope: None }
    }

    /// Also fit the slope of cumulative Δs_tot over `window`, per trajectory.
    pub fn with_slope(mut self, window: SlopeWindow) -> Self {
        self.slope = Some(window);
        self
    }
}

impl Observer for EntropyObserver<'_> {
    type State = EntropyState;
    type Increment = EntropyIncrement;

    fn channel_names(&self) -> Vec<String> {
        Self::CHANNELS.iter().map(|s| s.to_string()).collect()
    }

    fn extra_names(&self) -> Vec<String> {
        Self::EXTRAS.iter().map(|s| s.to_string()).collect()
    }

    fn begin(&self, _traj: usize, initial: &BlochState) -> Result<EntropyState> {
        let first = self.snapshots.ln_p(initial.rz, 0.0);
        Ok(EntropyState {
            ledger: EntropyLedger::new(self.boundary_rate),
            ln_p_prev: first.ln_p,
            floor_events: first.floored as u64,
            outside_node_events: first.outside_nodes as u64,
            slope: 0.0,
        })
    }

    #[inline]
    fn observe(&self, st: &mut EntropyState, ctx: &StepContext<'_>) -> Result<EntropyIncrement> {
        let d = realized_increment(ctx.prev, ctx.next);
        let ds_env = env_increment(ctx.prev, d, ctx.dt, ctx.params)
            .map_err(|e| Error::Integration { traj: ctx.traj, step: ctx.step, reason: e.to_string() })?;
        let look = self.snapshots.ln_p(ctx.next.rz, ctx.t + ctx.dt);
        st.floor_events += look.floored as u64;
        st.outside_node_events += look.outside_nodes as u64;
        let ds_sys = -(look.ln_p - st.ln_p_prev);
        st.ln_p_prev = look.ln_p;
        let inc = EntropyIncrement::new(ds_sys, ds_env);
        st.ledger.push(inc);
        if let Some(w) = &self.slope {
            st.slope += w.weight(ctx.step + 1) * st.ledger.cum_tot();
        }
        Ok(inc)
    }

    fn values(&self, st: &EntropyState, out: &mut [f64]) {
        out[0] = st.ledger.cum_sys;
        out[1] = st.ledger.cum_env;
        out[2] = st.ledger.cum_tot();
    }

    fn extras(&self, st: &EntropyState) -> Vec<f64> {
        vec![st.floor_events as f64, st.outside_node_events as f64, st.slope]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference(g: f64) -> ModelParams {
        ModelParams::new(0.1, 1.0, 0.01, g).unwrap()
    }

    #[test]
    fn phi_terms_vanish() {
        let p = reference(2.0);
        let s = BlochState { rz: 0.43, phi: 2.2 };
        let [_, phi] = coordinate_terms(&s, [0.01, -0.3], &p).unwrap();
        assert_eq!(env_terms(&phi, 1e-3).unwrap().iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn ledger_additivity() {
        let mut l = EntropyLedger::new(-0.002);
        let incs = [EntropyIncrement::new(0.1, -0.3), EntropyIncrement::new(1e-17, 0.25)];
        for i in incs {
            assert_eq!(i.ds_tot, i.ds_sys + i.ds_env);
            l.push(i);
        }
        assert_eq!(l.cum_sys, 0.1 + 1e-17);
        assert_eq!(l.cum_env, -0.3 + 0.25);
        assert_eq!(l.cum_tot(), l.cum_sys + l.cum_env);
    }

    #[test]
    fn sys_increment_examples() {
        let g = PdfGrid::from_fn(100, |r| 0.5 + 0.25 * r).unwrap();
        assert_eq!(sys_increment(0.3, 0.3, &g, &g).unwrap(), 0.0);
        let v = sys_increment(-0.2, 0.6, &g, &g).unwrap();
        assert!((v - (0.45f64 / 0.65).ln()).abs() < 1e-14);
        assert!(sys_increment(-0.999, 0.0, &g, &g).is_err());
    }

    #[test]
    fn boundary_rate_zero_without_asymmetry() {
        for g in [1.0, 2.0] {
            let p = ModelParams::new(0.1, 0.0, 0.01, g).unwrap();
            assert!(boundary_correction_rate(&p).unwrap().rate.abs() < 1e-12);
            assert_eq!(boundary_rate_series(&p), 0.0);
        }
    }

    #[test]
    fn series_unit_gamma_closed_form() {
        assert!((boundary_rate_series(&reference(1.0)) + 0.002).abs() < 1e-15);
    }

    #[test]
    fn grid_kl_and_gibbs() {
        let u = PdfGrid::from_fn(200, |_| 0.5).unwrap();
        assert!((gibbs_entropy(&u) - 2f64.ln()).abs() < 1e-13);
        assert_eq!(kl_divergence(&u, &u).unwrap(), 0.0);
        // rectangles: narrower support has lower entropy
        let narrow = PdfGrid::from_fn(200, |r| if r.abs() < 0.5 { 1.0 } else { 0.0 }).unwrap();
        assert!(gibbs_entropy(&narrow) < gibbs_entropy(&u));
        assert!(matches!(kl_divergence(&u, &narrow), Err(Error::Divergence(_))));
        assert!(kl_divergence(&narrow, &u).unwrap() > 0.0);
    }

    #[test]
    fn slope_window_weights_fit_a_line() {
        let dt = 0.01;
        let w = SlopeWindow::new(0.5, 2.0, dt).unwrap();
        let s: f64 = (0..=200).map(|k| w.weight(k) * (3.0 + 1.7 * k as f64 * dt)).sum();
        assert!((s - 1.7).abs() < 1e-10);
        let flat: f64 = (0..=200).map(|k| w.weight(k)).sum();
        assert!(flat.abs() < 1e-10);
    }
}
