//! Finite-volume Fokker–Planck solver for the `r_z` density, gridded
//! densities, interpolation and sampling.
//!
//! The face flux has the exponentially fitted (Scharfetter–Gummel /
//! Chang–Cooper) form `J = α p_i − β p_{i+1}`. Its weights are fitted to the
//! analytic stationary density sampled on the grid, so that density is an
//! exact discrete equilibrium, and the face coefficients are chosen so the
//! semi-discrete scheme satisfies `d<r_z>/dt = <A_z>` exactly. The effective
//! face diffusivity stays within a fraction of a percent of `D_zz` at the face.

use crate::ensemble::InitialSampler;
use crate::error::{Error, Result};
use crate::model::{self, BlochState, ModelParams, StationaryPdf};
use crate::noise::NoiseStream;
use crate::sde::DEFAULT_REFLECTION_MARGIN;

pub const DEFAULT_CELLS: usize = 400;
/// Densities below this are floored before taking logarithms.
pub const P_FLOOR: f64 = 1e-300;
/// Fraction of the explicit stability bound used when no step is given.
pub const DEFAULT_SAFETY: f64 = 0.5;
const MASS_TOL: f64 = 1e-8;

/// Density values on a set of nodes; between nodes the density is linear and
/// beyond the outer nodes it is flat up to the domain edges.
#[derive(Debug, Clone, PartialEq)]
pub struct PdfGrid {
    nodes: Vec<f64>,
    values: Vec<f64>,
    lo: f64,
    hi: f64,
    /// Spacing if the nodes are uniform (enables O(1) lookup).
    spacing: Option<f64>,
    pub t: f64,
}

/// Result of a logarithmic density lookup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogPdf {
    pub value: f64,
    /// The interpolated density was below [`P_FLOOR`].
    pub floored: bool,
}

impl PdfGrid {
    /// `n` uniform cell centres on (−1, 1), all values zero.
    pub fn cell_centered(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParameter(format!("grid needs at least 2 cells (got {n})")));
        }
        let h = 2.0 / n as f64;
        let nodes = (0..n).map(|i| -1.0 + (i as f64 + 0.5) * h).collect();
        Ok(Self { nodes, values: vec![0.0; n], lo: -1.0, hi: 1.0, spacing: Some(h), t: 0.0 })
    }

    /// Cell-centred grid filled from a function.
    pub fn from_fn<F: Fn(f64) -> f64>(n: usize, f: F) -> Result<Self> {
        let mut g = Self::cell_centered(n)?;
        for (v, r) in g.values.iter_mut().zip(&g.nodes) {
            *v = f(*r);
        }
        g.check_values()?;
        Ok(g)
    }

    /// Arbitrary strictly increasing nodes; the domain extends half a spacing
    /// beyond each outer node.
    pub fn from_parts(nodes: Vec<f64>, values: Vec<f64>, t: f64) -> Result<Self> {
        if nodes.len() < 2 || nodes.len() != values.len() {
            return Err(Error::InvalidParameter("need >= 2 nodes and one value per node".into()));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) || nodes.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("nodes must be finite and strictly increasing".into()));
        }
        let n = nodes.len();
        let lo = nodes[0] - 0.5 * (nodes[1] - nodes[0]);
        let hi = nodes[n - 1] + 0.5 * (nodes[n - 1] - nodes[n - 2]);
        let h = (nodes[n - 1] - nodes[0]) / (n - 1) as f64;
        let uniform = nodes.iter().enumerate().all(|(i, r)| (r - (nodes[0] + i as f64 * h)).abs() <= 1e-12);
        let g = Self { nodes, values, lo, hi, spacing: uniform.then_some(h), t };
        g.check_values()?;
        Ok(g)
    }

    fn check_values(&self) -> Result<()> {
        if let Some(i) = self.values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Domain(format!("density value {} at node {i} is negative or not finite", self.values[i])));
        }
        Ok(())
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Domain `(lo, hi)` covered by the cells.
    pub fn domain(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    /// Width of the cell around each node.
    pub fn cell_widths(&self) -> Vec<f64> {
        let n = self.nodes.len();
        (0..n)
            .map(|i| {
                let left = if i == 0 { self.lo } else { 0.5 * (self.nodes[i - 1] + self.nodes[i]) };
                let right = if i + 1 == n { self.hi } else { 0.5 * (self.nodes[i] + self.nodes[i + 1]) };
                right - left
            })
            .collect()
    }

    /// Midpoint-rule mass (equal to the integral of the interpolated density
    /// on uniform grids).
    pub fn mass(&self) -> f64 {
        self.weighted_sum(|_, p| p)
    }

    /// Σ w_i f(r_i, p_i) with midpoint weights.
    pub fn weighted_sum<F: Fn(f64, f64) -> f64>(&self, f: F) -> f64 {
        match self.spacing {
            Some(h) => h * self.nodes.iter().zip(&self.values).map(|(r, p)| f(*r, *p)).sum::<f64>(),
            None => {
                self.cell_widths().iter().zip(self.nodes.iter().zip(&self.values)).map(|(w, (r, p))| w * f(*r, *p)).sum()
            }
        }
    }

    pub fn mean(&self) -> f64 {
        self.weighted_sum(|r, p| r * p) / self.mass()
    }

    /// Copy rescaled to unit mass.
    pub fn normalize(&self) -> Result<PdfGrid> {
        let m = self.mass();
        if !(m.is_finite() && m > 0.0) {
            return Err(Error::Normalization(format!("grid mass is {m}")));
        }
        let mut g = self.clone();
        g.values.iter_mut().for_each(|v| *v /= m);
        Ok(g)
    }

    pub fn is_normalized(&self) -> bool {
        (self.mass() - 1.0).abs() <= MASS_TOL
    }

    /// Index `i` with `nodes[i] <= r <= nodes[i+1]`, for `r` inside the node span.
    #[inline]
    fn bracket(&self, r: f64) -> usize {
        let n = self.nodes.len();
        let i = match self.spacing {
            Some(h) => ((r - self.nodes[0]) / h).floor() as isize,
            None => self.nodes.partition_point(|&x| x <= r) as isize - 1,
        };
        i.clamp(0, n as isize - 2) as usize
    }

    /// Linear interpolation between nodes; errors outside the node span.
    pub fn interpolate(&self, r: f64) -> Result<f64> {
        let (first, last) = (self.nodes[0], self.nodes[self.nodes.len() - 1]);
        if !(r >= first && r <= last) {
            return Err(Error::Extrapolation { rz: r, lo: first, hi: last });
        }
        Ok(self.interpolate_unchecked(r))
    }

    #[inline]
    fn interpolate_unchecked(&self, r: f64) -> f64 {
        let i = self.bracket(r);
        let (r0, r1) = (self.nodes[i], self.nodes[i + 1]);
        let w = ((r - r0) / (r1 - r0)).clamp(0.0, 1.0);
        self.values[i] + w * (self.values[i + 1] - self.values[i])
    }

    /// ln of the interpolated density; errors outside the node span.
    pub fn log_pdf_at(&self, r: f64) -> Result<LogPdf> {
        Ok(floored_ln(self.interpolate(r)?))
    }

    /// The piecewise density used for sampling: linear between nodes, flat
    /// in the outer half-cells, defined on the whole domain.
    #[inline]
    pub fn density(&self, r: f64) -> f64 {
        let n = self.nodes.len();
        if r <= self.nodes[0] {
            self.values[0]
        } else if r >= self.nodes[n - 1] {
            self.values[n - 1]
        } else {
            self.interpolate_unchecked(r)
        }
    }

    /// ln of [`PdfGrid::density`]; also reports whether `r` lay outside the
    /// node span.
    #[inline]
    pub fn log_density(&self, r: f64) -> (LogPdf, bool) {
        let n = self.nodes.len();
        let outside = r < self.nodes[0] || r > self.nodes[n - 1];
        (floored_ln(self.density(r)), outside)
    }

    /// Midpoint L1 distance; grids must share nodes.
    pub fn l1_distance(&self, other: &PdfGrid) -> Result<f64> {
        self.check_same_nodes(other)?;
        let w = self.cell_widths();
        Ok(w.iter().zip(self.values.iter().zip(&other.values)).map(|(w, (a, b))| w * (a - b).abs()).sum())
    }

    pub(crate) fn check_same_nodes(&self, other: &PdfGrid) -> Result<()> {
        if self.nodes != other.nodes {
            return Err(Error::InvalidParameter("grids do not share nodes".into()));
        }
        Ok(())
    }

    /// Probability mass of `|r_z| > threshold` under the sampling density.
    pub fn mass_beyond(&self, threshold: f64) -> f64 {
        let sampler = GridSampler::new(self).expect("grid has positive mass");
        let total = sampler.total();
        (sampler.cdf_mass(-threshold) + total - sampler.cdf_mass(threshold)) / total
    }
}

#[inline]
fn floored_ln(p: f64) -> LogPdf {
    if p < P_FLOOR {
        LogPdf { value: P_FLOOR.ln(), floored: true }
    } else {
        LogPdf { value: p.ln(), floored: false }
    }
}

/// Probability current at every cell face, boundaries included.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxField {
    /// `j[k]` is the current through the face left of cell `k` (`j[0]` and
    /// `j[n]` are the closed boundaries).
    pub j: Vec<f64>,
}

/// Analytic stationary density on `n` cell centres, normalized by the
/// midpoint rule and exponentially tilted by a tiny `exp(κ r)` so that its
/// grid mean is exactly −βε (the stationary value of the first moment).
pub fn stationary_grid(params: &ModelParams, n: usize) -> Result<PdfGrid> {
    let pdf = StationaryPdf::new(params)?;
    let mut g = PdfGrid::cell_centered(n)?;
    let lnp: Vec<f64> = g.nodes.iter().map(|&r| pdf.ln_density(r)).collect();
    let shift = lnp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lnp: Vec<f64> = lnp.iter().map(|v| v - shift).collect();
    let target = -params.beta_eps();
    let tilted = |k: f64| -> (Vec<f64>, f64) {
        let q: Vec<f64> = lnp.iter().zip(&g.nodes).map(|(l, r)| (l + k * r).exp()).collect();
        let s: f64 = q.iter().sum();
        let m = q.iter().zip(&g.nodes).map(|(q, r)| q * r).sum::<f64>() / s;
        (q, m)
    };
    // the tilted mean increases monotonically with κ
    let (mut a, mut b) = (-1.0, 1.0);
    if !(tilted(a).1 < target && tilted(b).1 > target) {
        return Err(Error::Normalization(format!(
            "cannot match the grid mean to {target} on {n} cells"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if tilted(mid).1 < target {
            a = mid;
        } else {
            b = mid;
        }
        if b - a < 1e-17 {
            break;
        }
    }
    let (q, _) = tilted(0.5 * (a + b));
    g.values = q;
    g.normalize()
}

/// Tridiagonal solve (Thomas algorithm); `lower[0]` and `upper[n-1]` unused.
fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64], scratch: &mut [f64]) {
    let n = diag.len();
    scratch[0] = upper[0] / diag[0];
    rhs[0] /= diag[0];
    for i in 1..n {
        let m = diag[i] - lower[i] * scratch[i - 1];
        scratch[i] = if i + 1 < n { upper[i] / m } else { 0.0 };
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / m;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= scratch[i] * rhs[i + 1];
    }
}

/// Bernoulli function z/(e^z − 1).
fn bernoulli(z: f64) -> f64 {
    if z.abs() < 1e-10 {
        1.0 - 0.5 * z
    } else {
        z / z.exp_m1()
    }
}

/// Solver for one parameter set on a uniform cell-centred grid.
#[derive(Debug, Clone)]
pub struct FpSolver {
    params: ModelParams,
    h: f64,
    equilibrium: PdfGrid,
    /// Face weights of `p_i` and `p_{i+1}` (interior faces only).
    alpha: Vec<f64>,
    beta: Vec<f64>,
    /// Effective face diffusivity divided by h.
    diff: Vec<f64>,
    drift_cells: Vec<f64>,
    dt_max: f64,
}

impl FpSolver {
    pub fn new(params: &ModelParams, n: usize) -> Result<Self> {
        let equilibrium = stationary_grid(params, n)?;
        let h = 2.0 / n as f64;
        let pe = equilibrium.values();
        if pe.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Domain("stationary grid has empty cells".into()));
        }
        let drift_cells: Vec<f64> = equilibrium.nodes().iter().map(|&r| model::drift_z(r, params)).collect();
        let mut alpha = Vec::with_capacity(n - 1);
        let mut beta = Vec::with_capacity(n - 1);
        let mut diff = Vec::with_capacity(n - 1);
        let mut dt_max = f64::INFINITY;
        let mut cum = 0.0;
        for i in 0..n - 1 {
            cum += drift_cells[i] * pe[i];
            if !(cum > 0.0) {
                return Err(Error::Domain(format!("non-positive equilibrium face weight at face {i}")));
            }
            let a = cum / pe[i];
            let b = cum / pe[i + 1];
            let dpsi = (pe[i + 1] / pe[i]).ln();
            let d_eff = h * a / bernoulli(-dpsi);
            let v = d_eff * dpsi / h;
            if v != 0.0 {
                dt_max = dt_max.min(h / v.abs()).min(2.0 * d_eff / (v * v));
            }
            alpha.push(a);
            beta.push(b);
            diff.push(d_eff / h);
        }
        Ok(Self { params: *params, h, equilibrium, alpha, beta, diff, drift_cells, dt_max })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn cells(&self) -> usize {
        self.drift_cells.len()
    }

    /// The discrete equilibrium (equal to [`stationary_grid`]).
    pub fn equilibrium(&self) -> &PdfGrid {
        &self.equilibrium
    }

    /// Largest step allowed by the explicit drift part.
    pub fn stable_dt(&self) -> f64 {
        self.dt_max
    }

    fn check_grid(&self, p: &PdfGrid) -> Result<()> {
        self.equilibrium.check_same_nodes(p)
    }

    fn fluxes(&self, p: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
        for f in 0..p.len() - 1 {
            out[f + 1] = self.alpha[f] * p[f] - self.beta[f] * p[f + 1];
        }
        out[p.len()] = 0.0;
    }

    pub fn flux(&self, p: &PdfGrid) -> Result<FluxField> {
        self.check_grid(p)?;
        let mut j = vec![0.0; p.len() + 1];
        self.fluxes(p.values(), &mut j);
        Ok(FluxField { j })
    }

    /// Semi-discrete time derivative of the density.
    pub fn rate(&self, p: &PdfGrid) -> Result<Vec<f64>> {
        let j = self.flux(p)?.j;
        Ok((0..p.len()).map(|i| (j[i] - j[i + 1]) / self.h).collect())
    }

    /// `<A_z>` under the midpoint rule.
    pub fn mean_drift(&self, p: &PdfGrid) -> f64 {
        self.h * self.drift_cells.iter().zip(p.values()).map(|(a, v)| a * v).sum::<f64>()
    }

    /// One semi-implicit step in place: explicit drift, implicit diffusion.
    pub fn step(&self, p: &mut [f64], dt: f64, work: &mut StepWork) -> Result<()> {
        if !(dt > 0.0 && dt <= self.dt_max * (1.0 + 1e-12)) {
            return Err(Error::Stability { dt, suggested: DEFAULT_SAFETY * self.dt_max });
        }
        let n = p.len();
        let k = dt / self.h;
        // explicit part: drift remainder of each face flux
        work.flux[0] = 0.0;
        work.flux[n] = 0.0;
        for f in 0..n - 1 {
            work.flux[f + 1] = (self.alpha[f] - self.diff[f]) * p[f] - (self.beta[f] - self.diff[f]) * p[f + 1];
        }
        for i in 0..n {
            work.rhs[i] = p[i] + k * (work.flux[i] - work.flux[i + 1]);
        }
        // implicit part: (D/h)(p_i − p_{i+1}) through each interior face
        for i in 0..n {
            let left = if i > 0 { k * self.diff[i - 1] } else { 0.0 };
            let right = if i + 1 < n { k * self.diff[i] } else { 0.0 };
            work.lower[i] = -left;
            work.upper[i] = -right;
            work.diag[i] = 1.0 + left + right;
        }
        solve_tridiagonal(&work.lower, &work.diag, &work.upper, &mut work.rhs, &mut work.scratch);
        for (dst, v) in p.iter_mut().zip(&work.rhs) {
            if !(v.is_finite() && *v >= -1e-14) {
                return Err(Error::Stability { dt, suggested: 0.5 * dt.min(self.dt_max) });
            }
            *dst = v.max(0.0);
        }
        Ok(())
    }

    /// Step size actually used: `dt_pde` if given (must be stable), otherwise
    /// a fraction of the stability bound, shrunk to divide `interval` evenly.
    pub fn plan_steps(&self, interval: f64, dt_pde: Option<f64>) -> Result<(usize, f64)> {
        let target = match dt_pde {
            Some(dt) if !(dt > 0.0 && dt.is_finite()) => {
                return Err(Error::InvalidParameter(format!("dt_pde must be > 0 (got {dt})")))
            }
            Some(dt) if dt > self.dt_max => {
                return Err(Error::Stability { dt, suggested: DEFAULT_SAFETY * self.dt_max })
            }
            Some(dt) => dt,
            None => DEFAULT_SAFETY * self.dt_max,
        };
        if interval <= 0.0 {
            return Ok((0, 0.0));
        }
        let n = (interval / target).ceil().max(1.0) as usize;
        Ok((n, interval / n as f64))
    }

    /// Evolve `p` to `t_target`.
    pub fn evolve(&self, p: &PdfGrid, t_target: f64, dt_pde: Option<f64>) -> Result<PdfGrid> {
        self.check_grid(p)?;
        if !p.is_normalized() {
            return Err(Error::Normalization(format!("input mass {} is not 1", p.mass())));
        }
        if !(t_target >= p.t) {
            return Err(Error::InvalidParameter(format!("t_target {t_target} precedes grid time {}", p.t)));
        }
        let (steps, dt) = self.plan_steps(t_target - p.t, dt_pde)?;
        let mut out = p.clone();
        let mut work = StepWork::new(p.len());
        for _ in 0..steps {
            self.step(&mut out.values, dt, &mut work)?;
        }
        out.t = t_target;
        Ok(out)
    }

    /// Evolve from `p` (taken as t = 0) to `t_max`, keeping a grid every
    /// `cadence` time units (first snapshot is `p` itself).
    pub fn evolve_snapshots(&self, p: &PdfGrid, t_max: f64, cadence: f64, dt_pde: Option<f64>) -> Result<PdfSnapshots> {
        self.check_grid(p)?;
        if !p.is_normalized() {
            return Err(Error::Normalization(format!("input mass {} is not 1", p.mass())));
        }
        let n_snap = crate::sde::step_count(t_max, cadence)?;
        let (sub, dt) = self.plan_steps(cadence, dt_pde)?;
        let mut cur = p.clone();
        cur.t = 0.0;
        let mut grids = Vec::with_capacity(n_snap + 1);
        grids.push(cur.clone());
        let mut work = StepWork::new(p.len());
        for k in 1..=n_snap {
            for _ in 0..sub {
                self.step(&mut cur.values, dt, &mut work)?;
            }
            cur.t = k as f64 * cadence;
            if !cur.is_normalized() {
                return Err(Error::Normalization(format!("mass drifted to {} at t = {}", cur.mass(), cur.t)));
            }
            grids.push(cur.clone());
        }
        PdfSnapshots::new(grids, cadence)
    }
}

/// Scratch buffers for [`FpSolver::step`].
#[derive(Debug, Clone)]
pub struct StepWork {
    flux: Vec<f64>,
    rhs: Vec<f64>,
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
    scratch: Vec<f64>,
}

impl StepWork {
    pub fn new(n: usize) -> Self {
        Self {
            flux: vec![0.0; n + 1],
            rhs: vec![0.0; n],
            lower: vec![0.0; n],
            diag: vec![0.0; n],
            upper: vec![0.0; n],
            scratch: vec![0.0; n],
        }
    }
}

/// Evolve a normalized density under `params` to `t_target`.
pub fn evolve(p: &PdfGrid, params: &ModelParams, t_target: f64, dt_pde: Option<f64>) -> Result<PdfGrid> {
    let solver = FpSolver::new(params, p.len())?;
    solver.evolve(p, t_target, dt_pde)
}

/// Densities at equally spaced times, read with linear-in-time interpolation
/// of ln p.
#[derive(Debug, Clone)]
pub struct PdfSnapshots {
    grids: Vec<PdfGrid>,
    cadence: f64,
}

/// One lookup into [`PdfSnapshots`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnapshotLookup {
    pub ln_p: f64,
    pub floored: bool,
    /// The point lay in an outer half-cell (flat density extension used).
    pub outside_nodes: bool,
}

impl PdfSnapshots {
    pub fn new(grids: Vec<PdfGrid>, cadence: f64) -> Result<Self> {
        if grids.is_empty() || !(cadence > 0.0) {
            return Err(Error::InvalidParameter("snapshots need >= 1 grid and a positive cadence".into()));
        }
        for g in &grids[1..] {
            grids[0].check_same_nodes(g)?;
        }
        Ok(Self { grids, cadence })
    }

    pub fn grids(&self) -> &[PdfGrid] {
        &self.grids
    }

    pub fn cadence(&self) -> f64 {
        self.cadence
    }

    pub fn t_max(&self) -> f64 {
        (self.grids.len() - 1) as f64 * self.cadence
    }

    pub fn last(&self) -> &PdfGrid {
        self.grids.last().expect("non-empty")
    }

    /// ln p̃(r, t): ln of the spatially interpolated density in the two
    /// bracketing snapshots, interpolated linearly in time.
    #[inline]
    pub fn ln_p(&self, r: f64, t: f64) -> SnapshotLookup {
        let last = self.grids.len() - 1;
        let pos = (t / self.cadence).max(0.0);
        let j = (pos.floor() as usize).min(last);
        let (a, outside) = self.grids[j].log_density(r);
        let theta = pos - j as f64;
        if j == last || theta <= 0.0 {
            return SnapshotLookup { ln_p: a.value, floored: a.floored, outside_nodes: outside };
        }
        let (b, _) = self.grids[j + 1].log_density(r);
        SnapshotLookup {
            ln_p: (1.0 - theta) * a.value + theta * b.value,
            floored: a.floored || b.floored,
            outside_nodes: outside,
        }
    }
}

/// Inverse-CDF sampler for the piecewise density of a grid.
#[derive(Debug, Clone)]
pub struct GridSampler {
    /// Segment boundaries: lo, nodes..., hi.
    knots: Vec<f64>,
    /// Density at each knot (flat ends repeat the outer node values).
    dens: Vec<f64>,
    /// Cumulative mass at each knot.
    cum: Vec<f64>,
}

impl GridSampler {
    pub fn new(g: &PdfGrid) -> Result<Self> {
        let n = g.len();
        let mut knots = Vec::with_capacity(n + 2);
        let mut dens = Vec::with_capacity(n + 2);
        knots.push(g.lo);
        dens.push(g.values[0]);
        knots.extend_from_slice(&g.nodes);
        dens.extend_from_slice(&g.values);
        knots.push(g.hi);
        dens.push(g.values[n - 1]);
        let mut cum = vec![0.0; knots.len()];
        for k in 1..knots.len() {
            cum[k] = cum[k - 1] + 0.5 * (dens[k - 1] + dens[k]) * (knots[k] - knots[k - 1]);
        }
        let total = cum[knots.len() - 1];
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::Normalization(format!("cannot sample a grid with mass {total}")));
        }
        Ok(Self { knots, dens, cum })
    }

    pub fn total(&self) -> f64 {
        *self.cum.last().expect("non-empty")
    }

    /// Unnormalized mass below `r`.
    pub fn cdf_mass(&self, r: f64) -> f64 {
        if r <= self.knots[0] {
            return 0.0;
        }
        if r >= *self.knots.last().expect("non-empty") {
            return self.total();
        }
        let k = self.knots.partition_point(|&x| x <= r) - 1;
        let w = self.knots[k + 1] - self.knots[k];
        let slope = (self.dens[k + 1] - self.dens[k]) / w;
        let d = r - self.knots[k];
        self.cum[k] + self.dens[k] * d + 0.5 * slope * d * d
    }

    /// Point with cumulative fraction `u ∈ [0, 1)`.
    pub fn quantile(&self, u: f64) -> f64 {
        let m = u.clamp(0.0, 1.0) * self.total();
        let last = self.knots.len() - 1;
        // first segment whose upper cumulative mass exceeds m
        let k = (self.cum.partition_point(|&c| c <= m)).clamp(1, last) - 1;
        let w = self.knots[k + 1] - self.knots[k];
        let pa = self.dens[k];
        let slope = (self.dens[k + 1] - pa) / w;
        let rem = m - self.cum[k];
        let disc = (pa * pa + 2.0 * slope * rem).max(0.0);
        let denom = pa + disc.sqrt();
        let d = if denom > 0.0 { 2.0 * rem / denom } else { 0.0 };
        (self.knots[k] + d.clamp(0.0, w)).min(self.knots[k + 1])
    }

    pub fn sample(&self, stream: &mut NoiseStream) -> f64 {
        self.quantile(stream.uniform())
    }
}

/// Draw one `r_z` from a grid density.
pub fn sample(p: &PdfGrid, stream: &mut NoiseStream) -> Result<f64> {
    Ok(GridSampler::new(p)?.sample(stream))
}

/// Initial states with `r_z` from a grid density and φ uniform on [0, 2π).
#[derive(Debug, Clone)]
pub struct DensitySampler {
    sampler: GridSampler,
    margin: f64,
}

impl DensitySampler {
    pub fn new(p: &PdfGrid) -> Result<Self> {
        Ok(Self { sampler: GridSampler::new(p)?, margin: DEFAULT_REFLECTION_MARGIN })
    }

    /// Keep samples at least `margin` from ±1.
    pub fn with_margin(mut self, margin: f64) -> Self {
        self.margin = margin;
        self
    }
}

impl InitialSampler for DensitySampler {
    fn sample(&self, stream: &mut NoiseStream) -> Result<BlochState> {
        let edge = 1.0 - self.margin;
        let rz = self.sampler.sample(stream).clamp(-edge, edge);
        let phi = std::f64::consts::TAU * stream.uniform();
        BlochState::new(rz, phi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference(g: f64) -> ModelParams {
        ModelParams::new(0.1, 1.0, 0.01, g).unwrap()
    }

    #[test]
    fn log_pdf_interpolation_examples() {
        let g = PdfGrid::from_parts(vec![0.0, 0.1], vec![0.4, 0.6], 0.0).unwrap();
        assert!((g.log_pdf_at(0.05).unwrap().value - 0.5f64.ln()).abs() < 1e-15);
        assert_eq!(g.log_pdf_at(0.1).unwrap().value, 0.6f64.ln());
        assert_eq!(g.log_pdf_at(0.0).unwrap().value, 0.4f64.ln());
        assert!(matches!(g.log_pdf_at(0.11), Err(Error::Extrapolation { .. })));
        let z = PdfGrid::from_parts(vec![0.0, 0.1], vec![0.0, 1e-310], 0.0).unwrap();
        let l = z.log_pdf_at(0.05).unwrap();
        assert!(l.floored);
        assert_eq!(l.value, P_FLOOR.ln());
    }

    #[test]
    fn zero_mass_rejected() {
        let g = PdfGrid::cell_centered(10).unwrap();
        assert!(matches!(g.normalize(), Err(Error::Normalization(_))));
        assert!(GridSampler::new(&g).is_err());
    }

    #[test]
    fn sampler_density_integrates_to_midpoint_mass() {
        let g = PdfGrid::from_fn(50, |r| 1.0 + r * r).unwrap();
        let s = GridSampler::new(&g).unwrap();
        assert!((s.total() - g.mass()).abs() < 1e-14);
    }

    #[test]
    fn quantile_inverts_cdf() {
        let g = PdfGrid::from_fn(40, |r| (2.0 * r).exp() + 0.1).unwrap();
        let s = GridSampler::new(&g).unwrap();
        for u in [0.0, 1e-6, 0.013, 0.3, 0.5, 0.77, 0.999_999] {
            let r = s.quantile(u);
            assert!((s.cdf_mass(r) / s.total() - u).abs() < 1e-12, "u {u}");
        }
    }

    #[test]
    fn spike_stays_in_its_hat() {
        let mut g = PdfGrid::cell_centered(20).unwrap();
        g.values[7] = 1.0;
        let s = GridSampler::new(&g).unwrap();
        let mut st = NoiseStream::new(1, 0);
        let c = g.nodes()[7];
        for _ in 0..1000 {
            assert!((s.sample(&mut st) - c).abs() < 0.1);
        }
    }

    #[test]
    fn stationary_grid_mean_exact() {
        for gm in [1.0, 2.0, 3.0] {
            let g = stationary_grid(&reference(gm), 400).unwrap();
            assert!((g.mass() - 1.0).abs() < 1e-13);
            assert!((g.mean() + 0.1).abs() < 1e-13);
        }
    }

    #[test]
    fn stationary_grid_is_discrete_equilibrium() {
        for gm in [1.0, 2.0] {
            let s = FpSolver::new(&reference(gm), 400).unwrap();
            let mut p = s.equilibrium().values().to_vec();
            let mut w = StepWork::new(400);
            s.step(&mut p, 0.5 * s.stable_dt(), &mut w).unwrap();
            for (a, b) in p.iter().zip(s.equilibrium().values()) {
                assert!(((a - b) / b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn oversized_step_reports_bound() {
        let s = FpSolver::new(&reference(2.0), 400).unwrap();
        let p = s.equilibrium().clone();
        match s.evolve(&p, 1.0, Some(10.0 * s.stable_dt())) {
            Err(Error::Stability { suggested, .. }) => assert!(suggested <= s.stable_dt()),
            other => panic!("expected stability fault, got {other:?}"),
        }
    }

    #[test]
    fn tridiagonal_solves() {
        let lower = [0.0, -1.0, -1.0];
        let diag = [2.0, 2.0, 2.0];
        let upper = [-1.0, -1.0, 0.0];
        let mut rhs = [1.0, 0.0, 1.0];
        let mut scratch = [0.0; 3];
        solve_tridiagonal(&lower, &diag, &upper, &mut rhs, &mut scratch);
        for v in rhs {
            assert!((v - 1.0).abs() < 1e-15);
        }
    }
}
