//! Measurement protocols: a thermal ensemble prepared at one coupling evolves
//! under another (connect: γ 1 → 2, disconnect: γ 2 → 1).
//!
//! Each run (1) solves the Fokker–Planck equation from the initial stationary
//! density under the new coupling, keeping snapshots, (2) integrates the
//! trajectory ensemble with per-step system and environmental entropy, and
//! (3) adds the stationary boundary rate of the new coupling to the ensemble
//! mean of the total.

use crate::ensemble::{self, EnsembleOutput, EnsembleSpec, Moments, TrajectoryRecord, DEFAULT_BLOCK_SIZE};
use crate::entropy::{self, BoundaryRate, EntropyIncrement, EntropyObserver, SlopeWindow};
use crate::error::{Error, Result};
use crate::fokker_planck::{self, DensitySampler, FpSolver, PdfGrid, PdfSnapshots, DEFAULT_CELLS};
use crate::model::{BlochState, ModelParams, StationaryPdf};
use crate::sde::{self, GammaSchedule, Trajectory, DEFAULT_REFLECTION_MARGIN};

/// Which protocol a run performs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProtocolKind {
    /// Connect the measuring device: γ 1 → 2.
    Connect,
    /// Disconnect it: γ 2 → 1.
    Disconnect,
    Custom,
}

impl ProtocolKind {
    pub fn label(&self) -> &'static str {
        match self {
            ProtocolKind::Connect => "M",
            ProtocolKind::Disconnect => "Mbar",
            ProtocolKind::Custom => "custom",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        match s {
            "M" | "connect" => Some(ProtocolKind::Connect),
            "Mbar" | "disconnect" => Some(ProtocolKind::Disconnect),
            "custom" => Some(ProtocolKind::Custom),
            _ => None,
        }
    }

    /// `(gamma_init, gamma_dyn)` of the named protocols.
    pub fn couplings(&self) -> Option<(f64, f64)> {
        match self {
            ProtocolKind::Connect => Some((1.0, 2.0)),
            ProtocolKind::Disconnect => Some((2.0, 1.0)),
            ProtocolKind::Custom => None,
        }
    }

    /// Label for a coupling pair.
    pub fn classify(gamma_init: f64, gamma_dyn: f64) -> Self {
        match (gamma_init, gamma_dyn) {
            (i, d) if i == 1.0 && d == 2.0 => ProtocolKind::Connect,
            (i, d) if i == 2.0 && d == 1.0 => ProtocolKind::Disconnect,
            _ => ProtocolKind::Custom,
        }
    }
}

/// Discretization choices of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Numerics {
    pub grid_cells: usize,
    pub snapshot_cadence: f64,
    /// `None` picks half the explicit stability bound.
    pub dt_pde: Option<f64>,
    pub record_stride: usize,
    pub reflection_margin: f64,
    pub block_size: usize,
}

impl Default for Numerics {
    fn default() -> Self {
        Self {
            grid_cells: DEFAULT_CELLS,
            snapshot_cadence: 0.01,
            dt_pde: None,
            record_stride: 10,
            reflection_margin: DEFAULT_REFLECTION_MARGIN,
            block_size: DEFAULT_BLOCK_SIZE,
        }
    }
}

/// Configuration of one protocol run.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolRun {
    pub kind: ProtocolKind,
    /// Physical constants; the coupling stored here is ignored.
    pub params: ModelParams,
    pub gamma_init: f64,
    pub gamma_dyn: f64,
    pub n_traj: usize,
    pub t_max: f64,
    pub dt: f64,
    pub master_seed: u64,
    pub numerics: Numerics,
}

impl ProtocolRun {
    pub fn new(
        params: ModelParams,
        gamma_init: f64,
        gamma_dyn: f64,
        n_traj: usize,
        t_max: f64,
        dt: f64,
        master_seed: u64,
    ) -> Self {
        Self {
            kind: ProtocolKind::classify(gamma_init, gamma_dyn),
            params,
            gamma_init,
            gamma_dyn,
            n_traj,
            t_max,
            dt,
            master_seed,
            numerics: Numerics::default(),
        }
    }

    /// Protocol M.
    pub fn connect(params: ModelParams, n_traj: usize, t_max: f64, dt: f64, master_seed: u64) -> Self {
        Self::new(params, 1.0, 2.0, n_traj, t_max, dt, master_seed)
    }

    /// Protocol M̄.
    pub fn disconnect(params: ModelParams, n_traj: usize, t_max: f64, dt: f64, master_seed: u64) -> Self {
        Self::new(params, 2.0, 1.0, n_traj, t_max, dt, master_seed)
    }

    /// The same run with initial and dynamical couplings exchanged.
    pub fn reversed(&self) -> Self {
        let mut r = self.clone();
        r.gamma_init = self.gamma_dyn;
        r.gamma_dyn = self.gamma_init;
        r.kind = ProtocolKind::classify(r.gamma_init, r.gamma_dyn);
        r
    }

    pub fn initial_params(&self) -> Result<ModelParams> {
        self.params.with_gamma(self.gamma_init)
    }

    pub fn dynamics_params(&self) -> Result<ModelParams> {
        self.params.with_gamma(self.gamma_dyn)
    }

    pub fn schedule(&self) -> GammaSchedule {
        GammaSchedule::Quench { initial: self.gamma_init, dynamics: self.gamma_dyn }
    }

    /// Every violated constraint, not just the first.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        for (name, g) in [("gamma_init", self.gamma_init), ("gamma_dyn", self.gamma_dyn)] {
            if let Err(e) = self.params.with_gamma(g) {
                bad.push(format!("{name}: {e}"));
            }
        }
        if let Some(pair) = self.kind.couplings() {
            if pair != (self.gamma_init, self.gamma_dyn) {
                bad.push(format!(
                    "protocol {} requires (gamma_init, gamma_dyn) = {:?}, got ({}, {})",
                    self.kind.label(),
                    pair,
                    self.gamma_init,
                    self.gamma_dyn
                ));
            }
        }
        if self.n_traj == 0 {
            bad.push("n_traj must be >= 1".into());
        }
        if let Err(e) = sde::step_count(self.t_max, self.dt) {
            bad.push(e.to_string());
        }
        let n = &self.numerics;
        if n.grid_cells < 10 {
            bad.push(format!("grid_cells must be >= 10 (got {})", n.grid_cells));
        }
        match sde::step_count(self.t_max, n.snapshot_cadence) {
            Err(_) => bad.push(format!(
                "snapshot_cadence = {} must be positive and divide t_max = {}",
                n.snapshot_cadence, self.t_max
            )),
            Ok(_) if n.snapshot_cadence < self.dt * (1.0 - 1e-12) => {
                bad.push(format!("snapshot_cadence = {} is finer than dt = {}", n.snapshot_cadence, self.dt))
            }
            Ok(_) => {}
        }
        if let Some(d) = n.dt_pde {
            if !(d.is_finite() && d > 0.0) {
                bad.push(format!("dt_pde must be finite and > 0 (got {d})"));
            }
        }
        if n.record_stride == 0 {
            bad.push("record_stride must be >= 1".into());
        }
        if !(n.reflection_margin > 0.0 && n.reflection_margin < 1e-3) {
            bad.push(format!("reflection_margin must lie in (0, 1e-3) (got {})", n.reflection_margin));
        }
        if n.block_size == 0 {
            bad.push("block_size must be >= 1".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }

    fn ensemble_spec(&self) -> Result<EnsembleSpec> {
        let mut spec = EnsembleSpec::new(self.params, self.schedule(), self.n_traj, self.t_max, self.dt, self.master_seed);
        spec.record_stride = self.numerics.record_stride;
        spec.reflection_margin = self.numerics.reflection_margin;
        spec.block_size = self.numerics.block_size;
        Ok(spec)
    }

    /// Window for the per-trajectory slope of Δs_tot, used when the coupling
    /// does not change (nothing to relax, so only the late part is fitted).
    fn slope_window(&self) -> Option<SlopeWindow> {
        if self.gamma_init != self.gamma_dyn || self.t_max <= 0.5 {
            return None;
        }
        SlopeWindow::new(0.5, self.t_max, self.dt).ok()
    }
}

/// Everything the trajectory ensemble needs that comes from the pdf side.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub initial_grid: PdfGrid,
    pub target_grid: PdfGrid,
    pub snapshots: PdfSnapshots,
    pub boundary: BoundaryRate,
    /// KL(p_st(gamma_init) ‖ p_st(gamma_dyn)) by adaptive quadrature.
    pub kl_oracle: f64,
}

/// Fokker–Planck pre-pass and oracles.
pub fn prepare(run: &ProtocolRun) -> Result<Prepared> {
    run.validate()?;
    let pi = run.initial_params()?;
    let pd = run.dynamics_params()?;
    let n = &run.numerics;
    let initial_grid = fokker_planck::stationary_grid(&pi, n.grid_cells)?;
    let solver = FpSolver::new(&pd, n.grid_cells)?;
    let snapshots = solver.evolve_snapshots(&initial_grid, run.t_max, n.snapshot_cadence, n.dt_pde)?;
    let boundary = entropy::boundary_correction_rate(&pd)?;
    let kl_oracle = StationaryPdf::new(&pi)?.kl_divergence(&StationaryPdf::new(&pd)?);
    Ok(Prepared { initial_grid, target_grid: solver.equilibrium().clone(), snapshots, boundary, kl_oracle })
}

/// One row of the ensemble entropy ledger.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LedgerRow {
    pub t: f64,
    pub mean_rz: f64,
    pub sem_rz: f64,
    pub mean_ds_sys: f64,
    pub mean_ds_env: f64,
    pub mean_ds_tot: f64,
    /// Mean Δs_tot plus the boundary rate times t.
    pub corrected_ds_tot: f64,
    pub sem_ds_tot: f64,
}

/// Output bundle of a protocol run.
#[derive(Debug, Clone)]
pub struct ProtocolResults {
    pub run: ProtocolRun,
    pub prepared: Prepared,
    pub ensemble: EnsembleOutput,
}

impl ProtocolResults {
    pub fn boundary_rate(&self) -> f64 {
        self.prepared.boundary.rate
    }

    pub fn ledger(&self) -> Vec<LedgerRow> {
        let e = &self.ensemble;
        let [sys, env, tot] = ["ds_sys", "ds_env", "ds_tot"].map(|c| e.channel(c).expect("entropy channels present"));
        let rate = self.boundary_rate();
        e.times
            .iter()
            .enumerate()
            .map(|(k, &t)| LedgerRow {
                t,
                mean_rz: e.rz[k].mean,
                sem_rz: e.rz[k].sem(),
                mean_ds_sys: sys[k].mean,
                mean_ds_env: env[k].mean,
                mean_ds_tot: tot[k].mean,
                corrected_ds_tot: tot[k].mean + rate * t,
                sem_ds_tot: tot[k].sem(),
            })
            .collect()
    }

    /// Final Δs_tot of every trajectory that completed, as `(index, value)`.
    pub fn final_totals(&self) -> Vec<(usize, f64)> {
        let c = self.channel_index("ds_tot");
        self.ensemble.trajectories.iter().filter(|t| t.fault.is_none()).map(|t| (t.index, t.values[c])).collect()
    }

    /// Final Δs_tot per trajectory with the boundary rate times t_max added,
    /// so that the ensemble mean matches the corrected ledger.
    pub fn final_totals_corrected(&self) -> Vec<(usize, f64)> {
        let shift = self.boundary_rate() * self.run.t_max;
        self.final_totals().into_iter().map(|(i, v)| (i, v + shift)).collect()
    }

    /// Corrected mean Δs_tot at the final time with its standard error.
    pub fn final_mean(&self) -> (f64, f64) {
        let row = *self.ledger().last().expect("ledger never empty");
        (row.corrected_ds_tot, row.sem_ds_tot)
    }

    fn channel_index(&self, name: &str) -> usize {
        self.ensemble.channel_names.iter().position(|c| c == name).expect("known channel")
    }

    fn extra_index(&self, name: &str) -> Option<usize> {
        self.ensemble.extra_names.iter().position(|c| c == name)
    }

    /// Sum of a per-trajectory counter.
    pub fn count_extra(&self, name: &str) -> u64 {
        match self.extra_index(name) {
            Some(i) => self.ensemble.trajectories.iter().filter_map(|t| t.extras.get(i)).map(|v| *v as u64).sum(),
            None => 0,
        }
    }

    /// Per-trajectory slopes of Δs_tot (boundary rate included), when fitted.
    pub fn corrected_slopes(&self) -> Option<Moments> {
        self.run.slope_window()?;
        let i = self.extra_index("ds_tot_slope")?;
        let rate = self.boundary_rate();
        let mut m = Moments::default();
        for t in self.ensemble.trajectories.iter().filter(|t| t.fault.is_none()) {
            m.push(t.extras[i] + rate);
        }
        Some(m)
    }

    /// L1 distance of each pdf snapshot to the stationary density of the new
    /// coupling: the relaxation record.
    pub fn relaxation(&self) -> Vec<(f64, f64)> {
        self.prepared
            .snapshots
            .grids()
            .iter()
            .map(|g| (g.t, g.l1_distance(&self.prepared.target_grid).expect("common grid")))
            .collect()
    }

    /// Exact replay of trajectory `index` with every step recorded.
    pub fn trajectory_report(&self, index: usize) -> Result<TrajectoryReport> {
        report_from(&self.run, &self.prepared, index)
    }
}

/// Execute a protocol run.
pub fn run(run: &ProtocolRun) -> Result<ProtocolResults> {
    let prepared = prepare(run)?;
    let ensemble = run_prepared(run, &prepared)?;
    Ok(ProtocolResults { run: run.clone(), prepared, ensemble })
}

fn run_prepared(run: &ProtocolRun, prepared: &Prepared) -> Result<EnsembleOutput> {
    let spec = run.ensemble_spec()?;
    let sampler = DensitySampler::new(&prepared.initial_grid)?.with_margin(run.numerics.reflection_margin);
    let mut observer = EntropyObserver::new(&prepared.snapshots, prepared.boundary.rate);
    if let Some(w) = run.slope_window() {
        observer = observer.with_slope(w);
    }
    ensemble::run_ensemble(&spec, &sampler, &observer)
}

/// One trajectory with its entropy time series.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryReport {
    pub index: usize,
    pub trajectory: Trajectory,
    /// Cumulative `(Δs_sys, Δs_env, Δs_tot)` at every recorded time.
    pub cumulative: Vec<[f64; 3]>,
}

fn report_from(run: &ProtocolRun, prepared: &Prepared, index: usize) -> Result<TrajectoryReport> {
    let mut spec = run.ensemble_spec()?;
    spec.record_stride = 1;
    let sampler = DensitySampler::new(&prepared.initial_grid)?.with_margin(run.numerics.reflection_margin);
    let observer = EntropyObserver::new(&prepared.snapshots, prepared.boundary.rate);
    let rec: TrajectoryRecord<EntropyIncrement> = ensemble::replay_trajectory(&spec, &sampler, &observer, index)?;
    Ok(TrajectoryReport {
        index,
        cumulative: rec.values.iter().map(|v| [v[0], v[1], v[2]]).collect(),
        trajectory: Trajectory {
            times: rec.times,
            states: rec.states,
            reflections: rec.end.reflections,
            increments: Some(rec.increments),
        },
    })
}

/// Reproduce trajectory `index` of `run` exactly (same noise substream).
pub fn single_trajectory_report(run: &ProtocolRun, index: usize) -> Result<TrajectoryReport> {
    if index >= run.n_traj {
        return Err(Error::Index { index, n_traj: run.n_traj });
    }
    let prepared = prepare(run)?;
    report_from(run, &prepared, index)
}

/// Initial states the run would draw, in trajectory order (for checking the
/// thermal preparation without integrating anything).
pub fn initial_states(run: &ProtocolRun, n: usize) -> Result<Vec<BlochState>> {
    use crate::ensemble::InitialSampler;
    let grid = fokker_planck::stationary_grid(&run.initial_params()?, run.numerics.grid_cells)?;
    let sampler = DensitySampler::new(&grid)?.with_margin(run.numerics.reflection_margin);
    (0..n)
        .map(|i| sampler.sample(&mut crate::noise::NoiseStream::new(run.master_seed, i as u64)))
        .collect()
}
