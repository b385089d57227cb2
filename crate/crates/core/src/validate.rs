//! Invariant suite at reduced sample sizes, for the `validate` command.

use crate::analysis::{self, Check, EntropyHistogram};
use crate::config::RunConfig;
use crate::ensemble::{self, EnsembleSpec, FixedInitial};
use crate::entropy;
use crate::error::Result;
use crate::fokker_planck::{self, DensitySampler, FpSolver, PdfGrid, StepWork};
use crate::model::{self, BlochState, ModelParams, StationaryPdf};
use crate::noise::NoiseStream;
use crate::protocol::{self, ProtocolRun};
use crate::sde::GammaSchedule;

/// Sample sizes of the suite.
#[derive(Debug, Clone)]
pub struct SuiteSize {
    /// Random states per pointwise property.
    pub states: usize,
    pub n_traj: usize,
    pub t_max: f64,
    pub dt: f64,
    pub seed: u64,
}

impl Default for SuiteSize {
    fn default() -> Self {
        Self { states: 20_000, n_traj: 2_000, t_max: 0.5, dt: 1e-4, seed: 2024 }
    }
}

const GAMMAS: [f64; 5] = [1.0, 1.2, 1.5, 2.0, 3.0];

fn random_states(n: usize, seed: u64) -> Vec<BlochState> {
    let mut s = NoiseStream::new(seed, u64::MAX);
    (0..n)
        .map(|_| BlochState {
            rz: (2.0 * s.uniform() - 1.0) * (1.0 - 1e-6),
            phi: std::f64::consts::TAU * s.uniform(),
        })
        .collect()
}

fn diagonal_diffusion(states: &[BlochState], base: &ModelParams) -> Result<Check> {
    let mut worst = 0.0f64;
    for &g in &GAMMAS {
        let p = base.with_gamma(g)?;
        for s in states {
            let b = model::noise_matrix(s, &p)?;
            let off: f64 = (0..3).map(|k| b[0][k] * b[1][k]).sum::<f64>() / 2.0;
            let scale = (model::diffusion_zz(s.rz, &p) * model::diffusion_phiphi(s.rz, &p)?).sqrt();
            worst = worst.max(off.abs() / scale);
        }
    }
    Ok(Check::new("diffusion matrix diagonal", worst < 1e-12, format!("max |D_zφ|/sqrt(D_zz D_φφ) = {worst:.2e}")))
}

fn drift_split(states: &[BlochState], base: &ModelParams) -> Result<Check> {
    let mut worst = 0.0f64;
    let mut independent = true;
    let reference = base.with_gamma(1.0)?;
    for &g in &GAMMAS {
        let p = base.with_gamma(g)?;
        for s in states {
            let a = model::drift(s, &p);
            let split = model::drift_split(s, &p);
            for i in 0..2 {
                worst = worst.max((split.a_irr[i] + split.a_rev[i] - a[i]).abs());
            }
            let shifted = BlochState { rz: s.rz, phi: (s.phi + 1.0) % std::f64::consts::TAU };
            independent &= model::drift(&shifted, &p) == a && model::drift(s, &reference) == a;
        }
    }
    Ok(Check::new(
        "drift split exact; drift independent of γ and φ",
        worst <= 1e-15 && independent,
        format!("max |A_irr + A_rev − A| = {worst:.1e}"),
    ))
}

fn phi_null(states: &[BlochState], base: &ModelParams) -> Result<Check> {
    let mut s_noise = NoiseStream::new(0, 7);
    let mut worst = 0.0f64;
    for s in states {
        let d = [1e-3 * s_noise.standard_normal(), 1e-2 * s_noise.standard_normal()];
        let terms = entropy::coordinate_terms(s, d, base)?;
        let phi_part: f64 = entropy::env_terms(&terms[1], 1e-4)?.iter().map(|v| v.abs()).sum();
        worst = worst.max(phi_part);
    }
    Ok(Check::new("φ terms of environmental entropy vanish", worst == 0.0, format!("max |φ contribution| = {worst:.1e}")))
}

fn zero_flux(base: &ModelParams) -> Result<Check> {
    let mut worst = 0.0f64;
    for &g in &GAMMAS {
        let p = base.with_gamma(g)?;
        let pdf = StationaryPdf::new(&p)?;
        for k in 1..200 {
            let r = -1.0 + k as f64 / 100.0;
            let (d1, _) = model::diffusion_zz_derivatives(r, &p);
            let expect = (model::drift_z(r, &p) - d1) / model::diffusion_zz(r, &p);
            worst = worst.max((pdf.d_ln_density(r) - expect).abs() / expect.abs().max(1.0));
        }
    }
    Ok(Check::new("stationary density carries zero flux", worst < 1e-10, format!("max rel. error = {worst:.1e}")))
}

fn stationary_moments(base: &ModelParams) -> Result<Check> {
    let mut worst = 0.0f64;
    for &g in &GAMMAS {
        let pdf = StationaryPdf::new(&base.with_gamma(g)?)?;
        worst = worst.max((pdf.mean() + base.beta_eps()).abs());
        worst = worst.max((pdf.expect(|_| 1.0) - 1.0).abs());
    }
    Ok(Check::new("stationary mean = −βε and mass = 1", worst < 1e-9, format!("max error = {worst:.1e}")))
}

fn fp_conservation(base: &ModelParams) -> Result<Vec<Check>> {
    let p1 = base.with_gamma(1.0)?;
    let p2 = base.with_gamma(2.0)?;
    let solver = FpSolver::new(&p2, fokker_planck::DEFAULT_CELLS)?;
    let mut grid = fokker_planck::stationary_grid(&p1, fokker_planck::DEFAULT_CELLS)?;
    let (n, dt) = solver.plan_steps(1.0, None)?;
    let mut work = StepWork::new(grid.len());
    let mut values = grid.values().to_vec();
    let (mut mass_err, mut moment_err) = (0.0f64, 0.0f64);
    for _ in 0..n {
        let rate = solver.rate(&grid)?;
        let h = 2.0 / grid.len() as f64;
        let d_mean: f64 = grid.nodes().iter().zip(&rate).map(|(r, v)| r * v * h).sum();
        moment_err = moment_err.max((d_mean - solver.mean_drift(&grid)).abs());
        solver.step(&mut values, dt, &mut work)?;
        grid = PdfGrid::from_parts(grid.nodes().to_vec(), values.clone(), grid.t + dt)?;
        mass_err = mass_err.max((grid.mass() - 1.0).abs());
    }
    let eq = solver.equilibrium();
    let mut still = eq.values().to_vec();
    solver.step(&mut still, dt, &mut work)?;
    let drift: f64 = still.iter().zip(eq.values()).map(|(a, b)| ((a - b) / b).abs()).fold(0.0, f64::max);
    Ok(vec![
        Check::new("Fokker–Planck mass conservation", mass_err < 1e-12, format!("max |mass − 1| = {mass_err:.1e} over {n} steps")),
        Check::new(
            "first-moment law d<r_z>/dt = <A_z>",
            moment_err < 1e-6,
            format!("max deviation = {moment_err:.1e} over a 1 → 2 quench"),
        ),
        Check::new("discrete equilibrium is stationary", drift < 1e-12, format!("max relative change per step = {drift:.1e}")),
    ])
}

fn fp_convergence(base: &ModelParams) -> Result<Check> {
    let mut worst = 0.0f64;
    for g in [1.0, 2.0] {
        let p = base.with_gamma(g)?;
        let uniform = PdfGrid::from_fn(fokker_planck::DEFAULT_CELLS, |_| 0.5)?;
        let end = fokker_planck::evolve(&uniform, &p, 10.0, None)?;
        let pdf = StationaryPdf::new(&p)?;
        let exact = PdfGrid::from_fn(fokker_planck::DEFAULT_CELLS, |r| pdf.density(r))?;
        worst = worst.max(end.l1_distance(&exact)?);
    }
    Ok(Check::new("uniform density relaxes to p_st (γ = 1, 2; t = 10)", worst < 1e-3, format!("max L1 = {worst:.2e}")))
}

fn boundary(base: &ModelParams) -> Result<Check> {
    let mut worst = 0.0f64;
    for g in [1.0, 2.0] {
        let p = base.with_gamma(g)?;
        let num = entropy::boundary_correction_rate(&p)?.rate;
        let series = entropy::boundary_rate_series(&p);
        worst = worst.max((num / series - 1.0).abs());
    }
    Ok(Check::new("boundary rate agrees with its small-βε form", worst < 0.1, format!("max relative gap = {:.1}%", 100.0 * worst)))
}

fn determinism(base: &ModelParams, size: &SuiteSize) -> Result<Check> {
    let pdf = fokker_planck::stationary_grid(base, fokker_planck::DEFAULT_CELLS)?;
    let sampler = DensitySampler::new(&pdf)?;
    let spec = EnsembleSpec::new(*base, GammaSchedule::Constant(2.0), 200, 0.05, size.dt, size.seed);
    let with_threads = |threads: usize, block: usize| -> Result<Vec<u64>> {
        let mut spec = spec.clone();
        spec.block_size = block;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| crate::Error::InvalidParameter(e.to_string()))?;
        let out = pool.install(|| ensemble::run_ensemble(&spec, &sampler, &()))?;
        Ok(out.rz.iter().flat_map(|m| [m.mean.to_bits(), m.m2.to_bits()]).collect())
    };
    let a = with_threads(1, 64)?;
    let b = with_threads(3, 64)?;
    let c = with_threads(1, 64)?;
    let single = ensemble::run_ensemble(
        &EnsembleSpec::new(*base, GammaSchedule::Constant(1.0), 1, 0.01, 1e-3, 5),
        &FixedInitial(BlochState { rz: 0.2, phi: 0.0 }),
        &(),
    )?;
    let rerun = ensemble::run_ensemble(
        &EnsembleSpec::new(*base, GammaSchedule::Constant(1.0), 1, 0.01, 1e-3, 5),
        &FixedInitial(BlochState { rz: 0.2, phi: 0.0 }),
        &(),
    )?;
    let same = a == b && a == c && single.rz.last().map(|m| m.mean.to_bits()) == rerun.rz.last().map(|m| m.mean.to_bits());
    Ok(Check::new("bitwise reproducible across runs and worker counts", same, "1 vs 3 workers, repeated seed"))
}

fn protocol_checks(base: &ModelParams, size: &SuiteSize) -> Result<Vec<Check>> {
    let run = ProtocolRun::connect(*base, size.n_traj, size.t_max, size.dt, size.seed);
    let res = protocol::run(&run)?;
    let x = base.beta_eps();
    let worst_z = res
        .ledger()
        .iter()
        .map(|r| (r.mean_rz + x).abs() / r.sem_rz)
        .fold(0.0, f64::max);
    let initial = protocol::initial_states(&run, size.n_traj * 5)?;
    let pdf = StationaryPdf::new(&run.initial_params()?)?;
    let rz: Vec<f64> = initial.iter().map(|s| s.rz).collect();
    let ks_rz = analysis::ks_statistic_stationary(&rz, &pdf);
    let phi: Vec<f64> = initial.iter().map(|s| s.phi / std::f64::consts::TAU).collect();
    let ks_phi = analysis::ks_statistic(&phi, |u| u.clamp(0.0, 1.0));
    let crit = analysis::ks_critical_1pct(rz.len());
    let totals: Vec<f64> = res.final_totals().into_iter().map(|(_, v)| v).collect();
    let hist = EntropyHistogram::freedman_diaconis(&totals)?;
    Ok(vec![
        Check::new(
            "thermal mean r_z pinned at −βε under protocol M",
            worst_z <= 3.5,
            format!("max |<r_z> + βε| = {worst_z:.2} SEM over {} records (n = {})", res.ledger().len(), size.n_traj),
        ),
        Check::new("initial r_z follows p_st (KS, 1%)", ks_rz < crit, format!("D = {ks_rz:.4}, critical {crit:.4}")),
        Check::new("initial φ uniform (KS, 1%)", ks_phi < crit, format!("D = {ks_phi:.4}, critical {crit:.4}")),
        Check::new(
            "entropy histogram normalized",
            (hist.integral() - 1.0).abs() < 1e-12 && hist.counts().iter().sum::<u64>() == hist.n_total(),
            format!("∫ density − 1 = {:.1e}", hist.integral() - 1.0),
        ),
        Check::new("no trajectory faults", res.ensemble.faults.is_empty(), format!("{} faults", res.ensemble.faults.len())),
    ])
}

fn config_round_trip() -> Result<Check> {
    let c = RunConfig::default();
    let s = c.to_toml_string()?;
    let back = RunConfig::from_toml_str(&s)?;
    Ok(Check::new("configuration round-trips", back == c && back.to_toml_string()? == s, "default configuration"))
}

/// Run every check. Errors inside a check become failed checks.
pub fn run_suite(base: &ModelParams, size: &SuiteSize) -> Vec<Check> {
    let states = random_states(size.states, size.seed);
    let mut out = Vec::new();
    let mut push = |name: &str, r: Result<Vec<Check>>| match r {
        Ok(v) => out.extend(v),
        Err(e) => out.push(Check::new(name, false, format!("error: {e}"))),
    };
    push("diffusion matrix diagonal", diagonal_diffusion(&states, base).map(|c| vec![c]));
    push("drift split", drift_split(&states, base).map(|c| vec![c]));
    push("φ-null environmental entropy", phi_null(&states, base).map(|c| vec![c]));
    push("zero flux", zero_flux(base).map(|c| vec![c]));
    push("stationary moments", stationary_moments(base).map(|c| vec![c]));
    push("Fokker–Planck conservation", fp_conservation(base));
    push("Fokker–Planck convergence", fp_convergence(base).map(|c| vec![c]));
    push("boundary rate", boundary(base).map(|c| vec![c]));
    push("determinism", determinism(base, size).map(|c| vec![c]));
    push("protocol", protocol_checks(base, size));
    push("configuration", config_round_trip().map(|c| vec![c]));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pointwise_checks_pass() {
        let p = ModelParams::default();
        let states = random_states(500, 1);
        for c in [
            diagonal_diffusion(&states, &p).unwrap(),
            drift_split(&states, &p).unwrap(),
            phi_null(&states, &p).unwrap(),
            zero_flux(&p).unwrap(),
            stationary_moments(&p).unwrap(),
            config_round_trip().unwrap(),
        ] {
            assert!(c.passed, "{c}");
        }
    }
}
