//! Cross-checks of the reduced dynamics against the full coherence vector:
//! drift of the purity under the 3-D integrator, and pathwise agreement of
//! the reduced and 3-D `r_z` under identical noise.

use crate::ensemble::{self, InitialSampler, Mergeable, Moments};
use crate::error::{Error, Result};
use crate::model::{Bloch3, BlochState, ModelParams};
use crate::noise::{NoiseSource, NoiseStream, PrescribedNoise};
use crate::sde::{self, GammaSchedule};

/// Ensemble statistics of `|r² − 1|` over time.
#[derive(Debug, Clone, PartialEq)]
pub struct PurityReport {
    pub times: Vec<f64>,
    pub deviation: Vec<Moments>,
}

impl PurityReport {
    pub fn final_mean(&self) -> f64 {
        self.deviation.last().map_or(f64::NAN, |m| m.mean)
    }
}

struct PurityBlock {
    deviation: Vec<Moments>,
    faults: Vec<usize>,
}

impl Mergeable for PurityBlock {
    fn merge(mut self, right: Self) -> Self {
        for (a, b) in self.deviation.iter_mut().zip(&right.deviation) {
            *a = a.merge(b);
        }
        self.faults.extend(right.faults);
        self
    }
}

/// Integrate `n_traj` pure states (on the sphere) with the 3-D scheme and
/// record the mean radial deviation every `record_stride` steps.
#[allow(clippy::too_many_arguments)]
pub fn purity_drift<S: InitialSampler>(
    params: &ModelParams,
    sampler: &S,
    n_traj: usize,
    t_max: f64,
    dt: f64,
    master_seed: u64,
    record_stride: usize,
) -> Result<PurityReport> {
    let n = sde::step_count(t_max, dt)?;
    let stride = record_stride.max(1);
    let slots: Vec<usize> = (0..=n).filter(|k| k % stride == 0 || *k == n).collect();
    let run_block = |range: std::ops::Range<usize>| {
        let mut block = PurityBlock { deviation: vec![Moments::default(); slots.len()], faults: Vec::new() };
        'traj: for i in range {
            let mut noise = NoiseStream::new(master_seed, i as u64);
            let Ok(start) = sampler.sample(&mut noise) else {
                block.faults.push(i);
                continue;
            };
            let mut s = Bloch3::from_reduced(&start);
            let mut devs = Vec::with_capacity(slots.len());
            let mut next_slot = 0;
            for k in 0..=n {
                if slots[next_slot] == k {
                    devs.push((s.radius_sq() - 1.0).abs());
                    next_slot += 1;
                }
                if k == n {
                    break;
                }
                match sde::step_3d(&s, &noise.increment(dt), dt, params) {
                    Ok(next) => s = next,
                    Err(_) => {
                        block.faults.push(i);
                        continue 'traj;
                    }
                }
            }
            for (m, d) in block.deviation.iter_mut().zip(devs) {
                m.push(d);
            }
        }
        block
    };
    let out = ensemble::map_blocks(n_traj, ensemble::DEFAULT_BLOCK_SIZE, run_block)
        .ok_or_else(|| Error::InvalidParameter("n_traj must be >= 1".into()))?;
    if let Some(&first) = out.faults.first() {
        return Err(Error::EnsembleFaults {
            count: out.faults.len(),
            n_traj,
            first: Box::new(Error::Integration { traj: first, step: 0, reason: "3-D step non-finite".into() }),
        });
    }
    Ok(PurityReport { times: slots.iter().map(|&k| k as f64 * dt).collect(), deviation: out.deviation })
}

/// Difference between reduced and 3-D `r_z` paths driven by the same noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathComparison {
    pub rms: f64,
    pub max_abs: f64,
    pub steps: usize,
}

/// Drive both integrators from `initial` with trajectory `index`'s noise.
/// The reduced path reflects as usual; the 3-D path is unconstrained.
pub fn compare_paths(
    params: &ModelParams,
    initial: BlochState,
    t_max: f64,
    dt: f64,
    master_seed: u64,
    index: u64,
) -> Result<PathComparison> {
    let n = sde::step_count(t_max, dt)?;
    let mut stream = NoiseStream::new(master_seed, index);
    let incs: Vec<_> = (0..n).map(|_| stream.increment(dt)).collect();
    let schedule = GammaSchedule::Constant(params.gamma());
    let reduced = sde::simulate(initial, schedule, params, t_max, dt, &mut PrescribedNoise::new(incs.clone()))?;
    let full = sde::simulate_3d(Bloch3::from_reduced(&initial), schedule, params, t_max, dt, &mut PrescribedNoise::new(incs))?;
    let (mut sq, mut max_abs) = (0.0, 0.0f64);
    for (a, b) in reduced.states.iter().zip(&full) {
        let d = a.rz - b.rz;
        sq += d * d;
        max_abs = max_abs.max(d.abs());
    }
    Ok(PathComparison { rms: (sq / (n + 1) as f64).sqrt(), max_abs, steps: n })
}
