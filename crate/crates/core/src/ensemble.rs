//! Seeded, parallel ensembles of reduced trajectories.
//!
//! Trajectories are grouped into fixed-size blocks. Blocks run on the rayon
//! pool and are folded with a pairwise tree whose shape depends only on the
//! number of blocks, so aggregates are bitwise identical for any worker count.

use std::ops::Range;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{BlochState, ModelParams};
use crate::noise::{NoiseIncrement, NoiseSource, NoiseStream, ZeroNoise};
use crate::sde::{self, GammaSchedule, ScheduledParams, DEFAULT_REFLECTION_MARGIN};

pub const DEFAULT_BLOCK_SIZE: usize = 64;

/// Running count, mean and sum of squared deviations.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    #[inline]
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    /// Chan et al. pairwise combination.
    pub fn merge(&self, other: &Moments) -> Moments {
        if self.count == 0 {
            return *other;
        }
        if other.count == 0 {
            return *self;
        }
        let n = self.count + other.count;
        let (na, nb, nf) = (self.count as f64, other.count as f64, n as f64);
        let d = other.mean - self.mean;
        Moments { count: n, mean: self.mean + d * nb / nf, m2: self.m2 + other.m2 + d * d * na * nb / nf }
    }

    pub fn from_slice(xs: &[f64]) -> Moments {
        let mut m = Moments::default();
        xs.iter().for_each(|&x| m.push(x));
        m
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn std_dev(&self) -> f64 {
        self.variance().sqrt()
    }

    /// Standard error of the mean.
    pub fn sem(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }
}

/// Results that can be combined left-to-right.
pub trait Mergeable: Send {
    fn merge(self, right: Self) -> Self;
}

/// Split `0..n_items` into blocks, evaluate them in parallel and fold them
/// with a fixed pairwise tree.
pub fn map_blocks<R, F>(n_items: usize, block_size: usize, f: F) -> Option<R>
where
    R: Mergeable,
    F: Fn(Range<usize>) -> R + Sync,
{
    let block_size = block_size.max(1);
    let n_blocks = n_items.div_ceil(block_size);
    let wave = (2 * rayon::current_num_threads()).max(1);
    let mut stack: Vec<(u32, R)> = Vec::new();
    for first in (0..n_blocks).step_by(wave) {
        let results: Vec<R> = (first..(first + wave).min(n_blocks))
            .into_par_iter()
            .map(|b| f(b * block_size..((b + 1) * block_size).min(n_items)))
            .collect();
        for r in results {
            let mut cur = (0u32, r);
            while stack.last().is_some_and(|(lvl, _)| *lvl == cur.0) {
                let (lvl, left) = stack.pop().expect("checked non-empty");
                cur = (lvl + 1, left.merge(cur.1));
            }
            stack.push(cur);
        }
    }
    let mut acc = stack.pop()?.1;
    while let Some((_, left)) = stack.pop() {
        acc = left.merge(acc);
    }
    Some(acc)
}

/// Draws the initial state of a trajectory from its own stream.
pub trait InitialSampler: Sync {
    fn sample(&self, stream: &mut NoiseStream) -> Result<BlochState>;
}

/// Every trajectory starts from the same state.
#[derive(Debug, Clone, Copy)]
pub struct FixedInitial(pub BlochState);

impl InitialSampler for FixedInitial {
    fn sample(&self, _stream: &mut NoiseStream) -> Result<BlochState> {
        Ok(self.0)
    }
}

/// What an observer sees for each step.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub traj: usize,
    pub step: usize,
    /// Time at the start of the step.
    pub t: f64,
    pub dt: f64,
    /// Parameters (including γ) in force during the step.
    pub params: &'a ModelParams,
    pub prev: &'a BlochState,
    pub next: &'a BlochState,
    pub noise: &'a NoiseIncrement,
    pub reflected: bool,
}

/// Per-trajectory accumulator attached to an ensemble.
///
/// Observers keep all mutable data in their `State`; the observer itself is
/// shared read-only between workers.
pub trait Observer: Sync {
    type State: Send;
    type Increment: Copy + Send;

    /// Names of the channels reported by [`Observer::values`].
    fn channel_names(&self) -> Vec<String>;

    /// Names of per-trajectory scalars reported by [`Observer::extras`].
    fn extra_names(&self) -> Vec<String> {
        Vec::new()
    }

    fn begin(&self, traj: usize, initial: &BlochState) -> Result<Self::State>;

    fn observe(&self, state: &mut Self::State, ctx: &StepContext<'_>) -> Result<Self::Increment>;

    /// Current channel values (typically running totals).
    fn values(&self, state: &Self::State, out: &mut [f64]);

    fn extras(&self, _state: &Self::State) -> Vec<f64> {
        Vec::new()
    }
}

impl Observer for () {
    type State = ();
    type Increment = ();

    fn channel_names(&self) -> Vec<String> {
        Vec::new()
    }
    fn begin(&self, _: usize, _: &BlochState) -> Result<()> {
        Ok(())
    }
    fn observe(&self, _: &mut (), _: &StepContext<'_>) -> Result<()> {
        Ok(())
    }
    fn values(&self, _: &(), _: &mut [f64]) {}
}

/// Everything that defines an ensemble apart from sampler and observer.
#[derive(Debug, Clone)]
pub struct EnsembleSpec {
    pub params: ModelParams,
    pub schedule: GammaSchedule,
    pub n_traj: usize,
    pub t_max: f64,
    pub dt: f64,
    pub master_seed: u64,
    /// Aggregates are kept every `record_stride` steps (and at the end).
    pub record_stride: usize,
    pub reflection_margin: f64,
    pub block_size: usize,
    /// Replace the Wiener increments by zeros (initial states are still sampled).
    pub zero_noise: bool,
}

impl EnsembleSpec {
    pub fn new(
        params: ModelParams,
        schedule: GammaSchedule,
        n_traj: usize,
        t_max: f64,
        dt: f64,
        master_seed: u64,
    ) -> Self {
        Self {
            params,
            schedule,
            n_traj,
            t_max,
            dt,
            master_seed,
            record_stride: 1,
            reflection_margin: DEFAULT_REFLECTION_MARGIN,
            block_size: DEFAULT_BLOCK_SIZE,
            zero_noise: false,
        }
    }

    pub fn with_record_stride(mut self, stride: usize) -> Self {
        self.record_stride = stride;
        self
    }

    /// Step indices at which aggregates are recorded.
    pub fn record_steps(&self) -> Result<Vec<usize>> {
        let n = sde::step_count(self.t_max, self.dt)?;
        let stride = self.record_stride.max(1);
        let mut steps: Vec<usize> = (0..=n).step_by(stride).collect();
        if steps.last() != Some(&n) {
            steps.push(n);
        }
        Ok(steps)
    }

    fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.n_traj == 0 {
            bad.push("n_traj must be >= 1".to_string());
        }
        if self.record_stride == 0 {
            bad.push("record_stride must be >= 1".to_string());
        }
        if !(self.reflection_margin > 0.0 && self.reflection_margin < 0.5) {
            bad.push(format!("reflection margin {} outside (0, 0.5)", self.reflection_margin));
        }
        if let Err(e) = sde::step_count(self.t_max, self.dt) {
            bad.push(e.to_string());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }
}

/// Receives what a driven trajectory produces.
pub(crate) trait Recorder<I> {
    fn record(&mut self, slot: usize, t: f64, state: &BlochState, values: &[f64]);
    fn increment(&mut self, _inc: &I) {}
}

/// Final bookkeeping of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryEnd {
    pub index: usize,
    pub initial: BlochState,
    pub last: BlochState,
    /// Observer channels at the final time.
    pub values: Vec<f64>,
    pub extras: Vec<f64>,
    pub reflections: u64,
    pub fault: Option<String>,
}

pub(crate) struct Driver<'a, O: Observer> {
    pub spec: &'a EnsembleSpec,
    pub observer: &'a O,
    pub record_steps: &'a [usize],
    pub n_channels: usize,
}

impl<O: Observer> Driver<'_, O> {
    /// Sample, integrate and observe trajectory `traj`.
    pub(crate) fn drive<S, R>(&self, traj: usize, sampler: &S, rec: &mut R) -> TrajectoryEnd
    where
        S: InitialSampler,
        R: Recorder<O::Increment>,
    {
        let mut stream = NoiseStream::new(self.spec.master_seed, traj as u64);
        let mut end = TrajectoryEnd {
            index: traj,
            initial: BlochState { rz: f64::NAN, phi: f64::NAN },
            last: BlochState { rz: f64::NAN, phi: f64::NAN },
            values: vec![f64::NAN; self.n_channels],
            extras: Vec::new(),
            reflections: 0,
            fault: None,
        };
        let initial = match sampler.sample(&mut stream) {
            Ok(s) => s,
            Err(e) => {
                end.fault = Some(format!("initial state: {e}"));
                return end;
            }
        };
        end.initial = initial;
        let result = if self.spec.zero_noise {
            self.integrate(traj, initial, &mut ZeroNoise, rec, &mut end)
        } else {
            self.integrate(traj, initial, &mut stream, rec, &mut end)
        };
        if let Err(e) = result {
            end.fault = Some(e.to_string());
        }
        end
    }

    fn integrate<N: NoiseSource, R: Recorder<O::Increment>>(
        &self,
        traj: usize,
        initial: BlochState,
        noise: &mut N,
        rec: &mut R,
        end: &mut TrajectoryEnd,
    ) -> Result<()> {
        let spec = self.spec;
        let dt = spec.dt;
        let n = *self.record_steps.last().expect("record steps never empty");
        let mut sp = ScheduledParams::new(&spec.params, spec.schedule)?;
        let mut obs = self.observer.begin(traj, &initial)?;
        let mut values = vec![0.0; self.n_channels];
        self.observer.values(&obs, &mut values);
        rec.record(0, 0.0, &initial, &values);
        let mut next_slot = 1;
        let mut s = initial;
        for k in 0..n {
            let t = k as f64 * dt;
            let p = sp.at(t)?;
            let w = noise.increment(dt);
            let out =
                sde::step_with_margin(&s, &w, dt, p, spec.reflection_margin).map_err(|e| e.into_error(traj, k))?;
            end.reflections += out.reflected as u64;
            let ctx = StepContext {
                traj,
                step: k,
                t,
                dt,
                params: p,
                prev: &s,
                next: &out.state,
                noise: &w,
                reflected: out.reflected,
            };
            let inc = self.observer.observe(&mut obs, &ctx)?;
            rec.increment(&inc);
            s = out.state;
            if self.record_steps.get(next_slot) == Some(&(k + 1)) {
                self.observer.values(&obs, &mut values);
                if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
                    return Err(Error::Integration {
                        traj,
                        step: k,
                        reason: format!("observer channel {bad} is not finite"),
                    });
                }
                rec.record(next_slot, (k + 1) as f64 * dt, &s, &values);
                next_slot += 1;
            }
        }
        end.last = s;
        end.values.copy_from_slice(&values);
        end.extras = self.observer.extras(&obs);
        Ok(())
    }
}

/// Ensemble aggregates at the recorded times.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleOutput {
    pub times: Vec<f64>,
    pub channel_names: Vec<String>,
    pub extra_names: Vec<String>,
    pub rz: Vec<Moments>,
    /// `channels[c][slot]`.
    pub channels: Vec<Vec<Moments>>,
    /// One entry per trajectory, in index order.
    pub trajectories: Vec<TrajectoryEnd>,
    pub reflections: u64,
    pub faults: Vec<(usize, String)>,
}

impl EnsembleOutput {
    pub fn channel(&self, name: &str) -> Option<&[Moments]> {
        self.channel_names.iter().position(|c| c == name).map(|i| self.channels[i].as_slice())
    }

    /// Turn recorded faults into an error.
    pub fn check_faults(&self) -> Result<()> {
        match self.faults.first() {
            None => Ok(()),
            Some((i, msg)) => Err(Error::EnsembleFaults {
                count: self.faults.len(),
                n_traj: self.trajectories.len(),
                first: Box::new(Error::Integration { traj: *i, step: 0, reason: msg.clone() }),
            }),
        }
    }
}

struct BlockResult {
    rz: Vec<Moments>,
    channels: Vec<Vec<Moments>>,
    ends: Vec<TrajectoryEnd>,
}

impl Mergeable for BlockResult {
    fn merge(mut self, right: Self) -> Self {
        for (a, b) in self.rz.iter_mut().zip(&right.rz) {
            *a = a.merge(b);
        }
        for (ca, cb) in self.channels.iter_mut().zip(&right.channels) {
            for (a, b) in ca.iter_mut().zip(cb) {
                *a = a.merge(b);
            }
        }
        self.ends.extend(right.ends);
        self
    }
}

/// Buffers one trajectory so a fault can discard it wholesale.
struct BufferRecorder {
    rz: Vec<f64>,
    values: Vec<f64>,
    n_channels: usize,
}

impl<I> Recorder<I> for BufferRecorder {
    fn record(&mut self, slot: usize, _t: f64, state: &BlochState, values: &[f64]) {
        self.rz[slot] = state.rz;
        self.values[slot * self.n_channels..(slot + 1) * self.n_channels].copy_from_slice(values);
    }
}

/// Run `spec.n_traj` trajectories and aggregate them.
///
/// Trajectory faults do not abort the run: faulted trajectories are left out
/// of the aggregates and listed in [`EnsembleOutput::faults`].
pub fn run_ensemble<S, O>(spec: &EnsembleSpec, sampler: &S, observer: &O) -> Result<EnsembleOutput>
where
    S: InitialSampler,
    O: Observer,
{
    spec.validate()?;
    let record_steps = spec.record_steps()?;
    let n_slots = record_steps.len();
    let channel_names = observer.channel_names();
    let n_channels = channel_names.len();
    let driver = Driver { spec, observer, record_steps: &record_steps, n_channels };

    let block = |range: Range<usize>| {
        let mut res = BlockResult {
            rz: vec![Moments::default(); n_slots],
            channels: vec![vec![Moments::default(); n_slots]; n_channels],
            ends: Vec::with_capacity(range.len()),
        };
        let mut buf = BufferRecorder { rz: vec![0.0; n_slots], values: vec![0.0; n_slots * n_channels], n_channels };
        for traj in range {
            let end = driver.drive(traj, sampler, &mut buf);
            if end.fault.is_none() {
                for slot in 0..n_slots {
                    res.rz[slot].push(buf.rz[slot]);
                    for c in 0..n_channels {
                        res.channels[c][slot].push(buf.values[slot * n_channels + c]);
                    }
                }
            }
            res.ends.push(end);
        }
        res
    };
    let merged = map_blocks(spec.n_traj, spec.block_size, block).expect("n_traj >= 1 was validated");

    let faults: Vec<(usize, String)> =
        merged.ends.iter().filter_map(|e| e.fault.as_ref().map(|f| (e.index, f.clone()))).collect();
    if !faults.is_empty() {
        log::warn!("{} of {} trajectories faulted", faults.len(), spec.n_traj);
    }
    Ok(EnsembleOutput {
        times: record_steps.iter().map(|&k| k as f64 * spec.dt).collect(),
        channel_names,
        extra_names: observer.extra_names(),
        rz: merged.rz,
        channels: merged.channels,
        reflections: merged.ends.iter().map(|e| e.reflections).sum(),
        trajectories: merged.ends,
        faults,
    })
}

/// Full record of a single trajectory of an ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord<I> {
    pub times: Vec<f64>,
    pub states: Vec<BlochState>,
    /// `values[slot][channel]`.
    pub values: Vec<Vec<f64>>,
    pub increments: Vec<I>,
    pub end: TrajectoryEnd,
}

struct FullRecorder<I> {
    times: Vec<f64>,
    states: Vec<BlochState>,
    values: Vec<Vec<f64>>,
    increments: Vec<I>,
}

impl<I: Copy> Recorder<I> for FullRecorder<I> {
    fn record(&mut self, _slot: usize, t: f64, state: &BlochState, values: &[f64]) {
        self.times.push(t);
        self.states.push(*state);
        self.values.push(values.to_vec());
    }
    fn increment(&mut self, inc: &I) {
        self.increments.push(*inc);
    }
}

/// Re-run trajectory `index` of the ensemble `spec` exactly, recording every
/// `spec.record_stride` steps and every observer increment.
pub fn replay_trajectory<S, O>(
    spec: &EnsembleSpec,
    sampler: &S,
    observer: &O,
    index: usize,
) -> Result<TrajectoryRecord<O::Increment>>
where
    S: InitialSampler,
    O: Observer,
{
    spec.validate()?;
    if index >= spec.n_traj {
        return Err(Error::Index { index, n_traj: spec.n_traj });
    }
    let record_steps = spec.record_steps()?;
    let n_channels = observer.channel_names().len();
    let driver = Driver { spec, observer, record_steps: &record_steps, n_channels };
    let mut rec = FullRecorder { times: Vec::new(), states: Vec::new(), values: Vec::new(), increments: Vec::new() };
    let end = driver.drive(index, sampler, &mut rec);
    if let Some(f) = &end.fault {
        return Err(Error::Integration { traj: index, step: rec.increments.len(), reason: f.clone() });
    }
    Ok(TrajectoryRecord { times: rec.times, states: rec.states, values: rec.values, increments: rec.increments, end })
}
