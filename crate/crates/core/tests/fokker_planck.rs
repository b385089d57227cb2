//! Fokker–Planck solver: convergence, conservation, refinement, sampling.

use proptest::prelude::*;
use qsd_entropy::analysis;
use qsd_entropy::fokker_planck::{self, FpSolver, GridSampler, PdfGrid, StepWork};
use qsd_entropy::model::{ModelParams, StationaryPdf};
use qsd_entropy::noise::NoiseStream;

fn params(gamma: f64) -> ModelParams {
    ModelParams::new(0.1, 1.0, 0.01, gamma).unwrap()
}

fn analytic_on_grid(gamma: f64, n: usize) -> PdfGrid {
    let pdf = StationaryPdf::new(&params(gamma)).unwrap();
    PdfGrid::from_fn(n, |r| pdf.density(r)).unwrap()
}

#[test]
fn uniform_relaxes_to_stationary() {
    for g in [1.0, 2.0] {
        let start = PdfGrid::from_fn(400, |_| 0.5).unwrap();
        let end = fokker_planck::evolve(&start, &params(g), 10.0, None).unwrap();
        let l1 = end.l1_distance(&analytic_on_grid(g, 400)).unwrap();
        assert!(l1 < 1e-3, "γ = {g}: L1 = {l1}");
        assert!((end.mass() - 1.0).abs() < 1e-10);
    }
}

#[test]
fn higher_coupling_concentrates_at_the_poles() {
    let mut prev = 0.0;
    for g in [1.0, 1.5, 2.0, 3.0] {
        let grid = fokker_planck::stationary_grid(&params(g), 400).unwrap();
        let edge = grid.mass_beyond(0.8);
        assert!(edge > prev, "γ = {g}: {edge} <= {prev}");
        prev = edge;
        let below: f64 = grid.weighted_sum(|r, p| if r < 0.0 { p } else { 0.0 });
        assert!(below > 0.5, "γ = {g}: mass below zero {below}");
    }
}

#[test]
fn grid_refinement() {
    for g in [2.0, 3.0] {
        let err = |n| fokker_planck::stationary_grid(&params(g), n).unwrap().l1_distance(&analytic_on_grid(g, n)).unwrap();
        let (e1, e2, e3) = (err(100), err(200), err(400));
        assert!(e1 / e2 >= 3.0 && e2 / e3 >= 3.0, "γ = {g}: {e1} {e2} {e3}");
    }
    let e = fokker_planck::stationary_grid(&params(1.0), 400).unwrap().l1_distance(&analytic_on_grid(1.0, 400)).unwrap();
    assert!(e < 1e-5, "γ = 1: {e}");
}

#[test]
fn first_moment_law_and_mass_every_step() {
    let solver = FpSolver::new(&params(2.0), 400).unwrap();
    let mut grid = fokker_planck::stationary_grid(&params(1.0), 400).unwrap();
    let (n, dt) = solver.plan_steps(0.5, None).unwrap();
    let mut work = StepWork::new(400);
    let mut v = grid.values().to_vec();
    let h = 2.0 / 400.0;
    for _ in 0..n {
        let rate = solver.rate(&grid).unwrap();
        let d_mean: f64 = grid.nodes().iter().zip(&rate).map(|(r, q)| r * q * h).sum();
        assert!((d_mean - solver.mean_drift(&grid)).abs() < 1e-6);
        assert!(rate.iter().sum::<f64>().abs() * h < 1e-12);
        solver.step(&mut v, dt, &mut work).unwrap();
        grid = PdfGrid::from_parts(grid.nodes().to_vec(), v.clone(), grid.t + dt).unwrap();
        assert!((grid.mass() - 1.0).abs() < 1e-12);
        assert!(v.iter().all(|p| *p >= 0.0));
    }
}

#[test]
fn stationary_mean_matches_thermal_value_on_grid() {
    for g in [1.0, 1.2, 1.5, 2.0, 3.0] {
        let grid = fokker_planck::stationary_grid(&params(g), 400).unwrap();
        assert!((grid.mean() + 0.1).abs() < 1e-12, "γ = {g}: {}", grid.mean());
        let solver = FpSolver::new(&params(g), 400).unwrap();
        assert!(solver.mean_drift(&grid).abs() < 1e-12);
    }
}

#[test]
fn uniform_density_samples_uniformly() {
    let grid = PdfGrid::from_fn(400, |_| 0.5).unwrap();
    let sampler = GridSampler::new(&grid).unwrap();
    let mut s = NoiseStream::new(11, 0);
    let xs: Vec<f64> = (0..100_000).map(|_| sampler.sample(&mut s)).collect();
    let d = analysis::ks_statistic(&xs, |r| ((r + 1.0) / 2.0).clamp(0.0, 1.0));
    assert!(d < analysis::ks_critical_1pct(xs.len()), "D = {d}");
}

#[test]
fn stationary_samples_follow_analytic_law() {
    let p = params(2.0);
    let sampler = GridSampler::new(&fokker_planck::stationary_grid(&p, 400).unwrap()).unwrap();
    let pdf = StationaryPdf::new(&p).unwrap();
    let mut s = NoiseStream::new(12, 0);
    let xs: Vec<f64> = (0..100_000).map(|_| sampler.sample(&mut s)).collect();
    let d = analysis::ks_statistic_stationary(&xs, &pdf);
    assert!(d < analysis::ks_critical_1pct(xs.len()), "D = {d}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn mass_conserved_from_any_density(
        weights in proptest::collection::vec(0.01..1.0f64, 8), g in 1.0..3.0f64,
    ) {
        // piecewise-smooth positive start built from a few bumps
        let f = |r: f64| weights.iter().enumerate().map(|(k, w)| w * (-(r - (-0.9 + 0.25 * k as f64)).powi(2) * 40.0).exp()).sum::<f64>() + 1e-3;
        let start = PdfGrid::from_fn(200, f).unwrap().normalize().unwrap();
        let solver = FpSolver::new(&params(g), 200).unwrap();
        let end = solver.evolve(&start, 0.2, None).unwrap();
        prop_assert!((end.mass() - 1.0).abs() < 1e-12);
        prop_assert!(end.values().iter().all(|p| *p >= 0.0));
    }
}
