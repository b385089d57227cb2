//! Protocol runs end to end at small sizes.

use std::sync::OnceLock;

use qsd_entropy::analysis::{self, summarize};
use qsd_entropy::model::{ModelParams, StationaryPdf};
use qsd_entropy::protocol::{self, ProtocolKind, ProtocolResults, ProtocolRun};
use qsd_entropy::Error;

fn small_connect() -> &'static ProtocolResults {
    static RUN: OnceLock<ProtocolResults> = OnceLock::new();
    RUN.get_or_init(|| {
        let mut run = ProtocolRun::connect(ModelParams::default(), 2000, 2.0, 1e-3, 41);
        run.numerics.record_stride = 1;
        protocol::run(&run).unwrap()
    })
}

#[test]
fn protocols_differ_only_by_swapped_couplings() {
    let p = ModelParams::default();
    let m = ProtocolRun::connect(p, 100, 2.0, 1e-4, 3);
    let mbar = ProtocolRun::disconnect(p, 100, 2.0, 1e-4, 3);
    assert_eq!((m.gamma_init, m.gamma_dyn), (mbar.gamma_dyn, mbar.gamma_init));
    let mut swapped = mbar.clone();
    std::mem::swap(&mut swapped.gamma_init, &mut swapped.gamma_dyn);
    swapped.kind = ProtocolKind::Connect;
    assert_eq!(swapped, m);
}

#[test]
fn initial_states_follow_the_initial_stationary_law() {
    let p = ModelParams::default();
    for run in [ProtocolRun::connect(p, 100_000, 2.0, 1e-4, 8), ProtocolRun::disconnect(p, 100_000, 2.0, 1e-4, 8)] {
        let pdf = StationaryPdf::new(&run.initial_params().unwrap()).unwrap();
        let states = protocol::initial_states(&run, run.n_traj).unwrap();
        let rz: Vec<f64> = states.iter().map(|s| s.rz).collect();
        let d = analysis::ks_statistic_stationary(&rz, &pdf);
        assert!(d < analysis::ks_critical_1pct(rz.len()), "{}: D = {d}", run.kind.label());
        let phi: Vec<f64> = states.iter().map(|s| s.phi / std::f64::consts::TAU).collect();
        let d = analysis::ks_statistic(&phi, |u| u.clamp(0.0, 1.0));
        assert!(d < analysis::ks_critical_1pct(phi.len()), "φ: D = {d}");
    }
}

#[test]
fn connecting_drives_states_towards_the_eigenstates() {
    let res = small_connect();
    let finals: Vec<f64> = res.ensemble.trajectories.iter().map(|t| t.last.rz).collect();
    let frac = finals.iter().filter(|r| r.abs() > 0.8).count() as f64 / finals.len() as f64;
    let initial = StationaryPdf::new(&res.run.initial_params().unwrap()).unwrap();
    let thermal = initial.mass_between(-1.0, -0.8) + initial.mass_between(0.8, 1.0);
    assert!(frac > thermal, "{frac} vs {thermal}");
}

#[test]
fn relaxation_approaches_target() {
    let rel = small_connect().relaxation();
    let (first, last) = (rel.first().unwrap().1, rel.last().unwrap().1);
    assert!(last < 0.1 * first, "{first} -> {last}");
}

#[test]
fn replay_matches_ensemble_member() {
    let res = small_connect();
    let k = res.ensemble.channel_names.iter().position(|c| c == "ds_tot").unwrap();
    for i in [0, 7, 1999] {
        let rep = res.trajectory_report(i).unwrap();
        let member = &res.ensemble.trajectories[i];
        assert_eq!(rep.trajectory.states.last().unwrap(), &member.last);
        assert_eq!(rep.cumulative.last().unwrap()[2], member.values[k]);
    }
    let fresh = protocol::single_trajectory_report(&res.run, 7).unwrap();
    assert_eq!(fresh, res.trajectory_report(7).unwrap());
}

#[test]
fn ledger_is_consistent() {
    let res = small_connect();
    for row in res.ledger() {
        assert!((row.mean_ds_sys + row.mean_ds_env - row.mean_ds_tot).abs() < 1e-12);
        assert!((row.corrected_ds_tot - row.mean_ds_tot - res.boundary_rate() * row.t).abs() < 1e-12);
    }
    let (mean, _) = res.final_mean();
    let direct: f64 = res.final_totals_corrected().iter().map(|(_, v)| v).sum::<f64>() / res.run.n_traj as f64;
    assert!((mean - direct).abs() < 1e-12);
}

#[test]
fn summary_flags_corrupted_values() {
    let mut res = small_connect().clone();
    res.ensemble.trajectories[5].values[2] = f64::NAN;
    res.ensemble.trajectories[11].values[0] = f64::INFINITY;
    match summarize(&res) {
        Err(Error::Incomplete(msg)) => assert!(msg.contains("[5, 11]"), "{msg}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn summary_of_a_clean_run() {
    let s = summarize(small_connect()).unwrap();
    assert_eq!(s.completed, 2000);
    assert!(s.checks.iter().any(|c| c.name.contains("KL")));
    assert!((s.kl_oracle - 0.324_304_162_126_826).abs() < 1e-10);
}

#[test]
fn same_seed_same_results_across_worker_counts() {
    let run = ProtocolRun::disconnect(ModelParams::default(), 150, 0.2, 1e-3, 77);
    let go = |threads| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| protocol::run(&run).unwrap())
    };
    let (a, b) = (go(1), go(3));
    let bits = |r: &ProtocolResults| r.ledger().iter().map(|l| (l.mean_ds_tot.to_bits(), l.sem_ds_tot.to_bits())).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(a.final_totals(), b.final_totals());
}

#[test]
fn snapshot_cadence_refinement_changes_little() {
    let base = ProtocolRun::connect(ModelParams::default(), 300, 0.5, 1e-4, 5);
    let mut fine = base.clone();
    fine.numerics.snapshot_cadence = 0.0025;
    let (a, b) = (protocol::run(&base).unwrap(), protocol::run(&fine).unwrap());
    let diffs: Vec<f64> = a.final_totals().iter().zip(b.final_totals()).map(|(x, y)| (x.1 - y.1).abs()).collect();
    let mean_diff = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let (ma, mb) = (a.final_mean().0, b.final_mean().0);
    assert!(mean_diff < 2e-3, "mean per-trajectory change {mean_diff}");
    assert!((ma - mb).abs() < 0.1 * a.final_mean().1, "{ma} vs {mb}");
}
