//! Configuration files and run manifests on disk.

use qsd_entropy::config::RunConfig;
use qsd_entropy::output;
use qsd_entropy::protocol::ProtocolKind;
use qsd_entropy::Error;

const SMALL: &str = r#"
[model]
beta = 0.1
epsilon = 1.0
alpha = 0.01

[protocol]
kind = "Mbar"
n_traj = 500
t_max = 0.5
dt = 1e-3
master_seed = 9

[output]
dir = "somewhere"
"#;

#[test]
fn file_loads_into_a_protocol_run() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    std::fs::write(&path, SMALL).unwrap();
    let cfg = RunConfig::load(&path).unwrap();
    let run = cfg.protocol_run().unwrap();
    assert_eq!(run.kind, ProtocolKind::Disconnect);
    assert_eq!((run.gamma_init, run.gamma_dyn), (2.0, 1.0));
    assert_eq!((run.n_traj, run.master_seed), (500, 9));
    assert!((run.params.lambda_sq() - 0.2).abs() < 1e-15);
}

#[test]
fn manifest_reloads_to_the_same_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::from_toml_str(SMALL).unwrap();
    let path = output::write_manifest(dir.path(), &cfg, "run").unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("# "), "units comment first");
    let back = RunConfig::load(&path).unwrap();
    assert_eq!(back.protocol_run().unwrap(), cfg.protocol_run().unwrap());
    assert_eq!(back.output.dir, dir.path());
    assert_eq!(back.meta.unwrap().command, "run");
}

#[test]
fn every_violation_is_reported() {
    let bad = SMALL.replace("dt = 1e-3", "dt = -1.0").replace("n_traj = 500", "n_traj = 0").replace("\"Mbar\"", "\"sideways\"");
    let cfg = RunConfig::from_toml_str(&bad).unwrap();
    match cfg.validate() {
        Err(Error::Config(v)) => assert!(v.len() >= 3, "{v:?}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn unknown_keys_are_rejected() {
    let bad = SMALL.replace("alpha = 0.01", "alpha = 0.01\ntemperature = 3.0");
    assert!(RunConfig::from_toml_str(&bad).is_err());
}

#[test]
fn missing_file_is_an_io_error() {
    let err = RunConfig::load(std::path::Path::new("/nonexistent/run.toml")).unwrap_err();
    assert!(matches!(err, Error::Io(_)), "{err:?}");
}
