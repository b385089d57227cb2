//! Run configuration: a sectioned TOML file in natural units (ħ = k_B = 1,
//! time in units of 1/ε).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::protocol::{Numerics, ProtocolKind, ProtocolRun};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub beta: f64,
    pub epsilon: f64,
    pub alpha: f64,
    /// Optional; must agree with `sqrt(2 alpha / beta)` when given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub gamma0: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { beta: 0.1, epsilon: 1.0, alpha: 0.01, lambda: None, gamma0: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolSection {
    /// "M", "Mbar" or "custom".
    pub kind: String,
    /// Required for "custom"; must match the named protocol otherwise.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_init: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_dyn: Option<f64>,
    pub n_traj: usize,
    pub t_max: f64,
    pub dt: f64,
    pub master_seed: u64,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        Self {
            kind: "M".into(),
            gamma_init: None,
            gamma_dyn: None,
            n_traj: 100_000,
            t_max: 2.0,
            dt: 1e-4,
            master_seed: 2024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NumericsSection {
    pub grid_cells: usize,
    pub snapshot_cadence: f64,
    /// Omitted: half the explicit stability bound.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt_pde: Option<f64>,
    pub record_stride: usize,
    pub reflection_margin: f64,
    pub block_size: usize,
}

impl Default for NumericsSection {
    fn default() -> Self {
        let n = Numerics::default();
        Self {
            grid_cells: n.grid_cells,
            snapshot_cadence: n.snapshot_cadence,
            dt_pde: n.dt_pde,
            record_stride: n.record_stride,
            reflection_margin: n.reflection_margin,
            block_size: n.block_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Also run the 3-D purity cross-check.
    pub purity_3d: bool,
    /// Number of trajectories whose recorded paths are written out.
    pub dump_trajectories: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("results"), purity_3d: false, dump_trajectories: 0 }
    }
}

/// Provenance written alongside the configuration in a run manifest.
/// Ignored when a manifest is read back as a configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunMeta {
    pub program: String,
    pub version: String,
    pub command: String,
    pub units: String,
    pub rng: String,
}

impl RunMeta {
    pub fn new(command: &str) -> Self {
        Self {
            program: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            units: crate::output::UNITS.into(),
            rng: "ChaCha8 keyed by master_seed, stream = trajectory index; ziggurat normals".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub protocol: ProtocolSection,
    pub numerics: NumericsSection,
    pub output: OutputSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub meta: Option<RunMeta>,
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        Ok(toml::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn model_params(&self) -> Result<ModelParams> {
        let m = &self.model;
        match m.lambda {
            Some(l) => ModelParams::with_lambda(m.beta, m.epsilon, m.alpha, l, m.gamma0, m.gamma0),
            None => ModelParams::with_baseline(m.beta, m.epsilon, m.alpha, m.gamma0, m.gamma0),
        }
    }

    fn couplings(&self, bad: &mut Vec<String>) -> Option<(ProtocolKind, f64, f64)> {
        let p = &self.protocol;
        let Some(kind) = ProtocolKind::from_label(&p.kind) else {
            bad.push(format!("protocol.kind must be \"M\", \"Mbar\" or \"custom\" (got {:?})", p.kind));
            return None;
        };
        match (kind.couplings(), p.gamma_init, p.gamma_dyn) {
            (Some((gi, gd)), i, d) => {
                if i.is_some_and(|v| v != gi) || d.is_some_and(|v| v != gd) {
                    bad.push(format!("protocol {} fixes (gamma_init, gamma_dyn) = ({gi}, {gd})", kind.label()));
                }
                Some((kind, gi, gd))
            }
            (None, Some(i), Some(d)) => Some((kind, i, d)),
            (None, _, _) => {
                bad.push("custom protocol needs protocol.gamma_init and protocol.gamma_dyn".into());
                None
            }
        }
    }

    /// Every violated constraint of the configuration.
    pub fn violations(&self) -> Vec<String> {
        let mut bad = Vec::new();
        let params = match self.model_params() {
            Ok(p) => Some(p),
            Err(Error::InvalidParameter(msg)) => {
                bad.extend(msg.split("; ").map(|m| format!("model: {m}")));
                None
            }
            Err(e) => {
                bad.push(format!("model: {e}"));
                None
            }
        };
        if self.protocol.master_seed > i64::MAX as u64 {
            bad.push(format!("protocol.master_seed must be < 2^63 (got {})", self.protocol.master_seed));
        }
        let couplings = self.couplings(&mut bad);
        if let (Some(params), Some((kind, gi, gd))) = (params, couplings) {
            let run = self.build_run(params, kind, gi, gd);
            if let Err(Error::Config(v)) = run.validate() {
                bad.extend(v);
            }
        } else {
            // still report problems that do not depend on the model
            let run = self.build_run(ModelParams::default(), ProtocolKind::Connect, 1.0, 2.0);
            if let Err(Error::Config(v)) = run.validate() {
                bad.extend(v.into_iter().filter(|m| !m.starts_with("gamma") && !m.starts_with("protocol")));
            }
        }
        bad
    }

    pub fn validate(&self) -> Result<()> {
        let bad = self.violations();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }

    fn build_run(&self, params: ModelParams, kind: ProtocolKind, gi: f64, gd: f64) -> ProtocolRun {
        let p = &self.protocol;
        let n = &self.numerics;
        let mut run = ProtocolRun::new(params, gi, gd, p.n_traj, p.t_max, p.dt, p.master_seed);
        run.kind = kind;
        run.numerics = Numerics {
            grid_cells: n.grid_cells,
            snapshot_cadence: n.snapshot_cadence,
            dt_pde: n.dt_pde,
            record_stride: n.record_stride,
            reflection_margin: n.reflection_margin,
            block_size: n.block_size,
        };
        run
    }

    /// The validated protocol run this configuration describes.
    pub fn protocol_run(&self) -> Result<ProtocolRun> {
        self.validate()?;
        let (kind, gi, gd) = self.couplings(&mut Vec::new()).expect("validated");
        Ok(self.build_run(self.model_params()?, kind, gi, gd))
    }
}
