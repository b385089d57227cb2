//! Result files. Every CSV starts with `#` comment lines stating the units,
//! and every float is written with 17 significant digits.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::analysis::{DftReport, EntropyHistogram};
use crate::config::{RunConfig, RunMeta};
use crate::error::{Error, Result};
use crate::model::{ModelParams, StationaryPdf};
use crate::protocol::{ProtocolResults, TrajectoryReport};
use crate::purity::PurityReport;

pub const UNITS: &str = "hbar = k_B = 1; time in units of 1/epsilon; entropies dimensionless (units of k_B)";

/// Round-trip exact float text.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// CSV file with a comment preamble.
pub struct CsvOut {
    inner: csv::Writer<BufWriter<File>>,
}

impl CsvOut {
    pub fn create(path: &Path, comments: &[&str], header: &[&str]) -> Result<Self> {
        let mut f = BufWriter::new(File::create(path)?);
        writeln!(f, "# {UNITS}")?;
        for c in comments {
            writeln!(f, "# {c}")?;
        }
        let mut inner = csv::Writer::from_writer(f);
        inner.write_record(header)?;
        Ok(Self { inner })
    }

    pub fn floats(&mut self, row: &[f64]) -> Result<()> {
        self.inner.write_record(row.iter().map(|&v| fmt17(v)))?;
        Ok(())
    }

    pub fn record<I, S>(&mut self, row: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.inner.write_record(row)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

/// Reader that skips the comment preamble.
pub fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    Ok(csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?)
}

/// Make sure `dir` exists and is writable.
pub fn prepare_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let probe = dir.join(".write-test");
    File::create(&probe)?;
    std::fs::remove_file(probe)?;
    Ok(())
}

/// The configuration plus provenance; reading it back as a configuration
/// reproduces the run.
pub fn write_manifest(dir: &Path, config: &RunConfig, command: &str) -> Result<PathBuf> {
    let mut c = config.clone();
    c.output.dir = dir.to_path_buf();
    c.meta = Some(RunMeta::new(command));
    let path = dir.join("manifest.toml");
    let text = format!("# {UNITS}\n{}", c.to_toml_string()?);
    std::fs::write(&path, text)?;
    Ok(path)
}

/// Stationary densities on `n` points per coupling, plus their moments.
pub fn write_stationary(dir: &Path, params: &ModelParams, gammas: &[f64], n: usize) -> Result<Vec<StationaryPdf>> {
    let pdfs = gammas.iter().map(|&g| StationaryPdf::new(&params.with_gamma(g)?)).collect::<Result<Vec<_>>>()?;
    let mut header = vec!["rz".to_string()];
    header.extend(gammas.iter().map(|g| format!("p_st_gamma_{g}")));
    let header_ref: Vec<&str> = header.iter().map(String::as_str).collect();
    let note = format!("beta = {}, epsilon = {}", params.beta(), params.epsilon());
    let mut w = CsvOut::create(&dir.join("stationary_pdf.csv"), &[&note], &header_ref)?;
    for i in 0..n {
        let r = -1.0 + 2.0 * (i as f64 + 0.5) / n as f64;
        let mut row = vec![r];
        row.extend(pdfs.iter().map(|p| p.density(r)));
        w.floats(&row)?;
    }
    w.finish()?;
    let mut m = CsvOut::create(
        &dir.join("stationary_moments.csv"),
        &[],
        &["gamma", "normalization", "mean_rz", "var_rz", "gibbs_entropy"],
    )?;
    for (g, p) in gammas.iter().zip(&pdfs) {
        let mean = p.mean();
        let var = p.expect(|r| (r - mean) * (r - mean));
        m.floats(&[*g, p.normalization(), mean, var, p.gibbs_entropy()])?;
    }
    m.finish()?;
    Ok(pdfs)
}

/// Everything a protocol run produces.
pub fn write_results(dir: &Path, results: &ProtocolResults) -> Result<()> {
    let run = &results.run;
    let tag = format!("protocol {} (gamma {} -> {})", run.kind.label(), run.gamma_init, run.gamma_dyn);

    let mut w = CsvOut::create(&dir.join("pdf_snapshots.csv"), &[&tag], &["t", "rz", "p"])?;
    for g in results.prepared.snapshots.grids() {
        for (r, p) in g.nodes().iter().zip(g.values()) {
            w.floats(&[g.t, *r, *p])?;
        }
    }
    w.finish()?;

    let rate_note = format!("boundary correction rate = {}", fmt17(results.boundary_rate()));
    let mut w = CsvOut::create(
        &dir.join("ledger.csv"),
        &[&tag, &rate_note],
        &[
            "t",
            "mean_rz",
            "sem_rz",
            "mean_ds_sys",
            "mean_ds_env",
            "mean_ds_tot",
            "mean_ds_tot_corrected",
            "sem_ds_tot",
            "kl_asymptote",
        ],
    )?;
    for r in results.ledger() {
        w.floats(&[
            r.t,
            r.mean_rz,
            r.sem_rz,
            r.mean_ds_sys,
            r.mean_ds_env,
            r.mean_ds_tot,
            r.corrected_ds_tot,
            r.sem_ds_tot,
            results.prepared.kl_oracle,
        ])?;
    }
    w.finish()?;

    let shift = results.boundary_rate() * run.t_max;
    let mut w = CsvOut::create(
        &dir.join("final_ds_tot.csv"),
        &[&tag, "ds_tot_corrected = ds_tot + boundary rate * t_max"],
        &["trajectory", "ds_tot", "ds_tot_corrected", "rz_final"],
    )?;
    let c = results.ensemble.channel_names.iter().position(|n| n == "ds_tot").expect("ds_tot channel");
    for t in results.ensemble.trajectories.iter().filter(|t| t.fault.is_none()) {
        let v = t.values[c];
        w.record([t.index.to_string(), fmt17(v), fmt17(v + shift), fmt17(t.last.rz)])?;
    }
    w.finish()?;

    let mut w = CsvOut::create(&dir.join("relaxation.csv"), &[&tag], &["t", "l1_to_target"])?;
    for (t, d) in results.relaxation() {
        w.floats(&[t, d])?;
    }
    w.finish()?;

    write_final_rz_histogram(dir, results, 50)?;

    if !results.ensemble.faults.is_empty() {
        let mut w = CsvOut::create(&dir.join("faults.csv"), &[&tag], &["trajectory", "error"])?;
        for (i, e) in &results.ensemble.faults {
            w.record([i.to_string(), e.to_string()])?;
        }
        w.finish()?;
    }
    Ok(())
}

/// Final-time `r_z` histogram against the stationary density of the new
/// coupling, both as bin-averaged densities.
pub fn write_final_rz_histogram(dir: &Path, results: &ProtocolResults, bins: usize) -> Result<f64> {
    let finals: Vec<f64> = results
        .ensemble
        .trajectories
        .iter()
        .filter(|t| t.fault.is_none())
        .map(|t| t.last.rz)
        .collect();
    let h = EntropyHistogram::with_range(&finals, -1.0, 1.0, bins)?;
    let target = StationaryPdf::new(&results.run.dynamics_params()?)?;
    let l1 = h.l1_to_masses(|a, b| target.mass_between(a, b));
    let note = format!("L1 distance = {}", fmt17(l1));
    let mut w = CsvOut::create(
        &dir.join("final_rz_histogram.csv"),
        &[&note],
        &["bin_lo", "bin_hi", "density", "p_st_bin_average"],
    )?;
    for i in 0..h.len() {
        let (a, b) = (h.edges()[i], h.edges()[i + 1]);
        w.floats(&[a, b, h.density(i), target.mass_between(a, b) / (b - a)])?;
    }
    w.finish()?;
    Ok(l1)
}

/// Per-step record of one trajectory.
pub fn write_single_trajectory(path: &Path, report: &TrajectoryReport) -> Result<()> {
    let note = format!("trajectory {}", report.index);
    let mut w = CsvOut::create(path, &[&note], &["t", "rz", "phi", "ds_sys", "ds_env", "ds_tot"])?;
    for ((t, s), c) in report.trajectory.times.iter().zip(&report.trajectory.states).zip(&report.cumulative) {
        w.floats(&[*t, s.rz, s.phi, c[0], c[1], c[2]])?;
    }
    w.finish()
}

/// Recorded paths of several trajectories in long format.
pub fn write_trajectories(path: &Path, reports: &[TrajectoryReport], stride: usize) -> Result<()> {
    let mut w = CsvOut::create(path, &[], &["trajectory", "t", "rz", "phi", "ds_tot"])?;
    for r in reports {
        let tr = &r.trajectory;
        for k in (0..tr.times.len()).step_by(stride.max(1)) {
            w.record([
                r.index.to_string(),
                fmt17(tr.times[k]),
                fmt17(tr.states[k].rz),
                fmt17(tr.states[k].phi),
                fmt17(r.cumulative[k][2]),
            ])?;
        }
    }
    w.finish()
}

pub fn write_purity(path: &Path, report: &PurityReport) -> Result<()> {
    let mut w = CsvOut::create(path, &[], &["t", "mean_abs_r2_minus_1", "sem"])?;
    for (t, m) in report.times.iter().zip(&report.deviation) {
        w.floats(&[*t, m.mean, m.sem()])?;
    }
    w.finish()
}

/// Fluctuation-theorem table: forward density, reflected reverse density,
/// log ratio with its interval, and the identity line for reference.
pub fn write_dft(path: &Path, report: &DftReport) -> Result<()> {
    let fit = format!(
        "weighted fit: slope = {} +- {}, intercept = {} +- {}",
        fmt17(report.slope),
        fmt17(report.slope_se),
        fmt17(report.intercept),
        fmt17(report.intercept_se)
    );
    let mut w = CsvOut::create(
        path,
        &[&fit],
        &[
            "s",
            "count_forward",
            "count_reverse",
            "p_forward",
            "p_reverse_reflected",
            "log_ratio",
            "ci_low",
            "ci_high",
            "included",
            "identity",
        ],
    )?;
    for r in &report.rows {
        w.record([
            fmt17(r.s),
            r.count_forward.to_string(),
            r.count_reverse.to_string(),
            fmt17(r.density_forward),
            fmt17(r.density_reverse),
            fmt17(r.log_ratio),
            fmt17(r.ci_low),
            fmt17(r.ci_high),
            r.included.to_string(),
            fmt17(r.s),
        ])?;
    }
    w.finish()
}

/// Per-trajectory final Δs_tot from a run directory; `corrected` selects the
/// boundary-corrected column.
pub fn read_final_totals(dir: &Path, corrected: bool) -> Result<Vec<f64>> {
    let path = dir.join("final_ds_tot.csv");
    let mut rdr = csv_reader(&path)?;
    let col = if corrected { "ds_tot_corrected" } else { "ds_tot" };
    let idx = rdr
        .headers()?
        .iter()
        .position(|h| h == col)
        .ok_or_else(|| Error::Incomplete(format!("{} lacks column {col}", path.display())))?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let v: f64 = rec
            .get(idx)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Incomplete(format!("unparsable value in {}", path.display())))?;
        out.push(v);
    }
    if out.is_empty() {
        return Err(Error::Incomplete(format!("{} has no rows", path.display())));
    }
    Ok(out)
}
