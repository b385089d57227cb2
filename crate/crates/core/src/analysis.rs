//! Post-processing: histograms, the detailed fluctuation theorem check,
//! Kolmogorov–Smirnov statistics and run summaries.

use crate::error::{Error, Result};
use crate::model::StationaryPdf;
use crate::protocol::ProtocolResults;

/// Inclusion threshold for the fluctuation-theorem fit.
pub const DEFAULT_MIN_COUNT: u64 = 10;

/// Two-sided 95% normal quantile used for per-bin intervals.
const Z95: f64 = 1.959963984540054;

/// Histogram on a grid of equal bins whose edges are integer multiples of
/// `width` (when built with [`EntropyHistogram::aligned`]), so that
/// reflecting through zero maps bins onto bins.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyHistogram {
    edges: Vec<f64>,
    counts: Vec<u64>,
    width: f64,
    /// Index of the first edge on the grid `k * width`, if aligned.
    first_index: Option<i64>,
    n_total: u64,
}

impl EntropyHistogram {
    /// Bins `[lo + k w, lo + (k+1) w)`, last bin closed; samples outside are
    /// an error (nothing is silently dropped).
    pub fn with_range(samples: &[f64], lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if !(lo < hi) || bins == 0 {
            return Err(Error::InvalidParameter(format!("bad histogram range [{lo}, {hi}] with {bins} bins")));
        }
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|k| if k == bins { hi } else { lo + k as f64 * width }).collect();
        let mut h = Self { edges, counts: vec![0; bins], width, first_index: None, n_total: 0 };
        for &s in samples {
            if !(lo..=hi).contains(&s) {
                return Err(Error::Domain(format!("sample {s} outside histogram range [{lo}, {hi}]")));
            }
            let k = (((s - lo) / width) as usize).min(bins - 1);
            h.counts[k] += 1;
        }
        h.n_total = samples.len() as u64;
        Ok(h)
    }

    /// Bins of the given width with edges on the lattice `k * width`.
    pub fn aligned(samples: &[f64], width: f64) -> Result<Self> {
        if !(width.is_finite() && width > 0.0) {
            return Err(Error::InvalidParameter(format!("bin width must be finite and > 0 (got {width})")));
        }
        if samples.is_empty() {
            return Err(Error::InvalidParameter("histogram of no samples".into()));
        }
        if let Some(bad) = samples.iter().find(|s| !s.is_finite()) {
            return Err(Error::Domain(format!("non-finite sample {bad}")));
        }
        let lattice = |s: f64| (s / width).floor() as i64;
        let k0 = samples.iter().map(|&s| lattice(s)).min().unwrap();
        let k1 = samples.iter().map(|&s| lattice(s)).max().unwrap();
        let bins = (k1 - k0 + 1) as usize;
        let mut counts = vec![0u64; bins];
        for &s in samples {
            counts[(lattice(s) - k0) as usize] += 1;
        }
        Ok(Self {
            edges: (0..=bins as i64).map(|k| (k0 + k) as f64 * width).collect(),
            counts,
            width,
            first_index: Some(k0),
            n_total: samples.len() as u64,
        })
    }

    /// Aligned histogram with the Freedman–Diaconis width of the samples.
    pub fn freedman_diaconis(samples: &[f64]) -> Result<Self> {
        Self::aligned(samples, freedman_diaconis_width(samples)?)
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn n_total(&self) -> u64 {
        self.n_total
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn center(&self, i: usize) -> f64 {
        0.5 * (self.edges[i] + self.edges[i + 1])
    }

    /// Probability density estimate of bin `i`.
    pub fn density(&self, i: usize) -> f64 {
        self.counts[i] as f64 / (self.n_total as f64 * (self.edges[i + 1] - self.edges[i]))
    }

    pub fn densities(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.density(i)).collect()
    }

    /// ∫ density; 1 up to rounding.
    pub fn integral(&self) -> f64 {
        (0..self.len()).map(|i| self.density(i) * (self.edges[i + 1] - self.edges[i])).sum()
    }

    /// Merge groups of `factor` lattice bins, keeping alignment to
    /// multiples of the new width.
    pub fn rebin(&self, factor: usize) -> Result<Self> {
        let k0 = self
            .first_index
            .ok_or_else(|| Error::InvalidParameter("only lattice-aligned histograms can be rebinned".into()))?;
        if factor == 0 {
            return Err(Error::InvalidParameter("rebin factor must be >= 1".into()));
        }
        let f = factor as i64;
        let new_k0 = k0.div_euclid(f);
        let new_k1 = (k0 + self.len() as i64 - 1).div_euclid(f);
        let mut counts = vec![0u64; (new_k1 - new_k0 + 1) as usize];
        for (i, &c) in self.counts.iter().enumerate() {
            counts[((k0 + i as i64).div_euclid(f) - new_k0) as usize] += c;
        }
        let width = self.width * factor as f64;
        Ok(Self {
            edges: (0..=counts.len() as i64).map(|k| (new_k0 + k) as f64 * width).collect(),
            counts,
            width,
            first_index: Some(new_k0),
            n_total: self.n_total,
        })
    }

    /// L1 distance between the histogram density and a reference law given
    /// by its bin masses: `Σ |c_i / n − mass_i|`.
    pub fn l1_to_masses(&self, mass: impl Fn(f64, f64) -> f64) -> f64 {
        (0..self.len())
            .map(|i| (self.counts[i] as f64 / self.n_total as f64 - mass(self.edges[i], self.edges[i + 1])).abs())
            .sum()
    }
}

/// Linear-interpolated sample quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// `2 IQR n^{-1/3}`.
pub fn freedman_diaconis_width(samples: &[f64]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::InvalidParameter("need at least two samples for a bin width".into()));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25);
    let width = 2.0 * iqr / (s.len() as f64).cbrt();
    if width > 0.0 && width.is_finite() {
        Ok(width)
    } else {
        Err(Error::Domain(format!("degenerate sample spread (IQR = {iqr})")))
    }
}

/// One bin of the fluctuation-theorem table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DftRow {
    /// Bin centre of the forward histogram.
    pub s: f64,
    pub count_forward: u64,
    /// Count of the reverse histogram in the bin at `−s`.
    pub count_reverse: u64,
    pub density_forward: f64,
    pub density_reverse: f64,
    /// `ln[P_fwd(s) / P_rev(−s)]`, NaN when a count is zero.
    pub log_ratio: f64,
    /// Delta-method variance of `log_ratio`.
    pub variance: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub included: bool,
}

/// Weighted straight-line fit of the log ratio against `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct DftReport {
    pub rows: Vec<DftRow>,
    pub min_count: u64,
    pub slope: f64,
    pub slope_se: f64,
    pub intercept: f64,
    pub intercept_se: f64,
    pub chi2_per_dof: f64,
    pub n_included: usize,
}

impl DftReport {
    /// 95% interval of the slope.
    pub fn slope_ci(&self) -> (f64, f64) {
        (self.slope - Z95 * self.slope_se, self.slope + Z95 * self.slope_se)
    }

    pub fn intercept_ci(&self) -> (f64, f64) {
        (self.intercept - Z95 * self.intercept_se, self.intercept + Z95 * self.intercept_se)
    }

    /// Bin centres left out for lack of counts.
    pub fn excluded(&self) -> Vec<f64> {
        self.rows.iter().filter(|r| !r.included).map(|r| r.s).collect()
    }
}

/// Compare `P_fwd(s)` with `P_rev(−s)` bin by bin and fit
/// `ln[P_fwd(s)/P_rev(−s)] = intercept + slope · s` over bins where both
/// counts reach `min_count`. The theorem predicts slope 1, intercept 0.
pub fn dft_check(forward: &EntropyHistogram, reverse: &EntropyHistogram, min_count: u64) -> Result<DftReport> {
    let (Some(kf), Some(kr)) = (forward.first_index, reverse.first_index) else {
        return Err(Error::InvalidParameter("fluctuation check needs lattice-aligned histograms".into()));
    };
    if (forward.width - reverse.width).abs() > 1e-12 * forward.width {
        return Err(Error::InvalidParameter(format!(
            "histograms need a common bin width ({} vs {})",
            forward.width, reverse.width
        )));
    }
    let (nf, nr) = (forward.n_total as f64, reverse.n_total as f64);
    let mut rows = Vec::with_capacity(forward.len());
    for i in 0..forward.len() {
        // Forward bin [k, k+1) w reflects onto [-(k+1), -k) w.
        let mirror = -(kf + i as i64) - 1 - kr;
        let cr = if (0..reverse.len() as i64).contains(&mirror) { reverse.counts[mirror as usize] } else { 0 };
        let cf = forward.counts[i];
        let (log_ratio, variance) = if cf > 0 && cr > 0 {
            (
                (cf as f64 / nf).ln() - (cr as f64 / nr).ln(),
                (1.0 / cf as f64 - 1.0 / nf) + (1.0 / cr as f64 - 1.0 / nr),
            )
        } else {
            (f64::NAN, f64::INFINITY)
        };
        let half = Z95 * variance.sqrt();
        rows.push(DftRow {
            s: forward.center(i),
            count_forward: cf,
            count_reverse: cr,
            density_forward: forward.density(i),
            density_reverse: cr as f64 / (nr * reverse.width),
            log_ratio,
            variance,
            ci_low: log_ratio - half,
            ci_high: log_ratio + half,
            included: cf >= min_count.max(1) && cr >= min_count.max(1),
        });
    }
    let used: Vec<&DftRow> = rows.iter().filter(|r| r.included).collect();
    if used.len() < 2 {
        return Err(Error::EmptyOverlap { n_min: min_count });
    }
    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for r in &used {
        let w = 1.0 / r.variance;
        sw += w;
        sx += w * r.s;
        sy += w * r.log_ratio;
        sxx += w * r.s * r.s;
        sxy += w * r.s * r.log_ratio;
    }
    let det = sw * sxx - sx * sx;
    let slope = (sw * sxy - sx * sy) / det;
    let intercept = (sxx * sy - sx * sxy) / det;
    let chi2: f64 = used
        .iter()
        .map(|r| (r.log_ratio - intercept - slope * r.s).powi(2) / r.variance)
        .sum();
    let dof = used.len().saturating_sub(2).max(1) as f64;
    Ok(DftReport {
        n_included: used.len(),
        rows,
        min_count,
        slope,
        slope_se: (sw / det).sqrt(),
        intercept,
        intercept_se: (sxx / det).sqrt(),
        chi2_per_dof: chi2 / dof,
    })
}

/// One-sample Kolmogorov–Smirnov statistic against a continuous CDF.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// KS statistic against a stationary law; the CDF is accumulated along the
/// sorted samples, so this stays cheap for large ensembles.
pub fn ks_statistic_stationary(samples: &[f64], pdf: &StationaryPdf) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    pdf.cdf_sorted(&s)
        .iter()
        .enumerate()
        .map(|(i, &f)| (f - i as f64 / n).max((i + 1) as f64 / n - f))
        .fold(0.0, f64::max)
}

/// Asymptotic 1% critical value of the one-sample KS statistic.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.6276 / (n as f64).sqrt()
}

/// A named pass/fail flag with context.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }

    pub fn verdict(&self) -> &'static str {
        if self.passed {
            "PASS"
        } else {
            "FAIL"
        }
    }
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {} ({})", self.verdict(), self.name, self.detail)
    }
}

/// Condensed view of a protocol run.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub protocol: String,
    pub gamma_init: f64,
    pub gamma_dyn: f64,
    pub n_traj: usize,
    pub completed: usize,
    pub faulted: Vec<usize>,
    pub t_max: f64,
    pub final_mean_raw: f64,
    pub final_mean_corrected: f64,
    pub final_sem: f64,
    pub final_mean_rz: f64,
    pub boundary_rate: f64,
    pub kl_oracle: f64,
    /// Final L1 distance of the solved pdf to the target stationary pdf.
    pub relaxation_l1: f64,
    pub reflections: u64,
    pub floor_events: u64,
    pub outside_node_events: u64,
    pub checks: Vec<Check>,
}

impl Summary {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Summarize a run. Non-finite values anywhere in the per-trajectory ledger
/// make the bundle unusable and are reported by trajectory index.
pub fn summarize(results: &ProtocolResults) -> Result<Summary> {
    let ens = &results.ensemble;
    if ens.times.is_empty() {
        return Err(Error::Incomplete("no recorded times".into()));
    }
    let corrupt: Vec<usize> = ens
        .trajectories
        .iter()
        .filter(|t| t.fault.is_none() && t.values.iter().any(|v| !v.is_finite()))
        .map(|t| t.index)
        .collect();
    if !corrupt.is_empty() {
        return Err(Error::Incomplete(format!("non-finite entropy values in trajectories {corrupt:?}")));
    }
    if ens.channels.iter().flatten().any(|m| !m.mean.is_finite()) {
        return Err(Error::Incomplete("non-finite ensemble means".into()));
    }
    let ledger = results.ledger();
    let last = *ledger.last().expect("non-empty");
    let run = &results.run;
    let faulted: Vec<usize> = ens.faults.iter().map(|(i, _)| *i).collect();
    let mut checks = vec![Check::new(
        "no trajectory faults",
        faulted.is_empty(),
        format!("{} of {} faulted", faulted.len(), run.n_traj),
    )];
    if let Some(m) = results.corrected_slopes() {
        let z = m.mean / m.sem();
        checks.push(Check::new(
            "stationary slope ≈ 0",
            z.abs() <= 3.0,
            format!("slope = {:.3e} ± {:.1e} per unit time ({z:+.2} SEM)", m.mean, m.sem()),
        ));
    } else if run.gamma_init != run.gamma_dyn {
        let margin = (last.corrected_ds_tot - results.prepared.kl_oracle) / last.sem_ds_tot;
        checks.push(Check::new(
            "mean Δs_tot → KL",
            margin.abs() <= 3.0,
            format!(
                "{:.5} ± {:.5} vs KL {:.5} ({margin:+.2} SEM)",
                last.corrected_ds_tot, last.sem_ds_tot, results.prepared.kl_oracle
            ),
        ));
    }
    Ok(Summary {
        protocol: run.kind.label().to_string(),
        gamma_init: run.gamma_init,
        gamma_dyn: run.gamma_dyn,
        n_traj: run.n_traj,
        completed: run.n_traj - faulted.len(),
        faulted,
        t_max: run.t_max,
        final_mean_raw: last.mean_ds_tot,
        final_mean_corrected: last.corrected_ds_tot,
        final_sem: last.sem_ds_tot,
        final_mean_rz: last.mean_rz,
        boundary_rate: results.boundary_rate(),
        kl_oracle: results.prepared.kl_oracle,
        relaxation_l1: results.relaxation().last().map_or(f64::NAN, |r| r.1),
        reflections: ens.reflections,
        floor_events: results.count_extra("floor_events"),
        outside_node_events: results.count_extra("outside_node_events"),
        checks,
    })
}
