//! Closed-form stationary density of `r_z`.
//!
//! For γ ≠ 1:
//!   p ∝ (1−r)^a (1+r)^b [4Q(r)]^c exp(K·atanh(u(r)))
//! with 4Q = x² + 4xr + 4γ² + 4(1−γ²)r², x = βε, and for γ = 1:
//!   p ∝ (1−r)^a (1+r)^b (x² + 4xr + 4)^d.
//! The edge exponents a, b < 0 make the density weakly singular at ±1.

use super::ModelParams;
use crate::error::{Error, Result};
use crate::quad;

/// Couplings this close to 1 use the γ = 1 form (the general form is 0/0 there).
pub const UNIT_GAMMA_TOL: f64 = 1e-6;

/// Distance from ±1 at which quadrature stops and tails are added analytically.
const EDGE: f64 = 1e-10;
const QUAD_ABS: f64 = 1e-15;
const QUAD_REL: f64 = 1e-13;

/// Edge and base exponents `(a, b, c, d)` for a given βε.
pub fn exponents(beta_eps: f64) -> [f64; 4] {
    let x = beta_eps;
    let x2 = x * x;
    let den = (x2 - 4.0) * (x2 - 4.0);
    [
        -(x / (2.0 + x)).powi(2),
        -(x / (2.0 - x)).powi(2),
        -1.0 + 4.0 * (3.0 * x2 - 4.0) / den,
        -1.0 + 8.0 * (3.0 * x2 - 4.0) / den,
    ]
}

#[derive(Debug, Clone, Copy)]
enum Form {
    Unit { d: f64 },
    Coupled { c: f64, k: f64, gs: f64, one_minus_g2: f64, g2: f64 },
}

/// Normalized stationary density for one parameter set.
#[derive(Debug, Clone)]
pub struct StationaryPdf {
    x: f64,
    gamma: f64,
    a: f64,
    b: f64,
    form: Form,
    /// ln of the normalization integral of the unnormalized form.
    log_norm: f64,
}

impl StationaryPdf {
    pub fn new(p: &ModelParams) -> Result<Self> {
        let x = p.beta_eps();
        let gamma = p.gamma();
        if !(0.0..2.0).contains(&x) {
            return Err(Error::Domain(format!("stationary density needs 0 <= beta*epsilon < 2 (got {x})")));
        }
        let [a, b, c, d] = exponents(x);
        let form = if (gamma - 1.0).abs() <= UNIT_GAMMA_TOL {
            Form::Unit { d }
        } else {
            let g2 = gamma * gamma;
            let s2 = 4.0 * g2 - 4.0 + x * x;
            if !(s2 > 0.0) {
                return Err(Error::Domain(format!("4γ² − 4 + (βε)² = {s2} must be positive")));
            }
            let s = s2.sqrt();
            let k = 8.0 * x * (x * x * (1.0 + 2.0 * g2) - 4.0) / ((4.0 - x * x).powi(2) * gamma * s);
            Form::Coupled { c, k, gs: gamma * s, one_minus_g2: 1.0 - g2, g2 }
        };
        let mut pdf = Self { x, gamma, a, b, form, log_norm: 0.0 };
        for r in [-1.0 + EDGE, 1.0 - EDGE] {
            if !pdf.ln_unnormalized(r).is_finite() {
                return Err(Error::Domain(format!("stationary density not finite near rz = {r}")));
            }
        }
        // Integrate exp(ln p − shift) to stay clear of under/overflow.
        let shift = pdf.ln_unnormalized(0.0);
        let f = |r: f64| (pdf.ln_unnormalized(r) - shift).exp();
        let (core, _) = quad::integrate(f, -1.0 + EDGE, 1.0 - EDGE, QUAD_ABS, QUAD_REL);
        let tails = f(1.0 - EDGE) * EDGE / (1.0 + a) + f(-1.0 + EDGE) * EDGE / (1.0 + b);
        let total = core + tails;
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::Normalization(format!("stationary normalization integral = {total}")));
        }
        pdf.log_norm = shift + total.ln();
        Ok(pdf)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn beta_eps(&self) -> f64 {
        self.x
    }

    /// True when the γ = 1 closed form is in use.
    pub fn is_unit_form(&self) -> bool {
        matches!(self.form, Form::Unit { .. })
    }

    /// Edge exponents `(a, b)` governing `(1−r)^a` and `(1+r)^b`.
    pub fn edge_exponents(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    /// ln of the unnormalized closed form; `-inf`/NaN outside (−1, 1).
    pub fn ln_unnormalized(&self, r: f64) -> f64 {
        let x = self.x;
        let edges = self.a * (1.0 - r).ln() + self.b * (1.0 + r).ln();
        match self.form {
            Form::Unit { d } => edges + d * (x * x + 4.0 * x * r + 4.0).ln(),
            Form::Coupled { c, k, gs, one_minus_g2, g2 } => {
                let base = x * x + 4.0 * x * r + 4.0 * g2 + 4.0 * one_minus_g2 * r * r;
                let u = (-x - 2.0 * r * one_minus_g2) / gs;
                edges + c * base.ln() + k * u.atanh()
            }
        }
    }

    /// Normalization integral of the unnormalized form.
    pub fn normalization(&self) -> f64 {
        self.log_norm.exp()
    }

    pub fn ln_density(&self, r: f64) -> f64 {
        self.ln_unnormalized(r) - self.log_norm
    }

    pub fn density(&self, r: f64) -> f64 {
        self.ln_density(r).exp()
    }

    /// d ln p / dr_z, analytically.
    pub fn d_ln_density(&self, r: f64) -> f64 {
        let x = self.x;
        let edges = -self.a / (1.0 - r) + self.b / (1.0 + r);
        match self.form {
            Form::Unit { d } => edges + d * 4.0 * x / (x * x + 4.0 * x * r + 4.0),
            Form::Coupled { c, k, gs, one_minus_g2, g2 } => {
                let base = x * x + 4.0 * x * r + 4.0 * g2 + 4.0 * one_minus_g2 * r * r;
                let dbase = 4.0 * x + 8.0 * one_minus_g2 * r;
                let u = (-x - 2.0 * r * one_minus_g2) / gs;
                let du = -2.0 * one_minus_g2 / gs;
                edges + c * dbase / base + k * du / (1.0 - u * u)
            }
        }
    }

    /// ∫ f(r) p(r) dr over (−1, 1).
    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        integrate_open(|r| f(r) * self.density(r))
    }

    pub fn mean(&self) -> f64 {
        self.expect(|r| r)
    }

    /// Probability mass in `[lo, hi]` (clipped to (−1, 1)).
    pub fn mass_between(&self, lo: f64, hi: f64) -> f64 {
        (self.cdf(hi) - self.cdf(lo)).max(0.0)
    }

    /// Cumulative distribution function.
    pub fn cdf(&self, r: f64) -> f64 {
        if r <= -1.0 {
            return 0.0;
        }
        if r >= 1.0 {
            return 1.0;
        }
        let lower_tail = self.density(-1.0 + EDGE) * EDGE / (1.0 + self.b);
        if r <= -1.0 + EDGE {
            return lower_tail * ((1.0 + r) / EDGE).powf(1.0 + self.b);
        }
        let hi = r.min(1.0 - EDGE);
        let (core, _) = quad::integrate(|s| self.density(s), -1.0 + EDGE, hi, QUAD_ABS, QUAD_REL);
        let mut total = lower_tail + core;
        if r > 1.0 - EDGE {
            let upper = self.density(1.0 - EDGE) * EDGE / (1.0 + self.a);
            total += upper * (1.0 - ((1.0 - r) / EDGE).powf(1.0 + self.a));
        }
        total.clamp(0.0, 1.0)
    }

    /// CDF at each of a sorted list of points, integrating only between neighbours.
    pub fn cdf_sorted(&self, sorted: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(sorted.len());
        let mut prev: Option<(f64, f64)> = None;
        for &r in sorted {
            let v = match prev {
                Some((r0, c0)) if r0 > -1.0 + EDGE && r < 1.0 - EDGE && r >= r0 => {
                    let (inc, _) = quad::integrate(|s| self.density(s), r0, r, 1e-16, 1e-12);
                    c0 + inc
                }
                _ => self.cdf(r),
            };
            out.push(v.clamp(0.0, 1.0));
            prev = Some((r, v));
        }
        out
    }

    /// −∫ p ln p.
    pub fn gibbs_entropy(&self) -> f64 {
        -integrate_open(|r| {
            let lp = self.ln_density(r);
            lp.exp() * lp
        })
    }

    /// ∫ p ln(p/q) with `self` as p.
    pub fn kl_divergence(&self, other: &StationaryPdf) -> f64 {
        integrate_open(|r| {
            let lp = self.ln_density(r);
            lp.exp() * (lp - other.ln_density(r))
        })
    }
}

/// Integral over (−1, 1) of an integrand with at most weak power-law edge
/// behaviour; the last `EDGE` at each end is approximated by a rectangle.
fn integrate_open<F: Fn(f64) -> f64>(f: F) -> f64 {
    let (core, _) = quad::integrate(&f, -1.0 + EDGE, 1.0 - EDGE, QUAD_ABS, QUAD_REL);
    core + (f(1.0 - EDGE) + f(-1.0 + EDGE)) * EDGE
}

/// Unnormalized closed form at one point.
pub fn stationary_pdf_unnormalized(rz: f64, p: &ModelParams) -> Result<f64> {
    if !(rz.abs() < 1.0) {
        return Err(Error::Domain(format!("stationary density needs |rz| < 1 (got {rz})")));
    }
    let pdf = StationaryPdf::new(p)?;
    let v = pdf.ln_unnormalized(rz).exp();
    if !v.is_finite() {
        return Err(Error::Domain(format!("stationary density overflowed at rz = {rz}")));
    }
    Ok(v)
}
