//! Physical parameters and the closed-form coefficients of the measured-qubit
//! dynamics: drift, noise, diffusion and the stationary density of `r_z`.
//!
//! Units: ħ = k_B = 1, time in units of 1/ε.

use std::f64::consts::TAU;

use crate::error::{Error, Result};

pub mod stationary;

pub use stationary::StationaryPdf;

/// Coefficients carrying `1/sqrt(1 - r_z²)` refuse states with `|r_z|` above
/// `1 - SINGULARITY_GUARD`.
pub const SINGULARITY_GUARD: f64 = 1e-12;

/// Physical constants plus the current σ_z coupling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    beta: f64,
    epsilon: f64,
    alpha: f64,
    lambda: f64,
    gamma0: f64,
    gamma: f64,
}

impl Default for ModelParams {
    /// β = 0.1, ε = 1, α = 0.01 (so λ² = 0.2), γ₀ = γ = 1.
    fn default() -> Self {
        Self::new(0.1, 1.0, 0.01, 1.0).expect("default parameters are valid")
    }
}

impl ModelParams {
    /// Baseline coupling γ₀ = 1.
    pub fn new(beta: f64, epsilon: f64, alpha: f64, gamma: f64) -> Result<Self> {
        Self::with_baseline(beta, epsilon, alpha, 1.0, gamma)
    }

    pub fn with_baseline(beta: f64, epsilon: f64, alpha: f64, gamma0: f64, gamma: f64) -> Result<Self> {
        let mut bad = Vec::new();
        if !(beta.is_finite() && beta > 0.0) {
            bad.push(format!("beta must be finite and > 0 (got {beta})"));
        }
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            bad.push(format!("epsilon must be finite and >= 0 (got {epsilon})"));
        }
        if !(alpha.is_finite() && alpha > 0.0) {
            bad.push(format!("alpha must be finite and > 0 (got {alpha})"));
        }
        if !(gamma0.is_finite() && gamma0 > 0.0) {
            bad.push(format!("gamma0 must be finite and > 0 (got {gamma0})"));
        }
        if !(gamma.is_finite() && gamma >= gamma0) {
            bad.push(format!("gamma must be finite and >= gamma0 = {gamma0} (got {gamma})"));
        }
        if !bad.is_empty() {
            return Err(Error::InvalidParameter(bad.join("; ")));
        }
        if beta * epsilon >= 1.0 {
            log::warn!(
                "beta*epsilon = {} is outside the high-temperature regime the model assumes",
                beta * epsilon
            );
        }
        let lambda = (2.0 * alpha / beta).sqrt();
        Ok(Self { beta, epsilon, alpha, lambda, gamma0, gamma })
    }

    /// Accepts an externally supplied λ only if it agrees with sqrt(2α/β).
    pub fn with_lambda(
        beta: f64,
        epsilon: f64,
        alpha: f64,
        lambda: f64,
        gamma0: f64,
        gamma: f64,
    ) -> Result<Self> {
        let p = Self::with_baseline(beta, epsilon, alpha, gamma0, gamma)?;
        if !((lambda * lambda - p.lambda_sq()).abs() <= 1e-12 * p.lambda_sq()) {
            return Err(Error::InvalidParameter(format!(
                "lambda = {lambda} inconsistent with sqrt(2*alpha/beta) = {}",
                p.lambda
            )));
        }
        Ok(p)
    }

    /// Same constants, different coupling.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::with_baseline(self.beta, self.epsilon, self.alpha, self.gamma0, gamma)
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn gamma0(&self) -> f64 {
        self.gamma0
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// λ² = 2α/β.
    pub fn lambda_sq(&self) -> f64 {
        2.0 * self.alpha / self.beta
    }

    /// The dimensionless product βε that controls every asymmetry in the model.
    pub fn beta_eps(&self) -> f64 {
        self.beta * self.epsilon
    }
}

/// Reduced state on the unit sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlochState {
    pub rz: f64,
    pub phi: f64,
}

impl BlochState {
    pub fn new(rz: f64, phi: f64) -> Result<Self> {
        if !(rz.is_finite() && rz.abs() <= 1.0) {
            return Err(Error::Domain(format!("rz = {rz} outside [-1, 1]")));
        }
        if !phi.is_finite() {
            return Err(Error::Domain(format!("phi = {phi} is not finite")));
        }
        Ok(Self { rz, phi: wrap_phi(phi) })
    }
}

/// Maps any finite angle into `[0, 2π)`.
pub fn wrap_phi(phi: f64) -> f64 {
    let w = phi.rem_euclid(TAU);
    // rem_euclid can round up to exactly 2π for tiny negative inputs
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Full coherence vector, used by the purity checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bloch3 {
    pub rx: f64,
    pub ry: f64,
    pub rz: f64,
}

impl Bloch3 {
    /// Slack allowed above `r² = 1` when validating externally supplied states.
    pub const RADIUS_SLACK: f64 = 1e-9;

    pub fn new(rx: f64, ry: f64, rz: f64) -> Result<Self> {
        let s = Self { rx, ry, rz };
        if !(s.radius_sq() <= 1.0 + Self::RADIUS_SLACK) {
            return Err(Error::Domain(format!("r² = {} exceeds 1", s.radius_sq())));
        }
        Ok(s)
    }

    /// Point on the unit sphere with the given reduced coordinates.
    pub fn from_reduced(s: &BlochState) -> Self {
        let rho = (1.0 - s.rz * s.rz).max(0.0).sqrt();
        Self { rx: rho * s.phi.cos(), ry: rho * s.phi.sin(), rz: s.rz }
    }

    pub fn radius_sq(&self) -> f64 {
        self.rx * self.rx + self.ry * self.ry + self.rz * self.rz
    }

    /// Cylindrical angle and height; the radius is discarded.
    pub fn to_reduced(&self) -> BlochState {
        BlochState { rz: self.rz.clamp(-1.0, 1.0), phi: wrap_phi(self.ry.atan2(self.rx)) }
    }
}

/// Drift split by time-reversal parity (`r_z` even, φ odd).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftSplit {
    pub a_irr: [f64; 2],
    pub a_rev: [f64; 2],
}

/// Drift of `r_z`: −4λ²(βε + r_z).
#[inline]
pub fn drift_z(rz: f64, p: &ModelParams) -> f64 {
    -4.0 * p.lambda_sq() * (p.beta_eps() + rz)
}

/// `(A_z, A_φ)`; independent of φ and γ.
pub fn drift(state: &BlochState, p: &ModelParams) -> [f64; 2] {
    [drift_z(state.rz, p), 2.0 * p.epsilon]
}

pub fn drift_split(state: &BlochState, p: &ModelParams) -> DriftSplit {
    let [az, aphi] = drift(state, p);
    DriftSplit { a_irr: [az, 0.0], a_rev: [0.0, aphi] }
}

fn check_interior(rz: f64) -> Result<()> {
    let limit = 1.0 - SINGULARITY_GUARD;
    if rz.abs() > limit || rz.is_nan() {
        return Err(Error::Singular { rz, limit });
    }
    Ok(())
}

/// Rows are (`r_z`, φ); columns multiply (dW_x, dW_y, dW_z).
pub fn noise_matrix(state: &BlochState, p: &ModelParams) -> Result<[[f64; 3]; 2]> {
    check_interior(state.rz)?;
    let (x, l, g, rz) = (p.beta_eps(), p.lambda, p.gamma, state.rz);
    let w = 1.0 - rz * rz;
    let rho = w.sqrt();
    let (sin, cos) = state.phi.sin_cos();
    let kz = -l * (x + 2.0 * rz) * rho;
    let kphi = l * (x * rz + 2.0) / rho;
    Ok([[kz * cos, kz * sin, 2.0 * g * l * w], [-kphi * sin, kphi * cos, 0.0]])
}

/// Q(r_z) = (βε/2)² + βε r_z + (1−γ²) r_z² + γ², so that D_zz = 2λ²(1−r_z²)Q.
#[inline]
fn q_factor(rz: f64, x: f64, g2: f64) -> f64 {
    0.25 * x * x + x * rz + (1.0 - g2) * rz * rz + g2
}

/// D_zz on the closed interval; zero at ±1.
#[inline]
pub fn diffusion_zz(rz: f64, p: &ModelParams) -> f64 {
    let g2 = p.gamma * p.gamma;
    2.0 * p.lambda_sq() * (1.0 - rz * rz) * q_factor(rz, p.beta_eps(), g2)
}

/// D_φφ = 2λ²((βε r_z/2)² + βε r_z + 1)/(1 − r_z²).
pub fn diffusion_phiphi(rz: f64, p: &ModelParams) -> Result<f64> {
    check_interior(rz)?;
    let xr = p.beta_eps() * rz;
    Ok(2.0 * p.lambda_sq() * (0.25 * xr * xr + xr + 1.0) / (1.0 - rz * rz))
}

/// Diagonal of ½BBᵀ: `(D_zz, D_φφ)`.
pub fn diffusion(state: &BlochState, p: &ModelParams) -> Result<[f64; 2]> {
    Ok([diffusion_zz(state.rz, p), diffusion_phiphi(state.rz, p)?])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffusionDerivatives {
    /// ∂D_zz/∂r_z
    pub dzz: f64,
    /// ∂²D_zz/∂r_z²
    pub d2zz: f64,
    /// ∂D_φφ/∂φ, identically zero
    pub dphiphi_dphi: f64,
}

/// `(∂D_zz/∂r_z, ∂²D_zz/∂r_z²)`.
#[inline]
pub fn diffusion_zz_derivatives(rz: f64, p: &ModelParams) -> (f64, f64) {
    let x = p.beta_eps();
    let g2 = p.gamma * p.gamma;
    let q = q_factor(rz, x, g2);
    let dq = x + 2.0 * (1.0 - g2) * rz;
    let d2q = 2.0 * (1.0 - g2);
    let w = 1.0 - rz * rz;
    let k = 2.0 * p.lambda_sq();
    (k * (-2.0 * rz * q + w * dq), k * (-2.0 * q - 4.0 * rz * dq + w * d2q))
}

pub fn diffusion_derivatives(state: &BlochState, p: &ModelParams) -> DiffusionDerivatives {
    let (dzz, d2zz) = diffusion_zz_derivatives(state.rz, p);
    DiffusionDerivatives { dzz, d2zz, dphiphi_dphi: 0.0 }
}

/// Drift of `(r_x, r_y, r_z)`.
pub fn drift_3d(s: &Bloch3, p: &ModelParams) -> [f64; 3] {
    let l2 = p.lambda_sq();
    let e = p.epsilon;
    let g2 = p.gamma * p.gamma;
    [
        -2.0 * e * s.ry - 2.0 * l2 * (1.0 + g2) * s.rx,
        2.0 * e * s.rx - 2.0 * l2 * (1.0 + g2) * s.ry,
        -4.0 * l2 * (p.beta_eps() + s.rz),
    ]
}

/// Rows are (r_x, r_y, r_z); columns multiply (dW_x, dW_y, dW_z).
pub fn noise_matrix_3d(s: &Bloch3, p: &ModelParams) -> [[f64; 3]; 3] {
    let (l, g, x) = (p.lambda, p.gamma, p.beta_eps());
    let (rx, ry, rz) = (s.rx, s.ry, s.rz);
    [
        [l * (x * rz + 2.0 * (1.0 - rx * rx)), -2.0 * l * rx * ry, -2.0 * g * l * rx * rz],
        [-2.0 * l * rx * ry, l * (x * rz + 2.0 * (1.0 - ry * ry)), -2.0 * g * l * ry * rz],
        [-l * rx * (x + 2.0 * rz), -l * ry * (x + 2.0 * rz), 2.0 * g * l * (1.0 - rz * rz)],
    ]
}
