//! Symmetric alpha-stable laws: characteristic function, density, log-density
//! and random variates.
//!
//! Only the Gaussian (`α = 2`) and Cauchy (`α = 1`) members have closed-form
//! densities. Everything else goes through a one-sided cosine transform of the
//! characteristic function:
//!
//! ```text
//! h(θ) = (1/π) ∫_0^∞ exp(-(γω)^α) cos(ω(θ-µ)) dω
//! ```

mod quadrature;
mod sampler;

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use quadrature::QuadratureConfig;
pub use sampler::{sample, sample_into};

/// Densities below this are treated as underflow by [`log_pdf`].
pub const LOG_PDF_FLOOR_DENSITY: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DensityError {
    #[error("invalid stable parameter {name} = {value}: {reason}")]
    InvalidParams { name: &'static str, value: f64, reason: &'static str },
    #[error("invalid quadrature setting {field} = {value}")]
    InvalidConfig { field: &'static str, value: f64 },
    #[error("density is only available for symmetric laws (beta = {beta})")]
    NonSymmetric { beta: f64 },
    #[error(
        "quadrature failed for alpha = {alpha}, scaled offset {y}: \
         tolerance {abs_tol} not reached (stopped near omega = {reached})"
    )]
    QuadratureFailure { alpha: f64, y: f64, abs_tol: f64, reached: f64 },
}

/// Parameters `(α, β, γ, µ)` of a stable law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct StableParams {
    alpha: f64,
    beta: f64,
    gamma: f64,
    mu: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    alpha: f64,
    #[serde(default)]
    beta: f64,
    gamma: f64,
    #[serde(default)]
    mu: f64,
}

impl TryFrom<RawParams> for StableParams {
    type Error = DensityError;
    fn try_from(r: RawParams) -> Result<Self, Self::Error> {
        StableParams::new(r.alpha, r.beta, r.gamma, r.mu)
    }
}

impl From<StableParams> for RawParams {
    fn from(p: StableParams) -> Self {
        RawParams { alpha: p.alpha, beta: p.beta, gamma: p.gamma, mu: p.mu }
    }
}

impl StableParams {
    pub fn new(alpha: f64, beta: f64, gamma: f64, mu: f64) -> Result<Self, DensityError> {
        if !(alpha > 0.0 && alpha <= 2.0) {
            return Err(DensityError::InvalidParams {
                name: "alpha",
                value: alpha,
                reason: "must lie in (0, 2]",
            });
        }
        if !(-1.0..=1.0).contains(&beta) {
            return Err(DensityError::InvalidParams {
                name: "beta",
                value: beta,
                reason: "must lie in [-1, 1]",
            });
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(DensityError::InvalidParams {
                name: "gamma",
                value: gamma,
                reason: "must be positive and finite",
            });
        }
        if !mu.is_finite() {
            return Err(DensityError::InvalidParams {
                name: "mu",
                value: mu,
                reason: "must be finite",
            });
        }
        Ok(Self { alpha, beta, gamma, mu })
    }

    /// Symmetric law (`β = 0`).
    pub fn symmetric(alpha: f64, gamma: f64, mu: f64) -> Result<Self, DensityError> {
        Self::new(alpha, 0.0, gamma, mu)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn mu(&self) -> f64 {
        self.mu
    }

    fn require_symmetric(&self) -> Result<(), DensityError> {
        if self.beta != 0.0 {
            return Err(DensityError::NonSymmetric { beta: self.beta });
        }
        Ok(())
    }
}

/// `φ(ω) = exp(iωµ − |γω|^α (1 − iβ sgn(ω) Φ))`, with `Φ = tan(πα/2)` for
/// `α ≠ 1` and `Φ = −(2/π) ln|ω|` for `α = 1`.
pub fn characteristic_fn(params: &StableParams, omega: f64) -> Complex64 {
    if omega == 0.0 {
        return Complex64::new(1.0, 0.0);
    }
    let StableParams { alpha, beta, gamma, mu } = *params;
    let phi = if alpha == 1.0 {
        -2.0 / PI * omega.abs().ln()
    } else {
        (PI * alpha / 2.0).tan()
    };
    let scale = (gamma * omega).abs().powf(alpha);
    let skew = if beta == 0.0 { 0.0 } else { beta * omega.signum() * phi };
    let exponent = Complex64::new(-scale, omega * mu + scale * skew);
    exponent.exp()
}

/// Density `h(θ)`, using the closed forms for `α ∈ {1, 2}`.
pub fn pdf(params: &StableParams, theta: f64, quad: &QuadratureConfig) -> Result<f64, DensityError> {
    params.require_symmetric()?;
    quad.validate()?;
    let x = theta - params.mu;
    let g = params.gamma;
    if params.alpha == 2.0 {
        // Normal with variance 2γ².
        return Ok((-x * x / (4.0 * g * g)).exp() / (2.0 * g * PI.sqrt()));
    }
    if params.alpha == 1.0 {
        return Ok(g / (PI * (g * g + x * x)));
    }
    pdf_quadrature(params, theta, quad)
}

/// Density through the cosine transform for every `α`, bypassing the closed
/// forms.
pub fn pdf_quadrature(
    params: &StableParams,
    theta: f64,
    quad: &QuadratureConfig,
) -> Result<f64, DensityError> {
    params.require_symmetric()?;
    quad.validate()?;
    let g = params.gamma;
    let y = ((theta - params.mu) / g).abs();
    // h = I(y) / (πγ); tolerance on I scales accordingly.
    let tol = quad.abs_tol * PI * g;
    let integral = quadrature::cosine_transform(params.alpha, y, tol, quad)?;
    Ok((integral / (PI * g)).max(0.0))
}

/// `ln h(θ)`, floored at `ln(1e-300)` where the density underflows.
pub fn log_pdf(
    params: &StableParams,
    theta: f64,
    quad: &QuadratureConfig,
) -> Result<f64, DensityError> {
    params.require_symmetric()?;
    let floor = LOG_PDF_FLOOR_DENSITY.ln();
    let x = theta - params.mu;
    let g = params.gamma;
    let exact = if params.alpha == 2.0 {
        Some(-x * x / (4.0 * g * g) - (2.0 * g * PI.sqrt()).ln())
    } else if params.alpha == 1.0 {
        Some((g / PI).ln() - (g * g + x * x).ln())
    } else {
        None
    };
    let value = match exact {
        Some(v) => v,
        None => {
            let h = pdf(params, theta, quad)?;
            if h < LOG_PDF_FLOOR_DENSITY {
                return Ok(floor);
            }
            h.ln()
        }
    };
    Ok(value.max(floor))
}

/// Two-sided tail probability `P(|X − µ| > distance)`.
///
/// Closed forms for `α ∈ {1, 2}`; otherwise the power series in
/// `(γ/x)^α` obtained by integrating the large-`x` expansion of the density
/// term by term. The series converges for `α < 1` and is summed up to its
/// smallest term for `α > 1`, where it is asymptotic.
pub fn tail_mass(params: &StableParams, distance: f64) -> Result<f64, DensityError> {
    use statrs::function::gamma::ln_gamma;
    params.require_symmetric()?;
    if distance <= 0.0 {
        return Ok(1.0);
    }
    let StableParams { alpha, gamma, .. } = *params;
    if alpha == 2.0 {
        return Ok(statrs::function::erf::erfc(distance / (2.0 * gamma)));
    }
    if alpha == 1.0 {
        return Ok(1.0 - 2.0 / PI * (distance / gamma).atan());
    }
    let z = (gamma / distance).powf(alpha);
    let mut sum = 0.0;
    let mut prev_mag = f64::INFINITY;
    for k in 1..400 {
        let kf = k as f64;
        let s = (kf * PI * alpha / 2.0).sin();
        let log_mag = ln_gamma(alpha * kf) - ln_gamma(kf + 1.0) + kf * z.ln();
        let mag = log_mag.exp() * s.abs();
        if alpha > 1.0 && mag > prev_mag && k > 2 {
            break;
        }
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 } * s.signum();
        sum += sign * mag;
        if log_mag < -40.0 {
            break;
        }
        if s != 0.0 {
            prev_mag = mag;
        }
    }
    Ok((2.0 / PI * sum).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sas(alpha: f64, gamma: f64) -> StableParams {
        StableParams::symmetric(alpha, gamma, 0.0).unwrap()
    }

    #[test]
    fn rejects_out_of_range_params() {
        assert!(StableParams::new(0.0, 0.0, 1.0, 0.0).is_err());
        assert!(StableParams::new(2.1, 0.0, 1.0, 0.0).is_err());
        assert!(StableParams::new(1.5, 1.5, 1.0, 0.0).is_err());
        assert!(StableParams::new(1.5, 0.0, 0.0, 0.0).is_err());
        assert!(StableParams::new(1.5, 0.0, -1.0, 0.0).is_err());
        assert!(StableParams::new(2.0, -1.0, 1.0, 3.0).is_ok());
    }

    #[test]
    fn characteristic_fn_examples() {
        let one = characteristic_fn(&sas(2.0, 1.0), 0.0);
        assert_eq!(one, Complex64::new(1.0, 0.0));
        let c = characteristic_fn(&sas(1.0, 1.0), 1.0);
        assert!((c.re - (-1.0f64).exp()).abs() < 1e-15 && c.im == 0.0);
        assert!((c.re - 0.367_879).abs() < 1e-6);
        let c = characteristic_fn(&sas(1.5, 1.0), -2.0);
        assert!((c.re - (-(2.0f64.powf(1.5))).exp()).abs() < 1e-15);
        assert!((c.re - 0.059_106).abs() < 1e-6);
    }

    #[test]
    fn characteristic_fn_skewed_branches() {
        // α = 1 log branch: |φ| = exp(-|γω|) and phase = β|γω|(-(2/π)ln|ω|)·sgn(ω).
        let p = StableParams::new(1.0, 0.5, 2.0, 0.0).unwrap();
        let c = characteristic_fn(&p, 3.0);
        assert!((c.norm() - (-6.0f64).exp()).abs() < 1e-15);
        let phase = 6.0 * 0.5 * (-2.0 / PI * 3.0f64.ln());
        let expected = Complex64::from_polar((-6.0f64).exp(), phase);
        assert!((c - expected).norm() < 1e-15);
        // α ≠ 1 branch uses tan(πα/2).
        let p = StableParams::new(1.5, -1.0, 1.0, 0.0).unwrap();
        let c = characteristic_fn(&p, -1.0);
        let expected = Complex64::new(-1.0, (PI * 0.75).tan()).exp();
        assert!((c - expected).norm() < 1e-15);
        // Location shifts only the phase.
        let p = StableParams::new(1.5, 0.0, 1.0, 0.25).unwrap();
        let c = characteristic_fn(&p, 2.0);
        assert!((c.arg() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn pdf_closed_form_examples() {
        let q = QuadratureConfig::default();
        let v = pdf(&sas(1.0, 1.0), 0.0, &q).unwrap();
        assert!((v - 1.0 / PI).abs() < 1e-15 && (v - 0.318_310).abs() < 1e-6);
        let v = pdf(&sas(2.0, 1.0), 0.0, &q).unwrap();
        assert!((v - 0.282_095).abs() < 1e-6);
        assert!((log_pdf(&sas(1.0, 1.0), 0.0, &q).unwrap() + 1.144_730).abs() < 1e-6);
        assert!((log_pdf(&sas(2.0, 1.0), 0.0, &q).unwrap() + 1.265_512).abs() < 1e-6);
    }

    #[test]
    fn pdf_is_symmetric_and_rejects_skew() {
        let q = QuadratureConfig::default();
        let p = sas(1.5, 1.0);
        for &t in &[0.1, 0.7, 3.0, 12.0] {
            assert_eq!(pdf(&p, t, &q).unwrap(), pdf(&p, -t, &q).unwrap());
            assert_eq!(log_pdf(&p, t, &q).unwrap(), log_pdf(&p, -t, &q).unwrap());
        }
        let skew = StableParams::new(1.5, 0.3, 1.0, 0.0).unwrap();
        assert!(matches!(pdf(&skew, 0.0, &q), Err(DensityError::NonSymmetric { .. })));
        assert!(matches!(log_pdf(&skew, 0.0, &q), Err(DensityError::NonSymmetric { .. })));
    }

    #[test]
    fn quadrature_value_at_mode() {
        // h(µ) = Γ(1 + 1/α) / (πγ)
        let q = QuadratureConfig::default();
        for &(a, g) in &[(0.5, 1.0), (1.5, 0.5), (0.7, 2.0), (1.9, 1.0)] {
            let exact = statrs::function::gamma::gamma(1.0 + 1.0 / a) / (PI * g);
            let v = pdf(&sas(a, g), 0.0, &q).unwrap();
            assert!((v - exact).abs() < 1e-9, "α={a} γ={g}: {v} vs {exact}");
        }
    }

    #[test]
    fn log_pdf_floors_underflow() {
        let q = QuadratureConfig::default();
        let v = log_pdf(&sas(2.0, 0.1), 50.0, &q).unwrap();
        assert_eq!(v, LOG_PDF_FLOOR_DENSITY.ln());
    }

    #[test]
    fn invalid_quadrature_config_is_rejected() {
        let p = sas(1.5, 1.0);
        let bad = QuadratureConfig { abs_tol: 0.0, ..Default::default() };
        assert!(matches!(pdf(&p, 0.0, &bad), Err(DensityError::InvalidConfig { .. })));
        let bad = QuadratureConfig { omega_max_cutoff: 1.0, ..Default::default() };
        assert!(pdf(&p, 0.0, &bad).is_err());
    }

    #[test]
    fn too_few_panels_is_a_quadrature_failure() {
        let p = sas(0.3, 1.0);
        let q = QuadratureConfig { abs_tol: 1e-12, max_panels: 3, ..Default::default() };
        assert!(matches!(pdf(&p, 5.0, &q), Err(DensityError::QuadratureFailure { .. })));
    }

    #[test]
    fn tail_mass_closed_forms() {
        // Cauchy: P(|X| > γ) = 1/2.
        assert!((tail_mass(&sas(1.0, 2.0), 2.0).unwrap() - 0.5).abs() < 1e-15);
        // Gaussian with σ = γ√2: P(|X| > 1.96σ) ≈ 0.05.
        let g = 1.0;
        let t = tail_mass(&sas(2.0, g), 1.959_963_984_540_054 * g * 2f64.sqrt()).unwrap();
        assert!((t - 0.05).abs() < 1e-10, "{t}");
    }
}
