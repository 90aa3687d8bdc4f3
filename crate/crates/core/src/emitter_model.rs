//! Closed-form photophysics of a coherently driven two-level emitter.
//!
//! Rates are angular frequencies (rad/s). `gamma_par` (γ∥) is the population
//! decay rate, `gamma_perp` (γ⊥) the coherence decay rate; a lifetime-limited
//! emitter has `γ⊥ = γ∥/2`. The drive enters through its Rabi frequency Ω and
//! the saturation parameter `s = Ω² / (γ∥ γ⊥)`.
//!
//! Literature sometimes quotes the lifetime limit as `Γ₂/Γ₁ = 2`, which
//! counts linewidths rather than decay rates; internally only the rate
//! convention above is used.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmitterError {
    #[error("population decay rate must be > 0 (got {0})")]
    InvalidDecay(f64),
    #[error("coherence decay rate {gamma_perp} is below half the population decay rate {gamma_par}")]
    DephasingBound { gamma_par: f64, gamma_perp: f64 },
    #[error("Rabi frequency must be finite and ≥ 0 (got {0})")]
    InvalidRabi(f64),
    #[error("detuning must be finite (got {0})")]
    InvalidDetuning(f64),
    #[error("saturation model parameters must be > 0")]
    InvalidSaturationModel,
    #[error("rates must be finite and ≥ 0")]
    InvalidRates,
    #[error("delay is NaN")]
    NanDelay,
    #[error("the closed-form g2 needs resonant drive (detuning {0} rad/s)")]
    NotResonant(f64),
    #[error("signal fraction {0} is outside [0, 1]")]
    InvalidRho(f64),
    #[error("background correction is undefined for a zero signal fraction")]
    ZeroRho,
    #[error("g2 value {0} must be finite and ≥ 0")]
    InvalidG2(f64),
}

/// Relative slack allowed when checking `γ⊥ ≥ γ∥/2`.
const DEPHASING_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoLevelEmitter {
    gamma_par: f64,
    gamma_perp: f64,
    omega0: f64,
}

impl TwoLevelEmitter {
    pub fn new(gamma_par: f64, gamma_perp: f64, omega0: f64) -> Result<Self, EmitterError> {
        if !(gamma_par.is_finite() && gamma_par > 0.0) {
            return Err(EmitterError::InvalidDecay(gamma_par));
        }
        if !(gamma_perp.is_finite() && gamma_perp >= 0.5 * gamma_par * (1.0 - DEPHASING_SLACK)) {
            return Err(EmitterError::DephasingBound {
                gamma_par,
                gamma_perp,
            });
        }
        Ok(Self {
            gamma_par,
            gamma_perp: gamma_perp.max(0.5 * gamma_par),
            omega0,
        })
    }

    /// Lifetime-limited emitter, `γ⊥ = γ∥/2` exactly.
    pub fn fourier_limited(gamma_par: f64, omega0: f64) -> Result<Self, EmitterError> {
        Self::new(gamma_par, 0.5 * gamma_par, omega0)
    }

    pub fn gamma_par(&self) -> f64 {
        self.gamma_par
    }

    pub fn gamma_perp(&self) -> f64 {
        self.gamma_perp
    }

    pub fn omega0(&self) -> f64 {
        self.omega0
    }

    /// Extra coherence decay on top of the radiative limit, `γ⊥ − γ∥/2`.
    pub fn pure_dephasing_rate(&self) -> f64 {
        (self.gamma_perp - 0.5 * self.gamma_par).max(0.0)
    }

    /// Low-power absorption FWHM in rad/s, `2γ⊥`.
    pub fn natural_fwhm(&self) -> f64 {
        2.0 * self.gamma_perp
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveField {
    rabi: f64,
    detuning: f64,
}

impl DriveField {
    pub fn new(rabi: f64, detuning: f64) -> Result<Self, EmitterError> {
        if !(rabi.is_finite() && rabi >= 0.0) {
            return Err(EmitterError::InvalidRabi(rabi));
        }
        if !detuning.is_finite() {
            return Err(EmitterError::InvalidDetuning(detuning));
        }
        Ok(Self { rabi, detuning })
    }

    pub fn resonant(rabi: f64) -> Result<Self, EmitterError> {
        Self::new(rabi, 0.0)
    }

    pub fn rabi(&self) -> f64 {
        self.rabi
    }

    pub fn detuning(&self) -> f64 {
        self.detuning
    }

    /// `s = Ω² / (γ∥ γ⊥)`.
    pub fn saturation_parameter(&self, emitter: &TwoLevelEmitter) -> f64 {
        self.rabi * self.rabi / (emitter.gamma_par * emitter.gamma_perp)
    }
}

/// Empirical saturation and broadening parameters of a measured line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturationModel {
    pub r_inf: f64,
    pub i_sat: f64,
    pub gamma0: f64,
}

impl SaturationModel {
    pub fn new(r_inf: f64, i_sat: f64, gamma0: f64) -> Result<Self, EmitterError> {
        if [r_inf, i_sat, gamma0].iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(Self { r_inf, i_sat, gamma0 })
        } else {
            Err(EmitterError::InvalidSaturationModel)
        }
    }

    /// Saturation parameter for an input power in the same unit as `i_sat`.
    pub fn saturation_parameter(&self, i_in: f64) -> f64 {
        i_in / self.i_sat
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalBackground {
    signal_rate: f64,
    background_rate: f64,
}

impl SignalBackground {
    pub fn new(signal_rate: f64, background_rate: f64) -> Result<Self, EmitterError> {
        if signal_rate.is_finite() && background_rate.is_finite() && signal_rate >= 0.0 && background_rate >= 0.0 {
            Ok(Self {
                signal_rate,
                background_rate,
            })
        } else {
            Err(EmitterError::InvalidRates)
        }
    }

    /// Background rate that gives a signal fraction `rho` for the given signal rate.
    pub fn background_for_rho(signal_rate: f64, rho: f64) -> Result<f64, EmitterError> {
        check_rho(rho)?;
        if rho == 0.0 {
            return Err(EmitterError::ZeroRho);
        }
        Ok(signal_rate * (1.0 - rho) / rho)
    }

    pub fn signal_rate(&self) -> f64 {
        self.signal_rate
    }

    pub fn background_rate(&self) -> f64 {
        self.background_rate
    }

    /// Signal fraction `S / (S + B)`; zero when both vanish.
    pub fn rho(&self) -> f64 {
        let total = self.signal_rate + self.background_rate;
        if total > 0.0 {
            self.signal_rate / total
        } else {
            0.0
        }
    }
}

/// Peak-normalized Lorentzian line on an offset.
pub fn lorentzian_line(omega: f64, omega0: f64, fwhm: f64, amplitude: f64, offset: f64) -> f64 {
    let hw = 0.5 * fwhm;
    offset + amplitude * hw * hw / ((omega - omega0).powi(2) + hw * hw)
}

/// Steady-state excited-state population from the optical Bloch equations.
pub fn steady_state_population(drive: &DriveField, emitter: &TwoLevelEmitter) -> f64 {
    let s = drive.saturation_parameter(emitter);
    let g2 = emitter.gamma_perp * emitter.gamma_perp;
    0.5 * s * g2 / (drive.detuning * drive.detuning + g2 * (1.0 + s))
}

/// Detected rate versus input power: `R∞ · I / (I_sat + I)`.
pub fn saturation_rate(i_in: f64, model: &SaturationModel) -> f64 {
    model.r_inf * i_in / (model.i_sat + i_in)
}

/// Power-broadened FWHM `Γ₀ √(1 + s)`, with `s` in saturation units.
pub fn broadened_linewidth(s: f64, gamma0: f64) -> f64 {
    gamma0 * (1.0 + s).sqrt()
}

/// Resonant-drive intensity correlation as a function of the raw rates.
///
/// `g²(τ) = 1 − e^{−a|τ|} [cos(Ω'|τ|) + (a/Ω') sin(Ω'|τ|)]` with
/// `a = (γ∥ + γ⊥)/2` and `Ω'² = Ω² − ((γ∥ − γ⊥)/2)²`. For `Ω'² < 0` the
/// trigonometric functions continue to their hyperbolic forms.
pub fn rabi_g2(tau: f64, rabi: f64, gamma_par: f64, gamma_perp: f64) -> f64 {
    let t = tau.abs();
    let a = 0.5 * (gamma_par + gamma_perp);
    let b = 0.5 * (gamma_par - gamma_perp);
    let q = rabi * rabi - b * b;
    let (c, s_over) = damped_oscillator(a, q, t);
    1.0 - (c + a * s_over)
}

/// Returns `e^{-a t} (cos(√q t), sin(√q t)/√q)`, continued analytically to
/// `q ≤ 0`. Requires `a > √(-q)` in the overdamped case.
fn damped_oscillator(a: f64, q: f64, t: f64) -> (f64, f64) {
    let x = q * t * t;
    if x.abs() < 1e-6 {
        // Series in x = q t² around the critically damped point.
        let env = (-a * t).exp();
        let c = 1.0 - x / 2.0 + x * x / 24.0;
        let s = t * (1.0 - x / 6.0 + x * x / 120.0);
        (env * c, env * s)
    } else if q > 0.0 {
        let env = (-a * t).exp();
        let w = q.sqrt();
        (env * (w * t).cos(), env * (w * t).sin() / w)
    } else {
        // Split into the two real decay rates so nothing overflows.
        let k = (-q).sqrt();
        let slow = (-(a - k) * t).exp();
        let fast = (-(a + k) * t).exp();
        (0.5 * (slow + fast), 0.5 * (slow - fast) / k)
    }
}

/// Closed-form `g²(τ)` of a resonantly driven two-level emitter.
pub fn analytic_g2(tau: f64, drive: &DriveField, emitter: &TwoLevelEmitter) -> Result<f64, EmitterError> {
    if tau.is_nan() {
        return Err(EmitterError::NanDelay);
    }
    if drive.detuning != 0.0 {
        return Err(EmitterError::NotResonant(drive.detuning));
    }
    if tau.is_infinite() {
        return Ok(1.0);
    }
    Ok(rabi_g2(tau, drive.rabi, emitter.gamma_par, emitter.gamma_perp))
}

fn check_rho(rho: f64) -> Result<(), EmitterError> {
    if (0.0..=1.0).contains(&rho) {
        Ok(())
    } else {
        Err(EmitterError::InvalidRho(rho))
    }
}

/// `g²` observed when a fraction `1 − rho` of the detected light is Poissonian background.
pub fn background_mix_g2(g2_pure: f64, rho: f64) -> Result<f64, EmitterError> {
    check_rho(rho)?;
    if !(g2_pure.is_finite() && g2_pure >= 0.0) {
        return Err(EmitterError::InvalidG2(g2_pure));
    }
    Ok(mix_unchecked(g2_pure, rho))
}

pub(crate) fn mix_unchecked(g2_pure: f64, rho: f64) -> f64 {
    let r2 = rho * rho;
    1.0 - r2 + r2 * g2_pure
}

/// Background-corrected `g²`. A negative value is kept and flagged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectedG2 {
    pub value: f64,
    /// The corrected value fell below zero; `value.max(0.0)` is the physical clamp.
    pub below_zero: bool,
}

/// Inverse of [`background_mix_g2`].
pub fn correct_g2_background(g2_meas: f64, rho: f64) -> Result<CorrectedG2, EmitterError> {
    check_rho(rho)?;
    if rho == 0.0 {
        return Err(EmitterError::ZeroRho);
    }
    if !g2_meas.is_finite() {
        return Err(EmitterError::InvalidG2(g2_meas));
    }
    let r2 = rho * rho;
    let value = (g2_meas - (1.0 - r2)) / r2;
    Ok(CorrectedG2 {
        value,
        below_zero: value < 0.0,
    })
}
