//! TOML run configuration.
//!
//! Every physical quantity carries its unit in the key name. Frequencies and
//! rates are ordinary frequencies (`x_mhz` means x · 2π · 10⁶ rad/s
//! internally). Unknown keys are rejected and missing ones are reported with
//! their full path, e.g. `emitter.gamma_par_mhz`.

use std::f64::consts::PI;
use std::path::Path;

use anyhow::{Context, Result};
use fiberphoton::emitter_model::{DriveField, TwoLevelEmitter};
use fiberphoton::interface_optics::{DipoleEmitter, FiberSpec, OpticalInterface, Orientation};
use fiberphoton::stream_sim::SimConfig;
use serde::Deserialize;

use crate::UsageError;

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub interface: Option<InterfaceSection>,
    pub dipole: Option<DipoleSection>,
    pub fiber: Option<FiberSection>,
    pub emitter: Option<EmitterSection>,
    pub drive: Option<DriveSection>,
    pub sim: Option<SimSection>,
    pub correlate: Option<CorrelateSection>,
    pub fit: Option<FitSection>,
    pub spectra: Option<SpectraSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterfaceSection {
    pub n_upper: f64,
    pub n_lower: f64,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum OrientationKey {
    Parallel,
    Orthogonal,
    Tilted,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DipoleSection {
    pub orientation: OrientationKey,
    /// Only read for `tilted`; measured from the interface normal.
    pub tilt_deg: Option<f64>,
    pub distance_um: f64,
    pub wavelength_nm: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiberSection {
    pub na: f64,
    pub core_diameter_um: f64,
    pub n_core: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmitterSection {
    pub gamma_par_mhz: f64,
    /// Defaults to the Fourier limit, half of `gamma_par_mhz`.
    pub gamma_perp_mhz: Option<f64>,
    #[serde(default)]
    pub transition_thz: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveSection {
    pub rabi_mhz: f64,
    #[serde(default)]
    pub detuning_mhz: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub duration_s: f64,
    pub seed: u64,
    /// Defaults to the largest stable step.
    pub dt_ps: Option<f64>,
    #[serde(default = "one")]
    pub eta_det: f64,
    #[serde(default = "half")]
    pub split_ratio: f64,
    /// Signal fraction per channel; overrides the explicit background rates.
    pub rho: Option<f64>,
    #[serde(default)]
    pub bg_rate_a_cps: f64,
    #[serde(default)]
    pub bg_rate_b_cps: f64,
    #[serde(default = "default_dead_time_ns")]
    pub dead_time_ns: f64,
    #[serde(default = "one_ps")]
    pub resolution_ps: u64,
}

fn one() -> f64 {
    1.0
}

fn half() -> f64 {
    0.5
}

fn default_dead_time_ns() -> f64 {
    fiberphoton::stream_sim::DEFAULT_DEAD_TIME_S * 1e9
}

fn one_ps() -> u64 {
    fiberphoton::stream_sim::DEFAULT_RESOLUTION_PS
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrelateSection {
    pub bin_ps: u64,
    pub range_ps: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    pub model: String,
    pub damping: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectraSection {
    pub cut_on_nm: f64,
    pub cut_off_nm: f64,
}

pub fn mhz(v: f64) -> f64 {
    2.0 * PI * v * 1e6
}

/// Parses a configuration document, turning serde errors into usage errors
/// that name the offending key.
pub fn parse(text: &str) -> Result<RunConfig, UsageError> {
    let de = toml::Deserializer::parse(text).map_err(|e| UsageError(format!("config: {}", e.message().trim())))?;
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.inner().message().trim().to_string();
        let msg = match inner.strip_prefix("missing field `").and_then(|r| r.split_once('`')) {
            Some((field, _)) if path == "." => format!("missing key `{field}`"),
            Some((field, _)) => format!("missing key `{path}.{field}`"),
            None if path == "." => inner,
            None => format!("`{path}`: {inner}"),
        };
        UsageError(format!("config: {msg}"))
    })
}

pub fn load(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("config: cannot read {}", path.display()))?;
    Ok(parse(&text)?)
}

fn require<'a, T>(section: &'a Option<T>, name: &str) -> Result<&'a T, UsageError> {
    section
        .as_ref()
        .ok_or_else(|| UsageError(format!("config: missing section `[{name}]`")))
}

impl RunConfig {
    pub fn interface(&self) -> Result<OpticalInterface> {
        let s = require(&self.interface, "interface")?;
        OpticalInterface::new(s.n_upper, s.n_lower).context("interface_optics")
    }

    pub fn dipole(&self) -> Result<DipoleEmitter> {
        let s = require(&self.dipole, "dipole")?;
        let orientation = match s.orientation {
            OrientationKey::Parallel => Orientation::Parallel,
            OrientationKey::Orthogonal => Orientation::Orthogonal,
            OrientationKey::Tilted => {
                let deg = s.tilt_deg.ok_or_else(|| UsageError("config: missing key `dipole.tilt_deg`".into()))?;
                Orientation::Tilted(deg.to_radians())
            }
        };
        DipoleEmitter::new(orientation, s.distance_um, s.wavelength_nm).context("interface_optics")
    }

    pub fn fiber(&self) -> Result<FiberSpec> {
        let s = require(&self.fiber, "fiber")?;
        FiberSpec::new(s.na, 0.5 * s.core_diameter_um, s.n_core).context("interface_optics")
    }

    pub fn emitter(&self) -> Result<TwoLevelEmitter> {
        let s = require(&self.emitter, "emitter")?;
        let gpar = mhz(s.gamma_par_mhz);
        let gperp = s.gamma_perp_mhz.map(mhz).unwrap_or(0.5 * gpar);
        TwoLevelEmitter::new(gpar, gperp, 2.0 * PI * s.transition_thz * 1e12).context("emitter_model")
    }

    pub fn drive(&self) -> Result<DriveField> {
        let s = require(&self.drive, "drive")?;
        DriveField::new(mhz(s.rabi_mhz), mhz(s.detuning_mhz)).context("emitter_model")
    }

    pub fn sim(&self) -> Result<SimConfig> {
        let s = require(&self.sim, "sim")?;
        let mut cfg = SimConfig::new(self.drive()?, self.emitter()?, s.duration_s, s.seed);
        if let Some(dt) = s.dt_ps {
            cfg.dt_s = dt * 1e-12;
        }
        cfg.eta_det = s.eta_det;
        cfg.split_ratio = s.split_ratio;
        cfg.bg_rate_a = s.bg_rate_a_cps;
        cfg.bg_rate_b = s.bg_rate_b_cps;
        cfg.dead_time_s = s.dead_time_ns * 1e-9;
        cfg.resolution_ps = s.resolution_ps;
        if let Some(rho) = s.rho {
            if !(rho > 0.0 && rho <= 1.0) {
                return Err(UsageError(format!("config: `sim.rho` must be in (0, 1], got {rho}")).into());
            }
            cfg = cfg.with_signal_fraction(rho);
        }
        cfg.validate().context("stream_sim")?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_key_reports_full_path() {
        let err = parse("[emitter]\ngamma_perp_mhz = 8.5\n").unwrap_err();
        assert!(err.0.contains("`emitter.gamma_par_mhz`"), "{}", err.0);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = parse("[drive]\nrabi_mhz = 42.0\nrabi = 1.0\n").unwrap_err();
        assert!(err.0.contains("drive") && err.0.contains("rabi"), "{}", err.0);
        let err = parse("[drvie]\nrabi_mhz = 42.0\n").unwrap_err();
        assert!(err.0.contains("drvie"), "{}", err.0);
    }

    #[test]
    fn full_simulation_section() {
        let cfg = parse(
            "[emitter]\ngamma_par_mhz = 17.0\n[drive]\nrabi_mhz = 42.0\n\
             [sim]\nduration_s = 1e-3\nseed = 3\nrho = 0.8\ndead_time_ns = 0.0\n",
        )
        .unwrap();
        let sim = cfg.sim().unwrap();
        assert_eq!(sim.seed, 3);
        assert!((sim.emitter.gamma_perp() - 0.5 * mhz(17.0)).abs() < 1e-6);
        assert!(sim.bg_rate_a > 0.0 && sim.dead_time_s == 0.0);
    }
}
