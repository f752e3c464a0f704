//! Scenario files: a documented TOML schema with SI units spelled out in the
//! key names (`tau_s`, `pressure_pa`, ...). Unknown keys are hard errors.
//!
//! Minimal example:
//!
//! ```toml
//! version = 1
//! name = "gas_only"
//!
//! [system]
//! radius_m = 97e-9
//! mass_kg = 7.07e-18
//! frequency_hz = 47e3
//! wavelength_m = 1.064e-6
//! trap_power_w = 0.3
//! scattered_power_w = 0.0
//! gouy_factor = 0.83
//! phase_factor_rad_m = 1.181e7
//! pressure_pa = 1.0
//! temperature_k = 300.0
//! gamma_gas_rad_s = 3141.6
//!
//! [feedback]
//! beta = 0.0
//! tau_s = 0.0
//!
//! [sim]
//! seed = 1
//! runs = 5
//! ```
//!
//! Sweep grids are interpreted on the configured axis: `phi0` in rad,
//! `omega` in rad/s, `gamma_c` in rad/s, `beta` dimensionless.

use crate::error::{Error, Result};
use crate::model;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// Schema version; must equal [`SCHEMA_VERSION`].
    pub version: u32,
    /// Scenario name; used in file names, so it must be filesystem-safe.
    pub name: String,
    pub system: SystemSection,
    pub feedback: FeedbackSection,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub analysis: AnalysisSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub radius_m: f64,
    /// Give either the density or the mass; the other follows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density_kg_m3: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass_kg: Option<f64>,
    /// Mechanical frequency [Hz].
    pub frequency_hz: f64,
    pub wavelength_m: f64,
    #[serde(default)]
    pub trap_power_w: f64,
    #[serde(default)]
    pub scattered_power_w: f64,
    #[serde(default)]
    pub gouy_factor: f64,
    pub phase_factor_rad_m: f64,
    #[serde(default)]
    pub pressure_pa: f64,
    #[serde(default = "default_temperature")]
    pub temperature_k: f64,
    /// Gas damping [rad/s]; derived from the pressure via kinetic gas theory
    /// when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_gas_rad_s: Option<f64>,
    #[serde(default)]
    pub gamma_recoil_rad_s: f64,
    #[serde(default)]
    pub gamma_cold_damp_rad_s: f64,
}

fn default_temperature() -> f64 {
    300.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackSection {
    pub beta: f64,
    pub tau_s: f64,
    #[serde(default)]
    pub phi0_rad: f64,
    #[serde(default)]
    pub sigma_phi_rad_sqrt_s: f64,
    #[serde(default = "default_efficiency")]
    pub efficiency: f64,
    /// "locked" (default) or "free_running" (loop phase random-walks between
    /// analysis windows, emulating an unstabilized loop).
    #[serde(default = "default_phi0_mode")]
    pub phi0_mode: String,
    /// Random-walk step per window [rad] in free-running mode.
    #[serde(default = "default_walk_step")]
    pub phi0_walk_step_rad: f64,
}

fn default_efficiency() -> f64 {
    1.0
}

fn default_phi0_mode() -> String {
    "locked".into()
}

fn default_walk_step() -> f64 {
    0.6
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    /// Integration step [s]; chosen automatically when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_s: Option<f64>,
    /// Simulated span per run [s]; defaults to 300 damping times.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
    /// Discarded initial span [s]; defaults to 15 damping times.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup_s: Option<f64>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Ensemble size per point.
    #[serde(default = "default_runs")]
    pub runs: usize,
    /// Output decimation; chosen automatically when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub store_every: Option<usize>,
    /// Analysis window [s] for free-running mode; defaults to 50 damping
    /// times of the intrinsic rate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_s: Option<f64>,
}

fn default_seed() -> u64 {
    1
}

fn default_runs() -> usize {
    5
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// One of "phi0", "omega", "gamma_c", "beta".
    pub axis: String,
    /// Grid on the axis (rad, rad/s, rad/s or dimensionless respectively);
    /// nonempty and strictly monotone.
    pub grid: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    /// Welch segment length in samples; power of two chosen automatically
    /// when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psd_segment: Option<usize>,
    #[serde(default = "default_overlap")]
    pub psd_overlap: f64,
    /// Half-width of the temperature integration band in fitted linewidths.
    #[serde(default = "default_band_linewidths")]
    pub band_linewidths: f64,
    /// Write per-run trajectory CSVs (large).
    #[serde(default)]
    pub emit_trajectories: bool,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            psd_segment: None,
            psd_overlap: default_overlap(),
            band_linewidths: default_band_linewidths(),
            emit_trajectories: false,
        }
    }
}

fn default_overlap() -> f64 {
    0.5
}

fn default_band_linewidths() -> f64 {
    10.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Phi0,
    Omega,
    GammaC,
    Beta,
}

impl SweepAxis {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "phi0" => Ok(Self::Phi0),
            "omega" => Ok(Self::Omega),
            "gamma_c" => Ok(Self::GammaC),
            "beta" => Ok(Self::Beta),
            other => Err(Error::ConfigError(format!(
                "sweep.axis must be phi0|omega|gamma_c|beta, got {other:?}"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Phi0 => "phi0",
            Self::Omega => "omega",
            Self::GammaC => "gamma_c",
            Self::Beta => "beta",
        }
    }
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let scenario: Scenario = toml::from_str(text)
            .map_err(|e| Error::ConfigError(format!("scenario parse failed: {e}")))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != SCHEMA_VERSION {
            return Err(Error::ConfigError(format!(
                "unsupported scenario version {} (this build reads {})",
                self.version, SCHEMA_VERSION
            )));
        }
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        {
            return Err(Error::ConfigError(format!(
                "scenario name {:?} is not filesystem-safe",
                self.name
            )));
        }
        if self.system.density_kg_m3.is_none() && self.system.mass_kg.is_none() {
            return Err(Error::ConfigError(
                "system needs density_kg_m3 or mass_kg".into(),
            ));
        }
        match self.feedback.phi0_mode.as_str() {
            "locked" | "free_running" => {}
            other => {
                return Err(Error::ConfigError(format!(
                    "feedback.phi0_mode must be locked|free_running, got {other:?}"
                )))
            }
        }
        if let Some(sweep) = &self.sweep {
            SweepAxis::parse(&sweep.axis)?;
            if sweep.grid.is_empty() {
                return Err(Error::ConfigError("sweep.grid is empty".into()));
            }
            let increasing = sweep.grid.windows(2).all(|w| w[0] < w[1]);
            let decreasing = sweep.grid.windows(2).all(|w| w[0] > w[1]);
            if sweep.grid.len() > 1 && !increasing && !decreasing {
                return Err(Error::ConfigError(
                    "sweep.grid must be strictly monotone".into(),
                ));
            }
        }
        if !(0.0..1.0).contains(&self.analysis.psd_overlap) {
            return Err(Error::ConfigError("analysis.psd_overlap must be in [0, 1)".into()));
        }
        if self.sim.runs == 0 {
            return Err(Error::ConfigError("sim.runs must be at least 1".into()));
        }
        // Build once to surface physics-level rejections early.
        self.build_base()?;
        Ok(())
    }

    /// Materialize the base (un-swept) parameter sets.
    pub fn build_base(&self) -> Result<(model::SystemParams, model::FeedbackParams)> {
        let s = &self.system;
        let particle = match (s.mass_kg, s.density_kg_m3) {
            (Some(m), _) => model::ParticleParams::from_radius_mass(s.radius_m, m)?,
            (None, Some(rho)) => model::ParticleParams::from_radius_density(s.radius_m, rho)?,
            (None, None) => unreachable!("validated above"),
        };
        let trap = model::TrapParams {
            omega: 2.0 * std::f64::consts::PI * s.frequency_hz,
            wavelength: s.wavelength_m,
            trap_power: s.trap_power_w,
            scattered_power: s.scattered_power_w,
            gouy_factor: s.gouy_factor,
            phase_factor: s.phase_factor_rad_m,
        };
        let gamma_gas = s.gamma_gas_rad_s.unwrap_or_else(|| {
            model::gamma_gas_from_pressure(s.pressure_pa, s.radius_m, particle.mass, s.temperature_k)
        });
        let bath = model::BathParams {
            pressure: s.pressure_pa,
            temperature: s.temperature_k,
            gamma_gas,
            gamma_recoil: s.gamma_recoil_rad_s,
            gamma_cold_damp: s.gamma_cold_damp_rad_s,
        };
        let system = model::SystemParams::new(particle, trap, bath)
            .map_err(|e| Error::ConfigError(format!("system section: {e}")))?;
        let feedback = model::FeedbackParams {
            beta: self.feedback.beta,
            tau: self.feedback.tau_s,
            phi0: self.feedback.phi0_rad,
            sigma_phi: self.feedback.sigma_phi_rad_sqrt_s,
            efficiency: self.feedback.efficiency,
        };
        feedback
            .validate()
            .map_err(|e| Error::ConfigError(format!("feedback section: {e}")))?;
        Ok((system, feedback))
    }

    /// Parameter sets at one sweep point.
    pub fn build_at(
        &self,
        axis: Option<SweepAxis>,
        value: f64,
    ) -> Result<(model::SystemParams, model::FeedbackParams)> {
        let (mut system, mut feedback) = self.build_base()?;
        match axis {
            None => {}
            Some(SweepAxis::Phi0) => feedback.phi0 = value,
            Some(SweepAxis::Omega) => system.trap.omega = value,
            Some(SweepAxis::Beta) => feedback.beta = value,
            Some(SweepAxis::GammaC) => {
                let s = (system.trap.omega * feedback.tau).sin();
                if s.abs() < 1e-9 {
                    return Err(Error::ConfigError(
                        "gamma_c sweep needs sin(omega tau) away from zero".into(),
                    ));
                }
                feedback.beta = value / (system.trap.omega * s);
            }
        }
        feedback
            .validate()
            .map_err(|e| Error::ConfigError(format!("sweep point {value}: {e}")))?;
        Ok((system, feedback))
    }

    pub fn sweep_axis(&self) -> Result<Option<SweepAxis>> {
        self.sweep
            .as_ref()
            .map(|s| SweepAxis::parse(&s.axis))
            .transpose()
    }

    pub fn free_running(&self) -> bool {
        self.feedback.phi0_mode == "free_running"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_toml() -> String {
        r#"
version = 1
name = "gas_only"

[system]
radius_m = 97e-9
mass_kg = 7.07e-18
frequency_hz = 47e3
wavelength_m = 1.064e-6
phase_factor_rad_m = 1.181e7
gamma_gas_rad_s = 3141.59

[feedback]
beta = 0.0
tau_s = 0.0

[sim]
seed = 7
runs = 2
"#
        .to_string()
    }

    #[test]
    fn parses_minimal_scenario() {
        let sc = Scenario::from_toml_str(&minimal_toml()).unwrap();
        assert_eq!(sc.name, "gas_only");
        assert_eq!(sc.sim.runs, 2);
        let (system, feedback) = sc.build_base().unwrap();
        assert!((system.trap.omega - 2.0 * std::f64::consts::PI * 47e3).abs() < 1e-6);
        assert_eq!(feedback.beta, 0.0);
        // Round trip through TOML.
        let sc2 = Scenario::from_toml_str(&sc.to_toml_string()).unwrap();
        assert_eq!(sc2.name, sc.name);
    }

    #[test]
    fn unknown_fields_are_hard_errors() {
        let text = minimal_toml().replace("[sim]", "typo_field = 3\n[sim]");
        assert!(matches!(
            Scenario::from_toml_str(&text),
            Err(Error::ConfigError(_))
        ));
    }

    #[test]
    fn version_and_name_validation() {
        let text = minimal_toml().replace("version = 1", "version = 99");
        assert!(Scenario::from_toml_str(&text).is_err());
        let text = minimal_toml().replace("\"gas_only\"", "\"bad name/with/slash\"");
        assert!(Scenario::from_toml_str(&text).is_err());
    }

    #[test]
    fn sweep_grid_must_be_monotone() {
        let mut sc = Scenario::from_toml_str(&minimal_toml()).unwrap();
        sc.sweep = Some(SweepSection {
            axis: "beta".into(),
            grid: vec![0.1, 0.05, 0.2],
        });
        assert!(sc.validate().is_err());
        sc.sweep = Some(SweepSection {
            axis: "beta".into(),
            grid: vec![0.01, 0.02, 0.04],
        });
        sc.feedback.tau_s = 6.34e-6;
        assert!(sc.validate().is_ok());
    }

    #[test]
    fn gamma_c_axis_maps_to_beta() {
        let mut sc = Scenario::from_toml_str(&minimal_toml()).unwrap();
        sc.feedback.tau_s = 6.34e-6;
        let (system, _) = sc.build_base().unwrap();
        let target = 500.0;
        let (_, fb) = sc.build_at(Some(SweepAxis::GammaC), target).unwrap();
        let got = model::coherent_damping(fb.beta, system.trap.omega, fb.tau);
        assert!((got - target).abs() < 1e-9 * target);
    }
}
