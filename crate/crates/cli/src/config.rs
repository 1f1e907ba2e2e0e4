use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use penning_probe::electrodes::TrapModel;
use penning_probe::synth::CameraSpec;
use penning_probe::SCHEMA_TAG;

use crate::error::{CliError, CliResult};

/// I/O units; the only supported policy is µm / MHz / V·m⁻¹ on disk with
/// SI values in memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Units {
    pub length: String,
    pub frequency: String,
    pub field: String,
}

impl Default for Units {
    fn default() -> Self {
        Self { length: "um".into(), frequency: "MHz".into(), field: "V/m".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModesConfig {
    /// Overrides the layout field, T.
    pub b_tesla: Option<f64>,
    pub f_z_mhz: Vec<f64>,
}

impl Default for ModesConfig {
    fn default() -> Self {
        Self { b_tesla: None, f_z_mhz: vec![1.0, 1.6, 2.5, 2.6] }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrayFieldConfig {
    pub camera: CameraSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DipolesConfig {
    pub region_um: [f64; 4],
    pub nx: usize,
    pub nz: usize,
    /// Fixed λ in (e·Å/µm²)⁻²; chosen from the L-curve when absent.
    pub lambda: Option<f64>,
    /// Candidate λ range in decades relative to the mean normal-matrix diagonal.
    pub lambda_decades: [f64; 2],
    pub lambda_count: usize,
}

impl Default for DipolesConfig {
    fn default() -> Self {
        Self {
            region_um: [-500.0, 500.0, -500.0, 500.0],
            nx: 20,
            nz: 20,
            lambda: None,
            lambda_decades: [-6.0, 1.0],
            lambda_count: 15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseFitConfig {
    pub johnson: bool,
    pub technical: bool,
    pub beta_min: f64,
    pub beta_max: f64,
    pub beta_step: f64,
    pub f_ref_mhz: f64,
}

impl Default for NoiseFitConfig {
    fn default() -> Self {
        Self { johnson: true, technical: true, beta_min: 1.0, beta_max: 7.0, beta_step: 0.25, f_ref_mhz: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MagneticsConfig {
    /// Site whose resonance defines zero shift, µm.
    pub reference_um: [f64; 3],
    /// dω/dB, rad s⁻¹ T⁻¹; free-electron value when absent.
    pub sensitivity: Option<f64>,
}

impl Default for MagneticsConfig {
    fn default() -> Self {
        Self { reference_um: [0.0, 152.0, 0.0], sensitivity: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransportConfig {
    pub from_um: [f64; 3],
    pub to_um: [f64; 3],
    pub f_z_mhz: f64,
    pub speed_m_per_s: f64,
    pub step_um: f64,
    pub v_max: f64,
    pub lag_tolerance_v: f64,
}

impl Default for TransportConfig {
    fn default() -> Self {
        Self {
            from_um: [0.0, 152.0, 0.0],
            to_um: [0.0, 152.0, 100.0],
            f_z_mhz: 1.0,
            speed_m_per_s: 0.02,
            step_um: 1.0,
            v_max: 10.0,
            lag_tolerance_v: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema: String,
    /// Trap layout file; the bundled layout when absent.
    pub layout: Option<PathBuf>,
    /// Output directory when `--out` is not given.
    pub out: Option<PathBuf>,
    /// Seed when `--seed` is not given.
    pub seed: Option<u64>,
    pub units: Units,
    pub modes: ModesConfig,
    pub strayfield: StrayFieldConfig,
    pub dipoles: DipolesConfig,
    pub noisefit: NoiseFitConfig,
    pub magnetics: MagneticsConfig,
    pub transport: TransportConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema: SCHEMA_TAG.into(),
            layout: None,
            out: None,
            seed: None,
            units: Units::default(),
            modes: ModesConfig::default(),
            strayfield: StrayFieldConfig::default(),
            dipoles: DipolesConfig::default(),
            noisefit: NoiseFitConfig::default(),
            magnetics: MagneticsConfig::default(),
            transport: TransportConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads a config file; relative paths inside it resolve against its directory.
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::input(format!("config {}: {e}", path.display())))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.layout, &mut cfg.out].into_iter().flatten() {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.schema != SCHEMA_TAG {
            return Err(CliError::input(format!("config schema `{}` is not `{SCHEMA_TAG}`", self.schema)));
        }
        if self.units != Units::default() {
            return Err(CliError::input("units must be length = \"um\", frequency = \"MHz\", field = \"V/m\""));
        }
        if let Some(layout) = &self.layout {
            if !layout.is_file() {
                return Err(CliError::input(format!("layout file {} does not exist", layout.display())));
            }
        }
        Ok(())
    }

    pub fn trap(&self) -> CliResult<TrapModel> {
        match &self.layout {
            Some(p) => Ok(TrapModel::load(p)?),
            None => Ok(TrapModel::default_layout()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_other_units_and_missing_layout() {
        let mut cfg = RunConfig::default();
        cfg.units.length = "mm".into();
        assert!(cfg.validate().is_err());
        let cfg = RunConfig { layout: Some("/nonexistent/layout.toml".into()), ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
