use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use kramers_lambda::pump::PumpConfig;
use kramers_lambda::spectrum::LineShapeParams;
use kramers_lambda::zeeman::{FieldConfig, GTensor};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Materials {
    pub ground: GTensor,
    pub excited: GTensor,
}

impl Default for Materials {
    fn default() -> Self {
        Self { ground: GTensor::nd_yvo4_ground(), excited: GTensor::nd_yvo4_excited() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Optics {
    /// Polarization angle from the c-axis.
    pub phi_deg: f64,
    /// Summed depth of all four lines for light polarized along c, before
    /// weighting by line strength.
    pub total_depth_pi: f64,
    pub total_depth_sigma: f64,
    pub gaussian_fwhm_ghz: f64,
    pub lorentzian_fwhm_ghz: f64,
    pub background_depth: f64,
    pub grid_start_ghz: f64,
    pub grid_stop_ghz: f64,
    pub grid_points: usize,
    pub phi_step_deg: f64,
}

impl Default for Optics {
    fn default() -> Self {
        Self {
            phi_deg: 0.0,
            total_depth_pi: 3.33,
            total_depth_sigma: 0.089,
            gaussian_fwhm_ghz: 2.0,
            lorentzian_fwhm_ghz: 0.0,
            background_depth: 0.0,
            grid_start_ghz: -12.0,
            grid_stop_ghz: 12.0,
            grid_points: 481,
            phi_step_deg: 10.0,
        }
    }
}

impl Optics {
    pub fn line_shape(&self) -> Result<LineShapeParams, CliError> {
        LineShapeParams::new(self.gaussian_fwhm_ghz, self.lorentzian_fwhm_ghz, 1.0).map_err(|e| CliError::Usage(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Output {
    pub directory: PathBuf,
}

impl Default for Output {
    fn default() -> Self {
        Self { directory: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub materials: Materials,
    pub field: FieldConfig,
    pub optics: Optics,
    pub pump: PumpConfig,
    pub output: Output,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            materials: Materials::default(),
            field: FieldConfig { magnitude_tesla: 0.31, theta_deg: 45.0, azimuth_deg: 0.0 },
            optics: Optics::default(),
            pump: PumpConfig::default(),
            output: Output::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let config = match path {
            None => Self::default(),
            Some(p) => {
                let file = File::open(p).map_err(|e| CliError::Usage(format!("cannot open config {}: {e}", p.display())))?;
                let mut de = serde_json::Deserializer::from_reader(BufReader::new(file));
                serde_path_to_error::deserialize(&mut de).map_err(|e| {
                    let at = e.path().to_string();
                    CliError::Usage(format!("{}: at '{at}': {}", p.display(), e.into_inner()))
                })?
            }
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        for (name, g) in [("materials.ground", &self.materials.ground), ("materials.excited", &self.materials.excited)] {
            GTensor::new(g.g_parallel, g.g_perpendicular, g.basis)
                .map_err(|e| CliError::Usage(format!("{name}: {e}")))?;
        }
        self.field.validate().map_err(|e| CliError::Usage(format!("field: {e}")))?;
        let o = &self.optics;
        o.line_shape()?;
        for (name, v) in [
            ("total_depth_pi", o.total_depth_pi),
            ("total_depth_sigma", o.total_depth_sigma),
            ("background_depth", o.background_depth),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(CliError::Usage(format!("optics.{name} = {v} must be finite and >= 0")));
            }
        }
        if !(o.grid_stop_ghz > o.grid_start_ghz) || o.grid_points < 2 {
            return Err(CliError::Usage("optics: grid needs grid_stop_ghz > grid_start_ghz and >= 2 points".into()));
        }
        if !(o.phi_step_deg.is_finite() && o.phi_step_deg > 0.0) {
            return Err(CliError::Usage(format!("optics.phi_step_deg = {} must be > 0", o.phi_step_deg)));
        }
        self.pump.validate().map_err(|e| CliError::Usage(format!("pump: {e}")))?;
        Ok(())
    }
}
