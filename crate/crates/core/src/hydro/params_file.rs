//! TOML parameter file.
//!
//! ```toml
//! version = 1
//! mass = [ ...36 numbers, row-major... ]
//! damping = [ [ ...36... ], ... six blocks ... ]
//! weight = 686.7
//! buoyancy = 686.7
//! cg = [0.0, 0.0, 0.0]
//! cb = [0.0, 0.0, -0.02]
//! thruster_coeffs = [0.001, 0.001, 0.001]
//! allocation = [ ...6 x m numbers, row-major... ]
//! max_speed = 200.0
//! free_dofs = [true, true, false, false, false, true]
//! ```

use std::path::Path;

use nalgebra::{Matrix6, Matrix6xX, Vector3};
use serde::{Deserialize, Serialize};

use super::VehicleParams;
use crate::error::{Error, Result};

pub const PARAMS_FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsFile {
    pub version: u32,
    pub mass: Vec<f64>,
    pub damping: Vec<Vec<f64>>,
    pub weight: f64,
    pub buoyancy: f64,
    pub cg: [f64; 3],
    pub cb: [f64; 3],
    pub thruster_coeffs: Vec<f64>,
    pub allocation: Vec<f64>,
    pub max_speed: f64,
    #[serde(default = "all_free")]
    pub free_dofs: [bool; 6],
}

fn all_free() -> [bool; 6] {
    [true; 6]
}

fn row_major(m: &Matrix6<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

impl From<&VehicleParams> for ParamsFile {
    fn from(p: &VehicleParams) -> Self {
        ParamsFile {
            version: PARAMS_FILE_VERSION,
            mass: row_major(&p.mass),
            damping: p.damping.iter().map(row_major).collect(),
            weight: p.weight,
            buoyancy: p.buoyancy,
            cg: p.cg.into(),
            cb: p.cb.into(),
            thruster_coeffs: p.thruster_coeffs.clone(),
            allocation: p.allocation.transpose().as_slice().to_vec(),
            max_speed: p.max_speed,
            free_dofs: p.free_dofs,
        }
    }
}

impl ParamsFile {
    /// Converts to validated parameters.
    pub fn into_params(self) -> Result<VehicleParams> {
        if self.version != PARAMS_FILE_VERSION {
            return Err(Error::format(
                "parameter file",
                format!("unsupported version {}", self.version),
            ));
        }
        let matrix = |v: &[f64], what: &str| -> Result<Matrix6<f64>> {
            if v.len() != 36 {
                return Err(Error::format(
                    "parameter file",
                    format!("{what} needs 36 entries, got {}", v.len()),
                ));
            }
            Ok(Matrix6::from_row_slice(v))
        };
        let mass = matrix(&self.mass, "mass")?;
        if self.damping.len() != 6 {
            return Err(Error::format(
                "parameter file",
                format!("expected 6 damping blocks, got {}", self.damping.len()),
            ));
        }
        let mut damping = [Matrix6::zeros(); 6];
        for (slot, block) in damping.iter_mut().zip(&self.damping) {
            *slot = matrix(block, "damping block")?;
        }
        let m = self.thruster_coeffs.len();
        if self.allocation.len() != 6 * m {
            return Err(Error::format(
                "parameter file",
                format!("allocation needs {} entries for {m} thrusters", 6 * m),
            ));
        }
        let params = VehicleParams {
            mass,
            damping,
            weight: self.weight,
            buoyancy: self.buoyancy,
            cg: Vector3::from(self.cg),
            cb: Vector3::from(self.cb),
            thruster_coeffs: self.thruster_coeffs,
            allocation: Matrix6xX::from_row_slice(&self.allocation),
            max_speed: self.max_speed,
            free_dofs: self.free_dofs,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn parse(text: &str) -> Result<VehicleParams> {
        let file: ParamsFile =
            toml::from_str(text).map_err(|e| Error::format("parameter file", e.to_string()))?;
        file.into_params()
    }

    pub fn render(params: &VehicleParams) -> String {
        toml::to_string(&ParamsFile::from(params)).expect("parameter file serializes")
    }
}

impl VehicleParams {
    pub fn load(path: &Path) -> Result<Self> {
        ParamsFile::parse(&crate::binio::read_text(path)?)
            .map_err(|e| e.context(format!("loading {}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, ParamsFile::render(self))?;
        Ok(())
    }
}
