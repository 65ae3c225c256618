//! Volume geometry and per-pixel parameter maps.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinetics::KineticParams;

/// Volume extent. Pixel `(x, y, z)` is stored at `(z * ny + y) * nx + x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VolumeDims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl VolumeDims {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Self {
        VolumeDims { nx, ny, nz }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.ny + y) * self.nx + x
    }

    pub fn coords(&self, index: usize) -> (usize, usize, usize) {
        let x = index % self.nx;
        let y = (index / self.nx) % self.ny;
        let z = index / (self.nx * self.ny);
        (x, y, z)
    }

    pub fn slice_len(&self) -> usize {
        self.nx * self.ny
    }
}

/// One of the four kinetic parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Param {
    Fp,
    Vp,
    Ve,
    Ps,
}

impl Param {
    pub const ALL: [Param; 4] = [Param::Fp, Param::Vp, Param::Ve, Param::Ps];

    pub fn name(self) -> &'static str {
        match self {
            Param::Fp => "Fp",
            Param::Vp => "vp",
            Param::Ve => "ve",
            Param::Ps => "PS",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Param {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fp" => Ok(Param::Fp),
            "vp" => Ok(Param::Vp),
            "ve" => Ok(Param::Ve),
            "ps" => Ok(Param::Ps),
            _ => Err(Error::invalid(format!("unknown parameter `{s}` (expected Fp, vp, ve or PS)"))),
        }
    }
}

/// Four parameter maps over a volume.
#[derive(Debug, Clone, PartialEq)]
pub struct KineticMaps {
    pub dims: VolumeDims,
    pub fp: Vec<f64>,
    pub vp: Vec<f64>,
    pub ve: Vec<f64>,
    pub ps: Vec<f64>,
}

impl KineticMaps {
    pub fn zeros(dims: VolumeDims) -> Self {
        let n = dims.len();
        KineticMaps { dims, fp: vec![0.0; n], vp: vec![0.0; n], ve: vec![0.0; n], ps: vec![0.0; n] }
    }

    pub fn from_params(dims: VolumeDims, params: &[KineticParams]) -> Result<Self> {
        if params.len() != dims.len() {
            return Err(Error::invalid(format!("{} parameter sets for a volume of {} pixels", params.len(), dims.len())));
        }
        let mut maps = KineticMaps::zeros(dims);
        for (i, p) in params.iter().enumerate() {
            maps.set(i, *p);
        }
        Ok(maps)
    }

    pub fn get(&self, pixel: usize) -> KineticParams {
        KineticParams { fp: self.fp[pixel], vp: self.vp[pixel], ve: self.ve[pixel], ps: self.ps[pixel] }
    }

    pub fn set(&mut self, pixel: usize, p: KineticParams) {
        self.fp[pixel] = p.fp;
        self.vp[pixel] = p.vp;
        self.ve[pixel] = p.ve;
        self.ps[pixel] = p.ps;
    }

    pub fn map(&self, param: Param) -> &[f64] {
        match param {
            Param::Fp => &self.fp,
            Param::Vp => &self.vp,
            Param::Ve => &self.ve,
            Param::Ps => &self.ps,
        }
    }

    pub fn map_mut(&mut self, param: Param) -> &mut Vec<f64> {
        match param {
            Param::Fp => &mut self.fp,
            Param::Vp => &mut self.vp,
            Param::Ve => &mut self.ve,
            Param::Ps => &mut self.ps,
        }
    }

    /// Checks that every map has `dims.len()` entries.
    pub fn validate(&self) -> Result<()> {
        for p in Param::ALL {
            if self.map(p).len() != self.dims.len() {
                return Err(Error::invalid(format!("{p} map has {} entries, expected {}", self.map(p).len(), self.dims.len())));
            }
        }
        Ok(())
    }

    pub fn mean(&self, param: Param) -> f64 {
        let m = self.map(param);
        m.iter().sum::<f64>() / m.len().max(1) as f64
    }
}
