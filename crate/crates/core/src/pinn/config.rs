use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinetics::KineticParams;

/// Which network layout and residual set to train.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Time input; per-pixel Cp and Ce heads; rp and re residuals.
    TwoCxm,
    /// Time plus in-plane coordinates as input; one network evaluation per
    /// (pixel, time); rp and re residuals.
    TwoCxmMesh,
    /// Per-pixel Cmyo head with an auxiliary Cp head; rmyo residual only.
    Reduced,
    /// Per-pixel Cp and Ce heads; rp, re and rmyo residuals.
    Combined,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::TwoCxm, Variant::TwoCxmMesh, Variant::Reduced, Variant::Combined];

    pub fn method_name(self) -> &'static str {
        match self {
            Variant::TwoCxm => "pinn-2cxm",
            Variant::TwoCxmMesh => "pinn-mesh",
            Variant::Reduced => "pinn-reduced",
            Variant::Combined => "pinn-combined",
        }
    }

    pub fn input_dim(self) -> usize {
        if self == Variant::TwoCxmMesh {
            3
        } else {
            1
        }
    }

    /// Width of the main output layer for `k` pixels.
    pub fn head_width(self, k: usize) -> usize {
        match self {
            Variant::TwoCxm | Variant::Combined => 2 * k + 1,
            Variant::Reduced => k + 1,
            Variant::TwoCxmMesh => 3,
        }
    }

    pub fn uses_compartment_residuals(self) -> bool {
        self != Variant::Reduced
    }

    pub fn uses_reduced_residual(self) -> bool {
        matches!(self, Variant::Reduced | Variant::Combined)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.method_name())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.method_name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown PINN variant `{s}`")))
    }
}

/// Weights of the four loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub data: f64,
    pub residual: f64,
    pub boundary: f64,
    pub regularization: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { data: 5.0, residual: 1.0, boundary: 1.0, regularization: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PinnConfig {
    pub variant: Variant,
    pub iterations: usize,
    pub learning_rate: f64,
    pub weights: LossWeights,
    pub n_collocation: usize,
    pub seed: u64,
    /// Draw fresh collocation times every iteration.
    pub resample_collocation: bool,
    pub initial: KineticParams,
    pub hidden: usize,
    pub log_interval: usize,
    /// Iterations at the start during which the kinetic parameters stay fixed.
    pub eta_warmup: usize,
}

impl Default for PinnConfig {
    fn default() -> Self {
        PinnConfig {
            variant: Variant::Combined,
            iterations: 25_000,
            learning_rate: 1e-3,
            weights: LossWeights::default(),
            n_collocation: 500,
            seed: 0,
            resample_collocation: false,
            initial: KineticParams { fp: 1.0, vp: 0.05, ve: 0.2, ps: 1.0 },
            hidden: 32,
            log_interval: 100,
            eta_warmup: 0,
        }
    }
}

impl PinnConfig {
    pub fn with_variant(variant: Variant) -> Self {
        PinnConfig { variant, ..PinnConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.n_collocation == 0 || self.hidden == 0 || self.log_interval == 0 {
            return Err(Error::invalid("iterations, n_collocation, hidden and log_interval must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        let w = self.weights;
        if [w.data, w.residual, w.boundary, w.regularization].iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::invalid("loss weights must be finite and >= 0"));
        }
        self.initial.validate()
    }
}
