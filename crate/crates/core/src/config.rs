//! Run configuration shared by every CLI command.
//!
//! A TOML file with optional sections; omitted keys take their defaults and
//! unknown keys are rejected:
//!
//! ```toml
//! seed = 7
//!
//! [phantom]
//! block = [10, 10, 1]
//! snr = 17.5
//!
//! [pinn]
//! variant = "combined"
//! iterations = 25000
//!
//! [nlls]
//! multistart = 1
//!
//! [ssim]
//! window = 7
//!
//! [conversion]
//! hct = 0.45
//! rho = 1.05
//! ```
//!
//! The `seed` keys inside sections are not read: each module's seed is
//! derived from the top-level `seed` with a fixed label (see [`RunConfig::resolved`]).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinetics::ConversionConstants;
use crate::metrics::SsimOptions;
use crate::nlls::NllsConfig;
use crate::phantom::PhantomConfig;
use crate::pinn::PinnConfig;
use crate::seed::derive_seed;

/// Largest seed representable in a TOML config.
pub const MAX_SEED: u64 = i64::MAX as u64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SsimConfig {
    pub window: usize,
    pub gaussian: bool,
    /// Fixed dynamic range instead of the ground-truth span.
    pub range: Option<f64>,
}

impl Default for SsimConfig {
    fn default() -> Self {
        SsimConfig { window: 7, gaussian: false, range: None }
    }
}

impl SsimConfig {
    pub fn options(&self) -> SsimOptions {
        SsimOptions { window: self.window, gaussian: self.gaussian, range: self.range, ..SsimOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub phantom: PhantomConfig,
    pub pinn: PinnConfig,
    pub nlls: NllsConfig,
    pub ssim: SsimConfig,
    pub conversion: ConversionConstants,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::invalid(format!("config: {}", e.message())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::invalid(format!("cannot read config {}: {e}", path.display())))?;
        RunConfig::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::invalid(format!("cannot serialize config: {e}")))
    }

    /// Copy with every module seed derived from the top-level seed.
    /// Derived seeds are kept below 2^63 because TOML integers are signed.
    pub fn resolved(&self) -> RunConfig {
        let seed = |label| derive_seed(self.seed, label) & MAX_SEED;
        let mut c = self.clone();
        c.phantom.seed = seed("phantom");
        c.pinn.seed = seed("pinn");
        c.nlls.seed = seed("nlls");
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.seed > MAX_SEED {
            return Err(Error::invalid(format!("seed must be at most {MAX_SEED}")));
        }
        self.phantom.validate()?;
        self.pinn.validate()?;
        self.nlls.validate()?;
        ConversionConstants::new(self.conversion.hct, self.conversion.rho)?;
        Ok(())
    }
}
