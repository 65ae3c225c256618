//! Myocardial perfusion quantification with the two-compartment exchange
//! model: physics-informed neural networks, a Levenberg-Marquardt baseline,
//! a digital reference phantom, and map-level NMSE/SSIM evaluation.

pub mod autodiff;
pub mod config;
pub mod error;
pub mod io;
pub mod kinetics;
pub mod maps;
pub mod metrics;
pub mod nlls;
pub mod phantom;
pub mod pinn;
pub mod seed;

pub use error::{Error, Result};
