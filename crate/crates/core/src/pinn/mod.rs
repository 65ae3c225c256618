//! Physics-informed networks for the 2CXM: a time-to-concentration MLP
//! trained jointly with per-pixel log kinetic parameters.

mod adam;
mod config;
mod loss;
mod network;
mod train;

pub use adam::Adam;
pub use config::{LossWeights, PinnConfig, Variant};
pub use loss::{compute_loss, loss_and_gradient, LossTerms, Normalization, PinnProblem};
pub use network::{forward, forward_with_stats, glorot_bound, init_network, ForwardOutput, NetworkState};
pub use train::{
    build_problem, fit_volume, sample_collocation, train, train_from, FitResult, HistoryEntry, PixelData, VolumeFit,
    HISTORY_HEADER,
};

#[cfg(test)]
mod tests;
