use std::io::Write;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::adam::Adam;
use super::config::{PinnConfig, Variant};
use super::loss::{loss_and_gradient, LossTerms, PinnProblem};
use super::network::{init_network, NetworkState};
use crate::error::{Error, Result};
use crate::kinetics::{KineticParams, TimeGrid};
use crate::maps::{KineticMaps, VolumeDims};
use crate::seed::{derive_seed, derive_seed_indexed};

/// Curves of `k` pixels sharing one acquisition grid and AIF (molar units).
#[derive(Debug, Clone, PartialEq)]
pub struct PixelData {
    pub grid: TimeGrid,
    pub aif: Vec<f64>,
    /// Pixel-major: pixel `j` occupies `j * n .. (j + 1) * n`.
    pub curves: Vec<f64>,
    pub k: usize,
    /// In-plane pixel positions, required by the Mesh variant.
    pub positions: Option<Vec<(usize, usize)>>,
}

impl PixelData {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.k == 0 {
            return Err(Error::invalid("at least one pixel is required"));
        }
        if self.aif.len() != self.grid.n || self.curves.len() != self.k * self.grid.n {
            return Err(Error::invalid("curve and AIF lengths do not match the grid"));
        }
        if self.positions.as_ref().is_some_and(|p| p.len() != self.k) {
            return Err(Error::invalid("one position per pixel is required"));
        }
        Ok(())
    }

    /// Positions min-max scaled to `[-1, 1]` per axis; a degenerate axis maps to 0.
    pub fn mesh_coordinates(&self) -> Option<Vec<(f64, f64)>> {
        let pos = self.positions.as_ref()?;
        let scale = |vals: Vec<usize>| -> Vec<f64> {
            let lo = *vals.iter().min().unwrap_or(&0) as f64;
            let hi = *vals.iter().max().unwrap_or(&0) as f64;
            vals.iter().map(|&v| if hi > lo { 2.0 * (v as f64 - lo) / (hi - lo) - 1.0 } else { 0.0 }).collect()
        };
        let xs = scale(pos.iter().map(|p| p.0).collect());
        let ys = scale(pos.iter().map(|p| p.1).collect());
        Some(xs.into_iter().zip(ys).collect())
    }
}

/// Loss terms and mean kinetic parameters at one logged iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryEntry {
    pub iteration: usize,
    pub terms: LossTerms,
    /// Mean Fp, vp, ve, PS over pixels.
    pub mean_eta: [f64; 4],
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: Vec<KineticParams>,
    pub history: Vec<HistoryEntry>,
    pub config: PinnConfig,
    pub seed: u64,
    pub duration: Duration,
    pub state: NetworkState,
}

pub const HISTORY_HEADER: &str = "iter,L_C,L_r,L_b,L_reg,total,mean_Fp,mean_vp,mean_ve,mean_PS";

impl FitResult {
    pub fn write_history_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{HISTORY_HEADER}")?;
        for h in &self.history {
            let t = &h.terms;
            let e = h.mean_eta;
            writeln!(
                w,
                "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
                h.iteration, t.data, t.residual, t.boundary, t.regularization, t.total, e[0], e[1], e[2], e[3]
            )?;
        }
        Ok(())
    }
}

/// Builds the normalized problem for `data`.
pub fn build_problem(data: &PixelData, variant: Variant) -> Result<PinnProblem> {
    data.validate()?;
    let coords = if variant == Variant::TwoCxmMesh {
        Some(data.mesh_coordinates().ok_or_else(|| Error::invalid("the mesh variant needs pixel positions"))?)
    } else {
        None
    };
    PinnProblem::new(variant, &data.grid.times(), &data.aif, &data.curves, data.k, coords)
}

/// `n` normalized times drawn uniformly over the acquisition window.
pub fn sample_collocation(problem: &PinnProblem, grid: &TimeGrid, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (grid.t0, grid.t0 + grid.duration());
    (0..n).map(|_| problem.norm.t_hat(rng.gen_range(lo..hi))).collect()
}

/// Trains a freshly initialized network.
pub fn train(data: &PixelData, config: &PinnConfig) -> Result<FitResult> {
    let state = init_network(config, data.k)?;
    train_from(state, data, config)
}

/// Trains starting from `state`.
pub fn train_from(mut state: NetworkState, data: &PixelData, config: &PinnConfig) -> Result<FitResult> {
    config.validate()?;
    if state.variant != config.variant || state.k != data.k {
        return Err(Error::invalid("initial network does not match the data or variant"));
    }
    let start = Instant::now();
    let problem = build_problem(data, config.variant)?;
    let colloc_seed = derive_seed(config.seed, "pinn-collocation");
    let mut collocation = sample_collocation(&problem, &data.grid, config.n_collocation, colloc_seed);
    let mut adam = Adam::new(&state.params(), config.learning_rate);
    let n_tensors = state.params().len();
    let mut history = Vec::with_capacity(config.iterations / config.log_interval);

    for it in 1..=config.iterations {
        if config.resample_collocation && it > 1 {
            let s = derive_seed_indexed(colloc_seed, "resample", it as u64);
            collocation = sample_collocation(&problem, &data.grid, config.n_collocation, s);
        }
        let (terms, grads) = loss_and_gradient(&state, &problem, &collocation, &config.weights).map_err(|e| match e {
            Error::NumericalFailure { context, .. } => Error::numerical(context, Some(it)),
            other => other,
        })?;
        if it % config.log_interval == 0 {
            history.push(HistoryEntry { iteration: it, terms, mean_eta: state.mean_eta() });
        }
        let mut frozen = vec![false; n_tensors];
        frozen[n_tensors - 1] = it <= config.eta_warmup;
        adam.step(&mut state.params_mut(), &grads, &frozen)?;
        if !state.phi.all_finite() {
            return Err(Error::numerical("kinetic parameters became non-finite", Some(it)));
        }
    }

    Ok(FitResult {
        params: state.etas(),
        history,
        config: config.clone(),
        seed: config.seed,
        duration: start.elapsed(),
        state,
    })
}

/// Maps plus the per-slice training records.
#[derive(Debug, Clone)]
pub struct VolumeFit {
    pub maps: KineticMaps,
    pub slices: Vec<FitResult>,
}

/// Trains one network per z-slice. Slice `z` uses a seed derived from
/// `config.seed` and `z`.
pub fn fit_volume(dims: VolumeDims, grid: &TimeGrid, aif: &[f64], curves: &[f64], config: &PinnConfig) -> Result<VolumeFit> {
    let n = grid.n;
    if curves.len() != dims.len() * n {
        return Err(Error::invalid("curve count does not match the volume"));
    }
    let mut maps = KineticMaps::zeros(dims);
    let mut slices = Vec::with_capacity(dims.nz);
    let per = dims.slice_len();
    for z in 0..dims.nz {
        let base = z * per;
        let positions = (0..per).map(|i| (i % dims.nx, i / dims.nx)).collect();
        let data = PixelData {
            grid: *grid,
            aif: aif.to_vec(),
            curves: curves[base * n..(base + per) * n].to_vec(),
            k: per,
            positions: Some(positions),
        };
        let cfg = PinnConfig { seed: derive_seed_indexed(config.seed, "pinn-slice", z as u64), ..config.clone() };
        let fit = train(&data, &cfg)?;
        for (j, p) in fit.params.iter().enumerate() {
            maps.set(base + j, *p);
        }
        slices.push(fit);
    }
    Ok(VolumeFit { maps, slices })
}
