//! Digital reference object: gamma-variate arterial input, a block-wise
//! grid of 2CXM parameters, forward-simulated tissue curves and additive
//! Gaussian noise at a target SNR.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinetics::{solve_2cxm, ConcentrationSeries, KineticParams, TimeGrid};
use crate::maps::{KineticMaps, VolumeDims};

/// Plasma flow values along the x axis.
pub const FP_VALUES: [f64; 4] = [0.5, 1.0, 1.5, 2.0];
/// Plasma volume values (outer enumeration along y).
pub const VP_VALUES: [f64; 4] = [0.02, 0.05, 0.1, 0.2];
/// Interstitial volume values (inner enumeration along y).
pub const VE_VALUES: [f64; 3] = [0.1, 0.2, 0.5];
/// Permeability-surface area values along z.
pub const PS_VALUES: [f64; 3] = [0.5, 1.5, 2.5];

/// `A (t - t0)^alpha exp(-(t - t0) / beta)` for `t > t0`, zero before.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaVariateAif {
    /// Onset delay, min.
    pub onset: f64,
    /// Amplitude, M min^-alpha.
    pub amplitude: f64,
    pub alpha: f64,
    /// Time scale, min.
    pub beta: f64,
}

impl Default for GammaVariateAif {
    /// Onset 0.1 min, alpha 2.5, beta 0.12 min, peak 5 mM at 0.4 min.
    fn default() -> Self {
        GammaVariateAif::with_peak(0.1, 2.5, 0.12, 0.005).expect("default AIF constants are valid")
    }
}

impl GammaVariateAif {
    pub fn new(onset: f64, amplitude: f64, alpha: f64, beta: f64) -> Result<Self> {
        let aif = GammaVariateAif { onset, amplitude, alpha, beta };
        aif.validate()?;
        Ok(aif)
    }

    /// Chooses the amplitude so the curve peaks at `peak` (molar).
    pub fn with_peak(onset: f64, alpha: f64, beta: f64, peak: f64) -> Result<Self> {
        if !(alpha > 0.0 && beta > 0.0 && peak > 0.0) {
            return Err(Error::invalid("gamma variate needs alpha, beta and peak > 0"));
        }
        let tau = alpha * beta;
        let amplitude = peak / (tau.powf(alpha) * (-alpha).exp());
        GammaVariateAif::new(onset, amplitude, alpha, beta)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.onset.is_finite() {
            return Err(Error::invalid("AIF onset must be finite"));
        }
        for (name, v) in [("amplitude", self.amplitude), ("alpha", self.alpha), ("beta", self.beta)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("AIF {name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn value(&self, t: f64) -> f64 {
        if t <= self.onset {
            return 0.0;
        }
        let s = t - self.onset;
        self.amplitude * s.powf(self.alpha) * (-s / self.beta).exp()
    }

    pub fn peak_time(&self) -> f64 {
        self.onset + self.alpha * self.beta
    }

    pub fn peak_value(&self) -> f64 {
        self.value(self.peak_time())
    }

    pub fn sample(&self, grid: &TimeGrid) -> ConcentrationSeries {
        ConcentrationSeries { grid: *grid, values: grid.times().into_iter().map(|t| self.value(t)).collect() }
    }
}

/// How the noise standard deviation relates to the clean curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SnrMode {
    /// `sigma = max(curve) / snr`.
    #[default]
    Peak,
    /// `sigma = mean(curve) / snr`.
    Mean,
}

/// Layout and acquisition settings for a phantom.
///
/// Block index `bx` selects `fp_values[bx]`; block row `by` enumerates
/// `vp_values` (outer) times `ve_values` (inner); slice block `bz` selects
/// `ps_values[bz]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomConfig {
    pub fp_values: Vec<f64>,
    pub vp_values: Vec<f64>,
    pub ve_values: Vec<f64>,
    pub ps_values: Vec<f64>,
    /// Block extent in pixels along x, y, z.
    pub block: [usize; 3],
    pub t0: f64,
    pub dt: f64,
    pub n_time: usize,
    pub aif: GammaVariateAif,
    /// `None` or infinity disables noise.
    pub snr: Option<f64>,
    pub snr_mode: SnrMode,
    pub seed: u64,
    /// Minimum RK4 micro-steps per sample interval.
    pub substeps: usize,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            fp_values: FP_VALUES.to_vec(),
            vp_values: VP_VALUES.to_vec(),
            ve_values: VE_VALUES.to_vec(),
            ps_values: PS_VALUES.to_vec(),
            block: [10, 10, 1],
            t0: 0.0,
            dt: 0.02,
            n_time: 100,
            aif: GammaVariateAif::default(),
            snr: Some(17.5),
            snr_mode: SnrMode::Peak,
            seed: 0,
            substeps: 1,
        }
    }
}

impl PhantomConfig {
    /// 4 x 4 blocks of (Fp, vp) at ve = 0.2, PS = 1.5 in a single slice.
    pub fn mini(block: usize, snr: Option<f64>, seed: u64) -> Self {
        PhantomConfig {
            ve_values: vec![0.2],
            ps_values: vec![1.5],
            block: [block, block, 1],
            snr,
            seed,
            ..PhantomConfig::default()
        }
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.t0, self.dt, self.n_time)
    }

    pub fn block_counts(&self) -> [usize; 3] {
        [self.fp_values.len(), self.vp_values.len() * self.ve_values.len(), self.ps_values.len()]
    }

    pub fn dims(&self) -> VolumeDims {
        let c = self.block_counts();
        VolumeDims::new(c[0] * self.block[0], c[1] * self.block[1], c[2] * self.block[2])
    }

    /// Effective SNR, `None` when noise is disabled.
    pub fn noise_snr(&self) -> Option<f64> {
        self.snr.filter(|s| s.is_finite())
    }

    pub fn validate(&self) -> Result<()> {
        for (name, vals) in [("fp", &self.fp_values), ("vp", &self.vp_values), ("ve", &self.ve_values), ("ps", &self.ps_values)] {
            if vals.is_empty() || vals.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::invalid(format!("{name}_values must be non-empty and positive")));
            }
        }
        if self.block.iter().any(|&b| b == 0) {
            return Err(Error::invalid("block extents must be >= 1"));
        }
        if let Some(s) = self.snr {
            if !(s > 0.0) {
                return Err(Error::invalid(format!("snr must be > 0, got {s}")));
            }
        }
        if self.substeps == 0 {
            return Err(Error::invalid("substeps must be >= 1"));
        }
        self.aif.validate()?;
        self.grid()?;
        Ok(())
    }
}

/// One parameter block of the phantom.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Block {
    /// Block coordinates `(bx, by, bz)`.
    pub index: [usize; 3],
    pub params: KineticParams,
}

/// Enumerates every block's parameters in z-major, then y, then x order.
pub fn parameter_blocks(config: &PhantomConfig) -> Result<Vec<Block>> {
    config.validate()?;
    let [nx, ny, nz] = config.block_counts();
    let n_ve = config.ve_values.len();
    let mut blocks = Vec::with_capacity(nx * ny * nz);
    for bz in 0..nz {
        for by in 0..ny {
            for bx in 0..nx {
                let params = KineticParams::new(
                    config.fp_values[bx],
                    config.vp_values[by / n_ve],
                    config.ve_values[by % n_ve],
                    config.ps_values[bz],
                )?;
                blocks.push(Block { index: [bx, by, bz], params });
            }
        }
    }
    Ok(blocks)
}

/// The 144 blocks of the standard grid.
pub fn build_parameter_grid() -> Vec<Block> {
    parameter_blocks(&PhantomConfig::default()).expect("standard grid is valid")
}

/// Phantom volume: ground truth, noisy tissue curves and the clean AIF.
#[derive(Debug, Clone, PartialEq)]
pub struct DroVolume {
    pub dims: VolumeDims,
    pub grid: TimeGrid,
    pub aif: Vec<f64>,
    /// `dims.len() * grid.n` values; pixel `p` occupies `p * n .. (p + 1) * n`.
    pub curves: Vec<f64>,
    pub truth: KineticMaps,
    pub config: PhantomConfig,
}

impl DroVolume {
    pub fn curve(&self, pixel: usize) -> &[f64] {
        let n = self.grid.n;
        &self.curves[pixel * n..(pixel + 1) * n]
    }

    pub fn aif_series(&self) -> ConcentrationSeries {
        ConcentrationSeries { grid: self.grid, values: self.aif.clone() }
    }
}

/// Clean tissue curve of every block, in [`parameter_blocks`] order.
pub fn simulate_blocks(config: &PhantomConfig) -> Result<Vec<(Block, Vec<f64>)>> {
    let aif = config.aif.sample(&config.grid()?);
    parameter_blocks(config)?
        .into_iter()
        .map(|b| Ok((b, solve_2cxm(&b.params, &aif, config.substeps)?.tissue.values)))
        .collect()
}

/// Builds the phantom described by `config`.
///
/// Noise for pixel `p` comes from a ChaCha stream keyed by `(seed, p)`, so
/// the result does not depend on generation order.
pub fn generate_dro(config: &PhantomConfig) -> Result<DroVolume> {
    config.validate()?;
    let grid = config.grid()?;
    let dims = config.dims();
    let n = grid.n;
    let blocks = simulate_blocks(config)?;
    let [bcx, bcy, _] = config.block_counts();
    let [sx, sy, sz] = config.block;

    let mut curves = vec![0.0; dims.len() * n];
    let mut truth = KineticMaps::zeros(dims);
    for z in 0..dims.nz {
        for y in 0..dims.ny {
            for x in 0..dims.nx {
                let p = dims.index(x, y, z);
                let b = ((z / sz) * bcy + y / sy) * bcx + x / sx;
                let (block, clean) = &blocks[b];
                truth.set(p, block.params);
                let out = &mut curves[p * n..(p + 1) * n];
                out.copy_from_slice(clean);
                if let Some(snr) = config.noise_snr() {
                    let reference = match config.snr_mode {
                        SnrMode::Peak => clean.iter().copied().fold(0.0, f64::max),
                        SnrMode::Mean => clean.iter().sum::<f64>() / n as f64,
                    };
                    let sigma = reference / snr;
                    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                    rng.set_stream(p as u64);
                    for v in out.iter_mut() {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        *v += sigma * e;
                    }
                }
            }
        }
    }
    Ok(DroVolume { dims, grid, aif: config.aif.sample(&grid).values, curves, truth, config: config.clone() })
}
