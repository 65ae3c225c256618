//! Two-compartment exchange model (2CXM): parameter types, forward solver,
//! ODE residuals and plasma-to-blood unit conversion.
//!
//! Plasma and interstitial concentrations evolve as
//!
//! ```text
//! vp dCp/dt = Fp (Caif - Cp) + PS (Ce - Cp)
//! ve dCe/dt = PS (Cp - Ce)
//! Cmyo      = vp Cp + ve Ce
//! ```
//!
//! with `Cp(t0) = Ce(t0) = 0`. Times are in minutes, concentrations in molar.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The four 2CXM parameters of one pixel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KineticParams {
    /// Plasma flow, mL/min/mL.
    pub fp: f64,
    /// Fractional plasma volume.
    pub vp: f64,
    /// Fractional interstitial volume.
    pub ve: f64,
    /// Permeability-surface area product, mL/min/mL.
    pub ps: f64,
}

impl KineticParams {
    pub fn new(fp: f64, vp: f64, ve: f64, ps: f64) -> Result<Self> {
        let p = KineticParams { fp, vp, ve, ps };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("Fp", self.fp), ("vp", self.vp), ("ve", self.ve), ("PS", self.ps)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Looser check used by the forward solver: the ODEs only divide by `vp`
    /// and `ve`, so zero flow or zero exchange is a valid (degenerate) system.
    pub fn validate_for_solver(&self) -> Result<()> {
        for (name, v) in [("vp", self.vp), ("ve", self.ve)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        for (name, v) in [("Fp", self.fp), ("PS", self.ps)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// True when `vp + ve > 1`, which is physiologically implausible but allowed.
    pub fn volume_warning(&self) -> bool {
        self.vp + self.ve > 1.0
    }

    /// Order: Fp, vp, ve, PS.
    pub fn to_array(self) -> [f64; 4] {
        [self.fp, self.vp, self.ve, self.ps]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        KineticParams { fp: a[0], vp: a[1], ve: a[2], ps: a[3] }
    }

    pub fn to_log(self) -> [f64; 4] {
        self.to_array().map(f64::ln)
    }

    pub fn from_log(phi: [f64; 4]) -> Self {
        Self::from_array(phi.map(f64::exp))
    }

    /// Magnitude of the fastest eigenvalue of the homogeneous system, 1/min.
    pub fn stiffness(&self) -> f64 {
        let a = (self.fp + self.ps) / self.vp;
        let d = self.ps / self.ve;
        let trace = a + d;
        let det = self.fp * self.ps / (self.vp * self.ve);
        // The system matrix is similar to a symmetric one, so the discriminant is >= 0.
        let disc = (trace * trace - 4.0 * det).max(0.0);
        0.5 * (trace + disc.sqrt())
    }
}

/// Uniform sampling grid `t_i = t0 + i dt`, `i = 0..n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub dt: f64,
    pub n: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, dt: f64, n: usize) -> Result<Self> {
        let g = TimeGrid { t0, dt, n };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.t0.is_finite() || !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::invalid(format!("time grid needs finite t0 and dt > 0 (t0={}, dt={})", self.t0, self.dt)));
        }
        if self.n < 2 {
            return Err(Error::invalid(format!("time grid needs at least 2 samples, got {}", self.n)));
        }
        Ok(())
    }

    /// Builds a grid from explicit sample times, rejecting non-uniform spacing.
    pub fn from_times(times: &[f64]) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::invalid("at least 2 time samples are required"));
        }
        let n = times.len();
        let dt = (times[n - 1] - times[0]) / (n - 1) as f64;
        let tol = 1e-6 * dt.abs().max(f64::MIN_POSITIVE);
        for (i, w) in times.windows(2).enumerate() {
            if ((w[1] - w[0]) - dt).abs() > tol {
                return Err(Error::invalid(format!("time samples are not uniformly spaced at index {}", i + 1)));
            }
        }
        TimeGrid::new(times[0], dt, n)
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.time(i)).collect()
    }

    /// Nominal acquisition length `n * dt`.
    pub fn duration(&self) -> f64 {
        self.n as f64 * self.dt
    }
}

/// Concentration samples on a [`TimeGrid`], molar.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationSeries {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
}

impl ConcentrationSeries {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        if values.len() != grid.n {
            return Err(Error::invalid(format!("series has {} values, grid declares {}", values.len(), grid.n)));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite concentration at sample {i}")));
        }
        Ok(ConcentrationSeries { grid, values })
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Plasma, interstitial and tissue curves produced by one forward solve.
#[derive(Debug, Clone, PartialEq)]
pub struct CompartmentSolution {
    pub plasma: ConcentrationSeries,
    pub interstitial: ConcentrationSeries,
    pub tissue: ConcentrationSeries,
}

/// Haematocrit and tissue density used for plasma-to-blood conversion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConversionConstants {
    pub hct: f64,
    /// Myocardial density, g/mL.
    pub rho: f64,
}

impl Default for ConversionConstants {
    fn default() -> Self {
        ConversionConstants { hct: 0.45, rho: 1.05 }
    }
}

impl ConversionConstants {
    pub fn new(hct: f64, rho: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&hct) {
            return Err(Error::invalid(format!("haematocrit must lie in [0, 1), got {hct}")));
        }
        if !(rho.is_finite() && rho > 0.0) {
            return Err(Error::invalid(format!("density must be > 0, got {rho}")));
        }
        Ok(ConversionConstants { hct, rho })
    }
}

/// Largest `|lambda| h` the solver allows per RK4 micro-step.
///
/// Classical RK4 is unstable past `|lambda| h ~ 2.79` and loses its
/// fourth-order accuracy well before that; 0.25 keeps the per-step
/// amplification error of the fastest mode near 1e-5.
pub const MAX_STEP_STIFFNESS: f64 = 0.25;

/// Hard cap on micro-steps per grid interval.
pub const MAX_SUBSTEPS: usize = 20_000;

/// Micro-steps per grid interval needed to keep `|lambda| h <= MAX_STEP_STIFFNESS`.
pub fn stable_substeps(params: &KineticParams, dt: f64) -> usize {
    let needed = (params.stiffness() * dt / MAX_STEP_STIFFNESS).ceil();
    if needed.is_finite() {
        (needed as usize).max(1)
    } else {
        usize::MAX
    }
}

/// Solves the 2CXM on the AIF's grid with classical RK4.
///
/// `substeps` is the minimum number of micro-steps per grid interval; the
/// solver raises it as needed so that stiff parameter sets stay within the
/// RK4 accuracy region (see [`stable_substeps`]). The AIF is linearly
/// interpolated at micro-step times.
pub fn solve_2cxm(params: &KineticParams, aif: &ConcentrationSeries, substeps: usize) -> Result<CompartmentSolution> {
    if substeps == 0 {
        return Err(Error::invalid("substeps must be >= 1"));
    }
    params.validate_for_solver()?;
    let micro = substeps.max(stable_substeps(params, aif.grid.dt));
    if micro > MAX_SUBSTEPS {
        return Err(Error::numerical(
            format!("2CXM solve: stiffness {:.3e}/min needs {micro} micro-steps per interval (limit {MAX_SUBSTEPS})", params.stiffness()),
            Some(0),
        ));
    }
    integrate_rk4(params, aif, micro)
}

/// Fixed-step RK4 with exactly `micro_steps` steps per grid interval and no
/// stability adjustment. Exposed for convergence studies.
pub fn integrate_rk4(params: &KineticParams, aif: &ConcentrationSeries, micro_steps: usize) -> Result<CompartmentSolution> {
    if micro_steps == 0 {
        return Err(Error::invalid("micro_steps must be >= 1"));
    }
    params.validate_for_solver()?;
    aif.grid.validate()?;
    if aif.values.len() != aif.grid.n {
        return Err(Error::invalid("AIF length does not match its grid"));
    }

    let KineticParams { fp, vp, ve, ps } = *params;
    let rhs = |cp: f64, ce: f64, a: f64| -> (f64, f64) {
        ((fp * (a - cp) + ps * (ce - cp)) / vp, ps * (cp - ce) / ve)
    };

    let n = aif.grid.n;
    let h = aif.grid.dt / micro_steps as f64;
    let mut cp_out = Vec::with_capacity(n);
    let mut ce_out = Vec::with_capacity(n);
    let (mut cp, mut ce) = (0.0f64, 0.0f64);
    cp_out.push(cp);
    ce_out.push(ce);

    for i in 0..n - 1 {
        let a0 = aif.values[i];
        let slope = (aif.values[i + 1] - a0) / micro_steps as f64;
        for s in 0..micro_steps {
            // AIF at the start, middle and end of the micro-step.
            let a_start = a0 + slope * s as f64;
            let a_mid = a_start + 0.5 * slope;
            let a_end = a_start + slope;

            let (k1p, k1e) = rhs(cp, ce, a_start);
            let (k2p, k2e) = rhs(cp + 0.5 * h * k1p, ce + 0.5 * h * k1e, a_mid);
            let (k3p, k3e) = rhs(cp + 0.5 * h * k2p, ce + 0.5 * h * k2e, a_mid);
            let (k4p, k4e) = rhs(cp + h * k3p, ce + h * k3e, a_end);
            cp += h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p);
            ce += h / 6.0 * (k1e + 2.0 * k2e + 2.0 * k3e + k4e);
        }
        if !(cp.is_finite() && ce.is_finite()) {
            return Err(Error::numerical("2CXM RK4 integration", Some(i + 1)));
        }
        cp_out.push(cp);
        ce_out.push(ce);
    }

    let tissue: Vec<f64> = cp_out.iter().zip(&ce_out).map(|(p, e)| vp * p + ve * e).collect();
    let grid = aif.grid;
    Ok(CompartmentSolution {
        plasma: ConcentrationSeries { grid, values: cp_out },
        interstitial: ConcentrationSeries { grid, values: ce_out },
        tissue: ConcentrationSeries { grid, values: tissue },
    })
}

/// Plasma and interstitial residuals `(rp, re)` of the 2CXM at one instant.
pub fn residuals_2cxm(params: &KineticParams, cp: f64, ce: f64, dcp_dt: f64, dce_dt: f64, caif: f64) -> (f64, f64) {
    let rp = params.vp * dcp_dt - params.ps * (ce - cp) - params.fp * (caif - cp);
    let re = params.ve * dce_dt - params.ps * (cp - ce);
    (rp, re)
}

/// Residual of the reduced (tissue-level) ODE `dCmyo/dt = Fp (Caif - Cp)`.
pub fn residual_reduced(params: &KineticParams, cp: f64, dcmyo_dt: f64, caif: f64) -> f64 {
    dcmyo_dt - params.fp * (caif - cp)
}

/// Converts plasma flow and volume to blood flow (mL/min/g) and blood volume (mL/g).
///
/// Uses `Fb = Fp / ((1 - hct) rho)` and `vb = vp / ((1 - hct) rho)`.
pub fn to_blood_units(fp: f64, vp: f64, consts: &ConversionConstants) -> Result<(f64, f64)> {
    let consts = ConversionConstants::new(consts.hct, consts.rho)?;
    let denom = (1.0 - consts.hct) * consts.rho;
    Ok((fp / denom, vp / denom))
}
