//! Per-pixel Levenberg-Marquardt fit of the 2CXM forward model.

use nalgebra::{Matrix4, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinetics::{integrate_rk4, stable_substeps, ConcentrationSeries, KineticParams, MAX_SUBSTEPS};
use crate::maps::{KineticMaps, VolumeDims};
use crate::seed::derive_seed_indexed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NllsConfig {
    pub max_iterations: usize,
    pub initial: KineticParams,
    /// Box constraints; trial points are projected onto them.
    pub lower: KineticParams,
    pub upper: KineticParams,
    /// Optimize `ln(eta)` instead of `eta`.
    pub log_space: bool,
    pub multistart: usize,
    /// Extra jittered starts tried when the best fit ends on a box bound.
    pub bound_restarts: usize,
    pub damping_initial: f64,
    /// Damping is multiplied by this on a rejected step and divided on an accepted one.
    pub damping_factor: f64,
    /// Relative cost change below which an accepted step ends the fit.
    pub cost_tolerance: f64,
    /// Infinity norm of the scaled gradient below which the fit ends.
    pub gradient_tolerance: f64,
    /// Step infinity norm below which an accepted step ends the fit.
    pub step_tolerance: f64,
    /// Relative forward-difference step for the Jacobian.
    pub jacobian_step: f64,
    /// Minimum RK4 micro-steps per sample interval.
    pub substeps: usize,
    pub seed: u64,
}

impl Default for NllsConfig {
    fn default() -> Self {
        NllsConfig {
            max_iterations: 1000,
            initial: KineticParams { fp: 1.0, vp: 0.05, ve: 0.2, ps: 1.0 },
            lower: KineticParams { fp: 0.01, vp: 0.005, ve: 0.01, ps: 0.01 },
            upper: KineticParams { fp: 5.0, vp: 1.0, ve: 1.0, ps: 5.0 },
            log_space: true,
            multistart: 1,
            bound_restarts: 4,
            damping_initial: 1e-3,
            damping_factor: 10.0,
            cost_tolerance: 1e-10,
            gradient_tolerance: 1e-12,
            step_tolerance: 1e-10,
            jacobian_step: 1e-6,
            substeps: 1,
            seed: 0,
        }
    }
}

impl NllsConfig {
    pub fn validate(&self) -> Result<()> {
        let tolerances = [self.cost_tolerance, self.gradient_tolerance, self.step_tolerance, self.jacobian_step, self.damping_initial];
        if tolerances.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(Error::invalid("NLLS tolerances, Jacobian step and damping must be positive"));
        }
        if !(self.damping_factor > 1.0) {
            return Err(Error::invalid("damping_factor must be > 1"));
        }
        if self.multistart == 0 || self.max_iterations == 0 || self.substeps == 0 {
            return Err(Error::invalid("multistart, max_iterations and substeps must be >= 1"));
        }
        self.initial.validate()?;
        self.lower.validate()?;
        let (lo, hi, init) = (self.lower.to_array(), self.upper.to_array(), self.initial.to_array());
        if (0..4).any(|k| !(lo[k] < hi[k]) || init[k] < lo[k] || init[k] > hi[k]) {
            return Err(Error::invalid("NLLS bounds must satisfy lower < upper and contain the initial values"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitStatus {
    Converged,
    MaxIterations,
    /// The data cannot identify the parameters (zero AIF); initial values returned.
    Degenerate,
}

impl FitStatus {
    pub fn code(self) -> u8 {
        match self {
            FitStatus::Converged => 0,
            FitStatus::MaxIterations => 1,
            FitStatus::Degenerate => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelFit {
    pub params: KineticParams,
    /// `sum (model - curve)^2` in the data's units.
    pub cost: f64,
    pub status: FitStatus,
    pub iterations: usize,
    /// Cost after every accepted step of the winning start, starting with the initial cost.
    pub accepted_costs: Vec<f64>,
}

struct Model<'a> {
    aif: &'a ConcentrationSeries,
    curve: &'a [f64],
    /// Residuals are divided by this so tolerances do not depend on molar magnitudes.
    scale: f64,
    log_space: bool,
    substeps: usize,
    lo: Vector4<f64>,
    hi: Vector4<f64>,
}

impl Model<'_> {
    fn project(&self, x: Vector4<f64>) -> Vector4<f64> {
        x.zip_zip_map(&self.lo, &self.hi, |v, l, h| v.clamp(l, h))
    }

    /// Gradient with components that push against an active bound removed.
    fn projected_gradient(&self, x: &Vector4<f64>, g: &Vector4<f64>) -> Vector4<f64> {
        Vector4::from_fn(|k, _| {
            let at_lo = x[k] <= self.lo[k] && g[k] > 0.0;
            let at_hi = x[k] >= self.hi[k] && g[k] < 0.0;
            if at_lo || at_hi {
                0.0
            } else {
                g[k]
            }
        })
    }

    fn on_bound(&self, x: &Vector4<f64>) -> bool {
        (0..4).any(|k| x[k] <= self.lo[k] || x[k] >= self.hi[k])
    }

    fn params(&self, x: &Vector4<f64>) -> Option<KineticParams> {
        let a = [x[0], x[1], x[2], x[3]];
        let p = if self.log_space { KineticParams::from_log(a) } else { KineticParams::from_array(a) };
        p.validate().ok().map(|_| p)
    }

    fn micro_steps(&self, p: &KineticParams) -> Option<usize> {
        let m = self.substeps.max(stable_substeps(p, self.aif.grid.dt));
        (m <= MAX_SUBSTEPS).then_some(m)
    }

    /// Scaled residuals at `x` with a fixed micro-step count, or `None` outside the valid domain.
    fn residuals_with(&self, x: &Vector4<f64>, micro: usize) -> Option<Vec<f64>> {
        let p = self.params(x)?;
        let sol = integrate_rk4(&p, self.aif, micro).ok()?;
        let r: Vec<f64> = sol.tissue.values.iter().zip(self.curve).map(|(m, c)| (m - c) / self.scale).collect();
        r.iter().all(|v| v.is_finite()).then_some(r)
    }

    fn residuals(&self, x: &Vector4<f64>) -> Option<(Vec<f64>, usize)> {
        let micro = self.micro_steps(&self.params(x)?)?;
        self.residuals_with(x, micro).map(|r| (r, micro))
    }
}

fn cost_of(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

struct StartResult {
    x: Vector4<f64>,
    cost: f64,
    status: FitStatus,
    iterations: usize,
    accepted: Vec<f64>,
}

fn run_lm(model: &Model, x0: Vector4<f64>, cfg: &NllsConfig) -> Result<StartResult> {
    let (mut r, mut micro) = model
        .residuals(&x0)
        .ok_or_else(|| Error::numerical("NLLS initial point gives no finite model curve", Some(0)))?;
    let mut x = x0;
    let mut cost = cost_of(&r);
    let mut lambda = cfg.damping_initial;
    let mut accepted = vec![cost];
    let n = r.len();

    for it in 0..cfg.max_iterations {
        // forward-difference Jacobian at a fixed micro-step count
        let mut jac = vec![[0.0f64; 4]; n];
        for k in 0..4 {
            let h = cfg.jacobian_step * x[k].abs().max(1.0);
            let mut xh = x;
            xh[k] += h;
            let rh = model
                .residuals_with(&xh, micro)
                .ok_or_else(|| Error::numerical("NLLS Jacobian evaluation left the valid domain", Some(it)))?;
            for i in 0..n {
                jac[i][k] = (rh[i] - r[i]) / h;
            }
        }
        let mut jtj = Matrix4::<f64>::zeros();
        let mut g = Vector4::<f64>::zeros();
        for (row, ri) in jac.iter().zip(&r) {
            for a in 0..4 {
                g[a] += row[a] * ri;
                for b in 0..4 {
                    jtj[(a, b)] += row[a] * row[b];
                }
            }
        }
        if !g.iter().all(|v| v.is_finite()) {
            return Err(Error::numerical("NLLS gradient is not finite", Some(it)));
        }
        if model.projected_gradient(&x, &g).amax() < cfg.gradient_tolerance {
            return Ok(StartResult { x, cost, status: FitStatus::Converged, iterations: it, accepted });
        }

        // inner loop: raise damping until a step lowers the cost
        loop {
            let mut a = jtj;
            for d in 0..4 {
                a[(d, d)] += lambda * jtj[(d, d)].max(1e-12);
            }
            let step = a.cholesky().map(|c| c.solve(&(-g)));
            let trial = step.and_then(|s| {
                let xt = model.project(x + s);
                model.residuals(&xt).map(|(rt, mt)| (xt - x, xt, rt, mt))
            });
            match trial {
                Some((s, xt, rt, mt)) if cost_of(&rt) < cost => {
                    let new_cost = cost_of(&rt);
                    let change = cost - new_cost;
                    x = xt;
                    r = rt;
                    micro = mt;
                    cost = new_cost;
                    accepted.push(cost);
                    lambda = (lambda / cfg.damping_factor).max(1e-15);
                    if change <= cfg.cost_tolerance * cost.max(f64::MIN_POSITIVE) || s.amax() < cfg.step_tolerance {
                        return Ok(StartResult { x, cost, status: FitStatus::Converged, iterations: it + 1, accepted });
                    }
                    break;
                }
                _ => {
                    lambda *= cfg.damping_factor;
                    if lambda > 1e16 {
                        // no descent direction left at machine precision
                        return Ok(StartResult { x, cost, status: FitStatus::Converged, iterations: it + 1, accepted });
                    }
                }
            }
        }
    }
    Ok(StartResult { x, cost, status: FitStatus::MaxIterations, iterations: cfg.max_iterations, accepted })
}

/// Starting points: the configured initial values, then jittered copies
/// (log-uniform within half a decade) that depend only on the seed.
fn starts(cfg: &NllsConfig) -> Vec<KineticParams> {
    let mut out = vec![cfg.initial];
    out.extend((1..cfg.multistart).map(|s| jittered(cfg, "nlls-start", s)));
    out
}

fn jittered(cfg: &NllsConfig, label: &str, index: usize) -> KineticParams {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed_indexed(cfg.seed, label, index as u64));
    KineticParams::from_array(cfg.initial.to_array().map(|v| v * 10f64.powf(rng.gen_range(-0.5..0.5))))
}

/// Fits one tissue curve by Levenberg-Marquardt.
pub fn fit_pixel(curve: &ConcentrationSeries, aif: &ConcentrationSeries, cfg: &NllsConfig) -> Result<PixelFit> {
    cfg.validate()?;
    if curve.grid != aif.grid || curve.values.len() != aif.values.len() {
        return Err(Error::invalid("curve and AIF must share a time grid"));
    }
    if curve.values.iter().chain(&aif.values).any(|v| !v.is_finite()) {
        return Err(Error::invalid("curve and AIF must be finite"));
    }
    let scale = aif.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        let cost = cost_of(&curve.values);
        return Ok(PixelFit { params: cfg.initial, cost, status: FitStatus::Degenerate, iterations: 0, accepted_costs: vec![cost] });
    }
    let to_x = |p: KineticParams| Vector4::from(if cfg.log_space { p.to_log() } else { p.to_array() });
    let model = Model {
        aif,
        curve: &curve.values,
        scale,
        log_space: cfg.log_space,
        substeps: cfg.substeps,
        lo: to_x(cfg.lower),
        hi: to_x(cfg.upper),
    };
    let mut best: Option<StartResult> = None;
    let mut last_err = None;
    let mut attempt = |p: KineticParams, best: &mut Option<StartResult>| match run_lm(&model, model.project(to_x(p)), cfg) {
        Ok(res) => {
            if best.as_ref().map_or(true, |b| res.cost < b.cost) {
                *best = Some(res);
            }
        }
        Err(e) => last_err = Some(e),
    };
    for p in starts(cfg) {
        attempt(p, &mut best);
    }
    // A fit resting on a bound is often a spurious corner minimum (ve and PS
    // both at their floor mimic a one-compartment curve).
    for s in 0..cfg.bound_restarts {
        match &best {
            Some(b) if !model.on_bound(&b.x) => break,
            _ => attempt(jittered(cfg, "nlls-restart", s), &mut best),
        }
    }
    let best = match best {
        Some(b) => b,
        None => return Err(last_err.unwrap_or_else(|| Error::numerical("NLLS found no valid start", None))),
    };
    let params = model.params(&best.x).ok_or_else(|| Error::numerical("NLLS ended outside the valid domain", None))?;
    let s2 = scale * scale;
    Ok(PixelFit {
        params,
        cost: best.cost * s2,
        status: best.status,
        iterations: best.iterations,
        accepted_costs: best.accepted.iter().map(|c| c * s2).collect(),
    })
}

/// Per-pixel fits of a curve collection, in pixel order. Pixels whose fit
/// fails numerically keep the initial values with status `MaxIterations`
/// and an infinite cost.
pub fn fit_curves(curves: &[f64], aif: &ConcentrationSeries, cfg: &NllsConfig) -> Result<Vec<PixelFit>> {
    cfg.validate()?;
    let n = aif.grid.n;
    if curves.len() % n != 0 {
        return Err(Error::invalid("curve buffer is not a whole number of series"));
    }
    Ok(curves
        .par_chunks(n)
        .map(|c| {
            let series = ConcentrationSeries { grid: aif.grid, values: c.to_vec() };
            fit_pixel(&series, aif, cfg).unwrap_or_else(|_| PixelFit {
                params: cfg.initial,
                cost: f64::INFINITY,
                status: FitStatus::MaxIterations,
                iterations: cfg.max_iterations,
                accepted_costs: Vec::new(),
            })
        })
        .collect())
}

/// Parameter maps and per-pixel status for a volume.
#[derive(Debug, Clone, PartialEq)]
pub struct NllsVolumeFit {
    pub maps: KineticMaps,
    pub status: Vec<FitStatus>,
    pub cost: Vec<f64>,
}

pub fn fit_volume(dims: VolumeDims, curves: &[f64], aif: &ConcentrationSeries, cfg: &NllsConfig) -> Result<NllsVolumeFit> {
    if curves.len() != dims.len() * aif.grid.n {
        return Err(Error::invalid("curve count does not match the volume"));
    }
    let fits = fit_curves(curves, aif, cfg)?;
    let mut maps = KineticMaps::zeros(dims);
    for (i, f) in fits.iter().enumerate() {
        maps.set(i, f.params);
    }
    Ok(NllsVolumeFit { maps, status: fits.iter().map(|f| f.status).collect(), cost: fits.iter().map(|f| f.cost).collect() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinetics::{solve_2cxm, TimeGrid};
    use crate::phantom::GammaVariateAif;

    fn setup(p: KineticParams) -> (ConcentrationSeries, ConcentrationSeries) {
        let grid = TimeGrid::new(0.0, 0.02, 100).unwrap();
        let aif = GammaVariateAif::default().sample(&grid);
        let curve = solve_2cxm(&p, &aif, 1).unwrap().tissue;
        (curve, aif)
    }

    #[test]
    fn start_at_truth_converges_immediately() {
        let truth = KineticParams::new(1.5, 0.1, 0.5, 2.5).unwrap();
        let (curve, aif) = setup(truth);
        let fit = fit_pixel(&curve, &aif, &NllsConfig { initial: truth, ..NllsConfig::default() }).unwrap();
        assert_eq!(fit.status, FitStatus::Converged);
        assert!(fit.iterations <= 2, "{}", fit.iterations);
        assert!(fit.cost < 1e-12);
    }

    #[test]
    fn zero_data_is_degenerate() {
        let grid = TimeGrid::new(0.0, 0.02, 100).unwrap();
        let zero = ConcentrationSeries::new(grid, vec![0.0; 100]).unwrap();
        let cfg = NllsConfig::default();
        let fit = fit_pixel(&zero, &zero, &cfg).unwrap();
        assert_eq!(fit.status, FitStatus::Degenerate);
        assert_eq!(fit.params, cfg.initial);
    }

    #[test]
    fn recovers_noiseless_parameters_from_default_start() {
        for truth in [KineticParams::new(0.5, 0.02, 0.1, 0.5).unwrap(), KineticParams::new(2.0, 0.2, 0.5, 1.5).unwrap()] {
            let (curve, aif) = setup(truth);
            let fit = fit_pixel(&curve, &aif, &NllsConfig::default()).unwrap();
            for (e, t) in fit.params.to_array().iter().zip(truth.to_array()) {
                assert!((e - t).abs() / t < 1e-2, "{:?} vs {:?}", fit.params, truth);
            }
        }
    }

    #[test]
    fn restarts_escape_the_corner_minimum() {
        let truth = KineticParams::new(1.0, 0.02, 0.1, 2.5).unwrap();
        let (curve, aif) = setup(truth);
        let stuck = fit_pixel(&curve, &aif, &NllsConfig { bound_restarts: 0, ..NllsConfig::default() }).unwrap();
        assert!((stuck.params.ve - 0.01).abs() < 1e-9 && (stuck.params.ps - 0.01).abs() < 1e-9, "{:?}", stuck.params);
        let fit = fit_pixel(&curve, &aif, &NllsConfig::default()).unwrap();
        for (e, t) in fit.params.to_array().iter().zip(truth.to_array()) {
            assert!((e - t).abs() / t < 1e-2, "{:?}", fit.params);
        }
    }

    #[test]
    fn accepted_costs_never_increase() {
        let truth = KineticParams::new(2.0, 0.05, 0.2, 0.5).unwrap();
        let (mut curve, aif) = setup(truth);
        for (i, v) in curve.values.iter_mut().enumerate() {
            *v += 1e-5 * ((i * 7919 % 13) as f64 - 6.0);
        }
        let fit = fit_pixel(&curve, &aif, &NllsConfig::default()).unwrap();
        assert!(fit.accepted_costs.windows(2).all(|w| w[1] <= w[0]));
        assert!(fit.params.to_array().iter().all(|v| *v > 0.0));
    }

    #[test]
    fn estimates_stay_inside_bounds() {
        let truth = KineticParams::new(1.0, 0.05, 0.2, 1.5).unwrap();
        let (mut curve, aif) = setup(truth);
        // data with no exchange signature pushes PS toward its bound
        for (i, v) in curve.values.iter_mut().enumerate() {
            *v += 4e-5 * (((i * 2654435761usize) % 1000) as f64 / 500.0 - 1.0);
        }
        let cfg = NllsConfig::default();
        let fit = fit_pixel(&curve, &aif, &cfg).unwrap();
        let (p, lo, hi) = (fit.params.to_array(), cfg.lower.to_array(), cfg.upper.to_array());
        for k in 0..4 {
            assert!(p[k] >= lo[k] * (1.0 - 1e-12) && p[k] <= hi[k] * (1.0 + 1e-12), "{:?}", fit.params);
        }
        assert!(NllsConfig { lower: KineticParams { fp: 2.0, ..cfg.lower }, ..NllsConfig::default() }.validate().is_err());
    }

    #[test]
    fn multistart_is_deterministic_and_no_worse() {
        let truth = KineticParams::new(0.5, 0.2, 0.1, 2.5).unwrap();
        let (curve, aif) = setup(truth);
        let single = fit_pixel(&curve, &aif, &NllsConfig::default()).unwrap();
        let cfg = NllsConfig { multistart: 4, seed: 3, ..NllsConfig::default() };
        let multi = fit_pixel(&curve, &aif, &cfg).unwrap();
        assert!(multi.cost <= single.cost);
        assert_eq!(multi, fit_pixel(&curve, &aif, &cfg).unwrap());
    }
}
