use super::config::{LossWeights, Variant};
use super::network::{build_input, eta_vars, extract_fields, record_params, run_mlp, Fields, NetworkState};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Time standardization and concentration scaling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub mu_t: f64,
    pub sigma_t: f64,
    pub c_scale: f64,
}

impl Normalization {
    /// Mean and population standard deviation of `times`; `max(aif)` as scale.
    pub fn from_data(times: &[f64], aif: &[f64]) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::invalid("normalization needs at least two time samples"));
        }
        let n = times.len() as f64;
        let mu_t = times.iter().sum::<f64>() / n;
        let sigma_t = (times.iter().map(|t| (t - mu_t).powi(2)).sum::<f64>() / n).sqrt();
        let c_scale = aif.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(sigma_t > 0.0) {
            return Err(Error::invalid("time samples have zero spread"));
        }
        if !(c_scale > 0.0 && c_scale.is_finite()) {
            return Err(Error::invalid("AIF maximum must be positive"));
        }
        Ok(Normalization { mu_t, sigma_t, c_scale })
    }

    pub fn t_hat(&self, t: f64) -> f64 {
        (t - self.mu_t) / self.sigma_t
    }
}

/// Observed data in normalized units plus the geometry the loss needs.
#[derive(Debug, Clone, PartialEq)]
pub struct PinnProblem {
    pub variant: Variant,
    pub k: usize,
    pub norm: Normalization,
    /// Normalized acquisition times.
    pub t_obs: Vec<f64>,
    /// `N x K` normalized tissue curves.
    pub cmyo_obs: Tensor,
    /// `N x 1` normalized AIF.
    pub aif_obs: Tensor,
    /// Normalized time of `t = 0`.
    pub t_zero: f64,
    /// Per-pixel coordinates in `[-1, 1]` (Mesh variant only).
    pub coords: Option<Vec<(f64, f64)>>,
}

impl PinnProblem {
    /// `curves` holds `k` pixel curves of `times.len()` samples each, pixel-major.
    pub fn new(variant: Variant, times: &[f64], aif: &[f64], curves: &[f64], k: usize, coords: Option<Vec<(f64, f64)>>) -> Result<Self> {
        let n = times.len();
        if aif.len() != n || curves.len() != n * k || k == 0 {
            return Err(Error::invalid("curves, AIF and times disagree in length"));
        }
        if curves.iter().chain(aif).chain(times).any(|v| !v.is_finite()) {
            return Err(Error::invalid("observed data must be finite"));
        }
        if (variant == Variant::TwoCxmMesh) != coords.is_some() {
            return Err(Error::invalid("mesh coordinates are required for, and only for, the mesh variant"));
        }
        if coords.as_ref().is_some_and(|c| c.len() != k) {
            return Err(Error::invalid("one mesh coordinate per pixel is required"));
        }
        let norm = Normalization::from_data(times, aif)?;
        let mut obs = Tensor::zeros(n, k);
        for j in 0..k {
            for i in 0..n {
                obs.set(i, j, curves[j * n + i] / norm.c_scale);
            }
        }
        Ok(PinnProblem {
            variant,
            k,
            norm,
            t_obs: times.iter().map(|&t| norm.t_hat(t)).collect(),
            cmyo_obs: obs,
            aif_obs: Tensor::column(aif.iter().map(|v| v / norm.c_scale).collect()),
            t_zero: norm.t_hat(0.0),
            coords,
        })
    }
}

/// Loss value and its parts. `rp`, `re` and `rmyo` are the residual
/// sub-terms of `residual`; masked ones are exactly zero.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub data: f64,
    pub residual: f64,
    pub boundary: f64,
    pub regularization: f64,
    pub total: f64,
    pub rp: f64,
    pub re: f64,
    pub rmyo: f64,
}

impl LossTerms {
    pub fn weighted_sum(&self, w: &LossWeights) -> f64 {
        w.data * self.data + w.residual * self.residual + w.boundary * self.boundary + w.regularization * self.regularization
    }
}

struct LossVars {
    data: Var,
    residual: Var,
    boundary: Var,
    regularization: Var,
    total: Var,
    rp: Option<Var>,
    re: Option<Var>,
    rmyo: Option<Var>,
}

fn mse(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let d = tape.sub(a, b)?;
    let sq = tape.square(d);
    Ok(tape.mean(sq))
}

fn mean_square(tape: &mut Tape, a: Var) -> Var {
    let sq = tape.square(a);
    tape.mean(sq)
}

fn mean_neg_square(tape: &mut Tape, a: Var) -> Var {
    let m = tape.min_with_zero(a);
    mean_square(tape, m)
}

fn sum_vars(tape: &mut Tape, vars: &[Var]) -> Result<Var> {
    let mut acc = vars[0];
    for &v in &vars[1..] {
        acc = tape.add(acc, v)?;
    }
    Ok(acc)
}

fn build_loss(tape: &mut Tape, state: &NetworkState, problem: &PinnProblem, collocation: &[f64], w: &LossWeights) -> Result<(LossVars, usize)> {
    if state.variant != problem.variant || state.k != problem.k {
        return Err(Error::invalid("network and problem disagree on variant or pixel count"));
    }
    let n_obs = problem.t_obs.len();
    let n_r = collocation.len();
    if n_r == 0 {
        return Err(Error::invalid("at least one collocation point is required"));
    }
    let mut times = Vec::with_capacity(n_obs + n_r + 1);
    times.extend_from_slice(&problem.t_obs);
    times.extend_from_slice(collocation);
    times.push(problem.t_zero);

    let p = record_params(tape, state);
    let n_params = p.all.len();
    let input = build_input(tape, &times, problem.coords.as_deref())?;
    let batch = tape.primal(input).rows();
    let (head, aux) = run_mlp(tape, &p, input, batch)?;
    let eta = eta_vars(tape, p.phi)?;
    let variant = state.variant;
    let k = state.k;
    let obs = extract_fields(tape, variant, k, head, aux, &eta, 0, n_obs)?;
    let col = extract_fields(tape, variant, k, head, aux, &eta, n_obs, n_r)?;
    let bnd = extract_fields(tape, variant, k, head, aux, &eta, n_obs + n_r, 1)?;

    // data fit: tissue MSE averaged over pixels plus the shared AIF MSE
    let c_obs = tape.constant(problem.cmyo_obs.clone());
    let a_obs = tape.constant(problem.aif_obs.clone());
    let l_tissue = mse(tape, obs.cmyo, c_obs)?;
    let l_aif = mse(tape, obs.aif, a_obs)?;
    let data = tape.add(l_tissue, l_aif)?;

    let (rp, re, rmyo) = residual_terms(tape, variant, &col, &eta, 1.0 / problem.norm.sigma_t)?;
    let present: Vec<Var> = [rp, re, rmyo].into_iter().flatten().collect();
    let residual = sum_vars(tape, &present)?;

    let Fields { cp, ce, cmyo, aif } = bnd;
    let mut b_terms = vec![mean_square(tape, cp)];
    if let Some(ce) = ce {
        b_terms.push(mean_square(tape, ce));
    }
    b_terms.push(mean_square(tape, cmyo));
    b_terms.push(mean_square(tape, aif));
    let boundary = sum_vars(tape, &b_terms)?;

    // without a Ce output the second non-negativity term falls on Cmyo
    let second = col.ce.unwrap_or(col.cmyo);
    let r1 = mean_neg_square(tape, col.cp);
    let r2 = mean_neg_square(tape, second);
    let regularization = tape.add(r1, r2)?;

    let parts = [
        tape.scale(data, w.data),
        tape.scale(residual, w.residual),
        tape.scale(boundary, w.boundary),
        tape.scale(regularization, w.regularization),
    ];
    let total = sum_vars(tape, &parts)?;
    Ok((LossVars { data, residual, boundary, regularization, total, rp, re, rmyo }, n_params))
}

/// Mean squared residuals at the collocation block, masked by variant.
fn residual_terms(tape: &mut Tape, variant: Variant, col: &Fields, eta: &super::network::EtaVars, inv_sigma: f64) -> Result<(Option<Var>, Option<Var>, Option<Var>)> {
    let aif_minus_cp = tape.sub(col.aif, col.cp)?;
    let inflow = tape.mul(eta.fp, aif_minus_cp)?;
    let (mut rp, mut re, mut rmyo) = (None, None, None);
    if variant.uses_compartment_residuals() {
        let ce = col.ce.ok_or_else(|| Error::invalid("compartment residuals need a Ce output"))?;
        let dcp_hat = tape.tangent_of(col.cp);
        let dcp = tape.scale(dcp_hat, inv_sigma);
        let dce_hat = tape.tangent_of(ce);
        let dce = tape.scale(dce_hat, inv_sigma);
        let ce_minus_cp = tape.sub(ce, col.cp)?;
        let exchange = tape.mul(eta.ps, ce_minus_cp)?;
        // rp = vp dCp/dt - PS (Ce - Cp) - Fp (Caif - Cp)
        let vp_dcp = tape.mul(eta.vp, dcp)?;
        let a = tape.sub(vp_dcp, exchange)?;
        let r_p = tape.sub(a, inflow)?;
        // re = ve dCe/dt - PS (Cp - Ce)
        let ve_dce = tape.mul(eta.ve, dce)?;
        let r_e = tape.add(ve_dce, exchange)?;
        rp = Some(mean_square(tape, r_p));
        re = Some(mean_square(tape, r_e));
    }
    if variant.uses_reduced_residual() {
        let dm_hat = tape.tangent_of(col.cmyo);
        let dm = tape.scale(dm_hat, inv_sigma);
        let r_m = tape.sub(dm, inflow)?;
        rmyo = Some(mean_square(tape, r_m));
    }
    Ok((rp, re, rmyo))
}

fn read_terms(tape: &Tape, v: &LossVars) -> Result<LossTerms> {
    let get = |x: Var| tape.primal(x).item();
    let opt = |x: Option<Var>| x.map(|x| tape.primal(x).item()).unwrap_or(0.0);
    let terms = LossTerms {
        data: get(v.data),
        residual: get(v.residual),
        boundary: get(v.boundary),
        regularization: get(v.regularization),
        total: get(v.total),
        rp: opt(v.rp),
        re: opt(v.re),
        rmyo: opt(v.rmyo),
    };
    for (name, val) in [
        ("L_C", terms.data),
        ("L_r", terms.residual),
        ("L_b", terms.boundary),
        ("L_reg", terms.regularization),
        ("total loss", terms.total),
    ] {
        if !val.is_finite() {
            return Err(Error::numerical(format!("{name} is not finite"), None));
        }
    }
    Ok(terms)
}

/// Evaluates the weighted loss at normalized collocation times.
pub fn compute_loss(state: &NetworkState, problem: &PinnProblem, collocation: &[f64], weights: &LossWeights) -> Result<LossTerms> {
    let mut tape = Tape::new();
    let (vars, _) = build_loss(&mut tape, state, problem, collocation, weights)?;
    read_terms(&tape, &vars)
}

/// Loss and its gradient with respect to every tensor of [`NetworkState::params`].
pub fn loss_and_gradient(
    state: &NetworkState,
    problem: &PinnProblem,
    collocation: &[f64],
    weights: &LossWeights,
) -> Result<(LossTerms, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let (vars, n_params) = build_loss(&mut tape, state, problem, collocation, weights)?;
    let terms = read_terms(&tape, &vars)?;
    let grads = tape.backward(vars.total)?;
    let out: Vec<Tensor> = grads.iter().take(n_params).map(|(_, g)| g.clone()).collect();
    if out.iter().any(|g| !g.all_finite()) {
        return Err(Error::numerical("loss gradient is not finite", None));
    }
    Ok((terms, out))
}
