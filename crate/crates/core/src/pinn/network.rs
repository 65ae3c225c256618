use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{PinnConfig, Variant};
use crate::autodiff::{Tape, Tensor, Var, BATCH_NORM_EPS};
use crate::error::{Error, Result};
use crate::kinetics::KineticParams;
use crate::seed::derive_seed;

/// Row of `phi` holding each kinetic parameter.
pub const PHI_FP: usize = 0;
pub const PHI_VP: usize = 1;
pub const PHI_VE: usize = 2;
pub const PHI_PS: usize = 3;

/// Trainable values: MLP weights, batch-norm parameters and per-pixel
/// log kinetic parameters `phi` (rows Fp, vp, ve, PS; one column per pixel).
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub variant: Variant,
    pub k: usize,
    pub w1: Tensor,
    pub b1: Tensor,
    pub bn1_scale: Tensor,
    pub bn1_shift: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub bn2_scale: Tensor,
    pub bn2_shift: Tensor,
    pub w_out: Tensor,
    pub b_out: Tensor,
    /// Auxiliary per-pixel Cp head of the Reduced variant.
    pub aux: Option<(Tensor, Tensor)>,
    pub phi: Tensor,
}

fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = glorot_bound(fan_in, fan_out);
    let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::from_vec(fan_in, fan_out, data).expect("shape matches")
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Glorot-uniform weights, zero biases, unit batch-norm scale, zero shift,
/// `phi = ln(initial)` for every pixel. The RNG stream is derived from
/// `config.seed`.
pub fn init_network(config: &PinnConfig, k: usize) -> Result<NetworkState> {
    config.validate()?;
    if k == 0 {
        return Err(Error::invalid("a network needs at least one pixel"));
    }
    let variant = config.variant;
    let h = config.hidden;
    let d = variant.input_dim();
    let out = variant.head_width(k);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "pinn-network"));
    let w1 = glorot(&mut rng, d, h);
    let w2 = glorot(&mut rng, h, h);
    let w_out = glorot(&mut rng, h, out);
    let aux = (variant == Variant::Reduced).then(|| (glorot(&mut rng, h, k), Tensor::zeros(1, k)));
    let log = config.initial.to_log();
    let mut phi = Tensor::zeros(4, k);
    for (r, v) in log.iter().enumerate() {
        for c in 0..k {
            phi.set(r, c, *v);
        }
    }
    Ok(NetworkState {
        variant,
        k,
        w1,
        b1: Tensor::zeros(1, h),
        bn1_scale: Tensor::filled(1, h, 1.0),
        bn1_shift: Tensor::zeros(1, h),
        w2,
        b2: Tensor::zeros(1, h),
        bn2_scale: Tensor::filled(1, h, 1.0),
        bn2_shift: Tensor::zeros(1, h),
        w_out,
        b_out: Tensor::zeros(1, out),
        aux,
        phi,
    })
}

impl NetworkState {
    pub fn hidden(&self) -> usize {
        self.w2.rows()
    }

    /// Every trainable tensor in a fixed order; `phi` is last.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut v = vec![
            &self.w1,
            &self.b1,
            &self.bn1_scale,
            &self.bn1_shift,
            &self.w2,
            &self.b2,
            &self.bn2_scale,
            &self.bn2_shift,
            &self.w_out,
            &self.b_out,
        ];
        if let Some((w, b)) = &self.aux {
            v.push(w);
            v.push(b);
        }
        v.push(&self.phi);
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![
            &mut self.w1,
            &mut self.b1,
            &mut self.bn1_scale,
            &mut self.bn1_shift,
            &mut self.w2,
            &mut self.b2,
            &mut self.bn2_scale,
            &mut self.bn2_shift,
            &mut self.w_out,
            &mut self.b_out,
        ];
        if let Some((w, b)) = &mut self.aux {
            v.push(w);
            v.push(b);
        }
        v.push(&mut self.phi);
        v
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.params().iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    /// Inverse of [`NetworkState::flatten`].
    pub fn assign(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::invalid(format!("expected {} values, got {}", self.param_count(), values.len())));
        }
        let mut off = 0;
        for t in self.params_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&values[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Kinetic parameters of pixel `j`.
    pub fn eta(&self, j: usize) -> KineticParams {
        KineticParams::from_log([
            self.phi.get(PHI_FP, j),
            self.phi.get(PHI_VP, j),
            self.phi.get(PHI_VE, j),
            self.phi.get(PHI_PS, j),
        ])
    }

    pub fn etas(&self) -> Vec<KineticParams> {
        (0..self.k).map(|j| self.eta(j)).collect()
    }

    /// Mean of each kinetic parameter over pixels, in Fp, vp, ve, PS order.
    pub fn mean_eta(&self) -> [f64; 4] {
        let mut m = [0.0; 4];
        for j in 0..self.k {
            let e = self.eta(j).to_array();
            for (a, b) in m.iter_mut().zip(e) {
                *a += b;
            }
        }
        m.map(|v| v / self.k as f64)
    }
}

/// Tape handles for every trainable tensor, in [`NetworkState::params`] order.
pub(crate) struct ParamVars {
    pub all: Vec<Var>,
    pub w1: Var,
    pub b1: Var,
    pub bn1: (Var, Var),
    pub w2: Var,
    pub b2: Var,
    pub bn2: (Var, Var),
    pub w_out: Var,
    pub b_out: Var,
    pub aux: Option<(Var, Var)>,
    pub phi: Var,
}

pub(crate) fn record_params(tape: &mut Tape, s: &NetworkState) -> ParamVars {
    let all: Vec<Var> = s.params().into_iter().map(|t| tape.leaf(t.clone())).collect();
    let aux = s.aux.as_ref().map(|_| (all[10], all[11]));
    ParamVars {
        w1: all[0],
        b1: all[1],
        bn1: (all[2], all[3]),
        w2: all[4],
        b2: all[5],
        bn2: (all[6], all[7]),
        w_out: all[8],
        b_out: all[9],
        aux,
        phi: *all.last().expect("phi is always present"),
        all,
    }
}

/// Network input for a list of normalized times.
///
/// Without coordinates the batch is one row per time. With coordinates
/// (Mesh variant) there is one row per (time, pixel), time-major, holding
/// `(t_hat, x, y)`. Only the time column carries a unit tangent.
pub(crate) fn build_input(tape: &mut Tape, times: &[f64], coords: Option<&[(f64, f64)]>) -> Result<Var> {
    match coords {
        None => tape.input(Tensor::column(times.to_vec()), Tensor::filled(times.len(), 1, 1.0)),
        Some(xy) => {
            let rows = times.len() * xy.len();
            let mut p = Vec::with_capacity(rows * 3);
            let mut t = Vec::with_capacity(rows * 3);
            for &th in times {
                for &(x, y) in xy {
                    p.extend([th, x, y]);
                    t.extend([1.0, 0.0, 0.0]);
                }
            }
            tape.input(Tensor::from_vec(rows, 3, p)?, Tensor::from_vec(rows, 3, t)?)
        }
    }
}

/// Runs the MLP. Batch statistics come from the first `stats_rows` rows.
/// Returns the main head and, for the Reduced variant, the auxiliary Cp head.
pub(crate) fn run_mlp(tape: &mut Tape, p: &ParamVars, input: Var, stats_rows: usize) -> Result<(Var, Option<Var>)> {
    let z1 = tape.affine_combine(input, p.w1, p.b1)?;
    let a1 = tape.tanh(z1);
    let h1 = tape.batch_normalize_with(a1, stats_rows, p.bn1.0, p.bn1.1, BATCH_NORM_EPS)?;
    let z2 = tape.affine_combine(h1, p.w2, p.b2)?;
    let a2 = tape.tanh(z2);
    let h2 = tape.batch_normalize_with(a2, stats_rows, p.bn2.0, p.bn2.1, BATCH_NORM_EPS)?;
    let head = tape.affine_combine(h2, p.w_out, p.b_out)?;
    let aux = match p.aux {
        Some((w, b)) => Some(tape.affine_combine(h2, w, b)?),
        None => None,
    };
    Ok((head, aux))
}

/// Per-pixel `1 x K` kinetic parameter rows `exp(phi)`.
pub(crate) struct EtaVars {
    pub fp: Var,
    pub vp: Var,
    pub ve: Var,
    pub ps: Var,
}

pub(crate) fn eta_vars(tape: &mut Tape, phi: Var) -> Result<EtaVars> {
    let mut row = |r: usize| -> Result<Var> {
        let s = tape.rows(phi, r, 1)?;
        Ok(tape.exp(s))
    };
    Ok(EtaVars { fp: row(PHI_FP)?, vp: row(PHI_VP)?, ve: row(PHI_VE)?, ps: row(PHI_PS)? })
}

/// Network quantities over a block of `n` consecutive times, as `n x K`
/// nodes (the AIF is `n x 1`, or `n x K` for the Mesh variant).
pub(crate) struct Fields {
    pub cp: Var,
    pub ce: Option<Var>,
    pub cmyo: Var,
    pub aif: Var,
}

/// Extracts the quantities for times `start..start + n` of the batch.
pub(crate) fn extract_fields(
    tape: &mut Tape,
    variant: Variant,
    k: usize,
    head: Var,
    aux: Option<Var>,
    eta: &EtaVars,
    start: usize,
    n: usize,
) -> Result<Fields> {
    let width = tape.primal(head).cols();
    // element (i, j) of the block lives at flat index ((start + i) * rows_per_time + j') * width + col
    let pick = |tape: &mut Tape, src: Var, w: usize, col: usize, cols: usize, per_pixel_rows: bool| -> Result<Var> {
        let idx: Arc<[usize]> = (0..n)
            .flat_map(|i| {
                (0..cols).map(move |j| {
                    if per_pixel_rows {
                        ((start + i) * k + j) * w + col
                    } else {
                        (start + i) * w + col + j
                    }
                })
            })
            .collect();
        tape.gather(src, n, cols, idx)
    };
    match variant {
        Variant::TwoCxm | Variant::Combined => {
            let cp = pick(tape, head, width, 0, k, false)?;
            let ce = pick(tape, head, width, k, k, false)?;
            let aif = pick(tape, head, width, 2 * k, 1, false)?;
            let cmyo = weighted_sum(tape, eta, cp, ce)?;
            Ok(Fields { cp, ce: Some(ce), cmyo, aif })
        }
        Variant::TwoCxmMesh => {
            let cp = pick(tape, head, width, 0, k, true)?;
            let ce = pick(tape, head, width, 1, k, true)?;
            let aif = pick(tape, head, width, 2, k, true)?;
            let cmyo = weighted_sum(tape, eta, cp, ce)?;
            Ok(Fields { cp, ce: Some(ce), cmyo, aif })
        }
        Variant::Reduced => {
            let aux = aux.ok_or_else(|| Error::invalid("reduced network is missing its Cp head"))?;
            let cmyo = pick(tape, head, width, 0, k, false)?;
            let aif = pick(tape, head, width, k, 1, false)?;
            let cp = pick(tape, aux, k, 0, k, false)?;
            Ok(Fields { cp, ce: None, cmyo, aif })
        }
    }
}

fn weighted_sum(tape: &mut Tape, eta: &EtaVars, cp: Var, ce: Var) -> Result<Var> {
    let a = tape.mul(eta.vp, cp)?;
    let b = tape.mul(eta.ve, ce)?;
    tape.add(a, b)
}

/// Evaluated network outputs, each `n x K` (AIF `n x 1` unless Mesh), in
/// normalized units, with derivatives with respect to normalized time.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub cp: Tensor,
    pub ce: Option<Tensor>,
    pub cmyo: Tensor,
    pub aif: Tensor,
    pub dcp: Tensor,
    pub dce: Option<Tensor>,
    pub dcmyo: Tensor,
    pub daif: Tensor,
}

/// Evaluates the network at normalized times `t_hat` (batch statistics over
/// all of them). `coords` are the per-pixel mesh coordinates for the Mesh variant.
pub fn forward(state: &NetworkState, t_hat: &[f64], coords: Option<&[(f64, f64)]>) -> Result<ForwardOutput> {
    forward_with_stats(state, t_hat, t_hat.len(), coords)
}

/// Like [`forward`], but batch statistics come from the first `stats_times` times only.
pub fn forward_with_stats(
    state: &NetworkState,
    t_hat: &[f64],
    stats_times: usize,
    coords: Option<&[(f64, f64)]>,
) -> Result<ForwardOutput> {
    let mesh = state.variant == Variant::TwoCxmMesh;
    if mesh != coords.is_some() {
        return Err(Error::invalid("mesh coordinates are required for, and only for, the mesh variant"));
    }
    if let Some(c) = coords {
        if c.len() != state.k {
            return Err(Error::invalid(format!("{} mesh coordinates for {} pixels", c.len(), state.k)));
        }
    }
    if stats_times > t_hat.len() {
        return Err(Error::invalid("statistics batch exceeds the evaluated batch"));
    }
    let mut tape = Tape::new();
    let p = record_params(&mut tape, state);
    let input = build_input(&mut tape, t_hat, coords)?;
    let rows_per_time = if mesh { state.k } else { 1 };
    let (head, aux) = run_mlp(&mut tape, &p, input, stats_times * rows_per_time)?;
    let eta = eta_vars(&mut tape, p.phi)?;
    let f = extract_fields(&mut tape, state.variant, state.k, head, aux, &eta, 0, t_hat.len())?;
    let both = |v: Var| (tape.primal(v).clone(), tape.tangent_or_zeros(v));
    let (cp, dcp) = both(f.cp);
    let (cmyo, dcmyo) = both(f.cmyo);
    let (aif, daif) = both(f.aif);
    let (ce, dce) = match f.ce {
        Some(v) => {
            let (a, b) = both(v);
            (Some(a), Some(b))
        }
        None => (None, None),
    };
    Ok(ForwardOutput { cp, ce, cmyo, aif, dcp, dce, dcmyo, daif })
}
