//! Map-level error metrics: NMSE and windowed SSIM.

use std::io::Write;

use crate::error::{Error, Result};
use crate::maps::{KineticMaps, Param, VolumeDims};

/// `sum (est - gt)^2 / sum gt^2`.
pub fn nmse(est: &[f64], gt: &[f64]) -> Result<f64> {
    if est.len() != gt.len() {
        return Err(Error::invalid(format!("map sizes differ: {} vs {}", est.len(), gt.len())));
    }
    let den: f64 = gt.iter().map(|g| g * g).sum();
    if den == 0.0 {
        return Err(Error::invalid("NMSE is undefined for an all-zero ground truth"));
    }
    let num: f64 = est.iter().zip(gt).map(|(e, g)| (e - g) * (e - g)).sum();
    Ok(num / den)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimOptions {
    /// Side of the square uniform window (odd). Ignored in Gaussian mode.
    pub window: usize,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range; `None` means `max(gt) - min(gt)`.
    pub range: Option<f64>,
    /// Gaussian window (sigma 1.5, 11 x 11) without the sample-covariance correction.
    pub gaussian: bool,
}

impl Default for SsimOptions {
    fn default() -> Self {
        SsimOptions { window: 7, k1: 0.01, k2: 0.03, range: None, gaussian: false }
    }
}

fn window_weights(opts: &SsimOptions) -> (usize, Vec<f64>) {
    if opts.gaussian {
        let sigma: f64 = 1.5;
        let r = (3.5 * sigma + 0.5) as usize;
        let w = 2 * r + 1;
        let g: Vec<f64> = (0..w).map(|i| (-((i as f64 - r as f64).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
        let s: f64 = g.iter().sum();
        let g: Vec<f64> = g.iter().map(|v| v / s).collect();
        (w, (0..w * w).map(|i| g[i / w] * g[i % w]).collect())
    } else {
        let w = opts.window;
        (w, vec![1.0 / (w * w) as f64; w * w])
    }
}

/// Mean SSIM over all windows lying fully inside each z-slice, averaged over slices.
pub fn ssim(est: &[f64], gt: &[f64], dims: VolumeDims, opts: &SsimOptions) -> Result<f64> {
    if est.len() != dims.len() || gt.len() != dims.len() {
        return Err(Error::invalid("map sizes do not match the volume"));
    }
    if !opts.gaussian && (opts.window < 2 || opts.window % 2 == 0) {
        return Err(Error::invalid("SSIM window must be odd and >= 3"));
    }
    let (w, weights) = window_weights(opts);
    if dims.nx < w || dims.ny < w {
        return Err(Error::invalid(format!("each slice must be at least {w} x {w} for SSIM, got {} x {}", dims.nx, dims.ny)));
    }
    let range = match opts.range {
        Some(r) => r,
        None => {
            let lo = gt.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = gt.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            hi - lo
        }
    };
    if !(range > 0.0 && range.is_finite()) {
        return Err(Error::invalid("SSIM dynamic range is zero (constant ground truth)"));
    }
    let c1 = (opts.k1 * range).powi(2);
    let c2 = (opts.k2 * range).powi(2);
    let cov_norm = if opts.gaussian { 1.0 } else { let np = (w * w) as f64; np / (np - 1.0) };

    let mut total = 0.0;
    for z in 0..dims.nz {
        let base = z * dims.slice_len();
        let mut acc = 0.0;
        let mut count = 0usize;
        for y0 in 0..=dims.ny - w {
            for x0 in 0..=dims.nx - w {
                let (mut mx, mut my, mut mxx, mut myy, mut mxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in 0..w {
                    for dx in 0..w {
                        let i = base + (y0 + dy) * dims.nx + x0 + dx;
                        let wt = weights[dy * w + dx];
                        let (a, b) = (est[i], gt[i]);
                        mx += wt * a;
                        my += wt * b;
                        mxx += wt * a * a;
                        myy += wt * b * b;
                        mxy += wt * a * b;
                    }
                }
                let vx = cov_norm * (mxx - mx * mx);
                let vy = cov_norm * (myy - my * my);
                let vxy = cov_norm * (mxy - mx * my);
                acc += ((2.0 * mx * my + c1) * (2.0 * vxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        total += acc / count as f64;
    }
    Ok(total / dims.nz as f64)
}

/// NMSE and SSIM of one parameter map. SSIM is NaN when the ground truth
/// map is constant (zero dynamic range).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamScore {
    pub param: Param,
    pub nmse: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapComparison {
    pub scores: Vec<ParamScore>,
    /// Mean of the per-parameter NMSEs.
    pub overall_nmse: f64,
    /// Mean of the defined per-parameter SSIMs (NaN if none is defined).
    pub overall_ssim: f64,
}

impl MapComparison {
    pub fn score(&self, p: Param) -> &ParamScore {
        self.scores.iter().find(|s| s.param == p).expect("all four parameters are scored")
    }
}

pub fn compare_maps(est: &KineticMaps, gt: &KineticMaps, opts: &SsimOptions) -> Result<MapComparison> {
    if est.dims != gt.dims {
        return Err(Error::invalid("estimated and ground-truth maps have different dimensions"));
    }
    est.validate()?;
    gt.validate()?;
    let mut scores = Vec::with_capacity(4);
    for p in Param::ALL {
        let n = nmse(est.map(p), gt.map(p))?;
        let s = match ssim(est.map(p), gt.map(p), gt.dims, opts) {
            Ok(v) => v,
            Err(Error::InvalidInput(msg)) if msg.contains("dynamic range") => f64::NAN,
            Err(e) => return Err(e),
        };
        scores.push(ParamScore { param: p, nmse: n, ssim: s });
    }
    let overall_nmse = scores.iter().map(|s| s.nmse).sum::<f64>() / 4.0;
    let defined: Vec<f64> = scores.iter().map(|s| s.ssim).filter(|v| v.is_finite()).collect();
    let overall_ssim = if defined.is_empty() { f64::NAN } else { defined.iter().sum::<f64>() / defined.len() as f64 };
    Ok(MapComparison { scores, overall_nmse, overall_ssim })
}

pub const TABLE_HEADER: &str = "method,param,NMSE,SSIM";

/// Writes the header and one row per parameter plus an `overall` row per method.
pub fn write_table<W: Write>(mut w: W, rows: &[(String, MapComparison)]) -> Result<()> {
    writeln!(w, "{TABLE_HEADER}")?;
    for (method, cmp) in rows {
        for s in &cmp.scores {
            writeln!(w, "{method},{},{},{}", s.param, fmt_num(s.nmse), fmt_num(s.ssim))?;
        }
        writeln!(w, "{method},overall,{},{}", fmt_num(cmp.overall_nmse), fmt_num(cmp.overall_ssim))?;
    }
    Ok(())
}

fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v:.6}")
    }
}
