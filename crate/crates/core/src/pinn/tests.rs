use super::*;
use crate::autodiff::{gradcheck, Tensor};
use crate::kinetics::{solve_2cxm, KineticParams, TimeGrid};
use crate::phantom::GammaVariateAif;

fn toy_data(k: usize, n: usize, dt: f64) -> PixelData {
    let grid = TimeGrid::new(0.0, dt, n).unwrap();
    let aif = GammaVariateAif::default().sample(&grid);
    let mut curves = Vec::new();
    for j in 0..k {
        let p = KineticParams::new(0.8 + 0.4 * j as f64, 0.05 + 0.02 * j as f64, 0.2, 1.0).unwrap();
        curves.extend(solve_2cxm(&p, &aif, 1).unwrap().tissue.values);
    }
    PixelData { grid, aif: aif.values, curves, k, positions: Some((0..k).map(|j| (j % 2, j / 2)).collect()) }
}

fn small_config(variant: Variant) -> PinnConfig {
    PinnConfig { variant, n_collocation: 20, hidden: 8, iterations: 1, seed: 5, ..PinnConfig::default() }
}

#[test]
fn init_is_deterministic_and_within_glorot_bounds() {
    let cfg = PinnConfig::default();
    let a = init_network(&cfg, 3).unwrap();
    assert_eq!(a, init_network(&cfg, 3).unwrap());
    assert_ne!(a, init_network(&PinnConfig { seed: 1, ..cfg.clone() }, 3).unwrap());
    for w in [&a.w1, &a.w2, &a.w_out] {
        let bound = glorot_bound(w.rows(), w.cols());
        assert!(w.data().iter().all(|v| v.abs() <= bound));
    }
    assert!(a.b1.data().iter().chain(a.b2.data()).chain(a.b_out.data()).all(|&v| v == 0.0));
    assert!(a.bn1_scale.data().iter().all(|&v| v == 1.0) && a.bn2_shift.data().iter().all(|&v| v == 0.0));
    for j in 0..3 {
        let e = a.eta(j);
        for (got, want) in e.to_array().iter().zip(cfg.initial.to_array()) {
            assert!((got - want).abs() <= 1e-15 * want);
        }
    }
}

#[test]
fn head_widths_per_variant() {
    let k = 4;
    for (variant, width) in [(Variant::TwoCxm, 2 * k + 1), (Variant::Combined, 2 * k + 1), (Variant::Reduced, k + 1), (Variant::TwoCxmMesh, 3)] {
        let s = init_network(&PinnConfig::with_variant(variant), k).unwrap();
        assert_eq!(s.w_out.cols(), width, "{variant}");
        assert_eq!(s.aux.is_some(), variant == Variant::Reduced);
        assert_eq!(s.w1.rows(), variant.input_dim());
    }
}

#[test]
fn assign_inverts_flatten() {
    let mut s = init_network(&small_config(Variant::Reduced), 2).unwrap();
    let mut v = s.flatten();
    v.iter_mut().for_each(|x| *x += 0.5);
    s.assign(&v).unwrap();
    assert_eq!(s.flatten(), v);
    assert!(s.assign(&v[1..]).is_err());
}

#[test]
fn duplicate_times_give_identical_rows() {
    let s = init_network(&PinnConfig::with_variant(Variant::Combined), 3).unwrap();
    let out = forward(&s, &[-1.0, 0.3, -0.2, 0.3, 1.4], None).unwrap();
    assert_eq!(out.cp.rows(), 5);
    for c in 0..3 {
        assert_eq!(out.cp.get(1, c), out.cp.get(3, c));
        assert_eq!(out.dcmyo.get(1, c), out.dcmyo.get(3, c));
    }
}

#[test]
fn tangents_match_central_differences_over_time() {
    let h = 1e-4;
    let base = [-1.6, -0.9, -0.2, 0.4, 1.1, 1.7];
    for variant in Variant::ALL {
        let s = init_network(&PinnConfig::with_variant(variant), 2).unwrap();
        let coords = [(-1.0, 0.0), (1.0, 0.0)];
        let coords = (variant == Variant::TwoCxmMesh).then_some(&coords[..]);
        let mut times = base.to_vec();
        times.extend(base.iter().map(|t| t + h));
        times.extend(base.iter().map(|t| t - h));
        let out = forward_with_stats(&s, &times, base.len(), coords).unwrap();
        let n = base.len();
        let mut pairs = vec![(&out.cp, &out.dcp), (&out.cmyo, &out.dcmyo), (&out.aif, &out.daif)];
        if let (Some(ce), Some(dce)) = (&out.ce, &out.dce) {
            pairs.push((ce, dce));
        }
        for (val, tan) in pairs {
            for i in 0..n {
                for c in 0..val.cols() {
                    let fd = (val.get(n + i, c) - val.get(2 * n + i, c)) / (2.0 * h);
                    let an = tan.get(i, c);
                    let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-12);
                    assert!(rel < 1e-4 || (fd - an).abs() < 1e-9, "{variant}: {an} vs {fd}");
                }
            }
        }
    }
}

#[test]
fn zero_outputs_and_zero_data_give_zero_loss() {
    let k = 2;
    for variant in [Variant::TwoCxm, Variant::Reduced, Variant::Combined] {
        let mut s = init_network(&small_config(variant), k).unwrap();
        s.w_out = Tensor::zeros(s.w_out.rows(), s.w_out.cols());
        if let Some((w, _)) = &mut s.aux {
            *w = Tensor::zeros(w.rows(), w.cols());
        }
        let problem = PinnProblem {
            variant,
            k,
            norm: Normalization { mu_t: 1.0, sigma_t: 0.5, c_scale: 1.0 },
            t_obs: vec![-1.5, -0.5, 0.5, 1.5],
            cmyo_obs: Tensor::zeros(4, k),
            aif_obs: Tensor::zeros(4, 1),
            t_zero: -2.0,
            coords: None,
        };
        let terms = compute_loss(&s, &problem, &[-1.0, 0.0, 1.0], &LossWeights::default()).unwrap();
        assert_eq!(terms.total, 0.0, "{variant}");
    }
}

#[test]
fn data_term_vanishes_when_observations_equal_network_outputs() {
    let data = toy_data(2, 10, 0.2);
    let cfg = small_config(Variant::Combined);
    let s = init_network(&cfg, 2).unwrap();
    let mut problem = build_problem(&data, Variant::Combined).unwrap();
    let colloc = sample_collocation(&problem, &data.grid, 20, 1);
    let mut times = problem.t_obs.clone();
    times.extend(&colloc);
    times.push(problem.t_zero);
    let out = forward(&s, &times, None).unwrap();
    let n = problem.t_obs.len();
    for i in 0..n {
        for j in 0..2 {
            problem.cmyo_obs.set(i, j, out.cmyo.get(i, j));
        }
        problem.aif_obs.set(i, 0, out.aif.get(i, 0));
    }
    let terms = compute_loss(&s, &problem, &colloc, &cfg.weights).unwrap();
    assert!(terms.data < 1e-28, "{}", terms.data);
}

#[test]
fn total_is_weighted_sum_of_terms() {
    let data = toy_data(2, 10, 0.2);
    for variant in Variant::ALL {
        let cfg = PinnConfig { iterations: 30, log_interval: 10, weights: LossWeights { data: 5.0, residual: 0.7, boundary: 1.3, regularization: 2.0 }, ..small_config(variant) };
        let fit = train(&data, &cfg).unwrap();
        let problem = build_problem(&data, variant).unwrap();
        let colloc = sample_collocation(&problem, &data.grid, 20, 9);
        let t = compute_loss(&fit.state, &problem, &colloc, &cfg.weights).unwrap();
        assert!((t.weighted_sum(&cfg.weights) - t.total).abs() <= 1e-12 * t.total.max(1.0));
        assert!((t.residual - (t.rp + t.re + t.rmyo)).abs() <= 1e-12 * t.residual.max(1.0));
    }
}

#[test]
fn residual_masking_by_variant() {
    let data = toy_data(2, 10, 0.2);
    let expect = [(Variant::TwoCxm, true, false), (Variant::TwoCxmMesh, true, false), (Variant::Reduced, false, true), (Variant::Combined, true, true)];
    for (variant, compartments, reduced) in expect {
        let s = init_network(&small_config(variant), 2).unwrap();
        let problem = build_problem(&data, variant).unwrap();
        let colloc = sample_collocation(&problem, &data.grid, 20, 2);
        let t = compute_loss(&s, &problem, &colloc, &LossWeights::default()).unwrap();
        assert_eq!(t.rp == 0.0 && t.re == 0.0, !compartments, "{variant}");
        assert_eq!(t.rmyo == 0.0, !reduced, "{variant}");
    }
}

#[test]
fn residual_terms_do_not_read_observations() {
    let data = toy_data(2, 10, 0.2);
    let s = init_network(&small_config(Variant::Combined), 2).unwrap();
    let problem = build_problem(&data, Variant::Combined).unwrap();
    let colloc = sample_collocation(&problem, &data.grid, 20, 3);
    let mut altered = problem.clone();
    altered.cmyo_obs = altered.cmyo_obs.map(|v| 3.0 * v - 0.4);
    altered.aif_obs = altered.aif_obs.map(|v| -v);
    let a = compute_loss(&s, &problem, &colloc, &LossWeights::default()).unwrap();
    let b = compute_loss(&s, &altered, &colloc, &LossWeights::default()).unwrap();
    assert_eq!((a.residual, a.boundary, a.regularization), (b.residual, b.boundary, b.regularization));
    assert_ne!(a.data, b.data);
}

/// Full loss on 2 pixels, 10 time points, 20 collocation points.
pub(crate) fn full_loss_gradcheck(variant: Variant) -> f64 {
    let data = toy_data(2, 10, 0.2);
    let cfg = PinnConfig { hidden: 32, ..small_config(variant) };
    let mut s = init_network(&cfg, 2).unwrap();
    // move away from the symmetric start so every term is active
    let phi0: Vec<f64> = s.phi.data().iter().enumerate().map(|(i, v)| v + 0.1 * ((i % 3) as f64 - 1.0)).collect();
    s.phi.data_mut().copy_from_slice(&phi0);
    let problem = build_problem(&data, variant).unwrap();
    let colloc = sample_collocation(&problem, &data.grid, 20, 4);
    let x0 = s.flatten();
    let check = gradcheck(&x0, 1e-5, |x| {
        let mut st = s.clone();
        st.assign(x)?;
        let (t, g) = loss_and_gradient(&st, &problem, &colloc, &cfg.weights)?;
        Ok((t.total, g.iter().flat_map(|g| g.data().to_vec()).collect()))
    })
    .unwrap();
    check.max_rel_error
}

#[test]
fn full_loss_gradient_matches_finite_differences() {
    for variant in Variant::ALL {
        let err = full_loss_gradcheck(variant);
        assert!(err < 1e-4, "{variant}: {err}");
    }
}

#[test]
fn history_and_determinism() {
    let data = toy_data(2, 10, 0.2);
    let cfg = PinnConfig { iterations: 250, log_interval: 100, ..small_config(Variant::Combined) };
    let a = train(&data, &cfg).unwrap();
    let b = train(&data, &cfg).unwrap();
    assert_eq!(a.history.len(), 2);
    assert_eq!(a.history.iter().map(|h| h.iteration).collect::<Vec<_>>(), vec![100, 200]);
    assert_eq!(a.params, b.params);
    assert_eq!(a.history, b.history);
    assert!(a.params.iter().all(|p| p.to_array().iter().all(|v| *v > 0.0)));
    let mut csv = Vec::new();
    a.write_history_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("iter,L_C,L_r,L_b,L_reg,total,mean_Fp,mean_vp,mean_ve,mean_PS\n"));
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn warmup_freezes_kinetic_parameters() {
    let data = toy_data(2, 10, 0.2);
    let cfg = PinnConfig { iterations: 20, eta_warmup: 20, ..small_config(Variant::TwoCxm) };
    let fit = train(&data, &cfg).unwrap();
    assert_eq!(fit.state.phi, init_network(&cfg, 2).unwrap().phi);
}

#[test]
fn mesh_requires_positions() {
    let mut data = toy_data(2, 10, 0.2);
    data.positions = None;
    assert!(train(&data, &small_config(Variant::TwoCxmMesh)).is_err());
    assert!(train(&data, &small_config(Variant::TwoCxm)).is_ok());
}
