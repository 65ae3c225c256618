use proptest::prelude::*;

use myopinn::io::{decode_dataset, decode_maps, encode_dataset, encode_maps, CurveDataset, MapFile};
use myopinn::kinetics::{solve_2cxm, ConcentrationSeries, KineticParams, TimeGrid};
use myopinn::maps::{KineticMaps, Param, VolumeDims};
use myopinn::metrics::{nmse, ssim, SsimOptions};

fn params() -> impl Strategy<Value = KineticParams> {
    (0.1f64..3.0, 0.01f64..0.3, 0.05f64..0.6, 0.1f64..3.0).prop_map(|(fp, vp, ve, ps)| KineticParams { fp, vp, ve, ps })
}

fn aif_values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..5.0, n)
}

fn tissue(p: &KineticParams, aif: &[f64]) -> Vec<f64> {
    let grid = TimeGrid::new(0.0, 0.02, aif.len()).unwrap();
    let s = ConcentrationSeries::new(grid, aif.to_vec()).unwrap();
    solve_2cxm(p, &s, 1).unwrap().tissue.values
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn solver_is_linear_in_the_aif(p in params(), a in aif_values(40), b in aif_values(40), ka in -2.0f64..2.0, kb in -2.0f64..2.0) {
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| ka * x + kb * y).collect();
        let (ta, tb, tm) = (tissue(&p, &a), tissue(&p, &b), tissue(&p, &mix));
        let scale = max_abs(&ta).max(max_abs(&tb)).max(1e-12) * (ka.abs() + kb.abs()).max(1.0);
        for i in 0..tm.len() {
            prop_assert!((tm[i] - (ka * ta[i] + kb * tb[i])).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn non_negative_aif_gives_non_negative_tissue(p in params(), a in aif_values(60)) {
        let t = tissue(&p, &a);
        let tol = 1e-12 * max_abs(&t).max(1.0);
        prop_assert!(t.iter().all(|v| *v >= -tol));
    }

    #[test]
    fn log_parameters_round_trip(p in params()) {
        let back = KineticParams::from_log(p.to_log());
        for (x, y) in back.to_array().iter().zip(p.to_array()) {
            prop_assert!((x - y).abs() <= 1e-14 * y);
        }
    }

    #[test]
    fn nmse_ignores_joint_permutation(gt in prop::collection::vec(0.1f64..3.0, 2..50), noise in prop::collection::vec(-0.5f64..0.5, 50), seed in any::<u64>()) {
        let n = gt.len();
        let est: Vec<f64> = gt.iter().zip(&noise).map(|(g, e)| g + e).collect();
        let mut idx: Vec<usize> = (0..n).collect();
        // Fisher-Yates driven by a splitmix-style sequence.
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            idx.swap(i, (s >> 33) as usize % (i + 1));
        }
        let pe: Vec<f64> = idx.iter().map(|&i| est[i]).collect();
        let pg: Vec<f64> = idx.iter().map(|&i| gt[i]).collect();
        let a = nmse(&est, &gt).unwrap();
        let b = nmse(&pe, &pg).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1e-12));
    }

    #[test]
    fn nmse_of_a_scaled_map(gt in prop::collection::vec(-3.0f64..3.0, 1..40), lambda in -3.0f64..3.0) {
        prop_assume!(gt.iter().any(|g| g.abs() > 1e-3));
        let est: Vec<f64> = gt.iter().map(|g| lambda * g).collect();
        let want = (lambda - 1.0).powi(2);
        prop_assert!((nmse(&est, &gt).unwrap() - want).abs() <= 1e-12 * want.max(1.0));
    }

    #[test]
    fn ssim_is_symmetric_with_a_fixed_range(a in prop::collection::vec(0.0f64..2.0, 100), b in prop::collection::vec(0.0f64..2.0, 100)) {
        let dims = VolumeDims::new(10, 10, 1);
        let opts = SsimOptions { range: Some(2.0), ..SsimOptions::default() };
        let ab = ssim(&a, &b, dims, &opts).unwrap();
        let ba = ssim(&b, &a, dims, &opts).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((-1.0..=1.0 + 1e-12).contains(&ab));
    }

    #[test]
    fn dataset_files_round_trip(nx in 1usize..5, ny in 1usize..5, nz in 1usize..3, n in 2usize..12, truth in any::<bool>(), seed in any::<u64>()) {
        let dims = VolumeDims::new(nx, ny, nz);
        let val = |i: usize| ((seed.wrapping_add(i as u64).wrapping_mul(0x9e3779b97f4a7c15) >> 40) as f64) * 1e-6 + 0.01;
        let aif: Vec<f64> = (0..n).map(val).collect();
        let curves: Vec<f64> = (0..dims.len() * n).map(|i| val(i + 1000)).collect();
        let mut maps = KineticMaps::zeros(dims);
        for p in Param::ALL {
            for (i, v) in maps.map_mut(p).iter_mut().enumerate() {
                *v = val(i + 7 * p.index() + 99);
            }
        }
        let grid = TimeGrid::new(0.5, 0.02, n).unwrap();
        let ds = CurveDataset::new(dims, grid, &aif, &curves, truth.then_some(&maps), format!("seed = {}\n", seed >> 1)).unwrap();
        let bytes = encode_dataset(&ds).unwrap();
        prop_assert_eq!(decode_dataset(&bytes).unwrap(), ds);
        let mf = MapFile::new(&maps, "pinn-2cxm", "iterations = 3\n", seed);
        prop_assert_eq!(decode_maps(&encode_maps(&mf).unwrap()).unwrap(), mf);
    }

    #[test]
    fn corrupted_files_never_panic(cut in 0usize..400, pos in 0usize..400, byte in any::<u8>()) {
        let dims = VolumeDims::new(2, 2, 1);
        let grid = TimeGrid::new(0.0, 0.1, 5).unwrap();
        let ds = CurveDataset::new(dims, grid, &[0.0, 1.0, 2.0, 1.0, 0.5], &[0.25; 20], Some(&KineticMaps::zeros(dims)), "x = 1\n".into()).unwrap();
        let mut bytes = encode_dataset(&ds).unwrap();
        let p = pos % bytes.len();
        bytes[p] = byte;
        let _ = decode_dataset(&bytes);
        let _ = decode_dataset(&bytes[..cut.min(bytes.len())]);
        let _ = decode_maps(&bytes);
    }
}

#[test]
fn ssim_depends_on_pixel_arrangement() {
    let dims = VolumeDims::new(8, 8, 1);
    let gt: Vec<f64> = (0..64).map(|i| (i % 8) as f64 + (i / 8) as f64).collect();
    let est: Vec<f64> = (0..64).map(|i| gt[i] + ((i * 29 + 3) % 13) as f64 / 4.0).collect();
    let mut perm: Vec<usize> = (0..64).collect();
    perm.sort_by_key(|&i| (i * 37 + 5) % 64);
    let shuffle = |v: &[f64]| -> Vec<f64> { perm.iter().map(|&i| v[i]).collect() };
    let opts = SsimOptions::default();
    let a = ssim(&est, &gt, dims, &opts).unwrap();
    let b = ssim(&shuffle(&est), &shuffle(&gt), dims, &opts).unwrap();
    assert!((a - b).abs() > 1e-3, "{a} vs {b}");
    assert!((nmse(&est, &gt).unwrap() - nmse(&shuffle(&est), &shuffle(&gt)).unwrap()).abs() < 1e-14);
}
