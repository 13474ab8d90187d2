use ndarray::{Array1, Array2};
use probe_core::estep::{compute_w_moments, kde_binned, kde_exact, storey_pi0};
use probe_core::lasso::{cd_path, fold_assignment, lambda_grid, lambda_max, Standardized};
use probe_core::mstep::{solve_coordinate_px, update_sigma2_aao, update_sigma2_oaat, Sweep};
use probe_core::postvar::{complete_data_var, posterior_variance, PostVarInput};
use probe_core::{fit, prepare_dataset, Dataset, FitConfig, Variant, WMoments};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn normals(rng: &mut ChaCha8Rng, len: usize) -> Array1<f64> {
    Array1::from_iter((0..len).map(|_| -> f64 { StandardNormal.sample(rng) }))
}

fn random_data(seed: u64, n: usize, m: usize) -> Dataset<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shared = normals(&mut rng, n);
    let x = Array2::from_shape_fn((n, m), |(i, _)| {
        let z: f64 = StandardNormal.sample(&mut rng);
        2.0 + z + 0.4 * shared[i]
    });
    let mut beta = Array1::zeros(m);
    beta[0] = 1.5;
    beta[m / 2] = -1.0;
    let y = x.dot(&beta) + normals(&mut rng, n);
    prepare_dataset(y.view(), x.view()).unwrap()
}

fn rel_gap(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let scale = b.iter().fold(1.0f64, |s, v| s.max(v.abs()));
    (a - b).iter().fold(0.0f64, |s, v| s.max(v.abs())) / scale
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn centering_is_idempotent(seed in any::<u64>(), n in 3usize..30, m in 1usize..10) {
        let d = random_data(seed, n, m);
        let again = prepare_dataset(d.y(), d.x()).unwrap();
        prop_assert!(rel_gap(&again.y().to_owned(), &d.y().to_owned()) < 1e-12);
        for j in 0..m {
            prop_assert!(rel_gap(&again.col(j).to_owned(), &d.col(j).to_owned()) < 1e-12);
            prop_assert!(again.centering().x_means[j].abs() < 1e-12);
        }
    }

    #[test]
    fn sweep_moments_match_recomputation(seed in any::<u64>(), n in 5usize..40, m in 2usize..40) {
        let d = random_data(seed, n, m);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        let beta = normals(&mut rng, m);
        let p = Array1::from_iter((0..m).map(|_| rng.random::<f64>()));
        let mut order: Vec<usize> = (0..m).collect();
        order.shuffle(&mut rng);
        let mom = compute_w_moments(d.x(), beta.view(), p.view());
        let mut sweep = Sweep::new(&d, &order, beta.view(), p.view(), &mom);
        while !sweep.is_done() {
            let out = solve_coordinate_px(&sweep.coord_input()).unwrap();
            sweep.remap_and_advance(&out);
        }
        let online = sweep.minus_moments();
        let scratch = compute_w_moments(d.x(), sweep.into_beta().view(), p.view());
        prop_assert!(rel_gap(&online.w, &scratch.w) < 1e-7);
        prop_assert!(rel_gap(&online.v, &scratch.v) < 1e-7);
    }

    #[test]
    fn sigma2_updates_scale_with_y(seed in any::<u64>(), n in 5usize..30, c in 0.1f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = normals(&mut rng, n);
        let x = normals(&mut rng, n);
        let mom = WMoments { w: normals(&mut rng, n), v: normals(&mut rng, n).mapv(|v| v * v) };
        let scaled = WMoments { w: &mom.w * c, v: &mom.v * (c * c) };
        let yc = &y * c;
        let (b, p, alpha) = (rng.random_range(-2.0..2.0), rng.random::<f64>(), rng.random_range(0.1..2.0));
        let a0 = update_sigma2_aao(y.view(), &mom, alpha, n);
        let a1 = update_sigma2_aao(yc.view(), &scaled, alpha, n);
        prop_assert!((a1 - c * c * a0).abs() <= 1e-9 * a1.abs().max(1e-12));
        let o0 = update_sigma2_oaat(y.view(), &mom, x.view(), b, p);
        let o1 = update_sigma2_oaat(yc.view(), &scaled, x.view(), c * b, p);
        prop_assert!((o1 - c * c * o0).abs() <= 1e-9 * o1.abs().max(1e-12));
    }

    #[test]
    fn kde_reflects(t in prop::collection::vec(-6.0f64..6.0, 2..300), h in 0.05f64..2.0) {
        let t = Array1::from(t);
        let r = t.mapv(|v| -v);
        prop_assert!(rel_gap(&kde_exact(r.view(), h), &kde_exact(t.view(), h)) < 1e-12);
        prop_assert!(rel_gap(&kde_binned(r.view(), h, 1024), &kde_binned(t.view(), h, 1024)) < 1e-9);
    }

    #[test]
    fn storey_ignores_order(p in prop::collection::vec(0.0f64..1.0, 1..100), seed in any::<u64>()) {
        let mut q = p.clone();
        q.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(storey_pi0(Array1::from(p).view(), 0.1), storey_pi0(Array1::from(q).view(), 0.1));
    }

    #[test]
    fn posterior_variance_is_positive_and_equivariant(seed in any::<u64>(), n in 5usize..30, c in 0.1f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = normals(&mut rng, n);
        let yr = normals(&mut rng, n);
        let wp = normals(&mut rng, n);
        let vp = normals(&mut rng, n).mapv(|v| 0.2 * v * v);
        let vm = normals(&mut rng, n).mapv(|v| 0.2 * v * v);
        let (p, sigma2, beta) = (rng.random_range(0.01..1.0), rng.random_range(0.1..3.0), rng.random_range(-2.0..2.0));
        let input = |k: f64, yr: &Array1<f64>, wp: &Array1<f64>, vp: &Array1<f64>, vm: &Array1<f64>| -> (f64, f64) {
            let (yr, wp, vp, vm) = (yr * k, wp * k, vp * (k * k), vm * (k * k));
            let pv = PostVarInput {
                x_col: x.view(),
                y_resid: yr.view(),
                w_plus: wp.view(),
                w_plus2_sum: wp.dot(&wp) + vp.sum(),
                v_plus: vp.view(),
                v_minus: vm.view(),
                p_m: p,
                sigma2: sigma2 * k * k,
                beta_m: beta * k,
                x_sq_norm: x.dot(&x),
            };
            (posterior_variance(&pv), complete_data_var(&pv))
        };
        let (s1, cdv) = input(1.0, &yr, &wp, &vp, &vm);
        let (sc, _) = input(c, &yr, &wp, &vp, &vm);
        prop_assert!(s1 > 0.0);
        prop_assert!(cdv >= sigma2 / x.dot(&x) * (1.0 - 1e-12));
        prop_assert!((sc - c * c * s1).abs() <= 1e-9 * sc);
    }

    #[test]
    fn fold_assignment_is_a_function_of_its_inputs(n in 2usize..200, k in 2usize..20, seed in any::<u64>()) {
        let k = k.min(n);
        let a = fold_assignment(n, k, seed);
        prop_assert_eq!(&a, &fold_assignment(n, k, seed));
        prop_assert!(a.iter().all(|&f| f < k));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn warm_path_matches_cold_solves(seed in any::<u64>(), n in 10usize..40, m in 2usize..30) {
        let d = random_data(seed, n, m);
        let st = Standardized::from_dataset(&d);
        let w = Array1::ones(m);
        let lam = lambda_grid(lambda_max(&st, w.view()), 15, 1e-2);
        let warm = cd_path(&st, w.view(), lam.as_slice().unwrap(), 1e-10, 1_000_000);
        for l in [2, 7, 14] {
            let cold = cd_path(&st, w.view(), &[lam[l]], 1e-10, 1_000_000);
            for j in 0..m {
                prop_assert!((warm[[j, l]] - cold[[j, 0]]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn fits_are_valid_and_reproducible(seed in any::<u64>(), n in 20usize..50, m in 5usize..40, oaat in any::<bool>()) {
        let d = random_data(seed, n, m);
        let variant = if oaat { Variant::OneAtATime } else { Variant::AllAtOnce };
        let cfg = FitConfig { max_iter: 100, seed, ..FitConfig::for_variant(variant) };
        let a = fit(&d, &cfg).unwrap();
        let b = fit(&d, &cfg).unwrap();
        prop_assert_eq!(&a.beta_map, &b.beta_map);
        prop_assert_eq!(&a.p_map, &b.p_map);
        prop_assert_eq!(a.sigma2_map, b.sigma2_map);
        prop_assert!(a.restarts <= 1);
        prop_assert!(a.p_map.iter().all(|p| (0.0..=1.0).contains(p)));
        prop_assert!(a.s2.iter().all(|&s| s > 0.0));
        for rec in &a.trace {
            prop_assert!(rec.sigma2 > 0.0);
            prop_assert!(rec.sum_p >= 0.0 && rec.sum_p <= m as f64);
        }
    }
}
