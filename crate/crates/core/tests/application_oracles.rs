mod common;

use ::tpadmm::applications::{
    build_inpaint, build_tv_denoise, gradient_operator, multiblock_rain_solve, psnr, psnr_slices,
    soft_threshold, synthetic_smooth, synthetic_step, synthetic_streaks, ImageGrid, MaskOperator,
    NoiseSpec,
};
use ::tpadmm::baseline::{admm_solve, ladmm_solve, operator_norm_sq_of, proximal_admm_solve, BaselineConfig};
use ::tpadmm::linops::vec;
use ::tpadmm::modules::{make_identity_module, make_smoothing_module, Shape, SmoothingKind};
use ::tpadmm::problem::{objective, IterateW};
use ::tpadmm::tpadmm::{tpadmm_solve, TpadmmConfig};
use common::{random_vec, start_at};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn long_admm() -> BaselineConfig {
    BaselineConfig {
        max_outer: 100_000,
        tol_violation: 1e-12,
        tol_change: 1e-12,
        ..BaselineConfig::default()
    }
}

fn tp_config() -> TpadmmConfig {
    TpadmmConfig {
        max_outer: 20_000,
        tol_violation: 1e-10,
        tol_change: 1e-10,
        tol_residual: 1e-9,
        ..TpadmmConfig::default()
    }
}

#[test]
fn gradient_matches_forward_differences() {
    let sh = Shape::new(5, 4, 2);
    let g = gradient_operator(sh).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_vec(&mut rng, sh.len());
    let gx = g.apply(&x).unwrap();
    let n = sh.len();
    for r in 0..4 {
        for c in 0..5 {
            for ch in 0..2 {
                let i = sh.index(r, c, ch);
                let h = if c + 1 < 5 { x[sh.index(r, c + 1, ch)] - x[i] } else { 0.0 };
                let v = if r + 1 < 4 { x[sh.index(r + 1, c, ch)] - x[i] } else { 0.0 };
                assert_eq!(gx[i], h);
                assert_eq!(gx[n + i], v);
            }
        }
    }
    let constant = vec![0.42; n];
    assert!(g.apply(&constant).unwrap().iter().all(|v| *v == 0.0));
}

#[test]
fn mask_is_idempotent_and_self_adjoint() {
    let sh = Shape::new(6, 5, 1);
    let m = MaskOperator::random(sh, 0.4, 3).unwrap();
    assert!((m.missing_ratio() - 12.0 / 30.0).abs() < 1e-15);
    let q = m.as_map();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let x = random_vec(&mut rng, 30);
        let y = random_vec(&mut rng, 30);
        let qx = q.apply(&x).unwrap();
        assert_eq!(q.apply(&qx).unwrap(), qx);
        assert_eq!(q.apply_adjoint(&x).unwrap(), qx);
        assert!((vec::dot(&qx, &y) - vec::dot(&x, &q.apply(&y).unwrap())).abs() < 1e-14);
    }
}

#[test]
fn soft_threshold_against_grid_search() {
    assert_eq!(soft_threshold(&[0.0], 0.7), vec![0.0]);
    assert_eq!(soft_threshold(&[1.5, -2.0], 0.0), vec![1.5, -2.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut cases = vec![(2.0, 1.0), (-0.5, 1.0)];
    cases.extend((0..8).map(|_| (rng.gen_range(-3.0..3.0), rng.gen_range(0.0..2.0))));
    for (v, th) in cases {
        let mut best = (f64::INFINITY, 0.0);
        for i in -500_000..=500_000 {
            let z = i as f64 * 1e-5;
            let f = 0.5 * (z - v) * (z - v) + th * z.abs();
            if f < best.0 {
                best = (f, z);
            }
        }
        assert!((soft_threshold(&[v], th)[0] - best.1).abs() <= 1e-5, "{v} {th}");
    }
    assert_eq!(soft_threshold(&[2.0, -0.5], 1.0), vec![1.0, 0.0]);
}

#[test]
fn psnr_examples_and_formula() {
    let a = ImageGrid::filled(4, 4, 1, 0.5).unwrap();
    assert_eq!(psnr(&a, &a).unwrap(), 99.0);
    let b = ImageGrid::filled(4, 4, 1, 0.6).unwrap();
    assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
    assert!(psnr(&a, &ImageGrid::filled(2, 8, 1, 0.5).unwrap()).is_err());
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10 {
        let x: Vec<f64> = (0..48).map(|_| rng.gen_range(0.0..1.0)).collect();
        let y: Vec<f64> = (0..48).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mse = x.iter().zip(&y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / 48.0;
        assert!((psnr_slices(&x, &y) - 10.0 * (1.0 / mse).log10()).abs() < 1e-10);
    }
}

#[test]
fn tv_constant_image_is_a_fixed_point() {
    let b = ImageGrid::filled(6, 5, 1, 0.3).unwrap();
    let p = build_tv_denoise(&b, 0.5).unwrap();
    let run = tpadmm_solve(&p, &tp_config(), make_identity_module().as_ref(), &IterateW::zeros(&p))
        .unwrap();
    assert!(vec::dist(&run.trace.final_iterate.x, &b.pixels) <= 1e-6);
}

#[test]
fn tv_small_mu_returns_observation() {
    let (_, b) = common::noisy_shapes(8, 5);
    let p = build_tv_denoise(&b, 1e-7).unwrap();
    let run = tpadmm_solve(&p, &tp_config(), make_identity_module().as_ref(), &IterateW::zeros(&p))
        .unwrap();
    assert!(vec::norm_inf(&vec::sub(&run.trace.final_iterate.x, &b.pixels)) <= 1e-5);
    assert!(run.trace.final_objective().unwrap() <= 1e-4);
}

#[test]
fn tv_step_matches_long_admm() {
    let clean = synthetic_step(8, 8).unwrap();
    let b = NoiseSpec::uniform(0.2, 7).apply(&clean).unwrap();
    let p = build_tv_denoise(&b, 0.05).unwrap();
    let init = start_at(&p, &b.pixels);
    let reference = admm_solve(&p, &long_admm(), &init).unwrap();
    let r = reference.final_objective().unwrap();
    for module in [
        make_identity_module(),
        make_smoothing_module(SmoothingKind::Median { radius: 1 }, b.shape()).unwrap(),
    ] {
        let run = tpadmm_solve(&p, &tp_config(), module.as_ref(), &init).unwrap();
        let o = run.trace.final_objective().unwrap();
        assert!((o - r).abs() <= 1e-4 * r, "{o} vs {r}");
    }
}

#[test]
fn four_solvers_agree_on_tv_8x8() {
    let (_, b) = common::noisy_shapes(8, 17);
    let p = build_tv_denoise(&b, 0.05).unwrap();
    let init = start_at(&p, &b.pixels);
    let cfg = BaselineConfig {
        tol_violation: 1e-10,
        tol_change: 1e-10,
        ..long_admm()
    };
    let a2 = operator_norm_sq_of(&p.a).unwrap();
    let objs = [
        admm_solve(&p, &cfg, &init).unwrap().final_objective().unwrap(),
        ladmm_solve(&p, &BaselineConfig { tau: a2 * 1.01, ..cfg.clone() }, &init)
            .unwrap()
            .final_objective()
            .unwrap(),
        proximal_admm_solve(&p, &BaselineConfig { tau: 2.0, ..cfg.clone() }, &init)
            .unwrap()
            .final_objective()
            .unwrap(),
        tpadmm_solve(&p, &tp_config(), make_identity_module().as_ref(), &init)
            .unwrap()
            .trace
            .final_objective()
            .unwrap(),
    ];
    for o in &objs {
        assert!((o - objs[0]).abs() <= 1e-4 * objs[0], "{objs:?}");
    }
}

#[test]
fn full_mask_inpaint_equals_tv_instance() {
    let (_, b) = common::noisy_shapes(6, 3);
    let tv = build_tv_denoise(&b, 0.1).unwrap();
    let ip = build_inpaint(&b, &MaskOperator::full(b.len()), 0.1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let x = random_vec(&mut rng, tv.n());
        let y = random_vec(&mut rng, tv.m());
        assert_eq!(objective(&tv, &x, &y).unwrap(), objective(&ip, &x, &y).unwrap());
        assert_eq!(tv.a.apply(&x).unwrap(), ip.a.apply(&x).unwrap());
        assert_eq!(tv.smooth_gradient(&x).unwrap(), ip.smooth_gradient(&x).unwrap());
    }
}

#[test]
fn empty_mask_is_rejected() {
    let b = ImageGrid::filled(3, 3, 1, 0.5).unwrap();
    assert!(build_inpaint(&b, &MaskOperator::new(vec![false; 9]), 0.1).is_err());
}

#[test]
fn inpaint_one_missing_pixel() {
    let b = ImageGrid::new(
        4,
        4,
        1,
        vec![
            0.1, 0.2, 0.3, 0.4, //
            0.2, 0.3, 0.4, 0.5, //
            0.3, 0.4, 0.9, 0.6, //
            0.4, 0.5, 0.6, 0.7,
        ],
    )
    .unwrap();
    let hole = b.shape().index(2, 2, 0);
    let mut keep = vec![true; 16];
    keep[hole] = false;
    let mask = MaskOperator::new(keep);
    let p = build_inpaint(&b, &mask, 1e-3).unwrap();
    let init = start_at(&p, &p.q.apply(&b.pixels).unwrap());
    let reference = admm_solve(&p, &long_admm(), &init).unwrap();
    let run = tpadmm_solve(&p, &tp_config(), make_identity_module().as_ref(), &init).unwrap();
    let x = &run.trace.final_iterate.x;
    let oracle = &reference.final_iterate.x;
    let neighbours = [b.get(1, 2, 0), b.get(3, 2, 0), b.get(2, 1, 0), b.get(2, 3, 0)];
    let lo = neighbours.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = neighbours.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    // The hole's TV cost is flat on [lo, hi], so the minimizer there is not
    // unique; compare objectives against the oracle instead of pixels.
    assert!(x[hole] >= lo - 1e-6 && x[hole] <= hi + 1e-6, "{} not in [{lo}, {hi}]", x[hole]);
    let (o, r) = (run.trace.final_objective().unwrap(), reference.final_objective().unwrap());
    assert!((o - r).abs() <= 1e-6 * r.max(1.0), "{o} vs {r}");
    assert!((oracle[hole] - 0.5).abs() <= 0.1 + 1e-6);
    // Observed pixels stay close to the data; μ = 1e-3 bounds the pull.
    for i in (0..16).filter(|i| *i != hole) {
        assert!((x[i] - b.pixels[i]).abs() <= 1e-2);
    }
}

#[test]
fn inpaint_fits_observed_entries_within_noise() {
    let clean = common::noisy_shapes(12, 1).0;
    let noisy = NoiseSpec::uniform(0.05, 2).apply(&clean).unwrap();
    let mask = MaskOperator::random(clean.shape(), 0.3, 4).unwrap();
    let p = build_inpaint(&noisy, &mask, 0.02).unwrap();
    let init = start_at(&p, &p.q.apply(&noisy.pixels).unwrap());
    let run = tpadmm_solve(&p, &tp_config(), make_identity_module().as_ref(), &init).unwrap();
    assert!(run.trace.converged());
    let x = &run.trace.final_iterate.x;
    let reference = admm_solve(&p, &long_admm(), &init).unwrap();
    let (o, r) = (run.trace.final_objective().unwrap(), reference.final_objective().unwrap());
    assert!((o - r).abs() <= 1e-4 * r, "{o} vs {r}");
    let qx = p.q.apply(x).unwrap();
    let qb = p.q.apply(&noisy.pixels).unwrap();
    let observed = (mask.len() as f64) * (1.0 - mask.missing_ratio());
    let rms = vec::dist(&qx, &qb) / observed.sqrt();
    let q_ref = p.q.apply(&reference.final_iterate.x).unwrap();
    let rms_ref = vec::dist(&q_ref, &qb) / observed.sqrt();
    assert!(rms <= 0.05, "rms {rms}");
    assert!((rms - rms_ref).abs() <= 1e-3, "rms {rms} vs {rms_ref}");
}

#[test]
fn noise_is_reproducible_and_bounded() {
    let clean = synthetic_smooth(10, 10).unwrap();
    let a = NoiseSpec::uniform(0.2, 9).apply(&clean).unwrap();
    let b = NoiseSpec::uniform(0.2, 9).apply(&clean).unwrap();
    assert_eq!(a, b);
    assert!(a.pixels.iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(a.pixels.iter().zip(&clean.pixels).all(|(p, q)| (p - q).abs() <= 0.2 + 1e-15));
}

fn rain_config() -> TpadmmConfig {
    TpadmmConfig {
        max_outer: 5000,
        tol_violation: 1e-9,
        tol_change: 1e-9,
        tol_residual: 1e-8,
        ..TpadmmConfig::default()
    }
}

#[test]
fn rain_free_input_gives_empty_rain_layer() {
    let b = synthetic_smooth(12, 12).unwrap();
    let (mu1, mu2) = (0.01, 0.2);
    let id = make_identity_module();
    let sol = multiblock_rain_solve(&b, mu1, mu2, &rain_config(), id.as_ref(), id.as_ref()).unwrap();
    assert!(vec::norm_inf(&sol.rain.pixels) <= 1e-3);
    let tv = build_tv_denoise(&b, mu1).unwrap();
    let reference = admm_solve(&tv, &long_admm(), &start_at(&tv, &b.pixels)).unwrap();
    assert!(vec::norm_inf(&vec::sub(&sol.background.pixels, &reference.final_iterate.x)) <= 1e-2);
}

#[test]
fn streaks_land_in_rain_layer() {
    let (w, h, period) = (16, 16, 4);
    let smooth = synthetic_smooth(w, h).unwrap();
    let streaks = synthetic_streaks(w, h, period, 0.3).unwrap();
    let b = smooth
        .with_pixels(vec::add(&smooth.pixels, &streaks.pixels))
        .unwrap();
    let id = make_identity_module();
    let sol = multiblock_rain_solve(&b, 0.05, 0.02, &rain_config(), id.as_ref(), id.as_ref()).unwrap();
    let sh = b.shape();
    let (mut on, mut total) = (0.0, 0.0);
    for r in 0..h {
        for c in 0..w {
            let e = sol.rain.pixels[sh.index(r, c, 0)].powi(2);
            total += e;
            if c % period == period / 2 {
                on += e;
            }
        }
    }
    assert!(total > 0.0);
    assert!(on >= 0.8 * total, "{:.3} of rain energy on streak columns", on / total);

}

fn streak_solution() -> ::tpadmm::applications::RainSolution {
    let (w, h) = (16, 16);
    let smooth = synthetic_smooth(w, h).unwrap();
    let streaks = synthetic_streaks(w, h, 4, 0.3).unwrap();
    let b = smooth
        .with_pixels(vec::add(&smooth.pixels, &streaks.pixels))
        .unwrap();
    let id = make_identity_module();
    multiblock_rain_solve(&b, 0.05, 0.02, &rain_config(), id.as_ref(), id.as_ref()).unwrap()
}

#[test]
fn rain_violations_vanish_without_blow_up() {
    let sol = streak_solution();
    assert!(sol.trace.converged());
    let last = sol.violations.last().unwrap();
    assert!(last.0 <= 1e-6 && last.1 <= 1e-6, "{last:?}");
    let total: Vec<f64> = sol.violations.iter().map(|(a, b)| a.hypot(*b)).collect();
    let early = total[..=10].iter().cloned().fold(0.0, f64::max);
    assert!(total[11..].iter().all(|v| *v <= early));
}

/// Step-to-step growth of at most 10% after iteration 10. The Jacobi scheme
/// with proximal x-steps oscillates on this input (jumps of about 2x), as
/// does the two-block proximal scheme, so this does not hold.
#[test]
#[ignore = "known to fail: violations of the Jacobi scheme are not monotone"]
fn rain_violations_grow_at_most_ten_percent() {
    let sol = streak_solution();
    let total: Vec<f64> = sol.violations.iter().map(|(a, b)| a.hypot(*b)).collect();
    for k in 11..total.len() {
        assert!(total[k] <= 1.1 * total[k - 1], "k = {k}: {:e} -> {:e}", total[k - 1], total[k]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gradient_adjoint_consistency(w in 1usize..12, h in 1usize..12, ch in 1usize..4, seed in 0u64..1000) {
        let sh = Shape::new(w, h, ch);
        let g = gradient_operator(sh).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = random_vec(&mut rng, sh.len());
        let v = random_vec(&mut rng, 2 * sh.len());
        let lhs = vec::dot(&g.apply(&u).unwrap(), &v);
        let rhs = vec::dot(&u, &g.apply_adjoint(&v).unwrap());
        prop_assert!((lhs - rhs).abs() <= 1e-10 * vec::norm(&u) * vec::norm(&v) * 8f64.sqrt());
    }

    #[test]
    fn soft_threshold_is_the_l1_prox(v in -5.0f64..5.0, th in 0.0f64..3.0, probe in -6.0f64..6.0) {
        let z = soft_threshold(&[v], th)[0];
        let f = |z: f64| 0.5 * (z - v) * (z - v) + th * z.abs();
        prop_assert!(f(z) <= f(probe) + 1e-12);
    }
}
