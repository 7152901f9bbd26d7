use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use specres::gauge::*;
use specres::jet::{norm2, Jet};
use specres::lattice::{assemble_coefficients, Grid, Boundary};
use specres::metric::{catalog, dyadic_samples, verify_long_range, FnSymbol, ScalarSymbol};

fn random_point(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Vec<f64> {
    loop {
        let u: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-2 {
            let r = rng.random_range(lo..hi);
            return u.iter().map(|v| v * r / n).collect();
        }
    }
}

fn radial_power_diffeo(c: f64, rho: f64) -> (specres::metric::MetricField, Diffeo) {
    let g = catalog("radial_power", &[c, rho, 1.0], 3).unwrap();
    let delta = volume_defect(&g);
    let choice = choose_r(&delta, rho).unwrap();
    let chi = build_diffeo(Transport::new(delta, choice.r).unwrap()).unwrap();
    (g, chi)
}

#[test]
fn transport_ode_residual_on_random_points() {
    let g = catalog("radial_power", &[0.2, 1.0, 1.0], 3).unwrap();
    let tr = Transport::new(volume_defect(&g), 2.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let worst = (0..100)
        .map(|_| tr.ode_residual(&random_point(&mut rng, 2.0, 16.0)).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 1e-8, "{worst}");
}

#[test]
fn chosen_radius_satisfies_conditions_on_fresh_rays() {
    let delta = ScalarSymbol::new(FnSymbol {
        dim: 3,
        value: |x: &[f64]| 0.2 / norm2(x).sqrt().max(1e-300),
        jet: |x: &[Jet]| norm2(x).sqrt().recip() * 0.2,
    });
    let choice = choose_r(&delta, 1.0).unwrap();
    let tr = Transport::new(delta, choice.r).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let x = random_point(&mut rng, choice.r, 64.0 * choice.r);
        let (phi, flux) = tr.value_and_flux(&x);
        assert!((phi - 1.0).abs() <= 0.5 && (0.5..=1.5).contains(&flux), "{phi} {flux}");
    }
}

#[test]
fn jacobian_determinant_identities() {
    let (g, chi) = radial_power_diffeo(0.2, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_lu: f64 = 0.0;
    for _ in 0..1000 {
        let x = random_point(&mut rng, 0.0, 20.0 * chi.r);
        worst_lu = worst_lu.max((chi.det_lu(&x) - chi.det_rank_one(&x)).abs());
    }
    assert!(worst_lu <= 1e-10, "{worst_lu}");
    for _ in 0..100 {
        let x = random_point(&mut rng, chi.compact_radius, 50.0 * chi.r);
        let vol = det_of(&g.matrix(&x), 3).sqrt();
        assert!((chi.det_lu(&x) - vol).abs() <= 1e-6, "{} vs {vol}", chi.det_lu(&x));
    }
}

#[test]
fn pullback_is_unimodular_outside_compact_set() {
    let (g, chi) = radial_power_diffeo(0.2, 1.0);
    let gt = pullback_metric(&g, &chi).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let c = chi.compact_radius * chi.bound;
    for _ in 0..100 {
        let y = random_point(&mut rng, 2.0 * c, 40.0 * c);
        let det = det_of(&gt.matrix(&y), 3);
        assert!((det - 1.0).abs() <= 1e-6, "{det}");
        let x = chi.inverse(&y).unwrap();
        let back = chi.map(&x);
        let err = back.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-8 * (1.0 + norm2(&y).sqrt()), "{err}");
    }
    // jets agree with the pointwise values
    let y = [3.0 * c, -c, 0.5 * c];
    let jet = gt.jet(&y, 1);
    let pt = gt.matrix(&y);
    for i in 0..9 {
        assert!((jet[i].value() - pt[i]).abs() <= 1e-10);
    }
}

#[test]
fn pullback_stays_long_range() {
    let (g, chi) = radial_power_diffeo(0.2, 1.0);
    let gt = pullback_metric(&g, &chi).unwrap();
    // the gluing band only changes the constants; decay is read off beyond it
    let c = chi.compact_radius * chi.bound;
    let samples: Vec<Vec<f64>> =
        dyadic_samples(3, 12, 4, 5).into_iter().filter(|y| norm2(y).sqrt() >= 2.0 * c).collect();
    let report = verify_long_range(&gt, &samples, 2, 10.0).unwrap();
    assert!(report.pass, "{:?}", report.ratios);
}

#[test]
fn identity_pullback_of_flat_is_flat() {
    let g = catalog("flat", &[], 3).unwrap();
    let delta = volume_defect(&g);
    let chi = build_diffeo(Transport::new(delta, 1.0).unwrap()).unwrap();
    let gt = pullback_metric(&g, &chi).unwrap();
    let m = gt.matrix(&[0.4, 7.0, -2.0]);
    for (i, v) in m.iter().enumerate() {
        assert!((v - if i % 4 == 0 { 1.0 } else { 0.0 }).abs() <= 1e-14);
    }
}

#[test]
fn unimodular_metric_has_no_potential() {
    // pulled-back metric: det ≡ 1 far out, so V vanishes there
    let (g, chi) = radial_power_diffeo(0.2, 1.0);
    let gt = pullback_metric(&g, &chi).unwrap();
    let p = conjugate_to_lebesgue(&gt).unwrap();
    let c = chi.compact_radius * chi.bound;
    for y in [[3.0 * c, 0.0, 0.0], [0.0, 2.5 * c, c]] {
        assert!(p.v(&y).abs() <= 1e-6, "{}", p.v(&y));
    }
}

#[test]
fn assembled_conjugated_operator_is_symmetric() {
    let g = catalog("aniso_bump", &[0.4, 2.0], 3).unwrap();
    let p = conjugate_to_lebesgue(&g).unwrap();
    let grid = Grid::new(3, 4.0, 8, Boundary::Dirichlet).unwrap();
    let op = assemble_coefficients(&p, &grid, "P").unwrap();
    assert!(op.matrix.asymmetry() <= 1e-12);
}

#[test]
fn expanded_form_matches_direct_evaluation_on_random_functions() {
    let g = catalog("radial_power", &[0.3, 0.8, 1.5], 3).unwrap();
    let p = conjugate_to_lebesgue(&g).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let c: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w = rng.random_range(0.1..0.6);
        let u = move |x: &[Jet]| (norm2(x) * -w).exp() * (x[0] * c[0] + x[1] * c[1] + x[2] * c[2] + c[3]);
        let x = random_point(&mut rng, 0.0, 3.0);
        let a = p.apply_direct(&u, &x);
        let b = p.apply_expanded(&u, &x);
        assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()), "{a} vs {b}");
    }
}

#[test]
fn split_size_decreases_with_cut_radius() {
    let g = catalog("radial_power", &[0.2, 1.0, 1.0], 3).unwrap();
    let p = conjugate_to_lebesgue(&g).unwrap();
    let etas: Vec<f64> = [2.0, 4.0, 8.0, 16.0]
        .iter()
        .map(|&r| split_small_plus_compact(&p, r, f64::INFINITY).unwrap().eta)
        .collect();
    assert!(etas.windows(2).all(|w| w[1] < w[0]), "{etas:?}");
    assert!(split_small_plus_compact(&p, 2.0, 1e-6).is_err());
}

#[test]
fn flat_split_is_trivial() {
    let p = conjugate_to_lebesgue(&catalog("flat", &[], 3).unwrap()).unwrap();
    let s = split_small_plus_compact(&p, 1.0, 1e-12).unwrap();
    assert_eq!(s.eta, 0.0);
    let x = [0.2, 0.1, 0.0];
    use specres::lattice::Coefficients;
    assert!(s.w.principal(&x).iter().all(|v| *v == 0.0));
    assert_eq!(s.w.v(&x), 0.0);
}
