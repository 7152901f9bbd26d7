use specres::dilation::*;
use specres::lattice::{discrete_norm, Boundary, FlatCoefficients, Grid, GridFunction, NormKind};
use specres::vecops::rel_diff;
use specres::C64;
use std::sync::Arc;

fn bump(g: &Grid, s: f64) -> GridFunction {
    GridFunction::from_fn(g, |x| {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        C64::new(1.0 + 0.3 * x[0], 0.2 * x[1]) * (-r2 / (2.0 * s * s)).exp()
    })
}

#[test]
fn dilation_is_unitary_on_smooth_data() {
    let g = Grid::new(3, 6.0, 48, Boundary::Dirichlet).unwrap();
    let u = bump(&g, 1.0);
    let v = dilate(&u, 0.3).unwrap();
    assert!((v.l2() - u.l2()).abs() <= 1e-4 * u.l2(), "{} vs {}", v.l2(), u.l2());
}

#[test]
fn group_law_up_to_interpolation() {
    let g = Grid::new(2, 8.0, 128, Boundary::Dirichlet).unwrap();
    let u = bump(&g, 1.0);
    let twice = dilate(&dilate(&u, 0.2).unwrap(), -0.5).unwrap();
    let once = dilate(&u, -0.3).unwrap();
    assert!(rel_diff(&twice.data, &once.data) <= 1e-3);
}

#[test]
fn tau_derivative_is_generator() {
    let err = |m: usize| {
        let g = Grid::new(2, 8.0, m, Boundary::Dirichlet).unwrap();
        let u = bump(&g, 1.0);
        let dt = 1e-3;
        let plus = dilate(&u, dt).unwrap();
        let minus = dilate(&u, -dt).unwrap();
        let diff: Vec<C64> = plus.data.iter().zip(&minus.data).map(|(a, b)| (a - b) / (2.0 * dt)).collect();
        let iau: Vec<C64> = generator_apply(&u).data.iter().map(|v| v * C64::new(0.0, 1.0)).collect();
        rel_diff(&diff, &iau)
    };
    let (coarse, fine) = (err(64), err(128));
    // second order in h
    assert!(fine < coarse / 3.0 && fine <= 1e-2, "{coarse} {fine}");
}

#[test]
fn lp_identity_is_exact_for_node_aligned_dilation() {
    let g = Grid::new(3, 8.0, 64, Boundary::Dirichlet).unwrap();
    let u = GridFunction::from_real_fn(&g, |x| (-x.iter().map(|v| v * v).sum::<f64>() / 2.88).exp());
    let tau = 2f64.ln();
    let v = dilate(&u, tau).unwrap();
    for p in [1.0, 2.0, f64::INFINITY] {
        let got = discrete_norm(&v, NormKind::Lp(p));
        let want = (tau * (1.5 - 3.0 / p)).exp() * discrete_norm(&u, NormKind::Lp(p));
        assert!((got - want).abs() <= 1e-10 * want, "p = {p}");
    }
}

#[test]
fn quadrature_resolvent_meets_contract_and_bound() {
    let g = Grid::new(2, 6.0, 128, Boundary::Dirichlet).unwrap();
    let u = bump(&g, 1.0);
    for zeta in [C64::new(0.3, -1.0), C64::new(-0.4, -0.8)] {
        let s = dilation_resolvent(&u, DEFAULT_KAPPA, zeta).unwrap();
        assert!(s.residual <= RESOLVENT_TOL);
        assert!(s.value.l2() <= 1.05 * u.l2() / zeta.im.abs());
    }
    // the other half plane integrates expanding dilations; the box must hold them
    let g = Grid::new(2, 16.0, 256, Boundary::Dirichlet).unwrap();
    let u = bump(&g, 1.0);
    let s = dilation_resolvent(&u, DEFAULT_KAPPA, C64::new(0.3, 1.0)).unwrap();
    assert!(s.value.l2() <= 1.05 * u.l2());
}

#[test]
fn intertwining_improves_under_refinement() {
    // local case r = 2: limited by the mesh
    let res: Vec<f64> = [64usize, 128]
        .iter()
        .map(|&m| {
            let g = Grid::new(2, 8.0, m, Boundary::Periodic).unwrap();
            intertwining_check(&bump(&g, 1.0), DEFAULT_KAPPA, C64::new(0.2, -1.0), 2.0).unwrap().residual
        })
        .collect();
    assert!(res[1] < res[0] && res[1] <= 1e-3, "{res:?}");
    // nonlocal case r = 1: |D|u has algebraic tails, limited by the box
    let res: Vec<f64> = [(8.0, 64usize), (16.0, 128), (32.0, 256)]
        .iter()
        .map(|&(l, m)| {
            let g = Grid::new(2, l, m, Boundary::Periodic).unwrap();
            intertwining_check(&bump(&g, 1.0), DEFAULT_KAPPA, C64::new(0.2, -1.0), 1.0).unwrap().residual
        })
        .collect();
    assert!(res.windows(2).all(|w| w[1] < w[0]) && res[2] <= 1e-3, "{res:?}");
}

#[test]
fn scaling_identity_flat() {
    let z = C64::new(1.0, 2.0);
    let g = Grid::new(3, 8.0, 32, Boundary::Periodic).unwrap();
    let r = scaling_identity_check(&ScalingSetup::FlatSpectral, &bump(&g, 1.0), z).unwrap();
    assert_eq!(r.tau, 0.0);
    assert!(r.residual <= 1e-12);
    let z = C64::new(0.25, 2.0);
    let res: Vec<f64> = [48usize, 64, 96]
        .iter()
        .map(|&m| {
            let g = Grid::new(3, 8.0, m, Boundary::Periodic).unwrap();
            scaling_identity_check(&ScalingSetup::FlatSpectral, &bump(&g, 1.0), z).unwrap().residual
        })
        .collect();
    assert!(res.windows(2).all(|w| w[1] < w[0]) && res[2] <= 1e-3, "{res:?}");
}

#[test]
fn scaling_identity_assembled_flat() {
    let z = C64::new(0.25, 2.0);
    let c = Arc::new(FlatCoefficients(3));
    let res: Vec<f64> = [32usize, 48, 64]
        .iter()
        .map(|&m| {
            let g = Grid::new(3, 8.0, m, Boundary::Dirichlet).unwrap();
            scaling_identity_check(&ScalingSetup::Assembled(c.clone()), &bump(&g, 1.0), z).unwrap().residual
        })
        .collect();
    assert!(res.windows(2).all(|w| w[1] < w[0]) && res[2] <= 1e-2, "{res:?}");
}
