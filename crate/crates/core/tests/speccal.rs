use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use specres::bump::Bump;
use specres::fit::{geomspace, linear_fit};
use specres::lattice::{eigen_oracle, flat_laplacian, Boundary, EigenOracle, Grid, GridFunction};
use specres::resolvent::Resolvent;
use specres::speccal::*;
use specres::vecops::rel_diff;
use specres::C64;
use std::sync::{Arc, OnceLock};

fn setup() -> &'static (Resolvent, Arc<EigenOracle>) {
    static CELL: OnceLock<(Resolvent, Arc<EigenOracle>)> = OnceLock::new();
    CELL.get_or_init(|| {
        let g = Grid::new(3, 5.0, 10, Boundary::Dirichlet).unwrap();
        let op = flat_laplacian(&g);
        let oracle = Arc::new(eigen_oracle(&op).unwrap());
        let res = Resolvent::with_backend(Arc::new(op), specres::resolvent::Backend::Dense(oracle.clone()));
        (res, oracle)
    })
}

fn random_fn(g: &Grid, seed: u64) -> GridFunction {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..g.len()).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
    GridFunction::from_vec(g, data).unwrap()
}

fn band() -> Bump {
    Bump::new(1.5, 3.0, 1.0, 1.0)
}

fn exact(o: &EigenOracle, chi: &dyn SpectralFunction, f: &GridFunction) -> Vec<C64> {
    o.apply(&f.data, |l| C64::new(chi.eval(l), 0.0))
}

#[test]
fn hs_matches_oracle_and_improves_with_order() {
    let (res, o) = setup();
    let f = random_fn(&o.grid, 1);
    let chi = band();
    let want = exact(o, &chi, &f);
    let errs: Vec<f64> = [4usize, 6, 8]
        .iter()
        .map(|&order| {
            let p = HsParams { order, ..HsParams::default() };
            rel_diff(&hs_apply(res, &chi, &f, &p).unwrap().value.data, &want)
        })
        .collect();
    eprintln!("{errs:?}");
    assert!(errs.windows(2).all(|w| w[1] < w[0]) && errs[2] <= 1e-6, "{errs:?}");
}

#[test]
fn hs_vanishes_off_spectrum() {
    let (res, o) = setup();
    let f = random_fn(&o.grid, 2);
    let chi = Bump::new(-4.0, -2.0, 1.0, 1.0);
    let v = hs_apply(res, &chi, &f, &HsParams::default()).unwrap().value;
    assert!(v.l2() <= 1e-10 * f.l2());
}

#[test]
fn hs_is_multiplicative() {
    let (res, o) = setup();
    let f = random_fn(&o.grid, 3);
    let outer: Arc<dyn SpectralFunction> = Arc::new(Bump::new(1.0, 4.0, 1.0, 1.0));
    let inner: Arc<dyn SpectralFunction> = Arc::new(band());
    let p = HsParams::default();
    let once = hs_apply(res, inner.as_ref(), &f, &p).unwrap().value;
    let twice = hs_apply(res, outer.as_ref(), &once, &p).unwrap().value;
    let prod = hs_apply(res, &Product(outer, inner), &f, &p).unwrap().value;
    let err = rel_diff(&twice.data, &prod.data);
    eprintln!("mult {err}");
    assert!(err <= 1e-5);
}

#[test]
fn stone_converges_at_first_order() {
    let (res, o) = setup();
    let f = random_fn(&o.grid, 4);
    let phi = band();
    let want = exact(o, &phi, &f);
    let deltas = [0.2, 0.1, 0.05, 0.025, 0.0125, 0.00625];
    let s = stone_apply(res, &phi, &f, &deltas).unwrap();
    let errs: Vec<f64> = s.approximations.iter().map(|a| rel_diff(&a.data, &want)).collect();
    let lx: Vec<f64> = deltas.iter().map(|d| d.ln()).collect();
    let ly: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let slope = linear_fit(&lx, &ly).1;
    let lim = rel_diff(&s.limit.data, &want);
    eprintln!("{errs:?} slope {slope} limit {lim}");
    assert!((slope - 1.0).abs() <= 0.2, "{slope}");
    assert!(lim <= 1e-4 && s.monotone);
    let hs = hs_apply(res, &phi, &f, &HsParams::default()).unwrap().value;
    assert!(rel_diff(&s.limit.data, &hs.data) <= 1e-5);
}

#[test]
fn stone_fixes_eigenvectors() {
    let (res, o) = setup();
    let i = o.values.iter().position(|&l| l > 2.0).unwrap();
    let data: Vec<C64> = (0..o.values.len()).map(|r| C64::new(o.vectors[(r, i)], 0.0)).collect();
    let f = GridFunction::from_vec(&o.grid, data).unwrap();
    let s = stone_apply(res, &band(), &f, &[0.2, 0.1, 0.05, 0.025, 0.0125]).unwrap();
    assert!(rel_diff(&s.limit.data, &f.data) <= 1e-4);
}

#[test]
fn sinc_norm_matches_spectral_sum() {
    let (_, o) = setup();
    let chi = low_cutoff(1.0, 2.0);
    let nu = 5.0;
    let t = 3.0;
    let w = WeightedWindow::new(o, nu, -2.0, 2.0).unwrap();
    let got = w.norm(|l| Flavor::Sinc.eval(t, l) * chi.eval(l)).unwrap();
    // direct: dense W Q f(Λ) Qᵀ W and its largest |eigenvalue|
    let wv = specres::lattice::weight_vector(&o.grid, nu);
    let m = o.function_matrix(|l| Flavor::Sinc.eval(t, l).re * chi.eval(l));
    let n = wv.len();
    let full = faer::Mat::<f64>::from_fn(n, n, |i, j| wv[i] * m[(i, j)] * wv[j]);
    let ev = full.self_adjoint_eigen(faer::Side::Lower).unwrap();
    let s = ev.S().column_vector();
    let want = (0..n).map(|i| s[i].abs()).fold(0.0, f64::max);
    assert!((got - want).abs() <= 1e-8 * want, "{got} vs {want}");
}

#[test]
fn decay_table_at_zero_time_is_the_cutoff_norm() {
    let (_, o) = setup();
    let chi = low_cutoff(1.0, 2.0);
    let mut times = vec![0.0];
    times.extend(geomspace(1.0, 20.0, 8));
    let t = ibp_low_freq(o, &chi, &times, 5.0, Flavor::Schrodinger).unwrap();
    let w = WeightedWindow::new(o, 5.0, -2.0, 2.0).unwrap();
    let want = w.norm(|l| C64::new(chi.eval(l), 0.0)).unwrap();
    assert!((t.rows[0].norm - want).abs() <= 1e-12 * want);
    assert!(t.hypothesis_met);
    assert!(ibp_low_freq(o, &chi, &[1.0, 2.0, 5.0], 5.0, Flavor::Cos).is_err());
}

#[test]
fn boundary_terms_vanish_with_delta() {
    let (_, o) = setup();
    let v = boundary_term_norms(o, 5.0, 1, &[1e-2, 1e-3, 1e-4]).unwrap();
    assert!(v.windows(2).all(|w| w[1] < 0.2 * w[0]), "{v:?}");
}

#[test]
fn localization_constants() {
    let (_, o) = setup();
    let us: Vec<Vec<C64>> = (0..4).map(|s| random_fn(&o.grid, 10 + s).data).collect();
    let times = geomspace(0.1, 10.0, 10);
    let r = localization_inequality_check(o, Flavor::Schrodinger, 2.0, &times, &us, 2, 7).unwrap();
    eprintln!("{r:?}");
    assert!(r.pass && r.overlap == 3);
}
