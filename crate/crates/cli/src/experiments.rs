//! One runner per subcommand. Each turns the configuration into a report
//! with tables, fits and pass/fail checks.

use crate::config::{Config, ConfigError};
use crate::report::{Cell, Report, Table};
use crate::RunError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use specres::bump::Bump;
use specres::dilation::{dilate, dilation_resolvent, intertwining_check};
use specres::evolve::{
    cfl_limit, fit_decay, mass_radius, reflection_time, energy_decay_experiment, wave_propagate, Sampling,
    EnergyDecayConfig,
};
use specres::fit::{geomspace, linear_fit, power_law};
use specres::gauge::{
    build_diffeo, catalog_operator, choose_r, det_of, power_law_transport, principal_bound, pullback_metric,
    volume_defect, Transport,
};
use specres::jet::{norm2, Jet};
use specres::lattice::{
    discrete_norm, eigen_oracle, weight_vector, Boundary, EigenOracle, Grid, GridFunction, NormKind,
    ORACLE_CAP,
};
use specres::metric::{catalog, dilate_symbol, rbar, symbol_norm, FnSymbol, QuadratureGrid, ScalarSymbol, SymbolClassParams};
use specres::resolvent::{free_l1_linf, low_freq_sweep, Backend, Resolvent};
use specres::speccal::{
    hs_apply, low_cutoff, low_freq_table, stone_apply, Flavor, HsParams, Product, SpectralFunction, WeightedWindow,
};
use specres::vecops::rel_diff;
use specres::C64;
use std::f64::consts::PI;
use std::sync::Arc;

fn bad(key: &str, msg: impl Into<String>) -> RunError {
    RunError::Config(ConfigError::new("value", Some(key), msg))
}

/// Parameters used when `metric.params` is not given.
pub fn default_params(name: &str) -> Vec<f64> {
    match name {
        "radial_power" => vec![0.1, 1.0, 1.0],
        "aniso_bump" => vec![0.4, 2.0],
        "small_longrange" => vec![0.1, 1.0],
        _ => Vec::new(),
    }
}

fn metric_of(cfg: &Config, default: &str) -> (String, Vec<f64>) {
    let name = cfg.metric.name.clone().unwrap_or_else(|| default.to_string());
    let params = cfg.metric.params.clone().unwrap_or_else(|| default_params(&name));
    (name, params)
}

fn grid_of(cfg: &Config, dim: usize, half_width: f64, m: usize, bc: &str) -> Result<Grid, RunError> {
    let g = &cfg.grid;
    let bc = match g.bc.as_deref().unwrap_or(bc) {
        "dirichlet" => Boundary::Dirichlet,
        "periodic" => Boundary::Periodic,
        other => return Err(bad("grid.bc", format!("expected `dirichlet` or `periodic`, got `{other}`"))),
    };
    Ok(Grid::new(g.dim.unwrap_or(dim), g.half_width.unwrap_or(half_width), g.m.unwrap_or(m), bc)?)
}

fn gaussian(g: &Grid, s: f64) -> GridFunction {
    GridFunction::from_fn(g, |x| {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        C64::new(1.0 + 0.3 * x[0], 0.2 * x[1 % x.len()]) * (-r2 / (2.0 * s * s)).exp()
    })
}

fn random_fn(g: &Grid, seed: u64) -> GridFunction {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..g.len()).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
    GridFunction { grid: g.clone(), data }
}

fn random_point(rng: &mut ChaCha8Rng, d: usize, lo: f64, hi: f64) -> Vec<f64> {
    loop {
        let u: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = norm2(&u).sqrt();
        if n > 1e-2 {
            let r = rng.random_range(lo..hi);
            return u.iter().map(|v| v * r / n).collect();
        }
    }
}

fn oracle_for(cfg: &Config, default_grid: (usize, f64, usize)) -> Result<(Resolvent, Arc<EigenOracle>), RunError> {
    let (name, params) = metric_of(cfg, "flat");
    let grid = grid_of(cfg, default_grid.0, default_grid.1, default_grid.2, "dirichlet")?;
    if grid.len() > ORACLE_CAP {
        return Err(bad("grid.m", format!("{} unknowns exceed the dense oracle cap {ORACLE_CAP}", grid.len())));
    }
    let (_, op) = catalog_operator(&name, &params, &grid)?;
    let oracle = Arc::new(eigen_oracle(&op)?);
    Ok((Resolvent::with_backend(Arc::new(op), Backend::Dense(oracle.clone())), oracle))
}

pub fn free_oracle(cfg: &Config) -> Result<Report, RunError> {
    let c = &cfg.free;
    if !(c.lmin > 0.0 && c.lmax > c.lmin) || c.points < 3 {
        return Err(bad("free", "need 0 < lmin < lmax and at least 3 points"));
    }
    let mut r = Report::new("free-oracle", cfg);
    let lambdas = geomspace(c.lmin, c.lmax, c.points);
    let radii = geomspace(c.rmin, c.rmax, c.radii);
    let mut t = Table::new("free_kernel", &["lambda", "norm", "closed_form", "rel_error"]).with_plot(
        "lambda",
        "norm",
        None,
        "squared free resolvent, L1 to Linf",
    );
    let mut norms = Vec::new();
    let mut worst: f64 = 0.0;
    for &l in &lambdas {
        let v = free_l1_linf(l, 2, &radii)?;
        let want = 1.0 / (8.0 * PI * l.sqrt());
        let e = (v - want).abs() / want;
        worst = worst.max(e);
        norms.push(v);
        t.push(vec![l.into(), v.into(), want.into(), e.into()]);
    }
    let fit = power_law(&lambdas, &norms)?;
    r.tables.push(t);
    r.fit("norm_vs_lambda", fit.slope, fit.ci, fit.points, Some((c.lmin, c.lmax)));
    r.check("slope", fit.slope, Some(-0.5 - c.slope_tol), Some(-0.5 + c.slope_tol));
    r.at_most("closed_form_rel_error", worst, c.match_tol);
    Ok(r)
}

pub fn norms(cfg: &Config) -> Result<Report, RunError> {
    let c = &cfg.norms;
    let d = cfg.grid.dim.unwrap_or(3);
    let (name, params) = metric_of(cfg, "radial_power");
    let metric = catalog(&name, &params, d)?;
    let p = SymbolClassParams::new(c.o, c.r, c.n, d)?;
    let q = QuadratureGrid::new(d, c.r_max, c.radial_nodes, c.angular_nodes)?;
    let mut r = Report::new("norms", cfg);
    let mut t = Table::new("symbol_norms", &["j", "k", "tau", "norm", "expected", "rel_error"]);
    let mut worst: f64 = 0.0;
    for j in 0..d {
        for k in j..d {
            let a = metric.perturbation(j, k);
            let base = symbol_norm(&a, p, &q)?;
            t.push(vec![j.into(), k.into(), 0.0.into(), base.into(), base.into(), 0.0.into()]);
            for &tau in &c.taus {
                let got = symbol_norm(&dilate_symbol(&a, tau), p, &q.rescaled(tau))?;
                let want = (-(c.o as f64) * tau).exp() * base;
                let e = if want == 0.0 { got.abs() } else { (got - want).abs() / want };
                worst = worst.max(e);
                t.push(vec![j.into(), k.into(), tau.into(), got.into(), want.into(), e.into()]);
            }
        }
    }
    r.tables.push(t);
    r.at_most("homogeneity_rel_error", worst, c.tol);
    Ok(r)
}

pub fn gauge_check(cfg: &Config) -> Result<Report, RunError> {
    let c = &cfg.gauge;
    let d = cfg.grid.dim.unwrap_or(3);
    let (name, params) = metric_of(cfg, "radial_power");
    let g = catalog(&name, &params, d)?;
    let delta = volume_defect(&g);
    let choice = choose_r(&delta, g.rho)?;
    let tr = Transport::new(delta, choice.r)?;
    let chi = build_diffeo(tr.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut r = Report::new("gauge-check", cfg);
    r.info("matching_radius", choice.r);
    r.info("compact_radius", chi.compact_radius);

    let c0 = chi.compact_radius.max(choice.r);
    let mut t = Table::new("det_samples", &["radius", "det_error"]).with_plot(
        "radius",
        "det_error",
        None,
        "Jacobian determinant against volume density",
    );
    let mut det_err: f64 = 0.0;
    for _ in 0..c.rays {
        let x = random_point(&mut rng, d, c0, 50.0 * c0);
        let e = (chi.det_lu(&x) - det_of(&g.matrix(&x), d).sqrt()).abs();
        det_err = det_err.max(e);
        t.push(vec![norm2(&x).sqrt().into(), e.into()]);
    }
    let gt = pullback_metric(&g, &chi)?;
    let outer = c0 * chi.bound;
    let mut unimodular: f64 = 0.0;
    for _ in 0..c.samples {
        let y = random_point(&mut rng, d, 2.0 * outer, 40.0 * outer);
        unimodular = unimodular.max((det_of(&gt.matrix(&y), d) - 1.0).abs());
    }
    let mut ode: f64 = 0.0;
    for _ in 0..c.samples {
        ode = ode.max(tr.ode_residual(&random_point(&mut rng, d, choice.r, 32.0 * choice.r)).abs());
    }
    let (pc, prho) = (c.power_c, c.power_rho);
    if !(prho > 0.0 && prho < d as f64) {
        return Err(bad("gauge.power_rho", "needs 0 < rho < dimension"));
    }
    let power = ScalarSymbol::new(FnSymbol {
        dim: d,
        value: move |x: &[f64]| pc * norm2(x).powf(-0.5 * prho),
        jet: move |x: &[Jet]| norm2(x).powf(-0.5 * prho) * pc,
    });
    let pt = Transport::new(power, 2.0)?;
    let mut closed: f64 = 0.0;
    for _ in 0..c.samples {
        let x = random_point(&mut rng, d, 2.0, 400.0);
        let want = power_law_transport(pc, prho, d, 2.0, norm2(&x).sqrt());
        closed = closed.max((pt.raw(&x) - want).abs() / want.abs());
    }
    r.tables.push(t);
    r.at_most("det_jacobian_vs_volume", det_err, c.det_tol);
    r.at_most("pullback_unimodular", unimodular, c.det_tol);
    r.at_most("transport_ode_residual", ode, c.ode_tol);
    r.at_most("closed_form_rel_error", closed, c.closed_form_tol);
    Ok(r)
}

pub fn resolvent_sweep(cfg: &Config) -> Result<Report, RunError> {
    let c = &cfg.sweep;
    let (name, params) = metric_of(cfg, "flat");
    let grid = grid_of(cfg, 3, 24.0, 48, "dirichlet")?;
    if c.points < 6 {
        return Err(bad("sweep.points", "a sweep needs at least 6 λ values"));
    }
    if c.divisors.is_empty() || c.divisors.iter().any(|d| !(*d > 0.0)) {
        return Err(bad("sweep.divisors", "need positive divisors"));
    }
    let sign = match c.side.as_str() {
        "positive" => 1.0,
        "negative" => -1.0,
        other => return Err(bad("sweep.side", format!("expected `positive` or `negative`, got `{other}`"))),
    };
    let lmin = c.lmin.unwrap_or(4.0 * grid.lambda_box());
    if !(lmin > 0.0 && c.lmax > lmin) {
        return Err(bad("sweep.lmax", format!("window [{lmin}, {}] is empty", c.lmax)));
    }
    let lambdas: Vec<f64> = geomspace(lmin, c.lmax, c.points).into_iter().map(|l| sign * l).collect();
    let (_, op) = catalog_operator(&name, &params, &grid)?;
    let table = low_freq_sweep(&Resolvent::new(op), c.n, c.nu, &lambdas, &c.divisors)?;

    let mut r = Report::new("resolvent-sweep", cfg);
    r.info("lambda_box", table.lambda_box);
    r.info("span_decades", table.span_decades);
    r.info("max_over_min", table.ratio);
    let plot_name = format!("sweep_n{}_nu{}", c.n, c.nu);
    let mut t = Table::new(&plot_name, &["lambda", "eps", "divisor", "norm", "pi_residual", "gmres_iters"]).with_plot(
        "lambda",
        "norm",
        Some("divisor"),
        &format!("weighted resolvent norm, n = {}, nu = {}", c.n, c.nu),
    );
    for row in &table.rows {
        let dv = row.lambda.abs() / row.eps;
        let dv = c.divisors.iter().copied().find(|d| (d - dv).abs() < 1e-9 * d).unwrap_or(dv);
        t.push(vec![
            row.lambda.into(),
            row.eps.into(),
            dv.into(),
            row.norm.into(),
            row.pi_residual.into(),
            row.gmres_iters.into(),
        ]);
    }
    r.tables.push(t);
    for (dv, f) in &table.fits {
        r.fit(&format!("eps_lambda_over_{dv}"), f.slope, f.ci, f.points, Some((lmin, c.lmax)));
    }
    match c.check.as_str() {
        "bounded" => {
            r.at_most("max_over_min", table.ratio, c.bound_factor);
        }
        "slope" => {
            for (dv, f) in &table.fits {
                r.check(
                    &format!("slope_eps_lambda_over_{dv}"),
                    f.slope,
                    Some(c.slope_target - c.slope_tol),
                    Some(c.slope_target + c.slope_tol),
                );
            }
        }
        "none" => {}
        other => return Err(bad("sweep.check", format!("expected `bounded`, `slope` or `none`, got `{other}`"))),
    }
    Ok(r)
}

pub fn dilation_check(cfg: &Config) -> Result<Report, RunError> {
    let c = &cfg.dilation;
    let grid = grid_of(cfg, 2, 6.0, 128, "dirichlet")?;
    let u = gaussian(&grid, 1.0);
    let mut r = Report::new("dilation-check", cfg);
    let mut t = Table::new("dilation_resolvent", &["zeta_re", "zeta_im", "residual", "bound_ratio"]);
    let mut contract: f64 = 0.0;
    let mut bound: f64 = 0.0;
    for z in &c.zetas {
        let zeta = C64::new(z[0], z[1]);
        let s = dilation_resolvent(&u, c.kappa, zeta)?;
        let ratio = s.value.l2() * zeta.im.abs() / u.l2();
        contract = contract.max(s.residual);
        bound = bound.max(ratio);
        t.push(vec![z[0].into(), z[1].into(), s.residual.into(), ratio.into()]);
    }
    r.tables.push(t);

    // node-aligned dilation by ln 2 on data resolved at twice the mesh
    let d = grid.dim as f64;
    let sigma = 0.15 * grid.half_width;
    let v0 = GridFunction::from_real_fn(&grid, |x| (-x.iter().map(|v| v * v).sum::<f64>() / (2.0 * sigma * sigma)).exp());
    let tau = 2f64.ln();
    let v = dilate(&v0, tau)?;
    let mut lp: f64 = 0.0;
    for p in [1.0, 2.0, f64::INFINITY] {
        let want = (tau * d * (0.5 - 1.0 / p)).exp() * discrete_norm(&v0, NormKind::Lp(p));
        lp = lp.max((discrete_norm(&v, NormKind::Lp(p)) - want).abs() / want);
    }

    let mut it = Table::new("intertwining", &["m", "h", "residual"]).with_plot(
        "h",
        "residual",
        None,
        "intertwining residual under refinement",
    );
    let mut res = Vec::new();
    for &m in &c.intertwining_m {
        let g = Grid::new(2, c.intertwining_half_width, m, Boundary::Periodic)?;
        let rep = intertwining_check(&gaussian(&g, 1.0), c.kappa, C64::new(0.2, -1.0), c.sobolev)?;
        res.push(rep.residual);
        it.push(vec![m.into(), rep.h.into(), rep.residual.into()]);
    }
    r.tables.push(it);
    let decreasing = res.len() >= 2 && res.windows(2).all(|w| w[1] < w[0]);
    r.at_most("resolvent_residual", contract, specres::dilation::RESOLVENT_TOL);
    r.at_most("l2_bound_ratio", bound, 1.0 + c.bound_slack);
    r.at_most("lp_identity_rel_error", lp, c.lp_tol);
    r.at_least("intertwining_decreasing", if decreasing { 1.0 } else { 0.0 }, 1.0);
    Ok(r)
}

fn bump_of(b: [f64; 4]) -> Bump {
    Bump::new(b[0], b[1], b[2], b[3])
}

pub fn funcalc_check(cfg: &Config) -> Result<Report, RunError> {
    let c = &cfg.funcalc;
    let (res, o) = oracle_for(cfg, (3, 5.0, 10))?;
    let f = random_fn(&o.grid, cfg.seed);
    let band = bump_of(c.band);
    let want = o.apply(&f.data, |l| C64::new(band.eval(l), 0.0));
    let p = HsParams { order: c.hs_order, ..HsParams::default() };
    let hs_err = rel_diff(&hs_apply(&res, &band, &f, &p)?.value.data, &want);

    let s = stone_apply(&res, &band, &f, &c.deltas)?;
    let stone_err = rel_diff(&s.limit.data, &want);
    let mut t = Table::new("stone", &["delta", "rel_error"]).with_plot(
        "delta",
        "rel_error",
        None,
        "Stone approximation error against the eigen-oracle",
    );
    let mut lx = Vec::new();
    let mut ly = Vec::new();
    for (d, a) in c.deltas.iter().zip(&s.approximations) {
        let e = rel_diff(&a.data, &want);
        t.push(vec![(*d).into(), e.into()]);
        lx.push(d.ln());
        ly.push(e.ln());
    }
    let order = linear_fit(&lx, &ly).1;

    let outer: Arc<dyn SpectralFunction> = Arc::new(bump_of(c.outer));
    let inner: Arc<dyn SpectralFunction> = Arc::new(band);
    let once = hs_apply(&res, inner.as_ref(), &f, &p)?.value;
    let twice = hs_apply(&res, outer.as_ref(), &once, &p)?.value;
    let prod = hs_apply(&res, &Product(outer, inner), &f, &p)?.value;
    let mult = rel_diff(&twice.data, &prod.data);

    let mut r = Report::new("funcalc-check", cfg);
    r.tables.push(t);
    r.fit("stone_error_vs_delta", order, (order, order), c.deltas.len(), None);
    r.at_most("hs_rel_error", hs_err, c.hs_tol);
    r.at_most("stone_rel_error", stone_err, c.stone_tol);
    r.check("stone_order", order, Some(1.0 - c.order_tol), Some(1.0 + c.order_tol));
    r.at_most("multiplicativity", mult, c.mult_tol);
    Ok(r)
}

pub fn lowfreq_decay(cfg: &Config) -> Result<Report, RunError> {
    let c = &cfg.lowfreq;
    let (_, o) = oracle_for(cfg, (3, 16.0, 16))?;
    let d = o.grid.dim;
    let chi = low_cutoff(c.plateau, c.end);
    let (a, b) = chi.support();
    let window = WeightedWindow::new(&o, c.nu, a, b)?;
    let times = geomspace(c.tmin, c.tmax, c.points);
    let target = rbar(d) as f64;
    let mut r = Report::new("lowfreq-decay", cfg);
    r.info("target_exponent", target);
    let mut t = Table::new("envelope", &["flavor", "t", "norm", "envelope"]).with_plot(
        "t",
        "envelope",
        Some("flavor"),
        "weighted low-frequency propagator norms",
    );
    for name in &c.flavors {
        let flavor = Flavor::parse(name, c.mass).map_err(|e| bad("lowfreq.flavors", e.to_string()))?;
        let table = low_freq_table(&window, &chi, &times, c.nu, flavor, d)?;
        for row in &table.rows {
            t.push(vec![name.as_str().into(), row.t.into(), row.norm.into(), row.envelope.into()]);
        }
        r.fit(&format!("envelope_{name}"), -table.exponent, table.fit.ci, table.fit.points, Some((c.tmin, c.tmax)));
        r.at_least(&format!("hypothesis_{name}"), if table.hypothesis_met { 1.0 } else { 0.0 }, 1.0);
        r.at_least(&format!("exponent_{name}"), table.exponent, c.rate_fraction * target);
    }
    r.tables.push(t);
    if c.direct_check && c.flavors.iter().any(|f| f == "sinc") {
        let tm = (c.tmin * c.tmax).sqrt();
        let got = window.norm(|l| Flavor::Sinc.eval(tm, l) * chi.eval(l))?;
        let wv = weight_vector(&o.grid, c.nu);
        let m = o.function_matrix(|l| Flavor::Sinc.eval(tm, l).re * chi.eval(l));
        let n = wv.len();
        let full = faer::Mat::<f64>::from_fn(n, n, |i, j| wv[i] * m[(i, j)] * wv[j]);
        let ev = full.self_adjoint_eigen(faer::Side::Lower).map_err(|_| specres::Error::Eigen)?;
        let s = ev.S().column_vector();
        let want = (0..n).map(|i| s[i].abs()).fold(0.0, f64::max);
        r.at_most("sinc_direct_rel_error", (got - want).abs() / want, c.direct_tol);
    }
    Ok(r)
}

pub fn evolve(cfg: &Config) -> Result<Report, RunError> {
    let c = &cfg.evolve;
    let (name, params) = metric_of(cfg, "flat");
    match c.equation.as_str() {
        "schrodinger" => {
            let dim = cfg.grid.dim.unwrap_or(3);
            if dim != 3 {
                return Err(bad("grid.dim", "the Schrödinger decay experiment is three-dimensional"));
            }
            if cfg.grid.bc.as_deref().is_some_and(|b| b != "dirichlet") {
                return Err(bad("grid.bc", "the decay experiment runs on a Dirichlet box"));
            }
            let setup = EnergyDecayConfig {
                metric: name,
                params,
                m: cfg.grid.m.unwrap_or(48),
                half_width: cfg.grid.half_width.unwrap_or(24.0),
                nu: c.nu,
                t_max: c.t_max,
                dt: c.dt.unwrap_or(specres::evolve::DEFAULT_SCHRODINGER_DT),
                data_width: c.data_width,
                plateau: c.plateau,
                band_end: c.band_end,
                samples: c.samples,
                obs_level: c.obs_level,
                data_tail: c.data_tail,
                t_min: c.t_min,
            };
            let rep = energy_decay_experiment(&setup)?;
            let mut r = Report::new("evolve", cfg);
            r.info("r_data", rep.r_data);
            r.info("r_obs", rep.r_obs);
            r.info("v_max", rep.v_max);
            r.info("t_reflect", rep.fit.t_reflect);
            r.info("target_rate", rep.target as f64);
            let mut t = Table::new("local_energy", &["t", "local_energy"]).with_plot(
                "t",
                "local_energy",
                None,
                "Schrödinger local energy",
            );
            for (ti, e) in rep.times.iter().zip(&rep.local_energy) {
                t.push(vec![(*ti).into(), (*e).into()]);
            }
            r.tables.push(t);
            r.fit("decay_rate", rep.fit.slope, rep.fit.ci, rep.fit.points, Some(rep.fit.window));
            r.at_least("decay_rate", rep.fit.slope, c.rate_fraction * rep.target as f64);
            r.at_most("norm_drift", rep.norm_drift, c.drift_tol);
            Ok(r)
        }
        "wave" | "klein-gordon" => {
            let mass = if c.equation == "wave" { 0.0 } else { c.mass };
            let grid = grid_of(cfg, 3, 24.0, 48, "dirichlet")?;
            let (coeffs, op) = catalog_operator(&name, &params, &grid)?;
            let limit = cfl_limit(&op, mass);
            let dt = c.dt.unwrap_or(0.5 * limit);
            let f = GridFunction::from_real_fn(&grid, |x| {
                (-x.iter().map(|v| v * v).sum::<f64>() / (2.0 * c.data_width * c.data_width)).exp()
            });
            let g = GridFunction::zeros(&grid);
            let times = geomspace(c.t_min, c.t_max, c.samples);
            let traj = wave_propagate(&op, &f, &g, mass, &Sampling::new(times, vec![c.nu]), dt)?;
            let mut r = Report::new("evolve", cfg);
            r.info("dt", dt);
            r.info("stability_limit", limit);
            let mut t = Table::new("local_energy", &["t", "local_energy", "energy"]).with_plot(
                "t",
                "local_energy",
                None,
                &format!("{} local energy", c.equation),
            );
            for ((ti, e), inv) in traj.times.iter().zip(&traj.local[0]).zip(&traj.invariant) {
                t.push(vec![(*ti).into(), (*e).into(), (*inv).into()]);
            }
            r.tables.push(t);
            // finite propagation speed: sqrt of the largest principal coefficient
            let v_max = principal_bound(&coeffs, &grid).sqrt();
            let r_data = mass_radius(&f, c.data_tail);
            let r_obs = (c.obs_level.powf(-2.0 / c.nu) - 1.0).max(0.0).sqrt();
            let t_reflect = reflection_time(grid.half_width, r_data, r_obs, v_max);
            r.info("t_reflect", t_reflect);
            let t1 = c.t_max.min(t_reflect);
            match fit_decay(&traj.times, &traj.local[0], (t1 / 10.0, t1), t_reflect) {
                Ok(fit) => r.fit("decay_rate", fit.slope, fit.ci, fit.points, Some(fit.window)),
                Err(e) => r.warnings.push(format!("no decay fit: {e}")),
            }
            r.at_most("energy_drift", traj.drift, c.drift_tol);
            Ok(r)
        }
        other => Err(bad("evolve.equation", format!("expected `schrodinger`, `wave` or `klein-gordon`, got `{other}`"))),
    }
}

/// Runs the named experiment.
pub fn dispatch(name: &str, cfg: &Config) -> Result<Report, RunError> {
    match name {
        "free-oracle" => free_oracle(cfg),
        "norms" => norms(cfg),
        "gauge-check" => gauge_check(cfg),
        "resolvent-sweep" => resolvent_sweep(cfg),
        "dilation-check" => dilation_check(cfg),
        "funcalc-check" => funcalc_check(cfg),
        "lowfreq-decay" => lowfreq_decay(cfg),
        "evolve" => evolve(cfg),
        other => Err(bad("experiment", format!("unknown experiment `{other}`"))),
    }
}

/// Rows of a table as plain numbers, for tests and bindings.
pub fn numeric_column(t: &Table, name: &str) -> Vec<f64> {
    let Some(i) = t.column(name) else { return Vec::new() };
    t.rows.iter().filter_map(|r| Cell::as_f64(&r[i])).collect()
}
