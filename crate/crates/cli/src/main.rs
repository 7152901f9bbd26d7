use clap::{Args, Parser, Subcommand};
use specres_cli::config::{self, Config, ConfigError};
use specres_cli::experiments::dispatch;
use specres_cli::report::{write_timing, Report};
use specres_cli::RunError;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

#[derive(Parser)]
#[command(name = "specres", version, about = "Numerical experiments on weighted resolvents and local energy decay")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// override a configuration key, e.g. `--set grid.m=32`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// output directory (default: `out_dir` from the configuration)
    #[arg(long)]
    out: Option<PathBuf>,
    /// metric family: flat, radial_power, aniso_bump, small_longrange
    #[arg(long)]
    metric: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Symbol-class norms and their dilation homogeneity
    Norms(Common),
    /// Volume gauge: Jacobian, unimodularity and transport checks
    GaugeCheck(Common),
    /// Weighted resolvent norms as λ approaches 0
    ResolventSweep {
        #[command(flatten)]
        common: Common,
        /// resolvent power
        #[arg(long)]
        n: Option<usize>,
        /// weight exponent
        #[arg(long)]
        nu: Option<f64>,
    },
    /// Free resolvent kernel against its closed form
    FreeOracle(Common),
    /// Dilation group, its resolvent and the intertwining relation
    DilationCheck(Common),
    /// Helffer-Sjöstrand and Stone formulas against the eigen-oracle
    FuncalcCheck(Common),
    /// Weighted norms of low-frequency propagators in time
    LowfreqDecay {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        nu: Option<f64>,
        /// final time
        #[arg(long = "T")]
        t: Option<f64>,
    },
    /// Time evolution and local energy decay
    Evolve {
        #[command(flatten)]
        common: Common,
        /// schrodinger, wave or klein-gordon
        #[arg(long)]
        flavor: Option<String>,
        #[arg(long)]
        nu: Option<f64>,
        /// final time
        #[arg(long = "T")]
        t: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
        /// Klein-Gordon mass
        #[arg(long)]
        m: Option<f64>,
    },
    /// Every experiment, one subdirectory each, plus `summary.json`
    All(Common),
    /// The experiment named in the configuration file
    Run {
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn push<T: ToString>(v: &mut Vec<String>, key: &str, value: Option<T>) {
    if let Some(x) = value {
        v.push(format!("{key}={}", x.to_string()));
    }
}

fn quoted(s: Option<String>) -> Option<String> {
    s.map(|s| format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\"")))
}

/// Resolves the subcommand to `(experiment, common options, overrides)`.
fn resolve(cmd: Cmd) -> (Option<&'static str>, Common, Vec<String>) {
    let mut o = Vec::new();
    let (name, common) = match cmd {
        Cmd::Norms(c) => (Some("norms"), c),
        Cmd::GaugeCheck(c) => (Some("gauge-check"), c),
        Cmd::FreeOracle(c) => (Some("free-oracle"), c),
        Cmd::DilationCheck(c) => (Some("dilation-check"), c),
        Cmd::FuncalcCheck(c) => (Some("funcalc-check"), c),
        Cmd::ResolventSweep { common, n, nu } => {
            push(&mut o, "sweep.n", n);
            push(&mut o, "sweep.nu", nu.map(float));
            (Some("resolvent-sweep"), common)
        }
        Cmd::LowfreqDecay { common, nu, t } => {
            push(&mut o, "lowfreq.nu", nu.map(float));
            push(&mut o, "lowfreq.tmax", t.map(float));
            (Some("lowfreq-decay"), common)
        }
        Cmd::Evolve { common, flavor, nu, t, dt, m } => {
            push(&mut o, "evolve.equation", quoted(flavor));
            push(&mut o, "evolve.nu", nu.map(float));
            push(&mut o, "evolve.t_max", t.map(float));
            push(&mut o, "evolve.dt", dt.map(float));
            push(&mut o, "evolve.mass", m.map(float));
            (Some("evolve"), common)
        }
        Cmd::All(c) => (None, c),
        Cmd::Run { config, set, out } => {
            let c = Common { config: Some(config), set, out, ..Common::default() };
            return (None, c, o);
        }
    };
    push(&mut o, "metric.name", quoted(common.metric.clone()));
    push(&mut o, "seed", common.seed);
    (name, common, o)
}

/// Float literal TOML will not read as an integer.
fn float(x: f64) -> String {
    format!("{x:?}")
}

fn run_one(name: &str, cfg: &Config, dir: &Path) -> Result<Report, RunError> {
    let start = Instant::now();
    let mut report = dispatch(name, cfg)?;
    report.write(dir, cfg.report.plots)?;
    write_timing(dir, start.elapsed().as_secs_f64())?;
    Ok(report)
}

fn print_report(r: &Report) {
    for c in &r.checks {
        let bounds = match (c.min, c.max) {
            (Some(a), Some(b)) => format!("in [{a:e}, {b:e}]"),
            (Some(a), None) => format!(">= {a:e}"),
            (None, Some(b)) => format!("<= {b:e}"),
            (None, None) => String::new(),
        };
        println!("{:<16} {:<36} {} {:.6e} {bounds}", r.experiment, c.name, if c.pass { "PASS" } else { "FAIL" }, c.value);
    }
    for w in &r.warnings {
        eprintln!("warning: {}: {w}", r.experiment);
    }
}

fn fail(e: &RunError) -> ExitCode {
    match e {
        RunError::Config(c) => eprintln!("{}", c.to_json()),
        other => eprintln!("error: {other}"),
    }
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("SPECRES_THREADS").ok().and_then(|s| s.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let is_all = matches!(cli.cmd, Cmd::All(_));
    let is_run = matches!(cli.cmd, Cmd::Run { .. });
    let (name, common, mut overrides) = resolve(cli.cmd);
    overrides.extend(common.set.iter().cloned());
    let cfg = match config::load(common.config.as_deref(), &overrides) {
        Ok(c) => c,
        Err(e) => return fail(&e.into()),
    };
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.out_dir));

    if is_all {
        let mut summary = serde_json::Map::new();
        let mut code = 0u8;
        for exp in config::EXPERIMENTS {
            match run_one(exp, &cfg, &out.join(exp)) {
                Ok(r) => {
                    print_report(&r);
                    if !r.pass {
                        code = code.max(1);
                    }
                    summary.insert(exp.into(), serde_json::json!({ "pass": r.pass }));
                }
                Err(e) => {
                    eprintln!("{exp}: {e}");
                    code = code.max(e.exit_code() as u8);
                    summary.insert(exp.into(), serde_json::json!({ "pass": false, "error": e.to_string() }));
                }
            }
        }
        let text = serde_json::to_string_pretty(&serde_json::Value::Object(summary)).expect("summary serializes");
        if let Err(e) = std::fs::create_dir_all(&out).and_then(|_| std::fs::write(out.join("summary.json"), text + "\n")) {
            return fail(&e.into());
        }
        return ExitCode::from(code);
    }

    let name = match (name, cfg.experiment.as_deref()) {
        (Some(n), Some(e)) if n != e => {
            let e = ConfigError::new("value", Some("experiment"), format!("configuration is for `{e}`, not `{n}`"));
            return fail(&e.into());
        }
        (Some(n), _) => n.to_string(),
        (None, Some(e)) => e.to_string(),
        (None, None) => {
            debug_assert!(is_run);
            return fail(&ConfigError::new("value", Some("experiment"), "`run` needs `experiment` in the file").into());
        }
    };
    match run_one(&name, &cfg, &out) {
        Ok(r) => {
            print_report(&r);
            ExitCode::from(if r.pass { 0 } else { 1 })
        }
        Err(e) => fail(&e),
    }
}
