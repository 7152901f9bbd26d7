use specres_cli::config::Config;
use specres_cli::report::{Report, Table};
use std::path::Path;
use std::process::{Command, Output};

fn specres(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_specres")).args(args).output().expect("binary runs")
}

fn out_arg(dir: &Path) -> String {
    dir.to_str().unwrap().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn free_oracle_passes_and_writes_files() {
    let dir = tempfile::tempdir().unwrap();
    let o = specres(&["free-oracle", "--out", &out_arg(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["report.json", "free_kernel.csv", "free_kernel.svg", "timing.json"] {
        assert!(dir.path().join(f).exists(), "missing {f}");
    }
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.lines().all(|l| l.contains("PASS")), "{stdout}");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["pass"], true);
    let csv = std::fs::read_to_string(dir.path().join("free_kernel.csv")).unwrap();
    let hash = report["config_hash"].as_str().unwrap();
    assert!(csv.starts_with(&format!("# schema_version=1 config_sha256={hash}\n")));
}

#[test]
fn failing_check_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = specres(&["free-oracle", "--set", "free.match_tol=1e-30", "--out", &out_arg(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["gauge-check", "--set", "gauge.rays=40", "--set", "gauge.samples=20", "--seed", "7"];
    for d in [a.path(), b.path()] {
        let mut v: Vec<&str> = args.to_vec();
        let out = out_arg(d);
        v.extend(["--out", &out]);
        let o = specres(&v);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let mut names: Vec<String> = std::fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != "timing.json")
        .collect();
    names.sort();
    assert!(names.len() >= 3, "{names:?}");
    for n in &names {
        let x = std::fs::read(a.path().join(n)).unwrap();
        let y = std::fs::read(b.path().join(n)).unwrap();
        assert!(x == y, "{n} differs between runs");
    }
}

#[test]
fn malformed_config_exits_two_with_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[grid\nm = 3").unwrap();
    let o = specres(&["norms", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let v: serde_json::Value = serde_json::from_str(stderr(&o).trim()).unwrap();
    assert_eq!(v["error"]["kind"], "parse");
}

#[test]
fn unknown_key_and_bad_values_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = out_arg(dir.path());
    let o = specres(&["free-oracle", "--set", "free.lmn=1", "--out", &out]);
    assert_eq!(o.status.code(), Some(2));
    let o = specres(&["resolvent-sweep", "--set", "sweep.side=sideways", "--set", "grid.m=8", "--out", &out]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(stderr(&o).trim()).unwrap();
    assert_eq!(v["error"]["key"], "sweep.side");
}

#[test]
fn run_reads_experiment_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(&cfg, "experiment = \"free-oracle\"\n\n[free]\npoints = 7\n").unwrap();
    let out = dir.path().join("out");
    let o = specres(&["run", cfg.to_str().unwrap(), "--out", &out_arg(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("free_kernel.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2 + 7);

    let o = specres(&["norms", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_writes_a_plot_per_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = specres(&[
        "resolvent-sweep",
        "--set",
        "grid.m=12",
        "--set",
        "grid.half_width=6.0",
        "--set",
        "sweep.lmax=2.0",
        "--set",
        "sweep.points=6",
        "--set",
        "sweep.divisors=[2.0, 4.0]",
        "--set",
        "sweep.check=\"none\"",
        "--out",
        &out_arg(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let svg = std::fs::read_to_string(dir.path().join("sweep_n1_nu3.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 2);
    assert_eq!(svg.matches("<circle").count(), 12);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["fits"].as_array().unwrap().len(), 2);
}

#[test]
fn empty_table_warns_and_skips_plot() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = Report::new("x", &Config::default());
    r.tables.push(Table::new("empty", &["a", "b"]).with_plot("a", "b", None, "nothing"));
    let files = r.write(dir.path(), true).unwrap();
    assert!(!dir.path().join("empty.svg").exists());
    assert!(dir.path().join("empty.csv").exists());
    assert_eq!(files.len(), 2);
    assert_eq!(r.warnings.len(), 1);
    assert!(r.warnings[0].contains("empty"));
}

#[test]
fn wave_evolution_conserves_energy() {
    let dir = tempfile::tempdir().unwrap();
    let o = specres(&[
        "evolve",
        "--flavor",
        "wave",
        "--T",
        "4",
        "--set",
        "grid.m=16",
        "--set",
        "grid.half_width=8.0",
        "--set",
        "evolve.samples=6",
        "--out",
        &out_arg(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("energy_drift"));
}

#[test]
fn gauge_check_on_flat_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let o = specres(&["gauge-check", "--metric", "flat", "--set", "gauge.rays=100", "--out", &out_arg(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    for c in report["checks"].as_array().unwrap() {
        assert!(c["value"].as_f64().unwrap() <= 1e-12, "{c}");
    }
}
