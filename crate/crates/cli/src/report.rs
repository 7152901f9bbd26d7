//! Experiment reports and their JSON / CSV / SVG files.

use crate::config::{Config, SCHEMA_VERSION};
use crate::plot;
use serde::Serialize;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Cell {
    Int(i64),
    Num(f64),
    Text(String),
}

impl Cell {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Int(v) => Some(*v as f64),
            Cell::Num(v) => Some(*v),
            Cell::Text(_) => None,
        }
    }

    fn csv(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Num(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }

    fn label(&self) -> String {
        match self {
            Cell::Num(v) => format!("{v}"),
            other => other.csv(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

/// Log-log plot of column `y` against column `x`, one line per distinct
/// value of `series`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotSpec {
    pub x: String,
    pub y: String,
    pub series: Option<String>,
    pub title: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    #[serde(skip)]
    pub plot: Option<PlotSpec>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Table { name: name.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new(), plot: None }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width of table {}", self.name);
        self.rows.push(row);
    }

    pub fn with_plot(mut self, x: &str, y: &str, series: Option<&str>, title: &str) -> Self {
        self.plot = Some(PlotSpec { x: x.into(), y: y.into(), series: series.map(String::from), title: title.into() });
        self
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Plot series as `(label, points)`, keeping rows in order and
    /// dropping points that cannot go on log axes.
    pub fn series(&self, spec: &PlotSpec) -> Vec<(String, Vec<(f64, f64)>)> {
        let (Some(xi), Some(yi)) = (self.column(&spec.x), self.column(&spec.y)) else {
            return Vec::new();
        };
        let si = spec.series.as_deref().and_then(|s| self.column(s));
        let mut out: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
        for row in &self.rows {
            let label = si.map(|i| row[i].label()).unwrap_or_else(|| spec.y.clone());
            let (Some(x), Some(y)) = (row[xi].as_f64(), row[yi].as_f64()) else { continue };
            let x = x.abs();
            if !(x > 0.0 && y > 0.0 && x.is_finite() && y.is_finite()) {
                continue;
            }
            match out.iter_mut().find(|(l, _)| *l == label) {
                Some((_, pts)) => pts.push((x, y)),
                None => out.push((label, vec![(x, y)])),
            }
        }
        out.retain(|(_, p)| !p.is_empty());
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fit {
    pub name: String,
    pub slope: f64,
    pub ci: [f64; 2],
    pub points: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub experiment: String,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub info: BTreeMap<String, f64>,
    pub tables: Vec<Table>,
    pub fits: Vec<Fit>,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
    pub pass: bool,
}

impl Report {
    pub fn new(experiment: &str, cfg: &Config) -> Self {
        Report {
            schema_version: SCHEMA_VERSION,
            experiment: experiment.into(),
            config_hash: cfg.hash(),
            config: cfg.canonical(),
            info: BTreeMap::new(),
            tables: Vec::new(),
            fits: Vec::new(),
            checks: Vec::new(),
            warnings: Vec::new(),
            pass: true,
        }
    }

    pub fn info(&mut self, key: &str, value: f64) {
        self.info.insert(key.into(), value);
    }

    pub fn fit(&mut self, name: &str, slope: f64, ci: (f64, f64), points: usize, window: Option<(f64, f64)>) {
        self.fits.push(Fit { name: name.into(), slope, ci: [ci.0, ci.1], points, window: window.map(|w| [w.0, w.1]) });
    }

    /// Records `min ≤ value ≤ max`; a NaN value fails.
    pub fn check(&mut self, name: &str, value: f64, min: Option<f64>, max: Option<f64>) -> bool {
        assert!(!self.checks.iter().any(|c| c.name == name), "duplicate check {name}");
        let pass = !value.is_nan() && min.map_or(true, |m| value >= m) && max.map_or(true, |m| value <= m);
        self.checks.push(Check { name: name.into(), value, min, max, pass });
        self.pass &= pass;
        pass
    }

    pub fn at_most(&mut self, name: &str, value: f64, max: f64) -> bool {
        self.check(name, value, None, Some(max))
    }

    pub fn at_least(&mut self, name: &str, value: f64, min: f64) -> bool {
        self.check(name, value, Some(min), None)
    }

    /// Writes `report.json`, one CSV per table and the requested plots
    /// into `dir`; returns the files written.
    pub fn write(&mut self, dir: &Path, plots: bool) -> std::io::Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut files = Vec::new();
        for t in &self.tables {
            if t.rows.is_empty() {
                self.warnings.push(format!("table `{}` is empty; no plot written", t.name));
            }
        }
        if plots {
            for t in &self.tables {
                let Some(spec) = &t.plot else { continue };
                if t.rows.is_empty() {
                    continue;
                }
                let series = t.series(spec);
                if series.is_empty() {
                    self.warnings.push(format!("table `{}` has no positive points; no plot written", t.name));
                    continue;
                }
                let path = dir.join(format!("{}.svg", t.name));
                std::fs::write(&path, plot::loglog_svg(spec, &series, &self.config_hash))?;
                files.push(path);
            }
        }
        for t in &self.tables {
            let path = dir.join(format!("{}.csv", t.name));
            write_csv(&path, t, &self.config_hash)?;
            files.push(path);
        }
        let path = dir.join("report.json");
        let mut text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        text.push('\n');
        std::fs::write(&path, text)?;
        files.push(path);
        Ok(files)
    }
}

fn write_csv(path: &Path, t: &Table, hash: &str) -> std::io::Result<()> {
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "# schema_version={SCHEMA_VERSION} config_sha256={hash}")?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(&t.columns)?;
    for row in &t.rows {
        w.write_record(row.iter().map(Cell::csv))?;
    }
    w.flush()
}

/// Wall-clock and thread count, kept out of the reproducible files.
pub fn write_timing(dir: &Path, seconds: f64) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let v = serde_json::json!({ "wall_clock_seconds": seconds, "threads": rayon::current_num_threads() });
    std::fs::write(dir.join("timing.json"), format!("{v}\n"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checks_combine_bounds() {
        let cfg = Config::default();
        let mut r = Report::new("x", &cfg);
        assert!(r.check("within", -0.45, Some(-0.65), Some(-0.35)));
        assert!(r.pass);
        assert!(!r.at_most("nan", f64::NAN, 1.0));
        assert!(!r.pass);
    }

    #[test]
    fn series_split_and_filter() {
        let mut t = Table::new("t", &["x", "y", "s"]).with_plot("x", "y", Some("s"), "t");
        t.push(vec![1.0.into(), 2.0.into(), "a".into()]);
        t.push(vec![2.0.into(), 0.0.into(), "a".into()]);
        t.push(vec![(-3.0).into(), 1.0.into(), "b".into()]);
        let s = t.series(t.plot.as_ref().unwrap());
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].1, vec![(1.0, 2.0)]);
        assert_eq!(s[1].1, vec![(3.0, 1.0)]);
    }
}
