//! Experiment configuration: TOML with dotted sections, command-line
//! overrides, validation and the canonical hash.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;
use std::path::Path;

pub const SCHEMA_VERSION: u32 = 1;

pub const EXPERIMENTS: [&str; 8] = [
    "free-oracle",
    "norms",
    "gauge-check",
    "resolvent-sweep",
    "dilation-check",
    "funcalc-check",
    "lowfreq-decay",
    "evolve",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigError {
    pub kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    pub message: String,
}

impl ConfigError {
    pub fn new(kind: &'static str, key: Option<&str>, message: impl Into<String>) -> Self {
        ConfigError { kind, key: key.map(str::to_string), message: message.into() }
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self }).to_string()
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.key {
            Some(k) => write!(f, "{} error at `{k}`: {}", self.kind, self.message),
            None => write!(f, "{} error: {}", self.kind, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    /// used by `run`; must match the subcommand otherwise
    pub experiment: Option<String>,
    pub seed: u64,
    pub out_dir: String,
    pub report: ReportSection,
    pub metric: MetricSection,
    pub grid: GridSection,
    pub free: FreeSection,
    pub norms: NormsSection,
    pub gauge: GaugeSection,
    pub sweep: SweepSection,
    pub dilation: DilationSection,
    pub funcalc: FuncalcSection,
    pub lowfreq: LowfreqSection,
    pub evolve: EvolveSection,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            experiment: None,
            seed: 1,
            out_dir: "specres-out".into(),
            report: ReportSection::default(),
            metric: MetricSection::default(),
            grid: GridSection::default(),
            free: FreeSection::default(),
            norms: NormsSection::default(),
            gauge: GaugeSection::default(),
            sweep: SweepSection::default(),
            dilation: DilationSection::default(),
            funcalc: FuncalcSection::default(),
            lowfreq: LowfreqSection::default(),
            evolve: EvolveSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportSection {
    pub schema_version: u32,
    pub plots: bool,
}

impl Default for ReportSection {
    fn default() -> Self {
        ReportSection { schema_version: SCHEMA_VERSION, plots: true }
    }
}

/// Metric family; unset fields fall back to the experiment's default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricSection {
    pub name: Option<String>,
    pub params: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub dim: Option<usize>,
    pub half_width: Option<f64>,
    pub m: Option<usize>,
    pub bc: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FreeSection {
    pub lmin: f64,
    pub lmax: f64,
    pub points: usize,
    pub rmin: f64,
    pub rmax: f64,
    pub radii: usize,
    pub slope_tol: f64,
    pub match_tol: f64,
}

impl Default for FreeSection {
    fn default() -> Self {
        FreeSection {
            lmin: 1e-4,
            lmax: 1e-1,
            points: 13,
            rmin: 1e-3,
            rmax: 1e3,
            radii: 61,
            slope_tol: 0.005,
            match_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormsSection {
    pub o: usize,
    pub r: usize,
    pub n: usize,
    pub taus: Vec<f64>,
    pub tol: f64,
    pub r_max: f64,
    pub radial_nodes: usize,
    pub angular_nodes: usize,
}

impl Default for NormsSection {
    fn default() -> Self {
        NormsSection {
            o: 0,
            r: 1,
            n: 1,
            taus: vec![1.0, -1.0, 0.5, -0.5],
            tol: 1e-6,
            r_max: 4096.0,
            radial_nodes: 16,
            angular_nodes: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaugeSection {
    pub rays: usize,
    pub samples: usize,
    pub det_tol: f64,
    pub ode_tol: f64,
    pub closed_form_tol: f64,
    /// pure power defect `c|x|^{-rho}` for the closed-form comparison
    pub power_c: f64,
    pub power_rho: f64,
}

impl Default for GaugeSection {
    fn default() -> Self {
        GaugeSection {
            rays: 1000,
            samples: 200,
            det_tol: 1e-6,
            ode_tol: 1e-8,
            closed_form_tol: 1e-9,
            power_c: 0.2,
            power_rho: 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub n: usize,
    pub nu: f64,
    /// unset: `4 λ_box`
    pub lmin: Option<f64>,
    pub lmax: f64,
    pub points: usize,
    /// `ε = |λ| / divisor`
    pub divisors: Vec<f64>,
    /// `positive` or `negative`
    pub side: String,
    /// `bounded`, `slope` or `none`
    pub check: String,
    pub bound_factor: f64,
    pub slope_target: f64,
    pub slope_tol: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            n: 1,
            nu: 3.0,
            lmin: None,
            lmax: 0.5,
            points: 8,
            divisors: vec![2.0, 4.0, 8.0],
            side: "positive".into(),
            check: "bounded".into(),
            bound_factor: 3.0,
            slope_target: -0.5,
            slope_tol: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DilationSection {
    pub kappa: f64,
    /// `[re, im]` pairs
    pub zetas: Vec<[f64; 2]>,
    pub bound_slack: f64,
    pub lp_tol: f64,
    pub sobolev: f64,
    pub intertwining_m: Vec<usize>,
    pub intertwining_half_width: f64,
}

impl Default for DilationSection {
    fn default() -> Self {
        DilationSection {
            kappa: specres::dilation::DEFAULT_KAPPA,
            zetas: vec![[0.3, -1.0], [-0.4, -0.8]],
            bound_slack: 0.05,
            lp_tol: 1e-10,
            sobolev: 2.0,
            intertwining_m: vec![64, 128],
            intertwining_half_width: 8.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FuncalcSection {
    /// `[lo, hi, left, right]` of the band bump
    pub band: [f64; 4],
    /// outer bump for the multiplicativity check
    pub outer: [f64; 4],
    pub deltas: Vec<f64>,
    pub hs_order: usize,
    pub hs_tol: f64,
    pub stone_tol: f64,
    pub order_tol: f64,
    pub mult_tol: f64,
}

impl Default for FuncalcSection {
    fn default() -> Self {
        FuncalcSection {
            band: [1.5, 3.0, 1.0, 1.0],
            outer: [1.0, 4.0, 1.0, 1.0],
            deltas: vec![0.2, 0.1, 0.05, 0.025, 0.0125, 0.00625],
            hs_order: 8,
            hs_tol: 1e-6,
            stone_tol: 1e-4,
            order_tol: 0.2,
            mult_tol: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LowfreqSection {
    pub flavors: Vec<String>,
    pub mass: f64,
    pub nu: f64,
    pub tmin: f64,
    pub tmax: f64,
    pub points: usize,
    pub plateau: f64,
    pub end: f64,
    /// required fraction of the target exponent
    pub rate_fraction: f64,
    pub direct_check: bool,
    pub direct_tol: f64,
}

impl Default for LowfreqSection {
    fn default() -> Self {
        LowfreqSection {
            flavors: ["schrodinger", "halfwave", "cos", "sinc"].iter().map(|s| s.to_string()).collect(),
            mass: 0.5,
            nu: 5.0,
            tmin: 2.4,
            tmax: 24.0,
            points: 16,
            plateau: 0.5,
            end: 1.0,
            rate_fraction: 0.9,
            direct_check: true,
            direct_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvolveSection {
    /// `schrodinger`, `wave` or `klein-gordon`
    pub equation: String,
    pub mass: f64,
    pub nu: f64,
    pub t_max: f64,
    /// unset: 0.01 for Schrödinger, half the stability limit for leapfrog
    pub dt: Option<f64>,
    pub data_width: f64,
    pub plateau: f64,
    pub band_end: f64,
    pub samples: usize,
    pub obs_level: f64,
    pub data_tail: f64,
    pub t_min: f64,
    pub rate_fraction: f64,
    pub drift_tol: f64,
}

impl Default for EvolveSection {
    fn default() -> Self {
        EvolveSection {
            equation: "schrodinger".into(),
            mass: 1.0,
            nu: 5.0,
            t_max: 20.0,
            dt: None,
            data_width: 2.0,
            plateau: 0.5,
            band_end: 1.0,
            samples: 16,
            obs_level: 1e-2,
            data_tail: 1e-2,
            t_min: 1.0,
            rate_fraction: 0.9,
            drift_tol: 1e-8,
        }
    }
}

/// Parses a `key=value` override; the value is read as a TOML literal and
/// falls back to a bare string.
pub fn parse_override(s: &str) -> Result<(String, toml::Value), ConfigError> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| ConfigError::new("override", None, format!("expected KEY=VALUE, got `{s}`")))?;
    let key = k.trim();
    if key.is_empty() || key.split('.').any(|p| p.is_empty()) {
        return Err(ConfigError::new("override", Some(key), "malformed key"));
    }
    let v = v.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {v}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(v.to_string()),
    };
    Ok((key.to_string(), value))
}

pub fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), ConfigError> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = table;
    for (i, p) in parts[..parts.len() - 1].iter().enumerate() {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => {
                return Err(ConfigError::new("override", Some(&parts[..=i].join(".")), "not a section"));
            }
        };
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Reads the file (if any), applies overrides in order and deserializes.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Config, ConfigError> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| ConfigError::new("io", None, format!("{}: {e}", p.display())))?;
            text.parse::<toml::Table>().map_err(|e| ConfigError::new("parse", None, e.message().to_string()))?
        }
        None => toml::Table::new(),
    };
    for o in overrides {
        let (k, v) = parse_override(o)?;
        set_path(&mut table, &k, v)?;
    }
    from_table(table)
}

pub fn from_table(table: toml::Table) -> Result<Config, ConfigError> {
    let cfg: Config = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError::new("schema", None, e.message().to_string()))?;
    if cfg.report.schema_version != SCHEMA_VERSION {
        return Err(ConfigError::new(
            "schema",
            Some("report.schema_version"),
            format!("unsupported version {}, expected {SCHEMA_VERSION}", cfg.report.schema_version),
        ));
    }
    if let Some(e) = &cfg.experiment {
        if !EXPERIMENTS.contains(&e.as_str()) {
            return Err(ConfigError::new("value", Some("experiment"), format!("unknown experiment `{e}`")));
        }
    }
    Ok(cfg)
}

impl Config {
    /// Effective configuration without the output location.
    pub fn canonical(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(m) = v.as_object_mut() {
            m.remove("out_dir");
        }
        v
    }

    /// SHA-256 of the canonical JSON, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_parse_literals_and_strings() {
        assert_eq!(parse_override("grid.m=32").unwrap().1, toml::Value::Integer(32));
        assert_eq!(parse_override("sweep.divisors=[1.0, 2.0]").unwrap().1.as_array().unwrap().len(), 2);
        assert_eq!(parse_override("metric.name=flat").unwrap().1, toml::Value::String("flat".into()));
        assert!(parse_override("novalue").is_err());
        assert!(parse_override("a..b=1").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = load(None, &["grid.mm=3".into()]).unwrap_err();
        assert_eq!(e.kind, "schema");
        assert!(e.message.contains("mm"), "{}", e.message);
    }

    #[test]
    fn schema_version_is_checked() {
        let e = load(None, &["report.schema_version=2".into()]).unwrap_err();
        assert_eq!(e.key.as_deref(), Some("report.schema_version"));
    }

    #[test]
    fn hash_ignores_output_location() {
        let a = load(None, &["out_dir=a".into()]).unwrap();
        let b = load(None, &["out_dir=b".into()]).unwrap();
        let c = load(None, &["seed=2".into()]).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
