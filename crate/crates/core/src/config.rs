//! Declarative run configuration.
//!
//! ```toml
//! schema_version = 1
//!
//! [scenario]
//! e_count = 1000
//! u_count = 10000
//! m = 100
//! big_m = 1
//! alpha = 0.9
//!
//! [run]
//! strategies = ["worst-case", "expected-time"]
//! trials = 100
//! seed = 7
//!
//! [grid]
//! u_count = [10000, 15000, 20000]
//! m = "1:50:901"
//! ```
//!
//! Grid axes accept a list, a single value, or an inclusive
//! `"start:step:end"` range; axes left out fall back to the scenario value.
//! `key=value` overrides address fields by dotted path and are applied to the
//! parsed document before validation.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::EstimatorMode;
use crate::optimizer::{Scenario, Strategy};
use crate::sim::{CoverageLayout, EstimationOptions, ExperimentConfig, Grid, ManualParams};

pub const SCHEMA_VERSION: u32 = 1;

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub schema_version: u32,
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub grid: Option<GridSection>,
    #[serde(default)]
    pub manual: Option<ManualParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub e_count: u64,
    pub u_count: u64,
    /// Defaults to `big_m`.
    #[serde(default)]
    pub m: Option<u64>,
    pub big_m: u64,
    pub alpha: f64,
    #[serde(default = "unit")]
    pub t_r: f64,
    #[serde(default = "unit")]
    pub t_t: f64,
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub strategies: Vec<Strategy>,
    pub trials: u32,
    pub seed: u64,
    pub threads: usize,
    pub enforce: bool,
    pub include_estimation: bool,
    pub estimator: EstimatorMode,
    pub epsilon: f64,
    pub count_estimation_time: bool,
    pub coverage: Option<CoverageLayout>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            strategies: vec![Strategy::ExpectedTime],
            trials: 100,
            seed: 1,
            threads: 0,
            enforce: true,
            include_estimation: false,
            estimator: EstimatorMode::OracleWithError,
            epsilon: 0.1,
            count_estimation_time: false,
            coverage: None,
        }
    }
}

/// One grid axis as written in the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Axis<T> {
    List(Vec<T>),
    Single(T),
    Range(String),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub e_count: Option<Axis<u64>>,
    pub u_count: Option<Axis<u64>>,
    pub m: Option<Axis<u64>>,
    pub big_m: Option<Axis<u64>>,
    pub alpha: Option<Axis<f64>>,
}

/// Expands an inclusive `start:step:end` range.
pub fn parse_range<T>(text: &str) -> Result<Vec<T>>
where
    T: FromStr + Copy + PartialOrd + std::ops::Add<Output = T> + Default,
{
    let parts: Vec<&str> = text.split(':').map(str::trim).collect();
    let [a, s, b] = parts[..] else {
        return Err(cfg_err(format!("range {text:?} is not start:step:end")));
    };
    let parse = |v: &str| v.parse::<T>().map_err(|_| cfg_err(format!("bad number {v:?} in range {text:?}")));
    let (start, step, end) = (parse(a)?, parse(s)?, parse(b)?);
    if step.partial_cmp(&T::default()) != Some(std::cmp::Ordering::Greater) {
        return Err(cfg_err(format!("range {text:?} needs a positive step")));
    }
    if start > end {
        return Err(cfg_err(format!("range {text:?} is empty")));
    }
    let mut out = Vec::new();
    let mut v = start;
    while v <= end {
        out.push(v);
        if out.len() > 1_000_000 {
            return Err(cfg_err(format!("range {text:?} has too many points")));
        }
        v = v + step;
    }
    Ok(out)
}

impl<T> Axis<T>
where
    T: FromStr + Copy + PartialOrd + std::ops::Add<Output = T> + Default,
{
    pub fn values(&self) -> Result<Vec<T>> {
        let v = match self {
            Axis::List(v) => v.clone(),
            Axis::Single(x) => vec![*x],
            Axis::Range(r) => parse_range(r)?,
        };
        if v.is_empty() {
            return Err(cfg_err("grid axis is empty"));
        }
        Ok(v)
    }
}

fn axis_or<T>(axis: &Option<Axis<T>>, fallback: T) -> Result<Vec<T>>
where
    T: FromStr + Copy + PartialOrd + std::ops::Add<Output = T> + Default,
{
    axis.as_ref().map_or(Ok(vec![fallback]), Axis::values)
}

impl Config {
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| cfg_err(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Config = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| cfg_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(cfg_err(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.scenario()
            .validate()
            .map_err(|e| cfg_err(format!("scenario: {e}")))?;
        self.experiment()?.validate()
    }

    pub fn scenario(&self) -> Scenario {
        let s = &self.scenario;
        Scenario {
            e_count: s.e_count,
            u_count: s.u_count,
            m: s.m.unwrap_or(s.big_m),
            big_m: s.big_m,
            alpha: s.alpha,
            t_r: s.t_r,
            t_t: s.t_t,
        }
    }

    pub fn grid(&self) -> Result<Grid> {
        let s = self.scenario();
        let g = self.grid.clone().unwrap_or_default();
        Ok(Grid {
            e_count: axis_or(&g.e_count, s.e_count)?,
            u_count: axis_or(&g.u_count, s.u_count)?,
            m: axis_or(&g.m, s.m)?,
            big_m: axis_or(&g.big_m, s.big_m)?,
            alpha: axis_or(&g.alpha, s.alpha)?,
        })
    }

    pub fn experiment(&self) -> Result<ExperimentConfig> {
        let r = &self.run;
        let mut cfg = ExperimentConfig::new(self.grid()?, r.strategies.clone(), r.trials, r.seed);
        cfg.t_r = self.scenario.t_r;
        cfg.t_t = self.scenario.t_t;
        cfg.threads = r.threads;
        cfg.no_enforce = !r.enforce;
        cfg.coverage = r.coverage;
        cfg.manual = self.manual.clone();
        if r.include_estimation {
            cfg.estimation = Some(EstimationOptions {
                mode: r.estimator,
                epsilon: r.epsilon,
                count_time: r.count_estimation_time,
            });
        }
        Ok(cfg)
    }
}

/// Applies one `dotted.key=value` override. The value is read as a TOML
/// value when possible and as a bare string otherwise.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| cfg_err(format!("override {spec:?} is not key=value")))?;
    let key = key.trim();
    let path: Vec<&str> = key.split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(cfg_err(format!("override key {key:?} is malformed")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));

    let (last, parents) = path.split_last().expect("nonempty path");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => return Err(cfg_err(format!("override {key:?}: {p:?} is not a table"))),
        };
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
schema_version = 1
[scenario]
e_count = 1000
u_count = 10000
big_m = 1
alpha = 0.9
"#;

    #[test]
    fn defaults_fill_in() {
        let c = Config::parse(BASE, &[]).unwrap();
        let s = c.scenario();
        assert_eq!((s.m, s.t_r, s.t_t), (1, 1.0, 1.0));
        assert_eq!(c.run.trials, 100);
        assert_eq!(c.grid().unwrap().points(1.0, 1.0).len(), 1);
    }

    #[test]
    fn range_axis() {
        let v: Vec<u64> = parse_range("1:50:901").unwrap();
        assert_eq!(v.len(), 19);
        assert_eq!((v[0], v[18]), (1, 901));
        assert!(parse_range::<u64>("1:0:5").is_err());
        assert!(parse_range::<u64>("5:1:1").is_err());
        assert!(parse_range::<u64>("1:2").is_err());
        let a: Vec<f64> = parse_range("0.5:0.25:1.0").unwrap();
        assert_eq!(a, vec![0.5, 0.75, 1.0]);
    }

    #[test]
    fn grid_section_forms() {
        let text = format!("{BASE}[grid]\nu_count = [1, 2]\nm = \"1:50:901\"\nalpha = 0.99\n");
        let g = Config::parse(&text, &[]).unwrap().grid().unwrap();
        assert_eq!(g.u_count, vec![1, 2]);
        assert_eq!(g.m.len(), 19);
        assert_eq!(g.alpha, vec![0.99]);
    }

    #[test]
    fn unknown_and_missing_keys_rejected() {
        assert!(Config::parse(&format!("{BASE}bogus = 1\n"), &[]).is_err());
        assert!(Config::parse(&BASE.replace("alpha = 0.9\n", ""), &[]).is_err());
        assert!(Config::parse(&BASE.replace("schema_version = 1", "schema_version = 2"), &[]).is_err());
        assert!(Config::parse(&format!("{BASE}[run]\ntrials = 0\n"), &[]).is_err());
    }

    #[test]
    fn overrides_apply() {
        let c = Config::parse(
            BASE,
            &[
                "run.trials=7".into(),
                "scenario.alpha=0.99".into(),
                "run.strategies=[\"worst-case\"]".into(),
                "grid.m=1:50:101".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.run.trials, 7);
        assert_eq!(c.scenario.alpha, 0.99);
        assert_eq!(c.run.strategies, vec![Strategy::WorstCase]);
        assert_eq!(c.grid().unwrap().m, vec![1, 51, 101]);
        assert!(Config::parse(BASE, &["noequals".into()]).is_err());
        assert!(Config::parse(BASE, &["scenario.alpha.x=1".into()]).is_err());
        assert!(Config::parse(BASE, &["run..trials=1".into()]).is_err());
    }
}
