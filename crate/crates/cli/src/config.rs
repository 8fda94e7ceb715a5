//! Flat `section.key = value` run configuration.

use std::collections::BTreeMap;
use std::path::PathBuf;

use ipde_hjb::analysis::params::ParameterCase;
use ipde_hjb::analysis::pipeline::{SolverKind, SolverOptions};
use ipde_hjb::analysis::presets::Preset;
use ipde_hjb::control_problem::EquationForm;
use ipde_hjb::levy_measure::BuiltinModel;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("{key} {msg}")]
    Key { key: String, msg: String },
}

fn key_err(key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Key {
        key: key.to_string(),
        msg: msg.into(),
    }
}

/// Coefficient tables of an affine field: `constant + sum_a x_a linear[a]`,
/// entries in row-major order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AffineTable {
    pub constant: Vec<f64>,
    pub linear: Vec<Vec<f64>>,
}

impl AffineTable {
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.constant.clone();
        for (a, lin) in self.linear.iter().enumerate() {
            if lin.is_empty() {
                continue;
            }
            for (o, l) in out.iter_mut().zip(lin) {
                *o += x[a] * l;
            }
        }
        out
    }
}

/// Per-control tables for one coefficient field.
pub type FieldTables = Vec<AffineTable>;

#[derive(Debug, Clone, PartialEq)]
pub struct AffineProblem {
    pub dim: usize,
    pub noise_dim: usize,
    pub controls: usize,
    pub form: EquationForm,
    pub sigma: FieldTables,
    pub drift: FieldTables,
    pub discount: FieldTables,
    pub source: FieldTables,
    pub eta1: FieldTables,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProblemSource {
    Preset(Preset),
    Affine(AffineProblem),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasureConfig {
    pub model: BuiltinModel,
    pub params: Vec<f64>,
}

/// Explicit values override the automatic coupling field by field.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizationConfig {
    pub auto: bool,
    pub case: Option<ParameterCase>,
    pub h: Option<f64>,
    pub k: Option<f64>,
    pub dz: Option<f64>,
    pub r: Option<f64>,
    pub big_r: Option<f64>,
    pub cells: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub problem: ProblemSource,
    pub measure: Option<MeasureConfig>,
    pub discretization: DiscretizationConfig,
    pub domain: Option<(Vec<f64>, Vec<f64>)>,
    pub solver: SolverOptions,
    pub study_h: Option<Vec<f64>>,
    pub out_dir: Option<PathBuf>,
    /// Write measured seconds into the study CSV; off keeps output byte-reproducible.
    pub timing: bool,
    /// Every `key = value` pair as given.
    pub entries: BTreeMap<String, String>,
}

const FIELDS: [&str; 5] = ["sigma", "drift", "discount", "source", "eta1"];

const SCALAR_KEYS: &[&str] = &[
    "problem.preset",
    "problem.dim",
    "problem.noise_dim",
    "problem.controls",
    "problem.form",
    "measure.model",
    "measure.params",
    "measure.r",
    "measure.R",
    "discretization.auto",
    "discretization.case",
    "discretization.h",
    "discretization.k",
    "discretization.dz",
    "discretization.cells",
    "domain.lo",
    "domain.hi",
    "solver.kind",
    "solver.tol",
    "solver.max_iter",
    "study.h_list",
    "output.dir",
    "output.timing",
];

/// Accepts `problem.<field>.<v>` and `problem.<field>.<v>.x<a>`.
fn is_table_key(key: &str) -> bool {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.len() < 3 || parts.len() > 4 || parts[0] != "problem" || !FIELDS.contains(&parts[1]) {
        return false;
    }
    if parts[2].parse::<usize>().is_err() {
        return false;
    }
    parts.len() == 3 || parts[3].strip_prefix('x').is_some_and(|a| a.parse::<usize>().is_ok())
}

/// Splits lines into `key = value` pairs; `#` starts a comment.
pub fn parse_entries(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(ConfigError::Syntax {
                line: i + 1,
                msg: format!("expected `key = value`, got `{line}`"),
            });
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(ConfigError::Syntax {
                line: i + 1,
                msg: "empty key".into(),
            });
        }
        if !SCALAR_KEYS.contains(&k) && !is_table_key(k) {
            return Err(key_err(k, "is not a recognized key"));
        }
        if map.insert(k.to_string(), v.to_string()).is_some() {
            return Err(key_err(k, "is given twice"));
        }
    }
    Ok(map)
}

struct Reader<'a> {
    map: &'a BTreeMap<String, String>,
}

impl Reader<'_> {
    fn str(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|s| s.as_str())
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, what: &str) -> Result<Option<T>, ConfigError> {
        match self.str(key) {
            None => Ok(None),
            Some(s) => s.parse().map(Some).map_err(|_| key_err(key, format!("must be {what}, got `{s}`"))),
        }
    }

    fn real(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        let v: Option<f64> = self.parse(key, "a number")?;
        if let Some(x) = v {
            if !x.is_finite() {
                return Err(key_err(key, "must be finite"));
            }
        }
        Ok(v)
    }

    fn positive(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        let v = self.real(key)?;
        if let Some(x) = v {
            if !(x > 0.0) {
                return Err(key_err(key, "must be positive"));
            }
        }
        Ok(v)
    }

    fn list(&self, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        match self.str(key) {
            None => Ok(None),
            Some(s) => s
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|t| !t.is_empty())
                .map(|t| {
                    t.parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| key_err(key, format!("must be a list of numbers, got `{t}`")))
                })
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
        }
    }

    fn count(&self, key: &str) -> Result<Option<usize>, ConfigError> {
        let v: Option<usize> = self.parse(key, "a positive integer")?;
        if v == Some(0) {
            return Err(key_err(key, "must be a positive integer"));
        }
        Ok(v)
    }

    fn bool(&self, key: &str) -> Result<Option<bool>, ConfigError> {
        self.parse(key, "true or false")
    }
}

fn parse_form(key: &str, s: &str) -> Result<EquationForm, ConfigError> {
    match s {
        "F" | "f" => Ok(EquationForm::F),
        "J" | "j" => Ok(EquationForm::J),
        _ => Err(key_err(key, format!("must be F or J, got `{s}`"))),
    }
}

fn tables(r: &Reader, field: &str, dim: usize, controls: usize, len: usize) -> Result<FieldTables, ConfigError> {
    let mut out = Vec::new();
    for v in 0..controls {
        let key = format!("problem.{field}.{v}");
        let constant = r.list(&key)?.unwrap_or_else(|| vec![0.0; len]);
        if constant.len() != len {
            return Err(key_err(&key, format!("must have {len} entries, got {}", constant.len())));
        }
        let mut linear = vec![Vec::new(); dim];
        for (a, slot) in linear.iter_mut().enumerate() {
            let lk = format!("{key}.x{a}");
            if let Some(l) = r.list(&lk)? {
                if l.len() != len {
                    return Err(key_err(&lk, format!("must have {len} entries, got {}", l.len())));
                }
                *slot = l;
            }
        }
        out.push(AffineTable { constant, linear });
    }
    for k in r.map.keys().filter(|k| k.starts_with(&format!("problem.{field}."))) {
        let parts: Vec<&str> = k.split('.').collect();
        let v: usize = parts[2].parse().unwrap_or(usize::MAX);
        if v >= controls {
            return Err(key_err(k, format!("refers to control {v}, but problem.controls = {controls}")));
        }
        if let Some(a) = parts.get(3).and_then(|p| p[1..].parse::<usize>().ok()) {
            if a >= dim {
                return Err(key_err(k, format!("refers to coordinate {a}, but problem.dim = {dim}")));
            }
        }
    }
    Ok(out)
}

impl RunConfig {
    #[cfg(test)]
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let entries = parse_entries(text)?;
        Self::from_entries(entries)
    }

    pub fn from_entries(entries: BTreeMap<String, String>) -> Result<Self, ConfigError> {
        let r = Reader { map: &entries };
        let measure = match r.str("measure.model") {
            None | Some("none") => {
                if entries.contains_key("measure.params") {
                    return Err(key_err("measure.params", "needs measure.model"));
                }
                None
            }
            Some(name) => {
                let model: BuiltinModel = name
                    .parse()
                    .map_err(|_| key_err("measure.model", format!("unknown model `{name}`")))?;
                let params = r
                    .list("measure.params")?
                    .ok_or_else(|| key_err("measure.params", "is required with measure.model"))?;
                Some(MeasureConfig { model, params })
            }
        };

        let table_keys = entries.keys().any(|k| is_table_key(k));
        let problem = match r.str("problem.preset") {
            Some(name) => {
                let preset: Preset = name
                    .parse()
                    .map_err(|_| key_err("problem.preset", format!("unknown preset `{name}`")))?;
                for k in ["problem.dim", "problem.noise_dim", "problem.controls", "problem.form", "measure.model"] {
                    if entries.contains_key(k) {
                        return Err(key_err(k, "cannot be combined with problem.preset"));
                    }
                }
                if table_keys {
                    return Err(key_err("problem.preset", "cannot be combined with coefficient tables"));
                }
                ProblemSource::Preset(preset)
            }
            None => {
                let dim = r
                    .count("problem.dim")?
                    .ok_or_else(|| key_err("problem.dim", "is required without problem.preset"))?;
                if dim > 2 {
                    return Err(key_err("problem.dim", "must be 1 or 2"));
                }
                let noise_dim = r.count("problem.noise_dim")?.unwrap_or(dim);
                let controls = r.count("problem.controls")?.unwrap_or(1);
                let form = match r.str("problem.form") {
                    Some(s) => parse_form("problem.form", s)?,
                    None => EquationForm::F,
                };
                let discount = tables(&r, "discount", dim, controls, 1)?;
                if !entries.keys().any(|k| k.starts_with("problem.discount.")) {
                    return Err(key_err("problem.discount.0", "is required (the discount must be positive)"));
                }
                ProblemSource::Affine(AffineProblem {
                    dim,
                    noise_dim,
                    controls,
                    form,
                    sigma: tables(&r, "sigma", dim, controls, dim * noise_dim)?,
                    drift: tables(&r, "drift", dim, controls, dim)?,
                    discount,
                    source: tables(&r, "source", dim, controls, 1)?,
                    eta1: tables(&r, "eta1", dim, controls, dim)?,
                })
            }
        };
        if matches!(problem, ProblemSource::Preset(_)) && measure.is_some() {
            return Err(key_err("measure.model", "cannot be combined with problem.preset"));
        }

        let case = match r.str("discretization.case") {
            None => None,
            Some(s) => Some(s.parse::<ParameterCase>().map_err(|e| key_err("discretization.case", e))?),
        };
        let cells = match r.list("discretization.cells")? {
            None => None,
            Some(v) => {
                if v.iter().any(|c| !(*c >= 1.0) || c.fract() != 0.0) {
                    return Err(key_err("discretization.cells", "must be positive integers"));
                }
                Some(v.into_iter().map(|c| c as usize).collect())
            }
        };
        let r_inner = r.real("measure.r")?;
        if r_inner.is_some_and(|x| x < 0.0) {
            return Err(key_err("measure.r", "must be nonnegative"));
        }
        let discretization = DiscretizationConfig {
            auto: r.bool("discretization.auto")?.unwrap_or(true),
            case,
            h: r.positive("discretization.h")?,
            k: r.positive("discretization.k")?,
            dz: r.positive("discretization.dz")?,
            r: r_inner,
            big_r: r.positive("measure.R")?,
            cells,
        };
        if discretization.h.is_some_and(|h| h > 1.0) {
            return Err(key_err("discretization.h", "must not exceed 1"));
        }

        let domain = match (r.list("domain.lo")?, r.list("domain.hi")?) {
            (None, None) => None,
            (Some(lo), Some(hi)) => {
                if lo.len() != hi.len() || lo.iter().zip(&hi).any(|(a, b)| !(a < b)) {
                    return Err(key_err("domain.hi", "must exceed domain.lo componentwise"));
                }
                Some((lo, hi))
            }
            (Some(_), None) => return Err(key_err("domain.hi", "is required with domain.lo")),
            (None, Some(_)) => return Err(key_err("domain.lo", "is required with domain.hi")),
        };

        let mut solver = SolverOptions::default();
        if let Some(s) = r.str("solver.kind") {
            solver.kind = s.parse::<SolverKind>().map_err(|e| key_err("solver.kind", e))?;
        }
        if let Some(t) = r.positive("solver.tol")? {
            solver.tol = t;
        }
        if let Some(m) = r.count("solver.max_iter")? {
            solver.max_iter = m;
        }
        let study_h = r.list("study.h_list")?;
        if let Some(h) = &study_h {
            if h.len() < 2 || h.iter().any(|x| !(*x > 0.0 && *x <= 1.0)) || h.windows(2).any(|w| !(w[1] < w[0])) {
                return Err(key_err("study.h_list", "must be strictly decreasing values in (0, 1]"));
            }
        }
        Ok(Self {
            problem,
            measure,
            discretization,
            domain,
            solver,
            study_h,
            out_dir: r.str("output.dir").map(PathBuf::from),
            timing: r.bool("output.timing")?.unwrap_or(false),
            entries,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_config() {
        let c = RunConfig::parse("problem.preset = constant  # the closed-form case\ndiscretization.h = 0.1\n").unwrap();
        assert_eq!(c.problem, ProblemSource::Preset(Preset::Constant));
        assert_eq!(c.discretization.h, Some(0.1));
        assert!(c.discretization.auto);
    }

    #[test]
    fn negative_h_names_the_key() {
        let e = RunConfig::parse("problem.preset = constant\ndiscretization.h = -0.1\n").unwrap_err();
        assert_eq!(e.to_string(), "discretization.h must be positive");
    }

    #[test]
    fn unknown_and_duplicate_keys() {
        assert_eq!(
            RunConfig::parse("solver.tolerance = 1").unwrap_err().to_string(),
            "solver.tolerance is not a recognized key"
        );
        assert!(RunConfig::parse("solver.tol = 1\nsolver.tol = 2").unwrap_err().to_string().contains("twice"));
        assert!(matches!(RunConfig::parse("no equals sign"), Err(ConfigError::Syntax { line: 1, .. })));
    }

    #[test]
    fn affine_tables() {
        let text = "problem.dim = 1\nproblem.controls = 2\nproblem.discount.0 = 1.0\nproblem.discount.1 = 2\n\
                    problem.drift.1 = 0.5\nproblem.drift.1.x0 = -0.25\nmeasure.model = merton\nmeasure.params = 1 0.3 0\n";
        let c = RunConfig::parse(text).unwrap();
        let ProblemSource::Affine(p) = &c.problem else { panic!() };
        assert_eq!(p.drift[1].eval(&[2.0]), vec![0.0]);
        assert_eq!(p.drift[0].eval(&[2.0]), vec![0.0]);
        assert_eq!(p.discount[1].eval(&[0.3]), vec![2.0]);
        assert_eq!(c.measure.as_ref().unwrap().params, vec![1.0, 0.3, 0.0]);
        let bad = text.replace("problem.drift.1 = 0.5", "problem.drift.2 = 0.5");
        assert!(RunConfig::parse(&bad).unwrap_err().to_string().starts_with("problem.drift.2"));
    }

    #[test]
    fn affine_requires_discount() {
        let e = RunConfig::parse("problem.dim = 1\n").unwrap_err();
        assert!(e.to_string().starts_with("problem.discount.0"));
    }

    #[test]
    fn preset_rejects_problem_keys() {
        let e = RunConfig::parse("problem.preset = constant\nproblem.dim = 1").unwrap_err();
        assert_eq!(e.to_string(), "problem.dim cannot be combined with problem.preset");
    }
}
