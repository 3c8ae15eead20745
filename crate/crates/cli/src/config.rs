//! Flat `key = value` experiment configuration.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: expected key = value, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("key {key:?}: cannot parse {value:?} ({reason})")]
    BadValue { key: String, value: String, reason: String },
    #[error("key {key:?}: {reason}")]
    Invalid { key: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Problem {
    Laplacian { h: Option<f64> },
    Synthetic { kappa: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreeShape {
    Linear,
    Balanced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rhs {
    Ones,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleKind {
    Exponential,
    Algebraic { p: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SolverKind {
    St,
    Ie,
    Apriori {
        schedule: ScheduleKind,
        rho_tilde: f64,
        c0: Option<f64>,
        steps: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReferenceKind {
    Dense,
    /// Exponential sum with a fixed term count, or one chosen for `expsum_tol`.
    Expsum {
        terms: Option<usize>,
        tol: f64,
    },
    None,
}

/// Overrides of the default solver constants.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Constants {
    pub theta: Option<f64>,
    pub omega: Option<f64>,
    pub nu: Option<f64>,
    pub tau1: Option<f64>,
    pub tau2: Option<f64>,
    pub alpha0_factor: Option<f64>,
    pub alpha0: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub problem: Problem,
    pub d: usize,
    pub n: usize,
    pub tree: TreeShape,
    pub rhs: Rhs,
    pub solver: SolverKind,
    pub epsilon: f64,
    pub constants: Constants,
    pub reference: ReferenceKind,
    pub seed: u64,
    pub max_iter: usize,
    /// Fill the `wall_ms` column. Off by default so reruns are byte-identical.
    pub timing: bool,
    pub out_path: Option<PathBuf>,
}

pub const KEYS: &[&str] = &[
    "problem",
    "d",
    "n",
    "h",
    "kappa",
    "tree",
    "rhs",
    "solver",
    "schedule",
    "p",
    "rho_tilde",
    "c0",
    "steps",
    "epsilon",
    "theta",
    "omega",
    "nu",
    "tau1",
    "tau2",
    "alpha0_factor",
    "alpha0",
    "reference",
    "expsum_terms",
    "expsum_tol",
    "seed",
    "max_iter",
    "timing",
    "out_path",
];

/// Raw key/value pairs in file order, later entries winning.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut raw = RawConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line: i + 1,
                    text: line.to_string(),
                });
            };
            raw.set(k.trim(), v.trim())?;
        }
        Ok(raw)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        if !KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey(key.to_string()));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (k, v) = assignment.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: 0,
            text: assignment.to_string(),
        })?;
        self.set(k.trim(), v.trim())
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.values
            .get(key)
            .map(|v| {
                v.parse::<T>().map_err(|e| ConfigError::BadValue {
                    key: key.to_string(),
                    value: v.clone(),
                    reason: e.to_string(),
                })
            })
            .transpose()
    }

    fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    fn require<T: FromStr>(&self, key: &str) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)?.ok_or_else(|| ConfigError::Invalid {
            key: key.to_string(),
            reason: "missing".into(),
        })
    }

    fn choice(&self, key: &str, default: &str, allowed: &[&str]) -> Result<String, ConfigError> {
        let v = self.values.get(key).map(String::as_str).unwrap_or(default);
        if allowed.contains(&v) {
            Ok(v.to_string())
        } else {
            Err(ConfigError::BadValue {
                key: key.to_string(),
                value: v.to_string(),
                reason: format!("expected one of {}", allowed.join(", ")),
            })
        }
    }

    pub fn resolve(&self) -> Result<ExperimentConfig, ConfigError> {
        let problem = match self
            .choice("problem", "laplacian", &["laplacian", "synthetic"])?
            .as_str()
        {
            "laplacian" => Problem::Laplacian { h: self.get("h")? },
            _ => Problem::Synthetic {
                kappa: self.require("kappa")?,
            },
        };
        let d: usize = self.require("d")?;
        let n: usize = self.require("n")?;
        let tree = match self.choice("tree", "balanced", &["linear", "balanced"])?.as_str() {
            "linear" => TreeShape::Linear,
            _ => TreeShape::Balanced,
        };
        let rhs = match self.choice("rhs", "ones", &["ones", "random"])?.as_str() {
            "ones" => Rhs::Ones,
            _ => Rhs::Random,
        };
        let solver = match self.choice("solver", "st", &["st", "ie", "apriori"])?.as_str() {
            "st" => SolverKind::St,
            "ie" => SolverKind::Ie,
            _ => {
                let schedule = match self
                    .choice("schedule", "exponential", &["exponential", "algebraic"])?
                    .as_str()
                {
                    "exponential" => ScheduleKind::Exponential,
                    _ => ScheduleKind::Algebraic { p: self.require("p")? },
                };
                SolverKind::Apriori {
                    schedule,
                    rho_tilde: self.require("rho_tilde")?,
                    c0: self.get("c0")?,
                    steps: self.get_or("steps", 30)?,
                }
            }
        };
        let reference = match self.choice("reference", "none", &["dense", "expsum", "none"])?.as_str() {
            "dense" => ReferenceKind::Dense,
            "expsum" => ReferenceKind::Expsum {
                terms: self.get("expsum_terms")?,
                tol: self.get_or("expsum_tol", 1e-8)?,
            },
            _ => ReferenceKind::None,
        };
        let constants = Constants {
            theta: self.get("theta")?,
            omega: self.get("omega")?,
            nu: self.get("nu")?,
            tau1: self.get("tau1")?,
            tau2: self.get("tau2")?,
            alpha0_factor: self.get("alpha0_factor")?,
            alpha0: self.get("alpha0")?,
        };
        Ok(ExperimentConfig {
            problem,
            d,
            n,
            tree,
            rhs,
            solver,
            epsilon: self.require("epsilon")?,
            constants,
            reference,
            seed: self.get_or("seed", 0)?,
            max_iter: self.get_or("max_iter", 10_000)?,
            timing: self.get_or("timing", false)?,
            out_path: self.get("out_path")?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let mut raw = RawConfig::parse("# demo\nd = 3\nn=4 # trailing\nepsilon = 1e-4\n\nsolver = ie\n").unwrap();
        raw.apply_override("n=5").unwrap();
        let cfg = raw.resolve().unwrap();
        assert_eq!((cfg.d, cfg.n), (3, 5));
        assert_eq!(cfg.solver, SolverKind::Ie);
        assert_eq!(cfg.reference, ReferenceKind::None);
        assert!(!cfg.timing);
    }

    #[test]
    fn errors_name_the_key() {
        let err = RawConfig::parse("d = 3\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus"));
        let err = RawConfig::parse("d = three\nn = 4\nepsilon = 1\n")
            .unwrap()
            .resolve()
            .unwrap_err();
        assert!(err.to_string().contains("\"d\""));
        let err = RawConfig::parse("d = 3\nn = 4\nepsilon = 1\nsolver = cg\n")
            .unwrap()
            .resolve()
            .unwrap_err();
        assert!(err.to_string().contains("solver"));
        let err = RawConfig::parse("d = 3\nn = 4\nepsilon = 1\nproblem = synthetic\n")
            .unwrap()
            .resolve()
            .unwrap_err();
        assert!(err.to_string().contains("kappa"));
        assert!(RawConfig::parse("d 3\n").is_err());
    }

    #[test]
    fn apriori_section() {
        let raw = RawConfig::parse("d=3\nn=4\nepsilon=1e-3\nsolver=apriori\nschedule=algebraic\np=1\nrho_tilde=0.8\n")
            .unwrap();
        let cfg = raw.resolve().unwrap();
        assert_eq!(
            cfg.solver,
            SolverKind::Apriori {
                schedule: ScheduleKind::Algebraic { p: 1.0 },
                rho_tilde: 0.8,
                c0: None,
                steps: 30
            }
        );
    }
}
