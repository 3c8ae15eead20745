//! Cartesian parameter sweeps over a base configuration.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::config::{ConfigError, ExperimentConfig, RawConfig, KEYS};
use crate::run::{check, run, write_trace_file, RunError, Status};

/// One axis per grid line: `key = v1, v2, ...`.
pub fn parse_grid(text: &str) -> Result<Vec<(String, Vec<String>)>, ConfigError> {
    let mut axes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, vs) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: i + 1,
            text: line.to_string(),
        })?;
        let key = k.trim().to_string();
        if !KEYS.contains(&key.as_str()) {
            return Err(ConfigError::UnknownKey(key));
        }
        let values: Vec<String> = vs
            .split(',')
            .map(|v| v.trim().to_string())
            .filter(|v| !v.is_empty())
            .collect();
        if values.is_empty() {
            return Err(ConfigError::Invalid {
                key,
                reason: "grid axis has no values".into(),
            });
        }
        axes.push((key, values));
    }
    Ok(axes)
}

/// All combinations, the last axis varying fastest.
pub fn expand(axes: &[(String, Vec<String>)]) -> Vec<Vec<(String, String)>> {
    let mut combos = vec![Vec::new()];
    for (key, values) in axes {
        combos = combos
            .into_iter()
            .flat_map(|c| {
                values.iter().map(move |v| {
                    let mut next = c.clone();
                    next.push((key.clone(), v.clone()));
                    next
                })
            })
            .collect();
    }
    combos
}

#[derive(Debug, Clone)]
pub struct SweepRun {
    pub index: usize,
    pub overrides: Vec<(String, String)>,
    pub result: Result<(Status, usize, f64), String>,
}

impl SweepRun {
    pub fn exit_code(&self) -> i32 {
        match &self.result {
            Ok((status, _, _)) => status.exit_code(),
            Err(_) => 1,
        }
    }
}

/// Resolves every grid point first, so a bad value aborts before any run.
pub fn sweep(base: &RawConfig, grid_text: &str, out_dir: &Path) -> Result<Vec<SweepRun>, RunError> {
    let axes = parse_grid(grid_text).map_err(|e| RunError::Config(e.to_string()))?;
    let combos = expand(&axes);
    let configs: Vec<ExperimentConfig> = combos
        .iter()
        .map(|combo| {
            let mut raw = base.clone();
            for (k, v) in combo {
                raw.set(k, v)?;
            }
            raw.resolve()
        })
        .collect::<Result<_, _>>()
        .map_err(|e| RunError::Config(e.to_string()))?;
    for (exp, combo) in configs.iter().zip(&combos) {
        check(exp).map_err(|e| {
            let at = combo
                .iter()
                .map(|(k, v)| format!("{k}={v}"))
                .collect::<Vec<_>>()
                .join(" ");
            RunError::Config(format!("grid point {at}: {e}"))
        })?;
    }
    fs::create_dir_all(out_dir).map_err(|e| RunError::Output(format!("{}: {e}", out_dir.display())))?;

    let runs: Vec<SweepRun> = configs
        .par_iter()
        .zip(combos.par_iter())
        .enumerate()
        .map(|(index, (exp, overrides))| {
            let path = out_dir.join(format!("run_{index:03}.csv"));
            let result = run(exp).and_then(|outcome| {
                write_trace_file(&path, &outcome.trace, exp.timing)?;
                let last = outcome
                    .trace
                    .last()
                    .map(|r| (r.iter, r.res_norm))
                    .unwrap_or((0, f64::NAN));
                Ok((outcome.status, last.0, last.1))
            });
            SweepRun {
                index,
                overrides: overrides.clone(),
                result: result.map_err(|e| e.to_string()),
            }
        })
        .collect();

    let mut w = csv::Writer::from_path(out_dir.join("runs.csv")).map_err(|e| RunError::Output(e.to_string()))?;
    let io = |e: csv::Error| RunError::Output(e.to_string());
    w.write_record(["run", "overrides", "exit_code", "iterations", "res_norm", "message"])
        .map_err(io)?;
    for r in &runs {
        let overrides = r
            .overrides
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(" ");
        let (iters, res, msg) = match &r.result {
            Ok((_, it, res)) => (it.to_string(), format!("{res:e}"), String::new()),
            Err(m) => (String::new(), String::new(), m.clone()),
        };
        w.write_record([
            format!("run_{:03}", r.index),
            overrides,
            r.exit_code().to_string(),
            iters,
            res,
            msg,
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| RunError::Output(e.to_string()))?;
    Ok(runs)
}
