//! Executes one configured experiment and writes its trace.

use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use htsoft::reference::{dense_solve, expsum_inverse, expsum_terms, Reference};
use htsoft::solver::{apriori_iterate_with, ie_solve_with, st_solve_with, IterationRecord, Schedule};
use htsoft::{DimensionTree, Error, HTensor, IterationTrace, KronSumOperator, SolverConfig};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::config::{ExperimentConfig, Problem, ReferenceKind, Rhs, ScheduleKind, SolverKind, TreeShape};

pub const CSV_HEADER: [&str; 9] = [
    "iter",
    "res_norm",
    "alpha",
    "delta",
    "err_ref",
    "rank_min",
    "rank_max",
    "res_rank_max",
    "wall_ms",
];

#[derive(Debug, Error)]
pub enum RunError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("solver: {0}")]
    Solver(Error),
    #[error("output: {0}")]
    Output(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Converged,
    /// A prescribed schedule ran all its steps.
    ScheduleDone,
    MaxIterations,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Converged | Status::ScheduleDone => 0,
            Status::MaxIterations => 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub status: Status,
    pub trace: IterationTrace,
}

struct Setup {
    a: KronSumOperator,
    f: HTensor,
    cfg: SolverConfig,
    reference: Option<Reference>,
}

fn config_err(e: impl std::fmt::Display) -> RunError {
    RunError::Config(e.to_string())
}

fn operator_and_config(exp: &ExperimentConfig) -> Result<(KronSumOperator, SolverConfig), RunError> {
    let a = match exp.problem {
        Problem::Laplacian { h } => KronSumOperator::laplacian(exp.d, exp.n, h),
        Problem::Synthetic { kappa } => KronSumOperator::synthetic(exp.d, exp.n, kappa),
    }
    .map_err(config_err)?;
    let mut cfg = SolverConfig::for_operator(&a, exp.epsilon).map_err(config_err)?;
    let c = &exp.constants;
    cfg.theta = c.theta.unwrap_or(cfg.theta);
    cfg.omega = c.omega.unwrap_or(cfg.omega);
    cfg.nu = c.nu.unwrap_or(cfg.nu);
    cfg.tau1 = c.tau1.unwrap_or(cfg.tau1);
    cfg.tau2 = c.tau2.unwrap_or(cfg.tau2);
    cfg.alpha0_factor = c.alpha0_factor.unwrap_or(cfg.alpha0_factor);
    cfg.alpha0 = c.alpha0.or(cfg.alpha0);
    cfg.max_iter = exp.max_iter;
    cfg.validate().map_err(config_err)?;
    if matches!(exp.solver, SolverKind::Ie) {
        htsoft::solver::algorithm2_constants(&cfg).map_err(config_err)?;
    }
    Ok((a, cfg))
}

/// Checks everything that does not need a solve.
pub fn check(exp: &ExperimentConfig) -> Result<(), RunError> {
    operator_and_config(exp).map(|_| ())
}

fn build(exp: &ExperimentConfig) -> Result<Setup, RunError> {
    let (a, cfg) = operator_and_config(exp)?;
    let tree = match exp.tree {
        TreeShape::Linear => DimensionTree::linear(exp.d),
        TreeShape::Balanced => DimensionTree::balanced(exp.d),
    }
    .map_err(config_err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(exp.seed);
    let factors: Vec<DVector<f64>> = (0..exp.d)
        .map(|_| match exp.rhs {
            Rhs::Ones => DVector::from_element(exp.n, 1.0),
            Rhs::Random => DVector::from_fn(exp.n, |_, _| rng.sample::<f64, _>(StandardNormal)),
        })
        .collect();
    let f = HTensor::rank_one(Arc::new(tree), &factors).map_err(config_err)?;

    let reference = match exp.reference {
        ReferenceKind::None => None,
        ReferenceKind::Dense => Some(Reference::Dense(dense_solve(&a, &f).map_err(config_err)?)),
        ReferenceKind::Expsum { terms, tol } => {
            let j = match terms {
                Some(j) => j,
                None => expsum_terms(&a.bounds(), tol).map_err(config_err)?,
            };
            Some(Reference::Tensor(expsum_inverse(&a, &f, j).map_err(config_err)?))
        }
    };
    Ok(Setup { a, f, cfg, reference })
}

fn schedule_for(kind: ScheduleKind, rho_tilde: f64, c0: Option<f64>, alpha0: f64) -> Schedule {
    match kind {
        ScheduleKind::Exponential => Schedule::Exponential {
            c0: c0.unwrap_or(alpha0 / rho_tilde),
            rho_tilde,
        },
        ScheduleKind::Algebraic { p } => Schedule::Algebraic {
            p,
            c0: c0.unwrap_or(alpha0.powf((2.0 - p) / 2.0) / rho_tilde),
            rho_tilde,
        },
    }
}

/// Runs the experiment; a solver stopping at `max_iter` is reported through
/// [`Status::MaxIterations`] together with its partial trace.
pub fn run(exp: &ExperimentConfig) -> Result<Outcome, RunError> {
    let s = build(exp)?;
    let probe = |u: &HTensor| s.reference.as_ref().and_then(|r| r.error(u).ok());
    let result = match exp.solver {
        SolverKind::St => st_solve_with(&s.a, &s.f, &s.cfg, &probe),
        SolverKind::Ie => ie_solve_with(&s.a, &s.f, &s.cfg, &probe),
        SolverKind::Apriori {
            schedule,
            rho_tilde,
            c0,
            steps,
        } => {
            let alpha0 = s
                .cfg
                .initial_alpha(s.f.norm(), s.f.tree().num_edges())
                .map_err(config_err)?;
            let schedule = schedule_for(schedule, rho_tilde, c0, alpha0);
            apriori_iterate_with(&s.a, &s.f, &schedule, steps, &s.cfg, &probe).map_err(|e| match e {
                Error::InvalidArgument(m) => Error::InvalidConfig(m),
                other => other,
            })
        }
    };
    match result {
        Ok((_, trace)) => Ok(Outcome {
            status: if matches!(exp.solver, SolverKind::Apriori { .. }) {
                Status::ScheduleDone
            } else {
                Status::Converged
            },
            trace,
        }),
        Err(Error::MaxIterations { trace, .. }) => Ok(Outcome {
            status: Status::MaxIterations,
            trace: *trace,
        }),
        Err(e @ Error::InvalidConfig(_)) => Err(config_err(e)),
        Err(e) => Err(RunError::Solver(e)),
    }
}

fn num(x: f64) -> String {
    format!("{x:e}")
}

fn row(r: &IterationRecord, timing: bool) -> [String; 9] {
    [
        r.iter.to_string(),
        num(r.res_norm),
        num(r.alpha),
        r.delta.map(num).unwrap_or_default(),
        r.err_ref.map(num).unwrap_or_default(),
        r.rank_min.to_string(),
        r.rank_max.to_string(),
        r.res_rank_max.to_string(),
        if timing {
            format!("{:.3}", r.wall_ms)
        } else {
            String::new()
        },
    ]
}

pub fn write_trace<W: Write>(out: W, trace: &IterationTrace, timing: bool) -> Result<(), RunError> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| RunError::Output(e.to_string());
    w.write_record(CSV_HEADER).map_err(io)?;
    for r in trace.records() {
        w.write_record(row(r, timing)).map_err(io)?;
    }
    w.flush().map_err(|e| RunError::Output(e.to_string()))
}

pub fn write_trace_file(path: &Path, trace: &IterationTrace, timing: bool) -> Result<(), RunError> {
    let file = File::create(path).map_err(|e| RunError::Output(format!("{}: {e}", path.display())))?;
    write_trace(file, trace, timing)
}

pub fn summary(outcome: &Outcome) -> String {
    let Some(last) = outcome.trace.last() else {
        return "no iterations recorded".into();
    };
    let status = match outcome.status {
        Status::Converged => "converged",
        Status::ScheduleDone => "schedule finished",
        Status::MaxIterations => "stopped at max_iter",
    };
    let mut s = format!(
        "{status} after {} iterations: res_norm {:e}, alpha {:e}, ranks {}..{}",
        last.iter, last.res_norm, last.alpha, last.rank_min, last.rank_max
    );
    if let Some(e) = last.err_ref {
        s.push_str(&format!(", err_ref {e:e}"));
    }
    s
}
