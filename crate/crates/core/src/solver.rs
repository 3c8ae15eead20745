//! Soft-thresholded Richardson iterations for `A u = f`.
//!
//! * [`apriori_iterate`]: thresholds prescribed in advance,
//! * [`fixed_point_u_alpha`]: the limit of the iteration at a fixed threshold,
//! * [`st_solve`]: thresholds adjusted from exact residuals,
//! * [`ie_solve`]: the same with residuals evaluated to an adaptive tolerance.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::htensor::HTensor;
use crate::operators::{KronSumOperator, SpectrumBounds};
use crate::shrinkage::soft_threshold;

/// Step size `2 / (gamma + Gamma)` and contraction factor `(kappa - 1) / (kappa + 1)`.
pub fn contraction_params(bounds: &SpectrumBounds) -> Result<(f64, f64)> {
    if !(bounds.gamma > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "gamma must be positive, got {}",
            bounds.gamma
        )));
    }
    let mu = 2.0 / (bounds.gamma + bounds.big_gamma);
    let rho = (bounds.kappa - 1.0) / (bounds.kappa + 1.0);
    Ok((mu, rho))
}

/// Constants of the threshold decrease test.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub gamma: f64,
    pub big_gamma: f64,
    pub mu: f64,
    pub rho: f64,
    pub nu: f64,
    pub theta: f64,
    pub omega: f64,
    pub tau1: f64,
    pub tau2: f64,
    /// Explicit initial threshold; when `None` it is `alpha0_factor * mu * ||f||`.
    pub alpha0: Option<f64>,
    pub alpha0_factor: f64,
    pub epsilon: f64,
    pub max_iter: usize,
}

impl SolverConfig {
    /// Default constants for an operator with the given spectral bounds.
    pub fn new(bounds: &SpectrumBounds, epsilon: f64) -> Result<Self> {
        let (mu, rho) = contraction_params(bounds)?;
        let cfg = Self {
            gamma: bounds.gamma,
            big_gamma: bounds.big_gamma,
            mu,
            rho,
            nu: 0.9,
            theta: 0.75,
            omega: 0.5,
            tau1: 0.1,
            tau2: 0.1f64.min(0.4 * (1.0 - rho)),
            alpha0: None,
            alpha0_factor: 0.5,
            epsilon,
            max_iter: 10_000,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn for_operator(a: &KronSumOperator, epsilon: f64) -> Result<Self> {
        Self::new(&a.bounds(), epsilon)
    }

    pub fn validate(&self) -> Result<()> {
        let open_unit = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} must lie in (0, 1), got {v}")))
            }
        };
        if !(self.gamma > 0.0 && self.big_gamma >= self.gamma && self.big_gamma.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "spectral bounds need 0 < gamma <= Gamma, got [{}, {}]",
                self.gamma, self.big_gamma
            )));
        }
        let (mu, rho) = contraction_params(&SpectrumBounds::new(self.gamma, self.big_gamma)?)?;
        if (self.mu - mu).abs() > 1e-12 * mu || (self.rho - rho).abs() > 1e-12 {
            return Err(Error::InvalidConfig(
                "mu and rho must follow from gamma and Gamma".into(),
            ));
        }
        open_unit("nu", self.nu)?;
        open_unit("theta", self.theta)?;
        open_unit("omega", self.omega)?;
        open_unit("tau1", self.tau1)?;
        if !(self.tau2 > 0.0 && self.tau2 < 0.5 * (1.0 - self.rho)) {
            return Err(Error::InvalidConfig(format!(
                "tau2 must lie in (0, (1 - rho)/2) = (0, {}), got {}",
                0.5 * (1.0 - self.rho),
                self.tau2
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.alpha0_factor > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha0_factor must be positive, got {}",
                self.alpha0_factor
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be positive".into()));
        }
        Ok(())
    }

    /// Initial threshold for a right-hand side of norm `f_norm` on a tree
    /// with `num_edges` edges; it must be at least `mu ||f|| / E`.
    pub fn initial_alpha(&self, f_norm: f64, num_edges: usize) -> Result<f64> {
        let alpha0 = self.alpha0.unwrap_or(self.alpha0_factor * self.mu * f_norm);
        let lower = self.mu * f_norm / num_edges as f64;
        if !(alpha0 >= lower) {
            return Err(Error::InvalidConfig(format!(
                "alpha0 = {alpha0} is below mu ||f|| / E = {lower}; raise alpha0_factor to at least {}",
                1.0 / num_edges as f64
            )));
        }
        Ok(alpha0)
    }

    /// Threshold decrease coefficient of [`st_solve`]: `(1 - rho) nu / (Gamma rho)`.
    pub fn decrease_coefficient(&self) -> f64 {
        (1.0 - self.rho) * self.nu / (self.big_gamma * self.rho)
    }
}

/// The constants `B` and `D` of [`ie_solve`].
pub fn algorithm2_constants(cfg: &SolverConfig) -> Result<(f64, f64)> {
    cfg.validate()?;
    let SolverConfig {
        big_gamma: g,
        mu,
        rho,
        nu,
        tau1: t1,
        tau2: t2,
        ..
    } = *cfg;
    let b = (1.0 - rho) * (1.0 - t1) * nu / ((1.0 + t2) * (rho + (1.0 + rho) * t2 / (1.0 - t2)) * g);
    let d1 = (1.0 - t1) * t2 * b / ((1.0 + t1 + g * b) * mu);
    let d2 =
        rho * nu * t2 * (1.0 - t1).powi(2) / ((rho * (1.0 + t1) * (1.0 + t2) + nu * (1.0 - t1) * (1.0 - rho)) * mu);
    Ok((b, d1.min(d2)))
}

/// One row of an [`IterationTrace`].
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub res_norm: f64,
    pub alpha: f64,
    pub delta: Option<f64>,
    pub err_ref: Option<f64>,
    pub rank_min: usize,
    pub rank_max: usize,
    pub res_rank_max: usize,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterationTrace {
    records: Vec<IterationRecord>,
    /// Set when [`ie_solve`] stopped inside a residual refinement loop, so the
    /// last row has not been refined to `delta <= tau1 ||r||`.
    pub stopped_in_refinement: bool,
    /// Residual evaluations of [`ie_solve`] beyond one per iteration.
    pub extra_residuals: usize,
}

impl IterationTrace {
    pub fn push(&mut self, record: IterationRecord) {
        if let Some(last) = self.records.last() {
            assert!(record.iter > last.iter, "iteration indices must increase");
        }
        self.records.push(record);
    }

    pub fn records(&self) -> &[IterationRecord] {
        &self.records
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Number of performed iterations (rows minus the initial one).
    pub fn iterations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }
}

/// Error of an iterate against a known reference, if one is available.
pub type ErrorProbe<'a> = &'a dyn Fn(&HTensor) -> Option<f64>;

fn no_probe(_: &HTensor) -> Option<f64> {
    None
}

struct Recorder<'a> {
    start: Instant,
    probe: ErrorProbe<'a>,
    trace: IterationTrace,
}

impl<'a> Recorder<'a> {
    fn new(probe: ErrorProbe<'a>) -> Self {
        Self {
            start: Instant::now(),
            probe,
            trace: IterationTrace::default(),
        }
    }

    fn record(&mut self, iter: usize, u: &HTensor, r: &HTensor, alpha: f64, delta: Option<f64>) {
        let ranks = u.ranks();
        self.trace.push(IterationRecord {
            iter,
            res_norm: r.norm(),
            alpha,
            delta,
            err_ref: (self.probe)(u),
            rank_min: ranks.iter().copied().min().unwrap_or(0),
            rank_max: ranks.iter().copied().max().unwrap_or(0),
            res_rank_max: r.max_rank(),
            wall_ms: self.start.elapsed().as_secs_f64() * 1e3,
        });
    }

    fn max_iterations(self, limit: usize) -> Error {
        Error::MaxIterations {
            limit,
            trace: Box::new(self.trace),
        }
    }
}

fn check_rhs(a: &KronSumOperator, f: &HTensor) -> Result<()> {
    if f.mode_sizes() != a.mode_sizes() {
        return Err(Error::ShapeMismatch(format!(
            "right-hand side has mode sizes {:?}, operator acts on {:?}",
            f.mode_sizes(),
            a.mode_sizes()
        )));
    }
    Ok(())
}

/// `S_alpha(u - mu r)`.
fn thresholded_step(u: &HTensor, r: &HTensor, mu: f64, alpha: f64) -> Result<HTensor> {
    Ok(soft_threshold(&HTensor::axpy(-mu, r, u)?, alpha))
}

/// Thresholds prescribed in advance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    /// Thresholds chosen by the solver from residuals.
    APosteriori,
    /// `alpha_k = (rho_tilde^(k+1) c0)^(2/(2-p))`.
    Algebraic { p: f64, c0: f64, rho_tilde: f64 },
    /// `alpha_k = rho_tilde^(k+1) c0`.
    Exponential { c0: f64, rho_tilde: f64 },
}

impl Schedule {
    pub fn alpha(&self, k: usize) -> Option<f64> {
        match *self {
            Schedule::APosteriori => None,
            Schedule::Algebraic { p, c0, rho_tilde } => Some((rho_tilde.powi(k as i32 + 1) * c0).powf(2.0 / (2.0 - p))),
            Schedule::Exponential { c0, rho_tilde } => Some(rho_tilde.powi(k as i32 + 1) * c0),
        }
    }

    fn validate(&self, rho: f64) -> Result<()> {
        let (c0, rho_tilde) = match *self {
            Schedule::APosteriori => {
                return Err(Error::InvalidArgument(
                    "a priori iteration needs a prescribed schedule".into(),
                ))
            }
            Schedule::Algebraic { p, c0, rho_tilde } => {
                if !(p > 0.0 && p < 2.0) {
                    return Err(Error::InvalidArgument(format!("p must lie in (0, 2), got {p}")));
                }
                (c0, rho_tilde)
            }
            Schedule::Exponential { c0, rho_tilde } => (c0, rho_tilde),
        };
        if !(c0 > 0.0) {
            return Err(Error::InvalidArgument(format!("c0 must be positive, got {c0}")));
        }
        if !(rho_tilde > rho && rho_tilde < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "rho_tilde must lie in ({rho}, 1), got {rho_tilde}"
            )));
        }
        Ok(())
    }
}

/// `K` steps of `u_{k+1} = S_{alpha_k}(u_k - mu (A u_k - f))` from `u_0 = 0`.
pub fn apriori_iterate(
    a: &KronSumOperator,
    f: &HTensor,
    schedule: &Schedule,
    steps: usize,
    cfg: &SolverConfig,
) -> Result<(HTensor, IterationTrace)> {
    apriori_iterate_with(a, f, schedule, steps, cfg, &no_probe)
}

pub fn apriori_iterate_with(
    a: &KronSumOperator,
    f: &HTensor,
    schedule: &Schedule,
    steps: usize,
    cfg: &SolverConfig,
    probe: ErrorProbe,
) -> Result<(HTensor, IterationTrace)> {
    check_rhs(a, f)?;
    schedule.validate(cfg.rho)?;
    let mut rec = Recorder::new(probe);
    let mut u = HTensor::zeros(f.tree().clone(), f.mode_sizes())?;
    let mut r = f.scale(-1.0);
    for k in 0..steps {
        let alpha = schedule.alpha(k).expect("validated");
        rec.record(k, &u, &r, alpha, None);
        u = thresholded_step(&u, &r, cfg.mu, alpha)?;
        r = a.residual(&u, f)?;
    }
    rec.record(steps, &u, &r, schedule.alpha(steps).expect("validated"), None);
    Ok((u, rec.trace))
}

/// Fixed point `u^alpha = S_alpha(u^alpha - mu (A u^alpha - f))` to accuracy `tol`.
///
/// The iteration stops once `rho ||u_{k+1} - u_k|| <= tol (1 - rho)`, which
/// bounds the distance of `u_{k+1}` to the fixed point by `tol`.
pub fn fixed_point_u_alpha(
    a: &KronSumOperator,
    f: &HTensor,
    alpha: f64,
    tol: f64,
    cfg: &SolverConfig,
) -> Result<HTensor> {
    check_rhs(a, f)?;
    if !(alpha >= 0.0) || !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need alpha >= 0 and tol > 0, got alpha = {alpha}, tol = {tol}"
        )));
    }
    let mut rec = Recorder::new(&no_probe);
    let mut u = HTensor::zeros(f.tree().clone(), f.mode_sizes())?;
    let mut r = f.scale(-1.0);
    for k in 0..cfg.max_iter {
        rec.record(k, &u, &r, alpha, None);
        let next = thresholded_step(&u, &r, cfg.mu, alpha)?;
        let step = next.distance(&u)?;
        u = next;
        if cfg.rho * step <= tol * (1.0 - cfg.rho) {
            return Ok(u);
        }
        r = a.residual(&u, f)?;
    }
    Err(rec.max_iterations(cfg.max_iter))
}

/// Soft-thresholded Richardson iteration with exact residuals.
///
/// Returns `u` with `||A u - f|| <= gamma epsilon`, hence `||u - u*|| <= epsilon`.
pub fn st_solve(a: &KronSumOperator, f: &HTensor, cfg: &SolverConfig) -> Result<(HTensor, IterationTrace)> {
    st_solve_with(a, f, cfg, &no_probe)
}

pub fn st_solve_with(
    a: &KronSumOperator,
    f: &HTensor,
    cfg: &SolverConfig,
    probe: ErrorProbe,
) -> Result<(HTensor, IterationTrace)> {
    check_rhs(a, f)?;
    cfg.validate()?;
    let mut alpha = cfg.initial_alpha(f.norm(), f.tree().num_edges())?;
    let coeff = cfg.decrease_coefficient();
    let mut rec = Recorder::new(probe);

    let mut u = HTensor::zeros(f.tree().clone(), f.mode_sizes())?;
    let mut r = f.scale(-1.0);
    let mut r_norm = r.norm();
    let mut k = 0;
    rec.record(k, &u, &r, alpha, None);
    while r_norm > cfg.gamma * cfg.epsilon {
        if k == cfg.max_iter {
            return Err(rec.max_iterations(cfg.max_iter));
        }
        let next = thresholded_step(&u, &r, cfg.mu, alpha)?;
        let r_next = a.residual(&next, f)?;
        let r_next_norm = r_next.norm();
        if next.distance(&u)? <= coeff * r_next_norm {
            alpha *= cfg.theta;
        }
        u = next;
        r = r_next;
        r_norm = r_next_norm;
        k += 1;
        rec.record(k, &u, &r, alpha, None);
    }
    Ok((u, rec.trace))
}

/// Halvings of a residual tolerance before giving up; `0.5^1100` is below the
/// smallest subnormal double.
const MAX_REFINEMENTS: usize = 1100;

/// Soft-thresholded Richardson iteration with inexact residuals.
///
/// Every computed residual `r_k` satisfies `||r_k - (A u_k - f)|| <= delta_k`.
/// Returns `u` with `||A u - f|| <= ||r|| + delta <= gamma epsilon`.
pub fn ie_solve(a: &KronSumOperator, f: &HTensor, cfg: &SolverConfig) -> Result<(HTensor, IterationTrace)> {
    ie_solve_with(a, f, cfg, &no_probe)
}

pub fn ie_solve_with(
    a: &KronSumOperator,
    f: &HTensor,
    cfg: &SolverConfig,
    probe: ErrorProbe,
) -> Result<(HTensor, IterationTrace)> {
    check_rhs(a, f)?;
    let (b, d) = algorithm2_constants(cfg)?;
    let mut alpha = cfg.initial_alpha(f.norm(), f.tree().num_edges())?;
    let target = cfg.gamma * cfg.epsilon;
    let mut rec = Recorder::new(probe);

    let underflow = |rec: Recorder, k: usize| Error::ToleranceUnderflow {
        iteration: k,
        trace: Box::new(rec.trace),
    };

    let mut u = HTensor::zeros(f.tree().clone(), f.mode_sizes())?;
    let mut r = f.scale(-1.0);
    let mut r_norm = r.norm();
    let mut delta = cfg.tau1 * r_norm;
    let mut k = 0;
    rec.record(k, &u, &r, alpha, Some(delta));
    while r_norm + delta > target {
        if k == cfg.max_iter {
            return Err(rec.max_iterations(cfg.max_iter));
        }
        let mut next = thresholded_step(&u, &r, cfg.mu, alpha)?;
        let mut step = next.distance(&u)?;
        let mut halvings = 0;
        while delta > cfg.tau2 / cfg.mu * step && delta > d * r_norm {
            halvings += 1;
            if halvings > MAX_REFINEMENTS {
                return Err(underflow(rec, k));
            }
            delta *= cfg.omega;
            r = a.residual_inexact(&u, f, delta)?;
            r_norm = r.norm();
            rec.trace.extra_residuals += 1;
            next = thresholded_step(&u, &r, cfg.mu, alpha)?;
            step = next.distance(&u)?;
        }

        let mut delta_next = delta / cfg.omega;
        let mut r_next;
        let mut r_next_norm;
        let mut refinements = 0;
        loop {
            refinements += 1;
            if refinements > MAX_REFINEMENTS {
                return Err(underflow(rec, k + 1));
            }
            delta_next *= cfg.omega;
            r_next = a.residual_inexact(&next, f, delta_next)?;
            r_next_norm = r_next.norm();
            if r_next_norm + delta_next <= target {
                rec.trace.extra_residuals += refinements - 1;
                rec.trace.stopped_in_refinement = delta_next > cfg.tau1 * r_next_norm;
                rec.record(k + 1, &next, &r_next, alpha, Some(delta_next));
                return Ok((next, rec.trace));
            }
            if delta_next <= cfg.tau1 * r_next_norm {
                break;
            }
        }
        rec.trace.extra_residuals += refinements - 1;

        if step <= b * r_next_norm {
            alpha *= cfg.theta;
            delta_next = cfg.tau1 * r_next_norm;
        }
        u = next;
        r = r_next;
        r_norm = r_next_norm;
        delta = delta_next;
        k += 1;
        rec.record(k, &u, &r, alpha, Some(delta));
    }
    Ok((u, rec.trace))
}
