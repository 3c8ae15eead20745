//! Built-in oracle cross-checks behind the `validate` subcommand.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use ndarray::{ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dim_tree::DimensionTree;
use crate::error::Result;
use crate::htensor::{HTensor, ZERO_CUTOFF};
use crate::operators::KronSumOperator;
use crate::reference::{dense_solve, expsum_inverse, expsum_terms, Reference};
use crate::shrinkage::{soft_threshold_with_cutoff, threshold_diagnostics};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            writeln!(f, "{tag} {}: {}", c.name, c.detail)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidateOptions {
    pub seed: u64,
    /// Relative cutoff handed to the thresholding routine in the sandwich
    /// sweep. Anything but the default is a deliberate mutation.
    pub sigma_cutoff: f64,
    pub sandwich_samples: usize,
    pub prox_samples: usize,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        ValidateOptions {
            seed: 7,
            sigma_cutoff: ZERO_CUTOFF,
            sandwich_samples: 200,
            prox_samples: 100,
        }
    }
}

pub fn validate(opts: &ValidateOptions) -> ValidationReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let checks = vec![
        as_check("dense-vs-expsum", check_dense_vs_expsum()),
        as_check("prox-oracle-d2", check_prox_oracle(opts.prox_samples, &mut rng)),
        as_check(
            "sandwich-sweep",
            check_sandwich(opts.sandwich_samples, opts.sigma_cutoff, &mut rng),
        ),
    ];
    ValidationReport { checks }
}

fn as_check(name: &'static str, outcome: Result<(bool, String)>) -> CheckResult {
    match outcome {
        Ok((passed, detail)) => CheckResult { name, passed, detail },
        Err(e) => CheckResult {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

/// Unit-norm random tensor on a random tree with `d` in 2..=5, mode sizes at
/// most 6 and ranks at most 4.
pub fn random_case<R: Rng + ?Sized>(rng: &mut R) -> Result<HTensor> {
    let d = rng.random_range(2..=5);
    let tree = if rng.random_bool(0.5) {
        DimensionTree::linear(d)?
    } else {
        DimensionTree::balanced(d)?
    };
    let sizes: Vec<usize> = (0..d).map(|_| rng.random_range(2..=6)).collect();
    random_like(Arc::new(tree), &sizes, rng)
}

/// Unit-norm random tensor on a given tree with ranks at most 4.
pub fn random_like<R: Rng + ?Sized>(tree: Arc<DimensionTree>, sizes: &[usize], rng: &mut R) -> Result<HTensor> {
    let ranks: Vec<usize> = (0..tree.num_edges()).map(|_| rng.random_range(1..=4)).collect();
    let u = HTensor::random(tree, sizes, &ranks, rng)?;
    Ok(u.scale(1.0 / u.norm()))
}

/// Threshold drawn log-uniformly between `1e-3` and `1.2` times the largest
/// singular value over all edges.
pub fn random_alpha<R: Rng + ?Sized>(u: &HTensor, rng: &mut R) -> f64 {
    let top = u
        .hsvd_spectra()
        .iter()
        .filter_map(|s| s.sigma.first().copied())
        .fold(0.0, f64::max);
    let e: f64 = rng.random_range(-3.0..0.08);
    top.max(f64::MIN_POSITIVE) * 10f64.powf(e)
}

pub fn check_dense_vs_expsum() -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for (d, n) in [(2, 3), (3, 4), (4, 3)] {
        for op in [
            KronSumOperator::laplacian(d, n, None)?,
            KronSumOperator::synthetic(d, n, 3.0)?,
        ] {
            let tree = Arc::new(DimensionTree::linear(d)?);
            let f = HTensor::rank_one(tree, &vec![DVector::from_element(n, 1.0); d])?;
            let dense = Reference::Dense(dense_solve(&op, &f)?);
            let terms = expsum_terms(&op.bounds(), 1e-8)?;
            let approx = expsum_inverse(&op, &f, terms)?;
            worst = worst.max(dense.error(&approx)? / dense.norm());
        }
    }
    Ok((worst <= 1e-6, format!("max relative gap {worst:.2e} (limit 1e-6)")))
}

fn matrix_tensor(m: &DMatrix<f64>) -> Result<HTensor> {
    let tree = Arc::new(DimensionTree::linear(2)?);
    let x = ArrayD::from_shape_fn(IxDyn(&[m.nrows(), m.ncols()]), |i| m[(i[0], i[1])]);
    HTensor::from_dense(&x, tree, 0.0)
}

fn tensor_matrix(u: &HTensor) -> Result<DMatrix<f64>> {
    let x = u.to_dense()?;
    let s = u.mode_sizes();
    Ok(DMatrix::from_fn(s[0], s[1], |i, j| x[[i, j]]))
}

fn prox_objective(x: &DMatrix<f64>, v: &DMatrix<f64>, alpha: f64) -> f64 {
    let nuclear: f64 = crate::linalg::singular_values(v).iter().sum();
    alpha * nuclear + 0.5 * (x - v).norm_squared()
}

pub fn check_prox_oracle<R: Rng + ?Sized>(samples: usize, rng: &mut R) -> Result<(bool, String)> {
    let mut worst_gap = 0.0f64;
    let mut beaten = 0usize;
    for _ in 0..samples {
        let (m, n) = (rng.random_range(1..=8), rng.random_range(1..=8));
        let x = DMatrix::from_fn(m, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        // nalgebra's SVD keeps the oracle independent of the factorization in use
        let mut svd = x.clone().svd(true, true);
        let alpha = svd.singular_values.max() * rng.random_range(0.01..1.1);
        svd.singular_values.apply(|s| *s = (*s - alpha).max(0.0));
        let expected = svd.recompose().expect("both factors computed");
        let got = tensor_matrix(&soft_threshold_with_cutoff(&matrix_tensor(&x)?, alpha, ZERO_CUTOFF))?;
        worst_gap = worst_gap.max((&got - &expected).norm() / x.norm().max(1.0));
        let best = prox_objective(&x, &got, alpha);
        for _ in 0..50 {
            let g = DMatrix::from_fn(m, n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let scale = x.norm() * 10f64.powf(rng.random_range(-4.0..-1.0)) / g.norm();
            if prox_objective(&x, &(&got + g * scale), alpha) <= best {
                beaten += 1;
            }
        }
    }
    Ok((
        worst_gap <= 1e-10 && beaten == 0,
        format!("{samples} matrices, max gap {worst_gap:.2e}, {beaten} perturbations not worse"),
    ))
}

pub fn check_sandwich<R: Rng + ?Sized>(samples: usize, cutoff: f64, rng: &mut R) -> Result<(bool, String)> {
    let mut violations = 0usize;
    for _ in 0..samples {
        let u = random_case(rng)?;
        let alpha = random_alpha(&u, rng);
        let diag = threshold_diagnostics(&u, alpha)?;
        let gap = soft_threshold_with_cutoff(&u, alpha, cutoff).distance(&u)?;
        if gap < diag.lower - 1e-9 || gap > diag.upper + 1e-9 {
            violations += 1;
        }
    }
    // rank one with norm E * alpha is annihilated
    let tree = Arc::new(DimensionTree::balanced(4)?);
    let sharp = HTensor::rank_one(tree.clone(), &vec![DVector::from_element(3, 1.0); 4])?;
    let alpha = sharp.norm() / tree.num_edges() as f64;
    let rest = soft_threshold_with_cutoff(&sharp, alpha, cutoff).norm();
    let sharp_ok = rest <= 1e-12 * sharp.norm();
    Ok((
        violations == 0 && sharp_ok,
        format!("{violations}/{samples} bound violations, sharp case residual {rest:.2e}"),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ValidateOptions {
        ValidateOptions {
            sandwich_samples: 40,
            prox_samples: 20,
            ..ValidateOptions::default()
        }
    }

    #[test]
    fn fresh_build_passes() {
        let report = validate(&small());
        assert!(report.all_passed(), "{report}");
        assert_eq!(report.checks.len(), 3);
    }

    #[test]
    fn cutoff_mutation_breaks_sandwich() {
        let report = validate(&ValidateOptions {
            sigma_cutoff: 0.5,
            ..small()
        });
        let sandwich = report.checks.iter().find(|c| c.name == "sandwich-sweep").unwrap();
        assert!(!sandwich.passed, "{report}");
        assert!(report.to_string().contains("FAIL sandwich-sweep"));
    }

    #[test]
    fn random_cases_respect_limits() {
        let mut r = crate::testing::rng(3);
        for _ in 0..30 {
            let u = random_case(&mut r).unwrap();
            assert!((2..=5).contains(&u.tree().order()));
            assert!(u.mode_sizes().iter().all(|&n| (2..=6).contains(&n)));
            assert!(u.max_rank() <= 4);
            assert!((u.norm() - 1.0).abs() < 1e-12);
            assert!(random_alpha(&u, &mut r) > 0.0);
        }
    }
}
