//! Reference solutions for small problems: a dense direct solver, an
//! exponential sum approximation of the inverse of a Kronecker sum, and the
//! error of an iterate against either.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::{ArrayD, Axis, IxDyn};

use crate::error::{Error, Result};
use crate::htensor::HTensor;
use crate::operators::{KronSumOperator, SpectrumBounds};

/// Largest system solved through a materialized matrix.
pub const DENSE_MATRIX_DIM: usize = 2048;

/// Largest system solved through eigendecompositions of Kronecker factors.
pub const DENSE_SOLVE_DIM: usize = 1 << 16;

/// `x ×_axis m`: applies `m` to every fiber along `axis`.
pub fn mode_product(x: &ArrayD<f64>, axis: usize, m: &DMatrix<f64>) -> ArrayD<f64> {
    let n = x.shape()[axis];
    assert_eq!(m.ncols(), n, "matrix does not match mode size");
    let mut shape = x.shape().to_vec();
    shape[axis] = m.nrows();
    let mut out = ArrayD::zeros(IxDyn(&shape));
    for (src, mut dst) in x.lanes(Axis(axis)).into_iter().zip(out.lanes_mut(Axis(axis))) {
        let v = DVector::from_iterator(n, src.iter().copied());
        let w = m * v;
        for (d, s) in dst.iter_mut().zip(w.iter()) {
            *d = *s;
        }
    }
    out
}

fn symmetric_eigen(m: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let scale = m.norm().max(f64::MIN_POSITIVE);
    if (m - m.transpose()).norm() > 1e-12 * scale {
        return Err(Error::Precondition("Kronecker factors must be symmetric".into()));
    }
    Ok(SymmetricEigen::new(m.clone()))
}

/// Solves `A x = f` directly.
///
/// Systems of dimension up to [`DENSE_MATRIX_DIM`] are solved by LU
/// factorization of the materialized matrix; pure Kronecker sums of
/// symmetric factors up to [`DENSE_SOLVE_DIM`] by diagonalizing the factors.
pub fn dense_solve(a: &KronSumOperator, f: &HTensor) -> Result<ArrayD<f64>> {
    if f.mode_sizes() != a.mode_sizes() {
        return Err(Error::ShapeMismatch(format!(
            "right-hand side has mode sizes {:?}, operator acts on {:?}",
            f.mode_sizes(),
            a.mode_sizes()
        )));
    }
    let dim = a.mode_sizes().iter().try_fold(1usize, |acc, &n| acc.checked_mul(n));
    let dim = dim.filter(|&n| n <= DENSE_SOLVE_DIM).ok_or(Error::Capacity {
        entries: dim.unwrap_or(usize::MAX),
        limit: DENSE_SOLVE_DIM,
    })?;
    let rhs = f.to_dense()?;
    if dim <= DENSE_MATRIX_DIM {
        let m = a.to_dense_matrix(DENSE_MATRIX_DIM * DENSE_MATRIX_DIM)?;
        let b = DVector::from_iterator(dim, rhs.iter().copied());
        let x = m.lu().solve(&b).ok_or(Error::Singular)?;
        return Ok(
            ArrayD::from_shape_vec(IxDyn(a.mode_sizes()), x.iter().copied().collect())
                .expect("shape matches dimension"),
        );
    }
    let Some(factors) = a.sum_factors() else {
        return Err(Error::Capacity {
            entries: dim,
            limit: DENSE_MATRIX_DIM,
        });
    };
    let eigs = factors.iter().map(|f| symmetric_eigen(f)).collect::<Result<Vec<_>>>()?;
    let mut x = rhs;
    for (m, e) in eigs.iter().enumerate() {
        x = mode_product(&x, m, &e.eigenvectors.transpose());
    }
    for (idx, v) in x.indexed_iter_mut() {
        let lambda: f64 = eigs.iter().enumerate().map(|(m, e)| e.eigenvalues[idx[m]]).sum();
        if lambda == 0.0 {
            return Err(Error::Singular);
        }
        *v /= lambda;
    }
    for (m, e) in eigs.iter().enumerate() {
        x = mode_product(&x, m, &e.eigenvectors);
    }
    Ok(x)
}

/// Nodes `t_j` and weights `w_j` with `sum_j w_j exp(-t_j x) ≈ 1/x` on
/// `[gamma, Gamma]`.
///
/// The trapezoidal rule is applied to `1/x = ∫ exp(s - e^s x) ds` after
/// scaling `x` by `gamma`, with step `h = pi / sqrt(J)` and nodes
/// `s_j = ln 40 - j h`, `j = 0..J`. Discretization and truncation errors
/// then both decay like `exp(-pi sqrt(J))`, up to a factor `kappa` for the
/// truncated lower tail.
pub fn expsum_quadrature(terms: usize, bounds: &SpectrumBounds) -> (Vec<f64>, Vec<f64>) {
    let h = std::f64::consts::PI / (terms as f64).sqrt();
    let s_hi = 40f64.ln();
    (0..terms)
        .map(|j| {
            let e = (s_hi - j as f64 * h).exp();
            (e / bounds.gamma, h * e / bounds.gamma)
        })
        .unzip()
}

/// Largest relative error of the quadrature on `samples` log-spaced points.
pub fn expsum_scalar_error(terms: usize, bounds: &SpectrumBounds, samples: usize) -> f64 {
    let (t, w) = expsum_quadrature(terms, bounds);
    let (lo, hi) = (bounds.gamma.ln(), bounds.big_gamma.ln());
    (0..samples)
        .map(|i| {
            let x = if samples > 1 {
                (lo + (hi - lo) * i as f64 / (samples - 1) as f64).exp()
            } else {
                bounds.gamma
            };
            let approx: f64 = t.iter().zip(&w).map(|(t, w)| w * (-t * x).exp()).sum();
            (approx * x - 1.0).abs()
        })
        .fold(0.0, f64::max)
}

/// Smallest term count whose scalar relative error stays below `rel_tol` on
/// a grid of 200 points.
pub fn expsum_terms(bounds: &SpectrumBounds, rel_tol: f64) -> Result<usize> {
    (1..=2000)
        .find(|&j| expsum_scalar_error(j, bounds, 200) <= rel_tol)
        .ok_or_else(|| Error::InvalidArgument(format!("relative tolerance {rel_tol} not reachable")))
}

/// `sum_j w_j ⊗_i exp(-t_j L_i) f_i` for a Kronecker sum `A = sum_i L_i`
/// and a rank-one right-hand side.
pub fn expsum_inverse(a: &KronSumOperator, f: &HTensor, terms: usize) -> Result<HTensor> {
    let factors = a
        .sum_factors()
        .ok_or_else(|| Error::Precondition("operator is not a pure Kronecker sum".into()))?;
    if f.mode_sizes() != a.mode_sizes() {
        return Err(Error::ShapeMismatch("right-hand side does not match operator".into()));
    }
    let (scale, vectors) = f
        .rank_one_factors()
        .ok_or_else(|| Error::Precondition("right-hand side must have rank one".into()))?;
    if terms == 0 {
        return Err(Error::InvalidArgument("need at least one term".into()));
    }
    if scale == 0.0 {
        return HTensor::zeros(f.tree().clone(), f.mode_sizes());
    }
    let eigs = factors.iter().map(|l| symmetric_eigen(l)).collect::<Result<Vec<_>>>()?;
    // coefficients of f_i in the eigenbasis of L_i
    let coeffs: Vec<DVector<f64>> = eigs
        .iter()
        .zip(&vectors)
        .map(|(e, v)| e.eigenvectors.transpose() * v)
        .collect();
    let (t, w) = expsum_quadrature(terms, &a.bounds());
    let summands: Vec<(f64, Vec<DVector<f64>>)> = t
        .iter()
        .zip(&w)
        .map(|(&tj, &wj)| {
            let vs = eigs
                .iter()
                .zip(&coeffs)
                .map(|(e, c)| {
                    let damped = DVector::from_fn(c.len(), |k, _| (-tj * e.eigenvalues[k]).exp() * c[k]);
                    &e.eigenvectors * damped
                })
                .collect();
            (wj * scale, vs)
        })
        .collect();
    Ok(HTensor::sum_of_rank_one(f.tree().clone(), &summands)?.compress())
}

/// A known solution in tensor or dense form.
#[derive(Debug, Clone)]
pub enum Reference {
    Dense(ArrayD<f64>),
    Tensor(HTensor),
}

impl Reference {
    pub fn norm(&self) -> f64 {
        match self {
            Reference::Dense(x) => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
            Reference::Tensor(t) => t.norm(),
        }
    }

    /// `||u - reference||`.
    pub fn error(&self, u: &HTensor) -> Result<f64> {
        error_vs_reference(u, self)
    }
}

/// `||u - reference||`.
pub fn error_vs_reference(u: &HTensor, reference: &Reference) -> Result<f64> {
    match reference {
        Reference::Tensor(r) => u.distance(r),
        Reference::Dense(x) => {
            if x.shape() != u.mode_sizes() {
                return Err(Error::ShapeMismatch(format!(
                    "reference has shape {:?}, tensor has mode sizes {:?}",
                    x.shape(),
                    u.mode_sizes()
                )));
            }
            let dense = u.to_dense()?;
            Ok(dense
                .iter()
                .zip(x.iter())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt())
        }
    }
}
