//! Linear operators given as sums of Kronecker products of small mode
//! matrices, with known spectral bounds.

use nalgebra::DMatrix;

use crate::dim_tree::{EdgeId, SiteId};
use crate::error::{Error, Result};
use crate::htensor::{axis_of, HTensor, Truncated, Truncation};
use crate::linalg::Core;

/// `gamma ||v||^2 <= <Av, v> <= big_gamma ||v||^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumBounds {
    pub gamma: f64,
    pub big_gamma: f64,
    pub kappa: f64,
}

impl SpectrumBounds {
    pub fn new(gamma: f64, big_gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && big_gamma >= gamma && big_gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "spectral bounds need 0 < gamma <= Gamma, got [{gamma}, {big_gamma}]"
            )));
        }
        Ok(Self {
            gamma,
            big_gamma,
            kappa: big_gamma / gamma,
        })
    }
}

/// One Kronecker term; `None` stands for the identity on that mode.
pub type KronTerm = Vec<Option<DMatrix<f64>>>;

/// `A = sum_j A_{j,1} ⊗ ... ⊗ A_{j,d}` on tensors of fixed mode sizes.
#[derive(Debug, Clone)]
pub struct KronSumOperator {
    sizes: Vec<usize>,
    terms: Vec<KronTerm>,
    bounds: SpectrumBounds,
}

/// Mode matrix `tridiag(-1, 2, -1) / h^2` with its extreme eigenvalues.
pub fn laplacian_1d(n: usize, h: f64) -> Result<(DMatrix<f64>, f64, f64)> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("grid size must be at least 2, got {n}")));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!("mesh width must be positive, got {h}")));
    }
    let s = 1.0 / (h * h);
    let m = DMatrix::from_fn(n, n, |i, j| match i.abs_diff(j) {
        0 => 2.0 * s,
        1 => -s,
        _ => 0.0,
    });
    let lambda = |k: usize| (2.0 - 2.0 * (k as f64 * std::f64::consts::PI / (n + 1) as f64).cos()) * s;
    Ok((m, lambda(1), lambda(n)))
}

/// Orthonormal sine basis `Q_jk = sqrt(2/(n+1)) sin(jk pi/(n+1))`, the
/// eigenvectors of the 1D Laplacian.
pub fn sine_basis(n: usize) -> DMatrix<f64> {
    let c = (2.0 / (n + 1) as f64).sqrt();
    DMatrix::from_fn(n, n, |j, k| {
        c * (((j + 1) * (k + 1)) as f64 * std::f64::consts::PI / (n + 1) as f64).sin()
    })
}

impl KronSumOperator {
    pub fn new(sizes: Vec<usize>, terms: Vec<KronTerm>, bounds: SpectrumBounds) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::InvalidOrder(sizes.len()));
        }
        if terms.is_empty() {
            return Err(Error::InvalidArgument("operator needs at least one term".into()));
        }
        for term in &terms {
            if term.len() != sizes.len() {
                return Err(Error::ShapeMismatch(format!(
                    "term with {} factors for order {}",
                    term.len(),
                    sizes.len()
                )));
            }
            for (m, f) in term.iter().enumerate() {
                if let Some(f) = f {
                    if f.shape() != (sizes[m], sizes[m]) {
                        return Err(Error::ShapeMismatch(format!(
                            "factor for mode {} is {}x{}, expected {}x{}",
                            m + 1,
                            f.nrows(),
                            f.ncols(),
                            sizes[m],
                            sizes[m]
                        )));
                    }
                }
            }
        }
        Ok(Self { sizes, terms, bounds })
    }

    /// `sum_i I ⊗ ... ⊗ L_i ⊗ ... ⊗ I`.
    pub fn kronecker_sum(factors: Vec<DMatrix<f64>>, bounds: SpectrumBounds) -> Result<Self> {
        let d = factors.len();
        let sizes = factors.iter().map(|f| f.nrows()).collect();
        let terms = factors
            .into_iter()
            .enumerate()
            .map(|(i, f)| {
                let mut term: KronTerm = vec![None; d];
                term[i] = Some(f);
                term
            })
            .collect();
        Self::new(sizes, terms, bounds)
    }

    pub fn identity(sizes: Vec<usize>) -> Result<Self> {
        let d = sizes.len();
        Self::new(sizes, vec![vec![None; d]], SpectrumBounds::new(1.0, 1.0)?)
    }

    /// Kronecker sum of 1D Laplacians; `h = None` means `1/(n+1)`.
    pub fn laplacian(d: usize, n: usize, h: Option<f64>) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidOrder(d));
        }
        let h = h.unwrap_or(1.0 / (n + 1) as f64);
        let (l, lo, hi) = laplacian_1d(n, h)?;
        let bounds = SpectrumBounds::new(d as f64 * lo, d as f64 * hi)?;
        Self::kronecker_sum(vec![l; d], bounds)
    }

    /// Kronecker sum of `Q diag(linspace(1, kappa, n)) Q^T / d`, whose
    /// spectrum fills `[1, kappa]` exactly.
    pub fn synthetic(d: usize, n: usize, kappa: f64) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidOrder(d));
        }
        if n < 2 {
            return Err(Error::InvalidArgument(format!("mode size must be at least 2, got {n}")));
        }
        if !(kappa >= 1.0 && kappa.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "condition number must be >= 1, got {kappa}"
            )));
        }
        let q = sine_basis(n);
        let diag = nalgebra::DVector::from_fn(n, |k, _| (1.0 + (kappa - 1.0) * k as f64 / (n - 1) as f64) / d as f64);
        let s = &q * DMatrix::from_diagonal(&diag) * q.transpose();
        let s = (&s + s.transpose()) * 0.5;
        Self::kronecker_sum(vec![s; d], SpectrumBounds::new(1.0, kappa)?)
    }

    pub fn order(&self) -> usize {
        self.sizes.len()
    }

    pub fn mode_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn terms(&self) -> &[KronTerm] {
        &self.terms
    }

    pub fn bounds(&self) -> SpectrumBounds {
        self.bounds
    }

    /// Per-mode factors when the operator is exactly `sum_i I ⊗ .. L_i .. ⊗ I`.
    pub fn sum_factors(&self) -> Option<Vec<&DMatrix<f64>>> {
        let d = self.order();
        if self.terms.len() != d {
            return None;
        }
        let mut factors: Vec<Option<&DMatrix<f64>>> = vec![None; d];
        for term in &self.terms {
            let mut slots = term.iter().enumerate().filter_map(|(m, f)| f.as_ref().map(|f| (m, f)));
            let (m, f) = slots.next()?;
            if slots.next().is_some() || factors[m].is_some() {
                return None;
            }
            factors[m] = Some(f);
        }
        factors.into_iter().collect()
    }

    /// Materialized `N x N` matrix (row-major multi-index, first mode slowest).
    pub fn to_dense_matrix(&self, cap: usize) -> Result<DMatrix<f64>> {
        let n = self
            .sizes
            .iter()
            .try_fold(1usize, |acc, &s| acc.checked_mul(s))
            .filter(|&n| n.checked_mul(n).is_some_and(|e| e <= cap))
            .ok_or(Error::Capacity {
                entries: self.sizes.iter().map(|&s| s as f64).product::<f64>().powi(2) as usize,
                limit: cap,
            })?;
        let mut out = DMatrix::zeros(n, n);
        for term in &self.terms {
            let mut k = DMatrix::from_element(1, 1, 1.0);
            for (m, f) in term.iter().enumerate() {
                k = match f {
                    Some(f) => k.kronecker(f),
                    None => k.kronecker(&DMatrix::identity(self.sizes[m], self.sizes[m])),
                };
            }
            out += k;
        }
        Ok(out)
    }

    fn check(&self, u: &HTensor) -> Result<()> {
        if u.mode_sizes() != self.sizes.as_slice() {
            return Err(Error::ShapeMismatch(format!(
                "operator acts on {:?}, tensor has mode sizes {:?}",
                self.sizes,
                u.mode_sizes()
            )));
        }
        Ok(())
    }

    /// Exact `A u`.
    ///
    /// When every term acts on at most one mode the bond dimensions at most
    /// double, independent of the number of terms. Otherwise each term is
    /// applied separately and the results are summed.
    pub fn apply(&self, u: &HTensor) -> Result<HTensor> {
        self.check(u)?;
        if u.is_zero() {
            return Ok(u.clone());
        }
        let mut mode_mats: Vec<Option<DMatrix<f64>>> = vec![None; self.order()];
        let mut identity_terms = 0usize;
        for term in &self.terms {
            let mut slots = term.iter().enumerate().filter_map(|(m, f)| f.as_ref().map(|f| (m, f)));
            match (slots.next(), slots.next()) {
                (None, _) => identity_terms += 1,
                (Some((m, f)), None) => {
                    mode_mats[m] = Some(match mode_mats[m].take() {
                        Some(acc) => acc + f,
                        None => f.clone(),
                    });
                }
                _ => return self.apply_termwise(u),
            }
        }
        Ok(apply_separable_sum(u, &mode_mats, identity_terms as f64))
    }

    fn apply_termwise(&self, u: &HTensor) -> Result<HTensor> {
        let mut acc: Option<HTensor> = None;
        for term in &self.terms {
            let refs: Vec<Option<&DMatrix<f64>>> = term.iter().map(|f| f.as_ref()).collect();
            let t = u.apply_mode_matrices(&refs)?;
            acc = Some(match acc {
                None => t,
                Some(a) => HTensor::axpy(1.0, &t, &a)?,
            });
        }
        Ok(acc.expect("at least one term"))
    }

    /// Exact residual `A u - f`, with numerically zero directions removed.
    pub fn residual(&self, u: &HTensor, f: &HTensor) -> Result<HTensor> {
        let au = self.apply(u)?;
        Ok(HTensor::axpy(-1.0, f, &au)?.compress())
    }

    /// Residual `r` with `||r - (A u - f)|| <= delta`, obtained by certified
    /// truncation of the exact residual.
    pub fn residual_inexact(&self, u: &HTensor, f: &HTensor, delta: f64) -> Result<HTensor> {
        Ok(self.residual_inexact_certified(u, f, delta)?.tensor)
    }

    pub fn residual_inexact_certified(&self, u: &HTensor, f: &HTensor, delta: f64) -> Result<Truncated> {
        if !(delta >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tolerance must be nonnegative, got {delta}"
            )));
        }
        let au = self.apply(u)?;
        let r = HTensor::axpy(-1.0, f, &au)?;
        Ok(r.hard_truncate_certified(&Truncation::Tolerance(delta)))
    }
}

/// `c0 u + sum_i M_i ×_i u` as an exact network with two channels per bond:
/// channel 0 carries the untouched part of a subtree, channel 1 the part on
/// which exactly one mode matrix has acted.
fn apply_separable_sum(u: &HTensor, mode_mats: &[Option<DMatrix<f64>>], c0: f64) -> HTensor {
    let tree = u.tree().clone();
    let cores = u.absorbed_cores();
    // the top site collects the channels of all its bonds
    let top: SiteId = tree.sites().iter().position(|s| s.mode.is_none()).unwrap_or(0);
    let toward_top = |s: SiteId| -> Option<EdgeId> {
        (s != top).then(|| tree.bond_between(s, tree.next_hop(s, top)).expect("neighbors"))
    };
    // whether a mode matrix acts inside the part of each bond away from top
    let mut active = vec![false; tree.num_edges()];
    for (e, edge) in tree.edges().iter().enumerate() {
        let (a, b) = edge.sites;
        let away = if toward_top(a) == Some(e) { a } else { b };
        active[e] = tree.modes_away(away, e).iter().any(|&m| mode_mats[m].is_some());
    }
    let channels = |e: EdgeId| if active[e] { 2 } else { 1 };

    let mut out = Vec::with_capacity(tree.num_sites());
    for (s, site) in tree.sites().iter().enumerate() {
        let core = &cores[s];
        let new = match site.mode {
            Some(m) => {
                let e = site.bonds[0];
                let n = core.dims[0];
                let r = core.dims[1];
                let frame = DMatrix::from_row_slice(n, r, &core.data);
                let applied = mode_mats[m].as_ref().map(|mat| mat * &frame);
                let blocks: Vec<DMatrix<f64>> = if s == top {
                    // channel 0 of the bond pairs with the own mode matrix or c0
                    let own = match &applied {
                        Some(a) => a + &frame * c0,
                        None => &frame * c0,
                    };
                    if active[e] {
                        vec![own, frame]
                    } else {
                        vec![own]
                    }
                } else if let Some(a) = applied {
                    vec![frame, a]
                } else {
                    vec![frame]
                };
                let wide = DMatrix::from_fn(n, r * blocks.len(), |i, j| blocks[j / r][(i, j % r)]);
                let mut data = Vec::with_capacity(wide.len());
                for i in 0..n {
                    data.extend(wide.row(i).iter());
                }
                Core::new(vec![n, wide.ncols()], data)
            }
            None => {
                let bonds = &site.bonds;
                let parent = toward_top(s);
                let ch: Vec<usize> = bonds.iter().map(|&e| channels(e)).collect();
                let r: Vec<usize> = (0..3).map(|k| core.dims[k]).collect();
                let dims: Vec<usize> = (0..3).map(|k| ch[k] * r[k]).collect();
                let mut new = Core::zeros(dims.clone());
                for c0_ in 0..ch[0] {
                    for c1 in 0..ch[1] {
                        for c2 in 0..ch[2] {
                            let c = [c0_, c1, c2];
                            let weight = match parent {
                                Some(p) => {
                                    let pk = axis_of(&tree, s, p);
                                    let incoming: usize = (0..3).filter(|&k| k != pk).map(|k| c[k]).sum();
                                    if incoming == c[pk] {
                                        1.0
                                    } else {
                                        0.0
                                    }
                                }
                                None => match c.iter().sum::<usize>() {
                                    0 => c0,
                                    1 => 1.0,
                                    _ => 0.0,
                                },
                            };
                            if weight == 0.0 {
                                continue;
                            }
                            for i in 0..r[0] {
                                for j in 0..r[1] {
                                    for k in 0..r[2] {
                                        let src = core.data[(i * r[1] + j) * r[2] + k];
                                        let (a, b, cc) = (c[0] * r[0] + i, c[1] * r[1] + j, c[2] * r[2] + k);
                                        new.data[(a * dims[1] + b) * dims[2] + cc] = weight * src;
                                    }
                                }
                            }
                        }
                    }
                }
                new
            }
        };
        out.push(new);
    }
    HTensor::from_parts(tree, u.mode_sizes().to_vec(), out, crate::htensor::Gauge::Free)
}
