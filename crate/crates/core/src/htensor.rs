//! Hierarchical tensors on a [`DimensionTree`].
//!
//! The representation stores one core per site of the unrooted tree network:
//! leaves hold an `n_i x r` mode frame, interior sites a three-way transfer
//! tensor whose axes follow [`Site::bonds`](crate::dim_tree::Site). A
//! [`Gauge`] records which part of the network is not orthonormal:
//!
//! * `Free`: no orthogonality is known,
//! * `Site(c)`: every core is orthonormal towards site `c`,
//! * `Edge { edge, sigma }`: every core is orthonormal towards bond `edge`,
//!   which carries the diagonal matrix `diag(sigma)`. The entries of `sigma`
//!   are then exactly the singular values of the matricization of that edge.
//!
//! Moving the gauge between neighboring sites is one QR step of cost
//! `O(r^4 + r^2 n)`; exposing the spectrum of an edge is one SVD of the same
//! order.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::dim_tree::{DimensionTree, EdgeId, SiteId};
use crate::error::{Error, Result};
use crate::linalg::{numerical_rank, svd_sorted, thin_qr, Core};

/// Singular values below this fraction of the largest one count as zero.
pub const ZERO_CUTOFF: f64 = 1e-14;

/// Default bound on the number of entries materialized by dense conversions.
pub const DENSE_CAP: usize = 1 << 24;

/// Location of the non-orthonormal part of a representation.
#[derive(Debug, Clone, PartialEq)]
pub enum Gauge {
    Free,
    Site(SiteId),
    Edge { edge: EdgeId, sigma: Vec<f64> },
}

/// Nonincreasing singular values of the matricization of one edge.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSpectrum {
    pub edge: EdgeId,
    pub sigma: Vec<f64>,
}

impl EdgeSpectrum {
    /// Number of nonzero singular values.
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.sigma.get(i).copied().unwrap_or(0.0)
    }

    pub fn l2_norm(&self) -> f64 {
        self.sigma.iter().map(|s| s * s).sum::<f64>().sqrt()
    }

    /// `l2` distance to another spectrum, both padded with zeros.
    pub fn distance(&self, other: &EdgeSpectrum) -> f64 {
        let len = self.sigma.len().max(other.sigma.len());
        (0..len)
            .map(|i| (self.get(i) - other.get(i)).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// How [`HTensor::hard_truncate`] decides which singular values to drop.
#[derive(Debug, Clone, PartialEq)]
pub enum Truncation {
    /// Absolute error budget in the tensor norm.
    Tolerance(f64),
    /// Maximal rank per edge, indexed like the tree's edge list.
    RankCaps(Vec<usize>),
}

/// Outcome of a truncation together with its certified error bound.
#[derive(Debug, Clone)]
pub struct Truncated {
    pub tensor: HTensor,
    /// Norm of the discarded singular values at each edge, in sweep order.
    pub discarded: Vec<f64>,
    /// Certified bound on `|| tensor - input ||`.
    pub error_bound: f64,
}

/// A tensor in hierarchical format. Values are immutable; operations return
/// new tensors.
#[derive(Debug, Clone)]
pub struct HTensor {
    tree: Arc<DimensionTree>,
    sizes: Vec<usize>,
    cores: Vec<Core>,
    gauge: Gauge,
}

impl HTensor {
    fn check_sizes(tree: &DimensionTree, sizes: &[usize]) -> Result<()> {
        if sizes.len() != tree.order() {
            return Err(Error::ShapeMismatch(format!(
                "{} mode sizes for a tree of order {}",
                sizes.len(),
                tree.order()
            )));
        }
        if sizes.contains(&0) {
            return Err(Error::ShapeMismatch("mode sizes must be positive".into()));
        }
        Ok(())
    }

    fn core_dims(tree: &DimensionTree, sizes: &[usize], site: SiteId, bond: &dyn Fn(EdgeId) -> usize) -> Vec<usize> {
        let s = tree.site(site);
        let mut dims = Vec::with_capacity(3);
        if let Some(m) = s.mode {
            dims.push(sizes[m]);
        }
        dims.extend(s.bonds.iter().map(|&e| bond(e)));
        dims
    }

    /// The zero tensor; all ranks are 0.
    pub fn zeros(tree: Arc<DimensionTree>, sizes: &[usize]) -> Result<Self> {
        Self::check_sizes(&tree, sizes)?;
        let cores = (0..tree.num_sites())
            .map(|s| Core::zeros(Self::core_dims(&tree, sizes, s, &|_| 0)))
            .collect();
        Ok(Self {
            tree,
            sizes: sizes.to_vec(),
            cores,
            gauge: Gauge::Free,
        })
    }

    /// Elementary tensor `v_1 ⊗ ... ⊗ v_d`.
    pub fn rank_one(tree: Arc<DimensionTree>, vectors: &[DVector<f64>]) -> Result<Self> {
        Self::sum_of_rank_one(tree, &[(1.0, vectors.to_vec())])
    }

    /// `sum_j w_j v_{j,1} ⊗ ... ⊗ v_{j,d}` with ranks equal to the number of
    /// terms (before any compression).
    pub fn sum_of_rank_one(tree: Arc<DimensionTree>, terms: &[(f64, Vec<DVector<f64>>)]) -> Result<Self> {
        let d = tree.order();
        let Some(first) = terms.first() else {
            return Err(Error::InvalidArgument("no terms given".into()));
        };
        let sizes: Vec<usize> = first.1.iter().map(|v| v.len()).collect();
        Self::check_sizes(&tree, &sizes)?;
        for (_, vs) in terms {
            if vs.len() != d || vs.iter().zip(&sizes).any(|(v, &n)| v.len() != n) {
                return Err(Error::ShapeMismatch("terms have inconsistent mode sizes".into()));
            }
        }
        let j = terms.len();
        let mut cores = Vec::with_capacity(tree.num_sites());
        for (s, site) in tree.sites().iter().enumerate() {
            let core = match site.mode {
                Some(m) => {
                    let n = sizes[m];
                    let mut data = vec![0.0; n * j];
                    for (k, (w, vs)) in terms.iter().enumerate() {
                        let weight = if s == 0 { *w } else { 1.0 };
                        for i in 0..n {
                            data[i * j + k] = weight * vs[m][i];
                        }
                    }
                    Core::new(vec![n, j], data)
                }
                None => {
                    let mut core = Core::zeros(vec![j, j, j]);
                    for k in 0..j {
                        core.data[(k * j + k) * j + k] = 1.0;
                    }
                    if s == 0 {
                        let w: Vec<f64> = terms.iter().map(|t| t.0).collect();
                        core.scale_axis(0, &w);
                    }
                    core
                }
            };
            cores.push(core);
        }
        Ok(Self {
            tree,
            sizes,
            cores,
            gauge: Gauge::Free,
        })
    }

    /// Random cores with standard normal entries and the given bond
    /// dimensions (one per edge).
    pub fn random<R: Rng + ?Sized>(
        tree: Arc<DimensionTree>,
        sizes: &[usize],
        ranks: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        Self::check_sizes(&tree, sizes)?;
        if ranks.len() != tree.num_edges() {
            return Err(Error::ShapeMismatch(format!(
                "{} ranks for {} edges",
                ranks.len(),
                tree.num_edges()
            )));
        }
        let cores = (0..tree.num_sites())
            .map(|s| {
                let dims = Self::core_dims(&tree, sizes, s, &|e| ranks[e]);
                let len = dims.iter().product();
                Core::new(dims, (0..len).map(|_| rng.sample(StandardNormal)).collect())
            })
            .collect();
        Ok(Self {
            tree,
            sizes: sizes.to_vec(),
            cores,
            gauge: Gauge::Free,
        })
    }

    pub(crate) fn from_parts(tree: Arc<DimensionTree>, sizes: Vec<usize>, cores: Vec<Core>, gauge: Gauge) -> Self {
        Self {
            tree,
            sizes,
            cores,
            gauge,
        }
    }

    pub fn tree(&self) -> &Arc<DimensionTree> {
        &self.tree
    }

    pub fn mode_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn gauge(&self) -> &Gauge {
        &self.gauge
    }

    /// Axis of `edge` in the core of `site`.
    pub(crate) fn axis_of(&self, site: SiteId, edge: EdgeId) -> usize {
        axis_of(&self.tree, site, edge)
    }

    /// Representation rank of each edge (the bond dimension).
    pub fn ranks(&self) -> Vec<usize> {
        (0..self.tree.num_edges()).map(|e| self.bond_dim(e)).collect()
    }

    pub fn bond_dim(&self, edge: EdgeId) -> usize {
        let site = self.tree.edge(edge).sites.0;
        self.cores[site].dims[self.axis_of(site, edge)]
    }

    pub fn max_rank(&self) -> usize {
        self.ranks().into_iter().max().unwrap_or(0)
    }

    pub fn min_rank(&self) -> usize {
        self.ranks().into_iter().min().unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.ranks().contains(&0)
    }

    pub fn same_space(&self, other: &HTensor) -> bool {
        (Arc::ptr_eq(&self.tree, &other.tree) || self.tree == other.tree) && self.sizes == other.sizes
    }

    fn ensure_same_space(&self, other: &HTensor) -> Result<()> {
        if self.same_space(other) {
            Ok(())
        } else {
            Err(Error::TreeMismatch)
        }
    }

    fn zero_like(&self) -> HTensor {
        HTensor::zeros(self.tree.clone(), &self.sizes).expect("sizes already validated")
    }

    /// Cores with an edge gauge multiplied into the first endpoint.
    pub(crate) fn absorbed_cores(&self) -> Vec<Core> {
        let mut cores = self.cores.clone();
        if let Gauge::Edge { edge, sigma } = &self.gauge {
            let site = self.tree.edge(*edge).sites.0;
            let axis = self.axis_of(site, *edge);
            cores[site].scale_axis(axis, sigma);
        }
        cores
    }

    /// Folds an edge gauge into one of its endpoints, leaving that endpoint as
    /// the orthogonality center.
    fn absorb_gauge_into(&mut self, site: SiteId) {
        if let Gauge::Edge { edge, sigma } = std::mem::replace(&mut self.gauge, Gauge::Free) {
            debug_assert!(self.tree.edge(edge).touches(site));
            let axis = self.axis_of(site, edge);
            self.cores[site].scale_axis(axis, &sigma);
            self.gauge = Gauge::Site(site);
        }
    }

    /// QR step moving the center from `from` to its neighbor `to`.
    fn shift_center(&mut self, from: SiteId, to: SiteId) {
        let edge = self.tree.bond_between(from, to).expect("neighboring sites");
        let axis = self.axis_of(from, edge);
        let (q, r) = thin_qr(self.cores[from].unfold(axis));
        self.cores[from] = Core::fold(&q, axis, self.cores[from].dims.clone());
        let to_axis = self.axis_of(to, edge);
        self.cores[to] = self.cores[to].contract_axis(to_axis, &r.transpose());
    }

    fn orthogonalize_toward(&mut self, center: SiteId) {
        let n = self.tree.num_sites();
        let mut order: Vec<SiteId> = (0..n).filter(|&s| s != center).collect();
        order.sort_by_key(|&s| std::cmp::Reverse(self.tree.distance(s, center)));
        for s in order {
            let next = self.tree.next_hop(s, center);
            self.shift_center(s, next);
        }
        self.gauge = Gauge::Site(center);
    }

    /// Makes `site` the orthogonality center.
    pub(crate) fn center_at(&mut self, site: SiteId) {
        match self.gauge.clone() {
            Gauge::Free => self.orthogonalize_toward(site),
            Gauge::Site(c) => {
                let path = self.tree.path(c, site);
                for w in path.windows(2) {
                    self.shift_center(w[0], w[1]);
                }
                self.gauge = Gauge::Site(site);
            }
            Gauge::Edge { edge, .. } => {
                let (a, b) = self.tree.edge(edge).sites;
                let near = if self.tree.distance(a, site) <= self.tree.distance(b, site) {
                    a
                } else {
                    b
                };
                self.absorb_gauge_into(near);
                self.center_at(site);
            }
        }
    }

    fn current_center_hint(&self) -> Option<SiteId> {
        match &self.gauge {
            Gauge::Free => None,
            Gauge::Site(c) => Some(*c),
            Gauge::Edge { edge, .. } => Some(self.tree.edge(*edge).sites.0),
        }
    }

    /// Puts the gauge on `edge` in SVD form. Singular values at or below
    /// `rel_cutoff * sigma_max` are discarded.
    pub(crate) fn canonicalize_in_place(&mut self, edge: EdgeId, rel_cutoff: f64) {
        if self.is_zero() {
            *self = self.zero_like();
            return;
        }
        if let Gauge::Edge { edge: e, .. } = &self.gauge {
            if *e == edge {
                return;
            }
        }
        let (a, b) = self.tree.edge(edge).sites;
        let x = match self.current_center_hint() {
            Some(c) if self.tree.distance(b, c) < self.tree.distance(a, c) => b,
            _ => a,
        };
        let y = if x == a { b } else { a };
        self.center_at(x);
        let axis_x = self.axis_of(x, edge);
        let (u, sigma, v) = svd_sorted(self.cores[x].unfold(axis_x));
        let k = numerical_rank(&sigma, rel_cutoff);
        if k == 0 {
            *self = self.zero_like();
            return;
        }
        let u = u.columns(0, k).into_owned();
        let v = v.columns(0, k).into_owned();
        self.cores[x] = Core::fold(&u, axis_x, self.cores[x].dims.clone());
        let axis_y = self.axis_of(y, edge);
        self.cores[y] = self.cores[y].contract_axis(axis_y, &v);
        self.gauge = Gauge::Edge {
            edge,
            sigma: sigma[..k].to_vec(),
        };
    }

    /// Replaces the spectrum on the gauge edge by `new_sigma`, which must be
    /// a nonincreasing sequence of positive values no longer than the current
    /// one; the trailing directions are dropped.
    pub(crate) fn replace_gauge_spectrum(&mut self, new_sigma: Vec<f64>) {
        let Gauge::Edge { edge, sigma } = &self.gauge else {
            panic!("replace_gauge_spectrum needs an edge gauge");
        };
        let edge = *edge;
        debug_assert!(new_sigma.len() <= sigma.len());
        let k = new_sigma.len();
        if k == 0 {
            *self = self.zero_like();
            return;
        }
        let (a, b) = self.tree.edge(edge).sites;
        for s in [a, b] {
            let axis = self.axis_of(s, edge);
            if self.cores[s].dims[axis] != k {
                self.cores[s] = self.cores[s].truncate_axis(axis, k);
            }
        }
        self.gauge = Gauge::Edge { edge, sigma: new_sigma };
    }

    /// Spectrum currently held by an edge gauge.
    pub fn gauge_spectrum(&self) -> Option<EdgeSpectrum> {
        match &self.gauge {
            Gauge::Edge { edge, sigma } => Some(EdgeSpectrum {
                edge: *edge,
                sigma: sigma.clone(),
            }),
            _ => None,
        }
    }

    /// Same tensor with the root element on `edge`: every core orthonormal and
    /// the singular values of the edge matricization exposed on the bond.
    pub fn canonicalize_at(&self, edge: EdgeId) -> HTensor {
        let mut out = self.clone();
        out.canonicalize_in_place(edge, ZERO_CUTOFF);
        out
    }

    /// Singular values of every edge matricization, in sweep order.
    pub fn hsvd_spectra(&self) -> Vec<EdgeSpectrum> {
        let mut work = self.clone();
        (0..self.tree.num_edges())
            .map(|t| {
                work.canonicalize_in_place(t, ZERO_CUTOFF);
                work.gauge_spectrum().unwrap_or(EdgeSpectrum {
                    edge: t,
                    sigma: Vec::new(),
                })
            })
            .collect()
    }

    /// Removes numerically zero directions on every edge; the represented
    /// tensor changes only at the level of the zero cutoff.
    pub fn compress(&self) -> HTensor {
        let mut work = self.clone();
        for t in 0..self.tree.num_edges() {
            work.canonicalize_in_place(t, ZERO_CUTOFF);
        }
        work
    }

    /// Error-controlled (or rank-capped) truncation of the HSVD.
    pub fn hard_truncate(&self, mode: &Truncation) -> HTensor {
        self.hard_truncate_certified(mode).tensor
    }

    /// [`HTensor::hard_truncate`] returning the certified error bound.
    ///
    /// In tolerance mode every edge first gets the budget `tol / sqrt(E)`, so
    /// the discarded energy sums to at most `tol^2`. Sequential truncation
    /// errors need not be orthogonal; the result is accepted when either the
    /// sum of per-edge errors or the directly measured error is within `tol`,
    /// and otherwise redone with the budget `tol / E`.
    pub fn hard_truncate_certified(&self, mode: &Truncation) -> Truncated {
        match mode {
            Truncation::RankCaps(caps) => {
                assert_eq!(caps.len(), self.tree.num_edges(), "one cap per edge");
                let (tensor, discarded) = self.truncation_sweep(|t, sigma| caps[t].min(sigma.len()));
                let error_bound = discarded.iter().sum();
                Truncated {
                    tensor,
                    discarded,
                    error_bound,
                }
            }
            Truncation::Tolerance(tol) => {
                let tol = tol.max(0.0);
                let e = self.tree.num_edges() as f64;
                let first = self.truncate_with_budget(tol / e.sqrt());
                let sum: f64 = first.1.iter().sum();
                if sum <= tol {
                    return Truncated {
                        tensor: first.0,
                        discarded: first.1,
                        error_bound: sum,
                    };
                }
                let measured = first.0.distance(self).expect("same space");
                if measured <= tol {
                    return Truncated {
                        tensor: first.0,
                        discarded: first.1,
                        error_bound: measured,
                    };
                }
                let (tensor, discarded) = self.truncate_with_budget(tol / e);
                let error_bound = discarded.iter().sum();
                Truncated {
                    tensor,
                    discarded,
                    error_bound,
                }
            }
        }
    }

    fn truncate_with_budget(&self, budget: f64) -> (HTensor, Vec<f64>) {
        let budget_sq = budget * budget;
        self.truncation_sweep(|_, sigma| {
            // smallest k whose tail energy fits into the budget
            let mut tail = 0.0;
            let mut k = sigma.len();
            while k > 0 {
                let next = tail + sigma[k - 1] * sigma[k - 1];
                if next > budget_sq {
                    break;
                }
                tail = next;
                k -= 1;
            }
            k
        })
    }

    fn truncation_sweep<F>(&self, keep: F) -> (HTensor, Vec<f64>)
    where
        F: Fn(EdgeId, &[f64]) -> usize,
    {
        let mut work = self.clone();
        let mut discarded = Vec::with_capacity(self.tree.num_edges());
        for t in 0..self.tree.num_edges() {
            work.canonicalize_in_place(t, ZERO_CUTOFF);
            let Some(spectrum) = work.gauge_spectrum() else {
                discarded.push(0.0);
                continue;
            };
            let k = keep(t, &spectrum.sigma);
            let dropped = spectrum.sigma[k..].iter().map(|s| s * s).sum::<f64>().sqrt();
            discarded.push(dropped);
            if k < spectrum.sigma.len() {
                work.replace_gauge_spectrum(spectrum.sigma[..k].to_vec());
            }
        }
        (work, discarded)
    }

    /// `a * u + v`, exact, with ranks adding up.
    pub fn axpy(a: f64, u: &HTensor, v: &HTensor) -> Result<HTensor> {
        u.ensure_same_space(v)?;
        if a == 0.0 || u.is_zero() {
            return Ok(v.clone());
        }
        if v.is_zero() {
            return Ok(u.scale(a));
        }
        let uc = u.absorbed_cores();
        let vc = v.absorbed_cores();
        let tree = &u.tree;
        let mut cores = Vec::with_capacity(tree.num_sites());
        for s in 0..tree.num_sites() {
            let (cu, cv) = (&uc[s], &vc[s]);
            let scale = if s == 0 { a } else { 1.0 };
            let core = if tree.site(s).mode.is_some() {
                let n = cu.dims[0];
                let (ru, rv) = (cu.dims[1], cv.dims[1]);
                let r = ru + rv;
                let mut data = vec![0.0; n * r];
                for i in 0..n {
                    for k in 0..ru {
                        data[i * r + k] = scale * cu.data[i * ru + k];
                    }
                    for k in 0..rv {
                        data[i * r + ru + k] = cv.data[i * rv + k];
                    }
                }
                Core::new(vec![n, r], data)
            } else {
                let du = &cu.dims;
                let dv = &cv.dims;
                let dims = vec![du[0] + dv[0], du[1] + dv[1], du[2] + dv[2]];
                let mut core = Core::zeros(dims.clone());
                for i in 0..du[0] {
                    for j in 0..du[1] {
                        for k in 0..du[2] {
                            core.data[(i * dims[1] + j) * dims[2] + k] = scale * cu.data[(i * du[1] + j) * du[2] + k];
                        }
                    }
                }
                for i in 0..dv[0] {
                    for j in 0..dv[1] {
                        for k in 0..dv[2] {
                            core.data[((i + du[0]) * dims[1] + j + du[1]) * dims[2] + k + du[2]] =
                                cv.data[(i * dv[1] + j) * dv[2] + k];
                        }
                    }
                }
                core
            };
            cores.push(core);
        }
        Ok(HTensor {
            tree: u.tree.clone(),
            sizes: u.sizes.clone(),
            cores,
            gauge: Gauge::Free,
        })
    }

    /// `s * self`.
    pub fn scale(&self, s: f64) -> HTensor {
        if s == 0.0 || self.is_zero() {
            return self.zero_like();
        }
        let mut out = self.clone();
        match &mut out.gauge {
            Gauge::Edge { edge, sigma } => {
                // sigma stays nonnegative; a sign goes into an endpoint core
                sigma.iter_mut().for_each(|v| *v *= s.abs());
                if s < 0.0 {
                    let site = out.tree.edge(*edge).sites.0;
                    out.cores[site].scale(-1.0);
                }
            }
            Gauge::Site(c) => {
                let c = *c;
                out.cores[c].scale(s);
            }
            Gauge::Free => out.cores[0].scale(s),
        }
        out
    }

    /// Tensor norm, computed through orthogonalization so that small
    /// differences of large tensors are resolved to working precision.
    pub fn norm(&self) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        match &self.gauge {
            Gauge::Edge { sigma, .. } => sigma.iter().map(|s| s * s).sum::<f64>().sqrt(),
            Gauge::Site(c) => self.cores[*c].frobenius(),
            Gauge::Free => {
                let mut work = self.clone();
                work.orthogonalize_toward(0);
                work.cores[0].frobenius()
            }
        }
    }

    /// `|| self - other ||`.
    pub fn distance(&self, other: &HTensor) -> Result<f64> {
        Ok(HTensor::axpy(-1.0, other, self)?.norm())
    }

    /// Euclidean inner product.
    pub fn inner(u: &HTensor, v: &HTensor) -> Result<f64> {
        u.ensure_same_space(v)?;
        if u.is_zero() || v.is_zero() {
            return Ok(0.0);
        }
        let uc = u.absorbed_cores();
        let vc = v.absorbed_cores();
        let (a, b) = u.tree.edge(0).sites;
        let ga = environment(&u.tree, &uc, &vc, a, 0);
        let gb = environment(&u.tree, &uc, &vc, b, 0);
        Ok(ga.component_mul(&gb).sum())
    }

    /// Full array, subject to [`DENSE_CAP`].
    pub fn to_dense(&self) -> Result<ArrayD<f64>> {
        self.to_dense_capped(DENSE_CAP)
    }

    pub fn to_dense_capped(&self, cap: usize) -> Result<ArrayD<f64>> {
        let entries = checked_len(&self.sizes, cap)?;
        if self.is_zero() {
            return Ok(ArrayD::zeros(IxDyn(&self.sizes)));
        }
        let cores = self.absorbed_cores();
        let (a, b) = self.tree.edge(0).sites;
        let left = subtree_matrix(&self.tree, &cores, a, 0);
        let right = subtree_matrix(&self.tree, &cores, b, 0);
        let full = &left * right.transpose();
        let mut modes = self.tree.modes_away(a, 0);
        modes.extend(self.tree.modes_away(b, 0));
        let shape: Vec<usize> = modes.iter().map(|&m| self.sizes[m]).collect();
        let mut data = Vec::with_capacity(entries);
        for r in 0..full.nrows() {
            for c in 0..full.ncols() {
                data.push(full[(r, c)]);
            }
        }
        let arr = ArrayD::from_shape_vec(IxDyn(&shape), data).expect("shape matches contraction");
        let mut perm = vec![0; modes.len()];
        for (axis, &m) in modes.iter().enumerate() {
            perm[m] = axis;
        }
        Ok(arr.permuted_axes(IxDyn(&perm)).as_standard_layout().into_owned())
    }

    /// Exact hierarchical representation of a dense array (ranks equal to the
    /// ranks of the dense matricizations), truncated to `tol` when positive.
    pub fn from_dense(x: &ArrayD<f64>, tree: Arc<DimensionTree>, tol: f64) -> Result<HTensor> {
        let sizes = x.shape().to_vec();
        Self::check_sizes(&tree, &sizes)?;
        checked_len(&sizes, DENSE_CAP)?;
        let zero = HTensor::zeros(tree.clone(), &sizes)?;
        let mut cores: Vec<Option<Core>> = vec![None; tree.num_sites()];
        let (a, b) = tree.edge(0).sites;
        let Some(basis_a) = dense_basis(x, &tree, a, 0, &mut cores) else {
            return Ok(zero);
        };
        let Some(basis_b) = dense_basis(x, &tree, b, 0, &mut cores) else {
            return Ok(zero);
        };
        let rows = tree.modes_away(a, 0);
        let cols = tree.modes_away(b, 0);
        let m = dense_unfold(x, &rows, &cols);
        let coupling = basis_a.transpose() * m * &basis_b;
        let axis = axis_of(&tree, a, 0);
        let core_a = cores[a].take().expect("basis computed");
        cores[a] = Some(core_a.contract_axis(axis, &coupling));
        let out = HTensor {
            tree,
            sizes,
            cores: cores.into_iter().map(|c| c.expect("all sites visited")).collect(),
            gauge: Gauge::Free,
        };
        if tol > 0.0 {
            Ok(out.hard_truncate(&Truncation::Tolerance(tol)))
        } else {
            Ok(out.compress())
        }
    }

    /// Applies one matrix per mode to the leaf frames (`None` leaves the mode
    /// untouched). The result has the same bond dimensions.
    pub fn apply_mode_matrices(&self, mats: &[Option<&DMatrix<f64>>]) -> Result<HTensor> {
        if mats.len() != self.sizes.len() {
            return Err(Error::ShapeMismatch("one entry per mode required".into()));
        }
        let mut cores = self.absorbed_cores();
        let mut sizes = self.sizes.clone();
        for (s, site) in self.tree.sites().iter().enumerate() {
            let Some(m) = site.mode else { continue };
            if let Some(mat) = mats[m] {
                if mat.ncols() != self.sizes[m] {
                    return Err(Error::ShapeMismatch(format!(
                        "mode {} has size {}, matrix has {} columns",
                        m + 1,
                        self.sizes[m],
                        mat.ncols()
                    )));
                }
                let r = cores[s].dims[1];
                let frame = DMatrix::from_row_slice(self.sizes[m], r, &cores[s].data);
                let new = mat * frame;
                let data = (0..new.nrows())
                    .flat_map(|i| (0..r).map(move |k| (i, k)))
                    .map(|ik| new[ik])
                    .collect();
                cores[s] = Core::new(vec![new.nrows(), r], data);
                sizes[m] = mat.nrows();
            }
        }
        Ok(HTensor {
            tree: self.tree.clone(),
            sizes,
            cores,
            gauge: Gauge::Free,
        })
    }

    /// Leaf vectors and scalar of a tensor whose ranks are all at most one.
    pub fn rank_one_factors(&self) -> Option<(f64, Vec<DVector<f64>>)> {
        let compressed = self.canonicalize_at(0);
        if compressed.is_zero() {
            let vs = self.sizes.iter().map(|&n| DVector::zeros(n)).collect();
            return Some((0.0, vs));
        }
        if compressed.max_rank() > 1 {
            return None;
        }
        let mut scalar = compressed.gauge_spectrum().map(|s| s.sigma[0]).unwrap_or(1.0);
        let mut vectors = vec![DVector::zeros(0); self.sizes.len()];
        for (s, site) in self.tree.sites().iter().enumerate() {
            let core = &compressed.cores[s];
            match site.mode {
                Some(m) => vectors[m] = DVector::from_column_slice(&core.data),
                None => scalar *= core.data[0],
            }
        }
        Some((scalar, vectors))
    }
}

pub(crate) fn axis_of(tree: &DimensionTree, site: SiteId, edge: EdgeId) -> usize {
    let s = tree.site(site);
    let pos = s.bonds.iter().position(|&e| e == edge).expect("edge touches site");
    if s.mode.is_some() {
        pos + 1
    } else {
        pos
    }
}

fn checked_len(sizes: &[usize], cap: usize) -> Result<usize> {
    let mut entries: usize = 1;
    for &n in sizes {
        entries = entries.checked_mul(n).ok_or(Error::Capacity {
            entries: usize::MAX,
            limit: cap,
        })?;
    }
    if entries > cap {
        return Err(Error::Capacity { entries, limit: cap });
    }
    Ok(entries)
}

/// Bonds of `site` other than `edge`, in axis order.
fn other_bonds(tree: &DimensionTree, site: SiteId, edge: EdgeId) -> Vec<EdgeId> {
    tree.site(site).bonds.iter().copied().filter(|&e| e != edge).collect()
}

/// Interior core permuted to axes `(other_1, other_2, edge)`.
fn oriented_core(tree: &DimensionTree, core: &Core, site: SiteId, edge: EdgeId) -> (Core, EdgeId, EdgeId) {
    let others = other_bonds(tree, site, edge);
    let perm = [
        axis_of(tree, site, others[0]),
        axis_of(tree, site, others[1]),
        axis_of(tree, site, edge),
    ];
    (core.permuted(&perm), others[0], others[1])
}

/// Dense matrix of the subtree of `site` away from `edge`: rows follow
/// [`DimensionTree::modes_away`], columns the bond.
fn subtree_matrix(tree: &DimensionTree, cores: &[Core], site: SiteId, edge: EdgeId) -> DMatrix<f64> {
    if tree.site(site).mode.is_some() {
        return cores[site].unfold(1);
    }
    let (t, o1, o2) = oriented_core(tree, &cores[site], site, edge);
    let c1 = subtree_matrix(tree, cores, tree.edge(o1).other(site), o1);
    let c2 = subtree_matrix(tree, cores, tree.edge(o2).other(site), o2);
    let (r1, r2, re) = (t.dims[0], t.dims[1], t.dims[2]);
    let t_mat = DMatrix::from_row_slice(r1, r2 * re, &t.data);
    let w = &c1 * t_mat; // N1 x (r2 * re)
    let (n1, n2) = (c1.nrows(), c2.nrows());
    let mut out = DMatrix::zeros(n1 * n2, re);
    for m1 in 0..n1 {
        let block = DMatrix::from_fn(r2, re, |b, j| w[(m1, b * re + j)]);
        let prod = &c2 * block;
        out.rows_mut(m1 * n2, n2).copy_from(&prod);
    }
    out
}

/// Gram matrix `X_u^T X_v` of the subtrees of `site` away from `edge`.
fn environment(tree: &DimensionTree, uc: &[Core], vc: &[Core], site: SiteId, edge: EdgeId) -> DMatrix<f64> {
    if tree.site(site).mode.is_some() {
        return uc[site].unfold(1).transpose() * vc[site].unfold(1);
    }
    let (tu, o1, o2) = oriented_core(tree, &uc[site], site, edge);
    let (tv, _, _) = oriented_core(tree, &vc[site], site, edge);
    let g1 = environment(tree, uc, vc, tree.edge(o1).other(site), o1);
    let g2 = environment(tree, uc, vc, tree.edge(o2).other(site), o2);
    let (a_u, b_u, j_u) = (tu.dims[0], tu.dims[1], tu.dims[2]);
    let (a_v, b_v, j_v) = (tv.dims[0], tv.dims[1], tv.dims[2]);
    // x[a_u, (b_v, j_v)] = sum_{a_v} g1[a_u, a_v] tv[a_v, b_v, j_v]
    let x = &g1 * DMatrix::from_row_slice(a_v, b_v * j_v, &tv.data);
    // y[(a_u, b_u), j_v] = sum_{b_v} g2[b_u, b_v] x[a_u, b_v, j_v]
    let mut y = DMatrix::zeros(a_u * b_u, j_v);
    for a in 0..a_u {
        let block = DMatrix::from_fn(b_v, j_v, |b, j| x[(a, b * j_v + j)]);
        y.rows_mut(a * b_u, b_u).copy_from(&(&g2 * block));
    }
    let tu_mat = DMatrix::from_row_slice(a_u * b_u, j_u, &tu.data);
    tu_mat.transpose() * y
}

/// Matricization of a dense array with `rows` modes as rows (row-major in the
/// given order) and `cols` modes as columns.
pub(crate) fn dense_unfold(x: &ArrayD<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    let perm: Vec<usize> = rows.iter().chain(cols).copied().collect();
    let nr: usize = rows.iter().map(|&m| x.shape()[m]).product();
    let nc: usize = cols.iter().map(|&m| x.shape()[m]).product();
    let permuted = x.view().permuted_axes(IxDyn(&perm));
    let flat: Vec<f64> = permuted.iter().copied().collect();
    DMatrix::from_row_slice(nr, nc, &flat)
}

/// Orthonormal basis of the subtree of `site` away from `edge`, filling in
/// the cores of that subtree. `None` when the tensor is zero.
fn dense_basis(
    x: &ArrayD<f64>,
    tree: &DimensionTree,
    site: SiteId,
    edge: EdgeId,
    cores: &mut [Option<Core>],
) -> Option<DMatrix<f64>> {
    let rows = tree.modes_away(site, edge);
    let cols: Vec<usize> = (0..tree.order()).filter(|m| !rows.contains(m)).collect();
    let (u, sigma, _) = svd_sorted(dense_unfold(x, &rows, &cols));
    let k = numerical_rank(&sigma, ZERO_CUTOFF);
    if k == 0 {
        return None;
    }
    let basis = u.columns(0, k).into_owned();
    if tree.site(site).mode.is_some() {
        cores[site] = Some(Core::fold(&basis, 1, vec![basis.nrows(), k]));
        return Some(basis);
    }
    let others = other_bonds(tree, site, edge);
    let b1 = dense_basis(x, tree, tree.edge(others[0]).other(site), others[0], cores)?;
    let b2 = dense_basis(x, tree, tree.edge(others[1]).other(site), others[1], cores)?;
    let (n1, r1) = b1.shape();
    let (n2, r2) = b2.shape();
    // coefficients of the basis in the product of the child bases
    let first = b1.transpose() * DMatrix::from_fn(n1, n2 * k, |m1, c| basis[(m1 * n2 + c / k, c % k)]);
    let mut t = Core::zeros(vec![r1, r2, k]);
    for a in 0..r1 {
        let block = DMatrix::from_fn(n2, k, |m2, j| first[(a, m2 * k + j)]);
        let coeff = b2.transpose() * block;
        for b in 0..r2 {
            for j in 0..k {
                t.data[(a * r2 + b) * k + j] = coeff[(b, j)];
            }
        }
    }
    // axes of t are (others[0], others[1], edge); bring them to site order
    let order = [others[0], others[1], edge];
    let perm: Vec<usize> = tree
        .site(site)
        .bonds
        .iter()
        .map(|e| order.iter().position(|o| o == e).unwrap())
        .collect();
    cores[site] = Some(t.permuted(&perm));
    Some(basis)
}
