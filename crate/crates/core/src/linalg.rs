//! Small dense kernels on top of nalgebra, plus the row-major core storage
//! used by the hierarchical format.

use nalgebra::DMatrix;

/// Thin QR: `m = q * r` with `q` having `min(rows, cols)` orthonormal columns.
pub(crate) fn thin_qr(m: DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        let k = rows.min(cols);
        return (DMatrix::zeros(rows, k), DMatrix::zeros(k, cols));
    }
    let qr = m.qr();
    (qr.q(), qr.r())
}

/// Thin SVD with singular values sorted in nonincreasing order.
///
/// Returns `(u, sigma, v)` with `m = u * diag(sigma) * v^T`. Backed by faer;
/// nalgebra's bidiagonal SVD loses accuracy on strongly graded matrices.
pub(crate) fn svd_sorted(m: DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let (rows, cols) = m.shape();
    let k = rows.min(cols);
    if k == 0 {
        return (DMatrix::zeros(rows, 0), Vec::new(), DMatrix::zeros(cols, 0));
    }
    let fm = faer::Mat::<f64>::from_fn(rows, cols, |i, j| m[(i, j)]);
    let svd = fm.thin_svd().expect("svd converges on finite input");
    let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
    let mut idx: Vec<usize> = (0..k).collect();
    idx.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let sigma = idx.iter().map(|&i| s[i].max(0.0)).collect();
    let u_sorted = DMatrix::from_fn(rows, k, |r, c| u[(r, idx[c])]);
    let v_sorted = DMatrix::from_fn(cols, k, |r, c| v[(r, idx[c])]);
    (u_sorted, sigma, v_sorted)
}

/// Singular values of a dense matrix, nonincreasing.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let fm = faer::Mat::<f64>::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
    let mut s: Vec<f64> = fm
        .singular_values()
        .expect("svd converges on finite input")
        .into_iter()
        .map(|v| v.max(0.0))
        .collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Number of entries kept by the relative zero cutoff: `sigma_k > cutoff * sigma_max`.
pub(crate) fn numerical_rank(sigma: &[f64], rel_cutoff: f64) -> usize {
    let max = sigma.first().copied().unwrap_or(0.0);
    if max <= 0.0 {
        return 0;
    }
    sigma.iter().take_while(|&&s| s > rel_cutoff * max).count()
}

/// Dense row-major tensor of small order, used for mode frames and transfer
/// tensors.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Core {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Core {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        Self { dims, data }
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let len = dims.iter().product();
        Self {
            dims,
            data: vec![0.0; len],
        }
    }

    fn split(&self, axis: usize) -> (usize, usize, usize) {
        let outer = self.dims[..axis].iter().product();
        let inner = self.dims[axis + 1..].iter().product();
        (outer, self.dims[axis], inner)
    }

    /// Matricization with `axis` as columns and the remaining axes, in order,
    /// as rows.
    pub fn unfold(&self, axis: usize) -> DMatrix<f64> {
        let (outer, mid, inner) = self.split(axis);
        DMatrix::from_fn(outer * inner, mid, |row, c| {
            let (o, i) = (row / inner.max(1), row % inner.max(1));
            self.data[(o * mid + c) * inner + i]
        })
    }

    /// Inverse of [`Core::unfold`] where `axis` may change its length to
    /// `m.ncols()`.
    pub fn fold(m: &DMatrix<f64>, axis: usize, mut dims: Vec<usize>) -> Self {
        dims[axis] = m.ncols();
        let outer: usize = dims[..axis].iter().product();
        let inner: usize = dims[axis + 1..].iter().product();
        let mid = dims[axis];
        let mut data = vec![0.0; outer * mid * inner];
        for o in 0..outer {
            for c in 0..mid {
                for i in 0..inner {
                    data[(o * mid + c) * inner + i] = m[(o * inner + i, c)];
                }
            }
        }
        Self { dims, data }
    }

    /// `new[.., j, ..] = sum_i self[.., i, ..] * m[i, j]` along `axis`.
    pub fn contract_axis(&self, axis: usize, m: &DMatrix<f64>) -> Self {
        debug_assert_eq!(self.dims[axis], m.nrows());
        let unfolded = self.unfold(axis) * m;
        Self::fold(&unfolded, axis, self.dims.clone())
    }

    /// Keeps the first `k` indices along `axis`.
    pub fn truncate_axis(&self, axis: usize, k: usize) -> Self {
        let (outer, mid, inner) = self.split(axis);
        debug_assert!(k <= mid);
        let mut dims = self.dims.clone();
        dims[axis] = k;
        let mut data = Vec::with_capacity(outer * k * inner);
        for o in 0..outer {
            let start = o * mid * inner;
            data.extend_from_slice(&self.data[start..start + k * inner]);
        }
        Self { dims, data }
    }

    /// Multiplies slice `i` along `axis` by `weights[i]`.
    pub fn scale_axis(&mut self, axis: usize, weights: &[f64]) {
        let (outer, mid, inner) = self.split(axis);
        debug_assert_eq!(mid, weights.len());
        for o in 0..outer {
            for (c, w) in weights.iter().enumerate() {
                let start = (o * mid + c) * inner;
                for v in &mut self.data[start..start + inner] {
                    *v *= w;
                }
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    /// Axis permutation: axis `k` of the result is axis `perm[k]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.dims.len();
        debug_assert_eq!(perm.len(), n);
        let dims: Vec<usize> = perm.iter().map(|&p| self.dims[p]).collect();
        let mut strides = vec![1usize; n];
        for k in (0..n.saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * self.dims[k + 1];
        }
        let out_strides: Vec<usize> = perm.iter().map(|&p| strides[p]).collect();
        let len = self.data.len();
        let mut data = Vec::with_capacity(len);
        let mut idx = vec![0usize; n];
        for _ in 0..len {
            let src: usize = idx.iter().zip(&out_strides).map(|(i, s)| i * s).sum();
            data.push(self.data[src]);
            for k in (0..n).rev() {
                idx[k] += 1;
                if idx[k] < dims[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
        Self { dims, data }
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}
