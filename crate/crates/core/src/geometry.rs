//! Unit-norm embedding pairs, simplex ETFs and similarity statistics.
//!
//! Negative-pair statistics are taken over ordered pairs `(i, j)`, `i != j`,
//! and every variance is a population variance (divide by the count).

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::math;
use crate::matrix::Matrix;

/// Tolerance on `| ||row|| - 1 |` accepted by [`EmbeddingSet::new`].
pub const UNIT_NORM_TOL: f64 = 1e-12;

/// Rows below this norm cannot be projected.
pub const MIN_ROW_NORM: f64 = 1e-30;

/// The two views of `n` instances: row `i` of `u` and row `i` of `v` form a positive pair.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    u: Matrix,
    v: Matrix,
}

impl EmbeddingSet {
    /// Validates shapes and unit rows (within [`UNIT_NORM_TOL`]).
    pub fn new(u: Matrix, v: Matrix) -> Result<Self> {
        Self::with_tolerance(u, v, UNIT_NORM_TOL)
    }

    pub fn with_tolerance(u: Matrix, v: Matrix, tol: f64) -> Result<Self> {
        if u.rows() != v.rows() || u.cols() != v.cols() {
            return Err(Error::ShapeMismatch(format!(
                "u is {}x{}, v is {}x{}",
                u.rows(),
                u.cols(),
                v.rows(),
                v.cols()
            )));
        }
        if u.rows() == 0 || u.cols() == 0 {
            return Err(Error::ShapeMismatch(format!("empty embedding set {}x{}", u.rows(), u.cols())));
        }
        for (view, m) in [('u', &u), ('v', &v)] {
            for (row, r) in m.row_iter().enumerate() {
                let norm = math::norm(r);
                if (norm - 1.0).abs() > tol {
                    return Err(Error::NotUnitRow { view, row, norm });
                }
            }
        }
        Ok(Self { u, v })
    }

    /// Projects every row of both views onto the sphere.
    pub fn from_projected(u: Matrix, v: Matrix) -> Result<Self> {
        let u = project_rows(&u)?;
        let v = project_rows(&v)?;
        Self::new(u, v)
    }

    /// Both views equal to `u`.
    pub fn self_paired(u: Matrix) -> Result<Self> {
        let v = u.clone();
        Self::new(u, v)
    }

    pub fn n(&self) -> usize {
        self.u.rows()
    }

    pub fn d(&self) -> usize {
        self.u.cols()
    }

    pub fn u(&self) -> &Matrix {
        &self.u
    }

    pub fn v(&self) -> &Matrix {
        &self.v
    }

    pub fn into_parts(self) -> (Matrix, Matrix) {
        (self.u, self.v)
    }

    /// Restriction to the instances in `idx`, in order.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        check_indices(idx, self.n())?;
        Ok(Self { u: self.u.select_rows(idx), v: self.v.select_rows(idx) })
    }

    /// Mean of `u_i . v_j` over all `n^2` ordered pairs, i.e. the inner
    /// product of the two view centroids.
    pub fn full_pair_mean(&self) -> f64 {
        let cu = centroid(&self.u);
        let cv = centroid(&self.v);
        math::dot(&cu, &cv)
    }
}

pub(crate) fn check_indices(idx: &[usize], n: usize) -> Result<()> {
    if idx.is_empty() {
        return Err(Error::InvalidIndexSet("empty".into()));
    }
    for (k, &i) in idx.iter().enumerate() {
        if i >= n {
            return Err(Error::IndexOutOfRange { index: i, n });
        }
        if idx[..k].contains(&i) {
            return Err(Error::InvalidIndexSet(format!("index {i} repeated")));
        }
    }
    Ok(())
}

/// Row mean.
pub fn centroid(m: &Matrix) -> Vec<f64> {
    let mut c = alloc::vec![0.0; m.cols()];
    for r in m.row_iter() {
        for (a, b) in c.iter_mut().zip(r) {
            *a += b;
        }
    }
    let n = m.rows().max(1) as f64;
    c.iter_mut().for_each(|x| *x /= n);
    c
}

/// Divides each row by its Euclidean norm.
pub fn project_rows(m: &Matrix) -> Result<Matrix> {
    let mut out = m.clone();
    for row in 0..out.rows() {
        let r = out.row_mut(row);
        let norm = math::norm(r);
        if !(norm > MIN_ROW_NORM) {
            return Err(Error::ZeroRow { row });
        }
        r.iter_mut().for_each(|x| *x /= norm);
    }
    Ok(out)
}

/// Regular simplex ETF: `n` unit rows in `d` dimensions with pairwise inner
/// product `-1/(n-1)`.
///
/// The rows are the scaled Helmert basis of the complement of the all-ones
/// vector, which is an exact orthonormal factorization of the centering
/// matrix, zero-padded to `d` columns.
pub fn make_etf(n: usize, d: usize) -> Result<Matrix> {
    if n < 2 {
        return Err(Error::InvalidParameter { name: "n", reason: format!("need n >= 2, got {n}") });
    }
    if d < n - 1 {
        return Err(Error::DimensionTooSmall { n, d, required: n - 1 });
    }
    let scale = math::sqrt(n as f64 / (n as f64 - 1.0));
    let mut out = Matrix::zeros(n, d);
    // Column k-1 holds the k-th Helmert vector (1, .., 1, -k, 0, ..) / sqrt(k(k+1)).
    for k in 1..n {
        let kf = k as f64;
        let h = scale / math::sqrt(kf * (kf + 1.0));
        for i in 0..k {
            out.set(i, k - 1, h);
        }
        out.set(k, k - 1, -kf * h);
    }
    Ok(out)
}

/// How batch-wise ETFs are laid out relative to each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchLayout {
    /// Every batch uses the same simplex frame.
    Coaxial,
    /// Each batch occupies its own `(m-1)`-dimensional coordinate block.
    Orthogonal,
}

/// Self-paired configuration made of `batches` consecutive blocks of `m`
/// instances, each block an `(m-1)`-simplex ETF.
///
/// With `m = 2`, `Coaxial` puts every pair on `+-e1` and `Orthogonal` puts
/// block `k` on `+-e_k`.
pub fn batch_etf_configuration(batches: usize, m: usize, d: usize, layout: BatchLayout) -> Result<EmbeddingSet> {
    if batches == 0 {
        return Err(Error::InvalidParameter { name: "batches", reason: "need at least one batch".into() });
    }
    let etf = make_etf(m, m - 1)?;
    let required = match layout {
        BatchLayout::Coaxial => m - 1,
        BatchLayout::Orthogonal => batches * (m - 1),
    };
    if d < required {
        return Err(Error::DimensionTooSmall { n: batches * m, d, required });
    }
    let mut u = Matrix::zeros(batches * m, d);
    for k in 0..batches {
        let offset = match layout {
            BatchLayout::Coaxial => 0,
            BatchLayout::Orthogonal => k * (m - 1),
        };
        for i in 0..m {
            u.row_mut(k * m + i)[offset..offset + m - 1].copy_from_slice(etf.row(i));
        }
    }
    EmbeddingSet::self_paired(u)
}

/// Moments of positive, cross-view negative and within-view negative similarities.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SimilarityStats {
    pub pos_mean: f64,
    pub pos_var: f64,
    pub neg_mean: f64,
    pub neg_var: f64,
    pub within_mean: f64,
    pub within_var: f64,
}

/// Population moments over `u_i.v_i` (n values), ordered `u_i.v_j`, `i != j`
/// (n(n-1) values) and ordered `u_i.u_j`, `v_i.v_j`, `i != j` (2n(n-1) values).
///
/// With `n = 1` the negative moments are reported as zero.
pub fn similarity_stats(e: &EmbeddingSet) -> SimilarityStats {
    let n = e.n();
    let suv = e.u().mul_transpose(e.v());
    let suu = e.u().mul_transpose(e.u());
    let svv = e.v().mul_transpose(e.v());
    let off = move |i: usize| (0..n).filter(move |&j| j != i).map(move |j| (i, j));
    let (pos_mean, pos_var) = math::moments((0..n).map(|i| suv.get(i, i)));
    let (neg_mean, neg_var) = math::moments((0..n).flat_map(off).map(|(i, j)| suv.get(i, j)));
    let (within_mean, within_var) = math::moments(
        (0..n)
            .flat_map(off)
            .map(|(i, j)| suu.get(i, j))
            .chain((0..n).flat_map(off).map(|(i, j)| svv.get(i, j))),
    );
    SimilarityStats { pos_mean, pos_var, neg_mean, neg_var, within_mean, within_var }
}

/// Largest absolute deviation of the Gram matrix of `m` from the simplex ETF
/// Gram (unit diagonal, `-1/(n-1)` elsewhere).
pub fn etf_residual(m: &Matrix) -> f64 {
    let n = m.rows();
    if n < 2 {
        return f64::INFINITY;
    }
    let target = -1.0 / (n as f64 - 1.0);
    let g = m.mul_transpose(m);
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let want = if i == j { 1.0 } else { target };
            worst = worst.max((g.get(i, j) - want).abs());
        }
    }
    worst
}

/// Mean inner product over ordered distinct pairs in the concatenation of two
/// simplex ETFs of sizes `p` and `q`; equals `-1/(p+q-1)`.
pub fn combined_etf_mean(a: &Matrix, b: &Matrix) -> Result<f64> {
    const ETF_TOL: f64 = 1e-9;
    if a.cols() != b.cols() {
        return Err(Error::ShapeMismatch(format!("dimensions {} and {}", a.cols(), b.cols())));
    }
    for (name, m) in [("first", a), ("second", b)] {
        let r = etf_residual(m);
        if !(r <= ETF_TOL) {
            return Err(Error::NotEtf(format!("{name} set deviates by {r:e}")));
        }
    }
    let rows: Vec<&[f64]> = a.row_iter().chain(b.row_iter()).collect();
    let total = rows.len();
    let mut sum = 0.0;
    for (i, x) in rows.iter().enumerate() {
        for (j, y) in rows.iter().enumerate() {
            if i != j {
                sum += math::dot(x, y);
            }
        }
    }
    Ok(sum / (total * (total - 1)) as f64)
}

/// Random `d x d` orthogonal matrix: Gram-Schmidt on Gaussian rows.
///
/// Rotate a set with `m.mul_transpose(&q)`.
pub fn random_orthogonal<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Matrix {
    let mut q = Matrix::zeros(d, d);
    let mut k = 0;
    while k < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        // two passes keep the basis orthogonal to rounding level
        for _ in 0..2 {
            for b in 0..k {
                let p = math::dot(&v, q.row(b));
                v.iter_mut().zip(q.row(b)).for_each(|(x, y)| *x -= p * y);
            }
        }
        let norm = math::norm(&v);
        if norm > 1e-6 {
            v.iter_mut().for_each(|x| *x /= norm);
            q.row_mut(k).copy_from_slice(&v);
            k += 1;
        }
    }
    q
}
