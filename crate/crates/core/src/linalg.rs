//! Dense symmetric-matrix kernel.
//!
//! Every equilibrium formula is built from the handful of spectral operations
//! here: a deterministic symmetric eigendecomposition, PSD square roots,
//! pseudo-inverses, Loewner-order tests and projections onto negative
//! eigenspaces. Matrices are small (dimension at most a few dozen), so all
//! routines are dense and allocate freely.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;

/// Symmetry tolerance, relative to `1 + max|M|`.
pub const SYM_TOL: f64 = 1e-10;
/// Orthonormality tolerance for eigenvector bases and scaling matrices.
pub const ORTHO_TOL: f64 = 1e-10;
/// Negative eigenvalues above `-PSD_TOL * max(1, λ_max)` count as zero.
pub const PSD_TOL: f64 = 1e-8;
pub const RECON_TOL: f64 = 1e-8;
pub const SQRT_TOL: f64 = 1e-8;
pub const PINV_TOL: f64 = 1e-8;
pub const PROJ_TOL: f64 = 1e-8;
/// Absolute floor on eigenvalues of matrices that must be invertible.
pub const PD_TOL: f64 = 1e-10;
/// Relative cutoff deciding which eigenvalues are strictly negative.
pub const NEG_EIG_CUTOFF: f64 = 1e-9;
/// Relative cutoff used when inverting square roots of covariances.
pub const PINV_CUTOFF: f64 = 1e-10;

/// `(M + Mᵀ) / 2`.
pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

/// Largest absolute entry.
pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// `Tr(A·B)` without forming the product.
pub fn trace_product(a: &Mat, b: &Mat) -> f64 {
    assert_eq!(a.ncols(), b.nrows());
    assert_eq!(a.nrows(), b.ncols());
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

/// A dense real symmetric matrix. Entries are symmetrized on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(Mat);

impl SymMatrix {
    /// Validates squareness, finiteness and symmetry within `SYM_TOL`, then
    /// symmetrizes.
    pub fn new(m: Mat) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(Error::InvalidMatrix(format!(
                "expected a nonempty square matrix, found {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidMatrix("non-finite entry".into()));
        }
        let asym = max_abs(&(&m - m.transpose()));
        if asym > SYM_TOL * (1.0 + max_abs(&m)) {
            return Err(Error::InvalidMatrix(format!(
                "not symmetric (max asymmetry {asym:e})"
            )));
        }
        Ok(SymMatrix(symmetrize(&m)))
    }

    /// Symmetrizes a computed product without checking the asymmetry, which
    /// is only rounding noise for products of the form `A·B·Aᵀ`.
    pub fn from_product(m: Mat) -> Self {
        debug_assert_eq!(m.nrows(), m.ncols());
        SymMatrix(symmetrize(&m))
    }

    pub fn from_row_slice(n: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::DimError {
                expected: format!("{} entries", n * n),
                found: format!("{} entries", entries.len()),
            });
        }
        Self::new(Mat::from_row_slice(n, n, entries))
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix(Mat::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(Mat::identity(n, n))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        SymMatrix(Mat::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &Mat {
        &self.0
    }

    pub fn into_inner(self) -> Mat {
        self.0
    }

    pub fn eig(&self) -> SymEigen {
        eig_unchecked(&self.0)
    }

    pub fn min_eig(&self) -> f64 {
        let e = self.eig();
        e.values[e.values.len() - 1]
    }
}

/// Spectral decomposition with eigenvalues in descending order.
#[derive(Debug, Clone, PartialEq)]
pub struct SymEigen {
    pub values: DVector<f64>,
    /// Orthonormal eigenvectors, one per column, matching `values`.
    pub vectors: Mat,
}

impl SymEigen {
    pub fn reconstruct(&self) -> Mat {
        self.reconstruct_with(|l| l)
    }

    /// `U · diag(f(λ)) · Uᵀ`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> Mat {
        let mut scaled = self.vectors.clone();
        for (j, &l) in self.values.iter().enumerate() {
            let s = f(l);
            scaled.column_mut(j).scale_mut(s);
        }
        symmetrize(&(scaled * self.vectors.transpose()))
    }

    pub fn max_abs_value(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
    }
}

/// Symmetric eigendecomposition with deterministic output.
///
/// Eigenvalues are sorted in descending order. Within a cluster of
/// numerically equal eigenvalues the basis is rebuilt from the cluster
/// subspace alone: standard basis vectors are projected onto it and
/// Gram–Schmidt orthonormalized, each round taking the one with the largest
/// remaining component (lowest index on ties). Every column is then
/// sign-fixed so its largest-magnitude entry is positive.
pub fn sym_eig(m: &SymMatrix) -> Result<SymEigen> {
    if m.0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidMatrix("non-finite entry".into()));
    }
    Ok(eig_unchecked(&m.0))
}

pub(crate) fn eig_unchecked(m: &Mat) -> SymEigen {
    let n = m.nrows();
    let se = SymmetricEigen::new(symmetrize(m));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| se.eigenvalues[b].total_cmp(&se.eigenvalues[a]));
    let values = DVector::from_iterator(n, order.iter().map(|&k| se.eigenvalues[k]));
    let mut vectors = Mat::zeros(n, n);
    for (j, &k) in order.iter().enumerate() {
        vectors.set_column(j, &se.eigenvectors.column(k));
    }

    let scale = values.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
    let cluster_tol = 1e-10 * scale;
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && (values[start] - values[end]).abs() <= cluster_tol {
            end += 1;
        }
        if end - start > 1 {
            canonicalize_cluster(&mut vectors, start, end);
        }
        start = end;
    }
    for j in 0..n {
        fix_sign(&mut vectors, j);
    }
    SymEigen { values, vectors }
}

fn canonicalize_cluster(vectors: &mut Mat, start: usize, end: usize) {
    let n = vectors.nrows();
    let k = end - start;
    let basis = vectors.columns(start, k).clone_owned();
    let proj = &basis * basis.transpose();
    let mut chosen: Vec<DVector<f64>> = Vec::with_capacity(k);
    // Pick the standard basis vector with the largest remaining component each
    // round, ties going to the lowest index.
    let mut used = vec![false; n];
    while chosen.len() < k {
        let mut best: Option<(usize, DVector<f64>, f64)> = None;
        for (i, taken) in used.iter().enumerate() {
            if *taken {
                continue;
            }
            let mut v = proj.column(i).clone_owned();
            for c in &chosen {
                let d = c.dot(&v);
                v -= c * d;
            }
            let norm = v.norm();
            if best.as_ref().is_none_or(|b| norm > b.2 + 1e-12) {
                best = Some((i, v, norm));
            }
        }
        match best {
            Some((i, v, norm)) if norm > 1e-8 => {
                used[i] = true;
                chosen.push(v / norm);
            }
            _ => return,
        }
    }
    for (j, c) in chosen.into_iter().enumerate() {
        vectors.set_column(start + j, &c);
    }
}

fn fix_sign(vectors: &mut Mat, j: usize) {
    let col = vectors.column(j);
    let max = col.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let pivot = col
        .iter()
        .position(|v| v.abs() >= max - 1e-12)
        .unwrap_or(0);
    if col[pivot] < 0.0 {
        vectors.column_mut(j).neg_mut();
    }
}

/// A symmetric positive semidefinite matrix together with its spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdMatrix {
    base: SymMatrix,
    eig: SymEigen,
}

impl PsdMatrix {
    /// Accepts `m` when every eigenvalue is at least `-PSD_TOL·max(1, λ_max)`.
    pub fn new(m: SymMatrix) -> Result<Self> {
        let eig = m.eig();
        let top = eig.values[0].max(1.0);
        let low = eig.values[eig.values.len() - 1];
        if low < -PSD_TOL * top {
            return Err(Error::NotPsd { min_eig: low });
        }
        Ok(PsdMatrix { base: m, eig })
    }

    pub fn from_mat(m: Mat) -> Result<Self> {
        Self::new(SymMatrix::new(m)?)
    }

    /// Symmetrizes `m`, then raises eigenvalues in `[-PSD_TOL·scale, 0)` to 0.
    /// Anything more negative is rejected.
    pub fn clamped(m: Mat) -> Result<Self> {
        let sym = SymMatrix::from_product(m);
        let eig = sym.eig();
        let top = eig.values[0].max(1.0);
        let low = eig.values[eig.values.len() - 1];
        if low >= 0.0 {
            return Ok(PsdMatrix { base: sym, eig });
        }
        if low < -PSD_TOL * top {
            return Err(Error::NotPsd { min_eig: low });
        }
        let values = eig.values.map(|l| l.max(0.0));
        let eig = SymEigen {
            values,
            vectors: eig.vectors,
        };
        let base = SymMatrix(eig.reconstruct());
        Ok(PsdMatrix { base, eig })
    }

    pub fn zeros(n: usize) -> Self {
        let base = SymMatrix::zeros(n);
        let eig = base.eig();
        PsdMatrix { base, eig }
    }

    pub fn identity(n: usize) -> Self {
        let base = SymMatrix::identity(n);
        let eig = base.eig();
        PsdMatrix { base, eig }
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn sym(&self) -> &SymMatrix {
        &self.base
    }

    pub fn matrix(&self) -> &Mat {
        self.base.matrix()
    }

    pub fn eigen(&self) -> &SymEigen {
        &self.eig
    }

    pub fn min_eig(&self) -> f64 {
        self.eig.values[self.eig.values.len() - 1]
    }

    /// Unique PSD square root.
    pub fn sqrt(&self) -> PsdMatrix {
        psd_sqrt(self)
    }

    /// `M^{†1/2}`: inverse square root on eigenvalues above
    /// `cutoff·λ_max`, zero elsewhere.
    pub fn pinv_sqrt(&self, cutoff: f64) -> SymMatrix {
        let floor = cutoff * self.eig.max_abs_value();
        SymMatrix(self.eig.reconstruct_with(|l| {
            if l > floor && l > 0.0 {
                1.0 / l.sqrt()
            } else {
                0.0
            }
        }))
    }
}

/// Unique PSD square root; eigenvalues within tolerance below zero are
/// clamped to zero.
pub fn psd_sqrt(m: &PsdMatrix) -> PsdMatrix {
    let values = m.eig.values.map(|l| l.max(0.0).sqrt());
    let eig = SymEigen {
        values,
        vectors: m.eig.vectors.clone(),
    };
    let base = SymMatrix(eig.reconstruct());
    PsdMatrix { base, eig }
}

/// Moore–Penrose pseudo-inverse; eigenvalues with `|λ| ≤ cutoff·max|λ|` are
/// treated as zero.
pub fn pinv(m: &SymMatrix, cutoff: f64) -> SymMatrix {
    let eig = m.eig();
    let floor = cutoff * eig.max_abs_value();
    SymMatrix(eig.reconstruct_with(|l| {
        if l.abs() > floor && l != 0.0 {
            1.0 / l
        } else {
            0.0
        }
    }))
}

/// Pseudo-inverse of a general (possibly non-symmetric) square matrix of the
/// form `L·Σ·Lᵀ`, symmetrizing first.
pub(crate) fn pinv_mat(m: &Mat, cutoff: f64) -> Mat {
    pinv(&SymMatrix::from_product(m.clone()), cutoff).into_inner()
}

/// Loewner order test `A ⪰ B`: the smallest eigenvalue of `A − B` is at
/// least `-tol·max(1, ‖A − B‖₂)`.
pub fn loewner_geq(a: &SymMatrix, b: &SymMatrix, tol: f64) -> Result<bool> {
    Ok(loewner_margin(a, b)? >= -tol)
}

/// Smallest eigenvalue of `A − B` divided by `max(1, ‖A − B‖₂)`.
pub fn loewner_margin(a: &SymMatrix, b: &SymMatrix) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimError {
            expected: format!("{0}x{0}", a.dim()),
            found: format!("{0}x{0}", b.dim()),
        });
    }
    let diff = SymMatrix(&a.0 - &b.0);
    let eig = diff.eig();
    let low = eig.values[eig.values.len() - 1];
    Ok(low / eig.max_abs_value().max(1.0))
}

/// An orthogonal projection matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMatrix {
    base: SymMatrix,
    rank: usize,
}

impl ProjectionMatrix {
    /// Validates idempotency and that every eigenvalue is within `PROJ_TOL`
    /// of 0 or 1.
    pub fn new(m: SymMatrix) -> Result<Self> {
        let defect = projection_defect(&m);
        if defect > PROJ_TOL {
            return Err(Error::NotAchievable { defect });
        }
        let rank = m.eig().values.iter().filter(|&&l| l > 0.5).count();
        Ok(ProjectionMatrix { base: m, rank })
    }

    pub fn zeros(n: usize) -> Self {
        ProjectionMatrix {
            base: SymMatrix::zeros(n),
            rank: 0,
        }
    }

    pub fn sym(&self) -> &SymMatrix {
        &self.base
    }

    pub fn matrix(&self) -> &Mat {
        self.base.matrix()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }
}

/// Distance from being an orthogonal projection: the larger of the
/// idempotency residual `‖P·P − P‖_max` and the largest eigenvalue distance
/// from `{0, 1}`.
pub fn projection_defect(m: &SymMatrix) -> f64 {
    let p = m.matrix();
    let idem = max_abs(&(p * p - p));
    let spec = m
        .eig()
        .values
        .iter()
        .map(|&l| l.abs().min((l - 1.0).abs()))
        .fold(0.0_f64, f64::max);
    idem.max(spec)
}

/// Projection onto the span of eigenvectors of `w` whose eigenvalue is below
/// `-tol·max(1, |λ|_max)`. Returns `O` when there is none.
pub fn projection_from_negative_eigs(w: &SymMatrix, tol: f64) -> ProjectionMatrix {
    let eig = w.eig();
    let cutoff = -tol * eig.max_abs_value().max(1.0);
    let n = w.dim();
    let picked: Vec<usize> = (0..n).filter(|&k| eig.values[k] < cutoff).collect();
    if picked.is_empty() {
        return ProjectionMatrix::zeros(n);
    }
    let mut q = Mat::zeros(n, picked.len());
    for (j, &k) in picked.iter().enumerate() {
        q.set_column(j, &eig.vectors.column(k));
    }
    ProjectionMatrix {
        base: SymMatrix::from_product(&q * q.transpose()),
        rank: picked.len(),
    }
}
