//! Dense subspace kernels: ranks, range and kernel bases, orthogonal
//! projectors, pseudo-inverses and equality-constrained least squares.
//!
//! Every rank decision in the crate goes through one rule: a singular value
//! `σ_i` counts iff `σ_i > rank_rel · max(σ_max, reference)`, where the
//! reference norm is `0` unless a caller supplies the norm of the operator a
//! derived matrix came from. The reference keeps cancellation noise in
//! matrices such as `(I − P) T` from being promoted to rank.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense real matrix viewed as a linear map `R^cols → R^rows`.
#[derive(Debug, Clone, PartialEq)]
pub struct Operator(DMatrix<f64>);

impl Operator {
    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() == 0 || matrix.ncols() == 0 {
            return Err(Error::InvalidInput(format!(
                "operator must have positive dimensions, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("operator"));
        }
        Ok(Operator(matrix))
    }

    /// Builds an operator from entries listed row by row.
    pub fn from_row_slice(rows: usize, cols: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::dims("Operator::from_row_slice", rows * cols, entries.len()));
        }
        Self::from_matrix(DMatrix::from_row_slice(rows, cols, entries))
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidInput("ragged rows".into()));
        }
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::from_row_slice(rows.len(), cols, &flat)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "operator dimensions must be positive");
        Operator(DMatrix::zeros(rows, cols))
    }

    pub fn identity(n: usize) -> Self {
        assert!(n > 0, "operator dimensions must be positive");
        Operator(DMatrix::identity(n, n))
    }

    pub fn diagonal(d: &[f64]) -> Result<Self> {
        Self::from_matrix(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    /// Single-column operator `R → R^n`.
    pub fn column(v: &[f64]) -> Result<Self> {
        Self::from_matrix(DMatrix::from_column_slice(v.len(), 1, v))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    /// Adjoint over the real field, i.e. the transpose.
    pub fn adjoint(&self) -> Operator {
        Operator(self.0.transpose())
    }

    /// `self ∘ rhs`.
    pub fn compose(&self, rhs: &Operator) -> Result<Operator> {
        if self.cols() != rhs.rows() {
            return Err(Error::dims("Operator::compose", self.cols(), rhs.rows()));
        }
        Ok(Operator(&self.0 * &rhs.0))
    }

    pub fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        if v.len() != self.cols() {
            return Err(Error::dims("Operator::apply", self.cols(), v.len()));
        }
        Ok(&self.0 * v)
    }

    /// Spectral norm.
    pub fn norm(&self) -> f64 {
        spectral_norm(&self.0)
    }

    /// Vertical concatenation; all blocks must share a column count.
    pub fn vstack(blocks: &[&Operator]) -> Result<Operator> {
        let first = blocks
            .first()
            .ok_or_else(|| Error::InvalidInput("vstack of zero blocks".into()))?;
        let cols = first.cols();
        if let Some(bad) = blocks.iter().find(|b| b.cols() != cols) {
            return Err(Error::dims("Operator::vstack", cols, bad.cols()));
        }
        let rows: usize = blocks.iter().map(|b| b.rows()).sum();
        let mut out = DMatrix::zeros(rows, cols);
        let mut offset = 0;
        for b in blocks {
            out.rows_mut(offset, b.rows()).copy_from(&b.0);
            offset += b.rows();
        }
        Ok(Operator(out))
    }
}

/// Rank and residual acceptance thresholds, both relative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub rank_rel: f64,
    pub residual_rel: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            rank_rel: 1e-10,
            residual_rel: 1e-8,
        }
    }
}

impl Tolerances {
    pub fn new(rank_rel: f64, residual_rel: f64) -> Result<Self> {
        let t = Tolerances { rank_rel, residual_rel };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("rank_rel", self.rank_rel), ("residual_rel", self.residual_rel)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidInput(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        Ok(())
    }
}

/// Orthonormal spanning set of a subspace, stored as the columns of an
/// `ambient_dim × k` matrix (`k` may be zero).
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceBasis {
    ambient_dim: usize,
    vectors: DMatrix<f64>,
    tol_used: f64,
}

impl SubspaceBasis {
    pub fn empty(ambient_dim: usize, tol_used: f64) -> Self {
        SubspaceBasis {
            ambient_dim,
            vectors: DMatrix::zeros(ambient_dim, 0),
            tol_used,
        }
    }

    /// Wraps a matrix whose columns are already orthonormal.
    pub fn from_orthonormal(vectors: DMatrix<f64>, tol_used: f64) -> Result<Self> {
        if vectors.ncols() > vectors.nrows() {
            return Err(Error::InvalidInput("more basis vectors than ambient dimension".into()));
        }
        let gram = vectors.tr_mul(&vectors);
        let k = vectors.ncols();
        let dev = (gram - DMatrix::<f64>::identity(k, k)).amax();
        if dev > 1e-12 {
            return Err(Error::InvalidInput(format!(
                "basis not orthonormal (Gram deviation {dev:.2e})"
            )));
        }
        Ok(SubspaceBasis {
            ambient_dim: vectors.nrows(),
            vectors,
            tol_used,
        })
    }

    pub(crate) fn from_columns_unchecked(vectors: DMatrix<f64>, tol_used: f64) -> Self {
        SubspaceBasis {
            ambient_dim: vectors.nrows(),
            vectors,
            tol_used,
        }
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.dim() == 0
    }

    pub fn tol_used(&self) -> f64 {
        self.tol_used
    }

    /// Basis vectors as matrix columns.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn vectors(&self) -> impl Iterator<Item = DVector<f64>> + '_ {
        self.vectors.column_iter().map(|c| c.clone_owned())
    }

    /// Euclidean distance from `v` to the subspace.
    pub fn distance(&self, v: &DVector<f64>) -> f64 {
        let coords = self.vectors.tr_mul(v);
        (v - &self.vectors * coords).norm()
    }
}

/// Solution of `min ‖Bo h − bo‖ s.t. Bc h = bc`.
#[derive(Debug, Clone, PartialEq)]
pub struct EclsSolution {
    pub solution: DVector<f64>,
    pub constraint_residual: f64,
    pub objective_residual: f64,
    pub nullspace_dim: usize,
}

fn to_faer(m: &DMatrix<f64>) -> faer::Mat<f64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn from_faer(m: faer::MatRef<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

pub(crate) fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    match to_faer(m).singular_values() {
        Ok(s) => s.into_iter().fold(0.0, f64::max),
        // Frobenius bounds the spectral norm from above; good enough as a scale.
        Err(_) => m.norm(),
    }
}

/// Full SVD `M = U Σ Vᵀ` with singular values in descending order; `U` and
/// `V` are square.
#[derive(Debug, Clone)]
pub(crate) struct Decomposition {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v_t: DMatrix<f64>,
}

impl Decomposition {
    pub fn new(m: &DMatrix<f64>) -> Result<Self> {
        let (rows, cols) = m.shape();
        if rows == 0 || cols == 0 {
            return Ok(Decomposition {
                u: DMatrix::identity(rows, rows),
                s: DVector::zeros(0),
                v_t: DMatrix::identity(cols, cols),
            });
        }
        let svd = to_faer(m)
            .svd()
            .map_err(|e| Error::NumericalFailure(format!("SVD of a {rows}x{cols} matrix failed: {e:?}")))?;
        let s = svd.S().column_vector();
        Ok(Decomposition {
            u: from_faer(svd.U()),
            s: DVector::from_fn(rows.min(cols), |i, _| s[i]),
            v_t: from_faer(svd.V()).transpose(),
        })
    }

    pub fn sigma_max(&self) -> f64 {
        self.s.iter().copied().fold(0.0, f64::max)
    }

    pub fn cutoff(&self, reference: f64, tol: &Tolerances) -> f64 {
        tol.rank_rel * self.sigma_max().max(reference)
    }

    pub fn rank(&self, cutoff: f64) -> usize {
        self.s.iter().filter(|&&s| s > cutoff).count()
    }

    pub fn range(&self, rank: usize) -> DMatrix<f64> {
        self.u.columns(0, rank).clone_owned()
    }

    pub fn kernel(&self, rank: usize) -> DMatrix<f64> {
        let n = self.v_t.nrows();
        self.v_t.rows(rank, n - rank).transpose()
    }

    pub fn pinv(&self, rank: usize) -> DMatrix<f64> {
        let mut v = self.v_t.rows(0, rank).transpose();
        for (j, mut col) in v.column_iter_mut().enumerate() {
            col /= self.s[j];
        }
        v * self.u.columns(0, rank).transpose()
    }
}

/// Orthonormal basis of the orthogonal complement of the span of the
/// orthonormal columns of `q`.
pub(crate) fn orthogonal_complement(q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, k) = q.shape();
    let d = Decomposition::new(q)?;
    Ok(d.u.columns(k, n - k).clone_owned())
}

pub(crate) fn kernel_matrix(m: &DMatrix<f64>, reference: f64, tol: &Tolerances) -> Result<DMatrix<f64>> {
    if m.nrows() == 0 {
        return Ok(DMatrix::identity(m.ncols(), m.ncols()));
    }
    let d = Decomposition::new(m)?;
    let r = d.rank(d.cutoff(reference, tol));
    Ok(d.kernel(r))
}

pub(crate) fn range_matrix(m: &DMatrix<f64>, reference: f64, tol: &Tolerances) -> Result<DMatrix<f64>> {
    if m.ncols() == 0 {
        return Ok(DMatrix::zeros(m.nrows(), 0));
    }
    let d = Decomposition::new(m)?;
    let r = d.rank(d.cutoff(reference, tol));
    Ok(d.range(r))
}

pub(crate) fn pinv_matrix(m: &DMatrix<f64>, reference: f64, tol: &Tolerances) -> Result<DMatrix<f64>> {
    if m.is_empty() {
        return Ok(DMatrix::zeros(m.ncols(), m.nrows()));
    }
    let d = Decomposition::new(m)?;
    let r = d.rank(d.cutoff(reference, tol));
    Ok(d.pinv(r))
}

/// Number of singular values above `rank_rel · σ_max`.
pub fn svd_rank(t: &Operator, tol: &Tolerances) -> Result<usize> {
    let d = Decomposition::new(t.matrix())?;
    Ok(d.rank(d.cutoff(0.0, tol)))
}

pub fn range_basis(t: &Operator, tol: &Tolerances) -> Result<SubspaceBasis> {
    Ok(SubspaceBasis::from_columns_unchecked(
        range_matrix(t.matrix(), 0.0, tol)?,
        tol.rank_rel,
    ))
}

pub fn kernel_basis(t: &Operator, tol: &Tolerances) -> Result<SubspaceBasis> {
    Ok(SubspaceBasis::from_columns_unchecked(
        kernel_matrix(t.matrix(), 0.0, tol)?,
        tol.rank_rel,
    ))
}

/// Orthogonal projector onto `span(S)`.
pub fn projector(s: &SubspaceBasis) -> Operator {
    let v = s.matrix();
    Operator(v * v.transpose())
}

/// Moore–Penrose pseudo-inverse by truncated SVD.
pub fn pinv(t: &Operator, tol: &Tolerances) -> Result<Operator> {
    Ok(Operator(pinv_matrix(t.matrix(), 0.0, tol)?))
}

/// Basis of `{v : T v ∈ span(S)}`, computed as `N((I − P_S) T)` with the
/// rank cutoff referenced to `‖T‖`.
pub fn preimage_subspace(t: &Operator, s: &SubspaceBasis, tol: &Tolerances) -> Result<SubspaceBasis> {
    if s.ambient_dim() != t.rows() {
        return Err(Error::dims("preimage_subspace", t.rows(), s.ambient_dim()));
    }
    let v = s.matrix();
    let m = t.matrix();
    let residual = m - v * v.tr_mul(m);
    Ok(SubspaceBasis::from_columns_unchecked(
        kernel_matrix(&residual, t.norm(), tol)?,
        tol.rank_rel,
    ))
}

/// Nullspace method: particular solution `Bc† bc`, then minimal-norm least
/// squares over an orthonormal basis `Z` of `N(Bc)`. The result is the
/// minimal-norm minimizer because `Bc† bc ⟂ span(Z)`.
pub fn solve_constrained_ls(
    bc_op: &Operator,
    bc: &DVector<f64>,
    bo_op: &Operator,
    bo: &DVector<f64>,
    tol: &Tolerances,
) -> Result<EclsSolution> {
    if bc_op.cols() != bo_op.cols() {
        return Err(Error::dims(
            "solve_constrained_ls (column counts)",
            bc_op.cols(),
            bo_op.cols(),
        ));
    }
    if bc.len() != bc_op.rows() {
        return Err(Error::dims("solve_constrained_ls (bc)", bc_op.rows(), bc.len()));
    }
    if bo.len() != bo_op.rows() {
        return Err(Error::dims("solve_constrained_ls (bo)", bo_op.rows(), bo.len()));
    }
    let constraint = Decomposition::new(bc_op.matrix())?;
    let rank = constraint.rank(constraint.cutoff(0.0, tol));
    let particular = constraint.pinv(rank) * bc;
    let infeasibility = (bc_op.matrix() * &particular - bc).norm();
    let threshold = tol.residual_rel * bc.norm();
    if infeasibility > threshold {
        return Err(Error::InfeasibleConstraint {
            residual: infeasibility,
            threshold,
        });
    }

    let z = constraint.kernel(rank);
    let solution = if z.ncols() == 0 {
        particular
    } else {
        let reduced = bo_op.matrix() * &z;
        let rhs = bo - bo_op.matrix() * &particular;
        let coords = pinv_matrix(&reduced, bo_op.norm(), tol)? * rhs;
        particular + &z * coords
    };

    Ok(EclsSolution {
        constraint_residual: (bc_op.matrix() * &solution - bc).norm(),
        objective_residual: (bo_op.matrix() * &solution - bo).norm(),
        nullspace_dim: z.ncols(),
        solution,
    })
}
