//! Finite truncations of the diagonal/rank-one family on which the
//! necessary conditions for the mixed goal hold but the goal itself fails.
//!
//! At truncation `n`:
//!
//! * `B1 = diag(1/k²)`, `k = 1..n`;
//! * `x_k = 1/k` and `B2 = x xᵀ`;
//! * `A1 = 0`;
//! * `A2` is the orthogonal projector onto `span(x)`.
//!
//! `A2` is not the literal truncation of the projector onto `F^⊥` (with
//! `F` the closure of `B2⁻¹(R(B1))`): every truncated `B1` is invertible, so
//! that preimage is the whole space and a literal truncation would give
//! `A2 = 0`. Projecting onto `span(x) ⊆ F^⊥` keeps the failure visible at
//! every `n`.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::douglas::{check_propp, mixed_check, mixed_solve, MixedProblem};
use crate::error::{Error, Result};
use crate::linop::{Operator, Tolerances};

pub const A2_TRUNCATION_NOTE: &str = "A2 = projector onto span(x) (truncation of the infinite-dimensional A2; \
     the literal projector onto F^perp vanishes at every finite n because B1 is invertible)";

#[derive(Debug, Clone, PartialEq)]
pub struct TruncationFamily {
    pub n: usize,
    pub b1: Operator,
    pub x: DVector<f64>,
    pub b2: Operator,
    pub a1: Operator,
    pub a2: Operator,
}

impl TruncationFamily {
    pub fn to_problem(&self, tol: Tolerances) -> Result<MixedProblem> {
        MixedProblem::new(self.a1.clone(), self.a2.clone(), self.b1.clone(), self.b2.clone(), tol)
    }

    /// `‖x_n‖² = Σ 1/k²`, which tends to `π²/6`.
    pub fn x_norm_sq(&self) -> f64 {
        self.x.norm_squared()
    }
}

pub fn build_counterexample(n: usize) -> Result<TruncationFamily> {
    if n == 0 {
        return Err(Error::InvalidInput("truncation dimension must be at least 1".into()));
    }
    let diag: Vec<f64> = (1..=n).map(|k| 1.0 / (k * k) as f64).collect();
    let x = DVector::from_iterator(n, (1..=n).map(|k| 1.0 / k as f64));
    let b2 = &x * x.transpose();
    let a2 = &b2 / x.norm_squared();
    Ok(TruncationFamily {
        n,
        b1: Operator::diagonal(&diag)?,
        b2: Operator::from_matrix(b2)?,
        a1: Operator::zeros(n, n),
        a2: Operator::from_matrix(a2)?,
        x,
    })
}

/// `‖f‖` for the unique `f` with `B1 f = B2 h`, by a dense LU solve.
pub fn minimal_preimage_norm(fam: &TruncationFamily, h: &DVector<f64>) -> Result<f64> {
    if h.len() != fam.n {
        return Err(Error::dims("minimal_preimage_norm", fam.n, h.len()));
    }
    let rhs = fam.b2.apply(h)?;
    let lu = fam.b1.matrix().clone().lu();
    let f = lu
        .solve(&rhs)
        .ok_or_else(|| Error::NumericalFailure("B1 is singular".into()))?;
    Ok(f.norm())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub n: usize,
    pub majorization_ok: bool,
    pub sequential_defect: f64,
    pub overall: bool,
    pub approx_residual_e1: f64,
    pub min_preimage_norm_e1: f64,
    pub propp_ok: bool,
    pub x_norm_sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub note: &'static str,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    /// Ratios of `min_preimage_norm_e1` between consecutive rows.
    pub fn growth_ratios(&self) -> Vec<f64> {
        self.rows
            .windows(2)
            .map(|w| w[1].min_preimage_norm_e1 / w[0].min_preimage_norm_e1)
            .collect()
    }

    /// CSV with `#`-prefixed preamble lines carrying the truncation note.
    pub fn to_csv(&self) -> Result<String> {
        let mut out = format!("# {}\n", self.note);
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row).map_err(|e| Error::Parse(e.to_string()))?;
        }
        let body = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
        out.push_str(&String::from_utf8(body).map_err(|e| Error::Parse(e.to_string()))?);
        Ok(out)
    }
}

fn sweep_row(n: usize, tol: Tolerances) -> Result<SweepRow> {
    let fam = build_counterexample(n)?;
    let p = fam.to_problem(tol)?;
    let check = mixed_check(&p)?;
    let mut e1 = DVector::zeros(n);
    e1[0] = 1.0;
    // ε only decides `epsilon_met`; the residual is the attained infimum.
    let solve = mixed_solve(&p, &e1, 1.0)?;
    Ok(SweepRow {
        n,
        majorization_ok: check.majorization_ok,
        sequential_defect: check.sequential_defect,
        overall: check.overall,
        approx_residual_e1: solve.approx_residual,
        min_preimage_norm_e1: minimal_preimage_norm(&fam, &e1)?,
        propp_ok: check_propp(&p)?.holds,
        x_norm_sq: fam.x_norm_sq(),
    })
}

pub fn sweep(dims: &[usize], tol: Tolerances) -> Result<SweepReport> {
    if dims.is_empty() {
        return Err(Error::InvalidInput("sweep needs at least one dimension".into()));
    }
    if dims.windows(2).any(|w| w[0] >= w[1]) || dims[0] == 0 {
        return Err(Error::InvalidInput(
            "sweep dimensions must be positive and strictly increasing".into(),
        ));
    }
    let rows = dims
        .par_iter()
        .map(|&n| sweep_row(n, tol))
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepReport {
        note: A2_TRUNCATION_NOTE,
        rows,
    })
}
