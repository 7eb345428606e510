//! Range inclusion, majorization and factorization for dense operators, and
//! the mixed exact/approximate version for operators into `H4 × H5`.
//!
//! Finite-dimensional conventions used throughout:
//!
//! * ranges are closed, so the strong and weak inclusion tests coincide;
//! * the sequential condition of the mixed theorem is checked as the
//!   vanishing of `A2ᵀ − C1ᵀ B2ᵀ` on `S = (B2ᵀ)⁻¹(R(B1ᵀ))`, with
//!   `C1 = B1† A1`;
//! * every factor that is only determined up to a complement is returned in
//!   its minimal-norm form (zero off the relevant range).

use nalgebra::{DMatrix, DVector};
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linop::{
    kernel_matrix, orthogonal_complement, pinv_matrix, preimage_subspace, range_basis, range_matrix,
    solve_constrained_ls, spectral_norm, Decomposition, Operator, SubspaceBasis, Tolerances,
};

/// Column subspaces that agree up to this projector distance are treated as
/// equal in [`MixedCheckReport::prop1_condition_ok`].
const SUBSPACE_MATCH: f64 = 1e-6;

const FINITE_DIM_NOTE: &str = "structurally true (finite-dimensional)";
const SEQUENTIAL_NOTE: &str =
    "sequential condition checked as (A2^T - C1^T B2^T) vanishing on (B2^T)^-1(R(B1^T)), C1 = B1^+ A1";

/// Outcome of an inclusion test together with the measured residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InclusionTest {
    pub holds: bool,
    pub residual: f64,
    pub threshold: f64,
}

/// Smallest `C` with `‖Aᵀz‖ ≤ C ‖Bᵀz‖`, or the unbounded sentinel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MajorizationConstant {
    Finite(f64),
    Unbounded,
}

impl MajorizationConstant {
    pub fn is_finite(&self) -> bool {
        matches!(self, MajorizationConstant::Finite(_))
    }

    pub fn value(&self) -> Option<f64> {
        match *self {
            MajorizationConstant::Finite(c) => Some(c),
            MajorizationConstant::Unbounded => None,
        }
    }
}

impl Serialize for MajorizationConstant {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            MajorizationConstant::Finite(c) => s.serialize_f64(*c),
            MajorizationConstant::Unbounded => s.serialize_str("unbounded"),
        }
    }
}

fn check_rows(context: &'static str, a: &Operator, b: &Operator) -> Result<()> {
    if a.rows() != b.rows() {
        return Err(Error::dims(context, a.rows(), b.rows()));
    }
    Ok(())
}

fn inclusion_threshold(a: &Operator, tol: &Tolerances) -> f64 {
    tol.residual_rel * a.norm().max(1.0)
}

/// `R(A) ⊆ R(B)`: residual `‖(I − P_{R(B)}) A‖`.
pub fn range_inclusion(a: &Operator, b: &Operator, tol: &Tolerances) -> Result<InclusionTest> {
    check_rows("range_inclusion", a, b)?;
    let u = range_matrix(b.matrix(), 0.0, tol)?;
    let residual = spectral_norm(&(a.matrix() - &u * u.tr_mul(a.matrix())));
    let threshold = inclusion_threshold(a, tol);
    Ok(InclusionTest {
        holds: residual <= threshold,
        residual,
        threshold,
    })
}

/// `N(Bᵀ) ⊆ N(Aᵀ)`: defect `‖Aᵀ K‖` with `K` a basis of `N(Bᵀ)`.
pub fn kernel_inclusion(a: &Operator, b: &Operator, tol: &Tolerances) -> Result<InclusionTest> {
    check_rows("kernel_inclusion", a, b)?;
    let k = kernel_matrix(&b.matrix().transpose(), 0.0, tol)?;
    let residual = spectral_norm(&a.matrix().tr_mul(&k));
    let threshold = inclusion_threshold(a, tol);
    Ok(InclusionTest {
        holds: residual <= threshold,
        residual,
        threshold,
    })
}

pub fn majorization_constant(a: &Operator, b: &Operator, tol: &Tolerances) -> Result<MajorizationConstant> {
    if !kernel_inclusion(a, b, tol)?.holds {
        return Ok(MajorizationConstant::Unbounded);
    }
    let c = pinv_matrix(b.matrix(), 0.0, tol)? * a.matrix();
    Ok(MajorizationConstant::Finite(spectral_norm(&c)))
}

/// Minimal-norm Douglas factor `C = B† A` with `A = B C`.
pub fn douglas_factor(a: &Operator, b: &Operator, tol: &Tolerances) -> Result<Operator> {
    let test = range_inclusion(a, b, tol)?;
    if !test.holds {
        return Err(Error::InclusionViolated {
            residual: test.residual,
            threshold: test.threshold,
        });
    }
    Operator::from_matrix(pinv_matrix(b.matrix(), 0.0, tol)? * a.matrix())
}

/// Factor `D = Aᵀ (Bᵀ)†` of `Aᵀ = D Bᵀ`, extended by zero off `R(Bᵀ)`.
pub fn weak_factor(a: &Operator, b: &Operator, tol: &Tolerances) -> Result<Operator> {
    let test = kernel_inclusion(a, b, tol)?;
    if !test.holds {
        return Err(Error::InclusionViolated {
            residual: test.residual,
            threshold: test.threshold,
        });
    }
    let bt_pinv = pinv_matrix(&b.matrix().transpose(), 0.0, tol)?;
    Operator::from_matrix(a.matrix().transpose() * bt_pinv)
}

/// The data `(A1, A2, B1, B2)` of the mixed goal: find `h2` with
/// `A1 h1 = B1 h2` and `‖A2 h1 − B2 h2‖ ≤ ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedProblem {
    a1: Operator,
    a2: Operator,
    b1: Operator,
    b2: Operator,
    tol: Tolerances,
}

impl MixedProblem {
    pub fn new(a1: Operator, a2: Operator, b1: Operator, b2: Operator, tol: Tolerances) -> Result<Self> {
        tol.validate()?;
        if a1.cols() != a2.cols() {
            return Err(Error::dims("MixedProblem dim H1 (A1 vs A2 cols)", a1.cols(), a2.cols()));
        }
        if b1.cols() != b2.cols() {
            return Err(Error::dims("MixedProblem dim H2 (B1 vs B2 cols)", b1.cols(), b2.cols()));
        }
        if a1.rows() != b1.rows() {
            return Err(Error::dims("MixedProblem dim H4 (A1 vs B1 rows)", a1.rows(), b1.rows()));
        }
        if a2.rows() != b2.rows() {
            return Err(Error::dims("MixedProblem dim H5 (A2 vs B2 rows)", a2.rows(), b2.rows()));
        }
        Ok(MixedProblem { a1, a2, b1, b2, tol })
    }

    pub fn a1(&self) -> &Operator {
        &self.a1
    }
    pub fn a2(&self) -> &Operator {
        &self.a2
    }
    pub fn b1(&self) -> &Operator {
        &self.b1
    }
    pub fn b2(&self) -> &Operator {
        &self.b2
    }
    pub fn tol(&self) -> &Tolerances {
        &self.tol
    }

    pub fn with_tol(mut self, tol: Tolerances) -> Result<Self> {
        tol.validate()?;
        self.tol = tol;
        Ok(self)
    }

    /// `(dim H1, dim H2, dim H4, dim H5)`.
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.a1.cols(), self.b1.cols(), self.a1.rows(), self.a2.rows())
    }

    /// Stacked `A = [A1; A2]`.
    pub fn stacked_a(&self) -> Operator {
        Operator::vstack(&[&self.a1, &self.a2]).expect("dimensions validated at construction")
    }

    /// Stacked `B = [B1; B2]`.
    pub fn stacked_b(&self) -> Operator {
        Operator::vstack(&[&self.b1, &self.b2]).expect("dimensions validated at construction")
    }

    fn c1(&self) -> Result<DMatrix<f64>> {
        Ok(pinv_matrix(self.b1.matrix(), 0.0, &self.tol)? * self.a1.matrix())
    }

    /// Scale for the second-block residuals: `max(1, ‖A2‖ + ‖C1‖·‖B2‖)`.
    fn second_block_scale(&self, c1: &DMatrix<f64>) -> f64 {
        (self.a2.norm() + spectral_norm(c1) * self.b2.norm()).max(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixedCheckReport {
    pub majorization_ok: bool,
    pub majorization_constant: MajorizationConstant,
    pub kernel_defect: f64,
    pub sequential_ok: bool,
    pub sequential_defect: f64,
    pub sequential_threshold: f64,
    pub preimage_dim: usize,
    pub prop1_condition_ok: bool,
    pub prop1_note: &'static str,
    pub reformulation: &'static str,
    pub overall: bool,
}

/// Necessary-and-sufficient check for the mixed goal.
pub fn mixed_check(p: &MixedProblem) -> Result<MixedCheckReport> {
    let tol = &p.tol;
    let kernel = kernel_inclusion(&p.a1, &p.b1, tol)?;
    let c1 = p.c1()?;
    let majorization_constant = if kernel.holds {
        MajorizationConstant::Finite(spectral_norm(&c1))
    } else {
        MajorizationConstant::Unbounded
    };

    let b1t = p.b1.adjoint();
    let b2t = p.b2.adjoint();
    let row_space = range_basis(&b1t, tol)?;
    let s = preimage_subspace(&b2t, &row_space, tol)?;

    let scale = p.second_block_scale(&c1);
    let gap = p.a2.matrix().transpose() - c1.transpose() * b2t.matrix();
    let sequential_defect = if s.is_empty() {
        0.0
    } else {
        spectral_norm(&(gap * s.matrix()))
    };
    let sequential_threshold = tol.residual_rel * scale;
    let sequential_ok = sequential_defect <= sequential_threshold;

    // closure of R(B1ᵀ) taken as N(B1)^⊥, an independent route to the same space
    let closure = orthogonal_complement(&kernel_matrix(p.b1.matrix(), 0.0, tol)?)?;
    let s_closure = preimage_subspace(&b2t, &SubspaceBasis::from_columns_unchecked(closure, tol.rank_rel), tol)?;
    let prop1_condition_ok = same_subspace(&s, &s_closure);

    Ok(MixedCheckReport {
        majorization_ok: kernel.holds,
        majorization_constant,
        kernel_defect: kernel.residual,
        sequential_ok,
        sequential_defect,
        sequential_threshold,
        preimage_dim: s.dim(),
        prop1_condition_ok,
        prop1_note: FINITE_DIM_NOTE,
        reformulation: SEQUENTIAL_NOTE,
        overall: kernel.holds && sequential_ok,
    })
}

fn same_subspace(x: &SubspaceBasis, y: &SubspaceBasis) -> bool {
    if x.ambient_dim() != y.ambient_dim() || x.dim() != y.dim() {
        return false;
    }
    let (vx, vy) = (x.matrix(), y.matrix());
    let leak = vx - vy * vy.tr_mul(vx);
    leak.is_empty() || spectral_norm(&leak) <= SUBSPACE_MATCH
}

/// `A1ᵀ = D1 B1ᵀ` and `A2ᵀ = (D1 + D2 Π) B2ᵀ`.
///
/// `D2` acts on coordinates with respect to [`MixedFactorization::kernel_basis`];
/// [`MixedFactorization::d2_full`] extends it by zero off `N(B1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedFactorization {
    pub d1: Operator,
    pub d2: DMatrix<f64>,
    pub pi: Operator,
    pub kernel_basis: SubspaceBasis,
    /// `‖A1ᵀ − D1 B1ᵀ‖`.
    pub exact_defect: f64,
    /// `‖A2ᵀ − (D1 + D2 Π) B2ᵀ‖`.
    pub defect: f64,
    pub exact_scale: f64,
    pub scale: f64,
}

impl MixedFactorization {
    /// Computes the factors without first requiring the mixed check to pass;
    /// the defects then measure how far the identities are from holding.
    pub fn compute(p: &MixedProblem) -> Result<Self> {
        let tol = &p.tol;
        let c1 = p.c1()?;
        let d1 = c1.transpose();
        let z = kernel_matrix(p.b1.matrix(), 0.0, tol)?;
        let b2t = p.b2.matrix().transpose();

        let target = p.a2.matrix().transpose() - &d1 * &b2t;
        let coords = z.tr_mul(&b2t);
        let d2 = &target * pinv_matrix(&coords, p.b2.norm(), tol)?;
        let defect = spectral_norm(&(&d2 * &coords - &target));
        let exact_defect = spectral_norm(&(&d1 * p.b1.matrix().transpose() - p.a1.matrix().transpose()));

        let pi = Operator::from_matrix(&z * z.transpose())?;
        Ok(MixedFactorization {
            scale: p.second_block_scale(&c1),
            exact_scale: p.a1.norm().max(1.0),
            d1: Operator::from_matrix(d1)?,
            d2,
            pi,
            kernel_basis: SubspaceBasis::from_columns_unchecked(z, tol.rank_rel),
            exact_defect,
            defect,
        })
    }

    /// `D2` as a map `H2 → H1`, zero on `N(B1)^⊥`.
    pub fn d2_full(&self) -> DMatrix<f64> {
        &self.d2 * self.kernel_basis.matrix().transpose()
    }

    /// Both identities hold at `residual_rel` relative to their scales.
    pub fn is_exact(&self, tol: &Tolerances) -> bool {
        self.exact_defect <= tol.residual_rel * self.exact_scale && self.defect <= tol.residual_rel * self.scale
    }
}

/// Mixed factorization, gated on [`mixed_check`].
pub fn mixed_factorize(p: &MixedProblem) -> Result<MixedFactorization> {
    let report = mixed_check(p)?;
    if !report.overall {
        return Err(Error::CheckFailed(Box::new(report)));
    }
    MixedFactorization::compute(p)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixedSolveReport {
    pub h2: Vec<f64>,
    pub exact_residual: f64,
    pub approx_residual: f64,
    pub h2_norm: f64,
    pub epsilon: f64,
    pub epsilon_met: bool,
}

/// Synthesizes `h2 = C1 h1 + u`, `u ∈ N(B1)`, minimizing the second-block
/// residual. The reported `approx_residual` is the attained infimum over all
/// `h2` satisfying the exact block.
pub fn mixed_solve(p: &MixedProblem, h1: &DVector<f64>, epsilon: f64) -> Result<MixedSolveReport> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "epsilon must be positive and finite, got {epsilon}"
        )));
    }
    if h1.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("h1"));
    }
    let exact_target = p.a1.apply(h1)?;
    let approx_target = p.a2.apply(h1)?;
    let sol = solve_constrained_ls(&p.b1, &exact_target, &p.b2, &approx_target, &p.tol)?;
    let exact_ok = sol.constraint_residual <= p.tol.residual_rel * exact_target.norm().max(1.0);
    Ok(MixedSolveReport {
        h2_norm: sol.solution.norm(),
        exact_residual: sol.constraint_residual,
        approx_residual: sol.objective_residual,
        epsilon,
        epsilon_met: exact_ok && sol.objective_residual <= epsilon,
        h2: sol.solution.iter().copied().collect(),
    })
}

/// Builds a mixed problem over product spaces `E1 × … × Ep` (exact blocks)
/// and `F1 × … × Fm` (approximate blocks).
pub fn stack_blocks(
    exact: &[(Operator, Operator)],
    approx: &[(Operator, Operator)],
    tol: Tolerances,
) -> Result<MixedProblem> {
    if exact.is_empty() || approx.is_empty() {
        return Err(Error::InvalidInput(
            "need at least one exact and one approximate block".into(),
        ));
    }
    let stack = |blocks: &[(Operator, Operator)], first: bool| -> Result<Operator> {
        let refs: Vec<&Operator> = blocks.iter().map(|(a, b)| if first { a } else { b }).collect();
        Operator::vstack(&refs)
    };
    for (a, b) in exact.iter().chain(approx) {
        if a.rows() != b.rows() {
            return Err(Error::dims("stack_blocks (block height)", a.rows(), b.rows()));
        }
    }
    MixedProblem::new(
        stack(exact, true)?,
        stack(approx, true)?,
        stack(exact, false)?,
        stack(approx, false)?,
        tol,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PropPTest {
    pub holds: bool,
    /// Smallest singular value of `[B1; B2]ᵀ`, zero when it has fewer rows
    /// than columns.
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub majorization_ok: bool,
}

/// Sufficient condition: `[B1; B2]ᵀ` injective and `N(B1ᵀ) ⊆ N(A1ᵀ)`.
pub fn check_propp(p: &MixedProblem) -> Result<PropPTest> {
    let bt = p.stacked_b().matrix().transpose();
    let d = Decomposition::new(&bt)?;
    let sigma_max = d.sigma_max();
    let sigma_min = if bt.nrows() < bt.ncols() {
        0.0
    } else {
        d.s.iter().copied().fold(f64::INFINITY, f64::min)
    };
    let injective = sigma_max > 0.0 && sigma_min > p.tol.rank_rel * sigma_max;
    let majorization_ok = kernel_inclusion(&p.a1, &p.b1, &p.tol)?.holds;
    Ok(PropPTest {
        holds: injective && majorization_ok,
        sigma_min,
        sigma_max,
        majorization_ok,
    })
}
