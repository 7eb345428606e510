//! Seeded batch suites over planted instances.
//!
//! Instances are generated and evaluated in parallel; rows are collected in
//! index order so a report depends only on its seed and sizes.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::counterexample::{sweep, SweepReport};
use crate::douglas::{
    check_propp, douglas_factor, kernel_inclusion, majorization_constant, mixed_check, mixed_solve, range_inclusion,
    weak_factor, MajorizationConstant, MixedCheckReport, MixedFactorization, MixedProblem,
};
use crate::error::{Error, Result};
use crate::instances::{derive_seed, generate_inclusion_pair, generate_instance, InstanceSpec, Planted};
use crate::linop::{spectral_norm, Tolerances};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InclusionRow {
    pub index: usize,
    pub seed: u64,
    pub planted_inclusion: bool,
    pub rows: usize,
    pub cols_a: usize,
    pub cols_b: usize,
    pub rank: usize,
    pub range_inclusion: bool,
    pub range_residual: f64,
    pub kernel_inclusion: bool,
    pub majorization_constant: MajorizationConstant,
    pub factor_ok: bool,
    /// `‖BC − A‖ / ‖A‖` for the returned factor.
    pub factor_residual: Option<f64>,
    pub factor_norm: Option<f64>,
    pub weak_factor_ok: bool,
    /// `‖Aᵀ − D Bᵀ‖ / ‖A‖` for the returned weak factor.
    pub weak_factor_residual: Option<f64>,
}

impl InclusionRow {
    /// Range inclusion, finite constant and factor success agree.
    pub fn theorem1_agree(&self) -> bool {
        self.range_inclusion == self.majorization_constant.is_finite() && self.range_inclusion == self.factor_ok
    }

    /// Kernel inclusion, finite constant and weak factor success agree.
    pub fn theorem2_agree(&self) -> bool {
        self.kernel_inclusion == self.majorization_constant.is_finite() && self.kernel_inclusion == self.weak_factor_ok
    }

    pub fn collapse_agree(&self) -> bool {
        self.range_inclusion == self.kernel_inclusion
    }

    pub fn label_agree(&self) -> bool {
        self.range_inclusion == self.planted_inclusion
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InclusionSummary {
    pub instances: usize,
    pub theorem1_disagreements: usize,
    pub theorem2_disagreements: usize,
    pub collapse_disagreements: usize,
    pub label_disagreements: usize,
    pub max_factor_residual: f64,
    pub max_weak_factor_residual: f64,
    /// `max |constant − ‖C‖| / (1 + constant)` over inclusion-true rows.
    pub max_constant_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InclusionSuiteReport {
    pub suite: &'static str,
    pub seed: u64,
    pub per_class: usize,
    pub max_dim: usize,
    pub summary: InclusionSummary,
    pub rows: Vec<InclusionRow>,
}

fn inclusion_row(index: usize, seed: u64, inclusion: bool, max_dim: usize, tol: &Tolerances) -> Result<InclusionRow> {
    let pair = generate_inclusion_pair(max_dim, inclusion, seed, tol)?;
    let (a, b) = (&pair.a, &pair.b);
    let range = range_inclusion(a, b, tol)?;
    let kernel = kernel_inclusion(a, b, tol)?;
    let constant = majorization_constant(a, b, tol)?;
    let a_norm = a.norm().max(f64::MIN_POSITIVE);
    let (factor_ok, factor_residual, factor_norm) = match douglas_factor(a, b, tol) {
        Ok(c) => {
            let res = spectral_norm(&(b.matrix() * c.matrix() - a.matrix())) / a_norm;
            (true, Some(res), Some(c.norm()))
        }
        Err(Error::InclusionViolated { .. }) => (false, None, None),
        Err(e) => return Err(e),
    };
    let (weak_factor_ok, weak_factor_residual) = match weak_factor(a, b, tol) {
        Ok(d) => {
            let res = spectral_norm(&(d.matrix() * b.matrix().transpose() - a.matrix().transpose())) / a_norm;
            (true, Some(res))
        }
        Err(Error::InclusionViolated { .. }) => (false, None),
        Err(e) => return Err(e),
    };
    Ok(InclusionRow {
        index,
        seed,
        planted_inclusion: inclusion,
        rows: a.rows(),
        cols_a: a.cols(),
        cols_b: b.cols(),
        rank: pair.rank,
        range_inclusion: range.holds,
        range_residual: range.residual,
        kernel_inclusion: kernel.holds,
        majorization_constant: constant,
        factor_ok,
        factor_residual,
        factor_norm,
        weak_factor_ok,
        weak_factor_residual,
    })
}

/// Inclusion pairs: the first `per_class` planted true, the next `per_class`
/// planted false.
pub fn inclusion_rows(seed: u64, per_class: usize, max_dim: usize, tol: &Tolerances) -> Result<Vec<InclusionRow>> {
    (0..2 * per_class)
        .into_par_iter()
        .map(|i| inclusion_row(i, derive_seed(seed, i as u64), i < per_class, max_dim, tol))
        .collect()
}

fn summarize_inclusion(rows: &[InclusionRow]) -> InclusionSummary {
    let count = |f: fn(&InclusionRow) -> bool| rows.iter().filter(|r| !f(r)).count();
    let max_of = |f: fn(&InclusionRow) -> Option<f64>| rows.iter().filter_map(f).fold(0.0, f64::max);
    InclusionSummary {
        instances: rows.len(),
        theorem1_disagreements: count(InclusionRow::theorem1_agree),
        theorem2_disagreements: count(InclusionRow::theorem2_agree),
        collapse_disagreements: count(InclusionRow::collapse_agree),
        label_disagreements: count(InclusionRow::label_agree),
        max_factor_residual: max_of(|r| r.factor_residual),
        max_weak_factor_residual: max_of(|r| r.weak_factor_residual),
        max_constant_gap: max_of(|r| match (r.majorization_constant, r.factor_norm) {
            (MajorizationConstant::Finite(c), Some(n)) => Some((c - n).abs() / (1.0 + c)),
            _ => None,
        }),
    }
}

fn inclusion_suite(
    name: &'static str,
    seed: u64,
    per_class: usize,
    max_dim: usize,
    tol: &Tolerances,
) -> Result<InclusionSuiteReport> {
    let rows = inclusion_rows(seed, per_class, max_dim, tol)?;
    Ok(InclusionSuiteReport {
        suite: name,
        seed,
        per_class,
        max_dim,
        summary: summarize_inclusion(&rows),
        rows,
    })
}

/// Range inclusion ⟺ finite constant ⟺ factorization, on planted pairs.
pub fn theorem1(seed: u64, per_class: usize, max_dim: usize, tol: &Tolerances) -> Result<InclusionSuiteReport> {
    inclusion_suite("theorem1", seed, per_class, max_dim, tol)
}

/// Kernel inclusion ⟺ finite constant ⟺ weak factorization, on the same
/// planted pairs.
pub fn theorem2(seed: u64, per_class: usize, max_dim: usize, tol: &Tolerances) -> Result<InclusionSuiteReport> {
    inclusion_suite("theorem2", seed, per_class, max_dim, tol)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixedRow {
    pub index: usize,
    pub seed: u64,
    pub planted: Planted,
    pub dims: (usize, usize, usize, usize),
    pub expected_overall: bool,
    pub check_overall: bool,
    pub majorization_ok: bool,
    pub sequential_defect: f64,
    pub scale: f64,
    /// Both factorization identities hold at `residual_rel · scale`.
    pub factor_ok: bool,
    pub factor_defect: f64,
    pub factor_exact_defect: f64,
    /// Every canonical `h1` admits an exact solution with
    /// `approx_residual ≤ residual_rel · scale`.
    pub solve_ok: bool,
    /// Largest `approx_residual` over canonical `h1`, absent when the exact
    /// block is infeasible for some `h1`.
    pub max_approx_residual: Option<f64>,
    pub propp: bool,
}

impl MixedRow {
    pub fn three_way_agree(&self) -> bool {
        self.check_overall == self.factor_ok && self.check_overall == self.solve_ok
    }

    pub fn label_agree(&self) -> bool {
        self.check_overall == self.expected_overall
    }

    /// `check_propp` true but the mixed check false.
    pub fn propp_violation(&self) -> bool {
        self.propp && !self.check_overall
    }
}

/// The three characterizations of the mixed goal evaluated on one problem.
#[derive(Debug, Clone)]
pub struct MixedEvaluation {
    pub check: MixedCheckReport,
    pub factorization: MixedFactorization,
    pub factor_ok: bool,
    pub max_approx_residual: Option<f64>,
    pub solve_ok: bool,
    pub propp: bool,
}

pub fn evaluate_mixed(p: &MixedProblem) -> Result<MixedEvaluation> {
    let tol = *p.tol();
    let check = mixed_check(p)?;
    let factorization = MixedFactorization::compute(p)?;
    let (h1, ..) = p.dims();
    let mut max_res: Option<f64> = Some(0.0);
    for i in 0..h1 {
        let mut e = DVector::zeros(h1);
        e[i] = 1.0;
        match mixed_solve(p, &e, 1.0) {
            Ok(r) => max_res = max_res.map(|m| m.max(r.approx_residual)),
            Err(Error::InfeasibleConstraint { .. }) => {
                max_res = None;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(MixedEvaluation {
        solve_ok: max_res.is_some_and(|m| m <= tol.residual_rel * factorization.scale),
        factor_ok: factorization.is_exact(&tol),
        max_approx_residual: max_res,
        propp: check_propp(p)?.holds,
        check,
        factorization,
    })
}

fn mixed_row(index: usize, seed: u64, spec: InstanceSpec, tol: Tolerances) -> Result<MixedRow> {
    let inst = generate_instance(&spec, seed, tol)?;
    let p = &inst.problem;
    let ev = evaluate_mixed(p)?;
    Ok(MixedRow {
        index,
        seed,
        planted: inst.planted,
        dims: p.dims(),
        expected_overall: inst.expected_overall,
        check_overall: ev.check.overall,
        majorization_ok: ev.check.majorization_ok,
        sequential_defect: ev.check.sequential_defect,
        scale: ev.factorization.scale,
        factor_ok: ev.factor_ok,
        factor_defect: ev.factorization.defect,
        factor_exact_defect: ev.factorization.exact_defect,
        solve_ok: ev.solve_ok,
        max_approx_residual: ev.max_approx_residual,
        propp: ev.propp,
    })
}

/// Dimensions and planted class for instance `index` of the mixed suite.
fn mixed_spec(index: usize, per_class: usize, seed: u64, max_dim: usize) -> InstanceSpec {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut dim = |lo: usize| rng.random_range(lo..=max_dim.max(lo));
    let (h1, mut h2, h4, h5) = (dim(1), dim(1), dim(2), dim(2));
    // Every third feasible instance has [B1; B2] of full row rank, the
    // regime where the sufficient condition of check_propp can hold.
    if index < per_class && index.is_multiple_of(3) {
        h2 = h4 + h5 + rng.random_range(0..=2);
        return InstanceSpec {
            dims: (h1, h2, h4, h5),
            planted: Planted::MixedFeasible,
            rank_caps: (None, None),
        };
    }
    let planted = if index < per_class {
        Planted::MixedFeasible
    } else if (index - per_class).is_multiple_of(2) {
        Planted::ExactOnlyFeasible
    } else {
        Planted::Infeasible
    };
    let r1 = match planted {
        Planted::Infeasible => Some(rng.random_range(0..h4.min(h2 + 1)).min(h4 - 1)),
        _ => Some(rng.random_range(0..=h4.min(h2))),
    };
    let r2 = match planted {
        Planted::ExactOnlyFeasible => Some(rng.random_range(0..h5.min(h2 + 1)).min(h5 - 1)),
        _ => Some(rng.random_range(0..=h5.min(h2))),
    };
    InstanceSpec {
        dims: (h1, h2, h4, h5),
        planted,
        rank_caps: (r1, r2),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixedSummary {
    pub instances: usize,
    pub feasible: usize,
    pub infeasible: usize,
    pub three_way_disagreements: usize,
    pub label_disagreements: usize,
    pub propp_true: usize,
    pub propp_violations: usize,
    pub max_feasible_defect_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixedSuiteReport {
    pub suite: &'static str,
    pub seed: u64,
    pub per_class: usize,
    pub max_dim: usize,
    pub summary: MixedSummary,
    pub rows: Vec<MixedRow>,
}

/// `per_class` mixed-feasible instances followed by `per_class` infeasible
/// ones (alternating exact-only-feasible and exact-infeasible recipes).
pub fn mixed(seed: u64, per_class: usize, max_dim: usize, tol: &Tolerances) -> Result<MixedSuiteReport> {
    if max_dim < 2 {
        return Err(Error::InvalidInput("max_dim must be at least 2".into()));
    }
    let tol = *tol;
    let rows = (0..2 * per_class)
        .into_par_iter()
        .map(|i| {
            let s = derive_seed(seed, i as u64);
            mixed_row(i, s, mixed_spec(i, per_class, s, max_dim), tol)
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = MixedSummary {
        instances: rows.len(),
        feasible: rows.iter().filter(|r| r.expected_overall).count(),
        infeasible: rows.iter().filter(|r| !r.expected_overall).count(),
        three_way_disagreements: rows.iter().filter(|r| !r.three_way_agree()).count(),
        label_disagreements: rows.iter().filter(|r| !r.label_agree()).count(),
        propp_true: rows.iter().filter(|r| r.propp).count(),
        propp_violations: rows.iter().filter(|r| r.propp_violation()).count(),
        max_feasible_defect_ratio: rows
            .iter()
            .filter(|r| r.expected_overall)
            .map(|r| r.factor_defect.max(r.factor_exact_defect) / r.scale)
            .fold(0.0, f64::max),
    };
    Ok(MixedSuiteReport {
        suite: "mixed",
        seed,
        per_class,
        max_dim,
        summary,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapReport {
    pub suite: &'static str,
    pub sweep: SweepReport,
    pub growth_ratios: Vec<f64>,
    /// Rows with `majorization_ok` true and `overall` false.
    pub gap_rows: usize,
    pub propp_violations: usize,
}

pub const DEFAULT_GAP_DIMS: [usize; 6] = [8, 16, 32, 64, 128, 256];

/// Counterexample truncations: necessary conditions hold, the goal fails.
pub fn gap(dims: &[usize], tol: &Tolerances) -> Result<GapReport> {
    let sweep = sweep(dims, *tol)?;
    Ok(GapReport {
        suite: "gap",
        growth_ratios: sweep.growth_ratios(),
        gap_rows: sweep.rows.iter().filter(|r| r.majorization_ok && !r.overall).count(),
        propp_violations: sweep.rows.iter().filter(|r| r.propp_ok && !r.overall).count(),
        sweep,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_theorem1_suite_agrees() {
        let tol = Tolerances::default();
        let r = theorem1(11, 15, 10, &tol).unwrap();
        assert_eq!(r.rows.len(), 30);
        assert_eq!(r.summary.theorem1_disagreements, 0);
        assert_eq!(r.summary.collapse_disagreements, 0);
        assert_eq!(r.summary.label_disagreements, 0);
        assert!(r.summary.max_factor_residual <= 1e-8);
        assert!(r.rows[..15].iter().all(|row| row.planted_inclusion));
    }

    #[test]
    fn small_mixed_suite_agrees() {
        let tol = Tolerances::default();
        let r = mixed(3, 20, 8, &tol).unwrap();
        assert_eq!(r.summary.instances, 40);
        assert_eq!(
            r.summary.three_way_disagreements,
            0,
            "{:?}",
            r.rows.iter().find(|x| !x.three_way_agree())
        );
        assert_eq!(r.summary.label_disagreements, 0);
        assert_eq!(r.summary.propp_violations, 0);
    }

    #[test]
    fn suites_are_deterministic() {
        let tol = Tolerances::default();
        assert_eq!(mixed(7, 10, 6, &tol).unwrap(), mixed(7, 10, 6, &tol).unwrap());
        assert_ne!(mixed(7, 10, 6, &tol).unwrap().rows, mixed(8, 10, 6, &tol).unwrap().rows);
    }

    #[test]
    fn gap_suite_small() {
        let r = gap(&[2, 4, 8], &Tolerances::default()).unwrap();
        assert_eq!(r.gap_rows, 3);
        assert_eq!(r.propp_violations, 0);
        assert_eq!(r.growth_ratios.len(), 2);
    }
}
