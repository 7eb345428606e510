//! Seeded random instances with a known verdict.
//!
//! Matrices start with standard normal entries and are truncated to the
//! requested rank through their SVD. Every recipe fixes the answer by
//! construction:
//!
//! * mixed-feasible: `A1 = B1 C1`, `A2 = B2 C1 + B2 Z G` with `Z` a basis of
//!   `N(B1)`, so `h2 = (C1 + Z G) h1` solves both blocks exactly;
//! * exact-only-feasible: as above plus `w gᵀ` in `A2` with `w ⊥ R(B2)`, which
//!   no control can cancel;
//! * infeasible: `A1 = B1 C1 + w gᵀ` with `w ⊥ R(B1)`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::counterexample::build_counterexample;
use crate::douglas::MixedProblem;
use crate::error::{Error, Result};
use crate::heat::{assemble_model, HeatConfig};
use crate::linop::{kernel_matrix, range_matrix, Decomposition, Operator, Tolerances};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Planted {
    MixedFeasible,
    ExactOnlyFeasible,
    Infeasible,
    Counterexample { n: usize },
    Heat { config: HeatConfig },
}

impl Planted {
    /// Ground-truth verdict of the mixed check.
    pub fn expected_overall(&self) -> bool {
        matches!(self, Planted::MixedFeasible | Planted::Heat { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InstanceSpec {
    /// `(dim H1, dim H2, dim H4, dim H5)`; ignored by the passthrough recipes.
    pub dims: (usize, usize, usize, usize),
    pub planted: Planted,
    /// Ranks of `B1` and `B2`; `None` means full rank.
    pub rank_caps: (Option<usize>, Option<usize>),
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub problem: MixedProblem,
    pub planted: Planted,
    pub expected_overall: bool,
}

/// Decorrelated per-item seed (splitmix64 finalizer over `seed` and `index`).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn gaussian_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Standard normal matrix truncated to rank `min(rank, rows, cols)`.
pub fn random_rank(rng: &mut impl Rng, rows: usize, cols: usize, rank: usize) -> Result<DMatrix<f64>> {
    let g = gaussian_matrix(rng, rows, cols);
    let rank = rank.min(rows).min(cols);
    if rank == rows.min(cols) {
        return Ok(g);
    }
    let d = Decomposition::new(&g)?;
    let mut out = DMatrix::zeros(rows, cols);
    for i in 0..rank {
        out += d.u.column(i) * d.v_t.row(i) * d.s[i];
    }
    Ok(out)
}

/// Unit vector orthogonal to the column space of `b`.
fn orthogonal_direction(rng: &mut impl Rng, b: &DMatrix<f64>, tol: &Tolerances) -> Result<DVector<f64>> {
    let u = range_matrix(b, 0.0, tol)?;
    if u.ncols() >= b.nrows() {
        return Err(Error::InvalidInput(
            "range is the whole space; no orthogonal direction".into(),
        ));
    }
    loop {
        let g: DVector<f64> = DVector::from_fn(b.nrows(), |_, _| StandardNormal.sample(rng));
        let w = &g - &u * u.tr_mul(&g);
        let norm = w.norm();
        if norm > 1e-3 * g.norm() {
            return Ok(w / norm);
        }
    }
}

fn cap(requested: Option<usize>, full: usize) -> usize {
    requested.unwrap_or(full).min(full)
}

pub fn generate_instance(spec: &InstanceSpec, seed: u64, tol: Tolerances) -> Result<Instance> {
    let planted = spec.planted;
    let problem = match planted {
        Planted::Counterexample { n } => build_counterexample(n)?.to_problem(tol)?,
        Planted::Heat { config } => assemble_model(config)?.mixed_problem(tol)?,
        Planted::MixedFeasible | Planted::ExactOnlyFeasible | Planted::Infeasible => planted_problem(spec, seed, tol)?,
    };
    Ok(Instance {
        problem,
        planted,
        expected_overall: planted.expected_overall(),
    })
}

fn planted_problem(spec: &InstanceSpec, seed: u64, tol: Tolerances) -> Result<MixedProblem> {
    let (h1, h2, h4, h5) = spec.dims;
    if h1 == 0 || h2 == 0 || h4 == 0 || h5 == 0 {
        return Err(Error::InvalidInput(format!(
            "instance dimensions must be positive, got {:?}",
            spec.dims
        )));
    }
    let r1 = cap(spec.rank_caps.0, h4.min(h2));
    let r2 = cap(spec.rank_caps.1, h5.min(h2));
    match spec.planted {
        Planted::Infeasible if r1 >= h4 => {
            return Err(Error::InvalidInput("infeasible recipe needs rank(B1) < dim H4".into()));
        }
        Planted::ExactOnlyFeasible if r2 >= h5 => {
            return Err(Error::InvalidInput("exact-only recipe needs rank(B2) < dim H5".into()));
        }
        _ => {}
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b1 = random_rank(&mut rng, h4, h2, r1)?;
    let b2 = random_rank(&mut rng, h5, h2, r2)?;
    let c1 = gaussian_matrix(&mut rng, h2, h1);
    let z = kernel_matrix(&b1, 0.0, &tol)?;
    let g = gaussian_matrix(&mut rng, z.ncols(), h1);

    let mut a1 = &b1 * &c1;
    let mut a2 = &b2 * (&c1 + &z * g);
    match spec.planted {
        Planted::ExactOnlyFeasible => {
            let w = orthogonal_direction(&mut rng, &b2, &tol)?;
            let gv: DVector<f64> = DVector::from_fn(h1, |_, _| StandardNormal.sample(&mut rng));
            a2 += w * gv.transpose() * a2.norm().max(1.0) / gv.norm();
        }
        Planted::Infeasible => {
            let w = orthogonal_direction(&mut rng, &b1, &tol)?;
            let gv: DVector<f64> = DVector::from_fn(h1, |_, _| StandardNormal.sample(&mut rng));
            a1 += w * gv.transpose() * a1.norm().max(1.0) / gv.norm();
        }
        _ => {}
    }
    MixedProblem::new(
        Operator::from_matrix(a1)?,
        Operator::from_matrix(a2)?,
        Operator::from_matrix(b1)?,
        Operator::from_matrix(b2)?,
        tol,
    )
}

/// A pair `(A, B)` with a planted answer to `R(A) ⊆ R(B)`.
#[derive(Debug, Clone)]
pub struct InclusionPair {
    pub a: Operator,
    pub b: Operator,
    pub planted_inclusion: bool,
    pub rank: usize,
}

/// Random pair with `rows ≤ max_dim`, `B` of rank `< rows`, and `A = B C`
/// (plus `w gᵀ`, `w ⊥ R(B)`, when `inclusion` is false).
pub fn generate_inclusion_pair(max_dim: usize, inclusion: bool, seed: u64, tol: &Tolerances) -> Result<InclusionPair> {
    if max_dim < 2 {
        return Err(Error::InvalidInput("max_dim must be at least 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = rng.random_range(2..=max_dim);
    let cols_a = rng.random_range(1..=max_dim);
    let cols_b = rng.random_range(1..=max_dim);
    let rank = rng.random_range(1..=(rows - 1).min(cols_b));
    let b = random_rank(&mut rng, rows, cols_b, rank)?;
    let c = gaussian_matrix(&mut rng, cols_b, cols_a);
    let mut a = &b * c;
    if !inclusion {
        let w = orthogonal_direction(&mut rng, &b, tol)?;
        let g: DVector<f64> = DVector::from_fn(cols_a, |_, _| StandardNormal.sample(&mut rng));
        a += w * g.transpose() * a.norm().max(1.0) / g.norm();
    }
    Ok(InclusionPair {
        a: Operator::from_matrix(a)?,
        b: Operator::from_matrix(b)?,
        planted_inclusion: inclusion,
        rank,
    })
}
