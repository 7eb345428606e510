//! Mixed exact/approximate goal on random planted instances: check, factor
//! and solve.

use douglas_core::douglas::{check_propp, mixed_check, mixed_factorize, mixed_solve};
use douglas_core::instances::{generate_instance, InstanceSpec, Planted};
use douglas_core::linop::Tolerances;
use nalgebra::DVector;

fn main() -> douglas_core::error::Result<()> {
    let tol = Tolerances::default();
    for planted in [Planted::MixedFeasible, Planted::ExactOnlyFeasible, Planted::Infeasible] {
        let spec = InstanceSpec {
            dims: (5, 7, 4, 6),
            planted,
            rank_caps: (Some(3), Some(3)),
        };
        let inst = generate_instance(&spec, 42, tol)?;
        let p = &inst.problem;
        let report = mixed_check(p)?;
        println!(
            "{planted:?}: majorization {} sequential defect {:.2e} overall {} (propp {})",
            report.majorization_ok,
            report.sequential_defect,
            report.overall,
            check_propp(p)?.holds
        );

        let h1 = DVector::from_fn(p.dims().0, |i, _| 1.0 / (i + 1) as f64);
        match mixed_solve(p, &h1, 1e-6) {
            Ok(s) => println!(
                "  h1 solve: exact {:.2e} approx {:.2e} eps met {}",
                s.exact_residual, s.approx_residual, s.epsilon_met
            ),
            Err(e) => println!("  h1 solve: {e}"),
        }
        if report.overall {
            let f = mixed_factorize(p)?;
            println!("  factorization exact: {}", f.is_exact(&tol));
        }
    }
    Ok(())
}
